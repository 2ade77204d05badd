//! Non-negative matrix factorization of substance × report matrices, topic
//! coherence and selection of the number of topics.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::{Error, Result};

const EPS: f64 = 1e-12;

/// Nonnegative `D × N` matrix: one row per substance, one column per report.
#[derive(Debug, Clone, PartialEq)]
pub struct ToxMatrix {
    values: Array2<f64>,
    substances: Vec<String>,
    ids: Vec<u64>,
    dropped_empty: usize,
}

impl ToxMatrix {
    /// Validates shape agreement, nonnegative entries and that no report
    /// column is all zero.
    pub fn new(values: Array2<f64>, substances: Vec<String>, ids: Vec<u64>, dropped_empty: usize) -> Result<Self> {
        let (d, n) = values.dim();
        if substances.len() != d {
            return Err(Error::InvalidInput(format!("{} substance names for {d} rows", substances.len())));
        }
        if ids.len() != n {
            return Err(Error::InvalidInput(format!("{} report ids for {n} columns", ids.len())));
        }
        if values.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
            return Err(Error::InvalidInput("matrix entries must be finite and >= 0".into()));
        }
        if let Some(j) = values.axis_iter(Axis(1)).position(|c| c.iter().all(|&v| v == 0.0)) {
            return Err(Error::InvalidInput(format!("report {} has no substance present", ids[j])));
        }
        Ok(Self {
            values,
            substances,
            ids,
            dropped_empty,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn substances(&self) -> &[String] {
        &self.substances
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Reports dropped at ingest because no substance was present.
    pub fn dropped_empty(&self) -> usize {
        self.dropped_empty
    }

    pub fn n_substances(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_reports(&self) -> usize {
        self.values.ncols()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NmfOptions {
    pub iters: usize,
    pub restarts: usize,
}

impl Default for NmfOptions {
    fn default() -> Self {
        Self { iters: 500, restarts: 5 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmfFactors {
    /// `D × K` substance loadings.
    pub w: Array2<f64>,
    /// `K × N` report loadings.
    pub h: Array2<f64>,
    /// `‖V − WH‖²_F` after each update of the retained run, starting with
    /// the initial value.
    pub trace: Vec<f64>,
    /// Index of the retained restart.
    pub restart: usize,
    pub substances: Vec<String>,
}

impl NmfFactors {
    pub fn k(&self) -> usize {
        self.w.ncols()
    }

    pub fn objective(&self) -> f64 {
        *self.trace.last().expect("trace holds the initial objective")
    }
}

fn frobenius_sq(v: &Array2<f64>, w: &Array2<f64>, h: &Array2<f64>) -> f64 {
    let wh = w.dot(h);
    v.iter().zip(wh.iter()).map(|(a, b)| (a - b) * (a - b)).sum()
}

fn run(v: &Array2<f64>, k: usize, seed: u64, restart: usize, iters: usize) -> (Array2<f64>, Array2<f64>, Vec<f64>) {
    let (d, n) = v.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(restart as u64);
    // 1 - U[0, 1) lies in (0, 1].
    let mut w = Array2::from_shape_simple_fn((d, k), || 1.0 - rng.random::<f64>());
    let mut h = Array2::from_shape_simple_fn((k, n), || 1.0 - rng.random::<f64>());
    let mut trace = Vec::with_capacity(iters + 1);
    trace.push(frobenius_sq(v, &w, &h));
    for _ in 0..iters {
        let num = w.t().dot(v);
        let den = w.t().dot(&w).dot(&h);
        h.zip_mut_with(&num, |x, &a| *x *= a);
        h.zip_mut_with(&den, |x, &b| *x /= b + EPS);
        let num = v.dot(&h.t());
        let den = w.dot(&h.dot(&h.t()));
        w.zip_mut_with(&num, |x, &a| *x *= a);
        w.zip_mut_with(&den, |x, &b| *x /= b + EPS);
        trace.push(frobenius_sq(v, &w, &h));
    }
    (w, h, trace)
}

/// Lee–Seung multiplicative updates for the Frobenius loss; the run with
/// the lowest final objective among `opts.restarts` seeded starts is kept.
pub fn factorize(v: &ToxMatrix, k: usize, seed: u64, opts: NmfOptions) -> Result<NmfFactors> {
    let values = v.values();
    let (d, n) = values.dim();
    if values.iter().all(|&x| x == 0.0) {
        return Err(Error::InvalidInput("matrix is all zero".into()));
    }
    if k == 0 || k > d.min(n) {
        return Err(Error::invalid("K", format!("must be in 1..={}, got {k}", d.min(n))));
    }
    if opts.restarts == 0 {
        return Err(Error::invalid("restarts", "must be >= 1"));
    }
    let runs: Vec<_> = (0..opts.restarts)
        .into_par_iter()
        .map(|r| run(values, k, seed, r, opts.iters))
        .collect();
    let (restart, (w, h, trace)) = runs
        .into_iter()
        .enumerate()
        .min_by(|a, b| {
            let (fa, fb) = (a.1 .2.last().unwrap(), b.1 .2.last().unwrap());
            fa.total_cmp(fb).then(a.0.cmp(&b.0))
        })
        .expect("restarts >= 1");
    Ok(NmfFactors {
        w,
        h,
        trace,
        restart,
        substances: v.substances().to_vec(),
    })
}

/// `argmax_k H[k, n]` per report, ties to the lowest `k`.
pub fn assign_clusters(f: &NmfFactors) -> Vec<usize> {
    f.h.axis_iter(Axis(1))
        .enumerate()
        .map(|(n, col)| {
            if col.iter().all(|&x| x == 0.0) {
                log::warn!("report column {n} has no topic weight; assigned to 0");
            }
            first_max(col)
        })
        .collect()
}

fn first_max(col: ArrayView1<f64>) -> usize {
    col.iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
        .0
}

/// Row indices of the `top_m` largest entries of column `k` of `W`, ties by
/// substance name.
fn top_indices(f: &NmfFactors, k: usize, top_m: usize) -> Vec<usize> {
    let col = f.w.column(k);
    let mut idx: Vec<usize> = (0..col.len()).collect();
    idx.sort_by(|&a, &b| col[b].total_cmp(&col[a]).then_with(|| f.substances[a].cmp(&f.substances[b])));
    idx.truncate(top_m);
    idx
}

/// Highest-loading substance names of each topic.
pub fn top_terms(f: &NmfFactors, top_m: usize) -> Result<Vec<Vec<String>>> {
    check_top_m(f, top_m)?;
    Ok((0..f.k())
        .map(|k| top_indices(f, k, top_m).into_iter().map(|i| f.substances[i].clone()).collect())
        .collect())
}

fn check_top_m(f: &NmfFactors, top_m: usize) -> Result<()> {
    if top_m == 0 || top_m > f.w.nrows() {
        return Err(Error::invalid("top_m", format!("must be in 1..={}, got {top_m}", f.w.nrows())));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Coherence {
    pub per_topic: Vec<f64>,
    pub mean: f64,
    /// Pairs skipped because the conditioning substance never occurs.
    pub skipped_pairs: usize,
}

/// UMass coherence: for the top substances `w_1..w_m` of a topic,
/// `C = Σ_{a<b} log[(D(w_a, w_b) + 1) / D(w_a)]` with `D` counting reports.
pub fn coherence(f: &NmfFactors, v: &ToxMatrix, top_m: usize) -> Result<Coherence> {
    check_top_m(f, top_m)?;
    if f.w.nrows() != v.n_substances() {
        return Err(Error::InvalidInput("factors do not match matrix".into()));
    }
    let present: Vec<HashSet<usize>> = v
        .values()
        .axis_iter(Axis(0))
        .map(|row| row.iter().enumerate().filter(|(_, &x)| x > 0.0).map(|(j, _)| j).collect())
        .collect();
    let mut skipped = 0;
    let per_topic: Vec<f64> = (0..f.k())
        .map(|k| {
            let top = top_indices(f, k, top_m);
            let mut c = 0.0;
            for (b, &wb) in top.iter().enumerate() {
                for &wa in &top[..b] {
                    let single = present[wa].len();
                    if single == 0 {
                        skipped += 1;
                        continue;
                    }
                    let co = present[wa].intersection(&present[wb]).count();
                    c += ((co + 1) as f64 / single as f64).ln();
                }
            }
            c
        })
        .collect();
    let mean = per_topic.iter().sum::<f64>() / per_topic.len() as f64;
    Ok(Coherence {
        per_topic,
        mean,
        skipped_pairs: skipped,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KSelection {
    pub best_k: usize,
    /// `(K, mean coherence)` for every candidate.
    pub scores: Vec<(usize, f64)>,
}

/// Picks the `K` with the largest mean coherence; scores equal to within
/// `1e-9` relative go to the smaller `K`.
pub fn select_k(
    v: &ToxMatrix,
    k_range: impl IntoIterator<Item = usize>,
    seed: u64,
    top_m: usize,
    opts: NmfOptions,
) -> Result<KSelection> {
    let ks: Vec<usize> = k_range.into_iter().collect();
    if ks.is_empty() {
        return Err(Error::invalid("k_range", "must not be empty"));
    }
    let top_m = top_m.min(v.n_substances());
    let mut scores = Vec::with_capacity(ks.len());
    for &k in &ks {
        let f = factorize(v, k, seed, opts)?;
        scores.push((k, coherence(&f, v, top_m)?.mean));
    }
    let mut order = scores.clone();
    order.sort_by_key(|&(k, _)| k);
    let mut best = order[0];
    for &(k, s) in &order[1..] {
        if s > best.1 + 1e-9 * best.1.abs().max(1e-300) {
            best = (k, s);
        }
    }
    Ok(KSelection { best_k: best.0, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn tox(values: Array2<f64>) -> ToxMatrix {
        let (d, n) = values.dim();
        ToxMatrix::new(values, (0..d).map(|i| format!("s{i}")).collect(), (0..n as u64).collect(), 0).unwrap()
    }

    #[test]
    fn rank_one_is_recovered() {
        let w = array![[1.0], [2.0], [0.5], [3.0]];
        let h = array![[1.0, 0.2, 4.0, 2.0, 1.5]];
        let v = tox(w.dot(&h));
        let f = factorize(&v, 1, 7, NmfOptions::default()).unwrap();
        let rel = frobenius_sq(v.values(), &f.w, &f.h).sqrt() / v.values().iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(rel < 1e-3, "relative error {rel}");
    }

    #[test]
    fn block_diagonal_split() {
        let mut m = Array2::zeros((6, 6));
        for i in 0..6 {
            for j in 0..6 {
                if (i < 3) == (j < 3) {
                    m[[i, j]] = 1.0;
                }
            }
        }
        let v = tox(m);
        let f = factorize(&v, 2, 3, NmfOptions::default()).unwrap();
        let labels = assign_clusters(&f);
        assert_eq!(labels[0], labels[1]);
        assert_eq!(labels[1], labels[2]);
        assert_eq!(labels[3], labels[4]);
        assert_eq!(labels[4], labels[5]);
        assert_ne!(labels[0], labels[3]);
        for run in f.trace.windows(2) {
            assert!(run[1] <= run[0] + 1e-10);
        }
    }

    #[test]
    fn argmax_and_ties() {
        let f = NmfFactors {
            w: Array2::zeros((2, 4)),
            h: array![[0.1, 0.5], [0.7, 0.5], [0.2, 0.0], [0.0, 0.0]],
            trace: vec![0.0],
            restart: 0,
            substances: vec!["a".into(), "b".into()],
        };
        assert_eq!(assign_clusters(&f), vec![1, 0]);
    }

    #[test]
    fn top_terms_rank_and_ties() {
        let f = NmfFactors {
            w: array![[3.0], [1.0], [2.0]],
            h: Array2::zeros((1, 1)),
            trace: vec![0.0],
            restart: 0,
            substances: vec!["a".into(), "b".into(), "c".into()],
        };
        assert_eq!(top_terms(&f, 2).unwrap(), vec![vec!["a".to_string(), "c".to_string()]]);
        assert!(top_terms(&f, 4).is_err());
        let tied = NmfFactors {
            w: array![[1.0], [1.0]],
            substances: vec!["z".into(), "m".into()],
            ..f
        };
        assert_eq!(top_terms(&tied, 2).unwrap()[0], vec!["m".to_string(), "z".to_string()]);
    }

    #[test]
    fn rejects_bad_k() {
        let v = tox(array![[1.0, 0.0], [0.0, 1.0]]);
        assert!(factorize(&v, 0, 0, NmfOptions::default()).is_err());
        assert!(factorize(&v, 3, 0, NmfOptions::default()).is_err());
        assert!(select_k(&v, Vec::new(), 0, 5, NmfOptions::default()).is_err());
        assert_eq!(select_k(&v, [1], 0, 5, NmfOptions::default()).unwrap().best_k, 1);
    }

    #[test]
    fn zero_column_rejected() {
        let r = ToxMatrix::new(array![[1.0, 0.0]], vec!["a".into()], vec![1, 2], 0);
        assert!(r.is_err());
    }
}
