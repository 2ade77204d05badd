//! Single-group EM estimation of the unmarked self-exciting model.
//!
//! The E-step attributes each event either to the background or to one of
//! its predecessors (stochastic declustering); the M-step re-estimates the
//! triggering parameters as weighted sample averages and the background as a
//! weighted leave-one-out KDE whose total weight is `μ0`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{MarkedDataset, Source, Window};
use crate::kernels::{
    select_bandwidths, Background, BandwidthConfig, KdeBackground, SupportPoint, TriggerParams, Truncation,
};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub max_iters: usize,
    /// Convergence threshold on the largest relative change of
    /// `(K0, ω, σ, μ0)` across groups.
    pub tol: f64,
    /// Intensity floor; `None` uses `1e-12 · N / window volume`.
    pub epsilon_lambda: Option<f64>,
    pub bandwidth: BandwidthConfig,
    /// Bandwidth floors are at least this fraction of the window duration
    /// (time) and diagonal (space).
    pub bandwidth_floor_rel: f64,
    /// Keep the bandwidths chosen at the first M-step.
    pub freeze_bandwidths: bool,
    pub truncation: Truncation,
    /// `σ` floor as a fraction of the window diagonal.
    pub sigma_floor_rel: f64,
    /// `ω` used when a group has no triggering mass; `None` derives it from
    /// the mean inter-event time.
    pub prior_omega: Option<f64>,
    /// `σ` used when a group has no triggering mass; `None` uses the median
    /// pairwise distance.
    pub prior_sigma: Option<f64>,
    pub seed: u64,
    pub time_unit: Option<String>,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            max_iters: 200,
            tol: 1e-4,
            epsilon_lambda: None,
            bandwidth: BandwidthConfig::default(),
            bandwidth_floor_rel: 1e-6,
            freeze_bandwidths: false,
            truncation: Truncation::default(),
            sigma_floor_rel: 1e-6,
            prior_omega: None,
            prior_sigma: None,
            seed: 0,
            time_unit: None,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::invalid("max_iters", "must be >= 1"));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::invalid("tol", format!("must be > 0, got {}", self.tol)));
        }
        if let Some(eps) = self.epsilon_lambda {
            if !(eps > 0.0 && eps.is_finite()) {
                return Err(Error::invalid("epsilon_lambda", format!("must be > 0, got {eps}")));
            }
        }
        Ok(())
    }
}

/// Fitted parameters of one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupParams {
    pub trigger: TriggerParams,
    /// Expected number of background events; equals the KDE weight `Nb`.
    pub mu0: f64,
    pub background: Background,
    /// Fraction of the group's events that come from source `A`.
    pub unlabeled_share: f64,
    /// Set when the group held less than one event of mass and was frozen
    /// at its priors.
    pub empty: bool,
}

/// Inferred mark of an unlabeled event.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkAssignment {
    pub id: u64,
    pub group: usize,
    /// `max_k rᵢ(k)`.
    pub prob: f64,
    /// `rᵢ(k)` for every group.
    pub responsibilities: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ConvergenceTrace {
    pub iterations: usize,
    pub converged: bool,
    /// Largest relative parameter change per iteration (infinite for the
    /// first).
    #[serde(with = "finite_or_null")]
    pub deltas: Vec<f64>,
    /// Complete-data objective after each M-step.
    pub objective: Vec<f64>,
    /// Events whose intensity fell below the floor, summed over E-steps.
    pub intensity_warnings: usize,
}

mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.iter().map(|x| x.is_finite().then_some(*x)).collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        let raw: Vec<Option<f64>> = Vec::deserialize(d)?;
        Ok(raw.into_iter().map(|x| x.unwrap_or(f64::INFINITY)).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FittedModel {
    pub window: Window,
    pub time_unit: Option<String>,
    pub groups: Vec<GroupParams>,
    /// Present for fused fits: one entry per source-`A` event.
    pub assignments: Option<Vec<MarkAssignment>>,
    pub trace: ConvergenceTrace,
}

impl FittedModel {
    pub fn k(&self) -> usize {
        self.groups.len()
    }

    pub fn converged(&self) -> bool {
        self.trace.converged
    }
}

/// Sparse branching posterior of one group: `background[i]` is `p_ii` and
/// `parents[i]` lists `(j, p_ij)` for earlier events `j`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BranchingPosteriorSingle {
    pub background: Vec<f64>,
    pub parents: Vec<Vec<(usize, f64)>>,
}

impl BranchingPosteriorSingle {
    pub fn len(&self) -> usize {
        self.background.len()
    }

    pub fn is_empty(&self) -> bool {
        self.background.is_empty()
    }

    /// `p_ii + Σ_j p_ij`.
    pub fn row_sum(&self, i: usize) -> f64 {
        self.background[i] + self.parents[i].iter().map(|&(_, p)| p).sum::<f64>()
    }

    pub fn max_row_error(&self) -> f64 {
        (0..self.len()).map(|i| (self.row_sum(i) - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn triggered_mass(&self) -> f64 {
        self.parents.iter().flatten().map(|&(_, p)| p).sum()
    }

    pub fn total_mass(&self) -> f64 {
        (0..self.len()).map(|i| self.row_sum(i)).sum()
    }

    pub(crate) fn zeros(n: usize) -> Self {
        Self {
            background: vec![0.0; n],
            parents: vec![Vec::new(); n],
        }
    }
}

/// Per-dataset constants shared by every iteration of a fit.
#[derive(Debug, Clone)]
pub(crate) struct FitContext {
    pub eps_lambda: f64,
    pub sigma_min: f64,
    pub bandwidth: BandwidthConfig,
    pub prior_omega: f64,
    pub prior_sigma: f64,
    pub mean_gap: f64,
    pub median_distance: f64,
    /// Median nearest-neighbour distance, the spatial scale of the warm start.
    pub nn_distance: f64,
    pub truncation: Truncation,
}

const MEDIAN_DISTANCE_SAMPLE: usize = 2000;

impl FitContext {
    pub(crate) fn new(dataset: &MarkedDataset, cfg: &FitConfig) -> Self {
        let w = dataset.window();
        let events = dataset.events();
        let n = events.len();
        let mean_gap = if n >= 2 {
            (events[n - 1].t - events[0].t) / (n - 1) as f64
        } else {
            0.0
        };
        let mean_gap = if mean_gap > 0.0 { mean_gap } else { w.duration() / n.max(1) as f64 };
        // Strided subsample keeps the pairwise median O(1) in memory for large N.
        let stride = n.div_ceil(MEDIAN_DISTANCE_SAMPLE).max(1);
        let sample: Vec<(f64, f64)> = events.iter().step_by(stride).map(|e| (e.x, e.y)).collect();
        let mut d: Vec<f64> = Vec::with_capacity(sample.len() * sample.len().saturating_sub(1) / 2);
        for (a, pa) in sample.iter().enumerate() {
            for pb in &sample[a + 1..] {
                d.push((pa.0 - pb.0).hypot(pa.1 - pb.1));
            }
        }
        let median_distance = if d.is_empty() {
            0.0
        } else {
            let mid = d.len() / 2;
            *d.select_nth_unstable_by(mid, f64::total_cmp).1
        };
        let median_distance = if median_distance > 0.0 { median_distance } else { w.diagonal() };
        let mut nearest: Vec<f64> = sample
            .iter()
            .enumerate()
            .map(|(a, pa)| {
                sample
                    .iter()
                    .enumerate()
                    .filter(|&(b, _)| b != a)
                    .map(|(_, pb)| (pa.0 - pb.0).hypot(pa.1 - pb.1))
                    .fold(f64::INFINITY, f64::min)
            })
            .filter(|d| d.is_finite())
            .collect();
        let nn_distance = if nearest.is_empty() {
            0.0
        } else {
            let mid = nearest.len() / 2;
            *nearest.select_nth_unstable_by(mid, f64::total_cmp).1
        };
        let nn_distance = if nn_distance > 0.0 { nn_distance } else { median_distance };
        let mut bandwidth = cfg.bandwidth;
        bandwidth.floor_time = bandwidth.floor_time.max(cfg.bandwidth_floor_rel * w.duration());
        bandwidth.floor_space = bandwidth.floor_space.max(cfg.bandwidth_floor_rel * w.diagonal());
        Self {
            eps_lambda: cfg
                .epsilon_lambda
                .unwrap_or_else(|| 1e-12 * n.max(1) as f64 / w.volume()),
            sigma_min: cfg.sigma_floor_rel * w.diagonal(),
            bandwidth,
            prior_omega: cfg.prior_omega.unwrap_or(1.0 / mean_gap),
            prior_sigma: cfg.prior_sigma.unwrap_or(median_distance),
            mean_gap,
            median_distance,
            nn_distance,
            truncation: cfg.truncation,
        }
    }
}

/// Initial posterior: within each row, half the mass goes to the background
/// and half is spread over earlier events in proportion to
/// `e^{−Δt/T̄} e^{−d²/(2R̄²)} · parent_weight[j]`, where `T̄` is the mean
/// inter-event time and `R̄` the median nearest-neighbour distance. Rows
/// without an admissible parent keep their whole mass on the background.
pub(crate) fn warm_start_rows(
    dataset: &MarkedDataset,
    ctx: &FitContext,
    row_mass: &[f64],
    parent_weight: &[f64],
) -> BranchingPosteriorSingle {
    let events = dataset.events();
    let horizon = ctx.truncation.max_decay * ctx.mean_gap;
    let r = ctx.truncation.max_sigmas * ctx.nn_distance;
    let r2max = r * r;
    let inv_t = 1.0 / ctx.mean_gap;
    let inv_s = 1.0 / (2.0 * ctx.nn_distance * ctx.nn_distance);
    let rows: Vec<(f64, Vec<(usize, f64)>)> = (0..events.len())
        .into_par_iter()
        .map(|i| {
            let m = row_mass[i];
            if m == 0.0 {
                return (0.0, Vec::new());
            }
            let e = &events[i];
            let mut parents = Vec::new();
            let mut total = 0.0;
            for j in (0..i).rev() {
                let p = &events[j];
                let dt = e.t - p.t;
                if dt > horizon {
                    break;
                }
                if dt <= 0.0 || parent_weight[j] == 0.0 {
                    continue;
                }
                let (dx, dy) = (e.x - p.x, e.y - p.y);
                let d2 = dx * dx + dy * dy;
                if d2 > r2max {
                    continue;
                }
                let kappa = parent_weight[j] * (-dt * inv_t).exp() * (-d2 * inv_s).exp();
                if kappa > 0.0 {
                    parents.push((j, kappa));
                    total += kappa;
                }
            }
            if total > 0.0 {
                let scale = 0.5 * m / total;
                for entry in &mut parents {
                    entry.1 *= scale;
                }
                (0.5 * m, parents)
            } else {
                (m, Vec::new())
            }
        })
        .collect();
    let (background, parents) = rows.into_iter().unzip();
    BranchingPosteriorSingle { background, parents }
}

/// Scale-aware initial posterior used by [`fit`]: half of every row on the
/// background, half spread over nearby predecessors.
pub fn warm_start(dataset: &MarkedDataset, cfg: &FitConfig) -> BranchingPosteriorSingle {
    let ctx = FitContext::new(dataset, cfg);
    let ones = vec![1.0; dataset.len()];
    warm_start_rows(dataset, &ctx, &ones, &ones)
}

/// `(p_ii, parents, low-intensity flag, zero-intensity flag)` of one event.
type Row = (f64, Vec<(usize, f64)>, bool, bool);

/// Branching posterior under fixed parameters.
///
/// `p_ii = μ0 u(x_i, y_i) v(t_i) / λ_i` and `p_ij = g(Δ) / λ_i`, the background
/// evaluated leave-one-out when its support is the dataset itself. Returns
/// the posterior and the number of events whose intensity fell below the
/// floor.
pub fn e_step(
    dataset: &MarkedDataset,
    params: &GroupParams,
    cfg: &FitConfig,
) -> Result<(BranchingPosteriorSingle, usize)> {
    let ctx = FitContext::new(dataset, cfg);
    let table = background_table(dataset, params, |_| true);
    e_step_with(dataset, params, &ctx, &table)
}

pub(crate) fn has_background(params: &GroupParams) -> bool {
    params.mu0 > 0.0 && params.background.kde().is_none_or(|k| k.nb() > 0.0)
}

/// `μ0 u v` at every event where `needed(i)` holds (zero elsewhere), the
/// background evaluated leave-one-out when its support is the dataset.
pub(crate) fn background_table(
    dataset: &MarkedDataset,
    params: &GroupParams,
    needed: impl Fn(usize) -> bool + Sync,
) -> Vec<f64> {
    let events = dataset.events();
    if !has_background(params) {
        return vec![0.0; events.len()];
    }
    let loo = params.background.loo_index(events);
    (0..events.len())
        .into_par_iter()
        .map(|i| {
            if !needed(i) {
                return 0.0;
            }
            let e = &events[i];
            params.mu0 * params.background.density(e.t, e.x, e.y, loo.index(i))
        })
        .collect()
}

pub(crate) fn e_step_with(
    dataset: &MarkedDataset,
    params: &GroupParams,
    ctx: &FitContext,
    background: &[f64],
) -> Result<(BranchingPosteriorSingle, usize)> {
    if !has_background(params) && params.trigger.k0 <= 0.0 {
        return Err(Error::InvalidInput("model has neither background mass nor triggering".into()));
    }
    let events = dataset.events();
    let trig = params.trigger;
    let horizon = ctx.truncation.time_horizon(&trig);
    let r2max = ctx.truncation.radius_sq(&trig);
    let eps = ctx.eps_lambda;

    let rows: Vec<Row> = (0..events.len())
        .into_par_iter()
        .map(|i| {
            let e = &events[i];
            let bg = background[i];
            let mut total = bg;
            let mut parents = Vec::new();
            if trig.k0 > 0.0 {
                for j in (0..i).rev() {
                    let p = &events[j];
                    let dt = e.t - p.t;
                    if dt > horizon {
                        break;
                    }
                    if dt <= 0.0 {
                        continue;
                    }
                    let (dx, dy) = (e.x - p.x, e.y - p.y);
                    if dx * dx + dy * dy > r2max {
                        continue;
                    }
                    let g = trig.density(dx, dy, dt);
                    if g > 0.0 {
                        parents.push((j, g));
                        total += g;
                    }
                }
            }
            if total > 0.0 && total.is_finite() {
                for entry in &mut parents {
                    entry.1 /= total;
                }
                (bg / total, parents, total < eps, false)
            } else {
                (1.0, Vec::new(), true, true)
            }
        })
        .collect();

    if !rows.is_empty() && rows.iter().all(|r| r.3) {
        return Err(Error::ZeroIntensity);
    }
    let warnings = rows.iter().filter(|r| r.2).count();
    if warnings > 0 {
        log::warn!("{warnings} events with intensity below the floor {eps:e}");
    }
    let mut post = BranchingPosteriorSingle::zeros(rows.len());
    for (i, (bg, parents, _, _)) in rows.into_iter().enumerate() {
        post.background[i] = bg;
        post.parents[i] = parents;
    }
    Ok((post, warnings))
}

/// Re-estimates `(K0, ω, σ)`, the background KDE and `μ0` from a posterior.
///
/// `K0 = Σ p_ij / Σ(all entries)`, `ω = Σ p_ij / Σ p_ij Δt`,
/// `σ² = Σ p_ij d²_ij / (2 Σ p_ij)`, `μ0 = Σ p_ii`. Without triggering mass
/// `K0 = 0` and `ω`, `σ` take their priors.
pub fn m_step(
    dataset: &MarkedDataset,
    posterior: &BranchingPosteriorSingle,
    cfg: &FitConfig,
) -> Result<GroupParams> {
    let ctx = FitContext::new(dataset, cfg);
    m_step_with(dataset, posterior, &ctx, None, false)
}

pub(crate) fn m_step_with(
    dataset: &MarkedDataset,
    post: &BranchingPosteriorSingle,
    ctx: &FitContext,
    prev: Option<&GroupParams>,
    freeze_bandwidths: bool,
) -> Result<GroupParams> {
    let events = dataset.events();
    if post.len() != events.len() {
        return Err(Error::InvalidInput(format!(
            "posterior has {} rows for {} events",
            post.len(),
            events.len()
        )));
    }
    let mut total = 0.0;
    let mut unlabeled = 0.0;
    let mut trig_mass = 0.0;
    let mut weighted_dt = 0.0;
    let mut weighted_d2 = 0.0;
    let mut mu0 = 0.0;
    for (i, e) in events.iter().enumerate() {
        let mut row = post.background[i];
        mu0 += post.background[i];
        for &(j, p) in &post.parents[i] {
            let q = &events[j];
            let (dx, dy) = (e.x - q.x, e.y - q.y);
            trig_mass += p;
            weighted_dt += p * (e.t - q.t);
            weighted_d2 += p * (dx * dx + dy * dy);
            row += p;
        }
        total += row;
        if e.source == Source::A {
            unlabeled += row;
        }
    }
    let trigger = if trig_mass > 0.0 && weighted_dt > 0.0 {
        let sigma = (weighted_d2 / (2.0 * trig_mass)).sqrt().max(ctx.sigma_min);
        TriggerParams::new(trig_mass / total, trig_mass / weighted_dt, sigma)?
    } else {
        TriggerParams::new(0.0, ctx.prior_omega, ctx.prior_sigma.max(ctx.sigma_min))?
    };

    let points: Vec<SupportPoint> = events
        .iter()
        .zip(&post.background)
        .map(|(e, &w)| SupportPoint { t: e.t, x: e.x, y: e.y, w })
        .collect();
    let prev_bw = prev.and_then(|g| g.background.kde()).map(|k| (k.b1(), k.b2()));
    let (b1, b2) = match (freeze_bandwidths, prev_bw) {
        (true, Some(bw)) => bw,
        _ => match select_bandwidths(&points, &ctx.bandwidth) {
            Ok(bw) => bw,
            Err(_) => prev_bw.unwrap_or((
                (ctx.mean_gap * 15.0).max(ctx.bandwidth.floor_time),
                ctx.median_distance.max(ctx.bandwidth.floor_space),
            )),
        },
    };
    let background = Background::Kde(KdeBackground::bounded(points, b1, b2, *dataset.window())?);
    Ok(GroupParams {
        trigger,
        mu0,
        background,
        unlabeled_share: if total > 0.0 { unlabeled / total } else { 0.0 },
        empty: false,
    })
}

/// Expected complete-data log-likelihood with soft branching weights:
///
/// `Σ p_ii log(μ0 u v) − μ0 + Σ p_ij log g_ij − Σ_j K0 (1 − e^{−ω(T − t_j)})`
///
/// with `T = window.t1`. Logs of values below the intensity floor use the
/// floor. Returns the value and the number of floored terms.
pub fn complete_data_loglik(
    dataset: &MarkedDataset,
    posterior: &BranchingPosteriorSingle,
    params: &GroupParams,
    window: &Window,
    cfg: &FitConfig,
) -> Result<(f64, usize)> {
    let ctx = FitContext::new(dataset, cfg);
    if posterior.len() != dataset.len() {
        return Err(Error::InvalidInput("posterior does not match dataset".into()));
    }
    let table = background_table(dataset, params, |i| posterior.background[i] > 0.0);
    Ok(group_objective(dataset, posterior, params, &table, None, window, ctx.eps_lambda))
}

/// Objective of one group; `parent_weight[j]` scales event `j`'s expected
/// offspring (its responsibility for the group), 1 when absent. `background`
/// holds `μ0 u v` at every event with `p_ii > 0`.
pub(crate) fn group_objective(
    dataset: &MarkedDataset,
    post: &BranchingPosteriorSingle,
    params: &GroupParams,
    background: &[f64],
    parent_weight: Option<&[f64]>,
    window: &Window,
    eps: f64,
) -> (f64, usize) {
    let events = dataset.events();
    let trig = params.trigger;
    let mut floored = 0;
    let mut safe_ln = |v: f64| {
        if v >= eps {
            v.ln()
        } else {
            floored += 1;
            eps.ln()
        }
    };
    let mut value = -params.mu0;
    for (i, e) in events.iter().enumerate() {
        let pii = post.background[i];
        if pii > 0.0 {
            value += pii * safe_ln(background[i]);
        }
        for &(j, p) in &post.parents[i] {
            if p > 0.0 {
                let q = &events[j];
                value += p * safe_ln(trig.density(e.x - q.x, e.y - q.y, e.t - q.t));
            }
        }
        let w = parent_weight.map_or(1.0, |pw| pw[i]);
        value -= w * trig.mass((window.t1 - e.t).max(0.0));
    }
    (value, floored)
}

pub(crate) fn relative_change(a: &GroupParams, b: &GroupParams) -> f64 {
    let rel = |x: f64, y: f64| (x - y).abs() / (x.abs() + 1e-12);
    rel(a.trigger.k0, b.trigger.k0)
        .max(rel(a.trigger.omega, b.trigger.omega))
        .max(rel(a.trigger.sigma, b.trigger.sigma))
        .max(rel(a.mu0, b.mu0))
}

/// Fits the single-group model by EM from the scale-aware warm start.
pub fn fit(dataset: &MarkedDataset, cfg: &FitConfig) -> Result<FittedModel> {
    fit_with_posterior(dataset, cfg).map(|(m, _)| m)
}

/// As [`fit`], also returning the final E-step posterior.
pub fn fit_with_posterior(
    dataset: &MarkedDataset,
    cfg: &FitConfig,
) -> Result<(FittedModel, BranchingPosteriorSingle)> {
    cfg.validate()?;
    if dataset.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 events, got {}", dataset.len())));
    }
    let ctx = FitContext::new(dataset, cfg);
    let n = dataset.len();
    let ones = vec![1.0; n];
    let mut post = warm_start_rows(dataset, &ctx, &ones, &ones);
    let mut trace = ConvergenceTrace::default();
    let mut current: Option<GroupParams> = None;
    for _ in 0..cfg.max_iters {
        let params = m_step_with(dataset, &post, &ctx, current.as_ref(), cfg.freeze_bandwidths)?;
        let delta = current.as_ref().map_or(f64::INFINITY, |c| relative_change(c, &params));
        let table = background_table(dataset, &params, |_| true);
        let (objective, _) = group_objective(dataset, &post, &params, &table, None, dataset.window(), ctx.eps_lambda);
        trace.deltas.push(delta);
        trace.objective.push(objective);
        trace.iterations += 1;
        let (next, warnings) = e_step_with(dataset, &params, &ctx, &table)?;
        trace.intensity_warnings += warnings;
        post = next;
        current = Some(params);
        if delta < cfg.tol {
            trace.converged = true;
            break;
        }
    }
    if !trace.converged {
        log::warn!("EM stopped at max_iters = {} without converging", cfg.max_iters);
    }
    let model = FittedModel {
        window: *dataset.window(),
        time_unit: cfg.time_unit.clone(),
        groups: vec![current.expect("max_iters >= 1")],
        assignments: None,
        trace,
    };
    Ok((model, post))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::EventRecord;

    fn ev(id: u64, t: f64, x: f64, y: f64) -> EventRecord {
        EventRecord {
            id,
            t,
            x,
            y,
            source: Source::A,
            mark: None,
        }
    }

    fn dataset(events: Vec<EventRecord>) -> MarkedDataset {
        MarkedDataset::new(events, Window::new(0.0, 10.0, 0.0, 1.0, 0.0, 1.0).unwrap(), 1).unwrap()
    }

    fn params(k0: f64, omega: f64, sigma: f64, ds: &MarkedDataset) -> GroupParams {
        let points = ds
            .events()
            .iter()
            .map(|e| SupportPoint { t: e.t, x: e.x, y: e.y, w: 1.0 })
            .collect();
        GroupParams {
            trigger: TriggerParams::new(k0, omega, sigma).unwrap(),
            mu0: ds.len() as f64,
            background: Background::Kde(KdeBackground::new(points, 2.0, 0.3).unwrap()),
            unlabeled_share: 1.0,
            empty: false,
        }
    }

    #[test]
    fn single_event_is_background() {
        let ds = dataset(vec![ev(1, 1.0, 0.5, 0.5)]);
        let mut p = params(0.5, 1.0, 0.1, &ds);
        // A lone event has no leave-one-out support, so use a detached one.
        p.background = Background::Kde(
            KdeBackground::new(vec![SupportPoint { t: 2.0, x: 0.4, y: 0.4, w: 1.0 }], 2.0, 0.3).unwrap(),
        );
        let (post, _) = e_step(&ds, &p, &FitConfig::default()).unwrap();
        assert_eq!(post.background, vec![1.0]);
        assert!(post.parents[0].is_empty());
    }

    #[test]
    fn truncated_pair_is_background() {
        let ds = dataset(vec![ev(1, 0.0, 0.5, 0.5), ev(2, 9.0, 0.5, 0.5)]);
        let p = params(0.9, 5.0, 0.1, &ds);
        let (post, _) = e_step(&ds, &p, &FitConfig::default()).unwrap();
        assert!((post.background[1] - 1.0).abs() < 1e-15);
        assert!(post.parents[1].is_empty());
    }

    #[test]
    fn pure_background_posterior() {
        let ds = dataset(vec![ev(1, 1.0, 0.1, 0.1), ev(2, 2.0, 0.4, 0.3), ev(3, 3.0, 0.8, 0.9)]);
        let post = BranchingPosteriorSingle {
            background: vec![1.0; 3],
            parents: vec![Vec::new(); 3],
        };
        let g = m_step(&ds, &post, &FitConfig::default()).unwrap();
        assert_eq!(g.trigger.k0, 0.0);
        assert_eq!(g.mu0, 3.0);
        assert!(g.trigger.omega > 0.0 && g.trigger.sigma > 0.0);
    }

    #[test]
    fn two_event_m_step_by_hand() {
        let ds = dataset(vec![ev(1, 1.0, 0.5, 0.5), ev(2, 3.0, 0.5, 0.5)]);
        let post = BranchingPosteriorSingle {
            background: vec![1.0, 0.0],
            parents: vec![Vec::new(), vec![(0, 1.0)]],
        };
        let cfg = FitConfig::default();
        let g = m_step(&ds, &post, &cfg).unwrap();
        assert_eq!(g.trigger.k0, 0.5);
        assert_eq!(g.trigger.omega, 0.5);
        let sigma_min = cfg.sigma_floor_rel * ds.window().diagonal();
        assert_eq!(g.trigger.sigma, sigma_min);
        assert_eq!(g.mu0, 1.0);
    }

    #[test]
    fn sigma_is_root_half_mean_square_displacement() {
        let events = vec![
            ev(1, 1.0, 0.5, 0.5),
            ev(2, 2.0, 0.6, 0.5),
            ev(3, 3.0, 0.5, 0.7),
            ev(4, 4.0, 0.2, 0.1),
        ];
        let ds = dataset(events.clone());
        let pairs = [(1usize, 0usize), (2, 0), (3, 1)];
        let mut post = BranchingPosteriorSingle::zeros(4);
        post.background[0] = 1.0;
        for &(i, j) in &pairs {
            post.parents[i].push((j, 1.0));
        }
        let g = m_step(&ds, &post, &FitConfig::default()).unwrap();
        let r2: Vec<f64> = pairs
            .iter()
            .map(|&(i, j)| (events[i].x - events[j].x).powi(2) + (events[i].y - events[j].y).powi(2))
            .collect();
        let expected = (r2.iter().sum::<f64>() / r2.len() as f64 / 2.0).sqrt();
        assert!((g.trigger.sigma - expected).abs() < 1e-15);
        assert_eq!(g.trigger.k0, 3.0 / 4.0);
    }

    #[test]
    fn rejects_degenerate_inputs() {
        let ds = dataset(vec![ev(1, 1.0, 0.5, 0.5)]);
        assert!(fit(&ds, &FitConfig::default()).is_err());
        let cfg = FitConfig {
            max_iters: 0,
            ..Default::default()
        };
        let ds = dataset(vec![ev(1, 1.0, 0.5, 0.5), ev(2, 2.0, 0.5, 0.5)]);
        assert!(fit(&ds, &cfg).is_err());
    }

    #[test]
    fn warm_start_is_row_stochastic() {
        let ds = dataset((0..20).map(|i| ev(i, i as f64 * 0.4, (i as f64 * 0.37) % 1.0, (i as f64 * 0.61) % 1.0)).collect());
        let ctx = FitContext::new(&ds, &FitConfig::default());
        let ones = vec![1.0; ds.len()];
        let post = warm_start_rows(&ds, &ctx, &ones, &ones);
        assert!(post.max_row_error() < 1e-12);
        assert_eq!(post.background[0], 1.0);
        assert_eq!(post.background[5], 0.5);
    }
}
