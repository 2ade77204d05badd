//! Direct-evaluation oracles shared by the integration tests. Everything here
//! is written from the model formulas, independently of the library code.

#![allow(dead_code)]

use std::f64::consts::PI;

use hawkes_fusion::data::{EventRecord, MarkedDataset, Source, Window};
use hawkes_fusion::kernels::{Background, KdeBackground, SupportPoint};
use hawkes_fusion::{GroupParams, TriggerParams};
use statrs::distribution::{ContinuousCDF, Normal};

pub fn ev(id: u64, t: f64, x: f64, y: f64, mark: Option<usize>) -> EventRecord {
    EventRecord {
        id,
        t,
        x,
        y,
        source: if mark.is_some() { Source::B } else { Source::A },
        mark,
    }
}

pub fn unit_window(t1: f64) -> Window {
    Window::new(0.0, t1, 0.0, 1.0, 0.0, 1.0).unwrap()
}

/// `K0 ω e^{−ω dt} exp(−r²/2σ²) / (2πσ²)` for `dt > 0`.
pub fn g(p: &TriggerParams, dx: f64, dy: f64, dt: f64) -> f64 {
    if dt <= 0.0 {
        return 0.0;
    }
    p.k0 * p.omega * (-p.omega * dt).exp() * (-(dx * dx + dy * dy) / (2.0 * p.sigma * p.sigma)).exp()
        / (2.0 * PI * p.sigma * p.sigma)
}

/// Mass of `N(c, b²)` inside `[lo, hi]`.
pub fn gauss_mass(c: f64, b: f64, lo: f64, hi: f64) -> f64 {
    let n = Normal::new(c, b).unwrap();
    n.cdf(hi) - n.cdf(lo)
}

/// Weighted temporal KDE with point `skip` left out, normalized by the
/// total weight. With a domain every kernel is divided by its mass inside it.
pub fn v(points: &[SupportPoint], b1: f64, t: f64, skip: Option<usize>, domain: Option<&Window>) -> f64 {
    let nb: f64 = points.iter().map(|p| p.w).sum();
    let mut s = 0.0;
    for (j, p) in points.iter().enumerate() {
        if Some(j) == skip || p.w == 0.0 {
            continue;
        }
        let c = domain.map_or(1.0, |d| gauss_mass(p.t, b1, d.t0, d.t1));
        s += p.w / c * (-(t - p.t).powi(2) / (2.0 * b1 * b1)).exp() / ((2.0 * PI).sqrt() * b1);
    }
    s / nb
}

pub fn u(points: &[SupportPoint], b2: f64, x: f64, y: f64, skip: Option<usize>, domain: Option<&Window>) -> f64 {
    let nb: f64 = points.iter().map(|p| p.w).sum();
    let mut s = 0.0;
    for (j, p) in points.iter().enumerate() {
        if Some(j) == skip || p.w == 0.0 {
            continue;
        }
        let c = domain.map_or(1.0, |d| gauss_mass(p.x, b2, d.x0, d.x1) * gauss_mass(p.y, b2, d.y0, d.y1));
        let r2 = (x - p.x).powi(2) + (y - p.y).powi(2);
        s += p.w / c * (-r2 / (2.0 * b2 * b2)).exp() / (2.0 * PI * b2 * b2);
    }
    s / nb
}

/// `∫_{t0}^{t1} v`.
pub fn v_mass(points: &[SupportPoint], b1: f64, t0: f64, t1: f64, domain: Option<&Window>) -> f64 {
    let nb: f64 = points.iter().map(|p| p.w).sum();
    let mut s = 0.0;
    for p in points.iter().filter(|p| p.w > 0.0) {
        let c = domain.map_or(1.0, |d| gauss_mass(p.t, b1, d.t0, d.t1));
        s += p.w / c * gauss_mass(p.t, b1, t0, t1);
    }
    s / nb
}

/// Group parameters whose background sits on the dataset's own events with
/// the given weights, kernels renormalized to the dataset window.
pub fn group_on(ds: &MarkedDataset, weights: &[f64], trig: TriggerParams, b1: f64, b2: f64) -> GroupParams {
    let points: Vec<SupportPoint> = ds
        .events()
        .iter()
        .zip(weights)
        .map(|(e, &w)| SupportPoint { t: e.t, x: e.x, y: e.y, w })
        .collect();
    GroupParams {
        trigger: trig,
        mu0: weights.iter().sum(),
        background: Background::Kde(KdeBackground::bounded(points, b1, b2, *ds.window()).unwrap()),
        unlabeled_share: 0.5,
        empty: false,
    }
}

/// `μ0 u(x_i, y_i) v(t_i)` with the background evaluated leave-one-out.
pub fn background_term(ds: &MarkedDataset, params: &GroupParams, i: usize) -> f64 {
    let kde = params.background.kde().unwrap();
    let e = &ds.events()[i];
    let d = Some(ds.window());
    params.mu0 * u(kde.points(), kde.b2(), e.x, e.y, Some(i), d) * v(kde.points(), kde.b1(), e.t, Some(i), d)
}

/// Relative difference with an absolute floor of 1e-300.
pub fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

/// Exhaustive pairwise AUC count.
pub fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut twice_wins, mut pairs) = (0u128, 0u128);
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1;
            if scores[i] > scores[j] {
                twice_wins += 2;
            } else if scores[i] == scores[j] {
                twice_wins += 1;
            }
        }
    }
    twice_wins as f64 / (2 * pairs) as f64
}
