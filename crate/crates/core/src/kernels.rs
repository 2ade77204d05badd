//! Triggering kernel and weighted leave-one-out background density estimates.

use std::f64::consts::{PI, SQRT_2};

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::data::{EventRecord, Window};
use crate::{Error, Result};

const INV_SQRT_TAU: f64 = 0.398_942_280_401_432_7;

/// Parameters of the separable triggering kernel: exponential in time,
/// isotropic Gaussian in space.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TriggerParams {
    /// Expected number of direct offspring per event.
    pub k0: f64,
    /// Temporal decay rate (1 / time).
    pub omega: f64,
    /// Spatial spread (length).
    pub sigma: f64,
}

impl TriggerParams {
    /// Validates `k0 ≥ 0`, `omega > 0`, `sigma > 0`. Supercritical `k0 ≥ 1`
    /// is admitted for diagnostics.
    pub fn new(k0: f64, omega: f64, sigma: f64) -> Result<Self> {
        if !(k0.is_finite() && k0 >= 0.0) {
            return Err(Error::invalid("K0", format!("must be finite and >= 0, got {k0}")));
        }
        if !(omega.is_finite() && omega > 0.0) {
            return Err(Error::invalid("omega", format!("must be finite and > 0, got {omega}")));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::invalid("sigma", format!("must be finite and > 0, got {sigma}")));
        }
        Ok(Self { k0, omega, sigma })
    }

    pub fn is_subcritical(&self) -> bool {
        self.k0 < 1.0
    }

    /// Kernel value without input validation; zero for `dt <= 0`.
    #[inline]
    pub(crate) fn density(&self, dx: f64, dy: f64, dt: f64) -> f64 {
        if dt <= 0.0 {
            return 0.0;
        }
        let s2 = self.sigma * self.sigma;
        self.k0 * self.omega * (-self.omega * dt).exp() * (-(dx * dx + dy * dy) / (2.0 * s2)).exp()
            / (2.0 * PI * s2)
    }

    #[inline]
    pub(crate) fn mass(&self, dt_max: f64) -> f64 {
        self.k0 * -(-self.omega * dt_max).exp_m1()
    }
}

/// `g(dx, dy, dt)`; zero for `dt <= 0`.
pub fn trigger_density(dx: f64, dy: f64, dt: f64, p: &TriggerParams) -> Result<f64> {
    if !(dx.is_finite() && dy.is_finite() && dt.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "non-finite kernel argument (dx={dx}, dy={dy}, dt={dt})"
        )));
    }
    Ok(p.density(dx, dy, dt))
}

/// Expected offspring produced within `dt_max` of the parent:
/// `K0 (1 − e^{−ω dt_max})`.
pub fn trigger_mass(dt_max: f64, p: &TriggerParams) -> Result<f64> {
    if dt_max.is_nan() || dt_max < 0.0 {
        return Err(Error::invalid("dt_max", format!("must be >= 0, got {dt_max}")));
    }
    Ok(p.mass(dt_max))
}

/// Parent/child pairs beyond these limits contribute below 1e-17 of the
/// kernel peak and are skipped.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    /// Skip pairs with `ω·dt` above this.
    pub max_decay: f64,
    /// Skip pairs farther apart than this many `σ`.
    pub max_sigmas: f64,
}

impl Default for Truncation {
    fn default() -> Self {
        Self {
            max_decay: 40.0,
            max_sigmas: 8.0,
        }
    }
}

impl Truncation {
    pub fn none() -> Self {
        Self {
            max_decay: f64::INFINITY,
            max_sigmas: f64::INFINITY,
        }
    }

    #[inline]
    pub(crate) fn time_horizon(&self, p: &TriggerParams) -> f64 {
        self.max_decay / p.omega
    }

    #[inline]
    pub(crate) fn radius_sq(&self, p: &TriggerParams) -> f64 {
        let r = self.max_sigmas * p.sigma;
        r * r
    }
}

/// A weighted background support point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SupportPoint {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub w: f64,
}

/// Weighted Gaussian kernel density estimate of the background, separable
/// into a temporal part `v(t)` and a spatial part `u(x, y)`, each
/// normalized by `Nb = Σ w`.
///
/// The temporal kernel uses the one-dimensional normalizer `1/(√(2π) b1)`, so
/// an unbounded `v` integrates to one over the real line. A bounded estimate
/// rescales every kernel by the reciprocal of its mass inside the domain
/// window, so `u` and `v` each integrate to one over that window however wide
/// the bandwidths grow.
#[derive(Debug, Clone, PartialEq)]
pub struct KdeBackground {
    points: Vec<SupportPoint>,
    b1: f64,
    b2: f64,
    nb: f64,
    domain: Option<Window>,
    active: Active,
}

/// Positive-weight support points laid out for the summation loops, with
/// per-point kernel weights in time and space (`w` over in-domain mass).
#[derive(Debug, Clone, PartialEq, Default)]
struct Active {
    t: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    wt: Vec<f64>,
    ws: Vec<f64>,
    /// Position of each support point in these arrays, `usize::MAX` when its
    /// weight is zero.
    slot: Vec<usize>,
}

impl Active {
    fn new(points: &[SupportPoint]) -> Self {
        let mut a = Active {
            slot: vec![usize::MAX; points.len()],
            ..Default::default()
        };
        for (j, p) in points.iter().enumerate() {
            if p.w > 0.0 {
                a.slot[j] = a.t.len();
                a.t.push(p.t);
                a.x.push(p.x);
                a.y.push(p.y);
                a.wt.push(p.w);
                a.ws.push(p.w);
            }
        }
        a
    }

    /// Splits `0..len` around the slot of `exclude`.
    #[inline]
    fn ranges(&self, exclude: Option<usize>) -> [std::ops::Range<usize>; 2] {
        let n = self.t.len();
        match exclude.and_then(|j| self.slot.get(j).copied()).filter(|&c| c != usize::MAX) {
            Some(c) => [0..c, c + 1..n],
            None => [0..n, n..n],
        }
    }
}

/// Mass of a unit Gaussian kernel with centre `c` and scale `b` inside `[lo, hi]`.
fn interval_mass(c: f64, b: f64, lo: f64, hi: f64) -> f64 {
    let s = SQRT_2 * b;
    0.5 * (erf((hi - c) / s) - erf((lo - c) / s))
}

impl KdeBackground {
    pub fn new(points: Vec<SupportPoint>, b1: f64, b2: f64) -> Result<Self> {
        if !(b1.is_finite() && b1 > 0.0) {
            return Err(Error::invalid("b1", format!("bandwidth must be finite and > 0, got {b1}")));
        }
        if !(b2.is_finite() && b2 > 0.0) {
            return Err(Error::invalid("b2", format!("bandwidth must be finite and > 0, got {b2}")));
        }
        for p in &points {
            if !(p.w.is_finite() && p.w >= 0.0) {
                return Err(Error::invalid("w", format!("support weight must be >= 0, got {}", p.w)));
            }
            if !(p.t.is_finite() && p.x.is_finite() && p.y.is_finite()) {
                return Err(Error::InvalidInput("non-finite support point".into()));
            }
        }
        let nb = points.iter().map(|p| p.w).sum();
        let active = Active::new(&points);
        Ok(Self {
            points,
            b1,
            b2,
            nb,
            domain: None,
            active,
        })
    }

    /// Like [`KdeBackground::new`], with every kernel renormalized to its mass
    /// inside `domain`.
    pub fn bounded(points: Vec<SupportPoint>, b1: f64, b2: f64, domain: Window) -> Result<Self> {
        let mut kde = Self::new(points, b1, b2)?;
        for (j, p) in kde.points.iter().enumerate() {
            let c = kde.active.slot[j];
            if c == usize::MAX {
                continue;
            }
            let mt = interval_mass(p.t, b1, domain.t0, domain.t1);
            let ms = interval_mass(p.x, b2, domain.x0, domain.x1) * interval_mass(p.y, b2, domain.y0, domain.y1);
            if !(mt > 0.0 && ms > 0.0) {
                return Err(Error::InvalidInput(format!(
                    "background support point ({}, {}, {}) has no kernel mass inside the window",
                    p.t, p.x, p.y
                )));
            }
            kde.active.wt[c] = p.w / mt;
            kde.active.ws[c] = p.w / ms;
        }
        kde.domain = Some(domain);
        Ok(kde)
    }

    /// The window the kernels are renormalized to, if any.
    pub fn domain(&self) -> Option<&Window> {
        self.domain.as_ref()
    }

    pub fn points(&self) -> &[SupportPoint] {
        &self.points
    }

    pub fn b1(&self) -> f64 {
        self.b1
    }

    pub fn b2(&self) -> f64 {
        self.b2
    }

    /// Total support weight, the estimated number of background events.
    pub fn nb(&self) -> f64 {
        self.nb
    }

    /// Temporal density `v(t)`, optionally leaving out support point `exclude`.
    pub fn kde_time(&self, t: f64, exclude: Option<usize>) -> Result<f64> {
        self.check_mass()?;
        let inv = 1.0 / (2.0 * self.b1 * self.b1);
        let a = &self.active;
        let mut acc = 0.0;
        for range in a.ranges(exclude) {
            for c in range {
                let d = t - a.t[c];
                acc += a.wt[c] * (-d * d * inv).exp();
            }
        }
        Ok(acc * INV_SQRT_TAU / (self.b1 * self.nb))
    }

    /// Spatial density `u(x, y)`, optionally leaving out support point `exclude`.
    pub fn kde_space(&self, x: f64, y: f64, exclude: Option<usize>) -> Result<f64> {
        self.check_mass()?;
        let inv = 1.0 / (2.0 * self.b2 * self.b2);
        let a = &self.active;
        let mut acc = 0.0;
        for range in a.ranges(exclude) {
            for c in range {
                let dx = x - a.x[c];
                let dy = y - a.y[c];
                acc += a.ws[c] * (-(dx * dx + dy * dy) * inv).exp();
            }
        }
        Ok(acc / (2.0 * PI * self.b2 * self.b2 * self.nb))
    }

    /// `u(x, y) · v(t)` in a single pass over the support.
    pub(crate) fn density_product(&self, t: f64, x: f64, y: f64, exclude: Option<usize>) -> f64 {
        if self.nb <= 0.0 {
            return 0.0;
        }
        let inv_t = 1.0 / (2.0 * self.b1 * self.b1);
        let inv_s = 1.0 / (2.0 * self.b2 * self.b2);
        let a = &self.active;
        let mut acc_t = 0.0;
        let mut acc_s = 0.0;
        for range in a.ranges(exclude) {
            for c in range {
                let dt = t - a.t[c];
                let dx = x - a.x[c];
                let dy = y - a.y[c];
                acc_t += a.wt[c] * (-dt * dt * inv_t).exp();
                acc_s += a.ws[c] * (-(dx * dx + dy * dy) * inv_s).exp();
            }
        }
        let v = acc_t * INV_SQRT_TAU / (self.b1 * self.nb);
        let u = acc_s / (2.0 * PI * self.b2 * self.b2 * self.nb);
        u * v
    }

    /// `∫_{t0}^{t1} v(t) dt`.
    pub fn time_mass(&self, t0: f64, t1: f64) -> Result<f64> {
        self.check_mass()?;
        let a = &self.active;
        let acc: f64 = a.t.iter().zip(&a.wt).map(|(&t, w)| w * interval_mass(t, self.b1, t0, t1)).sum();
        Ok(acc / self.nb)
    }

    /// True when support point `i` sits exactly on event `i` for every event,
    /// which is how the M-step builds the support. Leave-one-out evaluation
    /// is only meaningful in that case.
    pub fn aligned_with(&self, events: &[EventRecord]) -> bool {
        self.points.len() == events.len()
            && self
                .points
                .iter()
                .zip(events)
                .all(|(p, e)| p.t == e.t && p.x == e.x && p.y == e.y)
    }

    fn check_mass(&self) -> Result<()> {
        if self.nb > 0.0 {
            Ok(())
        } else {
            Err(Error::NoBackgroundMass)
        }
    }
}

/// Background component of a group: a fitted KDE or, for baselines and
/// hand-built models, a density uniform over the observation window.
#[derive(Debug, Clone, PartialEq)]
pub enum Background {
    Kde(KdeBackground),
    Uniform(Window),
}

impl Background {
    /// `u · v` at a point; `exclude` applies to KDE support only.
    pub(crate) fn density(&self, t: f64, x: f64, y: f64, exclude: Option<usize>) -> f64 {
        match self {
            Background::Kde(kde) => kde.density_product(t, x, y, exclude),
            Background::Uniform(w) => {
                if w.contains(t, x, y) {
                    1.0 / w.volume()
                } else {
                    0.0
                }
            }
        }
    }

    /// Fraction of temporal background mass inside `[t0, t1]` of `window`.
    pub fn time_coverage(&self, window: &Window) -> f64 {
        match self {
            Background::Kde(kde) => kde.time_mass(window.t0, window.t1).unwrap_or(0.0),
            Background::Uniform(w) => {
                let lo = w.t0.max(window.t0);
                let hi = w.t1.min(window.t1);
                ((hi - lo) / w.duration()).clamp(0.0, 1.0)
            }
        }
    }

    pub fn kde(&self) -> Option<&KdeBackground> {
        match self {
            Background::Kde(kde) => Some(kde),
            Background::Uniform(_) => None,
        }
    }

    /// Index to leave out when evaluating the background at event `i` of
    /// `events`.
    pub(crate) fn loo_index(&self, events: &[EventRecord]) -> LeaveOneOut {
        match self {
            Background::Kde(kde) if kde.aligned_with(events) => LeaveOneOut::Aligned,
            _ => LeaveOneOut::None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LeaveOneOut {
    Aligned,
    None,
}

impl LeaveOneOut {
    #[inline]
    pub(crate) fn index(self, i: usize) -> Option<usize> {
        match self {
            LeaveOneOut::Aligned => Some(i),
            LeaveOneOut::None => None,
        }
    }
}

/// How KDE bandwidths are chosen in the M-step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum BandwidthStrategy {
    /// Weighted median of the distance at which the `k` nearest neighbours'
    /// weight is accumulated.
    NearestNeighbor { k: usize },
    /// Weighted leave-one-out likelihood cross-validation over multiples of
    /// the nearest-neighbour bandwidth.
    CrossValidation { k: usize },
    Fixed { b1: f64, b2: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandwidthConfig {
    pub strategy: BandwidthStrategy,
    pub floor_time: f64,
    pub floor_space: f64,
}

impl Default for BandwidthConfig {
    fn default() -> Self {
        Self {
            strategy: BandwidthStrategy::NearestNeighbor { k: 15 },
            floor_time: 1e-9,
            floor_space: 1e-9,
        }
    }
}

const CV_MULTIPLIERS: [f64; 7] = [0.25, 0.35, 0.5, 0.7, 1.0, 1.4, 2.0];

/// Chooses `(b1, b2)` for weighted support points.
///
/// With unit weights the nearest-neighbour rule is the median over points of
/// the distance to the k-th nearest neighbour, `k` capped at `N − 1`. With
/// general weights a neighbour counts by its weight, the cap becomes the
/// weight of all other points, and the median is weight-weighted. The lower
/// median is used for even counts.
pub fn select_bandwidths(points: &[SupportPoint], cfg: &BandwidthConfig) -> Result<(f64, f64)> {
    let active: Vec<SupportPoint> = points.iter().copied().filter(|p| p.w > 0.0).collect();
    if active.len() < 2 {
        return Err(Error::InvalidInput(format!(
            "bandwidth selection needs at least 2 weighted points, got {}",
            active.len()
        )));
    }
    let (b1, b2) = match cfg.strategy {
        BandwidthStrategy::Fixed { b1, b2 } => (b1, b2),
        BandwidthStrategy::NearestNeighbor { k } => {
            let k = k.max(1) as f64;
            (knn_bandwidth_time(&active, k), knn_bandwidth_space(&active, k))
        }
        BandwidthStrategy::CrossValidation { k } => {
            let k = k.max(1) as f64;
            let nn_t = knn_bandwidth_time(&active, k).max(cfg.floor_time);
            let nn_s = knn_bandwidth_space(&active, k).max(cfg.floor_space);
            (
                cv_bandwidth(&active, nn_t, |a, b| {
                    let d = a.t - b.t;
                    d * d
                }, 1),
                cv_bandwidth(&active, nn_s, |a, b| {
                    let dx = a.x - b.x;
                    let dy = a.y - b.y;
                    dx * dx + dy * dy
                }, 2),
            )
        }
    };
    Ok((b1.max(cfg.floor_time), b2.max(cfg.floor_space)))
}

fn knn_bandwidth_time(points: &[SupportPoint], k: f64) -> f64 {
    let total: f64 = points.iter().map(|p| p.w).sum();
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a].t.total_cmp(&points[b].t));
    let mut radii: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for (pos, &i) in order.iter().enumerate() {
        let pi = &points[i];
        let target = k.min(total - pi.w) * (1.0 - 1e-12);
        if target <= 0.0 {
            continue;
        }
        // Merge the two sorted sides outward until the weight is reached.
        let (mut left, mut right) = (pos, pos + 1);
        let mut acc = 0.0;
        let mut radius = 0.0;
        while acc < target {
            let dl = (left > 0).then(|| pi.t - points[order[left - 1]].t);
            let dr = (right < order.len()).then(|| points[order[right]].t - pi.t);
            let j = match (dl, dr) {
                (Some(a), Some(b)) if a <= b => {
                    left -= 1;
                    radius = a;
                    order[left]
                }
                (_, Some(b)) => {
                    right += 1;
                    radius = b;
                    order[right - 1]
                }
                (Some(a), None) => {
                    left -= 1;
                    radius = a;
                    order[left]
                }
                (None, None) => break,
            };
            acc += points[j].w;
        }
        radii.push((radius, pi.w));
    }
    weighted_lower_median(&mut radii)
}

/// Spatial counterpart of [`knn_bandwidth_time`]: neighbours are gathered
/// ring by ring from a uniform grid until the rings already searched cover
/// the required weight, then resolved exactly.
fn knn_bandwidth_space(points: &[SupportPoint], k: f64) -> f64 {
    let total: f64 = points.iter().map(|p| p.w).sum();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in points {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let side = ((points.len() as f64 / 4.0).sqrt().ceil() as usize).max(1);
    let h = ((x1 - x0).max(y1 - y0) / side as f64).max(f64::MIN_POSITIVE);
    let cell_of = |v: f64, lo: f64| (((v - lo) / h) as usize).min(side - 1);
    let mut cells: Vec<Vec<usize>> = vec![Vec::new(); side * side];
    for (j, p) in points.iter().enumerate() {
        cells[cell_of(p.y, y0) * side + cell_of(p.x, x0)].push(j);
    }
    let mut candidates: Vec<(f64, f64)> = Vec::new();
    let mut radii: Vec<(f64, f64)> = Vec::with_capacity(points.len());
    for (i, pi) in points.iter().enumerate() {
        let target = k.min(total - pi.w) * (1.0 - 1e-12);
        if target <= 0.0 {
            continue;
        }
        let (cx, cy) = (cell_of(pi.x, x0) as isize, cell_of(pi.y, y0) as isize);
        candidates.clear();
        let mut ring = 0isize;
        loop {
            for gy in (cy - ring)..=(cy + ring) {
                for gx in (cx - ring)..=(cx + ring) {
                    let on_ring = (gy - cy).abs() == ring || (gx - cx).abs() == ring;
                    if !on_ring || gx < 0 || gy < 0 || gx >= side as isize || gy >= side as isize {
                        continue;
                    }
                    for &j in &cells[gy as usize * side + gx as usize] {
                        if j != i {
                            let pj = &points[j];
                            candidates.push(((pi.x - pj.x).hypot(pi.y - pj.y), pj.w));
                        }
                    }
                }
            }
            let covered = ring as f64 * h;
            let everything = ring as usize >= side;
            let within: f64 = candidates.iter().filter(|c| c.0 <= covered).map(|c| c.1).sum();
            if everything || within >= target {
                break;
            }
            ring += 1;
        }
        radii.push((weighted_select(&mut candidates, target), pi.w));
    }
    weighted_lower_median(&mut radii)
}

/// Smallest distance at which the accumulated weight of `items` reaches
/// `target` (expected linear time, deterministic pivoting).
fn weighted_select(items: &mut [(f64, f64)], mut target: f64) -> f64 {
    let mut lo = 0;
    let mut hi = items.len();
    let mut best = f64::NAN;
    while lo < hi {
        let slice = &mut items[lo..hi];
        let pivot = slice[slice.len() / 2].0;
        let (mut lt, mut i, mut gt) = (0, 0, slice.len());
        while i < gt {
            if slice[i].0 < pivot {
                slice.swap(lt, i);
                lt += 1;
                i += 1;
            } else if slice[i].0 > pivot {
                gt -= 1;
                slice.swap(i, gt);
            } else {
                i += 1;
            }
        }
        let w_lt: f64 = slice[..lt].iter().map(|p| p.1).sum();
        if w_lt >= target {
            hi = lo + lt;
            continue;
        }
        let w_eq: f64 = slice[lt..gt].iter().map(|p| p.1).sum();
        best = pivot;
        if w_lt + w_eq >= target {
            return pivot;
        }
        target -= w_lt + w_eq;
        lo += gt;
    }
    // Only reachable when rounding leaves the target marginally above the
    // total weight: the farthest pivot seen is the answer.
    best
}

fn weighted_lower_median(values: &mut [(f64, f64)]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = values.iter().map(|v| v.1).sum();
    let half = 0.5 * total;
    let mut acc = 0.0;
    for &(v, w) in values.iter() {
        acc += w;
        if acc >= half * (1.0 - 1e-12) {
            return v;
        }
    }
    values[values.len() - 1].0
}

fn cv_bandwidth(
    points: &[SupportPoint],
    base: f64,
    dist_sq: impl Fn(&SupportPoint, &SupportPoint) -> f64,
    dim: i32,
) -> f64 {
    let mut best = (f64::NEG_INFINITY, base);
    for m in CV_MULTIPLIERS {
        let b = base * m;
        let inv = 1.0 / (2.0 * b * b);
        let norm = (2.0 * PI * b * b).powf(f64::from(dim) / 2.0);
        let mut score = 0.0;
        for (i, pi) in points.iter().enumerate() {
            let mut acc = 0.0;
            let mut w_other = 0.0;
            for (j, pj) in points.iter().enumerate() {
                if i != j {
                    acc += pj.w * (-dist_sq(pi, pj) * inv).exp();
                    w_other += pj.w;
                }
            }
            let f = acc / (norm * w_other);
            score += pi.w * f.max(f64::MIN_POSITIVE).ln();
        }
        if score > best.0 {
            best = (score, b);
        }
    }
    best.1
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(t: f64, x: f64, y: f64, w: f64) -> SupportPoint {
        SupportPoint { t, x, y, w }
    }

    #[test]
    fn trigger_peak_closed_form() {
        let p = TriggerParams::new(0.9, 0.1, 0.01).unwrap();
        let g = trigger_density(0.0, 0.0, 1e-300, &p).unwrap();
        let expected = 0.9 * 0.1 / (2.0 * PI * 1e-4);
        assert!((g - expected).abs() / expected < 1e-12);
        assert!((g - 143.239_448_782_705_8).abs() < 1e-9);
    }

    #[test]
    fn trigger_is_causal_and_vanishes_with_k0() {
        let p = TriggerParams::new(0.9, 0.1, 0.01).unwrap();
        assert_eq!(trigger_density(0.0, 0.0, -1.0, &p).unwrap(), 0.0);
        assert_eq!(trigger_density(0.3, -0.2, 0.0, &p).unwrap(), 0.0);
        let zero = TriggerParams::new(0.0, 0.1, 0.01).unwrap();
        for (dx, dy, dt) in [(0.0, 0.0, 1.0), (0.01, 0.0, 0.1), (1.0, 1.0, 100.0)] {
            assert_eq!(trigger_density(dx, dy, dt, &zero).unwrap(), 0.0);
        }
        assert!(trigger_density(f64::NAN, 0.0, 1.0, &p).is_err());
    }

    #[test]
    fn trigger_mass_identities() {
        let p = TriggerParams::new(0.8, 0.5, 0.1).unwrap();
        assert!((trigger_mass(1e9 / p.omega, &p).unwrap() - 0.8).abs() < 1e-12);
        assert!((trigger_mass(std::f64::consts::LN_2 / p.omega, &p).unwrap() - 0.4).abs() < 1e-12);
        assert_eq!(trigger_mass(0.0, &p).unwrap(), 0.0);
        assert!(trigger_mass(-1.0, &p).is_err());
    }

    #[test]
    fn rejects_bad_trigger_params() {
        assert!(TriggerParams::new(-0.1, 1.0, 1.0).is_err());
        assert!(TriggerParams::new(0.5, 0.0, 1.0).is_err());
        assert!(TriggerParams::new(0.5, 1.0, 0.0).is_err());
        assert!(TriggerParams::new(1.5, 1.0, 1.0).is_ok());
    }

    #[test]
    fn kde_singleton_left_out_is_zero() {
        let bg = KdeBackground::new(vec![pt(1.0, 0.2, 0.3, 1.0)], 0.5, 0.1).unwrap();
        assert_eq!(bg.kde_time(1.0, Some(0)).unwrap(), 0.0);
        assert_eq!(bg.kde_space(0.2, 0.3, Some(0)).unwrap(), 0.0);
    }

    #[test]
    fn kde_time_two_points_by_hand() {
        let b1 = 0.7;
        let bg = KdeBackground::new(vec![pt(0.0, 0.0, 0.0, 1.0), pt(b1, 0.0, 0.0, 1.0)], b1, 1.0).unwrap();
        let expected = 0.5 * (1.0 / ((2.0 * PI).sqrt() * b1)) * (-0.5f64).exp();
        assert!((bg.kde_time(0.0, Some(0)).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn kde_space_peak() {
        let b2 = 0.05;
        let bg = KdeBackground::new(vec![pt(0.0, 0.4, 0.6, 1.0)], 1.0, b2).unwrap();
        let expected = 1.0 / (2.0 * PI * b2 * b2);
        assert!((bg.kde_space(0.4, 0.6, None).unwrap() - expected).abs() / expected < 1e-14);
    }

    #[test]
    fn kde_without_mass_errors() {
        let bg = KdeBackground::new(vec![pt(0.0, 0.0, 0.0, 0.0)], 1.0, 1.0).unwrap();
        assert!(matches!(bg.kde_time(0.0, None), Err(Error::NoBackgroundMass)));
        assert!(matches!(bg.kde_space(0.0, 0.0, None), Err(Error::NoBackgroundMass)));
    }

    fn brute_knn(points: &[SupportPoint], k: f64, dist: impl Fn(&SupportPoint, &SupportPoint) -> f64) -> f64 {
        let total: f64 = points.iter().map(|p| p.w).sum();
        let mut radii = Vec::new();
        for (i, pi) in points.iter().enumerate() {
            let target = k.min(total - pi.w) * (1.0 - 1e-12);
            if target <= 0.0 {
                continue;
            }
            let mut d: Vec<(f64, f64)> =
                points.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, pj)| (dist(pi, pj), pj.w)).collect();
            d.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut acc = 0.0;
            let mut r = d.last().map_or(0.0, |x| x.0);
            for (dist, w) in d {
                acc += w;
                if acc >= target {
                    r = dist;
                    break;
                }
            }
            radii.push((r, pi.w));
        }
        weighted_lower_median(&mut radii)
    }

    #[test]
    fn local_knn_matches_exhaustive_search() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(17);
        for case in 0..40 {
            let n = rng.random_range(2..300);
            let points: Vec<SupportPoint> = (0..n)
                .map(|_| {
                    // Coarse coordinates force ties.
                    let q = |v: f64| if case % 2 == 0 { (v * 20.0).round() / 20.0 } else { v };
                    pt(q(rng.random::<f64>() * 100.0), q(rng.random()), q(rng.random()), rng.random::<f64>())
                })
                .collect();
            for k in [1.0, 3.0, 15.0] {
                let bt = brute_knn(&points, k, |a, b| (a.t - b.t).abs());
                let bs = brute_knn(&points, k, |a, b| (a.x - b.x).hypot(a.y - b.y));
                assert!((knn_bandwidth_time(&points, k) - bt).abs() <= 1e-12 * bt.max(1.0), "case {case} k {k}");
                assert!((knn_bandwidth_space(&points, k) - bs).abs() <= 1e-12 * bs.max(1.0), "case {case} k {k}");
            }
        }
    }

    #[test]
    fn bounded_kde_integrates_to_one_on_its_window() {
        let w = Window::new(0.0, 10.0, 0.0, 1.0, 0.0, 2.0).unwrap();
        let points = vec![pt(0.5, 0.1, 0.1, 1.0), pt(9.0, 0.9, 1.9, 2.0), pt(5.0, 0.5, 1.0, 0.5)];
        let kde = KdeBackground::bounded(points, 4.0, 0.8, w).unwrap();
        assert!((kde.time_mass(0.0, 10.0).unwrap() - 1.0).abs() < 1e-12);
        // Midpoint rule over the spatial rectangle.
        let m = 400;
        let (hx, hy) = (1.0 / m as f64, 2.0 / m as f64);
        let mut s = 0.0;
        for a in 0..m {
            for b in 0..m {
                s += kde.kde_space((a as f64 + 0.5) * hx, (b as f64 + 0.5) * hy, None).unwrap() * hx * hy;
            }
        }
        assert!((s - 1.0).abs() < 1e-4, "{s}");
    }

    #[test]
    fn time_mass_matches_full_line() {
        let bg = KdeBackground::new(vec![pt(3.0, 0.0, 0.0, 2.0), pt(5.0, 0.0, 0.0, 1.0)], 0.5, 1.0).unwrap();
        assert!((bg.time_mass(-100.0, 100.0).unwrap() - 1.0).abs() < 1e-14);
        // Half of the first point's kernel lies left of its centre.
        let left = bg.time_mass(-100.0, 3.0).unwrap();
        // The second point, 4 bandwidths away, leaves Φ(−4) of its mass there.
        let phi_m4 = 3.167_124_183_311_992e-5;
        assert!((left - (2.0 / 3.0 * 0.5 + phi_m4 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn bandwidth_two_points_caps_k() {
        let cfg = BandwidthConfig::default();
        let pts = [pt(1.0, 0.0, 0.0, 1.0), pt(3.5, 0.3, 0.4, 1.0)];
        let (b1, b2) = select_bandwidths(&pts, &cfg).unwrap();
        assert_eq!(b1, 2.5);
        assert!((b2 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn bandwidth_identical_points_hit_floor() {
        let cfg = BandwidthConfig {
            floor_time: 1e-3,
            floor_space: 2e-3,
            ..Default::default()
        };
        let pts = [pt(1.0, 0.5, 0.5, 1.0), pt(1.0, 0.5, 0.5, 1.0)];
        assert_eq!(select_bandwidths(&pts, &cfg).unwrap(), (1e-3, 2e-3));
    }

    #[test]
    fn bandwidth_needs_two_weighted_points() {
        let cfg = BandwidthConfig::default();
        assert!(select_bandwidths(&[pt(0.0, 0.0, 0.0, 1.0)], &cfg).is_err());
        let pts = [pt(0.0, 0.0, 0.0, 1.0), pt(1.0, 0.0, 0.0, 0.0)];
        assert!(select_bandwidths(&pts, &cfg).is_err());
    }

    #[test]
    fn weighted_select_matches_sorted_scan() {
        let mut items: Vec<(f64, f64)> = (0..40)
            .map(|i| (((i * 37) % 41) as f64 * 0.1, 0.25 + (i % 3) as f64))
            .collect();
        let mut sorted = items.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        for target in [0.1, 1.0, 7.3, 20.0, 45.0] {
            let mut acc = 0.0;
            let expected = sorted
                .iter()
                .find(|p| {
                    acc += p.1;
                    acc >= target
                })
                .unwrap()
                .0;
            assert_eq!(weighted_select(&mut items, target), expected);
        }
    }

    #[test]
    fn cross_validation_strategy_returns_positive_bandwidths() {
        let pts: Vec<SupportPoint> = (0..30)
            .map(|i| {
                let f = i as f64;
                pt(f * 1.3 % 17.0, (f * 0.137) % 1.0, (f * 0.291) % 1.0, 1.0)
            })
            .collect();
        let cfg = BandwidthConfig {
            strategy: BandwidthStrategy::CrossValidation { k: 5 },
            ..Default::default()
        };
        let (b1, b2) = select_bandwidths(&pts, &cfg).unwrap();
        assert!(b1 > 0.0 && b2 > 0.0);
    }
}
