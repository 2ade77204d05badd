//! Scoring fitted models: observed-data log-likelihood, AIC, daily grid
//! hotspot forecasts and the pooled AUC of their ranking.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{MarkedDataset, Source, Window};
use crate::em::FittedModel;
use crate::kernels::{Background, Truncation};
use crate::{Error, Result};

/// Which events are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subset {
    A,
    B,
    All,
}

impl Subset {
    pub fn contains(self, source: Source) -> bool {
        match self {
            Subset::All => true,
            Subset::A => source == Source::A,
            Subset::B => source == Source::B,
        }
    }

    /// Fraction of group `k`'s events that fall in this subset.
    fn thinning(self, unlabeled_share: f64) -> f64 {
        match self {
            Subset::All => 1.0,
            Subset::A => unlabeled_share,
            Subset::B => 1.0 - unlabeled_share,
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Subset::A => "A",
            Subset::B => "B",
            Subset::All => "all",
        })
    }
}

impl FromStr for Subset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Subset::A),
            "B" | "b" => Ok(Subset::B),
            "all" | "ALL" | "All" => Ok(Subset::All),
            other => Err(Error::invalid("subset", format!("expected A, B or all, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalConfig {
    pub truncation: Truncation,
    /// Intensity floor; `None` uses `1e-12 · N / window volume`.
    pub epsilon_lambda: Option<f64>,
}

impl EvalConfig {
    fn floor(&self, n: usize, window: &Window) -> f64 {
        self.epsilon_lambda.unwrap_or(1e-12 * n.max(1) as f64 / window.volume())
    }
}

/// Weight `w_j(k)` of each history event as a parent in group `k`.
fn parent_weights(dataset: &MarkedDataset, model: &FittedModel) -> Result<Vec<Vec<f64>>> {
    let k = model.k();
    let events = dataset.events();
    if k == 1 {
        return Ok(vec![vec![1.0; events.len()]]);
    }
    let by_id: HashMap<u64, &[f64]> = model
        .assignments
        .iter()
        .flatten()
        .map(|a| (a.id, a.responsibilities.as_slice()))
        .collect();
    let mut weights = vec![vec![0.0; events.len()]; k];
    for (j, e) in events.iter().enumerate() {
        match e.mark {
            Some(m) if m < k => weights[m][j] = 1.0,
            Some(m) => {
                return Err(Error::InvalidInput(format!("event {} has mark {m} but the model has {k} groups", e.id)))
            }
            None => {
                let r = by_id.get(&e.id).filter(|r| r.len() == k).ok_or_else(|| {
                    Error::InvalidInput(format!("event {} has no mark and no responsibilities", e.id))
                })?;
                for g in 0..k {
                    weights[g][j] = r[g];
                }
            }
        }
    }
    Ok(weights)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Loglik {
    pub value: f64,
    /// Intensities that fell below the floor.
    pub floored: usize,
}

/// Observed-data log-likelihood of the `subset` events of `dataset` over
/// `window`, every event of `dataset` acting as history.
///
/// Group `k`'s intensity is thinned by the share of its events in the subset.
/// A labeled scored event contributes `log(π^m λ^m)`, an unlabeled one
/// `log Σ_k π^k λ^k`; the compensator is
/// `Σ_k π^k [μ^k ∫v^k + Σ_j w_j(k) K^k (e^{−ω(t0−t_j)⁺} − e^{−ω(T−t_j)})]`.
pub fn observed_loglik(
    dataset: &MarkedDataset,
    model: &FittedModel,
    window: &Window,
    subset: Subset,
    cfg: &EvalConfig,
) -> Result<Loglik> {
    let k = model.k();
    if k == 0 {
        return Err(Error::InvalidInput("model has no groups".into()));
    }
    let events = dataset.events();
    let weights = parent_weights(dataset, model)?;
    let eps = cfg.floor(events.len(), window);
    let pi: Vec<f64> = model.groups.iter().map(|g| subset.thinning(g.unlabeled_share)).collect();
    let loo: Vec<_> = model.groups.iter().map(|g| g.background.loo_index(events)).collect();
    let horizons: Vec<f64> = model.groups.iter().map(|g| cfg.truncation.time_horizon(&g.trigger)).collect();
    let radii: Vec<f64> = model.groups.iter().map(|g| cfg.truncation.radius_sq(&g.trigger)).collect();
    let horizon = horizons.iter().cloned().fold(0.0, f64::max);

    let terms: Vec<(f64, bool)> = (0..events.len())
        .into_par_iter()
        .filter(|&i| {
            let e = &events[i];
            subset.contains(e.source) && window.contains_time(e.t)
        })
        .map(|i| {
            let e = &events[i];
            let groups: Vec<usize> = match e.mark {
                _ if k == 1 => vec![0],
                Some(m) => vec![m],
                None => (0..k).collect(),
            };
            let mut lambda = 0.0;
            for &g in &groups {
                let model_g = &model.groups[g];
                let mut lg = if model_g.mu0 > 0.0 {
                    model_g.mu0 * model_g.background.density(e.t, e.x, e.y, loo[g].index(i))
                } else {
                    0.0
                };
                let trig = &model_g.trigger;
                if trig.k0 > 0.0 {
                    for j in (0..i).rev() {
                        let p = &events[j];
                        let dt = e.t - p.t;
                        if dt > horizon {
                            break;
                        }
                        let w = weights[g][j];
                        if dt <= 0.0 || dt > horizons[g] || w == 0.0 {
                            continue;
                        }
                        let (dx, dy) = (e.x - p.x, e.y - p.y);
                        if dx * dx + dy * dy > radii[g] {
                            continue;
                        }
                        lg += w * trig.density(dx, dy, dt);
                    }
                }
                lambda += pi[g] * lg;
            }
            if lambda >= eps {
                (lambda.ln(), false)
            } else {
                (eps.ln(), true)
            }
        })
        .collect();

    let mut value: f64 = terms.iter().map(|t| t.0).sum();
    let floored = terms.iter().filter(|t| t.1).count();
    for (g, group) in model.groups.iter().enumerate() {
        if pi[g] == 0.0 {
            continue;
        }
        let mut integral = group.mu0 * group.background.time_coverage(window);
        let trig = &group.trigger;
        if trig.k0 > 0.0 {
            for (j, e) in events.iter().enumerate() {
                if e.t >= window.t1 || weights[g][j] == 0.0 {
                    continue;
                }
                let start = (window.t0 - e.t).max(0.0);
                let end = window.t1 - e.t;
                integral += weights[g][j] * trig.k0 * ((-trig.omega * start).exp() - (-trig.omega * end).exp());
            }
        }
        value -= pi[g] * integral;
    }
    if floored > 0 {
        log::warn!("{floored} intensities below the floor {eps:e} while scoring");
    }
    Ok(Loglik { value, floored })
}

/// `2·df − 2·loglik`.
pub fn aic(loglik: f64, df: usize) -> f64 {
    2.0 * df as f64 - 2.0 * loglik
}

/// Free scalar parameters of a model: `(K0, ω, σ, μ0)` per group.
pub fn degrees_of_freedom(model: &FittedModel) -> usize {
    4 * model.k()
}

/// Each group's `K0` and whether it is subcritical.
pub fn branching_ratio(model: &FittedModel) -> Vec<(f64, bool)> {
    model.groups.iter().map(|g| (g.trigger.k0, g.trigger.is_subcritical())).collect()
}

/// Area under the ROC curve of `scores` against `labels`, counting ties as
/// half. The pairs are counted exactly in integers.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::InvalidInput(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite score {s}")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.par_sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut neg_below, mut greater, mut ties) = (0u128, 0u128, 0u128);
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        let (mut pos, mut neg) = (0u128, 0u128);
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            if labels[order[end]] {
                pos += 1;
            } else {
                neg += 1;
            }
            end += 1;
        }
        greater += pos * neg_below;
        ties += pos * neg;
        neg_below += neg;
        start = end;
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u128;
    let n_neg = labels.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::DegenerateLabels);
    }
    Ok((2 * greater + ties) as f64 / (2 * n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScoreMode {
    /// Intensity at the cell centre at the start of the day.
    DayStart,
    /// Intensity at the cell centre integrated over the day.
    DayIntegrated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastOptions {
    pub grid: usize,
    pub day_length: f64,
    /// Start of the first forecast day; `None` uses the window start.
    pub first_day: Option<f64>,
    /// Forecast days must end by this time; `None` uses the window end.
    pub last_day: Option<f64>,
    pub mode: ScoreMode,
    pub truncation: Truncation,
}

impl Default for ForecastOptions {
    fn default() -> Self {
        Self {
            grid: 50,
            day_length: 1.0,
            first_day: None,
            last_day: None,
            mode: ScoreMode::DayStart,
            truncation: Truncation::default(),
        }
    }
}

/// Scores and next-day labels of a `G × G` grid; cell `(cx, cy)` is stored
/// at `cy * G + cx`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridForecast {
    pub day: f64,
    pub grid: usize,
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
}

/// Grid forecaster with the per-cell background densities precomputed.
pub struct Forecaster<'a> {
    model: &'a FittedModel,
    history: &'a MarkedDataset,
    subset: Subset,
    opts: ForecastOptions,
    window: Window,
    weights: Vec<Vec<f64>>,
    pi: Vec<f64>,
    /// `u^k` at each cell centre.
    space: Vec<Vec<f64>>,
}

fn space_density(bg: &Background, x: f64, y: f64) -> f64 {
    match bg {
        Background::Kde(kde) => kde.kde_space(x, y, None).unwrap_or(0.0),
        Background::Uniform(w) => {
            if (w.x0..=w.x1).contains(&x) && (w.y0..=w.y1).contains(&y) {
                1.0 / w.area()
            } else {
                0.0
            }
        }
    }
}

fn time_density(bg: &Background, t: f64) -> f64 {
    match bg {
        Background::Kde(kde) => kde.kde_time(t, None).unwrap_or(0.0),
        Background::Uniform(w) => {
            if w.contains_time(t) {
                1.0 / w.duration()
            } else {
                0.0
            }
        }
    }
}

fn time_mass(bg: &Background, t0: f64, t1: f64) -> f64 {
    match bg {
        Background::Kde(kde) => kde.time_mass(t0, t1).unwrap_or(0.0),
        Background::Uniform(w) => ((t1.min(w.t1) - t0.max(w.t0)) / w.duration()).max(0.0),
    }
}

impl<'a> Forecaster<'a> {
    /// The grid covers the spatial extent of `history`'s window.
    pub fn new(model: &'a FittedModel, history: &'a MarkedDataset, subset: Subset, opts: ForecastOptions) -> Result<Self> {
        if opts.grid == 0 {
            return Err(Error::invalid("grid", "must be >= 1"));
        }
        if !(opts.day_length > 0.0 && opts.day_length.is_finite()) {
            return Err(Error::invalid("day_length", "must be > 0"));
        }
        let window = *history.window();
        let weights = parent_weights(history, model)?;
        let pi = model.groups.iter().map(|g| subset.thinning(g.unlabeled_share)).collect();
        let g = opts.grid;
        let centres: Vec<(f64, f64)> = (0..g * g)
            .map(|c| Self::centre_of(&window, g, c % g, c / g))
            .collect();
        let space = model
            .groups
            .iter()
            .map(|grp| centres.par_iter().map(|&(x, y)| space_density(&grp.background, x, y)).collect())
            .collect();
        Ok(Self {
            model,
            history,
            subset,
            opts,
            window,
            weights,
            pi,
            space,
        })
    }

    fn centre_of(window: &Window, g: usize, cx: usize, cy: usize) -> (f64, f64) {
        let w = (window.x1 - window.x0) / g as f64;
        let h = (window.y1 - window.y0) / g as f64;
        (window.x0 + (cx as f64 + 0.5) * w, window.y0 + (cy as f64 + 0.5) * h)
    }

    fn cell_of(&self, x: f64, y: f64) -> Option<usize> {
        let g = self.opts.grid;
        let w = &self.window;
        if !(w.x0..=w.x1).contains(&x) || !(w.y0..=w.y1).contains(&y) {
            return None;
        }
        let cx = (((x - w.x0) / (w.x1 - w.x0) * g as f64) as usize).min(g - 1);
        let cy = (((y - w.y0) / (w.y1 - w.y0) * g as f64) as usize).min(g - 1);
        Some(cy * g + cx)
    }

    /// Start times of every forecast day.
    pub fn days(&self) -> Vec<f64> {
        let first = self.opts.first_day.unwrap_or(self.window.t0);
        let last = self.opts.last_day.unwrap_or(self.window.t1);
        let mut out = Vec::new();
        let mut i = 0u64;
        loop {
            let d = first + i as f64 * self.opts.day_length;
            if d + self.opts.day_length > last + 1e-9 * self.opts.day_length {
                break;
            }
            out.push(d);
            i += 1;
        }
        out
    }

    /// Scores at the start of `day` given the history strictly before it,
    /// with labels from the subset's events during the day.
    pub fn day(&self, day: f64) -> GridForecast {
        let g = self.opts.grid;
        let len = self.opts.day_length;
        let mut scores = vec![0.0; g * g];
        let events = self.history.events();
        let end = events.partition_point(|e| e.t < day);
        for (k, grp) in self.model.groups.iter().enumerate() {
            if self.pi[k] == 0.0 {
                continue;
            }
            let temporal = match self.opts.mode {
                ScoreMode::DayStart => time_density(&grp.background, day),
                ScoreMode::DayIntegrated => time_mass(&grp.background, day, day + len),
            };
            let bg = self.pi[k] * grp.mu0 * temporal;
            for (s, u) in scores.iter_mut().zip(&self.space[k]) {
                *s += bg * u;
            }
            let trig = &grp.trigger;
            if trig.k0 <= 0.0 {
                continue;
            }
            let horizon = self.opts.truncation.time_horizon(trig);
            let radius = self.opts.truncation.radius_sq(trig).sqrt();
            let s2 = trig.sigma * trig.sigma;
            let spatial_norm = 1.0 / (2.0 * std::f64::consts::PI * s2);
            let cw = (self.window.x1 - self.window.x0) / g as f64;
            let ch = (self.window.y1 - self.window.y0) / g as f64;
            for j in (0..end).rev() {
                let p = &events[j];
                let dt = day - p.t;
                if dt > horizon {
                    break;
                }
                let w = self.weights[k][j];
                if w == 0.0 || dt <= 0.0 {
                    continue;
                }
                let temporal = match self.opts.mode {
                    ScoreMode::DayStart => trig.omega * (-trig.omega * dt).exp(),
                    ScoreMode::DayIntegrated => (-trig.omega * dt).exp() * -(-trig.omega * len).exp_m1(),
                };
                let amp = self.pi[k] * w * trig.k0 * temporal * spatial_norm;
                let span = |lo: f64, c: f64, size: f64| {
                    let a = ((c - radius - lo) / size - 0.5).ceil().max(0.0);
                    let b = ((c + radius - lo) / size - 0.5).floor().min(g as f64 - 1.0);
                    (a, b)
                };
                let (x_lo, x_hi) = span(self.window.x0, p.x, cw);
                let (y_lo, y_hi) = span(self.window.y0, p.y, ch);
                if x_lo > x_hi || y_lo > y_hi {
                    continue;
                }
                for cy in y_lo as usize..=y_hi as usize {
                    for cx in x_lo as usize..=x_hi as usize {
                        let (x, y) = Self::centre_of(&self.window, g, cx, cy);
                        let d2 = (x - p.x).powi(2) + (y - p.y).powi(2);
                        if d2 <= radius * radius {
                            scores[cy * g + cx] += amp * (-d2 / (2.0 * s2)).exp();
                        }
                    }
                }
            }
        }
        let mut labels = vec![false; g * g];
        for e in &events[end..] {
            if e.t >= day + len {
                break;
            }
            if self.subset.contains(e.source) {
                if let Some(c) = self.cell_of(e.x, e.y) {
                    labels[c] = true;
                }
            }
        }
        GridForecast {
            day,
            grid: g,
            scores,
            labels,
        }
    }

    /// Forecasts for every day in range, in order.
    pub fn all_days(&self) -> Vec<GridForecast> {
        self.days().into_par_iter().map(|d| self.day(d)).collect()
    }
}

/// Forecast for a single day.
pub fn grid_forecast(
    model: &FittedModel,
    history: &MarkedDataset,
    day: f64,
    subset: Subset,
    opts: ForecastOptions,
) -> Result<GridForecast> {
    Ok(Forecaster::new(model, history, subset, opts)?.day(day))
}

/// AUC pooled over all (day, cell) pairs.
pub fn pooled_auc(forecasts: &[GridForecast]) -> Result<f64> {
    let scores: Vec<f64> = forecasts.iter().flat_map(|f| f.scores.iter().copied()).collect();
    let labels: Vec<bool> = forecasts.iter().flat_map(|f| f.labels.iter().copied()).collect();
    auc(&scores, &labels)
}

/// A model to score, with the events it conditions on.
#[derive(Debug, Clone, Copy)]
pub struct ModelEntry<'a> {
    pub name: &'a str,
    pub model: &'a FittedModel,
    pub history: &'a MarkedDataset,
    pub subsets: &'a [Subset],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoreRow {
    pub model: String,
    pub subset: Subset,
    pub loglik: f64,
    pub df: usize,
    pub aic: f64,
    /// Present when a forecast was requested.
    pub auc: Option<f64>,
}

/// Log-likelihood, AIC and (optionally) forecast AUC for every model and
/// each of its subsets, all over `window`.
pub fn compare_models(
    entries: &[ModelEntry<'_>],
    window: &Window,
    cfg: &EvalConfig,
    forecast: Option<&ForecastOptions>,
) -> Result<Vec<ScoreRow>> {
    let mut rows = Vec::new();
    for entry in entries {
        let df = degrees_of_freedom(entry.model);
        for &subset in entry.subsets {
            let ll = observed_loglik(entry.history, entry.model, window, subset, cfg)?;
            let auc = match forecast {
                Some(opts) => Some(pooled_auc(&Forecaster::new(entry.model, entry.history, subset, *opts)?.all_days())?),
                None => None,
            };
            rows.push(ScoreRow {
                model: entry.name.to_string(),
                subset,
                loglik: ll.value,
                df,
                aic: aic(ll.value, df),
                auc,
            });
        }
    }
    Ok(rows)
}

/// Writes `model,subset,loglik,df,aic,auc`; a missing AUC is left empty.
pub fn write_report<W: std::io::Write>(rows: &[ScoreRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::InvalidInput(format!("writing report: {e}"));
    w.write_record(["model", "subset", "loglik", "df", "aic", "auc"]).map_err(io)?;
    for r in rows {
        w.write_record([
            r.model.clone(),
            r.subset.to_string(),
            r.loglik.to_string(),
            r.df.to_string(),
            r.aic.to_string(),
            r.auc.map(|a| a.to_string()).unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io("<report writer>", e))?;
    Ok(())
}

/// Writes `day,cell_x,cell_y,score,label` for every cell of every forecast.
pub fn write_forecasts<W: std::io::Write>(forecasts: &[GridForecast], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::InvalidInput(format!("writing forecast: {e}"));
    w.write_record(["day", "cell_x", "cell_y", "score", "label"]).map_err(io)?;
    for f in forecasts {
        for (c, (s, l)) in f.scores.iter().zip(&f.labels).enumerate() {
            w.write_record([
                f.day.to_string(),
                (c % f.grid).to_string(),
                (c / f.grid).to_string(),
                s.to_string(),
                u8::from(*l).to_string(),
            ])
            .map_err(io)?;
        }
    }
    w.flush().map_err(|e| Error::io("<forecast writer>", e))?;
    Ok(())
}
