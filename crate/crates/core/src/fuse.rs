//! Multi-group EM over a merged dataset in which some events carry a group
//! label (source `B`) and the rest do not (source `A`).
//!
//! Each group has its own triggering parameters and background. An unlabeled
//! event's branching row is normalized jointly over all groups, so its row
//! mass in group `k` is the responsibility `rᵢ(k)`. A labeled event only
//! ever belongs to its own group. Triggering is block-diagonal: an unlabeled
//! parent contributes to group `k` in proportion to its current `r_j(k)`.

use rayon::prelude::*;

use crate::data::{MarkedDataset, Source};
use crate::em::{
    background_table, group_objective, m_step_with, relative_change, warm_start_rows, BranchingPosteriorSingle, ConvergenceTrace,
    FitConfig, FitContext, FittedModel, GroupParams, MarkAssignment,
};
use crate::kernels::TriggerParams;
use crate::{Error, Result};

/// One sparse branching matrix per group.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchingPosteriorMulti {
    pub groups: Vec<BranchingPosteriorSingle>,
}

impl BranchingPosteriorMulti {
    pub fn k(&self) -> usize {
        self.groups.len()
    }

    pub fn len(&self) -> usize {
        self.groups.first().map_or(0, |g| g.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `rᵢ(k) = p^k_ii + Σ_j p^k_ij`.
    pub fn responsibility(&self, i: usize, k: usize) -> f64 {
        self.groups[k].row_sum(i)
    }

    pub fn responsibilities(&self, i: usize) -> Vec<f64> {
        (0..self.k()).map(|k| self.responsibility(i, k)).collect()
    }

    /// Estimated number of events per group, `Σᵢ rᵢ(k)`.
    pub fn group_sizes(&self) -> Vec<f64> {
        self.groups.iter().map(|g| g.total_mass()).collect()
    }

    /// Largest deviation of a full row from 1, summed over groups.
    pub fn max_row_error(&self) -> f64 {
        (0..self.len())
            .map(|i| ((0..self.k()).map(|k| self.responsibility(i, k)).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Diagonal start: `1/K` in every group for unlabeled events, 1 in the own
/// group for labeled ones, no triggering entries.
pub fn init_posteriors(dataset: &MarkedDataset, k: usize) -> Result<BranchingPosteriorMulti> {
    if k == 0 {
        return Err(Error::invalid("K", "must be >= 1"));
    }
    let n = dataset.len();
    let mut groups = vec![BranchingPosteriorSingle::zeros(n); k];
    for (i, e) in dataset.events().iter().enumerate() {
        match (e.source, e.mark) {
            (Source::B, Some(m)) if m < k => groups[m].background[i] = 1.0,
            (Source::B, m) => {
                return Err(Error::InvalidInput(format!(
                    "event {} has mark {:?} outside 0..{k}",
                    e.id, m
                )))
            }
            (Source::A, _) => {
                for g in &mut groups {
                    g.background[i] = 1.0 / k as f64;
                }
            }
        }
    }
    Ok(BranchingPosteriorMulti { groups })
}

/// Starting posterior of [`fit_fused`]. The diagonal start alone is a fixed
/// point without triggering, so half of each group's row mass is spread over
/// nearby predecessors, weighted by their own initial group mass.
pub fn warm_start_multi(dataset: &MarkedDataset, cfg: &FitConfig) -> Result<BranchingPosteriorMulti> {
    warm_start_with(dataset, &FitContext::new(dataset, cfg))
}

fn warm_start_with(dataset: &MarkedDataset, ctx: &FitContext) -> Result<BranchingPosteriorMulti> {
    let diagonal = init_posteriors(dataset, dataset.k())?;
    Ok(BranchingPosteriorMulti {
        groups: diagonal
            .groups
            .iter()
            .map(|g| warm_start_rows(dataset, ctx, &g.background, &g.background))
            .collect(),
    })
}

/// Parent weights `w_j(k)`: the label indicator for labeled events and the
/// responsibility under `prev` for unlabeled ones. With one group every
/// weight is exactly 1.
fn parent_weights(dataset: &MarkedDataset, k: usize, prev: &BranchingPosteriorMulti) -> Vec<Vec<f64>> {
    let events = dataset.events();
    (0..k)
        .map(|g| {
            events
                .iter()
                .enumerate()
                .map(|(j, e)| match (k, e.source, e.mark) {
                    (1, _, _) => 1.0,
                    (_, Source::B, Some(m)) => f64::from(u8::from(m == g)),
                    _ => prev.responsibility(j, g),
                })
                .collect()
        })
        .collect()
}

/// Joint E-step. Unlabeled rows are normalized across all groups, labeled
/// rows within their own group; `p^k_ii` includes `μ^k_0` for both.
/// Returns the posterior and the number of events whose total intensity fell
/// below the floor.
pub fn e_step_multi(
    dataset: &MarkedDataset,
    models: &[GroupParams],
    prev: &BranchingPosteriorMulti,
    cfg: &FitConfig,
) -> Result<(BranchingPosteriorMulti, usize)> {
    let ctx = FitContext::new(dataset, cfg);
    let tables = background_tables(dataset, models);
    e_step_multi_with(dataset, models, prev, &ctx, &tables)
}

struct Row {
    background: Vec<f64>,
    parents: Vec<Vec<(usize, f64)>>,
    low: bool,
    zero: bool,
}

/// Background tables `μ0^k u^k v^k` at every event admissible for group `k`.
fn background_tables(dataset: &MarkedDataset, models: &[GroupParams]) -> Vec<Vec<f64>> {
    let events = dataset.events();
    models
        .iter()
        .enumerate()
        .map(|(g, m)| {
            background_table(dataset, m, |i| match (events[i].source, events[i].mark) {
                (Source::B, Some(mark)) => mark == g,
                _ => true,
            })
        })
        .collect()
}

pub(crate) fn e_step_multi_with(
    dataset: &MarkedDataset,
    models: &[GroupParams],
    prev: &BranchingPosteriorMulti,
    ctx: &FitContext,
    tables: &[Vec<f64>],
) -> Result<(BranchingPosteriorMulti, usize)> {
    let k = models.len();
    if k == 0 || k != dataset.k() {
        return Err(Error::InvalidInput(format!(
            "{k} group models for a dataset with K = {}",
            dataset.k()
        )));
    }
    if prev.k() != k || prev.len() != dataset.len() {
        return Err(Error::InvalidInput("previous posterior does not match dataset".into()));
    }
    let events = dataset.events();
    let weights = parent_weights(dataset, k, prev);
    let triggers: Vec<TriggerParams> = models.iter().map(|m| m.trigger).collect();
    let horizons: Vec<f64> = triggers.iter().map(|p| ctx.truncation.time_horizon(p)).collect();
    let radii: Vec<f64> = triggers.iter().map(|p| ctx.truncation.radius_sq(p)).collect();
    let horizon = horizons.iter().cloned().fold(0.0, f64::max);
    let eps = ctx.eps_lambda;

    let rows: Vec<Row> = (0..events.len())
        .into_par_iter()
        .map(|i| {
            let e = &events[i];
            let admissible: Vec<usize> = match e.mark {
                Some(m) if e.source == Source::B => vec![m],
                _ => (0..k).collect(),
            };
            let mut background = vec![0.0; k];
            let mut parents: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
            let mut total = 0.0;
            for &g in &admissible {
                let bg = tables[g][i];
                background[g] = bg;
                total += bg;
                let trig = &triggers[g];
                if trig.k0 <= 0.0 {
                    continue;
                }
                for j in (0..i).rev() {
                    let p = &events[j];
                    let dt = e.t - p.t;
                    if dt > horizon {
                        break;
                    }
                    let w = weights[g][j];
                    if dt <= 0.0 || dt > horizons[g] || w <= 0.0 {
                        continue;
                    }
                    let (dx, dy) = (e.x - p.x, e.y - p.y);
                    if dx * dx + dy * dy > radii[g] {
                        continue;
                    }
                    let v = w * trig.density(dx, dy, dt);
                    if v > 0.0 {
                        parents[g].push((j, v));
                        total += v;
                    }
                }
            }
            if total > 0.0 && total.is_finite() {
                for g in 0..k {
                    background[g] /= total;
                    for entry in &mut parents[g] {
                        entry.1 /= total;
                    }
                }
                Row {
                    background,
                    parents,
                    low: total < eps,
                    zero: false,
                }
            } else {
                let share = 1.0 / admissible.len() as f64;
                let mut background = vec![0.0; k];
                for &g in &admissible {
                    background[g] = share;
                }
                Row {
                    background,
                    parents: vec![Vec::new(); k],
                    low: true,
                    zero: true,
                }
            }
        })
        .collect();

    if !rows.is_empty() && rows.iter().all(|r| r.zero) {
        return Err(Error::ZeroIntensity);
    }
    let warnings = rows.iter().filter(|r| r.low).count();
    if warnings > 0 {
        log::warn!("{warnings} events with intensity below the floor {eps:e}");
    }
    let n = rows.len();
    let mut groups = vec![BranchingPosteriorSingle::zeros(n); k];
    for (i, row) in rows.into_iter().enumerate() {
        for (g, (bg, parents)) in row.background.into_iter().zip(row.parents).enumerate() {
            groups[g].background[i] = bg;
            groups[g].parents[i] = parents;
        }
    }
    Ok((BranchingPosteriorMulti { groups }, warnings))
}

/// Applies the single-group estimator to every `P^k`. A group holding less
/// than one event of mass is flagged empty and its triggering is reset to
/// the priors.
pub fn m_step_multi(
    dataset: &MarkedDataset,
    posterior: &BranchingPosteriorMulti,
    cfg: &FitConfig,
) -> Result<Vec<GroupParams>> {
    let ctx = FitContext::new(dataset, cfg);
    m_step_multi_with(dataset, posterior, &ctx, None, false)
}

fn m_step_multi_with(
    dataset: &MarkedDataset,
    posterior: &BranchingPosteriorMulti,
    ctx: &FitContext,
    prev: Option<&[GroupParams]>,
    freeze_bandwidths: bool,
) -> Result<Vec<GroupParams>> {
    posterior
        .groups
        .iter()
        .enumerate()
        .map(|(k, post)| {
            let mut params = m_step_with(dataset, post, ctx, prev.map(|p| &p[k]), freeze_bandwidths)?;
            if post.total_mass() < 1.0 {
                params.trigger = TriggerParams::new(0.0, ctx.prior_omega, ctx.prior_sigma.max(ctx.sigma_min))?;
                params.empty = true;
            }
            Ok(params)
        })
        .collect()
}

/// Sum of the per-group complete-data objectives, each group's tail term
/// weighted by the responsibilities in `posterior`.
fn fused_objective(
    dataset: &MarkedDataset,
    posterior: &BranchingPosteriorMulti,
    models: &[GroupParams],
    tables: &[Vec<f64>],
    ctx: &FitContext,
) -> f64 {
    posterior
        .groups
        .iter()
        .zip(models)
        .zip(tables)
        .map(|((post, model), table)| {
            let weights: Vec<f64> = (0..post.len()).map(|i| post.row_sum(i)).collect();
            let w = if posterior.k() == 1 { None } else { Some(weights.as_slice()) };
            group_objective(dataset, post, model, table, w, dataset.window(), ctx.eps_lambda).0
        })
        .sum()
}

/// Fits `dataset.k()` groups jointly and records the responsibilities of every
/// unlabeled event.
pub fn fit_fused(dataset: &MarkedDataset, cfg: &FitConfig) -> Result<FittedModel> {
    fit_fused_with_posterior(dataset, cfg).map(|(m, _)| m)
}

/// As [`fit_fused`], also returning the final E-step posterior.
pub fn fit_fused_with_posterior(
    dataset: &MarkedDataset,
    cfg: &FitConfig,
) -> Result<(FittedModel, BranchingPosteriorMulti)> {
    cfg.validate()?;
    if dataset.len() < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 events, got {}", dataset.len())));
    }
    let k = dataset.k();
    let mut labeled = vec![0usize; k];
    for e in dataset.events() {
        if let (Source::B, Some(m)) = (e.source, e.mark) {
            labeled[m] += 1;
        }
    }
    for (g, &c) in labeled.iter().enumerate() {
        if c == 0 && k > 1 {
            log::warn!("group {g} has no labeled events");
        }
    }
    let ctx = FitContext::new(dataset, cfg);
    let mut post = warm_start_with(dataset, &ctx)?;
    let mut trace = ConvergenceTrace::default();
    let mut current: Option<Vec<GroupParams>> = None;
    for _ in 0..cfg.max_iters {
        let models = m_step_multi_with(dataset, &post, &ctx, current.as_deref(), cfg.freeze_bandwidths)?;
        let delta = current.as_ref().map_or(f64::INFINITY, |c| {
            c.iter().zip(&models).map(|(a, b)| relative_change(a, b)).fold(0.0, f64::max)
        });
        trace.deltas.push(delta);
        let tables = background_tables(dataset, &models);
        trace.objective.push(fused_objective(dataset, &post, &models, &tables, &ctx));
        trace.iterations += 1;
        let (next, warnings) = e_step_multi_with(dataset, &models, &post, &ctx, &tables)?;
        trace.intensity_warnings += warnings;
        post = next;
        current = Some(models);
        if delta < cfg.tol {
            trace.converged = true;
            break;
        }
    }
    if !trace.converged {
        log::warn!("fused EM stopped at max_iters = {} without converging", cfg.max_iters);
    }
    let assignments = dataset
        .events()
        .iter()
        .enumerate()
        .filter(|(_, e)| e.source == Source::A)
        .map(|(i, e)| {
            // A single group owns every event outright, as in the parent weights.
            let responsibilities = if k == 1 { vec![1.0] } else { post.responsibilities(i) };
            let (group, prob) = argmax(&responsibilities);
            MarkAssignment {
                id: e.id,
                group,
                prob,
                responsibilities,
            }
        })
        .collect();
    let model = FittedModel {
        window: *dataset.window(),
        time_unit: cfg.time_unit.clone(),
        groups: current.expect("max_iters >= 1"),
        assignments: Some(assignments),
        trace,
    };
    Ok((model, post))
}

/// First index of the largest value.
fn argmax(values: &[f64]) -> (usize, f64) {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
}

/// `(id, group, probability)` for every unlabeled event of a fused fit.
pub fn infer_marks(model: &FittedModel) -> Result<Vec<(u64, usize, f64)>> {
    let assignments = model.assignments.as_ref().ok_or(Error::NotFused)?;
    Ok(assignments.iter().map(|a| (a.id, a.group, a.prob)).collect())
}

/// Hard group for each event: the label for labeled events, the inferred
/// mark otherwise.
pub fn hard_labels(dataset: &MarkedDataset, model: &FittedModel) -> Result<Vec<usize>> {
    let assignments = model.assignments.as_ref().ok_or(Error::NotFused)?;
    let by_id: std::collections::HashMap<u64, usize> = assignments.iter().map(|a| (a.id, a.group)).collect();
    dataset
        .events()
        .iter()
        .map(|e| match (e.source, e.mark) {
            (Source::B, Some(m)) => Ok(m),
            _ => by_id
                .get(&e.id)
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("no assignment for event {}", e.id))),
        })
        .collect()
}
