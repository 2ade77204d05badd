//! Branching-process simulation of multi-group self-exciting event data.
//!
//! Background events of each group are homogeneous in time and piecewise
//! uniform over the four quadrants of the unit square. Every event then
//! spawns a Poisson(`K0`) number of children, each displaced by an
//! exponential delay and a Gaussian offset, generation after generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::data::{EventRecord, MarkedDataset, Source, Window};
use crate::kernels::TriggerParams;
use crate::{Error, Result};

/// Default cap on the number of events in a single simulation.
pub const DEFAULT_CASCADE_CAP: usize = 1_000_000;

/// Quadrant order: top-left, top-right, bottom-left, bottom-right.
const QUADRANTS: [(f64, f64); 4] = [(0.0, 0.5), (0.5, 0.5), (0.0, 0.0), (0.5, 0.0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSimSpec {
    /// Probability of a background event falling in each quadrant.
    pub bg: [f64; 4],
    /// Expected number of background events over the horizon.
    pub mu: f64,
    pub trigger: TriggerParams,
    pub label: usize,
}

impl GroupSimSpec {
    pub fn validate(&self) -> Result<()> {
        if self.bg.iter().any(|&p| !(p >= 0.0 && p.is_finite())) || (self.bg.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::invalid("bg", format!("quadrant probabilities must be >= 0 and sum to 1, got {:?}", self.bg)));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::invalid("mu", format!("must be finite and >= 0, got {}", self.mu)));
        }
        TriggerParams::new(self.trigger.k0, self.trigger.omega, self.trigger.sigma)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub groups: Vec<GroupSimSpec>,
    pub horizon: f64,
    /// Probability that an event lands in the unlabeled dataset `A`.
    pub unlabeled_fraction: f64,
    pub seed: u64,
    pub cascade_cap: usize,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.groups.is_empty() {
            return Err(Error::invalid("groups", "at least one group is required"));
        }
        for (i, g) in self.groups.iter().enumerate() {
            g.validate()?;
            if g.label != i {
                return Err(Error::invalid("label", format!("group {i} has label {}", g.label)));
            }
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::invalid("horizon", format!("must be > 0, got {}", self.horizon)));
        }
        if !(0.0..=1.0).contains(&self.unlabeled_fraction) {
            return Err(Error::invalid(
                "unlabeled_fraction",
                format!("must be in [0, 1], got {}", self.unlabeled_fraction),
            ));
        }
        if self.cascade_cap == 0 {
            return Err(Error::invalid("cascade_cap", "must be >= 1"));
        }
        Ok(())
    }
}

/// The four-group synthetic setting used throughout the tests.
pub fn reference_groups() -> Vec<GroupSimSpec> {
    let bg = [[0.1, 0.2, 0.3, 0.4], [0.4, 0.3, 0.2, 0.1], [0.4, 0.4, 0.1, 0.1], [0.1, 0.4, 0.1, 0.4]];
    let params = [(0.1, 0.9, 0.01, 67.0), (0.5, 0.8, 0.001, 28.0), (1.0, 0.6, 0.02, 55.0), (0.3, 0.75, 0.003, 132.0)];
    bg.iter()
        .zip(params)
        .enumerate()
        .map(|(label, (&bg, (omega, k0, sigma, mu)))| GroupSimSpec {
            bg,
            mu,
            trigger: TriggerParams { k0, omega, sigma },
            label,
        })
        .collect()
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            groups: reference_groups(),
            horizon: 1000.0,
            unlabeled_fraction: 0.3,
            seed: 0,
            cascade_cap: DEFAULT_CASCADE_CAP,
        }
    }
}

/// A simulated event before ids are assigned. `parent` indexes into the
/// vector the event was returned in.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEvent {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub group: usize,
    pub parent: Option<usize>,
}

/// True group and parent of a simulated event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truth {
    pub id: u64,
    pub true_group: usize,
    pub parent_id: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedData {
    pub dataset: MarkedDataset,
    /// One entry per event, in the dataset's order.
    pub truth: Vec<Truth>,
}

impl SimulatedData {
    /// Number of events per true group.
    pub fn group_counts(&self, k: usize) -> Vec<usize> {
        let mut counts = vec![0; k];
        for t in &self.truth {
            counts[t.true_group] += 1;
        }
        counts
    }
}

fn background_with<R: Rng>(spec: &GroupSimSpec, horizon: f64, rng: &mut R) -> Result<Vec<SimEvent>> {
    spec.validate()?;
    if spec.mu == 0.0 {
        return Ok(Vec::new());
    }
    let n = Poisson::new(spec.mu)
        .map_err(|e| Error::invalid("mu", e.to_string()))?
        .sample(rng) as usize;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let t = rng.random::<f64>() * horizon;
        let u: f64 = rng.random();
        let mut q = 0;
        let mut acc = spec.bg[0];
        while u >= acc && q < 3 {
            q += 1;
            acc += spec.bg[q];
        }
        let (qx, qy) = QUADRANTS[q];
        out.push(SimEvent {
            t,
            x: qx + 0.5 * rng.random::<f64>(),
            y: qy + 0.5 * rng.random::<f64>(),
            group: spec.label,
            parent: None,
        });
    }
    Ok(out)
}

/// Background events of one group over `[0, horizon]`.
pub fn simulate_background(spec: &GroupSimSpec, horizon: f64, seed: u64) -> Result<Vec<SimEvent>> {
    background_with(spec, horizon, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Appends the descendants of `events[start..]` (and of their descendants)
/// to `events`, dropping children after `horizon`.
fn cascade<R: Rng>(
    events: &mut Vec<SimEvent>,
    start: usize,
    trigger: &TriggerParams,
    horizon: f64,
    cap: usize,
    rng: &mut R,
) -> Result<()> {
    if trigger.k0 == 0.0 {
        return Ok(());
    }
    let count = Poisson::new(trigger.k0).map_err(|e| Error::invalid("K0", e.to_string()))?;
    let delay = Exp::new(trigger.omega).map_err(|e| Error::invalid("omega", e.to_string()))?;
    let offset = Normal::new(0.0, trigger.sigma).map_err(|e| Error::invalid("sigma", e.to_string()))?;
    let mut next = start;
    while next < events.len() {
        let parent = events[next];
        let n = count.sample(rng) as usize;
        for _ in 0..n {
            let t = parent.t + delay.sample(rng);
            let x = parent.x + offset.sample(rng);
            let y = parent.y + offset.sample(rng);
            if t > horizon {
                continue;
            }
            if events.len() >= cap {
                return Err(Error::SupercriticalCascade { cap });
            }
            events.push(SimEvent {
                t,
                x,
                y,
                group: parent.group,
                parent: Some(next),
            });
        }
        next += 1;
    }
    Ok(())
}

/// All descendants of `parent`. The result starts with `parent` itself, so
/// `parent: Some(0)` marks a direct child.
pub fn simulate_offspring(parent: &SimEvent, trigger: &TriggerParams, horizon: f64, seed: u64) -> Result<Vec<SimEvent>> {
    simulate_offspring_capped(parent, trigger, horizon, seed, DEFAULT_CASCADE_CAP)
}

pub fn simulate_offspring_capped(
    parent: &SimEvent,
    trigger: &TriggerParams,
    horizon: f64,
    seed: u64,
    cap: usize,
) -> Result<Vec<SimEvent>> {
    if parent.t > horizon {
        return Err(Error::InvalidInput(format!("parent time {} is after the horizon {horizon}", parent.t)));
    }
    let mut events = vec![SimEvent { parent: None, ..*parent }];
    cascade(&mut events, 0, trigger, horizon, cap, &mut ChaCha8Rng::seed_from_u64(seed))?;
    Ok(events)
}

/// Simulates replicate 0 of `cfg`.
pub fn simulate_dataset(cfg: &SimConfig) -> Result<SimulatedData> {
    simulate_replicate(cfg, 0)
}

/// Simulates one replicate. Events come from stream `2r` of the generator
/// seeded with `cfg.seed` and the A/B split from stream `2r + 1`, so changing
/// `unlabeled_fraction` relabels the same events.
pub fn simulate_replicate(cfg: &SimConfig, replicate: u64) -> Result<SimulatedData> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(2 * replicate);
    let mut events: Vec<SimEvent> = Vec::new();
    for spec in &cfg.groups {
        let start = events.len();
        events.extend(background_with(spec, cfg.horizon, &mut rng)?);
        if events.len() > cfg.cascade_cap {
            return Err(Error::SupercriticalCascade { cap: cfg.cascade_cap });
        }
        cascade(&mut events, start, &spec.trigger, cfg.horizon, cfg.cascade_cap, &mut rng)?;
    }

    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by(|&a, &b| events[a].t.total_cmp(&events[b].t).then(a.cmp(&b)));
    let mut id_of = vec![0u64; events.len()];
    for (rank, &i) in order.iter().enumerate() {
        id_of[i] = rank as u64 + 1;
    }

    let mut split = ChaCha8Rng::seed_from_u64(cfg.seed);
    split.set_stream(2 * replicate + 1);
    let mut records = Vec::with_capacity(events.len());
    let mut truth = Vec::with_capacity(events.len());
    for &i in &order {
        let e = &events[i];
        let unlabeled = split.random::<f64>() < cfg.unlabeled_fraction;
        records.push(EventRecord {
            id: id_of[i],
            t: e.t,
            x: e.x,
            y: e.y,
            source: if unlabeled { Source::A } else { Source::B },
            mark: (!unlabeled).then_some(e.group),
        });
        truth.push(Truth {
            id: id_of[i],
            true_group: e.group,
            parent_id: e.parent.map(|p| id_of[p]),
        });
    }
    let window = Window::unit_square(cfg.horizon)?.union(&Window::bounding(&records, 0.0, cfg.horizon)?);
    let dataset = MarkedDataset::new(records, window, cfg.groups.len())?;
    Ok(SimulatedData { dataset, truth })
}

/// Expected number of events of a group over `[0, T]` with homogeneous
/// background: `μ [1/(1−K0) − K0 (1 − e^{−aT}) / ((1−K0) a T)]`,
/// `a = ω (1 − K0)`.
pub fn expected_group_total(spec: &GroupSimSpec, horizon: f64) -> f64 {
    let k0 = spec.trigger.k0;
    let a = spec.trigger.omega * (1.0 - k0);
    let at = a * horizon;
    spec.mu * (1.0 / (1.0 - k0) - k0 / (1.0 - k0) * (-(-at).exp_m1()) / at)
}

/// Writes the truth sidecar `id,true_group,parent_id`.
pub fn write_truth<W: std::io::Write>(truth: &[Truth], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let io = |e: csv::Error| Error::InvalidInput(format!("writing truth: {e}"));
    w.write_record(["id", "true_group", "parent_id"]).map_err(io)?;
    for t in truth {
        let parent = t.parent_id.map(|p| p.to_string()).unwrap_or_default();
        w.write_record([t.id.to_string(), t.true_group.to_string(), parent]).map_err(io)?;
    }
    w.flush().map_err(|e| Error::io("<truth writer>", e))?;
    Ok(())
}
