//! Marked spatio-temporal self-exciting point processes for heterogeneous
//! event data.
//!
//! Two event sources are merged: source `A` carries only space-time
//! coordinates, source `B` additionally carries a group mark (typically
//! obtained by clustering high-dimensional report vectors with [`nmf`]). A
//! multi-group EM estimator ([`fuse`]) fits one Hawkes model per group while
//! inferring the missing marks of `A`. The single-group estimator ([`em`]),
//! the branching-process simulator ([`sim`]) and the scoring harness
//! ([`eval`]) complete the pipeline.
//!
//! Intensity of group `k` at `(x, y, t)`:
//!
//! ```text
//! λᵏ(x, y, t) = μᵏ uᵏ(x, y) vᵏ(t) + Σ_{t_j < t} rⱼ(k) gᵏ(x − x_j, y − y_j, t − t_j)
//! gᵏ(dx, dy, dt) = K₀ᵏ ωᵏ e^{−ωᵏ dt} · exp(−(dx² + dy²) / 2σᵏ²) / (2π σᵏ²)
//! ```
//!
//! where `u`, `v` are weighted kernel density estimates of the background and
//! `rⱼ(k)` is 1 for a labeled parent of group `k` and the current group
//! responsibility for an unlabeled parent.

pub mod config;
pub mod data;
pub mod em;
mod error;
pub mod eval;
pub mod fuse;
pub mod kernels;
pub mod nmf;
pub mod sim;

pub use data::{EventRecord, MarkedDataset, Source, Window};
pub use em::{FitConfig, FittedModel, GroupParams};
pub use error::{Error, Result};
pub use kernels::{KdeBackground, TriggerParams};
