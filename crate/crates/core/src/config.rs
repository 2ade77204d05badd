//! Flat `key = value` configuration files.
//!
//! Blank lines and `#` comments are ignored. Keys may appear once. Group
//! keys are indexed: `group.0.bg = 0.1, 0.2, 0.3, 0.4`, `group.0.mu = 67`,
//! `group.0.k0`, `group.0.omega`, `group.0.sigma`.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::em::FitConfig;
use crate::kernels::{BandwidthStrategy, TriggerParams};
use crate::sim::{GroupSimSpec, SimConfig};
use crate::{Error, Result};

const GLOBAL_KEYS: &[&str] = &[
    "seed",
    "horizon",
    "unlabeled_fraction",
    "cascade_cap",
    "max_iters",
    "tol",
    "epsilon_lambda",
    "bandwidth",
    "bandwidth.k",
    "bandwidth.b1",
    "bandwidth.b2",
    "bandwidth_floor_rel",
    "freeze_bandwidths",
    "truncation.max_decay",
    "truncation.max_sigmas",
    "sigma_floor_rel",
    "prior_omega",
    "prior_sigma",
    "time_unit",
];

const GROUP_KEYS: &[&str] = &["bg", "mu", "k0", "omega", "sigma"];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct KeyValues {
    entries: BTreeMap<String, (usize, String)>,
}

/// Parses and checks key names; values are interpreted on access.
pub fn parse_config(text: &str) -> Result<KeyValues> {
    let mut entries = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| Error::Config {
            line,
            key: content.to_string(),
            message: "expected `key = value`".into(),
        })?;
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        if !is_known(&key) {
            return Err(Error::Config {
                line,
                key,
                message: "unknown key".into(),
            });
        }
        if let Some((first, _)) = entries.get(&key) {
            return Err(Error::Config {
                line,
                key,
                message: format!("duplicate key (first set on line {first})"),
            });
        }
        entries.insert(key, (line, value));
    }
    Ok(KeyValues { entries })
}

pub fn load_config(path: impl AsRef<Path>) -> Result<KeyValues> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text)
}

fn is_known(key: &str) -> bool {
    if GLOBAL_KEYS.contains(&key) {
        return true;
    }
    let mut parts = key.split('.');
    matches!(
        (parts.next(), parts.next(), parts.next(), parts.next()),
        (Some("group"), Some(i), Some(field), None) if i.parse::<usize>().is_ok() && GROUP_KEYS.contains(&field)
    )
}

impl KeyValues {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Parsed value of `key`, if present.
    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.entries.get(key) {
            None => Ok(None),
            Some((line, value)) => value.parse().map(Some).map_err(|_| Error::Config {
                line: *line,
                key: key.to_string(),
                message: format!("cannot parse {value:?} as {}", std::any::type_name::<T>()),
            }),
        }
    }

    fn error(&self, key: &str, message: impl Into<String>) -> Error {
        Error::Config {
            line: self.entries.get(key).map_or(0, |e| e.0),
            key: key.to_string(),
            message: message.into(),
        }
    }

    fn group_indices(&self) -> BTreeSet<usize> {
        self.keys()
            .filter_map(|k| k.strip_prefix("group."))
            .filter_map(|rest| rest.split('.').next()?.parse().ok())
            .collect()
    }

    fn group_spec(&self, i: usize) -> Result<GroupSimSpec> {
        let key = |f: &str| format!("group.{i}.{f}");
        let num = |f: &str| -> Result<f64> {
            self.get::<f64>(&key(f))?
                .ok_or_else(|| self.error(&key(f), "missing (every group needs bg, mu, k0, omega, sigma)"))
        };
        let bg_key = key("bg");
        let bg_text: String = self
            .get(&bg_key)?
            .ok_or_else(|| self.error(&bg_key, "missing (every group needs bg, mu, k0, omega, sigma)"))?;
        let bg: Vec<f64> = bg_text
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| self.error(&bg_key, "expected four comma-separated numbers"))?;
        let bg: [f64; 4] = bg
            .try_into()
            .map_err(|_| self.error(&bg_key, "expected four comma-separated numbers"))?;
        let trigger = TriggerParams::new(num("k0")?, num("omega")?, num("sigma")?)
            .map_err(|e| self.error(&key("k0"), e.to_string()))?;
        let spec = GroupSimSpec {
            bg,
            mu: num("mu")?,
            trigger,
            label: i,
        };
        spec.validate().map_err(|e| self.error(&bg_key, e.to_string()))?;
        Ok(spec)
    }

    /// Simulation settings over the defaults. Listing any group replaces the
    /// default groups; indices must run from 0 without gaps.
    pub fn sim_config(&self) -> Result<SimConfig> {
        let mut cfg = SimConfig::default();
        let indices = self.group_indices();
        if !indices.is_empty() {
            if indices.iter().copied().ne(0..indices.len()) {
                let gap = (0..).find(|i| !indices.contains(i)).unwrap_or(0);
                return Err(self.error(&format!("group.{gap}"), "group indices must be contiguous from 0"));
            }
            cfg.groups = indices.iter().map(|&i| self.group_spec(i)).collect::<Result<_>>()?;
        }
        if let Some(v) = self.get("seed")? {
            cfg.seed = v;
        }
        if let Some(v) = self.get("horizon")? {
            cfg.horizon = v;
        }
        if let Some(v) = self.get("unlabeled_fraction")? {
            cfg.unlabeled_fraction = v;
        }
        if let Some(v) = self.get("cascade_cap")? {
            cfg.cascade_cap = v;
        }
        cfg.validate().map_err(|e| match e {
            Error::InvalidParameter { field, message } => self.error(field, message),
            other => other,
        })?;
        Ok(cfg)
    }

    /// Estimation settings over the defaults.
    pub fn fit_config(&self) -> Result<FitConfig> {
        let mut cfg = FitConfig::default();
        if let Some(v) = self.get("seed")? {
            cfg.seed = v;
        }
        if let Some(v) = self.get("max_iters")? {
            cfg.max_iters = v;
        }
        if let Some(v) = self.get("tol")? {
            cfg.tol = v;
        }
        cfg.epsilon_lambda = self.get("epsilon_lambda")?;
        if let Some(v) = self.get("bandwidth_floor_rel")? {
            cfg.bandwidth_floor_rel = v;
        }
        if let Some(v) = self.get("freeze_bandwidths")? {
            cfg.freeze_bandwidths = v;
        }
        if let Some(v) = self.get("truncation.max_decay")? {
            cfg.truncation.max_decay = v;
        }
        if let Some(v) = self.get("truncation.max_sigmas")? {
            cfg.truncation.max_sigmas = v;
        }
        if let Some(v) = self.get("sigma_floor_rel")? {
            cfg.sigma_floor_rel = v;
        }
        cfg.prior_omega = self.get("prior_omega")?;
        cfg.prior_sigma = self.get("prior_sigma")?;
        cfg.time_unit = self.get("time_unit")?;

        let k: Option<usize> = self.get("bandwidth.k")?;
        let b1: Option<f64> = self.get("bandwidth.b1")?;
        let b2: Option<f64> = self.get("bandwidth.b2")?;
        let kind: Option<String> = self.get("bandwidth")?;
        cfg.bandwidth.strategy = match kind.as_deref() {
            None | Some("knn") => BandwidthStrategy::NearestNeighbor { k: k.unwrap_or(15) },
            Some("cv") => BandwidthStrategy::CrossValidation { k: k.unwrap_or(15) },
            Some("fixed") => match (b1, b2) {
                (Some(b1), Some(b2)) => BandwidthStrategy::Fixed { b1, b2 },
                _ => return Err(self.error("bandwidth", "`fixed` needs bandwidth.b1 and bandwidth.b2")),
            },
            Some(other) => return Err(self.error("bandwidth", format!("expected knn, cv or fixed, got {other:?}"))),
        };
        if let BandwidthStrategy::NearestNeighbor { k: 0 } | BandwidthStrategy::CrossValidation { k: 0 } =
            cfg.bandwidth.strategy
        {
            return Err(self.error("bandwidth.k", "must be >= 1"));
        }
        cfg.validate().map_err(|e| match e {
            Error::InvalidParameter { field, message } => self.error(field, message),
            other => other,
        })?;
        Ok(cfg)
    }
}
