//! Event records, observation windows, CSV ingestion and model persistence.
//!
//! File formats:
//!
//! * events CSV: `id,t,x,y,source,group`, `group` blank for source `A`;
//! * tox CSV: `id` followed by one 0/1 column per substance;
//! * model JSON: see [`save_model`].

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::em::{ConvergenceTrace, FittedModel, GroupParams, MarkAssignment};
use crate::kernels::{Background, KdeBackground, SupportPoint, TriggerParams};
use crate::nmf::ToxMatrix;
use crate::{Error, Result};

/// Which data source an event came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Source {
    /// Unlabeled: location and time only.
    A,
    /// Labeled with a group mark.
    B,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::A => "A",
            Source::B => "B",
        })
    }
}

impl FromStr for Source {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "A" | "a" => Ok(Source::A),
            "B" | "b" => Ok(Source::B),
            other => Err(Error::InvalidInput(format!("unknown source {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventRecord {
    pub id: u64,
    pub t: f64,
    pub x: f64,
    pub y: f64,
    pub source: Source,
    pub mark: Option<usize>,
}

/// Space-time observation window `[x0, x1] × [y0, y1] × [t0, t1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWindow")]
pub struct Window {
    pub t0: f64,
    pub t1: f64,
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

#[derive(Deserialize)]
struct RawWindow {
    t0: f64,
    t1: f64,
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl TryFrom<RawWindow> for Window {
    type Error = Error;

    fn try_from(r: RawWindow) -> Result<Self> {
        Window::new(r.t0, r.t1, r.x0, r.x1, r.y0, r.y1)
    }
}

impl Window {
    pub fn new(t0: f64, t1: f64, x0: f64, x1: f64, y0: f64, y1: f64) -> Result<Self> {
        let all_finite = [t0, t1, x0, x1, y0, y1].iter().all(|v| v.is_finite());
        if !all_finite || t1 <= t0 || x1 <= x0 || y1 <= y0 {
            return Err(Error::invalid(
                "window",
                format!("need finite bounds with t1 > t0, x1 > x0, y1 > y0; got t=[{t0},{t1}] x=[{x0},{x1}] y=[{y0},{y1}]"),
            ));
        }
        Ok(Self { t0, t1, x0, x1, y0, y1 })
    }

    /// Unit square over `[0, horizon]`.
    pub fn unit_square(horizon: f64) -> Result<Self> {
        Self::new(0.0, horizon, 0.0, 1.0, 0.0, 1.0)
    }

    /// Smallest window holding every event, with the given time bounds. A
    /// degenerate spatial extent is widened to unit length.
    pub fn bounding(events: &[EventRecord], t0: f64, t1: f64) -> Result<Self> {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for e in events {
            x0 = x0.min(e.x);
            x1 = x1.max(e.x);
            y0 = y0.min(e.y);
            y1 = y1.max(e.y);
        }
        if events.is_empty() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 <= x0 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        if y1 <= y0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        Self::new(t0, t1, x0, x1, y0, y1)
    }

    /// Smallest window containing both `self` and `other`.
    pub fn union(&self, other: &Window) -> Window {
        Window {
            t0: self.t0.min(other.t0),
            t1: self.t1.max(other.t1),
            x0: self.x0.min(other.x0),
            x1: self.x1.max(other.x1),
            y0: self.y0.min(other.y0),
            y1: self.y1.max(other.y1),
        }
    }

    pub fn duration(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn area(&self) -> f64 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn volume(&self) -> f64 {
        self.duration() * self.area()
    }

    pub fn diagonal(&self) -> f64 {
        (self.x1 - self.x0).hypot(self.y1 - self.y0)
    }

    pub fn contains_time(&self, t: f64) -> bool {
        t >= self.t0 && t <= self.t1
    }

    pub fn contains(&self, t: f64, x: f64, y: f64) -> bool {
        self.contains_time(t) && x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

/// Time-sorted events of both sources with `K` groups.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkedDataset {
    events: Vec<EventRecord>,
    window: Window,
    k: usize,
}

impl MarkedDataset {
    /// Validates and sorts by `(t, id)`. Source-`B` events must carry a mark
    /// below `k`; times must lie in the window; ids must be unique.
    pub fn new(mut events: Vec<EventRecord>, window: Window, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("K", "group count must be >= 1"));
        }
        let mut seen = HashSet::with_capacity(events.len());
        for e in &events {
            if !(e.t.is_finite() && e.x.is_finite() && e.y.is_finite()) {
                return Err(Error::InvalidInput(format!("event {} has non-finite coordinates", e.id)));
            }
            if !window.contains_time(e.t) {
                return Err(Error::InvalidInput(format!("event {} outside window (t = {})", e.id, e.t)));
            }
            match (e.source, e.mark) {
                (Source::B, None) => {
                    return Err(Error::InvalidInput(format!("labeled event {} has no group", e.id)))
                }
                (_, Some(m)) if m >= k => {
                    return Err(Error::InvalidInput(format!("event {} has group {m} >= K = {k}", e.id)))
                }
                _ => {}
            }
            if !seen.insert(e.id) {
                return Err(Error::InvalidInput(format!("duplicate event id {}", e.id)));
            }
        }
        events.sort_by(|a, b| a.t.total_cmp(&b.t).then(a.id.cmp(&b.id)));
        Ok(Self { events, window, k })
    }

    pub fn events(&self) -> &[EventRecord] {
        &self.events
    }

    pub fn window(&self) -> &Window {
        &self.window
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn unlabeled_count(&self) -> usize {
        self.events.iter().filter(|e| e.source == Source::A).count()
    }

    /// Events of one source, same window and `K`.
    pub fn subset(&self, source: Source) -> MarkedDataset {
        MarkedDataset {
            events: self.events.iter().copied().filter(|e| e.source == source).collect(),
            window: self.window,
            k: self.k,
        }
    }

    /// Same events with every mark and source label discarded, as a
    /// single-group dataset.
    pub fn unmarked(&self) -> MarkedDataset {
        MarkedDataset {
            events: self
                .events
                .iter()
                .map(|e| EventRecord {
                    source: Source::A,
                    mark: None,
                    ..*e
                })
                .collect(),
            window: self.window,
            k: 1,
        }
    }

    /// Same events with the window replaced.
    pub fn with_window(&self, window: Window) -> Result<MarkedDataset> {
        MarkedDataset::new(self.events.clone(), window, self.k)
    }
}

const EVENT_HEADER: [&str; 6] = ["id", "t", "x", "y", "source", "group"];

/// Reads an events CSV from a file.
pub fn load_events(path: impl AsRef<Path>, window: Window, k: usize) -> Result<MarkedDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_events(BufReader::new(file), window, k)
}

/// Parses an events CSV (`id,t,x,y,source,group`).
pub fn parse_events<R: Read>(reader: R, window: Window, k: usize) -> Result<MarkedDataset> {
    parse_events_with_labels(reader, window, k, None)
}

/// Parses an events CSV, filling blank `group` cells of source-`B` rows from
/// `labels` (report id → group), as produced by clustering.
pub fn parse_events_with_labels<R: Read>(
    reader: R,
    window: Window,
    k: usize,
    labels: Option<&HashMap<u64, usize>>,
) -> Result<MarkedDataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut records = rdr.records();
    match records.next() {
        Some(Ok(h)) if h.iter().eq(EVENT_HEADER.iter().copied()) => {}
        Some(Ok(h)) => {
            return Err(Error::parse(1, format!("expected header {:?}, got {:?}", EVENT_HEADER.join(","), h.iter().collect::<Vec<_>>().join(","))))
        }
        Some(Err(e)) => return Err(Error::parse(1, e.to_string())),
        None => return Err(Error::parse(1, "missing header")),
    }
    let mut events = Vec::new();
    let mut ids = HashSet::new();
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != EVENT_HEADER.len() {
            return Err(Error::parse(line, format!("expected 6 fields, got {}", rec.len())));
        }
        let id: u64 = rec[0].parse().map_err(|_| Error::parse(line, format!("bad id {:?}", &rec[0])))?;
        let num = |i: usize, name: &str| -> Result<f64> {
            let v: f64 = rec[i].parse().map_err(|_| Error::parse(line, format!("bad {name} {:?}", &rec[i])))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::parse(line, format!("non-finite {name}")))
            }
        };
        let (t, x, y) = (num(1, "t")?, num(2, "x")?, num(3, "y")?);
        let source: Source = rec[4].parse().map_err(|e: Error| Error::parse(line, e.to_string()))?;
        let mut mark = if rec[5].is_empty() {
            None
        } else {
            Some(rec[5].parse::<usize>().map_err(|_| Error::parse(line, format!("bad group {:?}", &rec[5])))?)
        };
        if mark.is_none() && source == Source::B {
            mark = labels.and_then(|l| l.get(&id).copied());
        }
        match (source, mark) {
            (Source::A, Some(_)) => return Err(Error::parse(line, "source A row must leave group blank")),
            (Source::B, None) => return Err(Error::parse(line, "source B row has empty group")),
            (_, Some(m)) if m >= k => return Err(Error::parse(line, format!("group {m} >= K = {k}"))),
            _ => {}
        }
        if !window.contains_time(t) {
            return Err(Error::parse(line, format!("event outside window (t = {t})")));
        }
        if !ids.insert(id) {
            return Err(Error::parse(line, format!("duplicate id {id}")));
        }
        events.push(EventRecord { id, t, x, y, source, mark });
    }
    MarkedDataset::new(events, window, k)
}

/// Reads a `id,group` label table, as written by clustering.
pub fn load_labels(path: impl AsRef<Path>) -> Result<HashMap<u64, usize>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_labels(BufReader::new(file))
}

pub fn parse_labels<R: Read>(reader: R) -> Result<HashMap<u64, usize>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut records = rdr.records();
    match records.next() {
        Some(Ok(h)) if h.iter().eq(["id", "group"]) => {}
        Some(Ok(_)) => return Err(Error::parse(1, "expected header `id,group`")),
        Some(Err(e)) => return Err(Error::parse(1, e.to_string())),
        None => return Err(Error::parse(1, "missing header")),
    }
    let mut labels = HashMap::new();
    for rec in records {
        let rec = rec.map_err(|e| Error::parse(e.position().map_or(0, |p| p.line() as usize), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 2 {
            return Err(Error::parse(line, format!("expected 2 fields, got {}", rec.len())));
        }
        let id: u64 = rec[0].parse().map_err(|_| Error::parse(line, format!("bad id {:?}", &rec[0])))?;
        let group: usize = rec[1].parse().map_err(|_| Error::parse(line, format!("bad group {:?}", &rec[1])))?;
        if labels.insert(id, group).is_some() {
            return Err(Error::parse(line, format!("duplicate id {id}")));
        }
    }
    Ok(labels)
}

/// Writes an `id,group` table.
pub fn write_labels<W: Write>(labels: &[(u64, usize)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv write failed: {e}"));
    w.write_record(["id", "group"]).map_err(csv_err)?;
    for (id, g) in labels {
        w.write_record([id.to_string(), g.to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<labels writer>", e))?;
    Ok(())
}

/// Writes the inferred marks of a fused fit as `id,group,prob`.
pub fn write_assignments<W: Write>(marks: &[(u64, usize, f64)], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv write failed: {e}"));
    w.write_record(["id", "group", "prob"]).map_err(csv_err)?;
    for (id, g, p) in marks {
        w.write_record([id.to_string(), g.to_string(), p.to_string()]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<assignments writer>", e))?;
    Ok(())
}

/// Window spanning `[min(0, ⌊t_min⌋), ⌈t_max⌉]` in time and the bounding box
/// of the events in space.
pub fn infer_window(events: &[EventRecord]) -> Result<Window> {
    let t_min = events.iter().map(|e| e.t).fold(f64::INFINITY, f64::min);
    let t_max = events.iter().map(|e| e.t).fold(f64::NEG_INFINITY, f64::max);
    if events.is_empty() {
        return Err(Error::InvalidInput("cannot infer a window without events".into()));
    }
    let t0 = t_min.floor().min(0.0);
    let mut t1 = t_max.ceil();
    if t1 <= t0 {
        t1 = t0 + 1.0;
    }
    Window::bounding(events, t0, t1)
}

/// Reads an events CSV and infers its window with [`infer_window`].
pub fn load_events_inferred(
    path: impl AsRef<Path>,
    k: usize,
    labels: Option<&HashMap<u64, usize>>,
) -> Result<MarkedDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let open = Window::new(-f64::MAX / 4.0, f64::MAX / 4.0, -1.0, 1.0, -1.0, 1.0)?;
    let ds = parse_events_with_labels(BufReader::new(file), open, k, labels)?;
    ds.with_window(infer_window(ds.events())?)
}

/// Reads an events CSV with an explicit window, filling labels as in
/// [`parse_events_with_labels`].
pub fn load_events_with_labels(
    path: impl AsRef<Path>,
    window: Window,
    k: usize,
    labels: Option<&HashMap<u64, usize>>,
) -> Result<MarkedDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_events_with_labels(BufReader::new(file), window, k, labels)
}

/// Writes `dataset` as an events CSV. Unlabeled rows leave `group` blank.
pub fn write_events<W: Write>(dataset: &MarkedDataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::InvalidInput(format!("csv write failed: {e}"));
    w.write_record(EVENT_HEADER).map_err(csv_err)?;
    for e in dataset.events() {
        let group = match (e.source, e.mark) {
            (Source::B, Some(m)) => m.to_string(),
            _ => String::new(),
        };
        w.write_record([e.id.to_string(), e.t.to_string(), e.x.to_string(), e.y.to_string(), e.source.to_string(), group])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io("<events writer>", e))?;
    Ok(())
}

/// Reads a tox CSV (`id,<substance>...`).
pub fn load_tox(path: impl AsRef<Path>) -> Result<ToxMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_tox(BufReader::new(file))
}

/// Parses a binary report × substance table into a substances × reports
/// matrix. Reports with no substance present are dropped and counted.
pub fn parse_tox<R: Read>(reader: R) -> Result<ToxMatrix> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(reader);
    let mut records = rdr.records();
    let header = match records.next() {
        Some(Ok(h)) => h,
        Some(Err(e)) => return Err(Error::parse(1, e.to_string())),
        None => return Err(Error::parse(1, "missing header")),
    };
    if header.get(0) != Some("id") {
        return Err(Error::parse(1, "first column must be `id`"));
    }
    let substances: Vec<String> = header.iter().skip(1).map(str::to_owned).collect();
    if substances.is_empty() {
        return Err(Error::parse(1, "no substance columns"));
    }
    let mut seen_names = HashSet::new();
    for s in &substances {
        if s.is_empty() || !seen_names.insert(s.as_str()) {
            return Err(Error::parse(1, format!("empty or duplicate substance name {s:?}")));
        }
    }
    let d = substances.len();
    let mut ids = Vec::new();
    let mut seen = HashSet::new();
    let mut cells: Vec<f64> = Vec::new();
    let mut dropped = 0;
    for rec in records {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::parse(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != d + 1 {
            return Err(Error::parse(line, format!("expected {} fields, got {}", d + 1, rec.len())));
        }
        let id: u64 = rec[0].parse().map_err(|_| Error::parse(line, format!("bad id {:?}", &rec[0])))?;
        if !seen.insert(id) {
            return Err(Error::parse(line, format!("duplicate id {id}")));
        }
        let row: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|c| match c {
                "0" => Ok(0.0),
                "1" => Ok(1.0),
                other => Err(Error::parse(line, format!("non-binary cell {other:?}"))),
            })
            .collect::<Result<_>>()?;
        if row.iter().all(|&v| v == 0.0) {
            dropped += 1;
            continue;
        }
        ids.push(id);
        cells.extend(row);
    }
    if dropped > 0 {
        log::info!("dropped {dropped} reports with no substance present");
    }
    let n = ids.len();
    // cells is reports × substances row-major; store substances × reports.
    let values = Array2::from_shape_vec((n, d), cells)
        .map_err(|e| Error::InvalidInput(e.to_string()))?
        .reversed_axes()
        .as_standard_layout()
        .to_owned();
    ToxMatrix::new(values, substances, ids, dropped)
}

/// Current model document version.
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ModelDocument {
    format_version: u32,
    #[serde(rename = "K")]
    k: usize,
    window: Window,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    time_unit: Option<String>,
    groups: Vec<GroupDocument>,
    assignments: Option<Vec<AssignmentDocument>>,
    #[serde(default)]
    trace: ConvergenceTrace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
enum BackgroundKind {
    #[default]
    Kde,
    Uniform,
}

#[derive(Debug, Serialize, Deserialize)]
struct GroupDocument {
    #[serde(rename = "K0")]
    k0: f64,
    omega: f64,
    sigma: f64,
    mu0: f64,
    b1: f64,
    b2: f64,
    background_points: Vec<SupportPoint>,
    #[serde(default)]
    background: BackgroundKind,
    /// Kernels renormalized to the model window.
    #[serde(default)]
    bounded: bool,
    unlabeled_share: f64,
    #[serde(default)]
    empty: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct AssignmentDocument {
    id: u64,
    group: usize,
    prob: f64,
    #[serde(default)]
    responsibilities: Vec<f64>,
}

fn to_document(model: &FittedModel) -> ModelDocument {
    let groups = model
        .groups
        .iter()
        .map(|g| {
            let (kind, b1, b2, points, bounded) = match &g.background {
                Background::Kde(kde) => {
                    (BackgroundKind::Kde, kde.b1(), kde.b2(), kde.points().to_vec(), kde.domain().is_some())
                }
                Background::Uniform(_) => (BackgroundKind::Uniform, 0.0, 0.0, Vec::new(), false),
            };
            GroupDocument {
                k0: g.trigger.k0,
                omega: g.trigger.omega,
                sigma: g.trigger.sigma,
                mu0: g.mu0,
                b1,
                b2,
                background_points: points,
                background: kind,
                bounded,
                unlabeled_share: g.unlabeled_share,
                empty: g.empty,
            }
        })
        .collect();
    ModelDocument {
        format_version: FORMAT_VERSION,
        k: model.groups.len(),
        window: model.window,
        time_unit: model.time_unit.clone(),
        groups,
        assignments: model.assignments.as_ref().map(|a| {
            a.iter()
                .map(|m| AssignmentDocument {
                    id: m.id,
                    group: m.group,
                    prob: m.prob,
                    responsibilities: m.responsibilities.clone(),
                })
                .collect()
        }),
        trace: model.trace.clone(),
    }
}

fn from_document(doc: ModelDocument) -> Result<FittedModel> {
    if doc.groups.len() != doc.k || doc.k == 0 {
        return Err(Error::InvalidInput(format!("K = {} but {} groups present", doc.k, doc.groups.len())));
    }
    let groups = doc
        .groups
        .into_iter()
        .map(|g| {
            let trigger = TriggerParams::new(g.k0, g.omega, g.sigma)?;
            if !(g.mu0.is_finite() && g.mu0 >= 0.0) {
                return Err(Error::invalid("mu0", format!("must be >= 0, got {}", g.mu0)));
            }
            if !(0.0..=1.0).contains(&g.unlabeled_share) {
                return Err(Error::invalid("unlabeled_share", format!("must be in [0, 1], got {}", g.unlabeled_share)));
            }
            let background = match g.background {
                BackgroundKind::Kde if g.bounded => {
                    Background::Kde(KdeBackground::bounded(g.background_points, g.b1, g.b2, doc.window)?)
                }
                BackgroundKind::Kde => Background::Kde(KdeBackground::new(g.background_points, g.b1, g.b2)?),
                BackgroundKind::Uniform => Background::Uniform(doc.window),
            };
            Ok(GroupParams {
                trigger,
                mu0: g.mu0,
                background,
                unlabeled_share: g.unlabeled_share,
                empty: g.empty,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let assignments = doc
        .assignments
        .map(|a| {
            a.into_iter()
                .map(|m| {
                    if m.group >= doc.k || !(0.0..=1.0).contains(&m.prob) {
                        return Err(Error::InvalidInput(format!("bad assignment for event {}", m.id)));
                    }
                    if !m.responsibilities.is_empty() && m.responsibilities.len() != doc.k {
                        return Err(Error::InvalidInput(format!("event {} has {} responsibilities", m.id, m.responsibilities.len())));
                    }
                    Ok(MarkAssignment {
                        id: m.id,
                        group: m.group,
                        prob: m.prob,
                        responsibilities: m.responsibilities,
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .transpose()?;
    Ok(FittedModel {
        window: doc.window,
        time_unit: doc.time_unit,
        groups,
        assignments,
        trace: doc.trace,
    })
}

/// Serializes a model to its JSON document:
/// `{format_version, K, window, groups:[{K0, omega, sigma, mu0, b1, b2,
/// background_points:[{t,x,y,w}], unlabeled_share, ...}], assignments}`.
pub fn model_to_json(model: &FittedModel) -> Result<String> {
    Ok(serde_json::to_string_pretty(&to_document(model))?)
}

/// Parses a model document, rejecting unknown format versions.
pub fn model_from_json(text: &str) -> Result<FittedModel> {
    let value: serde_json::Value = serde_json::from_str(text)?;
    let version = value
        .get("format_version")
        .ok_or_else(|| Error::InvalidInput("missing format_version".into()))?;
    let found = version
        .as_u64()
        .and_then(|v| u32::try_from(v).ok())
        .ok_or_else(|| Error::InvalidInput(format!("bad format_version {version}")))?;
    if found != FORMAT_VERSION {
        return Err(Error::FormatVersion {
            found,
            expected: FORMAT_VERSION,
        });
    }
    from_document(serde_json::from_value(value)?)
}

pub fn save_model(model: &FittedModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(model_to_json(model)?.as_bytes()).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<FittedModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text)
}
