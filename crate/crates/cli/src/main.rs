//! `hfuse`: simulate, cluster, fit, evaluate and summarize marked
//! self-exciting event data.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use hawkes_fusion::config::{load_config, KeyValues};
use hawkes_fusion::data::{
    load_events_inferred, load_events_with_labels, load_labels, load_model, load_tox, save_model, write_assignments,
    write_events, write_labels,
};
use hawkes_fusion::eval::{
    compare_models, write_forecasts, write_report, EvalConfig, ForecastOptions, Forecaster, ModelEntry, Subset,
};
use hawkes_fusion::kernels::Background;
use hawkes_fusion::nmf::{assign_clusters, coherence, factorize, select_k, top_terms, NmfOptions};
use hawkes_fusion::{em, fuse, sim, FitConfig, FittedModel, MarkedDataset, Source, Window};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "hfuse", version, about = "Marked self-exciting point processes on partially labeled data")]
struct Cli {
    /// Cap on worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate synthetic multi-group datasets.
    Simulate(SimulateArgs),
    /// Factorize a substance screen table into topic clusters.
    Cluster(ClusterArgs),
    /// Fit a single-group or fused multi-group model.
    Fit(FitArgs),
    /// Score models by log-likelihood, AIC and grid-forecast AUC.
    Evaluate(EvaluateArgs),
    /// Emit plot-ready tables for a fitted model.
    Report(ReportArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    replicates: usize,
    #[arg(long)]
    unlabeled_fraction: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ClusterArgs {
    #[arg(long)]
    tox: PathBuf,
    /// Candidate topic counts, as `lo..hi` (inclusive) or a single value.
    #[arg(long, default_value = "2..8")]
    k_range: String,
    /// Fixed topic count; skips selection.
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 5)]
    top_m: usize,
    #[arg(long, default_value_t = 500)]
    iters: usize,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args, Clone)]
struct DataArgs {
    #[arg(long)]
    events: PathBuf,
    /// `id,group` table filling blank groups of source-B rows.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// `t0,t1,x0,x1,y0,y1`; inferred from the events when absent.
    #[arg(long)]
    window: Option<String>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 1)]
    k: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    /// Single-source baselines as `A=path` or `B=path`.
    #[arg(long)]
    baseline: Vec<String>,
    /// Fit the A-only and B-only baselines from the events.
    #[arg(long)]
    fit_baselines: bool,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Subsets to score; default A and B.
    #[arg(long)]
    subset: Vec<Subset>,
    /// Grid size for the forecast AUC; no forecast when absent.
    #[arg(long)]
    grid: Option<usize>,
    #[arg(long)]
    first_day: Option<f64>,
    /// Write every (day, cell) score of each scored model.
    #[arg(long)]
    dump_forecasts: bool,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 50)]
    grid: usize,
    #[arg(long, default_value_t = 50)]
    bins: usize,
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    config: serde_json::Value,
    seed: Option<u64>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    elapsed_seconds: f64,
    warnings: Vec<String>,
}

struct Run {
    manifest: RunManifest,
    started: Instant,
    out: PathBuf,
}

impl Run {
    fn new(command: &str, out: &Path, seed: Option<u64>) -> Result<Self> {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self {
            manifest: RunManifest {
                command: command.into(),
                config: serde_json::Value::Null,
                seed,
                inputs: Vec::new(),
                outputs: Vec::new(),
                elapsed_seconds: 0.0,
                warnings: Vec::new(),
            },
            started: Instant::now(),
            out: out.to_path_buf(),
        })
    }

    fn input(&mut self, p: &Path) {
        self.manifest.inputs.push(p.to_path_buf());
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.out.join(name);
        let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        self.manifest.outputs.push(path);
        Ok(BufWriter::new(f))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let w = self.create(name)?;
        serde_json::to_writer_pretty(w, value)?;
        Ok(())
    }

    fn warn(&mut self, msg: String) {
        log::warn!("{msg}");
        self.manifest.warnings.push(msg);
    }

    fn finish(mut self) -> Result<()> {
        self.manifest.elapsed_seconds = self.started.elapsed().as_secs_f64();
        let path = self.out.join("manifest.json");
        fs::write(&path, serde_json::to_string_pretty(&self.manifest)?)
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        ensure!(n >= 1, "--threads must be >= 1");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Cluster(a) => cluster(a),
        Command::Fit(a) => fit(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => report(a),
    }
}

fn read_config(path: Option<&Path>) -> Result<KeyValues> {
    match path {
        Some(p) => load_config(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(KeyValues::default()),
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    ensure!(a.replicates >= 1, "--replicates must be >= 1");
    let kv = read_config(a.config.as_deref())?;
    let mut cfg = kv.sim_config()?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(f) = a.unlabeled_fraction {
        cfg.unlabeled_fraction = f;
    }
    if let Some(h) = a.horizon {
        cfg.horizon = h;
    }
    cfg.validate()?;
    let mut run = Run::new("simulate", &a.out, Some(cfg.seed))?;
    if let Some(p) = &a.config {
        run.input(p);
    }
    run.manifest.config = serde_json::to_value(&cfg)?;
    let mut windows = Vec::new();
    for r in 0..a.replicates {
        let data = sim::simulate_replicate(&cfg, r as u64)?;
        write_events(&data.dataset, run.create(&format!("events_{r:03}.csv"))?)?;
        sim::write_truth(&data.truth, run.create(&format!("truth_{r:03}.csv"))?)?;
        windows.push(*data.dataset.window());
    }
    run.write_json("windows.json", &windows)?;
    run.finish()
}

fn parse_k_range(s: &str) -> Result<Vec<usize>> {
    let parse = |v: &str| v.trim().parse::<usize>().with_context(|| format!("bad --k-range bound {v:?}"));
    let ks: Vec<usize> = match s.split_once("..") {
        Some((lo, hi)) => (parse(lo)?..=parse(hi)?).collect(),
        None => vec![parse(s)?],
    };
    ensure!(!ks.is_empty(), "--k-range {s:?} is empty");
    Ok(ks)
}

#[derive(Serialize)]
struct TopicReport {
    #[serde(rename = "K")]
    k: usize,
    coherence: Vec<f64>,
    mean_coherence: f64,
    topics: Vec<Topic>,
    selection: Vec<(usize, f64)>,
}

#[derive(Serialize)]
struct Topic {
    top_terms: Vec<String>,
}

fn cluster(a: ClusterArgs) -> Result<()> {
    let mut run = Run::new("cluster", &a.out, Some(a.seed))?;
    run.input(&a.tox);
    let tox = load_tox(&a.tox).with_context(|| format!("reading {}", a.tox.display()))?;
    if tox.dropped_empty() > 0 {
        run.warn(format!("dropped {} reports with no substance present", tox.dropped_empty()));
    }
    let opts = NmfOptions {
        iters: a.iters,
        restarts: a.restarts,
    };
    let top_m = a.top_m.min(tox.n_substances());
    let (k, selection) = match a.k {
        Some(k) => (k, Vec::new()),
        None => {
            let sel = select_k(&tox, parse_k_range(&a.k_range)?, a.seed, top_m, opts)?;
            (sel.best_k, sel.scores)
        }
    };
    run.manifest.config = serde_json::json!({
        "k": k, "k_range": a.k_range, "top_m": top_m, "iters": a.iters, "restarts": a.restarts,
    });
    let f = factorize(&tox, k, a.seed, opts)?;
    let labels = assign_clusters(&f);
    let pairs: Vec<(u64, usize)> = tox.ids().iter().copied().zip(labels).collect();
    write_labels(&pairs, run.create("clusters.csv")?)?;
    let coh = coherence(&f, &tox, top_m)?;
    let topics = top_terms(&f, top_m)?.into_iter().map(|top_terms| Topic { top_terms }).collect();
    run.write_json(
        "topics.json",
        &TopicReport {
            k,
            coherence: coh.per_topic,
            mean_coherence: coh.mean,
            topics,
            selection,
        },
    )?;
    println!("K = {k}");
    run.finish()
}

fn parse_window(s: &str) -> Result<Window> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("bad --window {s:?}"))?;
    ensure!(v.len() == 6, "--window needs t0,t1,x0,x1,y0,y1");
    Ok(Window::new(v[0], v[1], v[2], v[3], v[4], v[5])?)
}

fn load_data(d: &DataArgs, k: usize, run: &mut Run) -> Result<MarkedDataset> {
    run.input(&d.events);
    let labels = match &d.labels {
        Some(p) => {
            run.input(p);
            Some(load_labels(p).with_context(|| format!("reading {}", p.display()))?)
        }
        None => None,
    };
    let ds = match &d.window {
        Some(w) => load_events_with_labels(&d.events, parse_window(w)?, k, labels.as_ref()),
        None => load_events_inferred(&d.events, k, labels.as_ref()),
    };
    ds.with_context(|| format!("reading {}", d.events.display()))
}

fn fit_config(config: Option<&Path>, seed: Option<u64>, run: &mut Run) -> Result<FitConfig> {
    if let Some(p) = config {
        run.input(p);
    }
    let mut cfg = read_config(config)?.fit_config()?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Single-group EM when there is one group and no labels, fused EM otherwise.
fn fit_any(ds: &MarkedDataset, cfg: &FitConfig) -> Result<FittedModel> {
    if ds.k() == 1 && ds.unlabeled_count() == ds.len() {
        Ok(em::fit(ds, cfg)?)
    } else {
        Ok(fuse::fit_fused(ds, cfg)?)
    }
}

fn note_fit(run: &mut Run, name: &str, model: &FittedModel) {
    if !model.trace.converged {
        run.warn(format!("{name}: stopped after {} iterations without converging", model.trace.iterations));
    }
    if model.trace.intensity_warnings > 0 {
        run.warn(format!("{name}: {} low-intensity events", model.trace.intensity_warnings));
    }
    for (k, g) in model.groups.iter().enumerate() {
        if g.empty {
            run.warn(format!("{name}: group {k} is empty"));
        }
    }
}

fn fit(a: FitArgs) -> Result<()> {
    ensure!(a.k >= 1, "--k must be >= 1");
    let mut run = Run::new("fit", &a.out, a.seed)?;
    let mut cfg = fit_config(a.config.as_deref(), a.seed, &mut run)?;
    if let Some(m) = a.max_iters {
        cfg.max_iters = m;
    }
    if let Some(t) = a.tol {
        cfg.tol = t;
    }
    cfg.validate()?;
    run.manifest.seed = Some(cfg.seed);
    run.manifest.config = serde_json::to_value(&cfg)?;
    let ds = load_data(&a.data, a.k, &mut run)?;
    let model = fit_any(&ds, &cfg)?;
    note_fit(&mut run, "model", &model);
    let path = a.out.join("model.json");
    save_model(&model, &path)?;
    run.manifest.outputs.push(path);
    if model.assignments.is_some() {
        write_assignments(&fuse::infer_marks(&model)?, run.create("assignments.csv")?)?;
    }
    println!(
        "{} groups, {} iterations, converged = {}",
        model.k(),
        model.trace.iterations,
        model.trace.converged
    );
    run.finish()
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let mut run = Run::new("evaluate", &a.out, a.seed)?;
    run.input(&a.model);
    let fused = load_model(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let ds = load_data(&a.data, fused.k(), &mut run)?;
    let cfg = fit_config(a.config.as_deref(), a.seed, &mut run)?;
    let subsets = if a.subset.is_empty() { vec![Subset::A, Subset::B] } else { a.subset.clone() };

    let a_only = ds.subset(Source::A).unmarked();
    let b_only = ds.subset(Source::B);
    let mut baseline_a: Option<FittedModel> = None;
    let mut baseline_b: Option<FittedModel> = None;
    for spec in &a.baseline {
        let (source, path) = spec.split_once('=').context("--baseline expects A=path or B=path")?;
        let path = PathBuf::from(path);
        run.input(&path);
        let model = load_model(&path).with_context(|| format!("reading {}", path.display()))?;
        match source {
            "A" => baseline_a = Some(model),
            "B" => baseline_b = Some(model),
            other => bail!("--baseline source must be A or B, got {other:?}"),
        }
    }
    if a.fit_baselines {
        if baseline_a.is_none() && a_only.len() >= 2 {
            let m = fit_any(&a_only, &cfg)?;
            note_fit(&mut run, "baseline-A", &m);
            baseline_a = Some(m);
        }
        if baseline_b.is_none() && b_only.len() >= 2 {
            let m = fit_any(&b_only, &cfg)?;
            note_fit(&mut run, "baseline-B", &m);
            baseline_b = Some(m);
        }
    }

    let fused_subsets = subsets.clone();
    let only_a = [Subset::A];
    let only_b = [Subset::B];
    let mut entries = vec![ModelEntry {
        name: "fused",
        model: &fused,
        history: &ds,
        subsets: &fused_subsets,
    }];
    if let Some(m) = &baseline_a {
        if subsets.contains(&Subset::A) {
            entries.push(ModelEntry {
                name: "baseline-A",
                model: m,
                history: &a_only,
                subsets: &only_a,
            });
        }
    }
    if let Some(m) = &baseline_b {
        if subsets.contains(&Subset::B) {
            entries.push(ModelEntry {
                name: "baseline-B",
                model: m,
                history: &b_only,
                subsets: &only_b,
            });
        }
    }
    let forecast = a.grid.map(|grid| ForecastOptions {
        grid,
        first_day: a.first_day,
        ..Default::default()
    });
    run.manifest.config = serde_json::json!({
        "subsets": subsets.iter().map(ToString::to_string).collect::<Vec<_>>(),
        "forecast": forecast,
        "fit": cfg,
    });
    let eval_cfg = EvalConfig {
        truncation: cfg.truncation,
        epsilon_lambda: cfg.epsilon_lambda,
    };
    let rows = compare_models(&entries, ds.window(), &eval_cfg, forecast.as_ref())?;
    write_report(&rows, run.create("report.csv")?)?;
    if let (Some(opts), true) = (forecast, a.dump_forecasts) {
        for e in &entries {
            for &s in e.subsets {
                let days = Forecaster::new(e.model, e.history, s, opts)?.all_days();
                write_forecasts(&days, run.create(&format!("forecast_{}_{s}.csv", e.name))?)?;
            }
        }
    }
    for r in &rows {
        println!(
            "{} {} loglik={} aic={}{}",
            r.model,
            r.subset,
            r.loglik,
            r.aic,
            r.auc.map(|v| format!(" auc={v}")).unwrap_or_default()
        );
    }
    run.finish()
}

#[derive(Serialize)]
struct InterEventFit {
    n: usize,
    mean: f64,
    rate: f64,
}

fn report(a: ReportArgs) -> Result<()> {
    ensure!(a.grid >= 1 && a.bins >= 1, "--grid and --bins must be >= 1");
    let mut run = Run::new("report", &a.out, None)?;
    run.input(&a.model);
    let model = load_model(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let ds = load_data(&a.data, model.k(), &mut run)?;
    run.manifest.config = serde_json::json!({ "grid": a.grid, "bins": a.bins });
    let w = *ds.window();
    let g = a.grid;

    // (a) background heatmaps on a G × G lattice of cell centres.
    for (k, group) in model.groups.iter().enumerate() {
        let mut rows = vec!["cell_x,cell_y,x,y,density".to_string()];
        for cy in 0..g {
            for cx in 0..g {
                let x = w.x0 + (cx as f64 + 0.5) * (w.x1 - w.x0) / g as f64;
                let y = w.y0 + (cy as f64 + 0.5) * (w.y1 - w.y0) / g as f64;
                let u = match &group.background {
                    Background::Kde(kde) => kde.kde_space(x, y, None).unwrap_or(0.0),
                    Background::Uniform(b) => 1.0 / b.area(),
                };
                rows.push(format!("{cx},{cy},{x},{y},{u}"));
            }
        }
        write_lines(&mut run, &format!("heatmap_group{k}.csv"), &rows)?;
    }

    // (b) temporal histograms per group and source.
    let groups: Vec<usize> = if model.k() == 1 {
        vec![0; ds.len()]
    } else {
        fuse::hard_labels(&ds, &model)?
    };
    let width = w.duration() / a.bins as f64;
    let mut counts = vec![[vec![0usize; a.bins], vec![0usize; a.bins]]; model.k()];
    for (e, &k) in ds.events().iter().zip(&groups) {
        let bin = (((e.t - w.t0) / width) as usize).min(a.bins - 1);
        counts[k][usize::from(e.source == Source::B)][bin] += 1;
    }
    let mut rows = vec!["group,source,bin,t_start,t_end,count".to_string()];
    for (k, by_source) in counts.iter().enumerate() {
        for (s, name) in ["A", "B"].iter().enumerate() {
            for (b, c) in by_source[s].iter().enumerate() {
                let t = w.t0 + b as f64 * width;
                rows.push(format!("{k},{name},{b},{t},{},{c}", t + width));
            }
        }
    }
    write_lines(&mut run, "time_histogram.csv", &rows)?;

    // (c) inter-event times of the merged stream.
    let gaps: Vec<f64> = ds.events().windows(2).map(|p| p[1].t - p[0].t).collect();
    let max_gap = gaps.iter().cloned().fold(0.0, f64::max);
    let mut rows = vec!["bin,dt_start,dt_end,count".to_string()];
    if !gaps.is_empty() && max_gap > 0.0 {
        let bw = max_gap / a.bins as f64;
        let mut hist = vec![0usize; a.bins];
        for &d in &gaps {
            hist[((d / bw) as usize).min(a.bins - 1)] += 1;
        }
        for (b, c) in hist.iter().enumerate() {
            rows.push(format!("{b},{},{},{c}", b as f64 * bw, (b + 1) as f64 * bw));
        }
    }
    write_lines(&mut run, "inter_event_histogram.csv", &rows)?;
    let mean = if gaps.is_empty() { 0.0 } else { gaps.iter().sum::<f64>() / gaps.len() as f64 };
    run.write_json(
        "inter_event_fit.json",
        &InterEventFit {
            n: gaps.len(),
            mean,
            rate: if mean > 0.0 { 1.0 / mean } else { 0.0 },
        },
    )?;
    run.finish()
}

fn write_lines(run: &mut Run, name: &str, rows: &[String]) -> Result<()> {
    use std::io::Write;
    let mut w = run.create(name)?;
    for r in rows {
        writeln!(w, "{r}")?;
    }
    w.flush()?;
    Ok(())
}
