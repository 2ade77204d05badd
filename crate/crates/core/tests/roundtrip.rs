use std::collections::HashMap;
use std::fs;
use std::path::Path;

use hawkes_fusion::config::parse_config;
use hawkes_fusion::data::{
    model_from_json, model_to_json, parse_events, parse_labels, parse_tox, write_events, write_labels, Window,
};
use hawkes_fusion::em::FitConfig;
use hawkes_fusion::fuse;
use hawkes_fusion::sim::{self, SimConfig};

fn small_sim(seed: u64) -> sim::SimulatedData {
    sim::simulate_dataset(&SimConfig {
        horizon: 120.0,
        seed,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn events_survive_write_and_parse() {
    let data = small_sim(3);
    let ds = &data.dataset;
    let mut buf = Vec::new();
    write_events(ds, &mut buf).unwrap();
    let back = parse_events(buf.as_slice(), *ds.window(), ds.k()).unwrap();
    assert_eq!(back.events(), ds.events());
}

#[test]
fn labels_survive_write_and_parse() {
    let pairs = vec![(4u64, 2usize), (1, 0), (9, 3)];
    let mut buf = Vec::new();
    write_labels(&pairs, &mut buf).unwrap();
    let back = parse_labels(buf.as_slice()).unwrap();
    assert_eq!(back, pairs.into_iter().collect::<HashMap<_, _>>());
}

#[test]
fn fitted_model_survives_json() {
    let data = small_sim(8);
    let cfg = FitConfig {
        max_iters: 8,
        ..Default::default()
    };
    let model = fuse::fit_fused(&data.dataset, &cfg).unwrap();
    for g in &model.groups {
        assert_eq!(g.background.kde().unwrap().domain(), Some(data.dataset.window()));
    }
    let text = model_to_json(&model).unwrap();
    let back = model_from_json(&text).unwrap();
    assert_eq!(back, model);
    // The rebuilt estimate keeps its window normalization.
    let w = data.dataset.window();
    let (t, x, y) = (0.5 * (w.t0 + w.t1), 0.3, 0.7);
    for (a, b) in model.groups.iter().zip(&back.groups) {
        let (ka, kb) = (a.background.kde().unwrap(), b.background.kde().unwrap());
        assert_eq!(ka.kde_time(t, None).unwrap(), kb.kde_time(t, None).unwrap());
        assert_eq!(ka.kde_space(x, y, None).unwrap(), kb.kde_space(x, y, None).unwrap());
    }
    assert_eq!(model_to_json(&back).unwrap(), text);
}

#[test]
fn model_without_bounded_flag_reads_as_unbounded() {
    let data = small_sim(8);
    let cfg = FitConfig {
        max_iters: 3,
        ..Default::default()
    };
    let model = fuse::fit_fused(&data.dataset, &cfg).unwrap();
    let mut doc: serde_json::Value = serde_json::from_str(&model_to_json(&model).unwrap()).unwrap();
    for g in doc["groups"].as_array_mut().unwrap() {
        g.as_object_mut().unwrap().remove("bounded");
    }
    let back = model_from_json(&doc.to_string()).unwrap();
    for g in &back.groups {
        assert!(g.background.kde().unwrap().domain().is_none());
    }
}

fn corpus(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut files: Vec<_> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "empty corpus {target}");
    files
        .into_iter()
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn fuzz_seeds_parse_or_fail_cleanly() {
    let window = Window::new(-1e6, 1e6, -1e6, 1e6, -1e6, 1e6).unwrap();
    for (name, bytes) in corpus("events_csv") {
        let res = parse_events(bytes.as_slice(), window, 4);
        assert_eq!(res.is_ok(), matches!(name.as_str(), "small.csv" | "header_only.csv"), "{name}: {res:?}");
    }
    for (name, bytes) in corpus("labels_csv") {
        assert_eq!(parse_labels(bytes.as_slice()).is_ok(), name == "labels.csv", "{name}");
    }
    for (name, bytes) in corpus("tox_csv") {
        assert_eq!(parse_tox(bytes.as_slice()).is_ok(), name == "small.csv", "{name}");
    }
    for (name, bytes) in corpus("config_kv") {
        let text = String::from_utf8(bytes).unwrap();
        let parsed = parse_config(&text);
        assert_eq!(parsed.is_ok(), name != "duplicate.conf", "{name}");
        if let Ok(kv) = parsed {
            kv.sim_config().unwrap();
            kv.fit_config().unwrap();
        }
    }
    for (name, bytes) in corpus("model_json") {
        let text = String::from_utf8(bytes).unwrap();
        let res = model_from_json(&text);
        assert_eq!(res.is_ok(), name == "model.json", "{name}");
        if let Ok(m) = res {
            assert_eq!(model_from_json(&model_to_json(&m).unwrap()).unwrap(), m);
        }
    }
}
