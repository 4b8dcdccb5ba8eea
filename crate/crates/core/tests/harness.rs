use freehand::harness::config::ExperimentConfig;
use freehand::harness::derive_seed;
use freehand::harness::instances::build_instance;
use freehand::harness::rates::fit_rate;
use freehand::harness::run::{run_experiment, ResultTable};

const CONFIG: &str = r#"{
    "instance": {"generator": "coverage_reference", "high": 1.0, "low": 0.5},
    "algorithm": "freehand",
    "reward_class": {"kind": "tabular_grid", "spacing": 0.5, "support": "data_support"},
    "n_schedule": [30, 60],
    "seeds": {"first": 5, "count": 4}
}"#;

const REORDERED: &str = r#"{
    "seeds": {"count": 4, "first": 5},
    "n_schedule": [30, 60],
    "reward_class": {"support": "data_support", "spacing": 0.5, "kind": "tabular_grid"},
    "algorithm": "freehand",
    "instance": {"low": 0.5, "high": 1.0, "generator": "coverage_reference"}
}"#;

#[test]
fn hash_ignores_key_order_and_tracks_content() {
    let a = ExperimentConfig::from_json(CONFIG).unwrap();
    let b = ExperimentConfig::from_json(REORDERED).unwrap();
    assert_eq!(a.hash(), b.hash());
    assert_eq!(a.hash().len(), 16);
    assert!(a.hash().chars().all(|c| c.is_ascii_hexdigit()));
    let mut c = a.clone();
    c.delta = 0.05;
    assert_ne!(a.hash(), c.hash());
}

#[test]
fn invalid_configs_are_rejected() {
    let no_class = CONFIG.replace(r#""reward_class": {"kind": "tabular_grid", "spacing": 0.5, "support": "data_support"},"#, "");
    assert!(ExperimentConfig::from_json(&no_class).is_err());
    assert!(ExperimentConfig::from_json(&CONFIG.replace("[30, 60]", "[]")).is_err());
    assert!(ExperimentConfig::from_json("{").is_err());
}

#[test]
fn sweep_is_deterministic_and_round_trips() {
    let cfg = ExperimentConfig::from_json(CONFIG).unwrap();
    let first = run_experiment(&cfg).unwrap();
    let again = run_experiment(&cfg).unwrap();
    assert_eq!(first.rows, again.rows);
    assert_eq!(first.rows.len(), 8);
    assert!(first.rows.iter().all(|r| r.config_hash == cfg.hash() && r.status == "ok"));

    let seeds: Vec<(usize, u64)> = first.rows.iter().map(|r| (r.n, r.seed)).collect();
    let mut distinct = seeds.clone();
    distinct.sort_unstable();
    distinct.dedup();
    assert_eq!(distinct.len(), seeds.len());

    let csv = first.to_csv();
    let parsed = ResultTable::points_from_csv(&csv).unwrap();
    let direct = first.points();
    assert_eq!(parsed.len(), direct.len());
    for (p, q) in parsed.iter().zip(&direct) {
        assert_eq!(p.0, q.0);
        assert_eq!(p.1.to_bits(), q.1.to_bits());
    }
}

#[test]
fn cell_seeds_differ_across_cells() {
    let a = derive_seed(1, 100, 0);
    assert_ne!(a, derive_seed(1, 200, 0));
    assert_ne!(a, derive_seed(2, 100, 0));
    assert_ne!(a, derive_seed(1, 100, 1));
    assert_eq!(a, derive_seed(1, 100, 0));
}

#[test]
fn datasets_depend_only_on_the_cell() {
    let cfg = ExperimentConfig::from_json(CONFIG).unwrap();
    let inst = build_instance(&cfg.instance).unwrap();
    let link = freehand::preference::Link::Sigmoid;
    let a = inst.sample_preferences(&link, 40, 3).unwrap();
    let b = inst.sample_preferences(&link, 40, 3).unwrap();
    assert_eq!(a.to_text(), b.to_text());
    assert_ne!(a.to_text(), inst.sample_preferences(&link, 40, 4).unwrap().to_text());
}

#[test]
fn rate_fit_recovers_known_exponent() {
    let pts: Vec<(usize, f64)> = [128usize, 256, 512, 1024, 2048]
        .iter()
        .flat_map(|&n| [0.9, 1.1].map(|k| (n, k * 3.0 * (n as f64).powf(-0.5))))
        .collect();
    let fit = fit_rate(&pts).unwrap();
    assert!((fit.slope + 0.5).abs() < 1e-12, "{}", fit.slope);
    assert!((fit.predict(512.0) - 3.0 / 512f64.sqrt()).abs() < 1e-12);
    assert!(fit_rate(&pts[..6]).is_err());
}
