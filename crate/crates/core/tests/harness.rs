use bhqrc::harness::{cutoff_check, spectral, svd, sweep, Experiment, ExperimentConfig, OutputFiles, OutputFormat, Point, ResultRecord};
use bhqrc::lattice::TopologyKind;
use bhqrc::reservoir::ObservableSet;

fn small(extra: &str) -> ExperimentConfig {
    let base: serde_json::Value = serde_json::from_str(
        r#"{
            "seed": 3,
            "lattice": {"sites": 3, "cutoff": 2, "hopping": [0.1]},
            "dynamics": {"dt": [1.0, 2.0], "virtual_nodes": 4},
            "protocol": {"washout": 50, "train": 200, "test": 200},
            "task": {"indices": [0, 1, 2, 3]}
        }"#,
    )
    .unwrap();
    let mut merged = base;
    let patch: serde_json::Value = serde_json::from_str(extra).unwrap();
    merge(&mut merged, patch);
    ExperimentConfig::from_json(&merged.to_string()).unwrap()
}

fn merge(a: &mut serde_json::Value, b: serde_json::Value) {
    match (a, b) {
        (serde_json::Value::Object(a), serde_json::Value::Object(b)) => {
            for (k, v) in b {
                merge(a.entry(k).or_insert(serde_json::Value::Null), v);
            }
        }
        (a, b) => *a = b,
    }
}

#[test]
fn sweep_is_deterministic_and_marks_one_dt() {
    let e = Experiment::new(small("{}")).unwrap();
    let a = sweep(&e, 1, None, false).unwrap();
    let b = sweep(&e, 2, None, false).unwrap();
    assert_eq!(a, b);
    let recs: Vec<&ResultRecord> = a.records().collect();
    assert_eq!(recs.len(), 2 * 4);
    assert_eq!(recs.iter().filter(|r| r.selected).count(), 4);
    let first = recs[0];
    assert_eq!(first.j_over_u, 0.1);
    assert!((first.j_over_un - 0.1 / 3.0).abs() < 1e-15);
    assert_eq!(first.realizations, 1);
    assert!(first.test_capacity_stderr.is_none());
    // τ = 0 of a uniform input is easy at this size
    assert!(first.test_capacity > 0.9, "{}", first.test_capacity);
    assert_eq!(a.summaries().count(), 2);
}

#[test]
fn one_point_grid_reduces_to_run_point() {
    let e = Experiment::new(small(r#"{"dynamics": {"dt": [2.0]}}"#)).unwrap();
    let out = sweep(&e, 1, None, false).unwrap();
    let point = e.points()[0];
    for r in out.records() {
        let single = e.run_point(&point, 2.0, None, r.index).unwrap();
        assert_eq!(single.test_capacity, r.test_capacity);
        assert_eq!(single.train_capacity, r.train_capacity);
        assert_eq!(single.weight_norm, r.weight_norm);
    }
}

#[test]
fn seed_streams_are_independent() {
    let ideal = Experiment::new(small("{}")).unwrap();
    let noisy = Experiment::new(small(r#"{"noise": {"shots": [100]}, "lattice": {"cutoff": 3, "disorder": [0.3]}}"#)).unwrap();
    let p = Point::new(TopologyKind::OpenChain, 0.1, 0.0);
    assert_eq!(ideal.inputs(&p).unwrap(), noisy.inputs(&p).unwrap());
    let other = Experiment::new(small(r#"{"seed": 4}"#)).unwrap();
    assert_ne!(ideal.inputs(&p).unwrap(), other.inputs(&p).unwrap());
    assert_ne!(noisy.disorder_seed(&p, 0), noisy.disorder_seed(&p, 1));
    assert_ne!(noisy.noise_seed(&p, 1.0, 3, 100, 0), noisy.noise_seed(&p, 1.0, 3, 100, 1));
}

#[test]
fn disorder_and_noise_are_averaged() {
    let e = Experiment::new(small(
        r#"{"lattice": {"disorder": [0.3], "realizations": 3}, "noise": {"shots": [10000]}, "dynamics": {"dt": [2.0]}}"#,
    ))
    .unwrap();
    let out = sweep(&e, 1, None, false).unwrap();
    let recs: Vec<&ResultRecord> = out.records().collect();
    assert_eq!(recs.len(), 2 * 4);
    for r in &recs {
        assert_eq!(r.realizations, 3);
        assert_eq!(r.failed, 0);
        let se = r.test_capacity_stderr.expect("stderr with 3 realizations");
        assert!(se.is_finite() && se >= 0.0);
    }
    // different disorder draws give different capacities
    assert!(recs.iter().any(|r| r.test_capacity_stderr.unwrap() > 0.0));
}

#[test]
fn narma_orders_each_get_a_record() {
    let e = Experiment::new(small(r#"{"task": {"kind": "narma", "indices": [2, 5]}, "dynamics": {"dt": [2.0]}}"#)).unwrap();
    let out = sweep(&e, 1, None, false).unwrap();
    assert_eq!(out.records().count(), 2);
    for r in out.records() {
        assert_eq!(r.failed, 0, "{:?}", r.error);
        assert!(r.test_capacity.is_finite());
    }
}

#[test]
fn interrupted_sweep_resumes_to_same_tables() {
    let dir = tempfile::tempdir().unwrap();
    let config = small(r#"{"lattice": {"hopping": [0.0, 0.1, 1.0]}, "dynamics": {"dt": [2.0]}, "task": {"indices": [0, 1]}}"#);
    let e = Experiment::new(config).unwrap();
    for format in [OutputFormat::Csv, OutputFormat::Json] {
        let files = OutputFiles::new(dir.path(), format!("s_{format:?}"), format);
        let full = sweep(&e, 1, Some(&files), false).unwrap();
        let records = std::fs::read_to_string(files.table("")).unwrap();
        let summary = std::fs::read_to_string(files.table("_summary")).unwrap();

        // drop the last point and tear the final line
        let lines: Vec<&str> = records.lines().collect();
        let keep = lines.len() - 2;
        let mut torn = lines[..keep].join("\n");
        torn.push('\n');
        torn.push_str(&lines[keep][..10]);
        std::fs::write(files.table(""), torn).unwrap();

        let resumed = sweep(&e, 1, Some(&files), true).unwrap();
        assert_eq!(resumed.resumed, 2);
        assert!(std::fs::read_to_string(files.table("")).unwrap() == records);
        assert!(std::fs::read_to_string(files.table("_summary")).unwrap() == summary);
        assert_eq!(full.records().count(), resumed.records().count());
        let meta: serde_json::Value = serde_json::from_slice(&std::fs::read(files.metadata("")).unwrap()).unwrap();
        assert_eq!(meta["observables"], 12);
        assert_eq!(meta["config_hash"], e.hash());
    }
}

#[test]
fn csv_header_is_fixed() {
    let dir = tempfile::tempdir().unwrap();
    let e = Experiment::new(small(r#"{"dynamics": {"dt": [2.0]}, "task": {"indices": [0]}}"#)).unwrap();
    let files = OutputFiles::new(dir.path(), "h", OutputFormat::Csv);
    sweep(&e, 1, Some(&files), false).unwrap();
    let text = std::fs::read_to_string(files.table("")).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "point_id,config_hash,topology,sites,cutoff,j_over_u,j_over_un,dt,disorder,shots,task,degree,index,realizations,failed,\
         train_capacity,test_capacity,test_capacity_stderr,degenerate,weight_norm,redundancy,selected,error"
    );
    let summary = std::fs::read_to_string(files.table("_summary")).unwrap();
    assert!(summary.starts_with("point_id,config_hash,topology,sites,cutoff,j_over_u,j_over_un,dt,disorder,shots,task,degree,threshold,max_index"));
}

#[test]
fn no_hopping_cutoffs_agree() {
    let e = Experiment::new(small(r#"{"lattice": {"hopping": [0.0], "cutoff_check": [2, 3]}, "dynamics": {"dt": [1.0]}}"#)).unwrap();
    let cmp = cutoff_check(&e, None).unwrap();
    assert_eq!(cmp.capacities.len(), 2);
    assert!(cmp.max_abs_difference < 1e-9, "{}", cmp.max_abs_difference);
    let bad = Experiment::new(small(r#"{"lattice": {"cutoff_check": [2]}}"#)).unwrap();
    assert!(cutoff_check(&bad, None).is_err());
}

#[test]
fn spectral_records_both_axes() {
    let config = small(r#"{"lattice": {"sites": 4, "hopping": [0.2, 0.4], "hopping_axis": "j-over-un"}, "spectral": {"window": {"inner_fraction": 0.7, "target_energy": 0.5, "vector_count": 10}}}"#);
    let recs = spectral(&config, 1, None).unwrap();
    assert_eq!(recs.len(), 2);
    assert!((recs[0].j_over_un - 0.2).abs() < 1e-15);
    assert!((recs[0].j_over_u - 0.8).abs() < 1e-15);
    assert_eq!(recs[0].sector_dim, 35);
    for r in &recs {
        assert!((0.0..=1.0).contains(&r.mean_gap_ratio));
        assert!((0.0..=1.0).contains(&r.mean_information_dimension));
        assert_eq!(r.vectors_used, 10);
    }
}

#[test]
fn svd_counts_symmetric_duplicates() {
    let e = Experiment::new(small(r#"{"lattice": {"topology": ["open-chain", "all-to-all"]}, "dynamics": {"dt": [2.0]}}"#)).unwrap();
    let recs = svd(&e, 1, None).unwrap();
    let m = ObservableSet::standard(3).len();
    assert_eq!(recs[0].columns, m * 4 + 1);
    assert_eq!(recs[0].values.len(), recs[0].columns);
    assert!(recs[1].redundant > recs[0].redundant, "{} vs {}", recs[1].redundant, recs[0].redundant);
}
