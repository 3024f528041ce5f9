use std::f64::consts::PI;

use calderon_lab::experiments::{
    convergence_from_errors, estimate_norm, growth_in_d, ExperimentRecord, GrowthConfig, NormOperator, NormQuery,
    SCHEMA_VERSION,
};
use calderon_lab::gridcore::FarField;
use calderon_lab::profiles::LipschitzProfile;

const INF: f64 = f64::INFINITY;

fn quick(op: NormOperator, exponents: Vec<f64>, p: f64) -> NormQuery {
    let mut q = NormQuery::new(op, exponents, p);
    q.length = 16.0;
    q.n = 256;
    q.trials = 4;
    q.iterations = 10;
    q
}

#[test]
fn identity_has_norm_one() {
    let est = estimate_norm(&quick(NormOperator::Identity, vec![2.0], 2.0)).unwrap().estimate.unwrap();
    assert!((est - 1.0).abs() < 1e-12, "{est}");
}

#[test]
fn hilbert_estimate_approaches_pi_from_below() {
    let est = estimate_norm(&quick(NormOperator::Hilbert, vec![2.0], 2.0)).unwrap().estimate.unwrap();
    assert!((0.9 * PI..=PI * (1.0 + 1e-9)).contains(&est), "{est}");
}

#[test]
fn first_commutator_estimate_is_seed_stable() {
    let bump = LipschitzProfile::gaussian(1.0, 1.0, 0.0);
    let a = bump.scaled(1.0 / bump.lip_norm());
    let run = |seed| {
        let mut q = quick(NormOperator::Commutator { d: 1, profile: a.clone() }, vec![2.0, INF], 2.0);
        q.seed = seed;
        estimate_norm(&q).unwrap().estimate.unwrap()
    };
    let (x, y) = (run(1), run(99));
    assert!(x > 0.0 && (x / y - 1.0).abs() < 0.1, "{x} vs {y}");
}

#[test]
fn query_validation() {
    let bad_holder = quick(NormOperator::Identity, vec![2.0], 3.0);
    assert!(estimate_norm(&bad_holder).is_err());
    assert!(quick(NormOperator::Identity, vec![0.5], 0.5).validate().is_err());
    assert!(quick(NormOperator::Hilbert, vec![2.0, INF], 2.0).validate().is_err());
    let op = NormOperator::Commutator { d: 1, profile: LipschitzProfile::linear(1.0) };
    assert!(quick(op.clone(), vec![INF, 2.0], 2.0).validate().is_err());
    let mut q = quick(op, vec![2.0, INF], 2.0);
    q.trials = 0;
    assert!(q.validate().is_err());
    let mut q = quick(NormOperator::Hilbert, vec![2.0], 2.0);
    q.budget = 10;
    assert!(estimate_norm(&q).is_err());
}

#[test]
fn estimates_are_deterministic_and_monotone_in_trials() {
    let mut q = quick(NormOperator::Hilbert, vec![2.0], 2.0);
    q.iterations = 0;
    q.seed = 5;
    let a = estimate_norm(&q).unwrap();
    let b = estimate_norm(&q).unwrap();
    assert_eq!(a.estimate, b.estimate);
    assert_eq!(a.rows, b.rows);
    q.trials = 12;
    let more = estimate_norm(&q).unwrap().estimate.unwrap();
    assert!(more >= a.estimate.unwrap());
}

#[test]
fn linear_profile_gives_a_flat_growth_sequence() {
    // With A(x) = x every commutator collapses to the same truncated Hilbert transform.
    let cfg = GrowthConfig {
        d_max: 3,
        profile: LipschitzProfile::linear(1.0),
        length: 16.0,
        n: 256,
        far: FarField::Truncated(4.0),
        trials: 2,
        iterations: 5,
        seed: 0,
    };
    let rec = growth_in_d(&cfg).unwrap();
    let est: Vec<f64> = rec.rows_labeled("estimate").map(|r| r.value).collect();
    assert_eq!(est.len(), 3);
    for e in &est[1..] {
        assert!((e / est[0] - 1.0).abs() < 1e-9, "{est:?}");
    }
    assert!(rec.fit("log-log").unwrap().slope.abs() < 1e-8);
    assert!(growth_in_d(&GrowthConfig { d_max: 1, ..cfg }).is_err());
}

#[test]
fn records_round_trip_through_json_and_csv() {
    let rec = estimate_norm(&quick(NormOperator::Hilbert, vec![2.0], 2.0)).unwrap();
    let back = ExperimentRecord::from_json(&rec.to_json().unwrap()).unwrap();
    assert_eq!(back, rec);

    let mut bumped: serde_json::Value = serde_json::from_str(&rec.to_json().unwrap()).unwrap();
    bumped["schema_version"] = serde_json::json!(SCHEMA_VERSION + 1);
    assert!(ExperimentRecord::from_json(&bumped.to_string()).is_err());

    let mut buf = Vec::new();
    rec.write_csv(&mut buf).unwrap();
    let mut r = csv::Reader::from_reader(buf.as_slice());
    assert_eq!(r.headers().unwrap(), vec!["schema_version", "experiment", "label", "index", "x", "value"]);
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), rec.rows.len());
    for (row, want) in rows.iter().zip(&rec.rows) {
        assert_eq!(&row[0], SCHEMA_VERSION.to_string().as_str());
        assert_eq!(&row[2], want.label.as_str());
        assert_eq!(row[5].parse::<f64>().unwrap(), want.value);
    }

    let dir = tempfile::tempdir().unwrap();
    let (c, j) = rec.save(dir.path(), "hilbert").unwrap();
    assert!(c.exists());
    assert_eq!(ExperimentRecord::from_json(&std::fs::read_to_string(j).unwrap()).unwrap(), rec);
}

#[test]
fn convergence_at_the_floor_skips_the_slope_test() {
    let dxs = [0.1, 0.05, 0.025];
    let rec = convergence_from_errors("exact", &dxs, &[1e-15, 2e-15, 1e-15], 1e-13).unwrap();
    assert!(rec.passed && rec.fits.is_empty());
    let second = convergence_from_errors("second", &dxs, &[4e-2, 1e-2, 2.5e-3], 1e-13).unwrap();
    assert!(second.passed && (second.fit("second").unwrap().slope - 2.0).abs() < 1e-9);
    let first = convergence_from_errors("first", &dxs, &[4e-2, 2e-2, 1e-2], 1e-13).unwrap();
    assert!(!first.passed);
    assert!(convergence_from_errors("short", &dxs[..2], &[1.0, 1.0], 0.0).is_err());
}
