use std::path::Path;

use relsub::estimators::{full_mle, Method};
use relsub::harness::config::SimConfig;
use relsub::harness::io::{parse_csv, write_csv};
use relsub::harness::mttf::mttf_report;
use relsub::harness::probs::{export_prob_histogram, ProbKind};
use relsub::harness::sim::{run_simulation, summary_csv, Status};
use relsub::harness::sweep::{sweep_censoring, sweep_csv};
use relsub::models::{ModelKind, ParamVector};
use relsub::{Dataset, Error, Observation, OptimizerConfig};

const SMALL: [(&str, &str); 9] = [
    ("model", "weibull"),
    ("params", "2, 4"),
    ("n", "3000"),
    ("trunc_a", "0"),
    ("trunc_b", "0.1"),
    ("alpha", "0.8"),
    ("estimators", "uniform:300, rds:300:150, rdcs:900:150"),
    ("m", "12"),
    ("seed", "5"),
];

fn small(overrides: &[(&str, &str)]) -> SimConfig {
    let text: String = SMALL
        .iter()
        .map(|&(k, v)| {
            let v = overrides.iter().find(|o| o.0 == k).map_or(v, |o| o.1);
            format!("{k} = {v}\n")
        })
        .collect();
    SimConfig::from_text(&text, Path::new(".")).unwrap()
}

#[test]
fn summary_metrics_are_consistent() {
    let res = run_simulation(&small(&[])).unwrap();
    assert_eq!(res.replicates.len(), 12 * 3);
    for e in &res.summary.estimators {
        assert_eq!(e.successes + e.failures, 12, "{}", e.label);
        assert!(e.successes >= 10, "{}: {} successes", e.label, e.successes);
        for k in 0..2 {
            let lhs = e.se[k].powi(2) + e.bias[k].powi(2);
            assert!((lhs - e.rmse[k].powi(2)).abs() <= 1e-9 * lhs.max(1e-300), "{}: {lhs} vs {}", e.label, e.rmse[k]);
            assert!((0.0..=1.0).contains(&e.cp[k]));
        }
        let total = e.rmse.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((total - e.rmse_total).abs() <= 1e-9 * total);
    }
}

#[test]
fn reruns_are_identical() {
    let cfg = small(&[]);
    let a = run_simulation(&cfg).unwrap();
    let b = run_simulation(&SimConfig { workers: 2, ..cfg }).unwrap();
    assert_eq!(summary_csv(&a.summary), summary_csv(&b.summary));
    assert_eq!(serde_json::to_string(&a.summary).unwrap(), serde_json::to_string(&b.summary).unwrap());
}

#[test]
fn failures_stay_isolated() {
    // r below the uncensored count makes every RDCS replicate fail.
    let cfg = small(&[("estimators", "uniform:300, rdcs:50:40")]);
    let res = run_simulation(&cfg).unwrap();
    let rdcs = res.summary.estimator("rdcs:50:40").unwrap();
    assert_eq!((rdcs.successes, rdcs.failures), (0, 12));
    assert!(rdcs.rmse.iter().all(|x| x.is_nan()));
    let unif = res.summary.estimator("uniform:300").unwrap();
    assert_eq!(unif.successes + unif.failures, 12);
    assert!(unif.successes > 0);
    let failed = res.replicates.iter().filter(|r| r.label == "rdcs:50:40");
    assert!(failed.into_iter().all(|r| r.status == Status::Failed && r.error.is_some()));
}

#[test]
fn single_point_sweep_matches_direct_run() {
    let cfg = small(&[("m", "4")]);
    let points = sweep_censoring(&cfg, &[0.8]).unwrap();
    let direct = run_simulation(&cfg).unwrap();
    assert_eq!(points[0].summary.as_ref().unwrap(), &direct.summary);
}

#[test]
fn sweep_records_unreachable_rates() {
    // With truncation ages up to 1 the reachable rate tops out near 0.96.
    let cfg = small(&[("m", "3"), ("trunc_b", "1"), ("estimators", "uniform:300, rds:300:150")]);
    let points = sweep_censoring(&cfg, &[0.5, 0.99]).unwrap();
    assert!(points[0].summary.is_some());
    assert!(points[1].summary.is_none() && points[1].error.is_some());
    let csv = sweep_csv(&points);
    // Header, 2 estimators x 2 parameters at the good point, one row at the bad one.
    assert_eq!(csv.lines().count(), 1 + 4 + 1);
}

#[test]
fn file_source_uses_one_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let ds: Dataset = (0..400)
        .map(|i| {
            let t = 0.5 + (i as f64 * 0.37) % 6.0;
            Observation::new(t, i % 3 == 0, 0.0).unwrap()
        })
        .collect();
    let mut buf = Vec::new();
    write_csv(&ds, &mut buf).unwrap();
    std::fs::write(dir.path().join("units.csv"), &buf).unwrap();
    let cfg = SimConfig::from_text("model = weibull\ndata = units.csv\nestimators = rds:100:50\nm = 5", dir.path()).unwrap();
    assert!(cfg.fix_dataset);
    let res = run_simulation(&cfg).unwrap();
    assert_eq!(res.summary.n, 400);
    assert!(res.replicates.iter().all(|r| (r.alpha - ds.alpha()).abs() < 1e-15));
}

#[test]
fn csv_round_trip() {
    let ds: Dataset = [(1.5, false, 0.2), (3.0, true, 1.0)].iter().map(|&(t, c, l)| Observation::new(t, c, l).unwrap()).collect();
    let mut buf = Vec::new();
    write_csv(&ds, &mut buf).unwrap();
    let back = parse_csv(std::str::from_utf8(&buf).unwrap(), 1.0).unwrap();
    assert_eq!(back, ds);
}

#[test]
fn malformed_csv_names_the_line() {
    let err = parse_csv("t,censored,t_trunc\n1.0,0,0\n2.0,maybe,0\n", 1.0).unwrap_err();
    assert!(matches!(err, Error::MalformedRow { line: 3, .. }), "{err:?}");
    assert!(err.to_string().contains('3'), "{err}");
}

fn mttf_of(params: ParamVector, scale: f64) -> f64 {
    let ds: Dataset = [(1.0, false, 0.0), (2.0, true, 0.0)].iter().map(|&(t, c, l)| Observation::new(t, c, l).unwrap()).collect();
    let mut rep = full_mle(&ds, params.model(), &OptimizerConfig::default()).unwrap();
    rep.theta_tilde = params;
    mttf_report(&rep, 0, scale).unwrap().mttf
}

#[test]
fn mttf_examples() {
    assert_eq!(mttf_of(ParamVector::exponential(0.5).unwrap(), 1.0), 2.0);
    assert!((mttf_of(ParamVector::weibull(1.0, 4.0).unwrap(), 1.0) - 4.0).abs() < 1e-12);
    let scaled = mttf_of(ParamVector::weibull(1.0, 1.05).unwrap(), 1e-6);
    assert!((scaled - 1.05e6).abs() < 1e-6);
}

#[test]
fn mttf_rejects_unconverged_fits() {
    let ds: Dataset = [(1.0, false, 0.0)].iter().map(|&(t, c, l)| Observation::new(t, c, l).unwrap()).collect();
    let mut rep = full_mle(&ds, ModelKind::Exponential, &OptimizerConfig::default()).unwrap();
    rep.converged = false;
    assert!(matches!(mttf_report(&rep, 0, 1.0), Err(Error::DidNotConverge { .. })));
    assert_eq!(rep.method, Method::Full);
}

#[test]
fn prob_export_counts_every_unit() {
    let ds: Dataset = (1..=50).map(|i| Observation::new(i as f64 / 10.0, i % 4 != 0, 0.0).unwrap()).collect();
    let th = ParamVector::weibull(1.5, 3.0).unwrap();
    for kind in [ProbKind::Rds, ProbKind::Aopt, ProbKind::Rdcs] {
        let (units, hist) = export_prob_histogram(&ds, &th, kind, 8).unwrap();
        let listed = units.lines().count() - 1;
        let binned: usize = hist.bins.iter().map(|b| b.uncensored + b.censored).sum();
        assert_eq!(listed, hist.units);
        assert_eq!(binned + hist.zero, hist.units);
        let expected = if kind == ProbKind::Rdcs { ds.n1() } else { ds.n() };
        assert_eq!(hist.units, expected, "{kind:?}");
    }
}
