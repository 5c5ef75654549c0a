use std::sync::OnceLock;

use stsmooth::bench::*;
use stsmooth::selection::{CvConfig, FitContext, LambdaGrid, Method, PriorConfig};
use stsmooth::simulate::*;
use stsmooth::splines::TensorBasisSpec;

fn truth() -> &'static GroundTruth {
    static TRUTH: OnceLock<GroundTruth> = OnceLock::new();
    TRUTH.get_or_init(|| default_truth(DEFAULT_FLOW_SEED).unwrap())
}

fn small_config() -> BenchConfig {
    BenchConfig {
        scenarios: vec![3],
        methods: vec![Method::Map, Method::Aicc, Method::BayesAvg, Method::CvWell],
        replicates: 2,
        base_seed: 40,
        grid: LambdaGrid::uniform(-6.0, 4.0, 41).unwrap(),
        ise_resolution: [40, 40, 20],
        ..BenchConfig::default()
    }
}

#[test]
fn single_replicate_matches_a_manual_run() {
    let cfg = BenchConfig {
        replicates: 1,
        ..small_config()
    };
    let res = run_benchmark(&cfg, truth()).unwrap();
    assert!(res.failures.is_empty());

    let seed = cfg.base_seed;
    let ds = build_scenario(truth(), &ScenarioSpec::new(3, seed).unwrap()).unwrap();
    let spec = TensorBasisSpec::for_dataset(&ds, cfg.counts, cfg.degree, cfg.penalty_order).unwrap();
    let ctx = FitContext::new(&ds, &spec).unwrap();
    let ise = IseEvaluator::new(truth(), &scenario_hull(&ds).unwrap(), ds.transform(), cfg.ise_resolution).unwrap();
    let cv = CvConfig {
        folds: cfg.cv_folds,
        seed,
    };
    for &m in &cfg.methods {
        let fit = ctx.fit(m, &cfg.prior, &cfg.grid, &cv).unwrap();
        let err = ise.evaluate(&fit).unwrap();
        let rec = res.cell(3, m)[0];
        assert_eq!(rec.seed, seed);
        assert_eq!(rec.ise, err.ise, "{m}");
        assert_eq!(rec.max_abs_error, err.max_abs_error);
        assert_eq!(rec.edf, fit.edf);
        match fit.lambda {
            Some(l) => assert_eq!(rec.lambda, l),
            None => assert!(rec.lambda > 0.0),
        }
    }
}

#[test]
fn outputs_have_one_row_per_cell_and_replicate() {
    let cfg = small_config();
    let res = run_benchmark(&cfg, truth()).unwrap();
    assert_eq!(res.records.len(), cfg.methods.len() * cfg.replicates);

    let mut summary = Vec::new();
    res.write_results_csv(&mut summary).unwrap();
    let summary = String::from_utf8(summary).unwrap();
    let mut lines = summary.lines();
    assert_eq!(lines.next(), Some("scenario,method,mean_ise,stderr,n_valid"));
    assert_eq!(lines.count(), cfg.methods.len());

    let mut samples = Vec::new();
    res.write_lambda_samples_csv(&mut samples).unwrap();
    let samples = String::from_utf8(samples).unwrap();
    assert!(samples.starts_with("scenario,method,replicate,seed,lambda,log10_lambda,edf,ise\n"));
    assert_eq!(samples.lines().count(), 1 + res.records.len());

    for row in res.summary() {
        let ise: Vec<f64> = res.cell(row.scenario, row.method).iter().map(|r| r.ise).collect();
        let mean = ise.iter().sum::<f64>() / 2.0;
        let sd = ((ise[0] - mean).powi(2) + (ise[1] - mean).powi(2)).sqrt();
        assert!((row.mean_ise - mean).abs() <= 1e-14 * mean);
        assert!((row.stderr - sd / 2f64.sqrt()).abs() <= 1e-12 * mean);
        assert_eq!(row.n_valid, 2);
    }
}

#[test]
fn reruns_are_identical() {
    let cfg = small_config();
    assert_eq!(run_benchmark(&cfg, truth()).unwrap(), run_benchmark(&cfg, truth()).unwrap());
}

#[test]
fn invalid_configurations_are_rejected() {
    let bad = [
        BenchConfig {
            replicates: 0,
            ..small_config()
        },
        BenchConfig {
            methods: vec![],
            ..small_config()
        },
        BenchConfig {
            scenarios: vec![5],
            ..small_config()
        },
        BenchConfig {
            prior: PriorConfig {
                a: -1.0,
                ..PriorConfig::default()
            },
            ..small_config()
        },
    ];
    for cfg in bad {
        assert!(run_benchmark(&cfg, truth()).is_err());
    }
}
