mod common;

use std::sync::Arc;

use common::*;
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stsmooth::data_model::{Dataset, Observation, Transform};
use stsmooth::decomposition::{decompose, reduce_penalty, PenaltyBasis};
use stsmooth::selection::*;
use stsmooth::sparse::SparseMatrix;
use stsmooth::Error;

fn dataset_from(inst: &Instance, n_wells: usize) -> Dataset {
    let obs = inst
        .points
        .iter()
        .zip(&inst.y)
        .enumerate()
        .map(|(i, (p, &v))| Observation {
            well_id: format!("w{:02}", i % n_wells),
            s1: p[0],
            s2: p[1],
            t: p[2],
            value: v,
        })
        .collect();
    Dataset::new(obs, Transform::Identity).unwrap()
}

#[test]
fn log_posterior_matches_dense_formula() {
    let prior = PriorConfig::default();
    for seed in 0..40 {
        let inst = random_instance(seed);
        let model = decompose(&inst.b, &reduce_penalty(&inst.d).unwrap(), &inst.y).unwrap();
        for lambda in [1e-4, 1e-2, 1.0, 1e2, 1e4] {
            let fast = log_posterior_lambda(&model, lambda, &prior).unwrap();
            let slow = dense_log_posterior(&inst.b, &inst.d, &inst.y, lambda, prior.a, prior.b);
            assert!((fast - slow).abs() < 1e-8, "seed {seed} λ {lambda}: {fast} vs {slow}");
        }
    }
}

#[test]
fn log_uniform_prior_adds_jacobian() {
    let inst = random_instance(3);
    let model = decompose(&inst.b, &reduce_penalty(&inst.d).unwrap(), &inst.y).unwrap();
    let flat = PriorConfig::default();
    let logu = PriorConfig {
        lambda_prior: LambdaPrior::UniformOnLogLambda,
        ..flat
    };
    for lambda in [0.01, 3.0] {
        let d = log_posterior_lambda(&model, lambda, &logu).unwrap() - log_posterior_lambda(&model, lambda, &flat).unwrap();
        assert!((d + lambda.ln()).abs() < 1e-12);
    }
    assert!(matches!(log_posterior_lambda(&model, 0.0, &flat), Err(Error::Config(_))));
    assert!(matches!(log_posterior_lambda(&model, -1.0, &flat), Err(Error::Config(_))));
}

#[test]
fn criteria_match_dense_oracle() {
    for seed in 0..20 {
        let inst = random_instance(seed);
        let model = decompose(&inst.b, &reduce_penalty(&inst.d).unwrap(), &inst.y).unwrap();
        let n = inst.y.len() as f64;
        for lambda in [1e-2, 1.0, 1e2] {
            let o = dense_fit(&inst.b, &inst.d, &inst.y, lambda);
            let gcv = n * o.rss / (n - o.edf).powi(2);
            let bic = n * (o.rss / n).ln() + o.edf * n.ln();
            let aicc = n * (o.rss / n).ln() + 2.0 * o.edf + 2.0 * o.edf * (o.edf + 1.0) / (n - o.edf - 1.0);
            assert!(rel_err(criterion_score(&model, lambda, Criterion::Gcv).unwrap(), gcv) < 1e-8);
            assert!((criterion_score(&model, lambda, Criterion::Bic).unwrap() - bic).abs() < 1e-7);
            if n - o.edf - 1.0 > 0.0 {
                assert!((criterion_score(&model, lambda, Criterion::Aicc).unwrap() - aicc).abs() < 1e-7);
            }
        }
    }
}

#[test]
fn aicc_undefined_when_edf_exhausts_data() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    // n = 20 < p = 27: as λ → 0 the fit interpolates
    let inst = instance_with(&mut rng, [3, 3, 3], 1, 1, 20);
    let model = decompose(&inst.b, &reduce_penalty(&inst.d).unwrap(), &inst.y).unwrap();
    let err = criterion_score(&model, 1e-9, Criterion::Aicc).unwrap_err();
    assert!(matches!(err, Error::CriterionUndefined { .. }));
    let grid = LambdaGrid::uniform(-9.0, 2.0, 12).unwrap();
    let scores = criterion_scores(&model, &grid, Criterion::Aicc).unwrap();
    assert_eq!(scores[0], f64::INFINITY);
    let sel = criterion_select(&model, &grid, Criterion::Aicc).unwrap();
    assert!(sel.lambda.unwrap() > 1e-9);
}

#[test]
fn gcv_null_fit_limit() {
    let inst = random_instance(12);
    let spec = stsmooth::splines::TensorBasisSpec::new(inst.spec.dims, 1).unwrap();
    let d = stsmooth::splines::difference_penalty(&spec).unwrap();
    let mean = inst.y.iter().sum::<f64>() / inst.y.len() as f64;
    let yc: Vec<f64> = inst.y.iter().map(|v| v - mean).collect();
    let model = decompose(&inst.b, &reduce_penalty(&d).unwrap(), &yc).unwrap();
    let n = yc.len() as f64;
    let tss: f64 = yc.iter().map(|v| v * v).sum();
    let gcv = criterion_score(&model, 1e12, Criterion::Gcv).unwrap();
    assert!(rel_err(gcv, n * tss / (n - 1.0).powi(2)) < 1e-6);
}

#[test]
fn map_refinement_dominates_grid() {
    let prior = PriorConfig::default();
    let grid = LambdaGrid::uniform(-6.0, 6.0, 25).unwrap();
    for seed in 0..20 {
        let inst = random_instance(seed);
        let model = decompose(&inst.b, &reduce_penalty(&inst.d).unwrap(), &inst.y).unwrap();
        let sel = map_lambda(&model, &grid, &prior).unwrap();
        let best = log_posterior_lambda(&model, sel.lambda.unwrap(), &prior).unwrap();
        let grid_max = sel.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(best >= grid_max);
        let w = sel.weights.unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn map_is_stable_under_grid_refinement() {
    let prior = PriorConfig::default();
    let inst = random_instance(5);
    let model = decompose(&inst.b, &reduce_penalty(&inst.d).unwrap(), &inst.y).unwrap();
    let coarse = map_lambda(&model, &LambdaGrid::uniform(-6.0, 6.0, 25).unwrap(), &prior).unwrap();
    let fine = map_lambda(&model, &LambdaGrid::uniform(-6.0, 6.0, 97).unwrap(), &prior).unwrap();
    if !coarse.at_boundary && !fine.at_boundary {
        assert!((coarse.lambda.unwrap().log10() - fine.lambda.unwrap().log10()).abs() < 0.125);
    }
}

#[test]
fn map_boundary_is_flagged_not_fatal() {
    let inst = random_instance(6);
    let model = decompose(&inst.b, &reduce_penalty(&inst.d).unwrap(), &inst.y).unwrap();
    // a grid far below any plausible mode
    let sel = map_lambda(&model, &LambdaGrid::uniform(-12.0, -10.0, 5).unwrap(), &PriorConfig::default()).unwrap();
    assert!(sel.at_boundary);
    assert!(!sel.warnings.is_empty());
}

#[test]
fn leave_one_out_matches_brute_force_refits() {
    let mut rng = ChaCha8Rng::seed_from_u64(40);
    let inst = instance_with(&mut rng, [3, 3, 3], 2, 1, 24);
    let basis = Arc::new(PenaltyBasis::new(&reduce_penalty(&inst.d).unwrap()).unwrap());
    let grid = LambdaGrid::uniform(-3.0, 3.0, 7).unwrap();
    let n = inst.y.len();
    let folds: Vec<usize> = (0..n).collect();
    let cv = cross_validate_with_folds(&inst.b, &inst.y, &basis, &grid, &folds, n).unwrap();
    assert!(cv.invalid_folds.is_empty());
    let bd = dense(&inst.b);
    for (gi, lambda) in grid.lambdas().into_iter().enumerate() {
        let mut total = 0.0;
        for i in 0..n {
            let keep: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            let b_i: SparseMatrix = inst.b.select_rows(&keep);
            let y_i: Vec<f64> = keep.iter().map(|&j| inst.y[j]).collect();
            let alpha = dense_fit(&b_i, &inst.d, &y_i, lambda).alpha;
            let pred = (bd.row(i) * &alpha)[(0, 0)];
            total += (inst.y[i] - pred).powi(2);
        }
        assert!(rel_err(cv.scores[gi], total) < 1e-8, "λ {lambda}");
    }
}

#[test]
fn fold_leakage_changes_scores() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let inst = instance_with(&mut rng, [4, 3, 3], 2, 1, 30);
    let doubled = SparseMatrix::vstack(&[inst.b.clone(), inst.b.clone()]);
    let y2: Vec<f64> = inst.y.iter().chain(&inst.y).copied().collect();
    let basis = Arc::new(PenaltyBasis::new(&reduce_penalty(&inst.d).unwrap()).unwrap());
    let grid = LambdaGrid::uniform(-3.0, 3.0, 7).unwrap();
    let together: Vec<usize> = (0..60).map(|i| (i % 30) % 5).collect();
    let split: Vec<usize> = (0..60).map(|i| if i < 30 { i % 5 } else { (i + 1) % 5 }).collect();
    let a = cross_validate_with_folds(&doubled, &y2, &basis, &grid, &together, 5).unwrap();
    let b = cross_validate_with_folds(&doubled, &y2, &basis, &grid, &split, 5).unwrap();
    // leaked copies make small λ look good
    assert!(b.scores[0] < a.scores[0]);
}

#[test]
fn select_is_deterministic_and_consistent() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let inst = instance_with(&mut rng, [4, 4, 3], 2, 1, 60);
    let ds = dataset_from(&inst, 12);
    let prior = PriorConfig::default();
    let grid = LambdaGrid::uniform(-4.0, 4.0, 33).unwrap();
    let cv = CvConfig { folds: 4, seed: 7 };
    for method in Method::ALL {
        let a = select(&ds, &inst.spec, method, &prior, &grid, &cv).unwrap();
        let b = select(&ds, &inst.spec, method, &prior, &grid, &cv).unwrap();
        assert_eq!(a, b, "{method}");
        if let Some(l) = a.lambda {
            let o = dense_fit(&inst.b, &inst.d, &inst.y, l);
            assert!(vec_rel_err(&a.coefficients, &o.alpha) < 1e-8);
        }
    }
}

#[test]
fn model_average_is_weighted_sum_of_grid_fits() {
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let inst = instance_with(&mut rng, [4, 4, 3], 2, 1, 60);
    let ds = dataset_from(&inst, 12);
    let grid = LambdaGrid::uniform(-4.0, 4.0, 33).unwrap();
    let fit = select(&ds, &inst.spec, Method::BayesAvg, &PriorConfig::default(), &grid, &CvConfig::default()).unwrap();
    assert!(fit.is_model_averaged());
    let mut want = DVector::zeros(inst.spec.n_coef());
    for (l, w) in fit.averaging.as_ref().unwrap() {
        want += dense_fit(&inst.b, &inst.d, &inst.y, *l).alpha * *w;
    }
    assert!(vec_rel_err(&fit.coefficients, &want) < 1e-8);
}

#[test]
fn cross_validation_preconditions() {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let inst = instance_with(&mut rng, [4, 4, 3], 2, 1, 40);
    let ds = dataset_from(&inst, 5);
    let ctx = FitContext::new(&ds, &inst.spec).unwrap();
    let grid = LambdaGrid::default();
    let err = ctx
        .cross_validate(&grid, CvMode::ByWell, &CvConfig { folds: 10, seed: 1 })
        .unwrap_err();
    assert!(matches!(err, Error::Config(_)));
    assert!(ctx.cross_validate(&grid, CvMode::ByWell, &CvConfig { folds: 5, seed: 1 }).is_ok());
}

#[test]
fn trace_csv_has_expected_columns() {
    let mut rng = ChaCha8Rng::seed_from_u64(45);
    let inst = instance_with(&mut rng, [4, 4, 3], 2, 1, 40);
    let ds = dataset_from(&inst, 8);
    let fit = select(&ds, &inst.spec, Method::CvWell, &PriorConfig::default(), &LambdaGrid::default(), &CvConfig { folds: 4, seed: 2 }).unwrap();
    let mut buf = Vec::new();
    fit.trace.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "log10_lambda,map_logpost,aicc,gcv,bic,cv_obs,cv_well");
    let first: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(first.len(), 7);
    assert_eq!(first[5], "");
    assert!(first[6].parse::<f64>().is_ok());
    assert_eq!(text.lines().count(), 102);
}
