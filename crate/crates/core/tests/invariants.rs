mod common;

use common::*;
use proptest::prelude::*;
use stsmooth::data_model::Range;
use stsmooth::decomposition::{decompose, reduce_penalty};
use stsmooth::splines::{bspline_basis_1d, tensor_design_points, BasisDim, TensorBasisSpec};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn basis_partition_of_unity(
        n_basis in 3usize..12,
        degree in 0usize..4,
        lo in -50.0f64..50.0,
        width in 0.1f64..100.0,
        u in prop::collection::vec(0.0f64..=1.0, 1..40),
    ) {
        prop_assume!(n_basis > degree);
        let dim = BasisDim::new(n_basis, degree, Range { lo, hi: lo + width }).unwrap();
        let x: Vec<f64> = u.iter().map(|t| lo + t * width).collect();
        let b = bspline_basis_1d(&x, &dim).unwrap();
        for (cols, vals) in b.rows() {
            prop_assert!(cols.len() <= degree + 1);
            prop_assert!(vals.iter().all(|&v| v >= 0.0));
            prop_assert!((vals.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tensor_rows_sum_to_one(
        counts in (3usize..7, 3usize..7, 3usize..6),
        pts in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0), 1..30),
    ) {
        let spec = TensorBasisSpec::new(unit_dims([counts.0, counts.1, counts.2], 2), 2).unwrap();
        let p: Vec<[f64; 3]> = pts.iter().map(|&(a, b, c)| [a, b, c]).collect();
        let b = tensor_design_points(&p, &spec).unwrap();
        for (cols, vals) in b.rows() {
            prop_assert!(cols.len() <= 27);
            prop_assert!((vals.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn edf_decreases_and_stays_between_flat_and_full(seed in 0u64..1000, l1 in -6.0f64..6.0, step in 0.05f64..3.0) {
        let inst = random_instance(seed);
        let model = decompose(&inst.b, &reduce_penalty(&inst.d).unwrap(), &inst.y).unwrap();
        let (lo, hi) = (10f64.powf(l1), 10f64.powf(l1 + step));
        let (e_lo, e_hi) = (model.edf(lo), model.edf(hi));
        prop_assert!(e_hi <= e_lo + 1e-12);
        prop_assert!(e_hi >= model.flat_dim() as f64 - 1e-12);
        prop_assert!(e_lo <= model.n_coef().min(model.n_obs()) as f64 + 1e-9);
        let rss_lo = model.evaluate(lo).unwrap().rss;
        let rss_hi = model.evaluate(hi).unwrap().rss;
        prop_assert!(rss_hi >= rss_lo * (1.0 - 1e-12));
    }
}
