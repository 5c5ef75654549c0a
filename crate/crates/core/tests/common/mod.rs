//! Shared fixtures and dense oracles for integration tests. The oracles work
//! on explicit dense matrices through `nalgebra`, independently of the
//! sparse/SVD route under test.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stsmooth::data_model::Range;
use stsmooth::sparse::SparseMatrix;
use stsmooth::splines::{difference_penalty, tensor_design_points, BasisDim, TensorBasisSpec};

pub fn dense(m: &SparseMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.n_rows(), m.n_cols(), |i, j| m.get(i, j))
}

pub struct Instance {
    pub spec: TensorBasisSpec,
    pub points: Vec<[f64; 3]>,
    pub b: SparseMatrix,
    pub d: SparseMatrix,
    pub y: Vec<f64>,
}

pub fn unit_dims(counts: [usize; 3], degree: usize) -> [BasisDim; 3] {
    let r = Range { lo: 0.0, hi: 1.0 };
    [
        BasisDim::new(counts[0], degree, r).unwrap(),
        BasisDim::new(counts[1], degree, r).unwrap(),
        BasisDim::new(counts[2], degree, r).unwrap(),
    ]
}

/// Random small tensor problem: p ≤ 30, n ≤ 60.
pub fn random_instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = if rng.random_bool(0.5) { 1 } else { 2 };
    let degree = rng.random_range(1..=2usize);
    let counts = loop {
        let lo = (degree + 1).max(q + 1);
        let c = [rng.random_range(lo..=4), rng.random_range(lo..=4), rng.random_range(lo..=4)];
        if c.iter().product::<usize>() <= 30 {
            break c;
        }
    };
    let n = rng.random_range(12..=60);
    instance_with(&mut rng, counts, degree, q, n)
}

pub fn instance_with(rng: &mut ChaCha8Rng, counts: [usize; 3], degree: usize, q: usize, n: usize) -> Instance {
    let spec = TensorBasisSpec::new(unit_dims(counts, degree), q).unwrap();
    let points: Vec<[f64; 3]> = (0..n)
        .map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()])
        .collect();
    let y = points
        .iter()
        .map(|p| (3.0 * p[0]).sin() + p[1] * p[2] + 0.3 * (rng.random::<f64>() - 0.5))
        .collect();
    let b = tensor_design_points(&points, &spec).unwrap();
    let d = difference_penalty(&spec).unwrap();
    Instance { spec, points, b, d, y }
}

pub struct DenseFit {
    pub alpha: DVector<f64>,
    pub rss: f64,
    pub quad_form: f64,
    pub log_det: f64,
    pub edf: f64,
}

/// Dense solution of the penalized least-squares problem through the
/// augmented matrix M = [B; √λD], so that MᵀM = BᵀB + λDᵀD is never formed:
/// with M = QR, log det = 2Σlog|R_ii| and the hat matrix is Q_B Q_Bᵀ (Q_B the
/// first n rows of Q).
pub fn dense_fit(b: &SparseMatrix, d: &SparseMatrix, y: &[f64], lambda: f64) -> DenseFit {
    let bd = dense(b);
    let dd = dense(d);
    let yv = DVector::from_column_slice(y);
    let n = bd.nrows();
    let mut aug = DMatrix::zeros(n + dd.nrows(), bd.ncols());
    aug.rows_mut(0, n).copy_from(&bd);
    aug.rows_mut(n, dd.nrows()).copy_from(&(&dd * lambda.sqrt()));
    let mut rhs = DVector::zeros(aug.nrows());
    rhs.rows_mut(0, n).copy_from(&yv);
    let alpha = aug.clone().svd(true, true).solve(&rhs, 0.0).expect("svd solve");
    let qr = aug.qr();
    let (q, r) = (qr.q(), qr.r());
    let log_det = 2.0 * r.diagonal().iter().map(|v| v.abs().ln()).sum::<f64>();
    let edf = q.rows(0, n).norm_squared();
    let fitted = &bd * &alpha;
    let rss = (&yv - &fitted).norm_squared();
    let quad_form = rss + lambda * (&dd * &alpha).norm_squared();
    DenseFit {
        alpha,
        rss,
        quad_form,
        log_det,
        edf,
    }
}

/// Dense rank with singular values below `tol·σ_max` treated as zero.
pub fn dense_rank(m: &DMatrix<f64>, tol: f64) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    sv.iter().filter(|&&s| s > tol * smax).count()
}

/// Literal posterior formula for λ, evaluated on dense matrices.
pub fn dense_log_posterior(b: &SparseMatrix, d: &SparseMatrix, y: &[f64], lambda: f64, a: f64, bb: f64) -> f64 {
    let dd = dense(d);
    let rank = dense_rank(&(dd.transpose() * &dd), 1e-10) as f64;
    let fit = dense_fit(b, d, y, lambda);
    let n = y.len() as f64;
    0.5 * rank * lambda.ln() - 0.5 * fit.log_det - (a + 0.5 * n) * (2.0 * bb + fit.quad_form).ln()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

pub fn vec_rel_err(a: &[f64], b: &DVector<f64>) -> f64 {
    let diff: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    diff / b.norm().max(1e-300)
}
