//! λ-independent factorization of the penalized least-squares problem
//!
//! ```text
//!     minimize ‖y − Bα‖² + λ‖Dα‖²
//! ```
//!
//! The coefficient space is rotated with a QR factorization of `Dᵀ` into a
//! penalized block `α̃₁ = D α` (standard normal prior, scale `σ²/λ`) and an
//! unpenalized block `α̃₂` spanning the null space of `D` (flat prior). The
//! observation space is then rotated with a QR factorization of the design
//! of the flat block, `B̃₂ = B Q̃₂`, so that `α̃₂` only touches `l` rotated
//! observations and can be solved for exactly. What remains is a ridge
//! problem in `α̃₁` whose SVD makes every λ-dependent quantity (estimates,
//! residual sums of squares, log-determinants, effective degrees of freedom)
//! cheap to evaluate.
//!
//! Both QR factorizations run on sparse rows ([`RowQr`]); only the SVD of the
//! rotated ridge block is dense.

use std::cell::Cell;
use std::sync::Arc;

use faer::Mat;

use crate::error::{Error, Result};
use crate::givens::RowQr;
use crate::sparse::SparseMatrix;

const RANK_TOL: f64 = 1e-8;
/// Reciprocal condition threshold for the flat-block design `B̆₁₂`.
pub const FLAT_BLOCK_RCOND: f64 = 1e-10;

thread_local! {
    static FACTORIZATIONS: Cell<usize> = const { Cell::new(0) };
}

/// Number of O(p³) factorizations performed on the current thread: one per
/// [`PenaltyBasis`] and one per data decomposition. Per-λ evaluation never
/// increments it.
pub fn factorization_count() -> usize {
    FACTORIZATIONS.with(|c| c.get())
}

fn count_factorization() {
    FACTORIZATIONS.with(|c| c.set(c.get() + 1));
}

/// Replaces a rank-deficient penalty by a full-row-rank `D_red` with
/// `D_redᵀ D_red = DᵀD` (the nonzero rows of the R factor of `D`).
pub fn reduce_penalty(d: &SparseMatrix) -> Result<SparseMatrix> {
    if d.nnz() == 0 {
        return Err(Error::Config("penalty matrix is identically zero".into()));
    }
    Ok(RowQr::factor(d, RANK_TOL).r_factor())
}

/// The data-independent part of the reparametrization, shared by every
/// dataset (and cross-validation fold) fitted with the same penalty.
#[derive(Debug, Clone)]
pub struct PenaltyBasis {
    n_coef: usize,
    rank: usize,
    /// `Q̃₁ R̃₁ᵀ⁻¹`, row-major `p × r`: maps `α̃₁` to its share of `α`.
    proper: Vec<f64>,
    /// `Q̃₂`, row-major `p × l`: orthonormal basis of the penalty null space.
    flat: Vec<f64>,
    /// `log |det R̃₁|`.
    log_abs_det_r1: f64,
}

impl PenaltyBasis {
    pub fn new(d_red: &SparseMatrix) -> Result<Self> {
        let (r, p) = (d_red.n_rows(), d_red.n_cols());
        if r == 0 || r > p {
            return Err(Error::Config(format!("reduced penalty has {r} rows for {p} coefficients")));
        }
        let qr = RowQr::factor(&d_red.transpose(), RANK_TOL);
        if qr.rank() != r {
            return Err(Error::Config(format!(
                "penalty is not of full row rank ({} of {r}); reduce it first",
                qr.rank()
            )));
        }
        count_factorization();

        // Qᵀ replayed on the identity: register i ends up holding row i of Qᵀ.
        let mut qt = vec![0.0; p * p];
        for i in 0..p {
            qt[i * p + i] = 1.0;
        }
        qr.apply_qt(&mut qt, p);
        let slots = qr.slot_registers();
        let dropped = qr.dropped_registers();
        let r1 = qr.r_factor();

        // Solve R̃₁ X = Q̃₁ᵀ from the bottom row up; X = (Q̃₁ R̃₁ᵀ⁻¹)ᵀ.
        let mut x = vec![0.0; r * p];
        let mut log_abs_det_r1 = 0.0;
        for k in (0..r).rev() {
            let (cols, vals) = r1.row(k);
            debug_assert_eq!(cols[0], k);
            let diag = vals[0];
            log_abs_det_r1 += diag.abs().ln();
            let mut acc = qt[slots[k] * p..(slots[k] + 1) * p].to_vec();
            for (&j, &v) in cols[1..].iter().zip(&vals[1..]) {
                let xj = &x[j * p..(j + 1) * p];
                for (a, b) in acc.iter_mut().zip(xj) {
                    *a -= v * b;
                }
            }
            for a in acc.iter_mut() {
                *a /= diag;
            }
            x[k * p..(k + 1) * p].copy_from_slice(&acc);
        }
        let mut proper = vec![0.0; p * r];
        for k in 0..r {
            for j in 0..p {
                proper[j * r + k] = x[k * p + j];
            }
        }
        let l = dropped.len();
        let mut flat = vec![0.0; p * l];
        for (c, &reg) in dropped.iter().enumerate() {
            for j in 0..p {
                flat[j * l + c] = qt[reg * p + j];
            }
        }
        Ok(PenaltyBasis {
            n_coef: p,
            rank: r,
            proper,
            flat,
            log_abs_det_r1,
        })
    }

    pub fn n_coef(&self) -> usize {
        self.n_coef
    }

    /// Row rank `r` of the reduced penalty.
    pub fn rank(&self) -> usize {
        self.rank
    }

    /// Dimension `l = p − r` of the flat-prior block.
    pub fn flat_dim(&self) -> usize {
        self.n_coef - self.rank
    }

    pub fn log_abs_det_r1(&self) -> f64 {
        self.log_abs_det_r1
    }

    /// `(x̃₁, x̃₂) = (Pᵀx, Q̃₂ᵀx)` for a sparse row `x` of length `p`.
    pub fn rotate_row(&self, cols: &[usize], vals: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (r, l) = (self.rank, self.flat_dim());
        let mut a = vec![0.0; r];
        let mut b = vec![0.0; l];
        for (&j, &v) in cols.iter().zip(vals) {
            for (o, s) in a.iter_mut().zip(&self.proper[j * r..(j + 1) * r]) {
                *o += v * s;
            }
            for (o, s) in b.iter_mut().zip(&self.flat[j * l..(j + 1) * l]) {
                *o += v * s;
            }
        }
        (a, b)
    }

    /// `α = Q̃₁ R̃₁ᵀ⁻¹ α̃₁ + Q̃₂ α̃₂`.
    pub fn to_coefficients(&self, proper: &[f64], flat: &[f64]) -> Vec<f64> {
        let (r, l) = (self.rank, self.flat_dim());
        (0..self.n_coef)
            .map(|j| {
                let a: f64 = self.proper[j * r..(j + 1) * r].iter().zip(proper).map(|(x, y)| x * y).sum();
                let b: f64 = self.flat[j * l..(j + 1) * l].iter().zip(flat).map(|(x, y)| x * y).sum();
                a + b
            })
            .collect()
    }

    /// Rotated design rows `[B̃₁ | B̃₂]` as two row-major blocks.
    fn rotate_design(&self, b: &SparseMatrix) -> (Vec<f64>, Vec<f64>) {
        let (r, l, n) = (self.rank, self.flat_dim(), b.n_rows());
        let mut b1 = vec![0.0; n * r];
        let mut b2 = vec![0.0; n * l];
        for (i, (cols, vals)) in b.rows().enumerate() {
            let (x1, x2) = self.rotate_row(cols, vals);
            b1[i * r..(i + 1) * r].copy_from_slice(&x1);
            b2[i * l..(i + 1) * l].copy_from_slice(&x2);
        }
        (b1, b2)
    }
}

/// λ-dependent scalars of a fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LambdaSummary {
    pub lambda: f64,
    /// `‖y − Bα̂‖²`.
    pub rss: f64,
    /// `yᵀ(I − S(λ))y = RSS + λ‖Dα̂‖²`, with `S` the hat matrix.
    pub quad_form: f64,
    /// `log det(BᵀB + λDᵀD)`.
    pub log_det: f64,
    /// `trace S(λ)`.
    pub edf: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSolution {
    pub summary: LambdaSummary,
    pub coefficients: Vec<f64>,
}

/// Everything needed to evaluate the fit at any λ in O(p) (scalars) or
/// O(p²) (coefficients). Immutable; safe to share across threads.
#[derive(Debug, Clone)]
pub struct DecomposedModel {
    basis: Arc<PenaltyBasis>,
    n_obs: usize,
    y_norm2: f64,
    /// `y̆₁`, length `l`.
    y1: Vec<f64>,
    /// `B̆₁₂` (upper triangular, `l × l`), row-major.
    b12: Vec<f64>,
    /// `B̆₁₂⁻¹ y̆₁`.
    flat_offset: Vec<f64>,
    /// `B̆₁₂⁻¹ B̆₁₁`, `l × r`.
    flat_gain: Mat<f64>,
    log_det_b12tb12: f64,
    sigma: Vec<f64>,
    /// `Uᵀ y̆₂`.
    uty: Vec<f64>,
    v: Mat<f64>,
    /// Part of `y̆₂` orthogonal to the columns of `U`.
    rho2: f64,
}

/// Full pipeline: penalty basis from `d_red`, then the data decomposition.
pub fn decompose(b: &SparseMatrix, d_red: &SparseMatrix, y: &[f64]) -> Result<DecomposedModel> {
    let basis = Arc::new(PenaltyBasis::new(d_red)?);
    DecomposedModel::new(b, basis, y)
}

fn back_substitute_upper(a: &[f64], n: usize, rhs: &[f64]) -> Vec<f64> {
    let mut x = rhs.to_vec();
    for i in (0..n).rev() {
        let s: f64 = ((i + 1)..n).map(|j| a[i * n + j] * x[j]).sum();
        x[i] = (x[i] - s) / a[i * n + i];
    }
    x
}

fn forward_substitute_upper_t(a: &[f64], n: usize, rhs: &[f64]) -> Vec<f64> {
    // solves Aᵀ x = rhs for upper-triangular A
    let mut x = rhs.to_vec();
    for i in 0..n {
        let s: f64 = (0..i).map(|j| a[j * n + i] * x[j]).sum();
        x[i] = (x[i] - s) / a[i * n + i];
    }
    x
}

impl DecomposedModel {
    pub fn new(b: &SparseMatrix, basis: Arc<PenaltyBasis>, y: &[f64]) -> Result<Self> {
        let n = b.n_rows();
        let (r, l) = (basis.rank(), basis.flat_dim());
        if b.n_cols() != basis.n_coef() {
            return Err(Error::Config(format!(
                "design has {} columns but the penalty acts on {}",
                b.n_cols(),
                basis.n_coef()
            )));
        }
        if y.len() != n {
            return Err(Error::Config(format!("{} responses for {n} design rows", y.len())));
        }
        if n < l {
            return Err(Error::Unidentifiable(format!(
                "{n} observations cannot determine a {l}-dimensional unpenalized component"
            )));
        }
        let (mut b1, b2) = basis.rotate_design(b);
        let mut yv = y.to_vec();

        let (y1, y2, b11_rows, b21_rows, b12) = if l == 0 {
            (Vec::new(), yv, Vec::new(), b1, Vec::new())
        } else {
            let rows = (0..n)
                .map(|i| (0..l).map(|c| (c, b2[i * l + c])).filter(|e| e.1 != 0.0).collect())
                .collect();
            let flat_design = SparseMatrix::from_rows(l, rows);
            let qr = RowQr::factor(&flat_design, 1e-13);
            if qr.rank() < l {
                return Err(Error::Unidentifiable(format!(
                    "the unpenalized design has rank {} < {l}",
                    qr.rank()
                )));
            }
            qr.apply_qt(&mut yv, 1);
            qr.apply_qt(&mut b1, r);
            let slots = qr.slot_registers();
            let dropped = qr.dropped_registers();
            let rf = qr.r_factor();
            let mut b12 = vec![0.0; l * l];
            for i in 0..l {
                let (cols, vals) = rf.row(i);
                for (&c, &v) in cols.iter().zip(vals) {
                    b12[i * l + c] = v;
                }
            }
            let gather = |regs: &[usize]| -> Vec<f64> {
                regs.iter().flat_map(|&g| b1[g * r..(g + 1) * r].iter().copied()).collect()
            };
            let y1: Vec<f64> = slots.iter().map(|&g| yv[g]).collect();
            let y2: Vec<f64> = dropped.iter().map(|&g| yv[g]).collect();
            (y1, y2, gather(&slots), gather(dropped), b12)
        };

        let log_det_b12tb12 = if l > 0 {
            let m = Mat::<f64>::from_fn(l, l, |i, j| b12[i * l + j]);
            let sv = m
                .singular_values()
                .map_err(|e| Error::Numerical(format!("SVD of the flat block failed: {e:?}")))?;
            let (smax, smin) = (sv[0], sv[sv.len() - 1]);
            if !(smin > FLAT_BLOCK_RCOND * smax) {
                return Err(Error::Unidentifiable(format!(
                    "flat-block design is numerically singular (reciprocal condition {:.3e})",
                    smin / smax
                )));
            }
            2.0 * (0..l).map(|i| b12[i * l + i].abs().ln()).sum::<f64>()
        } else {
            0.0
        };

        let m = y2.len();
        let (sigma, uty, v) = if m == 0 || r == 0 {
            (Vec::new(), Vec::new(), Mat::<f64>::zeros(r, 0))
        } else {
            let a = Mat::<f64>::from_fn(m, r, |i, j| b21_rows[i * r + j]);
            let svd = a
                .thin_svd()
                .map_err(|e| Error::Numerical(format!("SVD of the ridge block failed: {e:?}")))?;
            let u = svd.U();
            let s = svd.S().column_vector();
            let k = s.nrows();
            let sigma: Vec<f64> = (0..k).map(|i| s[i]).collect();
            let uty: Vec<f64> = (0..k)
                .map(|c| (0..m).map(|i| u[(i, c)] * y2[i]).sum())
                .collect();
            (sigma, uty, svd.V().to_owned())
        };
        count_factorization();

        let y2_norm2: f64 = y2.iter().map(|v| v * v).sum();
        let rho2 = (y2_norm2 - uty.iter().map(|c| c * c).sum::<f64>()).max(0.0);

        let flat_offset = if l > 0 { back_substitute_upper(&b12, l, &y1) } else { Vec::new() };
        let mut flat_gain = Mat::<f64>::zeros(l, r);
        for c in 0..r {
            let col: Vec<f64> = (0..l).map(|i| b11_rows[i * r + c]).collect();
            let sol = back_substitute_upper(&b12, l, &col);
            for i in 0..l {
                flat_gain[(i, c)] = sol[i];
            }
        }

        Ok(DecomposedModel {
            basis,
            n_obs: n,
            y_norm2: y.iter().map(|v| v * v).sum(),
            y1,
            b12,
            flat_offset,
            flat_gain,
            log_det_b12tb12,
            sigma,
            uty,
            v,
            rho2,
        })
    }

    pub fn basis(&self) -> &Arc<PenaltyBasis> {
        &self.basis
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn n_coef(&self) -> usize {
        self.basis.n_coef()
    }

    pub fn flat_dim(&self) -> usize {
        self.basis.flat_dim()
    }

    pub fn rank_pen(&self) -> usize {
        self.basis.rank()
    }

    /// Singular values of the rotated ridge block, nonincreasing.
    pub fn singular_values(&self) -> &[f64] {
        &self.sigma
    }

    pub fn residual_energy(&self) -> f64 {
        self.rho2
    }

    pub fn y_norm2(&self) -> f64 {
        self.y_norm2
    }

    /// `y̆₁`.
    pub fn flat_response(&self) -> &[f64] {
        &self.y1
    }

    /// `log det(B̆₁₂ᵀB̆₁₂)`.
    pub fn log_det_flat_block(&self) -> f64 {
        self.log_det_b12tb12
    }

    fn check_lambda(&self, lambda: f64) -> Result<()> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        if lambda == 0.0 && (self.sigma.len() < self.rank_pen() || self.sigma.contains(&0.0)) {
            return Err(Error::Singular(
                "lambda = 0 leaves penalized directions without data support".into(),
            ));
        }
        Ok(())
    }

    /// Per-singular-value shrinkage `σᵢ²/(σᵢ² + λ)`.
    pub fn shrinkage_factors(&self, lambda: f64) -> Vec<f64> {
        self.sigma
            .iter()
            .map(|&s| {
                let s2 = s * s;
                if lambda == 0.0 && s2 == 0.0 {
                    0.0
                } else {
                    s2 / (s2 + lambda)
                }
            })
            .collect()
    }

    pub fn edf(&self, lambda: f64) -> f64 {
        self.flat_dim() as f64 + self.shrinkage_factors(lambda).iter().sum::<f64>()
    }

    /// O(p) evaluation of the λ-dependent scalars.
    pub fn evaluate(&self, lambda: f64) -> Result<LambdaSummary> {
        self.check_lambda(lambda)?;
        let mut rss = self.rho2;
        let mut quad = self.rho2;
        let mut log_det = 0.0;
        let mut edf = self.flat_dim() as f64;
        for (&s, &c) in self.sigma.iter().zip(&self.uty) {
            let s2 = s * s;
            let denom = s2 + lambda;
            let keep = lambda / denom;
            rss += keep * keep * c * c;
            quad += keep * c * c;
            log_det += denom.ln();
            edf += s2 / denom;
        }
        let missing = self.rank_pen() - self.sigma.len();
        if missing > 0 {
            log_det += missing as f64 * lambda.ln();
        }
        log_det += self.log_det_b12tb12 + 2.0 * self.basis.log_abs_det_r1();
        Ok(LambdaSummary {
            lambda,
            rss,
            quad_form: quad,
            log_det,
            edf,
        })
    }

    /// Ridge weights `σᵢ (Uᵀy̆₂)ᵢ / (σᵢ² + λ)`; `α̃₁ = V·weights`.
    fn ridge_weights(&self, lambda: f64) -> Vec<f64> {
        self.sigma
            .iter()
            .zip(&self.uty)
            .map(|(&s, &c)| {
                let d = s * s + lambda;
                if d == 0.0 {
                    0.0
                } else {
                    s * c / d
                }
            })
            .collect()
    }

    /// `(α̃₁, α̃₂)` at λ.
    pub fn rotated_coefficients(&self, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_lambda(lambda)?;
        let w = self.ridge_weights(lambda);
        let r = self.rank_pen();
        let proper: Vec<f64> = (0..r)
            .map(|i| w.iter().enumerate().map(|(c, wc)| self.v[(i, c)] * wc).sum())
            .collect();
        let flat: Vec<f64> = (0..self.flat_dim())
            .map(|i| self.flat_offset[i] - (0..r).map(|c| self.flat_gain[(i, c)] * proper[c]).sum::<f64>())
            .collect();
        Ok((proper, flat))
    }

    pub fn solve_for_lambda(&self, lambda: f64) -> Result<LambdaSolution> {
        let summary = self.evaluate(lambda)?;
        let (proper, flat) = self.rotated_coefficients(lambda)?;
        Ok(LambdaSolution {
            summary,
            coefficients: self.basis.to_coefficients(&proper, &flat),
        })
    }

    /// Precomputes fitted values at new design rows as an affine function of
    /// the ridge weights, so that each λ costs O(n_new · p).
    pub fn predictor(&self, b_new: &SparseMatrix) -> LinearPredictor {
        let (r, l, k) = (self.rank_pen(), self.flat_dim(), self.sigma.len());
        let n = b_new.n_rows();
        let (b1, b2) = self.basis.rotate_design(b_new);
        let mut h = Mat::<f64>::from_fn(n, r, |i, j| b1[i * r + j]);
        let mut offset = vec![0.0; n];
        if l > 0 {
            let b2m = Mat::<f64>::from_fn(n, l, |i, j| b2[i * l + j]);
            h -= &b2m * &self.flat_gain;
            for (i, o) in offset.iter_mut().enumerate() {
                *o = (0..l).map(|c| b2[i * l + c] * self.flat_offset[c]).sum();
            }
        }
        let g = if k > 0 { &h * &self.v } else { Mat::<f64>::zeros(n, 0) };
        LinearPredictor { offset, g }
    }

    /// `xᵀ(BᵀB + λDᵀD)⁻¹x` for a sparse coefficient-space row `x`.
    pub fn inverse_quadratic(&self, cols: &[usize], vals: &[f64], lambda: f64) -> Result<f64> {
        self.check_lambda(lambda)?;
        if lambda == 0.0 && self.sigma.len() < self.rank_pen() {
            return Err(Error::Singular("posterior covariance is unbounded at lambda = 0".into()));
        }
        let (r, l, k) = (self.rank_pen(), self.flat_dim(), self.sigma.len());
        let (x1, x2) = self.basis.rotate_row(cols, vals);
        let u1: Vec<f64> = (0..r)
            .map(|c| x1[c] - (0..l).map(|i| self.flat_gain[(i, c)] * x2[i]).sum::<f64>())
            .collect();
        let proj: Vec<f64> = (0..k).map(|c| (0..r).map(|i| self.v[(i, c)] * u1[i]).sum()).collect();
        let u1_norm2: f64 = u1.iter().map(|v| v * v).sum();
        let proj_norm2: f64 = proj.iter().map(|v| v * v).sum();
        let mut q: f64 = proj
            .iter()
            .zip(&self.sigma)
            .map(|(p, s)| p * p / (s * s + lambda))
            .sum();
        if lambda > 0.0 {
            q += (u1_norm2 - proj_norm2).max(0.0) / lambda;
        }
        if l > 0 {
            let z = forward_substitute_upper_t(&self.b12, l, &x2);
            q += z.iter().map(|v| v * v).sum::<f64>();
        }
        Ok(q)
    }
}

/// Fitted values at fixed design rows as a function of λ.
#[derive(Debug, Clone)]
pub struct LinearPredictor {
    offset: Vec<f64>,
    g: Mat<f64>,
}

impl LinearPredictor {
    pub fn len(&self) -> usize {
        self.offset.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offset.is_empty()
    }

    pub fn predict(&self, model: &DecomposedModel, lambda: f64) -> Vec<f64> {
        let w = model.ridge_weights(lambda);
        (0..self.offset.len())
            .map(|i| self.offset[i] + w.iter().enumerate().map(|(c, wc)| self.g[(i, c)] * wc).sum::<f64>())
            .collect()
    }
}
