//! B-spline bases on equally spaced knots, the tensor-product design matrix
//! and difference penalties.
//!
//! Coefficients of the trivariate basis are flattened with dimension 1
//! (easting) fastest: `(j, k, l) ↦ j + p1·(k + p2·l)`.

use serde::{Deserialize, Serialize};

use crate::data_model::{Dataset, Range};
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Marginal B-spline basis of `n_basis` functions of `degree` over `range`.
///
/// Knots follow the p-spline convention: `n_basis - degree` equal spans cover
/// the range and `degree` further equally spaced knots extend each end, so
/// every point of the range is covered by exactly `degree + 1` functions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisDim {
    pub n_basis: usize,
    pub degree: usize,
    pub range: Range,
}

impl BasisDim {
    pub fn new(n_basis: usize, degree: usize, range: Range) -> Result<Self> {
        if n_basis < degree + 1 {
            return Err(Error::Config(format!(
                "{n_basis} basis functions cannot carry degree-{degree} splines (need at least {})",
                degree + 1
            )));
        }
        if !(range.lo.is_finite() && range.hi.is_finite()) || range.hi < range.lo {
            return Err(Error::Config(format!("invalid knot range [{}, {}]", range.lo, range.hi)));
        }
        let mut range = range;
        if range.hi == range.lo {
            // a single distinct value still needs a nondegenerate span
            let pad = 0.5 * range.lo.abs().max(1.0);
            range = Range {
                lo: range.lo - pad,
                hi: range.hi + pad,
            };
        }
        Ok(BasisDim {
            n_basis,
            degree,
            range,
        })
    }

    pub fn spans(&self) -> usize {
        self.n_basis - self.degree
    }

    pub fn knot_spacing(&self) -> f64 {
        self.range.width() / self.spans() as f64
    }

    /// Full knot vector, `n_basis + degree + 1` entries.
    pub fn knots(&self) -> Vec<f64> {
        let h = self.knot_spacing();
        (0..self.n_basis + self.degree + 1)
            .map(|i| self.range.lo + (i as f64 - self.degree as f64) * h)
            .collect()
    }

    /// First nonzero column and the `degree + 1` basis values at `x`.
    ///
    /// Spans are half-open except the last, which is closed at the top.
    pub fn eval_local(&self, x: f64, axis: &str) -> Result<(usize, Vec<f64>)> {
        let Range { lo, hi } = self.range;
        let slack = 1e-10 * self.range.width();
        if !(x >= lo - slack && x <= hi + slack) {
            return Err(Error::OutOfRange {
                axis: axis.to_string(),
                value: x,
                lo,
                hi,
            });
        }
        let x = x.clamp(lo, hi);
        let h = self.knot_spacing();
        let u = (x - lo) / h;
        let span = (u.floor() as usize).min(self.spans() - 1);
        // local coordinate within the span, in knot units
        let local = u - span as f64;
        Ok((span, uniform_basis_values(local, self.degree)))
    }
}

/// Cox–de Boor triangle for uniform knots, knot spacing 1. `local` is the
/// position inside the current span, in `[0, 1]`. Returns the values of the
/// `degree + 1` functions supported on the span, leftmost first.
fn uniform_basis_values(local: f64, degree: usize) -> Vec<f64> {
    let mut n = vec![0.0; degree + 1];
    n[0] = 1.0;
    let mut left = vec![0.0; degree + 1];
    let mut right = vec![0.0; degree + 1];
    for j in 1..=degree {
        left[j] = local + (j - 1) as f64;
        right[j] = j as f64 - local;
        let mut saved = 0.0;
        for r in 0..j {
            let tmp = n[r] / (right[r + 1] + left[j - r]);
            n[r] = saved + right[r + 1] * tmp;
            saved = left[j - r] * tmp;
        }
        n[j] = saved;
    }
    n
}

/// Evaluates the basis at each `x` as an `|x| × n_basis` sparse matrix.
pub fn bspline_basis_1d(x: &[f64], dim: &BasisDim) -> Result<SparseMatrix> {
    let rows = x
        .iter()
        .map(|&xi| {
            let (first, vals) = dim.eval_local(xi, "x")?;
            Ok(vals.into_iter().enumerate().map(|(k, v)| (first + k, v)).collect())
        })
        .collect::<Result<Vec<Vec<(usize, f64)>>>>()?;
    Ok(SparseMatrix::from_rows(dim.n_basis, rows))
}

/// Per-dimension basis configuration plus the penalty order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorBasisSpec {
    pub dims: [BasisDim; 3],
    pub penalty_order: usize,
}

pub const AXIS_NAMES: [&str; 3] = ["s1", "s2", "t"];

impl TensorBasisSpec {
    pub fn new(dims: [BasisDim; 3], penalty_order: usize) -> Result<Self> {
        if !(1..=2).contains(&penalty_order) {
            return Err(Error::Config(format!("penalty order must be 1 or 2, got {penalty_order}")));
        }
        for (d, dim) in dims.iter().enumerate() {
            BasisDim::new(dim.n_basis, dim.degree, dim.range)?;
            if penalty_order >= dim.n_basis {
                return Err(Error::Config(format!(
                    "penalty order {penalty_order} needs more than {} basis functions along {}",
                    dim.n_basis, AXIS_NAMES[d]
                )));
            }
        }
        Ok(TensorBasisSpec { dims, penalty_order })
    }

    /// Knots over the data range of each coordinate.
    pub fn for_dataset(ds: &Dataset, counts: [usize; 3], degree: usize, penalty_order: usize) -> Result<Self> {
        let r = ds.ranges();
        let dims = [
            BasisDim::new(counts[0], degree, r[0])?,
            BasisDim::new(counts[1], degree, r[1])?,
            BasisDim::new(counts[2], degree, r[2])?,
        ];
        Self::new(dims, penalty_order)
    }

    pub fn counts(&self) -> [usize; 3] {
        [self.dims[0].n_basis, self.dims[1].n_basis, self.dims[2].n_basis]
    }

    /// Total coefficient count `p1·p2·p3`.
    pub fn n_coef(&self) -> usize {
        self.counts().iter().product()
    }

    pub fn flat_index(&self, j: usize, k: usize, l: usize) -> usize {
        let [p1, p2, _] = self.counts();
        j + p1 * (k + p2 * l)
    }

    /// Local tensor-product basis at one point: `(column, value)` pairs.
    pub fn eval_point(&self, p: [f64; 3]) -> Result<Vec<(usize, f64)>> {
        let (f1, v1) = self.dims[0].eval_local(p[0], AXIS_NAMES[0])?;
        let (f2, v2) = self.dims[1].eval_local(p[1], AXIS_NAMES[1])?;
        let (f3, v3) = self.dims[2].eval_local(p[2], AXIS_NAMES[2])?;
        let mut out = Vec::with_capacity(v1.len() * v2.len() * v3.len());
        for (c, &w3) in v3.iter().enumerate() {
            for (b, &w2) in v2.iter().enumerate() {
                for (a, &w1) in v1.iter().enumerate() {
                    let v = w1 * w2 * w3;
                    if v != 0.0 {
                        out.push((self.flat_index(f1 + a, f2 + b, f3 + c), v));
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Sparse `n × p` tensor-product design matrix at the given points.
pub fn tensor_design_points(points: &[[f64; 3]], spec: &TensorBasisSpec) -> Result<SparseMatrix> {
    let rows = points
        .iter()
        .map(|&p| spec.eval_point(p))
        .collect::<Result<Vec<_>>>()?;
    Ok(SparseMatrix::from_rows(spec.n_coef(), rows))
}

pub fn tensor_design(ds: &Dataset, spec: &TensorBasisSpec) -> Result<SparseMatrix> {
    tensor_design_points(&ds.coordinates(), spec)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `(p - q) × p` matrix of q-th order differences.
pub fn difference_matrix_1d(p: usize, q: usize) -> Result<SparseMatrix> {
    if q >= p {
        return Err(Error::Config(format!("difference order {q} needs more than {p} coefficients")));
    }
    let coef: Vec<f64> = (0..=q)
        .map(|i| if (q - i).is_multiple_of(2) { 1.0 } else { -1.0 } * binomial(q, i))
        .collect();
    let rows = (0..p - q)
        .map(|r| coef.iter().enumerate().map(|(i, &c)| (r + i, c)).collect())
        .collect();
    Ok(SparseMatrix::from_rows(p, rows))
}

/// Stacked penalty: for each dimension, q-th differences along that
/// dimension (identity in the others), dimension 1 first.
pub fn difference_penalty(spec: &TensorBasisSpec) -> Result<SparseMatrix> {
    let q = spec.penalty_order;
    let p = spec.counts();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    for d in 0..3 {
        let delta = difference_matrix_1d(p[d], q)?;
        // iterate over all positions of the other two indices
        let others: Vec<usize> = (0..3).filter(|&e| e != d).collect();
        for b in 0..p[others[1]] {
            for a in 0..p[others[0]] {
                for (cols, vals) in delta.rows() {
                    let row = cols
                        .iter()
                        .zip(vals)
                        .map(|(&c, &v)| {
                            let mut idx = [0usize; 3];
                            idx[d] = c;
                            idx[others[0]] = a;
                            idx[others[1]] = b;
                            (spec.flat_index(idx[0], idx[1], idx[2]), v)
                        })
                        .collect();
                    rows.push(row);
                }
            }
        }
    }
    Ok(SparseMatrix::from_rows(spec.n_coef(), rows))
}

/// Closed-form nonzero count of [`difference_penalty`].
pub fn penalty_nnz(spec: &TensorBasisSpec) -> usize {
    let q = spec.penalty_order;
    let p = spec.counts();
    (0..3)
        .map(|d| (p[d] - q) * (q + 1) * (0..3).filter(|&e| e != d).map(|e| p[e]).product::<usize>())
        .sum()
}

/// Dimension of the null space of `DᵀD`.
///
/// `DᵀD` is a sum of positive semidefinite terms, so its null space is the
/// intersection of the per-dimension null spaces, which is the tensor product
/// of the marginal ones: polynomials of degree `< q` in each coordinate.
pub fn penalty_null_space_dim(spec: &TensorBasisSpec) -> usize {
    spec.penalty_order.pow(3)
}
