//! Evaluation of fitted surfaces at points and on tensor grids.

use std::io::Write;

use crate::data_model::{HullRegion, Range, Transform};
use crate::decomposition::DecomposedModel;
use crate::error::{Error, Result};
use crate::selection::{FitResult, PriorConfig};
use crate::splines::{TensorBasisSpec, AXIS_NAMES};

/// Fitted values `B_new α̂` on the working scale.
pub fn predict_points(fit: &FitResult, points: &[[f64; 3]]) -> Result<Vec<f64>> {
    points
        .iter()
        .map(|&p| {
            Ok(fit
                .spec
                .eval_point(p)?
                .into_iter()
                .map(|(j, v)| v * fit.coefficients[j])
                .sum())
        })
        .collect()
}

/// Maps working-scale values back to the measurement scale.
pub fn back_transform(transform: Transform, values: &[f64]) -> Vec<f64> {
    values.iter().map(|&z| transform.inverse(z)).collect()
}

/// `n` equally spaced values covering `range` (its midpoint when `n == 1`).
pub fn linspace(range: Range, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![0.5 * (range.lo + range.hi)],
        _ => (0..n)
            .map(|i| range.lo + range.width() * i as f64 / (n - 1) as f64)
            .collect(),
    }
}

/// Basis values at the nodes of one grid axis.
#[derive(Debug, Clone)]
struct AxisBasis {
    first: Vec<usize>,
    values: Vec<Vec<f64>>,
}

/// Precomputed marginal bases for repeated evaluation of different
/// coefficient vectors on the same grid.
#[derive(Debug, Clone)]
pub struct GridEvaluator {
    counts: [usize; 3],
    sizes: [usize; 3],
    axes: [AxisBasis; 3],
}

impl GridEvaluator {
    pub fn new(spec: &TensorBasisSpec, axes: [&[f64]; 3]) -> Result<Self> {
        let mut built = Vec::with_capacity(3);
        for d in 0..3 {
            let mut first = Vec::with_capacity(axes[d].len());
            let mut values = Vec::with_capacity(axes[d].len());
            for &x in axes[d] {
                let (f, v) = spec.dims[d].eval_local(x, AXIS_NAMES[d])?;
                first.push(f);
                values.push(v);
            }
            built.push(AxisBasis { first, values });
        }
        let [a1, a2, a3]: [AxisBasis; 3] = built.try_into().expect("three axes");
        Ok(GridEvaluator {
            counts: spec.counts(),
            sizes: [axes[0].len(), axes[1].len(), axes[2].len()],
            axes: [a1, a2, a3],
        })
    }

    pub fn sizes(&self) -> [usize; 3] {
        self.sizes
    }

    /// Surface values at every node, index `i1 + n1·(i2 + n2·i3)`.
    ///
    /// The coefficient tensor is contracted one axis at a time (t, then s2,
    /// then s1), so the grid design matrix is never formed.
    pub fn evaluate(&self, coefficients: &[f64]) -> Vec<f64> {
        let [p1, p2, p3] = self.counts;
        let [n1, n2, n3] = self.sizes;
        assert_eq!(coefficients.len(), p1 * p2 * p3);
        let mut out = vec![0.0; n1 * n2 * n3];
        let mut c3 = vec![0.0; p1 * p2];
        let mut c2 = vec![0.0; p1];
        for i3 in 0..n3 {
            c3.iter_mut().for_each(|v| *v = 0.0);
            let f3 = self.axes[2].first[i3];
            for (c, &w) in self.axes[2].values[i3].iter().enumerate() {
                if w == 0.0 {
                    continue;
                }
                let block = &coefficients[(f3 + c) * p1 * p2..(f3 + c + 1) * p1 * p2];
                c3.iter_mut().zip(block).for_each(|(a, b)| *a += w * b);
            }
            for i2 in 0..n2 {
                c2.iter_mut().for_each(|v| *v = 0.0);
                let f2 = self.axes[1].first[i2];
                for (b, &w) in self.axes[1].values[i2].iter().enumerate() {
                    if w == 0.0 {
                        continue;
                    }
                    let row = &c3[(f2 + b) * p1..(f2 + b + 1) * p1];
                    c2.iter_mut().zip(row).for_each(|(a, r)| *a += w * r);
                }
                let base = n1 * (i2 + n2 * i3);
                for i1 in 0..n1 {
                    let f1 = self.axes[0].first[i1];
                    out[base + i1] = self.axes[0].values[i1]
                        .iter()
                        .enumerate()
                        .map(|(a, &w)| w * c2[f1 + a])
                        .sum();
                }
            }
        }
        out
    }
}

/// Surface values on a tensor grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionGrid {
    pub s1: Vec<f64>,
    pub s2: Vec<f64>,
    pub t: Vec<f64>,
    /// Working-scale values, index `i1 + n1·(i2 + n2·i3)`.
    pub values: Vec<f64>,
    pub sd: Option<Vec<f64>>,
    /// Node lies inside the hull region (all true when no hull was given).
    pub in_hull: Vec<bool>,
}

impl PredictionGrid {
    pub fn index(&self, i1: usize, i2: usize, i3: usize) -> usize {
        i1 + self.s1.len() * (i2 + self.s2.len() * i3)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn node(&self, idx: usize) -> [f64; 3] {
        let n1 = self.s1.len();
        let n2 = self.s2.len();
        [self.s1[idx % n1], self.s2[(idx / n1) % n2], self.t[idx / (n1 * n2)]]
    }

    /// Writes `s1,s2,t,pred[,sd],in_hull`, one row per node with s1 varying
    /// fastest. `pred` is back-transformed when `transform` is given; `sd`
    /// always stays on the working scale.
    pub fn write_csv<W: Write>(&self, writer: W, transform: Option<Transform>) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["s1", "s2", "t", "pred"];
        if self.sd.is_some() {
            header.push("sd");
        }
        header.push("in_hull");
        w.write_record(&header)?;
        for idx in 0..self.len() {
            let [a, b, c] = self.node(idx);
            let pred = transform.map_or(self.values[idx], |tr| tr.inverse(self.values[idx]));
            let mut rec = vec![a.to_string(), b.to_string(), c.to_string(), pred.to_string()];
            if let Some(sd) = &self.sd {
                rec.push(sd[idx].to_string());
            }
            rec.push(if self.in_hull[idx] { "1" } else { "0" }.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn hull_mask(axes: [&[f64]; 3], hull: Option<&HullRegion>) -> Vec<bool> {
    let (n1, n2, n3) = (axes[0].len(), axes[1].len(), axes[2].len());
    let mut mask = Vec::with_capacity(n1 * n2 * n3);
    for &t in axes[2] {
        for &b in axes[1] {
            for &a in axes[0] {
                mask.push(hull.is_none_or(|h| h.contains(a, b, t)));
            }
        }
    }
    mask
}

/// Evaluates `fit` on the tensor grid `s1 × s2 × t`.
pub fn predict_grid(fit: &FitResult, axes: [&[f64]; 3], hull: Option<&HullRegion>) -> Result<PredictionGrid> {
    let values = GridEvaluator::new(&fit.spec, axes)?.evaluate(&fit.coefficients);
    Ok(PredictionGrid {
        s1: axes[0].to_vec(),
        s2: axes[1].to_vec(),
        t: axes[2].to_vec(),
        values,
        sd: None,
        in_hull: hull_mask(axes, hull),
    })
}

/// Posterior predictive standard deviation of the surface at fixed λ.
///
/// Given λ the coefficients have a multivariate t posterior with `2a*`
/// degrees of freedom, `a* = a + n/2`, `b* = b + ½ yᵀ(I − S)y`, and
/// covariance `b*/(a* − 1) · (BᵀB + λDᵀD)⁻¹`. Uncertainty about λ itself is
/// not included. `model` must be the decomposition the fit came from.
pub fn predictive_sd(
    fit: &FitResult,
    model: &DecomposedModel,
    points: &[[f64; 3]],
    prior: &PriorConfig,
) -> Result<Vec<f64>> {
    let lambda = fit.lambda.ok_or_else(|| {
        Error::Unsupported("predictive sd is defined for a single lambda, not for a model-averaged fit".into())
    })?;
    if model.n_coef() != fit.spec.n_coef() {
        return Err(Error::Config("decomposition does not belong to this fit".into()));
    }
    prior.validate()?;
    let s = model.evaluate(lambda)?;
    let a_star = prior.a + 0.5 * model.n_obs() as f64;
    if a_star <= 1.0 {
        return Err(Error::Numerical("posterior variance is infinite for fewer than 3 observations".into()));
    }
    let b_star = prior.b + 0.5 * s.quad_form;
    let scale = b_star / (a_star - 1.0);
    points
        .iter()
        .map(|&p| {
            let (cols, vals): (Vec<usize>, Vec<f64>) = fit.spec.eval_point(p)?.into_iter().unzip();
            Ok((scale * model.inverse_quadratic(&cols, &vals, lambda)?).sqrt())
        })
        .collect()
}

/// [`predict_grid`] plus predictive sd at every node.
pub fn predict_grid_with_sd(
    fit: &FitResult,
    model: &DecomposedModel,
    axes: [&[f64]; 3],
    hull: Option<&HullRegion>,
    prior: &PriorConfig,
) -> Result<PredictionGrid> {
    let mut grid = predict_grid(fit, axes, hull)?;
    let nodes: Vec<[f64; 3]> = (0..grid.len()).map(|i| grid.node(i)).collect();
    grid.sd = Some(predictive_sd(fit, model, &nodes, prior)?);
    Ok(grid)
}
