//! Choice of the smoothing parameter.
//!
//! All criteria are evaluated from a single [`DecomposedModel`], so a sweep
//! over a λ grid costs O(p) per grid point. Cross-validation refits one
//! decomposition per fold and shares the data-independent [`PenaltyBasis`].
//!
//! The marginal posterior of λ under the normal–inverse-gamma prior is
//!
//! ```text
//!   log f(λ | y) = (r/2) log λ − ½ log det(BᵀB + λDᵀD)
//!                  − (a + n/2) log(2b + yᵀ(I − S_λ)y) + log π(λ) + const
//! ```
//!
//! with `r = rank(DᵀD)` and `S_λ` the hat matrix.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data_model::{Dataset, Transform};
use crate::decomposition::{reduce_penalty, DecomposedModel, PenaltyBasis};
use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;
use crate::splines::{difference_penalty, tensor_design, TensorBasisSpec};

/// Prior on λ, as a density with respect to dλ.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LambdaPrior {
    #[default]
    UniformOnLambda,
    UniformOnLogLambda,
}

impl LambdaPrior {
    pub fn name(self) -> &'static str {
        match self {
            LambdaPrior::UniformOnLambda => "uniform_on_lambda",
            LambdaPrior::UniformOnLogLambda => "uniform_on_log_lambda",
        }
    }

    fn log_density(self, lambda: f64) -> f64 {
        match self {
            LambdaPrior::UniformOnLambda => 0.0,
            LambdaPrior::UniformOnLogLambda => -lambda.ln(),
        }
    }
}

impl FromStr for LambdaPrior {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "uniform_on_lambda" | "uniform" => Ok(LambdaPrior::UniformOnLambda),
            "uniform_on_log_lambda" | "log_uniform" => Ok(LambdaPrior::UniformOnLogLambda),
            _ => Err(Error::Config(format!("unknown lambda prior `{s}`"))),
        }
    }
}

/// Inverse-gamma hyperparameters for σ² and the prior on λ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorConfig {
    pub a: f64,
    pub b: f64,
    pub lambda_prior: LambdaPrior,
}

impl Default for PriorConfig {
    fn default() -> Self {
        PriorConfig {
            a: 1e-4,
            b: 1e-4,
            lambda_prior: LambdaPrior::UniformOnLambda,
        }
    }
}

impl PriorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.b > 0.0 && self.a.is_finite() && self.b.is_finite()) {
            return Err(Error::Config(format!(
                "prior hyperparameters must be positive, got a = {}, b = {}",
                self.a, self.b
            )));
        }
        Ok(())
    }
}

/// Strictly increasing grid of log₁₀λ values.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaGrid {
    log10: Vec<f64>,
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid::uniform(-8.0, 8.0, 101).expect("valid default grid")
    }
}

impl LambdaGrid {
    pub fn new(log10: Vec<f64>) -> Result<Self> {
        if log10.len() < 3 {
            return Err(Error::Config(format!("lambda grid needs at least 3 points, got {}", log10.len())));
        }
        if log10.iter().any(|v| !v.is_finite()) || log10.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("lambda grid must be finite and strictly increasing".into()));
        }
        Ok(LambdaGrid { log10 })
    }

    /// `n` equally spaced log₁₀λ values on `[lo, hi]`.
    pub fn uniform(lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config(format!("lambda grid needs at least 3 points, got {n}")));
        }
        let step = (hi - lo) / (n - 1) as f64;
        LambdaGrid::new((0..n).map(|i| lo + step * i as f64).collect())
    }

    pub fn log10_values(&self) -> &[f64] {
        &self.log10
    }

    pub fn lambdas(&self) -> Vec<f64> {
        self.log10.iter().map(|v| 10f64.powf(*v)).collect()
    }

    pub fn len(&self) -> usize {
        self.log10.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log10.is_empty()
    }
}

/// Smoothing-parameter selection strategies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Aicc,
    Gcv,
    Bic,
    CvObs,
    CvWell,
    Map,
    BayesAvg,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Aicc,
        Method::Gcv,
        Method::CvObs,
        Method::CvWell,
        Method::Bic,
        Method::Map,
        Method::BayesAvg,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Aicc => "aicc",
            Method::Gcv => "gcv",
            Method::Bic => "bic",
            Method::CvObs => "cv_obs",
            Method::CvWell => "cv_well",
            Method::Map => "map",
            Method::BayesAvg => "bayes_avg",
        }
    }

    pub fn is_cross_validation(self) -> bool {
        matches!(self, Method::CvObs | Method::CvWell)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == key)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown method `{s}` (expected one of aicc, gcv, bic, cv-obs, cv-well, map, bayes-avg)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Criterion {
    Aicc,
    Gcv,
    Bic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvMode {
    ByObservation,
    ByWell,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CvConfig {
    pub folds: usize,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig { folds: 10, seed: 0 }
    }
}

/// Outcome of one selection strategy over a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub method: Method,
    /// Chosen λ; `None` for model averaging.
    pub lambda: Option<f64>,
    pub log10_grid: Vec<f64>,
    /// Per-grid-point scores: log posterior for Bayesian methods, the
    /// criterion value (lower is better) otherwise.
    pub scores: Vec<f64>,
    /// Normalized posterior weights over the grid (Bayesian methods).
    pub weights: Option<Vec<f64>>,
    pub edf: f64,
    /// The optimum sits on the first or last grid point.
    pub at_boundary: bool,
    pub warnings: Vec<String>,
}

impl SelectionResult {
    /// λ for summaries: the chosen value, or the posterior-weighted geometric
    /// mean for model averaging.
    pub fn representative_lambda(&self) -> f64 {
        match (self.lambda, &self.weights) {
            (Some(l), _) => l,
            (None, Some(w)) => {
                let ln10 = std::f64::consts::LN_10;
                (w.iter().zip(&self.log10_grid).map(|(w, g)| w * g * ln10).sum::<f64>()).exp()
            }
            (None, None) => f64::NAN,
        }
    }
}

/// `(r/2) log λ − ½ log det(BᵀB+λDᵀD) − (a + n/2) log(2b + yᵀ(I−S)y) + log π(λ)`.
pub fn log_posterior_lambda(model: &DecomposedModel, lambda: f64, prior: &PriorConfig) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("posterior of lambda needs lambda > 0, got {lambda}")));
    }
    let s = model.evaluate(lambda)?;
    let r = model.rank_pen() as f64;
    let n = model.n_obs() as f64;
    Ok(0.5 * r * lambda.ln() - 0.5 * s.log_det - (prior.a + 0.5 * n) * (2.0 * prior.b + s.quad_form).ln()
        + prior.lambda_prior.log_density(lambda))
}

/// Lower-is-better information criterion at `lambda`.
pub fn criterion_score(model: &DecomposedModel, lambda: f64, which: Criterion) -> Result<f64> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Config(format!("criteria need lambda > 0, got {lambda}")));
    }
    let s = model.evaluate(lambda)?;
    let n = model.n_obs() as f64;
    let nu = s.edf;
    let undefined = |reason: &str| Error::CriterionUndefined {
        lambda,
        reason: reason.into(),
    };
    match which {
        Criterion::Gcv => {
            if n - nu <= 0.0 {
                return Err(undefined("n - edf <= 0"));
            }
            Ok(n * s.rss / ((n - nu) * (n - nu)))
        }
        Criterion::Bic => {
            if s.rss <= 0.0 {
                return Err(undefined("residual sum of squares is zero"));
            }
            Ok(n * (s.rss / n).ln() + nu * n.ln())
        }
        Criterion::Aicc => {
            if n - nu - 1.0 <= 0.0 {
                return Err(undefined("n - edf - 1 <= 0"));
            }
            if s.rss <= 0.0 {
                return Err(undefined("residual sum of squares is zero"));
            }
            Ok(n * (s.rss / n).ln() + 2.0 * nu + 2.0 * nu * (nu + 1.0) / (n - nu - 1.0))
        }
    }
}

/// Trapezoid weights on a log₁₀ grid.
fn trapezoid(log10: &[f64]) -> Vec<f64> {
    let m = log10.len();
    if m == 1 {
        return vec![1.0];
    }
    (0..m)
        .map(|i| {
            let left = if i > 0 { log10[i] - log10[i - 1] } else { 0.0 };
            let right = if i + 1 < m { log10[i + 1] - log10[i] } else { 0.0 };
            0.5 * (left + right)
        })
        .collect()
}

/// Normalizes posterior weights from log posterior values on a log₁₀ grid.
/// The density is with respect to dλ, hence the Jacobian λ.
pub fn normalized_weights(log10: &[f64], log_post: &[f64]) -> Result<Vec<f64>> {
    assert_eq!(log10.len(), log_post.len());
    let max = log_post.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numerical("log posterior is not finite anywhere on the grid".into()));
    }
    let ln10 = std::f64::consts::LN_10;
    let quad = trapezoid(log10);
    // weights are formed in log space so the Jacobian λ, spanning many
    // decades, cannot overflow
    let log_w: Vec<f64> = log10
        .iter()
        .zip(log_post)
        .zip(&quad)
        .map(|((g, lp), q)| if *q > 0.0 { lp - max + g * ln10 + q.ln() } else { f64::NEG_INFINITY })
        .collect();
    let top = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|v| (v - top).exp()).collect();
    let total: f64 = w.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::Numerical("posterior weights underflow on the whole grid".into()));
    }
    Ok(w.into_iter().map(|v| v / total).collect())
}

pub fn log_posterior_grid(model: &DecomposedModel, grid: &LambdaGrid, prior: &PriorConfig) -> Result<Vec<f64>> {
    grid.lambdas()
        .into_iter()
        .map(|l| log_posterior_lambda(model, l, prior))
        .collect()
}

/// Posterior probabilities of the grid points under trapezoid quadrature.
pub fn model_average_weights(model: &DecomposedModel, grid: &LambdaGrid, prior: &PriorConfig) -> Result<Vec<f64>> {
    prior.validate()?;
    normalized_weights(grid.log10_values(), &log_posterior_grid(model, grid, prior)?)
}

/// Maximizes `f` on `[lo, hi]` by golden-section search.
fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 >= f2 {
        (x1, f1)
    } else {
        (x2, f2)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] || v[best].is_nan() {
            best = i;
        }
    }
    best
}

/// Golden-section tolerance of the MAP refinement, in log₁₀λ.
pub const MAP_TOLERANCE: f64 = 1e-3;

/// Posterior mode of λ: grid scan followed by golden-section refinement
/// between the neighbours of the best grid point.
pub fn map_lambda(model: &DecomposedModel, grid: &LambdaGrid, prior: &PriorConfig) -> Result<SelectionResult> {
    prior.validate()?;
    let g = grid.log10_values();
    let scores = log_posterior_grid(model, grid, prior)?;
    let weights = normalized_weights(g, &scores)?;
    let i = argmax(&scores);
    let at_boundary = i == 0 || i + 1 == g.len();
    let lo = g[i.saturating_sub(1)];
    let hi = g[(i + 1).min(g.len() - 1)];
    let f = |x: f64| log_posterior_lambda(model, 10f64.powf(x), prior).unwrap_or(f64::NEG_INFINITY);
    let (x, fx) = golden_section_max(f, lo, hi, MAP_TOLERANCE);
    let best = if fx >= scores[i] { 10f64.powf(x) } else { 10f64.powf(g[i]) };
    let mut warnings = Vec::new();
    if at_boundary {
        warnings.push(format!(
            "posterior mode at the edge of the lambda grid (log10 lambda = {}); widen the grid",
            g[i]
        ));
    }
    Ok(SelectionResult {
        method: Method::Map,
        lambda: Some(best),
        log10_grid: g.to_vec(),
        scores,
        weights: Some(weights),
        edf: model.edf(best),
        at_boundary,
        warnings,
    })
}

fn bayes_average(model: &DecomposedModel, grid: &LambdaGrid, prior: &PriorConfig) -> Result<SelectionResult> {
    prior.validate()?;
    let g = grid.log10_values();
    let scores = log_posterior_grid(model, grid, prior)?;
    let weights = normalized_weights(g, &scores)?;
    let edf = grid
        .lambdas()
        .iter()
        .zip(&weights)
        .map(|(l, w)| w * model.edf(*l))
        .sum();
    let i = argmax(&scores);
    let at_boundary = i == 0 || i + 1 == g.len();
    let mut warnings = Vec::new();
    if at_boundary {
        warnings.push("posterior mass concentrates at the edge of the lambda grid".to_string());
    }
    Ok(SelectionResult {
        method: Method::BayesAvg,
        lambda: None,
        log10_grid: g.to_vec(),
        scores,
        weights: Some(weights),
        edf,
        at_boundary,
        warnings,
    })
}

/// Criterion values over the grid; undefined points score `+∞`.
pub fn criterion_scores(model: &DecomposedModel, grid: &LambdaGrid, which: Criterion) -> Result<Vec<f64>> {
    grid.lambdas()
        .into_iter()
        .map(|l| match criterion_score(model, l, which) {
            Ok(v) => Ok(v),
            Err(Error::CriterionUndefined { .. }) => Ok(f64::INFINITY),
            Err(e) => Err(e),
        })
        .collect()
}

fn grid_argmin(method: Method, g: &[f64], scores: Vec<f64>, edf: impl Fn(f64) -> f64) -> Result<SelectionResult> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_finite() && best.is_none_or(|b| s < scores[b]) {
            best = Some(i);
        }
    }
    let i = best.ok_or_else(|| Error::Numerical(format!("{method} is undefined on the whole lambda grid")))?;
    let lambda = 10f64.powf(g[i]);
    let at_boundary = i == 0 || i + 1 == g.len();
    let mut warnings = Vec::new();
    if at_boundary {
        warnings.push(format!("{method} minimum at the edge of the lambda grid (log10 lambda = {})", g[i]));
    }
    Ok(SelectionResult {
        method,
        lambda: Some(lambda),
        log10_grid: g.to_vec(),
        scores,
        weights: None,
        edf: edf(lambda),
        at_boundary,
        warnings,
    })
}

pub fn criterion_select(model: &DecomposedModel, grid: &LambdaGrid, which: Criterion) -> Result<SelectionResult> {
    let method = match which {
        Criterion::Aicc => Method::Aicc,
        Criterion::Gcv => Method::Gcv,
        Criterion::Bic => Method::Bic,
    };
    let scores = criterion_scores(model, grid, which)?;
    grid_argmin(method, grid.log10_values(), scores, |l| model.edf(l))
}

/// Assigns each observation to one of `k` folds by a seeded shuffle of the
/// observations or of whole wells.
pub fn assign_folds(well_of: &[usize], n_wells: usize, mode: CvMode, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Config(format!("cross-validation needs at least 2 folds, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match mode {
        CvMode::ByObservation => {
            let n = well_of.len();
            if k > n {
                return Err(Error::Config(format!("{k} folds requested for {n} observations")));
            }
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);
            let mut folds = vec![0; n];
            for (pos, &i) in order.iter().enumerate() {
                folds[i] = pos % k;
            }
            Ok(folds)
        }
        CvMode::ByWell => {
            if k > n_wells {
                return Err(Error::Config(format!(
                    "well-based cross-validation with {k} folds needs at least {k} wells, got {n_wells}"
                )));
            }
            let mut order: Vec<usize> = (0..n_wells).collect();
            order.shuffle(&mut rng);
            let mut fold_of_well = vec![0; n_wells];
            for (pos, &w) in order.iter().enumerate() {
                fold_of_well[w] = pos % k;
            }
            Ok(well_of.iter().map(|&w| fold_of_well[w]).collect())
        }
    }
}

/// Summed squared prediction error per grid point, over the valid folds.
#[derive(Debug, Clone, PartialEq)]
pub struct CvScores {
    pub scores: Vec<f64>,
    pub invalid_folds: Vec<usize>,
}

/// Cross-validation with an explicit fold assignment (`folds[i] < k`).
pub fn cross_validate_with_folds(
    design: &SparseMatrix,
    y: &[f64],
    basis: &Arc<PenaltyBasis>,
    grid: &LambdaGrid,
    folds: &[usize],
    k: usize,
) -> Result<CvScores> {
    assert_eq!(folds.len(), y.len());
    let lambdas = grid.lambdas();
    let per_fold: Vec<Result<Option<Vec<f64>>>> = (0..k)
        .into_par_iter()
        .map(|f| {
            let test: Vec<usize> = (0..y.len()).filter(|&i| folds[i] == f).collect();
            if test.is_empty() {
                return Ok(Some(vec![0.0; lambdas.len()]));
            }
            let train: Vec<usize> = (0..y.len()).filter(|&i| folds[i] != f).collect();
            let y_train: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let model = match DecomposedModel::new(&design.select_rows(&train), basis.clone(), &y_train) {
                Ok(m) => m,
                Err(Error::Unidentifiable(_) | Error::Singular(_)) => return Ok(None),
                Err(e) => return Err(e),
            };
            let predictor = model.predictor(&design.select_rows(&test));
            let sse = lambdas
                .iter()
                .map(|&l| {
                    predictor
                        .predict(&model, l)
                        .iter()
                        .zip(&test)
                        .map(|(p, &i)| (y[i] - p) * (y[i] - p))
                        .sum()
                })
                .collect();
            Ok(Some(sse))
        })
        .collect();
    let mut scores = vec![0.0; lambdas.len()];
    let mut invalid_folds = Vec::new();
    for (f, r) in per_fold.into_iter().enumerate() {
        match r? {
            Some(sse) => scores.iter_mut().zip(sse).for_each(|(s, e)| *s += e),
            None => invalid_folds.push(f),
        }
    }
    if invalid_folds.len() == k {
        return Err(Error::Numerical("every cross-validation fold is unidentifiable".into()));
    }
    Ok(CvScores { scores, invalid_folds })
}

/// Per-λ score columns for diagnostics. CV columns are present only when
/// they were computed.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTrace {
    pub log10_lambda: Vec<f64>,
    pub map_logpost: Vec<f64>,
    pub aicc: Vec<f64>,
    pub gcv: Vec<f64>,
    pub bic: Vec<f64>,
    pub cv_obs: Option<Vec<f64>>,
    pub cv_well: Option<Vec<f64>>,
}

impl ScoreTrace {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["log10_lambda", "map_logpost", "aicc", "gcv", "bic", "cv_obs", "cv_well"])?;
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for i in 0..self.log10_lambda.len() {
            w.write_record([
                self.log10_lambda[i].to_string(),
                self.map_logpost[i].to_string(),
                self.aicc[i].to_string(),
                self.gcv[i].to_string(),
                self.bic[i].to_string(),
                cell(self.cv_obs.as_ref().map(|c| c[i])),
                cell(self.cv_well.as_ref().map(|c| c[i])),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// A fitted surface: coefficients plus everything needed to evaluate and
/// describe them.
#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub method: Method,
    pub spec: TensorBasisSpec,
    pub transform: Transform,
    /// Chosen λ; `None` for model-averaged fits.
    pub lambda: Option<f64>,
    /// `(λ, weight)` pairs of a model-averaged fit.
    pub averaging: Option<Vec<(f64, f64)>>,
    pub coefficients: Vec<f64>,
    pub edf: f64,
    pub trace: ScoreTrace,
    pub warnings: Vec<String>,
}

impl FitResult {
    pub fn is_model_averaged(&self) -> bool {
        self.lambda.is_none()
    }
}

/// Design, response and decomposition of one dataset under one basis.
pub struct FitContext {
    spec: TensorBasisSpec,
    transform: Transform,
    design: SparseMatrix,
    y: Vec<f64>,
    well_of: Vec<usize>,
    n_wells: usize,
    basis: Arc<PenaltyBasis>,
    model: DecomposedModel,
}

impl FitContext {
    /// Data-independent rotation for the penalty of `spec`.
    pub fn penalty_basis(spec: &TensorBasisSpec) -> Result<Arc<PenaltyBasis>> {
        let d_red = reduce_penalty(&difference_penalty(spec)?)?;
        Ok(Arc::new(PenaltyBasis::new(&d_red)?))
    }

    pub fn new(ds: &Dataset, spec: &TensorBasisSpec) -> Result<Self> {
        FitContext::with_basis(ds, spec, FitContext::penalty_basis(spec)?)
    }

    /// Reuses a basis built for the same basis counts and penalty order.
    pub fn with_basis(ds: &Dataset, spec: &TensorBasisSpec, basis: Arc<PenaltyBasis>) -> Result<Self> {
        if basis.n_coef() != spec.n_coef() {
            return Err(Error::Config("penalty basis does not match the basis definition".into()));
        }
        let design = tensor_design(ds, spec)?;
        let y = ds.response();
        let mut well_of = vec![0; ds.len()];
        for (w, rows) in ds.wells().values().enumerate() {
            for &i in rows {
                well_of[i] = w;
            }
        }
        let model = DecomposedModel::new(&design, basis.clone(), &y)?;
        Ok(FitContext {
            spec: spec.clone(),
            transform: ds.transform(),
            design,
            y,
            well_of,
            n_wells: ds.wells().len(),
            basis,
            model,
        })
    }

    pub fn spec(&self) -> &TensorBasisSpec {
        &self.spec
    }

    pub fn transform(&self) -> Transform {
        self.transform
    }

    pub fn design(&self) -> &SparseMatrix {
        &self.design
    }

    pub fn response(&self) -> &[f64] {
        &self.y
    }

    pub fn model(&self) -> &DecomposedModel {
        &self.model
    }

    pub fn folds(&self, mode: CvMode, cv: &CvConfig) -> Result<Vec<usize>> {
        assign_folds(&self.well_of, self.n_wells, mode, cv.folds, cv.seed)
    }

    pub fn cv_scores(&self, grid: &LambdaGrid, mode: CvMode, cv: &CvConfig) -> Result<CvScores> {
        let folds = self.folds(mode, cv)?;
        cross_validate_with_folds(&self.design, &self.y, &self.basis, grid, &folds, cv.folds)
    }

    pub fn cross_validate(&self, grid: &LambdaGrid, mode: CvMode, cv: &CvConfig) -> Result<SelectionResult> {
        let method = match mode {
            CvMode::ByObservation => Method::CvObs,
            CvMode::ByWell => Method::CvWell,
        };
        let cvs = self.cv_scores(grid, mode, cv)?;
        let mut res = grid_argmin(method, grid.log10_values(), cvs.scores, |l| self.model.edf(l))?;
        if !cvs.invalid_folds.is_empty() {
            res.warnings.push(format!(
                "{} of {} folds skipped: unpenalized component not identifiable without them",
                cvs.invalid_folds.len(),
                cv.folds
            ));
        }
        Ok(res)
    }

    pub fn select_lambda(
        &self,
        method: Method,
        prior: &PriorConfig,
        grid: &LambdaGrid,
        cv: &CvConfig,
    ) -> Result<SelectionResult> {
        match method {
            Method::Aicc => criterion_select(&self.model, grid, Criterion::Aicc),
            Method::Gcv => criterion_select(&self.model, grid, Criterion::Gcv),
            Method::Bic => criterion_select(&self.model, grid, Criterion::Bic),
            Method::Map => map_lambda(&self.model, grid, prior),
            Method::BayesAvg => bayes_average(&self.model, grid, prior),
            Method::CvObs => self.cross_validate(grid, CvMode::ByObservation, cv),
            Method::CvWell => self.cross_validate(grid, CvMode::ByWell, cv),
        }
    }

    /// Coefficients of a selection: the fit at the chosen λ, or the
    /// posterior-weighted average of the grid fits.
    pub fn coefficients(&self, sel: &SelectionResult) -> Result<Vec<f64>> {
        if let Some(l) = sel.lambda {
            return Ok(self.model.solve_for_lambda(l)?.coefficients);
        }
        let weights = sel
            .weights
            .as_ref()
            .ok_or_else(|| Error::Config("selection carries neither lambda nor weights".into()))?;
        let mut alpha = vec![0.0; self.spec.n_coef()];
        for (&g, &w) in sel.log10_grid.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            let c = self.model.solve_for_lambda(10f64.powf(g))?.coefficients;
            alpha.iter_mut().zip(c).for_each(|(a, c)| *a += w * c);
        }
        Ok(alpha)
    }

    /// Per-λ posterior and criterion scores, plus CV columns when `cv` is given.
    pub fn score_trace(&self, prior: &PriorConfig, grid: &LambdaGrid, cv: Option<&CvConfig>) -> Result<ScoreTrace> {
        prior.validate()?;
        let (cv_obs, cv_well) = match cv {
            Some(c) => (
                Some(self.cv_scores(grid, CvMode::ByObservation, c)?.scores),
                Some(self.cv_scores(grid, CvMode::ByWell, c)?.scores),
            ),
            None => (None, None),
        };
        Ok(ScoreTrace {
            log10_lambda: grid.log10_values().to_vec(),
            map_logpost: log_posterior_grid(&self.model, grid, prior)?,
            aicc: criterion_scores(&self.model, grid, Criterion::Aicc)?,
            gcv: criterion_scores(&self.model, grid, Criterion::Gcv)?,
            bic: criterion_scores(&self.model, grid, Criterion::Bic)?,
            cv_obs,
            cv_well,
        })
    }

    pub fn fit(&self, method: Method, prior: &PriorConfig, grid: &LambdaGrid, cv: &CvConfig) -> Result<FitResult> {
        let sel = self.select_lambda(method, prior, grid, cv)?;
        let coefficients = self.coefficients(&sel)?;
        let mut trace = self.score_trace(prior, grid, None)?;
        match method {
            Method::CvObs => trace.cv_obs = Some(sel.scores.clone()),
            Method::CvWell => trace.cv_well = Some(sel.scores.clone()),
            _ => {}
        }
        let averaging = match sel.lambda {
            Some(_) => None,
            None => sel.weights.as_ref().map(|w| {
                grid.lambdas().into_iter().zip(w.iter().copied()).collect()
            }),
        };
        Ok(FitResult {
            method,
            spec: self.spec.clone(),
            transform: self.transform,
            lambda: sel.lambda,
            averaging,
            coefficients,
            edf: sel.edf,
            trace,
            warnings: sel.warnings,
        })
    }
}

/// Builds the decomposition for `ds` and fits it with `method`.
pub fn select(
    ds: &Dataset,
    spec: &TensorBasisSpec,
    method: Method,
    prior: &PriorConfig,
    grid: &LambdaGrid,
    cv: &CvConfig,
) -> Result<FitResult> {
    FitContext::new(ds, spec)?.fit(method, prior, grid, cv)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(LambdaGrid::new(vec![0.0, 1.0]).is_err());
        assert!(LambdaGrid::new(vec![0.0, 1.0, 1.0]).is_err());
        let g = LambdaGrid::default();
        assert_eq!(g.len(), 101);
        assert_eq!(g.log10_values()[0], -8.0);
        assert!((g.log10_values()[100] - 8.0).abs() < 1e-12);
        assert!((g.log10_values()[50]).abs() < 1e-12);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
        assert_eq!("cv-well".parse::<Method>().unwrap(), Method::CvWell);
        assert_eq!("Bayes-Avg".parse::<Method>().unwrap(), Method::BayesAvg);
        assert!(matches!("reml".parse::<Method>(), Err(Error::Config(_))));
    }

    #[test]
    fn single_point_weight_is_one() {
        assert_eq!(normalized_weights(&[0.3], &[-12.0]).unwrap(), vec![1.0]);
    }

    #[test]
    fn symmetric_log_posterior_gives_symmetric_weights() {
        // density in λ ∝ exp(−(log₁₀λ)²)/λ, i.e. symmetric in log λ
        let g: Vec<f64> = (0..41).map(|i| -2.0 + 0.1 * i as f64).collect();
        let lp: Vec<f64> = g.iter().map(|x| -x * x - x * std::f64::consts::LN_10).collect();
        let w = normalized_weights(&g, &lp).unwrap();
        for i in 0..41 {
            assert!((w[i] - w[40 - i]).abs() < 1e-12);
        }
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn golden_section_finds_quadratic_peak() {
        let (x, _) = golden_section_max(|x| -(x - 0.37).powi(2), 0.0, 1.0, 1e-6);
        assert!((x - 0.37).abs() < 1e-6);
    }

    #[test]
    fn folds_are_balanced_and_deterministic() {
        let well_of: Vec<usize> = (0..50).map(|i| i % 12).collect();
        let a = assign_folds(&well_of, 12, CvMode::ByObservation, 10, 3).unwrap();
        assert_eq!(a, assign_folds(&well_of, 12, CvMode::ByObservation, 10, 3).unwrap());
        for f in 0..10 {
            assert_eq!(a.iter().filter(|&&x| x == f).count(), 5);
        }
        let b = assign_folds(&well_of, 12, CvMode::ByWell, 10, 3).unwrap();
        for i in 0..50 {
            for j in 0..50 {
                if well_of[i] == well_of[j] {
                    assert_eq!(b[i], b[j]);
                }
            }
        }
        assert!(assign_folds(&well_of, 12, CvMode::ByWell, 13, 3).is_err());
        assert!(assign_folds(&well_of, 12, CvMode::ByObservation, 1, 3).is_err());
    }
}
