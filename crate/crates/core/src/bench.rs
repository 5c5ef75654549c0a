//! Replicated comparison of smoothing-parameter selection methods on
//! simulated data.
//!
//! Replicate `r` of every scenario uses seed `base_seed + r`, so all methods
//! see the same datasets and comparisons are paired. Non-CV methods share
//! one decomposition per dataset.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::selection::{CvConfig, FitContext, FitResult, LambdaGrid, Method, PriorConfig, ScoreTrace};
use crate::simulate::{build_scenario, scenario_hull, GroundTruth, IseEvaluator, ScenarioSpec, ISE_RESOLUTION};
use crate::splines::TensorBasisSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub scenarios: Vec<u8>,
    pub methods: Vec<Method>,
    pub replicates: usize,
    pub base_seed: u64,
    pub counts: [usize; 3],
    pub degree: usize,
    pub penalty_order: usize,
    pub grid: LambdaGrid,
    pub prior: PriorConfig,
    pub cv_folds: usize,
    pub ise_resolution: [usize; 3],
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            scenarios: vec![1, 2, 3],
            methods: Method::ALL.to_vec(),
            replicates: 50,
            base_seed: 1,
            counts: [14, 8, 5],
            degree: 2,
            penalty_order: 1,
            grid: LambdaGrid::default(),
            prior: PriorConfig::default(),
            cv_folds: 10,
            ise_resolution: ISE_RESOLUTION,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::Config("need at least one replicate".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("need at least one method".into()));
        }
        if self.scenarios.is_empty() {
            return Err(Error::Config("need at least one scenario".into()));
        }
        for &s in &self.scenarios {
            ScenarioSpec::new(s, 0)?;
        }
        self.prior.validate()
    }
}

/// Outcome of one method on one replicate dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateRecord {
    pub scenario: u8,
    pub replicate: usize,
    pub seed: u64,
    pub method: Method,
    /// Chosen λ, or the posterior-weighted geometric mean for averaging.
    pub lambda: f64,
    pub edf: f64,
    pub ise: f64,
    pub max_abs_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub scenario: u8,
    pub replicate: usize,
    pub method: Method,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub scenario: u8,
    pub method: Method,
    pub mean_ise: f64,
    pub stderr: f64,
    pub n_valid: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchResults {
    pub records: Vec<ReplicateRecord>,
    pub failures: Vec<Failure>,
}

impl BenchResults {
    /// Records of one (scenario, method) cell, in replicate order.
    pub fn cell(&self, scenario: u8, method: Method) -> Vec<&ReplicateRecord> {
        self.records
            .iter()
            .filter(|r| r.scenario == scenario && r.method == method)
            .collect()
    }

    /// Mean ISE and standard error of the mean per (scenario, method).
    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut cells: BTreeMap<(u8, Method), Vec<f64>> = BTreeMap::new();
        for r in &self.records {
            cells.entry((r.scenario, r.method)).or_default().push(r.ise);
        }
        cells
            .into_iter()
            .map(|((scenario, method), v)| {
                let n = v.len() as f64;
                let mean = v.iter().sum::<f64>() / n;
                let sd = if v.len() > 1 {
                    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
                } else {
                    0.0
                };
                SummaryRow {
                    scenario,
                    method,
                    mean_ise: mean,
                    stderr: sd / n.sqrt(),
                    n_valid: v.len(),
                }
            })
            .collect()
    }

    pub fn write_results_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["scenario", "method", "mean_ise", "stderr", "n_valid"])?;
        for row in self.summary() {
            w.write_record([
                row.scenario.to_string(),
                row.method.to_string(),
                row.mean_ise.to_string(),
                row.stderr.to_string(),
                row.n_valid.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Chosen λ of every successful (scenario, method, replicate).
    pub fn write_lambda_samples_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["scenario", "method", "replicate", "seed", "lambda", "log10_lambda", "edf", "ise"])?;
        for r in &self.records {
            w.write_record([
                r.scenario.to_string(),
                r.method.to_string(),
                r.replicate.to_string(),
                r.seed.to_string(),
                r.lambda.to_string(),
                r.lambda.log10().to_string(),
                r.edf.to_string(),
                r.ise.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

type ReplicateOutcome = Vec<std::result::Result<ReplicateRecord, Failure>>;

fn run_replicate(cfg: &BenchConfig, truth: &GroundTruth, scenario: u8, replicate: usize) -> ReplicateOutcome {
    let seed = cfg.base_seed.wrapping_add(replicate as u64);
    let fail_all = |reason: String| -> ReplicateOutcome {
        cfg.methods
            .iter()
            .map(|&method| {
                Err(Failure {
                    scenario,
                    replicate,
                    method,
                    reason: reason.clone(),
                })
            })
            .collect()
    };
    let prepared = (|| -> Result<(FitContext, IseEvaluator)> {
        let ds = build_scenario(truth, &ScenarioSpec::new(scenario, seed)?)?;
        let spec = TensorBasisSpec::for_dataset(&ds, cfg.counts, cfg.degree, cfg.penalty_order)?;
        let ctx = FitContext::new(&ds, &spec)?;
        let ise = IseEvaluator::new(truth, &scenario_hull(&ds)?, ds.transform(), cfg.ise_resolution)?;
        Ok((ctx, ise))
    })();
    let (ctx, ise) = match prepared {
        Ok(p) => p,
        Err(e) => return fail_all(e.to_string()),
    };
    let cv = CvConfig {
        folds: cfg.cv_folds,
        seed,
    };
    cfg.methods
        .iter()
        .map(|&method| {
            let outcome = (|| -> Result<ReplicateRecord> {
                let sel = ctx.select_lambda(method, &cfg.prior, &cfg.grid, &cv)?;
                let fit = FitResult {
                    method,
                    spec: ctx.spec().clone(),
                    transform: ctx.transform(),
                    lambda: sel.lambda,
                    averaging: None,
                    coefficients: ctx.coefficients(&sel)?,
                    edf: sel.edf,
                    trace: ScoreTrace::default(),
                    warnings: Vec::new(),
                };
                let err = ise.evaluate(&fit)?;
                Ok(ReplicateRecord {
                    scenario,
                    replicate,
                    seed,
                    method,
                    lambda: sel.representative_lambda(),
                    edf: sel.edf,
                    ise: err.ise,
                    max_abs_error: err.max_abs_error,
                })
            })();
            outcome.map_err(|e| Failure {
                scenario,
                replicate,
                method,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Maximum fraction of failed replicates per (scenario, method).
pub const MAX_FAILURE_RATE: f64 = 0.10;

/// Runs every (scenario, replicate, method) combination against `truth`.
pub fn run_benchmark(cfg: &BenchConfig, truth: &GroundTruth) -> Result<BenchResults> {
    cfg.validate()?;
    let jobs: Vec<(u8, usize)> = cfg
        .scenarios
        .iter()
        .flat_map(|&s| (0..cfg.replicates).map(move |r| (s, r)))
        .collect();
    let outcomes: Vec<ReplicateOutcome> = jobs
        .par_iter()
        .map(|&(s, r)| run_replicate(cfg, truth, s, r))
        .collect();
    let mut results = BenchResults::default();
    for outcome in outcomes {
        for o in outcome {
            match o {
                Ok(rec) => results.records.push(rec),
                Err(f) => results.failures.push(f),
            }
        }
    }
    for &s in &cfg.scenarios {
        for &m in &cfg.methods {
            let failed = results.failures.iter().filter(|f| f.scenario == s && f.method == m).count();
            if failed as f64 > MAX_FAILURE_RATE * cfg.replicates as f64 {
                let example = results
                    .failures
                    .iter()
                    .find(|f| f.scenario == s && f.method == m)
                    .map(|f| f.reason.clone())
                    .unwrap_or_default();
                return Err(Error::Numerical(format!(
                    "scenario {s}, {m}: {failed} of {} replicates failed (e.g. {example})",
                    cfg.replicates
                )));
            }
        }
    }
    Ok(results)
}
