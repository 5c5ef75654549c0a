//! Self-describing JSON fit artifact.
//!
//! Numeric arrays are stored as base-64 encoded little-endian `f64` blocks so
//! that a reloaded fit reproduces predictions bit for bit.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use stsmooth::data_model::{Dataset, Observation, Transform};
use stsmooth::selection::{FitResult, LambdaPrior, Method, PriorConfig, ScoreTrace};
use stsmooth::splines::TensorBasisSpec;

use crate::error::CliError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct F64Block {
    pub dtype: String,
    pub len: usize,
    pub data: String,
}

impl F64Block {
    pub fn encode(values: &[f64]) -> Self {
        let mut bytes = Vec::with_capacity(values.len() * 8);
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        F64Block {
            dtype: "f64le".into(),
            len: values.len(),
            data: STANDARD.encode(bytes),
        }
    }

    pub fn decode(&self) -> Result<Vec<f64>, CliError> {
        if self.dtype != "f64le" {
            return Err(CliError::data(format!("unsupported block dtype `{}`", self.dtype)));
        }
        let bytes = STANDARD
            .decode(&self.data)
            .map_err(|e| CliError::data(format!("corrupt base-64 block: {e}")))?;
        if bytes.len() != 8 * self.len {
            return Err(CliError::data("numeric block length does not match its header"));
        }
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorRecord {
    pub a: f64,
    pub b: f64,
    pub lambda_prior: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Averaging {
    pub lambdas: F64Block,
    pub weights: F64Block,
}

/// Training observations, kept so that posterior quantities can be
/// recomputed from the artifact alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingData {
    pub n: usize,
    pub well_ids: Vec<String>,
    pub s1: F64Block,
    pub s2: F64Block,
    pub t: F64Block,
    pub value: F64Block,
    /// Date that `t = 0` stands for, when the input used calendar dates.
    pub time_origin: Option<String>,
    /// SHA-256 over the decoded training arrays and well ids.
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub format_version: u32,
    pub method: String,
    pub transform: Transform,
    pub spec: TensorBasisSpec,
    pub lambda: Option<f64>,
    pub averaging: Option<Averaging>,
    pub edf: f64,
    pub prior: PriorRecord,
    pub coefficients: F64Block,
    pub warnings: Vec<String>,
    pub training: TrainingData,
}

fn digest(ids: &[String], columns: [&[f64]; 4]) -> String {
    let mut h = Sha256::new();
    for col in columns {
        for v in col {
            h.update(v.to_le_bytes());
        }
    }
    for id in ids {
        h.update(id.as_bytes());
        h.update([0u8]);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

impl FitArtifact {
    pub fn new(fit: &FitResult, prior: &PriorConfig, ds: &Dataset) -> Self {
        let obs = ds.observations();
        let col = |f: fn(&Observation) -> f64| obs.iter().map(f).collect::<Vec<f64>>();
        let (s1, s2, t, value) = (col(|o| o.s1), col(|o| o.s2), col(|o| o.t), col(|o| o.value));
        let well_ids: Vec<String> = obs.iter().map(|o| o.well_id.clone()).collect();
        let sha256 = digest(&well_ids, [&s1, &s2, &t, &value]);
        FitArtifact {
            format_version: FORMAT_VERSION,
            method: fit.method.name().to_string(),
            transform: fit.transform,
            spec: fit.spec.clone(),
            lambda: fit.lambda,
            averaging: fit.averaging.as_ref().map(|pairs| {
                let (l, w): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
                Averaging {
                    lambdas: F64Block::encode(&l),
                    weights: F64Block::encode(&w),
                }
            }),
            edf: fit.edf,
            prior: PriorRecord {
                a: prior.a,
                b: prior.b,
                lambda_prior: prior.lambda_prior.name().to_string(),
            },
            coefficients: F64Block::encode(&fit.coefficients),
            warnings: fit.warnings.clone(),
            training: TrainingData {
                n: obs.len(),
                well_ids,
                s1: F64Block::encode(&s1),
                s2: F64Block::encode(&s2),
                t: F64Block::encode(&t),
                value: F64Block::encode(&value),
                time_origin: ds.time_origin().map(|d| d.to_string()),
                sha256,
            },
        }
    }

    pub fn to_json(&self) -> Result<String, CliError> {
        let mut s = serde_json::to_string_pretty(self).map_err(|e| CliError::data(e.to_string()))?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let art: FitArtifact =
            serde_json::from_str(text).map_err(|e| CliError::data(format!("malformed fit artifact: {e}")))?;
        if art.format_version != FORMAT_VERSION {
            return Err(CliError::data(format!(
                "fit artifact format version {} is not supported (expected {FORMAT_VERSION})",
                art.format_version
            )));
        }
        Ok(art)
    }

    pub fn prior(&self) -> Result<PriorConfig, CliError> {
        let prior = PriorConfig {
            a: self.prior.a,
            b: self.prior.b,
            lambda_prior: self.prior.lambda_prior.parse::<LambdaPrior>()?,
        };
        prior.validate()?;
        Ok(prior)
    }

    pub fn fit_result(&self) -> Result<FitResult, CliError> {
        let method: Method = self.method.parse()?;
        let coefficients = self.coefficients.decode()?;
        if coefficients.len() != self.spec.n_coef() {
            return Err(CliError::data("coefficient count does not match the basis"));
        }
        let averaging = match &self.averaging {
            Some(a) => Some(a.lambdas.decode()?.into_iter().zip(a.weights.decode()?).collect()),
            None => None,
        };
        Ok(FitResult {
            method,
            spec: self.spec.clone(),
            transform: self.transform,
            lambda: self.lambda,
            averaging,
            coefficients,
            edf: self.edf,
            trace: ScoreTrace::default(),
            warnings: self.warnings.clone(),
        })
    }

    /// Rebuilds the training dataset after checking its digest.
    pub fn training_dataset(&self) -> Result<Dataset, CliError> {
        let tr = &self.training;
        let (s1, s2, t, value) = (tr.s1.decode()?, tr.s2.decode()?, tr.t.decode()?, tr.value.decode()?);
        if [s1.len(), s2.len(), t.len(), value.len(), tr.well_ids.len()].iter().any(|&l| l != tr.n) {
            return Err(CliError::data("training block lengths disagree"));
        }
        if digest(&tr.well_ids, [&s1, &s2, &t, &value]) != tr.sha256 {
            return Err(CliError::data("training data digest mismatch: the artifact was modified"));
        }
        let obs = (0..tr.n)
            .map(|i| Observation {
                well_id: tr.well_ids[i].clone(),
                s1: s1[i],
                s2: s2[i],
                t: t[i],
                value: value[i],
            })
            .collect();
        Ok(Dataset::new(obs, self.transform)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn block_round_trip_is_exact() {
        let v = [0.1, -0.0, f64::MIN_POSITIVE, 1e300, std::f64::consts::PI];
        let b = F64Block::encode(&v);
        let back = b.decode().unwrap();
        assert!(v.iter().zip(&back).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let mut b = F64Block::encode(&[1.0, 2.0]);
        b.len = 3;
        assert!(b.decode().is_err());
    }
}
