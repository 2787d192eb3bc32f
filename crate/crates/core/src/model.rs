//! Matched-pair observations, dataset validation and the effect-ratio point
//! estimate.
//!
//! A validated [`PairedDataset`] stores every pair in canonical order: unit 0
//! is the encouraged unit and unit 1 the unencouraged one. All downstream
//! formulas rely on that convention, so `(Z_i1 - Z_i2)` is always `+1`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One matched pair: two units, exactly one of them encouraged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub pair_id: String,
    /// Encouragement flags; exactly one equals 1.
    pub z: [u8; 2],
    /// Exposure actually received.
    pub d: [f64; 2],
    /// Observed outcomes.
    pub y: [f64; 2],
    /// Unit-level covariates, common length `k` across the dataset.
    pub x: [Vec<f64>; 2],
    #[serde(default)]
    pub subgroup: Option<String>,
}

impl MatchedPair {
    pub fn new(
        pair_id: impl Into<String>,
        z: [u8; 2],
        d: [f64; 2],
        y: [f64; 2],
        x: [Vec<f64>; 2],
    ) -> Self {
        MatchedPair { pair_id: pair_id.into(), z, d, y, x, subgroup: None }
    }

    /// A pair without covariates whose first unit is the encouraged one.
    pub fn encouraged_first(pair_id: impl Into<String>, d: [f64; 2], y: [f64; 2]) -> Self {
        MatchedPair::new(pair_id, [1, 0], d, y, [Vec::new(), Vec::new()])
    }

    pub fn with_subgroup(mut self, label: impl Into<String>) -> Self {
        self.subgroup = Some(label.into());
        self
    }

    /// Encouraged-minus-unencouraged outcome difference.
    pub fn outcome_diff(&self) -> f64 {
        self.sign() * (self.y[0] - self.y[1])
    }

    /// Encouraged-minus-unencouraged exposure difference.
    pub fn dose_diff(&self) -> f64 {
        self.sign() * (self.d[0] - self.d[1])
    }

    /// Covariate averages over the two units.
    pub fn covariate_means(&self) -> Vec<f64> {
        self.x[0].iter().zip(&self.x[1]).map(|(a, b)| 0.5 * (a + b)).collect()
    }

    fn sign(&self) -> f64 {
        if self.z[0] == 1 {
            1.0
        } else {
            -1.0
        }
    }

    fn canonicalize(&mut self) {
        if self.z[0] == 0 {
            self.z.swap(0, 1);
            self.d.swap(0, 1);
            self.y.swap(0, 1);
            self.x.swap(0, 1);
        }
    }
}

/// Options relaxing the validator.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationOptions {
    /// Admit real-valued exposures in `[0, 1]` instead of requiring `{0, 1}`.
    pub allow_fractional_dose: bool,
}

/// A validated collection of matched pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDataset {
    pairs: Vec<MatchedPair>,
    covariate_names: Vec<String>,
}

impl PairedDataset {
    /// Validates with default options. See [`validate_dataset`].
    pub fn new(pairs: Vec<MatchedPair>, covariate_names: Vec<String>) -> Result<Self> {
        validate_dataset(pairs, covariate_names, ValidationOptions::default())
    }

    pub fn pairs(&self) -> &[MatchedPair] {
        &self.pairs
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Number of covariates per unit.
    pub fn covariate_dim(&self) -> usize {
        self.pairs.first().map_or(0, |p| p.x[0].len())
    }

    pub fn outcome_diffs(&self) -> Vec<f64> {
        self.pairs.iter().map(MatchedPair::outcome_diff).collect()
    }

    pub fn dose_diffs(&self) -> Vec<f64> {
        self.pairs.iter().map(MatchedPair::dose_diff).collect()
    }

    /// Row `i` holds the within-pair covariate averages of pair `i`.
    pub fn pair_means(&self) -> Vec<Vec<f64>> {
        self.pairs.iter().map(MatchedPair::covariate_means).collect()
    }

    /// Keeps only the pairs carrying the given subgroup label.
    pub fn filter_subgroup(&self, label: &str) -> Result<PairedDataset> {
        let pairs: Vec<_> = self
            .pairs
            .iter()
            .filter(|p| p.subgroup.as_deref() == Some(label))
            .cloned()
            .collect();
        if pairs.len() < 2 {
            return Err(Error::TooFewPairs { needed: 2, found: pairs.len() });
        }
        Ok(PairedDataset { pairs, covariate_names: self.covariate_names.clone() })
    }

    /// Distinct subgroup labels in order of first appearance.
    pub fn subgroups(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for p in &self.pairs {
            if let Some(s) = &p.subgroup {
                if seen.insert(s.clone()) {
                    out.push(s.clone());
                }
            }
        }
        out
    }
}

/// Checks every pair-level invariant and returns the dataset in canonical
/// order (encouraged unit first).
pub fn validate_dataset(
    mut pairs: Vec<MatchedPair>,
    covariate_names: Vec<String>,
    options: ValidationOptions,
) -> Result<PairedDataset> {
    if pairs.len() < 2 {
        return Err(Error::TooFewPairs { needed: 2, found: pairs.len() });
    }
    let k = pairs[0].x[0].len();
    if !covariate_names.is_empty() && covariate_names.len() != k {
        return Err(Error::RaggedCovariates {
            pair: pairs[0].pair_id.clone(),
            expected: covariate_names.len(),
            found: k,
        });
    }
    let mut ids = HashSet::with_capacity(pairs.len());
    for p in &mut pairs {
        if !ids.insert(p.pair_id.clone()) {
            return Err(Error::DuplicatePairId(p.pair_id.clone()));
        }
        let [z1, z2] = p.z;
        if z1 > 1 || z2 > 1 || z1 + z2 != 1 {
            return Err(Error::Encouragement { pair: p.pair_id.clone(), z1, z2 });
        }
        for &d in &p.d {
            if options.allow_fractional_dose {
                if !(0.0..=1.0).contains(&d) {
                    return Err(Error::DoseOutOfRange { pair: p.pair_id.clone(), value: d });
                }
            } else if d != 0.0 && d != 1.0 {
                return Err(Error::NonBinaryDose { pair: p.pair_id.clone(), value: d });
            }
        }
        if p.y.iter().any(|y| !y.is_finite()) {
            return Err(Error::NonFiniteOutcome { pair: p.pair_id.clone() });
        }
        for unit in &p.x {
            if unit.len() != k {
                return Err(Error::RaggedCovariates {
                    pair: p.pair_id.clone(),
                    expected: k,
                    found: unit.len(),
                });
            }
            if unit.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteCovariate { pair: p.pair_id.clone() });
            }
        }
        p.canonicalize();
    }
    Ok(PairedDataset { pairs, covariate_names })
}

/// Ratio of the summed encouraged-minus-unencouraged outcome differences to
/// the summed exposure differences. It is the root in `lambda0` of the mean
/// adjusted difference.
pub fn effect_ratio_estimate(data: &PairedDataset) -> Result<f64> {
    let num: f64 = data.pairs.iter().map(MatchedPair::outcome_diff).sum();
    let den: f64 = data.pairs.iter().map(MatchedPair::dose_diff).sum();
    if den == 0.0 {
        return Err(Error::DegenerateInstrument);
    }
    Ok(num / den)
}

/// Bias level, test size and Monte Carlo settings for one sensitivity test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityParams {
    pub gamma: f64,
    pub alpha: f64,
    pub m_reps: usize,
    pub seed: u64,
}

impl SensitivityParams {
    pub const DEFAULT_REPS: usize = 10_000;

    pub fn new(gamma: f64, alpha: f64, m_reps: usize, seed: u64) -> Result<Self> {
        if !(gamma >= 1.0 && gamma.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma must be >= 1, got {gamma}")));
        }
        if !(alpha > 0.0 && alpha <= 0.5) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0, 0.5], got {alpha}")));
        }
        if m_reps == 0 {
            return Err(Error::InvalidParameter("m_reps must be positive".into()));
        }
        Ok(SensitivityParams { gamma, alpha, m_reps, seed })
    }

    /// Worst-case probability that the encouraged unit is the one with the
    /// larger hidden bias: `gamma / (1 + gamma)`.
    pub fn theta(&self) -> f64 {
        theta(self.gamma)
    }

    pub fn with_gamma(self, gamma: f64) -> Self {
        SensitivityParams { gamma, ..self }
    }
}

impl Default for SensitivityParams {
    fn default() -> Self {
        SensitivityParams { gamma: 1.0, alpha: 0.05, m_reps: Self::DEFAULT_REPS, seed: 0 }
    }
}

pub fn theta(gamma: f64) -> f64 {
    gamma / (1.0 + gamma)
}
