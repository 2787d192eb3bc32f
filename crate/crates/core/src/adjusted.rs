//! Dose-adjusted paired differences and their bias-shifted form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PairedDataset;

/// Relative size below which a standard error counts as zero.
pub(crate) const DEGENERATE_SE: f64 = 1e-12;

/// Encouraged-minus-unencouraged differences of `Y - lambda0 * D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjustedDiffs {
    pub lambda0: f64,
    pub zeta: Vec<f64>,
    pub abs_zeta: Vec<f64>,
}

impl AdjustedDiffs {
    /// Wraps an already computed vector of adjusted differences.
    pub fn from_zeta(lambda0: f64, zeta: Vec<f64>) -> Self {
        let abs_zeta = zeta.iter().map(|z| z.abs()).collect();
        AdjustedDiffs { lambda0, zeta, abs_zeta }
    }

    pub fn len(&self) -> usize {
        self.zeta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zeta.is_empty()
    }

    /// The same magnitudes with every sign reversed; the greater-than test
    /// on the negation is the less-than test on the original.
    pub fn negated(&self) -> Self {
        AdjustedDiffs {
            lambda0: self.lambda0,
            zeta: self.zeta.iter().map(|z| -z).collect(),
            abs_zeta: self.abs_zeta.clone(),
        }
    }

    pub fn mean(&self) -> f64 {
        self.zeta.iter().sum::<f64>() / self.zeta.len() as f64
    }
}

pub fn adjusted_diffs(data: &PairedDataset, lambda0: f64) -> AdjustedDiffs {
    let zeta = data
        .pairs()
        .iter()
        .map(|p| p.outcome_diff() - lambda0 * p.dose_diff())
        .collect();
    AdjustedDiffs::from_zeta(lambda0, zeta)
}

/// `(gamma - 1) / (gamma + 1)`, the share of `|zeta|` subtracted at bias
/// level `gamma`.
pub fn shift_factor(gamma: f64) -> f64 {
    (gamma - 1.0) / (gamma + 1.0)
}

/// Shifted differences `L_i = zeta_i - kappa |zeta_i|` written so that the
/// observed vector and a reference draw with the observed signs agree bit for
/// bit.
pub fn shifted(adj: &AdjustedDiffs, gamma: f64) -> Vec<f64> {
    let kappa = shift_factor(gamma);
    adj.zeta.iter().zip(&adj.abs_zeta).map(|(z, a)| z - kappa * a).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaShifted {
    pub gamma: f64,
    pub l: Vec<f64>,
    pub l_bar: f64,
    /// Conventional paired standard error of `l_bar`.
    pub se: f64,
    /// `l_bar / se`, or its limit `+inf` / `-inf` when `degenerate`.
    pub t_stat: f64,
    /// All `l_i` equal, so the standard error vanishes.
    pub degenerate: bool,
}

pub fn gamma_shift(adj: &AdjustedDiffs, gamma: f64) -> Result<GammaShifted> {
    if !(gamma >= 1.0) {
        return Err(Error::InvalidParameter(format!("gamma must be >= 1, got {gamma}")));
    }
    let n = adj.len();
    if n < 2 {
        return Err(Error::TooFewPairs { needed: 2, found: n });
    }
    let l = shifted(adj, gamma);
    let l_bar = l.iter().sum::<f64>() / n as f64;
    let ss: f64 = l.iter().map(|v| (v - l_bar).powi(2)).sum();
    let se = (ss / (n * (n - 1)) as f64).sqrt();
    let scale = rms(&l);
    let degenerate = is_degenerate(se, scale);
    let t_stat = studentize(l_bar, se, scale);
    Ok(GammaShifted { gamma, l, l_bar, se, t_stat, degenerate })
}

pub(crate) fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

pub(crate) fn is_degenerate(se: f64, scale: f64) -> bool {
    scale == 0.0 || se <= DEGENERATE_SE * scale
}

/// `mean / se`, with a vanishing standard error sent to `+inf` when the mean
/// is positive and `-inf` otherwise.
pub(crate) fn studentize(mean: f64, se: f64, scale: f64) -> f64 {
    if is_degenerate(se, scale) {
        if mean > DEGENERATE_SE * scale {
            f64::INFINITY
        } else {
            f64::NEG_INFINITY
        }
    } else {
        mean / se
    }
}
