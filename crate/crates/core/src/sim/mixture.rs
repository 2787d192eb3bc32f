//! Power of the sensitivity analysis when adjusted differences follow the
//! three-component mixture.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, rng_for};
use crate::adjusted::AdjustedDiffs;
use crate::design::{MixtureSpec, NoiseFamily};
use crate::error::{Error, Result};
use crate::reference::{Reference, Side};
use crate::variance::build_q_intercept;

fn draw_noise(spec: &MixtureSpec, rng: &mut impl Rng) -> Result<f64> {
    match &spec.noise {
        NoiseFamily::Normal => Ok(spec.sigma * rng.sample::<f64, _>(StandardNormal)),
        NoiseFamily::Laplace => {
            let u: f64 = rng.random::<f64>() - 0.5;
            Ok(-spec.sigma / std::f64::consts::SQRT_2 * u.signum() * (1.0 - 2.0 * u.abs()).ln())
        }
        NoiseFamily::Custom { name, .. } => Err(Error::InvalidParameter(format!("cannot sample from custom noise '{name}'"))),
    }
}

/// `n` independent adjusted differences at `spec.lambda0`.
pub fn gen_mixture(spec: &MixtureSpec, n: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    spec.validate()?;
    let (plus, minus, _) = spec.shift_probs();
    let delta = spec.delta();
    (0..n)
        .map(|_| {
            let u: f64 = rng.random();
            let shift = if u < plus {
                delta
            } else if u < plus + minus {
                -delta
            } else {
                0.0
            };
            Ok(draw_noise(spec, rng)? + shift)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerArm {
    pub label: String,
    pub spec: MixtureSpec,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerConfig {
    pub arms: Vec<PowerArm>,
    /// Ascending, each at least 1.
    pub gammas: Vec<f64>,
    pub alpha: f64,
    pub reps: usize,
    pub m_reps: usize,
    pub seed: u64,
}

impl PowerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps == 0 || self.m_reps == 0 {
            return Err(Error::InvalidParameter("reps and m_reps must be positive".into()));
        }
        if self.gammas.is_empty() || self.gammas[0] < 1.0 || self.gammas.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidParameter("gamma grid must be nonempty, ascending and >= 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        for arm in &self.arms {
            arm.spec.validate()?;
            if arm.n < 2 {
                return Err(Error::TooFewPairs { needed: 2, found: arm.n });
            }
        }
        Ok(())
    }
}

/// Septic and non-septic arms with `n_septic / 8` non-septic pairs,
/// compliance 0.75 and Normal noise, tested at `lambda0 = 0`.
pub fn figure1_config(n_septic: usize, gammas: Vec<f64>, reps: usize, m_reps: usize, seed: u64) -> Result<PowerConfig> {
    let arm = |label: &str, lambda, sigma, n| -> Result<PowerArm> {
        Ok(PowerArm { label: label.into(), spec: MixtureSpec::with_compliance(lambda, sigma, 0.75, NoiseFamily::Normal)?, n })
    };
    Ok(PowerConfig {
        arms: vec![arm("septic", 6.8, 25.3, n_septic)?, arm("non-septic", 4.1, 8.9, n_septic / 8)?],
        gammas,
        alpha: 0.05,
        reps,
        m_reps,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerRow {
    pub subgroup: String,
    pub gamma: f64,
    pub n: usize,
    pub power: f64,
}

/// Rejection rate of the one-sided conventional test of `lambda0` at each
/// `gamma`. A replicate reuses its sample and reference uniforms across the
/// grid.
pub fn run_power(cfg: &PowerConfig) -> Result<Vec<PowerRow>> {
    cfg.validate()?;
    let mut rows = Vec::new();
    for (a, arm) in cfg.arms.iter().enumerate() {
        let q = build_q_intercept(arm.n)?;
        let hits = (0..cfg.reps)
            .into_par_iter()
            .map(|r| -> Result<Vec<bool>> {
                let mut rng = rng_for(cfg.seed, &[a as u64, r as u64, 0]);
                let zeta = gen_mixture(&arm.spec, arm.n, &mut rng)?;
                let adj = AdjustedDiffs::from_zeta(arm.spec.lambda0, zeta);
                let reference = Reference::new(derive_seed(cfg.seed, &[a as u64, r as u64, 1]), cfg.m_reps).with_bank(arm.n);
                cfg.gammas.iter().map(|&g| Ok(reference.test(&adj, g, cfg.alpha, &q, Side::Greater)?.reject)).collect()
            })
            .collect::<Result<Vec<_>>>()?;
        for (g, &gamma) in cfg.gammas.iter().enumerate() {
            let count = hits.iter().filter(|h| h[g]).count();
            rows.push(PowerRow { subgroup: arm.label.clone(), gamma, n: arm.n, power: count as f64 / cfg.reps as f64 });
        }
    }
    Ok(rows)
}
