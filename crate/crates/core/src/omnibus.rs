//! Omnibus randomization test of the proportional-dose model.
//!
//! Under the sharp model at `lambda0` the magnitudes `|zeta_i|` are fixed and
//! only their signs are random, so the F statistic for covariates explains
//! `zeta` has a sign-flip reference distribution. The effect ratio is a
//! nuisance: the p-value is maximized over a `1 - beta` confidence interval
//! and `beta` is added to the maximum.

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjusted::adjusted_diffs;
use crate::error::{Error, Result};
use crate::model::PairedDataset;
use crate::reference::{sens_interval_with, stream, Engine, Reference};
use crate::variance::QDesign;

/// Points strictly inside the confidence interval; both endpoints are added.
pub const DEFAULT_GRID_INTERIOR: usize = 101;
pub const DEFAULT_BETA: f64 = 0.01;

/// Relative residual size treated as a perfect fit.
const PERFECT_FIT: f64 = 1e-10;

fn check_design(n: usize, q: &QDesign) -> Result<()> {
    if q.rank() < 2 {
        return Err(Error::InvalidParameter("F statistic needs a design with more than one column".into()));
    }
    if q.n() != n {
        return Err(Error::InvalidParameter(format!("design has {} rows for {n} pairs", q.n())));
    }
    Ok(())
}

fn f_value(zeta: &[f64], q: &QDesign, scratch: &mut Vec<f64>) -> f64 {
    let n = zeta.len() as f64;
    let p = q.rank() as f64;
    let total: f64 = zeta.iter().map(|z| z * z).sum();
    let sum: f64 = zeta.iter().sum();
    let explained = q.projection_ss_with(zeta, scratch);
    let sse1 = (total - explained).max(0.0);
    let gain = (explained - sum * sum / n).max(0.0);
    if sse1 <= PERFECT_FIT * total {
        return if gain > PERFECT_FIT * total { f64::INFINITY } else { 0.0 };
    }
    (gain / (p - 1.0)) / (sse1 / (n - p))
}

/// F statistic comparing the fit of `zeta` on `q` with the intercept-only fit.
pub fn f_statistic(zeta: &[f64], q: &QDesign) -> Result<f64> {
    check_design(zeta.len(), q)?;
    Ok(f_value(zeta, q, &mut Vec::new()))
}

fn at_least(a: f64, t: f64) -> bool {
    if t.is_infinite() || a.is_infinite() {
        return a >= t;
    }
    a >= t - 1e-10 * t.abs().max(1.0)
}

/// Uniform sign vectors, one row per replicate, shared by every `lambda0`.
#[derive(Debug, Clone)]
pub struct SignFlips {
    n: usize,
    signs: Vec<bool>,
}

impl SignFlips {
    /// Row `m` comes from the ChaCha stream keyed by `(seed, m)`.
    pub fn new(seed: u64, m_reps: usize, n: usize) -> Self {
        let mut signs = vec![false; m_reps * n];
        signs.par_chunks_mut(n.max(1)).enumerate().for_each(|(m, row)| {
            let mut rng = stream(seed, m);
            row.iter_mut().for_each(|s| *s = rng.next_u32() < 1 << 31);
        });
        SignFlips { n, signs }
    }

    pub fn m_reps(&self) -> usize {
        if self.n == 0 {
            0
        } else {
            self.signs.len() / self.n
        }
    }

    /// Randomization p-value of the observed F for `zeta`.
    pub fn p_value(&self, zeta: &[f64], q: &QDesign) -> Result<f64> {
        check_design(zeta.len(), q)?;
        if zeta.len() != self.n {
            return Err(Error::InvalidParameter("sign bank size does not match data".into()));
        }
        let mut scratch = Vec::new();
        let observed = f_value(zeta, q, &mut scratch);
        let count = self
            .signs
            .par_chunks(self.n)
            .map_init(
                || (Vec::new(), vec![0.0; self.n]),
                |(scratch, flipped), row| {
                    for ((f, z), &s) in flipped.iter_mut().zip(zeta).zip(row) {
                        *f = if s { z.abs() } else { -z.abs() };
                    }
                    at_least(f_value(flipped, q, scratch), observed) as usize
                },
            )
            .sum::<usize>();
        Ok((1 + count) as f64 / (1 + self.m_reps()) as f64)
    }
}

/// Randomization p-value for the proportional-dose model at `lambda0`.
pub fn prop_dose_p(data: &PairedDataset, lambda0: f64, q: &QDesign, m_reps: usize, seed: u64) -> Result<f64> {
    SignFlips::new(seed, m_reps, data.len()).p_value(&adjusted_diffs(data, lambda0).zeta, q)
}

/// Exact p-value over all `2^n` sign vectors.
pub fn prop_dose_p_exact(data: &PairedDataset, lambda0: f64, q: &QDesign) -> Result<f64> {
    let n = data.len();
    if n > crate::reference::EXACT_LIMIT {
        return Err(Error::EnumerationTooLarge { n, limit: crate::reference::EXACT_LIMIT });
    }
    let zeta = adjusted_diffs(data, lambda0).zeta;
    check_design(n, q)?;
    let mut scratch = Vec::new();
    let observed = f_value(&zeta, q, &mut scratch);
    let mut flipped = vec![0.0; n];
    let mut count = 0u64;
    for mask in 0u64..1 << n {
        for (i, (f, z)) in flipped.iter_mut().zip(&zeta).enumerate() {
            *f = if mask >> i & 1 == 1 { z.abs() } else { -z.abs() };
        }
        count += at_least(f_value(&flipped, q, &mut scratch), observed) as u64;
    }
    Ok(count as f64 / (1u64 << n) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmnibusConfig {
    pub beta: f64,
    pub alpha: f64,
    pub grid_interior: usize,
    pub m_reps: usize,
    /// Replicates used when inverting the test for the confidence interval.
    pub ci_m_reps: usize,
    pub seed: u64,
}

impl Default for OmnibusConfig {
    fn default() -> Self {
        OmnibusConfig {
            beta: DEFAULT_BETA,
            alpha: 0.05,
            grid_interior: DEFAULT_GRID_INTERIOR,
            m_reps: 10_000,
            ci_m_reps: 10_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmnibusResult {
    pub beta: f64,
    pub alpha: f64,
    /// `1 - beta` interval for the effect ratio; `None` when empty.
    pub ci_lambda: Option<(f64, f64)>,
    pub sup_p: f64,
    /// Grid point attaining `sup_p`.
    pub argmax_lambda0: Option<f64>,
    pub p_beta: f64,
    pub reject: bool,
    pub grid_size: usize,
    pub f_engine: Engine,
    pub ci_engine: Engine,
    pub m_reps: usize,
    pub seed: u64,
    /// The interval was empty or unbounded, so the supremum is not a grid
    /// maximum.
    pub flagged: bool,
}

/// Berger-Boos omnibus test. `q_f` is the F-test design, `q_ci` the design of
/// the `gamma = 1` test inverted for the interval.
pub fn omnibus_test(data: &PairedDataset, q_f: &QDesign, q_ci: &QDesign, config: &OmnibusConfig) -> Result<OmnibusResult> {
    let OmnibusConfig { beta, alpha, grid_interior, m_reps, ci_m_reps, seed } = *config;
    if !(beta > 0.0 && beta < alpha) {
        return Err(Error::InvalidParameter(format!("beta must lie in (0, alpha), got {beta}")));
    }
    check_design(data.len(), q_f)?;
    let base = OmnibusResult {
        beta,
        alpha,
        ci_lambda: None,
        sup_p: 0.0,
        argmax_lambda0: None,
        p_beta: beta,
        reject: beta <= alpha,
        grid_size: 0,
        f_engine: q_f.kind().into(),
        ci_engine: q_ci.kind().into(),
        m_reps,
        seed,
        flagged: true,
    };
    // The interval uses a stream family disjoint from the sign flips.
    let reference = Reference::new(seed ^ 0x9E37_79B9_7F4A_7C15, ci_m_reps).with_bank(data.len());
    let ci = match sens_interval_with(data, 1.0, beta, q_ci, &reference) {
        Ok(ci) => ci,
        Err(Error::EmptyInterval) => return Ok(base),
        Err(e) => return Err(e),
    };
    if !(ci.lo.is_finite() && ci.hi.is_finite()) {
        return Ok(OmnibusResult { ci_lambda: Some((ci.lo, ci.hi)), sup_p: 1.0, p_beta: 1.0, reject: false, ..base });
    }
    let size = grid_interior + 2;
    let grid: Vec<f64> = (0..size).map(|i| ci.lo + (ci.hi - ci.lo) * i as f64 / (size - 1) as f64).collect();
    let flips = SignFlips::new(seed, m_reps, data.len());
    let ps = grid
        .iter()
        .map(|&l0| flips.p_value(&adjusted_diffs(data, l0).zeta, q_f))
        .collect::<Result<Vec<f64>>>()?;
    let (arg, sup_p) = ps.iter().cloned().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, p)| if p > acc.1 { (i, p) } else { acc });
    let p_beta = (sup_p + beta).min(1.0);
    Ok(OmnibusResult {
        ci_lambda: Some((ci.lo, ci.hi)),
        sup_p,
        argmax_lambda0: Some(grid[arg]),
        p_beta,
        reject: p_beta <= alpha,
        grid_size: size,
        flagged: false,
        ..base
    })
}
