//! Binary outcomes: McNemar's statistic, its worst-case binomial bound, and
//! the agreement check against the studentized test.

use serde::{Deserialize, Serialize};
use statrs::function::factorial::ln_binomial;

use crate::adjusted::adjusted_diffs;
use crate::error::{Error, Result};
use crate::model::{theta, PairedDataset};
use crate::reference::{sens_test_exact, Side};
use crate::variance::build_q_intercept;

/// Largest `n` accepted by [`check_equivalence`].
pub const EQUIVALENCE_LIMIT: usize = 14;

/// Counts behind McNemar's statistic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct McNemarDecomp {
    /// Events among encouraged units.
    pub t_m: u64,
    /// Pairs with exactly one event.
    pub n_discordant: u64,
    /// Pairs with two events.
    pub n_both: u64,
    /// Discordant pairs whose event is in the encouraged unit.
    pub t_d: u64,
}

pub fn mcnemar_decompose(data: &PairedDataset) -> Result<McNemarDecomp> {
    let mut c = McNemarDecomp { t_m: 0, n_discordant: 0, n_both: 0, t_d: 0 };
    for p in data.pairs() {
        if p.y.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::NonBinaryOutcome { pair: p.pair_id.clone() });
        }
        let enc = p.y[0] == 1.0;
        let other = p.y[1] == 1.0;
        c.t_m += enc as u64;
        match (enc, other) {
            (true, true) => c.n_both += 1,
            (true, false) => {
                c.n_discordant += 1;
                c.t_d += 1;
            }
            (false, true) => c.n_discordant += 1,
            (false, false) => {}
        }
    }
    Ok(c)
}

/// `P(Binomial(|D|, gamma / (1 + gamma)) >= t_d)`, summed exactly in log
/// space.
pub fn mcnemar_sens_p(decomp: &McNemarDecomp, gamma: f64) -> Result<f64> {
    if !(gamma >= 1.0) || !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!("gamma must be finite and >= 1, got {gamma}")));
    }
    binomial_upper_tail(decomp.n_discordant, decomp.t_d, theta(gamma))
}

fn binomial_upper_tail(n: u64, k: u64, p: f64) -> Result<f64> {
    if k > n {
        return Err(Error::InvalidParameter(format!("t_d = {k} exceeds |D| = {n}")));
    }
    if k == 0 {
        return Ok(1.0);
    }
    if p >= 1.0 {
        return Ok(1.0);
    }
    let (lp, lq) = (p.ln(), (1.0 - p).ln());
    let logs: Vec<f64> = (k..=n).map(|j| ln_binomial(n, j) + j as f64 * lp + (n - j) as f64 * lq).collect();
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logs.iter().map(|l| (l - top).exp()).sum();
    Ok((top + sum.ln()).exp().min(1.0))
}

/// Side-by-side p-values from the binomial bound and the exact studentized
/// reference distribution at `lambda0 = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    pub gamma: f64,
    pub alpha: f64,
    pub mcnemar_p: f64,
    pub studentized_p: f64,
    pub mcnemar_reject: bool,
    pub studentized_reject: bool,
}

impl EquivalenceReport {
    pub fn agrees(&self, tol: f64) -> bool {
        (self.mcnemar_p - self.studentized_p).abs() <= tol && self.mcnemar_reject == self.studentized_reject
    }
}

pub fn check_equivalence(data: &PairedDataset, gamma: f64, alpha: f64) -> Result<EquivalenceReport> {
    let n = data.len();
    if n > EQUIVALENCE_LIMIT {
        return Err(Error::EnumerationTooLarge { n, limit: EQUIVALENCE_LIMIT });
    }
    let decomp = mcnemar_decompose(data)?;
    let mcnemar_p = mcnemar_sens_p(&decomp, gamma)?;
    let q = build_q_intercept(n)?;
    let exact = sens_test_exact(&adjusted_diffs(data, 0.0), gamma, alpha, &q, Side::Greater)?;
    Ok(EquivalenceReport {
        gamma,
        alpha,
        mcnemar_p,
        studentized_p: exact.p_bound,
        mcnemar_reject: mcnemar_p <= alpha,
        studentized_reject: exact.reject,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MatchedPair;

    fn binary(rows: &[(f64, f64)]) -> PairedDataset {
        let pairs = rows
            .iter()
            .enumerate()
            .map(|(i, &(a, b))| MatchedPair::encouraged_first(i.to_string(), [1.0, 0.0], [a, b]))
            .collect();
        PairedDataset::new(pairs, vec![]).unwrap()
    }

    #[test]
    fn all_zero_outcomes() {
        let c = mcnemar_decompose(&binary(&[(0.0, 0.0), (0.0, 0.0)])).unwrap();
        assert_eq!(c, McNemarDecomp { t_m: 0, n_discordant: 0, n_both: 0, t_d: 0 });
    }

    #[test]
    fn counting_example() {
        let c = mcnemar_decompose(&binary(&[(1.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0)])).unwrap();
        assert_eq!(c, McNemarDecomp { t_m: 3, n_discordant: 3, n_both: 1, t_d: 2 });
        assert_eq!(c.t_m, c.t_d + c.n_both);
    }

    #[test]
    fn unit_order_irrelevant() {
        let a = binary(&[(1.0, 0.0), (0.0, 1.0), (1.0, 1.0)]);
        let swapped = PairedDataset::new(
            a.pairs()
                .iter()
                .map(|p| MatchedPair::new(p.pair_id.clone(), [0, 1], [p.d[1], p.d[0]], [p.y[1], p.y[0]], [vec![], vec![]]))
                .collect(),
            vec![],
        )
        .unwrap();
        assert_eq!(mcnemar_decompose(&a).unwrap(), mcnemar_decompose(&swapped).unwrap());
    }

    #[test]
    fn non_binary_refused() {
        assert!(matches!(mcnemar_decompose(&binary(&[(0.5, 0.0), (1.0, 0.0)])), Err(Error::NonBinaryOutcome { .. })));
    }

    #[test]
    fn binomial_tails() {
        let d = McNemarDecomp { t_m: 10, n_discordant: 10, n_both: 0, t_d: 10 };
        assert!((mcnemar_sens_p(&d, 1.0).unwrap() - 0.5f64.powi(10)).abs() < 1e-15);
        let d0 = McNemarDecomp { t_d: 0, t_m: 0, ..d };
        assert_eq!(mcnemar_sens_p(&d0, 2.0).unwrap(), 1.0);
        let d1 = McNemarDecomp { t_m: 1, n_discordant: 1, n_both: 0, t_d: 1 };
        assert!((mcnemar_sens_p(&d1, 3.0).unwrap() - 0.75).abs() < 1e-15);
        let empty = McNemarDecomp { t_m: 0, n_discordant: 0, n_both: 0, t_d: 0 };
        assert_eq!(mcnemar_sens_p(&empty, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn large_counts_stay_finite() {
        let d = McNemarDecomp { t_m: 2600, n_discordant: 5000, n_both: 0, t_d: 2600 };
        let p = mcnemar_sens_p(&d, 1.0).unwrap();
        assert!(p > 0.0 && p < 0.01);
    }

    #[test]
    fn equivalence_small_example() {
        let data = binary(&[(1.0, 0.0), (1.0, 0.0), (0.0, 1.0), (1.0, 1.0), (1.0, 0.0), (0.0, 0.0)]);
        for g in [1.0, 1.5, 2.0, 4.0] {
            let r = check_equivalence(&data, g, 0.05).unwrap();
            assert!(r.agrees(1e-10), "{r:?}");
        }
    }

    #[test]
    fn all_concordant_degenerates_to_one() {
        let data = binary(&[(1.0, 1.0), (0.0, 0.0), (1.0, 1.0)]);
        let r = check_equivalence(&data, 2.0, 0.05).unwrap();
        assert_eq!(r.mcnemar_p, 1.0);
        assert!((r.studentized_p - 1.0).abs() < 1e-12);
    }
}
