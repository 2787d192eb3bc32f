//! Covariate-adjusted standard errors for the mean of the shifted
//! differences.
//!
//! For a fixed design `Q` with hat matrix `H` and leverages `h_ii`, the
//! estimator is
//!
//! ```text
//! se(L; Q)^2 = (1/n^2) * Lt' (I - H) Lt,    Lt_i = L_i / sqrt(1 - h_ii)
//! ```
//!
//! Three designs are provided: the intercept (which reproduces the usual
//! paired standard error), an intercept plus within-pair covariate averages,
//! and indicator columns for pairs of pairs. Designs built from indicator
//! columns are stored as a partition, so projections cost `O(n)`; dense
//! designs keep an orthonormal basis of their column space.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PairedDataset;
use crate::pairing::PairsOfPairs;

/// Tolerance (relative to a column's own norm) under which a column is
/// treated as lying in the span of the columns before it.
const COLLINEAR_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignKind {
    Intercept,
    Regression,
    PairsOfPairs,
}

/// How the residual quadratic form is turned into a variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeConvention {
    /// Leverage-scaled residuals over `n^2`.
    #[default]
    LeverageScaled,
    /// Unscaled residual sum of squares over `n (n - p)`: the regression
    /// RMSE divided by `sqrt(n)`.
    Rmse,
}

#[derive(Debug, Clone, PartialEq)]
enum Projector {
    /// Projection onto indicator columns of a partition.
    Groups { group_of: Vec<usize>, sizes: Vec<usize> },
    /// Orthonormal basis vectors of the column space, each of length `n`.
    Basis { basis: Vec<Vec<f64>> },
}

/// A design matrix fixed across randomizations, with its leverages cached.
#[derive(Debug, Clone, PartialEq)]
pub struct QDesign {
    kind: DesignKind,
    n: usize,
    rank: usize,
    hat_diag: Vec<f64>,
    inv_sqrt_resid: Vec<f64>,
    projector: Projector,
    dropped: Vec<usize>,
    convention: SeConvention,
}

impl QDesign {
    pub fn kind(&self) -> DesignKind {
        self.kind
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of linearly independent columns retained.
    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn hat_diag(&self) -> &[f64] {
        &self.hat_diag
    }

    /// Indices (into the columns supplied) dropped as collinear.
    pub fn dropped_columns(&self) -> &[usize] {
        &self.dropped
    }

    pub fn convention(&self) -> SeConvention {
        self.convention
    }

    pub fn with_convention(mut self, convention: SeConvention) -> Self {
        self.convention = convention;
        self
    }

    /// Builds a design from the partition `group_of[i]` (indicator columns).
    pub fn from_groups(kind: DesignKind, group_of: Vec<usize>) -> Result<Self> {
        let n = group_of.len();
        let n_groups = group_of.iter().max().map_or(0, |g| g + 1);
        let mut sizes = vec![0usize; n_groups];
        for &g in &group_of {
            sizes[g] += 1;
        }
        if let Some(g) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::MalformedPairing(format!("group {g} is empty")));
        }
        let hat_diag: Vec<f64> = group_of.iter().map(|&g| 1.0 / sizes[g] as f64).collect();
        let design = QDesign::assemble(kind, hat_diag, Projector::Groups { group_of, sizes }, Vec::new())?;
        if design.rank >= n {
            return Err(Error::DesignTooWide { columns: design.rank, n });
        }
        Ok(design)
    }

    /// Builds a design from dense columns, each of length `n`. Columns in the
    /// span of earlier ones are dropped and recorded.
    pub fn from_columns(kind: DesignKind, columns: &[Vec<f64>]) -> Result<Self> {
        let n = columns.first().map(Vec::len).unwrap_or(0);
        if n == 0 {
            return Err(Error::InvalidParameter("design has no rows".into()));
        }
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut dropped = Vec::new();
        for (j, col) in columns.iter().enumerate() {
            if col.len() != n {
                return Err(Error::InvalidParameter(format!("column {j} has length {}, expected {n}", col.len())));
            }
            let norm0 = dot(col, col).sqrt();
            let mut v = col.clone();
            // Two passes of modified Gram-Schmidt keep the basis orthogonal to
            // working precision.
            for _ in 0..2 {
                for u in &basis {
                    let c = dot(u, &v);
                    v.iter_mut().zip(u).for_each(|(vi, ui)| *vi -= c * ui);
                }
            }
            let norm = dot(&v, &v).sqrt();
            if norm0 == 0.0 || norm <= COLLINEAR_TOL * norm0 {
                dropped.push(j);
                continue;
            }
            v.iter_mut().for_each(|vi| *vi /= norm);
            basis.push(v);
        }
        if basis.len() >= n {
            return Err(Error::DesignTooWide { columns: basis.len(), n });
        }
        let mut hat_diag = vec![0.0; n];
        for u in &basis {
            hat_diag.iter_mut().zip(u).for_each(|(h, ui)| *h += ui * ui);
        }
        QDesign::assemble(kind, hat_diag, Projector::Basis { basis }, dropped)
    }

    fn assemble(kind: DesignKind, hat_diag: Vec<f64>, projector: Projector, dropped: Vec<usize>) -> Result<Self> {
        let n = hat_diag.len();
        if let Some(row) = hat_diag.iter().position(|&h| h >= 1.0 - 1e-12) {
            return Err(Error::UnitLeverage { row });
        }
        let rank = match &projector {
            Projector::Groups { sizes, .. } => sizes.len(),
            Projector::Basis { basis } => basis.len(),
        };
        let inv_sqrt_resid = hat_diag.iter().map(|h| 1.0 / (1.0 - h).sqrt()).collect();
        Ok(QDesign {
            kind,
            n,
            rank,
            hat_diag,
            inv_sqrt_resid,
            projector,
            dropped,
            convention: SeConvention::LeverageScaled,
        })
    }

    /// Residual sum of squares of `v` after projecting onto the design.
    pub fn residual_ss(&self, v: &[f64]) -> f64 {
        let mut scratch = Vec::new();
        self.residual_ss_with(v, &mut scratch)
    }

    pub(crate) fn residual_ss_with(&self, v: &[f64], scratch: &mut Vec<f64>) -> f64 {
        debug_assert_eq!(v.len(), self.n);
        match &self.projector {
            Projector::Groups { group_of, sizes } => {
                if sizes.len() == 1 {
                    let m = v.iter().sum::<f64>() / v.len() as f64;
                    return v.iter().map(|x| (x - m) * (x - m)).sum();
                }
                scratch.clear();
                scratch.resize(sizes.len(), 0.0);
                for (x, &g) in v.iter().zip(group_of) {
                    scratch[g] += x;
                }
                for (s, &size) in scratch.iter_mut().zip(sizes) {
                    *s /= size as f64;
                }
                v.iter().zip(group_of).map(|(x, &g)| (x - scratch[g]).powi(2)).sum()
            }
            Projector::Basis { basis } => {
                scratch.clear();
                scratch.extend(basis.iter().map(|u| dot(u, v)));
                let mut ss = 0.0;
                for (i, x) in v.iter().enumerate() {
                    let mut fit = 0.0;
                    for (c, u) in scratch.iter().zip(basis) {
                        fit += c * u[i];
                    }
                    ss += (x - fit) * (x - fit);
                }
                ss
            }
        }
    }

    /// Squared norm of the projection of `v` onto the design's column space.
    pub fn projection_ss(&self, v: &[f64]) -> f64 {
        let mut scratch = Vec::new();
        self.projection_ss_with(v, &mut scratch)
    }

    pub(crate) fn projection_ss_with(&self, v: &[f64], scratch: &mut Vec<f64>) -> f64 {
        debug_assert_eq!(v.len(), self.n);
        match &self.projector {
            Projector::Groups { group_of, sizes } => {
                scratch.clear();
                scratch.resize(sizes.len(), 0.0);
                for (x, &g) in v.iter().zip(group_of) {
                    scratch[g] += x;
                }
                scratch.iter().zip(sizes).map(|(s, &size)| s * s / size as f64).sum()
            }
            Projector::Basis { basis } => basis.iter().map(|u| dot(u, v).powi(2)).sum(),
        }
    }

    /// Squared standard error of the mean of `l` under this design.
    pub(crate) fn se2_with(&self, l: &[f64], scaled: &mut Vec<f64>, scratch: &mut Vec<f64>) -> f64 {
        let n = self.n as f64;
        match self.convention {
            SeConvention::LeverageScaled => {
                scaled.clear();
                scaled.extend(l.iter().zip(&self.inv_sqrt_resid).map(|(x, s)| x * s));
                self.residual_ss_with(scaled, scratch) / (n * n)
            }
            SeConvention::Rmse => self.residual_ss_with(l, scratch) / (n * (n - self.rank as f64)),
        }
    }
}

/// Intercept-only design: `h_ii = 1/n`.
pub fn build_q_intercept(n: usize) -> Result<QDesign> {
    if n < 2 {
        return Err(Error::TooFewPairs { needed: 2, found: n });
    }
    QDesign::from_groups(DesignKind::Intercept, vec![0; n])
}

/// Intercept plus the within-pair covariate averages.
pub fn build_q_regression(data: &PairedDataset) -> Result<QDesign> {
    let n = data.len();
    let k = data.covariate_dim();
    if n <= k + 1 {
        return Err(Error::DesignTooWide { columns: k + 1, n });
    }
    if k == 0 {
        let q = build_q_intercept(n)?;
        return Ok(QDesign { kind: DesignKind::Regression, ..q });
    }
    let means = data.pair_means();
    let mut columns = vec![vec![1.0; n]];
    for j in 0..k {
        columns.push(means.iter().map(|row| row[j]).collect());
    }
    QDesign::from_columns(DesignKind::Regression, &columns)
}

/// Indicator columns for each pair of pairs (and the lone triple, if any).
pub fn build_q_pop(pop: &PairsOfPairs) -> Result<QDesign> {
    QDesign::from_groups(DesignKind::PairsOfPairs, pop.group_labels())
}

/// Design of the given kind for `data`; pairs of pairs come from a blossom
/// matching on Mahalanobis distances between pair covariate means.
pub fn build_q(kind: DesignKind, data: &PairedDataset) -> Result<QDesign> {
    match kind {
        DesignKind::Intercept => build_q_intercept(data.len()),
        DesignKind::Regression => build_q_regression(data),
        DesignKind::PairsOfPairs => {
            let d = crate::pairing::mahalanobis_matrix(&data.pair_means())?;
            build_q_pop(&crate::pairing::pair_pairs(&d, crate::pairing::PairingEngine::Blossom)?)
        }
    }
}

/// Standard error of `mean(l)` under design `q`.
pub fn se_q(l: &[f64], q: &QDesign) -> f64 {
    assert_eq!(l.len(), q.n, "vector length does not match design");
    let (mut a, mut b) = (Vec::new(), Vec::new());
    q.se2_with(l, &mut a, &mut b).max(0.0).sqrt()
}

/// Pairs-of-pairs standard error computed from squared within-couple
/// differences. A triple, if present, contributes its leverage-scaled
/// residuals.
pub fn se_pop(l: &[f64], pop: &PairsOfPairs) -> Result<f64> {
    let n = l.len();
    pop.check(n)?;
    let nf = n as f64;
    let mut total = 0.0;
    for i in 0..n {
        if let Some(j) = pop.partner(i) {
            total += (l[i] - l[j]).powi(2) / (2.0 * nf * nf);
        }
    }
    if let Some(t) = pop.triple() {
        let scaled: Vec<f64> = t.iter().map(|&i| l[i] * (1.5f64).sqrt()).collect();
        let m = scaled.iter().sum::<f64>() / 3.0;
        total += scaled.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (nf * nf);
    }
    Ok(total.sqrt())
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
