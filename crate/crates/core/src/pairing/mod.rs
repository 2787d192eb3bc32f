//! Pairing matched pairs with each other.
//!
//! Pairs are compared through the Mahalanobis distance between their
//! covariate averages and grouped by an exact minimum-weight perfect
//! matching. With an odd number of pairs a zero-distance ghost is matched
//! too; whichever pair lands on the ghost joins its closest couple, giving
//! one triple.

mod blossom;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use blossom::max_weight_matching;

/// Resolution of the integer weights handed to the blossom solver.
const WEIGHT_SCALE: f64 = (1u64 << 40) as f64;

/// Symmetric, nonnegative, zero-diagonal distances between `n` items.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    n: usize,
    d: Vec<f64>,
}

impl DistanceMatrix {
    /// Row-major `n x n` entries.
    pub fn new(n: usize, d: Vec<f64>) -> Result<Self> {
        if d.len() != n * n {
            return Err(Error::InvalidParameter(format!("expected {} entries, found {}", n * n, d.len())));
        }
        for i in 0..n {
            if d[i * n + i] != 0.0 {
                return Err(Error::InvalidParameter(format!("nonzero diagonal at {i}")));
            }
            for j in 0..i {
                let (a, b) = (d[i * n + j], d[j * n + i]);
                if !a.is_finite() || a < 0.0 {
                    return Err(Error::InvalidParameter(format!("bad distance at ({i}, {j})")));
                }
                if a != b {
                    return Err(Error::InvalidParameter(format!("asymmetric at ({i}, {j})")));
                }
            }
        }
        Ok(DistanceMatrix { n, d })
    }

    /// Builds the matrix from a distance function on `i < j`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut d = vec![0.0; n * n];
        for i in 0..n {
            for j in i + 1..n {
                let v = f(i, j);
                d[i * n + j] = v;
                d[j * n + i] = v;
            }
        }
        DistanceMatrix::new(n, d)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.d[i * self.n + j]
    }

    fn max(&self) -> f64 {
        self.d.iter().cloned().fold(0.0, f64::max)
    }
}

/// Squared Mahalanobis distances between rows of `pair_means`, using the
/// sample covariance of the rows. A singular covariance gets a ridge of
/// `1e-8 * trace / k`. With no covariates every distance is zero.
pub fn mahalanobis_matrix(pair_means: &[Vec<f64>]) -> Result<DistanceMatrix> {
    let n = pair_means.len();
    if n < 2 {
        return Err(Error::TooFewPairs { needed: 2, found: n });
    }
    let k = pair_means[0].len();
    if pair_means.iter().any(|r| r.len() != k) {
        return Err(Error::InvalidParameter("ragged covariate rows".into()));
    }
    if k == 0 {
        return DistanceMatrix::new(n, vec![0.0; n * n]);
    }
    let x = DMatrix::from_fn(n, k, |i, j| pair_means[i][j]);
    let mean = x.row_mean();
    let centered = DMatrix::from_fn(n, k, |i, j| x[(i, j)] - mean[j]);
    let mut s = centered.transpose() * &centered / (n as f64 - 1.0);
    let trace = s.trace();
    if trace <= 0.0 {
        return DistanceMatrix::new(n, vec![0.0; n * n]);
    }
    let eig = SymmetricEigen::new(s.clone());
    let min_eig = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if min_eig <= 1e-12 * trace {
        let eps = 1e-8 * trace / k as f64;
        for i in 0..k {
            s[(i, i)] += eps;
        }
    }
    // Whitening by the Cholesky factor turns Mahalanobis into Euclidean.
    let chol = s.cholesky().ok_or_else(|| Error::InvalidParameter("covariance not positive definite".into()))?;
    let white = chol.l().solve_lower_triangular(&centered.transpose()).expect("triangular solve");
    DistanceMatrix::from_fn(n, |i, j| {
        let a = white.column(i);
        let b = white.column(j);
        (a - b).norm_squared()
    })
}

/// A partition of pair indices into couples and at most one triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairsOfPairs {
    partner: Vec<Option<usize>>,
    triple: Option<[usize; 3]>,
    total_distance: f64,
}

impl PairsOfPairs {
    pub fn from_couples(n: usize, couples: &[(usize, usize)]) -> Result<Self> {
        PairsOfPairs::build(n, couples, None)
    }

    pub fn with_triple(n: usize, couples: &[(usize, usize)], triple: [usize; 3]) -> Result<Self> {
        PairsOfPairs::build(n, couples, Some(triple))
    }

    fn build(n: usize, couples: &[(usize, usize)], triple: Option<[usize; 3]>) -> Result<Self> {
        let mut partner = vec![None; n];
        let mut seen = vec![false; n];
        let mut mark = |i: usize| -> Result<()> {
            if i >= n {
                return Err(Error::MalformedPairing(format!("index {i} out of range for {n} pairs")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::MalformedPairing(format!("pair {i} used twice")));
            }
            Ok(())
        };
        for &(i, j) in couples {
            mark(i)?;
            mark(j)?;
        }
        if let Some(t) = triple {
            for i in t {
                mark(i)?;
            }
        }
        if let Some(i) = seen.iter().position(|s| !s) {
            return Err(Error::MalformedPairing(format!("pair {i} left unassigned")));
        }
        for &(i, j) in couples {
            partner[i] = Some(j);
            partner[j] = Some(i);
        }
        let triple = triple.map(|mut t| {
            t.sort_unstable();
            t
        });
        Ok(PairsOfPairs { partner, triple, total_distance: 0.0 })
    }

    fn with_distance(mut self, d: &DistanceMatrix) -> Self {
        let mut total: f64 = self.couples().iter().map(|&(i, j)| d.get(i, j)).sum();
        if let Some([a, b, c]) = self.triple {
            total += d.get(a, b) + d.get(a, c) + d.get(b, c);
        }
        self.total_distance = total;
        self
    }

    pub fn n(&self) -> usize {
        self.partner.len()
    }

    pub fn partner(&self, i: usize) -> Option<usize> {
        self.partner[i]
    }

    pub fn triple(&self) -> Option<[usize; 3]> {
        self.triple
    }

    /// Sum of the within-group distances (all three sides for the triple).
    pub fn total_distance(&self) -> f64 {
        self.total_distance
    }

    /// Couples `(i, j)` with `i < j`, ordered by `i`.
    pub fn couples(&self) -> Vec<(usize, usize)> {
        self.partner
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.filter(|&j| j > i).map(|j| (i, j)))
            .collect()
    }

    /// Group label of every pair, numbered by first appearance.
    pub fn group_labels(&self) -> Vec<usize> {
        let n = self.n();
        let mut labels = vec![usize::MAX; n];
        let mut next = 0;
        for i in 0..n {
            if labels[i] != usize::MAX {
                continue;
            }
            labels[i] = next;
            if let Some(j) = self.partner[i] {
                labels[j] = next;
            } else if let Some(t) = self.triple {
                for m in t {
                    labels[m] = next;
                }
            }
            next += 1;
        }
        labels
    }

    pub(crate) fn check(&self, n: usize) -> Result<()> {
        if self.n() != n {
            return Err(Error::MalformedPairing(format!("pairing covers {} pairs, data has {n}", self.n())));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairingEngine {
    /// Exact minimum-weight perfect matching.
    #[default]
    Blossom,
    /// Each unmatched item in index order takes its nearest unmatched
    /// neighbor. Fast but not optimal; meant for very large `n`.
    Greedy,
}

/// Exact minimum-weight perfect matching for even `n`.
pub fn min_weight_pairing(d: &DistanceMatrix) -> Result<PairsOfPairs> {
    let n = d.n();
    if n < 2 || n % 2 == 1 {
        return Err(Error::InvalidParameter(format!("perfect matching needs an even n >= 2, got {n}")));
    }
    let couples = blossom_couples(d);
    Ok(PairsOfPairs::from_couples(n, &couples)?.with_distance(d))
}

fn blossom_couples(d: &DistanceMatrix) -> Vec<(usize, usize)> {
    let n = d.n();
    let dmax = d.max();
    let scale = if dmax > 0.0 { WEIGHT_SCALE / dmax } else { 0.0 };
    let mut edges = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let w = 1 + ((dmax - d.get(i, j)) * scale).round() as i64;
            edges.push((i, j, w));
        }
    }
    let mate = max_weight_matching(&edges, true);
    (0..n)
        .filter_map(|i| {
            let j = mate[i].expect("complete graph has a perfect matching");
            (j > i).then_some((i, j))
        })
        .collect()
}

fn greedy_couples(d: &DistanceMatrix, items: &[usize]) -> Vec<(usize, usize)> {
    let mut used = vec![false; d.n()];
    let mut couples = Vec::new();
    for (a, &i) in items.iter().enumerate() {
        if used[i] {
            continue;
        }
        let best = items[a + 1..]
            .iter()
            .filter(|&&j| !used[j])
            .min_by(|&&x, &&y| d.get(i, x).total_cmp(&d.get(i, y)));
        if let Some(&j) = best {
            used[i] = true;
            used[j] = true;
            couples.push((i.min(j), i.max(j)));
        }
    }
    couples
}

/// Odd `n`: match with a zero-distance ghost, then attach the ghost's
/// partner to the couple minimizing the two new distances.
pub fn pair_odd(d: &DistanceMatrix) -> Result<PairsOfPairs> {
    pair_odd_with(d, PairingEngine::Blossom)
}

fn pair_odd_with(d: &DistanceMatrix, engine: PairingEngine) -> Result<PairsOfPairs> {
    let n = d.n();
    if n < 3 || n % 2 == 0 {
        return Err(Error::InvalidParameter(format!("ghost pairing needs an odd n >= 3, got {n}")));
    }
    let ghost = n;
    let padded = DistanceMatrix::from_fn(n + 1, |i, j| if j == ghost { 0.0 } else { d.get(i, j) })?;
    let all = match engine {
        PairingEngine::Blossom => blossom_couples(&padded),
        PairingEngine::Greedy => {
            let order: Vec<usize> = (0..=n).collect();
            greedy_couples(&padded, &order)
        }
    };
    let lone = all.iter().find(|c| c.1 == ghost).map(|c| c.0).expect("ghost is matched");
    let couples: Vec<(usize, usize)> = all.into_iter().filter(|c| c.1 != ghost).collect();
    let (pos, _) = couples
        .iter()
        .enumerate()
        .map(|(m, &(a, b))| (m, d.get(lone, a) + d.get(lone, b)))
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("at least one couple");
    let (a, b) = couples[pos];
    let rest: Vec<(usize, usize)> = couples.iter().enumerate().filter(|(m, _)| *m != pos).map(|(_, c)| *c).collect();
    Ok(PairsOfPairs::with_triple(n, &rest, [a, b, lone])?.with_distance(d))
}

/// Pairs the pairs for any `n >= 2` (odd `n` requires `n >= 3`).
pub fn pair_pairs(d: &DistanceMatrix, engine: PairingEngine) -> Result<PairsOfPairs> {
    let n = d.n();
    if n < 2 {
        return Err(Error::TooFewPairs { needed: 2, found: n });
    }
    if n % 2 == 1 {
        return pair_odd_with(d, engine);
    }
    match engine {
        PairingEngine::Blossom => min_weight_pairing(d),
        PairingEngine::Greedy => {
            let order: Vec<usize> = (0..n).collect();
            Ok(PairsOfPairs::from_couples(n, &greedy_couples(d, &order))?.with_distance(d))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dm(n: usize, entries: &[((usize, usize), f64)], default: f64) -> DistanceMatrix {
        DistanceMatrix::from_fn(n, |i, j| {
            entries.iter().find(|(e, _)| *e == (i, j)).map_or(default, |(_, v)| *v)
        })
        .unwrap()
    }

    #[test]
    fn identical_rows_zero_distance() {
        let d = mahalanobis_matrix(&vec![vec![1.0, 2.0]; 4]).unwrap();
        assert!((0..4).all(|i| (0..4).all(|j| d.get(i, j) == 0.0)));
    }

    #[test]
    fn scalar_mahalanobis() {
        // Rows (-c, 0, 2, 2 + c) with c = sqrt(5) - 1 have sample variance 4.
        let c = 5f64.sqrt() - 1.0;
        let rows = vec![vec![-c], vec![0.0], vec![2.0], vec![2.0 + c]];
        let d = mahalanobis_matrix(&rows).unwrap();
        assert!((d.get(1, 2) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn affine_invariance() {
        let rows = vec![
            vec![0.1, 1.0],
            vec![0.5, -0.3],
            vec![0.9, 0.2],
            vec![0.4, 0.8],
            vec![0.2, -1.1],
        ];
        let mapped: Vec<Vec<f64>> = rows.iter().map(|r| vec![2.0 * r[0] + r[1] + 5.0, -r[0] + 3.0 * r[1]]).collect();
        let (d1, d2) = (mahalanobis_matrix(&rows).unwrap(), mahalanobis_matrix(&mapped).unwrap());
        for i in 0..5 {
            for j in 0..5 {
                assert!((d1.get(i, j) - d2.get(i, j)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn singular_covariance_is_ridged() {
        let rows = vec![vec![1.0, 2.0], vec![2.0, 4.0], vec![3.0, 6.0]];
        let d = mahalanobis_matrix(&rows).unwrap();
        assert!(d.get(0, 2).is_finite() && d.get(0, 2) > 0.0);
    }

    #[test]
    fn two_items() {
        let p = min_weight_pairing(&dm(2, &[], 3.0)).unwrap();
        assert_eq!(p.couples(), vec![(0, 1)]);
        assert_eq!(p.total_distance(), 3.0);
    }

    #[test]
    fn four_items_hand_case() {
        let d = dm(4, &[((0, 1), 1.0), ((2, 3), 1.0)], 10.0);
        let p = min_weight_pairing(&d).unwrap();
        assert_eq!(p.couples(), vec![(0, 1), (2, 3)]);
        assert_eq!(p.total_distance(), 2.0);
    }

    #[test]
    fn three_items_form_one_triple() {
        let p = pair_odd(&dm(3, &[], 1.0)).unwrap();
        assert_eq!(p.triple(), Some([0, 1, 2]));
        assert!(p.couples().is_empty());
        assert_eq!(p.group_labels(), vec![0, 0, 0]);
    }

    #[test]
    fn outlier_joins_nearer_couple() {
        // Couples {0,1} and {2,3}; item 4 is far from both but nearer {2,3}.
        let d = dm(
            5,
            &[((0, 1), 0.1), ((2, 3), 0.1), ((0, 4), 50.0), ((1, 4), 50.0), ((2, 4), 20.0), ((3, 4), 21.0)],
            10.0,
        );
        let p = pair_odd(&d).unwrap();
        assert_eq!(p.triple(), Some([2, 3, 4]));
        assert_eq!(p.couples(), vec![(0, 1)]);
    }

    #[test]
    fn malformed_partitions_rejected() {
        assert!(PairsOfPairs::from_couples(4, &[(0, 1), (1, 2)]).is_err());
        assert!(PairsOfPairs::from_couples(4, &[(0, 1)]).is_err());
        assert!(PairsOfPairs::from_couples(2, &[(0, 5)]).is_err());
        assert!(pair_odd(&dm(1, &[], 0.0)).is_err());
        assert!(min_weight_pairing(&dm(3, &[], 1.0)).is_err());
    }

    #[test]
    fn greedy_engine_partitions() {
        let d = DistanceMatrix::from_fn(7, |i, j| ((i * 7 + j * 3) % 5) as f64 + 0.5).unwrap();
        let p = pair_pairs(&d, PairingEngine::Greedy).unwrap();
        assert_eq!(p.couples().len(), 2);
        assert!(p.triple().is_some());
        let exact = pair_pairs(&d, PairingEngine::Blossom).unwrap();
        assert_eq!(exact.couples().len() * 2 + 3, 7);
    }
}
