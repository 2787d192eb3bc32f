//! Worst-case reference distribution at bias level `gamma`, p-value bounds,
//! test inversion and sensitivity values.
//!
//! Each reference draw flips the sign of every `|zeta_i|` independently,
//! keeping the positive sign with probability `gamma / (1 + gamma)`, shifts
//! by `kappa |zeta_i|`, and studentizes with the same standard error as the
//! observed statistic. Draw `m` consumes its own ChaCha stream keyed by
//! `(seed, m)`, so results do not depend on thread scheduling and the same
//! uniforms are reused across `gamma` and `lambda0`.

use std::sync::Arc;

use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adjusted::{adjusted_diffs, rms, shift_factor, shifted, studentize, AdjustedDiffs};
use crate::error::{Error, Result};
use crate::model::{effect_ratio_estimate, theta, PairedDataset, SensitivityParams};
use crate::variance::{DesignKind, QDesign};

/// Largest `n` accepted by exact enumeration.
pub const EXACT_LIMIT: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Conventional,
    Regression,
    PairsOfPairs,
}

impl From<DesignKind> for Engine {
    fn from(kind: DesignKind) -> Self {
        match kind {
            DesignKind::Intercept => Engine::Conventional,
            DesignKind::Regression => Engine::Regression,
            DesignKind::PairsOfPairs => Engine::PairsOfPairs,
        }
    }
}

impl From<Engine> for DesignKind {
    fn from(engine: Engine) -> Self {
        match engine {
            Engine::Conventional => DesignKind::Intercept,
            Engine::Regression => DesignKind::Regression,
            Engine::PairsOfPairs => DesignKind::PairsOfPairs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    #[default]
    Greater,
    Less,
    TwoSided,
}

impl std::str::FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "conventional" | "intercept" => Ok(Engine::Conventional),
            "regression" | "linear" => Ok(Engine::Regression),
            "pop" | "pairs-of-pairs" | "pairs_of_pairs" => Ok(Engine::PairsOfPairs),
            _ => Err(Error::InvalidParameter(format!("unknown engine '{s}' (conventional, regression or pop)"))),
        }
    }
}

impl std::str::FromStr for Side {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "greater" => Ok(Side::Greater),
            "less" => Ok(Side::Less),
            "two-sided" | "two_sided" | "two.sided" => Ok(Side::TwoSided),
            _ => Err(Error::InvalidParameter(format!("unknown side '{s}' (greater, less or two-sided)"))),
        }
    }
}

/// `a >= t`, loosened by a relative `1e-10` so that statistics equal in
/// exact arithmetic compare equal.
fn at_least(a: f64, t: f64) -> bool {
    if t.is_infinite() || a.is_infinite() {
        return a >= t;
    }
    a >= t - 1e-10 * t.abs().max(1.0)
}

/// Threshold on a uniform `u32` below which the sign is positive.
fn sign_threshold(gamma: f64) -> u64 {
    (theta(gamma) * 4_294_967_296.0).round() as u64
}

#[derive(Default)]
struct Scratch {
    b: Vec<f64>,
    scaled: Vec<f64>,
    groups: Vec<f64>,
}

fn statistic(l: &[f64], q: &QDesign, s: &mut Scratch, truncate: bool) -> f64 {
    let mean = l.iter().sum::<f64>() / l.len() as f64;
    let se = q.se2_with(l, &mut s.scaled, &mut s.groups).max(0.0).sqrt();
    let t = studentize(mean, se, rms(l));
    if truncate {
        t.max(0.0)
    } else {
        t
    }
}

fn draw_from(
    abs_zeta: &[f64],
    kappa: f64,
    threshold: u64,
    q: &QDesign,
    mut uniform: impl FnMut() -> u32,
    s: &mut Scratch,
    truncate: bool,
) -> f64 {
    let mut b = std::mem::take(&mut s.b);
    b.clear();
    b.extend(abs_zeta.iter().map(|&a| {
        let z = if (uniform() as u64) < threshold { a } else { -a };
        z - kappa * a
    }));
    let t = statistic(&b, q, s, truncate);
    s.b = b;
    t
}

/// One draw of the studentized reference statistic using `rng`.
pub fn reference_draw(abs_zeta: &[f64], gamma: f64, q: &QDesign, rng: &mut impl RngCore) -> f64 {
    let mut s = Scratch::default();
    draw_from(abs_zeta, shift_factor(gamma), sign_threshold(gamma), q, || rng.next_u32(), &mut s, false)
}

/// Observed studentized statistic for the greater-than alternative, computed
/// with the same arithmetic as the reference draws.
pub fn observed_statistic(adj: &AdjustedDiffs, gamma: f64, q: &QDesign) -> f64 {
    statistic(&shifted(adj, gamma), q, &mut Scratch::default(), false)
}

pub(crate) fn stream(seed: u64, m: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(m as u64);
    rng
}

/// Cached uniforms for `m_reps` draws over `n` pairs; equal to what the
/// keyed streams produce, so banked and streamed results agree exactly.
#[derive(Debug, Clone)]
pub struct UniformBank {
    seed: u64,
    n: usize,
    m_reps: usize,
    values: Vec<u32>,
}

impl UniformBank {
    pub fn new(seed: u64, m_reps: usize, n: usize) -> Self {
        let mut values = vec![0u32; m_reps * n];
        values.par_chunks_mut(n.max(1)).enumerate().for_each(|(m, row)| {
            let mut rng = stream(seed, m);
            row.iter_mut().for_each(|u| *u = rng.next_u32());
        });
        UniformBank { seed, n, m_reps, values }
    }
}

/// Monte Carlo generator of the reference distribution.
#[derive(Debug, Clone)]
pub struct Reference {
    seed: u64,
    m_reps: usize,
    truncate: bool,
    bank: Option<Arc<UniformBank>>,
}

impl Reference {
    pub fn new(seed: u64, m_reps: usize) -> Self {
        Reference { seed, m_reps, truncate: false, bank: None }
    }

    pub fn from_params(params: &SensitivityParams) -> Self {
        Reference::new(params.seed, params.m_reps)
    }

    /// Precomputes the uniforms for samples of `n` pairs.
    pub fn with_bank(mut self, n: usize) -> Self {
        self.bank = Some(Arc::new(UniformBank::new(self.seed, self.m_reps, n)));
        self
    }

    /// Uses `max(0, t)` for both the observed and the reference statistic.
    pub fn truncated(mut self, truncate: bool) -> Self {
        self.truncate = truncate;
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn m_reps(&self) -> usize {
        self.m_reps
    }

    /// The `m_reps` reference draws, in replicate order.
    pub fn draws(&self, abs_zeta: &[f64], gamma: f64, q: &QDesign) -> Vec<f64> {
        let n = abs_zeta.len();
        let kappa = shift_factor(gamma);
        let threshold = sign_threshold(gamma);
        let truncate = self.truncate;
        let bank = self.bank.as_ref().filter(|b| b.n == n && b.m_reps == self.m_reps && b.seed == self.seed);
        (0..self.m_reps)
            .into_par_iter()
            .with_min_len(64)
            .map_init(Scratch::default, |s, m| match bank {
                Some(bank) => {
                    let mut it = bank.values[m * n..(m + 1) * n].iter();
                    draw_from(abs_zeta, kappa, threshold, q, || *it.next().unwrap(), s, truncate)
                }
                None => {
                    let mut rng = stream(self.seed, m);
                    draw_from(abs_zeta, kappa, threshold, q, || rng.next_u32(), s, truncate)
                }
            })
            .collect()
    }

    /// Sensitivity test of `lambda0` on precomputed adjusted differences.
    pub fn test(&self, adj: &AdjustedDiffs, gamma: f64, alpha: f64, q: &QDesign, side: Side) -> Result<SensResult> {
        check_inputs(adj, gamma, q)?;
        let draws = self.draws(&adj.abs_zeta, gamma, q);
        let m = draws.len();
        let p_of = |t: f64| (1 + draws.iter().filter(|&&a| at_least(a, t)).count()) as f64 / (1 + m) as f64;
        let mut s = Scratch::default();
        let t_g = statistic(&shifted(adj, gamma), q, &mut s, self.truncate);
        let t_l = statistic(&shifted(&adj.negated(), gamma), q, &mut s, self.truncate);
        let (p_greater, p_less) = match side {
            Side::Greater => (Some(p_of(t_g)), None),
            Side::Less => (None, Some(p_of(t_l))),
            Side::TwoSided => (Some(p_of(t_g)), Some(p_of(t_l))),
        };
        let (t_obs, p_bound, level) = combine(side, t_g, t_l, p_greater, p_less, alpha);
        let critical = mc_critical(draws, level);
        Ok(SensResult {
            gamma,
            lambda0: adj.lambda0,
            side,
            t_obs,
            p_bound,
            p_greater,
            p_less,
            critical,
            reject: p_bound <= alpha,
            alpha,
            m_reps: m,
            seed: self.seed,
            engine: q.kind().into(),
            exact: false,
        })
    }
}

fn combine(
    side: Side,
    t_g: f64,
    t_l: f64,
    p_g: Option<f64>,
    p_l: Option<f64>,
    alpha: f64,
) -> (f64, f64, f64) {
    match side {
        Side::Greater => (t_g, p_g.unwrap(), alpha),
        Side::Less => (t_l, p_l.unwrap(), alpha),
        Side::TwoSided => (t_g, (2.0 * p_g.unwrap().min(p_l.unwrap())).min(1.0), alpha / 2.0),
    }
}

/// `(r+1)`-th largest draw with `r = floor(level (M+1)) - 1`: the observed
/// statistic rejects exactly when it exceeds this value.
fn mc_critical(mut draws: Vec<f64>, level: f64) -> f64 {
    let m = draws.len();
    let r = (level * (m + 1) as f64 + 1e-9).floor() as i64 - 1;
    if r < 0 || m == 0 {
        return f64::INFINITY;
    }
    let r = (r as usize).min(m - 1);
    draws.sort_unstable_by(|a, b| b.total_cmp(a));
    draws[r]
}

fn check_inputs(adj: &AdjustedDiffs, gamma: f64, q: &QDesign) -> Result<()> {
    if !(gamma >= 1.0) || !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!("gamma must be finite and >= 1, got {gamma}")));
    }
    if adj.len() != q.n() {
        return Err(Error::InvalidParameter(format!("design has {} rows for {} pairs", q.n(), adj.len())));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensResult {
    pub gamma: f64,
    pub lambda0: f64,
    pub side: Side,
    /// Observed statistic; for two-sided tests, the greater-than one.
    pub t_obs: f64,
    pub p_bound: f64,
    pub p_greater: Option<f64>,
    pub p_less: Option<f64>,
    /// Reference quantile the statistic must exceed (at `alpha / 2` for
    /// two-sided tests).
    pub critical: f64,
    pub reject: bool,
    pub alpha: f64,
    pub m_reps: usize,
    pub seed: u64,
    pub engine: Engine,
    pub exact: bool,
}

/// Monte Carlo sensitivity test of `lambda0` at `params.gamma`.
pub fn sens_test(
    data: &PairedDataset,
    lambda0: f64,
    params: &SensitivityParams,
    q: &QDesign,
    side: Side,
) -> Result<SensResult> {
    let adj = adjusted_diffs(data, lambda0);
    Reference::from_params(params).test(&adj, params.gamma, params.alpha, q, side)
}

/// Every sign vector's reference statistic and probability, indexed by the
/// bit mask of positive signs.
pub fn exact_distribution(abs_zeta: &[f64], gamma: f64, q: &QDesign) -> Result<Vec<(f64, f64)>> {
    let n = abs_zeta.len();
    if n > EXACT_LIMIT {
        return Err(Error::EnumerationTooLarge { n, limit: EXACT_LIMIT });
    }
    if n != q.n() {
        return Err(Error::InvalidParameter(format!("design has {} rows for {} pairs", q.n(), n)));
    }
    let th = theta(gamma);
    let kappa = shift_factor(gamma);
    let mut s = Scratch::default();
    let mut l = vec![0.0; n];
    Ok((0u64..1 << n)
        .map(|mask| {
            let mut prob = 1.0;
            for (i, (&a, li)) in abs_zeta.iter().zip(l.iter_mut()).enumerate() {
                let plus = mask >> i & 1 == 1;
                prob *= if plus { th } else { 1.0 - th };
                *li = if plus { a } else { -a } - kappa * a;
            }
            (statistic(&l, q, &mut s, false), prob)
        })
        .collect())
}

/// Exact tail probability of the reference distribution at `t_obs`.
pub fn reference_exact(abs_zeta: &[f64], gamma: f64, q: &QDesign, t_obs: f64) -> Result<f64> {
    let dist = exact_distribution(abs_zeta, gamma, q)?;
    Ok(dist.iter().filter(|(a, _)| at_least(*a, t_obs)).map(|(_, p)| p).sum::<f64>().min(1.0))
}

/// Sensitivity test with the exact reference distribution.
pub fn sens_test_exact(adj: &AdjustedDiffs, gamma: f64, alpha: f64, q: &QDesign, side: Side) -> Result<SensResult> {
    check_inputs(adj, gamma, q)?;
    let dist = exact_distribution(&adj.abs_zeta, gamma, q)?;
    let tail = |t: f64| dist.iter().filter(|(a, _)| at_least(*a, t)).map(|(_, p)| p).sum::<f64>().min(1.0);
    let t_g = observed_statistic(adj, gamma, q);
    let t_l = observed_statistic(&adj.negated(), gamma, q);
    let (p_greater, p_less) = match side {
        Side::Greater => (Some(tail(t_g)), None),
        Side::Less => (None, Some(tail(t_l))),
        Side::TwoSided => (Some(tail(t_g)), Some(tail(t_l))),
    };
    let (t_obs, p_bound, level) = combine(side, t_g, t_l, p_greater, p_less, alpha);
    let mut sorted = dist;
    sorted.sort_unstable_by(|a, b| b.0.total_cmp(&a.0));
    let mut acc = 0.0;
    let mut critical = f64::INFINITY;
    for (a, p) in sorted {
        acc += p;
        if acc > level + 1e-12 {
            critical = a;
            break;
        }
    }
    Ok(SensResult {
        gamma,
        lambda0: adj.lambda0,
        side,
        t_obs,
        p_bound,
        p_greater,
        p_less,
        critical,
        reject: p_bound <= alpha,
        alpha,
        m_reps: 0,
        seed: 0,
        engine: q.kind().into(),
        exact: true,
    })
}

/// One evaluated point of an interval search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub lambda0: f64,
    pub p_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridInfo {
    pub center: f64,
    pub initial_step: f64,
    pub tolerance: f64,
    pub points: Vec<GridPoint>,
}

/// Set of `lambda0` values not rejected by the two-sided test.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensInterval {
    pub gamma: f64,
    pub alpha: f64,
    /// Infinite when no rejection was found below the estimate.
    pub lo: f64,
    /// Infinite when no rejection was found above the estimate.
    pub hi: f64,
    pub estimate: f64,
    pub engine: Engine,
    pub grid: GridInfo,
}

impl SensInterval {
    pub fn length(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, lambda0: f64) -> bool {
        self.lo <= lambda0 && lambda0 <= self.hi
    }
}

const MAX_EXPANSIONS: usize = 60;
const MAX_BISECTIONS: usize = 60;

/// Inverts the two-sided test at level `params.alpha` and bias
/// `params.gamma`, marching out from the estimate with doubling steps and
/// bisecting each boundary.
pub fn sens_interval(data: &PairedDataset, params: &SensitivityParams, q: &QDesign) -> Result<SensInterval> {
    sens_interval_with(data, params.gamma, params.alpha, q, &Reference::from_params(params))
}

pub fn sens_interval_with(
    data: &PairedDataset,
    gamma: f64,
    alpha: f64,
    q: &QDesign,
    reference: &Reference,
) -> Result<SensInterval> {
    let estimate = effect_ratio_estimate(data)?;
    let n = data.len() as f64;
    let mean_dose = data.dose_diffs().iter().sum::<f64>() / n;
    let zeta_hat = adjusted_diffs(data, estimate);
    let se_hat = crate::variance::se_q(&zeta_hat.zeta, q);
    let ys: Vec<f64> = data.pairs().iter().flat_map(|p| p.y).collect();
    let y_mean = ys.iter().sum::<f64>() / ys.len() as f64;
    let y_sd = (ys.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / (ys.len() as f64 - 1.0)).sqrt();
    let scale = if y_sd > 0.0 { y_sd } else { 1.0 };
    let tolerance = 1e-4 * scale;
    let mut step = se_hat / mean_dose.abs() / 10.0;
    if !(step.is_finite() && step > 0.0) {
        step = 1e-3 * (1.0 + estimate.abs());
    }
    step = step.max(tolerance);

    let mut points = Vec::new();
    let accepts = |lambda0: f64, points: &mut Vec<GridPoint>| -> Result<bool> {
        let r = reference.test(&adjusted_diffs(data, lambda0), gamma, alpha, q, Side::TwoSided)?;
        points.push(GridPoint { lambda0, p_bound: r.p_bound });
        Ok(!r.reject)
    };
    if !accepts(estimate, &mut points)? {
        return Err(Error::EmptyInterval);
    }
    let mut ends = [0.0; 2];
    for (e, dir) in [-1.0, 1.0].into_iter().enumerate() {
        let mut inside = estimate;
        let mut h = step;
        let mut outside = None;
        for _ in 0..MAX_EXPANSIONS {
            let x = inside + dir * h;
            if accepts(x, &mut points)? {
                inside = x;
                h *= 2.0;
            } else {
                outside = Some(x);
                break;
            }
        }
        ends[e] = match outside {
            None => dir * f64::INFINITY,
            Some(mut out) => {
                for _ in 0..MAX_BISECTIONS {
                    if (out - inside).abs() <= tolerance {
                        break;
                    }
                    let mid = 0.5 * (inside + out);
                    if accepts(mid, &mut points)? {
                        inside = mid;
                    } else {
                        out = mid;
                    }
                }
                inside
            }
        };
    }
    Ok(SensInterval {
        gamma,
        alpha,
        lo: ends[0],
        hi: ends[1],
        estimate,
        engine: q.kind().into(),
        grid: GridInfo { center: estimate, initial_step: step, tolerance, points },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensValue {
    pub lambda0: f64,
    pub alpha: f64,
    /// Largest `gamma` found to reject, or 1 when `gamma = 1` does not.
    pub gamma: f64,
    /// Still rejecting at `gamma_max`.
    pub capped: bool,
    pub rejects_at_one: bool,
    pub tolerance: f64,
}

pub const SENS_VALUE_TOL: f64 = 0.005;

/// Largest `gamma` in `[1, gamma_max]` at which `lambda0` is rejected, found by
/// bisection with the same reference uniforms at every `gamma`.
pub fn sensitivity_value(
    data: &PairedDataset,
    lambda0: f64,
    params: &SensitivityParams,
    q: &QDesign,
    side: Side,
    gamma_max: f64,
) -> Result<SensValue> {
    if !(gamma_max >= 1.0) {
        return Err(Error::InvalidParameter(format!("gamma_max must be >= 1, got {gamma_max}")));
    }
    let adj = adjusted_diffs(data, lambda0);
    let reference = Reference::from_params(params).with_bank(adj.len());
    let rejects = |g: f64| -> Result<bool> { Ok(reference.test(&adj, g, params.alpha, q, side)?.reject) };
    let base = SensValue { lambda0, alpha: params.alpha, gamma: 1.0, capped: false, rejects_at_one: false, tolerance: SENS_VALUE_TOL };
    if !rejects(1.0)? {
        return Ok(base);
    }
    if rejects(gamma_max)? {
        return Ok(SensValue { gamma: gamma_max, capped: true, rejects_at_one: true, ..base });
    }
    let (mut lo, mut hi) = (1.0, gamma_max);
    while hi - lo > SENS_VALUE_TOL {
        let mid = 0.5 * (lo + hi);
        if rejects(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(SensValue { gamma: lo, rejects_at_one: true, ..base })
}
