//! Effect-modification design with Friedman's regression function.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{derive_seed, rng_for};
use crate::adjusted::adjusted_diffs;
use crate::error::{Error, Result};
use crate::model::{MatchedPair, PairedDataset};
use crate::reference::{sens_interval_with, Engine, Reference, Side};
use crate::variance::{build_q, DesignKind};

const MAX_REDRAWS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stratum {
    Complier,
    NeverTaker,
    AlwaysTaker,
}

impl Stratum {
    /// Exposure under `z = 0` and `z = 1`.
    pub fn doses(self) -> [f64; 2] {
        match self {
            Stratum::Complier => [0.0, 1.0],
            Stratum::NeverTaker => [0.0, 0.0],
            Stratum::AlwaysTaker => [1.0, 1.0],
        }
    }
}

/// Potential exposures and outcomes of one unit, indexed by `z`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitDraw {
    pub stratum: Stratum,
    pub d: [f64; 2],
    pub y: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanConfig {
    pub n: usize,
    pub k: usize,
    /// Outcome multiplier under exposure; 1 gives a null proportional-dose model.
    pub a: f64,
    pub p_c: f64,
    pub p_n: f64,
    pub p_a: f64,
    pub seed: u64,
}

impl FriedmanConfig {
    pub fn new(n: usize, k: usize, a: f64, seed: u64) -> Self {
        FriedmanConfig { n, k, a, p_c: 0.75, p_n: 0.125, p_a: 0.125, seed }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 5 {
            return Err(Error::InvalidParameter(format!("need at least 5 covariates, got {}", self.k)));
        }
        if self.n < 2 {
            return Err(Error::TooFewPairs { needed: 2, found: self.n });
        }
        let ps = [self.p_c, self.p_n, self.p_a];
        if ps.iter().any(|p| !(0.0..=1.0).contains(p)) || (ps.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("stratum probabilities {ps:?} must sum to 1")));
        }
        if !self.a.is_finite() {
            return Err(Error::InvalidParameter("a must be finite".into()));
        }
        Ok(())
    }
}

/// Mean outcome without exposure; only the first five covariates enter.
pub fn friedman_mean(x: &[f64]) -> f64 {
    10.0 * (PI * x[0] * x[1]).sin() + 20.0 * (x[2] - 0.5).powi(2) + 10.0 * x[3].exp() + 5.0 * (x[4] - 0.5).powi(3)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanSample {
    pub data: PairedDataset,
    /// Realized effect ratio of the drawn potential outcomes.
    pub lambda: f64,
    /// Draws discarded because no unit complied.
    pub redraws: usize,
    /// Potential outcomes per pair, in the order units were generated.
    pub units: Vec<[UnitDraw; 2]>,
    pub covariates: Vec<Vec<f64>>,
}

impl FriedmanSample {
    /// Effect ratio recomputed from the stored potential outcomes.
    pub fn lambda_from_units(&self) -> f64 {
        let (num, den) = self.units.iter().flatten().fold((0.0, 0.0), |(n, d), u| (n + u.y[1] - u.y[0], d + u.d[1] - u.d[0]));
        num / den
    }
}

fn draw_stratum(rng: &mut ChaCha8Rng, cfg: &FriedmanConfig) -> Stratum {
    let u: f64 = rng.random();
    if u < cfg.p_c {
        Stratum::Complier
    } else if u < cfg.p_c + cfg.p_n {
        Stratum::NeverTaker
    } else {
        Stratum::AlwaysTaker
    }
}

/// Draws `n` exactly matched pairs, one fair coin per pair for encouragement.
/// Draws with no complier anywhere are discarded and redrawn from the next
/// sub-seed.
pub fn gen_friedman(cfg: &FriedmanConfig) -> Result<FriedmanSample> {
    cfg.validate()?;
    for attempt in 0..MAX_REDRAWS {
        let mut rng = rng_for(cfg.seed, &[attempt as u64]);
        let mut units = Vec::with_capacity(cfg.n);
        let mut covariates = Vec::with_capacity(cfg.n);
        for _ in 0..cfg.n {
            let x: Vec<f64> = (0..cfg.k).map(|_| rng.random::<f64>()).collect();
            let f = friedman_mean(&x);
            let pair = [0, 1].map(|_| {
                let stratum = draw_stratum(&mut rng, cfg);
                let eps: f64 = rng.sample(StandardNormal);
                let d = stratum.doses();
                let base = f + eps;
                UnitDraw { stratum, d, y: d.map(|dz| if dz == 1.0 { cfg.a * base } else { base }) }
            });
            units.push(pair);
            covariates.push(x);
        }
        let (num, den) = units.iter().flatten().fold((0.0, 0.0), |(n, d), u: &UnitDraw| (n + u.y[1] - u.y[0], d + u.d[1] - u.d[0]));
        if den == 0.0 {
            continue;
        }
        let pairs = units
            .iter()
            .zip(&covariates)
            .enumerate()
            .map(|(i, (u, x))| {
                let z: [u8; 2] = if rng.random_bool(0.5) { [1, 0] } else { [0, 1] };
                let d = [0, 1].map(|j| u[j].d[z[j] as usize]);
                let y = [0, 1].map(|j| u[j].y[z[j] as usize]);
                MatchedPair::new(format!("p{}", i + 1), z, d, y, [x.clone(), x.clone()])
            })
            .collect();
        let names = (1..=cfg.k).map(|j| format!("x_{j}")).collect();
        return Ok(FriedmanSample {
            data: PairedDataset::new(pairs, names)?,
            lambda: num / den,
            redraws: attempt,
            units,
            covariates,
        });
    }
    Err(Error::InvalidParameter(format!("no complier drawn in {MAX_REDRAWS} attempts")))
}

pub const TABLE3_ENGINES: [DesignKind; 3] = [DesignKind::Intercept, DesignKind::Regression, DesignKind::PairsOfPairs];

/// One `(a, n, k)` cell of the size and interval-length experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table3Config {
    pub n: usize,
    pub k: usize,
    pub a: f64,
    pub reps: usize,
    pub alpha: f64,
    pub m_reps: usize,
    pub seed: u64,
}

impl Table3Config {
    pub fn new(n: usize, k: usize, a: f64, reps: usize) -> Self {
        Table3Config { n, k, a, reps, alpha: 0.1, m_reps: 2000, seed: 0 }
    }

    /// All eight cells: `a` in {1, 2}, `n` in {100, 2500}, `k` in {5, 10}.
    pub fn full_grid(reps: usize, m_reps: usize, seed: u64) -> Vec<Table3Config> {
        let mut out = Vec::new();
        for a in [1.0, 2.0] {
            for n in [100, 2500] {
                for k in [5, 10] {
                    out.push(Table3Config { m_reps, seed, ..Table3Config::new(n, k, a, reps) });
                }
            }
        }
        out
    }

    pub fn dgp_label(&self) -> &'static str {
        if self.a == 1.0 {
            "prop-dose"
        } else {
            "effect-mod"
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table3Row {
    pub dgp: String,
    pub a: f64,
    pub n: usize,
    pub k: usize,
    pub engine: Engine,
    pub reps: usize,
    pub alpha: f64,
    pub m_reps: usize,
    pub seed: u64,
    pub size: f64,
    pub size_se: f64,
    /// Mean length over replicates with a bounded interval.
    pub mean_ci_length: f64,
    pub unbounded_ci: usize,
    pub empty_ci: usize,
    pub redraws: usize,
}

#[derive(Debug, Clone, Copy)]
enum CiOutcome {
    Finite(f64),
    Unbounded,
    Empty,
}

fn run_rep(cfg: &Table3Config, rep: usize) -> Result<(Vec<(bool, CiOutcome)>, usize)> {
    let dgp = FriedmanConfig::new(cfg.n, cfg.k, cfg.a, derive_seed(cfg.seed, &[rep as u64, 0]));
    let sample = gen_friedman(&dgp)?;
    let reference = Reference::new(derive_seed(cfg.seed, &[rep as u64, 1]), cfg.m_reps).with_bank(cfg.n);
    let adj = adjusted_diffs(&sample.data, sample.lambda);
    let mut out = Vec::with_capacity(TABLE3_ENGINES.len());
    for kind in TABLE3_ENGINES {
        let q = build_q(kind, &sample.data)?;
        let reject = reference.test(&adj, 1.0, cfg.alpha, &q, Side::TwoSided)?.reject;
        let ci = match sens_interval_with(&sample.data, 1.0, cfg.alpha, &q, &reference) {
            Ok(ci) if ci.lo.is_finite() && ci.hi.is_finite() => CiOutcome::Finite(ci.length()),
            Ok(_) => CiOutcome::Unbounded,
            Err(Error::EmptyInterval) => CiOutcome::Empty,
            Err(e) => return Err(e),
        };
        out.push((reject, ci));
    }
    Ok((out, sample.redraws))
}

/// Size of the two-sided `gamma = 1` test of the realized effect ratio and
/// mean length of the inverted interval, one row per engine.
pub fn run_table3_cell(cfg: &Table3Config) -> Result<Vec<Table3Row>> {
    if cfg.reps == 0 || cfg.m_reps == 0 {
        return Err(Error::InvalidParameter("reps and m_reps must be positive".into()));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::InvalidParameter(format!("alpha must lie in (0, 1), got {}", cfg.alpha)));
    }
    let reps = (0..cfg.reps).into_par_iter().map(|r| run_rep(cfg, r)).collect::<Result<Vec<_>>>()?;
    let redraws = reps.iter().map(|r| r.1).sum();
    Ok(TABLE3_ENGINES
        .iter()
        .enumerate()
        .map(|(e, &kind)| {
            let rejects = reps.iter().filter(|r| r.0[e].0).count();
            let lengths: Vec<f64> = reps
                .iter()
                .filter_map(|r| if let CiOutcome::Finite(l) = r.0[e].1 { Some(l) } else { None })
                .collect();
            let count = |pred: fn(&CiOutcome) -> bool| reps.iter().filter(|r| pred(&r.0[e].1)).count();
            let size = rejects as f64 / cfg.reps as f64;
            Table3Row {
                dgp: cfg.dgp_label().into(),
                a: cfg.a,
                n: cfg.n,
                k: cfg.k,
                engine: kind.into(),
                reps: cfg.reps,
                alpha: cfg.alpha,
                m_reps: cfg.m_reps,
                seed: cfg.seed,
                size,
                size_se: (size * (1.0 - size) / cfg.reps as f64).sqrt(),
                mean_ci_length: if lengths.is_empty() { f64::NAN } else { lengths.iter().sum::<f64>() / lengths.len() as f64 },
                unbounded_ci: count(|c| matches!(c, CiOutcome::Unbounded)),
                empty_ci: count(|c| matches!(c, CiOutcome::Empty)),
                redraws,
            }
        })
        .collect())
}

pub fn run_table3(configs: &[Table3Config]) -> Result<Vec<Table3Row>> {
    let mut rows = Vec::new();
    for cfg in configs {
        rows.extend(run_table3_cell(cfg)?);
    }
    Ok(rows)
}
