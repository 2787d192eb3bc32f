//! Design sensitivity under the three-component mixture for the adjusted
//! differences.
//!
//! With `delta = lambda - lambda0`, the adjusted difference is `eps + delta`
//! with probability `p_c + p_a p_n`, `eps - delta` with probability `p_a p_n`,
//! and `eps` otherwise. The design sensitivity is
//!
//! ```text
//! (E|zeta| + E zeta) / (E|zeta| - E zeta),    E zeta = p_c delta.
//! ```

use std::f64::consts::{FRAC_2_PI, SQRT_2};
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::{Error, Result};
use crate::quadrature::{integrate, integrate_lower, integrate_upper, Tolerance};

/// Standardized (mean zero, unit variance) density.
pub type Density = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Distribution of the noise `eps`, parameterized by its standard deviation.
#[derive(Clone)]
pub enum NoiseFamily {
    Normal,
    /// Laplace with scale `sigma / sqrt(2)`, so the variance is `sigma^2`.
    Laplace,
    /// A user density for `eps / sigma`; moments come from quadrature.
    Custom { name: String, density: Density },
}

impl fmt::Debug for NoiseFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl PartialEq for NoiseFamily {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (NoiseFamily::Normal, NoiseFamily::Normal) | (NoiseFamily::Laplace, NoiseFamily::Laplace) => true,
            (NoiseFamily::Custom { density: a, .. }, NoiseFamily::Custom { density: b, .. }) => Arc::ptr_eq(a, b),
            _ => false,
        }
    }
}

impl NoiseFamily {
    pub fn custom(name: impl Into<String>, density: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        NoiseFamily::Custom { name: name.into(), density: Arc::new(density) }
    }

    pub fn name(&self) -> String {
        match self {
            NoiseFamily::Normal => "normal".into(),
            NoiseFamily::Laplace => "laplace".into(),
            NoiseFamily::Custom { name, .. } => name.clone(),
        }
    }

    /// Density of `eps` at `x` for standard deviation `sigma`.
    pub fn density(&self, sigma: f64, x: f64) -> f64 {
        match self {
            NoiseFamily::Normal => {
                let z = x / sigma;
                (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
            }
            NoiseFamily::Laplace => {
                let b = sigma / SQRT_2;
                (-x.abs() / b).exp() / (2.0 * b)
            }
            NoiseFamily::Custom { density, .. } => density(x / sigma) / sigma,
        }
    }
}

/// Parameters of the mixture for the adjusted differences.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureSpec {
    pub lambda: f64,
    pub lambda0: f64,
    pub sigma: f64,
    pub p_c: f64,
    pub p_a: f64,
    pub p_n: f64,
    pub noise: NoiseFamily,
}

impl MixtureSpec {
    pub fn new(lambda: f64, lambda0: f64, sigma: f64, p_c: f64, p_a: f64, p_n: f64, noise: NoiseFamily) -> Result<Self> {
        let spec = MixtureSpec { lambda, lambda0, sigma, p_c, p_a, p_n, noise };
        spec.validate()?;
        Ok(spec)
    }

    /// Compliance `p_c`, with the rest split evenly between always-takers and
    /// never-takers.
    pub fn with_compliance(lambda: f64, sigma: f64, p_c: f64, noise: NoiseFamily) -> Result<Self> {
        let rest = 0.5 * (1.0 - p_c);
        MixtureSpec::new(lambda, 0.0, sigma, p_c, rest, rest, noise)
    }

    pub fn validate(&self) -> Result<()> {
        let ps = [self.p_c, self.p_a, self.p_n];
        if ps.iter().any(|p| !(0.0..=1.0).contains(p)) || (ps.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("class probabilities {ps:?} must be in [0, 1] and sum to 1")));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.lambda.is_finite() && self.lambda0.is_finite()) {
            return Err(Error::InvalidParameter("effect ratios must be finite".into()));
        }
        Ok(())
    }

    pub fn delta(&self) -> f64 {
        self.lambda - self.lambda0
    }

    /// Probabilities of the `+delta`, `-delta` and zero shifts.
    pub fn shift_probs(&self) -> (f64, f64, f64) {
        let cross = self.p_a * self.p_n;
        let plus = self.p_c + cross;
        (plus, cross, 1.0 - plus - cross)
    }

    pub fn mean(&self) -> f64 {
        self.p_c * self.delta()
    }

    pub fn abs_mean(&self) -> Result<f64> {
        let (plus, minus, zero) = self.shift_probs();
        let d = self.delta();
        Ok(plus * abs_moment(&self.noise, self.sigma, d)?
            + minus * abs_moment(&self.noise, self.sigma, -d)?
            + zero * abs_moment(&self.noise, self.sigma, 0.0)?)
    }
}

/// `E|eps + c|`, in closed form for the Normal and Laplace families.
pub fn abs_moment(noise: &NoiseFamily, sigma: f64, c: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidParameter(format!("sigma must be positive, got {sigma}")));
    }
    let a = c.abs();
    match noise {
        NoiseFamily::Normal => {
            let z = a / sigma;
            Ok(sigma * FRAC_2_PI.sqrt() * (-0.5 * z * z).exp() + a * erf(z / SQRT_2))
        }
        NoiseFamily::Laplace => {
            let b = sigma / SQRT_2;
            Ok(a + b * (-a / b).exp())
        }
        NoiseFamily::Custom { .. } => abs_moment_quadrature(noise, sigma, c),
    }
}

/// `E|eps + c|` by adaptive quadrature. The line is split at the kink
/// `x = -c` and around the bulk of the noise so no peak is stepped over.
pub fn abs_moment_quadrature(noise: &NoiseFamily, sigma: f64, c: f64) -> Result<f64> {
    let tol = Tolerance::default();
    let g = |x: f64| (x + c).abs() * noise.density(sigma, x);
    let mut cuts = vec![-c, -8.0 * sigma, 0.0, 8.0 * sigma];
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut total = integrate_lower(g, cuts[0], tol)? + integrate_upper(g, cuts[cuts.len() - 1], tol)?;
    for w in cuts.windows(2) {
        total += integrate(g, w[0], w[1], tol)?;
    }
    Ok(total)
}

/// Design sensitivity; equal to 1 when `lambda = lambda0` and below 1 when
/// the mean adjusted difference is negative.
pub fn design_sensitivity(spec: &MixtureSpec) -> Result<f64> {
    spec.validate()?;
    if spec.delta() == 0.0 {
        return Ok(1.0);
    }
    let m = spec.mean();
    let a = spec.abs_mean()?;
    if !(a > m.abs()) {
        return Err(Error::InvalidParameter("mean absolute difference does not exceed the mean".into()));
    }
    Ok((a + m) / (a - m))
}

pub const TABLE5_COMPLIANCE: [f64; 5] = [1.0, 0.75, 0.5, 0.25, 0.1];

/// `(label, lambda, sigma)` for the two subgroups.
pub const TABLE5_SUBGROUPS: [(&str, f64, f64); 2] = [("septic", 6.8, 25.3), ("non-septic", 4.1, 8.9)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table5Cell {
    pub subgroup: String,
    pub lambda: f64,
    pub sigma: f64,
    pub noise: String,
    pub compliance: f64,
    pub design_sensitivity: f64,
}

/// Design sensitivities for both subgroups, Normal and Laplace noise, and
/// each compliance level, with noncompliers split evenly.
pub fn table5() -> Result<Vec<Table5Cell>> {
    let mut cells = Vec::with_capacity(20);
    for (label, lambda, sigma) in TABLE5_SUBGROUPS {
        for noise in [NoiseFamily::Normal, NoiseFamily::Laplace] {
            for p_c in TABLE5_COMPLIANCE {
                let spec = MixtureSpec::with_compliance(lambda, sigma, p_c, noise.clone())?;
                cells.push(Table5Cell {
                    subgroup: label.into(),
                    lambda,
                    sigma,
                    noise: noise.name(),
                    compliance: p_c,
                    design_sensitivity: design_sensitivity(&spec)?,
                });
            }
        }
    }
    Ok(cells)
}
