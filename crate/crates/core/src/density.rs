//! Univariate predictive densities and log-domain pooling.
//!
//! Every density is evaluated on the log scale. Mixtures (and linear pools of
//! bare log scores) go through [`log_mix`], which subtracts the largest
//! component before exponentiating so that sums of very negative log scores
//! neither underflow nor lose the dominant term.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal, StudentT as StudentTDist};
use serde::{Deserialize, Serialize};

use crate::error::{PoolError, Result};
use crate::pools::PoolWeights;
use crate::quadrature;

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// A log density in nats. May be `-inf` (zero density) but never NaN.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct LogDensity(f64);

impl LogDensity {
    pub const ZERO_DENSITY: LogDensity = LogDensity(f64::NEG_INFINITY);

    pub fn new(value: f64) -> Result<Self> {
        if value.is_nan() {
            return Err(PoolError::NotANumber("log density"));
        }
        if value == f64::INFINITY {
            return Err(PoolError::domain("log density of +inf"));
        }
        Ok(Self(value))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for LogDensity {
    type Error = PoolError;
    fn try_from(v: f64) -> Result<Self> {
        LogDensity::new(v)
    }
}

impl From<LogDensity> for f64 {
    fn from(v: LogDensity) -> f64 {
        v.0
    }
}

/// `log(sum_k w_k exp(lp_k))`, evaluated with max-subtraction.
///
/// Zero-weight terms are skipped. The result is divided by the sum of the
/// participating weights, so identical `lp_k` reproduce that value exactly.
pub(crate) fn log_mix(weights: &[f64], log_terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = weights
        .iter()
        .zip(log_terms.clone())
        .filter(|(&w, _)| w > 0.0)
        .map(|(_, lp)| lp)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut acc = 0.0;
    let mut wsum = 0.0;
    for (&w, lp) in weights.iter().zip(log_terms) {
        if w > 0.0 {
            acc += w * (lp - max).exp();
            wsum += w;
        }
    }
    max + (acc / wsum).ln()
}

/// Evaluate a linear pool at the realized outcome from the experts' log scores.
pub fn pooled_log_density(weights: &PoolWeights, expert_log_densities: &[LogDensity]) -> Result<LogDensity> {
    if weights.len() != expert_log_densities.len() {
        return Err(PoolError::Dimension {
            context: "pooled log density",
            expected: weights.len(),
            found: expert_log_densities.len(),
        });
    }
    LogDensity::new(log_mix(
        weights.as_slice(),
        expert_log_densities.iter().map(|lp| lp.value()),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Gaussian {
    mean: f64,
    sd: f64,
}

impl Gaussian {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(PoolError::domain(format!("gaussian mean {mean}")));
        }
        if !(sd > 0.0 && sd.is_finite()) {
            return Err(PoolError::domain(format!("gaussian stddev {sd} must be positive")));
        }
        Ok(Self { mean, sd })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn sd(&self) -> f64 {
        self.sd
    }

    #[inline]
    pub fn ln_pdf(&self, y: f64) -> f64 {
        let u = (y - self.mean) / self.sd;
        -LN_SQRT_2PI - self.sd.ln() - 0.5 * u * u
    }
}

/// Location-scale Student-t.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StudentT {
    location: f64,
    scale: f64,
    dof: f64,
    #[serde(skip)]
    log_norm: f64,
}

impl StudentT {
    pub fn new(location: f64, scale: f64, dof: f64) -> Result<Self> {
        if !location.is_finite() {
            return Err(PoolError::domain(format!("student-t location {location}")));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(PoolError::domain(format!("student-t scale {scale} must be positive")));
        }
        if !(dof > 0.0 && dof.is_finite()) {
            return Err(PoolError::domain(format!("student-t dof {dof} must be positive")));
        }
        let log_norm = libm::lgamma(0.5 * (dof + 1.0))
            - libm::lgamma(0.5 * dof)
            - 0.5 * (dof * PI).ln()
            - scale.ln();
        Ok(Self {
            location,
            scale,
            dof,
            log_norm,
        })
    }

    pub fn location(&self) -> f64 {
        self.location
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    #[inline]
    pub fn ln_pdf(&self, y: f64) -> f64 {
        let u = (y - self.location) / self.scale;
        self.log_norm - 0.5 * (self.dof + 1.0) * (u * u / self.dof).ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mixture {
    weights: PoolWeights,
    components: Vec<PredictiveDensity>,
}

impl Mixture {
    pub fn new(weights: PoolWeights, components: Vec<PredictiveDensity>) -> Result<Self> {
        if weights.len() != components.len() {
            return Err(PoolError::Dimension {
                context: "mixture components",
                expected: weights.len(),
                found: components.len(),
            });
        }
        Ok(Self { weights, components })
    }

    pub fn weights(&self) -> &PoolWeights {
        &self.weights
    }

    pub fn components(&self) -> &[PredictiveDensity] {
        &self.components
    }
}

/// A univariate predictive distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDensity", into = "RawDensity")]
pub enum PredictiveDensity {
    Gaussian(Gaussian),
    StudentT(StudentT),
    Mixture(Mixture),
}

impl PredictiveDensity {
    pub fn gaussian(mean: f64, sd: f64) -> Result<Self> {
        Gaussian::new(mean, sd).map(Self::Gaussian)
    }

    pub fn student_t(location: f64, scale: f64, dof: f64) -> Result<Self> {
        StudentT::new(location, scale, dof).map(Self::StudentT)
    }

    pub fn mixture(weights: PoolWeights, components: Vec<PredictiveDensity>) -> Result<Self> {
        Mixture::new(weights, components).map(Self::Mixture)
    }

    /// Raw log pdf. NaN only if `y` is NaN.
    pub fn ln_pdf(&self, y: f64) -> f64 {
        match self {
            Self::Gaussian(g) => g.ln_pdf(y),
            Self::StudentT(t) => t.ln_pdf(y),
            Self::Mixture(m) => log_mix(m.weights.as_slice(), m.components.iter().map(|c| c.ln_pdf(y))),
        }
    }

    pub fn log_density(&self, y: f64) -> Result<LogDensity> {
        if y.is_nan() {
            return Err(PoolError::NotANumber("outcome"));
        }
        LogDensity::new(self.ln_pdf(y))
    }

    pub fn pdf(&self, y: f64) -> f64 {
        self.ln_pdf(y).exp()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Gaussian(g) => Normal::new(g.mean, g.sd)
                .expect("validated gaussian")
                .sample(rng),
            Self::StudentT(t) => {
                let z: f64 = StudentTDist::new(t.dof).expect("validated dof").sample(rng);
                t.location + t.scale * z
            }
            Self::Mixture(m) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut chosen = m.components.len() - 1;
                for (k, &w) in m.weights.as_slice().iter().enumerate() {
                    acc += w;
                    if u < acc {
                        chosen = k;
                        break;
                    }
                }
                // rounding can leave u >= acc; fall back to the last positive weight
                if u >= acc {
                    chosen = m.weights.as_slice().iter().rposition(|&w| w > 0.0).unwrap_or(chosen);
                }
                m.components[chosen].sample(rng)
            }
        }
    }

    /// Points where the mass concentrates: centers and +-8 scales of every
    /// component. Used to lay quadrature panels.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.collect_breakpoints(&mut out);
        out
    }

    fn collect_breakpoints(&self, out: &mut Vec<f64>) {
        let (center, scale) = match self {
            Self::Gaussian(g) => (g.mean, g.sd),
            Self::StudentT(t) => (t.location, t.scale),
            Self::Mixture(m) => {
                for (c, &w) in m.components.iter().zip(m.weights.as_slice()) {
                    if w > 0.0 {
                        c.collect_breakpoints(out);
                    }
                }
                return;
            }
        };
        out.extend((-8..=8).map(|k| center + f64::from(k) * scale));
    }

    /// Total probability mass by adaptive quadrature over the real line.
    pub fn total_mass(&self) -> f64 {
        quadrature::integrate_real_line(|y| self.pdf(y), &self.breakpoints(), 1e-12).value
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
enum RawDensity {
    Gaussian {
        mean: f64,
        stddev: f64,
    },
    StudentT {
        location: f64,
        scale: f64,
        dof: f64,
    },
    Mixture {
        weights: Vec<f64>,
        components: Vec<RawDensity>,
    },
}

impl TryFrom<RawDensity> for PredictiveDensity {
    type Error = PoolError;
    fn try_from(raw: RawDensity) -> Result<Self> {
        match raw {
            RawDensity::Gaussian { mean, stddev } => Self::gaussian(mean, stddev),
            RawDensity::StudentT { location, scale, dof } => Self::student_t(location, scale, dof),
            RawDensity::Mixture { weights, components } => {
                let components = components
                    .into_iter()
                    .map(Self::try_from)
                    .collect::<Result<Vec<_>>>()?;
                Self::mixture(PoolWeights::new(weights)?, components)
            }
        }
    }
}

impl From<PredictiveDensity> for RawDensity {
    fn from(d: PredictiveDensity) -> Self {
        match d {
            PredictiveDensity::Gaussian(g) => RawDensity::Gaussian {
                mean: g.mean,
                stddev: g.sd,
            },
            PredictiveDensity::StudentT(t) => RawDensity::StudentT {
                location: t.location,
                scale: t.scale,
                dof: t.dof,
            },
            PredictiveDensity::Mixture(m) => RawDensity::Mixture {
                weights: m.weights.into_vec(),
                components: m.components.into_iter().map(RawDensity::from).collect(),
            },
        }
    }
}
