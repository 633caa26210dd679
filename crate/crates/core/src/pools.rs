//! Pool weights under the four schemes: equal, caliper softmax, globally
//! optimized and locally optimized.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::density::{log_mix, LogDensity, PredictiveDensity};
use crate::elpd::LocalElpdEstimate;
use crate::error::{PoolError, Result};
use crate::space::{History, PoolingPoint};

/// A point on the probability simplex, one weight per expert.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PoolWeights(Vec<f64>);

impl PoolWeights {
    pub const SUM_TOLERANCE: f64 = 1e-12;

    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(PoolError::Empty("pool weights"));
        }
        if let Some(bad) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
            return Err(PoolError::domain(format!("weight {bad} outside [0, 1]")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(PoolError::domain(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self(weights))
    }

    /// Normalize nonnegative raw weights.
    pub fn from_unnormalized(raw: &[f64]) -> Result<Self> {
        if raw.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(PoolError::domain("raw weights must be finite and nonnegative"));
        }
        let sum: f64 = raw.iter().sum();
        if sum.is_nan() || sum <= 0.0 {
            return Err(PoolError::domain("raw weights sum to zero"));
        }
        Self::new(raw.iter().map(|w| w / sum).collect())
    }

    pub fn equal(k: usize) -> Result<Self> {
        if k == 0 {
            return Err(PoolError::Empty("equal weights over zero experts"));
        }
        Ok(Self(vec![1.0 / k as f64; k]))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max_weight(&self) -> f64 {
        self.0.iter().copied().fold(0.0, f64::max)
    }
}

impl TryFrom<Vec<f64>> for PoolWeights {
    type Error = PoolError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        PoolWeights::new(v)
    }
}

impl From<PoolWeights> for Vec<f64> {
    fn from(w: PoolWeights) -> Vec<f64> {
        w.0
    }
}

/// The multiplier applied to local ELPD estimates inside the softmax.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScalingRule {
    /// Multiply by the number of in-caliper observations.
    Natural,
    /// Multiply by a fixed `tau >= 0`.
    Fixed(f64),
}

impl ScalingRule {
    pub fn fixed(tau: f64) -> Result<Self> {
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(PoolError::domain(format!("tau {tau} must be finite and >= 0")));
        }
        Ok(Self::Fixed(tau))
    }

    fn multiplier(self, n_rho: usize) -> f64 {
        match self {
            Self::Natural => n_rho as f64,
            Self::Fixed(tau) => tau,
        }
    }
}

impl fmt::Display for ScalingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Natural => f.write_str("natural"),
            Self::Fixed(tau) => write!(f, "{tau}"),
        }
    }
}

impl std::str::FromStr for ScalingRule {
    type Err = PoolError;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("natural") {
            return Ok(Self::Natural);
        }
        let tau: f64 = s
            .parse()
            .map_err(|_| PoolError::Config(format!("scaling rule `{s}` is neither `natural` nor a number")))?;
        Self::fixed(tau)
    }
}

impl Serialize for ScalingRule {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::Natural => s.serialize_str("natural"),
            Self::Fixed(tau) => s.serialize_f64(*tau),
        }
    }
}

impl<'de> Deserialize<'de> for ScalingRule {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Tau(f64),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Tau(t) => ScalingRule::fixed(t).map_err(serde::de::Error::custom),
            Raw::Name(n) => n.parse().map_err(serde::de::Error::custom),
        }
    }
}

pub fn equal_weights(k: usize) -> Result<PoolWeights> {
    PoolWeights::equal(k)
}

/// Softmax of the scaled local ELPD estimates, `w_k ∝ exp(s * elpd_k)`.
pub fn softmax_weights(est: &LocalElpdEstimate, rule: ScalingRule) -> Result<PoolWeights> {
    let k = est.estimates().len();
    let s = rule.multiplier(est.neighbor_count());
    if s == 0.0 {
        return PoolWeights::equal(k);
    }
    let scaled: Vec<f64> = est.estimates().iter().map(|e| s * e).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        // every expert put zero density on its in-caliper outcomes
        return PoolWeights::equal(k);
    }
    let exps: Vec<f64> = scaled.iter().map(|x| (x - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    PoolWeights::new(exps.iter().map(|e| e / total).collect())
}

pub const EM_MAX_ITERATIONS: usize = 5000;
pub const EM_RELATIVE_TOLERANCE: f64 = 1e-10;
const WEIGHT_FLOOR: f64 = 1e-300;

/// Outcome of the EM weight optimizer.
#[derive(Debug, Clone)]
pub struct OptimizedPool {
    pub weights: PoolWeights,
    /// Total in-sample log score of the pool at `weights`.
    pub objective: f64,
    /// Objective after each accepted iterate, starting from equal weights.
    pub trace: Vec<f64>,
}

/// Maximize the historical total log score of a linear pool over the simplex.
///
/// `rows` are time steps, each holding one log score per expert. Rows where
/// every expert assigned zero density contribute `-inf` for any weights and
/// are excluded from the updates.
///
/// Iterates the EM map for mixture weights from equal weights, accelerated by
/// squared extrapolation. An accepted iterate is never worse than two plain EM
/// steps, so the objective never decreases.
pub fn optimize_pool_weights<R: AsRef<[LogDensity]>>(rows: &[R]) -> Result<PoolWeights> {
    optimize_pool_weights_traced(rows).map(|o| o.weights)
}

pub fn optimize_pool_weights_traced<R: AsRef<[LogDensity]>>(rows: &[R]) -> Result<OptimizedPool> {
    let Some(first) = rows.first() else {
        return Err(PoolError::Empty("score matrix"));
    };
    let k = first.as_ref().len();
    if k == 0 {
        return Err(PoolError::Empty("score matrix has no experts"));
    }

    // relative densities exp(lp - row max), laid out row-major
    let mut rel = Vec::with_capacity(rows.len() * k);
    let mut offset = 0.0;
    let mut n_rows = 0usize;
    for row in rows {
        let row = row.as_ref();
        if row.len() != k {
            return Err(PoolError::Dimension {
                context: "score matrix row",
                expected: k,
                found: row.len(),
            });
        }
        let max = row.iter().map(|l| l.value()).fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            offset = f64::NEG_INFINITY;
            continue;
        }
        offset += max;
        rel.extend(row.iter().map(|l| (l.value() - max).exp()));
        n_rows += 1;
    }

    let mut weights = vec![1.0 / k as f64; k];
    if n_rows == 0 || k == 1 {
        let objective = if n_rows == 0 { f64::NEG_INFINITY } else { offset };
        return Ok(OptimizedPool {
            weights: PoolWeights::new(weights)?,
            objective,
            trace: vec![objective],
        });
    }

    let objective_at = |w: &[f64]| -> (f64, Vec<f64>) {
        let mix: Vec<f64> = (0..n_rows)
            .map(|t| rel[t * k..(t + 1) * k].iter().zip(w).map(|(r, w)| r * w).sum())
            .collect();
        (mix.iter().map(|m| m.ln()).sum::<f64>() + offset, mix)
    };
    // responsibility-weighted average: w_k <- w_k * mean_t(p_tk / p_t)
    let em_step = |w: &[f64], mix: &[f64]| -> Vec<f64> {
        let mut next = vec![0.0; k];
        for (t, m) in mix.iter().enumerate() {
            for (acc, r) in next.iter_mut().zip(&rel[t * k..(t + 1) * k]) {
                *acc += r / m;
            }
        }
        for (n, w) in next.iter_mut().zip(w) {
            *n *= w / n_rows as f64;
            if *n < WEIGHT_FLOOR {
                *n = 0.0;
            }
        }
        let total: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= total);
        next
    };

    let (mut objective, mut mix) = objective_at(&weights);
    let mut trace = vec![objective];
    for _ in 0..EM_MAX_ITERATIONS {
        // Two EM steps, then a squared extrapolation (SQUAREM) along them,
        // kept only if it beats the second EM step.
        let w1 = em_step(&weights, &mix);
        let (_, mix1) = objective_at(&w1);
        let w2 = em_step(&w1, &mix1);
        let (obj2, mix2) = objective_at(&w2);
        let (mut next, mut next_obj, mut next_mix) = (w2.clone(), obj2, mix2);

        let r: Vec<f64> = w1.iter().zip(&weights).map(|(a, b)| a - b).collect();
        let v: Vec<f64> = w2.iter().zip(&w1).zip(&r).map(|((a, b), r)| a - b - r).collect();
        let (rn, vn) = (norm(&r), norm(&v));
        if vn > 0.0 {
            let mut alpha = (-rn / vn).min(-1.0);
            let mut extrapolated = None;
            while alpha < -1.0 {
                let w: Vec<f64> = (0..k)
                    .map(|j| weights[j] - 2.0 * alpha * r[j] + alpha * alpha * v[j])
                    .collect();
                if w.iter().all(|&x| x >= 0.0) {
                    extrapolated = Some(w);
                    break;
                }
                alpha = if alpha < -1.01 { 0.5 * (alpha - 1.0) } else { -1.0 };
            }
            if let Some(w) = extrapolated {
                let total: f64 = w.iter().sum();
                let w: Vec<f64> = w.iter().map(|x| x / total).collect();
                let (obj_w, mix_w) = objective_at(&w);
                if obj_w.is_finite() {
                    let stabilized = em_step(&w, &mix_w);
                    let (obj_s, mix_s) = objective_at(&stabilized);
                    if obj_s > next_obj {
                        (next, next_obj, next_mix) = (stabilized, obj_s, mix_s);
                    }
                }
            }
        }

        if next_obj < objective {
            // only rounding can do this; keep the better iterate
            break;
        }
        trace.push(next_obj);
        let improvement = next_obj - objective;
        (weights, objective, mix) = (next, next_obj, next_mix);
        if improvement <= EM_RELATIVE_TOLERANCE * objective.abs() {
            break;
        }
    }

    // The improvement rule can stop short of an optimum on the boundary,
    // which the best single expert would then beat.
    let (best_k, best_vertex) = (0..k)
        .map(|j| {
            let v: f64 = (0..n_rows).map(|t| rel[t * k + j].ln()).sum::<f64>() + offset;
            (j, v)
        })
        .fold((0, f64::NEG_INFINITY), |a, b| if b.1 > a.1 { b } else { a });
    if best_vertex > objective {
        weights = vec![0.0; k];
        weights[best_k] = 1.0;
        objective = best_vertex;
        trace.push(objective);
    }
    Ok(OptimizedPool {
        weights: PoolWeights::new(weights)?,
        objective,
        trace,
    })
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Total log score of a pool with fixed weights over a score matrix.
pub fn pool_objective<R: AsRef<[LogDensity]>>(weights: &PoolWeights, rows: &[R]) -> f64 {
    rows.iter()
        .map(|row| log_mix(weights.as_slice(), row.as_ref().iter().map(|l| l.value())))
        .sum()
}

/// Optimized weights using only the history inside the caliper at `z`.
/// An empty caliper yields equal weights.
pub fn local_opt_weights(history: &History, z: &PoolingPoint, rho: f64) -> Result<PoolWeights> {
    let neighbors = history.caliper_neighbors(z, rho)?;
    let k = history.n_experts().ok_or(PoolError::Empty("history"))?;
    local_opt_from_indices(history, neighbors.indices(), k)
}

pub(crate) fn local_opt_from_indices(history: &History, indices: &[usize], k: usize) -> Result<PoolWeights> {
    if indices.is_empty() {
        return PoolWeights::equal(k);
    }
    let rows: Vec<&[LogDensity]> = indices
        .iter()
        .map(|&i| history.records()[i].expert_log_scores())
        .collect();
    optimize_pool_weights(&rows)
}

/// The pooled predictive distribution `sum_k w_k p_k`.
pub fn assemble_pool(weights: &PoolWeights, densities: &[PredictiveDensity]) -> Result<PredictiveDensity> {
    if weights.len() != densities.len() {
        return Err(PoolError::Dimension {
            context: "assemble pool",
            expected: weights.len(),
            found: densities.len(),
        });
    }
    PredictiveDensity::mixture(weights.clone(), densities.to_vec())
}
