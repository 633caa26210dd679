//! Local expected log predictive density: the caliper estimator and, for
//! simulated data, the exact value by quadrature.

use std::sync::OnceLock;

use serde::Serialize;

use crate::density::PredictiveDensity;
use crate::error::{PoolError, Result};
use crate::quadrature::GaussHermite;
use crate::simulation::{DgpConfig, NoiseLaw};
use crate::space::{check_rho, neighbors_within, History, Neighborhood, PoolingPoint};

/// Caliper estimate of every expert's local ELPD at one query point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalElpdEstimate {
    estimates: Vec<f64>,
    neighbor_count: usize,
    rho: f64,
}

impl LocalElpdEstimate {
    /// An estimate with `neighbor_count == 0` is forced to all zeros.
    pub fn new(estimates: Vec<f64>, neighbor_count: usize, rho: f64) -> Self {
        let estimates = if neighbor_count == 0 {
            vec![0.0; estimates.len()]
        } else {
            estimates
        };
        Self {
            estimates,
            neighbor_count,
            rho,
        }
    }

    pub fn estimates(&self) -> &[f64] {
        &self.estimates
    }

    pub fn neighbor_count(&self) -> usize {
        self.neighbor_count
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
}

/// Mean historical log score of each expert over the caliper around `z`.
/// With no records inside the caliper every estimate is 0, which the softmax
/// turns into equal weights.
pub fn caliper_elpd(history: &History, z: &PoolingPoint, rho: f64) -> Result<LocalElpdEstimate> {
    check_rho(rho)?;
    let distances = history.distances(z)?;
    let k = history.n_experts().unwrap_or(0);
    Ok(estimate_from_neighbors(history, &neighbors_within(&distances, rho), k))
}

pub(crate) fn estimate_from_neighbors(history: &History, nb: &Neighborhood, k: usize) -> LocalElpdEstimate {
    if nb.is_empty() {
        return LocalElpdEstimate::new(vec![0.0; k], 0, nb.rho());
    }
    let mut sums = vec![0.0; k];
    for &i in nb.indices() {
        for (s, lp) in sums.iter_mut().zip(history.records()[i].expert_log_scores()) {
            *s += lp.value();
        }
    }
    let n = nb.count() as f64;
    LocalElpdEstimate::new(sums.into_iter().map(|s| s / n).collect(), nb.count(), nb.rho())
}

pub const ORACLE_NODES: usize = 64;

fn rule(nodes: usize) -> &'static GaussHermite {
    static R64: OnceLock<GaussHermite> = OnceLock::new();
    static R128: OnceLock<GaussHermite> = OnceLock::new();
    match nodes {
        64 => R64.get_or_init(|| GaussHermite::new(64)),
        128 => R128.get_or_init(|| GaussHermite::new(128)),
        _ => panic!("only 64- and 128-node rules are cached"),
    }
}

/// `∫ log p(y) dF(y | z)` where `F(. | z)` is the Gaussian conditional of the
/// linear DGP, by 64-node Gauss–Hermite quadrature.
pub fn true_local_elpd(predictive: &PredictiveDensity, z: &PoolingPoint, dgp: &DgpConfig) -> Result<f64> {
    true_local_elpd_with_nodes(predictive, z, dgp, ORACLE_NODES)
}

/// As [`true_local_elpd`] with an explicit node count (64 or 128).
pub fn true_local_elpd_with_nodes(
    predictive: &PredictiveDensity,
    z: &PoolingPoint,
    dgp: &DgpConfig,
    nodes: usize,
) -> Result<f64> {
    if nodes != 64 && nodes != 128 {
        return Err(PoolError::domain(format!("{nodes}-node rule not available (use 64 or 128)")));
    }
    let NoiseLaw::Gaussian = dgp.noise else {
        return Err(PoolError::UnsupportedDgp(format!(
            "quadrature oracle needs Gaussian noise, got {:?}",
            dgp.noise
        )));
    };
    let mean = dgp.conditional_mean(z.coords())?;
    let value = rule(nodes).normal_expectation(mean, dgp.noise_sd, |y| predictive.ln_pdf(y));
    if value.is_nan() {
        return Err(PoolError::NotANumber("local ELPD quadrature"));
    }
    Ok(value)
}
