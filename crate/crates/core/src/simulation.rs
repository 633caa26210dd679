//! The two-covariate linear illustration: data generation, the two
//! misspecified regression experts, and Monte Carlo studies of the caliper
//! estimator and the pooling schemes against the quadrature oracle.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::PredictiveDensity;
use crate::elpd::{caliper_elpd, estimate_from_neighbors, true_local_elpd};
use crate::error::{PoolError, Result};
use crate::evaluation::Scheme;
use crate::experts::{NigPosterior, NigPrior};
use crate::pools::{assemble_pool, local_opt_from_indices, optimize_pool_weights, softmax_weights, PoolWeights, ScalingRule};
use crate::space::{check_rho, neighbors_within, History, PoolingPoint, PredictionRecord};

/// Caliper width large enough to cover every standardized record.
pub const FULL_CALIPER: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum NoiseLaw {
    Gaussian,
    /// Student-t noise scaled by `noise_sd`.
    StudentT { dof: f64 },
}

/// `y = sum_j beta_j x_j + noise_sd * e` with independent standard normal
/// covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpConfig {
    pub coefficients: Vec<f64>,
    pub noise_sd: f64,
    pub noise: NoiseLaw,
    pub n: usize,
    pub seed: u64,
}

impl Default for DgpConfig {
    fn default() -> Self {
        Self {
            coefficients: vec![1.0, 1.0],
            noise_sd: 1.0,
            noise: NoiseLaw::Gaussian,
            n: 2000,
            seed: 0,
        }
    }
}

impl DgpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.coefficients.is_empty() || self.coefficients.iter().any(|b| !b.is_finite()) {
            return Err(PoolError::domain("DGP coefficients must be finite and nonempty"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(PoolError::domain(format!("noise sd {} must be finite and >= 0", self.noise_sd)));
        }
        if let NoiseLaw::StudentT { dof } = self.noise {
            if dof.is_nan() || dof <= 0.0 {
                return Err(PoolError::domain(format!("noise dof {dof} must be positive")));
            }
        }
        if self.n < 2 {
            return Err(PoolError::domain(format!("sample size {} must be at least 2", self.n)));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.coefficients.len()
    }

    /// `E[y | x]`.
    pub fn conditional_mean(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.coefficients.len() {
            return Err(PoolError::Dimension {
                context: "DGP covariates",
                expected: self.coefficients.len(),
                found: x.len(),
            });
        }
        Ok(x.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Sample {
    pub covariates: Vec<f64>,
    pub y: f64,
}

fn replication_rng(seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    rng
}

fn draw<R: Rng + ?Sized>(cfg: &DgpConfig, rng: &mut R) -> Result<Vec<Sample>> {
    let t = match cfg.noise {
        NoiseLaw::StudentT { dof } => {
            Some(StudentT::new(dof).map_err(|e| PoolError::domain(format!("noise law: {e}")))?)
        }
        NoiseLaw::Gaussian => None,
    };
    (0..cfg.n)
        .map(|_| {
            let covariates: Vec<f64> = (0..cfg.dim()).map(|_| StandardNormal.sample(rng)).collect();
            let e: f64 = match &t {
                Some(t) => t.sample(rng),
                None => StandardNormal.sample(rng),
            };
            let y = cfg.conditional_mean(&covariates)? + cfg.noise_sd * e;
            Ok(Sample { covariates, y })
        })
        .collect()
}

/// `cfg.n` draws from the DGP, fully determined by `cfg.seed`.
pub fn generate_dgp(cfg: &DgpConfig) -> Result<Vec<Sample>> {
    cfg.validate()?;
    draw(cfg, &mut replication_rng(cfg.seed, 0))
}

/// Settings shared by the Monte Carlo studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub dgp: DgpConfig,
    /// Leading observations used only to fit the experts.
    pub train_size: usize,
    pub prior: NigPrior,
    pub replications: usize,
    pub z_points: Vec<Vec<f64>>,
    pub rho_grid: Vec<f64>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            dgp: DgpConfig::default(),
            train_size: 1000,
            prior: NigPrior::default(),
            replications: 500,
            z_points: vec![vec![2.0, 0.0], vec![0.0, 0.0]],
            rho_grid: vec![0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 50.0],
        }
    }
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.dgp.dim() != 2 {
            return Err(PoolError::UnsupportedDgp(format!(
                "the two-expert study needs 2 covariates, got {}",
                self.dgp.dim()
            )));
        }
        if self.train_size == 0 || self.train_size >= self.dgp.n {
            return Err(PoolError::Config(format!(
                "train_size {} must lie in 1..{}",
                self.train_size, self.dgp.n
            )));
        }
        if self.rho_grid.is_empty() {
            return Err(PoolError::Empty("rho grid"));
        }
        for &rho in &self.rho_grid {
            check_rho(rho)?;
        }
        for z in &self.z_points {
            PoolingPoint::new(z.clone())?;
            if z.len() != 2 {
                return Err(PoolError::Dimension {
                    context: "evaluation point",
                    expected: 2,
                    found: z.len(),
                });
            }
        }
        Ok(())
    }

    fn points(&self) -> Vec<PoolingPoint> {
        self.z_points
            .iter()
            .map(|z| PoolingPoint::new(z.clone()).expect("validated"))
            .collect()
    }
}

/// Expert 1 sees only `x1`, Expert 2 only `x2`.
pub fn illustration_experts(prior: NigPrior) -> Result<Vec<NigPosterior>> {
    Ok(vec![
        NigPosterior::diffuse(vec![0], prior)?,
        NigPosterior::diffuse(vec![1], prior)?,
    ])
}

/// One simulated realization after scoring: the scored history and the
/// experts' final predictive distributions at each evaluation point.
#[derive(Debug, Clone)]
pub struct Realization {
    pub history: History,
    /// `predictives[i][k]`: expert `k` at `z_points[i]`.
    pub predictives: Vec<Vec<PredictiveDensity>>,
}

/// Fit the experts on the first `train_size` draws, then score the rest one
/// step ahead with sequential updates.
pub fn simulate_realization(cfg: &SimulationConfig, replication: u64) -> Result<Realization> {
    cfg.validate()?;
    let data = draw(&cfg.dgp, &mut replication_rng(cfg.dgp.seed, replication))?;
    let (train, score) = data.split_at(cfg.train_size);

    let mut experts = illustration_experts(cfg.prior)?;
    for e in experts.iter_mut() {
        let xs = train
            .iter()
            .map(|s| e.design(&s.covariates).map(|x| x.as_slice().to_vec()))
            .collect::<Result<Vec<_>>>()?;
        let ys: Vec<f64> = train.iter().map(|s| s.y).collect();
        *e = e.update_batch(&xs, &ys)?;
    }

    let mut history = History::new();
    for (i, s) in score.iter().enumerate() {
        let scores = experts
            .iter()
            .map(|e| e.predictive_for(&s.covariates)?.log_density(s.y))
            .collect::<Result<Vec<_>>>()?;
        history.push(PredictionRecord::new(
            (cfg.train_size + i) as u64,
            PoolingPoint::new(s.covariates.clone())?,
            s.y,
            scores,
        )?)?;
        for e in experts.iter_mut() {
            *e = e.observe(&s.covariates, s.y)?;
        }
    }

    let predictives = cfg
        .points()
        .iter()
        .map(|z| experts.iter().map(|e| e.predictive_for(z.coords())).collect())
        .collect::<Result<Vec<_>>>()?;
    Ok(Realization { history, predictives })
}

/// Expected log score of one pool at one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeScore {
    pub scheme: Scheme,
    pub rho: Option<f64>,
    pub weights: PoolWeights,
    pub expected_log_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointResult {
    pub z: PoolingPoint,
    /// Exact local ELPD of each expert's final predictive.
    pub true_elpd: Vec<f64>,
    /// `estimates[j][k]`: caliper estimate for expert `k` at `rho_grid[j]`.
    pub estimates: Vec<Vec<f64>>,
    pub neighbor_counts: Vec<usize>,
    pub schemes: Vec<SchemeScore>,
}

impl PointResult {
    /// Caliper estimate minus truth for expert `k` at `rho_grid[j]`.
    pub fn error(&self, j: usize, k: usize) -> f64 {
        self.estimates[j][k] - self.true_elpd[k]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationResult {
    pub replication: usize,
    pub points: Vec<PointResult>,
}

fn evaluate_point(
    cfg: &SimulationConfig,
    real: &Realization,
    global: &PoolWeights,
    z: &PoolingPoint,
    predictives: &[PredictiveDensity],
) -> Result<PointResult> {
    let dgp = &cfg.dgp;
    let true_elpd = predictives
        .iter()
        .map(|p| true_local_elpd(p, z, dgp))
        .collect::<Result<Vec<_>>>()?;
    let score = |scheme, rho, weights: PoolWeights| -> Result<SchemeScore> {
        let pool = assemble_pool(&weights, predictives)?;
        Ok(SchemeScore {
            scheme,
            rho,
            expected_log_score: true_local_elpd(&pool, z, dgp)?,
            weights,
        })
    };

    let k = predictives.len();
    let distances = real.history.distances(z)?;
    let mut estimates = Vec::with_capacity(cfg.rho_grid.len());
    let mut neighbor_counts = Vec::with_capacity(cfg.rho_grid.len());
    let mut schemes = Vec::with_capacity(2 * cfg.rho_grid.len() + 2);
    for &rho in &cfg.rho_grid {
        let nb = neighbors_within(&distances, rho);
        let est = estimate_from_neighbors(&real.history, &nb, k);
        schemes.push(score(Scheme::LocalDm, Some(rho), softmax_weights(&est, ScalingRule::Natural)?)?);
        schemes.push(score(Scheme::LocalOpt, Some(rho), local_opt_from_indices(&real.history, nb.indices(), k)?)?);
        neighbor_counts.push(nb.count());
        estimates.push(est.estimates().to_vec());
    }
    schemes.push(score(Scheme::Equal, None, PoolWeights::equal(k)?)?);
    schemes.push(score(Scheme::GlobalOpt, None, global.clone())?);
    Ok(PointResult {
        z: z.clone(),
        true_elpd,
        estimates,
        neighbor_counts,
        schemes,
    })
}

/// Simulate one replication and evaluate every scheme and caliper width at
/// every configured point.
pub fn run_replication(cfg: &SimulationConfig, replication: usize) -> Result<ReplicationResult> {
    let real = simulate_realization(cfg, replication as u64)?;
    let rows: Vec<_> = real.history.records().iter().map(|r| r.expert_log_scores()).collect();
    let global = optimize_pool_weights(&rows)?;
    let points = cfg
        .points()
        .iter()
        .zip(&real.predictives)
        .map(|(z, preds)| evaluate_point(cfg, &real, &global, z, preds))
        .collect::<Result<Vec<_>>>()?;
    Ok(ReplicationResult { replication, points })
}

/// All replications, in parallel, ordered by replication index.
pub fn run_replications(cfg: &SimulationConfig) -> Result<Vec<ReplicationResult>> {
    cfg.validate()?;
    (0..cfg.replications)
        .into_par_iter()
        .map(|r| run_replication(cfg, r))
        .collect()
}

/// Mean, standard deviation and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SampleSummary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub se: f64,
}

impl SampleSummary {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = if n > 1 {
            xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
        } else {
            0.0
        };
        Self {
            n,
            mean,
            sd: var.sqrt(),
            se: (var / n as f64).sqrt(),
        }
    }

    /// Summary of the paired differences `a_r - b_r`.
    pub fn paired(a: &[f64], b: &[f64]) -> Self {
        let d: Vec<f64> = a.iter().zip(b).map(|(a, b)| a - b).collect();
        Self::of(&d)
    }

    /// `mean / se`; zero when the sample has no spread.
    pub fn z_stat(&self) -> f64 {
        if self.se > 0.0 {
            self.mean / self.se
        } else {
            0.0
        }
    }
}

/// Caliper estimator errors at one point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorStudy {
    pub z: PoolingPoint,
    pub rho_grid: Vec<f64>,
    /// `errors[j][k][r]` for `rho_grid[j]`, expert `k`, replication `r`.
    pub errors: Vec<Vec<Vec<f64>>>,
}

impl ErrorStudy {
    pub fn summary(&self, j: usize, k: usize) -> SampleSummary {
        SampleSummary::of(&self.errors[j][k])
    }
}

fn point_index(cfg: &SimulationConfig, z: &PoolingPoint) -> Result<usize> {
    cfg.z_points
        .iter()
        .position(|p| p.as_slice() == z.coords())
        .ok_or_else(|| PoolError::Config(format!("point {:?} is not among the configured z_points", z.coords())))
}

/// Distribution over replications of `caliper estimate - true local ELPD` at
/// `z`, for every expert and caliper width.
pub fn estimator_error_study(results: &[ReplicationResult], cfg: &SimulationConfig, z: &PoolingPoint) -> Result<ErrorStudy> {
    let i = point_index(cfg, z)?;
    let n_rho = cfg.rho_grid.len();
    let k = results
        .first()
        .map(|r| r.points[i].true_elpd.len())
        .ok_or(PoolError::Empty("replications"))?;
    let mut errors = vec![vec![Vec::with_capacity(results.len()); k]; n_rho];
    for r in results {
        let p = &r.points[i];
        for (j, per_rho) in errors.iter_mut().enumerate() {
            for (kk, col) in per_rho.iter_mut().enumerate() {
                let e = p.error(j, kk);
                if !e.is_finite() {
                    return Err(PoolError::NotANumber("estimator error"));
                }
                col.push(e);
            }
        }
    }
    Ok(ErrorStudy {
        z: z.clone(),
        rho_grid: cfg.rho_grid.clone(),
        errors,
    })
}

/// Expected log scores of every pooling scheme at one point, per replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoolStudy {
    pub z: PoolingPoint,
    /// `(scheme, rho, value per replication)`.
    pub series: Vec<(Scheme, Option<f64>, Vec<f64>)>,
}

impl PoolStudy {
    pub fn values(&self, scheme: Scheme, rho: Option<f64>) -> Option<&[f64]> {
        self.series
            .iter()
            .find(|(s, r, _)| *s == scheme && *r == rho)
            .map(|(_, _, v)| v.as_slice())
    }

    pub fn summary(&self, scheme: Scheme, rho: Option<f64>) -> Option<SampleSummary> {
        self.values(scheme, rho).map(SampleSummary::of)
    }

    /// Paired summary of `a - b`.
    pub fn paired(&self, a: (Scheme, Option<f64>), b: (Scheme, Option<f64>)) -> Option<SampleSummary> {
        Some(SampleSummary::paired(self.values(a.0, a.1)?, self.values(b.0, b.1)?))
    }
}

/// Oracle expected log score of each pooling scheme at `z`.
pub fn pool_comparison_study(results: &[ReplicationResult], cfg: &SimulationConfig, z: &PoolingPoint) -> Result<PoolStudy> {
    let i = point_index(cfg, z)?;
    let first = results.first().ok_or(PoolError::Empty("replications"))?;
    let mut series: Vec<(Scheme, Option<f64>, Vec<f64>)> = first.points[i]
        .schemes
        .iter()
        .map(|s| (s.scheme, s.rho, Vec::with_capacity(results.len())))
        .collect();
    for r in results {
        for (slot, s) in series.iter_mut().zip(&r.points[i].schemes) {
            slot.2.push(s.expected_log_score);
        }
    }
    Ok(PoolStudy { z: z.clone(), series })
}

/// Largest natural-scaling weight when the caliper covers the whole scored
/// history, one entry per replication.
pub fn polarization_study(cfg: &SimulationConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    (0..cfg.replications)
        .into_par_iter()
        .map(|r| {
            let real = simulate_realization(cfg, r as u64)?;
            let z = PoolingPoint::new(vec![0.0; cfg.dgp.dim()])?;
            let est = caliper_elpd(&real.history, &z, FULL_CALIPER)?;
            Ok(softmax_weights(&est, ScalingRule::Natural)?.max_weight())
        })
        .collect()
}

fn format_point(z: &PoolingPoint) -> String {
    z.coords().iter().map(|c| c.to_string()).collect::<Vec<_>>().join(";")
}

/// Long-format CSV with columns `replication, scheme, rho, z, value`.
///
/// Besides the pooling schemes, `truth_expert<k>` rows hold the exact local
/// ELPD and `estimate_expert<k>` rows the caliper estimate (1-based `k`).
pub fn write_tidy_csv<W: Write>(results: &[ReplicationResult], cfg: &SimulationConfig, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["replication", "scheme", "rho", "z", "value"])?;
    let num = |x: f64| format!("{x:.16e}");
    for r in results {
        let rep = r.replication.to_string();
        for p in &r.points {
            let z = format_point(&p.z);
            for (k, t) in p.true_elpd.iter().enumerate() {
                w.write_record([rep.as_str(), &format!("truth_expert{}", k + 1), "", &z, &num(*t)])?;
            }
            for (j, rho) in cfg.rho_grid.iter().enumerate() {
                for (k, e) in p.estimates[j].iter().enumerate() {
                    w.write_record([rep.as_str(), &format!("estimate_expert{}", k + 1), &rho.to_string(), &z, &num(*e)])?;
                }
            }
            for s in &p.schemes {
                let rho = s.rho.map(|r| r.to_string()).unwrap_or_default();
                w.write_record([rep.as_str(), s.scheme.as_str(), &rho, &z, &num(s.expected_log_score)])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}
