//! Rolling one-step-ahead evaluation of pooling schemes.
//!
//! The stream is split into three consecutive batches. Warmup observations
//! only train the experts. During the history batch every candidate pool is
//! scored and the prediction records accumulate, but nothing is reported.
//! From then on each step is reported. Every `(rho, tau)` candidate runs as
//! its own shadow pool over the whole run, and each scheme uses the
//! candidate with the best cumulative score over the steps before `t`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{pooled_log_density, LogDensity};
use crate::elpd::estimate_from_neighbors;
use crate::error::{PoolError, Result};
use crate::experts::{ExpertScoreTable, NigPosterior};
use crate::pools::{local_opt_from_indices, optimize_pool_weights, softmax_weights, PoolWeights, ScalingRule};
use crate::space::{check_rho, neighbors_within, History, PoolingPoint, PredictionRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    LocalDm,
    Equal,
    GlobalOpt,
    LocalOpt,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::LocalDm, Scheme::Equal, Scheme::GlobalOpt, Scheme::LocalOpt];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::LocalDm => "local_dm",
            Scheme::Equal => "equal",
            Scheme::GlobalOpt => "global_opt",
            Scheme::LocalOpt => "local_opt",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = PoolError;

    fn from_str(s: &str) -> Result<Self> {
        Scheme::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| PoolError::Config(format!("unknown scheme `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    pub warmup_size: usize,
    pub history_size: usize,
    pub rho_grid: Vec<f64>,
    /// Softmax scalings tried by the local DM pool; empty means natural only.
    pub tau_grid: Vec<ScalingRule>,
    pub schemes: Vec<Scheme>,
    pub seed: u64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self {
            warmup_size: 200,
            history_size: 200,
            rho_grid: vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 1e6],
            tau_grid: vec![
                ScalingRule::Fixed(0.5),
                ScalingRule::Fixed(1.0),
                ScalingRule::Fixed(2.0),
                ScalingRule::Fixed(5.0),
                ScalingRule::Fixed(10.0),
                ScalingRule::Natural,
            ],
            schemes: Scheme::ALL.to_vec(),
            seed: 0,
        }
    }
}

impl EvaluationConfig {
    pub fn validate(&self, stream_len: usize) -> Result<()> {
        if self.schemes.is_empty() {
            return Err(PoolError::Empty("schemes"));
        }
        let local = self.schemes.iter().any(|s| matches!(s, Scheme::LocalDm | Scheme::LocalOpt));
        if local && self.rho_grid.is_empty() {
            return Err(PoolError::Empty("rho grid"));
        }
        for &rho in &self.rho_grid {
            check_rho(rho)?;
        }
        for tau in &self.tau_grid {
            if let ScalingRule::Fixed(t) = tau {
                ScalingRule::fixed(*t)?;
            }
        }
        if stream_len <= self.warmup_size + self.history_size {
            return Err(PoolError::Config(format!(
                "stream of {stream_len} observations is too short for warmup {} + history {}",
                self.warmup_size, self.history_size
            )));
        }
        Ok(())
    }

    /// Candidate pools in selection order: schemes in configured order; within
    /// a scheme rho ascending, then fixed tau ascending, natural last.
    pub fn candidates(&self) -> Vec<Candidate> {
        let mut rhos = self.rho_grid.clone();
        rhos.sort_by(f64::total_cmp);
        rhos.dedup();
        let mut fixed: Vec<f64> = self
            .tau_grid
            .iter()
            .filter_map(|t| match t {
                ScalingRule::Fixed(t) => Some(*t),
                ScalingRule::Natural => None,
            })
            .collect();
        fixed.sort_by(f64::total_cmp);
        fixed.dedup();
        let mut taus: Vec<ScalingRule> = fixed.into_iter().map(ScalingRule::Fixed).collect();
        if self.tau_grid.is_empty() || self.tau_grid.contains(&ScalingRule::Natural) {
            taus.push(ScalingRule::Natural);
        }

        let mut out = Vec::new();
        let mut seen = Vec::new();
        for &scheme in &self.schemes {
            if seen.contains(&scheme) {
                continue;
            }
            seen.push(scheme);
            match scheme {
                Scheme::LocalDm => {
                    for &rho in &rhos {
                        for &tau in &taus {
                            out.push(Candidate {
                                scheme,
                                rho: Some(rho),
                                tau: Some(tau),
                            });
                        }
                    }
                }
                Scheme::LocalOpt => out.extend(rhos.iter().map(|&rho| Candidate {
                    scheme,
                    rho: Some(rho),
                    tau: None,
                })),
                Scheme::Equal | Scheme::GlobalOpt => out.push(Candidate {
                    scheme,
                    rho: None,
                    tau: None,
                }),
            }
        }
        out
    }
}

/// One hyperparameter setting of one scheme.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Candidate {
    pub scheme: Scheme,
    pub rho: Option<f64>,
    pub tau: Option<ScalingRule>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observation {
    pub time_index: u64,
    pub point: PoolingPoint,
    pub covariates: Vec<f64>,
    pub y: f64,
}

/// A set of experts producing one-step log scores.
pub trait ExpertPanel {
    fn names(&self) -> Vec<String>;

    /// Log predictive density of each expert at `obs.y`, using only
    /// information from before `obs`. `step` is the position in the stream.
    fn log_scores(&self, step: usize, obs: &Observation) -> Result<Vec<LogDensity>>;

    /// Absorb the realized observation.
    fn update(&mut self, step: usize, obs: &Observation) -> Result<()>;
}

/// Regression experts updated after every observation.
#[derive(Debug, Clone)]
pub struct NigPanel {
    pub names: Vec<String>,
    pub experts: Vec<NigPosterior>,
}

impl ExpertPanel for NigPanel {
    fn names(&self) -> Vec<String> {
        self.names.clone()
    }

    fn log_scores(&self, _step: usize, obs: &Observation) -> Result<Vec<LogDensity>> {
        self.experts
            .iter()
            .map(|e| e.predictive_for(&obs.covariates)?.log_density(obs.y))
            .collect()
    }

    fn update(&mut self, _step: usize, obs: &Observation) -> Result<()> {
        for e in self.experts.iter_mut() {
            *e = e.observe(&obs.covariates, obs.y)?;
        }
        Ok(())
    }
}

/// Precomputed scores; row `step` belongs to the `step`-th observation.
impl ExpertPanel for ExpertScoreTable {
    fn names(&self) -> Vec<String> {
        ExpertScoreTable::names(self).to_vec()
    }

    fn log_scores(&self, step: usize, _obs: &Observation) -> Result<Vec<LogDensity>> {
        Ok(self.row(step)?.to_vec())
    }

    fn update(&mut self, _step: usize, _obs: &Observation) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeStep {
    pub scheme: Scheme,
    pub rho: Option<f64>,
    pub tau: Option<ScalingRule>,
    pub weights: PoolWeights,
    pub log_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepResult {
    pub time_index: u64,
    pub expert_log_scores: Vec<LogDensity>,
    pub schemes: Vec<SchemeStep>,
}

impl StepResult {
    pub fn scheme(&self, scheme: Scheme) -> Option<&SchemeStep> {
        self.schemes.iter().find(|s| s.scheme == scheme)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationOutput {
    pub expert_names: Vec<String>,
    pub candidates: Vec<Candidate>,
    /// Every candidate's pooled log score at every scored step, history
    /// batch included, as `(time_index, scores)`.
    pub candidate_scores: Vec<(u64, Vec<f64>)>,
    /// Reported steps only.
    pub steps: Vec<StepResult>,
}

impl EvaluationOutput {
    pub fn schemes(&self) -> Vec<Scheme> {
        let mut out: Vec<Scheme> = Vec::new();
        for c in &self.candidates {
            if !out.contains(&c.scheme) {
                out.push(c.scheme);
            }
        }
        out
    }

    /// Total pooled log score of each candidate over every scored step.
    pub fn candidate_totals(&self) -> Vec<f64> {
        let mut totals = vec![0.0; self.candidates.len()];
        for (_, row) in &self.candidate_scores {
            for (t, s) in totals.iter_mut().zip(row) {
                *t += s;
            }
        }
        totals
    }
}

/// Index of the best cumulative score; ties go to the earliest entry.
pub fn select_hyperparameters(cumulative: &[f64]) -> Result<usize> {
    if cumulative.is_empty() {
        return Err(PoolError::Empty("hyperparameter grid"));
    }
    let mut best = 0;
    for (i, &v) in cumulative.iter().enumerate().skip(1) {
        if v > cumulative[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Running sums of `xs`.
pub fn prefix_sums(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .scan(0.0, |acc, x| {
            *acc += x;
            Some(*acc)
        })
        .collect()
}

/// Running totals of each scheme's pooled log score over the reported steps.
pub fn cumulative_scores(steps: &[StepResult]) -> Vec<(Scheme, Vec<f64>)> {
    let Some(first) = steps.first() else {
        return Vec::new();
    };
    first
        .schemes
        .iter()
        .map(|s| {
            let scores: Vec<f64> = steps
                .iter()
                .map(|st| st.scheme(s.scheme).map_or(f64::NAN, |x| x.log_score))
                .collect();
            (s.scheme, prefix_sums(&scores))
        })
        .collect()
}

fn candidate_weights(
    c: &Candidate,
    history: &History,
    distances: &[f64],
    global: &PoolWeights,
    k: usize,
) -> Result<PoolWeights> {
    match c.scheme {
        Scheme::Equal => PoolWeights::equal(k),
        Scheme::GlobalOpt => Ok(global.clone()),
        Scheme::LocalDm => {
            let nb = neighbors_within(distances, c.rho.expect("local candidate has rho"));
            let est = estimate_from_neighbors(history, &nb, k);
            softmax_weights(&est, c.tau.expect("local DM candidate has tau"))
        }
        Scheme::LocalOpt => {
            let nb = neighbors_within(distances, c.rho.expect("local candidate has rho"));
            local_opt_from_indices(history, nb.indices(), k)
        }
    }
}

/// Run the rolling protocol over `data` with the given experts.
pub fn rolling_evaluate<P: ExpertPanel>(data: &[Observation], experts: &mut P, cfg: &EvaluationConfig) -> Result<EvaluationOutput> {
    cfg.validate(data.len())?;
    let names = experts.names();
    let k = names.len();
    if k == 0 {
        return Err(PoolError::Empty("experts"));
    }
    let candidates = cfg.candidates();
    let needs_global = candidates.iter().any(|c| c.scheme == Scheme::GlobalOpt);
    let report_from = cfg.warmup_size + cfg.history_size;
    let mut groups: Vec<(Scheme, Vec<usize>)> = Vec::new();
    for (i, c) in candidates.iter().enumerate() {
        match groups.iter_mut().find(|(s, _)| *s == c.scheme) {
            Some((_, idx)) => idx.push(i),
            None => groups.push((c.scheme, vec![i])),
        }
    }

    let mut history = History::new();
    let mut totals = vec![0.0; candidates.len()];
    let mut candidate_scores = Vec::new();
    let mut steps = Vec::new();
    for (step, obs) in data.iter().enumerate() {
        if step < cfg.warmup_size {
            experts.update(step, obs)?;
            continue;
        }
        let scores = experts.log_scores(step, obs)?;
        if scores.len() != k {
            return Err(PoolError::Dimension {
                context: "expert scores",
                expected: k,
                found: scores.len(),
            });
        }

        let distances = history.distances(&obs.point)?;
        let global = if needs_global && !history.is_empty() {
            let rows: Vec<_> = history.records().iter().map(|r| r.expert_log_scores()).collect();
            optimize_pool_weights(&rows)?
        } else {
            PoolWeights::equal(k)?
        };
        let pooled: Vec<(PoolWeights, f64)> = candidates
            .par_iter()
            .map(|c| {
                let w = candidate_weights(c, &history, &distances, &global, k)?;
                let s = pooled_log_density(&w, &scores)?.value();
                Ok((w, s))
            })
            .collect::<Result<_>>()?;

        if step >= report_from {
            let mut schemes = Vec::with_capacity(groups.len());
            for (scheme, idx) in &groups {
                let sub: Vec<f64> = idx.iter().map(|&i| totals[i]).collect();
                let chosen = idx[select_hyperparameters(&sub)?];
                let c = &candidates[chosen];
                schemes.push(SchemeStep {
                    scheme: *scheme,
                    rho: c.rho,
                    tau: c.tau,
                    weights: pooled[chosen].0.clone(),
                    log_score: pooled[chosen].1,
                });
            }
            steps.push(StepResult {
                time_index: obs.time_index,
                expert_log_scores: scores.clone(),
                schemes,
            });
        }

        let row: Vec<f64> = pooled.into_iter().map(|(_, s)| s).collect();
        for (t, s) in totals.iter_mut().zip(&row) {
            *t += s;
        }
        candidate_scores.push((obs.time_index, row));
        history.push(PredictionRecord::new(obs.time_index, obs.point.clone(), obs.y, scores)?)?;
        experts.update(step, obs)?;
    }

    Ok(EvaluationOutput {
        expert_names: names,
        candidates,
        candidate_scores,
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experts::NigPrior;
    use crate::simulation::{generate_dgp, DgpConfig};

    fn l(x: f64) -> LogDensity {
        LogDensity::new(x).unwrap()
    }

    fn synthetic(n: usize, k: usize) -> (Vec<Observation>, ExpertScoreTable) {
        let data = generate_dgp(&DgpConfig {
            n,
            seed: 4,
            ..DgpConfig::default()
        })
        .unwrap();
        let obs: Vec<Observation> = data
            .iter()
            .enumerate()
            .map(|(t, s)| Observation {
                time_index: t as u64,
                point: PoolingPoint::new(s.covariates.clone()).unwrap(),
                covariates: s.covariates.clone(),
                y: s.y,
            })
            .collect();
        // expert j predicts N(x_j, sqrt 2)
        let rows = data
            .iter()
            .map(|s| {
                (0..k)
                    .map(|j| {
                        let m = s.covariates[j % 2];
                        l(-0.5 * (2.0 * std::f64::consts::PI * 2.0).ln() - (s.y - m).powi(2) / 4.0)
                    })
                    .collect()
            })
            .collect();
        let names = (0..k).map(|j| format!("e{j}")).collect();
        (obs, ExpertScoreTable::new(names, rows).unwrap())
    }

    fn small_cfg() -> EvaluationConfig {
        EvaluationConfig {
            warmup_size: 10,
            history_size: 20,
            rho_grid: vec![0.5, 1.0, 1e6],
            tau_grid: vec![ScalingRule::Fixed(1.0), ScalingRule::Natural],
            ..EvaluationConfig::default()
        }
    }

    #[test]
    fn selection_rules() {
        assert_eq!(select_hyperparameters(&[-3.0]).unwrap(), 0);
        assert_eq!(select_hyperparameters(&[-12.0, -10.0]).unwrap(), 1);
        assert_eq!(select_hyperparameters(&[-10.0, -12.0]).unwrap(), 0);
        assert_eq!(select_hyperparameters(&[-5.0, -5.0]).unwrap(), 0);
        assert_eq!(select_hyperparameters(&[f64::NEG_INFINITY, f64::NEG_INFINITY]).unwrap(), 0);
        assert!(select_hyperparameters(&[]).is_err());
    }

    #[test]
    fn prefix_sum_arithmetic() {
        assert!(prefix_sums(&[]).is_empty());
        assert_eq!(prefix_sums(&[1.0, 2.0, 3.0]), vec![1.0, 3.0, 6.0]);
        assert!(cumulative_scores(&[]).is_empty());
    }

    #[test]
    fn candidate_order_follows_grid() {
        let cfg = EvaluationConfig {
            rho_grid: vec![2.0, 0.5],
            tau_grid: vec![ScalingRule::Natural, ScalingRule::Fixed(5.0), ScalingRule::Fixed(1.0)],
            schemes: vec![Scheme::LocalDm, Scheme::Equal],
            ..EvaluationConfig::default()
        };
        let c = cfg.candidates();
        let got: Vec<(Option<f64>, Option<ScalingRule>)> = c.iter().map(|c| (c.rho, c.tau)).collect();
        assert_eq!(
            got,
            vec![
                (Some(0.5), Some(ScalingRule::Fixed(1.0))),
                (Some(0.5), Some(ScalingRule::Fixed(5.0))),
                (Some(0.5), Some(ScalingRule::Natural)),
                (Some(2.0), Some(ScalingRule::Fixed(1.0))),
                (Some(2.0), Some(ScalingRule::Fixed(5.0))),
                (Some(2.0), Some(ScalingRule::Natural)),
                (None, None),
            ]
        );
    }

    #[test]
    fn stream_too_short() {
        let (obs, mut table) = synthetic(30, 2);
        assert!(matches!(
            rolling_evaluate(&obs, &mut table, &small_cfg()),
            Err(PoolError::Config(_))
        ));
    }

    #[test]
    fn single_expert_is_degenerate() {
        let (obs, mut table) = synthetic(60, 1);
        let out = rolling_evaluate(&obs, &mut table, &small_cfg()).unwrap();
        assert_eq!(out.steps.len(), 30);
        for st in &out.steps {
            for s in &st.schemes {
                assert_eq!(s.weights.as_slice(), &[1.0]);
                assert_eq!(s.log_score, st.expert_log_scores[0].value());
            }
        }
    }

    #[test]
    fn identical_experts_give_identical_pools() {
        let (obs, mut table) = synthetic(60, 1);
        let rows = table.rows().iter().map(|r| vec![r[0], r[0], r[0]]).collect();
        let mut triple = ExpertScoreTable::new(vec!["a".into(), "b".into(), "c".into()], rows).unwrap();
        let out = rolling_evaluate(&obs, &mut triple, &small_cfg()).unwrap();
        let single = rolling_evaluate(&obs, &mut table, &small_cfg()).unwrap();
        for (st, one) in out.steps.iter().zip(&single.steps) {
            for s in &st.schemes {
                assert!((s.log_score - one.expert_log_scores[0].value()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pooled_scores_match_weights() {
        let (obs, mut table) = synthetic(80, 2);
        let out = rolling_evaluate(&obs, &mut table, &small_cfg()).unwrap();
        for st in &out.steps {
            for s in &st.schemes {
                let direct = pooled_log_density(&s.weights, &st.expert_log_scores).unwrap().value();
                assert!((s.log_score - direct).abs() <= 1e-12);
                assert!((s.weights.as_slice().iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn equal_scheme_total() {
        let (obs, mut table) = synthetic(80, 2);
        let cfg = EvaluationConfig {
            schemes: vec![Scheme::Equal],
            ..small_cfg()
        };
        let out = rolling_evaluate(&obs, &mut table, &cfg).unwrap();
        let total: f64 = out.steps.iter().map(|s| s.schemes[0].log_score).sum();
        let half = PoolWeights::equal(2).unwrap();
        let direct: f64 = table.rows()[30..]
            .iter()
            .map(|r| pooled_log_density(&half, r).unwrap().value())
            .sum();
        assert!((total - direct).abs() < 1e-9);
        let cum = cumulative_scores(&out.steps);
        assert!((cum[0].1.last().unwrap() - total).abs() < 1e-9);
    }

    #[test]
    fn full_caliper_natural_equals_global_natural() {
        let (obs, mut table) = synthetic(120, 2);
        let cfg = EvaluationConfig {
            rho_grid: vec![1e6],
            tau_grid: vec![ScalingRule::Natural],
            schemes: vec![Scheme::LocalDm],
            ..small_cfg()
        };
        let out = rolling_evaluate(&obs, &mut table, &cfg).unwrap();
        // hand-rolled: weights ∝ exp(sum of past scores) over all scored steps
        let mut sums = [0.0f64; 2];
        let mut expected = Vec::new();
        for (t, row) in table.rows().iter().enumerate().skip(10) {
            let m = sums[0].max(sums[1]);
            let e = [(sums[0] - m).exp(), (sums[1] - m).exp()];
            let w0 = e[0] / (e[0] + e[1]);
            if t >= 30 {
                expected.push((w0, (w0 * row[0].value().exp() + (1.0 - w0) * row[1].value().exp()).ln()));
            }
            sums[0] += row[0].value();
            sums[1] += row[1].value();
        }
        for (st, (w0, score)) in out.steps.iter().zip(expected) {
            let s = &st.schemes[0];
            assert!((s.weights.as_slice()[0] - w0).abs() < 1e-9, "{} vs {w0}", s.weights.as_slice()[0]);
            assert!((s.log_score - score).abs() < 1e-9);
        }
    }

    #[test]
    fn selection_matches_brute_force_rescan() {
        let (obs, mut table) = synthetic(90, 2);
        let cfg = small_cfg();
        let out = rolling_evaluate(&obs, &mut table, &cfg).unwrap();
        for st in &out.steps {
            let before: Vec<&Vec<f64>> = out
                .candidate_scores
                .iter()
                .filter(|(t, _)| *t < st.time_index)
                .map(|(_, r)| r)
                .collect();
            for s in &st.schemes {
                let mut best: Option<(usize, f64)> = None;
                for (i, c) in out.candidates.iter().enumerate() {
                    if c.scheme != s.scheme {
                        continue;
                    }
                    let total: f64 = before.iter().map(|r| r[i]).sum();
                    if best.is_none_or(|(_, b)| total > b) {
                        best = Some((i, total));
                    }
                }
                let c = out.candidates[best.unwrap().0];
                assert_eq!((c.rho, c.tau), (s.rho, s.tau));
            }
        }
    }

    #[test]
    fn no_lookahead_replay() {
        let (obs, mut table) = synthetic(70, 2);
        let cfg = small_cfg();
        let full = rolling_evaluate(&obs, &mut table.clone(), &cfg).unwrap();
        for (i, st) in full.steps.iter().enumerate() {
            let cut = 31 + i;
            let out = rolling_evaluate(&obs[..cut], &mut table, &cfg).unwrap();
            assert_eq!(out.steps.last().unwrap(), st);
        }
    }

    #[test]
    fn regression_panel_runs_and_updates() {
        let (obs, _) = synthetic(80, 2);
        let mut panel = NigPanel {
            names: vec!["x1".into(), "x2".into()],
            experts: crate::simulation::illustration_experts(NigPrior::default()).unwrap(),
        };
        let out = rolling_evaluate(&obs, &mut panel, &small_cfg()).unwrap();
        assert_eq!(out.steps.len(), 50);
        assert_eq!(panel.experts[0].observations(), 80);
    }

    #[test]
    fn scheme_names_round_trip() {
        for s in Scheme::ALL {
            assert_eq!(s.as_str().parse::<Scheme>().unwrap(), s);
        }
        assert!("best".parse::<Scheme>().is_err());
    }
}
