//! Built-in Bayesian linear-regression experts and externally supplied score
//! tables.
//!
//! The regression experts use the normal-inverse-gamma conjugate prior
//!
//! ```text
//! beta | sigma^2 ~ N(m, sigma^2 Λ^-1),   sigma^2 ~ IG(a, b)
//! ```
//!
//! so the one-step predictive at design vector `x` is Student-t with
//! `2a` degrees of freedom, location `x'm` and squared scale
//! `(b / a) (1 + x' Λ^-1 x)`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::density::{LogDensity, PredictiveDensity};
use crate::error::{PoolError, Result};

/// Hyperparameters of the default weakly informative prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct NigPrior {
    pub precision: f64,
    pub shape: f64,
    pub rate: f64,
}

impl Default for NigPrior {
    fn default() -> Self {
        Self {
            precision: 1e-6,
            shape: 0.01,
            rate: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NigPosterior {
    coefficient_mean: DVector<f64>,
    precision: DMatrix<f64>,
    shape: f64,
    rate: f64,
    covariate_indices: Vec<usize>,
    observations: usize,
}

impl NigPosterior {
    /// Zero-mean prior with precision `prior.precision * I`. The design has an
    /// intercept followed by the covariates at `covariate_indices`.
    pub fn diffuse(covariate_indices: Vec<usize>, prior: NigPrior) -> Result<Self> {
        let p = covariate_indices.len() + 1;
        Self::new(
            DVector::zeros(p),
            DMatrix::identity(p, p) * prior.precision,
            prior.shape,
            prior.rate,
            covariate_indices,
        )
    }

    pub fn new(
        coefficient_mean: DVector<f64>,
        precision: DMatrix<f64>,
        shape: f64,
        rate: f64,
        covariate_indices: Vec<usize>,
    ) -> Result<Self> {
        let p = coefficient_mean.len();
        if precision.nrows() != p || precision.ncols() != p {
            return Err(PoolError::Dimension {
                context: "NIG precision matrix",
                expected: p,
                found: precision.nrows(),
            });
        }
        if covariate_indices.len() + 1 != p {
            return Err(PoolError::Dimension {
                context: "NIG covariate indices (plus intercept)",
                expected: p,
                found: covariate_indices.len() + 1,
            });
        }
        if !(shape > 0.0 && rate > 0.0) {
            return Err(PoolError::domain(format!("NIG shape {shape} and rate {rate} must be positive")));
        }
        if (&precision - precision.transpose()).amax() > 1e-10 {
            return Err(PoolError::domain("NIG precision matrix is not symmetric"));
        }
        if precision.clone().cholesky().is_none() {
            return Err(PoolError::domain("NIG precision matrix is not positive definite"));
        }
        Ok(Self {
            coefficient_mean,
            precision,
            shape,
            rate,
            covariate_indices,
            observations: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.coefficient_mean.len()
    }

    pub fn coefficient_mean(&self) -> &DVector<f64> {
        &self.coefficient_mean
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn covariate_indices(&self) -> &[usize] {
        &self.covariate_indices
    }

    pub fn observations(&self) -> usize {
        self.observations
    }

    /// Posterior covariance of the coefficients divided by `sigma^2`.
    pub fn scaled_covariance(&self) -> DMatrix<f64> {
        self.precision
            .clone()
            .cholesky()
            .expect("precision stays positive definite")
            .inverse()
    }

    /// `[1, covariates[i] for i in covariate_indices]`.
    pub fn design(&self, covariates: &[f64]) -> Result<DVector<f64>> {
        let mut x = DVector::zeros(self.dim());
        x[0] = 1.0;
        for (slot, &i) in self.covariate_indices.iter().enumerate() {
            x[slot + 1] = *covariates.get(i).ok_or(PoolError::Index {
                what: "covariate",
                index: i,
                len: covariates.len(),
            })?;
        }
        Ok(x)
    }

    fn check_design(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(PoolError::Dimension {
                context: "NIG design vector",
                expected: self.dim(),
                found: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(PoolError::domain("design vector must be finite"));
        }
        Ok(())
    }

    /// Conjugate update on one observation with design vector `x`
    /// (intercept included).
    pub fn update(&self, x: &[f64], y: f64) -> Result<Self> {
        self.check_design(x)?;
        if !y.is_finite() {
            return Err(PoolError::domain(format!("outcome {y} must be finite")));
        }
        let x = DVector::from_column_slice(x);
        let chol = self.precision.clone().cholesky().expect("precision stays positive definite");
        // prediction-error form of the rate update: b + e^2 / (2 (1 + x'Λ^-1 x))
        let leverage = x.dot(&chol.solve(&x));
        let resid = y - x.dot(&self.coefficient_mean);

        let precision = &self.precision + &x * x.transpose();
        let rhs = &self.precision * &self.coefficient_mean + &x * y;
        let coefficient_mean = precision
            .clone()
            .cholesky()
            .ok_or_else(|| PoolError::domain("updated precision lost positive definiteness"))?
            .solve(&rhs);
        Ok(Self {
            coefficient_mean,
            precision,
            shape: self.shape + 0.5,
            rate: self.rate + 0.5 * resid * resid / (1.0 + leverage),
            covariate_indices: self.covariate_indices.clone(),
            observations: self.observations + 1,
        })
    }

    /// Update from a raw covariate vector, selecting this expert's columns.
    pub fn observe(&self, covariates: &[f64], y: f64) -> Result<Self> {
        let x = self.design(covariates)?;
        self.update(x.as_slice(), y)
    }

    /// Closed-form batch update on rows `xs` (design vectors) and outcomes `ys`.
    pub fn update_batch(&self, xs: &[Vec<f64>], ys: &[f64]) -> Result<Self> {
        if xs.len() != ys.len() {
            return Err(PoolError::Dimension {
                context: "batch outcomes",
                expected: xs.len(),
                found: ys.len(),
            });
        }
        if xs.is_empty() {
            return Ok(self.clone());
        }
        let p = self.dim();
        let mut xtx = DMatrix::zeros(p, p);
        let mut xty = DVector::zeros(p);
        let mut yty = 0.0;
        for (x, &y) in xs.iter().zip(ys) {
            self.check_design(x)?;
            let x = DVector::from_column_slice(x);
            xtx += &x * x.transpose();
            xty += &x * y;
            yty += y * y;
        }
        let precision = &self.precision + xtx;
        let prior_term = &self.precision * &self.coefficient_mean;
        let coefficient_mean = precision
            .clone()
            .cholesky()
            .ok_or_else(|| PoolError::domain("batch precision not positive definite"))?
            .solve(&(&prior_term + xty));
        let rate = self.rate
            + 0.5
                * (yty + self.coefficient_mean.dot(&prior_term)
                    - coefficient_mean.dot(&(&precision * &coefficient_mean)));
        Ok(Self {
            coefficient_mean,
            precision,
            shape: self.shape + 0.5 * xs.len() as f64,
            rate,
            covariate_indices: self.covariate_indices.clone(),
            observations: self.observations + xs.len(),
        })
    }

    /// One-step Student-t predictive at design vector `x`.
    pub fn predictive(&self, x: &[f64]) -> Result<PredictiveDensity> {
        self.check_design(x)?;
        let x = DVector::from_column_slice(x);
        let chol = self.precision.clone().cholesky().expect("precision stays positive definite");
        let leverage = x.dot(&chol.solve(&x));
        let scale = (self.rate / self.shape * (1.0 + leverage)).sqrt();
        PredictiveDensity::student_t(x.dot(&self.coefficient_mean), scale, 2.0 * self.shape)
    }

    pub fn predictive_for(&self, covariates: &[f64]) -> Result<PredictiveDensity> {
        let x = self.design(covariates)?;
        self.predictive(x.as_slice())
    }
}

/// Log predictive scores supplied from outside, one row per time step.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertScoreTable {
    names: Vec<String>,
    rows: Vec<Vec<LogDensity>>,
}

impl ExpertScoreTable {
    pub fn new(names: Vec<String>, rows: Vec<Vec<LogDensity>>) -> Result<Self> {
        if names.is_empty() {
            return Err(PoolError::Empty("expert names"));
        }
        for row in &rows {
            if row.len() != names.len() {
                return Err(PoolError::Dimension {
                    context: "score table row",
                    expected: names.len(),
                    found: row.len(),
                });
            }
        }
        Ok(Self { names, rows })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_experts(&self) -> usize {
        self.names.len()
    }

    pub fn n_steps(&self) -> usize {
        self.rows.len()
    }

    pub fn rows(&self) -> &[Vec<LogDensity>] {
        &self.rows
    }

    pub fn row(&self, t: usize) -> Result<&[LogDensity]> {
        self.rows.get(t).map(Vec::as_slice).ok_or(PoolError::Index {
            what: "time",
            index: t,
            len: self.rows.len(),
        })
    }

    /// Stored `log p_k(y_t)`.
    pub fn score(&self, k: usize, t: usize) -> Result<LogDensity> {
        let row = self.row(t)?;
        row.get(k).copied().ok_or(PoolError::Index {
            what: "expert",
            index: k,
            len: row.len(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Gamma, Normal, StandardNormal};

    fn assert_posteriors_close(a: &NigPosterior, b: &NigPosterior, tol: f64) {
        let close = |x: f64, y: f64| (x - y).abs() <= tol * x.abs().max(y.abs()).max(1.0);
        for (x, y) in a.coefficient_mean.iter().zip(b.coefficient_mean.iter()) {
            assert!(close(*x, *y), "mean {x} vs {y}");
        }
        for (x, y) in a.precision.iter().zip(b.precision.iter()) {
            assert!(close(*x, *y), "precision {x} vs {y}");
        }
        assert!(close(a.shape, b.shape));
        assert!(close(a.rate, b.rate), "rate {} vs {}", a.rate, b.rate);
    }

    fn line_data(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let x: f64 = StandardNormal.sample(&mut rng);
            xs.push(vec![1.0, x]);
            ys.push(0.3 + 2.0 * x + noise.sample(&mut rng));
        }
        (xs, ys)
    }

    #[test]
    fn zero_observations_leave_prior_unchanged() {
        let prior = NigPosterior::diffuse(vec![0], NigPrior::default()).unwrap();
        assert_eq!(prior.update_batch(&[], &[]).unwrap(), prior);
    }

    #[test]
    fn slope_recovered_against_least_squares() {
        let (xs, ys) = line_data(100, 1);
        let mut post = NigPosterior::diffuse(vec![0], NigPrior::default()).unwrap();
        for (x, &y) in xs.iter().zip(&ys) {
            post = post.update(x, y).unwrap();
        }
        // independent ordinary least squares on the same points
        let n = xs.len() as f64;
        let mx = xs.iter().map(|x| x[1]).sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x[1] - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x[1] - mx).powi(2)).sum();
        let ols = sxy / sxx;
        assert!((post.coefficient_mean[1] - ols).abs() < 1e-6);

        let sigma2 = post.rate / (post.shape - 1.0);
        let sd = (sigma2 * post.scaled_covariance()[(1, 1)]).sqrt();
        assert!((post.coefficient_mean[1] - 2.0).abs() < 3.0 * sd);
    }

    #[test]
    fn sequential_equals_batch_and_order_free() {
        let (xs, ys) = line_data(50, 2);
        let prior = NigPosterior::diffuse(vec![0], NigPrior::default()).unwrap();
        let mut seq = prior.clone();
        for (x, &y) in xs.iter().zip(&ys) {
            seq = seq.update(x, y).unwrap();
        }
        let batch = prior.update_batch(&xs, &ys).unwrap();
        assert_posteriors_close(&seq, &batch, 1e-10);

        let mut rev = prior.clone();
        for (x, &y) in xs.iter().zip(&ys).rev() {
            rev = rev.update(x, y).unwrap();
        }
        assert_posteriors_close(&seq, &rev, 1e-10);
    }

    #[test]
    fn intercept_only_evaluation() {
        let (xs, ys) = line_data(30, 3);
        let post = NigPosterior::diffuse(vec![0], NigPrior::default())
            .unwrap()
            .update_batch(&xs, &ys)
            .unwrap();
        match post.predictive(&[1.0, 0.0]).unwrap() {
            PredictiveDensity::StudentT(t) => {
                assert!((t.location() - post.coefficient_mean[0]).abs() < 1e-15);
                assert_eq!(t.dof(), 2.0 * post.shape);
            }
            other => panic!("expected student-t, got {other:?}"),
        }
    }

    #[test]
    fn dof_grows_linearly() {
        let (xs, ys) = line_data(200, 4);
        let mut post = NigPosterior::diffuse(vec![0], NigPrior::default()).unwrap();
        for (i, (x, &y)) in xs.iter().zip(&ys).enumerate() {
            post = post.update(x, y).unwrap();
            if let PredictiveDensity::StudentT(t) = post.predictive(&[1.0, 0.5]).unwrap() {
                assert!((t.dof() - (0.02 + (i + 1) as f64)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn dimension_errors() {
        let post = NigPosterior::diffuse(vec![1], NigPrior::default()).unwrap();
        assert!(matches!(post.update(&[1.0], 0.0), Err(PoolError::Dimension { .. })));
        assert!(matches!(post.predictive(&[1.0, 2.0, 3.0]), Err(PoolError::Dimension { .. })));
        assert!(matches!(post.observe(&[1.0], 0.0), Err(PoolError::Index { .. })));
        // covariate_indices select which raw covariates are read
        let x = post.design(&[7.0, -3.0]).unwrap();
        assert_eq!(x.as_slice(), &[1.0, -3.0]);
    }

    #[test]
    fn invalid_posteriors_rejected() {
        let m = DVector::zeros(2);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(NigPosterior::new(m.clone(), asym, 1.0, 1.0, vec![0]).is_err());
        let indefinite = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(NigPosterior::new(m.clone(), indefinite, 1.0, 1.0, vec![0]).is_err());
        assert!(NigPosterior::new(m, DMatrix::identity(2, 2), 0.0, 1.0, vec![0]).is_err());
    }

    #[test]
    fn predictive_matches_posterior_sampling_density() {
        let (xs, ys) = line_data(40, 5);
        let post = NigPosterior::diffuse(vec![0], NigPrior::default())
            .unwrap()
            .update_batch(&xs, &ys)
            .unwrap();
        let x = [1.0, 0.8];
        let pred = post.predictive(&x).unwrap();
        assert!((pred.total_mass() - 1.0).abs() < 1e-6);

        // draw (sigma^2, beta) from the posterior; average the conditional
        // normal densities on a grid
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let gamma = Gamma::new(post.shape, 1.0 / post.rate).unwrap();
        let cov = post.scaled_covariance();
        let chol = cov.clone().cholesky().unwrap().l();
        let loc = x[0] * post.coefficient_mean[0] + x[1] * post.coefficient_mean[1];
        let grid: Vec<f64> = (0..200).map(|i| loc - 3.0 + 6.0 * i as f64 / 199.0).collect();
        let mut dens = vec![0.0; grid.len()];
        let draws = 100_000;
        for _ in 0..draws {
            let sigma2 = 1.0 / gamma.sample(&mut rng);
            let e = DVector::from_fn(2, |_, _| StandardNormal.sample(&mut rng));
            let beta = &post.coefficient_mean + (&chol * e) * sigma2.sqrt();
            let mean = x[0] * beta[0] + x[1] * beta[1];
            for (d, &y) in dens.iter_mut().zip(&grid) {
                *d += (-(y - mean).powi(2) / (2.0 * sigma2)).exp() / (2.0 * std::f64::consts::PI * sigma2).sqrt();
            }
        }
        let sup = grid
            .iter()
            .zip(&dens)
            .map(|(&y, d)| (pred.pdf(y) - d / draws as f64).abs())
            .fold(0.0, f64::max);
        assert!(sup < 0.01, "sup difference {sup}");
    }

    #[test]
    fn score_table_lookup() {
        let l = |x: f64| LogDensity::new(x).unwrap();
        let table = ExpertScoreTable::new(
            vec!["a".into(), "b".into()],
            vec![vec![l(-1.0), l(-2.0)], vec![l(-3.0), l(-4.0)]],
        )
        .unwrap();
        assert_eq!(table.score(0, 0).unwrap(), l(-1.0));
        assert_eq!(table.score(1, 1).unwrap(), l(-4.0));
        assert!(matches!(table.score(2, 0), Err(PoolError::Index { what: "expert", .. })));
        assert!(matches!(table.score(0, 5), Err(PoolError::Index { what: "time", .. })));
        assert!(ExpertScoreTable::new(vec!["a".into()], vec![vec![l(0.0), l(0.0)]]).is_err());
    }
}
