//! The pooling space: scored prediction history, z-score standardization and
//! caliper neighborhood queries.

use serde::{Deserialize, Serialize};

use crate::density::LogDensity;
use crate::error::{PoolError, Result};

/// Standard deviations below this are treated as 1 when standardizing.
pub const STD_FLOOR: f64 = 1e-12;

/// A point in the pooling space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct PoolingPoint(Vec<f64>);

impl PoolingPoint {
    pub fn new(coordinates: Vec<f64>) -> Result<Self> {
        if coordinates.iter().any(|c| c.is_nan()) {
            return Err(PoolError::NotANumber("pooling point"));
        }
        if coordinates.iter().any(|c| c.is_infinite()) {
            return Err(PoolError::domain("pooling point coordinates must be finite"));
        }
        Ok(Self(coordinates))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl TryFrom<Vec<f64>> for PoolingPoint {
    type Error = PoolError;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        PoolingPoint::new(v)
    }
}

impl From<PoolingPoint> for Vec<f64> {
    fn from(p: PoolingPoint) -> Vec<f64> {
        p.0
    }
}

/// One scored forecast event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    time_index: u64,
    point: PoolingPoint,
    realized_y: f64,
    expert_log_scores: Vec<LogDensity>,
}

impl PredictionRecord {
    pub fn new(
        time_index: u64,
        point: PoolingPoint,
        realized_y: f64,
        expert_log_scores: Vec<LogDensity>,
    ) -> Result<Self> {
        if realized_y.is_nan() {
            return Err(PoolError::NotANumber("realized outcome"));
        }
        if expert_log_scores.is_empty() {
            return Err(PoolError::Empty("expert log scores"));
        }
        Ok(Self {
            time_index,
            point,
            realized_y,
            expert_log_scores,
        })
    }

    pub fn time_index(&self) -> u64 {
        self.time_index
    }

    pub fn point(&self) -> &PoolingPoint {
        &self.point
    }

    pub fn realized_y(&self) -> f64 {
        self.realized_y
    }

    pub fn expert_log_scores(&self) -> &[LogDensity] {
        &self.expert_log_scores
    }
}

/// Per-coordinate mean and (population) standard deviation of the history.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Indices of the records inside a caliper, in time order.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighborhood {
    indices: Vec<usize>,
    rho: f64,
}

impl Neighborhood {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn count(&self) -> usize {
        self.indices.len()
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Append-only store of scored predictions, with running standardization
/// statistics (Welford).
#[derive(Debug, Clone, Default)]
pub struct History {
    records: Vec<PredictionRecord>,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[PredictionRecord] {
        &self.records
    }

    pub fn dim(&self) -> Option<usize> {
        self.records.first().map(|r| r.point.dim())
    }

    pub fn n_experts(&self) -> Option<usize> {
        self.records.first().map(|r| r.expert_log_scores.len())
    }

    pub fn push(&mut self, record: PredictionRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.time_index <= last.time_index {
                return Err(PoolError::NonMonotoneTime {
                    previous: last.time_index,
                    found: record.time_index,
                });
            }
            if record.point.dim() != last.point.dim() {
                return Err(PoolError::Dimension {
                    context: "pooling point",
                    expected: last.point.dim(),
                    found: record.point.dim(),
                });
            }
            if record.expert_log_scores.len() != last.expert_log_scores.len() {
                return Err(PoolError::Dimension {
                    context: "expert log scores",
                    expected: last.expert_log_scores.len(),
                    found: record.expert_log_scores.len(),
                });
            }
        } else {
            self.mean = vec![0.0; record.point.dim()];
            self.m2 = vec![0.0; record.point.dim()];
        }
        let n = (self.records.len() + 1) as f64;
        for ((mean, m2), &x) in self.mean.iter_mut().zip(&mut self.m2).zip(record.point.coords()) {
            let delta = x - *mean;
            *mean += delta / n;
            *m2 += delta * (x - *mean);
        }
        self.records.push(record);
        Ok(())
    }

    /// Functional form of [`History::push`].
    pub fn append(mut self, record: PredictionRecord) -> Result<Self> {
        self.push(record)?;
        Ok(self)
    }

    /// The history as it stood before the first record with
    /// `time_index >= time`.
    pub fn before(&self, time: u64) -> History {
        let cut = self.records.partition_point(|r| r.time_index < time);
        let mut out = History::new();
        for r in &self.records[..cut] {
            out.push(r.clone()).expect("prefix of a valid history");
        }
        out
    }

    pub fn standardization(&self) -> Option<Standardization> {
        if self.records.is_empty() {
            return None;
        }
        let n = self.records.len() as f64;
        Some(Standardization {
            mean: self.mean.clone(),
            std: self.m2.iter().map(|m2| (m2 / n).max(0.0).sqrt()).collect(),
        })
    }

    fn effective_std(&self) -> Vec<f64> {
        let n = self.records.len() as f64;
        self.m2
            .iter()
            .map(|m2| {
                let s = (m2 / n).max(0.0).sqrt();
                if s < STD_FLOOR {
                    1.0
                } else {
                    s
                }
            })
            .collect()
    }

    fn check_query(&self, z: &PoolingPoint) -> Result<()> {
        match self.dim() {
            Some(d) if d != z.dim() => Err(PoolError::Dimension {
                context: "query point",
                expected: d,
                found: z.dim(),
            }),
            _ => Ok(()),
        }
    }

    /// `(z_j - mean_j) / std_j` with the current statistics.
    pub fn standardize(&self, z: &PoolingPoint) -> Result<PoolingPoint> {
        if self.records.is_empty() {
            return Err(PoolError::Empty("history"));
        }
        self.check_query(z)?;
        let std = self.effective_std();
        PoolingPoint::new(
            z.coords()
                .iter()
                .zip(&self.mean)
                .zip(&std)
                .map(|((x, m), s)| (x - m) / s)
                .collect(),
        )
    }

    /// Standardized Euclidean distance from `z` to every record, in order.
    pub fn distances(&self, z: &PoolingPoint) -> Result<Vec<f64>> {
        self.check_query(z)?;
        if self.records.is_empty() {
            return Ok(Vec::new());
        }
        let std = self.effective_std();
        Ok(self
            .records
            .iter()
            .map(|r| {
                r.point
                    .coords()
                    .iter()
                    .zip(z.coords())
                    .zip(&std)
                    .map(|((a, b), s)| {
                        let d = (a - b) / s;
                        d * d
                    })
                    .sum::<f64>()
                    .sqrt()
            })
            .collect())
    }

    /// Records within standardized distance `rho` of `z`, boundary inclusive.
    pub fn caliper_neighbors(&self, z: &PoolingPoint, rho: f64) -> Result<Neighborhood> {
        check_rho(rho)?;
        let distances = self.distances(z)?;
        Ok(neighbors_within(&distances, rho))
    }
}

pub(crate) fn check_rho(rho: f64) -> Result<()> {
    if rho > 0.0 {
        Ok(())
    } else {
        Err(PoolError::domain(format!("caliper width {rho} must be positive")))
    }
}

pub(crate) fn neighbors_within(distances: &[f64], rho: f64) -> Neighborhood {
    Neighborhood {
        indices: distances
            .iter()
            .enumerate()
            .filter(|(_, &d)| d <= rho)
            .map(|(i, _)| i)
            .collect(),
        rho,
    }
}
