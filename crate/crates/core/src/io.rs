//! Score-matrix CSV ingestion and result files.
//!
//! A score file has the header `t, y, z_1, ..., z_d, lp_<name1>, ...,
//! lp_<nameK>` with one row per time step, sorted by strictly increasing `t`.
//! Reals are written with 17 significant digits so a write-read round trip
//! is lossless.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::density::LogDensity;
use crate::error::{PoolError, Result};
use crate::evaluation::{cumulative_scores, EvaluationOutput, Observation};
use crate::experts::ExpertScoreTable;
use crate::space::PoolingPoint;

/// Contents of a score file.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreData {
    pub times: Vec<u64>,
    pub outcomes: Vec<f64>,
    pub points: Vec<PoolingPoint>,
    pub table: ExpertScoreTable,
}

impl ScoreData {
    /// The stream for [`crate::evaluation::rolling_evaluate`]; covariates are
    /// the pooling coordinates.
    pub fn observations(&self) -> Vec<Observation> {
        self.times
            .iter()
            .zip(&self.points)
            .zip(&self.outcomes)
            .map(|((&t, z), &y)| Observation {
                time_index: t,
                point: z.clone(),
                covariates: z.coords().to_vec(),
                y,
            })
            .collect()
    }
}

/// Format a real with 17 significant digits.
pub fn format_real(x: f64) -> String {
    format!("{x:.16e}")
}

struct Layout {
    dim: usize,
    names: Vec<String>,
}

fn parse_header(path: &str, header: &csv::StringRecord) -> Result<Layout> {
    let err = |column: &str, message: String| PoolError::Parse {
        path: path.to_string(),
        row: 1,
        column: column.to_string(),
        message,
    };
    let cols: Vec<&str> = header.iter().collect();
    for (i, want) in ["t", "y"].iter().enumerate() {
        match cols.get(i) {
            Some(c) if c == want => {}
            Some(c) => return Err(err(c, format!("expected column `{want}` at position {}", i + 1))),
            None => return Err(err(want, "missing column".into())),
        }
    }
    let mut dim = 0;
    while let Some(c) = cols.get(2 + dim) {
        if *c != format!("z_{}", dim + 1) {
            break;
        }
        dim += 1;
    }
    if dim == 0 {
        return Err(err("z_1", "missing column".into()));
    }
    let mut names = Vec::new();
    for c in &cols[2 + dim..] {
        match c.strip_prefix("lp_") {
            Some(name) if !name.is_empty() => names.push(name.to_string()),
            _ => return Err(err(c, "expected `z_<j>` or `lp_<name>` column".into())),
        }
    }
    if names.is_empty() {
        return Err(err("lp_<name>", "no expert score columns".into()));
    }
    Ok(Layout { dim, names })
}

/// Parse a score file from any reader; `path` only labels diagnostics.
pub fn read_score_csv<R: Read>(reader: R, path: &str) -> Result<ScoreData> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    let layout = parse_header(path, &header)?;
    let width = 2 + layout.dim + layout.names.len();

    let mut data = ScoreData {
        times: Vec::new(),
        outcomes: Vec::new(),
        points: Vec::new(),
        table: ExpertScoreTable::new(layout.names.clone(), Vec::new())?,
    };
    let mut rows = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let record = record?;
        let row = i + 2;
        let fail = |col: usize, message: String| PoolError::Parse {
            path: path.to_string(),
            row,
            column: header.get(col).unwrap_or("?").to_string(),
            message,
        };
        if record.len() > width {
            return Err(PoolError::Parse {
                path: path.to_string(),
                row,
                column: format!("#{}", width + 1),
                message: format!("{} cells, header has {width}", record.len()),
            });
        }
        let cell = |col: usize| -> Result<&str> {
            match record.get(col) {
                Some(s) if !s.is_empty() => Ok(s),
                _ => Err(fail(col, "missing value".into())),
            }
        };
        let real = |col: usize| -> Result<f64> {
            let s = cell(col)?;
            let v: f64 = s.parse().map_err(|_| fail(col, format!("`{s}` is not a number")))?;
            if v.is_nan() {
                return Err(fail(col, "NaN is not allowed".into()));
            }
            Ok(v)
        };
        let finite = |col: usize| -> Result<f64> {
            let v = real(col)?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(fail(col, "value must be finite".into()))
            }
        };

        let ts = cell(0)?;
        let t: u64 = ts.parse().map_err(|_| fail(0, format!("`{ts}` is not a nonnegative integer")))?;
        if let Some(&prev) = data.times.last() {
            if t <= prev {
                return Err(fail(0, format!("t = {t} does not increase (previous {prev})")));
            }
        }
        let y = finite(1)?;
        let z = (0..layout.dim).map(|j| finite(2 + j)).collect::<Result<Vec<_>>>()?;
        let lp = (0..layout.names.len())
            .map(|k| {
                let col = 2 + layout.dim + k;
                LogDensity::new(real(col)?).map_err(|e| fail(col, e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        data.times.push(t);
        data.outcomes.push(y);
        data.points.push(PoolingPoint::new(z)?);
        rows.push(lp);
    }
    data.table = ExpertScoreTable::new(layout.names, rows)?;
    Ok(data)
}

pub fn load_score_csv(path: impl AsRef<Path>) -> Result<ScoreData> {
    let path = path.as_ref();
    read_score_csv(fs::File::open(path)?, &path.display().to_string())
}

pub fn write_score_csv<W: Write>(data: &ScoreData, out: W) -> Result<()> {
    let dim = data.points.first().map_or(0, |p| p.dim());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["t".to_string(), "y".to_string()];
    header.extend((1..=dim).map(|j| format!("z_{j}")));
    header.extend(data.table.names().iter().map(|n| format!("lp_{n}")));
    w.write_record(&header)?;
    for (i, ((t, y), z)) in data.times.iter().zip(&data.outcomes).zip(&data.points).enumerate() {
        let mut row = vec![t.to_string(), format_real(*y)];
        row.extend(z.coords().iter().map(|c| format_real(*c)));
        row.extend(data.table.row(i)?.iter().map(|l| format_real(l.value())));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_score_csv(data: &ScoreData, path: impl AsRef<Path>) -> Result<()> {
    write_score_csv(data, fs::File::create(path)?)
}

/// Per-step CSV: `time_index`, then for each scheme its chosen `rho`, `tau`,
/// one `w_<expert>` column per expert and the pooled `log_score`, then the
/// experts' own `lp_<expert>` scores.
pub fn write_steps_csv<W: Write>(output: &EvaluationOutput, out: W) -> Result<()> {
    let schemes = output.schemes();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["time_index".to_string()];
    for s in &schemes {
        header.push(format!("{s}_rho"));
        header.push(format!("{s}_tau"));
        header.extend(output.expert_names.iter().map(|n| format!("{s}_w_{n}")));
        header.push(format!("{s}_log_score"));
    }
    header.extend(output.expert_names.iter().map(|n| format!("lp_{n}")));
    w.write_record(&header)?;
    for st in &output.steps {
        let mut row = vec![st.time_index.to_string()];
        for s in &schemes {
            let Some(x) = st.scheme(*s) else {
                return Err(PoolError::Config(format!("step {} lacks scheme {s}", st.time_index)));
            };
            row.push(x.rho.map(format_real).unwrap_or_default());
            row.push(x.tau.map(|t| t.to_string()).unwrap_or_default());
            row.extend(x.weights.as_slice().iter().map(|w| format_real(*w)));
            row.push(format_real(x.log_score));
        }
        row.extend(st.expert_log_scores.iter().map(|l| format_real(l.value())));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SchemeTotal {
    pub scheme: String,
    pub total_log_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Summary {
    pub steps: usize,
    pub first_time_index: Option<u64>,
    pub last_time_index: Option<u64>,
    pub totals: Vec<SchemeTotal>,
}

pub fn summarize(output: &EvaluationOutput) -> Summary {
    Summary {
        steps: output.steps.len(),
        first_time_index: output.steps.first().map(|s| s.time_index),
        last_time_index: output.steps.last().map(|s| s.time_index),
        totals: cumulative_scores(&output.steps)
            .into_iter()
            .map(|(s, c)| SchemeTotal {
                scheme: s.to_string(),
                total_log_score: c.last().copied().unwrap_or(0.0),
            })
            .collect(),
    }
}

/// Everything needed to rerun a stochastic or data-driven run.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest<'a, C: Serialize> {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    pub config: &'a C,
    pub artifacts: Vec<String>,
}

impl<'a, C: Serialize> Manifest<'a, C> {
    pub fn new(seed: u64, config: &'a C, artifacts: Vec<String>) -> Self {
        Self {
            tool: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            seed,
            config,
            artifacts,
        }
    }
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Write `steps.csv`, `summary.json` and `manifest.json` into `dir`.
pub fn emit_results<C: Serialize>(output: &EvaluationOutput, config: &C, seed: u64, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    if output.steps.is_empty() {
        return Err(PoolError::Empty("evaluation results"));
    }
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let steps = dir.join("steps.csv");
    write_steps_csv(output, fs::File::create(&steps)?)?;
    let summary = dir.join("summary.json");
    write_json(&summarize(output), &summary)?;
    let manifest = dir.join("manifest.json");
    let names = vec!["steps.csv".to_string(), "summary.json".to_string()];
    write_json(&Manifest::new(seed, config, names), &manifest)?;
    Ok(vec![steps, summary, manifest])
}

#[cfg(test)]
mod tests {
    use super::*;

    const GOOD: &str = "t,y,z_1,z_2,lp_a,lp_b\n\
                        1,0.5,0.1,0.2,-1.25,-2.5\n\
                        2,-0.5,1.0,-1.0,-0.75,-inf\n\
                        5,2.0,3.0,0.0,-3.0,-0.1\n";

    fn parse(text: &str) -> Result<ScoreData> {
        read_score_csv(text.as_bytes(), "mem.csv")
    }

    fn parse_error(text: &str) -> (usize, String, String) {
        match parse(text) {
            Err(PoolError::Parse { row, column, message, .. }) => (row, column, message),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn well_formed_file() {
        let d = parse(GOOD).unwrap();
        assert_eq!(d.table.n_steps(), 3);
        assert_eq!(d.table.names(), &["a".to_string(), "b".to_string()]);
        assert_eq!(d.times, vec![1, 2, 5]);
        assert_eq!(d.points[1].coords(), &[1.0, -1.0]);
        assert_eq!(d.table.score(1, 1).unwrap(), LogDensity::ZERO_DENSITY);
        let obs = d.observations();
        assert_eq!(obs[2].covariates, vec![3.0, 0.0]);
    }

    #[test]
    fn missing_cell_names_row_and_column() {
        let (row, col, _) = parse_error("t,y,z_1,lp_a,lp_b\n1,0,0,-1,-2\n2,0,0,-1,\n");
        assert_eq!((row, col.as_str()), (3, "lp_b"));
        let (row, col, _) = parse_error("t,y,z_1,lp_a,lp_b\n1,0,0,-1\n");
        assert_eq!((row, col.as_str()), (2, "lp_b"));
    }

    #[test]
    fn nan_and_bad_numbers_rejected() {
        let (row, col, msg) = parse_error("t,y,z_1,lp_a\n1,0,0,NaN\n");
        assert_eq!((row, col.as_str()), (2, "lp_a"));
        assert!(msg.contains("NaN"));
        let (_, col, _) = parse_error("t,y,z_1,lp_a\n1,abc,0,-1\n");
        assert_eq!(col, "y");
        let (_, col, _) = parse_error("t,y,z_1,lp_a\n1,0,inf,-1\n");
        assert_eq!(col, "z_1");
        let (_, col, _) = parse_error("t,y,z_1,lp_a\n1,0,0,inf\n");
        assert_eq!(col, "lp_a");
    }

    #[test]
    fn unsorted_time_rejected() {
        let (row, col, _) = parse_error("t,y,z_1,lp_a\n3,0,0,-1\n2,0,0,-1\n");
        assert_eq!((row, col.as_str()), (3, "t"));
        let (row, _, _) = parse_error("t,y,z_1,lp_a\n3,0,0,-1\n3,0,0,-1\n");
        assert_eq!(row, 3);
    }

    #[test]
    fn bad_headers_rejected() {
        assert_eq!(parse_error("y,t,z_1,lp_a\n").1, "y");
        assert_eq!(parse_error("t,y,lp_a\n").1, "z_1");
        assert_eq!(parse_error("t,y,z_1\n").1, "lp_<name>");
        assert_eq!(parse_error("t,y,z_1,z_3,lp_a\n").1, "z_3");
        assert_eq!(parse_error("t,y,z_1,lp_a,extra\n").1, "extra");
    }

    #[test]
    fn extra_cells_rejected() {
        let (row, _, _) = parse_error("t,y,z_1,lp_a\n1,0,0,-1,7\n");
        assert_eq!(row, 2);
    }

    #[test]
    fn round_trip_is_exact() {
        let d = parse(GOOD).unwrap();
        let mut buf = Vec::new();
        write_score_csv(&d, &mut buf).unwrap();
        assert_eq!(parse(std::str::from_utf8(&buf).unwrap()).unwrap(), d);
    }

    #[test]
    fn seventeen_digits_survive() {
        for x in [0.1, 1.0 / 3.0, -2.0f64.sqrt() * 1e-300, 6.02214076e23, f64::MIN_POSITIVE, -f64::MAX] {
            assert_eq!(format_real(x).parse::<f64>().unwrap(), x);
        }
    }
}
