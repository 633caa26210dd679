//! `localpool` command-line interface.
//!
//! Settings come from built-in defaults, then the `--config` TOML file, then
//! command-line flags, each overriding the previous.

use std::path::{Path, PathBuf};
use std::io::Write as _;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use localpool::config::{Mode, RunConfig};
use localpool::evaluation::{rolling_evaluate, EvaluationOutput, NigPanel, Observation, Scheme};
use localpool::io::{emit_results, format_real, load_score_csv, write_json, Manifest};
use localpool::pools::{assemble_pool, local_opt_weights, optimize_pool_weights, softmax_weights, PoolWeights, ScalingRule};
use localpool::simulation::{
    estimator_error_study, generate_dgp, illustration_experts, polarization_study, pool_comparison_study,
    run_replications, write_tidy_csv,
};
use localpool::{caliper_elpd, PoolingPoint, PredictiveDensity};

#[derive(Parser)]
#[command(name = "localpool", version, about = "Local prediction pools with caliper-estimated weights")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo study of the caliper estimator and the pooling schemes.
    Simulate(SimulateArgs),
    /// Rolling one-step-ahead evaluation on a score file or simulated data.
    Evaluate(EvalArgs),
    /// Rolling evaluation reporting every hyperparameter candidate's total.
    Gridsearch(EvalArgs),
    /// Weights (and optionally the pooled density) at one query point.
    PoolOnce(PoolOnceArgs),
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    replications: Option<usize>,
    /// Caliper widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    rho: Option<Vec<f64>>,
    /// Also run the full-caliper polarization study.
    #[arg(long)]
    polarization: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Score CSV (`t, y, z_1.., lp_<name>..`). Without it, data are simulated
    /// and the built-in regression experts are used.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    warmup: Option<usize>,
    #[arg(long)]
    history: Option<usize>,
    /// Caliper widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    rho: Option<Vec<f64>>,
    /// Softmax scalings, comma separated numbers or `natural`.
    #[arg(long, value_delimiter = ',')]
    tau: Option<Vec<ScalingRule>>,
    /// Schemes, comma separated: local_dm, equal, global_opt, local_opt.
    #[arg(long, value_delimiter = ',')]
    schemes: Option<Vec<Scheme>>,
    /// Length of the simulated stream when no score file is given.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args)]
struct PoolOnceArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// History score CSV.
    #[arg(long)]
    scores: Option<PathBuf>,
    /// Query point, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    z: Option<Vec<f64>>,
    #[arg(long)]
    scheme: Option<Scheme>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    tau: Option<ScalingRule>,
    /// JSON array of the experts' predictive densities at `z`.
    #[arg(long)]
    densities: Option<PathBuf>,
}

fn base_config(path: Option<&Path>, mode: Mode) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(m) = cfg.mode {
        if m != mode {
            bail!("config file is for mode `{m}`, not `{mode}`");
        }
    }
    cfg.mode = Some(mode);
    Ok(cfg)
}

fn apply_common(cfg: &mut RunConfig, c: &Common) {
    if c.seed.is_some() {
        cfg.seed = c.seed;
    }
    if c.out.is_some() {
        cfg.output_dir.clone_from(&c.out);
    }
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let mut cfg = base_config(args.common.config.as_deref(), Mode::Simulate)?;
    apply_common(&mut cfg, &args.common);
    if let Some(r) = args.replications {
        cfg.simulation.replications = r;
    }
    if let Some(rho) = args.rho {
        cfg.simulation.rho_grid = rho;
    }
    let cfg = cfg.finalize()?;
    let sim = &cfg.simulation;
    let out = cfg.output_dir.clone().expect("checked by finalize");
    std::fs::create_dir_all(&out)?;

    let results = run_replications(sim)?;
    write_tidy_csv(&results, sim, std::fs::File::create(out.join("tidy.csv"))?)?;

    let mut points = Vec::new();
    for z in &sim.z_points {
        let z = PoolingPoint::new(z.clone())?;
        let err = estimator_error_study(&results, sim, &z)?;
        let pools = pool_comparison_study(&results, sim, &z)?;
        let errors: Vec<_> = sim
            .rho_grid
            .iter()
            .enumerate()
            .map(|(j, rho)| {
                json!({
                    "rho": rho,
                    "experts": (0..err.errors[j].len()).map(|k| err.summary(j, k)).collect::<Vec<_>>(),
                })
            })
            .collect();
        let equal = (Scheme::Equal, None);
        let global = (Scheme::GlobalOpt, None);
        let schemes: Vec<_> = pools
            .series
            .iter()
            .map(|(s, rho, _)| {
                json!({
                    "scheme": s,
                    "rho": rho,
                    "expected_log_score": pools.summary(*s, *rho),
                    "minus_equal": pools.paired((*s, *rho), equal),
                    "minus_global_opt": pools.paired((*s, *rho), global),
                })
            })
            .collect();
        points.push(json!({ "z": z, "estimator_errors": errors, "pools": schemes }));
    }
    let mut summary = json!({ "replications": results.len(), "points": points });
    let mut artifacts = vec!["tidy.csv".to_string(), "summary.json".to_string()];
    if args.polarization {
        let w = polarization_study(sim)?;
        let share = w.iter().filter(|&&x| x > 0.99).count() as f64 / w.len() as f64;
        summary["polarization"] = json!({ "max_weight": w, "share_above_0_99": share });
    }
    write_json(&summary, &out.join("summary.json"))?;
    artifacts.push("manifest.json".into());
    write_json(&Manifest::new(cfg.seed.expect("checked"), &cfg, artifacts), &out.join("manifest.json"))?;
    eprintln!("wrote {} replications to {}", results.len(), out.display());
    Ok(())
}

fn eval_config(args: &EvalArgs, mode: Mode) -> Result<RunConfig> {
    let mut cfg = base_config(args.common.config.as_deref(), mode)?;
    apply_common(&mut cfg, &args.common);
    if args.scores.is_some() {
        cfg.input.scores.clone_from(&args.scores);
    }
    let e = &mut cfg.evaluation;
    if let Some(v) = args.warmup {
        e.warmup_size = v;
    }
    if let Some(v) = args.history {
        e.history_size = v;
    }
    if let Some(v) = &args.rho {
        e.rho_grid.clone_from(v);
    }
    if let Some(v) = &args.tau {
        e.tau_grid.clone_from(v);
    }
    if let Some(v) = &args.schemes {
        e.schemes.clone_from(v);
    }
    if let Some(n) = args.n {
        cfg.simulation.dgp.n = n;
    }
    Ok(cfg.finalize()?)
}

fn run_evaluation(cfg: &RunConfig) -> Result<EvaluationOutput> {
    let out = match &cfg.input.scores {
        Some(path) => {
            let data = load_scores(path)?;
            let obs = data.observations();
            let mut table = data.table;
            rolling_evaluate(&obs, &mut table, &cfg.evaluation)?
        }
        None => {
            let dgp = &cfg.simulation.dgp;
            let obs: Vec<Observation> = generate_dgp(dgp)?
                .into_iter()
                .enumerate()
                .map(|(t, s)| {
                    Ok(Observation {
                        time_index: t as u64,
                        point: PoolingPoint::new(s.covariates.clone())?,
                        covariates: s.covariates,
                        y: s.y,
                    })
                })
                .collect::<localpool::Result<_>>()?;
            let mut panel = NigPanel {
                names: vec!["expert1".into(), "expert2".into()],
                experts: illustration_experts(cfg.simulation.prior)?,
            };
            rolling_evaluate(&obs, &mut panel, &cfg.evaluation)?
        }
    };
    Ok(out)
}

fn evaluate(args: EvalArgs) -> Result<()> {
    let cfg = eval_config(&args, Mode::Evaluate)?;
    let output = run_evaluation(&cfg)?;
    let dir = cfg.output_dir.clone().expect("checked by finalize");
    let files = emit_results(&output, &cfg, cfg.seed.unwrap_or(cfg.evaluation.seed), &dir)?;
    println!("{}", serde_json::to_string_pretty(&localpool::io::summarize(&output))?);
    eprintln!("wrote {}", files.iter().map(|f| f.display().to_string()).collect::<Vec<_>>().join(", "));
    Ok(())
}

fn gridsearch(args: EvalArgs) -> Result<()> {
    let cfg = eval_config(&args, Mode::Gridsearch)?;
    let output = run_evaluation(&cfg)?;
    let dir = cfg.output_dir.clone().expect("checked by finalize");
    std::fs::create_dir_all(&dir)?;

    // totals over the reported steps only
    let first = output.steps.first().map(|s| s.time_index).unwrap_or(u64::MAX);
    let mut totals = vec![0.0; output.candidates.len()];
    for (t, row) in &output.candidate_scores {
        if *t >= first {
            for (acc, s) in totals.iter_mut().zip(row) {
                *acc += s;
            }
        }
    }
    let mut w = csv_writer(&dir.join("gridsearch.csv"))?;
    writeln!(w, "scheme,rho,tau,total_log_score")?;
    for (c, total) in output.candidates.iter().zip(&totals) {
        writeln!(
            w,
            "{},{},{},{}",
            c.scheme,
            c.rho.map(format_real).unwrap_or_default(),
            c.tau.map(|t| t.to_string()).unwrap_or_default(),
            format_real(*total)
        )?;
    }
    let best: Vec<_> = output
        .schemes()
        .into_iter()
        .map(|s| {
            let (i, total) = output
                .candidates
                .iter()
                .zip(&totals)
                .enumerate()
                .filter(|(_, (c, _))| c.scheme == s)
                .map(|(i, (_, t))| (i, *t))
                .fold((usize::MAX, f64::NEG_INFINITY), |a, b| if b.1 > a.1 || a.0 == usize::MAX { b } else { a });
            json!({ "scheme": s, "rho": output.candidates[i].rho, "tau": output.candidates[i].tau, "total_log_score": total })
        })
        .collect();
    let report = json!({ "steps": output.steps.len(), "best": best });
    write_json(&report, &dir.join("gridsearch.json"))?;
    write_json(
        &Manifest::new(
            cfg.seed.unwrap_or(cfg.evaluation.seed),
            &cfg,
            vec!["gridsearch.csv".into(), "gridsearch.json".into()],
        ),
        &dir.join("manifest.json"),
    )?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn load_scores(path: &Path) -> Result<localpool::io::ScoreData> {
    load_score_csv(path).with_context(|| format!("reading {}", path.display()))
}

fn csv_writer(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    Ok(std::io::BufWriter::new(
        std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?,
    ))
}

fn pool_once(args: PoolOnceArgs) -> Result<()> {
    let mut cfg = base_config(args.config.as_deref(), Mode::PoolOnce)?;
    if args.scores.is_some() {
        cfg.input.scores = args.scores;
    }
    if args.densities.is_some() {
        cfg.input.densities = args.densities;
    }
    let p = &mut cfg.pool_once;
    if let Some(z) = args.z {
        p.z = z;
    }
    if let Some(s) = args.scheme {
        p.scheme = s;
    }
    if let Some(r) = args.rho {
        p.rho = r;
    }
    if let Some(t) = args.tau {
        p.tau = t;
    }
    let cfg = cfg.finalize()?;
    let p = &cfg.pool_once;

    let data = load_scores(cfg.input.scores.as_ref().expect("checked by finalize"))?;
    let k = data.table.n_experts();
    let mut history = localpool::History::new();
    for (obs, row) in data.observations().iter().zip(data.table.rows()) {
        history.push(localpool::PredictionRecord::new(obs.time_index, obs.point.clone(), obs.y, row.clone())?)?;
    }
    let z = PoolingPoint::new(p.z.clone())?;
    let est = caliper_elpd(&history, &z, p.rho)?;
    let weights: PoolWeights = match p.scheme {
        Scheme::LocalDm => softmax_weights(&est, p.tau)?,
        Scheme::Equal => PoolWeights::equal(k)?,
        Scheme::GlobalOpt => optimize_pool_weights(data.table.rows())?,
        Scheme::LocalOpt => local_opt_weights(&history, &z, p.rho)?,
    };
    let mut report = json!({
        "z": z,
        "scheme": p.scheme,
        "rho": p.rho,
        "tau": p.tau,
        "experts": data.table.names(),
        "neighbor_count": est.neighbor_count(),
        "local_elpd": est.estimates(),
        "weights": weights,
    });
    if let Some(path) = &cfg.input.densities {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let densities: Vec<PredictiveDensity> =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        report["pooled_density"] = serde_json::to_value(assemble_pool(&weights, &densities)?)?;
    }
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Gridsearch(a) => gridsearch(a),
        Command::PoolOnce(a) => pool_once(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
