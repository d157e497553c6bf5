use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use condreg::cover::{best_pair, compute_losses, greedy_cover, score_pair, Cover, PairScore};
use condreg::harness::report::{summarize, summary_csv, timings_path};
use condreg::harness::run::{build, load_instance, prepare_instance, round_relaxation, solve, AtStage, Stage, StageError};
use condreg::harness::{
    brute_force_oracle, read_report, run_seeds, sidecar_path, write_dataset_file, write_sidecar, DatasetSource,
    ExperimentConfig, OracleResult,
};
use condreg::model::ProblemParams;
use condreg::pipeline::RegressionModel;
use condreg::sdp::SolveStatus;
use condreg::Error;

#[derive(Parser)]
#[command(name = "condreg", version, about = "Conditional linear regression with k-DNF conditions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run seed; overrides the configured seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Relaxation degree (even, at least 4).
    #[arg(long)]
    degree: Option<usize>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted dataset and its ground-truth sidecar.
    Gen {
        #[command(flatten)]
        common: Common,
    },
    /// Preprocess a dataset and list its terms.
    Terms {
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Solve the relaxation and round it to candidate predictors.
    Solve {
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Cover every candidate predictor and pick the best pair.
    Cover {
        candidates: PathBuf,
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Exhaustive search over term subsets.
    Oracle {
        data: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// End-to-end run for every configured seed.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Aggregate run reports.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

/// Failure carrying the process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

impl From<StageError> for Failure {
    fn from(e: StageError) -> Self {
        Self {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn load_config(common: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seeds = vec![s];
    }
    if let Some(d) = common.degree {
        cfg.set_degree(d)?;
    }
    Ok(cfg)
}

/// Points the config at `data`, picking up its sidecar when present.
fn with_dataset(mut cfg: ExperimentConfig, data: &Path) -> CliResult<ExperimentConfig> {
    if !data.is_file() {
        return Err(Error::Input(format!("{} does not exist", data.display())).into());
    }
    let truth = sidecar_path(data);
    cfg.dataset = DatasetSource::File {
        path: data.to_path_buf(),
        truth: truth.is_file().then_some(truth),
    };
    Ok(cfg)
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(Error::from)?,
        None => std::io::stdout().write_all(text.as_bytes()).map_err(Error::from)?,
    }
    Ok(())
}

fn json<T: Serialize>(v: &T) -> CliResult<String> {
    Ok(serde_json::to_string_pretty(v).map_err(Error::from)? + "\n")
}

fn first_seed(cfg: &ExperimentConfig) -> u64 {
    cfg.seeds[0]
}

fn gen(common: &Common) -> CliResult<()> {
    let cfg = load_config(common)?;
    if !matches!(cfg.dataset, DatasetSource::Generated { .. }) {
        return Err(Error::Input("gen needs a generated dataset in the config".into()).into());
    }
    let out = common
        .out
        .as_deref()
        .ok_or_else(|| Error::Input("gen needs --out for the dataset CSV".into()))?;
    let inst = load_instance(&cfg, first_seed(&cfg))?;
    write_dataset_file(&inst.samples, out)?;
    let truth = inst.truth.expect("generated instances carry a ground truth");
    write_sidecar(&truth, &sidecar_path(out))?;
    Ok(())
}

#[derive(Serialize)]
struct TermRow {
    index: usize,
    term: String,
    size: usize,
    planted: bool,
}

#[derive(Serialize)]
struct TermTable {
    n: usize,
    n_attrs: usize,
    d: usize,
    n_prime: usize,
    m: usize,
    unassigned: usize,
    terms: Vec<TermRow>,
}

fn terms(data: &Path, common: &Common) -> CliResult<()> {
    let cfg = with_dataset(load_config(common)?, data)?;
    let inst = load_instance(&cfg, first_seed(&cfg))?;
    let mut cfg = cfg;
    cfg.calibration_margin = None;
    let prep = prepare_instance(&cfg, &inst, first_seed(&cfg))?;
    let pd = &prep.pd;
    let rows: Vec<TermRow> = pd
        .terms
        .iter()
        .enumerate()
        .map(|(j, t)| TermRow {
            index: j,
            term: t.to_string(),
            size: t.weight(),
            planted: prep.planted_terms.contains(&j),
        })
        .collect();
    let text = match common.format {
        Format::Json => json(&TermTable {
            n: pd.n_original(),
            n_attrs: pd.n,
            d: pd.d,
            n_prime: pd.n_prime(),
            m: pd.m(),
            unassigned: pd.unassigned.len(),
            terms: rows,
        })?,
        Format::Csv => {
            let mut s = String::from("index,term,size,planted\n");
            for r in rows {
                s.push_str(&format!("{},{},{},{}\n", r.index, r.term, r.size, r.planted));
            }
            s
        }
    };
    emit(common.out.as_deref(), &text)
}

#[derive(Serialize, Deserialize)]
struct CandidateRow {
    source: usize,
    probability: f64,
    spectral_gap: Option<f64>,
    /// Row-major projector.
    pi_hat: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct CandidatesFile {
    seed: u64,
    params: ProblemParams,
    status: SolveStatus,
    iterations: usize,
    primal_residual: f64,
    candidates: Vec<CandidateRow>,
    models: Vec<RegressionModel>,
}

fn solve_cmd(data: &Path, common: &Common) -> CliResult<()> {
    let cfg = with_dataset(load_config(common)?, data)?;
    let seed = first_seed(&cfg);
    let inst = load_instance(&cfg, seed).at(Stage::Load)?;
    let prep = prepare_instance(&cfg, &inst, seed).at(Stage::Preprocess)?;
    let cp = build(&cfg, &prep).at(Stage::Build)?;
    let rel = solve(&cfg, &cp, seed).at(Stage::Solve)?;
    let rounding = round_relaxation(&cfg, &cp, &rel, &prep.pd, seed).at(Stage::Round)?;
    let file = CandidatesFile {
        seed,
        params: prep.params.clone(),
        status: rel.status(),
        iterations: rel.solution.iterations,
        primal_residual: rel.solution.primal_residual,
        candidates: rounding
            .list
            .iter()
            .map(|c| CandidateRow {
                source: c.source,
                probability: c.probability,
                spectral_gap: c.spectral_gap,
                pi_hat: c.pi_hat.row_iter().map(|r| r.iter().copied().collect()).collect(),
            })
            .collect(),
        models: rounding.models,
    };
    emit(common.out.as_deref(), &json(&file)?)
}

#[derive(Serialize)]
struct Attempt {
    index: usize,
    v_hat: Vec<f64>,
    cover: Option<Cover>,
    score: Option<PairScore>,
    error: Option<String>,
}

#[derive(Serialize)]
struct PairsFile {
    best: Option<usize>,
    attempts: Vec<Attempt>,
}

fn cover_cmd(candidates: &Path, data: &Path, common: &Common) -> CliResult<()> {
    let text = std::fs::read_to_string(candidates)
        .map_err(|e| Error::Input(format!("{}: {e}", candidates.display())))?;
    let file: CandidatesFile = serde_json::from_str(&text).map_err(Error::from)?;
    let mut cfg = with_dataset(load_config(common)?, data)?;
    cfg.calibration_margin = None;
    cfg.mu_from_truth = false;
    cfg.params = file.params.clone();
    let inst = load_instance(&cfg, file.seed)?;
    let pd = prepare_instance(&cfg, &inst, file.seed)?.pd;
    let attempts: Vec<Attempt> = file
        .models
        .iter()
        .enumerate()
        .map(|(index, m)| {
            let c = compute_losses(m, &pd).and_then(|l| greedy_cover(&l, &pd, &file.params));
            match c {
                Ok(cover) => {
                    let score = score_pair(m, &cover.dnf, &pd);
                    Attempt {
                        index,
                        v_hat: m.v_hat.clone(),
                        error: score.as_ref().err().map(|e| e.to_string()),
                        score: score.ok(),
                        cover: Some(cover),
                    }
                }
                Err(e) => Attempt {
                    index,
                    v_hat: m.v_hat.clone(),
                    cover: None,
                    score: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let best = best_pair(&file.models, &pd, &file.params);
    let out = PairsFile {
        best: best.as_ref().ok().map(|b| b.index),
        attempts,
    };
    emit(common.out.as_deref(), &json(&out)?)?;
    best.map(|_| ()).map_err(Failure::from)
}

fn oracle_cmd(data: &Path, common: &Common) -> CliResult<()> {
    let mut cfg = with_dataset(load_config(common)?, data)?;
    cfg.calibration_margin = None;
    let seed = first_seed(&cfg);
    let inst = load_instance(&cfg, seed)?;
    let prep = prepare_instance(&cfg, &inst, seed)?;
    let r: OracleResult = brute_force_oracle(&prep.pd, &prep.params)?;
    emit(common.out.as_deref(), &json(&r)?)
}

fn write_run(path: &Path, run: &condreg::harness::Run) -> CliResult<()> {
    std::fs::write(path, run.report.to_json()?).map_err(Error::from)?;
    std::fs::write(timings_path(path), json(&run.timings)?).map_err(Error::from)?;
    Ok(())
}

fn run_cmd(common: &Common) -> CliResult<()> {
    let cfg = load_config(common)?;
    let out = common.out.clone().or_else(|| cfg.output.clone());
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get());
    let results = run_seeds(&cfg, workers);
    let mut code = 0u8;
    let mut message = String::new();
    let mut reports = Vec::new();
    let single = results.len() == 1;
    if let (Some(dir), false) = (&out, single) {
        std::fs::create_dir_all(dir).map_err(Error::from)?;
    }
    for (seed, r) in results {
        match r {
            Ok(run) => {
                match (&out, single) {
                    (Some(p), true) => write_run(p, &run)?,
                    (Some(dir), false) => write_run(&dir.join(format!("report_seed{seed}.json")), &run)?,
                    (None, _) => emit(None, &run.report.to_json()?)?,
                }
                if let Some(f) = &run.report.failure {
                    eprintln!("seed {seed}: {} stage: {}", f.stage, f.error);
                    if code == 0 {
                        code = f.exit_code as u8;
                    }
                }
                reports.push(run.report);
            }
            Err(e) => {
                eprintln!("seed {seed}: {e}");
                if code == 0 {
                    code = e.exit_code() as u8;
                    message = e.to_string();
                }
            }
        }
    }
    if let (Some(dir), false) = (&out, single) {
        std::fs::write(dir.join("summary.json"), json(&summarize(&reports))?).map_err(Error::from)?;
        std::fs::write(dir.join("summary.csv"), summary_csv(&reports)).map_err(Error::from)?;
    }
    if code == 0 {
        Ok(())
    } else {
        Err(Failure { code, message })
    }
}

fn report_cmd(paths: &[PathBuf], common: &Common) -> CliResult<()> {
    let reports = paths.iter().map(|p| read_report(p)).collect::<condreg::Result<Vec<_>>>()?;
    let text = match common.format {
        Format::Json => json(&summarize(&reports))?,
        Format::Csv => summary_csv(&reports),
    };
    emit(common.out.as_deref(), &text)
}

fn dispatch(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Gen { common } => gen(common),
        Command::Terms { data, common } => terms(data, common),
        Command::Solve { data, common } => solve_cmd(data, common),
        Command::Cover { candidates, data, common } => cover_cmd(candidates, data, common),
        Command::Oracle { data, common } => oracle_cmd(data, common),
        Command::Run { common } => run_cmd(common),
        Command::Report { reports, common } => report_cmd(reports, common),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            if !f.message.is_empty() {
                eprintln!("error: {}", f.message);
            }
            ExitCode::from(f.code)
        }
    }
}
