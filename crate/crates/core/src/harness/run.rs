//! One seeded end-to-end run: load, preprocess, build, solve, round, cover,
//! score and compare with the oracle.

use std::collections::HashSet;
use std::fmt;
use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::cover::best_pair;
use crate::error::{Error, Result};
use crate::harness::config::{DatasetSource, ExperimentConfig};
use crate::harness::io::{read_dataset_file, read_sidecar, Sidecar};
use crate::harness::oracle::{brute_force_oracle, MAX_ORACLE_TERMS};
use crate::harness::report::{
    CandidateInfo, FailureInfo, InstanceInfo, OracleInfo, PairInfo, Report, SolverInfo, StageTiming, Success,
    Timings, WeightInfo, SCHEMA_VERSION,
};
use crate::linalg::frobenius_error;
use crate::model::{hyperplane_projector, ProblemParams, Sample};
use crate::pipeline::{round, selection_weights, solve_relaxation, Relaxation, Rounding};
use crate::preprocess::{prepare, PreparedDataset};
use crate::program::{build_program, default_q_family, required_constants, CompiledProgram, RequiredConstants};
use crate::synth::{generate, heterogeneous_spec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Load,
    Preprocess,
    Build,
    Solve,
    Round,
    Cover,
    Oracle,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Load => "load",
            Stage::Preprocess => "preprocess",
            Stage::Build => "build",
            Stage::Solve => "solve",
            Stage::Round => "round",
            Stage::Cover => "cover",
            Stage::Oracle => "oracle",
        };
        f.write_str(s)
    }
}

/// A pipeline error tagged with the stage that raised it.
#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub error: Error,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} stage: {}", self.stage, self.error)
    }
}

impl std::error::Error for StageError {}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        self.error.exit_code()
    }
}

pub trait AtStage<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError>;
}

impl<T> AtStage<T> for Result<T> {
    fn at(self, stage: Stage) -> std::result::Result<T, StageError> {
        self.map_err(|error| StageError { stage, error })
    }
}

/// Per-purpose seeds derived from the run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub run: u64,
    pub spec: u64,
    pub data: u64,
    pub q_family: u64,
    pub rounding: u64,
}

impl Seeds {
    pub fn from_run(seed: u64) -> Self {
        Self {
            run: seed,
            spec: seed,
            data: seed.wrapping_add(1),
            q_family: seed,
            rounding: seed,
        }
    }
}

pub struct Instance {
    pub samples: Vec<Sample>,
    pub truth: Option<Sidecar>,
}

pub fn load_instance(cfg: &ExperimentConfig, seed: u64) -> Result<Instance> {
    let seeds = Seeds::from_run(seed);
    match &cfg.dataset {
        DatasetSource::Generated { spec, n_samples } => {
            let planted = heterogeneous_spec(spec, seeds.spec)?;
            let (samples, gt) = generate(&planted, spec.n_attrs, *n_samples, seeds.data)?;
            Ok(Instance {
                samples,
                truth: Some(Sidecar::from_truth(&gt)),
            })
        }
        DatasetSource::File { path, truth } => Ok(Instance {
            samples: read_dataset_file(path)?,
            truth: truth.as_deref().map(read_sidecar).transpose()?,
        }),
    }
}

/// Preprocessed data with the parameters the program is built from.
pub struct Prepared {
    pub pd: PreparedDataset,
    pub params: ProblemParams,
    /// Retained term indices of the planted condition.
    pub planted_terms: Vec<usize>,
    pub calibration: Option<RequiredConstants>,
    pub q_family: Vec<nalgebra::DMatrix<f64>>,
}

pub fn prepare_instance(cfg: &ExperimentConfig, inst: &Instance, seed: u64) -> Result<Prepared> {
    let pd = prepare(&inst.samples, cfg.k, cfg.min_term_size, cfg.centering)?;
    if pd.m() == 0 || pd.n_prime() == 0 {
        return Err(Error::Input("no sample satisfies any term".into()));
    }
    if let Some(t) = &inst.truth {
        if t.v_star.len() != pd.d + 1 {
            return Err(Error::Input(format!(
                "ground truth has {} coefficients, data needs {}",
                t.v_star.len(),
                pd.d + 1
            )));
        }
    }
    let q_family = default_q_family(pd.d, cfg.q_random, Seeds::from_run(seed).q_family);
    let mut params = cfg.params.clone();
    let mut planted_terms = Vec::new();
    let mut calibration = None;
    if let Some(t) = &inst.truth {
        for term in &t.condition()?.terms {
            if let Some(j) = pd.find_term(term) {
                planted_terms.push(j);
            }
        }
        let good: usize = planted_terms.iter().map(|&j| pd.terms[j].weight()).sum();
        if cfg.mu_from_truth {
            if good == 0 {
                return Err(Error::Input("the planted condition covers no retained term".into()));
            }
            params.mu = good as f64 / pd.n_prime() as f64;
        }
        if let Some(margin) = cfg.calibration_margin {
            let pi_star = hyperplane_projector(&v_ext(&t.v_star));
            let req = required_constants(&pd, &planted_terms, &pi_star, &q_family, params.mu * pd.n_prime() as f64)?;
            params = req.apply(&params, margin);
            calibration = Some(req);
        }
    }
    params.validate()?;
    Ok(Prepared {
        pd,
        params,
        planted_terms,
        calibration,
        q_family,
    })
}

fn v_ext(v: &[f64]) -> DVector<f64> {
    DVector::from_iterator(v.len() + 1, v.iter().copied().chain(std::iter::once(-1.0)))
}

pub fn build(cfg: &ExperimentConfig, prep: &Prepared) -> Result<CompiledProgram> {
    build_program(&prep.pd, &prep.params, &prep.q_family, prep.params.ell as u32, &cfg.program)
}

pub fn solve(cfg: &ExperimentConfig, cp: &CompiledProgram, seed: u64) -> Result<Relaxation> {
    let mut opts = cfg.relaxation.clone();
    opts.solver.seed = seed;
    solve_relaxation(cp, &opts)
}

pub fn round_relaxation(cfg: &ExperimentConfig, cp: &CompiledProgram, rel: &Relaxation, pd: &PreparedDataset, seed: u64) -> Result<Rounding> {
    let mut opts = cfg.rounding.clone();
    opts.seed = Seeds::from_run(seed).rounding;
    round(cp, &rel.u, pd, &opts)
}

/// A finished run. Timings live apart from the report so that reports stay
/// byte-identical across reruns.
#[derive(Debug, Clone)]
pub struct Run {
    pub report: Report,
    pub timings: Timings,
}

struct Clock {
    stages: Vec<StageTiming>,
    last: Instant,
}

impl Clock {
    fn new() -> Self {
        Self {
            stages: Vec::new(),
            last: Instant::now(),
        }
    }

    fn lap(&mut self, stage: Stage) {
        let now = Instant::now();
        self.stages.push(StageTiming {
            stage,
            seconds: (now - self.last).as_secs_f64(),
        });
        self.last = now;
    }
}

/// Runs every stage for one seed. Cover failures still yield a report
/// (with `failure` set); any other stage failure is returned as an error.
pub fn run_end_to_end(cfg: &ExperimentConfig, seed: u64) -> std::result::Result<Run, StageError> {
    let mut clock = Clock::new();
    let inst = load_instance(cfg, seed).at(Stage::Load)?;
    clock.lap(Stage::Load);
    let prep = prepare_instance(cfg, &inst, seed).at(Stage::Preprocess)?;
    clock.lap(Stage::Preprocess);
    let pd = &prep.pd;
    let cp = build(cfg, &prep).at(Stage::Build)?;
    clock.lap(Stage::Build);
    let rel = solve(cfg, &cp, seed).at(Stage::Solve)?;
    clock.lap(Stage::Solve);
    let rounding = round_relaxation(cfg, &cp, &rel, pd, seed).at(Stage::Round)?;
    clock.lap(Stage::Round);

    let sigma = inst.truth.as_ref().map_or(prep.params.sigma, |t| t.noise_sigma);
    let pi_star = inst.truth.as_ref().map(|t| hyperplane_projector(&v_ext(&t.v_star)));
    let v_star = inst.truth.as_ref().map(|t| DVector::from_column_slice(&t.v_star));

    let instance = InstanceInfo {
        n: pd.n_original(),
        n_attrs: pd.n,
        d: pd.d,
        m: pd.m(),
        n_prime: pd.n_prime(),
        unassigned: pd.unassigned.len(),
        term_sizes: pd.weights(),
        terms: pd.terms.iter().map(|t| t.to_string()).collect(),
        planted_terms: prep.planted_terms.clone(),
        params: prep.params.clone(),
        calibration: prep.calibration,
        q_family_size: prep.q_family.len(),
    };
    let solver = SolverInfo {
        status: rel.status(),
        iterations: rel.solution.iterations,
        primal_residual: rel.solution.primal_residual,
        dual_residual: rel.solution.dual_residual,
        min_block_eigenvalue: rel.solution.min_block_eigenvalue,
        objective: rel.solution.objective,
        moments: cp.problem.n_vars,
        equalities: cp.problem.equalities.len(),
        inequalities: cp.problem.inequalities.len(),
        max_row_residual: cp.max_residual(&rel.u),
    };

    let sel = selection_weights(&cp, &rel.u, pd);
    let weights = {
        let mu_n = prep.params.mu * pd.n_prime() as f64;
        let inlier = inst.truth.as_ref().map(|t| {
            let inliers: HashSet<usize> = t.inlier_ids.iter().copied().collect();
            let planted: HashSet<usize> = prep.planted_terms.iter().copied().collect();
            (0..pd.n_prime())
                .filter(|&i| planted.contains(&pd.sample_term[i]) && inliers.contains(&pd.provenance[i]))
                .map(|i| sel[i])
                .sum::<f64>()
        });
        WeightInfo {
            total: sel.iter().sum(),
            inlier,
            mu_sq_n: prep.params.mu * mu_n,
        }
    };

    let frob: Vec<f64> = match &pi_star {
        Some(p) => rounding
            .list
            .iter()
            .map(|c| frobenius_error(&c.pi_hat, p))
            .collect::<Result<_>>()
            .at(Stage::Round)?,
        None => Vec::new(),
    };
    let best_frob = frob
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1).then(a.0.cmp(&b.0)))
        .map(|(i, &f)| (i, f));
    let candidates = CandidateInfo {
        extracted: rounding.extraction.candidates.len(),
        omitted: rounding.extraction.omitted.len(),
        weighted_average: rounding.extraction.weighted_average,
        list_size: rounding.multiset.len(),
        list: rounding.list.len(),
        models: rounding.models.len(),
        best_frobenius: best_frob.map(|b| b.1),
        best_frobenius_index: best_frob.map(|b| b.0),
    };

    let mut failure = None;
    let pair = match best_pair(&rounding.models, pd, &prep.params) {
        Ok(bp) => Some(PairInfo {
            index: bp.index,
            source: bp.model.source,
            v_hat: bp.model.v_hat.clone(),
            v_relative_error: v_star
                .as_ref()
                .map(|v| (DVector::from_column_slice(&bp.model.v_hat) - v).norm() / v.norm()),
            condition: bp.cover.dnf.to_string(),
            cover_terms: bp.cover.terms.clone(),
            cover_covered: bp.cover.covered,
            cover_loss: bp.cover.loss,
            coverage: bp.score.coverage,
            covered: bp.score.covered,
            conditional_mean_loss: bp.score.conditional_mean_loss,
            total_loss: bp.score.total_loss,
        }),
        Err(e) => {
            let stage = if rounding.models.is_empty() { Stage::Round } else { Stage::Cover };
            failure = Some(FailureInfo {
                stage,
                exit_code: e.exit_code(),
                error: e.to_string(),
            });
            None
        }
    };
    clock.lap(Stage::Cover);

    let oracle = if cfg.oracle && pd.m() <= MAX_ORACLE_TERMS {
        let r = brute_force_oracle(pd, &prep.params);
        let info = match r {
            Ok(o) => OracleInfo {
                condition: Some(o.dnf.to_string()),
                terms: o.terms.clone(),
                v_hat: o.model.v_hat.clone(),
                coverage: Some(o.score.coverage),
                conditional_mean_loss: o.score.conditional_mean_loss,
                subsets_checked: o.subsets_checked,
                loss_gap: match (&pair, o.score.conditional_mean_loss) {
                    (Some(p), Some(ol)) => p.conditional_mean_loss.map(|pl| pl - ol),
                    _ => None,
                },
                error: None,
            },
            Err(e) => OracleInfo {
                error: Some(e.to_string()),
                ..Default::default()
            },
        };
        clock.lap(Stage::Oracle);
        Some(info)
    } else {
        None
    };

    let t = &cfg.targets;
    let success = {
        let frobenius = candidates.best_frobenius.map(|f| f <= t.frobenius);
        let predictor = pair
            .as_ref()
            .and_then(|p| p.v_relative_error)
            .map(|e| e <= t.predictor_relative)
            .or(pair.is_none().then_some(false));
        let loss = pair
            .as_ref()
            .map(|p| p.conditional_mean_loss.is_some_and(|l| l <= t.loss_sigma_sq * sigma * sigma))
            .unwrap_or(false);
        Success {
            frobenius,
            predictor,
            loss,
            all: frobenius.unwrap_or(true) && predictor.unwrap_or(true) && loss,
        }
    };

    let report = Report {
        schema_version: SCHEMA_VERSION,
        seed,
        seeds: Seeds::from_run(seed),
        config: cfg.clone(),
        instance,
        solver,
        weights,
        candidates,
        pair,
        oracle,
        success,
        failure,
    };
    let total = clock.stages.iter().map(|s| s.seconds).sum();
    Ok(Run {
        report,
        timings: Timings {
            seed,
            stages: clock.stages,
            total_seconds: total,
        },
    })
}

/// Runs `cfg.seeds` on up to `workers` threads; results keep seed order.
pub fn run_seeds(cfg: &ExperimentConfig, workers: usize) -> Vec<(u64, std::result::Result<Run, StageError>)> {
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Mutex;

    let seeds = &cfg.seeds;
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<std::result::Result<Run, StageError>>>> =
        Mutex::new((0..seeds.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, seeds.len().max(1)) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= seeds.len() {
                    break;
                }
                let r = run_end_to_end(cfg, seeds[i]);
                slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
            });
        }
    });
    let slots = slots.into_inner().unwrap_or_else(|e| e.into_inner());
    seeds
        .iter()
        .zip(slots)
        .map(|(&s, r)| (s, r.expect("every seed is claimed by a worker")))
        .collect()
}
