//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any criterion fails.
//!
//! `ACCEPTANCE_ONLY=3,5` restricts the run to the listed criteria.

use std::collections::HashSet;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use condreg::cover::{compute_losses, coverage_target, eligibility_bound, greedy_cover};
use condreg::harness::run::{build, load_instance, prepare_instance, run_end_to_end};
use condreg::harness::{brute_force_oracle, DatasetSource, ExperimentConfig, Report};
use condreg::model::{hyperplane_projector, Sample};
use condreg::preprocess::{assign_and_duplicate, enumerate_terms};
use condreg::sdp::certify::certify_point;
use condreg::sdp::{solve, LinearRow, PsdBlock, SdpProblem, SolveStatus, SolverOptions};
use condreg::sos::checks::check_pseudo_inequalities;
use condreg::sos::moments::{moment_matrix, MomentVector, PseudoDistribution};
use condreg::synth::SpecOptions;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn planted_config(sigma: f64, n_samples: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        dataset: DatasetSource::Generated {
            spec: SpecOptions {
                n_attrs: 4,
                d: 2,
                k: 1,
                noise_sigma: sigma,
                spectral_gap: 0.5,
                ..Default::default()
            },
            n_samples,
        },
        k: 1,
        q_random: 8,
        ..Default::default()
    };
    cfg.params.sigma = sigma;
    cfg.params.ell = 4;
    // The promised conditional loss is the loss the run is judged against.
    cfg.params.epsilon_target = cfg.targets.loss_sigma_sq * sigma * sigma;
    cfg
}

const PLANTED_SEEDS: std::ops::RangeInclusive<u64> = 1..=20;

/// Empirical moments of Gaussian, uniform or point-mass samples.
fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst_eig = f64::INFINITY;
    let mut violations = 0usize;
    let mut checks = 0usize;
    for case in 0..1000 {
        let nv = rng.random_range(1..=3usize);
        let ell = if rng.random_bool(0.5) { 4 } else { 6 };
        let vars: Vec<u32> = (0..nv as u32).collect();
        let points: Vec<Vec<f64>> = match case % 3 {
            0 => (0..40)
                .map(|_| (0..nv).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
                .collect(),
            1 => (0..40)
                .map(|_| (0..nv).map(|_| rng.random_range(-1.0..1.0)).collect())
                .collect(),
            _ => {
                let atoms = rng.random_range(1..=3usize);
                let support: Vec<Vec<f64>> = (0..atoms)
                    .map(|_| (0..nv).map(|_| rng.random_range(-1.5..1.5)).collect())
                    .collect();
                (0..12).map(|i| support[i % atoms].clone()).collect()
            }
        };
        let u = MomentVector::empirical(&vars, &points, ell);
        let mm = moment_matrix(&u, ell).expect("complete moments");
        let eig = mm.symmetric_eigenvalues().min();
        worst_eig = worst_eig.min(eig);
        let pd = PseudoDistribution::unchecked(u, eig);
        let report = check_pseudo_inequalities(&pd, 3, case as u64).expect("degree >= 4");
        checks += report.checks;
        violations += report.violations.len();
    }
    let elapsed = start.elapsed();
    outcome(
        worst_eig >= -1e-8 && violations == 0 && elapsed <= Duration::from_secs(60),
        format!(
            "1000 moment vectors, min eigenvalue {worst_eig:.2e}, {violations} violations in {checks} checks, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn two_by_two() -> SdpProblem {
    let mut p = SdpProblem::new(3);
    let mut b = PsdBlock::new("X", 2);
    b.push(0, 0, 0, 1.0);
    b.push(0, 1, 1, 1.0);
    b.push(1, 1, 2, 1.0);
    p.blocks.push(b);
    p
}

fn criterion_2() -> Outcome {
    let start = Instant::now();
    let opts = SolverOptions {
        tol: 1e-9,
        ..Default::default()
    };
    let mut errors = Vec::new();

    let mut p = two_by_two();
    p.equalities.push(LinearRow::new("x11", [(0, 1.0)], 1.0));
    p.equalities.push(LinearRow::new("x22", [(2, 1.0)], 1.0));
    p.linear_objective.push((1, 1.0));
    let s = solve(&p, &opts).expect("valid problem");
    errors.push((s.objective - -1.0).abs());

    let mut p = two_by_two();
    p.equalities.push(LinearRow::new("x12", [(1, 1.0)], 1.0));
    p.equalities.push(LinearRow::new("x22", [(2, 1.0)], 2.0));
    p.linear_objective.push((0, 1.0));
    let s = solve(&p, &opts).expect("valid problem");
    errors.push((s.objective - 0.5).abs());

    // min t^2 - t over the scalar cone: minimum -1/4 at t = 1/2.
    let mut p = SdpProblem::new(1);
    let mut b = PsdBlock::new("t", 1);
    b.push(0, 0, 0, 1.0);
    p.blocks.push(b);
    p.linear_objective.push((0, -1.0));
    p.quadratic_objective.push((0, 1.0));
    let s = solve(&p, &opts).expect("valid problem");
    errors.push((s.objective - -0.25).abs());

    let mut p = two_by_two();
    p.equalities.push(LinearRow::new("x11", [(0, 1.0)], 1.0));
    p.equalities.push(LinearRow::new("x22", [(2, 1.0)], 1.0));
    p.equalities.push(LinearRow::new("x12", [(1, 1.0)], 2.0));
    let infeasible = solve(&p, &SolverOptions::default()).expect("valid problem").status == SolveStatus::Infeasible;

    let worst = errors.iter().copied().fold(0.0, f64::max);
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-6 && infeasible && elapsed <= Duration::from_secs(10),
        format!(
            "max |objective - closed form| {worst:.2e}, infeasible case flagged: {infeasible}, {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let cfg = planted_config(0.0, 400);
    let mut worst = 0.0f64;
    let mut certified = 0;
    let mut max_m = 0;
    for seed in PLANTED_SEEDS {
        let inst = load_instance(&cfg, seed).expect("generator");
        let prep = prepare_instance(&cfg, &inst, seed).expect("preprocess");
        let cp = build(&cfg, &prep).expect("build");
        max_m = max_m.max(prep.pd.m());
        let truth = inst.truth.expect("generated truth");
        let mut v_ext = truth.v_star.clone();
        v_ext.push(-1.0);
        let pi_star = hyperplane_projector(&DVector::from_vec(v_ext));
        let w: Vec<f64> = (0..prep.pd.m())
            .map(|j| if prep.planted_terms.contains(&j) { 1.0 } else { 0.0 })
            .collect();
        let pis = vec![pi_star; prep.pd.m()];
        let u = cp.dirac_moments(&cp.vars.assignment(&w, &truth.v_star, &pis));
        worst = worst.max(cp.max_residual(&u));
        if certify_point(&u, &cp.problem, 1e-8) {
            certified += 1;
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-8 && certified == 20 && max_m <= 8 && elapsed <= Duration::from_secs(60),
        format!(
            "20 noiseless instances (m <= {max_m}), max residual {worst:.2e}, certified {certified}/20, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn planted_runs() -> Vec<(u64, Result<(Report, f64), String>)> {
    let cfg = planted_config(0.02, 400);
    PLANTED_SEEDS
        .map(|seed| {
            let r = run_end_to_end(&cfg, seed)
                .map(|run| (run.report, run.timings.total_seconds))
                .map_err(|e| e.to_string());
            if let Ok((rep, secs)) = &r {
                eprintln!(
                    "  seed {seed}: frob {:?} v_err {:?} loss {:?} inlier weight {:?} / {:.3} ({secs:.1}s)",
                    rep.candidates.best_frobenius,
                    rep.pair.as_ref().and_then(|p| p.v_relative_error),
                    rep.pair.as_ref().and_then(|p| p.conditional_mean_loss),
                    rep.weights.inlier,
                    rep.weights.mu_sq_n
                );
            }
            (seed, r)
        })
        .collect()
}

fn criterion_4(runs: &[(u64, Result<(Report, f64), String>)]) -> Outcome {
    let held = runs
        .iter()
        .filter(|(_, r)| r.as_ref().is_ok_and(|(rep, _)| rep.weights.bound_holds() == Some(true)))
        .count();
    let failed: Vec<u64> = runs.iter().filter(|(_, r)| r.is_err()).map(|(s, _)| *s).collect();
    outcome(
        held >= 18,
        format!("inlier weight >= 0.95 mu^2 N' in {held}/20 seeds (run errors on seeds {failed:?})"),
    )
}

fn criterion_5(runs: &[(u64, Result<(Report, f64), String>)]) -> Outcome {
    let mut ok = 0;
    let mut slowest = 0.0f64;
    let mut errors = Vec::new();
    for (seed, r) in runs {
        match r {
            Ok((rep, secs)) => {
                slowest = slowest.max(*secs);
                if rep.success.frobenius == Some(true) && rep.success.predictor == Some(true) && rep.success.loss {
                    ok += 1;
                }
            }
            Err(e) => errors.push(format!("seed {seed}: {e}")),
        }
    }
    outcome(
        ok >= 16 && slowest <= 300.0,
        format!(
            "recovered in {ok}/20 seeds, slowest seed {slowest:.1}s{}",
            if errors.is_empty() { String::new() } else { format!(", errors: {}", errors.join("; ")) }
        ),
    )
}

fn criterion_6() -> Outcome {
    let cfg = planted_config(0.02, 200);
    let mut certified = 0;
    let mut passed = 0;
    let mut tried = 0;
    let mut worst_ratio = 0.0f64;
    let mut seed = 1000u64;
    while certified < 50 && tried < 200 {
        seed += 1;
        tried += 1;
        let inst = load_instance(&cfg, seed).expect("generator");
        let mut c = cfg.clone();
        c.calibration_margin = None;
        let prep = prepare_instance(&c, &inst, seed).expect("preprocess");
        let (pd, params) = (&prep.pd, &prep.params);
        if pd.m() > 10 {
            continue;
        }
        let Ok(best) = brute_force_oracle(pd, params) else {
            continue;
        };
        let losses = compute_losses(&best.model, pd).expect("shapes agree");
        let bound = eligibility_bound(pd, params);
        let mu_n = params.mu * pd.n_prime() as f64;
        let eligible = best.terms.iter().all(|&j| losses.term_sum[j] <= bound);
        let reach: usize = best.terms.iter().map(|&j| pd.terms[j].weight()).sum();
        if !eligible || (reach as f64) < mu_n {
            continue;
        }
        certified += 1;
        let t = best.terms.len() as f64;
        let oracle_loss: f64 = best.terms.iter().map(|&j| losses.term_sum[j]).sum();
        let allowed = 10.0 * t * mu_n.ln().max(1.0) * (oracle_loss + params.epsilon_target * mu_n);
        if let Ok(cover) = greedy_cover(&losses, pd, params) {
            worst_ratio = worst_ratio.max(cover.loss / allowed);
            if cover.covered as f64 >= coverage_target(pd, params) && cover.loss <= allowed {
                passed += 1;
            }
        }
    }
    outcome(
        certified == 50 && passed == 50,
        format!(
            "greedy cover met coverage and loss bound in {passed}/{certified} certified instances ({tried} drawn), worst loss/bound {worst_ratio:.3}"
        ),
    )
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut bad = Vec::new();
    for case in 0..100 {
        let n = rng.random_range(2..=5usize);
        let k = rng.random_range(1..=n.min(2));
        let count = rng.random_range(5..=60usize);
        let samples: Vec<Sample> = (0..count)
            .map(|_| {
                Sample::new(
                    (0..n).map(|_| rng.random_bool(0.5)).collect(),
                    vec![rng.random_range(-1.0..1.0)],
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        let terms = enumerate_terms(n, k).expect("valid width");
        let pd = assign_and_duplicate(&samples, &terms).expect("consistent shapes");
        let mut seen = HashSet::new();
        let disjoint = pd.terms.iter().all(|t| t.member_ids.iter().all(|&i| seen.insert(i)));
        let complete = seen.len() == pd.n_prime();
        let bounded = pd.n_prime() <= pd.m() * count;
        // A random condition from the family designates the good samples.
        let c: Vec<usize> = (0..pd.m()).filter(|_| rng.random_bool(0.3)).collect();
        let good: Vec<usize> = (0..count)
            .filter(|&i| c.iter().any(|&j| pd.terms[j].evaluate(&samples[i].x).unwrap()))
            .collect();
        let (good_prime, n_prime) = pd.good_counts(&good);
        let ratio = good_prime * pd.m() * count >= good.len() * n_prime;
        if !(disjoint && complete && bounded && ratio) {
            bad.push(case);
        }
    }
    outcome(
        bad.is_empty(),
        format!("100 random datasets, invariant failures in cases {bad:?}"),
    )
}

fn criterion_8() -> Outcome {
    let mut cfg = planted_config(0.02, 200);
    cfg.relaxation.solver.max_iters = 300;
    let first = run_end_to_end(&cfg, 3).map(|r| r.report.to_json());
    let second = run_end_to_end(&cfg, 3).map(|r| r.report.to_json());
    match (first, second) {
        (Ok(Ok(a)), Ok(Ok(b))) => outcome(a == b, format!("two runs of seed 3, {} bytes each, identical: {}", a.len(), a == b)),
        _ => outcome(false, "run failed".into()),
    }
}

fn main() -> ExitCode {
    let only: Option<HashSet<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let wanted = |c: u32| only.as_ref().is_none_or(|o| o.contains(&c));
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |c: u32, name: &'static str, f: &dyn Fn() -> Outcome| {
        if wanted(c) {
            let o = f();
            println!("criterion {c} ({name}): {} - {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
            results.push((c, name, o));
        }
    };
    record(1, "sos machinery", &criterion_1);
    record(2, "sdp closed forms", &criterion_2);
    record(3, "planted feasibility", &criterion_3);
    if wanted(4) || wanted(5) {
        let runs = planted_runs();
        record(4, "weight lower bound", &|| criterion_4(&runs));
        record(5, "end-to-end recovery", &|| criterion_5(&runs));
    }
    record(6, "cover guarantee", &criterion_6);
    record(7, "preprocessing invariants", &criterion_7);
    record(8, "determinism", &criterion_8);

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
