//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use roughness_cli::format::read_system_file;
use roughness_cli::pipeline::{Overrides, Settings};
use roughness_cli::sweep::sweep;
use roughness_core::corpus::{gaussian_matrix, random_system, CorpusOptions};
use roughness_core::dichotomy::{extract_system, AggregateDichotomy, ExtractOptions};
use roughness_core::greens::GreensFunction;
use roughness_core::greens::contraction_factor;
use roughness_core::linalg::{assemble_full, spectral_norm, BlockSystem, Mat, Vector};
use roughness_core::lyapunov::lyapunov_certificate;
use roughness_core::nonlinear::{
    certify_decay, solve_nonlinear_halfline, CouplingNonlinearity, NonlinearitySpec, Profile, SplitNonlinearity,
};
use roughness_core::oracle::{envelope_ratio, ode_residual, spectral_dichotomy, stable_flow};
use roughness_core::quadrature::TimeGrid;
use roughness_core::report::ConditionId;
use roughness_core::roughness::{
    check_halfline, estimate_decay, estimate_decay_refined, halfline_grid_size, perturb,
    solve_bounded_halfline, LinearOptions, PerturbedDichotomy,
};

const CORPUS_SEED: u64 = 20_240_601;

struct Instance {
    sys: BlockSystem,
    agg: AggregateDichotomy,
    pd: PerturbedDichotomy,
    perturb_time: Duration,
}

struct Outcome {
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn unit_in_range(rng: &mut ChaCha8Rng, p: &Mat) -> Vector {
    let v = p * gaussian_matrix(rng, p.nrows(), 1).column(0);
    &v / v.norm()
}

/// Systems with couplings at a random fraction of the summed half-line
/// threshold.
fn corpus(count: usize, seed: u64, opts: &CorpusOptions, fractions: (f64, f64)) -> Vec<(BlockSystem, AggregateDichotomy, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let base = random_system(&mut rng, opts).unwrap();
            let agg = extract_system(&base, &ExtractOptions::default()).unwrap();
            let u = rng.random_range(fractions.0..fractions.1);
            (base.scaled(u / agg.weight_sum()), agg, u)
        })
        .collect()
}

fn certified_corpus() -> Vec<Instance> {
    corpus(50, CORPUS_SEED, &CorpusOptions::default(), (0.1, 0.95))
        .into_iter()
        .map(|(sys, agg, _)| {
            let start = Instant::now();
            let pd = perturb(&sys, &agg, &LinearOptions::default()).unwrap();
            Instance { sys, agg, pd, perturb_time: start.elapsed() }
        })
        .collect()
}

fn projector_correctness(corpus: &[Instance]) -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for inst in corpus {
        let oracle = spectral_dichotomy(&assemble_full(&inst.sys), 0.0).unwrap();
        worst = worst.max(spectral_norm(&(&inst.pd.p_tilde_minus - &oracle.stable_projector)));
    }
    let elapsed = start.elapsed() + corpus.iter().map(|i| i.perturb_time).sum::<Duration>();
    Outcome {
        pass: worst <= 1e-5 && elapsed <= Duration::from_secs(120),
        detail: format!("max |P~ - oracle| = {worst:.3e} over {} systems (limit 1e-5, 120 s)", corpus.len()),
        elapsed,
    }
}

fn decay_soundness(corpus: &[Instance]) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(CORPUS_SEED ^ 2);
    let (mut worst, mut pairs, mut runs): (f64, usize, usize) = (0.0, 0, 0);
    for inst in corpus {
        let norms = inst.sys.coupling_norms();
        let mut reports = estimate_decay(&inst.agg, &norms);
        reports.extend(estimate_decay_refined(&inst.agg, &norms));
        let certified: Vec<(f64, f64)> = reports.iter().filter_map(|r| r.decay_pair()).collect();
        if certified.is_empty() || inst.agg.stable_rank() == 0 {
            continue;
        }
        pairs += certified.len();
        let full = assemble_full(&inst.sys);
        let slowest = certified.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let grid = TimeGrid::uniform(0.0, (15.0 / slowest).min(60.0), 600).unwrap();
        for _ in 0..20 {
            let x0 = unit_in_range(&mut rng, &inst.pd.p_tilde_minus);
            let traj = stable_flow(&full, &inst.pd.p_tilde_minus, &x0, &grid).unwrap();
            runs += 1;
            for (m, mu) in &certified {
                worst = worst.max(envelope_ratio(&traj, *m, *mu, 60));
            }
        }
    }
    Outcome {
        pass: worst <= 1.0 + 1e-6 && pairs > 0,
        detail: format!("max |x(t)| / (M e^(-mu (t-s)) |x(s)|) = {worst:.4} over {pairs} pairs, {runs} trajectories (limit 1 + 1e-6)"),
        elapsed: start.elapsed(),
    }
}

fn contraction_fidelity(corpus: &[Instance]) -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(CORPUS_SEED ^ 3);
    let (mut worst, mut ratios): (f64, usize) = (0.0, 0);
    let opts = LinearOptions::default();
    for inst in corpus {
        let (q_sum, _) = contraction_factor(&inst.agg, &inst.sys.coupling_norms());
        let g = GreensFunction::uncoupled(&inst.sys, &inst.agg).unwrap();
        let (t, steps) = halfline_grid_size(&inst.sys, &inst.agg, &opts).unwrap();
        let grid = TimeGrid::uniform(0.0, t, steps).unwrap();
        let c = if inst.agg.stable_rank() > 0 { unit_in_range(&mut rng, &inst.agg.p_minus) } else { Vector::zeros(inst.sys.total_dim()) };
        let sol = solve_bounded_halfline(&inst.sys, &inst.agg, &g, &c, &grid, &opts).unwrap();
        for r in sol.ratios() {
            worst = worst.max(r / q_sum);
            ratios += 1;
        }
    }
    Outcome {
        pass: worst <= 1.0 + 1e-6 && ratios > 0,
        detail: format!("max Picard ratio / q_sum = {worst:.4} over {ratios} ratios (limit 1 + 1e-6)"),
        elapsed: start.elapsed(),
    }
}

fn lyapunov_residuals(corpus: &[Instance]) -> Outcome {
    let start = Instant::now();
    let (mut res, mut excess, mut cross): (f64, f64, f64) = (0.0, f64::NEG_INFINITY, 0.0);
    for inst in corpus {
        let cert = lyapunov_certificate(&inst.sys, &inst.agg).unwrap();
        res = res.max(cert.assembled_residual(&inst.sys));
        for b in &cert.blocks {
            excess = excess.max(spectral_norm(&b.c) - b.bound);
            cross = cross.max(b.cross_check);
        }
    }
    Outcome {
        pass: res <= 1e-8 && excess <= 1e-8 && cross <= 1e-7,
        detail: format!(
            "residual/|H| = {res:.2e} (1e-8), max |C_i| - bound = {excess:.2e} (1e-8), quadrature vs direct = {cross:.2e} (1e-7)"
        ),
        elapsed: start.elapsed(),
    }
}

fn implication_chain() -> Outcome {
    let start = Instant::now();
    let mut systems = corpus(100, CORPUS_SEED ^ 5, &CorpusOptions::default(), (0.1, 3.0));
    systems.extend(corpus(100, CORPUS_SEED ^ 6, &CorpusOptions { skew: 0.0, ..CorpusOptions::default() }, (0.1, 3.0)));
    let (mut form_cases, mut split_cases, mut counter) = (0, 0, Vec::new());
    for (k, (sys, agg, _)) in systems.iter().enumerate() {
        let cert = lyapunov_certificate(sys, agg).unwrap();
        let holds = |id| cert.reports.iter().any(|r| r.part(id).is_some_and(|p| p.satisfied));
        if holds(ConditionId::LyapunovSum) || holds(ConditionId::LyapunovMax) {
            form_cases += 1;
            if !holds(ConditionId::LyapunovExact) {
                counter.push(format!("system {k}: quadratic-form condition without definiteness"));
            }
        }
        let halfline = check_halfline(agg, &sys.coupling_norms());
        if halfline.iter().any(|r| r.id == ConditionId::HalfLineSum && r.satisfied) {
            split_cases += 1;
            match perturb(sys, agg, &LinearOptions::default()) {
                Ok(pd) if pd.splitting_norm < 1.0 => {}
                Ok(pd) => counter.push(format!("system {k}: |Z + Z'| = {}", pd.splitting_norm)),
                Err(e) => counter.push(format!("system {k}: {e}")),
            }
        }
    }
    Outcome {
        pass: counter.is_empty() && form_cases > 0 && split_cases > 0,
        detail: format!(
            "{} systems, {form_cases} with a quadratic-form condition, {split_cases} with the summed half-line condition, {} counterexamples{}",
            systems.len(),
            counter.len(),
            counter.first().map(|c| format!(" (first: {c})")).unwrap_or_default()
        ),
        elapsed: start.elapsed(),
    }
}

fn nonlinear_confinement() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(CORPUS_SEED ^ 7);
    let opts = CorpusOptions { max_dim: 2, ..CorpusOptions::default() };
    let (mut instances, mut worst_norm, mut worst_res, mut failures) = (0, 0.0f64, 0.0f64, Vec::new());
    let mut attempts = 0;
    while instances < 20 && attempts < 200 {
        attempts += 1;
        let base = random_system(&mut rng, &opts).unwrap();
        let agg = extract_system(&base, &ExtractOptions::default()).unwrap();
        let linear = base.scaled(rng.random_range(0.05..0.3) / agg.weight_sum());
        let profile = Profile::ALL[instances % Profile::ALL.len()];
        let rho = rng.random_range(0.2..1.5);
        let gain = rng.random_range(0.02..0.2) / agg.weight_sum();
        let remainder = CouplingNonlinearity::on_couplings(profile, gain, &base).unwrap().into_spec(rho).unwrap();
        let split = SplitNonlinearity::new(linear.clone(), remainder).unwrap();
        let spec: NonlinearitySpec = split.combined();
        let decay = certify_decay(&agg, &spec);
        let Some(radius) = decay.iter().find(|r| r.decay_pair().is_some()).and_then(|r| r.get("initial_radius")) else {
            continue;
        };
        if agg.stable_rank() == 0 {
            continue;
        }
        instances += 1;
        let c = unit_in_range(&mut rng, &agg.p_minus) * (radius * rng.random_range(0.3..1.0));
        let g = GreensFunction::uncoupled(&linear, &agg).unwrap();
        let t = (25.0 / agg.lambda).min(40.0);
        let grid = TimeGrid::uniform(0.0, t, (t / 0.004).ceil() as usize).unwrap();
        match solve_nonlinear_halfline(&agg, &g, &spec, &c, &grid, &LinearOptions::default()) {
            Ok(sol) => {
                let sup = sol.trajectory.norm_sup();
                worst_norm = worst_norm.max(sup / rho);
                let a = linear.diagonal();
                let res = ode_residual(&sol.trajectory, &|x: &Vector| &a * x + spec.apply(x));
                worst_res = worst_res.max(res);
                if sup > rho || res >= 1e-4 {
                    failures.push(format!("{profile}: sup {sup:.3e} vs rho {rho:.3e}, residual {res:.2e}"));
                }
            }
            Err(e) => failures.push(format!("{profile}: {e}")),
        }
    }
    Outcome {
        pass: instances == 20 && failures.is_empty(),
        detail: format!(
            "{instances} certified instances, max sup|x|/rho = {worst_norm:.4}, max ODE residual = {worst_res:.2e} (limit 1e-4){}",
            failures.first().map(|f| format!("; first failure: {f}")).unwrap_or_default()
        ),
        elapsed: start.elapsed(),
    }
}

fn running_file() -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "systems", "running.json"].iter().collect()
}

fn running_example() -> Outcome {
    let start = Instant::now();
    let file = read_system_file(&running_file()).unwrap();
    let settings = Settings::resolve(&file, &Overrides::default(), None).unwrap();
    let sys = file.system().unwrap();
    let agg = extract_system(&sys, &settings.extract_options()).unwrap();
    let norms = sys.coupling_norms();
    let threshold = check_halfline(&agg, &norms).into_iter().find(|r| r.id == ConditionId::HalfLineSum).unwrap().threshold;
    let mu_max = estimate_decay(&agg, &norms).into_iter().find(|r| r.id == ConditionId::DecaySum).and_then(|r| r.get("mu_max")).unwrap_or(f64::NAN);
    let c = lyapunov_certificate(&sys, &agg).unwrap().c;
    let c_err = spectral_norm(&(c - Mat::from_row_slice(2, 2, &[0.5, 0.0, 0.0, -0.5])));
    let rate = spectral_dichotomy(&assemble_full(&sys), 0.0).unwrap().stable_rate;
    let errs = [(threshold - 0.5).abs(), (mu_max - 0.6f64.sqrt()).abs(), c_err, (rate - 1.01f64.sqrt()).abs()];
    Outcome {
        pass: errs.iter().all(|e| *e <= 1e-9),
        detail: format!(
            "threshold {threshold:.12} (0.5), mu_max {mu_max:.12} (sqrt 0.6), |C - diag(1/2, -1/2)| = {c_err:.1e}, oracle rate {rate:.12} (sqrt 1.01)"
        ),
        elapsed: start.elapsed(),
    }
}

fn sweep_conservatism() -> Outcome {
    let start = Instant::now();
    let file = read_system_file(&running_file()).unwrap();
    let settings = Settings::resolve(&file, &Overrides::default(), None).unwrap();
    let s = sweep(&file, &settings, 0.0, 5.0, 50).unwrap();
    let first = s.first_failure(ConditionId::HalfLineSum);
    let beyond = first.is_some_and(|f| s.rows.iter().any(|r| r.lambda > f && r.oracle_hyperbolic && r.rank_match));
    let until = s.hyperbolic_until();
    Outcome {
        pass: first.is_some_and(|f| (f - 2.5).abs() <= 0.1 + 1e-12) && beyond,
        detail: format!(
            "halfline_sum first fails at {} (2.5 +- 0.1), oracle hyperbolic with matching rank up to {}",
            first.map_or("never".into(), |f| format!("{f:.2}")),
            until.map_or("none".into(), |u| format!("{u:.2}"))
        ),
        elapsed: start.elapsed(),
    }
}

fn main() {
    let start = Instant::now();
    let corpus = certified_corpus();
    let results: Vec<(usize, Outcome)> = vec![
        (1, projector_correctness(&corpus)),
        (2, decay_soundness(&corpus)),
        (3, contraction_fidelity(&corpus)),
        (4, lyapunov_residuals(&corpus)),
        (5, implication_chain()),
        (6, nonlinear_confinement()),
        (7, running_example()),
        (8, sweep_conservatism()),
    ];
    let mut failed = 0;
    for (k, o) in &results {
        println!("criterion {k}: {} {} [{:.1} s]", if o.pass { "PASS" } else { "FAIL" }, o.detail, o.elapsed.as_secs_f64());
        failed += usize::from(!o.pass);
    }
    println!("acceptance: {}/{} criteria pass in {:.1} s", results.len() - failed, results.len(), start.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
