//! Acceptance suite. Prints one `PASS` or `FAIL` line per criterion and exits
//! non-zero if any criterion fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use roagp::assessment::{
    assessment_step, prepare_system, run_assessment_streaming, AssessmentConfig, ResumePoint,
    RoaEstimate,
};
use roagp::export::read_snapshot;
use roagp::gp::{batch_posterior, shift_diagonal, KernelSpec, WindowState};
use roagp::model::ModelSpec;
use roagp::normal::beta_delta;
use roagp::systems::{bistable_basin_contains, decay};
use roagp::trajectory::{estimate_lyapunov, integrate, GammaFunction};
use roagp::MicrogridConfig;
use statrs::function::erf::erfc;
use tempfile::TempDir;

struct Verdict {
    ok: bool,
    detail: String,
}

type Criterion = fn() -> Verdict;

fn verdict(_name: &str, ok: bool, detail: String) -> Verdict {
    Verdict { ok, detail }
}

fn config(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../core/configs")
        .join(name)
}

fn load(model: &str, assess: &str) -> (ModelSpec, AssessmentConfig) {
    let spec = ModelSpec::from_json(&fs::read_to_string(config(model)).unwrap()).unwrap();
    let cfg = AssessmentConfig::from_json(&fs::read_to_string(config(assess)).unwrap()).unwrap();
    (spec, cfg)
}

fn oracle_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

fn bisect_quantile(p: f64) -> f64 {
    let (mut lo, mut hi) = (-40.0, 40.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if oracle_cdf(mid) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn converse_lyapunov_oracle() -> Verdict {
    let started = Instant::now();
    let sys = decay();
    let gamma = GammaFunction::power(2.0).unwrap();
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for x in [0.5, 1.0, 2.0] {
        let traj = integrate(&sys, &DVector::from_element(1, x), 0.01, 10.0, 1e-3).unwrap();
        let v = estimate_lyapunov(&traj, &gamma).unwrap().v_hat;
        let exact = x * x / 2.0;
        let rel = (v - exact).abs() / exact;
        worst = worst.max(rel);
        parts.push(format!("x={x}: {v:.6} vs {exact}"));
    }
    let elapsed = started.elapsed().as_secs_f64();
    verdict(
        "converse_lyapunov_oracle",
        worst <= 0.01 && elapsed < 1.0,
        format!(
            "max relative error {worst:.4e} (tol 1e-2), {elapsed:.3} s (budget 1 s); {}",
            parts.join(", ")
        ),
    )
}

fn batch_online_equivalence() -> Verdict {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let kernel = KernelSpec::default();
    let mut state = WindowState::initial(20, 2, kernel).unwrap();
    let mut pts = Vec::new();
    let mut obs = Vec::new();
    for _ in 0..20 {
        let x = vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let y = 0.5 * (x[0] * x[0] + x[1] * x[1]) + rng.random_range(-0.01..0.01);
        state = state.push(&x, y).unwrap();
        pts.push(x);
        obs.push(y);
    }
    let (mut dmu, mut dsig) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let q = [rng.random_range(-2.5..2.5), rng.random_range(-2.5..2.5)];
        let online = state.predict(&q).unwrap();
        let batch = batch_posterior(&kernel, &pts, &obs, &q).unwrap();
        dmu = dmu.max((online.mu - batch.mu).abs());
        dsig = dsig.max((online.sigma - batch.sigma).abs());
    }
    let elapsed = started.elapsed().as_secs_f64();
    verdict(
        "batch_online_equivalence",
        dmu <= 1e-6 && dsig <= 1e-6 && elapsed < 5.0,
        format!(
            "max |dmu| {dmu:.3e}, max |dsigma| {dsig:.3e} (tol 1e-6), {elapsed:.3} s (budget 5 s)"
        ),
    )
}

fn operator_algebra() -> Verdict {
    let d = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
    let example = shift_diagonal(&d) == DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 0.0]);

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 6;
    let mut random = || DMatrix::from_fn(h, h, |_, _| rng.random_range(-5.0..5.0));
    let (a, b) = (random(), random());
    let lin = (shift_diagonal(&(&a * 2.5 - &b * 0.75))
        - (shift_diagonal(&a) * 2.5 - shift_diagonal(&b) * 0.75))
        .amax();
    let mut m = a.clone();
    let mut powers_nonzero = true;
    for _ in 1..h {
        m = shift_diagonal(&m);
        powers_nonzero &= m.amax() > 0.0;
    }
    let nilpotent = powers_nonzero && shift_diagonal(&m) == DMatrix::zeros(h, h);

    let kernel = KernelSpec::default();
    let mut s = WindowState::initial(20, 3, kernel).unwrap();
    for _ in 0..200 {
        let x: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        s = s.push(&x, rng.random_range(0.0..4.0)).unwrap();
    }
    let p = s.points();
    let direct = DMatrix::from_fn(p.len(), p.len(), |i, j| kernel.eval(&p[i], &p[j]));
    let k_err = (s.kernel_matrix() - direct).amax();

    verdict(
        "operator_algebra",
        example && lin <= 1e-12 && nilpotent && k_err <= 1e-12,
        format!(
            "[[1,2],[3,4]] -> [[4,0],[0,0]]: {example}; linearity residual {lin:.1e}; \
             nilpotent of index {h}: {nilpotent}; K drift after 200 pushes {k_err:.1e} (tol 1e-12)"
        ),
    )
}

fn beta_delta_quantiles() -> Verdict {
    let mut worst = 0.0f64;
    for d in [0.1, 0.5, 0.9, 0.99] {
        let b = beta_delta(d).unwrap();
        worst = worst.max((oracle_cdf(b) - 0.5 * (1.0 + d)).abs());
    }
    let b90 = beta_delta(0.9).unwrap();
    let bisected = bisect_quantile(0.95);
    verdict(
        "beta_delta_quantiles",
        worst <= 1e-9 && (b90 - bisected).abs() <= 1e-9 && (b90 - 1.6449).abs() < 5e-5,
        format!("max |Phi(beta) - (1+delta)/2| {worst:.2e} (tol 1e-9); beta_0.9 = {b90:.10} vs bisection {bisected:.10}"),
    )
}

fn bistable_run() -> (Vec<RoaEstimate>, AssessmentConfig, f64) {
    let (spec, cfg) = load("bistable.json", "assess_bistable.json");
    assert_eq!(cfg.max_steps, 50);
    assert_eq!(cfg.delta, 0.9);
    let started = Instant::now();
    let mut estimates = Vec::new();
    run_assessment_streaming(&spec.build().unwrap(), &cfg, None, |e, _| {
        estimates.push(e.clone());
        Ok(())
    })
    .unwrap();
    (estimates, cfg, started.elapsed().as_secs_f64())
}

fn roa_soundness_on_bistable_basin() -> Verdict {
    let (estimates, _, elapsed) = bistable_run();
    let last = estimates.last().unwrap();
    let false_members = estimates
        .iter()
        .flat_map(|e| e.members())
        .filter(|g| !bistable_basin_contains(g.coords[0]))
        .count();
    let members: Vec<f64> = last.members().map(|g| g.coords[0]).collect();
    verdict(
        "roa_soundness_on_bistable_basin",
        last.iteration == 50 && false_members == 0 && elapsed < 30.0,
        format!(
            "{} iterations, {false_members} false members over all estimates, final estimate {} points in [{:.2}, {:.2}] (basin x > -1), {elapsed:.2} s (budget 30 s)",
            last.iteration,
            members.len(),
            members.first().copied().unwrap_or(f64::NAN),
            members.last().copied().unwrap_or(f64::NAN)
        ),
    )
}

fn nesting_violations(estimates: &[RoaEstimate]) -> usize {
    let betas: Vec<f64> = [0.99, 0.9, 0.5]
        .iter()
        .map(|d| beta_delta(*d).unwrap())
        .collect();
    let mut bad = 0;
    for e in estimates {
        for g in &e.grid {
            let m: Vec<bool> = betas
                .iter()
                .map(|b| g.mu + b * g.sigma <= e.v_hat_max)
                .collect();
            if (m[0] && !m[1]) || (m[1] && !m[2]) {
                bad += 1;
            }
        }
    }
    bad
}

fn confidence_nesting() -> Verdict {
    let (bistable, _, _) = bistable_run();
    let (spec, mut cfg) = load("ieee9.json", "assess_ieee9.json");
    cfg.max_steps = 15;
    let mut ninebus = Vec::new();
    run_assessment_streaming(&spec.build().unwrap(), &cfg, None, |e, _| {
        ninebus.push(e.clone());
        Ok(())
    })
    .unwrap();
    let checked = bistable.len() + ninebus.len();
    let bad = nesting_violations(&bistable) + nesting_violations(&ninebus);
    verdict(
        "confidence_nesting",
        bad == 0,
        format!(
            "{checked} estimates (bistable and 9-bus), {bad} grid points violate 0.99 ⊆ 0.9 ⊆ 0.5"
        ),
    )
}

fn microgrid_branch_disturbance() -> Verdict {
    let started = Instant::now();
    let spec = ModelSpec::Microgrid(MicrogridConfig::ieee9());
    let d = spec.disturbance().cloned().expect("bundled disturbance");
    let (t_n, xi) = (20.0, 1e-3);
    let sim = spec.simulate(Some(&d), 0.01, t_n, xi).unwrap();
    let traj = &sim.trajectory;
    let mut pre = 0.0f64;
    let mut peak = 0.0f64;
    for (t, x) in traj.times().zip(&traj.samples) {
        if t < d.time {
            pre = pre.max(x.amax());
        }
        peak = peak.max(x.amax());
    }
    let final_dev = traj.samples.last().unwrap().amax();
    let elapsed = started.elapsed().as_secs_f64();
    verdict(
        "microgrid_branch_disturbance",
        d.branch == 2
            && d.time == 1.0
            && pre < 1e-6
            && final_dev < xi
            && traj.converged
            && peak > 1e-3
            && elapsed < 60.0,
        format!(
            "branch {} out at t = {} for {} s: pre-event deviation {pre:.1e} (tol 1e-6), peak {peak:.3e}, \
             max state deviation at t = {t_n}: {final_dev:.2e} (xi 1e-3), {elapsed:.2} s (budget 60 s)",
            d.branch, d.time, d.clear_after
        ),
    )
}

fn throughput_budget() -> Verdict {
    let (spec, cfg) = load("ieee9.json", "assess_ieee9.json");
    assert_eq!((cfg.h, cfg.domain.len()), (100, 101 * 101));
    let system = spec.build().unwrap();
    let mut last = Instant::now();
    let mut per_step = Vec::new();
    let resume = run_assessment_streaming(&system, &cfg, None, |e, _| {
        if e.iteration > 0 {
            per_step.push(last.elapsed().as_secs_f64());
        }
        last = Instant::now();
        Ok(())
    })
    .unwrap();
    let shifted = prepare_system(&system).unwrap();
    let started = Instant::now();
    assessment_step(&shifted, &resume.state, &cfg, &resume.excluded).unwrap();
    let extra = started.elapsed().as_secs_f64();
    let worst = per_step.iter().copied().fold(extra, f64::max);
    let mean = per_step.iter().sum::<f64>() / per_step.len() as f64;
    verdict(
        "throughput_budget",
        worst <= 10.0,
        format!(
            "h = 100, 101x101 grid, 9-bus: {} steps, mean {mean:.3} s, worst {worst:.3} s, step after the run {extra:.3} s (budget 10 s)",
            per_step.len()
        ),
    )
}

fn assess_cli(out: &Path, extra: &[&str]) {
    let o = Command::new(env!("CARGO_BIN_EXE_roagp"))
        .arg("assess")
        .arg("--model")
        .arg(config("ieee9.json"))
        .arg("--assess")
        .arg(config("assess_ieee9.json"))
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn determinism() -> Verdict {
    let tmp = TempDir::new().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    assess_cli(&a, &["--steps", "12"]);
    assess_cli(&b, &["--steps", "12"]);
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    let identical = names
        .iter()
        .all(|n| fs::read(a.join(n)).unwrap() == fs::read(b.join(n)).unwrap());

    // Resume after 6 steps and compare the next choice with the uninterrupted run.
    let head = tmp.path().join("head");
    assess_cli(&head, &["--steps", "6"]);
    let snap = read_snapshot(&fs::read_to_string(head.join("snapshot.json")).unwrap()).unwrap();
    let resumed = ResumePoint::from_snapshot(snap).unwrap();
    let (spec, mut cfg) = load("ieee9.json", "assess_ieee9.json");
    cfg.max_steps = 1;
    let system = spec.build().unwrap();
    let mut next = Vec::new();
    run_assessment_streaming(&system, &cfg, Some(resumed), |_, attempts| {
        next.extend(
            attempts
                .iter()
                .map(|r| (r.iteration, r.grid_index, r.point.clone(), r.v_hat)),
        );
        Ok(())
    })
    .unwrap();
    cfg.max_steps = 7;
    let mut full = Vec::new();
    run_assessment_streaming(&system, &cfg, None, |e, attempts| {
        if e.iteration == 7 {
            full.extend(
                attempts
                    .iter()
                    .map(|r| (r.iteration, r.grid_index, r.point.clone(), r.v_hat)),
            );
        }
        Ok(())
    })
    .unwrap();
    let same_choice = !next.is_empty()
        && next.len() == full.len()
        && next.iter().zip(&full).all(|(x, y)| {
            x.0 == y.0
                && x.1 == y.1
                && x.2
                    .iter()
                    .zip(&y.2)
                    .all(|(p, q)| p.to_bits() == q.to_bits())
                && x.3.map(f64::to_bits) == y.3.map(f64::to_bits)
        });
    verdict(
        "determinism",
        identical && same_choice,
        format!(
            "{} output files byte-identical across runs: {identical}; resumed iteration 7 matches uninterrupted run bitwise: {same_choice} ({} candidates)",
            names.len(),
            next.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, Criterion); 9] = [
        ("converse_lyapunov_oracle", converse_lyapunov_oracle),
        ("batch_online_equivalence", batch_online_equivalence),
        ("operator_algebra", operator_algebra),
        ("beta_delta_quantiles", beta_delta_quantiles),
        (
            "roa_soundness_on_bistable_basin",
            roa_soundness_on_bistable_basin,
        ),
        ("confidence_nesting", confidence_nesting),
        ("microgrid_branch_disturbance", microgrid_branch_disturbance),
        ("throughput_budget", throughput_budget),
        ("determinism", determinism),
    ];
    let filter = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut failed = 0;
    for (name, run) in criteria {
        if filter.as_deref().is_some_and(|f| !name.contains(f)) {
            continue;
        }
        let v = std::panic::catch_unwind(run).unwrap_or_else(|e| Verdict {
            ok: false,
            detail: format!(
                "panicked: {}",
                e.downcast_ref::<String>()
                    .map(String::as_str)
                    .or_else(|| e.downcast_ref::<&str>().copied())
                    .unwrap_or("?")
            ),
        });
        println!(
            "{} {name}: {}",
            if v.ok { "PASS" } else { "FAIL" },
            v.detail
        );
        failed += usize::from(!v.ok);
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
