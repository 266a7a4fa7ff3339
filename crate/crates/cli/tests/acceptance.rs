//! Acceptance checks: one PASS/FAIL line per criterion.

use std::time::{Duration, Instant};

use koopman_cli::commands::{bounds, edmd, lift, simulate, SimulateOutcome, SweepRow};
use koopman_cli::config::ExperimentConfig;
use koopman_cli::presets::{ct_multisine, ct_whitenoise, dt_multisine, dt_whitenoise};
use koopman_core::edmd::{build_snapshots, edmd_full, edmd_tikhonov, edmdc_input_fit};
use koopman_core::lifting::LiftedModel;
use koopman_core::quadrature::GaussLegendre;
use koopman_core::sim::{input_matrix, rk4_integrate, simulate_nonlinear};
use koopman_core::systems::{ct_example, dt_example, System};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

type Check = Result<String, String>;
type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit: f64, what: &str) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() <= limit, || {
        format!("{what} took {:.2} s (limit {limit} s)", elapsed.as_secs_f64())
    })
}

fn run_sim(name: &str, cfg: ExperimentConfig) -> Result<SimulateOutcome, String> {
    let exp = cfg.resolve().map_err(|e| format!("{name}: {e}"))?;
    simulate(&exp).map_err(|e| format!("{name}: {e}"))
}

fn exact_errors(out: &SimulateOutcome) -> Vec<(f64, f64)> {
    let r = out.exact.errors.as_ref().expect("exact model simulated");
    r.states.iter().map(|s| (s.l2, s.linf)).collect()
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut detail = Vec::new();
    for (name, cfg) in [("whitenoise", ct_whitenoise()), ("multisine", ct_multisine())] {
        let out = run_sim(name, cfg)?;
        for (i, (l2, linf)) in exact_errors(&out).into_iter().enumerate() {
            ensure(l2 <= 1e-9 && linf <= 1e-11, || {
                format!("{name} eps{}: l2 {l2:e}, linf {linf:e}", i + 1)
            })?;
            detail.push(format!("{name} eps{} l2 {l2:.2e} linf {linf:.2e}", i + 1));
        }
    }
    within(start.elapsed(), 120.0, "both runs")?;
    Ok(format!("{}; {:.1} s", detail.join(", "), start.elapsed().as_secs_f64()))
}

fn criterion_2() -> Check {
    let mut detail = Vec::new();
    for (name, cfg) in [("whitenoise", dt_whitenoise()), ("multisine", dt_multisine())] {
        let start = Instant::now();
        let out = run_sim(name, cfg)?;
        within(start.elapsed(), 1.0, name)?;
        let e = exact_errors(&out);
        ensure(e[0] == (0.0, 0.0), || format!("{name} eps1 = {:?}, expected exactly 0", e[0]))?;
        ensure(e[1].1 <= 1e-13, || format!("{name} eps2 linf {:e}", e[1].1))?;
        detail.push(format!("{name} eps1 0, eps2 linf {:.2e}", e[1].1));
    }
    Ok(detail.join(", "))
}

fn criterion_3() -> Check {
    let expected: [(&str, [[f64; 3]; 3]); 2] = [
        ("ct-example", [[-0.05, 0.0, 0.0], [0.0, -1.0, 1.0], [0.0, 0.0, -0.1]]),
        ("dt-example", [[0.7, 0.0, 0.0], [0.0, 0.7, -0.5], [0.0, 0.0, 0.49]]),
    ];
    for (name, a) in expected {
        let mut cfg = ExperimentConfig::default();
        cfg.system.builtin = Some(name.into());
        let exp = cfg.resolve().map_err(|e| e.to_string())?;
        let out = lift(&exp).map_err(|e| e.to_string())?;
        let want = DMatrix::from_fn(3, 3, |i, j| a[i][j]);
        ensure(out.lifted.is_exact() && out.lifted.residual() == 0.0, || {
            format!("{name}: residual {:e}", out.lifted.residual())
        })?;
        ensure(out.lifted.a() == &want, || format!("{name}: A = {}", out.lifted.a()))?;
    }
    Ok("both A matrices bit-identical to the closed forms, residual 0".into())
}

fn lifted(sys: &System) -> LiftedModel {
    LiftedModel::from_system(sys, GaussLegendre::default(), 1e-9).expect("example lifts")
}

fn criterion_4() -> Check {
    const SAMPLES: usize = 1000;
    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    let (mut worst_a, mut worst_b, mut worst_c) = (0.0_f64, 0.0_f64, 0.0_f64);

    let dt = dt_example();
    let m = lifted(&dt);
    for _ in 0..SAMPLES {
        let (x1, x2, u) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0));
        let x = DVector::from_vec(vec![x1, x2]);
        let uv = DVector::from_vec(vec![u]);
        let lhs = dt.dictionary.eval(&dt.dynamics.eval(&x, &uv).unwrap()).unwrap();
        let bcal = m.input_term(&x, &uv).unwrap();
        worst_a = worst_a.max((lhs - (m.a() * dt.dictionary.eval(&x).unwrap() + &bcal)).amax());
        worst_b = worst_b.max((m.factored_input(&x, &uv).unwrap() * &uv - &bcal).amax());
        let closed = DVector::from_vec(vec![u, x1 * x1 * u, (2.0 * 0.7 * x1 + u) * u]);
        worst_c = worst_c.max((&bcal - closed).amax());
    }

    let ct = ct_example();
    let m = lifted(&ct);
    for _ in 0..SAMPLES {
        let x = DVector::from_fn(2, |_, _| rng.random_range(-2.0..2.0));
        let u = DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0));
        let lhs = ct.dictionary.jacobian(&x).unwrap() * ct.dynamics.eval(&x, &u).unwrap();
        let bcal = m.input_term(&x, &u).unwrap();
        worst_a = worst_a.max((lhs - (m.a() * ct.dictionary.eval(&x).unwrap() + &bcal)).amax());
        worst_b = worst_b.max((m.factored_input(&x, &u).unwrap() * &u - &bcal).amax());
    }
    ensure(worst_a <= 1e-12, || format!("lifted identity off by {worst_a:e}"))?;
    ensure(worst_b <= 1e-10, || format!("B u vs Bcal off by {worst_b:e}"))?;
    ensure(worst_c <= 1e-12, || format!("closed form off by {worst_c:e}"))?;
    Ok(format!(
        "{SAMPLES} samples per system: (a) {worst_a:.2e} (b) {worst_b:.2e} (c) {worst_c:.2e}"
    ))
}

fn criterion_5() -> Check {
    let mut detail = Vec::new();
    for (name, mut cfg) in [("whitenoise", dt_whitenoise()), ("multisine", dt_multisine())] {
        cfg.fits = vec![koopman_cli::config::FitConfig::Edmdc];
        let out = run_sim(name, cfg)?;
        let exact = exact_errors(&out);
        let fit = out.fitted[0].run.errors.as_ref().ok_or_else(|| format!("{name}: EDMDc model diverged"))?;
        let ratio = fit.l2(2) / exact[1].0;
        ensure(ratio >= 1e10, || format!("{name}: eps2 l2 ratio {ratio:e}"))?;
        ensure(fit.linf(1) <= 1e-12, || format!("{name}: EDMDc eps1 linf {:e}", fit.linf(1)))?;
        detail.push(format!("{name} ratio {ratio:.2e}, eps1 linf {:.2e}", fit.linf(1)));
    }
    Ok(detail.join(", "))
}

fn criterion_6() -> Check {
    let start = Instant::now();
    let mut detail = Vec::new();
    for (name, cfg) in [("whitenoise", dt_whitenoise()), ("multisine", dt_multisine())] {
        let exp = cfg.resolve().map_err(|e| e.to_string())?;
        let out = bounds(&exp).map_err(|e| format!("{name}: {e}"))?;
        let r = &out.report;
        let abs = r.absolute_bound.ok_or_else(|| format!("{name}: sigma(A) = {} >= 1", r.sigma_a))?;
        for (k, (&e, &tv)) in r.error_norm.iter().zip(&r.timevarying_bound).enumerate() {
            ensure(e <= tv && tv <= abs, || format!("{name} k = {k}: error {e:e}, tv {tv:e}, abs {abs:e}"))?;
        }
        let n = r.timevarying_bound.len();
        let tail = r.timevarying_bound[n - 1] - r.timevarying_bound[n - 2];
        ensure(tail < 1e-9, || format!("{name}: tail variation {tail:e}"))?;
        let limit = r.timevarying_bound[n - 1];
        ensure(limit < abs, || format!("{name}: tv limit {limit:e} not below {abs:e}"))?;
        detail.push(format!("{name} tv limit {limit:.3e} < abs {abs:.3e}, tail {tail:.1e}"));
    }
    within(start.elapsed(), 10.0, "both bound runs")?;
    Ok(format!("{}; {:.1} s", detail.join(", "), start.elapsed().as_secs_f64()))
}

fn criterion_7() -> Check {
    let mut diverged = Vec::new();
    let mut worst_ratio = f64::INFINITY;
    for (name, mut cfg) in [("whitenoise", dt_whitenoise()), ("multisine", dt_multisine())] {
        cfg.sweep = Some(Default::default());
        let exp = cfg.resolve().map_err(|e| e.to_string())?;
        let out = edmd(&exp).map_err(|e| format!("{name}: {e}"))?;
        let rows: &[SweepRow] = &out.sweep;
        let exact = rows.iter().find(|r| r.method == "exact_lpv").ok_or("no exact row")?;
        ensure(rows.iter().any(|r| r.method == "edmdc"), || format!("{name}: no EDMDc row"))?;
        let degrees: Vec<u32> = rows.iter().filter(|r| r.method == "edmd_full").map(|r| r.degree).collect();
        ensure(degrees == (2..=20).collect::<Vec<_>>(), || format!("{name}: degrees {degrees:?}"))?;
        for r in rows.iter().filter(|r| r.method.starts_with("edmd_")) {
            if r.l2[1].is_finite() {
                let ratio = r.l2[1] / exact.l2[1];
                worst_ratio = worst_ratio.min(ratio);
                ensure(ratio > 1e6, || format!("{name} degree {} {}: ratio {ratio:e}", r.degree, r.method))?;
            }
            if r.diverged {
                diverged.push(format!("{name}/{}/{}", r.method, r.degree));
            }
        }
    }
    ensure(!diverged.is_empty(), || "no configuration diverged".into())?;
    Ok(format!("smallest eps2 ratio {worst_ratio:.2e}; diverged: {}", diverged.join(" ")))
}

fn rk4_slope() -> f64 {
    let error = |n: usize| {
        let ts = 1.0 / n as f64;
        let inputs = DMatrix::zeros(n + 1, 1);
        let traj = rk4_integrate("decay", |_, x, _| Ok(-x), &DVector::from_element(1, 1.0), &inputs, ts, n)
            .expect("decay integrates");
        (traj.states[(n, 0)] - (-1.0f64).exp()).abs()
    };
    let ns = [10, 20, 40, 80];
    let pts: Vec<(f64, f64)> = ns.iter().map(|&n| ((1.0 / n as f64).ln(), error(n).ln())).collect();
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / pts.len() as f64;
    let num: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let den: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    num / den
}

fn criterion_8() -> Check {
    let slope = rk4_slope();
    ensure((slope - 4.0).abs() <= 0.2, || format!("RK4 slope {slope}"))?;

    let quad = GaussLegendre::default();
    let quad_err = (0..=31)
        .map(|d| (quad.integrate(|s| s.powi(d)) - 1.0 / f64::from(d + 1)).abs())
        .fold(0.0, f64::max);
    ensure(quad_err <= 1e-13, || format!("quadrature error {quad_err:e}"))?;

    let sys = dt_example();
    let m = lifted(&sys);
    let inputs = input_matrix(&dt_whitenoise().resolve().unwrap().signals, 1.0, 101).unwrap();
    let traj = simulate_nonlinear("nl", &sys.dynamics, &sys.x0, &inputs, 1.0, 100).unwrap();
    let data = build_snapshots(&traj, &sys.dictionary).unwrap();
    let full = edmd_full(&data);
    let scale = full.a.amax().max(full.b.amax());
    let tik = edmd_tikhonov(&data, 1e-12).unwrap();
    let gap = (&tik.a - &full.a).amax().max((&tik.b - &full.b).amax()) / scale;
    ensure(gap <= 1e-6, || format!("Tikhonov alpha -> 0 gap {gap:e}"))?;

    let fit = edmdc_input_fit(&data, m.a()).unwrap();
    let resid = &data.z_plus - m.a() * &data.z - &fit.b_hat * &data.u;
    let ortho = (resid * data.u.transpose()).amax();
    ensure(ortho <= 1e-8, || format!("normal-equation residual {ortho:e}"))?;
    Ok(format!(
        "RK4 slope {slope:.3}, quadrature {quad_err:.1e}, Tikhonov gap {gap:.1e}, orthogonality {ortho:.1e}"
    ))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("continuous-time exactness", criterion_1),
        ("discrete-time exactness", criterion_2),
        ("analytic state matrices", criterion_3),
        ("lifted identities on random samples", criterion_4),
        ("constant input matrix degrades the second state", criterion_5),
        ("error bound validity", criterion_6),
        ("EDMD degree sweep", criterion_7),
        ("numerical unit properties", criterion_8),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let secs = start.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("PASS criterion {}: {name}: {detail} [{secs:.2} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {}: {name}: {detail} [{secs:.2} s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
