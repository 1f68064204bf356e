//! Acceptance suite: one line per criterion, nonzero exit if any fails.
//! Built with `harness = false` so the lines are always printed.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use strainsis::blowup::{blowup_run, BlowupConfig};
use strainsis::dynamics::{integrate, IntegratorConfig, Scheme};
use strainsis::ode::{
    critical_population, ode_blowup_exact, ode_endemic_equilibria, ode_endemic_for_s, ode_integrate, EquilibriumSet,
    OdeMethod, OdeState, OdeSystem, Termination,
};
use strainsis::operators::{assemble_psi_r, DiffusionStencil};
use strainsis::scenario::preset_catalog;
use strainsis::spectral::{find_s_star, spectral_bound, theta_star_bound};
use strainsis::stability::{assemble_linearization, mass_zero_projection, spectral_abscissa, LinearizationPoint};
use strainsis::steady::{endemic_bilinear, endemic_fixed_point, verify_steady_state, SteadyState};
use strainsis::{Grid, ModelCoefficients, State};

/// Collects failed checks for one criterion.
#[derive(Default)]
struct Checks {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn check(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    fn note(&mut self, what: impl Into<String>) {
        self.notes.push(what.into());
    }
}

fn consts(n: usize, d: f64, rho: f64, beta: f64, gamma: f64) -> (Grid, ModelCoefficients) {
    let g = Grid::new(n).unwrap();
    let c = ModelCoefficients::constant(&g, d, rho, beta, gamma).unwrap();
    (g, c)
}

/// Smooth perturbation of d = 1, ρ = 1, β = 2 with relative amplitude `amp`.
fn perturbed(n: usize, gamma: f64, amp: f64) -> (Grid, ModelCoefficients) {
    let g = Grid::new(n).unwrap();
    let xs = g.centers().to_vec();
    let c = ModelCoefficients::from_samples(
        &g,
        g.sample(|x| 1.0 + amp * (PI * x).cos()),
        g.sample(|x| 1.0 + amp * (2.0 * x).sin()),
        DMatrix::from_fn(n, n, |i, j| 2.0 * (1.0 + amp * (xs[i] - 2.0 * xs[j]).cos())),
        vec![gamma; n],
        &Default::default(),
    )
    .unwrap();
    (g, c)
}

fn observed_order(e_coarse: f64, e_fine: f64) -> f64 {
    (e_coarse / e_fine).log2()
}

fn linf_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn criterion_1(c: &mut Checks) {
    for s in preset_catalog() {
        let name = s.name.clone().unwrap_or_default();
        let p = s.clone().with_n_cells(128).prepare().unwrap();
        let start = Instant::now();
        let rel = if p.coeffs.bounds.gamma_max <= 1.0 {
            let cfg = IntegratorConfig { t_end: 5.0, ..s.integrator.clone() };
            let traj = integrate(&p.state0, &p.coeffs, &p.grid, &cfg).unwrap();
            traj.max_mass_error() / p.p_star()
        } else {
            let rep = blowup_run(&p.state0, &p.coeffs, &p.grid, &BlowupConfig::new(s.integrator.dt, 5.0));
            rep.max_relative_mass_error
        };
        let elapsed = start.elapsed();
        c.note(format!("{name}: rel err {rel:.1e} in {:.2}s", elapsed.as_secs_f64()));
        c.check(rel <= 1e-12, format!("{name}: relative mass error {rel:e}"));
        c.check(elapsed < Duration::from_secs(10), format!("{name}: took {elapsed:?}"));
    }
}

fn pde_vs_ode(gamma: f64, dt: f64) -> f64 {
    let (g, coeffs) = consts(8, 1.0, 1.0, 2.0, gamma);
    let s0 = State::new(&g, vec![0.2; 8], 1.0).unwrap();
    let traj = integrate(&s0, &coeffs, &g, &IntegratorConfig::new(dt, 5.0, Scheme::ImexCn)).unwrap();
    let sys = OdeSystem::single(1.0, 2.0, gamma).unwrap();
    let ode = ode_integrate(&OdeState::new(vec![0.2], 1.0).unwrap(), &sys, 1e-3, 5.0, OdeMethod::Adaptive).unwrap();
    assert_eq!(ode.last().t, 5.0);
    let last = traj.last();
    assert_eq!(last.t, 5.0);
    last.v.iter().map(|v| (v - ode.last().i[0]).abs()).fold(0.0, f64::max)
}

fn criterion_2(c: &mut Checks) {
    for gamma in [0.0, 1.0] {
        let e: Vec<f64> = [4e-3, 2e-3, 1e-3].iter().map(|&dt| pde_vs_ode(gamma, dt)).collect();
        c.note(format!("gamma {gamma}: err(dt=1e-3) {:.2e}", e[2]));
        c.check(e[2] <= 1e-4, format!("gamma {gamma}: terminal error {:e}", e[2]));
        for w in e.windows(2) {
            let q = observed_order(w[0], w[1]);
            c.check((1.8..=2.2).contains(&q), format!("gamma {gamma}: observed order {q}"));
        }
    }
}

fn criterion_3(c: &mut Checks) {
    for n in [32, 128] {
        let (g, coeffs) = consts(n, 1.0, 1.0, 2.0, 0.0);
        for r in [0.0, 0.1, 0.5, 1.0, 5.0] {
            let s = spectral_bound(&assemble_psi_r(&coeffs, &g, r).unwrap(), &g, 1e-12).unwrap().s;
            c.check((s - (2.0 * r - 1.0)).abs() <= 1e-8, format!("n {n}, R {r}: s = {s}"));
        }
    }
    let mut rng = StdRng::seed_from_u64(20);
    let n = 32;
    let g = Grid::new(n).unwrap();
    let xs = g.centers().to_vec();
    for draw in 0..20 {
        let (a1, a2, a3): (f64, f64, f64) = (rng.gen_range(0.0..0.9), rng.gen_range(0.0..0.9), rng.gen_range(0.0..0.9));
        let (k, phi, b0): (f64, f64, f64) =
            (rng.gen_range(1..4) as f64, rng.gen_range(0.0..PI), rng.gen_range(0.5..3.0));
        let coeffs = ModelCoefficients::from_samples(
            &g,
            g.sample(|x| 1.0 + a1 * (k * PI * x).cos()),
            g.sample(|x| 1.0 + a2 * (2.0 * x + phi).sin()),
            DMatrix::from_fn(n, n, |i, j| b0 * (1.0 + a3 * (xs[i] - 2.0 * xs[j] + phi).cos())),
            vec![0.0; n],
            &Default::default(),
        )
        .unwrap();
        let s: Vec<f64> = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0]
            .iter()
            .map(|&r| spectral_bound(&assemble_psi_r(&coeffs, &g, r).unwrap(), &g, 1e-12).unwrap().s)
            .collect();
        c.check(s.windows(2).all(|w| w[0] < w[1]), format!("draw {draw}: not increasing {s:?}"));
    }
}

fn bilinear_states() -> Vec<(Grid, ModelCoefficients, SteadyState, f64)> {
    let (g, coeffs) = consts(64, 1.0, 1.0, 2.0, 0.0);
    [1.0, 3.0, 7.0].iter().map(|&v| (g.clone(), coeffs.clone(), endemic_bilinear(&coeffs, &g, v).unwrap(), v)).collect()
}

fn criterion_4(c: &mut Checks) {
    let (g, coeffs) = consts(64, 1.0, 1.0, 2.0, 0.0);
    let s_star = find_s_star(&coeffs, &g, None).unwrap();
    c.check((s_star - 0.5).abs() <= 1e-8, format!("S* = {s_star}"));
    for (_, _, ss, v) in bilinear_states() {
        c.check((ss.s_star - 0.5).abs() <= 1e-8, format!("V* {v}: S* = {}", ss.s_star));
        let dev = ss.v_star.iter().map(|x| (x - v).abs()).fold(0.0, f64::max);
        c.check(dev <= 1e-8, format!("V* {v}: v* deviates from constant by {dev:e}"));
        c.check(ss.residual_pde <= 1e-8, format!("V* {v}: residual_pde {:e}", ss.residual_pde));
        c.check(ss.residual_balance <= 1e-10, format!("V* {v}: residual_balance {:e}", ss.residual_balance));
    }
    let constant: Vec<f64> = [32, 64, 128]
        .iter()
        .map(|&n| {
            let (g, coeffs) = consts(n, 1.0, 1.0, 2.0, 0.0);
            find_s_star(&coeffs, &g, None).unwrap()
        })
        .collect();
    c.check(linf_diff(&constant[..2], &constant[1..]) <= 1e-8, format!("constant S* varies with mesh: {constant:?}"));
    let varied: Vec<f64> = [32, 64, 128]
        .iter()
        .map(|&n| {
            let (g, coeffs) = perturbed(n, 0.0, 0.2);
            find_s_star(&coeffs, &g, None).unwrap()
        })
        .collect();
    let q = observed_order((varied[0] - varied[1]).abs(), (varied[1] - varied[2]).abs());
    c.note(format!("mesh order of S* {q:.2}"));
    c.check(q >= 1.8, format!("mesh-doubling order of S* is {q}"));
}

fn quadratic_states() -> Vec<(Grid, ModelCoefficients, SteadyState, f64)> {
    let (g, coeffs) = consts(64, 1.0, 1.0, 2.0, 1.0);
    let mut out: Vec<_> = [0.5, 1.0, 2.0]
        .iter()
        .map(|&r| (g.clone(), coeffs.clone(), endemic_fixed_point(&coeffs, &g, r, None).unwrap(), r))
        .collect();
    let (g, coeffs) = perturbed(64, 1.0, 0.2);
    let ss = endemic_fixed_point(&coeffs, &g, 1.0, None).unwrap();
    out.push((g, coeffs, ss, 1.0));
    out
}

fn criterion_5(c: &mut Checks) {
    let states = quadratic_states();
    for (_, _, ss, r) in &states[..3] {
        let expected = 1.0 / (r * 2.0);
        let dev = ss.v_star.iter().map(|x| (x - expected).abs()).fold(0.0, f64::max);
        c.check(dev <= 1e-7, format!("R {r}: v* deviates from r/(Rb) by {dev:e}"));
        c.check(ss.iterations <= 3, format!("R {r}: {} iterations", ss.iterations));
    }
    let (g, coeffs, ss, r) = &states[3];
    c.check(ss.residual_pde <= 1e-7, format!("perturbed: residual_pde {:e}", ss.residual_pde));
    let theta = theta_star_bound(coeffs, g, *r).unwrap();
    let mass = g.l1(&ss.v_star);
    c.note(format!("perturbed ||v*||_1 = {mass:.4} <= theta* = {theta:.4}"));
    c.check(mass > 0.0 && mass <= theta, format!("perturbed: ||v*||_1 = {mass} outside (0, {theta}]"));
}

fn criterion_6(c: &mut Checks) {
    let mut worst = 0.0f64;
    for (g, coeffs, ss, label) in bilinear_states().into_iter().chain(quadratic_states()) {
        let rep = verify_steady_state(&ss, &coeffs, &g);
        let drift = rep.drift;
        worst = worst.max(drift);
        c.check(drift <= 1e-6, format!("state {label}: drift {drift:e}"));
    }
    c.note(format!("worst drift {worst:.1e}"));
}

fn criterion_7(c: &mut Checks) {
    let (g, coeffs) = consts(128, 1.0, 1.0, 2.0, 1.0);
    let l = assemble_linearization(&LinearizationPoint::DiseaseFree { s: 1.0 }, &coeffs, &g).unwrap();
    let res = l.conservation_eigen_residual().unwrap();
    c.check(res <= 1e-10, format!("conservation eigenvector residual {res:e}"));
    let p = mass_zero_projection(&l).unwrap();
    let rep = spectral_abscissa(&p, 1e-10);
    c.check((rep.abscissa + 1.0).abs() <= 1e-3, format!("projected abscissa {}", rep.abscissa));
    let h = g.h();
    for k in 0..2 {
        let exact = -1.0 - (k as f64 * PI).powi(2);
        match rep.leading.get(k) {
            Some(z) => {
                let err = (z[0] - exact).abs();
                c.note(format!("k={k}: {:.6} vs {exact:.6}", z[0]));
                c.check(err <= 10.0 * h * h, format!("k={k}: eigenvalue {} vs {exact}, error {err:e}", z[0]));
            }
            None => c.check(false, format!("k={k}: no eigenvalue estimate")),
        }
    }
}

fn criterion_8(c: &mut Checks) {
    let p_bar = critical_population(1.0, 1.0, 1.0).unwrap();
    c.check((p_bar - 2.0).abs() <= 1e-12, format!("critical population {p_bar}"));
    let sys = OdeSystem::single(1.0, 1.0, 1.0).unwrap();
    match ode_endemic_equilibria(&sys, 2.5).unwrap() {
        EquilibriumSet::Points(pts) => {
            let v: Vec<f64> = pts.iter().map(|e| e.v).collect();
            c.check(v.len() == 2 && linf_diff(&v, &[0.5, 2.0]) <= 1e-10, format!("P = 2.5: equilibria {v:?}"));
        }
        other => c.check(false, format!("P = 2.5: {other:?}")),
    }
    c.check(
        ode_endemic_equilibria(&sys, 1.5).unwrap() == EquilibriumSet::Points(vec![]),
        "P = 1.5 should have no endemic equilibria",
    );
    let (g, coeffs) = consts(32, 1.0, 1.0, 1.0, 1.0);
    for s in [0.5, 1.0, 2.0] {
        let ode = ode_endemic_for_s(&sys, s).unwrap();
        let pde = endemic_fixed_point(&coeffs, &g, s, None).unwrap();
        let dev = pde.v_star.iter().map(|v| (v - ode.v).abs()).fold(0.0, f64::max);
        c.check(dev <= 1e-7 && (pde.s_star - s).abs() <= 1e-12, format!("S {s}: PDE vs ODE {dev:e}"));
    }
}

fn criterion_9(c: &mut Checks) {
    let t = ode_blowup_exact(0.0, 1.0, 2.0, 1.0).unwrap();
    c.check(t == Some(1.0), format!("exact blow-up time {t:?}"));
    let mut sys = OdeSystem::single(0.0, 1.0, 1.0).unwrap();
    sys.pin_susceptible = true;
    let tr = ode_integrate(&OdeState::new(vec![1.0], 1.0).unwrap(), &sys, 1e-3, 2.0, OdeMethod::Adaptive).unwrap();
    c.check(tr.termination != Termination::Completed, "adaptive integration ran past the blow-up");
    c.check((tr.last().t - 1.0).abs() < 1e-3, format!("adaptive abort at t = {}", tr.last().t));
    for s in preset_catalog().into_iter().filter(|s| s.prepare().unwrap().coeffs.bounds.gamma_max <= 1.0) {
        for n in [32, 64, 128] {
            let p = s.clone().with_n_cells(n).prepare().unwrap();
            let rep =
                blowup_run(&p.state0, &p.coeffs, &p.grid, &BlowupConfig::new(s.integrator.dt, s.integrator.t_end));
            c.check(!rep.blowup_suspected, format!("{:?} n {n}: flagged", s.name));
        }
    }
}

fn criterion_10(c: &mut Checks) {
    let errs: Vec<f64> = [32, 64, 128]
        .iter()
        .map(|&n| {
            let (g, coeffs) = consts(n, 1.0, 1.0, 1.0, 0.0);
            let v = g.sample(|x| (PI * x).cos());
            let exact = g.sample(|x| -PI * PI * (PI * x).cos());
            linf_diff(&DiffusionStencil::new(&coeffs, &g).apply(&v), &exact)
        })
        .collect();
    for w in errs.windows(2) {
        let q = observed_order(w[0], w[1]);
        c.check((1.8..=2.2).contains(&q), format!("diffusion observed order {q}"));
    }
    for n in [32, 64, 128] {
        let g = Grid::new(n).unwrap();
        let lin = g.sample(|x| 1.0 + 2.0 * x);
        let q = g.quadrature(&lin).unwrap();
        c.check((q - 2.0).abs() <= 1e-12, format!("n {n}: quadrature of 1+2x = {q}"));
        let q = g.quadrature(&g.sample(|x| (PI * x).cos())).unwrap();
        c.check(q.abs() <= 1e-12, format!("n {n}: quadrature of cos(pi x) = {q}"));
        let w = g.discrete_w11_norm(&lin).unwrap();
        c.check((w - 4.0).abs() <= 1e-12, format!("n {n}: W11 norm of 1+2x = {w}"));
    }
}

type Criterion = (&'static str, fn(&mut Checks));

fn main() {
    let criteria: [Criterion; 10] = [
        ("conservation over the preset suite", criterion_1),
        ("PDE-ODE collapse and second-order convergence", criterion_2),
        ("spectral bound oracle and monotonicity in R", criterion_3),
        ("bilinear endemic state", criterion_4),
        ("quadratic endemic state", criterion_5),
        ("dynamic consistency of endemic states", criterion_6),
        ("disease-free stability spectrum", criterion_7),
        ("ODE equilibrium structure", criterion_8),
        ("blow-up baseline", criterion_9),
        ("discretization accuracy", criterion_10),
    ];
    let mut failed = 0;
    for (k, (title, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let mut checks = Checks::default();
        let outcome = catch_unwind(AssertUnwindSafe(|| run(&mut checks)));
        if let Err(panic) = outcome {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            checks.failures.push(format!("panicked: {msg}"));
        }
        let secs = start.elapsed().as_secs_f64();
        let status = if checks.failures.is_empty() { "PASS" } else { "FAIL" };
        println!("criterion {:>2} [{status}] {title} ({secs:.2}s)", k + 1);
        for n in &checks.notes {
            println!("      {n}");
        }
        for f in &checks.failures {
            println!("      failed: {f}");
        }
        if !checks.failures.is_empty() {
            failed += 1;
        }
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
