//! Acceptance suite: one pass/fail line per criterion, with the measured values.
//!
//! Run with `cargo test -p formstab-core --test acceptance -- --nocapture` to see
//! the report when every criterion passes.

use std::f64::consts::PI;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use formstab_core::acs::{acs_gamma, classify_mode, switching_delays, Class};
use formstab_core::bifurcation::lambda_of_mu;
use formstab_core::linalg::complex_eigenvalues;
use formstab_core::simulate::log_slope_fit;
use formstab_core::spectrum::{find_roots, LinearDelaySystem, RootFinderOptions};
use formstab_core::{
    argument_principle_count, build_feedback_matrices, char_roots, char_value, circle_convergence_metric, integrate,
    intersection_angles, lambda_max, laplacian_eigenvalues, laplacian_from_adjacency, large_delay_asymptote,
    mode_system, msf_field, Complex64, CouplingGainVector, Error, FormationSpec, GainVector, HistoryPolicy,
    ModeSystem, MsfGridSpec, RootWindow, SimulationConfig, Topology, TrajectorySpec,
};
use nalgebra::{dmatrix, DMatrix, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EXAMPLE_1: GainVector = GainVector::new(6.0, 0.0, 0.3, 0.0);
const EXAMPLE_2: GainVector = GainVector::new(0.0, 0.0, 1.0, 1.5);
const ABSOLUTE: GainVector = GainVector::new(2.0, 3.0, 1.5, 1.2);
const UNSTABLE: GainVector = GainVector::new(-3.0, 0.0, 1.5, -3.0);
const COUPLING: CouplingGainVector = CouplingGainVector::new(3.0, 3.0, -0.5, 0.0);
const ZERO: CouplingGainVector = CouplingGainVector::ZERO;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn three_agents() -> Topology {
    laplacian_from_adjacency(&dmatrix![0.0, 2.0, 1.0; 2.0, 0.0, 1.0; 2.0, 1.0, 0.0]).unwrap()
}

fn uncoupled_lambda_max(p0: &GainVector, tau: f64) -> f64 {
    lambda_max(&ModeSystem::uncoupled(p0, tau).unwrap(), None).unwrap()
}

/// Roots of a result expanded by multiplicity.
fn expanded(roots: &[formstab_core::CharacteristicRoot]) -> Vec<Complex64> {
    roots
        .iter()
        .flat_map(|r| std::iter::repeat_n(r.mu, r.multiplicity))
        .collect()
}

/// Largest distance in a greedy one-to-one matching of two equal-size multisets.
fn matching_distance(a: &[Complex64], b: &[Complex64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    let mut used = vec![false; b.len()];
    let mut worst: f64 = 0.0;
    for z in a {
        let (k, d) = b
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, w)| (k, (z - w).norm()))
            .min_by(|x, y| x.1.total_cmp(&y.1))
            .unwrap();
        used[k] = true;
        worst = worst.max(d);
    }
    worst
}

type Verdict = (bool, String);

fn criterion_1() -> Verdict {
    let examples = [(EXAMPLE_1, Class::II), (EXAMPLE_2, Class::I), (ABSOLUTE, Class::Zero), (UNSTABLE, Class::U)];
    let mut labels = Vec::new();
    let mut ok = true;
    for (g, want) in examples {
        let got = classify_mode(&g, &ZERO, 0.0, 1e-9).unwrap().class;
        ok &= got == want;
        labels.push(format!("{got}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (mut agree, mut disagree, mut collar, mut other) = (0, 0, 0, 0);
    for _ in 0..10_000 {
        let g = GainVector::new(
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
            rng.gen_range(-10.0..10.0),
        );
        match classify_mode(&g, &ZERO, 0.0, 1e-9) {
            Ok(l) if l.class == Class::Boundary => collar += 1,
            Ok(_) => agree += 1,
            Err(Error::InternalConsistency { .. }) => disagree += 1,
            Err(_) => other += 1,
        }
    }
    ok &= disagree == 0 && other == 0;
    (
        ok,
        format!(
            "examples -> [{}] (want II, I, 0, U); random draws: {agree} agree, {disagree} disagree, {collar} in collar, {other} errors",
            labels.join(", ")
        ),
    )
}

fn criterion_2() -> Verdict {
    let label = classify_mode(&EXAMPLE_1, &ZERO, 0.0, 1e-9).unwrap();
    let s = switching_delays(&label, 30.0).unwrap();
    let expected = [(1.3159, 2.5033), (3.9476, 5.0066), (6.5793, 7.5098)];
    let windows = s.stable_windows();
    let listed_ok = expected.iter().zip(&windows).all(|(e, w)| (e.0 - w.0).abs() < 1e-3 && (e.1 - w.1).abs() < 1e-3);
    let events: Vec<f64> = s.destabilizing.iter().chain(&s.stabilizing).copied().collect();
    let mut mismatches_far = 0;
    let mut mismatches_near = 0;
    let mut late_unstable = true;
    for k in 0..=600 {
        let tau = k as f64 * 0.05;
        let numeric_stable = uncoupled_lambda_max(&EXAMPLE_1, tau) < 0.0;
        if numeric_stable != s.predicted_stable(tau) {
            if events.iter().any(|e| (e - tau).abs() <= 0.1) {
                mismatches_near += 1;
            } else {
                mismatches_far += 1;
            }
        }
        if tau >= 26.0 && numeric_stable {
            late_unstable = false;
        }
    }
    (
        listed_ok && mismatches_far == 0 && late_unstable,
        format!(
            "first windows {:?}; sign mismatches on the 0.05 grid: {mismatches_far} away from switching delays, {mismatches_near} within 0.1; unstable on [26, 30]: {late_unstable}",
            windows.iter().take(3).map(|w| (round4(w.0), round4(w.1))).collect::<Vec<_>>()
        ),
    )
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn criterion_3() -> Verdict {
    let f = |tau: f64| uncoupled_lambda_max(&EXAMPLE_2, tau);
    // first sign change on a fine grid, then bisection
    let mut lo = 0.3;
    while f(lo + 0.001) < 0.0 && lo < 3.0 {
        lo += 0.001;
    }
    let mut hi = lo + 0.001;
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let tau0 = 0.5 * (lo + hi);
    let stays = (1..=((3.0 - tau0) / 0.01) as usize).all(|k| f(tau0 + k as f64 * 0.01) > 0.0);
    let stable_before = f(0.5 * tau0) < 0.0;
    (
        (tau0 - 0.7285).abs() <= 0.005 && stays && stable_before,
        format!("sign change at tau0 = {tau0:.6} (target 0.7285 +- 0.005); stable below: {stable_before}; positive on (tau0, 3]: {stays}"),
    )
}

fn criterion_4() -> Verdict {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (g, horizon) in [(EXAMPLE_1, 30.0), (EXAMPLE_2, 3.0)] {
        let label = classify_mode(&g, &ZERO, 0.0, 1e-9).unwrap();
        let s = switching_delays(&label, horizon).unwrap();
        let mut seqs = vec![(s.destabilizing_crossing.0, s.destabilizing.clone())];
        if let Some((w, _)) = s.stabilizing_crossing {
            seqs.push((w, s.stabilizing.clone()));
        }
        for (omega, taus) in seqs {
            for tau in taus {
                let mode = ModeSystem::uncoupled(&g, tau).unwrap();
                worst = worst.max(char_value(c(0.0, omega), &mode).norm());
                count += 1;
            }
        }
    }
    (worst <= 1e-8, format!("{count} switching delays, max |f(i omega_H)| = {worst:.3e} (limit 1e-8)"))
}

fn criterion_5() -> Verdict {
    let mut eig: Vec<f64> = laplacian_eigenvalues(&three_agents())
        .unwrap()
        .iter()
        .map(|z| {
            assert!(z.im.abs() <= 1e-9);
            z.re
        })
        .collect();
    eig.sort_by(f64::total_cmp);
    let err = eig.iter().zip([0.0, 4.0, 5.0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    (err <= 1e-9, format!("eigenvalues {eig:?}, max error {err:.2e} (limit 1e-9)"))
}

fn criterion_6() -> Verdict {
    let p0 = GainVector::new(0.0, 6.0, 1.5, 3.0);
    let pbar = CouplingGainVector::new(3.0, 1.0, 0.0, 0.0);
    let tau = 10.0;
    let grid = MsfGridSpec::default();
    let field = msf_field(&p0, &pbar, tau, &grid).unwrap();
    let (dr, di) = grid.spacing();
    // samples of the lambda(i omega) curve whose interpolation cell touches a
    // stable node; elsewhere on the curve another root is already unstable
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut outside = 0;
    for s in &field.boundary.samples {
        let x = (s.point.re - grid.re_min) / dr;
        let y = (s.point.im - grid.im_min) / di;
        if !(x >= 0.0 && y >= 0.0 && x <= (grid.n_re - 1) as f64 && y <= (grid.n_im - 1) as f64) {
            outside += 1;
            continue;
        }
        let i = (x.floor() as usize).min(grid.n_re - 2);
        let j = (y.floor() as usize).min(grid.n_im - 2);
        let touches_stable = [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)]
            .iter()
            .any(|&(a, b)| field.value(a, b).is_some_and(|v| v < 0.0));
        if !touches_stable {
            continue;
        }
        if let Some(v) = field.interpolate(s.point) {
            worst = worst.max(v.abs());
            checked += 1;
        }
    }
    let uncoupled = uncoupled_lambda_max(&p0, tau);
    let origin_err = (field.origin_value - uncoupled).abs();
    (
        checked > 0 && worst <= 0.02 && origin_err <= 1e-6,
        format!(
            "{checked} boundary samples next to stable nodes, max |Lambda_max| = {worst:.4} (limit 0.02); {outside} samples outside the grid; Lambda_max(0) = {:.6} vs uncoupled {uncoupled:.6} (diff {origin_err:.1e})",
            field.origin_value
        ),
    )
}

fn criterion_7() -> Verdict {
    let p0 = GainVector::new(3.0, 6.0, 0.0, 0.0);
    let pbar = CouplingGainVector::new(0.0, 0.0, -2.0, 0.0);
    let l0 = lambda_of_mu(c(0.0, 0.0), &p0, &pbar, 1000.0).unwrap();
    let a = l0 == c(1.5, 0.0);
    let m3 = circle_convergence_metric(&p0, &pbar, 1000.0).unwrap();
    let m4 = circle_convergence_metric(&p0, &pbar, 10_000.0).unwrap();
    let b = m3 <= 0.02 && m4 <= 0.002;
    let tau = 1000.0;
    let curve = large_delay_asymptote(&p0, &pbar, tau, 2.0 * PI).unwrap();
    let first = curve.intersections.iter().find(|s| s.j == 1).copied().unwrap();
    let seed = PI / tau * (1.0 - 2.0 / tau);
    let omega_gap = (first.omega - seed).abs();
    let im = lambda_of_mu(c(0.0, first.omega), &p0, &pbar, tau).unwrap().im.abs();
    let c_ok = omega_gap <= 1e-6 / tau && im <= 1e-9;
    let angles = intersection_angles(&curve, tau).unwrap();
    let theta = angles.iter().find(|a| a.j == 1).unwrap().numeric;
    let target = PI - 4.0 * PI / 1000.0;
    let d = (theta - target).abs() <= 1e-4;
    (
        a && b && c_ok && d,
        format!(
            "(a) lambda(0) = {l0} [{}]; (b) circle deviation {m3:.2e} at tau=1e3 (limit 0.02), {m4:.2e} at tau=1e4 (limit 0.002) [{}]; \
             (c) omega_1 = {:.10e}, |omega_1 - seed| = {omega_gap:.3e} (limit {:.0e}), |Im lambda| = {im:.1e} [{}]; \
             (d) theta_1 = {theta:.6} vs {target:.6}, diff {:.2e} (limit 1e-4) [{}]",
            verdict(a),
            verdict(b),
            first.omega,
            1e-6 / tau,
            verdict(c_ok),
            (theta - target).abs(),
            verdict(d)
        ),
    )
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "FAIL"
    }
}

fn criterion_8() -> Verdict {
    let tau = 20.0;
    let mode = ModeSystem::uncoupled(&ABSOLUTE, tau).unwrap();
    let result = char_roots(&mode, &RootWindow::default_for_delay(tau)).unwrap();
    // zero of the delay channel k0_tau + h0_tau mu
    let q_zero = -ABSOLUTE.k0_tau / ABSOLUTE.h0_tau;
    let mut worst: f64 = 0.0;
    let (mut checked, mut excluded) = (0, 0);
    for r in result.roots.iter().filter(|r| r.mu.im.abs() <= 3.0) {
        if (r.mu - c(q_zero, 0.0)).norm() <= 1e-3 {
            excluded += 1;
            continue;
        }
        let gamma = acs_gamma(r.mu.im, &mode).unwrap().value();
        worst = worst.max((r.mu.re - gamma / tau).abs());
        checked += 1;
    }
    (
        checked > 0 && worst <= 0.05,
        format!(
            "{checked} roots with |Im mu| <= 3, max |Re mu - gamma/tau| = {worst:.4} (limit 0.05); {excluded} root(s) at the delay-channel zero mu = {q_zero} excluded"
        ),
    )
}

fn kron(a: &DMatrix<f64>, b: &Matrix2<f64>) -> DMatrix<Complex64> {
    let n = a.nrows();
    DMatrix::from_fn(2 * n, 2 * n, |r, s| c(a[(r / 2, s / 2)] * b[(r % 2, s % 2)], 0.0))
}

fn criterion_9() -> Verdict {
    let tau = 15.0;
    let topo = three_agents();
    let fm = build_feedback_matrices(&ABSOLUTE, &COUPLING).unwrap();
    let id = DMatrix::<f64>::identity(3, 3);
    let a = kron(&id, &fm.m) - kron(&topo.laplacian, &fm.p);
    let b = kron(&id, &fm.m_tau) - kron(&topo.laplacian, &fm.p_tau);
    let full = LinearDelaySystem::new(a, b, tau).unwrap();
    let window = RootWindow::new(-1.0, 0.5, 2.0).unwrap();
    let full_roots = expanded(&find_roots(&full, &window, &RootFinderOptions::default()).unwrap().roots);
    let mut modal = Vec::new();
    for lam in [0.0, 4.0, 5.0] {
        let mode = mode_system(&ABSOLUTE, &COUPLING, c(lam, 0.0), tau).unwrap();
        modal.extend(expanded(&char_roots(&mode, &window).unwrap().roots));
    }
    let dist = matching_distance(&full_roots, &modal);
    (
        dist <= 1e-6 && !full_roots.is_empty(),
        format!(
            "{} roots of the 6-dimensional system vs {} modal roots in Re in [-1, 0.5], |Im| <= 2; max root distance {dist:.2e} (limit 1e-6)",
            full_roots.len(),
            modal.len()
        ),
    )
}

fn scenario(p0: GainVector, pbar: CouplingGainVector, topology: Topology, tau: f64) -> SimulationConfig {
    let mut cfg = SimulationConfig::new(
        p0,
        pbar,
        topology,
        FormationSpec::triangle(1.0),
        TrajectorySpec::parabola(),
        tau,
        300.0,
    );
    cfg.history = HistoryPolicy::AtRest;
    cfg.log_stride = 10;
    cfg
}

/// Log-slope of the upper envelope of `y` in `window`: the running maximum
/// towards the future for a decaying signal, towards the past for a growing one.
fn envelope_rate(t: &[f64], y: &[f64], window: (f64, f64), decaying: bool) -> f64 {
    let mut env = y.to_vec();
    if decaying {
        for k in (0..env.len() - 1).rev() {
            env[k] = env[k].max(env[k + 1]);
        }
    } else {
        for k in 1..env.len() {
            env[k] = env[k].max(env[k - 1]);
        }
    }
    log_slope_fit(t, &env, window).unwrap_or(f64::NAN)
}

/// Fit window that ends before a decaying error reaches the roundoff floor.
fn fit_window(rate: f64, t_end: f64) -> (f64, f64) {
    if rate < 0.0 {
        (20.0, (20.0 + 18.0 / rate.abs()).min(t_end))
    } else {
        (0.5 * t_end, t_end)
    }
}

fn criterion_10() -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for tau in [4.5, 5.7, 6.8] {
        let cfg = scenario(EXAMPLE_1, ZERO, Topology::uncoupled(3), tau);
        let log = integrate(&cfg).unwrap();
        let expected = uncoupled_lambda_max(&EXAMPLE_1, tau);
        let n = log.len() - 1;
        let (shape_ok, shape) = if expected < 0.0 {
            // without coupling the formation shape is measured by the spread of the agent errors
            let ratio = log.disagreement_error[n] / log.disagreement_error[0];
            (ratio <= 1e-3, format!("spread ratio {ratio:.1e}"))
        } else {
            let ratio = log.tracking_error[n] / log.tracking_error[0];
            (ratio >= 10.0, format!("tracking growth {ratio:.1e}"))
        };
        let rate = envelope_rate(&log.t, &log.tracking_error, fit_window(expected, 300.0), expected < 0.0);
        let rate_ok = (rate - expected).abs() <= 0.05 * expected.abs();
        ok &= shape_ok && rate_ok;
        parts.push(format!(
            "uncoupled tau={tau}: {shape}, rate {rate:.4} vs {expected:.4} [{}]",
            verdict(shape_ok && rate_ok)
        ));
    }
    for (p0, tau) in [(EXAMPLE_1, 4.5), (EXAMPLE_1, 5.7), (EXAMPLE_1, 6.8), (ABSOLUTE, 15.0)] {
        let cfg = scenario(p0, COUPLING, three_agents(), tau);
        let log = integrate(&cfg).unwrap();
        let expected = [4.0, 5.0]
            .iter()
            .map(|l| lambda_max(&mode_system(&p0, &COUPLING, c(*l, 0.0), tau).unwrap(), None).unwrap())
            .fold(f64::NEG_INFINITY, f64::max);
        let n = log.len() - 1;
        let ratio = log.formation_error[n] / log.formation_error[0];
        let rate = envelope_rate(&log.t, &log.formation_error, fit_window(expected, 300.0), expected < 0.0);
        let part_ok = ratio <= 1e-3 && (rate - expected).abs() <= 0.05 * expected.abs();
        ok &= part_ok;
        parts.push(format!(
            "coupled tau={tau}: formation ratio {ratio:.1e}, rate {rate:.4} vs {expected:.4} [{}]",
            verdict(part_ok)
        ));
    }
    (ok, parts.join("; "))
}

fn criterion_11() -> Verdict {
    let gain_sets = [EXAMPLE_1, EXAMPLE_2, ABSOLUTE, UNSTABLE];
    let mut conj_worst: f64 = 0.0;
    let mut incomplete = 0;
    let mut tau0_worst: f64 = 0.0;
    for g in gain_sets {
        for tau in [1.0, 5.0] {
            let mode = ModeSystem::uncoupled(&g, tau).unwrap();
            let window = RootWindow::default_for_delay(tau);
            let result = char_roots(&mode, &window).unwrap();
            let roots = expanded(&result.roots);
            let conj: Vec<Complex64> = roots.iter().map(|z| z.conj()).collect();
            conj_worst = conj_worst.max(matching_distance(&roots, &conj));
            if argument_principle_count(&mode, &result.window).unwrap() != result.total_multiplicity() {
                incomplete += 1;
            }
        }
        let mode = ModeSystem::uncoupled(&g, 0.0).unwrap();
        let sum = DMatrix::from_fn(2, 2, |i, j| mode.a[(i, j)] + mode.b[(i, j)]);
        let expected = complex_eigenvalues(&sum).unwrap();
        let bound = expected.iter().map(|z| z.norm()).fold(1.0, f64::max) + 1.0;
        let result = char_roots(&mode, &RootWindow::new(-bound, bound, bound).unwrap()).unwrap();
        tau0_worst = tau0_worst.max(matching_distance(&expanded(&result.roots), &expected));
    }

    let run = |dt: f64| {
        let mut cfg = SimulationConfig::new(
            GainVector::new(2.0, 1.0, 0.8, 0.3),
            ZERO,
            Topology::uncoupled(1),
            FormationSpec {
                offsets: vec![[0.0; 3]],
                scale: 1.0,
            },
            TrajectorySpec::parabola(),
            1.0,
            6.0,
        );
        cfg.dt = dt;
        let log = integrate(&cfg).unwrap();
        log.errors(&cfg, log.len() - 1)[0].0
    };
    let (a, b, e) = (run(0.1), run(0.05), run(0.025));
    let order = ((a - b).norm() / (b - e).norm()).log2();
    (
        conj_worst <= 1e-8 && incomplete == 0 && tau0_worst <= 1e-9 && order >= 3.5,
        format!(
            "conjugate symmetry {conj_worst:.1e} (limit 1e-8); incomplete spectra {incomplete}; tau=0 vs eig(A+B) {tau0_worst:.1e} (limit 1e-9); step-halving order {order:.2} (min 3.5)"
        ),
    )
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Verdict); 11] = [
        ("classification fidelity", criterion_1),
        ("stability islands", criterion_2),
        ("class-I threshold", criterion_3),
        ("switching-delay roots", criterion_4),
        ("Laplacian spectrum", criterion_5),
        ("MSF boundary consistency", criterion_6),
        ("large-delay circle", criterion_7),
        ("ACS approximation", criterion_8),
        ("modal/full-system equivalence", criterion_9),
        ("simulation scenarios", criterion_10),
        ("numerical hygiene", criterion_11),
    ];
    let mut failed = Vec::new();
    for (k, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let (ok, detail) = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            });
        println!(
            "criterion {:>2} [{}] {name} ({:.1} s): {detail}",
            k + 1,
            if ok { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
        if !ok {
            failed.push(k + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
