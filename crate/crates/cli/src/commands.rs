//! Subcommand implementations: each writes its artifacts into the output directory.

use formstab_core::acs::{acs_gamma, classify_formation, switching_delays, Gamma};
use formstab_core::bifurcation::{
    contour_lines, default_omega_grid, k0h0_boundary, lambda_h0_boundary, lambda_plane_boundary, ParametricCurve,
};
use formstab_core::simulate::default_perturbation;
use formstab_core::{
    circle_convergence_metric, decay_rate_fit, default_dt, integrate, laplacian_eigenvalues, laplacian_from_adjacency,
    large_delay_asymptote, msf_field_with, mode_system, char_roots, Complex64, Error, FormationSpec, RootWindow,
    SimulationConfig, Topology,
};
use nalgebra::DMatrix;
use serde_json::{json, Value};

use crate::config::{Plane, RunConfig};
use crate::output::{finite_or_label, Artifacts, Cell};

/// Failure of a subcommand, split by exit status.
#[derive(Debug)]
pub enum Failure {
    /// Rejected input (exit 2).
    Input(String),
    /// Numerical or I/O failure (exit 3).
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidParameter(_)
            | Error::InvalidTopology(_)
            | Error::UnsupportedParameters(_)
            | Error::UnsupportedTopology(_) => Failure::Input(e.to_string()),
            _ => Failure::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Numerical(format!("i/o error: {e}"))
    }
}

type Outcome = Result<(), Failure>;

fn topology(c: &RunConfig) -> Result<Option<Topology>, Failure> {
    let Some(t) = &c.topology else { return Ok(None) };
    let n = t.adjacency.len();
    let m = DMatrix::from_fn(n, n, |i, j| t.adjacency[i][j]);
    laplacian_from_adjacency(&m)
        .map(Some)
        .map_err(|e| Failure::Input(format!("topology.adjacency: {e}")))
}

/// Distinct Laplacian eigenvalues; a single agent (`lambda = 0`) without a topology.
fn modes(c: &RunConfig) -> Result<Vec<Complex64>, Failure> {
    let Some(t) = topology(c)? else {
        return Ok(vec![Complex64::new(0.0, 0.0)]);
    };
    let mut out: Vec<Complex64> = Vec::new();
    for z in laplacian_eigenvalues(&t)? {
        let z = if z.im.abs() <= 1e-12 { Complex64::new(z.re, 0.0) } else { z };
        if !out.iter().any(|w| (w - z).norm() <= 1e-9 * (1.0 + z.norm())) {
            out.push(z);
        }
    }
    out.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
    Ok(out)
}

fn delay_grid(tau: f64, omega_max: Option<f64>) -> Vec<f64> {
    match omega_max {
        None => default_omega_grid(tau),
        Some(w) => {
            let step = (0.25 / tau.max(1e-3)).min(0.01);
            let n = (w / step).ceil() as i64;
            (-n..=n).map(|k| k as f64 * w / n as f64).collect()
        }
    }
}

fn curve_rows(curve: &ParametricCurve, radius: bool) -> Vec<Vec<Cell>> {
    curve
        .samples
        .iter()
        .map(|s| {
            let mut row = vec![
                Cell::U(s.segment),
                Cell::F(s.omega),
                Cell::F(s.point.re),
                Cell::F(s.point.im),
            ];
            if radius {
                row.push(Cell::F(s.point.norm()));
            }
            row
        })
        .collect()
}

pub fn classify(c: &RunConfig, out: &mut Artifacts) -> Outcome {
    let topo = topology(c)?.unwrap_or_else(|| Topology::uncoupled(1));
    let comp = classify_formation(&c.gains.p0, &c.gains.pbar, &topo, c.classify.tolerance)?;
    let mut rows = Vec::new();
    let mut modes = Vec::new();
    for (m, label) in comp.modes.iter().enumerate() {
        let switching = switching_delays(label, c.classify.horizon).ok();
        if let Some(s) = &switching {
            for (kind, seq) in [("destabilizing", &s.destabilizing), ("stabilizing", &s.stabilizing)] {
                for (j, tau) in seq.iter().enumerate() {
                    rows.push(vec![
                        Cell::U(m),
                        Cell::F(label.lambda),
                        Cell::S(kind.into()),
                        Cell::U(j),
                        Cell::F(*tau),
                    ]);
                }
            }
        }
        modes.push(json!({
            "lambda": label.lambda,
            "class": label.class.to_string(),
            "effective_gains": label.effective_gains,
            "crossing_frequencies": label.crossing.frequencies,
            "crossing_phases": label.crossing.phases,
            "margin": finite_or_label(label.margin),
            "switching": switching.as_ref().map(|s| json!({
                "destabilizing": s.destabilizing,
                "stabilizing": s.stabilizing,
                "unstable_at_zero_delay": s.unstable_at_zero_delay,
                "stable_windows": s.stable_windows(),
                "stable_at_configured_delay": s.predicted_stable(c.delay.tau),
            })),
        }));
    }
    out.json(
        "classify.json",
        &json!({
            "composition": {
                "zero": comp.zero,
                "class_i": comp.class_i,
                "class_ii": comp.class_ii,
                "class_u": comp.class_u,
                "boundary": comp.boundary,
            },
            "absolutely_stable": comp.absolutely_stable,
            "unstable_for_all_delays": comp.unstable_for_all_delays,
            "modes": modes,
        }),
    )?;
    out.csv("switching_delays.csv", &["mode", "lambda", "sequence", "j", "tau"], rows)?;
    Ok(())
}

pub fn acs(c: &RunConfig, out: &mut Artifacts) -> Outcome {
    let tau = c.delay.tau;
    let n = c.acs.samples;
    let w = c.acs.omega_max;
    let mut rows = Vec::new();
    for (m, lambda) in modes(c)?.into_iter().enumerate() {
        let mode = mode_system(&c.gains.p0, &c.gains.pbar, lambda, tau)?;
        for k in 0..n {
            let omega = -w + 2.0 * w * k as f64 / (n - 1) as f64;
            let gamma = match acs_gamma(omega, &mode) {
                Ok(Gamma::Finite(g)) => g,
                Ok(Gamma::PositiveInfinity) => f64::INFINITY,
                // the delay channel vanishes at this single frequency
                Err(Error::DegenerateDelayChannel { .. }) => f64::NAN,
                Err(e) => return Err(e.into()),
            };
            let re_mu = if tau > 0.0 { gamma / tau } else { f64::NAN };
            rows.push(vec![
                Cell::U(m),
                Cell::F(lambda.re),
                Cell::F(lambda.im),
                Cell::F(omega),
                Cell::F(gamma),
                Cell::F(re_mu),
            ]);
        }
    }
    out.csv("acs.csv", &["mode", "lambda_re", "lambda_im", "omega", "gamma", "re_mu"], rows)?;
    Ok(())
}

pub fn spectrum(c: &RunConfig, out: &mut Artifacts) -> Outcome {
    let tau = c.delay.tau;
    let d = RootWindow::default_for_delay(tau);
    let s = &c.spectrum;
    let window = RootWindow::new(
        s.re_min.unwrap_or(d.re_min),
        s.re_max.unwrap_or(d.re_max),
        s.im_max.unwrap_or(d.im_max),
    )
    .map_err(|e| Failure::Input(format!("spectrum: {e}")))?;
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (m, lambda) in modes(c)?.into_iter().enumerate() {
        let mode = mode_system(&c.gains.p0, &c.gains.pbar, lambda, tau)?;
        let result = char_roots(&mode, &window)?;
        for r in &result.roots {
            rows.push(vec![
                Cell::U(m),
                Cell::F(lambda.re),
                Cell::F(lambda.im),
                Cell::F(r.mu.re),
                Cell::F(r.mu.im),
                Cell::U(r.multiplicity),
                Cell::F(r.residual),
            ]);
        }
        summary.push(json!({
            "lambda": [lambda.re, lambda.im],
            "roots": result.total_multiplicity(),
            "max_real_part": result.max_real_part(),
            "unstable_roots": result.roots.iter().filter(|r| r.mu.re > 0.0).map(|r| r.multiplicity).sum::<usize>(),
        }));
    }
    out.csv(
        "spectrum.csv",
        &["mode", "lambda_re", "lambda_im", "re_mu", "im_mu", "multiplicity", "residual"],
        rows,
    )?;
    out.json(
        "spectrum.json",
        &json!({ "window": window, "modes": summary }),
    )?;
    Ok(())
}

pub fn bifurcation(c: &RunConfig, out: &mut Artifacts) -> Outcome {
    let tau = c.delay.tau;
    let (p0, pbar) = (&c.gains.p0, &c.gains.pbar);
    let grid = delay_grid(tau, c.bifurcation.omega_max);
    match c.bifurcation.plane {
        Plane::K0H0 => {
            let curve = k0h0_boundary(p0.k0_tau, p0.h0_tau, tau, &grid)?;
            out.csv("bifurcation.csv", &["segment", "omega", "k0", "h0"], curve_rows(&curve, false))?;
        }
        Plane::LambdaH0 => {
            let curve = lambda_h0_boundary(p0, pbar, tau, &grid)?;
            out.csv("bifurcation.csv", &["segment", "omega", "lambda", "h0"], curve_rows(&curve, false))?;
        }
        Plane::LambdaPlane => {
            let curve = lambda_plane_boundary(p0, pbar, tau, &grid)?;
            out.csv(
                "bifurcation.csv",
                &["segment", "omega", "re_lambda", "im_lambda", "radius"],
                curve_rows(&curve, true),
            )?;
        }
        Plane::Contours => {
            let levels = if c.bifurcation.levels.is_empty() {
                vec![0.0]
            } else {
                c.bifurcation.levels.clone()
            };
            let mut rows = Vec::new();
            for level in levels {
                let curve = match contour_lines(level, p0, pbar, tau, &grid) {
                    Ok(curve) => curve,
                    Err(Error::EmptyCurve) => continue,
                    Err(e) => return Err(e.into()),
                };
                for mut row in curve_rows(&curve, false) {
                    row.insert(0, Cell::F(level));
                    rows.push(row);
                }
            }
            out.csv("bifurcation.csv", &["level", "segment", "omega", "re_lambda", "im_lambda"], rows)?;
        }
    }
    Ok(())
}

pub fn msf(c: &RunConfig, out: &mut Artifacts) -> Outcome {
    let tau = c.delay.tau;
    let (p0, pbar) = (&c.gains.p0, &c.gains.pbar);
    let window = c.msf.window();
    let omega_grid = if tau > 0.0 {
        delay_grid(tau, Some(window / tau))
    } else {
        default_omega_grid(tau)
    };
    let mut report = serde_json::Map::new();
    report.insert("omega_window".into(), json!(window));

    let boundary = if c.msf.field {
        let field = msf_field_with(p0, pbar, tau, &c.msf.grid.spec(), &omega_grid)?;
        let g = field.grid;
        let mut rows = Vec::with_capacity(g.len());
        for j in 0..g.n_im {
            for i in 0..g.n_re {
                let k = g.index(i, j);
                rows.push(vec![
                    Cell::F(g.re_at(i)),
                    Cell::F(g.im_at(j)),
                    Cell::F(field.values[k]),
                    Cell::U(field.region_mask[k] as usize),
                ]);
            }
        }
        out.csv("field.csv", &["re_lambda", "im_lambda", "lambda_max", "in_region"], rows)?;
        report.insert("origin_value".into(), finite_or_label(field.origin_value));
        report.insert("region_nodes".into(), json!(field.region_size()));
        if let Err(e) = field.require_stable_seed() {
            eprintln!("warning: {e}");
            report.insert("warning".into(), json!(e.to_string()));
        }
        field.boundary
    } else {
        match lambda_plane_boundary(p0, pbar, tau, &omega_grid) {
            Ok(curve) => curve,
            Err(Error::EmptyCurve) => ParametricCurve {
                kind: formstab_core::bifurcation::CurveKind::LambdaPlaneBoundary,
                level: 0.0,
                samples: Vec::new(),
                gaps: Vec::new(),
            },
            Err(e) => return Err(e.into()),
        }
    };
    out.csv(
        "boundary.csv",
        &["segment", "omega", "re_lambda", "im_lambda", "radius"],
        curve_rows(&boundary, true),
    )?;

    let asymptote = if tau > 0.0 {
        large_delay_asymptote(p0, pbar, tau, window)
    } else {
        Err(Error::InvalidParameter("the large-delay asymptote needs tau > 0".into()))
    };
    match asymptote {
        Ok(curve) => {
            let rows = omega_grid.iter().map(|&w| {
                let z = curve.evaluate(w);
                vec![Cell::F(w), Cell::F(z.re), Cell::F(z.im), Cell::F(z.norm())]
            });
            out.csv("asymptote.csv", &["omega", "re_lambda", "im_lambda", "radius"], rows)?;
            let rows = curve.intersections.iter().map(|s| {
                let angle = curve.angles.iter().find(|a| a.j == s.j);
                vec![
                    Cell::U(s.j),
                    Cell::F(s.seed),
                    Cell::F(s.omega),
                    Cell::F(s.lambda.re),
                    Cell::F(s.lambda.im),
                    Cell::F(angle.map_or(f64::NAN, |a| a.numeric)),
                    Cell::F(angle.map_or(f64::NAN, |a| a.asymptotic)),
                ]
            });
            out.csv(
                "intersections.csv",
                &["j", "seed", "omega", "re_lambda", "im_lambda", "angle_numeric", "angle_asymptotic"],
                rows,
            )?;
            let metric = circle_convergence_metric(p0, pbar, tau).map(finite_or_label).unwrap_or(Value::Null);
            report.insert(
                "asymptote".into(),
                json!({
                    "lambda0": [curve.lambda0.re, curve.lambda0.im],
                    "radius": curve.lambda0.norm(),
                    "slope": curve.slope,
                    "max_deviation": curve.max_deviation,
                    "error_constant": curve.error_constant,
                    "circle_metric": metric,
                }),
            );
        }
        Err(e @ (Error::TheoremHypothesis(_) | Error::InvalidParameter(_))) => {
            report.insert("asymptote".into(), Value::Null);
            report.insert("asymptote_unavailable".into(), json!(e.to_string()));
        }
        Err(e) => return Err(e.into()),
    }
    out.json("msf.json", &Value::Object(report))?;
    Ok(())
}

pub fn simulate(c: &RunConfig, out: &mut Artifacts) -> Outcome {
    let s = &c.simulation;
    let tau = c.delay.tau;
    let topo = match topology(c)? {
        Some(t) => t,
        None => Topology::uncoupled(s.formation.as_ref().map_or(3, |f| f.offsets.len())),
    };
    let n = topo.n_agents;
    let formation = s.formation.clone().unwrap_or_else(|| {
        if n == 3 {
            FormationSpec::triangle(1.0)
        } else {
            FormationSpec {
                offsets: vec![[0.0; 3]; n],
                scale: 1.0,
            }
        }
    });
    let mut config = SimulationConfig::new(
        c.gains.p0,
        c.gains.pbar,
        topo,
        formation,
        s.trajectory.clone(),
        tau,
        s.t_end,
    );
    config.dt = s.dt.unwrap_or_else(|| default_dt(tau));
    config.history = s.history;
    config.perturbation = s.perturbation.clone().unwrap_or_else(|| default_perturbation(n));
    config.log_stride = s.log_stride;
    config.validate().map_err(|e| Failure::Input(format!("simulation: {e}")))?;
    let log = integrate(&config)?;

    let mut rows = Vec::with_capacity(log.len() * n);
    for (k, t) in log.t.iter().enumerate() {
        for i in 0..n {
            let (x, v) = (log.positions[k][i], log.velocities[k][i]);
            rows.push(vec![
                Cell::F(*t),
                Cell::U(i),
                Cell::F(x[0]),
                Cell::F(x[1]),
                Cell::F(x[2]),
                Cell::F(v[0]),
                Cell::F(v[1]),
                Cell::F(v[2]),
            ]);
        }
    }
    out.csv("trajectory.csv", &["t", "agent_id", "x", "y", "z", "vx", "vy", "vz"], rows)?;
    let rows = (0..log.len()).map(|k| {
        vec![
            Cell::F(log.t[k]),
            Cell::F(log.tracking_error[k]),
            Cell::F(log.formation_error[k]),
            Cell::F(log.disagreement_error[k]),
        ]
    });
    out.csv(
        "errors.csv",
        &["t", "tracking_error", "formation_error", "disagreement_error"],
        rows,
    )?;
    let t_last = log.t.last().copied().unwrap_or(0.0);
    let rate = decay_rate_fit(&log, (0.5 * t_last, t_last)).ok();
    out.json(
        "simulate.json",
        &json!({
            "agents": n,
            "dt": log.dt,
            "samples": log.len(),
            "diverged_at": log.diverged_at,
            "final_tracking_error": log.tracking_error.last().copied().map(finite_or_label),
            "tracking_rate_second_half": rate,
        }),
    )?;
    Ok(())
}

