//! Direct simulation of the agents under the delayed PD controller: RK4 with
//! the method of steps and cubic Hermite lookups into the stored history.

use std::collections::VecDeque;

use nalgebra::{DMatrix, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{laplacian_eigenvalues, CouplingGainVector, FormationSpec, GainVector, Topology};

/// Leader path `R0(t)`: per-axis polynomial coefficients in ascending powers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySpec {
    pub coefficients: [Vec<f64>; 3],
}

impl TrajectorySpec {
    pub const MAX_DEGREE: usize = 4;

    pub fn stationary() -> Self {
        Self {
            coefficients: [vec![], vec![], vec![]],
        }
    }

    /// `R0(t) = (0.005 (t^2 + 1), 0.5 t, 0.8 t)`.
    pub fn parabola() -> Self {
        Self {
            coefficients: [vec![0.005, 0.0, 0.005], vec![0.0, 0.5], vec![0.0, 0.8]],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for c in &self.coefficients {
            if c.len() > Self::MAX_DEGREE + 1 {
                return Err(Error::InvalidParameter(format!(
                    "trajectory degree {} exceeds {}",
                    c.len() - 1,
                    Self::MAX_DEGREE
                )));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidParameter("trajectory coefficients must be finite".into()));
            }
        }
        Ok(())
    }

    fn eval(&self, t: f64, derivative: usize) -> Vector3<f64> {
        Vector3::from_fn(|axis, _| {
            let c = &self.coefficients[axis];
            let mut acc = 0.0;
            for (n, &a) in c.iter().enumerate().skip(derivative).rev() {
                let falling: f64 = (0..derivative).map(|d| (n - d) as f64).product();
                acc = acc * t + a * falling;
            }
            acc
        })
    }

    pub fn position(&self, t: f64) -> Vector3<f64> {
        self.eval(t, 0)
    }

    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        self.eval(t, 1)
    }

    pub fn acceleration(&self, t: f64) -> Vector3<f64> {
        self.eval(t, 2)
    }
}

/// State on `[-tau, 0]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryPolicy {
    /// Agents at rest at their perturbed initial positions.
    #[default]
    AtRest,
    /// Agents follow their targets shifted by the initial perturbation, so
    /// the error history is constant with zero velocity error.
    Tracking,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    pub p0: GainVector,
    pub pbar: CouplingGainVector,
    pub topology: Topology,
    pub formation: FormationSpec,
    pub trajectory: TrajectorySpec,
    pub tau: f64,
    pub t_end: f64,
    /// Requested step; shortened so that `tau` is an integer number of steps.
    pub dt: f64,
    pub history: HistoryPolicy,
    /// Initial position error of each agent.
    pub perturbation: Vec<[f64; 3]>,
    /// Keep every `log_stride`-th step in the log.
    pub log_stride: usize,
}

/// `min(tau/20, 0.01)`, or 0.01 without delay.
pub fn default_dt(tau: f64) -> f64 {
    if tau > 0.0 {
        (tau / 20.0).min(0.01)
    } else {
        0.01
    }
}

/// Agent `i` displaced by a unit step along axis `i mod 3`.
pub fn default_perturbation(n_agents: usize) -> Vec<[f64; 3]> {
    (0..n_agents)
        .map(|i| {
            let mut d = [0.0; 3];
            d[i % 3] = 1.0;
            d
        })
        .collect()
}

impl SimulationConfig {
    pub fn new(
        p0: GainVector,
        pbar: CouplingGainVector,
        topology: Topology,
        formation: FormationSpec,
        trajectory: TrajectorySpec,
        tau: f64,
        t_end: f64,
    ) -> Self {
        let n = topology.n_agents;
        Self {
            p0,
            pbar,
            topology,
            formation,
            trajectory,
            tau,
            t_end,
            dt: default_dt(tau),
            history: HistoryPolicy::AtRest,
            perturbation: default_perturbation(n),
            log_stride: 1,
        }
    }

    pub fn n_agents(&self) -> usize {
        self.topology.n_agents
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        self.p0.validate()?;
        self.pbar.validate()?;
        self.trajectory.validate()?;
        let n = self.n_agents();
        self.formation.validate(n)?;
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return bad(format!("delay must be finite and nonnegative, got {}", self.tau));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return bad(format!("step must be positive, got {}", self.dt));
        }
        if self.tau > 0.0 && self.dt > self.tau / 8.0 {
            return bad(format!("step {} exceeds tau/8 = {}", self.dt, self.tau / 8.0));
        }
        if !(self.t_end.is_finite() && self.t_end > self.tau && self.t_end > 0.0) {
            return bad(format!("horizon {} must exceed the delay {}", self.t_end, self.tau));
        }
        if self.perturbation.len() != n || self.perturbation.iter().flatten().any(|v| !v.is_finite()) {
            return bad(format!("perturbation needs {n} finite 3-vectors"));
        }
        if self.log_stride == 0 {
            return bad("log stride must be positive".into());
        }
        if self.topology.adjacency.nrows() != n || self.topology.laplacian.nrows() != n {
            return Err(Error::InvalidTopology("topology size mismatch".into()));
        }
        Ok(())
    }

    /// Step actually used: the largest `tau/m <= dt`.
    pub fn effective_dt(&self) -> f64 {
        if self.tau > 0.0 {
            self.tau / (self.tau / self.dt).ceil()
        } else {
            self.dt
        }
    }

    /// Target position of agent `i`.
    pub fn target(&self, i: usize, t: f64) -> Vector3<f64> {
        self.trajectory.position(t) + self.formation.offset(i)
    }

    fn history_state(&self, i: usize, t: f64) -> (AgentState, Vector3<f64>) {
        let d = Vector3::from(self.perturbation[i]);
        match self.history {
            HistoryPolicy::AtRest => (
                AgentState {
                    position: self.target(i, 0.0) + d,
                    velocity: Vector3::zeros(),
                },
                Vector3::zeros(),
            ),
            HistoryPolicy::Tracking => (
                AgentState {
                    position: self.target(i, t) + d,
                    velocity: self.trajectory.velocity(t),
                },
                self.trajectory.acceleration(t),
            ),
        }
    }
}

/// Controller output for every agent, including the leader feedforward.
pub fn control_input(
    now: &[AgentState],
    delayed: &[AgentState],
    t: f64,
    config: &SimulationConfig,
) -> Vec<Vector3<f64>> {
    let p0 = &config.p0;
    let pb = &config.pbar;
    let tr = &config.trajectory;
    let (r0, v0, u0) = (tr.position(t), tr.velocity(t), tr.acceleration(t));
    let (r0d, v0d) = (tr.position(t - config.tau), tr.velocity(t - config.tau));
    let a = &config.topology.adjacency;
    (0..now.len())
        .map(|i| {
            let s_i = config.formation.offset(i);
            let mut coupling = Vector3::zeros();
            for j in 0..now.len() {
                let w = a[(i, j)];
                if j == i || w == 0.0 {
                    continue;
                }
                let ds = s_i - config.formation.offset(j);
                coupling += w
                    * (pb.k * (now[i].position - now[j].position - ds)
                        + pb.k_tau * (delayed[i].position - delayed[j].position - ds)
                        + pb.h * (now[i].velocity - now[j].velocity)
                        + pb.h_tau * (delayed[i].velocity - delayed[j].velocity));
            }
            -coupling
                - p0.k0 * (now[i].position - (r0 + s_i))
                - p0.k0_tau * (delayed[i].position - (r0d + s_i))
                - p0.h0 * (now[i].velocity - v0)
                - p0.h0_tau * (delayed[i].velocity - v0d)
                + u0
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryLog {
    pub t: Vec<f64>,
    /// `positions[sample][agent]`.
    pub positions: Vec<Vec<[f64; 3]>>,
    pub velocities: Vec<Vec<[f64; 3]>>,
    /// `||e||` over all agents and axes.
    pub tracking_error: Vec<f64>,
    /// `||(L x 1_3) e||`.
    pub formation_error: Vec<f64>,
    /// `||e - 1 x mean(e)||`; meaningful also without coupling.
    pub disagreement_error: Vec<f64>,
    /// Time at which a non-finite state was met.
    pub diverged_at: Option<f64>,
    /// Step used by the integrator.
    pub dt: f64,
}

impl TrajectoryLog {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn diverged(&self) -> bool {
        self.diverged_at.is_some()
    }

    /// Position and velocity errors `(e_i, xi_i)` at sample `k`.
    pub fn errors(&self, config: &SimulationConfig, k: usize) -> Vec<(Vector3<f64>, Vector3<f64>)> {
        let t = self.t[k];
        let v0 = config.trajectory.velocity(t);
        (0..config.n_agents())
            .map(|i| {
                (
                    Vector3::from(self.positions[k][i]) - config.target(i, t),
                    Vector3::from(self.velocities[k][i]) - v0,
                )
            })
            .collect()
    }
}

/// Flat state layout: agent `i` owns `[6i, 6i+6)`, position then velocity.
type Flat = Vec<f64>;

fn unpack(x: &[f64]) -> Vec<AgentState> {
    x.chunks_exact(6)
        .map(|c| AgentState {
            position: Vector3::new(c[0], c[1], c[2]),
            velocity: Vector3::new(c[3], c[4], c[5]),
        })
        .collect()
}

fn pack(states: &[AgentState], out: &mut Flat) {
    out.clear();
    for s in states {
        out.extend(s.position.iter());
        out.extend(s.velocity.iter());
    }
}

/// Stored samples on a uniform grid `t_n = n dt` with their derivatives.
struct History {
    dt: f64,
    first: usize,
    points: VecDeque<(Flat, Flat)>,
}

impl History {
    fn state_at(&self, s: f64, config: &SimulationConfig) -> Vec<AgentState> {
        if s < 0.0 || self.points.is_empty() {
            return (0..config.n_agents())
                .map(|i| config.history_state(i, s.min(0.0)).0)
                .collect();
        }
        let x = s / self.dt;
        let nearest = x.round();
        let (n, theta) = if (x - nearest).abs() <= 1e-9 * nearest.max(1.0) {
            (nearest as usize, 0.0)
        } else {
            (x.floor() as usize, x - x.floor())
        };
        let k = n.saturating_sub(self.first).min(self.points.len() - 1);
        let (y0, d0) = &self.points[k];
        if theta == 0.0 || k + 1 >= self.points.len() {
            return unpack(y0);
        }
        let (y1, d1) = &self.points[k + 1];
        let h = self.dt;
        let t2 = theta * theta;
        let t3 = t2 * theta;
        let (h00, h10, h01, h11) = (2.0 * t3 - 3.0 * t2 + 1.0, t3 - 2.0 * t2 + theta, -2.0 * t3 + 3.0 * t2, t3 - t2);
        let y: Flat = (0..y0.len())
            .map(|m| h00 * y0[m] + h10 * h * d0[m] + h01 * y1[m] + h11 * h * d1[m])
            .collect();
        unpack(&y)
    }

    fn trim(&mut self, keep_from: f64) {
        while self.points.len() > 2 && ((self.first + 1) as f64) * self.dt < keep_from {
            self.points.pop_front();
            self.first += 1;
        }
    }
}

fn rhs(x: &[f64], t: f64, delayed: &[AgentState], config: &SimulationConfig) -> Flat {
    let now = unpack(x);
    let delayed: &[AgentState] = if config.tau == 0.0 { &now } else { delayed };
    let u = control_input(&now, delayed, t, config);
    let mut out = Vec::with_capacity(x.len());
    for (s, ui) in now.iter().zip(&u) {
        out.extend(s.velocity.iter());
        out.extend(ui.iter());
    }
    out
}

fn axpy(x: &[f64], a: f64, k: &[f64]) -> Flat {
    x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect()
}

/// Integrates the agents from `t = 0` to `t_end`.
///
/// A non-finite state stops the run; the partial log is returned with
/// `diverged_at` set.
pub fn integrate(config: &SimulationConfig) -> Result<TrajectoryLog> {
    config.validate()?;
    let n = config.n_agents();
    let dt = config.effective_dt();
    let steps = (config.t_end / dt).ceil() as usize;
    let laplacian = &config.topology.laplacian;
    let mut log = TrajectoryLog {
        t: Vec::new(),
        positions: Vec::new(),
        velocities: Vec::new(),
        tracking_error: Vec::new(),
        formation_error: Vec::new(),
        disagreement_error: Vec::new(),
        diverged_at: None,
        dt,
    };
    let initial: Vec<AgentState> = (0..n).map(|i| config.history_state(i, 0.0).0).collect();
    let mut x = Flat::with_capacity(6 * n);
    pack(&initial, &mut x);
    let mut history = History {
        dt,
        first: 0,
        points: VecDeque::new(),
    };
    let delayed_at = |h: &History, t: f64| -> Vec<AgentState> {
        if config.tau == 0.0 {
            Vec::new()
        } else {
            h.state_at(t - config.tau, config)
        }
    };
    for step in 0..=steps {
        let t = step as f64 * dt;
        if x.iter().any(|v| !v.is_finite()) {
            log.diverged_at = Some(t);
            break;
        }
        let k1 = rhs(&x, t, &delayed_at(&history, t), config);
        if step % config.log_stride == 0 || step == steps {
            record(&mut log, config, laplacian, t, &x);
        }
        history.points.push_back((x.clone(), k1.clone()));
        if step == steps {
            break;
        }
        history.trim(t - config.tau - dt);
        let th = t + 0.5 * dt;
        let mid_delayed = delayed_at(&history, th);
        let k2 = rhs(&axpy(&x, 0.5 * dt, &k1), th, &mid_delayed, config);
        let k3 = rhs(&axpy(&x, 0.5 * dt, &k2), th, &mid_delayed, config);
        let k4 = rhs(&axpy(&x, dt, &k3), t + dt, &delayed_at(&history, t + dt), config);
        for m in 0..x.len() {
            x[m] += dt / 6.0 * (k1[m] + 2.0 * k2[m] + 2.0 * k3[m] + k4[m]);
        }
    }
    Ok(log)
}

fn record(log: &mut TrajectoryLog, config: &SimulationConfig, laplacian: &DMatrix<f64>, t: f64, x: &[f64]) {
    let states = unpack(x);
    let n = states.len();
    let e: Vec<Vector3<f64>> = (0..n).map(|i| states[i].position - config.target(i, t)).collect();
    let mean = e.iter().sum::<Vector3<f64>>() / n as f64;
    let tracking = e.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
    let formation = (0..n)
        .map(|i| (0..n).map(|j| laplacian[(i, j)] * e[j]).sum::<Vector3<f64>>().norm_squared())
        .sum::<f64>()
        .sqrt();
    let disagreement = e.iter().map(|v| (v - mean).norm_squared()).sum::<f64>().sqrt();
    log.t.push(t);
    log.positions.push(states.iter().map(|s| s.position.into()).collect());
    log.velocities.push(states.iter().map(|s| s.velocity.into()).collect());
    log.tracking_error.push(tracking);
    log.formation_error.push(formation);
    log.disagreement_error.push(disagreement);
}

/// Least-squares slope of `ln y` against `t` over `window`.
pub fn log_slope_fit(t: &[f64], y: &[f64], window: (f64, f64)) -> Result<f64> {
    let mut pts = Vec::new();
    for (&ti, &yi) in t.iter().zip(y) {
        if ti < window.0 || ti > window.1 {
            continue;
        }
        if !(yi.is_finite() && yi > f64::MIN_POSITIVE) {
            return Err(Error::FitWindowExhausted(format!("error norm is {yi} at t = {ti}")));
        }
        pts.push((ti, yi.ln()));
    }
    if pts.len() < 2 {
        return Err(Error::FitWindowExhausted(format!(
            "{} samples in [{}, {}]",
            pts.len(),
            window.0,
            window.1
        )));
    }
    let m = pts.len() as f64;
    let (st, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t, b + y));
    let (tm, ym) = (st / m, sy / m);
    let (num, den) = pts
        .iter()
        .fold((0.0, 0.0), |(n, d), (t, y)| (n + (t - tm) * (y - ym), d + (t - tm) * (t - tm)));
    if den == 0.0 {
        return Err(Error::FitWindowExhausted("window has zero width".into()));
    }
    Ok(num / den)
}

/// Exponential rate of the tracking error `||e||` over `window`.
pub fn decay_rate_fit(log: &TrajectoryLog, window: (f64, f64)) -> Result<f64> {
    log_slope_fit(&log.t, &log.tracking_error, window)
}

/// Laplacian eigenvalues and, per eigenvalue, the norm of the error projected
/// onto its eigenvector (all three axes) at every log sample.
pub fn modal_error_norms(log: &TrajectoryLog, config: &SimulationConfig) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = config.n_agents();
    let eig = laplacian_eigenvalues(&config.topology)?;
    if eig.iter().any(|z| z.im.abs() > 1e-9) {
        return Err(Error::UnsupportedTopology("modal projection needs a real Laplacian spectrum".into()));
    }
    let lambdas: Vec<f64> = eig.iter().map(|z: &Complex64| z.re).collect();
    let l = &config.topology.laplacian;
    let scale = l.amax().max(1.0);
    let mut h = DMatrix::<f64>::zeros(n, n);
    let mut col = 0;
    let mut distinct: Vec<f64> = Vec::new();
    for &lam in &lambdas {
        if distinct.iter().any(|d| (d - lam).abs() <= 1e-9 * scale) {
            continue;
        }
        distinct.push(lam);
        let mult = lambdas.iter().filter(|x| (*x - lam).abs() <= 1e-9 * scale).count();
        let shifted = l - DMatrix::identity(n, n) * lam;
        let svd = shifted.svd(false, true);
        let v_t = svd.v_t.ok_or_else(|| Error::NumericalFailure {
            context: "Laplacian null space".into(),
            residual: f64::NAN,
        })?;
        let null: Vec<usize> = (0..n).filter(|&k| svd.singular_values[k] <= 1e-9 * scale).collect();
        if null.len() != mult {
            return Err(Error::UnsupportedTopology("Laplacian is not diagonalizable".into()));
        }
        for k in null {
            h.set_column(col, &v_t.row(k).transpose());
            col += 1;
        }
    }
    let h_inv = h.clone().try_inverse().ok_or_else(|| Error::NumericalFailure {
        context: "Laplacian eigenvector matrix is singular".into(),
        residual: f64::NAN,
    })?;
    let mut norms = vec![Vec::with_capacity(log.len()); n];
    for k in 0..log.len() {
        let e = log.errors(config, k);
        let mut sq = vec![0.0; n];
        for axis in 0..3 {
            let v = nalgebra::DVector::from_iterator(n, e.iter().map(|(p, _)| p[axis]));
            let c = &h_inv * v;
            for (m, s) in sq.iter_mut().enumerate() {
                *s += c[m] * c[m];
            }
        }
        for (m, s) in sq.into_iter().enumerate() {
            norms[m].push(s.sqrt());
        }
    }
    let mut ordered: Vec<f64> = Vec::with_capacity(n);
    for &d in &distinct {
        let mult = lambdas.iter().filter(|x| (*x - d).abs() <= 1e-9 * scale).count();
        ordered.extend(std::iter::repeat(d).take(mult));
    }
    Ok((ordered, norms))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{laplacian_from_adjacency, mode_system, ModeSystem};
    use crate::spectrum::lambda_max;
    use nalgebra::dmatrix;

    fn triangle() -> Topology {
        laplacian_from_adjacency(&dmatrix![0.0, 2.0, 1.0; 2.0, 0.0, 1.0; 2.0, 1.0, 0.0]).unwrap()
    }

    fn single(p0: GainVector, tau: f64, t_end: f64) -> SimulationConfig {
        let mut c = SimulationConfig::new(
            p0,
            CouplingGainVector::ZERO,
            Topology::uncoupled(1),
            FormationSpec {
                offsets: vec![[0.0; 3]],
                scale: 1.0,
            },
            TrajectorySpec::stationary(),
            tau,
            t_end,
        );
        c.history = HistoryPolicy::Tracking;
        c
    }

    fn coupled(tau: f64, t_end: f64) -> SimulationConfig {
        let mut c = SimulationConfig::new(
            GainVector::new(2.0, 3.0, 1.5, 1.2),
            CouplingGainVector::new(3.0, 3.0, -0.5, 0.0),
            triangle(),
            FormationSpec::triangle(1.0),
            TrajectorySpec::parabola(),
            tau,
            t_end,
        );
        c.history = HistoryPolicy::Tracking;
        c
    }

    #[test]
    fn polynomial_trajectory() {
        let tr = TrajectorySpec::parabola();
        assert_eq!(tr.position(2.0), Vector3::new(0.025, 1.0, 1.6));
        assert_eq!(tr.velocity(2.0), Vector3::new(0.02, 0.5, 0.8));
        assert_eq!(tr.acceleration(2.0), Vector3::new(0.01, 0.0, 0.0));
        let quartic = TrajectorySpec {
            coefficients: [vec![1.0, 0.0, 0.0, 0.0, 2.0], vec![], vec![0.0, 0.0, 0.0, 1.0]],
        };
        assert_eq!(quartic.acceleration(1.5), Vector3::new(24.0 * 2.25, 0.0, 9.0));
        let too_high = TrajectorySpec {
            coefficients: [vec![0.0; 6], vec![], vec![]],
        };
        assert!(too_high.validate().is_err());
    }

    #[test]
    fn control_input_examples() {
        let cfg = coupled(2.0, 10.0);
        let t = 3.0;
        let on_target = |s: f64| -> Vec<AgentState> {
            (0..3)
                .map(|i| AgentState {
                    position: cfg.target(i, s),
                    velocity: cfg.trajectory.velocity(s),
                })
                .collect()
        };
        let u = control_input(&on_target(t), &on_target(t - cfg.tau), t, &cfg);
        for ui in &u {
            assert!((ui - cfg.trajectory.acceleration(t)).norm() < 1e-12);
        }
        // equal errors on all agents: the coupling sum vanishes
        let shift = Vector3::new(0.3, -0.2, 0.1);
        let moved = |s: f64| -> Vec<AgentState> {
            on_target(s)
                .into_iter()
                .map(|a| AgentState {
                    position: a.position + shift,
                    ..a
                })
                .collect()
        };
        let u = control_input(&moved(t), &moved(t - cfg.tau), t, &cfg);
        let leader_only = cfg.trajectory.acceleration(t) - (cfg.p0.k0 + cfg.p0.k0_tau) * shift;
        for ui in &u {
            assert!((ui - leader_only).norm() < 1e-12);
        }

        let one = single(GainVector::new(2.0, 3.0, 0.7, 0.4), 1.0, 5.0);
        let now = [AgentState {
            position: Vector3::new(1.0, 0.0, 0.0),
            velocity: Vector3::zeros(),
        }];
        let delayed = [AgentState {
            position: Vector3::zeros(),
            velocity: Vector3::zeros(),
        }];
        let u = control_input(&now, &delayed, 0.5, &one);
        assert_eq!(u[0], Vector3::new(-2.0, 0.0, 0.0));
    }

    #[test]
    fn undelayed_decay_rate() {
        let mut cfg = single(GainVector::new(2.0, 3.0, 0.0, 0.0), 0.0, 20.0);
        cfg.perturbation = vec![[1.0, 0.0, 0.0]];
        let log = integrate(&cfg).unwrap();
        let rate = decay_rate_fit(&log, (3.0, 20.0)).unwrap();
        assert!((rate + 1.0).abs() <= 0.02, "{rate}");
        // e(t) = 2 e^{-t} - e^{-2t} for e(0) = 1, e'(0) = 0
        let k = log.t.iter().position(|&t| (t - 4.0).abs() < 1e-9).unwrap();
        let exact = 2.0 * (-4.0f64).exp() - (-8.0f64).exp();
        assert!((log.tracking_error[k] - exact).abs() < 1e-9);
    }

    #[test]
    fn linearity_in_initial_error() {
        // leader parked at the origin with zero offsets keeps positions on the
        // scale of the errors, so roundoff stays relative
        let mut cfg = coupled(1.5, 12.0);
        cfg.trajectory = TrajectorySpec::stationary();
        cfg.formation = FormationSpec {
            offsets: vec![[0.0; 3]; 3],
            scale: 1.0,
        };
        let base = integrate(&cfg).unwrap();
        for d in cfg.perturbation.iter_mut() {
            for v in d.iter_mut() {
                *v *= 2.0;
            }
        }
        let doubled = integrate(&cfg).unwrap();
        for (a, b) in base.tracking_error.iter().zip(&doubled.tracking_error) {
            assert!((b - 2.0 * a).abs() <= 1e-9 * (2.0 * a).max(1e-3), "{a} {b}");
        }
    }

    #[test]
    fn exact_tracking_without_initial_error() {
        let mut cfg = coupled(2.0, 20.0);
        cfg.perturbation = vec![[0.0; 3]; 3];
        let log = integrate(&cfg).unwrap();
        let worst = log.tracking_error.iter().cloned().fold(0.0, f64::max);
        assert!(worst <= 1e-9, "{worst}");
        for k in (0..log.len()).step_by(97) {
            assert!(log.errors(&cfg, k).iter().all(|(_, xi)| xi.norm() <= 1e-9));
        }
    }

    #[test]
    fn consensus_direction_ignores_coupling() {
        let mut cfg = coupled(4.5, 30.0);
        cfg.p0 = GainVector::new(6.0, 0.0, 0.3, 0.0);
        cfg.perturbation = vec![[0.4, -0.1, 0.25]; 3];
        let with = integrate(&cfg).unwrap();
        cfg.topology = Topology::uncoupled(3);
        let without = integrate(&cfg).unwrap();
        for (a, b) in with.tracking_error.iter().zip(&without.tracking_error) {
            assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        }
        assert!(with.disagreement_error.iter().all(|&d| d <= 1e-9));
    }

    #[test]
    fn logged_errors_match_definitions() {
        let cfg = coupled(3.0, 10.0);
        let log = integrate(&cfg).unwrap();
        let l = &cfg.topology.laplacian;
        for k in (0..log.len()).step_by(53) {
            let e = log.errors(&cfg, k);
            let tracking = e.iter().map(|(p, _)| p.norm_squared()).sum::<f64>().sqrt();
            assert!((tracking - log.tracking_error[k]).abs() <= 1e-9);
            let formation = (0..3)
                .map(|i| (0..3).map(|j| l[(i, j)] * e[j].0).sum::<Vector3<f64>>().norm_squared())
                .sum::<f64>()
                .sqrt();
            assert!((formation - log.formation_error[k]).abs() <= 1e-9);
        }
        assert_eq!(log.t[0], 0.0);
        assert!((log.t.last().unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn step_halving_order() {
        let run = |dt: f64| {
            let mut cfg = single(GainVector::new(2.0, 1.0, 0.8, 0.3), 1.0, 6.0);
            cfg.history = HistoryPolicy::AtRest;
            cfg.trajectory = TrajectorySpec::parabola();
            cfg.dt = dt;
            let log = integrate(&cfg).unwrap();
            let k = log.len() - 1;
            log.errors(&cfg, k)[0].0
        };
        let (a, b, c) = (run(0.1), run(0.05), run(0.025));
        let order = ((a - b).norm() / (b - c).norm()).log2();
        assert!(order >= 3.5, "observed order {order}");
    }

    #[test]
    fn modal_rates_match_spectrum() {
        let mut cfg = coupled(4.5, 80.0);
        cfg.p0 = GainVector::new(6.0, 0.0, 0.3, 0.0);
        cfg.log_stride = 10;
        let log = integrate(&cfg).unwrap();
        let (lambdas, norms) = modal_error_norms(&log, &cfg).unwrap();
        assert_eq!(lambdas.len(), 3);
        for (lam, series) in lambdas.iter().zip(&norms) {
            let expected = lambda_max(
                &mode_system(&cfg.p0, &cfg.pbar, Complex64::new(*lam, 0.0), cfg.tau).unwrap(),
                None,
            )
            .unwrap();
            // stop before the mode sinks to the roundoff floor of the positions
            let end = (10.0 + 18.0 / expected.abs()).min(80.0);
            let fitted = log_slope_fit(&log.t, series, (10.0, end)).unwrap();
            let tol = (0.05 * expected.abs()).max(0.02);
            assert!((fitted - expected).abs() <= tol, "lambda {lam}: {fitted} vs {expected}");
        }
    }

    #[test]
    fn unstable_run_grows() {
        let mut cfg = single(GainVector::new(6.0, 0.0, 0.3, 0.0), 5.7, 200.0);
        cfg.trajectory = TrajectorySpec::parabola();
        cfg.history = HistoryPolicy::AtRest;
        let log = integrate(&cfg).unwrap();
        let rate = decay_rate_fit(&log, (100.0, 200.0)).unwrap();
        let expected = lambda_max(&ModeSystem::uncoupled(&cfg.p0, 5.7).unwrap(), None).unwrap();
        assert!(rate > 0.0);
        assert!((rate - expected).abs() <= (0.05 * expected).max(0.02), "{rate} vs {expected}");
    }

    #[test]
    fn divergence_is_flagged() {
        let cfg = single(GainVector::new(-1e4, 0.0, 0.0, 0.0), 0.5, 50.0);
        let log = integrate(&cfg).unwrap();
        let at = log.diverged_at.expect("run should diverge");
        assert!(at < 50.0);
        assert_eq!(*log.t.last().unwrap() + log.dt, at);
    }

    #[test]
    fn invalid_configurations() {
        let mut cfg = single(GainVector::new(1.0, 1.0, 0.0, 0.0), 1.0, 5.0);
        cfg.dt = 0.2;
        assert!(integrate(&cfg).is_err());
        let cfg = single(GainVector::new(1.0, 1.0, 0.0, 0.0), 1.0, 0.5);
        assert!(integrate(&cfg).is_err());
        let mut cfg = single(GainVector::new(1.0, 1.0, 0.0, 0.0), 1.0, 5.0);
        cfg.perturbation.clear();
        assert!(integrate(&cfg).is_err());
    }

    #[test]
    fn fit_requires_positive_norms() {
        let t = [0.0, 1.0, 2.0];
        assert!(matches!(log_slope_fit(&t, &[1.0, 0.0, 1.0], (0.0, 2.0)), Err(Error::FitWindowExhausted(_))));
        assert!(matches!(log_slope_fit(&t, &[1.0, 1.0, 1.0], (5.0, 6.0)), Err(Error::FitWindowExhausted(_))));
        let y: Vec<f64> = t.iter().map(|s| (-0.5 * s).exp()).collect();
        assert!((log_slope_fit(&t, &y, (0.0, 2.0)).unwrap() + 0.5).abs() < 1e-12);
    }

    #[test]
    fn effective_step_divides_delay() {
        let mut cfg = single(GainVector::new(1.0, 1.0, 0.0, 0.0), 5.7, 20.0);
        assert_eq!(cfg.dt, 0.01);
        let dt = cfg.effective_dt();
        assert!(((5.7 / dt).round() - 5.7 / dt).abs() < 1e-9);
        cfg.tau = 0.1;
        cfg.dt = default_dt(0.1);
        assert_eq!(cfg.dt, 0.005);
    }
}
