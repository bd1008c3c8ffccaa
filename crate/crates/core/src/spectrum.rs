//! Characteristic roots of linear delay systems `x' = A x(t) + B x(t - tau)`.
//!
//! Roots are seeded from a Chebyshev collocation of the infinitesimal
//! generator on `[-tau, 0]` (plus cheap analytic seeds for the 2×2 mode
//! systems), polished by Newton on the characteristic function, and certified
//! complete by an argument-principle count on the window boundary.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, C64};
use crate::model::ModeSystem;

/// Rectangular search region `re_min <= Re mu <= re_max`, `|Im mu| <= im_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RootWindow {
    pub re_min: f64,
    pub re_max: f64,
    pub im_max: f64,
}

impl RootWindow {
    pub fn new(re_min: f64, re_max: f64, im_max: f64) -> Result<Self> {
        if !(re_min.is_finite() && re_max.is_finite() && im_max.is_finite())
            || re_min >= re_max
            || im_max <= 0.0
        {
            return Err(Error::InvalidParameter(format!(
                "invalid root window re=[{re_min}, {re_max}], |im|<={im_max}"
            )));
        }
        Ok(Self {
            re_min,
            re_max,
            im_max,
        })
    }

    /// Window wide enough for the asymptotic spectrum band and the
    /// low-frequency roots at the given delay. For very large delays the left
    /// edge is pulled in so that `|exp(-mu tau)|` stays representable.
    pub fn default_for_delay(tau: f64) -> Self {
        Self {
            re_min: (-(5.0f64).min(10.0 / tau.max(1.0)) - 2.0).max(-600.0 / tau.max(1.0)),
            re_max: 3.0,
            im_max: (4.0 * PI / tau.max(0.1)).max(10.0),
        }
    }

    pub fn contains(&self, z: C64) -> bool {
        z.re >= self.re_min && z.re <= self.re_max && z.im.abs() <= self.im_max
    }

    fn expanded(&self, by: f64) -> Self {
        Self {
            re_min: self.re_min - by,
            re_max: self.re_max + by,
            im_max: self.im_max + by,
        }
    }

    fn boundary_distance(&self, z: C64) -> f64 {
        (z.re - self.re_min)
            .abs()
            .min((z.re - self.re_max).abs())
            .min((z.im.abs() - self.im_max).abs())
    }

    fn corners(&self) -> [C64; 4] {
        [
            C64::new(self.re_min, -self.im_max),
            C64::new(self.re_max, -self.im_max),
            C64::new(self.re_max, self.im_max),
            C64::new(self.re_min, self.im_max),
        ]
    }
}

/// A characteristic root with the absolute residual of the characteristic
/// function at `mu`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CharacteristicRoot {
    pub mu: C64,
    pub residual: f64,
    pub multiplicity: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumResult {
    pub roots: Vec<CharacteristicRoot>,
    pub window: RootWindow,
    pub discretization_order: usize,
}

impl SpectrumResult {
    pub fn total_multiplicity(&self) -> usize {
        self.roots.iter().map(|r| r.multiplicity).sum()
    }

    pub fn max_real_part(&self) -> Option<f64> {
        self.roots.iter().map(|r| r.mu.re).reduce(f64::max)
    }
}

/// Value, `d/dmu` and a magnitude scale of a characteristic function at one point.
#[derive(Debug, Clone, Copy)]
pub struct CharEval {
    pub value: C64,
    pub derivative: C64,
    pub scale: f64,
}

/// A linear single-delay system whose characteristic function can be evaluated.
pub trait DelaySystem: Sync {
    fn dim(&self) -> usize;
    fn tau(&self) -> f64;
    fn instantaneous(&self) -> DMatrix<C64>;
    fn delayed(&self) -> DMatrix<C64>;
    fn is_real(&self) -> bool;
    fn eval(&self, mu: C64) -> CharEval;
    /// Every root with `Re mu >= re_min` satisfies `|mu| <= bound`.
    fn modulus_bound(&self, re_min: f64) -> f64;
    /// Analytic starting points for Newton in addition to collocation.
    fn seeds(&self, _window: &RootWindow) -> Vec<C64> {
        Vec::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootFinderOptions {
    pub initial_order: usize,
    pub max_order: usize,
    /// Acceptance threshold for `|f(mu)| / scale(mu)`.
    pub tolerance: f64,
    pub merge_radius: f64,
}

impl Default for RootFinderOptions {
    fn default() -> Self {
        Self {
            initial_order: 64,
            max_order: 512,
            tolerance: 1e-10,
            merge_radius: 1e-8,
        }
    }
}

/// Coefficients of `f(mu) = mu^2 + p1 mu + p0 + E (q1 mu + q0) + E^2 r0`,
/// `E = exp(-mu tau)`, which equals `det[mu I - A - B E]` for 2×2 blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModePolynomial {
    pub p1: C64,
    pub p0: C64,
    pub q1: C64,
    pub q0: C64,
    pub r0: C64,
}

impl ModePolynomial {
    pub fn from_matrices(a: &Matrix2<C64>, b: &Matrix2<C64>) -> Self {
        let tr_a = a[(0, 0)] + a[(1, 1)];
        let tr_b = b[(0, 0)] + b[(1, 1)];
        let det_a = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
        let det_b = b[(0, 0)] * b[(1, 1)] - b[(0, 1)] * b[(1, 0)];
        let mixed = a[(0, 0)] * b[(1, 1)] + a[(1, 1)] * b[(0, 0)]
            - a[(0, 1)] * b[(1, 0)]
            - a[(1, 0)] * b[(0, 1)];
        Self {
            p1: -tr_a,
            p0: det_a,
            q1: -tr_b,
            q0: mixed,
            r0: det_b,
        }
    }

    /// Instantaneous part `mu^2 + p1 mu + p0`.
    pub fn p(&self, mu: C64) -> C64 {
        mu * mu + self.p1 * mu + self.p0
    }

    /// Delayed part `q1 mu + q0` (coefficient of `E`).
    pub fn q(&self, mu: C64) -> C64 {
        self.q1 * mu + self.q0
    }

    pub fn rank_one(&self) -> bool {
        self.r0 == C64::new(0.0, 0.0)
    }

    pub fn delay_free(&self) -> bool {
        self.rank_one() && self.q1 == C64::new(0.0, 0.0) && self.q0 == C64::new(0.0, 0.0)
    }
}

impl ModeSystem {
    pub fn polynomial(&self) -> ModePolynomial {
        ModePolynomial::from_matrices(&self.a, &self.b)
    }
}

/// `det[mu I - A - B exp(-mu tau)]`.
pub fn char_value(mu: C64, mode: &ModeSystem) -> C64 {
    mode.eval(mu).value
}

fn quadratic_roots(b: C64, c: C64) -> [C64; 2] {
    // roots of z^2 + b z + c without cancellation
    let disc = (b * b - 4.0 * c).sqrt();
    let s = if (b.conj() * disc).re >= 0.0 { -b - disc } else { -b + disc };
    if s.norm() == 0.0 {
        return [C64::new(0.0, 0.0); 2];
    }
    let z1 = s / 2.0;
    let z2 = 2.0 * c / s;
    [z1, z2]
}

fn to_dmatrix(m: &Matrix2<C64>) -> DMatrix<C64> {
    DMatrix::from_fn(2, 2, |i, j| m[(i, j)])
}

impl DelaySystem for ModeSystem {
    fn dim(&self) -> usize {
        2
    }

    fn tau(&self) -> f64 {
        self.tau
    }

    fn instantaneous(&self) -> DMatrix<C64> {
        to_dmatrix(&self.a)
    }

    fn delayed(&self) -> DMatrix<C64> {
        to_dmatrix(&self.b)
    }

    fn is_real(&self) -> bool {
        ModeSystem::is_real(self)
    }

    fn eval(&self, mu: C64) -> CharEval {
        let c = self.polynomial();
        let e = (-mu * self.tau).exp();
        let q = c.q(mu);
        let value = c.p(mu) + e * q + e * e * c.r0;
        let derivative = 2.0 * mu + c.p1 + e * c.q1 - self.tau * e * q - 2.0 * self.tau * e * e * c.r0;
        let en = e.norm();
        let m = mu.norm();
        let scale = m * m
            + c.p1.norm() * m
            + c.p0.norm()
            + en * (c.q1.norm() * m + c.q0.norm())
            + en * en * c.r0.norm();
        CharEval {
            value,
            derivative,
            scale,
        }
    }

    fn modulus_bound(&self, re_min: f64) -> f64 {
        let c = self.polynomial();
        let e = if self.tau == 0.0 {
            1.0
        } else {
            (-re_min * self.tau).exp().max(if re_min <= 0.0 { 1.0 } else { 0.0 })
        };
        let alpha = c.p1.norm() + e * c.q1.norm();
        let beta = c.p0.norm() + e * c.q0.norm() + e * e * c.r0.norm();
        0.5 * (alpha + (alpha * alpha + 4.0 * beta).sqrt())
    }

    fn seeds(&self, window: &RootWindow) -> Vec<C64> {
        let c = self.polynomial();
        let mut seeds: Vec<C64> = quadratic_roots(c.p1, c.p0).to_vec();
        seeds.extend(quadratic_roots(c.p1 + c.q1, c.p0 + c.q0 + c.r0));
        if self.tau == 0.0 || !c.rank_one() || c.delay_free() {
            return seeds;
        }
        if c.q1.norm() > 0.0 {
            // roots accumulate at the zero of the delayed channel when it lies in Re < 0
            let z = -c.q0 / c.q1;
            seeds.push(z + C64::new(1e-9, 0.0));
            seeds.push(z);
        }
        // roots sit near mu = i w - ln|Y(i w)| / tau wherever the unwrapped
        // phase tau w + arg Y(i w), Y = -p/q, crosses a multiple of 2 pi; the
        // phase need not be monotone, so every crossing is seeded
        let tau = self.tau;
        let reach = window.im_max + 1.0;
        let dw = (0.05f64).min(0.5 / tau);
        let n = (2.0 * reach / dw).ceil() as usize;
        let mut prev: Option<(f64, f64, C64)> = None;
        for i in 0..=n {
            let w = -reach + i as f64 * dw;
            let iw = C64::new(0.0, w);
            let y = -c.p(iw) / c.q(iw);
            if !(y.norm() > 0.0 && y.norm().is_finite()) {
                prev = None;
                continue;
            }
            let phase = match prev {
                Some((_, ph, yp)) => ph + tau * dw + (y / yp).arg(),
                None => tau * w + y.arg(),
            };
            if let Some((wp, php, yp)) = prev {
                let (lo, hi) = (php.min(phase), php.max(phase));
                let mut k = (lo / (2.0 * PI)).ceil();
                while 2.0 * PI * k <= hi {
                    let t = if hi > lo { (2.0 * PI * k - php) / (phase - php) } else { 0.5 };
                    let wk = wp + t * dw;
                    let modulus = yp.norm().ln() * (1.0 - t) + y.norm().ln() * t;
                    seeds.push(C64::new(-modulus / tau, wk));
                    k += 1.0;
                }
            }
            prev = Some((w, phase, y));
        }
        seeds
    }
}

/// General `d`-dimensional system, used for the full (non-reduced) error dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearDelaySystem {
    pub a: DMatrix<C64>,
    pub b: DMatrix<C64>,
    pub tau: f64,
}

impl LinearDelaySystem {
    pub fn new(a: DMatrix<C64>, b: DMatrix<C64>, tau: f64) -> Result<Self> {
        let d = a.nrows();
        if a.ncols() != d || b.nrows() != d || b.ncols() != d || d == 0 {
            return Err(Error::InvalidParameter(
                "system matrices must be square and of equal size".into(),
            ));
        }
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(Error::InvalidParameter(format!("invalid delay {tau}")));
        }
        Ok(Self { a, b, tau })
    }

    fn matrix_at(&self, mu: C64) -> (DMatrix<C64>, C64) {
        let e = (-mu * self.tau).exp();
        let d = self.a.nrows();
        let mut m = -&self.a - &self.b * e;
        for i in 0..d {
            m[(i, i)] += mu;
        }
        (m, e)
    }
}

fn inf_norm(m: &DMatrix<C64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

impl DelaySystem for LinearDelaySystem {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn tau(&self) -> f64 {
        self.tau
    }

    fn instantaneous(&self) -> DMatrix<C64> {
        self.a.clone()
    }

    fn delayed(&self) -> DMatrix<C64> {
        self.b.clone()
    }

    fn is_real(&self) -> bool {
        self.a.iter().chain(self.b.iter()).all(|z| z.im == 0.0)
    }

    fn eval(&self, mu: C64) -> CharEval {
        let (m, e) = self.matrix_at(mu);
        let scale: f64 = m
            .row_iter()
            .map(|r| r.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(1e-300))
            .product();
        let mut dm = &self.b * (e * self.tau);
        for i in 0..self.dim() {
            dm[(i, i)] += C64::new(1.0, 0.0);
        }
        let lu = m.lu();
        let value = lu.determinant();
        // d det M = det M * tr(M^-1 M')
        let derivative = match lu.solve(&dm) {
            Some(x) if value.norm() > 0.0 => value * x.trace(),
            _ => {
                let h = 1e-7 * (1.0 + mu.norm());
                let hc = C64::new(h, 0.0);
                let (mp, _) = self.matrix_at(mu + hc);
                let (mm, _) = self.matrix_at(mu - hc);
                (mp.lu().determinant() - mm.lu().determinant()) / (2.0 * hc)
            }
        };
        CharEval {
            value,
            derivative,
            scale,
        }
    }

    fn modulus_bound(&self, re_min: f64) -> f64 {
        let e = if self.tau == 0.0 {
            1.0
        } else {
            (-re_min * self.tau).exp().max(if re_min <= 0.0 { 1.0 } else { 0.0 })
        };
        inf_norm(&self.a) + e * inf_norm(&self.b)
    }

    fn seeds(&self, _window: &RootWindow) -> Vec<C64> {
        let mut seeds = linalg::complex_eigenvalues(&self.a).unwrap_or_default();
        seeds.extend(linalg::complex_eigenvalues(&(&self.a + &self.b)).unwrap_or_default());
        seeds
    }
}

/// Eigenvalues of the Chebyshev collocation of the infinitesimal generator
/// with `order + 1` nodes on `[-tau, 0]`.
pub fn collocation_eigenvalues<S: DelaySystem + ?Sized>(sys: &S, order: usize) -> Result<Vec<C64>> {
    let tau = sys.tau();
    let a = sys.instantaneous();
    let b = sys.delayed();
    if tau == 0.0 {
        return linalg::complex_eigenvalues(&(a + b));
    }
    let d = sys.dim();
    let n = order;
    let size = d * (n + 1);
    let (_, cheb) = linalg::chebyshev_differentiation(n);
    let scale = 2.0 / tau;
    if sys.is_real() {
        let mut g = DMatrix::<f64>::zeros(size, size);
        for i in 0..d {
            for j in 0..d {
                g[(i, j)] = a[(i, j)].re;
                g[(i, n * d + j)] += b[(i, j)].re;
            }
        }
        for k in 1..=n {
            for j in 0..=n {
                let v = scale * cheb[(k, j)];
                for i in 0..d {
                    g[(k * d + i, j * d + i)] = v;
                }
            }
        }
        linalg::real_eigenvalues(&g)
    } else {
        let mut g = DMatrix::<C64>::zeros(size, size);
        for i in 0..d {
            for j in 0..d {
                g[(i, j)] = a[(i, j)];
                g[(i, n * d + j)] += b[(i, j)];
            }
        }
        for k in 1..=n {
            for j in 0..=n {
                let v = C64::new(scale * cheb[(k, j)], 0.0);
                for i in 0..d {
                    g[(k * d + i, j * d + i)] = v;
                }
            }
        }
        linalg::complex_eigenvalues(&g)
    }
}

/// Newton iteration on the characteristic function. Returns the root and its
/// relative residual when it converges below `tolerance`.
pub fn newton_refine<S: DelaySystem + ?Sized>(sys: &S, seed: C64, tolerance: f64) -> Option<(C64, CharEval)> {
    let mut mu = seed;
    let mut last = sys.eval(mu);
    for _ in 0..80 {
        if !(last.value.re.is_finite() && last.value.im.is_finite() && last.scale.is_finite()) {
            return None;
        }
        if last.value.norm() <= 1e-15 * last.scale {
            break;
        }
        if last.derivative.norm() == 0.0 || !last.derivative.norm().is_finite() {
            return None;
        }
        let mut step = last.value / last.derivative;
        let cap = 1.0 + 0.5 * mu.norm();
        if step.norm() > cap {
            step *= cap / step.norm();
        }
        mu -= step;
        last = sys.eval(mu);
        if step.norm() <= 1e-15 * (1.0 + mu.norm()) {
            break;
        }
    }
    let ok = last.value.re.is_finite()
        && last.value.im.is_finite()
        && last.scale.is_finite()
        && last.value.norm() <= tolerance * last.scale;
    ok.then_some((mu, last))
}

enum Winding {
    Count(i64),
    NearRoot,
}

const SAMPLE_BUDGET: usize = 20_000_000;

struct Tracer<'a, S: DelaySystem + ?Sized> {
    sys: &'a S,
    evaluations: usize,
}

impl<S: DelaySystem + ?Sized> Tracer<'_, S> {
    fn sample(&mut self, z: C64) -> std::result::Result<CharEval, C64> {
        self.evaluations += 1;
        let ev = self.sys.eval(z);
        if ev.value.norm() <= 1e-13 * ev.scale || !ev.value.norm().is_finite() {
            return Err(z);
        }
        Ok(ev)
    }

    /// Phase change along the segment `z0 -> z1`.
    fn segment(
        &mut self,
        z0: C64,
        f0: CharEval,
        z1: C64,
        f1: CharEval,
        depth: usize,
    ) -> Result<std::result::Result<f64, C64>> {
        let delta = (f1.value / f0.value).arg();
        let h = (z1 - z0).norm();
        let rate = 0.5 * ((f0.derivative / f0.value).norm() + (f1.derivative / f1.value).norm());
        let smooth = delta.abs() <= PI / 4.0 && rate * h <= PI / 2.0;
        if smooth {
            return Ok(Ok(delta));
        }
        if depth >= 48 || h < 1e-14 * (1.0 + z0.norm()) || self.evaluations > SAMPLE_BUDGET {
            if delta.abs() < 0.9 * PI {
                return Ok(Ok(delta));
            }
            return Err(Error::ContourResolution {
                at: z0,
                phase_jump: delta.abs(),
            });
        }
        let zm = 0.5 * (z0 + z1);
        let fm = match self.sample(zm) {
            Ok(f) => f,
            Err(z) => return Ok(Err(z)),
        };
        let left = match self.segment(z0, f0, zm, fm, depth + 1)? {
            Ok(v) => v,
            Err(z) => return Ok(Err(z)),
        };
        let right = match self.segment(zm, fm, z1, f1, depth + 1)? {
            Ok(v) => v,
            Err(z) => return Ok(Err(z)),
        };
        Ok(Ok(left + right))
    }
}

/// Winding number of the characteristic function along a closed polygon
/// (counter-clockwise vertex order).
fn winding<S: DelaySystem + ?Sized>(sys: &S, vertices: &[C64]) -> Result<Winding> {
    let mut tracer = Tracer {
        sys,
        evaluations: 0,
    };
    let tau = sys.tau();
    let mut total = 0.0;
    for (idx, &start) in vertices.iter().enumerate() {
        let end = vertices[(idx + 1) % vertices.len()];
        let len = (end - start).norm();
        let pieces = ((len * (1.0 + tau) / 0.5).ceil() as usize).clamp(4, 2_000_000);
        let mut z0 = start;
        let mut f0 = match tracer.sample(z0) {
            Ok(f) => f,
            Err(_) => return Ok(Winding::NearRoot),
        };
        for i in 1..=pieces {
            let z1 = start + (end - start) * (i as f64 / pieces as f64);
            let f1 = match tracer.sample(z1) {
                Ok(f) => f,
                Err(_) => return Ok(Winding::NearRoot),
            };
            match tracer.segment(z0, f0, z1, f1, 0)? {
                Ok(d) => total += d,
                Err(_) => return Ok(Winding::NearRoot),
            }
            z0 = z1;
            f0 = f1;
        }
    }
    let turns = total / (2.0 * PI);
    let rounded = turns.round();
    if (turns - rounded).abs() > 0.05 {
        return Err(Error::ContourResolution {
            at: vertices[0],
            phase_jump: (turns - rounded).abs() * 2.0 * PI,
        });
    }
    Ok(Winding::Count(rounded as i64))
}

/// Counts roots inside `window`. When a root sits on (or numerically at) the
/// boundary, the edges are moved by alternating outward/inward offsets of a
/// few `1e-6` until the contour is clear. Returns the count and the window
/// actually used.
fn count_with_perturbation<S: DelaySystem + ?Sized>(
    sys: &S,
    window: &RootWindow,
    known: &[C64],
) -> Result<(usize, RootWindow)> {
    const OFFSETS: [f64; 7] = [0.0, 1e-6, -1e-6, 2e-6, -2e-6, 4e-6, -4e-6];
    for delta in OFFSETS {
        let w = window.expanded(delta);
        if w.re_min >= w.re_max {
            continue;
        }
        let clear = known
            .iter()
            .all(|z| w.boundary_distance(*z) > 1e-9 * (1.0 + z.norm()));
        if !clear {
            continue;
        }
        match winding(sys, &w.corners())? {
            Winding::Count(n) if n >= 0 => return Ok((n as usize, w)),
            Winding::Count(n) => {
                return Err(Error::ContourResolution {
                    at: C64::new(w.re_min, w.im_max),
                    phase_jump: n as f64 * 2.0 * PI,
                })
            }
            Winding::NearRoot => {}
        }
    }
    Err(Error::ContourResolution {
        at: C64::new(window.re_min, window.im_max),
        phase_jump: PI,
    })
}

/// Number of characteristic roots (with multiplicity) inside `window`.
pub fn argument_principle_count<S: DelaySystem + ?Sized>(sys: &S, window: &RootWindow) -> Result<usize> {
    count_with_perturbation(sys, window, &[]).map(|(n, _)| n)
}

fn local_multiplicity<S: DelaySystem + ?Sized>(sys: &S, center: C64, radius: f64) -> Result<usize> {
    let vertices: Vec<C64> = (0..24)
        .map(|k| center + C64::from_polar(radius, 2.0 * PI * k as f64 / 24.0))
        .collect();
    match winding(sys, &vertices)? {
        Winding::Count(n) if n > 0 => Ok(n as usize),
        _ => Ok(1),
    }
}

fn merge_root(roots: &mut Vec<(C64, CharEval)>, mu: C64, ev: CharEval, radius: f64) {
    if let Some(existing) = roots.iter_mut().find(|(z, _)| (z - mu).norm() <= radius) {
        if ev.value.norm() / ev.scale < existing.1.value.norm() / existing.1.scale {
            *existing = (mu, ev);
        }
        return;
    }
    roots.push((mu, ev));
}

fn refine_into<S: DelaySystem + ?Sized>(
    sys: &S,
    seeds: impl IntoIterator<Item = C64>,
    opts: &RootFinderOptions,
    roots: &mut Vec<(C64, CharEval)>,
) {
    let real = sys.is_real();
    for seed in seeds {
        if !(seed.re.is_finite() && seed.im.is_finite()) {
            continue;
        }
        if let Some((mu, ev)) = newton_refine(sys, seed, opts.tolerance) {
            merge_root(roots, mu, ev, opts.merge_radius);
            if real && mu.im.abs() > opts.merge_radius {
                if let Some((mc, evc)) = newton_refine(sys, mu.conj(), opts.tolerance) {
                    merge_root(roots, mc, evc, opts.merge_radius);
                }
            }
        }
    }
}

fn assemble<S: DelaySystem + ?Sized>(
    sys: &S,
    roots: &[(C64, CharEval)],
    window: &RootWindow,
    expected: usize,
) -> Result<Vec<CharacteristicRoot>> {
    let inside: Vec<(C64, CharEval)> = roots
        .iter()
        .filter(|(z, _)| window.contains(*z))
        .copied()
        .collect();
    let mut out: Vec<CharacteristicRoot> = inside
        .iter()
        .map(|(z, ev)| CharacteristicRoot {
            mu: *z,
            residual: ev.value.norm(),
            multiplicity: 1,
        })
        .collect();
    if !out.is_empty() && out.len() < expected {
        // distinct roots fewer than the count: resolve multiplicities locally
        for i in 0..out.len() {
            let nearest = inside
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, (z, _))| (z - out[i].mu).norm())
                .fold(f64::INFINITY, f64::min);
            let radius = (0.3 * nearest).min(1e-4 * (1.0 + out[i].mu.norm()));
            out[i].multiplicity = local_multiplicity(sys, out[i].mu, radius)?;
        }
    }
    out.sort_by(|a, b| b.mu.re.total_cmp(&a.mu.re).then(a.mu.im.total_cmp(&b.mu.im)));
    Ok(out)
}

/// All characteristic roots inside `window`, certified by the argument principle.
pub fn find_roots<S: DelaySystem + ?Sized>(
    sys: &S,
    window: &RootWindow,
    opts: &RootFinderOptions,
) -> Result<SpectrumResult> {
    let mut roots: Vec<(C64, CharEval)> = Vec::new();
    refine_into(sys, sys.seeds(window), opts, &mut roots);

    let seed_window = window.expanded(0.25 * (window.re_max - window.re_min).max(1.0));
    let mut order = if sys.tau() == 0.0 { 1 } else { opts.initial_order.max(2) };
    loop {
        let candidates = if sys.tau() == 0.0 {
            linalg::complex_eigenvalues(&(sys.instantaneous() + sys.delayed()))?
        } else {
            collocation_eigenvalues(sys, order)?
        };
        refine_into(
            sys,
            candidates.into_iter().filter(|z| seed_window.contains(*z)),
            opts,
            &mut roots,
        );
        let known: Vec<C64> = roots.iter().map(|(z, _)| *z).collect();
        let (expected, used) = count_with_perturbation(sys, window, &known)?;
        let found = assemble(sys, &roots, &used, expected)?;
        let total: usize = found.iter().map(|r| r.multiplicity).sum();
        if total == expected {
            return Ok(SpectrumResult {
                roots: found,
                window: used,
                discretization_order: order,
            });
        }
        if sys.tau() == 0.0 || order >= opts.max_order {
            return Err(Error::IncompleteSpectrum {
                roots: found,
                found: total,
                expected,
            });
        }
        order = (order * 2).min(opts.max_order);
    }
}

pub fn char_roots(mode: &ModeSystem, window: &RootWindow) -> Result<SpectrumResult> {
    find_roots(mode, window, &RootFinderOptions::default())
}

const MAX_GUARD_HEIGHT: f64 = 1e4;

/// Spectral abscissa: the largest real part over all characteristic roots.
///
/// Candidates come from cheap seeds refined inside `window_hint` (default
/// window when `None`); the result is certified by showing that no root lies
/// to the right of it within the a-priori modulus bound. When the certificate
/// fails, the right strip is searched exhaustively and the check repeats.
pub fn lambda_max_of<S: DelaySystem + ?Sized>(sys: &S, window_hint: Option<RootWindow>) -> Result<f64> {
    let opts = RootFinderOptions::default();
    let window = window_hint.unwrap_or_else(|| RootWindow::default_for_delay(sys.tau()));
    let mut roots: Vec<(C64, CharEval)> = Vec::new();
    // without delay, or with a vanishing delay channel, the spectrum is finite
    if sys.tau() == 0.0 || sys.delayed().iter().all(|z| *z == C64::new(0.0, 0.0)) {
        let eig = linalg::complex_eigenvalues(&(sys.instantaneous() + sys.delayed()))?;
        return Ok(eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max));
    }
    refine_into(sys, sys.seeds(&window), &opts, &mut roots);
    let mut best = roots
        .iter()
        .map(|(z, _)| z.re)
        .fold(f64::NEG_INFINITY, f64::max);
    if !best.is_finite() {
        best = window.re_min;
    }
    for _ in 0..6 {
        let left = best + 1e-7 * best.abs().max(1.0);
        let height = (sys.modulus_bound(left) + 1.0).min(MAX_GUARD_HEIGHT);
        let strip = RootWindow {
            re_min: left,
            re_max: left.max(0.0) + height,
            im_max: height,
        };
        let known: Vec<C64> = roots.iter().map(|(z, _)| *z).collect();
        let (count, _) = count_with_perturbation(sys, &strip, &known)?;
        if count == 0 {
            return Ok(best);
        }
        let found = find_roots(sys, &strip, &opts)?;
        for r in &found.roots {
            roots.push((r.mu, sys.eval(r.mu)));
        }
        best = found.max_real_part().unwrap_or(best).max(best);
    }
    Err(Error::IncompleteSpectrum {
        roots: Vec::new(),
        found: 0,
        expected: 1,
    })
}

pub fn lambda_max(mode: &ModeSystem, window_hint: Option<RootWindow>) -> Result<f64> {
    lambda_max_of(mode, window_hint)
}

/// Eigenvalues of the instantaneous matrix `A` with positive real part.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrongSpectrum {
    pub unstable: Vec<C64>,
    /// An eigenvalue of `A` has `|Re| <= 1e-9`.
    pub marginal: bool,
}

pub fn strongly_unstable_spectrum(mode: &ModeSystem) -> StrongSpectrum {
    let c = mode.polynomial();
    let roots = quadratic_roots(c.p1, c.p0);
    StrongSpectrum {
        unstable: roots.iter().copied().filter(|z| z.re > 1e-9).collect(),
        marginal: roots.iter().any(|z| z.re.abs() <= 1e-9),
    }
}
