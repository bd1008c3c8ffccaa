//! Parametric stability boundaries: the `(k0, h0)` plane, the `(lambda, h0)`
//! plane, and the curves `lambda(c + i omega)` in the complex coupling plane.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CouplingGainVector, GainVector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CurveKind {
    K0H0,
    LambdaH0,
    LambdaPlaneBoundary,
    LambdaPlaneContour,
}

/// One curve point. For the real parameter planes the two coordinates are
/// stored as `point.re` (abscissa) and `point.im` (ordinate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CurveSample {
    pub omega: f64,
    pub point: Complex64,
    pub segment: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParametricCurve {
    pub kind: CurveKind,
    /// `Re mu` of the contour; 0 for stability boundaries.
    pub level: f64,
    pub samples: Vec<CurveSample>,
    /// Frequencies that were skipped (zero frequency or a pole).
    pub gaps: Vec<f64>,
}

impl ParametricCurve {
    pub fn segment_count(&self) -> usize {
        self.samples.last().map_or(0, |s| s.segment + 1)
    }

    pub fn segments(&self) -> Vec<&[CurveSample]> {
        let mut out = Vec::new();
        let mut start = 0;
        for i in 1..=self.samples.len() {
            if i == self.samples.len() || self.samples[i].segment != self.samples[start].segment {
                out.push(&self.samples[start..i]);
                start = i;
            }
        }
        out
    }
}

/// Options for sampling a curve over an `omega` grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingOptions {
    /// Bisect grid intervals until neighbouring points are closer than this.
    pub max_spacing: f64,
    /// Maximum bisection depth per grid interval.
    pub max_depth: u32,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            max_spacing: 0.05,
            max_depth: 10,
        }
    }
}

/// Uniform grid with step `min(0.25/tau, 0.01)` over `|omega| <= 4 max(4 pi/tau, 5)`.
pub fn default_omega_grid(tau: f64) -> Vec<f64> {
    let t = tau.max(1e-3);
    let step = (0.25 / t).min(0.01);
    let reach = 4.0 * (4.0 * PI / t).max(5.0);
    let n = (reach / step).ceil() as i64;
    (-n..=n).map(|i| i as f64 * step).collect()
}

fn validate_grid(grid: &[f64]) -> Result<()> {
    if grid.iter().any(|w| !w.is_finite()) {
        return Err(Error::InvalidParameter("omega grid must be finite".into()));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter(
            "omega grid must be strictly increasing".into(),
        ));
    }
    Ok(())
}

/// Samples `f` over `grid`, bisecting where points are too far apart and
/// splitting the curve into segments at skipped samples and at jumps that
/// survive refinement (poles).
fn sample_curve<F>(
    kind: CurveKind,
    level: f64,
    grid: &[f64],
    opts: &SamplingOptions,
    f: F,
) -> Result<ParametricCurve>
where
    F: Fn(f64) -> Option<Complex64>,
{
    validate_grid(grid)?;
    let mut samples: Vec<CurveSample> = Vec::new();
    let mut gaps = Vec::new();
    let mut segment = 0usize;
    let mut prev: Option<(f64, Complex64)> = None;
    for &w in grid {
        let Some(z) = f(w) else {
            gaps.push(w);
            if prev.take().is_some() {
                segment += 1;
            }
            continue;
        };
        if let Some((w0, z0)) = prev {
            let mut interior = Vec::new();
            let split = refine(&f, (w0, z0), (w, z), opts, 0, &mut interior);
            for item in interior {
                match item {
                    Interior::Point(wi, zi) => samples.push(CurveSample {
                        omega: wi,
                        point: zi,
                        segment,
                    }),
                    Interior::Gap(wi) => {
                        gaps.push(wi);
                        segment += 1;
                    }
                    Interior::Split => segment += 1,
                }
            }
            if split {
                segment += 1;
            }
        }
        samples.push(CurveSample {
            omega: w,
            point: z,
            segment,
        });
        prev = Some((w, z));
    }
    if samples.is_empty() {
        return Err(Error::EmptyCurve);
    }
    // renumber segments densely
    let mut last = usize::MAX;
    let mut next = 0usize;
    for s in &mut samples {
        if s.segment != last {
            last = s.segment;
            s.segment = next;
            next += 1;
        } else {
            s.segment = next - 1;
        }
    }
    Ok(ParametricCurve {
        kind,
        level,
        samples,
        gaps,
    })
}

enum Interior {
    Point(f64, Complex64),
    Gap(f64),
    Split,
}

/// Appends interior points of `(a, b)` in order. Returns `true` when the
/// interval still contains a jump after maximal refinement.
fn refine<F>(
    f: &F,
    a: (f64, Complex64),
    b: (f64, Complex64),
    opts: &SamplingOptions,
    depth: u32,
    out: &mut Vec<Interior>,
) -> bool
where
    F: Fn(f64) -> Option<Complex64>,
{
    let jump = (b.1 - a.1).norm();
    if jump <= opts.max_spacing {
        return false;
    }
    if depth >= opts.max_depth {
        // a jump far above the target spacing that bisection did not shrink
        return jump > 64.0 * opts.max_spacing;
    }
    let wm = 0.5 * (a.0 + b.0);
    match f(wm) {
        Some(zm) => {
            if refine(f, a, (wm, zm), opts, depth + 1, out) {
                out.push(Interior::Split);
            }
            out.push(Interior::Point(wm, zm));
            if refine(f, (wm, zm), b, opts, depth + 1, out) {
                out.push(Interior::Split);
            }
        }
        None => out.push(Interior::Gap(wm)),
    }
    false
}

/// `sin(omega tau) / omega`, continuous at `omega = 0`.
fn sin_over(omega: f64, tau: f64) -> f64 {
    if omega == 0.0 {
        tau
    } else {
        (omega * tau).sin() / omega
    }
}

fn check_delay(tau: f64) -> Result<()> {
    if tau.is_finite() && tau >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("invalid delay {tau}")))
    }
}

/// Boundary `(k0(omega), h0(omega))` where a root sits at `i omega`.
pub fn k0h0_boundary_with(
    k0_tau: f64,
    h0_tau: f64,
    tau: f64,
    omega_grid: &[f64],
    opts: &SamplingOptions,
) -> Result<ParametricCurve> {
    check_delay(tau)?;
    sample_curve(CurveKind::K0H0, 0.0, omega_grid, opts, |w| {
        if w == 0.0 {
            return None;
        }
        let (s, c) = (w * tau).sin_cos();
        let k0 = w * w - h0_tau * w * s - k0_tau * c;
        let h0 = k0_tau * s / w - h0_tau * c;
        Some(Complex64::new(k0, h0))
    })
}

pub fn k0h0_boundary(k0_tau: f64, h0_tau: f64, tau: f64, omega_grid: &[f64]) -> Result<ParametricCurve> {
    k0h0_boundary_with(k0_tau, h0_tau, tau, omega_grid, &SamplingOptions::default())
}

/// Boundary `(lambda(omega), h0(omega))` for real coupling eigenvalues. Only
/// `k0`, `k0_tau`, `h0_tau` of `p0` are used; `h0` is the curve's ordinate.
pub fn lambda_h0_boundary_with(
    p0: &GainVector,
    pbar: &CouplingGainVector,
    tau: f64,
    omega_grid: &[f64],
    opts: &SamplingOptions,
) -> Result<ParametricCurve> {
    check_delay(tau)?;
    let (k0, kt0, ht0) = (p0.k0, p0.k0_tau, p0.h0_tau);
    let (k, h, kt, ht) = (pbar.k, pbar.h, pbar.k_tau, pbar.h_tau);
    sample_curve(CurveKind::LambdaH0, 0.0, omega_grid, opts, |w| {
        let (s, c) = (w * tau).sin_cos();
        let den = k + ht * w * s + kt * c;
        let den_scale = k.abs() + (ht * w).abs() + kt.abs();
        if den_scale == 0.0 || den.abs() <= 1e-6 * den_scale {
            return None;
        }
        let lambda = (w * w - k0 - ht0 * w * s - kt0 * c) / den;
        let h0 = sin_over(w, tau) * (kt0 + lambda * kt) - (ht0 + lambda * ht) * c - lambda * h;
        Some(Complex64::new(lambda, h0))
    })
}

pub fn lambda_h0_boundary(
    p0: &GainVector,
    pbar: &CouplingGainVector,
    tau: f64,
    omega_grid: &[f64],
) -> Result<ParametricCurve> {
    lambda_h0_boundary_with(p0, pbar, tau, omega_grid, &SamplingOptions::default())
}

fn lambda_parts(mu: Complex64, p0: &GainVector, pbar: &CouplingGainVector, tau: f64) -> (Complex64, Complex64, f64) {
    let e = (-mu * tau).exp();
    let num = -(mu * mu) - mu * p0.h0 - p0.k0 - (mu * p0.h0_tau + p0.k0_tau) * e;
    let den = mu * pbar.h + pbar.k + (pbar.k_tau + mu * pbar.h_tau) * e;
    let den_scale = mu.norm() * pbar.h.abs()
        + pbar.k.abs()
        + e.norm() * (pbar.k_tau.abs() + mu.norm() * pbar.h_tau.abs());
    (num, den, den_scale)
}

/// The coupling eigenvalue that places `mu` in the spectrum.
pub fn lambda_of_mu(mu: Complex64, p0: &GainVector, pbar: &CouplingGainVector, tau: f64) -> Result<Complex64> {
    check_delay(tau)?;
    let (num, den, den_scale) = lambda_parts(mu, p0, pbar, tau);
    if den.norm() <= 1e-14 * den_scale || den.norm() == 0.0 {
        return Err(Error::PoleOfLambda { mu });
    }
    Ok(num / den)
}

fn lambda_curve(
    kind: CurveKind,
    c: f64,
    p0: &GainVector,
    pbar: &CouplingGainVector,
    tau: f64,
    omega_grid: &[f64],
    opts: &SamplingOptions,
) -> Result<ParametricCurve> {
    check_delay(tau)?;
    if !c.is_finite() {
        return Err(Error::InvalidParameter(format!("invalid contour level {c}")));
    }
    sample_curve(kind, c, omega_grid, opts, |w| {
        let mu = Complex64::new(c, w);
        let (num, den, den_scale) = lambda_parts(mu, p0, pbar, tau);
        if den_scale == 0.0 || den.norm() <= 1e-6 * den_scale {
            return None;
        }
        Some(num / den)
    })
}

/// Stability boundary `lambda(i omega)` in the complex coupling plane.
pub fn lambda_plane_boundary(
    p0: &GainVector,
    pbar: &CouplingGainVector,
    tau: f64,
    omega_grid: &[f64],
) -> Result<ParametricCurve> {
    lambda_curve(
        CurveKind::LambdaPlaneBoundary,
        0.0,
        p0,
        pbar,
        tau,
        omega_grid,
        &SamplingOptions::default(),
    )
}

pub fn lambda_plane_boundary_with(
    p0: &GainVector,
    pbar: &CouplingGainVector,
    tau: f64,
    omega_grid: &[f64],
    opts: &SamplingOptions,
) -> Result<ParametricCurve> {
    lambda_curve(CurveKind::LambdaPlaneBoundary, 0.0, p0, pbar, tau, omega_grid, opts)
}

/// Level curve `lambda(c + i omega)` of the master stability function.
pub fn contour_lines(
    c: f64,
    p0: &GainVector,
    pbar: &CouplingGainVector,
    tau: f64,
    omega_grid: &[f64],
) -> Result<ParametricCurve> {
    lambda_curve(
        CurveKind::LambdaPlaneContour,
        c,
        p0,
        pbar,
        tau,
        omega_grid,
        &SamplingOptions::default(),
    )
}

pub fn contour_lines_with(
    c: f64,
    p0: &GainVector,
    pbar: &CouplingGainVector,
    tau: f64,
    omega_grid: &[f64],
    opts: &SamplingOptions,
) -> Result<ParametricCurve> {
    lambda_curve(CurveKind::LambdaPlaneContour, c, p0, pbar, tau, omega_grid, opts)
}
