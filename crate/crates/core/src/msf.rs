//! Master stability function over the complex coupling plane and the
//! large-delay geometry of its boundary.

use std::collections::VecDeque;
use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::Serialize;

use crate::bifurcation::{default_omega_grid, lambda_of_mu, lambda_plane_boundary, CurveKind, ParametricCurve};
use crate::error::{Error, Result};
use crate::model::{mode_system, CouplingGainVector, GainVector};
use crate::spectrum::{lambda_max, RootWindow};

/// Rectangular lattice over `(Re lambda, Im lambda)`, inclusive of both ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MsfGridSpec {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
    pub n_re: usize,
    pub n_im: usize,
}

impl Default for MsfGridSpec {
    fn default() -> Self {
        Self {
            re_min: -2.0,
            re_max: 10.0,
            im_min: -6.0,
            im_max: 6.0,
            n_re: 241,
            n_im: 241,
        }
    }
}

impl MsfGridSpec {
    pub fn validate(&self) -> Result<()> {
        let finite = [self.re_min, self.re_max, self.im_min, self.im_max]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.re_max <= self.re_min || self.im_max <= self.im_min {
            return Err(Error::InvalidParameter("grid bounds must be finite and increasing".into()));
        }
        if self.n_re < 2 || self.n_im < 2 {
            return Err(Error::InvalidParameter("grid needs at least 2 nodes per axis".into()));
        }
        if self.re_min > 0.0 || self.re_max < 0.0 || self.im_min > 0.0 || self.im_max < 0.0 {
            return Err(Error::InvalidParameter("grid must cover lambda = 0".into()));
        }
        Ok(())
    }

    pub fn spacing(&self) -> (f64, f64) {
        (
            (self.re_max - self.re_min) / (self.n_re - 1) as f64,
            (self.im_max - self.im_min) / (self.n_im - 1) as f64,
        )
    }

    pub fn re_at(&self, i: usize) -> f64 {
        self.re_min + (self.re_max - self.re_min) * i as f64 / (self.n_re - 1) as f64
    }

    pub fn im_at(&self, j: usize) -> f64 {
        self.im_min + (self.im_max - self.im_min) * j as f64 / (self.n_im - 1) as f64
    }

    pub fn node(&self, i: usize, j: usize) -> Complex64 {
        Complex64::new(self.re_at(i), self.im_at(j))
    }

    /// Row-major index with `Re` running fastest.
    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.n_re + i
    }

    pub fn len(&self) -> usize {
        self.n_re * self.n_im
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Node closest to `lambda = 0`.
    pub fn origin_node(&self) -> (usize, usize) {
        let (dr, di) = self.spacing();
        let i = ((-self.re_min / dr).round() as usize).min(self.n_re - 1);
        let j = ((-self.im_min / di).round() as usize).min(self.n_im - 1);
        (i, j)
    }

    fn mirror_symmetric(&self) -> bool {
        self.im_min == -self.im_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MsfField {
    pub grid: MsfGridSpec,
    /// `Lambda_max` per node; NaN where the root finder failed.
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
    /// Stable component containing the origin node (4-connected).
    pub region_mask: Vec<bool>,
    pub boundary: ParametricCurve,
    pub origin_value: f64,
}

impl MsfField {
    pub fn value(&self, i: usize, j: usize) -> Option<f64> {
        let k = self.grid.index(i, j);
        self.valid[k].then_some(self.values[k])
    }

    pub fn in_region(&self, i: usize, j: usize) -> bool {
        self.region_mask[self.grid.index(i, j)]
    }

    pub fn seed_stable(&self) -> bool {
        self.origin_value < 0.0
    }

    /// Fails with the no-stable-seed error when the origin node is unstable
    /// (the region mask is then empty).
    pub fn require_stable_seed(&self) -> Result<()> {
        if self.seed_stable() {
            Ok(())
        } else {
            Err(Error::NoStableSeed {
                lambda_max: self.origin_value,
            })
        }
    }

    /// Bilinear interpolation; `None` outside the grid or next to an invalid node.
    pub fn interpolate(&self, lambda: Complex64) -> Option<f64> {
        let g = &self.grid;
        let (dr, di) = g.spacing();
        let x = (lambda.re - g.re_min) / dr;
        let y = (lambda.im - g.im_min) / di;
        let (nx, ny) = ((g.n_re - 1) as f64, (g.n_im - 1) as f64);
        if !(x >= 0.0 && y >= 0.0 && x <= nx && y <= ny) {
            return None;
        }
        let i = (x.floor() as usize).min(g.n_re - 2);
        let j = (y.floor() as usize).min(g.n_im - 2);
        let (fx, fy) = (x - i as f64, y - j as f64);
        let v00 = self.value(i, j)?;
        let v10 = self.value(i + 1, j)?;
        let v01 = self.value(i, j + 1)?;
        let v11 = self.value(i + 1, j + 1)?;
        Some(
            v00 * (1.0 - fx) * (1.0 - fy) + v10 * fx * (1.0 - fy) + v01 * (1.0 - fx) * fy + v11 * fx * fy,
        )
    }

    pub fn region_size(&self) -> usize {
        self.region_mask.iter().filter(|&&m| m).count()
    }
}

/// `Lambda_max` at one coupling eigenvalue, root window capped at `Re mu = 3`.
pub fn msf_value(p0: &GainVector, pbar: &CouplingGainVector, lambda: Complex64, tau: f64) -> Result<f64> {
    let mode = mode_system(p0, pbar, lambda, tau)?;
    let window = RootWindow {
        re_max: 3.0,
        ..RootWindow::default_for_delay(tau)
    };
    lambda_max(&mode, Some(window))
}

/// Evaluates the master stability function on `grid`, flood-fills the stable
/// component of the origin and attaches the `lambda(i omega)` boundary.
///
/// An unstable origin still yields a field (with an empty mask); check
/// [`MsfField::require_stable_seed`].
pub fn msf_field(p0: &GainVector, pbar: &CouplingGainVector, tau: f64, grid: &MsfGridSpec) -> Result<MsfField> {
    msf_field_with(p0, pbar, tau, grid, &default_omega_grid(tau))
}

/// As [`msf_field`], with the frequencies of the attached boundary given.
pub fn msf_field_with(
    p0: &GainVector,
    pbar: &CouplingGainVector,
    tau: f64,
    grid: &MsfGridSpec,
    omega_grid: &[f64],
) -> Result<MsfField> {
    grid.validate()?;
    p0.validate()?;
    pbar.validate()?;
    // gains are real, so the field is even in Im lambda; on a symmetric grid
    // only the upper half is computed
    let mirror = grid.mirror_symmetric();
    let rows: Vec<usize> = (0..grid.n_im)
        .filter(|&j| !mirror || 2 * j + 1 >= grid.n_im)
        .collect();
    let computed: Vec<(usize, Vec<f64>)> = rows
        .par_iter()
        .map(|&j| {
            let row = (0..grid.n_re)
                .map(|i| {
                    let lambda = if mirror && 2 * j + 1 == grid.n_im {
                        Complex64::new(grid.re_at(i), 0.0)
                    } else {
                        grid.node(i, j)
                    };
                    msf_value(p0, pbar, lambda, tau).unwrap_or(f64::NAN)
                })
                .collect();
            (j, row)
        })
        .collect();
    let mut values = vec![f64::NAN; grid.len()];
    for (j, row) in computed {
        for (i, v) in row.into_iter().enumerate() {
            values[grid.index(i, j)] = v;
            if mirror {
                values[grid.index(i, grid.n_im - 1 - j)] = v;
            }
        }
    }
    let valid: Vec<bool> = values.iter().map(|v| v.is_finite()).collect();
    let (oi, oj) = grid.origin_node();
    let origin_value = msf_value(p0, pbar, grid.node(oi, oj), tau)?;
    let region_mask = flood_fill(grid, &values, &valid, (oi, oj));
    // without coupling no finite lambda puts a root on the imaginary axis
    let boundary = match lambda_plane_boundary(p0, pbar, tau, omega_grid) {
        Err(Error::EmptyCurve) => ParametricCurve {
            kind: CurveKind::LambdaPlaneBoundary,
            level: 0.0,
            samples: Vec::new(),
            gaps: Vec::new(),
        },
        other => other?,
    };
    Ok(MsfField {
        grid: *grid,
        values,
        valid,
        region_mask,
        boundary,
        origin_value,
    })
}

fn flood_fill(grid: &MsfGridSpec, values: &[f64], valid: &[bool], seed: (usize, usize)) -> Vec<bool> {
    let mut mask = vec![false; grid.len()];
    let stable = |k: usize| valid[k] && values[k] < 0.0;
    if !stable(grid.index(seed.0, seed.1)) {
        return mask;
    }
    let mut queue = VecDeque::from([seed]);
    mask[grid.index(seed.0, seed.1)] = true;
    while let Some((i, j)) = queue.pop_front() {
        let mut visit = |a: usize, b: usize| {
            let k = grid.index(a, b);
            if !mask[k] && stable(k) {
                mask[k] = true;
                queue.push_back((a, b));
            }
        };
        if i > 0 {
            visit(i - 1, j);
        }
        if i + 1 < grid.n_re {
            visit(i + 1, j);
        }
        if j > 0 {
            visit(i, j - 1);
        }
        if j + 1 < grid.n_im {
            visit(i, j + 1);
        }
    }
    mask
}

/// Self-intersection of the boundary curve on the real axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SelfIntersection {
    pub j: usize,
    /// Asymptotic estimate used as the reference for the refined root.
    pub seed: f64,
    pub omega: f64,
    pub lambda: Complex64,
}

/// Angle between the tangents of the two branches crossing at an intersection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntersectionAngle {
    pub j: usize,
    pub numeric: f64,
    pub asymptotic: f64,
}

/// First-order large-delay description of the boundary `lambda(i omega)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AsymptoticCurve {
    pub p0: GainVector,
    pub pbar: CouplingGainVector,
    pub lambda0: Complex64,
    /// `h_tau/k_tau - h0/k0`.
    pub slope: f64,
    pub tau: f64,
    /// Bound `T` on `|omega tau|` for the comparison with the exact curve.
    pub window: f64,
    /// Largest `|lambda_exact - lambda_asymptotic|` over the window.
    pub max_deviation: f64,
    /// `max_deviation * tau^2`.
    pub error_constant: f64,
    pub intersections: Vec<SelfIntersection>,
    pub angles: Vec<IntersectionAngle>,
}

impl AsymptoticCurve {
    pub fn evaluate(&self, omega: f64) -> Complex64 {
        let rot = Complex64::new(0.0, omega * self.tau).exp();
        let k_ratio = -self.lambda0;
        (self.lambda0 + Complex64::new(0.0, omega) * k_ratio * self.slope) * rot
    }
}

/// Gains satisfying the large-delay hypotheses, reduced to the five that matter.
#[derive(Debug, Clone, Copy)]
struct DelayCoupled {
    k0: f64,
    h0: f64,
    k_tau: f64,
    h_tau: f64,
}

impl DelayCoupled {
    fn new(p0: &GainVector, pbar: &CouplingGainVector) -> Result<Self> {
        let fail = |m: &str| Err(Error::TheoremHypothesis(m.to_string()));
        if p0.k0_tau != 0.0 || p0.h0_tau != 0.0 {
            return fail("leader delayed gains must vanish");
        }
        if pbar.k != 0.0 || pbar.h != 0.0 {
            return fail("instantaneous coupling gains must vanish");
        }
        if !(p0.k0 > 0.0 && p0.h0 > 0.0) {
            return fail("k0 and h0 must be positive");
        }
        if pbar.k_tau == 0.0 || !pbar.k_tau.is_finite() || !pbar.h_tau.is_finite() {
            return fail("k_tau must be nonzero");
        }
        Ok(Self {
            k0: p0.k0,
            h0: p0.h0,
            k_tau: pbar.k_tau,
            h_tau: pbar.h_tau,
        })
    }

    fn lambda0(&self) -> f64 {
        -self.k0 / self.k_tau
    }

    fn slope(&self) -> f64 {
        self.h_tau / self.k_tau - self.h0 / self.k0
    }

    /// Exact `lambda(i omega) = (omega^2 - i omega h0 - k0) e^{i omega tau} / (i omega h_tau + k_tau)`.
    fn exact(&self, omega: f64, tau: f64) -> Complex64 {
        let num = Complex64::new(omega * omega - self.k0, -omega * self.h0);
        let den = Complex64::new(self.k_tau, omega * self.h_tau);
        num / den * Complex64::new(0.0, omega * tau).exp()
    }

    fn tangent(&self, omega: f64, tau: f64) -> Complex64 {
        let d = 1e-4 / tau.max(1.0);
        (self.exact(omega + d, tau) - self.exact(omega - d, tau)) / (2.0 * d)
    }
}

fn check_large_delay(tau: f64) -> Result<()> {
    if tau.is_finite() && tau > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("delay must be positive, got {tau}")))
    }
}

const SAMPLES_PER_WINDOW: usize = 4096;

/// First-order asymptote of the boundary for `|omega tau| <= omega_window`,
/// with its measured deviation, the self-intersections inside the window and
/// their angles.
pub fn large_delay_asymptote(
    p0: &GainVector,
    pbar: &CouplingGainVector,
    tau: f64,
    omega_window: f64,
) -> Result<AsymptoticCurve> {
    let sys = DelayCoupled::new(p0, pbar)?;
    check_large_delay(tau)?;
    if !(omega_window.is_finite() && omega_window > 0.0) {
        return Err(Error::InvalidParameter("omega window must be positive".into()));
    }
    let mut curve = AsymptoticCurve {
        p0: *p0,
        pbar: *pbar,
        lambda0: Complex64::new(sys.lambda0(), 0.0),
        slope: sys.slope(),
        tau,
        window: omega_window,
        max_deviation: 0.0,
        error_constant: 0.0,
        intersections: Vec::new(),
        angles: Vec::new(),
    };
    let n = SAMPLES_PER_WINDOW as i64;
    let max_deviation = (-n..=n)
        .map(|i| {
            let w = omega_window / tau * i as f64 / n as f64;
            (sys.exact(w, tau) - curve.evaluate(w)).norm()
        })
        .fold(0.0, f64::max);
    curve.max_deviation = max_deviation;
    curve.error_constant = max_deviation * tau * tau;
    let j_max = (omega_window / PI).floor() as usize;
    curve.intersections = self_intersections(p0, pbar, tau, j_max)?
        .into_iter()
        .filter(|s| s.omega * tau <= omega_window)
        .collect();
    curve.angles = intersection_angles(&curve, tau)?;
    Ok(curve)
}

/// Self-intersections `j = 1..=j_max`: the `j`-th positive zero of
/// `Im lambda(i omega)`, found by an ordered scan and refined by regula falsi.
pub fn self_intersections(
    p0: &GainVector,
    pbar: &CouplingGainVector,
    tau: f64,
    j_max: usize,
) -> Result<Vec<SelfIntersection>> {
    let sys = DelayCoupled::new(p0, pbar)?;
    check_large_delay(tau)?;
    let im = |w: f64| sys.exact(w, tau).im;
    let step = PI / (32.0 * tau);
    let limit = 2.0 * PI * (j_max as f64 + 2.0) / tau + 1.0;
    let mut out = Vec::with_capacity(j_max);
    let mut a = 0.5 * step;
    let mut fa = im(a);
    while out.len() < j_max {
        let j = out.len() + 1;
        if a > limit {
            return Err(Error::IntersectionNotFound {
                j,
                reason: format!("no sign change of Im lambda below omega = {limit}"),
            });
        }
        let b = a + step;
        let fb = im(b);
        if fa == 0.0 || fa * fb < 0.0 {
            let omega = if fa == 0.0 { a } else { illinois(&im, a, b, fa, fb, j)? };
            out.push(SelfIntersection {
                j,
                seed: PI * j as f64 / tau * (1.0 + sys.slope() / tau),
                omega,
                lambda: sys.exact(omega, tau),
            });
        }
        a = b;
        fa = fb;
    }
    Ok(out)
}

fn illinois(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, mut fa: f64, mut fb: f64, j: usize) -> Result<f64> {
    let mut side = 0i8;
    for _ in 0..100 {
        let c = (a * fb - b * fa) / (fb - fa);
        let fc = f(c);
        if fc == 0.0 || (b - a).abs() <= 4.0 * f64::EPSILON * c.abs() {
            return Ok(c);
        }
        if fc.abs() <= 1e-15 && (b - a).abs() <= 1e-12 * c.abs().max(1.0) {
            return Ok(c);
        }
        if fc * fb < 0.0 {
            a = b;
            fa = fb;
            side = 0;
        } else {
            if side == -1 {
                fa *= 0.5;
            }
            side = -1;
        }
        b = c;
        fb = fc;
    }
    Err(Error::IntersectionNotFound {
        j,
        reason: "regula falsi did not converge in 100 iterations".into(),
    })
}

/// Crossing angles at the intersections of `curve`.
///
/// The branches through `lambda(i omega_j)` are each other's mirror images,
/// so with `alpha` the slope angle of the tangent, the angle between them is
/// `2 alpha` (`alpha` taken in `[0, pi)`). The asymptotic value
/// `pi + 2 j pi slope / tau` is reported alongside.
pub fn intersection_angles(curve: &AsymptoticCurve, tau: f64) -> Result<Vec<IntersectionAngle>> {
    check_large_delay(tau)?;
    let sys = DelayCoupled::new(&curve.p0, &curve.pbar)?;
    curve
        .intersections
        .iter()
        .map(|s| {
            let t = sys.tangent(s.omega, tau);
            if t.norm() < 1e-12 {
                return Err(Error::DegenerateTangent { j: s.j });
            }
            let alpha = t.arg().rem_euclid(PI);
            Ok(IntersectionAngle {
                j: s.j,
                numeric: 2.0 * alpha,
                asymptotic: PI + 2.0 * PI * s.j as f64 * curve.slope / tau,
            })
        })
        .collect()
}

/// `max | |lambda(i omega)| - |lambda0| |` over `|omega tau| <= 2 pi`.
pub fn circle_convergence_metric(p0: &GainVector, pbar: &CouplingGainVector, tau: f64) -> Result<f64> {
    let sys = DelayCoupled::new(p0, pbar)?;
    check_large_delay(tau)?;
    let r0 = sys.lambda0().abs();
    let n = SAMPLES_PER_WINDOW as i64;
    Ok((-n..=n)
        .map(|i| {
            let w = 2.0 * PI / tau * i as f64 / n as f64;
            (sys.exact(w, tau).norm() - r0).abs()
        })
        .fold(0.0, f64::max))
}

/// Exact boundary point `lambda(i omega)`, for cross-checks against the general formula.
pub fn boundary_point(p0: &GainVector, pbar: &CouplingGainVector, omega: f64, tau: f64) -> Result<Complex64> {
    lambda_of_mu(Complex64::new(0.0, omega), p0, pbar, tau)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn circle_gains() -> (GainVector, CouplingGainVector) {
        (GainVector::new(3.0, 6.0, 0.0, 0.0), CouplingGainVector::new(0.0, 0.0, -2.0, 0.0))
    }

    fn small_grid() -> MsfGridSpec {
        MsfGridSpec {
            re_min: -1.0,
            re_max: 3.0,
            im_min: -1.5,
            im_max: 1.5,
            n_re: 9,
            n_im: 7,
        }
    }

    #[test]
    fn grid_geometry() {
        let g = MsfGridSpec::default();
        g.validate().unwrap();
        let (dr, di) = g.spacing();
        assert!((dr - 0.05).abs() < 1e-15 && (di - 0.05).abs() < 1e-15);
        let (i, j) = g.origin_node();
        assert!(g.node(i, j).norm() < 1e-12);
        let off = MsfGridSpec { re_min: 0.5, ..g };
        assert!(matches!(off.validate(), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn value_at_origin_is_uncoupled_root() {
        let (p0, pbar) = circle_gains();
        for tau in [0.5, 4.0, 25.0] {
            let v = msf_value(&p0, &pbar, Complex64::new(0.0, 0.0), tau).unwrap();
            assert!((v - (-3.0 + 6f64.sqrt())).abs() < 1e-9, "{tau}: {v}");
        }
    }

    #[test]
    fn vanishing_coupling_gives_constant_field() {
        let p0 = GainVector::new(2.0, 3.0, 0.4, 0.2);
        let f = msf_field(&p0, &CouplingGainVector::ZERO, 2.0, &small_grid()).unwrap();
        let reference = lambda_max(&crate::model::ModeSystem::uncoupled(&p0, 2.0).unwrap(), None).unwrap();
        assert!(f.valid.iter().all(|&v| v));
        for v in &f.values {
            assert!((v - reference).abs() < 1e-9);
        }
        assert!(f.seed_stable());
        assert_eq!(f.region_size(), f.grid.len());
        assert!(f.boundary.samples.is_empty());
    }

    #[test]
    fn conjugate_symmetry() {
        let p0 = GainVector::new(0.0, 6.0, 1.5, 3.0);
        let pbar = CouplingGainVector::new(3.0, 1.0, 0.0, 0.0);
        for l in [Complex64::new(1.0, 2.0), Complex64::new(-0.7, 0.35), Complex64::new(4.5, 5.5)] {
            let a = msf_value(&p0, &pbar, l, 10.0).unwrap();
            let b = msf_value(&p0, &pbar, l.conj(), 10.0).unwrap();
            assert!((a - b).abs() < 1e-6, "{l}: {a} vs {b}");
        }
    }

    #[test]
    fn flood_fill_region() {
        let p0 = GainVector::new(3.0, 6.0, 1.5, 3.0);
        let pbar = CouplingGainVector::new(1.3, 1.0, -2.0, 0.0);
        let f = msf_field(&p0, &pbar, 2.0, &small_grid()).unwrap();
        f.require_stable_seed().unwrap();
        let g = f.grid;
        let (oi, oj) = g.origin_node();
        assert!(f.in_region(oi, oj));
        for j in 0..g.n_im {
            for i in 0..g.n_re {
                if f.in_region(i, j) {
                    assert!(f.value(i, j).unwrap() < 0.0);
                }
            }
        }
        // every masked node is reachable from the origin through masked nodes
        let seen = flood_fill(&g, &f.values, &f.region_mask.iter().map(|&m| m).collect::<Vec<_>>(), (oi, oj));
        assert_eq!(seen, f.region_mask);
        // mirror copy agrees with a direct evaluation
        let direct = msf_value(&p0, &pbar, g.node(2, 0), 2.0).unwrap();
        assert!((f.value(2, 0).unwrap() - direct).abs() < 1e-6);
    }

    #[test]
    fn unstable_origin_keeps_field() {
        let p0 = GainVector::new(0.0, 6.0, 1.5, 3.0);
        let pbar = CouplingGainVector::new(3.0, 1.0, 0.0, 0.0);
        let f = msf_field(&p0, &pbar, 10.0, &small_grid()).unwrap();
        assert!(f.origin_value > 0.0);
        assert_eq!(f.region_size(), 0);
        assert!(matches!(f.require_stable_seed(), Err(Error::NoStableSeed { .. })));
    }

    #[test]
    fn interpolation_reproduces_nodes() {
        let p0 = GainVector::new(3.0, 6.0, 1.5, 3.0);
        let pbar = CouplingGainVector::new(1.3, 1.0, -2.0, 0.0);
        let f = msf_field(&p0, &pbar, 2.0, &small_grid()).unwrap();
        let g = f.grid;
        for (i, j) in [(0, 0), (3, 2), (8, 6)] {
            assert_eq!(f.interpolate(g.node(i, j)), f.value(i, j));
        }
        let mid = (g.node(3, 2) + g.node(4, 3)) / 2.0;
        let avg = (f.value(3, 2).unwrap() + f.value(4, 2).unwrap() + f.value(3, 3).unwrap() + f.value(4, 3).unwrap()) / 4.0;
        assert!((f.interpolate(mid).unwrap() - avg).abs() < 1e-12);
        assert_eq!(f.interpolate(Complex64::new(-5.0, 0.0)), None);
    }

    #[test]
    fn asymptote_parameters() {
        let (p0, pbar) = circle_gains();
        let c = large_delay_asymptote(&p0, &pbar, 1000.0, 2.0 * PI).unwrap();
        assert_eq!(c.lambda0, Complex64::new(1.5, 0.0));
        assert_eq!(c.slope, -2.0);
        assert_eq!(c.evaluate(0.0), c.lambda0);
        assert_eq!(boundary_point(&p0, &pbar, 0.0, 1000.0).unwrap(), c.lambda0);
        let w = 2.0 * PI / 1000.0;
        let correction = (c.evaluate(w) - c.lambda0 * Complex64::new(0.0, w * 1000.0).exp()).norm();
        assert!((correction - 0.018849555921538757).abs() < 1e-12);
        assert!(c.max_deviation < 1e-3);
        assert_eq!(c.intersections.len(), 2);
    }

    #[test]
    fn exact_curve_matches_general_formula() {
        let (p0, pbar) = circle_gains();
        let sys = DelayCoupled::new(&p0, &pbar).unwrap();
        for w in [-0.7, 0.01, 0.3, 2.0] {
            let general = boundary_point(&p0, &pbar, w, 7.0).unwrap();
            assert!((sys.exact(w, 7.0) - general).norm() < 1e-12);
        }
    }

    #[test]
    fn asymptote_error_scales_with_inverse_square_delay() {
        let (p0, pbar) = circle_gains();
        let cs: Vec<f64> = [100.0, 300.0, 1000.0]
            .iter()
            .map(|&t| large_delay_asymptote(&p0, &pbar, t, 2.0 * PI).unwrap().error_constant)
            .collect();
        let mean = cs.iter().sum::<f64>() / 3.0;
        for c in cs {
            assert!((c - mean).abs() <= 0.5 * mean);
        }
    }

    #[test]
    fn hypotheses_are_checked() {
        let (p0, pbar) = circle_gains();
        let cases = [
            (GainVector::new(3.0, 6.0, 0.1, 0.0), pbar),
            (GainVector::new(3.0, 0.0, 0.0, 0.0), pbar),
            (p0, CouplingGainVector::new(0.0, 0.0, 0.0, 1.0)),
            (p0, CouplingGainVector::new(0.5, 0.0, -2.0, 0.0)),
        ];
        for (a, b) in cases {
            assert!(matches!(
                large_delay_asymptote(&a, &b, 100.0, 1.0),
                Err(Error::TheoremHypothesis(_))
            ));
            assert!(matches!(circle_convergence_metric(&a, &b, 100.0), Err(Error::TheoremHypothesis(_))));
        }
    }

    #[test]
    fn self_intersections_are_real() {
        let (p0, pbar) = circle_gains();
        for tau in [3.0, 20.0, 1000.0] {
            let sys = DelayCoupled::new(&p0, &pbar).unwrap();
            let found = self_intersections(&p0, &pbar, tau, 4).unwrap();
            assert_eq!(found.len(), 4);
            for (n, s) in found.iter().enumerate() {
                assert_eq!(s.j, n + 1);
                assert!(sys.exact(s.omega, tau).im.abs() <= 1e-9);
                assert!(s.lambda.im.abs() <= 1e-9);
            }
            assert!(found.windows(2).all(|w| w[0].omega < w[1].omega));
        }
        let s = self_intersections(&p0, &pbar, 1000.0, 1).unwrap()[0];
        assert!((s.seed - 3.135309468282614e-3).abs() < 1e-15);
        assert!((s.omega - s.seed).abs() < 1e-7);
        assert!(self_intersections(&p0, &pbar, 10.0, 0).unwrap().is_empty());
    }

    #[test]
    fn angles_are_near_straight_for_large_delay() {
        let (p0, pbar) = circle_gains();
        let c = large_delay_asymptote(&p0, &pbar, 1000.0, 3.0 * PI).unwrap();
        assert_eq!(c.angles.len(), 3);
        for a in &c.angles {
            assert!(a.numeric > 0.0 && a.numeric < 2.0 * PI);
            assert!((a.numeric - PI).abs() < 1e-3);
            assert!((a.asymptotic - (PI - 4.0 * PI * a.j as f64 / 1000.0)).abs() < 1e-12);
        }
        let c3 = large_delay_asymptote(&p0, &pbar, 3.0, 2.0 * PI).unwrap();
        assert!((c3.angles[0].asymptotic - (PI - 4.0 * PI / 3.0)).abs() < 1e-12);
        assert!(c3.angles.iter().all(|a| a.numeric > 0.0 && a.numeric < 2.0 * PI));
    }

    #[test]
    fn zero_slope_curve_is_nearly_circular() {
        let p0 = GainVector::new(3.0, 6.0, 0.0, 0.0);
        let pbar = CouplingGainVector::new(0.0, 0.0, -2.0, -4.0);
        let c = large_delay_asymptote(&p0, &pbar, 1000.0, 2.0 * PI).unwrap();
        assert_eq!(c.slope, 0.0);
        for a in &c.angles {
            assert!((a.numeric - PI).abs() < 1e-4);
        }
        let generic = circle_convergence_metric(&circle_gains().0, &circle_gains().1, 1000.0).unwrap();
        let flat = circle_convergence_metric(&p0, &pbar, 1000.0).unwrap();
        assert!(flat < 1e-4);
        assert!(generic <= 0.02);
    }

    #[test]
    fn circle_metric_bounds() {
        let (p0, pbar) = circle_gains();
        let m3 = circle_convergence_metric(&p0, &pbar, 1000.0).unwrap();
        let m4 = circle_convergence_metric(&p0, &pbar, 10000.0).unwrap();
        assert!(m3 <= 0.02 && m4 <= 0.002 && m4 < m3);
    }
}
