//! Asymptotic continuous spectrum, imaginary-axis crossings and the
//! delay-independent classification of the real-gain mode systems.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    laplacian_eigenvalues, mode_system, CouplingGainVector, GainVector, ModeSystem, Topology,
};
use crate::spectrum::strongly_unstable_spectrum;

/// Default relative width of the collar around region boundaries.
pub const DEFAULT_TOLERANCE: f64 = 1e-9;

/// `gamma = -ln|Y|`, with `|Y| = 0` mapped to an explicit infinity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Gamma {
    Finite(f64),
    PositiveInfinity,
}

impl Gamma {
    pub fn value(self) -> f64 {
        match self {
            Gamma::Finite(g) => g,
            Gamma::PositiveInfinity => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Gamma::PositiveInfinity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AcsSample {
    pub omega: f64,
    pub gamma: Gamma,
    pub y: Complex64,
}

/// Unique root `Y` of `det[i omega I - A - B Y] = 0` for a rank-one delay matrix.
pub fn generating_root(omega: f64, mode: &ModeSystem) -> Result<Complex64> {
    let poly = mode.polynomial();
    if !poly.rank_one() {
        return Err(Error::UnsupportedParameters(
            "generating polynomial is not linear in Y (delay matrix has rank 2)".into(),
        ));
    }
    let s = Complex64::new(0.0, omega);
    let num = poly.p(s);
    let den = poly.q(s);
    if den.norm() <= f64::EPSILON * (poly.q0.norm() + poly.q1.norm() * omega.abs()) || den.norm() == 0.0 {
        return Err(Error::DegenerateDelayChannel { omega });
    }
    let y = -num / den;
    let residual = (num + y * den).norm();
    debug_assert!(residual <= 1e-12 * (1.0 + num.norm()));
    Ok(y)
}

pub fn acs_gamma(omega: f64, mode: &ModeSystem) -> Result<Gamma> {
    let y = generating_root(omega, mode)?;
    let m = y.norm();
    Ok(if m == 0.0 {
        Gamma::PositiveInfinity
    } else {
        Gamma::Finite(-m.ln())
    })
}

pub fn acs_sample(omega: f64, mode: &ModeSystem) -> Result<AcsSample> {
    let y = generating_root(omega, mode)?;
    let gamma = if y.norm() == 0.0 {
        Gamma::PositiveInfinity
    } else {
        Gamma::Finite(-y.norm().ln())
    };
    Ok(AcsSample { omega, gamma, y })
}

/// Positive frequencies where the ACS meets the imaginary axis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossingSet {
    /// Ascending.
    pub frequencies: Vec<f64>,
    /// `-arg Y(omega)` in `[0, 2 pi)`, aligned with `frequencies`.
    pub phases: Vec<f64>,
    /// The crossing quartic has a double root in `nu = omega^2`.
    pub double: bool,
    /// A root `nu = 0` (crossing at zero frequency).
    pub at_zero: bool,
}

impl CrossingSet {
    fn empty() -> Self {
        Self {
            frequencies: Vec::new(),
            phases: Vec::new(),
            double: false,
            at_zero: false,
        }
    }

    pub fn len(&self) -> usize {
        self.frequencies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frequencies.is_empty()
    }
}

fn normalize_phase(phi: f64) -> f64 {
    let p = phi.rem_euclid(2.0 * PI);
    if p >= 2.0 * PI {
        0.0
    } else {
        p
    }
}

/// `(B, C)` of `nu^2 + B nu + C = 0`, `nu = omega^2`.
fn crossing_quadratic(g: &GainVector) -> (f64, f64) {
    let b = g.h0 * g.h0 - 2.0 * g.k0 - g.h0_tau * g.h0_tau;
    let c = g.k0 * g.k0 - g.k0_tau * g.k0_tau;
    (b, c)
}

fn crossings_of(g: &GainVector, mode: &ModeSystem) -> Result<CrossingSet> {
    let (b, c) = crossing_quadratic(g);
    let mut set = CrossingSet::empty();
    let disc = b * b - 4.0 * c;
    let scale = (b * b).max(4.0 * c.abs()).max(1.0);
    let mut nus = Vec::new();
    if disc.abs() < 1e-10 * scale {
        set.double = -b / 2.0 > 0.0;
        nus.push(-b / 2.0);
    } else if disc > 0.0 {
        let sq = disc.sqrt();
        // stable quadratic formula
        let q = -0.5 * (b + b.signum() * sq);
        if q != 0.0 {
            nus.push(q);
            nus.push(c / q);
        } else {
            nus.push(0.0);
        }
    }
    for nu in nus {
        if nu.abs() <= 1e-14 * scale.sqrt() {
            set.at_zero = true;
        } else if nu > 0.0 {
            let omega = nu.sqrt();
            let y = generating_root(omega, mode)?;
            set.frequencies.push(omega);
            set.phases.push(normalize_phase(-y.arg()));
        }
    }
    let mut idx: Vec<usize> = (0..set.frequencies.len()).collect();
    idx.sort_by(|&i, &j| set.frequencies[i].total_cmp(&set.frequencies[j]));
    set.frequencies = idx.iter().map(|&i| set.frequencies[i]).collect();
    set.phases = idx.iter().map(|&i| set.phases[i]).collect();
    Ok(set)
}

/// Crossing frequencies of the mode's ACS.
pub fn crossing_frequencies(mode: &ModeSystem) -> Result<CrossingSet> {
    let g = mode.real_effective_gains()?;
    crossings_of(&g, mode)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Class {
    Zero,
    I,
    II,
    U,
    Boundary,
}

impl std::fmt::Display for Class {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Class::Zero => "0",
            Class::I => "I",
            Class::II => "II",
            Class::U => "U",
            Class::Boundary => "Boundary",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassLabel {
    pub class: Class,
    pub lambda: f64,
    pub effective_gains: GainVector,
    pub crossing: CrossingSet,
    pub instantaneous_unstable: bool,
    pub sum_matrix_stable: bool,
    /// Rough distance to the nearest class boundary in gain space.
    pub margin: f64,
}

/// `Q = (h0_tau / 2)^2 + (k0_tau / h0_tau)^2`, infinite for `h0_tau = 0`.
fn lower_bound_q(g: &GainVector) -> f64 {
    if g.h0_tau == 0.0 {
        f64::INFINITY
    } else {
        (g.h0_tau / 2.0).powi(2) + (g.k0_tau / g.h0_tau).powi(2)
    }
}

/// `(h0^-)^2`; `NaN` when `k0^2 < k0_tau^2` (outside the regions where it is used).
fn h0_minus_sq(g: &GainVector) -> f64 {
    2.0 * g.k0 + g.h0_tau * g.h0_tau - 2.0 * (g.k0 * g.k0 - g.k0_tau * g.k0_tau).sqrt()
}

/// Membership predicates of the four regions, evaluated literally.
/// `|h0| < |h0^-|` is read as `h0^2 < (h0^-)^2` (false when `(h0^-)^2 < 0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegionMembership {
    pub s0: bool,
    pub s_i: bool,
    pub s_ii: bool,
    pub s_u: bool,
}

impl RegionMembership {
    pub fn count(&self) -> usize {
        [self.s0, self.s_i, self.s_ii, self.s_u]
            .iter()
            .filter(|b| **b)
            .count()
    }

    fn class(&self) -> Option<Class> {
        if self.count() != 1 {
            return None;
        }
        Some(if self.s0 {
            Class::Zero
        } else if self.s_i {
            Class::I
        } else if self.s_ii {
            Class::II
        } else {
            Class::U
        })
    }
}

pub fn region_membership(g: &GainVector) -> RegionMembership {
    let (k0, h0, kt) = (g.k0, g.h0, g.k0_tau.abs());
    let q = lower_bound_q(g);
    let hm = h0_minus_sq(g);
    let h2 = h0 * h0;
    let inside_h = hm.is_finite() && h2 < hm;
    let outside_h = !hm.is_finite() || h2 > hm;
    let positive_k = k0 > kt;
    let negative_band = -q <= k0 && k0 < -kt;
    RegionMembership {
        s0: positive_k && h0 > 0.0 && outside_h,
        s_i: k0.abs() < kt,
        s_ii: inside_h && (positive_k || negative_band),
        s_u: k0 < -q || (negative_band && outside_h) || (positive_k && h0 < 0.0 && outside_h),
    }
}

fn class_by_inequalities(g: &GainVector) -> Option<Class> {
    region_membership(g).class()
}

fn perturbations(g: &GainVector, tol: f64) -> Vec<GainVector> {
    let a = g.as_array();
    let scale = a.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let d = tol * scale;
    let mut out = Vec::with_capacity(8);
    for i in 0..4 {
        for s in [-1.0, 1.0] {
            let mut b = a;
            b[i] += s * d;
            out.push(GainVector::new(b[0], b[1], b[2], b[3]));
        }
    }
    out
}

fn class_by_crossings(g: &GainVector, crossing: &CrossingSet, instantaneous_unstable: bool) -> Class {
    if crossing.double || crossing.at_zero {
        return Class::Boundary;
    }
    match crossing.len() {
        1 => Class::I,
        2 => Class::II,
        _ => {
            if instantaneous_unstable || g.k0 < 0.0 || g.h0 < 0.0 {
                Class::U
            } else {
                Class::Zero
            }
        }
    }
}

fn margin_estimate(g: &GainVector) -> f64 {
    let mut m = (g.k0.abs() - g.k0_tau.abs()).abs();
    let hm = h0_minus_sq(g);
    if hm.is_finite() && hm >= 0.0 {
        m = m.min((g.h0.abs() - hm.sqrt()).abs());
    }
    let q = lower_bound_q(g);
    if q.is_finite() && g.k0 < -g.k0_tau.abs() {
        m = m.min((g.k0 + q).abs());
    }
    if g.k0 > g.k0_tau.abs() {
        m = m.min(g.h0.abs());
    }
    m
}

/// Delay-independent class of the mode with real Laplacian eigenvalue `lambda`.
///
/// Both the explicit region inequalities and the crossing count are evaluated;
/// they must agree away from the boundary collar of relative width `tolerance`.
pub fn classify_mode(
    p0: &GainVector,
    pbar: &CouplingGainVector,
    lambda: f64,
    tolerance: f64,
) -> Result<ClassLabel> {
    if !lambda.is_finite() {
        return Err(Error::InvalidParameter(format!("non-finite eigenvalue {lambda}")));
    }
    let mode = mode_system(p0, pbar, Complex64::new(lambda, 0.0), 0.0)?;
    let g = mode.real_effective_gains()?;
    g.validate()?;
    let strong = strongly_unstable_spectrum(&mode);
    let instantaneous_unstable = !strong.unstable.is_empty();
    let sum_matrix_stable = g.k0 + g.k0_tau > 0.0 && g.h0 + g.h0_tau > 0.0;
    let margin = margin_estimate(&g);

    if g.k0_tau == 0.0 && g.h0_tau == 0.0 {
        // no delayed channel: the spectrum is that of A for every delay
        let class = if strong.marginal {
            Class::Boundary
        } else if instantaneous_unstable {
            Class::U
        } else {
            Class::Zero
        };
        return Ok(ClassLabel {
            class,
            lambda,
            effective_gains: g,
            crossing: CrossingSet::empty(),
            instantaneous_unstable,
            sum_matrix_stable,
            margin: margin.min(g.k0.abs()).min(g.h0.abs()),
        });
    }

    let crossing = crossings_of(&g, &mode)?;
    let by_crossings = class_by_crossings(&g, &crossing, instantaneous_unstable);
    let by_inequalities = class_by_inequalities(&g);
    let in_collar = perturbations(&g, tolerance)
        .iter()
        .any(|p| class_by_inequalities(p) != by_inequalities);
    let no_crossing_marginal = crossing.is_empty() && strong.marginal;

    let class = if in_collar || no_crossing_marginal || by_crossings == Class::Boundary {
        Class::Boundary
    } else {
        match by_inequalities {
            Some(c) if c == by_crossings => c,
            other => {
                return Err(Error::InternalConsistency {
                    by_inequalities: other.map_or("none".into(), |c| c.to_string()),
                    by_crossings: by_crossings.to_string(),
                })
            }
        }
    };
    Ok(ClassLabel {
        class,
        lambda,
        effective_gains: g,
        crossing,
        instantaneous_unstable,
        sum_matrix_stable,
        margin,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SwitchingDelays {
    pub destabilizing: Vec<f64>,
    pub stabilizing: Vec<f64>,
    pub horizon: f64,
    /// `(omega, phi)` generating the destabilizing sequence.
    pub destabilizing_crossing: (f64, f64),
    pub stabilizing_crossing: Option<(f64, f64)>,
    /// Eigenvalues of `A + B` with positive real part.
    pub unstable_at_zero_delay: usize,
}

fn delay_sequence(omega: f64, phi: f64, horizon: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let mut j = 0usize;
    loop {
        let tau = (phi + 2.0 * PI * j as f64) / omega;
        if tau > horizon {
            break;
        }
        out.push(tau);
        j += 1;
    }
    out
}

fn unstable_count_at_zero_delay(g: &GainVector) -> usize {
    // roots of mu^2 + (h0 + h0_tau) mu + (k0 + k0_tau)
    let b = g.h0 + g.h0_tau;
    let c = g.k0 + g.k0_tau;
    let disc = b * b - 4.0 * c;
    if disc >= 0.0 {
        let s = disc.sqrt();
        [(-b + s) / 2.0, (-b - s) / 2.0]
            .iter()
            .filter(|r| **r > 0.0)
            .count()
    } else if -b / 2.0 > 0.0 {
        2
    } else {
        0
    }
}

/// Delays at which a root pair crosses the imaginary axis, up to `horizon`.
///
/// The destabilizing sequence uses the larger crossing frequency.
pub fn switching_delays(label: &ClassLabel, horizon: f64) -> Result<SwitchingDelays> {
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(Error::InvalidParameter(format!("invalid horizon {horizon}")));
    }
    let c = &label.crossing;
    let (destab, stab) = match label.class {
        Class::I if c.len() == 1 => ((c.frequencies[0], c.phases[0]), None),
        Class::II if c.len() == 2 => (
            (c.frequencies[1], c.phases[1]),
            Some((c.frequencies[0], c.phases[0])),
        ),
        other => return Err(Error::InapplicableClass(other.to_string())),
    };
    Ok(SwitchingDelays {
        destabilizing: delay_sequence(destab.0, destab.1, horizon),
        stabilizing: stab.map_or_else(Vec::new, |(w, p)| delay_sequence(w, p, horizon)),
        horizon,
        destabilizing_crossing: destab,
        stabilizing_crossing: stab,
        unstable_at_zero_delay: unstable_count_at_zero_delay(&label.effective_gains),
    })
}

impl SwitchingDelays {
    /// Number of roots in the open right half-plane just after delay `tau`,
    /// counting two roots per crossing pair.
    pub fn predicted_unstable_roots(&self, tau: f64) -> i64 {
        let up = self.destabilizing.iter().filter(|t| **t < tau).count() as i64;
        let down = self.stabilizing.iter().filter(|t| **t < tau).count() as i64;
        self.unstable_at_zero_delay as i64 + 2 * (up - down)
    }

    pub fn predicted_stable(&self, tau: f64) -> bool {
        self.predicted_unstable_roots(tau) <= 0
    }

    /// Delay intervals predicted stable within the horizon.
    pub fn stable_windows(&self) -> Vec<(f64, f64)> {
        let mut events: Vec<f64> = self
            .destabilizing
            .iter()
            .chain(self.stabilizing.iter())
            .copied()
            .collect();
        events.push(0.0);
        events.push(self.horizon);
        events.sort_by(f64::total_cmp);
        events.dedup();
        let mut windows: Vec<(f64, f64)> = Vec::new();
        for w in events.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            if w[1] > w[0] && self.predicted_stable(mid) {
                match windows.last_mut() {
                    Some(last) if last.1 == w[0] => last.1 = w[1],
                    _ => windows.push((w[0], w[1])),
                }
            }
        }
        windows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectrumComposition {
    pub zero: usize,
    pub class_i: usize,
    pub class_ii: usize,
    pub class_u: usize,
    pub boundary: usize,
    pub modes: Vec<ClassLabel>,
    /// Every mode in class 0 with `A + B` stable.
    pub absolutely_stable: bool,
    /// Some mode is in class U (unstable for every delay).
    pub unstable_for_all_delays: bool,
}

/// Per-mode classification over the Laplacian spectrum.
pub fn classify_formation(
    p0: &GainVector,
    pbar: &CouplingGainVector,
    topology: &Topology,
    tolerance: f64,
) -> Result<SpectrumComposition> {
    let eigenvalues = laplacian_eigenvalues(topology)?;
    if let Some(z) = eigenvalues.iter().find(|z| z.im.abs() > 1e-9) {
        return Err(Error::UnsupportedTopology(format!(
            "Laplacian eigenvalue {z} is not real; use the master stability map"
        )));
    }
    let mut modes = Vec::with_capacity(eigenvalues.len());
    for z in &eigenvalues {
        modes.push(classify_mode(p0, pbar, z.re, tolerance)?);
    }
    let count = |c: Class| modes.iter().filter(|m| m.class == c).count();
    Ok(SpectrumComposition {
        zero: count(Class::Zero),
        class_i: count(Class::I),
        class_ii: count(Class::II),
        class_u: count(Class::U),
        boundary: count(Class::Boundary),
        absolutely_stable: modes
            .iter()
            .all(|m| m.class == Class::Zero && m.sum_matrix_stable),
        unstable_for_all_delays: modes.iter().any(|m| m.class == Class::U),
        modes,
    })
}
