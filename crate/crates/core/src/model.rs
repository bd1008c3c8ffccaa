//! Gains, feedback matrices, coupling topology and the reduction of the full
//! agent error system to one two-component delay system per Laplacian mode.

use nalgebra::{DMatrix, Matrix2, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Leader feedback gains `(k0, h0, k0_tau, h0_tau)`.
///
/// `k0`/`k0_tau` act on position errors (1/time²), `h0`/`h0_tau` on velocity
/// errors (1/time); the `_tau` entries act on the state one delay ago.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainVector {
    pub k0: f64,
    pub h0: f64,
    pub k0_tau: f64,
    pub h0_tau: f64,
}

impl GainVector {
    pub const fn new(k0: f64, h0: f64, k0_tau: f64, h0_tau: f64) -> Self {
        Self {
            k0,
            h0,
            k0_tau,
            h0_tau,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.k0, self.h0, self.k0_tau, self.h0_tau]
    }

    pub fn is_finite(&self) -> bool {
        self.as_array().iter().all(|v| v.is_finite())
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "leader gains must be finite, got {:?}",
                self.as_array()
            )))
        }
    }

    /// Effective gains of the mode with real Laplacian eigenvalue `lambda`:
    /// `p0 + lambda * pbar`.
    pub fn shifted(&self, pbar: &CouplingGainVector, lambda: f64) -> GainVector {
        GainVector::new(
            self.k0 + lambda * pbar.k,
            self.h0 + lambda * pbar.h,
            self.k0_tau + lambda * pbar.k_tau,
            self.h0_tau + lambda * pbar.h_tau,
        )
    }
}

/// Inter-agent coupling gains `(k, h, k_tau, h_tau)`, applied through the Laplacian.
/// Missing entries deserialize as zero.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CouplingGainVector {
    pub k: f64,
    pub h: f64,
    pub k_tau: f64,
    pub h_tau: f64,
}

impl CouplingGainVector {
    pub const ZERO: Self = Self::new(0.0, 0.0, 0.0, 0.0);

    pub const fn new(k: f64, h: f64, k_tau: f64, h_tau: f64) -> Self {
        Self { k, h, k_tau, h_tau }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.k, self.h, self.k_tau, self.h_tau]
    }

    pub fn is_zero(&self) -> bool {
        self.as_array().iter().all(|v| *v == 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "coupling gains must be finite, got {:?}",
                self.as_array()
            )))
        }
    }
}

/// The four 2×2 blocks of the error system: `M`, `M^tau` (leader feedback)
/// and `P`, `P^tau` (coupling).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeedbackMatrices {
    pub m: Matrix2<f64>,
    pub m_tau: Matrix2<f64>,
    pub p: Matrix2<f64>,
    pub p_tau: Matrix2<f64>,
}

pub fn build_feedback_matrices(
    p0: &GainVector,
    pbar: &CouplingGainVector,
) -> Result<FeedbackMatrices> {
    p0.validate()?;
    pbar.validate()?;
    Ok(FeedbackMatrices {
        m: Matrix2::new(0.0, 1.0, -p0.k0, -p0.h0),
        m_tau: Matrix2::new(0.0, 0.0, -p0.k0_tau, -p0.h0_tau),
        p: Matrix2::new(0.0, 0.0, pbar.k, pbar.h),
        p_tau: Matrix2::new(0.0, 0.0, pbar.k_tau, pbar.h_tau),
    })
}

/// Coupling graph: adjacency weights and the derived Laplacian.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub n_agents: usize,
    pub adjacency: DMatrix<f64>,
    pub laplacian: DMatrix<f64>,
}

impl Topology {
    /// `n` agents that only listen to the virtual leader.
    pub fn uncoupled(n: usize) -> Self {
        Self {
            n_agents: n,
            adjacency: DMatrix::zeros(n, n),
            laplacian: DMatrix::zeros(n, n),
        }
    }

    pub fn is_uncoupled(&self) -> bool {
        self.adjacency.iter().all(|w| *w == 0.0)
    }

    pub fn is_symmetric(&self) -> bool {
        linalg::asymmetry_inf_norm(&self.laplacian) < 1e-12
    }
}

pub fn laplacian_from_adjacency(adjacency: &DMatrix<f64>) -> Result<Topology> {
    let n = adjacency.nrows();
    if n == 0 || adjacency.ncols() != n {
        return Err(Error::InvalidTopology(format!(
            "adjacency must be a non-empty square matrix, got {}x{}",
            adjacency.nrows(),
            adjacency.ncols()
        )));
    }
    let mut laplacian = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut degree = 0.0;
        for j in 0..n {
            let w = adjacency[(i, j)];
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidTopology(format!(
                    "adjacency[{i}][{j}] = {w} is not a nonnegative weight"
                )));
            }
            if i == j {
                if w != 0.0 {
                    return Err(Error::InvalidTopology(format!(
                        "adjacency diagonal must be zero, found {w} at ({i}, {i})"
                    )));
                }
                continue;
            }
            laplacian[(i, j)] = -w;
            degree += w;
        }
        laplacian[(i, i)] = degree;
    }
    Ok(Topology {
        n_agents: n,
        adjacency: adjacency.clone(),
        laplacian,
    })
}

/// Eigenvalues of the Laplacian, ordered by real part then imaginary part.
pub fn laplacian_eigenvalues(topology: &Topology) -> Result<Vec<Complex64>> {
    let n = topology.n_agents;
    if n > 512 {
        return Err(Error::UnsupportedTopology(format!(
            "{n} agents exceeds the dense eigensolver limit of 512"
        )));
    }
    let mut eig = linalg::checked_real_eigenvalues(&topology.laplacian)?;
    linalg::sort_complex(&mut eig);
    Ok(eig)
}

/// Condition number of the Laplacian eigenvector matrix (2-norm).
///
/// Infinite when an eigenvalue is repeated with a deficient eigenspace.
pub fn eigenvector_condition(topology: &Topology) -> Result<f64> {
    let eig = laplacian_eigenvalues(topology)?;
    linalg::eigenvector_condition(&topology.laplacian, &eig)
}

/// One transverse mode: `x' = A x(t) + B x(t - tau)` with
/// `A = M - lambda P`, `B = M^tau - lambda P^tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeSystem {
    pub lambda: Complex64,
    pub a: Matrix2<Complex64>,
    pub b: Matrix2<Complex64>,
    pub tau: f64,
}

impl ModeSystem {
    /// Mode built directly from arbitrary 2×2 blocks.
    pub fn from_matrices(a: Matrix2<Complex64>, b: Matrix2<Complex64>, tau: f64) -> Result<Self> {
        check_tau(tau)?;
        Ok(Self {
            lambda: Complex64::new(0.0, 0.0),
            a,
            b,
            tau,
        })
    }

    /// Uncoupled (`lambda = 0`) mode of the leader gains.
    pub fn uncoupled(p0: &GainVector, tau: f64) -> Result<Self> {
        mode_system(p0, &CouplingGainVector::ZERO, Complex64::new(0.0, 0.0), tau)
    }

    pub fn with_tau(&self, tau: f64) -> Self {
        Self { tau, ..*self }
    }

    /// True when `A` and `B` are real.
    pub fn is_real(&self) -> bool {
        self.a.iter().chain(self.b.iter()).all(|z| z.im == 0.0)
    }

    /// Effective complex gains `(k0 + lambda k, h0 + lambda h, k0_tau + lambda k_tau, h0_tau + lambda h_tau)`
    /// read back from the bottom rows of `A` and `B`.
    pub fn effective_gains(&self) -> [Complex64; 4] {
        [-self.a[(1, 0)], -self.a[(1, 1)], -self.b[(1, 0)], -self.b[(1, 1)]]
    }

    /// Effective gains as reals, when the mode has companion structure and real entries.
    pub fn real_effective_gains(&self) -> Result<GainVector> {
        let companion = self.a[(0, 0)] == Complex64::new(0.0, 0.0)
            && self.a[(0, 1)] == Complex64::new(1.0, 0.0)
            && self.b[(0, 0)] == Complex64::new(0.0, 0.0)
            && self.b[(0, 1)] == Complex64::new(0.0, 0.0);
        if !companion {
            return Err(Error::UnsupportedParameters(
                "mode matrices are not of feedback (companion) form".into(),
            ));
        }
        let g = self.effective_gains();
        if g.iter().any(|z| z.im != 0.0) {
            return Err(Error::UnsupportedParameters(
                "effective gains are complex; use the master stability map for complex lambda".into(),
            ));
        }
        Ok(GainVector::new(g[0].re, g[1].re, g[2].re, g[3].re))
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau.is_finite() && tau >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "delay must be finite and nonnegative, got {tau}"
        )))
    }
}

fn to_complex(m: &Matrix2<f64>) -> Matrix2<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

pub fn mode_system(
    p0: &GainVector,
    pbar: &CouplingGainVector,
    lambda: Complex64,
    tau: f64,
) -> Result<ModeSystem> {
    check_tau(tau)?;
    if !(lambda.re.is_finite() && lambda.im.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite lambda {lambda}")));
    }
    let fm = build_feedback_matrices(p0, pbar)?;
    let a = to_complex(&fm.m) - to_complex(&fm.p) * lambda;
    let b = to_complex(&fm.m_tau) - to_complex(&fm.p_tau) * lambda;
    Ok(ModeSystem { lambda, a, b, tau })
}

/// Desired formation: agent `i` should sit at `R0(t) + scale * offsets[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FormationSpec {
    pub offsets: Vec<[f64; 3]>,
    #[serde(default = "one")]
    pub scale: f64,
}

fn one() -> f64 {
    1.0
}

impl FormationSpec {
    /// Isosceles triangle used in the three-agent scenarios.
    pub fn triangle(scale: f64) -> Self {
        Self {
            offsets: vec![[0.0, -10.0, 0.0], [20.0, 10.0, 0.0], [-20.0, 10.0, 0.0]],
            scale,
        }
    }

    pub fn offset(&self, i: usize) -> Vector3<f64> {
        Vector3::from(self.offsets[i]) * self.scale
    }

    pub fn validate(&self, n_agents: usize) -> Result<()> {
        if self.offsets.len() != n_agents {
            return Err(Error::InvalidParameter(format!(
                "formation has {} offsets for {} agents",
                self.offsets.len(),
                n_agents
            )));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "formation scale must be positive, got {}",
                self.scale
            )));
        }
        Ok(())
    }
}
