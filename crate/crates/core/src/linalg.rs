//! Dense linear-algebra helpers: eigenvalues of small real/complex matrices,
//! Chebyshev differentiation, determinants.

use nalgebra::{linalg::balancing, DMatrix, Schur, SymmetricEigen, SVD};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub fn asymmetry_inf_norm(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    (0..n)
        .map(|i| (0..n).map(|j| (m[(i, j)] - m[(j, i)]).abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Orders by real part, then imaginary part.
pub fn sort_complex(v: &mut [C64]) {
    v.sort_by(|a, b| a.re.total_cmp(&b.re).then(a.im.total_cmp(&b.im)));
}

fn max_iterations(n: usize) -> usize {
    1000 * n.max(10)
}

/// All eigenvalues of a real square matrix.
///
/// Symmetric inputs go through the symmetric solver and come back with zero
/// imaginary parts. Nonsymmetric inputs are balanced, then reduced by Schur.
pub fn real_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<C64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    if asymmetry_inf_norm(m) < 1e-12 {
        let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, max_iterations(n)).ok_or(
            Error::NumericalFailure {
                context: "symmetric eigensolver did not converge".into(),
                residual: f64::INFINITY,
            },
        )?;
        return Ok(eig.eigenvalues.iter().map(|&v| C64::new(v, 0.0)).collect());
    }
    let mut balanced = m.clone();
    balancing::balance_parlett_reinsch(&mut balanced);
    let schur = Schur::try_new(balanced, f64::EPSILON, max_iterations(n)).ok_or(
        Error::NumericalFailure {
            context: format!("real Schur iteration did not converge for a {n}x{n} matrix"),
            residual: f64::INFINITY,
        },
    )?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Eigenvalues of a real matrix, validated by a singular-value residual.
pub fn checked_real_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<C64>> {
    let eig = real_eigenvalues(m)?;
    let scale = m.norm().max(1.0);
    let mc = to_complex(m);
    for &lambda in &eig {
        let residual = smallest_singular_value(&shift(&mc, lambda)) / scale;
        if residual > 1e-8 {
            return Err(Error::NumericalFailure {
                context: format!("eigenvalue {lambda} failed the residual check"),
                residual,
            });
        }
    }
    Ok(eig)
}

/// All eigenvalues of a complex square matrix (complex Schur form).
pub fn complex_eigenvalues(m: &DMatrix<C64>) -> Result<Vec<C64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, max_iterations(n)).ok_or(
        Error::NumericalFailure {
            context: format!("complex Schur iteration did not converge for a {n}x{n} matrix"),
            residual: f64::INFINITY,
        },
    )?;
    let (_, t) = schur.unpack();
    Ok((0..n).map(|i| t[(i, i)]).collect())
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<C64> {
    m.map(|v| C64::new(v, 0.0))
}

fn shift(m: &DMatrix<C64>, lambda: C64) -> DMatrix<C64> {
    let mut s = m.clone();
    for i in 0..s.nrows() {
        s[(i, i)] -= lambda;
    }
    s
}

fn smallest_singular_value(m: &DMatrix<C64>) -> f64 {
    SVD::new(m.clone(), false, false)
        .singular_values
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// 2-norm condition number of the matrix whose columns are unit eigenvectors
/// for `eigenvalues` (each taken as the right singular vector of `m - lambda I`
/// for the smallest singular value).
pub fn eigenvector_condition(m: &DMatrix<f64>, eigenvalues: &[C64]) -> Result<f64> {
    let n = m.nrows();
    let mc = to_complex(m);
    let mut h = DMatrix::<C64>::zeros(n, n);
    for (col, &lambda) in eigenvalues.iter().enumerate() {
        let svd = SVD::new(shift(&mc, lambda), false, true);
        let v_t = svd.v_t.ok_or(Error::NumericalFailure {
            context: "SVD did not return right singular vectors".into(),
            residual: f64::INFINITY,
        })?;
        let (imin, _) = svd
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &s)| if s < acc.1 { (i, s) } else { acc });
        for row in 0..n {
            h[(row, col)] = v_t[(imin, row)].conj();
        }
    }
    let s = SVD::new(h, false, false).singular_values;
    let max = s.iter().copied().fold(0.0, f64::max);
    let min = s.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(if min == 0.0 { f64::INFINITY } else { max / min })
}

/// Chebyshev–Lobatto nodes `x_j = cos(pi j / n)` (so `x_0 = 1`) and the
/// associated spectral differentiation matrix.
pub fn chebyshev_differentiation(n: usize) -> (Vec<f64>, DMatrix<f64>) {
    assert!(n >= 1);
    let x: Vec<f64> = (0..=n)
        .map(|j| (std::f64::consts::PI * j as f64 / n as f64).cos())
        .collect();
    let weight = |j: usize| {
        let c = if j == 0 || j == n { 2.0 } else { 1.0 };
        if j % 2 == 0 {
            c
        } else {
            -c
        }
    };
    let mut d = DMatrix::zeros(n + 1, n + 1);
    for i in 0..=n {
        let mut row_sum = 0.0;
        for j in 0..=n {
            if i != j {
                let v = weight(i) / weight(j) / (x[i] - x[j]);
                d[(i, j)] = v;
                row_sum += v;
            }
        }
        // negative-sum trick keeps D * 1 = 0 to rounding
        d[(i, i)] = -row_sum;
    }
    (x, d)
}

/// Determinant of a small complex matrix via partial-pivot LU.
pub fn complex_determinant(m: &DMatrix<C64>) -> C64 {
    let lu = m.clone().lu();
    lu.determinant()
}
