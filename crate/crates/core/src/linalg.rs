//! Dense linear-algebra helpers: spectral radius, discrete Riccati and
//! Lyapunov equations.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn abs_matrix(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.map(f64::abs)
}

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn mat_inf_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, x| acc.max(x.abs()))
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Horizontal concatenation.
pub fn hcat(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let rows = blocks.first().map(|b| b.nrows()).unwrap_or(0);
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c = 0;
    for b in blocks {
        assert_eq!(b.nrows(), rows, "hcat row mismatch");
        out.view_mut((0, c), (rows, b.ncols())).copy_from(*b);
        c += b.ncols();
    }
    out
}

/// Vertical concatenation.
pub fn vcat(blocks: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let cols = blocks.first().map(|b| b.ncols()).unwrap_or(0);
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut r = 0;
    for b in blocks {
        assert_eq!(b.ncols(), cols, "vcat column mismatch");
        out.view_mut((r, 0), (b.nrows(), cols)).copy_from(*b);
        r += b.nrows();
    }
    out
}

pub fn block_diag(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols() + b.ncols());
    out.view_mut((0, 0), a.shape()).copy_from(a);
    out.view_mut((a.nrows(), a.ncols()), b.shape()).copy_from(b);
    out
}

/// Residual of the discrete Riccati equation
/// `A'PA - P + Q - A'PB (R + B'PB)^-1 B'PA`, entrywise max.
pub fn dare_residual(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> f64 {
    let btpa = b.transpose() * p * a;
    let s = r + b.transpose() * p * b;
    let gain = s
        .clone()
        .lu()
        .solve(&btpa)
        .unwrap_or_else(|| DMatrix::from_element(btpa.nrows(), btpa.ncols(), f64::NAN));
    let res = a.transpose() * p * a - p + q - btpa.transpose() * gain;
    mat_inf_norm(&res)
}

/// Solves the discrete algebraic Riccati equation by structured doubling,
/// then polishes with fixed-point sweeps. Returns the stabilizing `P`.
pub fn solve_dare(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let m = b.ncols();
    if a.ncols() != n || b.nrows() != n || q.shape() != (n, n) || r.shape() != (m, m) {
        return Err(Error::InvalidArgument("solve_dare: inconsistent shapes".into()));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let g0 = if m == 0 {
        DMatrix::zeros(n, n)
    } else {
        let rinv = r
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::InvalidArgument("R must be invertible".into()))?;
        b * rinv * b.transpose()
    };
    let (mut ak, mut gk, mut hk) = (a.clone(), g0, q.clone());
    let mut converged = false;
    for _ in 0..100 {
        let w = (&eye + &gk * &hk)
            .lu()
            .try_inverse()
            .ok_or_else(|| Error::Solver("Riccati doubling: singular step".into()))?;
        let a_next = &ak * &w * &ak;
        let g_next = &gk + &ak * &w * &gk * ak.transpose();
        let h_next = &hk + ak.transpose() * &hk * &w * &ak;
        let delta = mat_inf_norm(&(&h_next - &hk));
        let scale = mat_inf_norm(&h_next).max(1.0);
        ak = a_next;
        gk = symmetrize(&g_next);
        hk = symmetrize(&h_next);
        if !hk.iter().all(|v| v.is_finite()) || scale > 1e14 {
            return Err(Error::Unavailable(
                "Riccati iteration diverged; pair is not stabilizable".into(),
            ));
        }
        if delta <= 1e-13 * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Unavailable(
            "Riccati iteration did not converge; pair is not stabilizable".into(),
        ));
    }
    // fixed-point polish
    let mut p = hk;
    for _ in 0..50 {
        let btpa = b.transpose() * &p * a;
        let s = r + b.transpose() * &p * b;
        let corr = if m == 0 {
            DMatrix::zeros(n, n)
        } else {
            btpa.transpose()
                * s.lu()
                    .solve(&btpa)
                    .ok_or_else(|| Error::Solver("Riccati polish: singular".into()))?
        };
        let next = symmetrize(&(a.transpose() * &p * a + q - corr));
        let d = mat_inf_norm(&(&next - &p));
        p = next;
        if d <= 1e-15 * mat_inf_norm(&p).max(1.0) {
            break;
        }
    }
    Ok(p)
}

/// Discrete-time LQR. Returns `(K, P)` with the convention `u = K x`.
pub fn dlqr(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let p = solve_dare(a, b, q, r)?;
    let m = b.ncols();
    let k = if m == 0 {
        DMatrix::zeros(0, a.nrows())
    } else {
        let s = r + b.transpose() * &p * b;
        -s.lu()
            .solve(&(b.transpose() * &p * a))
            .ok_or_else(|| Error::Solver("LQR gain: singular".into()))?
    };
    let rho = spectral_radius(&(a + b * &k));
    if rho >= 1.0 {
        return Err(Error::Unstable {
            context: "LQR closed loop",
            radius: rho,
        });
    }
    Ok((k, p))
}

/// Solves `A' P A - P + Q = 0` for Schur-stable `A` by squaring doubling.
pub fn solve_discrete_lyapunov(a: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if n == 0 {
        return Ok(DMatrix::zeros(0, 0));
    }
    let rho = spectral_radius(a);
    if rho >= 1.0 {
        return Err(Error::Unstable {
            context: "discrete Lyapunov",
            radius: rho,
        });
    }
    let mut p = q.clone();
    let mut ak = a.clone();
    for _ in 0..64 {
        let inc = ak.transpose() * &p * &ak;
        let d = mat_inf_norm(&inc);
        p += inc;
        ak = &ak * &ak;
        if d <= 1e-17 * mat_inf_norm(&p).max(1e-300) || mat_inf_norm(&ak) == 0.0 {
            break;
        }
    }
    // residual polish: P <- A'PA + Q
    for _ in 0..4 {
        p = symmetrize(&(a.transpose() * &p * a + q));
    }
    Ok(p)
}

pub fn lyapunov_residual(a: &DMatrix<f64>, p: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    mat_inf_norm(&(a.transpose() * p * a - p + q))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scalar_lyapunov_matches_geometric_series() {
        let a = DMatrix::from_element(1, 1, 0.5);
        let q = DMatrix::from_element(1, 1, 1.0);
        let p = solve_discrete_lyapunov(&a, &q).unwrap();
        assert!((p[(0, 0)] - 4.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn uncontrolled_stable_scalar_gives_zero_gain() {
        let a = DMatrix::from_element(1, 1, 0.5);
        let b = DMatrix::zeros(1, 1);
        let (k, p) = dlqr(&a, &b, &DMatrix::identity(1, 1), &DMatrix::identity(1, 1)).unwrap();
        assert_eq!(k[(0, 0)], 0.0);
        assert!((p[(0, 0)] - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn unstable_uncontrollable_pair_is_rejected() {
        let a = DMatrix::from_element(1, 1, 1.5);
        let b = DMatrix::zeros(1, 1);
        assert!(dlqr(&a, &b, &DMatrix::identity(1, 1), &DMatrix::identity(1, 1)).is_err());
    }

    #[test]
    fn random_stable_lyapunov_residual_is_tiny() {
        let a = DMatrix::from_row_slice(3, 3, &[0.5, 0.2, -0.1, 0.0, 0.7, 0.3, 0.1, -0.2, 0.4]);
        let q = DMatrix::identity(3, 3);
        let p = solve_discrete_lyapunov(&a, &q).unwrap();
        assert!(lyapunov_residual(&a, &p, &q) < 1e-12);
    }
}
