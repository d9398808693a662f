//! Benchmark plants.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use ztube::linalg::dlqr;
use ztube::sets::{IntervalBox, Zonotope};
use ztube::tube::LtiSystem;
use ztube::{Error, Result};

/// Dynamics of the planar double integrator. The constraint and
/// disturbance sets are fixed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoubleIntegratorParams {
    pub a: [[f64; 2]; 2],
    pub b: [f64; 2],
    pub w: f64,
    pub q: f64,
    pub r: f64,
}

impl Default for DoubleIntegratorParams {
    fn default() -> Self {
        Self {
            a: [[1.0, 1.0], [0.0, 1.0]],
            b: [0.5, 1.0],
            w: 0.1,
            q: 1.0,
            r: 0.01,
        }
    }
}

pub fn make_double_integrator() -> LtiSystem {
    double_integrator_with(&DoubleIntegratorParams::default()).expect("default double integrator is stabilizable")
}

pub fn double_integrator_with(p: &DoubleIntegratorParams) -> Result<LtiSystem> {
    let a = DMatrix::from_row_slice(2, 2, &[p.a[0][0], p.a[0][1], p.a[1][0], p.a[1][1]]);
    let b = DMatrix::from_row_slice(2, 1, &p.b);
    let (k, _) = dlqr(&a, &b, &(DMatrix::identity(2, 2) * p.q), &DMatrix::from_element(1, 1, p.r))?;
    LtiSystem::new(
        "double_integrator",
        a,
        b,
        k,
        Zonotope::centered_box(2, p.w),
        IntervalBox::from_slices(&[-10.0, -10.0], &[10.0, 2.0])?,
        IntervalBox::symmetric(1, 1.0),
    )
}

/// Free-free spring chain stiffness: `k * diag(1, 2, .., 2, 1)` with `-k`
/// off the diagonal.
pub fn chain_stiffness(ell: usize, k: f64) -> DMatrix<f64> {
    let mut kc = DMatrix::zeros(ell, ell);
    for i in 0..ell.saturating_sub(1) {
        kc[(i, i)] += k;
        kc[(i + 1, i + 1)] += k;
        kc[(i, i + 1)] -= k;
        kc[(i + 1, i)] -= k;
    }
    kc
}

/// Spring-mass-damper chain with forces at both ends, forward-Euler
/// discretized.
pub fn make_cse_system(ell: usize, mu: f64, tau: f64, k: f64, ts: f64) -> Result<LtiSystem> {
    if ell == 0 {
        return Err(Error::InvalidArgument("chain needs at least one mass".into()));
    }
    if mu <= 0.0 || ts <= 0.0 {
        return Err(Error::InvalidArgument("mass and sampling time must be positive".into()));
    }
    let n = 2 * ell;
    let kc = chain_stiffness(ell, k);
    let mut dc = DMatrix::zeros(ell, 2);
    dc[(0, 0)] = 1.0;
    dc[(ell - 1, 1)] = -1.0;
    let mut a = DMatrix::zeros(n, n);
    a.view_mut((0, ell), (ell, ell)).fill_with_identity();
    a.view_mut((ell, 0), (ell, ell)).copy_from(&(-&kc / mu));
    a.view_mut((ell, ell), (ell, ell)).copy_from(&(DMatrix::identity(ell, ell) * (-tau / mu)));
    let mut b = DMatrix::zeros(n, 2);
    b.view_mut((ell, 0), (ell, 2)).copy_from(&(&dc / mu));
    let ad = DMatrix::identity(n, n) + a * ts;
    let bd = b * ts;
    let (kfb, _) = dlqr(&ad, &bd, &DMatrix::identity(n, n), &(DMatrix::identity(2, 2) * 0.01)).map_err(|e| {
        Error::InvalidArgument(format!("discretized chain with ell = {ell} at ts = {ts} is not stabilizable: {e}"))
    })?;
    let mut sys = LtiSystem::new(
        format!("cse{ell}"),
        ad,
        bd,
        kfb,
        Zonotope::centered_box(n, 0.001),
        IntervalBox::symmetric(n, 1.0),
        IntervalBox::symmetric(2, 1.0),
    )?;
    sys.ts = Some(ts);
    Ok(sys)
}
