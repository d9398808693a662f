#![allow(dead_code)]

use nalgebra::DMatrix;
use ztube::linalg::dlqr;
use ztube::sets::{IntervalBox, Zonotope};
use ztube::tube::{prepare_offline, LtiSystem, OfflineData, OfflineSettings};

pub fn double_integrator(w: f64) -> LtiSystem {
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]);
    let b = DMatrix::from_row_slice(2, 1, &[0.5, 1.0]);
    let (k, _) = dlqr(&a, &b, &DMatrix::identity(2, 2), &DMatrix::from_element(1, 1, 0.01)).unwrap();
    LtiSystem::new(
        "double_integrator",
        a,
        b,
        k,
        Zonotope::centered_box(2, w),
        IntervalBox::from_slices(&[-10.0, -10.0], &[10.0, 2.0]).unwrap(),
        IntervalBox::symmetric(1, 1.0),
    )
    .unwrap()
}

pub fn offline(sys: &LtiSystem) -> OfflineData {
    let st = OfflineSettings::new(DMatrix::identity(sys.n(), sys.n()), DMatrix::identity(sys.m(), sys.m()) * 0.01);
    prepare_offline(sys, &st).unwrap()
}

/// Three-state chain with two inputs, used for a second count tuple.
pub fn three_state() -> LtiSystem {
    let a = DMatrix::from_row_slice(3, 3, &[1.0, 0.2, 0.0, 0.0, 1.0, 0.2, 0.0, 0.0, 0.9]);
    let b = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.2, 0.0, 0.0, 0.2]);
    let (k, _) = dlqr(&a, &b, &DMatrix::identity(3, 3), &DMatrix::identity(2, 2)).unwrap();
    LtiSystem::new(
        "chain3",
        a,
        b,
        k,
        Zonotope::centered_box(3, 0.01),
        IntervalBox::symmetric(3, 5.0),
        IntervalBox::symmetric(2, 2.0),
    )
    .unwrap()
}
