//! Random instances and set samplers used by the property and acceptance
//! suites.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use ztube::containment::{InclusionInstance, Term};
use ztube::program::{ConvexProgram, Family, LinExpr, Sense, VarKind};
use ztube::sets::{Polyhedron, Zonotope};
use ztube::solver::{ClarabelAdapter, SolverAdapter};
use ztube::{Error, Result};

fn gaussian_direction<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    loop {
        let d = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let norm = d.norm();
        if norm > 1e-3 && norm <= 1.0 {
            return d / norm;
        }
    }
}

/// Center and radius of the largest ball inside `p`.
pub fn chebyshev_center(p: &Polyhedron) -> Result<(DVector<f64>, f64)> {
    let n = p.dim();
    let mut prog = ConvexProgram::new();
    let x = prog.add_block("x", VarKind::Decision, n);
    let r = prog.add_block("r", VarKind::Decision, 1);
    for (i, row) in p.normals().row_iter().enumerate() {
        let mut e = LinExpr::term(r.index(0), row.norm());
        for j in 0..n {
            e.add_term(x.index(j), row[j]);
        }
        e.add_constant(-p.offsets()[i]);
        prog.add_le(e, Family::Other);
    }
    prog.add_le(LinExpr::term(r.index(0), 1.0).plus(&LinExpr::constant(-1e6)), Family::Other);
    prog.set_sense(Sense::Maximize);
    prog.add_linear_objective(&LinExpr::var(r.index(0)));
    let sol = ClarabelAdapter::default().solve(&prog);
    if !sol.is_optimal() || sol.x[n] <= 0.0 {
        return Err(Error::Infeasible("polyhedron has no interior".into()));
    }
    Ok((DVector::from_column_slice(&sol.x[..n]), sol.x[n]))
}

/// Hit-and-run walk over a bounded polyhedron, started at its Chebyshev
/// center. Returns `count` points after `burn_in` discarded moves; `thin`
/// moves separate consecutive samples.
pub fn hit_and_run<R: Rng>(
    p: &Polyhedron,
    count: usize,
    burn_in: usize,
    thin: usize,
    rng: &mut R,
) -> Result<Vec<DVector<f64>>> {
    let (mut x, _) = chebyshev_center(p)?;
    let n = p.dim();
    let f = p.normals();
    let mut out = Vec::with_capacity(count);
    let mut step = 0usize;
    while out.len() < count {
        let d = gaussian_direction(rng, n);
        let fd = f * &d;
        let slack = p.offsets() - f * &x;
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..fd.len() {
            let s = slack[i].max(0.0);
            if fd[i] > 1e-14 {
                hi = hi.min(s / fd[i]);
            } else if fd[i] < -1e-14 {
                lo = lo.max(s / fd[i]);
            }
        }
        if !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument("hit-and-run needs a bounded polyhedron".into()));
        }
        x += &d * rng.gen_range(lo..=hi);
        step += 1;
        if step > burn_in && (step - burn_in) % thin.max(1) == 0 {
            out.push(x.clone());
        }
    }
    Ok(out)
}

/// Random planar zonotope with `1..=max_gens` generators.
pub fn random_zonotope2<R: Rng>(rng: &mut R, max_gens: usize) -> Zonotope {
    let d = rng.gen_range(1..=max_gens.max(1));
    let c = DVector::from_fn(2, |_, _| rng.gen_range(-1.0..1.0));
    let g = DMatrix::from_fn(2, d, |_, _| rng.gen_range(-1.5..1.5));
    Zonotope::new(c, g).expect("consistent shapes")
}

/// `Z_l subset Z_r` with both sides drawn independently; the right side is
/// scaled up by a random factor so both outcomes are common.
pub fn random_inclusion_instance<R: Rng>(rng: &mut R, max_gens: usize) -> InclusionInstance {
    let l = random_zonotope2(rng, max_gens);
    let r = random_zonotope2(rng, max_gens).scale(rng.gen_range(0.5..3.0));
    InclusionInstance::new(vec![Term::from_zonotope(&l)], Term::from_zonotope(&r)).expect("planar terms")
}

/// One-step shaped instance `A G diag(dl) + W subset G diag(dr)`, centered
/// at the origin, plus the scalings. The unit version carries `dl = dr = 1`.
pub struct ScaledInstance {
    pub unit: InclusionInstance,
    pub scaled: InclusionInstance,
    pub delta_lhs: DVector<f64>,
    pub delta_rhs: DVector<f64>,
}

pub fn random_scaled_instance<R: Rng>(rng: &mut R, max_gens: usize) -> ScaledInstance {
    let d = rng.gen_range(1..=max_gens.max(1));
    let g = DMatrix::from_fn(2, d, |_, _| rng.gen_range(-1.0..1.0));
    let a = DMatrix::from_fn(2, 2, |_, _| rng.gen_range(-0.8..0.8));
    let dw = rng.gen_range(1..=2);
    let gw = DMatrix::from_fn(2, dw, |_, _| rng.gen_range(-0.2..0.2));
    let dl = DVector::from_fn(d, |_, _| rng.gen_range(0.0..1.5));
    let dr = DVector::from_fn(d, |_, _| rng.gen_range(0.0..1.5));
    let zero = DVector::zeros(2);
    let lhs = Term::new(zero.clone(), &a * &g);
    let w = Term::new(zero.clone(), gw);
    let rhs = Term::new(zero, g);
    ScaledInstance {
        unit: InclusionInstance::new(vec![lhs.clone(), w.clone()], rhs.clone()).expect("planar terms"),
        scaled: InclusionInstance::new(vec![lhs.scaled(dl.clone()), w], rhs.scaled(dr.clone())).expect("planar terms"),
        delta_lhs: dl,
        delta_rhs: dr,
    }
}
