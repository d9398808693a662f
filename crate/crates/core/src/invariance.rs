//! Robust positively invariant sets and terminal ingredients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::containment::{
    emit_phi_constraints, precompute_phi0, InclusionInstance, Outcome, PhiCertificate, SymInstance,
    SymTerm, Term,
};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{abs_matrix, dare_residual, dlqr, hcat, lyapunov_residual, solve_discrete_lyapunov, spectral_radius, vcat};
use crate::program::{ConvexProgram, ExprVec, Family, LinExpr, Sense, VarKind};
use crate::sets::{Polyhedron, Zonotope, DEFAULT_TOL};
use crate::solver::{ClarabelAdapter, SolverAdapter, Status};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RpiObjective {
    #[default]
    Minimize,
    Maximize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RpiResult {
    pub a_k: DMatrix<f64>,
    pub w: Zonotope,
    /// Template: `[I A_K ... A_K^s] G_w`, possibly followed by a zonogon block.
    pub seed_generators: DMatrix<f64>,
    pub delta: DVector<f64>,
    pub center: DVector<f64>,
    pub s: usize,
}

impl RpiResult {
    /// `G_bar diag(delta)`
    pub fn generators(&self) -> DMatrix<f64> {
        let mut g = self.seed_generators.clone();
        for (j, d) in self.delta.iter().enumerate() {
            g.column_mut(j).scale_mut(*d);
        }
        g
    }

    pub fn zonotope(&self) -> Zonotope {
        Zonotope::new(self.center.clone(), self.generators()).expect("finite RPI result")
    }

    /// Tube seed `G`. With `prune`, columns whose norm is below
    /// `1e-9 * largest` are dropped.
    pub fn tube_seed(&self, prune: bool) -> DMatrix<f64> {
        let g = self.generators();
        if !prune {
            return g;
        }
        let norms: Vec<f64> = (0..g.ncols()).map(|j| g.column(j).norm()).collect();
        let top = norms.iter().fold(0.0, |a: f64, b| a.max(*b));
        let keep: Vec<usize> = (0..g.ncols()).filter(|&j| top > 0.0 && norms[j] > 1e-9 * top).collect();
        g.select_columns(&keep)
    }

    /// Disturbance center after moving the RPI center to the origin:
    /// `c_w + (A_K - I) c`.
    pub fn folded_center(&self) -> DVector<f64> {
        let n = self.center.len();
        self.w.center() + (&self.a_k - DMatrix::identity(n, n)) * &self.center
    }

    /// Largest gauge of `A_K Z + W` in `Z`, minus one. Exact via vertices in
    /// the plane, corner points otherwise.
    pub fn invariance_slack(&self) -> Result<f64> {
        invariance_slack(&self.a_k, &self.w, &self.zonotope())
    }
}

/// `max gauge(A_K Z + W, Z) - 1`; nonpositive means invariant.
pub fn invariance_slack(a_k: &DMatrix<f64>, w: &Zonotope, z: &Zonotope) -> Result<f64> {
    let image = z.affine_map(a_k)?.minkowski_sum(w)?;
    let points: Vec<DVector<f64>> = if image.dim() == 2 {
        image
            .vertices_2d()?
            .into_iter()
            .map(|v| DVector::from_vec(v.to_vec()))
            .collect()
    } else {
        image.corner_points(16)?
    };
    let mut worst = f64::NEG_INFINITY;
    for p in &points {
        match z.gauge(p)? {
            Some(t) => worst = worst.max(t - 1.0),
            None => return Ok(f64::INFINITY),
        }
    }
    Ok(worst)
}

/// `[I A ... A^s] G`
pub fn krylov_generators(a_k: &DMatrix<f64>, g_w: &DMatrix<f64>, s: usize) -> DMatrix<f64> {
    let mut blocks = Vec::with_capacity(s + 1);
    let mut cur = g_w.clone();
    for _ in 0..=s {
        blocks.push(cur.clone());
        cur = a_k * cur;
    }
    let refs: Vec<&DMatrix<f64>> = blocks.iter().collect();
    hcat(&refs)
}

/// Scaled-zonotope RPI approximation: `A_K <c, G_bar D> + W` inside
/// `<c, G_bar D>`, optimizing `1' delta`.
pub fn compute_rpi(a_k: &DMatrix<f64>, w: &Zonotope, s: usize, objective: RpiObjective) -> Result<RpiResult> {
    let n = a_k.nrows();
    check_dim("compute_rpi A_K", n, a_k.ncols())?;
    check_dim("compute_rpi W", n, w.dim())?;
    if s == 0 {
        return Err(Error::InvalidArgument("s must be at least 1".into()));
    }
    let rho = spectral_radius(a_k);
    if rho >= 1.0 {
        return Err(Error::Unstable {
            context: "compute_rpi",
            radius: rho,
        });
    }
    let g_bar = krylov_generators(a_k, w.generators(), s);
    let (delta_v, center) = match invariant_scaling(a_k, w, &g_bar, &ScalingObjective::sum(g_bar.ncols(), objective)) {
        Err(Error::Infeasible(_)) => {
            return Err(Error::Infeasible(format!("RPI program infeasible at s = {s}; try a larger s")))
        }
        other => other?,
    };
    Ok(RpiResult {
        a_k: a_k.clone(),
        w: w.clone(),
        seed_generators: g_bar,
        delta: delta_v,
        center,
        s,
    })
}

/// What [`invariant_scaling`] optimizes.
#[derive(Clone, Debug, PartialEq)]
pub enum ScalingObjective {
    /// `weights' delta` in the given sense.
    Linear { weights: DVector<f64>, sense: RpiObjective },
    /// Smallest `t` with `|F T| delta <= t theta`; `theta > 0`.
    Tightness { f: DMatrix<f64>, theta: DVector<f64> },
}

impl ScalingObjective {
    pub fn sum(d: usize, sense: RpiObjective) -> Self {
        ScalingObjective::Linear {
            weights: DVector::from_element(d, 1.0),
            sense,
        }
    }
}

/// Scaling `delta >= 0` and center `c` with
/// `A_K <c, T diag(delta)> + W subset <c, T diag(delta)>` for a fixed
/// generator template `T`.
pub fn invariant_scaling(
    a_k: &DMatrix<f64>,
    w: &Zonotope,
    template: &DMatrix<f64>,
    objective: &ScalingObjective,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let n = a_k.nrows();
    check_dim("template rows", n, template.nrows())?;
    let d = template.ncols();
    let mut p = ConvexProgram::new();
    let c = p.add_block("c", VarKind::Decision, n);
    let delta = p.add_block("delta", VarKind::Scaling, d);
    let c_expr = c.exprs();
    let delta_expr = delta.exprs();
    let ac: ExprVec = (0..n)
        .map(|r| {
            let mut e = LinExpr::zero();
            for k in 0..n {
                if a_k[(r, k)] != 0.0 {
                    e.add_term(c.index(k), a_k[(r, k)]);
                }
            }
            e
        })
        .collect();
    let inst = SymInstance {
        lhs: vec![
            SymTerm {
                center: ac,
                generators: a_k * template,
                delta: Some(delta_expr.clone()),
            },
            SymTerm::numeric(w.center(), w.generators().clone()),
        ],
        rhs: SymTerm {
            center: c_expr,
            generators: template.clone(),
            delta: Some(delta_expr),
        },
    };
    emit_phi_constraints(&mut p, &inst, "phi", Family::Reach)?;
    for j in delta.range() {
        p.add_ge_zero(j, Family::Scaling);
    }
    match objective {
        ScalingObjective::Linear { weights, sense } => {
            check_dim("scaling weights", d, weights.len())?;
            let mut obj = LinExpr::zero();
            for (i, j) in delta.range().enumerate() {
                obj.add_term(j, weights[i]);
            }
            p.add_linear_objective(&obj);
            p.set_sense(match sense {
                RpiObjective::Minimize => Sense::Minimize,
                RpiObjective::Maximize => Sense::Maximize,
            });
        }
        ScalingObjective::Tightness { f, theta } => {
            check_dim("tightness rows", f.nrows(), theta.len())?;
            check_dim("tightness columns", n, f.ncols())?;
            if theta.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::InvalidArgument("tightness offsets must be positive".into()));
            }
            let t = p.add_block("t", VarKind::Auxiliary, 1);
            let ft = abs_matrix(&(f * template));
            for r in 0..f.nrows() {
                let mut e = LinExpr::term(t.index(0), -theta[r]);
                for (i, j) in delta.range().enumerate() {
                    if ft[(r, i)] != 0.0 {
                        e.add_term(j, ft[(r, i)]);
                    }
                }
                p.add_le(e, Family::Other);
            }
            p.add_linear_objective(&LinExpr::var(t.index(0)));
        }
    }
    let sol = ClarabelAdapter::default().solve(&p);
    match sol.status {
        Status::Optimal => {}
        Status::Infeasible => {
            return Err(Error::Infeasible("no invariant scaling of the template".into()))
        }
        Status::Unbounded => {
            return Err(Error::Unavailable(
                "RPI program unbounded in the maximizing direction".into(),
            ))
        }
        Status::SolverError => return Err(Error::Solver(sol.message)),
    }
    // interior-point iterates leave ~1e-11 residue on inactive entries
    let raw = p.block_values(&sol.x, &delta);
    let cut = 1e-9 * raw.iter().fold(1.0, |a: f64, b| a.max(*b));
    let delta_v = raw.map(|v| if v < cut { 0.0 } else { v });
    let center = p.block_values(&sol.x, &c).map(|v| if v.abs() < 1e-9 { 0.0 } else { v });
    Ok((delta_v, center))
}

/// Generators from the real Schur basis of `a_k`: one column per real
/// eigenvalue block and `p` evenly rotated columns spanning each complex
/// pair's plane (a regular zonogon in the block's rotation coordinates).
pub fn zonogon_template(a_k: &DMatrix<f64>, p: usize) -> Result<DMatrix<f64>> {
    let n = a_k.nrows();
    check_dim("zonogon template", n, a_k.ncols())?;
    if p == 0 {
        return Err(Error::InvalidArgument("zonogon needs at least one direction".into()));
    }
    let (q, t) = a_k.clone().schur().unpack();
    let mut cols = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)].abs() > 1e-12 {
            let (a11, a12, a21, a22) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
            let alpha = 0.5 * (a11 + a22);
            let beta = (-(0.25 * (a11 - a22).powi(2) + a12 * a21)).max(0.0).sqrt();
            // real and imaginary parts of the eigenvector (a12, lambda - a11)
            let re = DVector::from_vec(vec![a12, alpha - a11]);
            let im = DVector::from_vec(vec![0.0, beta]);
            let qb = q.columns(i, 2);
            for k in 0..p {
                let th = std::f64::consts::PI * k as f64 / p as f64;
                let v = &re * th.cos() + &im * th.sin();
                cols.push(&qb * (&v / v.norm()));
            }
            i += 2;
        } else {
            cols.push(q.column(i).into_owned());
            i += 1;
        }
    }
    Ok(DMatrix::from_columns(&cols))
}

/// Lower-order invariant seed: the `max_generators - n` longest columns of
/// `seed` are kept, the rest is replaced by its interval hull, and the
/// scaling program is solved again on that template.
pub fn reduce_seed(a_k: &DMatrix<f64>, w: &Zonotope, seed: &DMatrix<f64>, max_generators: usize) -> Result<DMatrix<f64>> {
    let n = seed.nrows();
    if seed.ncols() <= max_generators {
        return Ok(seed.clone());
    }
    if max_generators < n {
        return Err(Error::InvalidArgument("reduced seed needs at least n generators".into()));
    }
    let keep = max_generators - n;
    let mut order: Vec<usize> = (0..seed.ncols()).collect();
    order.sort_by(|&i, &j| seed.column(j).norm().total_cmp(&seed.column(i).norm()).then(i.cmp(&j)));
    let mut cols: Vec<DVector<f64>> = order[..keep].iter().map(|&j| seed.column(j).into_owned()).collect();
    let mut hull = DVector::zeros(n);
    for &j in &order[keep..] {
        hull += seed.column(j).abs();
    }
    for i in 0..n {
        if hull[i] > 0.0 {
            let mut e = DVector::zeros(n);
            e[i] = hull[i];
            cols.push(e);
        }
    }
    let template = DMatrix::from_columns(&cols);
    let (delta, _) = invariant_scaling(a_k, w, &template, &ScalingObjective::sum(template.ncols(), RpiObjective::Minimize))?;
    let kept: Vec<DVector<f64>> = (0..template.ncols())
        .filter(|&j| delta[j] > 0.0)
        .map(|j| template.column(j) * delta[j])
        .collect();
    if kept.is_empty() {
        return Ok(DMatrix::zeros(n, 0));
    }
    Ok(DMatrix::from_columns(&kept))
}

/// Outer reference `F(mu, s) = (1 - mu)^-1 (W + A_K W + ... + A_K^{s-1} W)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MrpiReference {
    pub mu: f64,
    pub set: Zonotope,
}

/// Smallest `mu` with `A_K^s W` inside `mu W` (both taken about their
/// centers), and the matching outer set.
pub fn mrpi_reference(a_k: &DMatrix<f64>, w: &Zonotope, s: usize) -> Result<MrpiReference> {
    let n = a_k.nrows();
    check_dim("mrpi_reference W", n, w.dim())?;
    let rho = spectral_radius(a_k);
    if rho >= 1.0 {
        return Err(Error::Unstable {
            context: "mrpi_reference",
            radius: rho,
        });
    }
    let a_s = a_k.pow(s as u32);
    let g_w = w.generators();
    let image = &a_s * g_w;
    let mu = if g_w.nrows() == g_w.ncols() && g_w.clone().try_inverse().is_some() {
        let inv = g_w.clone().try_inverse().expect("checked");
        let m = inv * &image;
        (0..m.nrows())
            .map(|r| m.row(r).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    } else {
        let centered = Zonotope::new(DVector::zeros(n), g_w.clone())?;
        let img = Zonotope::new(DVector::zeros(n), image)?;
        let mut worst: f64 = 0.0;
        for p in img.corner_points(16)? {
            match centered.gauge(&p)? {
                Some(t) => worst = worst.max(t),
                None => worst = f64::INFINITY,
            }
        }
        worst
    };
    if !(mu < 1.0) {
        return Err(Error::Unavailable(format!(
            "mu = {mu} >= 1 at s = {s}; increase s"
        )));
    }
    let scale = 1.0 / (1.0 - mu);
    let mut acc = Zonotope::point(DVector::zeros(n));
    let mut power = DMatrix::<f64>::identity(n, n);
    for _ in 0..s {
        acc = acc.minkowski_sum(&w.affine_map(&power)?)?;
        power = a_k * power;
    }
    Ok(MrpiReference {
        mu,
        set: acc.scale(scale),
    })
}

/// LQR terminal gain with `u = K_T x`, and its Riccati cost matrix.
pub fn terminal_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q_x: &DMatrix<f64>,
    q_u: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (k, p) = dlqr(a, b, q_x, q_u)?;
    let res = dare_residual(a, b, q_x, q_u, &p);
    let scale = crate::linalg::mat_inf_norm(&p).max(1.0);
    if res > 1e-9 * scale {
        return Err(Error::Solver(format!("Riccati residual {res:e} too large")));
    }
    Ok((k, p))
}

/// Splits `Phi0' (1_2 kron [1; delta; 1_{Dw}])` into `L delta + d` for the
/// layout `[center | A_K G | G_w]`.
pub fn delta_dynamics_from_phi0(phi0: &PhiCertificate, d_w: usize) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let dn = phi0.num_rhs();
    if phi0.block_layout != [1, dn, d_w] {
        return Err(Error::InvalidArgument(format!(
            "phi0 layout {:?} does not match [1, {dn}, {d_w}]",
            phi0.block_layout
        )));
    }
    let mass = |r: usize, k: usize| phi0.phi[(r, k)] + phi0.phi[(phi0.dbar + r, k)];
    let mut l = DMatrix::zeros(dn, dn);
    let mut d = DVector::zeros(dn);
    for k in 0..dn {
        d[k] += mass(0, k);
        for j in 0..dn {
            l[(k, j)] = mass(1 + j, k);
        }
        for j in 0..d_w {
            d[k] += mass(1 + dn + j, k);
        }
    }
    Ok((l, d))
}

/// `(I - L)^-1 d`
pub fn delta_fixed_point(l: &DMatrix<f64>, d: &DVector<f64>) -> Result<DVector<f64>> {
    let rho = spectral_radius(l);
    if rho >= 1.0 {
        return Err(Error::Unstable {
            context: "delta dynamics",
            radius: rho,
        });
    }
    let n = l.nrows();
    if n == 0 {
        return Ok(DVector::zeros(0));
    }
    (DMatrix::identity(n, n) - l)
        .lu()
        .solve(d)
        .ok_or_else(|| Error::Solver("singular I - L".into()))
}

/// Which terminal constraint the tube program enforces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TerminalMode {
    /// `(x, delta)` in the invariant set of the extended dynamics.
    #[default]
    Extended,
    /// State slice of the extended set at `delta = delta*`.
    StateSlice,
    /// `x = 0` and `delta <= 1`; needs the seed admissible at unit scaling.
    Point,
}

/// Inputs to the extended-space invariant-set recurrence.
#[derive(Clone, Debug)]
pub struct TerminalSetSpec<'a> {
    pub a_kt: &'a DMatrix<f64>,
    pub k_t: &'a DMatrix<f64>,
    pub k_fb: &'a DMatrix<f64>,
    /// Tube seed generators `G` (center already folded to zero).
    pub g: &'a DMatrix<f64>,
    pub x_set: &'a Polyhedron,
    pub u_set: &'a Polyhedron,
    pub l: &'a DMatrix<f64>,
    pub d: &'a DVector<f64>,
    pub max_iter: usize,
    pub tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerminalSet {
    /// Invariant set over `(x, delta)`.
    pub extended: Polyhedron,
    pub iterations: usize,
    pub delta_star: DVector<f64>,
}

impl TerminalSet {
    /// `{x : (x, delta*) in extended}`
    pub fn state_slice(&self) -> Result<Polyhedron> {
        let n = self.extended.dim() - self.delta_star.len();
        let f = self.extended.normals();
        let fx = f.columns(0, n).into_owned();
        let fd = f.columns(n, self.delta_star.len()).into_owned();
        Polyhedron::new(fx, self.extended.offsets() - fd * &self.delta_star)?
            .remove_redundancy(DEFAULT_TOL)
    }

    /// `x = 0` as `[I; -I] x <= 0`.
    pub fn origin(n: usize) -> Polyhedron {
        let eye = DMatrix::<f64>::identity(n, n);
        Polyhedron::new(vcat(&[&eye, &(-&eye)]), DVector::zeros(2 * n)).expect("finite")
    }
}

/// Stage-constraint set `Omega_0` over `(x, delta)`.
pub fn omega_zero(spec: &TerminalSetSpec) -> Result<Polyhedron> {
    let n = spec.a_kt.nrows();
    let dg = spec.g.ncols();
    check_dim("terminal set G rows", n, spec.g.nrows())?;
    check_dim("terminal set L", dg, spec.l.nrows())?;
    let fx = spec.x_set.normals();
    let fu = spec.u_set.normals();
    let state = hcat(&[fx, &abs_matrix(&(fx * spec.g))]);
    let input = hcat(&[&(fu * spec.k_t), &abs_matrix(&(fu * spec.k_fb * spec.g))]);
    let nonneg = hcat(&[&DMatrix::zeros(dg, n), &(-DMatrix::<f64>::identity(dg, dg))]);
    let f = vcat(&[&state, &input, &nonneg]);
    let mut theta = DVector::zeros(f.nrows());
    theta.rows_mut(0, fx.nrows()).copy_from(spec.x_set.offsets());
    theta
        .rows_mut(fx.nrows(), fu.nrows())
        .copy_from(spec.u_set.offsets());
    Polyhedron::new(f, theta)?.remove_redundancy(spec.tol)
}

/// Maximal invariant set of `(x, delta) -> (A_KT x, L delta + d)` inside
/// `Omega_0`, by the preimage recurrence.
pub fn compute_terminal_set(spec: &TerminalSetSpec) -> Result<TerminalSet> {
    let n = spec.a_kt.nrows();
    let dg = spec.g.ncols();
    let rho_a = spectral_radius(spec.a_kt);
    if rho_a >= 1.0 {
        return Err(Error::Unstable {
            context: "terminal A_KT",
            radius: rho_a,
        });
    }
    let delta_star = delta_fixed_point(spec.l, spec.d)?;
    let omega0 = omega_zero(spec)?;
    let m = crate::linalg::block_diag(spec.a_kt, spec.l);
    let mut shift = DVector::zeros(n + dg);
    shift.rows_mut(n, dg).copy_from(&(-spec.d));
    let mut omega = omega0.clone();
    for it in 1..=spec.max_iter {
        let next = omega
            .translate(&shift)?
            .preimage(&m)?
            .intersect(&omega0)?
            .remove_redundancy(spec.tol)?;
        if omega.is_subset_of(&next, spec.tol)? && next.is_subset_of(&omega, spec.tol)? {
            return Ok(TerminalSet {
                extended: next,
                iterations: it,
                delta_star,
            });
        }
        omega = next;
    }
    Err(Error::IterationCap {
        context: "terminal set recurrence",
        cap: spec.max_iter,
    })
}

/// Equality (Lyapunov) forms of the terminal cost conditions.
pub fn compute_terminal_costs(
    a_kt: &DMatrix<f64>,
    k_t: &DMatrix<f64>,
    l: &DMatrix<f64>,
    q_x: &DMatrix<f64>,
    q_u: &DMatrix<f64>,
    q_delta: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let qx_total = q_x + k_t.transpose() * q_u * k_t;
    let p_x = solve_discrete_lyapunov(a_kt, &qx_total)?;
    let p_d = solve_discrete_lyapunov(l, q_delta)?;
    Ok((p_x, p_d))
}

/// Everything the tube program needs at the end of the horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerminalIngredients {
    pub k_t: DMatrix<f64>,
    pub l_matrix: DMatrix<f64>,
    /// Offset used by the terminal dynamics (`L 1 + d = 1` after padding).
    pub d_vector: DVector<f64>,
    /// Offset read directly from `Phi0` before padding.
    pub d_raw: DVector<f64>,
    pub delta_star: DVector<f64>,
    /// Extended invariant set; not built in point mode.
    pub set: Option<TerminalSet>,
    pub mode: TerminalMode,
    pub p_x: DMatrix<f64>,
    pub p_delta: DMatrix<f64>,
    pub residual_x: f64,
    pub residual_delta: f64,
}

/// Weights for stage and terminal costs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostWeights {
    pub q_x: DMatrix<f64>,
    pub q_u: DMatrix<f64>,
    pub q_delta: DMatrix<f64>,
}

/// One-step instance `A_K <0, G> + <0, G_w>` inside `<0, G>` used for the
/// offline certificates.
pub fn one_step_instance(a_k: &DMatrix<f64>, g: &DMatrix<f64>, g_w: &DMatrix<f64>) -> Result<InclusionInstance> {
    let n = g.nrows();
    InclusionInstance::new(
        vec![
            Term::new(DVector::zeros(n), a_k * g),
            Term::new(DVector::zeros(n), g_w.clone()),
        ],
        Term::new(DVector::zeros(n), g.clone()),
    )
}

/// Builds the terminal gain, delta dynamics, invariant set and costs.
///
/// The tube feedback `A_K` drives the delta dynamics since the tube
/// cross-sections follow the error dynamics.
#[allow(clippy::too_many_arguments)]
pub fn build_terminal(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k_fb: &DMatrix<f64>,
    g: &DMatrix<f64>,
    g_w: &DMatrix<f64>,
    x_set: &Polyhedron,
    u_set: &Polyhedron,
    weights: &CostWeights,
    mode: TerminalMode,
    max_iter: usize,
) -> Result<(TerminalIngredients, PhiCertificate)> {
    let (k_t, _) = terminal_gain(a, b, &weights.q_x, &weights.q_u)?;
    let a_k = a + b * k_fb;
    let a_kt = a + b * &k_t;
    let inst = one_step_instance(&a_k, g, g_w)?;
    let phi0 = match precompute_phi0(&inst, DEFAULT_TOL)? {
        Outcome::Feasible(c) => c,
        Outcome::Infeasible => {
            return Err(Error::Infeasible(
                "one-step certificate infeasible at unit scaling".into(),
            ))
        }
    };
    let (l, d_raw) = delta_dynamics_from_phi0(&phi0, g_w.ncols())?;
    let ones = DVector::from_element(l.nrows(), 1.0);
    let slack = &ones - (&l * &ones + &d_raw);
    if slack.iter().any(|v| *v < -1e-7) {
        return Err(Error::Infeasible("phi0 budget exceeds one".into()));
    }
    // pad the constant part so that delta = 1 is the fixed point
    let d_vector = (&ones - &l * &ones).map(|v| v.max(0.0));
    let rho_l = spectral_radius(&l);
    if rho_l >= 1.0 {
        return Err(Error::Unstable {
            context: "delta dynamics L",
            radius: rho_l,
        });
    }
    let spec = TerminalSetSpec {
        a_kt: &a_kt,
        k_t: &k_t,
        k_fb,
        g,
        x_set,
        u_set,
        l: &l,
        d: &d_vector,
        max_iter,
        tol: DEFAULT_TOL,
    };
    let set = match mode {
        TerminalMode::Point => None,
        _ => Some(compute_terminal_set(&spec)?),
    };
    let delta_star = match &set {
        Some(t) => t.delta_star.clone(),
        None => delta_fixed_point(&l, &d_vector)?,
    };
    let (p_x, p_delta) = compute_terminal_costs(&a_kt, &k_t, &l, &weights.q_x, &weights.q_u, &weights.q_delta)?;
    let qx_total = &weights.q_x + k_t.transpose() * &weights.q_u * &k_t;
    let residual_x = lyapunov_residual(&a_kt, &p_x, &qx_total);
    let residual_delta = lyapunov_residual(&l, &p_delta, &weights.q_delta);
    Ok((
        TerminalIngredients {
            k_t,
            l_matrix: l,
            d_vector,
            d_raw,
            delta_star,
            set,
            mode,
            p_x,
            p_delta,
            residual_x,
            residual_delta,
        },
        phi0,
    ))
}
