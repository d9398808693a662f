//! Tube MPC program assembly for rigid, homothetic and elastic scaled
//! zonotope tubes.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::containment::{
    emit_phi_constraints, phi0_runtime_condition, precompute_gamma, precompute_phi0, GammaCertificate, Outcome,
    PhiCertificate, SymInstance, SymTerm,
};
use crate::error::{check_dim, Error, Result};
use crate::invariance::{
    build_terminal, compute_rpi, invariant_scaling, krylov_generators, one_step_instance, reduce_seed, zonogon_template,
    ScalingObjective, CostWeights, RpiObjective, RpiResult, TerminalIngredients,
    TerminalMode, TerminalSet,
};
use crate::linalg::{abs_matrix, hcat, spectral_radius, vcat};
use crate::program::{add_exprs, const_vec, mat_expr, sub_exprs, ConvexProgram, ExprVec, Family, LinExpr, VarKind};
use crate::sets::{IntervalBox, Polyhedron, Zonotope, DEFAULT_TOL};
use crate::solver::{SolverAdapter, Status};

/// `x+ = A x + B u + w`, `w` in `W`, with tube feedback `u = v + K (x - z)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LtiSystem {
    pub name: String,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub k_fb: DMatrix<f64>,
    pub w: Zonotope,
    pub x_box: IntervalBox,
    pub u_box: IntervalBox,
    pub x_poly: Polyhedron,
    pub u_poly: Polyhedron,
    /// Sampling time used for discretization, if any.
    pub ts: Option<f64>,
}

impl LtiSystem {
    pub fn new(
        name: impl Into<String>,
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        k_fb: DMatrix<f64>,
        w: Zonotope,
        x_box: IntervalBox,
        u_box: IntervalBox,
    ) -> Result<Self> {
        let n = a.nrows();
        check_dim("system A", n, a.ncols())?;
        check_dim("system B rows", n, b.nrows())?;
        let m = b.ncols();
        check_dim("feedback rows", m, k_fb.nrows())?;
        check_dim("feedback cols", n, k_fb.ncols())?;
        check_dim("disturbance", n, w.dim())?;
        check_dim("state box", n, x_box.dim())?;
        check_dim("input box", m, u_box.dim())?;
        let rho = spectral_radius(&(&a + &b * &k_fb));
        if rho >= 1.0 {
            return Err(Error::Unstable {
                context: "tube feedback A + B K",
                radius: rho,
            });
        }
        let x_poly = x_box.to_polyhedron();
        let u_poly = u_box.to_polyhedron();
        Ok(Self {
            name: name.into(),
            a,
            b,
            k_fb,
            w,
            x_box,
            u_box,
            x_poly,
            u_poly,
            ts: None,
        })
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn a_k(&self) -> DMatrix<f64> {
        &self.a + &self.b * &self.k_fb
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TubeType {
    Rigid,
    Homothetic,
    Elastic,
}

impl TubeType {
    pub const ALL: [TubeType; 3] = [TubeType::Rigid, TubeType::Homothetic, TubeType::Elastic];

    pub fn name(self) -> &'static str {
        match self {
            TubeType::Rigid => "rigid",
            TubeType::Homothetic => "homothetic",
            TubeType::Elastic => "elastic",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Gamma,
    Phi,
    Phi0,
}

impl Encoding {
    pub const ALL: [Encoding; 3] = [Encoding::Gamma, Encoding::Phi, Encoding::Phi0];

    pub fn name(self) -> &'static str {
        match self {
            Encoding::Gamma => "gamma",
            Encoding::Phi => "phi",
            Encoding::Phi0 => "phi0",
        }
    }
}

/// Offline products shared by every tube variant of one system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineData {
    pub rpi: RpiResult,
    /// Tube seed `G`.
    pub seed: DMatrix<f64>,
    pub phi0: PhiCertificate,
    pub gamma: GammaCertificate,
    pub terminal: TerminalIngredients,
    pub weights: CostWeights,
    pub offline_time: Duration,
}

/// Objective of the seed scaling program.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedObjective {
    /// `min 1' delta`
    #[default]
    Sum,
    /// Smallest fraction of the state and input constraints the seed uses.
    Tightness,
}

/// Settings for [`prepare_offline`].
#[derive(Clone, Debug)]
pub struct OfflineSettings {
    pub q_x: DMatrix<f64>,
    pub q_u: DMatrix<f64>,
    /// Weight on `delta - 1`; identity of the seed size when `None`.
    pub q_delta: Option<DMatrix<f64>>,
    pub s: usize,
    pub terminal_mode: TerminalMode,
    pub prune_seed: bool,
    /// Relative inflation of the RPI generators used as tube seed.
    pub seed_margin: f64,
    /// Append a zonogon block of this many directions per complex mode to
    /// the seed template.
    pub zonogon: Option<usize>,
    pub seed_objective: SeedObjective,
    /// Reduce the seed to at most this many generators.
    pub max_seed_generators: Option<usize>,
    pub max_terminal_iter: usize,
}

impl OfflineSettings {
    pub fn new(q_x: DMatrix<f64>, q_u: DMatrix<f64>) -> Self {
        Self {
            q_x,
            q_u,
            q_delta: None,
            s: 6,
            terminal_mode: TerminalMode::Extended,
            prune_seed: true,
            seed_margin: 1e-6,
            zonogon: None,
            seed_objective: SeedObjective::Sum,
            max_seed_generators: None,
            max_terminal_iter: 200,
        }
    }
}

/// RPI scaling of the configured template (plain Krylov by default).
pub fn seed_rpi(sys: &LtiSystem, settings: &OfflineSettings) -> Result<RpiResult> {
    let a_k = sys.a_k();
    if settings.zonogon.is_none() && settings.seed_objective == SeedObjective::Sum {
        return compute_rpi(&a_k, &sys.w, settings.s, RpiObjective::Minimize);
    }
    let mut template = krylov_generators(&a_k, sys.w.generators(), settings.s);
    if let Some(p) = settings.zonogon {
        template = hcat(&[&template, &zonogon_template(&a_k, p)?]);
    }
    let objective = match settings.seed_objective {
        SeedObjective::Sum => ScalingObjective::sum(template.ncols(), RpiObjective::Minimize),
        SeedObjective::Tightness => ScalingObjective::Tightness {
            f: vcat(&[sys.x_poly.normals(), &(sys.u_poly.normals() * &sys.k_fb)]),
            theta: DVector::from_iterator(
                sys.x_poly.num_rows() + sys.u_poly.num_rows(),
                sys.x_poly.offsets().iter().chain(sys.u_poly.offsets().iter()).copied(),
            ),
        },
    };
    let (delta, center) = invariant_scaling(&a_k, &sys.w, &template, &objective)?;
    Ok(RpiResult {
        a_k,
        w: sys.w.clone(),
        seed_generators: template,
        delta,
        center,
        s: settings.s,
    })
}

/// Inflates the RPI generators until the one-step multipliers fit in a
/// unit budget. The margin starts at `seed_margin` and grows tenfold up to
/// `1e-3`; the RPI program is only solved to interior-point accuracy.
fn certified_seed(sys: &LtiSystem, rpi: &RpiResult, settings: &OfflineSettings) -> Result<DMatrix<f64>> {
    let mut base = rpi.tube_seed(settings.prune_seed);
    if let Some(max) = settings.max_seed_generators {
        base = reduce_seed(&sys.a_k(), &sys.w, &base, max)?;
    }
    let mut margin = settings.seed_margin;
    loop {
        let seed = &base * (1.0 + margin);
        let inst = one_step_instance(&sys.a_k(), &seed, sys.w.generators())?;
        if let Outcome::Feasible(c) = precompute_phi0(&inst, DEFAULT_TOL)? {
            if c.budget().iter().all(|b| *b <= 1.0 + 1e-9) {
                return Ok(seed);
            }
        }
        if margin >= 1e-3 {
            return Err(Error::Infeasible("no seed margin up to 1e-3 gives a unit one-step budget".into()));
        }
        margin = if margin > 0.0 { (margin * 10.0).min(1e-3) } else { 1e-9 };
    }
}

/// RPI seed, offline certificates and terminal ingredients.
pub fn prepare_offline(sys: &LtiSystem, settings: &OfflineSettings) -> Result<OfflineData> {
    let start = Instant::now();
    let rpi = seed_rpi(sys, settings)?;
    let mut off = prepare_offline_from_rpi(sys, settings, rpi)?;
    off.offline_time = start.elapsed();
    Ok(off)
}

/// Offline stage on top of an RPI result computed earlier (for the same
/// system and seed settings).
pub fn prepare_offline_from_rpi(sys: &LtiSystem, settings: &OfflineSettings, rpi: RpiResult) -> Result<OfflineData> {
    let start = Instant::now();
    check_dim("rpi state dimension", sys.n(), rpi.center.len())?;
    if !(settings.seed_margin >= 0.0) {
        return Err(Error::InvalidArgument("seed margin must be nonnegative".into()));
    }
    let seed = certified_seed(sys, &rpi, settings)?;
    let d = seed.ncols();
    let q_delta = match &settings.q_delta {
        Some(q) => {
            check_dim("q_delta", d, q.nrows())?;
            q.clone()
        }
        None => DMatrix::identity(d, d),
    };
    let weights = CostWeights {
        q_x: settings.q_x.clone(),
        q_u: settings.q_u.clone(),
        q_delta,
    };
    let (terminal, phi0) = build_terminal(
        &sys.a,
        &sys.b,
        &sys.k_fb,
        &seed,
        sys.w.generators(),
        &sys.x_poly,
        &sys.u_poly,
        &weights,
        settings.terminal_mode,
        settings.max_terminal_iter,
    )?;
    if settings.terminal_mode == TerminalMode::Point {
        let ones = DVector::from_element(d, 1.0);
        let sx = abs_matrix(&(sys.x_poly.normals() * &seed)) * &ones - sys.x_poly.offsets();
        let su = abs_matrix(&(sys.u_poly.normals() * &sys.k_fb * &seed)) * &ones - sys.u_poly.offsets();
        if sx.iter().chain(su.iter()).any(|v| *v > 0.0) {
            return Err(Error::Infeasible("tube seed not admissible at unit scaling; point terminal unusable".into()));
        }
    }
    let inst = one_step_instance(&sys.a_k(), &seed, sys.w.generators())?;
    let gamma = match precompute_gamma(&inst, DEFAULT_TOL)? {
        Outcome::Feasible(g) => g,
        Outcome::Infeasible => return Err(Error::Infeasible("one-step multipliers infeasible".into())),
    };
    debug_assert!(precompute_phi0(&inst, DEFAULT_TOL)?.is_feasible());
    Ok(OfflineData {
        rpi,
        seed,
        phi0,
        gamma,
        terminal,
        weights,
        offline_time: start.elapsed(),
    })
}

#[derive(Clone, Debug)]
pub struct TubeConfig {
    pub tube_type: TubeType,
    pub encoding: Encoding,
    pub with_centers: bool,
    /// Number of prediction steps; nodes are `0..=horizon`.
    pub horizon: usize,
    pub q_x: DMatrix<f64>,
    pub q_u: DMatrix<f64>,
    pub q_delta: DMatrix<f64>,
    pub p_x: DMatrix<f64>,
    pub p_delta: DMatrix<f64>,
    pub seed: DMatrix<f64>,
    pub terminal_mode: TerminalMode,
    pub terminal: Option<TerminalSet>,
    pub phi0: Option<PhiCertificate>,
    pub gamma: Option<GammaCertificate>,
    /// Drop the objective (pure feasibility program).
    pub feasibility_only: bool,
}

impl TubeConfig {
    pub fn from_offline(
        off: &OfflineData,
        tube_type: TubeType,
        encoding: Encoding,
        with_centers: bool,
        horizon: usize,
    ) -> Self {
        Self {
            tube_type,
            encoding,
            with_centers,
            horizon,
            q_x: off.weights.q_x.clone(),
            q_u: off.weights.q_u.clone(),
            q_delta: off.weights.q_delta.clone(),
            p_x: off.terminal.p_x.clone(),
            p_delta: off.terminal.p_delta.clone(),
            seed: off.seed.clone(),
            terminal_mode: off.terminal.mode,
            terminal: off.terminal.set.clone(),
            phi0: Some(off.phi0.clone()),
            gamma: Some(off.gamma.clone()),
            feasibility_only: false,
        }
    }

    pub fn with_terminal_mode(mut self, mode: TerminalMode) -> Self {
        self.terminal_mode = mode;
        self
    }

    pub fn variant_name(&self) -> String {
        format!(
            "{}-{}-{}",
            self.tube_type.name(),
            self.encoding.name(),
            if self.with_centers { "c" } else { "nc" }
        )
    }
}

/// How the measured initial state enters the program.
#[derive(Clone, Debug)]
pub enum InitialCondition {
    /// `x0` inside the first cross-section.
    Point(DVector<f64>),
    /// Some `x0` in the box lies inside the first cross-section.
    Box(IntervalBox),
    /// The whole zonotope lies inside the first cross-section.
    Set(Zonotope),
}

/// A built program plus the expressions needed to read a solution back.
#[derive(Clone, Debug)]
pub struct TubeProgram {
    pub program: ConvexProgram,
    pub x_bar: Vec<ExprVec>,
    pub u_bar: Vec<ExprVec>,
    pub delta: Vec<ExprVec>,
    pub centers: Vec<ExprVec>,
    pub seed: DMatrix<f64>,
    pub build_time: Duration,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TubeStatus {
    Optimal,
    Infeasible,
    SolverError,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TubeSolution {
    pub status: TubeStatus,
    pub x_bar: Vec<DVector<f64>>,
    pub u_bar: Vec<DVector<f64>>,
    pub delta: Vec<DVector<f64>>,
    pub centers: Vec<DVector<f64>>,
    pub cost: f64,
    pub residual: f64,
    pub build_time: Duration,
    pub solve_time: Duration,
    pub message: String,
}

impl TubeSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == TubeStatus::Optimal
    }

    /// Cross-section `<x_k + c_k, G diag(delta_k)>`.
    pub fn cross_section(&self, seed: &DMatrix<f64>, k: usize) -> Result<Zonotope> {
        let mut g = seed.clone();
        for (j, d) in self.delta[k].iter().enumerate() {
            g.column_mut(j).scale_mut(d.max(0.0));
        }
        Zonotope::new(&self.x_bar[k] + &self.centers[k], g)
    }
}

fn expr_value(e: &[LinExpr], x: &[f64]) -> DVector<f64> {
    DVector::from_iterator(e.len(), e.iter().map(|v| v.eval(x)))
}

fn scaled_support_rows(
    p: &mut ConvexProgram,
    f: &DMatrix<f64>,
    theta: &DVector<f64>,
    point: &[LinExpr],
    abs_fg: &DMatrix<f64>,
    delta: &[LinExpr],
    family: Family,
) {
    let fp = mat_expr(f, point);
    let fd = mat_expr(abs_fg, delta);
    for r in 0..f.nrows() {
        let mut e = fp[r].clone();
        e.add_scaled(&fd[r], 1.0);
        e.add_constant(-theta[r]);
        p.add_le(e, family);
    }
}

/// Assembles the tube program.
pub fn build_tube_program(sys: &LtiSystem, cfg: &TubeConfig, init: &InitialCondition) -> Result<TubeProgram> {
    let start = Instant::now();
    let n = sys.n();
    let m = sys.m();
    let h = cfg.horizon;
    if h == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let g = &cfg.seed;
    check_dim("tube seed rows", n, g.nrows())?;
    let d = g.ncols();
    check_dim("q_x", n, cfg.q_x.nrows())?;
    check_dim("q_u", m, cfg.q_u.nrows())?;
    check_dim("p_x", n, cfg.p_x.nrows())?;
    if cfg.tube_type != TubeType::Rigid && !cfg.feasibility_only {
        check_dim("q_delta", d, cfg.q_delta.nrows())?;
        check_dim("p_delta", d, cfg.p_delta.nrows())?;
    }
    let a_k = sys.a_k();
    let g_w = sys.w.generators();
    let c_w = sys.w.center();

    let mut p = ConvexProgram::new();
    let x_bar: Vec<ExprVec> = (0..=h)
        .map(|k| p.add_block(format!("x{k}"), VarKind::Decision, n).exprs())
        .collect();
    let u_bar: Vec<ExprVec> = (0..h)
        .map(|k| p.add_block(format!("u{k}"), VarKind::Decision, m).exprs())
        .collect();
    let delta: Vec<ExprVec> = match cfg.tube_type {
        TubeType::Rigid => (0..=h).map(|_| vec![LinExpr::constant(1.0); d]).collect(),
        TubeType::Homothetic => (0..=h)
            .map(|k| {
                let a = p.add_block(format!("alpha{k}"), VarKind::Scaling, 1);
                vec![LinExpr::var(a.index(0)); d]
            })
            .collect(),
        TubeType::Elastic => (0..=h)
            .map(|k| p.add_block(format!("delta{k}"), VarKind::Scaling, d).exprs())
            .collect(),
    };
    for b in p.blocks().to_vec() {
        if b.kind == VarKind::Scaling {
            for v in b.range() {
                p.add_ge_zero(v, Family::Scaling);
            }
        }
    }

    // centers
    let centers: Vec<ExprVec> = if cfg.with_centers {
        let cs: Vec<ExprVec> = (0..=h)
            .map(|k| p.add_block(format!("c{k}"), VarKind::Auxiliary, n).exprs())
            .collect();
        for (k, ck) in cs.iter().enumerate().take(h) {
            let lam = p.add_block(format!("lambda{k}"), VarKind::Auxiliary, d);
            let gl = mat_expr(g, &lam.exprs());
            for r in 0..n {
                p.add_eq(ck[r].clone().minus(&gl[r]), Family::Center);
            }
            for v in lam.range() {
                p.add_le(LinExpr::var(v).plus(&LinExpr::constant(-1.0)), Family::Center);
                p.add_le(LinExpr::term(v, -1.0).plus(&LinExpr::constant(-1.0)), Family::Center);
            }
        }
        cs
    } else {
        (0..=h).map(|_| vec![LinExpr::zero(); n]).collect()
    };

    // initial condition
    let node0 = add_exprs(&x_bar[0], &centers[0]);
    match init {
        InitialCondition::Point(_) | InitialCondition::Box(_) => {
            let x0: ExprVec = match init {
                InitialCondition::Point(x0) => {
                    check_dim("initial state", n, x0.len())?;
                    const_vec(x0)
                }
                InitialCondition::Box(bx) => {
                    check_dim("initial box", n, bx.dim())?;
                    let xb = p.add_block("init_x", VarKind::Auxiliary, n);
                    for i in 0..n {
                        p.add_le(
                            LinExpr::var(xb.index(i)).plus(&LinExpr::constant(-bx.upper()[i])),
                            Family::Initial,
                        );
                        p.add_le(
                            LinExpr::term(xb.index(i), -1.0).plus(&LinExpr::constant(bx.lower()[i])),
                            Family::Initial,
                        );
                    }
                    xb.exprs()
                }
                InitialCondition::Set(_) => unreachable!(),
            };
            let xi = p.add_block("init_xi", VarKind::Auxiliary, d);
            let gx = mat_expr(g, &xi.exprs());
            let lhs = sub_exprs(&sub_exprs(&x0, &node0), &gx);
            for e in lhs {
                p.add_eq(e, Family::Initial);
            }
            for j in 0..d {
                let v = LinExpr::var(xi.index(j));
                p.add_le(v.clone().minus(&delta[0][j]), Family::Initial);
                p.add_le(v.negated().minus(&delta[0][j]), Family::Initial);
            }
        }
        InitialCondition::Set(z) => {
            check_dim("initial set", n, z.dim())?;
            let inst = SymInstance {
                lhs: vec![SymTerm::numeric(z.center(), z.generators().clone())],
                rhs: SymTerm {
                    center: node0.clone(),
                    generators: g.clone(),
                    delta: Some(delta[0].clone()),
                },
            };
            emit_phi_constraints(&mut p, &inst, "init_phi", Family::Initial)?;
        }
    }

    // state and input admissibility for k < h
    let fx = sys.x_poly.normals();
    let fu = sys.u_poly.normals();
    let abs_fxg = abs_matrix(&(fx * g));
    let abs_fukg = abs_matrix(&(fu * &sys.k_fb * g));
    for k in 0..h {
        let node = add_exprs(&x_bar[k], &centers[k]);
        scaled_support_rows(&mut p, fx, sys.x_poly.offsets(), &node, &abs_fxg, &delta[k], Family::State);
        let inp = add_exprs(&u_bar[k], &mat_expr(&sys.k_fb, &centers[k]));
        scaled_support_rows(&mut p, fu, sys.u_poly.offsets(), &inp, &abs_fukg, &delta[k], Family::Input);
    }

    // terminal
    let node_h = add_exprs(&x_bar[h], &centers[h]);
    let term = cfg.terminal.as_ref();
    let extended_rows = |p: &mut ConvexProgram, t: &TerminalSet| -> Result<()> {
        check_dim("terminal set dimension", n + d, t.extended.dim())?;
        let f = t.extended.normals();
        let fx_t = f.columns(0, n).into_owned();
        let fd_t = f.columns(n, d).into_owned();
        let a = mat_expr(&fx_t, &node_h);
        let b = mat_expr(&fd_t, &delta[h]);
        for r in 0..f.nrows() {
            let mut e = a[r].clone();
            e.add_scaled(&b[r], 1.0);
            e.add_constant(-t.extended.offsets()[r]);
            p.add_le(e, Family::Terminal);
        }
        Ok(())
    };
    match cfg.terminal_mode {
        TerminalMode::Extended => {
            let t = term.ok_or_else(|| Error::InvalidArgument("missing terminal set".into()))?;
            extended_rows(&mut p, t)?;
        }
        TerminalMode::StateSlice => {
            let t = term.ok_or_else(|| Error::InvalidArgument("missing terminal set".into()))?;
            let slice = t.state_slice()?;
            let abs_ftg = abs_matrix(&(slice.normals() * g));
            scaled_support_rows(
                &mut p,
                slice.normals(),
                slice.offsets(),
                &node_h,
                &abs_ftg,
                &delta[h],
                Family::Terminal,
            );
        }
        TerminalMode::Point => {
            for e in &node_h {
                p.add_le(e.clone(), Family::Terminal);
                p.add_le(e.negated(), Family::Terminal);
            }
            if cfg.tube_type != TubeType::Rigid {
                for e in &delta[h] {
                    p.add_le(e.clone().minus(&LinExpr::constant(1.0)), Family::Terminal);
                }
            }
        }
    }

    // one-step reachability
    let akg = &a_k * g;
    for k in 0..h {
        let prop: ExprVec = {
            let mut v = add_exprs(&mat_expr(&sys.a, &x_bar[k]), &mat_expr(&sys.b, &u_bar[k]));
            v = add_exprs(&v, &mat_expr(&a_k, &centers[k]));
            add_exprs(&v, &const_vec(c_w))
        };
        let next = add_exprs(&x_bar[k + 1], &centers[k + 1]);
        match cfg.encoding {
            Encoding::Phi => {
                let inst = SymInstance {
                    lhs: vec![
                        SymTerm {
                            center: prop,
                            generators: akg.clone(),
                            delta: Some(delta[k].clone()),
                        },
                        SymTerm::numeric(&DVector::zeros(n), g_w.clone()),
                    ],
                    rhs: SymTerm {
                        center: next,
                        generators: g.clone(),
                        delta: Some(delta[k + 1].clone()),
                    },
                };
                emit_phi_constraints(&mut p, &inst, &format!("phi{k}"), Family::Reach)?;
            }
            Encoding::Phi0 => {
                let phi0 = cfg
                    .phi0
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("phi0 encoding needs a stored certificate".into()))?;
                let pk = p.add_block(format!("p{k}"), VarKind::Auxiliary, d);
                let mk = p.add_block(format!("m{k}"), VarKind::Auxiliary, d);
                let r = sub_exprs(&prop, &next);
                let gpm = mat_expr(g, &sub_exprs(&pk.exprs(), &mk.exprs()));
                for e in sub_exprs(&r, &gpm) {
                    p.add_eq(e, Family::Reach);
                }
                for v in pk.range().chain(mk.range()) {
                    p.add_ge_zero(v, Family::Reach);
                }
                let budget: ExprVec = (0..d)
                    .map(|j| {
                        delta[k + 1][j]
                            .clone()
                            .minus(&LinExpr::var(pk.index(j)))
                            .minus(&LinExpr::var(mk.index(j)))
                    })
                    .collect();
                let ones = vec![LinExpr::constant(1.0); g_w.ncols()];
                phi0_runtime_condition(&mut p, phi0, &[delta[k].clone(), ones], &budget, Family::Reach)?;
            }
            Encoding::Gamma => {
                let gc = cfg
                    .gamma
                    .as_ref()
                    .ok_or_else(|| Error::InvalidArgument("gamma encoding needs a stored certificate".into()))?;
                if gc.gammas.len() != 2 || gc.gammas[0].shape() != (d, d) || gc.gammas[1].shape() != (d, g_w.ncols()) {
                    return Err(Error::InvalidArgument("gamma certificate layout mismatch".into()));
                }
                let gk = p.add_block(format!("gamma{k}"), VarKind::Auxiliary, d);
                let r = sub_exprs(&prop, &next);
                let gg = mat_expr(g, &gk.exprs());
                for e in sub_exprs(&r, &gg) {
                    p.add_eq(e, Family::Reach);
                }
                let abs_a = gc.gammas[0].abs();
                let fixed = gc.gammas[1].abs() * DVector::from_element(g_w.ncols(), 1.0) + gc.gamma_vec.abs();
                let scaled = mat_expr(&abs_a, &delta[k]);
                for j in 0..d {
                    let mut base = scaled[j].clone();
                    base.add_constant(fixed[j]);
                    base.add_scaled(&delta[k + 1][j], -1.0);
                    p.add_le(base.clone().plus(&LinExpr::var(gk.index(j))), Family::Reach);
                    p.add_le(base.minus(&LinExpr::var(gk.index(j))), Family::Reach);
                }
            }
        }
    }

    // objective
    if !cfg.feasibility_only {
        let use_delta = cfg.tube_type != TubeType::Rigid && d > 0;
        for k in 0..h {
            p.add_quadratic_form(&x_bar[k], &cfg.q_x);
            p.add_quadratic_form(&u_bar[k], &cfg.q_u);
            if use_delta {
                let dev: ExprVec = delta[k].iter().map(|e| e.clone().minus(&LinExpr::constant(1.0))).collect();
                p.add_quadratic_form(&dev, &cfg.q_delta);
            }
        }
        // c_h carries no bound of its own, so the terminal cost sits on the node
        p.add_quadratic_form(&node_h, &cfg.p_x);
        if use_delta {
            let dev: ExprVec = delta[h].iter().map(|e| e.clone().minus(&LinExpr::constant(1.0))).collect();
            p.add_quadratic_form(&dev, &cfg.p_delta);
        }
    }

    Ok(TubeProgram {
        program: p,
        x_bar,
        u_bar,
        delta,
        centers,
        seed: g.clone(),
        build_time: start.elapsed(),
    })
}

/// Solves with `adapter` and reads back the trajectories.
pub fn solve_program(tp: &TubeProgram, adapter: &dyn SolverAdapter) -> TubeSolution {
    let sol = adapter.solve(&tp.program);
    let status = match sol.status {
        Status::Optimal if sol.residual <= 1e-6 => TubeStatus::Optimal,
        Status::Optimal => TubeStatus::SolverError,
        Status::Infeasible => TubeStatus::Infeasible,
        Status::Unbounded | Status::SolverError => TubeStatus::SolverError,
    };
    let read = |v: &[ExprVec]| -> Vec<DVector<f64>> {
        if sol.x.len() == tp.program.num_vars() {
            v.iter().map(|e| expr_value(e, &sol.x)).collect()
        } else {
            Vec::new()
        }
    };
    TubeSolution {
        status,
        x_bar: read(&tp.x_bar),
        u_bar: read(&tp.u_bar),
        delta: read(&tp.delta),
        centers: read(&tp.centers),
        cost: sol.objective,
        residual: sol.residual,
        build_time: tp.build_time,
        solve_time: sol.solve_time,
        message: sol.message,
    }
}

/// `u = u_bar_0 + K (x - x_bar_0)`
pub fn extract_control(sol: &TubeSolution, k_fb: &DMatrix<f64>, x: &DVector<f64>) -> Result<DVector<f64>> {
    if !sol.is_optimal() {
        return Err(Error::InvalidArgument("control requested from a non-optimal solution".into()));
    }
    check_dim("extract_control state", sol.x_bar[0].len(), x.len())?;
    Ok(&sol.u_bar[0] + k_fb * (x - &sol.x_bar[0]))
}

/// Build and solve in one call.
pub fn solve_tube(
    sys: &LtiSystem,
    cfg: &TubeConfig,
    init: &InitialCondition,
    adapter: &dyn SolverAdapter,
) -> Result<TubeSolution> {
    let tp = build_tube_program(sys, cfg, init)?;
    Ok(solve_program(&tp, adapter))
}

/// Nominal MPC over the same horizon: `x+ = A x + B u`, box constraints on
/// every node before the last, terminal rows `F_T x_N <= theta_T`, cost
/// `sum x'Qx + u'Ru + x_N' P x_N`. Returns `(cost, status)`.
#[allow(clippy::too_many_arguments)]
pub fn nominal_mpc_program(
    sys: &LtiSystem,
    horizon: usize,
    q_x: &DMatrix<f64>,
    q_u: &DMatrix<f64>,
    p_x: &DMatrix<f64>,
    terminal: Option<&Polyhedron>,
    x0: &DVector<f64>,
) -> Result<ConvexProgram> {
    let n = sys.n();
    let m = sys.m();
    check_dim("nominal x0", n, x0.len())?;
    let mut p = ConvexProgram::new();
    let xs: Vec<ExprVec> = (0..=horizon)
        .map(|k| p.add_block(format!("x{k}"), VarKind::Decision, n).exprs())
        .collect();
    let us: Vec<ExprVec> = (0..horizon)
        .map(|k| p.add_block(format!("u{k}"), VarKind::Decision, m).exprs())
        .collect();
    for e in sub_exprs(&xs[0], &const_vec(x0)) {
        p.add_eq(e, Family::Initial);
    }
    for k in 0..horizon {
        let next = add_exprs(&mat_expr(&sys.a, &xs[k]), &mat_expr(&sys.b, &us[k]));
        for e in sub_exprs(&xs[k + 1], &next) {
            p.add_eq(e, Family::Reach);
        }
        for (r, e) in mat_expr(sys.x_poly.normals(), &xs[k]).into_iter().enumerate() {
            p.add_le(e.plus(&LinExpr::constant(-sys.x_poly.offsets()[r])), Family::State);
        }
        for (r, e) in mat_expr(sys.u_poly.normals(), &us[k]).into_iter().enumerate() {
            p.add_le(e.plus(&LinExpr::constant(-sys.u_poly.offsets()[r])), Family::Input);
        }
        p.add_quadratic_form(&xs[k], q_x);
        p.add_quadratic_form(&us[k], q_u);
    }
    if let Some(t) = terminal {
        for (r, e) in mat_expr(t.normals(), &xs[horizon]).into_iter().enumerate() {
            p.add_le(e.plus(&LinExpr::constant(-t.offsets()[r])), Family::Terminal);
        }
    }
    p.add_quadratic_form(&xs[horizon], p_x);
    Ok(p)
}

/// True if `x` is within `tol` (infinity norm) of the cross-section `k`
/// of `sol`. An absolute distance keeps nearly degenerate sections usable.
pub fn in_cross_section(sol: &TubeSolution, seed: &DMatrix<f64>, k: usize, x: &DVector<f64>, tol: f64) -> Result<bool> {
    Ok(sol.cross_section(seed, k)?.distance(x)? <= tol)
}
