//! Linear certificates for inclusions of sums of scaled zonotopes into a
//! scaled zonotope, plus an exact (vertex based) oracle for small instances.
//!
//! Every certificate uses the block order `[center difference | lhs term 1 |
//! lhs term 2 | ...]`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::program::{ConvexProgram, ExprVec, Family, LinExpr, RowSpan, Sense, VarBlock, VarKind};
use crate::sets::{Zonotope, DEFAULT_TOL};
use crate::solver::{ClarabelAdapter, SolverAdapter, Status};

/// Result of a sufficient-condition test. Infeasibility is information.
#[derive(Clone, Debug, PartialEq)]
pub enum Outcome<T> {
    Feasible(T),
    Infeasible,
}

impl<T> Outcome<T> {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Outcome::Feasible(_))
    }

    pub fn feasible(self) -> Option<T> {
        match self {
            Outcome::Feasible(t) => Some(t),
            Outcome::Infeasible => None,
        }
    }
}

/// One numeric term `<c, G diag(delta)>`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub center: DVector<f64>,
    pub generators: DMatrix<f64>,
    pub delta: Option<DVector<f64>>,
}

impl Term {
    pub fn new(center: DVector<f64>, generators: DMatrix<f64>) -> Self {
        Self {
            center,
            generators,
            delta: None,
        }
    }

    pub fn from_zonotope(z: &Zonotope) -> Self {
        Self::new(z.center().clone(), z.generators().clone())
    }

    pub fn scaled(mut self, delta: DVector<f64>) -> Self {
        self.delta = Some(delta);
        self
    }

    /// Generators with the scaling applied.
    pub fn folded_generators(&self) -> DMatrix<f64> {
        let mut g = self.generators.clone();
        if let Some(d) = &self.delta {
            for (j, s) in d.iter().enumerate() {
                g.column_mut(j).scale_mut(*s);
            }
        }
        g
    }

    fn check(&self, n: usize) -> Result<()> {
        check_dim("inclusion term center", n, self.center.len())?;
        check_dim("inclusion term generators", n, self.generators.nrows())?;
        if let Some(d) = &self.delta {
            check_dim("inclusion term scaling", self.generators.ncols(), d.len())?;
            if d.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                return Err(Error::InvalidArgument("negative scaling factor".into()));
            }
        }
        Ok(())
    }
}

/// `lhs_1 + ... + lhs_k  subset of  rhs`
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InclusionInstance {
    pub lhs: Vec<Term>,
    pub rhs: Term,
}

impl InclusionInstance {
    pub fn new(lhs: Vec<Term>, rhs: Term) -> Result<Self> {
        let inst = Self { lhs, rhs };
        inst.validate()?;
        Ok(inst)
    }

    pub fn dim(&self) -> usize {
        self.rhs.center.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        self.rhs.check(n)?;
        for t in &self.lhs {
            t.check(n)?;
        }
        Ok(())
    }

    /// Block sizes `[1, D_1, ..., D_k]`.
    pub fn block_layout(&self) -> Vec<usize> {
        std::iter::once(1)
            .chain(self.lhs.iter().map(|t| t.generators.ncols()))
            .collect()
    }

    pub fn dbar(&self) -> usize {
        self.block_layout().iter().sum()
    }

    /// `[sum c_i - c_n | G_1 Delta_1 | ...]`
    fn target_columns(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut y = DMatrix::zeros(n, self.dbar());
        let mut cdiff = -self.rhs.center.clone();
        for t in &self.lhs {
            cdiff += &t.center;
        }
        y.column_mut(0).copy_from(&cdiff);
        let mut col = 1;
        for t in &self.lhs {
            let g = t.folded_generators();
            y.view_mut((0, col), g.shape()).copy_from(&g);
            col += g.ncols();
        }
        y
    }

    /// Sum of the left terms as one zonotope.
    pub fn lhs_sum(&self) -> Result<Zonotope> {
        let mut acc = Zonotope::point(DVector::zeros(self.dim()));
        for t in &self.lhs {
            acc = acc.minkowski_sum(&Zonotope::new(t.center.clone(), t.folded_generators())?)?;
        }
        Ok(acc)
    }

    pub fn rhs_zonotope(&self) -> Result<Zonotope> {
        Zonotope::new(self.rhs.center.clone(), self.rhs.folded_generators())
    }
}

/// Multipliers of the direct form: `G_i = G_n Gamma_i`, `c_diff = G_n gamma`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaCertificate {
    pub gammas: Vec<DMatrix<f64>>,
    pub gamma_vec: DVector<f64>,
    /// Largest entry of `sum |Gamma_i| 1 + |gamma|`.
    pub objective: f64,
}

impl GammaCertificate {
    /// `sum |Gamma_i| 1 + |gamma|`
    pub fn budget(&self) -> DVector<f64> {
        let mut b = self.gamma_vec.abs();
        for g in &self.gammas {
            b += g.abs() * DVector::from_element(g.ncols(), 1.0);
        }
        b
    }
}

/// Cross-polytope coefficients; `phi` is `2 Dbar x D_n`, top half positive
/// parts and bottom half negative parts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiCertificate {
    pub phi: DMatrix<f64>,
    pub dbar: usize,
    pub block_layout: Vec<usize>,
    pub objective: f64,
}

impl PhiCertificate {
    pub fn num_rhs(&self) -> usize {
        self.phi.ncols()
    }

    /// `Phi' 1`
    pub fn budget(&self) -> DVector<f64> {
        self.phi.transpose() * DVector::from_element(self.phi.nrows(), 1.0)
    }

    /// `(Phi_top - Phi_bot)'`, a `D_n x Dbar` matrix `[gamma | Gamma_1 | ...]`.
    pub fn xi(&self) -> DMatrix<f64> {
        let top = self.phi.rows(0, self.dbar);
        let bot = self.phi.rows(self.dbar, self.dbar);
        (top - bot).transpose()
    }

    pub fn induced_gamma(&self) -> GammaCertificate {
        let xi = self.xi();
        let mut gammas = Vec::new();
        let mut col = 1;
        for &len in &self.block_layout[1..] {
            gammas.push(xi.columns(col, len).into_owned());
            col += len;
        }
        let mut cert = GammaCertificate {
            gammas,
            gamma_vec: xi.column(0).into_owned(),
            objective: 0.0,
        };
        cert.objective = cert.budget().iter().fold(0.0, |a: f64, b| a.max(*b));
        cert
    }

    /// `Phi0' (1_2 kron [1; delta_1; ...])` for numeric scalings.
    pub fn runtime_budget(&self, deltas: &[DVector<f64>]) -> Result<DVector<f64>> {
        let w = self.row_weights(deltas)?;
        Ok(self.phi.transpose() * w)
    }

    fn row_weights(&self, deltas: &[DVector<f64>]) -> Result<DVector<f64>> {
        check_dim("phi0 layout blocks", self.block_layout.len() - 1, deltas.len())?;
        let mut half = Vec::with_capacity(self.dbar);
        half.push(1.0);
        for (len, d) in self.block_layout[1..].iter().zip(deltas) {
            check_dim("phi0 layout block", *len, d.len())?;
            half.extend(d.iter().copied());
        }
        Ok(DVector::from_iterator(
            2 * self.dbar,
            half.iter().chain(half.iter()).copied(),
        ))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Builds and solves `min t` (then optionally the least total mass at that
/// `t`) over the split-variable system `G_n (P - M) = Y`, `P, M >= 0`,
/// `(P + M) 1 <= t`. Returns `(P - M, P + M)` layouts as `(D_n x Dbar)` pairs.
struct SplitSolution {
    plus: DMatrix<f64>,
    minus: DMatrix<f64>,
    t: f64,
}

fn solve_split(g_n: &DMatrix<f64>, y: &DMatrix<f64>, lexicographic: bool) -> Result<Option<SplitSolution>> {
    let (n, dn) = g_n.shape();
    let dbar = y.ncols();
    let build = |t_cap: Option<f64>| {
        let mut p = ConvexProgram::new();
        let plus = p.add_block("plus", VarKind::Auxiliary, dn * dbar);
        let minus = p.add_block("minus", VarKind::Auxiliary, dn * dbar);
        let t = p.add_block("t", VarKind::Auxiliary, 1);
        let at = |k: usize, j: usize| k * dbar + j;
        for j in 0..dbar {
            for r in 0..n {
                let mut e = LinExpr::constant(-y[(r, j)]);
                for k in 0..dn {
                    let g = g_n[(r, k)];
                    if g != 0.0 {
                        e.add_term(plus.index(at(k, j)), g);
                        e.add_term(minus.index(at(k, j)), -g);
                    }
                }
                p.add_eq(e, Family::Other);
            }
        }
        for v in plus.range().chain(minus.range()) {
            p.add_ge_zero(v, Family::Other);
        }
        p.add_ge_zero(t.index(0), Family::Other);
        for k in 0..dn {
            let mut e = LinExpr::zero();
            for j in 0..dbar {
                e.add_term(plus.index(at(k, j)), 1.0);
                e.add_term(minus.index(at(k, j)), 1.0);
            }
            match t_cap {
                None => {
                    e.add_term(t.index(0), -1.0);
                }
                Some(cap) => {
                    e.add_constant(-cap);
                }
            }
            p.add_le(e, Family::Other);
        }
        let mut obj = LinExpr::zero();
        match t_cap {
            None => {
                obj.add_term(t.index(0), 1.0);
            }
            Some(_) => {
                for v in plus.range().chain(minus.range()) {
                    obj.add_term(v, 1.0);
                }
            }
        }
        p.add_linear_objective(&obj);
        p.set_sense(Sense::Minimize);
        (p, plus, minus, t)
    };

    let adapter = ClarabelAdapter::default();
    let (p, plus, minus, t) = build(None);
    let sol = adapter.solve(&p);
    let unpack = |x: &[f64], plus: &VarBlock, minus: &VarBlock| {
        let pm = DMatrix::from_row_slice(dn, dbar, &x[plus.range()]).map(|v| v.max(0.0));
        let mm = DMatrix::from_row_slice(dn, dbar, &x[minus.range()]).map(|v| v.max(0.0));
        (pm, mm)
    };
    let t_star = match sol.status {
        Status::Optimal => sol.x[t.index(0)].max(0.0),
        Status::Infeasible => return Ok(None),
        _ => return Err(Error::Solver(format!("containment LP: {}", sol.message))),
    };
    let (mut pm, mut mm) = unpack(&sol.x, &plus, &minus);
    if lexicographic {
        let cap = t_star * (1.0 + 1e-9) + 1e-12;
        let (p2, plus2, minus2, _) = build(Some(cap));
        let sol2 = adapter.solve(&p2);
        if sol2.is_optimal() {
            let (a, b) = unpack(&sol2.x, &plus2, &minus2);
            pm = a;
            mm = b;
        }
    }
    // cancel simultaneous positive and negative parts
    for (a, b) in pm.iter_mut().zip(mm.iter_mut()) {
        let c = a.min(*b);
        *a -= c;
        *b -= c;
    }
    Ok(Some(SplitSolution {
        plus: pm,
        minus: mm,
        t: t_star,
    }))
}

fn folded_system(inst: &InclusionInstance) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    inst.validate()?;
    Ok((inst.rhs.folded_generators(), inst.target_columns()))
}

/// Direct multipliers minimizing the largest row budget. Feasible iff that
/// budget is at most `1 + tol`.
pub fn solve_gamma(inst: &InclusionInstance, tol: f64) -> Result<Outcome<GammaCertificate>> {
    let (g_n, y) = folded_system(inst)?;
    let Some(s) = solve_split(&g_n, &y, false)? else {
        return Ok(Outcome::Infeasible);
    };
    if s.t > 1.0 + tol {
        return Ok(Outcome::Infeasible);
    }
    let xi = &s.plus - &s.minus;
    let mut gammas = Vec::new();
    let mut col = 1;
    for t in &inst.lhs {
        let len = t.generators.ncols();
        gammas.push(xi.columns(col, len).into_owned());
        col += len;
    }
    let mut cert = GammaCertificate {
        gammas,
        gamma_vec: xi.column(0).into_owned(),
        objective: s.t,
    };
    cert.objective = cert.budget().iter().fold(0.0, |a: f64, b| a.max(*b));
    Ok(Outcome::Feasible(cert))
}

fn phi_from_split(s: &SplitSolution, inst: &InclusionInstance) -> PhiCertificate {
    let dbar = inst.dbar();
    let dn = s.plus.nrows();
    let mut phi = DMatrix::zeros(2 * dbar, dn);
    phi.rows_mut(0, dbar).copy_from(&s.plus.transpose());
    phi.rows_mut(dbar, dbar).copy_from(&s.minus.transpose());
    let mut cert = PhiCertificate {
        phi,
        dbar,
        block_layout: inst.block_layout(),
        objective: s.t,
    };
    cert.objective = cert.budget().iter().fold(0.0, |a: f64, b| a.max(*b));
    cert
}

/// Cross-polytope certificate with `Phi' 1 <= 1`, minimizing `||Phi' 1||_inf`.
pub fn solve_phi_unscaled(inst: &InclusionInstance, tol: f64) -> Result<Outcome<PhiCertificate>> {
    let (g_n, y) = folded_system(inst)?;
    let Some(s) = solve_split(&g_n, &y, false)? else {
        return Ok(Outcome::Infeasible);
    };
    if s.t > 1.0 + tol {
        return Ok(Outcome::Infeasible);
    }
    Ok(Outcome::Feasible(phi_from_split(&s, inst)))
}

/// Offline certificate at unit scaling. Among the minimizers of
/// `||Phi' 1||_inf` the one with least total mass is returned.
pub fn precompute_phi0(inst: &InclusionInstance, tol: f64) -> Result<Outcome<PhiCertificate>> {
    let unit = |t: &Term| t.delta.as_ref().map_or(true, |d| d.iter().all(|v| *v == 1.0));
    if !inst.lhs.iter().all(unit) || !unit(&inst.rhs) {
        return Err(Error::InvalidArgument("precompute_phi0 expects unit scaling".into()));
    }
    let (g_n, y) = folded_system(inst)?;
    let Some(s) = solve_split(&g_n, &y, true)? else {
        return Ok(Outcome::Infeasible);
    };
    if s.t > 1.0 + tol {
        return Ok(Outcome::Infeasible);
    }
    Ok(Outcome::Feasible(phi_from_split(&s, inst)))
}

/// Offline direct multipliers with the same tie-break as [`precompute_phi0`].
pub fn precompute_gamma(inst: &InclusionInstance, tol: f64) -> Result<Outcome<GammaCertificate>> {
    match precompute_phi0(inst, tol)? {
        Outcome::Feasible(c) => Ok(Outcome::Feasible(c.induced_gamma())),
        Outcome::Infeasible => Ok(Outcome::Infeasible),
    }
}

/// Symbolic term: center and scaling may reference program variables.
#[derive(Clone, Debug)]
pub struct SymTerm {
    pub center: ExprVec,
    pub generators: DMatrix<f64>,
    pub delta: Option<ExprVec>,
}

impl SymTerm {
    pub fn numeric(center: &DVector<f64>, generators: DMatrix<f64>) -> Self {
        Self {
            center: center.iter().map(|v| LinExpr::constant(*v)).collect(),
            generators,
            delta: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SymInstance {
    pub lhs: Vec<SymTerm>,
    pub rhs: SymTerm,
}

impl SymInstance {
    pub fn from_numeric(inst: &InclusionInstance) -> Self {
        let conv = |t: &Term| SymTerm {
            center: t.center.iter().map(|v| LinExpr::constant(*v)).collect(),
            generators: t.generators.clone(),
            delta: t
                .delta
                .as_ref()
                .map(|d| d.iter().map(|v| LinExpr::constant(*v)).collect()),
        };
        Self {
            lhs: inst.lhs.iter().map(conv).collect(),
            rhs: conv(&inst.rhs),
        }
    }
}

/// Handle to the rows and variables added by [`emit_phi_constraints`].
#[derive(Clone, Debug)]
pub struct PhiHandle {
    pub block: VarBlock,
    pub dbar: usize,
    pub num_rhs: usize,
    pub rows: RowSpan,
}

impl PhiHandle {
    pub fn certificate(&self, x: &[f64], layout: Vec<usize>) -> PhiCertificate {
        let phi = DMatrix::from_row_slice(2 * self.dbar, self.num_rhs, &x[self.block.range()]);
        let mut cert = PhiCertificate {
            phi,
            dbar: self.dbar,
            block_layout: layout,
            objective: 0.0,
        };
        cert.objective = cert.budget().iter().fold(0.0, |a: f64, b| a.max(*b));
        cert
    }
}

/// Appends a fresh nonnegative `Phi` block with
/// `G_n Phi' V' = [c_diff | G_1 Delta_1 | ...]` and `Phi' 1 <= delta_n`.
pub fn emit_phi_constraints(
    program: &mut ConvexProgram,
    inst: &SymInstance,
    name: &str,
    family: Family,
) -> Result<PhiHandle> {
    let n = inst.rhs.center.len();
    let g_n = &inst.rhs.generators;
    check_dim("emit_phi rhs generators", n, g_n.nrows())?;
    let dn = g_n.ncols();
    if let Some(d) = &inst.rhs.delta {
        check_dim("emit_phi rhs scaling", dn, d.len())?;
    }
    // target columns as expressions
    let mut cols: Vec<ExprVec> = Vec::new();
    let mut cdiff: ExprVec = inst.rhs.center.iter().map(LinExpr::negated).collect();
    for t in &inst.lhs {
        check_dim("emit_phi lhs center", n, t.center.len())?;
        check_dim("emit_phi lhs generators", n, t.generators.nrows())?;
        for (acc, c) in cdiff.iter_mut().zip(&t.center) {
            acc.add_scaled(c, 1.0);
        }
    }
    cols.push(cdiff);
    for t in &inst.lhs {
        if let Some(d) = &t.delta {
            check_dim("emit_phi lhs scaling", t.generators.ncols(), d.len())?;
        }
        for j in 0..t.generators.ncols() {
            let col: ExprVec = (0..n)
                .map(|r| match &t.delta {
                    Some(d) => d[j].scaled(t.generators[(r, j)]),
                    None => LinExpr::constant(t.generators[(r, j)]),
                })
                .collect();
            cols.push(col);
        }
    }
    let dbar = cols.len();
    let start = program.span_start();
    let block = program.add_block(name, VarKind::Auxiliary, 2 * dbar * dn);
    let at = |row: usize, k: usize| block.index(row * dn + k);
    for (j, col) in cols.iter().enumerate() {
        for r in 0..n {
            let mut e = col[r].negated();
            for k in 0..dn {
                let g = g_n[(r, k)];
                if g != 0.0 {
                    e.add_term(at(j, k), g);
                    e.add_term(at(dbar + j, k), -g);
                }
            }
            program.add_eq(e, family);
        }
    }
    for v in block.range() {
        program.add_ge_zero(v, family);
    }
    for k in 0..dn {
        let mut e = match &inst.rhs.delta {
            Some(d) => d[k].negated(),
            None => LinExpr::constant(-1.0),
        };
        for row in 0..2 * dbar {
            e.add_term(at(row, k), 1.0);
        }
        program.add_le(e, family);
    }
    Ok(PhiHandle {
        block,
        dbar,
        num_rhs: dn,
        rows: program.span_since(start),
    })
}

/// Emits `Phi0' (1_2 kron [1; delta_1; ...]) <= delta_n` without new variables.
pub fn phi0_runtime_condition(
    program: &mut ConvexProgram,
    phi0: &PhiCertificate,
    deltas: &[ExprVec],
    delta_n: &[LinExpr],
    family: Family,
) -> Result<RowSpan> {
    check_dim("phi0 layout blocks", phi0.block_layout.len() - 1, deltas.len())?;
    check_dim("phi0 rhs scaling", phi0.num_rhs(), delta_n.len())?;
    let mut weights: Vec<LinExpr> = vec![LinExpr::constant(1.0)];
    for (len, d) in phi0.block_layout[1..].iter().zip(deltas) {
        check_dim("phi0 layout block", *len, d.len())?;
        weights.extend(d.iter().cloned());
    }
    let start = program.span_start();
    for k in 0..phi0.num_rhs() {
        let mut e = delta_n[k].negated();
        for (r, w) in weights.iter().enumerate() {
            let c = phi0.phi[(r, k)] + phi0.phi[(phi0.dbar + r, k)];
            if c != 0.0 {
                e.add_scaled(w, c);
            }
        }
        program.add_le(e, family);
    }
    Ok(program.span_since(start))
}

/// Exact inclusion test: vertices of the left sum against the right set.
/// Limited to the plane or to at most `max_corner_generators` generators.
pub fn containment_oracle(inst: &InclusionInstance, tol: f64) -> Result<bool> {
    const MAX_CORNER_GENERATORS: usize = 14;
    inst.validate()?;
    let lhs = inst.lhs_sum()?;
    let rhs = inst.rhs_zonotope()?;
    let points: Vec<DVector<f64>> = if lhs.dim() == 2 {
        lhs.vertices_2d()?
            .into_iter()
            .map(|v| DVector::from_vec(v.to_vec()))
            .collect()
    } else {
        lhs.corner_points(MAX_CORNER_GENERATORS)
            .map_err(|_| Error::Unavailable("oracle unavailable: instance too large".into()))?
    };
    for v in &points {
        if !rhs.contains_point(v, tol)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Convenience: `solve_phi_unscaled` at the default tolerance reports feasibility.
pub fn phi_feasible(inst: &InclusionInstance) -> Result<bool> {
    Ok(solve_phi_unscaled(inst, DEFAULT_TOL)?.is_feasible())
}
