//! Solver-independent description of linear and convex quadratic programs.
//!
//! Variables live in named blocks; every constraint is a row holding an
//! affine expression that is either `= 0` or `<= 0`. The objective is
//! `x' P x + q' x + r` with `P` given as (row, col, value) triplets.

use std::fmt::Write as _;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};

/// Sparse affine expression `sum(coef * x[var]) + constant`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LinExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl LinExpr {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: c,
        }
    }

    pub fn var(index: usize) -> Self {
        Self {
            terms: vec![(index, 1.0)],
            constant: 0.0,
        }
    }

    pub fn term(index: usize, coef: f64) -> Self {
        Self {
            terms: vec![(index, coef)],
            constant: 0.0,
        }
    }

    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|&(_, c)| c == 0.0)
    }

    pub fn add_term(&mut self, index: usize, coef: f64) -> &mut Self {
        if coef != 0.0 {
            self.terms.push((index, coef));
        }
        self
    }

    pub fn add_constant(&mut self, c: f64) -> &mut Self {
        self.constant += c;
        self
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &LinExpr, scale: f64) -> &mut Self {
        if scale == 0.0 {
            return self;
        }
        self.terms
            .extend(other.terms.iter().map(|&(i, c)| (i, c * scale)));
        self.constant += scale * other.constant;
        self
    }

    pub fn scaled(&self, scale: f64) -> LinExpr {
        let mut out = LinExpr::zero();
        out.add_scaled(self, scale);
        out
    }

    pub fn negated(&self) -> LinExpr {
        self.scaled(-1.0)
    }

    pub fn plus(mut self, other: &LinExpr) -> LinExpr {
        self.add_scaled(other, 1.0);
        self
    }

    pub fn minus(mut self, other: &LinExpr) -> LinExpr {
        self.add_scaled(other, -1.0);
        self
    }

    /// Merge duplicate variable indices and drop zero coefficients.
    pub fn compact(&mut self) {
        self.terms.sort_by_key(|&(i, _)| i);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(self.terms.len());
        for &(i, c) in &self.terms {
            match merged.last_mut() {
                Some((j, acc)) if *j == i => *acc += c,
                _ => merged.push((i, c)),
            }
        }
        merged.retain(|&(_, c)| c != 0.0);
        self.terms = merged;
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .fold(self.constant, |acc, &(i, c)| acc + c * x[i])
    }
}

/// Vector of expressions, one per coordinate.
pub type ExprVec = Vec<LinExpr>;

pub fn const_vec(v: &DVector<f64>) -> ExprVec {
    v.iter().map(|&x| LinExpr::constant(x)).collect()
}

/// `m * e` for a numeric matrix and a symbolic vector.
pub fn mat_expr(m: &DMatrix<f64>, e: &[LinExpr]) -> ExprVec {
    assert_eq!(m.ncols(), e.len(), "mat_expr shape");
    (0..m.nrows())
        .map(|r| {
            let mut acc = LinExpr::zero();
            for (c, ec) in e.iter().enumerate() {
                acc.add_scaled(ec, m[(r, c)]);
            }
            acc
        })
        .collect()
}

pub fn add_exprs(a: &[LinExpr], b: &[LinExpr]) -> ExprVec {
    assert_eq!(a.len(), b.len(), "add_exprs shape");
    a.iter().zip(b).map(|(x, y)| x.clone().plus(y)).collect()
}

pub fn sub_exprs(a: &[LinExpr], b: &[LinExpr]) -> ExprVec {
    assert_eq!(a.len(), b.len(), "sub_exprs shape");
    a.iter().zip(b).map(|(x, y)| x.clone().minus(y)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum VarKind {
    Decision,
    Scaling,
    Auxiliary,
}

/// Row grouping used for diagnostics and complexity accounting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum Family {
    Initial,
    State,
    Input,
    Terminal,
    Reach,
    Center,
    Scaling,
    Other,
}

#[derive(Clone, Debug)]
pub struct VarBlock {
    pub name: String,
    pub kind: VarKind,
    pub offset: usize,
    pub len: usize,
}

impl VarBlock {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len
    }

    pub fn index(&self, i: usize) -> usize {
        assert!(i < self.len, "index {i} out of block {}", self.name);
        self.offset + i
    }

    pub fn exprs(&self) -> ExprVec {
        self.range().map(LinExpr::var).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Row {
    pub expr: LinExpr,
    pub family: Family,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

/// Handle to a contiguous range of rows added in one call.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowSpan {
    pub equalities: Range<usize>,
    pub inequalities: Range<usize>,
}

#[derive(Clone, Debug)]
pub struct ConvexProgram {
    blocks: Vec<VarBlock>,
    num_vars: usize,
    pub equalities: Vec<Row>,
    pub inequalities: Vec<Row>,
    /// Quadratic part as (i, j, v): contributes `v * x_i * x_j`.
    pub quadratic: Vec<(usize, usize, f64)>,
    pub linear: LinExpr,
    pub sense: Sense,
}

impl Default for ConvexProgram {
    fn default() -> Self {
        Self::new()
    }
}

impl ConvexProgram {
    pub fn new() -> Self {
        Self {
            blocks: Vec::new(),
            num_vars: 0,
            equalities: Vec::new(),
            inequalities: Vec::new(),
            quadratic: Vec::new(),
            linear: LinExpr::zero(),
            sense: Sense::Minimize,
        }
    }

    pub fn add_block(&mut self, name: impl Into<String>, kind: VarKind, len: usize) -> VarBlock {
        let block = VarBlock {
            name: name.into(),
            kind,
            offset: self.num_vars,
            len,
        };
        self.num_vars += len;
        self.blocks.push(block.clone());
        block
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    pub fn blocks(&self) -> &[VarBlock] {
        &self.blocks
    }

    pub fn block(&self, name: &str) -> Option<&VarBlock> {
        self.blocks.iter().find(|b| b.name == name)
    }

    pub fn vars_of_kind(&self, kind: VarKind) -> usize {
        self.blocks
            .iter()
            .filter(|b| b.kind == kind)
            .map(|b| b.len)
            .sum()
    }

    pub fn add_eq(&mut self, mut expr: LinExpr, family: Family) {
        expr.compact();
        self.equalities.push(Row { expr, family });
    }

    pub fn add_le(&mut self, mut expr: LinExpr, family: Family) {
        expr.compact();
        self.inequalities.push(Row { expr, family });
    }

    /// `lhs <= rhs`
    pub fn add_le2(&mut self, lhs: &LinExpr, rhs: &LinExpr, family: Family) {
        self.add_le(lhs.clone().minus(rhs), family);
    }

    pub fn add_ge_zero(&mut self, index: usize, family: Family) {
        self.add_le(LinExpr::term(index, -1.0), family);
    }

    pub fn span_start(&self) -> (usize, usize) {
        (self.equalities.len(), self.inequalities.len())
    }

    pub fn span_since(&self, start: (usize, usize)) -> RowSpan {
        RowSpan {
            equalities: start.0..self.equalities.len(),
            inequalities: start.1..self.inequalities.len(),
        }
    }

    pub fn count_rows(&self, family: Family) -> (usize, usize) {
        (
            self.equalities.iter().filter(|r| r.family == family).count(),
            self.inequalities
                .iter()
                .filter(|r| r.family == family)
                .count(),
        )
    }

    pub fn set_sense(&mut self, sense: Sense) {
        self.sense = sense;
    }

    pub fn add_linear_objective(&mut self, expr: &LinExpr) {
        self.linear.add_scaled(expr, 1.0);
    }

    /// Adds `e' W e` where `e` is a vector of affine expressions.
    pub fn add_quadratic_form(&mut self, e: &[LinExpr], weight: &DMatrix<f64>) {
        assert_eq!(weight.nrows(), e.len());
        assert_eq!(weight.ncols(), e.len());
        for a in 0..e.len() {
            for b in 0..e.len() {
                let w = weight[(a, b)];
                if w == 0.0 {
                    continue;
                }
                let (ea, eb) = (&e[a], &e[b]);
                for &(i, ci) in &ea.terms {
                    for &(j, cj) in &eb.terms {
                        self.quadratic.push((i, j, w * ci * cj));
                    }
                }
                // cross terms with constants
                for &(i, ci) in &ea.terms {
                    self.linear.add_term(i, w * ci * eb.constant);
                }
                for &(j, cj) in &eb.terms {
                    self.linear.add_term(j, w * cj * ea.constant);
                }
                self.linear.add_constant(w * ea.constant * eb.constant);
            }
        }
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        let quad: f64 = self
            .quadratic
            .iter()
            .map(|&(i, j, v)| v * x[i] * x[j])
            .sum();
        quad + self.linear.eval(x)
    }

    /// Largest equality residual and inequality violation at `x`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let eq = self
            .equalities
            .iter()
            .map(|r| r.expr.eval(x).abs())
            .fold(0.0, f64::max);
        let ineq = self
            .inequalities
            .iter()
            .map(|r| r.expr.eval(x).max(0.0))
            .fold(0.0, f64::max);
        eq.max(ineq)
    }

    pub fn block_values(&self, x: &[f64], block: &VarBlock) -> DVector<f64> {
        DVector::from_iterator(block.len, block.range().map(|i| x[i]))
    }

    /// Human-readable LP-style dump for debugging.
    pub fn dump(&self) -> String {
        let mut names = vec![String::new(); self.num_vars];
        for b in &self.blocks {
            for k in 0..b.len {
                names[b.offset + k] = format!("{}[{}]", b.name, k);
            }
        }
        let fmt_expr = |e: &LinExpr| {
            let mut s = String::new();
            for &(i, c) in &e.terms {
                let _ = write!(s, " {:+} {}", c, names[i]);
            }
            if e.constant != 0.0 || s.is_empty() {
                let _ = write!(s, " {:+}", e.constant);
            }
            s
        };
        let mut out = String::new();
        let sense = match self.sense {
            Sense::Minimize => "minimize",
            Sense::Maximize => "maximize",
        };
        let _ = writeln!(out, "{sense}");
        let _ = writeln!(out, "  linear:{}", fmt_expr(&self.linear));
        for &(i, j, v) in &self.quadratic {
            let _ = writeln!(out, "  quad: {:+} {}*{}", v, names[i], names[j]);
        }
        let _ = writeln!(out, "subject to");
        for r in &self.equalities {
            let _ = writeln!(out, "  [{:?}]{} = 0", r.family, fmt_expr(&r.expr));
        }
        for r in &self.inequalities {
            let _ = writeln!(out, "  [{:?}]{} <= 0", r.family, fmt_expr(&r.expr));
        }
        let _ = writeln!(out, "blocks");
        for b in &self.blocks {
            let _ = writeln!(out, "  {} {:?} len={}", b.name, b.kind, b.len);
        }
        out
    }
}
