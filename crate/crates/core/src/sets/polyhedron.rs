use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::program::{ConvexProgram, Family, LinExpr, Sense, VarKind};
use crate::solver::{ClarabelAdapter, SolverAdapter, Status};

use super::Zonotope;

pub const DEFAULT_TOL: f64 = 1e-7;

/// Half-space form `{x : F x <= theta}`. Zero rows encode the whole space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polyhedron {
    normals: DMatrix<f64>,
    offsets: DVector<f64>,
}

/// Outcome of maximizing a linear function over a polyhedron.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LpMax {
    Bounded(f64),
    Unbounded,
    Empty,
}

impl Polyhedron {
    pub fn new(normals: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self> {
        check_dim("polyhedron offsets", normals.nrows(), offsets.len())?;
        if normals.iter().chain(offsets.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("polyhedron entries must be finite".into()));
        }
        Ok(Self { normals, offsets })
    }

    pub fn whole_space(n: usize) -> Self {
        Self {
            normals: DMatrix::zeros(0, n),
            offsets: DVector::zeros(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.normals.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.normals.nrows()
    }

    pub fn normals(&self) -> &DMatrix<f64> {
        &self.normals
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.offsets
    }

    pub fn contains_point(&self, x: &DVector<f64>, tol: f64) -> Result<bool> {
        check_dim("contains_point", self.dim(), x.len())?;
        let v = &self.normals * x - &self.offsets;
        Ok(v.iter().all(|e| *e <= tol))
    }

    /// Largest value of `F x - theta` at `x`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        (&self.normals * x - &self.offsets)
            .iter()
            .fold(f64::NEG_INFINITY, |a, b| a.max(*b))
    }

    pub fn intersect(&self, other: &Polyhedron) -> Result<Polyhedron> {
        check_dim("poly_intersect", self.dim(), other.dim())?;
        let n = self.dim();
        let q = self.num_rows() + other.num_rows();
        let mut f = DMatrix::zeros(q, n);
        f.rows_mut(0, self.num_rows()).copy_from(&self.normals);
        f.rows_mut(self.num_rows(), other.num_rows())
            .copy_from(&other.normals);
        let mut t = DVector::zeros(q);
        t.rows_mut(0, self.num_rows()).copy_from(&self.offsets);
        t.rows_mut(self.num_rows(), other.num_rows())
            .copy_from(&other.offsets);
        Ok(Polyhedron {
            normals: f,
            offsets: t,
        })
    }

    /// `{z : M z in P}`
    pub fn preimage(&self, m: &DMatrix<f64>) -> Result<Polyhedron> {
        check_dim("poly_preimage", self.dim(), m.nrows())?;
        Ok(Polyhedron {
            normals: &self.normals * m,
            offsets: self.offsets.clone(),
        })
    }

    /// `P + t`
    pub fn translate(&self, t: &DVector<f64>) -> Result<Polyhedron> {
        check_dim("poly_translate", self.dim(), t.len())?;
        Ok(Polyhedron {
            normals: self.normals.clone(),
            offsets: &self.offsets + &self.normals * t,
        })
    }

    /// Maximizes `c' x` over the polyhedron, optionally ignoring some rows.
    pub fn maximize(&self, c: &DVector<f64>, skip: &[bool]) -> Result<LpMax> {
        check_dim("maximize", self.dim(), c.len())?;
        let n = self.dim();
        let mut p = ConvexProgram::new();
        let x = p.add_block("x", VarKind::Auxiliary, n);
        for i in 0..self.num_rows() {
            if skip.get(i).copied().unwrap_or(false) {
                continue;
            }
            let mut e = LinExpr::constant(-self.offsets[i]);
            for j in 0..n {
                e.add_term(x.index(j), self.normals[(i, j)]);
            }
            p.add_le(e, Family::Other);
        }
        let mut obj = LinExpr::zero();
        for j in 0..n {
            obj.add_term(x.index(j), c[j]);
        }
        p.add_linear_objective(&obj);
        p.set_sense(Sense::Maximize);
        let sol = ClarabelAdapter::default().solve(&p);
        match sol.status {
            Status::Optimal => Ok(LpMax::Bounded(sol.objective)),
            Status::Unbounded => Ok(LpMax::Unbounded),
            Status::Infeasible => Ok(LpMax::Empty),
            Status::SolverError => Err(Error::Solver(format!("polyhedron LP: {}", sol.message))),
        }
    }

    pub fn is_empty(&self) -> Result<bool> {
        Ok(self.maximize(&DVector::zeros(self.dim()), &[])? == LpMax::Empty)
    }

    /// True iff every row of `other` is implied by `self` within `tol`.
    pub fn is_subset_of(&self, other: &Polyhedron, tol: f64) -> Result<bool> {
        check_dim("poly_subset", self.dim(), other.dim())?;
        if self.is_empty()? {
            return Ok(true);
        }
        for i in 0..other.num_rows() {
            let row = other.normals.row(i).transpose();
            match self.maximize(&row, &[])? {
                LpMax::Bounded(v) if v <= other.offsets[i] + tol => {}
                LpMax::Empty => return Ok(true),
                _ => return Ok(false),
            }
        }
        Ok(true)
    }

    /// Drops rows implied by the others. Parallel duplicates are removed
    /// first without solving; each remaining removal is certified by an LP.
    pub fn remove_redundancy(&self, tol: f64) -> Result<Polyhedron> {
        let q = self.num_rows();
        let mut keep = vec![true; q];
        let norms: Vec<f64> = (0..q).map(|i| self.normals.row(i).norm()).collect();
        for i in 0..q {
            if norms[i] == 0.0 && self.offsets[i] >= 0.0 {
                keep[i] = false;
            }
        }
        for i in 0..q {
            if !keep[i] || norms[i] == 0.0 {
                continue;
            }
            for j in (i + 1)..q {
                if !keep[j] || norms[j] == 0.0 {
                    continue;
                }
                let ri = self.normals.row(i) / norms[i];
                let rj = self.normals.row(j) / norms[j];
                if (&ri - &rj).amax() <= 1e-12 {
                    let (ti, tj) = (self.offsets[i] / norms[i], self.offsets[j] / norms[j]);
                    if tj >= ti {
                        keep[j] = false;
                    } else {
                        keep[i] = false;
                        break;
                    }
                }
            }
        }
        for i in 0..q {
            if !keep[i] || norms[i] == 0.0 {
                continue;
            }
            let mut skip: Vec<bool> = keep.iter().map(|k| !k).collect();
            skip[i] = true;
            let row = self.normals.row(i).transpose();
            match self.maximize(&row, &skip)? {
                LpMax::Bounded(v) if v <= self.offsets[i] + tol * norms[i].max(1.0) => {
                    keep[i] = false;
                }
                // the other rows alone are empty: keep this row, the set is empty anyway
                _ => {}
            }
        }
        let idx: Vec<usize> = (0..q).filter(|&i| keep[i]).collect();
        Ok(self.select_rows(&idx))
    }

    pub fn select_rows(&self, idx: &[usize]) -> Polyhedron {
        Polyhedron {
            normals: self.normals.select_rows(idx),
            offsets: self.offsets.select_rows(idx),
        }
    }

    /// Exact support test `F c + |F G| 1 <= theta`.
    pub fn contains_zonotope(&self, z: &Zonotope, tol: f64) -> Result<bool> {
        check_dim("zonotope_in_polyhedron", self.dim(), z.dim())?;
        let lhs = &self.normals * z.center()
            + (&self.normals * z.generators()).abs() * DVector::from_element(z.num_generators(), 1.0);
        Ok(lhs
            .iter()
            .zip(self.offsets.iter())
            .all(|(a, b)| *a <= *b + tol))
    }
}

/// Axis-aligned box `lower <= x <= upper`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalBox {
    lower: DVector<f64>,
    upper: DVector<f64>,
}

impl IntervalBox {
    pub fn new(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        check_dim("interval box", lower.len(), upper.len())?;
        if lower.iter().zip(upper.iter()).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
            return Err(Error::InvalidArgument("box requires finite lower <= upper".into()));
        }
        Ok(Self { lower, upper })
    }

    pub fn symmetric(n: usize, radius: f64) -> Self {
        Self {
            lower: DVector::from_element(n, -radius),
            upper: DVector::from_element(n, radius),
        }
    }

    pub fn from_slices(lower: &[f64], upper: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(lower), DVector::from_column_slice(upper))
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &DVector<f64> {
        &self.lower
    }

    pub fn upper(&self) -> &DVector<f64> {
        &self.upper
    }

    pub fn center(&self) -> DVector<f64> {
        (&self.upper + &self.lower) * 0.5
    }

    pub fn volume(&self) -> f64 {
        (&self.upper - &self.lower).iter().product()
    }

    pub fn contains(&self, x: &DVector<f64>) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(self.upper.iter()))
            .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    pub fn to_zonotope(&self) -> Zonotope {
        let half = (&self.upper - &self.lower) * 0.5;
        Zonotope::new(self.center(), DMatrix::from_diagonal(&half)).expect("finite box")
    }

    pub fn to_polyhedron(&self) -> Polyhedron {
        let n = self.dim();
        let eye = DMatrix::<f64>::identity(n, n);
        let mut f = DMatrix::zeros(2 * n, n);
        f.rows_mut(0, n).copy_from(&eye);
        f.rows_mut(n, n).copy_from(&(-eye));
        let mut t = DVector::zeros(2 * n);
        t.rows_mut(0, n).copy_from(&self.upper);
        t.rows_mut(n, n).copy_from(&(-&self.lower));
        Polyhedron {
            normals: f,
            offsets: t,
        }
    }

    /// All `2^n` corner points.
    pub fn corners(&self) -> Vec<DVector<f64>> {
        let n = self.dim();
        (0u64..(1u64 << n))
            .map(|mask| {
                DVector::from_iterator(
                    n,
                    (0..n).map(|i| {
                        if mask & (1 << i) != 0 {
                            self.upper[i]
                        } else {
                            self.lower[i]
                        }
                    }),
                )
            })
            .collect()
    }

    /// Splits into `2^n` equal children.
    pub fn split(&self) -> Vec<IntervalBox> {
        let n = self.dim();
        let mid = self.center();
        (0u64..(1u64 << n))
            .map(|mask| {
                let mut lo = self.lower.clone();
                let mut up = self.upper.clone();
                for i in 0..n {
                    if mask & (1 << i) != 0 {
                        lo[i] = mid[i];
                    } else {
                        up[i] = mid[i];
                    }
                }
                IntervalBox {
                    lower: lo,
                    upper: up,
                }
            })
            .collect()
    }
}
