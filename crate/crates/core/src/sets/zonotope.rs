use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::program::{ConvexProgram, Family, LinExpr, Sense, VarKind};
use crate::solver::{ClarabelAdapter, SolverAdapter, Status};

/// Generator-form zonotope `{c + G xi : |xi|_inf <= 1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Zonotope {
    center: DVector<f64>,
    generators: DMatrix<f64>,
}

/// Nonnegative per-generator scaling factors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingVector(DVector<f64>);

impl ScalingVector {
    pub fn new(delta: DVector<f64>) -> Result<Self> {
        if let Some(v) = delta.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "scaling entries must be finite and nonnegative, got {v}"
            )));
        }
        Ok(Self(delta))
    }

    pub fn ones(len: usize) -> Self {
        Self(DVector::from_element(len, 1.0))
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl Zonotope {
    pub fn new(center: DVector<f64>, generators: DMatrix<f64>) -> Result<Self> {
        check_dim("zonotope generator rows", center.len(), generators.nrows())?;
        if center.iter().chain(generators.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("zonotope entries must be finite".into()));
        }
        Ok(Self { center, generators })
    }

    pub fn point(center: DVector<f64>) -> Self {
        let n = center.len();
        Self {
            center,
            generators: DMatrix::zeros(n, 0),
        }
    }

    /// `<0, r I_n>`
    pub fn centered_box(n: usize, radius: f64) -> Self {
        Self {
            center: DVector::zeros(n),
            generators: DMatrix::identity(n, n) * radius,
        }
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn num_generators(&self) -> usize {
        self.generators.ncols()
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    pub fn generators(&self) -> &DMatrix<f64> {
        &self.generators
    }

    pub fn minkowski_sum(&self, other: &Zonotope) -> Result<Zonotope> {
        check_dim("minkowski_sum", self.dim(), other.dim())?;
        let n = self.dim();
        let mut g = DMatrix::zeros(n, self.num_generators() + other.num_generators());
        g.view_mut((0, 0), self.generators.shape())
            .copy_from(&self.generators);
        g.view_mut((0, self.num_generators()), other.generators.shape())
            .copy_from(&other.generators);
        Ok(Zonotope {
            center: &self.center + &other.center,
            generators: g,
        })
    }

    pub fn affine_map(&self, m: &DMatrix<f64>) -> Result<Zonotope> {
        check_dim("affine_map", m.ncols(), self.dim())?;
        Ok(Zonotope {
            center: m * &self.center,
            generators: m * &self.generators,
        })
    }

    pub fn translate(&self, t: &DVector<f64>) -> Result<Zonotope> {
        check_dim("translate", self.dim(), t.len())?;
        Ok(Zonotope {
            center: &self.center + t,
            generators: self.generators.clone(),
        })
    }

    /// Uniform scaling about the origin: `alpha * Z`.
    pub fn scale(&self, alpha: f64) -> Zonotope {
        Zonotope {
            center: &self.center * alpha,
            generators: &self.generators * alpha,
        }
    }

    pub fn scale_generators(&self, d: &ScalingVector) -> Result<Zonotope> {
        check_dim("scale_generators", self.num_generators(), d.len())?;
        let mut g = self.generators.clone();
        for (j, s) in d.as_vector().iter().enumerate() {
            g.column_mut(j).scale_mut(*s);
        }
        Ok(Zonotope {
            center: self.center.clone(),
            generators: g,
        })
    }

    /// `d'c + sum_j |d'g_j|`
    pub fn support_value(&self, direction: &DVector<f64>) -> Result<f64> {
        check_dim("support_value", self.dim(), direction.len())?;
        let proj = self.generators.transpose() * direction;
        Ok(direction.dot(&self.center) + proj.iter().map(|v| v.abs()).sum::<f64>())
    }

    /// Smallest `t` with `y - c = G xi`, `|xi|_inf <= t`; `None` when `y - c`
    /// is outside the generator range.
    pub fn gauge(&self, y: &DVector<f64>) -> Result<Option<f64>> {
        check_dim("gauge", self.dim(), y.len())?;
        let diff = y - &self.center;
        let cols: Vec<usize> = (0..self.num_generators())
            .filter(|&j| self.generators.column(j).norm() > 0.0)
            .collect();
        if cols.is_empty() {
            return Ok(if diff.norm() <= 1e-12 { Some(0.0) } else { None });
        }
        let mut p = ConvexProgram::new();
        let xi = p.add_block("xi", VarKind::Auxiliary, cols.len());
        let t = p.add_block("t", VarKind::Auxiliary, 1);
        for r in 0..self.dim() {
            let mut e = LinExpr::constant(-diff[r]);
            for (k, &j) in cols.iter().enumerate() {
                e.add_term(xi.index(k), self.generators[(r, j)]);
            }
            p.add_eq(e, Family::Other);
        }
        for k in 0..cols.len() {
            let mut up = LinExpr::var(xi.index(k));
            up.add_term(t.index(0), -1.0);
            p.add_le(up, Family::Other);
            let mut lo = LinExpr::term(xi.index(k), -1.0);
            lo.add_term(t.index(0), -1.0);
            p.add_le(lo, Family::Other);
        }
        p.add_linear_objective(&LinExpr::var(t.index(0)));
        p.set_sense(Sense::Minimize);
        let sol = ClarabelAdapter::default().solve(&p);
        match sol.status {
            Status::Optimal => Ok(Some(sol.x[t.index(0)].max(0.0))),
            Status::Infeasible => Ok(None),
            _ => Err(Error::Solver(format!("gauge LP: {}", sol.message))),
        }
    }

    /// Infinity-norm distance from `y` to the set.
    pub fn distance(&self, y: &DVector<f64>) -> Result<f64> {
        check_dim("distance", self.dim(), y.len())?;
        let diff = y - &self.center;
        let d = self.num_generators();
        let mut p = ConvexProgram::new();
        let xi = p.add_block("xi", VarKind::Auxiliary, d);
        let r = p.add_block("r", VarKind::Auxiliary, 1);
        for i in 0..self.dim() {
            let mut e = LinExpr::constant(-diff[i]);
            for j in 0..d {
                e.add_term(xi.index(j), self.generators[(i, j)]);
            }
            p.add_le(e.clone().minus(&LinExpr::var(r.index(0))), Family::Other);
            p.add_le(e.negated().minus(&LinExpr::var(r.index(0))), Family::Other);
        }
        for j in 0..d {
            p.add_le(LinExpr::var(xi.index(j)).plus(&LinExpr::constant(-1.0)), Family::Other);
            p.add_le(LinExpr::term(xi.index(j), -1.0).plus(&LinExpr::constant(-1.0)), Family::Other);
        }
        p.add_linear_objective(&LinExpr::var(r.index(0)));
        p.set_sense(Sense::Minimize);
        let sol = ClarabelAdapter::default().solve(&p);
        match sol.status {
            Status::Optimal => Ok(sol.x[r.index(0)].max(0.0)),
            _ => Err(Error::Solver(format!("distance LP: {}", sol.message))),
        }
    }

    pub fn contains_point(&self, y: &DVector<f64>, tol: f64) -> Result<bool> {
        Ok(matches!(self.gauge(y)?, Some(t) if t <= 1.0 + tol))
    }

    /// All images `c + G s` for sign vectors `s`; the vertex set is a subset.
    pub fn corner_points(&self, max_generators: usize) -> Result<Vec<DVector<f64>>> {
        let cols: Vec<usize> = (0..self.num_generators())
            .filter(|&j| self.generators.column(j).norm() > 0.0)
            .collect();
        if cols.len() > max_generators {
            return Err(Error::Unavailable(format!(
                "corner enumeration over {} generators exceeds limit {max_generators}",
                cols.len()
            )));
        }
        let mut out = Vec::with_capacity(1 << cols.len());
        for mask in 0u64..(1u64 << cols.len()) {
            let mut v = self.center.clone();
            for (k, &j) in cols.iter().enumerate() {
                let s = if mask & (1 << k) != 0 { 1.0 } else { -1.0 };
                v += self.generators.column(j) * s;
            }
            out.push(v);
        }
        Ok(out)
    }

    /// Counterclockwise vertex list of a planar zonotope.
    pub fn vertices_2d(&self) -> Result<Vec<[f64; 2]>> {
        if self.dim() != 2 {
            return Err(Error::Dimension {
                context: "vertices_2d",
                expected: 2,
                got: self.dim(),
            });
        }
        // flip into the upper half-plane, drop zero columns
        let mut gens: Vec<[f64; 2]> = Vec::new();
        for j in 0..self.num_generators() {
            let (x, y) = (self.generators[(0, j)], self.generators[(1, j)]);
            if x == 0.0 && y == 0.0 {
                continue;
            }
            if y < 0.0 || (y == 0.0 && x < 0.0) {
                gens.push([-x, -y]);
            } else {
                gens.push([x, y]);
            }
        }
        let c = [self.center[0], self.center[1]];
        if gens.is_empty() {
            return Ok(vec![c]);
        }
        gens.sort_by(|a, b| {
            a[1].atan2(a[0])
                .partial_cmp(&b[1].atan2(b[0]))
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        // merge parallel generators so no collinear vertices appear
        let mut merged: Vec<[f64; 2]> = Vec::with_capacity(gens.len());
        for g in gens {
            if let Some(last) = merged.last_mut() {
                let cross = last[0] * g[1] - last[1] * g[0];
                let scale = (last[0].hypot(last[1])) * (g[0].hypot(g[1]));
                if cross.abs() <= 1e-12 * scale {
                    last[0] += g[0];
                    last[1] += g[1];
                    continue;
                }
            }
            merged.push(g);
        }
        let sum = merged
            .iter()
            .fold([0.0, 0.0], |acc, g| [acc[0] + g[0], acc[1] + g[1]]);
        let mut v = [c[0] - sum[0], c[1] - sum[1]];
        let mut out = Vec::with_capacity(2 * merged.len());
        for g in &merged {
            out.push(v);
            v = [v[0] + 2.0 * g[0], v[1] + 2.0 * g[1]];
        }
        for g in &merged {
            out.push(v);
            v = [v[0] - 2.0 * g[0], v[1] - 2.0 * g[1]];
        }
        if merged.len() == 1 {
            out.truncate(2);
        }
        Ok(out)
    }
}

/// Shoelace area of a simple polygon.
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        acc += a[0] * b[1] - a[1] * b[0];
    }
    0.5 * acc
}

#[cfg(test)]
mod tests {
    use super::*;

    fn z(c: &[f64], g: &[f64], cols: usize) -> Zonotope {
        Zonotope::new(
            DVector::from_column_slice(c),
            DMatrix::from_column_slice(c.len(), cols, g),
        )
        .unwrap()
    }

    #[test]
    fn distance_to_box_and_to_flat_set() {
        let a = Zonotope::centered_box(2, 1.0);
        let y = DVector::from_vec(vec![3.0, 0.5]);
        assert!((a.distance(&y).unwrap() - 2.0).abs() < 1e-7);
        assert!(a.distance(&DVector::zeros(2)).unwrap() < 1e-9);
        let flat = Zonotope::new(DVector::zeros(2), DMatrix::identity(2, 2) * 1e-12).unwrap();
        assert!(flat.distance(&DVector::from_vec(vec![1e-9, 0.0])).unwrap() < 1e-8);
        assert!(!flat.contains_point(&DVector::from_vec(vec![1e-9, 0.0]), 1e-6).unwrap());
    }

    #[test]
    fn sum_of_unit_boxes_concatenates_generators() {
        let a = Zonotope::centered_box(2, 1.0);
        let s = a.minkowski_sum(&a).unwrap();
        assert_eq!(s.num_generators(), 4);
        assert_eq!(s.center(), &DVector::zeros(2));
    }

    #[test]
    fn singleton_sum_translates() {
        let a = Zonotope::new(DVector::from_vec(vec![1.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
        let b = Zonotope::point(DVector::from_vec(vec![0.0, 1.0]));
        let s = a.minkowski_sum(&b).unwrap();
        assert_eq!(s.center(), &DVector::from_vec(vec![1.0, 1.0]));
        assert_eq!(s.generators(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = Zonotope::centered_box(2, 1.0);
        let b = Zonotope::centered_box(3, 1.0);
        assert!(a.minkowski_sum(&b).is_err());
        assert!(a.affine_map(&DMatrix::identity(3, 3)).is_err());
    }

    #[test]
    fn doubling_map() {
        let a = Zonotope::centered_box(2, 1.0);
        let m = DMatrix::identity(2, 2) * 2.0;
        assert_eq!(a.affine_map(&m).unwrap(), Zonotope::centered_box(2, 2.0));
        assert_eq!(a.affine_map(&DMatrix::identity(2, 2)).unwrap(), a);
    }

    #[test]
    fn scaling_cases() {
        let a = Zonotope::centered_box(2, 1.0);
        assert_eq!(a.scale_generators(&ScalingVector::ones(2)).unwrap(), a);
        let zero = a
            .scale_generators(&ScalingVector::new(DVector::zeros(2)).unwrap())
            .unwrap();
        assert_eq!(zero.vertices_2d().unwrap(), vec![[0.0, 0.0]]);
        let seg = a
            .scale_generators(&ScalingVector::new(DVector::from_vec(vec![2.0, 0.0])).unwrap())
            .unwrap();
        assert_eq!(seg.vertices_2d().unwrap(), vec![[-2.0, 0.0], [2.0, 0.0]]);
        assert!(ScalingVector::new(DVector::from_vec(vec![-1.0])).is_err());
        assert!(a.scale_generators(&ScalingVector::ones(3)).is_err());
    }

    #[test]
    fn support_examples() {
        let a = Zonotope::centered_box(2, 1.0);
        assert_eq!(a.support_value(&DVector::from_vec(vec![1.0, 1.0])).unwrap(), 2.0);
        let b = z(&[1.0, 0.0], &[1.0, 0.0, 0.0, 1.0], 2);
        assert_eq!(b.support_value(&DVector::from_vec(vec![1.0, 0.0])).unwrap(), 2.0);
    }

    #[test]
    fn unit_square_vertices() {
        let v = Zonotope::centered_box(2, 1.0).vertices_2d().unwrap();
        assert_eq!(v, vec![[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]]);
        assert!((polygon_area(&v) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn single_generator_segment() {
        let s = z(&[0.0, 0.0], &[1.0, 1.0], 1);
        assert_eq!(s.vertices_2d().unwrap(), vec![[-1.0, -1.0], [1.0, 1.0]]);
    }

    #[test]
    fn vertices_require_plane() {
        assert!(Zonotope::centered_box(3, 1.0).vertices_2d().is_err());
    }

    #[test]
    fn gauge_of_box_points() {
        let a = Zonotope::centered_box(2, 2.0);
        let t = a.gauge(&DVector::from_vec(vec![1.0, -0.5])).unwrap().unwrap();
        assert!((t - 0.5).abs() < 1e-7);
        let seg = z(&[0.0, 0.0], &[1.0, 0.0], 1);
        assert!(seg.gauge(&DVector::from_vec(vec![0.0, 1.0])).unwrap().is_none());
    }
}
