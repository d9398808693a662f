//! Domain-of-attraction estimation by quadtree gridding.
//!
//! The set of feasible initial states is the projection of a polyhedron, so
//! it is convex: a cell whose corners and center are feasible lies inside
//! it. Cells with no feasible sample are dropped only when the program with
//! `x0` free in the cell is infeasible, which makes the outer bound exact.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ztube::sets::IntervalBox;
use ztube::solver::ClarabelAdapter;
use ztube::tube::{solve_tube, InitialCondition, LtiSystem, TubeConfig, TubeStatus};
use ztube::{Error, Result};

use crate::sim::csv_err;

/// Feasibility queries used by the gridding.
pub trait DoaOracle: Sync {
    fn point_feasible(&self, x: &DVector<f64>) -> Result<bool>;
    /// False only if no point of `cell` is feasible.
    fn cell_may_intersect(&self, cell: &IntervalBox) -> Result<bool>;
}

/// Tube program feasibility with a memo keyed on exact coordinates.
pub struct TubeOracle {
    sys: LtiSystem,
    cfg: TubeConfig,
    /// Same program with the tube objective, used when a solve stalls.
    fallback: TubeConfig,
    adapter: ClarabelAdapter,
    cache: Mutex<HashMap<Vec<u64>, bool>>,
    solves: AtomicUsize,
    solver_errors: AtomicUsize,
}

impl TubeOracle {
    pub fn new(sys: &LtiSystem, cfg: &TubeConfig) -> Self {
        let mut fallback = cfg.clone();
        fallback.feasibility_only = false;
        let mut cfg = cfg.clone();
        cfg.feasibility_only = true;
        Self {
            sys: sys.clone(),
            cfg,
            fallback,
            adapter: ClarabelAdapter::default(),
            cache: Mutex::new(HashMap::new()),
            solves: AtomicUsize::new(0),
            solver_errors: AtomicUsize::new(0),
        }
    }

    pub fn solves(&self) -> usize {
        self.solves.load(Ordering::Relaxed)
    }

    pub fn solver_errors(&self) -> usize {
        self.solver_errors.load(Ordering::Relaxed)
    }

    fn status(&self, init: &InitialCondition) -> Result<TubeStatus> {
        self.solves.fetch_add(1, Ordering::Relaxed);
        let mut st = solve_tube(&self.sys, &self.cfg, init, &self.adapter)?.status;
        if st == TubeStatus::SolverError {
            // the interior-point method sometimes stalls on a zero objective
            st = solve_tube(&self.sys, &self.fallback, init, &self.adapter)?.status;
        }
        if st == TubeStatus::SolverError {
            self.solver_errors.fetch_add(1, Ordering::Relaxed);
        }
        Ok(st)
    }
}

impl DoaOracle for TubeOracle {
    fn point_feasible(&self, x: &DVector<f64>) -> Result<bool> {
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        if let Some(v) = self.cache.lock().expect("cache lock").get(&key) {
            return Ok(*v);
        }
        let ok = self.status(&InitialCondition::Point(x.clone()))? == TubeStatus::Optimal;
        self.cache.lock().expect("cache lock").insert(key, ok);
        Ok(ok)
    }

    fn cell_may_intersect(&self, cell: &IntervalBox) -> Result<bool> {
        // a solver failure keeps the cell
        Ok(self.status(&InitialCondition::Box(cell.clone()))? != TubeStatus::Infeasible)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellClass {
    Inner,
    Excluded,
    Boundary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub level: usize,
    pub cell: IntervalBox,
    pub class: CellClass,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoaEstimate {
    pub inner_cells: Vec<IntervalBox>,
    /// Undecided cells; the outer approximation is these plus the inner ones.
    pub boundary_cells: Vec<IntervalBox>,
    pub inner_volume: f64,
    pub outer_volume: f64,
    pub levels: usize,
    pub gap: f64,
    /// False when the depth cap stopped the refinement first.
    pub converged: bool,
    pub records: Vec<CellRecord>,
}

impl DoaEstimate {
    /// Rows `(level, lower.., upper.., classification)`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["level", "cell_bounds", "classification"]).map_err(csv_err)?;
        for r in &self.records {
            let bounds: Vec<String> = r
                .cell
                .lower()
                .iter()
                .zip(r.cell.upper().iter())
                .map(|(l, u)| format!("{l}:{u}"))
                .collect();
            let class = match r.class {
                CellClass::Inner => "inner",
                CellClass::Excluded => "excluded",
                CellClass::Boundary => "boundary",
            };
            w.write_record([r.level.to_string(), bounds.join(" "), class.to_string()]).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

/// Cell on the lattice of `region` at resolution `2^res` per axis.
#[derive(Clone, Debug)]
struct LatticeCell {
    lo: Vec<u64>,
    size: u64,
}

struct Lattice<'a> {
    region: &'a IntervalBox,
    res: u32,
}

impl Lattice<'_> {
    fn point(&self, idx: &[u64]) -> DVector<f64> {
        let scale = (1u64 << self.res) as f64;
        DVector::from_fn(idx.len(), |i, _| {
            let (l, u) = (self.region.lower()[i], self.region.upper()[i]);
            l + (u - l) * (idx[i] as f64 / scale)
        })
    }

    fn bounds(&self, c: &LatticeCell) -> IntervalBox {
        let hi: Vec<u64> = c.lo.iter().map(|v| v + c.size).collect();
        IntervalBox::new(self.point(&c.lo), self.point(&hi)).expect("ordered lattice bounds")
    }

    /// Corners and center.
    fn samples(&self, c: &LatticeCell) -> Vec<Vec<u64>> {
        let n = c.lo.len();
        let mut out: Vec<Vec<u64>> = (0..1u64 << n)
            .map(|mask| (0..n).map(|i| c.lo[i] + if mask >> i & 1 == 1 { c.size } else { 0 }).collect())
            .collect();
        out.push(c.lo.iter().map(|v| v + c.size / 2).collect());
        out
    }

    fn split(&self, c: &LatticeCell) -> Vec<LatticeCell> {
        let n = c.lo.len();
        let h = c.size / 2;
        (0..1u64 << n)
            .map(|mask| LatticeCell {
                lo: (0..n).map(|i| c.lo[i] + if mask >> i & 1 == 1 { h } else { 0 }).collect(),
                size: h,
            })
            .collect()
    }
}

/// Refines `region` level by level until `(outer - inner) / outer` drops to
/// `gap_threshold` or `depth_cap` levels have been split.
pub fn estimate_doa(
    oracle: &dyn DoaOracle,
    region: &IntervalBox,
    gap_threshold: f64,
    depth_cap: usize,
) -> Result<DoaEstimate> {
    if !(gap_threshold >= 0.0) {
        return Err(Error::InvalidArgument("gap threshold must be nonnegative".into()));
    }
    if depth_cap > 40 {
        return Err(Error::InvalidArgument("depth cap above 40 exceeds the lattice resolution".into()));
    }
    let n = region.dim();
    if n > 6 {
        log_cost_warning(n);
    }
    let lattice = Lattice {
        region,
        res: depth_cap as u32 + 1,
    };
    let mut frontier = vec![LatticeCell {
        lo: vec![0; n],
        size: 1u64 << lattice.res,
    }];
    let mut est = DoaEstimate {
        inner_cells: Vec::new(),
        boundary_cells: Vec::new(),
        inner_volume: 0.0,
        outer_volume: 0.0,
        levels: 0,
        gap: 1.0,
        converged: false,
        records: Vec::new(),
    };
    let mut level = 0;
    loop {
        let classes: Vec<(CellClass, IntervalBox)> = frontier
            .par_iter()
            .map(|c| -> Result<(CellClass, IntervalBox)> {
                let bx = lattice.bounds(c);
                let mut all = true;
                for idx in lattice.samples(c) {
                    if !oracle.point_feasible(&lattice.point(&idx))? {
                        all = false;
                        break;
                    }
                }
                let class = if all {
                    CellClass::Inner
                } else if !oracle.cell_may_intersect(&bx)? {
                    CellClass::Excluded
                } else {
                    CellClass::Boundary
                };
                Ok((class, bx))
            })
            .collect::<Result<_>>()?;
        let mut undecided = Vec::new();
        let mut undecided_volume = 0.0;
        for ((class, bx), cell) in classes.into_iter().zip(frontier) {
            match class {
                CellClass::Inner => {
                    est.inner_volume += bx.volume();
                    est.inner_cells.push(bx.clone());
                }
                CellClass::Boundary => {
                    undecided_volume += bx.volume();
                    undecided.push((cell, bx.clone()));
                }
                CellClass::Excluded => {}
            }
            if class != CellClass::Boundary {
                est.records.push(CellRecord { level, cell: bx, class });
            }
        }
        let outer = est.inner_volume + undecided_volume;
        est.gap = if outer > 0.0 { undecided_volume / outer } else { 0.0 };
        est.levels = level;
        if est.gap <= gap_threshold || level == depth_cap {
            est.converged = est.gap <= gap_threshold;
            est.outer_volume = outer;
            for (_, bx) in undecided {
                est.records.push(CellRecord {
                    level,
                    cell: bx.clone(),
                    class: CellClass::Boundary,
                });
                est.boundary_cells.push(bx);
            }
            return Ok(est);
        }
        frontier = undecided.iter().flat_map(|(c, _)| lattice.split(c)).collect();
        level += 1;
    }
}

fn log_cost_warning(n: usize) {
    eprintln!("warning: gridding in {n} dimensions visits 2^{n} corners per cell");
}

/// Builds a [`TubeOracle`] for the scenario's system and tube and grids
/// `region`.
pub fn estimate_doa_for(
    sys: &LtiSystem,
    cfg: &TubeConfig,
    region: &IntervalBox,
    gap_threshold: f64,
    depth_cap: usize,
) -> Result<(DoaEstimate, TubeOracle)> {
    let oracle = TubeOracle::new(sys, cfg);
    let est = estimate_doa(&oracle, region, gap_threshold, depth_cap)?;
    Ok((est, oracle))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Feasible set is the disk of radius `r`.
    struct Disk(f64);

    impl DoaOracle for Disk {
        fn point_feasible(&self, x: &DVector<f64>) -> Result<bool> {
            Ok(x.norm() <= self.0)
        }
        fn cell_may_intersect(&self, cell: &IntervalBox) -> Result<bool> {
            let c = DVector::from_fn(2, |i, _| 0.0f64.clamp(cell.lower()[i], cell.upper()[i]));
            Ok(c.norm() <= self.0)
        }
    }

    #[test]
    fn whole_region_feasible() {
        let region = IntervalBox::symmetric(2, 1.0);
        let est = estimate_doa(&Disk(10.0), &region, 0.01, 6).unwrap();
        assert_eq!(est.inner_volume, 4.0);
        assert_eq!(est.outer_volume, 4.0);
        assert_eq!(est.levels, 0);
        assert!(est.converged);
    }

    #[test]
    fn disk_area_is_bracketed() {
        let region = IntervalBox::symmetric(2, 2.0);
        let est = estimate_doa(&Disk(1.0), &region, 0.02, 10).unwrap();
        let area = std::f64::consts::PI;
        assert!(est.inner_volume <= area && area <= est.outer_volume);
        assert!(est.converged, "gap {}", est.gap);
        assert!(est.gap <= 0.02);
        let est_capped = estimate_doa(&Disk(1.0), &region, 0.0, 3).unwrap();
        assert!(!est_capped.converged);
        assert_eq!(est_capped.levels, 3);
    }

    #[test]
    fn lattice_points_are_exact_and_shared() {
        let region = IntervalBox::from_slices(&[-10.0, -10.0], &[10.0, 2.0]).unwrap();
        let lat = Lattice { region: &region, res: 4 };
        let root = LatticeCell { lo: vec![0, 0], size: 16 };
        let kids = lat.split(&root);
        assert_eq!(kids.len(), 4);
        assert_eq!(lat.point(&[16, 16]).as_slice(), &[10.0, 2.0]);
        assert_eq!(lat.samples(&kids[0]).last().unwrap(), &vec![4, 4]);
    }
}
