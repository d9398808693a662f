//! Solver adapter boundary and the default interior-point backend.

use std::time::{Duration, Instant};

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};

use crate::program::{ConvexProgram, Sense};

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    SolverError,
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub status: Status,
    pub x: Vec<f64>,
    /// Objective in the program's own sense (not negated for maximization).
    pub objective: f64,
    /// Max equality residual / inequality violation, computed independently of the backend.
    pub residual: f64,
    pub solve_time: Duration,
    pub message: String,
}

impl Solution {
    pub fn is_optimal(&self) -> bool {
        self.status == Status::Optimal
    }
}

/// Anything that can take a [`ConvexProgram`] and return primal values.
///
/// Implementations must be usable from several threads at once or be cheap
/// to instantiate per task.
pub trait SolverAdapter: Send + Sync {
    fn solve(&self, program: &ConvexProgram) -> Solution;
}

#[derive(Clone, Debug)]
pub struct ClarabelAdapter {
    pub tol_feas: f64,
    pub tol_gap: f64,
    pub max_iter: u32,
    /// Primal residual accepted as feasible when the backend stops on a
    /// reduced-accuracy status.
    pub accept_residual: f64,
}

impl Default for ClarabelAdapter {
    fn default() -> Self {
        Self {
            tol_feas: 1e-9,
            tol_gap: 1e-9,
            max_iter: 400,
            accept_residual: 1e-6,
        }
    }
}

impl ClarabelAdapter {
    fn assemble(
        program: &ConvexProgram,
    ) -> (
        CscMatrix<f64>,
        Vec<f64>,
        CscMatrix<f64>,
        Vec<f64>,
        Vec<SupportedConeT<f64>>,
    ) {
        let n = program.num_vars();
        let sign = match program.sense {
            Sense::Minimize => 1.0,
            Sense::Maximize => -1.0,
        };

        // P: clarabel minimizes 1/2 x'Px, so P = 2 * sym(Q); keep upper triangle.
        let (mut pi, mut pj, mut pv) = (Vec::new(), Vec::new(), Vec::new());
        for &(i, j, v) in &program.quadratic {
            let (r, c) = if i <= j { (i, j) } else { (j, i) };
            let val = if r == c { 2.0 * v } else { v };
            pi.push(r);
            pj.push(c);
            pv.push(sign * val);
        }
        let p = CscMatrix::new_from_triplets(n, n, pi, pj, pv);

        let mut q = vec![0.0; n];
        for &(i, c) in &program.linear.terms {
            q[i] += sign * c;
        }

        let m = program.equalities.len() + program.inequalities.len();
        let (mut ai, mut aj, mut av) = (Vec::new(), Vec::new(), Vec::new());
        let mut b = Vec::with_capacity(m);
        for (r, row) in program
            .equalities
            .iter()
            .chain(program.inequalities.iter())
            .enumerate()
        {
            for &(j, c) in &row.expr.terms {
                ai.push(r);
                aj.push(j);
                av.push(c);
            }
            b.push(-row.expr.constant);
        }
        let a = CscMatrix::new_from_triplets(m, n, ai, aj, av);
        let mut cones = Vec::new();
        if !program.equalities.is_empty() {
            cones.push(SupportedConeT::ZeroConeT(program.equalities.len()));
        }
        if !program.inequalities.is_empty() {
            cones.push(SupportedConeT::NonnegativeConeT(program.inequalities.len()));
        }
        (p, q, a, b, cones)
    }
}

impl SolverAdapter for ClarabelAdapter {
    fn solve(&self, program: &ConvexProgram) -> Solution {
        let start = Instant::now();
        let n = program.num_vars();
        if n == 0 {
            // Nothing to optimize; constraints are constants.
            let x: Vec<f64> = Vec::new();
            let residual = program.residual(&x);
            let status = if residual <= self.accept_residual {
                Status::Optimal
            } else {
                Status::Infeasible
            };
            return Solution {
                status,
                objective: program.objective_value(&x),
                x,
                residual,
                solve_time: start.elapsed(),
                message: String::new(),
            };
        }

        let (p, q, a, b, cones) = Self::assemble(program);
        let settings = DefaultSettingsBuilder::default()
            .verbose(false)
            .tol_feas(self.tol_feas)
            .tol_gap_abs(self.tol_gap)
            .tol_gap_rel(self.tol_gap)
            .max_iter(self.max_iter)
            .presolve_enable(false)
            .build()
            .expect("valid clarabel settings");

        let mut solver = match DefaultSolver::new(&p, &q, &a, &b, &cones, settings) {
            Ok(s) => s,
            Err(e) => {
                return Solution {
                    status: Status::SolverError,
                    x: vec![0.0; n],
                    objective: f64::NAN,
                    residual: f64::INFINITY,
                    solve_time: start.elapsed(),
                    message: format!("setup failed: {e}"),
                }
            }
        };
        solver.solve();
        let raw = &solver.solution;
        let x = raw.x.clone();
        let residual = program.residual(&x);
        let status = match raw.status {
            SolverStatus::Solved => {
                if residual <= self.accept_residual {
                    Status::Optimal
                } else {
                    Status::SolverError
                }
            }
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
                Status::Infeasible
            }
            SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
                Status::Unbounded
            }
            _ => {
                if residual <= self.accept_residual && x.iter().all(|v| v.is_finite()) {
                    Status::Optimal
                } else {
                    Status::SolverError
                }
            }
        };
        Solution {
            status,
            objective: program.objective_value(&x),
            x,
            residual,
            solve_time: start.elapsed(),
            message: format!("{:?}", raw.status),
        }
    }
}
