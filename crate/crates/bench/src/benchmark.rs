//! Build and solve timings over the spring-chain family.

use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ztube::solver::{ClarabelAdapter, SolverAdapter, Status};
use ztube::invariance::TerminalMode;
use ztube::tube::{
    build_tube_program, nominal_mpc_program, prepare_offline, solve_program, Encoding, InitialCondition, LtiSystem,
    OfflineData, OfflineSettings, SeedObjective, TubeConfig, TubeStatus, TubeType,
};
use ztube::{Error, Result};

use crate::sim::csv_err;
use crate::systems::make_cse_system;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub tube: TubeType,
    pub encoding: Encoding,
    pub with_centers: bool,
}

impl Variant {
    pub fn name(&self) -> String {
        format!(
            "{}-{}-{}",
            self.tube.name(),
            self.encoding.name(),
            if self.with_centers { "c" } else { "nc" }
        )
    }

    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split('-').collect();
        let bad = || Error::InvalidArgument(format!("unknown variant {s:?}; expected e.g. elastic-phi-c"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let tube = TubeType::ALL.into_iter().find(|t| t.name() == parts[0]).ok_or_else(bad)?;
        let encoding = Encoding::ALL.into_iter().find(|e| e.name() == parts[1]).ok_or_else(bad)?;
        let with_centers = match parts[2] {
            "c" => true,
            "nc" => false,
            _ => return Err(bad()),
        };
        Ok(Self {
            tube,
            encoding,
            with_centers,
        })
    }

    /// All 18 combinations, encoding-major.
    pub fn all() -> Vec<Variant> {
        let mut out = Vec::new();
        for encoding in Encoding::ALL {
            for tube in TubeType::ALL {
                for with_centers in [true, false] {
                    out.push(Variant {
                        tube,
                        encoding,
                        with_centers,
                    });
                }
            }
        }
        out
    }

    pub fn config(&self, off: &OfflineData, horizon: usize) -> TubeConfig {
        TubeConfig::from_offline(off, self.tube, self.encoding, self.with_centers, horizon)
    }
}

/// One seed template to try for a chain system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedCandidate {
    pub s: usize,
    pub zonogon: Option<usize>,
    pub objective: SeedObjective,
}

impl SeedCandidate {
    /// Template columns before pruning.
    pub fn size(&self, n: usize, d_w: usize) -> usize {
        (self.s + 1) * d_w + self.zonogon.map_or(0, |p| p * n / 2 + n % 2)
    }
}

/// Krylov templates for `s = 1..=12` and Krylov-plus-zonogon templates for
/// `s = 0..=3`, smallest first.
pub fn seed_candidates(n: usize, d_w: usize) -> Vec<SeedCandidate> {
    let mut c: Vec<SeedCandidate> = (1..=12)
        .map(|s| SeedCandidate {
            s,
            zonogon: None,
            objective: SeedObjective::Sum,
        })
        .collect();
    for s in 0..=3 {
        for p in [4, 8] {
            c.push(SeedCandidate {
                s,
                zonogon: Some(p),
                objective: SeedObjective::Tightness,
            });
        }
    }
    c.sort_by_key(|k| (k.size(n, d_w), k.zonogon.is_some(), k.s));
    c
}

#[derive(Clone, Debug)]
pub struct ChainSetup {
    pub ell: usize,
    pub system: LtiSystem,
    pub offline: OfflineData,
    pub candidate: SeedCandidate,
}

/// Chain system with the smallest seed that passes the offline stage
/// (point terminal). Templates above `max_generators` columns are not
/// tried.
pub fn prepare_chain(ell: usize, max_generators: usize) -> Result<ChainSetup> {
    let sys = make_cse_system(ell, 4.0, 1.0, 1.0, 1.0)?;
    let n = sys.n();
    let mut last = None;
    for cand in seed_candidates(n, sys.w.num_generators()) {
        if cand.size(n, sys.w.num_generators()) > max_generators {
            break;
        }
        let mut st = OfflineSettings::new(DMatrix::identity(n, n), DMatrix::identity(sys.m(), sys.m()) * 0.01);
        st.s = cand.s;
        st.zonogon = cand.zonogon;
        st.seed_objective = cand.objective;
        st.terminal_mode = TerminalMode::Point;
        match prepare_offline(&sys, &st) {
            Ok(off) => {
                return Ok(ChainSetup {
                    ell,
                    system: sys,
                    offline: off,
                    candidate: cand,
                })
            }
            Err(e @ (Error::Infeasible(_) | Error::Solver(_) | Error::Unavailable(_))) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(Error::Infeasible(format!(
        "no seed with at most {max_generators} generators works for ell = {ell}: {}",
        last.map_or_else(|| "no candidate tried".into(), |e| e.to_string())
    )))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub variant: String,
    pub ell: usize,
    pub n_vars: usize,
    pub n_ineq: usize,
    pub n_eq: usize,
    pub build_ms: f64,
    pub solve_ms: f64,
    pub status: String,
}

#[derive(Clone, Debug)]
pub struct BenchSettings {
    pub horizon: usize,
    pub trials: usize,
    /// `x0 = x0_scale * 1`.
    pub x0_scale: f64,
    pub max_seed_generators: usize,
    /// Cells not started before this much wall time are reported as skipped.
    pub budget: Option<Duration>,
    pub threads: usize,
}

impl Default for BenchSettings {
    fn default() -> Self {
        Self {
            horizon: 25,
            trials: 1,
            x0_scale: 0.02,
            max_seed_generators: 100,
            budget: None,
            threads: 1,
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k == 0 {
        f64::NAN
    } else if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

fn status_name(s: Status) -> &'static str {
    match s {
        Status::Optimal => "optimal",
        Status::Infeasible => "infeasible",
        Status::Unbounded => "unbounded",
        Status::SolverError => "solver_error",
    }
}

fn bench_variant(setup: &ChainSetup, v: &Variant, st: &BenchSettings, x0: &DVector<f64>) -> Result<BenchRow> {
    let cfg = v.config(&setup.offline, st.horizon);
    let adapter = ClarabelAdapter::default();
    let (mut build, mut solve) = (Vec::new(), Vec::new());
    let mut row = None;
    for _ in 0..st.trials.max(1) {
        let tp = build_tube_program(&setup.system, &cfg, &InitialCondition::Point(x0.clone()))?;
        let sol = solve_program(&tp, &adapter);
        build.push(ms(tp.build_time));
        solve.push(ms(sol.solve_time));
        row = Some((tp.program.num_vars(), tp.program.inequalities.len(), tp.program.equalities.len(), sol.status));
    }
    let (n_vars, n_ineq, n_eq, status) = row.expect("at least one trial");
    Ok(BenchRow {
        variant: v.name(),
        ell: setup.ell,
        n_vars,
        n_ineq,
        n_eq,
        build_ms: median(build),
        solve_ms: median(solve),
        status: match status {
            TubeStatus::Optimal => "optimal",
            TubeStatus::Infeasible => "infeasible",
            TubeStatus::SolverError => "solver_error",
        }
        .into(),
    })
}

fn bench_nominal(setup: &ChainSetup, st: &BenchSettings, x0: &DVector<f64>) -> Result<BenchRow> {
    let sys = &setup.system;
    let w = &setup.offline.weights;
    let adapter = ClarabelAdapter::default();
    let (mut build, mut solve) = (Vec::new(), Vec::new());
    let mut row = None;
    for _ in 0..st.trials.max(1) {
        let t = Instant::now();
        let p = nominal_mpc_program(sys, st.horizon, &w.q_x, &w.q_u, &setup.offline.terminal.p_x, None, x0)?;
        build.push(ms(t.elapsed()));
        let sol = adapter.solve(&p);
        solve.push(ms(sol.solve_time));
        row = Some((p.num_vars(), p.inequalities.len(), p.equalities.len(), sol.status));
    }
    let (n_vars, n_ineq, n_eq, status) = row.expect("at least one trial");
    Ok(BenchRow {
        variant: "nominal".into(),
        ell: setup.ell,
        n_vars,
        n_ineq,
        n_eq,
        build_ms: median(build),
        solve_ms: median(solve),
        status: status_name(status).into(),
    })
}

fn failed_row(variant: String, ell: usize, status: String) -> BenchRow {
    BenchRow {
        variant,
        ell,
        n_vars: 0,
        n_ineq: 0,
        n_eq: 0,
        build_ms: f64::NAN,
        solve_ms: f64::NAN,
        status,
    }
}

/// Timings per `(variant, ell)` plus a nominal MPC row per `ell`. Offline
/// work is excluded from the timings. Rows are sorted by `(ell, variant)`.
pub fn runtime_benchmark(variants: &[Variant], ells: &[usize], st: &BenchSettings) -> Result<Vec<BenchRow>> {
    let start = Instant::now();
    let over = || st.budget.is_some_and(|b| start.elapsed() > b);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(st.threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let mut rows = Vec::new();
    for &ell in ells {
        if over() {
            rows.push(failed_row("nominal".into(), ell, "skipped_budget".into()));
            rows.extend(variants.iter().map(|v| failed_row(v.name(), ell, "skipped_budget".into())));
            continue;
        }
        let setup = match prepare_chain(ell, st.max_seed_generators) {
            Ok(s) => s,
            Err(e) => {
                let status = format!("offline_failed: {e}");
                rows.push(failed_row("nominal".into(), ell, status.clone()));
                rows.extend(variants.iter().map(|v| failed_row(v.name(), ell, status.clone())));
                continue;
            }
        };
        let x0 = DVector::from_element(setup.system.n(), st.x0_scale);
        rows.push(bench_nominal(&setup, st, &x0)?);
        let cells: Vec<Result<BenchRow>> = pool.install(|| {
            variants
                .par_iter()
                .map(|v| {
                    if over() {
                        Ok(failed_row(v.name(), ell, "skipped_budget".into()))
                    } else {
                        bench_variant(&setup, v, st, &x0)
                    }
                })
                .collect()
        });
        for c in cells {
            rows.push(c?);
        }
    }
    rows.sort_by(|a, b| a.ell.cmp(&b.ell).then_with(|| a.variant.cmp(&b.variant)));
    Ok(rows)
}

pub fn write_benchmark_csv<W: std::io::Write>(rows: &[BenchRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::InvalidArgument(e.to_string()))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    Some(pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / sxx)
}
