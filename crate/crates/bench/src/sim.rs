//! Receding-horizon closed-loop simulation.

use std::time::Duration;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use ztube::solver::ClarabelAdapter;
use ztube::tube::{extract_control, in_cross_section, solve_tube, InitialCondition, LtiSystem, TubeConfig, TubeStatus};
use ztube::{Error, Result};

/// Default membership tolerance for states, inputs and cross-sections.
pub const SIM_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceMode {
    /// `xi ~ U[-1, 1]^Dw`
    Uniform,
    /// `xi` uniform over the vertices of the unit box.
    ExtremePoint,
    /// Replay of recorded disturbances.
    Fixed(Vec<DVector<f64>>),
}

#[derive(Clone, Debug)]
pub struct ScenarioConfig {
    pub system: LtiSystem,
    pub tube: TubeConfig,
    pub seed: u64,
    pub steps: usize,
    pub disturbance_mode: DisturbanceMode,
    /// Absolute tolerance of the tube and constraint membership checks.
    pub membership_tol: f64,
}

/// Summary of the program solved at one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub status: TubeStatus,
    pub cost: f64,
    pub solve_time: Duration,
    /// Center `x_0 + c_0` and scaling `delta_0` of the first cross-section.
    pub center: DVector<f64>,
    pub delta: DVector<f64>,
    /// The measured state lies in the cross-section predicted one step
    /// earlier (in the first cross-section of its own solution at step 0).
    pub in_tube: bool,
    pub state_ok: bool,
    pub input_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimTrace {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub disturbances: Vec<DVector<f64>>,
    pub records: Vec<StepRecord>,
    /// Step at which the program had no solution; the run stops there.
    pub infeasible_at: Option<usize>,
    /// Last state against the last predicted cross-section and `X`.
    pub final_in_tube: bool,
    pub final_state_ok: bool,
}

impl SimTrace {
    pub fn tube_violations(&self) -> usize {
        self.records.iter().filter(|r| !r.in_tube).count() + usize::from(!self.final_in_tube)
    }

    pub fn constraint_violations(&self) -> usize {
        self.records.iter().filter(|r| !r.state_ok || !r.input_ok).count() + usize::from(!self.final_state_ok)
    }

    pub fn completed(&self, steps: usize) -> bool {
        self.infeasible_at.is_none() && self.inputs.len() == steps
    }

    /// Rows `(step, state.., input.., delta.., feasible)`.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let n = self.states.first().map_or(0, |x| x.len());
        let m = self.inputs.first().map_or(0, |u| u.len());
        let d = self.records.first().map_or(0, |r| r.delta.len());
        let mut header = vec!["step".to_string()];
        header.extend((0..n).map(|i| format!("x{i}")));
        header.extend((0..m).map(|i| format!("u{i}")));
        header.extend((0..d).map(|i| format!("delta{i}")));
        header.push("feasible".into());
        w.write_record(&header).map_err(csv_err)?;
        for (k, x) in self.states.iter().enumerate() {
            let mut row = vec![k.to_string()];
            row.extend(x.iter().map(|v| v.to_string()));
            match (self.inputs.get(k), self.records.get(k)) {
                (Some(u), Some(r)) => {
                    row.extend(u.iter().map(|v| v.to_string()));
                    row.extend(r.delta.iter().map(|v| v.to_string()));
                    row.push((r.status == TubeStatus::Optimal).to_string());
                }
                (_, r) => {
                    row.extend(std::iter::repeat(String::new()).take(m + d));
                    row.push(r.map_or("", |r| if r.status == TubeStatus::Optimal { "true" } else { "false" }).into());
                }
            }
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::InvalidArgument(e.to_string()))
    }
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::InvalidArgument(format!("csv: {e}"))
}

fn sample_disturbance(sys: &LtiSystem, mode: &DisturbanceMode, k: usize, rng: &mut ChaCha8Rng) -> Result<DVector<f64>> {
    let dw = sys.w.num_generators();
    let xi = match mode {
        DisturbanceMode::Uniform => DVector::from_fn(dw, |_, _| rng.gen_range(-1.0..=1.0)),
        DisturbanceMode::ExtremePoint => DVector::from_fn(dw, |_, _| if rng.gen_bool(0.5) { 1.0 } else { -1.0 }),
        DisturbanceMode::Fixed(seq) => {
            let w = seq
                .get(k)
                .ok_or_else(|| Error::InvalidArgument(format!("fixed disturbance sequence ends before step {k}")))?;
            if !sys.w.contains_point(w, 1e-9)? {
                return Err(Error::InvalidArgument(format!("fixed disturbance at step {k} is outside W")));
            }
            return Ok(w.clone());
        }
    };
    Ok(sys.w.center() + sys.w.generators() * xi)
}

/// Solves the tube program at every measured state, applies the tube
/// control law and propagates the disturbed plant.
pub fn simulate_closed_loop(cfg: &ScenarioConfig, x0: &DVector<f64>) -> Result<SimTrace> {
    let sys = &cfg.system;
    let tol = cfg.membership_tol;
    let adapter = ClarabelAdapter::default();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut trace = SimTrace {
        states: vec![x0.clone()],
        inputs: Vec::new(),
        disturbances: Vec::new(),
        records: Vec::new(),
        infeasible_at: None,
        final_in_tube: true,
        final_state_ok: true,
    };
    let mut previous = None;
    for k in 0..cfg.steps {
        let x = trace.states[k].clone();
        let sol = solve_tube(sys, &cfg.tube, &InitialCondition::Point(x.clone()), &adapter)?;
        let state_ok = sys.x_poly.max_violation(&x) <= tol;
        let predicted = match &previous {
            Some(prev) => Some(in_cross_section(prev, &cfg.tube.seed, 1, &x, tol)?),
            None => None,
        };
        if !sol.is_optimal() {
            trace.records.push(StepRecord {
                status: sol.status,
                cost: sol.cost,
                solve_time: sol.solve_time,
                center: DVector::zeros(0),
                delta: DVector::zeros(0),
                in_tube: predicted.unwrap_or(true),
                state_ok,
                input_ok: true,
            });
            trace.infeasible_at = Some(k);
            return Ok(trace);
        }
        let in_tube = match predicted {
            Some(v) => v,
            None => in_cross_section(&sol, &cfg.tube.seed, 0, &x, tol)?,
        };
        let u = extract_control(&sol, &sys.k_fb, &x)?;
        let w = sample_disturbance(sys, &cfg.disturbance_mode, k, &mut rng)?;
        trace.records.push(StepRecord {
            status: sol.status,
            cost: sol.cost,
            solve_time: sol.solve_time,
            center: &sol.x_bar[0] + &sol.centers[0],
            delta: sol.delta[0].clone(),
            in_tube,
            state_ok,
            input_ok: sys.u_poly.max_violation(&u) <= tol,
        });
        trace.states.push(&sys.a * &x + &sys.b * &u + &w);
        trace.inputs.push(u);
        trace.disturbances.push(w);
        previous = Some(sol);
    }
    if let (Some(prev), Some(x)) = (&previous, trace.states.last()) {
        trace.final_in_tube = in_cross_section(prev, &cfg.tube.seed, 1, x, tol)?;
        trace.final_state_ok = sys.x_poly.max_violation(x) <= tol;
    }
    Ok(trace)
}

/// `runs` independent simulations; run `i` uses seed `cfg.seed + i`.
/// Results come back in run order.
pub fn monte_carlo(cfg: &ScenarioConfig, x0: &DVector<f64>, runs: usize) -> Result<Vec<SimTrace>> {
    (0..runs)
        .into_par_iter()
        .map(|i| {
            let mut c = cfg.clone();
            c.seed = cfg.seed.wrapping_add(i as u64);
            simulate_closed_loop(&c, x0)
        })
        .collect()
}
