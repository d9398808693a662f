use crate::artifacts::{sha256_hex, Store};
use crate::config::Config;
use crate::{svg, Cli, CliError, Command};
use nalgebra::DMatrix;
use serde::Serialize;
use std::time::{Duration, Instant};
use ztube::complexity::render_table;
use ztube::invariance::RpiResult;
use ztube::linalg::spectral_radius;
use ztube::sets::Zonotope;
use ztube::solver::ClarabelAdapter;
use ztube::tube::{
    prepare_offline_from_rpi, seed_rpi, solve_tube, InitialCondition, LtiSystem, OfflineData, TubeConfig, TubeSolution,
    TubeStatus,
};
use ztube_bench::benchmark::{runtime_benchmark, write_benchmark_csv, BenchSettings, Variant};
use ztube_bench::doa::estimate_doa_for;
use ztube_bench::sim::{monte_carlo, ScenarioConfig, SimTrace};

/// Cross-sections drawn bold in the tube plot.
const EMPHASIZED: [usize; 3] = [1, 5, 12];

struct Ctx {
    cfg: Config,
    store: Store,
    threads: usize,
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::usage(format!("cannot read {}: {e}", path.display())))?;
            Config::parse(&text)?
        }
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(v) = &cli.variant {
        let v = Variant::parse(v)?;
        cfg.tube_type = v.tube;
        cfg.encoding = v.encoding;
        cfg.with_centers = v.with_centers;
    }
    if let Some(ell) = cli.ell {
        cfg.system.ell = ell;
    }
    if let Some(tol) = cli.tolerance {
        if !(tol >= 0.0 && tol.is_finite()) {
            return Err(CliError::usage("--tolerance must be a nonnegative number"));
        }
        cfg.tolerances.membership = tol;
    }
    let threads = cli.threads.unwrap_or(1);
    if threads == 0 {
        return Err(CliError::usage("--threads must be positive"));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::usage(format!("thread pool: {e}")))?;

    if cli.command == Command::Complexity {
        print!("{}", render_table(&cfg.complexity.dims())?);
        return Ok(());
    }

    let mut ctx = Ctx {
        cfg,
        store: Store::open(&cli.out)?,
        threads,
    };
    let start = Instant::now();
    let result = match cli.command {
        Command::Rpi => rpi(&mut ctx),
        Command::Terminal => terminal(&mut ctx),
        Command::Solve => solve(&mut ctx),
        Command::Simulate => simulate(&mut ctx),
        Command::Doa => doa(&mut ctx),
        Command::Bench => bench(&mut ctx, cli.ell, cli.variant.is_some()),
        Command::Complexity => unreachable!(),
    };
    ctx.store.record_time(cli.command.name(), start.elapsed().as_secs_f64());
    ctx.store.save()?;
    result
}

/// Everything the offline artifacts depend on.
#[derive(Serialize)]
struct OfflineKey<'a> {
    system: &'a crate::config::SystemConfig,
    s: usize,
    terminal_mode: ztube::invariance::TerminalMode,
    prune_seed: bool,
    zonogon: Option<usize>,
    seed_objective: ztube::tube::SeedObjective,
    max_seed_generators: Option<usize>,
    weights: &'a crate::config::Weights,
    seed_margin: f64,
}

fn rpi_key(cfg: &Config) -> String {
    let key = OfflineKey {
        system: &cfg.system,
        s: cfg.s,
        terminal_mode: cfg.terminal_mode,
        prune_seed: cfg.prune_seed,
        zonogon: cfg.zonogon,
        seed_objective: cfg.seed_objective,
        max_seed_generators: cfg.max_seed_generators,
        weights: &cfg.weights,
        seed_margin: cfg.tolerances.seed_margin,
    };
    sha256_hex(&serde_json::to_vec(&key).expect("config serializes"))
}

fn offline_key(cfg: &Config, rpi_sha: &str) -> String {
    sha256_hex(format!("{}:{rpi_sha}", rpi_key(cfg)).as_bytes())
}

fn load_offline(ctx: &Ctx) -> Result<(LtiSystem, OfflineData), CliError> {
    let sys = ctx.cfg.system()?;
    let (_, rpi_sha): (RpiResult, String) = ctx.store.load("rpi.json", "rpi", &rpi_key(&ctx.cfg))?;
    let (off, _) = ctx
        .store
        .load("offline.json", "terminal", &offline_key(&ctx.cfg, &rpi_sha))?;
    Ok((sys, off))
}

fn tube_config(cfg: &Config, off: &OfflineData) -> TubeConfig {
    TubeConfig::from_offline(off, cfg.tube_type, cfg.encoding, cfg.with_centers, cfg.horizon)
}

fn rpi(ctx: &mut Ctx) -> Result<(), CliError> {
    let sys = ctx.cfg.system()?;
    let settings = ctx.cfg.offline_settings(&sys)?;
    let rpi = seed_rpi(&sys, &settings)?;
    println!(
        "rpi: {} generators, delta = {:?}",
        rpi.seed_generators.ncols(),
        rpi.delta.as_slice()
    );
    ctx.store.write_json("rpi.json", "rpi", &rpi_key(&ctx.cfg), &rpi)
}

fn terminal(ctx: &mut Ctx) -> Result<(), CliError> {
    let sys = ctx.cfg.system()?;
    let settings = ctx.cfg.offline_settings(&sys)?;
    let (rpi, rpi_sha): (RpiResult, String) = ctx.store.load("rpi.json", "rpi", &rpi_key(&ctx.cfg))?;
    let mut off = prepare_offline_from_rpi(&sys, &settings, rpi)?;
    let elapsed = off.offline_time;
    off.offline_time = Duration::ZERO;
    let t = &off.terminal;
    println!(
        "terminal: seed {} generators, mode {:?}, rho(L) = {:.4}, {} terminal rows, {:.3} s",
        off.seed.ncols(),
        t.mode,
        spectral_radius(&t.l_matrix),
        t.set.as_ref().map_or(0, |s| s.extended.num_rows()),
        elapsed.as_secs_f64()
    );
    let key = offline_key(&ctx.cfg, &rpi_sha);
    ctx.store.write_json("offline.json", "terminal", &key, &off)
}

/// First two coordinates of every cross-section, as counterclockwise
/// vertex lists.
fn project_polygons(sections: &[Zonotope]) -> Result<Vec<Vec<[f64; 2]>>, CliError> {
    let n = sections.first().map_or(0, |z| z.dim());
    if n < 2 {
        return Err(CliError::usage("polygons need at least two states"));
    }
    let p = DMatrix::from_fn(2, n, |i, j| if i == j { 1.0 } else { 0.0 });
    sections
        .iter()
        .map(|z| Ok(z.affine_map(&p)?.vertices_2d()?))
        .collect()
}

#[derive(Serialize)]
struct PolygonFile {
    /// Coordinates kept by the projection.
    axes: [usize; 2],
    polygons: Vec<Polygon>,
}

#[derive(Serialize)]
struct Polygon {
    k: usize,
    vertices: Vec<[f64; 2]>,
}

fn polygon_file(polys: Vec<Vec<[f64; 2]>>) -> PolygonFile {
    PolygonFile {
        axes: [0, 1],
        polygons: polys
            .into_iter()
            .enumerate()
            .map(|(k, vertices)| Polygon { k, vertices })
            .collect(),
    }
}

fn status_error(sol: &TubeSolution) -> Result<(), CliError> {
    match sol.status {
        TubeStatus::Optimal => Ok(()),
        TubeStatus::Infeasible => Err(CliError::Failed(format!("tube program infeasible: {}", sol.message))),
        TubeStatus::SolverError => Err(CliError::Solver(format!("solver failure: {}", sol.message))),
    }
}

fn solve(ctx: &mut Ctx) -> Result<(), CliError> {
    let (sys, off) = load_offline(ctx)?;
    let x0 = ctx.cfg.x0(sys.n())?;
    let tc = tube_config(&ctx.cfg, &off);
    let mut sol = solve_tube(&sys, &tc, &InitialCondition::Point(x0), &ClarabelAdapter::default())?;
    let solve_time = sol.solve_time;
    sol.build_time = Duration::ZERO;
    sol.solve_time = Duration::ZERO;
    ctx.store.write_json("solution.json", "solve", "", &sol)?;
    status_error(&sol)?;
    println!(
        "solve: {} cost {:.6}, delta_0 = {:?}, {:.1} ms",
        tc.variant_name(),
        sol.cost,
        sol.delta[0].as_slice(),
        solve_time.as_secs_f64() * 1e3
    );
    if sys.n() < 2 {
        return Ok(());
    }
    let sections = (0..sol.delta.len())
        .map(|k| sol.cross_section(&tc.seed, k))
        .collect::<ztube::Result<Vec<_>>>()?;
    let polys = project_polygons(&sections)?;
    let path: Vec<[f64; 2]> = sol.x_bar.iter().map(|x| [x[0], x[1]]).collect();
    let drawing = svg::render(&polys, &path, &EMPHASIZED);
    ctx.store.write_json("polygons.json", "solve", "", &polygon_file(polys))?;
    ctx.store.write_bytes("tube.svg", "solve", "", drawing.as_bytes())
}

#[derive(Serialize)]
struct RunSummary {
    run: usize,
    completed: bool,
    infeasible_at: Option<usize>,
    tube_violations: usize,
    constraint_violations: usize,
    final_state: Vec<f64>,
    total_cost: f64,
}

#[derive(Serialize)]
struct SimSummary {
    variant: String,
    seed: u64,
    steps: usize,
    runs: Vec<RunSummary>,
    completed_runs: usize,
    tube_violations: usize,
    constraint_violations: usize,
}

fn simulate(ctx: &mut Ctx) -> Result<(), CliError> {
    let (sys, off) = load_offline(ctx)?;
    let x0 = ctx.cfg.x0(sys.n())?;
    let tc = tube_config(&ctx.cfg, &off);
    let seed_matrix = tc.seed.clone();
    let variant = tc.variant_name();
    let sc = ScenarioConfig {
        system: sys.clone(),
        tube: tc,
        seed: ctx.cfg.seed,
        steps: ctx.cfg.simulate.steps,
        disturbance_mode: ctx.cfg.disturbance_mode(),
        membership_tol: ctx.cfg.tolerances.membership,
    };
    let runs = ctx.cfg.simulate.runs.max(1);
    let traces = monte_carlo(&sc, &x0, runs)?;
    let summary = SimSummary {
        variant,
        seed: ctx.cfg.seed,
        steps: sc.steps,
        runs: traces.iter().enumerate().map(|(i, t)| run_summary(i, t, sc.steps)).collect(),
        completed_runs: traces.iter().filter(|t| t.completed(sc.steps)).count(),
        tube_violations: traces.iter().map(SimTrace::tube_violations).sum(),
        constraint_violations: traces.iter().map(SimTrace::constraint_violations).sum(),
    };
    let first = &traces[0];
    let mut csv = Vec::new();
    first.write_csv(&mut csv)?;
    ctx.store.write_bytes("trace.csv", "simulate", "", &csv)?;
    if traces.len() > 1 {
        for (i, t) in traces.iter().enumerate() {
            let mut csv = Vec::new();
            t.write_csv(&mut csv)?;
            ctx.store.write_bytes(&format!("traces/run_{i:04}.csv"), "simulate", "", &csv)?;
        }
    }
    ctx.store.write_json("sim_summary.json", "simulate", "", &summary)?;
    if sys.n() >= 2 && !first.records.is_empty() {
        let sections = first
            .records
            .iter()
            .map(|r| {
                let g = &seed_matrix * DMatrix::from_diagonal(&r.delta);
                Zonotope::new(r.center.clone(), g)
            })
            .collect::<ztube::Result<Vec<_>>>()?;
        let polys = project_polygons(&sections)?;
        ctx.store.write_json("sim_polygons.json", "simulate", "", &polygon_file(polys))?;
    }
    println!(
        "simulate: {}/{} runs completed, {} tube and {} constraint violations",
        summary.completed_runs,
        runs,
        summary.tube_violations,
        summary.constraint_violations
    );
    if summary.completed_runs < runs || summary.tube_violations > 0 || summary.constraint_violations > 0 {
        return Err(CliError::Failed("closed loop left the tube, violated constraints or lost feasibility".into()));
    }
    Ok(())
}

fn run_summary(run: usize, t: &SimTrace, steps: usize) -> RunSummary {
    RunSummary {
        run,
        completed: t.completed(steps),
        infeasible_at: t.infeasible_at,
        tube_violations: t.tube_violations(),
        constraint_violations: t.constraint_violations(),
        final_state: t.states.last().map_or_else(Vec::new, |x| x.as_slice().to_vec()),
        total_cost: t.records.iter().map(|r| r.cost).sum(),
    }
}

#[derive(Serialize)]
struct DoaSummary {
    variant: String,
    inner_volume: f64,
    outer_volume: f64,
    gap: f64,
    gap_target: f64,
    levels: usize,
    converged: bool,
    inner_cells: usize,
    boundary_cells: usize,
    solves: usize,
    solver_errors: usize,
}

fn doa(ctx: &mut Ctx) -> Result<(), CliError> {
    let (sys, off) = load_offline(ctx)?;
    let tc = tube_config(&ctx.cfg, &off);
    let region = ctx.cfg.doa_region(&sys)?;
    let (est, oracle) = estimate_doa_for(&sys, &tc, &region, ctx.cfg.doa.gap, ctx.cfg.doa.depth)?;
    let summary = DoaSummary {
        variant: tc.variant_name(),
        inner_volume: est.inner_volume,
        outer_volume: est.outer_volume,
        gap: est.gap,
        gap_target: ctx.cfg.doa.gap,
        levels: est.levels,
        converged: est.converged,
        inner_cells: est.inner_cells.len(),
        boundary_cells: est.boundary_cells.len(),
        solves: oracle.solves(),
        solver_errors: oracle.solver_errors(),
    };
    let mut csv = Vec::new();
    est.write_csv(&mut csv)?;
    ctx.store.write_bytes("doa.csv", "doa", "", &csv)?;
    ctx.store.write_json("doa.json", "doa", "", &summary)?;
    println!(
        "doa: inner {:.4}, outer {:.4}, gap {:.4} after {} levels",
        est.inner_volume, est.outer_volume, est.gap, est.levels
    );
    if summary.solver_errors > 0 {
        return Err(CliError::Solver(format!("{} oracle solves failed", summary.solver_errors)));
    }
    if !est.converged {
        return Err(CliError::Failed(format!(
            "gap {:.4} above the target {} at the depth cap",
            est.gap, ctx.cfg.doa.gap
        )));
    }
    Ok(())
}

fn bench(ctx: &mut Ctx, ell: Option<usize>, one_variant: bool) -> Result<(), CliError> {
    let b = &ctx.cfg.bench;
    let ells: Vec<usize> = match ell {
        Some(l) => vec![l],
        None => (1..=b.max_ell).collect(),
    };
    if ells.is_empty() || ells.contains(&0) {
        return Err(CliError::usage("chain lengths must be positive"));
    }
    let variants = if one_variant {
        vec![Variant {
            tube: ctx.cfg.tube_type,
            encoding: ctx.cfg.encoding,
            with_centers: ctx.cfg.with_centers,
        }]
    } else {
        Variant::all()
    };
    let st = BenchSettings {
        horizon: b.horizon,
        trials: b.trials.max(1),
        x0_scale: b.x0_scale,
        max_seed_generators: b.max_seed_generators,
        budget: b.budget_s.map(Duration::from_secs_f64),
        threads: ctx.threads,
    };
    let rows = runtime_benchmark(&variants, &ells, &st)?;
    let mut csv = Vec::new();
    write_benchmark_csv(&rows, &mut csv)?;
    ctx.store.write_bytes("bench.csv", "bench", "", &csv)?;
    for r in &rows {
        println!(
            "{:>3} {:<22} {:>8} vars {:>10.2} ms {}",
            r.ell, r.variant, r.n_vars, r.solve_ms, r.status
        );
    }
    let failed = rows.iter().filter(|r| r.status != "optimal").count();
    if failed > 0 {
        return Err(CliError::Failed(format!("{failed} of {} benchmark cells not optimal", rows.len())));
    }
    Ok(())
}
