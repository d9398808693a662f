//! Scenario file. One TOML file drives every command; each command reads
//! the keys it needs. Unknown keys are rejected.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use ztube::complexity::Dims;
use ztube::invariance::TerminalMode;
use ztube::linalg::dlqr;
use ztube::sets::{IntervalBox, Zonotope};
use ztube::tube::{Encoding, LtiSystem, OfflineSettings, SeedObjective, TubeType};
use ztube::{Error, Result};
use ztube_bench::sim::{DisturbanceMode, SIM_TOL};
use ztube_bench::systems::{double_integrator_with, make_cse_system, DoubleIntegratorParams};

/// Row-major matrix with explicit shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Matrix {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn to_dmatrix(&self, name: &str) -> Result<DMatrix<f64>> {
        let [r, c] = self.shape;
        if r * c != self.data.len() {
            return Err(Error::InvalidArgument(format!(
                "{name}: shape {r}x{c} needs {} entries, got {}",
                r * c,
                self.data.len()
            )));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!("{name}: entries must be finite")));
        }
        Ok(DMatrix::from_row_slice(r, c, &self.data))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    DoubleIntegrator,
    Cse,
    Custom,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemConfig {
    pub kind: SystemKind,
    /// Disturbance box radius (double integrator).
    pub w: f64,
    /// Chain length and physical constants (spring chain).
    pub ell: usize,
    pub mu: f64,
    pub tau: f64,
    pub k: f64,
    pub ts: f64,
    /// Custom plant; `k_fb` defaults to the LQR gain for the weights.
    pub a: Option<Matrix>,
    pub b: Option<Matrix>,
    pub k_fb: Option<Matrix>,
    pub w_generators: Option<Matrix>,
    pub w_center: Option<Vec<f64>>,
    pub x_lower: Option<Vec<f64>>,
    pub x_upper: Option<Vec<f64>>,
    pub u_lower: Option<Vec<f64>>,
    pub u_upper: Option<Vec<f64>>,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            kind: SystemKind::DoubleIntegrator,
            w: 0.1,
            ell: 1,
            mu: 4.0,
            tau: 1.0,
            k: 1.0,
            ts: 1.0,
            a: None,
            b: None,
            k_fb: None,
            w_generators: None,
            w_center: None,
            x_lower: None,
            x_upper: None,
            u_lower: None,
            u_upper: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Weights {
    /// Defaults: `Q_x = I`, `Q_u = 0.01 I`, `Q_delta = I`.
    pub q_x: Option<Matrix>,
    pub q_u: Option<Matrix>,
    pub q_delta: Option<Matrix>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    pub membership: f64,
    pub seed_margin: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            membership: SIM_TOL,
            seed_margin: 1e-6,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Disturbance {
    Uniform,
    ExtremePoint,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub steps: usize,
    pub runs: usize,
    pub disturbance: Disturbance,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            steps: 30,
            runs: 1,
            disturbance: Disturbance::Uniform,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DoaConfig {
    pub gap: f64,
    pub depth: usize,
    /// Defaults to the state constraint box.
    pub region_lower: Option<Vec<f64>>,
    pub region_upper: Option<Vec<f64>>,
}

impl Default for DoaConfig {
    fn default() -> Self {
        Self {
            gap: 0.01,
            depth: 8,
            region_lower: None,
            region_upper: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub max_ell: usize,
    pub horizon: usize,
    pub trials: usize,
    pub x0_scale: f64,
    pub max_seed_generators: usize,
    pub budget_s: Option<f64>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            max_ell: 6,
            horizon: 25,
            trials: 1,
            x0_scale: 0.02,
            max_seed_generators: 100,
            budget_s: None,
        }
    }
}

/// Dimensions for the `complexity` command; `n_nodes` counts predicted
/// states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComplexityConfig {
    pub n_nodes: usize,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub d_w: usize,
    /// Defaults to `2 C(D, n - 1)`.
    pub q: Option<usize>,
    pub q_t: usize,
}

impl Default for ComplexityConfig {
    fn default() -> Self {
        Self {
            n_nodes: 13,
            n: 2,
            m: 1,
            d: 4,
            d_w: 2,
            q: None,
            q_t: 0,
        }
    }
}

impl ComplexityConfig {
    pub fn dims(&self) -> Dims {
        let q = self.q.unwrap_or_else(|| {
            2 * ztube::complexity::binomial(self.d as u64, self.n.saturating_sub(1) as u64) as usize
        });
        Dims {
            n_nodes: self.n_nodes,
            n: self.n,
            m: self.m,
            d: self.d,
            d_w: self.d_w,
            q,
            q_t: self.q_t,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub system: SystemConfig,
    pub tube_type: TubeType,
    pub encoding: Encoding,
    pub with_centers: bool,
    #[serde(rename = "N")]
    pub horizon: usize,
    pub s: usize,
    pub seed: u64,
    pub terminal_mode: TerminalMode,
    pub prune_seed: bool,
    /// Zonogon directions per complex mode appended to the seed template.
    pub zonogon: Option<usize>,
    pub seed_objective: SeedObjective,
    pub max_seed_generators: Option<usize>,
    pub x0: Option<Vec<f64>>,
    pub weights: Weights,
    pub tolerances: Tolerances,
    pub simulate: SimulateConfig,
    pub doa: DoaConfig,
    pub bench: BenchConfig,
    pub complexity: ComplexityConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            system: SystemConfig::default(),
            tube_type: TubeType::Elastic,
            encoding: Encoding::Phi,
            with_centers: true,
            horizon: 12,
            s: 6,
            seed: 0,
            terminal_mode: TerminalMode::Point,
            prune_seed: true,
            zonogon: None,
            seed_objective: SeedObjective::Sum,
            max_seed_generators: None,
            x0: None,
            weights: Weights::default(),
            tolerances: Tolerances::default(),
            simulate: SimulateConfig::default(),
            doa: DoaConfig::default(),
            bench: BenchConfig::default(),
            complexity: ComplexityConfig::default(),
        }
    }
}

fn vector(v: &Option<Vec<f64>>, name: &str) -> Result<DVector<f64>> {
    v.as_ref()
        .map(|v| DVector::from_row_slice(v))
        .ok_or_else(|| Error::InvalidArgument(format!("custom system needs `system.{name}`")))
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        if cfg.horizon == 0 {
            return Err(Error::InvalidArgument("config: N must be at least 1".into()));
        }
        Ok(cfg)
    }

    pub fn system(&self) -> Result<LtiSystem> {
        let sc = &self.system;
        match sc.kind {
            SystemKind::DoubleIntegrator => double_integrator_with(&DoubleIntegratorParams {
                w: sc.w,
                ..DoubleIntegratorParams::default()
            }),
            SystemKind::Cse => make_cse_system(sc.ell, sc.mu, sc.tau, sc.k, sc.ts),
            SystemKind::Custom => {
                let need = |m: &Option<Matrix>, name: &str| {
                    m.as_ref()
                        .ok_or_else(|| Error::InvalidArgument(format!("custom system needs `system.{name}`")))?
                        .to_dmatrix(name)
                };
                let a = need(&sc.a, "a")?;
                let b = need(&sc.b, "b")?;
                let gw = need(&sc.w_generators, "w_generators")?;
                let n = a.nrows();
                let k = match &sc.k_fb {
                    Some(k) => k.to_dmatrix("k_fb")?,
                    None => {
                        let (q_x, q_u) = self.stage_weights(n, b.ncols())?;
                        dlqr(&a, &b, &q_x, &q_u)?.0
                    }
                };
                let wc = match &sc.w_center {
                    Some(c) => DVector::from_row_slice(c),
                    None => DVector::zeros(n),
                };
                LtiSystem::new(
                    "custom",
                    a,
                    b,
                    k,
                    Zonotope::new(wc, gw)?,
                    IntervalBox::new(vector(&sc.x_lower, "x_lower")?, vector(&sc.x_upper, "x_upper")?)?,
                    IntervalBox::new(vector(&sc.u_lower, "u_lower")?, vector(&sc.u_upper, "u_upper")?)?,
                )
            }
        }
    }

    fn stage_weights(&self, n: usize, m: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let q_x = match &self.weights.q_x {
            Some(q) => q.to_dmatrix("weights.q_x")?,
            None => DMatrix::identity(n, n),
        };
        let q_u = match &self.weights.q_u {
            Some(q) => q.to_dmatrix("weights.q_u")?,
            None => DMatrix::identity(m, m) * 0.01,
        };
        Ok((q_x, q_u))
    }

    pub fn offline_settings(&self, sys: &LtiSystem) -> Result<OfflineSettings> {
        let (q_x, q_u) = self.stage_weights(sys.n(), sys.m())?;
        let mut st = OfflineSettings::new(q_x, q_u);
        st.q_delta = self.weights.q_delta.as_ref().map(|q| q.to_dmatrix("weights.q_delta")).transpose()?;
        st.s = self.s;
        st.terminal_mode = self.terminal_mode;
        st.prune_seed = self.prune_seed;
        st.seed_margin = self.tolerances.seed_margin;
        st.zonogon = self.zonogon;
        st.seed_objective = self.seed_objective;
        st.max_seed_generators = self.max_seed_generators;
        Ok(st)
    }

    pub fn x0(&self, n: usize) -> Result<DVector<f64>> {
        let x0 = self
            .x0
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("config needs `x0` for this command".into()))?;
        if x0.len() != n {
            return Err(Error::InvalidArgument(format!("x0 has {} entries, the system has {n} states", x0.len())));
        }
        Ok(DVector::from_row_slice(x0))
    }

    pub fn disturbance_mode(&self) -> DisturbanceMode {
        match self.simulate.disturbance {
            Disturbance::Uniform => DisturbanceMode::Uniform,
            Disturbance::ExtremePoint => DisturbanceMode::ExtremePoint,
        }
    }

    pub fn doa_region(&self, sys: &LtiSystem) -> Result<IntervalBox> {
        match (&self.doa.region_lower, &self.doa.region_upper) {
            (Some(l), Some(u)) => IntervalBox::from_slices(l, u),
            (None, None) => Ok(sys.x_box.clone()),
            _ => Err(Error::InvalidArgument("doa region needs both bounds".into())),
        }
    }
}
