//! Closed-form problem sizes for polyhedral and zonotopic tube MPC, and
//! the same counts read off a built program.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::program::{ConvexProgram, Family, VarKind};
use crate::tube::{Encoding, TubeType};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SetKind {
    Polyhedral,
    Zonotopic(Encoding),
}

impl SetKind {
    pub const ALL: [SetKind; 4] = [
        SetKind::Polyhedral,
        SetKind::Zonotopic(Encoding::Gamma),
        SetKind::Zonotopic(Encoding::Phi),
        SetKind::Zonotopic(Encoding::Phi0),
    ];

    pub fn label(self) -> &'static str {
        match self {
            SetKind::Polyhedral => "P",
            SetKind::Zonotopic(Encoding::Gamma) => "Z+c+Gamma",
            SetKind::Zonotopic(Encoding::Phi) => "Z+c+Phi",
            SetKind::Zonotopic(Encoding::Phi0) => "Z+c+Phi0",
        }
    }
}

/// `n_nodes` is the number of predicted states (horizon plus one).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub n_nodes: usize,
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub d_w: usize,
    pub q: usize,
    pub q_t: usize,
}

impl Dims {
    pub fn dbar(&self) -> usize {
        self.d + self.d_w + 1
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub decision: usize,
    pub scaling: usize,
    pub auxiliary: usize,
    pub inequalities: usize,
    pub equalities: usize,
}

impl Counts {
    pub fn total_variables(&self) -> usize {
        self.decision + self.scaling + self.auxiliary
    }
}

/// Table row for `set` x `tube`. Zonotopic rows include optimized
/// centers; `with_centers = false` removes the center blocks
/// (`n_nodes * n + (n_nodes - 1) * D` variables, `(n_nodes - 1) * n`
/// equalities, `2 (n_nodes - 1) D` inequalities).
pub fn complexity_report(dims: &Dims, set: SetKind, tube: TubeType, with_centers: bool) -> Result<Counts> {
    let Dims {
        n_nodes: nn,
        n,
        m,
        d,
        q,
        q_t,
        ..
    } = *dims;
    if nn < 2 || n == 0 || m == 0 {
        return Err(Error::InvalidArgument(
            "complexity_report needs at least two nodes and positive n, m".into(),
        ));
    }
    let steps = nn - 1;
    let per_set = match set {
        SetKind::Polyhedral => q,
        SetKind::Zonotopic(_) => d,
    };
    if per_set == 0 {
        return Err(Error::InvalidArgument("set size must be positive".into()));
    }
    let scaling = match tube {
        TubeType::Rigid => 0,
        TubeType::Homothetic => nn,
        TubeType::Elastic => nn * per_set,
    };
    let decision = steps * m + nn * n;
    let dbar = dims.dbar();
    let (auxiliary, step_ineq, equalities) = match set {
        SetKind::Polyhedral => (0, 2 * (n + m) + q, 0),
        SetKind::Zonotopic(Encoding::Gamma) => (nn * n + 2 * d * steps, 2 * (n + m) + 4 * d, 2 * n * steps),
        SetKind::Zonotopic(Encoding::Phi) => (
            nn * n + d * steps * (2 * dbar + 1),
            2 * (n + m) + 3 * d + 2 * d * dbar,
            n * steps * (dbar + 1),
        ),
        SetKind::Zonotopic(Encoding::Phi0) => (nn * n + 3 * d * steps, 2 * (n + m) + 5 * d, 2 * n * steps),
    };
    let mut c = Counts {
        decision,
        scaling,
        auxiliary,
        inequalities: steps * step_ineq + q_t + scaling,
        equalities,
    };
    if !with_centers {
        if set == SetKind::Polyhedral {
            return Err(Error::InvalidArgument("polyhedral rows always optimize centers".into()));
        }
        c.auxiliary -= nn * n + steps * d;
        c.equalities -= steps * n;
        c.inequalities -= 2 * steps * d;
    }
    Ok(c)
}

/// `(representation size, scaling factors)` for a polyhedral elastic
/// tube (`2 C(D, n-1)` facets) and a zonotopic one (`D` generators).
pub fn representation_sizes(d: usize, n: usize) -> Result<((u64, u64), (u64, u64))> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidArgument("representation_sizes needs positive D and n".into()));
    }
    let q = 2 * binomial(d as u64, (n - 1) as u64);
    Ok(((q, q), (d as u64, d as u64)))
}

pub fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}

/// Counts read from a built tube program. Blocks named `init_*` and
/// rows of the initial-condition family are left out, as in the table.
pub fn live_counts(p: &ConvexProgram) -> Counts {
    let aux: usize = p
        .blocks()
        .iter()
        .filter(|b| b.kind == VarKind::Auxiliary && !b.name.starts_with("init_"))
        .map(|b| b.len)
        .sum();
    let (init_eq, init_ineq) = p.count_rows(Family::Initial);
    Counts {
        decision: p.vars_of_kind(VarKind::Decision),
        scaling: p.vars_of_kind(VarKind::Scaling),
        auxiliary: aux,
        inequalities: p.inequalities.len() - init_ineq,
        equalities: p.equalities.len() - init_eq,
    }
}

/// Plain-text comparison table for the given dimensions.
pub fn render_table(dims: &Dims) -> Result<String> {
    let mut out = format!(
        "N={} n={} m={} D={} Dw={} q={} qT={}\n{:<10} {:<11} {:>9} {:>8} {:>10} {:>12} {:>11}\n",
        dims.n_nodes, dims.n, dims.m, dims.d, dims.d_w, dims.q, dims.q_t, "set", "tube", "decision", "scaling", "auxiliary",
        "inequality", "equality"
    );
    for set in SetKind::ALL {
        for tube in TubeType::ALL {
            let c = complexity_report(dims, set, tube, true)?;
            out.push_str(&format!(
                "{:<10} {:<11} {:>9} {:>8} {:>10} {:>12} {:>11}\n",
                set.label(),
                tube.name(),
                c.decision,
                c.scaling,
                c.auxiliary,
                c.inequalities,
                c.equalities
            ));
        }
    }
    Ok(out)
}
