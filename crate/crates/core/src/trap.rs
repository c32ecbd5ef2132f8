//! TRAP: trapezoidal envelopes over a fixed departure-time grid, used for
//! destinations far enough from the landmark that one grid suffices.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::instance::{NodeId, TdInstance};
use crate::pwl::{Breakpoint, PwlFunction, REL_TOL};
use crate::tdd::{static_distances, Engine, Metric, Settled, StopCondition, Weights};

/// Global slope bounds of the minimum-travel-time functions: D' ∈ [−min, max].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Slopes {
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrapCell {
    pub t_s: f64,
    pub t_f: f64,
    pub d_s: f64,
    pub d_f: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Intersection of the upper legs (t̄_m, D̄_m).
    pub upper_mid: (f64, f64),
    /// Intersection of the lower legs (t̲_m, D̲_m).
    pub lower_mid: (f64, f64),
    pub mae: f64,
}

impl TrapCell {
    pub fn upper(&self, t: f64) -> f64 {
        (self.d_f + self.lambda_min * (self.t_f - t)).min(self.d_s + self.lambda_max * (t - self.t_s))
    }

    pub fn lower(&self, t: f64) -> f64 {
        (self.d_f - self.lambda_max * (self.t_f - t)).max(self.d_s - self.lambda_min * (t - self.t_s))
    }

    /// The upper envelope as one or two pieces: start point plus the kink if it is interior.
    pub fn upper_points(&self) -> Vec<Breakpoint> {
        let mut pts = vec![Breakpoint::new(self.t_s, self.d_s)];
        let (tm, dm) = self.upper_mid;
        let eps = REL_TOL * self.t_f.abs().max(1.0);
        if tm > self.t_s + eps && tm < self.t_f - eps {
            pts.push(Breakpoint::new(tm, dm));
        }
        pts
    }

    /// max over the four test points of upper/lower − 1 (∞ if the lower envelope is not positive).
    pub fn achieved_eps(&self) -> f64 {
        [self.t_s, self.t_f, self.upper_mid.0, self.lower_mid.0]
            .iter()
            .map(|&t| {
                let (u, l) = (self.upper(t), self.lower(t));
                if l > 0.0 {
                    u / l - 1.0
                } else if u <= 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            })
            .fold(0.0, f64::max)
    }
}

pub fn build_cell(d_s: f64, d_f: f64, t_s: f64, t_f: f64, lambda_min: f64, lambda_max: f64) -> Result<TrapCell> {
    if !(t_s < t_f) {
        return Err(Error::Invalid(format!("empty cell [{t_s}, {t_f})")));
    }
    if !(lambda_min >= 0.0 && lambda_min < 1.0 && lambda_max >= 0.0) {
        return Err(Error::Invalid(format!("bad slope bounds ({lambda_min}, {lambda_max})")));
    }
    let sum = lambda_min + lambda_max;
    if sum == 0.0 {
        if (d_s - d_f).abs() > REL_TOL * d_s.abs().max(d_f.abs()) {
            return Err(Error::Invalid(format!(
                "inconsistent slopes: zero slope bounds but samples {d_s} and {d_f} differ"
            )));
        }
        return Ok(TrapCell {
            t_s,
            t_f,
            d_s,
            d_f,
            lambda_min,
            lambda_max,
            upper_mid: (t_s, d_s),
            lower_mid: (t_s, d_s),
            mae: 0.0,
        });
    }
    let tu = ((d_f - d_s + lambda_min * t_f + lambda_max * t_s) / sum).clamp(t_s, t_f);
    let tl = ((d_s - d_f + lambda_min * t_s + lambda_max * t_f) / sum).clamp(t_s, t_f);
    let mut cell = TrapCell {
        t_s,
        t_f,
        d_s,
        d_f,
        lambda_min,
        lambda_max,
        upper_mid: (tu, 0.0),
        lower_mid: (tl, 0.0),
        mae: 0.0,
    };
    cell.upper_mid.1 = cell.upper(tu);
    cell.lower_mid.1 = cell.lower(tl);
    cell.mae = (cell.upper(tl) - cell.lower_mid.1).max(0.0);
    Ok(cell)
}

/// τ[ℓ,v] = D̲[ℓ,v] / ((1+1/ε)Λ_max); +∞ on static instances.
pub fn sufficient_tau(freeflow_dist: f64, eps: f64, lambda_max: f64) -> f64 {
    if lambda_max <= 0.0 {
        return f64::INFINITY;
    }
    freeflow_dist / ((1.0 + 1.0 / eps) * lambda_max)
}

/// V[ℓ](τ): reachable vertices whose sufficient τ strictly exceeds `tau`.
pub fn faraway_set(inst: &TdInstance, l: NodeId, tau: f64, eps: f64, lambda_max: f64) -> Vec<NodeId> {
    let d = static_distances(inst, l, Metric::FreeFlow);
    (0..inst.n() as NodeId)
        .filter(|&v| d[v as usize].is_finite() && sufficient_tau(d[v as usize], eps, lambda_max) > tau)
        .collect()
}

#[derive(Debug, Clone, Default)]
pub struct TrapBuild {
    pub summaries: BTreeMap<NodeId, PwlFunction>,
    pub tau_star: f64,
    pub cells: usize,
    pub tdd_calls: usize,
    /// Largest cell MAE per destination.
    pub max_mae: BTreeMap<NodeId, f64>,
}

/// Default cap on the number of cells per build.
pub fn default_cell_cap(period: f64) -> usize {
    (10.0 * period.max(1.0)).ceil() as usize
}

/// One TDD from (l, t), stopped once every destination is settled.
pub(crate) fn sample_dests(
    engine: &mut Engine<'_>,
    l: NodeId,
    t: f64,
    dests: &[NodeId],
    is_dest: &[bool],
    mask: Option<&[bool]>,
) -> Vec<f64> {
    let mut remaining = dests.len();
    let mut pred = |s: &Settled| {
        if is_dest[s.vertex as usize] {
            remaining -= 1;
        }
        remaining == 0
    };
    let ball = if dests.is_empty() {
        None
    } else {
        Some(engine.run(
            l,
            Weights::TimeDependent(t),
            &mut StopCondition { predicate: Some(&mut pred), ..Default::default() },
            mask,
        ))
    };
    dests
        .iter()
        .map(|&v| ball.as_ref().and_then(|b| b.travel_time(v)).unwrap_or(f64::INFINITY))
        .collect()
}

/// Summaries for `dests` (normally a faraway set) from samples on a τ*-grid.
///
/// `freeflow` holds D̲[ℓ,·]. The final cell wraps onto the t=0 sample, so the build
/// performs exactly ⌈T/τ*⌉ searches.
pub fn build_summaries(
    inst: &TdInstance,
    l: NodeId,
    dests: &[NodeId],
    freeflow: &[f64],
    eps: f64,
    slopes: Slopes,
    cell_cap: usize,
) -> Result<TrapBuild> {
    if dests.is_empty() {
        return Ok(TrapBuild::default());
    }
    let period = inst.period();
    let tau_star = dests
        .iter()
        .map(|&v| sufficient_tau(freeflow[v as usize], eps, slopes.max))
        .fold(f64::INFINITY, f64::min);
    if !(tau_star > 0.0) {
        return Err(Error::Invalid(format!("destination at free-flow distance 0 from landmark {l}")));
    }
    let cells = if tau_star.is_finite() { ((period / tau_star).ceil() as usize).max(1) } else { 1 };
    if cells > cell_cap {
        return Err(Error::CellCap { cells, cap: cell_cap });
    }
    let grid: Vec<f64> = (0..cells).map(|j| j as f64 * tau_star.min(period)).collect();

    let mut is_dest = vec![false; inst.n()];
    for &v in dests {
        is_dest[v as usize] = true;
    }
    let mut engine = Engine::new(inst);
    let samples: Vec<Vec<f64>> = grid.iter().map(|&t| sample_dests(&mut engine, l, t, dests, &is_dest, None)).collect();

    let mut out = TrapBuild { tau_star, cells, tdd_calls: cells, ..Default::default() };
    for (i, &v) in dests.iter().enumerate() {
        if !samples[0][i].is_finite() {
            continue;
        }
        let mut pts = Vec::with_capacity(2 * cells);
        let mut worst: f64 = 0.0;
        for j in 0..cells {
            let t_s = grid[j];
            let (t_f, d_f) = if j + 1 < cells { (grid[j + 1], samples[j + 1][i]) } else { (period, samples[0][i]) };
            let cell = build_cell(samples[j][i], d_f, t_s, t_f, slopes.min, slopes.max)?;
            worst = worst.max(cell.mae);
            pts.extend(cell.upper_points());
        }
        let f = PwlFunction::new(pts, period)?.simplified();
        out.summaries.insert(v, f);
        out.max_mae.insert(v, worst);
    }
    Ok(out)
}
