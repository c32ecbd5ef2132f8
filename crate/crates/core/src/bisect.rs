//! Bisection of the departure-time axis until every destination's trapezoid
//! certifies a (1+ε)-upper-approximation.

use std::collections::{BTreeMap, HashMap};

use crate::error::Result;
use crate::instance::{NodeId, TdInstance};
use crate::pwl::{Breakpoint, PwlFunction};
use crate::tdd::Engine;
use crate::trap::{build_cell, sample_dests, Slopes, TrapCell};

pub const DEFAULT_DEPTH_CAP: u32 = 40;

#[derive(Debug, Clone, Copy)]
pub struct Leaf {
    pub dest: NodeId,
    pub depth: u32,
    pub cell: TrapCell,
}

#[derive(Debug, Clone, Default)]
pub struct BisBuild {
    pub summaries: BTreeMap<NodeId, PwlFunction>,
    pub tdd_calls: usize,
    /// Destinations that still failed at the depth cap, with the achieved ε.
    pub flagged: BTreeMap<NodeId, f64>,
    pub leaves: Vec<Leaf>,
    pub max_depth: u32,
}

/// Passes iff δ̄ ≤ (1+ε)·δ̲ at t_s, t_f and both intersection points.
pub fn leaf_test(cell: &TrapCell, eps: f64) -> bool {
    [cell.t_s, cell.t_f, cell.upper_mid.0, cell.lower_mid.0]
        .iter()
        .all(|&t| cell.upper(t) <= (1.0 + eps) * cell.lower(t))
}

/// Summaries for `dests` by recursive bisection of [0,T). When `mask` is given the
/// searches run on that vertex-induced subgraph. Destinations that are unreachable
/// or at travel time 0 (the landmark itself) get no summary.
pub fn bis_build(
    inst: &TdInstance,
    l: NodeId,
    dests: &[NodeId],
    eps: f64,
    slopes: Slopes,
    depth_cap: u32,
    mask: Option<&[bool]>,
) -> Result<BisBuild> {
    let depth_cap = depth_cap.min(62);
    let period = inst.period();
    let scale: u64 = 1 << depth_cap;
    let time_of = |k: u64| if k == scale { period } else { k as f64 / scale as f64 * period };

    let mut is_dest = vec![false; inst.n()];
    for &v in dests {
        is_dest[v as usize] = true;
    }
    let mut engine = Engine::new(inst);
    let mut cache: HashMap<u64, Vec<f64>> = HashMap::new();
    let mut sample = |k: u64, engine: &mut Engine<'_>| -> Vec<f64> {
        cache
            .entry(k)
            .or_insert_with(|| sample_dests(engine, l, time_of(k), dests, &is_dest, mask))
            .clone()
    };

    let root0 = sample(0, &mut engine);
    let open: Vec<usize> = (0..dests.len()).filter(|&i| root0[i].is_finite() && root0[i] > 0.0).collect();

    let mut out = BisBuild::default();
    let mut pieces: Vec<Vec<Breakpoint>> = vec![Vec::new(); dests.len()];
    let mut stack = vec![(0u64, scale, 0u32, open)];
    while let Some((ka, kb, depth, open)) = stack.pop() {
        if open.is_empty() {
            continue;
        }
        out.max_depth = out.max_depth.max(depth);
        let sa = sample(ka, &mut engine);
        let sb = sample(kb, &mut engine);
        let (ta, tb) = (time_of(ka), time_of(kb));
        let mut failing = Vec::new();
        for i in open {
            let cell = build_cell(sa[i], sb[i], ta, tb, slopes.min, slopes.max)?;
            let pass = leaf_test(&cell, eps);
            if pass || depth >= depth_cap || kb - ka < 2 {
                if !pass {
                    let e = out.flagged.entry(dests[i]).or_insert(0.0);
                    *e = e.max(cell.achieved_eps());
                }
                pieces[i].extend(cell.upper_points());
                out.leaves.push(Leaf { dest: dests[i], depth, cell });
            } else {
                failing.push(i);
            }
        }
        if !failing.is_empty() {
            let km = ka + (kb - ka) / 2;
            // right child first so the left one is processed next
            stack.push((km, kb, depth + 1, failing.clone()));
            stack.push((ka, km, depth + 1, failing));
        }
    }
    out.tdd_calls = cache.len();
    for (i, mut pts) in pieces.into_iter().enumerate() {
        if pts.is_empty() {
            continue;
        }
        pts.sort_by(|a, b| a.t.total_cmp(&b.t));
        out.summaries.insert(dests[i], PwlFunction::new(pts, period)?.simplified());
    }
    Ok(out)
}
