//! Invariant suites for instances and stores.

use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use crate::error::Result;
use crate::instance::{NodeId, TdInstance};
use crate::store::{Coverage, OracleStore};
use crate::tdd::{static_ball, BallLimit, Engine, Metric, Weights};
use crate::tuning::estimate_profile;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub kind: &'static str,
    pub detail: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.detail)
    }
}

fn v(kind: &'static str, detail: String) -> Violation {
    Violation { kind, detail }
}

pub fn verify_instance(inst: &TdInstance) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, a) in inst.arcs().iter().enumerate() {
        let (lo, _) = a.cost.slope_range();
        if lo < -1.0 {
            out.push(v("fifo", format!("arc {i} has slope {lo} < -1")));
        }
        if !(a.cost.min_value() > 0.0) {
            out.push(v("cost", format!("arc {i} has non-positive minimum cost {}", a.cost.min_value())));
        }
        if (a.cost.period() - inst.period()).abs() > 1e-9 * inst.period() {
            out.push(v("period", format!("arc {i} has period {} != {}", a.cost.period(), inst.period())));
        }
    }
    out
}

/// Coverage, sandwich checks at summary breakpoint times (about `budget` TDD runs in
/// total) and profile drift.
pub fn verify_store(inst: &TdInstance, store: &OracleStore, budget: usize, seed: u64) -> Result<Vec<Violation>> {
    let mut out = verify_instance(inst);
    if store.n != inst.n() {
        out.push(v("instance", format!("store built for n = {}, instance has n = {}", store.n, inst.n())));
        return Ok(out);
    }
    let per_landmark = (budget / store.landmarks.len().max(1)).max(2);
    let eps = store.eps;
    let mut engine = Engine::new(inst);
    for e in &store.landmarks {
        let l = e.vertex;
        let ff = engine.labels(l, Weights::Static(Metric::FreeFlow), None);
        match e.coverage {
            Coverage::All => {
                for d in 0..inst.n() as NodeId {
                    if d != l && ff[d as usize].is_finite() && !e.summaries.contains_key(&d) {
                        out.push(v("coverage", format!("landmark {l} lacks a summary for reachable {d}")));
                    }
                }
            }
            Coverage::FarawayOnly { radius } => {
                for d in 0..inst.n() as NodeId {
                    if d == l {
                        continue;
                    }
                    let far = ff[d as usize].is_finite() && ff[d as usize] > radius;
                    if far != e.summaries.contains_key(&d) {
                        out.push(v("coverage", format!("landmark {l}: summary presence for {d} disagrees with radius {radius}")));
                    }
                }
            }
            Coverage::Ball { size } => {
                let ball = static_ball(inst, l, Metric::FreeFlow, BallLimit::Size(size));
                for &d in e.summaries.keys() {
                    if ball.get(d).is_none() {
                        out.push(v("coverage", format!("landmark {l}: summary for {d} outside its coverage ball")));
                    }
                }
            }
        }
        for (&d, f) in &e.summaries {
            if (f.period() - inst.period()).abs() > 1e-9 * inst.period() {
                out.push(v("summary", format!("summary {l}->{d} has period {}", f.period())));
            }
        }

        let times: BTreeSet<u64> = e.summaries.values().flat_map(|f| f.breakpoints().iter().map(|p| p.t.to_bits())).collect();
        let times: Vec<f64> = times.into_iter().map(f64::from_bits).collect();
        let stride = times.len().div_ceil(per_landmark).max(1);
        for &t in times.iter().step_by(stride) {
            let exact = engine.labels(l, Weights::TimeDependent(t), None);
            for (&d, f) in &e.summaries {
                let x = exact[d as usize];
                let val = f.eval(t);
                let tol = 1e-9 * x.max(1.0);
                if !x.is_finite() {
                    out.push(v("sandwich", format!("summary {l}->{d} for an unreachable destination")));
                } else if val < x - tol {
                    out.push(v("sandwich", format!("summary {l}->{d} at t={t}: {val} below exact {x}")));
                } else if val > (1.0 + eps) * x + tol {
                    out.push(v("sandwich", format!("summary {l}->{d} at t={t}: {val} above (1+eps)*{x}")));
                }
            }
        }
    }

    let fresh = estimate_profile(inst, 4, 16, seed)?;
    let p = &store.profile;
    if fresh.sampled_lambda_max > p.lambda_max + 1e-9 {
        out.push(v("profile", format!("re-estimated lambda_max {} exceeds stored {}", fresh.sampled_lambda_max, p.lambda_max)));
    }
    if fresh.sampled_lambda_min > p.lambda_min + 1e-9 {
        out.push(v("profile", format!("re-estimated lambda_min {} exceeds stored {}", fresh.sampled_lambda_min, p.lambda_min)));
    }
    Ok(out)
}
