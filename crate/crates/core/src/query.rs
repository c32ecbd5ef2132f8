//! Query algorithms over a frozen store: FCA, RQA, RQA⁺ and HQA.

use std::collections::{BTreeMap, HashSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::instance::{NodeId, TdInstance};
use crate::store::{LandmarkEntry, Mode, OracleStore};
use crate::tdd::{Engine, StopCondition, StopReason, Weights};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StretchConstants {
    pub psi: f64,
    pub sigma: f64,
    pub phi: f64,
    pub eps: f64,
    pub zeta: f64,
    pub lambda_max: f64,
}

impl StretchConstants {
    /// Ratio Δ̄/R at which HQA stops early.
    pub fn esc_threshold(&self, r: u32) -> f64 {
        (1.0 + self.eps) * self.phi * (r as f64 + 1.0) + self.psi - 1.0
    }

    /// Stretch guaranteed for an ESC answer: 1 + ε + ψ/(φ(r+1)).
    pub fn esc_bound(&self, r: u32) -> f64 {
        1.0 + self.eps + self.psi / (self.phi * (r as f64 + 1.0))
    }
}

pub fn psi(eps: f64, zeta: f64, lambda_max: f64) -> f64 {
    1.0 + lambda_max * (1.0 + eps) * (1.0 + 2.0 * zeta + lambda_max * zeta) + (1.0 + eps) * zeta
}

/// σ(r) = ε q/(q−1) with q = (1+ε/ψ)^(r+1).
pub fn sigma(eps: f64, psi: f64, r: u32) -> f64 {
    let q = (1.0 + eps / psi).powi(r as i32 + 1);
    eps * q / (q - 1.0)
}

/// φ = ψ(q−1)/(ε(r+1)), the value for which the ESC bound equals 1+σ(r).
pub fn phi(eps: f64, psi: f64, r: u32) -> f64 {
    let q = (1.0 + eps / psi).powi(r as i32 + 1);
    psi * (q - 1.0) / (eps * (r as f64 + 1.0))
}

pub fn stretch_constants(eps: f64, zeta: f64, lambda_max: f64, r: u32) -> StretchConstants {
    let p = psi(eps, zeta, lambda_max);
    StretchConstants { psi: p, sigma: sigma(eps, p, r), phi: phi(eps, p, r), eps, zeta, lambda_max }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// d was settled by the ball grown from the origin.
    Exact,
    /// Best candidate over landmark summaries (FCA / RQA / RQA⁺).
    Landmark,
    Esc,
    AlhRqa,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Witness {
    /// Ball centers from the origin onwards.
    pub centers: Vec<NodeId>,
    pub landmark: Option<NodeId>,
    /// The part after the last center (or landmark) was computed exactly.
    pub exact_suffix: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QueryResult {
    pub origin: NodeId,
    pub destination: NodeId,
    pub departure: f64,
    pub value: f64,
    pub witness: Witness,
    pub exact: bool,
    pub settled: usize,
    pub termination: Termination,
    /// Hierarchy level chosen by HQA.
    pub level: Option<u32>,
}

#[derive(Debug, Clone)]
struct Candidate {
    value: f64,
    witness: Witness,
}

fn offer(best: &mut Option<Candidate>, value: f64, witness: Witness) {
    if best.as_ref().map_or(true, |b| value < b.value) {
        *best = Some(Candidate { value, witness });
    }
}

/// Which landmarks a recursive search may stop at.
struct Usable<'a> {
    store: &'a OracleStore,
    d: NodeId,
    min_level: u32,
    /// Accept uninformed landmarks and repair them with a capped exact ball.
    plus: bool,
}

impl Usable<'_> {
    fn entry(&self, v: NodeId) -> Option<&LandmarkEntry> {
        let e = self.store.landmark(v)?;
        if e.top_level() < self.min_level {
            return None;
        }
        (self.plus || e.is_informed(self.d)).then_some(e)
    }
}

/// Shared recursive ball growing. Level j of the recursion grows one ball from every
/// center first reached at level j−1; a center is explored once, at its shallowest
/// level, with the smallest prefix found at that level. Raising `r` therefore only
/// adds candidates.
fn recursive(
    engine: &mut Engine<'_>,
    usable: &Usable<'_>,
    o: NodeId,
    t_o: f64,
    r: u32,
    settled: &mut usize,
) -> (Option<Candidate>, bool) {
    let d = usable.d;
    let mut best: Option<Candidate> = None;
    let mut exact = false;
    let mut explored: HashSet<NodeId> = HashSet::new();
    // vertex -> (prefix, chain)
    let mut level: BTreeMap<NodeId, (f64, Vec<NodeId>)> = BTreeMap::new();
    level.insert(o, (0.0, vec![o]));
    let is_usable = |v: NodeId| usable.entry(v).is_some();

    for depth in 0..=r {
        let mut next: BTreeMap<NodeId, (f64, Vec<NodeId>)> = BTreeMap::new();
        for (&w, (prefix, chain)) in &level {
            let dep = t_o + prefix;
            let ball = engine.run(
                w,
                Weights::TimeDependent(dep),
                &mut StopCondition { target: Some(d), landmark: Some(&is_usable), ..Default::default() },
                None,
            );
            *settled += ball.len();
            let last = ball.last().copied();
            let mut stop_at = None;
            match ball.stop_reason {
                StopReason::TargetSettled => {
                    let tt = last.unwrap().travel_time;
                    let wit = Witness { centers: chain.clone(), landmark: None, exact_suffix: true };
                    if w == o {
                        exact = true;
                        best = Some(Candidate { value: tt, witness: wit });
                        return (best, exact);
                    }
                    offer(&mut best, prefix + tt, wit);
                    // the continuation from w is already exact
                    continue;
                }
                StopReason::LandmarkSettled => {
                    let s = last.unwrap();
                    stop_at = Some(s.vertex);
                    let e = usable.entry(s.vertex).unwrap();
                    let arrive = dep + s.travel_time;
                    if let Some(v) = e.lookup(d, arrive) {
                        let wit = Witness { centers: chain.clone(), landmark: Some(e.vertex), exact_suffix: false };
                        offer(&mut best, prefix + s.travel_time + v, wit);
                    } else if usable.plus {
                        let sfx = engine.run(
                            e.vertex,
                            Weights::TimeDependent(arrive),
                            &mut StopCondition { target: Some(d), size: Some(e.nearby_cap.max(1)), ..Default::default() },
                            None,
                        );
                        *settled += sfx.len();
                        if let Some(x) = sfx.travel_time(d) {
                            let wit = Witness { centers: chain.clone(), landmark: Some(e.vertex), exact_suffix: true };
                            offer(&mut best, prefix + s.travel_time + x, wit);
                        }
                    }
                }
                _ => {}
            }
            if depth < r {
                for s in &ball.settled {
                    let v = s.vertex;
                    if v == w || Some(v) == stop_at || explored.contains(&v) || level.contains_key(&v) {
                        continue;
                    }
                    let p = prefix + s.travel_time;
                    let better = next.get(&v).map_or(true, |(q, _)| p < *q);
                    if better {
                        let mut c = chain.clone();
                        c.push(v);
                        next.insert(v, (p, c));
                    }
                }
            }
        }
        explored.extend(level.keys().copied());
        if next.is_empty() {
            break;
        }
        level = next;
    }
    (best, exact)
}

fn finish(
    inst: &TdInstance,
    o: NodeId,
    d: NodeId,
    t_o: f64,
    best: Option<Candidate>,
    exact: bool,
    mut settled: usize,
    termination: Termination,
    level: Option<u32>,
) -> Result<QueryResult> {
    match best {
        Some(c) => Ok(QueryResult {
            origin: o,
            destination: d,
            departure: t_o,
            value: c.value,
            witness: c.witness,
            exact,
            settled: settled.max(1),
            termination: if exact { Termination::Exact } else { termination },
            level,
        }),
        None => {
            // no candidate at all: answer exactly
            let mut engine = Engine::new(inst);
            let ball = engine.run(o, Weights::TimeDependent(t_o), &mut StopCondition::target(d), None);
            settled += ball.len();
            let value = ball.travel_time(d).ok_or(Error::NoPath { from: o, to: d })?;
            Ok(QueryResult {
                origin: o,
                destination: d,
                departure: t_o,
                value,
                witness: Witness { centers: vec![o], landmark: None, exact_suffix: true },
                exact: true,
                settled,
                termination: Termination::BudgetExhausted,
                level,
            })
        }
    }
}

fn check_ids(inst: &TdInstance, store: &OracleStore, o: NodeId, d: NodeId) -> Result<()> {
    if store.n != inst.n() {
        return Err(Error::Invalid(format!("store built for n = {}, instance has n = {}", store.n, inst.n())));
    }
    for v in [o, d] {
        if v as usize >= inst.n() {
            return Err(Error::Invalid(format!("vertex {v} out of range")));
        }
    }
    Ok(())
}

fn require(store: &OracleStore, modes: &[Mode], algo: &str) -> Result<()> {
    if modes.contains(&store.mode) {
        Ok(())
    } else {
        Err(Error::Config(format!("{algo} cannot run on a {} store", store.mode)))
    }
}

/// RQA with budget `r`; RQA⁺ when `plus` is set.
fn run_rqa(inst: &TdInstance, store: &OracleStore, o: NodeId, d: NodeId, t_o: f64, r: u32, plus: bool) -> Result<QueryResult> {
    check_ids(inst, store, o, d)?;
    let mut engine = Engine::new(inst);
    let usable = Usable { store, d, min_level: 0, plus };
    let mut settled = 0;
    let (best, exact) = recursive(&mut engine, &usable, o, t_o, r, &mut settled);
    finish(inst, o, d, t_o, best, exact, settled, Termination::Landmark, None)
}

/// First-Come Approximation. On a TRAPONLY store uninformed landmarks are
/// completed with an exact suffix ball, as in RQA⁺.
pub fn fca(inst: &TdInstance, store: &OracleStore, o: NodeId, d: NodeId, t_o: f64) -> Result<QueryResult> {
    require(store, &[Mode::Flat, Mode::TrapOnly], "fca")?;
    run_rqa(inst, store, o, d, t_o, 0, store.mode == Mode::TrapOnly)
}

pub fn rqa(inst: &TdInstance, store: &OracleStore, o: NodeId, d: NodeId, t_o: f64, r: u32) -> Result<QueryResult> {
    require(store, &[Mode::Flat], "rqa")?;
    run_rqa(inst, store, o, d, t_o, r, false)
}

pub fn rqa_plus(inst: &TdInstance, store: &OracleStore, o: NodeId, d: NodeId, t_o: f64, r: u32) -> Result<QueryResult> {
    require(store, &[Mode::TrapOnly], "rqa+")?;
    run_rqa(inst, store, o, d, t_o, r, true)
}

/// Dijkstra-Rank ring for level i: [N_i^{δ/(r+1)}/ln n, ln n · N_i^{δ/(r+1)}].
pub fn alh_ring(n: usize, rank: f64, delta: f64, r: u32) -> (f64, f64) {
    let ln_n = (n as f64).ln();
    let core = rank.powf(delta / (r as f64 + 1.0));
    let lo = if (n as f64) < std::f64::consts::E.powi(2) { 1.0 } else { core / ln_n };
    (lo, ln_n * core)
}

/// Hierarchical query.
pub fn hqa(inst: &TdInstance, store: &OracleStore, o: NodeId, d: NodeId, t_o: f64, r: u32, delta: f64) -> Result<QueryResult> {
    require(store, &[Mode::Horn], "hqa")?;
    check_ids(inst, store, o, d)?;
    let k = store.params.k;
    let consts = stretch_constants(store.eps, store.profile.zeta, store.profile.lambda_max, r);
    let threshold = consts.esc_threshold(r);
    let rings: Vec<(u32, f64, f64)> = store
        .levels
        .iter()
        .filter(|l| l.level <= k)
        .map(|l| {
            let (lo, hi) = alh_ring(store.n, l.rank, delta, r);
            (l.level, lo, hi)
        })
        .collect();
    let top_from = match store.levels.iter().find(|l| l.level == k) {
        Some(l) if k > 0 => alh_ring(store.n, l.rank, delta, r).1,
        _ => 0.0,
    };

    let mut best: Option<Candidate> = None;
    let mut trigger: Option<(Termination, Option<u32>)> = None;
    let mut pred = |s: &crate::tdd::Settled| {
        let Some(e) = store.landmark(s.vertex) else { return false };
        let Some(v) = e.lookup(d, t_o + s.travel_time) else { return false };
        let wit = Witness { centers: vec![o], landmark: Some(e.vertex), exact_suffix: false };
        offer(&mut best, s.travel_time + v, wit);
        if s.travel_time == 0.0 || v / s.travel_time >= threshold {
            trigger = Some((Termination::Esc, None));
            return true;
        }
        let count = s.rank as f64;
        for &lv in &e.levels {
            if lv <= k {
                if let Some(&(_, lo, hi)) = rings.iter().find(|x| x.0 == lv) {
                    if count >= lo && count <= hi {
                        trigger = Some((Termination::AlhRqa, Some(lv)));
                        return true;
                    }
                }
            } else if count > top_from {
                trigger = Some((Termination::AlhRqa, Some(lv)));
                return true;
            }
        }
        false
    };
    let mut engine = Engine::new(inst);
    let ball = engine.run(
        o,
        Weights::TimeDependent(t_o),
        &mut StopCondition { target: Some(d), predicate: Some(&mut pred), ..Default::default() },
        None,
    );
    let mut settled = ball.len();
    if ball.stop_reason == StopReason::TargetSettled {
        let tt = ball.travel_time(d).unwrap();
        let wit = Witness { centers: vec![o], landmark: None, exact_suffix: true };
        return finish(inst, o, d, t_o, Some(Candidate { value: tt, witness: wit }), true, settled, Termination::Exact, None);
    }
    match trigger {
        Some((Termination::Esc, _)) => finish(inst, o, d, t_o, best, false, settled, Termination::Esc, None),
        Some((_, Some(level))) => {
            let usable = Usable { store, d, min_level: level, plus: false };
            let (sub, exact) = recursive(&mut engine, &usable, o, t_o, r, &mut settled);
            if exact {
                return finish(inst, o, d, t_o, sub, true, settled, Termination::Exact, Some(level));
            }
            if let Some(c) = sub {
                offer(&mut best, c.value, c.witness);
            }
            finish(inst, o, d, t_o, best, false, settled, Termination::AlhRqa, Some(level))
        }
        _ => {
            if ball.stop_reason == StopReason::Exhausted {
                return Err(Error::NoPath { from: o, to: d });
            }
            finish(inst, o, d, t_o, None, false, settled, Termination::BudgetExhausted, None)
        }
    }
}

/// Exact answer through the same result type.
pub fn exact(inst: &TdInstance, o: NodeId, d: NodeId, t_o: f64) -> Result<QueryResult> {
    let mut engine = Engine::new(inst);
    let ball = engine.run(o, Weights::TimeDependent(t_o), &mut StopCondition::target(d), None);
    let value = ball.travel_time(d).ok_or(Error::NoPath { from: o, to: d })?;
    Ok(QueryResult {
        origin: o,
        destination: d,
        departure: t_o,
        value,
        witness: Witness { centers: vec![o], landmark: None, exact_suffix: true },
        exact: true,
        settled: ball.len(),
        termination: Termination::Exact,
        level: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Tdd,
    Fca,
    Rqa,
    RqaPlus,
    Hqa,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "tdd" => Algorithm::Tdd,
            "fca" => Algorithm::Fca,
            "rqa" => Algorithm::Rqa,
            "rqa+" | "rqa_plus" => Algorithm::RqaPlus,
            "hqa" => Algorithm::Hqa,
            _ => return Err(Error::Config(format!("unknown algorithm `{s}`"))),
        })
    }
}

impl Algorithm {
    /// The natural algorithm for a store.
    pub fn default_for(mode: Mode) -> Algorithm {
        match mode {
            Mode::TrapOnly => Algorithm::RqaPlus,
            Mode::Flat => Algorithm::Rqa,
            Mode::Horn => Algorithm::Hqa,
        }
    }
}

/// Dispatch by algorithm name; `delta` is only used by HQA.
#[allow(clippy::too_many_arguments)]
pub fn run(
    algo: Algorithm,
    inst: &TdInstance,
    store: &OracleStore,
    o: NodeId,
    d: NodeId,
    t_o: f64,
    r: u32,
    delta: f64,
) -> Result<QueryResult> {
    match algo {
        Algorithm::Tdd => exact(inst, o, d, t_o),
        Algorithm::Fca => fca(inst, store, o, d, t_o),
        Algorithm::Rqa => rqa(inst, store, o, d, t_o, r),
        Algorithm::RqaPlus => rqa_plus(inst, store, o, d, t_o, r),
        Algorithm::Hqa => hqa(inst, store, o, d, t_o, r, delta),
    }
}
