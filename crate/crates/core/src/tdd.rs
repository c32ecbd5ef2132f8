//! Exact time-dependent Dijkstra, Dijkstra-Rank, and static balls.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashMap};

use crate::error::{Error, Result};
use crate::instance::{NodeId, TdInstance};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Metric {
    FreeFlow,
    FullCongestion,
}

/// Arc weights used by one search.
#[derive(Debug, Clone, Copy)]
pub enum Weights {
    /// Time-dependent costs with departure time `t_o` from the origin.
    TimeDependent(f64),
    Static(Metric),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    TargetSettled,
    LandmarkSettled,
    SizeReached,
    RadiusReached,
    PredicateMatched,
    Exhausted,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Settled {
    pub vertex: NodeId,
    pub travel_time: f64,
    pub parent: Option<NodeId>,
    /// 1-based settle order.
    pub rank: usize,
}

/// Composable stop condition; the search stops as soon as any part fires.
#[derive(Default)]
pub struct StopCondition<'a> {
    pub target: Option<NodeId>,
    pub landmark: Option<&'a dyn Fn(NodeId) -> bool>,
    pub size: Option<usize>,
    pub radius: Option<f64>,
    pub predicate: Option<&'a mut dyn FnMut(&Settled) -> bool>,
}

impl<'a> StopCondition<'a> {
    pub fn target(d: NodeId) -> Self {
        StopCondition { target: Some(d), ..Default::default() }
    }

    pub fn size(f: usize) -> Self {
        StopCondition { size: Some(f), ..Default::default() }
    }

    pub fn radius(r: f64) -> Self {
        StopCondition { radius: Some(r), ..Default::default() }
    }
}

#[derive(Debug, Clone)]
pub struct BallResult {
    pub origin: NodeId,
    pub departure: f64,
    pub settled: Vec<Settled>,
    pub rank_of: HashMap<NodeId, usize>,
    pub stop_reason: StopReason,
}

impl BallResult {
    pub fn get(&self, v: NodeId) -> Option<&Settled> {
        self.rank_of.get(&v).map(|&r| &self.settled[r - 1])
    }

    pub fn travel_time(&self, v: NodeId) -> Option<f64> {
        self.get(v).map(|s| s.travel_time)
    }

    pub fn len(&self) -> usize {
        self.settled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.settled.is_empty()
    }

    pub fn last(&self) -> Option<&Settled> {
        self.settled.last()
    }

    pub fn vertices(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.settled.iter().map(|s| s.vertex)
    }

    /// Vertices on the tree path origin → v, origin first.
    pub fn path_to(&self, v: NodeId) -> Option<Vec<NodeId>> {
        let mut cur = self.get(v)?;
        let mut path = vec![cur.vertex];
        while let Some(p) = cur.parent {
            cur = self.get(p)?;
            path.push(p);
        }
        path.reverse();
        Some(path)
    }
}

#[derive(Clone, Copy, PartialEq)]
struct Entry {
    key: f64,
    vertex: NodeId,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (key, vertex id)
        other.key.total_cmp(&self.key).then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const NO_PARENT: NodeId = NodeId::MAX;

/// Reusable search engine; scratch arrays are reset lazily with a generation stamp.
pub struct Engine<'g> {
    inst: &'g TdInstance,
    dist: Vec<f64>,
    parent: Vec<NodeId>,
    seen: Vec<u32>,
    done: Vec<u32>,
    generation: u32,
    heap: BinaryHeap<Entry>,
}

impl<'g> Engine<'g> {
    pub fn new(inst: &'g TdInstance) -> Self {
        let n = inst.n();
        Engine {
            inst,
            dist: vec![f64::INFINITY; n],
            parent: vec![NO_PARENT; n],
            seen: vec![0; n],
            done: vec![0; n],
            generation: 0,
            heap: BinaryHeap::new(),
        }
    }

    pub fn instance(&self) -> &'g TdInstance {
        self.inst
    }

    fn reset(&mut self) {
        self.generation = self.generation.wrapping_add(1);
        if self.generation == 0 {
            self.seen.iter_mut().for_each(|s| *s = 0);
            self.done.iter_mut().for_each(|s| *s = 0);
            self.generation = 1;
        }
        self.heap.clear();
    }

    /// Grow a ball from `origin`. `mask`, when given, restricts the search to
    /// vertices whose entry is `true`.
    pub fn run(
        &mut self,
        origin: NodeId,
        weights: Weights,
        stop: &mut StopCondition<'_>,
        mask: Option<&[bool]>,
    ) -> BallResult {
        self.reset();
        let g = self.generation;
        let inst = self.inst;
        let departure = match weights {
            Weights::TimeDependent(t) => t,
            Weights::Static(_) => 0.0,
        };
        let mut settled = Vec::new();
        let mut rank_of = HashMap::new();
        let mut reason = StopReason::Exhausted;

        if mask.map_or(true, |m| m[origin as usize]) {
            self.dist[origin as usize] = 0.0;
            self.parent[origin as usize] = NO_PARENT;
            self.seen[origin as usize] = g;
            self.heap.push(Entry { key: 0.0, vertex: origin });
        }

        while let Some(Entry { key, vertex: u }) = self.heap.pop() {
            let ui = u as usize;
            if self.done[ui] == g || key > self.dist[ui] {
                continue;
            }
            if let Some(r) = stop.radius {
                if key > r {
                    reason = StopReason::RadiusReached;
                    break;
                }
            }
            self.done[ui] = g;
            let s = Settled {
                vertex: u,
                travel_time: key,
                parent: (self.parent[ui] != NO_PARENT).then_some(self.parent[ui]),
                rank: settled.len() + 1,
            };
            settled.push(s);
            rank_of.insert(u, s.rank);

            if stop.target == Some(u) {
                reason = StopReason::TargetSettled;
                break;
            }
            if stop.landmark.map_or(false, |is_landmark| is_landmark(u)) {
                reason = StopReason::LandmarkSettled;
                break;
            }
            if let Some(p) = stop.predicate.as_mut() {
                if p(&s) {
                    reason = StopReason::PredicateMatched;
                    break;
                }
            }
            if stop.size.map_or(false, |f| settled.len() >= f) {
                reason = StopReason::SizeReached;
                break;
            }

            for &a in inst.out_arcs(u) {
                let arc = inst.arc(a);
                let v = arc.head as usize;
                if self.done[v] == g || mask.map_or(false, |m| !m[v]) {
                    continue;
                }
                let cost = match weights {
                    Weights::TimeDependent(t0) => arc.cost.eval(t0 + key),
                    Weights::Static(metric) => inst.static_cost(a, metric),
                };
                let nd = key + cost;
                if self.seen[v] != g || nd < self.dist[v] {
                    self.seen[v] = g;
                    self.dist[v] = nd;
                    self.parent[v] = u;
                    self.heap.push(Entry { key: nd, vertex: arc.head });
                }
            }
        }
        if reason == StopReason::Exhausted && stop.radius.is_some() {
            reason = StopReason::RadiusReached;
        }

        BallResult { origin, departure, settled, rank_of, stop_reason: reason }
    }

    /// Dense label array of a full search (∞ for unreached vertices).
    pub fn labels(&mut self, origin: NodeId, weights: Weights, mask: Option<&[bool]>) -> Vec<f64> {
        let ball = self.run(origin, weights, &mut StopCondition::default(), mask);
        let mut out = vec![f64::INFINITY; self.inst.n()];
        for s in &ball.settled {
            out[s.vertex as usize] = s.travel_time;
        }
        out
    }
}

pub fn tdsp_one_to_all(inst: &TdInstance, o: NodeId, t_o: f64, stop: &mut StopCondition<'_>) -> BallResult {
    Engine::new(inst).run(o, Weights::TimeDependent(t_o), stop, None)
}

/// Exact D[o,·](t_o) for every vertex.
pub fn td_distances(inst: &TdInstance, o: NodeId, t_o: f64) -> Vec<f64> {
    Engine::new(inst).labels(o, Weights::TimeDependent(t_o), None)
}

pub fn static_distances(inst: &TdInstance, o: NodeId, metric: Metric) -> Vec<f64> {
    Engine::new(inst).labels(o, Weights::Static(metric), None)
}

/// Exact D[o,d](t_o).
pub fn td_distance(inst: &TdInstance, o: NodeId, d: NodeId, t_o: f64) -> Result<f64> {
    let ball = tdsp_one_to_all(inst, o, t_o, &mut StopCondition::target(d));
    ball.travel_time(d).ok_or(Error::NoPath { from: o, to: d })
}

/// Γ[o,d](t_o): number of settled vertices up to and including `d`.
pub fn dijkstra_rank(inst: &TdInstance, o: NodeId, d: NodeId, t_o: f64) -> Result<usize> {
    let ball = tdsp_one_to_all(inst, o, t_o, &mut StopCondition::target(d));
    match ball.stop_reason {
        StopReason::TargetSettled => Ok(ball.settled.len()),
        _ => Err(Error::NoPath { from: o, to: d }),
    }
}

#[derive(Debug, Clone, Copy)]
pub enum BallLimit {
    Size(usize),
    Radius(f64),
}

pub fn static_ball(inst: &TdInstance, o: NodeId, metric: Metric, limit: BallLimit) -> BallResult {
    let mut stop = match limit {
        BallLimit::Size(f) => StopCondition::size(f),
        BallLimit::Radius(r) => StopCondition::radius(r),
    };
    Engine::new(inst).run(o, Weights::Static(metric), &mut stop, None)
}

/// The expanded ball B̲'[ℓ;F]: free-flow ball whose radius R̄ is the largest
/// full-congestion distance from ℓ to a member of B̲[ℓ;F].
#[derive(Debug, Clone)]
pub struct ExpandedBall {
    pub base: Vec<NodeId>,
    pub base_radius: f64,
    pub radius: f64,
    pub members: Vec<NodeId>,
}

pub fn expanded_ball(inst: &TdInstance, l: NodeId, f: usize) -> ExpandedBall {
    let mut engine = Engine::new(inst);
    let base = engine.run(l, Weights::Static(Metric::FreeFlow), &mut StopCondition::size(f), None);
    expanded_from_base(&mut engine, l, base.vertices().collect())
}

/// Same as [`expanded_ball`] for an explicitly given base ball.
pub fn expanded_from_base(engine: &mut Engine<'_>, l: NodeId, base: Vec<NodeId>) -> ExpandedBall {
    let inst = engine.instance();
    let congested = engine.labels(l, Weights::Static(Metric::FullCongestion), None);
    let freeflow = engine.labels(l, Weights::Static(Metric::FreeFlow), None);
    let radius = base.iter().map(|&v| congested[v as usize]).fold(0.0, f64::max);
    let base_radius = base.iter().map(|&v| freeflow[v as usize]).fold(0.0, f64::max);
    let members = (0..inst.n() as NodeId).filter(|&v| freeflow[v as usize] <= radius).collect();
    ExpandedBall { base, base_radius, radius, members }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::instance::Arc;
    use crate::pwl::{compose_arrival, Breakpoint, PwlFunction};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn fixture3() -> TdInstance {
        let t = 10.0;
        let c = |v: f64| PwlFunction::constant(v, t).unwrap();
        let ad = PwlFunction::new(vec![Breakpoint::new(0.0, 8.0), Breakpoint::new(5.0, 4.0)], t).unwrap();
        TdInstance::new(
            3,
            vec![
                Arc { tail: 0, head: 1, cost: c(2.0) },
                Arc { tail: 1, head: 2, cost: ad },
                Arc { tail: 0, head: 2, cost: c(9.0) },
            ],
            t,
        )
        .unwrap()
    }

    /// Brute-force oracle: minimum over all simple paths of the composed arrival.
    pub(crate) fn brute_force(inst: &TdInstance, o: NodeId, t: f64) -> Vec<f64> {
        fn dfs(inst: &TdInstance, u: NodeId, path: &mut Vec<usize>, on: &mut Vec<bool>, t: f64, best: &mut [f64]) {
            let arr = compose_arrival(path.iter().map(|&a| &inst.arcs()[a].cost), t);
            let d = arr - t;
            if d < best[u as usize] {
                best[u as usize] = d;
            }
            for &a in inst.out_arcs(u) {
                let v = inst.arc(a).head;
                if !on[v as usize] {
                    on[v as usize] = true;
                    path.push(a as usize);
                    dfs(inst, v, path, on, t, best);
                    path.pop();
                    on[v as usize] = false;
                }
            }
        }
        let mut best = vec![f64::INFINITY; inst.n()];
        let mut on = vec![false; inst.n()];
        on[o as usize] = true;
        dfs(inst, o, &mut Vec::new(), &mut on, t, &mut best);
        best
    }

    pub(crate) fn random_small(seed: u64) -> TdInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..=8);
        let period = 10.0;
        let mut arcs = Vec::new();
        for u in 0..n {
            for v in 0..n {
                if u != v && rng.gen_bool(0.45) {
                    let k = rng.gen_range(1..5);
                    let mut ts: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..period)).collect();
                    ts.sort_by(f64::total_cmp);
                    ts.dedup_by(|b, a| *b - *a < 0.05);
                    let mut pts: Vec<Breakpoint> =
                        ts.iter().map(|&t| Breakpoint::new(t, rng.gen_range(1.0..4.0))).collect();
                    // flatten any piece steeper than FIFO allows
                    let f = loop {
                        let f = PwlFunction::new(pts.clone(), period).unwrap();
                        if f.is_fifo() {
                            break f;
                        }
                        for p in pts.iter_mut() {
                            p.value = 0.5 * (p.value + 2.5);
                        }
                    };
                    arcs.push(Arc { tail: u, head: v, cost: f });
                }
            }
        }
        TdInstance::new(n as usize, arcs, period).unwrap()
    }

    #[test]
    fn fixture_at_zero() {
        let inst = fixture3();
        let ball = tdsp_one_to_all(&inst, 0, 0.0, &mut StopCondition::default());
        assert!((ball.travel_time(2).unwrap() - 8.4).abs() < 1e-12);
        assert_eq!(ball.get(2).unwrap().parent, Some(1));
        assert_eq!(dijkstra_rank(&inst, 0, 2, 0.0).unwrap(), 3);
        assert_eq!(dijkstra_rank(&inst, 0, 0, 0.0).unwrap(), 1);
    }

    #[test]
    fn fixture_at_four() {
        let inst = fixture3();
        // arrive at a at t=6: wrap segment (5,4)->(10,8) gives 4 + 0.8 = 4.8
        let via: f64 = 2.0 + 4.8;
        let d = td_distance(&inst, 0, 2, 4.0).unwrap();
        assert!((d - via.min(9.0)).abs() < 1e-12);
    }

    #[test]
    fn matches_brute_force_on_small_instances() {
        for seed in 0..30 {
            let inst = random_small(seed);
            for o in 0..inst.n() as NodeId {
                for k in 0..4 {
                    let t = k as f64 * 3.3;
                    let got = td_distances(&inst, o, t);
                    let want = brute_force(&inst, o, t);
                    for v in 0..inst.n() {
                        if want[v].is_finite() {
                            assert!((got[v] - want[v]).abs() <= 1e-9 * want[v].max(1.0), "seed {seed}");
                        } else {
                            assert!(got[v].is_infinite());
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn constant_costs_match_static() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 30;
        let arcs: Vec<Arc> = (0..120)
            .map(|_| Arc {
                tail: rng.gen_range(0..n),
                head: rng.gen_range(0..n),
                cost: PwlFunction::constant(rng.gen_range(0.5..3.0), 7.0).unwrap(),
            })
            .collect();
        let inst = TdInstance::new(n as usize, arcs, 7.0).unwrap();
        for o in 0..n {
            assert_eq!(td_distances(&inst, o, 2.5), static_distances(&inst, o, Metric::FreeFlow));
        }
    }

    #[test]
    fn unreachable_rank_is_error() {
        let inst = fixture3();
        assert!(matches!(dijkstra_rank(&inst, 2, 0, 0.0), Err(Error::NoPath { .. })));
    }

    #[test]
    fn settle_order_and_tree() {
        let inst = random_small(11);
        let ball = tdsp_one_to_all(&inst, 0, 1.0, &mut StopCondition::default());
        for w in ball.settled.windows(2) {
            assert!(w[0].travel_time <= w[1].travel_time);
        }
        for s in &ball.settled {
            let path = ball.path_to(s.vertex).unwrap();
            assert_eq!(path[0], 0);
            // FIFO prefix property
            for &u in &path {
                assert!(ball.travel_time(u).unwrap() <= s.travel_time);
            }
        }
    }

    #[test]
    fn size_and_radius_balls() {
        let inst = random_small(5);
        let n = inst.n();
        let full = static_ball(&inst, 0, Metric::FreeFlow, BallLimit::Size(n));
        let reach = static_distances(&inst, 0, Metric::FreeFlow).iter().filter(|d| d.is_finite()).count();
        assert_eq!(full.len(), reach);
        let zero = static_ball(&inst, 0, Metric::FreeFlow, BallLimit::Radius(0.0));
        assert_eq!(zero.vertices().collect::<Vec<_>>(), vec![0]);
        let two = static_ball(&inst, 0, Metric::FreeFlow, BallLimit::Size(2));
        assert!(two.len() <= 2);
        if reach >= 2 {
            assert_eq!(two.stop_reason, StopReason::SizeReached);
        }
    }

    fn fixture6(congest: f64) -> TdInstance {
        // 0-1-2-3-4-5 chain both ways plus a shortcut 0->5
        let t = 10.0;
        let mut arcs = Vec::new();
        let w = [1.0, 2.0, 1.5, 3.0, 0.5];
        for (i, &c) in w.iter().enumerate() {
            let hi = if i == 0 { c * congest } else { c };
            let f = if hi > c {
                PwlFunction::new(vec![Breakpoint::new(0.0, c), Breakpoint::new(5.0, hi)], t).unwrap()
            } else {
                PwlFunction::constant(c, t).unwrap()
            };
            arcs.push(Arc { tail: i as NodeId, head: i as NodeId + 1, cost: f });
            arcs.push(Arc { tail: i as NodeId + 1, head: i as NodeId, cost: PwlFunction::constant(c, t).unwrap() });
        }
        arcs.push(Arc { tail: 0, head: 5, cost: PwlFunction::constant(6.5, t).unwrap() });
        TdInstance::new(6, arcs, t).unwrap()
    }

    #[test]
    fn static_ball_matches_brute_force_order() {
        let inst = fixture6(1.0);
        let d = static_distances(&inst, 0, Metric::FreeFlow);
        let mut order: Vec<NodeId> = (0..6).collect();
        order.sort_by(|&a, &b| d[a as usize].total_cmp(&d[b as usize]).then(a.cmp(&b)));
        let ball = static_ball(&inst, 0, Metric::FreeFlow, BallLimit::Size(3));
        assert_eq!(ball.vertices().collect::<Vec<_>>(), order[..3].to_vec());
    }

    #[test]
    fn expanded_ball_cases() {
        let plain = fixture6(1.0);
        let e = expanded_ball(&plain, 0, 3);
        let mut m = e.members.clone();
        m.sort();
        let mut b = e.base.clone();
        b.sort();
        assert_eq!(m, b);

        let congested = fixture6(3.0);
        let e = expanded_ball(&congested, 0, 3);
        assert!(e.members.len() > e.base.len());
        // brute force: free-flow ball with radius = max congested distance over base
        let dc = static_distances(&congested, 0, Metric::FullCongestion);
        let df = static_distances(&congested, 0, Metric::FreeFlow);
        let r = e.base.iter().map(|&v| dc[v as usize]).fold(0.0, f64::max);
        let want: Vec<NodeId> = (0..6).filter(|&v| df[v as usize] <= r).collect();
        let mut got = e.members.clone();
        got.sort();
        assert_eq!(got, want);

        assert_eq!(expanded_ball(&congested, 0, 6).members.len(), 6);
    }

    #[test]
    fn mask_restricts_search() {
        let inst = fixture6(1.0);
        let mask = [true, true, true, false, true, true];
        let d = Engine::new(&inst).labels(0, Weights::Static(Metric::FreeFlow), Some(&mask));
        assert!(d[3].is_infinite());
        assert_eq!(d[5], 6.5);
        assert_eq!(d[4], 7.0);
    }
}
