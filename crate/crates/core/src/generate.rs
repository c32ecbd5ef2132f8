//! Synthetic road-like instances with controlled slopes, opposite-trip ratios and
//! concavity-spoiling breakpoints.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{Arc, NodeId, TdInstance};
use crate::pwl::{Breakpoint, PwlFunction};
use crate::tdd::{static_distances, Engine, Metric, StopCondition, Weights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Grid,
    RandomGeometric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub n: usize,
    /// Average out-degree; refused above 10.
    pub avg_degree: f64,
    pub k_min: usize,
    pub k_max: usize,
    /// Probability that a breakpoint is concavity-spoiling (slope increases).
    pub spoiling_fraction: f64,
    /// Target bound on the slopes of the minimum-travel-time functions.
    pub lambda_max: f64,
    /// Upper end of the opposite-direction base cost ratio.
    pub zeta: f64,
    pub topology: Topology,
    /// Period exponent: the output period is `n^alpha`.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n: 500,
            avg_degree: 4.0,
            k_min: 2,
            k_max: 6,
            spoiling_fraction: 0.5,
            lambda_max: 0.2,
            zeta: 1.5,
            topology: Topology::RandomGeometric,
            alpha: 0.5,
            seed: 1,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.n < 2 {
            return bad("n must be at least 2");
        }
        if !(self.avg_degree > 0.0) {
            return bad("avg_degree must be positive");
        }
        if self.avg_degree > 10.0 {
            return bad("avg_degree above 10 is not supported (instances must stay sparse)");
        }
        if self.k_min == 0 || self.k_min > self.k_max {
            return bad("need 1 <= k_min <= k_max");
        }
        if !(0.0..=1.0).contains(&self.spoiling_fraction) {
            return bad("spoiling_fraction must lie in [0,1]");
        }
        if !(self.lambda_max >= 0.0 && self.lambda_max.is_finite()) {
            return bad("lambda_max must be >= 0");
        }
        if !(self.zeta >= 1.0 && self.zeta.is_finite()) {
            return bad("zeta must be >= 1");
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0,1)");
        }
        Ok(())
    }
}

struct Edge {
    u: NodeId,
    v: NodeId,
    len: f64,
}

pub fn generate(cfg: &GeneratorConfig) -> Result<TdInstance> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let target_edges = ((cfg.avg_degree * cfg.n as f64) / 2.0).round() as usize;
    if target_edges < cfg.n - 1 {
        return Err(Error::Config(format!(
            "avg_degree {} is too small to keep {} vertices connected",
            cfg.avg_degree, cfg.n
        )));
    }
    let edges = match cfg.topology {
        Topology::Grid => grid_edges(cfg.n, target_edges, &mut rng)?,
        Topology::RandomGeometric => geometric_edges(cfg.n, target_edges, cfg.avg_degree, &mut rng)?,
    };

    // base costs, opposite directions differ by a ratio in [1, zeta]
    let mut bases = Vec::with_capacity(edges.len() * 2);
    for e in &edges {
        let ratio = rng.gen_range(1.0..=cfg.zeta);
        let (fwd, bwd) = if rng.gen_bool(0.5) { (e.len * ratio, e.len) } else { (e.len, e.len * ratio) };
        bases.push((e.u, e.v, fwd));
        bases.push((e.v, e.u, bwd));
    }

    let flat_period = 1.0;
    let flat = TdInstance::new(
        cfg.n,
        bases
            .iter()
            .map(|&(u, v, b)| Arc { tail: u, head: v, cost: PwlFunction::constant(b, flat_period).unwrap() })
            .collect(),
        flat_period,
    )?;
    // diam(G, D̲) ≤ bound, and congested costs are at most twice the free-flow ones
    let bound = freeflow_diameter_bound(&flat, &mut rng);
    let dmax_ub = 2.0 * bound;
    let period = bound;
    let sigma = if cfg.lambda_max > 0.0 { cfg.lambda_max.ln_1p() / dmax_ub } else { 0.0 };

    let mut arcs = Vec::with_capacity(bases.len());
    for &(u, v, base) in &bases {
        let k = rng.gen_range(cfg.k_min..=cfg.k_max);
        let cost = arc_cost(base, k, cfg.spoiling_fraction, sigma, cfg.lambda_max, period, &mut rng)?;
        arcs.push(Arc { tail: u, head: v, cost });
    }
    TdInstance::new(cfg.n, arcs, period)?.normalize_period(cfg.alpha)
}

/// min over a few vertices of ecc_out + ecc_in, an upper bound on the diameter.
fn freeflow_diameter_bound(inst: &TdInstance, rng: &mut ChaCha8Rng) -> f64 {
    let reversed = TdInstance::new(
        inst.n(),
        inst.arcs().iter().map(|a| Arc { tail: a.head, head: a.tail, cost: a.cost.clone() }).collect(),
        inst.period(),
    )
    .unwrap();
    let ecc = |g: &TdInstance, v: NodeId| static_distances(g, v, Metric::FreeFlow).into_iter().fold(0.0, f64::max);
    (0..4)
        .map(|_| {
            let v = rng.gen_range(0..inst.n() as NodeId);
            ecc(inst, v) + ecc(&reversed, v)
        })
        .fold(f64::INFINITY, f64::min)
}

/// d(t) = base·(1 + A·h(t)) with h ∈ [0,1] periodic pwl and A chosen so that the
/// per-unit-free-flow log slope stays below `sigma`.
fn arc_cost(
    base: f64,
    k: usize,
    spoil: f64,
    sigma: f64,
    lambda: f64,
    period: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PwlFunction> {
    if k < 2 || sigma <= 0.0 {
        return Ok(PwlFunction::constant(base, period)?);
    }
    let mut ts: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..period)).collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup_by(|b, a| *b - *a < 1e-6 * period);
    let k = ts.len();
    if k < 2 {
        return Ok(PwlFunction::constant(base, period)?);
    }
    let mut convex: Vec<bool> = (0..k).map(|_| rng.gen_bool(spoil)).collect();
    let ups = convex.iter().filter(|&&c| c).count();
    if ups == 0 || ups == k {
        if spoil == 0.0 || spoil == 1.0 {
            // no way to close the cycle with one-signed slope changes
            return Ok(PwlFunction::constant(base, period)?);
        }
        let i = rng.gen_range(0..k);
        convex[i] = !convex[i];
    }
    let mut delta: Vec<f64> = convex.iter().map(|&c| if c { 1.0 } else { -1.0 } * rng.gen_range(0.2..1.0)).collect();
    let pos: f64 = delta.iter().filter(|d| **d > 0.0).sum();
    let neg: f64 = -delta.iter().filter(|d| **d < 0.0).sum::<f64>();
    for d in delta.iter_mut().filter(|d| **d > 0.0) {
        *d *= neg / pos;
    }

    let lens: Vec<f64> = (0..k).map(|i| if i + 1 < k { ts[i + 1] - ts[i] } else { ts[0] + period - ts[i] }).collect();
    // slopes s_i on the piece starting at t_i; s_i = c + sum_{j<=i} delta_j
    let mut s = Vec::with_capacity(k);
    let mut acc = 0.0;
    for d in &delta {
        acc += d;
        s.push(acc);
    }
    let mean = s.iter().zip(&lens).map(|(a, l)| a * l).sum::<f64>() / period;
    for x in s.iter_mut() {
        *x -= mean;
    }
    let mut h = vec![0.0; k];
    for i in 1..k {
        h[i] = h[i - 1] + s[i - 1] * lens[i - 1];
    }
    let lo = h.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = h.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo > 0.0) {
        return Ok(PwlFunction::constant(base, period)?);
    }
    let span = hi - lo;
    let up = s.iter().copied().fold(0.0, f64::max) / span;
    let down = -s.iter().copied().fold(0.0, f64::min) / span;
    let up_cap = (sigma * base).exp_m1().min(lambda);
    let down_cap = (-(-sigma * base).exp_m1()).min(lambda);
    let mut amp: f64 = 1.0;
    if up > 0.0 {
        amp = amp.min(up_cap / (base * up));
    }
    if down > 0.0 {
        amp = amp.min(down_cap / (base * down));
    }
    let pts = ts
        .iter()
        .zip(&h)
        .map(|(&t, &hv)| Breakpoint::new(t, base * (1.0 + amp * (hv - lo) / span)))
        .collect();
    Ok(PwlFunction::new(pts, period)?)
}

fn grid_edges(n: usize, target: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Edge>> {
    let side = (n as f64).sqrt().ceil() as usize;
    let id = |x: usize, y: usize| -> Option<usize> {
        let i = y * side + x;
        (x < side && i < n).then_some(i)
    };
    let mut straight = Vec::new();
    let mut diagonal = Vec::new();
    for i in 0..n {
        let (x, y) = (i % side, i / side);
        if let Some(j) = id(x + 1, y) {
            straight.push((i, j));
        }
        if let Some(j) = id(x, y + 1) {
            straight.push((i, j));
        }
        if let Some(j) = id(x + 1, y + 1) {
            diagonal.push((i, j));
        }
        if x > 0 {
            if let Some(j) = id(x - 1, y + 1) {
                diagonal.push((i, j));
            }
        }
    }
    if target > straight.len() + diagonal.len() {
        return Err(Error::Config(format!(
            "grid topology supports at most {} edges, {} requested",
            straight.len() + diagonal.len(),
            target
        )));
    }
    // BFS spanning tree over the straight edges
    let mut adj = vec![Vec::new(); n];
    for (e, &(a, b)) in straight.iter().enumerate() {
        adj[a].push((b, e));
        adj[b].push((a, e));
    }
    let mut used = vec![false; straight.len()];
    let mut seen = vec![false; n];
    let mut queue = std::collections::VecDeque::from([0usize]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        for &(v, e) in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                used[e] = true;
                queue.push_back(v);
            }
        }
    }
    let mut chosen: Vec<(usize, usize, f64)> =
        straight.iter().zip(&used).filter(|(_, &u)| u).map(|(&(a, b), _)| (a, b, 1.0)).collect();
    let mut rest: Vec<(usize, usize, f64)> =
        straight.iter().zip(&used).filter(|(_, &u)| !u).map(|(&(a, b), _)| (a, b, 1.0)).collect();
    rest.shuffle(rng);
    let mut diag: Vec<(usize, usize, f64)> = diagonal.iter().map(|&(a, b)| (a, b, std::f64::consts::SQRT_2)).collect();
    diag.shuffle(rng);
    rest.extend(diag);
    chosen.extend(rest.into_iter().take(target.saturating_sub(chosen.len())));
    Ok(chosen
        .into_iter()
        .map(|(a, b, l)| Edge { u: a as NodeId, v: b as NodeId, len: l * rng.gen_range(0.75..1.25) })
        .collect())
}

fn geometric_edges(n: usize, target: usize, avg_degree: f64, rng: &mut ChaCha8Rng) -> Result<Vec<Edge>> {
    let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())).collect();
    let dist = |a: usize, b: usize| ((pts[a].0 - pts[b].0).powi(2) + (pts[a].1 - pts[b].1).powi(2)).sqrt();
    let k = (avg_degree.ceil() as usize + 3).min(n - 1);

    let g = ((n as f64 / 2.0).sqrt().ceil() as usize).max(1);
    let cell = |p: (f64, f64)| (((p.0 * g as f64) as usize).min(g - 1), ((p.1 * g as f64) as usize).min(g - 1));
    let mut buckets = vec![Vec::new(); g * g];
    for (i, &p) in pts.iter().enumerate() {
        let (cx, cy) = cell(p);
        buckets[cy * g + cx].push(i);
    }
    let mut cand: Vec<(usize, usize)> = Vec::with_capacity(n * k);
    for i in 0..n {
        let (cx, cy) = cell(pts[i]);
        let mut best: Vec<(f64, usize)> = Vec::new();
        let mut ring = 0usize;
        loop {
            let x0 = cx as isize - ring as isize;
            let x1 = cx as isize + ring as isize;
            let y0 = cy as isize - ring as isize;
            let y1 = cy as isize + ring as isize;
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let on_ring = x == x0 || x == x1 || y == y0 || y == y1;
                    if !on_ring || x < 0 || y < 0 || x >= g as isize || y >= g as isize {
                        continue;
                    }
                    for &j in &buckets[y as usize * g + x as usize] {
                        if j != i {
                            best.push((dist(i, j), j));
                        }
                    }
                }
            }
            best.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            best.truncate(k);
            let covered = ring as f64 / g as f64;
            if (best.len() == k && best[k - 1].0 <= covered) || ring > g {
                break;
            }
            ring += 1;
        }
        for &(_, j) in &best {
            cand.push((i.min(j), i.max(j)));
        }
    }
    cand.sort_unstable();
    cand.dedup();
    cand.sort_by(|a, b| dist(a.0, a.1).total_cmp(&dist(b.0, b.1)).then(a.cmp(b)));

    let mut uf = UnionFind::new(n);
    let mut chosen = Vec::new();
    let mut in_tree = vec![false; cand.len()];
    for (e, &(a, b)) in cand.iter().enumerate() {
        if uf.union(a, b) {
            chosen.push((a, b));
            in_tree[e] = true;
        }
    }
    // join leftover components to their nearest outside vertex
    loop {
        let root0 = uf.find(0);
        let Some(other) = (0..n).find(|&v| uf.find(v) != root0) else { break };
        let r = uf.find(other);
        let members: Vec<usize> = (0..n).filter(|&v| uf.find(v) == r).collect();
        let mut best = (f64::INFINITY, 0, 0);
        for &a in &members {
            for b in 0..n {
                if uf.find(b) != r {
                    let d = dist(a, b);
                    if d < best.0 {
                        best = (d, a, b);
                    }
                }
            }
        }
        uf.union(best.1, best.2);
        chosen.push((best.1.min(best.2), best.1.max(best.2)));
    }
    let mut have: std::collections::HashSet<(usize, usize)> = chosen.iter().copied().collect();
    for (e, &pair) in cand.iter().enumerate() {
        if chosen.len() >= target {
            break;
        }
        if !in_tree[e] && have.insert(pair) {
            chosen.push(pair);
        }
    }
    if chosen.len() < target {
        return Err(Error::Config(format!(
            "random-geometric topology produced only {} candidate edges, {} requested",
            chosen.len(),
            target
        )));
    }
    let hop = 0.05 / (n as f64).sqrt();
    Ok(chosen
        .into_iter()
        .map(|(a, b)| Edge { u: a as NodeId, v: b as NodeId, len: dist(a, b) + hop })
        .collect())
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect() }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        self.parent[ra.max(rb)] = ra.min(rb);
        true
    }
}

/// Double DFS strong-connectivity check.
pub fn is_strongly_connected(inst: &TdInstance) -> bool {
    if inst.n() == 0 {
        return true;
    }
    let mut engine = Engine::new(inst);
    let fwd = engine.run(0, Weights::Static(Metric::FreeFlow), &mut StopCondition::default(), None);
    if fwd.len() != inst.n() {
        return false;
    }
    let mut seen = vec![false; inst.n()];
    let mut stack = vec![0 as NodeId];
    seen[0] = true;
    let mut count = 1;
    while let Some(u) = stack.pop() {
        for &a in inst.in_arcs(u) {
            let v = inst.arc(a).tail;
            if !seen[v as usize] {
                seen[v as usize] = true;
                count += 1;
                stack.push(v);
            }
        }
    }
    count == inst.n()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(n: usize, topology: Topology) -> GeneratorConfig {
        GeneratorConfig { n, topology, ..Default::default() }
    }

    #[test]
    fn grid_is_strongly_connected_and_fifo() {
        let inst = generate(&cfg(100, Topology::Grid)).unwrap();
        assert!(is_strongly_connected(&inst));
        for a in inst.arcs() {
            assert!(a.cost.slope_range().0 > -1.0);
        }
        assert!((inst.period() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn geometric_is_strongly_connected() {
        let inst = generate(&cfg(300, Topology::RandomGeometric)).unwrap();
        assert!(is_strongly_connected(&inst));
        let avg = inst.m() as f64 / inst.n() as f64;
        assert!((avg - 4.0).abs() < 0.05, "avg out-degree {avg}");
    }

    #[test]
    fn zero_spoiling_gives_zero_kstar() {
        let c = GeneratorConfig { spoiling_fraction: 0.0, ..cfg(200, Topology::Grid) };
        let inst = generate(&c).unwrap();
        assert_eq!(inst.breakpoint_stats().2, 0);
    }

    #[test]
    fn spoiling_fraction_is_respected_roughly() {
        let c = GeneratorConfig { spoiling_fraction: 0.5, k_min: 4, k_max: 8, ..cfg(300, Topology::Grid) };
        let inst = generate(&c).unwrap();
        let (k, _, kstar) = inst.breakpoint_stats();
        let frac = kstar as f64 / k as f64;
        assert!(frac > 0.3 && frac < 0.7, "fraction {frac}");
    }

    #[test]
    fn arc_slopes_within_target() {
        let c = GeneratorConfig { lambda_max: 0.2, ..cfg(200, Topology::RandomGeometric) };
        let inst = generate(&c).unwrap();
        for a in inst.arcs() {
            let (lo, hi) = a.cost.slope_range();
            assert!(lo >= -0.2 - 1e-12 && hi <= 0.2 + 1e-12);
        }
    }

    #[test]
    fn deterministic_under_seed() {
        let a = generate(&cfg(150, Topology::RandomGeometric)).unwrap();
        let b = generate(&cfg(150, Topology::RandomGeometric)).unwrap();
        assert_eq!(a.to_tdi(), b.to_tdi());
    }

    #[test]
    fn rejects_dense_or_impossible_degrees() {
        assert!(generate(&GeneratorConfig { avg_degree: 12.0, ..cfg(50, Topology::Grid) }).is_err());
        assert!(generate(&GeneratorConfig { avg_degree: 9.5, ..cfg(50, Topology::Grid) }).is_err());
        assert!(generate(&GeneratorConfig { avg_degree: 1.0, ..cfg(50, Topology::Grid) }).is_err());
    }
}
