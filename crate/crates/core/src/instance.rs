//! Time-dependent network model and the TDI text format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::pwl::{approx_eq, Breakpoint, PwlFunction};
use crate::tdd::{static_distances, Metric};

pub type NodeId = u32;
pub type ArcId = u32;

#[derive(Debug, Clone, PartialEq)]
pub struct Arc {
    pub tail: NodeId,
    pub head: NodeId,
    pub cost: PwlFunction,
}

/// Directed graph with periodic pwl arc costs and cached static metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct TdInstance {
    n: usize,
    arcs: Vec<Arc>,
    period: f64,
    out_start: Vec<usize>,
    out_arcs: Vec<ArcId>,
    in_start: Vec<usize>,
    in_arcs: Vec<ArcId>,
    freeflow: Vec<f64>,
    congested: Vec<f64>,
}

impl TdInstance {
    pub fn new(n: usize, arcs: Vec<Arc>, period: f64) -> Result<Self> {
        if !(period.is_finite() && period > 0.0) {
            return Err(Error::Invalid(format!("period must be positive, got {period}")));
        }
        if n > u32::MAX as usize {
            return Err(Error::Invalid("too many vertices".into()));
        }
        for (i, a) in arcs.iter().enumerate() {
            if a.tail as usize >= n || a.head as usize >= n {
                return Err(Error::Invalid(format!("arc {i} has endpoint outside 0..{n}")));
            }
            if !approx_eq(a.cost.period(), period) {
                return Err(Error::Invalid(format!(
                    "arc {i} has period {} but the instance period is {period}",
                    a.cost.period()
                )));
            }
            let (lo, _) = a.cost.slope_range();
            if lo < -1.0 {
                return Err(Error::Fifo { arc: i, slope: lo });
            }
        }
        let (out_start, out_arcs) = csr(n, arcs.iter().map(|a| a.tail));
        let (in_start, in_arcs) = csr(n, arcs.iter().map(|a| a.head));
        let freeflow = arcs.iter().map(|a| a.cost.min_value()).collect();
        let congested = arcs.iter().map(|a| a.cost.max_value()).collect();
        Ok(TdInstance { n, arcs, period, out_start, out_arcs, in_start, in_arcs, freeflow, congested })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.arcs.len()
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn arc(&self, a: ArcId) -> &Arc {
        &self.arcs[a as usize]
    }

    pub fn out_arcs(&self, v: NodeId) -> &[ArcId] {
        let v = v as usize;
        &self.out_arcs[self.out_start[v]..self.out_start[v + 1]]
    }

    pub fn in_arcs(&self, v: NodeId) -> &[ArcId] {
        let v = v as usize;
        &self.in_arcs[self.in_start[v]..self.in_start[v + 1]]
    }

    /// D̲[a], the minimum cost over the period.
    pub fn freeflow(&self, a: ArcId) -> f64 {
        self.freeflow[a as usize]
    }

    /// D̄[a], the maximum cost over the period.
    pub fn congested(&self, a: ArcId) -> f64 {
        self.congested[a as usize]
    }

    pub fn static_cost(&self, a: ArcId, metric: Metric) -> f64 {
        match metric {
            Metric::FreeFlow => self.freeflow[a as usize],
            Metric::FullCongestion => self.congested[a as usize],
        }
    }

    /// Largest arc cost M.
    pub fn max_cost(&self) -> f64 {
        self.congested.iter().copied().fold(0.0, f64::max)
    }

    /// Total breakpoints K, the maximum per arc K_max, and concavity-spoiling K*.
    pub fn breakpoint_stats(&self) -> (usize, usize, usize) {
        let mut k = 0;
        let mut kmax = 0;
        let mut kstar = 0;
        for a in &self.arcs {
            k += a.cost.len();
            kmax = kmax.max(a.cost.len());
            kstar += a.cost.count_concavity_spoiling();
        }
        (k, kmax, kstar)
    }

    /// Largest finite static distance over all ordered pairs.
    pub fn diameter(&self, metric: Metric) -> f64 {
        (0..self.n as NodeId)
            .into_par_iter()
            .map(|o| {
                static_distances(self, o, metric)
                    .into_iter()
                    .filter(|d| d.is_finite())
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }

    /// Tile arc functions until the period covers the free-flow diameter, then rescale
    /// uniformly so that the period becomes exactly `n^alpha`.
    pub fn normalize_period(&self, alpha: f64) -> Result<TdInstance> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::Invalid(format!("alpha must lie in (0,1), got {alpha}")));
        }
        if self.n < 2 {
            return Err(Error::Invalid("normalization needs at least two vertices".into()));
        }
        let target = (self.n as f64).powf(alpha);
        let diam = self.diameter(Metric::FreeFlow);
        if approx_eq(self.period, target) && self.period >= diam {
            return Ok(self.clone());
        }
        let copies = if self.period >= diam { 1 } else { (diam / self.period).ceil() as usize };
        let tiled_period = self.period * copies as f64;
        let factor = target / tiled_period;
        let min_cost = self.freeflow.iter().copied().fold(f64::INFINITY, f64::min);
        if self.m() > 0 && !(min_cost * factor >= 1e-12) {
            return Err(Error::Invalid(format!(
                "scaling by {factor:e} pushes the minimum arc cost below 1e-12"
            )));
        }
        let arcs = self
            .arcs
            .iter()
            .map(|a| {
                let cost = a.cost.tile(copies).scaled(factor)?;
                Ok(Arc { tail: a.tail, head: a.head, cost })
            })
            .collect::<Result<Vec<_>>>()?;
        TdInstance::new(self.n, arcs, target)
    }

    pub fn to_tdi(&self) -> String {
        let mut s = String::new();
        writeln!(s, "tdi 1 {} {} {:.16e}", self.n, self.m(), self.period).unwrap();
        for a in &self.arcs {
            writeln!(s, "arc {} {} {}", a.tail, a.head, a.cost.len()).unwrap();
            for p in a.cost.breakpoints() {
                writeln!(s, "{:.16e} {:.16e}", p.t, p.value).unwrap();
            }
        }
        s
    }

    pub fn from_tdi(text: &str) -> Result<TdInstance> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (ln, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "empty file".into() })?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 5 || h[0] != "tdi" || h[1] != "1" {
            return Err(parse_err(ln, "expected header `tdi 1 <n> <m> <T>`"));
        }
        let n: usize = num(ln, h[2])?;
        let m: usize = num(ln, h[3])?;
        let period: f64 = num(ln, h[4])?;
        let mut arcs = Vec::with_capacity(m);
        for _ in 0..m {
            let (ln, line) = lines.next().ok_or(Error::Parse { line: ln + 2, msg: "missing arc block".into() })?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 4 || f[0] != "arc" {
                return Err(parse_err(ln, "expected `arc <tail> <head> <K>`"));
            }
            let tail: NodeId = num(ln, f[1])?;
            let head: NodeId = num(ln, f[2])?;
            let k: usize = num(ln, f[3])?;
            let mut pts = Vec::with_capacity(k);
            for _ in 0..k {
                let (ln, line) = lines.next().ok_or(Error::Parse { line: ln + 2, msg: "missing breakpoint".into() })?;
                let f: Vec<&str> = line.split_whitespace().collect();
                if f.len() != 2 {
                    return Err(parse_err(ln, "expected `<t> <value>`"));
                }
                pts.push(Breakpoint::new(num(ln, f[0])?, num(ln, f[1])?));
            }
            let cost = PwlFunction::new(pts, period).map_err(|e| parse_err(ln, &e.to_string()))?;
            arcs.push(Arc { tail, head, cost });
        }
        if let Some((ln, _)) = lines.next() {
            return Err(parse_err(ln, "trailing content after the last arc"));
        }
        TdInstance::new(n, arcs, period)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TdInstance> {
        TdInstance::from_tdi(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_tdi())?;
        Ok(())
    }
}

fn csr(n: usize, keys: impl Iterator<Item = NodeId> + Clone) -> (Vec<usize>, Vec<ArcId>) {
    let mut start = vec![0usize; n + 1];
    for k in keys.clone() {
        start[k as usize + 1] += 1;
    }
    for i in 0..n {
        start[i + 1] += start[i];
    }
    let mut fill = start.clone();
    let mut out = vec![0; start[n]];
    for (a, k) in keys.enumerate() {
        out[fill[k as usize]] = a as ArcId;
        fill[k as usize] += 1;
    }
    (start, out)
}

fn parse_err(zero_based: usize, msg: &str) -> Error {
    Error::Parse { line: zero_based + 1, msg: msg.to_string() }
}

fn num<T: std::str::FromStr>(ln: usize, s: &str) -> Result<T> {
    s.parse().map_err(|_| parse_err(ln, &format!("bad number `{s}`")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tdd::tdsp_one_to_all;

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

    #[test]
    fn tdi_round_trip_is_exact() {
        let inst = fixture3();
        let back = TdInstance::from_tdi(&inst.to_tdi()).unwrap();
        assert_eq!(inst, back);
    }

    #[test]
    fn fifo_violation_names_arc() {
        let text = "tdi 1 2 2 10\narc 0 1 1\n0 1\narc 1 0 2\n0 8\n2 5\n";
        // slope (5-8)/2 = -1.5
        match TdInstance::from_tdi(text) {
            Err(Error::Fifo { arc, slope }) => {
                assert_eq!(arc, 1);
                assert!((slope + 1.5).abs() < 1e-12);
            }
            other => panic!("expected FIFO error, got {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "tdi 1 2 1 10\narc 0 1 1\nzero 1\n";
        match TdInstance::from_tdi(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn empty_graph() {
        let inst = TdInstance::from_tdi("tdi 1 0 0 5\n").unwrap();
        assert_eq!(inst.n(), 0);
        assert_eq!(inst.m(), 0);
    }

    #[test]
    fn static_metrics_cached() {
        let inst = fixture3();
        assert_eq!(inst.freeflow(1), 4.0);
        assert_eq!(inst.congested(1), 8.0);
        assert_eq!(inst.max_cost(), 9.0);
    }

    fn chain(period: f64, costs: &[f64]) -> TdInstance {
        let arcs = costs
            .iter()
            .enumerate()
            .map(|(i, &c)| Arc {
                tail: i as NodeId,
                head: i as NodeId + 1,
                cost: PwlFunction::constant(c, period).unwrap(),
            })
            .collect();
        TdInstance::new(costs.len() + 1, arcs, period).unwrap()
    }

    #[test]
    fn normalize_fixed_point() {
        let n = 4usize;
        let alpha = 0.5;
        let inst = chain((n as f64).powf(alpha), &[0.5, 0.5, 0.5]);
        assert_eq!(inst.normalize_period(alpha).unwrap(), inst);
    }

    #[test]
    fn normalize_doubles_values() {
        // n = 400, alpha = 0.5 -> n^alpha = 20, T = 10, diameter small
        let mut costs = vec![0.01; 399];
        costs[0] = 0.02;
        let inst = chain(10.0, &costs);
        let out = inst.normalize_period(0.5).unwrap();
        assert!((out.period() - 20.0).abs() < 1e-12);
        assert!((out.freeflow(0) - 0.04).abs() < 1e-15);
    }

    #[test]
    fn normalize_tiles_when_diameter_exceeds_period() {
        // diameter 25 with T = 10 -> 3 copies, T' = 30, then scale to n^alpha
        let inst = chain(10.0, &[5.0, 5.0, 5.0, 5.0, 5.0]);
        assert_eq!(inst.diameter(Metric::FreeFlow), 25.0);
        let out = inst.normalize_period(0.5).unwrap();
        let target = 6f64.sqrt();
        assert!((out.period() - target).abs() < 1e-12);
        let expected_diam = 25.0 * target / 30.0;
        assert!((out.diameter(Metric::FreeFlow) - expected_diam).abs() < 1e-12);
        assert!(out.diameter(Metric::FreeFlow) <= out.period());
    }

    #[test]
    fn normalize_preserves_argmin_paths() {
        let inst = fixture3();
        let norm = inst.normalize_period(0.9).unwrap();
        let s = norm.period() / inst.period();
        for k in 0..20 {
            let t = k as f64 * 0.73;
            let a = tdsp_one_to_all(&inst, 0, t, &mut Default::default());
            let b = tdsp_one_to_all(&norm, 0, t * s, &mut Default::default());
            for v in 0..3 {
                let pa = a.get(v).unwrap();
                let pb = b.get(v).unwrap();
                assert_eq!(pa.parent, pb.parent);
                assert!((pa.travel_time * s - pb.travel_time).abs() < 1e-9 * pb.travel_time.max(1.0));
            }
        }
    }

    #[test]
    fn normalize_rejects_bad_alpha() {
        assert!(fixture3().normalize_period(1.5).is_err());
    }
}
