//! Rank-stratified benchmarking against exact TDD.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::instance::{NodeId, TdInstance};
use crate::query::{self, Algorithm, Termination};
use crate::store::OracleStore;
use crate::tdd::{Engine, StopCondition, Weights};
use crate::tuning::least_squares;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchQuery {
    pub origin: NodeId,
    pub destination: NodeId,
    pub departure: f64,
    /// Dijkstra-Rank Γ[o,d](t).
    pub rank: usize,
    pub exact: f64,
}

/// Bucket j holds ranks in [2^j, 2^(j+1)).
pub fn bucket_of(rank: usize) -> u32 {
    usize::BITS - 1 - rank.max(1).leading_zeros()
}

/// `count` queries spread evenly over the log-spaced rank buckets 1..=⌊log₂ n⌋.
/// Each origin contributes at most one destination per bucket.
pub fn sample_queries(inst: &TdInstance, count: usize, seed: u64) -> Result<Vec<BenchQuery>> {
    let n = inst.n();
    if n < 2 || count == 0 {
        return Err(Error::Invalid("need at least two vertices and one query".into()));
    }
    let top = bucket_of(n);
    let buckets = top as usize;
    let quota = count.div_ceil(buckets);
    let mut filled = vec![0usize; top as usize + 1];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut engine = Engine::new(inst);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count && attempts < 20 * count + 100 {
        attempts += 1;
        let o = rng.gen_range(0..n as NodeId);
        let t = rng.gen_range(0.0..inst.period());
        let ball = engine.run(o, Weights::TimeDependent(t), &mut StopCondition::default(), None);
        for j in 1..=top {
            if filled[j as usize] >= quota || out.len() >= count {
                continue;
            }
            let lo = 1usize << j;
            let hi = ((1usize << (j + 1)) - 1).min(ball.len());
            if lo > hi {
                continue;
            }
            let s = ball.settled[rng.gen_range(lo..=hi) - 1];
            filled[j as usize] += 1;
            out.push(BenchQuery { origin: o, destination: s.vertex, departure: t, rank: s.rank, exact: s.travel_time });
        }
    }
    if out.is_empty() {
        return Err(Error::Invalid("too few reachable pairs to benchmark".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRecord {
    pub origin: NodeId,
    pub destination: NodeId,
    pub departure: f64,
    pub exact: f64,
    pub reported: f64,
    pub stretch: f64,
    pub settled: usize,
    pub rank: usize,
    pub termination: Termination,
    pub exact_suffix: bool,
    pub level: Option<u32>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BucketStats {
    pub bucket: u32,
    pub count: usize,
    pub median_settled: f64,
    pub median_stretch: f64,
    pub max_stretch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub algorithm: Algorithm,
    pub mode: String,
    pub n: usize,
    pub eps: f64,
    pub r: u32,
    pub seed: u64,
    pub records: Vec<BenchRecord>,
    pub buckets: Vec<BucketStats>,
    /// Slope of ln(median settled) against ln(bucket midpoint rank).
    pub fitted_exponent: Option<f64>,
    pub max_stretch: f64,
    pub under_approximations: usize,
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Runs `algo` on every query (in parallel) and aggregates per rank bucket.
#[allow(clippy::too_many_arguments)]
pub fn run_bench(
    inst: &TdInstance,
    store: &OracleStore,
    algo: Algorithm,
    queries: &[BenchQuery],
    r: u32,
    delta: f64,
    seed: u64,
) -> Result<BenchReport> {
    let records: Vec<BenchRecord> = queries
        .par_iter()
        .map(|q| {
            let res = query::run(algo, inst, store, q.origin, q.destination, q.departure, r, delta)?;
            let stretch = if q.exact > 0.0 { res.value / q.exact } else if res.value == 0.0 { 1.0 } else { f64::INFINITY };
            Ok(BenchRecord {
                origin: q.origin,
                destination: q.destination,
                departure: q.departure,
                exact: q.exact,
                reported: res.value,
                stretch,
                settled: res.settled,
                rank: q.rank,
                termination: res.termination,
                exact_suffix: res.witness.exact_suffix,
                level: res.level,
            })
        })
        .collect::<Result<_>>()?;

    let top = records.iter().map(|r| bucket_of(r.rank)).max().unwrap_or(0);
    let mut buckets = Vec::new();
    for j in 0..=top {
        let inb: Vec<&BenchRecord> = records.iter().filter(|r| bucket_of(r.rank) == j).collect();
        if inb.is_empty() {
            continue;
        }
        let mut settled: Vec<f64> = inb.iter().map(|r| r.settled as f64).collect();
        let mut stretch: Vec<f64> = inb.iter().map(|r| r.stretch).collect();
        buckets.push(BucketStats {
            bucket: j,
            count: inb.len(),
            median_settled: median(&mut settled),
            median_stretch: median(&mut stretch),
            max_stretch: stretch.iter().copied().fold(0.0, f64::max),
        });
    }
    let fitted_exponent = (buckets.len() >= 2).then(|| {
        let xs: Vec<f64> = buckets.iter().map(|b| (1.5 * (1u64 << b.bucket) as f64).ln()).collect();
        let ys: Vec<f64> = buckets.iter().map(|b| b.median_settled.ln()).collect();
        least_squares(&xs, &ys).0
    });
    Ok(BenchReport {
        algorithm: algo,
        mode: store.mode.to_string(),
        n: store.n,
        eps: store.eps,
        r,
        seed,
        max_stretch: records.iter().map(|r| r.stretch).fold(0.0, f64::max),
        under_approximations: records.iter().filter(|r| r.reported < r.exact * (1.0 - 1e-9)).count(),
        records,
        buckets,
        fitted_exponent,
    })
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("origin,destination,departure,exact,reported,stretch,settled,rank,termination,exact_suffix,level\n");
        for r in &self.records {
            let term = match r.termination {
                Termination::Exact => "exact",
                Termination::Landmark => "landmark",
                Termination::Esc => "esc",
                Termination::AlhRqa => "alh_rqa",
                Termination::BudgetExhausted => "budget_exhausted",
            };
            s.push_str(&format!(
                "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{},{},{},{},{}\n",
                r.origin,
                r.destination,
                r.departure,
                r.exact,
                r.reported,
                r.stretch,
                r.settled,
                r.rank,
                term,
                r.exact_suffix,
                r.level.map(|l| l.to_string()).unwrap_or_default()
            ));
        }
        s
    }
}
