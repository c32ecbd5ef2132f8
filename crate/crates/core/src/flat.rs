//! FLAT and TRAPONLY preprocessing.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::bisect::{bis_build, DEFAULT_DEPTH_CAP};
use crate::error::{Error, Result};
use crate::instance::{NodeId, TdInstance};
use crate::pwl::PwlFunction;
use crate::store::{Coverage, LandmarkEntry, LevelInfo, Mode, OracleStore};
use crate::tdd::{expanded_from_base, Engine, Metric, Weights};
use crate::trap::{build_summaries, default_cell_cap, TrapBuild};
use crate::tuning::{MetricProfile, TuningParams};

/// Independent Bernoulli(ρ) landmark sampling on RNG stream `stream`.
pub fn sample_landmarks(n: usize, rho: f64, seed: u64, stream: u64) -> Result<Vec<NodeId>> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::Invalid(format!("landmark probability {rho} outside (0,1]")));
    }
    for attempt in 0..2u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2 * stream + attempt);
        let l: Vec<NodeId> = (0..n as NodeId).filter(|_| rho >= 1.0 || rng.gen_bool(rho)).collect();
        if !l.is_empty() {
            return Ok(l);
        }
    }
    Err(Error::Invalid(format!("no landmarks sampled for n = {n}, rho = {rho}")))
}

/// Per-landmark build statistics.
#[derive(Debug, Clone, Default, Serialize)]
pub struct LandmarkReport {
    pub landmark: NodeId,
    pub level: u32,
    pub nearby: usize,
    pub faraway: usize,
    pub expanded: usize,
    pub trap_calls: usize,
    pub trap_cells: usize,
    pub tau_star: f64,
    pub bis_calls: usize,
    pub bis_max_depth: u32,
    pub flagged: usize,
    pub breakpoints: usize,
    pub spot_checks: usize,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct BuildReport {
    pub mode: String,
    pub landmarks: usize,
    pub summaries: usize,
    pub breakpoints: usize,
    pub tdd_calls: usize,
    /// max_ℓ |B̲[ℓ;R̲]|
    pub max_nearby: usize,
    /// max_ℓ |B̲'[ℓ;F]| / F
    pub max_expansion: f64,
    pub warnings: Vec<String>,
    pub per_landmark: Vec<LandmarkReport>,
}

impl BuildReport {
    pub(crate) fn from_parts(mode: Mode, store: &OracleStore, per: Vec<LandmarkReport>, warnings: Vec<String>) -> Self {
        BuildReport {
            mode: mode.to_string(),
            landmarks: store.landmarks.len(),
            summaries: store.total_summaries(),
            breakpoints: store.total_breakpoints(),
            tdd_calls: per.iter().map(|p| p.trap_calls + p.bis_calls).sum(),
            max_nearby: per.iter().map(|p| p.nearby).max().unwrap_or(0),
            max_expansion: per
                .iter()
                .filter(|p| p.nearby > 0)
                .map(|p| p.expanded as f64 / p.nearby as f64)
                .fold(0.0, f64::max),
            warnings,
            per_landmark: per,
        }
    }
}

/// Everything a single landmark build needs.
pub(crate) struct LandmarkJob<'a> {
    pub inst: &'a TdInstance,
    pub l: NodeId,
    pub levels: Vec<u32>,
    pub eps: f64,
    pub profile: &'a MetricProfile,
    /// Destinations handled by bisection, in free-flow order (ℓ excluded).
    pub nearby: Vec<NodeId>,
    /// Destinations handled by TRAP.
    pub faraway: Vec<NodeId>,
    pub freeflow: Vec<f64>,
    pub coverage: Coverage,
    pub use_bis: bool,
    pub seed: u64,
}

pub(crate) fn build_landmark(job: LandmarkJob<'_>) -> Result<(LandmarkEntry, LandmarkReport)> {
    let inst = job.inst;
    let slopes = job.profile.slopes();
    let mut engine = Engine::new(inst);
    let mut base = vec![job.l];
    base.extend(job.nearby.iter().copied());
    let exp = expanded_from_base(&mut engine, job.l, base);
    let mut rep = LandmarkReport {
        landmark: job.l,
        level: *job.levels.last().unwrap_or(&1),
        nearby: job.nearby.len() + 1,
        faraway: job.faraway.len(),
        expanded: exp.members.len(),
        ..Default::default()
    };

    let mut summaries: BTreeMap<NodeId, PwlFunction> = BTreeMap::new();
    let mut flagged = BTreeMap::new();
    if job.use_bis && !job.nearby.is_empty() {
        let mut mask = vec![false; inst.n()];
        for &v in &exp.members {
            mask[v as usize] = true;
        }
        let b = bis_build(inst, job.l, &job.nearby, job.eps, slopes, DEFAULT_DEPTH_CAP, Some(&mask))?;
        rep.bis_calls = b.tdd_calls;
        rep.bis_max_depth = b.max_depth;
        rep.flagged = b.flagged.len();
        flagged = b.flagged;
        summaries.extend(b.summaries);
    }
    let t: TrapBuild =
        build_summaries(inst, job.l, &job.faraway, &job.freeflow, job.eps, slopes, default_cell_cap(inst.period()))?;
    rep.trap_calls = t.tdd_calls;
    rep.trap_cells = t.cells;
    rep.tau_star = t.tau_star;
    summaries.extend(t.summaries);
    rep.breakpoints = summaries.values().map(|f| f.len()).sum();

    rep.spot_checks = spot_check(inst, job.l, &summaries, &flagged, job.eps, job.seed)?;
    let entry = LandmarkEntry {
        vertex: job.l,
        levels: job.levels,
        coverage: job.coverage,
        nearby_cap: exp.members.len(),
        summaries,
    };
    Ok((entry, rep))
}

/// Sandwich check at 8 random times on ~1% of a landmark's summaries.
fn spot_check(
    inst: &TdInstance,
    l: NodeId,
    summaries: &BTreeMap<NodeId, PwlFunction>,
    flagged: &BTreeMap<NodeId, f64>,
    eps: f64,
    seed: u64,
) -> Result<usize> {
    if summaries.is_empty() {
        return Ok(0);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (l as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let dests: Vec<NodeId> = summaries.keys().copied().collect();
    let want = dests.len().div_ceil(100);
    let picked: Vec<NodeId> = (0..want).map(|_| dests[rng.gen_range(0..dests.len())]).collect();
    let mut engine = Engine::new(inst);
    let mut checks = 0;
    for _ in 0..8 {
        let t = rng.gen_range(0.0..inst.period());
        let exact = engine.labels(l, Weights::TimeDependent(t), None);
        for &d in &picked {
            let e = exact[d as usize];
            let v = summaries[&d].eval(t);
            let tol = 1e-9 * e.max(1.0);
            let eps_d = flagged.get(&d).copied().unwrap_or(eps).max(eps);
            if v < e - tol || v > (1.0 + eps_d) * e + tol {
                return Err(Error::Invariant(format!(
                    "summary {l}->{d} at t={t}: value {v} outside [{e}, {}]",
                    (1.0 + eps_d) * e
                )));
            }
            checks += 1;
        }
    }
    Ok(checks)
}

fn check_inputs(inst: &TdInstance, params: &TuningParams) -> Result<()> {
    params.validate()?;
    if inst.n() == 0 {
        return Err(Error::Invalid("empty instance".into()));
    }
    Ok(())
}

fn assemble(
    mode: Mode,
    inst: &TdInstance,
    params: &TuningParams,
    profile: &MetricProfile,
    seed: u64,
    levels: Vec<LevelInfo>,
    built: Vec<(LandmarkEntry, LandmarkReport)>,
    warnings: Vec<String>,
) -> (OracleStore, BuildReport) {
    let (entries, per): (Vec<_>, Vec<_>) = built.into_iter().unzip();
    let store = OracleStore::new(mode, inst.n(), seed, params.clone(), profile.clone(), levels, entries);
    let mut warnings = warnings;
    let report_tmp = BuildReport::from_parts(mode, &store, per, Vec::new());
    for p in &report_tmp.per_landmark {
        if p.flagged > 0 {
            warnings.push(format!("landmark {}: {} destinations hit the bisection depth cap", p.landmark, p.flagged));
        }
    }
    let report = BuildReport { warnings, ..report_tmp };
    (store, report)
}

/// Split of V∖{ℓ} at the nearby radius: ties go to nearby, unreachable to neither.
fn split(freeflow: &[f64], l: NodeId, radius: f64) -> (Vec<NodeId>, Vec<NodeId>) {
    let mut order: Vec<NodeId> = (0..freeflow.len() as NodeId).filter(|&v| v != l && freeflow[v as usize].is_finite()).collect();
    order.sort_by(|&a, &b| freeflow[a as usize].total_cmp(&freeflow[b as usize]).then(a.cmp(&b)));
    let cut = order.partition_point(|&v| freeflow[v as usize] <= radius);
    let faraway = order.split_off(cut);
    (order, faraway)
}

fn flat_like(
    mode: Mode,
    inst: &TdInstance,
    params: &TuningParams,
    profile: &MetricProfile,
    seed: u64,
    landmarks: &[NodeId],
    levels: Vec<u32>,
) -> Result<Vec<(LandmarkEntry, LandmarkReport)>> {
    let radius = params.nearby_radius(inst.period());
    landmarks
        .par_iter()
        .map(|&l| {
            let freeflow = Engine::new(inst).labels(l, Weights::Static(Metric::FreeFlow), None);
            let (nearby, faraway) = split(&freeflow, l, radius);
            let (coverage, use_bis) = match mode {
                Mode::TrapOnly => (Coverage::FarawayOnly { radius }, false),
                _ => (Coverage::All, true),
            };
            build_landmark(LandmarkJob {
                inst,
                l,
                levels: levels.clone(),
                eps: params.eps,
                profile,
                nearby,
                faraway,
                freeflow,
                coverage,
                use_bis,
                seed,
            })
        })
        .collect()
}

/// TRAPONLY: TRAP summaries for faraway destinations (D̲ > R̲ = T^θ) only.
pub fn preprocess_traponly(
    inst: &TdInstance,
    params: &TuningParams,
    profile: &MetricProfile,
    seed: u64,
) -> Result<(OracleStore, BuildReport)> {
    check_inputs(inst, params)?;
    let landmarks = sample_landmarks(inst.n(), params.rho(inst.n()), seed, 0)?;
    let built = flat_like(Mode::TrapOnly, inst, params, profile, seed, &landmarks, vec![1])?;
    Ok(assemble(Mode::TrapOnly, inst, params, profile, seed, Vec::new(), built, Vec::new()))
}

/// FLAT: BIS for nearby destinations on the expanded subgraph, TRAP for the rest.
pub fn preprocess_flat(
    inst: &TdInstance,
    params: &TuningParams,
    profile: &MetricProfile,
    seed: u64,
) -> Result<(OracleStore, BuildReport)> {
    check_inputs(inst, params)?;
    let landmarks = sample_landmarks(inst.n(), params.rho(inst.n()), seed, 0)?;
    let built = flat_like(Mode::Flat, inst, params, profile, seed, &landmarks, vec![1])?;
    Ok(assemble(Mode::Flat, inst, params, profile, seed, Vec::new(), built, Vec::new()))
}

/// The FLAT construction for an explicit landmark list, used as HORN's ultimate level.
pub(crate) fn flat_entries(
    inst: &TdInstance,
    params: &TuningParams,
    profile: &MetricProfile,
    seed: u64,
    landmarks: &[NodeId],
    level: u32,
) -> Result<Vec<(LandmarkEntry, LandmarkReport)>> {
    flat_like(Mode::Flat, inst, params, profile, seed, landmarks, vec![level])
}

pub(crate) fn assemble_store(
    mode: Mode,
    inst: &TdInstance,
    params: &TuningParams,
    profile: &MetricProfile,
    seed: u64,
    levels: Vec<LevelInfo>,
    built: Vec<(LandmarkEntry, LandmarkReport)>,
    warnings: Vec<String>,
) -> (OracleStore, BuildReport) {
    assemble(mode, inst, params, profile, seed, levels, built, warnings)
}
