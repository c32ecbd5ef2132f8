//! HORN: a hierarchy of landmark levels with graded coverage.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flat::{assemble_store, build_landmark, flat_entries, sample_landmarks, BuildReport, LandmarkJob};
use crate::instance::{NodeId, TdInstance};
use crate::store::{Coverage, LevelInfo, Mode, OracleStore};
use crate::tdd::{Engine, Metric, StopCondition, Weights};
use crate::tuning::{chi, xi_window, MetricProfile, TuningParams};

/// Level table for levels 1..=k+1. Level k+1 always has N = c = n.
#[allow(clippy::too_many_arguments)]
pub fn derive_levels(
    n: usize,
    gamma: f64,
    k: u32,
    delta: f64,
    r: u32,
    xi: &[f64],
    alpha: f64,
    nu: f64,
) -> Result<Vec<LevelInfo>> {
    if !(gamma > 1.0) {
        return Err(Error::Tuning(format!("gamma = {gamma} must exceed 1")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Tuning(format!("delta = {delta} must lie in (0,1)")));
    }
    if xi.len() != k as usize {
        return Err(Error::Tuning(format!("expected {k} xi values, got {}", xi.len())));
    }
    let nf = n as f64;
    let expo = delta / (r as f64 + 1.0);
    let x = chi(alpha, nu);
    let mut out = Vec::with_capacity(k as usize + 1);
    for i in 1..=k {
        let gi = gamma.powi(i as i32);
        let upper = 1.0 - 1.0 / gi;
        let xi_i = xi[i as usize - 1];
        if !(xi_i > 0.0 && xi_i < upper) {
            return Err(Error::Tuning(format!("xi_{i} = {xi_i} outside the admissible window (.., {upper})")));
        }
        let rank = nf.powf((gi - 1.0) / gi);
        let coverage = (rank * nf.powf(xi_i)).ceil().min(nf) as usize;
        out.push(LevelInfo {
            level: i,
            rank,
            rho: rank.powf(-expo),
            coverage,
            nearby: ((coverage as f64).powf(x).ceil() as usize).clamp(1, coverage.max(1)),
            xi: xi_i,
        });
    }
    out.push(LevelInfo {
        level: k + 1,
        rank: nf,
        rho: nf.powf(-expo),
        coverage: n,
        nearby: (nf.powf(x).ceil() as usize).clamp(1, n.max(1)),
        xi: 1.0,
    });
    Ok(out)
}

/// Builds the HORN store. Levels whose coverage reaches n collapse into the
/// ultimate level; the ultimate level is exactly the FLAT construction.
pub fn preprocess_horn(
    inst: &TdInstance,
    params: &TuningParams,
    profile: &MetricProfile,
    seed: u64,
) -> Result<(OracleStore, BuildReport)> {
    params.validate()?;
    let n = inst.n();
    let mut warnings = Vec::new();
    let mut levels = derive_levels(n, params.gamma, params.k, params.delta, params.r, &params.xi, params.alpha, params.nu)?;
    for l in &levels[..levels.len() - 1] {
        let (lo, hi) = xi_window(n, l.level, params.gamma, profile);
        if l.xi <= lo {
            warnings.push(format!(
                "xi_{} = {:.4} is below the admissible window ({lo:.4}, {hi:.4}) for the measured profile",
                l.level, l.xi
            ));
        }
    }
    if let Some(pos) = levels.iter().position(|l| l.coverage >= n) {
        if pos < levels.len() - 1 {
            warnings.push(format!("levels {}..{} cover all vertices and collapse into the ultimate level", pos + 1, params.k));
            levels.drain(pos..levels.len() - 1);
        }
    }
    let k = levels.len() as u32 - 1;
    let last = levels.last_mut().unwrap();
    last.level = k + 1;
    // the ultimate level uses FLAT's sampling probability and stream
    last.rho = params.rho(n);

    let mut member: BTreeMap<NodeId, Vec<u32>> = BTreeMap::new();
    for l in &levels {
        let stream = if l.level == k + 1 { 0 } else { l.level as u64 };
        for v in sample_landmarks(n, l.rho, seed, stream)? {
            member.entry(v).or_default().push(l.level);
        }
    }
    let top: Vec<NodeId> = member.iter().filter(|(_, ls)| *ls.last().unwrap() == k + 1).map(|(&v, _)| v).collect();
    let lower: Vec<(NodeId, u32)> =
        member.iter().filter(|(_, ls)| *ls.last().unwrap() <= k).map(|(&v, ls)| (v, *ls.last().unwrap())).collect();

    let mut built = flat_entries(inst, params, profile, seed, &top, k + 1)?;
    let by_level: BTreeMap<u32, &LevelInfo> = levels.iter().map(|l| (l.level, l)).collect();
    let lower_built: Vec<_> = lower
        .par_iter()
        .map(|&(l, lv)| {
            let info = by_level[&lv];
            let mut engine = Engine::new(inst);
            let freeflow = engine.labels(l, Weights::Static(Metric::FreeFlow), None);
            let ball = engine.run(l, Weights::Static(Metric::FreeFlow), &mut StopCondition::size(info.coverage), None);
            let order: Vec<NodeId> = ball.vertices().collect();
            let f = info.nearby.min(order.len());
            build_landmark(LandmarkJob {
                inst,
                l,
                levels: vec![lv],
                eps: params.eps,
                profile,
                nearby: order[1..f.max(1)].to_vec(),
                faraway: order[f.max(1)..].to_vec(),
                freeflow,
                coverage: Coverage::Ball { size: info.coverage },
                use_bis: true,
                seed,
            })
        })
        .collect::<Result<_>>()?;
    built.extend(lower_built);
    for (entry, rep) in &mut built {
        entry.levels = member[&entry.vertex].clone();
        rep.level = entry.top_level();
    }
    let p = TuningParams { k, xi: levels[..k as usize].iter().map(|l| l.xi).collect(), ..params.clone() };
    Ok(assemble_store(Mode::Horn, inst, &p, profile, seed, levels, built, warnings))
}

/// ℓ is informed about d iff d ∈ C[ℓ].
pub fn is_informed(store: &OracleStore, l: NodeId, d: NodeId) -> bool {
    store.is_informed(l, d)
}
