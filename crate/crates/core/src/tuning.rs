//! Parameter derivation and empirical metric profiling.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::instance::{NodeId, TdInstance};
use crate::query::stretch_constants;
use crate::tdd::{expanded_ball, Engine, Metric, StopCondition, Weights};
use crate::trap::Slopes;

/// Measured instance constants.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricProfile {
    /// Slope bounds used by the builders: max(certified, sampled).
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub certified_lambda_min: f64,
    pub certified_lambda_max: f64,
    pub sampled_lambda_min: f64,
    pub sampled_lambda_max: f64,
    pub zeta: f64,
    pub expansion: f64,
    pub lambda: f64,
    pub f_n: f64,
    pub g_n: f64,
    pub nu: f64,
    pub max_cost: f64,
    pub k: usize,
    pub k_max: usize,
    pub k_star: usize,
    pub diam_freeflow: f64,
    pub diam_congested: f64,
    pub sample_origins: usize,
    pub grid_points: usize,
}

impl MetricProfile {
    pub fn slopes(&self) -> Slopes {
        Slopes { min: self.lambda_min, max: self.lambda_max }
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("lambda_min", self.lambda_min.to_string());
        put("lambda_max", self.lambda_max.to_string());
        put("certified_lambda_min", self.certified_lambda_min.to_string());
        put("certified_lambda_max", self.certified_lambda_max.to_string());
        put("sampled_lambda_min", self.sampled_lambda_min.to_string());
        put("sampled_lambda_max", self.sampled_lambda_max.to_string());
        put("zeta", self.zeta.to_string());
        put("expansion", self.expansion.to_string());
        put("lambda", self.lambda.to_string());
        put("f_n", self.f_n.to_string());
        put("g_n", self.g_n.to_string());
        put("nu", self.nu.to_string());
        put("max_cost", self.max_cost.to_string());
        put("k", self.k.to_string());
        put("k_max", self.k_max.to_string());
        put("k_star", self.k_star.to_string());
        put("diam_freeflow", self.diam_freeflow.to_string());
        put("diam_congested", self.diam_congested.to_string());
        put("sample_origins", self.sample_origins.to_string());
        put("grid_points", self.grid_points.to_string());
        m
    }

    pub fn from_kv(m: &BTreeMap<String, String>) -> Result<Self> {
        Ok(MetricProfile {
            lambda_min: kv(m, "lambda_min")?,
            lambda_max: kv(m, "lambda_max")?,
            certified_lambda_min: kv(m, "certified_lambda_min")?,
            certified_lambda_max: kv(m, "certified_lambda_max")?,
            sampled_lambda_min: kv(m, "sampled_lambda_min")?,
            sampled_lambda_max: kv(m, "sampled_lambda_max")?,
            zeta: kv(m, "zeta")?,
            expansion: kv(m, "expansion")?,
            lambda: kv(m, "lambda")?,
            f_n: kv(m, "f_n")?,
            g_n: kv(m, "g_n")?,
            nu: kv(m, "nu")?,
            max_cost: kv(m, "max_cost")?,
            k: kv(m, "k")?,
            k_max: kv(m, "k_max")?,
            k_star: kv(m, "k_star")?,
            diam_freeflow: kv(m, "diam_freeflow")?,
            diam_congested: kv(m, "diam_congested")?,
            sample_origins: kv(m, "sample_origins")?,
            grid_points: kv(m, "grid_points")?,
        })
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.to_kv() {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }
}

pub(crate) fn kv<T: std::str::FromStr>(m: &BTreeMap<String, String>, key: &str) -> Result<T> {
    m.get(key)
        .ok_or_else(|| Error::Invalid(format!("missing key `{key}`")))?
        .parse()
        .map_err(|_| Error::Invalid(format!("bad value for `{key}`")))
}

/// Slope bounds implied by the arc functions alone.
///
/// Along any path the derivative of the arrival function is Π(1+s_a); with
/// ρ⁺ = max_a ln(1+s⁺_a)/D̲_a and a path of travel time at most Dmax = diam(G, D̄)
/// this gives D' ≤ exp(ρ⁺·Dmax) − 1, and symmetrically for the lower bound.
pub fn certified_slopes(inst: &TdInstance, diam_congested: f64) -> Slopes {
    let mut rho_up: f64 = 0.0;
    let mut rho_down: f64 = 0.0;
    for (i, a) in inst.arcs().iter().enumerate() {
        let (lo, hi) = a.cost.slope_range();
        let base = inst.freeflow(i as u32);
        rho_up = rho_up.max(hi.max(0.0).ln_1p() / base);
        rho_down = rho_down.max(-(lo.min(0.0)).ln_1p() / base);
    }
    Slopes { min: -(-rho_down * diam_congested).exp_m1(), max: (rho_up * diam_congested).exp_m1() }
}

/// Estimate the profile from `origins` random origins × `grid` departure times.
pub fn estimate_profile(inst: &TdInstance, origins: usize, grid: usize, seed: u64) -> Result<MetricProfile> {
    let n = inst.n();
    if n < 2 {
        return Err(Error::Invalid("profiling needs at least two vertices".into()));
    }
    let grid = grid.max(2);
    let period = inst.period();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut all: Vec<NodeId> = (0..n as NodeId).collect();
    all.shuffle(&mut rng);
    let sample: Vec<NodeId> = all.into_iter().take(origins.clamp(2, n)).collect();
    let pos: BTreeMap<NodeId, usize> = sample.iter().enumerate().map(|(i, &v)| (v, i)).collect();

    struct Run {
        up: f64,
        down: f64,
        to_sample: Vec<Vec<f64>>,
        pairs: Vec<(f64, f64)>,
    }
    let dt = period / grid as f64;
    let runs: Vec<Run> = sample
        .par_iter()
        .map(|&o| {
            let mut engine = Engine::new(inst);
            let mut labels: Vec<Vec<f64>> = Vec::with_capacity(grid);
            let mut to_sample = Vec::with_capacity(grid);
            let mut pairs = Vec::new();
            let stride = (n / 32).max(1);
            for j in 0..grid {
                let ball = engine.run(o, Weights::TimeDependent(j as f64 * dt), &mut StopCondition::default(), None);
                let mut d = vec![f64::INFINITY; n];
                for s in &ball.settled {
                    d[s.vertex as usize] = s.travel_time;
                    if s.rank > 1 && (s.vertex as usize + j) % stride == 0 {
                        pairs.push((s.travel_time, s.rank as f64));
                    }
                }
                to_sample.push(sample.iter().map(|&v| d[v as usize]).collect());
                labels.push(d);
            }
            let mut up: f64 = 0.0;
            let mut down: f64 = 0.0;
            for j in 0..grid {
                let next = &labels[(j + 1) % grid];
                for v in 0..n {
                    let (a, b) = (labels[j][v], next[v]);
                    if a.is_finite() && b.is_finite() {
                        let q = (b - a) / dt;
                        up = up.max(q);
                        down = down.max(-q);
                    }
                }
            }
            Run { up, down, to_sample, pairs }
        })
        .collect();

    let sampled_max = runs.iter().map(|r| r.up).fold(0.0, f64::max);
    let sampled_min = runs.iter().map(|r| r.down).fold(0.0, f64::max);

    let mut zeta: f64 = 1.0;
    let mut any_pair = false;
    for (i, &o) in sample.iter().enumerate() {
        for (&d, &k) in &pos {
            if d == o {
                continue;
            }
            for j in 0..grid {
                let (a, b) = (runs[i].to_sample[j][k], runs[k].to_sample[j][pos[&o]]);
                if a.is_finite() && b.is_finite() && b > 0.0 {
                    zeta = zeta.max(a / b);
                    any_pair = true;
                }
            }
        }
    }
    if !any_pair {
        return Err(Error::Invalid("no sampled pair is mutually reachable".into()));
    }

    let pairs: Vec<(f64, f64)> = runs.iter().flat_map(|r| r.pairs.iter().copied()).filter(|p| p.0 > 0.0).collect();
    let (lambda, f_n, g_n) = fit_rank_growth(&pairs);

    let mut expansion: f64 = 1.0;
    for &l in sample.iter().take(4) {
        for e in [0.25, 0.5, 0.75] {
            let f = ((n as f64).powf(e).ceil() as usize).clamp(1, n);
            let b = expanded_ball(inst, l, f);
            expansion = expansion.max(b.members.len() as f64 / b.base.len().max(1) as f64);
        }
    }

    let diam_freeflow = inst.diameter(Metric::FreeFlow);
    let diam_congested = inst.diameter(Metric::FullCongestion);
    let cert = certified_slopes(inst, diam_congested);
    let nu = if period > 1.0 && diam_freeflow > 1.0 { diam_freeflow.ln() / period.ln() } else { 1.0 };
    let (k, k_max, k_star) = inst.breakpoint_stats();
    Ok(MetricProfile {
        lambda_min: cert.min.max(sampled_min),
        lambda_max: cert.max.max(sampled_max),
        certified_lambda_min: cert.min,
        certified_lambda_max: cert.max,
        sampled_lambda_min: sampled_min,
        sampled_lambda_max: sampled_max,
        zeta,
        expansion,
        lambda,
        f_n,
        g_n,
        nu: nu.max(1e-3),
        max_cost: inst.max_cost(),
        k,
        k_max,
        k_star,
        diam_freeflow,
        diam_congested,
        sample_origins: sample.len(),
        grid_points: grid,
    })
}

/// Fit Γ ≈ f·D^λ by least squares in log-log space; f and g are the envelope
/// constants making both inequalities of the rank/travel-time correlation hold on
/// the sample.
fn fit_rank_growth(pairs: &[(f64, f64)]) -> (f64, f64, f64) {
    if pairs.len() < 2 {
        return (1.0, 1.0, 1.0);
    }
    let xs: Vec<f64> = pairs.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1.ln()).collect();
    let (slope, _) = least_squares(&xs, &ys);
    let lambda = if slope.is_finite() { slope.max(1.0) } else { 1.0 };
    let f = pairs.iter().map(|&(d, g)| g / d.powf(lambda)).fold(0.0, f64::max);
    let g = pairs.iter().map(|&(d, r)| d / r.powf(1.0 / lambda)).fold(0.0, f64::max);
    (lambda, f, g)
}

/// Ordinary least squares y = a + b x, returns (b, a).
pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let b = sxy / sxx;
    (b, my - b * mx)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TuningParams {
    pub eps: f64,
    pub alpha: f64,
    /// Landmark exponent: ρ = n^−ω.
    pub omega: f64,
    /// Radius exponent: R̲ = T^θ.
    pub theta: f64,
    pub nu: f64,
    pub delta: f64,
    pub beta: f64,
    pub r: u32,
    pub gamma: f64,
    pub k: u32,
    pub xi: Vec<f64>,
    pub chi: f64,
    pub phi: f64,
}

impl Default for TuningParams {
    fn default() -> Self {
        TuningParams {
            eps: 0.5,
            alpha: 0.5,
            omega: 0.5,
            theta: 0.5,
            nu: 1.0,
            delta: 0.66,
            beta: 0.1,
            r: 0,
            gamma: 2.0,
            k: 0,
            xi: Vec::new(),
            chi: chi(0.5, 1.0),
            phi: 1.0,
        }
    }
}

impl TuningParams {
    pub fn rho(&self, n: usize) -> f64 {
        (n as f64).powf(-self.omega)
    }

    pub fn nearby_radius(&self, period: f64) -> f64 {
        period.powf(self.theta)
    }

    pub fn to_kv(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        for (k, v) in [
            ("eps", self.eps),
            ("alpha", self.alpha),
            ("omega", self.omega),
            ("theta", self.theta),
            ("nu", self.nu),
            ("delta", self.delta),
            ("beta", self.beta),
            ("gamma", self.gamma),
            ("chi", self.chi),
            ("phi", self.phi),
        ] {
            m.insert(k.to_string(), v.to_string());
        }
        m.insert("r".into(), self.r.to_string());
        m.insert("k".into(), self.k.to_string());
        let xi: Vec<String> = self.xi.iter().map(|x| x.to_string()).collect();
        m.insert("xi".into(), if xi.is_empty() { "-".into() } else { xi.join(",") });
        m
    }

    pub fn from_kv(m: &BTreeMap<String, String>) -> Result<Self> {
        let xi_s: String = kv(m, "xi")?;
        let xi = if xi_s == "-" {
            Vec::new()
        } else {
            xi_s.split(',')
                .map(|x| x.parse().map_err(|_| Error::Invalid(format!("bad xi entry `{x}`"))))
                .collect::<Result<_>>()?
        };
        Ok(TuningParams {
            eps: kv(m, "eps")?,
            alpha: kv(m, "alpha")?,
            omega: kv(m, "omega")?,
            theta: kv(m, "theta")?,
            nu: kv(m, "nu")?,
            delta: kv(m, "delta")?,
            beta: kv(m, "beta")?,
            r: kv(m, "r")?,
            gamma: kv(m, "gamma")?,
            k: kv(m, "k")?,
            xi,
            chi: kv(m, "chi")?,
            phi: kv(m, "phi")?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, x: f64| {
            if x > 0.0 && x < 1.0 {
                Ok(())
            } else {
                Err(Error::Tuning(format!("{name} = {x} must lie in (0,1)")))
            }
        };
        unit("omega", self.omega)?;
        unit("theta", self.theta)?;
        unit("delta", self.delta)?;
        unit("beta", self.beta)?;
        unit("alpha", self.alpha)?;
        if !(self.eps > 0.0) {
            return Err(Error::Tuning(format!("eps = {} must be positive", self.eps)));
        }
        if !(self.gamma > 1.0) {
            return Err(Error::Tuning(format!("gamma = {} must exceed 1", self.gamma)));
        }
        if !(self.nu > 0.0) {
            return Err(Error::Tuning(format!("nu = {} must be positive", self.nu)));
        }
        Ok(())
    }
}

/// χ = (1+α)/(2+αν).
pub fn chi(alpha: f64, nu: f64) -> f64 {
    (1.0 + alpha) / (2.0 + alpha * nu)
}

fn floor_r(raw: f64, hint: &str) -> Result<u32> {
    let r = raw.floor() - 1.0;
    if !(r >= 0.0) {
        return Err(Error::Tuning(format!("derived recursion budget r = {r} is negative; {hint}")));
    }
    Ok(r as u32)
}

/// FLAT tuning: ω = δ/(r+1), θ = (1+α)/(2/ν+α).
pub fn tune_flat(n: usize, alpha: f64, nu: f64, eps: f64, psi: f64, delta: f64, beta: f64) -> Result<TuningParams> {
    let _ = n;
    if !(delta > alpha && delta < 1.0) {
        return Err(Error::Tuning(format!("delta = {delta} must lie in (alpha, 1) = ({alpha}, 1)")));
    }
    let b = 2.0 / nu + alpha;
    let beta_max = alpha * (1.0 + alpha) / b;
    if !(beta > 0.0 && beta <= beta_max) {
        return Err(Error::Tuning(format!("beta = {beta} must lie in (0, {beta_max}]")));
    }
    let raw = (delta / alpha) * b / ((beta / alpha) * b + (2.0 / nu - 1.0));
    let r = floor_r(raw, "use a larger delta or a smaller beta")?;
    Ok(TuningParams {
        eps,
        alpha,
        omega: delta / (r as f64 + 1.0),
        theta: (1.0 + alpha) / b,
        nu,
        delta,
        beta,
        r,
        chi: chi(alpha, nu),
        phi: crate::query::phi(eps, psi, r),
        ..Default::default()
    })
}

/// TRAPONLY tuning: ω = δ/(r+1), θ = δν/(r+1), r = ⌊δ(1+αν)/(α+β)⌋ − 1.
pub fn tune_traponly(
    n: usize,
    alpha: f64,
    nu: f64,
    eps: f64,
    psi: f64,
    delta: f64,
    beta: f64,
) -> Result<TuningParams> {
    let _ = n;
    if !(delta > alpha && delta < 1.0) {
        return Err(Error::Tuning(format!("delta = {delta} must lie in (alpha, 1) = ({alpha}, 1)")));
    }
    let beta_max = alpha * alpha * nu;
    if !(beta > 0.0 && beta <= beta_max) {
        return Err(Error::Tuning(format!("beta = {beta} must lie in (0, {beta_max}]")));
    }
    let raw = delta * (1.0 + alpha * nu) / (alpha + beta);
    let r = floor_r(raw, "use a larger delta or a smaller beta")?;
    let r1 = r as f64 + 1.0;
    Ok(TuningParams {
        eps,
        alpha,
        omega: delta / r1,
        theta: delta * nu / r1,
        nu,
        delta,
        beta,
        r,
        chi: chi(alpha, nu),
        phi: crate::query::phi(eps, psi, r),
        ..Default::default()
    })
}

/// η(k) = ⌈ln(k/(k−1)) / ln(1+ε/ψ)⌉ − 1: smallest budget with σ(η) ≤ kε.
pub fn budget_for_stretch(k: u32, eps: f64, psi: f64) -> Result<u32> {
    if k < 2 {
        return Err(Error::Tuning(format!("stretch multiple k = {k} must be at least 2")));
    }
    let kf = k as f64;
    let x = ((kf / (kf - 1.0)).ln() / (eps / psi).ln_1p()).ceil() - 1.0;
    Ok(x.max(0.0) as u32)
}

/// Admissible (lower, upper) window for ξ_i.
pub fn xi_window(n: usize, i: u32, gamma: f64, profile: &MetricProfile) -> (f64, f64) {
    let ln_n = (n as f64).ln();
    let lam = profile.lambda.max(1.0);
    let lo = ((1.0 + lam) * ln_n.ln() + lam * (1.0 + profile.zeta / (1.0 - profile.lambda_min)).ln()) / ln_n;
    (lo, 1.0 - gamma.powi(-(i as i32)))
}

/// HORN recursion budget r; uses (1 − 1/γ) in place of the printed (1 − γ).
pub fn horn_budget(alpha: f64, nu: f64, gamma: f64, delta: f64, beta: f64) -> Result<u32> {
    let raw = (delta / alpha) * ((2.0 / nu + alpha) * (1.0 - 1.0 / gamma))
        / (beta * (2.0 / (alpha * nu) + 1.0) + 2.0 / nu - 1.0);
    floor_r(raw, "use a larger delta, a smaller beta or a larger gamma")
}

/// HORN tuning; ξ_i is the midpoint of its window.
#[allow(clippy::too_many_arguments)]
pub fn tune_horn(
    n: usize,
    alpha: f64,
    nu: f64,
    gamma: f64,
    k: u32,
    delta: f64,
    beta: f64,
    eps: f64,
    profile: &MetricProfile,
) -> Result<TuningParams> {
    if !(gamma > 1.0) {
        return Err(Error::Tuning(format!("gamma = {gamma} must exceed 1")));
    }
    if !(delta > alpha && delta < 1.0) {
        return Err(Error::Tuning(format!("delta = {delta} must lie in (alpha, 1) = ({alpha}, 1)")));
    }
    if !(beta > 0.0) {
        return Err(Error::Tuning(format!("beta = {beta} must be positive")));
    }
    let r = horn_budget(alpha, nu, gamma, delta, beta)?;
    let mut bad = Vec::new();
    let mut xi = Vec::new();
    for i in 1..=k {
        let (lo, hi) = xi_window(n, i, gamma, profile);
        if lo >= hi {
            bad.push(format!("level {i}: ({lo:.4}, {hi:.4})"));
        }
        xi.push(0.5 * (lo + hi));
    }
    if !bad.is_empty() {
        return Err(Error::Tuning(format!("empty xi window for {}", bad.join("; "))));
    }
    let psi = stretch_constants(eps, profile.zeta, profile.lambda_max, r).psi;
    Ok(TuningParams {
        eps,
        alpha,
        omega: delta / (r as f64 + 1.0),
        theta: (1.0 + alpha) / (2.0 / nu + alpha),
        nu,
        delta,
        beta,
        r,
        gamma,
        k,
        xi,
        chi: chi(alpha, nu),
        phi: crate::query::phi(eps, psi, r),
    })
}
