//! The frozen oracle store and its text serialization.

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::instance::NodeId;
use crate::pwl::{Breakpoint, PwlFunction};
use crate::tuning::{MetricProfile, TuningParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    TrapOnly,
    Flat,
    Horn,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::TrapOnly => "traponly",
            Mode::Flat => "flat",
            Mode::Horn => "horn",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "traponly" => Ok(Mode::TrapOnly),
            "flat" => Ok(Mode::Flat),
            "horn" => Ok(Mode::Horn),
            _ => Err(Error::Invalid(format!("unknown mode `{s}`"))),
        }
    }
}

/// Which destinations a landmark holds summaries for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Coverage {
    /// Every reachable destination.
    All,
    /// Destinations with free-flow distance strictly above `radius`.
    FarawayOnly { radius: f64 },
    /// The `size` closest destinations in the free-flow metric (ties by vertex id).
    Ball { size: usize },
}

impl fmt::Display for Coverage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coverage::All => write!(f, "all"),
            Coverage::FarawayOnly { radius } => write!(f, "faraway:{radius}"),
            Coverage::Ball { size } => write!(f, "ball:{size}"),
        }
    }
}

impl std::str::FromStr for Coverage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Invalid(format!("bad coverage `{s}`"));
        if s == "all" {
            return Ok(Coverage::All);
        }
        let (kind, val) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "faraway" => Ok(Coverage::FarawayOnly { radius: val.parse().map_err(|_| bad())? }),
            "ball" => Ok(Coverage::Ball { size: val.parse().map_err(|_| bad())? }),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkEntry {
    pub vertex: NodeId,
    /// Hierarchy levels this vertex was sampled into (ascending, 1-based).
    pub levels: Vec<u32>,
    pub coverage: Coverage,
    /// |B̲'[ℓ;F]|, the cap for exact suffix balls from this landmark.
    pub nearby_cap: usize,
    pub summaries: BTreeMap<NodeId, PwlFunction>,
}

impl LandmarkEntry {
    pub fn top_level(&self) -> u32 {
        *self.levels.last().unwrap_or(&1)
    }

    /// d ∈ C[ℓ]. The landmark is trivially informed about itself.
    pub fn is_informed(&self, d: NodeId) -> bool {
        d == self.vertex || self.summaries.contains_key(&d)
    }

    /// Δ̄[ℓ,d](t) if the landmark is informed about `d`.
    pub fn lookup(&self, d: NodeId, t: f64) -> Option<f64> {
        if d == self.vertex {
            return Some(0.0);
        }
        self.summaries.get(&d).map(|f| f.eval(t))
    }

    pub fn breakpoints(&self) -> usize {
        self.summaries.values().map(|f| f.len()).sum()
    }
}

/// Derived parameters of one hierarchy level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelInfo {
    pub level: u32,
    /// Targeted Dijkstra-Rank N_i.
    pub rank: f64,
    pub rho: f64,
    /// Coverage size c_i.
    pub coverage: usize,
    /// Nearby count F_i.
    pub nearby: usize,
    pub xi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleStore {
    pub mode: Mode,
    pub n: usize,
    pub eps: f64,
    pub seed: u64,
    pub params: TuningParams,
    pub profile: MetricProfile,
    pub levels: Vec<LevelInfo>,
    pub landmarks: Vec<LandmarkEntry>,
    index: HashMap<NodeId, usize>,
}

impl OracleStore {
    pub fn new(
        mode: Mode,
        n: usize,
        seed: u64,
        params: TuningParams,
        profile: MetricProfile,
        levels: Vec<LevelInfo>,
        mut landmarks: Vec<LandmarkEntry>,
    ) -> Self {
        landmarks.sort_by_key(|l| l.vertex);
        let index = landmarks.iter().enumerate().map(|(i, l)| (l.vertex, i)).collect();
        OracleStore { mode, n, eps: params.eps, seed, params, profile, levels, landmarks, index }
    }

    pub fn landmark(&self, v: NodeId) -> Option<&LandmarkEntry> {
        self.index.get(&v).map(|&i| &self.landmarks[i])
    }

    pub fn landmark_mut(&mut self, v: NodeId) -> Option<&mut LandmarkEntry> {
        self.index.get(&v).map(|&i| &mut self.landmarks[i])
    }

    pub fn is_landmark(&self, v: NodeId) -> bool {
        self.index.contains_key(&v)
    }

    pub fn is_informed(&self, l: NodeId, d: NodeId) -> bool {
        self.landmark(l).map_or(false, |e| e.is_informed(d))
    }

    pub fn total_breakpoints(&self) -> usize {
        self.landmarks.iter().map(|l| l.breakpoints()).sum()
    }

    pub fn total_summaries(&self) -> usize {
        self.landmarks.iter().map(|l| l.summaries.len()).sum()
    }

    /// Text serialization; byte-identical for identical stores.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        write!(s, "tdo {} {} {} {}", self.mode, self.n, self.eps, self.seed).unwrap();
        for (k, v) in self.params.to_kv() {
            write!(s, " {k}={v}").unwrap();
        }
        s.push('\n');
        s.push_str("profile");
        for (k, v) in self.profile.to_kv() {
            write!(s, " {k}={v}").unwrap();
        }
        s.push('\n');
        for l in &self.levels {
            writeln!(
                s,
                "level {} rank={} rho={} coverage={} nearby={} xi={}",
                l.level, l.rank, l.rho, l.coverage, l.nearby, l.xi
            )
            .unwrap();
        }
        for e in &self.landmarks {
            let levels: Vec<String> = e.levels.iter().map(|x| x.to_string()).collect();
            writeln!(
                s,
                "landmark {} levels={} coverage={} nearby_cap={}",
                e.vertex,
                levels.join(","),
                e.coverage,
                e.nearby_cap
            )
            .unwrap();
            writeln!(s, "summary {} {}", e.vertex, e.summaries.len()).unwrap();
            for (d, f) in &e.summaries {
                writeln!(s, "dest {} {}", d, f.len()).unwrap();
                for p in f.breakpoints() {
                    writeln!(s, "{:.16e} {:.16e}", p.t, p.value).unwrap();
                }
            }
        }
        s
    }

    pub fn from_text(text: &str, period: Option<f64>) -> Result<OracleStore> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).peekable();
        let perr = |ln: usize, m: &str| Error::Parse { line: ln + 1, msg: m.to_string() };
        let (ln, header) = lines.next().ok_or_else(|| perr(0, "empty store"))?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() < 5 || h[0] != "tdo" {
            return Err(perr(ln, "expected `tdo <mode> <n> <eps> <seed> ...`"));
        }
        let mode: Mode = h[1].parse()?;
        let n: usize = h[2].parse().map_err(|_| perr(ln, "bad n"))?;
        let seed: u64 = h[4].parse().map_err(|_| perr(ln, "bad seed"))?;
        let params = TuningParams::from_kv(&kv_fields(&h[5..]).map_err(|m| perr(ln, &m))?)
            .map_err(|e| perr(ln, &e.to_string()))?;

        let (ln, prof) = lines.next().ok_or_else(|| perr(ln + 1, "missing profile line"))?;
        let p: Vec<&str> = prof.split_whitespace().collect();
        if p.first() != Some(&"profile") {
            return Err(perr(ln, "expected `profile ...`"));
        }
        let profile = MetricProfile::from_kv(&kv_fields(&p[1..]).map_err(|m| perr(ln, &m))?)
            .map_err(|e| perr(ln, &e.to_string()))?;
        let period = period.unwrap_or(f64::NAN);

        let mut levels = Vec::new();
        let mut landmarks = Vec::new();
        while let Some((ln, line)) = lines.next() {
            let f: Vec<&str> = line.split_whitespace().collect();
            match f[0] {
                "level" if f.len() == 7 => {
                    let m = kv_fields(&f[2..]).map_err(|m| perr(ln, &m))?;
                    let get = |k: &str| m.get(k).cloned().ok_or_else(|| perr(ln, &format!("missing {k}")));
                    let num = |s: String| s.parse::<f64>().map_err(|_| perr(ln, "bad number"));
                    levels.push(LevelInfo {
                        level: f[1].parse().map_err(|_| perr(ln, "bad level"))?,
                        rank: num(get("rank")?)?,
                        rho: num(get("rho")?)?,
                        coverage: get("coverage")?.parse().map_err(|_| perr(ln, "bad coverage"))?,
                        nearby: get("nearby")?.parse().map_err(|_| perr(ln, "bad nearby"))?,
                        xi: num(get("xi")?)?,
                    });
                }
                "landmark" if f.len() == 5 => {
                    let vertex: NodeId = f[1].parse().map_err(|_| perr(ln, "bad landmark id"))?;
                    let m = kv_fields(&f[2..]).map_err(|m| perr(ln, &m))?;
                    let lv = m.get("levels").ok_or_else(|| perr(ln, "missing levels"))?;
                    let levels_of = lv
                        .split(',')
                        .map(|x| x.parse().map_err(|_| perr(ln, "bad levels")))
                        .collect::<Result<Vec<u32>>>()?;
                    let coverage: Coverage =
                        m.get("coverage").ok_or_else(|| perr(ln, "missing coverage"))?.parse()?;
                    let nearby_cap = m
                        .get("nearby_cap")
                        .ok_or_else(|| perr(ln, "missing nearby_cap"))?
                        .parse()
                        .map_err(|_| perr(ln, "bad nearby_cap"))?;
                    let (ln2, sline) = lines.next().ok_or_else(|| perr(ln + 1, "missing summary block"))?;
                    let sf: Vec<&str> = sline.split_whitespace().collect();
                    if sf.len() != 3 || sf[0] != "summary" || sf[1] != f[1] {
                        return Err(perr(ln2, "expected `summary <landmark> <count>`"));
                    }
                    let count: usize = sf[2].parse().map_err(|_| perr(ln2, "bad count"))?;
                    let mut summaries = BTreeMap::new();
                    for _ in 0..count {
                        let (ln3, dline) = lines.next().ok_or_else(|| perr(ln2 + 1, "missing dest"))?;
                        let df: Vec<&str> = dline.split_whitespace().collect();
                        if df.len() != 3 || df[0] != "dest" {
                            return Err(perr(ln3, "expected `dest <v> <K>`"));
                        }
                        let d: NodeId = df[1].parse().map_err(|_| perr(ln3, "bad dest"))?;
                        let k: usize = df[2].parse().map_err(|_| perr(ln3, "bad K"))?;
                        let mut pts = Vec::with_capacity(k);
                        for _ in 0..k {
                            let (ln4, bp) = lines.next().ok_or_else(|| perr(ln3 + 1, "missing breakpoint"))?;
                            let b: Vec<&str> = bp.split_whitespace().collect();
                            if b.len() != 2 {
                                return Err(perr(ln4, "expected `<t> <value>`"));
                            }
                            let t = b[0].parse().map_err(|_| perr(ln4, "bad time"))?;
                            let v = b[1].parse().map_err(|_| perr(ln4, "bad value"))?;
                            pts.push(Breakpoint::new(t, v));
                        }
                        let per = if period.is_nan() { (n as f64).powf(params.alpha) } else { period };
                        let f = PwlFunction::new(pts, per).map_err(|e| perr(ln3, &e.to_string()))?;
                        summaries.insert(d, f);
                    }
                    landmarks.push(LandmarkEntry { vertex, levels: levels_of, coverage, nearby_cap, summaries });
                }
                _ => return Err(perr(ln, "unexpected line")),
            }
        }
        let mut store = OracleStore::new(mode, n, seed, params, profile, levels, landmarks);
        store.eps = h[3].parse().map_err(|_| perr(0, "bad eps"))?;
        Ok(store)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }

    /// Load a store; `period` should be the instance period (defaults to n^α).
    pub fn load(path: impl AsRef<Path>, period: Option<f64>) -> Result<OracleStore> {
        OracleStore::from_text(&fs::read_to_string(path)?, period)
    }
}

fn kv_fields(fields: &[&str]) -> std::result::Result<BTreeMap<String, String>, String> {
    fields
        .iter()
        .map(|f| {
            f.split_once('=')
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .ok_or_else(|| format!("expected key=value, got `{f}`"))
        })
        .collect()
}
