//! Continuous, periodic, piecewise-linear functions.
//!
//! A function is stored as a sorted list of breakpoints in `[0, T)`. The segment
//! between the last breakpoint and the first breakpoint shifted by one period
//! (the wrap segment) is implicit. A single breakpoint denotes a constant.

use std::fmt;

use thiserror::Error;

/// Relative tolerance used for equality checks on times and values.
pub const REL_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PwlError {
    #[error("function needs at least one breakpoint")]
    Empty,
    #[error("period must be positive and finite, got {0}")]
    BadPeriod(f64),
    #[error("breakpoint {index} has time {t} outside [0, {period})")]
    TimeOutOfRange { index: usize, t: f64, period: f64 },
    #[error("breakpoint times must be strictly increasing (index {index})")]
    NotIncreasing { index: usize },
    #[error("breakpoint {index} has non-positive or non-finite value {value}")]
    BadValue { index: usize, value: f64 },
    #[error("period mismatch: {0} vs {1}")]
    PeriodMismatch(f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Breakpoint {
    pub t: f64,
    pub value: f64,
}

impl Breakpoint {
    pub fn new(t: f64, value: f64) -> Self {
        Breakpoint { t, value }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PwlFunction {
    points: Vec<Breakpoint>,
    period: f64,
    max_value: f64,
    min_value: f64,
}

impl PwlFunction {
    pub fn new(points: Vec<Breakpoint>, period: f64) -> Result<Self, PwlError> {
        if !(period.is_finite() && period > 0.0) {
            return Err(PwlError::BadPeriod(period));
        }
        if points.is_empty() {
            return Err(PwlError::Empty);
        }
        let mut max_value = f64::NEG_INFINITY;
        let mut min_value = f64::INFINITY;
        for (index, p) in points.iter().enumerate() {
            if !(p.t >= 0.0 && p.t < period) {
                return Err(PwlError::TimeOutOfRange { index, t: p.t, period });
            }
            if index > 0 && p.t <= points[index - 1].t {
                return Err(PwlError::NotIncreasing { index });
            }
            if !(p.value.is_finite() && p.value > 0.0) {
                return Err(PwlError::BadValue { index, value: p.value });
            }
            max_value = max_value.max(p.value);
            min_value = min_value.min(p.value);
        }
        Ok(PwlFunction { points, period, max_value, min_value })
    }

    pub fn constant(value: f64, period: f64) -> Result<Self, PwlError> {
        PwlFunction::new(vec![Breakpoint::new(0.0, value)], period)
    }

    pub fn breakpoints(&self) -> &[Breakpoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    /// Largest value over the period (M_a for arc costs).
    pub fn max_value(&self) -> f64 {
        self.max_value
    }

    /// Smallest value over the period; extremes of a pwl function sit on breakpoints.
    pub fn min_value(&self) -> f64 {
        self.min_value
    }

    pub fn is_constant(&self) -> bool {
        self.points.len() == 1
    }

    /// Linear interpolation at `t mod T`.
    pub fn eval(&self, t: f64) -> f64 {
        let pts = &self.points;
        if pts.len() == 1 {
            return pts[0].value;
        }
        let x = reduce(t, self.period);
        let i = pts.partition_point(|p| p.t <= x);
        let (a, b) = if i == 0 {
            // before the first breakpoint: wrap segment, shifted one period back
            let last = pts[pts.len() - 1];
            (Breakpoint::new(last.t - self.period, last.value), pts[0])
        } else if i == pts.len() {
            let first = pts[0];
            (pts[i - 1], Breakpoint::new(first.t + self.period, first.value))
        } else {
            (pts[i - 1], pts[i])
        };
        interpolate(a, b, x)
    }

    /// `t + f(t)`.
    pub fn arrival(&self, t: f64) -> f64 {
        t + self.eval(t)
    }

    /// Slopes of every linear piece in cyclic order, starting with the piece
    /// that begins at the first breakpoint and ending with the wrap segment.
    pub fn slopes(&self) -> Vec<f64> {
        let pts = &self.points;
        if pts.len() == 1 {
            return vec![0.0];
        }
        let k = pts.len();
        (0..k)
            .map(|i| {
                let a = pts[i];
                let b = if i + 1 < k {
                    pts[i + 1]
                } else {
                    Breakpoint::new(pts[0].t + self.period, pts[0].value)
                };
                (b.value - a.value) / (b.t - a.t)
            })
            .collect()
    }

    /// Minimum and maximum piece slope, wrap segment included.
    pub fn slope_range(&self) -> (f64, f64) {
        self.slopes()
            .into_iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s), hi.max(s)))
    }

    /// FIFO holds iff every piece of `t + f(t)` is nondecreasing.
    pub fn is_fifo(&self) -> bool {
        self.slope_range().0 >= -1.0
    }

    /// Number of breakpoints (wrap junction included) where the slope increases.
    pub fn count_concavity_spoiling(&self) -> usize {
        let slopes = self.slopes();
        let k = slopes.len();
        if k == 1 {
            return 0;
        }
        (0..k)
            .filter(|&i| {
                let incoming = slopes[(i + k - 1) % k];
                let outgoing = slopes[i];
                let scale = incoming.abs().max(outgoing.abs()).max(1e-300);
                outgoing - incoming > REL_TOL * scale
            })
            .count()
    }

    /// Pointwise minimum of two functions with the same period.
    ///
    /// Output breakpoints are the union of input breakpoint times plus every
    /// strict crossing point.
    pub fn min_envelope(&self, other: &PwlFunction) -> Result<PwlFunction, PwlError> {
        if !approx_eq(self.period, other.period) {
            return Err(PwlError::PeriodMismatch(self.period, other.period));
        }
        let period = self.period;
        let mut times: Vec<f64> = self
            .points
            .iter()
            .chain(other.points.iter())
            .map(|p| p.t)
            .collect();
        times.sort_by(f64::total_cmp);
        let eps = REL_TOL * period;
        times.dedup_by(|b, a| (*b - *a).abs() <= eps);

        let mut out: Vec<Breakpoint> = Vec::with_capacity(times.len() * 2);
        let k = times.len();
        for i in 0..k {
            let t0 = times[i];
            let t1 = if i + 1 < k { times[i + 1] } else { times[0] + period };
            let f0 = self.eval(t0);
            let g0 = other.eval(t0);
            out.push(Breakpoint::new(t0, f0.min(g0)));
            // both functions are linear on (t0, t1)
            let f1 = if i + 1 < k { self.eval(t1) } else { self.eval(times[0]) };
            let g1 = if i + 1 < k { other.eval(t1) } else { other.eval(times[0]) };
            let d0 = f0 - g0;
            let d1 = f1 - g1;
            let tol = REL_TOL * f0.abs().max(g0.abs()).max(f1.abs()).max(g1.abs());
            if (d0 > tol && d1 < -tol) || (d0 < -tol && d1 > tol) {
                let tc = t0 + (t1 - t0) * d0 / (d0 - d1);
                if tc > t0 + eps && tc < t1 - eps {
                    let tc_red = if tc >= period { tc - period } else { tc };
                    let v = self.eval(tc_red).min(other.eval(tc_red));
                    out.push(Breakpoint::new(tc_red, v));
                }
            }
        }
        out.sort_by(|a, b| a.t.total_cmp(&b.t));
        out.dedup_by(|b, a| (b.t - a.t).abs() <= eps);
        PwlFunction::new(out, period)
    }

    /// Concatenate `copies` periods into one function of period `copies * T`.
    pub fn tile(&self, copies: usize) -> PwlFunction {
        assert!(copies >= 1);
        if self.points.len() == 1 || copies == 1 {
            let mut f = self.clone();
            f.period = self.period * copies as f64;
            return f;
        }
        let mut pts = Vec::with_capacity(self.points.len() * copies);
        for c in 0..copies {
            let off = self.period * c as f64;
            pts.extend(self.points.iter().map(|p| Breakpoint::new(p.t + off, p.value)));
        }
        PwlFunction {
            points: pts,
            period: self.period * copies as f64,
            max_value: self.max_value,
            min_value: self.min_value,
        }
    }

    /// Uniform rescaling of both the time axis and the values: `g(s t) = s f(t)`.
    pub fn scaled(&self, factor: f64) -> Result<PwlFunction, PwlError> {
        let pts = self
            .points
            .iter()
            .map(|p| Breakpoint::new(p.t * factor, p.value * factor))
            .collect();
        PwlFunction::new(pts, self.period * factor)
    }

    /// Drop breakpoints that lie on the line through their neighbours.
    pub fn simplified(&self) -> PwlFunction {
        let k = self.points.len();
        if k <= 2 {
            return self.clone();
        }
        let slopes = self.slopes();
        let keep: Vec<Breakpoint> = (0..k)
            .filter(|&i| {
                let a = slopes[(i + k - 1) % k];
                let b = slopes[i];
                let scale = a.abs().max(b.abs()).max(1.0);
                (a - b).abs() > REL_TOL * scale
            })
            .map(|i| self.points[i])
            .collect();
        if keep.is_empty() {
            // all collinear on a closed curve means constant
            return PwlFunction {
                points: vec![self.points[0]],
                period: self.period,
                max_value: self.max_value,
                min_value: self.min_value,
            };
        }
        PwlFunction { points: keep, period: self.period, max_value: self.max_value, min_value: self.min_value }
    }
}

impl fmt::Display for PwlFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "pwl[T={}](", self.period)?;
        for (i, p) in self.points.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "({}, {})", p.t, p.value)?;
        }
        write!(f, ")")
    }
}

/// Fold `arrival` left to right over the arcs of a path.
pub fn compose_arrival<'a, I>(fs: I, t: f64) -> f64
where
    I: IntoIterator<Item = &'a PwlFunction>,
{
    fs.into_iter().fold(t, |acc, f| f.arrival(acc))
}

fn reduce(t: f64, period: f64) -> f64 {
    let x = t.rem_euclid(period);
    // rem_euclid may round up to exactly `period`
    if x >= period {
        0.0
    } else {
        x
    }
}

fn interpolate(a: Breakpoint, b: Breakpoint, x: f64) -> f64 {
    let w = (x - a.t) / (b.t - a.t);
    a.value + w * (b.value - a.value)
}

pub fn approx_eq(a: f64, b: f64) -> bool {
    (a - b).abs() <= REL_TOL * a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn f(points: &[(f64, f64)], period: f64) -> PwlFunction {
        PwlFunction::new(points.iter().map(|&(t, v)| Breakpoint::new(t, v)).collect(), period).unwrap()
    }

    #[test]
    fn eval_examples() {
        let g = f(&[(0.0, 2.0), (5.0, 4.0)], 10.0);
        assert_eq!(g.eval(0.0), 2.0);
        assert!((g.eval(12.5) - 3.0).abs() < 1e-12);
        assert!((g.eval(7.5) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn eval_wraps_when_first_breakpoint_is_late() {
        let g = f(&[(2.0, 2.0), (6.0, 6.0)], 10.0);
        // wrap from (6,6) to (12,2): at t=0 (i.e. 10) value is 6 - 4*4/6
        assert!((g.eval(0.0) - (6.0 - 16.0 / 6.0)).abs() < 1e-12);
        assert!((g.eval(-10.0) - g.eval(0.0)).abs() < 1e-12);
    }

    #[test]
    fn arrival_examples() {
        let c = PwlFunction::constant(2.0, 10.0).unwrap();
        assert_eq!(c.arrival(3.0), 5.0);
        let g = f(&[(0.0, 2.0), (5.0, 4.0)], 10.0);
        assert!((g.arrival(7.5) - 10.5).abs() < 1e-12);
    }

    #[test]
    fn compose_examples() {
        let two = PwlFunction::constant(2.0, 10.0).unwrap();
        let three = PwlFunction::constant(3.0, 10.0).unwrap();
        assert_eq!(compose_arrival([&two, &three], 0.0), 5.0);
        assert_eq!(compose_arrival(std::iter::empty(), 7.0), 7.0);

        let a = f(&[(0.0, 1.0), (5.0, 3.0)], 10.0);
        let got = compose_arrival([&a, &two], 4.0);
        // stepwise simulation of the two arcs
        let mut t: f64 = 4.0;
        t += 1.0 + (3.0 - 1.0) * (4.0 / 5.0);
        assert!((t - 6.6).abs() < 1e-12);
        t += 2.0;
        assert!((got - t).abs() < 1e-12);
        assert!((got - 8.6).abs() < 1e-12);
    }

    #[test]
    fn min_envelope_examples() {
        let g = f(&[(0.0, 2.0), (5.0, 4.0)], 10.0);
        assert_eq!(g.min_envelope(&g).unwrap(), g);

        let five = PwlFunction::constant(5.0, 10.0).unwrap();
        let three = PwlFunction::constant(3.0, 10.0).unwrap();
        let m = five.min_envelope(&three).unwrap();
        assert_eq!(m.breakpoints(), &[Breakpoint::new(0.0, 3.0)]);

        // 2 + t on [0,10) needs a breakpoint just before the period to be a line;
        // use (0,2) and (9.999, 11.999) with a steep wrap back to 2.
        let line = f(&[(0.0, 2.0), (9.0, 11.0)], 10.0);
        let six = PwlFunction::constant(6.0, 10.0).unwrap();
        let m = line.min_envelope(&six).unwrap();
        let hit = m.breakpoints().iter().find(|p| (p.t - 4.0).abs() < 1e-9).expect("crossing at t=4");
        assert!((hit.value - 6.0).abs() < 1e-9);
    }

    #[test]
    fn min_envelope_rejects_period_mismatch() {
        let a = PwlFunction::constant(1.0, 10.0).unwrap();
        let b = PwlFunction::constant(1.0, 12.0).unwrap();
        assert!(matches!(a.min_envelope(&b), Err(PwlError::PeriodMismatch(..))));
    }

    #[test]
    fn slope_range_examples() {
        assert_eq!(PwlFunction::constant(3.0, 10.0).unwrap().slope_range(), (0.0, 0.0));
        let (lo, hi) = f(&[(0.0, 2.0), (5.0, 4.0)], 10.0).slope_range();
        assert!((lo + 0.4).abs() < 1e-12 && (hi - 0.4).abs() < 1e-12);
    }

    #[test]
    fn concavity_spoiling_examples() {
        assert_eq!(PwlFunction::constant(3.0, 10.0).unwrap().count_concavity_spoiling(), 0);
        assert_eq!(f(&[(0.0, 1.0), (5.0, 6.0)], 10.0).count_concavity_spoiling(), 1);
        assert_eq!(f(&[(0.0, 6.0), (5.0, 1.0)], 10.0).count_concavity_spoiling(), 1);
        // three-piece function with two upward kinks
        let g = f(&[(0.0, 5.0), (2.0, 1.0), (4.0, 2.0), (6.0, 1.0)], 10.0);
        let slopes = g.slopes();
        let k = slopes.len();
        let brute = (0..k).filter(|&i| slopes[i] > slopes[(i + k - 1) % k]).count();
        assert_eq!(g.count_concavity_spoiling(), brute);
    }

    #[test]
    fn construction_errors() {
        assert_eq!(PwlFunction::new(vec![], 1.0), Err(PwlError::Empty));
        assert!(matches!(PwlFunction::constant(1.0, 0.0), Err(PwlError::BadPeriod(_))));
        assert!(matches!(
            PwlFunction::new(vec![Breakpoint::new(1.0, 1.0), Breakpoint::new(1.0, 2.0)], 5.0),
            Err(PwlError::NotIncreasing { index: 1 })
        ));
        assert!(matches!(
            PwlFunction::new(vec![Breakpoint::new(5.0, 1.0)], 5.0),
            Err(PwlError::TimeOutOfRange { .. })
        ));
        assert!(matches!(
            PwlFunction::new(vec![Breakpoint::new(0.0, 0.0)], 5.0),
            Err(PwlError::BadValue { .. })
        ));
    }

    #[test]
    fn tile_and_scale() {
        let g = f(&[(0.0, 2.0), (5.0, 4.0)], 10.0);
        let t3 = g.tile(3);
        assert_eq!(t3.period(), 30.0);
        for i in 0..100 {
            let x = i as f64 * 0.37;
            assert!((t3.eval(x) - g.eval(x)).abs() < 1e-12);
        }
        let s = g.scaled(2.0).unwrap();
        assert!((s.eval(15.0) - 2.0 * g.eval(7.5)).abs() < 1e-12);
    }

    #[test]
    fn simplify_merges_collinear() {
        let g = f(&[(0.0, 2.0), (2.5, 3.0), (5.0, 4.0)], 10.0);
        let s = g.simplified();
        assert_eq!(s.len(), 2);
        for i in 0..50 {
            let x = i as f64 * 0.2;
            assert!((s.eval(x) - g.eval(x)).abs() < 1e-12);
        }
    }

    fn arb_fifo() -> impl Strategy<Value = PwlFunction> {
        (1usize..8, any::<u64>()).prop_map(|(k, seed)| {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let period = 10.0;
            let mut ts: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..period)).collect();
            ts.sort_by(f64::total_cmp);
            ts.dedup_by(|b, a| (*b - *a) < 1e-3);
            ts[0] = 0.0;
            // values chosen so every slope stays above -1
            let mut pts = vec![Breakpoint::new(0.0, rng.gen_range(1.0..5.0))];
            for w in ts.windows(2) {
                let prev = pts.last().unwrap().value;
                let dt = w[1] - w[0];
                let v = (prev + rng.gen_range(-0.9..2.0) * dt).max(0.5);
                pts.push(Breakpoint::new(w[1], v));
            }
            let first = pts[0].value;
            let last = *pts.last().unwrap();
            let wrap_dt = period - last.t;
            if first - last.value < -0.9 * wrap_dt {
                // pull the start up so the wrap segment stays FIFO
                pts[0].value = last.value - 0.9 * wrap_dt;
                if pts.len() > 1 && pts[0].value < pts[1].value - 2.0 * (pts[1].t - pts[0].t) {
                    pts[0].value = pts[0].value.max(0.5);
                }
            }
            if pts[0].value <= 0.0 {
                pts[0].value = 0.5;
            }
            PwlFunction::new(pts, period).unwrap()
        })
        .prop_filter("fifo", |f| f.is_fifo())
    }

    proptest! {
        #[test]
        fn eval_is_periodic(g in arb_fifo(), t in 0.0f64..100.0) {
            let a = g.eval(t);
            let b = g.eval(t + g.period());
            prop_assert!((a - b).abs() <= 1e-9 * g.max_value());
        }

        #[test]
        fn arrival_monotone(g in arb_fifo(), t1 in 0.0f64..50.0, dt in 0.0f64..20.0) {
            prop_assert!(g.arrival(t1) <= g.arrival(t1 + dt) + 1e-9);
        }

        #[test]
        fn composition_monotone(g in arb_fifo(), h in arb_fifo(), t1 in 0.0f64..50.0, dt in 0.0f64..20.0) {
            prop_assert!(compose_arrival([&g, &h], t1) <= compose_arrival([&g, &h], t1 + dt) + 1e-9);
        }

        #[test]
        fn min_envelope_is_pointwise_min(g in arb_fifo(), h in arb_fifo(), ts in proptest::collection::vec(0.0f64..10.0, 64)) {
            let m = g.min_envelope(&h).unwrap();
            for t in ts {
                let (a, b, v) = (g.eval(t), h.eval(t), m.eval(t));
                let tol = 1e-9 * a.max(b);
                prop_assert!(v <= a + tol && v <= b + tol);
                prop_assert!((v - a).abs() <= tol || (v - b).abs() <= tol);
            }
        }

        #[test]
        fn fifo_slopes_bounded(g in arb_fifo()) {
            prop_assert!(g.slope_range().0 >= -1.0);
        }
    }
}
