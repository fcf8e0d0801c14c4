//! Brownian paths on dyadic grids, their delayed piecewise-linear
//! interpolations, and Cameron-Martin control paths on [0, 1].
//!
//! The interpolation of level n is *delayed*: on the interval
//! [k/2^n, (k+1)/2^n) it runs from W((k-1)/2^n) toward W(k/2^n), so its
//! slope on that interval depends only on values of W up to time k/2^n
//! (it is adapted), and it is identically 0 on [0, 1/2^n). In particular
//! the value at a coarse grid point k/2^n (k >= 1) is exactly the stored
//! sample W((k-1)/2^n): a selection, not arithmetic.

use std::fmt::Write as _;
use std::sync::Arc;

use thiserror::Error;

use crate::rng::CounterRng;

/// Grids have 2^level steps; 30 keeps index arithmetic in range.
pub const MAX_LEVEL: u32 = 30;

#[derive(Debug, Error)]
pub enum PathError {
    #[error("dimension must be at least 1")]
    InvalidDim,
    #[error("level must be in 1..={MAX_LEVEL}, got {0}")]
    InvalidLevel(u32),
    #[error("interpolation level {n} exceeds path level {level}")]
    LevelTooFine { n: u32, level: u32 },
    #[error("time {0} outside [0, 1]")]
    TimeOutOfRange(f64),
    #[error("invalid breakpoints: {0}")]
    InvalidBreakpoints(String),
    #[error("expected {expected} values, got {got}")]
    BadLength { expected: usize, got: usize },
}

/// Brownian sample on the uniform dyadic grid {i/2^level}.
///
/// Increment i is W((i+1)/2^L) - W(i/2^L) ~ N(0, 2^-L I_d); grid values are
/// the running prefix sums, stored so that later evaluations are selections.
#[derive(Clone, Debug)]
pub struct DyadicWienerPath {
    dim: usize,
    level: u32,
    seed: u64,
    /// 2^level rows of `dim` entries.
    increments: Vec<f64>,
    /// 2^level + 1 rows of `dim` entries; row 0 is the origin.
    values: Vec<f64>,
}

impl DyadicWienerPath {
    /// Draws the path for `(dim, level, seed)`. Increment i, component c is
    /// normal draw `i*dim + c` of the counter stream keyed by `seed`.
    pub fn sample(dim: usize, level: u32, seed: u64) -> Result<Self, PathError> {
        Self::check_dims(dim, level)?;
        let steps = 1usize << level;
        let scale = 0.5f64.powi(level as i32).sqrt();
        let rng = CounterRng::new(seed);
        let mut increments = vec![0.0; steps * dim];
        for (idx, slot) in increments.iter_mut().enumerate() {
            *slot = rng.normal_at(idx as u64) * scale;
        }
        Ok(Self::assemble(dim, level, seed, increments))
    }

    /// Builds a path from explicit increments (deterministic test drivers,
    /// coarsenings). `seed` is only a label here.
    pub fn from_increments(
        dim: usize,
        level: u32,
        seed: u64,
        increments: Vec<f64>,
    ) -> Result<Self, PathError> {
        Self::check_dims(dim, level)?;
        let steps = 1usize << level;
        if increments.len() != steps * dim {
            return Err(PathError::BadLength {
                expected: steps * dim,
                got: increments.len(),
            });
        }
        Ok(Self::assemble(dim, level, seed, increments))
    }

    fn check_dims(dim: usize, level: u32) -> Result<(), PathError> {
        if dim == 0 {
            return Err(PathError::InvalidDim);
        }
        if level == 0 || level > MAX_LEVEL {
            return Err(PathError::InvalidLevel(level));
        }
        Ok(())
    }

    fn assemble(dim: usize, level: u32, seed: u64, increments: Vec<f64>) -> Self {
        let steps = 1usize << level;
        let mut values = vec![0.0; (steps + 1) * dim];
        for i in 0..steps {
            for c in 0..dim {
                values[(i + 1) * dim + c] = values[i * dim + c] + increments[i * dim + c];
            }
        }
        Self {
            dim,
            level,
            seed,
            increments,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn steps(&self) -> usize {
        1usize << self.level
    }

    /// Grid spacing 2^-level (exact).
    pub fn dt(&self) -> f64 {
        0.5f64.powi(self.level as i32)
    }

    /// W(i/2^level) for i in 0..=steps.
    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }

    /// Increment over [i/2^level, (i+1)/2^level).
    pub fn increment(&self, i: usize) -> &[f64] {
        &self.increments[i * self.dim..(i + 1) * self.dim]
    }

    /// W(k/2^n) by index selection on the fine grid; requires n <= level.
    pub fn value_at_level(&self, k: usize, n: u32) -> &[f64] {
        debug_assert!(n <= self.level);
        self.value(k << (self.level - n))
    }

    /// Restriction to a coarser grid. Shared grid values are selected from
    /// this path (bit-identical); coarse increments are their differences.
    pub fn coarsen(&self, level: u32) -> Result<Self, PathError> {
        if level == 0 || level > self.level {
            return Err(PathError::InvalidLevel(level));
        }
        let stride = 1usize << (self.level - level);
        let steps = 1usize << level;
        let mut values = vec![0.0; (steps + 1) * self.dim];
        for k in 0..=steps {
            values[k * self.dim..(k + 1) * self.dim].copy_from_slice(self.value(k * stride));
        }
        let mut increments = vec![0.0; steps * self.dim];
        for k in 0..steps {
            for c in 0..self.dim {
                increments[k * self.dim + c] =
                    values[(k + 1) * self.dim + c] - values[k * self.dim + c];
            }
        }
        Ok(Self {
            dim: self.dim,
            level,
            seed: self.seed,
            increments,
            values,
        })
    }

    /// CSV with header `t,w_1,..,w_d`, one row per grid point, LF endings.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push('t');
        for c in 1..=self.dim {
            let _ = write!(out, ",w_{c}");
        }
        out.push('\n');
        let dt = self.dt();
        for i in 0..=self.steps() {
            let _ = write!(out, "{}", i as f64 * dt);
            for c in 0..self.dim {
                let _ = write!(out, ",{}", self.value(i)[c]);
            }
            out.push('\n');
        }
        out
    }
}

/// Delayed piecewise-linear interpolation W^n of a finer Brownian path.
///
/// On [k/2^n, (k+1)/2^n) the value is
/// `W(lower) + 2^n (t - k/2^n) (W(k/2^n) - W(lower))`, lower = (k-1)/2^n v 0,
/// and the derivative is the constant `2^n (W(k/2^n) - W(lower))`.
/// Breakpoint evaluation is right-continuous; t = 1 uses the last interval.
#[derive(Clone, Debug)]
pub struct PolygonalPath {
    source: Arc<DyadicWienerPath>,
    n: u32,
    /// Fine grid indices per coarse step: 2^(level-n).
    stride: usize,
    coarse_steps: usize,
    two_n: f64,
    coarse_dt: f64,
}

impl PolygonalPath {
    pub fn new(source: Arc<DyadicWienerPath>, n: u32) -> Result<Self, PathError> {
        if n == 0 || n > MAX_LEVEL {
            return Err(PathError::InvalidLevel(n));
        }
        if n > source.level() {
            return Err(PathError::LevelTooFine {
                n,
                level: source.level(),
            });
        }
        let stride = 1usize << (source.level() - n);
        Ok(Self {
            source,
            n,
            stride,
            coarse_steps: 1usize << n,
            two_n: (1u64 << n) as f64,
            coarse_dt: 0.5f64.powi(n as i32),
        })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn source(&self) -> &Arc<DyadicWienerPath> {
        &self.source
    }

    pub fn dim(&self) -> usize {
        self.source.dim()
    }

    /// Index k of the interval [k/2^n, (k+1)/2^n) containing t; t = 1 maps
    /// to the last interval. Exact for t >= 0 because t * 2^n never rounds.
    fn interval_index(&self, t: f64) -> usize {
        ((t * self.two_n) as usize).min(self.coarse_steps - 1)
    }

    /// Selected endpoint samples (start, end) of segment k, i.e. the values
    /// of W at (k-1)/2^n v 0 and k/2^n. The segment runs start -> end.
    pub fn segment_endpoints(&self, k: usize) -> (&[f64], &[f64]) {
        let lower = k.saturating_sub(1) * self.stride;
        (self.source.value(lower), self.source.value(k * self.stride))
    }

    pub fn value_into(&self, t: f64, out: &mut [f64]) {
        debug_assert!((0.0..=1.0).contains(&t));
        let k = self.interval_index(t);
        let (lower, upper) = self.segment_endpoints(k);
        // (t - k/2^n) is exact (Sterbenz) and the 2^n scaling is exact, so
        // the only roundings below match the Cameron-Martin representation
        // of the same segment bit for bit.
        let frac = (t - k as f64 * self.coarse_dt) * self.two_n;
        for c in 0..self.dim() {
            out[c] = lower[c] + frac * (upper[c] - lower[c]);
        }
    }

    pub fn derivative_into(&self, t: f64, out: &mut [f64]) {
        debug_assert!((0.0..=1.0).contains(&t));
        let k = self.interval_index(t);
        let (lower, upper) = self.segment_endpoints(k);
        for c in 0..self.dim() {
            out[c] = self.two_n * (upper[c] - lower[c]);
        }
    }

    pub fn value(&self, t: f64) -> Result<Vec<f64>, PathError> {
        check_time(t)?;
        let mut out = vec![0.0; self.dim()];
        self.value_into(t, &mut out);
        Ok(out)
    }

    pub fn derivative(&self, t: f64) -> Result<Vec<f64>, PathError> {
        check_time(t)?;
        let mut out = vec![0.0; self.dim()];
        self.derivative_into(t, &mut out);
        Ok(out)
    }

    /// The same function as an explicit Cameron-Martin path: breakpoints
    /// k/2^n, per-interval slopes 2^n (W(k/2^n) - W((k-1)/2^n)) (zero on the
    /// first interval), and breakpoint values selected from the source so
    /// that evaluation agrees with `value_into` exactly.
    pub fn to_cameron_martin(&self) -> CameronMartinPath {
        let dim = self.dim();
        let cs = self.coarse_steps;
        let breakpoints: Vec<f64> = (0..=cs).map(|k| k as f64 * self.coarse_dt).collect();
        let mut slopes = vec![0.0; cs * dim];
        for k in 1..cs {
            let (lower, upper) = self.segment_endpoints(k);
            for c in 0..dim {
                slopes[k * dim + c] = self.two_n * (upper[c] - lower[c]);
            }
        }
        let mut values = vec![0.0; (cs + 1) * dim];
        for k in 0..=cs {
            let delayed = self.source.value(k.saturating_sub(1).min(cs - 1) * self.stride);
            values[k * dim..(k + 1) * dim].copy_from_slice(delayed);
        }
        CameronMartinPath {
            dim,
            breakpoints,
            slopes,
            values,
        }
    }
}

/// Piecewise-linear control path h with h(0) = 0 and finite energy
/// `sum_j |slope_j|^2 (t_{j+1} - t_j)`. Interval j is [t_j, t_{j+1});
/// breakpoint evaluation is right-continuous and t = 1 uses the last
/// interval.
#[derive(Clone, Debug)]
pub struct CameronMartinPath {
    dim: usize,
    /// Strictly increasing, first 0, last 1.
    breakpoints: Vec<f64>,
    /// One row of `dim` slopes per interval.
    slopes: Vec<f64>,
    /// Cumulative values at breakpoints, (J+1) rows.
    values: Vec<f64>,
}

impl CameronMartinPath {
    pub fn new(dim: usize, breakpoints: Vec<f64>, slopes: Vec<f64>) -> Result<Self, PathError> {
        if dim == 0 {
            return Err(PathError::InvalidDim);
        }
        if breakpoints.len() < 2 {
            return Err(PathError::InvalidBreakpoints(
                "need at least two breakpoints".into(),
            ));
        }
        if breakpoints[0] != 0.0 {
            return Err(PathError::InvalidBreakpoints("must start at 0".into()));
        }
        if *breakpoints.last().unwrap() != 1.0 {
            return Err(PathError::InvalidBreakpoints("must end at 1".into()));
        }
        if breakpoints.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(PathError::InvalidBreakpoints(
                "must be strictly increasing".into(),
            ));
        }
        if breakpoints.iter().any(|t| !t.is_finite()) {
            return Err(PathError::InvalidBreakpoints("must be finite".into()));
        }
        let intervals = breakpoints.len() - 1;
        if slopes.len() != intervals * dim {
            return Err(PathError::BadLength {
                expected: intervals * dim,
                got: slopes.len(),
            });
        }
        if slopes.iter().any(|s| !s.is_finite()) {
            return Err(PathError::InvalidBreakpoints("slopes must be finite".into()));
        }
        let mut values = vec![0.0; (intervals + 1) * dim];
        for j in 0..intervals {
            let dt = breakpoints[j + 1] - breakpoints[j];
            for c in 0..dim {
                values[(j + 1) * dim + c] = values[j * dim + c] + slopes[j * dim + c] * dt;
            }
        }
        Ok(Self {
            dim,
            breakpoints,
            slopes,
            values,
        })
    }

    /// h identically zero.
    pub fn zero(dim: usize) -> Self {
        Self::new(dim, vec![0.0, 1.0], vec![0.0; dim]).unwrap()
    }

    /// h(t) = slope * t.
    pub fn constant_slope(slope: &[f64]) -> Result<Self, PathError> {
        Self::new(slope.len(), vec![0.0, 1.0], slope.to_vec())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn intervals(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    fn interval_index(&self, t: f64) -> usize {
        let j = self.breakpoints.partition_point(|&bp| bp <= t);
        j.saturating_sub(1).min(self.intervals() - 1)
    }

    pub fn value_into(&self, t: f64, out: &mut [f64]) {
        debug_assert!((0.0..=1.0).contains(&t));
        let j = self.interval_index(t);
        let dt = t - self.breakpoints[j];
        for c in 0..self.dim {
            out[c] = self.values[j * self.dim + c] + self.slopes[j * self.dim + c] * dt;
        }
    }

    pub fn derivative_into(&self, t: f64, out: &mut [f64]) {
        debug_assert!((0.0..=1.0).contains(&t));
        let j = self.interval_index(t);
        out[..self.dim].copy_from_slice(&self.slopes[j * self.dim..(j + 1) * self.dim]);
    }

    /// h(t); errors outside [0, 1].
    pub fn value(&self, t: f64) -> Result<Vec<f64>, PathError> {
        check_time(t)?;
        let mut out = vec![0.0; self.dim];
        self.value_into(t, &mut out);
        Ok(out)
    }

    /// Right-continuous derivative; errors outside [0, 1].
    pub fn derivative(&self, t: f64) -> Result<Vec<f64>, PathError> {
        check_time(t)?;
        let mut out = vec![0.0; self.dim];
        self.derivative_into(t, &mut out);
        Ok(out)
    }

    /// Squared Cameron-Martin norm: sum over intervals of |slope|^2 * dt.
    pub fn energy(&self) -> f64 {
        let mut total = 0.0;
        for j in 0..self.intervals() {
            let dt = self.breakpoints[j + 1] - self.breakpoints[j];
            let mut sq = 0.0;
            for c in 0..self.dim {
                let s = self.slopes[j * self.dim + c];
                sq += s * s;
            }
            total += sq * dt;
        }
        total
    }

    pub fn is_zero(&self) -> bool {
        self.slopes.iter().all(|&s| s == 0.0)
    }

    /// Short description used in report metadata.
    pub fn describe(&self) -> String {
        if self.is_zero() {
            return "zero".to_string();
        }
        if self.intervals() == 1 {
            let row: Vec<String> = self.slopes.iter().map(|s| format!("{s}")).collect();
            return format!("constant slope [{}]", row.join(","));
        }
        format!(
            "piecewise linear ({} intervals, energy {})",
            self.intervals(),
            self.energy()
        )
    }
}

fn check_time(t: f64) -> Result<(), PathError> {
    if !(0.0..=1.0).contains(&t) {
        return Err(PathError::TimeOutOfRange(t));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arc_path(dim: usize, level: u32, seed: u64) -> Arc<DyadicWienerPath> {
        Arc::new(DyadicWienerPath::sample(dim, level, seed).unwrap())
    }

    #[test]
    fn sampling_is_deterministic_in_the_seed() {
        let a = DyadicWienerPath::sample(1, 3, 7).unwrap();
        let b = DyadicWienerPath::sample(1, 3, 7).unwrap();
        assert_eq!(a.steps(), 8);
        for i in 0..8 {
            assert_eq!(a.increment(i)[0].to_bits(), b.increment(i)[0].to_bits());
        }
        let c = DyadicWienerPath::sample(1, 3, 8).unwrap();
        assert!((0..8).any(|i| a.increment(i)[0] != c.increment(i)[0]));
    }

    #[test]
    fn path_starts_at_the_origin_and_prefix_sums_match() {
        let w = DyadicWienerPath::sample(3, 5, 11).unwrap();
        assert_eq!(w.value(0), &[0.0, 0.0, 0.0]);
        let mut acc = vec![0.0; 3];
        for i in 0..w.steps() {
            for c in 0..3 {
                acc[c] += w.increment(i)[c];
            }
            for c in 0..3 {
                assert_eq!(acc[c].to_bits(), w.value(i + 1)[c].to_bits());
            }
        }
    }

    #[test]
    fn terminal_variance_matches_brownian_scaling() {
        // W(1) ~ N(0, 1); sample variance over 10^4 seeds within 5%.
        let sweep = 10_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for seed in 0..sweep {
            let w = DyadicWienerPath::sample(1, 12, seed).unwrap();
            let v = w.value(w.steps())[0];
            sum += v;
            sumsq += v * v;
        }
        let n = sweep as f64;
        let mean = sum / n;
        let var = sumsq / n - mean * mean;
        assert!((var - 1.0).abs() < 0.05, "sample variance {var}");
    }

    #[test]
    fn rejects_bad_dimensions_and_levels() {
        assert!(matches!(
            DyadicWienerPath::sample(0, 4, 1),
            Err(PathError::InvalidDim)
        ));
        assert!(matches!(
            DyadicWienerPath::sample(1, 0, 1),
            Err(PathError::InvalidLevel(0))
        ));
        assert!(matches!(
            DyadicWienerPath::sample(1, 31, 1),
            Err(PathError::InvalidLevel(31))
        ));
        let w = arc_path(1, 4, 1);
        assert!(matches!(
            PolygonalPath::new(w, 5),
            Err(PathError::LevelTooFine { n: 5, level: 4 })
        ));
    }

    #[test]
    fn delayed_grid_identity_is_a_selection() {
        // W^n(k/2^n) == W((k-1)/2^n) to 0 ulp, k >= 1.
        let w = arc_path(2, 10, 42);
        for n in [1u32, 3, 6, 10] {
            let wn = PolygonalPath::new(w.clone(), n).unwrap();
            let mut out = vec![0.0; 2];
            for k in 1..(1usize << n) {
                let t = k as f64 * 0.5f64.powi(n as i32);
                wn.value_into(t, &mut out);
                let expect = w.value_at_level(k - 1, n);
                assert_eq!(out[0].to_bits(), expect[0].to_bits());
                assert_eq!(out[1].to_bits(), expect[1].to_bits());
            }
        }
    }

    #[test]
    fn interpolation_vanishes_on_the_first_coarse_interval() {
        let w = arc_path(1, 9, 5);
        let wn = PolygonalPath::new(w, 3).unwrap();
        let mut out = [0.0];
        for i in 0..16 {
            let t = i as f64 * (0.125 / 16.0);
            wn.value_into(t, &mut out);
            assert_eq!(out[0], 0.0);
            wn.derivative_into(t, &mut out);
            assert_eq!(out[0], 0.0);
        }
    }

    #[test]
    fn zero_increments_give_the_zero_interpolation() {
        let w = Arc::new(DyadicWienerPath::from_increments(1, 6, 0, vec![0.0; 64]).unwrap());
        let wn = PolygonalPath::new(w, 4).unwrap();
        let mut out = [0.0];
        for i in 0..=100 {
            let t = i as f64 / 100.0;
            wn.value_into(t, &mut out);
            assert_eq!(out[0], 0.0);
            wn.derivative_into(t, &mut out);
            assert_eq!(out[0], 0.0);
        }
    }

    #[test]
    fn segments_join_continuously() {
        // Segment k ends (in exact arithmetic over the stored samples) at
        // W(k/2^n), which is selected again as the start of segment k+1.
        let w = arc_path(2, 8, 17);
        let wn = PolygonalPath::new(w, 5).unwrap();
        for k in 0..31 {
            let (_, end) = wn.segment_endpoints(k);
            let (start_next, _) = wn.segment_endpoints(k + 1);
            assert_eq!(end[0].to_bits(), start_next[0].to_bits());
            assert_eq!(end[1].to_bits(), start_next[1].to_bits());
        }
        // And the evaluated jump across a breakpoint is at probe scale:
        // the left probe sits eps short of the limit, so the gap is about
        // 2^n * eps * |increment|.
        let mut lo = [0.0; 2];
        let mut hi = [0.0; 2];
        let eps = 0.5f64.powi(44);
        for k in 1..32 {
            let bp = k as f64 / 32.0;
            wn.value_into(bp - eps, &mut lo);
            wn.value_into(bp, &mut hi);
            for c in 0..2 {
                assert!((hi[c] - lo[c]).abs() < 1e-10, "jump at {bp}");
            }
        }
    }

    #[test]
    fn slope_is_adapted_to_the_past() {
        // Perturbing increments after k/2^n leaves W^n on [0, (k+1)/2^n)
        // unchanged.
        let base = DyadicWienerPath::sample(1, 8, 33).unwrap();
        let n = 4u32;
        let k = 9usize;
        let cut = (k + 1) << (8 - n);
        let mut bumped = base.increments.clone();
        for slot in bumped.iter_mut().skip(cut) {
            *slot += 7.5;
        }
        let a = PolygonalPath::new(Arc::new(base.clone()), n).unwrap();
        let b = PolygonalPath::new(
            Arc::new(DyadicWienerPath::from_increments(1, 8, 33, bumped).unwrap()),
            n,
        )
        .unwrap();
        let mut va = [0.0];
        let mut vb = [0.0];
        for i in 0..=(cut - 1) {
            let t = i as f64 * base.dt();
            a.value_into(t, &mut va);
            b.value_into(t, &mut vb);
            assert_eq!(va[0].to_bits(), vb[0].to_bits());
            a.derivative_into(t, &mut va);
            b.derivative_into(t, &mut vb);
            assert_eq!(va[0].to_bits(), vb[0].to_bits());
        }
    }

    #[test]
    fn refinement_tightens_the_sup_distance_to_the_fine_path() {
        // Median over seeds of sup |W^n - W| on the fine grid strictly
        // decreases as n grows.
        let levels = [2u32, 4, 6, 8];
        let seeds = 100u64;
        let mut medians = Vec::new();
        for &n in &levels {
            let mut sups: Vec<f64> = (0..seeds)
                .map(|seed| {
                    let w = arc_path(1, 12, 1000 + seed);
                    let wn = PolygonalPath::new(w.clone(), n).unwrap();
                    let mut out = [0.0];
                    let mut sup: f64 = 0.0;
                    for i in 0..=w.steps() {
                        let t = i as f64 * w.dt();
                        wn.value_into(t, &mut out);
                        sup = sup.max((out[0] - w.value(i)[0]).abs());
                    }
                    sup
                })
                .collect();
            sups.sort_by(|a, b| a.partial_cmp(b).unwrap());
            medians.push(sups[seeds as usize / 2]);
        }
        for pair in medians.windows(2) {
            assert!(pair[1] < pair[0], "medians {medians:?}");
        }
    }

    #[test]
    fn sup_distance_on_a_fixed_seed_decreases_for_4_6_8() {
        let w = arc_path(1, 12, 7);
        let sup_for = |n: u32| {
            let wn = PolygonalPath::new(w.clone(), n).unwrap();
            let mut out = [0.0];
            let mut sup: f64 = 0.0;
            for i in 0..=w.steps() {
                let t = i as f64 * w.dt();
                wn.value_into(t, &mut out);
                sup = sup.max((out[0] - w.value(i)[0]).abs());
            }
            sup
        };
        let (a, b, c) = (sup_for(4), sup_for(6), sup_for(8));
        assert!(a > b && b > c, "sups {a} {b} {c}");
    }

    #[test]
    fn cameron_martin_single_slope_and_telescoping() {
        let h = CameronMartinPath::constant_slope(&[2.0]).unwrap();
        for i in 0..=10 {
            let t = i as f64 / 10.0;
            assert!((h.value(t).unwrap()[0] - 2.0 * t).abs() < 1e-15);
            assert_eq!(h.derivative(t).unwrap()[0], 2.0);
        }
        let tele =
            CameronMartinPath::new(1, vec![0.0, 0.5, 1.0], vec![1.0, -1.0]).unwrap();
        assert_eq!(tele.value(1.0).unwrap()[0], 0.0);
        assert_eq!(tele.value(0.5).unwrap()[0], 0.5);
        assert_eq!(tele.energy(), 1.0);
        assert_eq!(tele.derivative(0.5).unwrap()[0], -1.0);
    }

    #[test]
    fn evaluate_rejects_times_outside_unit_interval() {
        let h = CameronMartinPath::zero(1);
        assert!(matches!(h.value(-0.1), Err(PathError::TimeOutOfRange(_))));
        assert!(matches!(h.value(1.5), Err(PathError::TimeOutOfRange(_))));
        assert!(matches!(
            h.derivative(f64::NAN),
            Err(PathError::TimeOutOfRange(_))
        ));
        let w = arc_path(1, 4, 3);
        let wn = PolygonalPath::new(w, 2).unwrap();
        assert!(matches!(wn.value(1.01), Err(PathError::TimeOutOfRange(_))));
    }

    #[test]
    fn breakpoint_validation_rejects_bad_structures() {
        assert!(CameronMartinPath::new(1, vec![0.0, 0.5], vec![1.0]).is_err());
        assert!(CameronMartinPath::new(1, vec![0.1, 1.0], vec![1.0]).is_err());
        assert!(CameronMartinPath::new(1, vec![0.0, 0.5, 0.5, 1.0], vec![1.0; 3]).is_err());
        assert!(CameronMartinPath::new(1, vec![0.0, 1.0], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn wn_as_cameron_martin_agrees_exactly() {
        let w = arc_path(2, 11, 2024);
        let wn = PolygonalPath::new(w, 6).unwrap();
        let h = wn.to_cameron_martin();
        let rng = CounterRng::new(555);
        let mut a = vec![0.0; 2];
        let mut b = vec![0.0; 2];
        for i in 0..1000u64 {
            let t = rng.uniform_at(i);
            wn.value_into(t, &mut a);
            h.value_into(t, &mut b);
            assert_eq!(a[0].to_bits(), b[0].to_bits(), "value at t={t}");
            assert_eq!(a[1].to_bits(), b[1].to_bits());
            wn.derivative_into(t, &mut a);
            h.derivative_into(t, &mut b);
            assert_eq!(a[0].to_bits(), b[0].to_bits(), "derivative at t={t}");
            assert_eq!(a[1].to_bits(), b[1].to_bits());
        }
        // t = 1 is the closed right end.
        wn.value_into(1.0, &mut a);
        h.value_into(1.0, &mut b);
        assert_eq!(a[0].to_bits(), b[0].to_bits());
    }

    #[test]
    fn wn_energy_matches_the_direct_sum() {
        let w = arc_path(1, 10, 88);
        let n = 5u32;
        let wn = PolygonalPath::new(w.clone(), n).unwrap();
        let h = wn.to_cameron_martin();
        let two_n = (1u64 << n) as f64;
        let mut direct = 0.0;
        for k in 1..(1usize << n) {
            let d = w.value_at_level(k, n)[0] - w.value_at_level(k - 1, n)[0];
            direct += two_n * d * d;
        }
        assert!(
            (h.energy() - direct).abs() <= 1e-12 * direct.max(1.0),
            "energy {} direct {}",
            h.energy(),
            direct
        );
    }

    #[test]
    fn zero_path_maps_to_the_zero_control() {
        let w = Arc::new(DyadicWienerPath::from_increments(1, 5, 0, vec![0.0; 32]).unwrap());
        let wn = PolygonalPath::new(w, 3).unwrap();
        let h = wn.to_cameron_martin();
        assert!(h.is_zero());
        assert_eq!(h.energy(), 0.0);
    }

    #[test]
    fn coarsening_shares_grid_values() {
        let w = DyadicWienerPath::sample(2, 10, 5).unwrap();
        let coarse = w.coarsen(6).unwrap();
        for k in 0..=coarse.steps() {
            let fine = w.value(k << 4);
            for c in 0..2 {
                assert_eq!(coarse.value(k)[c].to_bits(), fine[c].to_bits());
            }
        }
    }

    #[test]
    fn csv_export_has_header_and_lf_rows() {
        let w = DyadicWienerPath::sample(2, 2, 9).unwrap();
        let csv = w.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,w_1,w_2");
        assert_eq!(csv.lines().count(), 1 + 5);
        assert!(!csv.contains('\r'));
        let last = csv.lines().last().unwrap();
        assert!(last.starts_with("1,"));
    }

    proptest! {
        #[test]
        fn prop_polygonal_and_cameron_martin_agree(seed in 0u64..500, n in 1u32..7, t01 in 0.0f64..=1.0) {
            let w = arc_path(1, 8, seed);
            let wn = PolygonalPath::new(w, n).unwrap();
            let h = wn.to_cameron_martin();
            let mut a = [0.0];
            let mut b = [0.0];
            wn.value_into(t01, &mut a);
            h.value_into(t01, &mut b);
            prop_assert_eq!(a[0].to_bits(), b[0].to_bits());
        }

        #[test]
        fn prop_energy_is_nonnegative_and_matches_manual_sum(
            s1 in -10.0f64..10.0,
            s2 in -10.0f64..10.0,
            mid in 0.05f64..0.95,
        ) {
            let h = CameronMartinPath::new(1, vec![0.0, mid, 1.0], vec![s1, s2]).unwrap();
            let manual = s1 * s1 * mid + s2 * s2 * (1.0 - mid);
            prop_assert!(h.energy() >= 0.0);
            prop_assert!((h.energy() - manual).abs() <= 1e-12 * manual.abs().max(1.0));
        }
    }
}
