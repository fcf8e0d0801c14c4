//! Monte Carlo harness for the three convergence-in-probability experiments
//! (smooth-approximation error, support upper bound, support lower bound)
//! and the truncation-consistency sweep. Samples are independent work items
//! keyed by index, so reports are bit-identical across reruns and across
//! worker counts.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::integrate::{
    integrate_ito_limit, integrate_mixed, integrate_sde, integrate_shifted, solve_skeleton,
    solve_skeleton_wn, sup_distance, DriverBundle, IntegrateError, Trajectory, MIN_LEVEL_GAP,
};
use crate::models::{norm, CoefficientSystem, SdeModel};
use crate::paths::{CameronMartinPath, DyadicWienerPath, PolygonalPath};
use crate::rng::stream_seed;

/// Two-sided 95% normal quantile used by the Wilson interval.
pub const Z95: f64 = 1.959963984540054;

/// Escape fraction beyond which a report refuses to render a pass/fail call.
pub const MAX_ESCAPE_FRACTION: f64 = 0.2;

pub const MIN_MC_SAMPLES: usize = 100;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("need at least {MIN_MC_SAMPLES} Monte Carlo samples, got {0}")]
    TooFewSamples(usize),
    #[error("levels must be non-empty and strictly increasing")]
    BadLevels,
    #[error("finest level {max_n} needs a white-noise grid at level {} or finer, got {level}", max_n + MIN_LEVEL_GAP)]
    LevelGap { max_n: u32, level: u32 },
    #[error("threshold must be positive and finite, got {0}")]
    BadThreshold(f64),
    #[error("radii must be non-empty, positive, and strictly increasing")]
    BadRadii,
    #[error("need at least one trial")]
    NoTrials,
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
}

/// Estimated probability that the pathwise distance crosses the threshold at
/// one polygonal level. `p_hat` is taken over the non-escaped samples; the
/// interval is the 95% Wilson score interval on the same denominator.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExceedanceEstimate {
    pub n: u32,
    pub delta: f64,
    pub samples: usize,
    pub exceed_count: usize,
    pub escaped_count: usize,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    WongZakai,
    SupportUpper,
    SupportLower,
    Truncation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub level_fine: u32,
    pub seed: u64,
    pub mc_samples: usize,
    pub control: String,
    pub x0: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub kind: ExperimentKind,
    pub model: String,
    pub estimates: Vec<ExceedanceEstimate>,
    pub verdict: Verdict,
    pub meta: ReportMeta,
}

/// One radius of the truncation sweep. `covered` counts trials whose
/// untruncated path stayed inside the ball; failures count covered trials
/// where the truncated rerun did not match bit for bit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationRow {
    pub radius: f64,
    pub trials: usize,
    pub covered: usize,
    pub equality_failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationReport {
    pub kind: ExperimentKind,
    pub model: String,
    pub level_n: u32,
    pub rows: Vec<TruncationRow>,
    pub verdict: Verdict,
    pub meta: ReportMeta,
}

/// Shared Monte Carlo knobs: sample count, fine grid level, and base seed.
#[derive(Clone, Copy, Debug)]
pub struct McSettings {
    pub samples: usize,
    pub level_fine: u32,
    pub seed: u64,
}

/// 95% Wilson score interval for `count` successes out of `valid` tries.
/// Degenerates to the vacuous [0, 1] when nothing was observed.
pub fn wilson_interval(count: usize, valid: usize) -> (f64, f64) {
    if valid == 0 {
        return (0.0, 1.0);
    }
    let m = valid as f64;
    let p = count as f64 / m;
    let z2 = Z95 * Z95;
    let center = p + z2 / (2.0 * m);
    let half = Z95 * (p * (1.0 - p) / m + z2 / (4.0 * m * m)).sqrt();
    let den = 1.0 + z2 / m;
    // The ends are exact at the boundary counts; one-sided intervals should
    // not carry rounding residue there.
    let low = if count == 0 {
        0.0
    } else {
        ((center - half) / den).max(0.0)
    };
    let high = if count == valid {
        1.0
    } else {
        ((center + half) / den).min(1.0)
    };
    (low, high)
}

#[derive(Clone, Copy, PartialEq)]
enum SampleOutcome {
    Within,
    Exceed,
    Escaped,
}

fn classify(a: &Trajectory, b: &Trajectory, delta: f64, exceed_above: bool) -> SampleOutcome {
    if !a.is_complete() || !b.is_complete() {
        return SampleOutcome::Escaped;
    }
    let dist = sup_distance(a, b).expect("coupled runs share the grid");
    let hit = if exceed_above { dist > delta } else { dist < delta };
    if hit {
        SampleOutcome::Exceed
    } else {
        SampleOutcome::Within
    }
}

/// Folds per-sample outcomes (one row per sample, one column per level) into
/// per-level estimates. Sequential, so the result does not depend on how the
/// samples were scheduled.
fn tabulate(
    levels: &[u32],
    delta: f64,
    outcomes: &[Vec<SampleOutcome>],
) -> Vec<ExceedanceEstimate> {
    let samples = outcomes.len();
    levels
        .iter()
        .enumerate()
        .map(|(li, &n)| {
            let mut exceed = 0usize;
            let mut escaped = 0usize;
            for row in outcomes {
                match row[li] {
                    SampleOutcome::Exceed => exceed += 1,
                    SampleOutcome::Escaped => escaped += 1,
                    SampleOutcome::Within => {}
                }
            }
            let valid = samples - escaped;
            let p_hat = if valid == 0 {
                0.0
            } else {
                exceed as f64 / valid as f64
            };
            let (ci_low, ci_high) = wilson_interval(exceed, valid);
            ExceedanceEstimate {
                n,
                delta,
                samples,
                exceed_count: exceed,
                escaped_count: escaped,
                p_hat,
                ci_low,
                ci_high,
            }
        })
        .collect()
}

fn max_escape_fraction(estimates: &[ExceedanceEstimate]) -> f64 {
    estimates
        .iter()
        .map(|e| e.escaped_count as f64 / e.samples as f64)
        .fold(0.0, f64::max)
}

/// Convergence call for the exceedance experiments: the estimate sequence
/// must be non-increasing up to confidence-interval overlap, and when it
/// starts at 0.1 or above it must at least halve by the last level.
fn trend_verdict(estimates: &[ExceedanceEstimate]) -> Verdict {
    if max_escape_fraction(estimates) > MAX_ESCAPE_FRACTION {
        return Verdict::Inconclusive;
    }
    for pair in estimates.windows(2) {
        let (prev, next) = (&pair[0], &pair[1]);
        if next.p_hat > prev.p_hat && next.ci_low > prev.ci_high {
            return Verdict::Fail;
        }
    }
    let first = estimates.first().expect("levels are non-empty");
    let last = estimates.last().expect("levels are non-empty");
    if first.p_hat >= 0.1 && last.p_hat >= 0.5 * first.p_hat {
        return Verdict::Fail;
    }
    Verdict::Pass
}

/// Support lower bounds only need the closeness probability to sit strictly
/// above zero at the finest level.
fn positivity_verdict(estimates: &[ExceedanceEstimate]) -> Verdict {
    if max_escape_fraction(estimates) > MAX_ESCAPE_FRACTION {
        return Verdict::Inconclusive;
    }
    let last = estimates.last().expect("levels are non-empty");
    if last.ci_low > 0.0 {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

fn check_levels(levels: &[u32], level_fine: u32) -> Result<(), ExperimentError> {
    if levels.is_empty() || levels.windows(2).any(|p| p[1] <= p[0]) {
        return Err(ExperimentError::BadLevels);
    }
    let max_n = *levels.last().expect("checked non-empty");
    if max_n + MIN_LEVEL_GAP > level_fine {
        return Err(ExperimentError::LevelGap {
            max_n,
            level: level_fine,
        });
    }
    Ok(())
}

fn check_threshold(delta: f64) -> Result<(), ExperimentError> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(ExperimentError::BadThreshold(delta));
    }
    Ok(())
}

fn check_samples(samples: usize) -> Result<(), ExperimentError> {
    if samples < MIN_MC_SAMPLES {
        return Err(ExperimentError::TooFewSamples(samples));
    }
    Ok(())
}

/// Smooth-approximation experiment: per sample the same Wiener path drives
/// the mixed equation (through its polygonal interpolation) and the limiting
/// Ito equation; the estimate is P(uniform distance > delta) per level.
pub fn wong_zakai_convergence(
    sys: &CoefficientSystem,
    model_id: &str,
    h: &CameronMartinPath,
    x0: &[f64],
    levels: &[u32],
    delta: f64,
    mc: McSettings,
) -> Result<ConvergenceReport, ExperimentError> {
    check_samples(mc.samples)?;
    check_levels(levels, mc.level_fine)?;
    check_threshold(delta)?;
    if x0.len() != sys.state_dim {
        return Err(IntegrateError::DimensionMismatch {
            expected: sys.state_dim,
            got: x0.len(),
        }
        .into());
    }
    if h.dim() != sys.noise_dim {
        return Err(IntegrateError::DimensionMismatch {
            expected: sys.noise_dim,
            got: h.dim(),
        }
        .into());
    }

    let outcomes: Vec<Vec<SampleOutcome>> = (0..mc.samples)
        .into_par_iter()
        .map(|i| {
            let w = Arc::new(
                DyadicWienerPath::sample(sys.noise_dim, mc.level_fine, stream_seed(mc.seed, i as u64))
                    .expect("validated path parameters"),
            );
            let limit_drivers = DriverBundle::white_only(w.clone()).and_control(h.clone());
            let z = integrate_ito_limit(sys, &limit_drivers, x0).expect("validated drivers");
            levels
                .iter()
                .map(|&n| {
                    let drivers = DriverBundle::with_polygonal(w.clone(), n)
                        .expect("validated levels")
                        .and_control(h.clone());
                    let yn = integrate_mixed(sys, &drivers, x0).expect("validated drivers");
                    classify(&yn, &z, delta, true)
                })
                .collect()
        })
        .collect();

    let estimates = tabulate(levels, delta, &outcomes);
    let verdict = trend_verdict(&estimates);
    Ok(ConvergenceReport {
        kind: ExperimentKind::WongZakai,
        model: model_id.to_string(),
        estimates,
        verdict,
        meta: ReportMeta {
            level_fine: mc.level_fine,
            seed: mc.seed,
            mc_samples: mc.samples,
            control: h.describe(),
            x0: x0.to_vec(),
        },
    })
}

/// Support upper-bound experiment: the Euler solution of the SDE against the
/// skeleton driven by the same path's polygonal interpolation.
pub fn support_upper(
    model: &SdeModel,
    levels: &[u32],
    delta: f64,
    mc: McSettings,
) -> Result<ConvergenceReport, ExperimentError> {
    check_samples(mc.samples)?;
    check_levels(levels, mc.level_fine)?;
    check_threshold(delta)?;

    let outcomes: Vec<Vec<SampleOutcome>> = (0..mc.samples)
        .into_par_iter()
        .map(|i| {
            let w = Arc::new(
                DyadicWienerPath::sample(
                    model.noise_dim,
                    mc.level_fine,
                    stream_seed(mc.seed, i as u64),
                )
                .expect("validated path parameters"),
            );
            let x = integrate_sde(model, &w, &model.x0).expect("validated drivers");
            levels
                .iter()
                .map(|&n| {
                    let wn = PolygonalPath::new(w.clone(), n).expect("validated levels");
                    let s = solve_skeleton_wn(model, &wn, &model.x0).expect("validated drivers");
                    classify(&x, &s, delta, true)
                })
                .collect()
        })
        .collect();

    let estimates = tabulate(levels, delta, &outcomes);
    let verdict = trend_verdict(&estimates);
    Ok(ConvergenceReport {
        kind: ExperimentKind::SupportUpper,
        model: model.name.clone(),
        estimates,
        verdict,
        meta: ReportMeta {
            level_fine: mc.level_fine,
            seed: mc.seed,
            mc_samples: mc.samples,
            control: "none".to_string(),
            x0: model.x0.clone(),
        },
    })
}

/// Support lower-bound experiment: the shifted equation against the fixed
/// control's skeleton. Counts the closeness event {distance < epsilon}; the
/// report passes when its probability is bounded away from zero at the
/// finest level.
pub fn support_lower(
    model: &SdeModel,
    h: &CameronMartinPath,
    levels: &[u32],
    epsilon: f64,
    mc: McSettings,
) -> Result<ConvergenceReport, ExperimentError> {
    check_samples(mc.samples)?;
    check_levels(levels, mc.level_fine)?;
    check_threshold(epsilon)?;
    if h.dim() != model.noise_dim {
        return Err(IntegrateError::DimensionMismatch {
            expected: model.noise_dim,
            got: h.dim(),
        }
        .into());
    }

    let skeleton = solve_skeleton(model, h, &model.x0, mc.level_fine)?;

    let outcomes: Vec<Vec<SampleOutcome>> = (0..mc.samples)
        .into_par_iter()
        .map(|i| {
            let w = Arc::new(
                DyadicWienerPath::sample(
                    model.noise_dim,
                    mc.level_fine,
                    stream_seed(mc.seed, i as u64),
                )
                .expect("validated path parameters"),
            );
            levels
                .iter()
                .map(|&n| {
                    let drivers = DriverBundle::with_polygonal(w.clone(), n)
                        .expect("validated levels")
                        .and_control(h.clone());
                    let xn = integrate_shifted(model, &drivers, &model.x0)
                        .expect("validated drivers");
                    classify(&xn, &skeleton, epsilon, false)
                })
                .collect()
        })
        .collect();

    let estimates = tabulate(levels, epsilon, &outcomes);
    let verdict = positivity_verdict(&estimates);
    Ok(ConvergenceReport {
        kind: ExperimentKind::SupportLower,
        model: model.name.clone(),
        estimates,
        verdict,
        meta: ReportMeta {
            level_fine: mc.level_fine,
            seed: mc.seed,
            mc_samples: mc.samples,
            control: h.describe(),
            x0: model.x0.clone(),
        },
    })
}

fn trajectory_sup_norm(traj: &Trajectory) -> f64 {
    traj.states().map(norm).fold(0.0, f64::max)
}

fn trajectories_identical(a: &Trajectory, b: &Trajectory) -> bool {
    a.status() == b.status()
        && a.len() == b.len()
        && a.states()
            .zip(b.states())
            .all(|(xa, xb)| xa.iter().zip(xb).all(|(p, q)| p.to_bits() == q.to_bits()))
}

/// Truncation-consistency sweep: wherever the untruncated mixed run stays
/// inside ball(R), rerunning with the cutoff scaled system must reproduce it
/// bit for bit, because the cutoff sits on its unit plateau along the path.
#[allow(clippy::too_many_arguments)]
pub fn truncation_consistency(
    sys: &CoefficientSystem,
    model_id: &str,
    h: Option<&CameronMartinPath>,
    x0: &[f64],
    radii: &[f64],
    n: u32,
    trials: usize,
    level_fine: u32,
    seed: u64,
) -> Result<TruncationReport, ExperimentError> {
    if trials == 0 {
        return Err(ExperimentError::NoTrials);
    }
    if radii.is_empty()
        || radii.iter().any(|r| !(r.is_finite() && *r > 0.0))
        || radii.windows(2).any(|p| p[1] <= p[0])
    {
        return Err(ExperimentError::BadRadii);
    }
    check_levels(&[n], level_fine)?;

    let truncated: Vec<CoefficientSystem> = radii
        .iter()
        .map(|&r| sys.truncated(r).expect("validated radii"))
        .collect();

    let per_trial: Vec<Vec<Option<bool>>> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let w = Arc::new(
                DyadicWienerPath::sample(sys.noise_dim, level_fine, stream_seed(seed, i as u64))
                    .expect("validated path parameters"),
            );
            let mut drivers =
                DriverBundle::with_polygonal(w, n).expect("validated levels");
            if let Some(h) = h {
                drivers = drivers.and_control(h.clone());
            }
            let base = integrate_mixed(sys, &drivers, x0).expect("validated drivers");
            let sup = if base.is_complete() {
                trajectory_sup_norm(&base)
            } else {
                f64::INFINITY
            };
            radii
                .iter()
                .zip(&truncated)
                .map(|(&r, tsys)| {
                    if sup > r {
                        return None;
                    }
                    let rerun = integrate_mixed(tsys, &drivers, x0).expect("validated drivers");
                    Some(trajectories_identical(&base, &rerun))
                })
                .collect()
        })
        .collect();

    let rows: Vec<TruncationRow> = radii
        .iter()
        .enumerate()
        .map(|(ri, &radius)| {
            let mut covered = 0usize;
            let mut failures = 0usize;
            for row in &per_trial {
                if let Some(equal) = row[ri] {
                    covered += 1;
                    if !equal {
                        failures += 1;
                    }
                }
            }
            TruncationRow {
                radius,
                trials,
                covered,
                equality_failures: failures,
            }
        })
        .collect();

    let verdict = if rows.iter().all(|r| r.equality_failures == 0) {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    Ok(TruncationReport {
        kind: ExperimentKind::Truncation,
        model: model_id.to_string(),
        level_n: n,
        rows,
        verdict,
        meta: ReportMeta {
            level_fine,
            seed,
            mc_samples: trials,
            control: h.map_or_else(|| "none".to_string(), |h| h.describe()),
            x0: x0.to_vec(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtins;
    use crate::models::{AdmissibleRegion, FieldFn};
    use crate::models::WzVariant;

    fn zero_field() -> FieldFn {
        Arc::new(|_x: &[f64], out: &mut [f64]| out.fill(0.0))
    }

    fn bare_system(m: usize, d: usize) -> CoefficientSystem {
        CoefficientSystem {
            state_dim: m,
            noise_dim: d,
            drift: zero_field(),
            control_coef: zero_field(),
            smooth_coef: zero_field(),
            white_coef: zero_field(),
            smooth_grad: zero_field(),
            admissible: AdmissibleRegion::All,
        }
    }

    fn mc(samples: usize, level_fine: u32, seed: u64) -> McSettings {
        McSettings {
            samples,
            level_fine,
            seed,
        }
    }

    fn cubic_model() -> SdeModel {
        builtins::build("cubic", &Default::default()).unwrap().model
    }

    #[test]
    fn zero_system_never_exceeds() {
        let sys = bare_system(1, 1);
        let h = CameronMartinPath::zero(1);
        let report =
            wong_zakai_convergence(&sys, "zero", &h, &[1.0], &[2, 3], 0.25, mc(100, 8, 1))
                .unwrap();
        assert_eq!(report.verdict, Verdict::Pass);
        for e in &report.estimates {
            assert_eq!(e.exceed_count, 0);
            assert_eq!(e.escaped_count, 0);
            assert_eq!(e.p_hat, 0.0);
            assert_eq!(e.ci_low, 0.0);
            assert!(e.ci_high > 0.0);
        }
    }

    #[test]
    fn empty_smooth_slot_makes_both_equations_coincide() {
        // With G = 0 the mixed and limiting equations are the same recursion,
        // so the coupled distance is exactly zero sample by sample.
        let mut sys = bare_system(1, 1);
        sys.drift = Arc::new(|x: &[f64], out: &mut [f64]| out[0] = 1.0 - x[0]);
        sys.white_coef = Arc::new(|_x: &[f64], out: &mut [f64]| out[0] = 0.5);
        let h = CameronMartinPath::zero(1);
        let report =
            wong_zakai_convergence(&sys, "ou", &h, &[0.5], &[2, 4], 0.25, mc(100, 9, 3)).unwrap();
        assert_eq!(report.verdict, Verdict::Pass);
        for e in &report.estimates {
            assert_eq!(e.exceed_count, 0);
            assert_eq!(e.escaped_count, 0);
        }
    }

    #[test]
    fn cubic_interpolation_error_shrinks_across_levels() {
        let model = cubic_model();
        let sys = model.reduce(WzVariant::Skeleton);
        let h = CameronMartinPath::zero(1);
        let report =
            wong_zakai_convergence(&sys, "cubic", &h, &[0.5], &[2, 4, 6], 0.25, mc(100, 12, 7))
                .unwrap();
        assert_eq!(report.verdict, Verdict::Pass);
        let first = report.estimates.first().unwrap();
        let last = report.estimates.last().unwrap();
        assert!(last.p_hat < 0.5 * first.p_hat, "{report:?}");
    }

    #[test]
    fn wilson_interval_matches_the_quadratic_oracle() {
        // Independent evaluation: the interval ends are the roots of
        // (p_hat - p)^2 = z^2 p (1 - p) / m.
        let cases: Vec<(usize, usize)> = vec![
            (0, 100),
            (1, 100),
            (5, 100),
            (50, 100),
            (95, 100),
            (99, 100),
            (100, 100),
            (0, 17),
            (3, 17),
            (17, 17),
            (0, 500),
            (7, 500),
            (125, 500),
            (250, 500),
            (499, 500),
            (500, 500),
            (1, 1000),
            (999, 1000),
            (2, 5),
            (4, 5),
        ];
        for (count, m) in cases {
            let (low, high) = wilson_interval(count, m);
            let p = count as f64 / m as f64;
            let z2 = Z95 * Z95;
            let a = 1.0 + z2 / m as f64;
            let b = -(2.0 * p + z2 / m as f64);
            let c = p * p;
            let disc = (b * b - 4.0 * a * c).max(0.0).sqrt();
            let root_low = (-b - disc) / (2.0 * a);
            let root_high = (-b + disc) / (2.0 * a);
            assert!((low - root_low.max(0.0)).abs() <= 1e-12, "{count}/{m}");
            assert!((high - root_high.min(1.0)).abs() <= 1e-12, "{count}/{m}");
            assert!((0.0..=1.0).contains(&low));
            assert!((0.0..=1.0).contains(&high));
            assert!(low <= p + 1e-15 && p <= high + 1e-15);
            if count == 0 {
                assert!(low <= 1e-12, "one-sided at zero");
                assert!(high > 0.0);
            }
            if count == m {
                assert!(high >= 1.0 - 1e-12, "one-sided at one");
                assert!(low < 1.0);
            }
        }
        assert_eq!(wilson_interval(0, 0), (0.0, 1.0));
    }

    #[test]
    fn zero_diffusion_support_upper_sees_one_ode() {
        let model = SdeModel {
            name: "pure-drift".into(),
            state_dim: 1,
            noise_dim: 1,
            x0: vec![1.0],
            admissible: AdmissibleRegion::All,
            non_lipschitz_drift: false,
            drift_fn: Arc::new(|x: &[f64], out: &mut [f64]| out[0] = -x[0]),
            diffusion_fn: zero_field(),
            diffusion_grad_fn: zero_field(),
        };
        let report = support_upper(&model, &[2, 3], 0.25, mc(100, 8, 5)).unwrap();
        assert_eq!(report.verdict, Verdict::Pass);
        for e in &report.estimates {
            assert_eq!(e.exceed_count, 0);
            assert_eq!(e.escaped_count, 0);
        }
    }

    #[test]
    fn degenerate_support_lower_is_certain() {
        // h = 0 and sigma = 0: the shifted run and the skeleton solve the
        // same ODE, so every sample lands within epsilon.
        let model = SdeModel {
            name: "pure-drift".into(),
            state_dim: 1,
            noise_dim: 1,
            x0: vec![1.0],
            admissible: AdmissibleRegion::All,
            non_lipschitz_drift: false,
            drift_fn: Arc::new(|x: &[f64], out: &mut [f64]| out[0] = -x[0]),
            diffusion_fn: zero_field(),
            diffusion_grad_fn: zero_field(),
        };
        let h = CameronMartinPath::zero(1);
        let report = support_lower(&model, &h, &[2, 3], 0.3, mc(100, 8, 5)).unwrap();
        assert_eq!(report.verdict, Verdict::Pass);
        for e in &report.estimates {
            assert_eq!(e.exceed_count, 100);
            assert_eq!(e.p_hat, 1.0);
            assert!(e.ci_low > 0.9);
        }
    }

    #[test]
    fn truncation_sweep_vacuous_and_saturated_radii() {
        let model = cubic_model();
        let sys = model.reduce(WzVariant::Shifted);
        let h = CameronMartinPath::constant_slope(&[0.5]).unwrap();
        let report = truncation_consistency(
            &sys,
            "cubic",
            Some(&h),
            &[0.5],
            &[0.1, 50.0],
            4,
            20,
            10,
            11,
        )
        .unwrap();
        assert_eq!(report.verdict, Verdict::Pass);
        let tiny = &report.rows[0];
        assert_eq!(tiny.covered, 0, "|x0| already exceeds the radius");
        assert_eq!(tiny.equality_failures, 0);
        let huge = &report.rows[1];
        assert_eq!(huge.covered, 20, "every completed path fits in ball(50)");
        assert_eq!(huge.equality_failures, 0);
    }

    #[test]
    fn overwhelming_escape_rate_is_inconclusive() {
        // Deterministic drain out of the positive orthant: every sample
        // escapes, so no pass/fail call is honest.
        let model = SdeModel {
            name: "drain".into(),
            state_dim: 1,
            noise_dim: 1,
            x0: vec![0.2],
            admissible: AdmissibleRegion::PositiveOrthant,
            non_lipschitz_drift: false,
            drift_fn: Arc::new(|_x: &[f64], out: &mut [f64]| out[0] = -5.0),
            diffusion_fn: zero_field(),
            diffusion_grad_fn: zero_field(),
        };
        let report = support_upper(&model, &[2, 3], 0.25, mc(100, 8, 5)).unwrap();
        assert_eq!(report.verdict, Verdict::Inconclusive);
        for e in &report.estimates {
            assert_eq!(e.escaped_count, 100);
            assert_eq!(e.p_hat, 0.0);
            assert_eq!((e.ci_low, e.ci_high), (0.0, 1.0));
        }
    }

    #[test]
    fn reports_do_not_depend_on_the_worker_count() {
        let model = cubic_model();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| support_upper(&model, &[2, 3], 0.3, mc(100, 8, 42)).unwrap())
        };
        let single = run(1);
        let multi = run(3);
        assert_eq!(single, multi);
        assert_eq!(
            serde_json::to_string(&single).unwrap(),
            serde_json::to_string(&multi).unwrap()
        );
    }

    #[test]
    fn preconditions_are_enforced() {
        let model = cubic_model();
        let sys = model.reduce(WzVariant::Skeleton);
        let h = CameronMartinPath::zero(1);

        assert!(matches!(
            wong_zakai_convergence(&sys, "m", &h, &[0.5], &[2, 4], 0.25, mc(99, 12, 1)),
            Err(ExperimentError::TooFewSamples(99))
        ));
        assert!(matches!(
            support_upper(&model, &[], 0.25, mc(100, 12, 1)),
            Err(ExperimentError::BadLevels)
        ));
        assert!(matches!(
            support_upper(&model, &[4, 4], 0.25, mc(100, 12, 1)),
            Err(ExperimentError::BadLevels)
        ));
        assert!(matches!(
            support_upper(&model, &[2, 9], 0.25, mc(100, 12, 1)),
            Err(ExperimentError::LevelGap { max_n: 9, level: 12 })
        ));
        assert!(matches!(
            support_lower(&model, &h, &[2, 4], 0.0, mc(100, 12, 1)),
            Err(ExperimentError::BadThreshold(_))
        ));
        assert!(matches!(
            truncation_consistency(&sys, "m", None, &[0.5], &[2.0, 1.0], 4, 10, 12, 1),
            Err(ExperimentError::BadRadii)
        ));
        assert!(matches!(
            truncation_consistency(&sys, "m", None, &[0.5], &[1.0], 4, 0, 12, 1),
            Err(ExperimentError::NoTrials)
        ));
    }
}
