//! Time steppers for the five equation shapes the laboratory studies: the
//! mixed-driver equation, its Ito limit, truncated variants of both, the
//! deterministic skeleton ODEs, and the shifted equation. Stochastic
//! equations use Euler steps on the fine dyadic grid; skeletons use a
//! classical fourth-order one-step method with the control slope frozen per
//! step. All drivers are read at left endpoints.

use std::sync::Arc;

use thiserror::Error;

use crate::models::{AdmissibleRegion, CoefficientSystem, FieldFn, SdeModel, WzVariant};
use crate::paths::{CameronMartinPath, DyadicWienerPath, PathError, PolygonalPath, MAX_LEVEL};

/// States at or beyond this magnitude count as numerical blow-up. Kept far
/// below f64 overflow so products of blown-up coefficients still compare.
pub const BLOWUP_LIMIT: f64 = 1e150;

/// The white-noise grid must be at least this many dyadic levels finer than
/// the polygonal driver, so each coarse segment spans many Euler steps.
pub const MIN_LEVEL_GAP: u32 = 4;

#[derive(Debug, Error)]
pub enum IntegrateError {
    #[error("this integrator needs a polygonal driver in the bundle")]
    MissingPolygonal,
    #[error("this integrator needs a control path in the bundle")]
    MissingControl,
    #[error("the polygonal driver was not built from the bundled Wiener path")]
    UncoupledDrivers,
    #[error(
        "white-noise level {level} must exceed the polygonal level {n} by at least {MIN_LEVEL_GAP}"
    )]
    LevelGap { level: u32, n: u32 },
    #[error("level {0} exceeds the supported maximum {MAX_LEVEL}")]
    LevelTooFine(u32),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("trajectories live on different grids")]
    GridMismatch,
    #[error(transparent)]
    Path(#[from] PathError),
}

/// How an integration run ended. Failure states carry the grid time at which
/// the offending step landed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TrajectoryStatus {
    Completed,
    Escaped { time: f64 },
    NonFinite { time: f64 },
}

/// A discrete path on the uniform grid t_i = i / 2^level. States are stored
/// row-major, one row per retained grid point; on failure the offending state
/// is dropped, so the last row is always finite and admissible.
#[derive(Clone, Debug)]
pub struct Trajectory {
    level: u32,
    state_dim: usize,
    states: Vec<f64>,
    status: TrajectoryStatus,
}

impl Trajectory {
    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn status(&self) -> TrajectoryStatus {
        self.status
    }

    pub fn is_complete(&self) -> bool {
        self.status == TrajectoryStatus::Completed
    }

    /// Number of retained grid points (2^level + 1 when completed).
    pub fn len(&self) -> usize {
        self.states.len() / self.state_dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 * 0.5f64.powi(self.level as i32)
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.state_dim..(i + 1) * self.state_dim]
    }

    pub fn last_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.state_dim)
    }
}

/// Noise inputs shared by one integration run. The polygonal driver, when
/// present, must be built over the very same Wiener path object, or the
/// mixed and white integrals would see different randomness.
#[derive(Clone)]
pub struct DriverBundle {
    pub w: Arc<DyadicWienerPath>,
    pub wn: Option<PolygonalPath>,
    pub h: Option<CameronMartinPath>,
}

impl DriverBundle {
    pub fn white_only(w: Arc<DyadicWienerPath>) -> Self {
        Self {
            w,
            wn: None,
            h: None,
        }
    }

    /// Bundle with a polygonal driver at level `n`, coupled by construction.
    pub fn with_polygonal(w: Arc<DyadicWienerPath>, n: u32) -> Result<Self, IntegrateError> {
        let wn = PolygonalPath::new(w.clone(), n)?;
        Ok(Self {
            w,
            wn: Some(wn),
            h: None,
        })
    }

    pub fn and_control(mut self, h: CameronMartinPath) -> Self {
        self.h = Some(h);
        self
    }

    fn check_coupling(&self) -> Result<(), IntegrateError> {
        if let Some(wn) = &self.wn {
            if !Arc::ptr_eq(wn.source(), &self.w) {
                return Err(IntegrateError::UncoupledDrivers);
            }
        }
        Ok(())
    }
}

fn check_state_dim(expected: usize, got: usize) -> Result<(), IntegrateError> {
    if expected == got {
        Ok(())
    } else {
        Err(IntegrateError::DimensionMismatch { expected, got })
    }
}

/// Classifies a freshly computed state; `None` means keep stepping.
fn step_verdict(next: &[f64], region: &AdmissibleRegion, time: f64) -> Option<TrajectoryStatus> {
    if next.iter().any(|v| !v.is_finite() || v.abs() >= BLOWUP_LIMIT) {
        return Some(TrajectoryStatus::NonFinite { time });
    }
    if !region.contains(next) {
        return Some(TrajectoryStatus::Escaped { time });
    }
    None
}

/// Euler recursion shared by the mixed equation and the plain SDE. Per step:
/// x_{i+1} = x_i + [B + H hdot(t_i) + G wdot(t_i)] dt + F dW_i, with a
/// driver slot skipped entirely when its path is absent.
fn euler_mixed_core(
    sys: &CoefficientSystem,
    w: &DyadicWienerPath,
    wn: Option<&PolygonalPath>,
    h: Option<&CameronMartinPath>,
    x0: &[f64],
) -> Trajectory {
    let m = sys.state_dim;
    let d = sys.noise_dim;
    let level = w.level();
    let steps = w.steps();
    let dt = w.dt();

    let mut states = Vec::with_capacity((steps + 1) * m);
    states.extend_from_slice(x0);
    if let Some(status) = step_verdict(x0, &sys.admissible, 0.0) {
        return Trajectory {
            level,
            state_dim: m,
            states,
            status,
        };
    }

    let mut x = x0.to_vec();
    let mut next = vec![0.0; m];
    let mut bvec = vec![0.0; m];
    let mut drv = vec![0.0; m];
    let mut coef = vec![0.0; m * d];
    let mut rate = vec![0.0; d];
    let mut fmat = vec![0.0; m * d];

    let mut status = TrajectoryStatus::Completed;
    for i in 0..steps {
        let t = i as f64 * dt;
        (sys.drift)(&x, &mut bvec);
        drv.fill(0.0);
        if let Some(h) = h {
            h.derivative_into(t, &mut rate);
            (sys.control_coef)(&x, &mut coef);
            for c in 0..m {
                let mut s = 0.0;
                for j in 0..d {
                    s += coef[c * d + j] * rate[j];
                }
                drv[c] += s;
            }
        }
        if let Some(wn) = wn {
            wn.derivative_into(t, &mut rate);
            (sys.smooth_coef)(&x, &mut coef);
            for c in 0..m {
                let mut s = 0.0;
                for j in 0..d {
                    s += coef[c * d + j] * rate[j];
                }
                drv[c] += s;
            }
        }
        (sys.white_coef)(&x, &mut fmat);
        let dw = w.increment(i);
        for c in 0..m {
            let mut noise = 0.0;
            for j in 0..d {
                noise += fmat[c * d + j] * dw[j];
            }
            next[c] = x[c] + (bvec[c] + drv[c]) * dt + noise;
        }
        if let Some(fail) = step_verdict(&next, &sys.admissible, (i + 1) as f64 * dt) {
            status = fail;
            break;
        }
        states.extend_from_slice(&next);
        x.copy_from_slice(&next);
    }

    Trajectory {
        level,
        state_dim: m,
        states,
        status,
    }
}

/// Mixed-driver equation: drift plus control and polygonal terms against dt,
/// white coefficient against Brownian increments, all on the fine grid.
pub fn integrate_mixed(
    sys: &CoefficientSystem,
    drivers: &DriverBundle,
    x0: &[f64],
) -> Result<Trajectory, IntegrateError> {
    check_state_dim(sys.state_dim, x0.len())?;
    check_state_dim(sys.noise_dim, drivers.w.dim())?;
    drivers.check_coupling()?;
    let wn = drivers.wn.as_ref().ok_or(IntegrateError::MissingPolygonal)?;
    let level = drivers.w.level();
    if level < wn.n() + MIN_LEVEL_GAP {
        return Err(IntegrateError::LevelGap { level, n: wn.n() });
    }
    if let Some(h) = &drivers.h {
        check_state_dim(sys.noise_dim, h.dim())?;
    }
    Ok(euler_mixed_core(
        sys,
        &drivers.w,
        Some(wn),
        drivers.h.as_ref(),
        x0,
    ))
}

/// Limiting Ito equation: Euler steps with drift
/// B + H hdot + grad(G)[F + G/2] and diffusion F + G.
pub fn integrate_ito_limit(
    sys: &CoefficientSystem,
    drivers: &DriverBundle,
    x0: &[f64],
) -> Result<Trajectory, IntegrateError> {
    check_state_dim(sys.state_dim, x0.len())?;
    check_state_dim(sys.noise_dim, drivers.w.dim())?;
    drivers.check_coupling()?;
    if let Some(h) = &drivers.h {
        check_state_dim(sys.noise_dim, h.dim())?;
    }

    let m = sys.state_dim;
    let d = sys.noise_dim;
    let w = &drivers.w;
    let level = w.level();
    let steps = w.steps();
    let dt = w.dt();

    let mut states = Vec::with_capacity((steps + 1) * m);
    states.extend_from_slice(x0);
    if let Some(status) = step_verdict(x0, &sys.admissible, 0.0) {
        return Ok(Trajectory {
            level,
            state_dim: m,
            states,
            status,
        });
    }

    let mut x = x0.to_vec();
    let mut next = vec![0.0; m];
    let mut bvec = vec![0.0; m];
    let mut hterm = vec![0.0; m];
    let mut corr = vec![0.0; m];
    let mut hmat = vec![0.0; m * d];
    let mut rate = vec![0.0; d];
    let mut fmat = vec![0.0; m * d];
    let mut gmat = vec![0.0; m * d];
    let mut amat = vec![0.0; m * d];
    let mut grad = vec![0.0; sys.grad_len()];

    let mut status = TrajectoryStatus::Completed;
    for i in 0..steps {
        let t = i as f64 * dt;
        (sys.drift)(&x, &mut bvec);
        hterm.fill(0.0);
        if let Some(h) = &drivers.h {
            h.derivative_into(t, &mut rate);
            (sys.control_coef)(&x, &mut hmat);
            for c in 0..m {
                let mut s = 0.0;
                for j in 0..d {
                    s += hmat[c * d + j] * rate[j];
                }
                hterm[c] += s;
            }
        }
        (sys.white_coef)(&x, &mut fmat);
        (sys.smooth_coef)(&x, &mut gmat);
        (sys.smooth_grad)(&x, &mut grad);
        for k in 0..m * d {
            amat[k] = fmat[k] + 0.5 * gmat[k];
        }
        sys.grad_contract(&grad, &amat, &mut corr);
        let dw = w.increment(i);
        for c in 0..m {
            let mut noise = 0.0;
            for j in 0..d {
                noise += (fmat[c * d + j] + gmat[c * d + j]) * dw[j];
            }
            next[c] = x[c] + (bvec[c] + hterm[c] + corr[c]) * dt + noise;
        }
        if let Some(fail) = step_verdict(&next, &sys.admissible, (i + 1) as f64 * dt) {
            status = fail;
            break;
        }
        states.extend_from_slice(&next);
        x.copy_from_slice(&next);
    }

    Ok(Trajectory {
        level,
        state_dim: m,
        states,
        status,
    })
}

/// Plain Euler on dX = b dt + sigma dW. Shares its per-step arithmetic with
/// the mixed integrator so coupled comparisons cancel exactly.
pub fn integrate_sde(
    model: &SdeModel,
    w: &Arc<DyadicWienerPath>,
    x0: &[f64],
) -> Result<Trajectory, IntegrateError> {
    check_state_dim(model.state_dim, x0.len())?;
    check_state_dim(model.noise_dim, w.dim())?;
    let zero: FieldFn = Arc::new(|_x: &[f64], out: &mut [f64]| out.fill(0.0));
    let sys = CoefficientSystem {
        state_dim: model.state_dim,
        noise_dim: model.noise_dim,
        drift: model.drift_fn.clone(),
        control_coef: zero.clone(),
        smooth_coef: zero.clone(),
        white_coef: model.diffusion_fn.clone(),
        smooth_grad: zero,
        admissible: model.admissible.clone(),
    };
    Ok(euler_mixed_core(&sys, w, None, None, x0))
}

/// Deterministic skeleton: dS = [b - (grad sigma) sigma / 2] dt +
/// sigma hdot dt, solved with RK4 on the level-`level` grid. The control
/// slope is read once per step, at the left endpoint.
pub fn solve_skeleton(
    model: &SdeModel,
    h: &CameronMartinPath,
    x0: &[f64],
    level: u32,
) -> Result<Trajectory, IntegrateError> {
    check_state_dim(model.state_dim, x0.len())?;
    check_state_dim(model.noise_dim, h.dim())?;
    if level > MAX_LEVEL {
        return Err(IntegrateError::LevelTooFine(level));
    }

    let m = model.state_dim;
    let d = model.noise_dim;
    let steps = 1usize << level;
    let dt = 0.5f64.powi(level as i32);

    let mut states = Vec::with_capacity((steps + 1) * m);
    states.extend_from_slice(x0);
    if let Some(status) = step_verdict(x0, &model.admissible, 0.0) {
        return Ok(Trajectory {
            level,
            state_dim: m,
            states,
            status,
        });
    }

    let mut grad = vec![0.0; m * d * m];
    let mut sigma = vec![0.0; m * d];
    let mut corr = vec![0.0; m];
    let mut bvec = vec![0.0; m];
    let mut rate = vec![0.0; d];

    let rhs = |x: &[f64], hdot: &[f64], out: &mut [f64],
                   grad: &mut [f64], sigma: &mut [f64], corr: &mut [f64], bvec: &mut [f64]| {
        (model.drift_fn)(x, bvec);
        model.stratonovich_into(x, grad, sigma, corr);
        for c in 0..m {
            let mut s = 0.0;
            for j in 0..d {
                s += sigma[c * d + j] * hdot[j];
            }
            out[c] = bvec[c] - corr[c] + s;
        }
    };

    let mut x = x0.to_vec();
    let mut k1 = vec![0.0; m];
    let mut k2 = vec![0.0; m];
    let mut k3 = vec![0.0; m];
    let mut k4 = vec![0.0; m];
    let mut stage = vec![0.0; m];
    let mut next = vec![0.0; m];

    let mut status = TrajectoryStatus::Completed;
    for i in 0..steps {
        let t = i as f64 * dt;
        h.derivative_into(t, &mut rate);
        rhs(&x, &rate, &mut k1, &mut grad, &mut sigma, &mut corr, &mut bvec);
        for c in 0..m {
            stage[c] = x[c] + 0.5 * dt * k1[c];
        }
        rhs(&stage, &rate, &mut k2, &mut grad, &mut sigma, &mut corr, &mut bvec);
        for c in 0..m {
            stage[c] = x[c] + 0.5 * dt * k2[c];
        }
        rhs(&stage, &rate, &mut k3, &mut grad, &mut sigma, &mut corr, &mut bvec);
        for c in 0..m {
            stage[c] = x[c] + dt * k3[c];
        }
        rhs(&stage, &rate, &mut k4, &mut grad, &mut sigma, &mut corr, &mut bvec);
        for c in 0..m {
            next[c] = x[c] + dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]);
        }
        if let Some(fail) = step_verdict(&next, &model.admissible, (i + 1) as f64 * dt) {
            status = fail;
            break;
        }
        states.extend_from_slice(&next);
        x.copy_from_slice(&next);
    }

    Ok(Trajectory {
        level,
        state_dim: m,
        states,
        status,
    })
}

/// Skeleton driven by a polygonal noise sample, solved on the source path's
/// fine grid so it is directly comparable to Euler trajectories.
pub fn solve_skeleton_wn(
    model: &SdeModel,
    wn: &PolygonalPath,
    x0: &[f64],
) -> Result<Trajectory, IntegrateError> {
    let h = wn.to_cameron_martin();
    solve_skeleton(model, &h, x0, wn.source().level())
}

/// Shifted equation: drift b + sigma hdot - sigma wdot, diffusion sigma.
/// Needs all three drivers; the polygonal one must come from the bundled
/// Wiener path.
pub fn integrate_shifted(
    model: &SdeModel,
    drivers: &DriverBundle,
    x0: &[f64],
) -> Result<Trajectory, IntegrateError> {
    if drivers.wn.is_none() {
        return Err(IntegrateError::MissingPolygonal);
    }
    if drivers.h.is_none() {
        return Err(IntegrateError::MissingControl);
    }
    let sys = model.reduce(WzVariant::Shifted);
    integrate_mixed(&sys, drivers, x0)
}

/// Uniform distance between two trajectories on the same grid: the maximum
/// Euclidean pointwise gap. Infinite when either run failed to complete.
pub fn sup_distance(a: &Trajectory, b: &Trajectory) -> Result<f64, IntegrateError> {
    if a.level != b.level || a.state_dim != b.state_dim {
        return Err(IntegrateError::GridMismatch);
    }
    if !a.is_complete() || !b.is_complete() {
        return Ok(f64::INFINITY);
    }
    let mut worst = 0.0f64;
    for (xa, xb) in a.states().zip(b.states()) {
        let gap = xa
            .iter()
            .zip(xb)
            .map(|(p, q)| (p - q) * (p - q))
            .sum::<f64>()
            .sqrt();
        worst = worst.max(gap);
    }
    Ok(worst)
}
