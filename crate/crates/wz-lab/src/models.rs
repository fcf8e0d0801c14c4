//! Coefficient systems for the coupled equations, SDE models, smooth radial
//! truncation, and the reductions that express skeleton and shifted
//! equations in the common four-coefficient form.

use std::sync::Arc;

use thiserror::Error;

/// Vector field evaluated into a caller-provided buffer.
pub type FieldFn = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("state dimension must be at least 1")]
    InvalidStateDim,
    #[error("noise dimension must be at least 1")]
    InvalidNoiseDim,
    #[error("truncation radius must be positive and finite, got {0}")]
    InvalidRadius(f64),
    #[error("initial state has {got} components, model has {expected}")]
    BadInitialState { expected: usize, got: usize },
    #[error("initial state outside the admissible region")]
    InadmissibleInitialState,
}

/// State-space constraint a trajectory must respect. Everything outside is
/// treated as an escape, not an error.
#[derive(Clone, Debug, PartialEq)]
pub enum AdmissibleRegion {
    All,
    /// Every coordinate strictly positive.
    PositiveOrthant,
    /// Every coordinate nonnegative; boundaries allowed.
    NonnegativeOrthant,
    /// `dot(normal, x) > offset`.
    HalfSpace { normal: Vec<f64>, offset: f64 },
}

impl AdmissibleRegion {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            AdmissibleRegion::All => true,
            AdmissibleRegion::PositiveOrthant => x.iter().all(|&v| v > 0.0),
            AdmissibleRegion::NonnegativeOrthant => x.iter().all(|&v| v >= 0.0),
            AdmissibleRegion::HalfSpace { normal, offset } => {
                let dot: f64 = normal.iter().zip(x).map(|(n, v)| n * v).sum();
                dot > *offset
            }
        }
    }
}

/// Smooth cutoff: 1 on the closed ball of radius `radius + 1`, 0 outside
/// radius `2 (radius + 1)`, quintic in between (C^2, monotone).
#[derive(Clone, Debug)]
pub struct TruncationBump {
    radius: f64,
    inner: f64,
    width: f64,
}

impl TruncationBump {
    pub fn new(radius: f64) -> Result<Self, ModelError> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(ModelError::InvalidRadius(radius));
        }
        let inner = radius + 1.0;
        Ok(Self {
            radius,
            inner,
            width: inner,
        })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Cutoff as a function of |x|. The plateaus return literal 1.0 / 0.0 so
    /// that scaling a coefficient by the bump inside the inner ball is the
    /// identity at the bit level.
    pub fn profile(&self, r: f64) -> f64 {
        if r <= self.inner {
            return 1.0;
        }
        if r >= 2.0 * self.inner {
            return 0.0;
        }
        let s = (r - self.inner) / self.width;
        1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }

    /// d/dr of `profile`; identically 0 on both plateaus.
    pub fn profile_slope(&self, r: f64) -> f64 {
        if r <= self.inner || r >= 2.0 * self.inner {
            return 0.0;
        }
        let s = (r - self.inner) / self.width;
        -30.0 * s * s * (1.0 - s) * (1.0 - s) / self.width
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.profile(norm(x))
    }

    /// Gradient of the radial cutoff; exact zeros on the plateaus (including
    /// at the origin, where the cutoff is flat).
    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let r = norm(x);
        let slope = self.profile_slope(r);
        if slope == 0.0 || r == 0.0 {
            out.fill(0.0);
            return;
        }
        for (o, &v) in out.iter_mut().zip(x) {
            *o = slope * v / r;
        }
    }
}

pub fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// The four-coefficient system driven jointly by a control path, a
/// piecewise-linear noise approximation, and residual white noise:
/// drift + control_coef h' + smooth_coef w' in the drift slot, white_coef
/// against Brownian increments. `smooth_grad` holds the full derivative of
/// `smooth_coef`, laid out as `[(i * noise_dim + j) * state_dim + k]` for
/// d(smooth_coef[i][j]) / d(x[k]).
#[derive(Clone)]
pub struct CoefficientSystem {
    pub state_dim: usize,
    pub noise_dim: usize,
    pub drift: FieldFn,
    pub control_coef: FieldFn,
    pub smooth_coef: FieldFn,
    pub white_coef: FieldFn,
    pub smooth_grad: FieldFn,
    pub admissible: AdmissibleRegion,
}

impl CoefficientSystem {
    pub fn matrix_len(&self) -> usize {
        self.state_dim * self.noise_dim
    }

    pub fn grad_len(&self) -> usize {
        self.state_dim * self.noise_dim * self.state_dim
    }

    /// All four coefficients (and the gradient data) scaled by the smooth
    /// cutoff at `radius`. Inside the closed ball of radius `radius + 1` the
    /// scaled fields reproduce the originals bit for bit; the gradient picks
    /// up the product-rule term `grad(bump) (x) smooth_coef`.
    pub fn truncated(&self, radius: f64) -> Result<CoefficientSystem, ModelError> {
        let bump = TruncationBump::new(radius)?;
        let m = self.state_dim;
        let d = self.noise_dim;

        let scale_vec = |field: &FieldFn| -> FieldFn {
            let field = field.clone();
            let bump = bump.clone();
            Arc::new(move |x: &[f64], out: &mut [f64]| {
                field(x, out);
                let theta = bump.value(x);
                for o in out.iter_mut() {
                    *o *= theta;
                }
            })
        };

        let smooth_coef = self.smooth_coef.clone();
        let smooth_grad = self.smooth_grad.clone();
        let bump_grad = bump.clone();
        let truncated_grad: FieldFn = Arc::new(move |x: &[f64], out: &mut [f64]| {
            // d(theta G)/dx_k = theta dG/dx_k + (d theta/dx_k) G.
            smooth_grad(x, out);
            let theta = bump_grad.value(x);
            let mut gvals = vec![0.0; m * d];
            smooth_coef(x, &mut gvals);
            let mut bgrad = vec![0.0; m];
            bump_grad.gradient(x, &mut bgrad);
            let flat = bgrad.iter().all(|&v| v == 0.0);
            for i in 0..m {
                for j in 0..d {
                    for k in 0..m {
                        let idx = (i * d + j) * m + k;
                        if flat {
                            out[idx] *= theta;
                        } else {
                            out[idx] = theta * out[idx] + bgrad[k] * gvals[i * d + j];
                        }
                    }
                }
            }
        });

        Ok(CoefficientSystem {
            state_dim: m,
            noise_dim: d,
            drift: scale_vec(&self.drift),
            control_coef: scale_vec(&self.control_coef),
            smooth_coef: scale_vec(&self.smooth_coef),
            white_coef: scale_vec(&self.white_coef),
            smooth_grad: truncated_grad,
            admissible: self.admissible.clone(),
        })
    }

    /// Drift correction used by the limiting equation:
    /// out_i = sum_{k,j} smooth_grad[i][j][k] * a[k][j], with `a` given in
    /// the same row-major (state x noise) layout as the coefficients.
    pub fn grad_contract(&self, grad: &[f64], a: &[f64], out: &mut [f64]) {
        let m = self.state_dim;
        let d = self.noise_dim;
        for i in 0..m {
            let mut acc = 0.0;
            for j in 0..d {
                for k in 0..m {
                    acc += grad[(i * d + j) * m + k] * a[k * d + j];
                }
            }
            out[i] = acc;
        }
    }
}

/// Which reduction of an SDE to the four-coefficient form to build.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WzVariant {
    /// Deterministic skeleton: Stratonovich-corrected drift, the diffusion
    /// moved to the smooth slot so a polygonal driver steers it, no residual
    /// noise.
    Skeleton,
    /// Shifted equation: diffusion in both the control and white slots with
    /// the smooth slot carrying its negative, so the piecewise-linear and
    /// white drivers cancel in the limit.
    Shifted,
}

/// An Ito SDE dX = b dt + sigma dW with analytic diffusion derivative.
/// `diffusion_grad_fn` uses the same flat layout as
/// `CoefficientSystem::smooth_grad`.
#[derive(Clone)]
pub struct SdeModel {
    pub name: String,
    pub state_dim: usize,
    pub noise_dim: usize,
    pub x0: Vec<f64>,
    pub admissible: AdmissibleRegion,
    /// True when the drift is only piecewise continuous, which rules out the
    /// reductions that differentiate it.
    pub non_lipschitz_drift: bool,
    pub drift_fn: FieldFn,
    pub diffusion_fn: FieldFn,
    pub diffusion_grad_fn: FieldFn,
}

impl SdeModel {
    pub fn with_x0(mut self, x0: Vec<f64>) -> Result<Self, ModelError> {
        if x0.len() != self.state_dim {
            return Err(ModelError::BadInitialState {
                expected: self.state_dim,
                got: x0.len(),
            });
        }
        if !self.admissible.contains(&x0) {
            return Err(ModelError::InadmissibleInitialState);
        }
        self.x0 = x0;
        Ok(self)
    }

    pub fn matrix_len(&self) -> usize {
        self.state_dim * self.noise_dim
    }

    /// Stratonovich correction out_i = 1/2 sum_{k,j} d_k sigma_ij sigma_kj,
    /// evaluated with the analytic diffusion derivative.
    pub fn stratonovich_into(
        &self,
        x: &[f64],
        grad_buf: &mut [f64],
        sigma_buf: &mut [f64],
        out: &mut [f64],
    ) {
        let m = self.state_dim;
        let d = self.noise_dim;
        (self.diffusion_grad_fn)(x, grad_buf);
        (self.diffusion_fn)(x, sigma_buf);
        for i in 0..m {
            let mut acc = 0.0;
            for j in 0..d {
                for k in 0..m {
                    acc += grad_buf[(i * d + j) * m + k] * sigma_buf[k * d + j];
                }
            }
            out[i] = 0.5 * acc;
        }
    }

    pub fn stratonovich_correction(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        if x.len() != self.state_dim {
            return Err(ModelError::BadInitialState {
                expected: self.state_dim,
                got: x.len(),
            });
        }
        let mut grad = vec![0.0; self.state_dim * self.noise_dim * self.state_dim];
        let mut sigma = vec![0.0; self.matrix_len()];
        let mut out = vec![0.0; self.state_dim];
        self.stratonovich_into(x, &mut grad, &mut sigma, &mut out);
        Ok(out)
    }

    /// Expresses this SDE in the four-coefficient form for the requested
    /// variant. In both cases the smooth-coefficient derivative is the
    /// analytic diffusion derivative (negated for the shifted variant).
    pub fn reduce(&self, variant: WzVariant) -> CoefficientSystem {
        let m = self.state_dim;
        let d = self.noise_dim;
        let zero_vec: FieldFn = Arc::new(move |_x: &[f64], out: &mut [f64]| out.fill(0.0));
        match variant {
            WzVariant::Skeleton => {
                let model = self.clone();
                let drift: FieldFn = Arc::new(move |x: &[f64], out: &mut [f64]| {
                    let mut grad = vec![0.0; model.state_dim * model.noise_dim * model.state_dim];
                    let mut sigma = vec![0.0; model.matrix_len()];
                    let mut corr = vec![0.0; model.state_dim];
                    (model.drift_fn)(x, out);
                    model.stratonovich_into(x, &mut grad, &mut sigma, &mut corr);
                    for (o, c) in out.iter_mut().zip(&corr) {
                        *o -= c;
                    }
                });
                CoefficientSystem {
                    state_dim: m,
                    noise_dim: d,
                    drift,
                    control_coef: zero_vec.clone(),
                    smooth_coef: self.diffusion_fn.clone(),
                    white_coef: zero_vec,
                    smooth_grad: self.diffusion_grad_fn.clone(),
                    admissible: self.admissible.clone(),
                }
            }
            WzVariant::Shifted => {
                let grad = self.diffusion_grad_fn.clone();
                let neg_grad: FieldFn = Arc::new(move |x: &[f64], out: &mut [f64]| {
                    grad(x, out);
                    for o in out.iter_mut() {
                        *o = -*o;
                    }
                });
                let sigma = self.diffusion_fn.clone();
                let neg_sigma: FieldFn = Arc::new(move |x: &[f64], out: &mut [f64]| {
                    sigma(x, out);
                    for o in out.iter_mut() {
                        *o = -*o;
                    }
                });
                CoefficientSystem {
                    state_dim: m,
                    noise_dim: d,
                    drift: self.drift_fn.clone(),
                    control_coef: self.diffusion_fn.clone(),
                    smooth_coef: neg_sigma,
                    white_coef: self.diffusion_fn.clone(),
                    smooth_grad: neg_grad,
                    admissible: self.admissible.clone(),
                }
            }
        }
    }
}
