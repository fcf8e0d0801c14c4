//! The builtin example models: a cubic scalar SDE, the stochastic
//! Duffing-van der Pol oscillator, a three-species competitive
//! Lotka-Volterra system, a stochastic SIR model, and threshold
//! Ornstein-Uhlenbeck processes. Each ships with a Lyapunov candidate and
//! audited constants.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lyapunov::{LyapunovData, LyapunovError};
use crate::models::{AdmissibleRegion, SdeModel};

pub const MODEL_NAMES: [&str; 5] = [
    "cubic",
    "duffing_vdp",
    "lotka_volterra3",
    "sir",
    "threshold_ou",
];

/// A parameter is a number, a vector, or a matrix (nested rows). Scalars
/// coerce to length-1 vectors where a vector is expected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Scalar(f64),
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

pub type Params = BTreeMap<String, ParamValue>;

#[derive(Debug, Error)]
pub enum BuildError {
    #[error("unknown model {name:?}; available: {}", MODEL_NAMES.join(", "))]
    UnknownModel { name: String },
    #[error("model {model} does not take a parameter named {name:?}")]
    UnknownParam { model: &'static str, name: String },
    #[error("parameter {name}: {reason}")]
    BadParam { name: String, reason: String },
    #[error(transparent)]
    Lyapunov(#[from] LyapunovError),
}

/// Reads parameters with defaults, tracking which keys were consumed so
/// that unknown keys can be rejected.
struct ParamReader<'a> {
    model: &'static str,
    params: &'a Params,
    used: BTreeSet<&'a str>,
}

impl<'a> ParamReader<'a> {
    fn new(model: &'static str, params: &'a Params) -> Self {
        Self {
            model,
            params,
            used: BTreeSet::new(),
        }
    }

    fn take(&mut self, name: &str) -> Option<&'a ParamValue> {
        let (key, value) = self.params.get_key_value(name)?;
        self.used.insert(key.as_str());
        Some(value)
    }

    fn scalar(&mut self, name: &str, default: f64) -> Result<f64, BuildError> {
        let v = match self.take(name) {
            None => return Ok(default),
            Some(ParamValue::Scalar(v)) => *v,
            Some(ParamValue::Vector(vs)) if vs.len() == 1 => vs[0],
            Some(_) => {
                return Err(BuildError::BadParam {
                    name: name.into(),
                    reason: "expected a scalar".into(),
                })
            }
        };
        if !v.is_finite() {
            return Err(BuildError::BadParam {
                name: name.into(),
                reason: format!("not finite: {v}"),
            });
        }
        Ok(v)
    }

    fn positive(&mut self, name: &str, default: f64) -> Result<f64, BuildError> {
        let v = self.scalar(name, default)?;
        if v <= 0.0 {
            return Err(BuildError::BadParam {
                name: name.into(),
                reason: format!("must be positive, got {v}"),
            });
        }
        Ok(v)
    }

    fn vector(&mut self, name: &str, default: &[f64]) -> Result<Vec<f64>, BuildError> {
        let vs = match self.take(name) {
            None => default.to_vec(),
            Some(ParamValue::Scalar(v)) => vec![*v],
            Some(ParamValue::Vector(vs)) => vs.clone(),
            Some(ParamValue::Matrix(_)) => {
                return Err(BuildError::BadParam {
                    name: name.into(),
                    reason: "expected a vector, got a matrix".into(),
                })
            }
        };
        if vs.iter().any(|v| !v.is_finite()) {
            return Err(BuildError::BadParam {
                name: name.into(),
                reason: "entries must be finite".into(),
            });
        }
        Ok(vs)
    }

    /// Row-major rows x cols matrix; accepts nested rows or a flat vector.
    fn matrix(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        default: &[f64],
    ) -> Result<Vec<f64>, BuildError> {
        let flat = match self.take(name) {
            None => default.to_vec(),
            Some(ParamValue::Matrix(m)) => {
                if m.len() != rows || m.iter().any(|r| r.len() != cols) {
                    return Err(BuildError::BadParam {
                        name: name.into(),
                        reason: format!("expected a {rows}x{cols} matrix"),
                    });
                }
                m.iter().flatten().copied().collect()
            }
            Some(ParamValue::Vector(vs)) => {
                if vs.len() != rows * cols {
                    return Err(BuildError::BadParam {
                        name: name.into(),
                        reason: format!("expected {} entries (row-major)", rows * cols),
                    });
                }
                vs.clone()
            }
            Some(ParamValue::Scalar(_)) => {
                return Err(BuildError::BadParam {
                    name: name.into(),
                    reason: "expected a matrix".into(),
                })
            }
        };
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(BuildError::BadParam {
                name: name.into(),
                reason: "entries must be finite".into(),
            });
        }
        Ok(flat)
    }

    fn finish(self) -> Result<(), BuildError> {
        for key in self.params.keys() {
            if !self.used.contains(key.as_str()) {
                return Err(BuildError::UnknownParam {
                    model: self.model,
                    name: key.clone(),
                });
            }
        }
        Ok(())
    }
}

pub struct BuiltinModel {
    pub model: SdeModel,
    pub lyapunov: LyapunovData,
}

pub fn build(name: &str, params: &Params) -> Result<BuiltinModel, BuildError> {
    match name {
        "cubic" => build_cubic(params),
        "duffing_vdp" => build_duffing(params),
        "lotka_volterra3" => build_lotka_volterra(params),
        "sir" => build_sir(params),
        "threshold_ou" => build_threshold_ou(params),
        _ => Err(BuildError::UnknownModel { name: name.into() }),
    }
}

/// dX = -X³ dt + X² dW. Takes no parameters.
fn build_cubic(params: &Params) -> Result<BuiltinModel, BuildError> {
    let reader = ParamReader::new("cubic", params);
    reader.finish()?;
    let model = SdeModel {
        name: "cubic".into(),
        state_dim: 1,
        noise_dim: 1,
        x0: vec![0.5],
        admissible: AdmissibleRegion::All,
        non_lipschitz_drift: false,
        drift_fn: Arc::new(|x, out| out[0] = -x[0].powi(3)),
        diffusion_fn: Arc::new(|x, out| out[0] = x[0] * x[0]),
        diffusion_grad_fn: Arc::new(|x, out| out[0] = 2.0 * x[0]),
    };
    let lyapunov = LyapunovData::new(
        1,
        Arc::new(|x: &[f64]| x[0] * x[0]),
        Arc::new(|x: &[f64], out: &mut [f64]| out[0] = 2.0 * x[0]),
        Arc::new(|_x: &[f64], out: &mut [f64]| out[0] = 2.0),
        1.0,
        4.0,
        1.0,
        1.0,
    )?;
    Ok(BuiltinModel { model, lyapunov })
}

/// Second-order oscillator written as a 2-d system; noise enters the
/// velocity through g(x1) = sqrt(eta0 + eta1 x1^4), which attains the
/// quartic growth bound with equality.
fn build_duffing(params: &Params) -> Result<BuiltinModel, BuildError> {
    let mut reader = ParamReader::new("duffing_vdp", params);
    let a1 = reader.positive("alpha1", 1.0)?;
    let a2 = reader.positive("alpha2", 1.0)?;
    let a3 = reader.positive("alpha3", 1.0)?;
    let e0 = reader.positive("eta0", 1.0)?;
    let e1 = reader.positive("eta1", 1.0)?;
    reader.finish()?;

    let g = move |x1: f64| (e0 + e1 * x1.powi(4)).sqrt();
    let model = SdeModel {
        name: "duffing_vdp".into(),
        state_dim: 2,
        noise_dim: 1,
        x0: vec![0.5, 0.5],
        admissible: AdmissibleRegion::All,
        non_lipschitz_drift: false,
        drift_fn: Arc::new(move |x, out| {
            out[0] = x[1];
            out[1] = a2 * x[1] - a1 * x[0] - a3 * x[0] * x[0] * x[1] - x[0].powi(3);
        }),
        diffusion_fn: Arc::new(move |x, out| {
            out[0] = 0.0;
            out[1] = g(x[0]);
        }),
        // Only d(sigma_21)/d(x1) is nonzero: g'(x1) = 2 eta1 x1^3 / g(x1).
        diffusion_grad_fn: Arc::new(move |x, out| {
            out[0] = 0.0;
            out[1] = 0.0;
            out[2] = 2.0 * e1 * x[0].powi(3) / g(x[0]);
            out[3] = 0.0;
        }),
    };
    let c = 5.0 * e0 + 10.0 * e1 + 2.0 * a2;
    let lyapunov = LyapunovData::new(
        2,
        Arc::new(move |x: &[f64]| 0.5 * x[0].powi(4) + a1 * x[0] * x[0] + x[1] * x[1]),
        Arc::new(move |x: &[f64], out: &mut [f64]| {
            out[0] = 2.0 * x[0].powi(3) + 2.0 * a1 * x[0];
            out[1] = 2.0 * x[1];
        }),
        Arc::new(move |x: &[f64], out: &mut [f64]| {
            out[0] = 6.0 * x[0] * x[0] + 2.0 * a1;
            out[1] = 0.0;
            out[2] = 0.0;
            out[3] = 2.0;
        }),
        1.0,
        1.0,
        c,
        1.0,
    )?;
    Ok(BuiltinModel { model, lyapunov })
}

/// Three competing species with one shared multiplicative noise source, in
/// Ito form: drift y_i (r + gamma^2/2 - sum_j a_ij y_j), diffusion gamma y_i.
/// Lives on the open positive orthant.
fn build_lotka_volterra(params: &Params) -> Result<BuiltinModel, BuildError> {
    let mut reader = ParamReader::new("lotka_volterra3", params);
    let r = reader.positive("r", 1.0)?;
    let gamma = reader.positive("gamma", 0.5)?;
    let default_a = [1.0, 0.5, 0.5, 0.5, 1.0, 0.5, 0.5, 0.5, 1.0];
    let a = reader.matrix("a", 3, 3, &default_a)?;
    reader.finish()?;
    if a.iter().any(|&v| v <= 0.0) {
        return Err(BuildError::BadParam {
            name: "a".into(),
            reason: "interaction entries must be positive".into(),
        });
    }

    let a_drift = a.clone();
    let model = SdeModel {
        name: "lotka_volterra3".into(),
        state_dim: 3,
        noise_dim: 1,
        x0: vec![0.5, 0.5, 0.5],
        admissible: AdmissibleRegion::PositiveOrthant,
        non_lipschitz_drift: false,
        drift_fn: Arc::new(move |y, out| {
            let base = r + 0.5 * gamma * gamma;
            for i in 0..3 {
                let mut inter = 0.0;
                for j in 0..3 {
                    inter += a_drift[i * 3 + j] * y[j];
                }
                out[i] = y[i] * (base - inter);
            }
        }),
        diffusion_fn: Arc::new(move |y, out| {
            for i in 0..3 {
                out[i] = gamma * y[i];
            }
        }),
        diffusion_grad_fn: Arc::new(move |_y, out| {
            out.fill(0.0);
            for i in 0..3 {
                out[i * 3 + i] = gamma;
            }
        }),
    };
    let c = 2.0 * r + 6.0 * gamma * gamma;
    let lyapunov = LyapunovData::new(
        3,
        Arc::new(|y: &[f64]| y.iter().map(|v| v * v).sum()),
        Arc::new(|y: &[f64], out: &mut [f64]| {
            for i in 0..3 {
                out[i] = 2.0 * y[i];
            }
        }),
        Arc::new(|_y: &[f64], out: &mut [f64]| {
            out.fill(0.0);
            for i in 0..3 {
                out[i * 3 + i] = 2.0;
            }
        }),
        1.0,
        1.0,
        c,
        1.0,
    )?;
    Ok(BuiltinModel { model, lyapunov })
}

/// Susceptible/infected/recovered compartments with demography; the noise
/// moves mass between the first two compartments only, so x1 + x2 is
/// noise-invariant and V = (x1 + x2 - 1)^2 has zero quotient numerator.
fn build_sir(params: &Params) -> Result<BuiltinModel, BuildError> {
    let mut reader = ParamReader::new("sir", params);
    let alpha = reader.positive("alpha", 1.0)?;
    let beta = reader.positive("beta", 0.5)?;
    let gamma = reader.positive("gamma", 0.5)?;
    let kappa = reader.positive("kappa", 0.05)?;
    reader.finish()?;

    let model = SdeModel {
        name: "sir".into(),
        state_dim: 3,
        noise_dim: 1,
        x0: vec![0.8, 0.15, 0.05],
        admissible: AdmissibleRegion::NonnegativeOrthant,
        non_lipschitz_drift: false,
        drift_fn: Arc::new(move |x, out| {
            let infect = alpha * x[0] * x[1];
            out[0] = -infect - kappa * x[0] + kappa;
            out[1] = infect - (gamma + kappa) * x[1];
            out[2] = gamma * x[1] - kappa * x[2];
        }),
        diffusion_fn: Arc::new(move |x, out| {
            let s = beta * x[0] * x[1];
            out[0] = -s;
            out[1] = s;
            out[2] = 0.0;
        }),
        // Rows 1 and 2 are exact negations, so correction terms built from
        // them cancel bitwise against each other.
        diffusion_grad_fn: Arc::new(move |x, out| {
            let p1 = beta * x[1];
            let p2 = beta * x[0];
            out[0] = -p1;
            out[1] = -p2;
            out[2] = 0.0;
            out[3] = p1;
            out[4] = p2;
            out[5] = 0.0;
            out[6] = 0.0;
            out[7] = 0.0;
            out[8] = 0.0;
        }),
    };
    let lyapunov = LyapunovData::new(
        3,
        Arc::new(|x: &[f64]| {
            let u = x[0] + x[1] - 1.0;
            u * u
        }),
        Arc::new(|x: &[f64], out: &mut [f64]| {
            let g = 2.0 * (x[0] + x[1] - 1.0);
            out[0] = g;
            out[1] = g;
            out[2] = 0.0;
        }),
        Arc::new(|_x: &[f64], out: &mut [f64]| {
            out.copy_from_slice(&[2.0, 2.0, 0.0, 2.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        }),
        1.0,
        1.0,
        4.0,
        1.0,
    )?;
    Ok(BuiltinModel { model, lyapunov })
}

/// Piecewise-linear mean reversion: on regime i (between thresholds i-1 and
/// i) the drift is beta_i - alpha_i x; diffusion is a constant. With more
/// than one regime the drift is discontinuous at the thresholds.
fn build_threshold_ou(params: &Params) -> Result<BuiltinModel, BuildError> {
    let mut reader = ParamReader::new("threshold_ou", params);
    let beta = reader.vector("beta", &[1.0])?;
    let alpha = reader.vector("alpha", &[1.0])?;
    let thresholds = reader.vector("thresholds", &[])?;
    let sigma = reader.positive("sigma", 0.5)?;
    reader.finish()?;

    if beta.is_empty() || beta.len() != alpha.len() {
        return Err(BuildError::BadParam {
            name: "alpha".into(),
            reason: format!(
                "need equally many regimes: beta has {}, alpha has {}",
                beta.len(),
                alpha.len()
            ),
        });
    }
    if thresholds.len() + 1 != beta.len() {
        return Err(BuildError::BadParam {
            name: "thresholds".into(),
            reason: format!(
                "{} regimes need {} interior thresholds, got {}",
                beta.len(),
                beta.len() - 1,
                thresholds.len()
            ),
        });
    }
    if thresholds.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(BuildError::BadParam {
            name: "thresholds".into(),
            reason: "must be strictly increasing".into(),
        });
    }
    if alpha.iter().any(|&v| v <= 0.0) {
        return Err(BuildError::BadParam {
            name: "alpha".into(),
            reason: "reversion rates must be positive".into(),
        });
    }

    let regimes = beta.len();
    let beta_max_sq = beta.iter().fold(0.0f64, |m, b| m.max(b * b));
    let th = thresholds.clone();
    let (b_drift, a_drift) = (beta.clone(), alpha.clone());
    let model = SdeModel {
        name: "threshold_ou".into(),
        state_dim: 1,
        noise_dim: 1,
        x0: vec![0.0],
        admissible: AdmissibleRegion::All,
        non_lipschitz_drift: regimes > 1,
        drift_fn: Arc::new(move |x, out| {
            // Regime i covers [threshold_{i-1}, threshold_i); a state equal
            // to a threshold belongs to the regime above it.
            let i = th.partition_point(|&t| t <= x[0]);
            out[0] = b_drift[i] - a_drift[i] * x[0];
        }),
        diffusion_fn: Arc::new(move |_x, out| out[0] = sigma),
        diffusion_grad_fn: Arc::new(|_x, out| out[0] = 0.0),
    };
    let c = 1.0 + beta_max_sq + 5.0 * sigma * sigma;
    let lyapunov = LyapunovData::new(
        1,
        Arc::new(|x: &[f64]| x[0] * x[0]),
        Arc::new(|x: &[f64], out: &mut [f64]| out[0] = 2.0 * x[0]),
        Arc::new(|_x: &[f64], out: &mut [f64]| out[0] = 2.0),
        1.0,
        1.0,
        c,
        1.0,
    )?;
    Ok(BuiltinModel { model, lyapunov })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyapunov::{audit_sde, sample_domain, DomainSpec};

    fn get(name: &str) -> BuiltinModel {
        build(name, &Params::new()).unwrap()
    }

    fn scalar(v: f64) -> ParamValue {
        ParamValue::Scalar(v)
    }

    /// Central-difference check of the stored diffusion derivative.
    fn diffusion_grad_mismatch(model: &SdeModel, x: &[f64]) -> f64 {
        let m = model.state_dim;
        let d = model.noise_dim;
        let mut analytic = vec![0.0; m * d * m];
        (model.diffusion_grad_fn)(x, &mut analytic);
        let mut worst = 0.0f64;
        let mut probe = x.to_vec();
        let mut up = vec![0.0; m * d];
        let mut down = vec![0.0; m * d];
        for k in 0..m {
            let h = 1e-5 * (1.0 + x[k].abs());
            probe[k] = x[k] + h;
            (model.diffusion_fn)(&probe, &mut up);
            probe[k] = x[k] - h;
            (model.diffusion_fn)(&probe, &mut down);
            probe[k] = x[k];
            for i in 0..m {
                for j in 0..d {
                    let numeric = (up[i * d + j] - down[i * d + j]) / (2.0 * h);
                    let stored = analytic[(i * d + j) * m + k];
                    let denom = numeric.abs().max(stored.abs()).max(1.0);
                    worst = worst.max((numeric - stored).abs() / denom);
                }
            }
        }
        worst
    }

    fn admissible_test_points(model: &SdeModel, seed: u64) -> Vec<f64> {
        // Interior points away from orthant boundaries so central
        // differences stay admissible.
        let spec = match model.admissible {
            AdmissibleRegion::All => DomainSpec::Box { lo: -3.0, hi: 3.0 },
            _ => DomainSpec::Box { lo: 0.3, hi: 2.0 },
        };
        sample_domain(&spec, model.state_dim, &model.admissible, 100, seed).unwrap()
    }

    #[test]
    fn cubic_coefficients_at_two() {
        let built = get("cubic");
        let mut out = [0.0];
        (built.model.drift_fn)(&[2.0], &mut out);
        assert_eq!(out[0], -8.0);
        (built.model.diffusion_fn)(&[2.0], &mut out);
        assert_eq!(out[0], 4.0);
        (built.model.diffusion_grad_fn)(&[2.0], &mut out);
        assert_eq!(out[0], 4.0);
    }

    #[test]
    fn every_builtin_diffusion_gradient_is_fd_consistent() {
        for name in MODEL_NAMES {
            let built = get(name);
            let pts = admissible_test_points(&built.model, 0xfeed);
            let m = built.model.state_dim;
            for p in pts.chunks(m) {
                let err = diffusion_grad_mismatch(&built.model, p);
                assert!(err < 1e-6, "{name} at {p:?}: mismatch {err}");
            }
        }
    }

    #[test]
    fn every_builtin_lyapunov_data_is_consistent() {
        for name in MODEL_NAMES {
            let built = get(name);
            let pts = admissible_test_points(&built.model, 0xbeef);
            let m = built.model.state_dim;
            for p in pts.chunks(m) {
                assert!(built.lyapunov.value(p) >= 0.0, "{name}: V < 0 at {p:?}");
                let g = built.lyapunov.gradient_fd_mismatch(p);
                assert!(g < 1e-6, "{name} at {p:?}: gradient mismatch {g}");
                assert!(built.lyapunov.hessian_asymmetry(p) <= 1e-12, "{name}");
            }
        }
    }

    #[test]
    fn sir_noise_conserves_total_mass() {
        let built = get("sir");
        let mut sigma = [0.0; 3];
        for &(x1, x2) in &[(0.8, 0.15), (0.3, 0.6), (1.5, 0.2)] {
            (built.model.diffusion_fn)(&[x1, x2, 0.05], &mut sigma);
            assert_eq!(sigma[0] + sigma[1] + sigma[2], 0.0);
        }
    }

    #[test]
    fn sir_correction_first_component_matches_hand_formula() {
        let built = get("sir");
        let (x1, x2) = (0.7, 0.4);
        let corr = built
            .model
            .stratonovich_correction(&[x1, x2, 0.1])
            .unwrap();
        let beta = 0.5;
        let expect = 0.5 * beta * beta * x1 * x2 * (x2 - x1);
        assert!((corr[0] - expect).abs() < 1e-14, "{} vs {expect}", corr[0]);
        assert!((corr[1] + expect).abs() < 1e-14);
        assert_eq!(corr[2], 0.0);
    }

    #[test]
    fn lotka_volterra_correction_at_ones() {
        // sigma has a single column gamma*y, so the correction at (1,1,1)
        // is gamma^2/2 per component.
        let built = get("lotka_volterra3");
        let corr = built.model.stratonovich_correction(&[1.0, 1.0, 1.0]).unwrap();
        let gamma = 0.5f64;
        for c in corr {
            assert!((c - 0.5 * gamma * gamma).abs() < 1e-15);
        }
    }

    #[test]
    fn threshold_ou_single_regime_is_globally_linear() {
        let built = build(
            "threshold_ou",
            &Params::from([
                ("beta".to_string(), scalar(2.0)),
                ("alpha".to_string(), scalar(3.0)),
                ("sigma".to_string(), scalar(0.25)),
            ]),
        )
        .unwrap();
        assert!(!built.model.non_lipschitz_drift);
        let mut out = [0.0];
        for &x in &[-5.0, 0.0, 1.0, 8.0] {
            (built.model.drift_fn)(&[x], &mut out);
            assert_eq!(out[0], 2.0 - 3.0 * x);
        }
    }

    #[test]
    fn threshold_ou_regime_selection_is_right_continuous() {
        let built = build(
            "threshold_ou",
            &Params::from([
                ("beta".to_string(), ParamValue::Vector(vec![1.0, -1.0, 0.0])),
                ("alpha".to_string(), ParamValue::Vector(vec![1.0, 2.0, 3.0])),
                (
                    "thresholds".to_string(),
                    ParamValue::Vector(vec![-1.0, 1.0]),
                ),
            ]),
        )
        .unwrap();
        assert!(built.model.non_lipschitz_drift);
        let drift = |x: f64| {
            let mut out = [0.0];
            (built.model.drift_fn)(&[x], &mut out);
            out[0]
        };
        assert_eq!(drift(-2.0), 1.0 - 1.0 * -2.0);
        // A state exactly at a threshold uses the regime above it.
        assert_eq!(drift(-1.0), -1.0 - 2.0 * -1.0);
        assert_eq!(drift(0.0), -1.0);
        assert_eq!(drift(1.0), 0.0 - 3.0 * 1.0);
        assert_eq!(drift(4.0), -12.0);
    }

    #[test]
    fn unknown_model_and_parameters_are_rejected() {
        assert!(matches!(
            build("pendulum", &Params::new()),
            Err(BuildError::UnknownModel { .. })
        ));
        let err = build(
            "cubic",
            &Params::from([("alpha".to_string(), scalar(1.0))]),
        );
        assert!(matches!(err, Err(BuildError::UnknownParam { .. })));
        let err = build(
            "duffing_vdp",
            &Params::from([("alpha9".to_string(), scalar(1.0))]),
        );
        assert!(matches!(err, Err(BuildError::UnknownParam { .. })));
    }

    #[test]
    fn parameter_validation_catches_bad_shapes_and_signs() {
        assert!(build(
            "lotka_volterra3",
            &Params::from([("gamma".to_string(), scalar(-0.5))]),
        )
        .is_err());
        assert!(build(
            "lotka_volterra3",
            &Params::from([("a".to_string(), ParamValue::Vector(vec![1.0; 8]))]),
        )
        .is_err());
        assert!(build(
            "threshold_ou",
            &Params::from([
                ("beta".to_string(), ParamValue::Vector(vec![1.0, 2.0])),
                ("alpha".to_string(), scalar(1.0)),
            ]),
        )
        .is_err());
        assert!(build(
            "threshold_ou",
            &Params::from([
                ("beta".to_string(), ParamValue::Vector(vec![1.0, 2.0, 3.0])),
                ("alpha".to_string(), ParamValue::Vector(vec![1.0, 2.0, 3.0])),
                ("thresholds".to_string(), ParamValue::Vector(vec![1.0, 0.0])),
            ]),
        )
        .is_err());
        assert!(build(
            "sir",
            &Params::from([("kappa".to_string(), scalar(0.0))]),
        )
        .is_err());
    }

    #[test]
    fn lotka_volterra_accepts_nested_interaction_matrix() {
        let nested = ParamValue::Matrix(vec![
            vec![2.0, 0.5, 0.5],
            vec![0.5, 2.0, 0.5],
            vec![0.5, 0.5, 2.0],
        ]);
        let built = build(
            "lotka_volterra3",
            &Params::from([("a".to_string(), nested)]),
        )
        .unwrap();
        let mut out = [0.0; 3];
        (built.model.drift_fn)(&[1.0, 1.0, 1.0], &mut out);
        // base = 1 + 0.125, interaction row sum = 3.
        for c in out {
            assert!((c - (1.125 - 3.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn builtin_audits_pass_with_declared_constants() {
        // Growth bounds re-verified numerically on representative domains.
        let cases = [
            ("cubic", DomainSpec::Box { lo: -10.0, hi: 10.0 }),
            ("duffing_vdp", DomainSpec::Box { lo: -4.0, hi: 4.0 }),
            ("lotka_volterra3", DomainSpec::Box { lo: 0.0, hi: 3.0 }),
            ("sir", DomainSpec::Box { lo: 0.0, hi: 2.0 }),
            ("threshold_ou", DomainSpec::Box { lo: -10.0, hi: 10.0 }),
        ];
        for (name, spec) in cases {
            let built = get(name);
            let report = audit_sde(&built.model, &built.lyapunov, &spec, 1000, 42).unwrap();
            assert!(
                report.all_pass(),
                "{name} audit failed: {}",
                report.to_json()
            );
        }
    }

    #[test]
    fn lotka_volterra_audit_survives_log_radial_growth_probe() {
        let built = get("lotka_volterra3");
        let report = audit_sde(
            &built.model,
            &built.lyapunov,
            &DomainSpec::LogRadial,
            1000,
            13,
        )
        .unwrap();
        assert!(report.all_pass(), "{}", report.to_json());
    }
}
