//! Lyapunov functionals for both coefficient shapes and the sampled-domain
//! auditor that checks the growth and trace bounds behind non-explosion.
//!
//! Two families of functionals appear. For a four-coefficient system the
//! first functional is
//!   ⟨drift, ∇V⟩ + (θ/2)[q(H) + q(G) + q(F)] + |(H+G+F)*∇V|² / (ηV)
//! with q(A) = Trace(A*∇²V A), and the second replaces the drift by
//! drift + ∇G[F + ½G] and the traces by q(H) + q(F+G). For a plain SDE
//! (b, σ) the specializations keep the single trace q(σ) and the quotient
//! |σ*∇V|²/(ηV); the second form subtracts ½(∇σ)σ from the drift.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::fd;
use crate::models::{AdmissibleRegion, CoefficientSystem, FieldFn, SdeModel};
use crate::rng::CounterRng;

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Slack applied when classifying a sample as a violation, relative to 1+V.
const VIOLATION_SLACK: f64 = 1e-9;
/// Cap on violations stored per condition; the count field is not capped.
const MAX_STORED_VIOLATIONS: usize = 50;
const MIN_AUDIT_SAMPLES: usize = 1000;

#[derive(Debug, Error)]
pub enum LyapunovError {
    #[error("constant {name} must be positive and finite, got {value}")]
    BadConstant { name: &'static str, value: f64 },
    #[error("state has {got} components, Lyapunov data expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("Lyapunov function is negative ({value}) at a sampled point")]
    NegativeValue { value: f64 },
    #[error("quotient term is singular: V = 0 with a nonzero numerator")]
    QuotientSingularity,
    #[error("invalid domain: {0}")]
    BadDomain(String),
    #[error("audit needs at least {MIN_AUDIT_SAMPLES} samples, got {0}")]
    TooFewSamples(usize),
    #[error("{what} evaluates non-finite at a sampled point; cannot audit")]
    NonFiniteEval { what: &'static str },
}

/// A candidate Lyapunov function with its derivatives and the constants the
/// audit checks against. Hessians use row-major m x m layout.
#[derive(Clone)]
pub struct LyapunovData {
    pub state_dim: usize,
    value_fn: ScalarFn,
    gradient_fn: FieldFn,
    hessian_fn: FieldFn,
    pub theta: f64,
    pub eta: f64,
    pub c_bound: f64,
    pub m_bound: f64,
}

impl LyapunovData {
    pub fn new(
        state_dim: usize,
        value_fn: ScalarFn,
        gradient_fn: FieldFn,
        hessian_fn: FieldFn,
        theta: f64,
        eta: f64,
        c_bound: f64,
        m_bound: f64,
    ) -> Result<Self, LyapunovError> {
        for (name, value) in [
            ("theta", theta),
            ("eta", eta),
            ("C", c_bound),
            ("M", m_bound),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(LyapunovError::BadConstant { name, value });
            }
        }
        Ok(Self {
            state_dim,
            value_fn,
            gradient_fn,
            hessian_fn,
            theta,
            eta,
            c_bound,
            m_bound,
        })
    }

    pub fn with_constants(
        self,
        theta: f64,
        eta: f64,
        c_bound: f64,
        m_bound: f64,
    ) -> Result<Self, LyapunovError> {
        Self::new(
            self.state_dim,
            self.value_fn,
            self.gradient_fn,
            self.hessian_fn,
            theta,
            eta,
            c_bound,
            m_bound,
        )
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        (self.value_fn)(x)
    }

    pub fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        (self.gradient_fn)(x, out);
    }

    pub fn hessian_into(&self, x: &[f64], out: &mut [f64]) {
        (self.hessian_fn)(x, out);
    }

    /// Worst relative disagreement between the stored gradient and a central
    /// difference of the value at `x`.
    pub fn gradient_fd_mismatch(&self, x: &[f64]) -> f64 {
        let m = self.state_dim;
        let mut analytic = vec![0.0; m];
        self.gradient_into(x, &mut analytic);
        let mut numeric = vec![0.0; m];
        let f = |p: &[f64]| (self.value_fn)(p);
        fd::gradient(&f, x, &mut numeric);
        fd::max_rel_mismatch(&analytic, &numeric)
    }

    /// Largest relative asymmetry |h_ij - h_ji| / max(1, |h_ij|) at `x`.
    pub fn hessian_asymmetry(&self, x: &[f64]) -> f64 {
        let m = self.state_dim;
        let mut h = vec![0.0; m * m];
        self.hessian_into(x, &mut h);
        let mut worst = 0.0f64;
        for i in 0..m {
            for j in (i + 1)..m {
                let a = h[i * m + j];
                let b = h[j * m + i];
                worst = worst.max((a - b).abs() / a.abs().max(b.abs()).max(1.0));
            }
        }
        worst
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), LyapunovError> {
        if x.len() != self.state_dim {
            return Err(LyapunovError::DimensionMismatch {
                expected: self.state_dim,
                got: x.len(),
            });
        }
        Ok(())
    }
}

/// Trace(mat*∇²V mat) summed over noise columns; `mat` is m x d row-major.
fn quad_form(mat: &[f64], hess: &[f64], m: usize, d: usize) -> f64 {
    let mut total = 0.0;
    for j in 0..d {
        let mut col = 0.0;
        for i in 0..m {
            let mut row = 0.0;
            for k in 0..m {
                row += hess[i * m + k] * mat[k * d + j];
            }
            col += mat[i * d + j] * row;
        }
        total += col;
    }
    total
}

/// |mat*∇V|² / (ηV) with the convention that a zero numerator at V = 0 gives
/// 0; a nonzero numerator there is a singularity.
fn quotient_term(
    mat: &[f64],
    grad: &[f64],
    v: f64,
    eta: f64,
    m: usize,
    d: usize,
) -> Result<f64, LyapunovError> {
    if v < 0.0 {
        return Err(LyapunovError::NegativeValue { value: v });
    }
    let mut num = 0.0;
    for j in 0..d {
        let mut s = 0.0;
        for i in 0..m {
            s += mat[i * d + j] * grad[i];
        }
        num += s * s;
    }
    if v == 0.0 {
        if num == 0.0 {
            return Ok(0.0);
        }
        return Err(LyapunovError::QuotientSingularity);
    }
    Ok(num / (eta * v))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

struct SdeEval {
    v: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
    b: Vec<f64>,
    sigma: Vec<f64>,
}

fn sde_eval(model: &SdeModel, lyap: &LyapunovData, x: &[f64]) -> SdeEval {
    let m = model.state_dim;
    let d = model.noise_dim;
    let mut e = SdeEval {
        v: lyap.value(x),
        grad: vec![0.0; m],
        hess: vec![0.0; m * m],
        b: vec![0.0; m],
        sigma: vec![0.0; m * d],
    };
    lyap.gradient_into(x, &mut e.grad);
    lyap.hessian_into(x, &mut e.hess);
    (model.drift_fn)(x, &mut e.b);
    (model.diffusion_fn)(x, &mut e.sigma);
    e
}

/// First growth functional of a plain SDE.
pub fn j1_sde(model: &SdeModel, lyap: &LyapunovData, x: &[f64]) -> Result<f64, LyapunovError> {
    lyap.check_dim(x)?;
    let (m, d) = (model.state_dim, model.noise_dim);
    let e = sde_eval(model, lyap, x);
    let q = quotient_term(&e.sigma, &e.grad, e.v, lyap.eta, m, d)?;
    Ok(dot(&e.b, &e.grad) + 0.5 * lyap.theta * quad_form(&e.sigma, &e.hess, m, d) + q)
}

/// Second growth functional of a plain SDE (drift corrected by −½(∇σ)σ).
pub fn j2_sde(model: &SdeModel, lyap: &LyapunovData, x: &[f64]) -> Result<f64, LyapunovError> {
    lyap.check_dim(x)?;
    let (m, d) = (model.state_dim, model.noise_dim);
    let e = sde_eval(model, lyap, x);
    let mut gradsig = vec![0.0; m * d * m];
    let mut sig = vec![0.0; m * d];
    let mut corr = vec![0.0; m];
    model.stratonovich_into(x, &mut gradsig, &mut sig, &mut corr);
    let drift_dot = dot(&e.b, &e.grad) - dot(&corr, &e.grad);
    let q = quotient_term(&e.sigma, &e.grad, e.v, lyap.eta, m, d)?;
    Ok(drift_dot + 0.5 * lyap.theta * quad_form(&e.sigma, &e.hess, m, d) + q)
}

/// Trace(σ*∇²Vσ) for a plain SDE.
pub fn trace_sde(model: &SdeModel, lyap: &LyapunovData, x: &[f64]) -> Result<f64, LyapunovError> {
    lyap.check_dim(x)?;
    let e = sde_eval(model, lyap, x);
    Ok(quad_form(&e.sigma, &e.hess, model.state_dim, model.noise_dim))
}

struct SysEval {
    v: f64,
    grad: Vec<f64>,
    hess: Vec<f64>,
    b: Vec<f64>,
    h: Vec<f64>,
    g: Vec<f64>,
    f: Vec<f64>,
    hgf: Vec<f64>,
    fg: Vec<f64>,
}

fn sys_eval(sys: &CoefficientSystem, lyap: &LyapunovData, x: &[f64]) -> SysEval {
    let m = sys.state_dim;
    let d = sys.noise_dim;
    let mut e = SysEval {
        v: lyap.value(x),
        grad: vec![0.0; m],
        hess: vec![0.0; m * m],
        b: vec![0.0; m],
        h: vec![0.0; m * d],
        g: vec![0.0; m * d],
        f: vec![0.0; m * d],
        hgf: vec![0.0; m * d],
        fg: vec![0.0; m * d],
    };
    lyap.gradient_into(x, &mut e.grad);
    lyap.hessian_into(x, &mut e.hess);
    (sys.drift)(x, &mut e.b);
    (sys.control_coef)(x, &mut e.h);
    (sys.smooth_coef)(x, &mut e.g);
    (sys.white_coef)(x, &mut e.f);
    for i in 0..m * d {
        e.hgf[i] = e.h[i] + e.g[i] + e.f[i];
        e.fg[i] = e.f[i] + e.g[i];
    }
    e
}

/// First growth functional of a four-coefficient system.
pub fn j1_general(
    sys: &CoefficientSystem,
    lyap: &LyapunovData,
    x: &[f64],
) -> Result<f64, LyapunovError> {
    lyap.check_dim(x)?;
    let (m, d) = (sys.state_dim, sys.noise_dim);
    let e = sys_eval(sys, lyap, x);
    let traces = quad_form(&e.h, &e.hess, m, d)
        + quad_form(&e.g, &e.hess, m, d)
        + quad_form(&e.f, &e.hess, m, d);
    let q = quotient_term(&e.hgf, &e.grad, e.v, lyap.eta, m, d)?;
    Ok(dot(&e.b, &e.grad) + 0.5 * lyap.theta * traces + q)
}

/// Second growth functional of a four-coefficient system (drift corrected by
/// the smooth-coefficient derivative term, traces with F+G).
pub fn j2_general(
    sys: &CoefficientSystem,
    lyap: &LyapunovData,
    x: &[f64],
) -> Result<f64, LyapunovError> {
    lyap.check_dim(x)?;
    let (m, d) = (sys.state_dim, sys.noise_dim);
    let e = sys_eval(sys, lyap, x);
    let mut grad_g = vec![0.0; sys.grad_len()];
    (sys.smooth_grad)(x, &mut grad_g);
    let mut amat = vec![0.0; m * d];
    for i in 0..m * d {
        amat[i] = e.f[i] + 0.5 * e.g[i];
    }
    let mut corr = vec![0.0; m];
    sys.grad_contract(&grad_g, &amat, &mut corr);
    let traces = quad_form(&e.h, &e.hess, m, d) + quad_form(&e.fg, &e.hess, m, d);
    let q = quotient_term(&e.hgf, &e.grad, e.v, lyap.eta, m, d)?;
    Ok(dot(&e.b, &e.grad) + dot(&corr, &e.grad) + 0.5 * lyap.theta * traces + q)
}

/// Trace sum q(H) + q(G) + q(F) of a four-coefficient system.
pub fn trace_mixed(
    sys: &CoefficientSystem,
    lyap: &LyapunovData,
    x: &[f64],
) -> Result<f64, LyapunovError> {
    lyap.check_dim(x)?;
    let (m, d) = (sys.state_dim, sys.noise_dim);
    let e = sys_eval(sys, lyap, x);
    Ok(quad_form(&e.h, &e.hess, m, d)
        + quad_form(&e.g, &e.hess, m, d)
        + quad_form(&e.f, &e.hess, m, d))
}

/// Trace sum q(H) + q(F+G) of a four-coefficient system.
pub fn trace_limit(
    sys: &CoefficientSystem,
    lyap: &LyapunovData,
    x: &[f64],
) -> Result<f64, LyapunovError> {
    lyap.check_dim(x)?;
    let (m, d) = (sys.state_dim, sys.noise_dim);
    let e = sys_eval(sys, lyap, x);
    Ok(quad_form(&e.h, &e.hess, m, d) + quad_form(&e.fg, &e.hess, m, d))
}

/// Where audit points are drawn from. Rejection against the admissible
/// region is applied on top of each shape.
#[derive(Clone, Debug, PartialEq)]
pub enum DomainSpec {
    /// Uniform over [lo, hi]^m.
    Box { lo: f64, hi: f64 },
    /// Uniform over the centered ball of this radius.
    Ball { radius: f64 },
    /// Uniform direction with radius log-uniform in [1e-2, 1e2], probing
    /// several orders of magnitude of growth.
    LogRadial,
}

impl DomainSpec {
    /// Accepts `box:LO:HI`, `ball:R`, `logradial`.
    pub fn parse(s: &str) -> Result<Self, LyapunovError> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |p: &str| -> Result<f64, LyapunovError> {
            p.parse::<f64>()
                .map_err(|_| LyapunovError::BadDomain(format!("bad number {p:?} in {s:?}")))
        };
        match parts.as_slice() {
            ["box", lo, hi] => {
                let (lo, hi) = (num(lo)?, num(hi)?);
                if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
                    return Err(LyapunovError::BadDomain(format!(
                        "box needs lo < hi, got {lo}:{hi}"
                    )));
                }
                Ok(DomainSpec::Box { lo, hi })
            }
            ["ball", r] => {
                let r = num(r)?;
                if !(r > 0.0 && r.is_finite()) {
                    return Err(LyapunovError::BadDomain(format!(
                        "ball needs a positive radius, got {r}"
                    )));
                }
                Ok(DomainSpec::Ball { radius: r })
            }
            ["logradial"] => Ok(DomainSpec::LogRadial),
            _ => Err(LyapunovError::BadDomain(format!(
                "unrecognized domain {s:?} (expected box:LO:HI, ball:R, or logradial)"
            ))),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            DomainSpec::Box { lo, hi } => format!("box:{lo}:{hi}"),
            DomainSpec::Ball { radius } => format!("ball:{radius}"),
            DomainSpec::LogRadial => "logradial".to_string(),
        }
    }
}

/// Draws `count` admissible points (flat, count x dim). Rejection attempts
/// are capped at 1000 per requested point.
pub fn sample_domain(
    spec: &DomainSpec,
    dim: usize,
    admissible: &AdmissibleRegion,
    count: usize,
    seed: u64,
) -> Result<Vec<f64>, LyapunovError> {
    if count == 0 {
        return Err(LyapunovError::BadDomain("empty domain sample".into()));
    }
    let rng = CounterRng::new(seed);
    let mut points = Vec::with_capacity(count * dim);
    let mut accepted = 0usize;
    let cap = count.saturating_mul(1000);
    let mut candidate = vec![0.0; dim];
    for attempt in 0..cap {
        let sub = rng.substream(attempt as u64);
        let filled = match spec {
            DomainSpec::Box { lo, hi } => {
                for (c, slot) in candidate.iter_mut().enumerate() {
                    *slot = lo + (hi - lo) * sub.uniform_at(c as u64);
                }
                true
            }
            DomainSpec::Ball { radius } => {
                // Uniform in the ball: direction from normalized Gaussians,
                // radius R u^(1/m).
                let r = radius * sub.uniform_at(1000).powf(1.0 / dim as f64);
                fill_direction(&sub, &mut candidate, r)
            }
            DomainSpec::LogRadial => {
                let lo = (1e-2f64).ln();
                let hi = (1e2f64).ln();
                let r = (lo + (hi - lo) * sub.uniform_at(1000)).exp();
                fill_direction(&sub, &mut candidate, r)
            }
        };
        if filled && admissible.contains(&candidate) {
            points.extend_from_slice(&candidate);
            accepted += 1;
            if accepted == count {
                return Ok(points);
            }
        }
    }
    Err(LyapunovError::BadDomain(format!(
        "could only draw {accepted} of {count} admissible points"
    )))
}

fn fill_direction(sub: &CounterRng, out: &mut [f64], radius: f64) -> bool {
    let mut sq = 0.0;
    for (c, slot) in out.iter_mut().enumerate() {
        *slot = sub.normal_at(c as u64);
        sq += *slot * *slot;
    }
    if sq == 0.0 {
        return false;
    }
    let scale = radius / sq.sqrt();
    for slot in out.iter_mut() {
        *slot *= scale;
    }
    true
}

#[derive(Clone, Debug, Serialize)]
pub struct Violation {
    pub x: Vec<f64>,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionAudit {
    pub sup_ratio: f64,
    #[serde(rename = "empirical_C")]
    pub empirical_c: Option<f64>,
    #[serde(rename = "empirical_M")]
    pub empirical_m: Option<f64>,
    pub pass: bool,
    pub violation_count: usize,
    pub violations: Vec<Violation>,
}

/// Audit outcome. Serializes as a map from condition name to its entry;
/// domain and sample count are context, not part of the JSON schema.
#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    #[serde(skip)]
    pub domain: String,
    #[serde(skip)]
    pub samples: usize,
    #[serde(flatten)]
    pub conditions: BTreeMap<String, ConditionAudit>,
}

impl AuditReport {
    pub fn all_pass(&self) -> bool {
        self.conditions.values().all(|c| c.pass)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report is serializable");
        s.push('\n');
        s
    }
}

/// Accumulates one condition's statistics over samples in index order.
struct CondAcc {
    /// Sup of the normalized quantity: ratio J/(1+V), or (−tr−M)/(CV) over
    /// V > 0 samples for trace conditions.
    sup_ratio: f64,
    seen: bool,
    /// Minimal constant fitting the samples: sup ratio (growth conditions)
    /// or sup(−tr − C·V) (trace conditions).
    empirical: f64,
    violations: Vec<Violation>,
    violation_count: usize,
}

impl CondAcc {
    fn new() -> Self {
        Self {
            sup_ratio: f64::NEG_INFINITY,
            seen: false,
            empirical: 0.0,
            violations: Vec::new(),
            violation_count: 0,
        }
    }

    fn record_growth(&mut self, x: &[f64], j: f64, v: f64, c: f64) {
        let ratio = j / (1.0 + v);
        self.sup_ratio = self.sup_ratio.max(ratio);
        self.seen = true;
        self.empirical = self.empirical.max(ratio);
        if ratio > c + VIOLATION_SLACK {
            self.violation_count += 1;
            if self.violations.len() < MAX_STORED_VIOLATIONS {
                self.violations.push(Violation {
                    x: x.to_vec(),
                    value: j,
                });
            }
        }
    }

    fn record_trace(&mut self, x: &[f64], tr: f64, v: f64, c: f64, m: f64) {
        if v > 0.0 {
            self.sup_ratio = self.sup_ratio.max((-tr - m) / (c * v));
            self.seen = true;
        }
        self.empirical = self.empirical.max(-tr - c * v);
        if tr < -m - c * v - VIOLATION_SLACK * (1.0 + v) {
            self.violation_count += 1;
            if self.violations.len() < MAX_STORED_VIOLATIONS {
                self.violations.push(Violation {
                    x: x.to_vec(),
                    value: tr,
                });
            }
        }
    }

    fn record_singularity(&mut self, x: &[f64]) {
        self.violation_count += 1;
        if self.violations.len() < MAX_STORED_VIOLATIONS {
            self.violations.push(Violation {
                x: x.to_vec(),
                value: 0.0,
            });
        }
    }

    fn into_growth_audit(self) -> ConditionAudit {
        ConditionAudit {
            sup_ratio: if self.seen { self.sup_ratio } else { 0.0 },
            empirical_c: Some(self.empirical.max(0.0)),
            empirical_m: None,
            pass: self.violation_count == 0,
            violation_count: self.violation_count,
            violations: self.violations,
        }
    }

    fn into_trace_audit(self) -> ConditionAudit {
        ConditionAudit {
            sup_ratio: if self.seen { self.sup_ratio } else { 0.0 },
            empirical_c: None,
            empirical_m: Some(self.empirical.max(0.0)),
            pass: self.violation_count == 0,
            violation_count: self.violation_count,
            violations: self.violations,
        }
    }

    fn into_domain_audit(self) -> ConditionAudit {
        ConditionAudit {
            sup_ratio: 0.0,
            empirical_c: None,
            empirical_m: None,
            pass: self.violation_count == 0,
            violation_count: self.violation_count,
            violations: self.violations,
        }
    }
}

fn split_singularity(r: Result<f64, LyapunovError>) -> Result<(Option<f64>, bool), LyapunovError> {
    match r {
        Ok(v) => Ok((Some(v), false)),
        Err(LyapunovError::QuotientSingularity) => Ok((None, true)),
        Err(e) => Err(e),
    }
}

fn check_audit_inputs(
    state_dim: usize,
    lyap: &LyapunovData,
    samples: usize,
) -> Result<(), LyapunovError> {
    if lyap.state_dim != state_dim {
        return Err(LyapunovError::DimensionMismatch {
            expected: state_dim,
            got: lyap.state_dim,
        });
    }
    if samples < MIN_AUDIT_SAMPLES {
        return Err(LyapunovError::TooFewSamples(samples));
    }
    Ok(())
}

/// Audits a plain SDE: growth conditions `j1`, `j2` against C(1+V), the
/// trace lower bound `trace` against −M−CV, plus `quotient_domain`
/// recording any V = 0 points with nonzero quotient numerator.
pub fn audit_sde(
    model: &SdeModel,
    lyap: &LyapunovData,
    spec: &DomainSpec,
    samples: usize,
    seed: u64,
) -> Result<AuditReport, LyapunovError> {
    check_audit_inputs(model.state_dim, lyap, samples)?;
    let m = model.state_dim;
    let points = sample_domain(spec, m, &model.admissible, samples, seed)?;

    struct P {
        v: f64,
        j1: Option<f64>,
        j2: Option<f64>,
        tr: f64,
        singular: bool,
    }
    let evals: Vec<P> = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<P, LyapunovError> {
            let x = &points[i * m..(i + 1) * m];
            let v = lyap.value(x);
            if v < 0.0 {
                return Err(LyapunovError::NegativeValue { value: v });
            }
            if !v.is_finite() {
                return Err(LyapunovError::NonFiniteEval {
                    what: "the Lyapunov function",
                });
            }
            let (j1, s1) = split_singularity(j1_sde(model, lyap, x))?;
            let (j2, s2) = split_singularity(j2_sde(model, lyap, x))?;
            let tr = trace_sde(model, lyap, x)?;
            if j1.is_some_and(|j| !j.is_finite())
                || j2.is_some_and(|j| !j.is_finite())
                || !tr.is_finite()
            {
                return Err(LyapunovError::NonFiniteEval {
                    what: "a growth or trace functional",
                });
            }
            Ok(P {
                v,
                j1,
                j2,
                tr,
                singular: s1 || s2,
            })
        })
        .collect::<Result<_, _>>()?;

    let mut a_j1 = CondAcc::new();
    let mut a_j2 = CondAcc::new();
    let mut a_tr = CondAcc::new();
    let mut a_dom = CondAcc::new();
    for (i, p) in evals.iter().enumerate() {
        let x = &points[i * m..(i + 1) * m];
        if let Some(j) = p.j1 {
            a_j1.record_growth(x, j, p.v, lyap.c_bound);
        }
        if let Some(j) = p.j2 {
            a_j2.record_growth(x, j, p.v, lyap.c_bound);
        }
        a_tr.record_trace(x, p.tr, p.v, lyap.c_bound, lyap.m_bound);
        if p.singular {
            a_dom.record_singularity(x);
        }
    }
    let mut conditions = BTreeMap::new();
    conditions.insert("j1".to_string(), a_j1.into_growth_audit());
    conditions.insert("j2".to_string(), a_j2.into_growth_audit());
    conditions.insert("trace".to_string(), a_tr.into_trace_audit());
    conditions.insert("quotient_domain".to_string(), a_dom.into_domain_audit());
    Ok(AuditReport {
        domain: spec.describe(),
        samples,
        conditions,
    })
}

/// Audits a four-coefficient system: `j1`, `j2`, and the two trace bounds
/// `trace_mixed` (all three coefficients) and `trace_limit` (H and F+G).
pub fn audit_system(
    sys: &CoefficientSystem,
    lyap: &LyapunovData,
    spec: &DomainSpec,
    samples: usize,
    seed: u64,
) -> Result<AuditReport, LyapunovError> {
    check_audit_inputs(sys.state_dim, lyap, samples)?;
    let m = sys.state_dim;
    let points = sample_domain(spec, m, &sys.admissible, samples, seed)?;

    struct P {
        v: f64,
        j1: Option<f64>,
        j2: Option<f64>,
        tr_mixed: f64,
        tr_limit: f64,
        singular: bool,
    }
    let evals: Vec<P> = (0..samples)
        .into_par_iter()
        .map(|i| -> Result<P, LyapunovError> {
            let x = &points[i * m..(i + 1) * m];
            let v = lyap.value(x);
            if v < 0.0 {
                return Err(LyapunovError::NegativeValue { value: v });
            }
            if !v.is_finite() {
                return Err(LyapunovError::NonFiniteEval {
                    what: "the Lyapunov function",
                });
            }
            let (j1, s1) = split_singularity(j1_general(sys, lyap, x))?;
            let (j2, s2) = split_singularity(j2_general(sys, lyap, x))?;
            let tr_mixed = trace_mixed(sys, lyap, x)?;
            let tr_limit = trace_limit(sys, lyap, x)?;
            if j1.is_some_and(|j| !j.is_finite())
                || j2.is_some_and(|j| !j.is_finite())
                || !tr_mixed.is_finite()
                || !tr_limit.is_finite()
            {
                return Err(LyapunovError::NonFiniteEval {
                    what: "a growth or trace functional",
                });
            }
            Ok(P {
                v,
                j1,
                j2,
                tr_mixed,
                tr_limit,
                singular: s1 || s2,
            })
        })
        .collect::<Result<_, _>>()?;

    let mut a_j1 = CondAcc::new();
    let mut a_j2 = CondAcc::new();
    let mut a_trm = CondAcc::new();
    let mut a_trl = CondAcc::new();
    let mut a_dom = CondAcc::new();
    for (i, p) in evals.iter().enumerate() {
        let x = &points[i * m..(i + 1) * m];
        if let Some(j) = p.j1 {
            a_j1.record_growth(x, j, p.v, lyap.c_bound);
        }
        if let Some(j) = p.j2 {
            a_j2.record_growth(x, j, p.v, lyap.c_bound);
        }
        a_trm.record_trace(x, p.tr_mixed, p.v, lyap.c_bound, lyap.m_bound);
        a_trl.record_trace(x, p.tr_limit, p.v, lyap.c_bound, lyap.m_bound);
        if p.singular {
            a_dom.record_singularity(x);
        }
    }
    let mut conditions = BTreeMap::new();
    conditions.insert("j1".to_string(), a_j1.into_growth_audit());
    conditions.insert("j2".to_string(), a_j2.into_growth_audit());
    conditions.insert("trace_mixed".to_string(), a_trm.into_trace_audit());
    conditions.insert("trace_limit".to_string(), a_trl.into_trace_audit());
    conditions.insert("quotient_domain".to_string(), a_dom.into_domain_audit());
    Ok(AuditReport {
        domain: spec.describe(),
        samples,
        conditions,
    })
}
