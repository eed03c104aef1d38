//! The time-varying Poisson autoregression
//!
//! ```text
//! X_t | F_{t-1} ~ Poisson(lambda_t),
//! lambda_t = mu(t/T) + sum_{i=1..p} a_i(t/T) X_{t-i}
//! ```
//!
//! with `mu(x) = sum_j exp(beta_j) B_j(x)` and
//! `a_i(x) = sum_j theta_ij M_i B_j(x)`, where the lag weights `M_i` are a
//! softmax over `delta_0..delta_p` whose slot 0 is slack mass. Together with
//! `theta_ij in [0, 1]` this keeps `mu > 0` and `sup_x sum_i a_i(x) < 1`.
//!
//! Sampling happens in an unconstrained space: `beta` and `delta` are used
//! as is and each `theta_ij` is replaced by its logit.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::series::CountSeries;
use crate::spline::{combine, BasisSpec};

/// Clamp applied to `theta` before taking the logit.
pub const THETA_EPS: f64 = 1e-8;

pub const DEFAULT_NUM_BASIS: usize = 6;
pub const DEFAULT_DEGREE: usize = 3;
pub const DEFAULT_PRIOR_VARIANCE: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Autoregressive order.
    pub p: usize,
    /// Basis for the trend `mu`.
    pub basis_mu: BasisSpec,
    /// Basis shared by every lag coefficient `a_i`.
    pub basis_ar: BasisSpec,
    /// Prior variance of each `delta_l`.
    pub c1: f64,
    /// Prior variance of each `beta_j`.
    pub c2: f64,
}

impl ModelSpec {
    pub fn new(p: usize, basis_mu: BasisSpec, basis_ar: BasisSpec, c1: f64, c2: f64) -> Result<Self> {
        for (name, c) in [("c1", c1), ("c2", c2)] {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be a positive finite variance, got {c}"
                )));
            }
        }
        Ok(Self {
            p,
            basis_mu,
            basis_ar,
            c1,
            c2,
        })
    }

    /// Cubic bases with six functions each and prior variances of 100.
    pub fn with_defaults(p: usize) -> Self {
        let basis = BasisSpec::uniform(DEFAULT_NUM_BASIS, DEFAULT_DEGREE).expect("valid default basis");
        Self {
            p,
            basis_mu: basis.clone(),
            basis_ar: basis,
            c1: DEFAULT_PRIOR_VARIANCE,
            c2: DEFAULT_PRIOR_VARIANCE,
        }
    }

    pub fn k1(&self) -> usize {
        self.basis_mu.num_basis()
    }

    pub fn k2(&self) -> usize {
        self.basis_ar.num_basis()
    }

    /// Length of the unconstrained parameter vector.
    pub fn dim(&self) -> usize {
        self.k1() + self.p * self.k2() + self.p + 1
    }

    pub(crate) fn theta_range(&self) -> std::ops::Range<usize> {
        self.k1()..self.k1() + self.p * self.k2()
    }

    pub(crate) fn delta_range(&self) -> std::ops::Range<usize> {
        let start = self.k1() + self.p * self.k2();
        start..start + self.p + 1
    }

    /// Names of the unconstrained coordinates: `beta_j`, `theta_i_j`,
    /// `delta_l`, 1-based except `delta` which starts at 0.
    pub fn parameter_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (1..=self.k1()).map(|j| format!("beta_{j}")).collect();
        for i in 1..=self.p {
            names.extend((1..=self.k2()).map(|j| format!("theta_{i}_{j}")));
        }
        names.extend((0..=self.p).map(|l| format!("delta_{l}")));
        names
    }
}

/// One point of the constrained parameter space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterState {
    beta: Vec<f64>,
    /// `p x K2`, row-major.
    theta: Vec<f64>,
    delta: Vec<f64>,
    k2: usize,
}

impl ParameterState {
    pub fn new(spec: &ModelSpec, beta: Vec<f64>, theta: Vec<Vec<f64>>, delta: Vec<f64>) -> Result<Self> {
        if beta.len() != spec.k1() {
            return Err(Error::InvalidArgument(format!(
                "beta has length {}, expected {}",
                beta.len(),
                spec.k1()
            )));
        }
        if theta.len() != spec.p || theta.iter().any(|row| row.len() != spec.k2()) {
            return Err(Error::InvalidArgument(format!(
                "theta must be {} x {}",
                spec.p,
                spec.k2()
            )));
        }
        if delta.len() != spec.p + 1 {
            return Err(Error::InvalidArgument(format!(
                "delta has length {}, expected {}",
                delta.len(),
                spec.p + 1
            )));
        }
        let theta: Vec<f64> = theta.into_iter().flatten().collect();
        if theta.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::InvalidArgument("theta entries must lie in [0, 1]".into()));
        }
        if beta.iter().chain(&delta).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("beta and delta must be finite".into()));
        }
        Ok(Self {
            beta,
            theta,
            delta,
            k2: spec.k2(),
        })
    }

    /// Builds a state without range checks on `theta`; used by tests that
    /// need to probe the prior's support.
    #[doc(hidden)]
    pub fn new_unchecked(spec: &ModelSpec, beta: Vec<f64>, theta: Vec<Vec<f64>>, delta: Vec<f64>) -> Self {
        Self {
            beta,
            theta: theta.into_iter().flatten().collect(),
            delta,
            k2: spec.k2(),
        }
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    /// All of `theta`, row-major.
    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Row `i` of `theta` for the 1-based lag `i`.
    pub fn theta_row(&self, i: usize) -> &[f64] {
        &self.theta[(i - 1) * self.k2..i * self.k2]
    }

    pub fn p(&self) -> usize {
        self.delta.len() - 1
    }

    /// Lag weights `M_1..M_p`.
    pub fn mixture_weights(&self) -> Vec<f64> {
        mixture_weights(&self.delta)
    }

    /// `mu(x)`.
    pub fn mu_at(&self, spec: &ModelSpec, x: f64) -> Result<f64> {
        let b = spec.basis_mu.eval(x)?;
        Ok(b.iter().zip(&self.beta).map(|(b, beta)| b * beta.exp()).sum())
    }

    /// `a_i(x)` for the 1-based lag `i`.
    pub fn ar_at(&self, spec: &ModelSpec, i: usize, x: f64) -> Result<f64> {
        if i == 0 || i > spec.p {
            return Err(Error::IndexOutOfRange { index: i, max: spec.p });
        }
        let b = spec.basis_ar.eval(x)?;
        let m = self.mixture_weights()[i - 1];
        Ok(m * combine(&b, self.theta_row(i)))
    }

    /// Upper bound `sum_i M_i max_j theta_ij` on `sup_x sum_i a_i(x)`.
    pub fn ar_sum_bound(&self) -> f64 {
        let m = self.mixture_weights();
        (1..=self.p())
            .map(|i| m[i - 1] * self.theta_row(i).iter().copied().fold(0.0, f64::max))
            .sum()
    }
}

/// Softmax weights `M_i = exp(delta_i) / sum_{k=0..p} exp(delta_k)` for
/// `i = 1..p`. Slot 0 only contributes to the normalizer.
pub fn mixture_weights(delta: &[f64]) -> Vec<f64> {
    let mut full = softmax(delta);
    full.remove(0);
    full
}

fn softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|d| (d - max).exp()).collect();
    let total: f64 = e.iter().sum();
    e.into_iter().map(|x| x / total).collect()
}

/// `lambda_t` for the 1-based time index `t`, defined for `p < t <= T`.
pub fn lambda_at(state: &ParameterState, spec: &ModelSpec, series: &CountSeries, t: usize) -> Result<f64> {
    if t <= spec.p || t > series.len() {
        return Err(Error::InvalidArgument(format!(
            "lambda_t needs {} <= t <= {}, got t = {t}",
            spec.p + 1,
            series.len()
        )));
    }
    let x = series.normalized_time(t);
    let mut lambda = state.mu_at(spec, x)?;
    for i in 1..=spec.p {
        lambda += state.ar_at(spec, i, x)? * series.at(t - i) as f64;
    }
    Ok(lambda)
}

/// Conditional log-likelihood of `X_{p+1..T}` given the first `p` counts.
pub fn log_likelihood(state: &ParameterState, spec: &ModelSpec, series: &CountSeries) -> Result<f64> {
    let target = LogPosterior::new(spec, series)?;
    Ok(target.log_likelihood(state))
}

fn normal_logpdf(x: f64, variance: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * variance).ln() - x * x / (2.0 * variance)
}

/// Log prior density; `-inf` when any `theta` entry leaves `[0, 1]`.
pub fn log_prior(state: &ParameterState, spec: &ModelSpec) -> f64 {
    if state.theta.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return f64::NEG_INFINITY;
    }
    let beta: f64 = state.beta.iter().map(|b| normal_logpdf(*b, spec.c2)).sum();
    let delta: f64 = state.delta.iter().map(|d| normal_logpdf(*d, spec.c1)).sum();
    beta + delta
}

pub(crate) fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// `ln(sigma(z) (1 - sigma(z)))`, the log-Jacobian of `theta = sigma(z)`.
fn log_logistic_jacobian(z: f64) -> f64 {
    -softplus(z) - softplus(-z)
}

/// Flattens a state as `[beta, logit(theta), delta]`.
pub fn to_unconstrained(state: &ParameterState) -> Vec<f64> {
    let mut z = Vec::with_capacity(state.beta.len() + state.theta.len() + state.delta.len());
    z.extend_from_slice(&state.beta);
    z.extend(state.theta.iter().map(|t| {
        let t = t.clamp(THETA_EPS, 1.0 - THETA_EPS);
        (t / (1.0 - t)).ln()
    }));
    z.extend_from_slice(&state.delta);
    z
}

pub fn from_unconstrained(z: &[f64], spec: &ModelSpec) -> Result<ParameterState> {
    if z.len() != spec.dim() {
        return Err(Error::InvalidArgument(format!(
            "unconstrained vector has length {}, expected {}",
            z.len(),
            spec.dim()
        )));
    }
    Ok(ParameterState {
        beta: z[..spec.k1()].to_vec(),
        theta: z[spec.theta_range()].iter().map(|v| logistic(*v)).collect(),
        delta: z[spec.delta_range()].to_vec(),
        k2: spec.k2(),
    })
}

/// Log posterior in unconstrained coordinates, including the logit Jacobian.
pub fn log_posterior_unconstrained(z: &[f64], spec: &ModelSpec, series: &CountSeries) -> Result<f64> {
    let target = LogPosterior::new(spec, series)?;
    check_dim(z, spec)?;
    Ok(target.log_density(z))
}

/// Gradient of [`log_posterior_unconstrained`].
pub fn grad_log_posterior_unconstrained(z: &[f64], spec: &ModelSpec, series: &CountSeries) -> Result<Vec<f64>> {
    let target = LogPosterior::new(spec, series)?;
    check_dim(z, spec)?;
    Ok(target.value_and_gradient(z).1)
}

fn check_dim(z: &[f64], spec: &ModelSpec) -> Result<()> {
    if z.len() != spec.dim() {
        return Err(Error::InvalidArgument(format!(
            "unconstrained vector has length {}, expected {}",
            z.len(),
            spec.dim()
        )));
    }
    Ok(())
}

/// Log posterior of a fixed series with the basis rows and lagged counts
/// precomputed, evaluated on unconstrained vectors.
#[derive(Debug, Clone)]
pub struct LogPosterior {
    spec: ModelSpec,
    /// `X_t` for `t = p+1..T`.
    response: Vec<f64>,
    /// `X_{t-i}` for each response row, `n x p`.
    lags: Vec<f64>,
    mu_design: Vec<f64>,
    ar_design: Vec<f64>,
    log_factorials: f64,
    likelihood_weight: f64,
}

/// Per-evaluation intermediate quantities shared by value and gradient.
struct Unpacked {
    exp_beta: Vec<f64>,
    theta: Vec<f64>,
    /// Full softmax over `delta_0..delta_p`.
    weights: Vec<f64>,
}

impl LogPosterior {
    pub fn new(spec: &ModelSpec, series: &CountSeries) -> Result<Self> {
        let t_len = series.len();
        if t_len <= spec.p {
            return Err(Error::SeriesTooShort {
                len: t_len,
                needed: spec.p + 1,
            });
        }
        let times: Vec<usize> = (spec.p + 1..=t_len).collect();
        let xs: Vec<f64> = times.iter().map(|&t| series.normalized_time(t)).collect();
        let response: Vec<f64> = times.iter().map(|&t| series.at(t) as f64).collect();
        let lags = times
            .iter()
            .flat_map(|&t| (1..=spec.p).map(move |i| series.at(t - i) as f64))
            .collect();
        let log_factorials = response.iter().map(|x| ln_gamma(x + 1.0)).sum();
        Ok(Self {
            spec: spec.clone(),
            response,
            lags,
            mu_design: spec.basis_mu.design_matrix(&xs)?,
            ar_design: spec.basis_ar.design_matrix(&xs)?,
            log_factorials,
            likelihood_weight: 1.0,
        })
    }

    /// Scales the log-likelihood term; 0 samples from the prior.
    pub fn with_likelihood_weight(mut self, weight: f64) -> Self {
        self.likelihood_weight = weight;
        self
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn unpack(&self, z: &[f64]) -> Unpacked {
        let spec = &self.spec;
        Unpacked {
            exp_beta: z[..spec.k1()].iter().map(|b| b.exp()).collect(),
            theta: z[spec.theta_range()].iter().map(|v| logistic(*v)).collect(),
            weights: softmax(&z[spec.delta_range()]),
        }
    }

    /// True when the lag coefficients can sum to one in floating point.
    fn inadmissible(&self, u: &Unpacked) -> bool {
        let k2 = self.spec.k2();
        let bound: f64 = (0..self.spec.p)
            .map(|i| u.weights[i + 1] * u.theta[i * k2..(i + 1) * k2].iter().copied().fold(0.0, f64::max))
            .sum();
        bound >= 1.0
    }

    /// Visits `(row, lambda, per-lag a_i(x_t) / M_i)` for each response row.
    fn for_each_rate(&self, u: &Unpacked, mut f: impl FnMut(usize, f64, &[f64])) {
        let (k1, k2, p) = (self.spec.k1(), self.spec.k2(), self.spec.p);
        let mut ar = vec![0.0; p];
        for r in 0..self.response.len() {
            let mut lambda = combine(&self.mu_design[r * k1..(r + 1) * k1], &u.exp_beta);
            let brow = &self.ar_design[r * k2..(r + 1) * k2];
            for i in 0..p {
                ar[i] = combine(brow, &u.theta[i * k2..(i + 1) * k2]);
                lambda += u.weights[i + 1] * ar[i] * self.lags[r * p + i];
            }
            f(r, lambda, &ar);
        }
    }

    fn log_likelihood_of(&self, u: &Unpacked) -> f64 {
        let mut ll = 0.0;
        self.for_each_rate(u, |r, lambda, _| {
            let x = self.response[r];
            ll += if x > 0.0 { x * lambda.ln() } else { 0.0 } - lambda;
        });
        let ll = ll - self.log_factorials;
        if ll.is_nan() {
            f64::NEG_INFINITY
        } else {
            ll
        }
    }

    /// Log-likelihood at a constrained state (no weight applied).
    pub fn log_likelihood(&self, state: &ParameterState) -> f64 {
        self.log_likelihood_of(&Unpacked {
            exp_beta: state.beta.iter().map(|b| b.exp()).collect(),
            theta: state.theta.clone(),
            weights: softmax(&state.delta),
        })
    }

    fn log_prior_and_jacobian(&self, z: &[f64]) -> f64 {
        let spec = &self.spec;
        let beta: f64 = z[..spec.k1()].iter().map(|b| normal_logpdf(*b, spec.c2)).sum();
        let delta: f64 = z[spec.delta_range()].iter().map(|d| normal_logpdf(*d, spec.c1)).sum();
        let jac: f64 = z[spec.theta_range()].iter().map(|v| log_logistic_jacobian(*v)).sum();
        beta + delta + jac
    }

    /// Unnormalized log posterior at an unconstrained point; `-inf` outside
    /// the numerically admissible region.
    pub fn log_density(&self, z: &[f64]) -> f64 {
        let u = self.unpack(z);
        if self.inadmissible(&u) {
            return f64::NEG_INFINITY;
        }
        let prior = self.log_prior_and_jacobian(z);
        if self.likelihood_weight == 0.0 {
            return prior;
        }
        let value = self.likelihood_weight * self.log_likelihood_of(&u) + prior;
        if value.is_nan() {
            f64::NEG_INFINITY
        } else {
            value
        }
    }

    pub fn value_and_gradient(&self, z: &[f64]) -> (f64, Vec<f64>) {
        let spec = &self.spec;
        let (k1, k2, p) = (spec.k1(), spec.k2(), spec.p);
        let u = self.unpack(z);
        let w = self.likelihood_weight;

        let mut grad = vec![0.0; spec.dim()];
        let mut ll = 0.0;
        // d ll / d M_i
        let mut dm = vec![0.0; p];
        let (g_beta, rest) = grad.split_at_mut(k1);
        let (g_theta, g_delta) = rest.split_at_mut(p * k2);

        if w != 0.0 {
            self.for_each_rate(&u, |r, lambda, ar| {
                let x = self.response[r];
                ll += if x > 0.0 { x * lambda.ln() } else { 0.0 } - lambda;
                let resid = x / lambda - 1.0;
                let mrow = &self.mu_design[r * k1..(r + 1) * k1];
                for j in 0..k1 {
                    g_beta[j] += resid * u.exp_beta[j] * mrow[j];
                }
                let brow = &self.ar_design[r * k2..(r + 1) * k2];
                for i in 0..p {
                    let lag = self.lags[r * p + i];
                    dm[i] += resid * ar[i] * lag;
                    let scale = resid * u.weights[i + 1] * lag;
                    for j in 0..k2 {
                        g_theta[i * k2 + j] += scale * brow[j];
                    }
                }
            });
            ll -= self.log_factorials;
            g_beta.iter_mut().for_each(|g| *g *= w);
            for (g, t) in g_theta.iter_mut().zip(&u.theta) {
                *g *= w * t * (1.0 - t);
            }
            let weighted: f64 = (0..p).map(|i| dm[i] * u.weights[i + 1]).sum();
            for (l, g) in g_delta.iter_mut().enumerate() {
                let own = if l >= 1 { dm[l - 1] * u.weights[l] } else { 0.0 };
                *g = w * (own - u.weights[l] * weighted);
            }
        }

        for (g, b) in g_beta.iter_mut().zip(&z[..k1]) {
            *g -= b / spec.c2;
        }
        for (g, t) in g_theta.iter_mut().zip(&u.theta) {
            *g += 1.0 - 2.0 * t;
        }
        for (g, d) in g_delta.iter_mut().zip(&z[spec.delta_range()]) {
            *g -= d / spec.c1;
        }

        let value = if self.inadmissible(&u) {
            f64::NEG_INFINITY
        } else {
            let v = w * ll + self.log_prior_and_jacobian(z);
            if v.is_nan() {
                f64::NEG_INFINITY
            } else {
                v
            }
        };
        (value, grad)
    }
}
