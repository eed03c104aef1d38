//! Adaptive blockwise Metropolis–Hastings in the unconstrained space.
//!
//! One sweep updates `beta`, then each row of `theta`, then `delta`, then
//! the whole vector at once. Each block has its own proposal scale, tuned during burn-in by a
//! Robbins–Monro rule on windowed acceptance rates. Halfway through burn-in
//! each block also switches to a proposal shaped by the empirical covariance
//! of its recent burn-in states. Both are frozen once burn-in ends.

use std::io::Write;
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::{from_unconstrained, to_unconstrained, LogPosterior, ModelSpec, ParameterState};
use crate::series::CountSeries;

/// Iterations per adaptation window.
pub const ADAPT_WINDOW: usize = 50;

/// Burn-in length below which proposals stay isotropic.
pub const MIN_BURN_IN_FOR_SHAPE: usize = 8 * ADAPT_WINDOW;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Proposal {
    /// Isotropic Gaussian random walk.
    RandomWalk,
    /// Langevin proposal: drift of half the squared step times the gradient.
    GradientInformed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlockSteps {
    pub beta: f64,
    pub theta: f64,
    pub delta: f64,
}

impl Default for BlockSteps {
    fn default() -> Self {
        Self {
            beta: 0.1,
            theta: 0.1,
            delta: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub burn_in: usize,
    /// Post-burn-in iterations; every `thin`-th one is kept.
    pub retained: usize,
    pub thin: usize,
    pub seed: u64,
    pub proposal: Proposal,
    pub initial_step: BlockSteps,
    pub target_accept: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            burn_in: 10_000,
            retained: 20_000,
            thin: 1,
            seed: 1,
            proposal: Proposal::RandomWalk,
            initial_step: BlockSteps::default(),
            target_accept: 0.44,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.retained == 0 {
            return Err(Error::InvalidArgument("retained must be at least 1".into()));
        }
        if self.thin == 0 {
            return Err(Error::InvalidArgument("thin must be at least 1".into()));
        }
        if self.retained / self.thin == 0 {
            return Err(Error::InvalidArgument("thin exceeds retained; no draws would be kept".into()));
        }
        let s = self.initial_step;
        if [s.beta, s.theta, s.delta].iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::InvalidArgument("initial steps must be positive".into()));
        }
        if !(self.target_accept > 0.0 && self.target_accept < 1.0) {
            return Err(Error::InvalidArgument("target_accept must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Number of draws a chain will hold.
    pub fn num_draws(&self) -> usize {
        self.retained / self.thin
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptanceRates {
    pub beta: f64,
    /// Pooled over all `theta` rows; absent when `p = 0`.
    pub theta: Option<f64>,
    pub delta: f64,
    pub joint: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorChain {
    pub draws: Vec<ParameterState>,
    pub model_spec: ModelSpec,
    pub sampler_config: SamplerConfig,
    /// Acceptance rates over the retained phase.
    pub acceptance_rates: AcceptanceRates,
    /// Proposal scales after adaptation, one per block in sweep order.
    pub final_steps: Vec<f64>,
    pub log_posterior_trace: Vec<f64>,
    pub start_date: NaiveDate,
    pub series_len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BlockKind {
    Beta,
    Theta,
    Delta,
    Joint,
}

#[derive(Debug, Clone)]
struct Block {
    kind: BlockKind,
    range: Range<usize>,
    step: f64,
    window_accepted: usize,
    windows: usize,
    accepted: u64,
    proposed: u64,
    shape: Option<Cholesky>,
    moments: Moments,
}

/// Lower-triangular factor `L` of a proposal covariance, row-major.
#[derive(Debug, Clone)]
struct Cholesky {
    dim: usize,
    lower: Vec<f64>,
}

impl Cholesky {
    fn factor(cov: &[f64], dim: usize) -> Option<Self> {
        let mut lower = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..=i {
                let dot: f64 = (0..j).map(|k| lower[i * dim + k] * lower[j * dim + k]).sum();
                let v = cov[i * dim + j] - dot;
                if i == j {
                    if !(v > 0.0) {
                        return None;
                    }
                    lower[i * dim + i] = v.sqrt();
                } else {
                    lower[i * dim + j] = v / lower[j * dim + j];
                }
            }
        }
        Some(Self { dim, lower })
    }

    /// `L v`
    fn mul(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| (0..=i).map(|k| self.lower[i * self.dim + k] * v[k]).sum())
            .collect()
    }

    /// `L^T v`
    fn mul_transpose(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim)
            .map(|i| (i..self.dim).map(|k| self.lower[k * self.dim + i] * v[k]).sum())
            .collect()
    }

    /// `L^-1 v`
    fn solve(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for i in 0..self.dim {
            let dot: f64 = (0..i).map(|k| self.lower[i * self.dim + k] * out[k]).sum();
            out[i] = (v[i] - dot) / self.lower[i * self.dim + i];
        }
        out
    }
}

/// Running mean and scatter matrix (Welford).
#[derive(Debug, Clone)]
struct Moments {
    count: usize,
    mean: Vec<f64>,
    scatter: Vec<f64>,
}

impl Moments {
    fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            scatter: vec![0.0; dim * dim],
        }
    }

    fn push(&mut self, x: &[f64]) {
        let d = self.mean.len();
        self.count += 1;
        let n = self.count as f64;
        let before: Vec<f64> = x.iter().zip(&self.mean).map(|(x, m)| x - m).collect();
        for (m, b) in self.mean.iter_mut().zip(&before) {
            *m += b / n;
        }
        for i in 0..d {
            let after_i = x[i] - self.mean[i];
            for j in 0..d {
                self.scatter[i * d + j] += before[j] * after_i;
            }
        }
    }

    /// Regularized sample covariance.
    fn covariance(&self) -> Option<Vec<f64>> {
        let d = self.mean.len();
        if self.count <= d + 1 {
            return None;
        }
        let mut cov: Vec<f64> = self.scatter.iter().map(|s| s / (self.count - 1) as f64).collect();
        let avg_var = (0..d).map(|i| cov[i * d + i]).sum::<f64>() / d as f64;
        for i in 0..d {
            cov[i * d + i] += 1e-10 + 1e-6 * avg_var;
        }
        Some(cov)
    }
}

/// Robbins–Monro update `ln(step) += k^-0.6 (rate - target)` for the `k`-th
/// adaptation window (1-based).
pub fn adapt_step(current_step: f64, accept_rate: f64, target: f64, k: usize) -> f64 {
    let gain = (k.max(1) as f64).powf(-0.6);
    (current_step.ln() + gain * (accept_rate - target)).exp()
}

fn initial_state(series: &CountSeries, spec: &ModelSpec) -> Result<ParameterState> {
    // theta = 1/2 and delta = 0 give sum_i a_i = p / (2 (p + 1)); scale mu
    // so the implied stationary mean matches the sample mean.
    let ar_mass = 0.5 * spec.p as f64 / (spec.p as f64 + 1.0);
    let level = series.mean().max(0.5) * (1.0 - ar_mass);
    ParameterState::new(
        spec,
        vec![level.ln(); spec.k1()],
        vec![vec![0.5; spec.k2()]; spec.p],
        vec![0.0; spec.p + 1],
    )
}

/// Runs one chain on the posterior of `spec` given `series`.
pub fn run_chain(series: &CountSeries, spec: &ModelSpec, config: &SamplerConfig) -> Result<PosteriorChain> {
    run_chain_tempered(series, spec, config, 1.0)
}

/// Like [`run_chain`] with the log-likelihood scaled by `likelihood_weight`.
/// A weight of 0 samples the prior, which is how sampler validity is tested.
pub fn run_chain_tempered(
    series: &CountSeries,
    spec: &ModelSpec,
    config: &SamplerConfig,
    likelihood_weight: f64,
) -> Result<PosteriorChain> {
    config.validate()?;
    let target = LogPosterior::new(spec, series)?.with_likelihood_weight(likelihood_weight);

    let mut z = to_unconstrained(&initial_state(series, spec)?);
    if !target.log_density(&z).is_finite() {
        z = to_unconstrained(&ParameterState::new(
            spec,
            vec![0.0; spec.k1()],
            vec![vec![0.5; spec.k2()]; spec.p],
            vec![0.0; spec.p + 1],
        )?);
    }
    if !target.log_density(&z).is_finite() {
        return Err(Error::Numerical("log posterior is not finite at initialization".into()));
    }

    let mut blocks = Vec::with_capacity(spec.p + 2);
    let steps = config.initial_step;
    let block = |kind, range: Range<usize>, step| Block {
        kind,
        moments: Moments::new(range.len()),
        range,
        step,
        window_accepted: 0,
        windows: 0,
        accepted: 0,
        proposed: 0,
        shape: None,
    };
    blocks.push(block(BlockKind::Beta, 0..spec.k1(), steps.beta));
    for i in 0..spec.p {
        let start = spec.k1() + i * spec.k2();
        blocks.push(block(BlockKind::Theta, start..start + spec.k2(), steps.theta));
    }
    blocks.push(block(BlockKind::Delta, spec.delta_range(), steps.delta));
    blocks.push(block(BlockKind::Joint, 0..spec.dim(), steps.beta / (spec.dim() as f64).sqrt()));

    let mut sampler = BlockSampler {
        target: &target,
        proposal: config.proposal,
        rng: ChaCha8Rng::seed_from_u64(config.seed),
        state: z,
        log_density: 0.0,
        gradient: Vec::new(),
        scratch: Vec::new(),
    };
    sampler.refresh();

    let learn_shape = config.burn_in >= MIN_BURN_IN_FOR_SHAPE;
    let collect_from = config.burn_in / 4;
    let shape_from = (config.burn_in / 2).next_multiple_of(ADAPT_WINDOW);
    for iter in 1..=config.burn_in {
        for b in blocks.iter_mut() {
            if sampler.update(b) {
                b.window_accepted += 1;
            }
            if learn_shape && iter > collect_from {
                b.moments.push(&sampler.state[b.range.clone()]);
            }
        }
        if iter % ADAPT_WINDOW == 0 {
            for b in blocks.iter_mut() {
                b.windows += 1;
                let rate = b.window_accepted as f64 / ADAPT_WINDOW as f64;
                b.step = adapt_step(b.step, rate, config.target_accept, b.windows);
                b.window_accepted = 0;
                if learn_shape && iter >= shape_from && iter < config.burn_in {
                    let dim = b.range.len();
                    if let Some(chol) = b.moments.covariance().and_then(|c| Cholesky::factor(&c, dim)) {
                        if b.shape.is_none() {
                            // restart tuning from the usual scale for a shaped walk
                            b.step = 2.38 / (dim as f64).sqrt();
                            b.windows = 0;
                        }
                        b.shape = Some(chol);
                    }
                }
            }
        }
    }

    let mut draws = Vec::with_capacity(config.num_draws());
    let mut trace = Vec::with_capacity(config.num_draws());
    for iter in 1..=config.retained {
        for b in blocks.iter_mut() {
            b.proposed += 1;
            if sampler.update(b) {
                b.accepted += 1;
            }
        }
        if iter % config.thin == 0 {
            draws.push(from_unconstrained(&sampler.state, spec)?);
            trace.push(sampler.log_density);
        }
    }

    let rate = |kind: BlockKind| -> Option<f64> {
        let (acc, prop) = blocks
            .iter()
            .filter(|b| b.kind == kind)
            .fold((0u64, 0u64), |(a, p), b| (a + b.accepted, p + b.proposed));
        (prop > 0).then(|| acc as f64 / prop as f64)
    };
    Ok(PosteriorChain {
        draws,
        model_spec: spec.clone(),
        sampler_config: config.clone(),
        acceptance_rates: AcceptanceRates {
            beta: rate(BlockKind::Beta).unwrap_or(0.0),
            theta: rate(BlockKind::Theta),
            delta: rate(BlockKind::Delta).unwrap_or(0.0),
            joint: rate(BlockKind::Joint).unwrap_or(0.0),
        },
        final_steps: blocks.iter().map(|b| b.step).collect(),
        log_posterior_trace: trace,
        start_date: series.start_date(),
        series_len: series.len(),
    })
}

/// Runs `n_chains` independent chains seeded `seed, seed + 1, ...`, returned
/// in chain order.
pub fn run_chains(
    series: &CountSeries,
    spec: &ModelSpec,
    config: &SamplerConfig,
    n_chains: usize,
    exec: Execution,
) -> Result<Vec<PosteriorChain>> {
    if n_chains == 0 {
        return Err(Error::InvalidArgument("need at least one chain".into()));
    }
    exec.map_range(n_chains, |c| {
        let cfg = SamplerConfig {
            seed: config.seed.wrapping_add(c as u64),
            ..config.clone()
        };
        run_chain(series, spec, &cfg)
    })
    .into_iter()
    .collect()
}

struct BlockSampler<'a> {
    target: &'a LogPosterior,
    proposal: Proposal,
    rng: ChaCha8Rng,
    state: Vec<f64>,
    log_density: f64,
    /// Gradient at `state`; only maintained for Langevin proposals.
    gradient: Vec<f64>,
    scratch: Vec<f64>,
}

impl BlockSampler<'_> {
    fn refresh(&mut self) {
        match self.proposal {
            Proposal::RandomWalk => self.log_density = self.target.log_density(&self.state),
            Proposal::GradientInformed => {
                let (v, g) = self.target.value_and_gradient(&self.state);
                self.log_density = v;
                self.gradient = g;
            }
        }
    }

    /// One Metropolis–Hastings update of `block`; returns whether it moved.
    fn update(&mut self, block: &Block) -> bool {
        let step = block.step;
        let range = block.range.clone();
        self.scratch.clone_from(&self.state);
        let noise: Vec<f64> = range.clone().map(|_| self.rng.sample(StandardNormal)).collect();
        let noise = match &block.shape {
            Some(l) => l.mul(&noise),
            None => noise,
        };
        match self.proposal {
            Proposal::RandomWalk => {
                for (k, e) in range.zip(&noise) {
                    self.scratch[k] += step * e;
                }
                let proposed = self.target.log_density(&self.scratch);
                let log_u = self.rng.random::<f64>().ln();
                if log_u < proposed - self.log_density {
                    std::mem::swap(&mut self.state, &mut self.scratch);
                    self.log_density = proposed;
                    true
                } else {
                    false
                }
            }
            Proposal::GradientInformed => {
                // preconditioned Langevin step with metric Sigma = L L^T
                let half_var = 0.5 * step * step;
                let precondition = |g: &[f64]| -> Vec<f64> {
                    let gb = &g[range.clone()];
                    match &block.shape {
                        Some(l) => l.mul(&l.mul_transpose(gb)),
                        None => gb.to_vec(),
                    }
                };
                let drift = precondition(&self.gradient);
                for ((k, e), d) in range.clone().zip(&noise).zip(&drift) {
                    self.scratch[k] += half_var * d + step * e;
                }
                let (proposed, grad_new) = self.target.value_and_gradient(&self.scratch);
                let log_u = self.rng.random::<f64>().ln();
                if !proposed.is_finite() {
                    return false;
                }
                // log q(to | from) up to a shared constant
                let log_q = |to: &[f64], from: &[f64], g: &[f64]| -> f64 {
                    let drift = precondition(g);
                    let diff: Vec<f64> = range
                        .clone()
                        .zip(&drift)
                        .map(|(k, d)| to[k] - from[k] - half_var * d)
                        .collect();
                    let white = match &block.shape {
                        Some(l) => l.solve(&diff),
                        None => diff,
                    };
                    -white.iter().map(|w| w * w).sum::<f64>() / (4.0 * half_var)
                };
                let log_ratio = proposed - self.log_density + log_q(&self.state, &self.scratch, &grad_new)
                    - log_q(&self.scratch, &self.state, &self.gradient);
                if log_u < log_ratio {
                    std::mem::swap(&mut self.state, &mut self.scratch);
                    self.log_density = proposed;
                    self.gradient = grad_new;
                    true
                } else {
                    false
                }
            }
        }
    }
}

/// Effective sample size by Geyer's initial positive sequence estimator.
/// A constant trace is reported as having full size.
pub fn effective_sample_size(trace: &[f64]) -> Result<f64> {
    let n = trace.len();
    if n < 10 {
        return Err(Error::SeriesTooShort { len: n, needed: 10 });
    }
    let mean = trace.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = trace.iter().map(|x| x - mean).collect();
    let autocov = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let var = autocov(0);
    if var <= 0.0 {
        return Ok(n as f64);
    }
    let mut sum = 0.0;
    let mut m = 0;
    while 2 * m + 1 < n {
        let pair = (autocov(2 * m) + autocov(2 * m + 1)) / var;
        if pair <= 0.0 {
            break;
        }
        sum += pair;
        m += 1;
    }
    let tau = (2.0 * sum - 1.0).max(1.0);
    Ok(n as f64 / tau)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainMetadata {
    pub model_spec: ModelSpec,
    pub sampler_config: SamplerConfig,
    pub chains: Vec<ChainSummary>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainSummary {
    pub chain: usize,
    pub seed: u64,
    pub draws: usize,
    pub acceptance_rates: AcceptanceRates,
    pub final_steps: Vec<f64>,
}

impl ChainMetadata {
    pub fn from_chains(chains: &[PosteriorChain]) -> Result<Self> {
        let first = chains
            .first()
            .ok_or_else(|| Error::InvalidArgument("no chains to describe".into()))?;
        Ok(Self {
            model_spec: first.model_spec.clone(),
            sampler_config: first.sampler_config.clone(),
            chains: chains
                .iter()
                .enumerate()
                .map(|(i, c)| ChainSummary {
                    chain: i,
                    seed: c.sampler_config.seed,
                    draws: c.draws.len(),
                    acceptance_rates: c.acceptance_rates.clone(),
                    final_steps: c.final_steps.clone(),
                })
                .collect(),
        })
    }
}

/// Writes draws as CSV: `chain, draw, beta_*, theta_*_*, delta_*,
/// log_posterior`, with `theta` on its constrained scale.
pub fn write_chain_csv<W: Write>(chains: &[PosteriorChain], out: W) -> Result<()> {
    let first = chains
        .first()
        .ok_or_else(|| Error::InvalidArgument("no chains to export".into()))?;
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["chain".to_string(), "draw".to_string()];
    header.extend(first.model_spec.parameter_names());
    header.push("log_posterior".into());
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(header.len());
    for (c, chain) in chains.iter().enumerate() {
        for (d, (draw, lp)) in chain.draws.iter().zip(&chain.log_posterior_trace).enumerate() {
            row.clear();
            row.push(c.to_string());
            row.push((d + 1).to_string());
            row.extend(
                draw.beta()
                    .iter()
                    .chain(draw.theta())
                    .chain(draw.delta())
                    .map(|v| v.to_string()),
            );
            row.push(lp.to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_chain_files(chains: &[PosteriorChain], csv_path: &Path, meta_path: &Path) -> Result<()> {
    write_chain_csv(chains, std::io::BufWriter::new(std::fs::File::create(csv_path)?))?;
    let meta = ChainMetadata::from_chains(chains)?;
    std::fs::write(meta_path, serde_json::to_string_pretty(&meta)? + "\n")?;
    Ok(())
}
