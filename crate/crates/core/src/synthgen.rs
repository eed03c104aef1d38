//! Forward simulation of the time-varying Poisson autoregression from known
//! trend and lag-coefficient curves.

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::CountSeries;

/// Points of the grid used for admissibility checks.
pub const ADMISSIBILITY_GRID: usize = 1000;

/// A deterministic function on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Curve {
    /// Linear interpolation through `(x, y)` knots sorted by `x`, constant
    /// beyond the end knots. Repeating an `x` gives a jump, with the later
    /// value taking effect at that `x`.
    PiecewiseLinear { points: Vec<(f64, f64)> },
    /// `offset + amplitude * sin(2 pi frequency x + phase)`.
    Sinusoid {
        offset: f64,
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
}

impl Curve {
    pub fn constant(value: f64) -> Self {
        Curve::PiecewiseLinear {
            points: vec![(0.0, value)],
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Curve::PiecewiseLinear { points } => {
                if points.is_empty() {
                    return Err(Error::Inadmissible("piecewise-linear curve needs a point".into()));
                }
                if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
                    return Err(Error::Inadmissible("curve points must be finite".into()));
                }
                if points.windows(2).any(|w| w[1].0 < w[0].0) {
                    return Err(Error::Inadmissible("curve points must be sorted by x".into()));
                }
            }
            Curve::Sinusoid {
                offset,
                amplitude,
                frequency,
                phase,
            } => {
                if [offset, amplitude, frequency, phase].iter().any(|v| !v.is_finite()) {
                    return Err(Error::Inadmissible("sinusoid parameters must be finite".into()));
                }
            }
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> f64 {
        match self {
            Curve::PiecewiseLinear { points } => {
                let k = points.partition_point(|(px, _)| *px <= x);
                if k == 0 {
                    return points[0].1;
                }
                if k == points.len() {
                    return points[k - 1].1;
                }
                let (x0, y0) = points[k - 1];
                let (x1, y1) = points[k];
                y0 + (y1 - y0) * (x - x0) / (x1 - x0)
            }
            Curve::Sinusoid {
                offset,
                amplitude,
                frequency,
                phase,
            } => offset + amplitude * (2.0 * std::f64::consts::PI * frequency * x + phase).sin(),
        }
    }
}

fn default_warmup() -> usize {
    50
}

fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid date")
}

fn default_label() -> String {
    "synthetic".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(rename = "T")]
    pub length: usize,
    pub p: usize,
    pub mu: Curve,
    /// One curve per lag.
    #[serde(default)]
    pub ar: Vec<Curve>,
    pub seed: u64,
    /// Steps simulated at `x = 0` and discarded.
    #[serde(default = "default_warmup")]
    pub warmup: usize,
    #[serde(default = "default_start")]
    pub start_date: NaiveDate,
    #[serde(default = "default_label")]
    pub label: String,
}

impl GeneratorSpec {
    pub fn new(length: usize, mu: Curve, ar: Vec<Curve>, seed: u64) -> Result<Self> {
        let spec = Self {
            length,
            p: ar.len(),
            mu,
            ar,
            seed,
            warmup: default_warmup(),
            start_date: default_start(),
            label: default_label(),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    /// Checks shape and admissibility: `min mu > 0` and `max sum_i a_i < 1`
    /// on a 1000-point grid, with every `a_i` in `[0, 1)`.
    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::Inadmissible("T must be positive".into()));
        }
        if self.ar.len() != self.p {
            return Err(Error::Inadmissible(format!(
                "p = {} but {} lag curves given",
                self.p,
                self.ar.len()
            )));
        }
        self.mu.validate()?;
        for c in &self.ar {
            c.validate()?;
        }
        for g in 0..ADMISSIBILITY_GRID {
            let x = g as f64 / (ADMISSIBILITY_GRID - 1) as f64;
            let mu = self.mu.eval(x);
            if !(mu > 0.0) {
                return Err(Error::Inadmissible(format!("mu({x}) = {mu} is not positive")));
            }
            let mut total = 0.0;
            for (i, c) in self.ar.iter().enumerate() {
                let a = c.eval(x);
                if !(0.0..1.0).contains(&a) {
                    return Err(Error::Inadmissible(format!("a_{}({x}) = {a} outside [0, 1)", i + 1)));
                }
                total += a;
            }
            if total >= 1.0 {
                return Err(Error::Inadmissible(format!("lag coefficients sum to {total} at x = {x}")));
            }
        }
        Ok(())
    }

    /// Intensity for normalized time `x` given the most recent counts,
    /// `recent[0] = X_{t-1}`.
    fn intensity(&self, x: f64, recent: &[f64]) -> f64 {
        self.mu.eval(x)
            + self
                .ar
                .iter()
                .zip(recent)
                .map(|(c, lag)| c.eval(x) * lag)
                .sum::<f64>()
    }
}

/// Simulates `T` counts. The first `warmup` steps use the curves frozen at
/// `x = 0`, starting from zero lags, and are discarded.
pub fn simulate(spec: &GeneratorSpec) -> Result<CountSeries> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut recent = vec![0.0; spec.p];
    let mut counts = Vec::with_capacity(spec.length);

    let step = |x: f64, rng: &mut ChaCha8Rng, recent: &mut Vec<f64>| -> Result<u64> {
        let lambda = spec.intensity(x, recent);
        let draw = Poisson::new(lambda)
            .map_err(|e| Error::Numerical(format!("Poisson({lambda}): {e}")))?
            .sample(rng);
        if spec.p > 0 {
            recent.rotate_right(1);
            recent[0] = draw;
        }
        Ok(draw as u64)
    };

    for _ in 0..spec.warmup {
        step(0.0, &mut rng, &mut recent)?;
    }
    for t in 1..=spec.length {
        let x = t as f64 / spec.length as f64;
        counts.push(step(x, &mut rng, &mut recent)?);
    }
    CountSeries::new(spec.start_date, counts, spec.label.clone())
}
