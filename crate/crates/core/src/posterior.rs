//! Pointwise posterior summaries of the trend and lag-coefficient curves.

use std::io::Write;

use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::model::ModelSpec;
use crate::sampler::PosteriorChain;
use crate::spline::combine;
use crate::ParameterState;

pub const DEFAULT_GRID_POINTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendTarget {
    Mu,
    /// Lag coefficient `a_i`, 1-based.
    Ar(usize),
}

impl TrendTarget {
    pub fn name(&self) -> String {
        match self {
            TrendTarget::Mu => "mu".into(),
            TrendTarget::Ar(i) => format!("ar_{i}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendSummary {
    pub target: TrendTarget,
    pub level: f64,
    pub grid: Vec<f64>,
    pub dates: Vec<NaiveDate>,
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// `n` equispaced points covering `[0, 1]`.
pub fn default_grid(n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![0.0],
        _ => (0..n).map(|i| i as f64 / (n - 1) as f64).collect(),
    }
}

/// Calendar date of normalized time `x`: day `ceil(x T)` clamped to `[1, T]`.
pub fn date_at(start: NaiveDate, series_len: usize, x: f64) -> NaiveDate {
    let day = ((x * series_len as f64).ceil() as usize).clamp(1, series_len);
    start + Days::new(day as u64 - 1)
}

/// Empirical quantile of sorted data with linear interpolation between
/// order statistics.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn curve_values(spec: &ModelSpec, draw: &ParameterState, target: TrendTarget, mu_rows: &[f64], ar_rows: &[f64]) -> Vec<f64> {
    match target {
        TrendTarget::Mu => {
            let exp_beta: Vec<f64> = draw.beta().iter().map(|b| b.exp()).collect();
            mu_rows.chunks_exact(spec.k1()).map(|row| combine(row, &exp_beta)).collect()
        }
        TrendTarget::Ar(i) => {
            let m = draw.mixture_weights()[i - 1];
            let theta = draw.theta_row(i);
            ar_rows.chunks_exact(spec.k2()).map(|row| m * combine(row, theta)).collect()
        }
    }
}

/// Summarizes draws pooled from `chains`, which must share a model.
pub fn trend_summary_pooled(
    chains: &[PosteriorChain],
    target: TrendTarget,
    grid: &[f64],
    level: f64,
    exec: Execution,
) -> Result<TrendSummary> {
    let first = chains
        .first()
        .ok_or_else(|| Error::InvalidArgument("no chains to summarize".into()))?;
    if chains.iter().any(|c| c.model_spec != first.model_spec) {
        return Err(Error::InvalidArgument("chains were fit with different models".into()));
    }
    let spec = &first.model_spec;
    if let TrendTarget::Ar(i) = target {
        if i == 0 || i > spec.p {
            return Err(Error::IndexOutOfRange { index: i, max: spec.p });
        }
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!("level {level} must lie in (0, 1)")));
    }
    if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("grid must be non-empty and increasing".into()));
    }
    let draws: Vec<&ParameterState> = chains.iter().flat_map(|c| &c.draws).collect();
    if draws.is_empty() {
        return Err(Error::InvalidArgument("chain has no draws".into()));
    }

    let mu_rows = spec.basis_mu.design_matrix(grid)?;
    let ar_rows = spec.basis_ar.design_matrix(grid)?;
    let curves: Vec<Vec<f64>> = exec.map(&draws, |d| curve_values(spec, d, target, &mu_rows, &ar_rows));

    let alpha = 1.0 - level;
    let n = draws.len() as f64;
    let columns: Vec<(f64, f64, f64)> = exec.map_range(grid.len(), |g| {
        let mut col: Vec<f64> = curves.iter().map(|c| c[g]).collect();
        // shifting by the first value keeps a constant column exact
        let shift = col[0];
        let mean = shift + col.iter().map(|v| v - shift).sum::<f64>() / n;
        col.sort_by(f64::total_cmp);
        (mean, quantile_sorted(&col, alpha / 2.0), quantile_sorted(&col, 1.0 - alpha / 2.0))
    });

    Ok(TrendSummary {
        target,
        level,
        grid: grid.to_vec(),
        dates: grid.iter().map(|&x| date_at(first.start_date, first.series_len, x)).collect(),
        mean: columns.iter().map(|c| c.0).collect(),
        lower: columns.iter().map(|c| c.1).collect(),
        upper: columns.iter().map(|c| c.2).collect(),
    })
}

/// Posterior mean and equal-tailed `level` band of `target` on `grid`.
pub fn trend_summary(chain: &PosteriorChain, target: TrendTarget, grid: &[f64], level: f64) -> Result<TrendSummary> {
    trend_summary_pooled(std::slice::from_ref(chain), target, grid, level, Execution::default())
}

/// Fraction of grid points where `truth` lies inside the band.
pub fn posterior_band_coverage(summary: &TrendSummary, truth: &[f64]) -> Result<f64> {
    if truth.len() != summary.grid.len() {
        return Err(Error::InvalidArgument(format!(
            "truth has {} points but the grid has {}",
            truth.len(),
            summary.grid.len()
        )));
    }
    let inside = truth
        .iter()
        .zip(summary.lower.iter().zip(&summary.upper))
        .filter(|(t, (lo, hi))| *lo <= *t && *t <= *hi)
        .count();
    Ok(inside as f64 / truth.len() as f64)
}

/// CSV with columns `date, x, mean, lower, upper`.
pub fn write_trend_csv<W: Write>(summary: &TrendSummary, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["date", "x", "mean", "lower", "upper"])?;
    for g in 0..summary.grid.len() {
        w.write_record([
            summary.dates[g].to_string(),
            summary.grid[g].to_string(),
            summary.mean[g].to_string(),
            summary.lower[g].to_string(),
            summary.upper[g].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
