use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Daily counts `X_1, ..., X_T` starting at `start_date`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountSeries {
    start_date: NaiveDate,
    counts: Vec<u64>,
    label: String,
}

impl CountSeries {
    pub fn new(start_date: NaiveDate, counts: Vec<u64>, label: impl Into<String>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::SeriesTooShort { len: 0, needed: 1 });
        }
        Ok(Self {
            start_date,
            counts,
            label: label.into(),
        })
    }

    pub fn start_date(&self) -> NaiveDate {
        self.start_date
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// `X_t` for the 1-based time index `t`.
    pub fn at(&self, t: usize) -> u64 {
        self.counts[t - 1]
    }

    /// Normalized time `t / T` for the 1-based index `t`.
    pub fn normalized_time(&self, t: usize) -> f64 {
        t as f64 / self.counts.len() as f64
    }

    /// Calendar date of the 1-based index `t`.
    pub fn date_at(&self, t: usize) -> NaiveDate {
        self.start_date + Days::new(t as u64 - 1)
    }

    pub fn end_date(&self) -> NaiveDate {
        self.date_at(self.len())
    }

    pub fn mean(&self) -> f64 {
        self.counts.iter().map(|&c| c as f64).sum::<f64>() / self.len() as f64
    }
}
