//! Forecast accuracy: RMSE over a set of series and leading horizons, and
//! percentage change against a benchmark.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::Hierarchy;

/// A named subset of series, given by row indices in hierarchy order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeriesGroup {
    pub name: String,
    pub indices: Vec<usize>,
}

impl SeriesGroup {
    pub fn new(name: impl Into<String>, indices: Vec<usize>) -> Self {
        Self {
            name: name.into(),
            indices,
        }
    }
}

/// Bottom, aggregated and whole-hierarchy groups.
pub fn standard_groups(h: &Hierarchy) -> Vec<SeriesGroup> {
    vec![
        SeriesGroup::new("bottom", h.bottom_range().collect()),
        SeriesGroup::new("aggregated", h.aggregate_range().collect()),
        SeriesGroup::new("whole", (0..h.n()).collect()),
    ]
}

/// Root mean squared error over `series` and horizons `1..=window`.
pub fn rmse(
    actual: &DMatrix<f64>,
    forecast: &DMatrix<f64>,
    series: &[usize],
    window: usize,
) -> Result<f64> {
    if actual.shape() != forecast.shape() {
        return Err(Error::dimension(
            "forecast vs actual",
            format!("{:?}", actual.shape()),
            format!("{:?}", forecast.shape()),
        ));
    }
    if window == 0 || window > actual.ncols() {
        return Err(Error::Validation(format!(
            "evaluation window {window} outside 1..={}",
            actual.ncols()
        )));
    }
    if series.is_empty() {
        return Err(Error::Validation("empty series group".into()));
    }
    if let Some(&bad) = series.iter().find(|&&i| i >= actual.nrows()) {
        return Err(Error::Validation(format!(
            "series index {bad} out of range for {} series",
            actual.nrows()
        )));
    }
    let mut sum = 0.0;
    for k in 0..window {
        for &i in series {
            let d = forecast[(i, k)] - actual[(i, k)];
            sum += d * d;
        }
    }
    let v = (sum / (series.len() * window) as f64).sqrt();
    if !v.is_finite() {
        return Err(Error::NonFinite("RMSE".into()));
    }
    Ok(v)
}

/// `(method - benchmark) / benchmark * 100`.
pub fn pct_change(method: f64, benchmark: f64) -> Result<f64> {
    if benchmark == 0.0 || !benchmark.is_finite() || !method.is_finite() {
        return Err(Error::Validation(format!(
            "percentage change undefined for method {method} against benchmark {benchmark}"
        )));
    }
    Ok((method - benchmark) / benchmark * 100.0)
}
