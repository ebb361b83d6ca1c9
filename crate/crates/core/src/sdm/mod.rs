//! Supervision model: SOM occupancy KPI, control chart and warning levels.

pub mod kpi;
pub mod som;
pub mod warnings;

use std::collections::BTreeMap;

use chrono::{DateTime, NaiveDate, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scada_data::TagValues;

pub use kpi::{kpi, KpiDay, KpiSeries, OccupancyHistogram};
pub use som::{train_som, SomHyperParams, SomModel};
pub use warnings::{evaluate_sdm, update_warnings, SdmEvaluation, WarningConfig, WarningState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdmConfig {
    pub som: SomHyperParams,
    /// Days with fewer complete daytime samples get no KPI.
    pub min_daily_samples: usize,
    pub filter_window_days: usize,
    /// KPI days needed before the online trend becomes a line instead of a mean.
    pub trend_min_points: usize,
    /// Leading days of the chain ignored when estimating control limits.
    pub warmup_days: usize,
    /// Look-back N (days) for crediting a warning to a fault event.
    pub lookback_days: usize,
}

impl Default for SdmConfig {
    fn default() -> Self {
        SdmConfig {
            som: SomHyperParams::default(),
            min_daily_samples: 24,
            filter_window_days: 28,
            trend_min_points: 14,
            warmup_days: 28,
            lookback_days: 7,
        }
    }
}

/// One raw KPI per calendar day from the complete daytime feature rows of
/// that day. Every date between the first and last timestamp gets a record.
pub fn daily_kpi_series(
    model: &SomModel,
    timestamps: &[DateTime<Utc>],
    features: &[TagValues],
    daytime: &[bool],
    min_daily_samples: usize,
) -> Result<KpiSeries> {
    if timestamps.len() != features.len() || timestamps.len() != daytime.len() {
        return Err(Error::InvalidInput("timestamps, features and daytime mask differ in length".into()));
    }
    let (Some(first), Some(last)) = (timestamps.first(), timestamps.last()) else {
        return Ok(KpiSeries::default());
    };
    let mut per_day: BTreeMap<NaiveDate, Vec<Vec<f64>>> = BTreeMap::new();
    let mut d = first.date_naive();
    while d <= last.date_naive() {
        per_day.insert(d, Vec::new());
        d = d.succ_opt().expect("date in range");
    }
    for ((t, row), &day) in timestamps.iter().zip(features).zip(daytime) {
        if !day {
            continue;
        }
        if let Some(x) = complete(row) {
            per_day.get_mut(&t.date_naive()).expect("date pre-filled").push(x);
        }
    }
    let mut days = Vec::with_capacity(per_day.len());
    for (date, rows) in per_day {
        let kpi_raw = if rows.len() >= min_daily_samples.max(1) {
            Some(kpi(&model.train_histogram, &model.occupancy(&rows)?))
        } else {
            None
        };
        days.push((date, kpi_raw, rows.len()));
    }
    Ok(KpiSeries::from_raw(days))
}

/// Online de-trending followed by the trailing low-pass filter.
pub fn kpi_chain(series: &mut KpiSeries, config: &SdmConfig) {
    kpi::detrend_kpi_online(series, config.trend_min_points);
    kpi::filter_kpi(series, config.filter_window_days);
}

pub(crate) fn complete(row: &TagValues) -> Option<Vec<f64>> {
    row.iter().copied().collect()
}
