//! Per-tag de-trending and z-score scaling.
//!
//! Feature order is the tag order `[i_dc, v_dc, p_dc, i_ac, v_ac, p_ac, t_int,
//! t_mod, t_amb, gti, ghi]`. Module temperature is de-trended against a
//! regression on ambient temperature, voltages are passed through, every
//! other tag gets an additive moving-average decomposition. Moving-average
//! trends only read daytime samples; night samples are still transformed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scada_data::{ScadaRecord, Tag, TagValues, N_TAGS, SAMPLES_PER_DAY};
use crate::stats::{fit_line, mean_std};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Centered MA window (samples) for training data.
    pub ma_window_train: usize,
    /// Trailing MA window (samples) for test data.
    pub ma_window_test: usize,
    /// GTI below this (W/m²) selects samples for the module-temperature fit.
    pub gti_low_threshold: f64,
    /// |T_fit| below this (°C) yields a missing value.
    pub temp_fit_epsilon: f64,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            ma_window_train: SAMPLES_PER_DAY,
            ma_window_test: SAMPLES_PER_DAY,
            gti_low_threshold: 50.0,
            temp_fit_epsilon: 1e-6,
        }
    }
}

impl FeatureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.ma_window_train < 2 || self.ma_window_test < 2 {
            return Err(Error::Config("moving-average windows must be >= 2 samples".into()));
        }
        Ok(())
    }
}

/// `T_fit = slope * T_amb + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TempDetrendModel {
    pub slope: f64,
    pub intercept: f64,
    pub gti_low_threshold: f64,
}

impl TempDetrendModel {
    pub fn fitted(&self, t_amb: f64) -> f64 {
        self.slope * t_amb + self.intercept
    }

    /// `(T_mod - T_fit) / T_fit`, `None` when |T_fit| < epsilon.
    pub fn detrend(&self, t_mod: f64, t_amb: f64, epsilon: f64) -> Option<f64> {
        let fit = self.fitted(t_amb);
        (fit.abs() >= epsilon).then(|| (t_mod - fit) / fit)
    }
}

pub fn fit_temp_detrend(records: &[ScadaRecord], gti_low_threshold: f64) -> Result<TempDetrendModel> {
    let points = records.iter().filter_map(|r| {
        match (r.get(Tag::Gti), r.get(Tag::TAmb), r.get(Tag::TMod)) {
            (Some(g), Some(ta), Some(tm)) if g < gti_low_threshold => Some((ta, tm)),
            _ => None,
        }
    });
    let line = fit_line(points).map_err(|e| match e {
        Error::InsufficientData(m) => {
            Error::InsufficientData(format!("module temperature fit on low-GTI samples: {m}"))
        }
        other => other,
    })?;
    Ok(TempDetrendModel {
        slope: line.slope,
        intercept: line.intercept,
        gti_low_threshold,
    })
}

pub fn apply_temp_detrend(
    records: &[ScadaRecord],
    model: &TempDetrendModel,
    epsilon: f64,
) -> Vec<Option<f64>> {
    records
        .iter()
        .map(|r| match (r.get(Tag::TMod), r.get(Tag::TAmb)) {
            (Some(tm), Some(ta)) => model.detrend(tm, ta, epsilon),
            _ => None,
        })
        .collect()
}

struct Prefix {
    sum: Vec<f64>,
    count: Vec<usize>,
}

impl Prefix {
    fn new(series: &[Option<f64>]) -> Self {
        let mut sum = Vec::with_capacity(series.len() + 1);
        let mut count = Vec::with_capacity(series.len() + 1);
        sum.push(0.0);
        count.push(0);
        for v in series {
            sum.push(sum.last().unwrap() + v.unwrap_or(0.0));
            count.push(count.last().unwrap() + usize::from(v.is_some()));
        }
        Prefix { sum, count }
    }

    /// Sum and count over `lo..hi`.
    fn range(&self, lo: usize, hi: usize) -> (f64, f64) {
        (self.sum[hi] - self.sum[lo], (self.count[hi] - self.count[lo]) as f64)
    }
}

/// Centered moving average of the observed values, truncated at the edges.
///
/// Odd windows use equal weights; even windows use the classical 2×w average
/// (half weight on both end points), which keeps linear series unchanged.
pub fn centered_moving_average(series: &[Option<f64>], window: usize) -> Vec<Option<f64>> {
    let n = series.len();
    let prefix = Prefix::new(series);
    let half = window / 2;
    (0..n)
        .map(|i| {
            let (sum, weight) = if window % 2 == 1 {
                prefix.range(i.saturating_sub(half), (i + half + 1).min(n))
            } else {
                let (mut s, mut w) = prefix.range(
                    (i + 1).saturating_sub(half).min(i),
                    (i + half).min(n),
                );
                for j in [i.checked_sub(half), Some(i + half).filter(|&j| j < n)]
                    .into_iter()
                    .flatten()
                {
                    if let Some(v) = series[j] {
                        s += 0.5 * v;
                        w += 0.5;
                    }
                }
                (s, w)
            };
            (weight > 0.0).then(|| sum / weight)
        })
        .collect()
}

/// Trailing mean over `window` samples ending at each index (inclusive).
pub fn trailing_moving_average(series: &[Option<f64>], window: usize) -> Vec<Option<f64>> {
    let prefix = Prefix::new(series);
    (0..series.len())
        .map(|i| {
            let (sum, count) = prefix.range((i + 1).saturating_sub(window), i + 1);
            (count > 0.0).then(|| sum / count)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub trend: Vec<Option<f64>>,
    pub detrended: Vec<Option<f64>>,
}

fn subtract(series: &[Option<f64>], trend: &[Option<f64>]) -> Vec<Option<f64>> {
    series
        .iter()
        .zip(trend)
        .map(|(v, t)| Some((*v)? - (*t)?))
        .collect()
}

/// Additive decomposition with a centered moving-average trend.
pub fn ma_detrend_train(series: &[Option<f64>], window: usize) -> Decomposition {
    let trend = centered_moving_average(series, window);
    let detrended = subtract(series, &trend);
    Decomposition { trend, detrended }
}

/// Causal de-trending: subtracts the trailing mean of the window ending at t.
pub fn ma_detrend_test(series: &[Option<f64>], window: usize) -> Vec<Option<f64>> {
    subtract(series, &trailing_moving_average(series, window))
}

/// Training-set mean and population standard deviation per tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingParams {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

pub fn fit_scaler(rows: &[TagValues]) -> Result<ScalingParams> {
    let mut mean = Vec::with_capacity(N_TAGS);
    let mut std = Vec::with_capacity(N_TAGS);
    for tag in Tag::ALL {
        let vals: Vec<f64> = rows.iter().filter_map(|r| r[tag.index()]).collect();
        let (m, s) = mean_std(&vals)
            .ok_or_else(|| Error::InsufficientData(format!("no observed values for tag {}", tag.name())))?;
        if !(s > 0.0) {
            return Err(Error::DegenerateFit(format!(
                "tag {} has zero standard deviation",
                tag.name()
            )));
        }
        mean.push(m);
        std.push(s);
    }
    Ok(ScalingParams { mean, std })
}

impl ScalingParams {
    pub fn apply(&self, row: &TagValues) -> TagValues {
        let mut out = [None; N_TAGS];
        for (j, slot) in out.iter_mut().enumerate() {
            *slot = row[j].map(|x| (x - self.mean[j]) / self.std[j]);
        }
        out
    }

    pub fn invert(&self, row: &[f64]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(j, z)| z * self.std[j] + self.mean[j])
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetrendMode {
    /// Centered windows, for offline training data.
    Centered,
    /// Trailing windows, for streaming test data.
    Trailing,
}

/// Fitted de-trending and scaling for one inverter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureModel {
    pub temp: TempDetrendModel,
    pub scaler: ScalingParams,
    pub config: FeatureConfig,
    pub night_ghi_threshold: f64,
}

/// GHI present and at or above the night threshold.
pub fn is_daytime(rec: &ScadaRecord, night_ghi_threshold: f64) -> bool {
    rec.get(Tag::Ghi).is_some_and(|g| g >= night_ghi_threshold)
}

fn detrend_records(
    records: &[ScadaRecord],
    temp: &TempDetrendModel,
    config: &FeatureConfig,
    night_ghi_threshold: f64,
    mode: DetrendMode,
) -> Vec<TagValues> {
    let day: Vec<bool> = records
        .iter()
        .map(|r| is_daytime(r, night_ghi_threshold))
        .collect();
    let mut out = vec![[None; N_TAGS]; records.len()];
    for tag in Tag::ALL {
        let j = tag.index();
        let column: Vec<Option<f64>> = match tag {
            Tag::VDc | Tag::VAc => records.iter().map(|r| r.values[j]).collect(),
            Tag::TMod => apply_temp_detrend(records, temp, config.temp_fit_epsilon),
            _ => {
                let series: Vec<Option<f64>> = records.iter().map(|r| r.values[j]).collect();
                let masked: Vec<Option<f64>> = series
                    .iter()
                    .zip(&day)
                    .map(|(v, d)| v.filter(|_| *d))
                    .collect();
                let trend = match mode {
                    DetrendMode::Centered => centered_moving_average(&masked, config.ma_window_train),
                    DetrendMode::Trailing => trailing_moving_average(&masked, config.ma_window_test),
                };
                subtract(&series, &trend)
            }
        };
        for (row, v) in out.iter_mut().zip(column) {
            row[j] = v;
        }
    }
    out
}

impl FeatureModel {
    /// Fits the temperature regression and the scaler on training records.
    /// The scaler sees daytime samples only.
    pub fn fit(records: &[ScadaRecord], config: &FeatureConfig, night_ghi_threshold: f64) -> Result<Self> {
        config.validate()?;
        let temp = fit_temp_detrend(records, config.gti_low_threshold)?;
        let detrended = detrend_records(records, &temp, config, night_ghi_threshold, DetrendMode::Centered);
        let daytime: Vec<TagValues> = detrended
            .into_iter()
            .zip(records)
            .filter(|(_, r)| is_daytime(r, night_ghi_threshold))
            .map(|(row, _)| row)
            .collect();
        let scaler = fit_scaler(&daytime)?;
        Ok(FeatureModel {
            temp,
            scaler,
            config: config.clone(),
            night_ghi_threshold,
        })
    }

    pub fn detrend(&self, records: &[ScadaRecord], mode: DetrendMode) -> Vec<TagValues> {
        detrend_records(records, &self.temp, &self.config, self.night_ghi_threshold, mode)
    }

    /// De-trended and scaled feature rows, one per record.
    pub fn transform(&self, records: &[ScadaRecord], mode: DetrendMode) -> Vec<TagValues> {
        self.detrend(records, mode)
            .iter()
            .map(|row| self.scaler.apply(row))
            .collect()
    }

    pub fn is_daytime(&self, rec: &ScadaRecord) -> bool {
        is_daytime(rec, self.night_ghi_threshold)
    }
}
