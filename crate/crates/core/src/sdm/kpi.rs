//! Occupancy histograms and the daily KPI control-chart series.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized BMU hit frequencies per SOM cell, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupancyHistogram {
    pub rows: usize,
    pub cols: usize,
    pub probs: Vec<f64>,
    pub sample_count: usize,
}

impl OccupancyHistogram {
    pub fn from_counts(rows: usize, cols: usize, counts: &[usize]) -> Self {
        assert_eq!(counts.len(), rows * cols, "count grid size");
        let total: usize = counts.iter().sum();
        let probs = if total == 0 {
            vec![0.0; counts.len()]
        } else {
            counts.iter().map(|&c| c as f64 / total as f64).collect()
        };
        OccupancyHistogram {
            rows,
            cols,
            probs,
            sample_count: total,
        }
    }

    /// Wraps already-normalized probabilities.
    pub fn from_probs(rows: usize, cols: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "expected {} cells, got {}",
                rows * cols,
                probs.len()
            )));
        }
        if probs.iter().any(|p| !(*p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidInput("probabilities must be finite and >= 0".into()));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(OccupancyHistogram {
            rows,
            cols,
            probs,
            sample_count: 0,
        })
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.probs[i * self.cols + j]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }
}

/// Occupancy-similarity KPI between a training and a test histogram.
///
/// `Σ P_test · (1 - |P_train - P_test|) / (1 + |P_train - P_test|)`; equals 1
/// for identical histograms and 0 for disjoint single-cell ones.
pub fn kpi(train: &OccupancyHistogram, test: &OccupancyHistogram) -> f64 {
    assert_eq!(train.probs.len(), test.probs.len(), "histogram grids differ");
    let v: f64 = train
        .probs
        .iter()
        .zip(&test.probs)
        .map(|(&ptr, &pte)| {
            let d = (ptr - pte).abs();
            pte * (1.0 - d) / (1.0 + d)
        })
        .sum();
    v.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiDay {
    pub date: NaiveDate,
    pub kpi_raw: Option<f64>,
    pub kpi_detrended: Option<f64>,
    pub kpi_filtered: Option<f64>,
    pub n_samples: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KpiSeries {
    pub days: Vec<KpiDay>,
}

impl KpiSeries {
    pub fn from_raw(raw: impl IntoIterator<Item = (NaiveDate, Option<f64>, usize)>) -> Self {
        KpiSeries {
            days: raw
                .into_iter()
                .map(|(date, kpi_raw, n_samples)| KpiDay {
                    date,
                    kpi_raw,
                    kpi_detrended: None,
                    kpi_filtered: None,
                    n_samples,
                })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn filtered(&self) -> Vec<Option<f64>> {
        self.days.iter().map(|d| d.kpi_filtered).collect()
    }

    fn day_index(&self, d: &KpiDay) -> f64 {
        (d.date - self.days[0].date).num_days() as f64
    }
}

pub const TREND_EPSILON: f64 = 1e-6;

/// Multiplicative de-trending against one least-squares line over all days.
///
/// Returns `false` (and copies raw values through) when fewer than two days
/// have a KPI.
pub fn detrend_kpi(series: &mut KpiSeries) -> bool {
    let pts: Vec<(f64, f64)> = series
        .days
        .iter()
        .filter_map(|d| d.kpi_raw.map(|k| (series.day_index(d), k)))
        .collect();
    let line = match crate::stats::fit_line(pts) {
        Ok(l) => l,
        Err(_) => {
            for d in series.days.iter_mut() {
                d.kpi_detrended = d.kpi_raw;
            }
            return false;
        }
    };
    let first = series.days.first().map(|d| d.date);
    for d in series.days.iter_mut() {
        let x = (d.date - first.unwrap()).num_days() as f64;
        let trend = line.eval(x).max(TREND_EPSILON);
        d.kpi_detrended = d.kpi_raw.map(|k| k / trend);
    }
    true
}

/// Causal variant: each day is divided by a line fitted on that day and all
/// earlier days. Until `min_points` KPI values exist the trend is their mean.
pub fn detrend_kpi_online(series: &mut KpiSeries, min_points: usize) {
    let min_points = min_points.max(2);
    let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0.0f64, 0.0, 0.0, 0.0, 0.0);
    let first = match series.days.first() {
        Some(d) => d.date,
        None => return,
    };
    for d in series.days.iter_mut() {
        let Some(k) = d.kpi_raw else {
            d.kpi_detrended = None;
            continue;
        };
        let x = (d.date - first).num_days() as f64;
        n += 1.0;
        sx += x;
        sy += k;
        sxx += x * x;
        sxy += x * k;
        let mean_y = sy / n;
        let var_x = sxx / n - (sx / n) * (sx / n);
        let trend = if (n as usize) < min_points || var_x <= 0.0 {
            mean_y
        } else {
            let slope = (sxy / n - (sx / n) * mean_y) / var_x;
            mean_y + slope * (x - sx / n)
        };
        d.kpi_detrended = Some(k / trend.max(TREND_EPSILON));
    }
}

/// Trailing moving average over up to `window` most recent non-missing
/// de-trended values; missing days stay missing.
pub fn filter_kpi(series: &mut KpiSeries, window: usize) {
    let window = window.max(1);
    let mut recent: std::collections::VecDeque<f64> = std::collections::VecDeque::with_capacity(window);
    for d in series.days.iter_mut() {
        match d.kpi_detrended {
            Some(v) => {
                if recent.len() == window {
                    recent.pop_front();
                }
                recent.push_back(v);
                d.kpi_filtered = Some(recent.iter().sum::<f64>() / recent.len() as f64);
            }
            None => d.kpi_filtered = None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(cells: usize, at: usize) -> OccupancyHistogram {
        let mut c = vec![0; cells];
        c[at] = 1;
        OccupancyHistogram::from_counts(1, cells, &c)
    }

    fn series(vals: &[Option<f64>]) -> KpiSeries {
        let d0 = NaiveDate::from_ymd_opt(2015, 1, 1).unwrap();
        KpiSeries::from_raw(
            vals.iter()
                .enumerate()
                .map(|(i, v)| (d0 + chrono::Duration::days(i as i64), *v, 100)),
        )
    }

    #[test]
    fn kpi_limits_and_hand_value() {
        let h = OccupancyHistogram::from_counts(2, 2, &[3, 1, 0, 4]);
        assert!((kpi(&h, &h) - 1.0).abs() < 1e-12);
        assert_eq!(kpi(&single(4, 0), &single(4, 3)), 0.0);

        let train = OccupancyHistogram::from_probs(1, 2, vec![0.5, 0.5]).unwrap();
        let test = OccupancyHistogram::from_probs(1, 2, vec![0.8, 0.2]).unwrap();
        assert!((kpi(&train, &test) - 0.7 / 1.3).abs() < 1e-12);
    }

    #[test]
    fn occupancy_normalization() {
        let h = OccupancyHistogram::from_counts(1, 3, &[2, 2, 0]);
        assert_eq!(h.probs, vec![0.5, 0.5, 0.0]);
        assert_eq!(h.sample_count, 4);
    }

    #[test]
    fn batch_detrend_examples() {
        let mut s = series(&[Some(0.9), Some(0.92), Some(0.94), Some(0.96)]);
        assert!(detrend_kpi(&mut s));
        assert!(s.days.iter().all(|d| (d.kpi_detrended.unwrap() - 1.0).abs() < 1e-12));

        let mut s = series(&[Some(0.97); 6]);
        detrend_kpi(&mut s);
        assert!(s.days.iter().all(|d| (d.kpi_detrended.unwrap() - 1.0).abs() < 1e-12));

        let mut s = series(&[Some(0.5), None]);
        assert!(!detrend_kpi(&mut s));
        assert_eq!(s.days[0].kpi_detrended, Some(0.5));
    }

    #[test]
    fn online_detrend_is_causal() {
        let vals: Vec<Option<f64>> = (0..40).map(|i| Some(0.95 + 0.001 * (i as f64).sin())).collect();
        let mut a = series(&vals);
        detrend_kpi_online(&mut a, 7);
        let mut longer = vals.clone();
        longer.extend([Some(0.1); 5]);
        let mut b = series(&longer);
        detrend_kpi_online(&mut b, 7);
        for i in 0..40 {
            assert_eq!(a.days[i].kpi_detrended, b.days[i].kpi_detrended);
        }
        assert_eq!(a.days[0].kpi_detrended, Some(1.0));
    }

    #[test]
    fn filter_examples() {
        let mut s = series(&[Some(0.8); 40]);
        for d in s.days.iter_mut() {
            d.kpi_detrended = d.kpi_raw;
        }
        filter_kpi(&mut s, 28);
        assert!(s.days.iter().all(|d| (d.kpi_filtered.unwrap() - 0.8).abs() < 1e-12));

        let mut vals = vec![Some(1.0); 40];
        vals[35] = Some(1.0 - 0.28);
        let mut s = series(&vals);
        for d in s.days.iter_mut() {
            d.kpi_detrended = d.kpi_raw;
        }
        filter_kpi(&mut s, 28);
        assert!((s.days[35].kpi_filtered.unwrap() - (1.0 - 0.01)).abs() < 1e-12);
        assert_eq!(s.days[0].kpi_filtered, Some(1.0));
    }
}
