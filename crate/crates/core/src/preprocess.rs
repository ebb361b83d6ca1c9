//! Cleaning of raw SCADA records.
//!
//! Every rule marks values as missing instead of deleting rows so the grid
//! stays uniform. `zero_night` is the only rule that fills values.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scada_data::{InverterDatasheet, ScadaRecord, Tag, N_TAGS};
use crate::stats::fit_line;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    /// Relative outlier threshold on the power/irradiance line.
    pub thr: f64,
    pub max_missing_frac: f64,
    /// GHI below this (W/m²) is night.
    pub night_ghi_threshold: f64,
    pub plateau_min_run: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            thr: 0.5,
            max_missing_frac: 0.5,
            night_ghi_threshold: 5.0,
            plateau_min_run: 12,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.thr > 0.0) {
            return Err(Error::Config("thr must be > 0".into()));
        }
        if !(self.max_missing_frac > 0.0 && self.max_missing_frac < 1.0) {
            return Err(Error::Config("max_missing_frac must be in (0, 1)".into()));
        }
        if self.plateau_min_run < 2 {
            return Err(Error::Config("plateau_min_run must be >= 2".into()));
        }
        Ok(())
    }
}

/// P_AC ≈ m·GTI + b line used for outlier rejection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierFitParams {
    pub m: f64,
    pub b: f64,
    pub thr: f64,
}

impl OutlierFitParams {
    /// Least-squares line through `(gti, p_ac)` pairs.
    pub fn fit(points: impl IntoIterator<Item = (f64, f64)>, thr: f64) -> Result<Self> {
        if !(thr > 0.0) {
            return Err(Error::Config("thr must be > 0".into()));
        }
        let line = fit_line(points)?;
        Ok(OutlierFitParams {
            m: line.slope,
            b: line.intercept,
            thr,
        })
    }

    pub fn is_outlier(&self, gti: f64, p_ac: f64) -> bool {
        let fitted = self.m * gti + self.b;
        fitted > 0.0 && (p_ac - fitted).abs() > self.thr * fitted
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub range_violations: usize,
    pub night_values_filled: usize,
    pub outliers_removed: usize,
    pub plateau_values_removed: usize,
    pub sparse_day_values_removed: usize,
    pub days_dropped: Vec<NaiveDate>,
}

/// Night is known only when GHI is present and below the threshold.
pub fn is_night(rec: &ScadaRecord, night_ghi_threshold: f64) -> bool {
    rec.get(Tag::Ghi).is_some_and(|g| g < night_ghi_threshold)
}

/// Fits the power/irradiance line on samples with both tags present and GTI > 0.
pub fn fit_power_irradiance_line(records: &[ScadaRecord], thr: f64) -> Result<OutlierFitParams> {
    let points = records.iter().filter_map(|r| match (r.get(Tag::Gti), r.get(Tag::PAc)) {
        (Some(g), Some(p)) if g > 0.0 => Some((g, p)),
        _ => None,
    });
    OutlierFitParams::fit(points, thr)
}

/// Sets P_AC to missing where it strays too far from the fitted line.
///
/// Only samples with GTI > 0 are tested, the same domain the line is fitted
/// on; otherwise a positive intercept would flag every zeroed night sample.
pub fn remove_outliers(records: &mut [ScadaRecord], params: &OutlierFitParams) -> usize {
    let mut removed = 0;
    for rec in records.iter_mut() {
        if let (Some(g), Some(p)) = (rec.get(Tag::Gti), rec.get(Tag::PAc)) {
            if g > 0.0 && params.is_outlier(g, p) {
                rec.set(Tag::PAc, None);
                removed += 1;
            }
        }
    }
    removed
}

fn missing_count(records: &[ScadaRecord]) -> usize {
    records.iter().map(ScadaRecord::n_missing).sum()
}

/// Blanks whole days whose non-night samples are too sparse.
///
/// Samples with unknown GHI count as daytime. Returns the dropped dates.
pub fn drop_sparse_days(
    records: &mut [ScadaRecord],
    max_missing_frac: f64,
    night_ghi_threshold: f64,
) -> Vec<NaiveDate> {
    let mut stats: BTreeMap<NaiveDate, (usize, usize)> = BTreeMap::new();
    for rec in records.iter() {
        if is_night(rec, night_ghi_threshold) {
            continue;
        }
        let e = stats.entry(rec.date()).or_default();
        e.0 += rec.n_missing();
        e.1 += N_TAGS;
    }
    let dropped: Vec<NaiveDate> = stats
        .into_iter()
        .filter(|(_, (miss, total))| *total > 0 && *miss as f64 / *total as f64 > max_missing_frac)
        .map(|(d, _)| d)
        .collect();
    for rec in records.iter_mut() {
        if dropped.binary_search(&rec.date()).is_ok() {
            rec.values = [None; N_TAGS];
        }
    }
    dropped
}

/// Sets periodic tags to zero at night, including missing ones.
pub fn zero_night(records: &mut [ScadaRecord], night_ghi_threshold: f64) {
    for rec in records.iter_mut() {
        if is_night(rec, night_ghi_threshold) {
            for tag in Tag::ALL.into_iter().filter(|t| t.is_periodic()) {
                rec.set(tag, Some(0.0));
            }
        }
    }
}

/// Marks values outside the datasheet range as missing.
pub fn range_check(records: &mut [ScadaRecord], datasheet: &InverterDatasheet) -> usize {
    let ranges: Vec<(usize, f64, f64)> = Tag::ALL
        .into_iter()
        .filter_map(|t| datasheet.range(t).map(|r| (t.index(), r.min, r.max)))
        .collect();
    let p_ac_max = datasheet.max_active_power_kw;
    let mut n = 0;
    for rec in records.iter_mut() {
        for &(i, lo, hi) in &ranges {
            if let Some(v) = rec.values[i] {
                if v < lo || v > hi {
                    rec.values[i] = None;
                    n += 1;
                }
            }
        }
        if let Some(p) = rec.get(Tag::PAc) {
            if p > p_ac_max {
                rec.set(Tag::PAc, None);
                n += 1;
            }
        }
    }
    n
}

/// Blanks runs of at least `min_run` identical nonzero daytime values of a
/// periodic tag. Missing values and night samples break runs.
pub fn remove_plateaus(records: &mut [ScadaRecord], min_run: usize, night_ghi_threshold: f64) -> usize {
    let day: Vec<bool> = records
        .iter()
        .map(|r| !is_night(r, night_ghi_threshold))
        .collect();
    let mut removed = 0;
    for tag in Tag::ALL.into_iter().filter(|t| t.is_periodic()) {
        let i = tag.index();
        let mut start = 0;
        while start < records.len() {
            let v = match records[start].values[i] {
                Some(v) if v != 0.0 && day[start] => v,
                _ => {
                    start += 1;
                    continue;
                }
            };
            let mut end = start + 1;
            while end < records.len() && day[end] && records[end].values[i] == Some(v) {
                end += 1;
            }
            if end - start >= min_run {
                for rec in &mut records[start..end] {
                    rec.values[i] = None;
                }
                removed += end - start;
            }
            start = end;
        }
    }
    removed
}

/// Full cleaning chain with fixed outlier parameters.
pub fn apply_cleaning(
    records: &mut [ScadaRecord],
    params: &OutlierFitParams,
    datasheet: &InverterDatasheet,
    config: &PreprocessConfig,
) -> CleaningReport {
    let mut report = CleaningReport {
        range_violations: range_check(records, datasheet),
        ..Default::default()
    };
    let before = missing_count(records);
    zero_night(records, config.night_ghi_threshold);
    report.night_values_filled = before - missing_count(records);
    report.outliers_removed = remove_outliers(records, params);
    report.plateau_values_removed =
        remove_plateaus(records, config.plateau_min_run, config.night_ghi_threshold);
    let before = missing_count(records);
    report.days_dropped = drop_sparse_days(records, config.max_missing_frac, config.night_ghi_threshold);
    report.sparse_day_values_removed = missing_count(records) - before;
    report
}

/// Range check and night zeroing, then fits the outlier line on the records
/// selected by `in_fit`, then runs the full chain.
pub fn clean(
    records: &mut [ScadaRecord],
    datasheet: &InverterDatasheet,
    config: &PreprocessConfig,
    in_fit: impl Fn(&ScadaRecord) -> bool,
) -> Result<(OutlierFitParams, CleaningReport)> {
    config.validate()?;
    let mut staged: Vec<ScadaRecord> = records.iter().filter(|r| in_fit(r)).cloned().collect();
    range_check(&mut staged, datasheet);
    zero_night(&mut staged, config.night_ghi_threshold);
    let params = fit_power_irradiance_line(&staged, config.thr)?;
    let report = apply_cleaning(records, &params, datasheet, config);
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scada_data::TagRange;
    use chrono::{DateTime, Duration, TimeZone, Utc};

    fn t0() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2015, 6, 1, 0, 0, 0).unwrap()
    }

    fn rec_at(i: i64, values: [Option<f64>; N_TAGS]) -> ScadaRecord {
        ScadaRecord {
            timestamp: t0() + Duration::minutes(5 * i),
            values,
        }
    }

    fn day_values(ghi: f64) -> [Option<f64>; N_TAGS] {
        [
            Some(300.0),
            Some(600.0),
            Some(180.0),
            Some(250.0),
            Some(400.0),
            Some(175.0),
            Some(35.0),
            Some(40.0),
            Some(25.0),
            Some(ghi * 1.1),
            Some(ghi),
        ]
    }

    fn sheet() -> InverterDatasheet {
        let mut tag_ranges = BTreeMap::new();
        tag_ranges.insert("i_dc".into(), TagRange { min: 0.0, max: 600.0 });
        InverterDatasheet {
            p_nom_kw: 385.0,
            gamma_pct_per_c: 0.4,
            max_active_power_kw: 385.0,
            tag_ranges,
        }
    }

    #[test]
    fn fit_examples() {
        let pts = (1..10).map(|g| (g as f64 * 100.0, 0.3 * g as f64 * 100.0));
        let p = OutlierFitParams::fit(pts, 0.5).unwrap();
        assert!((p.m - 0.3).abs() < 1e-12 && p.b.abs() < 1e-9);
        let p = OutlierFitParams::fit([(0.0, 1.0), (1.0, 3.0)], 0.5).unwrap();
        assert!((p.m - 2.0).abs() < 1e-12 && (p.b - 1.0).abs() < 1e-12);
        let p = OutlierFitParams::fit([(5.0, 1.0), (5.0, 3.0), (5.0, 2.0)], 0.5);
        assert!(matches!(p, Err(Error::DegenerateFit(_))));
    }

    #[test]
    fn outlier_rule() {
        let p = OutlierFitParams { m: 1.0, b: 0.0, thr: 0.5 };
        assert!(p.is_outlier(100.0, 200.0));
        assert!(!p.is_outlier(100.0, 120.0));
        assert!(!p.is_outlier(100.0, 100.0));
        // non-positive fitted value is never judged
        assert!(!p.is_outlier(0.0, 50.0));

        let mut recs = vec![rec_at(0, day_values(100.0)), rec_at(1, day_values(100.0))];
        recs[0].set(Tag::Gti, Some(100.0));
        recs[0].set(Tag::PAc, Some(200.0));
        recs[1].set(Tag::Gti, None);
        recs[1].set(Tag::PAc, Some(999.0));
        assert_eq!(remove_outliers(&mut recs, &p), 1);
        assert_eq!(recs[0].get(Tag::PAc), None);
        assert_eq!(recs[1].get(Tag::PAc), Some(999.0));

        let night = OutlierFitParams { m: 1.0, b: 5.0, thr: 0.5 };
        let mut recs = vec![rec_at(0, day_values(0.0))];
        recs[0].set(Tag::Gti, Some(0.0));
        recs[0].set(Tag::PAc, Some(0.0));
        assert_eq!(remove_outliers(&mut recs, &night), 0);
    }

    #[test]
    fn sparse_day_threshold() {
        let mk = |missing_tags: usize| -> Vec<ScadaRecord> {
            (0..10)
                .map(|i| {
                    let mut v = day_values(500.0);
                    // keep ghi so samples stay daytime
                    for slot in v.iter_mut().take(missing_tags) {
                        *slot = None;
                    }
                    rec_at(i, v)
                })
                .collect()
        };
        // 6.6/11 = 60% missing
        let mut recs = mk(7);
        assert_eq!(drop_sparse_days(&mut recs, 0.5, 5.0).len(), 1);
        assert!(recs.iter().all(|r| r.n_missing() == N_TAGS));

        let mut recs = mk(0);
        assert!(drop_sparse_days(&mut recs, 0.5, 5.0).is_empty());

        // exactly half the tag-values missing: 10 samples, 5 fully missing
        let mut recs = mk(0);
        for r in recs.iter_mut().take(5) {
            r.values = [None; N_TAGS];
        }
        assert!(drop_sparse_days(&mut recs, 0.5, 5.0).is_empty());
    }

    #[test]
    fn night_zeroing() {
        let mut v = day_values(0.0);
        v[Tag::PAc.index()] = None;
        let mut night = rec_at(24, v);
        let noon = rec_at(144, day_values(800.0));
        let mut dusk_v = day_values(4.9);
        dusk_v[Tag::IAc.index()] = Some(0.2);
        let dusk = rec_at(200, dusk_v);
        let mut recs = vec![night.clone(), noon.clone(), dusk];
        zero_night(&mut recs, 5.0);
        night.set(Tag::PAc, Some(0.0));
        assert_eq!(recs[0].get(Tag::PAc), Some(0.0));
        assert_eq!(recs[0].get(Tag::VDc), Some(600.0));
        assert_eq!(recs[1], noon);
        assert_eq!(recs[2].get(Tag::IAc), Some(0.0));
        assert_eq!(recs[2].get(Tag::TMod), Some(40.0));
    }

    #[test]
    fn range_rules() {
        let ds = sheet();
        let mut recs = vec![rec_at(0, day_values(500.0)), rec_at(1, day_values(500.0))];
        recs[0].set(Tag::IDc, Some(-3.0));
        recs[1].set(Tag::PAc, Some(1.02 * 385.0));
        assert_eq!(range_check(&mut recs, &ds), 2);
        assert_eq!(recs[0].get(Tag::IDc), None);
        assert_eq!(recs[1].get(Tag::PAc), None);
        assert_eq!(recs[1].get(Tag::IDc), Some(300.0));
    }

    #[test]
    fn plateau_rules() {
        let mk = |n: usize, p: f64, ghi: f64| -> Vec<ScadaRecord> {
            (0..n as i64)
                .map(|i| {
                    let mut v = day_values(ghi + i as f64);
                    for t in [Tag::IDc, Tag::PDc, Tag::IAc] {
                        v[t.index()] = v[t.index()].map(|x| x + i as f64);
                    }
                    v[Tag::PAc.index()] = Some(p);
                    rec_at(i, v)
                })
                .collect()
        };
        let mut recs = mk(12, 200.0, 500.0);
        assert_eq!(remove_plateaus(&mut recs, 12, 5.0), 12);
        assert!(recs.iter().all(|r| r.get(Tag::PAc).is_none()));

        let mut recs = mk(11, 200.0, 500.0);
        assert_eq!(remove_plateaus(&mut recs, 12, 5.0), 0);

        let mut recs: Vec<ScadaRecord> = (0..20)
            .map(|i| {
                let mut v = day_values(0.0);
                for t in Tag::ALL.into_iter().filter(|t| t.is_periodic()) {
                    v[t.index()] = Some(0.0);
                }
                rec_at(i, v)
            })
            .collect();
        assert_eq!(remove_plateaus(&mut recs, 12, 5.0), 0);
    }
}
