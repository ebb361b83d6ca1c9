//! Four-level warning machine on the filtered KPI and its event-level scoring.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics_econ::{ConfusionCounts, Metrics};

/// Control limits derived from the filtered KPI of the training period.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WarningConfig {
    pub mu_train: f64,
    pub sigma_train: f64,
    /// `mu - 3 sigma`
    pub tau3: f64,
    /// `mu - 5 sigma`
    pub tau5: f64,
}

impl WarningConfig {
    pub fn new(mu_train: f64, sigma_train: f64) -> Result<Self> {
        if !(sigma_train > 0.0) || !mu_train.is_finite() || !sigma_train.is_finite() {
            return Err(Error::Numeric(format!(
                "training KPI spread must be finite and > 0 (mu = {mu_train}, sigma = {sigma_train})"
            )));
        }
        Ok(WarningConfig {
            mu_train,
            sigma_train,
            tau3: mu_train - 3.0 * sigma_train,
            tau5: mu_train - 5.0 * sigma_train,
        })
    }

    pub fn from_training(filtered: &[f64]) -> Result<Self> {
        let (mu, sigma) = crate::stats::mean_std(filtered)
            .ok_or_else(|| Error::InsufficientData("no filtered training KPI values".into()))?;
        Self::new(mu, sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WarningState {
    /// Highest active level, 0..=4.
    pub level: u8,
    /// Consecutive days the level-1 condition has held.
    pub below_tau3_run: u32,
    /// Consecutive days the level-3 condition has held.
    pub below_tau5_run: u32,
}

/// Runs the warning rules day by day.
///
/// Level 1: filtered KPI below `tau3` and falling. Level 2: level 1 on two
/// consecutive days. Levels 3/4: the same at `tau5`. The derivative is the
/// first difference to the previous day; a missing day resets everything.
pub fn update_warnings(filtered: &[Option<f64>], config: &WarningConfig) -> Vec<WarningState> {
    let mut out = Vec::with_capacity(filtered.len());
    let mut prev: Option<f64> = None;
    let mut state = WarningState::default();
    for f in filtered {
        let Some(v) = *f else {
            state = WarningState::default();
            prev = None;
            out.push(state);
            continue;
        };
        if v >= config.tau3 {
            state = WarningState::default();
        } else {
            let falling = prev.is_some_and(|p| v - p < 0.0);
            let c1 = falling;
            let c3 = falling && v < config.tau5;
            state.below_tau3_run = if c1 { state.below_tau3_run + 1 } else { 0 };
            state.below_tau5_run = if c3 { state.below_tau5_run + 1 } else { 0 };
            state.level = match (state.below_tau5_run, state.below_tau3_run) {
                (r5, _) if r5 >= 2 => 4,
                (r5, _) if r5 >= 1 => 3,
                (_, r3) if r3 >= 2 => 2,
                (_, r3) if r3 >= 1 => 1,
                _ => 0,
            };
        }
        prev = Some(v);
        out.push(state);
    }
    out
}

/// A maximal run of consecutive fault days, `[start, end]` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultEventSpan {
    pub start: usize,
    pub end: usize,
    pub credited: bool,
}

/// Finds fault events and credits each one if a warning fired on any day in
/// `[start - lookback_days, start]`.
pub fn credited_events(levels: &[u8], fault_days: &[bool], lookback_days: usize) -> Vec<FaultEventSpan> {
    let mut events = Vec::new();
    let mut i = 0;
    while i < fault_days.len() {
        if !fault_days[i] {
            i += 1;
            continue;
        }
        let start = i;
        while i + 1 < fault_days.len() && fault_days[i + 1] {
            i += 1;
        }
        let lo = start.saturating_sub(lookback_days);
        let credited = levels[lo..=start.min(levels.len().saturating_sub(1))]
            .iter()
            .any(|&w| w >= 1);
        events.push(FaultEventSpan { start, end: i, credited });
        i += 1;
    }
    events
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdmEvaluation {
    pub lookback_days: usize,
    pub n_events: usize,
    pub n_detected: usize,
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
}

/// Event-level sensitivity, day-level specificity and accuracy.
///
/// Fault days of credited events are true positives, fault days of missed
/// events false negatives; normal days with any warning are false positives.
/// Sensitivity is events detected over events.
pub fn evaluate_sdm(levels: &[u8], fault_days: &[bool], lookback_days: usize) -> Result<SdmEvaluation> {
    if levels.len() != fault_days.len() {
        return Err(Error::InvalidInput(format!(
            "{} warning days vs {} fault-flag days",
            levels.len(),
            fault_days.len()
        )));
    }
    let events = credited_events(levels, fault_days, lookback_days);
    let mut counts = ConfusionCounts::default();
    for ev in &events {
        let days = (ev.end - ev.start + 1) as u64;
        if ev.credited {
            counts.tp += days;
        } else {
            counts.fn_ += days;
        }
    }
    for (&w, &f) in levels.iter().zip(fault_days) {
        if !f {
            if w >= 1 {
                counts.fp += 1;
            } else {
                counts.tn += 1;
            }
        }
    }
    let n_detected = events.iter().filter(|e| e.credited).count();
    let mut metrics = crate::metrics_econ::metrics(&counts);
    metrics.sensitivity = (!events.is_empty()).then(|| n_detected as f64 / events.len() as f64);
    Ok(SdmEvaluation {
        lookback_days,
        n_events: events.len(),
        n_detected,
        counts,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> WarningConfig {
        WarningConfig::new(1.0, 0.01).unwrap()
    }

    fn levels(trace: &[f64]) -> Vec<u8> {
        let f: Vec<Option<f64>> = trace.iter().copied().map(Some).collect();
        update_warnings(&f, &cfg()).iter().map(|s| s.level).collect()
    }

    #[test]
    fn thresholds() {
        let c = cfg();
        assert!((c.tau3 - 0.97).abs() < 1e-12);
        assert!((c.tau5 - 0.95).abs() < 1e-12);
        assert!(WarningConfig::new(1.0, 0.0).is_err());
    }

    #[test]
    fn level_one_then_two() {
        assert_eq!(levels(&[1.0, 0.965]), vec![0, 1]);
        assert_eq!(levels(&[1.0, 0.965, 0.962]), vec![0, 1, 2]);
        // below threshold but rising: no warning
        assert_eq!(levels(&[1.0, 0.965, 0.968]), vec![0, 1, 0]);
    }

    #[test]
    fn level_three_then_four() {
        assert_eq!(levels(&[1.0, 0.94]), vec![0, 3]);
        assert_eq!(levels(&[1.0, 0.94, 0.93]), vec![0, 3, 4]);
        assert_eq!(levels(&[1.0, 0.96, 0.94, 0.93, 0.99]), vec![0, 1, 3, 4, 0]);
    }

    #[test]
    fn missing_day_resets() {
        let f = [Some(1.0), Some(0.965), None, Some(0.96)];
        let l: Vec<u8> = update_warnings(&f, &cfg()).iter().map(|s| s.level).collect();
        assert_eq!(l, vec![0, 1, 0, 0]);
    }

    #[test]
    fn evaluation_examples() {
        let mut lv = vec![0u8; 12];
        let mut fd = vec![false; 12];
        fd[10] = true;
        fd[11] = true;
        lv[7] = 1;
        let e = evaluate_sdm(&lv, &fd, 7).unwrap();
        assert_eq!(e.metrics.sensitivity, Some(1.0));
        assert_eq!(e.n_events, 1);

        let e = evaluate_sdm(&[0; 10], &[false; 10], 7).unwrap();
        assert_eq!(e.metrics.specificity, Some(1.0));
        assert_eq!(e.metrics.sensitivity, None);

        let mut lv = vec![0u8; 9];
        lv[0] = 1;
        lv[1] = 2;
        let mut fd = vec![false; 9];
        fd[8] = true;
        let e = evaluate_sdm(&lv, &fd, 0).unwrap();
        assert_eq!(e.metrics.sensitivity, Some(0.0));
        assert_eq!(e.metrics.specificity, Some(0.75));
    }
}
