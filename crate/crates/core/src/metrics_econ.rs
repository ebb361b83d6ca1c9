//! Classification metrics and lost-production economics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scada_data::InverterDatasheet;
use crate::sdm::warnings::credited_events;

/// Irradiance at standard conditions, W/m².
pub const GTI_STC: f64 = 1200.0;
/// Grid step in minutes.
pub const STEP_MINUTES: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub fp: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fn_ + self.tn + self.fp
    }

    pub fn record(&mut self, actual_fault: bool, predicted_fault: bool) {
        match (actual_fault, predicted_fault) {
            (true, true) => self.tp += 1,
            (true, false) => self.fn_ += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fp += 1,
        }
    }
}

/// Accuracy, sensitivity, specificity; `None` where the denominator is 0.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: &ConfusionCounts) -> Metrics {
    Metrics {
        accuracy: ratio(c.tp + c.tn, c.total()),
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
    }
}

/// Theoretical AC power (kW) in normal conditions with a linear thermal loss
/// above 25 °C, clamped to `[0, max_active_power]`.
pub fn theoretical_power(gti: f64, t_cell: f64, datasheet: &InverterDatasheet) -> f64 {
    let k_pv = if t_cell >= 25.0 {
        (t_cell - 25.0) * datasheet.gamma_pct_per_c / 100.0
    } else {
        0.0
    };
    let p = datasheet.p_nom_kw * (1.0 - k_pv) * gti / GTI_STC;
    p.clamp(0.0, datasheet.max_active_power_kw)
}

/// Cumulative lost energy (kWh) by trapezoidal integration of `P_th - P_AC`.
///
/// Missing P_AC counts as zero output. Negative increments are clamped to 0.
pub fn lost_production(p_th: &[f64], p_ac: &[Option<f64>], step_minutes: f64) -> Result<Vec<f64>> {
    if p_th.len() != p_ac.len() {
        return Err(Error::InvalidInput(format!(
            "{} theoretical samples vs {} measured",
            p_th.len(),
            p_ac.len()
        )));
    }
    let deficit: Vec<f64> = p_th
        .iter()
        .zip(p_ac)
        .map(|(th, ac)| th - ac.unwrap_or(0.0))
        .collect();
    let mut lp = Vec::with_capacity(deficit.len());
    let mut acc = 0.0;
    for (i, d) in deficit.iter().enumerate() {
        if i > 0 {
            acc += (0.5 * (deficit[i - 1] + d) * step_minutes / 60.0).max(0.0);
        }
        lp.push(acc);
    }
    Ok(lp)
}

fn trapezoid(series: &[f64], step_minutes: f64) -> f64 {
    series
        .windows(2)
        .map(|w| 0.5 * (w[0] + w[1]) * step_minutes / 60.0)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub p_th: Vec<f64>,
    pub p_ac: Vec<f64>,
    pub lp_cum: Vec<f64>,
    pub p_ac_counterfactual: Vec<f64>,
    pub energy_ideal_kwh: f64,
    pub energy_actual_kwh: f64,
    pub energy_counterfactual_kwh: f64,
    pub yield_actual_pct: f64,
    pub yield_with_sdm_pct: f64,
}

/// Energy yield relative to the ideal case, with and without predictive
/// maintenance. Fault days of events credited with a warning in the preceding
/// `lookback_days` get `P_AC := P_th`, never less than what was measured.
///
/// `day_of_sample[i]` indexes into `levels`/`fault_days`.
pub fn energy_yield_with_sdm(
    p_th: &[f64],
    p_ac: &[Option<f64>],
    day_of_sample: &[usize],
    levels: &[u8],
    fault_days: &[bool],
    lookback_days: usize,
) -> Result<EnergyReport> {
    if p_th.len() != p_ac.len() || p_th.len() != day_of_sample.len() {
        return Err(Error::InvalidInput("power series and day index lengths differ".into()));
    }
    if levels.len() != fault_days.len() {
        return Err(Error::InvalidInput("warning and fault-day series lengths differ".into()));
    }
    if day_of_sample.iter().any(|&d| d >= levels.len()) {
        return Err(Error::InvalidInput("sample day index out of range".into()));
    }
    let mut recovered = vec![false; levels.len()];
    for ev in credited_events(levels, fault_days, lookback_days) {
        if ev.credited {
            recovered[ev.start..=ev.end].iter_mut().for_each(|r| *r = true);
        }
    }
    let actual: Vec<f64> = p_ac.iter().map(|v| v.unwrap_or(0.0)).collect();
    let counterfactual: Vec<f64> = actual
        .iter()
        .zip(p_th)
        .zip(day_of_sample)
        .map(|((&a, &th), &d)| if recovered[d] { th.max(a) } else { a })
        .collect();
    let lp_cum = lost_production(p_th, p_ac, STEP_MINUTES)?;
    let ideal = trapezoid(p_th, STEP_MINUTES);
    let e_act = trapezoid(&actual, STEP_MINUTES);
    let e_cf = trapezoid(&counterfactual, STEP_MINUTES);
    let pct = |e: f64| if ideal > 0.0 { 100.0 * e / ideal } else { 100.0 };
    Ok(EnergyReport {
        p_th: p_th.to_vec(),
        p_ac: actual,
        lp_cum,
        p_ac_counterfactual: counterfactual,
        energy_ideal_kwh: ideal,
        energy_actual_kwh: e_act,
        energy_counterfactual_kwh: e_cf,
        yield_actual_pct: pct(e_act),
        yield_with_sdm_pct: pct(e_cf),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn sheet(p_nom: f64, gamma: f64) -> InverterDatasheet {
        InverterDatasheet {
            p_nom_kw: p_nom,
            gamma_pct_per_c: gamma,
            max_active_power_kw: p_nom,
            tag_ranges: BTreeMap::new(),
        }
    }

    #[test]
    fn metric_examples() {
        let m = metrics(&ConfusionCounts { tp: 9, fn_: 1, tn: 80, fp: 10 });
        assert_eq!(m.sensitivity, Some(0.9));
        assert!((m.specificity.unwrap() - 80.0 / 90.0).abs() < 1e-15);
        assert_eq!(m.accuracy, Some(0.89));
        let m = metrics(&ConfusionCounts { tp: 0, fn_: 0, tn: 5, fp: 0 });
        assert_eq!(m.sensitivity, None);
        let m = metrics(&ConfusionCounts { tp: 3, fn_: 0, tn: 5, fp: 0 });
        assert_eq!((m.accuracy, m.sensitivity, m.specificity), (Some(1.0), Some(1.0), Some(1.0)));
    }

    #[test]
    fn theoretical_power_examples() {
        assert_eq!(theoretical_power(1200.0, 25.0, &sheet(385.0, 0.4)), 385.0);
        assert_eq!(
            theoretical_power(600.0, 20.0, &sheet(385.0, 0.4)),
            theoretical_power(600.0, 25.0, &sheet(385.0, 0.4))
        );
        assert!((theoretical_power(600.0, 35.0, &sheet(385.0, 0.4)) - 184.8).abs() < 1e-9);
    }

    #[test]
    fn lost_production_examples() {
        let p_th = vec![100.0; 61];
        let p_ac: Vec<Option<f64>> = vec![Some(88.0); 61];
        let lp = lost_production(&p_th, &p_ac, STEP_MINUTES).unwrap();
        assert_eq!(lp[60], 60.0);

        let ideal: Vec<Option<f64>> = p_th.iter().copied().map(Some).collect();
        assert!(lost_production(&p_th, &ideal, STEP_MINUTES).unwrap().iter().all(|&v| v == 0.0));

        let p_th = vec![120.0; 5];
        let mut p_ac = vec![Some(120.0); 5];
        p_ac[2] = None;
        let lp = lost_production(&p_th, &p_ac, STEP_MINUTES).unwrap();
        assert!((lp[4] - 10.0).abs() < 1e-12);

        assert!(lost_production(&[1.0], &[], STEP_MINUTES).is_err());
    }
}
