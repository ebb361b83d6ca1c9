//! Look-back horizon shifting and Monte-Carlo evaluation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::nn::{train_nn, NnConfig, NnModel, TrainData};
use super::sampling::{build_sets, FeatureTimeline, SampleSet, SamplingPlan};
use crate::error::{Error, Result};
use crate::impute::{knn_impute, ImputeConfig};
use crate::metrics_econ::{metrics, ConfusionCounts};
use crate::scada_data::{ClassId, GRID_STEP_SECS};
use crate::stats::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HorizonSpec {
    pub hours: Vec<f64>,
}

impl Default for HorizonSpec {
    fn default() -> Self {
        HorizonSpec {
            hours: vec![0.0, 2.0, 12.0, 24.0, 72.0, 168.0],
        }
    }
}

impl HorizonSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hours.is_empty() {
            return Err(Error::Config("at least one horizon is required".into()));
        }
        for w in self.hours.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::Config("horizons must be strictly increasing".into()));
            }
        }
        for &h in &self.hours {
            horizon_steps(h)?;
        }
        Ok(())
    }
}

/// Grid steps in `n_hours`; must be a non-negative multiple of 5 minutes.
pub fn horizon_steps(n_hours: f64) -> Result<usize> {
    let steps = n_hours * 3600.0 / GRID_STEP_SECS as f64;
    if !(n_hours >= 0.0) || (steps - steps.round()).abs() > 1e-9 {
        return Err(Error::Config(format!("horizon {n_hours} h is not on the 5-minute grid")));
    }
    Ok(steps.round() as usize)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ShiftedSet {
    pub rows: Vec<Vec<f64>>,
    pub is_fault: Vec<bool>,
    /// Samples whose shifted time falls before the data start.
    pub dropped: usize,
    pub imputed: usize,
}

/// Replaces each test sample at `t` by the feature row at `t - n_hours`,
/// keeping the label of `t`. Gaps are filled by k-NN against `reference`;
/// an entirely missing row takes the reference mean.
pub fn shift_test_set(
    test: &SampleSet,
    n_hours: f64,
    timeline: &FeatureTimeline,
    reference: &[Vec<f64>],
    impute: &ImputeConfig,
) -> Result<ShiftedSet> {
    let steps = horizon_steps(n_hours)?;
    let mut out = ShiftedSet::default();
    let mut ref_mean: Option<Vec<f64>> = None;
    for (&t, &fault) in test.indices.iter().zip(&test.is_fault) {
        let Some(src) = t.checked_sub(steps) else {
            out.dropped += 1;
            continue;
        };
        let query = &timeline.features[src];
        let row = if let Some(row) = timeline.row(src) {
            row
        } else if query.iter().all(Option::is_none) {
            if reference.is_empty() {
                return Err(Error::CannotImpute("empty reference set".into()));
            }
            out.imputed += 1;
            ref_mean.get_or_insert_with(|| column_mean(reference)).clone()
        } else {
            out.imputed += 1;
            knn_impute(query, reference, impute)?.values
        };
        out.rows.push(row);
        out.is_fault.push(fault);
    }
    Ok(out)
}

fn column_mean(rows: &[Vec<f64>]) -> Vec<f64> {
    let Some(first) = rows.first() else {
        return Vec::new();
    };
    let mut m = vec![0.0; first.len()];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b;
        }
    }
    m.iter_mut().for_each(|v| *v /= rows.len() as f64);
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    pub runs: usize,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig { runs: 30, seed: 0 }
    }
}

/// Mean metrics of one horizon over the Monte-Carlo runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon_hours: f64,
    pub accuracy: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub n_faults: f64,
    pub n_detected: f64,
    pub n_runs: usize,
}

/// Everything needed to train and score one class.
#[derive(Debug, Clone, Default)]
pub struct FpmSettings {
    pub plan: SamplingPlan,
    pub nn: NnConfig,
    pub impute: ImputeConfig,
}

/// Trains a model on one draw of the class's training set.
pub fn train_class(
    timeline: &FeatureTimeline,
    class: ClassId,
    settings: &FpmSettings,
    seed: u64,
) -> Result<(NnModel, SampleSet, SampleSet)> {
    let sets = build_sets(timeline, class, &settings.plan, derive_seed(seed, "sampling"))?;
    let inputs = rows_of(timeline, &sets.train);
    let data = TrainData {
        inputs: &inputs,
        is_fault: &sets.train.is_fault,
    };
    let mut model = train_nn(data, &settings.nn, derive_seed(seed, "nn"))?;
    model.class_id = class;
    Ok((model, sets.train, sets.test))
}

fn rows_of(timeline: &FeatureTimeline, set: &SampleSet) -> Vec<Vec<f64>> {
    set.indices
        .iter()
        .map(|&i| timeline.row(i).expect("sampled rows are complete"))
        .collect()
}

/// Scores a trained model on the test set shifted to each horizon.
pub fn evaluate_horizons(
    model: &NnModel,
    timeline: &FeatureTimeline,
    train: &SampleSet,
    test: &SampleSet,
    horizons: &HorizonSpec,
    impute: &ImputeConfig,
) -> Result<Vec<ConfusionCounts>> {
    let reference = rows_of(timeline, train);
    horizons
        .hours
        .iter()
        .map(|&h| {
            let shifted = shift_test_set(test, h, timeline, &reference, impute)?;
            let mut c = ConfusionCounts::default();
            for (x, &f) in shifted.rows.iter().zip(&shifted.is_fault) {
                c.record(f, model.predicts_fault(x)?);
            }
            Ok(c)
        })
        .collect()
}

/// Repeats draw, train and horizon scoring `mc.runs` times with per-run
/// seeds and averages the per-run metrics. Runs execute in parallel on the
/// current rayon pool and are merged in run order.
pub fn monte_carlo_eval(
    timeline: &FeatureTimeline,
    class: ClassId,
    horizons: &HorizonSpec,
    settings: &FpmSettings,
    mc: &McConfig,
) -> Result<Vec<HorizonMetrics>> {
    horizons.validate()?;
    if mc.runs == 0 {
        return Err(Error::Config("Monte-Carlo runs must be >= 1".into()));
    }
    let per_run: Vec<Vec<ConfusionCounts>> = (0..mc.runs)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(mc.seed, &format!("fpm.mc.class{class}.run{r}"));
            let (model, train, test) = train_class(timeline, class, settings, seed)?;
            evaluate_horizons(&model, timeline, &train, &test, horizons, &settings.impute)
        })
        .collect::<Result<_>>()?;

    let mean = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
    Ok(horizons
        .hours
        .iter()
        .enumerate()
        .map(|(k, &h)| {
            let runs: Vec<_> = per_run.iter().map(|r| (r[k], metrics(&r[k]))).collect();
            HorizonMetrics {
                horizon_hours: h,
                accuracy: mean(runs.iter().filter_map(|(_, m)| m.accuracy).collect()),
                sensitivity: mean(runs.iter().filter_map(|(_, m)| m.sensitivity).collect()),
                specificity: mean(runs.iter().filter_map(|(_, m)| m.specificity).collect()),
                n_faults: runs.iter().map(|(c, _)| (c.tp + c.fn_) as f64).sum::<f64>() / mc.runs as f64,
                n_detected: runs.iter().map(|(c, _)| c.tp as f64).sum::<f64>() / mc.runs as f64,
                n_runs: mc.runs,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn timeline() -> FeatureTimeline {
        let n = 600;
        let features = (0..n)
            .map(|i| {
                let mut row = [Some(0.0); 11];
                for (k, v) in row.iter_mut().enumerate() {
                    *v = Some((i as f64 * 0.37 + k as f64).sin());
                }
                row
            })
            .collect();
        let labels = (0..n).map(|i| if i % 10 == 0 { 2 } else { 0 }).collect();
        FeatureTimeline::new(features, labels, vec![true; n]).unwrap()
    }

    #[test]
    fn steps() {
        assert_eq!(horizon_steps(0.0).unwrap(), 0);
        assert_eq!(horizon_steps(2.0).unwrap(), 24);
        assert!(horizon_steps(0.01).is_err());
        assert!(HorizonSpec { hours: vec![2.0, 0.0] }.validate().is_err());
    }

    #[test]
    fn zero_shift_is_identity_and_two_hours_is_24_steps() {
        let tl = timeline();
        let test = SampleSet {
            indices: vec![10, 100, 20],
            is_fault: vec![true, true, false],
        };
        let reference: Vec<Vec<f64>> = (300..320).map(|i| tl.row(i).unwrap()).collect();
        let s0 = shift_test_set(&test, 0.0, &tl, &reference, &ImputeConfig::default()).unwrap();
        assert_eq!(s0.rows[1], tl.row(100).unwrap());
        let s2 = shift_test_set(&test, 2.0, &tl, &reference, &ImputeConfig::default()).unwrap();
        assert_eq!(s2.dropped, 2);
        assert_eq!(s2.rows, vec![tl.row(76).unwrap()]);
        assert_eq!(s2.is_fault, vec![true]);
    }

    #[test]
    fn missing_rows_are_imputed() {
        let mut tl = timeline();
        tl.features[50] = [None; 11];
        tl.features[60][3] = None;
        let test = SampleSet {
            indices: vec![50, 60],
            is_fault: vec![false, false],
        };
        let reference: Vec<Vec<f64>> = (300..320).map(|i| tl.row(i).unwrap()).collect();
        let s = shift_test_set(&test, 0.0, &tl, &reference, &ImputeConfig::default()).unwrap();
        assert_eq!(s.imputed, 2);
        assert_eq!(s.rows[0], column_mean(&reference));
        let direct = knn_impute(&tl.features[60], &reference, &ImputeConfig::default()).unwrap();
        assert_eq!(s.rows[1], direct.values);
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let tl = timeline();
        let settings = FpmSettings {
            nn: NnConfig { max_epochs: 30, ..Default::default() },
            ..Default::default()
        };
        let h = HorizonSpec { hours: vec![0.0, 2.0] };
        let mc = McConfig { runs: 2, seed: 4 };
        let a = monte_carlo_eval(&tl, 2, &h, &settings, &mc).unwrap();
        let b = monte_carlo_eval(&tl, 2, &h, &settings, &mc).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
    }
}
