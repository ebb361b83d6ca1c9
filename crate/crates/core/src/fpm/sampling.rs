//! Per-class train/test set construction.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scada_data::{ClassId, TagValues, NORMAL};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplingPlan {
    pub train_fault_share: f64,
    /// Normal samples per fault sample in the training set.
    pub train_balance_ratio: f64,
    pub min_fault_instances: usize,
    /// Earliest faults go to training instead of a random draw.
    pub chronological: bool,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        SamplingPlan {
            train_fault_share: 2.0 / 3.0,
            train_balance_ratio: 1.0,
            min_fault_instances: 9,
            chronological: false,
        }
    }
}

impl SamplingPlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.train_fault_share > 0.0 && self.train_fault_share < 1.0) {
            return Err(Error::Config("train_fault_share must lie in (0, 1)".into()));
        }
        if !(self.train_balance_ratio > 0.0) {
            return Err(Error::Config("train_balance_ratio must be > 0".into()));
        }
        Ok(())
    }

    /// Training fault count, `ceil(share * n_fault)` without float round-up
    /// artifacts such as `2/3 * 90 = 60.000000000000007`.
    pub fn n_train_fault(&self, n_fault: usize) -> usize {
        let raw = self.train_fault_share * n_fault as f64;
        ((raw - 1e-9).ceil().max(1.0) as usize).min(n_fault.saturating_sub(1))
    }
}

/// Scaled feature rows on the full grid with their labels.
///
/// `eligible` marks rows that may be sampled (complete daytime rows).
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTimeline {
    pub features: Vec<TagValues>,
    pub labels: Vec<ClassId>,
    pub eligible: Vec<bool>,
}

impl FeatureTimeline {
    pub fn new(features: Vec<TagValues>, labels: Vec<ClassId>, eligible: Vec<bool>) -> Result<Self> {
        if features.len() != labels.len() || features.len() != eligible.len() {
            return Err(Error::InvalidInput("features, labels and eligibility differ in length".into()));
        }
        let eligible = eligible
            .into_iter()
            .zip(&features)
            .map(|(e, f)| e && f.iter().all(Option::is_some))
            .collect();
        Ok(FeatureTimeline {
            features,
            labels,
            eligible,
        })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn fault_indices(&self, class: ClassId) -> Vec<usize> {
        self.indices_with(class)
    }

    pub fn normal_indices(&self) -> Vec<usize> {
        self.indices_with(NORMAL)
    }

    fn indices_with(&self, label: ClassId) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.eligible[i] && self.labels[i] == label)
            .collect()
    }

    /// Row `i` as a dense vector; `None` if any tag is missing.
    pub fn row(&self, i: usize) -> Option<Vec<f64>> {
        self.features[i].iter().copied().collect()
    }
}

/// Timeline indices with fault flags, fault samples first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SampleSet {
    pub indices: Vec<usize>,
    pub is_fault: Vec<bool>,
}

impl SampleSet {
    fn push_all(&mut self, idx: &[usize], fault: bool) {
        self.indices.extend_from_slice(idx);
        self.is_fault.extend(std::iter::repeat_n(fault, idx.len()));
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn n_fault(&self) -> usize {
        self.is_fault.iter().filter(|&&f| f).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitSets {
    pub train: SampleSet,
    pub test: SampleSet,
    /// Eligible fault samples of the class.
    pub n_fault: usize,
}

/// Draws a training and a test set for one fault class.
///
/// Training gets `ceil(2/3 N_fault)` faults plus a matching number of normal
/// samples; the test set gets the remaining faults plus normal samples at the
/// labelled normal:fault ratio, limited by what training left over.
pub fn build_sets(timeline: &FeatureTimeline, class: ClassId, plan: &SamplingPlan, seed: u64) -> Result<SplitSets> {
    plan.validate()?;
    if class == NORMAL {
        return Err(Error::InvalidInput("class 0 is the normal label".into()));
    }
    let mut faults = timeline.fault_indices(class);
    let n_fault = faults.len();
    if n_fault < plan.min_fault_instances.max(2) {
        return Err(Error::SkipClass {
            class_id: class,
            n_fault,
            min_required: plan.min_fault_instances.max(2),
        });
    }
    let mut normals = timeline.normal_indices();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let n_train_fault = plan.n_train_fault(n_fault);
    if !plan.chronological {
        faults.shuffle(&mut rng);
    }
    let (train_fault, test_fault) = faults.split_at(n_train_fault);

    let n_train_normal = (n_train_fault as f64 * plan.train_balance_ratio).round() as usize;
    if normals.len() < n_train_normal {
        return Err(Error::InsufficientData(format!(
            "class {class}: {} normal samples, {n_train_normal} needed for training",
            normals.len()
        )));
    }
    let ratio = normals.len() as f64 / n_fault as f64;
    normals.shuffle(&mut rng);
    let (train_normal, rest) = normals.split_at(n_train_normal);
    let n_test_normal = ((test_fault.len() as f64 * ratio).round() as usize).min(rest.len());
    let test_normal = &rest[..n_test_normal];

    let mut train = SampleSet::default();
    train.push_all(train_fault, true);
    train.push_all(train_normal, false);
    let mut test = SampleSet::default();
    test.push_all(test_fault, true);
    test.push_all(test_normal, false);
    Ok(SplitSets { train, test, n_fault })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn timeline(n_fault: usize, n_normal: usize) -> FeatureTimeline {
        let n = n_fault + n_normal;
        let features = (0..n).map(|i| [Some(i as f64); 11]).collect();
        let labels = (0..n).map(|i| if i % 4 == 0 && i / 4 < n_fault { 3 } else { 0 }).collect::<Vec<_>>();
        let n_actual = labels.iter().filter(|&&l| l == 3).count();
        assert_eq!(n_actual, n_fault.min(n.div_ceil(4)));
        FeatureTimeline::new(features, labels, vec![true; n]).unwrap()
    }

    #[test]
    fn ninety_faults_split_sixty_thirty() {
        let tl = timeline(90, 900);
        let s = build_sets(&tl, 3, &SamplingPlan::default(), 1).unwrap();
        assert_eq!(s.n_fault, 90);
        assert_eq!(s.train.n_fault(), 60);
        assert_eq!(s.train.len() - s.train.n_fault(), 60);
        assert_eq!(s.test.n_fault(), 30);
        let tr: HashSet<_> = s.train.indices.iter().collect();
        assert!(s.test.indices.iter().all(|i| !tr.contains(i)));
        let ratio = 900.0 / 90.0;
        assert_eq!(s.test.len() - 30, (30.0 * ratio) as usize);
    }

    #[test]
    fn too_few_faults_skips() {
        let tl = timeline(5, 100);
        match build_sets(&tl, 3, &SamplingPlan::default(), 0) {
            Err(Error::SkipClass { n_fault: 5, .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn chronological_takes_earliest() {
        let tl = timeline(12, 200);
        let plan = SamplingPlan { chronological: true, ..Default::default() };
        let s = build_sets(&tl, 3, &plan, 0).unwrap();
        let tr_max = s.train.indices[..8].iter().max().unwrap();
        let te_min = s.test.indices[..4].iter().min().unwrap();
        assert!(tr_max < te_min);
    }

    #[test]
    fn ineligible_rows_are_not_sampled() {
        let mut tl = timeline(20, 200);
        tl.features[0][4] = None;
        let tl = FeatureTimeline::new(tl.features, tl.labels, tl.eligible).unwrap();
        let s = build_sets(&tl, 3, &SamplingPlan::default(), 2).unwrap();
        assert_eq!(s.n_fault, 19);
        assert!(!s.train.indices.contains(&0) && !s.test.indices.contains(&0));
    }
}
