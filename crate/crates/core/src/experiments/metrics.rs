use serde::{Deserialize, Serialize};

use super::splits::SplitPlan;

/// Raw prediction counts for one evaluation, rows = true class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    n_classes: usize,
    counts: Vec<usize>,
}

impl ConfusionCounts {
    pub fn new(n_classes: usize) -> Self {
        Self { n_classes, counts: vec![0; n_classes * n_classes] }
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        assert!(truth < self.n_classes && predicted < self.n_classes, "class out of range");
        self.counts[truth * self.n_classes + predicted] += 1;
    }

    pub fn count(&self, truth: usize, predicted: usize) -> usize {
        self.counts[truth * self.n_classes + predicted]
    }

    pub fn support(&self, truth: usize) -> usize {
        self.counts[truth * self.n_classes..(truth + 1) * self.n_classes].iter().sum()
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.n_classes).map(|c| self.count(c, c)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.correct() as f64 / n as f64,
        }
    }

    /// Rows divided by their support; empty rows stay zero.
    pub fn row_normalized(&self) -> Vec<Vec<f64>> {
        (0..self.n_classes)
            .map(|t| {
                let s = self.support(t);
                (0..self.n_classes).map(|p| if s == 0 { 0.0 } else { self.count(t, p) as f64 / s as f64 }).collect()
            })
            .collect()
    }
}

/// How per-split confusion counts are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    /// Mean of the per-split row-normalized matrices.
    #[default]
    RowMean,
    /// Counts summed over splits, then row-normalized.
    Pooled,
}

/// Row-normalized confusion rates, rows = true class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub rates: Vec<Vec<f64>>,
    /// Test samples per true class, summed over splits.
    pub support: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn n_classes(&self) -> usize {
        self.rates.len()
    }

    pub fn rate(&self, truth: usize, predicted: usize) -> f64 {
        self.rates[truth][predicted]
    }

    /// The unordered class pair with the most confusion mass in both
    /// directions, `(a, b, rate(a,b) + rate(b,a))` with `a < b`.
    pub fn most_confused_pair(&self) -> Option<(usize, usize, f64)> {
        let n = self.n_classes();
        let mut best: Option<(usize, usize, f64)> = None;
        for a in 0..n {
            for b in a + 1..n {
                let mass = self.rates[a][b] + self.rates[b][a];
                if best.is_none_or(|(_, _, m)| mass > m) {
                    best = Some((a, b, mass));
                }
            }
        }
        best
    }
}

pub fn average_confusion(per_split: &[ConfusionCounts], mode: Averaging) -> ConfusionMatrix {
    let n = per_split.first().map_or(0, ConfusionCounts::n_classes);
    let support: Vec<usize> = (0..n).map(|t| per_split.iter().map(|c| c.support(t)).sum()).collect();
    let rates = match mode {
        Averaging::Pooled => {
            let mut pooled = ConfusionCounts::new(n);
            for c in per_split {
                for (a, b) in pooled.counts.iter_mut().zip(&c.counts) {
                    *a += b;
                }
            }
            pooled.row_normalized()
        }
        Averaging::RowMean => {
            let mut rates = vec![vec![0.0; n]; n];
            for (t, row) in rates.iter_mut().enumerate() {
                // Splits where the class never appeared carry no information.
                let present: Vec<Vec<f64>> =
                    per_split.iter().filter(|c| c.support(t) > 0).map(|c| c.row_normalized().swap_remove(t)).collect();
                if present.is_empty() {
                    continue;
                }
                for (p, r) in row.iter_mut().enumerate() {
                    *r = present.iter().map(|v| v[p]).sum::<f64>() / present.len() as f64;
                }
            }
            rates
        }
    };
    ConfusionMatrix { rates, support }
}

/// MAE as a percentage of the material's mean weight.
pub fn percent_error(mae: f64, mean_weight: f64) -> f64 {
    mae / mean_weight * 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaterialError {
    pub material: String,
    pub mean_weight: f64,
    pub mae: f64,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub materials: Vec<MaterialError>,
    /// MAE over every test prediction, averaged over splits.
    pub overall_mae: f64,
    /// Mean of the per-material percentages.
    pub overall_percent: f64,
    pub baseline_mae: f64,
}

impl RegressionReport {
    /// Builds the table from `(material, mean weight, MAE)` rows.
    pub fn from_rows(rows: &[(String, f64, f64)], overall_mae: f64, baseline_mae: f64) -> Self {
        let materials: Vec<MaterialError> = rows
            .iter()
            .map(|(name, w, mae)| MaterialError {
                material: name.clone(),
                mean_weight: *w,
                mae: *mae,
                percent: percent_error(*mae, *w),
            })
            .collect();
        let overall_percent = if materials.is_empty() {
            0.0
        } else {
            materials.iter().map(|m| m.percent).sum::<f64>() / materials.len() as f64
        };
        Self { materials, overall_mae, overall_percent, baseline_mae }
    }

    pub fn material(&self, name: &str) -> Option<&MaterialError> {
        self.materials.iter().find(|m| m.material == name)
    }
}

/// MAE of always predicting the training-split mean weight, averaged over
/// splits.
pub fn mean_baseline(targets: &[f64], plan: &SplitPlan) -> f64 {
    if plan.is_empty() {
        return 0.0;
    }
    let per_split: Vec<f64> = plan
        .splits
        .iter()
        .map(|s| {
            let mean = s.train.iter().map(|&i| targets[i]).sum::<f64>() / s.train.len() as f64;
            s.test.iter().map(|&i| (targets[i] - mean).abs()).sum::<f64>() / s.test.len() as f64
        })
        .collect();
    per_split.iter().sum::<f64>() / per_split.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::make_splits;
    use proptest::prelude::*;

    #[test]
    fn oracle_predictions_give_identity() {
        let mut c = ConfusionCounts::new(3);
        for t in [0, 1, 2, 2, 1] {
            c.record(t, t);
        }
        let m = average_confusion(&[c.clone(), c], Averaging::RowMean);
        for t in 0..3 {
            for p in 0..3 {
                assert_eq!(m.rate(t, p), if t == p { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn row_mean_versus_pooled() {
        let mut a = ConfusionCounts::new(2);
        a.record(0, 0);
        a.record(0, 1);
        let mut b = ConfusionCounts::new(2);
        for _ in 0..3 {
            b.record(0, 0);
        }
        b.record(1, 1);
        let mean = average_confusion(&[a.clone(), b.clone()], Averaging::RowMean);
        assert!((mean.rate(0, 0) - 0.75).abs() < 1e-15);
        // Class 1 only appears in the second split.
        assert_eq!(mean.rate(1, 1), 1.0);
        let pooled = average_confusion(&[a, b], Averaging::Pooled);
        assert!((pooled.rate(0, 0) - 0.8).abs() < 1e-15);
        assert_eq!(pooled.support, vec![5, 1]);
    }

    #[test]
    fn most_confused_pair_sums_both_directions() {
        let m = ConfusionMatrix {
            rates: vec![vec![0.8, 0.2, 0.0], vec![0.0, 0.75, 0.25], vec![0.0, 0.1, 0.9]],
            support: vec![1; 3],
        };
        let (a, b, mass) = m.most_confused_pair().unwrap();
        assert_eq!((a, b), (1, 2));
        assert!((mass - 0.35).abs() < 1e-12);
    }

    #[test]
    fn glass_percent() {
        assert!((percent_error(3.16, 12.6) - 25.079365).abs() < 1e-6);
    }

    #[test]
    fn baseline_edge_cases() {
        let plan = make_splits(40, 5, 10, 2).unwrap();
        assert!(mean_baseline(&[4.2; 40], &plan) < 1e-12);
        let two: Vec<f64> = (0..40).map(|i| if i % 2 == 0 { 0.0 } else { 2.0 }).collect();
        let b = mean_baseline(&two, &plan);
        assert!((b - 1.0).abs() < 0.1, "{b}");
    }

    proptest! {
        #[test]
        fn averaged_rows_sum_to_one(preds in prop::collection::vec(prop::collection::vec((0usize..4, 0usize..4), 1..30), 1..5)) {
            let per_split: Vec<ConfusionCounts> = preds.iter().map(|split| {
                let mut c = ConfusionCounts::new(4);
                for &(t, p) in split { c.record(t, p); }
                c
            }).collect();
            for mode in [Averaging::RowMean, Averaging::Pooled] {
                let m = average_confusion(&per_split, mode);
                for (t, row) in m.rates.iter().enumerate() {
                    let sum: f64 = row.iter().sum();
                    if m.support[t] > 0 {
                        prop_assert!((sum - 1.0).abs() < 1e-9);
                    }
                    prop_assert!(row.iter().all(|r| (0.0..=1.0).contains(r)));
                }
            }
        }
    }
}
