//! Synthetic labeled datasets and forget/remain splitting.

use crate::error::{Error, Result};
use crate::mathcore::RngState;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

/// Labeled point cloud; `points[i]` carries label `labels[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub points: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn empty() -> Self {
        Self { points: Vec::new(), labels: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.first().map_or(0, |p| p.len())
    }

    pub fn label_set(&self) -> BTreeSet<usize> {
        self.labels.iter().copied().collect()
    }

    pub fn push(&mut self, x: Vec<f64>, label: usize) {
        self.points.push(x);
        self.labels.push(label);
    }

    /// Subset by index list.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        Dataset {
            points: idx.iter().map(|&i| self.points[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
        }
    }

    /// All points with a label in `classes`.
    pub fn filter_classes(&self, classes: &BTreeSet<usize>) -> Dataset {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| classes.contains(&self.labels[i]))
            .collect();
        self.select(&idx)
    }
}

/// Gaussian mixture specification: one isotropic component per class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyDatasetSpec {
    pub means: Vec<Vec<f64>>,
    pub sigma: f64,
    pub samples_per_class: usize,
    pub seed: u64,
}

impl ToyDatasetSpec {
    /// Classes spread evenly on a circle. The phase keeps the conventional
    /// forgotten class (index 2) away from the lower-left quadrant where
    /// scrubbed samples tend to drift.
    pub fn ring(classes: usize, radius: f64, sigma: f64, samples_per_class: usize, seed: u64) -> Self {
        let phase = -3.0 * std::f64::consts::FRAC_PI_4;
        let means = (0..classes)
            .map(|c| {
                let angle = std::f64::consts::TAU * c as f64 / classes as f64 + phase;
                vec![radius * angle.cos(), radius * angle.sin()]
            })
            .collect();
        Self { means, sigma, samples_per_class, seed }
    }

    pub fn num_classes(&self) -> usize {
        self.means.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.means.len() < 2 {
            return Err(Error::InvalidConfig("need at least 2 classes".into()));
        }
        if self.sigma <= 0.0 {
            return Err(Error::InvalidConfig("sigma must be positive".into()));
        }
        if self.samples_per_class == 0 {
            return Err(Error::InvalidConfig("samples_per_class must be positive".into()));
        }
        let d = self.means[0].len();
        for (i, m) in self.means.iter().enumerate() {
            if m.len() != d {
                return Err(Error::InvalidConfig("class means must share a dimension".into()));
            }
            for other in &self.means[..i] {
                if m == other {
                    return Err(Error::InvalidConfig("class means must be pairwise distinct".into()));
                }
            }
        }
        Ok(())
    }
}

/// Draws the labeled mixture; deterministic per seed.
pub fn generate_dataset(spec: &ToyDatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = RngState::new(spec.seed);
    let d = spec.means[0].len();
    let mut data = Dataset::empty();
    for (c, mean) in spec.means.iter().enumerate() {
        for _ in 0..spec.samples_per_class {
            let x: Vec<f64> = (0..d).map(|j| mean[j] + spec.sigma * rng.normal()).collect();
            data.push(x, c);
        }
    }
    Ok(data)
}

/// Labeled points partitioned into remaining, forgetting, and the working
/// subset of the remaining data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub remain: Dataset,
    pub forget: Dataset,
    pub remain_subset: Dataset,
    pub forget_classes: BTreeSet<usize>,
}

impl DatasetSplit {
    pub fn validate(&self) -> Result<()> {
        if !self.forget.labels.iter().all(|l| self.forget_classes.contains(l)) {
            return Err(Error::SplitOverlap("forget split carries a non-forgotten label".into()));
        }
        if self.remain.labels.iter().any(|l| self.forget_classes.contains(l)) {
            return Err(Error::SplitOverlap("remain split carries a forgotten label".into()));
        }
        for p in &self.remain_subset.points {
            if !self.remain.points.contains(p) {
                return Err(Error::SplitOverlap("remain subset escapes the remaining data".into()));
            }
        }
        Ok(())
    }
}

/// Partitions by label and samples the working subset of the remaining data
/// without replacement at `rs_fraction`.
pub fn split_forget(
    dataset: &Dataset,
    forget_classes: &BTreeSet<usize>,
    rs_fraction: f64,
    seed: u64,
) -> Result<DatasetSplit> {
    let all = dataset.label_set();
    if forget_classes.is_empty() {
        return Err(Error::InvalidConfig("forget class set is empty".into()));
    }
    if forget_classes.is_superset(&all) {
        return Err(Error::InvalidConfig("nothing remains".into()));
    }
    if !(0.0..=1.0).contains(&rs_fraction) {
        return Err(Error::InvalidConfig("rs_fraction must lie in [0, 1]".into()));
    }
    let mut remain = Dataset::empty();
    let mut forget = Dataset::empty();
    for (x, &l) in dataset.points.iter().zip(&dataset.labels) {
        if forget_classes.contains(&l) {
            forget.push(x.clone(), l);
        } else {
            remain.push(x.clone(), l);
        }
    }
    let mut idx: Vec<usize> = (0..remain.len()).collect();
    let mut rng = RngState::new(seed);
    rng.shuffle(&mut idx);
    let take = (rs_fraction * remain.len() as f64).round() as usize;
    idx.truncate(take.min(remain.len()));
    let remain_subset = remain.select(&idx);
    Ok(DatasetSplit {
        remain,
        forget,
        remain_subset,
        forget_classes: forget_classes.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_sigma_hugs_means() {
        let spec = ToyDatasetSpec::ring(4, 3.0, 1e-6, 10, 1);
        let data = generate_dataset(&spec).unwrap();
        for (x, &l) in data.points.iter().zip(&data.labels) {
            let m = &spec.means[l];
            let dist: f64 = x.iter().zip(m).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            assert!(dist < 1e-4, "dist {dist}");
        }
    }

    #[test]
    fn generation_deterministic_per_seed() {
        let spec = ToyDatasetSpec::ring(4, 3.0, 0.35, 50, 9);
        assert_eq!(generate_dataset(&spec).unwrap(), generate_dataset(&spec).unwrap());
    }

    #[test]
    fn split_partition_arithmetic() {
        let spec = ToyDatasetSpec::ring(4, 3.0, 0.35, 100, 2);
        let data = generate_dataset(&spec).unwrap();
        let cf: BTreeSet<usize> = [2].into();
        let split = split_forget(&data, &cf, 0.5, 7).unwrap();
        assert_eq!(split.forget.len(), 100);
        assert_eq!(split.remain.len(), 300);
        split.validate().unwrap();
    }

    #[test]
    fn rs_fraction_one_takes_all_remaining() {
        let spec = ToyDatasetSpec::ring(3, 3.0, 0.35, 20, 3);
        let data = generate_dataset(&spec).unwrap();
        let cf: BTreeSet<usize> = [0].into();
        let split = split_forget(&data, &cf, 1.0, 7).unwrap();
        assert_eq!(split.remain_subset.len(), split.remain.len());
    }

    #[test]
    fn rs_fraction_counting() {
        let spec = ToyDatasetSpec::ring(4, 3.0, 0.35, 500, 4);
        let data = generate_dataset(&spec).unwrap();
        let cf: BTreeSet<usize> = [2].into();
        let split = split_forget(&data, &cf, 0.16, 7).unwrap();
        let want = 0.16 * split.remain.len() as f64;
        assert!((split.remain_subset.len() as f64 - want).abs() <= 1.0);
    }

    #[test]
    fn forgetting_everything_is_an_error() {
        let spec = ToyDatasetSpec::ring(2, 3.0, 0.35, 5, 5);
        let data = generate_dataset(&spec).unwrap();
        let cf: BTreeSet<usize> = [0, 1].into();
        assert!(split_forget(&data, &cf, 0.1, 7).is_err());
    }
}
