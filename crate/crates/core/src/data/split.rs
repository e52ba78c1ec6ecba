//! Stratified holdout plus k-fold assignment, and epoch batching.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::manifest::{Assignment, Manifest};
use crate::error::{Error, Result};

pub const DEFAULT_HOLDOUT: f64 = 0.07;
pub const DEFAULT_FOLDS: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct SplitPlan {
    pub holdout_fraction: f64,
    pub n_folds: usize,
    pub seed: u64,
    /// indexed like the labels the plan was built from
    pub assignment: Vec<Assignment>,
}

impl SplitPlan {
    pub fn holdout(&self) -> Vec<usize> {
        self.indices(|a| a == Assignment::Holdout)
    }

    pub fn fold(&self, k: usize) -> Vec<usize> {
        self.indices(|a| a == Assignment::Fold(k))
    }

    /// Every non-holdout record outside fold `k`.
    pub fn train_for(&self, k: usize) -> Vec<usize> {
        self.indices(|a| matches!(a, Assignment::Fold(f) if f != k))
    }

    fn indices(&self, keep: impl Fn(Assignment) -> bool) -> Vec<usize> {
        (0..self.assignment.len()).filter(|&i| keep(self.assignment[i])).collect()
    }

    pub fn to_csv(&self, manifest: &Manifest) -> String {
        let mut out = String::from("path,label,split\n");
        for (r, a) in manifest.records.iter().zip(&self.assignment) {
            out.push_str(&format!("{},{},{a}\n", r.path.display(), r.label));
        }
        out
    }
}

fn round_half_up(x: f64) -> usize {
    (x + 0.5 + 1e-9).floor() as usize
}

/// Per class: seeded shuffle, the first `round(fraction·count)` go to the
/// holdout and the rest are dealt round-robin over the folds. The deal
/// continues across classes so fold totals also stay within one.
pub fn stratified_split(labels: &[usize], holdout_fraction: f64, n_folds: usize, seed: u64) -> Result<SplitPlan> {
    if !(0.0..1.0).contains(&holdout_fraction) {
        return Err(Error::invalid(format!("holdout fraction {holdout_fraction} outside [0,1)")));
    }
    if n_folds == 0 {
        return Err(Error::invalid("need at least one fold"));
    }
    let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![Assignment::Holdout; labels.len()];
    let mut next_fold = 0;
    for class in 0..num_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if members.is_empty() {
            continue;
        }
        members.shuffle(&mut rng);
        let n_holdout = round_half_up(holdout_fraction * members.len() as f64);
        let rest = members.len() - n_holdout;
        if rest < n_folds {
            return Err(Error::invalid(format!(
                "class {class} has {rest} samples outside the holdout, fewer than {n_folds} folds"
            )));
        }
        for &i in &members[n_holdout..] {
            assignment[i] = Assignment::Fold(next_fold);
            next_fold = (next_fold + 1) % n_folds;
        }
    }
    Ok(SplitPlan {
        holdout_fraction,
        n_folds,
        seed,
        assignment,
    })
}

/// Shuffled batches of `indices` for one epoch, seeded by `seed ^ epoch`.
pub fn batch_iter(indices: &[usize], batch_size: usize, drop_last: bool, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let batch_size = batch_size.max(1);
    let mut order = indices.to_vec();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ epoch as u64));
    order
        .chunks(batch_size)
        .filter(|c| !drop_last || c.len() == batch_size)
        .map(<[usize]>::to_vec)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(counts: &[usize]) -> Vec<usize> {
        counts.iter().enumerate().flat_map(|(k, &n)| vec![k; n]).collect()
    }

    fn holdout_counts(plan: &SplitPlan, labels: &[usize]) -> Vec<usize> {
        let mut c = vec![0; 4];
        for i in plan.holdout() {
            c[labels[i]] += 1;
        }
        c
    }

    #[test]
    fn holdout_rounding_and_fold_balance() {
        let y = labels(&[40, 30, 20, 10]);
        let plan = stratified_split(&y, 0.1, 5, 9).unwrap();
        assert_eq!(holdout_counts(&plan, &y), vec![4, 3, 2, 1]);
        for class in 0..4 {
            let per_fold: Vec<usize> = (0..5).map(|k| plan.fold(k).iter().filter(|&&i| y[i] == class).count()).collect();
            let (lo, hi) = (per_fold.iter().min().unwrap(), per_fold.iter().max().unwrap());
            assert!(hi - lo <= 1, "{per_fold:?}");
        }
        assert_eq!(holdout_counts(&stratified_split(&labels(&[50, 50, 50, 50]), 0.07, 5, 0).unwrap(), &labels(&[50; 4])), vec![4; 4]);
    }

    #[test]
    fn zero_fraction_and_small_classes() {
        let y = labels(&[6, 6, 6, 6]);
        assert!(stratified_split(&y, 0.0, 5, 1).unwrap().holdout().is_empty());
        assert!(stratified_split(&labels(&[6, 6, 6, 4]), 0.0, 5, 1).is_err());
    }

    #[test]
    fn batching() {
        let idx: Vec<usize> = (0..20).collect();
        let b = batch_iter(&idx, 8, true, 1, 0);
        assert_eq!(b.len(), 2);
        assert_eq!(b.iter().map(Vec::len).sum::<usize>(), 16);
        assert_eq!(b, batch_iter(&idx, 8, true, 1, 0));
        assert_ne!(b, batch_iter(&idx, 8, true, 1, 1));
        let mut all: Vec<usize> = batch_iter(&idx[..16], 8, true, 2, 3).concat();
        all.sort();
        assert_eq!(all, (0..16).collect::<Vec<_>>());
        assert_eq!(batch_iter(&idx, 8, false, 1, 0).len(), 3);
    }
}
