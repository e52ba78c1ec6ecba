use crate::error::{Error, Result};

/// `counts[t][p]`: samples of true class `t` predicted as `p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

/// Balanced accuracy together with the classes missing from `y_true`.
#[derive(Debug, Clone, PartialEq)]
pub struct BalancedAccuracy {
    pub value: f64,
    pub absent_classes: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn new(num_classes: usize) -> Self {
        Self {
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    pub fn from_predictions(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<Self> {
        if y_true.len() != y_pred.len() {
            return Err(Error::invalid(format!(
                "{} labels vs {} predictions",
                y_true.len(),
                y_pred.len()
            )));
        }
        let mut m = Self::new(num_classes);
        for (&t, &p) in y_true.iter().zip(y_pred) {
            if t >= num_classes || p >= num_classes {
                return Err(Error::invalid(format!("label pair ({t},{p}) outside [0,{num_classes})")));
            }
            m.counts[t][p] += 1;
        }
        Ok(m)
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Recall of each class, `None` when the class has no support.
    pub fn recalls(&self) -> Vec<Option<f64>> {
        self.counts
            .iter()
            .enumerate()
            .map(|(k, row)| {
                let support: u64 = row.iter().sum();
                (support > 0).then(|| row[k] as f64 / support as f64)
            })
            .collect()
    }

    pub fn balanced_accuracy(&self) -> Result<BalancedAccuracy> {
        if self.total() == 0 {
            return Err(Error::Empty("balanced accuracy input"));
        }
        let recalls = self.recalls();
        let present: Vec<f64> = recalls.iter().flatten().copied().collect();
        Ok(BalancedAccuracy {
            value: present.iter().sum::<f64>() / present.len() as f64,
            absent_classes: (0..recalls.len()).filter(|&k| recalls[k].is_none()).collect(),
        })
    }
}

/// Mean recall over the classes present in `y_true`.
pub fn balanced_accuracy(y_true: &[usize], y_pred: &[usize], num_classes: usize) -> Result<f64> {
    Ok(ConfusionMatrix::from_predictions(y_true, y_pred, num_classes)?
        .balanced_accuracy()?
        .value)
}
