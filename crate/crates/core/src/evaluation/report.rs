//! Per-model aggregation and the cross-model comparison table.

use std::fmt;
use std::str::FromStr;

use super::wilcoxon::{wilcoxon, Alternative, ComparisonResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum StdKind {
    /// ddof = 1
    #[default]
    Sample,
    /// ddof = 0
    Population,
}

impl FromStr for StdKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sample" => Ok(StdKind::Sample),
            "population" => Ok(StdKind::Population),
            other => Err(Error::invalid(format!("unknown std kind `{other}`"))),
        }
    }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Two-pass standard deviation; zero for fewer than two sample values.
pub fn std_dev(xs: &[f64], kind: StdKind) -> f64 {
    let ddof = match kind {
        StdKind::Sample => 1,
        StdKind::Population => 0,
    };
    if xs.len() <= ddof {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - ddof) as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub model: String,
    pub cv_scores: Vec<f64>,
    pub holdout_scores: Vec<f64>,
    pub cv_mean: f64,
    pub cv_std: f64,
    pub holdout_mean: f64,
    pub holdout_std: f64,
    /// |mean(cv) − mean(holdout)|
    pub gap: f64,
}

pub fn aggregate(model: &str, cv: &[f64], holdout: &[f64], kind: StdKind) -> Result<MetricsRecord> {
    if cv.len() != holdout.len() {
        return Err(Error::invalid(format!(
            "{model}: {} CV scores but {} holdout scores",
            cv.len(),
            holdout.len()
        )));
    }
    if cv.is_empty() {
        return Err(Error::Empty("fold scores"));
    }
    let (cv_mean, holdout_mean) = (mean(cv), mean(holdout));
    Ok(MetricsRecord {
        model: model.to_string(),
        cv_scores: cv.to_vec(),
        holdout_scores: holdout.to_vec(),
        cv_mean,
        cv_std: std_dev(cv, kind),
        holdout_mean,
        holdout_std: std_dev(holdout, kind),
        gap: (cv_mean - holdout_mean).abs(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum Comparison {
    /// the best model, not tested against itself
    Reference,
    Tested(ComparisonResult),
    Undefined(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<(MetricsRecord, Comparison)>,
    pub reference: usize,
}

/// Tests the best model (highest holdout mean, first on ties) against every
/// other one on paired holdout scores, one-sided.
pub fn compare_models(records: Vec<MetricsRecord>) -> Result<Report> {
    if records.is_empty() {
        return Err(Error::Empty("model records"));
    }
    let reference = (0..records.len()).fold(0, |best, i| {
        if records[i].holdout_mean > records[best].holdout_mean {
            i
        } else {
            best
        }
    });
    let best = records[reference].holdout_scores.clone();
    let rows = records
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let cmp = if i == reference {
                Comparison::Reference
            } else {
                match wilcoxon(&best, &r.holdout_scores, Alternative::Greater) {
                    Ok(c) => Comparison::Tested(c),
                    Err(e) => Comparison::Undefined(e.to_string()),
                }
            };
            (r, cmp)
        })
        .collect();
    Ok(Report { rows, reference })
}

const HEADER: [&str; 6] = ["model", "cv", "holdout", "gap", "wilcoxon", "p"];

impl Report {
    fn cells(&self) -> Vec<[String; 6]> {
        self.rows
            .iter()
            .map(|(r, c)| {
                let (stat, p) = match c {
                    Comparison::Reference => ("N/A".to_string(), "N/A".to_string()),
                    Comparison::Tested(t) => (format!("{}", t.statistic), format!("{:.5}", t.p_value)),
                    Comparison::Undefined(_) => ("undefined".to_string(), "undefined".to_string()),
                };
                [
                    r.model.clone(),
                    format!("{:.4}±{:.4}", r.cv_mean, r.cv_std),
                    format!("{:.4}±{:.4}", r.holdout_mean, r.holdout_std),
                    format!("{:.4}", r.gap),
                    stat,
                    p,
                ]
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,cv_mean,cv_std,holdout_mean,holdout_std,gap,wilcoxon_stat,p_value\n");
        for (r, c) in &self.rows {
            let (stat, p) = match c {
                Comparison::Reference => ("N/A".into(), "N/A".into()),
                Comparison::Tested(t) => (t.statistic.to_string(), t.p_value.to_string()),
                Comparison::Undefined(_) => ("undefined".into(), "undefined".into()),
            };
            out.push_str(&format!(
                "{},{},{},{},{},{},{stat},{p}\n",
                r.model, r.cv_mean, r.cv_std, r.holdout_mean, r.holdout_std, r.gap
            ));
        }
        out
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let cells = self.cells();
        let mut widths = HEADER.map(|h| h.chars().count());
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let line = |f: &mut fmt::Formatter<'_>, row: &[String]| -> fmt::Result {
            let padded: Vec<String> = row
                .iter()
                .zip(&widths)
                .map(|(c, &w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            writeln!(f, "{}", padded.join("  ").trim_end())
        };
        line(f, &HEADER.map(String::from))?;
        for row in &cells {
            line(f, row)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_scores() {
        let r = aggregate("m", &[0.5; 5], &[0.4; 5], StdKind::Sample).unwrap();
        assert_eq!((r.cv_mean, r.holdout_mean, r.cv_std, r.holdout_std), (0.5, 0.4, 0.0, 0.0));
        assert!((r.gap - 0.1).abs() < 1e-12);
        assert!(aggregate("m", &[0.5; 5], &[0.4; 4], StdKind::Sample).is_err());
    }

    #[test]
    fn std_kinds() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        assert!((std_dev(&xs, StdKind::Population) - 1.25f64.sqrt()).abs() < 1e-15);
        assert!((std_dev(&xs, StdKind::Sample) - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn reference_is_na() {
        let a = aggregate("best", &[0.8; 5], &[0.9, 0.8, 0.85, 0.95, 0.9], StdKind::Sample).unwrap();
        let b = aggregate("other", &[0.6; 5], &[0.5, 0.6, 0.55, 0.65, 0.6], StdKind::Sample).unwrap();
        let report = compare_models(vec![b, a]).unwrap();
        assert_eq!(report.reference, 1);
        assert_eq!(report.rows[1].1, Comparison::Reference);
        let text = report.to_string();
        assert!(text.lines().nth(2).unwrap().contains("N/A"));
        assert!(report.to_csv().contains("0.03125"));
    }
}
