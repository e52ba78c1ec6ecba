//! Dataset index: a UTF-8 CSV with header `path,label` and an optional
//! third `split` column (`holdout` or `fold<k>`).

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Assignment {
    Holdout,
    Fold(usize),
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Assignment::Holdout => f.write_str("holdout"),
            Assignment::Fold(k) => write!(f, "fold{k}"),
        }
    }
}

impl FromStr for Assignment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "holdout" {
            return Ok(Assignment::Holdout);
        }
        s.strip_prefix("fold")
            .and_then(|k| k.parse().ok())
            .map(Assignment::Fold)
            .ok_or_else(|| Error::Format(format!("unknown split tag `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// relative to the manifest's directory
    pub path: PathBuf,
    pub label: usize,
    pub split: Option<Assignment>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Manifest {
    pub records: Vec<ManifestEntry>,
    pub class_names: Vec<String>,
}

impl Manifest {
    pub fn new(records: Vec<ManifestEntry>, num_classes: usize) -> Result<Self> {
        let m = Self {
            records,
            class_names: (0..num_classes).map(|k| format!("class{k}")).collect(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for r in &self.records {
            counts[r.label] += 1;
        }
        counts
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(&r.path) {
                return Err(Error::Format(format!("duplicate manifest path {}", r.path.display())));
            }
            if r.label >= self.num_classes() {
                return Err(Error::Format(format!(
                    "label {} of {} outside [0,{})",
                    r.label,
                    r.path.display(),
                    self.num_classes()
                )));
            }
        }
        if let Some((k, &n)) = self.class_counts().iter().enumerate().find(|(_, &n)| n < 2) {
            return Err(Error::Format(format!(
                "class {k} has {n} samples; stratification needs at least 2"
            )));
        }
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let with_split = self.records.iter().any(|r| r.split.is_some());
        let mut out = String::from(if with_split { "path,label,split\n" } else { "path,label\n" });
        for r in &self.records {
            out.push_str(&format!("{},{}", r.path.display(), r.label));
            if with_split {
                out.push(',');
                if let Some(s) = r.split {
                    out.push_str(&s.to_string());
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str, num_classes: usize) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Format("empty manifest".into()))?;
        let with_split = match header.trim() {
            "path,label" => false,
            "path,label,split" => true,
            other => return Err(Error::Format(format!("unexpected manifest header `{other}`"))),
        };
        let mut records = Vec::new();
        for (n, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            let bad = || Error::Format(format!("manifest line {}: `{line}`", n + 2));
            if cols.len() != if with_split { 3 } else { 2 } {
                return Err(bad());
            }
            let label = cols[1].trim().parse().map_err(|_| bad())?;
            let split = match cols.get(2).map(|s| s.trim()) {
                Some("") | None => None,
                Some(s) => Some(s.parse()?),
            };
            records.push(ManifestEntry {
                path: PathBuf::from(cols[0].trim()),
                label,
                split,
            });
        }
        Self::new(records, num_classes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, NUM_CLASSES)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entries(labels: &[usize]) -> Vec<ManifestEntry> {
        labels
            .iter()
            .enumerate()
            .map(|(i, &label)| ManifestEntry {
                path: format!("v{i}.imv").into(),
                label,
                split: None,
            })
            .collect()
    }

    #[test]
    fn csv_roundtrip() {
        let m = Manifest::new(entries(&[0, 0, 1, 1, 2, 2, 3, 3]), 4).unwrap();
        let text = m.to_csv();
        assert!(text.starts_with("path,label\n"));
        assert_eq!(Manifest::parse(&text, 4).unwrap(), m);
    }

    #[test]
    fn validation() {
        assert!(Manifest::new(entries(&[0, 0, 1, 1, 2, 2, 3]), 4).is_err());
        assert!(Manifest::new(entries(&[0, 0, 1, 1, 2, 2, 3, 3, 4]), 4).is_err());
        let mut dup = entries(&[0, 0, 1, 1, 2, 2, 3, 3]);
        dup[1].path = dup[0].path.clone();
        assert!(Manifest::new(dup, 4).is_err());
        assert!(Manifest::parse("file,label\n", 4).is_err());
    }

    #[test]
    fn split_tags_parse() {
        let text = "path,label,split\na,0,holdout\nb,0,fold1\nc,1,fold0\nd,1,\ne,2,fold2\nf,2,fold2\ng,3,fold3\nh,3,fold4\n";
        let m = Manifest::parse(text, 4).unwrap();
        assert_eq!(m.records[0].split, Some(Assignment::Holdout));
        assert_eq!(m.records[1].split, Some(Assignment::Fold(1)));
        assert_eq!(m.records[3].split, None);
    }
}
