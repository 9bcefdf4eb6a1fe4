//! Dataset manifests: one `subject_id,path,label[,split]` record per line.
//! Blank lines and lines starting with `#` are skipped.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidParameter(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub subject_id: String,
    /// As written in the manifest; relative paths are resolved by the caller.
    pub path: String,
    pub label: String,
    pub split: Option<Split>,
}

pub fn parse_manifest(text: &str) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let err = |msg: String| Error::Parse { line: i + 1, msg };
        if !(3..=4).contains(&fields.len()) {
            return Err(err(format!("expected 3 or 4 comma-separated fields, found {}", fields.len())));
        }
        if fields[..3].iter().any(|f| f.is_empty()) {
            return Err(err("empty subject, path or label".into()));
        }
        let split = match fields.get(3) {
            Some(s) => Some(s.parse().map_err(|e: Error| err(e.to_string()))?),
            None => None,
        };
        out.push(Record {
            subject_id: fields[0].into(),
            path: fields[1].into(),
            label: fields[2].into(),
            split,
        });
    }
    Ok(out)
}

pub fn format_manifest(records: &[Record]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&format!("{},{},{}", r.subject_id, r.path, r.label));
        if let Some(split) = r.split {
            s.push(',');
            s.push_str(split.as_str());
        }
        s.push('\n');
    }
    s
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<Record>> {
    let path = path.as_ref();
    parse_manifest(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_manifest(records: &[Record], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_manifest(records)).map_err(|e| Error::io(path, e))
}

/// Every label must be one of `class_names`; returns the class index per record.
pub fn label_indices(records: &[Record], class_names: &[String]) -> Result<Vec<usize>> {
    records
        .iter()
        .map(|r| {
            class_names.iter().position(|c| *c == r.label).ok_or_else(|| {
                Error::InvalidParameter(format!(
                    "subject {}: label {:?} is not one of {:?}",
                    r.subject_id, r.label, class_names
                ))
            })
        })
        .collect()
}

/// Subject-level fractions: `test` of all subjects, then `val` of the rest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub test: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions { test: 0.2, val: 0.1 }
    }
}

/// Splits `n` into two counts proportional to `(1 - f, f)` by largest
/// remainder; an exact tie goes to the first part.
fn largest_remainder(n: usize, f: f64) -> (usize, usize) {
    let second = n as f64 * f;
    let (lo, frac2) = (second.floor() as usize, second - second.floor());
    let frac1 = (n as f64 - second) - (n as f64 - second).floor();
    let leftover = n - lo - (n as f64 - second).floor() as usize;
    if leftover > 0 && frac2 > frac1 {
        (n - lo - 1, lo + 1)
    } else {
        (n - lo, lo)
    }
}

/// Assigns every record a split so that all records of a subject share it.
pub fn split_manifest(records: &[Record], fractions: SplitFractions, rng_seed: u64) -> Result<Vec<Record>> {
    for (name, f) in [("test", fractions.test), ("val", fractions.val)] {
        if !(0.0..1.0).contains(&f) {
            return Err(Error::InvalidParameter(format!("{name} fraction {f} must lie in [0, 1)")));
        }
    }
    let subjects: BTreeSet<&str> = records.iter().map(|r| r.subject_id.as_str()).collect();
    if subjects.len() < 3 {
        return Err(Error::TooFewSubjects {
            needed: 3,
            found: subjects.len(),
        });
    }
    let mut order: Vec<&str> = subjects.into_iter().collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(rng_seed));
    let (train_side, n_test) = largest_remainder(order.len(), fractions.test);
    let (n_train, _) = largest_remainder(train_side, fractions.val);
    let assignment: BTreeMap<&str, Split> = order
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let split = if i < n_train {
                Split::Train
            } else if i < train_side {
                Split::Val
            } else {
                Split::Test
            };
            (*s, split)
        })
        .collect();
    debug_assert_eq!(order.len() - train_side, n_test);
    Ok(records
        .iter()
        .map(|r| Record {
            split: Some(assignment[r.subject_id.as_str()]),
            ..r.clone()
        })
        .collect())
}
