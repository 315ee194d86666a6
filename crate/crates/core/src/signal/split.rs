use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Segment;
use crate::error::{Error, Result};
use crate::rng::{derived, stream};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.8, val: 0.1, test: 0.1 }
    }
}

impl SplitRatios {
    fn as_array(&self) -> [f64; 3] {
        [self.train, self.val, self.test]
    }

    pub fn validate(&self) -> Result<()> {
        let r = self.as_array();
        if r.iter().any(|&v| !(v > 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios {r:?} must be positive and sum to 1")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<Segment>,
    pub val: Vec<Segment>,
    pub test: Vec<Segment>,
}

impl Splits {
    /// Patient ids of train, val and test.
    pub fn patients(&self) -> [BTreeSet<u32>; 3] {
        let ids = |v: &[Segment]| v.iter().map(|s| s.patient_id).collect();
        [ids(&self.train), ids(&self.val), ids(&self.test)]
    }
}

/// Patient-independent split. Patients are visited in seeded random order and
/// each goes to the split furthest below its segment-count target, with every
/// split guaranteed at least one patient.
pub fn split_dataset(segments: Vec<Segment>, ratios: SplitRatios, seed: u64) -> Result<Splits> {
    ratios.validate()?;
    let mut sizes: BTreeMap<u32, usize> = BTreeMap::new();
    for s in &segments {
        *sizes.entry(s.patient_id).or_default() += 1;
    }
    if sizes.len() < 3 {
        return Err(Error::invalid("split_dataset", format!("need at least 3 patients, got {}", sizes.len())));
    }
    let mut order: Vec<u32> = sizes.keys().copied().collect();
    order.shuffle(&mut derived(seed, &[stream::SPLIT]));

    let total = segments.len() as f64;
    let targets = ratios.as_array().map(|r| r * total);
    let mut counts = [0usize; 3];
    let mut members = [0usize; 3];
    let mut assignment = BTreeMap::new();
    for (i, pid) in order.iter().enumerate() {
        let remaining = order.len() - i;
        let empty: Vec<usize> = (0..3).filter(|&k| members[k] == 0).collect();
        let pick = if remaining <= empty.len() {
            empty[0]
        } else {
            (0..3)
                .max_by(|&a, &b| (targets[a] - counts[a] as f64).total_cmp(&(targets[b] - counts[b] as f64)).then(b.cmp(&a)))
                .expect("three splits")
        };
        counts[pick] += sizes[pid];
        members[pick] += 1;
        assignment.insert(*pid, pick);
    }

    let mut out = Splits::default();
    for s in segments {
        match assignment[&s.patient_id] {
            0 => out.train.push(s),
            1 => out.val.push(s),
            _ => out.test.push(s),
        }
    }
    Ok(out)
}
