//! Seeded, class-stratified train/test splits that keep dialogues whole
//! whenever the per-class test quota allows it.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Dataset, SegmentRef};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<SegmentRef>,
    pub test: Vec<SegmentRef>,
    pub seed: u64,
}

impl Split {
    pub fn validate(&self) -> Result<()> {
        if self.train.is_empty() || self.test.is_empty() {
            return Err(Error::Argument("both sides of a split must be nonempty".into()));
        }
        let train: BTreeSet<_> = self.train.iter().collect();
        if let Some(dup) = self.test.iter().find(|r| train.contains(r)) {
            return Err(Error::Argument(format!("{} is on both sides", dup.file_stem())));
        }
        Ok(())
    }
}

fn check_fraction(test_fraction: f64) -> Result<()> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Argument(format!("test fraction {test_fraction} outside (0, 1)")));
    }
    Ok(())
}

/// Indices of `subset` assigned to the test side.
fn stratified_indices(
    ds: &Dataset,
    subset: &[usize],
    test_fraction: f64,
    rng: &mut ChaCha8Rng,
) -> Result<BTreeSet<usize>> {
    let k = ds.manifest.num_classes;
    let mut counts = vec![0usize; k];
    for &i in subset {
        counts[ds.segments[i].label.class_index] += 1;
    }
    let mut quota = vec![0usize; k];
    for (c, &n) in counts.iter().enumerate() {
        if n == 0 {
            continue;
        }
        if n < 2 {
            return Err(Error::Stratification(format!(
                "class `{}` has {n} segment(s); need at least 2",
                ds.manifest.class_names[c]
            )));
        }
        quota[c] = ((n as f64 * test_fraction).round() as usize).clamp(1, n - 1);
    }

    let mut dialogues = ds.group_dialogues(subset.iter().copied());
    dialogues.shuffle(rng);
    let mut taken = vec![0usize; k];
    let mut test = BTreeSet::new();
    for d in &dialogues {
        let mut need = vec![0usize; k];
        for &i in &d.segments {
            need[ds.segments[i].label.class_index] += 1;
        }
        if (0..k).all(|c| taken[c] + need[c] <= quota[c]) {
            for c in 0..k {
                taken[c] += need[c];
            }
            test.extend(d.segments.iter().copied());
        }
    }
    // fall back to single segments where whole dialogues cannot meet the quota
    for c in 0..k {
        if taken[c] == quota[c] {
            continue;
        }
        let mut pool: Vec<usize> =
            subset.iter().copied().filter(|i| !test.contains(i) && ds.segments[*i].label.class_index == c).collect();
        pool.sort_unstable();
        pool.shuffle(rng);
        for i in pool.into_iter().take(quota[c] - taken[c]) {
            test.insert(i);
        }
    }
    Ok(test)
}

fn to_split(ds: &Dataset, subset: &[usize], test: &BTreeSet<usize>, seed: u64) -> Split {
    let (mut train, mut test_refs) = (Vec::new(), Vec::new());
    for &i in subset {
        let key = ds.segments[i].key();
        if test.contains(&i) {
            test_refs.push(key);
        } else {
            train.push(key);
        }
    }
    Split { train, test: test_refs, seed }
}

fn subject_rng(seed: u64, subject_idx: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(subject_idx as u64);
    rng
}

/// Stratified split of one subject's segments.
pub fn split_subject_wise(ds: &Dataset, subject_id: &str, test_fraction: f64, seed: u64) -> Result<Split> {
    check_fraction(test_fraction)?;
    let idx = ds
        .manifest
        .subjects
        .iter()
        .position(|s| s == subject_id)
        .ok_or_else(|| Error::Lookup { kind: "subject", name: subject_id.to_string() })?;
    let subset: Vec<usize> = (0..ds.len()).filter(|&i| ds.segments[i].subject_id == subject_id).collect();
    let test = stratified_indices(ds, &subset, test_fraction, &mut subject_rng(seed, idx))?;
    let split = to_split(ds, &subset, &test, seed);
    split.validate()?;
    Ok(split)
}

/// Union of the per-subject splits of every subject.
pub fn split_all_subjects(ds: &Dataset, test_fraction: f64, seed: u64) -> Result<Split> {
    check_fraction(test_fraction)?;
    let mut out = Split { train: vec![], test: vec![], seed };
    for subject in &ds.manifest.subjects {
        let s = split_subject_wise(ds, subject, test_fraction, seed)?;
        out.train.extend(s.train);
        out.test.extend(s.test);
    }
    out.validate()?;
    Ok(out)
}
