//! Second-order iterative stratification for multi-label data.
//!
//! Every sample is described by the label pairs `(a, b)` with `a <= b` drawn
//! from its positive labels, so single labels appear as `(a, a)`. The scarcest
//! pair still holding unassigned samples is handled first. Each of its samples
//! goes to the fold that still wants the most samples of that pair. Unlabeled
//! samples fill whatever capacity is left.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

/// Train/validation/test partition of dataset indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    /// Verifies the three parts partition `0..n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= n {
                return Err(Error::Data(format!("split index {i} out of range for {n} molecules")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Data(format!("split index {i} appears twice")));
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::Data(format!("split does not cover index {missing}")));
        }
        Ok(())
    }

    pub fn part(&self, name: &str) -> Result<&[usize]> {
        match name {
            "train" => Ok(&self.train),
            "val" | "validation" => Ok(&self.val),
            "test" => Ok(&self.test),
            other => Err(Error::Config(format!("unknown split part {other:?}"))),
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Split> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}

pub fn stratified_split(ds: &Dataset, fractions: [f64; 3], seed: u64) -> Result<Split> {
    if ds.len() < 3 {
        return Err(Error::Data(format!("cannot split {} molecules into three parts", ds.len())));
    }
    let mut folds = iterative_stratification(ds.targets(), &fractions, seed)?.into_iter();
    let mut next = || {
        let mut f = folds.next().unwrap_or_default();
        f.sort_unstable();
        f
    };
    Ok(Split { seed, train: next(), val: next(), test: next() })
}

/// Assigns every row of `targets` to one of `fractions.len()` folds.
///
/// Deterministic for a given seed: the seed only fixes the order in which
/// samples are visited. Ties between folds go to the fold with the most
/// remaining capacity, then to the lowest fold index.
pub fn iterative_stratification(targets: &[Vec<bool>], fractions: &[f64], seed: u64) -> Result<Vec<Vec<usize>>> {
    if fractions.is_empty() || fractions.iter().any(|&f| !(f > 0.0)) {
        return Err(Error::Config("split fractions must be positive".into()));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split fractions sum to {total}, expected 1")));
    }
    let n = targets.len();
    let k = fractions.len();

    let mut combo_ids: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let sample_labels: Vec<Vec<usize>> =
        targets.iter().map(|row| row.iter().enumerate().filter(|(_, &t)| t).map(|(i, _)| i).collect()).collect();
    for labels in &sample_labels {
        for (x, &a) in labels.iter().enumerate() {
            for &b in &labels[x..] {
                combo_ids.entry((a, b)).or_insert(0);
            }
        }
    }
    for (id, v) in combo_ids.values_mut().enumerate() {
        *v = id;
    }
    let sample_combos: Vec<Vec<usize>> = sample_labels
        .iter()
        .map(|labels| {
            let mut c = Vec::new();
            for (x, &a) in labels.iter().enumerate() {
                for &b in &labels[x..] {
                    c.push(combo_ids[&(a, b)]);
                }
            }
            c
        })
        .collect();

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let num_combos = combo_ids.len();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); num_combos];
    for &s in &order {
        for &c in &sample_combos[s] {
            members[c].push(s);
        }
    }
    let mut remaining: Vec<usize> = members.iter().map(Vec::len).collect();
    let mut want_samples: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut want_combo: Vec<Vec<f64>> =
        members.iter().map(|m| fractions.iter().map(|f| f * m.len() as f64).collect()).collect();

    let mut fold_of: Vec<Option<usize>> = vec![None; n];
    let mut folds: Vec<Vec<usize>> = vec![Vec::new(); k];

    let pick = |scores: &[f64], capacity: &[f64]| -> usize {
        let mut best = 0;
        for j in 1..scores.len() {
            if scores[j] > scores[best] || (scores[j] == scores[best] && capacity[j] > capacity[best]) {
                best = j;
            }
        }
        best
    };

    while let Some(combo) = (0..num_combos).filter(|&c| remaining[c] > 0).min_by_key(|&c| (remaining[c], c)) {
        for &s in &members[combo] {
            if fold_of[s].is_some() {
                continue;
            }
            let j = pick(&want_combo[combo], &want_samples);
            fold_of[s] = Some(j);
            folds[j].push(s);
            want_samples[j] -= 1.0;
            for &c in &sample_combos[s] {
                want_combo[c][j] -= 1.0;
                remaining[c] -= 1;
            }
        }
    }

    for &s in &order {
        if fold_of[s].is_none() {
            let j = pick(&want_samples, &want_samples);
            fold_of[s] = Some(j);
            folds[j].push(s);
            want_samples[j] -= 1.0;
        }
    }
    Ok(folds)
}
