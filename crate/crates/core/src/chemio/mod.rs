//! Molecule and dataset ingestion, label vocabulary, cleaning and splitting.

mod elements;
mod split;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use elements::{atomic_number, symbol, MAX_ATOMIC_NUMBER};
pub use split::{iterative_stratification, stratified_split, Split};

/// Default upper bound on atoms per molecule.
pub const DEFAULT_MAX_ATOMS: usize = 80;

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub atomic_number: u32,
    /// Cartesian position in Ångström.
    pub position: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Molecule {
    pub id: String,
    pub atoms: Vec<Atom>,
    pub bonds: Option<Vec<(usize, usize)>>,
    pub labels: BTreeSet<String>,
}

impl Molecule {
    /// Checks the structural invariants against an atom limit.
    pub fn validate(&self, max_atoms: usize) -> Result<()> {
        let n = self.atoms.len();
        if n == 0 {
            return Err(Error::molecule(&self.id, "molecule has no atoms"));
        }
        if n > max_atoms {
            return Err(Error::molecule(&self.id, format!("{n} atoms exceeds the limit of {max_atoms}")));
        }
        for (k, atom) in self.atoms.iter().enumerate() {
            if atom.atomic_number == 0 || atom.atomic_number > MAX_ATOMIC_NUMBER {
                return Err(Error::molecule(
                    &self.id,
                    format!("atom {k}: unsupported atomic number {}", atom.atomic_number),
                ));
            }
            if !atom.position.iter().all(|c| c.is_finite()) {
                return Err(Error::molecule(&self.id, format!("atom {k}: non-finite coordinate")));
            }
        }
        if let Some(bonds) = &self.bonds {
            for &(i, j) in bonds {
                if i >= n || j >= n || i == j {
                    return Err(Error::molecule(&self.id, format!("invalid bond ({i}, {j})")));
                }
            }
        }
        Ok(())
    }

    pub fn atomic_numbers(&self) -> Vec<u32> {
        self.atoms.iter().map(|a| a.atomic_number).collect()
    }

    /// Same molecule with atoms reordered so that new atom `k` is old atom `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Molecule {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        Molecule {
            id: self.id.clone(),
            atoms: perm.iter().map(|&old| self.atoms[old].clone()).collect(),
            bonds: self.bonds.as_ref().map(|b| b.iter().map(|&(i, j)| (inverse[i], inverse[j])).collect()),
            labels: self.labels.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelVocabulary {
    descriptors: Vec<String>,
    counts: Vec<usize>,
}

impl LabelVocabulary {
    pub fn descriptors(&self) -> &[String] {
        &self.descriptors
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.descriptors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.descriptors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.descriptors.binary_search_by(|d| d.as_str().cmp(name)).ok()
    }
}

/// Molecules with a fixed label vocabulary and a dense binary target matrix.
///
/// Immutable once built: cleaning operations return new datasets.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    molecules: Vec<Molecule>,
    vocabulary: LabelVocabulary,
    targets: Vec<Vec<bool>>,
}

impl Dataset {
    /// Builds the vocabulary from the union of labels, sorted lexicographically.
    pub fn new(molecules: Vec<Molecule>) -> Self {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for m in &molecules {
            for l in &m.labels {
                *counts.entry(l.clone()).or_default() += 1;
            }
        }
        let (descriptors, counts): (Vec<_>, Vec<_>) = counts.into_iter().unzip();
        let vocabulary = LabelVocabulary { descriptors, counts };
        let targets =
            molecules.iter().map(|m| vocabulary.descriptors.iter().map(|d| m.labels.contains(d)).collect()).collect();
        Dataset { molecules, vocabulary, targets }
    }

    pub fn molecules(&self) -> &[Molecule] {
        &self.molecules
    }

    pub fn vocabulary(&self) -> &LabelVocabulary {
        &self.vocabulary
    }

    pub fn targets(&self) -> &[Vec<bool>] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.molecules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.molecules.is_empty()
    }

    pub fn num_descriptors(&self) -> usize {
        self.vocabulary.len()
    }

    /// Target row `i` as 0/1 floats in vocabulary order.
    pub fn target_row(&self, i: usize) -> Vec<f64> {
        self.targets[i].iter().map(|&t| if t { 1.0 } else { 0.0 }).collect()
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for m in &self.molecules {
            let record = RecordOut {
                id: &m.id,
                atoms: m
                    .atoms
                    .iter()
                    .map(|a| {
                        let el = match symbol(a.atomic_number) {
                            Some(s) => ElementRef::Symbol(s.to_string()),
                            None => ElementRef::Number(a.atomic_number),
                        };
                        (el, a.position[0], a.position[1], a.position[2])
                    })
                    .collect(),
                bonds: m.bonds.as_deref(),
                labels: m.labels.iter().map(String::as_str).collect(),
            };
            out.push_str(&serde_json::to_string(&record).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())?;
        Ok(())
    }

    /// SHA-256 of the canonical JSONL serialization, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_jsonl().as_bytes()))
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset::new(indices.iter().map(|&i| self.molecules[i].clone()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum ElementRef {
    Number(u32),
    Symbol(String),
}

#[derive(Deserialize)]
struct RecordIn {
    id: String,
    atoms: Vec<(ElementRef, f64, f64, f64)>,
    #[serde(default)]
    bonds: Option<Vec<(usize, usize)>>,
    #[serde(default)]
    labels: Vec<String>,
}

#[derive(Serialize)]
struct RecordOut<'a> {
    id: &'a str,
    atoms: Vec<(ElementRef, f64, f64, f64)>,
    #[serde(skip_serializing_if = "Option::is_none")]
    bonds: Option<&'a [(usize, usize)]>,
    labels: Vec<&'a str>,
}

#[derive(Debug, Clone, Copy)]
pub struct ParseOptions {
    pub max_atoms: usize,
}

impl Default for ParseOptions {
    fn default() -> Self {
        ParseOptions { max_atoms: DEFAULT_MAX_ATOMS }
    }
}

pub fn parse_molecules(path: impl AsRef<Path>, opts: &ParseOptions) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    parse_jsonl(&text, opts)
}

/// Parses JSONL text; blank lines are skipped, line numbers are 1-based.
pub fn parse_jsonl(text: &str, opts: &ParseOptions) -> Result<Dataset> {
    let mut molecules = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RecordIn =
            serde_json::from_str(line).map_err(|e| Error::Parse { line: line_no, msg: e.to_string() })?;
        let atoms = rec
            .atoms
            .into_iter()
            .map(|(el, x, y, z)| {
                let atomic_number = match el {
                    ElementRef::Number(z) => z,
                    ElementRef::Symbol(s) => atomic_number(&s)
                        .ok_or_else(|| Error::Parse { line: line_no, msg: format!("unknown element symbol {s:?}") })?,
                };
                Ok(Atom { atomic_number, position: [x, y, z] })
            })
            .collect::<Result<Vec<_>>>()?;
        let mol = Molecule { id: rec.id, atoms, bonds: rec.bonds, labels: rec.labels.into_iter().collect() };
        mol.validate(opts.max_atoms)?;
        molecules.push(mol);
    }
    Ok(Dataset::new(molecules))
}

/// Merges records sharing an id; their label sets are united.
///
/// Duplicates must agree on atoms (and on bonds when both carry them).
pub fn merge_duplicates(ds: &Dataset) -> Result<Dataset> {
    let mut order: Vec<Molecule> = Vec::new();
    let mut slot: BTreeMap<String, usize> = BTreeMap::new();
    for m in ds.molecules() {
        match slot.get(&m.id) {
            None => {
                slot.insert(m.id.clone(), order.len());
                order.push(m.clone());
            }
            Some(&k) => {
                let kept = &mut order[k];
                if kept.atoms != m.atoms {
                    return Err(Error::molecule(&m.id, "duplicate records disagree on atoms"));
                }
                match (&kept.bonds, &m.bonds) {
                    (Some(a), Some(b)) if a != b => {
                        return Err(Error::molecule(&m.id, "duplicate records disagree on bonds"))
                    }
                    (None, Some(b)) => kept.bonds = Some(b.clone()),
                    _ => {}
                }
                kept.labels.extend(m.labels.iter().cloned());
            }
        }
    }
    Ok(Dataset::new(order))
}

/// Descriptor combinations that disqualify a molecule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictTable {
    /// Descriptors that may not co-occur with any other descriptor.
    pub exclusive: Vec<String>,
    /// Descriptor pairs that may not co-occur.
    #[serde(default)]
    pub pairs: Vec<(String, String)>,
}

impl Default for ConflictTable {
    fn default() -> Self {
        ConflictTable { exclusive: vec!["odorless".to_string()], pairs: Vec::new() }
    }
}

impl ConflictTable {
    pub fn conflicts(&self, labels: &BTreeSet<String>) -> bool {
        self.exclusive.iter().any(|e| labels.contains(e) && labels.len() > 1)
            || self.pairs.iter().any(|(a, b)| labels.contains(a) && labels.contains(b))
    }
}

/// Drops every molecule whose label set hits the conflict table.
pub fn drop_conflicting(ds: &Dataset, table: &ConflictTable) -> Dataset {
    Dataset::new(ds.molecules().iter().filter(|m| !table.conflicts(&m.labels)).cloned().collect())
}

/// Keeps descriptors with at least `min_count` positives.
///
/// Molecules left without labels are kept unless `drop_unlabeled` is set.
pub fn filter_rare_descriptors(ds: &Dataset, min_count: usize, drop_unlabeled: bool) -> Result<Dataset> {
    if min_count == 0 {
        return Err(Error::Config("min_count must be at least 1".into()));
    }
    let vocab = ds.vocabulary();
    let keep: BTreeSet<&str> = vocab
        .descriptors()
        .iter()
        .zip(vocab.counts())
        .filter(|(_, &c)| c >= min_count)
        .map(|(d, _)| d.as_str())
        .collect();
    if keep.is_empty() {
        return Err(Error::Data(format!("no descriptor has at least {min_count} positives")));
    }
    let molecules = ds
        .molecules()
        .iter()
        .map(|m| {
            let mut m = m.clone();
            m.labels.retain(|l| keep.contains(l.as_str()));
            m
        })
        .filter(|m| !drop_unlabeled || !m.labels.is_empty())
        .collect();
    Ok(Dataset::new(molecules))
}

/// Cleaning steps applied, in order, before featurization or training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CleaningConfig {
    pub max_atoms: usize,
    pub merge_duplicates: bool,
    pub conflicts: Option<ConflictTable>,
    pub min_count: usize,
    pub drop_unlabeled: bool,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        CleaningConfig {
            max_atoms: DEFAULT_MAX_ATOMS,
            merge_duplicates: true,
            conflicts: Some(ConflictTable::default()),
            min_count: 30,
            drop_unlabeled: false,
        }
    }
}

/// Parses and cleans a dataset file.
pub fn load_clean(path: impl AsRef<Path>, cfg: &CleaningConfig) -> Result<Dataset> {
    let ds = parse_molecules(path, &ParseOptions { max_atoms: cfg.max_atoms })?;
    clean(ds, cfg)
}

pub fn clean(mut ds: Dataset, cfg: &CleaningConfig) -> Result<Dataset> {
    if cfg.merge_duplicates {
        ds = merge_duplicates(&ds)?;
    }
    if let Some(table) = &cfg.conflicts {
        ds = drop_conflicting(&ds, table);
    }
    filter_rare_descriptors(&ds, cfg.min_count, cfg.drop_unlabeled)
}
