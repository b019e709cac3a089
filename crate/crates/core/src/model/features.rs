use crate::chemio::{Dataset, Molecule};
use crate::error::Result;
use crate::repr::cache::FeatureRecord;
use crate::repr::{adjacency_matrix, coulomb_matrix, laplacian_spectrum};

use super::ModelConfig;

/// Matrices and spectrum a variant needs for one molecule.
///
/// The spectrum is always taken from the raw Coulomb matrix; the graph
/// convolution sees the normalized one.
pub fn featurize(mol: &Molecule, cfg: &ModelConfig) -> Result<FeatureRecord> {
    let atomic_numbers = mol.atomic_numbers();
    if !cfg.variant.uses_coulomb() {
        return Ok(FeatureRecord {
            id: mol.id.clone(),
            atomic_numbers,
            graph: adjacency_matrix(mol)?,
            coulomb: None,
            spectrum: None,
        });
    }
    let c = coulomb_matrix(mol)?;
    let spectrum = match cfg.variant.laplacian() {
        Some(kind) => Some(laplacian_spectrum(&c, kind).map_err(|e| crate::Error::molecule(&mol.id, e.to_string()))?),
        None => None,
    };
    Ok(FeatureRecord {
        id: mol.id.clone(),
        atomic_numbers,
        graph: cfg.cm_normalization.apply(&c),
        coulomb: Some(c),
        spectrum,
    })
}

pub fn featurize_all(ds: &Dataset, cfg: &ModelConfig) -> Result<Vec<FeatureRecord>> {
    ds.molecules().iter().map(|m| featurize(m, cfg)).collect()
}
