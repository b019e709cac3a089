//! The network and its ablation variants.
//!
//! Every variant shares the element-keyed atom embedding, the residual graph
//! convolution stack, sum pooling and the sigmoid head. The `mol-peco-*`
//! variants add a learned positional encoding built from a Laplacian
//! spectrum of the raw Coulomb matrix.

mod features;

use std::rc::Rc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{multilabel_loss, LinearParams, ParamStore, Tape, Tensor, TransformerBlock};
use crate::chemio::MAX_ATOMIC_NUMBER;
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::repr::cache::FeatureRecord;
use crate::repr::{LaplacianKind, Normalization};

pub use features::{featurize, featurize_all};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    AdjacencyGcn,
    CoulombGcn,
    MolPecoSym,
    MolPecoAsym,
}

impl Variant {
    pub const ALL: [Variant; 4] =
        [Variant::AdjacencyGcn, Variant::CoulombGcn, Variant::MolPecoSym, Variant::MolPecoAsym];

    pub fn name(self) -> &'static str {
        match self {
            Variant::AdjacencyGcn => "adjacency-gcn",
            Variant::CoulombGcn => "coulomb-gcn",
            Variant::MolPecoSym => "mol-peco-sym",
            Variant::MolPecoAsym => "mol-peco-asym",
        }
    }

    pub fn uses_coulomb(self) -> bool {
        self != Variant::AdjacencyGcn
    }

    /// Laplacian whose spectrum feeds the positional encoding, if any.
    pub fn laplacian(self) -> Option<LaplacianKind> {
        match self {
            Variant::MolPecoSym => Some(LaplacianKind::Symmetric),
            Variant::MolPecoAsym => Some(LaplacianKind::RandomWalk),
            _ => None,
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL.into_iter().find(|v| v.name() == s).ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub variant: Variant,
    /// Embedding width.
    pub d: usize,
    /// Number of lowest eigenpairs fed to the positional encoder.
    pub p: usize,
    pub gcn_layers: usize,
    pub transformer_layers: usize,
    /// Fully-connected layers in the classifier head, the output layer included.
    pub head_layers: usize,
    pub cm_normalization: Normalization,
    /// Number of descriptors.
    pub o: usize,
    /// Size of the element embedding table; atomic numbers must be below it.
    pub z_max: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            variant: Variant::MolPecoAsym,
            d: 32,
            p: 20,
            gcn_layers: 3,
            transformer_layers: 4,
            head_layers: 1,
            cm_normalization: Normalization::Frobenius,
            o: 1,
            z_max: MAX_ATOMIC_NUMBER as usize + 1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("d", self.d),
            ("p", self.p),
            ("gcn_layers", self.gcn_layers),
            ("transformer_layers", self.transformer_layers),
            ("head_layers", self.head_layers),
            ("o", self.o),
            ("z_max", self.z_max),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("model {name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Lpe {
    w0: usize,
    blocks: Vec<TransformerBlock>,
}

#[derive(Debug, Clone)]
struct Layout {
    embedding: usize,
    gcn: Vec<(usize, usize)>,
    head_hidden: Vec<LinearParams>,
    classifier: usize,
    lpe: Option<Lpe>,
}

#[derive(Debug, Clone)]
pub struct MolPecoModel {
    config: ModelConfig,
    params: ParamStore,
    layout: Layout,
}

/// Result of one forward pass on a tape.
pub struct ForwardOutput<'t> {
    pub logits: Tensor<'t>,
    pub probs: Tensor<'t>,
    /// Pooled molecule embedding `m`, `1 x d`.
    pub embedding: Tensor<'t>,
}

impl MolPecoModel {
    /// Seeded initialization. Parameters shared between variants are drawn
    /// first, so models of different variants built from the same seed agree
    /// on them.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let d = config.d;
        let embedding = params.add_normal("embedding.table", config.z_max, d, 1.0 / (d as f64).sqrt(), &mut rng);
        let gcn = (0..config.gcn_layers)
            .map(|l| {
                (
                    params.add_glorot(format!("gcn.{l}.w_graph"), d, d, &mut rng),
                    params.add_glorot(format!("gcn.{l}.w_linear"), d, d, &mut rng),
                )
            })
            .collect();
        let head_hidden = (0..config.head_layers - 1)
            .map(|i| LinearParams::register(&mut params, &format!("head.{i}"), d, d, true, &mut rng))
            .collect();
        let classifier = params.add_glorot("head.w_clf", d, config.o, &mut rng);
        let lpe = config.variant.laplacian().map(|_| Lpe {
            w0: params.add_glorot("lpe.w0", 2, d, &mut rng),
            blocks: (0..config.transformer_layers)
                .map(|i| TransformerBlock::register(&mut params, &format!("lpe.transformer.{i}"), d, &mut rng))
                .collect(),
        });
        Ok(MolPecoModel { config, params, layout: Layout { embedding, gcn, head_hidden, classifier, lpe } })
    }

    /// Rebuilds a model from stored parameters; every expected name and shape must be present.
    pub fn from_params(config: ModelConfig, stored: &ParamStore) -> Result<Self> {
        let mut model = MolPecoModel::new(config, 0)?;
        let copied = model.params.copy_matching(stored);
        if copied != model.params.len() || stored.len() != model.params.len() {
            return Err(Error::Format(format!(
                "checkpoint parameters do not match the model configuration ({copied} of {} matched, {} stored)",
                model.params.len(),
                stored.len()
            )));
        }
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Zeroes the positional-encoding input projection.
    pub fn zero_lpe(&mut self) {
        if let Some(lpe) = &self.layout.lpe {
            let w = &mut self.params.get_mut(lpe.w0).value;
            *w = Matrix::zeros(w.rows(), w.cols());
        }
    }

    pub fn has_lpe(&self) -> bool {
        self.layout.lpe.is_some()
    }

    /// `n x d` rows looked up from the element table.
    pub fn atom_init_embedding<'t>(
        &self,
        tape: &'t Tape,
        vars: &[Tensor<'t>],
        atomic_numbers: &[u32],
    ) -> Result<Tensor<'t>> {
        let z_max = self.config.z_max;
        let mut one_hot = Matrix::zeros(atomic_numbers.len(), z_max);
        for (i, &z) in atomic_numbers.iter().enumerate() {
            if z as usize >= z_max {
                return Err(Error::Data(format!(
                    "atomic number {z} is outside the embedding table (max {})",
                    z_max - 1
                )));
            }
            one_hot[(i, z as usize)] = 1.0;
        }
        tape.constant(one_hot).matmul(vars[self.layout.embedding])
    }

    /// Per-atom positional encoding: `n x d`, row `j` is the column sum of
    /// the transformer output over atom `j`'s `p` spectral rows.
    pub fn lpe_forward<'t>(
        &self,
        tape: &'t Tape,
        vars: &[Tensor<'t>],
        spectrum: &crate::repr::Spectrum,
    ) -> Result<Tensor<'t>> {
        let lpe = self
            .layout
            .lpe
            .as_ref()
            .ok_or_else(|| Error::Config(format!("variant {} has no positional encoder", self.config.variant)))?;
        let (n, p) = (spectrum.len(), self.config.p);
        let mut stacked = Matrix::zeros(n * p, 2);
        let mut mask = vec![false; n * p];
        for j in 0..n {
            let inp = crate::repr::lpe_input(spectrum, j, p)?;
            for k in 0..p {
                stacked.row_mut(j * p + k).copy_from_slice(inp.rows.row(k));
                mask[j * p + k] = inp.mask[k];
            }
        }
        let mask = Rc::new(mask);
        let mut h = tape.constant(stacked).matmul(vars[lpe.w0])?;
        for block in &lpe.blocks {
            h = block.forward(vars, h, &mask, p)?;
        }
        h.group_row_sum(p)
    }

    /// Residual graph convolution: `H ← SELU(X H W_graph) + H W_linear` per layer.
    pub fn gcn_forward<'t>(
        &self,
        tape: &'t Tape,
        vars: &[Tensor<'t>],
        x: &Matrix,
        h0: Tensor<'t>,
    ) -> Result<Tensor<'t>> {
        let (n, _) = h0.shape();
        if x.shape() != (n, n) {
            return Err(Error::Shape(format!("graph matrix {}x{} for {n} atoms", x.rows(), x.cols())));
        }
        let x = tape.constant(x.clone());
        let mut h = h0;
        for &(w_graph, w_linear) in &self.layout.gcn {
            let conv = x.matmul(h)?.matmul(vars[w_graph])?.selu();
            h = conv.add(h.matmul(vars[w_linear])?)?;
        }
        Ok(h)
    }

    /// Logits `1 x o` from a pooled embedding.
    pub fn head_logits<'t>(&self, vars: &[Tensor<'t>], m: Tensor<'t>) -> Result<Tensor<'t>> {
        let mut h = m;
        for layer in &self.layout.head_hidden {
            h = layer.forward(vars, h)?.selu();
        }
        h.matmul(vars[self.layout.classifier])
    }

    /// Probabilities `sigmoid(m W_clf)`.
    pub fn classify<'t>(&self, vars: &[Tensor<'t>], m: Tensor<'t>) -> Result<Tensor<'t>> {
        Ok(self.head_logits(vars, m)?.sigmoid())
    }

    pub fn forward<'t>(&self, tape: &'t Tape, vars: &[Tensor<'t>], feat: &FeatureRecord) -> Result<ForwardOutput<'t>> {
        let n = feat.atomic_numbers.len();
        if n == 0 {
            return Err(Error::molecule(&feat.id, "no atoms"));
        }
        let mut h0 = self.atom_init_embedding(tape, vars, &feat.atomic_numbers)?;
        if self.has_lpe() {
            let spectrum = feat.spectrum.as_ref().ok_or_else(|| {
                Error::molecule(&feat.id, format!("variant {} needs a Laplacian spectrum", self.config.variant))
            })?;
            if spectrum.len() != n {
                return Err(Error::molecule(&feat.id, "spectrum size does not match atom count"));
            }
            h0 = h0.add(self.lpe_forward(tape, vars, spectrum)?)?;
        }
        let h = self.gcn_forward(tape, vars, &feat.graph, h0)?;
        let embedding = sum_pool(h);
        let logits = self.head_logits(vars, embedding)?;
        Ok(ForwardOutput { logits, probs: logits.sigmoid(), embedding })
    }

    /// Probabilities and pooled embedding for one molecule.
    pub fn predict(&self, feat: &FeatureRecord) -> Result<(Vec<f64>, Vec<f64>)> {
        let tape = Tape::new();
        let vars = self.params.bind(&tape);
        let out = self.forward(&tape, &vars, feat)?;
        Ok((out.probs.value().into_vec(), out.embedding.value().into_vec()))
    }

    /// Loss value and gradients for every parameter, in store order.
    pub fn loss_and_grads(
        &self,
        feat: &FeatureRecord,
        targets: &[f64],
        weights: &[f64],
        eps: f64,
    ) -> Result<(f64, Vec<Matrix>)> {
        let tape = Tape::new();
        let vars = self.params.bind(&tape);
        let out = self.forward(&tape, &vars, feat)?;
        let loss = multilabel_loss(out.logits, targets, weights, eps)?;
        tape.backward(loss)?;
        let grads = vars
            .iter()
            .map(|v| {
                let (r, c) = v.shape();
                v.grad().unwrap_or_else(|| Matrix::zeros(r, c))
            })
            .collect();
        Ok((loss.scalar(), grads))
    }

    /// Weighted loss without gradients.
    pub fn loss(&self, feat: &FeatureRecord, targets: &[f64], weights: &[f64], eps: f64) -> Result<f64> {
        let tape = Tape::new();
        let vars = self.params.bind(&tape);
        let out = self.forward(&tape, &vars, feat)?;
        Ok(multilabel_loss(out.logits, targets, weights, eps)?.scalar())
    }
}

/// Column sums of the atom embeddings.
pub fn sum_pool(h: Tensor<'_>) -> Tensor<'_> {
    h.column_sum()
}

#[cfg(test)]
mod tests;
