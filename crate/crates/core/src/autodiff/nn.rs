//! Layers assembled from tape primitives. Each layer stores parameter slots
//! into a [`ParamStore`]; `forward` takes the tensors bound from that store.

use std::rc::Rc;

use rand::Rng;

use super::{softmax_attention, ParamStore, Tensor};
use crate::error::Result;
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy)]
pub struct LinearParams {
    pub weight: usize,
    pub bias: Option<usize>,
}

impl LinearParams {
    pub fn register(
        store: &mut ParamStore,
        prefix: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add_glorot(format!("{prefix}.weight"), fan_in, fan_out, rng);
        let bias = bias.then(|| store.add(format!("{prefix}.bias"), Matrix::zeros(1, fan_out)));
        LinearParams { weight, bias }
    }

    pub fn forward<'t>(&self, vars: &[Tensor<'t>], x: Tensor<'t>) -> Result<Tensor<'t>> {
        let y = x.matmul(vars[self.weight])?;
        match self.bias {
            Some(b) => y.add_row(vars[b]),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNormParams {
    pub gamma: usize,
    pub beta: usize,
}

impl LayerNormParams {
    pub fn register(store: &mut ParamStore, prefix: &str, width: usize) -> Self {
        LayerNormParams {
            gamma: store.add(format!("{prefix}.gamma"), Matrix::filled(1, width, 1.0)),
            beta: store.add(format!("{prefix}.beta"), Matrix::zeros(1, width)),
        }
    }

    pub fn forward<'t>(&self, vars: &[Tensor<'t>], x: Tensor<'t>) -> Result<Tensor<'t>> {
        x.layer_norm(vars[self.gamma], vars[self.beta])
    }
}

/// Pre-norm encoder block with one attention head and a 2x SELU feed-forward.
#[derive(Debug, Clone, Copy)]
pub struct TransformerBlock {
    pub norm_attn: LayerNormParams,
    pub query: LinearParams,
    pub key: LinearParams,
    pub value: LinearParams,
    pub attn_out: LinearParams,
    pub norm_ffn: LayerNormParams,
    pub ffn_in: LinearParams,
    pub ffn_out: LinearParams,
}

impl TransformerBlock {
    pub fn register(store: &mut ParamStore, prefix: &str, width: usize, rng: &mut impl Rng) -> Self {
        TransformerBlock {
            norm_attn: LayerNormParams::register(store, &format!("{prefix}.norm_attn"), width),
            query: LinearParams::register(store, &format!("{prefix}.query"), width, width, true, rng),
            key: LinearParams::register(store, &format!("{prefix}.key"), width, width, true, rng),
            value: LinearParams::register(store, &format!("{prefix}.value"), width, width, true, rng),
            attn_out: LinearParams::register(store, &format!("{prefix}.attn_out"), width, width, true, rng),
            norm_ffn: LayerNormParams::register(store, &format!("{prefix}.norm_ffn"), width),
            ffn_in: LinearParams::register(store, &format!("{prefix}.ffn_in"), width, 2 * width, true, rng),
            ffn_out: LinearParams::register(store, &format!("{prefix}.ffn_out"), 2 * width, width, true, rng),
        }
    }

    /// `x + Attn(LN(x))`, then `+ FFN(LN(.))`; masked rows come out as zero.
    ///
    /// Attention runs separately inside each block of `group` rows.
    pub fn forward<'t>(
        &self,
        vars: &[Tensor<'t>],
        x: Tensor<'t>,
        mask: &Rc<Vec<bool>>,
        group: usize,
    ) -> Result<Tensor<'t>> {
        let h = self.norm_attn.forward(vars, x)?;
        let q = self.query.forward(vars, h)?;
        let k = self.key.forward(vars, h)?;
        let v = self.value.forward(vars, h)?;
        let attended = softmax_attention(q, k, v, mask.clone(), group)?;
        let x = x.add(self.attn_out.forward(vars, attended)?)?;
        let h = self.norm_ffn.forward(vars, x)?;
        let f = self.ffn_out.forward(vars, self.ffn_in.forward(vars, h)?.selu())?;
        let x = x.add(f)?;
        let keep: Vec<f64> = mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect();
        x.row_scale(Rc::new(keep))
    }

    /// Zeroes the attention and feed-forward output projections, which turns
    /// the block into the identity on unmasked rows.
    pub fn zero_outputs(&self, store: &mut ParamStore) {
        for lin in [self.attn_out, self.ffn_out] {
            let w = &mut store.get_mut(lin.weight).value;
            *w = Matrix::zeros(w.rows(), w.cols());
            if let Some(b) = lin.bias {
                let b = &mut store.get_mut(b).value;
                *b = Matrix::zeros(b.rows(), b.cols());
            }
        }
    }
}
