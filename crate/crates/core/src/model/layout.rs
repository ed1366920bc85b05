//! Placement of every named weight tensor inside the flat parameter vector.

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.numel()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct LayerOffsets {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub w_qkv: usize,
    pub b_qkv: usize,
    pub w_o: usize,
    pub b_o: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w_fc: usize,
    pub b_fc: usize,
    pub w_proj: usize,
    pub b_proj: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Offsets {
    pub tok_emb: usize,
    pub pos_emb: usize,
    pub layers: Vec<LayerOffsets>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub w_lm: usize,
    pub b_lm: usize,
    pub pref_w: usize,
    pub pref_b: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    pub(crate) specs: Vec<TensorSpec>,
    pub(crate) offsets: Offsets,
    total: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let d = cfg.d_model;
        let f = cfg.d_ff();
        let v = cfg.vocab_size;
        let mut specs = Vec::new();
        let mut next = 0usize;
        let mut add = |name: String, shape: Vec<usize>| {
            let offset = next;
            next += shape.iter().product::<usize>();
            specs.push(TensorSpec { name, shape, offset });
            offset
        };
        let tok_emb = add("tok_emb".into(), vec![v, d]);
        let pos_emb = add("pos_emb".into(), vec![cfg.max_seq_len(), d]);
        let layers = (0..cfg.n_layers)
            .map(|l| {
                let p = |s: &str| format!("layer{l}.{s}");
                LayerOffsets {
                    ln1_g: add(p("ln1.gain"), vec![d]),
                    ln1_b: add(p("ln1.bias"), vec![d]),
                    w_qkv: add(p("attn.w_qkv"), vec![d, 3 * d]),
                    b_qkv: add(p("attn.b_qkv"), vec![3 * d]),
                    w_o: add(p("attn.w_out"), vec![d, d]),
                    b_o: add(p("attn.b_out"), vec![d]),
                    ln2_g: add(p("ln2.gain"), vec![d]),
                    ln2_b: add(p("ln2.bias"), vec![d]),
                    w_fc: add(p("mlp.w_in"), vec![d, f]),
                    b_fc: add(p("mlp.b_in"), vec![f]),
                    w_proj: add(p("mlp.w_out"), vec![f, d]),
                    b_proj: add(p("mlp.b_out"), vec![d]),
                }
            })
            .collect();
        let lnf_g = add("ln_final.gain".into(), vec![d]);
        let lnf_b = add("ln_final.bias".into(), vec![d]);
        let w_lm = add("lm_head.weight".into(), vec![d, v]);
        let b_lm = add("lm_head.bias".into(), vec![v]);
        let pref_w = add("pref_head.weight".into(), vec![d]);
        let pref_b = add("pref_head.bias".into(), vec![1]);
        Self {
            specs,
            offsets: Offsets { tok_emb, pos_emb, layers, lnf_g, lnf_b, w_lm, b_lm, pref_w, pref_b },
            total: next,
        }
    }

    pub fn len(&self) -> usize {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn tensors(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn get(&self, name: &str) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.name == name)
    }

    /// Name of the tensor containing flat index `i`.
    pub fn owner(&self, i: usize) -> Option<&TensorSpec> {
        self.specs.iter().find(|s| s.range().contains(&i))
    }
}
