//! Small causal decoder with per-layer fusion hooks and greedy keyword
//! generation.

mod vocab;

pub use vocab::{Vocab, BOS, EOS, PAD, PROMPT, Q1, Q2};

use rand::Rng;

use crate::encoders::{conditioning_from_hidden, HiddenSequence};
use crate::error::Error;
use crate::fusion::{fuse_into_layer, Conditioning, FusionParams, FusionPlan, ProjectedConditioning};
use crate::layers::{Init, Linear, Mlp, ParamSource};
use crate::tensor::{Graph, ParamId, ParamStore, Var};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub width: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    /// Width `D_h` of the conditioning states.
    pub hidden_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { n_layers: 8, width: 64, heads: 4, ffn_hidden: 256, vocab_size: 13, max_positions: 8, hidden_dim: 64 }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.width == 0 || self.heads == 0 || self.ffn_hidden == 0 || self.hidden_dim == 0 {
            return Err(Error::Config("decoder dimensions must be positive".into()));
        }
        if !self.width.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("width {} is not divisible by {} heads", self.width, self.heads)));
        }
        if self.max_positions <= PROMPT.len() {
            return Err(Error::Config(format!("max_positions {} leaves no room after the prompt", self.max_positions)));
        }
        if self.vocab_size <= Q2 + 1 {
            return Err(Error::Config("vocabulary holds no keywords".into()));
        }
        Ok(())
    }

    /// Scalar parameter count, fusion gates and projections included.
    pub fn param_count(&self) -> usize {
        let (w, f, v) = (self.width, self.ffn_hidden, self.vocab_size);
        let per_layer = 4 * w * w + 2 * w + (w * f + f) + (f * w + w);
        let fusion = self.n_layers * 2 + 2 * self.hidden_dim * w;
        v * w + self.max_positions * w + self.n_layers * per_layer + w + (w * v + v) + fusion
    }
}

#[derive(Clone, Debug)]
struct Block {
    norm1: ParamId,
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    norm2: ParamId,
    ffn: Mlp,
}

/// Conditioning for one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct FusionInput<'a> {
    pub plan: &'a FusionPlan,
    pub conditioning: &'a Conditioning,
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub config: ModelConfig,
    pub fusion: FusionParams,
    tok_emb: ParamId,
    pos_emb: ParamId,
    blocks: Vec<Block>,
    norm_f: ParamId,
    out: Linear,
}

impl Decoder {
    pub fn new<R: Rng>(config: &ModelConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        Self::build(config, &mut ParamSource::Create { store, rng })
    }

    pub fn bind(config: &ModelConfig, store: &ParamStore) -> Result<Self> {
        Self::build::<rand_chacha::ChaCha8Rng>(config, &mut ParamSource::Bind { store })
    }

    fn build<R: Rng>(config: &ModelConfig, src: &mut ParamSource<'_, R>) -> Result<Self> {
        config.validate()?;
        let c = config;
        let w = c.width;
        let tok_emb = src.param("decoder.tok_emb", [c.vocab_size, w], Init::Uniform { fan_in: w })?;
        let pos_emb = src.param("decoder.pos_emb", [c.max_positions, w], Init::Uniform { fan_in: w })?;
        let mut blocks = Vec::with_capacity(c.n_layers);
        for l in 0..c.n_layers {
            let n = |s: &str| format!("decoder.layer{l}.{s}");
            blocks.push(Block {
                norm1: src.param(&n("norm1"), [1, w], Init::Const(1.0))?,
                wq: Linear::build(src, &n("wq"), w, w, false)?,
                wk: Linear::build(src, &n("wk"), w, w, false)?,
                wv: Linear::build(src, &n("wv"), w, w, false)?,
                wo: Linear::build(src, &n("wo"), w, w, false)?,
                norm2: src.param(&n("norm2"), [1, w], Init::Const(1.0))?,
                ffn: Mlp::build(src, &n("ffn"), w, c.ffn_hidden, w)?,
            });
        }
        let norm_f = src.param("decoder.norm_f", [1, w], Init::Const(1.0))?;
        let out = Linear::build(src, "decoder.out", w, c.vocab_size, true)?;
        let fusion = FusionParams::build(src, c.n_layers, c.hidden_dim, w)?;
        Ok(Self { config: config.clone(), fusion, tok_emb, pos_emb, blocks, norm_f, out })
    }

    /// Output projection bias, `[1, vocab]`.
    pub fn output_bias(&self) -> ParamId {
        self.out.bias.expect("output projection has a bias")
    }

    /// Logits `[B*seq, vocab]` for `B` token rows of equal length `seq`.
    /// Row `b*seq + i` depends only on `tokens[b][..=i]` and the conditioning.
    pub fn forward(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        tokens: &[Vec<usize>],
        fusion: Option<FusionInput<'_>>,
    ) -> Result<Var> {
        let c = &self.config;
        let batch = tokens.len();
        let seq = tokens.first().map_or(0, Vec::len);
        if batch == 0 || seq == 0 {
            return Err(Error::Invariant("empty token batch".into()));
        }
        if tokens.iter().any(|r| r.len() != seq) {
            return Err(Error::Invariant("token rows of unequal length".into()));
        }
        if seq > c.max_positions {
            return Err(Error::Config(format!("sequence length {seq} exceeds max_positions {}", c.max_positions)));
        }
        let flat: Vec<usize> = tokens.concat();
        if let Some(&t) = flat.iter().find(|&&t| t >= c.vocab_size) {
            return Err(Error::Config(format!("token {t} outside vocabulary of {}", c.vocab_size)));
        }
        let projected = match fusion {
            Some(f) => {
                if f.plan.n_layers != c.n_layers {
                    return Err(Error::Config(format!("plan has {} layers, decoder {}", f.plan.n_layers, c.n_layers)));
                }
                if f.conditioning.tactile.iter().any(|&v| g.shape(v) != [batch, c.hidden_dim]) {
                    return Err(Error::Invariant("conditioning batch or width does not match tokens".into()));
                }
                Some((f.plan, ProjectedConditioning::new(g, store, &self.fusion, f.plan, f.conditioning, seq)?))
            }
            None => None,
        };

        let tok = g.param(store, self.tok_emb);
        let x = g.embedding_lookup(tok, &flat)?;
        let pos = g.param(store, self.pos_emb);
        let positions: Vec<usize> = (0..batch).flat_map(|_| 0..seq).collect();
        let p = g.embedding_lookup(pos, &positions)?;
        let mut x = g.add(x, p)?;
        for (l, b) in self.blocks.iter().enumerate() {
            let gain = g.param(store, b.norm1);
            let h = g.rms_norm(x, Some(gain))?;
            let q = b.wq.forward(g, store, h)?;
            let k = b.wk.forward(g, store, h)?;
            let v = b.wv.forward(g, store, h)?;
            let att = g.causal_attention(q, k, v, batch, seq, c.heads)?;
            let mut a = b.wo.forward(g, store, att)?;
            if let Some((plan, proj)) = &projected {
                a = fuse_into_layer(g, store, &self.fusion, plan, proj, l, a)?;
            }
            x = g.add(x, a)?;
            let gain = g.param(store, b.norm2);
            let h = g.rms_norm(x, Some(gain))?;
            let f = b.ffn.forward(g, store, h)?;
            x = g.add(x, f)?;
        }
        let gain = g.param(store, self.norm_f);
        let h = g.rms_norm(x, Some(gain))?;
        Ok(self.out.forward(g, store, h)?)
    }

    /// Greedy decoding from the prompt for `batch` rows. Each row stops at
    /// `EOS` (not included) or after `max_len` tokens. Ties go to the lower
    /// token id.
    pub fn generate(
        &self,
        store: &ParamStore,
        plan: Option<&FusionPlan>,
        hidden: &[&HiddenSequence],
        batch: usize,
        max_len: usize,
    ) -> Result<Vec<Vec<usize>>> {
        if plan.is_some() && hidden.len() != batch {
            return Err(Error::Invariant(format!("{} hidden sequences for {batch} rows", hidden.len())));
        }
        let max_len = max_len.min(self.config.max_positions - PROMPT.len());
        let mut seqs: Vec<Vec<usize>> = vec![PROMPT.to_vec(); batch];
        let mut done = vec![false; batch];
        let mut out: Vec<Vec<usize>> = vec![Vec::new(); batch];
        for _ in 0..max_len {
            if done.iter().all(|&d| d) {
                break;
            }
            let mut g = Graph::new();
            let cond = match plan {
                Some(_) => Some(conditioning_from_hidden(&mut g, hidden)?),
                None => None,
            };
            let fusion = plan.zip(cond.as_ref()).map(|(plan, conditioning)| FusionInput { plan, conditioning });
            let logits = self.forward(&mut g, store, &seqs, fusion)?;
            let lv = g.value(logits);
            let seq = seqs[0].len();
            for b in 0..batch {
                let row = lv.row(b * seq + seq - 1);
                let next = argmax(row);
                seqs[b].push(next);
                if done[b] {
                    continue;
                }
                if next == EOS {
                    done[b] = true;
                } else {
                    out[b].push(next);
                }
            }
        }
        Ok(out)
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests;
