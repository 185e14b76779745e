//! Per-frame visual and tactile encoders, the two LSTM stacks that turn frame
//! features into the hidden-state sequence `h^1..h^T`, and the pretraining
//! objective (classification plus symmetric InfoNCE).

mod lstm;

pub use lstm::{lstm_stack, LstmLayer};

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::data::{FramePair, GridSpec, TemporalSample};
use crate::error::Error;
use crate::fusion::Conditioning;
use crate::layers::{Linear, Mlp, ParamSource};
use crate::tensor::{Graph, ParamStore, Tensor, Var};
use crate::Result;

/// Prefix of every encoder parameter name.
pub const PREFIX: &str = "encoder.";

/// Which encoder produces the conditioning states.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EncoderKind {
    /// Two-layer LSTM per modality over all `T` frames.
    Lstm,
    /// Features of the last frame only.
    SingleFrame,
}

impl EncoderKind {
    pub const ALL: [EncoderKind; 2] = [EncoderKind::Lstm, EncoderKind::SingleFrame];

    pub fn name(self) -> &'static str {
        match self {
            EncoderKind::Lstm => "lstm",
            EncoderKind::SingleFrame => "single_frame",
        }
    }
}

impl fmt::Display for EncoderKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EncoderKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown encoder kind `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderConfig {
    pub grid: GridSpec,
    /// `D_f`.
    pub feature_dim: usize,
    pub frame_hidden: usize,
    pub lstm_hidden: usize,
    pub lstm_layers: usize,
    /// `D_h`; equals the decoder width.
    pub output_dim: usize,
    pub num_classes: usize,
    pub temperature: f64,
    pub contrastive_weight: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            feature_dim: 64,
            frame_hidden: 64,
            lstm_hidden: 64,
            lstm_layers: 2,
            output_dim: 64,
            num_classes: 8,
            temperature: 0.1,
            contrastive_weight: 0.5,
        }
    }
}

impl EncoderConfig {
    // Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("feature_dim", self.feature_dim),
            ("frame_hidden", self.frame_hidden),
            ("lstm_hidden", self.lstm_hidden),
            ("lstm_layers", self.lstm_layers),
            ("output_dim", self.output_dim),
            ("grid height", self.grid.height),
            ("grid width", self.grid.width),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("encoder {name} must be positive")));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {}", self.num_classes)));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        if !(self.contrastive_weight >= 0.0) {
            return Err(Error::Config("contrastive weight must be non-negative".into()));
        }
        Ok(())
    }
}

/// Frame features `f^t` of one frame pair.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePair {
    pub image: Vec<f64>,
    pub tactile: Vec<f64>,
    pub time_index: usize,
}

/// `h^t = <h_image^t, h_tactile^t>`, each of length `D_h`.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenPair {
    pub image: Vec<f64>,
    pub tactile: Vec<f64>,
    pub time_index: usize,
}

/// Conditioning states for one sample: `T` pairs for the LSTM encoder, a
/// single pair (of the last frame) for the single-frame encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct HiddenSequence {
    pub pairs: Vec<HiddenPair>,
}

impl HiddenSequence {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Builds graph constants `[B, D_h]` per state index from precomputed states.
pub fn conditioning_from_hidden(g: &mut Graph, seqs: &[&HiddenSequence]) -> Result<Conditioning> {
    let first = seqs.first().ok_or_else(|| Error::Invariant("empty batch".into()))?;
    let steps = first.len();
    if seqs.iter().any(|s| s.len() != steps) {
        return Err(Error::Invariant("hidden sequences of unequal length in one batch".into()));
    }
    let stack = |t: usize, image: bool| -> Tensor {
        let d = if image { first.pairs[t].image.len() } else { first.pairs[t].tactile.len() };
        let mut data = Vec::with_capacity(seqs.len() * d);
        for s in seqs {
            data.extend_from_slice(if image { &s.pairs[t].image } else { &s.pairs[t].tactile });
        }
        Tensor::matrix(seqs.len(), d, data)
    };
    let image = (0..steps).map(|t| g.constant(stack(t, true))).collect();
    let tactile = (0..steps).map(|t| g.constant(stack(t, false))).collect();
    Ok(Conditioning { image, tactile })
}

/// Frames of a batch stacked time-major: row `t * batch + b` holds step `t`
/// of sample `b`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameBatch {
    pub batch: usize,
    pub steps: usize,
    pub visual: Tensor,
    pub tactile: Tensor,
}

impl FrameBatch {
    pub fn from_samples(samples: &[&TemporalSample], grid: GridSpec) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Invariant("empty batch".into()))?;
        let steps = first.len();
        if steps == 0 {
            return Err(Error::Invariant("sample without frames".into()));
        }
        if samples.iter().any(|s| s.len() != steps) {
            return Err(Error::Invariant("samples of unequal length in one batch".into()));
        }
        let frames: Vec<&FramePair> = (0..steps).flat_map(|t| samples.iter().map(move |s| &s.frames[t])).collect();
        Self::from_frames(&frames, samples.len(), steps, grid)
    }

    /// `frames` in time-major order.
    pub fn from_frames(frames: &[&FramePair], batch: usize, steps: usize, grid: GridSpec) -> Result<Self> {
        let (vl, tl) = (grid.visual_len(), grid.tactile_len());
        let mut visual = Vec::with_capacity(frames.len() * vl);
        let mut tactile = Vec::with_capacity(frames.len() * tl);
        for f in frames {
            if f.visual.len() != vl || f.tactile.len() != tl {
                return Err(Error::Config(format!(
                    "frame grid sizes {}/{} do not match {}x{}",
                    f.visual.len(),
                    f.tactile.len(),
                    grid.height,
                    grid.width
                )));
            }
            visual.extend(f.visual.iter().map(|&v| v as f64));
            tactile.extend(f.tactile.iter().map(|&v| v as f64));
        }
        Ok(Self {
            batch,
            steps,
            visual: Tensor::matrix(frames.len(), vl, visual),
            tactile: Tensor::matrix(frames.len(), tl, tactile),
        })
    }

    /// The last time step only.
    pub fn last_step(&self) -> Self {
        let start = (self.steps - 1) * self.batch;
        let take = |t: &Tensor| {
            let n = t.cols();
            Tensor::matrix(self.batch, n, t.data()[start * n..].to_vec())
        };
        Self { batch: self.batch, steps: 1, visual: take(&self.visual), tactile: take(&self.tactile) }
    }
}

/// Outputs of [`Encoder::pretrain_forward`].
#[derive(Clone, Copy, Debug)]
pub struct PretrainOutput {
    /// `[B, K]`.
    pub logits: Var,
    /// `[B, B]`: `cos(h_tactile_i, h_image_j) / temperature`.
    pub similarity: Var,
}

/// Frame encoders, LSTM stacks (LSTM kind only), projections and class head.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub kind: EncoderKind,
    pub config: EncoderConfig,
    visual_frame: Mlp,
    tactile_frame: Mlp,
    lstm_image: Vec<LstmLayer>,
    lstm_tactile: Vec<LstmLayer>,
    proj_image: Mlp,
    proj_tactile: Mlp,
    head: Linear,
}

impl Encoder {
    /// Creates fresh parameters in `store`.
    pub fn new<R: Rng>(config: &EncoderConfig, kind: EncoderKind, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        Self::build(config, kind, &mut ParamSource::Create { store, rng })
    }

    /// Binds to parameters already present in `store` (for example, loaded).
    pub fn bind(config: &EncoderConfig, kind: EncoderKind, store: &ParamStore) -> Result<Self> {
        Self::build::<rand_chacha::ChaCha8Rng>(config, kind, &mut ParamSource::Bind { store })
    }

    fn build<R: Rng>(config: &EncoderConfig, kind: EncoderKind, src: &mut ParamSource<'_, R>) -> Result<Self> {
        config.validate()?;
        let c = config;
        let n = |s: &str| format!("{PREFIX}{s}");
        let visual_frame = Mlp::build(src, &n("visual_frame"), c.grid.visual_len(), c.frame_hidden, c.feature_dim)?;
        let tactile_frame = Mlp::build(src, &n("tactile_frame"), c.grid.tactile_len(), c.frame_hidden, c.feature_dim)?;
        let mut stack = |m: &str| -> Result<Vec<LstmLayer>> {
            if kind != EncoderKind::Lstm {
                return Ok(Vec::new());
            }
            (0..c.lstm_layers)
                .map(|l| {
                    let input = if l == 0 { c.feature_dim } else { c.lstm_hidden };
                    Ok(LstmLayer::build(src, &n(&format!("lstm_{m}.{l}")), input, c.lstm_hidden)?)
                })
                .collect()
        };
        let lstm_image = stack("image")?;
        let lstm_tactile = stack("tactile")?;
        let proj_in = match kind {
            EncoderKind::Lstm => c.lstm_hidden,
            EncoderKind::SingleFrame => c.feature_dim,
        };
        let proj_image = Mlp::build(src, &n("proj_image"), proj_in, c.output_dim, c.output_dim)?;
        let proj_tactile = Mlp::build(src, &n("proj_tactile"), proj_in, c.output_dim, c.output_dim)?;
        let head = Linear::build(src, &n("head"), 2 * c.output_dim, c.num_classes, true)?;
        Ok(Self {
            kind,
            config: config.clone(),
            visual_frame,
            tactile_frame,
            lstm_image,
            lstm_tactile,
            proj_image,
            proj_tactile,
            head,
        })
    }

    /// Frame features for every row of the batch: `([rows, D_f], [rows, D_f])`.
    pub fn encode_frames(&self, g: &mut Graph, store: &ParamStore, batch: &FrameBatch) -> Result<(Var, Var)> {
        let v = g.constant(batch.visual.clone());
        let t = g.constant(batch.tactile.clone());
        Ok((self.visual_frame.forward(g, store, v)?, self.tactile_frame.forward(g, store, t)?))
    }

    /// Features of a single frame pair.
    pub fn encode_frame(&self, store: &ParamStore, frame: &FramePair) -> Result<FeaturePair> {
        let batch = FrameBatch::from_frames(&[frame], 1, 1, self.config.grid)?;
        let mut g = Graph::new();
        let (fi, ft) = self.encode_frames(&mut g, store, &batch)?;
        Ok(FeaturePair { image: g.value(fi).to_vec(), tactile: g.value(ft).to_vec(), time_index: frame.time_index })
    }

    /// Conditioning states: `T` per modality for the LSTM kind, one (the last
    /// frame) for the single-frame kind. Each is `[B, D_h]`.
    pub fn encode(&self, g: &mut Graph, store: &ParamStore, batch: &FrameBatch) -> Result<Conditioning> {
        match self.kind {
            EncoderKind::Lstm => {
                let (fi, ft) = self.encode_frames(g, store, batch)?;
                self.encode_features(g, store, fi, ft, batch.batch, batch.steps)
            }
            EncoderKind::SingleFrame => {
                let last = batch.last_step();
                let (fi, ft) = self.encode_frames(g, store, &last)?;
                self.encode_features(g, store, fi, ft, last.batch, 1)
            }
        }
    }

    /// Runs the temporal part on frame features stacked time-major.
    pub fn encode_features(
        &self,
        g: &mut Graph,
        store: &ParamStore,
        fi: Var,
        ft: Var,
        batch: usize,
        steps: usize,
    ) -> Result<Conditioning> {
        let split = |g: &mut Graph, x: Var| -> Result<Vec<Var>> {
            (0..steps).map(|t| Ok(g.slice(x, 0, t * batch, batch)?)).collect()
        };
        let xi = split(g, fi)?;
        let xt = split(g, ft)?;
        let (si, st) = match self.kind {
            EncoderKind::Lstm => {
                (lstm_stack(g, store, &self.lstm_image, &xi)?, lstm_stack(g, store, &self.lstm_tactile, &xt)?)
            }
            EncoderKind::SingleFrame => (xi, xt),
        };
        let image = si.into_iter().map(|h| Ok(self.proj_image.forward(g, store, h)?)).collect::<Result<_>>()?;
        let tactile = st.into_iter().map(|h| Ok(self.proj_tactile.forward(g, store, h)?)).collect::<Result<_>>()?;
        Ok(Conditioning { image, tactile })
    }

    /// Class logits from the final states, and the tactile-to-image
    /// similarity matrix.
    pub fn pretrain_forward(&self, g: &mut Graph, store: &ParamStore, batch: &FrameBatch) -> Result<PretrainOutput> {
        let cond = self.encode(g, store, batch)?;
        self.heads(g, store, &cond)
    }

    pub fn heads(&self, g: &mut Graph, store: &ParamStore, cond: &Conditioning) -> Result<PretrainOutput> {
        let hi = *cond.image.last().ok_or_else(|| Error::Invariant("no states".into()))?;
        let ht = *cond.tactile.last().ok_or_else(|| Error::Invariant("no states".into()))?;
        let both = g.concat(&[hi, ht], 1)?;
        let logits = self.head.forward(g, store, both)?;
        // rms-normalized rows have squared norm D, so a.b / D is the cosine
        let a = g.rms_norm(ht, None)?;
        let b = g.rms_norm(hi, None)?;
        let bt = g.transpose(b);
        let dots = g.matmul(a, bt)?;
        let similarity = g.scale(dots, 1.0 / (self.config.output_dim as f64 * self.config.temperature));
        Ok(PretrainOutput { logits, similarity })
    }

    /// `CE(logits, classes) + w * (CE(S, diag) + CE(S^T, diag)) / 2`.
    pub fn pretrain_loss(&self, g: &mut Graph, out: &PretrainOutput, classes: &[usize]) -> Result<Var> {
        let targets: Vec<Option<usize>> = classes.iter().map(|&c| Some(c)).collect();
        let ce = g.cross_entropy(out.logits, &targets)?;
        if self.config.contrastive_weight == 0.0 {
            return Ok(ce);
        }
        let diag: Vec<Option<usize>> = (0..classes.len()).map(Some).collect();
        let st = g.transpose(out.similarity);
        let l1 = g.cross_entropy(out.similarity, &diag)?;
        let l2 = g.cross_entropy(st, &diag)?;
        let nce = g.add(l1, l2)?;
        let nce = g.scale(nce, 0.5 * self.config.contrastive_weight);
        Ok(g.add(ce, nce)?)
    }

    /// Numeric conditioning states for every sample, processed `chunk` at a time.
    pub fn hidden_sequences(
        &self,
        store: &ParamStore,
        samples: &[&TemporalSample],
        chunk: usize,
    ) -> Result<Vec<HiddenSequence>> {
        let mut out = Vec::with_capacity(samples.len());
        for part in samples.chunks(chunk.max(1)) {
            let batch = FrameBatch::from_samples(part, self.config.grid)?;
            let mut g = Graph::new();
            let cond = self.encode(&mut g, store, &batch)?;
            // single-frame states describe the last frame
            let offset = batch.steps - cond.len();
            for b in 0..part.len() {
                let pairs = (0..cond.len())
                    .map(|t| HiddenPair {
                        image: g.value(cond.image[t]).row(b).to_vec(),
                        tactile: g.value(cond.tactile[t]).row(b).to_vec(),
                        time_index: offset + t + 1,
                    })
                    .collect();
                out.push(HiddenSequence { pairs });
            }
        }
        Ok(out)
    }
}
