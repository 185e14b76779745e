//! Central finite-difference checks over every graph primitive and the
//! composite modules built from them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{FramePair, GridSpec};
use crate::decoder::{Decoder, FusionInput, ModelConfig};
use crate::encoders::{lstm_stack, Encoder, EncoderConfig, EncoderKind, FrameBatch, LstmLayer};
use crate::fusion::{build_plan, Conditioning, ModalityGroup, Variant};
use crate::layers::ParamSource;
use crate::tensor::{
    grad_check_inputs, grad_check_params, GradCheckOptions, GradCheckReport, Graph, ParamStore, Tensor, Var,
};
use crate::Result;

/// Relative-error bound every check must meet.
pub const TOLERANCE: f64 = 1e-5;

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub report: GradCheckReport,
}

impl CheckResult {
    /// `PASS name max_rel=... checked=...`
    pub fn line(&self) -> String {
        format!(
            "{} {} max_rel={:.3e} checked={}",
            if self.report.passed { "PASS" } else { "FAIL" },
            self.name,
            self.report.max_rel_error,
            self.report.checked
        )
    }
}

/// Reduces any tensor to a scalar with fixed uneven weights so that no
/// gradient entry cancels by symmetry.
fn weighted(g: &mut Graph, x: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let n: usize = shape.iter().product();
    let w = (0..n).map(|i| 0.3 + 0.7 * ((i * 7 + 3) % 11) as f64 / 11.0).collect();
    let w = g.constant(Tensor::new(&shape, w)?);
    let p = g.multiply(x, w)?;
    Ok(g.mean(p))
}

fn inputs(rng: &mut ChaCha8Rng, shapes: &[&[usize]]) -> Vec<Tensor> {
    shapes.iter().map(|s| Tensor::uniform(s, 1.0, rng)).collect()
}

fn primitive(
    name: &'static str,
    rng: &mut ChaCha8Rng,
    shapes: &[&[usize]],
    f: impl Fn(&mut Graph, &[Var]) -> Result<Var>,
) -> Result<CheckResult> {
    let pts = inputs(rng, shapes);
    let opts = GradCheckOptions::with_tolerance(TOLERANCE);
    let report = grad_check_inputs(
        |g, xs| {
            let y = f(g, xs)?;
            weighted(g, y)
        },
        &pts,
        &opts,
    )?;
    Ok(CheckResult { name, report })
}

fn primitives(out: &mut Vec<CheckResult>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let r = &mut rng;
    out.push(primitive("matmul", r, &[&[3, 4], &[4, 2]], |g, x| Ok(g.matmul(x[0], x[1])?))?);
    out.push(primitive("add", r, &[&[3, 4], &[3, 4]], |g, x| Ok(g.add(x[0], x[1])?))?);
    out.push(primitive("add_row_bias", r, &[&[3, 4], &[1, 4]], |g, x| Ok(g.add(x[0], x[1])?))?);
    out.push(primitive("multiply", r, &[&[3, 4], &[3, 4]], |g, x| Ok(g.multiply(x[0], x[1])?))?);
    out.push(primitive("scalar_mul", r, &[&[1, 1], &[3, 4]], |g, x| Ok(g.scalar_mul(x[0], x[1])?))?);
    out.push(primitive("scale", r, &[&[3, 4]], |g, x| Ok(g.scale(x[0], -1.7)))?);
    out.push(primitive("concat_rows", r, &[&[2, 3], &[1, 3]], |g, x| Ok(g.concat(x, 0)?))?);
    out.push(primitive("concat_cols", r, &[&[2, 3], &[2, 2]], |g, x| Ok(g.concat(x, 1)?))?);
    out.push(primitive("slice_rows", r, &[&[4, 3]], |g, x| Ok(g.slice(x[0], 0, 1, 2)?))?);
    out.push(primitive("slice_cols", r, &[&[3, 5]], |g, x| Ok(g.slice(x[0], 1, 2, 2)?))?);
    out.push(primitive("transpose", r, &[&[3, 4]], |g, x| Ok(g.transpose(x[0])))?);
    out.push(primitive("tanh", r, &[&[3, 4]], |g, x| Ok(g.tanh(x[0])))?);
    out.push(primitive("sigmoid", r, &[&[3, 4]], |g, x| Ok(g.sigmoid(x[0])))?);
    out.push(primitive("gelu", r, &[&[3, 4]], |g, x| Ok(g.gelu(x[0])))?);
    out.push(primitive("softmax_rows", r, &[&[3, 5]], |g, x| Ok(g.softmax_rows(x[0])))?);
    out.push(primitive("rms_norm", r, &[&[3, 4]], |g, x| Ok(g.rms_norm(x[0], None)?))?);
    out.push(primitive("rms_norm_gain", r, &[&[3, 4], &[1, 4]], |g, x| Ok(g.rms_norm(x[0], Some(x[1]))?))?);
    out.push(primitive("embedding_lookup", r, &[&[5, 3]], |g, x| Ok(g.embedding_lookup(x[0], &[4, 0, 4, 2])?))?);
    out.push(primitive("cross_entropy", r, &[&[4, 5]], |g, x| {
        Ok(g.cross_entropy(x[0], &[Some(1), None, Some(4), Some(1)])?)
    })?);
    out.push(primitive("mean", r, &[&[3, 4]], |g, x| Ok(g.mean(x[0])))?);
    out.push(primitive("repeat_rows", r, &[&[2, 3]], |g, x| Ok(g.repeat_rows(x[0], 3)?))?);
    // Two groups of three positions, two heads of width 2.
    out.push(primitive("causal_attention", r, &[&[6, 4], &[6, 4], &[6, 4]], |g, x| {
        Ok(g.causal_attention(x[0], x[1], x[2], 2, 3, 2)?)
    })?);
    Ok(())
}

fn lstm_cell() -> Result<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    let layers = vec![
        LstmLayer::build(&mut ParamSource::Create { store: &mut store, rng: &mut rng }, "l0", 3, 2)?,
        LstmLayer::build(&mut ParamSource::Create { store: &mut store, rng: &mut rng }, "l1", 2, 2)?,
    ];
    let xs = inputs(&mut rng, &[&[2, 3], &[2, 3], &[2, 3]]);
    let report = grad_check_params(
        &store,
        |g, s| -> Result<Var> {
            let vars: Vec<Var> = xs.iter().map(|x| g.constant(x.clone())).collect();
            let hs = lstm_stack(g, s, &layers, &vars)?;
            let all = g.concat(&hs, 0)?;
            weighted(g, all)
        },
        &GradCheckOptions::with_tolerance(TOLERANCE),
    )?;
    Ok(CheckResult { name: "lstm_cell", report })
}

fn encoder_pipeline() -> Result<CheckResult> {
    let config = EncoderConfig {
        grid: GridSpec::new(2, 3),
        feature_dim: 4,
        frame_hidden: 5,
        lstm_hidden: 3,
        lstm_layers: 2,
        output_dim: 4,
        num_classes: 3,
        temperature: 0.5,
        contrastive_weight: 0.5,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let enc = Encoder::new(&config, EncoderKind::Lstm, &mut store, &mut rng)?;
    // Time-major: two samples per step, three steps.
    let frames: Vec<FramePair> = (0..6)
        .map(|i| FramePair {
            visual: (0..config.grid.visual_len()).map(|_| rng.gen::<f32>()).collect(),
            tactile: (0..config.grid.tactile_len()).map(|_| rng.gen::<f32>()).collect(),
            time_index: i / 2 + 1,
        })
        .collect();
    let refs: Vec<&FramePair> = frames.iter().collect();
    let batch = FrameBatch::from_frames(&refs, 2, 3, config.grid)?;
    let report = grad_check_params(
        &store,
        |g, s| -> Result<Var> {
            let out = enc.pretrain_forward(g, s, &batch)?;
            enc.pretrain_loss(g, &out, &[0, 2])
        },
        &GradCheckOptions { tolerance: TOLERANCE, ..GradCheckOptions::sampled(12, 1) },
    )?;
    Ok(CheckResult { name: "encoder_pipeline_t3", report })
}

fn fused_attention_layer() -> Result<CheckResult> {
    let config =
        ModelConfig { n_layers: 1, width: 8, heads: 2, ffn_hidden: 12, vocab_size: 7, max_positions: 4, hidden_dim: 4 };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let d = Decoder::new(&config, &mut store, &mut rng)?;
    for id in d.fusion.gates().collect::<Vec<_>>() {
        store.set(id, Tensor::full(&[1, 1], 0.4))?;
    }
    let plan = build_plan(Variant::Aware, ModalityGroup::TactileAndVision, 1, 1)?;
    let tokens = vec![vec![1, 3, 5, 2], vec![1, 4, 6, 0]];
    let cond = inputs(&mut rng, &[&[2, 4], &[2, 4]]);
    let targets: Vec<Option<usize>> = (0..8).map(|i| if i % 4 == 3 { None } else { Some((i * 3) % 7) }).collect();
    let report = grad_check_params(
        &store,
        |g, s| -> Result<Var> {
            let conditioning =
                Conditioning { image: vec![g.constant(cond[0].clone())], tactile: vec![g.constant(cond[1].clone())] };
            let logits = d.forward(g, s, &tokens, Some(FusionInput { plan: &plan, conditioning: &conditioning }))?;
            Ok(g.cross_entropy(logits, &targets)?)
        },
        &GradCheckOptions { tolerance: TOLERANCE, ..GradCheckOptions::sampled(8, 4) },
    )?;
    Ok(CheckResult { name: "fused_attention_layer", report })
}

/// Runs every check; a failing check is reported, not raised.
pub fn gradient_suite() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    primitives(&mut out)?;
    out.push(lstm_cell()?);
    out.push(encoder_pipeline()?);
    out.push(fused_attention_layer()?);
    Ok(out)
}
