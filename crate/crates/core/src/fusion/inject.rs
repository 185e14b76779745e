use rand::Rng;

use super::{FusionError, FusionPlan};
use crate::layers::{Init, ParamSource};
use crate::tensor::{Graph, ParamId, ParamStore, Var};
use crate::Result;

/// Gates and injection projections.
///
/// One scalar gate per (layer, modality), initialized to exactly 0, and one
/// bias-free `[D_h, width]` projection per modality shared by all layers.
#[derive(Clone, Debug)]
pub struct FusionParams {
    pub gate_image: Vec<ParamId>,
    pub gate_tactile: Vec<ParamId>,
    pub proj_image: ParamId,
    pub proj_tactile: ParamId,
}

impl FusionParams {
    pub(crate) fn build<R: Rng>(
        src: &mut ParamSource<'_, R>,
        n_layers: usize,
        hidden: usize,
        width: usize,
    ) -> Result<Self> {
        let mut gate = |m: &str| {
            (0..n_layers)
                .map(|l| src.param(&format!("fusion.gate_{m}.{l}"), [1, 1], Init::Const(0.0)))
                .collect::<Result<Vec<_>, _>>()
        };
        let gate_image = gate("image")?;
        let gate_tactile = gate("tactile")?;
        let init = Init::Uniform { fan_in: hidden };
        Ok(Self {
            gate_image,
            gate_tactile,
            proj_image: src.param("fusion.proj_image", [hidden, width], init)?,
            proj_tactile: src.param("fusion.proj_tactile", [hidden, width], init)?,
        })
    }

    pub fn n_layers(&self) -> usize {
        self.gate_tactile.len()
    }

    pub fn gates(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.gate_image.iter().chain(&self.gate_tactile).copied()
    }
}

/// Conditioning states on the graph, one `[B, D_h]` node per state index.
#[derive(Clone, Debug)]
pub struct Conditioning {
    pub image: Vec<Var>,
    pub tactile: Vec<Var>,
}

impl Conditioning {
    pub fn len(&self) -> usize {
        self.tactile.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tactile.is_empty()
    }
}

/// Conditioning projected to decoder width and repeated over `seq` token
/// positions: `[B*seq, width]` per state index. Image entries are `None` when
/// the plan's group omits vision.
#[derive(Clone, Debug)]
pub struct ProjectedConditioning {
    pub image: Vec<Option<Var>>,
    pub tactile: Vec<Var>,
}

impl ProjectedConditioning {
    /// Projects only the states some layer of `plan` actually reads.
    pub fn new(
        g: &mut Graph,
        store: &ParamStore,
        params: &FusionParams,
        plan: &FusionPlan,
        cond: &Conditioning,
        seq: usize,
    ) -> Result<Self> {
        if cond.tactile.len() != plan.conditioning_len || cond.image.len() != plan.conditioning_len {
            return Err(FusionError::ConditioningLength {
                got: cond.tactile.len().min(cond.image.len()),
                need: plan.conditioning_len,
            }
            .into());
        }
        let used = |i: usize| plan.layer_map.contains(&i);
        let p_tac = g.param(store, params.proj_tactile);
        let p_img = plan.group.uses_image().then(|| g.param(store, params.proj_image));
        let mut image = Vec::with_capacity(cond.len());
        let mut tactile = Vec::with_capacity(cond.len());
        for i in 0..cond.len() {
            // unused states still occupy a slot so indices line up with the plan
            let src = if used(i) { cond.tactile[i] } else { cond.tactile[plan.layer_map[0]] };
            let t = g.matmul(src, p_tac)?;
            tactile.push(g.repeat_rows(t, seq)?);
            image.push(match p_img {
                Some(p) if used(i) => {
                    let v = g.matmul(cond.image[i], p)?;
                    Some(g.repeat_rows(v, seq)?)
                }
                _ => None,
            });
        }
        Ok(Self { image, tactile })
    }
}

/// `out + tanh(g_img) * P_img h_img^t + tanh(g_tac) * P_tac h_tac^t`, where `t`
/// is the state the plan routes to `layer`. The image term is absent for
/// tactile-only plans.
pub fn fuse_into_layer(
    g: &mut Graph,
    store: &ParamStore,
    params: &FusionParams,
    plan: &FusionPlan,
    projected: &ProjectedConditioning,
    layer: usize,
    out: Var,
) -> Result<Var> {
    let idx = *plan.layer_map.get(layer).ok_or(FusionError::LayerOutOfRange { layer, n_layers: plan.n_layers })?;
    let tac = projected.tactile[idx];
    let (got, expected) = (g.shape(out)[1], g.shape(tac)[1]);
    if got != expected || g.shape(out)[0] != g.shape(tac)[0] {
        return Err(FusionError::WidthMismatch { got, expected }.into());
    }
    let mut y = out;
    if plan.group.uses_image() {
        let img =
            projected.image[idx].ok_or(FusionError::ConditioningLength { got: idx, need: plan.conditioning_len })?;
        let gate = g.param(store, params.gate_image[layer]);
        let gate = g.tanh(gate);
        let term = g.scalar_mul(gate, img)?;
        y = g.add(y, term)?;
    }
    let gate = g.param(store, params.gate_tactile[layer]);
    let gate = g.tanh(gate);
    let term = g.scalar_mul(gate, tac)?;
    Ok(g.add(y, term)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{build_plan, ModalityGroup, Variant};
    use crate::tensor::{grad_check_params, GradCheckOptions, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const B: usize = 2;
    const SEQ: usize = 3;
    const D: usize = 4;

    fn setup(n_layers: usize) -> (ParamStore, FusionParams) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params =
            FusionParams::build(&mut ParamSource::Create { store: &mut store, rng: &mut rng }, n_layers, D, D).unwrap();
        (store, params)
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
        Tensor::uniform(&[rows, cols], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn fused(store: &ParamStore, params: &FusionParams, group: ModalityGroup, image_seed: u64) -> (Tensor, Tensor) {
        let plan = build_plan(Variant::Aware, group, 4, 2).unwrap();
        let mut g = Graph::new();
        let cond = Conditioning {
            image: (0..2).map(|t| g.constant(random(B, D, image_seed + t))).collect(),
            tactile: (0..2).map(|t| g.constant(random(B, D, 50 + t))).collect(),
        };
        let proj = ProjectedConditioning::new(&mut g, store, params, &plan, &cond, SEQ).unwrap();
        let x = g.constant(random(B * SEQ, D, 99));
        let y = fuse_into_layer(&mut g, store, params, &plan, &proj, 3, x).unwrap();
        (g.value(x).clone(), g.value(y).clone())
    }

    #[test]
    fn zero_gates_are_bitwise_identity() {
        let (store, params) = setup(4);
        let (x, y) = fused(&store, &params, ModalityGroup::TactileAndVision, 0);
        assert_eq!(x.data(), y.data());
    }

    #[test]
    fn tactile_only_ignores_image_states() {
        let (mut store, params) = setup(4);
        for id in params.gates().collect::<Vec<_>>() {
            store.set(id, Tensor::full(&[1, 1], 0.7)).unwrap();
        }
        let (x, a) = fused(&store, &params, ModalityGroup::TactileOnly, 0);
        let (_, b) = fused(&store, &params, ModalityGroup::TactileOnly, 1000);
        assert_eq!(a.data(), b.data());
        assert!(a.max_abs_diff(&x) > 0.0);
        let (_, c) = fused(&store, &params, ModalityGroup::TactileAndVision, 0);
        let (_, d) = fused(&store, &params, ModalityGroup::TactileAndVision, 1000);
        assert!(c.max_abs_diff(&d) > 0.0);
    }

    #[test]
    fn gate_gradient_matches_finite_differences() {
        let (mut store, params) = setup(4);
        store.set(params.gate_tactile[3], Tensor::full(&[1, 1], 0.3)).unwrap();
        let plan = build_plan(Variant::Aware, ModalityGroup::TactileAndVision, 4, 2).unwrap();
        let report = grad_check_params(
            &store,
            |g, s| {
                let cond = Conditioning {
                    image: (0..2).map(|t| g.constant(random(B, D, t))).collect(),
                    tactile: (0..2).map(|t| g.constant(random(B, D, 50 + t))).collect(),
                };
                let proj = ProjectedConditioning::new(g, s, &params, &plan, &cond, SEQ)?;
                let x = g.constant(random(B * SEQ, D, 99));
                let y = fuse_into_layer(g, s, &params, &plan, &proj, 3, x)?;
                let sq = g.multiply(y, y)?;
                Ok::<_, crate::Error>(g.mean(sq))
            },
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn rejects_width_mismatch_and_short_conditioning() {
        let (store, params) = setup(4);
        let plan = build_plan(Variant::Aware, ModalityGroup::TactileOnly, 4, 2).unwrap();
        let mut g = Graph::new();
        let one = g.constant(random(B, D, 0));
        let short = Conditioning { image: vec![one], tactile: vec![one] };
        assert!(ProjectedConditioning::new(&mut g, &store, &params, &plan, &short, SEQ).is_err());
        let cond = Conditioning { image: vec![one, one], tactile: vec![one, one] };
        let proj = ProjectedConditioning::new(&mut g, &store, &params, &plan, &cond, SEQ).unwrap();
        let wide = g.constant(random(B * SEQ, D + 1, 0));
        assert!(fuse_into_layer(&mut g, &store, &params, &plan, &proj, 0, wide).is_err());
    }
}
