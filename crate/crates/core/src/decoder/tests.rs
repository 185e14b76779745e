use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::fusion::{build_plan, ModalityGroup, Variant};
use crate::tensor::{grad_check_params, GradCheckOptions, Tensor};

fn small() -> ModelConfig {
    ModelConfig { n_layers: 3, width: 8, heads: 2, ffn_hidden: 12, vocab_size: 9, max_positions: 6, hidden_dim: 4 }
}

fn model(config: &ModelConfig) -> (Decoder, ParamStore) {
    let mut store = ParamStore::new();
    let d = Decoder::new(config, &mut store, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    (d, store)
}

fn random_tokens(rng: &mut ChaCha8Rng, batch: usize, seq: usize, vocab: usize) -> Vec<Vec<usize>> {
    (0..batch).map(|_| (0..seq).map(|_| rng.gen_range(0..vocab)).collect()).collect()
}

fn conditioning(g: &mut Graph, rng: &mut ChaCha8Rng, n: usize, batch: usize, dim: usize) -> Conditioning {
    let mut mk = || (0..n).map(|_| g.constant(Tensor::uniform(&[batch, dim], 1.0, rng))).collect::<Vec<_>>();
    let image = mk();
    let tactile = mk();
    Conditioning { image, tactile }
}

fn set_gates(store: &mut ParamStore, d: &Decoder, value: f64) {
    for id in d.fusion.gates().collect::<Vec<_>>() {
        store.set(id, Tensor::full(&[1, 1], value)).unwrap();
    }
}

#[test]
fn parameter_count_is_a_function_of_config() {
    for config in [small(), ModelConfig::default()] {
        let (_, store) = model(&config);
        assert_eq!(store.num_scalars(), config.param_count());
    }
}

#[test]
fn zero_gates_match_unconditioned_logits_bitwise() {
    let c = small();
    let (d, store) = model(&c);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for variant in Variant::ALL {
        for group in ModalityGroup::ALL {
            let plan = build_plan(variant, group, c.n_layers, 3).unwrap();
            let tokens = random_tokens(&mut rng, 2, 5, c.vocab_size);
            let mut g = Graph::new();
            let cond = conditioning(&mut g, &mut rng, plan.conditioning_len, 2, c.hidden_dim);
            let fused =
                d.forward(&mut g, &store, &tokens, Some(FusionInput { plan: &plan, conditioning: &cond })).unwrap();
            let plain = d.forward(&mut g, &store, &tokens, None).unwrap();
            assert_eq!(g.value(fused).data(), g.value(plain).data(), "{variant} {group}");
        }
    }
}

#[test]
fn nonzero_gates_change_logits() {
    let c = small();
    let (d, mut store) = model(&c);
    set_gates(&mut store, &d, 0.5);
    let plan = build_plan(Variant::Aware, ModalityGroup::TactileOnly, c.n_layers, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let tokens = random_tokens(&mut rng, 2, 4, c.vocab_size);
    let mut g = Graph::new();
    let cond = conditioning(&mut g, &mut rng, 3, 2, c.hidden_dim);
    let fused = d.forward(&mut g, &store, &tokens, Some(FusionInput { plan: &plan, conditioning: &cond })).unwrap();
    let plain = d.forward(&mut g, &store, &tokens, None).unwrap();
    assert!(g.value(fused).max_abs_diff(g.value(plain)) > 1e-6);
}

#[test]
fn logits_are_causal() {
    let c = small();
    let (d, mut store) = model(&c);
    set_gates(&mut store, &d, 0.4);
    let plan = build_plan(Variant::Aware, ModalityGroup::TactileAndVision, c.n_layers, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for case in 0..20 {
        let seq = rng.gen_range(2..=c.max_positions);
        let tokens = random_tokens(&mut rng, 1, seq, c.vocab_size);
        let i = rng.gen_range(0..seq - 1);
        let mut changed = tokens.clone();
        for t in &mut changed[0][i + 1..] {
            *t = (*t + 1 + rng.gen_range(0..c.vocab_size - 1)) % c.vocab_size;
        }
        let mut g = Graph::new();
        let cond = conditioning(&mut g, &mut rng, 2, 1, c.hidden_dim);
        let fusion = Some(FusionInput { plan: &plan, conditioning: &cond });
        let a = d.forward(&mut g, &store, &tokens, fusion).unwrap();
        let b = d.forward(&mut g, &store, &changed, fusion).unwrap();
        let v = c.vocab_size;
        assert_eq!(g.value(a).data()[..(i + 1) * v], g.value(b).data()[..(i + 1) * v], "case {case}");
        assert_ne!(g.value(a).data()[(i + 1) * v..], g.value(b).data()[(i + 1) * v..]);
    }
}

#[test]
fn attention_weight_gradient_matches_finite_differences() {
    let c = small();
    let (d, mut store) = model(&c);
    set_gates(&mut store, &d, 0.3);
    for id in store.ids().collect::<Vec<_>>() {
        let name = store.name(id).to_string();
        let keep = name == "decoder.layer1.wq.w" || name == "decoder.layer1.wv.w" || name == "fusion.gate_tactile.1";
        store.set_trainable(id, keep);
    }
    let plan = build_plan(Variant::Aware, ModalityGroup::TactileAndVision, c.n_layers, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let tokens = random_tokens(&mut rng, 2, 4, c.vocab_size);
    let cond_vals: Vec<Tensor> = (0..6).map(|_| Tensor::uniform(&[2, c.hidden_dim], 1.0, &mut rng)).collect();
    let targets: Vec<Option<usize>> = (0..8).map(|i| Some(i % c.vocab_size)).collect();
    let report = grad_check_params(
        &store,
        |g, s| -> Result<Var> {
            let vars: Vec<Var> = cond_vals.iter().map(|t| g.constant(t.clone())).collect();
            let cond = Conditioning { image: vars[..3].to_vec(), tactile: vars[3..].to_vec() };
            let logits = d.forward(g, s, &tokens, Some(FusionInput { plan: &plan, conditioning: &cond }))?;
            Ok(g.cross_entropy(logits, &targets)?)
        },
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
    assert_eq!(report.checked, 2 * 64 + 1);
}

#[test]
fn eos_biased_head_generates_nothing() {
    let c = small();
    let (d, mut store) = model(&c);
    let mut bias = vec![0.0; c.vocab_size];
    bias[EOS] = 100.0;
    store.set(d.output_bias(), Tensor::matrix(1, c.vocab_size, bias)).unwrap();
    let out = d.generate(&store, None, &[], 3, 3).unwrap();
    assert_eq!(out, vec![Vec::<usize>::new(); 3]);
}

#[test]
fn generation_is_deterministic_and_bounded() {
    let c = small();
    let (d, mut store) = model(&c);
    set_gates(&mut store, &d, 0.8);
    let plan = build_plan(Variant::Even, ModalityGroup::TactileAndVision, c.n_layers, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let hidden: Vec<HiddenSequence> = (0..3)
        .map(|_| HiddenSequence {
            pairs: (1..=2)
                .map(|t| crate::encoders::HiddenPair {
                    image: (0..4).map(|_| rng.gen()).collect(),
                    tactile: (0..4).map(|_| rng.gen()).collect(),
                    time_index: t,
                })
                .collect(),
        })
        .collect();
    let refs: Vec<&HiddenSequence> = hidden.iter().collect();
    let a = d.generate(&store, Some(&plan), &refs, 3, 10).unwrap();
    let b = d.generate(&store, Some(&plan), &refs, 3, 10).unwrap();
    assert_eq!(a, b);
    assert!(a.iter().all(|r| r.len() <= c.max_positions - PROMPT.len() && !r.contains(&EOS)));
}

#[test]
fn rejects_bad_tokens_and_lengths() {
    let c = small();
    let (d, store) = model(&c);
    let mut g = Graph::new();
    assert!(d.forward(&mut g, &store, &[vec![c.vocab_size]], None).is_err());
    assert!(d.forward(&mut g, &store, &[vec![1; c.max_positions + 1]], None).is_err());
    assert!(d.forward(&mut g, &store, &[vec![1, 2], vec![1]], None).is_err());
    let bad = ModelConfig { heads: 3, ..small() };
    assert!(Decoder::new(&bad, &mut ParamStore::new(), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn argmax_prefers_lower_index_on_ties() {
    assert_eq!(argmax(&[1.0, 3.0, 3.0, 2.0]), 1);
    assert_eq!(argmax(&[0.0]), 0);
}

#[test]
fn bind_finds_every_parameter() {
    let (_, store) = model(&small());
    assert!(Decoder::bind(&small(), &store).is_ok());
    assert!(Decoder::bind(&ModelConfig { n_layers: 4, ..small() }, &store).is_err());
}
