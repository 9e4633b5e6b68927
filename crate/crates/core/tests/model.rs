mod common;

use common::{noise, reference_forward, to_mat};
use setransformer_core::model::{self, layers, ModelConfig, ModelParams, SeTransformer};
use setransformer_core::tensor::{grad_check, Coordinates, GradCheckOptions, Tape, Tensor};

fn cfg(t: usize, d: usize, heads: usize, r: usize, pool: usize, k: usize) -> ModelConfig {
    ModelConfig {
        input_channels: 3,
        window_len: t,
        model_dim: d,
        num_layers: 2,
        num_heads: heads,
        ffn_hidden: 4 * d,
        se_reduction: r,
        pool_hidden: pool,
        num_classes: k,
    }
}

fn random_params(config: &ModelConfig, seed: u64) -> ModelParams<f64> {
    let mut p = ModelParams::<f64>::init(config, seed).unwrap();
    // Perturb biases, gammas and betas too so no parameter sits at its init value.
    let mut s = seed;
    for (_, t) in p.entries_mut() {
        s += 1;
        let n = noise(s, t.len(), 0.2);
        for (v, e) in t.data_mut().iter_mut().zip(n) {
            *v += e;
        }
    }
    p
}

#[test]
fn projection_with_zero_weights_repeats_bias() {
    let c = cfg(4, 8, 2, 4, 4, 3);
    let mut p = ModelParams::<f64>::zeros(&c);
    p.b_proj = Tensor::from_f64(&[8], &[1., 2., 3., 4., 5., 6., 7., 8.]).unwrap();
    let mut tape = Tape::new();
    let pv = p.register_frozen(&mut tape);
    let x = tape.constant(&Tensor::from_f64(&[1, 4, 3], &noise(1, 12, 3.0)).unwrap());
    let h = layers::input_projection(&mut tape, x, &pv).unwrap();
    for row in tape.value(h).chunks(8) {
        assert_eq!(row, p.b_proj.data());
    }
}

#[test]
fn projection_identity_when_channels_equal_dim() {
    let c = ModelConfig {
        input_channels: 4,
        ..cfg(5, 4, 2, 2, 4, 3)
    };
    let mut p = ModelParams::<f64>::zeros(&c);
    let mut eye = vec![0.0; 16];
    for i in 0..4 {
        eye[i * 5] = 1.0;
    }
    p.w_proj = Tensor::from_f64(&[4, 4], &eye).unwrap();
    let xs = noise(2, 20, 1.0);
    let mut tape = Tape::new();
    let pv = p.register_frozen(&mut tape);
    let x = tape.constant(&Tensor::from_f64(&[1, 5, 4], &xs).unwrap());
    let h = layers::input_projection(&mut tape, x, &pv).unwrap();
    assert_eq!(tape.value(h), &xs[..]);
}

#[test]
fn projection_shape_at_default_dims() {
    let c = ModelConfig::default();
    let p = ModelParams::<f32>::init(&c, 0).unwrap();
    let mut tape = Tape::new();
    let pv = p.register_frozen(&mut tape);
    let x = tape.constant(&Tensor::zeros(&[1, 200, 3]));
    let h = layers::input_projection(&mut tape, x, &pv).unwrap();
    assert_eq!(tape.shape(h), &[1, 200, 128]);
    let bad = tape.constant(&Tensor::zeros(&[1, 200, 4]));
    assert!(layers::input_projection(&mut tape, bad, &pv).is_err());
}

#[test]
fn attention_with_zero_values_is_zero() {
    let c = cfg(6, 8, 2, 4, 4, 3);
    let mut p = random_params(&c, 3);
    p.layers[0].w_v = Tensor::zeros(&[8, 8]);
    p.layers[0].b_v = Tensor::zeros(&[8]);
    p.layers[0].b_o = Tensor::zeros(&[8]);
    let mut tape = Tape::new();
    let pv = p.register_frozen(&mut tape);
    let h = tape.constant(&Tensor::from_f64(&[2, 6, 8], &noise(4, 96, 2.0)).unwrap());
    let (out, _) = layers::multi_head_self_attention(&mut tape, h, &pv.layers[0], 2).unwrap();
    assert!(tape.value(out).iter().all(|&v| v == 0.0));
}

#[test]
fn single_step_attention_map_is_one() {
    let c = cfg(1, 8, 2, 4, 4, 3);
    let p = random_params(&c, 5);
    let mut tape = Tape::new();
    let pv = p.register_frozen(&mut tape);
    let h = tape.constant(&Tensor::from_f64(&[1, 1, 8], &noise(6, 8, 1.0)).unwrap());
    let (_, maps) = layers::multi_head_self_attention(&mut tape, h, &pv.layers[0], 2).unwrap();
    assert_eq!(tape.shape(maps), &[1, 2, 1, 1]);
    assert_eq!(tape.value(maps), &[1.0, 1.0]);
}

#[test]
fn two_step_attention_matches_hand_mixture() {
    // d = d_k = 1, one head, all projections the identity, no bias.
    let c = ModelConfig {
        input_channels: 1,
        window_len: 2,
        model_dim: 1,
        num_layers: 1,
        num_heads: 1,
        ffn_hidden: 1,
        se_reduction: 1,
        pool_hidden: 1,
        num_classes: 2,
    };
    let mut p = ModelParams::<f64>::zeros(&c);
    let l0 = &mut p.layers[0];
    for w in [&mut l0.w_q, &mut l0.w_k, &mut l0.w_v, &mut l0.w_o] {
        *w = Tensor::from_f64(&[1, 1], &[1.0]).unwrap();
    }
    let mut tape = Tape::new();
    let pv = p.register_frozen(&mut tape);
    let h = tape.constant(&Tensor::from_f64(&[1, 2, 1], &[1.0, 2.0]).unwrap());
    let (out, maps) = layers::multi_head_self_attention(&mut tape, h, &pv.layers[0], 1).unwrap();
    // Row 0 scores [1, 2]; row 1 scores [2, 4].
    let e = std::f64::consts::E;
    let w0 = [1.0 / (1.0 + e), e / (1.0 + e)];
    let e2 = e * e;
    let w1 = [1.0 / (1.0 + e2), e2 / (1.0 + e2)];
    let want = [w0[0] + 2.0 * w0[1], w1[0] + 2.0 * w1[1]];
    assert!((tape.value(out)[0] - want[0]).abs() < 1e-12);
    assert!((tape.value(out)[1] - want[1]).abs() < 1e-12);
    assert!((tape.value(maps)[0] - w0[0]).abs() < 1e-12);
    assert!((tape.value(out)[0] - 1.731_058_578_630_005).abs() < 1e-9);
}

#[test]
fn encoder_with_zero_sublayers_normalizes_rows() {
    let c = cfg(5, 8, 2, 4, 4, 3);
    let mut p = ModelParams::<f64>::zeros(&c);
    for l in &mut p.layers {
        l.ln1_gamma = Tensor::ones(&[8]);
        l.ln2_gamma = Tensor::ones(&[8]);
    }
    let mut tape = Tape::new();
    let pv = p.register_frozen(&mut tape);
    let h = tape.constant(&Tensor::from_f64(&[1, 5, 8], &noise(7, 40, 3.0)).unwrap());
    let (out, _) = layers::encoder_layer(&mut tape, h, &pv.layers[0], 2).unwrap();
    assert_eq!(tape.shape(out), &[1, 5, 8]);
    for row in tape.value(out).chunks(8) {
        let mean: f64 = row.iter().sum::<f64>() / 8.0;
        let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 8.0;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-4);
    }
}

#[test]
fn encoder_layer_matches_loop_reimplementation() {
    let c = cfg(4, 8, 2, 4, 4, 3);
    let p = random_params(&c, 11);
    let xs = noise(12, 32, 1.5);
    let mut tape = Tape::new();
    let pv = p.register_frozen(&mut tape);
    let h = tape.constant(&Tensor::from_f64(&[1, 4, 8], &xs).unwrap());
    let (out, _) = layers::encoder_layer(&mut tape, h, &pv.layers[0], 2).unwrap();
    let want = common::encoder_layer(&to_mat(&xs, 4, 8), &p.layers[0], 2);
    for (got, want) in tape.value(out).chunks(8).zip(&want) {
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-6, "{g} vs {w}");
        }
    }
}

#[test]
fn se_with_zero_weights_halves_input() {
    let c = cfg(4, 8, 2, 4, 4, 3);
    let p = ModelParams::<f64>::zeros(&c);
    let xs = noise(13, 32, 1.0);
    let mut tape = Tape::new();
    let pv = p.register_frozen(&mut tape);
    let h = tape.constant(&Tensor::from_f64(&[1, 4, 8], &xs).unwrap());
    let (out, gate) = layers::se_module(&mut tape, h, &pv).unwrap();
    assert!(tape.value(gate).iter().all(|&s| s == 0.5));
    for (o, x) in tape.value(out).iter().zip(&xs) {
        assert_eq!(*o, 0.5 * x);
    }
}

#[test]
fn squeeze_of_constant_sequence_is_that_row() {
    let row: Vec<f64> = noise(14, 8, 1.0);
    let xs: Vec<f64> = (0..5).flat_map(|_| row.clone()).collect();
    let mut tape = Tape::new();
    let h = tape.constant(&Tensor::from_f64(&[1, 5, 8], &xs).unwrap());
    let z = tape.reduce_mean(h, 1).unwrap();
    for (a, b) in tape.value(z).iter().zip(&row) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn se_matches_loop_reimplementation() {
    let c = cfg(4, 8, 2, 4, 4, 3);
    let p = random_params(&c, 15);
    let xs = noise(16, 32, 1.0);
    let mut tape = Tape::new();
    let pv = p.register_frozen(&mut tape);
    let h = tape.constant(&Tensor::from_f64(&[1, 4, 8], &xs).unwrap());
    let (out, gate) = layers::se_module(&mut tape, h, &pv).unwrap();
    let (want, want_gate) = common::se(
        &to_mat(&xs, 4, 8),
        &to_mat(p.w1_se.data(), 8, 2),
        &to_mat(p.w2_se.data(), 2, 8),
    );
    for (g, w) in tape.value(gate).iter().zip(&want_gate) {
        assert!((g - w).abs() < 1e-6);
    }
    for (g, w) in tape.value(out).iter().zip(want.concat()) {
        assert!((g - w).abs() < 1e-6);
    }
}

#[test]
fn pooling_with_zero_scores_is_time_mean() {
    let c = cfg(5, 8, 2, 4, 4, 3);
    let p = ModelParams::<f64>::zeros(&c);
    let xs = noise(17, 40, 1.0);
    let mut tape = Tape::new();
    let pv = p.register_frozen(&mut tape);
    let h = tape.constant(&Tensor::from_f64(&[1, 5, 8], &xs).unwrap());
    let (ctx, alpha) = layers::temporal_attention_pool(&mut tape, h, &pv).unwrap();
    assert!(tape.value(alpha).iter().all(|&a| (a - 0.2).abs() < 1e-15));
    for c in 0..8 {
        let mean: f64 = (0..5).map(|t| xs[t * 8 + c]).sum::<f64>() / 5.0;
        assert!((tape.value(ctx)[c] - mean).abs() < 1e-12);
    }
}

#[test]
fn pooling_single_step_returns_that_step() {
    let c = cfg(1, 8, 2, 4, 4, 3);
    let p = random_params(&c, 18);
    let xs = noise(19, 8, 1.0);
    let mut tape = Tape::new();
    let pv = p.register_frozen(&mut tape);
    let h = tape.constant(&Tensor::from_f64(&[1, 1, 8], &xs).unwrap());
    let (ctx, alpha) = layers::temporal_attention_pool(&mut tape, h, &pv).unwrap();
    assert_eq!(tape.value(alpha), &[1.0]);
    assert_eq!(tape.value(ctx), &xs[..]);
}

#[test]
fn pooling_concentrates_on_a_dominant_score() {
    // d' = 1, v = 20, W_a picks feature 0; step 2 saturates tanh, others are 0.
    let c = cfg(6, 4, 2, 2, 1, 3);
    let mut p = ModelParams::<f64>::zeros(&c);
    p.v = Tensor::from_f64(&[1], &[20.0]).unwrap();
    p.w_a = Tensor::from_f64(&[4, 1], &[1.0, 0.0, 0.0, 0.0]).unwrap();
    let mut xs = vec![0.0; 24];
    xs[2 * 4] = 50.0;
    let mut tape = Tape::new();
    let pv = p.register_frozen(&mut tape);
    let h = tape.constant(&Tensor::from_f64(&[1, 6, 4], &xs).unwrap());
    let (_, alpha) = layers::temporal_attention_pool(&mut tape, h, &pv).unwrap();
    let want = 20f64.exp() / (20f64.exp() + 5.0);
    assert!(tape.value(alpha)[2] > 0.999);
    assert!((tape.value(alpha)[2] - want).abs() < 1e-12);
}

#[test]
fn classifier_examples() {
    let c = ModelConfig::default();
    let mut p = ModelParams::<f64>::zeros(&c);
    let mut tape = Tape::new();
    let pv = p.register_frozen(&mut tape);
    let ctx = tape.constant(&Tensor::from_f64(&[1, 128], &noise(20, 128, 1.0)).unwrap());
    let (_, probs) = layers::classify(&mut tape, ctx, &pv).unwrap();
    assert_eq!(tape.shape(probs), &[1, 6]);
    assert!(tape.value(probs).iter().all(|&q| (q - 1.0 / 6.0).abs() < 1e-15));

    p.b_c = Tensor::from_f64(&[6], &[10.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let mut tape = Tape::new();
    let pv = p.register_frozen(&mut tape);
    let ctx = tape.constant(&Tensor::from_f64(&[1, 128], &noise(20, 128, 1.0)).unwrap());
    let (_, probs) = layers::classify(&mut tape, ctx, &pv).unwrap();
    assert!(tape.value(probs)[0] > 0.999);
}

#[test]
fn forward_shapes_at_default_dims() {
    let m = SeTransformer::<f32>::new(ModelConfig::default(), 1).unwrap();
    let x = Tensor::<f32>::from_f64(&[200, 3], &noise(21, 600, 2.0)).unwrap();
    let d = &m.forward(&x).unwrap()[0];
    assert_eq!(d.class_probs.len(), 6);
    assert_eq!(d.pool_weights.len(), 200);
    assert_eq!(d.se_gate.len(), 128);
    assert_eq!(d.attention_maps.len(), 2);
    assert_eq!(d.attention_maps[0].len(), 4);
    assert_eq!(d.attention_maps[0][0].len(), 200 * 200);
}

#[test]
fn forward_matches_loop_reimplementation() {
    for (seed, c) in [(30, ModelConfig::tiny()), (31, cfg(7, 12, 3, 3, 5, 4))] {
        let p = random_params(&c, seed);
        let xs = noise(seed + 100, c.window_len * 3, 2.0);
        let m = SeTransformer::from_parts(c.clone(), p.clone()).unwrap();
        let got = &m.forward(&Tensor::from_f64(&[c.window_len, 3], &xs).unwrap()).unwrap()[0];
        let want = reference_forward(&to_mat(&xs, c.window_len, 3), &p, &c);
        let close = |a: &[f64], b: &[f64]| a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-9);
        assert!(close(&got.class_probs, &want.probs));
        assert!(close(&got.logits, &want.logits));
        assert!(close(&got.pool_weights, &want.alpha));
        assert!(close(&got.se_gate, &want.gate));
        for (l, layer) in want.maps.iter().enumerate() {
            for (h, map) in layer.iter().enumerate() {
                assert!(close(&got.attention_maps[l][h], &map.concat()));
            }
        }
    }
}

#[test]
fn forward_is_invariant_to_time_permutation() {
    let c = cfg(16, 16, 2, 4, 8, 4);
    let m = SeTransformer::<f32>::new(c, 3).unwrap();
    let xs = noise(40, 48, 2.0);
    let mut perm: Vec<usize> = (0..16).collect();
    perm.reverse();
    perm.swap(3, 9);
    let shuffled: Vec<f64> = perm.iter().flat_map(|&t| xs[t * 3..t * 3 + 3].to_vec()).collect();
    let a = &m.forward(&Tensor::from_f64(&[16, 3], &xs).unwrap()).unwrap()[0];
    let b = &m.forward(&Tensor::from_f64(&[16, 3], &shuffled).unwrap()).unwrap()[0];
    for (p, q) in a.class_probs.iter().zip(&b.class_probs) {
        assert!((p - q).abs() < 1e-6);
    }
}

#[test]
fn batched_forward_equals_per_sample_forward() {
    let c = ModelConfig::tiny();
    let m = SeTransformer::<f64>::new(c, 4).unwrap();
    let a = noise(50, 24, 1.0);
    let b = noise(51, 24, 1.0);
    let both = model::stack_windows(&[&a[..], &b[..]], 8, 3).unwrap();
    let batch = m.forward(&both).unwrap();
    let single = m.forward(&Tensor::from_f64(&[8, 3], &b).unwrap()).unwrap();
    assert_eq!(batch[1], single[0]);
}

#[test]
fn forward_is_deterministic() {
    let c = ModelConfig::tiny();
    let x = Tensor::<f32>::from_f64(&[8, 3], &noise(60, 24, 1.0)).unwrap();
    let a = SeTransformer::<f32>::new(c.clone(), 9).unwrap().forward(&x).unwrap();
    let b = SeTransformer::<f32>::new(c, 9).unwrap().forward(&x).unwrap();
    assert_eq!(a, b);
}

#[test]
fn stage_errors_name_the_stage() {
    let m = SeTransformer::<f32>::new(ModelConfig::tiny(), 0).unwrap();
    let err = m.forward(&Tensor::zeros(&[8, 4])).unwrap_err().to_string();
    assert!(err.contains("[1, 8, 4]"), "{err}");
}

#[test]
fn tiny_model_gradient_matches_finite_differences() {
    let c = ModelConfig::tiny();
    let p = random_params(&c, 70);
    let x = Tensor::from_f64(&[2, 8, 3], &noise(71, 48, 1.5)).unwrap();
    let labels = [0usize, 2];
    let inputs: Vec<Tensor<f64>> = p.entries().into_iter().map(|(_, t)| t.clone()).collect();
    let report = grad_check(
        &inputs,
        |tape, vars| {
            let mut it = vars.iter().copied();
            let pv = model::ParamVars::try_from_fn(c.num_layers, |_| Ok(it.next().unwrap()))?;
            let xv = tape.constant(&x);
            let (loss, _) = model::loss_on_tape(tape, &pv, &c, xv, &labels)?;
            Ok(loss)
        },
        &GradCheckOptions {
            eps: 1e-6,
            coordinates: Coordinates::Sample { count: 300, seed: 1 },
        },
    )
    .unwrap();
    assert!(report.checked >= 250, "{report:?}");
    assert!(report.max_rel_error < 1e-4, "{report:?}");
}
