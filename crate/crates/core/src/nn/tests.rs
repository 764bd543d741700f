use super::gradcheck::gradient_check;
use super::*;
use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn default_cnn_shape_chain() {
    let spec = ModelSpec::default_cnn(48);
    let shapes = spec.shape_chain().unwrap();
    let lengths: Vec<usize> = shapes
        .iter()
        .zip(&spec.layers)
        .filter(|(_, l)| matches!(l, LayerSpec::Conv { .. } | LayerSpec::MaxPool { .. }))
        .map(|(s, _)| s.1)
        .collect();
    assert_eq!(lengths, vec![44, 40, 20, 16, 14, 7, 3, 1]);
    let last = shapes.last().unwrap();
    assert_eq!(last.0 * last.1, 5);
}

#[test]
fn forward_emits_five_values_per_window() {
    let spec = ModelSpec::default_cnn(48);
    let mut model = Model::<f32>::init(&spec, 0).unwrap();
    let input = Array2::<f32>::zeros((3, 48));
    let (logits, offsets) = model.forward(&input, false).unwrap();
    assert_eq!(logits.dim(), (3, 3));
    assert_eq!(offsets.dim(), (3, 2));
}

#[test]
fn wrong_input_length_reports_shapes() {
    let spec = ModelSpec::default_cnn(48);
    let mut model = Model::<f32>::init(&spec, 0).unwrap();
    let input = Array2::<f32>::zeros((1, 32));
    let err = model.forward(&input, false).unwrap_err();
    assert!(err.to_string().contains("48"), "{err}");
}

#[test]
fn zero_output_layer_gives_uniform_probs_and_zero_offsets() {
    let spec = ModelSpec::default_cnn(48);
    let mut model = Model::<f64>::init(&spec, 3).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let input = Array2::from_shape_fn((4, 48), |_| rng.gen_range(-1.0..1.0));
    let preds = model.predict(&input).unwrap();
    for p in preds {
        assert!((p.probs.background - 1.0 / 3.0).abs() < 1e-9);
        assert!((p.probs.wheelchair - 1.0 / 3.0).abs() < 1e-9);
        assert!((p.probs.walker - 1.0 / 3.0).abs() < 1e-9);
        assert_eq!(p.offset, (0.0, 0.0));
    }
}

#[test]
fn softmax_sums_to_one_for_random_logits() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let logits = Array2::from_shape_fn((1, 3), |_| rng.gen_range(-30.0f64..30.0));
        let offsets = Array2::zeros((1, 2));
        let p = &predictions_from_head(&logits, &offsets)[0].probs;
        let sum = p.background + p.wheelchair + p.walker;
        assert!((sum - 1.0).abs() < 1e-6);
        assert!(p.background >= 0.0 && p.wheelchair >= 0.0 && p.walker >= 0.0);
    }
}

#[test]
fn loss_components() {
    // Uniform probs over 3 classes -> NLL = ln 3; masked-out batch -> no
    // regression term.
    let logits = Array2::<f64>::zeros((4, 3));
    let offsets = Array2::<f64>::zeros((4, 2));
    let targets = TargetBatch {
        class_idx: vec![0, 1, 2, 0],
        offsets: vec![(0.0, 0.0); 4],
        mask: vec![false; 4],
    };
    let (loss, _, doff) = loss_and_grads(&logits, &offsets, &targets);
    assert!((loss - 3.0f64.ln()).abs() < 1e-12);
    assert!(doff.iter().all(|&g| g == 0.0));

    // Offsets equal to targets -> regression term exactly 0.
    let targets = TargetBatch {
        class_idx: vec![0, 1, 2, 0],
        offsets: vec![(0.0, 0.0); 4],
        mask: vec![true; 4],
    };
    let (loss2, _, _) = loss_and_grads(&logits, &offsets, &targets);
    assert!((loss2 - 3.0f64.ln()).abs() < 1e-12);

    // Near-perfect probs and masked-out regression -> loss ~ 0.
    let mut hot = Array2::<f64>::zeros((2, 3));
    hot[[0, 0]] = 50.0;
    hot[[1, 2]] = 50.0;
    let targets = TargetBatch {
        class_idx: vec![0, 2],
        offsets: vec![(0.0, 0.0); 2],
        mask: vec![false; 2],
    };
    let (loss3, _, _) = loss_and_grads(&hot, &Array2::zeros((2, 2)), &targets);
    assert!(loss3.abs() < 1e-12);
}

#[test]
fn zero_head_gradient_gives_zero_param_gradients() {
    let spec = ModelSpec::default_cnn(48);
    let mut model = Model::<f64>::init(&spec, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let input = Array2::from_shape_fn((2, 48), |_| rng.gen_range(-1.0..1.0));
    model.forward(&input, true).unwrap();
    model.backward(&Array2::zeros((2, 3)), &Array2::zeros((2, 2)));
    let grads = get_grad_vector(&mut model);
    assert!(grads.iter().all(|&g| g == 0.0));
}

#[test]
fn gradient_is_linear_in_head_gradient() {
    let spec = ModelSpec {
        input_len: 10,
        layers: vec![
            LayerSpec::Conv {
                kernel: 3,
                out_channels: 4,
            },
            LayerSpec::Relu,
            LayerSpec::Dense { units: 5 },
        ],
        classes: 3,
        regression: 2,
    };
    let mut model = Model::<f64>::init(&spec, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    model.visit_params(|_, p, _| p.iter_mut().for_each(|v| *v = rng.gen_range(-0.3..0.3)));
    let input = Array2::from_shape_fn((3, 10), |_| rng.gen_range(-1.0..1.0));
    let dlog = Array2::from_shape_fn((3, 3), |_| rng.gen_range(-1.0..1.0));
    let doff = Array2::from_shape_fn((3, 2), |_| rng.gen_range(-1.0..1.0));

    model.forward(&input, true).unwrap();
    model.backward(&dlog, &doff);
    let g1 = get_grad_vector(&mut model);
    model.forward(&input, true).unwrap();
    model.backward(&(&dlog * 2.0), &(&doff * 2.0));
    let g2 = get_grad_vector(&mut model);
    for (a, b) in g1.iter().zip(&g2) {
        assert!((2.0 * a - b).abs() < 1e-12 * (1.0 + b.abs()));
    }
}

fn check(spec: ModelSpec, batch: usize) {
    let report = gradient_check(&spec, batch, 42, 12, 1e-5);
    assert!(
        report.max_rel_error < 1e-3,
        "max relative error {} over {} params",
        report.max_rel_error,
        report.checked
    );
}

fn tiny(layers: Vec<LayerSpec>) -> ModelSpec {
    ModelSpec {
        input_len: 12,
        layers,
        classes: 3,
        regression: 2,
    }
}

#[test]
fn gradcheck_conv() {
    check(
        tiny(vec![
            LayerSpec::Conv {
                kernel: 3,
                out_channels: 6,
            },
            LayerSpec::Conv {
                kernel: 3,
                out_channels: 4,
            },
            LayerSpec::Dense { units: 5 },
        ]),
        4,
    );
}

#[test]
fn gradcheck_maxpool() {
    check(
        tiny(vec![
            LayerSpec::Conv {
                kernel: 3,
                out_channels: 4,
            },
            LayerSpec::MaxPool { pool: 2 },
            LayerSpec::Dense { units: 5 },
        ]),
        4,
    );
}

#[test]
fn gradcheck_batchnorm() {
    check(
        tiny(vec![
            LayerSpec::Conv {
                kernel: 3,
                out_channels: 4,
            },
            LayerSpec::BatchNorm,
            LayerSpec::Dense { units: 5 },
        ]),
        4,
    );
}

#[test]
fn gradcheck_relu_dropout_dense() {
    check(
        tiny(vec![
            LayerSpec::Dense { units: 16 },
            LayerSpec::Relu,
            LayerSpec::Dropout { rate: 0.25 },
            LayerSpec::Dense { units: 5 },
        ]),
        4,
    );
}

#[test]
fn gradcheck_full_cnn() {
    let report = gradient_check(&ModelSpec::default_cnn(48), 2, 7, 6, 1e-5);
    assert!(
        report.max_rel_error < 1e-3,
        "max relative error {}",
        report.max_rel_error
    );
}

#[test]
fn adadelta_zero_gradient_keeps_params() {
    let spec = tiny(vec![LayerSpec::Dense { units: 5 }]);
    let mut model = Model::<f64>::init(&spec, 0).unwrap();
    let before = get_param_vector(&mut model);
    let mut opt = AdaDelta::default_params();
    opt.step(&mut model);
    assert_eq!(before, get_param_vector(&mut model));
}

#[test]
fn adadelta_update_opposes_gradient() {
    let spec = tiny(vec![LayerSpec::Dense { units: 5 }]);
    let mut model = Model::<f64>::init(&spec, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let grads: Vec<f64> = (0..{
        let mut n = 0;
        model.visit_params(|_, p, _| n += p.len());
        n
    })
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let before = get_param_vector(&mut model);
    let mut off = 0;
    model.visit_params(|_, _, g| {
        g.copy_from_slice(&grads[off..off + g.len()]);
        off += g.len();
    });
    let mut opt = AdaDelta::default_params();
    opt.step(&mut model);
    let after = get_param_vector(&mut model);
    for i in 0..before.len() {
        let delta = after[i] - before[i];
        if grads[i] != 0.0 {
            assert!(delta * grads[i] <= 0.0, "i={i}");
        }
    }
}

#[test]
fn init_output_layer_is_zero_and_deterministic() {
    let spec = ModelSpec::default_cnn(48);
    let mut a = Model::<f32>::init(&spec, 77).unwrap();
    let mut b = Model::<f32>::init(&spec, 77).unwrap();
    assert_eq!(get_param_vector(&mut a), get_param_vector(&mut b));

    // Last parameter tensors belong to the zero-initialized output conv.
    let mut tensors: Vec<Vec<f32>> = Vec::new();
    a.visit_params(|_, p, _| tensors.push(p.to_vec()));
    let bias = tensors.pop().unwrap();
    let weights = tensors.pop().unwrap();
    assert!(weights.iter().all(|&w| w == 0.0));
    assert!(bias.iter().all(|&w| w == 0.0));
    // Hidden layers are not zero.
    assert!(tensors[0].iter().any(|&w| w != 0.0));
}

#[test]
fn inference_is_deterministic_and_dropout0_matches() {
    let spec = tiny(vec![
        LayerSpec::Dense { units: 8 },
        LayerSpec::Relu,
        LayerSpec::Dropout { rate: 0.0 },
        LayerSpec::Dense { units: 5 },
    ]);
    let mut model = Model::<f32>::init(&spec, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    model.visit_params(|_, p, _| p.iter_mut().for_each(|v| *v = rng.gen_range(-0.5..0.5)));
    let input = Array2::from_shape_fn((3, 12), |_| rng.gen_range(-1.0f32..1.0));
    let (l1, o1) = model.forward(&input, false).unwrap();
    let (l2, o2) = model.forward(&input, false).unwrap();
    assert_eq!(l1, l2);
    assert_eq!(o1, o2);
    // Training mode with dropout rate 0 equals inference exactly (batch-norm
    // free spec).
    let (l3, o3) = model.forward(&input, true).unwrap();
    assert_eq!(l1, l3);
    assert_eq!(o1, o3);
}

#[test]
fn mlp_baseline_structure() {
    let spec = ModelSpec::mlp_baseline(48);
    let mut model = Model::<f32>::init(&spec, 0).unwrap();
    let mut first_dense = None;
    model.visit_params(|idx, p, _| {
        if idx == 0 {
            first_dense = Some(p.len());
        }
    });
    assert_eq!(first_dense, Some(48 * 2048));
    let shapes = spec.shape_chain().unwrap();
    let last = shapes.last().unwrap();
    assert_eq!(last.0 * last.1, 5);

    let preds = model.predict(&Array2::zeros((2, 48))).unwrap();
    for p in preds {
        assert!((p.probs.background - 1.0 / 3.0).abs() < 1e-6);
    }
}

#[test]
fn finite_values_after_training_steps() {
    let spec = tiny(vec![
        LayerSpec::Conv {
            kernel: 3,
            out_channels: 4,
        },
        LayerSpec::BatchNorm,
        LayerSpec::Relu,
        LayerSpec::Dense { units: 5 },
    ]);
    let mut model = Model::<f32>::init(&spec, 0).unwrap();
    let mut opt = AdaDelta::default_params();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for step in 0..20 {
        let input = Array2::from_shape_fn((8, 12), |_| rng.gen_range(-1.0f32..1.0));
        let targets = TargetBatch {
            class_idx: (0..8).map(|_| rng.gen_range(0..3)).collect(),
            offsets: (0..8).map(|_| (rng.gen_range(-0.5..0.5), 0.0)).collect(),
            mask: (0..8).map(|i| i % 2 == 0).collect(),
        };
        let (logits, offsets) = model.forward(&input, true).unwrap();
        let (loss, dl, doff) = loss_and_grads(&logits, &offsets, &targets);
        assert!(loss.is_finite(), "step {step}");
        model.backward(&dl, &doff);
        opt.step(&mut model);
    }
}
