//! Central finite-difference verification of the backward pass.
//!
//! This is a verification oracle: it only ever calls the forward pass and
//! compares the analytic gradients against `(L(p+h) - L(p-h)) / 2h` on a
//! random subset of parameters. Run it on `f64` models.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{get_grad_vector, get_param_vector, loss_and_grads, set_param_vector};
use super::{Model, ModelSpec, TargetBatch};

pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
}

/// Check `samples_per_tensor` randomly chosen parameters of every tensor.
/// All parameters are re-randomized first so zero-initialized output layers
/// do not mask upstream gradients.
pub fn gradient_check(
    spec: &ModelSpec,
    batch: usize,
    seed: u64,
    samples_per_tensor: usize,
    step: f64,
) -> GradCheckReport {
    let mut model = Model::<f64>::init(spec, seed).expect("valid spec");
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));

    model.visit_params(|_, p, _| {
        for v in p.iter_mut() {
            *v = rng.gen_range(-0.3..0.3);
        }
    });

    let input = Array2::from_shape_fn((batch, spec.input_len), |_| rng.gen_range(-1.0..1.0));
    let targets = TargetBatch {
        class_idx: (0..batch).map(|_| rng.gen_range(0..spec.classes)).collect(),
        offsets: (0..batch)
            .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect(),
        // Keep at least one example masked in so the regression term is live.
        mask: (0..batch).map(|i| i == 0 || rng.gen_bool(0.5)).collect(),
    };

    // Dropout masks must be identical across evaluations, so the model rng is
    // reseeded before every forward pass.
    let dropout_seed = 0xfeed;
    let eval = |model: &mut Model<f64>| -> f64 {
        model.set_rng_seed(dropout_seed);
        let (logits, offsets) = model.forward(&input, true).unwrap();
        loss_and_grads(&logits, &offsets, &targets).0
    };

    model.set_rng_seed(dropout_seed);
    let (logits, offsets) = model.forward(&input, true).unwrap();
    let (_, dlogits, doffsets) = loss_and_grads(&logits, &offsets, &targets);
    model.backward(&dlogits, &doffsets);
    let analytic = get_grad_vector(&mut model);
    let base = get_param_vector(&mut model);

    // Pick sample indices per tensor.
    let mut tensor_ranges = Vec::new();
    let mut off = 0;
    model.visit_params(|_, p, _| {
        tensor_ranges.push((off, p.len()));
        off += p.len();
    });
    let mut indices = Vec::new();
    for (start, len) in tensor_ranges {
        for _ in 0..samples_per_tensor.min(len) {
            indices.push(start + rng.gen_range(0..len));
        }
    }

    let mut max_rel = 0.0f64;
    for &i in &indices {
        let mut p = base.clone();
        p[i] = base[i] + step;
        set_param_vector(&mut model, &p);
        let lp = eval(&mut model);
        p[i] = base[i] - step;
        set_param_vector(&mut model, &p);
        let lm = eval(&mut model);
        let numeric = (lp - lm) / (2.0 * step);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
        max_rel = max_rel.max(rel);
    }
    set_param_vector(&mut model, &base);
    GradCheckReport {
        max_rel_error: max_rel,
        checked: indices.len(),
    }
}
