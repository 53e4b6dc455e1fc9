use fnr_core::data::{Batch, Label};
use fnr_core::gradcheck::finite_diff_check;
use fnr_core::model::{
    classification_loss, forward_pass, predict, ClassWeights, ClassifierParams, FnrParams, Mode,
    ModelConfig, ProjectorParams,
};
use fnr_core::tensor::Tensor2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Binary entropy of softmax([1, 0]), to 1e-3 as usually quoted.
const ENTROPY_OF_SOFTMAX_1_0: f64 = 0.582208;

fn entropy_of_softmax_1_0() -> f64 {
    let p = 1.0 / (1.0 + (-1.0f64).exp());
    -(p * p.ln() + (1.0 - p) * (1.0 - p).ln())
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor2<f64> {
    Tensor2::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn random_batch(b: usize, d: usize, seed: u64) -> Batch<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Batch {
        text: normal_matrix(b, d, &mut rng),
        image: normal_matrix(b, d, &mut rng),
        labels: (0..b).map(|i| (i * 7 + 3) % 5 % 2).collect(),
        indices: (0..b).collect(),
    }
}

fn cfg(mode: Mode, k: usize, hidden: usize, lambda: f64) -> ModelConfig {
    ModelConfig {
        k,
        hidden,
        lambda,
        mode,
        ..ModelConfig::default()
    }
}

/// Projector that returns its input: `w1 = I`, everything else zero.
fn identity_projector(d: usize) -> ProjectorParams<f64> {
    let mut p = ProjectorParams::zeros(d, d);
    p.w1 = Tensor2::identity(d);
    p
}

fn identity_fixture() -> (Batch<f64>, FnrParams<f64>) {
    let batch = Batch {
        text: Tensor2::identity(2),
        image: Tensor2::identity(2),
        labels: vec![0, 1],
        indices: vec![0, 1],
    };
    let params = FnrParams {
        text: identity_projector(2),
        image: identity_projector(2),
        classifier: ClassifierParams::zeros(2, 3),
    };
    (batch, params)
}

#[test]
fn identity_features_give_entropy_and_uniform_classifier() {
    let (batch, params) = identity_fixture();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pass = forward_pass(
        &batch,
        &params,
        &cfg(Mode::FusedS, 2, 3, 1.0),
        ClassWeights::uniform(),
        false,
        &mut rng,
    )
    .unwrap();
    let b = pass.breakdown;
    for v in [b.l_t, b.l_i, b.l_s] {
        assert!((v - ENTROPY_OF_SOFTMAX_1_0).abs() < 1e-3, "{v}");
        assert!((v - entropy_of_softmax_1_0()).abs() < 1e-12, "{v}");
    }
    assert!((b.l_c - std::f64::consts::LN_2).abs() < 1e-12);
    assert!((b.total - (b.l_c + b.l_s)).abs() < 1e-15);
}

#[test]
fn total_is_affine_in_lambda() {
    let batch = random_batch(6, 5, 1);
    let params = FnrParams::<f64>::init(
        5,
        &cfg(Mode::FusedS, 4, 4, 1.0),
        &mut ChaCha8Rng::seed_from_u64(2),
    );
    let weights = ClassWeights::from_alpha(1.7, Label::Fake).unwrap();
    let at = |lambda: f64| {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        forward_pass(
            &batch,
            &params,
            &cfg(Mode::FusedS, 4, 4, lambda),
            weights,
            true,
            &mut rng,
        )
        .unwrap()
        .breakdown
    };
    let (b0, b1, b2) = (at(0.0), at(1.0), at(2.0));
    assert_eq!(b0.l_s, b1.l_s);
    assert!((b1.total - b0.total - b1.l_s).abs() < 1e-9);
    assert!((b2.total - b0.total - 2.0 * b1.l_s).abs() < 1e-9);
}

#[test]
fn forward_is_deterministic_for_a_seed() {
    let batch = random_batch(8, 6, 4);
    let c = cfg(Mode::FusedS, 3, 5, 1.0);
    let params = FnrParams::<f64>::init(6, &c, &mut ChaCha8Rng::seed_from_u64(5));
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let pass =
            forward_pass(&batch, &params, &c, ClassWeights::uniform(), true, &mut rng).unwrap();
        (pass.breakdown, pass.gradients().unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn single_modality_modes_leave_the_other_projector_untouched() {
    let batch = random_batch(6, 4, 7);
    for (mode, unused_text) in [(Mode::TextOnly, false), (Mode::ImageOnly, true)] {
        let c = cfg(mode, 3, 4, 1.0);
        let params = FnrParams::<f64>::init(4, &c, &mut ChaCha8Rng::seed_from_u64(8));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pass =
            forward_pass(&batch, &params, &c, ClassWeights::uniform(), true, &mut rng).unwrap();
        assert_eq!(pass.breakdown.l_s, 0.0);
        let grads = pass.gradients().unwrap();
        let (unused, used) = if unused_text {
            (&grads.text, &grads.image)
        } else {
            (&grads.image, &grads.text)
        };
        for t in [&unused.w1, &unused.b1, &unused.w2, &unused.b2] {
            assert!(t.data().iter().all(|&g| g == 0.0), "{mode}");
        }
        assert!(used.w1.data().iter().any(|&g| g != 0.0));
        // Rows of w5 that read the zeroed block get no gradient either.
        let rows = if unused_text { 0..3 } else { 3..6 };
        for r in rows {
            assert!(grads.classifier.w5.row(r).iter().all(|&g| g == 0.0));
        }
    }
}

#[test]
fn every_mode_passes_the_gradient_check() {
    let batch = random_batch(5, 6, 10);
    let weights = ClassWeights::from_alpha(1.3, Label::Real).unwrap();
    for mode in Mode::ALL {
        let c = cfg(mode, 3, 4, 0.7);
        let params = FnrParams::<f64>::init(6, &c, &mut ChaCha8Rng::seed_from_u64(11));
        let loss = |p: &FnrParams<f64>| {
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            forward_pass(&batch, p, &c, weights, false, &mut rng).map(|f| f.breakdown.total)
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let analytic: Vec<Tensor2<f64>> =
            forward_pass(&batch, &params, &c, weights, false, &mut rng)
                .unwrap()
                .gradients()
                .unwrap()
                .tensors()
                .into_iter()
                .cloned()
                .collect();
        let named: Vec<(String, Tensor2<f64>)> = params
            .named()
            .into_iter()
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        // Unused-projector entries are exactly zero on both sides.
        let report = finite_diff_check(
            |ts| loss(&FnrParams::from_tensors(ts.to_vec())?),
            &named,
            &analytic,
            1e-6,
            1e-5,
        )
        .unwrap();
        assert!(report.passed(), "{mode}: {:?}", report.worst);
    }
}

#[test]
fn cross_entropy_matches_hand_oracle_at_unit_alpha() {
    let batch = random_batch(8, 4, 12);
    let c = cfg(Mode::FusedWs, 3, 4, 1.0);
    let params = FnrParams::<f64>::init(4, &c, &mut ChaCha8Rng::seed_from_u64(13));
    let probs = predict(&params, c.mode, &batch.text, &batch.image).unwrap();
    let oracle = -(0..8)
        .map(|i| probs.get(i, batch.labels[i]).ln())
        .sum::<f64>()
        / 8.0;
    let got = classification_loss(&probs, &batch.labels, ClassWeights::uniform()).unwrap();
    assert!((got - oracle).abs() < 1e-12);

    // Weighting: alpha on the minority class only.
    let alpha = 2.5;
    let weighted = -(0..8)
        .map(|i| {
            let w = if batch.labels[i] == Label::Real.index() {
                alpha
            } else {
                1.0
            };
            w * probs.get(i, batch.labels[i]).ln()
        })
        .sum::<f64>()
        / 8.0;
    let got = classification_loss(
        &probs,
        &batch.labels,
        ClassWeights::from_alpha(alpha, Label::Real).unwrap(),
    )
    .unwrap();
    assert!((got - weighted).abs() < 1e-12);
}

#[test]
fn evaluation_forward_matches_loss_forward() {
    let batch = random_batch(7, 5, 14);
    let c = cfg(Mode::FusedS, 4, 6, 1.0);
    let params = FnrParams::<f64>::init(5, &c, &mut ChaCha8Rng::seed_from_u64(15));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let pass = forward_pass(
        &batch,
        &params,
        &c,
        ClassWeights::uniform(),
        false,
        &mut rng,
    )
    .unwrap();
    let probs = predict(&params, c.mode, &batch.text, &batch.image).unwrap();
    assert_eq!(pass.probs(), &probs);
}

#[test]
fn single_precision_tracks_double_precision() {
    let batch = random_batch(6, 8, 16);
    let c = cfg(Mode::FusedS, 4, 4, 1.0);
    let params = FnrParams::<f64>::init(8, &c, &mut ChaCha8Rng::seed_from_u64(17));
    let p32 = params.cast::<f32>();
    let batch32 = Batch {
        text: batch.text.cast::<f32>(),
        image: batch.image.cast::<f32>(),
        labels: batch.labels.clone(),
        indices: batch.indices.clone(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let hi = forward_pass(
        &batch,
        &params,
        &c,
        ClassWeights::uniform(),
        false,
        &mut rng,
    )
    .unwrap()
    .breakdown;
    let lo = forward_pass(&batch32, &p32, &c, ClassWeights::uniform(), false, &mut rng)
        .unwrap()
        .breakdown;
    assert!(
        (hi.total - lo.total).abs() < 1e-5,
        "{} vs {}",
        hi.total,
        lo.total
    );
}
