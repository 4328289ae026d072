use super::*;
use crate::conditioning::{encode_age, encode_health, HealthState};
use ndarray::Array2;
use rand::{Rng, SeedableRng};

fn small_arch() -> ArchDescriptor {
    ArchDescriptor {
        latent_v1: 16,
        latent_v2: 65,
        enc_channels: [2, 4, 4, 4],
        encoding: EncodingScheme::Ordinal,
        embedding: EmbeddingStrategy::Transformer,
        judge_hidden: 8,
    }
}

fn random_slice(seed: u64) -> SliceImage {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let arr = Array2::from_shape_fn((SLICE_HEIGHT, SLICE_WIDTH), |_| rng.random_range(-1.0..1.0));
    SliceImage::new(arr).unwrap()
}

#[test]
fn init_is_deterministic_under_seed() {
    let arch = small_arch();
    let a: GeneratorParams<f32> = init_generator(&arch, 42).unwrap();
    let b: GeneratorParams<f32> = init_generator(&arch, 42).unwrap();
    assert_eq!(a, b);
    let c: GeneratorParams<f32> = init_generator(&arch, 43).unwrap();
    assert_ne!(a, c);

    let d: DiscriminatorParams<f32> = init_discriminator(&arch, 7).unwrap();
    let e: DiscriminatorParams<f32> = init_discriminator(&arch, 7).unwrap();
    assert_eq!(d, e);
}

#[test]
fn latent_sizes_follow_config() {
    for latent in SUPPORTED_LATENT_V2 {
        let arch = ArchDescriptor {
            latent_v2: latent,
            ..ArchDescriptor::default()
        };
        let gen: GeneratorParams<f32> = init_generator(&arch, 1).unwrap();
        let v2 = gen.v2_dense.as_ref().unwrap();
        assert_eq!(v2.w.shape(), &[arch.latent_v1 + 2, latent]);
        assert_eq!(
            gen.expand_dense.w.shape()[0],
            latent + arch.encoding.code_len()
        );
    }

    let bad = ArchDescriptor {
        latent_v2: 99,
        ..ArchDescriptor::default()
    };
    assert!(matches!(
        init_generator::<f32>(&bad, 1),
        Err(Error::Config(_))
    ));
}

#[test]
fn default_arch_v2_is_130_via_v1_plus_health() {
    // v1 (128) concatenated with the 2-bit health code gives the 130-wide
    // transformer input, matching the default v2 width.
    let arch = ArchDescriptor::default();
    assert_eq!(arch.latent_v1 + 2, 130);
    assert_eq!(arch.latent_v2, 130);
}

#[test]
fn generator_output_contract_at_random_init() {
    let arch = small_arch();
    let gen: GeneratorParams<f32> = init_generator(&arch, 3).unwrap();
    let x = random_slice(1);
    let ad = encode_age(25, EncodingScheme::Ordinal).unwrap();
    let h = encode_health(HealthState::Mci);
    let out = gen.synthesize(&x, &ad, &h).unwrap();
    assert_eq!(out.pixels().dim(), (SLICE_HEIGHT, SLICE_WIDTH));
    for &v in out.pixels().iter() {
        assert!(v.is_finite() && (-1.0..=1.0).contains(&v));
    }
}

#[test]
fn generator_rejects_wrong_code_length() {
    let arch = small_arch();
    let gen: GeneratorParams<f32> = init_generator(&arch, 3).unwrap();
    let x = random_slice(1);
    let ad = encode_age(25, EncodingScheme::Continuous).unwrap(); // length 1, not 100
    let h = encode_health(HealthState::Cn);
    assert!(matches!(
        gen.synthesize(&x, &ad, &h),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn zeroing_skips_changes_output() {
    let arch = small_arch();
    let gen: GeneratorParams<f32> = init_generator(&arch, 4).unwrap();
    let x = random_slice(2);
    let ad = encode_age(0, EncodingScheme::Ordinal).unwrap();
    let h = encode_health(HealthState::Cn);
    let sensitivity = gen.skip_sensitivity(&x, &ad, &h).unwrap();
    assert!(
        sensitivity > 1e-4,
        "skip ablation must change the output, got {sensitivity}"
    );
}

#[test]
fn conditioning_paths_are_live_at_init() {
    let arch = small_arch();
    let gen: GeneratorParams<f32> = init_generator(&arch, 5).unwrap();
    let disc: DiscriminatorParams<f32> = init_discriminator(&arch, 6).unwrap();
    let x = random_slice(3);
    let ad = encode_age(30, EncodingScheme::Ordinal).unwrap();
    let h = encode_health(HealthState::Ad);

    let (ga, gh) = gen.conditioning_gradient_norms(&x, &ad, &h).unwrap();
    assert!(ga > 0.0, "generator age path dead: {ga}");
    assert!(gh > 0.0, "generator health path dead: {gh}");

    let (da, dh) = disc.conditioning_gradient_norms(&x, &ad, &h).unwrap();
    assert!(da > 0.0, "critic age path dead: {da}");
    assert!(dh > 0.0, "critic health path dead: {dh}");
}

#[test]
fn concat_all_embedding_forward_works() {
    let arch = ArchDescriptor {
        embedding: EmbeddingStrategy::ConcatAll,
        ..small_arch()
    };
    let gen: GeneratorParams<f32> = init_generator(&arch, 8).unwrap();
    assert!(gen.v2_dense.is_none());
    let x = random_slice(4);
    let ad = encode_age(10, EncodingScheme::Ordinal).unwrap();
    let h = encode_health(HealthState::Cn);
    let out = gen.synthesize(&x, &ad, &h).unwrap();
    assert!(out.pixels().iter().all(|v| v.is_finite()));

    let disc: DiscriminatorParams<f32> = init_discriminator(&arch, 9).unwrap();
    let a = encode_age(70, EncodingScheme::Ordinal).unwrap();
    let scores = disc.score(&[&x], &[a], &[h]).unwrap();
    assert_eq!(scores.len(), 1);
    assert!(scores[0].is_finite());
}

#[test]
fn critic_scores_differ_across_health_codes() {
    let arch = small_arch();
    let disc: DiscriminatorParams<f32> = init_discriminator(&arch, 10).unwrap();
    let x = random_slice(5);
    let a = encode_age(70, EncodingScheme::Ordinal).unwrap();
    let s_cn = disc
        .score(&[&x], &[a.clone()], &[encode_health(HealthState::Cn)])
        .unwrap()[0];
    let s_ad = disc
        .score(&[&x], &[a], &[encode_health(HealthState::Ad)])
        .unwrap()[0];
    assert_ne!(s_cn, s_ad);
}

#[test]
fn generator_backprop_reaches_every_parameter() {
    let arch = small_arch();
    let gen: GeneratorParams<f64> = init_generator(&arch, 11).unwrap();
    let x = random_slice(6);
    let ad = encode_age(20, EncodingScheme::Ordinal).unwrap();
    let h = encode_health(HealthState::Mci);

    let mut tape = Tape::new();
    let bound = gen.bind(&mut tape, true);
    let xn = tape.constant(slices_to_batch::<f64>(&[&x]).into_dyn());
    let an = tape.constant(
        age_codes_to_batch::<f64>(std::slice::from_ref(&ad), gen.arch.age_len())
            .unwrap()
            .into_dyn(),
    );
    let hn = tape.constant(health_codes_to_batch::<f64>(&[h]).into_dyn());
    let out = generator_graph(&mut tape, &gen, &bound, xn, an, hn, GenForwardOpts::default());
    let root = tape.mean_all(out);
    let grads = tape.backward(root);

    for (id, (name, _)) in bound.ids.iter().zip(gen.tensors()) {
        let g = grads
            .get(*id)
            .unwrap_or_else(|| panic!("no gradient for {name}"));
        assert!(
            g.iter().all(|v| v.is_finite()),
            "non-finite gradient in {name}"
        );
    }
}

#[test]
fn discriminator_tangent_equals_directional_derivative() {
    // The tangent graph must reproduce u . grad_x D exactly; the gradient
    // penalty machinery depends on it.
    let arch = small_arch();
    let disc: DiscriminatorParams<f64> = init_discriminator(&arch, 12).unwrap();
    let x = random_slice(7);
    let a = encode_age(60, EncodingScheme::Ordinal).unwrap();
    let h = encode_health(HealthState::Mci);

    let (_, gx) = disc.score_and_input_grad(&x, &a, &h).unwrap();

    let mut rng = ChaCha12Rng::seed_from_u64(99);
    let u = Array4::from_shape_fn((1, 1, SLICE_HEIGHT, SLICE_WIDTH), |_| {
        rng.random_range(-1.0..1.0)
    });
    let expected: f64 = u
        .index_axis(ndarray::Axis(0), 0)
        .index_axis(ndarray::Axis(0), 0)
        .iter()
        .zip(gx.iter())
        .map(|(a, b)| a * b)
        .sum();

    let mut tape = Tape::new();
    let bound = disc.bind(&mut tape, true);
    let xn = tape.constant(slices_to_batch::<f64>(&[&x]).into_dyn());
    let an = tape.constant(
        age_codes_to_batch::<f64>(std::slice::from_ref(&a), disc.arch.age_len())
            .unwrap()
            .into_dyn(),
    );
    let hn = tape.constant(health_codes_to_batch::<f64>(&[h]).into_dyn());
    let trace = discriminator_graph(&mut tape, &disc, &bound, xn, an, hn);
    let tangent = discriminator_tangent_graph(&mut tape, &disc, &bound, &trace, u);
    let got = tape.value(tangent)[[0]];
    assert!(
        (got - expected).abs() <= 1e-9 * expected.abs().max(1.0),
        "tangent {got} vs directional derivative {expected}"
    );
}

#[test]
fn gradient_penalty_param_grads_match_finite_differences_on_real_critic() {
    // Spot-check d/d_theta of (||grad_x D|| - 1)^2 against central finite
    // differences for a sample of parameter elements in every tensor.
    let arch = ArchDescriptor {
        enc_channels: [2, 2, 2, 2],
        latent_v1: 8,
        latent_v2: 65,
        judge_hidden: 4,
        ..small_arch()
    };
    let disc: DiscriminatorParams<f64> = init_discriminator(&arch, 13).unwrap();
    let x = random_slice(8);
    let a = encode_age(55, EncodingScheme::Ordinal).unwrap();
    let h = encode_health(HealthState::Cn);

    let penalty_of = |d: &DiscriminatorParams<f64>| -> f64 {
        let (_, gx) = d.score_and_input_grad(&x, &a, &h).unwrap();
        let norm = gx.iter().map(|v| v * v).sum::<f64>().sqrt();
        (norm - 1.0) * (norm - 1.0)
    };

    // Analytic gradient via the tangent construction.
    let (_, gx) = disc.score_and_input_grad(&x, &a, &h).unwrap();
    let norm = gx.iter().map(|v| v * v).sum::<f64>().sqrt();
    let u = Array4::from_shape_fn((1, 1, SLICE_HEIGHT, SLICE_WIDTH), |(_, _, y, xx)| {
        gx[[y, xx]] / norm
    });
    let mut tape = Tape::new();
    let bound = disc.bind(&mut tape, true);
    let xn = tape.constant(slices_to_batch::<f64>(&[&x]).into_dyn());
    let an = tape.constant(
        age_codes_to_batch::<f64>(std::slice::from_ref(&a), disc.arch.age_len())
            .unwrap()
            .into_dyn(),
    );
    let hn = tape.constant(health_codes_to_batch::<f64>(&[h]).into_dyn());
    let trace = discriminator_graph(&mut tape, &disc, &bound, xn, an, hn);
    let tangent = discriminator_tangent_graph(&mut tape, &disc, &bound, &trace, u);
    let tgrads = tape.backward(tangent);
    let coeff = 2.0 * (norm - 1.0);

    let names: Vec<String> = disc.tensors().iter().map(|(n, _)| n.clone()).collect();
    let mut rng = ChaCha12Rng::seed_from_u64(123);
    let hstep = 1e-6;
    for (ti, id) in bound.ids.iter().enumerate() {
        let analytic = tgrads.get(*id).cloned();
        let len = disc.tensors()[ti].1.len();
        // Three random elements per tensor keeps this fast.
        for _ in 0..3 {
            let flat = rng.random_range(0..len);
            let a_val = analytic
                .as_ref()
                .map(|g| g.as_slice().unwrap()[flat] * coeff)
                .unwrap_or(0.0);
            let mut plus = disc.clone();
            plus.tensors_mut()[ti].as_slice_mut().unwrap()[flat] += hstep;
            let mut minus = disc.clone();
            minus.tensors_mut()[ti].as_slice_mut().unwrap()[flat] -= hstep;
            let numeric = (penalty_of(&plus) - penalty_of(&minus)) / (2.0 * hstep);
            let denom = a_val.abs().max(numeric.abs()).max(1e-4);
            assert!(
                (a_val - numeric).abs() / denom < 1e-3,
                "{} element {flat}: analytic {a_val} vs numeric {numeric}",
                names[ti]
            );
        }
    }
}
