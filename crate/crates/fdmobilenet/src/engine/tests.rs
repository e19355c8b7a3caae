use rand::Rng;

use super::*;
use crate::arch::{build_fd_mobilenet, ArchitectureSpec, LayerKind, LayerSpec};
use crate::ops::tests::{max_abs_diff, rand_tensor, rng};
use crate::ops::{BnParams, ConvWeights, FcWeights};
use crate::tensor::Shape;

/// Small hand-built chain on a 16x16 input: stem conv, two separable
/// blocks, classifier. Exercises every layer kind away from the 224-pixel
/// defaults.
fn tiny_spec() -> ArchitectureSpec {
    let conv = |c_in, c_out, stride| LayerSpec {
        kind: LayerKind::Conv,
        c_in,
        c_out,
        kernel: 3,
        stride,
        pad: 1,
    };
    let dw = |c, stride| LayerSpec {
        kind: LayerKind::DepthwiseConv,
        c_in: c,
        c_out: c,
        kernel: 3,
        stride,
        pad: 1,
    };
    let pw = |c_in, c_out| LayerSpec {
        kind: LayerKind::PointwiseConv,
        c_in,
        c_out,
        kernel: 1,
        stride: 1,
        pad: 0,
    };
    let keep = |kind, c| LayerSpec {
        kind,
        c_in: c,
        c_out: c,
        kernel: 1,
        stride: 1,
        pad: 0,
    };
    let mut layers = vec![conv(3, 4, 2)];
    layers.push(keep(LayerKind::BatchNorm, 4));
    layers.push(keep(LayerKind::Relu, 4));
    for (c_in, c_out, stride) in [(4, 6, 2), (6, 8, 1)] {
        layers.push(dw(c_in, stride));
        layers.push(keep(LayerKind::BatchNorm, c_in));
        layers.push(keep(LayerKind::Relu, c_in));
        layers.push(pw(c_in, c_out));
        layers.push(keep(LayerKind::BatchNorm, c_out));
        layers.push(keep(LayerKind::Relu, c_out));
    }
    layers.push(LayerSpec {
        kind: LayerKind::GlobalAvgPool,
        c_in: 8,
        c_out: 8,
        kernel: 0,
        stride: 1,
        pad: 0,
    });
    layers.push(LayerSpec {
        kind: LayerKind::Fc,
        c_in: 8,
        c_out: 5,
        kernel: 1,
        stride: 1,
        pad: 0,
    });
    layers.push(keep(LayerKind::Softmax, 5));
    let spec = ArchitectureSpec {
        name: "tiny".into(),
        alpha: 1.0,
        input: Shape::new(1, 3, 16, 16).unwrap(),
        layers,
    };
    spec.validate().unwrap();
    spec
}

/// Replace every identity batch norm with random statistics so folding
/// actually has something to do.
fn randomize_bn(spec: &ArchitectureSpec, store: &mut WeightStore, seed: u64) {
    let mut r = rng(seed);
    for (index, layer) in spec.layers.iter().enumerate() {
        if layer.kind != LayerKind::BatchNorm {
            continue;
        }
        let c = layer.c_out;
        let draw = |r: &mut rand_chacha::ChaCha8Rng, lo: f32, hi: f32| {
            (0..c).map(|_| r.gen_range(lo..hi)).collect::<Vec<f32>>()
        };
        let p = BnParams::new(
            draw(&mut r, 0.5, 1.5),
            draw(&mut r, -0.5, 0.5),
            draw(&mut r, -0.5, 0.5),
            draw(&mut r, 0.5, 2.0),
            crate::ops::DEFAULT_BN_EPSILON,
        )
        .unwrap();
        store.set(index, LayerWeights::BatchNorm(p));
    }
}

/// All-zero filters with identity batch norms: every logit comes out 0.
fn zero_weights(spec: &ArchitectureSpec) -> WeightStore {
    let mut store = WeightStore::new();
    for (index, layer) in spec.layers.iter().enumerate() {
        let k2 = layer.kernel * layer.kernel;
        let entry = match layer.kind {
            LayerKind::Conv => LayerWeights::Conv(
                ConvWeights::standard(layer.c_out, layer.c_in, layer.kernel, vec![0.0; layer.c_out * layer.c_in * k2], None).unwrap(),
            ),
            LayerKind::DepthwiseConv => LayerWeights::Depthwise(
                ConvWeights::depthwise(layer.c_out, layer.kernel, vec![0.0; layer.c_out * k2], None).unwrap(),
            ),
            LayerKind::PointwiseConv => LayerWeights::Pointwise(
                ConvWeights::standard(layer.c_out, layer.c_in, 1, vec![0.0; layer.c_out * layer.c_in], None).unwrap(),
            ),
            LayerKind::BatchNorm => LayerWeights::BatchNorm(BnParams::identity(layer.c_out)),
            LayerKind::Fc => LayerWeights::Fc(
                FcWeights::new(layer.c_out, layer.c_in, vec![0.0; layer.c_out * layer.c_in], vec![0.0; layer.c_out]).unwrap(),
            ),
            _ => continue,
        };
        store.insert(index, entry).unwrap();
    }
    store
}

fn unit_input(spec: &ArchitectureSpec, seed: u64) -> crate::tensor::Tensor {
    let t = rand_tensor(&mut rng(seed), spec.input);
    let data = t.data().iter().map(|v| (v + 1.0) / 2.0).collect();
    crate::tensor::Tensor::new(spec.input, data).unwrap()
}

#[test]
fn engine_runs_and_outputs_probabilities() {
    let spec = build_fd_mobilenet(0.25).unwrap();
    let store = init_random_weights(&spec, 7);
    let engine = Engine::compile(&spec, &store).unwrap();
    let out = engine.infer(&unit_input(&spec, 1)).unwrap();
    assert_eq!(out.shape(), Shape::new(1, 1000, 1, 1).unwrap());
    assert!(out.data().iter().all(|&p| p >= 0.0));
    let sum: f64 = out.data().iter().map(|&p| p as f64).sum();
    assert!((sum - 1.0).abs() <= 1e-5, "sum = {sum}");
}

#[test]
fn zero_weights_give_uniform_probabilities() {
    let spec = build_fd_mobilenet(0.25).unwrap();
    let engine = Engine::compile(&spec, &zero_weights(&spec)).unwrap();
    let out = engine.infer(&unit_input(&spec, 2)).unwrap();
    for &p in out.data() {
        assert!((p - 0.001).abs() <= 1e-9);
    }
}

#[test]
fn fused_matches_layerwise_on_tiny_chain() {
    let spec = tiny_spec();
    let mut store = init_random_weights(&spec, 11);
    randomize_bn(&spec, &mut store, 12);
    let engine = Engine::compile(&spec, &store).unwrap();
    let input = unit_input(&spec, 3);
    let fused = engine.infer(&input).unwrap();
    let layered = forward_layerwise(&spec, &store, &input).unwrap();
    assert!(max_abs_diff(&fused, &layered) <= 1e-4);
}

#[test]
fn fused_matches_layerwise_on_fd_mobilenet() {
    let spec = build_fd_mobilenet(0.25).unwrap();
    let mut store = init_random_weights(&spec, 21);
    randomize_bn(&spec, &mut store, 22);
    let engine = Engine::compile(&spec, &store).unwrap();
    let input = unit_input(&spec, 4);
    let fused = engine.infer(&input).unwrap();
    let layered = forward_layerwise(&spec, &store, &input).unwrap();
    assert!(max_abs_diff(&fused, &layered) <= 1e-4);
}

#[test]
fn logits_and_probabilities_are_consistent() {
    let spec = tiny_spec();
    let store = init_random_weights(&spec, 31);
    let engine = Engine::compile(&spec, &store).unwrap();
    let input = unit_input(&spec, 5);
    let logits = engine.infer_logits(&input).unwrap();
    let probs = engine.infer(&input).unwrap();
    let via_softmax = crate::ops::softmax(&logits);
    assert!(max_abs_diff(&probs, &via_softmax) <= 1e-6);
    assert!(logits.data().iter().any(|&v| v < 0.0 || v > 1.0) || logits.data() != probs.data());
}

#[test]
fn inference_is_deterministic() {
    let spec = build_fd_mobilenet(0.25).unwrap();
    let store = init_random_weights(&spec, 9);
    let input = unit_input(&spec, 6);
    let a = Engine::compile(&spec, &store).unwrap().infer(&input).unwrap();
    let b = Engine::compile(&spec, &store).unwrap().infer(&input).unwrap();
    assert_eq!(a.data(), b.data());
}

#[test]
fn parallel_inference_is_bit_identical() {
    let spec = build_fd_mobilenet(0.25).unwrap();
    let store = init_random_weights(&spec, 13);
    let input = unit_input(&spec, 7);
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        pool.install(|| {
            Engine::compile(&spec, &store)
                .unwrap()
                .infer(&input)
                .unwrap()
        })
    };
    assert_eq!(run(1).data(), run(4).data());
}

#[test]
fn memory_plan_sizes_fd_mobilenet_1x() {
    // Largest activation: the 32-channel 112x112 stem output.
    let plan = plan_memory(&build_fd_mobilenet(1.0).unwrap()).unwrap();
    assert_eq!(plan.buffers, 2);
    assert_eq!(plan.buffer_numel, 32 * 112 * 112);
    assert_eq!(plan.buffer_bytes, 1_605_632);
    // Patch matrix of the stem conv: 3 channels x 3x3 taps x 112x112 sites.
    assert_eq!(plan.scratch_numel, 27 * 112 * 112);
    for (i, &b) in plan.assignment.iter().enumerate() {
        assert_eq!(b, 1 - i % 2);
    }
}

#[test]
fn memory_plan_dominated_by_input_at_low_width() {
    // At width 0.25 the stem output shrinks below the input image.
    let plan = plan_memory(&build_fd_mobilenet(0.25).unwrap()).unwrap();
    assert_eq!(plan.buffer_numel, 3 * 224 * 224);
    assert_eq!(plan.buffer_bytes, 602_112);
}

#[test]
fn run_stats_match_the_plan() {
    for spec in [tiny_spec(), build_fd_mobilenet(0.25).unwrap()] {
        let store = init_random_weights(&spec, 17);
        let engine = Engine::compile(&spec, &store).unwrap();
        let (_, stats) = engine.infer_with_stats(&unit_input(&spec, 8)).unwrap();
        assert_eq!(stats.activation_buffers, 2);
        assert_eq!(stats.activation_bytes, 2 * engine.plan().buffer_bytes);
        assert_eq!(stats.scratch_bytes, engine.plan().scratch_bytes);
    }
}

#[test]
fn tiny_chain_plan_by_hand() {
    let plan = plan_memory(&tiny_spec()).unwrap();
    assert_eq!(plan.buffer_numel, 3 * 16 * 16); // input is the largest tensor
    assert_eq!(plan.scratch_numel, 27 * 8 * 8);
    assert_eq!(plan.assignment.len(), 13); // 18 layers minus 5 batch norms
}

#[test]
fn rejects_batched_input() {
    let mut spec = build_fd_mobilenet(0.25).unwrap();
    spec.input = Shape::new(2, 3, 224, 224).unwrap();
    let store = init_random_weights(&spec, 1);
    assert!(matches!(
        Engine::compile(&spec, &store),
        Err(EngineError::UnsupportedBatch(2))
    ));
}

#[test]
fn rejects_wrong_input_shape() {
    let spec = tiny_spec();
    let engine = Engine::compile(&spec, &init_random_weights(&spec, 1)).unwrap();
    let bad = crate::tensor::Tensor::zeros(Shape::new(1, 3, 8, 8).unwrap());
    assert!(matches!(
        engine.infer(&bad),
        Err(EngineError::BadInputShape { .. })
    ));
}

#[test]
fn detects_missing_weights() {
    let spec = tiny_spec();
    let mut store = init_random_weights(&spec, 1);
    store.remove(0);
    assert!(matches!(
        Engine::compile(&spec, &store),
        Err(EngineError::MissingWeights { index: 0, .. })
    ));
}

#[test]
fn detects_stray_weights() {
    let spec = tiny_spec();
    let mut store = init_random_weights(&spec, 1);
    store.set(2, LayerWeights::BatchNorm(BnParams::identity(4))); // layer 2 is a ReLU
    assert!(matches!(
        Engine::compile(&spec, &store),
        Err(EngineError::UnusedWeights(2))
    ));
}

#[test]
fn detects_kind_mismatch() {
    let spec = tiny_spec();
    let mut store = init_random_weights(&spec, 1);
    let stem = store.get(0).unwrap().clone();
    store.set(3, stem); // layer 3 is the first depthwise conv
    assert!(matches!(
        Engine::compile(&spec, &store),
        Err(EngineError::WeightMismatch { index: 3, .. })
    ));
}

#[test]
fn detects_unfoldable_batch_norm() {
    let mut spec = tiny_spec();
    // A batch norm right after a ReLU has no convolution to fold into.
    spec.layers.insert(
        3,
        LayerSpec {
            kind: LayerKind::BatchNorm,
            c_in: 4,
            c_out: 4,
            kernel: 1,
            stride: 1,
            pad: 0,
        },
    );
    spec.validate().unwrap();
    let store = init_random_weights(&spec, 1);
    assert!(matches!(
        Engine::compile(&spec, &store),
        Err(EngineError::UnfoldableBatchNorm { index: 3 })
    ));
}

#[test]
fn weight_store_round_trips_bit_exact() {
    let spec = build_fd_mobilenet(0.125).unwrap();
    let mut store = init_random_weights(&spec, 99);
    randomize_bn(&spec, &mut store, 100);
    let bytes = store.to_bytes();
    assert_eq!(WeightStore::from_bytes(&bytes).unwrap(), store);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("weights.fdw");
    store.save(&path).unwrap();
    assert_eq!(WeightStore::load(&path).unwrap(), store);
}

#[test]
fn weight_store_rejects_corruption() {
    let spec = tiny_spec();
    let bytes = init_random_weights(&spec, 5).to_bytes();

    let mut bad_magic = bytes.clone();
    bad_magic[..4].copy_from_slice(b"FDXX");
    assert!(matches!(
        WeightStore::from_bytes(&bad_magic),
        Err(WeightError::BadMagic)
    ));

    let mut bad_tag = bytes.clone();
    bad_tag[12] = 9; // tag byte of the first entry
    assert!(matches!(
        WeightStore::from_bytes(&bad_tag),
        Err(WeightError::UnknownTag(9))
    ));

    assert!(matches!(
        WeightStore::from_bytes(&bytes[..bytes.len() - 2]),
        Err(WeightError::Truncated)
    ));

    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(
        WeightStore::from_bytes(&trailing),
        Err(WeightError::TrailingBytes)
    ));
}

#[test]
fn conv_bias_is_not_serializable() {
    let mut store = WeightStore::new();
    let w = ConvWeights::standard(1, 1, 1, vec![1.0], Some(vec![0.5])).unwrap();
    store.insert(0, LayerWeights::Conv(w)).unwrap();
    assert!(matches!(
        WeightStore::from_bytes(&[]).err(),
        Some(WeightError::Truncated)
    ));
    let mut sink = Vec::new();
    assert!(matches!(
        store.write_to(&mut sink),
        Err(WeightError::UnsupportedBias)
    ));
}

#[test]
fn random_init_is_seed_deterministic() {
    let spec = tiny_spec();
    assert_eq!(init_random_weights(&spec, 42), init_random_weights(&spec, 42));
    assert_ne!(init_random_weights(&spec, 42), init_random_weights(&spec, 43));
}

#[test]
fn random_init_covers_exactly_the_weighted_and_bn_layers() {
    let spec = tiny_spec();
    let store = init_random_weights(&spec, 1);
    let expected: Vec<usize> = spec
        .layers
        .iter()
        .enumerate()
        .filter(|(_, l)| l.kind.is_weighted() || l.kind == LayerKind::BatchNorm)
        .map(|(i, _)| i)
        .collect();
    assert_eq!(store.layer_indices().collect::<Vec<_>>(), expected);
}

#[test]
fn resize_to_same_size_is_identity() {
    let img = rand_tensor(&mut rng(50), Shape::new(1, 3, 9, 13).unwrap());
    let out = resize_bilinear(&img, 9, 13).unwrap();
    assert_eq!(out.data(), img.data());
}

#[test]
fn resize_doubles_a_two_pixel_row() {
    // Half-pixel centers: [0, 100] -> [0, 25, 75, 100].
    let img = crate::tensor::Tensor::new(
        Shape::new(1, 1, 1, 2).unwrap(),
        vec![0.0, 100.0],
    )
    .unwrap();
    let out = resize_bilinear(&img, 1, 4).unwrap();
    let got: Vec<f32> = out.data().to_vec();
    assert_eq!(got, vec![0.0, 25.0, 75.0, 100.0]);
}

#[test]
fn resize_preserves_constant_images() {
    let img = crate::tensor::Tensor::filled(Shape::new(1, 3, 10, 14).unwrap(), 77.0);
    let out = resize_bilinear(&img, 23, 5).unwrap();
    for &v in out.data() {
        assert!((v - 77.0).abs() <= 1e-4);
    }
}

#[test]
fn center_crop_takes_the_middle_window() {
    // Encode coordinates in the pixel values to pin the crop offset.
    let (h, w) = (256usize, 256usize);
    let data: Vec<f32> = (0..h * w).map(|i| ((i / w) * 1000 + i % w) as f32).collect();
    let img = crate::tensor::Tensor::new(Shape::new(1, 1, h, w).unwrap(), data).unwrap();
    let out = center_crop(&img, 224).unwrap();
    assert_eq!(out.at(0, 0, 0, 0), 16_016.0); // row 16, col 16
    assert_eq!(out.at(0, 0, 223, 223), 239_239.0); // row 239, col 239
}

#[test]
fn center_crop_rejects_small_images() {
    let img = crate::tensor::Tensor::zeros(Shape::new(1, 3, 100, 300).unwrap());
    assert!(matches!(
        center_crop(&img, 224),
        Err(EngineError::CropTooLarge { crop: 224, h: 100, w: 300 })
    ));
}

#[test]
fn preprocess_scales_aspect_then_crops() {
    // 384x512 landscape: the short side becomes 256, the long side
    // 512 * 256/384 = 341.33 rounds to 341, then the center 224x224 is cut.
    let img = rand_tensor(&mut rng(51), Shape::new(1, 3, 384, 512).unwrap());
    let img = crate::tensor::Tensor::new(
        img.shape(),
        img.data().iter().map(|v| (v + 1.0) * 127.5).collect(),
    )
    .unwrap();
    let out = preprocess(&img, 256, 224).unwrap();
    assert_eq!(out.shape(), Shape::new(1, 3, 224, 224).unwrap());

    let resized = resize_bilinear(&img, 256, 341).unwrap();
    let cropped = center_crop(&resized, 224).unwrap();
    for (a, b) in out.data().iter().zip(cropped.data()) {
        assert!((a - b / 255.0).abs() <= 1e-6);
    }
}

#[test]
fn preprocess_portrait_orientation() {
    let img = crate::tensor::Tensor::filled(Shape::new(1, 3, 512, 384).unwrap(), 255.0);
    let out = preprocess(&img, 256, 224).unwrap();
    assert_eq!(out.shape(), Shape::new(1, 3, 224, 224).unwrap());
    for &v in out.data() {
        assert!((v - 1.0).abs() <= 1e-5);
    }
}

#[test]
fn preprocess_maps_full_intensity_to_one() {
    let img = crate::tensor::Tensor::filled(Shape::new(1, 3, 256, 256).unwrap(), 127.5);
    let out = preprocess(&img, 256, 224).unwrap();
    for &v in out.data() {
        assert!((v - 0.5).abs() <= 1e-6);
    }
}

#[test]
fn normalize_applies_per_channel_affine() {
    let img = crate::tensor::Tensor::new(
        Shape::new(1, 2, 1, 2).unwrap(),
        vec![0.5, 0.7, 0.2, 0.4],
    )
    .unwrap();
    let out = normalize(&img, &[0.5, 0.2], &[0.25, 0.1]).unwrap();
    let want = [0.0, 0.8, 0.0, 2.0];
    for (a, b) in out.data().iter().zip(want) {
        assert!((a - b).abs() <= 1e-6);
    }
}

#[test]
fn normalize_rejects_bad_parameters() {
    let img = crate::tensor::Tensor::zeros(Shape::new(1, 3, 2, 2).unwrap());
    assert!(matches!(
        normalize(&img, &[0.0; 2], &[1.0; 3]),
        Err(EngineError::BadNormalization { .. })
    ));
    assert!(matches!(
        normalize(&img, &[0.0; 3], &[1.0, 0.0, 1.0]),
        Err(EngineError::ZeroStd { channel: 1 })
    ));
}

#[test]
fn ppm_decodes_pixels_into_channel_planes() {
    let bytes = b"P6\n# test card\n2 1\n255\n\x0a\x14\x1e\x28\x32\x3c";
    let img = decode_ppm(bytes).unwrap();
    assert_eq!(img.shape(), Shape::new(1, 3, 1, 2).unwrap());
    assert_eq!(img.data(), &[10.0, 40.0, 20.0, 50.0, 30.0, 60.0]);
}

#[test]
fn ppm_round_trips_through_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("img.ppm");
    std::fs::write(&path, b"P6 1 2 255 \x01\x02\x03\x04\x05\x06").unwrap();
    let img = read_ppm(&path).unwrap();
    assert_eq!(img.shape(), Shape::new(1, 3, 2, 1).unwrap());
    assert_eq!(img.data(), &[1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
}

#[test]
fn ppm_rejects_malformed_input() {
    assert!(matches!(decode_ppm(b"P5 1 1 255 \x00"), Err(PpmError::BadMagic)));
    assert!(matches!(
        decode_ppm(b"P6 1 1 65535 \x00\x00\x00"),
        Err(PpmError::UnsupportedMaxval(65535))
    ));
    assert!(matches!(
        decode_ppm(b"P6 2 2 255 \x00\x00\x00"),
        Err(PpmError::Truncated { .. })
    ));
    assert!(matches!(decode_ppm(b"P6 2"), Err(PpmError::BadHeader(_))));
}
