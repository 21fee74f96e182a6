mod common;

use common::rng;
use rand::Rng;
use roadfuse::network::{
    architecture, build_model, model_forward, trace_architecture, FusionStrategy, Graph, LayerKind,
    ModelParams, NetConfig, ParamInit,
};
use roadfuse::tensor::Tensor;

#[test]
fn layer_shapes_and_parameter_counts() {
    let siamese = architecture(&NetConfig::paper(FusionStrategy::Siamese)).unwrap();
    let fuse4 = siamese.iter().find(|l| l.name == "FuseConv4").unwrap();
    assert_eq!(fuse4.weight_shape(), [512, 1024, 3, 3]);
    assert_eq!(fuse4.param_count(), 512 * 1024 * 9 + 512);

    let early = architecture(&NetConfig::paper(FusionStrategy::Early)).unwrap();
    assert_eq!(early[0].name, "Conv1_1");
    assert_eq!(early[0].weight_shape(), [64, 6, 3, 3]);

    let tiny = architecture(&NetConfig::tiny(FusionStrategy::Siamese)).unwrap();
    for (g, c) in [(1, 8), (2, 16), (3, 32), (4, 64), (5, 64)] {
        let fuse = tiny.iter().find(|l| l.name == format!("FuseConv{g}")).unwrap();
        assert_eq!(fuse.weight_shape(), [c, 2 * c, 3, 3]);
    }
}

/// Closed-form parameter count of the full-size Siamese network.
#[test]
fn siamese_parameter_total() {
    let conv = |k: usize, ci: usize, co: usize| k * k * ci * co + co;
    let channels = [64, 128, 256, 512, 512];
    let depth = [2, 2, 3, 3, 3];
    let mut total = 0;
    let mut c_in = 3;
    for g in 0..5 {
        let c = channels[g];
        let branch = conv(3, c_in, c) + (depth[g] - 1) * conv(3, c, c);
        total += 2 * branch + conv(3, 2 * c, c);
        c_in = c;
    }
    total += conv(7, 512, 4096) + conv(1, 4096, 4096) + conv(1, 4096, 2);
    total += conv(1, 512, 2) + conv(1, 256, 2);
    total += 2 * conv(4, 2, 2) + conv(16, 2, 2);
    let specs = architecture(&NetConfig::paper(FusionStrategy::Siamese)).unwrap();
    assert_eq!(specs.iter().map(|l| l.param_count()).sum::<usize>(), total);
}

#[test]
fn initialization_rules() {
    let model = build_model(&NetConfig::tiny(FusionStrategy::Siamese)).unwrap();
    for layer in model.layers() {
        assert!(layer.bias.data().iter().all(|&b| b == 0.0), "{}", layer.spec.name);
        match layer.spec.init {
            ParamInit::Zero => assert!(layer.weight.data().iter().all(|&w| w == 0.0)),
            ParamInit::Bilinear => assert_eq!(layer.spec.kind, LayerKind::TransposedConv),
            ParamInit::HeNormal => {
                let [co, ci, kh, kw] = layer.spec.weight_shape();
                let n = (co * ci * kh * kw) as f64;
                let var = layer.weight.data().iter().map(|&w| (w as f64).powi(2)).sum::<f64>() / n;
                let expected = 2.0 / (ci * kh * kw) as f64;
                // sample variance of n normals is within a few n^-1/2 of the truth
                assert!((var / expected - 1.0).abs() < 6.0 / n.sqrt() + 0.02, "{}", layer.spec.name);
            }
        }
    }
    for name in ["Score", "ScoreSkip1", "ScoreSkip2"] {
        assert_eq!(model.layer(name).unwrap().spec.init, ParamInit::Zero);
    }
}

fn small_config(strategy: FusionStrategy, size: (usize, usize)) -> NetConfig {
    NetConfig { input_size: size, width_scale: 16, head_width: 16, ..NetConfig::tiny(strategy) }
}

fn random_input(size: (usize, usize), seed: u64) -> Tensor<f32> {
    let mut r = rng(seed);
    Tensor::from_fn(&[1, 3, size.0, size.1], |_| r.random_range(-0.5..0.5))
}

/// Gives the zero-initialized score layers random weights so gradients reach
/// the encoder.
fn randomize_scores(model: &mut ModelParams<f32>, seed: u64) {
    let mut r = rng(seed);
    for name in ["Score", "ScoreSkip1", "ScoreSkip2"] {
        for w in model.layer_mut(name).unwrap().weight.data_mut() {
            *w = r.random_range(-0.5..0.5);
        }
    }
}

#[test]
fn output_matches_input_size_for_every_strategy() {
    for strategy in FusionStrategy::ALL {
        for size in [(32, 32), (50, 71), (96, 312)] {
            let model = build_model(&small_config(strategy, size)).unwrap();
            let out = model_forward(&model, &random_input(size, 1), &random_input(size, 2)).unwrap();
            assert_eq!(out.shape(), &[1, 2, size.0, size.1], "{strategy} {size:?}");
            let rows = trace_architecture(model.config()).unwrap();
            assert_eq!(rows.last().unwrap().output, size);
        }
    }
}

#[test]
fn rejects_tiny_or_mismatched_inputs() {
    assert!(build_model(&small_config(FusionStrategy::Siamese, (31, 64))).is_err());
    let model = build_model(&small_config(FusionStrategy::Siamese, (32, 32))).unwrap();
    assert!(model_forward(&model, &random_input((32, 32), 0), &random_input((32, 40), 0)).is_err());
}

#[test]
fn zero_lidar_gives_finite_logits() {
    let size = (48, 64);
    for strategy in FusionStrategy::ALL {
        let mut model = build_model(&small_config(strategy, size)).unwrap();
        randomize_scores(&mut model, 3);
        let zeros = Tensor::zeros(&[1, 3, size.0, size.1]);
        let out = model_forward(&model, &random_input(size, 4), &zeros).unwrap();
        assert!(out.is_finite());
        assert!(out.data().iter().any(|&v| v != 0.0));
    }
}

#[test]
fn construction_and_forward_are_deterministic() {
    let cfg = small_config(FusionStrategy::Siamese, (40, 56)).with_seed(9);
    let (a, b) = (build_model(&cfg).unwrap(), build_model(&cfg).unwrap());
    assert_eq!(a.to_checkpoint_bytes(), b.to_checkpoint_bytes());
    let other = build_model(&cfg.with_seed(10)).unwrap();
    assert_ne!(a.to_checkpoint_bytes(), other.to_checkpoint_bytes());
    let (x, y) = (random_input((40, 56), 5), random_input((40, 56), 6));
    let mut a = a;
    let mut b = b;
    randomize_scores(&mut a, 1);
    randomize_scores(&mut b, 1);
    assert_eq!(model_forward(&a, &x, &y).unwrap().data(), model_forward(&b, &x, &y).unwrap().data());
}

#[test]
fn zero_fuse_conv_leaves_branches_independent() {
    // groups run on any input size; the config only bounds full forwards
    let mut model = build_model(&small_config(FusionStrategy::Siamese, (32, 32))).unwrap();
    let fuse = model.layer_mut("FuseConv1").unwrap();
    fuse.weight.data_mut().fill(0.0);
    let run = |lidar: Tensor<f32>| {
        let mut g = Graph::new(&model);
        let img = g.input(random_input((16, 16), 7));
        let lidar = g.input(lidar);
        let out = g.siam_group(1, img, lidar).unwrap();
        (g.tape.value(out.img).clone(), g.tape.value(out.fused).clone())
    };
    let (img_a, fused) = run(random_input((16, 16), 8));
    let (img_b, _) = run(random_input((16, 16), 9));
    assert!(fused.data().iter().all(|&v| v == 0.0));
    assert_eq!(img_a.data(), img_b.data());
    assert_eq!(img_a.shape(), &[1, 4, 8, 8]);
}

#[test]
fn both_branches_receive_gradients() {
    let size = (32, 48);
    let mut model = build_model(&small_config(FusionStrategy::Siamese, size)).unwrap();
    randomize_scores(&mut model, 11);
    let mut g = Graph::new(&model);
    let rgb = g.input(random_input(size, 12));
    let lidar = g.input(random_input(size, 13));
    let logits = g.forward(rgb, lidar).unwrap();
    let target: Vec<u8> = (0..size.0 * size.1).map(|i| (i % 3 == 0) as u8).collect();
    let loss = g.tape.softmax_ce_loss(logits, &target, &vec![true; target.len()]).unwrap();
    let grads = g.backward(loss).unwrap();
    for (layer, (gw, _)) in model.layers().iter().zip(&grads.layers) {
        let norm: f32 = gw.as_ref().map_or(0.0, |g| g.iter().map(|v| v * v).sum());
        assert!(norm > 0.0 && norm.is_finite(), "{} got no gradient", layer.spec.name);
    }
}

#[test]
fn checkpoint_round_trip_and_rejection() {
    let cfg = small_config(FusionStrategy::Late, (32, 32)).with_seed(3);
    let mut model = build_model(&cfg).unwrap();
    randomize_scores(&mut model, 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    model.save(&path).unwrap();
    let back = ModelParams::load(&cfg, &path).unwrap();
    assert_eq!(back.to_checkpoint_bytes(), model.to_checkpoint_bytes());
    for (a, b) in model.named_tensors().iter().zip(back.named_tensors()) {
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.1), bits(b.1));
    }

    let bytes = model.to_checkpoint_bytes();
    let wrong_strategy = small_config(FusionStrategy::Siamese, (32, 32));
    let err = ModelParams::from_checkpoint_bytes(&wrong_strategy, &bytes).unwrap_err().to_string();
    assert!(err.contains("ImgConv") || err.contains("Fuse"), "{err}");
    let wider = NetConfig { width_scale: 8, ..cfg };
    assert!(ModelParams::from_checkpoint_bytes(&wider, &bytes).is_err());
    assert!(ModelParams::from_checkpoint_bytes(&cfg, &bytes[..bytes.len() - 3]).is_err());
}
