use l1sa::model::BackboneSpec;
use l1sa::{LayerId, LevelOneConfig, LevelOneParams, Mode, Tape, Tensor};

/// Parameter count from the layer description alone: every conv carries a
/// bias plus batch-norm scale and shift, every dense layer a bias.
fn shape_walk(cfg: &LevelOneConfig) -> usize {
    let conv_bn = |cin: usize, cout: usize, k: usize| cout * cin * k * k + 3 * cout;
    let dense = |i: usize, o: usize| i * o + o;
    let bb: &BackboneSpec = &cfg.backbone;
    let mut total = conv_bn(3, bb.stem_channels, bb.stem_kernel);
    let mut cin = bb.stem_channels;
    for &w in &bb.block_widths {
        total += conv_bn(cin, w, 3) + conv_bn(w, w, 3);
        if bb.block_stride != 1 || cin != w {
            total += conv_bn(cin, w, 1);
        }
        cin = w;
    }
    total
        + dense(cin, cfg.vision_feature_dim)
        + dense(cfg.proprio_input_dim, cfg.fc0_out)
        + dense(cfg.concat_dim, cfg.fc1_out)
        + dense(cfg.fc1_out, cfg.num_classes)
}

#[test]
fn parameter_count_matches_shape_walk() {
    let cfg = LevelOneConfig::default();
    let m = LevelOneParams::init(cfg.clone()).unwrap();
    assert_eq!(m.param_count(), shape_walk(&cfg));
    assert_eq!(m.param_count(), 84_185);
    let wide = LevelOneConfig {
        backbone: BackboneSpec { block_widths: vec![8, 8], block_stride: 1, ..BackboneSpec::default() },
        image_size: (32, 32),
        ..LevelOneConfig::default()
    };
    let m = LevelOneParams::init(wide.clone()).unwrap();
    assert_eq!(m.param_count(), shape_walk(&wide));
}

#[test]
fn default_intermediate_widths() {
    let cfg = LevelOneConfig::default();
    let mut m = LevelOneParams::init(cfg).unwrap();
    let images = Tensor::full(&[2, 3, 64, 64], 0.5);
    let proprio = Tensor::full(&[2, 18], 0.1);
    let mut tape = Tape::new();
    let tr = m.trace(&mut tape, images, &proprio, Mode::Train).unwrap();
    let widths: Vec<usize> =
        [tr.vision_feature, tr.proprio_feature, tr.fused, tr.hidden, tr.logits].iter().map(|&v| tape.value(v).shape()[1]).collect();
    assert_eq!(widths, [19, 76, 95, 32, 2]);
    assert_eq!(m.layer_weights(LayerId::Fc2).shape(), &[2, 32]);
    assert_eq!(m.layer_weights(LayerId::Fc1).shape(), &[32, 95]);
    assert_eq!(m.layer_weights(LayerId::Fc0).shape(), &[76, 18]);
    assert_eq!(m.layer_weights(LayerId::VisionProjection).shape(), &[19, 64]);
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let m = LevelOneParams::init(LevelOneConfig { image_size: (16, 16), seed: 9, ..LevelOneConfig::default() }).unwrap();
    m.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert_eq!(&bytes[..8], b"L1SA0001");
    let back = LevelOneParams::load(&path).unwrap();
    assert!(back.same_weights(&m));
    let img = Tensor::full(&[1, 3, 16, 16], 0.3);
    let pro = Tensor::full(&[1, 18], -0.2);
    assert_eq!(back.forward(&img, &pro).unwrap().data(), m.forward(&img, &pro).unwrap().data());
    assert!(matches!(LevelOneParams::load(&dir.path().join("absent")), Err(l1sa::Error::Missing(_))));
}
