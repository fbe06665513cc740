use proptest::prelude::*;
use robdistill_core::audio_io::Waveform;
use robdistill_core::models::{
    decode, encode, load_checkpoint, save_checkpoint, EncoderConfig, ModelError, Positional, Preset, StudentModel,
    TeacherModel,
};
use robdistill_core::tensor::{Graph, Tensor};

fn tone(len: usize, f: f64) -> Waveform {
    Waveform::new((0..len).map(|i| (i as f64 * f).sin() * 0.2 + (i as f64 * 0.31).cos() * 0.05).collect(), 16000)
        .unwrap()
}

/// Parameter count of one encoder, from the layer shapes.
fn encoder_count(e: &EncoderConfig, layers: usize) -> usize {
    let c = &e.conv_channels;
    let mut n = 0;
    let mut c_in = 1;
    for (ch, k) in c.iter().zip(&e.conv_kernels) {
        n += ch * c_in * k;
        c_in = *ch;
    }
    n += 2 * c[0] + 2 * c_in;
    let d = e.d_model;
    n += c_in * d + d;
    if let Positional::Convolutional { kernel, groups } = e.positional {
        n += d * (d / groups) * kernel + d;
    }
    n += 2 * d;
    let block = 4 * d + 4 * (d * d + d) + (d * e.ffn_dim + e.ffn_dim) + (e.ffn_dim * d + d);
    n + layers * block
}

#[test]
fn counts_match_the_layer_formula_and_golden_file() {
    let golden: serde_json::Value = serde_json::from_str(include_str!("golden/param_counts.json")).unwrap();
    for name in ["tiny", "toy"] {
        let p = Preset::by_name(name).unwrap();
        let t = TeacherModel::new(&p, 0).unwrap();
        let s = StudentModel::new(&p, 0, Some(&t)).unwrap();
        let d = p.encoder.d_model;
        assert_eq!(t.count_params(), encoder_count(&p.encoder, p.encoder.n_layers), "{name}");
        assert_eq!(s.count_params(), encoder_count(&p.encoder, p.student_layers) + 3 * (d * d + d), "{name}");
        let g = &golden[name];
        assert_eq!(t.count_params() as u64, g["teacher"].as_u64().unwrap(), "{name}");
        assert_eq!(s.count_params() as u64, g["student"].as_u64().unwrap(), "{name}");
        assert_eq!(s.count_enhancement_params() as u64, g["enhancement_head"].as_u64().unwrap(), "{name}");
    }
}

#[test]
fn base_counts_follow_the_formula() {
    let p = Preset::base();
    let t = encoder_count(&p.encoder, 12);
    let s = encoder_count(&p.encoder, 2) + 3 * (768 * 768 + 768);
    assert!((t as f64 / 95e6 - 1.0).abs() < 0.05, "{t}");
    assert!((s as f64 / 24e6 - 1.0).abs() < 0.10, "{s}");
    assert!((s as f64) / (t as f64) < 0.3);
}

#[test]
fn teacher_is_deterministic_and_student_shapes_match() {
    let p = Preset::toy();
    let t = TeacherModel::new(&p, 3).unwrap();
    let s = StudentModel::new(&p, 3, Some(&t)).unwrap();
    let w = tone(8000, 0.03);
    let a = t.forward(&w).unwrap();
    assert_eq!(a, t.forward(&w).unwrap());
    let out = s.forward(&w).unwrap();
    assert_eq!(out, s.forward(&w).unwrap());
    let frames = p.encoder.frames(8000).unwrap();
    for (x, y) in a.iter().zip(&out.predictions) {
        assert_eq!(x.shape(), &[frames, 64]);
        assert_eq!(x.shape(), y.shape());
    }
    assert_eq!(TeacherModel::new(&p, 3).unwrap().checksum(), t.checksum());
    assert_ne!(TeacherModel::new(&p, 4).unwrap().checksum(), t.checksum());
}

#[test]
fn short_inputs_are_rejected() {
    let p = Preset::toy();
    assert_eq!(p.encoder.receptive_field(), 400);
    let t = TeacherModel::new(&p, 1).unwrap();
    assert!(matches!(t.forward(&tone(399, 0.1)), Err(ModelError::TooShort { len: 399, min: 400 })));
}

#[test]
fn enhancement_gradient_reaches_the_encoder() {
    let p = Preset::tiny();
    let s = StudentModel::new(&p, 5, None).unwrap();
    let w = tone(1600, 0.02);
    let mut g = Graph::<f32>::new();
    let v = s.params.bind(&mut g, true);
    let x = g.constant(Tensor::new(vec![w.len()], w.to_f32()).unwrap());
    let out = s.forward_graph(&mut g, &v, x).unwrap();
    let y = s.enhance_graph(&mut g, &v, out.last_hidden, w.len()).unwrap();
    let loss = g.sum(y).unwrap();
    g.backward(loss).unwrap();
    let mut reached = 0;
    for (i, name) in s.params.names().iter().enumerate() {
        if (name.starts_with("student.layers.") || name.starts_with("student.conv."))
            && g.grad(v[i]).is_some_and(|gr| gr.iter().any(|&x| x != 0.0))
        {
            reached += 1;
        }
    }
    assert!(reached > 10, "{reached}");
}

#[test]
fn checkpoint_round_trip_and_damage() {
    let dir = tempfile::tempdir().unwrap();
    let p = Preset::toy();
    let t = TeacherModel::new(&p, 9).unwrap();
    let s = StudentModel::new(&p, 11, Some(&t)).unwrap();
    let path = dir.path().join("s.rdck");
    save_checkpoint(&s.to_checkpoint(11), &path).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert_eq!(ck.preset, "toy");
    assert_eq!(ck.seed, 11);
    let back = StudentModel::from_checkpoint(&ck).unwrap();
    let w = tone(4000, 0.05);
    assert_eq!(back.forward(&w).unwrap(), s.forward(&w).unwrap());
    assert_eq!(back.checksum(), s.checksum());

    let bytes = encode(&t.to_checkpoint(9));
    assert_eq!(&bytes[..4], b"RDCK");
    assert!(matches!(decode(&bytes[..bytes.len() - 10]), Err(ModelError::CorruptChecksum)));
    let t2 = TeacherModel::from_checkpoint(&decode(&bytes).unwrap()).unwrap();
    assert_eq!(t2.forward(&w).unwrap(), t.forward(&w).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn predictions_match_targets_and_enhancement_has_input_length(len in 400usize..6000, seed in 0u64..1000) {
        let p = Preset::tiny();
        let t = TeacherModel::new(&p, seed).unwrap();
        let s = StudentModel::new(&p, seed + 1, Some(&t)).unwrap();
        let w = tone(len, 0.01 + (seed % 7) as f64 * 0.01);
        let targets = t.forward(&w).unwrap();
        let out = s.forward(&w).unwrap();
        let frames = p.encoder.frames(len).unwrap();
        for (a, b) in targets.iter().zip(&out.predictions) {
            prop_assert_eq!(a.shape(), b.shape());
            prop_assert_eq!(a.shape()[0], frames);
        }
        let e = s.enhance(&out.last_hidden, len).unwrap();
        prop_assert_eq!(e.len(), len);
        prop_assert!(e.samples().iter().all(|v| v.is_finite()));
    }
}
