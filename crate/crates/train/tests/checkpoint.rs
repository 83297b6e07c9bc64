use std::path::Path;

use tsg_core::{ModelConfig, TsgModel};
use tsg_tensor::{Init, ParamStore, Tensor};
use tsg_train::checkpoint::{encode, load, load_bytes, save, MAGIC};
use tsg_train::TrainError;

fn image<F: tsg_tensor::Real>() -> Tensor<F> {
    let data = (0..16 * 16 * 3).map(|i| F::lit(((i * 37) % 101) as f64 / 101.0)).collect();
    Tensor::new(&[16, 16, 3], data).unwrap()
}

fn snapshot<F: tsg_tensor::Real>(store: &ParamStore<F>) -> Vec<Vec<F>> {
    store.params().iter().map(|p| p.tensor.to_vec()).collect()
}

#[test]
fn f32_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let a = TsgModel::<f32>::new(ModelConfig::tiny(), 1).unwrap();
    save(&a.store, &path).unwrap();
    let b = TsgModel::<f32>::new(ModelConfig::tiny(), 2).unwrap();
    assert_ne!(snapshot(&a.store), snapshot(&b.store));
    load(&b.store, &path).unwrap();
    for (x, y) in snapshot(&a.store).iter().zip(snapshot(&b.store)) {
        let xb: Vec<u32> = x.iter().map(|v| v.to_bits()).collect();
        let yb: Vec<u32> = y.iter().map(|v| v.to_bits()).collect();
        assert_eq!(xb, yb);
    }
    let pa = a.forward(&image()).unwrap().logits.probs.to_vec();
    let pb = b.forward(&image()).unwrap().logits.probs.to_vec();
    assert_eq!(pa, pb);
    // Saving again reproduces the file byte for byte.
    assert_eq!(std::fs::read(&path).unwrap(), encode(&b.store));
}

#[test]
fn f64_round_trip_is_within_f32_quantization() {
    let a = TsgModel::<f64>::new(ModelConfig::tiny(), 3).unwrap();
    let b = TsgModel::<f64>::new(ModelConfig::tiny(), 4).unwrap();
    load_bytes(&b.store, &encode(&a.store), Path::new("mem")).unwrap();
    let pa = a.forward(&image()).unwrap().logits.probs.to_vec();
    let pb = b.forward(&image()).unwrap().logits.probs.to_vec();
    let diff = pa.iter().zip(&pb).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(diff <= 1e-6, "{diff}");
}

#[test]
fn layout_is_magic_then_little_endian_records() {
    let mut store = ParamStore::<f32>::new(0);
    store.create("w", &[2, 1], Init::Constant(1.5)).unwrap();
    let bytes = encode(&store);
    let mut expected = MAGIC.to_vec();
    expected.extend(1u64.to_le_bytes());
    expected.extend(b"w");
    expected.extend(2u64.to_le_bytes());
    expected.extend(2u64.to_le_bytes());
    expected.extend(1u64.to_le_bytes());
    expected.extend(1.5f32.to_le_bytes());
    expected.extend(1.5f32.to_le_bytes());
    assert_eq!(bytes, expected);
}

#[test]
fn truncated_file_errors_without_touching_the_model() {
    let a = TsgModel::<f32>::new(ModelConfig::tiny(), 1).unwrap();
    let b = TsgModel::<f32>::new(ModelConfig::tiny(), 2).unwrap();
    let bytes = encode(&a.store);
    let before = snapshot(&b.store);
    for cut in [bytes.len() - 1, bytes.len() / 2, MAGIC.len() + 3] {
        let err = load_bytes(&b.store, &bytes[..cut], Path::new("t.ckpt")).unwrap_err();
        assert!(matches!(err, TrainError::Truncated { .. }), "{err}");
        assert!(err.to_string().contains("truncated"));
        assert_eq!(snapshot(&b.store), before);
    }
}

#[test]
fn bad_magic_is_rejected() {
    let b = TsgModel::<f32>::new(ModelConfig::tiny(), 2).unwrap();
    let mut bytes = encode(&b.store);
    bytes[7] = b'2';
    let err = load_bytes(&b.store, &bytes, Path::new("x")).unwrap_err();
    assert!(matches!(err, TrainError::BadMagic { .. }));
    assert!(matches!(
        load_bytes(&b.store, b"TSG", Path::new("x")),
        Err(TrainError::BadMagic { .. })
    ));
}

#[test]
fn unknown_parameter_is_named() {
    let mut extra = ParamStore::<f32>::new(0);
    extra.create("decoder.bogus", &[3], Init::Zeros).unwrap();
    let b = TsgModel::<f32>::new(ModelConfig::tiny(), 2).unwrap();
    let mut bytes = encode(&b.store);
    bytes.extend_from_slice(&encode(&extra)[MAGIC.len()..]);
    let before = snapshot(&b.store);
    let err = load_bytes(&b.store, &bytes, Path::new("x")).unwrap_err();
    match &err {
        TrainError::UnknownParameter { name, .. } => assert_eq!(name, "decoder.bogus"),
        other => panic!("{other}"),
    }
    assert!(err.to_string().contains("decoder.bogus"));
    assert_eq!(snapshot(&b.store), before);
}

#[test]
fn missing_and_misshapen_parameters_are_rejected() {
    let b = TsgModel::<f32>::new(ModelConfig::tiny(), 2).unwrap();
    let mut partial = ParamStore::<f32>::new(0);
    let first = &b.store.params()[0];
    partial.create(&first.name, first.tensor.shape(), Init::Zeros).unwrap();
    let err = load_bytes(&b.store, &encode(&partial), Path::new("x")).unwrap_err();
    match err {
        TrainError::MissingParameters { names, .. } => assert_eq!(names.len(), b.store.len() - 1),
        other => panic!("{other}"),
    }

    let mut wrong = ParamStore::<f32>::new(0);
    wrong.create(&first.name, &[first.tensor.numel() + 1], Init::Zeros).unwrap();
    assert!(matches!(
        load_bytes(&b.store, &encode(&wrong), Path::new("x")),
        Err(TrainError::ParameterShape { .. })
    ));
}

#[test]
fn missing_file_is_an_io_error() {
    let b = TsgModel::<f32>::new(ModelConfig::tiny(), 2).unwrap();
    assert!(matches!(
        load(&b.store, Path::new("/nonexistent/m.ckpt")),
        Err(TrainError::Io { .. })
    ));
}
