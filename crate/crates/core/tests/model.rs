mod common;

use candle_core::{DType, Device, Tensor};
use clap_lab::model::{
    label_config_index, load_checkpoint, load_into, read_checkpoint_meta, save_checkpoint,
    ArchConfig, Batch, ClapModel, ForwardCtx, Likelihood,
};
use clap_lab::Error;
use common::*;
use proptest::prelude::*;
use serde_json::json;
use sha2::{Digest, Sha256};

fn sha(path: &std::path::Path) -> String {
    hex::encode(Sha256::digest(std::fs::read(path).unwrap()))
}

fn tiny() -> ClapModel {
    linear_model(dims(3, 2, 6, 2), 0.5, DType::F32, 4)
}

fn rows(n: usize, d: usize) -> Tensor {
    let v: Vec<f32> = (0..n * d)
        .map(|i| ((i * 37 % 11) as f32 - 5.0) / 3.0)
        .collect();
    Tensor::from_vec(v, (n, d), &Device::Cpu).unwrap()
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = tiny();
    m.set_mixture_weights(&[0.1, 0.2, 0.3, 0.4]).unwrap();
    let a = dir.path().join("a.tar");
    let b = dir.path().join("b.tar");
    save_checkpoint(&a, &m, 17, None, json!({"note": "x"})).unwrap();
    let (loaded, meta, opt) = load_checkpoint(&a, DType::F32).unwrap();
    assert_eq!(meta.step, 17);
    assert!(opt.is_none());
    assert_eq!(loaded.store.digest().unwrap(), m.store.digest().unwrap());
    save_checkpoint(&b, &loaded, 17, None, json!({"note": "x"})).unwrap();
    assert_eq!(sha(&a), sha(&b));
    assert_eq!(read_checkpoint_meta(&a).unwrap().extra["note"], "x");
}

#[test]
fn loading_into_other_dims_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.tar");
    save_checkpoint(&p, &tiny(), 0, None, json!({})).unwrap();
    let mut other = linear_model(dims(4, 2, 6, 2), 0.5, DType::F32, 4);
    assert!(matches!(
        load_into(&p, &mut other),
        Err(Error::DimMismatch(_))
    ));
}

#[test]
fn corrupt_archives_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.tar");
    std::fs::write(&p, b"not a tar archive at all").unwrap();
    assert!(matches!(
        load_checkpoint(&p, DType::F32),
        Err(Error::CorruptArchive { .. })
    ));
}

#[test]
fn initialisation_depends_only_on_seed() {
    assert_eq!(
        tiny().store.digest().unwrap(),
        tiny().store.digest().unwrap()
    );
    let other = linear_model(dims(3, 2, 6, 2), 0.5, DType::F32, 5);
    assert_ne!(
        tiny().store.digest().unwrap(),
        other.store.digest().unwrap()
    );
}

#[test]
fn style_block_is_shared_between_encoders() {
    let m = tiny();
    let x = rows(5, 6);
    let y = Tensor::from_vec(
        vec![0f32, 1., 1., 0., 1., 1., 0., 0., 1., 0.],
        (5, 2),
        &Device::Cpu,
    )
    .unwrap();
    let qp = m.encode_p(&x, &mut ForwardCtx::eval()).unwrap();
    let qc = m.encode_cl(&x, &y, &mut ForwardCtx::eval()).unwrap();
    let s = |t: Tensor| t.to_vec2::<f32>().unwrap();
    assert_eq!(s(qp.style_mean().unwrap()), s(qc.style_mean().unwrap()));
    assert_eq!(s(qp.style_var().unwrap()), s(qc.style_var().unwrap()));
    let (bp, bc) = m.encode_both(&x, &y, &mut ForwardCtx::eval()).unwrap();
    assert_eq!(s(bp.mean), s(qp.mean));
    assert_eq!(s(bc.mean), s(qc.mean));
}

#[test]
fn concept_encoder_rejects_non_binary_labels() {
    let m = tiny();
    let y = Tensor::from_vec(vec![0f32, 2., 1., 0.], (2, 2), &Device::Cpu).unwrap();
    assert!(matches!(
        m.encode_cl(&rows(2, 6), &y, &mut ForwardCtx::eval()),
        Err(Error::InvalidLabel(_))
    ));
    assert!(Batch::from_rows(&[0.0; 6], &[3, 0], 1, 2, DType::F32, &Device::Cpu).is_err());
}

#[test]
fn decoder_checks_shapes_and_finiteness() {
    let m = tiny();
    assert!(matches!(m.decode(&rows(2, 4)), Err(Error::Shape(_))));
    let bad = Tensor::from_vec(vec![f32::NAN; 5], (1, 5), &Device::Cpu).unwrap();
    assert!(m.decode(&bad).is_err());
    assert_eq!(m.decode(&rows(3, 5)).unwrap().dims(), &[3, 6]);
}

#[test]
fn bernoulli_decoder_emits_probabilities() {
    let m = ClapModel::new(
        config(
            dims(2, 1, 8, 1),
            ArchConfig::mlp(vec![4]),
            Likelihood::Bernoulli,
            0,
        ),
        DType::F32,
    )
    .unwrap();
    let z = rows(6, 3).affine(30.0, 0.0).unwrap();
    for row in m.decode(&z).unwrap().to_vec2::<f32>().unwrap() {
        assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
    }
}

#[test]
fn table2_preset_maps_images_to_images() {
    let mut d = dims(2, 2, 64 * 64 * 3, 1);
    d.image_shape = Some([64, 64, 3]);
    let m = ClapModel::new(
        config(d, ArchConfig::table2(), Likelihood::Bernoulli, 0),
        DType::F32,
    )
    .unwrap();
    let q = m
        .encode_p(&rows(2, 64 * 64 * 3), &mut ForwardCtx::eval())
        .unwrap();
    assert_eq!(q.mean.dims(), &[2, 4]);
    assert_eq!(m.decode(&q.mean).unwrap().dims(), &[2, 64 * 64 * 3]);
}

#[test]
fn mixture_weights_are_normalised() {
    let mut m = tiny();
    m.set_mixture_weights(&[0.0, 1.0, 1.0, 2.0]).unwrap();
    let w: Vec<f64> = m
        .prior_p
        .log_weights
        .to_dtype(DType::F64)
        .unwrap()
        .to_vec1::<f64>()
        .unwrap()
        .iter()
        .map(|l| l.exp())
        .collect();
    // stored in the model's f32 dtype
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    assert!(w[0] > 0.0 && w[0] < 1e-5);
    assert!(m.set_mixture_weights(&[1.0, 1.0]).is_err());
}

#[test]
fn label_configurations_are_bit_indexed() {
    assert_eq!(label_config_index(&[0, 0, 0]), 0);
    assert_eq!(label_config_index(&[1, 0, 0]), 1);
    assert_eq!(label_config_index(&[0, 1, 1]), 6);
}

proptest! {
    #[test]
    fn posterior_variances_stay_positive(scale in 0.1f64..1e3, seed in 0u64..50) {
        let m = linear_model(dims(2, 2, 6, 1), 0.5, DType::F32, seed);
        let x = rows(4, 6).affine(scale, -scale).unwrap();
        let q = m.encode_p(&x, &mut ForwardCtx::eval()).unwrap();
        for v in q.var.flatten_all().unwrap().to_vec1::<f32>().unwrap() {
            prop_assert!(v > 0.0 && v.is_finite());
        }
    }
}
