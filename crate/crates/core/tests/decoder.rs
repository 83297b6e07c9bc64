mod common;

use common::*;
use tsg_core::decoder::{tsgd_fuse, tsgd_fuse_first, DecoderSpec};
use tsg_core::{
    logits_to_mask, predict, AttentionBundle, Decoder, DecoderFusion, FeatureMap, GateMode,
    ModelError, ScaleGate, SoftmaxAxis, TsgConfig,
};
use tsg_oracle::{Mat, MemoryRule};
use tsg_tensor::{ParamStore, Tensor};

#[test]
fn first_block_fusion_is_plain_sum() {
    let mut r = rng(1);
    let a = random_tensor(&mut r, &[6, 4], 1.0);
    assert_eq!(tsgd_fuse_first(&[a.clone()]).unwrap().to_vec(), a.to_vec());
    let twice: Vec<f64> = a.to_vec().iter().map(|v| 2.0 * v).collect();
    assert_eq!(tsgd_fuse_first(&[a.clone(), a.clone()]).unwrap().to_vec(), twice);
    for seed in 0..20 {
        let mut r = rng(seed);
        let maps: Vec<Mat> = (0..3).map(|_| random_mat(&mut r, 8, 5, 1.0)).collect();
        let ts: Vec<Tensor<f64>> = maps.iter().map(tensor).collect();
        let got = tsgd_fuse_first(&ts).unwrap();
        assert_close("sum", &got.to_vec(), &tsg_oracle::plain_sum(&maps).data, 1e-12);
    }
    assert!(tsgd_fuse_first::<f64>(&[]).is_err());
    let b = random_tensor(&mut r, &[5, 4], 1.0);
    assert!(tsgd_fuse_first(&[a, b]).is_err());
}

fn class_bundle(seed: u64, heads: usize, classes: usize, n: usize) -> (Vec<Mat>, AttentionBundle<f64>) {
    let mut r = rng(seed);
    let maps: Vec<Mat> = (0..heads)
        .map(|_| tsg_oracle::softmax_cols(&random_mat(&mut r, classes, n, 2.0)))
        .collect();
    let b = AttentionBundle {
        maps: maps.iter().map(tensor).collect(),
        softmax_axis: SoftmaxAxis::Queries,
        source: "prev".into(),
        grid: None,
    };
    (maps, b)
}

fn gate3(seed: u64) -> (ParamStore<f64>, ScaleGate<f64>) {
    let mut store = ParamStore::new(seed);
    let g = ScaleGate::new(&mut store, "g", &TsgConfig::new(5), &[(2, 3)], 3).unwrap();
    randomize(&store, &mut rng(seed + 5), 0.6);
    (store, g)
}

#[test]
fn gated_fusion_matches_oracle_and_stays_in_envelope() {
    for seed in 0..20 {
        let (_s, g) = gate3(seed);
        let (maps, b) = class_bundle(seed + 100, 2, 3, 6);
        let mut r = rng(seed + 200);
        let feats: Vec<Mat> = (0..3).map(|_| random_mat(&mut r, 6, 4, 1.0)).collect();
        let ts: Vec<Tensor<f64>> = feats.iter().map(tensor).collect();
        let (fused, gates) = tsgd_fuse(&ts, &b, &g).unwrap();
        let og = tsg_oracle::gate(&tsg_oracle::integrate_cross(&maps, &gate(&g)), &gate(&g));
        assert_close("gates", &gates.gates.to_vec(), &og.data, 1e-9);
        assert_close("fused", &fused.to_vec(), &tsg_oracle::gated_sum(&feats, &og).data, 1e-9);
        for i in 0..fused.numel() {
            let vals: Vec<f64> = feats.iter().map(|f| f.data[i]).collect();
            let lo = vals.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert!(fused.to_vec()[i] >= lo - 1e-9 && fused.to_vec()[i] <= hi + 1e-9);
        }
    }
}

#[test]
fn uniform_and_one_hot_gates_reduce_as_expected() {
    let (_s, g) = gate3(1);
    g.zero_output_layer();
    let (_, b) = class_bundle(2, 2, 3, 6);
    let mut r = rng(3);
    let ts: Vec<Tensor<f64>> = (0..3).map(|_| random_tensor(&mut r, &[6, 4], 1.0)).collect();
    let (fused, _) = tsgd_fuse(&ts, &b, &g).unwrap();
    let sum = tsgd_fuse_first(&ts).unwrap();
    let mean: Vec<f64> = sum.to_vec().iter().map(|v| v / 3.0).collect();
    assert_close("uniform", &fused.to_vec(), &mean, 1e-12);
    for s in 0..3 {
        let mut w = vec![0.0; 3];
        w[s] = 1.0;
        let gates = tsg_core::ScaleGates::<f64>::constant(6, &w).unwrap();
        assert_eq!(gates.combine(&ts).unwrap().to_vec(), ts[s].to_vec());
    }
}

#[test]
fn patch_softmax_maps_cannot_drive_gates() {
    let (_s, g) = gate3(4);
    let (_, mut b) = class_bundle(5, 2, 3, 6);
    b.softmax_axis = SoftmaxAxis::Keys;
    let ts: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::zeros(&[6, 4]).unwrap()).collect();
    assert!(matches!(tsgd_fuse(&ts, &b, &g), Err(ModelError::SoftmaxAxis { .. })));
}

#[test]
fn prediction_contract() {
    let mut r = rng(6);
    let f = random_tensor(&mut r, &[8, 4], 1.0);
    let y0 = Tensor::<f64>::zeros(&[3, 4]).unwrap();
    let p = predict(&f, &y0, (2, 4)).unwrap();
    assert!(p.probs.to_vec().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    assert_eq!(logits_to_mask(&p, (8, 16)).unwrap(), vec![0u8; 128]);
    for seed in 0..20 {
        let mut r = rng(seed);
        let f = random_tensor(&mut r, &[6, 5], 2.0);
        let y = random_tensor(&mut r, &[4, 5], 2.0);
        let p = predict(&f, &y, (2, 3)).unwrap();
        assert_close("predict", &p.probs.to_vec(), &tsg_oracle::predict(&mat(&f), &mat(&y)).data, 1e-9);
        let scores = p.scores.to_vec();
        for (n, row) in p.probs.to_vec().chunks(4).enumerate() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            let srow = &scores[n * 4..n * 4 + 4];
            let am = |v: &[f64]| (0..4).fold(0, |b, i| if v[i] > v[b] { i } else { b });
            assert_eq!(am(row), am(srow));
        }
    }
}

#[test]
fn saturated_class_wins_its_patch() {
    // Patch n aligned with class n % 3 at large magnitude.
    let mut f = vec![0.0; 6 * 3];
    for n in 0..6 {
        f[n * 3 + n % 3] = 1.0;
    }
    let mut y = vec![0.0; 9];
    for c in 0..3 {
        y[c * 3 + c] = 200.0;
    }
    let p = predict(
        &Tensor::<f64>::from_f64(&[6, 3], &f).unwrap(),
        &Tensor::from_f64(&[3, 3], &y).unwrap(),
        (2, 3),
    )
    .unwrap();
    for n in 0..6 {
        assert!(p.probs.at(&[n, n % 3]) > 1.0 - 1e-12);
    }
    let mask = logits_to_mask(&p, (8, 12)).unwrap();
    for yy in 0..8 {
        for xx in 0..12 {
            let patch = (yy / 4) * 3 + xx / 4;
            assert_eq!(mask[yy * 12 + xx] as usize, patch % 3);
        }
    }
    assert!(logits_to_mask(&p, (9, 12)).is_err());
}

fn decoder(seed: u64, blocks: usize, fusion: DecoderFusion, scales: usize) -> (ParamStore<f64>, Decoder<f64>) {
    let mut store = ParamStore::new(seed);
    let d = Decoder::new(
        &mut store,
        "dec",
        &DecoderSpec {
            classes: 3,
            d_f: 4,
            heads: 2,
            blocks,
            mlp_ratio: 2,
            num_scales: scales,
            fusion,
            tsg: &TsgConfig::new(5),
            shared_gates: false,
        },
    )
    .unwrap();
    randomize(&store, &mut rng(seed + 1), 0.5);
    (store, d)
}

fn features(seed: u64) -> Vec<FeatureMap<f64>> {
    let mut r = rng(seed);
    [(4, 4), (2, 2), (1, 1)]
        .iter()
        .enumerate()
        .map(|(s, &g)| FeatureMap::new(random_tensor(&mut r, &[g.0 * g.1, 4], 1.0), g, s + 1).unwrap())
        .collect()
}

fn oracle_run(d: &Decoder<f64>, feats: &[FeatureMap<f64>], rule: MemoryRule) -> tsg_oracle::DecoderRun {
    let up: Vec<Mat> = feats
        .iter()
        .map(|f| tsg_oracle::upsample_bilinear(&mat(&f.data), f.grid, (4, 4)))
        .collect();
    let blocks: Vec<_> = d.blocks.iter().map(dec_block).collect();
    let gates: Vec<_> = d.gates.iter().map(gate).collect();
    tsg_oracle::decoder(&up, &mat(&d.queries.tokens), &blocks, &gates, rule)
}

#[test]
fn decoder_matches_full_oracle() {
    for seed in 0..20 {
        let (_s, d) = decoder(seed, 2 + seed as usize % 2, DecoderFusion::Tsgd, 3);
        let feats = features(seed + 50);
        let out = d.forward(&feats, (4, 4), &GateMode::Learned).unwrap();
        let o = oracle_run(&d, &feats, MemoryRule::Gated);
        assert_eq!(out.y.shape(), &[3, 4]);
        assert_close("Y", &out.y.to_vec(), &o.y.data, 1e-8);
        assert_eq!(out.gates.len(), d.blocks.len() - 1);
        for (a, b) in out.gates.iter().zip(&o.gates) {
            assert_close("gates", &a.gates.to_vec(), &b.data, 1e-9);
        }
        for (a, b) in out.memories.iter().zip(&o.memories) {
            assert_close("memory", &a.to_vec(), &b.data, 1e-9);
        }
    }
}

#[test]
fn single_block_decoder_uses_plain_sum_only() {
    let (_s, d) = decoder(3, 1, DecoderFusion::Tsgd, 3);
    assert!(d.gates.is_empty());
    let feats = features(4);
    let out = d.forward(&feats, (4, 4), &GateMode::Learned).unwrap();
    assert!(out.gates.is_empty());
    let up = Decoder::upsample_all(&feats, (4, 4)).unwrap();
    assert_eq!(out.memories[0].to_vec(), tsgd_fuse_first(&up).unwrap().to_vec());
}

#[test]
fn block_one_is_sum_and_uniform_variants_agree() {
    let (_s, d) = decoder(5, 3, DecoderFusion::Tsgd, 3);
    let feats = features(6);
    let up = Decoder::upsample_all(&feats, (4, 4)).unwrap();
    let learned = d.forward(&feats, (4, 4), &GateMode::Learned).unwrap();
    assert_eq!(learned.memories[0].to_vec(), tsgd_fuse_first(&up).unwrap().to_vec());
    let forced = d.forward(&feats, (4, 4), &GateMode::Uniform).unwrap();
    let uniform = Decoder { fusion: DecoderFusion::Uniform, ..d.clone() };
    let u = uniform.forward(&feats, (4, 4), &GateMode::Learned).unwrap();
    assert_eq!(forced.y.to_vec(), u.y.to_vec());
    let o = oracle_run(&d, &feats, MemoryRule::Mean);
    assert_close("mean decoder", &u.y.to_vec(), &o.y.data, 1e-8);
    d.gates.iter().for_each(|g| g.zero_output_layer());
    let zeroed = d.forward(&feats, (4, 4), &GateMode::Learned).unwrap();
    let mean: Vec<f64> = tsgd_fuse_first(&up).unwrap().to_vec().iter().map(|v| v / 3.0).collect();
    for m in &zeroed.memories[1..] {
        assert_close("zero-init gate memory", &m.to_vec(), &mean, 1e-9);
    }
    let sum = Decoder { fusion: DecoderFusion::Sum, gates: Vec::new(), ..d.clone() };
    let s = sum.forward(&feats, (4, 4), &GateMode::Learned).unwrap();
    let o = oracle_run(&sum, &feats, MemoryRule::Sum);
    assert_close("sum decoder", &s.y.to_vec(), &o.y.data, 1e-8);
}

#[test]
fn decoder_rejects_wrong_scale_count() {
    let (_s, d) = decoder(7, 2, DecoderFusion::Tsgd, 3);
    let feats = features(8);
    assert!(d.forward(&feats[..2], (4, 4), &GateMode::Learned).is_err());
    assert!(d.forward(&feats, (4, 4), &GateMode::Fixed(vec![0.5, 0.5])).is_err());
}
