//! Shared helpers: random inputs and conversion of model weights into the
//! oracle's plain matrices.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tsg_core::Backbone;
use tsg_core::attention::{DecoderBlock, EncoderBlock, MultiHeadAttention};
use tsg_core::nn::{LayerNorm, Linear, Mlp};
use tsg_core::scale_gate::{HeadMerge, ScaleGate};
use tsg_oracle::{AttnW, DecoderBlockW, EncoderBlockW, GateW, LinearW, Mat, MlpW, NormW};
use tsg_tensor::{ParamStore, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_f64(shape, &random_vec(rng, n, scale)).unwrap()
}

pub fn random_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::new(rows, cols, random_vec(rng, rows * cols, scale))
}

pub fn tensor(m: &Mat) -> Tensor<f64> {
    Tensor::from_f64(&[m.rows, m.cols], &m.data).unwrap()
}

/// Row-stochastic random matrix.
pub fn random_stochastic(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Mat {
    let mut m = Mat::zeros(rows, cols);
    for i in 0..rows {
        let raw: Vec<f64> = (0..cols).map(|_| rng.random_range(0.01..1.0)).collect();
        let z: f64 = raw.iter().sum();
        for (j, v) in raw.iter().enumerate() {
            m.set(i, j, v / z);
        }
    }
    m
}

/// Overwrites every parameter with uniform values in `[-scale, scale]`;
/// layernorm gains are kept near one.
pub fn randomize(store: &ParamStore<f64>, rng: &mut ChaCha8Rng, scale: f64) {
    for p in store.params() {
        let n = p.tensor.numel();
        let mut v = random_vec(rng, n, scale);
        if p.name.ends_with(".gamma") {
            v.iter_mut().for_each(|x| *x += 1.0);
        }
        p.tensor.set_data(v).unwrap();
    }
}

pub fn mat(t: &Tensor<f64>) -> Mat {
    let s = t.shape();
    match s.len() {
        1 => Mat::new(1, s[0], t.to_vec()),
        2 => Mat::new(s[0], s[1], t.to_vec()),
        _ => panic!("mat: rank {} tensor", s.len()),
    }
}

pub fn lin(l: &Linear<f64>) -> LinearW {
    LinearW {
        w: mat(&l.weight),
        b: l.bias.as_ref().map(|b| b.to_vec()),
    }
}

pub fn norm(n: &LayerNorm<f64>) -> NormW {
    NormW {
        gamma: n.gamma.to_vec(),
        beta: n.beta.to_vec(),
        eps: n.eps,
    }
}

pub fn mlp(m: &Mlp<f64>) -> MlpW {
    MlpW {
        fc1: lin(&m.fc1),
        fc2: lin(&m.fc2),
    }
}

pub fn attn(a: &MultiHeadAttention<f64>) -> AttnW {
    AttnW {
        heads: a.cfg.heads,
        q: lin(&a.query),
        k: lin(&a.key),
        v: lin(&a.value),
        o: lin(&a.output),
        logit_scale: a.logit_scale,
    }
}

pub fn enc_block(b: &EncoderBlock<f64>) -> EncoderBlockW {
    EncoderBlockW {
        norm1: norm(&b.norm1),
        attn: attn(&b.attn),
        norm2: norm(&b.norm2),
        mlp: mlp(&b.mlp),
    }
}

pub fn dec_block(b: &DecoderBlock<f64>) -> DecoderBlockW {
    DecoderBlockW {
        norm1: norm(&b.norm1),
        self_attn: attn(&b.self_attn),
        norm2: norm(&b.norm2),
        cross_attn: attn(&b.cross_attn),
        norm3: norm(&b.norm3),
        mlp: mlp(&b.mlp),
    }
}

pub fn gate(g: &ScaleGate<f64>) -> GateW {
    GateW {
        integrate: g.integrate.iter().map(lin).collect(),
        norm: norm(&g.norm),
        mlp: mlp(&g.mlp),
        average_heads: g.head_merge == HeadMerge::Average,
    }
}

pub fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    tsg_oracle::max_abs_diff(a, b) <= tol
}

pub fn assert_close(what: &str, a: &[f64], b: &[f64], tol: f64) {
    let d = tsg_oracle::max_abs_diff(a, b);
    assert!(d <= tol, "{what}: max abs diff {d:e} > {tol:e}");
}

/// Loop-oracle backbone: stage features and last-block maps per stage.
pub fn oracle_backbone(b: &Backbone<f64>, img: &Tensor<f64>) -> (Vec<Mat>, Vec<Vec<Mat>>) {
    let cfg = &b.cfg;
    let mut x = tsg_oracle::linear(
        &tsg_oracle::patchify(&img.to_vec(), cfg.image_size, 3, cfg.patch_size),
        &lin(&b.patch_embed),
    );
    if let Some(p) = &b.pos_embed {
        x = tsg_oracle::add(&x, &mat(p));
    }
    let mut feats = Vec::new();
    let mut maps = Vec::new();
    for (s, stage) in b.stages.iter().enumerate() {
        if s > 0 {
            x = tsg_oracle::linear(
                &tsg_oracle::merge_2x2(&x, cfg.grid(s - 1)),
                &lin(stage.merge.as_ref().unwrap()),
            );
        }
        let mut last = Vec::new();
        for blk in &stage.blocks {
            let (y, m) = tsg_oracle::encoder_block(&x, &enc_block(blk));
            x = y;
            last = m;
        }
        feats.push(x.clone());
        maps.push(last);
    }
    (feats, maps)
}

/// Loop-oracle forward of a whole model with all scales (gated decoder
/// when the model has decoder gates). Returns patch class probabilities.
pub fn oracle_model(model: &tsg_core::TsgModel<f64>, img: &Tensor<f64>) -> Mat {
    use tsg_core::model::Neck;
    let (feats, maps) = oracle_backbone(&model.backbone, img);
    let cfg = &model.cfg.encoder;
    let grids: Vec<(usize, usize)> = (0..cfg.num_stages()).map(|s| cfg.grid(s)).collect();
    let Neck::Fusion(f) = &model.neck else {
        panic!("oracle_model expects a multi-scale model")
    };
    let lateral: Vec<LinearW> = f.lateral.iter().map(lin).collect();
    let refined = match f.fusion {
        tsg_core::EncoderFusion::Projection => feats.iter().zip(&lateral).map(|(x, l)| tsg_oracle::linear(x, l)).collect(),
        tsg_core::EncoderFusion::Fpn => tsg_oracle::top_down(&feats, &maps, &grids, &lateral, &[], Some([0.5, 0.5])).0,
        tsg_core::EncoderFusion::Tsge => {
            let gates: Vec<GateW> = f.gates.iter().map(gate).collect();
            tsg_oracle::top_down(&feats, &maps, &grids, &lateral, &gates, None).0
        }
    };
    let up: Vec<Mat> = refined
        .iter()
        .zip(&grids)
        .map(|(x, &g)| tsg_oracle::upsample_bilinear(x, g, grids[0]))
        .collect();
    let d = &model.decoder;
    let blocks: Vec<DecoderBlockW> = d.blocks.iter().map(dec_block).collect();
    let gates: Vec<GateW> = d.gates.iter().map(gate).collect();
    let rule = match d.fusion {
        tsg_core::DecoderFusion::Tsgd => tsg_oracle::MemoryRule::Gated,
        tsg_core::DecoderFusion::Uniform => tsg_oracle::MemoryRule::Mean,
        tsg_core::DecoderFusion::Sum => tsg_oracle::MemoryRule::Sum,
    };
    let run = tsg_oracle::decoder(&up, &mat(&d.queries.tokens), &blocks, &gates, rule);
    tsg_oracle::predict(run.memories.last().unwrap(), &run.y)
}
