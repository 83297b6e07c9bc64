//! Loop-based reference implementations used as test oracles.
//!
//! Everything here is written with explicit index loops over plain `f64`
//! buffers and shares no code with the production crates.

use std::collections::BTreeSet;

/// Row-major dense matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "oracle matrix size");
        Mat { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        (0..self.cols).map(|c| self.get(r, c)).collect()
    }
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.rows);
    let mut out = Mat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for j in 0..b.cols {
            let mut acc = 0.0;
            for k in 0..a.cols {
                acc += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, acc);
        }
    }
    out
}

pub fn transpose(a: &Mat) -> Mat {
    let mut out = Mat::zeros(a.cols, a.rows);
    for i in 0..a.rows {
        for j in 0..a.cols {
            out.set(j, i, a.get(i, j));
        }
    }
    out
}

pub fn add(a: &Mat, b: &Mat) -> Mat {
    assert_eq!((a.rows, a.cols), (b.rows, b.cols));
    let mut out = a.clone();
    for i in 0..a.rows {
        for j in 0..a.cols {
            out.set(i, j, a.get(i, j) + b.get(i, j));
        }
    }
    out
}

pub fn scale(a: &Mat, s: f64) -> Mat {
    let mut out = a.clone();
    for i in 0..a.rows {
        for j in 0..a.cols {
            out.set(i, j, a.get(i, j) * s);
        }
    }
    out
}

/// Weight `d_in x d_out` and optional bias.
#[derive(Clone, Debug)]
pub struct LinearW {
    pub w: Mat,
    pub b: Option<Vec<f64>>,
}

pub fn linear(x: &Mat, l: &LinearW) -> Mat {
    let mut out = Mat::zeros(x.rows, l.w.cols);
    for i in 0..x.rows {
        for j in 0..l.w.cols {
            let mut acc = match &l.b {
                Some(b) => b[j],
                None => 0.0,
            };
            for k in 0..x.cols {
                acc += x.get(i, k) * l.w.get(k, j);
            }
            out.set(i, j, acc);
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct NormW {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

pub fn layernorm(x: &Mat, n: &NormW) -> Mat {
    let mut out = Mat::zeros(x.rows, x.cols);
    let d = x.cols as f64;
    for i in 0..x.rows {
        let mut mean = 0.0;
        for j in 0..x.cols {
            mean += x.get(i, j);
        }
        mean /= d;
        let mut var = 0.0;
        for j in 0..x.cols {
            var += (x.get(i, j) - mean).powi(2);
        }
        var /= d;
        for j in 0..x.cols {
            let v = (x.get(i, j) - mean) / (var + n.eps).sqrt() * n.gamma[j] + n.beta[j];
            out.set(i, j, v);
        }
    }
    out
}

pub fn gelu_scalar(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

pub fn gelu(x: &Mat) -> Mat {
    let mut out = x.clone();
    for v in out.data.iter_mut() {
        *v = gelu_scalar(*v);
    }
    out
}

/// Softmax of every row.
pub fn softmax_rows(x: &Mat) -> Mat {
    let mut out = Mat::zeros(x.rows, x.cols);
    for i in 0..x.rows {
        let mut m = f64::NEG_INFINITY;
        for j in 0..x.cols {
            m = m.max(x.get(i, j));
        }
        let mut z = 0.0;
        for j in 0..x.cols {
            z += (x.get(i, j) - m).exp();
        }
        for j in 0..x.cols {
            out.set(i, j, (x.get(i, j) - m).exp() / z);
        }
    }
    out
}

/// Softmax of every column.
pub fn softmax_cols(x: &Mat) -> Mat {
    transpose(&softmax_rows(&transpose(x)))
}

#[derive(Clone, Debug)]
pub struct MlpW {
    pub fc1: LinearW,
    pub fc2: LinearW,
}

pub fn mlp(x: &Mat, m: &MlpW) -> Mat {
    linear(&gelu(&linear(x, &m.fc1)), &m.fc2)
}

#[derive(Clone, Debug)]
pub struct AttnW {
    pub heads: usize,
    pub q: LinearW,
    pub k: LinearW,
    pub v: LinearW,
    pub o: LinearW,
    pub logit_scale: f64,
}

/// Result of one attention evaluation.
#[derive(Clone, Debug)]
pub struct AttnOut {
    pub output: Mat,
    /// Per head, normalized over keys.
    pub maps: Vec<Mat>,
    /// Per head, normalized over queries.
    pub class_maps: Vec<Mat>,
    /// Per head `maps * V`, before the output projection.
    pub heads: Vec<Mat>,
}

/// Multi-head attention with explicit loops over heads, queries and keys.
pub fn attention(queries: &Mat, memory: &Mat, a: &AttnW) -> AttnOut {
    let q = linear(queries, &a.q);
    let k = linear(memory, &a.k);
    let v = linear(memory, &a.v);
    let d = q.cols;
    let dh = d / a.heads;
    let (nq, nk) = (queries.rows, memory.rows);
    let mut maps = Vec::new();
    let mut class_maps = Vec::new();
    let mut heads = Vec::new();
    let mut concat = Mat::zeros(nq, d);
    for h in 0..a.heads {
        let mut logits = Mat::zeros(nq, nk);
        for i in 0..nq {
            for j in 0..nk {
                let mut dot = 0.0;
                for c in 0..dh {
                    dot += q.get(i, h * dh + c) * k.get(j, h * dh + c);
                }
                logits.set(i, j, dot * a.logit_scale);
            }
        }
        let map = softmax_rows(&logits);
        let mut hv = Mat::zeros(nq, dh);
        for i in 0..nq {
            for c in 0..dh {
                let mut acc = 0.0;
                for j in 0..nk {
                    acc += map.get(i, j) * v.get(j, h * dh + c);
                }
                hv.set(i, c, acc);
                concat.set(i, h * dh + c, acc);
            }
        }
        class_maps.push(softmax_cols(&logits));
        maps.push(map);
        heads.push(hv);
    }
    AttnOut {
        output: linear(&concat, &a.o),
        maps,
        class_maps,
        heads,
    }
}

#[derive(Clone, Debug)]
pub struct EncoderBlockW {
    pub norm1: NormW,
    pub attn: AttnW,
    pub norm2: NormW,
    pub mlp: MlpW,
}

/// Pre-norm encoder block; returns tokens and the self-attention maps.
pub fn encoder_block(x: &Mat, b: &EncoderBlockW) -> (Mat, Vec<Mat>) {
    let n = layernorm(x, &b.norm1);
    let att = attention(&n, &n, &b.attn);
    let x = add(x, &att.output);
    let x = add(&x, &mlp(&layernorm(&x, &b.norm2), &b.mlp));
    (x, att.maps)
}

#[derive(Clone, Debug)]
pub struct DecoderBlockW {
    pub norm1: NormW,
    pub self_attn: AttnW,
    pub norm2: NormW,
    pub cross_attn: AttnW,
    pub norm3: NormW,
    pub mlp: MlpW,
}

#[derive(Clone, Debug)]
pub struct DecoderBlockOut {
    pub queries: Mat,
    pub cross_maps: Vec<Mat>,
    pub class_maps: Vec<Mat>,
}

pub fn decoder_block(q: &Mat, memory: &Mat, b: &DecoderBlockW) -> DecoderBlockOut {
    let n = layernorm(q, &b.norm1);
    let sa = attention(&n, &n, &b.self_attn);
    let x = add(q, &sa.output);
    let ca = attention(&layernorm(&x, &b.norm2), memory, &b.cross_attn);
    let x = add(&x, &ca.output);
    let x = add(&x, &mlp(&layernorm(&x, &b.norm3), &b.mlp));
    DecoderBlockOut {
        queries: x,
        cross_maps: ca.maps,
        class_maps: ca.class_maps,
    }
}

/// Bilinear resize of an `(h*w) x d` map to `(th*tw) x d`, half-pixel
/// centers, edge clamping. Every output pixel is computed from its source
/// coordinate directly.
pub fn upsample_bilinear(x: &Mat, grid: (usize, usize), target: (usize, usize)) -> Mat {
    let (h, w) = grid;
    let (th, tw) = target;
    assert_eq!(x.rows, h * w);
    let coord = |o: usize, src: usize, dst: usize| -> (usize, usize, f64) {
        let s = ((o as f64 + 0.5) * src as f64 / dst as f64 - 0.5).max(0.0);
        let lo = (s.floor() as usize).min(src - 1);
        let hi = (lo + 1).min(src - 1);
        (lo, hi, s - lo as f64)
    };
    let mut out = Mat::zeros(th * tw, x.cols);
    for oy in 0..th {
        let (y0, y1, fy) = coord(oy, h, th);
        for ox in 0..tw {
            let (x0, x1, fx) = coord(ox, w, tw);
            for c in 0..x.cols {
                let v00 = x.get(y0 * w + x0, c);
                let v01 = x.get(y0 * w + x1, c);
                let v10 = x.get(y1 * w + x0, c);
                let v11 = x.get(y1 * w + x1, c);
                let top = v00 * (1.0 - fx) + v01 * fx;
                let bottom = v10 * (1.0 - fx) + v11 * fx;
                out.set(oy * tw + ox, c, top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    out
}

/// Patch flattening of an `h x w x c` image, `(py, px, channel)` order.
pub fn patchify(image: &[f64], size: (usize, usize), channels: usize, p: usize) -> Mat {
    let (h, w) = size;
    let (gh, gw) = (h / p, w / p);
    let mut out = Mat::zeros(gh * gw, p * p * channels);
    for gy in 0..gh {
        for gx in 0..gw {
            let mut col = 0;
            for py in 0..p {
                for px in 0..p {
                    for c in 0..channels {
                        let v = image[((gy * p + py) * w + gx * p + px) * channels + c];
                        out.set(gy * gw + gx, col, v);
                        col += 1;
                    }
                }
            }
        }
    }
    out
}

/// 2x2 neighborhood concatenation, order (0,0), (0,1), (1,0), (1,1).
pub fn merge_2x2(x: &Mat, grid: (usize, usize)) -> Mat {
    let (h, w) = grid;
    let d = x.cols;
    let mut out = Mat::zeros((h / 2) * (w / 2), 4 * d);
    for y in 0..h / 2 {
        for xx in 0..w / 2 {
            let r = y * (w / 2) + xx;
            let mut k = 0;
            for dy in 0..2 {
                for dx in 0..2 {
                    for c in 0..d {
                        out.set(r, k * d + c, x.get((2 * y + dy) * w + 2 * xx + dx, c));
                    }
                    k += 1;
                }
            }
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct GateW {
    /// One integration layer per source, aligned to the trailing sources.
    pub integrate: Vec<LinearW>,
    pub norm: NormW,
    pub mlp: MlpW,
    /// Average heads instead of concatenating them.
    pub average_heads: bool,
}

fn merge_heads(maps: &[Mat], average: bool) -> Mat {
    let rows = maps[0].rows;
    let cols = maps[0].cols;
    if average {
        let mut out = Mat::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                let mut acc = 0.0;
                for m in maps {
                    acc += m.get(i, j);
                }
                out.set(i, j, acc / maps.len() as f64);
            }
        }
        out
    } else {
        let mut out = Mat::zeros(rows, cols * maps.len());
        for (h, m) in maps.iter().enumerate() {
            for i in 0..rows {
                for j in 0..cols {
                    out.set(i, h * cols + j, m.get(i, j));
                }
            }
        }
        out
    }
}

/// Integrated map from several sources, each a list of per-head maps with
/// a common row count.
pub fn integrate_self(sources: &[Vec<Mat>], g: &GateW) -> Mat {
    let offset = g.integrate.len() - sources.len();
    let mut acc: Option<Mat> = None;
    for (i, maps) in sources.iter().enumerate() {
        let p = linear(&merge_heads(maps, g.average_heads), &g.integrate[offset + i]);
        acc = Some(match acc {
            Some(a) => add(&a, &p),
            None => p,
        });
    }
    acc.expect("at least one source")
}

/// Integrated map from class-softmax cross maps (`C x N` per head).
pub fn integrate_cross(class_maps: &[Mat], g: &GateW) -> Mat {
    let t: Vec<Mat> = class_maps.iter().map(transpose).collect();
    integrate_self(&[t], g)
}

pub fn gate(a: &Mat, g: &GateW) -> Mat {
    softmax_rows(&mlp(&layernorm(a, &g.norm), &g.mlp))
}

/// `sum_s g[n, s] * f_s[n, :]`.
pub fn gated_sum(features: &[Mat], gates: &Mat) -> Mat {
    let mut out = Mat::zeros(features[0].rows, features[0].cols);
    for n in 0..out.rows {
        for c in 0..out.cols {
            let mut acc = 0.0;
            for (s, f) in features.iter().enumerate() {
                acc += gates.get(n, s) * f.get(n, c);
            }
            out.set(n, c, acc);
        }
    }
    out
}

pub fn plain_sum(features: &[Mat]) -> Mat {
    let mut out = Mat::zeros(features[0].rows, features[0].cols);
    for n in 0..out.rows {
        for c in 0..out.cols {
            let mut acc = 0.0;
            for f in features {
                acc += f.get(n, c);
            }
            out.set(n, c, acc);
        }
    }
    out
}

/// Top-down fusion. `features[s]`/`maps[s]` belong to stage `s` with grid
/// `grids[s]`; `gates[s]` serves the step targeting stage `s`. With
/// `forced` set, those gate weights replace the learned ones.
pub fn top_down(
    features: &[Mat],
    maps: &[Vec<Mat>],
    grids: &[(usize, usize)],
    lateral: &[LinearW],
    gates: &[GateW],
    forced: Option<[f64; 2]>,
) -> (Vec<Mat>, Vec<Mat>) {
    let s_count = features.len();
    let mut refined = vec![Mat::zeros(0, 0); s_count];
    let mut all_gates = vec![Mat::zeros(0, 0); s_count - 1];
    refined[s_count - 1] = linear(&features[s_count - 1], &lateral[s_count - 1]);
    for s in (0..s_count - 1).rev() {
        let coarse = upsample_bilinear(&refined[s + 1], grids[s + 1], grids[s]);
        let fine = linear(&features[s], &lateral[s]);
        let rows = grids[s].0 * grids[s].1;
        let g = match forced {
            Some(w) => Mat::new(rows, 2, (0..rows).flat_map(|_| w).collect()),
            None => {
                let sources: Vec<Vec<Mat>> = (s..s_count)
                    .map(|t| {
                        maps[t]
                            .iter()
                            .map(|m| upsample_bilinear(m, grids[t], grids[s]))
                            .collect()
                    })
                    .collect();
                gate(&integrate_self(&sources, &gates[s]), &gates[s])
            }
        };
        refined[s] = gated_sum(&[coarse, fine], &g);
        all_gates[s] = g;
    }
    (refined, all_gates)
}

/// How decoder memory is formed after the first block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MemoryRule {
    Gated,
    Mean,
    Sum,
}

#[derive(Clone, Debug)]
pub struct DecoderRun {
    pub y: Mat,
    pub memories: Vec<Mat>,
    pub gates: Vec<Mat>,
}

/// Decoder over already upsampled features.
pub fn decoder(
    features_up: &[Mat],
    queries: &Mat,
    blocks: &[DecoderBlockW],
    gates: &[GateW],
    rule: MemoryRule,
) -> DecoderRun {
    let s_count = features_up.len();
    let mut y = queries.clone();
    let mut memories = Vec::new();
    let mut gate_mats = Vec::new();
    let mut prev: Option<Vec<Mat>> = None;
    for (l, b) in blocks.iter().enumerate() {
        let memory = if l == 0 || rule == MemoryRule::Sum {
            plain_sum(features_up)
        } else {
            let rows = features_up[0].rows;
            let g = match rule {
                MemoryRule::Mean => Mat::new(rows, s_count, vec![1.0 / s_count as f64; rows * s_count]),
                _ => {
                    let a = integrate_cross(prev.as_ref().expect("previous block"), &gates[l - 1]);
                    gate(&a, &gates[l - 1])
                }
            };
            let m = gated_sum(features_up, &g);
            gate_mats.push(g);
            m
        };
        let out = decoder_block(&y, &memory, b);
        y = out.queries;
        prev = Some(out.class_maps);
        memories.push(memory);
    }
    DecoderRun {
        y,
        memories,
        gates: gate_mats,
    }
}

/// `softmax(F Y^T / sqrt(d))` per patch.
pub fn predict(f: &Mat, y: &Mat) -> Mat {
    let d = y.cols as f64;
    let mut scores = Mat::zeros(f.rows, y.rows);
    for n in 0..f.rows {
        for c in 0..y.rows {
            let mut acc = 0.0;
            for k in 0..f.cols {
                acc += f.get(n, k) * y.get(c, k);
            }
            scores.set(n, c, acc / d.sqrt());
        }
    }
    softmax_rows(&scores)
}

/// Per-class IoU by counting pixel sets directly. Returns `None` for classes
/// absent from both masks, plus the mean over the rest.
pub fn miou(pred: &[usize], gt: &[usize], classes: usize, ignore: usize) -> (Vec<Option<f64>>, f64) {
    let mut per = Vec::with_capacity(classes);
    for c in 0..classes {
        let p: BTreeSet<usize> = (0..pred.len())
            .filter(|&i| gt[i] != ignore && pred[i] == c)
            .collect();
        let g: BTreeSet<usize> = (0..gt.len()).filter(|&i| gt[i] == c).collect();
        let union = p.union(&g).count();
        if union == 0 {
            per.push(None);
        } else {
            per.push(Some(p.intersection(&g).count() as f64 / union as f64));
        }
    }
    let defined: Vec<f64> = per.iter().flatten().copied().collect();
    let mean = if defined.is_empty() {
        f64::NAN
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    (per, mean)
}

/// Largest absolute elementwise difference.
pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "compared buffers differ in length");
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
