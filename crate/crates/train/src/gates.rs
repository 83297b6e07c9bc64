//! Decoder scale-gate export: one PGM per (block, scale), an argmax-scale
//! PGM per block, and all gates as CSV.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use tsg_core::TsgModel;
use tsg_segbench::{write_pgm, SegSample};
use tsg_tensor::Real;

use crate::error::io_err;
use crate::eval::check_compatible;
use crate::{Result, TrainError};

pub const GATES_CSV: &str = "gates.csv";

/// Gates of one decoder block, `rows x scales`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockGates {
    /// 1-based decoder block index (always >= 2).
    pub block: usize,
    pub scales: usize,
    pub values: Vec<f64>,
}

impl BlockGates {
    pub fn rows(&self) -> usize {
        self.values.len() / self.scales
    }

    pub fn column(&self, s: usize) -> Vec<f64> {
        self.values.iter().skip(s).step_by(self.scales).copied().collect()
    }

    /// Per-row argmax scale, ties to the finest.
    pub fn argmax(&self) -> Vec<usize> {
        self.values
            .chunks_exact(self.scales)
            .map(|row| {
                (1..row.len()).fold(0, |best, s| if row[s] > row[best] { s } else { best })
            })
            .collect()
    }
}

/// 8-bit gray level of a gate value.
pub fn quantize(g: f64) -> u8 {
    (255.0 * g).round().clamp(0.0, 255.0) as u8
}

/// Distinct gray level for scale `s` of `scales`, spread over `0..=255`.
pub fn scale_gray(s: usize, scales: usize) -> u8 {
    if scales <= 1 {
        return 255;
    }
    (255.0 * s as f64 / (scales - 1) as f64).round() as u8
}

/// Learned decoder gates of `model` on one image.
pub fn decoder_gates<F: Real>(model: &TsgModel<F>, sample: &SegSample) -> Result<Vec<BlockGates>> {
    if !model.has_decoder_gates() {
        return Err(TrainError::NoDecoderGates);
    }
    check_compatible(model, std::slice::from_ref(sample))?;
    let out = model.forward(&sample.image_tensor::<F>())?;
    Ok(out
        .decoder
        .gates
        .iter()
        .enumerate()
        .map(|(i, g)| BlockGates {
            block: i + 2,
            scales: g.num_scales,
            values: g.gates.to_f64_vec(),
        })
        .collect())
}

pub fn gates_csv(blocks: &[BlockGates]) -> String {
    let scales = blocks.first().map_or(0, |b| b.scales);
    let mut s = String::from("block,patch");
    for k in 1..=scales {
        let _ = write!(s, ",scale{k}");
    }
    s.push('\n');
    for b in blocks {
        for (n, row) in b.values.chunks_exact(b.scales).enumerate() {
            let _ = write!(s, "{},{n}", b.block);
            for v in row {
                let _ = write!(s, ",{v:.9}");
            }
            s.push('\n');
        }
    }
    s
}

/// Writes `gates_block{l}_scale{s}.pgm`, `argmax_block{l}.pgm` (both on the
/// finest patch grid, scales 1-based) and `gates.csv`. Returns the paths.
pub fn dump_gates<F: Real>(
    model: &TsgModel<F>,
    sample: &SegSample,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let blocks = decoder_gates(model, sample)?;
    let (gh, gw) = model.patch_grid();
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();
    for b in &blocks {
        for s in 0..b.scales {
            let gray: Vec<u8> = b.column(s).into_iter().map(quantize).collect();
            let p = out_dir.join(format!("gates_block{}_scale{}.pgm", b.block, s + 1));
            write_pgm(&p, gw, gh, &gray)?;
            written.push(p);
        }
        let arg: Vec<u8> = b.argmax().into_iter().map(|s| scale_gray(s, b.scales)).collect();
        let p = out_dir.join(format!("argmax_block{}.pgm", b.block));
        write_pgm(&p, gw, gh, &arg)?;
        written.push(p);
    }
    let p = out_dir.join(GATES_CSV);
    std::fs::write(&p, gates_csv(&blocks)).map_err(io_err(&p))?;
    written.push(p);
    Ok(written)
}
