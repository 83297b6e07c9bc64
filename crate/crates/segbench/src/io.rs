//! Dataset directories: `NNNNN.ppm` (P6 image), `NNNNN.pgm` (P5 labels,
//! gray value = class) and `NNNNN.json` (meta) per sample.

use std::fs;
use std::path::{Path, PathBuf};

use crate::generate::{SampleMeta, SegSample};
use crate::{BenchError, Result};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> BenchError {
    BenchError::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn write_netpbm(path: &Path, magic: &str, width: usize, height: usize, pixels: &[u8]) -> Result<()> {
    let mut bytes = format!("{magic}\n{width} {height}\n255\n").into_bytes();
    bytes.extend_from_slice(pixels);
    fs::write(path, bytes).map_err(io_err(path))
}

pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    assert_eq!(rgb.len(), width * height * 3, "ppm buffer size");
    write_netpbm(path, "P6", width, height, rgb)
}

pub fn write_pgm(path: &Path, width: usize, height: usize, gray: &[u8]) -> Result<()> {
    assert_eq!(gray.len(), width * height, "pgm buffer size");
    write_netpbm(path, "P5", width, height, gray)
}

/// Returns `(width, height, pixels)`.
fn read_netpbm(path: &Path, magic: &[u8], channels: usize) -> Result<(usize, usize, Vec<u8>)> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(format_err(path, "truncated header"));
        }
        fields.push(&bytes[start..pos]);
    }
    if fields[0] != magic {
        return Err(format_err(
            path,
            format!("expected {} file", String::from_utf8_lossy(magic)),
        ));
    }
    let num = |f: &[u8]| -> Result<usize> {
        std::str::from_utf8(f)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| format_err(path, "bad header number"))
    };
    let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval != 255 {
        return Err(format_err(path, format!("maxval {maxval}, expected 255")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width * height * channels;
    if bytes.len() < pos + need {
        return Err(format_err(path, "truncated raster"));
    }
    Ok((width, height, bytes[pos..pos + need].to_vec()))
}

pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    read_netpbm(path, b"P6", 3)
}

pub fn read_pgm(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    read_netpbm(path, b"P5", 1)
}

fn stem(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("{index:05}"))
}

pub fn write_sample(dir: &Path, index: usize, sample: &SegSample) -> Result<()> {
    let (h, w) = sample.size();
    let base = stem(dir, index);
    write_ppm(&base.with_extension("ppm"), w, h, &sample.image)?;
    write_pgm(&base.with_extension("pgm"), w, h, &sample.labels)?;
    let json_path = base.with_extension("json");
    let json = serde_json::to_string_pretty(&sample.meta).map_err(|source| BenchError::Json {
        path: json_path.clone(),
        source,
    })?;
    fs::write(&json_path, json).map_err(io_err(&json_path))
}

pub fn write_dataset(dir: &Path, samples: &[SegSample]) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    samples
        .iter()
        .enumerate()
        .try_for_each(|(i, s)| write_sample(dir, i, s))
}

/// Reads the sample whose meta file is `json_path`.
pub fn read_sample(json_path: &Path) -> Result<SegSample> {
    let text = fs::read_to_string(json_path).map_err(io_err(json_path))?;
    let meta: SampleMeta = serde_json::from_str(&text).map_err(|source| BenchError::Json {
        path: json_path.to_path_buf(),
        source,
    })?;
    let ppm = json_path.with_extension("ppm");
    let pgm = json_path.with_extension("pgm");
    let (w, h, image) = read_ppm(&ppm)?;
    let (lw, lh, labels) = read_pgm(&pgm)?;
    if (w, h) != (meta.width, meta.height) || (lw, lh) != (w, h) {
        return Err(format_err(json_path, "image, labels and meta disagree on size"));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l as usize >= meta.classes) {
        return Err(format_err(&pgm, format!("label {bad} outside 0..{}", meta.classes)));
    }
    Ok(SegSample { image, labels, meta })
}

/// Every sample in `dir`, ordered by file name.
pub fn read_dataset(dir: &Path) -> Result<Vec<SegSample>> {
    let mut metas: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    metas.sort();
    if metas.is_empty() {
        return Err(BenchError::EmptyDataset(dir.to_path_buf()));
    }
    metas.iter().map(|p| read_sample(p)).collect()
}
