//! Seeded synthetic scenes: a textured background with rectangles and
//! ellipses of several size classes, each class with its own color prior.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tsg_tensor::{Real, Tensor};

use crate::{BenchError, Result, IGNORE_INDEX};

/// Object size class by area fraction of the image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeBucket {
    Small,
    Medium,
    Large,
}

impl SizeBucket {
    pub const ALL: [SizeBucket; 3] = [SizeBucket::Small, SizeBucket::Medium, SizeBucket::Large];

    /// Small is at most 3% of the image, large at least 20%.
    pub fn of_fraction(f: f64) -> Self {
        if f <= 0.03 {
            SizeBucket::Small
        } else if f >= 0.20 {
            SizeBucket::Large
        } else {
            SizeBucket::Medium
        }
    }

    /// Area fractions targets are drawn from.
    pub fn target_range(self) -> (f64, f64) {
        match self {
            SizeBucket::Small => (0.01, 0.028),
            SizeBucket::Medium => (0.05, 0.15),
            SizeBucket::Large => (0.21, 0.35),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SizeBucket::Small => "small",
            SizeBucket::Medium => "medium",
            SizeBucket::Large => "large",
        }
    }
}

/// Relative weights of the size classes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SizeMix {
    pub small: f64,
    pub medium: f64,
    pub large: f64,
}

impl Default for SizeMix {
    fn default() -> Self {
        SizeMix {
            small: 0.45,
            medium: 0.35,
            large: 0.2,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub height: usize,
    pub width: usize,
    /// Class count including background (class 0).
    pub classes: usize,
    /// Inclusive range of requested objects per image.
    pub objects: (usize, usize),
    pub size_mix: SizeMix,
    /// Per-object color offset amplitude.
    pub color_jitter: f64,
    /// Per-pixel noise amplitude.
    pub noise: f64,
    /// Fraction of an object that must stay visible under later objects.
    pub min_visible: f64,
    /// Placement attempts per object before it is dropped.
    pub max_retries: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            height: 64,
            width: 64,
            classes: 5,
            objects: (2, 5),
            size_mix: SizeMix::default(),
            color_jitter: 0.1,
            noise: 0.08,
            min_visible: 0.5,
            max_retries: 32,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > 256 {
            return Err(BenchError::Config(format!(
                "classes must be in 2..=256, got {}",
                self.classes
            )));
        }
        if self.height < 8 || self.width < 8 {
            return Err(BenchError::Config("images must be at least 8x8".into()));
        }
        if self.objects.0 > self.objects.1 {
            return Err(BenchError::Config("object range is empty".into()));
        }
        let m = self.size_mix;
        if m.small < 0.0 || m.medium < 0.0 || m.large < 0.0 || m.small + m.medium + m.large <= 0.0
        {
            return Err(BenchError::Config("size mix weights must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Object geometry in integer pixel units. Ellipses use doubled
/// coordinates so pixel centers `(2x+1, 2y+1)` test exactly.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Shape {
    Rect { x0: i64, y0: i64, w: i64, h: i64 },
    Ellipse { cx2: i64, cy2: i64, a2: i64, b2: i64 },
}

impl Shape {
    pub fn contains(&self, x: i64, y: i64) -> bool {
        match *self {
            Shape::Rect { x0, y0, w, h } => x >= x0 && x < x0 + w && y >= y0 && y < y0 + h,
            Shape::Ellipse { cx2, cy2, a2, b2 } => {
                let dx = 2 * x + 1 - cx2;
                let dy = 2 * y + 1 - cy2;
                dx * dx * b2 * b2 + dy * dy * a2 * a2 <= a2 * a2 * b2 * b2
            }
        }
    }

    /// Candidate pixel window `[x0, x1) x [y0, y1)` clipped to the image.
    fn window(&self, width: usize, height: usize) -> (i64, i64, i64, i64) {
        let (x0, y0, x1, y1) = match *self {
            Shape::Rect { x0, y0, w, h } => (x0, y0, x0 + w, y0 + h),
            Shape::Ellipse { cx2, cy2, a2, b2 } => (
                (cx2 - a2 - 1).div_euclid(2),
                (cy2 - b2 - 1).div_euclid(2),
                (cx2 + a2 - 1).div_euclid(2) + 1,
                (cy2 + b2 - 1).div_euclid(2) + 1,
            ),
        };
        (
            x0.max(0),
            y0.max(0),
            x1.min(width as i64),
            y1.min(height as i64),
        )
    }

    /// Flat indices of covered pixels, row-major.
    pub fn pixels(&self, width: usize, height: usize) -> Vec<usize> {
        let (x0, y0, x1, y1) = self.window(width, height);
        let mut out = Vec::new();
        for y in y0..y1 {
            for x in x0..x1 {
                if self.contains(x, y) {
                    out.push(y as usize * width + x as usize);
                }
            }
        }
        out
    }

    fn mirrored(&self, width: usize) -> Shape {
        let w = width as i64;
        match *self {
            Shape::Rect { x0, y0, w: rw, h } => Shape::Rect {
                x0: w - x0 - rw,
                y0,
                w: rw,
                h,
            },
            Shape::Ellipse { cx2, cy2, a2, b2 } => Shape::Ellipse {
                cx2: 2 * w - cx2,
                cy2,
                a2,
                b2,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectMeta {
    pub class: usize,
    pub shape: Shape,
    /// Tight pixel box `[x0, y0, x1, y1)` of the full shape.
    pub bbox: [usize; 4],
    /// Full (unoccluded) pixel count.
    pub area: usize,
    /// Pixels still showing after later objects are drawn.
    pub visible: usize,
    pub bucket: SizeBucket,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    pub requested_objects: usize,
    /// Placed objects in drawing order (later ones occlude earlier ones).
    pub objects: Vec<ObjectMeta>,
}

impl SampleMeta {
    pub fn placed_objects(&self) -> usize {
        self.objects.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegSample {
    /// `H x W x 3` channel values `k/255`, stored as the byte `k`.
    pub image: Vec<u8>,
    /// `H x W` class indices; 0 is background.
    pub labels: Vec<u8>,
    pub meta: SampleMeta,
}

impl SegSample {
    pub fn size(&self) -> (usize, usize) {
        (self.meta.height, self.meta.width)
    }

    /// Image as an `H x W x 3` tensor with values in `[0, 1]`.
    pub fn image_tensor<F: Real>(&self) -> Tensor<F> {
        let (h, w) = self.size();
        let data = self.image.iter().map(|&v| F::lit(v as f64 / 255.0)).collect();
        Tensor::new(&[h, w, 3], data).expect("image buffer matches its size")
    }

    pub fn label_vec(&self) -> Vec<usize> {
        self.labels.iter().map(|&l| l as usize).collect()
    }
}

const PALETTE: [[f64; 3]; 8] = [
    [0.85, 0.2, 0.2],
    [0.2, 0.75, 0.25],
    [0.2, 0.3, 0.85],
    [0.9, 0.8, 0.15],
    [0.75, 0.25, 0.8],
    [0.15, 0.8, 0.8],
    [0.95, 0.55, 0.1],
    [0.5, 0.3, 0.1],
];

/// Color prior of a foreground class (`class >= 1`).
pub fn class_color(class: usize) -> [f64; 3] {
    if class - 1 < PALETTE.len() {
        return PALETTE[class - 1];
    }
    // Spread further classes around the hue circle.
    let hue = (class as f64 * 0.618_033_988_75).fract() * 6.0;
    let x = 1.0 - (hue % 2.0 - 1.0).abs();
    let (r, g, b) = match hue as usize {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [0.1 + 0.8 * r, 0.1 + 0.8 * g, 0.1 + 0.8 * b]
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of sample `index` in a dataset seeded with `dataset_seed`; depends
/// only on the pair, never on generation order.
pub fn sample_seed(dataset_seed: u64, index: u64) -> u64 {
    splitmix64(dataset_seed ^ splitmix64(index.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

fn draw_bucket(rng: &mut ChaCha8Rng, mix: &SizeMix) -> SizeBucket {
    let total = mix.small + mix.medium + mix.large;
    let u = rng.random::<f64>() * total;
    if u < mix.small {
        SizeBucket::Small
    } else if u < mix.small + mix.medium {
        SizeBucket::Medium
    } else {
        SizeBucket::Large
    }
}

fn draw_shape(rng: &mut ChaCha8Rng, target: f64, cfg: &GenConfig) -> Shape {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let aspect: f64 = rng.random_range(0.6..1.6);
    if rng.random_bool(0.5) {
        let rw = ((target * aspect).sqrt().round() as i64).clamp(1, cfg.width as i64);
        let rh = ((target / rw as f64).round() as i64).clamp(1, cfg.height as i64);
        Shape::Rect {
            x0: rng.random_range(0..=cfg.width as i64 - rw),
            y0: rng.random_range(0..=cfg.height as i64 - rh),
            w: rw,
            h: rh,
        }
    } else {
        let a = (target * aspect / std::f64::consts::PI).sqrt();
        let b = target / (std::f64::consts::PI * a);
        let a2 = ((2.0 * a).round() as i64).clamp(1, w as i64);
        let b2 = ((2.0 * b).round() as i64).clamp(1, h as i64);
        Shape::Ellipse {
            cx2: rng.random_range(a2..=2 * cfg.width as i64 - a2),
            cy2: rng.random_range(b2..=2 * cfg.height as i64 - b2),
            a2,
            b2,
        }
    }
}

fn tight_bbox(pixels: &[usize], width: usize) -> [usize; 4] {
    let mut b = [usize::MAX, usize::MAX, 0, 0];
    for &p in pixels {
        let (x, y) = (p % width, p / width);
        b[0] = b[0].min(x);
        b[1] = b[1].min(y);
        b[2] = b[2].max(x + 1);
        b[3] = b[3].max(y + 1);
    }
    b
}

/// Renders one sample. Identical `(seed, cfg)` give bit-identical output.
pub fn generate(seed: u64, cfg: &GenConfig) -> Result<SegSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (cfg.height, cfg.width);
    let n_pix = h * w;

    let requested = rng.random_range(cfg.objects.0..=cfg.objects.1);
    let mut wanted: Vec<(usize, f64)> = (0..requested)
        .map(|_| {
            let (lo, hi) = draw_bucket(&mut rng, &cfg.size_mix).target_range();
            let frac = rng.random_range(lo..hi);
            (rng.random_range(1..cfg.classes), frac * n_pix as f64)
        })
        .collect();
    // Large objects first so small ones end up on top.
    wanted.sort_by(|a, b| b.1.total_cmp(&a.1));

    let mut owner: Vec<Option<usize>> = vec![None; n_pix];
    let mut objects: Vec<ObjectMeta> = Vec::new();
    for (class, target) in wanted {
        for _ in 0..cfg.max_retries {
            let shape = draw_shape(&mut rng, target, cfg);
            let pixels = shape.pixels(w, h);
            if pixels.is_empty() {
                continue;
            }
            let mut lost = vec![0usize; objects.len()];
            for &p in &pixels {
                if let Some(j) = owner[p] {
                    lost[j] += 1;
                }
            }
            let ok = objects.iter().zip(&lost).all(|(o, &l)| {
                (o.visible - l) as f64 >= cfg.min_visible * o.area as f64
            });
            if !ok {
                continue;
            }
            for (o, l) in objects.iter_mut().zip(&lost) {
                o.visible -= l;
            }
            let id = objects.len();
            for &p in &pixels {
                owner[p] = Some(id);
            }
            objects.push(ObjectMeta {
                class,
                shape,
                bbox: tight_bbox(&pixels, w),
                area: pixels.len(),
                visible: pixels.len(),
                bucket: SizeBucket::of_fraction(pixels.len() as f64 / n_pix as f64),
            });
            break;
        }
    }

    // Background: tinted gray with a smooth gradient and a soft stripe.
    let base: f64 = rng.random_range(0.4..0.6);
    let tint: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.04..0.04));
    let (gx, gy): (f64, f64) = (rng.random_range(-0.15..0.15), rng.random_range(-0.15..0.15));
    let freq: f64 = rng.random_range(0.1..0.4);
    let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let colors: Vec<[f64; 3]> = objects
        .iter()
        .map(|o| {
            let c = class_color(o.class);
            std::array::from_fn(|k| c[k] + rng.random_range(-cfg.color_jitter..=cfg.color_jitter))
        })
        .collect();

    let mut image = vec![0u8; n_pix * 3];
    let mut labels = vec![0u8; n_pix];
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            let color = match owner[p] {
                Some(j) => {
                    labels[p] = objects[j].class as u8;
                    colors[j]
                }
                None => {
                    let v = base
                        + gx * (x as f64 / w as f64 - 0.5)
                        + gy * (y as f64 / h as f64 - 0.5)
                        + 0.05 * (freq * (x as f64 + 0.7 * y as f64) + phase).sin();
                    std::array::from_fn(|k| v + tint[k])
                }
            };
            for k in 0..3 {
                let v = color[k] + rng.random_range(-cfg.noise..=cfg.noise);
                image[p * 3 + k] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
    }
    Ok(SegSample {
        image,
        labels,
        meta: SampleMeta {
            seed,
            height: h,
            width: w,
            classes: cfg.classes,
            requested_objects: requested,
            objects,
        },
    })
}

/// `count` samples with seeds `sample_seed(seed, i)`.
pub fn generate_dataset(seed: u64, count: usize, cfg: &GenConfig) -> Result<Vec<SegSample>> {
    (0..count)
        .map(|i| generate(sample_seed(seed, i as u64), cfg))
        .collect()
}

/// Per-pixel index of the topmost object, recomputed from the meta shapes.
pub fn object_id_map(meta: &SampleMeta) -> Vec<Option<usize>> {
    let mut ids = vec![None; meta.height * meta.width];
    for (j, o) in meta.objects.iter().enumerate() {
        for p in o.shape.pixels(meta.width, meta.height) {
            ids[p] = Some(j);
        }
    }
    ids
}

/// Majority label of each `patch x patch` block, ties to the lowest class.
/// Pixels equal to [`IGNORE_INDEX`] do not vote; fully ignored patches get
/// [`IGNORE_INDEX`].
pub fn patch_labels(labels: &[u8], size: (usize, usize), patch: usize, classes: usize) -> Vec<usize> {
    let (h, w) = size;
    let (gh, gw) = (h / patch, w / patch);
    let mut out = Vec::with_capacity(gh * gw);
    let mut votes = vec![0usize; classes];
    for gy in 0..gh {
        for gx in 0..gw {
            votes.iter_mut().for_each(|v| *v = 0);
            for y in gy * patch..(gy + 1) * patch {
                for x in gx * patch..(gx + 1) * patch {
                    let l = labels[y * w + x] as usize;
                    if l != IGNORE_INDEX && l < classes {
                        votes[l] += 1;
                    }
                }
            }
            let mut best = IGNORE_INDEX;
            let mut best_votes = 0;
            for (c, &v) in votes.iter().enumerate() {
                if v > best_votes {
                    best = c;
                    best_votes = v;
                }
            }
            out.push(best);
        }
    }
    out
}

/// Mirrors a sample left to right, meta included.
pub fn flip_horizontal(sample: &SegSample) -> SegSample {
    let (h, w) = sample.size();
    let mut image = vec![0u8; sample.image.len()];
    let mut labels = vec![0u8; sample.labels.len()];
    for y in 0..h {
        for x in 0..w {
            let (src, dst) = (y * w + x, y * w + (w - 1 - x));
            labels[dst] = sample.labels[src];
            image[dst * 3..dst * 3 + 3].copy_from_slice(&sample.image[src * 3..src * 3 + 3]);
        }
    }
    let mut meta = sample.meta.clone();
    for o in &mut meta.objects {
        o.shape = o.shape.mirrored(w);
        o.bbox = [w - o.bbox[2], o.bbox[1], w - o.bbox[0], o.bbox[3]];
    }
    SegSample {
        image,
        labels,
        meta,
    }
}
