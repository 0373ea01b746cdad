//! Procedural fish-like images with known labels.
//!
//! Every shape is described in a 320×240 reference frame and rasterized by
//! sampling pixel centres, so rendering the same pose on a canvas twice as
//! large produces the same fish at twice the size. Rendering is a pure
//! function of `(spec, seed, config)`.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::features::HeadSide;
use crate::imageio::{encode_ppm, write_manifest, ManifestEntry, Rgb, RgbImage, Split};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("canvas {width}x{height} is too small (minimum {MIN_CANVAS}x{MIN_CANVAS})")]
    CanvasTooSmall { width: usize, height: usize },
    #[error("invalid family spec {name:?}: {reason}")]
    InvalidSpec { name: String, reason: String },
    #[error("{counts} count list has {found} entries for {expected} families")]
    CountMismatch {
        counts: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("cannot write {path}: {source}")]
    IoFailure {
        path: PathBuf,
        source: std::io::Error,
    },
}

pub const MIN_CANVAS: usize = 64;

/// Size of the reference frame all geometry is expressed in.
const REF_WIDTH: f64 = 320.0;
const REF_HEIGHT: f64 = 240.0;
/// Clearance from every border, reference units (never below 5 px on any canvas).
const MARGIN: f64 = 6.0;
const EYE_RADIUS: f64 = 3.0;
const EYE_COLOR: Rgb = Rgb::new(20, 20, 20);
const SPOT_COLOR: Rgb = Rgb::new(70, 25, 10);

/// Inclusive per-channel color range.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ColorRange {
    pub lo: Rgb,
    pub hi: Rgb,
}

impl ColorRange {
    /// `center ± jitter` per channel, saturating at the channel limits.
    pub fn around(center: Rgb, jitter: u8) -> Self {
        ColorRange {
            lo: Rgb::new(
                center.r.saturating_sub(jitter),
                center.g.saturating_sub(jitter),
                center.b.saturating_sub(jitter),
            ),
            hi: Rgb::new(
                center.r.saturating_add(jitter),
                center.g.saturating_add(jitter),
                center.b.saturating_add(jitter),
            ),
        }
    }

    pub fn center(&self) -> Rgb {
        let mid = |a: u8, b: u8| ((u16::from(a) + u16::from(b)) / 2) as u8;
        Rgb::new(
            mid(self.lo.r, self.hi.r),
            mid(self.lo.g, self.hi.g),
            mid(self.lo.b, self.hi.b),
        )
    }

    fn is_valid(&self) -> bool {
        self.lo.r <= self.hi.r && self.lo.g <= self.hi.g && self.lo.b <= self.hi.b
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Rgb {
        Rgb::new(
            rng.gen_range(self.lo.r..=self.hi.r),
            rng.gen_range(self.lo.g..=self.hi.g),
            rng.gen_range(self.lo.b..=self.hi.b),
        )
    }
}

/// Parameter ranges for one terminal class.
#[derive(Clone, Debug, PartialEq)]
pub struct FamilySpec {
    pub name: String,
    pub cluster: String,
    pub poison: bool,
    /// Body length / body height.
    pub aspect: (f64, f64),
    pub dorsum: ColorRange,
    pub ventral: ColorRange,
    /// Tail length as a fraction of body length.
    pub tail_length: (f64, f64),
    /// Dorsal fin height as a fraction of body height.
    pub fin_height: (f64, f64),
    pub spots: bool,
}

impl FamilySpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |reason: &str| {
            Err(SynthError::InvalidSpec {
                name: self.name.clone(),
                reason: reason.into(),
            })
        };
        let range_ok =
            |(lo, hi): (f64, f64), min: f64, max: f64| lo <= hi && lo >= min && hi <= max;
        if self.name.is_empty() || self.name.contains(',') {
            return bad("name must be nonempty and contain no comma");
        }
        if self.cluster.contains(',') {
            return bad("cluster must contain no comma");
        }
        if !range_ok(self.aspect, 1.0, 6.0) {
            return bad("aspect range must lie in [1, 6]");
        }
        if !range_ok(self.tail_length, 0.05, 0.4) {
            return bad("tail length range must lie in [0.05, 0.4]");
        }
        if !range_ok(self.fin_height, 0.0, 0.4) {
            return bad("fin height range must lie in [0, 0.4]");
        }
        if !self.dorsum.is_valid() || !self.ventral.is_valid() {
            return bad("color range has lo > hi");
        }
        Ok(())
    }
}

/// Canvas, seed and per-family image counts (indexed like the spec list).
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub background: Rgb,
    pub seed: u64,
    pub train_counts: Vec<usize>,
    pub test_counts: Vec<usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            width: 320,
            height: 240,
            background: Rgb::new(0, 0, 255),
            seed: 1,
            train_counts: vec![15, 10, 15, 10, 15, 10, 25],
            test_counts: vec![10, 10, 10, 10, 10, 10, 25],
        }
    }
}

impl SynthConfig {
    fn check_canvas(&self) -> Result<(), SynthError> {
        if self.width < MIN_CANVAS || self.height < MIN_CANVAS {
            return Err(SynthError::CanvasTooSmall {
                width: self.width,
                height: self.height,
            });
        }
        Ok(())
    }

    /// Pixels per reference unit.
    fn scale(&self) -> f64 {
        (self.width as f64 / REF_WIDTH).min(self.height as f64 / REF_HEIGHT)
    }
}

/// The seven terminal classes: six families and the poison class.
pub fn default_families() -> Vec<FamilySpec> {
    let fam = |name: &str, cluster: &str, aspect, dorsum, ventral, tail, fin| FamilySpec {
        name: name.into(),
        cluster: cluster.into(),
        poison: false,
        aspect,
        dorsum: ColorRange::around(dorsum, 12),
        ventral: ColorRange::around(ventral, 12),
        tail_length: tail,
        fin_height: fin,
        spots: false,
    };
    vec![
        fam(
            "Istiophoridae",
            "pelagic",
            (3.8, 4.2),
            Rgb::new(30, 70, 130),
            Rgb::new(200, 200, 210),
            (0.26, 0.30),
            (0.30, 0.36),
        ),
        fam(
            "leiognathidae",
            "demersal",
            (1.65, 1.8),
            Rgb::new(170, 170, 180),
            Rgb::new(230, 230, 225),
            (0.16, 0.20),
            (0.12, 0.16),
        ),
        fam(
            "Acropomaatidae",
            "demersal",
            (2.6, 2.8),
            Rgb::new(200, 80, 60),
            Rgb::new(240, 200, 180),
            (0.18, 0.22),
            (0.16, 0.20),
        ),
        fam(
            "Scombridae",
            "pelagic",
            (3.1, 3.4),
            Rgb::new(40, 110, 80),
            Rgb::new(220, 225, 200),
            (0.22, 0.26),
            (0.10, 0.14),
        ),
        fam(
            "Stromateidae",
            "pelagic",
            (1.35, 1.5),
            Rgb::new(150, 140, 100),
            Rgb::new(235, 230, 210),
            (0.12, 0.16),
            (0.08, 0.12),
        ),
        fam(
            "Triacanthidae",
            "demersal",
            (2.25, 2.4),
            Rgb::new(110, 70, 40),
            Rgb::new(230, 210, 150),
            (0.14, 0.18),
            (0.22, 0.26),
        ),
        FamilySpec {
            poison: true,
            spots: true,
            ..fam(
                "Poison fish",
                "poison",
                (1.95, 2.1),
                Rgb::new(230, 150, 30),
                Rgb::new(250, 230, 120),
                (0.18, 0.22),
                (0.18, 0.22),
            )
        },
    ]
}

/// One sampled fish, in reference units.
#[derive(Clone, Debug, PartialEq)]
pub struct FishPose {
    pub head: HeadSide,
    /// Body centre.
    pub center: (f64, f64),
    /// Body semi-axes (along, across).
    pub semi_axes: (f64, f64),
    pub tail_length: f64,
    pub fin_height: f64,
    pub dorsum: Rgb,
    pub ventral: Rgb,
    /// Spot centres in body coordinates (toward head, downward) and radii.
    pub spots: Vec<(f64, f64, f64)>,
}

impl FishPose {
    /// Draws the fish on a background canvas of the configured size.
    pub fn draw(&self, cfg: &SynthConfig) -> Result<RgbImage, SynthError> {
        cfg.check_canvas()?;
        let s = cfg.scale();
        let mut img = RgbImage::filled(cfg.width, cfg.height, cfg.background);
        for y in 0..cfg.height {
            for x in 0..cfg.width {
                let px = (x as f64 + 0.5) / s;
                let py = (y as f64 + 0.5) / s;
                if let Some(c) = self.color_at(px, py) {
                    img.set(x, y, c);
                }
            }
        }
        Ok(img)
    }

    /// Colour of the reference-frame point, `None` off the fish.
    fn color_at(&self, px: f64, py: f64) -> Option<Rgb> {
        let (a, b) = self.semi_axes;
        let dir = match self.head {
            HeadSide::Left => -1.0,
            HeadSide::Right => 1.0,
        };
        let u = (px - self.center.0) * dir;
        let v = py - self.center.1;

        let in_body = (u / a).powi(2) + (v / b).powi(2) <= 1.0;
        if in_body {
            let (ex, ey) = (0.7 * a, -0.25 * b);
            if (u - ex).hypot(v - ey) <= EYE_RADIUS {
                return Some(EYE_COLOR);
            }
            if self
                .spots
                .iter()
                .any(|&(sx, sy, r)| (u - sx).hypot(v - sy) <= r)
            {
                return Some(SPOT_COLOR);
            }
            return Some(if v < 0.0 { self.dorsum } else { self.ventral });
        }
        let tail_tip = -a - self.tail_length;
        let tail = [(-0.8 * a, 0.0), (tail_tip, -0.8 * b), (tail_tip, 0.8 * b)];
        let fin = [
            (-0.35 * a, -0.6 * b),
            (0.15 * a, -0.6 * b),
            (-0.3 * a, -b - self.fin_height),
        ];
        (in_triangle((u, v), tail) || in_triangle((u, v), fin)).then_some(self.dorsum)
    }

    /// Reference-frame extents `(left, right, up, down)` from the body centre.
    fn extents(&self) -> (f64, f64, f64, f64) {
        let (a, b) = self.semi_axes;
        let (front, back) = (a, a + self.tail_length);
        let up = b + self.fin_height;
        match self.head {
            HeadSide::Left => (front, back, up, b),
            HeadSide::Right => (back, front, up, b),
        }
    }
}

fn in_triangle(p: (f64, f64), t: [(f64, f64); 3]) -> bool {
    let cross =
        |a: (f64, f64), b: (f64, f64)| (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
    let d = [cross(t[0], t[1]), cross(t[1], t[2]), cross(t[2], t[0])];
    let neg = d.iter().any(|&v| v < 0.0);
    let pos = d.iter().any(|&v| v > 0.0);
    !(neg && pos)
}

fn sample_range(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..=hi)
    }
}

/// Draws the random pose parameters for one image.
pub fn sample_pose(
    spec: &FamilySpec,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<FishPose, SynthError> {
    spec.validate()?;
    cfg.check_canvas()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = cfg.scale();
    let (ref_w, ref_h) = (cfg.width as f64 / s, cfg.height as f64 / s);
    let margin = MARGIN.max(MARGIN / s);

    let head = if rng.gen_bool(0.5) {
        HeadSide::Right
    } else {
        HeadSide::Left
    };
    let aspect = sample_range(&mut rng, spec.aspect);
    let tail_frac = sample_range(&mut rng, spec.tail_length);
    let fin_frac = sample_range(&mut rng, spec.fin_height);
    let mut length = rng.gen_range(0.40..=0.48) * REF_WIDTH;
    // Shrink until the whole fish fits inside the margins.
    let fits = |length: f64| {
        let height = length / aspect;
        length * (1.0 + tail_frac) + 2.0 * margin <= ref_w
            && height * (1.0 + fin_frac) + 2.0 * margin <= ref_h
    };
    while !fits(length) {
        length *= 0.95;
    }
    let (a, b) = (length / 2.0, length / aspect / 2.0);
    let dorsum = spec.dorsum.sample(&mut rng);
    let ventral = spec.ventral.sample(&mut rng);

    let mut pose = FishPose {
        head,
        center: (0.0, 0.0),
        semi_axes: (a, b),
        tail_length: tail_frac * length,
        fin_height: fin_frac * 2.0 * b,
        dorsum,
        ventral,
        spots: Vec::new(),
    };
    let (left, right, up, down) = pose.extents();
    let cx = rng.gen_range(margin + left..=ref_w - margin - right);
    let cy = rng.gen_range(margin + up..=ref_h - margin - down);
    pose.center = (cx, cy);

    if spec.spots {
        let n = rng.gen_range(6..=9);
        let eye = (0.7 * a, -0.25 * b);
        while pose.spots.len() < n {
            let r = rng.gen_range(2.5..=3.5);
            let (u, v) = (
                rng.gen_range(-0.75..=0.55) * a,
                rng.gen_range(-0.6..=0.6) * b,
            );
            // Keep spots well inside the outline and clear of the eye.
            let inside = ((u.abs() + r) / a).powi(2) + ((v.abs() + r) / b).powi(2) <= 0.8;
            let clear = (u - eye.0).hypot(v - eye.1) > r + EYE_RADIUS + 3.0;
            if inside && clear {
                pose.spots.push((u, v, r));
            } else if rng.gen_bool(0.01) {
                // Very slim bodies may have no room; accept fewer spots.
                break;
            }
        }
    }
    Ok(pose)
}

/// Renders one image; deterministic in `(spec, seed, cfg)`.
pub fn render_fish(
    spec: &FamilySpec,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<RgbImage, SynthError> {
    sample_pose(spec, seed, cfg)?.draw(cfg)
}

/// Per-image seed derived from the corpus seed and the image's coordinates
/// (SplitMix64 finalizer over a combined key).
pub fn image_seed(corpus_seed: u64, family: usize, split: Split, k: usize) -> u64 {
    let split_id = match split {
        Split::Train => 0u64,
        Split::Test => 1,
    };
    let mut z = corpus_seed
        ^ (family as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ split_id.wrapping_mul(0xD1B5_4A32_D192_ED03)
        ^ (k as u64).wrapping_mul(0x8CB9_2BA7_2F3D_8DD7);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// File-name stem for a family: anything but ASCII alphanumerics becomes `_`.
pub fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect()
}

/// Manifest file name written by [`generate_corpus`].
pub const MANIFEST_NAME: &str = "manifest.csv";

/// Writes `<family>_<split>_<k>.ppm` images and `manifest.csv` into `out`
/// (created if missing). Returns the manifest rows in file order: all train
/// rows, then all test rows, each grouped by family in spec order.
pub fn generate_corpus(
    cfg: &SynthConfig,
    specs: &[FamilySpec],
    out: &Path,
) -> Result<Vec<ManifestEntry>, SynthError> {
    cfg.check_canvas()?;
    for (counts, list) in [("train", &cfg.train_counts), ("test", &cfg.test_counts)] {
        if list.len() != specs.len() {
            return Err(SynthError::CountMismatch {
                counts,
                expected: specs.len(),
                found: list.len(),
            });
        }
    }
    for spec in specs {
        spec.validate()?;
    }
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| SynthError::IoFailure { path, source }
    };
    fs::create_dir_all(out).map_err(io(out))?;

    let mut entries = Vec::new();
    for (split, counts) in [
        (Split::Train, &cfg.train_counts),
        (Split::Test, &cfg.test_counts),
    ] {
        for (fi, spec) in specs.iter().enumerate() {
            for k in 0..counts[fi] {
                let img = render_fish(spec, image_seed(cfg.seed, fi, split, k), cfg)?;
                let name = format!("{}_{}_{}.ppm", file_stem(&spec.name), split, k);
                let path = out.join(&name);
                fs::write(&path, encode_ppm(&img)).map_err(io(&path))?;
                entries.push(ManifestEntry {
                    path: PathBuf::from(name),
                    family: spec.name.clone(),
                    poison: spec.poison,
                    cluster: spec.cluster.clone(),
                    split,
                });
            }
        }
    }
    let manifest = out.join(MANIFEST_NAME);
    let mut buf = Vec::new();
    write_manifest(&mut buf, &entries).map_err(io(&manifest))?;
    fs::File::create(&manifest)
        .and_then(|mut f| f.write_all(&buf))
        .map_err(io(&manifest))?;
    log::info!("wrote {} images to {}", entries.len(), out.display());
    Ok(entries)
}
