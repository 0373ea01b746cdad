//! Foreground isolation, boundary tracing, band segments and color grouping.

use std::collections::VecDeque;

use thiserror::Error;

use crate::imageio::{Rgb, RgbImage};

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("no pixel differs from the background by more than the foreground tolerance")]
    EmptyForeground,
    #[error("invalid segmentation configuration: {0}")]
    BadConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegmentConfig {
    /// Pixels farther than this (Euclidean RGB) from the background are foreground.
    pub foreground_tolerance: f64,
    /// Adjacent pixels closer than this share a color group.
    pub color_epsilon: f64,
    /// Number of vertical bands for [`divide_segments`].
    pub segments: usize,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        SegmentConfig {
            foreground_tolerance: 60.0,
            color_epsilon: 20.0,
            segments: 4,
        }
    }
}

impl SegmentConfig {
    pub fn validate(&self) -> Result<(), SegmentError> {
        if !(self.foreground_tolerance > 0.0) {
            return Err(SegmentError::BadConfig(
                "foreground tolerance must be > 0".into(),
            ));
        }
        if !(self.color_epsilon >= 0.0) {
            return Err(SegmentError::BadConfig("color epsilon must be >= 0".into()));
        }
        if self.segments == 0 {
            return Err(SegmentError::BadConfig("segment count must be >= 1".into()));
        }
        Ok(())
    }
}

/// Tight axis-aligned bounds: origin plus extent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BoundingBox {
    pub x0: usize,
    pub y0: usize,
    pub w: usize,
    pub h: usize,
}

impl BoundingBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x0 + self.w && y >= self.y0 && y < self.y0 + self.h
    }
}

/// Single 4-connected foreground component.
#[derive(Clone, Debug, PartialEq)]
pub struct FishMask {
    pub width: usize,
    pub height: usize,
    pub bits: Vec<bool>,
    pub bbox: BoundingBox,
    /// Absolute pixel coordinates.
    pub centroid: (f64, f64),
    pub area: usize,
}

const N4: [(isize, isize); 4] = [(1, 0), (-1, 0), (0, 1), (0, -1)];

impl FishMask {
    /// Builds a mask from raw bits, computing bbox, centroid and area.
    /// Returns `None` when no bit is set. Connectivity is not checked.
    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Option<Self> {
        assert_eq!(
            bits.len(),
            width * height,
            "bit count must match dimensions"
        );
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        let (mut sx, mut sy, mut area) = (0u64, 0u64, 0usize);
        for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
            let (x, y) = (i % width, i / width);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            area += 1;
        }
        if area == 0 {
            return None;
        }
        for (i, _) in bits.iter().enumerate().filter(|(_, &b)| b) {
            sx += (i % width - x0) as u64;
            sy += (i / width - y0) as u64;
        }
        let n = area as f64;
        Some(FishMask {
            width,
            height,
            bits,
            bbox: BoundingBox {
                x0,
                y0,
                w: x1 - x0 + 1,
                h: y1 - y0 + 1,
            },
            centroid: (x0 as f64 + sx as f64 / n, y0 as f64 + sy as f64 / n),
            area,
        })
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    /// Bounds-checked lookup on signed coordinates; outside the image is `false`.
    #[inline]
    pub fn at(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && self.get(x as usize, y as usize)
    }

    /// Foreground pixel with a background 4-neighbor or touching the image edge.
    pub fn is_boundary(&self, x: usize, y: usize) -> bool {
        self.get(x, y)
            && N4
                .iter()
                .any(|&(dx, dy)| !self.at(x as isize + dx, y as isize + dy))
    }

    /// Foreground pixel coordinates in row-major order, restricted to the bbox.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let b = self.bbox;
        (b.y0..b.y0 + b.h)
            .flat_map(move |y| (b.x0..b.x0 + b.w).map(move |x| (x, y)))
            .filter(|&(x, y)| self.get(x, y))
    }
}

/// Labels 4-connected components of `fg`, returning each component's pixel
/// indices in discovery order (components ordered by their smallest index).
pub fn components(width: usize, height: usize, fg: &[bool]) -> Vec<Vec<usize>> {
    let mut seen = vec![false; fg.len()];
    let mut out = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..fg.len() {
        if !fg[start] || seen[start] {
            continue;
        }
        let mut comp = Vec::new();
        seen[start] = true;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            comp.push(i);
            let (x, y) = ((i % width) as isize, (i / width) as isize);
            for (dx, dy) in N4 {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                    continue;
                }
                let j = ny as usize * width + nx as usize;
                if fg[j] && !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Largest 4-connected component of pixels farther than `fg_tolerance` from
/// `background`. Equal sizes resolve to the component found first in row-major order.
pub fn extract_mask(
    img: &RgbImage,
    background: Rgb,
    fg_tolerance: f64,
) -> Result<FishMask, SegmentError> {
    let tol_sq = fg_tolerance * fg_tolerance;
    let fg: Vec<bool> = img
        .pixels()
        .iter()
        .map(|p| p.distance_sq(background) > tol_sq)
        .collect();
    let comps = components(img.width(), img.height(), &fg);
    let mut best: Option<&Vec<usize>> = None;
    for c in &comps {
        if best.is_none_or(|b| c.len() > b.len()) {
            best = Some(c);
        }
    }
    let best = best.ok_or(SegmentError::EmptyForeground)?;
    let mut bits = vec![false; fg.len()];
    for &i in best {
        bits[i] = true;
    }
    Ok(FishMask::from_bits(img.width(), img.height(), bits).expect("component is nonempty"))
}

/// Closed, ordered boundary of a mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Contour {
    pub points: Vec<(usize, usize)>,
    pub perimeter: f64,
}

/// Eight neighbors in clockwise order (y down), starting west.
const MOORE: [(isize, isize); 8] = [
    (-1, 0),
    (-1, -1),
    (0, -1),
    (1, -1),
    (1, 0),
    (1, 1),
    (0, 1),
    (-1, 1),
];

fn moore_step(mask: &FishMask, p: (usize, usize), from: usize) -> Option<((usize, usize), usize)> {
    (0..8).map(|k| (from + k) % 8).find_map(|d| {
        let (dx, dy) = MOORE[d];
        let (nx, ny) = (p.0 as isize + dx, p.1 as isize + dy);
        mask.at(nx, ny).then_some(((nx as usize, ny as usize), d))
    })
}

fn step_length(a: (usize, usize), b: (usize, usize)) -> f64 {
    if a.0 != b.0 && a.1 != b.1 {
        std::f64::consts::SQRT_2
    } else if a == b {
        0.0
    } else {
        1.0
    }
}

/// Clockwise Moore-neighbor trace from the first foreground pixel in
/// row-major order, stopping on Jacob's criterion (start re-entered with the
/// initial move).
pub fn trace_contour(mask: &FishMask) -> Contour {
    let start = mask
        .pixels()
        .next()
        .expect("mask invariant: at least one pixel");
    // West, north-west, north and north-east of the start are all background.
    let Some((first, first_dir)) = moore_step(mask, start, 0) else {
        return Contour {
            points: vec![start],
            perimeter: 0.0,
        };
    };
    let mut points = vec![start];
    let (mut p, mut dir) = (first, first_dir);
    loop {
        let next = moore_step(mask, p, (dir + 6) % 8).expect("connected pixel has a neighbor");
        if p == start && next == (first, first_dir) {
            break;
        }
        points.push(p);
        (p, dir) = next;
    }
    let perimeter = points
        .iter()
        .zip(points.iter().cycle().skip(1))
        .map(|(&a, &b)| step_length(a, b))
        .sum();
    Contour { points, perimeter }
}

/// One vertical band of the mask bounding box.
#[derive(Clone, Debug, PartialEq)]
pub struct Segment {
    pub bounds: BoundingBox,
    pub mean: [f64; 3],
    pub count: usize,
}

/// Splits the bbox into `k` vertical bands of equal width (the last band takes
/// the remainder; with more bands than columns the surplus bands are empty)
/// and summarizes the foreground in each.
pub fn divide_segments(mask: &FishMask, img: &RgbImage, k: usize) -> Vec<Segment> {
    assert!(k >= 1, "segment count must be positive");
    let b = mask.bbox;
    let band = (b.w / k).max(1);
    (0..k)
        .map(|i| {
            let start = (i * band).min(b.w);
            let end = if i + 1 == k {
                b.w
            } else {
                ((i + 1) * band).min(b.w)
            };
            let bounds = BoundingBox {
                x0: b.x0 + start,
                y0: b.y0,
                w: end - start,
                h: b.h,
            };
            let mut sum = [0u64; 3];
            let mut count = 0;
            for y in b.y0..b.y0 + b.h {
                for x in bounds.x0..bounds.x0 + bounds.w {
                    if mask.get(x, y) {
                        let c = img.get(x, y);
                        sum[0] += u64::from(c.r);
                        sum[1] += u64::from(c.g);
                        sum[2] += u64::from(c.b);
                        count += 1;
                    }
                }
            }
            let mean = if count == 0 {
                [0.0; 3]
            } else {
                sum.map(|s| s as f64 / count as f64)
            };
            Segment {
                bounds,
                mean,
                count,
            }
        })
        .collect()
}

/// Color-similarity partition of the foreground.
#[derive(Clone, Debug, PartialEq)]
pub struct ColorGroups {
    pub group_count: usize,
    /// Per image pixel; [`ColorGroups::NONE`] outside the mask.
    pub group_of: Vec<u32>,
    pub mean_color: Vec<[f64; 3]>,
}

impl ColorGroups {
    pub const NONE: u32 = u32::MAX;
}

/// Region growing over 4-adjacent foreground pixels whose colors are within
/// `epsilon` of each other. Seeds are taken in row-major order.
pub fn group_by_color(mask: &FishMask, img: &RgbImage, epsilon: f64) -> ColorGroups {
    let (w, h) = (mask.width, mask.height);
    let eps_sq = epsilon * epsilon;
    let mut group_of = vec![ColorGroups::NONE; w * h];
    let mut sums: Vec<[u64; 4]> = Vec::new();
    let mut queue = VecDeque::new();
    for (sx, sy) in mask.pixels() {
        if group_of[sy * w + sx] != ColorGroups::NONE {
            continue;
        }
        let id = sums.len() as u32;
        let mut acc = [0u64; 4];
        group_of[sy * w + sx] = id;
        queue.push_back((sx, sy));
        while let Some((x, y)) = queue.pop_front() {
            let c = img.get(x, y);
            acc[0] += u64::from(c.r);
            acc[1] += u64::from(c.g);
            acc[2] += u64::from(c.b);
            acc[3] += 1;
            for (dx, dy) in N4 {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if !mask.at(nx, ny) {
                    continue;
                }
                let (nx, ny) = (nx as usize, ny as usize);
                if group_of[ny * w + nx] == ColorGroups::NONE
                    && img.get(nx, ny).distance_sq(c) <= eps_sq
                {
                    group_of[ny * w + nx] = id;
                    queue.push_back((nx, ny));
                }
            }
        }
        sums.push(acc);
    }
    ColorGroups {
        group_count: sums.len(),
        group_of,
        mean_color: sums
            .iter()
            .map(|s| [0, 1, 2].map(|i| s[i] as f64 / s[3] as f64))
            .collect(),
    }
}
