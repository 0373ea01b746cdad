//! The 47-value feature vector.
//!
//! Layout (all values in `[0, 1]`):
//!
//! | index | group | meaning |
//! |-------|-------|---------|
//! | 0–5   | size | area, bbox width/height, perimeter, aspect, compactness |
//! | 6–23  | shape & texture | radial signature (8), solidity, extent, eccentricity, tail fill, edge density, quadrant texture (4), orientation |
//! | 24–35 | color signature | dorsum RGB, ventral RGB, dorsum/ventral contrast, intensity mean/std, color-group count |
//! | 36–46 | geometry | top/bottom extremes, extreme-point triangles, eye position, mouth size, apex angle |
//!
//! Every value is computed from coordinates relative to the mask bounding
//! box, so moving the fish inside the canvas leaves the vector bit-identical.

use std::f64::consts::PI;
use std::ops::Range;

use thiserror::Error;

use crate::imageio::{IndexedImage, RgbImage};
use crate::moments::Moments;
use crate::segment::{ColorGroups, Contour, FishMask};

pub const FEATURE_COUNT: usize = 47;
/// Bumped whenever the meaning of any index changes; stored in model files.
pub const FEATURE_LAYOUT_VERSION: u32 = 1;

pub const SIZE: Range<usize> = 0..6;
pub const SHAPE: Range<usize> = 6..24;
pub const COLOR: Range<usize> = 24..36;
pub const GEOMETRY: Range<usize> = 36..47;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("inconsistent inputs: {0}")]
    InconsistentInputs(String),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(pub [f64; FEATURE_COUNT]);

impl FeatureVector {
    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

impl std::ops::Index<usize> for FeatureVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadSide {
    Left,
    Right,
}

/// The bulkier half of the bounding box holds the head; ties go left.
/// With an odd width the middle column counts for neither half.
pub fn find_head_side(mask: &FishMask) -> HeadSide {
    let (x0, w) = (mask.bbox.x0, mask.bbox.w);
    let (mut left, mut right) = (0usize, 0usize);
    for (x, _) in mask.pixels() {
        let twice = 2 * (x - x0) + 1;
        if twice < w {
            left += 1;
        } else if twice > w {
            right += 1;
        }
    }
    if right > left {
        HeadSide::Right
    } else {
        HeadSide::Left
    }
}

/// Twice the signed area of triangle `abc`.
fn cross(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    (b.0 - a.0) * (c.1 - a.1) - (b.1 - a.1) * (c.0 - a.0)
}

/// Shoelace area of a triangle, always non-negative.
pub fn triangle_area(a: (f64, f64), b: (f64, f64), c: (f64, f64)) -> f64 {
    0.5 * cross(a, b, c).abs()
}

/// Contour extremes and the two triangles they span: `up` closes on the
/// topmost point, `down` on the bottommost.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrianglePair {
    pub x_min: (f64, f64),
    pub x_max: (f64, f64),
    pub y_min: (f64, f64),
    pub y_max: (f64, f64),
    pub area_up: f64,
    pub area_down: f64,
}

impl TrianglePair {
    pub fn from_extremes(
        x_min: (f64, f64),
        x_max: (f64, f64),
        y_min: (f64, f64),
        y_max: (f64, f64),
    ) -> Self {
        TrianglePair {
            x_min,
            x_max,
            y_min,
            y_max,
            area_up: triangle_area(x_min, x_max, y_min),
            area_down: triangle_area(x_min, x_max, y_max),
        }
    }

    /// Extremes of bbox-relative contour points. Among points sharing an
    /// extreme coordinate the median along the other axis is chosen.
    fn from_points(points: &[(i64, i64)]) -> Self {
        fn pick(
            points: &[(i64, i64)],
            key: impl Fn(&(i64, i64)) -> i64,
            other: impl Fn(&(i64, i64)) -> i64,
            want_max: bool,
        ) -> (f64, f64) {
            let best = if want_max {
                points.iter().map(&key).max()
            } else {
                points.iter().map(&key).min()
            }
            .expect("contour is nonempty");
            let mut tied: Vec<(i64, i64)> =
                points.iter().copied().filter(|p| key(p) == best).collect();
            tied.sort_by_key(|p| (other(p), key(p)));
            tied.dedup();
            let p = tied[(tied.len() - 1) / 2];
            (p.0 as f64, p.1 as f64)
        }
        let x_min = pick(points, |p| p.0, |p| p.1, false);
        let x_max = pick(points, |p| p.0, |p| p.1, true);
        let y_min = pick(points, |p| p.1, |p| p.0, false);
        let y_max = pick(points, |p| p.1, |p| p.0, true);
        Self::from_extremes(x_min, x_max, y_min, y_max)
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Number of integer lattice points inside or on the convex hull of
/// `points`, by Pick's theorem. This is the pixel count of the filled hull,
/// directly comparable to a mask area.
pub fn hull_pixel_count(points: &[(i64, i64)]) -> u64 {
    let mut pts = points.to_vec();
    pts.sort_unstable();
    pts.dedup();
    if pts.len() <= 2 {
        return match pts.as_slice() {
            [a, b] => (gcd(b.0 - a.0, b.1 - a.1) + 1) as u64,
            _ => pts.len() as u64,
        };
    }
    let turn = |o: (i64, i64), a: (i64, i64), b: (i64, i64)| {
        (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
    };
    let mut hull: Vec<(i64, i64)> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &(i64, i64)>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2
                && turn(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0
            {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    if hull.len() < 3 {
        // Collinear input: the hull is a segment between the two extremes.
        let (a, b) = (pts[0], pts[pts.len() - 1]);
        return (gcd(b.0 - a.0, b.1 - a.1) + 1) as u64;
    }
    let n = hull.len();
    let (mut area2, mut boundary) = (0i64, 0i64);
    for i in 0..n {
        let (a, b) = (hull[i], hull[(i + 1) % n]);
        area2 += a.0 * b.1 - b.0 * a.1;
        boundary += gcd(b.0 - a.0, b.1 - a.1);
    }
    // Pick: A = I + B/2 - 1  ⇒  I + B = A + B/2 + 1.
    ((area2.abs() + boundary) / 2 + 1) as u64
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn unit(v: f64) -> f64 {
    if v.is_finite() {
        v.clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Columns `[start, end)` (bbox-relative) covering `fraction` of the width
/// on the given side, at least one column.
fn side_columns(w: usize, fraction: f64, side: HeadSide) -> (usize, usize) {
    let n = ((w as f64 * fraction).round() as usize).clamp(1, w);
    match side {
        HeadSide::Left => (0, n),
        HeadSide::Right => (w - n, w),
    }
}

pub fn extract_features(
    img: &RgbImage,
    idx: &IndexedImage,
    mask: &FishMask,
    contour: &Contour,
    groups: &ColorGroups,
) -> Result<FeatureVector, FeatureError> {
    let (cw, ch) = (img.width(), img.height());
    if (idx.width, idx.height) != (cw, ch) || (mask.width, mask.height) != (cw, ch) {
        return Err(FeatureError::InconsistentInputs(format!(
            "image {cw}x{ch}, index {}x{}, mask {}x{}",
            idx.width, idx.height, mask.width, mask.height
        )));
    }
    if groups.group_of.len() != cw * ch {
        return Err(FeatureError::InconsistentInputs(
            "color groups do not cover the image".into(),
        ));
    }
    if mask.area == 0 || contour.points.is_empty() {
        return Err(FeatureError::InconsistentInputs("empty mask".into()));
    }
    let b = mask.bbox;
    if contour
        .points
        .iter()
        .any(|&(x, y)| !b.contains(x, y) || !mask.get(x, y))
    {
        return Err(FeatureError::InconsistentInputs(
            "contour leaves the mask".into(),
        ));
    }

    let (x0, y0) = (b.x0 as i64, b.y0 as i64);
    let (w, h) = (b.w as f64, b.h as f64);
    let rel = |(x, y): (usize, usize)| (x as i64 - x0, y as i64 - y0);
    let pixels: Vec<(i64, i64)> = mask.pixels().map(rel).collect();
    let area = pixels.len() as f64;
    let m = Moments::from_points(pixels.iter().copied()).expect("mask is nonempty");
    let (cx, cy) = (m.cx, m.cy);
    let perimeter = contour.perimeter;
    let cpoints: Vec<(i64, i64)> = contour.points.iter().copied().map(rel).collect();
    let head = find_head_side(mask);

    let mut f = [0.0f64; FEATURE_COUNT];

    // Size.
    f[0] = area / (cw * ch) as f64;
    f[1] = w / cw as f64;
    f[2] = h / ch as f64;
    f[3] = perimeter / (2.0 * (cw + ch) as f64);
    f[4] = w / (w + h);
    f[5] = if perimeter == 0.0 {
        1.0
    } else {
        4.0 * PI * area / (perimeter * perimeter)
    };

    // Radial signature: farthest contour point per 45° sector.
    let mut sectors = [0.0f64; 8];
    for &(px, py) in &cpoints {
        let (dx, dy) = (px as f64 - cx, py as f64 - cy);
        let angle = dy.atan2(dx).rem_euclid(2.0 * PI);
        let s = ((angle / (PI / 4.0)) as usize).min(7);
        sectors[s] = sectors[s].max(dx.hypot(dy));
    }
    let rmax = sectors.iter().copied().fold(0.0, f64::max);
    for (i, r) in sectors.iter().enumerate() {
        f[6 + i] = if rmax > 0.0 { r / rmax } else { 0.0 };
    }

    f[14] = area / hull_pixel_count(&cpoints) as f64;
    f[15] = area / (w * h);
    let (l1, l2) = m.eigenvalues();
    f[16] = if l1 > 0.0 {
        (1.0 - l2 / l1).sqrt()
    } else {
        0.0
    };

    let tail_side = match head {
        HeadSide::Left => HeadSide::Right,
        HeadSide::Right => HeadSide::Left,
    };
    let (t0, t1) = side_columns(b.w, 0.2, tail_side);
    let tail_fg = pixels
        .iter()
        .filter(|p| (t0 as i64..t1 as i64).contains(&p.0))
        .count();
    f[17] = tail_fg as f64 / ((t1 - t0) as f64 * h);

    let boundary = mask
        .pixels()
        .filter(|&(x, y)| mask.is_boundary(x, y))
        .count();
    f[18] = boundary as f64 / area;

    let mut quadrants: [Vec<f64>; 4] = Default::default();
    let mut intensities = Vec::with_capacity(pixels.len());
    for (&(px, py), (ax, ay)) in pixels.iter().zip(mask.pixels()) {
        let v = f64::from(idx.get(ax, ay));
        let q = usize::from(2 * px >= b.w as i64) + 2 * usize::from(2 * py >= b.h as i64);
        quadrants[q].push(v);
        intensities.push(v);
    }
    for (i, q) in quadrants.iter().enumerate() {
        f[19 + i] = mean_std(q).1 / 128.0;
    }
    f[23] = (m.orientation() + PI / 2.0) / PI;

    // Color signature.
    let (mut dorsum, mut ventral) = ([0u64; 4], [0u64; 4]);
    for (&(_, py), (ax, ay)) in pixels.iter().zip(mask.pixels()) {
        let c = img.get(ax, ay);
        let acc = if (py as f64) < cy {
            &mut dorsum
        } else {
            &mut ventral
        };
        acc[0] += u64::from(c.r);
        acc[1] += u64::from(c.g);
        acc[2] += u64::from(c.b);
        acc[3] += 1;
    }
    let region_mean = |acc: [u64; 4]| {
        if acc[3] == 0 {
            [0.0; 3]
        } else {
            [0, 1, 2].map(|i| acc[i] as f64 / acc[3] as f64 / 255.0)
        }
    };
    let (dm, vm) = (region_mean(dorsum), region_mean(ventral));
    for i in 0..3 {
        f[24 + i] = dm[i];
        f[27 + i] = vm[i];
        f[30 + i] = (dm[i] - vm[i] + 1.0) / 2.0;
    }
    let (imean, istd) = mean_std(&intensities);
    f[33] = imean / 255.0;
    f[34] = istd / 128.0;
    f[35] = groups.group_count.min(32) as f64 / 32.0;

    // Geometry.
    let tri = TrianglePair::from_points(&cpoints);
    f[36] = tri.y_min.0 / w;
    f[37] = tri.y_min.1 / h;
    f[38] = tri.area_up / (w * h);
    f[39] = tri.y_max.0 / w;
    f[40] = tri.y_max.1 / h;
    f[41] = tri.area_down / (w * h);
    let (lo, hi) = (
        tri.area_up.min(tri.area_down),
        tri.area_up.max(tri.area_down),
    );
    f[42] = if hi == 0.0 { 1.0 } else { lo / hi };

    let (e0, e1) = side_columns(b.w, 0.25, head);
    let band: Vec<((i64, i64), f64)> = pixels
        .iter()
        .zip(&intensities)
        .filter(|(p, _)| (e0 as i64..e1 as i64).contains(&p.0))
        .map(|(&p, &v)| (p, v))
        .collect();
    if !band.is_empty() {
        let mut sorted: Vec<f64> = band.iter().map(|&(_, v)| v).collect();
        sorted.sort_by(f64::total_cmp);
        let cut = sorted[band.len().div_ceil(10) - 1];
        let (mut sx, mut sy, mut n) = (0i64, 0i64, 0i64);
        for &((px, py), v) in &band {
            if v <= cut {
                sx += px;
                sy += py;
                n += 1;
            }
        }
        f[43] = sx as f64 / n as f64 / w;
        f[44] = sy as f64 / n as f64 / h;
    }

    let (m0, m1) = side_columns(b.w, 0.05, head);
    let mouth = pixels
        .iter()
        .filter(|p| (m0 as i64..m1 as i64).contains(&p.0))
        .map(|p| p.1);
    let (ylo, yhi) = mouth.fold((i64::MAX, i64::MIN), |(lo, hi), y| (lo.min(y), hi.max(y)));
    if ylo <= yhi {
        f[45] = (yhi - ylo + 1) as f64 / h;
    }

    let va = (tri.x_min.0 - tri.y_min.0, tri.x_min.1 - tri.y_min.1);
    let vb = (tri.x_max.0 - tri.y_min.0, tri.x_max.1 - tri.y_min.1);
    let (na, nb) = (va.0.hypot(va.1), vb.0.hypot(vb.1));
    if na > 0.0 && nb > 0.0 {
        let cos = ((va.0 * vb.0 + va.1 * vb.1) / (na * nb)).clamp(-1.0, 1.0);
        f[46] = cos.acos() / PI;
    }

    Ok(FeatureVector(f.map(unit)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::{to_indexed, Rgb};
    use crate::segment::{extract_mask, group_by_color, trace_contour};

    const BG: Rgb = Rgb::new(0, 0, 255);

    fn features_of(img: &RgbImage) -> FeatureVector {
        let mask = extract_mask(img, BG, 60.0).unwrap();
        let contour = trace_contour(&mask);
        let groups = group_by_color(&mask, img, 20.0);
        extract_features(img, &to_indexed(img), &mask, &contour, &groups).unwrap()
    }

    fn paint(img: &mut RgbImage, pred: impl Fn(usize, usize) -> bool, c: Rgb) {
        for y in 0..img.height() {
            for x in 0..img.width() {
                if pred(x, y) {
                    img.set(x, y, c);
                }
            }
        }
    }

    #[test]
    fn rectangle() {
        let mut img = RgbImage::filled(64, 48, BG);
        paint(
            &mut img,
            |x, y| (10..40).contains(&x) && (5..25).contains(&y),
            Rgb::new(200, 100, 50),
        );
        let f = features_of(&img);
        assert_eq!(f.values().len(), FEATURE_COUNT);
        assert_eq!(f[15], 1.0);
        assert_eq!(f[14], 1.0);
        for i in 30..33 {
            assert_eq!(f[i], 0.5);
        }
        assert_eq!(f[0], 600.0 / (64.0 * 48.0));
        assert_eq!(f[4], 30.0 / 50.0);
        assert_eq!(f[17], 1.0);
        assert_eq!(f[35], 1.0 / 32.0);
        // Flat rectangle: zero texture.
        assert!(f.values()[19..23].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn disk_compactness() {
        let mut img = RgbImage::filled(128, 128, BG);
        paint(
            &mut img,
            |x, y| {
                let (dx, dy) = (x as f64 - 64.0, y as f64 - 64.0);
                dx * dx + dy * dy <= 2500.0
            },
            Rgb::new(250, 200, 0),
        );
        let f = features_of(&img);
        assert!(f[5] >= 0.85, "compactness {}", f[5]);
        assert!(f[16] < 0.1, "eccentricity {}", f[16]);
        // Every radial sector reaches nearly the full radius.
        assert!(f.values()[6..14].iter().all(|&r| r > 0.97));
    }

    #[test]
    fn triangle_from_known_extremes() {
        let t = TrianglePair::from_extremes((0.0, 5.0), (10.0, 5.0), (5.0, 0.0), (5.0, 10.0));
        assert_eq!(t.area_up, 25.0);
        assert_eq!(t.area_down, 25.0);
        assert_eq!(t.area_up / (10.0 * 10.0), 0.25);
    }

    #[test]
    fn hull_counts() {
        // Filled 3x3 square corners: 9 lattice points.
        assert_eq!(
            hull_pixel_count(&[(0, 0), (2, 0), (2, 2), (0, 2), (1, 0)]),
            9
        );
        assert_eq!(hull_pixel_count(&[(0, 0), (4, 2)]), 3);
        assert_eq!(hull_pixel_count(&[(0, 0), (1, 1), (3, 3)]), 4);
        assert_eq!(hull_pixel_count(&[(5, 5)]), 1);
        // Right triangle with legs 4: 15 lattice points.
        assert_eq!(hull_pixel_count(&[(0, 0), (4, 0), (0, 4), (1, 1)]), 15);
    }

    #[test]
    fn head_side_rule() {
        let mut img = RgbImage::filled(40, 20, BG);
        // Tall block on the left, thin bar to the right.
        paint(
            &mut img,
            |x, y| (5..15).contains(&x) && (2..18).contains(&y),
            Rgb::WHITE,
        );
        paint(
            &mut img,
            |x, y| (15..30).contains(&x) && (9..11).contains(&y),
            Rgb::WHITE,
        );
        let mask = extract_mask(&img, BG, 60.0).unwrap();
        assert_eq!(find_head_side(&mask), HeadSide::Left);

        let mut mirrored = RgbImage::filled(40, 20, BG);
        paint(&mut mirrored, |x, y| img.get(39 - x, y) != BG, Rgb::WHITE);
        let mask = extract_mask(&mirrored, BG, 60.0).unwrap();
        assert_eq!(find_head_side(&mask), HeadSide::Right);

        let mut sym = RgbImage::filled(40, 20, BG);
        paint(
            &mut sym,
            |x, y| (5..26).contains(&x) && (5..10).contains(&y),
            Rgb::WHITE,
        );
        let mask = extract_mask(&sym, BG, 60.0).unwrap();
        assert_eq!(find_head_side(&mask), HeadSide::Left);
    }

    #[test]
    fn dimension_mismatch() {
        let mut img = RgbImage::filled(20, 20, BG);
        paint(
            &mut img,
            |x, y| (5..10).contains(&x) && (5..10).contains(&y),
            Rgb::WHITE,
        );
        let mask = extract_mask(&img, BG, 60.0).unwrap();
        let contour = trace_contour(&mask);
        let groups = group_by_color(&mask, &img, 20.0);
        let other = to_indexed(&RgbImage::filled(21, 20, BG));
        assert!(matches!(
            extract_features(&img, &other, &mask, &contour, &groups),
            Err(FeatureError::InconsistentInputs(_))
        ));
    }

    #[test]
    fn eye_is_darkest_spot_in_head_band() {
        let mut img = RgbImage::filled(100, 60, BG);
        // Left block (head) taller than the right part.
        paint(
            &mut img,
            |x, y| (10..50).contains(&x) && (10..50).contains(&y),
            Rgb::new(220, 220, 200),
        );
        paint(
            &mut img,
            |x, y| (50..90).contains(&x) && (20..40).contains(&y),
            Rgb::new(220, 220, 200),
        );
        paint(
            &mut img,
            |x, y| (12..21).contains(&x) && (16..25).contains(&y),
            Rgb::new(70, 70, 70),
        );
        let f = features_of(&img);
        // bbox is 80x40 at (10, 10); the head band is 20x40 = 800 pixels, so
        // the darkest decile is exactly the 81-pixel dark block centered at (6, 10).
        assert!((f[43] - 6.0 / 80.0).abs() < 1e-12, "eye x {}", f[43]);
        assert!((f[44] - 10.0 / 40.0).abs() < 1e-12, "eye y {}", f[44]);
        // Mouth: leftmost 4 columns span the full 40 rows.
        assert_eq!(f[45], 1.0);
    }
}
