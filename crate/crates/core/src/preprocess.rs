//! Noise filtering, background unification and rotation normalization.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::imageio::{Rgb, RgbImage};
use crate::moments::Moments;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("image {width}x{height} is too small (need at least 3x3)")]
    ImageTooSmall { width: usize, height: usize },
    #[error("image has no foreground pixels")]
    EmptyForeground,
    #[error("invalid preprocess configuration: {0}")]
    BadConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PreprocessConfig {
    /// Euclidean RGB distance under which a pixel is snapped to the background color.
    pub background_tolerance: f64,
    /// Median window half-size; 1 means a 3×3 window.
    pub median_radius: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            background_tolerance: 40.0,
            median_radius: 1,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<(), PreprocessError> {
        if !(self.background_tolerance >= 0.0) {
            return Err(PreprocessError::BadConfig(format!(
                "background tolerance {} must be >= 0",
                self.background_tolerance
            )));
        }
        if self.median_radius > 2 {
            return Err(PreprocessError::BadConfig(format!(
                "median radius {} must be 0, 1 or 2",
                self.median_radius
            )));
        }
        Ok(())
    }
}

/// Per-channel median over a `(2r+1)²` window with clamped edges.
pub fn median_filter(img: &RgbImage, radius: usize) -> RgbImage {
    if radius == 0 {
        return img.clone();
    }
    let (w, h) = (img.width(), img.height());
    let r = radius as isize;
    let side = 2 * radius + 1;
    let mid = side * side / 2;
    let mut out = img.clone();
    let mut window: [Vec<u8>; 3] = std::array::from_fn(|_| Vec::with_capacity(side * side));
    for y in 0..h {
        for x in 0..w {
            for ch in &mut window {
                ch.clear();
            }
            for dy in -r..=r {
                let sy = (y as isize + dy).clamp(0, h as isize - 1) as usize;
                for dx in -r..=r {
                    let sx = (x as isize + dx).clamp(0, w as isize - 1) as usize;
                    let p = img.get(sx, sy);
                    window[0].push(p.r);
                    window[1].push(p.g);
                    window[2].push(p.b);
                }
            }
            let [r, g, b] = window.each_mut().map(|ch| *ch.select_nth_unstable(mid).1);
            out.set(x, y, Rgb::new(r, g, b));
        }
    }
    out
}

/// Most frequent color on the one-pixel border; ties go to the smallest `(r,g,b)`.
pub fn border_mode(img: &RgbImage) -> Rgb {
    let (w, h) = (img.width(), img.height());
    let mut counts: BTreeMap<Rgb, usize> = BTreeMap::new();
    let mut bump = |x, y| *counts.entry(img.get(x, y)).or_default() += 1;
    for x in 0..w {
        bump(x, 0);
        if h > 1 {
            bump(x, h - 1);
        }
    }
    for y in 1..h.saturating_sub(1) {
        bump(0, y);
        if w > 1 {
            bump(w - 1, y);
        }
    }
    let mut best = (Rgb::BLACK, 0);
    for (c, n) in counts {
        if n > best.1 {
            best = (c, n);
        }
    }
    best.0
}

/// Detects the background color from the border and snaps every pixel within
/// `background_tolerance` of it to that exact color.
pub fn unify_background(
    img: &RgbImage,
    cfg: &PreprocessConfig,
) -> Result<(RgbImage, Rgb), PreprocessError> {
    if img.width() < 3 || img.height() < 3 {
        return Err(PreprocessError::ImageTooSmall {
            width: img.width(),
            height: img.height(),
        });
    }
    let bg = border_mode(img);
    let tol_sq = cfg.background_tolerance * cfg.background_tolerance;
    let mut out = img.clone();
    for p in out.pixels_mut() {
        if p.distance_sq(bg) <= tol_sq {
            *p = bg;
        }
    }
    Ok((out, bg))
}

/// Angles below this are left alone to avoid resampling an already-level image.
pub const ROTATION_SKIP_DEGREES: f64 = 0.5;

fn foreground_moments(img: &RgbImage, bg: Rgb) -> Option<(usize, usize, Moments)> {
    let (w, h) = (img.width(), img.height());
    let (mut x0, mut y0) = (usize::MAX, usize::MAX);
    for y in 0..h {
        for x in 0..w {
            if img.get(x, y) != bg {
                x0 = x0.min(x);
                y0 = y0.min(y);
            }
        }
    }
    if x0 == usize::MAX {
        return None;
    }
    let points = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .filter(|&(x, y)| img.get(x, y) != bg)
        .map(|(x, y)| (x as i64 - x0 as i64, y as i64 - y0 as i64));
    Moments::from_points(points).map(|m| (x0, y0, m))
}

/// Orientation of the non-background pixel set, radians.
pub fn foreground_orientation(img: &RgbImage, bg: Rgb) -> Option<f64> {
    foreground_moments(img, bg).map(|(_, _, m)| m.orientation())
}

/// Rotates the image so the principal axis of the non-background pixels is
/// horizontal. Rotation is about the foreground centroid, nearest-neighbor,
/// same canvas; uncovered pixels become `bg`.
pub fn normalize_rotation(img: &RgbImage, bg: Rgb) -> Result<RgbImage, PreprocessError> {
    let (x0, y0, m) = foreground_moments(img, bg).ok_or(PreprocessError::EmptyForeground)?;
    let theta = m.orientation();
    if theta.abs() < ROTATION_SKIP_DEGREES.to_radians() {
        return Ok(img.clone());
    }
    let (sin, cos) = theta.sin_cos();
    let (w, h) = (img.width() as i64, img.height() as i64);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let mut out = RgbImage::filled(img.width(), img.height(), bg);
    for y in 0..h {
        // Offsets are taken relative to the bbox corner so the mapping is
        // translation-equivariant bit for bit.
        let dy = (y - y0) as f64 - m.cy;
        for x in 0..w {
            let dx = (x - x0) as f64 - m.cx;
            let sx = x0 + (m.cx + cos * dx - sin * dy).round() as i64;
            let sy = y0 + (m.cy + sin * dx + cos * dy).round() as i64;
            if (0..w).contains(&sx) && (0..h).contains(&sy) {
                out.set(x as usize, y as usize, img.get(sx as usize, sy as usize));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    const BLUE: Rgb = Rgb::new(0, 0, 255);
    const RED: Rgb = Rgb::new(255, 0, 0);

    fn ellipse(w: usize, h: usize, a: f64, b: f64, angle_deg: f64) -> RgbImage {
        let mut img = RgbImage::filled(w, h, BLUE);
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let (s, c) = angle_deg.to_radians().sin_cos();
        for y in 0..h {
            for x in 0..w {
                let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
                let u = c * dx + s * dy;
                let v = -s * dx + c * dy;
                if (u / a).powi(2) + (v / b).powi(2) <= 1.0 {
                    img.set(x, y, RED);
                }
            }
        }
        img
    }

    fn count(img: &RgbImage, c: Rgb) -> usize {
        img.pixels().iter().filter(|&&p| p == c).count()
    }

    #[test]
    fn median_radius_zero_is_identity() {
        let img = ellipse(20, 10, 6.0, 3.0, 10.0);
        assert_eq!(median_filter(&img, 0), img);
    }

    #[test]
    fn median_removes_center_spike() {
        let mut img = RgbImage::filled(3, 3, Rgb::new(100, 100, 100));
        img.set(1, 1, Rgb::WHITE);
        assert_eq!(median_filter(&img, 1).get(1, 1), Rgb::new(100, 100, 100));
    }

    #[test]
    fn median_constant_fixed_point() {
        let img = RgbImage::filled(5, 4, Rgb::new(7, 7, 7));
        let once = median_filter(&img, 1);
        assert_eq!(once, img);
        assert_eq!(median_filter(&once, 2), img);
    }

    #[test]
    fn unify_snaps_near_background() {
        let mut img = RgbImage::filled(5, 5, Rgb::WHITE);
        img.set(2, 2, Rgb::new(250, 250, 250));
        img.set(1, 2, Rgb::new(10, 10, 10));
        let cfg = PreprocessConfig {
            background_tolerance: 10.0,
            median_radius: 1,
        };
        let (out, bg) = unify_background(&img, &cfg).unwrap();
        assert_eq!(bg, Rgb::WHITE);
        assert_eq!(out.get(2, 2), Rgb::WHITE);
        assert_eq!(out.get(1, 2), Rgb::new(10, 10, 10));
    }

    #[test]
    fn unify_zero_tolerance() {
        let mut img = RgbImage::filled(4, 4, Rgb::WHITE);
        img.set(1, 1, Rgb::new(254, 255, 255));
        let cfg = PreprocessConfig {
            background_tolerance: 0.0,
            median_radius: 0,
        };
        let (out, _) = unify_background(&img, &cfg).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn unify_border_tie_prefers_smallest_color() {
        // 3x3: border of 8 pixels, 4 black and 4 white.
        let px = [0, 0, 0, 1, 9, 1, 1, 1, 0].map(|v| match v {
            0 => Rgb::WHITE,
            1 => Rgb::BLACK,
            _ => RED,
        });
        let img = RgbImage::new(3, 3, px.to_vec()).unwrap();
        assert_eq!(border_mode(&img), Rgb::BLACK);
    }

    #[test]
    fn unify_too_small() {
        let img = RgbImage::filled(2, 5, Rgb::WHITE);
        assert_eq!(
            unify_background(&img, &PreprocessConfig::default()),
            Err(PreprocessError::ImageTooSmall {
                width: 2,
                height: 5
            })
        );
    }

    #[test]
    fn config_validation() {
        assert!(PreprocessConfig::default().validate().is_ok());
        let bad = PreprocessConfig {
            median_radius: 3,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = PreprocessConfig {
            background_tolerance: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn level_ellipse_unchanged() {
        let img = ellipse(120, 80, 40.0, 15.0, 0.0);
        assert_eq!(normalize_rotation(&img, BLUE).unwrap(), img);
    }

    #[test]
    fn tilted_ellipse_is_leveled() {
        let img = ellipse(200, 200, 60.0, 20.0, 30.0);
        let before = foreground_orientation(&img, BLUE).unwrap();
        assert!((before.to_degrees() - 30.0).abs() < 1.0);
        let out = normalize_rotation(&img, BLUE).unwrap();
        let after = foreground_orientation(&out, BLUE).unwrap();
        assert!(after.to_degrees().abs() < 2.0, "residual {after}");
        let (n0, n1) = (count(&img, RED) as f64, count(&out, RED) as f64);
        assert!((n1 - n0).abs() / n0 < 0.05);
    }

    #[test]
    fn rotation_on_blank_image() {
        let img = RgbImage::filled(10, 10, BLUE);
        assert_eq!(
            normalize_rotation(&img, BLUE),
            Err(PreprocessError::EmptyForeground)
        );
    }
}
