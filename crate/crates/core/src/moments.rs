/// Second-order central moments of a pixel set.
///
/// Coordinates are accumulated relative to a caller-chosen origin (usually the
/// bounding-box corner) in integer arithmetic, so a translated pixel set
/// yields bit-identical moments when the origin moves with it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Moments {
    pub area: u64,
    /// Centroid relative to the origin.
    pub cx: f64,
    pub cy: f64,
    pub mu20: f64,
    pub mu02: f64,
    pub mu11: f64,
}

impl Moments {
    pub fn from_points<I: IntoIterator<Item = (i64, i64)>>(points: I) -> Option<Self> {
        let (mut n, mut sx, mut sy, mut sxx, mut syy, mut sxy) =
            (0i64, 0i64, 0i64, 0i64, 0i64, 0i64);
        for (x, y) in points {
            n += 1;
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
        }
        if n == 0 {
            return None;
        }
        let nf = n as f64;
        // n·μ = n·Σx² − (Σx)² is exact in i128.
        let central = |a: i64, b: i64, ab: i64| {
            ((n as i128) * (ab as i128) - (a as i128) * (b as i128)) as f64 / nf
        };
        Some(Moments {
            area: n as u64,
            cx: sx as f64 / nf,
            cy: sy as f64 / nf,
            mu20: central(sx, sx, sxx),
            mu02: central(sy, sy, syy),
            mu11: central(sx, sy, sxy),
        })
    }

    /// Principal-axis angle in `[-π/2, π/2]`, image coordinates (y down).
    pub fn orientation(&self) -> f64 {
        0.5 * (2.0 * self.mu11).atan2(self.mu20 - self.mu02)
    }

    /// Eigenvalues of the covariance matrix, larger first.
    pub fn eigenvalues(&self) -> (f64, f64) {
        let mean = 0.5 * (self.mu20 + self.mu02);
        let half_diff = 0.5 * (self.mu20 - self.mu02);
        let r = (half_diff * half_diff + self.mu11 * self.mu11).sqrt();
        (mean + r, (mean - r).max(0.0))
    }
}
