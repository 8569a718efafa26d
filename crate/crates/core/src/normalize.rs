//! Per-view coordinate normalization (centroid translation + RMS scaling).
//!
//! Raw pixel coordinates on a 3024-px image make constraint-matrix entries
//! span many orders of magnitude; translating each view's points to their
//! centroid and scaling the RMS radius to sqrt(2) keeps singular-value work
//! well-conditioned. The constraint ranks are invariant under these per-view
//! affine maps.

use crate::grid::Pixel;

/// A similarity map `x -> (x - center) * scale` and its inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormTransform {
    pub center: Pixel,
    pub scale: f64,
}

impl NormTransform {
    /// Identity transform.
    pub fn identity() -> Self {
        Self {
            center: Pixel::new(0.0, 0.0),
            scale: 1.0,
        }
    }

    /// Fits the transform to a point set: centroid to origin, RMS radius to sqrt(2).
    ///
    /// A set with zero spread gets scale 1 (pure translation).
    pub fn fit(points: &[Pixel]) -> Self {
        if points.is_empty() {
            return Self::identity();
        }
        let n = points.len() as f64;
        let center = points.iter().sum::<Pixel>() / n;
        let rms = (points.iter().map(|p| (p - center).norm_squared()).sum::<f64>() / n).sqrt();
        let scale = if rms > 0.0 { 2f64.sqrt() / rms } else { 1.0 };
        Self { center, scale }
    }

    /// Pixel -> normalized.
    #[inline]
    pub fn forward(&self, p: Pixel) -> Pixel {
        (p - self.center) * self.scale
    }

    /// Normalized -> pixel.
    #[inline]
    pub fn backward(&self, p: Pixel) -> Pixel {
        p / self.scale + self.center
    }

    /// Maps a line `alpha*u + beta*v + gamma = 0` in normalized coordinates to
    /// the equivalent line in pixel coordinates.
    pub fn line_to_pixels(&self, alpha: f64, beta: f64, gamma: f64) -> (f64, f64, f64) {
        // u_n = (u - cu) * s: substitute into alpha*u_n + beta*v_n + gamma = 0.
        let a = alpha * self.scale;
        let b = beta * self.scale;
        let g = gamma - alpha * self.scale * self.center.x - beta * self.scale * self.center.y;
        (a, b, g)
    }
}

/// Normalizes a point list, returning the transform and mapped points.
pub fn normalize_points(points: &[Pixel]) -> (NormTransform, Vec<Pixel>) {
    let t = NormTransform::fit(points);
    (t, points.iter().map(|&p| t.forward(p)).collect())
}
