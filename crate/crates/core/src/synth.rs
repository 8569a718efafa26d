//! Synthetic scene generation and controlled corruption.
//!
//! Scenes are the ground-truth oracle for every statistical test: world
//! points drawn uniformly in the unit cube, pinhole cameras placed on a
//! sphere around it, all points visible in all views. `corrupt` then layers
//! Gaussian noise, gross outliers, and missing entries on the exact grid
//! while recording exactly what was injected.

use nalgebra::{Matrix3, Matrix3x4, Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::geometry::ProjMatrix;
use crate::grid::{ObservationGrid, OutlierIndex, OutlierSet, Pixel};

/// Default square image side in pixels.
pub const DEFAULT_IMAGE_SIZE: f64 = 3024.0;

/// A synthetic scene: world geometry, cameras, and the exact projection grid.
#[derive(Debug, Clone)]
pub struct Scene {
    pub points: Vec<Point3<f64>>,
    pub cameras: Vec<ProjMatrix>,
    /// Image bounds (width, height) in pixels.
    pub image_size: (f64, f64),
    /// Exact projections: `grid.get(view, point)` for every camera/point.
    pub grid: ObservationGrid,
}

/// Corruption parameters applied by [`corrupt`].
#[derive(Debug, Clone, PartialEq)]
pub struct CorruptionSpec {
    /// Isotropic Gaussian noise standard deviation per axis (px).
    pub sigma: f64,
    /// Fraction of observed entries displaced as gross outliers.
    pub outlier_rate: f64,
    /// Outlier displacement magnitude range (min, max) in px.
    pub outlier_offset: (f64, f64),
    /// Fraction of observed entries dropped entirely.
    pub missing_rate: f64,
    /// RNG seed for the corruption draws.
    pub seed: u64,
    /// Image bounds used for the ±10% clamp window.
    pub image_size: (f64, f64),
}

impl Default for CorruptionSpec {
    fn default() -> Self {
        CorruptionSpec {
            sigma: 0.0,
            outlier_rate: 0.0,
            outlier_offset: (150.0, 300.0),
            missing_rate: 0.0,
            seed: 0,
            image_size: (DEFAULT_IMAGE_SIZE, DEFAULT_IMAGE_SIZE),
        }
    }
}

impl CorruptionSpec {
    /// The sigma whose 2-D Gaussian displacement norm has the given mean:
    /// mean = sigma * sqrt(pi / 2).
    pub fn sigma_for_mean_error(mean: f64) -> f64 {
        mean / (std::f64::consts::PI / 2.0).sqrt()
    }

    fn validate(&self) -> Result<()> {
        let ok = self.sigma >= 0.0
            && (0.0..=1.0).contains(&self.outlier_rate)
            && (0.0..=1.0).contains(&self.missing_rate)
            && self.outlier_offset.0 >= 0.0
            && self.outlier_offset.1 >= self.outlier_offset.0;
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeError(format!("invalid corruption spec: {self:?}")))
        }
    }
}

/// Result of [`corrupt`]: the corrupted grid, the injected-outlier ground
/// truth (for recall/precision scoring), and how many points hit the clamp
/// window at the image margins.
#[derive(Debug, Clone)]
pub struct Corrupted {
    pub grid: ObservationGrid,
    pub injected: OutlierSet,
    pub clamp_events: usize,
}

fn unit_normal_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-9 {
            return v / n;
        }
    }
}

/// Draws one candidate camera on a sphere of radius 3–5 around the cube
/// centroid, looking inward, with a random roll about the optical axis.
fn draw_camera(rng: &mut ChaCha8Rng, size: f64) -> ProjMatrix {
    let half = size / 2.0;
    let center = Vector3::new(0.5, 0.5, 0.5);
    let dir = unit_normal_vector(rng);
    let rad: f64 = rng.gen_range(3.0..5.0);
    let c = center + dir * rad;
    let f = (center - c).normalize();
    let up = if f.z.abs() < 0.95 {
        Vector3::new(0.0, 0.0, 1.0)
    } else {
        Vector3::new(0.0, 1.0, 0.0)
    };
    let rx = up.cross(&f).normalize();
    let ry = f.cross(&rx);
    let phi: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let rx2 = rx * phi.cos() + ry * phi.sin();
    let ry2 = rx * (-phi.sin()) + ry * phi.cos();
    let r = Matrix3::from_rows(&[rx2.transpose(), ry2.transpose(), f.transpose()]);
    // Focal length scaled so the cube (circumradius ~0.87 around its centroid)
    // spans ~90% of the half-image at this camera distance.
    let fx = 0.9 * half * (rad - 0.87) / 0.87;
    let k = Matrix3::new(fx, 0.0, half, 0.0, fx, half, 0.0, 0.0, 1.0);
    let mut rt = Matrix3x4::zeros();
    rt.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    rt.set_column(3, &(-r * c));
    k * rt
}

/// Generates `m` world points and `n` cameras, all points visible in all
/// views, deterministic in `seed`.
pub fn generate_scene(m: usize, n: usize, seed: u64) -> Result<Scene> {
    if m < 1 {
        return Err(Error::InsufficientPoints { needed: 1, got: m });
    }
    if n < 1 {
        return Err(Error::InsufficientViews { needed: 1, got: n });
    }
    let size = DEFAULT_IMAGE_SIZE;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Point3<f64>> = (0..m)
        .map(|_| {
            Point3::new(
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
                rng.gen_range(0.0..1.0),
            )
        })
        .collect();

    let mut cameras = Vec::with_capacity(n);
    let mut grid = ObservationGrid::new(m, n);
    const MAX_ATTEMPTS: usize = 1000;
    for view in 0..n {
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS {
            let cam = draw_camera(&mut rng, size);
            let mut projections = Vec::with_capacity(m);
            let mut ok = true;
            for p in &points {
                let h = cam * p.to_homogeneous();
                let depth = h.z;
                if depth <= 0.5 {
                    ok = false;
                    break;
                }
                let uv = Pixel::new(h.x / depth, h.y / depth);
                if uv.x <= 0.02 * size || uv.x >= 0.98 * size || uv.y <= 0.02 * size || uv.y >= 0.98 * size
                {
                    ok = false;
                    break;
                }
                projections.push(uv);
            }
            if ok {
                for (point, &uv) in projections.iter().enumerate() {
                    grid.set(view, point, Some(uv));
                }
                cameras.push(cam);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::GenerationFailure { attempts: MAX_ATTEMPTS });
        }
    }
    Ok(Scene {
        points,
        cameras,
        image_size: (size, size),
        grid,
    })
}

/// Applies Gaussian noise, gross outliers, and missingness to a grid.
///
/// Order of operations (all driven by `spec.seed`): per-entry Gaussian noise,
/// then outlier displacement on a without-replacement sample of entries, then
/// missingness on an independent sample. An injected outlier that is later
/// marked missing is removed from the returned ground-truth list. Coordinates
/// are clamped to [-10%, +110%] of the image bounds.
pub fn corrupt(grid: &ObservationGrid, spec: &CorruptionSpec) -> Result<Corrupted> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = grid.clone();

    let observed: Vec<OutlierIndex> = (0..grid.views())
        .flat_map(|v| (0..grid.points()).map(move |m| OutlierIndex { view: v, point: m }))
        .filter(|ix| grid.observed(ix.view, ix.point))
        .collect();

    if spec.sigma > 0.0 {
        for ix in &observed {
            let p = out.get(ix.view, ix.point).unwrap();
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            out.set(
                ix.view,
                ix.point,
                Some(Pixel::new(p.x + spec.sigma * dx, p.y + spec.sigma * dy)),
            );
        }
    }

    let n_outliers = (spec.outlier_rate * observed.len() as f64).round() as usize;
    let mut injected = OutlierSet::new();
    if n_outliers > 0 {
        let chosen = rand::seq::index::sample(&mut rng, observed.len(), n_outliers);
        for k in chosen.iter() {
            let ix = observed[k];
            let mag = rng.gen_range(spec.outlier_offset.0..=spec.outlier_offset.1);
            let ang: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let p = out.get(ix.view, ix.point).unwrap();
            out.set(
                ix.view,
                ix.point,
                Some(Pixel::new(p.x + mag * ang.cos(), p.y + mag * ang.sin())),
            );
            injected.insert(ix);
        }
    }

    let n_missing = (spec.missing_rate * observed.len() as f64).round() as usize;
    if n_missing > 0 {
        let chosen = rand::seq::index::sample(&mut rng, observed.len(), n_missing);
        let mut dropped = OutlierSet::new();
        for k in chosen.iter() {
            let ix = observed[k];
            out.set(ix.view, ix.point, None);
            dropped.insert(ix);
        }
        injected = injected
            .iter()
            .filter(|ix| !dropped.contains(ix))
            .copied()
            .collect();
    }

    // Clamp to the padded image window.
    let (w, h) = spec.image_size;
    let (lo_x, hi_x) = (-0.10 * w, 1.10 * w);
    let (lo_y, hi_y) = (-0.10 * h, 1.10 * h);
    let mut clamp_events = 0;
    for ix in &observed {
        if let Some(p) = out.get(ix.view, ix.point) {
            let q = Pixel::new(p.x.clamp(lo_x, hi_x), p.y.clamp(lo_y, hi_y));
            if q != p {
                clamp_events += 1;
                out.set(ix.view, ix.point, Some(q));
            }
        }
    }

    Ok(Corrupted {
        grid: out,
        injected,
        clamp_events,
    })
}
