//! Projective-geometry primitives: projection, projective transforms,
//! DLT camera estimation, triangulation, camera centers.

use nalgebra::{DMatrix, Matrix3x4, Matrix4, Point3, Vector4};

use crate::error::{Error, Result};
use crate::grid::Pixel;

/// A 3x4 projection matrix (scale-equivalence class).
pub type ProjMatrix = Matrix3x4<f64>;

/// A 4x4 projective transform of world space.
pub type Homography4 = Matrix4<f64>;

/// Normalizes a projection matrix to a sign-fixed unit 12-vector
/// (first nonzero entry positive). Removes the scale/sign ambiguity
/// so matrices can be compared directly.
pub fn normalized_direction(p: &ProjMatrix) -> ProjMatrix {
    let norm = p.iter().map(|e| e * e).sum::<f64>().sqrt();
    if norm == 0.0 {
        return *p;
    }
    let mut q = p / norm;
    // nalgebra iterates column-major; sign-fix on the first nonzero in that order.
    if let Some(first) = q.iter().find(|e| e.abs() > 1e-14) {
        if *first < 0.0 {
            q = -q;
        }
    }
    q
}

/// Cosine of the angle between two projection matrices viewed as 12-vectors.
pub fn direction_cosine(a: &ProjMatrix, b: &ProjMatrix) -> f64 {
    let na = normalized_direction(a);
    let nb = normalized_direction(b);
    na.iter().zip(nb.iter()).map(|(x, y)| x * y).sum()
}

/// Projects a world point through a camera, eliminating the homogeneous scale.
pub fn project(p: &ProjMatrix, x: &Point3<f64>) -> Result<Pixel> {
    let xh = Vector4::new(x.x, x.y, x.z, 1.0);
    let h = p * xh;
    let row_norm = p.row(2).norm();
    if h.z.abs() < 1e-12 * row_norm.max(1e-300) {
        return Err(Error::PointAtInfinity);
    }
    Ok(Pixel::new(h.x / h.z, h.y / h.z))
}

/// Applies a projective transform H to a (point, camera) pair, preserving
/// all projections: X -> dehom(H [X;1]), P -> P H^{-1}.
pub fn apply_transform(
    h: &Homography4,
    x: &Point3<f64>,
    p: &ProjMatrix,
) -> Result<(Point3<f64>, ProjMatrix)> {
    let h_inv = h.try_inverse().ok_or(Error::SingularTransform)?;
    let xh = h * Vector4::new(x.x, x.y, x.z, 1.0);
    if xh.w.abs() < 1e-12 * xh.norm().max(1e-300) {
        return Err(Error::PointAtInfinity);
    }
    let x_new = Point3::new(xh.x / xh.w, xh.y / xh.w, xh.z / xh.w);
    let p_new = p * h_inv;
    Ok((x_new, p_new))
}

/// Estimates a projection matrix from world/image correspondences by the
/// direct linear transform: the smallest-singular-vector of the stacked
/// 2M x 12 system.
pub fn estimate_projection_dlt(world: &[Point3<f64>], image: &[Pixel]) -> Result<ProjMatrix> {
    if world.len() != image.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} world vs {} image points",
            world.len(),
            image.len()
        )));
    }
    if world.len() < 6 {
        return Err(Error::InsufficientPoints {
            needed: 6,
            got: world.len(),
        });
    }
    let m = world.len();
    let mut a = DMatrix::<f64>::zeros(2 * m, 12);
    for (i, (x, px)) in world.iter().zip(image.iter()).enumerate() {
        let (u, v) = (px.x, px.y);
        let xr = [x.x, x.y, x.z, 1.0];
        for j in 0..4 {
            // Row for u: p_row1 . X - u * p_row3 . X = 0
            a[(2 * i, j)] = xr[j];
            a[(2 * i, 8 + j)] = -u * xr[j];
            // Row for v: p_row2 . X - v * p_row3 . X = 0
            a[(2 * i + 1, 4 + j)] = xr[j];
            a[(2 * i + 1, 8 + j)] = -v * xr[j];
        }
    }
    let svd = a.svd(false, true);
    let sv = &svd.singular_values;
    let vt = svd.v_t.as_ref().expect("requested V^T");
    // Singular values are sorted descending; check the two smallest for ambiguity.
    let s_last = sv[sv.len() - 1];
    let s_prev = sv[sv.len() - 2];
    if (s_prev - s_last).abs() < 1e-8 * sv[0].max(1e-300) {
        return Err(Error::DegenerateConfiguration);
    }
    let null = vt.row(vt.nrows() - 1);
    let mut p = ProjMatrix::zeros();
    for r in 0..3 {
        for c in 0..4 {
            p[(r, c)] = null[4 * r + c];
        }
    }
    Ok(p)
}

/// Triangulates a world point from two or more observed views via the
/// smallest-singular-vector of the stacked linear system.
pub fn triangulate(cams: &[ProjMatrix], pts: &[Pixel]) -> Result<Point3<f64>> {
    if cams.len() != pts.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} cameras vs {} points",
            cams.len(),
            pts.len()
        )));
    }
    if cams.len() < 2 {
        return Err(Error::InsufficientViews {
            needed: 2,
            got: cams.len(),
        });
    }
    let n = cams.len();
    let mut a = DMatrix::<f64>::zeros(2 * n, 4);
    for (i, (p, px)) in cams.iter().zip(pts.iter()).enumerate() {
        for c in 0..4 {
            a[(2 * i, c)] = px.x * p[(2, c)] - p[(0, c)];
            a[(2 * i + 1, c)] = px.y * p[(2, c)] - p[(1, c)];
        }
    }
    let svd = a.svd(false, true);
    let vt = svd.v_t.as_ref().expect("requested V^T");
    let null = vt.row(vt.nrows() - 1);
    let norm = null.norm();
    if null[3].abs() < 1e-10 * norm.max(1e-300) {
        return Err(Error::PointAtInfinity);
    }
    Ok(Point3::new(
        null[0] / null[3],
        null[1] / null[3],
        null[2] / null[3],
    ))
}

/// The camera center C with P [C; 1] = 0 (right null vector, dehomogenized).
pub fn camera_center(p: &ProjMatrix) -> Result<Point3<f64>> {
    // Null vector by cofactors: component i is (-1)^i times the determinant
    // of P with column i removed (Cramer's rule gives P * null = 0 exactly).
    let det_without = |skip: usize| -> f64 {
        let cols: Vec<usize> = (0..4).filter(|&c| c != skip).collect();
        nalgebra::Matrix3::from_fn(|r, c| p[(r, cols[c])]).determinant()
    };
    let null = [
        det_without(0),
        -det_without(1),
        det_without(2),
        -det_without(3),
    ];
    let norm = null.iter().map(|v| v * v).sum::<f64>().sqrt();
    if null[3].abs() < 1e-10 * norm.max(1e-300) {
        return Err(Error::CenterAtInfinity);
    }
    Ok(Point3::new(
        null[0] / null[3],
        null[1] / null[3],
        null[2] / null[3],
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Matrix3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn canonical() -> ProjMatrix {
        let mut p = ProjMatrix::zeros();
        p[(0, 0)] = 1.0;
        p[(1, 1)] = 1.0;
        p[(2, 2)] = 1.0;
        p
    }

    fn random_camera(rng: &mut ChaCha8Rng) -> ProjMatrix {
        loop {
            let p = ProjMatrix::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            // Keep only clearly rank-3 matrices.
            let m = DMatrix::from_fn(3, 4, |r, c| p[(r, c)]);
            let sv = m.svd(false, false).singular_values;
            if sv[2] > 1e-3 * sv[0] {
                return p;
            }
        }
    }

    #[test]
    fn project_canonical_camera() {
        let p = canonical();
        let px = project(&p, &Point3::new(0.0, 0.0, 1.0)).unwrap();
        assert_relative_eq!(px.x, 0.0);
        assert_relative_eq!(px.y, 0.0);
        let px = project(&p, &Point3::new(2.0, 4.0, 2.0)).unwrap();
        assert_relative_eq!(px.x, 1.0);
        assert_relative_eq!(px.y, 2.0);
    }

    #[test]
    fn project_detects_infinity() {
        let p = canonical();
        assert_eq!(
            project(&p, &Point3::new(1.0, 1.0, 0.0)),
            Err(Error::PointAtInfinity)
        );
    }

    #[test]
    fn projection_satisfies_defining_identities() {
        // For random cameras and points, u * (p3.X) = p1.X and v * (p3.X) = p2.X.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let p = random_camera(&mut rng);
            let x = Point3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let xh = Vector4::new(x.x, x.y, x.z, 1.0);
            let h = p * xh;
            if h.z.abs() < 1e-6 {
                continue;
            }
            let px = project(&p, &x).unwrap();
            let scale = h.amax().max(1e-300);
            assert_relative_eq!(px.x * h.z, h.x, epsilon = 1e-9 * scale);
            assert_relative_eq!(px.y * h.z, h.y, epsilon = 1e-9 * scale);
        }
    }

    #[test]
    fn transform_identity_and_scale() {
        let p = canonical();
        let x = Point3::new(1.0, 2.0, 3.0);
        let (x2, p2) = apply_transform(&Homography4::identity(), &x, &p).unwrap();
        assert_relative_eq!((x2 - x).norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!((p2 - p).norm(), 0.0, epsilon = 1e-12);

        let h = Homography4::identity() * 2.0;
        let (x3, p3) = apply_transform(&h, &x, &p).unwrap();
        assert_relative_eq!((x3 - x).norm(), 0.0, epsilon = 1e-12);
        assert_relative_eq!((p3 - p / 2.0).norm(), 0.0, epsilon = 1e-12);
        let before = project(&p, &x).unwrap();
        let after = project(&p3, &x3).unwrap();
        assert_relative_eq!((before - after).norm(), 0.0, epsilon = 1e-9);
    }

    #[test]
    fn transform_preserves_projections_randomly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = random_camera(&mut rng);
        for _ in 0..50 {
            let h = Homography4::from_fn(|_, _| rng.gen_range(-1.0..1.0))
                + Homography4::identity() * 3.0;
            let x = Point3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(1.0..3.0),
            );
            let before = match project(&p, &x) {
                Ok(px) => px,
                Err(_) => continue,
            };
            let (x2, p2) = apply_transform(&h, &x, &p).unwrap();
            let after = project(&p2, &x2).unwrap();
            assert_relative_eq!((before - after).norm(), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn dlt_roundtrip_recovers_camera() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        // A realistic pinhole camera with points in front of it.
        let f = 800.0;
        let k = Matrix3::new(f, 0.0, 512.0, 0.0, f, 512.0, 0.0, 0.0, 1.0);
        let rt = Matrix3x4::new(
            1.0, 0.0, 0.0, 0.1, //
            0.0, 1.0, 0.0, -0.2, //
            0.0, 0.0, 1.0, 4.0,
        );
        let p = k * rt;
        let world: Vec<Point3<f64>> = (0..8)
            .map(|_| {
                Point3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
            })
            .collect();
        let image: Vec<Pixel> = world.iter().map(|x| project(&p, x).unwrap()).collect();
        let est = estimate_projection_dlt(&world, &image).unwrap();
        assert!(direction_cosine(&est, &p).abs() > 1.0 - 1e-10);
    }

    #[test]
    fn dlt_too_few_points() {
        let world = vec![Point3::new(0.0, 0.0, 1.0); 5];
        let image = vec![Pixel::new(0.0, 0.0); 5];
        assert!(matches!(
            estimate_projection_dlt(&world, &image),
            Err(Error::InsufficientPoints { .. })
        ));
    }

    #[test]
    fn dlt_rejects_coplanar_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = 700.0;
        let k = Matrix3::new(f, 0.0, 500.0, 0.0, f, 500.0, 0.0, 0.0, 1.0);
        let rt = Matrix3x4::new(
            1.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 5.0,
        );
        let p = k * rt;
        // All points on the z = 0 plane.
        let world: Vec<Point3<f64>> = (0..8)
            .map(|_| Point3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), 0.0))
            .collect();
        let image: Vec<Pixel> = world.iter().map(|x| project(&p, x).unwrap()).collect();
        assert_eq!(
            estimate_projection_dlt(&world, &image),
            Err(Error::DegenerateConfiguration)
        );
    }

    #[test]
    fn triangulate_roundtrip() {
        let f = 900.0;
        let k = Matrix3::new(f, 0.0, 512.0, 0.0, f, 512.0, 0.0, 0.0, 1.0);
        let p1 = k * Matrix3x4::new(
            1.0, 0.0, 0.0, 0.0, //
            0.0, 1.0, 0.0, 0.0, //
            0.0, 0.0, 1.0, 4.0,
        );
        let p2 = k * Matrix3x4::new(
            0.0, 0.0, -1.0, 4.0, //
            0.0, 1.0, 0.0, 0.0, //
            1.0, 0.0, 0.0, 4.0,
        );
        let x = Point3::new(1.0, 2.0, 3.0);
        let obs = vec![project(&p1, &x).unwrap(), project(&p2, &x).unwrap()];
        let rec = triangulate(&[p1, p2], &obs).unwrap();
        assert_relative_eq!((rec - x).norm(), 0.0, epsilon = 1e-8);
    }

    #[test]
    fn triangulate_needs_two_views() {
        let p = canonical();
        assert!(matches!(
            triangulate(&[p], &[Pixel::new(0.0, 0.0)]),
            Err(Error::InsufficientViews { .. })
        ));
    }

    #[test]
    fn camera_center_canonical_and_rigid() {
        let p = canonical();
        let c = camera_center(&p).unwrap();
        assert_relative_eq!(c.coords.norm(), 0.0, epsilon = 1e-12);

        // P = [R | -R t] has center t.
        let angle: f64 = 0.7;
        let r = Matrix3::new(
            angle.cos(),
            -angle.sin(),
            0.0,
            angle.sin(),
            angle.cos(),
            0.0,
            0.0,
            0.0,
            1.0,
        );
        let t = nalgebra::Vector3::new(1.0, -2.0, 3.0);
        let mut p = ProjMatrix::zeros();
        p.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
        p.set_column(3, &(-r * t));
        let c = camera_center(&p).unwrap();
        assert_relative_eq!((c.coords - t).norm(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn camera_center_null_residual_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let p = random_camera(&mut rng);
            let c = match camera_center(&p) {
                Ok(c) => c,
                Err(_) => continue,
            };
            let r = p * Vector4::new(c.x, c.y, c.z, 1.0);
            let scale = p.norm() * (1.0 + c.coords.norm());
            assert!(r.norm() < 1e-9 * scale);
        }
    }
}
