//! Rank-deficient constraint matrices and their coefficient closed forms.
//!
//! Two matrix families drive everything here:
//! * the M x 9 two-view matrix whose rows are `[1, u, v, u', v', uu', uv', vu', vv']`
//!   (rank at most 8 on exact data), and
//! * the K x 5 multi-view matrix built from signed-triangle-area products
//!   (rank at most 4 on exact data).
//!
//! The coefficient functions extract linear constraints (`alpha*u + beta*v +
//! gamma = 0`) on a single image point from these matrices' minors.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::grid::{ObservationGrid, Pixel};
use crate::normalize::NormTransform;

/// Coefficients of the linear constraint `alpha*u + beta*v + gamma = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoeffTriple {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl CoeffTriple {
    /// Residual of the constraint at a point.
    pub fn residual(&self, p: Pixel) -> f64 {
        self.alpha * p.x + self.beta * p.y + self.gamma
    }

    /// L1 magnitude of the coefficients.
    pub fn magnitude(&self) -> f64 {
        self.alpha.abs() + self.beta.abs() + self.gamma.abs()
    }
}

/// The 9-entry row for one correspondence `(u, v) <-> (u', v')`.
#[inline]
pub fn gamma_row(a: Pixel, b: Pixel) -> [f64; 9] {
    [
        1.0,
        a.x,
        a.y,
        b.x,
        b.y,
        a.x * b.x,
        a.x * b.y,
        a.y * b.x,
        a.y * b.y,
    ]
}

/// Builds the M x 9 two-view constraint matrix from point pairs.
pub fn build_gamma(pairs: &[(Pixel, Pixel)]) -> Result<DMatrix<f64>> {
    if pairs.len() < 9 {
        return Err(Error::InsufficientPoints {
            needed: 9,
            got: pairs.len(),
        });
    }
    let mut m = DMatrix::zeros(pairs.len(), 9);
    for (i, &(a, b)) in pairs.iter().enumerate() {
        let row = gamma_row(a, b);
        for (j, &val) in row.iter().enumerate() {
            m[(i, j)] = val;
        }
    }
    Ok(m)
}

/// The numerical rank witness: `sigma_{r+1} / sigma_1` (0 if `sigma_1` is 0).
pub fn rank_residual(a: &DMatrix<f64>, r: usize) -> Result<f64> {
    if a.nrows().min(a.ncols()) <= r {
        return Err(Error::ShapeError(format!(
            "need min dimension > {r}, have {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let sv = a.clone().svd(false, false).singular_values;
    // nalgebra returns singular values sorted descending.
    if sv[0] == 0.0 {
        return Ok(0.0);
    }
    Ok(sv[r] / sv[0])
}

/// Twice the signed area of the triangle (i1, i2, j): the 2x2 determinant of
/// difference vectors `(p_i1 - p_j, p_i2 - p_j)`.
#[inline]
pub fn xi(pts: &[Pixel], i1: usize, i2: usize, j: usize) -> f64 {
    (pts[i1].x - pts[j].x) * (pts[i2].y - pts[j].y)
        - (pts[i2].x - pts[j].x) * (pts[i1].y - pts[j].y)
}

/// Four-index generalization of `xi`:
/// `(u_i1 - u_j1)(v_i2 - v_j2) - (u_i2 - u_j2)(v_i1 - v_j1)`.
/// Reduces to `xi(i1, i2, j)` when `j1 = j2 = j`.
#[inline]
pub fn xi_cross(pts: &[Pixel], i1: usize, i2: usize, j1: usize, j2: usize) -> f64 {
    (pts[i1].x - pts[j1].x) * (pts[i2].y - pts[j2].y)
        - (pts[i2].x - pts[j2].x) * (pts[i1].y - pts[j1].y)
}

/// `xi` evaluated on grid entries, with missingness surfaced as an error.
pub fn xi_in_view(grid: &ObservationGrid, view: usize, i1: usize, i2: usize, j: usize) -> Result<f64> {
    let fetch = |point: usize| -> Result<Pixel> {
        grid.get(view, point)
            .ok_or(Error::MissingObservation { view, point })
    };
    let pts = [fetch(i1)?, fetch(i2)?, fetch(j)?];
    Ok(xi(&pts, 0, 1, 2))
}

/// The 5-entry multi-view constraint row for six points in one view.
///
/// Entry k pairs a signed area on points {2,3,4,...} with one on point 5,
/// matching exactly the first five entries of [`b_coeffs`].
#[inline]
pub fn lambda_row(pts: &[Pixel]) -> [f64; 5] {
    debug_assert!(pts.len() >= 6);
    [
        xi(pts, 2, 3, 4) * xi(pts, 0, 1, 5),
        xi(pts, 3, 1, 4) * xi(pts, 0, 2, 5),
        xi(pts, 1, 2, 4) * xi(pts, 0, 3, 5),
        xi(pts, 0, 1, 4) * xi(pts, 2, 3, 5),
        xi(pts, 0, 2, 4) * xi(pts, 3, 1, 5),
    ]
}

/// Builds the multi-view constraint matrix: one row per view in which all six
/// selected points are observed. Each view's points are normalized before the
/// row is computed (row scaling leaves the rank untouched, keeps entries O(1)).
pub fn build_lambda(
    grid: &ObservationGrid,
    points: &[usize; 6],
    views: &[usize],
) -> Result<DMatrix<f64>> {
    let mut rows: Vec<[f64; 5]> = Vec::new();
    for &v in views {
        let mut pts = Vec::with_capacity(6);
        let mut all_observed = true;
        for &m in points {
            match grid.get(v, m) {
                Some(p) => pts.push(p),
                None => {
                    all_observed = false;
                    break;
                }
            }
        }
        if !all_observed {
            continue;
        }
        let t = NormTransform::fit(&pts);
        let norm_pts: Vec<Pixel> = pts.iter().map(|&p| t.forward(p)).collect();
        rows.push(lambda_row(&norm_pts));
    }
    if rows.len() < 5 {
        return Err(Error::InsufficientViews {
            needed: 5,
            got: rows.len(),
        });
    }
    let mut m = DMatrix::zeros(rows.len(), 5);
    for (i, row) in rows.iter().enumerate() {
        for (j, &val) in row.iter().enumerate() {
            m[(i, j)] = val;
        }
    }
    Ok(m)
}

/// Determinant of the submatrix of `a` (8x9) with column `skip` removed.
fn minor_without_column(a: &DMatrix<f64>, skip: usize) -> f64 {
    let n = a.nrows();
    let mut sub = DMatrix::zeros(n, n);
    let mut c = 0;
    for j in 0..a.ncols() {
        if j == skip {
            continue;
        }
        for i in 0..n {
            sub[(i, c)] = a[(i, j)];
        }
        c += 1;
    }
    sub.determinant()
}

/// Extracts the epipolar constraint on the FIRST pair's first-view point from
/// nine correspondences.
///
/// The remaining eight pairs fix the two-view geometry; expanding the 9x9
/// constraint determinant along the target row yields `(alpha, beta, gamma)`
/// with `alpha*u_1 + beta*v_1 + gamma = 0` on exact data, where `(u_1, v_1)`
/// is the target's position in the first view.
pub fn epipolar_coeffs(pairs: &[(Pixel, Pixel); 9]) -> Result<CoeffTriple> {
    // Partner block: rows for pairs 2..9.
    let mut block = DMatrix::zeros(8, 9);
    for i in 0..8 {
        let row = gamma_row(pairs[i + 1].0, pairs[i + 1].1);
        for (j, &val) in row.iter().enumerate() {
            block[(i, j)] = val;
        }
    }
    let minors: Vec<f64> = (0..9).map(|j| minor_without_column(&block, j)).collect();
    let scale = minors.iter().fold(0.0f64, |acc, m| acc.max(m.abs()));
    let (up, vp) = (pairs[0].1.x, pairs[0].1.y);
    let alpha = -minors[1] - up * minors[5] + vp * minors[6];
    let beta = minors[2] - up * minors[7] + vp * minors[8];
    let gamma = minors[0] - up * minors[3] + vp * minors[4];
    let coeff_scale = scale * (1.0 + up.abs() + vp.abs());
    if alpha.abs() <= 1e-12 * coeff_scale
        && beta.abs() <= 1e-12 * coeff_scale
        && gamma.abs() <= 1e-12 * coeff_scale
    {
        return Err(Error::DegenerateMinors);
    }
    Ok(CoeffTriple { alpha, beta, gamma })
}

/// Extracts the multi-view constraint on one point in one view.
///
/// `points[0..5]` are the five helper points; `points[5]` is the target point.
/// The five helpers must be observed in `target_view` and all of `views`; the
/// target must be observed in all of `views` (its position in `target_view` is
/// what the constraint describes — it may be missing there).
///
/// Returns coefficients in PIXEL coordinates of the target view.
pub fn multiview_coeffs(
    grid: &ObservationGrid,
    points: &[usize; 6],
    target_view: usize,
    views: &[usize; 4],
) -> Result<CoeffTriple> {
    // Gather helper points in the target view.
    let mut helpers = Vec::with_capacity(5);
    for &m in &points[..5] {
        helpers.push(
            grid.get(target_view, m)
                .ok_or(Error::MissingObservation {
                    view: target_view,
                    point: m,
                })?,
        );
    }
    // All six points in each partner view.
    let mut partner_rows = [[0.0; 5]; 4];
    for (k, &v) in views.iter().enumerate() {
        let mut pts = Vec::with_capacity(6);
        for &m in points {
            pts.push(grid.get(v, m).ok_or(Error::MissingObservation { view: v, point: m })?);
        }
        let t = NormTransform::fit(&pts);
        let norm_pts: Vec<Pixel> = pts.iter().map(|&p| t.forward(p)).collect();
        partner_rows[k] = lambda_row(&norm_pts);
    }

    // Normalize the target view on the helpers (the target position is unknown).
    let t_norm = NormTransform::fit(&helpers);
    let h: Vec<Pixel> = helpers.iter().map(|&p| t_norm.forward(p)).collect();

    let x345 = xi(&h, 2, 3, 4);
    let x425 = xi(&h, 3, 1, 4);
    let x235 = xi(&h, 1, 2, 4);
    let x125 = xi(&h, 0, 1, 4);
    let x135 = xi(&h, 0, 2, 4);
    let (u0, v0) = (h[0].x, h[0].y);
    let (u1, v1) = (h[1].x, h[1].y);
    let (u2, v2) = (h[2].x, h[2].y);
    let (u3, v3) = (h[3].x, h[3].y);

    let c_alpha = [
        x345 * (v0 - v1),
        x425 * (v0 - v2),
        x235 * (v0 - v3),
        x125 * (v2 - v3),
        x135 * (v3 - v1),
    ];
    let c_beta = [
        x345 * (u1 - u0),
        x425 * (u2 - u0),
        x235 * (u3 - u0),
        x125 * (u3 - u2),
        x135 * (u1 - u3),
    ];
    let c_gamma = [
        x345 * (u0 * v1 - u1 * v0),
        x425 * (u0 * v2 - u2 * v0),
        x235 * (u0 * v3 - u3 * v0),
        x125 * (u2 * v3 - u3 * v2),
        x135 * (u3 * v1 - u1 * v3),
    ];

    let det_with = |c: &[f64; 5]| -> f64 {
        let mut m = DMatrix::zeros(5, 5);
        for i in 0..5 {
            m[(i, 0)] = c[i];
            for k in 0..4 {
                m[(i, k + 1)] = partner_rows[k][i];
            }
        }
        m.determinant()
    };

    let alpha_n = det_with(&c_alpha);
    let beta_n = det_with(&c_beta);
    let gamma_n = det_with(&c_gamma);

    // Degeneracy scale: Hadamard-style bound from column magnitudes.
    let col_scale: f64 = (0..4)
        .map(|k| {
            partner_rows[k]
                .iter()
                .map(|e| e * e)
                .sum::<f64>()
                .sqrt()
                .max(1e-300)
        })
        .product();
    let c_scale = [&c_alpha, &c_beta, &c_gamma]
        .iter()
        .map(|c| c.iter().map(|e| e * e).sum::<f64>().sqrt())
        .fold(0.0f64, f64::max);
    let scale = col_scale * c_scale;
    if alpha_n.abs() <= 1e-12 * scale
        && beta_n.abs() <= 1e-12 * scale
        && gamma_n.abs() <= 1e-12 * scale
    {
        return Err(Error::DegenerateMinors);
    }

    let (alpha, beta, gamma) = t_norm.line_to_pixels(alpha_n, beta_n, gamma_n);
    Ok(CoeffTriple { alpha, beta, gamma })
}

/// Index helpers for the 3x4 projection matrix in the flattened 1-based layout
/// `p1..p12` (row-major).
#[inline]
fn p_entry(p: &crate::geometry::ProjMatrix, one_based: usize) -> f64 {
    let i = one_based - 1;
    p[(i / 4, i % 4)]
}

/// Determinant of the 4x4 two-view depth-elimination matrix at given image
/// coordinates.
fn k_det(
    p: &crate::geometry::ProjMatrix,
    q: &crate::geometry::ProjMatrix,
    u: f64,
    v: f64,
    up: f64,
    vp: f64,
) -> f64 {
    let mut k = nalgebra::Matrix4::<f64>::zeros();
    for c in 0..4 {
        k[(0, c)] = p[(0, c)] - u * p[(2, c)];
        k[(1, c)] = p[(1, c)] - v * p[(2, c)];
        k[(2, c)] = q[(0, c)] - up * q[(2, c)];
        k[(3, c)] = q[(1, c)] - vp * q[(2, c)];
    }
    k.determinant()
}

/// Monomial masks that contain the product u*v or u'*v' (bit0 = u, bit1 = v,
/// bit2 = u', bit3 = v'). These are exactly the coefficients of det(K) that
/// vanish for every pair of projection matrices.
pub const FORBIDDEN_MONOMIALS: [usize; 7] = [0b0011, 0b1100, 0b0111, 0b1011, 0b1101, 0b1110, 0b1111];

/// All 16 monomial coefficients of det(K) as a multilinear polynomial in
/// (u, v, u', v'), indexed by the bitmask of the monomial.
///
/// det(K) is multilinear, so evaluating at the corners of {0,1}^4 and
/// Mobius-inverting over the subset lattice reconstructs the coefficients
/// exactly.
pub fn det_k_coefficients(
    p: &crate::geometry::ProjMatrix,
    q: &crate::geometry::ProjMatrix,
) -> [f64; 16] {
    let mut vals = [0.0f64; 16];
    for (mask, val) in vals.iter_mut().enumerate() {
        let u = (mask & 1) as f64;
        let v = ((mask >> 1) & 1) as f64;
        let up = ((mask >> 2) & 1) as f64;
        let vp = ((mask >> 3) & 1) as f64;
        *val = k_det(p, q, u, v, up, vp);
    }
    // coeff[S] = sum over subsets T of S of (-1)^{|S \ T|} vals[T].
    let mut coeffs = [0.0f64; 16];
    for (s, coeff) in coeffs.iter_mut().enumerate() {
        let mut acc = 0.0;
        let mut t = s;
        loop {
            let sign = if ((s ^ t).count_ones()) % 2 == 0 { 1.0 } else { -1.0 };
            acc += sign * vals[t];
            if t == 0 {
                break;
            }
            t = (t - 1) & s;
        }
        *coeff = acc;
    }
    coeffs
}

/// Checks that the bilinear-forbidden coefficients of det(K) vanish:
/// max |forbidden coefficient| / max |coefficient|.
pub fn vanishing_coeff_check(
    p: &crate::geometry::ProjMatrix,
    q: &crate::geometry::ProjMatrix,
) -> f64 {
    let coeffs = det_k_coefficients(p, q);
    let max_all = coeffs.iter().fold(0.0f64, |a, c| a.max(c.abs())).max(1e-300);
    let max_forbidden = FORBIDDEN_MONOMIALS
        .iter()
        .map(|&m| coeffs[m].abs())
        .fold(0.0f64, f64::max);
    max_forbidden / max_all
}

/// Direct evaluation of the published 24-term expansion of the u*v
/// coefficient of det(K); returns |sum| / max |term| (the sum telescopes
/// to zero for every projection-matrix pair).
pub fn uv_coeff_sum_check(
    p: &crate::geometry::ProjMatrix,
    q: &crate::geometry::ProjMatrix,
) -> f64 {
    let pp = |i: usize| p_entry(p, i);
    let qq = |i: usize| p_entry(q, i);
    // (sign, p_i, p_j, q_k, q_l) terms.
    const TERMS: [(f64, usize, usize, usize, usize); 24] = [
        (1.0, 9, 10, 3, 8),
        (1.0, 9, 11, 4, 6),
        (1.0, 9, 12, 2, 7),
        (1.0, 10, 12, 3, 5),
        (1.0, 10, 11, 1, 8),
        (1.0, 10, 9, 4, 7),
        (1.0, 11, 9, 2, 8),
        (1.0, 11, 10, 4, 5),
        (1.0, 11, 12, 1, 6),
        (1.0, 12, 11, 2, 5),
        (1.0, 12, 10, 1, 7),
        (1.0, 12, 9, 3, 6),
        (-1.0, 9, 12, 3, 6),
        (-1.0, 9, 11, 2, 8),
        (-1.0, 9, 10, 4, 7),
        (-1.0, 10, 9, 3, 8),
        (-1.0, 10, 11, 4, 5),
        (-1.0, 10, 12, 1, 7),
        (-1.0, 11, 12, 2, 5),
        (-1.0, 11, 10, 1, 8),
        (-1.0, 11, 9, 4, 6),
        (-1.0, 12, 9, 2, 7),
        (-1.0, 12, 10, 3, 5),
        (-1.0, 12, 11, 1, 6),
    ];
    let mut sum = 0.0;
    let mut max_term: f64 = 0.0;
    for &(sign, i, j, k, l) in &TERMS {
        let term = sign * pp(i) * pp(j) * qq(k) * qq(l);
        sum += term;
        max_term = max_term.max(term.abs());
    }
    sum.abs() / max_term.max(1e-300)
}

/// The eighteen product coefficients of the multi-view determinant expansion
/// for six points in one view.
pub fn b_coeffs(pts: &[Pixel]) -> [f64; 18] {
    debug_assert!(pts.len() >= 6);
    let x = |i1, i2, j| xi(pts, i1, i2, j);
    let xc = |i1, i2, j1, j2| xi_cross(pts, i1, i2, j1, j2);
    [
        x(2, 3, 4) * x(0, 1, 5),
        x(3, 1, 4) * x(0, 2, 5),
        x(1, 2, 4) * x(0, 3, 5),
        x(2, 3, 5) * x(0, 1, 4),
        x(3, 1, 5) * x(0, 2, 4),
        x(1, 2, 5) * x(0, 3, 4),
        -x(1, 2, 5) * xc(0, 3, 3, 4),
        x(1, 3, 5) * xc(0, 2, 2, 4),
        -x(2, 3, 5) * xc(0, 1, 1, 4),
        -x(1, 2, 4) * xc(0, 3, 3, 5),
        x(1, 3, 4) * xc(0, 2, 2, 5),
        -x(2, 3, 4) * xc(0, 1, 1, 5),
        x(1, 3, 5) * xc(0, 2, 3, 4) - x(2, 3, 4) * xc(0, 1, 3, 5),
        x(2, 1, 5) * xc(0, 3, 2, 4) - x(2, 3, 4) * xc(0, 1, 2, 5),
        x(1, 3, 4) * xc(0, 2, 3, 5) - x(2, 3, 5) * xc(0, 1, 3, 4),
        x(1, 3, 4) * xc(0, 2, 1, 5) - x(1, 2, 5) * xc(0, 3, 1, 4),
        x(2, 1, 4) * xc(0, 3, 2, 5) - x(2, 3, 5) * xc(0, 1, 2, 4),
        x(1, 3, 5) * xc(0, 2, 1, 4) - x(1, 2, 4) * xc(0, 3, 1, 5),
    ]
}

/// Max normalized residual over the fourteen identities the b-coefficients
/// satisfy: six pairings that cancel and eight sums that telescope to zero.
pub fn b_relation_check(pts: &[Pixel]) -> f64 {
    let b = b_coeffs(pts);
    let identities = [
        b[0] + b[11],
        b[1] + b[10],
        b[2] + b[9],
        b[3] + b[8],
        b[4] + b[7],
        b[5] + b[6],
        b[12] + b[4] + b[0],
        b[13] + b[5] + b[0],
        b[14] + b[3] + b[1],
        b[15] + b[5] + b[1],
        b[16] + b[3] + b[2],
        b[17] + b[4] + b[2],
        b[16] + b[15] + b[12],
        b[17] + b[14] + b[13],
    ];
    let scale = b.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    identities.iter().fold(0.0f64, |a, v| a.max(v.abs())) / scale
}
