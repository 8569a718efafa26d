//! Correspondence refinement by rank truncation and rigid re-alignment.
//!
//! A two-view constraint matrix built from exact correspondences has rank at
//! most 8; noise raises it to full rank. `refine_pair` projects the matrix
//! back to rank 8, reads refined coordinates out of the linear columns, and
//! rigidly re-aligns them to the observations (the truncation is computed in
//! a normalized frame and can drift/flip the point set as a whole; the
//! alignment removes exactly that gauge freedom and nothing else).
//! `refine_all` runs this over every usable view pair and fuses the per-pair
//! candidates with a component-wise median.

use nalgebra::{DMatrix, Matrix2};
use rayon::prelude::*;

use crate::constraints::build_gamma;
use crate::error::{Error, Result};
use crate::grid::{ObservationGrid, Pixel};
use crate::normalize::NormTransform;

/// Closest (Frobenius) matrix of rank at most `r`: SVD with trailing singular
/// values zeroed. If `r` is at least the minimum dimension this is a copy.
pub fn truncate_to_rank(a: &DMatrix<f64>, r: usize) -> DMatrix<f64> {
    if r >= a.nrows().min(a.ncols()) {
        return a.clone();
    }
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd requested u");
    let v_t = svd.v_t.as_ref().expect("svd requested v_t");
    let mut s = svd.singular_values.clone();
    for i in r..s.len() {
        s[i] = 0.0;
    }
    let k = s.len();
    let mut us = u.columns(0, k).into_owned();
    for (j, &sv) in s.iter().enumerate() {
        us.column_mut(j).scale_mut(sv);
    }
    us * v_t.rows(0, k)
}

/// A planar rigid motion (orthogonal linear part — rotation or reflection —
/// plus translation). No scaling.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform2 {
    pub rotation: Matrix2<f64>,
    pub translation: Pixel,
}

impl RigidTransform2 {
    pub fn identity() -> Self {
        RigidTransform2 {
            rotation: Matrix2::identity(),
            translation: Pixel::new(0.0, 0.0),
        }
    }

    pub fn apply(&self, p: Pixel) -> Pixel {
        self.rotation * p + self.translation
    }
}

/// Least-squares orthogonal alignment of `candidates` onto `observations`
/// (translation + rotation/reflection, no scaling). Returns the transform and
/// the aligned candidates.
pub fn procrustes_align(
    candidates: &[Pixel],
    observations: &[Pixel],
) -> Result<(RigidTransform2, Vec<Pixel>)> {
    if candidates.len() != observations.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} candidates vs {} observations",
            candidates.len(),
            observations.len()
        )));
    }
    if candidates.is_empty() {
        return Err(Error::DegenerateSet);
    }
    let n = candidates.len() as f64;
    let c_bar = candidates.iter().sum::<Pixel>() / n;
    let o_bar = observations.iter().sum::<Pixel>() / n;
    let spread = candidates
        .iter()
        .map(|p| (p - c_bar).norm())
        .fold(0.0f64, f64::max);
    if spread < 1e-12 * (1.0 + c_bar.norm()) {
        return Err(Error::DegenerateSet);
    }
    // Cross-covariance H = sum of (candidate deviation) (observation deviation)^T.
    let mut h = Matrix2::zeros();
    for (c, o) in candidates.iter().zip(observations) {
        h += (c - c_bar) * (o - o_bar).transpose();
    }
    let svd = h.svd(true, true);
    let u = svd.u.expect("2x2 svd");
    let v_t = svd.v_t.expect("2x2 svd");
    let rotation = (u * v_t).transpose();
    let translation = o_bar - rotation * c_bar;
    let t = RigidTransform2 { rotation, translation };
    let aligned = candidates.iter().map(|&c| t.apply(c)).collect();
    Ok((t, aligned))
}

/// Refined positions for the points co-observed by one view pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRefinement {
    /// Point indices co-observed by both views, in ascending order.
    pub points: Vec<usize>,
    pub refined_a: Vec<Pixel>,
    pub refined_b: Vec<Pixel>,
}

/// One rank-truncation refinement pass for a single view pair.
pub fn refine_pair(grid: &ObservationGrid, view_a: usize, view_b: usize) -> Result<PairRefinement> {
    let co = grid.co_observed(view_a, view_b);
    if co.len() < 9 {
        return Err(Error::InsufficientPoints {
            needed: 9,
            got: co.len(),
        });
    }
    let obs_a: Vec<Pixel> = co.iter().map(|&m| grid.get(view_a, m).unwrap()).collect();
    let obs_b: Vec<Pixel> = co.iter().map(|&m| grid.get(view_b, m).unwrap()).collect();
    let ta = NormTransform::fit(&obs_a);
    let tb = NormTransform::fit(&obs_b);
    let pairs: Vec<(Pixel, Pixel)> = obs_a
        .iter()
        .zip(&obs_b)
        .map(|(&a, &b)| (ta.forward(a), tb.forward(b)))
        .collect();
    let g = build_gamma(&pairs)?;
    let gt = truncate_to_rank(&g, 8);
    let cand_a: Vec<Pixel> = (0..co.len())
        .map(|i| ta.backward(Pixel::new(gt[(i, 1)], gt[(i, 2)])))
        .collect();
    let cand_b: Vec<Pixel> = (0..co.len())
        .map(|i| tb.backward(Pixel::new(gt[(i, 3)], gt[(i, 4)])))
        .collect();
    let (_, refined_a) = procrustes_align(&cand_a, &obs_a)?;
    let (_, refined_b) = procrustes_align(&cand_b, &obs_b)?;
    Ok(PairRefinement {
        points: co,
        refined_a,
        refined_b,
    })
}

/// View pairs with at least nine co-observed points.
pub fn usable_pairs(grid: &ObservationGrid) -> Vec<(usize, usize)> {
    let n = grid.views();
    let mut pairs = Vec::new();
    for a in 0..n {
        for b in (a + 1)..n {
            if grid.co_observed(a, b).len() >= 9 {
                pairs.push((a, b));
            }
        }
    }
    pairs
}

pub(crate) fn median_of(mut values: Vec<f64>) -> f64 {
    values.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Whole-grid refinement: every usable view pair proposes candidates for the
/// entries it covers; each observed entry moves to the component-wise median
/// of its candidates. Repeats `inner_iters` times on the evolving grid.
/// Entries covered by no usable pair, and missing entries, are untouched.
pub fn refine_all(grid: &ObservationGrid, inner_iters: usize) -> Result<ObservationGrid> {
    let pairs = usable_pairs(grid);
    if pairs.is_empty() {
        return Err(Error::NoUsablePairs);
    }
    let mut current = grid.clone();
    for _ in 0..inner_iters {
        let results: Vec<PairRefinement> = pairs
            .par_iter()
            .map(|&(a, b)| refine_pair(&current, a, b).expect("pair usability checked upfront"))
            .collect();
        // Candidate lists per grid entry. Median is order-independent, so the
        // parallel fill order above does not affect the result.
        let mut cand_x: Vec<Vec<f64>> = vec![Vec::new(); grid.views() * grid.points()];
        let mut cand_y: Vec<Vec<f64>> = vec![Vec::new(); grid.views() * grid.points()];
        for (&(a, b), r) in pairs.iter().zip(&results) {
            for (k, &m) in r.points.iter().enumerate() {
                cand_x[a * grid.points() + m].push(r.refined_a[k].x);
                cand_y[a * grid.points() + m].push(r.refined_a[k].y);
                cand_x[b * grid.points() + m].push(r.refined_b[k].x);
                cand_y[b * grid.points() + m].push(r.refined_b[k].y);
            }
        }
        for v in 0..grid.views() {
            for m in 0..grid.points() {
                let xs = std::mem::take(&mut cand_x[v * grid.points() + m]);
                let ys = std::mem::take(&mut cand_y[v * grid.points() + m]);
                if !xs.is_empty() && current.observed(v, m) {
                    current.set(v, m, Some(Pixel::new(median_of(xs), median_of(ys))));
                }
            }
        }
    }
    Ok(current)
}
