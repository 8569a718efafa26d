//! Closed-form re-estimation of missing or discarded image points.
//!
//! A point that is missing in one view still leaves traces: every constraint
//! row that would contain it is a linear equation `alpha*u + beta*v + gamma =
//! 0` whose coefficients are computable from the points that ARE observed.
//! Stacking such rows from the two-view minors ([`crate::constraints::epipolar_coeffs`])
//! and from the multi-view determinants ([`crate::constraints::multiview_coeffs`])
//! and solving in least squares recovers the point without any camera model.
//!
//! A single view pair is NOT enough: all 8-subsets of one pair encode the
//! same line (the target's epipolar line), so the per-pair system is rank 1.
//! [`self_estimate_two_view`] exposes that operation faithfully — and fails
//! with `RankDeficientSystem` on consistent data — while
//! [`self_estimate_two_view_pooled`] pools rows across partner views in one
//! shared frame of the target view, which is solvable and is what
//! [`self_estimate`] uses.

use std::collections::HashSet;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::constraints::{epipolar_coeffs, multiview_coeffs, CoeffTriple};
use crate::error::{Error, Result};
use crate::grid::{ObservationGrid, OutlierIndex, OutlierSet, Pixel};
use crate::normalize::NormTransform;
use crate::refine::median_of;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// C(n, k) saturated at `limit` (avoids overflow for large n).
fn binomial_capped(n: usize, k: usize, limit: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > limit as u128 {
            return limit.saturating_add(1);
        }
    }
    acc as usize
}

/// All k-subsets of 0..n in lexicographic order.
fn enumerate_combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut c: Vec<usize> = (0..k).collect();
    loop {
        out.push(c.clone());
        // Advance to the next combination.
        let mut i = k;
        loop {
            if i == 0 {
                return out;
            }
            i -= 1;
            if c[i] != i + n - k {
                break;
            }
            if i == 0 {
                return out;
            }
        }
        c[i] += 1;
        for j in (i + 1)..k {
            c[j] = c[j - 1] + 1;
        }
    }
}

/// Deterministic bounded source of index subsets.
///
/// If the total count of k-subsets fits within `cap`, they are enumerated
/// exhaustively in lexicographic order; otherwise `cap` distinct subsets are
/// drawn from a ChaCha stream keyed by (seed, context tags). Identical seeds
/// and tags give identical sequences on every platform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsetSampler {
    pub seed: u64,
    pub cap: usize,
}

impl Default for SubsetSampler {
    fn default() -> Self {
        SubsetSampler { seed: 0, cap: 100 }
    }
}

impl SubsetSampler {
    pub fn new(seed: u64, cap: usize) -> Self {
        SubsetSampler { seed, cap }
    }

    fn rng(&self, tags: &[u64]) -> ChaCha8Rng {
        let mut state = splitmix64(self.seed);
        for &t in tags {
            state = splitmix64(state ^ splitmix64(t));
        }
        ChaCha8Rng::seed_from_u64(state)
    }

    /// Sorted k-subsets of 0..n: all of them if there are at most `cap`,
    /// otherwise `cap` distinct random ones.
    pub fn subsets(&self, n: usize, k: usize, tags: &[u64]) -> Vec<Vec<usize>> {
        if binomial_capped(n, k, self.cap) <= self.cap {
            return enumerate_combinations(n, k);
        }
        let mut rng = self.rng(tags);
        let mut seen: HashSet<Vec<usize>> = HashSet::new();
        let mut out = Vec::with_capacity(self.cap);
        let mut attempts = 0;
        while out.len() < self.cap && attempts < 50 * self.cap {
            attempts += 1;
            let mut s: Vec<usize> = rand::seq::index::sample(&mut rng, n, k).into_vec();
            s.sort_unstable();
            if seen.insert(s.clone()) {
                out.push(s);
            }
        }
        out
    }

    /// Pairs (k1-subset of 0..n1, k2-subset of 0..n2): the full Cartesian
    /// product if it fits within `cap`, otherwise `cap` distinct random pairs.
    pub fn subset_pairs(
        &self,
        n1: usize,
        k1: usize,
        n2: usize,
        k2: usize,
        tags: &[u64],
    ) -> Vec<(Vec<usize>, Vec<usize>)> {
        let c1 = binomial_capped(n1, k1, self.cap);
        let c2 = binomial_capped(n2, k2, self.cap);
        if c1.saturating_mul(c2) <= self.cap {
            let firsts = enumerate_combinations(n1, k1);
            let seconds = enumerate_combinations(n2, k2);
            let mut out = Vec::with_capacity(firsts.len() * seconds.len());
            for f in &firsts {
                for s in &seconds {
                    out.push((f.clone(), s.clone()));
                }
            }
            return out;
        }
        let mut rng = self.rng(tags);
        let mut seen: HashSet<(Vec<usize>, Vec<usize>)> = HashSet::new();
        let mut out = Vec::with_capacity(self.cap);
        let mut attempts = 0;
        while out.len() < self.cap && attempts < 50 * self.cap {
            attempts += 1;
            let mut a: Vec<usize> = rand::seq::index::sample(&mut rng, n1, k1).into_vec();
            let mut b: Vec<usize> = rand::seq::index::sample(&mut rng, n2, k2).into_vec();
            a.sort_unstable();
            b.sort_unstable();
            let pair = (a, b);
            if seen.insert(pair.clone()) {
                out.push(pair);
            }
        }
        out
    }
}

/// Least-squares intersection of the lines `alpha*u + beta*v + gamma = 0`.
/// Rows must be pre-normalized so no single line dominates.
fn solve_lines(rows: &[(f64, f64, f64)]) -> Result<Pixel> {
    if rows.len() < 2 {
        return Err(Error::DegenerateMinors);
    }
    let a = DMatrix::from_fn(rows.len(), 2, |i, j| if j == 0 { rows[i].0 } else { rows[i].1 });
    let b = DVector::from_fn(rows.len(), |i, _| -rows[i].2);
    let svd = a.svd(true, true);
    let sv = &svd.singular_values;
    let ratio = if sv[0] > 0.0 { sv[1] / sv[0] } else { 0.0 };
    if ratio < 1e-10 {
        return Err(Error::RankDeficientSystem { ratio });
    }
    let sol = svd.solve(&b, 0.0).map_err(|e| Error::ShapeError(e.to_string()))?;
    Ok(Pixel::new(sol[0], sol[1]))
}

/// Pushes a unit-normalized line row, dropping near-zero directions.
fn push_row(rows: &mut Vec<(f64, f64, f64)>, c: CoeffTriple) {
    let n = c.alpha.hypot(c.beta);
    if n > 1e-300 {
        rows.push((c.alpha / n, c.beta / n, c.gamma / n));
    }
}

/// Gathers epipolar-line rows for point `m` in view `n` from one partner view
/// `n2`, in a caller-supplied normalized frame of view `n`.
///
/// `frame_points` maps point id -> normalized view-n coordinates; only ids
/// present there are used. Returns the number of degenerate subsets skipped.
fn epipolar_rows_from_partner(
    grid: &ObservationGrid,
    frame_points: &[Option<Pixel>],
    n2: usize,
    m: usize,
    sampler: &SubsetSampler,
    tags: &[u64],
    rows: &mut Vec<(f64, f64, f64)>,
) {
    let target_b = match grid.get(n2, m) {
        Some(p) => p,
        None => return,
    };
    let co: Vec<usize> = (0..grid.points())
        .filter(|&k| k != m && frame_points[k].is_some() && grid.observed(n2, k))
        .collect();
    if co.len() < 8 {
        return;
    }
    // Partner view normalized on its co-observed points plus the target.
    let mut b_pts: Vec<Pixel> = co.iter().map(|&k| grid.get(n2, k).unwrap()).collect();
    b_pts.push(target_b);
    let tb = NormTransform::fit(&b_pts);
    let b_norm: Vec<Pixel> = b_pts.iter().map(|&p| tb.forward(p)).collect();
    let target_b_norm = *b_norm.last().unwrap();

    for subset in sampler.subsets(co.len(), 8, tags) {
        let mut pairs = [(Pixel::new(0.0, 0.0), Pixel::new(0.0, 0.0)); 9];
        pairs[0] = (Pixel::new(0.0, 0.0), target_b_norm);
        for (slot, &idx) in subset.iter().enumerate() {
            let k = co[idx];
            pairs[slot + 1] = (frame_points[k].unwrap(), b_norm[idx]);
        }
        if let Ok(c) = epipolar_coeffs(&pairs) {
            push_row(rows, c);
        }
    }
}

/// Builds the view-n normalization frame over the given point ids.
fn target_frame(
    grid: &ObservationGrid,
    n: usize,
    ids: &[usize],
) -> (NormTransform, Vec<Option<Pixel>>) {
    let pts: Vec<Pixel> = ids.iter().map(|&k| grid.get(n, k).unwrap()).collect();
    let t = NormTransform::fit(&pts);
    let mut frame: Vec<Option<Pixel>> = vec![None; grid.points()];
    for (&k, &p) in ids.iter().zip(&pts) {
        frame[k] = Some(t.forward(p));
    }
    (t, frame)
}

/// Re-estimates point `m` in view `n` from the single partner view `n2`.
///
/// Faithful single-pair operation: every 8-subset of one partner view encodes
/// the same epipolar line, so on consistent data the stacked system is rank 1
/// and this returns `RankDeficientSystem`. Kept for diagnosis and for noisy
/// data where the caller accepts line-direction uncertainty; the pipeline
/// uses [`self_estimate_two_view_pooled`] instead.
pub fn self_estimate_two_view(
    grid: &ObservationGrid,
    n: usize,
    n2: usize,
    m: usize,
    sampler: &SubsetSampler,
) -> Result<Pixel> {
    if !grid.observed(n2, m) {
        return Err(Error::MissingObservation { view: n2, point: m });
    }
    let others: Vec<usize> = (0..grid.points())
        .filter(|&k| k != m && grid.observed(n, k) && grid.observed(n2, k))
        .collect();
    if others.len() < 9 {
        return Err(Error::InsufficientPoints {
            needed: 10,
            got: others.len() + 1,
        });
    }
    let (t_n, frame) = target_frame(grid, n, &others);
    let mut rows = Vec::new();
    epipolar_rows_from_partner(grid, &frame, n2, m, sampler, &[1, n as u64, n2 as u64, m as u64], &mut rows);
    let sol = solve_lines(&rows)?;
    Ok(t_n.backward(sol))
}

/// Re-estimates point `m` in view `n` by pooling epipolar-line rows from ALL
/// partner views in one shared frame of view `n`, then solving once.
pub fn self_estimate_two_view_pooled(
    grid: &ObservationGrid,
    n: usize,
    m: usize,
    sampler: &SubsetSampler,
) -> Result<Pixel> {
    let others: Vec<usize> = (0..grid.points())
        .filter(|&k| k != m && grid.observed(n, k))
        .collect();
    if others.len() < 8 {
        return Err(Error::InsufficientPoints {
            needed: 8,
            got: others.len(),
        });
    }
    let (t_n, frame) = target_frame(grid, n, &others);
    let mut rows = Vec::new();
    for n2 in 0..grid.views() {
        if n2 == n {
            continue;
        }
        epipolar_rows_from_partner(
            grid,
            &frame,
            n2,
            m,
            sampler,
            &[1, n as u64, n2 as u64, m as u64],
            &mut rows,
        );
    }
    let sol = solve_lines(&rows)?;
    Ok(t_n.backward(sol))
}

/// Re-estimates point `m` in view `n` from multi-view constraint lines over
/// sampled (5-point, 4-view) combinations, solved jointly in least squares.
pub fn self_estimate_multi_view(
    grid: &ObservationGrid,
    n: usize,
    m: usize,
    sampler: &SubsetSampler,
) -> Result<Pixel> {
    let others_p: Vec<usize> = (0..grid.points())
        .filter(|&k| k != m && grid.observed(n, k))
        .collect();
    let others_v: Vec<usize> = (0..grid.views())
        .filter(|&v| v != n && grid.observed(v, m))
        .collect();
    if others_p.len() < 5 {
        return Err(Error::InsufficientPoints {
            needed: 5,
            got: others_p.len(),
        });
    }
    if others_v.len() < 5 {
        return Err(Error::InsufficientViews {
            needed: 6,
            got: others_v.len() + 1,
        });
    }
    let mut rows = Vec::new();
    for (pi, vi) in sampler.subset_pairs(
        others_p.len(),
        5,
        others_v.len(),
        4,
        &[2, n as u64, m as u64],
    ) {
        let points = [
            others_p[pi[0]],
            others_p[pi[1]],
            others_p[pi[2]],
            others_p[pi[3]],
            others_p[pi[4]],
            m,
        ];
        let views = [
            others_v[vi[0]],
            others_v[vi[1]],
            others_v[vi[2]],
            others_v[vi[3]],
        ];
        let complete = views
            .iter()
            .all(|&v| points.iter().all(|&p| grid.observed(v, p)));
        if !complete {
            continue;
        }
        if let Ok(c) = multiview_coeffs(grid, &points, n, &views) {
            push_row(&mut rows, c);
        }
    }
    solve_lines(&rows)
}

/// Result of [`self_estimate`].
#[derive(Debug, Clone)]
pub struct Restoration {
    pub grid: ObservationGrid,
    /// Targets for which every estimation path failed; they remain missing.
    pub unrecoverable: OutlierSet,
}

/// Replaces the given outlier entries and every missing entry of the grid
/// with closed-form estimates where possible.
///
/// Outlier entries are masked out before estimation (their observed values
/// are exactly what is not trusted). For each target the pooled two-view
/// estimate and the multi-view estimate are collected and fused by
/// component-wise median; a target with no surviving candidate stays missing.
/// All non-target entries are returned bit-identical.
pub fn self_estimate(
    grid: &ObservationGrid,
    outliers: &OutlierSet,
    sampler: &SubsetSampler,
) -> Restoration {
    let mut working = grid.clone();
    for ix in outliers.iter() {
        working.set(ix.view, ix.point, None);
    }
    let mut targets: Vec<OutlierIndex> = outliers.iter().copied().collect();
    let seen: HashSet<OutlierIndex> = targets.iter().copied().collect();
    for view in 0..grid.views() {
        for point in 0..grid.points() {
            let ix = OutlierIndex { view, point };
            if !grid.observed(view, point) && !seen.contains(&ix) {
                targets.push(ix);
            }
        }
    }

    let estimates: Vec<Option<Pixel>> = targets
        .par_iter()
        .map(|ix| {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            if let Ok(p) = self_estimate_two_view_pooled(&working, ix.view, ix.point, sampler) {
                xs.push(p.x);
                ys.push(p.y);
            }
            if let Ok(p) = self_estimate_multi_view(&working, ix.view, ix.point, sampler) {
                xs.push(p.x);
                ys.push(p.y);
            }
            if xs.is_empty() {
                None
            } else {
                Some(Pixel::new(median_of(xs), median_of(ys)))
            }
        })
        .collect();

    let mut unrecoverable = OutlierSet::new();
    for (ix, est) in targets.iter().zip(estimates) {
        match est {
            Some(p) => working.set(ix.view, ix.point, Some(p)),
            None => {
                unrecoverable.insert(*ix);
            }
        }
    }
    Restoration {
        grid: working,
        unrecoverable,
    }
}
