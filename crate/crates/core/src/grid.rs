//! Observation grid: the M-point x N-view table of optional image points.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An image point in pixels.
pub type Pixel = Vector2<f64>;

/// The M x N table of observations. Entry `(view n, point m)` holds the pixel
/// coordinates of point `m` in view `n`, or `None` when the point is missing
/// in that view.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationGrid {
    points: usize,
    views: usize,
    data: Vec<Option<Pixel>>,
}

impl ObservationGrid {
    /// Creates a grid with every entry missing.
    pub fn new(points: usize, views: usize) -> Self {
        Self {
            points,
            views,
            data: vec![None; points * views],
        }
    }

    /// Number of world points (M).
    pub fn points(&self) -> usize {
        self.points
    }

    /// Number of views (N).
    pub fn views(&self) -> usize {
        self.views
    }

    #[inline]
    fn idx(&self, view: usize, point: usize) -> usize {
        debug_assert!(view < self.views && point < self.points);
        view * self.points + point
    }

    /// The entry for `point` in `view`.
    #[inline]
    pub fn get(&self, view: usize, point: usize) -> Option<Pixel> {
        self.data[self.idx(view, point)]
    }

    /// Sets the entry for `point` in `view`.
    #[inline]
    pub fn set(&mut self, view: usize, point: usize, value: Option<Pixel>) {
        let i = self.idx(view, point);
        self.data[i] = value;
    }

    /// Whether the entry is observed.
    #[inline]
    pub fn observed(&self, view: usize, point: usize) -> bool {
        self.data[self.idx(view, point)].is_some()
    }

    /// Indices of points observed in both views.
    pub fn co_observed(&self, view_a: usize, view_b: usize) -> Vec<usize> {
        (0..self.points)
            .filter(|&m| self.observed(view_a, m) && self.observed(view_b, m))
            .collect()
    }

    /// Indices of points observed in `view`.
    pub fn observed_in_view(&self, view: usize) -> Vec<usize> {
        (0..self.points)
            .filter(|&m| self.observed(view, m))
            .collect()
    }

    /// Total observed entries.
    pub fn observed_count(&self) -> usize {
        self.data.iter().filter(|e| e.is_some()).count()
    }

    /// All observed coordinates of one view, in point order, with their indices.
    pub fn view_points(&self, view: usize) -> Vec<(usize, Pixel)> {
        (0..self.points)
            .filter_map(|m| self.get(view, m).map(|p| (m, p)))
            .collect()
    }

    /// Checks both grids have identical dimensions.
    pub fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.points != other.points || self.views != other.views {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.points, self.views, other.points, other.views
            )));
        }
        Ok(())
    }
}

/// Index of a single image point: one point in one view.
///
/// Internally 0-based; serialized forms are 1-based to match the file format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OutlierIndex {
    pub view: usize,
    pub point: usize,
}

/// Duplicate-free, insertion-ordered set of outlier indices.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutlierSet {
    items: Vec<OutlierIndex>,
}

impl OutlierSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts if not present; returns whether it was newly added.
    pub fn insert(&mut self, idx: OutlierIndex) -> bool {
        if self.items.contains(&idx) {
            false
        } else {
            self.items.push(idx);
            true
        }
    }

    pub fn contains(&self, idx: &OutlierIndex) -> bool {
        self.items.contains(idx)
    }

    pub fn iter(&self) -> impl Iterator<Item = &OutlierIndex> {
        self.items.iter()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Union preserving self's order, then other's new items.
    pub fn extend_from(&mut self, other: &OutlierSet) {
        for idx in other.iter() {
            self.insert(*idx);
        }
    }
}

impl FromIterator<OutlierIndex> for OutlierSet {
    fn from_iter<T: IntoIterator<Item = OutlierIndex>>(iter: T) -> Self {
        let mut set = Self::new();
        for idx in iter {
            set.insert(idx);
        }
        set
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_set_get_roundtrip() {
        let mut g = ObservationGrid::new(3, 2);
        assert_eq!(g.observed_count(), 0);
        g.set(1, 2, Some(Pixel::new(4.0, 5.0)));
        assert_eq!(g.get(1, 2), Some(Pixel::new(4.0, 5.0)));
        assert!(g.observed(1, 2));
        assert!(!g.observed(0, 2));
        assert_eq!(g.observed_count(), 1);
    }

    #[test]
    fn co_observed_respects_masks() {
        let mut g = ObservationGrid::new(4, 2);
        for m in 0..4 {
            g.set(0, m, Some(Pixel::new(m as f64, 0.0)));
        }
        g.set(1, 1, Some(Pixel::new(1.0, 1.0)));
        g.set(1, 3, Some(Pixel::new(3.0, 1.0)));
        assert_eq!(g.co_observed(0, 1), vec![1, 3]);
    }

    #[test]
    fn outlier_set_dedupes_and_keeps_order() {
        let mut s = OutlierSet::new();
        let a = OutlierIndex { view: 1, point: 2 };
        let b = OutlierIndex { view: 0, point: 0 };
        assert!(s.insert(a));
        assert!(s.insert(b));
        assert!(!s.insert(a));
        let got: Vec<_> = s.iter().copied().collect();
        assert_eq!(got, vec![a, b]);
    }
}
