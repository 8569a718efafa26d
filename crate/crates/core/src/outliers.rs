//! Outlier recognition by disagreement between observation and refinement.
//!
//! An observed point that the rank-truncation refinement wants to move far is
//! inconsistent with the constraints the rest of the grid satisfies. Sweeps
//! flag every such point at once, drop them from the working grid, and rerun
//! the refinement until a sweep flags nothing.

use crate::error::{Error, Result};
use crate::grid::{ObservationGrid, OutlierIndex, OutlierSet};
use crate::refine::{refine_all, usable_pairs};

/// Maximum number of flag-and-rerun sweeps before recognition gives up.
pub const SWEEP_CAP: usize = 10;

/// Result of [`recognize_outliers`].
#[derive(Debug, Clone)]
pub struct Recognition {
    /// Every index flagged across all sweeps, in flagging order.
    pub outliers: OutlierSet,
    /// Input grid with flagged entries marked missing.
    pub working: ObservationGrid,
    /// True if recognition stopped early: either the sweep cap was hit with
    /// flags still appearing, or removals left no usable view pair.
    pub truncated: bool,
}

/// Flags observed entries whose refined position differs from the observation
/// by at least `theta` pixels, removing them and repeating until a sweep
/// flags nothing (or the sweep cap / pair exhaustion stops it).
pub fn recognize_outliers(
    grid: &ObservationGrid,
    theta: f64,
    inner_iters: usize,
) -> Result<Recognition> {
    if !(theta > 0.0) {
        return Err(Error::ShapeError(format!(
            "outlier threshold must be positive, got {theta}"
        )));
    }
    if usable_pairs(grid).is_empty() {
        return Err(Error::NoUsablePairs);
    }
    let mut working = grid.clone();
    let mut outliers = OutlierSet::new();
    let mut truncated = false;
    for sweep in 0.. {
        let refined = match refine_all(&working, inner_iters) {
            Ok(r) => r,
            Err(Error::NoUsablePairs) => {
                truncated = true;
                break;
            }
            Err(e) => return Err(e),
        };
        let mut flagged = Vec::new();
        for view in 0..working.views() {
            for point in 0..working.points() {
                if let (Some(obs), Some(fit)) = (working.get(view, point), refined.get(view, point))
                {
                    if (obs - fit).norm() >= theta {
                        flagged.push(OutlierIndex { view, point });
                    }
                }
            }
        }
        if flagged.is_empty() {
            break;
        }
        for ix in flagged {
            working.set(ix.view, ix.point, None);
            outliers.insert(ix);
        }
        if sweep + 1 >= SWEEP_CAP {
            truncated = true;
            break;
        }
    }
    Ok(Recognition {
        outliers,
        working,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{corrupt, generate_scene, CorruptionSpec};

    #[test]
    fn exact_grid_flags_nothing() {
        let scene = generate_scene(12, 6, 31).unwrap();
        let rec = recognize_outliers(&scene.grid, 60.0, 10).unwrap();
        assert!(rec.outliers.is_empty());
        assert!(!rec.truncated);
        for v in 0..6 {
            for m in 0..12 {
                assert_eq!(rec.working.get(v, m), scene.grid.get(v, m));
            }
        }
    }

    #[test]
    fn infinite_threshold_flags_nothing() {
        let scene = generate_scene(12, 4, 32).unwrap();
        let spec = CorruptionSpec {
            sigma: 25.0,
            seed: 1,
            ..CorruptionSpec::default()
        };
        let noisy = corrupt(&scene.grid, &spec).unwrap().grid;
        let rec = recognize_outliers(&noisy, f64::INFINITY, 10).unwrap();
        assert!(rec.outliers.is_empty());
        assert!(!rec.truncated);
    }

    #[test]
    fn nonpositive_threshold_rejected() {
        let scene = generate_scene(12, 4, 33).unwrap();
        assert!(recognize_outliers(&scene.grid, 0.0, 10).is_err());
        assert!(recognize_outliers(&scene.grid, -5.0, 10).is_err());
    }

    #[test]
    fn no_usable_pair_is_fatal_upfront() {
        let scene = generate_scene(5, 3, 34).unwrap();
        assert!(matches!(
            recognize_outliers(&scene.grid, 60.0, 10),
            Err(Error::NoUsablePairs)
        ));
    }

    #[test]
    fn single_gross_outlier_is_flagged_exactly() {
        // Noiseless grid, one 300-px displacement, theta = 60: recognition
        // must flag exactly the injected entry in at least 9 of 10 seeds.
        let mut exact_hits = 0;
        for seed in 0..10 {
            let scene = generate_scene(30, 12, 700 + seed).unwrap();
            let spec = CorruptionSpec {
                outlier_rate: 1.0 / 360.0,
                outlier_offset: (300.0, 300.0),
                seed: 800 + seed,
                ..CorruptionSpec::default()
            };
            let c = corrupt(&scene.grid, &spec).unwrap();
            assert_eq!(c.injected.len(), 1);
            let target = *c.injected.iter().next().unwrap();
            let rec = recognize_outliers(&c.grid, 60.0, 10).unwrap();
            if rec.outliers.len() == 1 && rec.outliers.contains(&target) {
                exact_hits += 1;
            }
            // Invariant: the working grid drops exactly the flagged entries.
            for v in 0..12 {
                for m in 0..30 {
                    let ix = OutlierIndex { view: v, point: m };
                    let expect = c.grid.observed(v, m) && !rec.outliers.contains(&ix);
                    assert_eq!(rec.working.observed(v, m), expect);
                }
            }
        }
        assert!(
            exact_hits >= 9,
            "exact single-outlier recognition in {exact_hits}/10 seeds"
        );
    }

    #[test]
    fn tiny_threshold_truncates() {
        let scene = generate_scene(12, 4, 35).unwrap();
        let spec = CorruptionSpec {
            sigma: 5.0,
            seed: 2,
            ..CorruptionSpec::default()
        };
        let noisy = corrupt(&scene.grid, &spec).unwrap().grid;
        let rec = recognize_outliers(&noisy, 0.001, 10).unwrap();
        assert!(rec.truncated, "pathological threshold must hit a stop");
        assert!(!rec.outliers.is_empty());
    }
}
