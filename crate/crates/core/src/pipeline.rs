//! Staged refinement pipeline and error metrics.
//!
//! Each stage runs outlier recognition at a progressively tighter threshold,
//! re-estimates what was flagged (plus anything already missing), then
//! re-refines the whole grid. Error metrics compare an estimated grid against
//! ground truth at three granularities: per point, per view, and overall.

use crate::error::{Error, Result};
use crate::grid::{ObservationGrid, OutlierSet};
use crate::outliers::recognize_outliers;
use crate::refine::{median_of, refine_all};
use crate::selfest::{self_estimate, SubsetSampler};

/// Configuration for [`main_refine`].
#[derive(Debug, Clone, PartialEq)]
pub struct RefineConfig {
    /// Number of stages; must equal `thresholds.len()`.
    pub kappa: usize,
    /// Per-stage recognition thresholds in pixels, strictly decreasing.
    pub thresholds: Vec<f64>,
    /// Iterations of the inner refinement loop.
    pub inner_iters: usize,
    /// Cap on sampled subsets per estimation context.
    pub subset_cap: usize,
    /// Seed for all randomized subset sampling.
    pub seed: u64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            kappa: 3,
            thresholds: vec![60.0, 40.0, 20.0],
            inner_iters: 10,
            subset_cap: 100,
            seed: 0,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kappa != self.thresholds.len() {
            return Err(Error::ShapeError(format!(
                "kappa {} does not match {} thresholds",
                self.kappa,
                self.thresholds.len()
            )));
        }
        for w in self.thresholds.windows(2) {
            if w[1] >= w[0] {
                return Err(Error::ShapeError(format!(
                    "thresholds must be strictly decreasing, got {:?}",
                    self.thresholds
                )));
            }
        }
        if self.thresholds.iter().any(|&t| t <= 0.0) {
            return Err(Error::ShapeError(format!(
                "thresholds must be positive, got {:?}",
                self.thresholds
            )));
        }
        Ok(())
    }
}

/// What one pipeline stage did, including the grid it produced.
#[derive(Debug, Clone)]
pub struct StageDiagnostics {
    /// 1-based stage number.
    pub stage: usize,
    pub threshold: f64,
    /// Entries flagged by recognition at this stage.
    pub outliers: OutlierSet,
    /// True if recognition stopped early (sweep cap or pair exhaustion).
    pub recognition_truncated: bool,
    /// Targets no estimation path could recover; they remain missing.
    pub unrecoverable: OutlierSet,
    /// Grid state after this stage's refinement.
    pub grid: ObservationGrid,
}

/// Result of [`main_refine`].
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub grid: ObservationGrid,
    pub stages: Vec<StageDiagnostics>,
}

/// Runs the staged pipeline: recognize outliers, re-estimate them and any
/// missing entries, re-refine; once per threshold.
pub fn main_refine(grid: &ObservationGrid, config: &RefineConfig) -> Result<PipelineOutcome> {
    config.validate()?;
    let mut current = grid.clone();
    let mut stages = Vec::with_capacity(config.kappa);
    for (i, &theta) in config.thresholds.iter().enumerate() {
        let rec = recognize_outliers(&current, theta, config.inner_iters)?;
        let stage_seed = config.seed ^ ((i as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let sampler = SubsetSampler::new(stage_seed, config.subset_cap);
        let rest = self_estimate(&current, &rec.outliers, &sampler);
        current = refine_all(&rest.grid, config.inner_iters)?;
        stages.push(StageDiagnostics {
            stage: i + 1,
            threshold: theta,
            outliers: rec.outliers,
            recognition_truncated: rec.truncated,
            unrecoverable: rest.unrecoverable,
            grid: current.clone(),
        });
    }
    Ok(PipelineOutcome {
        grid: current,
        stages,
    })
}

/// Distance between estimate and truth for one grid entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointError {
    pub view: usize,
    pub point: usize,
    pub error: f64,
}

/// Error metrics for an estimated grid against ground truth, evaluated on
/// entries observed in both.
#[derive(Debug, Clone, Default)]
pub struct ErrorReport {
    /// One entry per evaluated (view, point), view-major order.
    pub point_errors: Vec<PointError>,
    /// Mean point-error per view; None for views with nothing evaluated.
    pub image_errors: Vec<Option<f64>>,
    /// Mean point-error over all evaluated entries (0 if none).
    pub correspondence_error: f64,
    /// Median point-error over all evaluated entries (0 if none).
    pub median_error: f64,
    /// Counts of point-errors per 10-px bin, starting at [0, 10).
    pub histogram: Vec<usize>,
    pub entries_evaluated: usize,
    /// Per-stage outlier sets, when produced by the pipeline.
    pub stage_outliers: Vec<OutlierSet>,
    /// Indices no estimation path could recover, when produced by the pipeline.
    pub unrecoverable: OutlierSet,
}

/// Computes the error metrics. Symmetric in its arguments for the point
/// errors themselves.
pub fn compute_errors(estimate: &ObservationGrid, truth: &ObservationGrid) -> Result<ErrorReport> {
    estimate.check_same_shape(truth)?;
    let mut point_errors = Vec::new();
    let mut image_errors = Vec::with_capacity(estimate.views());
    for view in 0..estimate.views() {
        let mut view_errs = Vec::new();
        for point in 0..estimate.points() {
            if let (Some(e), Some(t)) = (estimate.get(view, point), truth.get(view, point)) {
                let err = (e - t).norm();
                point_errors.push(PointError { view, point, error: err });
                view_errs.push(err);
            }
        }
        if view_errs.is_empty() {
            image_errors.push(None);
        } else {
            image_errors.push(Some(view_errs.iter().sum::<f64>() / view_errs.len() as f64));
        }
    }
    let entries_evaluated = point_errors.len();
    let (correspondence_error, median_error) = if entries_evaluated == 0 {
        (0.0, 0.0)
    } else {
        let sum: f64 = point_errors.iter().map(|p| p.error).sum();
        (
            sum / entries_evaluated as f64,
            median_of(point_errors.iter().map(|p| p.error).collect()),
        )
    };
    let mut histogram = Vec::new();
    for p in &point_errors {
        let bin = (p.error / 10.0).floor() as usize;
        if histogram.len() <= bin {
            histogram.resize(bin + 1, 0);
        }
        histogram[bin] += 1;
    }
    Ok(ErrorReport {
        point_errors,
        image_errors,
        correspondence_error,
        median_error,
        histogram,
        entries_evaluated,
        stage_outliers: Vec::new(),
        unrecoverable: OutlierSet::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Pixel;
    use crate::synth::{corrupt, generate_scene, CorruptionSpec};
    use approx::assert_relative_eq;

    fn grid_from_distances(distances: &[f64]) -> (ObservationGrid, ObservationGrid) {
        let mut truth = ObservationGrid::new(distances.len(), 1);
        let mut est = ObservationGrid::new(distances.len(), 1);
        for (m, &d) in distances.iter().enumerate() {
            truth.set(0, m, Some(Pixel::new(0.0, 0.0)));
            est.set(0, m, Some(Pixel::new(d, 0.0)));
        }
        (truth, est)
    }

    #[test]
    fn worked_image_error_means() {
        let (truth, est) =
            grid_from_distances(&[48.54, 43.43, 32.20, 33.36, 53.60, 129.02, 28.45]);
        let r = compute_errors(&est, &truth).unwrap();
        assert!((r.image_errors[0].unwrap() - 52.66).abs() < 0.01);
        assert!((r.correspondence_error - 52.66).abs() < 0.01);

        let (truth, est) = grid_from_distances(&[
            36.02, 38.35, 76.00, 150.83, 45.81, 31.00, 48.62, 43.65, 102.86,
        ]);
        let r = compute_errors(&est, &truth).unwrap();
        assert!((r.image_errors[0].unwrap() - 63.68).abs() < 0.01);
    }

    #[test]
    fn identical_grids_have_zero_errors() {
        let scene = generate_scene(10, 4, 80).unwrap();
        let r = compute_errors(&scene.grid, &scene.grid).unwrap();
        assert_eq!(r.entries_evaluated, 40);
        assert_relative_eq!(r.correspondence_error, 0.0);
        assert_relative_eq!(r.median_error, 0.0);
        assert_eq!(r.histogram, vec![40]);
        for v in &r.image_errors {
            assert_relative_eq!(v.unwrap(), 0.0);
        }
    }

    #[test]
    fn errors_restricted_to_common_entries_and_symmetric() {
        let scene = generate_scene(10, 3, 81).unwrap();
        let mut est = scene.grid.clone();
        est.set(0, 0, None);
        let mut truth = scene.grid.clone();
        truth.set(1, 5, None);
        est.set(2, 7, Some(est.get(2, 7).unwrap() + Pixel::new(3.0, 4.0)));
        let r = compute_errors(&est, &truth).unwrap();
        assert_eq!(r.entries_evaluated, 28);
        let expected_mean = 5.0 / 28.0;
        assert_relative_eq!(r.correspondence_error, expected_mean, epsilon = 1e-12);
        let r2 = compute_errors(&truth, &est).unwrap();
        assert_relative_eq!(r2.correspondence_error, r.correspondence_error);
        assert_eq!(r.histogram, vec![28]);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = ObservationGrid::new(3, 2);
        let b = ObservationGrid::new(3, 3);
        assert!(matches!(compute_errors(&a, &b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn histogram_binning() {
        let mut truth = ObservationGrid::new(4, 1);
        let mut est = ObservationGrid::new(4, 1);
        for (m, d) in [0.0, 9.99, 10.0, 35.0].iter().enumerate() {
            truth.set(0, m, Some(Pixel::new(0.0, 0.0)));
            est.set(0, m, Some(Pixel::new(*d, 0.0)));
        }
        let r = compute_errors(&est, &truth).unwrap();
        assert_eq!(r.histogram, vec![2, 1, 0, 1]);
    }

    #[test]
    fn config_validation() {
        assert!(RefineConfig::default().validate().is_ok());
        let bad_len = RefineConfig {
            kappa: 2,
            ..RefineConfig::default()
        };
        assert!(bad_len.validate().is_err());
        let not_decreasing = RefineConfig {
            thresholds: vec![60.0, 60.0, 20.0],
            ..RefineConfig::default()
        };
        assert!(not_decreasing.validate().is_err());
        let negative = RefineConfig {
            thresholds: vec![60.0, 40.0, -1.0],
            ..RefineConfig::default()
        };
        assert!(negative.validate().is_err());
        let empty = RefineConfig {
            kappa: 0,
            thresholds: vec![],
            ..RefineConfig::default()
        };
        assert!(empty.validate().is_ok());
    }

    #[test]
    fn zero_stages_is_identity() {
        let scene = generate_scene(12, 4, 82).unwrap();
        let config = RefineConfig {
            kappa: 0,
            thresholds: vec![],
            ..RefineConfig::default()
        };
        let out = main_refine(&scene.grid, &config).unwrap();
        assert!(out.stages.is_empty());
        for v in 0..4 {
            for m in 0..12 {
                assert_eq!(out.grid.get(v, m), scene.grid.get(v, m));
            }
        }
    }

    #[test]
    fn exact_grid_passes_through() {
        let scene = generate_scene(12, 6, 83).unwrap();
        let out = main_refine(&scene.grid, &RefineConfig::default()).unwrap();
        assert_eq!(out.stages.len(), 3);
        for s in &out.stages {
            assert!(s.outliers.is_empty(), "stage {} flagged {:?}", s.stage, s.outliers);
            assert!(s.unrecoverable.is_empty());
        }
        for v in 0..6 {
            for m in 0..12 {
                let d = (out.grid.get(v, m).unwrap() - scene.grid.get(v, m).unwrap()).norm();
                assert!(d < 1e-6, "drift {d:e} at view {v} point {m}");
            }
        }
    }

    #[test]
    fn pipeline_deterministic() {
        let scene = generate_scene(12, 6, 84).unwrap();
        let spec = CorruptionSpec {
            sigma: 10.0,
            outlier_rate: 0.04,
            seed: 33,
            ..CorruptionSpec::default()
        };
        let noisy = corrupt(&scene.grid, &spec).unwrap().grid;
        let config = RefineConfig {
            subset_cap: 40,
            seed: 9,
            ..RefineConfig::default()
        };
        let a = main_refine(&noisy, &config).unwrap();
        let b = main_refine(&noisy, &config).unwrap();
        for v in 0..6 {
            for m in 0..12 {
                assert_eq!(a.grid.get(v, m), b.grid.get(v, m), "entry ({v},{m})");
            }
        }
        assert_eq!(a.stages.len(), b.stages.len());
        for (sa, sb) in a.stages.iter().zip(&b.stages) {
            assert_eq!(sa.outliers.len(), sb.outliers.len());
        }
    }

    #[test]
    fn no_usable_pairs_propagates() {
        let scene = generate_scene(5, 3, 85).unwrap();
        assert!(matches!(
            main_refine(&scene.grid, &RefineConfig::default()),
            Err(Error::NoUsablePairs)
        ));
    }
}
