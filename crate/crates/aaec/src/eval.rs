//! Run evaluation: pose-stability and tracking-quality statistics computed
//! from a finished run, and the summary row the benchmark reports.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::sim::RunResult;

/// Relative tolerance for the exposure settling test.
pub const CONVERGENCE_REL_TOL: f64 = 0.02;
/// Frames a settled exposure must stay within tolerance.
pub const CONVERGENCE_WINDOW: usize = 6;
/// Frames of every run ignored as controller warm-up (capped by the
/// convergence point when that comes earlier).
pub const MAX_WARMUP_FRAMES: usize = 50;

/// Determinant of the sample covariance (n-1 normalization) of a 3D point
/// cloud. Needs at least 4 points for a meaningful 3x3 covariance.
pub fn covariance_determinant(points: &[Vector3<f64>]) -> Result<f64> {
    let n = points.len();
    if n < 4 {
        return Err(Error::NotEnoughSamples { need: 4, got: n });
    }
    let mean: Vector3<f64> = points.iter().sum::<Vector3<f64>>() / n as f64;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= (n - 1) as f64;
    Ok(cov.determinant())
}

/// Fraction of frames with a successful detection, ignoring the first
/// `warmup` frames. An empty post-warmup window counts as zero.
pub fn detection_rate(found: &[bool], warmup: usize) -> f64 {
    if warmup >= found.len() {
        return 0.0;
    }
    let rest = &found[warmup..];
    rest.iter().filter(|&&f| f).count() as f64 / rest.len() as f64
}

/// Mean distance from estimated positions to the nominal ground-truth path:
/// the line through (start, end), or the point itself when the path is
/// degenerate. NaN when `est` is empty.
pub fn trajectory_distance(est: &[Vector3<f64>], start: Vector3<f64>, end: Vector3<f64>) -> f64 {
    if est.is_empty() {
        return f64::NAN;
    }
    let axis = end - start;
    let len = axis.norm();
    let total: f64 = if len < 1e-9 {
        est.iter().map(|p| (p - start).norm()).sum()
    } else {
        let dir = axis / len;
        est.iter()
            .map(|p| {
                let rel = p - start;
                (rel - dir * rel.dot(&dir)).norm()
            })
            .sum()
    };
    total / est.len() as f64
}

/// Largest distance between any two estimated positions. Zero for fewer
/// than two points.
pub fn max_pairwise_distance(points: &[Vector3<f64>]) -> f64 {
    let mut best = 0.0f64;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            best = best.max((points[i] - points[j]).norm());
        }
    }
    best
}

/// First frame index from which the exposure stays within
/// [`CONVERGENCE_REL_TOL`] of its final value for [`CONVERGENCE_WINDOW`]
/// consecutive frames. The final value is the median of the last 10 frames.
/// None when the series never settles (or is shorter than 10 frames).
pub fn convergence_frame(dt_ms: &[f64]) -> Option<usize> {
    let n = dt_ms.len();
    if n < 10 {
        return None;
    }
    let mut tail: Vec<f64> = dt_ms[n - 10..].to_vec();
    tail.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let dt_end = (tail[4] + tail[5]) / 2.0;
    if dt_end <= 0.0 {
        return None;
    }
    let within = |v: f64| (v - dt_end).abs() / dt_end < CONVERGENCE_REL_TOL;
    'outer: for k in 0..=n - CONVERGENCE_WINDOW {
        for j in k..k + CONVERGENCE_WINDOW {
            if !within(dt_ms[j]) {
                continue 'outer;
            }
        }
        return Some(k);
    }
    None
}

/// Aggregate statistics of one run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub scenario: String,
    pub motion: String,
    pub controller: String,
    pub seed: u64,
    /// Determinant of the detected-position covariance; None with fewer
    /// than 4 detections after warm-up.
    pub cov_det: Option<f64>,
    pub detection_rate: f64,
    /// Mean distance to the nominal path, meters; None without detections.
    pub traj_dist_m: Option<f64>,
    pub max_pairwise_dist_m: f64,
    pub conv_frames: Option<usize>,
    pub conv_seconds: Option<f64>,
    /// Final exposure, ms (median of the last 10 frames).
    pub dt_final_ms: f64,
}

/// Reduce a run to its summary row. Pose statistics skip the warm-up
/// window: the first `min(convergence_frame, 50)` frames.
pub fn summarize(result: &RunResult) -> RunSummary {
    let dts: Vec<f64> = result.records.iter().map(|r| r.dt_ms).collect();
    let conv = convergence_frame(&dts);
    let warmup = conv.unwrap_or(MAX_WARMUP_FRAMES).min(MAX_WARMUP_FRAMES);
    let found: Vec<bool> = result.records.iter().map(|r| r.found).collect();
    let est: Vec<Vector3<f64>> = result
        .records
        .iter()
        .skip(warmup)
        .filter_map(|r| r.det_t)
        .collect();
    let n = dts.len();
    let dt_final_ms = if n >= 10 {
        let mut tail: Vec<f64> = dts[n - 10..].to_vec();
        tail.sort_by(|a, b| a.partial_cmp(b).unwrap());
        (tail[4] + tail[5]) / 2.0
    } else {
        *dts.last().unwrap_or(&f64::NAN)
    };
    RunSummary {
        scenario: result.scenario.name().to_string(),
        motion: result.motion.name().to_string(),
        controller: result.controller.name().to_string(),
        seed: result.seed,
        cov_det: covariance_determinant(&est).ok(),
        detection_rate: detection_rate(&found, warmup),
        traj_dist_m: if est.is_empty() {
            None
        } else {
            Some(trajectory_distance(&est, result.gt_path.0, result.gt_path.1))
        },
        max_pairwise_dist_m: max_pairwise_distance(&est),
        conv_frames: conv,
        conv_seconds: conv.map(|k| k as f64 / result.fps),
        dt_final_ms,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::SymmetricEigen;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> Vec<Vector3<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    2.0 * rng.gen_range(-1.0..1.0),
                    0.5 * rng.gen_range(-1.0..1.0) + 3.0,
                )
            })
            .collect()
    }

    /// Oracle: the determinant equals the product of covariance eigenvalues.
    fn eigen_det(points: &[Vector3<f64>]) -> f64 {
        let n = points.len() as f64;
        let mean: Vector3<f64> = points.iter().sum::<Vector3<f64>>() / n;
        let mut cov = Matrix3::zeros();
        for p in points {
            let d = p - mean;
            cov += d * d.transpose();
        }
        cov /= n - 1.0;
        SymmetricEigen::new(cov).eigenvalues.iter().product()
    }

    #[test]
    fn covariance_det_matches_eigenvalue_product() {
        for seed in 0..5 {
            let pts = random_cloud(60, seed);
            let got = covariance_determinant(&pts).unwrap();
            let want = eigen_det(&pts);
            assert_relative_eq!(got, want, max_relative = 1e-10);
            assert!(got > 0.0);
        }
    }

    #[test]
    fn covariance_det_zero_for_coplanar_points() {
        // All z equal: one eigenvalue is exactly zero.
        let pts: Vec<_> = (0..20)
            .map(|i| Vector3::new(i as f64, (i * i) as f64 * 0.01, 5.0))
            .collect();
        let det = covariance_determinant(&pts).unwrap();
        assert!(det.abs() < 1e-12, "det {det}");
    }

    #[test]
    fn covariance_det_needs_four_points() {
        let pts = random_cloud(3, 1);
        assert!(matches!(
            covariance_determinant(&pts),
            Err(Error::NotEnoughSamples { need: 4, got: 3 })
        ));
    }

    #[test]
    fn covariance_det_shrinks_with_spread() {
        let tight: Vec<_> = random_cloud(50, 2).iter().map(|p| p * 0.1).collect();
        let wide = random_cloud(50, 2);
        assert!(covariance_determinant(&tight).unwrap() < covariance_determinant(&wide).unwrap());
    }

    #[test]
    fn detection_rate_ignores_warmup() {
        let found = [false, false, true, true, true, false, true, true];
        assert_relative_eq!(detection_rate(&found, 2), 5.0 / 6.0);
        assert_relative_eq!(detection_rate(&found, 0), 5.0 / 8.0);
        assert_eq!(detection_rate(&found, 8), 0.0);
    }

    #[test]
    fn trajectory_distance_to_line() {
        let start = Vector3::new(0.0, 0.0, 1.0);
        let end = Vector3::new(1.0, 0.0, 1.0);
        let est = vec![
            Vector3::new(0.2, 0.0, 1.0),
            Vector3::new(0.5, 0.3, 1.0),
            Vector3::new(0.9, 0.0, 1.4),
        ];
        // Distances: 0, 0.3, 0.4.
        assert_relative_eq!(trajectory_distance(&est, start, end), (0.3 + 0.4) / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn trajectory_distance_to_point_when_static() {
        let p = Vector3::new(0.0, 0.0, 1.0);
        let est = vec![Vector3::new(0.0, 0.0, 1.1), Vector3::new(0.0, 0.3, 1.0)];
        assert_relative_eq!(trajectory_distance(&est, p, p), 0.2, epsilon = 1e-12);
        assert!(trajectory_distance(&[], p, p).is_nan());
    }

    #[test]
    fn max_pairwise_distance_known_case() {
        let pts = vec![
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 2.0, 0.0),
        ];
        assert_relative_eq!(max_pairwise_distance(&pts), 5.0f64.sqrt());
        assert_eq!(max_pairwise_distance(&pts[..1]), 0.0);
    }

    #[test]
    fn convergence_on_geometric_approach() {
        // dt_j = 2 - 2^-j: settles within 2% of 2.0 from j = 5 on.
        let dts: Vec<f64> = (0..20).map(|j| 2.0 - 2.0f64.powi(-j)).collect();
        assert_eq!(convergence_frame(&dts), Some(5));
    }

    #[test]
    fn convergence_immediate_for_constant_series() {
        let dts = vec![3.0; 15];
        assert_eq!(convergence_frame(&dts), Some(0));
    }

    #[test]
    fn convergence_none_for_oscillation() {
        let dts: Vec<f64> = (0..30).map(|j| if j % 2 == 0 { 1.0 } else { 2.0 }).collect();
        assert_eq!(convergence_frame(&dts), None);
        assert_eq!(convergence_frame(&[1.0, 2.0, 3.0]), None);
    }

    #[test]
    fn convergence_requires_sustained_window() {
        // Touches the band at frame 4 but leaves again; settles at 10.
        let mut dts = vec![5.0; 30];
        for (j, v) in dts.iter_mut().enumerate() {
            *v = match j {
                0..=3 => 10.0,
                4 => 5.02,
                5..=9 => 8.0,
                _ => 5.0,
            };
        }
        assert_eq!(convergence_frame(&dts), Some(10));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn covariance_det_invariant_under_translation(seed in 0u64..200, shift in -5.0f64..5.0) {
            let pts = random_cloud(30, seed);
            let moved: Vec<_> = pts.iter().map(|p| p + Vector3::new(shift, -shift, 2.0 * shift)).collect();
            let a = covariance_determinant(&pts).unwrap();
            let b = covariance_determinant(&moved).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1e-30));
        }

        #[test]
        fn covariance_det_scales_sixth_power(seed in 0u64..200) {
            // Scaling all points by c scales each covariance entry by c^2,
            // hence the 3x3 determinant by c^6.
            let pts = random_cloud(30, seed);
            let scaled: Vec<_> = pts.iter().map(|p| p * 2.0).collect();
            let a = covariance_determinant(&pts).unwrap();
            let b = covariance_determinant(&scaled).unwrap();
            prop_assert!((b - 64.0 * a).abs() <= 1e-8 * a.abs().max(1e-30));
        }
    }
}
