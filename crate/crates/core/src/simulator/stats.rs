//! Output analysis for steady-state runs: batch means, queue-growth trend and
//! a two-sample Kolmogorov-Smirnov distance.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

/// Mean of `values` with a batch-means 95% confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BatchEstimate {
    pub mean: f64,
    pub half_width: f64,
    pub std_err: f64,
    pub batches: usize,
}

/// Two-sided 97.5% Student-t quantile.
pub fn t_quantile(df: usize) -> f64 {
    StudentsT::new(0.0, 1.0, df as f64)
        .expect("df >= 1")
        .inverse_cdf(0.975)
}

/// Splits `values` into `batches` contiguous batches and treats the batch
/// means as approximately i.i.d. normal.
pub fn batch_means(values: &[f64], batches: usize) -> BatchEstimate {
    let m = values.len();
    let mean = if m == 0 {
        f64::NAN
    } else {
        values.iter().sum::<f64>() / m as f64
    };
    let b = batches.min(m);
    if b < 2 {
        return BatchEstimate {
            mean,
            half_width: f64::INFINITY,
            std_err: f64::INFINITY,
            batches: b,
        };
    }
    let means: Vec<f64> = (0..b)
        .map(|i| {
            let chunk = &values[i * m / b..(i + 1) * m / b];
            chunk.iter().sum::<f64>() / chunk.len() as f64
        })
        .collect();
    let grand = means.iter().sum::<f64>() / b as f64;
    let var = means.iter().map(|x| (x - grand).powi(2)).sum::<f64>() / (b - 1) as f64;
    let std_err = (var / b as f64).sqrt();
    BatchEstimate {
        mean,
        half_width: t_quantile(b - 1) * std_err,
        std_err,
        batches: b,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StabilityVerdict {
    Stable,
    Unstable,
}

/// Linear trend of the number of jobs in system over a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityReport {
    pub verdict: StabilityVerdict,
    /// Fitted growth in jobs per second.
    pub slope: f64,
    pub slope_std_err: f64,
    /// Average jobs in system over the fitted window.
    pub mean_level: f64,
    /// Fitted change in jobs over the fitted window.
    pub rise: f64,
}

const TREND_SKIP: f64 = 0.2;
const TREND_BATCHES: usize = 20;
const TREND_SIGMAS: f64 = 3.0;
const TREND_MIN_RISE: f64 = 0.5;

/// Fits a least-squares line to batch means of `(time, jobs_in_system)`
/// samples after skipping the first fifth of the run. The run is `Unstable`
/// when the slope is positive beyond three standard errors and the fitted rise
/// exceeds half the mean level.
pub fn queue_trend(samples: &[(f64, usize)]) -> StabilityReport {
    let start = (samples.len() as f64 * TREND_SKIP) as usize;
    let window = &samples[start..];
    let stable = |mean_level: f64| StabilityReport {
        verdict: StabilityVerdict::Stable,
        slope: 0.0,
        slope_std_err: 0.0,
        mean_level,
        rise: 0.0,
    };
    if window.len() < 2 * TREND_BATCHES {
        let level = if window.is_empty() {
            0.0
        } else {
            window.iter().map(|s| s.1 as f64).sum::<f64>() / window.len() as f64
        };
        return stable(level);
    }
    let m = window.len();
    let points: Vec<(f64, f64)> = (0..TREND_BATCHES)
        .map(|i| {
            let chunk = &window[i * m / TREND_BATCHES..(i + 1) * m / TREND_BATCHES];
            let k = chunk.len() as f64;
            (
                chunk.iter().map(|s| s.0).sum::<f64>() / k,
                chunk.iter().map(|s| s.1 as f64).sum::<f64>() / k,
            )
        })
        .collect();
    let k = points.len() as f64;
    let tx = points.iter().map(|p| p.0).sum::<f64>() / k;
    let qy = points.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = points.iter().map(|p| (p.0 - tx).powi(2)).sum();
    if sxx <= 0.0 {
        return stable(qy);
    }
    let slope = points.iter().map(|p| (p.0 - tx) * (p.1 - qy)).sum::<f64>() / sxx;
    let resid: f64 = points
        .iter()
        .map(|p| (p.1 - qy - slope * (p.0 - tx)).powi(2))
        .sum();
    let slope_std_err = (resid / (k - 2.0) / sxx).sqrt();
    let span = window[m - 1].0 - window[0].0;
    let rise = slope * span;
    let unstable = slope > TREND_SIGMAS * slope_std_err && rise > TREND_MIN_RISE * qy.max(1.0);
    StabilityReport {
        verdict: if unstable {
            StabilityVerdict::Unstable
        } else {
            StabilityVerdict::Stable
        },
        slope,
        slope_std_err,
        mean_level: qy,
        rise,
    }
}

/// Two-sample Kolmogorov-Smirnov distance `sup_x |F_a(x) - F_b(x)|`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut worst: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        worst = worst.max((i as f64 / na - j as f64 / nb).abs());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn t_quantile_known_values() {
        assert!((t_quantile(19) - 2.093).abs() < 1e-3);
        assert!((t_quantile(1000) - 1.962).abs() < 1e-3);
    }

    #[test]
    fn batch_means_constant_series() {
        let est = batch_means(&[3.0; 100], 20);
        assert_eq!(est.mean, 3.0);
        assert_eq!(est.half_width, 0.0);
        assert_eq!(est.batches, 20);
    }

    #[test]
    fn batch_means_short_series() {
        let est = batch_means(&[1.0], 20);
        assert_eq!(est.mean, 1.0);
        assert!(est.half_width.is_infinite());
    }

    #[test]
    fn batch_means_alternating_batches() {
        // 20 batches of 5, means alternate 0 and 2
        let v: Vec<f64> = (0..100).map(|i| if (i / 5) % 2 == 0 { 0.0 } else { 2.0 }).collect();
        let est = batch_means(&v, 20);
        assert_eq!(est.mean, 1.0);
        let sd = (20.0f64 / 19.0).sqrt();
        assert!((est.std_err - sd / 20f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn trend_flags_linear_growth() {
        let samples: Vec<(f64, usize)> = (0..10_000).map(|i| (i as f64, i / 10)).collect();
        assert_eq!(queue_trend(&samples).verdict, StabilityVerdict::Unstable);
    }

    #[test]
    fn trend_accepts_bounded_noise() {
        let samples: Vec<(f64, usize)> = (0..10_000)
            .map(|i| (i as f64, (i * 7919 % 13) as usize))
            .collect();
        assert_eq!(queue_trend(&samples).verdict, StabilityVerdict::Stable);
        assert_eq!(queue_trend(&[]).verdict, StabilityVerdict::Stable);
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_distance(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
        assert_eq!(ks_distance(&[1.0, 2.0], &[3.0, 4.0]), 1.0);
        assert!((ks_distance(&[1.0, 2.0, 3.0, 4.0], &[2.5, 3.5]) - 0.5).abs() < 1e-12);
    }
}
