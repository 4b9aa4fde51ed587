//! Separable exponential space-time covariance model and online extraction of
//! its scaling parameters from collected observations.
//!
//! The model is kept in correlation form (value 1 at zero distance and zero
//! age difference); the process variance scales the estimator's analytic
//! error only. Scaling parameters are refit from the observation window with
//! sample Pearson correlations: the spatial decay from time-aligned
//! cross-sensor correlations bucketed by distance, the temporal decay from
//! per-sensor autocorrelations at small lags. When the window cannot support
//! a fit the caller keeps its prior model.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sensors::{Position, SensorId};

#[derive(Debug, Error, PartialEq)]
pub enum CovarianceError {
    #[error("{name} must be non-negative, got {value}")]
    NegativeInput { name: &'static str, value: f64 },
    #[error("window does not hold enough data to fit any scaling parameter")]
    InsufficientData,
    #[error("normalization statistics require strictly positive variance")]
    ZeroVariance,
}

/// Separable space-time covariance: `exp(-theta_space*d - theta_time*age)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceModel {
    /// Temporal decay rate, per second.
    pub theta_time: f64,
    /// Spatial decay rate, per meter.
    pub theta_space: f64,
    /// Variance of the observed phenomenon in normalized units squared.
    pub process_variance: f64,
}

impl CovarianceModel {
    pub fn new(theta_time: f64, theta_space: f64, process_variance: f64) -> Self {
        assert!(
            theta_time >= 0.0 && theta_space >= 0.0 && process_variance > 0.0,
            "scaling parameters must be non-negative and variance positive"
        );
        Self {
            theta_time,
            theta_space,
            process_variance,
        }
    }

    /// Correlation between two points `distance_m` apart whose observation
    /// ages differ by `age_diff_s`. Inputs are assumed non-negative.
    #[inline]
    pub fn correlation(&self, distance_m: f64, age_diff_s: f64) -> f64 {
        debug_assert!(distance_m >= 0.0 && age_diff_s >= 0.0);
        (-self.theta_space * distance_m - self.theta_time * age_diff_s).exp()
    }

    /// Checked correlation-form covariance; rejects negative inputs.
    pub fn covariance(&self, distance_m: f64, age_diff_s: f64) -> Result<f64, CovarianceError> {
        if distance_m < 0.0 {
            return Err(CovarianceError::NegativeInput {
                name: "distance_m",
                value: distance_m,
            });
        }
        if age_diff_s < 0.0 {
            return Err(CovarianceError::NegativeInput {
                name: "age_diff_s",
                value: age_diff_s,
            });
        }
        Ok(self.correlation(distance_m, age_diff_s))
    }
}

/// One received observation as the gateway stores it for parameter fitting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub sensor: SensorId,
    pub step: u64,
    pub value: f64,
}

/// Sliding window over received observations; entries older than the
/// configured capacity (in steps) are evicted as newer ones arrive.
#[derive(Debug, Clone)]
pub struct ObservationWindow {
    capacity_steps: u64,
    entries: VecDeque<Observation>,
    latest_step: u64,
}

impl ObservationWindow {
    pub fn new(capacity_steps: u64) -> Self {
        assert!(capacity_steps > 0, "window capacity must be positive");
        Self {
            capacity_steps,
            entries: VecDeque::new(),
            latest_step: 0,
        }
    }

    pub fn push(&mut self, obs: Observation) {
        self.latest_step = self.latest_step.max(obs.step);
        self.entries.push_back(obs);
        let cutoff = self.latest_step.saturating_sub(self.capacity_steps);
        while let Some(front) = self.entries.front() {
            if front.step < cutoff {
                self.entries.pop_front();
            } else {
                break;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries still inside the window, grouped per sensor and sorted by step.
    fn per_sensor_series(&self) -> BTreeMap<SensorId, Vec<(u64, f64)>> {
        let cutoff = self.latest_step.saturating_sub(self.capacity_steps);
        let mut series: BTreeMap<SensorId, Vec<(u64, f64)>> = BTreeMap::new();
        for obs in &self.entries {
            if obs.step >= cutoff {
                series.entry(obs.sensor).or_default().push((obs.step, obs.value));
            }
        }
        for points in series.values_mut() {
            points.sort_by_key(|&(step, _)| step);
            points.dedup_by_key(|&mut (step, _)| step);
        }
        series
    }
}

/// Tuning knobs for the scaling-parameter fit.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FitConfig {
    /// Minimum aligned sample pairs before a bucket or lag is trusted.
    pub min_bucket_samples: usize,
    /// Correlations at or below this are discarded before the log transform.
    pub correlation_floor: f64,
    /// Autocorrelation lags 1..=L (in steps) used for the temporal fit.
    pub max_lag_steps: u64,
    /// Number of equal-width distance buckets for the spatial fit.
    pub distance_buckets: usize,
    /// Cross-sensor samples count as time-aligned within this many steps.
    pub align_tolerance_steps: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            min_bucket_samples: 30,
            correlation_floor: 0.05,
            max_lag_steps: 60,
            distance_buckets: 8,
            align_tolerance_steps: 1,
        }
    }
}

/// Outcome of a fit attempt: the model to use next plus which parameters the
/// window actually supported.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitReport {
    pub model: CovarianceModel,
    pub theta_time_updated: bool,
    pub theta_space_updated: bool,
}

/// Refits the scaling parameters from the window, keeping each prior
/// parameter whenever the data cannot support its regression. Returns an
/// insufficient-data error when neither parameter can be updated.
pub fn extract_scaling_parameters(
    window: &ObservationWindow,
    positions: &BTreeMap<SensorId, Position>,
    step_seconds: f64,
    prior: &CovarianceModel,
    cfg: &FitConfig,
) -> Result<FitReport, CovarianceError> {
    let series = window.per_sensor_series();

    let theta_time = fit_theta_time(&series, step_seconds, cfg);
    let theta_space = fit_theta_space(&series, positions, cfg);

    if theta_time.is_none() && theta_space.is_none() {
        return Err(CovarianceError::InsufficientData);
    }
    Ok(FitReport {
        model: CovarianceModel {
            theta_time: theta_time.unwrap_or(prior.theta_time),
            theta_space: theta_space.unwrap_or(prior.theta_space),
            process_variance: prior.process_variance,
        },
        theta_time_updated: theta_time.is_some(),
        theta_space_updated: theta_space.is_some(),
    })
}

/// Temporal decay from per-sensor autocorrelations at lags 1..=L steps:
/// least squares of -ln(rho) against lag seconds, through the origin.
fn fit_theta_time(
    series: &BTreeMap<SensorId, Vec<(u64, f64)>>,
    step_seconds: f64,
    cfg: &FitConfig,
) -> Option<f64> {
    let mut lag_points: Vec<(f64, f64)> = Vec::new();
    for lag in 1..=cfg.max_lag_steps {
        let mut acc = PearsonAccumulator::default();
        for points in series.values() {
            collect_lagged_pairs(points, lag, &mut acc);
        }
        if acc.count >= cfg.min_bucket_samples {
            if let Some(rho) = acc.correlation() {
                if rho > cfg.correlation_floor {
                    lag_points.push((lag as f64 * step_seconds, -rho.ln()));
                }
            }
        }
    }
    regression_through_origin(&lag_points).map(|theta| theta.max(0.0))
}

/// Spatial decay from time-aligned cross-sensor correlations pooled into
/// distance buckets: least squares of -ln(rho) against distance, through the
/// origin.
fn fit_theta_space(
    series: &BTreeMap<SensorId, Vec<(u64, f64)>>,
    positions: &BTreeMap<SensorId, Position>,
    cfg: &FitConfig,
) -> Option<f64> {
    let ids: Vec<SensorId> = series.keys().copied().collect();
    if ids.len() < 2 {
        return None;
    }

    // Per-pair aligned samples keyed by pair distance.
    let mut pair_samples: Vec<(f64, Vec<(f64, f64)>)> = Vec::new();
    let mut max_distance: f64 = 0.0;
    for (i, &a) in ids.iter().enumerate() {
        for &b in &ids[i + 1..] {
            let (Some(pa), Some(pb)) = (positions.get(&a), positions.get(&b)) else {
                continue;
            };
            let aligned =
                collect_aligned_pairs(&series[&a], &series[&b], cfg.align_tolerance_steps);
            if aligned.is_empty() {
                continue;
            }
            let d = pa.distance_to(pb);
            max_distance = max_distance.max(d);
            pair_samples.push((d, aligned));
        }
    }
    if pair_samples.is_empty() || max_distance <= 0.0 {
        return None;
    }

    let bucket_width = max_distance / cfg.distance_buckets as f64;
    let mut buckets: Vec<(PearsonAccumulator, f64, usize)> =
        vec![(PearsonAccumulator::default(), 0.0, 0); cfg.distance_buckets];
    for (d, samples) in &pair_samples {
        let idx = ((d / bucket_width) as usize).min(cfg.distance_buckets - 1);
        let (acc, dist_sum, pairs) = &mut buckets[idx];
        for &(u, v) in samples {
            acc.add(u, v);
        }
        *dist_sum += d * samples.len() as f64;
        *pairs += samples.len();
    }

    let mut bucket_points: Vec<(f64, f64)> = Vec::new();
    for (acc, dist_sum, pairs) in &buckets {
        if *pairs >= cfg.min_bucket_samples {
            if let Some(rho) = acc.correlation() {
                if rho > cfg.correlation_floor {
                    bucket_points.push((dist_sum / *pairs as f64, -rho.ln()));
                }
            }
        }
    }
    regression_through_origin(&bucket_points).map(|theta| theta.max(0.0))
}

fn collect_lagged_pairs(points: &[(u64, f64)], lag: u64, acc: &mut PearsonAccumulator) {
    // Series are sorted by step with unique steps, so a forward scan with a
    // trailing cursor finds every pair at exactly this lag.
    let mut tail = 0;
    for head in 0..points.len() {
        let target = points[head].0.saturating_sub(lag);
        while tail < head && points[tail].0 < target {
            tail += 1;
        }
        if tail < head && points[tail].0 == target && points[head].0 >= lag {
            acc.add(points[tail].1, points[head].1);
        }
    }
}

/// Sample pairs (one value from each series) whose steps differ by at most
/// the tolerance; each observation is matched to its nearest counterpart.
fn collect_aligned_pairs(
    a: &[(u64, f64)],
    b: &[(u64, f64)],
    tolerance_steps: u64,
) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut j = 0;
    for &(step_a, value_a) in a {
        while j + 1 < b.len() && b[j + 1].0 <= step_a {
            j += 1;
        }
        let mut best: Option<(u64, f64)> = None;
        for candidate in [b.get(j), b.get(j + 1)].into_iter().flatten() {
            let gap = candidate.0.abs_diff(step_a);
            if gap <= tolerance_steps && best.map_or(true, |(g, _)| gap < g) {
                best = Some((gap, candidate.1));
            }
        }
        if let Some((_, value_b)) = best {
            out.push((value_a, value_b));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, Default)]
struct PearsonAccumulator {
    count: usize,
    sum_u: f64,
    sum_v: f64,
    sum_uu: f64,
    sum_vv: f64,
    sum_uv: f64,
}

impl PearsonAccumulator {
    fn add(&mut self, u: f64, v: f64) {
        self.count += 1;
        self.sum_u += u;
        self.sum_v += v;
        self.sum_uu += u * u;
        self.sum_vv += v * v;
        self.sum_uv += u * v;
    }

    /// Sample Pearson correlation; None when either marginal is degenerate.
    fn correlation(&self) -> Option<f64> {
        if self.count < 2 {
            return None;
        }
        let n = self.count as f64;
        let var_u = n * self.sum_uu - self.sum_u * self.sum_u;
        let var_v = n * self.sum_vv - self.sum_v * self.sum_v;
        if var_u <= 0.0 || var_v <= 0.0 {
            return None;
        }
        Some((n * self.sum_uv - self.sum_u * self.sum_v) / (var_u * var_v).sqrt())
    }
}

/// Least-squares slope of y against x with zero intercept.
fn regression_through_origin(points: &[(f64, f64)]) -> Option<f64> {
    if points.is_empty() {
        return None;
    }
    let sum_xy: f64 = points.iter().map(|(x, y)| x * y).sum();
    let sum_xx: f64 = points.iter().map(|(x, _)| x * x).sum();
    if sum_xx <= 0.0 {
        return None;
    }
    Some(sum_xy / sum_xx)
}

/// Fixed z-score transform computed from the training split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: f64,
    pub std: f64,
}

impl NormalizationStats {
    pub fn new(mean: f64, std: f64) -> Result<Self, CovarianceError> {
        if !(std > 0.0) {
            return Err(CovarianceError::ZeroVariance);
        }
        Ok(Self { mean, std })
    }

    /// Sample mean and standard deviation of the given values.
    pub fn from_values<I: IntoIterator<Item = f64>>(values: I) -> Result<Self, CovarianceError> {
        let mut count = 0usize;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for v in values {
            count += 1;
            sum += v;
            sum_sq += v * v;
        }
        if count < 2 {
            return Err(CovarianceError::ZeroVariance);
        }
        let n = count as f64;
        let mean = sum / n;
        let variance = (sum_sq - n * mean * mean) / (n - 1.0);
        if !(variance > 0.0) {
            return Err(CovarianceError::ZeroVariance);
        }
        Ok(Self {
            mean,
            std: variance.sqrt(),
        })
    }

    #[inline]
    pub fn normalize(&self, value: f64) -> f64 {
        (value - self.mean) / self.std
    }

    #[inline]
    pub fn denormalize(&self, normalized: f64) -> f64 {
        normalized * self.std + self.mean
    }
}

/// Z-scores a batch of raw observations with fixed training-split statistics.
pub fn normalize_observations(
    raw: &[(SensorId, u64, f64)],
    stats: &NormalizationStats,
) -> Vec<(SensorId, u64, f64)> {
    raw.iter()
        .map(|&(sensor, step, value)| (sensor, step, stats.normalize(value)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn model(theta_time: f64, theta_space: f64) -> CovarianceModel {
        CovarianceModel::new(theta_time, theta_space, 1.0)
    }

    #[test]
    fn covariance_is_one_at_zero_distance_and_age() {
        assert_eq!(model(0.123, 4.56).covariance(0.0, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn covariance_matches_hand_evaluation() {
        let c = model(0.001, 0.1).covariance(10.0, 0.0).unwrap();
        assert_relative_eq!(c, (-1.0f64).exp(), epsilon = 1e-12);
        assert_relative_eq!(c, 0.36788, max_relative = 1e-4);
    }

    #[test]
    fn covariance_is_separable_across_space_and_time() {
        let m = model(0.001, 0.1);
        let c = m.covariance(5.0, 500.0).unwrap();
        assert_relative_eq!(c, (-1.0f64).exp(), epsilon = 1e-12);
        let product = m.covariance(5.0, 0.0).unwrap() * m.covariance(0.0, 500.0).unwrap();
        assert_relative_eq!(c, product, epsilon = 1e-12);
    }

    #[test]
    fn covariance_rejects_negative_inputs() {
        let m = model(0.001, 0.1);
        assert!(m.covariance(-1.0, 0.0).is_err());
        assert!(m.covariance(0.0, -1.0).is_err());
    }

    proptest! {
        #[test]
        fn covariance_in_unit_interval_and_monotone(
            theta_time in 0.0..0.1f64,
            theta_space in 0.0..1.0f64,
            d in 0.0..200.0f64,
            age in 0.0..5000.0f64,
        ) {
            let m = model(theta_time, theta_space);
            let c = m.covariance(d, age).unwrap();
            prop_assert!(c > 0.0 && c <= 1.0);
            // Non-increasing in each argument separately.
            prop_assert!(m.covariance(d + 1.0, age).unwrap() <= c + 1e-15);
            prop_assert!(m.covariance(d, age + 1.0).unwrap() <= c + 1e-15);
            // Separability is exact.
            let product = m.covariance(d, 0.0).unwrap() * m.covariance(0.0, age).unwrap();
            prop_assert!((c - product).abs() <= 1e-12 * c.max(1e-300));
        }
    }

    #[test]
    fn window_evicts_entries_older_than_capacity() {
        let mut w = ObservationWindow::new(100);
        for step in 0..300 {
            w.push(Observation {
                sensor: SensorId(0),
                step,
                value: step as f64,
            });
        }
        let series = w.per_sensor_series();
        let steps: Vec<u64> = series[&SensorId(0)].iter().map(|&(s, _)| s).collect();
        assert_eq!(*steps.first().unwrap(), 199);
        assert_eq!(*steps.last().unwrap(), 299);
    }

    fn dense_window_from_field(
        field: &[Vec<f64>],
        ids: &[SensorId],
    ) -> ObservationWindow {
        let steps = field[0].len();
        let mut w = ObservationWindow::new(steps as u64 + 1);
        for (row, &id) in field.iter().zip(ids) {
            for (step, &value) in row.iter().enumerate() {
                w.push(Observation {
                    sensor: id,
                    step: step as u64,
                    value,
                });
            }
        }
        w
    }

    /// Synthetic separable field for fit tests: spatially correlated AR(1)
    /// components mixed through the spatial Cholesky factor.
    fn synthetic_field(
        theta_time: f64,
        theta_space: f64,
        positions: &[Position],
        steps: usize,
        step_seconds: f64,
        seed: u64,
    ) -> Vec<Vec<f64>> {
        use nalgebra::DMatrix;
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};

        let n = positions.len();
        let spatial = DMatrix::from_fn(n, n, |i, j| {
            (-theta_space * positions[i].distance_to(&positions[j])).exp()
        });
        let chol = spatial
            .clone()
            .cholesky()
            .or_else(|| (spatial + DMatrix::identity(n, n) * 1e-10).cholesky())
            .expect("spatial kernel should be positive definite");
        let l = chol.l();

        let rho = (-theta_time * step_seconds).exp();
        let innovation = (1.0 - rho * rho).sqrt();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let normal = StandardNormal;

        let mut latent = vec![0.0f64; n];
        for x in latent.iter_mut() {
            *x = normal.sample(&mut rng);
        }
        let mut field = vec![vec![0.0f64; steps]; n];
        for t in 0..steps {
            if t > 0 {
                for x in latent.iter_mut() {
                    let e: f64 = normal.sample(&mut rng);
                    *x = rho * *x + innovation * e;
                }
            }
            for i in 0..n {
                let mut v = 0.0;
                for k in 0..=i {
                    v += l[(i, k)] * latent[k];
                }
                field[i][t] = v;
            }
        }
        field
    }

    #[test]
    fn fit_recovers_known_scaling_parameters_from_day_long_window() {
        let theta_time = 0.002; // per second
        let theta_space = 0.05; // per meter
        let step_seconds = 10.0;
        let steps = 8640; // 24 h of 10 s steps

        let positions = vec![
            Position::new(0.0, 0.0),
            Position::new(8.0, 3.0),
            Position::new(20.0, 11.0),
            Position::new(33.0, 5.0),
            Position::new(14.0, 28.0),
            Position::new(41.0, 36.0),
            Position::new(3.0, 44.0),
            Position::new(27.0, 22.0),
        ];
        let ids: Vec<SensorId> = (0..positions.len() as u32).map(SensorId).collect();
        let field = synthetic_field(theta_time, theta_space, &positions, steps, step_seconds, 11);

        let window = dense_window_from_field(&field, &ids);
        let position_map: BTreeMap<SensorId, Position> =
            ids.iter().copied().zip(positions.iter().copied()).collect();
        let prior = model(1.0, 1.0);
        let report = extract_scaling_parameters(
            &window,
            &position_map,
            step_seconds,
            &prior,
            &FitConfig::default(),
        )
        .unwrap();

        assert!(report.theta_time_updated && report.theta_space_updated);
        assert_relative_eq!(report.model.theta_time, theta_time, max_relative = 0.25);
        assert_relative_eq!(report.model.theta_space, theta_space, max_relative = 0.25);
    }

    #[test]
    fn larger_window_does_not_worsen_recovery() {
        let theta_time = 0.002;
        let theta_space = 0.05;
        let step_seconds = 10.0;
        let positions = vec![
            Position::new(0.0, 0.0),
            Position::new(9.0, 4.0),
            Position::new(22.0, 13.0),
            Position::new(35.0, 6.0),
            Position::new(15.0, 30.0),
            Position::new(43.0, 38.0),
        ];
        let ids: Vec<SensorId> = (0..positions.len() as u32).map(SensorId).collect();
        let position_map: BTreeMap<SensorId, Position> =
            ids.iter().copied().zip(positions.iter().copied()).collect();
        let prior = model(1.0, 1.0);

        let mut err_short = 0.0;
        let mut err_long = 0.0;
        let seeds = 20;
        for seed in 0..seeds {
            let field =
                synthetic_field(theta_time, theta_space, &positions, 17280, step_seconds, seed);
            for (steps, err) in [(2160usize, &mut err_short), (17280usize, &mut err_long)] {
                let truncated: Vec<Vec<f64>> =
                    field.iter().map(|row| row[..steps].to_vec()).collect();
                let window = dense_window_from_field(&truncated, &ids);
                let report = extract_scaling_parameters(
                    &window,
                    &position_map,
                    step_seconds,
                    &prior,
                    &FitConfig::default(),
                )
                .unwrap();
                *err += ((report.model.theta_time - theta_time) / theta_time).abs()
                    + ((report.model.theta_space - theta_space) / theta_space).abs();
            }
        }
        assert!(
            err_long <= err_short,
            "mean fit error grew with window size: short={} long={}",
            err_short / seeds as f64,
            err_long / seeds as f64
        );
    }

    #[test]
    fn fit_is_invariant_under_window_reordering() {
        let step_seconds = 10.0;
        let positions = vec![Position::new(0.0, 0.0), Position::new(10.0, 0.0)];
        let ids = [SensorId(0), SensorId(1)];
        let field = synthetic_field(0.005, 0.05, &positions, 600, step_seconds, 3);

        let forward = dense_window_from_field(&field, &ids);
        let mut reversed = ObservationWindow::new(601);
        for (row, &id) in field.iter().zip(&ids).rev() {
            for (step, &value) in row.iter().enumerate().rev() {
                reversed.push(Observation {
                    sensor: id,
                    step: step as u64,
                    value,
                });
            }
        }

        let position_map: BTreeMap<SensorId, Position> =
            ids.iter().copied().zip(positions.iter().copied()).collect();
        let prior = model(1.0, 1.0);
        let cfg = FitConfig::default();
        let a = extract_scaling_parameters(&forward, &position_map, step_seconds, &prior, &cfg)
            .unwrap();
        let b = extract_scaling_parameters(&reversed, &position_map, step_seconds, &prior, &cfg)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_sensor_updates_only_the_temporal_parameter() {
        let step_seconds = 10.0;
        let positions = vec![Position::new(0.0, 0.0)];
        let ids = [SensorId(7)];
        let field = synthetic_field(0.005, 0.05, &positions, 4000, step_seconds, 5);
        let window = dense_window_from_field(&field, &ids);
        let position_map: BTreeMap<SensorId, Position> =
            ids.iter().copied().zip(positions.iter().copied()).collect();

        let prior = model(1.0, 0.33);
        let report = extract_scaling_parameters(
            &window,
            &position_map,
            step_seconds,
            &prior,
            &FitConfig::default(),
        )
        .unwrap();
        assert!(report.theta_time_updated);
        assert!(!report.theta_space_updated);
        assert_eq!(report.model.theta_space, 0.33);
        assert!(report.model.theta_time != prior.theta_time);
    }

    #[test]
    fn constant_observations_yield_insufficient_data() {
        let mut window = ObservationWindow::new(1000);
        for step in 0..500 {
            for id in 0..3u32 {
                window.push(Observation {
                    sensor: SensorId(id),
                    step,
                    value: 42.0,
                });
            }
        }
        let positions: BTreeMap<SensorId, Position> = (0..3u32)
            .map(|i| (SensorId(i), Position::new(i as f64 * 5.0, 0.0)))
            .collect();
        let prior = model(0.5, 0.5);
        let err = extract_scaling_parameters(
            &window,
            &positions,
            10.0,
            &prior,
            &FitConfig::default(),
        )
        .unwrap_err();
        assert_eq!(err, CovarianceError::InsufficientData);
    }

    #[test]
    fn normalization_maps_training_mean_to_zero() {
        let stats = NormalizationStats::new(20.0, 2.0).unwrap();
        assert_eq!(stats.normalize(20.0), 0.0);
        assert_eq!(stats.normalize(24.0), 2.0);
    }

    #[test]
    fn normalization_rejects_zero_variance() {
        assert!(NormalizationStats::new(1.0, 0.0).is_err());
        assert!(NormalizationStats::from_values([5.0, 5.0, 5.0]).is_err());
    }

    proptest! {
        #[test]
        fn normalization_round_trips(mean in -100.0..100.0f64, std in 0.01..50.0f64, x in -1e4..1e4f64) {
            let stats = NormalizationStats::new(mean, std).unwrap();
            let back = stats.denormalize(stats.normalize(x));
            prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
}
