//! Synthetic spatio-temporal Gaussian-process generator.
//!
//! Draws a zero-mean, unit-variance field whose covariance between sensor
//! `j` at step `s` and sensor `k` at step `t` is
//! `exp(-theta_space*d_jk) * exp(-theta_time*|s-t|*t_S)`. The temporal
//! factor is the Ornstein-Uhlenbeck (AR(1)) kernel, so the field is sampled
//! exactly by mixing independent per-component AR(1) chains through the
//! Cholesky factor of the spatial kernel. Sampling is deterministic per seed.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Channel, DataError, DatasetFrame, FrameSensor};
use crate::sensors::{Position, SensorId};

/// Exact-sampling limits; beyond these the generator refuses the job.
const MAX_SENSORS: usize = 64;
const MAX_STEPS: u64 = 2_000_000;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub sensor_count: usize,
    /// Side length of the square deployment area, meters.
    pub area_extent_m: f64,
    /// Temporal decay rate, per second.
    pub theta_time: f64,
    /// Spatial decay rate, per meter.
    pub theta_space: f64,
    /// Variance of the generated field.
    pub process_variance: f64,
    pub duration_steps: u64,
    pub step_seconds: f64,
    pub seed: u64,
    /// Metadata for baseline comparisons: the update period the fictional
    /// original deployment used.
    pub native_period_seconds: f64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.sensor_count == 0 || self.sensor_count > MAX_SENSORS {
            return Err(DataError::SizeLimit(format!(
                "sensor_count {} outside 1..={MAX_SENSORS}",
                self.sensor_count
            )));
        }
        if self.duration_steps == 0 || self.duration_steps > MAX_STEPS {
            return Err(DataError::SizeLimit(format!(
                "duration_steps {} outside 1..={MAX_STEPS}",
                self.duration_steps
            )));
        }
        if !(self.area_extent_m > 0.0 && self.step_seconds > 0.0 && self.process_variance > 0.0) {
            return Err(DataError::SizeLimit(
                "extent, step duration, and variance must be positive".into(),
            ));
        }
        if self.theta_time < 0.0 || self.theta_space < 0.0 {
            return Err(DataError::SizeLimit(
                "scaling parameters must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<DatasetFrame, DataError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.sensor_count;
    let steps = spec.duration_steps as usize;

    let positions: Vec<Position> = (0..n)
        .map(|_| {
            Position::new(
                rng.gen_range(0.0..spec.area_extent_m),
                rng.gen_range(0.0..spec.area_extent_m),
            )
        })
        .collect();

    // Mixing factor of the spatial kernel. A zero spatial decay makes every
    // sensor carry the same component, which the all-ones kernel's exact
    // rank-one factor reproduces.
    let (mix, latent_dim) = if spec.theta_space == 0.0 {
        (DMatrix::from_element(n, 1, 1.0), 1)
    } else {
        let kernel = DMatrix::from_fn(n, n, |i, j| {
            (-spec.theta_space * positions[i].distance_to(&positions[j])).exp()
        });
        let chol = cholesky_with_jitter(kernel).ok_or_else(|| {
            DataError::SizeLimit("spatial kernel is not positive definite".into())
        })?;
        (chol, n)
    };

    let rho = (-spec.theta_time * spec.step_seconds).exp();
    let innovation = (1.0 - rho * rho).sqrt();
    let scale = spec.process_variance.sqrt();
    let normal = StandardNormal;

    let mut latent = vec![0.0f64; latent_dim];
    for x in latent.iter_mut() {
        *x = normal.sample(&mut rng);
    }
    let mut values = vec![Vec::with_capacity(steps); n];
    for t in 0..steps {
        if t > 0 {
            for x in latent.iter_mut() {
                let e: f64 = normal.sample(&mut rng);
                *x = rho * *x + innovation * e;
            }
        }
        for i in 0..n {
            let mut v = 0.0;
            // The mixing factor is lower triangular (or a single column).
            for k in 0..latent_dim.min(i + 1) {
                v += mix[(i, k)] * latent[k];
            }
            values[i].push(scale * v);
        }
    }

    let sensors = positions
        .iter()
        .enumerate()
        .map(|(i, &position)| FrameSensor {
            id: SensorId(i as u32),
            position,
            native_period_seconds: spec.native_period_seconds,
        })
        .collect();
    Ok(DatasetFrame::from_grid(
        spec.step_seconds,
        Channel::Synthetic,
        sensors,
        values,
    ))
}

/// Lower-triangular Cholesky factor, escalating a diagonal jitter when the
/// kernel is numerically semi-definite (near-coincident sensors).
fn cholesky_with_jitter(kernel: DMatrix<f64>) -> Option<DMatrix<f64>> {
    if let Some(chol) = kernel.clone().cholesky() {
        return Some(chol.unpack());
    }
    let n = kernel.nrows();
    let mut jitter = 1e-12;
    while jitter <= 1e-6 {
        let bumped = &kernel + DMatrix::identity(n, n) * jitter;
        if let Some(chol) = bumped.cholesky() {
            return Some(chol.unpack());
        }
        jitter *= 10.0;
    }
    None
}
