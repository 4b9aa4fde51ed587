//! LMMSE estimation of the observed field at arbitrary locations from stale
//! observations, and the analytic mean-square error that drives scheduling.
//!
//! The estimator combines the latest received observation of every sensor,
//! weighting each by the covariance model evaluated at its distance from the
//! query location and the age of its observation. The same covariance
//! matrices yield the estimation error without reference to ground truth,
//! which is what lets the gateway judge observation quality online.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::covariance::CovarianceModel;
use crate::sensors::{Position, SensorState, SimClock};

/// Nugget ladder: the exact system is attempted first, then these
/// regularizers in order until the factorization succeeds.
const NUGGET_LADDER: [f64; 5] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2];

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error("covariance system is singular even with nugget up to 1e-2")]
    SingularSystem,
    #[error("no sensor in the query has a received observation")]
    NoObservations,
    #[error("average error read before any accumulation")]
    EmptyWindow,
    #[error("sensor clock inconsistency: {0}")]
    Clock(#[from] crate::sensors::SensorError),
}

/// A request to estimate the field value at one location and instant.
#[derive(Debug, Clone, Copy)]
pub struct EstimationQuery<'a> {
    pub target: Position,
    pub now: SimClock,
    /// Sensors contributing observations; all must have transmitted at least
    /// once.
    pub sensors: &'a [SensorState],
}

/// Result of one LMMSE estimation: weights, the estimate, and its analytic
/// mean-square error.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationReport {
    pub weights: Vec<f64>,
    pub estimate: f64,
    pub mse: f64,
    pub location: Position,
    pub step: u64,
}

/// Covariance matrices for a query: the sensor-to-sensor matrix and the
/// sensor-to-target vector.
pub fn build_covariance_matrices(
    query: &EstimationQuery<'_>,
    model: &CovarianceModel,
) -> Result<(DMatrix<f64>, DVector<f64>), EstimatorError> {
    let sensors = query.sensors;
    if sensors.is_empty() {
        return Err(EstimatorError::NoObservations);
    }
    let step_seconds = query.now.step_seconds;
    let mut ages = Vec::with_capacity(sensors.len());
    for s in sensors {
        ages.push(crate::sensors::age_of_information(s, &query.now)? as f64 * step_seconds);
    }

    let n = sensors.len();
    let mut c_yy = DMatrix::zeros(n, n);
    for j in 0..n {
        c_yy[(j, j)] = 1.0;
        for k in (j + 1)..n {
            let d = sensors[j].position.distance_to(&sensors[k].position);
            let age_diff = (ages[j] - ages[k]).abs();
            let c = model.correlation(d, age_diff);
            c_yy[(j, k)] = c;
            c_yy[(k, j)] = c;
        }
    }
    let c_yz = DVector::from_fn(n, |j, _| {
        model.correlation(sensors[j].position.distance_to(&query.target), ages[j])
    });
    Ok((c_yy, c_yz))
}

/// Factorizes the covariance matrix, escalating through the nugget ladder
/// when the exact matrix is numerically singular.
fn factorize(c_yy: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, EstimatorError> {
    if let Some(chol) = c_yy.clone().cholesky() {
        return Ok(chol);
    }
    let identity = DMatrix::identity(c_yy.nrows(), c_yy.ncols());
    for nugget in NUGGET_LADDER {
        if let Some(chol) = (c_yy + &identity * nugget).cholesky() {
            return Ok(chol);
        }
    }
    Err(EstimatorError::SingularSystem)
}

/// LMMSE weight vector: solves `C_YY W = c_YZ` (regularized only if needed).
pub fn lmmse_weights(
    c_yy: &DMatrix<f64>,
    c_yz: &DVector<f64>,
) -> Result<DVector<f64>, EstimatorError> {
    Ok(factorize(c_yy)?.solve(c_yz))
}

/// Full LMMSE estimate at the query location with its analytic error.
pub fn estimate(
    query: &EstimationQuery<'_>,
    model: &CovarianceModel,
) -> Result<EstimationReport, EstimatorError> {
    let (c_yy, c_yz) = build_covariance_matrices(query, model)?;
    let weights = lmmse_weights(&c_yy, &c_yz)?;
    let values = DVector::from_fn(query.sensors.len(), |j, _| query.sensors[j].last_value);
    let estimate = weights.dot(&values);
    let mse = clamp_mse(model.process_variance * (1.0 - c_yz.dot(&weights)), model);
    Ok(EstimationReport {
        weights: weights.iter().copied().collect(),
        estimate,
        mse,
        location: query.target,
        step: query.now.step_index,
    })
}

/// Analytic error at each of `locations`, reusing one factorization of the
/// shared sensor-to-sensor matrix. This is the per-step fast path of the
/// simulation loop.
pub fn mse_at_locations(
    observed: &[SensorState],
    locations: &[Position],
    now: &SimClock,
    model: &CovarianceModel,
) -> Result<Vec<f64>, EstimatorError> {
    if observed.is_empty() {
        return Err(EstimatorError::NoObservations);
    }
    let query = EstimationQuery {
        target: locations.first().copied().unwrap_or(Position::new(0.0, 0.0)),
        now: *now,
        sensors: observed,
    };
    let (c_yy, _) = build_covariance_matrices(&query, model)?;
    let chol = factorize(&c_yy)?;

    let step_seconds = now.step_seconds;
    let ages: Vec<f64> = observed
        .iter()
        .map(|s| (now.step_index - s.last_tx_step) as f64 * step_seconds)
        .collect();

    let mut out = Vec::with_capacity(locations.len());
    for target in locations {
        let c_yz = DVector::from_fn(observed.len(), |j, _| {
            model.correlation(observed[j].position.distance_to(target), ages[j])
        });
        let weights = chol.solve(&c_yz);
        out.push(clamp_mse(
            model.process_variance * (1.0 - c_yz.dot(&weights)),
            model,
        ));
    }
    Ok(out)
}

/// Round-off from the solve can push the analytic error marginally outside
/// its theoretical range; reports are clamped to `[0, process_variance]`.
fn clamp_mse(mse: f64, model: &CovarianceModel) -> f64 {
    mse.clamp(0.0, model.process_variance)
}

/// Summary of one closed accumulation window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowSummary {
    /// Mean per-step error over the closed window.
    pub average: f64,
    /// Change relative to the previous window; zero for the first window.
    pub delta: f64,
}

/// Running mean of the per-step analytic error at one sensor's location
/// between its consecutive transmissions.
#[derive(Debug, Clone, Default)]
pub struct AverageErrorTracker {
    sum: f64,
    count: u64,
    previous_average: Option<f64>,
}

impl AverageErrorTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, mse: f64) {
        self.sum += mse;
        self.count += 1;
    }

    pub fn sample_count(&self) -> u64 {
        self.count
    }

    /// Mean error accumulated so far in the open window.
    pub fn average(&self) -> Result<f64, EstimatorError> {
        if self.count == 0 {
            return Err(EstimatorError::EmptyWindow);
        }
        Ok(self.sum / self.count as f64)
    }

    /// Drops the open window without recording it; the next close still
    /// reports a zero change. Used for pre-history accumulation before a
    /// sensor's first transmission.
    pub fn discard_window(&mut self) {
        self.sum = 0.0;
        self.count = 0;
    }

    /// Closes the window at a transmission: returns its mean error and the
    /// change from the previous window, then starts the next window.
    pub fn close_window(&mut self) -> Result<WindowSummary, EstimatorError> {
        let average = self.average()?;
        let delta = match self.previous_average {
            Some(previous) => average - previous,
            None => 0.0,
        };
        self.previous_average = Some(average);
        self.sum = 0.0;
        self.count = 0;
        Ok(WindowSummary { average, delta })
    }
}
