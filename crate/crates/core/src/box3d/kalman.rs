//! Constant-velocity Kalman filter over 3D box state.
//!
//! State layout (metres, radians, per second):
//! `[x, y, z, w, h, l, yaw, vx, vy, vz, vyaw]`.
//! Position and yaw integrate their velocities, extents are random walks.
//! Seven components are observed: position, extents and yaw.

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

use super::wrap_angle;

pub const STATE_DIM: usize = 11;
pub const MEAS_DIM: usize = 7;

pub type State = SVector<f64, STATE_DIM>;
pub type Covariance = SMatrix<f64, STATE_DIM, STATE_DIM>;
type Obs = SVector<f64, MEAS_DIM>;
type ObsCov = SMatrix<f64, MEAS_DIM, MEAS_DIM>;
type ObsModel = SMatrix<f64, MEAS_DIM, STATE_DIM>;

const YAW: usize = 6;

/// Process noise diagonal: position 0.1, extents 0.05, yaw 0.1, velocities
/// 0.01 (standard deviations).
pub const PROCESS_NOISE_DIAG: [f64; STATE_DIM] = [
    0.1 * 0.1,
    0.1 * 0.1,
    0.1 * 0.1,
    0.05 * 0.05,
    0.05 * 0.05,
    0.05 * 0.05,
    0.1 * 0.1,
    0.01 * 0.01,
    0.01 * 0.01,
    0.01 * 0.01,
    0.01 * 0.01,
];

/// Measurement noise diagonal: position 0.05, extents 0.03, yaw 0.05 and a
/// trailing 0.04 entry. Only the first seven entries enter the update; no
/// eighth quantity is observed.
pub const MEASUREMENT_NOISE_DIAG: [f64; 8] = [
    0.05 * 0.05,
    0.05 * 0.05,
    0.05 * 0.05,
    0.03 * 0.03,
    0.03 * 0.03,
    0.03 * 0.03,
    0.05 * 0.05,
    0.04 * 0.04,
];

/// Initial velocity standard deviation for a new track.
pub const INITIAL_VELOCITY_SD: f64 = 0.5;

pub fn process_noise() -> Covariance {
    Covariance::from_diagonal(&State::from_row_slice(&PROCESS_NOISE_DIAG))
}

pub fn measurement_noise() -> ObsCov {
    ObsCov::from_diagonal(&Obs::from_row_slice(&MEASUREMENT_NOISE_DIAG[..MEAS_DIM]))
}

fn observation_model() -> ObsModel {
    let mut h = ObsModel::zeros();
    for i in 0..MEAS_DIM {
        h[(i, i)] = 1.0;
    }
    h
}

fn transition(dt: f64) -> Covariance {
    let mut f = Covariance::identity();
    f[(0, 7)] = dt;
    f[(1, 8)] = dt;
    f[(2, 9)] = dt;
    f[(YAW, 10)] = dt;
    f
}

/// One observation of a box: position, extents (width, height, length) and
/// yaw, in metres and radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub position: [f64; 3],
    pub dims: [f64; 3],
    pub yaw: f64,
}

impl Measurement {
    fn vector(&self) -> Obs {
        Obs::from_row_slice(&[
            self.position[0],
            self.position[1],
            self.position[2],
            self.dims[0],
            self.dims[1],
            self.dims[2],
            self.yaw,
        ])
    }

    pub fn is_finite(&self) -> bool {
        self.position
            .iter()
            .chain(self.dims.iter())
            .all(|v| v.is_finite())
            && self.yaw.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanTrack {
    pub track_id: u32,
    pub class_id: u32,
    pub state: State,
    pub covariance: Covariance,
    /// Consecutive frames without an update.
    pub misses: u32,
    pub updates: u32,
}

impl KalmanTrack {
    /// Starts a track at the measurement with zero velocity. The initial
    /// covariance is the measurement noise extended with
    /// [`INITIAL_VELOCITY_SD`] on the velocities.
    pub fn new(track_id: u32, class_id: u32, m: &Measurement) -> Self {
        let mut state = State::zeros();
        state.fixed_rows_mut::<MEAS_DIM>(0).copy_from(&m.vector());
        state[YAW] = wrap_angle(state[YAW]);
        let mut diag = State::zeros();
        for (i, v) in MEASUREMENT_NOISE_DIAG[..MEAS_DIM].iter().enumerate() {
            diag[i] = *v;
        }
        for i in MEAS_DIM..STATE_DIM {
            diag[i] = INITIAL_VELOCITY_SD * INITIAL_VELOCITY_SD;
        }
        Self {
            track_id,
            class_id,
            state,
            covariance: Covariance::from_diagonal(&diag),
            misses: 0,
            updates: 1,
        }
    }

    pub fn predict(&mut self, dt: f64) {
        let f = transition(dt);
        self.state = f * self.state;
        self.state[YAW] = wrap_angle(self.state[YAW]);
        self.covariance = f * self.covariance * f.transpose() + process_noise();
    }

    /// Standard update with the yaw innovation wrapped into `(-pi, pi]`.
    /// Uses the Joseph form and re-symmetrizes the covariance afterwards.
    pub fn update(&mut self, m: &Measurement) {
        let h = observation_model();
        let r = measurement_noise();
        let mut innovation = m.vector() - h * self.state;
        innovation[YAW] = wrap_angle(innovation[YAW]);
        let s = h * self.covariance * h.transpose() + r;
        let Some(chol) = s.cholesky() else {
            // S = HPH' + R is positive definite while P is PSD; reaching this
            // means P was corrupted, so restart from the measurement.
            *self = Self {
                misses: 0,
                ..Self::new(self.track_id, self.class_id, m)
            };
            return;
        };
        // K = P H' S^-1, computed as (S^-1 H P)'.
        let gain = chol.solve(&(h * self.covariance)).transpose();
        self.state += gain * innovation;
        self.state[YAW] = wrap_angle(self.state[YAW]);
        let i_kh = Covariance::identity() - gain * h;
        let p = i_kh * self.covariance * i_kh.transpose() + gain * r * gain.transpose();
        self.covariance = (p + p.transpose()) * 0.5;
        self.misses = 0;
        self.updates += 1;
    }

    pub fn position(&self) -> [f64; 3] {
        [self.state[0], self.state[1], self.state[2]]
    }

    pub fn dims(&self) -> [f64; 3] {
        [self.state[3], self.state[4], self.state[5]]
    }

    pub fn yaw(&self) -> f64 {
        self.state[YAW]
    }

    pub fn velocity(&self) -> [f64; 3] {
        [self.state[7], self.state[8], self.state[9]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meas(x: f64) -> Measurement {
        Measurement {
            position: [x, 0.2, 2.0],
            dims: [0.5, 0.8, 0.5],
            yaw: 0.1,
        }
    }

    #[test]
    fn noise_diagonals() {
        let q = process_noise();
        let sq = |sd: f64| sd * sd;
        assert_eq!(q[(0, 0)], sq(0.1));
        assert_eq!(q[(3, 3)], sq(0.05));
        assert_eq!(q[(6, 6)], sq(0.1));
        assert_eq!(q[(10, 10)], sq(0.01));
        assert_eq!(MEASUREMENT_NOISE_DIAG[7], sq(0.04));
    }

    #[test]
    fn predict_with_zero_velocity_grows_covariance_by_q() {
        let mut t = KalmanTrack::new(1, 0, &meas(1.0));
        let before = t.clone();
        t.predict(0.1);
        assert_eq!(t.state, before.state);
        // Diagonal P: F P F' adds dt^2 * var(v) onto each integrated component.
        let dt2 = 0.01;
        let grown: f64 = (7..11).map(|v| dt2 * before.covariance[(v, v)]).sum();
        let expected = before.covariance.trace() + process_noise().trace() + grown;
        assert!((t.covariance.trace() - expected).abs() < 1e-12);
        assert_eq!(t.covariance[(3, 3)], before.covariance[(3, 3)] + 0.0025);
    }

    #[test]
    fn predict_integrates_velocity() {
        let mut t = KalmanTrack::new(1, 0, &meas(1.0));
        t.state[7] = 1.0;
        t.predict(0.1);
        assert!((t.state[0] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn update_at_predicted_state_keeps_state_and_shrinks_covariance() {
        let mut t = KalmanTrack::new(1, 0, &meas(1.0));
        t.predict(0.1);
        let before = t.clone();
        t.update(&meas(1.0));
        assert!((t.state - before.state).abs().max() < 1e-15);
        assert!(t.covariance.trace() < before.covariance.trace());
    }

    #[test]
    fn yaw_innovation_is_wrapped() {
        let mut m = meas(1.0);
        m.yaw = 3.1;
        let mut t = KalmanTrack::new(1, 0, &m);
        m.yaw = -3.1;
        t.update(&m);
        // Shortest way round passes through pi, not zero.
        assert!(t.yaw().abs() > 3.0);
    }
}
