//! Pose error on SE(3) and the cascaded proportional law that turns it into
//! task-space acceleration commands.

use nalgebra::{Matrix3, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{EePose, Twist};
use crate::reference::SloshFreePose;
use crate::so3;

/// Outer (pose -> velocity) and inner (velocity -> acceleration) gains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskGains {
    pub k_t: [f64; 6],
    pub k_nu: [f64; 6],
}

impl Default for TaskGains {
    fn default() -> Self {
        let k_t = [10.0; 6];
        TaskGains {
            k_t,
            k_nu: k_t.map(|k| 10.0 * k),
        }
    }
}

impl TaskGains {
    pub fn validate(&self) -> Result<()> {
        if self
            .k_t
            .iter()
            .chain(&self.k_nu)
            .all(|&k| k > 0.0 && k.is_finite())
        {
            Ok(())
        } else {
            Err(Error::InvalidConfig(
                "task gains must be strictly positive".into(),
            ))
        }
    }
}

/// Commanded linear and angular end-effector acceleration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskCommand {
    pub u: Vector6<f64>,
}

impl TaskCommand {
    pub fn linear(&self) -> Vector3<f64> {
        self.u.fixed_rows::<3>(0).into_owned()
    }

    pub fn angular(&self) -> Vector3<f64> {
        self.u.fixed_rows::<3>(3).into_owned()
    }
}

/// World-frame angle-axis of the rotation taking `r_e` onto `r_r`:
/// `R_e log(R_e^T R_r)`, so that `exp(e) R_e = R_r`.
pub fn orientation_error(r_r: &Matrix3<f64>, r_e: &Matrix3<f64>) -> Vector3<f64> {
    r_e * so3::log_map(&(r_e.transpose() * r_r))
}

pub fn pose_error(reference: &SloshFreePose, ee: &EePose) -> Vector6<f64> {
    let dp = reference.p - ee.p;
    let dr = orientation_error(&reference.r, &ee.r);
    Vector6::new(dp.x, dp.y, dp.z, dr.x, dr.y, dr.z)
}

/// `u = k_nu (k_T e - nu)`, elementwise.
pub fn cascaded_pd(e_t: &Vector6<f64>, nu_e: &Twist, gains: &TaskGains) -> TaskCommand {
    let nu = nu_e.to_vector();
    let u = Vector6::from_fn(|i, _| gains.k_nu[i] * (gains.k_t[i] * e_t[i] - nu[i]));
    TaskCommand { u }
}
