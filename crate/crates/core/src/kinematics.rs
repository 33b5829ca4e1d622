//! Differential kinematics of a serial chain of revolute joints described by
//! modified (Craig) Denavit-Hartenberg rows.
//!
//! All twists, Jacobians and Hessians are expressed in the base (world)
//! frame, with the angular part a free vector.

use std::path::Path;

use nalgebra::{DVector, Matrix3, Matrix4, Matrix6xX, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::so3;

/// One modified-DH row: `Rx(alpha) * Tx(a) * Rz(theta + theta_offset) * Tz(d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhRow {
    pub a: f64,
    pub d: f64,
    pub alpha: f64,
    #[serde(default)]
    pub theta_offset: f64,
}

impl DhRow {
    fn transform(&self, theta: f64) -> Matrix4<f64> {
        let (sa, ca) = self.alpha.sin_cos();
        let (st, ct) = (theta + self.theta_offset).sin_cos();
        Matrix4::new(
            ct,
            -st,
            0.0,
            self.a,
            st * ca,
            ct * ca,
            -sa,
            -sa * self.d,
            st * sa,
            ct * sa,
            ca,
            ca * self.d,
            0.0,
            0.0,
            0.0,
            1.0,
        )
    }
}

/// Joint-space bands: position, velocity, acceleration and jerk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
    pub qd_min: Vec<f64>,
    pub qd_max: Vec<f64>,
    pub qdd_min: Vec<f64>,
    pub qdd_max: Vec<f64>,
    pub qddd_min: Vec<f64>,
    pub qddd_max: Vec<f64>,
}

impl Limits {
    /// Symmetric `(-x, x)` bands on every derivative level; handy for tests.
    pub fn symmetric(n: usize, q: f64, qd: f64, qdd: f64, qddd: f64) -> Self {
        Limits {
            q_min: vec![-q; n],
            q_max: vec![q; n],
            qd_min: vec![-qd; n],
            qd_max: vec![qd; n],
            qdd_min: vec![-qdd; n],
            qdd_max: vec![qdd; n],
            qddd_min: vec![-qddd; n],
            qddd_max: vec![qddd; n],
        }
    }

    pub fn bands(&self) -> [(&'static str, &[f64], &[f64]); 4] {
        [
            ("q", &self.q_min, &self.q_max),
            ("qd", &self.qd_min, &self.qd_max),
            ("qdd", &self.qdd_min, &self.qdd_max),
            ("qddd", &self.qddd_min, &self.qddd_max),
        ]
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        for (band, lo, hi) in self.bands() {
            for (what, v) in [("min", lo), ("max", hi)] {
                if v.len() != n {
                    return Err(Error::DimensionMismatch {
                        what: if what == "min" {
                            "limit band min"
                        } else {
                            "limit band max"
                        },
                        expected: n,
                        got: v.len(),
                    });
                }
            }
            for (joint, (&min, &max)) in lo.iter().zip(hi).enumerate() {
                if !(min.is_finite() && max.is_finite() && min < max) {
                    return Err(Error::InvalidLimitBand {
                        band,
                        joint,
                        min,
                        max,
                    });
                }
            }
        }
        Ok(())
    }

    /// Largest violation of the position, velocity and acceleration bands.
    pub fn violation(&self, state: &JointState) -> f64 {
        let band = |x: &DVector<f64>, lo: &[f64], hi: &[f64]| {
            x.iter()
                .zip(lo.iter().zip(hi))
                .map(|(&v, (&l, &h))| (l - v).max(v - h).max(0.0))
                .fold(0.0, f64::max)
        };
        band(&state.q, &self.q_min, &self.q_max)
            .max(band(&state.qd, &self.qd_min, &self.qd_max))
            .max(band(&state.qdd, &self.qdd_min, &self.qdd_max))
    }

    /// Violation of the jerk band by the backward difference `(qdd - qdd_prev) / dt`.
    pub fn jerk_violation(&self, qdd_prev: &DVector<f64>, qdd: &DVector<f64>, dt: f64) -> f64 {
        qdd.iter()
            .zip(qdd_prev.iter())
            .enumerate()
            .map(|(i, (&a, &a0))| {
                // compare in acceleration units to stay well scaled
                let lo = a0 + self.qddd_min[i] * dt;
                let hi = a0 + self.qddd_max[i] * dt;
                (lo - a).max(a - hi).max(0.0)
            })
            .fold(0.0, f64::max)
    }
}

/// On-disk layout of a robot model file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelDescription {
    #[serde(default)]
    pub name: String,
    pub joints: Vec<DhRow>,
    pub limits: Limits,
    #[serde(default)]
    pub tool: ToolDescription,
    /// Nominal configuration used as the inverse-kinematics seed; defaults
    /// to the midpoint of the position limits.
    #[serde(default)]
    pub home: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToolDescription {
    pub matrix: [[f64; 4]; 4],
}

impl Default for ToolDescription {
    fn default() -> Self {
        let mut matrix = [[0.0; 4]; 4];
        for (i, row) in matrix.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        ToolDescription { matrix }
    }
}

impl ModelDescription {
    pub fn parse(content: &str) -> Result<Self> {
        if content.trim().is_empty() {
            return Err(Error::Parse("model description is empty".into()));
        }
        toml::from_str(content).map_err(|e| Error::Parse(e.to_string()))
    }

    fn tool_matrix(&self) -> Matrix4<f64> {
        Matrix4::from_fn(|r, c| self.tool.matrix[r][c])
    }
}

/// World-frame joint axis and origin.
type Frame = (Vector3<f64>, Vector3<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct KinematicModel {
    pub name: String,
    pub dh: Vec<DhRow>,
    pub tool: Matrix4<f64>,
    pub limits: Limits,
    pub home: Vec<f64>,
}

/// Parses and validates a model description.
pub fn load_model(content: &str) -> Result<KinematicModel> {
    KinematicModel::from_description(ModelDescription::parse(content)?)
}

pub fn load_model_file(path: impl AsRef<Path>) -> Result<KinematicModel> {
    let path = path.as_ref();
    let content = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    load_model(&content)
}

impl KinematicModel {
    pub fn from_description(desc: ModelDescription) -> Result<Self> {
        let model = Self::from_description_unchecked(desc);
        model.validate()?;
        Ok(model)
    }

    /// Builds the model without checking its invariants. Used by the
    /// self-check tooling, which wants to report what breaks downstream.
    pub fn from_description_unchecked(desc: ModelDescription) -> Self {
        let home = desc.home.clone().unwrap_or_else(|| {
            desc.limits
                .q_min
                .iter()
                .zip(&desc.limits.q_max)
                .map(|(lo, hi)| 0.5 * (lo + hi))
                .collect()
        });
        KinematicModel {
            tool: desc.tool_matrix(),
            name: desc.name,
            dh: desc.joints,
            limits: desc.limits,
            home,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dh.is_empty() {
            return Err(Error::InvalidModel("model has no joints".into()));
        }
        for (i, row) in self.dh.iter().enumerate() {
            if ![row.a, row.d, row.alpha, row.theta_offset]
                .iter()
                .all(|v| v.is_finite())
            {
                return Err(Error::InvalidModel(format!(
                    "non-finite DH parameter in joint {i}"
                )));
            }
        }
        self.limits.validate(self.n())?;
        if self.home.len() != self.n() {
            return Err(Error::DimensionMismatch {
                what: "home configuration",
                expected: self.n(),
                got: self.home.len(),
            });
        }

        let rot = self.tool.fixed_view::<3, 3>(0, 0).into_owned();
        if !self.tool.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidTransform("non-finite entry".into()));
        }
        if !so3::is_rotation(&rot, 1e-9) {
            return Err(Error::InvalidTransform(format!(
                "rotation block is not in SO(3) (error {:.3e})",
                so3::orthonormality_error(&rot)
            )));
        }
        let bottom = self.tool.fixed_view::<1, 4>(3, 0);
        if (bottom - nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0))
            .abs()
            .max()
            > 1e-9
        {
            return Err(Error::InvalidTransform(
                "bottom row must be [0 0 0 1]".into(),
            ));
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.dh.len()
    }

    /// Single revolute joint about z with a link of length `a` along x.
    pub fn planar_single(a: f64) -> Self {
        KinematicModel {
            name: "planar-1".into(),
            dh: vec![DhRow {
                a: 0.0,
                d: 0.0,
                alpha: 0.0,
                theta_offset: 0.0,
            }],
            tool: Matrix4::new_translation(&Vector3::new(a, 0.0, 0.0)),
            limits: Limits::symmetric(1, 10.0, 10.0, 100.0, 1e4),
            home: vec![0.0],
        }
    }

    fn check_dim(&self, what: &'static str, got: usize) -> Result<()> {
        if got != self.n() {
            return Err(Error::DimensionMismatch {
                what,
                expected: self.n(),
                got,
            });
        }
        Ok(())
    }

    /// Joint axes and origins in the world frame, plus the end-effector pose.
    fn frames(&self, q: &[f64]) -> (Vec<Frame>, EePose) {
        let mut t = Matrix4::identity();
        let mut axes = Vec::with_capacity(self.n());
        for (row, &qi) in self.dh.iter().zip(q) {
            t *= row.transform(qi);
            let z = t.fixed_view::<3, 1>(0, 2).into_owned();
            let o = t.fixed_view::<3, 1>(0, 3).into_owned();
            axes.push((z, o));
        }
        t *= self.tool;
        let pose = EePose {
            p: t.fixed_view::<3, 1>(0, 3).into_owned(),
            r: t.fixed_view::<3, 3>(0, 0).into_owned(),
        };
        (axes, pose)
    }

    pub fn forward_kinematics(&self, q: &[f64]) -> Result<EePose> {
        self.check_dim("joint vector", q.len())?;
        Ok(self.frames(q).1)
    }

    pub fn jacobian(&self, q: &[f64]) -> Result<Matrix6xX<f64>> {
        self.check_dim("joint vector", q.len())?;
        let (axes, pose) = self.frames(q);
        Ok(Self::jacobian_from_frames(&axes, &pose.p))
    }

    fn jacobian_from_frames(axes: &[Frame], p: &Vector3<f64>) -> Matrix6xX<f64> {
        let mut jac = Matrix6xX::zeros(axes.len());
        for (i, (z, o)) in axes.iter().enumerate() {
            let v = z.cross(&(p - o));
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&v);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(z);
        }
        jac
    }

    pub fn hessian(&self, q: &[f64]) -> Result<Hessian> {
        self.check_dim("joint vector", q.len())?;
        let (axes, pose) = self.frames(q);
        let jac = Self::jacobian_from_frames(&axes, &pose.p);
        Ok(Self::hessian_from(&axes, &jac))
    }

    // slices[i][:, j] = dJ_j / dq_i
    fn hessian_from(axes: &[Frame], jac: &Matrix6xX<f64>) -> Hessian {
        let n = axes.len();
        let mut slices = vec![Matrix6xX::zeros(n); n];
        for (i, slice) in slices.iter_mut().enumerate() {
            let zi = axes[i].0;
            for (j, &(zj, _)) in axes.iter().enumerate() {
                let jv_j: Vector3<f64> = jac.fixed_view::<3, 1>(0, j).into_owned();
                let jv_i: Vector3<f64> = jac.fixed_view::<3, 1>(0, i).into_owned();
                let lin = if i <= j {
                    zi.cross(&jv_j)
                } else {
                    zj.cross(&jv_i)
                };
                slice.fixed_view_mut::<3, 1>(0, j).copy_from(&lin);
                if i < j {
                    slice.fixed_view_mut::<3, 1>(3, j).copy_from(&zi.cross(&zj));
                }
            }
        }
        Hessian { slices }
    }

    /// Jacobian and velocity-product term `qd (x) H qd` at one state, sharing
    /// a single pass over the chain.
    pub fn jacobian_and_velocity_product(
        &self,
        q: &[f64],
        qd: &[f64],
    ) -> Result<(Matrix6xX<f64>, Vector6<f64>)> {
        self.check_dim("joint vector", q.len())?;
        self.check_dim("joint velocity", qd.len())?;
        let (axes, pose) = self.frames(q);
        let jac = Self::jacobian_from_frames(&axes, &pose.p);
        let h = Self::hessian_from(&axes, &jac).contract(qd);
        Ok((jac, h))
    }

    /// Pose, Jacobian and velocity-product term from one pass over the chain.
    pub fn differential(
        &self,
        q: &[f64],
        qd: &[f64],
    ) -> Result<(EePose, Matrix6xX<f64>, Vector6<f64>)> {
        self.check_dim("joint vector", q.len())?;
        self.check_dim("joint velocity", qd.len())?;
        let (axes, pose) = self.frames(q);
        let jac = Self::jacobian_from_frames(&axes, &pose.p);
        let h = Self::hessian_from(&axes, &jac).contract(qd);
        Ok((pose, jac, h))
    }

    pub fn ee_velocity(&self, state: &JointState) -> Result<Twist> {
        self.check_state(state)?;
        let nu = self.jacobian(state.q.as_slice())? * &state.qd;
        Ok(Twist::from_vector(&Vector6::from_iterator(
            nu.iter().copied(),
        )))
    }

    pub fn ee_acceleration(&self, state: &JointState) -> Result<SpatialAccel> {
        self.check_state(state)?;
        let (jac, h) =
            self.jacobian_and_velocity_product(state.q.as_slice(), state.qd.as_slice())?;
        let alpha = jac * &state.qdd;
        Ok(SpatialAccel::from_vector(
            &(Vector6::from_iterator(alpha.iter().copied()) + h),
        ))
    }

    fn check_state(&self, state: &JointState) -> Result<()> {
        self.check_dim("joint positions", state.q.len())?;
        self.check_dim("joint velocities", state.qd.len())?;
        self.check_dim("joint accelerations", state.qdd.len())
    }
}

/// `n` slices of size 6 x n; `slice(i)` is the derivative of the Jacobian
/// with respect to joint `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hessian {
    slices: Vec<Matrix6xX<f64>>,
}

impl Hessian {
    pub fn slice(&self, i: usize) -> &Matrix6xX<f64> {
        &self.slices[i]
    }

    pub fn n(&self) -> usize {
        self.slices.len()
    }

    /// `sum_ij qd_i H[i, :, j] qd_j`.
    pub fn contract(&self, qd: &[f64]) -> Vector6<f64> {
        let mut out = Vector6::zeros();
        for (slice, &qi) in self.slices.iter().zip(qd) {
            if qi == 0.0 {
                continue;
            }
            for (j, &qj) in qd.iter().enumerate() {
                out += slice.column(j) * (qi * qj);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub qdd: DVector<f64>,
}

impl JointState {
    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        JointState {
            q,
            qd: DVector::zeros(n),
            qdd: DVector::zeros(n),
        }
    }

    pub fn n(&self) -> usize {
        self.q.len()
    }

    pub fn is_finite(&self) -> bool {
        self.q
            .iter()
            .chain(self.qd.iter())
            .chain(self.qdd.iter())
            .all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EePose {
    pub p: Vector3<f64>,
    pub r: Matrix3<f64>,
}

impl EePose {
    pub fn identity_at(p: Vector3<f64>) -> Self {
        EePose {
            p,
            r: Matrix3::identity(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub v: Vector3<f64>,
    pub w: Vector3<f64>,
}

impl Twist {
    pub fn from_vector(nu: &Vector6<f64>) -> Self {
        Twist {
            v: nu.fixed_rows::<3>(0).into_owned(),
            w: nu.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.v.x, self.v.y, self.v.z, self.w.x, self.w.y, self.w.z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialAccel {
    pub a: Vector3<f64>,
    pub wd: Vector3<f64>,
}

impl SpatialAccel {
    pub fn from_vector(alpha: &Vector6<f64>) -> Self {
        SpatialAccel {
            a: alpha.fixed_rows::<3>(0).into_owned(),
            wd: alpha.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.a.x, self.a.y, self.a.z, self.wd.x, self.wd.y, self.wd.z,
        )
    }
}
