//! Reference trajectories and the slosh-free orientation they induce.
//!
//! A geometric path `sigma -> p(sigma)` on `[0, 1]` is composed with a
//! rest-to-rest ninth-order time law, which keeps the position C4 in time
//! and makes velocity, acceleration, jerk and snap vanish at both ends.
//!
//! The orientation reference treats the container as a virtual quadrotor:
//! its thrust axis must be aligned with the specific force `a + g`, and yaw
//! is a free flat output held constant.

use std::f64::consts::TAU;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gravity compensation: the specific force of a container at rest points up.
pub const G_COMP: Vector3<f64> = Vector3::new(0.0, 0.0, 9.81);
/// Below this `|a + g|` (m/s^2) the thrust direction is undefined.
pub const EPS_ACC: f64 = 1e-3;
/// Below this `|z x x_tilde|` the heading reference is parallel to the thrust axis.
pub const EPS_CROSS: f64 = 1e-6;

pub const DEFAULT_CENTER: [f64; 3] = [0.45, 0.0, 0.35];

/// Ninth-order rest-to-rest time law `s(t)` on `[0, T]` and its first four
/// time derivatives. `s(0) = 0`, `s(T) = 1`, derivatives 1..4 vanish at both ends.
pub fn time_scaling(duration: f64, t: f64) -> Result<[f64; 5]> {
    if !(duration > 0.0) {
        return Err(Error::NonPositiveDuration(duration));
    }
    if !(0.0..=duration).contains(&t) {
        return Err(Error::OutsideWindow {
            t,
            t0: 0.0,
            tf: duration,
        });
    }
    let tau = t / duration;
    // s(tau) = 126 tau^5 - 420 tau^6 + 540 tau^7 - 315 tau^8 + 70 tau^9
    const C: [f64; 10] = [0.0, 0.0, 0.0, 0.0, 0.0, 126.0, -420.0, 540.0, -315.0, 70.0];
    let mut out = [0.0; 5];
    let mut scale = 1.0;
    for (order, slot) in out.iter_mut().enumerate() {
        // Horner on the order-th derivative: coefficient k becomes C[k] k! / (k - order)!
        let mut acc = 0.0;
        for k in (order..C.len()).rev() {
            let falling = ((k - order + 1)..=k).map(|m| m as f64).product::<f64>();
            acc = acc * tau + C[k] * falling;
        }
        *slot = acc * scale;
        scale /= duration;
    }
    Ok(out)
}

/// Peak of `ds/dt` times the duration: `s'(1/2) = 630 / 256`.
pub const TIME_SCALING_PEAK_RATE: f64 = 630.0 / 256.0;

/// Geometric path shapes, all parameterized by `sigma` in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    /// Circle of `radius` in the plane obtained by tilting the horizontal
    /// plane by `tilt` about the world x axis; starts at angle `phase`.
    Loop {
        #[serde(default = "default_loop_radius")]
        radius: f64,
        #[serde(default = "default_loop_tilt")]
        tilt: f64,
        #[serde(default = "default_loop_phase")]
        phase: f64,
    },
    /// `A_i sin(r_i w)` per axis with `w` sweeping one period; the default
    /// `1:2:1` ratios trace a figure eight with a vertical bob.
    Lissajous {
        #[serde(default = "default_lissajous_amplitudes")]
        amplitudes: [f64; 3],
        #[serde(default = "default_lissajous_ratios")]
        ratios: [f64; 3],
    },
    /// Vertical helix centred on the trajectory centre.
    Helix {
        #[serde(default = "default_helix_radius")]
        radius: f64,
        #[serde(default = "default_helix_turns")]
        turns: f64,
        #[serde(default = "default_helix_height")]
        height: f64,
    },
    /// Clamped uniform quintic B-spline through the given control points
    /// (offsets from the centre). Quintic keeps the path C4.
    Sampled { control_points: Vec<[f64; 3]> },
}

fn default_loop_radius() -> f64 {
    0.25
}
fn default_loop_tilt() -> f64 {
    0.3
}
fn default_loop_phase() -> f64 {
    -std::f64::consts::FRAC_PI_2
}
fn default_lissajous_amplitudes() -> [f64; 3] {
    [0.15, 0.15, 0.05]
}
fn default_lissajous_ratios() -> [f64; 3] {
    [1.0, 2.0, 1.0]
}
fn default_helix_radius() -> f64 {
    0.15
}
fn default_helix_turns() -> f64 {
    2.0
}
fn default_helix_height() -> f64 {
    0.3
}
fn default_center() -> [f64; 3] {
    DEFAULT_CENTER
}

impl Shape {
    pub fn default_loop() -> Self {
        Shape::Loop {
            radius: default_loop_radius(),
            tilt: default_loop_tilt(),
            phase: default_loop_phase(),
        }
    }

    pub fn default_lissajous() -> Self {
        Shape::Lissajous {
            amplitudes: default_lissajous_amplitudes(),
            ratios: default_lissajous_ratios(),
        }
    }

    pub fn default_helix() -> Self {
        Shape::Helix {
            radius: default_helix_radius(),
            turns: default_helix_turns(),
            height: default_helix_height(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Shape::Loop { .. } => "loop",
            Shape::Lissajous { .. } => "lissajous",
            Shape::Helix { .. } => "helix",
            Shape::Sampled { .. } => "sampled",
        }
    }
}

/// Serializable trajectory section of an experiment config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    #[serde(flatten)]
    pub shape: Shape,
    #[serde(default = "default_center")]
    pub center: [f64; 3],
    /// Navigation time `T` in seconds.
    pub navigation_time: f64,
    #[serde(default)]
    pub t0: f64,
    /// Constant yaw flat output.
    #[serde(default)]
    pub psi: f64,
}

impl TrajectorySpec {
    pub fn new(shape: Shape, navigation_time: f64) -> Self {
        TrajectorySpec {
            shape,
            center: DEFAULT_CENTER,
            navigation_time,
            t0: 0.0,
            psi: 0.0,
        }
    }
}

#[derive(Debug, Clone)]
enum Path {
    Loop {
        radius: f64,
        tilt: Matrix3<f64>,
        phase: f64,
    },
    Lissajous {
        amplitudes: [f64; 3],
        ratios: [f64; 3],
    },
    Helix {
        radius: f64,
        turns: f64,
        height: f64,
    },
    Spline(Box<[BSpline; 5]>),
}

/// Validated, immutable trajectory.
#[derive(Debug, Clone)]
pub struct Trajectory {
    spec: TrajectorySpec,
    path: Path,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceSample {
    pub t: f64,
    pub p: Vector3<f64>,
    pub v: Vector3<f64>,
    pub a: Vector3<f64>,
    pub j: Vector3<f64>,
    pub s: Vector3<f64>,
}

/// `d^m/dsigma^m` of `amp * sin(freq * sigma + phase)`.
fn harmonic(amp: f64, freq: f64, phase: f64, sigma: f64, order: usize) -> f64 {
    let shift = order as f64 * std::f64::consts::FRAC_PI_2;
    amp * freq.powi(order as i32) * (freq * sigma + phase + shift).sin()
}

impl Trajectory {
    pub fn new(spec: TrajectorySpec) -> Result<Self> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("trajectory: {msg}")));
        if !(spec.navigation_time > 0.0 && spec.navigation_time.is_finite()) {
            return Err(Error::NonPositiveDuration(spec.navigation_time));
        }
        if !spec.t0.is_finite()
            || !spec.psi.is_finite()
            || !spec.center.iter().all(|c| c.is_finite())
        {
            return bad("non-finite t0, psi or center");
        }
        let path = match &spec.shape {
            Shape::Loop {
                radius,
                tilt,
                phase,
            } => {
                if !(*radius >= 0.0) || !tilt.is_finite() || !phase.is_finite() {
                    return bad("loop radius must be >= 0");
                }
                Path::Loop {
                    radius: *radius,
                    tilt: crate::so3::rot_x(*tilt),
                    phase: *phase,
                }
            }
            Shape::Lissajous { amplitudes, ratios } => {
                if !amplitudes.iter().chain(ratios).all(|v| v.is_finite()) {
                    return bad("non-finite Lissajous parameter");
                }
                Path::Lissajous {
                    amplitudes: *amplitudes,
                    ratios: *ratios,
                }
            }
            Shape::Helix {
                radius,
                turns,
                height,
            } => {
                if !(*radius >= 0.0) || !turns.is_finite() || !height.is_finite() {
                    return bad("helix radius must be >= 0");
                }
                Path::Helix {
                    radius: *radius,
                    turns: *turns,
                    height: *height,
                }
            }
            Shape::Sampled { control_points } => {
                if control_points.len() < BSpline::DEGREE + 1 {
                    return bad("sampled path needs at least 6 control points");
                }
                if !control_points.iter().flatten().all(|v| v.is_finite()) {
                    return bad("non-finite control point");
                }
                let pts = control_points
                    .iter()
                    .map(|p| Vector3::new(p[0], p[1], p[2]))
                    .collect();
                Path::Spline(Box::new(BSpline::clamped_quintic(pts).with_derivatives()))
            }
        };
        Ok(Trajectory { spec, path })
    }

    pub fn spec(&self) -> &TrajectorySpec {
        &self.spec
    }

    pub fn t0(&self) -> f64 {
        self.spec.t0
    }

    pub fn tf(&self) -> f64 {
        self.spec.t0 + self.spec.navigation_time
    }

    pub fn duration(&self) -> f64 {
        self.spec.navigation_time
    }

    pub fn psi(&self) -> f64 {
        self.spec.psi
    }

    pub fn center(&self) -> Vector3<f64> {
        Vector3::from(self.spec.center)
    }

    /// Path point and its first four `sigma`-derivatives.
    pub fn path_derivatives(&self, sigma: f64) -> [Vector3<f64>; 5] {
        let mut d = [Vector3::zeros(); 5];
        match &self.path {
            Path::Loop {
                radius,
                tilt,
                phase,
            } => {
                for (m, dm) in d.iter_mut().enumerate() {
                    // cos(x) = sin(x + pi/2)
                    let local = Vector3::new(
                        harmonic(*radius, TAU, phase + std::f64::consts::FRAC_PI_2, sigma, m),
                        harmonic(*radius, TAU, *phase, sigma, m),
                        0.0,
                    );
                    *dm = tilt * local;
                }
            }
            Path::Lissajous { amplitudes, ratios } => {
                for (m, dm) in d.iter_mut().enumerate() {
                    *dm = Vector3::from_fn(|i, _| {
                        harmonic(amplitudes[i], TAU * ratios[i], 0.0, sigma, m)
                    });
                }
            }
            Path::Helix {
                radius,
                turns,
                height,
            } => {
                let freq = TAU * turns;
                for (m, dm) in d.iter_mut().enumerate() {
                    dm.x = harmonic(*radius, freq, std::f64::consts::FRAC_PI_2, sigma, m);
                    dm.y = harmonic(*radius, freq, 0.0, sigma, m);
                }
                d[0].z = height * (sigma - 0.5);
                d[1].z = *height;
            }
            Path::Spline(splines) => {
                for (dm, spline) in d.iter_mut().zip(splines.iter()) {
                    *dm = spline.eval(sigma);
                }
            }
        }
        d[0] += self.center();
        d
    }

    pub fn eval(&self, t: f64) -> Result<ReferenceSample> {
        if !(t >= self.t0() && t <= self.tf()) {
            return Err(Error::OutsideWindow {
                t,
                t0: self.t0(),
                tf: self.tf(),
            });
        }
        let local = (t - self.t0()).clamp(0.0, self.duration());
        let [s, s1, s2, s3, s4] = time_scaling(self.duration(), local)?;
        let [p, p1, p2, p3, p4] = self.path_derivatives(s);
        // Faa di Bruno up to fourth order
        Ok(ReferenceSample {
            t,
            p,
            v: p1 * s1,
            a: p2 * (s1 * s1) + p1 * s2,
            j: p3 * (s1 * s1 * s1) + p2 * (3.0 * s1 * s2) + p1 * s3,
            s: p4 * s1.powi(4)
                + p3 * (6.0 * s1 * s1 * s2)
                + p2 * (3.0 * s2 * s2 + 4.0 * s1 * s3)
                + p1 * s4,
        })
    }
}

/// Free-function form of [`Trajectory::eval`].
pub fn eval_trajectory(traj: &Trajectory, t: f64) -> Result<ReferenceSample> {
    traj.eval(t)
}

/// Clamped B-spline on `[0, 1]`.
#[derive(Debug, Clone)]
struct BSpline {
    degree: usize,
    knots: Vec<f64>,
    ctrl: Vec<Vector3<f64>>,
}

impl BSpline {
    const DEGREE: usize = 5;

    fn clamped_quintic(ctrl: Vec<Vector3<f64>>) -> Self {
        let k = Self::DEGREE;
        let spans = ctrl.len() - k;
        let mut knots = vec![0.0; k];
        knots.extend((0..=spans).map(|i| i as f64 / spans as f64));
        knots.extend(std::iter::repeat_n(1.0, k));
        BSpline {
            degree: k,
            knots,
            ctrl,
        }
    }

    fn derivative(&self) -> Self {
        let k = self.degree;
        if k == 0 {
            return BSpline {
                degree: 0,
                knots: self.knots.clone(),
                ctrl: vec![Vector3::zeros(); self.ctrl.len()],
            };
        }
        let ctrl = self
            .ctrl
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let span = self.knots[i + k + 1] - self.knots[i + 1];
                if span > 0.0 {
                    (w[1] - w[0]) * (k as f64 / span)
                } else {
                    Vector3::zeros()
                }
            })
            .collect();
        BSpline {
            degree: k - 1,
            knots: self.knots[1..self.knots.len() - 1].to_vec(),
            ctrl,
        }
    }

    fn with_derivatives(self) -> [BSpline; 5] {
        let d1 = self.derivative();
        let d2 = d1.derivative();
        let d3 = d2.derivative();
        let d4 = d3.derivative();
        [self, d1, d2, d3, d4]
    }

    /// de Boor evaluation.
    fn eval(&self, u: f64) -> Vector3<f64> {
        let k = self.degree;
        let n = self.ctrl.len();
        let u = u.clamp(0.0, 1.0);
        // knot span index: knots[span] <= u < knots[span + 1], k <= span < n
        let mut span = k;
        while span + 1 < n && self.knots[span + 1] <= u {
            span += 1;
        }
        let mut d: Vec<Vector3<f64>> = (0..=k).map(|j| self.ctrl[j + span - k]).collect();
        for r in 1..=k {
            for j in (r..=k).rev() {
                let i = j + span - k;
                let denom = self.knots[i + k + 1 - r] - self.knots[i];
                let alpha = if denom > 0.0 {
                    (u - self.knots[i]) / denom
                } else {
                    0.0
                };
                d[j] = d[j - 1] * (1.0 - alpha) + d[j] * alpha;
            }
        }
        d[k]
    }
}

/// Rotation whose third column is the unit specific force `a_r + g_comp` and
/// whose heading follows the yaw `psi`.
pub fn slosh_free_orientation(
    a_r: &Vector3<f64>,
    psi: f64,
    g_comp: &Vector3<f64>,
) -> Result<Matrix3<f64>> {
    let a_g = a_r + g_comp;
    let norm = a_g.norm();
    if !(norm > EPS_ACC) {
        return Err(Error::FreeFall { norm, eps: EPS_ACC });
    }
    let z = a_g / norm;
    let x_tilde = Vector3::new(psi.cos(), psi.sin(), 0.0);
    let y = z.cross(&x_tilde);
    let cross = y.norm();
    if !(cross > EPS_CROSS) {
        return Err(Error::Gimbal {
            norm: cross,
            eps: EPS_CROSS,
        });
    }
    let y = y / cross;
    let x = y.cross(&z);
    Ok(Matrix3::from_columns(&[x, y, z]))
}

/// Pose reference `(p_r, R_r)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SloshFreePose {
    pub p: Vector3<f64>,
    pub r: Matrix3<f64>,
}

/// Result of sampling the pose reference; `degenerate` is set when the
/// orientation was held from `previous` because the flatness map was singular.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseReference {
    pub pose: SloshFreePose,
    pub sample: ReferenceSample,
    pub degenerate: bool,
}

pub fn slosh_free_reference(
    traj: &Trajectory,
    t: f64,
    psi: f64,
    g_comp: &Vector3<f64>,
    previous: Option<&Matrix3<f64>>,
) -> Result<PoseReference> {
    let sample = traj.eval(t)?;
    let (r, degenerate) = match slosh_free_orientation(&sample.a, psi, g_comp) {
        Ok(r) => (r, false),
        Err(Error::FreeFall { .. } | Error::Gimbal { .. }) => {
            (previous.copied().unwrap_or_else(Matrix3::identity), true)
        }
        Err(e) => return Err(e),
    };
    Ok(PoseReference {
        pose: SloshFreePose { p: sample.p, r },
        sample,
        degenerate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3;
    use approx::assert_relative_eq;

    #[test]
    fn time_scaling_boundaries() {
        assert_eq!(time_scaling(2.0, 0.0).unwrap(), [0.0; 5]);
        let end = time_scaling(2.0, 2.0).unwrap();
        assert_relative_eq!(end[0], 1.0, epsilon = 1e-12);
        for d in &end[1..] {
            assert!(d.abs() < 1e-9, "{end:?}");
        }
        assert_relative_eq!(time_scaling(3.0, 1.5).unwrap()[0], 0.5, epsilon = 1e-15);
        assert!(matches!(
            time_scaling(0.0, 0.0),
            Err(Error::NonPositiveDuration(_))
        ));
        assert!(time_scaling(1.0, 1.5).is_err());
    }

    #[test]
    fn time_scaling_matches_closed_form_rate() {
        // ds/dtau = 630 tau^4 (1 - tau)^4
        for i in 0..=20 {
            let tau = i as f64 / 20.0;
            let got = time_scaling(1.0, tau).unwrap()[1];
            assert_relative_eq!(
                got,
                630.0 * tau.powi(4) * (1.0 - tau).powi(4),
                epsilon = 1e-11
            );
        }
    }

    #[test]
    fn time_scaling_is_monotone() {
        let mut last = 0.0;
        for i in 1..1000 {
            let s = time_scaling(5.0, 5.0 * i as f64 / 1000.0).unwrap();
            assert!(s[0] > last && s[1] > 0.0);
            last = s[0];
        }
    }

    #[test]
    fn rest_start_for_every_shape() {
        for shape in [
            Shape::default_loop(),
            Shape::default_lissajous(),
            Shape::default_helix(),
        ] {
            let traj = Trajectory::new(TrajectorySpec::new(shape, 4.0)).unwrap();
            for t in [traj.t0(), traj.tf()] {
                let s = traj.eval(t).unwrap();
                assert!(
                    s.v.norm() < 1e-12 && s.a.norm() < 1e-9 && s.j.norm() < 1e-6,
                    "{s:?}"
                );
            }
            assert!(traj.eval(4.1).is_err());
        }
    }

    #[test]
    fn flat_helix_stays_at_center_height() {
        let shape = Shape::Helix {
            radius: 0.2,
            turns: 2.0,
            height: 0.0,
        };
        let traj = Trajectory::new(TrajectorySpec::new(shape, 3.0)).unwrap();
        for i in 0..=300 {
            let s = traj.eval(i as f64 * 0.01).unwrap();
            assert_eq!(s.p.z, DEFAULT_CENTER[2]);
        }
    }

    #[test]
    fn loop_closes_on_itself() {
        let traj = Trajectory::new(TrajectorySpec::new(Shape::default_loop(), 6.0)).unwrap();
        let a = traj.eval(0.0).unwrap().p;
        let b = traj.eval(6.0).unwrap().p;
        assert_relative_eq!(a, b, epsilon = 1e-12);
        let mid = traj.eval(3.0).unwrap().p;
        assert_relative_eq!((mid - traj.center()).norm(), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn spline_of_collinear_points_is_straight() {
        let pts: Vec<[f64; 3]> = (0..8).map(|i| [0.0, 0.0, -0.05 * i as f64]).collect();
        let traj = Trajectory::new(TrajectorySpec::new(
            Shape::Sampled {
                control_points: pts,
            },
            2.0,
        ))
        .unwrap();
        let start = traj.eval(0.0).unwrap().p;
        let end = traj.eval(2.0).unwrap().p;
        assert_relative_eq!(start, traj.center(), epsilon = 1e-12);
        assert_relative_eq!(
            end,
            traj.center() + Vector3::new(0.0, 0.0, -0.35),
            epsilon = 1e-12
        );
        let mid = traj.eval(0.7).unwrap();
        assert!(mid.p.x.abs() < 0.45 + 1e-12 && mid.a.x == 0.0 && mid.a.y == 0.0);
        let few = Shape::Sampled {
            control_points: vec![[0.0; 3]; 5],
        };
        assert!(Trajectory::new(TrajectorySpec::new(few, 1.0)).is_err());
    }

    #[test]
    fn hover_is_identity() {
        let r = slosh_free_orientation(&Vector3::zeros(), 0.0, &G_COMP).unwrap();
        assert_eq!(r, Matrix3::identity());
    }

    #[test]
    fn lateral_acceleration_tilts_by_45_degrees() {
        let r = slosh_free_orientation(&Vector3::new(9.81, 0.0, 0.0), 0.0, &G_COMP).unwrap();
        let h = 0.5f64.sqrt();
        assert_relative_eq!(
            r.column(0).into_owned(),
            Vector3::new(h, 0.0, -h),
            epsilon = 1e-15
        );
        assert_relative_eq!(
            r.column(1).into_owned(),
            Vector3::new(0.0, 1.0, 0.0),
            epsilon = 1e-15
        );
        assert_relative_eq!(
            r.column(2).into_owned(),
            Vector3::new(h, 0.0, h),
            epsilon = 1e-15
        );
        assert_relative_eq!(r, so3::rot_y(std::f64::consts::FRAC_PI_4), epsilon = 1e-15);
    }

    #[test]
    fn degeneracies_are_reported() {
        let free_fall = slosh_free_orientation(&Vector3::new(0.0, 0.0, -9.81), 0.0, &G_COMP);
        assert!(matches!(free_fall, Err(Error::FreeFall { .. })));
        // thrust along +x and heading along +x
        let gimbal = slosh_free_orientation(&Vector3::new(1.0, 0.0, -9.81), 0.0, &G_COMP);
        assert!(matches!(gimbal, Err(Error::Gimbal { .. })));
        assert!(slosh_free_orientation(&Vector3::new(1.0, 0.0, -9.81), 1.0, &G_COMP).is_ok());
    }

    #[test]
    fn reference_starts_upright() {
        let traj = Trajectory::new(TrajectorySpec::new(Shape::default_lissajous(), 4.5)).unwrap();
        let r = slosh_free_reference(&traj, 0.0, 0.0, &G_COMP, None).unwrap();
        assert!(!r.degenerate);
        assert_eq!(r.pose.r, Matrix3::identity());
    }
}
