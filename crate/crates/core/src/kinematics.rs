//! Control spaces of a four-wheel independent drive and steering vehicle and
//! the maps between them.
//!
//! Four spaces are involved:
//!
//! * [`Control3`]: planar twist of the vehicle center `[v_x, v_y, omega]`.
//! * [`Control4`]: diagonal wheel pair commands `[v_fl, v_rr, delta_fl, delta_rr]`.
//! * [`WheelVelocities8`]: planar velocity of every wheel contact point.
//! * [`VehicleCommand8`]: steering angle and signed drive speed per wheel.
//!
//! Wheel order everywhere is front-left, front-right, rear-left, rear-right.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::DMatrix;
use thiserror::Error;

/// Wheel index constants in the canonical fl, fr, rl, rr order.
pub const FL: usize = 0;
pub const FR: usize = 1;
pub const RL: usize = 2;
pub const RR: usize = 3;

/// Wheel planar speeds at or below this magnitude are treated as zero.
pub const SINGULAR_SPEED: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("invalid vehicle geometry: {0}")]
    InvalidGeometry(String),
    #[error("operating point has dimension {got}, expected {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("projection is not differentiable here: wheel {wheel} speed {speed:.3e} is below {eps:.1e}")]
    NonDifferentiable { wheel: usize, speed: f64, eps: f64 },
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    if angle > -PI && angle <= PI {
        return angle;
    }
    let a = angle.rem_euclid(2.0 * PI);
    if a > PI {
        a - 2.0 * PI
    } else {
        a
    }
}

/// Wheel offsets from the vehicle center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleGeometry {
    /// Front axle to center [m].
    pub l_f: f64,
    /// Rear axle to center [m].
    pub l_r: f64,
    /// Left wheels to center [m].
    pub d_l: f64,
    /// Right wheels to center [m].
    pub d_r: f64,
}

impl VehicleGeometry {
    pub fn new(l_f: f64, l_r: f64, d_l: f64, d_r: f64) -> Result<Self, KinematicsError> {
        let geom = Self { l_f, l_r, d_l, d_r };
        geom.validate()?;
        Ok(geom)
    }

    /// All four offsets equal.
    pub fn square(half: f64) -> Result<Self, KinematicsError> {
        Self::new(half, half, half, half)
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        for (name, v) in [("l_f", self.l_f), ("l_r", self.l_r), ("d_l", self.d_l), ("d_r", self.d_r)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(KinematicsError::InvalidGeometry(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    /// Radius of the smallest center-anchored disc covering all four wheels.
    pub fn circumscribed_radius(&self) -> f64 {
        let lf = self.l_f.max(self.l_r);
        let dl = self.d_l.max(self.d_r);
        lf.hypot(dl)
    }

    /// Per-wheel lever arms `(a, b)` such that the wheel velocity is
    /// `(v_x + a * omega, v_y + b * omega)`.
    fn lever_arms(&self) -> [(f64, f64); 4] {
        [
            (-self.d_l, self.l_f),
            (self.d_r, self.l_f),
            (-self.d_l, -self.l_r),
            (self.d_r, -self.l_r),
        ]
    }

    /// The 8x3 matrix mapping a center twist onto wheel velocities, rows
    /// ordered `[vx_fl, vx_fr, vx_rl, vx_rr, vy_fl, vy_fr, vy_rl, vy_rr]`.
    pub fn expansion_matrix(&self) -> DMatrix<f64> {
        let arms = self.lever_arms();
        let mut m = DMatrix::zeros(8, 3);
        for (w, (a, b)) in arms.iter().enumerate() {
            m[(w, 0)] = 1.0;
            m[(w, 2)] = *a;
            m[(4 + w, 1)] = 1.0;
            m[(4 + w, 2)] = *b;
        }
        m
    }
}

impl Default for VehicleGeometry {
    fn default() -> Self {
        Self {
            l_f: 0.5,
            l_r: 0.5,
            d_l: 0.5,
            d_r: 0.5,
        }
    }
}

/// Actuation limits shared by every control space.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlLimits {
    /// Maximum center or wheel speed [m/s].
    pub v_max: f64,
    /// Maximum yaw rate [rad/s].
    pub omega_max: f64,
    /// Maximum steering angle magnitude [rad].
    pub steer_max: f64,
}

impl Default for ControlLimits {
    fn default() -> Self {
        Self {
            v_max: 2.0,
            omega_max: 1.58,
            steer_max: 1.58,
        }
    }
}

/// Center twist in the body frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Control3 {
    pub v_x: f64,
    pub v_y: f64,
    pub omega: f64,
}

impl Control3 {
    pub const fn new(v_x: f64, v_y: f64, omega: f64) -> Self {
        Self { v_x, v_y, omega }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.v_x, self.v_y, self.omega]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn clamped(self, limits: &ControlLimits) -> Self {
        Self {
            v_x: self.v_x.clamp(-limits.v_max, limits.v_max),
            v_y: self.v_y.clamp(-limits.v_max, limits.v_max),
            omega: self.omega.clamp(-limits.omega_max, limits.omega_max),
        }
    }

    /// Translational speed of the vehicle center.
    pub fn speed(&self) -> f64 {
        self.v_x.hypot(self.v_y)
    }
}

/// Commands for the front-left / rear-right wheel pair.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Control4 {
    pub v_fl: f64,
    pub v_rr: f64,
    pub delta_fl: f64,
    pub delta_rr: f64,
}

impl Control4 {
    pub const fn new(v_fl: f64, v_rr: f64, delta_fl: f64, delta_rr: f64) -> Self {
        Self {
            v_fl,
            v_rr,
            delta_fl,
            delta_rr,
        }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.v_fl, self.v_rr, self.delta_fl, self.delta_rr]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn clamped(self, limits: &ControlLimits) -> Self {
        Self {
            v_fl: self.v_fl.clamp(-limits.v_max, limits.v_max),
            v_rr: self.v_rr.clamp(-limits.v_max, limits.v_max),
            delta_fl: self.delta_fl.clamp(-limits.steer_max, limits.steer_max),
            delta_rr: self.delta_rr.clamp(-limits.steer_max, limits.steer_max),
        }
    }

    /// Picks the fl and rr entries out of a full vehicle command.
    pub fn from_command(cmd: &VehicleCommand8) -> Self {
        Self::new(cmd.speed[FL], cmd.speed[RR], cmd.steer[FL], cmd.steer[RR])
    }
}

/// Planar velocity of each wheel.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct WheelVelocities8 {
    pub vx: [f64; 4],
    pub vy: [f64; 4],
}

impl WheelVelocities8 {
    /// `[vx_fl, vx_fr, vx_rl, vx_rr, vy_fl, vy_fr, vy_rl, vy_rr]`.
    pub fn to_array(self) -> [f64; 8] {
        let mut out = [0.0; 8];
        out[..4].copy_from_slice(&self.vx);
        out[4..].copy_from_slice(&self.vy);
        out
    }
}

/// Steering angle and signed drive speed for every wheel.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleCommand8 {
    pub steer: [f64; 4],
    pub speed: [f64; 4],
}

impl VehicleCommand8 {
    /// `[delta_fl, delta_fr, delta_rl, delta_rr, v_fl, v_fr, v_rl, v_rr]`.
    pub fn to_array(self) -> [f64; 8] {
        let mut out = [0.0; 8];
        out[..4].copy_from_slice(&self.steer);
        out[4..].copy_from_slice(&self.speed);
        out
    }

    pub fn from_array(a: [f64; 8]) -> Self {
        let mut cmd = Self::default();
        cmd.steer.copy_from_slice(&a[..4]);
        cmd.speed.copy_from_slice(&a[4..]);
        cmd
    }

    /// Euclidean distance between two commands in the 8-dimensional space.
    pub fn distance(&self, other: &Self) -> f64 {
        let mut acc = 0.0;
        for w in 0..4 {
            let ds = self.steer[w] - other.steer[w];
            let dv = self.speed[w] - other.speed[w];
            acc += ds * ds + dv * dv;
        }
        acc.sqrt()
    }

    /// The wheel velocities this command realizes.
    pub fn wheel_velocities(&self) -> WheelVelocities8 {
        let mut out = WheelVelocities8::default();
        for w in 0..4 {
            let (s, c) = self.steer[w].sin_cos();
            out.vx[w] = self.speed[w] * c;
            out.vy[w] = self.speed[w] * s;
        }
        out
    }

    /// The center twist implied by the fl/rr wheel pair of this command.
    pub fn implied_control3(&self, geom: &VehicleGeometry) -> Control3 {
        reduce_4_to_3(expand_4(Control4::from_command(self)), geom)
    }

    pub fn is_finite(&self) -> bool {
        self.steer.iter().chain(self.speed.iter()).all(|v| v.is_finite())
    }
}

/// SE(2) pose of the vehicle center.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
}

impl Pose2 {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }

    pub fn distance(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    /// Absolute wrapped heading difference.
    pub fn heading_error(&self, other: &Pose2) -> f64 {
        wrap_angle(self.theta - other.theta).abs()
    }
}

/// Maps a center twist onto the planar velocity of each wheel.
pub fn expand_3_to_8(u3: Control3, geom: &VehicleGeometry) -> WheelVelocities8 {
    let mut out = WheelVelocities8::default();
    for (w, (a, b)) in geom.lever_arms().iter().enumerate() {
        out.vx[w] = u3.v_x + a * u3.omega;
        out.vy[w] = u3.v_y + b * u3.omega;
    }
    out
}

/// Converts one wheel's planar velocity into `(steer, signed speed)` with the
/// steering angle folded into `(-pi/2, pi/2]`.
///
/// A zero velocity keeps `prev_steer` and returns zero speed.
pub fn wheel_command(vx: f64, vy: f64, prev_steer: f64) -> (f64, f64) {
    let mag = (vx * vx + vy * vy).sqrt();
    if mag <= SINGULAR_SPEED {
        return (prev_steer, 0.0);
    }
    let angle = vy.atan2(vx);
    if angle > FRAC_PI_2 {
        (angle - PI, -mag)
    } else if angle <= -FRAC_PI_2 {
        (angle + PI, -mag)
    } else {
        (angle, mag)
    }
}

/// Nonlinear projection from wheel velocities to steering/speed commands.
pub fn project_to_command(u8: &WheelVelocities8, prev: &VehicleCommand8) -> VehicleCommand8 {
    let mut cmd = VehicleCommand8::default();
    for w in 0..4 {
        let (steer, speed) = wheel_command(u8.vx[w], u8.vy[w], prev.steer[w]);
        cmd.steer[w] = steer;
        cmd.speed[w] = speed;
    }
    cmd
}

/// Wheel pair velocities `[vx_fl, vx_rr, vy_fl, vy_rr]` of a [`Control4`].
pub fn expand_4(u4: Control4) -> [f64; 4] {
    let (s_fl, c_fl) = u4.delta_fl.sin_cos();
    let (s_rr, c_rr) = u4.delta_rr.sin_cos();
    [u4.v_fl * c_fl, u4.v_rr * c_rr, u4.v_fl * s_fl, u4.v_rr * s_rr]
}

/// Recovers a center twist from the fl/rr wheel velocity pair.
///
/// Translation is the geometry-weighted mean of the two wheels. Yaw rate is
/// the average of the estimate from the x-velocity difference and the
/// estimate from the y-velocity difference, so any pair produced by
/// [`expand_3_to_8`] maps back to the twist it came from.
pub fn reduce_4_to_3(u4p: [f64; 4], geom: &VehicleGeometry) -> Control3 {
    let [vx_fl, vx_rr, vy_fl, vy_rr] = u4p;
    let width = geom.d_l + geom.d_r;
    let length = geom.l_f + geom.l_r;
    Control3 {
        v_x: (geom.d_r * vx_fl + geom.d_l * vx_rr) / width,
        v_y: (geom.l_r * vy_fl + geom.l_f * vy_rr) / length,
        omega: 0.5 * ((vx_rr - vx_fl) / width + (vy_fl - vy_rr) / length),
    }
}

/// Full 4DoF to vehicle command chain. Every wheel of the result is
/// consistent with a single center twist.
pub fn compose_4_to_command(
    u4: Control4,
    geom: &VehicleGeometry,
    prev: &VehicleCommand8,
) -> VehicleCommand8 {
    let u3 = reduce_4_to_3(expand_4(u4), geom);
    project_to_command(&expand_3_to_8(u3, geom), prev)
}

/// Center twist to vehicle command.
pub fn control3_to_command(
    u3: Control3,
    geom: &VehicleGeometry,
    prev: &VehicleCommand8,
) -> VehicleCommand8 {
    project_to_command(&expand_3_to_8(u3, geom), prev)
}

/// Constant-twist motion over `dt` with body-frame velocities.
pub fn propagate(state: &Pose2, u3: &Control3, dt: f64) -> Pose2 {
    let dtheta = u3.omega * dt;
    let (dx_body, dy_body) = if dtheta.abs() < 1e-9 {
        (u3.v_x * dt, u3.v_y * dt)
    } else {
        let (s, c) = dtheta.sin_cos();
        let w = u3.omega;
        (
            (u3.v_x * s + u3.v_y * (c - 1.0)) / w,
            (u3.v_x * (1.0 - c) + u3.v_y * s) / w,
        )
    };
    let (s0, c0) = state.theta.sin_cos();
    Pose2 {
        x: state.x + c0 * dx_body - s0 * dy_body,
        y: state.y + s0 * dx_body + c0 * dy_body,
        theta: wrap_angle(state.theta + dtheta),
    }
}

/// A sampling space for the controller.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ControlSpace {
    /// `[v_x, v_y, omega]`.
    ThreeDof,
    /// `[v_fl, v_rr, delta_fl, delta_rr]`.
    FourDof,
}

impl ControlSpace {
    pub fn dim(self) -> usize {
        match self {
            ControlSpace::ThreeDof => 3,
            ControlSpace::FourDof => 4,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ControlSpace::ThreeDof => "3dof",
            ControlSpace::FourDof => "4dof",
        }
    }

    /// Center twist realized by a control vector of this space, clamped to
    /// the limits.
    pub fn to_control3(self, u: &[f64], geom: &VehicleGeometry, limits: &ControlLimits) -> Control3 {
        match self {
            ControlSpace::ThreeDof => Control3::from_slice(u).clamped(limits),
            ControlSpace::FourDof => {
                reduce_4_to_3(expand_4(Control4::from_slice(u)), geom).clamped(limits)
            }
        }
    }

    /// Unclamped projection of a control vector to the vehicle command space.
    pub fn to_command(self, u: &[f64], geom: &VehicleGeometry, prev: &VehicleCommand8) -> VehicleCommand8 {
        match self {
            ControlSpace::ThreeDof => control3_to_command(Control3::from_slice(u), geom, prev),
            ControlSpace::FourDof => compose_4_to_command(Control4::from_slice(u), geom, prev),
        }
    }
}

/// Finite-difference Jacobian of a space-to-command projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionJacobian {
    pub space: ControlSpace,
    /// 8 x n, rows in [`VehicleCommand8::to_array`] order.
    pub raw: DMatrix<f64>,
}

impl ProjectionJacobian {
    /// Copy scaled so the largest absolute entry is 1.
    pub fn normalized(&self) -> DMatrix<f64> {
        let max = self.raw.amax();
        if max > 0.0 {
            &self.raw / max
        } else {
            self.raw.clone()
        }
    }

    /// Number of normalized entries with magnitude below `threshold`.
    pub fn near_zero_count(&self, threshold: f64) -> usize {
        self.normalized().iter().filter(|v| v.abs() < threshold).count()
    }
}

/// Default central-difference step.
pub const JACOBIAN_STEP: f64 = 1e-6;

/// Minimum wheel speed for a differentiable operating point.
pub const JACOBIAN_MIN_SPEED: f64 = 1e-6;

/// Central-difference Jacobian of `space -> VehicleCommand8` at `point`.
pub fn jacobian_of_projection(
    space: ControlSpace,
    point: &[f64],
    geom: &VehicleGeometry,
    step: f64,
) -> Result<ProjectionJacobian, KinematicsError> {
    let n = space.dim();
    if point.len() != n {
        return Err(KinematicsError::DimensionMismatch {
            expected: n,
            got: point.len(),
        });
    }
    let base = space.to_command(point, geom, &VehicleCommand8::default());
    for w in 0..4 {
        if base.speed[w].abs() < JACOBIAN_MIN_SPEED {
            return Err(KinematicsError::NonDifferentiable {
                wheel: w,
                speed: base.speed[w].abs(),
                eps: JACOBIAN_MIN_SPEED,
            });
        }
    }
    let mut raw = DMatrix::zeros(8, n);
    let mut plus = point.to_vec();
    let mut minus = point.to_vec();
    for j in 0..n {
        plus[j] = point[j] + step;
        minus[j] = point[j] - step;
        let hi = space.to_command(&plus, geom, &base).to_array();
        let lo = space.to_command(&minus, geom, &base).to_array();
        for i in 0..8 {
            raw[(i, j)] = (hi[i] - lo[i]) / (2.0 * step);
        }
        plus[j] = point[j];
        minus[j] = point[j];
    }
    Ok(ProjectionJacobian { space, raw })
}

/// Coordinates in `space` of a kinematically consistent vehicle command.
pub fn operating_point(space: ControlSpace, cmd: &VehicleCommand8, geom: &VehicleGeometry) -> Vec<f64> {
    match space {
        ControlSpace::ThreeDof => cmd.implied_control3(geom).to_array().to_vec(),
        ControlSpace::FourDof => Control4::from_command(cmd).to_array().to_vec(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_4, SQRT_2};

    /// The yaw row exactly as typeset in the source derivation. It recovers
    /// only half the yaw rate on consistent inputs.
    fn reduce_4_to_3_as_printed(u4p: [f64; 4], geom: &VehicleGeometry) -> Control3 {
        let [vx_fl, vx_rr, vy_fl, vy_rr] = u4p;
        let width = geom.d_l + geom.d_r;
        let length = geom.l_f + geom.l_r;
        Control3 {
            v_x: (geom.d_r * vx_fl + geom.d_l * vx_rr) / width,
            v_y: (geom.l_r * vy_fl + geom.l_f * vy_rr) / length,
            omega: (-vx_fl + vx_rr) / (2.0 * width),
        }
    }

    fn geom() -> VehicleGeometry {
        VehicleGeometry::default()
    }

    fn assert_close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
        }
    }

    /// Independent 8x3 multiply against the expansion matrix.
    fn matmul_oracle(u: [f64; 3], g: &VehicleGeometry) -> [f64; 8] {
        let m = [
            [1.0, 0.0, -g.d_l],
            [1.0, 0.0, g.d_r],
            [1.0, 0.0, -g.d_l],
            [1.0, 0.0, g.d_r],
            [0.0, 1.0, g.l_f],
            [0.0, 1.0, g.l_f],
            [0.0, 1.0, -g.l_r],
            [0.0, 1.0, -g.l_r],
        ];
        let mut out = [0.0; 8];
        for (i, row) in m.iter().enumerate() {
            out[i] = row.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
        }
        out
    }

    #[test]
    fn geometry_validation() {
        assert!(VehicleGeometry::new(0.5, 0.5, 0.5, 0.5).is_ok());
        assert!(VehicleGeometry::new(0.0, 0.5, 0.5, 0.5).is_err());
        assert!(VehicleGeometry::new(0.5, f64::NAN, 0.5, 0.5).is_err());
        assert!(VehicleGeometry::new(0.5, 0.5, -1.0, 0.5).is_err());
        assert!((geom().circumscribed_radius() - 0.5 * SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn wrap_angle_interval() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-15);
        assert!((wrap_angle(7.0) - (7.0 - 2.0 * PI)).abs() < 1e-15);
        assert_eq!(wrap_angle(0.0), 0.0);
    }

    #[test]
    fn expand_3_to_8_examples() {
        let g = geom();
        let fwd = expand_3_to_8(Control3::new(1.0, 0.0, 0.0), &g);
        assert_eq!(fwd.vx, [1.0; 4]);
        assert_eq!(fwd.vy, [0.0; 4]);

        let spin = expand_3_to_8(Control3::new(0.0, 0.0, 1.0), &g).to_array();
        let oracle = matmul_oracle([0.0, 0.0, 1.0], &g);
        assert_eq!(spin, oracle);
        assert_eq!(spin, [-0.5, 0.5, -0.5, 0.5, 0.5, 0.5, -0.5, -0.5]);

        let side = expand_3_to_8(Control3::new(0.0, 1.0, 0.0), &g);
        assert_eq!(side.vx, [0.0; 4]);
        assert_eq!(side.vy, [1.0; 4]);
    }

    #[test]
    fn expansion_matrix_matches_function() {
        let g = VehicleGeometry::new(0.6, 0.4, 0.3, 0.35).unwrap();
        let u = [0.7, -0.2, 1.1];
        let m = g.expansion_matrix();
        let v = &m * nalgebra::DVector::from_row_slice(&u);
        let f = expand_3_to_8(Control3::new(u[0], u[1], u[2]), &g).to_array();
        let oracle = matmul_oracle(u, &g);
        for i in 0..8 {
            assert!((v[i] - f[i]).abs() < 1e-15);
            assert!((oracle[i] - f[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn projection_examples() {
        let (s, v) = wheel_command(1.0, 1.0, 0.0);
        assert!((s - FRAC_PI_4).abs() < 1e-15);
        assert!((v - SQRT_2).abs() < 1e-15);

        assert_eq!(wheel_command(0.0, 0.0, 0.3), (0.3, 0.0));

        assert_eq!(wheel_command(-1.0, 0.0, 0.0), (0.0, -1.0));
        // negative zero lateral component folds the same way
        assert_eq!(wheel_command(-1.0, -0.0, 0.0), (0.0, -1.0));

        // straight sideways to the right lands on the closed end of the interval
        let (s, v) = wheel_command(0.0, -1.0, 0.0);
        assert!((s - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(v, -1.0);
    }

    #[test]
    fn projection_holds_previous_steer_per_wheel() {
        let prev = VehicleCommand8 {
            steer: [0.1, 0.2, 0.3, 0.4],
            speed: [1.0; 4],
        };
        let cmd = project_to_command(&WheelVelocities8::default(), &prev);
        assert_eq!(cmd.steer, prev.steer);
        assert_eq!(cmd.speed, [0.0; 4]);
    }

    #[test]
    fn expand_4_examples() {
        assert_eq!(expand_4(Control4::new(1.0, 1.0, 0.0, 0.0)), [1.0, 1.0, 0.0, 0.0]);
        assert_close(
            &expand_4(Control4::new(SQRT_2, SQRT_2, FRAC_PI_4, FRAC_PI_4)),
            &[1.0, 1.0, 1.0, 1.0],
            1e-15,
        );
        assert_close(
            &expand_4(Control4::new(1.0, 1.0, FRAC_PI_2, -FRAC_PI_2)),
            &[0.0, 0.0, 1.0, -1.0],
            1e-15,
        );
    }

    #[test]
    fn reduce_4_to_3_examples() {
        let g = geom();
        assert_eq!(reduce_4_to_3([1.0, 1.0, 0.0, 0.0], &g), Control3::new(1.0, 0.0, 0.0));

        // round-trip oracle: the fl/rr entries of a pure spin
        let spin = expand_3_to_8(Control3::new(0.0, 0.0, 1.0), &g);
        let pair = [spin.vx[FL], spin.vx[RR], spin.vy[FL], spin.vy[RR]];
        assert_eq!(pair, [-0.5, 0.5, 0.5, -0.5]);
        assert_eq!(reduce_4_to_3(pair, &g), Control3::new(0.0, 0.0, 1.0));

        let r = reduce_4_to_3([1.0, 1.0, 0.2, 0.2], &g);
        assert_close(&r.to_array(), &[1.0, 0.2, 0.0], 1e-15);
    }

    #[test]
    fn printed_yaw_row_halves_the_yaw_rate() {
        let g = geom();
        let spin = expand_3_to_8(Control3::new(0.0, 0.0, 1.0), &g);
        let pair = [spin.vx[FL], spin.vx[RR], spin.vy[FL], spin.vy[RR]];
        let printed = reduce_4_to_3_as_printed(pair, &g);
        assert!((printed.omega - 0.5).abs() < 1e-15);
        assert!((reduce_4_to_3(pair, &g).omega - 1.0).abs() < 1e-15);
    }

    #[test]
    fn compose_examples() {
        let g = geom();
        let zero = VehicleCommand8::default();
        let straight = compose_4_to_command(Control4::new(1.0, 1.0, 0.0, 0.0), &g, &zero);
        assert_eq!(straight.steer, [0.0; 4]);
        assert_eq!(straight.speed, [1.0; 4]);

        let prev = VehicleCommand8 {
            steer: [0.1, -0.2, 0.3, -0.4],
            speed: [0.0; 4],
        };
        let stopped = compose_4_to_command(Control4::new(0.0, 0.0, 0.5, -0.5), &g, &prev);
        assert_eq!(stopped.speed, [0.0; 4]);
        assert_eq!(stopped.steer, prev.steer);

        // staged oracle for a consistent-but-steered input
        let u4 = Control4::new(1.0, 1.0, 0.3, 0.3);
        let pair = [0.3f64.cos(), 0.3f64.cos(), 0.3f64.sin(), 0.3f64.sin()];
        let u3 = reduce_4_to_3(pair, &g);
        assert!(u3.omega.abs() < 1e-15);
        let cmd = compose_4_to_command(u4, &g, &zero);
        for w in 0..4 {
            assert!((cmd.steer[w] - 0.3).abs() < 1e-12);
            assert!((cmd.speed[w] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn compose_output_lies_in_twist_image() {
        let g = VehicleGeometry::new(0.55, 0.45, 0.4, 0.5).unwrap();
        let zero = VehicleCommand8::default();
        let cmd = compose_4_to_command(Control4::new(1.2, -0.4, 0.7, -1.1), &g, &zero);
        let u3 = cmd.implied_control3(&g);
        let again = control3_to_command(u3, &g, &zero);
        let w1 = cmd.wheel_velocities().to_array();
        let w2 = again.wheel_velocities().to_array();
        assert_close(&w1, &w2, 1e-12);
    }

    #[test]
    fn propagate_examples() {
        let origin = Pose2::default();
        let p = propagate(&origin, &Control3::new(1.0, 0.0, 0.0), 1.0);
        assert_eq!((p.x, p.y, p.theta), (1.0, 0.0, 0.0));

        let p = propagate(&origin, &Control3::new(0.0, 0.0, FRAC_PI_2), 1.0);
        assert_close(&[p.x, p.y, p.theta], &[0.0, 0.0, FRAC_PI_2], 1e-15);

        let p = propagate(&origin, &Control3::new(1.0, 0.0, FRAC_PI_2), 1.0);
        let r = 2.0 / PI;
        assert_close(&[p.x, p.y, p.theta], &[r, r, FRAC_PI_2], 1e-15);
    }

    fn euler_substeps(state: &Pose2, u: &Control3, dt: f64, n: usize) -> Pose2 {
        let h = dt / n as f64;
        let (mut x, mut y, mut th) = (state.x, state.y, state.theta);
        for _ in 0..n {
            let (s, c) = th.sin_cos();
            x += (c * u.v_x - s * u.v_y) * h;
            y += (s * u.v_x + c * u.v_y) * h;
            th += u.omega * h;
        }
        Pose2::new(x, y, th)
    }

    #[test]
    fn propagate_arc_matches_fine_euler() {
        let start = Pose2::new(0.0, 0.0, 0.0);
        let u = Control3::new(1.0, 0.0, FRAC_PI_2);
        let exact = propagate(&start, &u, 1.0);
        let euler = euler_substeps(&start, &u, 1.0, 1 << 16);
        assert!((exact.x - euler.x).abs() < 1e-4);
        assert!((exact.y - euler.y).abs() < 1e-4);
    }

    #[test]
    fn propagate_rewraps_heading() {
        let p = propagate(&Pose2::new(0.0, 0.0, 3.0), &Control3::new(0.0, 0.0, 1.0), 1.0);
        assert!((p.theta - (4.0 - 2.0 * PI)).abs() < 1e-12);
    }

    #[test]
    fn jacobian_identity_entry() {
        let g = geom();
        let j = jacobian_of_projection(ControlSpace::ThreeDof, &[1.0, 0.0, 0.0], &g, JACOBIAN_STEP).unwrap();
        // row 4 is V_fl, column 0 is v_x
        assert!((j.raw[(4, 0)] - 1.0).abs() < 1e-8);
        // all four wheel-speed rows respond identically to v_x
        for w in 4..8 {
            assert!((j.raw[(w, 0)] - j.raw[(4, 0)]).abs() < 1e-8);
        }
        // step sweep
        for h in [1e-3, 1e-4, 1e-5] {
            let jh = jacobian_of_projection(ControlSpace::ThreeDof, &[1.0, 0.0, 0.0], &g, h).unwrap();
            assert!((jh.raw[(4, 0)] - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn jacobian_rejects_singular_points() {
        let g = geom();
        let err = jacobian_of_projection(ControlSpace::ThreeDof, &[0.0, 0.0, 0.0], &g, JACOBIAN_STEP);
        assert!(matches!(err, Err(KinematicsError::NonDifferentiable { .. })));
        let err = jacobian_of_projection(ControlSpace::FourDof, &[1.0, 0.0], &g, JACOBIAN_STEP);
        assert!(matches!(err, Err(KinematicsError::DimensionMismatch { expected: 4, got: 2 })));
    }

    #[test]
    fn four_dof_jacobian_is_sparser_at_diagonal_point() {
        let g = geom();
        let cmd = VehicleCommand8 {
            steer: [FRAC_PI_4; 4],
            speed: [0.7; 4],
        };
        let j3 = jacobian_of_projection(
            ControlSpace::ThreeDof,
            &operating_point(ControlSpace::ThreeDof, &cmd, &g),
            &g,
            JACOBIAN_STEP,
        )
        .unwrap();
        let j4 = jacobian_of_projection(
            ControlSpace::FourDof,
            &operating_point(ControlSpace::FourDof, &cmd, &g),
            &g,
            JACOBIAN_STEP,
        )
        .unwrap();
        assert!(j4.near_zero_count(0.05) > j3.near_zero_count(0.05));
    }

    #[test]
    fn clamping() {
        let l = ControlLimits::default();
        let c = Control3::new(3.0, -3.0, 2.0).clamped(&l);
        assert_eq!(c, Control3::new(2.0, -2.0, 1.58));
        let c = Control4::new(-5.0, 1.0, 2.0, -2.0).clamped(&l);
        assert_eq!(c, Control4::new(-2.0, 1.0, 1.58, -1.58));
    }
}
