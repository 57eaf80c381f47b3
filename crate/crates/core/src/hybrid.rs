//! Switching between the twist and wheel-pair sampling spaces.
//!
//! Both warm starts are kept current: after every solve the fresh sequence is
//! converted into the other space.

use crate::kinematics::{
    expand_3_to_8, expand_4, project_to_command, reduce_4_to_3, Control3, Control4, ControlLimits, ControlSpace,
    Pose2, VehicleCommand8, VehicleGeometry,
};
use crate::mppi::{ControlSequence, CostWeights, MppiConfig, MppiError, MppiSolver, Scene, StepDiagnostics};

/// Which twist-space variance set the hybrid pairs with the 4DoF space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ThreeDofVariant {
    #[default]
    A,
    B,
}

impl ThreeDofVariant {
    pub fn config(self) -> MppiConfig {
        match self {
            ThreeDofVariant::A => MppiConfig::mppi3a(),
            ThreeDofVariant::B => MppiConfig::mppi3b(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridConfig {
    /// Path distance below which the twist space is used [m].
    pub d_thresh: f64,
    /// Heading error below which the twist space is used [rad].
    pub theta_thresh: f64,
    pub variant: ThreeDofVariant,
    /// Extra margin required to leave the 4DoF mode; 0 disables hysteresis.
    pub hysteresis: f64,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            d_thresh: 0.3,
            theta_thresh: 0.3,
            variant: ThreeDofVariant::A,
            hysteresis: 0.0,
        }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<(), MppiError> {
        if !(self.d_thresh >= 0.0 && self.theta_thresh >= 0.0) {
            return Err(MppiError::Config("switching thresholds must be non-negative".into()));
        }
        if !(self.hysteresis >= 0.0 && self.hysteresis.is_finite()) {
            return Err(MppiError::Config("hysteresis must be non-negative".into()));
        }
        Ok(())
    }
}

/// Twist space while tracking well, wheel-pair space otherwise.
pub fn select_mode(dist_err: f64, angle_err: f64, cfg: &HybridConfig) -> ControlSpace {
    if dist_err < cfg.d_thresh && angle_err < cfg.theta_thresh {
        ControlSpace::ThreeDof
    } else {
        ControlSpace::FourDof
    }
}

/// [`select_mode`] with a band that must be cleared before returning to the
/// twist space.
pub fn select_mode_with_hysteresis(
    dist_err: f64,
    angle_err: f64,
    current: ControlSpace,
    cfg: &HybridConfig,
) -> ControlSpace {
    let h = match current {
        ControlSpace::FourDof => cfg.hysteresis,
        ControlSpace::ThreeDof => 0.0,
    };
    if dist_err < cfg.d_thresh - h && angle_err < cfg.theta_thresh - h {
        ControlSpace::ThreeDof
    } else {
        ControlSpace::FourDof
    }
}

fn expect_space(u: &ControlSequence, space: ControlSpace) -> Result<(), MppiError> {
    if u.space() != space {
        return Err(MppiError::Dimension(format!(
            "expected a {} sequence, got {}",
            space.label(),
            u.space().label()
        )));
    }
    Ok(())
}

/// Twist rows to wheel-pair rows. Rows with a stopped wheel keep the
/// previous row's steering (zero for the first row). No clamping.
pub fn convert_3_to_4(u3: &ControlSequence, geom: &VehicleGeometry) -> Result<ControlSequence, MppiError> {
    expect_space(u3, ControlSpace::ThreeDof)?;
    let mut prev = VehicleCommand8::default();
    let mut data = Vec::with_capacity(u3.horizon() * 4);
    for row in u3.rows() {
        let cmd = project_to_command(&expand_3_to_8(Control3::from_slice(row), geom), &prev);
        data.extend_from_slice(&Control4::from_command(&cmd).to_array());
        prev = cmd;
    }
    ControlSequence::from_flat(ControlSpace::FourDof, data)
}

/// Wheel-pair rows to twist rows, clamped to the limits.
pub fn convert_4_to_3(
    u4: &ControlSequence,
    geom: &VehicleGeometry,
    limits: &ControlLimits,
) -> Result<ControlSequence, MppiError> {
    expect_space(u4, ControlSpace::FourDof)?;
    let mut data = Vec::with_capacity(u4.horizon() * 3);
    for row in u4.rows() {
        let u = reduce_4_to_3(expand_4(Control4::from_slice(row)), geom).clamped(limits);
        data.extend_from_slice(&u.to_array());
    }
    ControlSequence::from_flat(ControlSpace::ThreeDof, data)
}

/// Result of one control tick.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub command: VehicleCommand8,
    pub mode: ControlSpace,
    pub diagnostics: StepDiagnostics,
}

/// A receding-horizon controller driven once per control tick.
pub trait Controller: Send {
    fn name(&self) -> &str;

    /// Forgets warm starts and the solve counter.
    fn reset(&mut self);

    fn step(&mut self, x0: &Pose2, scene: &Scene<'_>, prev: &VehicleCommand8) -> Result<ControlOutput, MppiError>;
}

/// MPPI in a single fixed space.
#[derive(Debug)]
pub struct SingleSpaceController {
    name: String,
    solver: MppiSolver,
    warm: ControlSequence,
    iteration: u64,
}

impl SingleSpaceController {
    pub fn new(name: impl Into<String>, solver: MppiSolver) -> Self {
        let warm = solver.initial_sequence();
        Self {
            name: name.into(),
            solver,
            warm,
            iteration: 0,
        }
    }

    pub fn warm_start(&self) -> &ControlSequence {
        &self.warm
    }
}

impl Controller for SingleSpaceController {
    fn name(&self) -> &str {
        &self.name
    }

    fn reset(&mut self) {
        self.warm = self.solver.initial_sequence();
        self.iteration = 0;
    }

    fn step(&mut self, x0: &Pose2, scene: &Scene<'_>, prev: &VehicleCommand8) -> Result<ControlOutput, MppiError> {
        let out = self.solver.step(x0, &self.warm, prev, scene, self.iteration)?;
        self.iteration += 1;
        self.warm = out.next;
        Ok(ControlOutput {
            command: out.command,
            mode: self.solver.space(),
            diagnostics: out.diagnostics,
        })
    }
}

/// Warm starts and mode carried between hybrid ticks.
#[derive(Debug, Clone, PartialEq)]
pub struct HybridState {
    pub u3: ControlSequence,
    pub u4: ControlSequence,
    pub mode: ControlSpace,
    pub iteration: u64,
}

/// One hybrid tick: pick a space from the tracking error, solve there, and
/// refresh the other space's warm start from the result.
pub fn hybrid_step(
    x0: &Pose2,
    state: &HybridState,
    scene: &Scene<'_>,
    prev: &VehicleCommand8,
    solver3: &MppiSolver,
    solver4: &MppiSolver,
    cfg: &HybridConfig,
) -> Result<(ControlOutput, HybridState), MppiError> {
    let err = scene.path.query_errors(x0);
    let mode = select_mode_with_hysteresis(err.dist, err.angle, state.mode, cfg);
    let geom = solver3.geometry();
    let (out, u3, u4) = match mode {
        ControlSpace::ThreeDof => {
            let out = solver3.step(x0, &state.u3, prev, scene, state.iteration)?;
            let mut u4 = convert_3_to_4(&out.next, geom)?;
            u4.clamp_to(&solver4.config().lower, &solver4.config().upper);
            let u3 = out.next.clone();
            (out, u3, u4)
        }
        ControlSpace::FourDof => {
            let out = solver4.step(x0, &state.u4, prev, scene, state.iteration)?;
            let mut u3 = convert_4_to_3(&out.next, geom, solver3.limits())?;
            u3.clamp_to(&solver3.config().lower, &solver3.config().upper);
            let u4 = out.next.clone();
            (out, u3, u4)
        }
    };
    Ok((
        ControlOutput {
            command: out.command,
            mode,
            diagnostics: out.diagnostics,
        },
        HybridState {
            u3,
            u4,
            mode,
            iteration: state.iteration + 1,
        },
    ))
}

/// Mode-switching controller over a twist-space and a wheel-pair solver.
#[derive(Debug)]
pub struct HybridController {
    cfg: HybridConfig,
    solver3: MppiSolver,
    solver4: MppiSolver,
    state: HybridState,
}

impl HybridController {
    pub fn new(cfg: HybridConfig, solver3: MppiSolver, solver4: MppiSolver) -> Result<Self, MppiError> {
        cfg.validate()?;
        if solver3.space() != ControlSpace::ThreeDof || solver4.space() != ControlSpace::FourDof {
            return Err(MppiError::Config("hybrid needs a 3dof and a 4dof solver".into()));
        }
        if solver3.config().horizon != solver4.config().horizon {
            return Err(MppiError::Config("both solvers must share the horizon".into()));
        }
        let state = Self::initial_state(&solver3, &solver4);
        Ok(Self {
            cfg,
            solver3,
            solver4,
            state,
        })
    }

    /// Both solvers built from presets with shared weights, geometry and seed.
    pub fn from_presets(
        cfg: HybridConfig,
        weights: CostWeights,
        geometry: VehicleGeometry,
        limits: ControlLimits,
        adjust: impl Fn(MppiConfig) -> MppiConfig,
    ) -> Result<Self, MppiError> {
        let s3 = MppiSolver::new(adjust(cfg.variant.config().with_limits(&limits)), weights, geometry, limits)?;
        let s4 = MppiSolver::new(adjust(MppiConfig::mppi4().with_limits(&limits)), weights, geometry, limits)?;
        Self::new(cfg, s3, s4)
    }

    fn initial_state(s3: &MppiSolver, s4: &MppiSolver) -> HybridState {
        HybridState {
            u3: s3.initial_sequence(),
            u4: s4.initial_sequence(),
            mode: ControlSpace::ThreeDof,
            iteration: 0,
        }
    }

    pub fn state(&self) -> &HybridState {
        &self.state
    }
}

impl Controller for HybridController {
    fn name(&self) -> &str {
        "hybrid"
    }

    fn reset(&mut self) {
        self.state = Self::initial_state(&self.solver3, &self.solver4);
    }

    fn step(&mut self, x0: &Pose2, scene: &Scene<'_>, prev: &VehicleCommand8) -> Result<ControlOutput, MppiError> {
        let (out, next) = hybrid_step(x0, &self.state, scene, prev, &self.solver3, &self.solver4, &self.cfg)?;
        self.state = next;
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn seq3(rows: &[[f64; 3]]) -> ControlSequence {
        ControlSequence::from_rows(ControlSpace::ThreeDof, &rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
            .unwrap()
    }

    #[test]
    fn mode_examples() {
        let cfg = HybridConfig::default();
        assert_eq!(select_mode(0.1, 0.1, &cfg), ControlSpace::ThreeDof);
        assert_eq!(select_mode(0.5, 0.1, &cfg), ControlSpace::FourDof);
        assert_eq!(select_mode(0.1, 0.5, &cfg), ControlSpace::FourDof);
        assert_eq!(select_mode(0.3, 0.3, &cfg), ControlSpace::FourDof);
    }

    #[test]
    fn hysteresis_band() {
        let cfg = HybridConfig {
            hysteresis: 0.1,
            ..HybridConfig::default()
        };
        assert_eq!(select_mode_with_hysteresis(0.25, 0.0, ControlSpace::ThreeDof, &cfg), ControlSpace::ThreeDof);
        assert_eq!(select_mode_with_hysteresis(0.25, 0.0, ControlSpace::FourDof, &cfg), ControlSpace::FourDof);
        assert_eq!(select_mode_with_hysteresis(0.15, 0.0, ControlSpace::FourDof, &cfg), ControlSpace::ThreeDof);
    }

    #[test]
    fn convert_examples() {
        let g = VehicleGeometry::default();
        let u4 = convert_3_to_4(&seq3(&[[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]), &g).unwrap();
        assert_eq!(u4.row(0), &[1.0, 1.0, 0.0, 0.0]);
        assert_eq!(u4.row(1), &[0.0, 0.0, 0.0, 0.0]);

        // pure rotation: fl wheel moves (-0.5, 0.5), rr wheel (0.5, -0.5)
        let spin = convert_3_to_4(&seq3(&[[0.0, 0.0, 1.0]]), &g).unwrap();
        let r = spin.row(0);
        assert!((r[0] + FRAC_1_SQRT_2).abs() < 1e-12, "{r:?}");
        assert!((r[1] - FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((r[2] + std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        assert!((r[3] + std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        let back = convert_4_to_3(&spin, &g, &ControlLimits::default()).unwrap();
        for (a, b) in back.row(0).iter().zip([0.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }

        let lim = ControlLimits::default();
        let fwd = ControlSequence::from_rows(ControlSpace::FourDof, &[vec![1.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 0.4, 0.4]])
            .unwrap();
        let u3 = convert_4_to_3(&fwd, &g, &lim).unwrap();
        assert_eq!(u3.row(0), &[1.0, 0.0, 0.0]);
        assert_eq!(u3.row(1), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn singular_row_holds_previous_steering() {
        let g = VehicleGeometry::default();
        let u4 = convert_3_to_4(&seq3(&[[0.0, 1.0, 0.0], [0.0, 0.0, 0.0]]), &g).unwrap();
        let half_pi = std::f64::consts::FRAC_PI_2;
        assert_eq!(u4.row(0), &[1.0, 1.0, half_pi, half_pi]);
        assert_eq!(u4.row(1), &[0.0, 0.0, half_pi, half_pi]);
        // first row singular: zero steering
        let z = convert_3_to_4(&seq3(&[[0.0, 0.0, 0.0]]), &g).unwrap();
        assert_eq!(z.row(0), &[0.0; 4]);
    }

    #[test]
    fn wrong_space_rejected() {
        let g = VehicleGeometry::default();
        let u4 = ControlSequence::zeros(ControlSpace::FourDof, 3);
        assert!(matches!(convert_3_to_4(&u4, &g), Err(MppiError::Dimension(_))));
        let u3 = ControlSequence::zeros(ControlSpace::ThreeDof, 3);
        assert!(convert_4_to_3(&u3, &g, &ControlLimits::default()).is_err());
    }
}
