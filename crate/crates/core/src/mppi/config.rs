use crate::kinematics::{ControlLimits, ControlSpace};

use super::MppiError;

/// How the freed last row is filled after shifting the sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TailInit {
    /// Repeat the previous final row.
    #[default]
    CopyLast,
    Zero,
}

/// Solver parameters. Variances are per control dimension (diagonal
/// covariance).
#[derive(Debug, Clone, PartialEq)]
pub struct MppiConfig {
    /// Number of sampled sequences.
    pub samples: usize,
    /// Horizon length in steps.
    pub horizon: usize,
    /// Rollout step [s].
    pub dt: f64,
    /// Fraction of samples drawn around zero instead of the warm start.
    pub alpha: f64,
    /// Temperature.
    pub lambda: f64,
    /// Weight of the control coupling term.
    pub gamma: f64,
    pub sigma: Vec<f64>,
    pub space: ControlSpace,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub seed: u64,
    /// Target speed of the vehicle center [m/s].
    pub v_des: f64,
    pub tail: TailInit,
    /// Rollout threads; 0 uses the global rayon pool.
    pub workers: usize,
}

/// Per-dimension clamp bounds of a space under the given limits.
pub fn space_bounds(space: ControlSpace, limits: &ControlLimits) -> (Vec<f64>, Vec<f64>) {
    let upper = match space {
        ControlSpace::ThreeDof => vec![limits.v_max, limits.v_max, limits.omega_max],
        ControlSpace::FourDof => vec![limits.v_max, limits.v_max, limits.steer_max, limits.steer_max],
    };
    (upper.iter().map(|v| -v).collect(), upper)
}

impl MppiConfig {
    fn common(space: ControlSpace, sigma: Vec<f64>) -> Self {
        let (lower, upper) = space_bounds(space, &ControlLimits::default());
        Self {
            samples: 3000,
            horizon: 30,
            dt: 0.033,
            alpha: 0.1,
            lambda: 250.0,
            gamma: 6.25,
            sigma,
            space,
            lower,
            upper,
            seed: 0,
            v_des: 2.0,
            tail: TailInit::CopyLast,
            workers: 0,
        }
    }

    /// Twist space with variances at half the control maxima.
    pub fn mppi3a() -> Self {
        Self::common(ControlSpace::ThreeDof, vec![1.00, 1.00, 0.78])
    }

    /// Twist space with variances fitted to the 4DoF sample spread at rest.
    pub fn mppi3b() -> Self {
        Self::common(ControlSpace::ThreeDof, vec![0.55, 0.55, 0.96])
    }

    /// Diagonal wheel-pair space.
    pub fn mppi4() -> Self {
        Self::common(ControlSpace::FourDof, vec![1.00, 1.00, 0.78, 0.78])
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    /// Number of samples perturbing the warm start; the rest are pure noise.
    pub fn exploitation_count(&self) -> usize {
        let x = (1.0 - self.alpha) * self.samples as f64;
        let r = x.round();
        let n = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
        (n.max(0.0) as usize).min(self.samples)
    }

    pub fn with_limits(mut self, limits: &ControlLimits) -> Self {
        let (lower, upper) = space_bounds(self.space, limits);
        self.lower = lower;
        self.upper = upper;
        self
    }

    pub fn validate(&self) -> Result<(), MppiError> {
        let bad = |m: String| Err(MppiError::Config(m));
        let n = self.dim();
        if self.samples == 0 {
            return bad("samples must be at least 1".into());
        }
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt {} must be positive", self.dt));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} must lie in [0, 1]", self.alpha));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be positive", self.lambda));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma {} must be non-negative", self.gamma));
        }
        if self.sigma.len() != n {
            return bad(format!(
                "sigma has {} entries but the {} space has {n} dimensions",
                self.sigma.len(),
                self.space.label()
            ));
        }
        if self.sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return bad(format!("sigma entries must be positive, got {:?}", self.sigma));
        }
        if self.lower.len() != n || self.upper.len() != n {
            return bad(format!("bounds must have {n} entries"));
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l <= u)) {
            return bad("every lower bound must not exceed its upper bound".into());
        }
        if !(self.v_des >= 0.0 && self.v_des.is_finite()) {
            return bad(format!("v_des {} must be non-negative", self.v_des));
        }
        Ok(())
    }
}

/// Stage and terminal cost weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    pub w_dist: f64,
    pub w_angle: f64,
    pub w_speed: f64,
    pub w_collision: f64,
    pub w_goal: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            w_dist: 40.0,
            w_angle: 30.0,
            w_speed: 10.0,
            w_collision: 50.0,
            w_goal: 50.0,
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<(), MppiError> {
        let all = [self.w_dist, self.w_angle, self.w_speed, self.w_collision, self.w_goal];
        if all.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(MppiError::Config(format!("cost weights must be non-negative: {self:?}")));
        }
        Ok(())
    }
}

/// `T x n` control rows in a given space.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence {
    space: ControlSpace,
    horizon: usize,
    data: Vec<f64>,
}

impl ControlSequence {
    pub fn zeros(space: ControlSpace, horizon: usize) -> Self {
        Self {
            space,
            horizon,
            data: vec![0.0; horizon * space.dim()],
        }
    }

    pub fn from_rows(space: ControlSpace, rows: &[Vec<f64>]) -> Result<Self, MppiError> {
        let n = space.dim();
        if rows.iter().any(|r| r.len() != n) {
            return Err(MppiError::Dimension(format!("every row must have {n} entries")));
        }
        Ok(Self {
            space,
            horizon: rows.len(),
            data: rows.iter().flatten().copied().collect(),
        })
    }

    pub fn from_flat(space: ControlSpace, data: Vec<f64>) -> Result<Self, MppiError> {
        let n = space.dim();
        if data.len() % n != 0 {
            return Err(MppiError::Dimension(format!("{} values is not a multiple of {n}", data.len())));
        }
        Ok(Self {
            space,
            horizon: data.len() / n,
            data,
        })
    }

    /// Every row equal to `row`.
    pub fn constant(space: ControlSpace, horizon: usize, row: &[f64]) -> Self {
        assert_eq!(row.len(), space.dim());
        Self {
            space,
            horizon,
            data: row.iter().copied().cycle().take(horizon * row.len()).collect(),
        }
    }

    pub fn space(&self) -> ControlSpace {
        self.space
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn dim(&self) -> usize {
        self.space.dim()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, t: usize) -> &[f64] {
        let n = self.dim();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn row_mut(&mut self, t: usize) -> &mut [f64] {
        let n = self.dim();
        &mut self.data[t * n..(t + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim())
    }

    pub fn clamp_to(&mut self, lower: &[f64], upper: &[f64]) {
        let n = self.dim();
        for (k, v) in self.data.iter_mut().enumerate() {
            *v = v.clamp(lower[k % n], upper[k % n]);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn within(&self, lower: &[f64], upper: &[f64]) -> bool {
        let n = self.dim();
        self.data
            .iter()
            .enumerate()
            .all(|(k, v)| *v >= lower[k % n] && *v <= upper[k % n])
    }

    /// Drops the first row and refills the last.
    pub fn shifted(&self, tail: TailInit) -> Self {
        let n = self.dim();
        let mut data = Vec::with_capacity(self.data.len());
        if self.horizon > 1 {
            data.extend_from_slice(&self.data[n..]);
        }
        match tail {
            TailInit::CopyLast => data.extend_from_slice(self.row(self.horizon - 1)),
            TailInit::Zero => data.extend(std::iter::repeat_n(0.0, n)),
        }
        Self {
            space: self.space,
            horizon: self.horizon,
            data,
        }
    }
}
