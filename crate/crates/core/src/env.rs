//! Point robot with rotation and acceleration inputs that must reach a fixed
//! goal while staying out of a circular hazard.
//!
//! Headings are measured from the +y axis (the goal direction), clockwise
//! positive, so the velocity is `speed * (sin heading, cos heading)`.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::safety_index::KinematicPair;

pub const OBS_DIM: usize = 7;
pub const ACTION_DIM: usize = 2;

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(TAU);
    if r > PI {
        r - TAU
    } else {
        r
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub goal: [f64; 2],
    /// Hazard radius; also the `d_min` of every safety index.
    pub d_min: f64,
    pub dt: f64,
    pub max_steps: u32,
    pub v_max: f64,
    pub omega_max: f64,
    pub a_max: f64,
    /// Row of the initial-state table, 1 to 3.
    pub distribution: u8,
    pub w_heading: f64,
    pub w_speed: f64,
    /// Target speed is `distance_to_goal / time_to_goal`, capped at `v_max`.
    pub time_to_goal: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            goal: [0.0, 5.0],
            d_min: 0.5,
            dt: 0.1,
            max_steps: 120,
            v_max: 2.0,
            omega_max: FRAC_PI_2,
            a_max: 1.0,
            distribution: 1,
            w_heading: 1.0,
            w_speed: 1.0,
            time_to_goal: 5.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("env.d_min", self.d_min),
            ("env.dt", self.dt),
            ("env.v_max", self.v_max),
            ("env.omega_max", self.omega_max),
            ("env.a_max", self.a_max),
            ("env.time_to_goal", self.time_to_goal),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_steps == 0 {
            return Err(Error::Config("env.max_steps must be at least 1".into()));
        }
        if !(1..=3).contains(&self.distribution) {
            return Err(Error::Config(format!(
                "env.distribution must be 1, 2 or 3, got {}",
                self.distribution
            )));
        }
        if self.w_heading < 0.0 || self.w_speed < 0.0 {
            return Err(Error::Config("reward weights must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub hazard: [f64; 2],
    pub step: u32,
}

impl EnvState {
    pub fn velocity(&self) -> [f64; 2] {
        [
            self.speed * self.heading.sin(),
            self.speed * self.heading.cos(),
        ]
    }
}

/// Normalised controls; both are clamped to `[-1, 1]` before use.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Action {
    pub rotation: f64,
    pub acceleration: f64,
}

impl Action {
    pub fn new(rotation: f64, acceleration: f64) -> Self {
        Self {
            rotation,
            acceleration,
        }
    }

    pub fn from_slice(a: &[f64]) -> Self {
        Self::new(a[0], a[1])
    }

    pub fn clamped(self) -> Self {
        let c = |v: f64| if v.is_nan() { 0.0 } else { v.clamp(-1.0, 1.0) };
        Self::new(c(self.rotation), c(self.acceleration))
    }
}

/// `[goal_dx, goal_dy, cos heading, sin heading, speed, d, ḋ]`.
pub type Observation = [f64; OBS_DIM];

#[derive(Clone, Debug, PartialEq)]
pub struct StepResult {
    pub observation: Observation,
    pub reward: f64,
    pub cost: u8,
    pub done: bool,
    pub kinematics: KinematicPair,
}

/// Distance to the hazard centre and its time derivative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DistanceFeatures {
    pub d: f64,
    pub d_dot: f64,
    /// Agent sits exactly on the hazard centre; `d_dot` is then `-speed`.
    pub degenerate: bool,
}

impl DistanceFeatures {
    pub fn pair(&self) -> KinematicPair {
        KinematicPair::new(self.d, self.d_dot)
    }
}

pub fn distance_features(state: &EnvState) -> DistanceFeatures {
    let rx = state.x - state.hazard[0];
    let ry = state.y - state.hazard[1];
    let d = rx.hypot(ry);
    if d == 0.0 {
        return DistanceFeatures {
            d: 0.0,
            d_dot: -state.speed,
            degenerate: true,
        };
    }
    let [vx, vy] = state.velocity();
    DistanceFeatures {
        d,
        d_dot: (rx * vx + ry * vy) / d,
        degenerate: false,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointEnv {
    config: EnvConfig,
}

impl PointEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    /// Samples a start state uniformly from the configured initial box.
    pub fn reset<R: Rng + ?Sized>(&self, rng: &mut R) -> EnvState {
        let (x_range, y_range, hazard_y) = match self.config.distribution {
            1 => ((0.0, 0.0), (-1.5, -1.0), (0.5, 1.0)),
            2 => ((0.0, 0.0), (-1.5, -0.5), (0.5, 1.5)),
            _ => ((-0.5, 0.5), (-1.5, -0.5), (0.5, 1.0)),
        };
        let mut uniform = |(lo, hi): (f64, f64)| -> f64 {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..=hi)
            }
        };
        let x = uniform(x_range);
        let y = uniform(y_range);
        let heading = uniform((-FRAC_PI_4, FRAC_PI_4));
        let hy = uniform(hazard_y);
        EnvState {
            x,
            y,
            heading,
            speed: 0.0,
            hazard: [0.0, hy],
            step: 0,
        }
    }

    /// Unicycle Euler update without episode bookkeeping.
    pub fn dynamics(&self, state: &EnvState, action: Action) -> EnvState {
        let a = action.clamped();
        let c = &self.config;
        let heading = wrap_angle(state.heading + c.omega_max * a.rotation * c.dt);
        let speed = (state.speed + c.a_max * a.acceleration * c.dt).clamp(0.0, c.v_max);
        EnvState {
            x: state.x + speed * heading.sin() * c.dt,
            y: state.y + speed * heading.cos() * c.dt,
            heading,
            speed,
            hazard: state.hazard,
            step: state.step,
        }
    }

    pub fn step(&self, state: &EnvState, action: Action) -> Result<(EnvState, StepResult)> {
        if state.step >= self.config.max_steps {
            return Err(Error::Usage(format!(
                "episode already finished after {} steps",
                state.step
            )));
        }
        let mut next = self.dynamics(state, action);
        next.step = state.step + 1;
        let features = distance_features(&next);
        let result = StepResult {
            observation: self.observe(&next),
            reward: self.reward(&next),
            cost: self.cost(&next),
            done: next.step == self.config.max_steps,
            kinematics: features.pair(),
        };
        Ok((next, result))
    }

    pub fn observe(&self, state: &EnvState) -> Observation {
        let f = distance_features(state);
        [
            self.config.goal[0] - state.x,
            self.config.goal[1] - state.y,
            state.heading.cos(),
            state.heading.sin(),
            state.speed,
            f.d,
            f.d_dot,
        ]
    }

    pub fn distance_to_goal(&self, state: &EnvState) -> f64 {
        (self.config.goal[0] - state.x).hypot(self.config.goal[1] - state.y)
    }

    pub fn target_speed(&self, state: &EnvState) -> f64 {
        (self.distance_to_goal(state) / self.config.time_to_goal).min(self.config.v_max)
    }

    /// Absolute heading error towards the goal, in `[0, π]`.
    pub fn heading_error(&self, state: &EnvState) -> f64 {
        let bearing = (self.config.goal[0] - state.x).atan2(self.config.goal[1] - state.y);
        wrap_angle(state.heading - bearing).abs()
    }

    pub fn speed_error(&self, state: &EnvState) -> f64 {
        (state.speed - self.target_speed(state)).abs()
    }

    pub fn reward(&self, state: &EnvState) -> f64 {
        -self.config.w_heading * self.heading_error(state)
            - self.config.w_speed * self.speed_error(state)
    }

    /// 1 strictly inside the hazard; the boundary itself is safe.
    pub fn cost(&self, state: &EnvState) -> u8 {
        u8::from(distance_features(state).d < self.config.d_min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn env() -> PointEnv {
        PointEnv::new(EnvConfig::default()).unwrap()
    }

    fn at(x: f64, y: f64, heading: f64, speed: f64) -> EnvState {
        EnvState {
            x,
            y,
            heading,
            speed,
            hazard: [0.0, 0.0],
            step: 0,
        }
    }

    #[test]
    fn reset_respects_initial_boxes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for dist in 1..=3u8 {
            let e = PointEnv::new(EnvConfig {
                distribution: dist,
                ..EnvConfig::default()
            })
            .unwrap();
            for _ in 0..500 {
                let s = e.reset(&mut rng);
                assert_eq!(s.speed, 0.0);
                assert_eq!(s.step, 0);
                assert_eq!(s.hazard[0], 0.0);
                assert!(s.heading.abs() <= FRAC_PI_4);
                match dist {
                    1 => {
                        assert_eq!(s.x, 0.0);
                        assert!((-1.5..=-1.0).contains(&s.y));
                        assert!((0.5..=1.0).contains(&s.hazard[1]));
                    }
                    2 => {
                        assert_eq!(s.x, 0.0);
                        assert!((-1.5..=-0.5).contains(&s.y));
                        assert!((0.5..=1.5).contains(&s.hazard[1]));
                    }
                    _ => {
                        assert!((-0.5..=0.5).contains(&s.x));
                        assert!((-1.5..=-0.5).contains(&s.y));
                        assert!((0.5..=1.0).contains(&s.hazard[1]));
                    }
                }
            }
        }
    }

    #[test]
    fn unknown_distribution_is_rejected() {
        let cfg = EnvConfig {
            distribution: 4,
            ..EnvConfig::default()
        };
        assert!(matches!(PointEnv::new(cfg), Err(Error::Config(_))));
        assert!(PointEnv::new(EnvConfig {
            dt: 0.0,
            ..EnvConfig::default()
        })
        .is_err());
    }

    #[test]
    fn reset_is_seeded() {
        let e = env();
        let a = e.reset(&mut ChaCha8Rng::seed_from_u64(42));
        let b = e.reset(&mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
    }

    #[test]
    fn zero_action_at_rest_is_a_fixed_point() {
        let e = env();
        let s = at(0.3, -1.0, 0.2, 0.0);
        let (n, _) = e.step(&s, Action::default()).unwrap();
        assert_eq!((n.x, n.y, n.heading, n.speed), (s.x, s.y, s.heading, s.speed));
    }

    #[test]
    fn coasting_translates_along_heading() {
        let e = env();
        let (n, _) = e.step(&at(0.0, -1.0, 0.0, 1.0), Action::default()).unwrap();
        assert!((n.y - (-0.9)).abs() < 1e-12);
        assert_eq!(n.x, 0.0);
    }

    #[test]
    fn acceleration_uses_updated_speed() {
        let e = env();
        let s = at(0.0, -1.0, 0.0, 0.0);
        let (n, _) = e.step(&s, Action::new(0.0, 1.0)).unwrap();
        // hand trace: v = 0 + 1 * 0.1, then y = -1 + 0.1 * 0.1
        assert!((n.speed - 0.1).abs() < 1e-15);
        assert!((n.y - (-0.99)).abs() < 1e-15);
        let (n2, _) = e.step(&n, Action::new(0.0, 1.0)).unwrap();
        assert!((n2.speed - 0.2).abs() < 1e-15);
        assert!((n2.y - (-0.97)).abs() < 1e-15);
    }

    #[test]
    fn rotation_and_speed_limits() {
        let e = env();
        let s = at(0.0, 0.0, PI - 0.05, 1.99);
        let (n, _) = e.step(&s, Action::new(5.0, 5.0)).unwrap();
        assert_eq!(n.speed, 2.0);
        assert!(n.heading > -PI && n.heading <= PI);
        assert!((n.heading - wrap_angle(PI - 0.05 + FRAC_PI_2 * 0.1)).abs() < 1e-12);
        let (n, _) = e.step(&at(0.0, 0.0, 0.0, 0.05), Action::new(0.0, -1.0)).unwrap();
        assert_eq!(n.speed, 0.0);
    }

    #[test]
    fn stepping_past_the_horizon_is_an_error() {
        let e = env();
        let mut s = at(0.0, -1.0, 0.0, 0.0);
        s.step = 120;
        assert!(matches!(e.step(&s, Action::default()), Err(Error::Usage(_))));
        s.step = 119;
        assert!(e.step(&s, Action::default()).unwrap().1.done);
    }

    #[test]
    fn radial_distance_rates() {
        let f = distance_features(&at(0.0, -1.0, 0.0, 1.0));
        assert_eq!((f.d, f.d_dot), (1.0, -1.0));
        let f = distance_features(&at(0.0, -1.0, PI, 1.0));
        assert!((f.d_dot - 1.0).abs() < 1e-15);
        let f = distance_features(&at(0.0, -1.0, 0.7, 0.0));
        assert_eq!(f.d_dot, 0.0);
        let f = distance_features(&at(0.0, 0.0, 0.7, 1.5));
        assert!(f.degenerate);
        assert_eq!((f.d, f.d_dot), (0.0, -1.5));
    }

    #[test]
    fn reward_terms() {
        let e = env();
        assert_eq!(e.reward(&at(0.0, 0.0, 0.0, 1.0)), 0.0);
        assert_eq!(e.target_speed(&at(0.0, 0.0, 0.0, 0.0)), 1.0);
        let r = e.reward(&at(0.0, 0.0, FRAC_PI_2, 1.0));
        assert!((r + FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn cost_boundary_is_safe() {
        let e = env();
        assert_eq!(e.cost(&at(0.0, -1.0, 0.0, 0.0)), 0);
        assert_eq!(e.cost(&at(0.0, -0.4, 0.0, 0.0)), 1);
        assert_eq!(e.cost(&at(0.0, -0.5, 0.0, 0.0)), 0);
    }

    #[test]
    fn observation_layout() {
        let e = env();
        let s = at(1.0, -1.0, 0.3, 0.8);
        let o = e.observe(&s);
        let f = distance_features(&s);
        assert_eq!(o, [-1.0, 6.0, 0.3f64.cos(), 0.3f64.sin(), 0.8, f.d, f.d_dot]);
    }

    #[test]
    fn distance_rate_matches_finite_differences() {
        // first-order integrator: the mismatch should shrink roughly tenfold per decade of dt
        let s = at(0.4, -1.2, 0.5, 1.3);
        let mut errors = Vec::new();
        for dt in [0.1, 0.01, 0.001] {
            let e = PointEnv::new(EnvConfig {
                dt,
                ..EnvConfig::default()
            })
            .unwrap();
            let f0 = distance_features(&s);
            let n = e.dynamics(&s, Action::new(0.6, 0.4));
            let f1 = distance_features(&n);
            errors.push(((f1.d - f0.d) / dt - f0.d_dot).abs());
        }
        assert!(errors[0] > errors[1] && errors[1] > errors[2]);
        assert!(errors[2] < 0.01);
        assert!(errors[1] / errors[2] > 5.0);
    }
}
