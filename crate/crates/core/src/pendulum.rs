//! Inverted-pendulum dynamics, the saturated feedback-linearization expert,
//! trajectory simulation, and basin-of-attraction computation.
//!
//! Dynamics: `theta_ddot = a*sin(theta) - b*theta_dot + c*u` with the torque
//! saturated to `[u_min, u_max]`.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::StateGrid;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendulumState {
    /// Angle in radians, 0 = upright; stored unwrapped.
    pub theta: f64,
    pub theta_dot: f64,
}

impl PendulumState {
    pub fn new(theta: f64, theta_dot: f64) -> PendulumState {
        PendulumState { theta, theta_dot }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.is_finite() && self.theta_dot.is_finite()
    }

    /// Distance to the upright equilibrium with theta wrapped to (-pi, pi].
    pub fn norm_wrapped(&self) -> f64 {
        wrap_angle(self.theta).hypot(self.theta_dot)
    }
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let w = theta - two_pi * (theta / two_pi).round();
    if w <= -std::f64::consts::PI {
        w + two_pi
    } else {
        w
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PendulumParams {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub u_min: f64,
    pub u_max: f64,
    /// Integration step in seconds.
    pub dt: f64,
    /// Step budget for [`simulate`].
    pub max_steps: usize,
}

impl Default for PendulumParams {
    fn default() -> Self {
        PendulumParams {
            a: 10.0,
            b: 2.0,
            c: 10.0,
            u_min: -1.0,
            u_max: 1.0,
            dt: 0.05,
            max_steps: 100,
        }
    }
}

impl PendulumParams {
    pub fn saturate(&self, u: f64) -> f64 {
        u.clamp(self.u_min, self.u_max)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.u_min < self.u_max) {
            return Err(Error::Config("u_min must be < u_max".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("dt must be > 0".into()));
        }
        Ok(())
    }
}

/// Saturated feedback-linearization controller with LQR residual gains.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ExpertController {
    pub gains: [f64; 2],
    pub params: PendulumParams,
}

impl Default for ExpertController {
    fn default() -> Self {
        ExpertController {
            gains: [0.316, 0.175],
            params: PendulumParams::default(),
        }
    }
}

/// `(d_theta, d_theta_dot)` for an already-saturated torque.
pub fn dynamics_deriv(state: &PendulumState, u: f64, params: &PendulumParams) -> (f64, f64) {
    (
        state.theta_dot,
        params.a * state.theta.sin() - params.b * state.theta_dot + params.c * u,
    )
}

/// Control law: cancel gravity, stabilize the residual linear system, saturate.
pub fn expert_action(state: &PendulumState, ctrl: &ExpertController) -> f64 {
    let p = &ctrl.params;
    let raw = -(p.a / p.c) * state.theta.sin()
        - (ctrl.gains[0] * state.theta + ctrl.gains[1] * state.theta_dot) / p.c;
    p.saturate(raw)
}

fn rk4(theta: f64, theta_dot: f64, u: f64, p: &PendulumParams) -> (f64, f64) {
    let dt = p.dt;
    let f = |th: f64, thd: f64| (thd, p.a * th.sin() - p.b * thd + p.c * u);
    let (k1a, k1b) = f(theta, theta_dot);
    let (k2a, k2b) = f(theta + 0.5 * dt * k1a, theta_dot + 0.5 * dt * k1b);
    let (k3a, k3b) = f(theta + 0.5 * dt * k2a, theta_dot + 0.5 * dt * k2b);
    let (k4a, k4b) = f(theta + dt * k3a, theta_dot + dt * k3b);
    (
        theta + dt / 6.0 * (k1a + 2.0 * k2a + 2.0 * k3a + k4a),
        theta_dot + dt / 6.0 * (k1b + 2.0 * k2b + 2.0 * k3b + k4b),
    )
}

/// One RK4 step over `dt` under a zero-order-hold torque.
pub fn step(state: &PendulumState, u: f64, params: &PendulumParams) -> Result<PendulumState> {
    let (theta, theta_dot) = rk4(state.theta, state.theta_dot, u, params);
    let next = PendulumState { theta, theta_dot };
    if !next.is_finite() {
        return Err(Error::SimulationBlowUp { step: 0 });
    }
    Ok(next)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Actor {
    Novice,
    Expert,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<PendulumState>,
    pub actions: Vec<f64>,
    pub actors: Vec<Actor>,
    pub terminated_early: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// A state-feedback torque policy.
pub trait Policy: Sync {
    fn action(&self, state: &PendulumState) -> f64;

    /// Batched evaluation over rows `[theta, theta_dot]`.
    fn action_batch(&self, states: &Array2<f64>) -> Array1<f64> {
        Array1::from_iter(states.rows().into_iter().map(|r| {
            self.action(&PendulumState {
                theta: r[0],
                theta_dot: r[1],
            })
        }))
    }

    fn actor(&self) -> Actor {
        Actor::Expert
    }
}

impl Policy for ExpertController {
    fn action(&self, state: &PendulumState) -> f64 {
        expert_action(state, self)
    }
}

impl<F: Fn(&PendulumState) -> f64 + Sync> Policy for F {
    fn action(&self, state: &PendulumState) -> f64 {
        (self)(state)
    }
}

/// Rolls the policy forward for at most `params.max_steps` steps, saturating
/// every action; stops early when `stop(state)` holds.
pub fn simulate<P: Policy + ?Sized>(
    policy: &P,
    x0: PendulumState,
    params: &PendulumParams,
    stop: impl Fn(&PendulumState) -> bool,
) -> Result<Trajectory> {
    if !x0.is_finite() {
        return Err(Error::Config("initial state must be finite".into()));
    }
    let mut traj = Trajectory {
        states: vec![x0],
        actions: Vec::new(),
        actors: Vec::new(),
        terminated_early: false,
    };
    let mut state = x0;
    for t in 0..params.max_steps {
        if stop(&state) {
            traj.terminated_early = true;
            break;
        }
        let u = params.saturate(policy.action(&state));
        state = step(&state, u, params).map_err(|_| Error::SimulationBlowUp { step: t })?;
        traj.actions.push(u);
        traj.actors.push(policy.actor());
        traj.states.push(state);
    }
    Ok(traj)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BasinOptions {
    /// Step budget per grid cell; larger than the trajectory budget so
    /// convergence is not truncation-limited.
    pub max_steps: usize,
    /// Radius of the convergence ball on (wrapped theta, theta_dot).
    pub converge_radius: f64,
    /// Cells whose unwrapped angle or speed pass these cutoffs are treated
    /// as escaped: a spinning or runaway pendulum does not return to the
    /// convergence ball within the remaining budget.
    pub theta_escape: f64,
    pub theta_dot_escape: f64,
}

impl Default for BasinOptions {
    fn default() -> Self {
        BasinOptions {
            max_steps: 500,
            converge_radius: 0.05,
            theta_escape: 4.0 * std::f64::consts::PI,
            theta_dot_escape: 50.0,
        }
    }
}

/// Grid cells from which the policy drives the pendulum into the
/// convergence ball within the step budget.
///
/// Cells are advanced in lockstep so policies with batched evaluation
/// (ensembles) run as matrix products over the active set.
pub fn basin_of_attraction<P: Policy + ?Sized>(
    policy: &P,
    grid: &StateGrid,
    params: &PendulumParams,
    opts: &BasinOptions,
) -> Vec<bool> {
    let n = grid.len();
    let states = grid.states();
    let mut theta: Vec<f64> = states.column(0).to_vec();
    let mut theta_dot: Vec<f64> = states.column(1).to_vec();
    let mut converged = vec![false; n];
    let mut active: Vec<usize> = (0..n).collect();
    let mut batch = Array2::<f64>::zeros((n, 2));

    for _ in 0..=opts.max_steps {
        active.retain(|&k| {
            if wrap_angle(theta[k]).hypot(theta_dot[k]) < opts.converge_radius {
                converged[k] = true;
                return false;
            }
            theta[k].abs() <= opts.theta_escape && theta_dot[k].abs() <= opts.theta_dot_escape
        });
        if active.is_empty() {
            break;
        }
        let m = active.len();
        let mut view = batch.slice_mut(ndarray::s![..m, ..]);
        for (row, &k) in active.iter().enumerate() {
            view[[row, 0]] = theta[k];
            view[[row, 1]] = theta_dot[k];
        }
        let actions = policy.action_batch(&batch.slice(ndarray::s![..m, ..]).to_owned());
        for (row, &k) in active.iter().enumerate() {
            let u = params.saturate(actions[row]);
            let (nt, ntd) = rk4(theta[k], theta_dot[k], u, params);
            theta[k] = nt;
            theta_dot[k] = ntd;
        }
    }
    converged
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    const PI: f64 = std::f64::consts::PI;

    #[test]
    fn wrap_angle_range() {
        assert_abs_diff_eq!(wrap_angle(0.0), 0.0);
        assert_abs_diff_eq!(wrap_angle(2.0 * PI), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(3.0 * PI), PI, epsilon = 1e-12);
        assert_abs_diff_eq!(wrap_angle(-0.5), -0.5);
        assert_abs_diff_eq!(wrap_angle(PI + 0.1), -PI + 0.1, epsilon = 1e-12);
    }

    #[test]
    fn dynamics_at_equilibrium() {
        let p = PendulumParams::default();
        let d = dynamics_deriv(&PendulumState::new(0.0, 0.0), 0.0, &p);
        assert_eq!(d, (0.0, 0.0));
    }

    #[test]
    fn dynamics_gravity_term() {
        let p = PendulumParams::default();
        let d = dynamics_deriv(&PendulumState::new(PI / 2.0, 0.0), 0.0, &p);
        assert_abs_diff_eq!(d.1, 10.0, epsilon = 1e-12);
    }

    #[test]
    fn dynamics_damping_and_torque() {
        let p = PendulumParams::default();
        let d = dynamics_deriv(&PendulumState::new(0.0, 1.0), 0.5, &p);
        assert_abs_diff_eq!(d.0, 1.0);
        assert_abs_diff_eq!(d.1, -2.0 + 5.0, epsilon = 1e-12);
    }

    #[test]
    fn expert_zero_at_equilibrium() {
        let ctrl = ExpertController::default();
        assert_eq!(expert_action(&PendulumState::new(0.0, 0.0), &ctrl), 0.0);
    }

    #[test]
    fn expert_saturates_at_quarter_turn() {
        let ctrl = ExpertController::default();
        let raw: f64 = -1.0 - 0.0316 * (PI / 2.0);
        assert!(raw < -1.0);
        assert_eq!(expert_action(&PendulumState::new(PI / 2.0, 0.0), &ctrl), -1.0);
    }

    #[test]
    fn expert_action_is_odd() {
        let ctrl = ExpertController::default();
        for (th, thd) in [(0.3, 0.2), (1.5, -2.0), (2.8, 4.0), (PI / 2.0, 0.0)] {
            let plus = expert_action(&PendulumState::new(th, thd), &ctrl);
            let minus = expert_action(&PendulumState::new(-th, -thd), &ctrl);
            assert_abs_diff_eq!(plus, -minus, epsilon = 1e-15);
        }
    }

    #[test]
    fn closed_loop_residual_system_is_hurwitz() {
        // Eigenvalues of [[0, 1], [-K1, -b - K2]].
        let ctrl = ExpertController::default();
        let b = ctrl.params.b;
        let tr = -(b + ctrl.gains[1]);
        let det = ctrl.gains[0];
        // 2x2: Hurwitz iff trace < 0 and det > 0.
        assert!(tr < 0.0 && det > 0.0);
        let disc = tr * tr - 4.0 * det;
        let re_max = if disc >= 0.0 {
            (tr + disc.sqrt()) / 2.0
        } else {
            tr / 2.0
        };
        assert!(re_max < 0.0);
    }

    #[test]
    fn step_preserves_equilibrium() {
        let p = PendulumParams::default();
        let s = step(&PendulumState::new(0.0, 0.0), 0.0, &p).unwrap();
        assert_eq!(s, PendulumState::new(0.0, 0.0));
    }

    /// Fine-grid Euler reference for a single coarse step.
    fn euler_reference(x0: PendulumState, u: f64, horizon: f64, p: &PendulumParams) -> PendulumState {
        let h = 1e-5;
        let n = (horizon / h).round() as usize;
        let mut s = x0;
        for _ in 0..n {
            let (d1, d2) = dynamics_deriv(&s, u, p);
            s.theta += h * d1;
            s.theta_dot += h * d2;
        }
        s
    }

    #[test]
    fn halving_dt_reduces_single_step_error() {
        // dt is enlarged so the RK4 truncation error dominates the
        // reference integrator's own error.
        let p = PendulumParams {
            dt: 0.2,
            ..PendulumParams::default()
        };
        let x0 = PendulumState::new(0.3, 0.5);
        let u = 0.2;
        let truth = euler_reference(x0, u, p.dt, &p);

        let coarse = step(&x0, u, &p).unwrap();
        let half = PendulumParams { dt: p.dt / 2.0, ..p };
        let fine = step(&step(&x0, u, &half).unwrap(), u, &half).unwrap();

        let err = |s: &PendulumState| (s.theta - truth.theta).hypot(s.theta_dot - truth.theta_dot);
        assert!(err(&coarse) / err(&fine) >= 8.0, "ratio {}", err(&coarse) / err(&fine));
    }

    #[test]
    fn linear_case_matches_closed_form() {
        // With the gravity term removed and u = 0 the system is linear:
        // theta_dot(t) = v0 * exp(-b t), theta(t) = th0 + v0 (1 - exp(-b t)) / b.
        let p = PendulumParams {
            a: 0.0,
            dt: 0.05,
            ..PendulumParams::default()
        };
        let (th0, v0) = (0.4, 1.3);
        let mut s = PendulumState::new(th0, v0);
        for _ in 0..20 {
            s = step(&s, 0.0, &p).unwrap();
        }
        let t = 1.0;
        let decay = (-p.b * t).exp();
        assert_abs_diff_eq!(s.theta_dot, v0 * decay, epsilon = 1e-6);
        assert_abs_diff_eq!(s.theta, th0 + v0 * (1.0 - decay) / p.b, epsilon = 1e-6);
    }

    #[test]
    fn simulate_zero_policy_from_equilibrium_is_constant() {
        let p = PendulumParams::default();
        let zero = |_: &PendulumState| 0.0;
        let traj = simulate(&zero, PendulumState::new(0.0, 0.0), &p, |_| false).unwrap();
        assert_eq!(traj.len(), p.max_steps);
        assert!(traj.states.iter().all(|s| *s == PendulumState::new(0.0, 0.0)));
    }

    #[test]
    fn expert_converges_from_inside_basin() {
        let ctrl = ExpertController::default();
        let p = PendulumParams {
            max_steps: 500,
            ..ctrl.params
        };
        let traj = simulate(&ctrl, PendulumState::new(0.3, 0.0), &p, |s| s.norm_wrapped() < 0.05).unwrap();
        assert!(traj.terminated_early);
        assert!(traj.states.last().unwrap().norm_wrapped() < 0.05);
    }

    #[test]
    fn expert_does_not_converge_from_hanging_position() {
        let ctrl = ExpertController::default();
        let p = PendulumParams {
            max_steps: 500,
            ..ctrl.params
        };
        let traj = simulate(&ctrl, PendulumState::new(PI, 0.0), &p, |s| s.norm_wrapped() < 0.05).unwrap();
        assert!(!traj.terminated_early);
        assert!(traj.states.last().unwrap().norm_wrapped() >= 0.05);
    }

    #[test]
    fn simulated_actions_are_saturated() {
        let ctrl = ExpertController::default();
        let traj = simulate(&ctrl, PendulumState::new(2.5, -4.0), &ctrl.params, |_| false).unwrap();
        assert!(traj
            .actions
            .iter()
            .all(|u| *u >= ctrl.params.u_min && *u <= ctrl.params.u_max));
    }

    fn small_grid() -> StateGrid {
        StateGrid {
            n_theta: 21,
            n_theta_dot: 21,
            ..StateGrid::default()
        }
    }

    #[test]
    fn zero_policy_basin_contains_equilibrium_cell() {
        let p = PendulumParams::default();
        let grid = small_grid();
        let zero = |_: &PendulumState| 0.0;
        let mask = basin_of_attraction(&zero, &grid, &p, &BasinOptions::default());
        let center = grid.cell_of(0.0, 0.0).unwrap();
        assert!(mask[center]);
        // The uncontrolled upright pendulum is unstable: nearly nothing else converges.
        let volume = mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64;
        assert!(volume < 0.05, "zero-policy basin volume {volume}");
    }

    #[test]
    fn expert_basin_contains_origin_and_is_bounded() {
        let ctrl = ExpertController::default();
        let grid = small_grid();
        let mask = basin_of_attraction(&ctrl, &grid, &ctrl.params, &BasinOptions::default());
        assert!(mask[grid.cell_of(0.0, 0.0).unwrap()]);
        let volume = mask.iter().filter(|&&m| m).count() as f64 / mask.len() as f64;
        assert!(volume > 0.2 && volume < 0.8, "expert basin volume {volume}");
    }

    #[test]
    fn expert_basin_is_point_symmetric() {
        let ctrl = ExpertController::default();
        let grid = small_grid();
        let mask = basin_of_attraction(&ctrl, &grid, &ctrl.params, &BasinOptions::default());
        for i in 0..grid.n_theta {
            for j in 0..grid.n_theta_dot {
                let mirrored = grid.index(grid.n_theta - 1 - i, grid.n_theta_dot - 1 - j);
                assert_eq!(mask[grid.index(i, j)], mask[mirrored]);
            }
        }
    }
}
