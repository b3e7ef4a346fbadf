//! Cart-pole balancing with the classic Euler-integrated dynamics.
//!
//! Reward is 1 per step, so the cumulative objective of a live episode equals
//! the step count exactly. The episode ends naturally when the cart leaves
//! the track or the pole tips past twelve degrees.

use rand::Rng;

use super::{Action, Environment, Step};
use crate::policy::Squash;
use crate::{from_f64, seeded_rng, Scalar};

/// Full cart-pole state: cart position/velocity, pole angle/angular velocity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CartPoleState<S> {
    pub x: S,
    pub x_dot: S,
    pub theta: S,
    pub theta_dot: S,
}

/// The cart-pole environment. Horizon 500, observation = raw 4-state.
pub struct CartPole<S> {
    state: CartPoleState<S>,
    terminated: bool,
    gravity: S,
    total_mass: S,
    masspole: S,
    half_length: S,
    polemass_length: S,
    force_mag: S,
    tau: S,
    x_threshold: S,
    theta_threshold: S,
}

impl<S: Scalar> CartPole<S> {
    pub fn new() -> Self {
        let masspole = from_f64(0.1);
        let masscart: S = from_f64(1.0);
        let half_length = from_f64(0.5);
        CartPole {
            state: CartPoleState {
                x: S::zero(),
                x_dot: S::zero(),
                theta: S::zero(),
                theta_dot: S::zero(),
            },
            terminated: true,
            gravity: from_f64(9.8),
            total_mass: masscart + masspole,
            masspole,
            half_length,
            polemass_length: masspole * half_length,
            force_mag: from_f64(10.0),
            tau: from_f64(0.02),
            x_threshold: from_f64(2.4),
            theta_threshold: from_f64(12.0 * 2.0 * std::f64::consts::PI / 360.0),
        }
    }

    /// Start an episode from an explicit state (used by tests and analyses).
    pub fn with_state(state: CartPoleState<S>) -> Self {
        let mut env = CartPole::new();
        env.state = state;
        env.terminated = false;
        env
    }

    /// Current full state.
    pub fn state(&self) -> CartPoleState<S> {
        self.state
    }

    fn observe(&self) -> Vec<S> {
        vec![self.state.x, self.state.x_dot, self.state.theta, self.state.theta_dot]
    }
}

impl<S: Scalar> Default for CartPole<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Environment<S> for CartPole<S> {
    fn id(&self) -> String {
        "cartpole".to_string()
    }

    fn obs_dim(&self) -> usize {
        4
    }

    fn t_max(&self) -> usize {
        500
    }

    fn default_squash(&self) -> Squash<S> {
        Squash::Sign
    }

    fn reset(&mut self, seed: u64) -> Vec<S> {
        let mut rng = seeded_rng(seed);
        let lo: S = from_f64(-0.05);
        let hi: S = from_f64(0.05);
        self.state = CartPoleState {
            x: rng.gen_range(lo..hi),
            x_dot: rng.gen_range(lo..hi),
            theta: rng.gen_range(lo..hi),
            theta_dot: rng.gen_range(lo..hi),
        };
        self.terminated = false;
        self.observe()
    }

    fn step(&mut self, action: Action<S>) -> Step<S> {
        assert!(!self.terminated, "cart-pole episode already terminated");
        let force = match action {
            Action::Right => self.force_mag,
            Action::Left => -self.force_mag,
            Action::Torque(_) => panic!("cart-pole takes Left/Right actions, not torque"),
        };

        let CartPoleState { x, x_dot, theta, theta_dot } = self.state;
        let cos_theta = theta.cos();
        let sin_theta = theta.sin();
        let four_thirds: S = from_f64(4.0 / 3.0);

        let temp = (force + self.polemass_length * theta_dot * theta_dot * sin_theta) / self.total_mass;
        let theta_acc = (self.gravity * sin_theta - cos_theta * temp)
            / (self.half_length * (four_thirds - self.masspole * cos_theta * cos_theta / self.total_mass));
        let x_acc = temp - self.polemass_length * theta_acc * cos_theta / self.total_mass;

        self.state = CartPoleState {
            x: x + self.tau * x_dot,
            x_dot: x_dot + self.tau * x_acc,
            theta: theta + self.tau * theta_dot,
            theta_dot: theta_dot + self.tau * theta_acc,
        };

        self.terminated = self.state.x.abs() > self.x_threshold
            || self.state.theta.abs() > self.theta_threshold;

        Step {
            observation: self.observe(),
            reward: S::one(),
            natural_termination: self.terminated,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::make_env;

    #[test]
    fn upright_start_earns_reward_one_and_stays_alive() {
        let mut env = CartPole::<f64>::with_state(CartPoleState {
            x: 0.0,
            x_dot: 0.0,
            theta: 0.0,
            theta_dot: 0.0,
        });
        let step = env.step(Action::Right);
        assert_eq!(step.reward, 1.0);
        assert!(!step.natural_termination);
    }

    #[test]
    fn tipping_past_twelve_degrees_terminates() {
        let mut env = CartPole::<f64>::with_state(CartPoleState {
            x: 0.0,
            x_dot: 0.0,
            theta: 0.21,
            theta_dot: 1.0,
        });
        let step = env.step(Action::Left);
        assert!(step.natural_termination, "theta 0.21 rad is past the 12 degree limit");
        assert_eq!(step.reward, 1.0, "the terminating step still earns its reward");
    }

    #[test]
    fn leaving_the_track_terminates() {
        let mut env = CartPole::<f64>::with_state(CartPoleState {
            x: 2.39,
            x_dot: 3.0,
            theta: 0.0,
            theta_dot: 0.0,
        });
        let step = env.step(Action::Right);
        assert!(step.natural_termination, "cart moved past |x| = 2.4");
    }

    #[test]
    #[should_panic(expected = "already terminated")]
    fn stepping_a_terminated_episode_is_rejected() {
        let mut env = CartPole::<f64>::with_state(CartPoleState {
            x: 0.0,
            x_dot: 0.0,
            theta: 0.21,
            theta_dot: 1.0,
        });
        env.step(Action::Left);
        env.step(Action::Left);
    }

    #[test]
    fn different_seeds_give_different_initial_states() {
        let mut env = CartPole::<f64>::new();
        let a = env.reset(7);
        let b = env.reset(8);
        assert_ne!(a, b);
        for v in a {
            assert!(v.abs() < 0.05, "initial components stay inside [-0.05, 0.05]: {v}");
        }
    }

    /// Straightforward second implementation of the same dynamics, written
    /// against the published equations rather than the struct above, used to
    /// cross-check the integrator.
    fn oracle_rollout(start: [f64; 4], always_left: bool, max_steps: usize) -> (usize, [f64; 4]) {
        let (g, mc, mp, l, f_mag, dt) = (9.8, 1.0, 0.1, 0.5, 10.0, 0.02);
        let mut s = start;
        for t in 1..=max_steps {
            let f = if always_left { -f_mag } else { f_mag };
            let (x, xd, th, thd) = (s[0], s[1], s[2], s[3]);
            let temp = (f + mp * l * thd * thd * th.sin()) / (mc + mp);
            let th_acc = (g * th.sin() - th.cos() * temp)
                / (l * (4.0 / 3.0 - mp * th.cos() * th.cos() / (mc + mp)));
            let x_acc = temp - mp * l * th_acc * th.cos() / (mc + mp);
            s = [x + dt * xd, xd + dt * x_acc, th + dt * thd, thd + dt * th_acc];
            let dead = s[0].abs() > 2.4 || s[2].abs() > 12.0 * 2.0 * std::f64::consts::PI / 360.0;
            if dead {
                return (t, s);
            }
        }
        (max_steps, s)
    }

    #[test]
    fn null_policy_matches_an_independent_integrator() {
        let mut env = make_env::<f64>("cartpole").unwrap();
        let obs = env.reset(0);
        let start = [obs[0], obs[1], obs[2], obs[3]];

        let mut steps = 0;
        let mut last = obs;
        for t in 1..=500 {
            let step = env.step(Action::Left);
            last = step.observation;
            steps = t;
            if step.natural_termination {
                break;
            }
        }

        let (oracle_steps, oracle_state) = oracle_rollout(start, true, 500);
        assert_eq!(steps, oracle_steps, "termination step disagrees with the oracle integrator");
        for (a, b) in last.iter().zip(oracle_state.iter()) {
            assert!((a - b).abs() < 1e-9, "state diverged from oracle: {a} vs {b}");
        }
        assert!(steps < 500, "a constant push must tip the pole quickly (got {steps})");
    }
}
