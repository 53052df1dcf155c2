use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MountainCarState {
    pub position: f64,
    pub velocity: f64,
}

impl MountainCarState {
    pub fn as_vec(&self) -> Vec<f64> {
        vec![self.position, self.velocity]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MountainCarStep {
    pub next: MountainCarState,
    pub reward: f64,
    pub terminal: bool,
}

/// Textbook mountain-car dynamics (undiscounted, reward -1 per step).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MountainCar;

impl MountainCar {
    pub const MIN_POSITION: f64 = -1.2;
    pub const MAX_POSITION: f64 = 0.5;
    pub const MAX_SPEED: f64 = 0.07;
    pub const GOAL: f64 = 0.5;

    pub fn sample_start<R: Rng + ?Sized>(rng: &mut R) -> MountainCarState {
        MountainCarState {
            position: rng.random_range(-0.6..-0.4),
            velocity: 0.0,
        }
    }

    /// `action` is -1 (reverse), 0 (coast) or +1 (forward).
    pub fn step(state: MountainCarState, action: i8) -> MountainCarStep {
        let mut velocity = state.velocity + 0.001 * f64::from(action) - 0.0025 * (3.0 * state.position).cos();
        velocity = velocity.clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
        let mut position = (state.position + velocity).clamp(Self::MIN_POSITION, Self::MAX_POSITION);
        if position <= Self::MIN_POSITION && velocity < 0.0 {
            position = Self::MIN_POSITION;
            velocity = 0.0;
        }
        MountainCarStep {
            next: MountainCarState { position, velocity },
            reward: -1.0,
            terminal: position >= Self::GOAL,
        }
    }

    /// Runs one episode from `start`; returns the undiscounted return.
    /// Stops early after `max_len` steps.
    pub fn rollout<R: Rng + ?Sized>(
        start: MountainCarState,
        policy: &BangBangPolicy,
        max_len: usize,
        rng: &mut R,
    ) -> f64 {
        let mut state = start;
        let mut ret = 0.0;
        for _ in 0..max_len {
            let step = Self::step(state, policy.action(state, rng));
            ret += step.reward;
            if step.terminal {
                break;
            }
            state = step.next;
        }
        ret
    }
}

/// Pushes in the direction of the velocity (coasting at zero velocity);
/// with probability `randomness` picks a uniformly random action instead.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BangBangPolicy {
    pub randomness: f64,
}

impl BangBangPolicy {
    pub fn new(randomness: f64) -> Self {
        BangBangPolicy { randomness }
    }

    pub fn greedy_action(state: MountainCarState) -> i8 {
        if state.velocity > 0.0 {
            1
        } else if state.velocity < 0.0 {
            -1
        } else {
            0
        }
    }

    pub fn action<R: Rng + ?Sized>(&self, state: MountainCarState, rng: &mut R) -> i8 {
        if self.randomness > 0.0 && rng.random::<f64>() < self.randomness {
            rng.random_range(-1..=1)
        } else {
            Self::greedy_action(state)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forward_when_moving_right() {
        let policy = BangBangPolicy::new(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = MountainCarState { position: -0.5, velocity: 0.02 };
        assert_eq!(policy.action(s, &mut rng), 1);
        let s = MountainCarState { position: -0.5, velocity: -0.02 };
        assert_eq!(policy.action(s, &mut rng), -1);
    }

    #[test]
    fn velocity_is_clipped() {
        let s = MountainCarState { position: -0.5, velocity: 0.0699 };
        let step = MountainCar::step(s, 1);
        assert!(step.next.velocity <= MountainCar::MAX_SPEED);
    }

    #[test]
    fn return_is_negative_step_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let policy = BangBangPolicy::new(0.0);
        let start = MountainCar::sample_start(&mut rng);
        let ret = MountainCar::rollout(start, &policy, 100_000, &mut rng);
        assert!(ret < 0.0);
        assert_eq!(ret, ret.round());
    }
}
