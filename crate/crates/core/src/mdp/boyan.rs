use nalgebra::{DMatrix, DVector};

use super::FiniteMdp;

/// Number of states in Boyan's chain (state indices 0..=12, start at 12).
pub const BOYAN_STATES: usize = 13;

/// Boyan's 13-state chain with its 4-dimensional interpolating features.
///
/// From `s >= 2` the chain moves to `s - 1` or `s - 2` with probability 1/2
/// and reward -3; from `s = 1` it moves to the terminal state 0 with reward -2.
/// Entering state 0 has discount 0. State 0 restarts the next episode at
/// state 12 with reward 0 and discount 0, so the stream is continuing and
/// `v(0) = 0`.
pub fn boyan_chain() -> (FiniteMdp, DMatrix<f64>) {
    let n = BOYAN_STATES;
    let mut transition = vec![vec![vec![0.0; n]]; n];
    let mut reward = vec![vec![vec![0.0; n]]; n];
    let mut discount = vec![vec![vec![1.0; n]]; n];

    for s in 2..n {
        for next in [s - 1, s - 2] {
            transition[s][0][next] = 0.5;
            reward[s][0][next] = -3.0;
        }
    }
    transition[1][0][0] = 1.0;
    reward[1][0][0] = -2.0;
    for s in 0..n {
        discount[s][0][0] = 0.0;
    }
    transition[0][0][n - 1] = 1.0;
    discount[0][0][n - 1] = 0.0;

    let mut start = vec![0.0; n];
    start[n - 1] = 1.0;

    let mdp = FiniteMdp::new(transition, reward, discount, start).expect("Boyan chain is well formed");
    (mdp, boyan_features())
}

/// Rows are states 0..=12. Anchors at states 12, 8, 4, 0 are unit vectors and
/// the states in between interpolate linearly.
pub fn boyan_features() -> DMatrix<f64> {
    let mut x = DMatrix::zeros(BOYAN_STATES, 4);
    for s in 0..BOYAN_STATES {
        let offset = 12 - s;
        let anchor = offset / 4;
        let frac = (offset % 4) as f64 / 4.0;
        x[(s, anchor)] = 1.0 - frac;
        if frac > 0.0 {
            x[(s, anchor + 1)] = frac;
        }
    }
    x
}

/// True values `v(s) = -2 s`.
pub fn boyan_true_values() -> DVector<f64> {
    DVector::from_fn(BOYAN_STATES, |s, _| -2.0 * s as f64)
}
