//! Eligibility traces: conventional and emphatic (follow-on/emphasis) forms.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TraceMode {
    #[default]
    Conventional,
    Emphatic,
}

/// Eligibility vector plus the emphatic scalars.
///
/// In conventional mode `follow_on` stays 0 and `emphasis` stays 1.
#[derive(Clone, Debug, PartialEq)]
pub struct TraceState {
    pub e: DVector<f64>,
    pub follow_on: f64,
    pub emphasis: f64,
    pub mode: TraceMode,
}

impl TraceState {
    pub fn new(dimension: usize, mode: TraceMode) -> Self {
        let emphasis = match mode {
            TraceMode::Conventional => 1.0,
            TraceMode::Emphatic => 0.0,
        };
        TraceState {
            e: DVector::zeros(dimension),
            follow_on: 0.0,
            emphasis,
            mode,
        }
    }

    /// `e <- rho (gamma lambda e + x)`.
    pub fn update(&mut self, x: &DVector<f64>, gamma: f64, lambda: f64, rho: f64) {
        debug_assert_eq!(self.mode, TraceMode::Conventional);
        self.e.scale_mut(gamma * lambda);
        self.e += x;
        self.e.scale_mut(rho);
    }

    /// `F <- rho_prev gamma F + i`, `M <- lambda i + (1 - lambda) F`,
    /// `e <- rho (gamma lambda e + M x)`.
    pub fn emphatic_update(&mut self, x: &DVector<f64>, gamma: f64, lambda: f64, rho_prev: f64, rho: f64, interest: f64) {
        debug_assert_eq!(self.mode, TraceMode::Emphatic);
        self.follow_on = rho_prev * gamma * self.follow_on + interest;
        self.emphasis = lambda * interest + (1.0 - lambda) * self.follow_on;
        self.e.scale_mut(gamma * lambda);
        self.e.axpy(self.emphasis, x, 1.0);
        self.e.scale_mut(rho);
    }

    /// Dispatches on `mode`.
    pub fn step(&mut self, x: &DVector<f64>, gamma: f64, lambda: f64, rho_prev: f64, rho: f64, interest: f64) {
        match self.mode {
            TraceMode::Conventional => self.update(x, gamma, lambda, rho),
            TraceMode::Emphatic => self.emphatic_update(x, gamma, lambda, rho_prev, rho, interest),
        }
    }
}
