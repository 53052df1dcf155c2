use std::io::{self, Write};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{pct_abs_mean_error, Environment, EvalError, EvaluationSet};
use crate::learners::{LearnerConfig, LearnerError};

/// Error recorded for every evaluation point at or after a divergence.
pub const DIVERGED_ERROR_CAP: f64 = 10.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepTiming {
    pub mean_micros: f64,
    pub max_micros: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub algo: String,
    pub fingerprint: String,
    pub seed: u64,
    /// `(step, error)` pairs; steps strictly increase.
    pub error_curve: Vec<(usize, f64)>,
    pub diverged_at: Option<usize>,
    pub timing: StepTiming,
}

impl RunResult {
    pub fn mean_error(&self) -> f64 {
        self.error_curve.iter().map(|p| p.1).sum::<f64>() / self.error_curve.len() as f64
    }

    pub fn final_error(&self) -> f64 {
        self.error_curve.last().map_or(f64::NAN, |p| p.1)
    }

    /// Error at `step`, if it was an evaluation point.
    pub fn error_at(&self, step: usize) -> Option<f64> {
        self.error_curve.iter().find(|p| p.0 == step).map(|p| p.1)
    }
}

/// Multiples of `interval` up to `n_steps`; `[n_steps]` when there are none
/// (including `n_steps = 0`, which evaluates the initial weights).
pub fn evaluation_steps(n_steps: usize, interval: usize) -> Vec<usize> {
    if interval == 0 || interval > n_steps {
        return vec![n_steps];
    }
    (1..=n_steps / interval).map(|k| k * interval).collect()
}

/// Hex SHA-256 of the canonical JSON of `value` (object keys sorted).
pub fn fingerprint<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_value(value)
        .and_then(|v| serde_json::to_string(&v))
        .expect("config types serialize to JSON");
    Sha256::digest(canonical.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Streams `n_steps` transitions from `env` into a fresh learner and records
/// the percentage error at every evaluation step. Divergence ends the run
/// early, fills the remaining points with [`DIVERGED_ERROR_CAP`] and caps the
/// earlier ones at it.
pub fn run_experiment(
    env: &dyn Environment,
    config: &LearnerConfig,
    label: &str,
    n_steps: usize,
    set: &EvaluationSet,
    eval_interval: usize,
    seed: u64,
) -> Result<RunResult, EvalError> {
    let d = env.dimension();
    if set.dimension() != Some(d) {
        return Err(EvalError::Dimension {
            expected: d,
            got: set.dimension().unwrap_or(0),
        });
    }
    let mut learner = config.build(d, seed)?;
    let mut stream = env.stream(seed)?;
    let checkpoints = evaluation_steps(n_steps, eval_interval);
    let mut curve = Vec::with_capacity(checkpoints.len());
    let mut diverged_at = None;
    let mut total_micros = 0.0;
    let mut max_micros: f64 = 0.0;
    let mut step = 0;

    for &checkpoint in &checkpoints {
        while diverged_at.is_none() && step < checkpoint {
            let tr = stream
                .next()
                .ok_or_else(|| EvalError::Invalid(format!("environment stream ended after {step} steps")))?;
            let start = Instant::now();
            let outcome = learner.observe(&tr);
            let micros = start.elapsed().as_secs_f64() * 1e6;
            total_micros += micros;
            max_micros = max_micros.max(micros);
            step += 1;
            match outcome {
                Ok(()) => {}
                Err(LearnerError::Divergence { step: at, .. }) => {
                    log::debug!("{label} seed {seed} diverged at step {at}");
                    diverged_at = Some(step);
                }
                Err(e) => return Err(e.into()),
            }
        }
        let error = if diverged_at.is_some() {
            DIVERGED_ERROR_CAP
        } else {
            pct_abs_mean_error(learner.weights(), set)?
        };
        curve.push((checkpoint, error));
    }
    if diverged_at.is_some() {
        for point in &mut curve {
            point.1 = point.1.min(DIVERGED_ERROR_CAP);
        }
    }

    Ok(RunResult {
        algo: label.to_string(),
        fingerprint: fingerprint(config),
        seed,
        error_curve: curve,
        diverged_at,
        timing: StepTiming {
            mean_micros: if step > 0 { total_micros / step as f64 } else { 0.0 },
            max_micros,
        },
    })
}

/// One point of a parameter sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub label: String,
    pub config: LearnerConfig,
    pub param_name: String,
    pub param_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub algo: String,
    pub param_name: String,
    pub param_value: f64,
    pub lambda: f64,
    /// Mean over runs of the run's mean-over-time error.
    pub mean_error: f64,
    /// Mean over runs of the error at the last evaluation step.
    pub mean_final_error: f64,
    pub n_diverged: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutput {
    /// One row per entry, in entry order.
    pub rows: Vec<SensitivityRow>,
    /// All runs ordered by (entry, seed).
    pub runs: Vec<RunResult>,
}

impl SweepOutput {
    /// Runs of entry `index`.
    pub fn runs_of(&self, index: usize, runs_per_entry: usize) -> &[RunResult] {
        &self.runs[index * runs_per_entry..(index + 1) * runs_per_entry]
    }
}

/// Runs every entry on every seed in parallel and summarizes each entry.
pub fn sweep(
    env: &dyn Environment,
    entries: &[SweepEntry],
    seeds: &[u64],
    n_steps: usize,
    set: &EvaluationSet,
    eval_interval: usize,
) -> Result<SweepOutput, EvalError> {
    if entries.is_empty() || seeds.is_empty() {
        return Err(EvalError::Invalid("sweep needs at least one entry and one seed".into()));
    }
    for e in entries {
        e.config.validate()?;
    }
    let items: Vec<(usize, u64)> = (0..entries.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let mut runs: Vec<(usize, RunResult)> = items
        .par_iter()
        .map(|&(i, seed)| {
            let e = &entries[i];
            run_experiment(env, &e.config, &e.label, n_steps, set, eval_interval, seed).map(|r| (i, r))
        })
        .collect::<Result<_, _>>()?;
    runs.sort_by_key(|(i, r)| (*i, r.seed));

    let per_entry = seeds.len();
    let rows = entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let group = &runs[i * per_entry..(i + 1) * per_entry];
            SensitivityRow {
                algo: e.label.clone(),
                param_name: e.param_name.clone(),
                param_value: e.param_value,
                lambda: e.config.lambda(),
                mean_error: group.iter().map(|(_, r)| r.mean_error()).sum::<f64>() / per_entry as f64,
                mean_final_error: group.iter().map(|(_, r)| r.final_error()).sum::<f64>() / per_entry as f64,
                n_diverged: group.iter().filter(|(_, r)| r.diverged_at.is_some()).count(),
            }
        })
        .collect();
    Ok(SweepOutput {
        rows,
        runs: runs.into_iter().map(|(_, r)| r).collect(),
    })
}

fn write_header<W: Write>(out: &mut W, fingerprint: &str, version: &str) -> io::Result<()> {
    writeln!(out, "# fingerprint={fingerprint}")?;
    writeln!(out, "# version={version}")
}

/// `algo,seed,step,error` rows after the fingerprint and version header.
pub fn write_curves_csv<W: Write>(out: &mut W, fingerprint: &str, version: &str, runs: &[RunResult]) -> io::Result<()> {
    write_header(out, fingerprint, version)?;
    writeln!(out, "algo,seed,step,error")?;
    for r in runs {
        for &(step, error) in &r.error_curve {
            writeln!(out, "{},{},{},{}", r.algo, r.seed, step, error)?;
        }
    }
    Ok(())
}

/// `algo,param_name,param_value,lambda,mean_error,n_diverged` rows after the
/// fingerprint and version header.
pub fn write_sensitivity_csv<W: Write>(
    out: &mut W,
    fingerprint: &str,
    version: &str,
    rows: &[SensitivityRow],
) -> io::Result<()> {
    write_header(out, fingerprint, version)?;
    writeln!(out, "algo,param_name,param_value,lambda,mean_error,n_diverged")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.algo, r.param_name, r.param_value, r.lambda, r.mean_error, r.n_diverged
        )?;
    }
    Ok(())
}
