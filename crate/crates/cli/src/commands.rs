use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use atdlab::eval::{sweep, write_curves_csv, write_sensitivity_csv, CacheOutcome, RunResult, SweepEntry};

use crate::config::{build_environment, build_evaluation_set, expand_sweep, CliError, EvaluationOrigin, LoadedConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Paths and seeds shared by every subcommand.
pub struct Context {
    pub output_dir: PathBuf,
    pub cache_dir: PathBuf,
    pub seed_offset: u64,
}

fn create_output(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
    }
    let file = File::create(path).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
    Ok(BufWriter::new(file))
}

fn report_origin(origin: &EvaluationOrigin, n: usize) {
    match origin {
        EvaluationOrigin::Exact => eprintln!("evaluation: {n} states with exact values"),
        EvaluationOrigin::Cache(CacheOutcome::Hit, path) => {
            eprintln!("evaluation: cache hit, {n} states from {}", path.display())
        }
        EvaluationOrigin::Cache(CacheOutcome::Built, path) => {
            eprintln!("evaluation: ran rollouts for {n} states, cached at {}", path.display())
        }
    }
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn summary_line(label: &str, runs: &[RunResult]) -> String {
    let finals: Vec<f64> = runs.iter().map(RunResult::final_error).collect();
    let means: Vec<f64> = runs.iter().map(RunResult::mean_error).collect();
    let (final_mean, final_se) = mean_and_se(&finals);
    let (time_mean, _) = mean_and_se(&means);
    let diverged = runs.iter().filter(|r| r.diverged_at.is_some()).count();
    let micros = runs.iter().map(|r| r.timing.mean_micros).sum::<f64>() / runs.len() as f64;
    format!(
        "{label}: final error {:.3}% +- {:.3}%, mean over time {:.3}%, {diverged}/{} diverged, {micros:.1} us/step",
        100.0 * final_mean,
        100.0 * final_se,
        100.0 * time_mean,
        runs.len()
    )
}

/// Runs every configured learner on every seed and writes the curves CSV.
pub fn run(loaded: &LoadedConfig, ctx: &Context) -> Result<PathBuf, CliError> {
    let config = &loaded.config;
    if config.learners.is_empty() {
        return Err(CliError::Config("`run` needs a nonempty `learners` list".into()));
    }
    let protocol = config.protocol()?;
    let seeds = config.seeds(ctx.seed_offset)?;
    let env = build_environment(&config.environment, &loaded.base_dir)?;
    let (set, origin) = build_evaluation_set(config, &env, &ctx.cache_dir)?;
    report_origin(&origin, set.len());

    let entries: Vec<SweepEntry> = config
        .learners
        .iter()
        .map(|l| SweepEntry {
            label: l.label(),
            config: l.learner.clone(),
            param_name: String::new(),
            param_value: 0.0,
        })
        .collect();
    let out = sweep(env.as_env(), &entries, &seeds, protocol.n_steps, &set, protocol.eval_interval)?;
    for (i, e) in entries.iter().enumerate() {
        println!("{}", summary_line(&e.label, out.runs_of(i, seeds.len())));
    }

    let path = ctx.output_dir.join(format!("{}_curves.csv", config.name));
    let mut w = create_output(&path)?;
    write_curves_csv(&mut w, &config.fingerprint(ctx.seed_offset), VERSION, &out.runs)?;
    w.flush()?;
    eprintln!("wrote {}", path.display());
    Ok(path)
}

/// Runs every sweep grid and writes the sensitivity CSV.
pub fn sweep_cmd(loaded: &LoadedConfig, ctx: &Context) -> Result<PathBuf, CliError> {
    let config = &loaded.config;
    if config.sweeps.is_empty() {
        return Err(CliError::Config("`sweep` needs a nonempty `sweeps` list".into()));
    }
    let protocol = config.protocol()?;
    let seeds = config.seeds(ctx.seed_offset)?;
    let env = build_environment(&config.environment, &loaded.base_dir)?;
    let (set, origin) = build_evaluation_set(config, &env, &ctx.cache_dir)?;
    report_origin(&origin, set.len());

    let mut entries = Vec::new();
    for s in &config.sweeps {
        let label = s.label.clone().unwrap_or_else(|| s.base.name().to_string());
        for (value, learner) in expand_sweep(s).map_err(|e| CliError::Config(e.to_string()))? {
            entries.push(SweepEntry {
                label: label.clone(),
                config: learner,
                param_name: s.param.clone(),
                param_value: value,
            });
        }
    }
    let out = sweep(env.as_env(), &entries, &seeds, protocol.n_steps, &set, protocol.eval_interval)?;

    let mut labels: Vec<&str> = out.rows.iter().map(|r| r.algo.as_str()).collect();
    labels.dedup();
    for label in labels {
        let best = out
            .rows
            .iter()
            .filter(|r| r.algo == label)
            .min_by(|a, b| a.mean_error.total_cmp(&b.mean_error))
            .expect("every label has rows");
        println!(
            "{label}: best {} = {} (lambda {}) with mean error {:.3}%, {}/{} diverged",
            best.param_name,
            best.param_value,
            best.lambda,
            100.0 * best.mean_error,
            best.n_diverged,
            seeds.len()
        );
    }

    let path = ctx.output_dir.join(format!("{}_sensitivity.csv", config.name));
    let mut w = create_output(&path)?;
    write_sensitivity_csv(&mut w, &config.fingerprint(ctx.seed_offset), VERSION, &out.rows)?;
    w.flush()?;
    eprintln!("wrote {}", path.display());
    Ok(path)
}

/// Builds the evaluation set, reusing an existing cache.
pub fn rollouts(loaded: &LoadedConfig, ctx: &Context) -> Result<(), CliError> {
    let config = &loaded.config;
    let env = build_environment(&config.environment, &loaded.base_dir)?;
    let (set, origin) = build_evaluation_set(config, &env, &ctx.cache_dir)?;
    match origin {
        EvaluationOrigin::Exact => {
            println!("source=exact: skipped rollouts, using dynamic-programming values for {} states", set.len())
        }
        EvaluationOrigin::Cache(CacheOutcome::Hit, path) => {
            println!("cache hit: {} ({} states, 0 rollouts run)", path.display(), set.len())
        }
        EvaluationOrigin::Cache(CacheOutcome::Built, path) => {
            println!("built {} ({} states)", path.display(), set.len())
        }
    }
    Ok(())
}
