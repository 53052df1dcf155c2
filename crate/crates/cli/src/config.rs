use std::path::{Path, PathBuf};

use atdlab::analysis::AnalysisError;
use atdlab::eval::{
    exact_values, fingerprint, load_or_build_rollouts, monte_carlo_values, sample_on_policy_states, CacheMetadata,
    CacheOutcome, Environment, EvalError, EvaluationSet, FiniteMdpSimulator, FiniteMdpTask, MountainCarSimulator,
    MountainCarTask, NoiseFeatures, ValueSource,
};
use atdlab::features::TileCodingConfig;
use atdlab::learners::{LearnerConfig, LearnerError};
use atdlab::mdp::{
    boyan_chain, synthetic_lowrank_mdp, BangBangPolicy, DenseMatrixDoc, MdpDocument, MdpError, Policy, Weighting,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Failure classes that map onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Runtime(m) => write!(f, "error: {m}"),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Learner(LearnerError::Config(m)) => CliError::Config(m),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<MdpError> for CliError {
    fn from(e: MdpError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

fn default_randomness() -> f64 {
    0.2
}

fn default_gamma() -> f64 {
    1.0
}

fn default_max_len() -> usize {
    100_000
}

fn default_trajectory_len() -> usize {
    100_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EnvironmentSpec {
    BoyanChain {},
    MountainCar {
        #[serde(default = "default_randomness")]
        randomness: f64,
        #[serde(default)]
        noise: Option<NoiseFeatures>,
        /// Defaults to the 10 x 10 x 10-tiling grid hashed to 1024.
        #[serde(default)]
        tiles: Option<TileCodingConfig>,
    },
    Synthetic {
        n_states: usize,
        dimension: usize,
        intrinsic_rank: usize,
        seed: u64,
    },
    /// A finite MDP in the JSON document format; relative paths resolve
    /// against the config file.
    MdpFile { path: PathBuf },
    /// A bare linear system `A w = b`, only usable by `analyze`.
    LinearSystem { a: DenseMatrixDoc, b: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvaluationSpec {
    /// Dynamic-programming values of every state of a finite MDP.
    Exact {},
    /// Monte Carlo returns. Mountain car samples `n_states` states from one
    /// on-policy trajectory of `trajectory_len` steps; finite MDPs use every state.
    MonteCarlo {
        #[serde(default)]
        n_states: Option<usize>,
        #[serde(default = "default_trajectory_len")]
        trajectory_len: usize,
        n_rollouts: usize,
        #[serde(default = "default_gamma")]
        gamma: f64,
        #[serde(default = "default_max_len")]
        max_len: usize,
        #[serde(default)]
        seed: u64,
    },
}

impl Default for EvaluationSpec {
    fn default() -> Self {
        EvaluationSpec::Exact {}
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Protocol {
    pub n_steps: usize,
    pub eval_interval: usize,
    pub runs: usize,
    /// First run seed; run `i` uses `seed + seed_offset + i`.
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSpec {
    #[serde(default)]
    pub label: Option<String>,
    pub learner: LearnerConfig,
}

impl LearnerSpec {
    pub fn label(&self) -> String {
        self.label.clone().unwrap_or_else(|| self.learner.name().to_string())
    }
}

/// One-dimensional grid over `param`, optionally crossed with a grid of
/// `lambda` values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub label: Option<String>,
    pub base: LearnerConfig,
    pub param: String,
    pub values: Vec<f64>,
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionRule {
    /// The `k` eigenvalues of largest modulus.
    #[default]
    TopK,
    /// Every eigenvalue with negative real part, filled up to `k` by modulus.
    CoverNegative,
}

fn default_alphas() -> Vec<f64> {
    vec![1.0]
}

fn default_iterations() -> usize {
    10_000
}

fn default_tolerance() -> f64 {
    1e-8
}

fn default_curve_points() -> usize {
    20
}

fn default_weighting() -> Weighting {
    Weighting::Stationary
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSpec {
    #[serde(default)]
    pub lambda: f64,
    #[serde(default = "default_weighting")]
    pub weighting: Weighting,
    pub ranks: Vec<usize>,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    /// Absolute regularizer values.
    #[serde(default)]
    pub etas: Option<Vec<f64>>,
    /// Regularizer values as fractions of the largest valid one for each
    /// (k, alpha).
    #[serde(default)]
    pub eta_fractions: Option<Vec<f64>>,
    #[serde(default)]
    pub selection: SelectionRule,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_curve_points")]
    pub curve_points: usize,
    /// Picard exponent for the rate bound; omitted means no bound curve.
    #[serde(default)]
    pub picard_p: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub environment: EnvironmentSpec,
    #[serde(default)]
    pub evaluation: EvaluationSpec,
    #[serde(default)]
    pub protocol: Option<Protocol>,
    #[serde(default)]
    pub learners: Vec<LearnerSpec>,
    #[serde(default)]
    pub sweeps: Vec<SweepSpec>,
    #[serde(default)]
    pub analysis: Option<AnalysisSpec>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// A parsed config together with the directory relative paths resolve from.
pub struct LoadedConfig {
    pub config: ExperimentConfig,
    pub base_dir: PathBuf,
}

pub fn load_config(path: &Path) -> Result<LoadedConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let config: ExperimentConfig =
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    config.validate()?;
    Ok(LoadedConfig {
        config,
        base_dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    })
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(CliError::Config(format!("name `{}` must be a non-empty file stem", self.name)));
        }
        if let Some(p) = &self.protocol {
            if p.runs == 0 {
                return Err(CliError::Config("protocol.runs must be at least 1".into()));
            }
        }
        for (i, l) in self.learners.iter().enumerate() {
            l.learner
                .validate()
                .map_err(|e| CliError::Config(format!("learners[{i}]: {e}")))?;
        }
        for (i, s) in self.sweeps.iter().enumerate() {
            if s.values.is_empty() {
                return Err(CliError::Config(format!("sweeps[{i}].values is empty")));
            }
            for entry in expand_sweep(s).map_err(|e| CliError::Config(format!("sweeps[{i}]: {e}")))? {
                entry
                    .1
                    .validate()
                    .map_err(|e| CliError::Config(format!("sweeps[{i}] ({} = {}): {e}", s.param, entry.0)))?;
            }
        }
        if let EnvironmentSpec::MountainCar { randomness, .. } = &self.environment {
            if !(0.0..=1.0).contains(randomness) {
                return Err(CliError::Config(format!("environment.randomness = {randomness} outside [0, 1]")));
            }
            if matches!(self.evaluation, EvaluationSpec::Exact {}) {
                return Err(CliError::Config(
                    "mountain car has no exact values; set evaluation.source to monte_carlo".into(),
                ));
            }
        }
        if let EvaluationSpec::MonteCarlo { n_states, .. } = &self.evaluation {
            let is_car = matches!(self.environment, EnvironmentSpec::MountainCar { .. });
            if is_car && n_states.is_none() {
                return Err(CliError::Config("missing field `evaluation.n_states` for mountain car".into()));
            }
            if !is_car && n_states.is_some() {
                return Err(CliError::Config(
                    "evaluation.n_states only applies to mountain car; finite MDPs evaluate every state".into(),
                ));
            }
        }
        if let Some(a) = &self.analysis {
            if a.etas.is_some() == a.eta_fractions.is_some() {
                return Err(CliError::Config("analysis needs exactly one of `etas` and `eta_fractions`".into()));
            }
            if a.ranks.is_empty() || a.alphas.is_empty() {
                return Err(CliError::Config("analysis.ranks and analysis.alphas must be nonempty".into()));
            }
        }
        Ok(())
    }

    pub fn fingerprint(&self, seed_offset: u64) -> String {
        fingerprint(&serde_json::json!({ "config": self, "seed_offset": seed_offset }))
    }

    pub fn protocol(&self) -> Result<&Protocol, CliError> {
        self.protocol
            .as_ref()
            .ok_or_else(|| CliError::Config("missing field `protocol`".into()))
    }

    pub fn seeds(&self, seed_offset: u64) -> Result<Vec<u64>, CliError> {
        let p = self.protocol()?;
        Ok((0..p.runs as u64).map(|i| p.seed + seed_offset + i).collect())
    }
}

/// `(param value, config)` pairs of a sweep, lambda-major.
pub fn expand_sweep(s: &SweepSpec) -> Result<Vec<(f64, LearnerConfig)>, LearnerError> {
    let bases = match &s.lambdas {
        Some(ls) => ls
            .iter()
            .map(|&l| s.base.with_param("lambda", serde_json::json!(l)))
            .collect::<Result<Vec<_>, _>>()?,
        None => vec![s.base.clone()],
    };
    let mut out = Vec::new();
    for base in &bases {
        for &v in &s.values {
            out.push((v, base.with_param(&s.param, serde_json::json!(v))?));
        }
    }
    Ok(out)
}

/// The learning environment and, for finite MDPs, the model behind it.
pub enum BuiltEnvironment {
    Finite(FiniteMdpTask),
    MountainCar(MountainCarTask),
}

impl BuiltEnvironment {
    pub fn as_env(&self) -> &dyn Environment {
        match self {
            BuiltEnvironment::Finite(t) => t,
            BuiltEnvironment::MountainCar(t) => t,
        }
    }
}

fn finite_task(spec: &EnvironmentSpec, base_dir: &Path) -> Result<Option<FiniteMdpTask>, CliError> {
    Ok(match spec {
        EnvironmentSpec::BoyanChain {} => {
            let (mdp, x) = boyan_chain();
            Some(FiniteMdpTask::on_policy(mdp, x, Policy::uniform(13, 1)))
        }
        EnvironmentSpec::Synthetic {
            n_states,
            dimension,
            intrinsic_rank,
            seed,
        } => {
            let (mdp, x) = synthetic_lowrank_mdp(*n_states, *dimension, *intrinsic_rank, *seed)
                .map_err(|e| CliError::Config(format!("environment: {e}")))?;
            Some(FiniteMdpTask::on_policy(mdp, x, Policy::uniform(*n_states, 1)))
        }
        EnvironmentSpec::MdpFile { path } => {
            let full = base_dir.join(path);
            let doc = MdpDocument::read(&full).map_err(|e| CliError::Config(format!("{}: {e}", full.display())))?;
            let loaded = doc.load().map_err(|e| CliError::Config(format!("{}: {e}", full.display())))?;
            Some(FiniteMdpTask {
                mdp: loaded.mdp,
                features: loaded.features,
                behavior: loaded.behavior,
                target: loaded.target,
            })
        }
        EnvironmentSpec::MountainCar { .. } | EnvironmentSpec::LinearSystem { .. } => None,
    })
}

pub fn build_environment(spec: &EnvironmentSpec, base_dir: &Path) -> Result<BuiltEnvironment, CliError> {
    if let Some(task) = finite_task(spec, base_dir)? {
        return Ok(BuiltEnvironment::Finite(task));
    }
    match spec {
        EnvironmentSpec::MountainCar {
            randomness,
            noise,
            tiles,
        } => {
            let tiles = tiles.clone().unwrap_or_else(TileCodingConfig::mountain_car);
            let task = MountainCarTask::new(tiles, BangBangPolicy::new(*randomness), *noise)
                .map_err(|e| CliError::Config(format!("environment: {e}")))?;
            Ok(BuiltEnvironment::MountainCar(task))
        }
        EnvironmentSpec::LinearSystem { .. } => Err(CliError::Config(
            "a linear_system environment has no transitions; it is only usable by `analyze`".into(),
        )),
        _ => unreachable!("finite environments handled above"),
    }
}

/// Exact `(A, b)` for `analyze`.
pub fn analysis_system(
    spec: &EnvironmentSpec,
    base_dir: &Path,
    analysis: &AnalysisSpec,
) -> Result<(DMatrix<f64>, DVector<f64>), CliError> {
    const MAX_DIM: usize = 200;
    let guidance = "exact analysis is limited to d <= 200; use a smaller feature set, the synthetic generator or a linear_system environment";
    if let EnvironmentSpec::LinearSystem { a, b } = spec {
        let a = a.to_matrix().map_err(|e| CliError::Config(format!("environment.a: {e}")))?;
        if a.nrows() != a.ncols() || a.nrows() != b.len() {
            return Err(CliError::Config(format!(
                "environment.a is {}x{} but b has {} entries",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        if a.nrows() > MAX_DIM {
            return Err(CliError::Config(format!("d = {} is too large: {guidance}", a.nrows())));
        }
        return Ok((a, DVector::from_vec(b.clone())));
    }
    let Some(task) = finite_task(spec, base_dir)? else {
        return Err(CliError::Config(format!(
            "analyze needs a finite environment; {guidance}"
        )));
    };
    let d = task.features.ncols();
    if d > MAX_DIM {
        return Err(CliError::Config(format!("d = {d} is too large: {guidance}")));
    }
    let sys = atdlab::mdp::exact_system(
        &task.mdp,
        &task.target,
        &task.behavior,
        &task.features,
        analysis.lambda,
        analysis.weighting,
    )?;
    Ok((sys.a_matrix, sys.b_vector))
}

fn environment_key(spec: &EnvironmentSpec) -> (String, String) {
    match spec {
        EnvironmentSpec::BoyanChain {} => ("boyan_chain".into(), "target".into()),
        EnvironmentSpec::MountainCar { randomness, .. } => ("mountain_car".into(), format!("bang_bang({randomness})")),
        EnvironmentSpec::Synthetic {
            n_states,
            dimension,
            intrinsic_rank,
            seed,
        } => (
            format!("synthetic({n_states},{dimension},{intrinsic_rank},{seed})"),
            "target".into(),
        ),
        EnvironmentSpec::MdpFile { path } => (
            format!("mdp_file({})", path.display()),
            "target".into(),
        ),
        EnvironmentSpec::LinearSystem { .. } => ("linear_system".into(), "none".into()),
    }
}

/// How the evaluation set was obtained, for progress messages.
pub enum EvaluationOrigin {
    Exact,
    Cache(CacheOutcome, PathBuf),
}

/// Builds the evaluation set, running or reusing Monte Carlo rollouts.
pub fn build_evaluation_set(
    config: &ExperimentConfig,
    env: &BuiltEnvironment,
    cache_dir: &Path,
) -> Result<(EvaluationSet, EvaluationOrigin), CliError> {
    match (&config.evaluation, env) {
        (EvaluationSpec::Exact {}, BuiltEnvironment::Finite(task)) => {
            let v = exact_values(&task.mdp, &task.target)?;
            Ok((EvaluationSet::exact(&task.features, &v)?, EvaluationOrigin::Exact))
        }
        (EvaluationSpec::Exact {}, BuiltEnvironment::MountainCar(_)) => Err(CliError::Config(
            "mountain car has no exact values; set evaluation.source to monte_carlo".into(),
        )),
        (
            EvaluationSpec::MonteCarlo {
                n_states,
                trajectory_len,
                n_rollouts,
                gamma,
                max_len,
                seed,
            },
            _,
        ) => {
            let (env_name, policy_name) = environment_key(&config.environment);
            let source = ValueSource::MonteCarlo {
                n_rollouts: *n_rollouts,
                gamma: *gamma,
                max_len: *max_len,
                seed: *seed,
            };
            match env {
                BuiltEnvironment::MountainCar(task) => {
                    let n_states = n_states.expect("validated: mountain car has n_states");
                    let metadata = CacheMetadata {
                        env: env_name,
                        policy: policy_name,
                        seed: *seed,
                        n_states,
                        trajectory_len: *trajectory_len,
                        n_rollouts: *n_rollouts,
                        gamma: *gamma,
                        max_len: *max_len,
                    };
                    let path = cache_dir.join(metadata.file_name());
                    let (cache, outcome) = load_or_build_rollouts(cache_dir, &metadata, || {
                        let states = sample_on_policy_states(&task.policy, *trajectory_len, n_states, *seed)?;
                        let sim = MountainCarSimulator { policy: task.policy };
                        let stats = monte_carlo_values(&sim, &states, *n_rollouts, *gamma, *max_len, seed.wrapping_add(1));
                        Ok((states.iter().map(|s| s.as_vec()).collect(), stats))
                    })?;
                    let states: Vec<_> = cache
                        .states
                        .iter()
                        .map(|s| atdlab::mdp::MountainCarState {
                            position: s[0],
                            velocity: s[1],
                        })
                        .collect();
                    let features = task.evaluation_features(&states, seed.wrapping_add(2));
                    let set = cache.stats.into_evaluation_set(features, cache.states, source)?;
                    Ok((set, EvaluationOrigin::Cache(outcome, path)))
                }
                BuiltEnvironment::Finite(task) => {
                    let n = task.mdp.n_states();
                    let metadata = CacheMetadata {
                        env: env_name,
                        policy: policy_name,
                        seed: *seed,
                        n_states: n,
                        trajectory_len: 0,
                        n_rollouts: *n_rollouts,
                        gamma: *gamma,
                        max_len: *max_len,
                    };
                    let path = cache_dir.join(metadata.file_name());
                    let (cache, outcome) = load_or_build_rollouts(cache_dir, &metadata, || {
                        let states: Vec<usize> = (0..n).collect();
                        let sim = FiniteMdpSimulator {
                            mdp: &task.mdp,
                            policy: &task.target,
                        };
                        let stats = monte_carlo_values(&sim, &states, *n_rollouts, *gamma, *max_len, *seed);
                        Ok((states.iter().map(|&s| vec![s as f64]).collect(), stats))
                    })?;
                    let features = (0..n).map(|s| task.features.row(s).transpose()).collect();
                    let set = cache.stats.into_evaluation_set(features, cache.states, source)?;
                    Ok((set, EvaluationOrigin::Cache(outcome, path)))
                }
            }
        }
    }
}
