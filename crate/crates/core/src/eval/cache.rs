use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EvalError, RolloutStats};

/// Everything that determines the contents of a rollout cache file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheMetadata {
    pub env: String,
    pub policy: String,
    pub seed: u64,
    pub n_states: usize,
    pub trajectory_len: usize,
    pub n_rollouts: usize,
    pub gamma: f64,
    pub max_len: usize,
}

impl CacheMetadata {
    /// File name keyed by environment, policy and seed.
    pub fn file_name(&self) -> String {
        let clean = |s: &str| -> String {
            s.chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
                .collect()
        };
        format!("{}__{}__seed{}.json", clean(&self.env), clean(&self.policy), self.seed)
    }

    fn first_difference(&self, other: &CacheMetadata) -> Option<String> {
        let fields = [
            ("env", self.env != other.env),
            ("policy", self.policy != other.policy),
            ("seed", self.seed != other.seed),
            ("n_states", self.n_states != other.n_states),
            ("trajectory_len", self.trajectory_len != other.trajectory_len),
            ("n_rollouts", self.n_rollouts != other.n_rollouts),
            ("gamma", self.gamma != other.gamma),
            ("max_len", self.max_len != other.max_len),
        ];
        fields.iter().find(|f| f.1).map(|f| f.0.to_string())
    }
}

/// Persisted evaluation states and their Monte Carlo statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutCache {
    pub metadata: CacheMetadata,
    pub version: String,
    pub states: Vec<Vec<f64>>,
    pub stats: RolloutStats,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CacheOutcome {
    Hit,
    Built,
}

fn io_error(path: &Path, source: std::io::Error) -> EvalError {
    EvalError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Returns the cache under `dir` for `metadata`, building and writing it with
/// `build` when absent. An existing file with different metadata is an error.
///
/// The file is written to a temporary name and renamed into place, so
/// readers never see a partial cache.
pub fn load_or_build_rollouts<F>(
    dir: &Path,
    metadata: &CacheMetadata,
    build: F,
) -> Result<(RolloutCache, CacheOutcome), EvalError>
where
    F: FnOnce() -> Result<(Vec<Vec<f64>>, RolloutStats), EvalError>,
{
    let path: PathBuf = dir.join(metadata.file_name());
    if path.exists() {
        let text = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
        let cache: RolloutCache = serde_json::from_str(&text).map_err(|e| EvalError::Json {
            path: path.display().to_string(),
            source: e,
        })?;
        if let Some(field) = cache.metadata.first_difference(metadata) {
            return Err(EvalError::CacheMismatch {
                path: path.display().to_string(),
                reason: format!("field `{field}` differs"),
            });
        }
        if cache.states.len() != cache.stats.means.len() || cache.stats.means.len() != cache.stats.std_errors.len() {
            return Err(EvalError::CacheMismatch {
                path: path.display().to_string(),
                reason: "state and statistic counts disagree".into(),
            });
        }
        return Ok((cache, CacheOutcome::Hit));
    }

    let (states, stats) = build()?;
    let cache = RolloutCache {
        metadata: metadata.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        states,
        stats,
    };
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let tmp = dir.join(format!(".{}.{}.tmp", metadata.file_name(), std::process::id()));
    let body = serde_json::to_string_pretty(&cache).map_err(|e| EvalError::Json {
        path: tmp.display().to_string(),
        source: e,
    })?;
    let mut file = fs::File::create(&tmp).map_err(|e| io_error(&tmp, e))?;
    file.write_all(body.as_bytes()).map_err(|e| io_error(&tmp, e))?;
    file.sync_all().map_err(|e| io_error(&tmp, e))?;
    fs::rename(&tmp, &path).map_err(|e| io_error(&path, e))?;
    Ok((cache, CacheOutcome::Built))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn metadata() -> CacheMetadata {
        CacheMetadata {
            env: "mountain_car".into(),
            policy: "bang_bang(0.2)".into(),
            seed: 3,
            n_states: 2,
            trajectory_len: 100,
            n_rollouts: 5,
            gamma: 1.0,
            max_len: 1000,
        }
    }

    fn fake_build() -> Result<(Vec<Vec<f64>>, RolloutStats), EvalError> {
        Ok((
            vec![vec![0.0, 1.0], vec![2.0, 3.0]],
            RolloutStats {
                means: vec![-1.0, -2.0],
                std_errors: vec![0.1, 0.2],
            },
        ))
    }

    #[test]
    fn second_call_hits() {
        let dir = tempfile::tempdir().unwrap();
        let (first, outcome) = load_or_build_rollouts(dir.path(), &metadata(), fake_build).unwrap();
        assert_eq!(outcome, CacheOutcome::Built);
        let (second, outcome) =
            load_or_build_rollouts(dir.path(), &metadata(), || panic!("rollouts must not rerun")).unwrap();
        assert_eq!(outcome, CacheOutcome::Hit);
        assert_eq!(first, second);
    }

    #[test]
    fn mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        load_or_build_rollouts(dir.path(), &metadata(), fake_build).unwrap();
        let mut other = metadata();
        other.n_rollouts = 6;
        let err = load_or_build_rollouts(dir.path(), &other, fake_build).unwrap_err();
        assert!(matches!(err, EvalError::CacheMismatch { .. }));
        assert!(err.to_string().contains("n_rollouts"));
    }

    #[test]
    fn file_name_is_sanitized() {
        assert_eq!(metadata().file_name(), "mountain_car__bang_bang_0.2___seed3.json");
    }
}
