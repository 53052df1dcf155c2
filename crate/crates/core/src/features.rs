//! Feature maps: sparse binary vectors, hashed tile coding and noise
//! augmentation.

use nalgebra::DVector;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum FeatureError {
    #[error("hash dimension {0} is not a power of two")]
    HashDimension(usize),
    #[error("tile group {0} has no variables")]
    EmptyGroup(usize),
    #[error("tile group {group} references variable {var} but only {n_vars} ranges are declared")]
    UnknownVariable { group: usize, var: usize, n_vars: usize },
    #[error("tile group {0} needs at least one tile and one tiling")]
    EmptyGrid(usize),
    #[error("range for variable {0} is empty or non-finite")]
    BadRange(usize),
    #[error("cannot activate {active} of {extra} noise features")]
    TooManyActive { active: usize, extra: usize },
}

/// Sparse feature vector; `active` holds `(index, value)` with strictly
/// increasing indices.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseFeatures {
    dimension: usize,
    active: Vec<(usize, f64)>,
}

impl SparseFeatures {
    /// Binary vector with ones at `indices` (duplicates collapse).
    pub fn binary(dimension: usize, mut indices: Vec<usize>) -> Self {
        indices.sort_unstable();
        indices.dedup();
        assert!(indices.last().is_none_or(|&i| i < dimension), "index out of range");
        SparseFeatures {
            dimension,
            active: indices.into_iter().map(|i| (i, 1.0)).collect(),
        }
    }

    pub fn from_dense(x: &DVector<f64>) -> Self {
        SparseFeatures {
            dimension: x.len(),
            active: x.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (i, *v)).collect(),
        }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn active(&self) -> &[(usize, f64)] {
        &self.active
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.active.iter().map(|(i, _)| *i)
    }

    pub fn to_dense(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.dimension);
        for &(i, v) in &self.active {
            x[i] = v;
        }
        x
    }
}

/// One family of tilings over a subset of the state variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileGroup {
    pub variables: Vec<usize>,
    pub tiles: usize,
    pub tilings: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileCodingConfig {
    pub groups: Vec<TileGroup>,
    pub hash_dimension: usize,
    /// `(low, high)` per state variable; states outside are clipped.
    pub variable_ranges: Vec<(f64, f64)>,
}

impl TileCodingConfig {
    pub fn validate(&self) -> Result<(), FeatureError> {
        if !self.hash_dimension.is_power_of_two() {
            return Err(FeatureError::HashDimension(self.hash_dimension));
        }
        for (i, &(lo, hi)) in self.variable_ranges.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && hi > lo) {
                return Err(FeatureError::BadRange(i));
            }
        }
        for (g, group) in self.groups.iter().enumerate() {
            if group.variables.is_empty() {
                return Err(FeatureError::EmptyGroup(g));
            }
            if group.tiles == 0 || group.tilings == 0 {
                return Err(FeatureError::EmptyGrid(g));
            }
            if let Some(&var) = group.variables.iter().find(|&&v| v >= self.variable_ranges.len()) {
                return Err(FeatureError::UnknownVariable {
                    group: g,
                    var,
                    n_vars: self.variable_ranges.len(),
                });
            }
        }
        Ok(())
    }

    /// Active features per state before hash collisions collapse.
    pub fn total_tilings(&self) -> usize {
        self.groups.iter().map(|g| g.tilings).sum()
    }

    /// Joint position/velocity grid: 10 tilings of 10x10 tiles hashed to 1024.
    pub fn mountain_car() -> Self {
        TileCodingConfig {
            groups: vec![TileGroup {
                variables: vec![0, 1],
                tiles: 10,
                tilings: 10,
            }],
            hash_dimension: 1024,
            variable_ranges: vec![(-1.2, 0.5), (-0.07, 0.07)],
        }
    }

    /// Five unit-range variables tiled one-, two- and three-wise with 32
    /// tilings per group, hashed to 8192 (800 active features).
    pub fn energy_like() -> Self {
        let n = 5;
        let mut groups = Vec::new();
        for i in 0..n {
            groups.push(TileGroup { variables: vec![i], tiles: 4, tilings: 32 });
        }
        for i in 0..n {
            for j in i + 1..n {
                groups.push(TileGroup { variables: vec![i, j], tiles: 4, tilings: 32 });
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    groups.push(TileGroup { variables: vec![i, j, k], tiles: 2, tilings: 32 });
                }
            }
        }
        TileCodingConfig {
            groups,
            hash_dimension: 8192,
            variable_ranges: vec![(0.0, 1.0); n],
        }
    }
}

const HASH_MULTIPLIER: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX_MULTIPLIER: u64 = 0xBF58_476D_1CE4_E5B9;

fn hash_cell(words: &[i64], bits: u32) -> usize {
    let mut h: u64 = 0x243F_6A88_85A3_08D3;
    for &w in words {
        h = (h ^ w as u64).wrapping_mul(MIX_MULTIPLIER);
        h ^= h >> 31;
    }
    if bits == 0 {
        return 0;
    }
    (h.wrapping_mul(HASH_MULTIPLIER) >> (64 - bits)) as usize
}

/// Hashed tile coding of `state`.
///
/// Tiling `t` of a group is displaced by `t * (2 i + 1) / tilings` of a tile
/// width along its `i`-th variable, so tilings are asymmetrically offset.
/// Every tiling contributes one cell; cells hash into `hash_dimension` buckets
/// and colliding cells collapse into one active feature.
pub fn tile_code(state: &[f64], config: &TileCodingConfig) -> SparseFeatures {
    let bits = config.hash_dimension.trailing_zeros();
    let mut indices = Vec::with_capacity(config.total_tilings());
    let mut words = Vec::new();
    for (g, group) in config.groups.iter().enumerate() {
        let scaled: Vec<f64> = group
            .variables
            .iter()
            .map(|&v| {
                let (lo, hi) = config.variable_ranges[v];
                let x = state[v].clamp(lo, hi);
                (x - lo) / (hi - lo) * group.tiles as f64
            })
            .collect();
        for t in 0..group.tilings {
            words.clear();
            words.push(g as i64);
            words.push(t as i64);
            for (i, s) in scaled.iter().enumerate() {
                let offset = ((t * (2 * i + 1)) % group.tilings) as f64 / group.tilings as f64;
                words.push((s + offset).floor() as i64);
            }
            indices.push(hash_cell(&words, bits));
        }
    }
    SparseFeatures::binary(config.hash_dimension, indices)
}

/// Appends `extra` features of which exactly `active` (chosen uniformly) are 1.
pub fn append_noise_features<R: Rng + ?Sized>(
    x: &SparseFeatures,
    extra: usize,
    active: usize,
    rng: &mut R,
) -> Result<SparseFeatures, FeatureError> {
    if active > extra {
        return Err(FeatureError::TooManyActive { active, extra });
    }
    let mut out = x.active.clone();
    let mut chosen: Vec<usize> = if active == extra {
        (0..extra).collect()
    } else {
        index::sample(rng, extra, active).into_vec()
    };
    chosen.sort_unstable();
    out.extend(chosen.into_iter().map(|i| (x.dimension + i, 1.0)));
    Ok(SparseFeatures {
        dimension: x.dimension + extra,
        active: out,
    })
}
