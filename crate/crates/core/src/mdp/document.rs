use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{FiniteMdp, MdpError, Policy};

/// Dense matrix stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenseMatrixDoc {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl DenseMatrixDoc {
    pub fn to_matrix(&self) -> Result<DMatrix<f64>, MdpError> {
        if self.data.len() != self.rows * self.cols {
            return Err(MdpError::Shape(format!(
                "matrix declares {}x{} but has {} entries",
                self.rows,
                self.cols,
                self.data.len()
            )));
        }
        Ok(DMatrix::from_row_slice(self.rows, self.cols, &self.data))
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let data = (0..m.nrows()).flat_map(|r| m.row(r).iter().copied().collect::<Vec<_>>()).collect();
        DenseMatrixDoc {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
    }
}

/// JSON form of a finite MDP together with its features and policies.
///
/// Tensors are nested `[s][a][s']`; the feature matrix is dense row-major with
/// one row per state. `behavior` defaults to `target` (on-policy).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MdpDocument {
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<Vec<f64>>>,
    pub discount: Vec<Vec<Vec<f64>>>,
    pub start_distribution: Vec<f64>,
    pub features: DenseMatrixDoc,
    pub target: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior: Option<Vec<Vec<f64>>>,
}

/// Parsed, validated contents of an [`MdpDocument`].
pub struct LoadedMdp {
    pub mdp: FiniteMdp,
    pub features: DMatrix<f64>,
    pub target: Policy,
    pub behavior: Policy,
}

impl MdpDocument {
    pub fn from_json(text: &str) -> Result<Self, MdpError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn read(path: &Path) -> Result<Self, MdpError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn load(&self) -> Result<LoadedMdp, MdpError> {
        let mdp = FiniteMdp::new(
            self.transition.clone(),
            self.reward.clone(),
            self.discount.clone(),
            self.start_distribution.clone(),
        )?;
        let features = self.features.to_matrix()?;
        if features.nrows() != mdp.n_states() {
            return Err(MdpError::Shape(format!(
                "features have {} rows for {} states",
                features.nrows(),
                mdp.n_states()
            )));
        }
        let target = Policy::new(self.target.clone())?;
        let behavior = match &self.behavior {
            Some(rows) => Policy::new(rows.clone())?,
            None => target.clone(),
        };
        mdp.check_policy(&target)?;
        mdp.check_policy(&behavior)?;
        Ok(LoadedMdp {
            mdp,
            features,
            target,
            behavior,
        })
    }
}
