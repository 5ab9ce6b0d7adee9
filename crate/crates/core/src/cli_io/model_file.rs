//! Persisted model: dictionary, weights and generator.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::SystemConfig;
use super::CliError;
use crate::dictionary::{SillDictionary, Steepness};
use crate::generator::{AssemblyMode, KoopmanGenerator};
use crate::linalg::Mat;
use crate::regression::WeightMatrix;
use crate::{Error, Result};

pub const FORMAT_VERSION: &str = "1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshMetadata {
    pub domain_lo: Vec<f64>,
    pub domain_hi: Vec<f64>,
    pub spacing: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub config_sha256: String,
    pub build_version: String,
}

/// On-disk model. Floats are written in shortest round-trip form, so a
/// save/load cycle reproduces every value bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub format_version: String,
    pub state_dim: usize,
    pub alpha: f64,
    pub centers: Vec<Vec<f64>>,
    pub w: Vec<Vec<f64>>,
    pub k: Vec<Vec<f64>>,
    pub assembly: AssemblyMode,
    pub rank_deficient: bool,
    pub mesh: MeshMetadata,
    pub system: SystemConfig,
    pub provenance: Provenance,
}

/// The in-memory objects a model file describes.
#[derive(Clone, Debug)]
pub struct LoadedModel {
    pub dictionary: SillDictionary<f64>,
    pub weights: WeightMatrix<f64>,
    pub generator: KoopmanGenerator<f64>,
    pub system: SystemConfig,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl ModelFile {
    pub fn new(
        dict: &SillDictionary<f64>,
        w: &WeightMatrix<f64>,
        k: &KoopmanGenerator<f64>,
        system: &SystemConfig,
        config_text: &str,
    ) -> Self {
        Self {
            format_version: FORMAT_VERSION.into(),
            state_dim: dict.state_dim(),
            alpha: dict.alpha().get(),
            centers: dict.centers().iter().map(|c| c.to_vec()).collect(),
            w: w.matrix().to_rows(),
            k: k.matrix().to_rows(),
            assembly: k.mode(),
            rank_deficient: k.rank_deficient(),
            mesh: MeshMetadata {
                domain_lo: dict.domain_lo().to_vec(),
                domain_hi: dict.domain_hi().to_vec(),
                spacing: dict.mesh_spacing().to_vec(),
            },
            system: system.clone(),
            provenance: Provenance {
                config_sha256: sha256_hex(config_text.as_bytes()),
                build_version: env!("CARGO_PKG_VERSION").into(),
            },
        }
    }

    /// Rebuilds and cross-checks the dictionary, weights and generator.
    pub fn restore(&self) -> Result<LoadedModel> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Contract(format!(
                "unsupported model format_version {:?}",
                self.format_version
            )));
        }
        let dictionary = SillDictionary::new(
            self.centers.clone(),
            Steepness::new(self.alpha)?,
            self.mesh.domain_lo.clone(),
            self.mesh.domain_hi.clone(),
            self.mesh.spacing.clone(),
        )?;
        if dictionary.state_dim() != self.state_dim {
            return Err(Error::DimensionMismatch {
                expected: self.state_dim,
                actual: dictionary.state_dim(),
                context: "model state_dim",
            });
        }
        let weights = WeightMatrix::new(Mat::from_rows(&self.w)?, &dictionary)?;
        let generator = KoopmanGenerator::from_matrix(Mat::from_rows(&self.k)?, self.state_dim, self.assembly)?
            .with_rank_deficient(self.rank_deficient);
        if generator.n_centers() != dictionary.n_centers() {
            return Err(Error::DimensionMismatch {
                expected: dictionary.lifted_dim(),
                actual: generator.lifted_dim(),
                context: "generator size",
            });
        }
        let n = self.state_dim;
        for i in 0..n {
            let row = generator.matrix().row(1 + i);
            if row[..1 + n].iter().any(|&v| v != 0.0) || row[1 + n..] != *weights.matrix().row(i) {
                return Err(Error::Contract(format!("generator state row {i} differs from [0|0|W]")));
            }
        }
        Ok(LoadedModel {
            dictionary,
            weights,
            generator,
            system: self.system.clone(),
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        std::fs::write(path, self.to_json()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config {
            location: format!("{}:{}:{}", path.display(), e.line(), e.column()),
            message: e.to_string(),
        })
    }
}
