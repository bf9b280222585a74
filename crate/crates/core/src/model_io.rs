//! Versioned JSON documents for fitted models, and atomic file writes.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{self, BlockKind, Dataset};
use crate::ecph::HazardParams;
use crate::error::{Error, Result};
use crate::fa::{BlockParams, FaBlock, FaModel, VariationalSummary};
use crate::joint::{FitMode, JointModel};
use crate::serde_util::{matrix, vector};

pub const FORMAT: &str = "fa-ecph-c-model";
pub const VERSION: u32 = 1;

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    result.map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::io(path, e)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BlockDoc {
    name: String,
    kind: BlockKind,
    trials: u32,
    feature_names: Vec<String>,
    #[serde(with = "matrix")]
    w: DMatrix<f64>,
    #[serde(with = "vector")]
    mu: DVector<f64>,
    #[serde(with = "vector")]
    psi: DVector<f64>,
    /// Learning-set mean of ξ per feature (count blocks).
    #[serde(with = "vector")]
    xi_mean: DVector<f64>,
    alpha_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelDoc {
    format: String,
    version: u32,
    d_z: usize,
    layout_hash: String,
    heywood_flag: bool,
    fit_mode: FitMode,
    kappa_used: f64,
    #[serde(with = "vector")]
    w_t: DVector<f64>,
    #[serde(with = "vector")]
    w_c: DVector<f64>,
    blocks: Vec<BlockDoc>,
}

/// Layout digest of the blocks a model was fitted on; comparable with
/// [`Dataset::layout_hash`].
pub fn model_layout_hash(model: &FaModel) -> String {
    data::layout_hash(
        model
            .blocks
            .iter()
            .map(|b| (b.name.as_str(), b.kind, b.trials, b.feature_names.as_slice())),
    )
}

/// Refuses a dataset whose blocks differ from the ones the model was fitted
/// on (names, kinds, trial counts or feature names).
pub fn check_layout(model: &JointModel, dataset: &Dataset) -> Result<()> {
    let expected = model_layout_hash(&model.fa);
    let got = dataset.layout_hash();
    if expected != got {
        return Err(Error::ModelMismatch(format!(
            "model was fitted on block layout {expected}, dataset has {got}"
        )));
    }
    Ok(())
}

fn to_doc(model: &JointModel) -> ModelDoc {
    ModelDoc {
        format: FORMAT.into(),
        version: VERSION,
        d_z: model.fa.d_z,
        layout_hash: model_layout_hash(&model.fa),
        heywood_flag: model.fa.heywood_flag,
        fit_mode: model.fit_mode,
        kappa_used: model.kappa_used,
        w_t: model.w_t.w.clone(),
        w_c: model.w_c.w.clone(),
        blocks: model
            .fa
            .blocks
            .iter()
            .map(|b| {
                let summary = b
                    .summary
                    .clone()
                    .or_else(|| b.state.as_ref().map(|s| s.summary()))
                    .unwrap_or(VariationalSummary {
                        xi_mean: DVector::zeros(0),
                        alpha_mean: 0.0,
                    });
                BlockDoc {
                    name: b.name.clone(),
                    kind: b.kind,
                    trials: b.trials,
                    feature_names: b.feature_names.clone(),
                    w: b.params.w.clone(),
                    mu: b.params.mu.clone(),
                    psi: b.params.psi.clone(),
                    xi_mean: summary.xi_mean,
                    alpha_mean: summary.alpha_mean,
                }
            })
            .collect(),
    }
}

fn from_doc(doc: ModelDoc) -> Result<JointModel> {
    let bad = |m: String| Err(Error::Serialization(m));
    if doc.format != FORMAT {
        return bad(format!("not a model document (format {:?})", doc.format));
    }
    if doc.version != VERSION {
        return bad(format!("unsupported model version {}", doc.version));
    }
    if doc.w_t.len() != doc.d_z + 1 || doc.w_c.len() != doc.d_z + 1 {
        return bad("hazard vectors must have length d_z + 1".into());
    }
    let mut blocks = Vec::with_capacity(doc.blocks.len());
    for b in doc.blocks {
        let d = b.w.nrows();
        let shapes_ok = b.w.ncols() == doc.d_z
            && b.mu.len() == d
            && b.feature_names.len() == d
            && match b.kind {
                BlockKind::Normal => b.psi.len() == d,
                _ => b.xi_mean.len() == d,
            };
        if !shapes_ok {
            return bad(format!("block {} has inconsistent shapes", b.name));
        }
        let summary = (b.kind != BlockKind::Normal).then(|| VariationalSummary {
            xi_mean: b.xi_mean,
            alpha_mean: b.alpha_mean,
        });
        blocks.push(FaBlock {
            name: b.name,
            kind: b.kind,
            trials: b.trials,
            params: BlockParams {
                w: b.w,
                mu: b.mu,
                psi: b.psi,
            },
            state: None,
            summary,
            feature_names: b.feature_names,
        });
    }
    let model = JointModel {
        fa: FaModel {
            d_z: doc.d_z,
            blocks,
            heywood_flag: doc.heywood_flag,
        },
        w_t: HazardParams::new(doc.w_t),
        w_c: HazardParams::new(doc.w_c),
        kappa_used: doc.kappa_used,
        fit_mode: doc.fit_mode,
    };
    if model_layout_hash(&model.fa) != doc.layout_hash {
        return bad("stored layout hash does not match the stored blocks".into());
    }
    Ok(model)
}

pub fn model_to_json(model: &JointModel) -> Result<String> {
    Ok(serde_json::to_string_pretty(&to_doc(model))?)
}

pub fn model_from_json(text: &str) -> Result<JointModel> {
    from_doc(serde_json::from_str(text)?)
}

pub fn save_model(model: &JointModel, path: &Path) -> Result<()> {
    write_atomic(path, model_to_json(model)?.as_bytes())
}

pub fn load_model(path: &Path) -> Result<JointModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    model_from_json(&text)
}
