//! Fitted-model persistence for the `fit`/`predict` workflow.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpca::{self, BaselineFit};
use crate::rkhs::{self, OperatorEstimate};
use crate::series::Grid;

/// A serialized fit from any method that can predict.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub enum FittedModel {
    Rkhs(OperatorEstimate),
    Baseline(BaselineFit),
}

impl FittedModel {
    pub fn order(&self) -> usize {
        match self {
            FittedModel::Rkhs(est) => est.order(),
            FittedModel::Baseline(fit) => fit.order,
        }
    }

    pub fn grid(&self) -> &Grid {
        match self {
            FittedModel::Rkhs(est) => &est.grid,
            FittedModel::Baseline(fit) => &fit.grid,
        }
    }

    /// One-step-ahead prediction from the last D observed rows.
    pub fn predict_next(&self, history: &DMatrix<f64>) -> Result<DVector<f64>> {
        match self {
            FittedModel::Rkhs(est) => rkhs::predict_next(est, history),
            FittedModel::Baseline(fit) => fpca::baseline_predict(fit, history),
        }
    }
}

pub fn save_model(model: &FittedModel, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer(&mut writer, model)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
    writer.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<FittedModel> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_reader(BufReader::new(file))
        .map_err(|e| Error::invalid(format!("cannot parse model file {path:?}: {e}")))
}
