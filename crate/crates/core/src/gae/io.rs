//! Plain-text model container.
//!
//! ```text
//! svcgraph-model v1
//! registry_hash <hex>
//! seed <u64>
//! n <usize>
//! ...
//! w0 <rows> <cols>
//! <row values, tab separated>
//! w1 <rows> <cols>
//! ...
//! ```

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use super::{ModelConfig, ModelError, ModelParams};
use crate::graph::ServiceRegistry;
use crate::linalg::Matrix;
use crate::telemetry::write_atomic;

pub const MODEL_MAGIC: &str = "svcgraph-model v1";

#[derive(Debug, Error)]
pub enum ModelFileError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("model file: {0}")]
    Format(String),
    #[error("model was trained on registry {model} but the corpus registry is {corpus}")]
    RegistryMismatch { model: String, corpus: String },
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams,
    pub registry_hash: String,
}

impl Model {
    pub fn to_text(&self) -> String {
        let c = &self.config;
        let mut out = format!("{MODEL_MAGIC}\n");
        out.push_str(&format!("registry_hash {}\n", self.registry_hash));
        out.push_str(&format!("seed {}\n", c.seed));
        out.push_str(&format!("n {}\n", c.n));
        out.push_str(&format!("hidden_dim {}\n", c.hidden_dim));
        out.push_str(&format!("embed_dim {}\n", c.embed_dim));
        out.push_str(&format!("epochs {}\n", c.epochs));
        out.push_str(&format!("learning_rate {}\n", c.learning_rate));
        out.push_str(&format!("beta1 {}\n", c.beta1));
        out.push_str(&format!("beta2 {}\n", c.beta2));
        out.push_str(&format!("eps {}\n", c.eps));
        out.push_str(&format!("batch_size {}\n", c.batch_size));
        for (name, m) in [("w0", &self.params.w0), ("w1", &self.params.w1)] {
            out.push_str(&format!("{name} {} {}\n", m.rows(), m.cols()));
            for i in 0..m.rows() {
                let row: Vec<String> = m.row(i).iter().map(|v| v.to_string()).collect();
                out.push_str(&row.join("\t"));
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, ModelFileError> {
        let fmt = |m: String| ModelFileError::Format(m);
        let mut lines = text.lines();
        if lines.next() != Some(MODEL_MAGIC) {
            return Err(fmt(format!("missing `{MODEL_MAGIC}` header")));
        }
        let mut field = |key: &str| -> Result<String, ModelFileError> {
            let line = lines.next().ok_or_else(|| fmt(format!("missing `{key}`")))?;
            match line.split_once(' ') {
                Some((k, v)) if k == key => Ok(v.to_owned()),
                _ => Err(fmt(format!("expected `{key}`, found {line:?}"))),
            }
        };
        fn num<T: std::str::FromStr>(key: &str, v: String) -> Result<T, ModelFileError> {
            v.parse().map_err(|_| ModelFileError::Format(format!("bad `{key}` value {v:?}")))
        }
        let registry_hash = field("registry_hash")?;
        let seed = num("seed", field("seed")?)?;
        let n = num("n", field("n")?)?;
        let hidden_dim = num("hidden_dim", field("hidden_dim")?)?;
        let embed_dim = num("embed_dim", field("embed_dim")?)?;
        let epochs = num("epochs", field("epochs")?)?;
        let learning_rate = num("learning_rate", field("learning_rate")?)?;
        let beta1 = num("beta1", field("beta1")?)?;
        let beta2 = num("beta2", field("beta2")?)?;
        let eps = num("eps", field("eps")?)?;
        let batch_size = num("batch_size", field("batch_size")?)?;
        let config = ModelConfig {
            n,
            hidden_dim,
            embed_dim,
            epochs,
            learning_rate,
            beta1,
            beta2,
            eps,
            batch_size,
            seed,
        };
        config.validate()?;

        let mut read_matrix = |name: &str, rows: usize, cols: usize| -> Result<Matrix, ModelFileError> {
            let header = lines.next().ok_or_else(|| fmt(format!("missing `{name}`")))?;
            if header != format!("{name} {rows} {cols}") {
                return Err(fmt(format!("expected `{name} {rows} {cols}`, found {header:?}")));
            }
            let mut data = Vec::with_capacity(rows * cols);
            for r in 0..rows {
                let line = lines.next().ok_or_else(|| fmt(format!("{name}: missing row {r}")))?;
                let values: Vec<f64> = line
                    .split('\t')
                    .map(|v| v.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| fmt(format!("{name}: bad row {r}")))?;
                if values.len() != cols {
                    return Err(fmt(format!("{name}: row {r} has {} values", values.len())));
                }
                data.extend(values);
            }
            Ok(Matrix::from_vec(rows, cols, data))
        };
        let w0 = read_matrix("w0", n, hidden_dim)?;
        let w1 = read_matrix("w1", hidden_dim, embed_dim)?;
        let params = ModelParams { w0, w1 };
        if !params.is_finite() {
            return Err(ModelError::NonFinite("model parameters").into());
        }
        Ok(Self {
            config,
            params,
            registry_hash,
        })
    }

    pub fn check_registry(&self, registry: &ServiceRegistry) -> Result<(), ModelFileError> {
        let corpus = registry.fingerprint();
        if corpus != self.registry_hash || registry.len() != self.config.n {
            return Err(ModelFileError::RegistryMismatch {
                model: self.registry_hash.clone(),
                corpus,
            });
        }
        Ok(())
    }
}

pub fn save_model(path: &Path, model: &Model) -> Result<(), ModelFileError> {
    write_atomic(path, model.to_text().as_bytes()).map_err(|source| ModelFileError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Reads a model and checks it was trained against `registry`.
pub fn load_model(path: &Path, registry: &ServiceRegistry) -> Result<Model, ModelFileError> {
    let text = fs::read_to_string(path).map_err(|source| ModelFileError::Io {
        path: path.to_owned(),
        source,
    })?;
    let model = Model::from_text(&text)?;
    model.check_registry(registry)?;
    Ok(model)
}
