//! Two-layer GCN encoder with an inner-product decoder.
//!
//! Node features are the identity, so the first weight matrix doubles as a
//! learned per-service feature table:
//!
//! ```text
//! H = relu(P · W0)        n × hidden
//! Z = P · H · W1          n × d
//! Â = Z · Zᵀ              n × n
//! ```
//!
//! The loss is the mean squared error over off-diagonal entries of `Â` against
//! the symmetrized, max-normalized adjacency.

mod adam;
mod io;
mod train;

pub use adam::{adam_step, AdamState};
pub use io::{load_model, save_model, Model, ModelFileError, MODEL_MAGIC};
pub use train::{evaluate_loss, loss_csv, train, LossReport, LossSummary, SnapshotLoss};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::GraphInput;
use crate::linalg::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("non-finite values in {0}")]
    NonFinite(&'static str),
    #[error("training diverged at epoch {epoch} (mean loss {loss})")]
    Diverged { epoch: usize, loss: f64 },
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("training set contains a {0} snapshot; only baseline and event profiles train")]
    DisallowedProfile(crate::graph::Profile),
    #[error("batch is empty")]
    EmptyBatch,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Registry size.
    pub n: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Snapshots per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
}

pub const DEFAULT_HIDDEN_DIM: usize = 32;
pub const DEFAULT_EMBED_DIM: usize = 16;

impl ModelConfig {
    /// Defaults for a registry of `n` services. Hidden and embedding widths
    /// are capped at `n` so that `d ≤ hidden ≤ n` holds for small registries.
    pub fn for_registry(n: usize) -> Self {
        let hidden_dim = DEFAULT_HIDDEN_DIM.min(n);
        Self {
            n,
            hidden_dim,
            embed_dim: DEFAULT_EMBED_DIM.min(hidden_dim),
            epochs: 50,
            learning_rate: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 8,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if !(0 < self.embed_dim && self.embed_dim <= self.hidden_dim && self.hidden_dim <= self.n) {
            return bad(format!(
                "need 0 < embed_dim ({}) <= hidden_dim ({}) <= n ({})",
                self.embed_dim, self.hidden_dim, self.n
            ));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.eps.is_nan() || self.eps <= 0.0 {
            return bad("adam betas must be in [0, 1) and eps positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        Ok(())
    }
}

/// Encoder weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// `n × hidden`
    pub w0: Matrix,
    /// `hidden × d`
    pub w1: Matrix,
}

impl ModelParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            w0: Matrix::zeros(self.w0.rows(), self.w0.cols()),
            w1: Matrix::zeros(self.w1.rows(), self.w1.cols()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.w0.is_finite() && self.w1.is_finite()
    }

    pub fn n(&self) -> usize {
        self.w0.rows()
    }

    /// Hash of the raw parameter bits.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for m in [&self.w0, &self.w1] {
            hasher.update((m.rows() as u64).to_le_bytes());
            hasher.update((m.cols() as u64).to_le_bytes());
            for v in m.as_slice() {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        crate::graph::hex16(&hasher.finalize())
    }
}

/// Glorot-uniform weights and zeroed optimizer state.
pub fn init_params(config: &ModelConfig) -> Result<(ModelParams, AdamState), ModelError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut glorot = |rows: usize, cols: usize| {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-limit..=limit))
    };
    let params = ModelParams {
        w0: glorot(config.n, config.hidden_dim),
        w1: glorot(config.hidden_dim, config.embed_dim),
    };
    let state = AdamState::new(&params);
    Ok((params, state))
}

/// Per-service embeddings for one snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub z: Matrix,
    pub timestamp: i64,
    pub model_fingerprint: String,
}

/// Intermediate activations kept for the backward pass.
struct Forward {
    pre: Matrix,
    ph: Matrix,
    z: Matrix,
}

fn check_shapes(params: &ModelParams, p: &Matrix) -> Result<(), ModelError> {
    let n = params.w0.rows();
    if p.shape() != (n, n) {
        return Err(ModelError::ShapeMismatch(format!(
            "propagation matrix is {}x{}, model expects {n}x{n}",
            p.rows(),
            p.cols()
        )));
    }
    if params.w0.cols() != params.w1.rows() {
        return Err(ModelError::ShapeMismatch("W0 and W1 inner dimensions differ".into()));
    }
    Ok(())
}

fn forward(params: &ModelParams, p: &Matrix) -> Forward {
    let pre = p.matmul(&params.w0);
    let h = pre.map(|x| x.max(0.0));
    let ph = p.matmul(&h);
    let z = ph.matmul(&params.w1);
    Forward { pre, ph, z }
}

/// `Z = P · relu(P · W0) · W1`
pub fn encode_matrix(params: &ModelParams, p: &Matrix) -> Result<Matrix, ModelError> {
    check_shapes(params, p)?;
    let z = forward(params, p).z;
    if !z.is_finite() {
        return Err(ModelError::NonFinite("embeddings"));
    }
    Ok(z)
}

pub fn encode(params: &ModelParams, input: &GraphInput) -> Result<EmbeddingMatrix, ModelError> {
    Ok(EmbeddingMatrix {
        z: encode_matrix(params, &input.propagation)?,
        timestamp: input.timestamp,
        model_fingerprint: params.fingerprint(),
    })
}

/// `Â = Z · Zᵀ`, no squashing.
pub fn decode(z: &Matrix) -> Matrix {
    let n = z.rows();
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = crate::linalg::dot(z.row(i), z.row(j));
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    a
}

/// Mean of squared errors over off-diagonal entries.
pub fn reconstruction_loss(reconstructed: &Matrix, target: &Matrix) -> f64 {
    assert_eq!(reconstructed.shape(), target.shape(), "loss shape mismatch");
    let n = target.rows();
    if n < 2 {
        return 0.0;
    }
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let e = reconstructed[(i, j)] - target[(i, j)];
                sum += e * e;
            }
        }
    }
    sum / (n * n - n) as f64
}

pub fn snapshot_loss(params: &ModelParams, input: &GraphInput) -> Result<f64, ModelError> {
    let z = encode_matrix(params, &input.propagation)?;
    Ok(reconstruction_loss(&decode(&z), &input.target))
}

/// Loss and gradient for one `(P, target)` pair.
fn loss_and_grad(params: &ModelParams, p: &Matrix, target: &Matrix) -> (f64, ModelParams) {
    let n = p.rows();
    let fwd = forward(params, p);
    let a_hat = decode(&fwd.z);
    let loss = reconstruction_loss(&a_hat, target);
    let m = (n * n).saturating_sub(n).max(1) as f64;

    // E = 2(Â - T)/m off the diagonal; dL/dZ = (E + Eᵀ)Z.
    let mut e_sym = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let eij = 2.0 * (a_hat[(i, j)] - target[(i, j)]) / m;
                e_sym[(i, j)] += eij;
                e_sym[(j, i)] += eij;
            }
        }
    }
    let dz = e_sym.matmul(&fwd.z);
    let dw1 = fwd.ph.t_matmul(&dz);
    let mut dpre = p.t_matmul(&dz.matmul_t(&params.w1));
    for (g, &x) in dpre.as_mut_slice().iter_mut().zip(fwd.pre.as_slice()) {
        if x <= 0.0 {
            *g = 0.0;
        }
    }
    let dw0 = p.t_matmul(&dpre);
    (loss, ModelParams { w0: dw0, w1: dw1 })
}

/// Gradient of the mean per-snapshot loss over `batch`, plus that mean loss.
/// Accumulation follows the batch order.
pub fn gradients(params: &ModelParams, batch: &[(&Matrix, &Matrix)]) -> Result<(f64, ModelParams), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut total = params.zeros_like();
    let mut loss = 0.0;
    for (p, target) in batch {
        check_shapes(params, p)?;
        if target.shape() != p.shape() {
            return Err(ModelError::ShapeMismatch("target and propagation shapes differ".into()));
        }
        let (l, g) = loss_and_grad(params, p, target);
        loss += l;
        total.w0.add_assign_scaled(&g.w0, 1.0);
        total.w1.add_assign_scaled(&g.w1, 1.0);
    }
    let k = batch.len() as f64;
    let grads = ModelParams {
        w0: total.w0.scale(1.0 / k),
        w1: total.w1.scale(1.0 / k),
    };
    if !grads.is_finite() || !loss.is_finite() {
        return Err(ModelError::NonFinite("gradients"));
    }
    Ok((loss / k, grads))
}
