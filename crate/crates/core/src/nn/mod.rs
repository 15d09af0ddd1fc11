//! Multitask recurrent network written against plain `Vec<f64>` buffers.

pub mod artifact;
pub mod lstm;
pub mod matrix;
pub mod model;

pub use artifact::ModelArtifact;
pub use lstm::{lstm_cell_forward, LstmLayerWeights};
pub use matrix::Matrix;
pub use model::{
    init_params, Architecture, DenseLayer, ForwardTrace, Head, Mode, ModelConfig, ModelParams,
    Output, RecurrentLayer, Target,
};

/// Lower/upper clamp applied to probabilities before taking logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy plus squared error, equally weighted.
pub fn multitask_loss(p: f64, y_hat: f64, y_clf: u8, y_reg: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let bce = if y_clf == 1 { -p.ln() } else { -(1.0 - p).ln() };
    let r = y_hat - y_reg;
    bce + r * r
}

/// Mean of per-sample losses.
pub fn batch_loss(per_sample: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = per_sample
        .into_iter()
        .fold((0.0, 0usize), |(s, n), l| (s + l, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Named flat views over a parameter set, in a fixed order.
pub trait Parameters {
    fn tensors(&self) -> Vec<(String, &[f64])>;
    fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Euclidean norm over all tensors.
    fn norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}
