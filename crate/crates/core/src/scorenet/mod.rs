//! Permutation-equivariant attention score network and its meta-training.
//!
//! A measurement set of `k` points becomes `k` tokens. An embedding layer is
//! followed by two blocks of multi-head self-attention and an ELU feed-forward
//! layer, each with a residual connection, and a final linear read-out. There
//! are no positional encodings and no layer normalization, so permuting the
//! tokens permutes the output.
//!
//! Training minimizes `tr(∂s/∂f) + ½‖s‖²` with the trace computed exactly.

mod network;
mod serial;
pub mod spectral;
mod tape;
mod train;

pub use network::{
    regression_tokens, Block, Linear, ScoreNetConfig, ScoreNetworkParams, TokenLayout, ATTENTION_INIT_SCALE,
};
pub use serial::{LayerRecord, ScoreNetDocument, FORMAT_VERSION};
pub use spectral::{spectral_normalize, SpectralStep};
pub use train::{meta_train, train_distribution, MetaTrainOptions, ScoreTrainer, TrainOutcome};

use nalgebra::{DMatrix, DVector};

use crate::error::{MarsError, Result};

/// A score model over the function values at a measurement set.
pub trait MarginalScore {
    fn score(&self, x: &DMatrix<f64>, f: &DVector<f64>) -> Result<DVector<f64>>;
    /// `Σ_i ∂s_i/∂f_i`.
    fn jacobian_trace(&self, x: &DMatrix<f64>, f: &DVector<f64>) -> Result<f64>;
}

impl MarginalScore for ScoreNetworkParams {
    fn score(&self, x: &DMatrix<f64>, f: &DVector<f64>) -> Result<DVector<f64>> {
        self.forward(x, f)
    }

    fn jacobian_trace(&self, x: &DMatrix<f64>, f: &DVector<f64>) -> Result<f64> {
        ScoreNetworkParams::jacobian_trace(self, &regression_tokens(self.layout, x, f)?)
    }
}

/// `tr(∂s/∂f) + ½‖s‖²` at one measurement set.
pub fn score_matching_term<M: MarginalScore + ?Sized>(model: &M, x: &DMatrix<f64>, f: &DVector<f64>) -> Result<f64> {
    let s = model.score(x, f)?;
    Ok(model.jacobian_trace(x, f)? + 0.5 * s.norm_squared())
}

/// Mean score-matching loss over function samples sharing the inputs `x`, and
/// its gradient over the flat network parameters.
pub fn loss_gradient(params: &ScoreNetworkParams, x: &DMatrix<f64>, fs: &[DVector<f64>]) -> Result<(f64, Vec<f64>)> {
    let tokens = stack_regression_tokens(params.layout, x, fs)?;
    params.loss_and_gradient_sets(&tokens, x.nrows())
}

pub(crate) fn stack_regression_tokens(
    layout: TokenLayout,
    x: &DMatrix<f64>,
    fs: &[DVector<f64>],
) -> Result<DMatrix<f64>> {
    if fs.is_empty() {
        return Err(MarsError::invalid("loss needs at least one function sample"));
    }
    let k = x.nrows();
    let first = regression_tokens(layout, x, &fs[0])?;
    let mut tokens = DMatrix::zeros(k * fs.len(), first.ncols());
    for (i, f) in fs.iter().enumerate() {
        let t = regression_tokens(layout, x, f)?;
        tokens.view_mut((i * k, 0), (k, t.ncols())).copy_from(&t);
    }
    Ok(tokens)
}
