//! Differentiable building blocks for the forecaster: LSTM, dense layers,
//! activations, masked losses, dropout and Adam, all in `f64`.

pub mod activations;
pub mod adam;
pub mod dense;
pub mod dropout;
pub mod gradcheck;
pub mod init;
pub mod loss;
pub mod lstm;
pub mod params;

pub use adam::AdamState;
pub use dense::DenseLayerParams;
pub use dropout::{dropout_forward, dropout_mask, DropoutSpec, Mode};
pub use gradcheck::{check_gradients, numeric_gradient, GradCheckReport};
pub use loss::{masked_loss, masked_mae, masked_mse, LossKind, LossOutput};
pub use lstm::{lstm_backward, lstm_cell_forward, lstm_forward, LstmCache, LstmLayerParams};
pub use params::ParamSet;
