//! Vertical power-flow forecasting at medium/high-voltage transformers.
//!
//! A two-branch LSTM (measured power history plus exogenous weather, sun and
//! calendar features) produces 48-hour forecasts at 15-minute resolution.
//! The trained network is retrained every day on the newest measurements,
//! which lets it follow step changes in the installed generation behind the
//! transformer. Persistence forecasts serve as reference models, and a
//! synthetic scenario generator stands in for confidential grid data.

pub mod baselines;
pub mod error;
pub mod evaluation;
pub mod forecast;
pub mod grid_data;
pub mod model;
pub mod neuralnet;
pub mod preprocess;
pub mod synthgrid;
pub mod update_engine;

pub use error::{Error, Result};
