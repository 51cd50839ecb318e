//! Wavelet-decomposed transformer forecasting.
//!
//! A univariate series is split into MODWT multiresolution bands, one small
//! encoder-decoder transformer is trained per band, each band is forecast
//! recursively and the band forecasts are summed back together. The crate also
//! ships the accuracy metrics and average-rank comparison used to evaluate
//! such forecasts.

pub mod autograd;
pub mod cli;
pub mod evalkit;
pub mod forecaster;
pub mod modwt;
pub mod plot;
pub mod series;
pub mod transformer;
