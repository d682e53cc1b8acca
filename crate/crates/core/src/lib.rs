//! Daily stock-return prediction with jointly learned latent topics and investor
//! expectations, plus the surrounding research harness: Alpha360 features,
//! day-recursive training, IC-family metrics and a top-k dropout backtester.

pub mod autodiff;
pub mod backtest;
pub mod cli;
pub mod evaluation;
pub mod market_data;
pub mod model;
pub mod synth;
pub mod training;
