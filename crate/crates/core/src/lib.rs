pub mod backtest;
pub mod categorize;
pub mod forecaster;
pub mod market_data;
pub mod pipeline;
pub mod preprocess;
pub mod selector;
pub mod synth;
