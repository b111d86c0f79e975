//! Experiment orchestration: configs and presets, the training loop,
//! evaluation, seed sweeps and CSV/SVG output.

mod config;
mod output;
mod run;

pub use config::{preset, DemoSource, ExperimentConfig, NoiseCfg, PreloadCfg, PRESETS, STOCK_DEMO_SEED};
pub use output::{
    csv_string, emit_csv, emit_run, emit_svg_curves, log_string, parse_csv, svg_string, CSV_HEADER,
};
pub use run::{
    evaluate, load_demos, median, median_final_return, prepare_generator, run_experiment, run_sweep,
    run_with, train, Abort, EvalRecord, EvalResult, RunLog, Summary, Trained,
};
