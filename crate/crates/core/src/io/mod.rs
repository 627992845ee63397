//! Data ingestion, splitting, model and trace files, synthetic generators.

mod csv_data;
mod dense_grid;
mod model_file;
mod split;
mod synth;
mod trace_file;

pub use csv_data::{
    load_csv, load_csv_with_schema, load_indexed_csv, read_csv, read_indexed, save_csv, write_csv,
    CategoricalSchema, CsvOptions, Feature,
};
pub use dense_grid::{load_dense_grid, parse_dense_grid};
pub use model_file::{load_model, model_from_str, model_to_string, save_model, MODEL_FORMAT};
pub use split::{split, SplitSpec};
pub use synth::{corner_width, half_moons, in_corner_region, synth_lowrank, MoonSpec, Sampler, SyntheticSpec};
pub use trace_file::{load_trace, save_trace, write_trace};
