//! Tabular ingestion, preprocessing and time-frame slicing.

mod frames;
mod matrix;
mod schema;
mod table;

pub use frames::{
    add_months, dataset_epoch, monthly_schedule, slice_frames, validate_schedule, SlicedFrames,
    TimeFrame, DEFAULT_LABEL_DELAY_DAYS,
};
pub use matrix::DesignMatrix;
pub use schema::{
    fit_schema, ieee_cis_specs, transform, ColumnKind, ColumnSpec, FeatureSchema, Transform,
    DEFAULT_NULL_SENTINEL, NA, OTHERS, SCHEMA_VERSION,
};
pub use table::{load_table, Cell, DataFrameTable, TableOptions};
