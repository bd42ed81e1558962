//! Feature engineering: schema inference, categorical encoders, numeric
//! standardization, and dataset encoding.

pub mod dataset;
pub mod encoders;
pub mod pipeline;
pub mod schema;
pub mod stats;

pub use dataset::{read_delimited, read_delimited_from, write_delimited, write_lines};
pub use dataset::{EncodedDataset, RawDataset};
pub use encoders::{piecewise_log, NumericStandardizer, OrdinalEncoder, TargetEncoder};
pub use pipeline::{ColumnEncoder, ColumnSpec, FeatureSchema, FitOutcome, LabelLayout};
pub use schema::{
    compute_column_stats, infer_schema, ColumnStats, DeclaredRole, Role, SchemaConfig,
};
pub use stats::{derive_bias_stats, BiasStats, BiasStdRatio, GroupStat};
