//! Windowing, the feature catalog and feature selection.

mod catalog;
mod compute;
pub mod selection;

pub use catalog::{
    default_catalog, table_one_catalog, Channel, FeatureKind, FeatureSpec, FftAttr, ParseSpecError,
};
pub use compute::{
    compute_feature, compute_kind, extract_matrix, extract_row, window_stream, FeatureMatrix,
    FeatureVector, SampleWindow,
};
pub use selection::{
    benjamini_hochberg, mann_whitney_p, select_features, SelectionError, SelectionResult,
};
