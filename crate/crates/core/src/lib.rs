//! Reliable SpO2 readings from wrist-worn pulse oximeters.
//!
//! The crate computes peripheral oxygen saturation from red/infrared PPG
//! traces with the classic ratio-of-ratios method, labels each signal window
//! as reliable or unreliable against a fingertip reference, learns a
//! gradient-boosted classifier over time-series features of the PPG and IMU
//! channels, and prunes the wrist readings down to the windows the classifier
//! trusts.
//!
//! Module map:
//!
//! - [`signal_io`]: CSV stream parsing, IMU magnitudes, grid regularization.
//! - [`spo2`]: AC/DC extraction, ratio of ratios, baseline and enhanced
//!   algorithms, bias recalibration.
//! - [`features`]: windowing, the feature catalog, Mann-Whitney tests and
//!   Benjamini-Hochberg selection.
//! - [`gbdt`]: second-order boosted trees with L1/L2 leaf regularization.
//! - [`pipeline`]: alignment, labeling, leave-one-subject-out evaluation,
//!   group splits, user calibration, pruning and sweeps.
//! - [`metrics`]: precision, RMSE, longest silent interval, error CDFs.
//! - [`synth`]: synthetic PPG + IMU traces with known ground truth.
//! - [`experiment`]: JSON experiment configs, manifests and report files.

pub mod experiment;
pub mod features;
pub mod gbdt;
pub mod metrics;
pub mod pipeline;
pub mod signal_io;
pub mod spo2;
pub mod synth;
pub mod window;

pub use features::{Channel, FeatureKind, FeatureSpec};
pub use gbdt::{GbdtModel, GbdtParams};
pub use signal_io::{RawRecord, RegularStream, SensorFrame, Site, SkinTone, StreamMeta};
pub use spo2::{CalibrationCurve, EnhancedConfig, Spo2Estimate};
pub use window::WindowConfig;
