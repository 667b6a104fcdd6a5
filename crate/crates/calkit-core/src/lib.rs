//! calkit-core: uncertainty quantification and calibration for logged
//! question-answering model responses.
//!
//! The toolkit reads JSONL evaluation logs and provides:
//!
//! - calibration metrics (ECE / MCE / ENCE) over reliability tables
//! - temperature scaling (NLL fit + logit rescaling)
//! - semantic entropy over clustered open-ended samples
//! - the IDK protocol (knowledge segmentation, quadrants, TRUTHFUL)
//! - noise-by-text fusion sweeps over images and description prefixes
//! - prompt-suffix search ranked by accuracy bands then ECE
//!
//! All question-answering backends (HTTP, replay, synthetic, mocks) sit
//! behind the [`client::ModelClient`] trait and are selected by name at
//! runtime through [`client::ClientRegistry`].

pub mod ape;
pub mod client;
pub mod entropy;
pub mod error;
pub mod idk;
pub mod metrics;
pub mod record;
pub mod report;
pub mod sweep;
pub mod temperature;
pub mod util;

pub use error::{Error, Result};
pub use record::{load_dataset, parse_record, ErrorPolicy, ResponseRecord, TaskKind};
