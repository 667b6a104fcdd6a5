pub mod ape;
pub mod entropy;
pub mod idk;
pub mod metrics;
pub mod report;
pub mod sweep;
pub mod ts;
pub mod validate;
