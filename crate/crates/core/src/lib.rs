//! Predictive maintenance for photovoltaic inverters from SCADA telemetry.
//!
//! The crate covers the full chain from raw 5-minute SCADA exports to
//! maintenance decisions:
//!
//! - [`scada_data`]: grid-aligned records, logbook ingestion and fault labelling
//! - [`preprocess`]: range, night, outlier, plateau and sparse-day cleaning
//! - [`impute`]: weighted k-nearest-neighbour gap filling
//! - [`features`]: temperature and moving-average de-trending, z-scaling
//! - [`sdm`]: self-organizing map occupancy KPI and four-level warnings
//! - [`fpm`]: per-class neural fault classifier evaluated at look-back horizons
//! - [`metrics_econ`]: classification metrics and lost-production accounting
//! - [`synth`]: seeded synthetic plant generator
//! - [`pipeline`]: run configuration and the stages behind the `pvmaint` CLI

pub mod error;
pub mod features;
pub mod fpm;
pub mod impute;
pub mod metrics_econ;
pub mod pipeline;
pub mod preprocess;
pub mod scada_data;
pub mod sdm;
pub mod stats;
pub mod synth;

pub use error::{Error, Result};
