//! Multi-agent grid-world simulator for RF target localization with
//! Pavlovian, model-free and model-based learners.

// Range checks are written `!(x > 0.0)` so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod experiment;
pub mod grid;
pub mod learning;
pub mod output;
pub mod policy;
pub mod rewards;
pub mod rf;

pub use config::{parse_config, parse_config_with_overrides, ConfigError, RunConfig};
pub use experiment::{Condition, Environment};
pub use grid::{load_map, Action, CellKind, Coord, GridMap, MapError};
