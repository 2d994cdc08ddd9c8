pub mod data;
pub mod em;
pub mod mixture;
pub mod mnl;
mod par;
pub mod error;
pub mod kv;
pub mod metrics;
pub mod optim;

pub use error::{Error, Result};
