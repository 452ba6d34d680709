pub mod data;
pub mod error;
pub mod evaluate;
pub mod fpca;
pub mod lifetable;
pub mod lp;
pub mod methods;
pub mod rng;
pub mod smooth;
pub mod synthetic;
pub mod ts;
pub mod uncertainty;

pub use error::{Error, ErrorClass, Result};
