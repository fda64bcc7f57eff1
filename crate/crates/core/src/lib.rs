pub mod adapter;
mod codec;
pub mod compose;
pub mod data;
pub mod error;
pub mod evaluate;
pub mod host;
pub mod metrics;
pub mod numeric;
pub mod site;
pub mod study;
pub mod trainer;

pub use error::{Error, Result};
pub use site::{AttachmentSite, SiteKind};
