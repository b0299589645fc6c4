//! Trigger-based fragile watermarking for image-to-image models.
//!
//! The toolkit embeds a trigger → response backdoor into a reconstruction or
//! segmentation model during training, verifies it afterwards with
//! normalized cross-correlation against the held authentication set, and
//! checks the three-part contract: fidelity (clean-task performance is
//! preserved), retrievability (the watermark answers its trigger), and
//! fragility (any model modification breaks the watermark while clean
//! performance survives).

pub mod attack;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod image;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod report;
pub mod rng;
pub mod steg;
pub mod train;
pub mod trigger;
pub mod watermark;

pub use error::{Error, Result};
pub use image::Image;
