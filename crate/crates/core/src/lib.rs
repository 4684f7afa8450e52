//! Locally D-optimal and compound optimal approximate designs for several
//! dose-response groups whose models share location (and optionally scale)
//! parameters.
//!
//! The crate covers the model families and their gradients ([`model`]),
//! designs and information matrices ([`design`]), analytic designs
//! ([`closed_form`]), a vertex-exchange optimizer ([`optimize`]),
//! equivalence-theorem certificates ([`verify`]) and rounding to exact
//! sample sizes ([`apportion`]).

pub mod apportion;
pub mod closed_form;
pub mod design;
pub mod error;
pub mod model;
pub mod optimize;
pub mod verify;

pub use design::{Candidate, Design, GroupDesign, InfoMatrix};
pub use error::{DesignError, Result};
pub use model::{DoseMap, ModelFamily, ModelSpec, SharingPattern};
