//! Auditing confirmation bias in language-model investment decisions.
//!
//! The pipeline has three stages: build balanced evidence, elicit a latent
//! buy/sell preference per stock, then verify that preference against
//! counter-evidence of growing volume or intensity.

pub mod action;
pub mod analysis;
pub mod evidence;
pub mod gateway;
pub mod protocol;
pub mod report;
pub mod runner;
pub mod seed;
pub mod universe;

pub use action::Direction;
