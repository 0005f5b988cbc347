//! Evolutionary adversarial attacks on a BF/FF algorithm-selection classifier
//! for online bin packing.

pub mod analysis;
pub mod attack;
pub mod classifier;
pub mod cli;
pub mod distribution_check;
pub mod export;
pub mod instances;
pub mod packing;
