//! Fiducial tag placement planning driven by the Fisher information of
//! simulated tag-corner measurements.

pub mod ga;
pub mod scene;
pub mod sensing;
pub mod spatial;
pub mod validation;
pub mod valuation;

#[cfg(test)]
mod test_support;
