pub mod exact;
pub mod scenarios;
pub mod spectral;
pub mod energy;
pub mod harness;
