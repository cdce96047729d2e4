pub mod buffer;
pub mod config;
pub mod cpu;
pub mod dram;
pub mod error;
pub mod harness;
pub mod memctrl;
pub mod metrics;
pub mod predictor;
pub mod system;
pub mod trng;
pub mod workloads;
