//! Slot-based simulator of longest-chain consensus under bounded bandwidth.

pub mod adversary;
pub mod audit;
pub mod block;
pub mod config;
pub mod experiments;
pub mod lottery;
pub mod netenv;
pub mod node;
pub mod parallel;
pub mod pivots;
pub mod sapos;
pub mod security_calc;
pub mod sim;
pub mod trace;
