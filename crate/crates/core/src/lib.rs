pub mod access;
pub mod channel;
pub mod cli;
pub mod config;
pub mod diffcoding;
pub mod error;
pub mod geometry;
pub mod math;
pub mod precoding;
pub mod simulator;
