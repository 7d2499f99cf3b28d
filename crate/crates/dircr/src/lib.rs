pub mod cli;
pub mod config;
pub mod error;
pub mod model;
pub mod puzzle;
pub mod seed;
pub mod tensor;
pub mod trainer;
