pub mod autodiff;
pub mod data;
pub mod models;
pub mod nn;
pub mod objectives;
pub mod probes;
pub mod runner;
pub mod seed;
