pub mod cli;
pub mod data;
pub mod gibbs;
pub mod inference;
pub mod likelihood;
pub mod math;
pub mod model;
pub mod patterns;
pub mod spn;
pub mod structure;
pub mod synth;
