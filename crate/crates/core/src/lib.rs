pub mod cli;
pub mod examples;
pub mod expr;
pub mod flow;
pub mod frozen;
pub mod grid;
pub mod model;
pub mod montecarlo;
pub mod parametrix;
pub mod quad;
