pub mod baseline;
pub mod common;
pub mod evaluate;
pub mod report;
pub mod synth;
pub mod train;
pub mod transform;
