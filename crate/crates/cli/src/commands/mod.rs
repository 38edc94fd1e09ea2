pub mod calibrate;
pub mod evaluate;
pub mod gen;
pub mod report;
pub mod train;
