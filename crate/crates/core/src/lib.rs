pub mod experiment;
pub mod forest;
pub mod model;
pub mod profiling;
pub mod sched;
pub mod sim;
pub mod workload;
