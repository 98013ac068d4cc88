//! Library side of the `sizegrid` binary: the planner HTTP service.

pub mod service;
