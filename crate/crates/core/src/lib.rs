pub mod checkpoint;
pub mod classifier;
pub mod config;
pub mod crf_attn;
pub mod dataset;
pub mod encoder;
pub mod ingest;
pub mod model;
pub mod numerics;
pub mod parallel;
pub mod synthetic;
pub mod trainer;
