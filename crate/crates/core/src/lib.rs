//! swarmtrace: BitTorrent swarm observation and analysis.
//!
//! The pipeline runs in five stages: parse magnet links, enumerate swarm
//! members over UDP tracker announces, enrich the collected IPs, build
//! relational and graph views of the hash/IP data, and render
//! pseudonymized reports.

pub mod cli;
pub mod config;
pub mod enrichment;
pub mod graph;
pub mod magnet;
pub mod report;
pub mod store;
pub mod tracker;

pub use cli::run;
