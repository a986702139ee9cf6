pub mod cli;
pub mod config;
pub mod curator;
pub mod error;
pub mod evalharness;
pub mod rewards;
pub mod structure;
pub mod textnorm;
pub mod tgrpo;
pub mod toytrain;
pub mod trajcache;
