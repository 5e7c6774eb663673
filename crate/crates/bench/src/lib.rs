//! Shared fixtures for the benchmarks.

use stcate::sim::experiment::{prepare_replication, replication_stream, Replication};
use stcate::sim::{DgpConfig, World};
use stcate::Result;

/// A world from a preset, shortened to `periods`, and one replication on it.
pub fn fixture(preset: &str, periods: usize) -> Result<(World, Replication)> {
    let mut config = DgpConfig::preset(preset)?;
    config.periods = periods;
    let world = World::new(config)?;
    let rep = prepare_replication(&world, &replication_stream(1, "bench", 0))?;
    Ok((world, rep))
}
