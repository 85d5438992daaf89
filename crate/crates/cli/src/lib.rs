//! Library side of the `qflow` binary: configuration, artifact I/O and one
//! module per subcommand.

pub mod bench_cmd;
pub mod config;
pub mod io;
pub mod rectify_cmd;
pub mod sample_cmd;
pub mod train_cmd;
pub mod verify_cmd;

use std::path::PathBuf;

use anyhow::Result;

use config::RunConfig;

/// RNG stream ids under the master seed. Stream 0 and `epoch + 1` belong to
/// the trainer.
pub mod streams {
    pub const BENCH: u64 = 1 << 32;
    pub const TOY_DATA: u64 = (1 << 32) + 1;
    pub const SAMPLE: u64 = (1 << 32) + 2;
    pub const PAIRS: u64 = (1 << 32) + 3;
    pub const VERIFY: u64 = (1 << 32) + 4;
}

pub const RESOLVED_CONFIG: &str = "config.resolved.toml";

/// Resolves and creates the output directory and echoes the resolved config
/// into it. Call only after validation so failed runs leave nothing behind.
pub fn prepare_out(cfg: &mut RunConfig, command: &str) -> Result<PathBuf> {
    let out = cfg.resolve_out(command);
    io::ensure_dir(&out)?;
    io::write_text(&out.join(RESOLVED_CONFIG), &cfg.to_toml()?)?;
    Ok(out)
}
