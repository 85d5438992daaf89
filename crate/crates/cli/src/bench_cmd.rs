//! `qflow bench-roundtrip`

use anyhow::{bail, Result};
use serde::Serialize;

use qflow_core::bench::{run_roundtrip_bench, RoundTripRecord};
use qflow_core::so3_stats::RngState;

use crate::config::RunConfig;
use crate::{io, prepare_out, streams};

pub const CSV: &str = "roundtrip.csv";
pub const SUMMARY: &str = "summary.json";

#[derive(Serialize)]
struct Summary<'a> {
    schema_version: u32,
    seed: u64,
    trials_per_angle: usize,
    quat_beats_matrix: bool,
    records: &'a [RoundTripRecord],
}

/// Returns whether the quaternion route beat the matrix route at every
/// offset.
pub fn run(mut cfg: RunConfig) -> Result<bool> {
    if cfg.bench.trials == 0 || cfg.bench.offsets.is_empty() {
        bail!("invalid [bench] section: need at least one offset and one trial");
    }
    if let Some(bad) = cfg.bench.offsets.iter().find(|d| !(**d > 0.0 && **d < std::f64::consts::PI)) {
        bail!("invalid [bench] section: offset {bad} is outside (0, π)");
    }
    let out = prepare_out(&mut cfg, "bench-roundtrip")?;
    let mut rng = RngState::with_stream(cfg.run.seed, streams::BENCH);
    let report = run_roundtrip_bench(&cfg.bench.offsets, cfg.bench.trials, &mut rng)?;
    io::write_rows(&out.join(CSV), &report.records)?;
    let ok = report.quat_beats_matrix();
    io::write_json(
        &out.join(SUMMARY),
        &Summary {
            schema_version: 1,
            seed: cfg.run.seed,
            trials_per_angle: cfg.bench.trials,
            quat_beats_matrix: ok,
            records: &report.records,
        },
    )?;
    for r in &report.records {
        println!(
            "phi = pi - {:e}: quat {:.3e}  matrix {:.3e}",
            r.offset, r.quat_error, r.matrix_error
        );
    }
    println!("quat_beats_matrix = {ok}");
    Ok(ok)
}
