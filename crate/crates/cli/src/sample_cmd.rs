//! `qflow sample`

use std::path::Path;

use anyhow::{bail, Result};
use serde::Serialize;

use qflow_core::frames::{impute_oxygen, realize_chain, write_chain_text, IdealResidue};
use qflow_core::so3_stats::{sample_noise_frame, Igso3, RngState};
use qflow_core::solvers::{integrate_path, SolverConfig};

use crate::config::RunConfig;
use crate::{io, prepare_out, streams};

pub const SAMPLES: &str = "samples.csv";
pub const CHAIN: &str = "chain.txt";
pub const MANIFEST: &str = "manifest.json";

#[derive(Serialize)]
struct Manifest<'a> {
    schema_version: u32,
    command: &'static str,
    seed: u64,
    noise_stream: u64,
    count: usize,
    solver: SolverConfig,
    checkpoint: &'a Path,
    created_unix: u64,
}

pub fn run(mut cfg: RunConfig, checkpoint: &Path) -> Result<()> {
    cfg.validate_solver()?;
    if cfg.sample.count == 0 {
        bail!("invalid [sample] section: count must be at least 1");
    }
    if cfg.sample.realize_chain && cfg.sample.count < 2 {
        bail!("invalid [sample] section: realize_chain needs count >= 2");
    }
    let ckpt = io::load_checkpoint(checkpoint)?;
    let solver = cfg.solver.solver();
    let prior = Igso3::new(ckpt.train.igso3)?;
    let out = prepare_out(&mut cfg, "sample")?;
    let mut rng = RngState::with_stream(cfg.run.seed, streams::SAMPLE);
    let mut frames = Vec::with_capacity(cfg.sample.count);
    for _ in 0..cfg.sample.count {
        let t0 = sample_noise_frame(&prior, &mut rng);
        frames.push(integrate_path(&ckpt.params, &t0, &solver)?);
    }
    io::write_frames(&out.join(SAMPLES), &frames)?;
    if cfg.sample.realize_chain {
        let chain = impute_oxygen(&realize_chain(&frames, &IdealResidue::default()))?;
        io::write_text(&out.join(CHAIN), &write_chain_text(&chain))?;
    }
    io::write_json(
        &out.join(MANIFEST),
        &Manifest {
            schema_version: 1,
            command: "sample",
            seed: cfg.run.seed,
            noise_stream: streams::SAMPLE,
            count: cfg.sample.count,
            solver,
            checkpoint,
            created_unix: io::timestamp(),
        },
    )?;
    println!("wrote {} frames to {}", frames.len(), out.join(SAMPLES).display());
    Ok(())
}
