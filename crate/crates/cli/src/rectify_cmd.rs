//! `qflow rectify`

use std::path::Path;

use anyhow::{bail, Result};
use serde::Serialize;

use qflow_core::bench::rotation_angle;
use qflow_core::frames::FrameTransform;
use qflow_core::model::{filter_pairs, generate_pairs, rectify, Checkpoint, FilterReport};
use qflow_core::so3_stats::{Igso3, RngState};
use qflow_core::solvers::SolverConfig;

use crate::config::RunConfig;
use crate::train_cmd::{write_loss_trace, LOSS_TRACE};
use crate::{io, prepare_out, streams};

pub const CHECKPOINT: &str = "rectified.qfc";
pub const PAIRS: &str = "pairs.csv";
pub const PAIRS_MANIFEST: &str = "pairs_manifest.json";

/// Names accepted by `[rectify] filter`.
pub const FILTERS: [&str; 2] = ["none", "rotation-angle-below-half-pi"];

pub fn filter_by_name(name: &str) -> Result<fn(&FrameTransform) -> bool> {
    Ok(match name {
        "none" => |_| true,
        "rotation-angle-below-half-pi" => |f| rotation_angle(f) < std::f64::consts::FRAC_PI_2,
        other => bail!("unknown filter {other:?}; known filters: {}", FILTERS.join(", ")),
    })
}

#[derive(Serialize)]
struct PairsManifest<'a> {
    schema_version: u32,
    command: &'static str,
    seed: u64,
    noise_stream: u64,
    generated: usize,
    kept: usize,
    dropped: usize,
    filter: &'a str,
    solver: SolverConfig,
    checkpoint: &'a Path,
    created_unix: u64,
}

pub fn run(mut cfg: RunConfig, checkpoint: &Path) -> Result<()> {
    cfg.validate_solver()?;
    let predicate = filter_by_name(&cfg.rectify.filter)?;
    if cfg.rectify.pairs == 0 {
        bail!("invalid [rectify] section: pairs must be at least 1");
    }
    let train = cfg.rectify_train();
    train.validate()?;
    let ckpt = io::load_checkpoint(checkpoint)?;
    if *ckpt.params.architecture() != train.architecture() {
        bail!(
            "checkpoint architecture {:?} does not match [train] ({:?})",
            ckpt.params.architecture(),
            train.architecture()
        );
    }
    let solver = cfg.solver.solver();
    let prior = Igso3::new(ckpt.train.igso3)?;
    let out = prepare_out(&mut cfg, "rectify")?;

    let mut rng = RngState::with_stream(cfg.run.seed, streams::PAIRS);
    let pairs = generate_pairs(&ckpt.params, cfg.rectify.pairs, &solver, &prior, &mut rng)?;
    let (kept, FilterReport { kept: n_kept, dropped }) = filter_pairs(&pairs, predicate);
    println!("generated {} pairs, kept {n_kept}, dropped {dropped}", pairs.len());
    if kept.is_empty() {
        bail!(
            "filter {:?} dropped all {} pairs; nothing to rectify on",
            cfg.rectify.filter,
            pairs.len()
        );
    }
    io::write_pairs(&out.join(PAIRS), &kept)?;
    io::write_json(
        &out.join(PAIRS_MANIFEST),
        &PairsManifest {
            schema_version: 1,
            command: "rectify",
            seed: cfg.run.seed,
            noise_stream: streams::PAIRS,
            generated: pairs.len(),
            kept: n_kept,
            dropped,
            filter: &cfg.rectify.filter,
            solver,
            checkpoint,
            created_unix: io::timestamp(),
        },
    )?;
    let outcome = rectify(&ckpt.params, &kept, &train)?;
    write_loss_trace(&out.join(LOSS_TRACE), &outcome.loss_trace)?;
    io::save_checkpoint(
        &out.join(CHECKPOINT),
        &Checkpoint {
            params: outcome.params,
            train,
            epoch: outcome.epochs_completed,
            loss_trace: outcome.loss_trace,
            optimizer_state: outcome.optimizer_state,
        },
    )?;
    println!("wrote {}", out.join(CHECKPOINT).display());
    Ok(())
}
