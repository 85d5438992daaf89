//! `qflow train`

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Serialize;

use qflow_core::frames::FrameTransform;
use qflow_core::model::{Checkpoint, CouplingSource, ModelParams, OptimizerState, TrainConfig, Trainer};
use qflow_core::so3_stats::{Igso3, RngState};
use qflow_core::toy::FourModeToy;

use crate::config::RunConfig;
use crate::{io, prepare_out, streams};

pub const CHECKPOINT: &str = "checkpoint.qfc";
pub const LOSS_TRACE: &str = "loss_trace.csv";

#[derive(Serialize)]
struct LossRow {
    epoch: usize,
    loss: f64,
}

/// The configured dataset as chains: the file's chains, or toy draws as
/// one-frame chains.
pub fn dataset(cfg: &RunConfig) -> Result<Vec<Vec<FrameTransform>>> {
    match &cfg.data.path {
        Some(p) => io::read_dataset(p),
        None => {
            let mut rng = RngState::with_stream(cfg.run.seed, streams::TOY_DATA);
            Ok(FourModeToy::default()
                .sample(cfg.data.toy_size, &mut rng)
                .into_iter()
                .map(|f| vec![f])
                .collect())
        }
    }
}

pub fn write_loss_trace(path: &Path, trace: &[f64]) -> Result<()> {
    io::write_rows(
        path,
        trace.iter().enumerate().map(|(epoch, &loss)| LossRow { epoch, loss }),
    )
}

fn source(cfg: &TrainConfig, chains: Vec<Vec<FrameTransform>>) -> Result<CouplingSource> {
    let prior = Igso3::new(cfg.igso3)?;
    Ok(if cfg.aux_weight > 0.0 {
        CouplingSource::Chains { chains, prior }
    } else {
        CouplingSource::Independent {
            data: chains.into_iter().flatten().collect(),
            prior,
        }
    })
}

pub fn run(mut cfg: RunConfig, resume: Option<&Path>) -> Result<()> {
    cfg.validate_train()?;
    let resumed = match resume {
        Some(p) => Some(io::load_checkpoint(p)?),
        None => None,
    };
    let chains = dataset(&cfg)?;
    if cfg.train.aux_weight > 0.0 && chains.iter().any(|c| c.len() < 2) {
        bail!("the auxiliary loss needs chains of at least two residues; set [train] aux_weight = 0");
    }
    let src = source(&cfg.train, chains)?;
    let (params, epoch, trace, opt) = match resumed {
        Some(c) => {
            if c.epoch > cfg.train.epochs {
                bail!(
                    "checkpoint is at epoch {} but [train] epochs is {}",
                    c.epoch,
                    cfg.train.epochs
                );
            }
            (c.params, c.epoch, c.loss_trace, c.optimizer_state)
        }
        None => {
            let mut rng = RngState::with_stream(cfg.run.seed, 0);
            let p = ModelParams::init(cfg.train.architecture(), &mut rng)?;
            (p, 0, Vec::new(), OptimizerState::default())
        }
    };
    let mut trainer = Trainer::resume(params, cfg.train.clone(), src, epoch, trace, opt)
        .context("checkpoint does not match the [train] configuration")?;
    let out = prepare_out(&mut cfg, "train")?;
    while trainer.epoch() < cfg.train.epochs {
        let e = trainer.epoch();
        let loss = trainer.run_epoch().with_context(|| format!("training aborted in epoch {e}"))?;
        if e % 50 == 0 || e + 1 == cfg.train.epochs {
            println!("epoch {e}: loss {loss:.6}");
        }
    }
    let outcome = trainer.into_outcome();
    write_loss_trace(&out.join(LOSS_TRACE), &outcome.loss_trace)?;
    io::save_checkpoint(
        &out.join(CHECKPOINT),
        &Checkpoint {
            params: outcome.params,
            train: cfg.train.clone(),
            epoch: outcome.epochs_completed,
            loss_trace: outcome.loss_trace,
            optimizer_state: outcome.optimizer_state,
        },
    )?;
    println!("wrote {}", out.join(CHECKPOINT).display());
    Ok(())
}
