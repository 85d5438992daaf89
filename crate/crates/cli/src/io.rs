//! CSV and JSON artifacts. Column layouts are documented in
//! `docs/formats.md`.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use qflow_core::frames::FrameTransform;
use qflow_core::model::{read_checkpoint, write_checkpoint, Checkpoint, CouplingPair};
use qflow_core::quat::{Quaternion, UnitQuaternion, Vec3};

#[derive(Serialize, Deserialize)]
struct FrameRow {
    index: usize,
    x: f64,
    y: f64,
    z: f64,
    qs: f64,
    qx: f64,
    qy: f64,
    qz: f64,
}

#[derive(Serialize, Deserialize)]
struct DatasetRow {
    chain: usize,
    residue: usize,
    x: f64,
    y: f64,
    z: f64,
    qs: f64,
    qx: f64,
    qy: f64,
    qz: f64,
}

#[derive(Serialize)]
struct PairRow {
    index: usize,
    x0: f64,
    y0: f64,
    z0: f64,
    qs0: f64,
    qx0: f64,
    qy0: f64,
    qz0: f64,
    x1: f64,
    y1: f64,
    z1: f64,
    qs1: f64,
    qx1: f64,
    qy1: f64,
    qz1: f64,
}

fn parts(f: &FrameTransform) -> ([f64; 3], [f64; 4]) {
    let q = f.q.to_array();
    ([f.x.x, f.x.y, f.x.z], q)
}

fn frame_from(x: [f64; 3], q: [f64; 4], what: &str) -> Result<FrameTransform> {
    let q = UnitQuaternion::try_new(Quaternion::from_array(q)).with_context(|| format!("{what}: bad rotation"))?;
    Ok(FrameTransform::new(Vec3::from(x), q))
}

/// Creates `dir` (and parents). Outputs are only ever written below it.
pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).context("serializing JSON")?;
    text.push('\n');
    write_text(path, &text)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

pub fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).with_context(|| format!("writing {}", path.display()))?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))
}

pub fn write_frames(path: &Path, frames: &[FrameTransform]) -> Result<()> {
    write_rows(
        path,
        frames.iter().enumerate().map(|(index, f)| {
            let (x, q) = parts(f);
            FrameRow {
                index,
                x: x[0],
                y: x[1],
                z: x[2],
                qs: q[0],
                qx: q[1],
                qy: q[2],
                qz: q[3],
            }
        }),
    )
}

pub fn read_frames(path: &Path) -> Result<Vec<FrameTransform>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, row) in r.deserialize::<FrameRow>().enumerate() {
        let row = row.with_context(|| format!("{}: row {}", path.display(), i + 1))?;
        out.push(frame_from(
            [row.x, row.y, row.z],
            [row.qs, row.qx, row.qy, row.qz],
            &format!("{} row {}", path.display(), i + 1),
        )?);
    }
    Ok(out)
}

pub fn write_pairs(path: &Path, pairs: &[CouplingPair]) -> Result<()> {
    write_rows(
        path,
        pairs.iter().enumerate().map(|(index, p)| {
            let (a, qa) = parts(&p.t0);
            let (b, qb) = parts(&p.t1);
            PairRow {
                index,
                x0: a[0],
                y0: a[1],
                z0: a[2],
                qs0: qa[0],
                qx0: qa[1],
                qy0: qa[2],
                qz0: qa[3],
                x1: b[0],
                y1: b[1],
                z1: b[2],
                qs1: qb[0],
                qx1: qb[1],
                qy1: qb[2],
                qz1: qb[3],
            }
        }),
    )
}

/// Reads a frame dataset grouped into chains. Chains must appear
/// contiguously with residues numbered from 0.
pub fn read_dataset(path: &Path) -> Result<Vec<Vec<FrameTransform>>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening dataset {}", path.display()))?;
    let mut chains: Vec<Vec<FrameTransform>> = Vec::new();
    let mut current: Option<usize> = None;
    for (i, row) in r.deserialize::<DatasetRow>().enumerate() {
        let line = i + 2;
        let row = row.with_context(|| format!("{}: line {line}", path.display()))?;
        if current != Some(row.chain) {
            current = Some(row.chain);
            chains.push(Vec::new());
        }
        let chain = chains.last_mut().expect("pushed above");
        if row.residue != chain.len() {
            bail!(
                "{}: line {line}: chain {} expects residue {} next, found {}",
                path.display(),
                row.chain,
                chain.len(),
                row.residue
            );
        }
        chain.push(frame_from(
            [row.x, row.y, row.z],
            [row.qs, row.qx, row.qy, row.qz],
            &format!("{} line {line}", path.display()),
        )?);
    }
    if chains.is_empty() {
        bail!("dataset {} has no frames", path.display());
    }
    Ok(chains)
}

pub fn write_dataset(path: &Path, chains: &[Vec<FrameTransform>]) -> Result<()> {
    let rows = chains.iter().enumerate().flat_map(|(chain, frames)| {
        frames.iter().enumerate().map(move |(residue, f)| {
            let (x, q) = parts(f);
            DatasetRow {
                chain,
                residue,
                x: x[0],
                y: x[1],
                z: x[2],
                qs: q[0],
                qx: q[1],
                qy: q[2],
                qz: q[3],
            }
        })
    });
    write_rows(path, rows)
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_checkpoint(std::io::BufWriter::new(f), ckpt).with_context(|| format!("writing {}", path.display()))
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let f = fs::File::open(path).with_context(|| format!("checkpoint {} not found", path.display()))?;
    read_checkpoint(std::io::BufReader::new(f)).with_context(|| format!("reading checkpoint {}", path.display()))
}

pub fn out_file(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}

/// Seconds since the Unix epoch; only ever written to manifests.
pub fn timestamp() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}
