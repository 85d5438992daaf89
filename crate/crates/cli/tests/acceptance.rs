//! Acceptance run: one `[PASS]`/`[FAIL]` line per criterion.
//!
//! Exits 0 so a failing criterion is reported without breaking the rest of
//! the test suite; set `QFLOW_ACCEPTANCE_STRICT=1` to exit 1 instead.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use statrs::distribution::{ChiSquared, ContinuousCDF};

use qflow_core::bench::{
    probe_small_angle_nan, roundtrip_matrix, roundtrip_quat, run_roundtrip_bench, verify_cost_reduction,
    verify_coupling_marginals, verify_marginal_preservation, CostFn, MarginalRow, DEFAULT_OFFSETS,
};
use qflow_core::frames::{
    aux_loss, aux_loss_atoms, apply_frame, impute_oxygen, realize_chain, FrameTransform, IdealResidue,
    CA_C_O_ANGLE_DEG, CO_BOND,
};
use qflow_core::interpolants::{interpolate, matrix_geodesic, slerp_additive, slerp_exp, SchedulerConfig};
use qflow_core::model::{
    flow_loss, loss_gradient, pairs_from_noise, rectify, train_qflow, Architecture, CouplingPair, LossConfig,
    ModelParams, OptimizerConfig, TrainConfig,
};
use qflow_core::quat::{
    exp_map, geodesic_distance, matrix_to_quat, quat_to_matrix, AxisAngle, UnitQuaternion, Vec3,
};
use qflow_core::so3_stats::{
    igso3_angle_density, sample_axis, sample_gaussian_r3, sample_noise_frame, sample_uniform_so3, Igso3, IgsoConfig,
    RngState,
};
use qflow_core::solvers::{integrate_path, OracleModel, SolverConfig};
use qflow_core::toy::FourModeToy;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn within(elapsed: Duration, budget_s: f64) -> bool {
    elapsed.as_secs_f64() < budget_s
}

fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(a + i as f64 * h);
    }
    s * h / 3.0
}

fn random_frame(rng: &mut RngState) -> FrameTransform {
    FrameTransform::new(sample_gaussian_r3(rng) * 5.0, sample_uniform_so3(rng))
}

/// A chain whose consecutive frames sit one Cα spacing apart with small turns.
fn walk_chain(rng: &mut RngState, n: usize) -> Vec<FrameTransform> {
    let mut frames = Vec::with_capacity(n);
    let mut f = random_frame(rng);
    for _ in 0..n {
        frames.push(f);
        let turn = exp_map(&AxisAngle::new(sample_gaussian_r3(rng) * 0.4));
        f = FrameTransform::new(f.x + f.q.rotate(&Vec3::new(3.8, 0.0, 0.0)), f.q * turn);
    }
    frames
}

fn ac1() -> Outcome {
    let start = Instant::now();
    let report = run_roundtrip_bench(&DEFAULT_OFFSETS, 100, &mut RngState::new(1)).unwrap();
    let elapsed = start.elapsed();
    let mut ok = within(elapsed, 1.0);
    let mut worst_gap = f64::INFINITY;
    for r in &report.records {
        ok &= r.quat_error < 1e-8 && r.matrix_error > r.quat_error;
        if r.offset <= 1e-5 {
            let gap = r.matrix_error / r.quat_error.max(f64::MIN_POSITIVE);
            worst_gap = worst_gap.min(gap);
            ok &= gap >= 1e3;
        }
    }
    let worst_quat = report.records.iter().map(|r| r.quat_error).fold(0.0, f64::max);
    outcome(
        ok,
        format!("max quat error {worst_quat:.1e}, min gap at delta <= 1e-5 {worst_gap:.1e}x, {elapsed:.2?}"),
    )
}

fn ac2() -> Outcome {
    let probe = probe_small_angle_nan(&[0.0, 1e-9, 1e-6, PI - 1e-3, PI]);
    let exp_finite = probe.iter().all(|r| r.exp_finite);
    let additive_nan = probe.iter().filter(|r| r.phi < 1e-6).all(|r| !r.additive_finite);

    let mut rng = RngState::new(2);
    let axes: Vec<Vec3> = (0..100).map(|_| sample_axis(&mut rng)).collect();
    let mean = |phi: f64, f: fn(&AxisAngle) -> f64| axes.iter().map(|a| f(&AxisAngle::new(a * phi))).sum::<f64>() / 100.0;
    let mut min_ratio = f64::INFINITY;
    // at exactly pi the log may return -omega, the same rotation, so the
    // round-trip error there measures the branch, not precision
    for phi in [PI - 1e-2, PI - 1e-3, PI - 1e-6] {
        min_ratio = min_ratio.min(mean(phi, roundtrip_matrix) / mean(phi, roundtrip_quat).max(1e-17));
    }
    let degraded = min_ratio >= 1e3;

    let q0 = UnitQuaternion::identity();
    let r0 = quat_to_matrix(&q0);
    let mut worst: f64 = 0.0;
    for k in 0..=40 {
        let phi = 1e-3 + (PI - 1e-2 - 1e-3) * k as f64 / 40.0;
        let q1 = exp_map(&AxisAngle::new(axes[k] * phi));
        let r1 = quat_to_matrix(&q1);
        for i in 0..=10 {
            let t = i as f64 / 10.0;
            let e = slerp_exp(&q0, &q1, t);
            let a = UnitQuaternion::normalize(slerp_additive(&q0, &q1, t)).unwrap();
            let m = matrix_to_quat(matrix_geodesic(&r0, &r1, t).matrix()).unwrap();
            worst = worst.max(geodesic_distance(&e, &a)).max(geodesic_distance(&e, &m));
        }
    }
    let agree = worst < 1e-8;
    outcome(
        exp_finite && additive_nan && degraded && agree,
        format!(
            "exp finite {exp_finite}, additive NaN below 1e-6 {additive_nan}, matrix/quat error ratio near pi >= {min_ratio:.1e}, path agreement {worst:.1e}"
        ),
    )
}

fn ac3() -> Outcome {
    let start = Instant::now();
    let cfg = IgsoConfig::default();
    let density = |p: f64| igso3_angle_density(p, &cfg).unwrap();
    let mass = simpson(density, 0.0, PI, 20_000);

    let sampler = Igso3::new(cfg).unwrap();
    let mut rng = RngState::new(3);
    let bins = 60;
    let width = PI / bins as f64;
    let mut counts = vec![0usize; bins];
    let n = 100_000;
    for _ in 0..n {
        let a = qflow_core::quat::log_map(&sampler.sample(&mut rng)).angle();
        counts[((a / width) as usize).min(bins - 1)] += 1;
    }
    let (mut stat, mut dof) = (0.0, 0usize);
    for (b, &c) in counts.iter().enumerate() {
        let lo = b as f64 * width;
        let expected = n as f64 * simpson(density, lo, lo + width, 64);
        if expected >= 5.0 {
            stat += (c as f64 - expected).powi(2) / expected;
            dof += 1;
        }
    }
    let p = 1.0 - ChiSquared::new((dof - 1) as f64).unwrap().cdf(stat);
    let elapsed = start.elapsed();
    outcome(
        (mass - 1.0).abs() < 1e-3 && p > 0.01 && within(elapsed, 10.0),
        format!("mass {mass:.6}, chi-square p {p:.3} over {dof} bins, {elapsed:.2?}"),
    )
}

fn ac4() -> Outcome {
    let start = Instant::now();
    let cfg = SchedulerConfig::new(10.0).unwrap();
    let omega = Vec3::new(0.4, 1.1, -0.7);
    let phi = omega.norm();
    let h = 1e-6;
    let mut worst_fd: f64 = 0.0;
    for i in 1..20 {
        let t = i as f64 / 20.0;
        let fd = (cfg.kappa(t + h) - cfg.kappa(t - h)) / (2.0 * h) * phi;
        let exact = (omega * (10.0 * (-10.0 * t).exp())).norm();
        worst_fd = worst_fd.max((fd - exact).abs());
    }
    let mut rng = RngState::new(4);
    let mut ok_oracle = true;
    let mut worst_excess = f64::NEG_INFINITY;
    for phi in [0.5, 1.5, 3.0] {
        let t0 = random_frame(&mut rng);
        let turn = exp_map(&AxisAngle::new(sample_axis(&mut rng) * phi));
        let t1 = FrameTransform::new(sample_gaussian_r3(&mut rng), t0.q * turn);
        let end = integrate_path(&OracleModel { target: t1 }, &t0, &SolverConfig::scheduled(500, 10.0)).unwrap();
        let residual = geodesic_distance(&end.q, &t1.q);
        let bound = (-10.0f64).exp() * phi + 1e-6;
        worst_excess = worst_excess.max(residual - bound);
        ok_oracle &= residual <= bound;
    }
    let elapsed = start.elapsed();
    outcome(
        worst_fd < 1e-5 && ok_oracle && within(elapsed, 1.0),
        format!("derivative error {worst_fd:.1e}, residual minus bound {worst_excess:.1e}, {elapsed:.2?}"),
    )
}

fn ac5() -> Outcome {
    let start = Instant::now();
    let prior = Igso3::new(IgsoConfig::default()).unwrap();
    let mut rng = RngState::new(5);
    let batch: Vec<_> = (0..4)
        .map(|i| {
            let t0 = sample_noise_frame(&prior, &mut rng);
            interpolate(&t0, &random_frame(&mut rng), 0.1 + 0.2 * i as f64)
        })
        .collect();
    let cfg = LossConfig::default();
    let mut worst: f64 = 0.0;
    for (hidden, skip) in [(vec![2], false), (vec![2], true), (vec![4, 3], false)] {
        let mut p = ModelParams::init(Architecture::with_hidden(hidden).with_skip(skip), &mut rng).unwrap();
        for v in p.values_mut() {
            *v += 0.5 * rng.normal();
        }
        let (_, g) = loss_gradient(&p, &batch, &[], &cfg).unwrap();
        let h = 1e-5;
        for i in 0..p.len() {
            let mut plus = p.clone();
            plus.values_mut()[i] += h;
            let mut minus = p.clone();
            minus.values_mut()[i] -= h;
            let fd = (flow_loss(&plus, &batch, &[], &cfg).unwrap().total
                - flow_loss(&minus, &batch, &[], &cfg).unwrap().total)
                / (2.0 * h);
            let a = g.values()[i];
            worst = worst.max((fd - a).abs() / fd.abs().max(a.abs()).max(1e-8));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-4 && within(elapsed, 10.0),
        format!("worst elementwise relative error {worst:.1e}, {elapsed:.2?}"),
    )
}

fn ac6() -> Outcome {
    let mut rng = RngState::new(6);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (t0, t1) = (random_frame(&mut rng), random_frame(&mut rng));
        let end = integrate_path(&OracleModel { target: t1 }, &t0, &SolverConfig::unscheduled(1)).unwrap();
        worst = worst.max(geodesic_distance(&end.q, &t1.q)).max((end.x - t1.x).norm());
    }
    outcome(worst < 1e-10, format!("worst one-step endpoint error {worst:.1e} over 100 pairs"))
}

// Toy end-to-end configuration, measured to fit the time budget on one core.
const TOY_SIZE: usize = 512;
const PAIRS: usize = 2000;
const EVAL: usize = 1000;
const SAMPLING_STEPS: usize = 100;
const KS_GRID: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

fn toy_train_config() -> TrainConfig {
    TrainConfig {
        epochs: 1200,
        batch_size: 64,
        learning_rate: 3e-3,
        lr_decay: 0.997,
        optimizer: OptimizerConfig::adam(),
        draws_per_item: 8,
        hidden: vec![64, 64],
        seed: 11,
        ..Default::default()
    }
}

fn toy_rectify_config() -> TrainConfig {
    TrainConfig {
        epochs: 600,
        learning_rate: 3e-3,
        lr_decay: 0.995,
        draws_per_item: 4,
        ..toy_train_config()
    }
}

fn worst(rows: &[MarginalRow]) -> f64 {
    rows.iter().map(MarginalRow::max).fold(0.0, f64::max)
}

fn ac7() -> Outcome {
    let start = Instant::now();
    let toy = FourModeToy::default();
    let data = toy.sample(TOY_SIZE, &mut RngState::with_stream(7, 1));
    let cfg = toy_train_config();
    let qflow = train_qflow(&data, &cfg).unwrap();
    let prior = Igso3::new(cfg.igso3).unwrap();
    let solver = SolverConfig::unscheduled(SAMPLING_STEPS);
    let draw = |stream: u64, n: usize| -> Vec<FrameTransform> {
        let mut r = RngState::with_stream(7, stream);
        (0..n).map(|_| sample_noise_frame(&prior, &mut r)).collect()
    };
    let pairs = pairs_from_noise(&qflow.params, &draw(2, PAIRS), &solver).unwrap();
    let reqflow = rectify(&qflow.params, &pairs, &toy_rectify_config()).unwrap();

    // (a) the rectified flow reproduces the marginals of its coupling
    let coupling = verify_coupling_marginals(
        &pairs[..EVAL],
        &reqflow.params,
        &KS_GRID,
        &solver,
        &prior,
        &RngState::with_stream(7, 3),
    )
    .unwrap();
    let paths = verify_marginal_preservation(
        &qflow.params,
        &reqflow.params,
        EVAL,
        &KS_GRID,
        &solver,
        &prior,
        &RngState::with_stream(7, 4),
    )
    .unwrap();
    let ks = worst(&coupling);
    let a = ks < 0.1;

    // (b) transport cost on fresh noise
    let noise = draw(5, EVAL);
    let before = pairs_from_noise(&qflow.params, &noise, &solver).unwrap();
    let after = pairs_from_noise(&reqflow.params, &noise, &solver).unwrap();
    let mut b = true;
    let mut costs = Vec::new();
    for c in CostFn::ALL {
        let r = verify_cost_reduction(&before, &after, c).unwrap();
        b &= r.not_increased();
        costs.push(format!("{} {:.3} -> {:.3}", c.name(), r.before.mean, r.after.mean));
    }

    // (c) one-step sampling error
    let one = SolverConfig::unscheduled(1);
    let err = |p: &ModelParams| {
        let out = pairs_from_noise(p, &noise, &one).unwrap();
        out.iter().map(|c: &CouplingPair| toy.error(&c.t1)).sum::<f64>() / out.len() as f64
    };
    let (e_q, e_r) = (err(&qflow.params), err(&reqflow.params));
    let c = e_r < e_q;

    let elapsed = start.elapsed();
    let ks_rows: Vec<String> = coupling
        .iter()
        .map(|r| format!("t={} ang {:.3} norm {:.3}", r.t, r.ks_rotation_angle, r.ks_translation_norm))
        .collect();
    outcome(
        a && b && c && within(elapsed, 600.0),
        format!(
            "(a) {} worst coupling KS {ks:.3} [{}], path KS {:.3} (report only); (b) {} [{}]; (c) {} 1-step error QFlow {e_q:.3} vs ReQFlow {e_r:.3}; {elapsed:.1?}",
            if a { "ok" } else { "FAIL" },
            ks_rows.join("; "),
            worst(&paths),
            if b { "ok" } else { "FAIL" },
            costs.join(", "),
            if c { "ok" } else { "FAIL" },
        ),
    )
}

/// Direct double sum over atom pairs, in nanometres.
fn aux_brute_force(pred: &[[Vec3; 4]], truth: &[[Vec3; 4]]) -> (f64, f64) {
    let n = truth.len();
    let mut bb = 0.0;
    for r in 0..n {
        for a in 0..4 {
            bb += ((truth[r][a] - pred[r][a]) / 10.0).norm_squared();
        }
    }
    bb /= (4 * n) as f64;
    let (mut num, mut count) = (0.0, 0i64);
    for r in 0..n {
        for s in 0..n {
            for a in 0..4 {
                for b in 0..4 {
                    let d = ((truth[r][a] - truth[s][b]) / 10.0).norm();
                    let dh = ((pred[r][a] - pred[s][b]) / 10.0).norm();
                    if d < 0.6 {
                        count += 1;
                        num += (d - dh) * (d - dh);
                    }
                }
            }
        }
    }
    (bb, num / (count - n as i64) as f64)
}

fn ac8() -> Outcome {
    let mut rng = RngState::new(8);
    let ideal = IdealResidue::default();
    let (mut oracle_err, mut motion_err, mut self_loss): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for n in 2..=5 {
        for _ in 0..5 {
            let truth = realize_chain(&walk_chain(&mut rng, n), &ideal);
            let mut pred = truth.atoms().to_vec();
            for residue in pred.iter_mut() {
                for a in residue.iter_mut() {
                    *a += sample_gaussian_r3(&mut rng) * 0.3;
                }
            }
            let l = aux_loss_atoms(&pred, truth.atoms()).unwrap();
            let (bb, dis) = aux_brute_force(&pred, truth.atoms());
            oracle_err = oracle_err.max((l.bb - bb).abs()).max((l.dis - dis).abs());

            let motion = random_frame(&mut rng);
            let moved: Vec<[Vec3; 4]> = pred.iter().map(|r| r.map(|a| apply_frame(&motion, &a))).collect();
            motion_err = motion_err.max((aux_loss_atoms(&moved, truth.atoms()).unwrap().dis - l.dis).abs());

            self_loss = self_loss.max(aux_loss(&truth, &truth).unwrap().total.abs());
        }
    }
    outcome(
        oracle_err < 1e-10 && motion_err < 1e-10 && self_loss == 0.0,
        format!("oracle gap {oracle_err:.1e}, rigid-motion change {motion_err:.1e}, identical-chain loss {self_loss:e}"),
    )
}

fn ac9() -> Outcome {
    let mut rng = RngState::new(9);
    let ideal = IdealResidue::default();
    let local = ideal.atoms();
    let (mut rigid, mut geometry): (f64, f64) = (0.0, 0.0);
    let mut idempotent = true;
    for _ in 0..100 {
        let n = 2 + (rng.uniform() * 8.0) as usize;
        let chain = realize_chain(&walk_chain(&mut rng, n), &ideal);
        for residue in chain.atoms() {
            for a in 0..4 {
                for b in 0..4 {
                    rigid = rigid.max(((residue[a] - residue[b]).norm() - (local[a] - local[b]).norm()).abs());
                }
            }
        }
        let imputed = impute_oxygen(&chain).unwrap();
        let atoms = imputed.atoms();
        for i in 0..atoms.len() - 1 {
            let [_, ca, c, o] = atoms[i];
            let n_next = atoms[i + 1][0];
            let normal = (ca - c).cross(&(n_next - c)).normalize();
            geometry = geometry
                .max((o - c).dot(&normal).abs())
                .max(((o - c).norm() - CO_BOND).abs())
                .max(((ca - c).angle(&(o - c)).to_degrees() - CA_C_O_ANGLE_DEG).abs());
        }
        idempotent &= impute_oxygen(&imputed).unwrap() == imputed;
    }
    outcome(
        rigid < 1e-10 && geometry < 1e-9 && idempotent,
        format!("rigidity {rigid:.1e}, oxygen plane/bond/angle {geometry:.1e}, idempotent {idempotent}"),
    )
}

const CLI_CONFIG: &str = r#"
[run]
seed = 21

[solver]
steps = 10

[data]
toy_size = 48

[train]
epochs = 30
batch_size = 16
learning_rate = 1e-2
hidden = [8]

[train.optimizer]
kind = "adam"

[bench]
trials = 20

[sample]
count = 6
realize_chain = true

[rectify]
pairs = 30
epochs = 5

[verify]
samples = 60
ks_steps = 10
time_grid = [0.5, 1.0]
"#;

/// Files that record where and when a run happened rather than what it
/// computed.
const NON_DATA: [&str; 3] = ["config.resolved.toml", "manifest.json", "pairs_manifest.json"];

fn qflow(args: &[&str]) -> Result<(), String> {
    let o = Command::new(env!("CARGO_BIN_EXE_qflow"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    // verify exits 2 when a check fails, which is a result, not an error
    match o.status.code() {
        Some(0) | Some(2) => Ok(()),
        _ => Err(format!("qflow {args:?}: {}", String::from_utf8_lossy(&o.stderr))),
    }
}

fn pipeline(root: &Path, cfg: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let p = |name: &str| root.join(name);
    let s = |p: &PathBuf| p.to_str().unwrap().to_string();
    let c = s(&cfg.to_path_buf());
    let (train, rect) = (p("train/checkpoint.qfc"), p("rectify/rectified.qfc"));
    qflow(&["bench-roundtrip", "--config", &c, "--out", &s(&p("bench"))])?;
    qflow(&["train", "--config", &c, "--out", &s(&p("train"))])?;
    qflow(&["sample", "--config", &c, "--checkpoint", &s(&train), "--out", &s(&p("sample"))])?;
    qflow(&["rectify", "--config", &c, "--checkpoint", &s(&train), "--out", &s(&p("rectify"))])?;
    qflow(&["verify", "--config", &c, "--checkpoint", &s(&train), "--rectified", &s(&rect), "--out", &s(&p("verify"))])?;
    let mut files = BTreeMap::new();
    for cmd in ["bench", "train", "sample", "rectify", "verify"] {
        for entry in fs::read_dir(p(cmd)).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            let name = path.file_name().unwrap().to_string_lossy().to_string();
            if !NON_DATA.contains(&name.as_str()) {
                files.insert(format!("{cmd}/{name}"), fs::read(&path).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(files)
}

fn ac10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, CLI_CONFIG).unwrap();
    let runs = (pipeline(&dir.path().join("a"), &cfg), pipeline(&dir.path().join("b"), &cfg));
    match runs {
        (Ok(a), Ok(b)) => {
            let differing: Vec<&String> = a.keys().filter(|k| a.get(*k) != b.get(*k)).collect();
            let same_set = a.keys().eq(b.keys());
            outcome(
                differing.is_empty() && same_set && a.len() >= 12,
                format!("{} artifacts compared, differing {differing:?}", a.len()),
            )
        }
        (Err(e), _) | (_, Err(e)) => outcome(false, e),
    }
}

fn main() {
    let criteria: [(&str, &str, fn() -> Outcome); 10] = [
        ("AC1", "round-trip stability near pi", ac1),
        ("AC2", "interpolant stability matrix", ac2),
        ("AC3", "IGSO(3) density and sampler", ac3),
        ("AC4", "exponential scheduler", ac4),
        ("AC5", "loss gradient", ac5),
        ("AC6", "one-step oracle integration", ac6),
        ("AC7", "toy train, rectify and compare", ac7),
        ("AC8", "auxiliary loss", ac8),
        ("AC9", "frame realization", ac9),
        ("AC10", "CLI determinism", ac10),
    ];
    let mut failed = 0;
    for (id, name, run) in criteria {
        let o = run();
        if !o.passed {
            failed += 1;
        }
        println!("[{}] {id} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 && std::env::var_os("QFLOW_ACCEPTANCE_STRICT").is_some_and(|v| v == "1") {
        std::process::exit(1);
    }
}
