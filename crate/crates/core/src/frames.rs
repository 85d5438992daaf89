//! Rigid residue frames, backbone realization from an idealized residue,
//! oxygen imputation and the auxiliary backbone losses.
//!
//! Coordinates are in Ångström. The auxiliary losses convert to nanometres
//! before comparing, so the 0.6 cutoff is 6 Å.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::quat::{rotate_vector, UnitQuaternion, Vec3};

pub const ANGSTROM_PER_NM: f64 = 10.0;

/// Distance cutoff (nm) for the pairwise-distance loss.
pub const NEIGHBOUR_CUTOFF_NM: f64 = 0.6;

pub const ATOM_NAMES: [&str; 4] = ["N", "CA", "C", "O"];

/// Rigid transform `T = (x, q)` acting as `v -> x + q v q⁻¹`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameTransform {
    pub x: Vec3,
    pub q: UnitQuaternion,
}

impl FrameTransform {
    pub fn new(x: Vec3, q: UnitQuaternion) -> Self {
        Self { x, q }
    }

    pub fn identity() -> Self {
        Self::new(Vec3::zeros(), UnitQuaternion::identity())
    }

    pub fn apply(&self, local: &Vec3) -> Vec3 {
        apply_frame(self, local)
    }
}

pub fn apply_frame(frame: &FrameTransform, local: &Vec3) -> Vec3 {
    frame.x + rotate_vector(&frame.q, local)
}

/// Idealized backbone atoms in the residue frame, with Cα at the origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdealResidue {
    pub n: Vec3,
    pub ca: Vec3,
    pub c: Vec3,
    pub o: Vec3,
}

/// N–Cα–C ideal geometry (Engh & Huber bond lengths and angle).
pub const IDEAL_N: [f64; 3] = [-0.5272, 1.3593, 0.0];
pub const IDEAL_C: [f64; 3] = [1.5233, 0.0, 0.0];
pub const CO_BOND: f64 = 1.231;
pub const CA_C_O_ANGLE_DEG: f64 = 120.5;

impl Default for IdealResidue {
    fn default() -> Self {
        let c = Vec3::from(IDEAL_C);
        // In the N-Cα-C plane, on the same side of the Cα-C line as N.
        let theta = (180.0 - CA_C_O_ANGLE_DEG).to_radians();
        let o = c + Vec3::new(theta.cos(), theta.sin(), 0.0) * CO_BOND;
        Self {
            n: Vec3::from(IDEAL_N),
            ca: Vec3::zeros(),
            c,
            o,
        }
    }
}

impl IdealResidue {
    pub fn atoms(&self) -> [Vec3; 4] {
        [self.n, self.ca, self.c, self.o]
    }
}

/// Frames plus the atoms they place, `[N, Cα, C, O]` per residue.
#[derive(Clone, Debug, PartialEq)]
pub struct BackboneChain {
    frames: Vec<FrameTransform>,
    atoms: Vec<[Vec3; 4]>,
}

impl BackboneChain {
    pub fn frames(&self) -> &[FrameTransform] {
        &self.frames
    }

    pub fn atoms(&self) -> &[[Vec3; 4]] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn atom_count(&self) -> usize {
        4 * self.atoms.len()
    }

    pub fn positions(&self) -> impl Iterator<Item = &Vec3> {
        self.atoms.iter().flatten()
    }
}

pub fn realize_chain(frames: &[FrameTransform], ideal: &IdealResidue) -> BackboneChain {
    let local = ideal.atoms();
    let atoms = frames
        .iter()
        .map(|f| local.map(|a| apply_frame(f, &a)))
        .collect();
    BackboneChain {
        frames: frames.to_vec(),
        atoms,
    }
}

/// Replaces each non-terminal O with one placed in the Cα(i)–C(i)–N(i+1)
/// plane: C=O length [`CO_BOND`], Cα–C–O angle [`CA_C_O_ANGLE_DEG`], on the
/// far side of the Cα–C line from N(i+1). The last residue keeps its O.
pub fn impute_oxygen(chain: &BackboneChain) -> Result<BackboneChain> {
    if chain.len() < 2 {
        return Err(Error::LengthMismatch(format!(
            "oxygen imputation needs at least 2 residues, got {}",
            chain.len()
        )));
    }
    let theta = CA_C_O_ANGLE_DEG.to_radians();
    let mut atoms = chain.atoms.clone();
    for i in 0..atoms.len() - 1 {
        let [_, ca, c, _] = atoms[i];
        let n_next = atoms[i + 1][0];
        let e1 = (ca - c).normalize();
        let w = n_next - c;
        let perp = w - e1 * w.dot(&e1);
        let norm = perp.norm();
        if norm < 1e-12 {
            continue;
        }
        let e2 = perp / norm;
        atoms[i][3] = c + (e1 * theta.cos() - e2 * theta.sin()) * CO_BOND;
    }
    Ok(BackboneChain {
        frames: chain.frames.clone(),
        atoms,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AuxLoss {
    pub bb: f64,
    pub dis: f64,
    pub total: f64,
}

pub fn aux_loss(pred: &BackboneChain, truth: &BackboneChain) -> Result<AuxLoss> {
    aux_loss_atoms(&pred.atoms, &truth.atoms)
}

pub fn aux_loss_atoms(pred: &[[Vec3; 4]], truth: &[[Vec3; 4]]) -> Result<AuxLoss> {
    aux_loss_impl(pred, truth, None)
}

/// Auxiliary loss together with its gradient with respect to every predicted
/// atom position (in Å).
pub fn aux_loss_with_grad(
    pred: &[[Vec3; 4]],
    truth: &[[Vec3; 4]],
) -> Result<(AuxLoss, Vec<[Vec3; 4]>)> {
    let mut grad = vec![[Vec3::zeros(); 4]; pred.len()];
    let loss = aux_loss_impl(pred, truth, Some(&mut grad))?;
    Ok((loss, grad))
}

fn aux_loss_impl(
    pred: &[[Vec3; 4]],
    truth: &[[Vec3; 4]],
    mut grad: Option<&mut Vec<[Vec3; 4]>>,
) -> Result<AuxLoss> {
    if pred.len() != truth.len() {
        return Err(Error::LengthMismatch(format!(
            "predicted chain has {} residues, true chain {}",
            pred.len(),
            truth.len()
        )));
    }
    let n = truth.len();
    let scale = 1.0 / ANGSTROM_PER_NM;
    let p: Vec<Vec3> = pred.iter().flatten().map(|a| a * scale).collect();
    let a: Vec<Vec3> = truth.iter().flatten().map(|a| a * scale).collect();

    let inv_atoms = 1.0 / (4 * n) as f64;
    let mut bb = 0.0;
    for (pi, ai) in p.iter().zip(&a) {
        bb += (ai - pi).norm_squared();
    }
    bb *= inv_atoms;

    let mut neighbours: i64 = 0;
    let mut sum = 0.0;
    let mut pair_grads: Vec<(usize, usize, Vec3)> = Vec::new();
    for i in 0..a.len() {
        for j in 0..a.len() {
            let d = (a[i] - a[j]).norm();
            if d >= NEIGHBOUR_CUTOFF_NM {
                continue;
            }
            neighbours += 1;
            let diff = p[i] - p[j];
            let d_hat = diff.norm();
            let r = d - d_hat;
            sum += r * r;
            if grad.is_some() && d_hat > 0.0 {
                pair_grads.push((i, j, diff * (-2.0 * r / d_hat)));
            }
        }
    }
    let z = neighbours - n as i64;
    if z <= 0 {
        return Err(Error::DegenerateChain(z));
    }
    let dis = sum / z as f64;

    if let Some(g) = grad.as_deref_mut() {
        let flat = |k: usize| (k / 4, k % 4);
        for (k, (pk, ak)) in p.iter().zip(&a).enumerate() {
            let (r, c) = flat(k);
            g[r][c] = (pk - ak) * (2.0 * inv_atoms * scale);
        }
        let w = scale / z as f64;
        for (i, j, gij) in pair_grads {
            let (ri, ci) = flat(i);
            let (rj, cj) = flat(j);
            g[ri][ci] += gij * w;
            g[rj][cj] -= gij * w;
        }
    }

    Ok(AuxLoss {
        bb,
        dis,
        total: bb + dis,
    })
}

/// One line per atom: `ATOM <residue> <name> <x> <y> <z>`, residues numbered
/// from 1, coordinates in Å with six decimals.
pub fn write_chain_text(chain: &BackboneChain) -> String {
    let mut out = String::new();
    for (i, residue) in chain.atoms.iter().enumerate() {
        for (name, p) in ATOM_NAMES.iter().zip(residue) {
            let _ = writeln!(
                out,
                "ATOM {:>5} {:<3} {:>14.6} {:>14.6} {:>14.6}",
                i + 1,
                name,
                p.x,
                p.y,
                p.z
            );
        }
    }
    out
}

/// Parses the format written by [`write_chain_text`]. Blank lines and lines
/// starting with `#` are skipped.
pub fn parse_chain_text(text: &str) -> Result<Vec<[Vec3; 4]>> {
    let mut residues: Vec<[Vec3; 4]> = Vec::new();
    let mut expected = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 6 || fields[0] != "ATOM" {
            return Err(err(format!("expected 6 fields starting with ATOM, got {trimmed:?}")));
        }
        let residue: usize = fields[1]
            .parse()
            .map_err(|_| err(format!("bad residue index {:?}", fields[1])))?;
        let slot = expected % 4;
        if residue != expected / 4 + 1 || fields[2] != ATOM_NAMES[slot] {
            return Err(err(format!(
                "expected residue {} atom {}, got {} {}",
                expected / 4 + 1,
                ATOM_NAMES[slot],
                fields[1],
                fields[2]
            )));
        }
        let mut xyz = [0.0; 3];
        for (k, v) in xyz.iter_mut().enumerate() {
            *v = fields[3 + k]
                .parse()
                .map_err(|_| err(format!("bad coordinate {:?}", fields[3 + k])))?;
        }
        if slot == 0 {
            residues.push([Vec3::zeros(); 4]);
        }
        residues.last_mut().expect("pushed above")[slot] = Vec3::from(xyz);
        expected += 1;
    }
    if expected % 4 != 0 {
        return Err(Error::Parse {
            line: text.lines().count(),
            message: format!("incomplete final residue ({} of 4 atoms)", expected % 4),
        });
    }
    Ok(residues)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quat::test_util::*;
    use crate::quat::{exp_map, AxisAngle};

    fn random_frame(rng: &mut rand_chacha::ChaCha8Rng) -> FrameTransform {
        FrameTransform::new(random_vec(rng) * 5.0, random_unit(rng))
    }

    /// Chain built by stepping along a gently curving helix-like path so that
    /// consecutive residues are at realistic spacing.
    fn walk_chain(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> Vec<FrameTransform> {
        let mut frames = Vec::with_capacity(n);
        let mut f = random_frame(rng);
        for _ in 0..n {
            frames.push(f);
            let turn = exp_map(&AxisAngle::new(random_vec(rng) * 0.4));
            f = FrameTransform::new(f.x + f.q.rotate(&Vec3::new(3.8, 0.0, 0.0)), f.q * turn);
        }
        frames
    }

    fn brute_force(pred: &[[Vec3; 4]], truth: &[[Vec3; 4]]) -> (f64, f64) {
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

    #[test]
    fn ideal_residue_geometry() {
        let ideal = IdealResidue::default();
        assert_eq!(ideal.ca, Vec3::zeros());
        assert!(((ideal.n - ideal.ca).norm() - 1.458).abs() < 1e-3);
        assert!(((ideal.c - ideal.ca).norm() - 1.5233).abs() < 1e-12);
        assert!(((ideal.o - ideal.c).norm() - CO_BOND).abs() < 1e-12);
        let angle = (ideal.ca - ideal.c).angle(&(ideal.o - ideal.c)).to_degrees();
        assert!((angle - CA_C_O_ANGLE_DEG).abs() < 1e-9);
        let n_ca_c = (ideal.n - ideal.ca).angle(&(ideal.c - ideal.ca)).to_degrees();
        assert!((n_ca_c - 111.2).abs() < 0.1);
    }

    #[test]
    fn apply_frame_examples() {
        let v = Vec3::new(0.3, -1.0, 2.0);
        assert_eq!(apply_frame(&FrameTransform::identity(), &v), v);
        let shift = FrameTransform::new(Vec3::new(1.0, 0.0, 0.0), UnitQuaternion::identity());
        assert_eq!(apply_frame(&shift, &Vec3::zeros()), Vec3::new(1.0, 0.0, 0.0));
    }

    #[test]
    fn realize_chain_examples() {
        let ideal = IdealResidue::default();
        let chain = realize_chain(&[FrameTransform::identity()], &ideal);
        assert_eq!(chain.atoms()[0], ideal.atoms());
        assert_eq!(chain.atom_count(), 4);
        let offsets = [Vec3::new(1.0, 2.0, 3.0), Vec3::new(-4.0, 0.5, 0.0)];
        let frames: Vec<_> = offsets
            .iter()
            .map(|o| FrameTransform::new(*o, UnitQuaternion::identity()))
            .collect();
        let chain = realize_chain(&frames, &ideal);
        for (r, o) in offsets.iter().enumerate() {
            for (a, ia) in ideal.atoms().iter().enumerate() {
                assert!((chain.atoms()[r][a] - (ia + o)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn realized_residues_are_rigid() {
        let mut rng = rng(21);
        let ideal = IdealResidue::default().atoms();
        let frames: Vec<_> = (0..50).map(|_| random_frame(&mut rng)).collect();
        let chain = realize_chain(&frames, &IdealResidue::default());
        for residue in chain.atoms() {
            for a in 0..4 {
                for b in 0..4 {
                    let d = (residue[a] - residue[b]).norm();
                    let d0 = (ideal[a] - ideal[b]).norm();
                    assert!((d - d0).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn imputed_oxygen_geometry() {
        let mut rng = rng(22);
        let chain = realize_chain(&walk_chain(&mut rng, 8), &IdealResidue::default());
        let imputed = impute_oxygen(&chain).unwrap();
        let atoms = imputed.atoms();
        for i in 0..atoms.len() - 1 {
            let [_, ca, c, o] = atoms[i];
            let n_next = atoms[i + 1][0];
            assert!(((o - c).norm() - CO_BOND).abs() < 1e-9);
            let normal = (ca - c).cross(&(n_next - c)).normalize();
            assert!((o - c).dot(&normal).abs() < 1e-9);
            let angle = (ca - c).angle(&(o - c)).to_degrees();
            assert!((angle - CA_C_O_ANGLE_DEG).abs() < 1e-9);
            // far side of the Cα-C line from N(i+1)
            let side = |p: Vec3| (ca - c).cross(&(p - c)).dot(&normal);
            assert!(side(o) * side(n_next) < 0.0);
        }
        assert_eq!(atoms[atoms.len() - 1], chain.atoms()[chain.len() - 1]);
        assert_eq!(impute_oxygen(&imputed).unwrap(), imputed);
        let single = realize_chain(&[FrameTransform::identity()], &IdealResidue::default());
        assert!(impute_oxygen(&single).is_err());
    }

    #[test]
    fn aux_loss_examples() {
        let mut rng = rng(23);
        let truth = realize_chain(&walk_chain(&mut rng, 4), &IdealResidue::default());
        let zero = aux_loss(&truth, &truth).unwrap();
        assert_eq!((zero.bb, zero.dis, zero.total), (0.0, 0.0, 0.0));

        let delta_nm = Vec3::new(0.05, -0.02, 0.1);
        let shifted: Vec<FrameTransform> = truth
            .frames()
            .iter()
            .map(|f| FrameTransform::new(f.x + delta_nm * ANGSTROM_PER_NM, f.q))
            .collect();
        let pred = realize_chain(&shifted, &IdealResidue::default());
        let l = aux_loss(&pred, &truth).unwrap();
        assert!((l.bb - delta_nm.norm_squared()).abs() < 1e-12);
        assert!(l.dis.abs() < 1e-12);
    }

    #[test]
    fn aux_loss_matches_double_sum() {
        let mut rng = rng(24);
        for n in 2..=5 {
            let truth = realize_chain(&walk_chain(&mut rng, n), &IdealResidue::default());
            let mut pred = truth.atoms().to_vec();
            pred[n / 2][1] += Vec3::new(0.4, -0.3, 0.2);
            for residue in pred.iter_mut() {
                for a in residue.iter_mut() {
                    *a += random_vec(&mut rng) * 0.1;
                }
            }
            let l = aux_loss_atoms(&pred, truth.atoms()).unwrap();
            let (bb, dis) = brute_force(&pred, truth.atoms());
            assert!((l.bb - bb).abs() < 1e-10);
            assert!((l.dis - dis).abs() < 1e-10);
            assert!((l.total - bb - dis).abs() < 1e-10);
        }
    }

    #[test]
    fn distance_loss_rigid_invariance() {
        let mut rng = rng(25);
        let truth = realize_chain(&walk_chain(&mut rng, 5), &IdealResidue::default());
        let pred = realize_chain(&walk_chain(&mut rng, 5), &IdealResidue::default());
        let base = aux_loss(&pred, &truth).unwrap();
        let motion = random_frame(&mut rng);
        let moved: Vec<[Vec3; 4]> = pred
            .atoms()
            .iter()
            .map(|r| r.map(|a| apply_frame(&motion, &a)))
            .collect();
        let after = aux_loss_atoms(&moved, truth.atoms()).unwrap();
        assert!((after.dis - base.dis).abs() < 1e-10);
        assert!((after.bb - base.bb).abs() > 1e-3);
    }

    #[test]
    fn aux_loss_errors() {
        let mut rng = rng(26);
        let a = realize_chain(&walk_chain(&mut rng, 3), &IdealResidue::default());
        let b = realize_chain(&walk_chain(&mut rng, 2), &IdealResidue::default());
        assert!(matches!(aux_loss(&a, &b), Err(Error::LengthMismatch(_))));
        let empty: Vec<[Vec3; 4]> = Vec::new();
        assert!(matches!(aux_loss_atoms(&empty, &empty), Err(Error::DegenerateChain(0))));
    }

    #[test]
    fn unit_conversion_known_pair() {
        // two atoms 5 Å apart are neighbours (0.5 nm), 7 Å apart are not
        let mk = |gap: f64| -> Vec<[Vec3; 4]> {
            vec![
                [Vec3::zeros(); 4],
                [Vec3::new(gap, 0.0, 0.0); 4],
            ]
        };
        let truth = mk(5.0);
        let pred = mk(6.0);
        let l = aux_loss_atoms(&pred, &truth).unwrap();
        // 32 self/coincident pairs with d = 0, plus 32 cross pairs at 0.5 nm
        // each off by 0.1 nm: Z = 64 - 2
        assert!((l.dis - 32.0 * 0.01 / 62.0).abs() < 1e-12);
        let far = aux_loss_atoms(&mk(8.0), &mk(7.0)).unwrap();
        assert_eq!(far.dis, 0.0);
    }

    #[test]
    fn aux_gradient_matches_finite_differences() {
        let mut rng = rng(27);
        let truth = realize_chain(&walk_chain(&mut rng, 3), &IdealResidue::default());
        let mut pred = truth.atoms().to_vec();
        for residue in pred.iter_mut() {
            for a in residue.iter_mut() {
                *a += random_vec(&mut rng) * 0.3;
            }
        }
        let (_, grad) = aux_loss_with_grad(&pred, truth.atoms()).unwrap();
        let h = 1e-6;
        for r in 0..pred.len() {
            for a in 0..4 {
                for k in 0..3 {
                    let mut plus = pred.clone();
                    plus[r][a][k] += h;
                    let mut minus = pred.clone();
                    minus[r][a][k] -= h;
                    let fd = (aux_loss_atoms(&plus, truth.atoms()).unwrap().total
                        - aux_loss_atoms(&minus, truth.atoms()).unwrap().total)
                        / (2.0 * h);
                    assert!((fd - grad[r][a][k]).abs() < 1e-8 * (1.0 + fd.abs()));
                }
            }
        }
    }

    #[test]
    fn chain_text_round_trip() {
        let mut rng = rng(28);
        let chain = realize_chain(&walk_chain(&mut rng, 6), &IdealResidue::default());
        let text = write_chain_text(&chain);
        assert_eq!(text.lines().count(), 24);
        assert!(text.lines().next().unwrap().starts_with("ATOM     1 N  "));
        let parsed = parse_chain_text(&text).unwrap();
        assert_eq!(parsed.len(), 6);
        for (p, a) in parsed.iter().zip(chain.atoms()) {
            for k in 0..4 {
                assert!((p[k] - a[k]).amax() <= 5e-7);
            }
        }
        assert_eq!(write_chain_text(&chain), text);
        let truncated: String = text.lines().take(5).map(|l| format!("{l}\n")).collect();
        assert!(parse_chain_text(&truncated).is_err());
        let swapped = text.replacen(" CA ", " C  ", 1);
        assert!(matches!(parse_chain_text(&swapped), Err(Error::Parse { line: 2, .. })));
    }
}
