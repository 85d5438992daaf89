//! Fixed, seeded toy tasks used by training smoke tests and the verification
//! checks.
//!
//! * [`FourModeToy`]: four tight clusters on SE(3), each a translation centre
//!   with Gaussian jitter and a rotation centre with a small random rotation
//!   applied on the right.
//! * [`CrossingToy`]: a deliberately bad coupling. Two source clusters at
//!   `±c e1` / `exp(±θ e3)` are each paired with the opposite target cluster,
//!   so every straight path passes through the origin and the identity. The
//!   transport-optimal coupling keeps each cluster on its own side.

use crate::frames::FrameTransform;
use crate::model::CouplingPair;
use crate::quat::{exp_map, geodesic_distance, AxisAngle, UnitQuaternion, Vec3};
use crate::so3_stats::{sample_gaussian_r3, RngState};

fn jitter(centre: &FrameTransform, sx: f64, sq: f64, rng: &mut RngState) -> FrameTransform {
    let x = centre.x + sample_gaussian_r3(rng) * sx;
    let dq = exp_map(&AxisAngle::new(sample_gaussian_r3(rng) * sq));
    FrameTransform::new(x, centre.q * dq)
}

fn centre(x: [f64; 3], axis: [f64; 3], angle: f64) -> FrameTransform {
    let axis = Vec3::from(axis).normalize();
    FrameTransform::new(Vec3::from(x), exp_map(&AxisAngle::new(axis * angle)))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModeDistance {
    pub index: usize,
    pub translation: f64,
    pub rotation: f64,
}

impl ModeDistance {
    pub fn total(&self) -> f64 {
        self.translation + self.rotation
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FourModeToy {
    pub modes: [FrameTransform; 4],
    pub translation_sigma: f64,
    pub rotation_sigma: f64,
}

impl Default for FourModeToy {
    fn default() -> Self {
        Self {
            modes: [
                centre([2.0, 0.0, 0.0], [0.0, 0.0, 1.0], 0.5),
                centre([-1.5, 1.0, 0.0], [1.0, 0.0, 0.0], 1.2),
                centre([0.0, -2.5, 0.5], [0.0, 1.0, 0.0], 2.0),
                centre([0.5, 1.5, -2.0], [1.0, 1.0, 0.0], 2.6),
            ],
            translation_sigma: 0.05,
            rotation_sigma: 0.05,
        }
    }
}

impl FourModeToy {
    /// `n` draws; mode `i % 4` for draw `i`, so the mode counts are balanced.
    pub fn sample(&self, n: usize, rng: &mut RngState) -> Vec<FrameTransform> {
        (0..n)
            .map(|i| jitter(&self.modes[i % 4], self.translation_sigma, self.rotation_sigma, rng))
            .collect()
    }

    /// Mode minimizing translation distance plus rotation angle.
    pub fn nearest_mode(&self, f: &FrameTransform) -> ModeDistance {
        self.modes
            .iter()
            .enumerate()
            .map(|(index, m)| ModeDistance {
                index,
                translation: (f.x - m.x).norm(),
                rotation: geodesic_distance(&f.q, &m.q),
            })
            .min_by(|a, b| a.total().total_cmp(&b.total()))
            .expect("four modes")
    }

    /// Toy sampling error: distance to the nearest mode centre.
    pub fn error(&self, f: &FrameTransform) -> f64 {
        self.nearest_mode(f).total()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossingToy {
    pub separation: f64,
    pub angle: f64,
    pub sigma: f64,
}

impl Default for CrossingToy {
    fn default() -> Self {
        Self {
            separation: 2.0,
            angle: 1.0,
            sigma: 0.1,
        }
    }
}

impl CrossingToy {
    fn cluster(&self, side: f64) -> FrameTransform {
        FrameTransform::new(
            Vec3::new(side * self.separation, 0.0, 0.0),
            exp_map(&AxisAngle::new(Vec3::new(0.0, 0.0, side * self.angle))),
        )
    }

    pub fn source(&self, side: f64, rng: &mut RngState) -> FrameTransform {
        jitter(&self.cluster(side), self.sigma, self.sigma, rng)
    }

    /// Crossed pairs: draw `i` starts on side `+1` for even `i`, `-1` for odd,
    /// and ends on the opposite side.
    pub fn crossed_pairs(&self, n: usize, rng: &mut RngState) -> Vec<CouplingPair> {
        (0..n)
            .map(|i| {
                let side = if i % 2 == 0 { 1.0 } else { -1.0 };
                let t0 = self.source(side, rng);
                let t1 = jitter(&self.cluster(-side), self.sigma, self.sigma, rng);
                CouplingPair { t0, t1 }
            })
            .collect()
    }

    /// Source-only draws, alternating sides like [`Self::crossed_pairs`].
    pub fn sources(&self, n: usize, rng: &mut RngState) -> Vec<FrameTransform> {
        (0..n)
            .map(|i| self.source(if i % 2 == 0 { 1.0 } else { -1.0 }, rng))
            .collect()
    }

    /// Distance from `f` to the nearer target cluster centre.
    pub fn error(&self, f: &FrameTransform) -> f64 {
        [1.0, -1.0]
            .iter()
            .map(|&s| {
                let c = self.cluster(s);
                (f.x - c.x).norm() + geodesic_distance(&f.q, &c.q)
            })
            .fold(f64::INFINITY, f64::min)
    }

    pub fn rotation(&self, side: f64) -> UnitQuaternion {
        self.cluster(side).q
    }
}
