#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use teleop_core::calibration::{pair_frames, CalibrationFrame, SharedMap};
use teleop_core::geometry::{Rot3, Vec3};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn vec3(rng: &mut impl Rng, scale: f64) -> Vec3 {
    Vec3::new(
        rng.gen_range(-scale..scale),
        rng.gen_range(-scale..scale),
        rng.gen_range(-scale..scale),
    )
}

/// Uniformly distributed rotation from a random unit quaternion.
pub fn rotation(rng: &mut impl Rng) -> Rot3 {
    loop {
        let q: [f64; 4] = [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ];
        let n2: f64 = q.iter().map(|v| v * v).sum();
        if n2 > 1e-4 && n2 <= 1.0 {
            return Rot3::from_quaternion(q).unwrap();
        }
    }
}

/// Frame whose axes are the columns of `basis` scaled to `lx`, `ly`.
pub fn frame(origin: Vec3, basis: &Rot3, lx: f64, ly: f64) -> CalibrationFrame {
    let m = basis.matrix();
    CalibrationFrame::from_axes(origin, m.col(0) * lx, m.col(1) * ly).unwrap()
}

/// Random human/robot pair with equal axis lengths and a random η.
pub fn shared_map(rng: &mut impl Rng) -> SharedMap {
    let lx = rng.gen_range(0.1..1.0);
    let ly = rng.gen_range(0.1..1.0);
    let human = frame(vec3(rng, 1.0), &rotation(rng), lx, ly);
    let robot = frame(vec3(rng, 1.0), &rotation(rng), lx, ly);
    pair_frames(human, robot, rng.gen_range(0.2..3.0)).unwrap()
}

pub fn max_abs_diff(a: &Rot3, b: &Rot3) -> f64 {
    a.to_row_major()
        .iter()
        .zip(b.to_row_major().iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
