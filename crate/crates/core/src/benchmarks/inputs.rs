//! Synthetic input traces: street-scene point clouds and a reference
//! trajectory with a perturbed vehicle pose.

use std::collections::BTreeMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::simulator::{Trace, Value};

/// Nearest multiple of `1 / scale`, which prints as a short decimal.
fn quantize(x: f64, scale: f64) -> f64 {
    (x * scale).round() / scale
}

/// Point count of step `step`: a full 10,000-point sweep every 25 steps,
/// 1,000 to 1,500 points otherwise.
pub fn cloud_size(step: usize, rng: &mut impl Rng) -> usize {
    if step % 25 == 0 {
        10_000
    } else {
        rng.gen_range(1_000..=1_500)
    }
}

/// Ground plane plus a handful of box obstacles, coordinates on a 1 cm grid.
pub fn street_cloud(n: usize, boxes: &[([f64; 3], [f64; 3])], rng: &mut impl Rng) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| {
            let p = if boxes.is_empty() || rng.gen_bool(0.6) {
                [rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0), rng.gen_range(-1.85..-1.75)]
            } else {
                let (c, h) = boxes[rng.gen_range(0..boxes.len())];
                [
                    c[0] + rng.gen_range(-h[0]..h[0]),
                    c[1] + rng.gen_range(-h[1]..h[1]),
                    c[2] + rng.gen_range(-h[2]..h[2]),
                ]
            };
            p.map(|x| quantize(x, 100.0))
        })
        .collect()
}

pub fn cloud_trace(port: &str, steps: usize, seed: u64) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut boxes: Vec<([f64; 3], [f64; 3])> = (0..8)
        .map(|_| {
            (
                [rng.gen_range(-25.0..25.0), rng.gen_range(-25.0..25.0), -1.0],
                [rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0), rng.gen_range(0.5..1.0)],
            )
        })
        .collect();
    let mut trace = Trace::default();
    for step in 0..steps {
        let n = cloud_size(step, &mut rng);
        let points = street_cloud(n, &boxes, &mut rng);
        trace.steps.push(BTreeMap::from([(port.to_string(), Value::Cloud(points))]));
        for b in &mut boxes {
            b.0[0] -= 0.4;
        }
    }
    trace
}

/// Reference pose `[x, y, yaw]` and speed along a gently weaving path, and
/// a vehicle state scattered around it.
pub fn trajectory_trace(steps: usize, dt: f64, seed: u64) -> Trace {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut x, mut y) = (0.0f64, 0.0f64);
    let mut trace = Trace::default();
    for step in 0..steps {
        let t = step as f64 * dt;
        let yaw = 0.3 * (0.2 * t).sin();
        let v_ref = 8.0 + 2.0 * (0.15 * t).sin();
        x += v_ref * yaw.cos() * dt;
        y += v_ref * yaw.sin() * dt;
        let q = |v: f64| quantize(v, 1000.0);
        let pose_ref = [q(x), q(y), q(yaw)];
        let pose_now = [
            q(x + rng.gen_range(-0.5..0.5)),
            q(y + rng.gen_range(-0.5..0.5)),
            q(yaw + rng.gen_range(-0.1..0.1)),
        ];
        let v_now = q(v_ref + rng.gen_range(-1.0..1.0));
        trace.steps.push(BTreeMap::from([
            ("pose_now".to_string(), Value::Vector(pose_now.to_vec())),
            ("pose_ref".to_string(), Value::Vector(pose_ref.to_vec())),
            ("v_now".to_string(), Value::Scalar(v_now)),
            ("v_ref".to_string(), Value::Scalar(q(v_ref))),
        ]));
    }
    trace
}
