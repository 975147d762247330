//! Numeric kernels behind the toolbox kinds. Evaluation order is fixed and
//! shared with the primitive-block formulations, the function-body language
//! and the emitted C, so results agree bit for bit across all of them.

use std::collections::HashSet;

use num_traits::Float;
use rand_xoshiro::rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum KernelError {
    #[error("voxel size must be positive, got {0}")]
    NonPositiveVoxel(f64),
}

/// Hashable identity of a float with `-0` folded into `+0`.
fn key_bits<T: Float>(x: T) -> (u64, i16, i8) {
    (x + T::zero()).integer_decode()
}

/// Indices of the first row carrying each distinct key, in input order.
pub fn first_unique_rows<T: Float>(keys: &[[T; 3]]) -> Vec<usize> {
    let mut seen = HashSet::new();
    keys.iter()
        .enumerate()
        .filter(|(_, k)| seen.insert([key_bits(k[0]), key_bits(k[1]), key_bits(k[2])]))
        .map(|(i, _)| i)
        .collect()
}

/// Cell index of each point: `floor(coord / size)` per axis.
pub fn voxel_keys<T: Float>(points: &[[T; 3]], size: T) -> Vec<[T; 3]> {
    points
        .iter()
        .map(|p| [(p[0] / size).floor(), (p[1] / size).floor(), (p[2] / size).floor()])
        .collect()
}

/// One point per occupied voxel, ordered by first occurrence. The
/// representative is the first point in input order, or the mean of the
/// cell's points when `centroid` is set.
pub fn voxel_grid<T: Float>(points: &[[T; 3]], size: T, centroid: bool) -> Result<Vec<[T; 3]>, KernelError> {
    if !(size > T::zero()) {
        return Err(KernelError::NonPositiveVoxel(size.to_f64().unwrap_or(f64::NAN)));
    }
    let keys = voxel_keys(points, size);
    let firsts = first_unique_rows(&keys);
    if !centroid {
        return Ok(firsts.into_iter().map(|i| points[i]).collect());
    }
    let mut slot = std::collections::HashMap::new();
    for (s, &i) in firsts.iter().enumerate() {
        let k = keys[i];
        slot.insert([key_bits(k[0]), key_bits(k[1]), key_bits(k[2])], s);
    }
    let mut sums = vec![([T::zero(); 3], T::zero()); firsts.len()];
    for (p, k) in points.iter().zip(&keys) {
        let s = slot[&[key_bits(k[0]), key_bits(k[1]), key_bits(k[2])]];
        let (acc, count) = &mut sums[s];
        for j in 0..3 {
            acc[j] = acc[j] + p[j];
        }
        *count = *count + T::one();
    }
    Ok(sums
        .into_iter()
        .map(|(acc, c)| [acc[0] / c, acc[1] / c, acc[2] / c])
        .collect())
}

/// `min(n, max_n)` distinct indices in ascending order. When sampling is
/// needed, a partial Fisher-Yates shuffle over `0..n` draws
/// `j = i + next_u64() % (n - i)` from xoshiro256** seeded with
/// `seed_from_u64(seed)` for `i` in `0..max_n`.
pub fn random_indices(n: usize, max_n: usize, seed: u64) -> Vec<usize> {
    if n <= max_n {
        return (0..n).collect();
    }
    let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..max_n {
        let j = i + (rng.next_u64() % (n - i) as u64) as usize;
        idx.swap(i, j);
    }
    let mut chosen = idx[..max_n].to_vec();
    chosen.sort_unstable();
    chosen
}

pub fn random_downsample<T: Copy>(points: &[[T; 3]], max_n: usize, seed: u64) -> Vec<[T; 3]> {
    random_indices(points.len(), max_n, seed)
        .into_iter()
        .map(|i| points[i])
        .collect()
}

/// `Rz(yaw) * Ry(pitch) * Rx(roll)`, row-major.
pub fn rotation<T: Float>(roll: T, pitch: T, yaw: T) -> [[T; 3]; 3] {
    let (cr, sr) = (roll.cos(), roll.sin());
    let (cp, sp) = (pitch.cos(), pitch.sin());
    let (cy, sy) = (yaw.cos(), yaw.sin());
    [
        [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
        [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
        [-sp, cp * sr, cp * cr],
    ]
}

/// Rigid transform `R p + t`, each coordinate as `((r0*x + r1*y) + r2*z) + t`.
pub fn point_transform<T: Float>(points: &[[T; 3]], r: &[[T; 3]; 3], t: [T; 3]) -> Vec<[T; 3]> {
    points
        .iter()
        .map(|p| {
            let mut out = [T::zero(); 3];
            for i in 0..3 {
                out[i] = r[i][0] * p[0] + r[i][1] * p[1] + r[i][2] * p[2] + t[i];
            }
            out
        })
        .collect()
}

pub fn saturate<T: Float>(x: T, lower: T, upper: T) -> T {
    if x > upper {
        upper
    } else if x < lower {
        lower
    } else {
        x
    }
}

/// Stanley law: `sat(heading_error + atan(k*e / (v + eps)), -limit, limit)`.
pub fn stanley_steer<T: Float>(heading_error: T, cross_track: T, v: T, k: T, eps: T, limit: T) -> T {
    saturate(heading_error + (k * cross_track / (v + eps)).atan(), -limit, limit)
}

/// Signed cross-track and heading errors of pose `[x, y, yaw]` against a
/// reference pose.
pub fn tracking_errors<T: Float>(pose: [T; 3], reference: [T; 3]) -> (T, T) {
    let dx = pose[0] - reference[0];
    let dy = pose[1] - reference[1];
    let e = reference[2].sin() * dx - reference[2].cos() * dy;
    let he = reference[2] - pose[2];
    (e, he)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryParams<T> {
    pub k: T,
    pub eps: T,
    pub limit: T,
    pub kp: T,
    pub ki: T,
    pub kd: T,
    pub dt: T,
    pub amax: T,
    pub bmax: T,
}

/// PID memory carried between steps.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState<T> {
    pub integral: T,
    pub prev_error: T,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Controls<T> {
    pub accel: T,
    pub brake: T,
    pub steer: T,
}

/// Longitudinal PID on `v_ref - v_now`; positive effort drives the
/// accelerator, negative effort the brake.
pub fn pid_longitudinal<T: Float>(v_now: T, v_ref: T, p: &TrajectoryParams<T>, state: &mut PidState<T>) -> (T, T) {
    let ev = v_ref - v_now;
    let integral = state.integral + p.dt * ev;
    let deriv = (ev - state.prev_error) / p.dt;
    let u = p.kp * ev + p.ki * integral + p.kd * deriv;
    state.integral = integral;
    state.prev_error = ev;
    let accel = saturate(u, T::zero(), p.amax);
    let brake = saturate(-T::one() * u, T::zero(), p.bmax);
    (accel, brake)
}

/// One step of the trajectory follower: Stanley steering and PID speed
/// control computed independently.
pub fn trajectory_follower<T: Float>(
    pose_now: [T; 3],
    pose_ref: [T; 3],
    v_now: T,
    v_ref: T,
    p: &TrajectoryParams<T>,
    state: &mut PidState<T>,
) -> Controls<T> {
    let (e, he) = tracking_errors(pose_now, pose_ref);
    let steer = stanley_steer(he, e, v_now, p.k, p.eps, p.limit);
    let (accel, brake) = pid_longitudinal(v_now, v_ref, p, state);
    Controls { accel, brake, steer }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn voxel_example() {
        let pts = [[0.1, 0.1, 0.0], [0.2, 0.2, 0.0], [1.1, 0.0, 0.0]];
        let out = voxel_grid(&pts, 1.0, false).unwrap();
        assert_eq!(out, vec![[0.1, 0.1, 0.0], [1.1, 0.0, 0.0]]);
        assert!(voxel_grid::<f64>(&[], 1.0, false).unwrap().is_empty());
        assert!(voxel_grid(&pts, 0.0, false).is_err());
        let c = voxel_grid(&pts, 1.0, true).unwrap();
        assert!((c[0][0] - 0.15).abs() < 1e-15);
    }

    #[test]
    fn negative_zero_shares_a_cell() {
        let pts = [[-0.0, 0.5, 0.5], [0.0, 0.5, 0.5]];
        assert_eq!(voxel_grid(&pts, 1.0, false).unwrap().len(), 1);
    }

    #[test]
    fn random_indices_contract() {
        assert_eq!(random_indices(10, 50, 3), (0..10).collect::<Vec<_>>());
        let idx = random_indices(100, 50, 3);
        assert_eq!(idx.len(), 50);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(idx, random_indices(100, 50, 3));
        assert_ne!(idx, random_indices(100, 50, 4));
        assert!(random_indices(5, 0, 1).is_empty());
    }

    #[test]
    fn stanley_closed_form() {
        let s = stanley_steer(0.0, 1.0, 1.0, 1.0, 0.0, 10.0);
        assert!((s - std::f64::consts::FRAC_PI_4).abs() < 1e-12);
        assert_eq!(stanley_steer(0.0, 0.0, 3.0, 1.0, 0.1, 0.5), 0.0);
        assert_eq!(stanley_steer(0.0, 100.0, 0.0, 1.0, 0.1, 0.5), 0.5);
    }

    #[test]
    fn pid_zero_error_is_idle() {
        let p = TrajectoryParams {
            k: 1.0,
            eps: 0.1,
            limit: 0.5,
            kp: 1.0,
            ki: 0.5,
            kd: 0.1,
            dt: 0.1,
            amax: 3.0,
            bmax: 6.0,
        };
        let mut st = PidState::default();
        let (a, b) = pid_longitudinal(4.0, 4.0, &p, &mut st);
        assert_eq!((a, b), (0.0, 0.0));
        let (a, b) = pid_longitudinal(4.0, 5.0, &p, &mut st);
        assert!(a > 0.0 && b == 0.0);
    }

    #[test]
    fn identity_transform_is_exact() {
        let r = rotation(0.0f64, 0.0, 0.0);
        let pts = [[1.5, -2.0, 3.25]];
        assert_eq!(point_transform(&pts, &r, [0.0; 3]), pts.to_vec());
        let r32 = rotation(0.0f32, 0.0, 0.0);
        assert_eq!(point_transform(&[[1.0f32, 2.0, 3.0]], &r32, [1.0; 3]), vec![[2.0, 3.0, 4.0]]);
    }
}
