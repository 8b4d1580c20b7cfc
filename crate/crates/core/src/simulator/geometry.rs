//! Path-length geometry around a moving point and the resulting Doppler shift.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::RadioConfig;

/// Cartesian 3-vector in metres (or m/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Vec3(pub [f64; 3]);

impl Vec3 {
    pub const ZERO: Vec3 = Vec3([0.0; 3]);

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Vec3([x, y, z])
    }

    pub fn x(self) -> f64 {
        self.0[0]
    }
    pub fn y(self) -> f64 {
        self.0[1]
    }
    pub fn z(self) -> f64 {
        self.0[2]
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.0[0] * o.0[0] + self.0[1] * o.0[1] + self.0[2] * o.0[2]
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        let [a, b, c] = self.0;
        let [d, e, f] = o.0;
        Vec3([b * f - c * e, c * d - a * f, a * e - b * d])
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self * (1.0 / n))
    }

    pub fn is_finite(self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        self * -1.0
    }
}

/// Exact and first-order change of the observer-to-point distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathChange {
    pub exact_m: f64,
    pub approx_m: f64,
}

/// Distance change between a fixed `observer` and a point moving from `p0`
/// with velocity `v` for `t` seconds.
///
/// The approximation is the projection of the displacement on the unit
/// vector from the observer to the point; its error is bounded by
/// `(|v| t)^2 / (2 d)` for displacements below half the distance.
pub fn path_length_change(observer: Vec3, p0: Vec3, v: Vec3, t: f64) -> Result<PathChange> {
    let r = p0 - observer;
    let d = r.norm();
    if d <= 0.0 {
        return Err(Error::invalid("observer coincides with the moving point"));
    }
    let exact_m = (r + v * t).norm() - d;
    let approx_m = v.dot(r) / d * t;
    Ok(PathChange { exact_m, approx_m })
}

/// Linearised total path change over every segment incident at the moving point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TotalPathChange {
    pub total_m: f64,
    pub segments: usize,
    /// Mean cosine between the velocity and the incident directions.
    pub cos_equivalent: f64,
    /// `total_m / c`.
    pub delay_change_s: f64,
}

/// Sums `|v| t cos(theta_i)` over incident segment directions `dirs`
/// (vectors pointing from each segment's far end to the moving point).
pub fn total_path_change(dirs: &[Vec3], v: Vec3, t: f64) -> Result<TotalPathChange> {
    if dirs.is_empty() {
        return Err(Error::invalid("need at least one segment"));
    }
    let speed = v.norm();
    let mut total = 0.0;
    let mut cos_sum = 0.0;
    for d in dirs {
        let u = d
            .normalized()
            .ok_or_else(|| Error::invalid("degenerate segment direction"))?;
        let cos = if speed > 0.0 { u.dot(v) / speed } else { 0.0 };
        cos_sum += cos;
        total += speed * t * cos;
    }
    let k = dirs.len();
    Ok(TotalPathChange {
        total_m: total,
        segments: k,
        cos_equivalent: cos_sum / k as f64,
        delay_change_s: total / crate::SPEED_OF_LIGHT,
    })
}

/// Doppler shift `(f_c / c) (v . r)` for motion seen along unit direction `r`.
pub fn doppler_shift(v: Vec3, r: Vec3, radio: &RadioConfig) -> f64 {
    radio.carrier_hz / radio.speed_of_light() * v.dot(r)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::SPEED_OF_LIGHT;
    use proptest::prelude::*;

    #[test]
    fn collinear_motion_is_exact() {
        let c = path_length_change(Vec3::ZERO, Vec3::new(3.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0), 0.1).unwrap();
        assert!((c.exact_m - 0.1).abs() < 1e-12);
        assert!((c.approx_m - 0.1).abs() < 1e-15);
    }

    #[test]
    fn perpendicular_motion_is_second_order() {
        let c = path_length_change(Vec3::ZERO, Vec3::new(3.0, 0.0, 0.0), Vec3::new(0.0, 1.0, 0.0), 0.1).unwrap();
        assert_eq!(c.approx_m, 0.0);
        let oracle = (9.0f64 + 0.01).sqrt() - 3.0;
        assert!((c.exact_m - oracle).abs() < 1e-15);
        assert!((c.exact_m - 1.6662e-3).abs() < 1e-7);
    }

    #[test]
    fn zero_time_no_change() {
        let c = path_length_change(
            Vec3::new(1.0, 2.0, 3.0),
            Vec3::new(-1.0, 0.5, 2.0),
            Vec3::new(0.3, -0.7, 1.1),
            0.0,
        )
        .unwrap();
        assert_eq!((c.exact_m, c.approx_m), (0.0, 0.0));
        assert!(path_length_change(Vec3::ZERO, Vec3::ZERO, Vec3::new(1.0, 0.0, 0.0), 1.0).is_err());
    }

    #[test]
    fn total_change_simple_cases() {
        let v = Vec3::new(1.0, 0.0, 0.0);
        let two = total_path_change(&[Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0)], v, 0.1).unwrap();
        assert!((two.total_m - 0.2).abs() < 1e-15);
        assert_eq!(two.segments, 2);
        assert!((two.cos_equivalent - 1.0).abs() < 1e-15);
        assert!((two.delay_change_s - 0.2 / SPEED_OF_LIGHT).abs() < 1e-24);
        let opp = total_path_change(&[Vec3::new(1.0, 0.0, 0.0), Vec3::new(-1.0, 0.0, 0.0)], v, 0.1).unwrap();
        assert_eq!(opp.total_m, 0.0);
        assert!(total_path_change(&[], v, 0.1).is_err());
    }

    #[test]
    fn total_change_matches_per_segment_sum() {
        let observers = [
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(4.0, 1.0, 0.5),
            Vec3::new(-2.0, 3.0, 1.0),
        ];
        let p0 = Vec3::new(1.0, 1.5, 1.2);
        let v = Vec3::new(0.4, -0.9, 0.3);
        let t = 0.05;
        let dirs: Vec<Vec3> = observers.iter().map(|&o| p0 - o).collect();
        let got = total_path_change(&dirs, v, t).unwrap();
        let oracle: f64 = observers
            .iter()
            .map(|&o| path_length_change(o, p0, v, t).unwrap().approx_m)
            .sum();
        assert!((got.total_m - oracle).abs() < 1e-15);
        assert!((got.total_m - 3.0 * v.norm() * t * got.cos_equivalent).abs() < 1e-15);
    }

    #[test]
    fn doppler_examples() {
        let radio = RadioConfig::wifi_2g4();
        let oracle = 2.4e9 / 299_792_458.0;
        let r = Vec3::new(0.0, 0.0, 1.0);
        let f = doppler_shift(Vec3::new(0.0, 0.0, 1.0), r, &radio);
        assert!((f - oracle).abs() / oracle < 1e-6);
        assert!((f - 8.0).abs() < 0.01);
        assert_eq!(doppler_shift(Vec3::new(1.0, 0.0, 0.0), r, &radio), 0.0);
        let neg = doppler_shift(Vec3::new(0.0, 0.0, -0.5), r, &radio);
        assert!((neg + 0.5 * oracle).abs() < 1e-9);
        assert!((neg + 4.0025).abs() < 1e-3);
    }

    proptest! {
        #[test]
        fn first_order_error_bound(
            obs in prop::array::uniform3(-5.0f64..5.0),
            p in prop::array::uniform3(-5.0f64..5.0),
            v in prop::array::uniform3(-1.5f64..1.5),
            t in 0.0f64..0.2,
        ) {
            let (o, p0, v) = (Vec3(obs), Vec3(p), Vec3(v));
            let d = (p0 - o).norm();
            prop_assume!(d > 1e-3 && v.norm() * t < d / 2.0);
            let c = path_length_change(o, p0, v, t).unwrap();
            let bound = (v.norm() * t).powi(2) / (2.0 * d);
            prop_assert!((c.exact_m - c.approx_m).abs() <= bound * (1.0 + 1e-9) + 1e-15);
        }
    }
}
