//! von Mises-Fisher sampling on the unit sphere.

use rand::Rng;

use super::geometry::Vec3;
use crate::error::{Error, Result};

/// Two unit vectors completing `m` to a right-handed orthonormal basis.
pub fn orthonormal_basis(m: Vec3) -> (Vec3, Vec3) {
    let helper = if m.x().abs() < 0.9 {
        Vec3::new(1.0, 0.0, 0.0)
    } else {
        Vec3::new(0.0, 1.0, 0.0)
    };
    let a = m.cross(helper).normalized().expect("helper is never parallel to m");
    let b = m.cross(a);
    (a, b)
}

/// Draws one direction around unit vector `m` with concentration `kappa`.
///
/// The cosine to the mean direction is drawn by exact inversion of its
/// marginal CDF on the 2-sphere, the azimuth uniformly.
pub fn sample_one<R: Rng + ?Sized>(m: Vec3, kappa: f64, basis: (Vec3, Vec3), rng: &mut R) -> Vec3 {
    let xi: f64 = rng.random();
    let w = if kappa < 1e-8 {
        2.0 * xi - 1.0
    } else {
        (1.0 + (xi + (1.0 - xi) * (-2.0 * kappa).exp()).ln() / kappa).clamp(-1.0, 1.0)
    };
    let phi = rng.random::<f64>() * std::f64::consts::TAU;
    let s = (1.0 - w * w).max(0.0).sqrt();
    let (a, b) = basis;
    m * w + a * (s * phi.cos()) + b * (s * phi.sin())
}

/// `n` i.i.d. draws from vMF(`m`, `kappa`); `kappa = 0` is the uniform sphere.
pub fn sample_vmf<R: Rng + ?Sized>(m: Vec3, kappa: f64, n: usize, rng: &mut R) -> Result<Vec<Vec3>> {
    if !(kappa >= 0.0 && kappa.is_finite()) {
        return Err(Error::invalid("kappa must be finite and non-negative"));
    }
    if (m.norm() - 1.0).abs() > 1e-9 {
        return Err(Error::invalid("mean direction must be a unit vector"));
    }
    let basis = orthonormal_basis(m);
    Ok((0..n).map(|_| sample_one(m, kappa, basis, rng)).collect())
}

/// Uniformly distributed unit vector.
pub fn uniform_direction<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    let z = m11(rng);
    let phi = rng.random::<f64>() * std::f64::consts::TAU;
    let s = (1.0 - z * z).sqrt();
    Vec3::new(s * phi.cos(), s * phi.sin(), z)
}

fn m11<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    2.0 * rng.random::<f64>() - 1.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng;

    fn mean(v: &[Vec3]) -> Vec3 {
        v.iter().fold(Vec3::ZERO, |a, &b| a + b) * (1.0 / v.len() as f64)
    }

    #[test]
    fn samples_are_unit() {
        let m = Vec3::new(0.0, 0.6, 0.8);
        for &k in &[0.0, 1.0, 10.0, 1e6] {
            for r in sample_vmf(m, k, 1000, &mut rng(1)).unwrap() {
                assert!((r.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_has_zero_mean_resultant() {
        let s = sample_vmf(Vec3::new(0.0, 0.0, 1.0), 0.0, 100_000, &mut rng(7)).unwrap();
        assert!(mean(&s).norm() < 0.02);
    }

    #[test]
    fn huge_kappa_concentrates() {
        let m = Vec3::new(1.0, 1.0, 0.0).normalized().unwrap();
        for r in sample_vmf(m, 1e6, 10_000, &mut rng(3)).unwrap() {
            assert!(r.dot(m).clamp(-1.0, 1.0).acos() < 0.01);
        }
    }

    #[test]
    fn mean_resultant_length_matches_closed_form() {
        let m = Vec3::new(0.3, -0.4, 0.0).normalized().unwrap();
        let kappa: f64 = 10.0;
        let s = sample_vmf(m, kappa, 100_000, &mut rng(11)).unwrap();
        let got = s.iter().map(|r| r.dot(m)).sum::<f64>() / s.len() as f64;
        let oracle = 1.0 / kappa.tanh() - 1.0 / kappa;
        assert!((oracle - 0.9).abs() < 1e-4);
        assert!((got - oracle).abs() < 0.01);
        // Mean direction points along m.
        let md = mean(&s).normalized().unwrap();
        assert!(md.dot(m) > 0.999);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(sample_vmf(Vec3::new(1.0, 1.0, 0.0), 1.0, 1, &mut rng(0)).is_err());
        assert!(sample_vmf(Vec3::new(1.0, 0.0, 0.0), -1.0, 1, &mut rng(0)).is_err());
    }
}
