//! Forward LED-to-photodiode channel model.
//!
//! Geometry primitives, the full Lambertian received-signal-strength model,
//! its fourth-power simplification for a horizontal photodiode on the ground
//! plane, and deterministic additive Gaussian noise.
//!
//! Conventions: positions are in meters with z up; the ground plane is z = 0.
//! LED normals point toward the floor, so an untilted LED has normal
//! `[0, 0, -1]` and the inner product between the normal and the LED-to-PD
//! vector is positive for any receiver below the LED.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::rng;

/// 3-vector of f64, used for positions (meters) and unit direction vectors.
pub type Vec3 = Vector3<f64>;

/// Tolerance on the norm of unit direction vectors.
pub const UNIT_NORM_TOL: f64 = 1e-12;

/// Unit normal for a tilt given as polar/azimuth angles in degrees.
///
/// Zero tilt points straight down; the polar angle opens the normal away
/// from vertical and the azimuth rotates it about the vertical axis.
pub fn normal_from_tilt_deg(tilt_polar_deg: f64, tilt_azimuth_deg: f64) -> Vec3 {
    let theta = tilt_polar_deg.to_radians();
    let gamma = tilt_azimuth_deg.to_radians();
    Vec3::new(
        theta.sin() * gamma.cos(),
        theta.sin() * gamma.sin(),
        -theta.cos(),
    )
}

/// A ceiling LED with known (ground-truth) pose and radiometric parameters.
///
/// `gain` aggregates all radiometric constants (emitted power, detector
/// responsivity and area, Lambertian normalization) into one scalar, so RSS
/// values are in dimensionless model units.
#[derive(Debug, Clone, PartialEq)]
pub struct LedGroundTruth {
    pub position: Vec3,
    /// Unit normal, z-component strictly negative.
    pub normal: Vec3,
    pub gain: f64,
    pub lambertian_order: f64,
    pub tilt_polar_deg: f64,
    pub tilt_azimuth_deg: f64,
}

impl LedGroundTruth {
    /// Build an LED from tilt angles; the normal is derived.
    pub fn new(
        position: Vec3,
        tilt_polar_deg: f64,
        tilt_azimuth_deg: f64,
        gain: f64,
        lambertian_order: f64,
    ) -> Result<Self> {
        if !position.iter().all(|v| v.is_finite()) {
            return Err(Error::Validation("LED position must be finite".into()));
        }
        if !(gain > 0.0) {
            return Err(Error::Validation(format!("LED gain must be > 0, got {gain}")));
        }
        if !(lambertian_order >= 1.0) {
            return Err(Error::Validation(format!(
                "Lambertian order must be >= 1, got {lambertian_order}"
            )));
        }
        if !(0.0..90.0).contains(&tilt_polar_deg) {
            return Err(Error::Validation(format!(
                "tilt polar angle must be in [0, 90) degrees, got {tilt_polar_deg}"
            )));
        }
        Ok(Self {
            position,
            normal: normal_from_tilt_deg(tilt_polar_deg, tilt_azimuth_deg),
            gain,
            lambertian_order,
            tilt_polar_deg,
            tilt_azimuth_deg,
        })
    }

    /// Height above the ground plane.
    pub fn height(&self) -> f64 {
        self.position.z
    }
}

/// Photodiode pose. All calibration and localization flows in this library
/// keep the PD horizontal on the ground plane (`position.z = 0`,
/// `normal = [0, 0, 1]`); [`PdPose::ground`] is the usual constructor.
#[derive(Debug, Clone, PartialEq)]
pub struct PdPose {
    pub position: Vec3,
    pub normal: Vec3,
}

impl PdPose {
    /// Horizontal PD at `(x, y)` on the ground plane.
    pub fn ground(x: f64, y: f64) -> Self {
        Self {
            position: Vec3::new(x, y, 0.0),
            normal: Vec3::new(0.0, 0.0, 1.0),
        }
    }

    fn is_ground_aligned(&self) -> bool {
        self.position.z.abs() < UNIT_NORM_TOL
            && (self.normal - Vec3::new(0.0, 0.0, 1.0)).norm() < UNIT_NORM_TOL
    }
}

/// Additive Gaussian noise specification: standard deviation in RSS units
/// plus the seed of the deterministic stream family the draws come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(sigma: f64, seed: u64) -> Result<Self> {
        if !(sigma >= 0.0) {
            return Err(Error::Validation(format!(
                "noise standard deviation must be >= 0, got {sigma}"
            )));
        }
        Ok(Self { sigma, seed })
    }
}

/// Emission and incidence angle cosines between an LED and a PD.
///
/// Returns `(cos_phi_s, cos_phi_r)` where `phi_s` is measured from the LED
/// normal and `phi_r` from the PD normal. Both lie in `[-1, 1]`; negative
/// values mean the counterpart is behind the respective sensing hemisphere.
pub fn cos_angles(led: &LedGroundTruth, pd: &PdPose) -> Result<(f64, f64)> {
    let d = pd.position - led.position;
    let dist = d.norm();
    if dist == 0.0 {
        return Err(Error::Domain(
            "LED and PD positions coincide; angles are undefined".into(),
        ));
    }
    let cos_s = (led.normal.dot(&d) / dist).clamp(-1.0, 1.0);
    let cos_r = (pd.normal.dot(&(-d)) / dist).clamp(-1.0, 1.0);
    Ok((cos_s, cos_r))
}

/// Noiseless RSS under the full Lambertian model
/// `c * cos^m(phi_s) * cos(phi_r) / d^2`.
///
/// Returns 0 when either cosine is non-positive: no light is emitted behind
/// the LED hemisphere and none is collected behind the PD plane.
pub fn rss_general(led: &LedGroundTruth, pd: &PdPose) -> Result<f64> {
    let (cos_s, cos_r) = cos_angles(led, pd)?;
    if cos_s <= 0.0 || cos_r <= 0.0 {
        return Ok(0.0);
    }
    let d2 = (pd.position - led.position).norm_squared();
    Ok(led.gain * cos_s.powf(led.lambertian_order) * cos_r / d2)
}

/// Noiseless RSS under the simplified model `c * h / d^4 * (n_S . d)`,
/// valid for a horizontal PD on the ground plane and Lambertian order 1.
///
/// For `m = 1` and a vertical PD normal this equals [`rss_general`]
/// identically wherever `n_S . d > 0`; unlike the general form it is not
/// clamped, so it is only meaningful on that domain.
pub fn rss_simplified(led: &LedGroundTruth, pd: &PdPose) -> Result<f64> {
    if !pd.is_ground_aligned() {
        return Err(Error::Contract(
            "simplified RSS model requires a horizontal PD on the ground plane".into(),
        ));
    }
    let h = led.height();
    if !(h > 0.0) {
        return Err(Error::Domain(format!(
            "LED height must be > 0 for the simplified model, got {h}"
        )));
    }
    let d = pd.position - led.position;
    let d2 = d.norm_squared();
    if d2 == 0.0 {
        return Err(Error::Domain(
            "LED and PD positions coincide; RSS is undefined".into(),
        ));
    }
    Ok(led.gain * h / (d2 * d2) * led.normal.dot(&d))
}

/// Add one Gaussian noise draw from the `(noise.seed, stream_index)` stream.
///
/// Pure: the same arguments always produce the same output, independent of
/// call order or threading. `sigma = 0` returns the signal bit-exactly.
pub fn add_noise(signal: f64, noise: &NoiseSpec, stream_index: u64) -> f64 {
    if noise.sigma == 0.0 {
        return signal;
    }
    signal + noise.sigma * rng::standard_normal(noise.seed, stream_index)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn led_overhead(tilt_polar: f64, tilt_azimuth: f64) -> LedGroundTruth {
        LedGroundTruth::new(Vec3::new(0.0, 0.0, 4.0), tilt_polar, tilt_azimuth, 1.0, 1.0).unwrap()
    }

    #[test]
    fn cos_angles_directly_below() {
        let (cs, cr) = cos_angles(&led_overhead(0.0, 0.0), &PdPose::ground(0.0, 0.0)).unwrap();
        assert_relative_eq!(cs, 1.0, max_relative = 1e-12);
        assert_relative_eq!(cr, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn cos_angles_45_degrees() {
        let (cs, cr) = cos_angles(&led_overhead(0.0, 0.0), &PdPose::ground(4.0, 0.0)).unwrap();
        let expected = 1.0 / 2.0_f64.sqrt(); // 0.70711
        assert_relative_eq!(cs, expected, max_relative = 1e-9);
        assert_relative_eq!(cr, expected, max_relative = 1e-9);
    }

    #[test]
    fn cos_angles_aligned_normal() {
        // LED normal pointing exactly at the PD.
        let pd = PdPose::ground(1.5, -0.7);
        let mut led = led_overhead(0.0, 0.0);
        led.normal = (pd.position - led.position).normalize();
        let (cs, _) = cos_angles(&led, &pd).unwrap();
        assert_relative_eq!(cs, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn cos_angles_coincident_errors() {
        let led = led_overhead(0.0, 0.0);
        let pd = PdPose {
            position: led.position,
            normal: Vec3::new(0.0, 0.0, 1.0),
        };
        assert!(matches!(cos_angles(&led, &pd), Err(Error::Domain(_))));
    }

    #[test]
    fn rss_general_overhead_unit_gain() {
        let s = rss_general(&led_overhead(0.0, 0.0), &PdPose::ground(0.0, 0.0)).unwrap();
        assert_relative_eq!(s, 0.0625, max_relative = 1e-12);
    }

    #[test]
    fn rss_general_45_degrees() {
        let s = rss_general(&led_overhead(0.0, 0.0), &PdPose::ground(4.0, 0.0)).unwrap();
        assert_relative_eq!(s, 0.015625, max_relative = 1e-12);
    }

    #[test]
    fn rss_general_clamps_behind_hemisphere() {
        // Tilt the LED hard away from the PD: 89 degrees polar, azimuth 0
        // leans toward +x, PD far on -x.
        let led = led_overhead(89.0, 0.0);
        let s = rss_general(&led, &PdPose::ground(-50.0, 0.0)).unwrap();
        assert_eq!(s, 0.0);
    }

    #[test]
    fn rss_simplified_matches_hand_values() {
        let led = led_overhead(0.0, 0.0);
        let s0 = rss_simplified(&led, &PdPose::ground(0.0, 0.0)).unwrap();
        assert_relative_eq!(s0, 0.0625, max_relative = 1e-12);
        let s1 = rss_simplified(&led, &PdPose::ground(4.0, 0.0)).unwrap();
        assert_relative_eq!(s1, 0.015625, max_relative = 1e-12);
    }

    #[test]
    fn rss_simplified_linear_in_gain() {
        let mut led = led_overhead(2.3, 115.0);
        let base = rss_simplified(&led, &PdPose::ground(1.2, -0.4)).unwrap();
        led.gain = 2.0;
        let doubled = rss_simplified(&led, &PdPose::ground(1.2, -0.4)).unwrap();
        assert_relative_eq!(doubled, 2.0 * base, max_relative = 1e-12);
    }

    #[test]
    fn rss_simplified_rejects_elevated_pd() {
        let led = led_overhead(0.0, 0.0);
        let pd = PdPose {
            position: Vec3::new(1.0, 0.0, 0.5),
            normal: Vec3::new(0.0, 0.0, 1.0),
        };
        assert!(matches!(rss_simplified(&led, &pd), Err(Error::Contract(_))));
    }

    #[test]
    fn add_noise_zero_sigma_is_identity() {
        let noise = NoiseSpec::new(0.0, 99).unwrap();
        let x = 0.123456789;
        assert_eq!(add_noise(x, &noise, 5), x);
    }

    #[test]
    fn add_noise_is_deterministic() {
        let noise = NoiseSpec::new(1e-3, 7).unwrap();
        let a = add_noise(1.0, &noise, 123);
        let b = add_noise(1.0, &noise, 123);
        assert_eq!(a.to_bits(), b.to_bits());
        assert_ne!(a.to_bits(), add_noise(1.0, &noise, 124).to_bits());
    }

    #[test]
    fn tilt_normal_reconstruction() {
        let led = led_overhead(3.7, 211.0);
        let n = normal_from_tilt_deg(led.tilt_polar_deg, led.tilt_azimuth_deg);
        assert!((n - led.normal).norm() < 1e-9);
        assert!((led.normal.norm() - 1.0).abs() < UNIT_NORM_TOL);
        assert!(led.normal.z < 0.0);
    }

    #[test]
    fn invalid_leds_rejected() {
        assert!(LedGroundTruth::new(Vec3::new(0.0, 0.0, 4.0), 0.0, 0.0, 0.0, 1.0).is_err());
        assert!(LedGroundTruth::new(Vec3::new(0.0, 0.0, 4.0), 0.0, 0.0, 1.0, 0.5).is_err());
        assert!(LedGroundTruth::new(Vec3::new(0.0, 0.0, 4.0), 95.0, 0.0, 1.0, 1.0).is_err());
        assert!(NoiseSpec::new(-1.0, 0).is_err());
    }
}
