//! Per-LED tilt and gain calibration from ground-plane RSS measurements.
//!
//! The simplified channel model is linear in the scaled-normal vector
//! `c_vec = gain * normal`, so the constrained fit of (tilt, gain) reduces to
//! an ordinary linear least-squares problem solved in closed form through the
//! 3x3 Gram matrix `G * G^T`. This module provides:
//!
//! - [`build_gram`] / [`estimate_c_vector`] / [`decompose`] /
//!   [`estimate_noise_variance`]: the closed-form estimator pipeline,
//!   composed by [`calibrate`];
//! - [`calibration_covariance`] / [`calibration_sum_mse`]: the estimator's
//!   exact covariance and summed mean-square error;
//! - [`optimal_radius`] / [`plan_optimal_points`] / [`radius_sweep`]: the
//!   measurement-placement planner. Spreading N points evenly on a ground
//!   circle of radius `~0.5503 * h` under the LED diagonalizes the Gram
//!   matrix and minimizes the sum MSE over all ground-plane geometries.
//!
//! Calibration runs in the LED-centered frame (LED ground projection at the
//! origin); world coordinates are converted on entry.

use nalgebra::{DVector, Matrix3, Matrix3xX};

use crate::error::{Error, Result};
use crate::model::Vec3;

/// Calibration geometry above which the Gram matrix is treated as singular.
pub const CONDITION_LIMIT: f64 = 1e12;

/// Ratio of the optimal calibration-circle radius to the LED height:
/// `sqrt((-3 + sqrt(13)) / 2)`.
pub fn optimal_radius_ratio() -> f64 {
    ((-3.0 + 13.0_f64.sqrt()) / 2.0).sqrt()
}

/// Ground-plane RSS samples for one LED.
#[derive(Debug, Clone)]
pub struct CalibrationSet {
    led_position: Vec3,
    samples: Vec<(Vec3, f64)>,
}

impl CalibrationSet {
    /// Validates: at least 3 samples, all on the ground plane, none exactly
    /// under the LED projection, and the LED strictly above ground.
    pub fn new(led_position: Vec3, samples: Vec<(Vec3, f64)>) -> Result<Self> {
        if !(led_position.z > 0.0) {
            return Err(Error::Validation(format!(
                "LED height must be > 0, got {}",
                led_position.z
            )));
        }
        if samples.len() < 3 {
            return Err(Error::Validation(format!(
                "calibration needs at least 3 samples, got {}",
                samples.len()
            )));
        }
        for (i, (p, s)) in samples.iter().enumerate() {
            if p.z.abs() > 1e-9 {
                return Err(Error::Validation(format!(
                    "calibration sample {i} is off the ground plane (z = {})",
                    p.z
                )));
            }
            if !s.is_finite() {
                return Err(Error::Validation(format!(
                    "calibration sample {i} has non-finite RSS"
                )));
            }
            if (p.x - led_position.x).abs() < 1e-12 && (p.y - led_position.y).abs() < 1e-12 {
                return Err(Error::Validation(format!(
                    "calibration sample {i} sits exactly under the LED projection"
                )));
            }
        }
        Ok(Self {
            led_position,
            samples,
        })
    }

    pub fn led_position(&self) -> Vec3 {
        self.led_position
    }

    /// LED height above the ground plane.
    pub fn height(&self) -> f64 {
        self.led_position.z
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[(Vec3, f64)] {
        &self.samples
    }

    /// The RSS observations as a vector, in sample order.
    pub fn rss_vector(&self) -> Vec<f64> {
        self.samples.iter().map(|(_, s)| *s).collect()
    }
}

/// The 3xN geometry matrix `G` (columns `h / d_n^4 * d_n`) and its 3x3 Gram
/// matrix `G * G^T`, both in the LED-centered frame.
#[derive(Debug, Clone)]
pub struct GramSystem {
    g: Matrix3xX<f64>,
    ggt: Matrix3<f64>,
}

impl GramSystem {
    pub fn g(&self) -> &Matrix3xX<f64> {
        &self.g
    }

    pub fn ggt(&self) -> &Matrix3<f64> {
        &self.ggt
    }

    pub fn len(&self) -> usize {
        self.g.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.g.ncols() == 0
    }

    /// Inverse of the Gram matrix, rejecting near-singular geometries.
    pub fn ggt_inverse(&self) -> Result<Matrix3<f64>> {
        let svals = self.ggt.svd(false, false).singular_values;
        let (mut smax, mut smin) = (f64::MIN, f64::MAX);
        for &s in svals.iter() {
            smax = smax.max(s);
            smin = smin.min(s);
        }
        if !(smin > 0.0) || smax / smin > CONDITION_LIMIT {
            return Err(Error::SingularGeometry(format!(
                "Gram matrix condition number exceeds {CONDITION_LIMIT:.0e} \
                 (singular values {:.3e} .. {:.3e}); calibration points are \
                 collinear with the LED projection or otherwise degenerate",
                smin, smax
            )));
        }
        self.ggt.try_inverse().ok_or_else(|| {
            Error::SingularGeometry("Gram matrix is numerically non-invertible".into())
        })
    }
}

/// Assemble the geometry matrix and its Gram matrix for a calibration set.
pub fn build_gram(set: &CalibrationSet) -> Result<GramSystem> {
    let h = set.height();
    let columns: Vec<Vec3> = set
        .samples()
        .iter()
        .map(|(p, _)| {
            let d = p - set.led_position();
            let d2 = d.norm_squared();
            h / (d2 * d2) * d
        })
        .collect();
    let g = Matrix3xX::from_columns(&columns);
    let ggt = &g * g.transpose();
    let gram = GramSystem { g, ggt };
    // Surface rank deficiency here rather than at first inversion.
    gram.ggt_inverse()?;
    Ok(gram)
}

/// Closed-form least-squares estimate of `c_vec = gain * normal`:
/// `(G G^T)^{-1} G s`. This is the exact global minimizer of the linear
/// problem and the ML estimate under i.i.d. Gaussian noise.
pub fn estimate_c_vector(gram: &GramSystem, rss: &[f64]) -> Result<Vec3> {
    if rss.len() != gram.len() {
        return Err(Error::Validation(format!(
            "RSS vector length {} does not match {} calibration points",
            rss.len(),
            gram.len()
        )));
    }
    let s = DVector::from_column_slice(rss);
    let gs = gram.g() * s;
    Ok(gram.ggt_inverse()? * gs)
}

/// Split the scaled-normal estimate into a unit normal and a scalar gain.
pub fn decompose(c_vec: &Vec3) -> Result<(Vec3, f64)> {
    let gain = c_vec.norm();
    if gain == 0.0 {
        return Err(Error::DegenerateEstimate(
            "estimated c-vector is zero; tilt direction is undefined".into(),
        ));
    }
    Ok((c_vec / gain, gain))
}

/// ML noise-variance estimate `(1/N) * ||s - G^T c_vec||^2`.
///
/// This is the plain ML value; it under-reports by a factor `(N - 3) / N`
/// in expectation because three parameters were fit from the same data.
pub fn estimate_noise_variance(gram: &GramSystem, rss: &[f64], c_vec: &Vec3) -> Result<f64> {
    if rss.len() != gram.len() {
        return Err(Error::Validation(format!(
            "RSS vector length {} does not match {} calibration points",
            rss.len(),
            gram.len()
        )));
    }
    let s = DVector::from_column_slice(rss);
    let residual = s - gram.g().transpose() * c_vec;
    Ok(residual.norm_squared() / rss.len() as f64)
}

/// Covariance of the c-vector estimator: `sigma^2 * (G G^T)^{-1}`.
pub fn calibration_covariance(gram: &GramSystem, sigma2: f64) -> Result<Matrix3<f64>> {
    Ok(gram.ggt_inverse()? * sigma2)
}

/// Sum MSE of the c-vector estimator: `sigma^2 * tr[(G G^T)^{-1}]`.
pub fn calibration_sum_mse(gram: &GramSystem, sigma2: f64) -> Result<f64> {
    Ok(sigma2 * calibration_covariance(gram, 1.0)?.trace())
}

/// Optimal calibration-circle radius for an LED at height `h`:
/// `sqrt((-3 + sqrt(13)) / 2) * h ~= 0.550251 * h`.
pub fn optimal_radius(h: f64) -> Result<f64> {
    if !(h > 0.0) {
        return Err(Error::Domain(format!("LED height must be > 0, got {h}")));
    }
    Ok(optimal_radius_ratio() * h)
}

/// N calibration points evenly spaced on a ground circle centered under the
/// LED, in the LED-centered frame.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationPlan {
    pub height: f64,
    pub count: usize,
    pub phase: f64,
    pub radius: f64,
    pub points: Vec<Vec3>,
}

impl CalibrationPlan {
    /// The LED position in the plan's own (LED-centered) frame.
    pub fn led_position(&self) -> Vec3 {
        Vec3::new(0.0, 0.0, self.height)
    }

    /// Plan points translated so the LED ground projection is `(x, y)`.
    pub fn world_points(&self, led_x: f64, led_y: f64) -> Vec<Vec3> {
        self.points
            .iter()
            .map(|p| Vec3::new(p.x + led_x, p.y + led_y, 0.0))
            .collect()
    }
}

fn circle_points(radius: f64, count: usize, phase: f64) -> Vec<Vec3> {
    (0..count)
        .map(|n| {
            let a = 2.0 * std::f64::consts::PI * n as f64 / count as f64 + phase;
            Vec3::new(radius * a.cos(), radius * a.sin(), 0.0)
        })
        .collect()
}

/// Evenly spaced circle plan at an arbitrary radius (sub-optimal unless the
/// radius is [`optimal_radius`]).
pub fn circle_plan(h: f64, count: usize, phase: f64, radius: f64) -> Result<CalibrationPlan> {
    if count < 3 {
        return Err(Error::Validation(format!(
            "a circle plan requires at least 3 points, got {count}"
        )));
    }
    if !(h > 0.0) {
        return Err(Error::Domain(format!("LED height must be > 0, got {h}")));
    }
    if !(radius > 0.0) {
        return Err(Error::Domain(format!("circle radius must be > 0, got {radius}")));
    }
    Ok(CalibrationPlan {
        height: h,
        count,
        phase,
        radius,
        points: circle_points(radius, count, phase),
    })
}

/// Optimal placement of `count >= 3` calibration points for an LED at
/// height `h`: evenly spaced on the circle of [`optimal_radius`], starting
/// at angle `phase`. The resulting Gram matrix is diagonal with equal first
/// two entries, which attains the minimum possible sum MSE.
pub fn plan_optimal_points(h: f64, count: usize, phase: f64) -> Result<CalibrationPlan> {
    if count < 3 {
        return Err(Error::Validation(format!(
            "the optimal plan requires at least 3 points, got {count}"
        )));
    }
    let radius = optimal_radius(h)?;
    Ok(CalibrationPlan {
        height: h,
        count,
        phase,
        radius,
        points: circle_points(radius, count, phase),
    })
}

/// Sum MSE of N evenly spaced circle points as a function of circle radius.
///
/// Each radius is evaluated through the actual [`build_gram`] /
/// [`calibration_sum_mse`] pipeline, so the curve doubles as a numerical
/// check of the closed-form optimum.
pub fn radius_sweep(
    h: f64,
    count: usize,
    sigma2: f64,
    radii: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if count < 3 {
        return Err(Error::Validation(format!(
            "radius sweep requires at least 3 points, got {count}"
        )));
    }
    if !(sigma2 >= 0.0) {
        return Err(Error::Validation(format!(
            "noise variance must be >= 0, got {sigma2}"
        )));
    }
    let led = Vec3::new(0.0, 0.0, h);
    radii
        .iter()
        .map(|&r| {
            if !(r > 0.0) {
                return Err(Error::Domain(format!("sweep radius must be > 0, got {r}")));
            }
            let samples = circle_points(r, count, 0.0)
                .into_iter()
                .map(|p| (p, 0.0))
                .collect();
            let set = CalibrationSet::new(led, samples)?;
            let gram = build_gram(&set)?;
            Ok((r, calibration_sum_mse(&gram, sigma2)?))
        })
        .collect()
}

/// Default sweep grid from 0.05 h to 1.5 h in steps of 0.01 h (146 radii).
pub fn default_sweep_radii(h: f64) -> Vec<f64> {
    (0..146).map(|i| (0.05 + 0.01 * i as f64) * h).collect()
}

/// Everything the localization stage needs to know about one LED.
#[derive(Debug, Clone, PartialEq)]
pub struct LedCalibration {
    pub led_position: Vec3,
    /// Estimated scaled normal `gain_hat * normal_hat`.
    pub c_vec: Vec3,
    pub normal_hat: Vec3,
    pub gain_hat: f64,
    pub sigma2_hat: f64,
    /// Inverse Gram matrix of the calibration geometry; sets both the
    /// estimator covariance and the residual-error weights downstream.
    pub ggt_inverse: Matrix3<f64>,
}

impl LedCalibration {
    /// LED height above the ground plane.
    pub fn height(&self) -> f64 {
        self.led_position.z
    }

    /// Estimated tilt polar angle in degrees.
    pub fn tilt_polar_deg(&self) -> f64 {
        (-self.normal_hat.z).clamp(-1.0, 1.0).acos().to_degrees()
    }

    /// Estimated tilt azimuth angle in degrees, in [0, 360).
    pub fn tilt_azimuth_deg(&self) -> f64 {
        let a = self.normal_hat.y.atan2(self.normal_hat.x).to_degrees();
        if a < 0.0 {
            a + 360.0
        } else {
            a
        }
    }
}

/// Full per-LED calibration: Gram assembly, closed-form c-vector estimate,
/// tilt/gain decomposition, and ML noise-variance estimate.
pub fn calibrate(set: &CalibrationSet) -> Result<LedCalibration> {
    let gram = build_gram(set)?;
    let rss = set.rss_vector();
    let c_vec = estimate_c_vector(&gram, &rss)?;
    let (normal_hat, gain_hat) = decompose(&c_vec)?;
    let sigma2_hat = estimate_noise_variance(&gram, &rss, &c_vec)?;
    Ok(LedCalibration {
        led_position: set.led_position(),
        c_vec,
        normal_hat,
        gain_hat,
        sigma2_hat,
        ggt_inverse: gram.ggt_inverse()?,
    })
}

/// Least-squares gain fit under the no-tilt model `s = c * h^2 / d^4`,
/// used by the multilateration baseline so it never borrows the tilt-aware
/// estimate.
pub fn fit_no_tilt_gain(set: &CalibrationSet) -> Result<f64> {
    let h2 = set.height() * set.height();
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, s) in set.samples() {
        let d = p - set.led_position();
        let d2 = d.norm_squared();
        let a = h2 / (d2 * d2);
        num += a * s;
        den += a * a;
    }
    let c = num / den;
    if !(c > 0.0) {
        return Err(Error::DegenerateEstimate(format!(
            "no-tilt gain fit produced a non-positive gain ({c:.3e})"
        )));
    }
    Ok(c)
}
