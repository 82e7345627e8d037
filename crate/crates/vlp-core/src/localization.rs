//! Ground-plane position estimation from one RSS reading per LED.
//!
//! The observation model for LED `l` at candidate position `r` is
//! `s_l = mu_l(r) + n_l` with `mu_l = h_l / d_l^4 * (c_vec_l . d_l)` and
//! total noise variance `E[n_l^2]` combining the measurement noise and the
//! residual calibration error carried by the estimated tilt/gain. The ML
//! position estimate is the minimizer of the weighted least-squares
//! objective with position-dependent weights `1 / E[n_l^2]`.
//!
//! [`solve_weighted_ls`] minimizes that objective exactly: residuals are
//! rescaled as `psi_l = (s_l - mu_l) / sqrt(E_l)` so the sum of squares IS
//! the objective, and the Jacobian of `psi` (including the weight-gradient
//! part) feeds a Levenberg-Marquardt loop over the two free coordinates.
//! [`multilaterate`] is the classic no-tilt baseline; [`fim`] / [`crlb_xy`]
//! evaluate the Fisher information and the position error bound.

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2};

use crate::calibration::LedCalibration;
use crate::error::{Error, Result};
use crate::model::Vec3;

/// Minimum distance (meters) between an iterate and an LED ground
/// projection; steps closer than this are damped away because the d^-8
/// weighting terms spike there.
const PROJECTION_GUARD: f64 = 0.01;

/// Localization method tags used in reports and output records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Method {
    WeightedLs,
    Multilateration,
    Gp,
}

impl Method {
    pub fn tag(&self) -> &'static str {
        match self {
            Method::WeightedLs => "weighted_ls",
            Method::Multilateration => "multilateration",
            Method::Gp => "gp",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "wls" | "weighted_ls" => Ok(Method::WeightedLs),
            "multilateration" | "mlat" => Ok(Method::Multilateration),
            "gp" => Ok(Method::Gp),
            other => Err(Error::Validation(format!(
                "unknown method '{other}' (expected wls, multilateration, or gp)"
            ))),
        }
    }
}

/// One localization instance: per-LED calibrations plus the RSS vector
/// observed at the unknown position. Solvers require at least 3 LEDs for a
/// determined 2D fix; the FIM/CRLB evaluators accept any number.
#[derive(Debug, Clone)]
pub struct LocalizationProblem {
    pub calibrations: Vec<LedCalibration>,
    pub rss: Vec<f64>,
}

impl LocalizationProblem {
    pub fn new(calibrations: Vec<LedCalibration>, rss: Vec<f64>) -> Result<Self> {
        if calibrations.len() != rss.len() {
            return Err(Error::Validation(format!(
                "{} calibrations but {} RSS readings",
                calibrations.len(),
                rss.len()
            )));
        }
        if calibrations.is_empty() {
            return Err(Error::Validation("empty localization problem".into()));
        }
        Ok(Self { calibrations, rss })
    }

    pub fn led_count(&self) -> usize {
        self.calibrations.len()
    }
}

/// Position estimate on the ground plane.
#[derive(Debug, Clone, PartialEq)]
pub struct PositionEstimate {
    pub xy: (f64, f64),
    pub objective_value: f64,
    pub iterations: usize,
    pub converged: bool,
    pub method: Method,
}

/// Fisher information and the derived position error bound.
///
/// The receiver's z coordinate is known exactly (it sits on the ground
/// plane), so the covariance bound inverts the x-y block of the information
/// matrix and carries zeros in the z row and column. `crlb_xy` is
/// `sqrt(C[0,0] + C[1,1])`, the bound actually attainable by a solver that
/// pins z.
#[derive(Debug, Clone, PartialEq)]
pub struct CrlbReport {
    pub fim: Matrix3<f64>,
    pub covariance_bound: Matrix3<f64>,
    /// `sqrt(C[0,0] + C[1,1])`, the combined x-y standard-deviation bound.
    pub crlb_xy: f64,
}

/// Variance of the residual calibration error seen at `candidate`:
/// `sigma^2 * h^2 / d^8 * d^T (G G^T)^{-1} d`.
pub fn residual_error_variance(cal: &LedCalibration, candidate: &Vec3) -> f64 {
    let d = candidate - cal.led_position;
    let d2 = d.norm_squared();
    let d8 = d2 * d2 * d2 * d2;
    let h = cal.height();
    cal.sigma2_hat * h * h / d8 * (cal.ggt_inverse * d).dot(&d)
}

/// Total observation-noise variance at `candidate`: residual calibration
/// error plus the fresh measurement noise, `sigma^2 (h^2/d^8 d^T O^-1 d + 1)`.
pub fn total_noise_variance(cal: &LedCalibration, candidate: &Vec3) -> f64 {
    residual_error_variance(cal, candidate) + cal.sigma2_hat
}

fn mu(cal: &LedCalibration, candidate: &Vec3) -> f64 {
    let d = candidate - cal.led_position;
    let d2 = d.norm_squared();
    cal.height() / (d2 * d2) * cal.c_vec.dot(&d)
}

/// Gradient of the mean observation with respect to the 3D position.
fn mu_gradient(cal: &LedCalibration, candidate: &Vec3) -> Vec3 {
    let d = candidate - cal.led_position;
    let d2 = d.norm_squared();
    let d4 = d2 * d2;
    let d6 = d4 * d2;
    let h = cal.height();
    -4.0 * h / d6 * d * cal.c_vec.dot(&d) + h / d4 * cal.c_vec
}

/// Gradient of the total noise variance with respect to the 3D position.
fn variance_gradient(cal: &LedCalibration, candidate: &Vec3) -> Vec3 {
    let d = candidate - cal.led_position;
    let d2 = d.norm_squared();
    let d8 = d2 * d2 * d2 * d2;
    let d10 = d8 * d2;
    let h2 = cal.height() * cal.height();
    let omega_d = cal.ggt_inverse * d;
    cal.sigma2_hat * (-8.0 * h2 / d10 * d * omega_d.dot(&d) + 2.0 * h2 / d8 * omega_d)
}

/// The weighted least-squares objective of a ground-plane candidate, with
/// the weights evaluated at that same candidate.
pub fn weighted_ls_objective(problem: &LocalizationProblem, candidate_xy: (f64, f64)) -> f64 {
    let p = Vec3::new(candidate_xy.0, candidate_xy.1, 0.0);
    problem
        .calibrations
        .iter()
        .zip(&problem.rss)
        .map(|(cal, &s)| {
            let r = s - mu(cal, &p);
            r * r / total_noise_variance(cal, &p)
        })
        .sum()
}

/// Options for [`solve_weighted_ls`].
#[derive(Debug, Clone)]
pub struct SolveOptions {
    /// Convergence threshold on the objective-gradient norm.
    pub grad_tol: f64,
    pub max_iters: usize,
    /// Evaluate the weights once at the initial iterate instead of
    /// re-evaluating them every iteration (ablation hook).
    pub freeze_weights: bool,
    /// Search rectangle `(x_min, x_max, y_min, y_max)` for the coarse-grid
    /// fallback initializer. Defaults to the LED bounding box inflated by
    /// its own extent.
    pub search_bounds: Option<(f64, f64, f64, f64)>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            grad_tol: 1e-10,
            max_iters: 200,
            freeze_weights: false,
            search_bounds: None,
        }
    }
}

fn default_bounds(problem: &LocalizationProblem) -> (f64, f64, f64, f64) {
    let xs: Vec<f64> = problem.calibrations.iter().map(|c| c.led_position.x).collect();
    let ys: Vec<f64> = problem.calibrations.iter().map(|c| c.led_position.y).collect();
    let (x_lo, x_hi) = (
        xs.iter().cloned().fold(f64::INFINITY, f64::min),
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let (y_lo, y_hi) = (
        ys.iter().cloned().fold(f64::INFINITY, f64::min),
        ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let pad_x = (x_hi - x_lo).max(1.0);
    let pad_y = (y_hi - y_lo).max(1.0);
    (x_lo - pad_x, x_hi + pad_x, y_lo - pad_y, y_hi + pad_y)
}

fn coarse_grid_start(problem: &LocalizationProblem, bounds: (f64, f64, f64, f64)) -> (f64, f64) {
    let (x_lo, x_hi, y_lo, y_hi) = bounds;
    let step = 0.25;
    let nx = ((x_hi - x_lo) / step).ceil() as usize + 1;
    let ny = ((y_hi - y_lo) / step).ceil() as usize + 1;
    let mut best = (f64::INFINITY, (0.5 * (x_lo + x_hi), 0.5 * (y_lo + y_hi)));
    for i in 0..nx {
        let x = x_lo + step * i as f64;
        for j in 0..ny {
            let y = y_lo + step * j as f64;
            let f = weighted_ls_objective(problem, (x, y));
            if f < best.0 {
                best = (f, (x, y));
            }
        }
    }
    best.1
}

fn too_close_to_projection(problem: &LocalizationProblem, x: f64, y: f64) -> bool {
    problem.calibrations.iter().any(|c| {
        let dx = x - c.led_position.x;
        let dy = y - c.led_position.y;
        dx * dx + dy * dy < PROJECTION_GUARD * PROJECTION_GUARD
    })
}

/// Rescaled residuals `psi_l = (s_l - mu_l)/sqrt(E_l)` and their exact
/// Jacobian in the two free coordinates. `freeze` holds the per-LED
/// variances fixed (from the initial iterate) when present.
fn residuals_and_jacobian(
    problem: &LocalizationProblem,
    x: f64,
    y: f64,
    freeze: Option<&[f64]>,
) -> (DVector<f64>, DMatrix<f64>) {
    let l = problem.led_count();
    let p = Vec3::new(x, y, 0.0);
    let mut psi = DVector::zeros(l);
    let mut jac = DMatrix::zeros(l, 2);
    for (i, (cal, &s)) in problem.calibrations.iter().zip(&problem.rss).enumerate() {
        let e = match freeze {
            Some(es) => es[i],
            None => total_noise_variance(cal, &p),
        };
        let sqrt_e = e.sqrt();
        let r = s - mu(cal, &p);
        let dmu = mu_gradient(cal, &p);
        psi[i] = r / sqrt_e;
        if freeze.is_some() {
            jac[(i, 0)] = -dmu.x / sqrt_e;
            jac[(i, 1)] = -dmu.y / sqrt_e;
        } else {
            let de = variance_gradient(cal, &p);
            jac[(i, 0)] = -dmu.x / sqrt_e - r * de.x / (2.0 * e * sqrt_e);
            jac[(i, 1)] = -dmu.y / sqrt_e - r * de.y / (2.0 * e * sqrt_e);
        }
    }
    (psi, jac)
}

/// Minimize the weighted LS objective over `(x, y)` with z pinned to the
/// ground plane, by Levenberg-Marquardt with adaptive damping.
///
/// Initialization uses the multilateration fix (with the tilt-aware gains)
/// and falls back to a coarse 0.25 m grid scan when that fails. The returned
/// estimate is flagged `converged` when the objective-gradient norm dropped
/// below `options.grad_tol` within `options.max_iters` iterations.
pub fn solve_weighted_ls(
    problem: &LocalizationProblem,
    options: &SolveOptions,
) -> Result<PositionEstimate> {
    if problem.led_count() < 3 {
        return Err(Error::Validation(format!(
            "weighted LS needs at least 3 LEDs, got {}",
            problem.led_count()
        )));
    }
    if problem.rss.iter().all(|&s| s <= 0.0) {
        return Err(Error::Unlocatable(
            "all RSS readings are non-positive".into(),
        ));
    }

    let bounds = options.search_bounds.unwrap_or_else(|| default_bounds(problem));
    let gains: Vec<f64> = problem.calibrations.iter().map(|c| c.gain_hat).collect();
    let (mut x, mut y) = match multilaterate(problem, &gains) {
        Ok(est) => est.xy,
        Err(_) => coarse_grid_start(problem, bounds),
    };
    if too_close_to_projection(problem, x, y) || !x.is_finite() || !y.is_finite() {
        let (gx, gy) = coarse_grid_start(problem, bounds);
        x = gx;
        y = gy;
    }

    let frozen: Option<Vec<f64>> = options.freeze_weights.then(|| {
        let p = Vec3::new(x, y, 0.0);
        problem
            .calibrations
            .iter()
            .map(|c| total_noise_variance(c, &p))
            .collect()
    });

    let objective = |px: f64, py: f64| -> f64 {
        match &frozen {
            None => weighted_ls_objective(problem, (px, py)),
            Some(es) => {
                let p = Vec3::new(px, py, 0.0);
                problem
                    .calibrations
                    .iter()
                    .zip(&problem.rss)
                    .zip(es)
                    .map(|((cal, &s), &e)| {
                        let r = s - mu(cal, &p);
                        r * r / e
                    })
                    .sum()
            }
        }
    };

    let mut lambda = 1e-3;
    let mut f_current = objective(x, y);
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..options.max_iters {
        iterations += 1;
        let (psi, jac) = residuals_and_jacobian(problem, x, y, frozen.as_deref());
        let grad = 2.0 * jac.transpose() * &psi;
        if grad.norm() <= options.grad_tol {
            converged = true;
            break;
        }
        let jtj: Matrix2<f64> = (jac.transpose() * &jac).fixed_view::<2, 2>(0, 0).into();
        let jtr = jac.transpose() * &psi;
        let rhs = Vector2::new(-jtr[0], -jtr[1]);

        let mut stepped = false;
        for _ in 0..40 {
            let mut damped = jtj;
            damped[(0, 0)] += lambda * jtj[(0, 0)].max(1e-300);
            damped[(1, 1)] += lambda * jtj[(1, 1)].max(1e-300);
            let Some(inv) = damped.try_inverse() else {
                lambda *= 10.0;
                continue;
            };
            let step = inv * rhs;
            let (nx, ny) = (x + step.x, y + step.y);
            if !nx.is_finite() || !ny.is_finite() || too_close_to_projection(problem, nx, ny) {
                lambda *= 10.0;
                continue;
            }
            let f_new = objective(nx, ny);
            if f_new < f_current {
                x = nx;
                y = ny;
                f_current = f_new;
                lambda = (lambda * 0.3).max(1e-12);
                stepped = true;
                break;
            }
            lambda *= 10.0;
            if lambda > 1e14 {
                break;
            }
        }
        if !stepped {
            // No acceptable step; report the gradient state as-is.
            let (psi, jac) = residuals_and_jacobian(problem, x, y, frozen.as_deref());
            converged = (2.0 * jac.transpose() * psi).norm() <= options.grad_tol;
            break;
        }
    }

    if !converged {
        let (psi, jac) = residuals_and_jacobian(problem, x, y, frozen.as_deref());
        converged = (2.0 * jac.transpose() * psi).norm() <= options.grad_tol;
    }

    Ok(PositionEstimate {
        xy: (x, y),
        objective_value: f_current,
        iterations,
        converged,
        method: Method::WeightedLs,
    })
}

/// Classic multilateration baseline under the no-tilt model.
///
/// Inverts each RSS reading to a range via `d_l = (c_l h_l^2 / s_l)^(1/4)`,
/// then subtracts the first range equation from the rest and solves the
/// resulting linear system for `(x, y)`. `no_tilt_gains` must come from a
/// no-tilt refit of the calibration data, not from the tilt-aware estimate.
pub fn multilaterate(
    problem: &LocalizationProblem,
    no_tilt_gains: &[f64],
) -> Result<PositionEstimate> {
    let l = problem.led_count();
    if l < 3 {
        return Err(Error::Validation(format!(
            "multilateration needs at least 3 LEDs, got {l}"
        )));
    }
    if no_tilt_gains.len() != l {
        return Err(Error::Validation(format!(
            "{} gains for {} LEDs",
            no_tilt_gains.len(),
            l
        )));
    }
    let mut ranges = Vec::with_capacity(l);
    for ((cal, &s), &c) in problem.calibrations.iter().zip(&problem.rss).zip(no_tilt_gains) {
        if s <= 0.0 {
            return Err(Error::Unlocatable(format!(
                "non-positive RSS {s:.3e} cannot be inverted to a range"
            )));
        }
        if c <= 0.0 {
            return Err(Error::Unlocatable(format!(
                "non-positive no-tilt gain {c:.3e}"
            )));
        }
        let h = cal.height();
        ranges.push((c * h * h / s).powf(0.25));
    }

    let p0 = problem.calibrations[0].led_position;
    let d0 = ranges[0];
    let mut a = DMatrix::zeros(l - 1, 2);
    let mut b = DVector::zeros(l - 1);
    for i in 1..l {
        let pi = problem.calibrations[i].led_position;
        a[(i - 1, 0)] = 2.0 * (pi.x - p0.x);
        a[(i - 1, 1)] = 2.0 * (pi.y - p0.y);
        b[i - 1] =
            d0 * d0 - ranges[i] * ranges[i] + pi.norm_squared() - p0.norm_squared();
    }

    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
    let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(smin > 0.0) || smax / smin > 1e12 {
        return Err(Error::SingularGeometry(
            "LED ground projections are collinear; multilateration is rank-deficient".into(),
        ));
    }
    let xy = svd
        .solve(&b, 0.0)
        .map_err(|e| Error::SingularGeometry(format!("linear solve failed: {e}")))?;
    let residual = (a * &xy - b).norm_squared();

    Ok(PositionEstimate {
        xy: (xy[0], xy[1]),
        objective_value: residual,
        iterations: 0,
        converged: true,
        method: Method::Multilateration,
    })
}

/// Options for [`fim_with_options`].
#[derive(Debug, Clone)]
pub struct FimOptions {
    /// Include the noise-variance-gradient term. Dropping it reduces the
    /// information to the mean-gradient part only (comparison hook).
    pub include_variance_gradient_term: bool,
}

impl Default for FimOptions {
    fn default() -> Self {
        Self {
            include_variance_gradient_term: true,
        }
    }
}

/// Fisher information matrix of the position, summed over LEDs:
/// `(1/E) dmu dmu^T + 1/2 (1/E^2) dE dE^T` per LED.
pub fn fim(problem: &LocalizationProblem, position: &Vec3) -> Matrix3<f64> {
    fim_with_options(problem, position, &FimOptions::default())
}

pub fn fim_with_options(
    problem: &LocalizationProblem,
    position: &Vec3,
    options: &FimOptions,
) -> Matrix3<f64> {
    let mut info = Matrix3::zeros();
    for cal in &problem.calibrations {
        let e = total_noise_variance(cal, position);
        let dmu = mu_gradient(cal, position);
        info += dmu * dmu.transpose() / e;
        if options.include_variance_gradient_term {
            let de = variance_gradient(cal, position);
            info += de * de.transpose() / (2.0 * e * e);
        }
    }
    info
}

/// CRLB at a position: the x-y covariance bound given that z is known.
///
/// Inverts the 2x2 x-y block of the full information matrix; the z row and
/// column of the returned covariance bound are zero because z carries no
/// uncertainty for a ground-plane receiver.
pub fn crlb_xy(problem: &LocalizationProblem, position: &Vec3) -> Result<CrlbReport> {
    let info = fim(problem, position);
    let block: Matrix2<f64> = info.fixed_view::<2, 2>(0, 0).into();
    let svals = block.svd(false, false).singular_values;
    let smax = svals.iter().cloned().fold(0.0, f64::max);
    let smin = svals.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(smin > 0.0) || smax / smin > 1e12 {
        return Err(Error::UnboundedCrlb(
            "x-y Fisher information is singular; the position is unobservable".into(),
        ));
    }
    let block_inv = block.try_inverse().ok_or_else(|| {
        Error::UnboundedCrlb("x-y Fisher information is numerically non-invertible".into())
    })?;
    let mut cov = Matrix3::zeros();
    cov.fixed_view_mut::<2, 2>(0, 0).copy_from(&block_inv);
    Ok(CrlbReport {
        fim: info,
        covariance_bound: cov,
        crlb_xy: (cov[(0, 0)] + cov[(1, 1)]).sqrt(),
    })
}

// Exposed for finite-difference verification in tests.
#[doc(hidden)]
pub fn observation_mean(cal: &LedCalibration, candidate: &Vec3) -> f64 {
    mu(cal, candidate)
}

#[doc(hidden)]
pub fn observation_mean_gradient(cal: &LedCalibration, candidate: &Vec3) -> Vec3 {
    mu_gradient(cal, candidate)
}

#[doc(hidden)]
pub fn noise_variance_gradient(cal: &LedCalibration, candidate: &Vec3) -> Vec3 {
    variance_gradient(cal, candidate)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{calibrate, fit_no_tilt_gain, plan_optimal_points, CalibrationSet};
    use crate::model::{rss_general, rss_simplified, LedGroundTruth, PdPose};
    use approx::assert_relative_eq;

    fn table_leds() -> Vec<LedGroundTruth> {
        let pos = [(-2.0, 6.0), (2.0, 6.0), (-2.0, 2.0), (2.0, 2.0)];
        let polar = [1.6, 2.1, 3.7, 3.3];
        let azim = [40.0, 160.0, 250.0, 330.0];
        pos.iter()
            .zip(polar)
            .zip(azim)
            .map(|((&(x, y), t), a)| {
                LedGroundTruth::new(Vec3::new(x, y, 4.0), t, a, 1.0, 1.0).unwrap()
            })
            .collect()
    }

    fn noiseless_problem(leds: &[LedGroundTruth], at: (f64, f64)) -> (LocalizationProblem, Vec<f64>) {
        let mut cals = Vec::new();
        let mut gains = Vec::new();
        for led in leds {
            let plan = plan_optimal_points(led.height(), 8, 0.0).unwrap();
            let pts = plan.world_points(led.position.x, led.position.y);
            let samples: Vec<(Vec3, f64)> = pts
                .iter()
                .map(|p| (*p, rss_simplified(led, &PdPose::ground(p.x, p.y)).unwrap()))
                .collect();
            let set = CalibrationSet::new(led.position, samples).unwrap();
            gains.push(fit_no_tilt_gain(&set).unwrap());
            let mut cal = calibrate(&set).unwrap();
            // Noiseless data fits exactly; give downstream weighting a
            // strictly positive variance as the invariants require.
            cal.sigma2_hat = 1e-8;
            cals.push(cal);
        }
        let rss: Vec<f64> = leds
            .iter()
            .map(|led| rss_general(led, &PdPose::ground(at.0, at.1)).unwrap())
            .collect();
        (LocalizationProblem::new(cals, rss).unwrap(), gains)
    }

    #[test]
    fn residual_variance_below_led_matches_closed_form() {
        // Theorem-style plan at h = 1: directly below the LED the residual
        // variance is sigma^2 (1 + eta)^4 / N = 2.880570... sigma^2 / N.
        let led = LedGroundTruth::new(Vec3::new(0.0, 0.0, 1.0), 0.0, 0.0, 1.0, 1.0).unwrap();
        let plan = plan_optimal_points(1.0, 5, 0.0).unwrap();
        let samples: Vec<(Vec3, f64)> = plan
            .points
            .iter()
            .map(|p| (*p, rss_simplified(&led, &PdPose::ground(p.x, p.y)).unwrap()))
            .collect();
        let mut cal = calibrate(&CalibrationSet::new(led.position, samples).unwrap()).unwrap();
        let sigma2 = 1e-6;
        cal.sigma2_hat = sigma2;
        let below = Vec3::new(0.0, 0.0, 0.0);
        let v = residual_error_variance(&cal, &below);
        assert_relative_eq!(v, sigma2 * 2.880570535876037 / 5.0, max_relative = 1e-9);
        // linear in sigma^2
        cal.sigma2_hat = 2.0 * sigma2;
        assert_relative_eq!(
            residual_error_variance(&cal, &below),
            2.0 * v,
            max_relative = 1e-12
        );
        cal.sigma2_hat = 0.0;
        assert_eq!(residual_error_variance(&cal, &below), 0.0);
        assert_eq!(total_noise_variance(&cal, &below), 0.0);
    }

    #[test]
    fn total_variance_tends_to_sigma2_with_many_points() {
        let led = LedGroundTruth::new(Vec3::new(0.0, 0.0, 4.0), 0.0, 0.0, 1.0, 1.0).unwrap();
        let sigma2 = 1e-8;
        let candidate = Vec3::new(1.0, -2.0, 0.0);
        let mut prev_ratio = f64::INFINITY;
        for n in [5, 50, 500] {
            let plan = plan_optimal_points(4.0, n, 0.0).unwrap();
            let samples: Vec<(Vec3, f64)> = plan
                .points
                .iter()
                .map(|p| (*p, rss_simplified(&led, &PdPose::ground(p.x, p.y)).unwrap()))
                .collect();
            let mut cal =
                calibrate(&CalibrationSet::new(led.position, samples).unwrap()).unwrap();
            cal.sigma2_hat = sigma2;
            let total = total_noise_variance(&cal, &candidate);
            assert!(total >= sigma2);
            let ratio = total / sigma2 - 1.0;
            assert!(ratio < prev_ratio);
            prev_ratio = ratio;
        }
        assert!(prev_ratio < 0.01); // residual term shrinks as 1/N
    }

    #[test]
    fn objective_zero_at_truth_for_noiseless_data() {
        let leds = table_leds();
        let truth = (0.7, 3.3);
        let (problem, _) = noiseless_problem(&leds, truth);
        let at_truth = weighted_ls_objective(&problem, truth);
        assert!(at_truth < 1e-12, "objective at truth: {at_truth:.3e}");
        let off = weighted_ls_objective(&problem, (truth.0 + 0.1, truth.1));
        assert!(off > at_truth);
    }

    #[test]
    fn solver_recovers_truth_noiselessly() {
        let leds = table_leds();
        for truth in [(0.0, 4.0), (-2.5, 1.5), (3.0, 6.5)] {
            let (problem, _) = noiseless_problem(&leds, truth);
            let est = solve_weighted_ls(&problem, &SolveOptions::default()).unwrap();
            let err = ((est.xy.0 - truth.0).powi(2) + (est.xy.1 - truth.1).powi(2)).sqrt();
            assert!(err < 1e-6, "error {err:.2e} at {truth:?}");
            assert!(est.converged);
        }
    }

    #[test]
    fn solver_rejects_all_nonpositive_rss() {
        let leds = table_leds();
        let (mut problem, _) = noiseless_problem(&leds, (0.0, 4.0));
        problem.rss = vec![0.0, -1e-5, 0.0, -2e-7];
        assert!(matches!(
            solve_weighted_ls(&problem, &SolveOptions::default()),
            Err(Error::Unlocatable(_))
        ));
    }

    #[test]
    fn multilateration_square_symmetry() {
        let leds: Vec<LedGroundTruth> = [(-1.0, -1.0), (1.0, -1.0), (1.0, 1.0), (-1.0, 1.0)]
            .iter()
            .map(|&(x, y)| LedGroundTruth::new(Vec3::new(x, y, 3.0), 0.0, 0.0, 1.0, 1.0).unwrap())
            .collect();
        let (problem, gains) = noiseless_problem(&leds, (0.0, 0.0));
        let est = multilaterate(&problem, &gains).unwrap();
        assert!(est.xy.0.abs() < 1e-9 && est.xy.1.abs() < 1e-9);
    }

    #[test]
    fn multilateration_exact_for_untilted_leds() {
        let leds: Vec<LedGroundTruth> = [(-2.0, 6.0), (2.0, 6.0), (-2.0, 2.0), (2.0, 2.0)]
            .iter()
            .map(|&(x, y)| LedGroundTruth::new(Vec3::new(x, y, 4.0), 0.0, 0.0, 1.0, 1.0).unwrap())
            .collect();
        let truth = (1.3, 4.4);
        let (problem, gains) = noiseless_problem(&leds, truth);
        let est = multilaterate(&problem, &gains).unwrap();
        let err = ((est.xy.0 - truth.0).powi(2) + (est.xy.1 - truth.1).powi(2)).sqrt();
        assert!(err < 1e-6, "error {err:.2e}");
    }

    #[test]
    fn multilateration_biased_under_tilt() {
        let leds = table_leds();
        let truth = (0.0, 1.0); // outside the LED hull, where tilt bias bites
        let (problem, gains) = noiseless_problem(&leds, truth);
        let est = multilaterate(&problem, &gains).unwrap();
        let err = ((est.xy.0 - truth.0).powi(2) + (est.xy.1 - truth.1).powi(2)).sqrt();
        assert!(err > 0.01, "expected visible tilt bias, got {err:.2e} m");
        assert!(err < 0.6, "bias unreasonably large: {err:.2e} m");
    }

    #[test]
    fn multilateration_rejects_nonpositive_rss() {
        let leds = table_leds();
        let (mut problem, gains) = noiseless_problem(&leds, (0.0, 4.0));
        problem.rss[2] = -1e-6;
        assert!(matches!(
            multilaterate(&problem, &gains),
            Err(Error::Unlocatable(_))
        ));
    }

    #[test]
    fn multilateration_rejects_collinear_leds() {
        let leds: Vec<LedGroundTruth> = [-2.0, 0.0, 2.0, 3.0]
            .iter()
            .map(|&x| LedGroundTruth::new(Vec3::new(x, 4.0, 4.0), 0.0, 0.0, 1.0, 1.0).unwrap())
            .collect();
        let (problem, gains) = noiseless_problem(&leds, (0.5, 3.0));
        assert!(matches!(
            multilaterate(&problem, &gains),
            Err(Error::SingularGeometry(_))
        ));
    }

    #[test]
    fn fim_is_symmetric_positive_semidefinite() {
        let leds = table_leds();
        let (problem, _) = noiseless_problem(&leds, (1.0, 3.0));
        let info = fim(&problem, &Vec3::new(1.0, 3.0, 0.0));
        assert!((info - info.transpose()).norm() < 1e-12 * info.norm());
        let eig = info.symmetric_eigen();
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= -1e-12 * info.trace());
    }

    #[test]
    fn fim_first_term_scales_inversely_with_noise() {
        let leds = table_leds();
        let (mut problem, _) = noiseless_problem(&leds, (1.0, 3.0));
        let p = Vec3::new(1.0, 3.0, 0.0);
        let opts = FimOptions {
            include_variance_gradient_term: false,
        };
        let base = fim_with_options(&problem, &p, &opts);
        for cal in &mut problem.calibrations {
            cal.sigma2_hat *= 4.0;
        }
        let scaled = fim_with_options(&problem, &p, &opts);
        assert!((scaled * 4.0 - base).norm() < 1e-9 * base.norm());
    }

    #[test]
    fn crlb_decreases_with_extra_led() {
        let mut leds = table_leds();
        let (problem, _) = noiseless_problem(&leds, (0.0, 4.0));
        let p = Vec3::new(0.0, 4.0, 0.0);
        let four = crlb_xy(&problem, &p).unwrap();
        assert!(four.crlb_xy.is_finite() && four.crlb_xy > 0.0);

        leds.push(LedGroundTruth::new(Vec3::new(0.0, 4.0, 4.0), 1.0, 10.0, 1.0, 1.0).unwrap());
        let (problem5, _) = noiseless_problem(&leds, (0.0, 4.0));
        let five = crlb_xy(&problem5, &p).unwrap();
        assert!(five.crlb_xy < four.crlb_xy);
    }

    #[test]
    fn crlb_scales_linearly_with_sigma_at_large_n() {
        let leds = table_leds();
        let (mut problem, _) = noiseless_problem(&leds, (0.5, 3.0));
        // Large calibration set to make the residual term negligible so the
        // bound scales like sigma.
        for cal in &mut problem.calibrations {
            cal.ggt_inverse /= 1e6;
            cal.sigma2_hat = 1e-8;
        }
        let p = Vec3::new(0.5, 3.0, 0.0);
        let base = crlb_xy(&problem, &p).unwrap().crlb_xy;
        for cal in &mut problem.calibrations {
            cal.sigma2_hat *= 100.0; // sigma x10
        }
        let scaled = crlb_xy(&problem, &p).unwrap().crlb_xy;
        assert_relative_eq!(scaled / base, 10.0, max_relative = 0.01);
    }

    #[test]
    fn two_led_problem_singular_on_axis() {
        let leds: Vec<LedGroundTruth> = [(-2.0, 0.0), (2.0, 0.0)]
            .iter()
            .map(|&(x, y)| LedGroundTruth::new(Vec3::new(x, y, 4.0), 0.0, 0.0, 1.0, 1.0).unwrap())
            .collect();
        let mut cals = Vec::new();
        for led in &leds {
            let plan = plan_optimal_points(4.0, 6, 0.0).unwrap();
            let pts = plan.world_points(led.position.x, led.position.y);
            let samples: Vec<(Vec3, f64)> = pts
                .iter()
                .map(|p| (*p, rss_simplified(led, &PdPose::ground(p.x, p.y)).unwrap()))
                .collect();
            let mut cal = calibrate(&CalibrationSet::new(led.position, samples).unwrap()).unwrap();
            cal.sigma2_hat = 1e-8;
            cals.push(cal);
        }
        let problem = LocalizationProblem::new(cals, vec![0.01, 0.01]).unwrap();
        // Points on the line through both LED projections have an
        // unobservable y coordinate.
        let on_axis = Vec3::new(0.7, 0.0, 0.0);
        assert!(matches!(
            crlb_xy(&problem, &on_axis),
            Err(Error::UnboundedCrlb(_))
        ));
    }
}
