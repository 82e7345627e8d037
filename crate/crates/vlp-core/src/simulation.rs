//! Scenario construction, error statistics, Monte Carlo verification of the
//! calibration estimator, and the end-to-end localization experiment.
//!
//! Everything here is deterministic given the scenario's master seed: every
//! random draw is keyed by `(seed, work-item indices)` through
//! [`crate::rng::stream_key`], and parallel loops collect results in index
//! order before any aggregation, so reports are bit-identical across runs
//! and thread counts.

use nalgebra::{DMatrix, Matrix3};
use rand::Rng;
use rayon::prelude::*;

use crate::calibration::{
    build_gram, calibrate, estimate_c_vector, fit_no_tilt_gain, CalibrationPlan, CalibrationSet,
    LedCalibration,
};
use crate::error::{Error, Result};
use crate::gp::{GpModel, HyperGrid};
use crate::io::MeasurementRecord;
use crate::localization::{
    crlb_xy, multilaterate, solve_weighted_ls, LocalizationProblem, Method, SolveOptions,
};
use crate::model::{
    add_noise, rss_general, rss_simplified, LedGroundTruth, NoiseSpec, PdPose, Vec3,
};
use crate::rng::{self, stream_key, tag};

/// Master seed used when a scenario does not specify one.
pub const DEFAULT_MASTER_SEED: u64 = 1;

/// Axis-aligned rectangular room footprint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Room {
    pub x_min: f64,
    pub y_min: f64,
    pub width: f64,
    pub depth: f64,
}

impl Room {
    pub fn x_max(&self) -> f64 {
        self.x_min + self.width
    }

    pub fn y_max(&self) -> f64 {
        self.y_min + self.depth
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let eps = 1e-9;
        x >= self.x_min - eps && x <= self.x_max() + eps && y >= self.y_min - eps
            && y <= self.y_max() + eps
    }

    /// Search rectangle for localization solvers.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        (self.x_min, self.x_max(), self.y_min, self.y_max())
    }
}

/// Full simulation scenario: room, LED array with ground truth, per-LED
/// noise, the test trajectory, and the calibration/training grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub room: Room,
    pub leds: Vec<LedGroundTruth>,
    pub noise: Vec<NoiseSpec>,
    pub trajectory: Vec<Vec3>,
    pub training_points: Vec<Vec3>,
    pub master_seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.leds.is_empty() {
            return Err(Error::Validation("scenario has no LEDs".into()));
        }
        if self.noise.len() != self.leds.len() {
            return Err(Error::Validation(format!(
                "{} noise specs for {} LEDs",
                self.noise.len(),
                self.leds.len()
            )));
        }
        for (i, led) in self.leds.iter().enumerate() {
            if !(led.position.z > 0.0) {
                return Err(Error::Validation(format!(
                    "LED {i} is not above the ground (z = {})",
                    led.position.z
                )));
            }
        }
        for (what, pts) in [
            ("trajectory", &self.trajectory),
            ("training", &self.training_points),
        ] {
            for (i, p) in pts.iter().enumerate() {
                if !self.room.contains(p.x, p.y) {
                    return Err(Error::Validation(format!(
                        "{what} point {i} ({}, {}) is outside the room",
                        p.x, p.y
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Rectangular loop inset 1 m from the room walls, sampled every 10 cm.
pub fn default_trajectory(room: &Room) -> Vec<Vec3> {
    let inset = 1.0;
    let (x0, x1) = (room.x_min + inset, room.x_max() - inset);
    let (y0, y1) = (room.y_min + inset, room.y_max() - inset);
    let step = 0.1;
    let mut pts = Vec::new();
    let nx = ((x1 - x0) / step).round() as usize;
    let ny = ((y1 - y0) / step).round() as usize;
    for i in 0..nx {
        pts.push(Vec3::new(x0 + step * i as f64, y0, 0.0));
    }
    for j in 0..ny {
        pts.push(Vec3::new(x1, y0 + step * j as f64, 0.0));
    }
    for i in 0..nx {
        pts.push(Vec3::new(x1 - step * i as f64, y1, 0.0));
    }
    for j in 0..ny {
        pts.push(Vec3::new(x0, y1 - step * j as f64, 0.0));
    }
    pts
}

/// 8x8 training grid over the upper interior of the room, leaving the
/// bottom edge of the trajectory outside the covered area (the data-sparse
/// region where the data-driven baseline degrades).
pub fn default_training_grid(room: &Room) -> Vec<Vec3> {
    let x0 = room.x_min + 1.0;
    let x1 = room.x_max() - 1.0;
    let y0 = room.y_min + 0.375 * room.depth;
    let y1 = room.y_max() - 0.125 * room.depth;
    let mut pts = Vec::new();
    for j in 0..8 {
        for i in 0..8 {
            let fx = i as f64 / 7.0;
            let fy = j as f64 / 7.0;
            pts.push(Vec3::new(x0 + fx * (x1 - x0), y0 + fy * (y1 - y0), 0.0));
        }
    }
    pts
}

/// The reference simulation scenario: 8 m x 8 m room, four LEDs at height
/// 4 m with small tilts (polar angles 1.6/2.1/3.7/3.3 degrees, azimuths
/// drawn uniformly from the seeded stream), unit gains, Lambertian order 1,
/// and noise sigma 1e-4 on every LED.
pub fn default_scenario_with_seed(master_seed: u64) -> Scenario {
    let room = Room {
        x_min: -4.0,
        y_min: 0.0,
        width: 8.0,
        depth: 8.0,
    };
    let positions = [(-2.0, 6.0), (2.0, 6.0), (-2.0, 2.0), (2.0, 2.0)];
    let polar = [1.6, 2.1, 3.7, 3.3];
    let leds: Vec<LedGroundTruth> = positions
        .iter()
        .zip(polar)
        .enumerate()
        .map(|(l, (&(x, y), tilt))| {
            let mut azi_rng = rng::stream_rng(master_seed, stream_key(&[tag::AZIMUTH, l as u64]));
            let azimuth = azi_rng.random_range(0.0..std::f64::consts::TAU).to_degrees();
            LedGroundTruth::new(Vec3::new(x, y, 4.0), tilt, azimuth, 1.0, 1.0)
                .expect("default LED parameters are valid")
        })
        .collect();
    let noise = (0..leds.len())
        .map(|l| NoiseSpec {
            sigma: 1e-4,
            seed: stream_key(&[master_seed, tag::NOISE_SEED, l as u64]),
        })
        .collect();
    Scenario {
        trajectory: default_trajectory(&room),
        training_points: default_training_grid(&room),
        room,
        leds,
        noise,
        master_seed,
    }
}

/// [`default_scenario_with_seed`] with the library default seed.
pub fn default_scenario() -> Scenario {
    default_scenario_with_seed(DEFAULT_MASTER_SEED)
}

/// Euclidean distance between an estimate and the true position.
pub fn euclidean_error(estimate: (f64, f64), truth: (f64, f64)) -> f64 {
    let dx = estimate.0 - truth.0;
    let dy = estimate.1 - truth.1;
    (dx * dx + dy * dy).sqrt()
}

/// Percentile by linear interpolation between order statistics;
/// `p` in [0, 100], `sorted` ascending and nonempty.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = (p / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] * (1.0 - frac) + sorted[hi] * frac
}

/// Error statistics for one method: raw errors, P50/P99, and the empirical
/// CDF.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub per_point_errors: Vec<f64>,
    pub p50: f64,
    pub p99: f64,
    /// `(error, cumulative fraction)`, nondecreasing, ending at 1.
    pub cdf: Vec<(f64, f64)>,
    /// Fractional P50 improvement of this method relative to a reference
    /// method, when one was requested.
    pub improvement_rate_vs: Option<f64>,
}

/// P50/P99 (linear interpolation between order statistics) and the
/// empirical CDF of a nonempty error sample.
pub fn percentiles_and_cdf(errors: &[f64]) -> Result<ErrorStats> {
    if errors.is_empty() {
        return Err(Error::Validation(
            "cannot compute percentiles of an empty error list".into(),
        ));
    }
    if errors.iter().any(|e| !e.is_finite()) {
        return Err(Error::Validation("error list contains non-finite values".into()));
    }
    let mut sorted = errors.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let n = sorted.len();
    let cdf = sorted
        .iter()
        .enumerate()
        .map(|(i, &e)| (e, (i + 1) as f64 / n as f64))
        .collect();
    Ok(ErrorStats {
        p50: percentile(&sorted, 50.0),
        p99: percentile(&sorted, 99.0),
        per_point_errors: errors.to_vec(),
        cdf,
        improvement_rate_vs: None,
    })
}

/// Fractional improvement of `candidate` over `reference`:
/// `(reference - candidate) / reference`.
pub fn improvement_rate(reference_ep: f64, candidate_ep: f64) -> Result<f64> {
    if !(reference_ep > 0.0) {
        return Err(Error::Domain(format!(
            "reference error must be > 0, got {reference_ep}"
        )));
    }
    Ok((reference_ep - candidate_ep) / reference_ep)
}

/// Slope of the least-squares line through `(ln x, ln y)`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in lx.iter().zip(&ly) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    num / den
}

/// Monte Carlo results for one noise level.
#[derive(Debug, Clone)]
pub struct SigmaMcResult {
    pub sigma: f64,
    /// Raw mean error of the c-vector estimator (unbiased, so ~0).
    pub mean_c_vec_error: Vec3,
    /// Sample covariance of the c-vector estimate.
    pub covariance: Matrix3<f64>,
    /// `sigma^2 (G G^T)^{-1}`.
    pub theoretical_covariance: Matrix3<f64>,
    /// Variance-reduced bias estimate of the unit-normal estimator.
    pub normal_bias: Vec3,
    /// Variance-reduced bias estimate of the scalar gain estimator.
    pub gain_bias: f64,
    pub empirical_sum_mse: f64,
    pub theoretical_sum_mse: f64,
}

/// Report of [`run_calibration_mc`].
#[derive(Debug, Clone)]
pub struct CalibrationMcReport {
    pub trials: usize,
    pub results: Vec<SigmaMcResult>,
}

impl CalibrationMcReport {
    /// Log-log slope of the normal-estimator bias against sigma.
    pub fn normal_bias_slope(&self) -> f64 {
        let xs: Vec<f64> = self.results.iter().map(|r| r.sigma).collect();
        let ys: Vec<f64> = self.results.iter().map(|r| r.normal_bias.norm()).collect();
        log_log_slope(&xs, &ys)
    }

    /// Log-log slope of the gain-estimator bias against sigma.
    pub fn gain_bias_slope(&self) -> f64 {
        let xs: Vec<f64> = self.results.iter().map(|r| r.sigma).collect();
        let ys: Vec<f64> = self.results.iter().map(|r| r.gain_bias.abs()).collect();
        log_log_slope(&xs, &ys)
    }
}

/// Monte Carlo verification of the calibration estimator on a fixed plan.
///
/// Uses the tilt/gain of the scenario's first LED, placed in the plan's
/// LED-centered frame. For each noise level the same standard-normal draws
/// are reused (common random numbers), and the bias estimates subtract the
/// analytically zero-mean linear error term per trial, which removes the
/// dominant Monte Carlo variance without biasing the estimate. Deterministic
/// given the scenario master seed.
pub fn run_calibration_mc(
    scenario: &Scenario,
    plan: &CalibrationPlan,
    trials: usize,
    sigmas: &[f64],
) -> Result<CalibrationMcReport> {
    if trials < 1_000 {
        return Err(Error::Validation(format!(
            "calibration MC needs at least 1000 trials, got {trials}"
        )));
    }
    if sigmas.is_empty() || sigmas.iter().any(|s| !(s > &0.0)) {
        return Err(Error::Validation(
            "sigma list must be nonempty and strictly positive".into(),
        ));
    }
    let template = scenario
        .leds
        .first()
        .ok_or_else(|| Error::Validation("scenario has no LEDs".into()))?;
    let led = LedGroundTruth::new(
        Vec3::new(0.0, 0.0, plan.height),
        template.tilt_polar_deg,
        template.tilt_azimuth_deg,
        template.gain,
        template.lambertian_order,
    )?;
    let c_true = led.gain * led.normal;
    let n = plan.points.len();

    let clean: Vec<f64> = plan
        .points
        .iter()
        .map(|p| rss_simplified(&led, &PdPose::ground(p.x, p.y)))
        .collect::<Result<_>>()?;
    let set = CalibrationSet::new(
        led.position,
        plan.points.iter().zip(&clean).map(|(p, &s)| (*p, s)).collect(),
    )?;
    let gram = build_gram(&set)?;
    let omega_inv = gram.ggt_inverse()?;

    // Projector onto the tangent space of the unit normal; the linear part
    // of the normal-estimator error is -(1/c) (I - n n^T) delta.
    let tangent = Matrix3::identity() - led.normal * led.normal.transpose();
    let seed = scenario.master_seed;

    struct Accum {
        sum_delta: Vec3,
        sum_outer: Matrix3<f64>,
        sum_norm_bias: Vec3,
        sum_gain_bias: f64,
        sum_sq: f64,
    }
    let mut accums: Vec<Accum> = sigmas
        .iter()
        .map(|_| Accum {
            sum_delta: Vec3::zeros(),
            sum_outer: Matrix3::zeros(),
            sum_norm_bias: Vec3::zeros(),
            sum_gain_bias: 0.0,
            sum_sq: 0.0,
        })
        .collect();

    let mut nu = vec![0.0; n];
    let mut rss = vec![0.0; n];
    for t in 0..trials {
        for (i, v) in nu.iter_mut().enumerate() {
            *v = rng::standard_normal(seed, stream_key(&[tag::CALIBRATION_MC, t as u64, i as u64]));
        }
        for (si, &sigma) in sigmas.iter().enumerate() {
            for i in 0..n {
                rss[i] = clean[i] + sigma * nu[i];
            }
            let c_hat = estimate_c_vector(&gram, &rss)?;
            let delta = c_hat - c_true;
            let acc = &mut accums[si];
            acc.sum_delta += delta;
            acc.sum_outer += delta * delta.transpose();
            acc.sum_sq += delta.norm_squared();
            // normal bias, linear term removed
            let n_hat = c_hat / c_hat.norm();
            let lin_n = -(tangent * delta) / led.gain;
            acc.sum_norm_bias += (led.normal - n_hat) - lin_n;
            // gain bias, linear term removed
            let lin_c = -led.normal.dot(&delta);
            acc.sum_gain_bias += (led.gain - c_hat.norm()) - lin_c;
        }
    }

    let tf = trials as f64;
    let results = sigmas
        .iter()
        .zip(accums)
        .map(|(&sigma, acc)| {
            let mean = acc.sum_delta / tf;
            let covariance = (acc.sum_outer - tf * mean * mean.transpose()) / (tf - 1.0);
            SigmaMcResult {
                sigma,
                mean_c_vec_error: mean,
                covariance,
                theoretical_covariance: omega_inv * sigma * sigma,
                normal_bias: acc.sum_norm_bias / tf,
                gain_bias: acc.sum_gain_bias / tf,
                empirical_sum_mse: acc.sum_sq / tf,
                theoretical_sum_mse: sigma * sigma * omega_inv.trace(),
            }
        })
        .collect();

    Ok(CalibrationMcReport { trials, results })
}

/// Data source for [`run_localization_experiment`].
pub enum ExperimentData<'a> {
    /// Synthesize training and test measurements from the scenario's ground
    /// truth; `trials` marks independent noise redraws of both phases.
    Synthetic,
    /// Replay a measured dataset; `trials` counts seeded training-subset
    /// draws, each evaluated on the complement of the subset.
    Dataset(&'a [MeasurementRecord]),
}

/// Configuration of a localization experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub training_size: usize,
    pub trials: usize,
    /// Replaces the scenario master seed (and the seeds derived from it)
    /// when present.
    pub seed_override: Option<u64>,
    pub solve_options: SolveOptions,
    pub gp_grid: HyperGrid,
}

impl ExperimentConfig {
    pub fn new(methods: Vec<Method>, training_size: usize, trials: usize) -> Self {
        Self {
            methods,
            training_size,
            trials,
            seed_override: None,
            solve_options: SolveOptions::default(),
            gp_grid: HyperGrid::default(),
        }
    }
}

/// Per-method outcome of an experiment.
#[derive(Debug, Clone)]
pub struct MethodReport {
    pub method: Method,
    /// Pooled over every draw/trial and test point.
    pub stats: ErrorStats,
    pub per_draw_p50: Vec<f64>,
    pub per_draw_p99: Vec<f64>,
    pub median_p50: f64,
    pub median_p99: f64,
    /// Hard per-point failures (unlocatable inputs, singular geometry);
    /// failed points are excluded from the statistics.
    pub failures: usize,
}

/// Per-test-point summary: the error bound and per-method RMSE.
#[derive(Debug, Clone)]
pub struct PointReport {
    pub x: f64,
    pub y: f64,
    pub crlb_xy: f64,
    pub rmse: Vec<(Method, f64)>,
}

/// Full experiment output.
#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub methods: Vec<MethodReport>,
    pub points: Vec<PointReport>,
    pub training_size: usize,
    pub trials: usize,
    pub seed: u64,
}

impl ExperimentReport {
    pub fn method(&self, m: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_unstable_by(f64::total_cmp);
    percentile(&v, 50.0)
}

/// Seeded sample of `k` distinct indices out of `len`, in ascending order.
fn select_indices(len: usize, k: usize, seed: u64, stream: u64) -> Vec<usize> {
    if k >= len {
        return (0..len).collect();
    }
    let mut rng = rng::stream_rng(seed, stream);
    let mut idx = rand::seq::index::sample(&mut rng, len, k).into_vec();
    idx.sort_unstable();
    idx
}

/// Noise specs with seeds re-derived from an overriding master seed.
fn effective_noise(scenario: &Scenario, seed_override: Option<u64>) -> Vec<NoiseSpec> {
    match seed_override {
        None => scenario.noise.clone(),
        Some(seed) => scenario
            .noise
            .iter()
            .enumerate()
            .map(|(l, n)| NoiseSpec {
                sigma: n.sigma,
                seed: stream_key(&[seed, tag::NOISE_SEED, l as u64]),
            })
            .collect(),
    }
}

/// One estimate for one method; `Err` counts as a per-point failure.
fn run_method(
    method: Method,
    problem: &LocalizationProblem,
    no_tilt_gains: &[f64],
    gp: Option<&GpModel>,
    solve_options: &SolveOptions,
) -> Result<(f64, f64)> {
    match method {
        Method::WeightedLs => solve_weighted_ls(problem, solve_options).map(|e| e.xy),
        Method::Multilateration => multilaterate(problem, no_tilt_gains).map(|e| e.xy),
        Method::Gp => {
            let model = gp.ok_or_else(|| {
                Error::Validation("GP method requested but no model was fitted".into())
            })?;
            model.predict(&problem.rss)
        }
    }
}

/// Run the localization experiment: calibrate from training data, localize
/// every test point with each requested method, and report per-method error
/// statistics plus the per-point CRLB.
pub fn run_localization_experiment(
    scenario: &Scenario,
    data: ExperimentData<'_>,
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport> {
    if cfg.methods.is_empty() {
        return Err(Error::Validation("no localization methods requested".into()));
    }
    if cfg.trials == 0 {
        return Err(Error::Validation("experiment needs at least one trial".into()));
    }
    scenario.validate()?;
    match data {
        ExperimentData::Synthetic => run_synthetic_experiment(scenario, cfg),
        ExperimentData::Dataset(records) => run_dataset_experiment(scenario, records, cfg),
    }
}

fn run_synthetic_experiment(
    scenario: &Scenario,
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport> {
    let seed = cfg.seed_override.unwrap_or(scenario.master_seed);
    let noise = effective_noise(scenario, cfg.seed_override);
    let leds = &scenario.leds;
    let num_leds = leds.len();
    if num_leds < 3 {
        return Err(Error::Validation(format!(
            "localization experiment needs at least 3 LEDs, got {num_leds}"
        )));
    }
    if scenario.trajectory.is_empty() {
        return Err(Error::Validation("scenario has an empty trajectory".into()));
    }
    if scenario.training_points.is_empty() {
        return Err(Error::Validation("scenario has no training points".into()));
    }

    let selected = select_indices(
        scenario.training_points.len(),
        cfg.training_size,
        seed,
        stream_key(&[tag::SUBSET]),
    );
    let train_pts: Vec<Vec3> = selected.iter().map(|&i| scenario.training_points[i]).collect();

    // Noiseless training-point signal per LED (model truth).
    let clean_train: Vec<Vec<f64>> = leds
        .iter()
        .map(|led| {
            train_pts
                .iter()
                .map(|p| rss_general(led, &PdPose::ground(p.x, p.y)))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;

    // Fresh calibration noise every trial keeps the residual-calibration
    // error zero-mean across trials, matching the CRLB's noise model.
    let trial_cals: Vec<(Vec<LedCalibration>, Vec<f64>)> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| -> Result<(Vec<LedCalibration>, Vec<f64>)> {
            let mut cals = Vec::with_capacity(num_leds);
            let mut gains = Vec::with_capacity(num_leds);
            for (l, led) in leds.iter().enumerate() {
                let samples: Vec<(Vec3, f64)> = train_pts
                    .iter()
                    .zip(&clean_train[l])
                    .enumerate()
                    .map(|(i, (p, &s))| {
                        let key = stream_key(&[tag::CALIBRATION, t as u64, l as u64, i as u64]);
                        (*p, add_noise(s, &noise[l], key))
                    })
                    .collect();
                let set = CalibrationSet::new(led.position, samples)?;
                gains.push(fit_no_tilt_gain(&set)?);
                cals.push(calibrate(&set)?);
            }
            Ok((cals, gains))
        })
        .collect::<Result<_>>()?;

    // Reference problem with true parameters and the training geometry; the
    // per-point CRLB is deterministic given the training positions.
    let reference: Vec<LedCalibration> = leds
        .iter()
        .enumerate()
        .map(|(l, led)| -> Result<LedCalibration> {
            let set = CalibrationSet::new(
                led.position,
                train_pts.iter().map(|p| (*p, 0.0)).collect(),
            )?;
            let gram = build_gram(&set)?;
            Ok(LedCalibration {
                led_position: led.position,
                c_vec: led.gain * led.normal,
                normal_hat: led.normal,
                gain_hat: led.gain,
                sigma2_hat: noise[l].sigma * noise[l].sigma,
                ggt_inverse: gram.ggt_inverse()?,
            })
        })
        .collect::<Result<_>>()?;
    let reference_problem = LocalizationProblem::new(reference, vec![0.0; num_leds])?;

    let gp_model = if cfg.methods.contains(&Method::Gp) {
        let inputs = DMatrix::from_fn(train_pts.len(), num_leds, |r, c| {
            let key = stream_key(&[tag::CALIBRATION, 0, c as u64, r as u64]);
            add_noise(clean_train[c][r], &noise[c], key)
        });
        let targets = DMatrix::from_fn(train_pts.len(), 2, |r, c| {
            if c == 0 {
                train_pts[r].x
            } else {
                train_pts[r].y
            }
        });
        Some(GpModel::fit(&inputs, &targets, &cfg.gp_grid)?)
    } else {
        None
    };

    let mut solve_options = cfg.solve_options.clone();
    if solve_options.search_bounds.is_none() {
        solve_options.search_bounds = Some(scenario.room.bounds());
    }

    struct PointOutcome {
        crlb: f64,
        // errors[method][trial]; NaN marks a failure at that trial
        errors: Vec<Vec<f64>>,
    }

    let outcomes: Vec<PointOutcome> = scenario
        .trajectory
        .par_iter()
        .enumerate()
        .map(|(i, p)| -> Result<PointOutcome> {
            let truth = (p.x, p.y);
            let crlb = crlb_xy(&reference_problem, p).map(|r| r.crlb_xy)?;
            let mut errors = vec![Vec::with_capacity(cfg.trials); cfg.methods.len()];
            for t in 0..cfg.trials {
                let rss: Vec<f64> = leds
                    .iter()
                    .enumerate()
                    .map(|(l, led)| {
                        let clean = rss_general(led, &PdPose::ground(p.x, p.y))?;
                        let key =
                            stream_key(&[tag::LOCALIZATION, t as u64, i as u64, l as u64]);
                        Ok(add_noise(clean, &noise[l], key))
                    })
                    .collect::<Result<_>>()?;
                let (cals, gains) = &trial_cals[t];
                let problem = LocalizationProblem::new(cals.clone(), rss)?;
                for (mi, &method) in cfg.methods.iter().enumerate() {
                    match run_method(method, &problem, gains, gp_model.as_ref(), &solve_options)
                    {
                        Ok(xy) => errors[mi].push(euclidean_error(xy, truth)),
                        Err(_) => errors[mi].push(f64::NAN),
                    }
                }
            }
            Ok(PointOutcome { crlb, errors })
        })
        .collect::<Result<_>>()?;

    assemble_report(
        cfg,
        seed,
        scenario
            .trajectory
            .iter()
            .map(|p| (p.x, p.y))
            .collect::<Vec<_>>()
            .as_slice(),
        &outcomes
            .iter()
            .map(|o| (o.crlb, o.errors.clone()))
            .collect::<Vec<_>>(),
        cfg.trials,
    )
}

fn run_dataset_experiment(
    scenario: &Scenario,
    records: &[MeasurementRecord],
    cfg: &ExperimentConfig,
) -> Result<ExperimentReport> {
    let seed = cfg.seed_override.unwrap_or(scenario.master_seed);
    let num_leds = scenario.leds.len();
    if records.is_empty() {
        return Err(Error::Validation("dataset is empty".into()));
    }
    if records.iter().any(|r| r.rss.len() != num_leds) {
        return Err(Error::Validation(format!(
            "dataset has a different LED count than the scenario ({} LEDs)",
            num_leds
        )));
    }
    if cfg.training_size < 3 || cfg.training_size >= records.len() {
        return Err(Error::Validation(format!(
            "training size must be in [3, {}), got {}",
            records.len(),
            cfg.training_size
        )));
    }

    let mut solve_options = cfg.solve_options.clone();
    if solve_options.search_bounds.is_none() {
        solve_options.search_bounds = Some(scenario.room.bounds());
    }

    struct DrawOutcome {
        // errors[method][test_slot]
        errors: Vec<Vec<f64>>,
        // (record index, crlb, per-method error) per test record
        per_record: Vec<(usize, f64, Vec<f64>)>,
    }

    let draws: Vec<DrawOutcome> = (0..cfg.trials)
        .into_par_iter()
        .map(|k| -> Result<DrawOutcome> {
            let picked = select_indices(
                records.len(),
                cfg.training_size,
                seed,
                stream_key(&[tag::SUBSET, k as u64]),
            );
            let in_training: Vec<bool> = {
                let mut mask = vec![false; records.len()];
                for &i in &picked {
                    mask[i] = true;
                }
                mask
            };

            let mut cals = Vec::with_capacity(num_leds);
            let mut gains = Vec::with_capacity(num_leds);
            for (l, led) in scenario.leds.iter().enumerate() {
                let samples: Vec<(Vec3, f64)> = picked
                    .iter()
                    .map(|&i| (records[i].position, records[i].rss[l]))
                    .collect();
                let set = CalibrationSet::new(led.position, samples)?;
                gains.push(fit_no_tilt_gain(&set)?);
                cals.push(calibrate(&set)?);
            }

            let gp_model = if cfg.methods.contains(&Method::Gp) {
                let inputs = DMatrix::from_fn(picked.len(), num_leds, |r, c| {
                    records[picked[r]].rss[c]
                });
                let targets = DMatrix::from_fn(picked.len(), 2, |r, c| {
                    if c == 0 {
                        records[picked[r]].position.x
                    } else {
                        records[picked[r]].position.y
                    }
                });
                Some(GpModel::fit(&inputs, &targets, &cfg.gp_grid)?)
            } else {
                None
            };

            let crlb_problem = LocalizationProblem::new(cals.clone(), vec![0.0; num_leds])?;
            let mut errors = vec![Vec::new(); cfg.methods.len()];
            let mut per_record = Vec::new();
            for (i, rec) in records.iter().enumerate() {
                if in_training[i] {
                    continue;
                }
                let truth = (rec.position.x, rec.position.y);
                let crlb = crlb_xy(&crlb_problem, &rec.position)
                    .map(|r| r.crlb_xy)
                    .unwrap_or(f64::NAN);
                let problem = LocalizationProblem::new(cals.clone(), rec.rss.clone())?;
                let mut row = Vec::with_capacity(cfg.methods.len());
                for (mi, &method) in cfg.methods.iter().enumerate() {
                    let err = match run_method(
                        method,
                        &problem,
                        &gains,
                        gp_model.as_ref(),
                        &solve_options,
                    ) {
                        Ok(xy) => euclidean_error(xy, truth),
                        Err(_) => f64::NAN,
                    };
                    errors[mi].push(err);
                    row.push(err);
                }
                per_record.push((i, crlb, row));
            }
            Ok(DrawOutcome { errors, per_record })
        })
        .collect::<Result<_>>()?;

    // Per-method aggregation over draws.
    let mut methods = Vec::with_capacity(cfg.methods.len());
    for (mi, &method) in cfg.methods.iter().enumerate() {
        let mut pooled = Vec::new();
        let mut per_draw_p50 = Vec::with_capacity(draws.len());
        let mut per_draw_p99 = Vec::with_capacity(draws.len());
        let mut failures = 0usize;
        for draw in &draws {
            let ok: Vec<f64> = draw.errors[mi]
                .iter()
                .copied()
                .filter(|e| e.is_finite())
                .collect();
            failures += draw.errors[mi].len() - ok.len();
            if !ok.is_empty() {
                let stats = percentiles_and_cdf(&ok)?;
                per_draw_p50.push(stats.p50);
                per_draw_p99.push(stats.p99);
                pooled.extend_from_slice(&ok);
            }
        }
        let stats = percentiles_and_cdf(&pooled)?;
        methods.push(MethodReport {
            method,
            median_p50: median(&per_draw_p50),
            median_p99: median(&per_draw_p99),
            per_draw_p50,
            per_draw_p99,
            stats,
            failures,
        });
    }
    attach_improvement(&mut methods);

    // Per-record aggregation: median CRLB and per-method RMS error over the
    // draws in which the record was in the test set.
    let mut points = Vec::new();
    for (i, rec) in records.iter().enumerate() {
        let mut crlbs = Vec::new();
        let mut sums = vec![(0.0, 0usize); cfg.methods.len()];
        for draw in &draws {
            for (ri, crlb, row) in &draw.per_record {
                if *ri == i {
                    if crlb.is_finite() {
                        crlbs.push(*crlb);
                    }
                    for (mi, e) in row.iter().enumerate() {
                        if e.is_finite() {
                            sums[mi].0 += e * e;
                            sums[mi].1 += 1;
                        }
                    }
                }
            }
        }
        if crlbs.is_empty() {
            continue;
        }
        points.push(PointReport {
            x: rec.position.x,
            y: rec.position.y,
            crlb_xy: median(&crlbs),
            rmse: cfg
                .methods
                .iter()
                .zip(&sums)
                .map(|(&m, &(sq, n))| (m, if n > 0 { (sq / n as f64).sqrt() } else { f64::NAN }))
                .collect(),
        });
    }

    Ok(ExperimentReport {
        methods,
        points,
        training_size: cfg.training_size,
        trials: cfg.trials,
        seed,
    })
}

/// Build the report for the synthetic path, where every point is evaluated
/// in every trial: `outcomes[i] = (crlb, errors[method][trial])`.
fn assemble_report(
    cfg: &ExperimentConfig,
    seed: u64,
    truths: &[(f64, f64)],
    outcomes: &[(f64, Vec<Vec<f64>>)],
    trials: usize,
) -> Result<ExperimentReport> {
    let mut methods = Vec::with_capacity(cfg.methods.len());
    for (mi, &method) in cfg.methods.iter().enumerate() {
        let mut pooled = Vec::new();
        let mut failures = 0usize;
        let mut per_draw_p50 = Vec::with_capacity(trials);
        let mut per_draw_p99 = Vec::with_capacity(trials);
        for t in 0..trials {
            let mut trial_errors = Vec::with_capacity(outcomes.len());
            for (_, errors) in outcomes {
                let e = errors[mi][t];
                if e.is_finite() {
                    trial_errors.push(e);
                } else {
                    failures += 1;
                }
            }
            if !trial_errors.is_empty() {
                let stats = percentiles_and_cdf(&trial_errors)?;
                per_draw_p50.push(stats.p50);
                per_draw_p99.push(stats.p99);
                pooled.extend_from_slice(&trial_errors);
            }
        }
        let stats = percentiles_and_cdf(&pooled)?;
        methods.push(MethodReport {
            method,
            median_p50: median(&per_draw_p50),
            median_p99: median(&per_draw_p99),
            per_draw_p50,
            per_draw_p99,
            stats,
            failures,
        });
    }
    attach_improvement(&mut methods);

    let points = truths
        .iter()
        .zip(outcomes)
        .map(|(&(x, y), (crlb, errors))| PointReport {
            x,
            y,
            crlb_xy: *crlb,
            rmse: cfg
                .methods
                .iter()
                .zip(errors)
                .map(|(&m, errs)| {
                    let ok: Vec<f64> = errs.iter().copied().filter(|e| e.is_finite()).collect();
                    let rmse = if ok.is_empty() {
                        f64::NAN
                    } else {
                        (ok.iter().map(|e| e * e).sum::<f64>() / ok.len() as f64).sqrt()
                    };
                    (m, rmse)
                })
                .collect(),
        })
        .collect();

    Ok(ExperimentReport {
        methods,
        points,
        training_size: cfg.training_size,
        trials,
        seed,
    })
}

/// Fill `improvement_rate_vs` on the weighted-LS stats relative to the GP
/// baseline P50, when both methods are present.
fn attach_improvement(methods: &mut [MethodReport]) {
    let gp_p50 = methods
        .iter()
        .find(|m| m.method == Method::Gp)
        .map(|m| m.stats.p50);
    if let Some(gp_p50) = gp_p50 {
        if let Some(wls) = methods.iter_mut().find(|m| m.method == Method::WeightedLs) {
            if let Ok(rate) = improvement_rate(gp_p50, wls.stats.p50) {
                wls.stats.improvement_rate_vs = Some(rate);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_scenario_matches_reference_setup() {
        let s = default_scenario();
        assert_eq!(s.leds.len(), 4);
        let polar: Vec<f64> = s.leds.iter().map(|l| l.tilt_polar_deg).collect();
        assert_eq!(polar, vec![1.6, 2.1, 3.7, 3.3]);
        for n in &s.noise {
            assert_eq!(n.sigma, 1e-4);
        }
        for led in &s.leds {
            assert_eq!(led.height(), 4.0);
            assert_eq!(led.gain, 1.0);
            assert_eq!(led.lambertian_order, 1.0);
            assert!((0.0..360.0).contains(&led.tilt_azimuth_deg));
        }
        assert_eq!(s.trajectory.len(), 240);
        assert_eq!(s.training_points.len(), 64);
        s.validate().unwrap();
        // same seed, same azimuths
        let s2 = default_scenario();
        assert_eq!(s, s2);
        // different seed, different azimuths
        let s3 = default_scenario_with_seed(99);
        assert_ne!(
            s.leds[0].tilt_azimuth_deg,
            s3.leds[0].tilt_azimuth_deg
        );
    }

    #[test]
    fn euclidean_error_examples() {
        assert_eq!(euclidean_error((0.0, 0.0), (3.0, 4.0)), 5.0);
        assert_eq!(euclidean_error((1.5, -2.0), (1.5, -2.0)), 0.0);
        assert_eq!(
            euclidean_error((0.1, 0.2), (2.0, -1.0)),
            euclidean_error((2.0, -1.0), (0.1, 0.2))
        );
    }

    #[test]
    fn percentile_examples() {
        let stats = percentiles_and_cdf(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(stats.p50, 3.0);
        assert_relative_eq!(stats.p99, 4.96, max_relative = 1e-12);
        let flat = percentiles_and_cdf(&[2.5; 10]).unwrap();
        assert_eq!(flat.p50, 2.5);
        assert_eq!(flat.p99, 2.5);
        assert!(percentiles_and_cdf(&[]).is_err());
    }

    #[test]
    fn cdf_is_monotone_and_normalized() {
        let stats = percentiles_and_cdf(&[0.4, 0.1, 0.9, 0.2, 0.2]).unwrap();
        let mut prev = (f64::NEG_INFINITY, 0.0);
        for &(e, f) in &stats.cdf {
            assert!(e >= prev.0);
            assert!(f >= prev.1);
            prev = (e, f);
        }
        assert_eq!(stats.cdf.last().unwrap().1, 1.0);
    }

    #[test]
    fn uniform_p99_matches_order_statistics() {
        let draws: Vec<f64> = (0..1000)
            .map(|i| {
                let mut r = rng::stream_rng(2024, i as u64);
                r.random_range(0.0..1.0)
            })
            .collect();
        let stats = percentiles_and_cdf(&draws).unwrap();
        assert!((stats.p99 - 0.99).abs() < 0.02, "p99 = {}", stats.p99);
    }

    #[test]
    fn improvement_rate_examples() {
        let r = improvement_rate(7.95, 3.24).unwrap();
        assert_relative_eq!(r, 0.5924528301886792, max_relative = 1e-12);
        assert_eq!(improvement_rate(5.0, 5.0).unwrap(), 0.0);
        assert_eq!(improvement_rate(5.0, 0.0).unwrap(), 1.0);
        assert!(improvement_rate(0.0, 1.0).is_err());
    }

    #[test]
    fn log_log_slope_recovers_power_law() {
        let xs = [1e-4, 3e-4, 1e-3, 3e-3, 1e-2];
        let ys: Vec<f64> = xs.iter().map(|x| 7.0 * x * x).collect();
        assert_relative_eq!(log_log_slope(&xs, &ys), 2.0, max_relative = 1e-12);
    }

    #[test]
    fn calibration_mc_covariance_and_mse_match_theory() {
        let scenario = default_scenario();
        let plan = crate::calibration::plan_optimal_points(4.0, 5, 0.0).unwrap();
        let report = run_calibration_mc(&scenario, &plan, 20_000, &[1e-4]).unwrap();
        let r = &report.results[0];
        let ratio = r.empirical_sum_mse / r.theoretical_sum_mse;
        assert!((ratio - 1.0).abs() < 0.05, "sum MSE ratio {ratio}");
        for i in 0..3 {
            for j in 0..3 {
                let scale = (r.theoretical_covariance[(i, i)]
                    * r.theoretical_covariance[(j, j)])
                .sqrt();
                assert!(
                    (r.covariance[(i, j)] - r.theoretical_covariance[(i, j)]).abs()
                        < 0.08 * scale,
                    "covariance mismatch at ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn calibration_mc_is_deterministic() {
        let scenario = default_scenario();
        let plan = crate::calibration::plan_optimal_points(4.0, 4, 0.0).unwrap();
        let a = run_calibration_mc(&scenario, &plan, 1_000, &[1e-3]).unwrap();
        let b = run_calibration_mc(&scenario, &plan, 1_000, &[1e-3]).unwrap();
        assert_eq!(
            a.results[0].empirical_sum_mse.to_bits(),
            b.results[0].empirical_sum_mse.to_bits()
        );
    }

    #[test]
    fn calibration_mc_rejects_bad_arguments() {
        let scenario = default_scenario();
        let plan = crate::calibration::plan_optimal_points(4.0, 4, 0.0).unwrap();
        assert!(run_calibration_mc(&scenario, &plan, 10, &[1e-3]).is_err());
        assert!(run_calibration_mc(&scenario, &plan, 1_000, &[]).is_err());
        assert!(run_calibration_mc(&scenario, &plan, 1_000, &[0.0]).is_err());
    }
}
