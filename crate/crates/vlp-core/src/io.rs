//! File formats: measurement datasets (CSV), scenario documents (TOML),
//! calibration records (TOML), and the plot-ready CSV emitters used by the
//! command-line front end.
//!
//! Measurement CSV schema: header `point_id,x,y,z,rss_0,...,rss_{L-1}`,
//! coordinates in meters, one row per measured point, `z = 0` throughout.
//!
//! Scenario TOML documents mirror [`Scenario`]. Every field has a default
//! drawn from the reference simulation setup, so an empty document parses
//! to the full default scenario; parsing resolves all defaults and draws
//! (LED tilt azimuths, per-LED noise seeds) so that serialize-then-parse is
//! the identity.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{CalibrationPlan, LedCalibration};
use crate::error::{Error, Result};
use crate::localization::{CrlbReport, PositionEstimate};
use crate::model::{LedGroundTruth, NoiseSpec, Vec3};
use crate::rng::{stream_key, stream_rng, tag};
use crate::simulation::{
    default_scenario_with_seed, default_training_grid, default_trajectory, ErrorStats, Room,
    Scenario, DEFAULT_MASTER_SEED,
};

/// One row of a measurement dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementRecord {
    pub point_id: u64,
    pub position: Vec3,
    pub rss: Vec<f64>,
}

fn parse_err(path: &Path, row: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        row,
        message: message.into(),
    }
}

/// Parse a measurement CSV file, validating the header and every row.
///
/// Row numbers in errors are 1-based file lines (the header is line 1).
pub fn parse_measurements(path: &Path) -> Result<Vec<MeasurementRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| parse_err(path, 1, e.to_string()))?;

    let headers = reader
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let fixed = ["point_id", "x", "y", "z"];
    if headers.len() < fixed.len() + 1 {
        return Err(parse_err(
            path,
            1,
            format!(
                "expected header point_id,x,y,z,rss_0,... got {} columns",
                headers.len()
            ),
        ));
    }
    for (i, name) in fixed.iter().enumerate() {
        if headers.get(i) != Some(name) {
            return Err(parse_err(
                path,
                1,
                format!(
                    "column {} must be '{name}', got '{}'",
                    i + 1,
                    headers.get(i).unwrap_or("")
                ),
            ));
        }
    }
    let led_count = headers.len() - fixed.len();
    for l in 0..led_count {
        let expected = format!("rss_{l}");
        if headers.get(fixed.len() + l) != Some(expected.as_str()) {
            return Err(parse_err(
                path,
                1,
                format!(
                    "column {} must be '{expected}', got '{}'",
                    fixed.len() + l + 1,
                    headers.get(fixed.len() + l).unwrap_or("")
                ),
            ));
        }
    }

    let mut records = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let line = idx + 2;
        let row = row.map_err(|e| parse_err(path, line, e.to_string()))?;
        if row.len() != headers.len() {
            return Err(parse_err(
                path,
                line,
                format!("expected {} columns, got {}", headers.len(), row.len()),
            ));
        }
        let field = |i: usize| -> &str { row.get(i).unwrap_or("") };
        let point_id: u64 = field(0)
            .parse()
            .map_err(|_| parse_err(path, line, format!("bad point_id '{}'", field(0))))?;
        let mut coords = [0.0f64; 3];
        for (i, c) in coords.iter_mut().enumerate() {
            *c = field(i + 1).parse().map_err(|_| {
                parse_err(
                    path,
                    line,
                    format!("bad {} value '{}'", fixed[i + 1], field(i + 1)),
                )
            })?;
            if !c.is_finite() {
                return Err(parse_err(path, line, format!("non-finite {}", fixed[i + 1])));
            }
        }
        if coords[2].abs() > 1e-9 {
            return Err(parse_err(
                path,
                line,
                format!("z must be 0 for ground-plane records, got {}", coords[2]),
            ));
        }
        let mut rss = Vec::with_capacity(led_count);
        for l in 0..led_count {
            let v: f64 = field(4 + l).parse().map_err(|_| {
                parse_err(path, line, format!("bad rss_{l} value '{}'", field(4 + l)))
            })?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("non-finite rss_{l}")));
            }
            rss.push(v);
        }
        records.push(MeasurementRecord {
            point_id,
            position: Vec3::new(coords[0], coords[1], coords[2]),
            rss,
        });
    }
    if records.is_empty() {
        return Err(parse_err(path, 2, "file contains no measurement rows"));
    }
    Ok(records)
}

/// Write measurement records in the dataset CSV schema.
pub fn serialize_measurements(records: &[MeasurementRecord], path: &Path) -> Result<()> {
    let led_count = records.first().map(|r| r.rss.len()).unwrap_or(0);
    let mut out = String::from("point_id,x,y,z");
    for l in 0..led_count {
        write!(out, ",rss_{l}").unwrap();
    }
    out.push('\n');
    for r in records {
        write!(out, "{},{},{},{}", r.point_id, r.position.x, r.position.y, r.position.z).unwrap();
        for v in &r.rss {
            write!(out, ",{v}").unwrap();
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

// --------------------------------------------------------------------------
// Scenario documents
// --------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct RoomDoc {
    x_min: f64,
    y_min: f64,
    width: f64,
    depth: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct LedDoc {
    position: [f64; 3],
    #[serde(default)]
    tilt_polar_deg: f64,
    /// Drawn uniformly from [0, 360) using the master seed when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tilt_azimuth_deg: Option<f64>,
    #[serde(default = "default_gain")]
    gain: f64,
    #[serde(default = "default_order")]
    lambertian_order: f64,
}

fn default_gain() -> f64 {
    1.0
}

fn default_order() -> f64 {
    1.0
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct NoiseDoc {
    /// Uniform standard deviation for all LEDs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    /// Per-LED standard deviations; overrides `sigma`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigmas: Option<Vec<f64>>,
    /// Per-LED stream seeds; derived from the master seed when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seeds: Option<Vec<u64>>,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct ScenarioDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    master_seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    room: Option<RoomDoc>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    leds: Option<Vec<LedDoc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    noise: Option<NoiseDoc>,
    /// Ground-plane trajectory points `[x, y]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    trajectory: Option<Vec<[f64; 2]>>,
    /// Ground-plane calibration/training points `[x, y]`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    training: Option<Vec<[f64; 2]>>,
}

fn resolve_scenario(doc: ScenarioDoc, seed_override: Option<u64>) -> Result<Scenario> {
    let master_seed = seed_override
        .or(doc.master_seed)
        .unwrap_or(DEFAULT_MASTER_SEED);

    // A document without LEDs is the reference scenario; explicit fields
    // still override its parts below.
    let defaults = if doc.leds.is_none() {
        Some(default_scenario_with_seed(master_seed))
    } else {
        None
    };

    let room = match doc.room {
        Some(r) => Room {
            x_min: r.x_min,
            y_min: r.y_min,
            width: r.width,
            depth: r.depth,
        },
        None => Room {
            x_min: -4.0,
            y_min: 0.0,
            width: 8.0,
            depth: 8.0,
        },
    };

    let leds: Vec<LedGroundTruth> = match doc.leds {
        None => defaults.as_ref().unwrap().leds.clone(),
        Some(docs) => docs
            .into_iter()
            .enumerate()
            .map(|(l, d)| {
                let azimuth = d.tilt_azimuth_deg.unwrap_or_else(|| {
                    let mut r =
                        stream_rng(master_seed, stream_key(&[tag::AZIMUTH, l as u64]));
                    r.random_range(0.0..std::f64::consts::TAU).to_degrees()
                });
                LedGroundTruth::new(
                    Vec3::new(d.position[0], d.position[1], d.position[2]),
                    d.tilt_polar_deg,
                    azimuth,
                    d.gain,
                    d.lambertian_order,
                )
            })
            .collect::<Result<_>>()?,
    };

    let noise_doc = doc.noise.unwrap_or_default();
    let sigmas: Vec<f64> = match (&noise_doc.sigmas, noise_doc.sigma) {
        (Some(list), _) => {
            if list.len() != leds.len() {
                return Err(Error::Validation(format!(
                    "{} noise sigmas for {} LEDs",
                    list.len(),
                    leds.len()
                )));
            }
            list.clone()
        }
        (None, Some(s)) => vec![s; leds.len()],
        (None, None) => vec![1e-4; leds.len()],
    };
    let seeds: Vec<u64> = match &noise_doc.seeds {
        Some(list) => {
            if list.len() != leds.len() {
                return Err(Error::Validation(format!(
                    "{} noise seeds for {} LEDs",
                    list.len(),
                    leds.len()
                )));
            }
            list.clone()
        }
        None => (0..leds.len())
            .map(|l| stream_key(&[master_seed, tag::NOISE_SEED, l as u64]))
            .collect(),
    };
    let noise: Vec<NoiseSpec> = sigmas
        .iter()
        .zip(&seeds)
        .map(|(&sigma, &seed)| NoiseSpec::new(sigma, seed))
        .collect::<Result<_>>()?;

    let to_points = |pts: Vec<[f64; 2]>| -> Vec<Vec3> {
        pts.into_iter().map(|[x, y]| Vec3::new(x, y, 0.0)).collect()
    };
    let trajectory = match doc.trajectory {
        Some(pts) => to_points(pts),
        None => default_trajectory(&room),
    };
    let training_points = match doc.training {
        Some(pts) => to_points(pts),
        None => default_training_grid(&room),
    };

    let scenario = Scenario {
        room,
        leds,
        noise,
        trajectory,
        training_points,
        master_seed,
    };
    scenario.validate()?;
    Ok(scenario)
}

/// Parse a scenario TOML document, filling omitted fields with the
/// reference-setup defaults.
pub fn parse_scenario(path: &Path) -> Result<Scenario> {
    parse_scenario_with_seed(path, None)
}

/// [`parse_scenario`] with the master seed (and everything derived from it)
/// replaced before resolution.
pub fn parse_scenario_with_seed(path: &Path, seed_override: Option<u64>) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)?;
    let doc: ScenarioDoc = toml::from_str(&text)
        .map_err(|e| parse_err(path, 1, e.to_string()))?;
    resolve_scenario(doc, seed_override)
}

/// Parse a scenario from TOML text (defaults resolved as in
/// [`parse_scenario`]).
pub fn scenario_from_toml(text: &str) -> Result<Scenario> {
    let doc: ScenarioDoc =
        toml::from_str(text).map_err(|e| Error::Validation(format!("scenario TOML: {e}")))?;
    resolve_scenario(doc, None)
}

/// Serialize a fully resolved scenario; parsing the output reproduces the
/// scenario exactly.
pub fn scenario_to_toml(scenario: &Scenario) -> Result<String> {
    let doc = ScenarioDoc {
        master_seed: Some(scenario.master_seed),
        room: Some(RoomDoc {
            x_min: scenario.room.x_min,
            y_min: scenario.room.y_min,
            width: scenario.room.width,
            depth: scenario.room.depth,
        }),
        leds: Some(
            scenario
                .leds
                .iter()
                .map(|led| LedDoc {
                    position: [led.position.x, led.position.y, led.position.z],
                    tilt_polar_deg: led.tilt_polar_deg,
                    tilt_azimuth_deg: Some(led.tilt_azimuth_deg),
                    gain: led.gain,
                    lambertian_order: led.lambertian_order,
                })
                .collect(),
        ),
        noise: Some(NoiseDoc {
            sigma: None,
            sigmas: Some(scenario.noise.iter().map(|n| n.sigma).collect()),
            seeds: Some(scenario.noise.iter().map(|n| n.seed).collect()),
        }),
        trajectory: Some(scenario.trajectory.iter().map(|p| [p.x, p.y]).collect()),
        training: Some(scenario.training_points.iter().map(|p| [p.x, p.y]).collect()),
    };
    toml::to_string(&doc).map_err(|e| Error::Validation(format!("scenario serialization: {e}")))
}

/// Write a scenario document to a file.
pub fn serialize_scenario(scenario: &Scenario, path: &Path) -> Result<()> {
    std::fs::write(path, scenario_to_toml(scenario)?)?;
    Ok(())
}

// --------------------------------------------------------------------------
// Calibration records
// --------------------------------------------------------------------------

/// On-disk calibration record: the [`LedCalibration`] fields plus the
/// no-tilt gain refit used by the multilateration baseline.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CalibrationRecord {
    pub led_position: [f64; 3],
    pub c_vec: [f64; 3],
    pub normal_hat: [f64; 3],
    pub gain_hat: f64,
    pub sigma2_hat: f64,
    /// Row-major 3x3 inverse Gram matrix.
    pub ggt_inverse: [[f64; 3]; 3],
    pub no_tilt_gain: f64,
    pub sample_count: usize,
    pub tilt_polar_deg: f64,
    pub tilt_azimuth_deg: f64,
}

impl CalibrationRecord {
    pub fn from_calibration(
        cal: &LedCalibration,
        no_tilt_gain: f64,
        sample_count: usize,
    ) -> Self {
        let m = &cal.ggt_inverse;
        Self {
            led_position: [cal.led_position.x, cal.led_position.y, cal.led_position.z],
            c_vec: [cal.c_vec.x, cal.c_vec.y, cal.c_vec.z],
            normal_hat: [cal.normal_hat.x, cal.normal_hat.y, cal.normal_hat.z],
            gain_hat: cal.gain_hat,
            sigma2_hat: cal.sigma2_hat,
            ggt_inverse: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
            no_tilt_gain,
            sample_count,
            tilt_polar_deg: cal.tilt_polar_deg(),
            tilt_azimuth_deg: cal.tilt_azimuth_deg(),
        }
    }

    pub fn to_calibration(&self) -> LedCalibration {
        let m = &self.ggt_inverse;
        LedCalibration {
            led_position: Vec3::new(
                self.led_position[0],
                self.led_position[1],
                self.led_position[2],
            ),
            c_vec: Vec3::new(self.c_vec[0], self.c_vec[1], self.c_vec[2]),
            normal_hat: Vec3::new(self.normal_hat[0], self.normal_hat[1], self.normal_hat[2]),
            gain_hat: self.gain_hat,
            sigma2_hat: self.sigma2_hat,
            ggt_inverse: nalgebra::Matrix3::new(
                m[0][0], m[0][1], m[0][2], //
                m[1][0], m[1][1], m[1][2], //
                m[2][0], m[2][1], m[2][2],
            ),
        }
    }
}

pub fn calibration_record_to_toml(record: &CalibrationRecord) -> Result<String> {
    toml::to_string(record)
        .map_err(|e| Error::Validation(format!("calibration record serialization: {e}")))
}

pub fn read_calibration_record(path: &Path) -> Result<CalibrationRecord> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text).map_err(|e| parse_err(path, 1, e.to_string()))
}

pub fn write_calibration_record(record: &CalibrationRecord, path: &Path) -> Result<()> {
    std::fs::write(path, calibration_record_to_toml(record)?)?;
    Ok(())
}

// --------------------------------------------------------------------------
// CSV emitters
// --------------------------------------------------------------------------

/// Calibration plan points as `n,x,y,z`.
pub fn plan_to_csv(plan: &CalibrationPlan) -> String {
    let mut out = String::from("n,x,y,z\n");
    for (n, p) in plan.points.iter().enumerate() {
        writeln!(out, "{n},{},{},{}", p.x, p.y, p.z).unwrap();
    }
    out
}

/// Radius sweep as `radius,sum_mse`.
pub fn sweep_to_csv(curve: &[(f64, f64)]) -> String {
    let mut out = String::from("radius,sum_mse\n");
    for (r, mse) in curve {
        writeln!(out, "{r},{mse}").unwrap();
    }
    out
}

/// One-row CSV for a position estimate.
pub fn estimate_to_csv(est: &PositionEstimate) -> String {
    format!(
        "x,y,objective,iterations,converged,method\n{},{},{},{},{},{}\n",
        est.xy.0,
        est.xy.1,
        est.objective_value,
        est.iterations,
        est.converged,
        est.method.tag()
    )
}

/// CRLB report as a TOML document (matrices in row-major order).
pub fn crlb_to_toml(report: &CrlbReport) -> String {
    #[derive(Serialize)]
    struct Doc {
        crlb_xy: f64,
        fim: [[f64; 3]; 3],
        covariance_bound: [[f64; 3]; 3],
    }
    let rows = |m: &nalgebra::Matrix3<f64>| {
        [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ]
    };
    toml::to_string(&Doc {
        crlb_xy: report.crlb_xy,
        fim: rows(&report.fim),
        covariance_bound: rows(&report.covariance_bound),
    })
    .expect("fixed-shape document serializes")
}

use crate::simulation::ExperimentReport;

/// Per-method summary: pooled percentiles, per-draw medians, failures, and
/// the improvement rate of weighted LS over the GP baseline when present.
pub fn experiment_summary_csv(report: &ExperimentReport) -> String {
    let mut out = String::from(
        "method,samples,p50_m,p99_m,median_draw_p50_m,median_draw_p99_m,failures,improvement_vs_gp_p50\n",
    );
    for m in &report.methods {
        let improvement = match m.stats.improvement_rate_vs {
            Some(r) => format!("{r}"),
            None => String::new(),
        };
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            m.method.tag(),
            m.stats.per_point_errors.len(),
            m.stats.p50,
            m.stats.p99,
            m.median_p50,
            m.median_p99,
            m.failures,
            improvement
        )
        .unwrap();
    }
    out
}

/// Empirical CDF rows `method,error_m,cum_fraction`, downsampled to at most
/// `max_rows_per_method` evenly spaced quantiles (the last row, fraction 1,
/// is always kept).
pub fn experiment_cdf_csv(report: &ExperimentReport, max_rows_per_method: usize) -> String {
    let mut out = String::from("method,error_m,cum_fraction\n");
    for m in &report.methods {
        let stats = &m.stats;
        let n = stats.cdf.len();
        let rows = max_rows_per_method.max(2).min(n);
        for k in 0..rows {
            let idx = if rows == n {
                k
            } else {
                ((k as f64 + 1.0) / rows as f64 * n as f64).ceil() as usize - 1
            };
            let (e, f) = stats.cdf[idx.min(n - 1)];
            writeln!(out, "{},{e},{f}", m.method.tag()).unwrap();
        }
    }
    out
}

/// Per-test-point rows: truth coordinates, CRLB, and per-method RMSE.
pub fn experiment_points_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("x,y,crlb_xy_m");
    if let Some(first) = report.points.first() {
        for (m, _) in &first.rmse {
            write!(out, ",rmse_{}_m", m.tag()).unwrap();
        }
    }
    out.push('\n');
    for p in &report.points {
        write!(out, "{},{},{}", p.x, p.y, p.crlb_xy).unwrap();
        for (_, rmse) in &p.rmse {
            write!(out, ",{rmse}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// Per-draw percentiles `draw,method,p50_m,p99_m` (box-plot raw material).
pub fn experiment_draws_csv(report: &ExperimentReport) -> String {
    let mut out = String::from("draw,method,p50_m,p99_m\n");
    for m in &report.methods {
        for (k, (p50, p99)) in m.per_draw_p50.iter().zip(&m.per_draw_p99).enumerate() {
            writeln!(out, "{k},{},{p50},{p99}", m.method.tag()).unwrap();
        }
    }
    out
}

/// Pass/fail rows of a verification suite.
pub fn verification_csv(rows: &[VerificationRow]) -> String {
    let mut out = String::from("check,measured,expected,tolerance,pass\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.check, r.measured, r.expected, r.tolerance, r.pass
        )
        .unwrap();
    }
    out
}

/// One verification check result.
#[derive(Debug, Clone)]
pub struct VerificationRow {
    pub check: String,
    pub measured: f64,
    pub expected: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Raw error stats as CSV (`error_m` column), for ad hoc downstream use.
pub fn errors_to_csv(stats: &ErrorStats) -> String {
    let mut out = String::from("error_m\n");
    for e in &stats.per_point_errors {
        writeln!(out, "{e}").unwrap();
    }
    out
}
