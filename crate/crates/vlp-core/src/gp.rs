//! Gaussian-process regression baseline mapping an RSS vector to (x, y).
//!
//! A deliberately minimal comparator: squared-exponential kernel with one
//! shared length scale over the per-dimension standardized RSS inputs, a
//! constant mean (the training-target mean per output), and hyperparameters
//! picked by maximizing the log marginal likelihood over a fixed grid. Only
//! the posterior mean is ever used.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Hyperparameter search grid for [`GpModel::fit`].
#[derive(Debug, Clone)]
pub struct HyperGrid {
    pub length_scales: Vec<f64>,
    pub signal_variances: Vec<f64>,
    pub noise_jitters: Vec<f64>,
}

fn log_spaced(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    let (llo, lhi) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| {
            let t = if count == 1 {
                0.0
            } else {
                i as f64 / (count - 1) as f64
            };
            (llo + t * (lhi - llo)).exp()
        })
        .collect()
}

impl Default for HyperGrid {
    /// 13 length scales over [1e-2, 1e1] (standardized units), 7 signal
    /// variances over [1e-2, 1e2], 5 jitters over [1e-8, 1e-4], log-spaced.
    fn default() -> Self {
        Self {
            length_scales: log_spaced(1e-2, 1e1, 13),
            signal_variances: log_spaced(1e-2, 1e2, 7),
            noise_jitters: log_spaced(1e-8, 1e-4, 5),
        }
    }
}

/// Fitted GP posterior for the two output coordinates.
#[derive(Debug, Clone)]
pub struct GpModel {
    input_mean: Vec<f64>,
    input_std: Vec<f64>,
    /// Standardized training inputs, one row per sample.
    train: DMatrix<f64>,
    target_mean: [f64; 2],
    /// K^{ -1 } (y - mean) per output dimension.
    alphas: [DVector<f64>; 2],
    length_scale: f64,
    signal_variance: f64,
    noise_jitter: f64,
    log_marginal_likelihood: f64,
}

fn kernel_matrix(train: &DMatrix<f64>, ls: f64, sv: f64, jitter: f64) -> DMatrix<f64> {
    let m = train.nrows();
    let inv_2ls2 = 1.0 / (2.0 * ls * ls);
    let mut k = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in 0..=i {
            let mut sq = 0.0;
            for c in 0..train.ncols() {
                let d = train[(i, c)] - train[(j, c)];
                sq += d * d;
            }
            let v = sv * (-sq * inv_2ls2).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += jitter;
    }
    k
}

/// Log marginal likelihood of the centered targets under a Cholesky factor.
fn lml(chol: &Cholesky<f64, nalgebra::Dyn>, y: &DVector<f64>) -> f64 {
    let m = y.len() as f64;
    let alpha = chol.solve(y);
    let log_det_half: f64 = chol.l().diagonal().iter().map(|d| d.ln()).sum();
    -0.5 * y.dot(&alpha) - log_det_half - 0.5 * m * (2.0 * std::f64::consts::PI).ln()
}

impl GpModel {
    /// Fit on `inputs` (one row per sample, one column per LED) and 2-column
    /// `targets`, choosing hyperparameters by grid-searched log marginal
    /// likelihood (summed over the two outputs, which share the kernel).
    ///
    /// Deterministic: ties are broken toward the earlier grid entry.
    pub fn fit(inputs: &DMatrix<f64>, targets: &DMatrix<f64>, grid: &HyperGrid) -> Result<Self> {
        let m = inputs.nrows();
        if m == 0 {
            return Err(Error::Validation("GP fit needs at least one sample".into()));
        }
        if targets.nrows() != m || targets.ncols() != 2 {
            return Err(Error::Validation(format!(
                "targets must be {m}x2, got {}x{}",
                targets.nrows(),
                targets.ncols()
            )));
        }
        if inputs.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("GP inputs must be finite".into()));
        }
        if grid.length_scales.is_empty()
            || grid.signal_variances.is_empty()
            || grid.noise_jitters.is_empty()
        {
            return Err(Error::Validation("empty hyperparameter grid".into()));
        }

        // Per-dimension standardization; constant dimensions get unit scale.
        let cols = inputs.ncols();
        let mut input_mean = vec![0.0; cols];
        let mut input_std = vec![1.0; cols];
        for c in 0..cols {
            let col = inputs.column(c);
            let mean = col.sum() / m as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m as f64;
            input_mean[c] = mean;
            if var.sqrt() > 1e-15 {
                input_std[c] = var.sqrt();
            }
        }
        let mut train = inputs.clone();
        for c in 0..cols {
            for r in 0..m {
                train[(r, c)] = (train[(r, c)] - input_mean[c]) / input_std[c];
            }
        }

        let target_mean = [
            targets.column(0).sum() / m as f64,
            targets.column(1).sum() / m as f64,
        ];
        let y0 = DVector::from_iterator(m, targets.column(0).iter().map(|v| v - target_mean[0]));
        let y1 = DVector::from_iterator(m, targets.column(1).iter().map(|v| v - target_mean[1]));

        let mut best: Option<(f64, f64, f64, f64, Cholesky<f64, nalgebra::Dyn>)> = None;
        for &ls in &grid.length_scales {
            for &sv in &grid.signal_variances {
                for &jit in &grid.noise_jitters {
                    let k = kernel_matrix(&train, ls, sv, jit);
                    let Some(chol) = Cholesky::new(k) else {
                        continue;
                    };
                    let score = lml(&chol, &y0) + lml(&chol, &y1);
                    if best.as_ref().is_none_or(|b| score > b.0) {
                        best = Some((score, ls, sv, jit, chol));
                    }
                }
            }
        }

        // Jitter escalation with mid-grid scales if every grid point failed.
        if best.is_none() {
            let ls = grid.length_scales[grid.length_scales.len() / 2];
            let sv = grid.signal_variances[grid.signal_variances.len() / 2];
            let mut jit = grid.noise_jitters.last().copied().unwrap_or(1e-4);
            for _ in 0..8 {
                jit *= 10.0;
                if let Some(chol) = Cholesky::new(kernel_matrix(&train, ls, sv, jit)) {
                    let score = lml(&chol, &y0) + lml(&chol, &y1);
                    best = Some((score, ls, sv, jit, chol));
                    break;
                }
            }
        }

        let Some((score, ls, sv, jit, chol)) = best else {
            return Err(Error::GpFit(
                "kernel matrix is not positive definite even after jitter escalation".into(),
            ));
        };

        Ok(Self {
            input_mean,
            input_std,
            train,
            target_mean,
            alphas: [chol.solve(&y0), chol.solve(&y1)],
            length_scale: ls,
            signal_variance: sv,
            noise_jitter: jit,
            log_marginal_likelihood: score,
        })
    }

    /// Posterior mean at one RSS vector.
    pub fn predict(&self, rss: &[f64]) -> Result<(f64, f64)> {
        if rss.len() != self.train.ncols() {
            return Err(Error::Validation(format!(
                "query has {} readings, model was trained on {}",
                rss.len(),
                self.train.ncols()
            )));
        }
        let q: Vec<f64> = rss
            .iter()
            .enumerate()
            .map(|(c, v)| (v - self.input_mean[c]) / self.input_std[c])
            .collect();
        let inv_2ls2 = 1.0 / (2.0 * self.length_scale * self.length_scale);
        let m = self.train.nrows();
        let mut kstar = DVector::zeros(m);
        for i in 0..m {
            let mut sq = 0.0;
            for (c, qc) in q.iter().enumerate() {
                let d = self.train[(i, c)] - qc;
                sq += d * d;
            }
            kstar[i] = self.signal_variance * (-sq * inv_2ls2).exp();
        }
        Ok((
            self.target_mean[0] + kstar.dot(&self.alphas[0]),
            self.target_mean[1] + kstar.dot(&self.alphas[1]),
        ))
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.log_marginal_likelihood
    }

    /// `(length_scale, signal_variance, noise_jitter)` of the selected fit.
    pub fn hyperparameters(&self) -> (f64, f64, f64) {
        (self.length_scale, self.signal_variance, self.noise_jitter)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_inputs() -> (DMatrix<f64>, DMatrix<f64>) {
        // 5 samples, 3 "LEDs"; targets are a smooth function of the inputs.
        let inputs = DMatrix::from_row_slice(
            5,
            3,
            &[
                0.10, 0.20, 0.30, //
                0.15, 0.25, 0.28, //
                0.20, 0.18, 0.35, //
                0.05, 0.30, 0.25, //
                0.12, 0.22, 0.40,
            ],
        );
        let targets = DMatrix::from_row_slice(
            5,
            2,
            &[
                1.0, 2.0, //
                1.2, 1.9, //
                1.5, 2.2, //
                0.8, 2.4, //
                1.1, 2.6,
            ],
        );
        (inputs, targets)
    }

    #[test]
    fn single_point_interpolates() {
        let inputs = DMatrix::from_row_slice(1, 4, &[0.1, 0.2, 0.3, 0.4]);
        let targets = DMatrix::from_row_slice(1, 2, &[2.5, -1.0]);
        let model = GpModel::fit(&inputs, &targets, &HyperGrid::default()).unwrap();
        let (x, y) = model.predict(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        assert!((x - 2.5).abs() < 1e-3);
        assert!((y + 1.0).abs() < 1e-3);
    }

    #[test]
    fn constant_targets_predicted_everywhere() {
        let (inputs, _) = toy_inputs();
        let targets = DMatrix::from_row_slice(5, 2, &[[3.0, -1.5]; 5].concat());
        let model = GpModel::fit(&inputs, &targets, &HyperGrid::default()).unwrap();
        for q in [&[0.1, 0.2, 0.3][..], &[5.0, -2.0, 0.0][..]] {
            let (x, y) = model.predict(q).unwrap();
            assert!((x - 3.0).abs() < 1e-6);
            assert!((y + 1.5).abs() < 1e-6);
        }
    }

    #[test]
    fn training_points_reproduced() {
        let (inputs, targets) = toy_inputs();
        let model = GpModel::fit(&inputs, &targets, &HyperGrid::default()).unwrap();
        for r in 0..5 {
            let q: Vec<f64> = (0..3).map(|c| inputs[(r, c)]).collect();
            let (x, y) = model.predict(&q).unwrap();
            assert!((x - targets[(r, 0)]).abs() < 1e-3, "row {r}: {x}");
            assert!((y - targets[(r, 1)]).abs() < 1e-3, "row {r}: {y}");
        }
    }

    #[test]
    fn far_query_returns_prior_mean() {
        let (inputs, targets) = toy_inputs();
        let model = GpModel::fit(&inputs, &targets, &HyperGrid::default()).unwrap();
        let (x, y) = model.predict(&[1e6, -1e6, 1e6]).unwrap();
        let mx = targets.column(0).sum() / 5.0;
        let my = targets.column(1).sum() / 5.0;
        assert!((x - mx).abs() < 1e-3);
        assert!((y - my).abs() < 1e-3);
    }

    #[test]
    fn chosen_hyperparameters_maximize_lml() {
        let (inputs, targets) = toy_inputs();
        let grid = HyperGrid::default();
        let model = GpModel::fit(&inputs, &targets, &grid).unwrap();
        let best = model.log_marginal_likelihood();
        // Refit on every singleton grid point; none may beat the chosen one.
        for &ls in &grid.length_scales {
            for &sv in &grid.signal_variances {
                for &jit in &grid.noise_jitters {
                    let single = HyperGrid {
                        length_scales: vec![ls],
                        signal_variances: vec![sv],
                        noise_jitters: vec![jit],
                    };
                    if let Ok(m) = GpModel::fit(&inputs, &targets, &single) {
                        assert!(m.log_marginal_likelihood() <= best + 1e-9);
                    }
                }
            }
        }
    }

    #[test]
    fn row_reordering_does_not_change_predictions() {
        let (inputs, targets) = toy_inputs();
        let model_a = GpModel::fit(&inputs, &targets, &HyperGrid::default()).unwrap();
        let perm = [4usize, 2, 0, 3, 1];
        let inputs_b = DMatrix::from_fn(5, 3, |r, c| inputs[(perm[r], c)]);
        let targets_b = DMatrix::from_fn(5, 2, |r, c| targets[(perm[r], c)]);
        let model_b = GpModel::fit(&inputs_b, &targets_b, &HyperGrid::default()).unwrap();
        for q in [&[0.11, 0.21, 0.31][..], &[0.2, 0.2, 0.3][..]] {
            let a = model_a.predict(q).unwrap();
            let b = model_b.predict(q).unwrap();
            assert!((a.0 - b.0).abs() < 1e-9);
            assert!((a.1 - b.1).abs() < 1e-9);
        }
    }

    #[test]
    fn duplicate_training_point_barely_moves_predictions() {
        // In the near-interpolation regime (tiny jitter) a duplicated
        // sample is redundant information and the posterior mean stays put.
        let (inputs, targets) = toy_inputs();
        let single = HyperGrid {
            length_scales: vec![1.0],
            signal_variances: vec![1.0],
            noise_jitters: vec![1e-10],
        };
        let model_a = GpModel::fit(&inputs, &targets, &single).unwrap();
        let mut rows_in: Vec<f64> = inputs.transpose().as_slice().to_vec();
        rows_in.extend_from_slice(&[0.10, 0.20, 0.30]);
        let mut rows_t: Vec<f64> = targets.transpose().as_slice().to_vec();
        rows_t.extend_from_slice(&[1.0, 2.0]);
        let inputs_b = DMatrix::from_row_slice(6, 3, &rows_in);
        let targets_b = DMatrix::from_row_slice(6, 2, &rows_t);
        let model_b = GpModel::fit(&inputs_b, &targets_b, &single).unwrap();
        let q = [0.13, 0.23, 0.33];
        let a = model_a.predict(&q).unwrap();
        let b = model_b.predict(&q).unwrap();
        // Standardization statistics shift slightly with the extra row;
        // allow for that on top of the 1e-6 interpolation bound.
        assert!((a.0 - b.0).abs() < 1e-4, "dx = {:e}", a.0 - b.0);
        assert!((a.1 - b.1).abs() < 1e-4, "dy = {:e}", a.1 - b.1);
    }
}
