//! Adafactor with factored second moments.
//!
//! Matrices keep per-row and per-column running means of squared gradients;
//! vectors (one row or one column) keep a full accumulator. Steps use a
//! constant external learning rate scaled by the parameter RMS, with update
//! clipping. No relative-step or warmup schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Mat, Real};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdafactorConfig {
    /// Added to squared gradients.
    pub eps1: f64,
    /// Floor on the parameter RMS used to scale the learning rate.
    pub eps2: f64,
    pub clip_threshold: f64,
    /// Second-moment decay is `1 - step^decay_rate`.
    pub decay_rate: f64,
    pub scale_parameter: bool,
    /// Optional first-moment smoothing (off by default).
    pub beta1: Option<f64>,
}

impl Default for AdafactorConfig {
    fn default() -> Self {
        Self { eps1: 1e-30, eps2: 1e-3, clip_threshold: 1.0, decay_rate: -0.8, scale_parameter: true, beta1: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Moments<F> {
    Factored { row: Vec<F>, col: Vec<F> },
    Full(Mat<F>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<F> {
    step: u64,
    moments: Moments<F>,
    momentum: Option<Mat<F>>,
}

impl<F: Real> OptimizerState<F> {
    pub fn new(rows: usize, cols: usize) -> Self {
        let moments = if rows == 1 || cols == 1 {
            Moments::Full(Mat::zeros(rows, cols))
        } else {
            Moments::Factored { row: vec![F::zero(); rows], col: vec![F::zero(); cols] }
        };
        Self { step: 0, moments, momentum: None }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn is_factored(&self) -> bool {
        matches!(self.moments, Moments::Factored { .. })
    }

    /// All accumulator entries (row then column, or the full matrix).
    pub fn accumulators(&self) -> Vec<F> {
        match &self.moments {
            Moments::Factored { row, col } => row.iter().chain(col).copied().collect(),
            Moments::Full(v) => v.data().to_vec(),
        }
    }
}

fn rms<F: Real>(xs: &[F]) -> F {
    if xs.is_empty() {
        return F::zero();
    }
    let s: F = xs.iter().map(|&x| x * x).sum();
    (s / F::from_usize(xs.len()).unwrap()).sqrt()
}

/// One Adafactor update of `param` in place.
pub fn adafactor_step<F: Real>(
    param: &mut Mat<F>,
    grad: &Mat<F>,
    state: &mut OptimizerState<F>,
    lr: f64,
    cfg: &AdafactorConfig,
) -> Result<()> {
    assert_eq!(param.shape(), grad.shape(), "param/grad shape mismatch");
    if !grad.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    let (rows, cols) = param.shape();
    state.step += 1;
    let beta2 = F::lit(1.0 - (state.step as f64).powf(cfg.decay_rate));
    let one_m = F::one() - beta2;
    let eps1 = F::lit(cfg.eps1);
    let mut lr_t = F::lit(lr);
    if cfg.scale_parameter {
        lr_t *= F::lit(cfg.eps2).max(rms(param.data()));
    }

    let mut update = Mat::zeros(rows, cols);
    match &mut state.moments {
        Moments::Factored { row, col } => {
            let nr = F::from_usize(rows).unwrap();
            let nc = F::from_usize(cols).unwrap();
            for i in 0..rows {
                let m: F = grad.row(i).iter().map(|&g| g * g + eps1).sum::<F>() / nc;
                row[i] = beta2 * row[i] + one_m * m;
            }
            for j in 0..cols {
                let m: F = (0..rows).map(|i| grad.get(i, j)).map(|g| g * g + eps1).sum::<F>() / nr;
                col[j] = beta2 * col[j] + one_m * m;
            }
            let row_mean: F = row.iter().copied().sum::<F>() / nr;
            for i in 0..rows {
                let r = (row[i] / row_mean).sqrt().recip();
                for j in 0..cols {
                    let c = col[j].sqrt().recip();
                    update.set(i, j, r * c * grad.get(i, j));
                }
            }
        }
        Moments::Full(v) => {
            for ((vv, &g), u) in v.data_mut().iter_mut().zip(grad.data()).zip(update.data_mut()) {
                *vv = beta2 * *vv + one_m * (g * g + eps1);
                *u = vv.sqrt().recip() * g;
            }
        }
    }
    let denom = F::one().max(rms(update.data()) / F::lit(cfg.clip_threshold));
    update.scale(lr_t / denom);
    if let Some(b1) = cfg.beta1 {
        let b1 = F::lit(b1);
        let m = state.momentum.get_or_insert_with(|| Mat::zeros(rows, cols));
        for (mm, &u) in m.data_mut().iter_mut().zip(update.data()) {
            *mm = b1 * *mm + (F::one() - b1) * u;
        }
        update = m.clone();
    }
    for (p, &u) in param.data_mut().iter_mut().zip(update.data()) {
        *p -= u;
    }
    Ok(())
}

/// Plain gradient descent, `param -= lr * grad`.
pub fn sgd_step<F: Real>(param: &mut Mat<F>, grad: &Mat<F>, lr: f64) -> Result<()> {
    if !grad.is_finite() {
        return Err(Error::NonFinite("gradient".into()));
    }
    let lr = F::lit(lr);
    for (p, &g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p -= lr * g;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent scalar Adafactor: one parameter, factored bookkeeping
    /// collapses to r = 1 and c = v.
    fn scalar_oracle(x: f64, gs: &[f64], lr: f64) -> f64 {
        let (eps1, eps2, clip) = (1e-30, 1e-3, 1.0);
        let mut x = x;
        let mut v = 0.0;
        for (t, &g) in gs.iter().enumerate() {
            let step = (t + 1) as f64;
            let beta = 1.0 - step.powf(-0.8);
            v = beta * v + (1.0 - beta) * (g * g + eps1);
            let mut u = g / v.sqrt();
            u /= f64::max(1.0, u.abs() / clip);
            x -= lr * f64::max(eps2, x.abs()) * u;
        }
        x
    }

    #[test]
    fn scalar_matches_oracle() {
        let mut p = Mat::from_vec(1, 1, vec![0.3f64]);
        let mut st = OptimizerState::new(1, 1);
        let cfg = AdafactorConfig::default();
        adafactor_step(&mut p, &Mat::from_vec(1, 1, vec![0.1]), &mut st, 0.5, &cfg).unwrap();
        assert!((p.get(0, 0) - scalar_oracle(0.3, &[0.1], 0.5)).abs() < 1e-10);
        // a few more steps with varying gradients
        let gs = [0.1, -0.4, 0.02, 0.3];
        let mut p = Mat::from_vec(1, 1, vec![0.3f64]);
        let mut st = OptimizerState::new(1, 1);
        for &g in &gs {
            adafactor_step(&mut p, &Mat::from_vec(1, 1, vec![g]), &mut st, 0.5, &cfg).unwrap();
        }
        assert!((p.get(0, 0) - scalar_oracle(0.3, &gs, 0.5)).abs() < 1e-10);
    }

    #[test]
    fn zero_gradient_only_decays_accumulators() {
        let cfg = AdafactorConfig::default();
        let mut p = Mat::from_fn(3, 4, |i, j| (i as f64 - j as f64) * 0.1);
        let mut st = OptimizerState::new(3, 4);
        let g = Mat::from_fn(3, 4, |i, j| ((i * 4 + j) as f64).sin());
        adafactor_step(&mut p, &g, &mut st, 0.5, &cfg).unwrap();
        let before_acc = st.accumulators();
        let snapshot = p.clone();
        adafactor_step(&mut p, &Mat::zeros(3, 4), &mut st, 0.5, &cfg).unwrap();
        assert_eq!(p, snapshot);
        for (a, b) in st.accumulators().iter().zip(&before_acc) {
            assert!(a < b && *a >= 0.0);
        }
    }

    #[test]
    fn deterministic_and_factored_for_matrices() {
        let cfg = AdafactorConfig::default();
        let g = Mat::from_fn(4, 3, |i, j| ((i + 3 * j) as f32).cos());
        let run = || {
            let mut p = Mat::from_fn(4, 3, |i, j| (i * j) as f32 * 0.01);
            let mut st = OptimizerState::new(4, 3);
            adafactor_step(&mut p, &g, &mut st, 0.5, &cfg).unwrap();
            (p, st)
        };
        let (a, sa) = run();
        let (b, sb) = run();
        assert_eq!(a, b);
        assert_eq!(sa, sb);
        assert!(sa.is_factored());
        assert!(!OptimizerState::<f32>::new(1, 7).is_factored());
    }

    #[test]
    fn update_is_clipped() {
        // Fresh state: every factored update element is +-1 before clipping,
        // so the step per element is lr * max(eps2, rms(param)).
        let cfg = AdafactorConfig::default();
        let mut p = Mat::from_vec(2, 2, vec![1.0f64, -1.0, 1.0, -1.0]);
        let mut st = OptimizerState::new(2, 2);
        let g = Mat::from_vec(2, 2, vec![5.0, 5.0, 5.0, 5.0]);
        adafactor_step(&mut p, &g, &mut st, 0.1, &cfg).unwrap();
        for (x, orig) in p.data().iter().zip([1.0, -1.0, 1.0, -1.0]) {
            assert!(((orig - x) - 0.1).abs() < 1e-9);
        }
    }

    #[test]
    fn non_finite_rejected() {
        let mut p = Mat::from_vec(1, 2, vec![0.0f32, 0.0]);
        let mut st = OptimizerState::new(1, 2);
        let g = Mat::from_vec(1, 2, vec![f32::NAN, 0.0]);
        assert!(matches!(
            adafactor_step(&mut p, &g, &mut st, 0.5, &AdafactorConfig::default()),
            Err(Error::NonFinite(_))
        ));
    }
}
