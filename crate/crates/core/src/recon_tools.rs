//! Losses and colour-correction fits used when reconstructing radiance from
//! events.

use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_core::{EventCameraConfig, Polarity};
use crate::numerics::{lm_fit, LeastSquaresProblem, LmReport, Matrix, TrustRegionConfig};

/// Minimum sub-interval length relative to the event interval.
pub const MIN_RELATIVE_LENGTH: f64 = 1e-9;

/// Iteration cap for [`fit_translated_gamma`].
pub const CORRECTION_MAX_ITERATIONS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda_diff: f64,
    pub lambda_tv: f64,
    pub lambda_grad: f64,
    pub huber_delta: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { lambda_diff: 1.0, lambda_tv: 0.1, lambda_grad: 0.0, huber_delta: 1.0 }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |w: f64| w.is_finite() && w >= 0.0;
        if !(ok(self.lambda_diff) && ok(self.lambda_tv) && ok(self.lambda_grad)) {
            return Err(Error::invalid("loss weights must be finite and non-negative"));
        }
        if !(self.huber_delta > 0.0 && self.huber_delta.is_finite()) {
            return Err(Error::invalid("huber_delta must be positive"));
        }
        Ok(())
    }
}

/// `½(C₋₁ + C₊₁)`, the scale used to normalize the losses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanThreshold(f64);

impl MeanThreshold {
    pub fn new(c_neg: f64, c_pos: f64) -> Result<Self> {
        Self::from_value(0.5 * (c_neg + c_pos))
    }

    pub fn from_value(c_bar: f64) -> Result<Self> {
        if !(c_bar > 0.0 && c_bar.is_finite()) {
            return Err(Error::invalid(format!("mean threshold must be positive, got {c_bar}")));
        }
        Ok(Self(c_bar))
    }

    pub fn from_camera(cfg: &EventCameraConfig) -> Result<Self> {
        Self::new(cfg.c_neg, cfg.c_pos)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

fn check_c_bar(c_bar: f64) -> Result<()> {
    MeanThreshold::from_value(c_bar).map(|_| ())
}

/// Huber loss on the threshold-normalized residual
/// `ρ = (Δ_pred − p·C_p) / C̄`: `½ρ²` for `|ρ| ≤ δ`, else `δ(|ρ| − ½δ)`.
pub fn loss_diff_huber(delta_pred: f64, polarity: Polarity, c_p: f64, c_bar: f64, delta: f64) -> Result<f64> {
    check_c_bar(c_bar)?;
    if !(delta > 0.0) {
        return Err(Error::invalid("huber delta must be positive"));
    }
    let rho = ((delta_pred - polarity.sign() * c_p) / c_bar).abs();
    Ok(if rho <= delta { 0.5 * rho * rho } else { delta * (rho - 0.5 * delta) })
}

/// Absolute percentage error of a predicted log-radiance slope against
/// `p·C_p / (t_curr − t_ref)`.
pub fn loss_grad(pred_grad: f64, polarity: Polarity, c_p: f64, t_curr: f64, t_ref: f64) -> Result<f64> {
    if !(t_curr > t_ref) {
        return Err(Error::invalid("loss_grad needs t_curr > t_ref"));
    }
    if !(c_p > 0.0) {
        return Err(Error::invalid("loss_grad needs a positive threshold"));
    }
    let target = polarity.sign() * c_p / (t_curr - t_ref);
    Ok(((pred_grad - target) / target).abs())
}

/// `|end − start| / C̄`.
pub fn loss_tv(start: f64, end: f64, c_bar: f64) -> Result<f64> {
    check_c_bar(c_bar)?;
    Ok((end - start).abs() / c_bar)
}

/// Random `(t_start, t_end]` inside `(t_ref, t_curr]`.
///
/// The length is triangular on `[0, D)` with mode 0 (inverse CDF
/// `D(1 − √(1 − U))`), at least `1e-9·D`, and the start is uniform over
/// the remaining slack.
pub fn sample_tv_subinterval<R: Rng + ?Sized>(t_ref: f64, t_curr: f64, rng: &mut R) -> Result<(f64, f64)> {
    if !(t_curr > t_ref) || !t_ref.is_finite() || !t_curr.is_finite() {
        return Err(Error::invalid("sample_tv_subinterval needs t_curr > t_ref"));
    }
    let span = t_curr - t_ref;
    let u: f64 = rng.random();
    let len = (span * (1.0 - (1.0 - u).sqrt())).max(MIN_RELATIVE_LENGTH * span);
    let slack = span - len;
    let v: f64 = rng.random();
    let t_start = t_ref + v * slack;
    let t_end = (t_start + len).min(t_curr);
    Ok((t_start, t_end))
}

/// Loss terms of one event.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct EventLoss {
    pub diff: f64,
    pub tv: f64,
    pub grad: f64,
}

/// Batch mean of `λ_diff·ℓ_diff + λ_tv·ℓ_tv + λ_grad·ℓ_grad`.
pub fn total_loss(batch: &[EventLoss], cfg: &LossConfig) -> Result<f64> {
    cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::invalid("total_loss over an empty batch"));
    }
    let sum: f64 = batch
        .iter()
        .map(|l| cfg.lambda_diff * l.diff + cfg.lambda_tv * l.tv + cfg.lambda_grad * l.grad)
        .sum();
    Ok(sum / batch.len() as f64)
}

fn check_channels(pred: &[Vec<f64>], reference: &[Vec<f64>], min_len: usize) -> Result<usize> {
    if pred.is_empty() || pred.len() != reference.len() {
        return Err(Error::invalid("prediction and reference need the same non-zero channel count"));
    }
    let n = pred[0].len();
    for (p, r) in pred.iter().zip(reference) {
        if p.len() != n || r.len() != n {
            return Err(Error::invalid("all channels need the same sample count"));
        }
    }
    if n < min_len {
        return Err(Error::invalid(format!("need at least {min_len} samples per channel, got {n}")));
    }
    if pred.iter().chain(reference).flatten().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite sample"));
    }
    Ok(n)
}

/// Least-squares fit of `ref ≈ a·pred + b_c` in the log domain with a
/// shared exponent `a` and per-channel offsets `b_c`. Inputs are indexed
/// `[channel][sample]`.
pub fn fit_gamma_correction(pred_log: &[Vec<f64>], ref_log: &[Vec<f64>]) -> Result<(f64, Vec<f64>)> {
    let n = check_channels(pred_log, ref_log, 2)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut scale) = (0.0, 0.0, 0.0);
    let mut means = Vec::with_capacity(pred_log.len());
    for (x, y) in pred_log.iter().zip(ref_log) {
        let (mx, my) = (mean(x), mean(y));
        for (xi, yi) in x.iter().zip(y) {
            sxy += (xi - mx) * (yi - my);
            sxx += (xi - mx) * (xi - mx);
            scale += xi * xi;
        }
        means.push((mx, my));
    }
    if !(sxx > 1e-14 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::SingularFit("prediction has no variance within channels".into()));
    }
    let a = sxy / sxx;
    let b = means.iter().map(|(mx, my)| my - a * mx).collect();
    Ok((a, b))
}

/// `b ⊙ L̂^a − c` with shared exponent `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorrectionParams {
    pub a: f64,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

impl CorrectionParams {
    pub fn identity(channels: usize) -> Self {
        Self { a: 1.0, b: vec![1.0; channels], c: vec![0.0; channels] }
    }

    pub fn channels(&self) -> usize {
        self.b.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.b.len() != self.c.len() || self.b.is_empty() {
            return Err(Error::invalid("b and c need the same non-zero length"));
        }
        if !self.a.is_finite() || self.b.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(Error::invalid("a must be finite and b positive"));
        }
        if self.c.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("c must be finite"));
        }
        Ok(())
    }

    fn to_vec(&self) -> Vec<f64> {
        let mut v = vec![self.a];
        v.extend(&self.b);
        v.extend(&self.c);
        v
    }

    fn from_slice(p: &[f64], channels: usize) -> Self {
        Self { a: p[0], b: p[1..1 + channels].to_vec(), c: p[1 + channels..1 + 2 * channels].to_vec() }
    }
}

/// `g·(b_c · L̂^a − c_c)` for every channel and sample; `gain` has one entry
/// per sample.
pub fn apply_translated_gamma(pred: &[Vec<f64>], params: &CorrectionParams, gain: &[f64]) -> Vec<Vec<f64>> {
    pred.iter()
        .enumerate()
        .map(|(ch, xs)| {
            xs.iter()
                .zip(gain)
                .map(|(x, g)| g * (params.b[ch] * x.powf(params.a) - params.c[ch]))
                .collect()
        })
        .collect()
}

struct TranslatedGamma<'a> {
    pred: &'a [Vec<f64>],
    reference: &'a [Vec<f64>],
    gain: &'a [f64],
}

impl TranslatedGamma<'_> {
    fn channels(&self) -> usize {
        self.pred.len()
    }

    fn samples(&self) -> usize {
        self.gain.len()
    }
}

impl LeastSquaresProblem for TranslatedGamma<'_> {
    fn residuals(&self, p: &[f64]) -> DVector<f64> {
        let (nc, ns) = (self.channels(), self.samples());
        let params = CorrectionParams::from_slice(p, nc);
        DVector::from_iterator(
            nc * ns,
            (0..nc).flat_map(|ch| {
                let params = &params;
                (0..ns).map(move |i| {
                    self.gain[i] * (params.b[ch] * self.pred[ch][i].powf(params.a) - params.c[ch])
                        - self.reference[ch][i]
                })
            }),
        )
    }

    fn jacobian(&self, p: &[f64]) -> Option<Matrix> {
        let (nc, ns) = (self.channels(), self.samples());
        let params = CorrectionParams::from_slice(p, nc);
        let mut j = Matrix::zeros(nc * ns, 1 + 2 * nc);
        for ch in 0..nc {
            for i in 0..ns {
                let row = ch * ns + i;
                let x = self.pred[ch][i];
                let g = self.gain[i];
                let xa = x.powf(params.a);
                j[(row, 0)] = g * params.b[ch] * xa * x.ln();
                j[(row, 1 + ch)] = g * xa;
                j[(row, 1 + nc + ch)] = -g;
            }
        }
        Some(j)
    }
}

/// Result of [`fit_translated_gamma`].
#[derive(Debug, Clone)]
pub struct CorrectionFit {
    pub params: CorrectionParams,
    pub report: LmReport,
}

/// Fits `g_i·(b ⊙ L̂^a − c) ≈ ref` by Levenberg–Marquardt, starting from
/// the log-domain gamma fit with `c = 0`. Inputs are indexed
/// `[channel][sample]`; `gain` holds the gain-exposure product of the
/// reference image each sample came from.
pub fn fit_translated_gamma(pred: &[Vec<f64>], reference: &[Vec<f64>], gain: &[f64]) -> Result<CorrectionFit> {
    let n = check_channels(pred, reference, 2)?;
    if gain.len() != n {
        return Err(Error::invalid(format!("need {n} gain values, got {}", gain.len())));
    }
    if gain.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
        return Err(Error::invalid("gain-exposure values must be positive"));
    }
    if pred.iter().flatten().any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("predictions must be positive"));
    }

    let init = initial_correction(pred, reference, gain);
    let problem = TranslatedGamma { pred, reference, gain };
    let cfg = TrustRegionConfig { max_iterations: CORRECTION_MAX_ITERATIONS, ..Default::default() };
    let report = lm_fit(&problem, &init.to_vec(), &cfg)?;
    let params = CorrectionParams::from_slice(&report.params, pred.len());
    Ok(CorrectionFit { params, report })
}

/// Gamma fit of `log(ref / g)` on `log(pred)` over samples with positive
/// references. Falls back to the identity when that fit is not possible.
fn initial_correction(pred: &[Vec<f64>], reference: &[Vec<f64>], gain: &[f64]) -> CorrectionParams {
    let nc = pred.len();
    let mut xs = vec![Vec::new(); nc];
    let mut ys = vec![Vec::new(); nc];
    let keep: Vec<usize> = (0..gain.len()).filter(|&i| (0..nc).all(|ch| reference[ch][i] > 0.0)).collect();
    for ch in 0..nc {
        for &i in &keep {
            xs[ch].push(pred[ch][i].ln());
            ys[ch].push((reference[ch][i] / gain[i]).ln());
        }
    }
    match fit_gamma_correction(&xs, &ys) {
        Ok((a, b_log)) if a.is_finite() => {
            CorrectionParams { a, b: b_log.iter().map(|b| b.exp()).collect(), c: vec![0.0; nc] }
        }
        _ => CorrectionParams::identity(nc),
    }
}
