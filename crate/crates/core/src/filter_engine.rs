//! Discrete-time pixel filter.
//!
//! Each interval `(t_k, t_{k+1}]` is linearized around the steady state of
//! the interval's end input `u[k+1]` and discretized under a first-order
//! hold, giving the recurrence
//!
//! ```text
//! x[k+1] = A_d[k] x[k] + B_d[k] u[k] + B̃_d[k] u[k+1]
//! y[k]   = C x[k]
//! ```
//!
//! On top of the recurrence this module provides the closed-form transient
//! solution, the sum-normalized zero-state weights used to estimate the
//! blurred output from a finite input window, the differencing-amplifier
//! reset rule and the deterministic importance sampling of input timestamps.

use nalgebra::{Matrix2x4, Matrix4, Vector2, Vector4};

use crate::error::{Error, Result};
use crate::numerics::{mat_exp, Matrix};
use crate::pixel_model::PixelBandwidthParams;

/// Default number of input samples per blurred-output estimate.
pub const DEFAULT_SAMPLE_SIZE: usize = 30;

/// Probability mass kept when truncating the exponential proposal.
pub const TRUNCATION_MASS: f64 = 0.95;

/// Consecutive timestamps closer than this are merged.
pub const MIN_INTERVAL: f64 = 1e-9;

const EQUILIBRIUM_DIRECTION: Vector4<f64> = Vector4::new(0.0, 1.0, 1.0, 1.0);

/// Filter state `[d/dt ln L_p, ln L_p, ln L_sf, ln L_diff]` at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState {
    pub x: Vector4<f64>,
    pub t: f64,
}

impl FilterState {
    /// Steady state on a constant input `u`.
    pub fn steady(u: f64, t: f64) -> Self {
        Self { x: EQUILIBRIUM_DIRECTION * u, t }
    }

    pub fn zero(t: f64) -> Self {
        Self { x: Vector4::zeros(), t }
    }

    pub fn log_sf(&self) -> f64 {
        self.x[2]
    }

    pub fn log_diff(&self) -> f64 {
        self.x[3]
    }

    /// `y = C x`.
    pub fn output(&self) -> Vector2<f64> {
        output_matrix() * self.x
    }
}

fn output_matrix() -> Matrix2x4<f64> {
    Matrix2x4::new(0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0)
}

/// One discretized interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscreteStep {
    pub a_d: Matrix4<f64>,
    pub b_d: Vector4<f64>,
    pub b_tilde_d: Vector4<f64>,
    pub dt: f64,
}

impl DiscreteStep {
    pub fn a_d_matrix(&self) -> Matrix {
        Matrix::from_column_slice(4, 4, self.a_d.as_slice())
    }

    /// Residual of `A_d e + B_d + B̃_d = e` with `e = (0, 1, 1, 1)`.
    pub fn equilibrium_residual(&self) -> f64 {
        (self.a_d * EQUILIBRIUM_DIRECTION + self.b_d + self.b_tilde_d - EQUILIBRIUM_DIRECTION).amax()
    }
}

/// First-order-hold discretization over `dt`, linearized at `u_next`.
///
/// Exponentiates the 6x6 block matrix
/// `[[A dt, B dt, 0], [0, 0, 1], [0, 0, 0]]` and reads `Φ`, `Γ1`, `Γ2` from
/// its first four rows.
pub fn discretize(params: &PixelBandwidthParams, u_next: f64, dt: f64) -> Result<DiscreteStep> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::invalid(format!("discretize: dt must be positive, got {dt}")));
    }
    if !u_next.is_finite() {
        return Err(Error::invalid("discretize: non-finite input"));
    }
    let model = params.continuous_matrices(u_next);
    let mut block = Matrix::zeros(6, 6);
    block.view_mut((0, 0), (4, 4)).copy_from(&(&model.a * dt));
    block.view_mut((0, 4), (4, 1)).copy_from(&(&model.b * dt));
    block[(4, 5)] = 1.0;
    let e = mat_exp(&block)?;

    let a_d = Matrix4::from_fn(|r, c| e[(r, c)]);
    let gamma1 = Vector4::from_fn(|r, _| e[(r, 4)]);
    let gamma2 = Vector4::from_fn(|r, _| e[(r, 5)]);
    Ok(DiscreteStep { a_d, b_d: gamma1 - gamma2, b_tilde_d: gamma2, dt })
}

/// Advances `state` across one interval with inputs `u_k` at its start and
/// `u_k1` at its end.
///
/// Evaluated as a deviation from the steady state of `u_k1`, which is the
/// same recurrence but keeps a constant input exactly at equilibrium in
/// floating point.
pub fn step(state: &FilterState, u_k: f64, u_k1: f64, d: &DiscreteStep) -> FilterState {
    let eq = EQUILIBRIUM_DIRECTION * u_k1;
    let x = eq + d.a_d * (state.x - eq) + d.b_d * (u_k - u_k1);
    FilterState { x, t: state.t + d.dt }
}

/// Timestamped log-radiance samples with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct InputSequence {
    t: Vec<f64>,
    u: Vec<f64>,
}

impl InputSequence {
    pub fn new(t: Vec<f64>, u: Vec<f64>) -> Result<Self> {
        if t.len() != u.len() {
            return Err(Error::invalid("timestamps and values differ in length"));
        }
        if t.iter().chain(&u).any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite timestamp or value"));
        }
        if t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("timestamps must be strictly increasing"));
        }
        Ok(Self { t, u })
    }

    /// Builds a sequence from nondecreasing timestamps, merging samples
    /// closer than [`MIN_INTERVAL`] into the later one.
    pub fn merging(t: &[f64], u: &[f64]) -> Result<Self> {
        if t.len() != u.len() {
            return Err(Error::invalid("timestamps and values differ in length"));
        }
        let mut ts: Vec<f64> = Vec::with_capacity(t.len());
        let mut us: Vec<f64> = Vec::with_capacity(u.len());
        for (&ti, &ui) in t.iter().zip(u) {
            match ts.last() {
                Some(&last) if ti < last => {
                    return Err(Error::invalid("timestamps must be nondecreasing"));
                }
                Some(&last) if ti - last < MIN_INTERVAL => {
                    *ts.last_mut().unwrap() = ti;
                    *us.last_mut().unwrap() = ui;
                }
                _ => {
                    ts.push(ti);
                    us.push(ui);
                }
            }
        }
        Self::new(ts, us)
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn timestamps(&self) -> &[f64] {
        &self.t
    }

    pub fn values(&self) -> &[f64] {
        &self.u
    }

    /// Discretized steps for every interval.
    pub fn discretize(&self, params: &PixelBandwidthParams) -> Result<Vec<DiscreteStep>> {
        self.t
            .windows(2)
            .zip(&self.u[1..])
            .map(|(w, &u_next)| discretize(params, u_next, w[1] - w[0]))
            .collect()
    }
}

/// Outputs `y[k]` for every sample of `inputs`, starting from `x0`, evaluated
/// through state transition matrices rather than by stepping.
pub fn transient_solution(
    x0: &FilterState,
    inputs: &InputSequence,
    params: &PixelBandwidthParams,
) -> Result<Vec<Vector2<f64>>> {
    if inputs.is_empty() {
        return Err(Error::invalid("transient_solution: empty input"));
    }
    let steps = inputs.discretize(params)?;
    let u = inputs.values();
    let c = output_matrix();
    let mut out = Vec::with_capacity(inputs.len());
    out.push(c * x0.x);
    for k in 1..inputs.len() {
        // phi holds φ(i+1, k) while walking i downwards.
        let mut phi = Matrix4::identity();
        let mut acc = Vector4::zeros();
        for i in (0..k).rev() {
            let d = &steps[i];
            acc += phi * (d.b_d * u[i] + d.b_tilde_d * u[i + 1]);
            phi *= d.a_d;
        }
        out.push(c * (phi * x0.x + acc));
    }
    Ok(out)
}

/// Sum-normalized zero-state weights aligned with an [`InputSequence`].
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSequence {
    pub timestamps: Vec<f64>,
    /// Per-sample `(ln L_sf, ln L_diff)` weights; each channel sums to one.
    pub weights: Vec<[f64; 2]>,
    /// Channel sums of the raw weights before normalization.
    pub raw_sums: [f64; 2],
}

/// Raw zero-state weights `w[i]` such that the zero-initial-state output at
/// the last sample is `Σ w[i] u[i]`.
pub fn raw_zero_state_weights(
    inputs: &InputSequence,
    params: &PixelBandwidthParams,
) -> Result<Vec<[f64; 2]>> {
    if inputs.len() < 2 {
        return Err(Error::invalid("zero-state weights need at least two samples"));
    }
    let steps = inputs.discretize(params)?;
    let k = inputs.len() - 1;
    let c = output_matrix();
    let mut w = vec![[0.0; 2]; inputs.len()];

    // Walk backwards: phi_next = φ(i+1, k), phi_here = φ(i, k).
    let mut phi_next = Matrix4::identity();
    let last = c * steps[k - 1].b_tilde_d;
    w[k] = [last[0], last[1]];
    for i in (0..k).rev() {
        let phi_here = phi_next * steps[i].a_d;
        let mut v = phi_next * steps[i].b_d;
        if i > 0 {
            v += phi_here * steps[i - 1].b_tilde_d;
        }
        let y = c * v;
        w[i] = [y[0], y[1]];
        phi_next = phi_here;
    }
    Ok(w)
}

pub fn zero_state_weights(inputs: &InputSequence, params: &PixelBandwidthParams) -> Result<WeightSequence> {
    let raw = raw_zero_state_weights(inputs, params)?;
    let sums = raw.iter().fold([0.0; 2], |s, w| [s[0] + w[0], s[1] + w[1]]);
    if !(sums[0] > 0.0 && sums[1] > 0.0) {
        return Err(Error::invalid("zero-state weights have non-positive sum"));
    }
    let weights = raw.iter().map(|w| [w[0] / sums[0], w[1] / sums[1]]).collect();
    Ok(WeightSequence { timestamps: inputs.timestamps().to_vec(), weights, raw_sums: sums })
}

/// Weighted estimate `(ln L_sf, ln L_diff) ≈ Σ ŵ[i] u[i]`.
pub fn blurred_log_radiance(weights: &WeightSequence, inputs: &InputSequence) -> Result<(f64, f64)> {
    if weights.weights.len() != inputs.len() {
        return Err(Error::invalid(format!(
            "{} weights for {} inputs",
            weights.weights.len(),
            inputs.len()
        )));
    }
    Ok(weights
        .weights
        .iter()
        .zip(inputs.values())
        .fold((0.0, 0.0), |(a, b), (w, u)| (a + w[0] * u, b + w[1] * u)))
}

/// Differencing-amplifier output with the reset folded in:
/// `ln L_blur(t) = ln L_diff(t) + ln L_delta(t_ref) e^{-ω_c,diff (t - t_ref)}`.
pub fn apply_reset(log_diff: f64, log_delta_ref: f64, omega_c_diff: f64, elapsed: f64) -> Result<f64> {
    if !(elapsed >= 0.0) {
        return Err(Error::invalid(format!("apply_reset: negative elapsed time {elapsed}")));
    }
    Ok(log_diff + log_delta_ref * (-omega_c_diff * elapsed).exp())
}

/// Largest look-back of the truncated exponential proposal, `ln(20) / ω`.
pub fn max_lookback(omega_min: f64) -> f64 {
    -(1.0 - TRUNCATION_MASS).ln() / omega_min
}

/// Deterministic importance-sampled input timestamps ending at `t_k`.
///
/// The past offsets are the inverse CDF of the exponential proposal with
/// rate `omega_min`, truncated to 95% mass, at the evenly spaced quantiles
/// `i / (n - 1)` for `i = 1..n-1`. `t_k` itself is the last sample.
pub fn sample_input_timestamps(t_k: f64, n: usize, omega_min: f64) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(Error::invalid("sample_input_timestamps: n must be >= 2"));
    }
    if !(omega_min > 0.0) {
        return Err(Error::invalid("sample_input_timestamps: omega_min must be positive"));
    }
    let m = (n - 1) as f64;
    let mut ts: Vec<f64> = (1..n)
        .rev()
        .map(|i| {
            let p = i as f64 / m;
            t_k + (1.0 - TRUNCATION_MASS * p).ln() / omega_min
        })
        .collect();
    ts.push(t_k);
    Ok(ts)
}

/// Estimates the blurred `(ln L_sf, ln L_diff)` at `t_k` from an input
/// sampler, using `n` importance-sampled inputs and sum-normalized weights.
/// Samples requested before `t_start` take the input value at `t_start`.
pub fn estimate_blurred_output<F>(
    params: &PixelBandwidthParams,
    t_k: f64,
    t_start: f64,
    n: usize,
    sampler: F,
) -> Result<(f64, f64)>
where
    F: Fn(f64) -> f64,
{
    let ts = sample_input_timestamps(t_k, n, params.omega_c_dom_min())?;
    let us: Vec<f64> = ts.iter().map(|&t| sampler(t.max(t_start))).collect();
    let inputs = InputSequence::merging(&ts, &us)?;
    if inputs.len() < 2 {
        return Ok((inputs.values()[0], inputs.values()[0]));
    }
    let w = zero_state_weights(&inputs, params)?;
    blurred_log_radiance(&w, &inputs)
}
