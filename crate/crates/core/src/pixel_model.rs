//! Continuous-time pixel bandwidth model.
//!
//! The pixel is a unity-gain 4th-order low-pass filter acting on effective
//! log-radiance `u = ln(L_sig + L_dark)`. Its state is
//! `[d/dt ln L_p, ln L_p, ln L_sf, ln L_diff]`: a radiance-dependent
//! 2nd-order photoreceptor stage followed by two fixed 1st-order stages
//! (source follower and differencing amplifier).

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Matrix;

/// Smallest effective radiance ever passed to a logarithm.
pub const RADIANCE_FLOOR: f64 = 1e-3;

/// Lumped parameters of the pixel bandwidth model.
///
/// `c_in` and `c_mil` are the photoreceptor input-node and Miller time
/// constants multiplied by effective radiance, so `tau_in(u) = c_in / e^u`.
/// The individual capacitances, thermal voltage and photodiode gain are not
/// separately identifiable and are not represented.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PixelBandwidthParams {
    pub amp_gain: f64,
    pub loop_gain: f64,
    /// Output-node time constant of the photoreceptor, seconds.
    pub tau_out: f64,
    pub c_in: f64,
    pub c_mil: f64,
    /// Source-follower cutoff, rad/s.
    pub omega_c_sf: f64,
    /// Differencing-amplifier cutoff, rad/s.
    pub omega_c_diff: f64,
    /// Black level in radiance units.
    pub l_dark: f64,
}

impl Default for PixelBandwidthParams {
    /// Placeholder parameter set with DVS128-like trends.
    ///
    /// Calibrated so that, with radiance units where an illuminance scale of
    /// 1000 stands for office lighting, scene intensities spanning 0.02..1
    /// give a bandwidth of roughly 50..1900 Hz, saturating near 4.5 kHz in
    /// bright light and flooring near 0.25 Hz in the dark. These are not
    /// measured sensor values.
    fn default() -> Self {
        Self {
            amp_gain: 100.0,
            loop_gain: 10.0,
            tau_out: 2.9e-4,
            c_in: 0.033,
            c_mil: 0.0066,
            omega_c_sf: 6.0e4,
            omega_c_diff: 1.2e5,
            l_dark: 0.1,
        }
    }
}

impl PixelBandwidthParams {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("amp_gain", self.amp_gain),
            ("loop_gain", self.loop_gain),
            ("tau_out", self.tau_out),
            ("c_in", self.c_in),
            ("c_mil", self.c_mil),
            ("omega_c_sf", self.omega_c_sf),
            ("omega_c_diff", self.omega_c_diff),
            ("l_dark", self.l_dark),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!("{name} must be finite and positive, got {v}")));
            }
        }
        if self.omega_c_diff <= self.omega_c_sf {
            return Err(Error::invalid("omega_c_diff must exceed omega_c_sf"));
        }
        if self.c_in <= RADIANCE_FLOOR {
            return Err(Error::invalid(format!(
                "c_in must exceed the radiance floor {RADIANCE_FLOOR}"
            )));
        }
        Ok(())
    }

    /// Input-node time constant at log-radiance `u`.
    pub fn tau_in(&self, u: f64) -> f64 {
        self.c_in * (-u).exp()
    }

    /// Miller-capacitance time constant at log-radiance `u`.
    pub fn tau_mil(&self, u: f64) -> f64 {
        self.c_mil * (-u).exp()
    }

    pub fn damping_ratio(&self, u: f64) -> f64 {
        let (t_in, t_mil) = (self.tau_in(u), self.tau_mil(u));
        (self.tau_out + t_in + (self.amp_gain + 1.0) * t_mil)
            / (2.0 * (self.tau_out * (t_in + t_mil) * (self.loop_gain + 1.0)).sqrt())
    }

    pub fn natural_frequency(&self, u: f64) -> f64 {
        ((self.loop_gain + 1.0) / (self.tau_out * (self.tau_in(u) + self.tau_mil(u)))).sqrt()
    }

    /// Cutoff of the low-light dominant-pole approximation, rad/s.
    /// Proportional to effective radiance.
    pub fn dominant_cutoff(&self, u: f64) -> f64 {
        (self.loop_gain + 1.0) / (self.tau_in(u) + (self.amp_gain + 1.0) * self.tau_mil(u))
    }

    /// Dominant cutoff in complete darkness (`L = L_dark`).
    pub fn omega_c_dom_min(&self) -> f64 {
        self.dominant_cutoff(self.l_dark.ln())
    }

    /// The state-space matrices `(A(u), B(u), C)`.
    pub fn continuous_matrices(&self, u: f64) -> ContinuousModel {
        let zeta = self.damping_ratio(u);
        let wn = self.natural_frequency(u);
        let (sf, diff) = (self.omega_c_sf, self.omega_c_diff);
        #[rustfmt::skip]
        let a = Matrix::from_row_slice(4, 4, &[
            -2.0 * zeta * wn, -wn * wn, 0.0,  0.0,
            1.0,              0.0,      0.0,  0.0,
            0.0,              sf,       -sf,  0.0,
            0.0,              0.0,      diff, -diff,
        ]);
        let b = Matrix::from_column_slice(4, 1, &[wn * wn, 0.0, 0.0, 0.0]);
        ContinuousModel { a, b, c: output_matrix() }
    }

    /// Log-radiance of signal radiance `l_sig` plus the black level, floored.
    pub fn effective_log_radiance(&self, l_sig: f64) -> f64 {
        (l_sig.max(0.0) + self.l_dark).max(RADIANCE_FLOOR).ln()
    }

    /// −3 dB bandwidth in Hz of the model linearized at the effective
    /// radiance `l_sig + l_dark`, measured on the `ln L_diff` output.
    pub fn bandwidth_hz(&self, l_sig: f64) -> f64 {
        let m = self.continuous_matrices(self.effective_log_radiance(l_sig));
        let c = m.c.row(1).clone_owned();
        minus_3db_hz(&m.a, &m.b, &Matrix::from_row_slice(1, 4, c.as_slice()))
    }
}

/// `C`: picks `ln L_sf` and `ln L_diff` out of the state.
pub fn output_matrix() -> Matrix {
    Matrix::from_row_slice(2, 4, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousModel {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

/// Complex frequency response `c (jω I − A)^{-1} b` of a single-input,
/// single-output system.
pub fn frequency_response(a: &Matrix, b: &Matrix, c: &Matrix, omega: f64) -> Option<Complex<f64>> {
    let n = a.nrows();
    let lhs = DMatrix::from_fn(n, n, |r, k| {
        let diag = if r == k { Complex::new(0.0, omega) } else { Complex::new(0.0, 0.0) };
        diag - Complex::new(a[(r, k)], 0.0)
    });
    let rhs = DVector::from_fn(n, |r, _| Complex::new(b[(r, 0)], 0.0));
    let x = lhs.lu().solve(&rhs)?;
    Some((0..n).map(|k| x[k] * c[(0, k)]).sum())
}

const POINTS_PER_DECADE: usize = 64;
const SCAN_START_HZ: f64 = 1e-6;
const SCAN_END_HZ: f64 = 1e12;

/// Smallest frequency (Hz) where the magnitude drops to `1/√2` of its DC
/// value. A 64-points-per-decade log scan brackets the crossing, then
/// bisection in log frequency refines it to 1e-6 relative. Returns infinity
/// when no crossing exists below 1 THz.
pub fn minus_3db_hz(a: &Matrix, b: &Matrix, c: &Matrix) -> f64 {
    let dc = match frequency_response(a, b, c, 0.0) {
        Some(h) => h.norm(),
        None => return f64::NAN,
    };
    let target = dc / std::f64::consts::SQRT_2;
    let below = |f: f64| {
        frequency_response(a, b, c, 2.0 * std::f64::consts::PI * f)
            .map(|h| h.norm() < target)
            .unwrap_or(false)
    };

    let decades = (SCAN_END_HZ / SCAN_START_HZ).log10();
    let steps = (decades * POINTS_PER_DECADE as f64).round() as usize;
    let mut lo = SCAN_START_HZ.ln();
    if below(SCAN_START_HZ) {
        return SCAN_START_HZ;
    }
    for i in 1..=steps {
        let hi = (SCAN_START_HZ * 10f64.powf(i as f64 / POINTS_PER_DECADE as f64)).ln();
        if below(hi.exp()) {
            let (mut lo, mut hi) = (lo, hi);
            while hi - lo > 1e-7 {
                let mid = 0.5 * (lo + hi);
                if below(mid.exp()) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return (0.5 * (lo + hi)).exp();
        }
        lo = hi;
    }
    f64::INFINITY
}
