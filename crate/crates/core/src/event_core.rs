//! Contrast-threshold event generation on blurred log-radiance traces.

use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter_engine::apply_reset;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EventCameraConfig {
    /// Positive contrast threshold `C_{+1}` in log-radiance units.
    #[serde(alias = "C_pos")]
    pub c_pos: f64,
    /// Negative contrast threshold `C_{-1}` in log-radiance units.
    #[serde(alias = "C_neg")]
    pub c_neg: f64,
    /// Pixel-to-pixel threshold standard deviation.
    #[serde(alias = "sigma_C")]
    pub sigma_c: f64,
    /// Refractory period, seconds.
    pub tau: f64,
    pub seed: u64,
}

impl Default for EventCameraConfig {
    fn default() -> Self {
        Self { c_pos: 0.25, c_neg: 0.25, sigma_c: 0.0, tau: 0.0, seed: 0 }
    }
}

impl EventCameraConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_pos > 0.0 && self.c_neg > 0.0) {
            return Err(Error::invalid("contrast thresholds must be positive"));
        }
        if !(self.sigma_c >= 0.0 && self.tau >= 0.0) || !self.sigma_c.is_finite() || !self.tau.is_finite() {
            return Err(Error::invalid("sigma_c and tau must be finite and non-negative"));
        }
        Ok(())
    }

    pub fn mean_threshold(&self) -> f64 {
        0.5 * (self.c_neg + self.c_pos)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Polarity::Negative => -1.0,
            Polarity::Positive => 1.0,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Polarity::Negative => -1,
            Polarity::Positive => 1,
        }
    }

    pub fn from_i8(p: i8) -> Option<Self> {
        match p {
            -1 => Some(Polarity::Negative),
            1 => Some(Polarity::Positive),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Pixel {
    pub x: u16,
    pub y: u16,
}

impl Pixel {
    pub fn new(x: u16, y: u16) -> Self {
        Self { x, y }
    }
}

/// `(pixel, polarity, t_prev, t_curr)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub pixel: Pixel,
    pub polarity: Polarity,
    pub t_prev: f64,
    pub t_curr: f64,
}

impl Event {
    /// Global stream order: time, then row, column and polarity.
    pub fn stream_cmp(&self, other: &Self) -> Ordering {
        self.t_curr
            .total_cmp(&other.t_curr)
            .then(self.pixel.y.cmp(&other.pixel.y))
            .then(self.pixel.x.cmp(&other.pixel.x))
            .then(self.polarity.cmp(&other.polarity))
            .then(self.t_prev.total_cmp(&other.t_prev))
    }
}

/// Per-pixel `(C_neg, C_pos)`, drawn from normals around the configured
/// means and clipped below at 1% of the mean. Deterministic in
/// `(cfg.seed, pixel)`.
pub fn sample_pixel_thresholds(cfg: &EventCameraConfig, pixel: Pixel) -> (f64, f64) {
    if cfg.sigma_c == 0.0 {
        return (cfg.c_neg, cfg.c_pos);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(((pixel.y as u64) << 16) | pixel.x as u64);
    let mut draw = |mean: f64| {
        let n = Normal::new(mean, cfg.sigma_c).expect("finite sigma");
        n.sample(&mut rng).max(0.01 * mean)
    };
    let c_neg = draw(cfg.c_neg);
    let c_pos = draw(cfg.c_pos);
    (c_neg, c_pos)
}

/// One sample of the unreset filter outputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    pub t: f64,
    pub log_sf: f64,
    pub log_diff: f64,
}

impl TraceSample {
    /// A sample of an infinite-bandwidth pixel, where both outputs equal the input.
    pub fn ideal(t: f64, u: f64) -> Self {
        Self { t, log_sf: u, log_diff: u }
    }

    fn lerp(&self, other: &Self, t: f64) -> Self {
        let w = (t - self.t) / (other.t - self.t);
        Self {
            t,
            log_sf: self.log_sf + w * (other.log_sf - self.log_sf),
            log_diff: self.log_diff + w * (other.log_diff - self.log_diff),
        }
    }
}

/// Event-detection state of a single pixel.
///
/// The filter itself runs without resets; the reset of the differencing
/// amplifier is applied on read-out through [`apply_reset`] using the latched
/// `delta_ref = ln L_sf − ln L_diff` at `t_ref`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelEventState {
    pub pixel: Pixel,
    pub c_neg: f64,
    pub c_pos: f64,
    pub tau: f64,
    pub omega_c_diff: f64,
    /// Reference level `ln L_sf(t_ref)`.
    pub reference: f64,
    pub t_ref: f64,
    pub delta_ref: f64,
    /// Timestamp of the last event, or the stream start.
    pub t_last_event: f64,
    /// End of the current refractory window, if one is pending.
    pub pending_reset: Option<f64>,
    pub last: TraceSample,
}

impl PixelEventState {
    /// Fresh state at the stream start, treated as the initial reset.
    pub fn new(pixel: Pixel, thresholds: (f64, f64), tau: f64, omega_c_diff: f64, first: TraceSample) -> Self {
        Self {
            pixel,
            c_neg: thresholds.0,
            c_pos: thresholds.1,
            tau,
            omega_c_diff,
            reference: first.log_sf,
            t_ref: first.t,
            delta_ref: first.log_sf - first.log_diff,
            t_last_event: first.t,
            pending_reset: None,
            last: first,
        }
    }

    /// Blurred log-radiance at a sample under the latched reset.
    pub fn blurred(&self, s: &TraceSample) -> f64 {
        apply_reset(s.log_diff, self.delta_ref, self.omega_c_diff, (s.t - self.t_ref).max(0.0))
            .expect("non-negative elapsed time")
    }

    fn reset_at(&mut self, s: &TraceSample) {
        self.reference = s.log_sf;
        self.delta_ref = s.log_sf - s.log_diff;
        self.t_ref = s.t;
        self.pending_reset = None;
    }

    /// Consumes the next trace sample, appending any events fired in
    /// `(last.t, next.t]` to `out` in time order.
    pub fn push(&mut self, next: TraceSample, out: &mut Vec<Event>) -> Result<()> {
        if !(next.t > self.last.t) {
            return Err(Error::invalid(format!(
                "trace timestamps must increase: {} after {}",
                next.t, self.last.t
            )));
        }
        let mut start = self.last;
        loop {
            if let Some(t_reset) = self.pending_reset {
                if t_reset >= next.t {
                    break;
                }
                start = if t_reset > start.t { start.lerp(&next, t_reset) } else { start };
                self.reset_at(&start);
            }
            let b_start = self.blurred(&start);
            let b_end = self.blurred(&next);
            let up = self.reference + self.c_pos;
            let down = self.reference - self.c_neg;
            let (level, polarity) = if b_end >= up && b_end > b_start {
                (up, Polarity::Positive)
            } else if b_end <= down && b_end < b_start {
                (down, Polarity::Negative)
            } else {
                break;
            };
            let frac = ((level - b_start) / (b_end - b_start)).clamp(0.0, 1.0);
            let t_cross = start.t + frac * (next.t - start.t);
            out.push(Event { pixel: self.pixel, polarity, t_prev: self.t_last_event, t_curr: t_cross });
            self.t_last_event = t_cross;
            self.pending_reset = Some(t_cross + self.tau);
            start = if t_cross > start.t { start.lerp(&next, t_cross) } else { start };
            if t_cross >= next.t {
                break;
            }
        }
        self.last = next;
        Ok(())
    }
}

/// Runs detection over a whole trace. The first sample may repeat the
/// state's current time.
pub fn detect_events(trace: &[TraceSample], mut state: PixelEventState) -> Result<(Vec<Event>, PixelEventState)> {
    let mut out = Vec::new();
    let mut samples = trace.iter().peekable();
    if let Some(first) = samples.peek() {
        if first.t == state.last.t {
            samples.next();
        }
    }
    for s in samples {
        state.push(*s, &mut out)?;
    }
    Ok((out, state))
}

/// Merges per-pixel event lists into one globally ordered stream.
pub fn merge_streams(per_pixel: Vec<Vec<Event>>) -> Vec<Event> {
    let mut all: Vec<Event> = per_pixel.into_iter().flatten().collect();
    all.sort_by(Event::stream_cmp);
    all
}
