//! Frame-to-event simulation with bandwidth-limited pixels.

mod config;
mod io;
mod scene;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::event_core::{sample_pixel_thresholds, EventCameraConfig, Event, Pixel, PixelEventState, TraceSample};
use crate::filter_engine::{discretize, step, DiscreteStep, FilterState, MIN_INTERVAL};
use crate::pixel_model::PixelBandwidthParams;

pub use config::SimConfig;
pub use io::{read_events, write_events, EventFormat, BINARY_MAGIC, BINARY_VERSION};
pub use scene::{interpolate_log_radiance, FrameStack, MovingBar, Radiometry, SceneSource, DISPLAY_GAMMA};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Step size tracks the local dominant time constant.
    Adaptive,
    /// Uniform step size `1 / rate_hz`.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimOptions {
    pub sampling: SamplingMode,
    /// Adaptive mode: steps per dominant time constant `1 / ω_dom(u)`.
    pub samples_per_time_constant: f64,
    /// Fixed mode: sampling rate.
    pub rate_hz: f64,
    pub max_dt: f64,
    pub min_dt: f64,
    /// A step is halved until the input changes by at most this much in log
    /// radiance, or `min_dt` is reached.
    pub max_du: f64,
    /// Bypass the filter and threshold the log-radiance directly.
    pub infinite_bandwidth: bool,
    /// Worker threads; 0 uses all available cores.
    pub threads: usize,
    /// Pixels per work item.
    pub shard_size: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        Self {
            sampling: SamplingMode::Adaptive,
            samples_per_time_constant: 10.0,
            rate_hz: 1e5,
            max_dt: 1e-3,
            min_dt: 1e-7,
            max_du: 0.05,
            infinite_bandwidth: false,
            threads: 0,
            shard_size: 64,
        }
    }
}

impl SimOptions {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.samples_per_time_constant) || !pos(self.rate_hz) {
            return Err(Error::invalid("sampling density must be positive"));
        }
        if !pos(self.min_dt) || !pos(self.max_dt) || self.min_dt > self.max_dt {
            return Err(Error::invalid("need 0 < min_dt <= max_dt"));
        }
        if !pos(self.max_du) {
            return Err(Error::invalid("max_du must be positive"));
        }
        if self.shard_size == 0 {
            return Err(Error::invalid("shard_size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamHeader {
    pub width: u16,
    pub height: u16,
    pub t_start: f64,
    pub duration: f64,
    /// Hash of the configuration that produced the stream; 0 if unknown.
    pub fingerprint: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub header: StreamHeader,
    pub events: Vec<Event>,
}

/// Steady filter state for a pixel that has seen `u0` forever.
pub fn initial_state(u0: f64, t0: f64) -> FilterState {
    FilterState::steady(u0, t0)
}

/// Input sample times and values for one pixel over `[t0, t1]`.
///
/// Every breakpoint is hit exactly, so the piecewise-linear interpolation of
/// the samples matches the source wherever the source is itself linear.
pub fn pixel_timeline<F: Fn(f64) -> f64>(
    u_of: F,
    breakpoints: &[f64],
    t0: f64,
    t1: f64,
    params: &PixelBandwidthParams,
    opts: &SimOptions,
) -> Vec<(f64, f64)> {
    let mut out = vec![(t0, u_of(t0))];
    let mut bps = breakpoints.iter().copied().filter(|&b| b > t0 && b < t1).peekable();
    let (mut t, mut u) = out[0];
    while t < t1 {
        while bps.peek().is_some_and(|&b| b <= t + MIN_INTERVAL) {
            bps.next();
        }
        let target = bps.peek().copied().unwrap_or(t1);
        let mut dt = match opts.sampling {
            SamplingMode::Adaptive => 1.0 / (opts.samples_per_time_constant * params.dominant_cutoff(u)),
            SamplingMode::Fixed => 1.0 / opts.rate_hz,
        };
        dt = dt.clamp(opts.min_dt, opts.max_dt);
        let (t_next, u_next) = loop {
            let mut tn = (t + dt).min(target);
            if target - tn < MIN_INTERVAL {
                tn = target;
            }
            let un = u_of(tn);
            if (un - u).abs() <= opts.max_du || dt <= opts.min_dt {
                break (tn, un);
            }
            dt = (0.5 * dt).max(opts.min_dt);
        };
        out.push((t_next, u_next));
        t = t_next;
        u = u_next;
    }
    out
}

/// Memoizes discretizations on exact `(u, dt)`. Results are bit-identical
/// to recomputation, so caching never changes the output.
struct StepCache<'a> {
    params: &'a PixelBandwidthParams,
    map: HashMap<(u64, u64), DiscreteStep>,
}

impl<'a> StepCache<'a> {
    const CAPACITY: usize = 4096;

    fn new(params: &'a PixelBandwidthParams) -> Self {
        Self { params, map: HashMap::new() }
    }

    fn get(&mut self, u_next: f64, dt: f64) -> Result<DiscreteStep> {
        let key = (u_next.to_bits(), dt.to_bits());
        if let Some(d) = self.map.get(&key) {
            return Ok(*d);
        }
        if self.map.len() >= Self::CAPACITY {
            self.map.clear();
        }
        let d = discretize(self.params, u_next, dt)?;
        self.map.insert(key, d);
        Ok(d)
    }
}

/// All events of one pixel, in time order.
pub fn simulate_pixel(
    source: &SceneSource,
    pixel: Pixel,
    params: &PixelBandwidthParams,
    camera: &EventCameraConfig,
    radiometry: &Radiometry,
    opts: &SimOptions,
) -> Result<Vec<Event>> {
    let mut cache = StepCache::new(params);
    simulate_pixel_cached(source, pixel, camera, radiometry, opts, &mut cache)
}

fn simulate_pixel_cached(
    source: &SceneSource,
    pixel: Pixel,
    camera: &EventCameraConfig,
    radiometry: &Radiometry,
    opts: &SimOptions,
    cache: &mut StepCache<'_>,
) -> Result<Vec<Event>> {
    let params = cache.params;
    let (t0, t1) = source.time_range();
    let u_of = |t: f64| source.log_radiance_at(radiometry, params.l_dark, pixel, t);
    let timeline = pixel_timeline(u_of, &source.breakpoints(pixel), t0, t1, params, opts);

    let (t_first, u_first) = timeline[0];
    let first = TraceSample::ideal(t_first, u_first);
    let thresholds = sample_pixel_thresholds(camera, pixel);
    let mut detector = PixelEventState::new(pixel, thresholds, camera.tau, params.omega_c_diff, first);
    let mut events = Vec::new();

    if opts.infinite_bandwidth {
        for &(t, u) in &timeline[1..] {
            detector.push(TraceSample::ideal(t, u), &mut events)?;
        }
        return Ok(events);
    }

    let mut state = initial_state(u_first, t_first);
    for w in timeline.windows(2) {
        let ((ta, ua), (tb, ub)) = (w[0], w[1]);
        let d = cache.get(ub, tb - ta)?;
        state = step(&state, ua, ub, &d);
        state.t = tb;
        let sample = TraceSample { t: tb, log_sf: state.log_sf(), log_diff: state.log_diff() };
        detector.push(sample, &mut events)?;
    }
    Ok(events)
}

/// Simulates every pixel of `source` and returns the merged stream.
///
/// Pixels are independent and are processed in shards on a dedicated pool of
/// `opts.threads` workers. The output does not depend on the thread count.
pub fn simulate(
    source: &SceneSource,
    params: &PixelBandwidthParams,
    camera: &EventCameraConfig,
    radiometry: &Radiometry,
    opts: &SimOptions,
) -> Result<EventStream> {
    params.validate()?;
    camera.validate()?;
    radiometry.validate()?;
    opts.validate()?;
    source.validate()?;

    let (width, height) = source.resolution();
    let pixels: Vec<Pixel> = (0..height).flat_map(|y| (0..width).map(move |x| Pixel::new(x, y))).collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads)
        .build()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let per_shard: Vec<Vec<Vec<Event>>> = pool.install(|| {
        pixels
            .par_chunks(opts.shard_size)
            .map(|shard| {
                let mut cache = StepCache::new(params);
                shard
                    .iter()
                    .map(|&p| simulate_pixel_cached(source, p, camera, radiometry, opts, &mut cache))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let events = crate::event_core::merge_streams(per_shard.into_iter().flatten().collect());

    let (t0, t1) = source.time_range();
    let header = StreamHeader {
        width,
        height,
        t_start: t0,
        duration: t1 - t0,
        fingerprint: fingerprint(params, camera, radiometry, opts),
    };
    Ok(EventStream { header, events })
}

/// First 8 bytes of a SHA-256 over the serialized settings. Thread count and
/// shard size are excluded since they do not affect the output.
pub fn fingerprint(
    params: &PixelBandwidthParams,
    camera: &EventCameraConfig,
    radiometry: &Radiometry,
    opts: &SimOptions,
) -> u64 {
    let opts = SimOptions { threads: 0, shard_size: 1, ..*opts };
    let text = format!("{params:?}|{camera:?}|{radiometry:?}|{opts:?}");
    let digest = Sha256::digest(text.as_bytes());
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_bar() -> SceneSource {
        SceneSource::MovingBar(
            MovingBar::from_spec("width=8,height=2,bar=2,speed=200,fg=1,bg=0.05,duration=0.05").unwrap(),
        )
    }

    #[test]
    fn timeline_hits_breakpoints_and_limits_du() {
        let params = PixelBandwidthParams::default();
        let opts = SimOptions::default();
        let bar = match tiny_bar() {
            SceneSource::MovingBar(b) => b,
            _ => unreachable!(),
        };
        let r = Radiometry::default();
        let u_of = |t| r.log_radiance(bar.intensity(3, t), params.l_dark, true);
        let bps = bar.breakpoints(3);
        let tl = pixel_timeline(u_of, &bps, 0.0, bar.duration, &params, &opts);
        assert_eq!(tl.first().unwrap().0, 0.0);
        assert_eq!(tl.last().unwrap().0, bar.duration);
        for b in bps {
            assert!(tl.iter().any(|&(t, _)| t == b), "breakpoint {b} missing");
        }
        for w in tl.windows(2) {
            let dt = w[1].0 - w[0].0;
            assert!(dt > 0.0 && dt <= opts.max_dt * (1.0 + 1e-12));
            assert!((w[1].1 - w[0].1).abs() <= opts.max_du || dt <= opts.min_dt * (1.0 + 1e-12));
        }
    }

    #[test]
    fn static_scene_is_silent() {
        let src = SceneSource::MovingBar(MovingBar::from_spec("width=4,height=4,speed=0,start=1,duration=0.01").unwrap());
        let s = simulate(&src, &Default::default(), &Default::default(), &Default::default(), &Default::default()).unwrap();
        assert!(s.events.is_empty());
    }

    #[test]
    fn bar_produces_both_polarities_in_order() {
        let src = tiny_bar();
        let s = simulate(&src, &Default::default(), &Default::default(), &Default::default(), &Default::default()).unwrap();
        assert!(s.events.iter().any(|e| e.polarity == crate::event_core::Polarity::Positive));
        assert!(s.events.iter().any(|e| e.polarity == crate::event_core::Polarity::Negative));
        assert!(s.events.windows(2).all(|w| w[0].stream_cmp(&w[1]).is_le()));
        assert_eq!(s.header.width, 8);
    }

    #[test]
    fn fingerprint_ignores_threading() {
        let p = PixelBandwidthParams::default();
        let c = EventCameraConfig::default();
        let r = Radiometry::default();
        let a = SimOptions { threads: 3, ..Default::default() };
        let b = SimOptions { threads: 7, shard_size: 9, ..Default::default() };
        assert_eq!(fingerprint(&p, &c, &r, &a), fingerprint(&p, &c, &r, &b));
        let d = SimOptions { infinite_bandwidth: true, ..Default::default() };
        assert_ne!(fingerprint(&p, &c, &r, &a), fingerprint(&p, &c, &r, &d));
    }

    #[test]
    fn rejects_bad_options() {
        assert!(SimOptions { min_dt: 1.0, max_dt: 0.1, ..Default::default() }.validate().is_err());
        assert!(SimOptions { shard_size: 0, ..Default::default() }.validate().is_err());
    }
}
