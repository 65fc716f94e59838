//! Radiance sources: an analytic moving bar and timestamped frame stacks.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::event_core::Pixel;
use crate::pixel_model::RADIANCE_FLOOR;

/// Exponent of the optional inverse-gamma transform on frame intensities.
pub const DISPLAY_GAMMA: f64 = 2.2;

/// Maps normalized scene intensity to radiance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Radiometry {
    /// Radiance per unit normalized intensity. Stands in for scene
    /// illuminance: 1000 corresponds to office lighting.
    pub illuminance_scale: f64,
    /// Floor on effective radiance before taking logs.
    pub epsilon: f64,
    /// Treat frame intensities as gamma-encoded and linearize them.
    pub inverse_gamma: bool,
}

impl Default for Radiometry {
    fn default() -> Self {
        Self { illuminance_scale: 1000.0, epsilon: RADIANCE_FLOOR, inverse_gamma: false }
    }
}

impl Radiometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.illuminance_scale > 0.0 && self.illuminance_scale.is_finite()) {
            return Err(Error::invalid("illuminance_scale must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        Ok(())
    }

    /// `ln(max(scale · I + L_dark, ε))`.
    pub fn log_radiance(&self, intensity: f64, l_dark: f64, linear: bool) -> f64 {
        let i = intensity.max(0.0);
        let i = if linear || !self.inverse_gamma { i } else { i.powf(DISPLAY_GAMMA) };
        (self.illuminance_scale * i + l_dark).max(self.epsilon).ln()
    }
}

/// A vertical bar of uniform intensity sliding horizontally over a uniform
/// background. Pixel values are the exact area coverage of each pixel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MovingBar {
    pub width: u16,
    pub height: u16,
    /// Bar width in pixels.
    pub bar_width: f64,
    /// Horizontal speed in pixels per second.
    pub speed: f64,
    /// Left edge of the bar at `t = 0`, in pixels.
    pub start_x: f64,
    pub foreground: f64,
    pub background: f64,
    pub duration: f64,
}

impl MovingBar {
    /// Left and right bar edges at `t`.
    pub fn edges(&self, t: f64) -> (f64, f64) {
        let left = self.start_x + self.speed * t;
        (left, left + self.bar_width)
    }

    pub fn intensity(&self, x: u16, t: f64) -> f64 {
        let (left, right) = self.edges(t);
        let (px0, px1) = (x as f64, x as f64 + 1.0);
        let cover = (right.min(px1) - left.max(px0)).max(0.0);
        self.background + (self.foreground - self.background) * cover
    }

    /// Times in `(0, duration)` where an edge crosses a boundary of column `x`.
    /// Between them the intensity is linear in time.
    pub fn breakpoints(&self, x: u16) -> Vec<f64> {
        if self.speed == 0.0 {
            return Vec::new();
        }
        let x = x as f64;
        let mut ts: Vec<f64> = [x, x + 1.0, x - self.bar_width, x + 1.0 - self.bar_width]
            .iter()
            .map(|b| (b - self.start_x) / self.speed)
            .filter(|t| *t > 0.0 && *t < self.duration)
            .collect();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts
    }

    /// Parses `key=value` pairs separated by commas, e.g.
    /// `width=64,height=64,bar=8,speed=640,fg=1,bg=0.02,duration=0.15`.
    pub fn from_spec(spec: &str) -> Result<Self> {
        let mut bar = MovingBar {
            width: 64,
            height: 64,
            bar_width: 8.0,
            speed: 640.0,
            start_x: -8.0,
            foreground: 1.0,
            background: 0.02,
            duration: 0.125,
        };
        let mut start_given = false;
        for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("scene option `{part}` is not key=value")))?;
            let num: f64 = v
                .trim()
                .parse()
                .map_err(|_| Error::invalid(format!("scene option `{k}`: bad number `{v}`")))?;
            match k.trim() {
                "width" => bar.width = num as u16,
                "height" => bar.height = num as u16,
                "bar" | "bar_width" => bar.bar_width = num,
                "speed" => bar.speed = num,
                "start" | "start_x" => {
                    bar.start_x = num;
                    start_given = true;
                }
                "fg" | "foreground" => bar.foreground = num,
                "bg" | "background" => bar.background = num,
                "duration" => bar.duration = num,
                other => return Err(Error::invalid(format!("unknown scene option `{other}`"))),
            }
        }
        if !start_given {
            bar.start_x = -bar.bar_width;
        }
        Ok(bar)
    }
}

/// Ordered frames of linear (or gamma-encoded, see [`Radiometry`])
/// normalized intensity, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    pub width: u16,
    pub height: u16,
    pub timestamps: Vec<f64>,
    pub frames: Vec<Vec<f64>>,
}

impl FrameStack {
    pub fn new(width: u16, height: u16, timestamps: Vec<f64>, frames: Vec<Vec<f64>>) -> Result<Self> {
        let s = Self { width, height, timestamps, frames };
        s.validate()?;
        Ok(s)
    }

    fn validate(&self) -> Result<()> {
        if self.frames.len() != self.timestamps.len() {
            return Err(Error::invalid("frame and timestamp counts differ"));
        }
        if self.timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("frame timestamps must be strictly increasing"));
        }
        let n = self.width as usize * self.height as usize;
        for (i, f) in self.frames.iter().enumerate() {
            if f.len() != n {
                return Err(Error::invalid(format!("frame {i} has {} values, expected {n}", f.len())));
            }
            if f.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::invalid(format!("frame {i} has negative or non-finite values")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SceneSource {
    MovingBar(MovingBar),
    Frames(FrameStack),
}

impl SceneSource {
    pub fn resolution(&self) -> (u16, u16) {
        match self {
            SceneSource::MovingBar(b) => (b.width, b.height),
            SceneSource::Frames(f) => (f.width, f.height),
        }
    }

    /// `(start, end)` of the simulated time range.
    pub fn time_range(&self) -> (f64, f64) {
        match self {
            SceneSource::MovingBar(b) => (0.0, b.duration),
            SceneSource::Frames(f) => (
                f.timestamps.first().copied().unwrap_or(0.0),
                f.timestamps.last().copied().unwrap_or(0.0),
            ),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = self.resolution();
        if w == 0 || h == 0 {
            return Err(Error::invalid("scene has no pixels"));
        }
        match self {
            SceneSource::MovingBar(b) => {
                if !(b.duration > 0.0) || !(b.bar_width > 0.0) {
                    return Err(Error::invalid("bar scene needs positive duration and width"));
                }
                if b.foreground < 0.0 || b.background < 0.0 {
                    return Err(Error::invalid("bar intensities must be non-negative"));
                }
                Ok(())
            }
            SceneSource::Frames(f) => {
                if f.frames.is_empty() {
                    return Err(Error::invalid("frame stack is empty"));
                }
                f.validate()
            }
        }
    }

    fn check_pixel(&self, pixel: Pixel) -> Result<()> {
        let (w, h) = self.resolution();
        if pixel.x >= w || pixel.y >= h {
            return Err(Error::invalid(format!("pixel ({}, {}) outside {w}x{h}", pixel.x, pixel.y)));
        }
        Ok(())
    }

    /// Times at which the pixel's input must be sampled exactly.
    pub(crate) fn breakpoints(&self, pixel: Pixel) -> Vec<f64> {
        match self {
            SceneSource::MovingBar(b) => b.breakpoints(pixel.x),
            SceneSource::Frames(f) => f.timestamps.clone(),
        }
    }

    /// Unchecked variant of [`interpolate_log_radiance`] for hot loops.
    pub(crate) fn log_radiance_at(&self, radiometry: &Radiometry, l_dark: f64, pixel: Pixel, t: f64) -> f64 {
        match self {
            SceneSource::MovingBar(b) => radiometry.log_radiance(b.intensity(pixel.x, t), l_dark, true),
            SceneSource::Frames(f) => {
                let idx = pixel.y as usize * f.width as usize + pixel.x as usize;
                let u_of = |k: usize| radiometry.log_radiance(f.frames[k][idx], l_dark, false);
                let ts = &f.timestamps;
                if t <= ts[0] {
                    return u_of(0);
                }
                let last = ts.len() - 1;
                if t >= ts[last] {
                    return u_of(last);
                }
                let hi = ts.partition_point(|&s| s <= t);
                let lo = hi - 1;
                let w = (t - ts[lo]) / (ts[hi] - ts[lo]);
                let (a, b) = (u_of(lo), u_of(hi));
                a + w * (b - a)
            }
        }
    }
}

/// Effective log-radiance `ln(L_sig + L_dark)` at `pixel` and time `t`.
///
/// Frame stacks are interpolated linearly in the log domain and clamped to
/// the first/last frame outside their time range.
pub fn interpolate_log_radiance(
    source: &SceneSource,
    radiometry: &Radiometry,
    l_dark: f64,
    pixel: Pixel,
    t: f64,
) -> Result<f64> {
    source.check_pixel(pixel)?;
    Ok(source.log_radiance_at(radiometry, l_dark, pixel, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_frames() -> SceneSource {
        // Effective radiances e^0 and e^1 with unit scale and zero black level.
        let f = FrameStack::new(1, 1, vec![0.0, 1.0], vec![vec![1.0], vec![std::f64::consts::E]]).unwrap();
        SceneSource::Frames(f)
    }

    fn unit_radiometry() -> Radiometry {
        Radiometry { illuminance_scale: 1.0, ..Default::default() }
    }

    #[test]
    fn frame_interpolation_is_linear_in_log() {
        let s = two_frames();
        let r = unit_radiometry();
        let p = Pixel::new(0, 0);
        assert!((interpolate_log_radiance(&s, &r, 0.0, p, 0.0).unwrap()).abs() < 1e-15);
        assert!((interpolate_log_radiance(&s, &r, 0.0, p, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((interpolate_log_radiance(&s, &r, 0.0, p, 0.5).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(interpolate_log_radiance(&s, &r, 0.0, p, -3.0).unwrap(), 0.0);
        assert!(interpolate_log_radiance(&s, &r, 0.0, Pixel::new(1, 0), 0.0).is_err());
    }

    #[test]
    fn radiance_floor_applies() {
        let r = Radiometry { illuminance_scale: 1.0, epsilon: 1e-3, inverse_gamma: false };
        assert_eq!(r.log_radiance(0.0, 0.0, false), 1e-3f64.ln());
        let g = Radiometry { inverse_gamma: true, ..r };
        assert!((g.log_radiance(0.5, 0.0, false) - 0.5f64.powf(2.2).ln()).abs() < 1e-12);
    }

    #[test]
    fn frame_stack_validation() {
        assert!(FrameStack::new(1, 1, vec![0.0, 0.0], vec![vec![1.0], vec![1.0]]).is_err());
        assert!(FrameStack::new(2, 1, vec![0.0], vec![vec![1.0]]).is_err());
        assert!(FrameStack::new(1, 1, vec![0.0], vec![vec![-1.0]]).is_err());
    }

    #[test]
    fn bar_coverage_and_breakpoints() {
        let bar = MovingBar::from_spec("width=10,height=2,bar=2,speed=10,start=0,fg=1,bg=0,duration=1").unwrap();
        assert_eq!(bar.intensity(0, 0.0), 1.0);
        assert_eq!(bar.intensity(2, 0.0), 0.0);
        assert!((bar.intensity(2, 0.05) - 0.5).abs() < 1e-12);
        let bp = bar.breakpoints(4);
        assert_eq!(bp.len(), 4);
        for t in bp {
            let (l, r) = bar.edges(t);
            let on_boundary = |e: f64| (e - 4.0).abs() < 1e-9 || (e - 5.0).abs() < 1e-9;
            assert!(on_boundary(l) || on_boundary(r));
        }
        assert!(MovingBar::from_spec("nope=1").is_err());
        assert!(MovingBar::from_spec("width").is_err());
    }
}
