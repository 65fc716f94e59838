use std::path::Path;

use anyhow::{bail, Context, Result};
use evblur::simulator::{FrameStack, MovingBar, SceneSource};

pub fn parse(spec: &str) -> Result<SceneSource> {
    let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
    match kind {
        "bar" => Ok(SceneSource::MovingBar(MovingBar::from_spec(rest)?)),
        "frames" => Ok(SceneSource::Frames(load_frame_list(Path::new(rest))?)),
        other => bail!("unknown scene kind `{other}` (expected `bar` or `frames`)"),
    }
}

/// Reads `<timestamp> <image>` lines; image paths are relative to the list.
/// Blank lines and lines starting with `#` are skipped.
fn load_frame_list(list: &Path) -> Result<FrameStack> {
    let text = std::fs::read_to_string(list).with_context(|| format!("reading frame list {}", list.display()))?;
    let base = list.parent().unwrap_or(Path::new("."));
    let mut timestamps = Vec::new();
    let mut frames = Vec::new();
    let mut dims = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (t, file) = line
            .split_once(char::is_whitespace)
            .with_context(|| format!("{}:{}: expected `<timestamp> <image>`", list.display(), i + 1))?;
        let t: f64 = t.parse().with_context(|| format!("{}:{}: bad timestamp `{t}`", list.display(), i + 1))?;
        let path = base.join(file.trim());
        let img = image::open(&path).with_context(|| format!("opening {}", path.display()))?.to_luma32f();
        let d = (img.width(), img.height());
        if *dims.get_or_insert(d) != d {
            bail!("{}: size {}x{} differs from the first frame", path.display(), d.0, d.1);
        }
        timestamps.push(t);
        frames.push(img.into_raw().into_iter().map(f64::from).collect());
    }
    let (w, h) = dims.context("frame list is empty")?;
    let (w, h) = (u16::try_from(w)?, u16::try_from(h)?);
    Ok(FrameStack::new(w, h, timestamps, frames)?)
}
