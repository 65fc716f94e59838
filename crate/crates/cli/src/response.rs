use std::collections::HashMap;
use std::fmt::Write;

use anyhow::{bail, Context, Result};
use evblur::filter_engine::{discretize, step, FilterState};
use evblur::pixel_model::{frequency_response, output_matrix};
use evblur::SimConfig;

struct Args {
    kind: String,
    values: HashMap<String, f64>,
}

impl Args {
    fn parse(spec: &str) -> Result<Self> {
        let (kind, rest) = spec.split_once(':').unwrap_or((spec, ""));
        let mut values = HashMap::new();
        for part in rest.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, v) = part.split_once('=').with_context(|| format!("`{part}` is not key=value"))?;
            let v: f64 = v.trim().parse().with_context(|| format!("`{k}`: bad number `{v}`"))?;
            values.insert(k.trim().to_string(), v);
        }
        Ok(Self { kind: kind.to_string(), values })
    }

    fn get(&self, key: &str, default: f64) -> f64 {
        self.values.get(key).copied().unwrap_or(default)
    }

    fn check_keys(&self, allowed: &[&str]) -> Result<()> {
        for k in self.values.keys() {
            if !allowed.contains(&k.as_str()) {
                bail!("unknown `{}` option `{k}` (allowed: {})", self.kind, allowed.join(", "));
            }
        }
        Ok(())
    }
}

pub fn run(cfg: &SimConfig, spec: &str) -> Result<String> {
    let args = Args::parse(spec)?;
    match args.kind.as_str() {
        "step" => step_response(cfg, &args),
        "bode" => bode(cfg, &args),
        "sweep" => sweep(cfg, &args),
        other => bail!("unknown signal `{other}` (expected step, bode or sweep)"),
    }
}

/// Radiance step from `from` to `to` at time `at`, sampled every `dt`.
fn step_response(cfg: &SimConfig, args: &Args) -> Result<String> {
    args.check_keys(&["from", "to", "at", "duration", "dt"])?;
    let p = &cfg.pixel;
    let (from, to) = (args.get("from", 20.0), args.get("to", 1000.0));
    let (at, duration, dt) = (args.get("at", 0.01), args.get("duration", 0.05), args.get("dt", 1e-5));
    if !(dt > 0.0 && duration > 0.0) {
        bail!("dt and duration must be positive");
    }
    let (u0, u1) = (p.effective_log_radiance(from), p.effective_log_radiance(to));
    let n = (duration / dt).round() as usize;
    let mut out = String::from("t,u,log_sf,log_diff\n");
    let mut state = FilterState::steady(u0, 0.0);
    writeln!(out, "{:.9},{u0:.9},{u0:.9},{u0:.9}", 0.0)?;
    let (d0, d1) = (discretize(p, u0, dt)?, discretize(p, u1, dt)?);
    for k in 1..=n {
        let t = k as f64 * dt;
        let u = if t >= at { u1 } else { u0 };
        let d = if u == u1 { &d1 } else { &d0 };
        // The jump is placed at the start of the first interval ending at or
        // after `at`, so every interval sees a constant input.
        state = step(&state, u, u, d);
        writeln!(out, "{t:.9},{u:.9},{:.9},{:.9}", state.log_sf(), state.log_diff())?;
    }
    Ok(out)
}

/// Frequency response of both outputs at a fixed radiance.
fn bode(cfg: &SimConfig, args: &Args) -> Result<String> {
    args.check_keys(&["l", "fmin", "fmax", "points"])?;
    let p = &cfg.pixel;
    let u = p.effective_log_radiance(args.get("l", 100.0));
    let (fmin, fmax) = (args.get("fmin", 0.1), args.get("fmax", 1e6));
    let points = args.get("points", 200.0) as usize;
    if !(fmin > 0.0 && fmax > fmin && points >= 2) {
        bail!("need 0 < fmin < fmax and points >= 2");
    }
    let m = p.continuous_matrices(u);
    let c = output_matrix();
    let sf_row = c.rows(0, 1).into_owned();
    let diff_row = c.rows(1, 1).into_owned();
    let mut out = String::from("f_hz,sf_gain_db,sf_phase_deg,diff_gain_db,diff_phase_deg\n");
    for i in 0..points {
        let f = fmin * (fmax / fmin).powf(i as f64 / (points - 1) as f64);
        let w = 2.0 * std::f64::consts::PI * f;
        let sf = frequency_response(&m.a, &m.b, &sf_row, w).context("singular response")?;
        let diff = frequency_response(&m.a, &m.b, &diff_row, w).context("singular response")?;
        writeln!(
            out,
            "{f:.6e},{:.6},{:.6},{:.6},{:.6}",
            20.0 * sf.norm().log10(),
            sf.arg().to_degrees(),
            20.0 * diff.norm().log10(),
            diff.arg().to_degrees()
        )?;
    }
    Ok(out)
}

/// -3 dB bandwidth against signal radiance.
fn sweep(cfg: &SimConfig, args: &Args) -> Result<String> {
    args.check_keys(&["lmin", "lmax", "points"])?;
    let p = &cfg.pixel;
    let (lmin, lmax) = (args.get("lmin", 1e-2), args.get("lmax", 1e5));
    let points = args.get("points", 71.0) as usize;
    if !(lmin > 0.0 && lmax > lmin && points >= 2) {
        bail!("need 0 < lmin < lmax and points >= 2");
    }
    let mut out = String::from("l_sig,l_eff,bandwidth_hz,dominant_pole_hz\n");
    for i in 0..points {
        let l = lmin * (lmax / lmin).powf(i as f64 / (points - 1) as f64);
        let u = p.effective_log_radiance(l);
        writeln!(
            out,
            "{l:.6e},{:.6e},{:.6e},{:.6e}",
            u.exp(),
            p.bandwidth_hz(l),
            p.dominant_cutoff(u) / (2.0 * std::f64::consts::PI)
        )?;
    }
    Ok(out)
}
