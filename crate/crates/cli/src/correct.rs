use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use evblur::recon_tools::{fit_translated_gamma, CorrectionParams};
use serde::Serialize;

struct Table {
    /// `(image, pixel)` -> remaining columns.
    rows: BTreeMap<(String, String), Vec<f64>>,
    columns: Vec<String>,
}

fn read_table(path: &Path, key_columns: &[&str]) -> Result<Table> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().with_context(|| format!("{} is empty", path.display()))?;
    let header: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
    ensure!(
        header.len() > key_columns.len() && header.iter().zip(key_columns).all(|(h, k)| h == k),
        "{}: header must start with {} followed by channel columns",
        path.display(),
        key_columns.join(",")
    );
    let mut rows = BTreeMap::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let at = || format!("{}:{}", path.display(), i + 1);
        ensure!(fields.len() == header.len(), "{}: expected {} fields, found {}", at(), header.len(), fields.len());
        let values = fields[2..]
            .iter()
            .map(|v| v.parse::<f64>().with_context(|| format!("{}: bad number `{v}`", at())))
            .collect::<Result<Vec<_>>>()?;
        if rows.insert((fields[0].to_string(), fields[1].to_string()), values).is_some() {
            bail!("{}: duplicate (image, pixel) key", at());
        }
    }
    Ok(Table { rows, columns: header[2..].to_vec() })
}

#[derive(Serialize)]
struct Output {
    correction: CorrectionParams,
    fit: FitSummary,
}

#[derive(Serialize)]
struct FitSummary {
    channels: Vec<String>,
    samples: usize,
    iterations: usize,
    initial_ssr: f64,
    ssr: f64,
}

/// Joins renders and references on `(image, pixel)` and fits the
/// translated-gamma correction. Returns the TOML document to write.
pub fn run(renders: &Path, refs: &Path) -> Result<String> {
    let pred = read_table(renders, &["image", "pixel"])?;
    let reference = read_table(refs, &["image", "pixel", "gain_exposure"])?;
    let channels = &pred.columns;
    ensure!(
        reference.columns[1..] == channels[..],
        "reference channels {:?} do not match render channels {:?}",
        &reference.columns[1..],
        channels
    );
    let nc = channels.len();
    let mut x = vec![Vec::new(); nc];
    let mut y = vec![Vec::new(); nc];
    let mut gain = Vec::new();
    for (key, p) in &pred.rows {
        let Some(r) = reference.rows.get(key) else { continue };
        gain.push(r[0]);
        for ch in 0..nc {
            x[ch].push(p[ch]);
            y[ch].push(r[1 + ch]);
        }
    }
    ensure!(gain.len() >= 2, "only {} (image, pixel) pairs match between the two files", gain.len());
    let fit = fit_translated_gamma(&x, &y, &gain)?;
    let out = Output {
        correction: fit.params,
        fit: FitSummary {
            channels: channels.clone(),
            samples: gain.len(),
            iterations: fit.report.iterations,
            initial_ssr: fit.report.initial_ssr,
            ssr: fit.report.ssr,
        },
    };
    Ok(toml::to_string(&out)?)
}
