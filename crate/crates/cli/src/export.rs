use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use trslds::io::ModelFile;
use trslds::model::ModelParams;
use trslds::multiscale::{partition, vector_field, Grid};
use trslds::Error;

use crate::{ExportKind, Which};

fn header(prefix: &[&str], groups: &[(&str, usize)]) -> String {
    let mut cols: Vec<String> = prefix.iter().map(|s| s.to_string()).collect();
    for &(name, n) in groups {
        cols.extend((0..n).map(|i| format!("{name}{}", i + 1)));
    }
    cols.join(",") + "\n"
}

fn push_row(out: &mut String, values: impl IntoIterator<Item = f64>) {
    let cells: Vec<String> = values.into_iter().map(|v| v.to_string()).collect();
    let _ = writeln!(out, "{}", cells.join(","));
}

/// Bounding box of the fitted latents with a 10% margin; extra coordinates sit
/// at their mean.
fn latent_grid(model: &ModelFile, nx: usize, ny: usize) -> Grid {
    let xs = model.state.latents.iter().flat_map(|l| l.x.iter());
    let d = model.state.params.d_x();
    let mut lo = vec![f64::INFINITY; d];
    let mut hi = vec![f64::NEG_INFINITY; d];
    let mut sum = vec![0.0; d];
    let mut count = 0.0;
    for x in xs {
        for i in 0..d {
            lo[i] = lo[i].min(x[i]);
            hi[i] = hi[i].max(x[i]);
            sum[i] += x[i];
        }
        count += 1.0;
    }
    let range = |i: usize| {
        let pad = 0.1 * (hi[i] - lo[i]).max(1e-6);
        (lo[i] - pad, hi[i] + pad)
    };
    let mut grid = Grid::new(range(0), range(1), nx, ny);
    grid.rest = (2..d).map(|i| sum[i] / count).collect();
    grid
}

fn pick(model: &ModelFile, which: Which) -> &ModelParams {
    let s = match which {
        Which::Best => model.record.best(),
        Which::Last => model.record.samples.last(),
    };
    // ModelFile::parse guarantees at least one retained sample.
    &s.expect("retained sample").params
}

#[allow(clippy::too_many_arguments)]
pub fn export(
    model_path: &Path,
    what: ExportKind,
    out: &Path,
    depth: Option<usize>,
    grid: Option<Vec<f64>>,
    nx: usize,
    ny: usize,
    window: usize,
    sample: Which,
) -> Result<()> {
    let model = ModelFile::read(model_path).with_context(|| format!("model {}", model_path.display()))?;
    let params = pick(&model, sample);
    let d = params.d_x();
    let grid = match grid {
        Some(b) => {
            if b.len() != 4 || b[0] >= b[1] || b[2] >= b[3] {
                bail!(Error::invalid("--grid takes xmin,xmax,ymin,ymax with min < max"));
            }
            let mut g = Grid::new((b[0], b[1]), (b[2], b[3]), nx, ny);
            g.rest = latent_grid(&model, 1, 1).rest;
            g
        }
        None => latent_grid(&model, nx, ny),
    };
    let mut csv = String::new();
    match what {
        ExportKind::VectorField => {
            let max = params.topology.max_depth();
            let depths: Vec<usize> = match depth {
                Some(l) if l > max => bail!(Error::invalid(format!("--depth {l} exceeds the tree depth {max}"))),
                Some(l) => vec![l],
                None => (0..=max).collect(),
            };
            csv.push_str(&header(&["depth"], &[("x", d), ("dx", d)]));
            for l in depths {
                for p in vector_field(params, &grid, l)? {
                    push_row(&mut csv, std::iter::once(l as f64).chain(p.x.iter().copied()).chain(p.drift.iter().copied()));
                }
            }
        }
        ExportKind::Partitions => {
            let k = params.num_leaves();
            let mut cols = header(&[], &[("x", d)]);
            cols.pop();
            for i in 0..k {
                let _ = write!(cols, ",p{i}");
            }
            csv.push_str(&cols);
            csv.push('\n');
            for (x, p) in partition(params, &grid)? {
                push_row(&mut csv, x.iter().copied().chain(p));
            }
        }
        ExportKind::Trace => {
            if window == 0 {
                bail!(Error::invalid("--window must be positive"));
            }
            csv.push_str("iteration,log_joint,trailing_mean\n");
            let avg = model.record.trailing_average(window);
            for (i, (lj, m)) in model.record.log_joint.iter().zip(avg).enumerate() {
                let _ = writeln!(csv, "{i},{lj},{m}");
            }
        }
        ExportKind::Trajectories => {
            csv.push_str(&header(&["trial", "t", "z"], &[("x", d)]));
            for (id, l) in model.trial_ids.iter().zip(&model.state.latents) {
                for (t, x) in l.x.iter().enumerate() {
                    let z = if t == 0 { String::new() } else { l.z[t - 1].to_string() };
                    let xs: Vec<String> = x.iter().map(|v| v.to_string()).collect();
                    let _ = writeln!(csv, "{id},{t},{z},{}", xs.join(","));
                }
            }
        }
    }
    std::fs::write(out, csv).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}
