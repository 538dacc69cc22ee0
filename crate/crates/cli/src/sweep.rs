//! Grid sweeps: deterministic point order, budget guard, per-point flush and resume.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use genrec_core::data::Prepared;
use genrec_core::metrics::{parse_report_csv, RunKey};

use crate::config::{Config, GRID_AXES};
use crate::error::{CliError, CliResult};
use crate::pipeline::{self, RunMeta};

/// Axes already carried by their own report columns.
const KEYED_AXES: &[&str] = &["blocks", "dim", "heads"];

/// One coordinate per axis, axes in name order.
pub type GridPoint = BTreeMap<String, String>;

/// Cartesian product with axes sorted by name and the last axis varying fastest.
pub fn grid_points(grid: &BTreeMap<String, Vec<String>>) -> Vec<GridPoint> {
    let mut points = vec![GridPoint::new()];
    for (axis, values) in grid {
        let mut next = Vec::with_capacity(points.len() * values.len());
        for p in &points {
            for v in values {
                let mut q = p.clone();
                q.insert(axis.clone(), v.clone());
                next.push(q);
            }
        }
        points = next;
    }
    points
}

/// Config for one point and seed.
pub fn point_config(base: &Config, point: &GridPoint, seed: u64) -> CliResult<Config> {
    let mut cfg = base.clone();
    cfg.grid.clear();
    for (axis, value) in point {
        let key = GRID_AXES
            .iter()
            .find(|(a, _)| a == axis)
            .map(|(_, k)| *k)
            .ok_or_else(|| CliError::Config(format!("unknown grid axis `{axis}`")))?;
        cfg.set(key, value)?;
    }
    cfg.set("run.seed", &seed.to_string())?;
    Ok(cfg)
}

/// Variant label: the base label plus every varying axis not already a report column.
pub fn point_label(base: &Config, grid: &BTreeMap<String, Vec<String>>, point: &GridPoint) -> String {
    let mut label = base.variant();
    for (axis, value) in point {
        if grid[axis].len() > 1 && !KEYED_AXES.contains(&axis.as_str()) {
            label.push_str(&format!(";{axis}={value}"));
        }
    }
    label
}

fn key_of(k: &RunKey) -> (String, usize, usize, usize, u64) {
    (k.variant.clone(), k.blocks, k.dim, k.heads, k.seed)
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepSummary {
    pub runs: usize,
    pub skipped: usize,
}

/// Runs every point x seed not already present in `out`, appending each as it finishes.
pub fn run_sweep(cfg: &Config, out: &Path, log: &mut dyn Write) -> CliResult<SweepSummary> {
    if cfg.grid.is_empty() {
        return Err(CliError::Config("sweep needs at least one `grid.<axis>` key".into()));
    }
    let points = grid_points(&cfg.grid);
    let seeds = cfg.seeds()?;
    let budget: usize = cfg.parse_value("sweep.max_points")?;
    let total = points.len() * seeds.len();
    if total > budget {
        return Err(CliError::Config(format!(
            "sweep has {total} runs ({} points x {} seeds), over the budget sweep.max_points = {budget}",
            points.len(),
            seeds.len()
        )));
    }
    let cache = cfg.cache_path()?;
    let prepared: Prepared = pipeline::load_prepared(&cache)?;
    let dataset = pipeline::dataset_name(cfg, &cache);

    let mut done = BTreeSet::new();
    if out.exists() {
        let text = std::fs::read_to_string(out)?;
        for r in parse_report_csv(&text).map_err(|e| CliError::from(e).context(out.display()))? {
            done.insert((r.variant, r.blocks, r.dim, r.heads, r.seed));
        }
    }

    let mut summary = SweepSummary::default();
    for point in &points {
        let label = point_label(cfg, &cfg.grid, point);
        for &seed in &seeds {
            let pc = point_config(cfg, point, seed)?;
            let data = pipeline::run_data(&pc, &prepared, None)?;
            let mc = pipeline::model_config(&pc, &prepared, &data)?;
            let meta = RunMeta {
                variant: label.clone(),
                dataset: dataset.clone(),
                seed,
            };
            let key = meta.key(&mc);
            let desc: Vec<String> = point.iter().map(|(a, v)| format!("{a}={v}")).collect();
            if done.contains(&key_of(&key)) {
                writeln!(log, "skip {} seed={seed}", desc.join(" "))?;
                summary.skipped += 1;
                continue;
            }
            writeln!(log, "run {} seed={seed}", desc.join(" "))?;
            let (model, _) = pipeline::train_model(&pc, &mc, &data, log)?;
            let metrics = pipeline::evaluate_model(&model, &data)?;
            pipeline::append_rows(out, &key.rows(&metrics))?;
            summary.runs += 1;
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn points_follow_sorted_axes() {
        let c = Config::parse("grid.dim = 8,16\ngrid.blocks = 1,2\n").unwrap();
        let pts = grid_points(&c.grid);
        let flat: Vec<String> = pts.iter().map(|p| format!("{}/{}", p["blocks"], p["dim"])).collect();
        assert_eq!(flat, vec!["1/8", "1/16", "2/8", "2/16"]);
    }

    #[test]
    fn labels_mark_varying_axes_only() {
        let c = Config::parse("grid.bias_kind = none,rope\ngrid.blocks = 1,2\ngrid.head = dot\n").unwrap();
        let pts = grid_points(&c.grid);
        assert_eq!(pts.len(), 4);
        assert_eq!(point_label(&c, &c.grid, &pts[0]), "hstu;bias_kind=none");
    }

    #[test]
    fn point_config_maps_axes_to_keys() {
        let c = Config::parse("grid.bias_kind = none\ngrid.max_len = 7\n").unwrap();
        let p = &grid_points(&c.grid)[0];
        let pc = point_config(&c, p, 3).unwrap();
        assert_eq!(pc.get("model.bias"), "none");
        assert_eq!(pc.get("data.max_len"), "7");
        assert_eq!(pc.get("run.seed"), "3");
    }
}
