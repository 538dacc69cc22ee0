//! Summaries over report CSVs: best points, depth-width products and embedding norms.

use std::collections::BTreeMap;
use std::fmt::Write;

use genrec_core::data::Task;
use genrec_core::metrics::MetricRow;

use crate::error::{CliError, CliResult};
use crate::reference;

/// One grid point with seeds pooled.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Point {
    pub variant: String,
    pub blocks: usize,
    pub dim: usize,
    pub heads: usize,
}

/// Seed-averaged metrics of every point of one (dataset, task).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Group {
    pub points: BTreeMap<Point, BTreeMap<String, (f64, usize)>>,
}

impl Group {
    pub fn mean(&self, p: &Point, metric: &str) -> Option<f64> {
        self.points.get(p)?.get(metric).map(|&(s, c)| s / c as f64)
    }

    pub fn metrics(&self) -> Vec<String> {
        let mut m: Vec<String> = self.points.values().flat_map(|v| v.keys().cloned()).collect();
        m.sort();
        m.dedup();
        m
    }
}

pub fn group_rows(rows: &[MetricRow]) -> BTreeMap<(String, Task), Group> {
    let mut out: BTreeMap<(String, Task), Group> = BTreeMap::new();
    for r in rows {
        let p = Point {
            variant: r.variant.clone(),
            blocks: r.blocks,
            dim: r.dim,
            heads: r.heads,
        };
        let slot = out
            .entry((r.dataset.clone(), r.task))
            .or_default()
            .points
            .entry(p)
            .or_default()
            .entry(r.metric.clone())
            .or_insert((0.0, 0));
        slot.0 += r.value;
        slot.1 += 1;
    }
    out
}

pub fn lower_is_better(metric: &str) -> bool {
    metric.eq_ignore_ascii_case("logloss")
}

fn better(metric: &str, a: f64, b: f64) -> bool {
    if lower_is_better(metric) {
        a < b
    } else {
        a > b
    }
}

/// Best point for `metric`; ties go to the first point in key order.
pub fn best_point(g: &Group, metric: &str) -> Option<(Point, f64)> {
    let mut best: Option<(Point, f64)> = None;
    for p in g.points.keys() {
        if let Some(v) = g.mean(p, metric) {
            if best.as_ref().map_or(true, |(_, b)| better(metric, v, *b)) {
                best = Some((p.clone(), v));
            }
        }
    }
    best
}

/// Metric that drives depth selection: HR@10 or AUC when present.
pub fn primary_metric(g: &Group, task: Task) -> Option<String> {
    let want = match task {
        Task::Recall => "HR@10",
        Task::Ranking => "AUC",
    };
    let all = g.metrics();
    if all.iter().any(|m| m == want) {
        Some(want.to_string())
    } else {
        all.into_iter().next()
    }
}

/// Per variant, the best block count at each dim as `(dim, blocks)`; ties go to fewer blocks.
pub fn optimal_depths(g: &Group, metric: &str) -> BTreeMap<String, Vec<(usize, usize)>> {
    let mut best: BTreeMap<(String, usize), (usize, f64)> = BTreeMap::new();
    for p in g.points.keys() {
        let Some(v) = g.mean(p, metric) else { continue };
        let k = (p.variant.clone(), p.dim);
        match best.get(&k) {
            Some(&(_, b)) if !better(metric, v, b) => {}
            _ => {
                best.insert(k, (p.blocks, v));
            }
        }
    }
    let mut out: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
    for ((variant, dim), (blocks, _)) in best {
        out.entry(variant).or_default().push((dim, blocks));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constancy {
    pub products: Vec<usize>,
    pub mean: f64,
    /// Population standard deviation over the mean.
    pub cv: f64,
}

/// Products `L x D` of optimal `(dim, blocks)` pairs and their coefficient of variation.
pub fn lxd_constancy(optima: &[(usize, usize)]) -> Option<Constancy> {
    if optima.is_empty() {
        return None;
    }
    let products: Vec<usize> = optima.iter().map(|&(d, l)| d * l).collect();
    let n = products.len() as f64;
    let mean = products.iter().map(|&p| p as f64).sum::<f64>() / n;
    let var = products.iter().map(|&p| (p as f64 - mean).powi(2)).sum::<f64>() / n;
    let cv = if mean == 0.0 { 0.0 } else { var.sqrt() / mean };
    Some(Constancy { products, mean, cv })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub users: usize,
    pub mean: f64,
    pub max: f64,
}

/// L2 norms of the rows of an exported `user_id,dim_0,...` file.
pub fn embedding_norms(text: &str) -> CliResult<NormStats> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.starts_with("user_id") => {}
        _ => return Err(CliError::Runtime("line 1: expected `user_id,dim_0,...` header".into())),
    }
    let (mut sum, mut max, mut users) = (0.0, 0.0f64, 0);
    for (i, l) in lines {
        if l.is_empty() {
            continue;
        }
        let mut sq = 0.0;
        for f in l.split(',').skip(1) {
            let v: f64 = f
                .parse()
                .map_err(|_| CliError::Runtime(format!("line {}: invalid value `{f}`", i + 1)))?;
            sq += v * v;
        }
        let n = f64::sqrt(sq);
        sum += n;
        max = max.max(n);
        users += 1;
    }
    let mean = if users == 0 { 0.0 } else { sum / users as f64 };
    Ok(NormStats { users, mean, max })
}

fn base_variant(v: &str) -> &str {
    v.split(';').next().unwrap_or(v)
}

fn reference_value(p: &Point, dataset: &str, metric: &str) -> Option<f64> {
    reference::lookup(&p.variant, p.blocks, dataset, metric)
        .or_else(|| reference::lookup(base_variant(&p.variant), p.blocks, dataset, metric))
}

/// Options for [`render`].
#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    /// Published dataset to show next to each best point.
    pub reference_dataset: Option<String>,
    /// `(label, stats)` per embeddings file.
    pub embeddings: Vec<(String, NormStats)>,
}

pub fn render(rows: &[MetricRow], opts: &ReportOptions) -> String {
    let mut out = String::new();
    for ((dataset, task), g) in group_rows(rows) {
        let _ = writeln!(out, "== dataset={dataset} task={task} points={}", g.points.len());
        let _ = writeln!(out, "best point per metric:");
        for m in g.metrics() {
            let Some((p, v)) = best_point(&g, &m) else { continue };
            let _ = write!(
                out,
                "  {m:<10} {v:.6}  variant={} blocks={} dim={} heads={}",
                p.variant, p.blocks, p.dim, p.heads
            );
            if let Some(ds) = &opts.reference_dataset {
                match reference_value(&p, ds, &m) {
                    Some(r) => {
                        let _ = write!(out, "  | {} {ds}: {r:.4}", reference::LABEL);
                    }
                    None => {
                        let _ = write!(out, "  | {} {ds}: -", reference::LABEL);
                    }
                }
            }
            out.push('\n');
        }
        if let Some(metric) = primary_metric(&g, task) {
            let _ = writeln!(out, "depth x width by {metric}:");
            for (variant, optima) in optimal_depths(&g, &metric) {
                let c = lxd_constancy(&optima).expect("non-empty optima");
                let pairs: Vec<String> = optima
                    .iter()
                    .zip(&c.products)
                    .map(|(&(d, l), p)| format!("D={d} L={l} LxD={p}"))
                    .collect();
                let _ = writeln!(out, "  {variant}: {}", pairs.join("; "));
                if optima.len() > 1 {
                    let _ = writeln!(out, "  {variant}: mean LxD={:.1} cv={:.6}", c.mean, c.cv);
                }
            }
        }
    }
    if !opts.embeddings.is_empty() {
        let _ = writeln!(out, "== user embedding norms");
        for (label, s) in &opts.embeddings {
            let _ = writeln!(out, "  {label}: users={} mean_l2={:.6} max_l2={:.6}", s.users, s.mean, s.max);
        }
    }
    out
}
