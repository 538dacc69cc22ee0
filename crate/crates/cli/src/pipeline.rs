//! Shared steps of train, evaluate and sweep: data assembly, training, scoring and report rows.

use std::collections::BTreeSet;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use genrec_core::container::Container;
use genrec_core::data::{sample_negatives_all, split_leave_last, Prepared, Task, UserSequence};
use genrec_core::metrics::{evaluate_ranking, evaluate_recall, rows_to_csv, EvalOptions, MetricRow, Metrics, RunKey};
use genrec_core::model::{Model, ModelConfig};
use genrec_core::train::{train, TrainHistory};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::error::{CliError, CliResult};

/// Mixed into the run seed for negative sampling so it does not replay the shuffle stream.
const NEGATIVE_STREAM: u64 = 0x6e65_67;

pub fn load_prepared(path: &Path) -> CliResult<Prepared> {
    Prepared::read(path).map_err(|e| CliError::from(e).context(path.display()))
}

/// Report label for a cache: `data.dataset`, else the cache file stem.
pub fn dataset_name(cfg: &Config, cache: &Path) -> String {
    if cfg.is_set("data.dataset") {
        cfg.get("data.dataset").to_string()
    } else {
        cache
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    }
}

/// Sequences ready for one run.
#[derive(Debug, Clone)]
pub struct RunData {
    pub task: Task,
    pub max_len: usize,
    pub train: Vec<UserSequence>,
    pub test: Vec<UserSequence>,
    pub eval: EvalOptions,
    /// Users left with fewer than three events after behavior filtering.
    pub dropped: usize,
}

/// Applies behavior filtering and window length to the cache, splits, and
/// thins train negatives.
pub fn run_data(cfg: &Config, prepared: &Prepared, max_len: Option<usize>) -> CliResult<RunData> {
    let configured: usize = cfg.parse_value("data.max_len")?;
    let n = match (configured, max_len) {
        (0, Some(m)) => m,
        (0, None) => prepared.max_len,
        (c, Some(m)) if c != m => {
            return Err(CliError::Config(format!(
                "`data.max_len` = {c} but the model was trained with max_len {m}"
            )))
        }
        (c, _) => c,
    };
    if n < 3 || n > prepared.max_len {
        return Err(CliError::Config(format!(
            "`data.max_len` must be in 3..={} (the cache length), got {n}",
            prepared.max_len
        )));
    }
    let keep: Option<BTreeSet<u32>> = match cfg.behavior_subset() {
        None => None,
        Some(names) => {
            let mut ids = BTreeSet::new();
            for name in &names {
                let id = prepared.behaviors.encode(name).ok_or_else(|| {
                    CliError::Config(format!(
                        "unknown behavior `{name}` (known: {})",
                        prepared.behaviors.names().join(", ")
                    ))
                })?;
                ids.insert(id);
            }
            Some(ids)
        }
    };
    let mut seqs = Vec::with_capacity(prepared.sequences.len());
    let mut dropped = 0;
    for s in &prepared.sequences {
        let s = match &keep {
            Some(ids) => {
                let pos: Vec<usize> = (s.start()..s.len()).filter(|&p| ids.contains(&s.behaviors[p])).collect();
                s.select(&pos)
            }
            None => s.clone(),
        };
        let s = s.window(n);
        if s.num_valid() < 3 {
            dropped += 1;
        } else {
            seqs.push(s);
        }
    }
    if seqs.is_empty() {
        return Err(CliError::Runtime("no user has three or more events after filtering".into()));
    }
    let split = split_leave_last(&seqs)?;
    let ratio: f64 = cfg.parse_value("data.negative_ratio")?;
    let train = if ratio == 1.0 {
        split.train
    } else {
        if prepared.task != Task::Ranking {
            return Err(CliError::Config("`data.negative_ratio` applies to the ranking task only".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed()? ^ NEGATIVE_STREAM);
        sample_negatives_all(&split.train, ratio, 2, &mut rng)?
    };
    let mut eval = cfg.eval_options()?;
    if cfg.is_set("data.target_domain") {
        let name = cfg.get("data.target_domain");
        let id = prepared.domains.encode(name).ok_or_else(|| {
            CliError::Config(format!(
                "unknown domain `{name}` (known: {})",
                prepared.domains.names().join(", ")
            ))
        })?;
        eval.target_domain = Some(id);
        eval.item_domain = prepared.item_domain.clone();
    }
    Ok(RunData {
        task: prepared.task,
        max_len: n,
        train,
        test: split.test,
        eval,
        dropped,
    })
}

pub fn model_config(cfg: &Config, prepared: &Prepared, data: &RunData) -> CliResult<ModelConfig> {
    cfg.model_config(
        prepared.num_items(),
        prepared.num_behaviors(),
        &prepared.attr_sizes,
        data.max_len,
        data.task,
    )
}

/// Run identity stored next to the model parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMeta {
    pub variant: String,
    pub dataset: String,
    pub seed: u64,
}

impl RunMeta {
    pub fn key(&self, mc: &ModelConfig) -> RunKey {
        RunKey {
            variant: self.variant.clone(),
            task: mc.task,
            dataset: self.dataset.clone(),
            blocks: mc.blocks,
            dim: mc.block.dim,
            heads: mc.block.heads,
            seed: self.seed,
        }
    }
}

/// Fresh model from `run.seed`, trained per the `train.*` keys.
pub fn train_model(cfg: &Config, mc: &ModelConfig, data: &RunData, log: &mut dyn Write) -> CliResult<(Model<f32>, TrainHistory)> {
    let tc = cfg.train_config()?;
    let mut model = Model::<f32>::init(mc, tc.seed)?;
    let history = train(&mut model, &data.train, &tc, None)?;
    for e in &history.epochs {
        writeln!(log, "{}", e.log_line())?;
    }
    Ok((model, history))
}

pub fn evaluate_model(model: &Model<f32>, data: &RunData) -> CliResult<Metrics> {
    let m = match data.task {
        Task::Recall => evaluate_recall(model, &data.test, &data.eval)?,
        Task::Ranking => evaluate_ranking(model, &data.test, &data.eval)?,
    };
    Ok(m)
}

pub fn save_checkpoint(model: &Model<f32>, meta: &RunMeta, path: &Path) -> CliResult<()> {
    let mut c = model.to_container();
    c.meta.push_str(&format!(
        "run.variant={}\nrun.seed={}\nrun.dataset={}\n",
        meta.variant, meta.seed, meta.dataset
    ));
    c.write(path).map_err(|e| CliError::from(e).context(path.display()))
}

pub fn load_checkpoint(path: &Path) -> CliResult<(Model<f32>, RunMeta)> {
    let c = Container::read(path).map_err(|e| CliError::from(e).context(path.display()))?;
    let model = Model::<f32>::from_container(&c).map_err(|e| CliError::from(e).context(path.display()))?;
    let field = |k: &str| {
        c.meta
            .lines()
            .find_map(|l| l.strip_prefix(k).and_then(|r| r.strip_prefix('=')))
            .map(str::to_string)
    };
    let meta = RunMeta {
        variant: field("run.variant").unwrap_or_else(|| "model".into()),
        dataset: field("run.dataset").unwrap_or_else(|| "dataset".into()),
        seed: field("run.seed").and_then(|s| s.parse().ok()).unwrap_or(0),
    };
    Ok((model, meta))
}

/// Appends rows, writing the header when the file is new or empty.
pub fn append_rows(path: &Path, rows: &[MetricRow]) -> CliResult<()> {
    let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    f.write_all(rows_to_csv(rows, fresh).as_bytes())?;
    f.flush()?;
    Ok(())
}
