//! Subcommand bodies. Each takes parsed arguments and writes human output to `out`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use genrec_core::data::{
    ingest, synth_generate, to_canonical_csv, Format, ItemAttributes, Prepared, SequenceOptions, SynthRule, SynthSpec,
    Task,
};
use genrec_core::metrics::parse_report_csv;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::Config;
use crate::error::{CliError, CliResult};
use crate::pipeline::{self, RunMeta};
use crate::report::{self, ReportOptions};
use crate::sweep;

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone)]
pub struct SynthArgs {
    pub rule: String,
    pub users: usize,
    pub items: usize,
    pub seed: u64,
    pub min_len: usize,
    pub max_len: usize,
    pub noise: f64,
    /// `name:weight,...`
    pub behaviors: Option<String>,
    pub domains: usize,
    pub out: PathBuf,
    pub truth: Option<PathBuf>,
}

pub fn synth(a: &SynthArgs, out: &mut dyn Write) -> CliResult<()> {
    let rule: SynthRule = a.rule.parse()?;
    let mut spec = SynthSpec::new(rule, a.users, a.items);
    spec.min_len = a.min_len;
    spec.max_len = a.max_len;
    spec.noise = a.noise;
    spec.num_domains = a.domains;
    if let Some(b) = &a.behaviors {
        spec.behaviors = b
            .split(',')
            .map(|kv| {
                let (k, w) = kv
                    .split_once(':')
                    .ok_or_else(|| CliError::Usage(format!("--behaviors expects name:weight, got `{kv}`")))?;
                let w: f64 = w
                    .parse()
                    .map_err(|_| CliError::Usage(format!("invalid behavior weight `{w}`")))?;
                Ok((k.to_string(), w))
            })
            .collect::<CliResult<_>>()?;
    }
    let s = synth_generate(&spec, a.seed)?;
    write_file(&a.out, to_canonical_csv(&s.log).as_bytes())?;
    if let Some(t) = &a.truth {
        let mut text = String::from("item_id,prob\n");
        for (name, p) in s.truth.items.iter().zip(&s.truth.item_prob) {
            text.push_str(&format!("{name},{p}\n"));
        }
        write_file(t, text.as_bytes())?;
    }
    let st = s.log.stats();
    writeln!(
        out,
        "synth rule={} users={} items={} events={} -> {}",
        rule.name(),
        st.users,
        st.items,
        st.events,
        a.out.display()
    )?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PrepareArgs {
    pub input: PathBuf,
    pub format: String,
    pub max_len: usize,
    pub task: String,
    pub out: PathBuf,
    pub attrs: Option<PathBuf>,
    pub five_core: bool,
    pub min_events: usize,
}

/// Cache file for `--out`: a directory (existing, or spelled with a trailing
/// slash) receives `prepared.bin`.
pub fn cache_file(out: &Path) -> PathBuf {
    let s = out.to_string_lossy();
    if out.is_dir() || s.ends_with('/') {
        out.join("prepared.bin")
    } else {
        out.to_path_buf()
    }
}

pub fn prepare(a: &PrepareArgs, out: &mut dyn Write) -> CliResult<PathBuf> {
    let format: Format = a.format.parse()?;
    let task: Task = a.task.parse()?;
    let log = ingest(&a.input, format)?;
    let attrs = match &a.attrs {
        Some(p) => Some(ItemAttributes::read(p, &log.items)?),
        None => None,
    };
    let mut opts = SequenceOptions::new(a.max_len, task);
    opts.five_core = a.five_core;
    opts.min_events = a.min_events;
    let prepared = Prepared::build(&log, &opts, attrs.as_ref())?;
    let path = cache_file(&a.out);
    let bytes = prepared.to_container()?.to_bytes();
    write_file(&path, &bytes)?;
    let st = log.stats();
    writeln!(out, "users={}", st.users)?;
    writeln!(out, "items={}", st.items)?;
    writeln!(out, "events={}", st.events)?;
    writeln!(out, "density={:.6}", st.density())?;
    let mix: Vec<String> = st.behaviors.iter().map(|(b, n)| format!("{b}:{n}")).collect();
    writeln!(out, "behaviors={}", mix.join(","))?;
    writeln!(out, "domains={}", log.domains.names().join(","))?;
    writeln!(out, "synthetic_time={}", log.synthetic_time)?;
    writeln!(out, "sequences={}", prepared.sequences.len())?;
    writeln!(out, "dropped_short={}", prepared.dropped_short)?;
    writeln!(out, "cache={}", path.display())?;
    Ok(path)
}

pub fn train(cfg: &Config, checkpoint: &Path, out: &mut dyn Write) -> CliResult<()> {
    let cache = cfg.cache_path()?;
    let prepared = pipeline::load_prepared(&cache)?;
    let data = pipeline::run_data(cfg, &prepared, None)?;
    let mc = pipeline::model_config(cfg, &prepared, &data)?;
    let (model, history) = pipeline::train_model(cfg, &mc, &data, out)?;
    let meta = RunMeta {
        variant: cfg.variant(),
        dataset: pipeline::dataset_name(cfg, &cache),
        seed: cfg.seed()?,
    };
    pipeline::save_checkpoint(&model, &meta, checkpoint)?;
    writeln!(
        out,
        "params={} train_users={} dropped={} checkpoint={}",
        history.num_params,
        data.train.len(),
        data.dropped,
        checkpoint.display()
    )?;
    Ok(())
}

pub fn evaluate(cfg: &Config, checkpoint: &Path, report: Option<&Path>, out: &mut dyn Write) -> CliResult<()> {
    let (model, meta) = pipeline::load_checkpoint(checkpoint)?;
    let cache = cfg.cache_path()?;
    let prepared = pipeline::load_prepared(&cache)?;
    if prepared.task != model.cfg.task {
        return Err(CliError::Config(format!(
            "checkpoint is a {} model but the cache holds {} sequences",
            model.cfg.task, prepared.task
        )));
    }
    let data = pipeline::run_data(cfg, &prepared, Some(model.cfg.max_len))?;
    let metrics = pipeline::evaluate_model(&model, &data)?;
    let rows = meta.key(&model.cfg).rows(&metrics);
    for r in &rows {
        writeln!(out, "{}", r.to_csv_line())?;
    }
    if let Some(p) = report {
        pipeline::append_rows(p, &rows)?;
    }
    Ok(())
}

pub fn run_sweep(cfg: &Config, report: &Path, out: &mut dyn Write) -> CliResult<()> {
    let s = sweep::run_sweep(cfg, report, out)?;
    writeln!(out, "sweep runs={} skipped={} report={}", s.runs, s.skipped, report.display())?;
    Ok(())
}

pub fn report(csvs: &[PathBuf], embeddings: &[PathBuf], reference: Option<String>, out: &mut dyn Write) -> CliResult<()> {
    if csvs.is_empty() {
        return Err(CliError::Usage("report needs at least one CSV".into()));
    }
    let mut rows = Vec::new();
    for p in csvs {
        let text = fs::read_to_string(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        rows.extend(parse_report_csv(&text).map_err(|e| CliError::from(e).context(p.display()))?);
    }
    let mut opts = ReportOptions {
        reference_dataset: reference,
        embeddings: Vec::new(),
    };
    for p in embeddings {
        let text = fs::read_to_string(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display())))?;
        let s = report::embedding_norms(&text).map_err(|e| e.context(p.display()))?;
        opts.embeddings.push((p.display().to_string(), s));
    }
    out.write_all(report::render(&rows, &opts).as_bytes())?;
    Ok(())
}

/// Final hidden states of a seeded sample of users.
pub fn export_embeddings(
    cfg: &Config,
    checkpoint: &Path,
    sample: usize,
    seed: u64,
    dest: &Path,
    out: &mut dyn Write,
) -> CliResult<()> {
    let (model, _) = pipeline::load_checkpoint(checkpoint)?;
    let cache = cfg.cache_path()?;
    let prepared = pipeline::load_prepared(&cache)?;
    let data = pipeline::run_data(cfg, &prepared, Some(model.cfg.max_len))?;
    let users = &data.test;
    if sample > users.len() {
        return Err(CliError::Runtime(format!(
            "sample of {sample} users exceeds the {} available",
            users.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, users.len(), sample).into_vec();
    picked.sort_unstable();
    let d = model.cfg.dim();
    let mut text = String::from("user_id");
    for j in 0..d {
        text.push_str(&format!(",dim_{j}"));
    }
    text.push('\n');
    for &i in &picked {
        let s = &users[i];
        let h = model.user_state(s)?;
        text.push_str(prepared.users.decode(s.user).unwrap_or("?"));
        for v in h {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    write_file(dest, text.as_bytes())?;
    writeln!(out, "exported {sample} users x {d} dims -> {}", dest.display())?;
    Ok(())
}
