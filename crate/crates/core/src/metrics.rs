//! Recall and ranking metrics with deterministic tie-breaking, plus the
//! report CSV.

use std::fmt;
use std::str::FromStr;

use crate::data::{Task, UserSequence};
use crate::error::{Error, Result};

pub const LOGLOSS_CLIP: f64 = 1e-7;
pub const REPORT_HEADER: &str = "variant,task,dataset,blocks,dim,heads,seed,metric,value";

fn metric_err(msg: impl Into<String>) -> Error {
    Error::Metric(msg.into())
}

/// Candidates best first, and the held-out item.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub items: Vec<u32>,
    pub truth: u32,
}

impl RankedList {
    pub fn new(items: Vec<u32>, truth: u32) -> Result<Self> {
        let mut seen = items.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(metric_err("ranked list contains duplicate items"));
        }
        Ok(Self { items, truth })
    }

    /// 1-based rank of the truth item, if present.
    pub fn rank(&self) -> Option<usize> {
        self.items.iter().position(|&i| i == self.truth).map(|p| p + 1)
    }
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        Err(metric_err("K must be at least 1"))
    } else {
        Ok(())
    }
}

fn mean_over<F: Fn(&RankedList) -> f64>(lists: &[RankedList], f: F) -> Result<f64> {
    if lists.is_empty() {
        return Err(metric_err("no ranked lists to evaluate"));
    }
    Ok(lists.iter().map(f).sum::<f64>() / lists.len() as f64)
}

/// Fraction of lists with the truth in the top `k`. Lists shorter than `k`
/// are evaluated over what they hold.
pub fn hr_at_k(lists: &[RankedList], k: usize) -> Result<f64> {
    check_k(k)?;
    mean_over(lists, |l| hit(l.rank(), k))
}

pub fn ndcg_at_k(lists: &[RankedList], k: usize) -> Result<f64> {
    check_k(k)?;
    mean_over(lists, |l| ndcg(l.rank(), k))
}

pub fn mrr(lists: &[RankedList]) -> Result<f64> {
    mean_over(lists, |l| reciprocal(l.rank()))
}

pub fn hit(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r <= k => 1.0,
        _ => 0.0,
    }
}

pub fn ndcg(rank: Option<usize>, k: usize) -> f64 {
    match rank {
        Some(r) if r <= k => 1.0 / ((1 + r) as f64).log2(),
        _ => 0.0,
    }
}

pub fn reciprocal(rank: Option<usize>) -> f64 {
    rank.map_or(0.0, |r| 1.0 / r as f64)
}

/// 1-based rank of `truth` among candidate ids `j` (those with `keep(j)`),
/// higher score first, ties broken by ascending id.
pub fn rank_of(scores: &[f64], truth: usize, keep: impl Fn(usize) -> bool) -> usize {
    let st = scores[truth];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| j != truth && keep(j) && (s > st || (s == st && j < truth)))
        .count()
}

/// Top-`k` candidate ids, higher score first, ties by ascending id.
pub fn top_k(scores: &[f64], k: usize, keep: impl Fn(usize) -> bool) -> Vec<u32> {
    let mut ids: Vec<usize> = (0..scores.len()).filter(|&j| keep(j)).collect();
    ids.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    ids.truncate(k);
    ids.into_iter().map(|j| j as u32).collect()
}

/// Parallel probabilities and binary labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionSet {
    pub probs: Vec<f64>,
    pub labels: Vec<u8>,
}

impl PredictionSet {
    pub fn new(probs: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if probs.len() != labels.len() {
            return Err(metric_err(format!(
                "{} predictions but {} labels",
                probs.len(),
                labels.len()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(metric_err(format!("probability {p} outside [0, 1]")));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(metric_err(format!("label {l} is not binary")));
        }
        Ok(Self { probs, labels })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn extend(&mut self, other: &PredictionSet) {
        self.probs.extend_from_slice(&other.probs);
        self.labels.extend_from_slice(&other.labels);
    }
}

/// Rank-sum AUC with mid-ranks for ties.
pub fn auc(preds: &PredictionSet) -> Result<f64> {
    let n = preds.len();
    let pos = preds.labels.iter().filter(|&&l| l == 1).count();
    let neg = n - pos;
    if pos == 0 || neg == 0 {
        return Err(metric_err(format!(
            "AUC undefined with {pos} positives and {neg} negatives"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| preds.probs[a].total_cmp(&preds.probs[b]));
    // twice the rank sum, so mid-ranks stay integral
    let mut rank_sum2: u128 = 0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && preds.probs[order[j + 1]] == preds.probs[order[i]] {
            j += 1;
        }
        let mid2 = (i + 1 + j + 1) as u128;
        let tied_pos = order[i..=j].iter().filter(|&&o| preds.labels[o] == 1).count() as u128;
        rank_sum2 += mid2 * tied_pos;
        i = j + 1;
    }
    let (p, q) = (pos as u128, neg as u128);
    let num2 = rank_sum2 - p * (p + 1);
    Ok(num2 as f64 / 2.0 / (p * q) as f64)
}

/// Mean AUC over groups holding both classes; groups with one class are skipped.
pub fn auc_per_group(groups: &[PredictionSet]) -> Result<f64> {
    let vals: Vec<f64> = groups.iter().filter_map(|g| auc(g).ok()).collect();
    if vals.is_empty() {
        return Err(metric_err("no group holds both a positive and a negative"));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

pub fn bce(p: f64, label: u8) -> f64 {
    let p = p.clamp(LOGLOSS_CLIP, 1.0 - LOGLOSS_CLIP);
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

/// Mean clipped binary cross-entropy.
pub fn logloss(preds: &PredictionSet) -> Result<f64> {
    if preds.is_empty() {
        return Err(metric_err("logloss of an empty prediction set"));
    }
    let s: f64 = preds.probs.iter().zip(&preds.labels).map(|(&p, &l)| bce(p, l)).sum();
    Ok(s / preds.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AucMode {
    #[default]
    Pooled,
    PerUser,
}

impl FromStr for AucMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(AucMode::Pooled),
            "per_user" => Ok(AucMode::PerUser),
            other => Err(Error::Config(format!(
                "unknown auc mode `{other}` (expected pooled or per_user)"
            ))),
        }
    }
}

impl fmt::Display for AucMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AucMode::Pooled => "pooled",
            AucMode::PerUser => "per_user",
        })
    }
}

/// Full-catalog next-item scores for a batch of inputs.
pub trait RecallScorer {
    /// One vector per input of length `num_items + 1`; index 0 is the pad and is ignored.
    fn recall_scores(&self, inputs: &[UserSequence]) -> Result<Vec<Vec<f64>>>;
}

/// Positive-label probabilities at every position of each input.
pub trait RankingScorer {
    fn ranking_probs(&self, inputs: &[UserSequence]) -> Result<Vec<Vec<f64>>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    pub ks: Vec<usize>,
    pub batch_size: usize,
    /// Restrict targets and candidates to one domain.
    pub target_domain: Option<u32>,
    /// Domain of each item id; needed with `target_domain`.
    pub item_domain: Vec<u32>,
    pub auc_mode: AucMode,
    /// Number of final positions of each test sequence scored for ranking.
    pub ranking_tail: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ks: vec![10, 50],
            batch_size: 256,
            target_domain: None,
            item_domain: Vec::new(),
            auc_mode: AucMode::Pooled,
            ranking_tail: 1,
        }
    }
}

/// Metric name/value pairs in emission order.
pub type Metrics = Vec<(String, f64)>;

pub fn recall_metrics_from_ranks(ranks: &[usize], ks: &[usize]) -> Result<Metrics> {
    if ranks.is_empty() {
        return Err(metric_err("empty test set"));
    }
    let n = ranks.len() as f64;
    let mean = |f: &dyn Fn(usize) -> f64| ranks.iter().map(|&r| f(r)).sum::<f64>() / n;
    let mut out = Vec::new();
    for &k in ks {
        check_k(k)?;
        out.push((format!("HR@{k}"), mean(&|r| hit(Some(r), k))));
        out.push((format!("NDCG@{k}"), mean(&|r| ndcg(Some(r), k))));
    }
    out.push(("MRR".to_string(), mean(&|r| reciprocal(Some(r)))));
    Ok(out)
}

/// Input and target of a test example: all but the last event, and the last item.
pub fn recall_inputs(test: &[UserSequence]) -> Result<(Vec<UserSequence>, Vec<u32>)> {
    let mut inputs = Vec::with_capacity(test.len());
    let mut targets = Vec::with_capacity(test.len());
    for s in test {
        let m = s.num_valid();
        let t = s
            .last_item()
            .filter(|_| m >= 2)
            .ok_or_else(|| metric_err(format!("test sequence of user {} is too short", s.user)))?;
        inputs.push(s.prefix(m - 1));
        targets.push(t);
    }
    Ok((inputs, targets))
}

/// Ranks every test target against the full catalog.
pub fn recall_ranks<S: RecallScorer + ?Sized>(
    scorer: &S,
    test: &[UserSequence],
    opts: &EvalOptions,
) -> Result<Vec<usize>> {
    let keep_seq = |s: &UserSequence| match opts.target_domain {
        Some(d) => s.last_item().map(|i| opts.item_domain[i as usize] == d).unwrap_or(false),
        None => true,
    };
    let test: Vec<UserSequence> = test.iter().filter(|s| keep_seq(s)).cloned().collect();
    if test.is_empty() {
        return Err(metric_err("empty test set"));
    }
    let (inputs, targets) = recall_inputs(&test)?;
    let mut ranks = Vec::with_capacity(inputs.len());
    for (chunk, tg) in inputs.chunks(opts.batch_size.max(1)).zip(targets.chunks(opts.batch_size.max(1))) {
        let scores = scorer.recall_scores(chunk)?;
        for (s, &t) in scores.iter().zip(tg) {
            let keep = |j: usize| {
                j != 0 && opts.target_domain.map_or(true, |d| opts.item_domain[j] == d)
            };
            ranks.push(rank_of(s, t as usize, keep));
        }
    }
    Ok(ranks)
}

pub fn evaluate_recall<S: RecallScorer + ?Sized>(
    scorer: &S,
    test: &[UserSequence],
    opts: &EvalOptions,
) -> Result<Metrics> {
    recall_metrics_from_ranks(&recall_ranks(scorer, test, opts)?, &opts.ks)
}

/// Ranking predictions on the last `ranking_tail` positions of each test sequence, grouped by user.
pub fn ranking_predictions<S: RankingScorer + ?Sized>(
    scorer: &S,
    test: &[UserSequence],
    opts: &EvalOptions,
) -> Result<Vec<PredictionSet>> {
    if test.is_empty() {
        return Err(metric_err("empty test set"));
    }
    let tail = opts.ranking_tail.max(1);
    let mut groups = Vec::with_capacity(test.len());
    for chunk in test.chunks(opts.batch_size.max(1)) {
        let probs = scorer.ranking_probs(chunk)?;
        for (s, p) in chunk.iter().zip(probs) {
            let from = s.len() - tail.min(s.num_valid());
            groups.push(PredictionSet::new(p[from..].to_vec(), s.labels[from..].to_vec())?);
        }
    }
    Ok(groups)
}

pub fn evaluate_ranking<S: RankingScorer + ?Sized>(
    scorer: &S,
    test: &[UserSequence],
    opts: &EvalOptions,
) -> Result<Metrics> {
    let groups = ranking_predictions(scorer, test, opts)?;
    let mut pooled = PredictionSet::default();
    for g in &groups {
        pooled.extend(g);
    }
    let a = match opts.auc_mode {
        AucMode::Pooled => auc(&pooled)?,
        AucMode::PerUser => auc_per_group(&groups)?,
    };
    Ok(vec![
        ("AUC".to_string(), a),
        ("Logloss".to_string(), logloss(&pooled)?),
    ])
}

/// One report CSV row.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub variant: String,
    pub task: Task,
    pub dataset: String,
    pub blocks: usize,
    pub dim: usize,
    pub heads: usize,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

impl MetricRow {
    pub fn to_csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{:.6}",
            self.variant,
            self.task,
            self.dataset,
            self.blocks,
            self.dim,
            self.heads,
            self.seed,
            self.metric,
            self.value
        )
    }
}

/// Rows sharing a run identity, for emitting a metric group.
#[derive(Debug, Clone, PartialEq)]
pub struct RunKey {
    pub variant: String,
    pub task: Task,
    pub dataset: String,
    pub blocks: usize,
    pub dim: usize,
    pub heads: usize,
    pub seed: u64,
}

impl RunKey {
    pub fn rows(&self, metrics: &Metrics) -> Vec<MetricRow> {
        metrics
            .iter()
            .map(|(m, v)| MetricRow {
                variant: self.variant.clone(),
                task: self.task,
                dataset: self.dataset.clone(),
                blocks: self.blocks,
                dim: self.dim,
                heads: self.heads,
                seed: self.seed,
                metric: m.clone(),
                value: *v,
            })
            .collect()
    }
}

pub fn rows_to_csv(rows: &[MetricRow], header: bool) -> String {
    let mut out = String::new();
    if header {
        out.push_str(REPORT_HEADER);
        out.push('\n');
    }
    for r in rows {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

/// Parses report CSV text. Lines starting with `#` are comments.
pub fn parse_report_csv(text: &str) -> Result<Vec<MetricRow>> {
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        if raw == REPORT_HEADER {
            saw_header = true;
            continue;
        }
        if !saw_header {
            return Err(Error::Parse {
                line,
                msg: format!("expected header `{REPORT_HEADER}`"),
            });
        }
        let f: Vec<&str> = raw.split(',').collect();
        if f.len() != 9 {
            return Err(Error::Parse {
                line,
                msg: format!("expected 9 fields, found {}", f.len()),
            });
        }
        let bad = |what: &str| Error::Parse {
            line,
            msg: format!("invalid {what}"),
        };
        rows.push(MetricRow {
            variant: f[0].to_string(),
            task: f[1].parse().map_err(|_| bad("task"))?,
            dataset: f[2].to_string(),
            blocks: f[3].parse().map_err(|_| bad("blocks"))?,
            dim: f[4].parse().map_err(|_| bad("dim"))?,
            heads: f[5].parse().map_err(|_| bad("heads"))?,
            seed: f[6].parse().map_err(|_| bad("seed"))?,
            metric: f[7].to_string(),
            value: f[8].parse().map_err(|_| bad("value"))?,
        });
    }
    Ok(rows)
}
