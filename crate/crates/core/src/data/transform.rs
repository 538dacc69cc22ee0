use std::collections::{BTreeSet, HashMap};

use rand::Rng;

use crate::error::{Error, Result};

use super::log::{InteractionEvent, InteractionLog};
use super::sequence::UserSequence;

/// Ratings of 4 and above are positive.
pub fn binarize_feedback(rating: Option<f64>) -> Result<u8> {
    match rating {
        Some(r) if r >= 4.0 => Ok(1),
        Some(_) => Ok(0),
        None => Err(Error::Data("ranking task needs a rating on every event".into())),
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if ratio > 0.0 && ratio <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("negative sampling ratio must be in (0, 1], got {ratio}")))
    }
}

/// Keeps every positive position and each negative with probability `ratio`.
/// One uniform draw is consumed per negative, so the stream is reproducible.
pub fn sample_negatives<R: Rng>(seq: &UserSequence, ratio: f64, rng: &mut R) -> Result<UserSequence> {
    check_ratio(ratio)?;
    if ratio == 1.0 {
        return Ok(seq.clone());
    }
    let keep: Vec<usize> = (seq.start()..seq.len())
        .filter(|&p| seq.labels[p] == 1 || rng.gen::<f64>() < ratio)
        .collect();
    Ok(seq.select(&keep))
}

/// Applies [`sample_negatives`] to every sequence, dropping those left with
/// fewer than `min_len` events.
pub fn sample_negatives_all<R: Rng>(
    seqs: &[UserSequence],
    ratio: f64,
    min_len: usize,
    rng: &mut R,
) -> Result<Vec<UserSequence>> {
    let mut out = Vec::with_capacity(seqs.len());
    for s in seqs {
        let t = sample_negatives(s, ratio, rng)?;
        if t.num_valid() >= min_len {
            out.push(t);
        }
    }
    Ok(out)
}

/// Keeps events whose behavior name is in `subset`.
pub fn filter_behaviors<S: AsRef<str>>(log: &InteractionLog, subset: &[S]) -> Result<InteractionLog> {
    if subset.is_empty() {
        return Err(Error::Config("behavior subset is empty".into()));
    }
    let mut ids = BTreeSet::new();
    for name in subset {
        let name = name.as_ref();
        match log.behaviors.encode(name) {
            Some(id) => {
                ids.insert(id);
            }
            None => {
                return Err(Error::Config(format!(
                    "unknown behavior `{name}` (known: {})",
                    log.behaviors.names().join(", ")
                )))
            }
        }
    }
    Ok(log.retain(|e| ids.contains(&e.behavior)))
}

/// Merges per-domain logs into one, tagging every event with its domain name.
/// Item ids must be disjoint across domains.
pub fn merge_domains(parts: &[(String, InteractionLog)]) -> Result<InteractionLog> {
    let mut owner: HashMap<String, &str> = HashMap::new();
    let mut raw: Vec<InteractionEvent> = Vec::new();
    let mut synthetic = false;
    for (domain, log) in parts {
        synthetic |= log.synthetic_time;
        for e in log.to_events() {
            match owner.get(e.item_id.as_str()) {
                Some(d) if *d != domain.as_str() => {
                    return Err(Error::Data(format!(
                        "item `{}` appears in domains {d} and {domain}",
                        e.item_id
                    )))
                }
                Some(_) => {}
                None => {
                    owner.insert(e.item_id.clone(), domain.as_str());
                }
            }
            raw.push(e.with_domain(domain.clone()));
        }
    }
    InteractionLog::from_events(raw, synthetic)
}

/// Iteratively drops users and items with fewer than `k` events.
pub fn k_core(log: &InteractionLog, k: usize) -> InteractionLog {
    let mut cur = log.clone();
    loop {
        let mut per_user: HashMap<u32, usize> = HashMap::new();
        let mut per_item: HashMap<u32, usize> = HashMap::new();
        for e in cur.events() {
            *per_user.entry(e.user).or_default() += 1;
            *per_item.entry(e.item).or_default() += 1;
        }
        let before = cur.len();
        cur = cur.retain(|e| per_user[&e.user] >= k && per_item[&e.item] >= k);
        if cur.len() == before {
            return cur;
        }
    }
}
