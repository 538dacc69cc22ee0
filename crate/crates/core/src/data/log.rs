use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::error::{Error, Result};

pub const DEFAULT_BEHAVIOR: &str = "default";
pub const DEFAULT_DOMAIN: &str = "default";

/// One raw interaction record with string identifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionEvent {
    pub user_id: String,
    pub item_id: String,
    pub behavior: String,
    pub timestamp: i64,
    pub rating: Option<f64>,
    pub domain: String,
}

impl InteractionEvent {
    pub fn new(user_id: impl Into<String>, item_id: impl Into<String>, timestamp: i64) -> Self {
        Self {
            user_id: user_id.into(),
            item_id: item_id.into(),
            behavior: DEFAULT_BEHAVIOR.to_string(),
            timestamp,
            rating: None,
            domain: DEFAULT_DOMAIN.to_string(),
        }
    }

    pub fn with_behavior(mut self, b: impl Into<String>) -> Self {
        self.behavior = b.into();
        self
    }

    pub fn with_rating(mut self, r: f64) -> Self {
        self.rating = Some(r);
        self
    }

    pub fn with_domain(mut self, d: impl Into<String>) -> Self {
        self.domain = d.into();
        self
    }
}

/// Sorted string vocabulary. Ids are `base + rank` so they do not depend on
/// the order in which names were first seen.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Vocab {
    names: Vec<String>,
    index: HashMap<String, u32>,
    base: u32,
}

impl Vocab {
    pub fn new<I, S>(names: I, base: u32) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = names.into_iter().map(Into::into).collect();
        let names: Vec<String> = set.into_iter().collect();
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), base + i as u32))
            .collect();
        Self { names, index, base }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn base(&self) -> u32 {
        self.base
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn encode(&self, name: &str) -> Option<u32> {
        self.index.get(name).copied()
    }

    pub fn decode(&self, id: u32) -> Option<&str> {
        id.checked_sub(self.base)
            .and_then(|i| self.names.get(i as usize))
            .map(String::as_str)
    }

    /// Ids in ascending order.
    pub fn ids(&self) -> impl Iterator<Item = u32> + '_ {
        (0..self.names.len() as u32).map(move |i| self.base + i)
    }
}

/// Encoded interaction. Item and behavior ids start at 1; 0 is the pad id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub user: u32,
    pub item: u32,
    pub behavior: u32,
    pub timestamp: i64,
    pub rating: Option<f64>,
    pub domain: u32,
}

/// Encoded log grouped by user (ascending user id) and sorted by timestamp
/// within each user, ties kept in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionLog {
    pub users: Vocab,
    pub items: Vocab,
    pub behaviors: Vocab,
    pub domains: Vocab,
    /// Domain id of every item, indexed by item id (slot 0 unused).
    pub item_domain: Vec<u32>,
    /// Timestamps were absent and replaced by per-user event indices.
    pub synthetic_time: bool,
    events: Vec<Event>,
}

impl InteractionLog {
    pub fn empty() -> Self {
        Self::from_events(Vec::new(), false).expect("empty log is valid")
    }

    pub fn from_events(raw: Vec<InteractionEvent>, synthetic_time: bool) -> Result<Self> {
        let users = Vocab::new(raw.iter().map(|e| e.user_id.as_str()), 0);
        let items = Vocab::new(raw.iter().map(|e| e.item_id.as_str()), 1);
        let behaviors = Vocab::new(raw.iter().map(|e| e.behavior.as_str()), 1);
        let domains = Vocab::new(raw.iter().map(|e| e.domain.as_str()), 0);
        let mut item_domain: Vec<Option<u32>> = vec![None; items.len() + 1];
        let mut events = Vec::with_capacity(raw.len());
        for e in &raw {
            if e.timestamp < 0 {
                return Err(Error::Data(format!(
                    "negative timestamp {} for user {}",
                    e.timestamp, e.user_id
                )));
            }
            let item = items.encode(&e.item_id).expect("item in vocab");
            let domain = domains.encode(&e.domain).expect("domain in vocab");
            match item_domain[item as usize] {
                Some(d) if d != domain => {
                    return Err(Error::Data(format!(
                        "item {} appears in domains {} and {}",
                        e.item_id,
                        domains.decode(d).unwrap_or("?"),
                        e.domain
                    )))
                }
                _ => item_domain[item as usize] = Some(domain),
            }
            events.push(Event {
                user: users.encode(&e.user_id).expect("user in vocab"),
                item,
                behavior: behaviors.encode(&e.behavior).expect("behavior in vocab"),
                timestamp: e.timestamp,
                rating: e.rating,
                domain,
            });
        }
        // stable: equal (user, timestamp) keep their input order
        events.sort_by_key(|e| (e.user, e.timestamp));
        Ok(Self {
            users,
            items,
            behaviors,
            domains,
            item_domain: item_domain.into_iter().map(|d| d.unwrap_or(0)).collect(),
            synthetic_time,
            events,
        })
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    /// Contiguous chronological event runs, one per user, ascending user id.
    pub fn by_user(&self) -> impl Iterator<Item = &[Event]> {
        self.events.chunk_by(|a, b| a.user == b.user)
    }

    pub fn decode(&self, e: &Event) -> InteractionEvent {
        InteractionEvent {
            user_id: self.users.decode(e.user).unwrap_or_default().to_string(),
            item_id: self.items.decode(e.item).unwrap_or_default().to_string(),
            behavior: self.behaviors.decode(e.behavior).unwrap_or_default().to_string(),
            timestamp: e.timestamp,
            rating: e.rating,
            domain: self.domains.decode(e.domain).unwrap_or_default().to_string(),
        }
    }

    /// All events back in string form, in log order.
    pub fn to_events(&self) -> Vec<InteractionEvent> {
        self.events.iter().map(|e| self.decode(e)).collect()
    }

    /// Keeps events satisfying `keep`, with the vocabularies unchanged so ids stay stable.
    pub fn retain(&self, mut keep: impl FnMut(&Event) -> bool) -> Self {
        let mut out = self.clone();
        out.events.retain(|e| keep(e));
        out
    }

    pub fn stats(&self) -> LogStats {
        let users: BTreeSet<u32> = self.events.iter().map(|e| e.user).collect();
        let items: BTreeSet<u32> = self.events.iter().map(|e| e.item).collect();
        let mut behaviors = BTreeMap::new();
        for e in &self.events {
            *behaviors
                .entry(self.behaviors.decode(e.behavior).unwrap_or("?").to_string())
                .or_insert(0usize) += 1;
        }
        LogStats {
            users: users.len(),
            items: items.len(),
            events: self.events.len(),
            behaviors,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogStats {
    pub users: usize,
    pub items: usize,
    pub events: usize,
    pub behaviors: BTreeMap<String, usize>,
}

impl LogStats {
    /// Fraction of the user-item matrix that is observed.
    pub fn density(&self) -> f64 {
        if self.users == 0 || self.items == 0 {
            0.0
        } else {
            self.events as f64 / (self.users as f64 * self.items as f64)
        }
    }
}
