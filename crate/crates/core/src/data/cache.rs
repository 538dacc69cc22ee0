//! Prepared-sequence cache on top of the binary container.

use std::collections::BTreeMap;
use std::path::Path;

use crate::container::{Container, Entry, Payload};
use crate::error::{Error, Result};

use super::attrs::ItemAttributes;
use super::log::{InteractionLog, Vocab};
use super::sequence::{build_sequences, SequenceOptions, Task, UserSequence};

const KIND: &str = "prepared-sequences";

/// Sequences plus the vocabularies needed to interpret them.
#[derive(Debug, Clone, PartialEq)]
pub struct Prepared {
    pub task: Task,
    pub max_len: usize,
    pub users: Vocab,
    pub items: Vocab,
    pub behaviors: Vocab,
    pub domains: Vocab,
    pub item_domain: Vec<u32>,
    pub attr_channels: Vec<String>,
    pub attr_sizes: Vec<usize>,
    pub synthetic_time: bool,
    pub dropped_short: usize,
    pub sequences: Vec<UserSequence>,
}

impl Prepared {
    pub fn build(
        log: &InteractionLog,
        opts: &SequenceOptions,
        attrs: Option<&ItemAttributes>,
    ) -> Result<Self> {
        let set = build_sequences(log, opts, attrs)?;
        Ok(Self {
            task: opts.task,
            max_len: opts.max_len,
            users: log.users.clone(),
            items: log.items.clone(),
            behaviors: log.behaviors.clone(),
            domains: log.domains.clone(),
            item_domain: log.item_domain.clone(),
            attr_channels: attrs.map(|a| a.channels.clone()).unwrap_or_default(),
            attr_sizes: attrs.map(|a| a.sizes()).unwrap_or_default(),
            synthetic_time: log.synthetic_time,
            dropped_short: set.dropped_short,
            sequences: set.sequences,
        })
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn num_behaviors(&self) -> usize {
        self.behaviors.len()
    }

    pub fn to_container(&self) -> Result<Container> {
        let join = |v: &Vocab| v.names().join(",");
        let sizes: Vec<String> = self.attr_sizes.iter().map(|s| s.to_string()).collect();
        let meta = [
            ("kind", KIND.to_string()),
            ("task", self.task.to_string()),
            ("max_len", self.max_len.to_string()),
            ("synthetic_time", self.synthetic_time.to_string()),
            ("dropped_short", self.dropped_short.to_string()),
            ("users", join(&self.users)),
            ("items", join(&self.items)),
            ("behaviors", join(&self.behaviors)),
            ("domains", join(&self.domains)),
            ("attr_channels", self.attr_channels.join(",")),
            ("attr_sizes", sizes.join(",")),
        ]
        .iter()
        .map(|(k, v)| format!("{k}={v}\n"))
        .collect::<String>();
        let n = self.max_len;
        let rows = self.sequences.len();
        let flat = |f: &dyn Fn(&UserSequence) -> Vec<u32>| -> Vec<u32> {
            self.sequences.iter().flat_map(f).collect()
        };
        let mut c = Container::new(meta);
        c.push(Entry::new(
            "users",
            vec![rows],
            Payload::U32(self.sequences.iter().map(|s| s.user).collect()),
        )?);
        c.push(Entry::new("items", vec![rows, n], Payload::U32(flat(&|s| s.items.clone())))?);
        c.push(Entry::new("behaviors", vec![rows, n], Payload::U32(flat(&|s| s.behaviors.clone())))?);
        c.push(Entry::new(
            "timestamps",
            vec![rows, n],
            Payload::I64(self.sequences.iter().flat_map(|s| s.timestamps.clone()).collect()),
        )?);
        c.push(Entry::new(
            "labels",
            vec![rows, n],
            Payload::U32(flat(&|s| s.labels.iter().map(|&l| l as u32).collect())),
        )?);
        c.push(Entry::new("domains", vec![rows, n], Payload::U32(flat(&|s| s.domains.clone())))?);
        let channels = self.attr_channels.len();
        let mut attrs = Vec::with_capacity(channels * rows * n);
        for ch in 0..channels {
            for s in &self.sequences {
                attrs.extend_from_slice(&s.attrs[ch]);
            }
        }
        c.push(Entry::new("attrs", vec![channels, rows, n], Payload::U32(attrs))?);
        c.push(Entry::new(
            "item_domain",
            vec![self.item_domain.len()],
            Payload::U32(self.item_domain.clone()),
        )?);
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let meta: BTreeMap<&str, &str> = c.meta.lines().filter_map(|l| l.split_once('=')).collect();
        let get = |k: &str| {
            meta.get(k)
                .copied()
                .ok_or_else(|| Error::Checkpoint(format!("cache meta lacks `{k}`")))
        };
        if get("kind")? != KIND {
            return Err(Error::Checkpoint("not a prepared-sequence cache".into()));
        }
        let list = |k: &str| -> Result<Vec<String>> {
            let v = get(k)?;
            Ok(if v.is_empty() { Vec::new() } else { v.split(',').map(String::from).collect() })
        };
        let num = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Checkpoint(format!("cache meta `{k}` is not a number")))
        };
        let task: Task = get("task")?.parse()?;
        let max_len = num("max_len")?;
        let attr_channels = list("attr_channels")?;
        let attr_sizes = list("attr_sizes")?
            .iter()
            .map(|s| s.parse().map_err(|_| Error::Checkpoint("bad attr_sizes".into())))
            .collect::<Result<Vec<usize>>>()?;
        let u32s = |name: &str| -> Result<(&Vec<usize>, &Vec<u32>)> {
            let e = c.require(name)?;
            match &e.payload {
                Payload::U32(v) => Ok((&e.shape, v)),
                _ => Err(Error::Checkpoint(format!("entry {name} is not u32"))),
            }
        };
        let (_, users) = u32s("users")?;
        let rows = users.len();
        let expect = vec![rows, max_len];
        let grid = |name: &str| -> Result<&Vec<u32>> {
            let (shape, v) = u32s(name)?;
            if *shape != expect {
                return Err(Error::Checkpoint(format!("entry {name} has shape {shape:?}, expected {expect:?}")));
            }
            Ok(v)
        };
        let items = grid("items")?;
        let behaviors = grid("behaviors")?;
        let labels = grid("labels")?;
        let domains = grid("domains")?;
        let ts = match &c.require("timestamps")?.payload {
            Payload::I64(v) if v.len() == rows * max_len => v,
            _ => return Err(Error::Checkpoint("entry timestamps malformed".into())),
        };
        let (ashape, attrs) = u32s("attrs")?;
        if *ashape != vec![attr_channels.len(), rows, max_len] {
            return Err(Error::Checkpoint(format!("entry attrs has shape {ashape:?}")));
        }
        let (_, item_domain) = u32s("item_domain")?;
        let n = max_len;
        let row = |v: &[u32], r: usize| v[r * n..(r + 1) * n].to_vec();
        let sequences = (0..rows)
            .map(|r| UserSequence {
                user: users[r],
                items: row(items, r),
                behaviors: row(behaviors, r),
                timestamps: ts[r * n..(r + 1) * n].to_vec(),
                labels: labels[r * n..(r + 1) * n].iter().map(|&l| l as u8).collect(),
                attrs: (0..attr_channels.len())
                    .map(|ch| row(&attrs[ch * rows * n..], r))
                    .collect(),
                domains: row(domains, r),
            })
            .collect();
        Ok(Self {
            task,
            max_len,
            users: Vocab::new(list("users")?, 0),
            items: Vocab::new(list("items")?, 1),
            behaviors: Vocab::new(list("behaviors")?, 1),
            domains: Vocab::new(list("domains")?, 0),
            item_domain: item_domain.clone(),
            attr_channels,
            attr_sizes,
            synthetic_time: get("synthetic_time")? == "true",
            dropped_short: num("dropped_short")?,
            sequences,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        self.to_container()?.write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?)
    }
}
