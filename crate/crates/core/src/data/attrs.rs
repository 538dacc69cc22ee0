use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::ingest::valid_id;
use super::log::Vocab;

/// Per-item categorical attributes, one id per channel. Id 0 means absent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ItemAttributes {
    pub channels: Vec<String>,
    pub vocabs: Vec<Vocab>,
    /// `table[item][channel]`, indexed by item id (row 0 is the pad item).
    pub table: Vec<Vec<u32>>,
}

impl ItemAttributes {
    /// Parses `item_id,<channel>,...` text against an item vocabulary.
    /// Rows for unknown items are skipped.
    pub fn parse(text: &str, items: &Vocab) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim_end_matches('\r')));
        let header = match lines.next() {
            Some((_, h)) => h,
            None => return Ok(Self::none(items.len())),
        };
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"item_id") || cols.len() < 2 {
            return Err(Error::Parse {
                line: 1,
                msg: "attribute header must be `item_id,<channel>,...`".into(),
            });
        }
        let channels: Vec<String> = cols[1..].iter().map(|s| s.to_string()).collect();
        let mut rows: Vec<(u32, Vec<String>)> = Vec::new();
        for (line, raw) in lines {
            if raw.is_empty() {
                continue;
            }
            let f: Vec<&str> = raw.split(',').collect();
            if f.len() != cols.len() {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected {} fields, found {}", cols.len(), f.len()),
                });
            }
            for v in &f[1..] {
                if !v.is_empty() && !valid_id(v) {
                    return Err(Error::Parse {
                        line,
                        msg: format!("invalid attribute value `{v}`"),
                    });
                }
            }
            if let Some(item) = items.encode(f[0]) {
                rows.push((item, f[1..].iter().map(|s| s.to_string()).collect()));
            }
        }
        let vocabs: Vec<Vocab> = (0..channels.len())
            .map(|c| Vocab::new(rows.iter().map(|r| r.1[c].as_str()).filter(|s| !s.is_empty()), 1))
            .collect();
        let mut table = vec![vec![0u32; channels.len()]; items.len() + 1];
        for (item, vals) in rows {
            for (c, v) in vals.iter().enumerate() {
                table[item as usize][c] = vocabs[c].encode(v).unwrap_or(0);
            }
        }
        Ok(Self {
            channels,
            vocabs,
            table,
        })
    }

    pub fn read(path: &Path, items: &Vocab) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, items)
    }

    /// No channels at all.
    pub fn none(num_items: usize) -> Self {
        Self {
            channels: Vec::new(),
            vocabs: Vec::new(),
            table: vec![Vec::new(); num_items + 1],
        }
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Vocabulary size per channel, excluding the absent id.
    pub fn sizes(&self) -> Vec<usize> {
        self.vocabs.iter().map(Vocab::len).collect()
    }

    pub fn of(&self, item: u32) -> &[u32] {
        &self.table[item as usize]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_channels_and_absent_values() {
        let items = Vocab::new(["m1", "m2", "m3"], 1);
        let text = "item_id,genre,decade\nm2,drama,1990s\nm1,comedy,\nzz,noir,1940s\n";
        let a = ItemAttributes::parse(text, &items).unwrap();
        assert_eq!(a.channels, vec!["genre", "decade"]);
        assert_eq!(a.sizes(), vec![2, 1]);
        assert_eq!(a.of(1), &[1, 0]);
        assert_eq!(a.of(2), &[2, 1]);
        assert_eq!(a.of(3), &[0, 0]);
        assert!(ItemAttributes::parse("id,genre\n", &items).is_err());
    }
}
