use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

use super::log::{InteractionEvent, InteractionLog, DEFAULT_BEHAVIOR, DEFAULT_DOMAIN};

pub const CSV_HEADER: &str = "user_id,item_id,behavior,timestamp,rating,domain";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    CanonicalCsv,
    MovielensDat,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical_csv" => Ok(Format::CanonicalCsv),
            "movielens_dat" => Ok(Format::MovielensDat),
            other => Err(Error::Config(format!(
                "unknown format `{other}` (expected canonical_csv or movielens_dat)"
            ))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::CanonicalCsv => "canonical_csv",
            Format::MovielensDat => "movielens_dat",
        })
    }
}

/// Ids must be non-empty runs of `[A-Za-z0-9_:-]`.
pub fn valid_id(s: &str) -> bool {
    !s.is_empty()
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b':' | b'-'))
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn id_field(line: usize, what: &str, s: &str) -> Result<String> {
    if valid_id(s) {
        Ok(s.to_string())
    } else {
        Err(parse_err(line, format!("invalid {what} `{s}`")))
    }
}

fn timestamp_field(line: usize, s: &str) -> Result<i64> {
    let t: i64 = s
        .parse()
        .map_err(|_| parse_err(line, format!("invalid timestamp `{s}`")))?;
    if t < 0 {
        return Err(parse_err(line, format!("negative timestamp {t}")));
    }
    Ok(t)
}

fn rating_field(line: usize, s: &str) -> Result<f64> {
    let r: f64 = s
        .parse()
        .map_err(|_| parse_err(line, format!("invalid rating `{s}`")))?;
    if !r.is_finite() {
        return Err(parse_err(line, format!("non-finite rating `{s}`")));
    }
    Ok(r)
}

/// Parses canonical CSV text. Rows without a timestamp get per-user event
/// indices instead; a file must either give every timestamp or none.
pub fn parse_canonical_csv(text: &str) -> Result<InteractionLog> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
    match lines.next() {
        Some((_, h)) if h.trim_end_matches('\r') == CSV_HEADER => {}
        Some((_, h)) => {
            return Err(parse_err(1, format!("expected header `{CSV_HEADER}`, found `{h}`")))
        }
        None => return Ok(InteractionLog::empty()),
    }
    let mut rows: Vec<(InteractionEvent, bool)> = Vec::new();
    for (line, raw) in lines {
        let raw = raw.trim_end_matches('\r');
        if raw.is_empty() {
            continue;
        }
        if raw == CSV_HEADER {
            return Err(parse_err(line, "duplicate header"));
        }
        let f: Vec<&str> = raw.split(',').collect();
        if f.len() != 6 {
            return Err(parse_err(line, format!("expected 6 fields, found {}", f.len())));
        }
        let behavior = if f[2].is_empty() { DEFAULT_BEHAVIOR } else { f[2] };
        let domain = if f[5].is_empty() { DEFAULT_DOMAIN } else { f[5] };
        let has_time = !f[3].is_empty();
        let mut e = InteractionEvent::new(
            id_field(line, "user_id", f[0])?,
            id_field(line, "item_id", f[1])?,
            if has_time { timestamp_field(line, f[3])? } else { 0 },
        )
        .with_behavior(behavior)
        .with_domain(domain);
        if !f[4].is_empty() {
            e.rating = Some(rating_field(line, f[4])?);
        }
        rows.push((e, has_time));
    }
    let timed = rows.iter().filter(|r| r.1).count();
    let synthetic = !rows.is_empty() && timed == 0;
    if timed != 0 && timed != rows.len() {
        return Err(Error::Data(format!(
            "{} of {} rows lack a timestamp; give all or none",
            rows.len() - timed,
            rows.len()
        )));
    }
    let mut events: Vec<InteractionEvent> = rows.into_iter().map(|r| r.0).collect();
    if synthetic {
        let mut seen: std::collections::HashMap<String, i64> = std::collections::HashMap::new();
        for e in &mut events {
            let k = seen.entry(e.user_id.clone()).or_insert(0);
            e.timestamp = *k;
            *k += 1;
        }
    }
    InteractionLog::from_events(events, synthetic)
}

/// Parses MovieLens `UserID::MovieID::Rating::Timestamp` rows.
pub fn parse_movielens_dat(text: &str) -> Result<InteractionLog> {
    let mut events = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let raw = raw.trim_end_matches('\r');
        if raw.is_empty() {
            continue;
        }
        let f: Vec<&str> = raw.split("::").collect();
        if f.len() != 4 {
            return Err(parse_err(line, format!("expected 4 `::`-separated fields, found {}", f.len())));
        }
        let e = InteractionEvent::new(
            id_field(line, "UserID", f[0])?,
            id_field(line, "MovieID", f[1])?,
            timestamp_field(line, f[3])?,
        )
        .with_rating(rating_field(line, f[2])?);
        events.push(e);
    }
    InteractionLog::from_events(events, false)
}

pub fn ingest(path: &Path, format: Format) -> Result<InteractionLog> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        Format::CanonicalCsv => parse_canonical_csv(&text),
        Format::MovielensDat => parse_movielens_dat(&text),
    }
    .map_err(|e| match e {
        Error::Parse { line, msg } => Error::Parse {
            line,
            msg: format!("{}: {msg}", path.display()),
        },
        other => other,
    })
}

/// Canonical CSV text for a log, one row per event in log order.
pub fn to_canonical_csv(log: &InteractionLog) -> String {
    let mut out = String::with_capacity(32 * (log.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for e in log.to_events() {
        let rating = e.rating.map(|r| r.to_string()).unwrap_or_default();
        let ts = if log.synthetic_time { String::new() } else { e.timestamp.to_string() };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            e.user_id, e.item_id, e.behavior, ts, rating, e.domain
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_only_is_empty() {
        let log = parse_canonical_csv(&format!("{CSV_HEADER}\n")).unwrap();
        assert!(log.is_empty());
        assert!(log.items.is_empty() && log.users.is_empty());
    }

    #[test]
    fn single_row_defaults() {
        let log = parse_canonical_csv(&format!("{CSV_HEADER}\nu1,i1,pv,100,,\n")).unwrap();
        assert_eq!(log.len(), 1);
        let e = log.decode(&log.events()[0]);
        assert_eq!(e.behavior, "pv");
        assert_eq!(e.rating, None);
        assert_eq!(e.domain, "default");
        assert_eq!(e.timestamp, 100);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = format!("{CSV_HEADER}\nu1,i1,,1,,\nu1,i 2,,2,,\n");
        match parse_canonical_csv(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let dup = format!("{CSV_HEADER}\nu1,i1,,1,,\n{CSV_HEADER}\n");
        match parse_canonical_csv(&dup) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("duplicate header"));
            }
            other => panic!("{other:?}"),
        }
        assert!(parse_canonical_csv("user,item\n").is_err());
        assert!(parse_canonical_csv(&format!("{CSV_HEADER}\nu1,i1,,x,,\n")).is_err());
    }

    #[test]
    fn missing_timestamps_become_event_indices() {
        let text = format!("{CSV_HEADER}\nu1,a,,,,\nu2,b,,,,\nu1,c,,,,\n");
        let log = parse_canonical_csv(&text).unwrap();
        assert!(log.synthetic_time);
        let ts: Vec<i64> = log.events().iter().map(|e| e.timestamp).collect();
        assert_eq!(ts, vec![0, 1, 0]);
        let mixed = format!("{CSV_HEADER}\nu1,a,,5,,\nu1,b,,,,\n");
        assert!(parse_canonical_csv(&mixed).is_err());
    }

    #[test]
    fn movielens_rows() {
        let log = parse_movielens_dat("1::1193::5::978300760\n1::661::3::978302109\n").unwrap();
        assert_eq!(log.len(), 2);
        let e = log.decode(&log.events()[1]);
        assert_eq!((e.item_id.as_str(), e.rating), ("661", Some(3.0)));
        assert!(parse_movielens_dat("1::2::3\n").is_err());
    }

    #[test]
    fn csv_round_trip() {
        let text = format!("{CSV_HEADER}\nu1,a,buy,5,4.5,books\nu1,b,pv,7,,books\nu0,c,default,1,,music\n");
        let log = parse_canonical_csv(&text).unwrap();
        let again = parse_canonical_csv(&to_canonical_csv(&log)).unwrap();
        assert_eq!(log, again);
    }
}
