//! Event-log ingestion: delimiter-separated rows of (session, item,
//! timestamp) grouped into chronologically ordered sessions.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use std::collections::HashMap;

use crate::error::{Error, Result};

/// One session as ingested: raw item identifiers in click order, the
/// timestamp of its final event, and the order of its first appearance in
/// the input file (the tie-breaker when timestamps collide).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawSession {
    pub items: Vec<String>,
    pub last_ts: i64,
    pub file_order: usize,
}

/// Whether the input starts with a header row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeaderMode {
    /// Headerless if the first row's timestamp column parses as an integer;
    /// with named column references a header is assumed present.
    #[default]
    Auto,
    Present,
    Absent,
}

/// A column picked either by zero-based position or by header name.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ColumnRef {
    Index(usize),
    Name(String),
}

/// Input-file dialect.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestFormat {
    pub delimiter: char,
    pub header: HeaderMode,
    pub session_col: ColumnRef,
    pub item_col: ColumnRef,
    pub time_col: ColumnRef,
}

impl Default for IngestFormat {
    fn default() -> Self {
        Self {
            delimiter: ',',
            header: HeaderMode::Auto,
            session_col: ColumnRef::Index(0),
            item_col: ColumnRef::Index(1),
            time_col: ColumnRef::Index(2),
        }
    }
}

/// Ingestion outcome: sessions plus row accounting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestReport {
    pub sessions: Vec<RawSession>,
    /// Data rows seen (excluding any header).
    pub rows: usize,
    /// Rows skipped: wrong field count, empty key fields, unparseable time.
    pub malformed: usize,
}

/// Read and group an event log from disk.
pub fn ingest(path: &Path, format: &IngestFormat) -> Result<IngestReport> {
    let file = File::open(path)
        .map_err(|e| Error::Input(format!("cannot open {}: {e}", path.display())))?;
    let lines = BufReader::new(file).lines().collect::<std::io::Result<Vec<_>>>()?;
    ingest_lines(lines.iter().map(String::as_str), format)
}

/// Core of [`ingest`], usable on any line source.
pub fn ingest_lines<'a, I>(lines: I, format: &IngestFormat) -> Result<IngestReport>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut rows_iter = lines.into_iter().filter(|l| !l.trim().is_empty()).peekable();
    let uses_names = [&format.session_col, &format.item_col, &format.time_col]
        .iter()
        .any(|c| matches!(c, ColumnRef::Name(_)));
    if uses_names && format.header == HeaderMode::Absent {
        return Err(Error::Config(
            "columns referenced by name require a header row".into(),
        ));
    }

    // Decide on the header and resolve column positions.
    let header_present = match format.header {
        HeaderMode::Present => true,
        HeaderMode::Absent => false,
        HeaderMode::Auto => {
            if uses_names {
                true
            } else if let Some(first) = rows_iter.peek() {
                // Headerless only if the declared time column already holds
                // an integer in the very first row.
                let fields = split_row(first, format.delimiter);
                match resolve(&format.time_col, None, &fields) {
                    Ok(t) => fields[t].trim().parse::<i64>().is_err(),
                    Err(_) => true,
                }
            } else {
                false
            }
        }
    };

    let header_fields: Option<Vec<String>> = if header_present {
        match rows_iter.next() {
            Some(h) => Some(split_row(h, format.delimiter)),
            None => return Err(Error::Input("input holds no rows at all".into())),
        }
    } else {
        None
    };
    let col = |r: &ColumnRef| resolve(r, header_fields.as_deref(), &[]);
    let (s_col, i_col, t_col) = match header_fields.as_deref() {
        Some(_) => (col(&format.session_col)?, col(&format.item_col)?, col(&format.time_col)?),
        None => (
            index_only(&format.session_col)?,
            index_only(&format.item_col)?,
            index_only(&format.time_col)?,
        ),
    };

    // Group events by session id in first-appearance order.
    let mut order: HashMap<String, usize> = HashMap::new();
    let mut events: Vec<Vec<(i64, usize, String)>> = Vec::new();
    let mut rows = 0usize;
    let mut malformed = 0usize;
    for (row_idx, line) in rows_iter.enumerate() {
        rows += 1;
        let fields = split_row(line, format.delimiter);
        let width = s_col.max(i_col).max(t_col);
        if fields.len() <= width {
            malformed += 1;
            continue;
        }
        let sid = fields[s_col].trim();
        let item = fields[i_col].trim();
        let ts = fields[t_col].trim().parse::<i64>();
        let Ok(ts) = ts else {
            malformed += 1;
            continue;
        };
        if sid.is_empty() || item.is_empty() {
            malformed += 1;
            continue;
        }
        let slot = *order.entry(sid.to_string()).or_insert_with(|| {
            events.push(Vec::new());
            events.len() - 1
        });
        events[slot].push((ts, row_idx, item.to_string()));
    }

    if rows == malformed {
        return Err(Error::Input(format!(
            "no parseable event rows ({rows} rows, {malformed} malformed)"
        )));
    }

    let sessions = events
        .into_iter()
        .enumerate()
        .map(|(file_order, mut evs)| {
            evs.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
            let last_ts = evs.last().expect("non-empty by construction").0;
            RawSession {
                items: evs.into_iter().map(|(_, _, item)| item).collect(),
                last_ts,
                file_order,
            }
        })
        .collect();

    Ok(IngestReport { sessions, rows, malformed })
}

fn split_row(line: &str, delimiter: char) -> Vec<String> {
    line.trim_end_matches(['\r', '\n'])
        .split(delimiter)
        .map(str::to_string)
        .collect()
}

fn resolve(r: &ColumnRef, header: Option<&[String]>, first_row: &[String]) -> Result<usize> {
    match r {
        ColumnRef::Index(i) => {
            if !first_row.is_empty() && *i >= first_row.len() {
                return Err(Error::Config(format!(
                    "column index {i} exceeds the {} fields of the first row",
                    first_row.len()
                )));
            }
            Ok(*i)
        }
        ColumnRef::Name(name) => {
            let header = header.ok_or_else(|| {
                Error::Config(format!("column '{name}' referenced by name but no header row"))
            })?;
            header
                .iter()
                .position(|h| h.trim() == name)
                .ok_or_else(|| Error::Config(format!("no column named '{name}' in the header")))
        }
    }
}

fn index_only(r: &ColumnRef) -> Result<usize> {
    match r {
        ColumnRef::Index(i) => Ok(*i),
        ColumnRef::Name(n) => Err(Error::Config(format!(
            "column '{n}' referenced by name but the input is headerless"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fmt() -> IngestFormat {
        IngestFormat::default()
    }

    fn run(text: &str, format: &IngestFormat) -> Result<IngestReport> {
        ingest_lines(text.lines(), format)
    }

    #[test]
    fn rows_group_into_sessions_in_click_order() {
        let report = run("s1,a,1\ns1,b,2\n", &fmt()).unwrap();
        assert_eq!(report.sessions.len(), 1);
        assert_eq!(report.sessions[0].items, vec!["a", "b"]);
        assert_eq!(report.sessions[0].last_ts, 2);
        assert_eq!(report.rows, 2);
        assert_eq!(report.malformed, 0);
    }

    #[test]
    fn out_of_order_timestamps_are_sorted() {
        let report = run("s1,b,2\ns1,a,1\n", &fmt()).unwrap();
        assert_eq!(report.sessions[0].items, vec!["a", "b"]);
    }

    #[test]
    fn equal_timestamps_resolve_by_file_order() {
        let report = run("s1,b,7\ns1,a,7\ns1,c,7\n", &fmt()).unwrap();
        assert_eq!(report.sessions[0].items, vec!["b", "a", "c"]);
    }

    #[test]
    fn sessions_keep_first_appearance_order_and_file_order_index() {
        let report = run("s2,x,5\ns1,y,1\ns2,z,6\n", &fmt()).unwrap();
        assert_eq!(report.sessions.len(), 2);
        assert_eq!(report.sessions[0].items, vec!["x", "z"]);
        assert_eq!(report.sessions[0].file_order, 0);
        assert_eq!(report.sessions[1].items, vec!["y"]);
        assert_eq!(report.sessions[1].file_order, 1);
    }

    #[test]
    fn malformed_rows_are_counted_and_skipped() {
        let text = "s1,a,1\nbroken row\ns1,b,oops\ns1,,3\ns1,c,4\n";
        let report = run(text, &fmt()).unwrap();
        assert_eq!(report.sessions[0].items, vec!["a", "c"]);
        assert_eq!(report.rows, 5);
        assert_eq!(report.malformed, 3);
    }

    #[test]
    fn zero_parseable_rows_is_an_input_error() {
        assert!(matches!(run("", &fmt()), Err(Error::Input(_))));
        assert!(matches!(run("garbage\nmore garbage\n", &fmt()), Err(Error::Input(_))));
    }

    #[test]
    fn auto_mode_detects_and_skips_a_header() {
        let report = run("session_id,item_id,timestamp\ns1,a,1\ns1,b,2\n", &fmt()).unwrap();
        assert_eq!(report.sessions[0].items, vec!["a", "b"]);
        assert_eq!(report.rows, 2);
    }

    #[test]
    fn named_columns_resolve_through_the_header() {
        let mut format = fmt();
        format.session_col = ColumnRef::Name("sid".into());
        format.item_col = ColumnRef::Name("item".into());
        format.time_col = ColumnRef::Name("ts".into());
        let report = run("ts,item,sid\n9,a,s1\n11,b,s1\n", &format).unwrap();
        assert_eq!(report.sessions[0].items, vec!["a", "b"]);

        format.time_col = ColumnRef::Name("missing".into());
        assert!(matches!(
            run("ts,item,sid\n9,a,s1\n", &format),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn named_columns_without_a_header_are_a_config_error() {
        let mut format = fmt();
        format.header = HeaderMode::Absent;
        format.item_col = ColumnRef::Name("item".into());
        assert!(matches!(run("s1,a,1\n", &format), Err(Error::Config(_))));
    }

    #[test]
    fn tab_delimited_input_works() {
        let mut format = fmt();
        format.delimiter = '\t';
        let report = run("s1\ta\t1\ns1\tb\t2\n", &format).unwrap();
        assert_eq!(report.sessions[0].items, vec!["a", "b"]);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.csv");
        std::fs::write(&path, "s1,a,1\ns1,b,2\ns2,c,3\n").unwrap();
        let report = ingest(&path, &fmt()).unwrap();
        assert_eq!(report.sessions.len(), 2);
        assert!(matches!(
            ingest(Path::new("/nonexistent/events.csv"), &fmt()),
            Err(Error::Input(_))
        ));
    }
}
