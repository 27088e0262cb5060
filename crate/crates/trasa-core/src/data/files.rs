//! Versioned on-disk formats for processed data.
//!
//! - Instances: header line, then one instance per line as space-separated
//!   prefix indices, a tab, and the label index.
//! - Vocabulary: header line, then one raw item identifier per line; the
//!   line number (from zero) is the dense index.
//! - Stats: header line, then `key=value` lines.
//! - Event logs: headerless tab-separated (session, item, timestamp) rows,
//!   directly ingestable.
//!
//! Instance and vocabulary files round-trip bit-exactly so cached artifacts
//! can be reused safely.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use std::collections::BTreeMap;

use crate::data::pipeline::{Instance, ProcessedDataset, Vocab};
use crate::error::{Error, Result};

pub const INSTANCES_HEADER: &str = "# trasa-instances v1";
pub const VOCAB_HEADER: &str = "# trasa-vocab v1";
pub const STATS_HEADER: &str = "# trasa-stats v1";

fn read_versioned(path: &Path, header: &str) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some(first) if first == header => {}
        Some(first) => {
            return Err(Error::Format(format!(
                "{}: expected header {header:?}, found {first:?}",
                path.display()
            )))
        }
        None => return Err(Error::Format(format!("{} is empty", path.display()))),
    }
    Ok(lines.map(str::to_string).collect())
}

pub fn write_instances(path: &Path, instances: &[Instance]) -> Result<()> {
    let mut out = String::with_capacity(instances.len() * 16 + 32);
    out.push_str(INSTANCES_HEADER);
    out.push('\n');
    for inst in instances {
        if inst.prefix.is_empty() {
            return Err(Error::Contract("cannot persist an instance with an empty prefix".into()));
        }
        let mut first = true;
        for v in &inst.prefix {
            if !first {
                out.push(' ');
            }
            write!(out, "{v}").expect("string writes cannot fail");
            first = false;
        }
        writeln!(out, "\t{}", inst.label).expect("string writes cannot fail");
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_instances(path: &Path) -> Result<Vec<Instance>> {
    let lines = read_versioned(path, INSTANCES_HEADER)?;
    let mut instances = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parse = |s: &str| -> Result<usize> {
            s.parse().map_err(|_| {
                Error::Format(format!("{}: line {}: bad index {s:?}", path.display(), i + 2))
            })
        };
        let (prefix_part, label_part) = line.split_once('\t').ok_or_else(|| {
            Error::Format(format!("{}: line {}: missing tab separator", path.display(), i + 2))
        })?;
        let prefix = prefix_part.split(' ').map(parse).collect::<Result<Vec<_>>>()?;
        if prefix.is_empty() {
            return Err(Error::Format(format!(
                "{}: line {}: empty prefix",
                path.display(),
                i + 2
            )));
        }
        instances.push(Instance { prefix, label: parse(label_part)? });
    }
    Ok(instances)
}

pub fn write_vocab(path: &Path, vocab: &Vocab) -> Result<()> {
    let mut out = String::new();
    out.push_str(VOCAB_HEADER);
    out.push('\n');
    for id in vocab.ids() {
        if id.contains('\n') || id.contains('\r') {
            return Err(Error::Format(format!(
                "item identifier {id:?} contains a line break and cannot be persisted"
            )));
        }
        out.push_str(id);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_vocab(path: &Path) -> Result<Vocab> {
    Vocab::from_ids(read_versioned(path, VOCAB_HEADER)?)
}

/// Write the dataset's summary as `key=value` lines.
pub fn write_stats(path: &Path, ds: &ProcessedDataset) -> Result<()> {
    let s = &ds.stats;
    let text = format!(
        "{STATS_HEADER}\nclicks={}\nsessions={}\nitems={}\navg_length={}\nvocab={}\ntrain_instances={}\nvalid_instances={}\ntest_instances={}\noov_dropped={}\n",
        s.clicks,
        s.sessions,
        s.items,
        s.avg_length,
        ds.vocab.len(),
        ds.train.len(),
        ds.valid.len(),
        ds.test.len(),
        ds.oov_dropped,
    );
    fs::write(path, text)?;
    Ok(())
}

pub fn read_stats(path: &Path) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for line in read_versioned(path, STATS_HEADER)? {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Format(format!("{}: stats line without '=': {line:?}", path.display()))
        })?;
        map.insert(k.to_string(), v.to_string());
    }
    Ok(map)
}

/// Write index sessions as a headerless tab-separated event log with
/// globally increasing timestamps, so ingestion reproduces the sessions
/// exactly.
pub fn write_event_log(path: &Path, sessions: &[Vec<usize>]) -> Result<()> {
    let mut out = String::new();
    let mut ts = 0i64;
    for (i, session) in sessions.iter().enumerate() {
        for item in session {
            writeln!(out, "s{i}\t{item}\t{ts}").expect("string writes cannot fail");
            ts += 1;
        }
    }
    if out.is_empty() {
        return Err(Error::Contract("refusing to write an empty event log".into()));
    }
    fs::write(path, out)?;
    Ok(())
}
