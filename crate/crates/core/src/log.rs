//! Session log files: `session_id,order_index,item_id,feedback`, one
//! interaction per line, sorted by `order_index` within a session.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mdp::{Feedback, Item, LoggedDataset, RewardSpec};

pub const HEADER: &str = "session_id,order_index,item_id,feedback";

pub fn write_session_log(path: &Path, data: &LoggedDataset) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let mut emit = || -> std::io::Result<()> {
        writeln!(out, "{HEADER}")?;
        for (sid, traj) in data.trajectories().iter().enumerate() {
            for (k, t) in traj.transitions().iter().enumerate() {
                writeln!(out, "{sid},{k},{},{}", t.action, t.feedback.as_str())?;
            }
        }
        out.flush()
    };
    emit().map_err(|e| Error::io(path, e))
}

/// Reads raw sessions in order of first appearance. A header line is optional.
pub fn read_sessions(path: &Path) -> Result<Vec<Vec<(Item, Feedback)>>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| csv_err(path, 0, e))?;

    let mut order: Vec<String> = Vec::new();
    let mut rows: HashMap<String, Vec<(u64, Item, Feedback)>> = HashMap::new();
    for (lineno, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, lineno + 1, e))?;
        let parse_err = |msg: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno + 1,
            msg,
        };
        if rec.len() != 4 {
            return Err(parse_err(format!("expected 4 fields, found {}", rec.len())));
        }
        if lineno == 0 && &rec[0] == "session_id" {
            continue;
        }
        let order_index: u64 = rec[1]
            .parse()
            .map_err(|_| parse_err(format!("bad order_index {:?}", &rec[1])))?;
        let item: u32 = rec[2]
            .parse()
            .map_err(|_| parse_err(format!("bad item_id {:?}", &rec[2])))?;
        let feedback =
            Feedback::parse(&rec[3]).ok_or_else(|| parse_err(format!("bad feedback {:?}", &rec[3])))?;
        let sid = rec[0].to_string();
        let entry = rows.entry(sid.clone()).or_insert_with(|| {
            order.push(sid);
            Vec::new()
        });
        entry.push((order_index, Item(item), feedback));
    }

    Ok(order
        .into_iter()
        .map(|sid| {
            let mut events = rows.remove(&sid).unwrap_or_default();
            events.sort_by_key(|e| e.0);
            events.into_iter().map(|(_, i, f)| (i, f)).collect()
        })
        .collect())
}

pub fn read_session_log(
    path: &Path,
    catalog_size: usize,
    reward_spec: RewardSpec,
) -> Result<LoggedDataset> {
    let sessions = read_sessions(path)?;
    LoggedDataset::from_sessions(&sessions, catalog_size, reward_spec)
}

fn csv_err(path: &Path, line: usize, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{other:?}"),
        },
    }
}
