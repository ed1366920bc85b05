//! Append-only session event logs and the materialised record store.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use prefchat_core::data::{read_records, write_records, DialogueRecord, RecordStatus, Split};
use prefchat_core::generation::ScoredCandidate;
use serde::{Deserialize, Serialize};

use crate::session::{Command, Mode, Session};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    Created { mode: Mode, at: u64 },
    Applied { command: Command, candidates: Vec<ScoredCandidate>, at: u64 },
    Reviewed { verdict: Verdict, reviewer_id: String, at: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Accept,
    Reject,
}

#[derive(Debug, Default, Clone, PartialEq, Eq, Deserialize)]
pub struct ExportFilter {
    pub split: Option<Split>,
    /// Inclusive lower bound on `created_at` (Unix seconds).
    pub from: Option<u64>,
    /// Exclusive upper bound on `created_at`.
    pub to: Option<u64>,
}

impl ExportFilter {
    fn matches(&self, r: &DialogueRecord) -> bool {
        let at = r.created_at.unwrap_or(0);
        r.status == RecordStatus::Accepted
            && self.split.is_none_or(|s| s == r.split)
            && self.from.is_none_or(|f| at >= f)
            && self.to.is_none_or(|t| at < t)
    }
}

pub struct Store {
    dir: Option<PathBuf>,
    records: BTreeMap<String, DialogueRecord>,
}

impl Store {
    /// Keeps everything in memory.
    pub fn ephemeral() -> Self {
        Self { dir: None, records: BTreeMap::new() }
    }

    /// Opens (creating if needed) a store under `dir` and replays its
    /// session logs.
    pub fn open(dir: &Path) -> anyhow::Result<(Self, Vec<Session>)> {
        fs::create_dir_all(dir.join("sessions"))?;
        let path = dir.join("records.jsonl");
        let records = if path.exists() { read_records(File::open(&path)?)? } else { Vec::new() };
        let store = Self { dir: Some(dir.to_path_buf()), records: records.into_iter().map(|r| (r.id.clone(), r)).collect() };
        let mut sessions = Vec::new();
        let mut entries: Vec<_> = fs::read_dir(dir.join("sessions"))?.collect::<Result<_, _>>()?;
        entries.sort_by_key(|e| e.file_name());
        for entry in entries {
            let p = entry.path();
            if p.extension().is_some_and(|e| e == "jsonl") {
                let id = p.file_stem().unwrap().to_string_lossy().into_owned();
                sessions.push(replay(&id, &p)?);
            }
        }
        Ok((store, sessions))
    }

    pub fn log(&self, session: &str, event: &Event) -> anyhow::Result<()> {
        if let Some(dir) = &self.dir {
            let mut f = OpenOptions::new().create(true).append(true).open(dir.join("sessions").join(format!("{session}.jsonl")))?;
            let mut line = serde_json::to_string(event)?;
            line.push('\n');
            f.write_all(line.as_bytes())?;
            f.sync_data()?;
        }
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&DialogueRecord> {
        self.records.get(id)
    }

    pub fn put(&mut self, record: DialogueRecord) -> anyhow::Result<()> {
        record.validate()?;
        self.records.insert(record.id.clone(), record);
        self.flush()
    }

    fn flush(&self) -> anyhow::Result<()> {
        if let Some(dir) = &self.dir {
            let tmp = dir.join("records.jsonl.tmp");
            let recs: Vec<DialogueRecord> = self.records.values().cloned().collect();
            let mut f = File::create(&tmp)?;
            write_records(&mut f, &recs)?;
            f.sync_all()?;
            fs::rename(tmp, dir.join("records.jsonl"))?;
        }
        Ok(())
    }

    pub fn export(&self, filter: &ExportFilter) -> Vec<DialogueRecord> {
        self.records.values().filter(|r| filter.matches(r)).cloned().collect()
    }
}

fn replay(id: &str, path: &Path) -> anyhow::Result<Session> {
    let mut session: Option<Session> = None;
    for (n, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let event: Event = serde_json::from_str(&line).map_err(|e| anyhow::anyhow!("{}:{}: {e}", path.display(), n + 1))?;
        match (event, session.as_mut()) {
            (Event::Created { mode, .. }, None) => session = Some(Session::new(id, mode)),
            (Event::Applied { command, candidates, .. }, Some(s)) => {
                let prepared = s.prepare(command).map_err(|e| anyhow::anyhow!("{}:{}: {e}", path.display(), n + 1))?;
                s.commit(prepared, candidates);
            }
            (Event::Reviewed { verdict, .. }, Some(s)) => s.state = verdict.into(),
            _ => anyhow::bail!("{}:{}: event out of order", path.display(), n + 1),
        }
    }
    session.ok_or_else(|| anyhow::anyhow!("{}: empty session log", path.display()))
}

impl Verdict {
    /// Record status after this vote, or `None` if the vote is not allowed.
    /// A single reject outweighs any number of accepts.
    pub fn apply_to(self, status: RecordStatus) -> Option<RecordStatus> {
        use RecordStatus::*;
        match (status, self) {
            (UnderReview | Accepted, Verdict::Accept) => Some(Accepted),
            (UnderReview | Accepted | Rejected, Verdict::Reject) => Some(Rejected),
            _ => None,
        }
    }
}

impl From<Verdict> for crate::session::SessionState {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Accept => Self::Accepted,
            Verdict::Reject => Self::Rejected,
        }
    }
}

impl From<Verdict> for RecordStatus {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Accept => Self::Accepted,
            Verdict::Reject => Self::Rejected,
        }
    }
}
