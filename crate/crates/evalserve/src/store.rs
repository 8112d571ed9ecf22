//! Append-only event log with snapshot compaction in one directory.
//!
//! `events.jsonl` holds one JSON event per line, each written with a single
//! `write` and fsynced before the caller proceeds. `snapshot.json` holds the
//! state as of the last compaction and is replaced by rename.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::ServiceError;
use crate::model::{RatingRecord, Session, TestRecord};

const LOG: &str = "events.jsonl";
const SNAPSHOT: &str = "snapshot.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum Event {
    TestCreated(TestRecord),
    SessionOpened(Session),
    RatingSubmitted(RatingRecord),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub events: Vec<Event>,
}

#[derive(Debug)]
pub struct Store {
    dir: PathBuf,
    log: File,
    appended: usize,
}

impl Store {
    /// Opens or creates the store and returns every persisted event in
    /// order. A torn final log line from an interrupted write is dropped.
    pub fn open(dir: &Path) -> Result<(Self, Vec<Event>), ServiceError> {
        std::fs::create_dir_all(dir)?;
        let mut events = match std::fs::read(dir.join(SNAPSHOT)) {
            Ok(bytes) => serde_json::from_slice::<Snapshot>(&bytes)?.events,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Vec::new(),
            Err(e) => return Err(e.into()),
        };
        let log_path = dir.join(LOG);
        let mut valid_len = 0u64;
        if log_path.exists() {
            let reader = BufReader::new(File::open(&log_path)?);
            for line in reader.split(b'\n') {
                let line = line?;
                match serde_json::from_slice::<Event>(&line) {
                    Ok(ev) => {
                        events.push(ev);
                        valid_len += line.len() as u64 + 1;
                    }
                    Err(_) => {
                        log::warn!("dropping torn record at byte {valid_len} of {}", log_path.display());
                        break;
                    }
                }
            }
        }
        let log = OpenOptions::new().create(true).append(true).open(&log_path)?;
        if log.metadata()?.len() > valid_len {
            log.set_len(valid_len)?;
        }
        Ok((
            Self {
                dir: dir.to_path_buf(),
                log,
                appended: 0,
            },
            events,
        ))
    }

    pub fn append(&mut self, event: &Event) -> Result<(), ServiceError> {
        let mut line = serde_json::to_vec(event)?;
        line.push(b'\n');
        self.log.write_all(&line)?;
        self.log.sync_data()?;
        self.appended += 1;
        Ok(())
    }

    /// Events appended since open or the last compaction.
    pub fn appended(&self) -> usize {
        self.appended
    }

    /// Writes `events` as the new snapshot and empties the log.
    pub fn compact(&mut self, events: &[Event]) -> Result<(), ServiceError> {
        let tmp = self.dir.join(format!("{SNAPSHOT}.tmp"));
        {
            let mut f = File::create(&tmp)?;
            serde_json::to_writer(
                &mut f,
                &Snapshot {
                    events: events.to_vec(),
                },
            )?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, self.dir.join(SNAPSHOT))?;
        self.log.set_len(0)?;
        self.log.sync_all()?;
        self.appended = 0;
        Ok(())
    }
}
