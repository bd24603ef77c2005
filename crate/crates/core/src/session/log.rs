//! Session save files: one JSON header line, then one line per committed action.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Action, Result, Session, SessionConfig, SessionError};
use crate::dataset::EmbeddingDataset;

pub const SAVE_FORMAT: &str = "cvil-session";
pub const SAVE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionRecord {
    pub seq: u64,
    #[serde(flatten)]
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionHeader {
    pub format: String,
    pub version: u32,
    /// Where the dataset was loaded from, if known.
    pub dataset_path: Option<String>,
    pub instances: usize,
    pub dim: usize,
    pub classes: Vec<String>,
    pub fingerprint: String,
    pub config: SessionConfig,
}

/// FNV-1a over ids, class names and feature bits.
pub fn dataset_fingerprint(dataset: &EmbeddingDataset) -> String {
    const PRIME: u64 = 0x0100_0000_01b3;
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
    };
    for id in dataset.ids() {
        eat(id.as_bytes());
        eat(&[0]);
    }
    for name in dataset.schema().names() {
        eat(name.as_bytes());
        eat(&[0]);
    }
    for v in dataset.features() {
        eat(&v.to_bits().to_le_bytes());
    }
    format!("{h:016x}")
}

fn format_err(line: usize, e: impl std::fmt::Display) -> SessionError {
    SessionError::Format(format!("line {line}: {e}"))
}

impl Session {
    pub fn header(&self, dataset_path: Option<&str>) -> SessionHeader {
        SessionHeader {
            format: SAVE_FORMAT.to_owned(),
            version: SAVE_VERSION,
            dataset_path: dataset_path.map(str::to_owned),
            instances: self.dataset.len(),
            dim: self.dataset.dim(),
            classes: self.dataset.schema().names().to_vec(),
            fingerprint: dataset_fingerprint(&self.dataset),
            config: self.config.clone(),
        }
    }

    pub fn save<W: Write>(&self, mut writer: W, dataset_path: Option<&str>) -> Result<()> {
        let header = serde_json::to_string(&self.header(dataset_path)).map_err(|e| format_err(1, e))?;
        writeln!(writer, "{header}")?;
        for record in &self.log {
            let line = serde_json::to_string(record).map_err(|e| format_err(record.seq as usize + 1, e))?;
            writeln!(writer, "{line}")?;
        }
        writer.flush()?;
        Ok(())
    }

    /// Rebuilds a session by re-executing every logged action, retrains included.
    pub fn replay<R: BufRead>(dataset: Arc<EmbeddingDataset>, reader: R) -> Result<Session> {
        let mut lines = reader.lines().enumerate().filter_map(|(i, l)| match l {
            Ok(s) if s.trim().is_empty() => None,
            other => Some((i + 1, other)),
        });
        let (first, header) = lines.next().ok_or_else(|| SessionError::Format("empty save file".into()))?;
        let header: SessionHeader = serde_json::from_str(&header?).map_err(|e| format_err(first, e))?;
        if header.format != SAVE_FORMAT || header.version != SAVE_VERSION {
            return Err(format_err(
                first,
                format!("unsupported format {} v{}", header.format, header.version),
            ));
        }
        let fingerprint = dataset_fingerprint(&dataset);
        if header.fingerprint != fingerprint {
            return Err(format_err(
                first,
                format!("dataset fingerprint {fingerprint} does not match {}", header.fingerprint),
            ));
        }
        let mut session = Session::new(dataset, header.config);
        for (line_no, line) in lines {
            let record: ActionRecord = serde_json::from_str(&line?).map_err(|e| format_err(line_no, e))?;
            session.apply(&record).map_err(|e| match e {
                SessionError::ReplayDivergence { .. } => e,
                other => SessionError::ReplayDivergence {
                    seq: record.seq,
                    reason: other.to_string(),
                },
            })?;
        }
        Ok(session)
    }
}
