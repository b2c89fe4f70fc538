//! Append-only byte accounting of everything that crosses a cloudlet
//! boundary.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bytes per feature scalar on the wire (32-bit floats).
pub const FEATURE_SCALAR_BYTES: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Endpoint {
    Cloudlet(usize),
    Server,
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Cloudlet(c) => write!(f, "{c}"),
            Endpoint::Server => f.write_str("server"),
        }
    }
}

impl FromStr for Endpoint {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "server" {
            return Ok(Endpoint::Server);
        }
        s.parse().map(Endpoint::Cloudlet).map_err(|_| format!("bad endpoint {s:?}"))
    }
}

impl From<Endpoint> for String {
    fn from(e: Endpoint) -> String {
        e.to_string()
    }
}

impl TryFrom<String> for Endpoint {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransferKind {
    Features,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub round: usize,
    pub src: Endpoint,
    pub dst: Endpoint,
    pub kind: TransferKind,
    pub bytes: u64,
}

impl LedgerEntry {
    /// The cloudlet on whose behalf the transfer happened: the fetcher for
    /// features, the sender for models, the receiver for server broadcasts.
    pub fn actor(&self) -> usize {
        match (self.kind, self.src, self.dst) {
            (TransferKind::Features, _, Endpoint::Cloudlet(c)) => c,
            (_, Endpoint::Cloudlet(c), _) => c,
            (_, _, Endpoint::Cloudlet(c)) => c,
            _ => usize::MAX,
        }
    }

    fn order_key(&self) -> (usize, usize, TransferKind, Endpoint, Endpoint) {
        (self.round, self.actor(), self.kind, self.src, self.dst)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CommLedger {
    entries: Vec<LedgerEntry>,
}

impl CommLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    /// Append one round's entries in canonical `(cloudlet, kind)` order, so the
    /// ledger does not depend on the order in which cloudlets finished.
    pub fn append_round(&mut self, mut round_entries: Vec<LedgerEntry>) {
        round_entries.sort_by_key(LedgerEntry::order_key);
        if let (Some(last), Some(first)) = (self.entries.last(), round_entries.first()) {
            debug_assert!(last.round <= first.round, "rounds appended out of order");
        }
        self.entries.extend(round_entries);
    }

    pub fn total_bytes(&self, kind: TransferKind) -> u64 {
        self.entries.iter().filter(|e| e.kind == kind).map(|e| e.bytes).sum()
    }

    /// Running total of `kind` bytes after each of `rounds` rounds.
    pub fn cumulative(&self, kind: TransferKind, rounds: usize) -> Vec<u64> {
        let mut per_round = vec![0u64; rounds];
        for e in self.entries.iter().filter(|e| e.kind == kind) {
            if e.round < rounds {
                per_round[e.round] += e.bytes;
            }
        }
        let mut acc = 0;
        per_round
            .into_iter()
            .map(|b| {
                acc += b;
                acc
            })
            .collect()
    }

    /// Bytes of `kind` attributed to `cloudlet` in `round`.
    pub fn bytes_for(&self, round: usize, cloudlet: usize, kind: TransferKind) -> u64 {
        self.entries
            .iter()
            .filter(|e| e.round == round && e.kind == kind && e.actor() == cloudlet)
            .map(|e| e.bytes)
            .sum()
    }

    /// CSV with header `round,src,dst,kind,bytes`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = csv::Writer::from_writer(file);
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path)?;
        let entries = r.deserialize().collect::<std::result::Result<Vec<LedgerEntry>, _>>()?;
        Ok(Self { entries })
    }
}
