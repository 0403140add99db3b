use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distributed::protocol::{byte_size_for, MessageKind, WorkerMessage};
use crate::error::{Error, Result};

/// Which way a message crossed the master/worker boundary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    ToWorker(usize),
    ToMaster(usize),
}

impl Direction {
    pub fn worker(self) -> usize {
        match self {
            Direction::ToWorker(w) | Direction::ToMaster(w) => w,
        }
    }

    pub fn is_to_master(self) -> bool {
        matches!(self, Direction::ToMaster(_))
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Direction::ToWorker(w) => write!(f, "to_worker:{w}"),
            Direction::ToMaster(w) => write!(f, "to_master:{w}"),
        }
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format {
            what: "ledger direction",
            detail: s.to_string(),
        };
        let (side, id) = s.split_once(':').ok_or_else(bad)?;
        let id: usize = id.parse().map_err(|_| bad())?;
        match side {
            "to_worker" => Ok(Direction::ToWorker(id)),
            "to_master" => Ok(Direction::ToMaster(id)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    /// 0 for the start-up exchange, then the root-finding step number.
    pub iteration: usize,
    pub kind: MessageKind,
    pub direction: Direction,
    /// Payload length (reals or indices).
    pub items: usize,
    pub bytes: usize,
}

/// Every message that crossed a machine boundary during one fit.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommLedger {
    entries: Vec<LedgerEntry>,
}

impl CommLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, iteration: usize, msg: &WorkerMessage, direction: Direction) {
        self.entries.push(LedgerEntry {
            iteration,
            kind: msg.kind,
            direction,
            items: msg.payload.len(),
            bytes: msg.byte_size(),
        });
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn total_bytes(&self) -> usize {
        self.entries.iter().map(|e| e.bytes).sum()
    }

    pub fn bytes_to_master(&self) -> usize {
        self.entries.iter().filter(|e| e.direction.is_to_master()).map(|e| e.bytes).sum()
    }

    pub fn bytes_to_workers(&self) -> usize {
        self.total_bytes() - self.bytes_to_master()
    }

    pub fn message_count(&self) -> usize {
        self.entries.len()
    }

    /// Highest iteration index present.
    pub fn iterations(&self) -> usize {
        self.entries.iter().map(|e| e.iteration).max().unwrap_or(0)
    }

    /// Worker-to-master payload items sent by one worker in one iteration.
    pub fn report_items(&self, iteration: usize, worker: usize) -> usize {
        self.entries
            .iter()
            .filter(|e| e.iteration == iteration && e.direction == Direction::ToMaster(worker))
            .map(|e| e.items)
            .sum()
    }

    /// Bytes per iteration, indexed from 0.
    pub fn bytes_per_iteration(&self) -> Vec<usize> {
        let mut out = vec![0; self.iterations() + 1];
        for e in &self.entries {
            out[e.iteration] += e.bytes;
        }
        if self.entries.is_empty() {
            out.clear();
        }
        out
    }

    /// Whether every entry's byte count matches its payload shape.
    pub fn is_sound(&self) -> bool {
        self.entries.iter().all(|e| e.bytes == byte_size_for(e.items))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["iteration", "kind", "direction", "bytes"])?;
        for e in &self.entries {
            out.write_record([
                e.iteration.to_string(),
                e.kind.name().to_string(),
                e.direction.to_string(),
                e.bytes.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("ledger csv", e))?;
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Reads a ledger written by [`write_csv`](Self::write_csv). Item counts
    /// are recovered from the byte column.
    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let mut entries = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let field = |i: usize| rec.get(i).unwrap_or("");
            let bad = |detail: String| Error::Format {
                what: "ledger csv",
                detail,
            };
            let iteration = field(0).parse().map_err(|_| bad(format!("iteration '{}'", field(0))))?;
            let kind = MessageKind::from_name(field(1)).ok_or_else(|| bad(format!("kind '{}'", field(1))))?;
            let direction = field(2).parse()?;
            let bytes: usize = field(3).parse().map_err(|_| bad(format!("bytes '{}'", field(3))))?;
            if bytes < byte_size_for(0) || (bytes - byte_size_for(0)) % 8 != 0 {
                return Err(bad(format!("byte count {bytes} matches no payload shape")));
            }
            entries.push(LedgerEntry {
                iteration,
                kind,
                direction,
                items: (bytes - byte_size_for(0)) / 8,
                bytes,
            });
        }
        Ok(Self { entries })
    }
}
