use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Contiguous row blocks, one per machine. Machine 0 is the master; the last
/// machine absorbs any remainder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    pub machines: usize,
    /// `(row_start, row_count)` per machine.
    pub assignments: Vec<(usize, usize)>,
}

impl Partition {
    pub fn rows(rows: usize, machines: usize) -> Result<Self> {
        if machines == 0 {
            return Err(Error::Config("machine count must be at least 1".into()));
        }
        if machines > rows {
            return Err(Error::TooManyMachines { machines, rows });
        }
        let base = rows / machines;
        let assignments = (0..machines)
            .map(|m| {
                let count = if m + 1 == machines { rows - base * m } else { base };
                (base * m, count)
            })
            .collect();
        Ok(Self { machines, assignments })
    }
}

/// Splits `data` into per-machine shards.
pub fn partition(data: &Dataset, machines: usize) -> Result<(Partition, Vec<Dataset>)> {
    let part = Partition::rows(data.n(), machines)?;
    let shards = part
        .assignments
        .iter()
        .map(|&(start, count)| data.slice_rows(start, count))
        .collect::<Result<Vec<_>>>()?;
    Ok((part, shards))
}
