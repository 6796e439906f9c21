use serde::{Deserialize, Serialize};

use super::dataset::TimingDataset;
use super::stats::median;
use super::FitOptions;
use crate::error::{Error, Result};

/// Fewest records a sector needs before its median is trusted.
pub const MIN_SECTOR_RECORDS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Normal,
    Traffic,
    C60,
}

/// Labels every record of one sector by its ratio to the sector median:
/// above `c60_ratio` is C60, above `traffic_ratio` is traffic. Returns
/// `(record index, label)` pairs in record order.
pub fn classify_c60(ds: &TimingDataset, sector: usize, opts: &FitOptions) -> Result<Vec<(usize, Label)>> {
    let idx: Vec<usize> = (0..ds.len()).filter(|&i| ds.records[i].sector == sector).collect();
    if idx.len() < MIN_SECTOR_RECORDS {
        return Err(Error::Fit(format!(
            "sector {sector} has {} records, at least {MIN_SECTOR_RECORDS} are needed",
            idx.len()
        )));
    }
    let times: Vec<f64> = idx.iter().map(|&i| ds.records[i].sector_time).collect();
    let med = median(&times);
    Ok(idx
        .into_iter()
        .zip(times)
        .map(|(i, t)| {
            let label = if t > opts.c60_ratio * med {
                Label::C60
            } else if t > opts.traffic_ratio * med {
                Label::Traffic
            } else {
                Label::Normal
            };
            (i, label)
        })
        .collect())
}

/// Labels of all records, aligned with `ds.records`.
pub fn classify_all(ds: &TimingDataset, opts: &FitOptions) -> Result<Vec<Label>> {
    let mut sectors: Vec<usize> = ds.records.iter().map(|r| r.sector).collect();
    sectors.sort_unstable();
    sectors.dedup();
    let mut labels = vec![Label::Normal; ds.len()];
    for s in sectors {
        for (i, l) in classify_c60(ds, s, opts)? {
            labels[i] = l;
        }
    }
    Ok(labels)
}
