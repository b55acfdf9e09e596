//! Nodal time series: `bus_id,t,demand_mwh,omega_dollars[,lmp]`.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::io::income::{check_header, csv_error, csv_reader, field};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeSeriesRecord {
    pub bus: usize,
    pub t: usize,
    pub demand: f64,
    pub omega: f64,
    pub lmp: Option<f64>,
}

/// Records keyed by `(bus, t)`; timesteps are contiguous per bus.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TimeSeriesTable {
    pub records: BTreeMap<(usize, usize), TimeSeriesRecord>,
}

impl TimeSeriesTable {
    pub fn from_records(records: impl IntoIterator<Item = TimeSeriesRecord>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for r in records {
            if !(r.demand >= 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "negative demand {} at bus {} t {}",
                    r.demand, r.bus, r.t
                )));
            }
            if map.insert((r.bus, r.t), r).is_some() {
                return Err(Error::InvalidConfig(format!("duplicate record for bus {} t {}", r.bus, r.t)));
            }
        }
        let table = TimeSeriesTable { records: map };
        table.check_contiguous()?;
        Ok(table)
    }

    fn check_contiguous(&self) -> Result<()> {
        for (bus, steps) in self.timesteps_by_bus() {
            if let (Some(first), Some(last)) = (steps.first(), steps.last()) {
                if last - first + 1 != steps.len() {
                    return Err(Error::MisalignedSeries(format!("bus {bus} has gaps between t={first} and t={last}")));
                }
            }
        }
        Ok(())
    }

    pub fn buses(&self) -> Vec<usize> {
        let mut b: Vec<usize> = self.records.keys().map(|(bus, _)| *bus).collect();
        b.dedup();
        b
    }

    pub fn timesteps_by_bus(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (bus, t) in self.records.keys() {
            out.entry(*bus).or_default().push(*t);
        }
        out
    }

    pub fn for_bus(&self, bus: usize) -> impl Iterator<Item = &TimeSeriesRecord> {
        self.records.range((bus, 0)..=(bus, usize::MAX)).map(|(_, r)| r)
    }
}

pub fn parse_timeseries(source: &[u8]) -> Result<TimeSeriesTable> {
    let text = std::str::from_utf8(source).map_err(|_| Error::parse(1, 1, "input is not valid UTF-8"))?;
    let mut reader = csv_reader(text);
    let header = check_header(&mut reader, &["bus_id", "t", "demand_mwh", "omega_dollars"], &["lmp"])?;
    let has_lmp = header.len() == 5;
    let mut records = Vec::new();
    let mut seen = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let bus: usize = field(&row, 0, "bus_id")?;
        let t: usize = field(&row, 1, "t")?;
        let demand: f64 = field(&row, 2, "demand_mwh")?;
        let omega: f64 = field(&row, 3, "omega_dollars")?;
        let lmp = if has_lmp && row.get(4).is_some_and(|v| !v.is_empty()) {
            Some(field::<f64>(&row, 4, "lmp")?)
        } else {
            None
        };
        if !(demand >= 0.0) {
            return Err(Error::parse(line, 3, format!("negative demand {demand}")));
        }
        if seen.insert((bus, t), line).is_some() {
            return Err(Error::parse(line, 1, format!("duplicate record for bus {bus} t {t}")));
        }
        records.push(TimeSeriesRecord { bus, t, demand, omega, lmp });
    }
    TimeSeriesTable::from_records(records)
}
