//! Per-bus income and household counts.
//!
//! ```text
//! # period: annual
//! bus_id,income,households
//! 3,75000,120
//! ```

use std::collections::BTreeMap;

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncomeRecord {
    /// Aggregate income over the accounting period, $.
    pub income: f64,
    pub households: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IncomeTable {
    /// Accounting period label shared by incomes and demands.
    pub period: String,
    pub records: BTreeMap<usize, IncomeRecord>,
}

impl IncomeTable {
    /// Income vector aligned with buses `1..=n`.
    pub fn incomes(&self, n_buses: usize) -> Result<DVector<f64>> {
        let mut s = DVector::zeros(n_buses);
        for bus in 1..=n_buses {
            s[bus - 1] = self.records.get(&bus).ok_or(Error::MissingIncome(bus))?.income;
        }
        Ok(s)
    }

    /// Household counts aligned with buses `1..=n`; missing buses count 0.
    pub fn households(&self, n_buses: usize) -> Vec<u64> {
        (1..=n_buses)
            .map(|b| self.records.get(&b).map_or(0, |r| r.households))
            .collect()
    }

    /// Returns a copy with every income multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> IncomeTable {
        let mut out = self.clone();
        for r in out.records.values_mut() {
            r.income *= factor;
        }
        out
    }
}

pub const UNSPECIFIED_PERIOD: &str = "unspecified";

/// Scans leading `#` comment lines for `key: value` metadata.
pub(crate) fn comment_metadata(text: &str, key: &str) -> Option<String> {
    text.lines()
        .map(str::trim)
        .take_while(|l| l.starts_with('#') || l.is_empty())
        .filter_map(|l| l.strip_prefix('#'))
        .filter_map(|l| l.split_once(':'))
        .find(|(k, _)| k.trim().eq_ignore_ascii_case(key))
        .map(|(_, v)| v.trim().to_string())
}

pub(crate) fn csv_reader(text: &str) -> csv::Reader<&[u8]> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes())
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    Error::parse(line, 1, e.to_string())
}

pub(crate) fn check_header(reader: &mut csv::Reader<&[u8]>, required: &[&str], optional: &[&str]) -> Result<Vec<String>> {
    let header: Vec<String> = reader.headers().map_err(csv_error)?.iter().map(str::to_string).collect();
    let line = reader.position().line() as usize;
    let expected_len_ok = header.len() >= required.len() && header.len() <= required.len() + optional.len();
    let names_ok = header.iter().zip(required.iter().chain(optional)).all(|(h, e)| h == e);
    if !expected_len_ok || !names_ok {
        return Err(Error::parse(
            line.max(1),
            1,
            format!("expected header '{}', found '{}'", required.join(","), header.join(",")),
        ));
    }
    Ok(header)
}

pub(crate) fn field<T: std::str::FromStr>(record: &csv::StringRecord, idx: usize, name: &str) -> Result<T> {
    let line = record.position().map_or(0, |p| p.line() as usize);
    let raw = record.get(idx).ok_or_else(|| Error::parse(line, idx + 1, format!("missing {name}")))?;
    raw.parse()
        .map_err(|_| Error::parse(line, idx + 1, format!("invalid {name} '{raw}'")))
}

pub fn parse_income(source: &[u8]) -> Result<IncomeTable> {
    let text = std::str::from_utf8(source).map_err(|_| Error::parse(1, 1, "input is not valid UTF-8"))?;
    let period = comment_metadata(text, "period").unwrap_or_else(|| {
        log::warn!("income table declares no '# period:'; burden assumes demands share its period");
        UNSPECIFIED_PERIOD.to_string()
    });
    let mut reader = csv_reader(text);
    check_header(&mut reader, &["bus_id", "income", "households"], &[])?;
    let mut records = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let bus: usize = field(&row, 0, "bus_id")?;
        let income: f64 = field(&row, 1, "income")?;
        let households: u64 = field(&row, 2, "households")?;
        if !(income > 0.0) || !income.is_finite() {
            return Err(Error::NonPositiveIncome { bus, income });
        }
        if records.insert(bus, IncomeRecord { income, households }).is_some() {
            return Err(Error::parse(line, 1, format!("duplicate bus id {bus}")));
        }
    }
    Ok(IncomeTable { period, records })
}

pub fn write_income(table: &IncomeTable) -> String {
    let mut out = format!("# period: {}\nbus_id,income,households\n", table.period);
    for (bus, r) in &table.records {
        out.push_str(&format!("{bus},{:?},{}\n", r.income, r.households));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_rows_and_period() {
        let t = parse_income(b"# period: annual\nbus_id,income,households\n3,75000,120\n1,50000,10\n").unwrap();
        assert_eq!(t.period, "annual");
        assert_eq!(t.records[&3], IncomeRecord { income: 75000.0, households: 120 });
        assert_eq!(t.records.len(), 2);
    }

    #[test]
    fn zero_income_rejected() {
        assert!(matches!(
            parse_income(b"bus_id,income,households\n3,0,120\n"),
            Err(Error::NonPositiveIncome { bus: 3, .. })
        ));
    }

    #[test]
    fn duplicate_bus_rejected() {
        match parse_income(b"bus_id,income,households\n3,1,1\n3,2,2\n") {
            Err(Error::Parse { location, .. }) => assert_eq!(location.line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_header_and_fields() {
        assert!(matches!(parse_income(b"bus,income\n1,2\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse_income(b"bus_id,income,households\n1,abc,2\n"), Err(Error::Parse { .. })));
        assert!(matches!(parse_income(b"bus_id,income,households\n1,2\n"), Err(Error::Parse { .. })));
    }

    #[test]
    fn round_trip() {
        let t = parse_income(b"# period: monthly\nbus_id,income,households\n1,1234.5,7\n2,0.1,0\n").unwrap();
        assert_eq!(parse_income(write_income(&t).as_bytes()).unwrap(), t);
    }

    #[test]
    fn missing_bus_reported_when_aligning() {
        let t = parse_income(b"bus_id,income,households\n1,10,1\n").unwrap();
        assert!(matches!(t.incomes(2), Err(Error::MissingIncome(2))));
    }
}
