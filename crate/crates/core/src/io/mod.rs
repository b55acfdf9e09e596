//! Case, income, time-series and report file formats.

pub mod case;
pub mod income;
pub mod report;
pub mod timeseries;

pub use case::{parse_case, write_case_json, CaseFormat, UNLIMITED_FLOW_MW};
pub use income::{parse_income, write_income, IncomeRecord, IncomeTable};
pub use report::{parse_report_json, sha256_hex, write_report, Report, ReportFormat, RunMetadata, Table, Value};
pub use timeseries::{parse_timeseries, TimeSeriesRecord, TimeSeriesTable};
