//! Comparison rows and their CSV form.

use std::io::{Read, Write};

use super::ExperimentError;
use crate::analysis::{LatencyKind, Policy};

pub const CSV_HEADER: [&str; 15] = [
    "scenario",
    "policy",
    "n",
    "r",
    "lambda",
    "ET_sim",
    "ET_ci",
    "EC_sim",
    "EC_ci",
    "ET_analytic",
    "ET_kind",
    "EC_analytic_lo",
    "EC_analytic_hi",
    "capacity",
    "stable",
];

/// Simulated and analytic metrics for one sweep point. `None` analytic fields
/// are unavailable for the point.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub scenario: String,
    pub policy: Policy,
    pub n: u32,
    pub r: u32,
    pub lambda: f64,
    pub et_sim: f64,
    pub et_ci: f64,
    pub ec_sim: f64,
    pub ec_ci: f64,
    pub et_analytic: Option<f64>,
    pub et_kind: LatencyKind,
    pub ec_analytic_lo: Option<f64>,
    pub ec_analytic_hi: Option<f64>,
    pub capacity: Option<f64>,
    pub stable: bool,
}

/// Formats `x` with 6 significant digits in the shortest of fixed or
/// scientific notation, trailing zeros removed.
pub fn fmt_sig6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "NaN".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format has an exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..6).contains(&exp) {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_sig6).unwrap_or_default()
}

impl ComparisonRow {
    fn fields(&self) -> [String; 15] {
        [
            self.scenario.clone(),
            self.policy.as_str().to_string(),
            self.n.to_string(),
            self.r.to_string(),
            fmt_sig6(self.lambda),
            fmt_sig6(self.et_sim),
            fmt_sig6(self.et_ci),
            fmt_sig6(self.ec_sim),
            fmt_sig6(self.ec_ci),
            opt(self.et_analytic),
            self.et_kind.as_str().to_string(),
            opt(self.ec_analytic_lo),
            opt(self.ec_analytic_hi),
            opt(self.capacity),
            self.stable.to_string(),
        ]
    }
}

pub fn emit_csv<W: Write>(rows: &[ComparisonRow], out: W) -> Result<(), ExperimentError> {
    if rows.is_empty() {
        return Err(ExperimentError::Runtime("no rows to write".into()));
    }
    let io = |e: csv::Error| ExperimentError::Io(e.to_string());
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER).map_err(io)?;
    for row in rows {
        w.write_record(row.fields()).map_err(io)?;
    }
    w.flush().map_err(|e| ExperimentError::Io(e.to_string()))
}

pub fn csv_string(rows: &[ComparisonRow]) -> Result<String, ExperimentError> {
    let mut buf = Vec::new();
    emit_csv(rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// Reads rows written by [`emit_csv`].
pub fn parse_csv<R: Read>(input: R) -> Result<Vec<ComparisonRow>, ExperimentError> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader
        .headers()
        .map_err(|e| ExperimentError::Io(e.to_string()))?
        .clone();
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(parse_err(1, "unexpected header"));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let rec = record.map_err(|e| parse_err(line, &e.to_string()))?;
        let f = |k: usize| rec.get(k).unwrap_or("");
        let num = |k: usize| -> Result<f64, ExperimentError> {
            f(k).parse()
                .map_err(|_| parse_err(line, &format!("bad {}: {:?}", CSV_HEADER[k], f(k))))
        };
        let opt_num = |k: usize| -> Result<Option<f64>, ExperimentError> {
            if f(k).is_empty() {
                Ok(None)
            } else {
                num(k).map(Some)
            }
        };
        let int = |k: usize| -> Result<u32, ExperimentError> {
            f(k).parse()
                .map_err(|_| parse_err(line, &format!("bad {}: {:?}", CSV_HEADER[k], f(k))))
        };
        rows.push(ComparisonRow {
            scenario: f(0).to_string(),
            policy: f(1).parse().map_err(|e: String| parse_err(line, &e))?,
            n: int(2)?,
            r: int(3)?,
            lambda: num(4)?,
            et_sim: num(5)?,
            et_ci: num(6)?,
            ec_sim: num(7)?,
            ec_ci: num(8)?,
            et_analytic: opt_num(9)?,
            et_kind: f(10).parse().map_err(|e: String| parse_err(line, &e))?,
            ec_analytic_lo: opt_num(11)?,
            ec_analytic_hi: opt_num(12)?,
            capacity: opt_num(13)?,
            stable: f(14)
                .parse()
                .map_err(|_| parse_err(line, &format!("bad stable: {:?}", f(14))))?,
        });
    }
    Ok(rows)
}

fn parse_err(line: usize, message: &str) -> ExperimentError {
    ExperimentError::Parse {
        line: Some(line),
        message: message.to_string(),
    }
}
