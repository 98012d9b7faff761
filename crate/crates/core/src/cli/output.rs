use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::runner::TrajectoryTrace;

pub const TRACE_HEADER: [&str; 14] = [
    "step",
    "theta1",
    "theta2",
    "L1",
    "L2",
    "w1",
    "w2",
    "d1",
    "d2",
    "d_norm",
    "r",
    "cos_theta",
    "pareto_fail",
    "skipped",
];

pub const MATRIX_HEADER: [&str; 9] =
    ["method", "a1", "a2", "init1", "init2", "final_loss", "oracle_loss", "gap", "converged"];

/// `printf("%.9g")`: nine significant digits, trailing zeros dropped.
pub fn fmt_g9(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_g9).unwrap_or_default()
}

fn flag(b: bool) -> &'static str {
    if b {
        "1"
    } else {
        "0"
    }
}

/// Two-task trace as CSV with [`TRACE_HEADER`].
pub fn write_trace_csv<W: Write>(trace: &TrajectoryTrace, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER).map_err(io_err)?;
    for r in &trace.records {
        if r.theta.len() != 2 || r.losses.len() != 2 || r.weights.len() != 2 {
            return Err(Error::InvalidConfig("trace CSV needs two tasks and two parameters".into()));
        }
        let row = [
            r.step.to_string(),
            fmt_g9(r.theta[0]),
            fmt_g9(r.theta[1]),
            fmt_g9(r.losses[0]),
            fmt_g9(r.losses[1]),
            fmt_g9(r.weights[0]),
            fmt_g9(r.weights[1]),
            fmt_g9(r.d[0]),
            fmt_g9(r.d[1]),
            fmt_g9(r.d_norm),
            opt(r.imbalance),
            opt(r.cos_theta),
            flag(r.pareto_failure).into(),
            flag(r.skipped).into(),
        ];
        w.write_record(&row).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok(())
}

/// One parsed row of a trace CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub theta: [f64; 2],
    pub losses: [f64; 2],
    pub weights: [f64; 2],
    pub d: [f64; 2],
    pub d_norm: f64,
    pub r: Option<f64>,
    pub cos_theta: Option<f64>,
    pub pareto_fail: bool,
    pub skipped: bool,
}

pub fn read_trace_csv<R: Read>(input: R) -> Result<Vec<TraceRow>> {
    let mut rdr = csv::Reader::from_reader(input);
    let header = rdr.headers().map_err(io_err)?.clone();
    if header.iter().ne(TRACE_HEADER) {
        return Err(Error::InvalidConfig(format!(
            "unexpected trace header `{}`",
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(io_err)?;
        let line = n + 2;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|_| {
                Error::InvalidConfig(format!("line {line}: bad number `{}` in {}", &rec[i], TRACE_HEADER[i]))
            })
        };
        let maybe = |i: usize| -> Result<Option<f64>> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                num(i).map(Some)
            }
        };
        let boolean = |i: usize| -> Result<bool> {
            match &rec[i] {
                "0" => Ok(false),
                "1" => Ok(true),
                v => Err(Error::InvalidConfig(format!("line {line}: bad flag `{v}` in {}", TRACE_HEADER[i]))),
            }
        };
        rows.push(TraceRow {
            step: rec[0].parse().map_err(|_| Error::InvalidConfig(format!("line {line}: bad step `{}`", &rec[0])))?,
            theta: [num(1)?, num(2)?],
            losses: [num(3)?, num(4)?],
            weights: [num(5)?, num(6)?],
            d: [num(7)?, num(8)?],
            d_norm: num(9)?,
            r: maybe(10)?,
            cos_theta: maybe(11)?,
            pareto_fail: boolean(12)?,
            skipped: boolean(13)?,
        });
    }
    Ok(rows)
}

fn io_err(e: csv::Error) -> Error {
    Error::InvalidConfig(e.to_string())
}
