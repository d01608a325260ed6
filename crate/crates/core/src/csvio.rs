//! Plain CSV output: comma separated, one header row, LF line endings,
//! floats with nine significant digits.

use std::io::{self, Write};

/// Formats a float like C's `%.9g`.
pub fn format_g9(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf" } else { "-inf" }.to_string();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent form");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..9).contains(&exp) {
        format!("{}e{}{:02}", trim_fraction(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    } else {
        let decimals = (8 - exp).max(0) as usize;
        trim_fraction(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_fraction(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Row-oriented CSV writer with a fixed header.
pub struct CsvWriter<W: Write> {
    out: W,
    columns: usize,
}

impl<W: Write> CsvWriter<W> {
    pub fn new<S: AsRef<str>>(mut out: W, header: &[S]) -> io::Result<Self> {
        let line: Vec<&str> = header.iter().map(AsRef::as_ref).collect();
        writeln!(out, "{}", line.join(","))?;
        Ok(Self {
            out,
            columns: header.len(),
        })
    }

    /// Writes pre-formatted fields.
    pub fn record<S: AsRef<str>>(&mut self, fields: &[S]) -> io::Result<()> {
        debug_assert_eq!(fields.len(), self.columns);
        let line: Vec<&str> = fields.iter().map(AsRef::as_ref).collect();
        writeln!(self.out, "{}", line.join(","))
    }

    pub fn floats(&mut self, values: &[f64]) -> io::Result<()> {
        let fields: Vec<String> = values.iter().map(|&v| format_g9(v)).collect();
        self.record(&fields)
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}
