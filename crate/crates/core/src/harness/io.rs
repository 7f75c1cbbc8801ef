//! CSV import and export of `(t, censored, t_trunc)` triples.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::likelihood::{Dataset, Observation};

const HEADER: [&str; 3] = ["t", "censored", "t_trunc"];

fn malformed(line: usize, reason: impl Into<String>) -> Error {
    Error::MalformedRow { line, reason: reason.into() }
}

/// Parses CSV text with header `t,censored,t_trunc`. Times are multiplied
/// by `time_scale`. Line numbers in errors are 1-based and count the header.
pub fn parse_csv(text: &str, time_scale: f64) -> Result<Dataset> {
    if !(time_scale > 0.0 && time_scale.is_finite()) {
        return Err(Error::InvalidConfig(format!("time scale must be positive, got {time_scale}")));
    }
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((hline, header)) = lines.next() else {
        return Err(Error::EmptyFile);
    };
    let cols: Vec<&str> = header.split(',').map(|c| c.trim()).collect();
    if cols != HEADER {
        return Err(malformed(hline + 1, format!("expected header 't,censored,t_trunc', got '{}'", header.trim())));
    }
    let mut observations = Vec::new();
    for (idx, line) in lines {
        let lineno = idx + 1;
        let fields: Vec<&str> = line.split(',').map(|f| f.trim()).collect();
        if fields.len() != 3 {
            return Err(malformed(lineno, format!("expected 3 fields, found {}", fields.len())));
        }
        let num = |s: &str, name: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|_| malformed(lineno, format!("{name} '{s}' is not a number")))
        };
        let t = num(fields[0], "t")? * time_scale;
        let censored = match fields[1] {
            "0" => false,
            "1" => true,
            other => return Err(malformed(lineno, format!("censored must be 0 or 1, got '{other}'"))),
        };
        let t_trunc = num(fields[2], "t_trunc")? * time_scale;
        let obs = Observation::new(t, censored, t_trunc).map_err(|e| malformed(lineno, e.to_string()))?;
        observations.push(obs);
    }
    if observations.is_empty() {
        return Err(Error::EmptyFile);
    }
    Ok(Dataset::new(observations))
}

/// Reads and validates a dataset file.
pub fn ingest_csv(path: &Path, time_scale: f64) -> Result<Dataset> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    parse_csv(&text, time_scale)
}

/// Writes a dataset in the same format `ingest_csv` reads.
pub fn write_csv<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    writeln!(out, "{}", HEADER.join(","))?;
    for o in dataset.observations() {
        writeln!(out, "{},{},{}", o.t(), u8::from(o.censored()), o.t_trunc())?;
    }
    Ok(())
}
