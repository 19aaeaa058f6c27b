//! Trajectory CSV files: `time_us,P_g,P_e,P_fplus,P_snail0,P_snail1,trace_err`,
//! 12 significant digits, LF line endings.

use std::io::Write;
use std::path::Path;

use crate::dynamics::{PopulationSample, Trajectory};
use crate::error::{Error, Result};

pub const CSV_COLUMNS: [&str; 7] = [
    "time_us",
    "P_g",
    "P_e",
    "P_fplus",
    "P_snail0",
    "P_snail1",
    "trace_err",
];

/// `printf("%.12g")`.
pub fn format_g12(x: f64) -> String {
    const DIGITS: i32 = 12;
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let sci = format!("{:.*e}", (DIGITS - 1) as usize, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..DIGITS).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (DIGITS - 1 - exp).max(0) as usize;
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

pub fn samples_to_csv(samples: &[PopulationSample]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).expect("in-memory write");
    for s in samples {
        let row = [
            s.time,
            s.qubit[0],
            s.qubit[1],
            s.qubit[2],
            s.snail[0],
            s.snail[1],
            s.trace_err,
        ];
        w.write_record(row.iter().map(|v| format_g12(*v)))
            .expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

/// Writes through a temporary file in the target directory, then renames,
/// so a failed run never leaves a partial file behind.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn emit_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    traj.check_invariants()?;
    write_atomic(path, &samples_to_csv(&traj.samples))
}

/// Parses a trajectory CSV, naming the column at fault on any error.
pub fn parse_csv(text: &str) -> Result<Vec<PopulationSample>> {
    let mut r = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = r
        .headers()
        .map_err(|e| Error::InvalidData(format!("unreadable header: {e}")))?
        .clone();
    let mut index = [0usize; 7];
    for (k, name) in CSV_COLUMNS.iter().enumerate() {
        index[k] = headers
            .iter()
            .position(|h| h == *name)
            .ok_or_else(|| Error::InvalidData(format!("missing column `{name}`")))?;
    }
    let mut out = Vec::new();
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| Error::InvalidData(format!("row {}: {e}", row + 1)))?;
        let mut v = [0.0; 7];
        for (k, name) in CSV_COLUMNS.iter().enumerate() {
            let cell = rec.get(index[k]).unwrap_or("");
            v[k] = cell.parse().map_err(|_| {
                Error::InvalidData(format!(
                    "column `{name}`, row {}: `{cell}` is not a number",
                    row + 1
                ))
            })?;
        }
        out.push(PopulationSample {
            time: v[0],
            qubit: [v[1], v[2], v[3]],
            snail: [v[4], v[5]],
            trace_err: v[6],
        });
    }
    if out.is_empty() {
        return Err(Error::InvalidData("no data rows".into()));
    }
    Ok(out)
}

pub fn read_csv(path: &Path) -> Result<Vec<PopulationSample>> {
    parse_csv(&std::fs::read_to_string(path)?)
}
