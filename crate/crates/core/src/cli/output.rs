//! Comma-separated result tables. Floats are written with 17 significant
//! digits so that every value reads back bit-exactly.

use std::path::Path;

use crate::error::{GrapeError, Result};
use crate::optim::IterationRecord;
use crate::propagation::PulseSequence;

use super::commands::ProfileRow;

pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> GrapeError {
    GrapeError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.write_record(&row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// One row per iteration; the wall-clock column only when `timings` is set,
/// since it would break run-to-run reproducibility of the file.
pub fn write_iterations(path: &Path, records: &[IterationRecord], timings: bool) -> Result<()> {
    let mut header = vec!["iteration", "fidelity", "grad_norm", "step", "evaluations"];
    if timings {
        header.push("ms");
    }
    write_table(
        path,
        &header,
        records.iter().map(|r| {
            let mut row = vec![
                r.iteration.to_string(),
                fmt_f64(r.fidelity),
                fmt_f64(r.grad_max_norm),
                fmt_f64(r.step),
                r.evaluations.to_string(),
            ];
            if timings {
                row.push(format!("{:.3}", r.wall_ms));
            }
            row
        }),
    )
}

/// One row per time step: start time in seconds, then each control in Hz.
pub fn write_waveform(path: &Path, pulse: &PulseSequence, dt: f64) -> Result<()> {
    let names: Vec<String> = match pulse.n_controls() {
        2 => vec!["cx".into(), "cy".into()],
        k => (1..=k).map(|i| format!("c{i}")).collect(),
    };
    let mut header = vec!["t"];
    header.extend(names.iter().map(String::as_str));
    write_table(
        path,
        &header,
        (0..pulse.n_steps()).map(|n| {
            let mut row = vec![fmt_f64(n as f64 * dt)];
            row.extend(pulse.row(n).iter().map(|&c| fmt_f64(c)));
            row
        }),
    )
}

pub fn write_profile(path: &Path, rows: &[ProfileRow]) -> Result<()> {
    write_table(
        path,
        &["offset_hz", "sz"],
        rows.iter().map(|r| vec![fmt_f64(r.offset_hz), fmt_f64(r.sz)]),
    )
}

/// Reads a waveform table written by [`write_waveform`]; returns the pulse
/// and the time step implied by the `t` column (`None` for a single row).
pub fn read_waveform(path: &Path) -> Result<(PulseSequence, Option<f64>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| io_err(path, e))?;
    let mut rows = Vec::new();
    let mut times = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| io_err(path, e))?;
        let values = rec
            .iter()
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| GrapeError::Parse {
                path: path.display().to_string(),
                reason: format!("row {}: {e}", i + 2),
            })?;
        if values.len() < 2 {
            return Err(GrapeError::Parse {
                path: path.display().to_string(),
                reason: format!("row {}: expected a time and at least one control", i + 2),
            });
        }
        times.push(values[0]);
        rows.push(values[1..].to_vec());
    }
    let dt = (times.len() > 1).then(|| times[1] - times[0]);
    Ok((PulseSequence::from_rows(&rows)?, dt))
}
