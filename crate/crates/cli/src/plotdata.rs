//! Turn a sweep CSV into a long-format `series,x,y,y_stddev` file.

use std::io::{Read, Write};

use log::warn;

use crate::CliError;

pub const PLOT_HEADER: [&str; 4] = ["series", "x", "y", "y_stddev"];

/// Copy the seed-mean rows of a sweep CSV into tidy form, y in Mbit/s.
///
/// Returns the number of distinct series written. An empty sweep, or a
/// point whose seeds all failed, is reported with a warning.
pub fn emit_plot_data<R: Read, W: Write>(input: R, output: W) -> Result<usize, CliError> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| CliError::SweepCsv(format!("missing column '{name}'")))
    };
    let (kind, series, x_field) = (col("kind")?, col("series")?, col("x_field")?);
    let (y, sd) = (col("mean_ue_throughput_bps")?, col("throughput_stddev_bps")?);

    let mut w = csv::Writer::from_writer(output);
    w.write_record(PLOT_HEADER)?;
    let mut seen: Vec<String> = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if &rec[kind] != "mean" {
            continue;
        }
        let x = col(&rec[x_field])?;
        if rec[y].is_empty() {
            warn!("series '{}' has no data at x = {}", &rec[series], &rec[x]);
            continue;
        }
        let mbps = |s: &str| -> Result<String, CliError> {
            let v: f64 = s
                .parse()
                .map_err(|_| CliError::SweepCsv(format!("bad number '{s}'")))?;
            Ok(format!("{:.4}", v / 1e6))
        };
        w.write_record([rec[series].to_string(), rec[x].to_string(), mbps(&rec[y])?, mbps(&rec[sd])?])?;
        if !seen.iter().any(|s| s == &rec[series]) {
            seen.push(rec[series].to_string());
        }
    }
    if seen.is_empty() {
        warn!("sweep contains no usable points; plot data has only a header");
    }
    w.flush().map_err(|source| CliError::Io {
        path: "<plot data>".into(),
        source,
    })?;
    Ok(seen.len())
}
