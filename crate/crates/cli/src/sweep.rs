//! Sweep specifications, the built-in figure presets and the parallel runner.
//!
//! A spec file is line oriented:
//!
//! ```text
//! name = fig4
//! x = blocker_density: 0.05, 0.1, 0.3
//! vary = connectivity_mode: Sc, Mc
//! set = slot_format_policy=Pf
//! seeds = 5
//! ```
//!
//! `vary` may repeat; the sweep covers the cross product of all `vary`
//! lists and the `x` values.

use std::io::Write;
use std::path::Path;

use iab_core::engine::{self, MetricsReport};
use iab_core::scenario::{validate_config, Config};
use log::{info, warn};
use rayon::prelude::*;

use crate::{apply_overrides, read_file, CliError};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub name: String,
    pub x_field: String,
    pub x_values: Vec<String>,
    /// Fields crossed against each other; each combination is one series.
    pub vary: Vec<(String, Vec<String>)>,
    /// Fixed `key=value` settings applied on top of the base config.
    pub fixed: Vec<String>,
    pub seeds: usize,
}

fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect()
}

fn strs(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

const DENSITIES: &[&str] = &["0.05", "0.1", "0.2", "0.3", "0.4", "0.5"];

impl SweepSpec {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut spec = SweepSpec {
            name: "sweep".into(),
            x_field: String::new(),
            x_values: Vec::new(),
            vary: Vec::new(),
            fixed: Vec::new(),
            seeds: 5,
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| CliError::Spec { line: i + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected 'key = value', got '{line}'")))?;
            let value = value.trim();
            match key.trim() {
                "name" => spec.name = value.to_string(),
                "seeds" => spec.seeds = value.parse().map_err(|_| err(format!("bad seed count '{value}'")))?,
                "set" => spec.fixed.push(value.to_string()),
                k @ ("x" | "vary") => {
                    let (field, list) = value
                        .split_once(':')
                        .ok_or_else(|| err(format!("expected 'field: v1, v2', got '{value}'")))?;
                    let (field, list) = (field.trim().to_string(), split_list(list));
                    if k == "x" {
                        spec.x_field = field;
                        spec.x_values = list;
                    } else {
                        spec.vary.push((field, list));
                    }
                }
                other => return Err(err(format!("unknown key '{other}'"))),
            }
        }
        spec.validate()?;
        Ok(spec)
    }

    pub fn preset(name: &str) -> Result<Self, CliError> {
        let spec = match name {
            "fig3" => SweepSpec {
                name: "fig3".into(),
                x_field: "session_rate_dl".into(),
                x_values: strs(&["0.1", "0.2", "0.3", "0.4", "0.5", "0.6", "0.7", "0.8", "0.9"]),
                vary: vec![
                    ("association_scheme".into(), strs(&["MinHops", "MaxRsrp"])),
                    ("slot_format_policy".into(), strs(&["Static5050", "Pf", "Wpf"])),
                    ("num_iab".into(), strs(&["3", "7"])),
                ],
                fixed: strs(&["session_rate_ul=0.2", "connectivity_mode=Sc", "beam_config=AllSingle"]),
                seeds: 5,
            },
            "fig4" => SweepSpec {
                name: "fig4".into(),
                x_field: "blocker_density".into(),
                x_values: strs(DENSITIES),
                vary: vec![("connectivity_mode".into(), strs(&["Sc", "Mc", "ScFs", "ScFsScan"]))],
                fixed: strs(&[
                    "session_rate_dl=0.5",
                    "session_rate_ul=0.5",
                    "slot_format_policy=Pf",
                    "association_scheme=MaxRsrp",
                    "beam_config=AllSingle",
                ]),
                seeds: 5,
            },
            "fig5" => SweepSpec {
                name: "fig5".into(),
                x_field: "blocker_density".into(),
                x_values: strs(DENSITIES),
                vary: vec![
                    ("beam_config".into(), strs(&["AllSingle", "DgnbMulti", "AllMulti"])),
                    ("association_scheme".into(), strs(&["MinHops", "MaxRsrp"])),
                ],
                fixed: strs(&[
                    "session_rate_dl=0.5",
                    "session_rate_ul=0.5",
                    "slot_format_policy=Pf",
                    "connectivity_mode=ScFsScan",
                ]),
                seeds: 5,
            },
            other => return Err(CliError::UnknownPreset(other.to_string())),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Every named field must exist and every listed value must parse.
    pub fn validate(&self) -> Result<(), CliError> {
        let err = |message: String| CliError::Spec { line: 0, message };
        if self.x_field.is_empty() || self.x_values.is_empty() {
            return Err(err("missing 'x = field: values'".into()));
        }
        if self.seeds == 0 {
            return Err(err("seeds must be at least 1".into()));
        }
        let mut probe = Config::default();
        apply_overrides(&mut probe, &self.fixed)?;
        let lists = std::iter::once((&self.x_field, &self.x_values)).chain(self.vary.iter().map(|(f, v)| (f, v)));
        for (field, values) in lists {
            if values.is_empty() {
                return Err(err(format!("'{field}' has no values")));
            }
            for v in values {
                probe.set(field, v).map_err(|e| CliError::Config(vec![e]))?;
            }
            if field == "seed" {
                return Err(err("seed is set per run; use 'seeds = N'".into()));
            }
        }
        Ok(())
    }

    /// Defaults, then this spec's fixed settings, then the config file and
    /// `--set` overrides.
    pub fn base_config(&self, path: Option<&Path>, sets: &[String]) -> Result<Config, CliError> {
        let mut cfg = Config::default();
        apply_overrides(&mut cfg, &self.fixed)?;
        if let Some(p) = path {
            cfg.apply_kv_str(&read_file(p)?).map_err(CliError::Config)?;
        }
        apply_overrides(&mut cfg, sets)?;
        validate_config(cfg).map_err(CliError::Config)
    }

    /// Series in row-major order over `vary`; each is a list of (field, value).
    pub fn series(&self) -> Vec<Vec<(String, String)>> {
        let mut out: Vec<Vec<(String, String)>> = vec![Vec::new()];
        for (field, values) in &self.vary {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    values.iter().map(move |v| {
                        let mut p = prefix.clone();
                        p.push((field.clone(), v.clone()));
                        p
                    })
                })
                .collect();
        }
        out
    }
}

pub fn series_label(series: &[(String, String)]) -> String {
    if series.is_empty() {
        return "all".into();
    }
    series.iter().map(|(_, v)| v.as_str()).collect::<Vec<_>>().join("/")
}

/// One line of the sweep CSV: a single run, or the seed mean of a point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub mean_row: bool,
    pub series: String,
    pub series_values: Vec<String>,
    pub x: String,
    /// Seed of a run row; unused on a mean row.
    pub seed: u64,
    pub mean_bps: Option<f64>,
    pub dl_bps: Option<f64>,
    pub ul_bps: Option<f64>,
    pub stddev_bps: Option<f64>,
    pub completed: f64,
    pub pending: f64,
    pub switches: f64,
    pub status: String,
    pub config: String,
}

struct Job {
    series: usize,
    x: usize,
    cfg: Result<Config, CliError>,
}

fn run_job(cfg: &Result<Config, CliError>) -> Result<MetricsReport, String> {
    let cfg = cfg.as_ref().map_err(|e| e.to_string())?;
    engine::run(cfg.clone()).map_err(|e| e.to_string())
}

fn sample_stddev(xs: &[f64]) -> Option<f64> {
    match xs.len() {
        0 => None,
        1 => Some(0.0),
        n => {
            let m = xs.iter().sum::<f64>() / n as f64;
            Some((xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt())
        }
    }
}

fn mean(xs: impl Iterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Run every (series, x, seed) point of `spec` on top of `base`.
///
/// `base` is used as given; build it with [`SweepSpec::base_config`] to
/// pick up the spec's fixed settings.
///
/// Seeds are `base.seed, base.seed + 1, ...`. Rows come back grouped by
/// series, then x, with the seed runs followed by their mean row, in the
/// same order whatever the worker count.
pub fn run_sweep(spec: &SweepSpec, base: &Config, workers: usize) -> Result<Vec<SweepRow>, CliError> {
    spec.validate()?;
    let series = spec.series();
    let mut jobs = Vec::new();
    for (si, s) in series.iter().enumerate() {
        for (xi, x) in spec.x_values.iter().enumerate() {
            for k in 0..spec.seeds {
                let mut cfg = base.clone();
                let mut sets: Vec<String> = s.iter().map(|(f, v)| format!("{f}={v}")).collect();
                sets.push(format!("{}={x}", spec.x_field));
                let cfg = apply_overrides(&mut cfg, &sets).and_then(|_| {
                    cfg.seed = base.seed + k as u64;
                    validate_config(cfg).map_err(CliError::Config)
                });
                jobs.push(Job { series: si, x: xi, cfg });
            }
        }
    }
    info!("{}: {} runs on {} workers", spec.name, jobs.len(), workers.max(1));
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    let results: Vec<Result<MetricsReport, String>> = pool.install(|| jobs.par_iter().map(|j| run_job(&j.cfg)).collect());

    let mut rows = Vec::new();
    for (chunk, res) in jobs.chunks(spec.seeds).zip(results.chunks(spec.seeds)) {
        let s = &series[chunk[0].series];
        let label = series_label(s);
        let series_values: Vec<String> = s.iter().map(|(_, v)| v.clone()).collect();
        let x = spec.x_values[chunk[0].x].clone();
        let mut point = Vec::new();
        for (job, r) in chunk.iter().zip(res) {
            let config = job.cfg.as_ref().map(|c| c.to_provenance()).unwrap_or_default();
            let seed = job.cfg.as_ref().map(|c| c.seed).unwrap_or(0);
            let row = match r {
                Ok(rep) => {
                    let t = &rep.throughput;
                    SweepRow {
                        mean_row: false,
                        series: label.clone(),
                        series_values: series_values.clone(),
                        x: x.clone(),
                        seed,
                        mean_bps: t.mean_ue_throughput_bps,
                        dl_bps: t.mean_dl_throughput_bps,
                        ul_bps: t.mean_ul_throughput_bps,
                        stddev_bps: None,
                        completed: t.completed_sessions as f64,
                        pending: t.pending_sessions as f64,
                        switches: rep.switches as f64,
                        status: if t.insufficient_data { "insufficient_data".into() } else { "ok".into() },
                        config,
                    }
                }
                Err(e) => {
                    warn!("{label} x={x} seed={seed}: {e}");
                    SweepRow {
                        mean_row: false,
                        series: label.clone(),
                        series_values: series_values.clone(),
                        x: x.clone(),
                        seed,
                        mean_bps: None,
                        dl_bps: None,
                        ul_bps: None,
                        stddev_bps: None,
                        completed: 0.0,
                        pending: 0.0,
                        switches: 0.0,
                        status: format!("error: {e}"),
                        config,
                    }
                }
            };
            point.push(row);
        }
        let ok: Vec<&SweepRow> = point.iter().filter(|r| r.mean_bps.is_some()).collect();
        let means: Vec<f64> = ok.iter().filter_map(|r| r.mean_bps).collect();
        let summary = SweepRow {
            mean_row: true,
            series: label.clone(),
            series_values: series_values.clone(),
            x: x.clone(),
            seed: 0,
            mean_bps: mean(means.iter().copied()),
            dl_bps: mean(ok.iter().filter_map(|r| r.dl_bps)),
            ul_bps: mean(ok.iter().filter_map(|r| r.ul_bps)),
            stddev_bps: sample_stddev(&means),
            completed: mean(ok.iter().map(|r| r.completed)).unwrap_or(0.0),
            pending: mean(ok.iter().map(|r| r.pending)).unwrap_or(0.0),
            switches: mean(ok.iter().map(|r| r.switches)).unwrap_or(0.0),
            status: if ok.len() == point.len() {
                "ok".into()
            } else {
                format!("{} of {} seeds usable", ok.len(), point.len())
            },
            config: point
                .first()
                .map(|r| r.config.clone())
                .unwrap_or_default(),
        };
        rows.extend(point);
        rows.push(summary);
    }
    Ok(rows)
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.3}")).unwrap_or_default()
}

pub const RESULT_COLUMNS: &[&str] = &[
    "seed",
    "mean_ue_throughput_bps",
    "mean_dl_throughput_bps",
    "mean_ul_throughput_bps",
    "throughput_stddev_bps",
    "completed_sessions",
    "pending_sessions",
    "switches",
    "status",
    "config",
];

/// Write the sweep CSV: `kind, series, x_field, <vary fields>, <x field>,`
/// followed by [`RESULT_COLUMNS`].
pub fn write_sweep_csv<W: Write>(spec: &SweepSpec, rows: &[SweepRow], out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["kind".to_string(), "series".into(), "x_field".into()];
    header.extend(spec.vary.iter().map(|(f, _)| f.clone()));
    header.push(spec.x_field.clone());
    header.extend(RESULT_COLUMNS.iter().map(|c| c.to_string()));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![
            if r.mean_row { "mean" } else { "run" }.to_string(),
            r.series.clone(),
            spec.x_field.clone(),
        ];
        rec.extend(r.series_values.iter().cloned());
        rec.push(r.x.clone());
        rec.extend([
            if r.mean_row { String::new() } else { r.seed.to_string() },
            opt(r.mean_bps),
            opt(r.dl_bps),
            opt(r.ul_bps),
            opt(r.stddev_bps),
            format!("{}", r.completed),
            format!("{}", r.pending),
            format!("{}", r.switches),
            r.status.clone(),
            r.config.clone(),
        ]);
        w.write_record(&rec)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: "<sweep csv>".into(),
        source,
    })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_spec_file() {
        let text = "name = demo\n# comment\nx = blocker_density: 0.1, 0.2\nvary = connectivity_mode: Sc, Mc\nvary = num_iab: 3, 7\nset = sim_duration=1\nseeds = 2\n";
        let s = SweepSpec::parse(text).unwrap();
        assert_eq!(s.name, "demo");
        assert_eq!(s.x_values, vec!["0.1", "0.2"]);
        assert_eq!(s.vary.len(), 2);
        assert_eq!(s.seeds, 2);
        let series = s.series();
        assert_eq!(series.len(), 4);
        assert_eq!(series_label(&series[1]), "Sc/7");
    }

    #[test]
    fn rejects_unknown_field_and_zero_seeds() {
        assert!(SweepSpec::parse("x = nonsense: 1, 2\n").is_err());
        assert!(SweepSpec::parse("x = num_iab: 1\nseeds = 0\n").is_err());
        assert!(SweepSpec::parse("x = num_iab: 1\nvary = connectivity_mode: Sc, Bogus\n").is_err());
        assert!(SweepSpec::parse("x = num_iab 1\n").is_err());
    }

    #[test]
    fn presets_have_the_figure_axes() {
        let f3 = SweepSpec::preset("fig3").unwrap();
        assert_eq!(f3.x_field, "session_rate_dl");
        assert_eq!(f3.series().len(), 12);
        assert_eq!(SweepSpec::preset("fig4").unwrap().series().len(), 4);
        assert_eq!(SweepSpec::preset("fig5").unwrap().series().len(), 6);
        assert!(matches!(SweepSpec::preset("fig9"), Err(CliError::UnknownPreset(_))));
    }

    #[test]
    fn stddev_is_zero_for_one_seed() {
        assert_eq!(sample_stddev(&[5.0]), Some(0.0));
        assert_eq!(sample_stddev(&[]), None);
        let s = sample_stddev(&[1.0, 2.0, 3.0]).unwrap();
        assert!((s - 1.0).abs() < 1e-12);
    }
}
