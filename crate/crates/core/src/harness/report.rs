use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{Read, Write};
use std::path::Path;

use super::{Fit, Method, RunRecord};
use crate::error::{Error, Result};

/// Columns of `records.csv`.
pub const RECORD_HEADER: [&str; 13] = [
    "n",
    "d1",
    "d2",
    "eta1",
    "eta2",
    "replication",
    "method",
    "err_fro",
    "err_op",
    "block_err_fro",
    "iterations",
    "converged",
    "failure",
];

/// Columns of `summary.csv`. `err_fro_table` and `block_err_fro` use the
/// `mean_(sd)` layout; per-block entries are separated by `;`.
pub const SUMMARY_HEADER: [&str; 14] = [
    "n",
    "d1",
    "d2",
    "eta1",
    "eta2",
    "method",
    "replications",
    "failures",
    "err_fro_mean",
    "err_fro_sd",
    "err_op_mean",
    "err_op_sd",
    "err_fro_table",
    "block_err_fro",
];

/// Columns of `slopes.csv`.
pub const SLOPE_HEADER: [&str; 7] = ["series", "method", "d1", "d2", "eta1", "eta2", "slope"];

/// 17 significant digits.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| {
        if e.is_io_error() {
            match e.into_kind() {
                csv::ErrorKind::Io(io) => Error::io(path, io),
                _ => unreachable!("checked io kind"),
            }
        } else {
            Error::Parse {
                path: path.to_path_buf(),
                message: e.to_string(),
            }
        }
    }
}

fn record_row(r: &RunRecord) -> Vec<String> {
    let mut row = vec![
        r.n.to_string(),
        r.d1.to_string(),
        r.d2.to_string(),
        fmt_f64(r.eta1),
        fmt_f64(r.eta2),
        r.replication.to_string(),
        r.method.as_str().to_string(),
    ];
    match &r.outcome {
        Ok(fit) => row.extend([
            fmt_f64(fit.err_fro),
            fmt_f64(fit.err_op),
            fit.block_err_fro
                .iter()
                .map(|&e| fmt_f64(e))
                .collect::<Vec<_>>()
                .join(";"),
            fit.iterations.to_string(),
            fit.converged.to_string(),
            String::new(),
        ]),
        Err(msg) => row.extend([
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            msg.clone(),
        ]),
    }
    row
}

/// Writes records as CSV to any sink. An empty slice gives the header alone.
pub fn write_records_to<W: Write>(
    sink: W,
    records: &[RunRecord],
) -> std::result::Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(RECORD_HEADER)?;
    for r in records {
        w.write_record(record_row(r))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_records(path: &Path, records: &[RunRecord]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    write_records_to(file, records).map_err(csv_err(path))
}

fn parse_field<T: std::str::FromStr>(
    value: &str,
    column: &str,
    line: u64,
) -> std::result::Result<T, String> {
    value
        .parse()
        .map_err(|_| format!("line {line}: cannot parse {column} value {value:?}"))
}

/// Parses records written by [`write_records_to`]. Wall times read back as zero.
pub fn read_records_from<R: Read>(source: R) -> std::result::Result<Vec<RunRecord>, String> {
    let mut rdr = csv::Reader::from_reader(source);
    let header = rdr.headers().map_err(|e| e.to_string())?;
    if header.iter().ne(RECORD_HEADER) {
        return Err(format!(
            "unexpected header {:?}",
            header.iter().collect::<Vec<_>>()
        ));
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| e.to_string())?;
        let line = row.position().map_or(0, |p| p.line());
        let f = |i: usize| &row[i];
        let method =
            Method::parse(f(6)).ok_or_else(|| format!("line {line}: unknown method {:?}", f(6)))?;
        let outcome = if f(12).is_empty() {
            let block_err_fro = f(9)
                .split(';')
                .map(|v| parse_field(v, "block_err_fro", line))
                .collect::<std::result::Result<Vec<f64>, _>>()?;
            Ok(Fit {
                err_fro: parse_field(f(7), "err_fro", line)?,
                err_op: parse_field(f(8), "err_op", line)?,
                block_err_fro,
                iterations: parse_field(f(10), "iterations", line)?,
                converged: parse_field(f(11), "converged", line)?,
            })
        } else {
            Err(f(12).to_string())
        };
        out.push(RunRecord {
            n: parse_field(f(0), "n", line)?,
            d1: parse_field(f(1), "d1", line)?,
            d2: parse_field(f(2), "d2", line)?,
            eta1: parse_field(f(3), "eta1", line)?,
            eta2: parse_field(f(4), "eta2", line)?,
            replication: parse_field(f(5), "replication", line)?,
            method,
            outcome,
            wall_secs: 0.0,
        });
    }
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<RunRecord>> {
    let file = File::open(path).map_err(io_err(path))?;
    read_records_from(file).map_err(|message| Error::Parse {
        path: path.to_path_buf(),
        message,
    })
}

/// Mean and sample standard deviation (zero for a single value).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub count: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<MeanSd> {
        let count = values.len();
        if count == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / count as f64;
        let sd = if count > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(MeanSd { mean, sd, count })
    }

    /// Standard error of the mean.
    pub fn se(&self) -> f64 {
        self.sd / (self.count as f64).sqrt()
    }

    /// `mean_(sd)` with four and two decimals.
    pub fn table_cell(&self) -> String {
        format!("{:.4}_({:.2})", self.mean, self.sd)
    }
}

/// Statistics of one (cell, method) group.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub n: usize,
    pub d1: usize,
    pub d2: usize,
    pub eta1: f64,
    pub eta2: f64,
    pub method: Method,
    /// Successful replications.
    pub replications: usize,
    pub failures: usize,
    /// `None` when every replication failed.
    pub err_fro: Option<MeanSd>,
    pub err_op: Option<MeanSd>,
    pub block_err_fro: Vec<MeanSd>,
}

type GroupKey = (usize, usize, usize, u64, u64, Method);

fn group_key(r: &RunRecord) -> GroupKey {
    (
        r.n,
        r.d1,
        r.d2,
        r.eta1.to_bits(),
        r.eta2.to_bits(),
        r.method,
    )
}

/// Groups records by (n, d1, d2, eta1, eta2, method) in order of first appearance.
/// Failed replications are counted, not averaged.
pub fn summarize(records: &[RunRecord]) -> Result<Vec<SummaryRow>> {
    if records.is_empty() {
        return Err(Error::EmptyRecords);
    }
    let mut order: Vec<GroupKey> = Vec::new();
    let mut groups: BTreeMap<GroupKey, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        let key = group_key(r);
        groups.entry(key).or_insert_with(|| {
            order.push(key);
            Vec::new()
        });
        groups.get_mut(&key).expect("inserted").push(r);
    }
    Ok(order
        .into_iter()
        .map(|key| {
            let members = &groups[&key];
            let fits: Vec<&Fit> = members.iter().filter_map(|r| r.fit()).collect();
            let blocks = fits
                .iter()
                .map(|f| f.block_err_fro.len())
                .max()
                .unwrap_or(0);
            let block_err_fro = (0..blocks)
                .filter_map(|b| {
                    let vals: Vec<f64> = fits
                        .iter()
                        .filter_map(|f| f.block_err_fro.get(b).copied())
                        .collect();
                    MeanSd::of(&vals)
                })
                .collect();
            let fro: Vec<f64> = fits.iter().map(|f| f.err_fro).collect();
            let op: Vec<f64> = fits.iter().map(|f| f.err_op).collect();
            SummaryRow {
                n: key.0,
                d1: key.1,
                d2: key.2,
                eta1: f64::from_bits(key.3),
                eta2: f64::from_bits(key.4),
                method: key.5,
                replications: fits.len(),
                failures: members.len() - fits.len(),
                err_fro: MeanSd::of(&fro),
                err_op: MeanSd::of(&op),
                block_err_fro,
            }
        })
        .collect())
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    let opt = |m: Option<MeanSd>, f: fn(&MeanSd) -> f64| {
        m.as_ref().map(f).map(fmt_f64).unwrap_or_default()
    };
    let result: std::result::Result<(), csv::Error> = (|| {
        w.write_record(SUMMARY_HEADER)?;
        for s in rows {
            w.write_record([
                s.n.to_string(),
                s.d1.to_string(),
                s.d2.to_string(),
                fmt_f64(s.eta1),
                fmt_f64(s.eta2),
                s.method.as_str().to_string(),
                s.replications.to_string(),
                s.failures.to_string(),
                opt(s.err_fro, |m| m.mean),
                opt(s.err_fro, |m| m.sd),
                opt(s.err_op, |m| m.mean),
                opt(s.err_op, |m| m.sd),
                s.err_fro.map(|m| m.table_cell()).unwrap_or_default(),
                s.block_err_fro
                    .iter()
                    .map(MeanSd::table_cell)
                    .collect::<Vec<_>>()
                    .join(";"),
            ])?;
        }
        w.flush()?;
        Ok(())
    })();
    result.map_err(csv_err(path))
}

/// Least-squares slope of `ln err` on `ln n`.
pub fn fit_loglog_slope(ns: &[f64], errs: &[f64]) -> Result<f64> {
    if ns.len() != errs.len() {
        return Err(Error::SampleCountMismatch {
            left: ns.len(),
            right: errs.len(),
        });
    }
    if ns.len() < 3 {
        return Err(Error::TooFewPoints(ns.len()));
    }
    if let Some(&bad) = errs
        .iter()
        .chain(ns)
        .find(|v| !(**v > 0.0 && v.is_finite()))
    {
        return Err(Error::NonPositiveError(bad));
    }
    let xs: Vec<f64> = ns.iter().map(|n| n.ln()).collect();
    let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
    Ok(ols_slope(&xs, &ys))
}

pub(crate) fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let m = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / m;
    let my = ys.iter().sum::<f64>() / m;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Mean Frobenius error against sample size for one (method, resolution) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub label: String,
    pub method: Method,
    pub d1: usize,
    pub d2: usize,
    pub eta1: f64,
    pub eta2: f64,
    /// `(n, mean err_fro)` in increasing `n`.
    pub points: Vec<(usize, f64)>,
}

impl PlotSeries {
    /// Slope over the points, if there are at least three.
    pub fn slope(&self) -> Option<f64> {
        let ns: Vec<f64> = self.points.iter().map(|p| p.0 as f64).collect();
        let errs: Vec<f64> = self.points.iter().map(|p| p.1).collect();
        fit_loglog_slope(&ns, &errs).ok()
    }
}

fn series_label(method: Method, d1: usize, d2: usize, eta1: f64, eta2: f64) -> String {
    let eta = if eta1 == eta2 {
        format!("{eta1}")
    } else {
        format!("{eta1}-{eta2}")
    };
    format!("{}_d{d1}x{d2}_eta{eta}", method.as_str())
}

/// Splits a summary into per-(method, dims, resolution) series over `n`.
pub fn plot_series(rows: &[SummaryRow]) -> Vec<PlotSeries> {
    let mut out: Vec<PlotSeries> = Vec::new();
    for s in rows {
        let Some(err) = s.err_fro else { continue };
        let label = series_label(s.method, s.d1, s.d2, s.eta1, s.eta2);
        match out.iter_mut().find(|p| p.label == label) {
            Some(p) => p.points.push((s.n, err.mean)),
            None => out.push(PlotSeries {
                label,
                method: s.method,
                d1: s.d1,
                d2: s.d2,
                eta1: s.eta1,
                eta2: s.eta2,
                points: vec![(s.n, err.mean)],
            }),
        }
    }
    for p in &mut out {
        p.points.sort_by_key(|&(n, _)| n);
    }
    out
}

/// Slope of every series; `slope` is `None` below three sample sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct SlopeRow {
    pub series: PlotSeries,
    pub slope: Option<f64>,
}

pub fn slopes(rows: &[SummaryRow]) -> Vec<SlopeRow> {
    plot_series(rows)
        .into_iter()
        .map(|series| SlopeRow {
            slope: series.slope(),
            series,
        })
        .collect()
}

pub fn write_slopes(path: &Path, rows: &[SlopeRow]) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    let result: std::result::Result<(), csv::Error> = (|| {
        w.write_record(SLOPE_HEADER)?;
        for r in rows {
            let s = &r.series;
            w.write_record([
                s.label.clone(),
                s.method.as_str().to_string(),
                s.d1.to_string(),
                s.d2.to_string(),
                fmt_f64(s.eta1),
                fmt_f64(s.eta2),
                r.slope.map(fmt_f64).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })();
    result.map_err(csv_err(path))
}

/// `log_n, log_err` plus two reference lines through the first point:
/// slope `-1/2`, and `-x/2 + ln(x)/2` (the `sqrt(log n / n)` rate).
fn write_plot(path: &Path, series: &PlotSeries) -> Result<()> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = csv::Writer::from_writer(file);
    let (x0, y0) = ((series.points[0].0 as f64).ln(), series.points[0].1.ln());
    let result: std::result::Result<(), csv::Error> = (|| {
        w.write_record(["log_n", "log_err", "ref_half", "ref_sqrt_log"])?;
        for &(n, err) in &series.points {
            let x = (n as f64).ln();
            let half = y0 - 0.5 * (x - x0);
            let sqrt_log = half + 0.5 * (x.ln() - x0.ln());
            w.write_record([
                fmt_f64(x),
                fmt_f64(err.ln()),
                fmt_f64(half),
                fmt_f64(sqrt_log),
            ])?;
        }
        w.flush()?;
        Ok(())
    })();
    result.map_err(csv_err(path))
}

/// Writes `records.csv`, `summary.csv`, `slopes.csv`, `plotdata/<series>.csv`
/// and `timings.csv` (wall seconds per record) under `dir`.
pub fn write_outputs(dir: &Path, records: &[RunRecord]) -> Result<Vec<SummaryRow>> {
    fs::create_dir_all(dir.join("plotdata")).map_err(io_err(dir))?;
    write_records(&dir.join("records.csv"), records)?;
    let summary = summarize(records)?;
    write_summary(&dir.join("summary.csv"), &summary)?;
    let slope_rows = slopes(&summary);
    write_slopes(&dir.join("slopes.csv"), &slope_rows)?;
    for row in &slope_rows {
        write_plot(
            &dir.join("plotdata")
                .join(format!("{}.csv", row.series.label)),
            &row.series,
        )?;
    }
    let timings = dir.join("timings.csv");
    let mut text = String::from("n,eta1,eta2,replication,method,wall_secs\n");
    for r in records {
        text.push_str(&format!(
            "{},{},{},{},{},{:.6}\n",
            r.n,
            fmt_f64(r.eta1),
            fmt_f64(r.eta2),
            r.replication,
            r.method.as_str(),
            r.wall_secs
        ));
    }
    fs::write(&timings, text).map_err(io_err(&timings))?;
    Ok(summary)
}
