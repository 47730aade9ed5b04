//! CSV ingestion and report output (JSON, CSV, SVG).
//!
//! Input is long-format CSV with a header row: `time,value` for a single
//! series or `id,time,value` for a batch.

use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::analysis::AnalysisReport;
use crate::bootstrap::ConfidenceBand;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::fitting::FitResult;

/// Parsed input: one series or several keyed by id (in order of first appearance).
#[derive(Debug, Clone, PartialEq)]
pub enum Input {
    Single(Dataset),
    Batch(Vec<(String, Dataset)>),
}

fn parse_number(field: &str, line: u64, what: &str) -> Result<f64> {
    let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
        line,
        msg: format!("cannot parse {what} '{field}'"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            line,
            msg: format!("non-finite {what} '{field}'"),
        });
    }
    Ok(v)
}

fn to_dataset(obs: &[(f64, f64)], context: &str) -> Result<Dataset> {
    Dataset::from_observations(obs).map_err(|e| match e {
        Error::InvalidDesign(msg) => Error::InvalidDesign(format!("{context}{msg}")),
        other => other,
    })
}

/// Parses CSV text in either layout.
pub fn parse_reader<R: Read>(reader: R) -> Result<Input> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Parse {
            line: 1,
            msg: e.to_string(),
        })?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    let batch = match names.as_slice() {
        ["time", "value"] => false,
        ["id", "time", "value"] => true,
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected header 'time,value' or 'id,time,value', found '{}'", names.join(",")),
            })
        }
    };

    let mut single: Vec<(f64, f64)> = Vec::new();
    let mut groups: Vec<(String, Vec<(f64, f64)>)> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| Error::Parse {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if batch {
            let id = record[0].to_string();
            if id.is_empty() {
                return Err(Error::Parse {
                    line,
                    msg: "empty id".into(),
                });
            }
            let obs = (parse_number(&record[1], line, "time")?, parse_number(&record[2], line, "value")?);
            match groups.iter_mut().find(|(g, _)| *g == id) {
                Some((_, v)) => v.push(obs),
                None => groups.push((id, vec![obs])),
            }
        } else {
            single.push((parse_number(&record[0], line, "time")?, parse_number(&record[1], line, "value")?));
        }
    }

    if batch {
        if groups.is_empty() {
            return Err(Error::EmptyInput);
        }
        let series = groups
            .into_iter()
            .map(|(id, obs)| {
                let ds = to_dataset(&obs, &format!("series '{id}': "))?;
                Ok((id, ds))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Input::Batch(series))
    } else {
        if single.is_empty() {
            return Err(Error::EmptyInput);
        }
        Ok(Input::Single(to_dataset(&single, "")?))
    }
}

pub fn parse_file(path: &Path) -> Result<Input> {
    let file = fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_reader(file)
}

/// Reads a single-series file.
pub fn parse_dataset(path: &Path) -> Result<Dataset> {
    match parse_file(path)? {
        Input::Single(d) => Ok(d),
        Input::Batch(_) => Err(Error::Parse {
            line: 1,
            msg: "expected a single series with header 'time,value'".into(),
        }),
    }
}

/// Writes `data` as `time,value` CSV.
pub fn dataset_csv(data: &Dataset) -> String {
    let mut out = String::from("time,value\n");
    for (t, y) in data.observations() {
        let _ = writeln!(out, "{t},{y}");
    }
    out
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// One row per grid point: `time,estimate,sd,lower`.
pub fn band_csv(band: &ConfidenceBand) -> String {
    let mut out = String::from("time,estimate,sd,lower\n");
    for i in 0..band.grid.len() {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            band.grid[i], band.point_estimate[i], band.pointwise_sd[i], band.lower[i]
        );
    }
    out
}

struct Panel {
    x0: f64,
    y0: f64,
    width: f64,
    height: f64,
    t_range: (f64, f64),
    v_range: (f64, f64),
}

impl Panel {
    fn x(&self, t: f64) -> f64 {
        let (a, b) = self.t_range;
        self.x0 + (t - a) / (b - a) * self.width
    }

    fn y(&self, v: f64) -> f64 {
        let (lo, hi) = self.v_range;
        let span = if hi > lo { hi - lo } else { 1.0 };
        self.y0 + self.height - (v - lo) / span * self.height
    }

    fn polyline(&self, out: &mut String, class: &str, color: &str, pts: impl Iterator<Item = (f64, f64)>) {
        let mut coords = String::new();
        for (t, v) in pts {
            let _ = write!(coords, "{:.2},{:.2} ", self.x(t), self.y(v.clamp(self.v_range.0, self.v_range.1)));
        }
        let _ = writeln!(
            out,
            r#"<polyline class="{class}" fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.trim_end()
        );
    }

    fn frame(&self, out: &mut String, title: &str) {
        let _ = writeln!(
            out,
            r#"<rect class="frame" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
            self.x0, self.y0, self.width, self.height
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="13">{title}</text>"#,
            self.x0,
            self.y0 - 6.0
        );
        let (a, b) = self.t_range;
        for (t, anchor) in [(a, "start"), (b, "end")] {
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="{anchor}">{t}</text>"#,
                self.x(t),
                self.y0 + self.height + 14.0
            );
        }
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if lo.is_finite() {
        let pad = 0.05 * (hi - lo).max(1e-9);
        (lo - pad, hi + pad)
    } else {
        (0.0, 1.0)
    }
}

const COLORS: [&str; 4] = ["#d62728", "#ff7f0e", "#2ca02c", "#9467bd"];

/// Two-panel figure: data with the fitted curve on top; `|f′|`, its lower band,
/// one horizontal rule per threshold and two vertical rules per detected
/// subset below.
pub fn report_svg(data: Option<&Dataset>, report: &AnalysisReport) -> String {
    let band = &report.band;
    let fit: &FitResult = &report.fit;
    let (t0, t1) = band.span;
    let curve: Vec<(f64, f64)> = std::iter::once(t0)
        .chain(band.grid.iter().copied())
        .filter_map(|t| fit.spec.eval(&fit.params, t).ok().map(|v| (t, v)))
        .collect();

    let mut top_values: Vec<f64> = curve.iter().map(|p| p.1).collect();
    if let Some(d) = data {
        top_values.extend(d.observations().map(|o| o.1));
    }
    let top = Panel {
        x0: 60.0,
        y0: 30.0,
        width: 700.0,
        height: 230.0,
        t_range: (t0, t1),
        v_range: range(top_values.into_iter()),
    };

    let est_hi = band.point_estimate.iter().copied().filter(|v| v.is_finite()).fold(0.0, f64::max);
    let mut bottom_values = vec![0.0, est_hi];
    bottom_values.extend(band.lower.iter().copied().filter(|v| v.is_finite()));
    bottom_values.extend(report.thresholds.iter().map(|t| t.threshold.value));
    let bottom = Panel {
        x0: 60.0,
        y0: 320.0,
        width: 700.0,
        height: 230.0,
        t_range: (t0, t1),
        v_range: range(bottom_values.into_iter()),
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="800" height="590" viewBox="0 0 800 590">"#
    );
    let _ = writeln!(out, r#"<rect width="800" height="590" fill="white"/>"#);

    top.frame(&mut out, &format!("fitted {} model", fit.spec.family));
    if let Some(d) = data {
        for (t, y) in d.observations() {
            let _ = writeln!(
                out,
                r#"<circle class="observation" cx="{:.2}" cy="{:.2}" r="2.5" fill="gray"/>"#,
                top.x(t),
                top.y(y)
            );
        }
    }
    top.polyline(&mut out, "fit", "black", curve.iter().copied());

    bottom.frame(&mut out, "absolute first derivative and lower confidence band");
    bottom.polyline(&mut out, "derivative", "black", band.grid.iter().copied().zip(band.point_estimate.iter().copied()));
    bottom.polyline(&mut out, "lower-band", "#1f77b4", band.grid.iter().copied().zip(band.lower.iter().copied()));
    for (i, t) in report.thresholds.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let y = bottom.y(t.threshold.value);
        let _ = writeln!(
            out,
            r#"<line class="lambda-rule" x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{color}"/>"#,
            bottom.x0,
            bottom.x0 + bottom.width
        );
        for s in &t.report.subsets {
            for edge in [s.start, s.end] {
                let x = bottom.x(edge);
                let _ = writeln!(
                    out,
                    r#"<line class="region-rule" x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{color}" stroke-dasharray="4 3"/>"#,
                    bottom.y0,
                    bottom.y0 + bottom.height
                );
            }
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Writes `contents` to `path`, or to stdout when `path` is `None`.
pub fn write_output(path: Option<&Path>, contents: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, contents).map_err(|source| Error::Io {
            path: p.to_path_buf(),
            source,
        }),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(contents.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|source| Error::Io {
                    path: "<stdout>".into(),
                    source,
                })
        }
    }
}
