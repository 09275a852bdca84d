//! Device files, the bundled 4×4 dataset, column statistics, and result
//! serialization (JSON envelopes, CSV tables, SVG line plots).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::device::{CouplingGraph, DeviceSpec, Pair, ResonatorParams, TransmonParams};
use crate::device::ej_from_omega;
use crate::dynamics::ExperimentRecord;
use crate::error::{Error, Result};

/// Version written to and accepted from every file this crate produces.
pub const SCHEMA_VERSION: u32 = 1;

/// The bundled 4×4 device description.
pub const BUNDLED_DEVICE: &str = include_str!("../data/device_4x4.toml");

/// Name accepted by [`load_device_or_bundled`] for the bundled device.
pub const BUNDLED_DEVICE_NAME: &str = "device_4x4";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Uncertainty {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t2r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t2e: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitEntry {
    pub label: String,
    pub omega: f64,
    pub alpha: f64,
    /// Derived from ω and α when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ej: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ec: Option<f64>,
    pub t1: f64,
    pub t2r: f64,
    pub t2e: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uncertainty: Option<Uncertainty>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResonatorEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qubit: Option<String>,
    pub freq: f64,
    pub qi: f64,
    pub kappa_ext: f64,
    pub chi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingEntry {
    pub pair: [String; 2],
    pub j: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingsEntry {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub nn: Vec<CouplingEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lr: Vec<CouplingEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ecc: Vec<CouplingEntry>,
}

/// On-disk device description (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceFile {
    pub schema_version: u32,
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub provenance: String,
    pub rows: usize,
    pub cols: usize,
    pub qubits: Vec<QubitEntry>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub resonators: Vec<ResonatorEntry>,
    #[serde(default)]
    pub couplings: CouplingsEntry,
    /// Published summary values per column, as printed.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub reference_stats: BTreeMap<String, BTreeMap<String, String>>,
}

impl DeviceFile {
    /// Parses TOML, reporting the offending field path and line.
    pub fn parse(text: &str) -> Result<Self> {
        let line_of = |span: Option<std::ops::Range<usize>>| {
            span.map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
        };
        let de = toml::Deserializer::parse(text).map_err(|e| Error::Schema {
            path: String::new(),
            line: line_of(e.span()),
            message: e.message().to_string(),
        })?;
        let file: DeviceFile = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            Error::Schema {
                path: if path == "." { String::new() } else { path },
                line: line_of(inner.span()),
                message: inner.message().to_string(),
            }
        })?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema {
                path: "schema_version".into(),
                line: None,
                message: format!(
                    "unsupported schema version {} (expected {SCHEMA_VERSION})",
                    file.schema_version
                ),
            });
        }
        Ok(file)
    }

    /// Builds and validates the device.
    pub fn to_spec(&self) -> Result<DeviceSpec> {
        let qubits = self
            .qubits
            .iter()
            .enumerate()
            .map(|(i, q)| {
                let ec = q.ec.unwrap_or(-q.alpha);
                let ej = match q.ej {
                    Some(v) => v,
                    None => ej_from_omega(q.omega, ec).map_err(|e| Error::Schema {
                        path: format!("qubits[{i}]"),
                        line: None,
                        message: e.to_string(),
                    })?,
                };
                Ok(TransmonParams {
                    label: q.label.clone(),
                    omega: q.omega,
                    alpha: q.alpha,
                    ej,
                    ec,
                    t1: q.t1,
                    t2r: q.t2r,
                    t2e: q.t2e,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let resonators = self
            .resonators
            .iter()
            .map(|r| ResonatorParams {
                freq: r.freq,
                qi: r.qi,
                kappa_ext: r.kappa_ext,
                chi: r.chi,
            })
            .collect();
        let map = |name: &str, list: &[CouplingEntry]| -> Result<BTreeMap<Pair, f64>> {
            let mut out = BTreeMap::new();
            for (i, c) in list.iter().enumerate() {
                let pair = Pair::new(c.pair[0].clone(), c.pair[1].clone());
                if c.pair[0] == c.pair[1] || out.insert(pair, c.j).is_some() {
                    return Err(Error::Schema {
                        path: format!("couplings.{name}[{i}]"),
                        line: None,
                        message: format!("duplicate or self pair {}-{}", c.pair[0], c.pair[1]),
                    });
                }
            }
            Ok(out)
        };
        let spec = DeviceSpec {
            name: self.name.clone(),
            rows: self.rows,
            cols: self.cols,
            qubits,
            resonators,
            couplings: CouplingGraph {
                nn: map("nn", &self.couplings.nn)?,
                lr: map("lr", &self.couplings.lr)?,
                ecc: map("ecc", &self.couplings.ecc)?,
            },
        };
        spec.validate()?;
        Ok(spec)
    }

    /// File form of a device; every derived quantity is written explicitly.
    pub fn from_spec(spec: &DeviceSpec) -> Self {
        let entries = |m: &BTreeMap<Pair, f64>| {
            m.iter()
                .map(|(p, &j)| CouplingEntry {
                    pair: [p.first().to_string(), p.second().to_string()],
                    j,
                    source: None,
                })
                .collect()
        };
        let same_len = spec.resonators.len() == spec.qubits.len();
        DeviceFile {
            schema_version: SCHEMA_VERSION,
            name: spec.name.clone(),
            provenance: String::new(),
            rows: spec.rows,
            cols: spec.cols,
            qubits: spec
                .qubits
                .iter()
                .map(|q| QubitEntry {
                    label: q.label.clone(),
                    omega: q.omega,
                    alpha: q.alpha,
                    ej: Some(q.ej),
                    ec: Some(q.ec),
                    t1: q.t1,
                    t2r: q.t2r,
                    t2e: q.t2e,
                    uncertainty: None,
                })
                .collect(),
            resonators: spec
                .resonators
                .iter()
                .enumerate()
                .map(|(i, r)| ResonatorEntry {
                    qubit: same_len.then(|| spec.qubits[i].label.clone()),
                    freq: r.freq,
                    qi: r.qi,
                    kappa_ext: r.kappa_ext,
                    chi: r.chi,
                })
                .collect(),
            couplings: CouplingsEntry {
                nn: entries(&spec.couplings.nn),
                lr: entries(&spec.couplings.lr),
                ecc: entries(&spec.couplings.ecc),
            },
            reference_stats: BTreeMap::new(),
        }
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Io(e.to_string()))
    }
}

/// A device together with the file it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedDevice {
    pub spec: DeviceSpec,
    pub file: DeviceFile,
}

pub fn parse_device(text: &str) -> Result<LoadedDevice> {
    let file = DeviceFile::parse(text)?;
    Ok(LoadedDevice {
        spec: file.to_spec()?,
        file,
    })
}

pub fn load_device(path: &Path) -> Result<LoadedDevice> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    parse_device(&text)
}

pub fn bundled_device() -> LoadedDevice {
    parse_device(BUNDLED_DEVICE).expect("bundled device file is valid")
}

/// Loads `arg` as a path, or the bundled device when `arg` is its name.
pub fn load_device_or_bundled(arg: &str) -> Result<LoadedDevice> {
    if arg == BUNDLED_DEVICE_NAME {
        Ok(bundled_device())
    } else {
        load_device(Path::new(arg))
    }
}

pub fn save_device(spec: &DeviceSpec, path: &Path) -> Result<()> {
    let text = DeviceFile::from_spec(spec).to_toml()?;
    std::fs::write(path, text).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

// ---------------------------------------------------------------------------
// Statistics

/// Columns accepted by [`stats`], with their units.
pub const STATS_COLUMNS: [(&str, &str); 12] = [
    ("resonator_freq", "MHz"),
    ("omega", "MHz"),
    ("qi", "1e4"),
    ("kappa_ext", "MHz"),
    ("chi", "kHz"),
    ("alpha", "MHz"),
    ("t1", "us"),
    ("t2r", "us"),
    ("t2e", "us"),
    ("ej", "MHz"),
    ("ec", "MHz"),
    ("j", "MHz"),
];

/// Sample statistics of one column (population standard deviation).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub column: String,
    pub units: String,
    pub n: usize,
    pub max: f64,
    pub min: f64,
    pub mean: f64,
    pub std: f64,
    /// σ/√N.
    pub sem: f64,
    /// σ/µ.
    pub spread: f64,
}

pub fn column_values(device: &DeviceSpec, column: &str) -> Result<Vec<f64>> {
    let q = &device.qubits;
    let r = &device.resonators;
    let v: Vec<f64> = match column {
        "omega" => q.iter().map(|x| x.omega).collect(),
        "alpha" => q.iter().map(|x| x.alpha).collect(),
        "t1" => q.iter().map(|x| x.t1).collect(),
        "t2r" => q.iter().map(|x| x.t2r).collect(),
        "t2e" => q.iter().map(|x| x.t2e).collect(),
        "ej" => q.iter().map(|x| x.ej).collect(),
        "ec" => q.iter().map(|x| x.ec).collect(),
        "resonator_freq" => r.iter().map(|x| x.freq).collect(),
        "qi" => r.iter().map(|x| x.qi / 1e4).collect(),
        "kappa_ext" => r.iter().map(|x| x.kappa_ext).collect(),
        "chi" => r.iter().map(|x| x.chi).collect(),
        "j" => device.couplings.nn.values().copied().collect(),
        other => {
            let known: Vec<&str> = STATS_COLUMNS.iter().map(|c| c.0).collect();
            return Err(Error::Usage(format!(
                "unknown column `{other}` (expected one of {})",
                known.join(", ")
            )));
        }
    };
    if v.is_empty() {
        return Err(Error::Usage(format!("column `{column}` has no values in this device")));
    }
    Ok(v)
}

pub fn stats(device: &DeviceSpec, column: &str) -> Result<ColumnStats> {
    let v = column_values(device, column)?;
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let units = STATS_COLUMNS.iter().find(|c| c.0 == column).map(|c| c.1).unwrap_or("");
    Ok(ColumnStats {
        column: column.into(),
        units: units.into(),
        n: v.len(),
        max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        min: v.iter().copied().fold(f64::INFINITY, f64::min),
        mean,
        std,
        sem: std / n.sqrt(),
        spread: std / mean.abs(),
    })
}

/// A computed statistic against its published value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatComparison {
    pub statistic: String,
    pub reference: String,
    pub computed: f64,
    /// Computed value rounded to the reference's printed decimals.
    pub computed_rounded: String,
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub stats: ColumnStats,
    pub comparisons: Vec<StatComparison>,
    /// One line per inconsistent published value.
    pub discrepancies: Vec<String>,
}

fn decimals(printed: &str) -> usize {
    printed.split_once('.').map(|(_, f)| f.len()).unwrap_or(0)
}

/// Statistics plus a comparison against the file's published summary
/// values, each judged at its printed rounding.
pub fn stats_report(device: &LoadedDevice, column: &str) -> Result<StatsReport> {
    let s = stats(&device.spec, column)?;
    let mut comparisons = Vec::new();
    let mut discrepancies = Vec::new();
    if let Some(refs) = device.file.reference_stats.get(column) {
        for (name, printed) in refs {
            let computed = match name.as_str() {
                "max" => s.max,
                "min" => s.min,
                "mean" => s.mean,
                "std" => s.std,
                "sem" => s.sem,
                "spread" => s.spread,
                other => {
                    return Err(Error::Schema {
                        path: format!("reference_stats.{column}.{other}"),
                        line: None,
                        message: "unknown statistic".into(),
                    })
                }
            };
            let reference: f64 = printed.parse().map_err(|_| Error::Schema {
                path: format!("reference_stats.{column}.{name}"),
                line: None,
                message: format!("`{printed}` is not a number"),
            })?;
            let d = decimals(printed);
            let rounded = format!("{computed:.d$}");
            let consistent = rounded.parse::<f64>().ok() == Some(reference)
                || (computed - reference).abs() <= 0.5 * 10f64.powi(-(d as i32)) * (1.0 + 1e-9);
            if !consistent {
                discrepancies.push(format!(
                    "{column} {name}: published {printed}, computed {rounded} from the {} stored values",
                    s.n
                ));
            }
            comparisons.push(StatComparison {
                statistic: name.clone(),
                reference: printed.clone(),
                computed,
                computed_rounded: rounded,
                consistent,
            });
        }
    }
    Ok(StatsReport {
        stats: s,
        comparisons,
        discrepancies,
    })
}

// ---------------------------------------------------------------------------
// Result files

/// Self-describing result: the command and configuration that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultEnvelope<T> {
    pub schema_version: u32,
    pub tool: String,
    pub tool_version: String,
    pub command: String,
    pub config: serde_json::Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub device: String,
    pub result: T,
}

impl<T: Serialize> ResultEnvelope<T> {
    pub fn new(command: &str, config: serde_json::Value, seed: Option<u64>, device: &str, result: T) -> Self {
        ResultEnvelope {
            schema_version: SCHEMA_VERSION,
            tool: "qlattice".into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            seed,
            device: device.into(),
            result,
        }
    }

    /// Pretty JSON. Floats use the shortest representation that parses
    /// back to the same bits; non-finite values become `null`.
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }
}

/// Density matrix as separate real and imaginary row lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub re: Vec<Vec<f64>>,
    pub im: Vec<Vec<f64>>,
}

impl From<&DMatrix<C64>> for MatrixJson {
    fn from(m: &DMatrix<C64>) -> Self {
        let rows = |f: fn(&C64) -> f64| (0..m.nrows()).map(|r| (0..m.ncols()).map(|c| f(&m[(r, c)])).collect()).collect();
        MatrixJson {
            re: rows(|z| z.re),
            im: rows(|z| z.im),
        }
    }
}

impl MatrixJson {
    pub fn to_matrix(&self) -> Result<DMatrix<C64>> {
        let n = self.re.len();
        if self.im.len() != n || self.re.iter().chain(&self.im).any(|r| r.len() != n) {
            return Err(Error::Dimension("matrix JSON must be square with matching parts".into()));
        }
        Ok(DMatrix::from_fn(n, n, |r, c| C64::new(self.re[r][c], self.im[r][c])))
    }
}

/// CSV with one row per sweep point: axis columns (`name [units]`) first,
/// then one column per observable in key order.
pub fn record_csv(record: &ExperimentRecord) -> Result<String> {
    record.validate()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = record.axes.iter().map(|a| format!("{} [{}]", a.name, a.units)).collect();
    header.extend(record.data.keys().cloned());
    w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
    let sizes: Vec<usize> = record.axes.iter().map(|a| a.values.len()).collect();
    for i in 0..record.points() {
        let mut rem = i;
        let mut idx = vec![0; sizes.len()];
        for k in (0..sizes.len()).rev() {
            idx[k] = rem % sizes[k];
            rem /= sizes[k];
        }
        let mut row: Vec<String> = record.axes.iter().zip(&idx).map(|(a, &j)| a.values[j].to_string()).collect();
        row.extend(record.data.values().map(|v| v[i].to_string()));
        w.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

/// One polyline of a plot.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Minimal SVG line plot with axes, tick labels and a legend.
pub fn line_plot_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h, ml, mr, mt, mb) = (640.0, 420.0, 70.0, 20.0, 40.0, 50.0);
    let pts = || series.iter().flat_map(|s| s.x.iter().zip(&s.y)).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts() {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 <= 0.0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 <= 0.0 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let sy = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);
    let esc = |s: &str| s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, w / 2.0, esc(title));
    let _ = writeln!(
        out,
        r#"<path d="M{ml} {mt} V{} H{}" fill="none" stroke="black"/>"#,
        h - mb,
        w - mr
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            sx(xv),
            h - mb + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
            ml - 6.0,
            sy(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (ml + w - mr) / 2.0, h - 12.0, esc(x_label));
    let _ = writeln!(
        out,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        (mt + h - mb) / 2.0,
        esc(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = s
            .x
            .iter()
            .zip(&s.y)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, path.join(" "));
        let ly = mt + 6.0 + 16.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{0}" y1="{ly}" x2="{1}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{2}" y="{3}">{4}</text>"#,
            w - mr - 120.0,
            w - mr - 100.0,
            w - mr - 95.0,
            ly + 4.0,
            esc(&s.name)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{}", (v * 1e3).round() / 1e3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_device_loads() {
        let d = bundled_device();
        assert_eq!(d.spec.qubits.len(), 16);
        assert_eq!(d.spec.couplings.nn.len(), 24);
        assert_eq!(d.spec.grid_edges().len(), 24);
        assert_eq!(d.spec.detuning("Q2", "Q3").unwrap(), 4795.6 - 4807.5);
    }

    #[test]
    fn straddling_failures_are_exactly_the_known_pairs() {
        let d = bundled_device().spec;
        let failing: Vec<String> = d
            .grid_edges()
            .into_iter()
            .filter(|p| !d.straddling(p.first(), p.second()).unwrap())
            .map(|p| p.to_string())
            .collect();
        assert_eq!(failing, vec!["Q10-Q15", "Q15-Q16"]);
    }

    #[test]
    fn schema_errors_carry_path_and_line() {
        let base = BUNDLED_DEVICE;
        let missing = base.replacen("t2e = 102.0\n", "", 1);
        match parse_device(&missing) {
            Err(Error::Schema { path, line, message }) => {
                assert_eq!(path, "qubits[2]");
                assert!(message.contains("t2e"), "{message}");
                assert!(line.is_some());
            }
            other => panic!("{other:?}"),
        }
        let unknown = base.replacen("t1 = 126.0\n", "t1 = 126.0\nt3 = 1.0\n", 1);
        match parse_device(&unknown) {
            Err(Error::Schema { path, line, message }) => {
                assert!(path.starts_with("qubits[0]"), "{path}");
                assert!(message.contains("t3"));
                let l = line.unwrap();
                assert_eq!(unknown.lines().nth(l - 1).unwrap(), "t3 = 1.0");
            }
            other => panic!("{other:?}"),
        }
        let dup = base.replacen("label = \"Q2\"", "label = \"Q1\"", 1);
        assert!(matches!(parse_device(&dup), Err(Error::Schema { path, .. }) if path == "qubits[1].label"));
        let version = base.replacen("schema_version = 1", "schema_version = 7", 1);
        assert!(matches!(parse_device(&version), Err(Error::Schema { path, .. }) if path == "schema_version"));
    }

    #[test]
    fn device_round_trip() {
        let spec = bundled_device().spec;
        let text = DeviceFile::from_spec(&spec).to_toml().unwrap();
        assert_eq!(parse_device(&text).unwrap().spec, spec);
    }

    #[test]
    fn published_statistics() {
        let d = bundled_device();
        let alpha = stats_report(&d, "alpha").unwrap();
        assert!((alpha.stats.mean.abs() - 196.4).abs() < 0.05);
        assert!(alpha.discrepancies.is_empty(), "{:?}", alpha.discrepancies);
        let t1 = stats_report(&d, "t1").unwrap();
        assert!(t1.discrepancies.iter().any(|s| s.contains("min")));
        assert!(t1.discrepancies.iter().any(|s| s.contains("mean")));
        let j = stats_report(&d, "j").unwrap();
        assert_eq!(j.stats.n, 24);
        for c in &j.comparisons {
            assert_eq!(c.consistent, c.statistic != "spread", "{c:?}");
        }
        assert!(matches!(stats(&d.spec, "nope"), Err(Error::Usage(_))));
    }

    #[test]
    fn csv_and_svg() {
        use crate::dynamics::Axis;
        let mut data = BTreeMap::new();
        data.insert("p1".to_string(), vec![0.0, 0.25, 0.5, 1.0]);
        let rec = ExperimentRecord {
            protocol: "t".into(),
            axes: vec![Axis::new("a", "us", vec![0.0, 1.0]), Axis::new("b", "MHz", vec![5.0, 6.0])],
            data,
            shots: 0,
            seed: 0,
            device: "d".into(),
            metadata: BTreeMap::new(),
        };
        let csv = record_csv(&rec).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "a [us],b [MHz],p1");
        assert_eq!(lines[2], "0,6,0.25");
        assert_eq!(lines[3], "1,5,0.5");
        let svg = line_plot_svg(
            "t <1>",
            "x",
            "y",
            &[Series {
                name: "s".into(),
                x: vec![0.0, 1.0],
                y: vec![1.0, f64::NAN],
            }],
        );
        assert!(svg.starts_with("<svg") && svg.contains("t &lt;1&gt;") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn matrix_json_round_trip() {
        let m = DMatrix::from_fn(2, 2, |r, c| C64::new(r as f64 + 0.1, c as f64 - 1.0 / 3.0));
        let j = MatrixJson::from(&m);
        let text = serde_json::to_string(&j).unwrap();
        let back: MatrixJson = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_matrix().unwrap(), m);
    }
}
