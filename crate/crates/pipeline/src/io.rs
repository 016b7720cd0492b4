//! CSV and JSON readers and writers. Floats are written in the shortest form
//! that parses back to the same value, so every file round-trips exactly.

use crate::error::{PipelineError, Result};
use crate::formats::{HistogramMeta, OutputFile, ScanMeta};
use pcqd::bands::BandStructure;
use pcqd::cavity::FieldGrid;
use pcqd::fit::{SpectralPoint, SpectralScan};
use pcqd::tcspc::{InstrumentResponse, TimeGrid, TransientHistogram};
use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub const HISTOGRAM_HEADER: &str = "time_ps,counts";
pub const SCAN_HEADER: &str = "wavelength_nm,lifetime_ps,uncertainty_ps";
pub const FIELD_HEADER: &str = "x_nm,y_nm,h_field,energy_density,dielectric";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("serializable document");
    bytes.push(b'\n');
    bytes
}

/// Output directory that records the hash of everything written into it.
#[derive(Debug)]
pub struct OutputDir {
    root: PathBuf,
    written: Vec<OutputFile>,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root).map_err(|e| PipelineError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.root.join(name);
        std::fs::write(&path, bytes).map_err(|e| PipelineError::io(&path, e))?;
        self.written.push(OutputFile {
            path: name.to_string(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        self.write(name, &to_json_bytes(value))
    }

    pub fn written(&self) -> &[OutputFile] {
        &self.written
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = read_text(path)?;
    serde_json::from_str(&text)
        .map_err(|e| PipelineError::input(path, Some(e.line() as u64), e))
}

/// Sidecar of a CSV: `x.csv` → `x.meta.json`.
pub fn meta_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

/// One CSV data row with its line number.
struct Row {
    line: u64,
    fields: Vec<String>,
}

fn parse_csv(path: &Path, text: &str, header: &[&str]) -> Result<Vec<Row>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    let found = reader
        .headers()
        .map_err(|e| PipelineError::input(path, Some(1), e))?
        .clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(PipelineError::input(
            path,
            Some(1),
            format!("expected header '{}', found '{}'", header.join(","), found.iter().collect::<Vec<_>>().join(",")),
        ));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line());
            PipelineError::input(path, line, e)
        })?;
        let line = record.position().map_or(0, |p| p.line());
        rows.push(Row {
            line,
            fields: record.iter().map(str::to_string).collect(),
        });
    }
    Ok(rows)
}

impl Row {
    fn get<T: FromStr>(&self, path: &Path, col: usize, name: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.fields[col].trim().parse().map_err(|e| {
            PipelineError::input(path, Some(self.line), format!("column {name}: {e}"))
        })
    }
}

/// One row of a band CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct BandRow {
    pub k_index: usize,
    pub k_frac: [f64; 2],
    pub arc_length: f64,
    pub bands: Vec<f64>,
}

pub fn band_rows(bands: &BandStructure<f64>) -> Vec<BandRow> {
    bands
        .points
        .iter()
        .zip(&bands.frequencies)
        .enumerate()
        .map(|(i, (p, f))| BandRow {
            k_index: i,
            k_frac: p.frac,
            arc_length: p.arc_length,
            bands: f.clone(),
        })
        .collect()
}

fn band_header(n: usize) -> Vec<String> {
    let mut h: Vec<String> = ["k_index", "k_frac_x", "k_frac_y", "arc_length"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    h.extend((1..=n).map(|i| format!("band_{i}")));
    h
}

pub fn band_csv(rows: &[BandRow]) -> String {
    let n = rows.first().map_or(0, |r| r.bands.len());
    let mut out = band_header(n).join(",");
    out.push('\n');
    for r in rows {
        write!(out, "{},{},{},{}", r.k_index, r.k_frac[0], r.k_frac[1], r.arc_length).unwrap();
        for f in &r.bands {
            write!(out, ",{f}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn parse_band_csv(path: &Path, text: &str) -> Result<Vec<BandRow>> {
    let first = text.lines().next().unwrap_or_default();
    let n = first.split(',').count().saturating_sub(4);
    if n == 0 {
        return Err(PipelineError::input(path, Some(1), "band CSV has no band columns"));
    }
    let header = band_header(n);
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    parse_csv(path, text, &header)?
        .iter()
        .map(|row| {
            Ok(BandRow {
                k_index: row.get(path, 0, "k_index")?,
                k_frac: [row.get(path, 1, "k_frac_x")?, row.get(path, 2, "k_frac_y")?],
                arc_length: row.get(path, 3, "arc_length")?,
                bands: (0..n)
                    .map(|i| row.get(path, 4 + i, header[4 + i]))
                    .collect::<Result<_>>()?,
            })
        })
        .collect()
}

/// Counts per bin, stamped with bin-centre times.
pub fn histogram_csv(hist: &TransientHistogram<f64>) -> String {
    let grid = hist.grid();
    let mut out = format!("{HISTOGRAM_HEADER}\n");
    for (i, c) in hist.counts.iter().enumerate() {
        writeln!(out, "{},{c}", grid.center(i)).unwrap();
    }
    out
}

pub fn parse_histogram_csv(path: &Path, text: &str, meta: &HistogramMeta) -> Result<TransientHistogram<f64>> {
    let header: Vec<&str> = HISTOGRAM_HEADER.split(',').collect();
    let rows = parse_csv(path, text, &header)?;
    let grid = TimeGrid::new(meta.t_start, meta.bin_width, meta.bins)
        .map_err(|e| PipelineError::input(&meta_path(path), None, e))?;
    if rows.len() != meta.bins {
        return Err(PipelineError::input(
            path,
            None,
            format!("{} rows but metadata declares {} bins", rows.len(), meta.bins),
        ));
    }
    let mut counts = Vec::with_capacity(rows.len());
    for (i, row) in rows.iter().enumerate() {
        let t: f64 = row.get(path, 0, "time_ps")?;
        let expected = grid.center(i);
        if (t - expected).abs() > 1e-9 * expected.abs().max(meta.bin_width) {
            return Err(PipelineError::input(
                path,
                Some(row.line),
                format!("time {t} ps does not match bin centre {expected} ps"),
            ));
        }
        counts.push(row.get::<u64>(path, 1, "counts")?);
    }
    let irf = InstrumentResponse::new(meta.irf_fwhm, meta.irf_t0)
        .map_err(|e| PipelineError::input(&meta_path(path), None, e))?;
    let hist = TransientHistogram::new(grid, counts, irf)
        .map_err(|e| PipelineError::input(path, None, e))?;
    if hist.total_counts != meta.total_counts {
        return Err(PipelineError::input(
            path,
            None,
            format!("counts sum to {} but metadata declares {}", hist.total_counts, meta.total_counts),
        ));
    }
    Ok(hist)
}

pub fn read_histogram(path: &Path) -> Result<(TransientHistogram<f64>, HistogramMeta)> {
    let meta: HistogramMeta = read_json(&meta_path(path))?;
    let hist = parse_histogram_csv(path, &read_text(path)?, &meta)?;
    Ok((hist, meta))
}

pub fn scan_csv(scan: &SpectralScan<f64>) -> String {
    let mut out = format!("{SCAN_HEADER}\n");
    for p in &scan.points {
        let u = p.uncertainty.map(|u| u.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{u}", p.wavelength, p.lifetime).unwrap();
    }
    out
}

pub fn parse_scan_csv(path: &Path, text: &str, meta: &ScanMeta) -> Result<SpectralScan<f64>> {
    let header: Vec<&str> = SCAN_HEADER.split(',').collect();
    let points = parse_csv(path, text, &header)?
        .iter()
        .map(|row| {
            let uncertainty = if row.fields[2].trim().is_empty() {
                None
            } else {
                Some(row.get(path, 2, "uncertainty_ps")?)
            };
            Ok(SpectralPoint {
                wavelength: row.get(path, 0, "wavelength_nm")?,
                lifetime: row.get(path, 1, "lifetime_ps")?,
                uncertainty,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SpectralScan::new(points, meta.reference_tau0.clone())
        .map_err(|e| PipelineError::input(path, None, e))
}

pub fn read_scan(path: &Path) -> Result<(SpectralScan<f64>, ScanMeta)> {
    let meta: ScanMeta = read_json(&meta_path(path))?;
    let scan = parse_scan_csv(path, &read_text(path)?, &meta)?;
    Ok((scan, meta))
}

/// Field samples in storage order.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldRow {
    pub x_nm: f64,
    pub y_nm: f64,
    pub h_field: f64,
    pub energy_density: f64,
    pub dielectric: bool,
}

pub fn field_rows(grid: &FieldGrid<f64>) -> Vec<FieldRow> {
    let mut rows = Vec::with_capacity(grid.nx * grid.ny);
    for j in 0..grid.ny {
        for i in 0..grid.nx {
            let k = j * grid.nx + i;
            let p = grid.position(i, j);
            rows.push(FieldRow {
                x_nm: p.x,
                y_nm: p.y,
                h_field: grid.h_field[k],
                energy_density: grid.energy_density[k],
                dielectric: grid.dielectric[k],
            });
        }
    }
    rows
}

pub fn field_csv(rows: &[FieldRow]) -> String {
    let mut out = format!("{FIELD_HEADER}\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.x_nm,
            r.y_nm,
            r.h_field,
            r.energy_density,
            u8::from(r.dielectric)
        )
        .unwrap();
    }
    out
}

pub fn parse_field_csv(path: &Path, text: &str) -> Result<Vec<FieldRow>> {
    let header: Vec<&str> = FIELD_HEADER.split(',').collect();
    parse_csv(path, text, &header)?
        .iter()
        .map(|row| {
            let flag: u8 = row.get(path, 4, "dielectric")?;
            if flag > 1 {
                return Err(PipelineError::input(path, Some(row.line), "dielectric must be 0 or 1"));
            }
            Ok(FieldRow {
                x_nm: row.get(path, 0, "x_nm")?,
                y_nm: row.get(path, 1, "y_nm")?,
                h_field: row.get(path, 2, "h_field")?,
                energy_density: row.get(path, 3, "energy_density")?,
                dielectric: flag == 1,
            })
        })
        .collect()
}
