use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::format::{read_with_header, write_with_header};
use crate::dupire::MarketFrame;
use crate::error::{Error, Result};
use crate::mc::{linspace, ExactField, VolatilityField};
use crate::net::{NetParams, PriceSurfaceModel, VolSurfaceModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Coordinates {
    /// Strike and maturity in market units.
    Original,
    /// `(k, t)` on the unit square.
    Scaled,
}

impl std::str::FromStr for Coordinates {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "original" => Ok(Coordinates::Original),
            "scaled" => Ok(Coordinates::Scaled),
            other => Err(Error::InvalidConfig(format!("unknown coordinates {other:?}"))),
        }
    }
}

impl std::fmt::Display for Coordinates {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Coordinates::Original => "original",
            Coordinates::Scaled => "scaled",
        })
    }
}

/// What to sample.
pub enum SurfaceSource<'a> {
    Price(&'a PriceSurfaceModel),
    Vol(&'a VolSurfaceModel),
    ExactVol(&'a ExactField),
}

impl SurfaceSource<'_> {
    fn name(&self) -> &'static str {
        match self {
            SurfaceSource::Price(_) => "price",
            SurfaceSource::Vol(_) | SurfaceSource::ExactVol(_) => "vol",
        }
    }

    fn frame(&self) -> &MarketFrame {
        match self {
            SurfaceSource::Price(m) => &m.frame,
            SurfaceSource::Vol(m) => &m.frame,
            SurfaceSource::ExactVol(f) => &f.frame,
        }
    }

    fn hash(&self) -> String {
        match self {
            SurfaceSource::Price(m) => params_hash(&m.params),
            SurfaceSource::Vol(m) => params_hash(&m.params),
            SurfaceSource::ExactVol(_) => "exact".into(),
        }
    }

    /// Values at scaled points.
    fn sample(&self, points: &[[f64; 2]]) -> Vec<f64> {
        match self {
            SurfaceSource::Price(m) => m.values(points),
            SurfaceSource::Vol(m) => m.sigmas(points),
            SurfaceSource::ExactVol(f) => points
                .iter()
                .map(|&[k, t]| f.sigma(f.frame.strike_at(k, t), t * f.frame.t_max))
                .collect(),
        }
    }
}

/// SHA-256 of the parameter values' bit patterns.
pub fn params_hash(params: &NetParams) -> String {
    let mut h = Sha256::new();
    for v in &params.values {
        h.update(v.to_bits().to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Rows are maturities, columns strikes.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGridExport {
    pub row_axis: Vec<f64>,
    pub col_axis: Vec<f64>,
    pub values: Vec<f64>,
    pub metadata: BTreeMap<String, String>,
}

impl SurfaceGridExport {
    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.col_axis.len() + col]
    }
}

/// Axis ranges of an export; `None` spans the frame's domain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExportGrid {
    pub rows: usize,
    pub cols: usize,
    pub maturity_range: Option<(f64, f64)>,
    pub strike_range: Option<(f64, f64)>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".meta");
    path.with_file_name(name)
}

/// Samples a surface on a tensor grid and writes it, with a `.meta`
/// sidecar, to `path`. Volatility surfaces are written as annualized
/// volatility in both coordinate systems.
pub fn export_surface(source: &SurfaceSource<'_>, grid: &ExportGrid, coords: Coordinates, path: &Path) -> Result<SurfaceGridExport> {
    if grid.rows == 0 || grid.cols == 0 {
        return Err(Error::InvalidConfig("export grid must have rows and columns".into()));
    }
    let frame = *source.frame();
    let (row_axis, col_axis) = match coords {
        Coordinates::Original => {
            let (t0, t1) = grid.maturity_range.unwrap_or((0.0, frame.t_max));
            let (k0, k1) = grid.strike_range.unwrap_or((0.0, frame.k_max));
            (linspace(t0, t1, grid.rows), linspace(k0, k1, grid.cols))
        }
        Coordinates::Scaled => {
            let (t0, t1) = grid.maturity_range.unwrap_or((0.0, 1.0));
            let (k0, k1) = grid.strike_range.unwrap_or((0.0, 1.0));
            (linspace(t0, t1, grid.rows), linspace(k0, k1, grid.cols))
        }
    };
    let mut points = Vec::with_capacity(grid.rows * grid.cols);
    for &r in &row_axis {
        for &c in &col_axis {
            points.push(match coords {
                Coordinates::Original => {
                    let (k, t) = frame.scaled_coords(c, r);
                    [k, t]
                }
                Coordinates::Scaled => [c, r],
            });
        }
    }
    let values = source.sample(&points);
    let (row_name, col_name) = match coords {
        Coordinates::Original => ("maturity", "strike"),
        Coordinates::Scaled => ("t", "k"),
    };
    let mut metadata = BTreeMap::new();
    metadata.insert("surface".to_string(), source.name().to_string());
    metadata.insert("coordinates".to_string(), coords.to_string());
    metadata.insert("rows".to_string(), format!("{row_name}:{}", row_axis.len()));
    metadata.insert("cols".to_string(), format!("{col_name}:{}", col_axis.len()));
    metadata.insert("model_hash".to_string(), source.hash());
    metadata.insert("kind".to_string(), frame.kind.to_string());
    metadata.insert("spot".to_string(), format!("{:?}", frame.spot));
    metadata.insert("rate".to_string(), format!("{:?}", frame.rate));
    metadata.insert("k_max".to_string(), format!("{:?}", frame.k_max));
    metadata.insert("t_max".to_string(), format!("{:?}", frame.t_max));
    let export = SurfaceGridExport {
        row_axis,
        col_axis,
        values,
        metadata,
    };
    write_surface(path, &export, row_name, col_name)?;
    Ok(export)
}

fn write_surface(path: &Path, export: &SurfaceGridExport, row_name: &str, col_name: &str) -> Result<()> {
    let mut body = String::new();
    write!(body, "{row_name}\\{col_name}").expect("string write");
    for c in &export.col_axis {
        write!(body, ",{c:?}").expect("string write");
    }
    body.push('\n');
    for (i, r) in export.row_axis.iter().enumerate() {
        write!(body, "{r:?}").expect("string write");
        for v in &export.values[i * export.col_axis.len()..(i + 1) * export.col_axis.len()] {
            write!(body, ",{v:?}").expect("string write");
        }
        body.push('\n');
    }
    write_with_header(path, &body)?;
    write_key_values(&sidecar_path(path), &export.metadata)
}

/// Reads a surface written by [`export_surface`] together with its sidecar.
pub fn read_surface(path: &Path) -> Result<SurfaceGridExport> {
    let body = read_with_header(path, "surface")?;
    let parse = |s: &str| {
        s.trim()
            .parse::<f64>()
            .map_err(|_| Error::Parse(format!("{}: {s:?} is not a number", path.display())))
    };
    let mut lines = body.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::MalformedHeader {
        path: path.to_path_buf(),
        detail: "missing axis row".into(),
    })?;
    let col_axis = header.split(',').skip(1).map(parse).collect::<Result<Vec<_>>>()?;
    let mut row_axis = Vec::new();
    let mut values = Vec::new();
    for line in lines {
        let mut fields = line.split(',');
        row_axis.push(parse(fields.next().unwrap_or(""))?);
        let row = fields.map(parse).collect::<Result<Vec<_>>>()?;
        if row.len() != col_axis.len() {
            return Err(Error::SchemaViolation(format!(
                "{}: row {} has {} values for {} columns",
                path.display(),
                row_axis.len(),
                row.len(),
                col_axis.len()
            )));
        }
        values.extend(row);
    }
    let metadata = read_key_values(&sidecar_path(path))?;
    Ok(SurfaceGridExport {
        row_axis,
        col_axis,
        values,
        metadata,
    })
}

/// `key=value` lines after the format line.
pub fn write_key_values(path: &Path, entries: &BTreeMap<String, String>) -> Result<()> {
    let mut body = String::new();
    for (k, v) in entries {
        writeln!(body, "{k}={v}").expect("string write");
    }
    write_with_header(path, &body)
}

pub fn read_key_values(path: &Path) -> Result<BTreeMap<String, String>> {
    let body = read_with_header(path, "key-value file")?;
    let mut out = BTreeMap::new();
    for line in body.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("{}: expected key=value, got {line:?}", path.display())))?;
        out.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(out)
}
