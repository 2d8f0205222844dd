//! DEM and QA raster ingestion, block downsampling, and patch extraction.
//!
//! Two on-disk formats are supported:
//! - ESRI ASCII grid (`ncols`/`nrows`/`xllcorner`/`yllcorner`/`cellsize`/
//!   `NODATA_value` header, whitespace-separated rows),
//! - raw little-endian f32 row-major binary with a JSON sidecar at
//!   `<path>.json` holding `{"nrows", "ncols", "cell_size_m", "nodata"}`.
//!
//! QA (stacking-number) rasters use the same formats with integer-valued
//! samples.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header in {path}: {reason}")]
    MalformedHeader { path: String, reason: String },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// On-disk raster encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RasterFormat {
    AsciiGrid,
    RawF32,
}

impl fmt::Display for RasterFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RasterFormat::AsciiGrid => write!(f, "ascii_grid"),
            RasterFormat::RawF32 => write!(f, "raw_f32"),
        }
    }
}

/// Gridded elevation or stacking-number samples.
///
/// Values are stored row-major; `nodata` is a sentinel for missing cells.
/// Non-finite samples are treated as nodata regardless of the sentinel.
#[derive(Debug, Clone)]
pub struct RasterTile {
    values: Vec<f64>,
    pub nrows: usize,
    pub ncols: usize,
    /// Metres per pixel.
    pub cell_size: f64,
    pub nodata: f64,
}

impl RasterTile {
    pub fn new(
        values: Vec<f64>,
        nrows: usize,
        ncols: usize,
        cell_size: f64,
        nodata: f64,
    ) -> Result<Self, RasterError> {
        if nrows == 0 || ncols == 0 {
            return Err(RasterError::InvalidArgument(
                "raster dimensions must be positive".into(),
            ));
        }
        if cell_size <= 0.0 {
            return Err(RasterError::InvalidArgument(format!(
                "cell_size must be positive, got {cell_size}"
            )));
        }
        if values.len() != nrows * ncols {
            return Err(RasterError::DimensionMismatch(format!(
                "{} values for {nrows}x{ncols} grid",
                values.len()
            )));
        }
        Ok(Self { values, nrows, ncols, cell_size, nodata })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.ncols + col]
    }

    #[inline]
    pub fn is_nodata(&self, v: f64) -> bool {
        v == self.nodata || !v.is_finite()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Mean of all non-nodata cells; `None` for an all-nodata tile.
    pub fn mean(&self) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for &v in &self.values {
            if !self.is_nodata(v) {
                sum += v;
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

/// Observable error predictors of one patch: mean stacking number and
/// mean elevation over the patch window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictorVector {
    pub n_stk: f64,
    /// Metres.
    pub z: f64,
}

/// An N×N window of elevation increments relative to its centre pixel.
///
/// `increments[k]` is `z(t,s) - z(0,0)` at offset `coords[k] = (t, s)`;
/// the centre offset `(0,0)` is excluded, so there are `N²-1` samples.
#[derive(Debug, Clone)]
pub struct Patch {
    pub increments: Vec<f64>,
    pub coords: Vec<(i32, i32)>,
    pub predictor: PredictorVector,
    /// Row/col of the patch centre in the source tile.
    pub tile_position: (usize, usize),
}

/// Offsets of every pixel of an N×N window except the centre, row-major.
pub fn patch_coords(half_size: usize) -> Vec<(i32, i32)> {
    let h = half_size as i32;
    let mut coords = Vec::with_capacity((2 * half_size + 1).pow(2) - 1);
    for t in -h..=h {
        for s in -h..=h {
            if (t, s) != (0, 0) {
                coords.push((t, s));
            }
        }
    }
    coords
}

pub fn load_raster(path: &Path, format: RasterFormat) -> Result<RasterTile, RasterError> {
    match format {
        RasterFormat::AsciiGrid => load_ascii_grid(path),
        RasterFormat::RawF32 => load_raw_f32(path),
    }
}

fn load_ascii_grid(path: &Path) -> Result<RasterTile, RasterError> {
    let text = fs::read_to_string(path).map_err(|source| RasterError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let bad = |reason: &str| RasterError::MalformedHeader {
        path: path.display().to_string(),
        reason: reason.to_string(),
    };

    let mut ncols = None;
    let mut nrows = None;
    let mut cell_size = None;
    let mut nodata = -9999.0;
    let mut lines = text.lines().peekable();
    // Header lines are `key value`; data starts at the first line whose
    // first token parses as a number.
    while let Some(line) = lines.peek() {
        let mut parts = line.split_whitespace();
        let Some(key) = parts.next() else {
            lines.next();
            continue;
        };
        if key.parse::<f64>().is_ok() {
            break;
        }
        let value = parts
            .next()
            .ok_or_else(|| bad(&format!("header line '{key}' has no value")))?;
        match key.to_ascii_lowercase().as_str() {
            "ncols" => ncols = Some(parse_dim(value).ok_or_else(|| bad("bad ncols"))?),
            "nrows" => nrows = Some(parse_dim(value).ok_or_else(|| bad("bad nrows"))?),
            "cellsize" => {
                cell_size = Some(value.parse::<f64>().map_err(|_| bad("bad cellsize"))?)
            }
            "nodata_value" => {
                nodata = value.parse::<f64>().map_err(|_| bad("bad NODATA_value"))?
            }
            "xllcorner" | "yllcorner" | "xllcenter" | "yllcenter" => {
                value.parse::<f64>().map_err(|_| bad(&format!("bad {key}")))?;
            }
            other => return Err(bad(&format!("unknown header key '{other}'"))),
        }
        lines.next();
    }
    let ncols = ncols.ok_or_else(|| bad("missing ncols"))?;
    let nrows = nrows.ok_or_else(|| bad("missing nrows"))?;
    let cell_size = cell_size.ok_or_else(|| bad("missing cellsize"))?;

    let mut values = Vec::with_capacity(nrows * ncols);
    for line in lines {
        for tok in line.split_whitespace() {
            let v = tok
                .parse::<f64>()
                .map_err(|_| bad(&format!("non-numeric sample '{tok}'")))?;
            values.push(v);
        }
    }
    if values.len() != nrows * ncols {
        return Err(RasterError::DimensionMismatch(format!(
            "{}: {} samples for {nrows}x{ncols} header",
            path.display(),
            values.len()
        )));
    }
    RasterTile::new(values, nrows, ncols, cell_size, nodata)
}

fn parse_dim(s: &str) -> Option<usize> {
    s.parse::<usize>().ok().filter(|&d| d > 0)
}

#[derive(Deserialize)]
struct RawSidecar {
    nrows: usize,
    ncols: usize,
    cell_size_m: f64,
    #[serde(default = "default_nodata")]
    nodata: f64,
}

fn default_nodata() -> f64 {
    -9999.0
}

fn load_raw_f32(path: &Path) -> Result<RasterTile, RasterError> {
    let sidecar_path = {
        let mut s = path.as_os_str().to_os_string();
        s.push(".json");
        std::path::PathBuf::from(s)
    };
    let io_err = |p: &Path, source| RasterError::Io {
        path: p.display().to_string(),
        source,
    };
    let sidecar_text =
        fs::read_to_string(&sidecar_path).map_err(|e| io_err(&sidecar_path, e))?;
    let sidecar: RawSidecar =
        serde_json::from_str(&sidecar_text).map_err(|e| RasterError::MalformedHeader {
            path: sidecar_path.display().to_string(),
            reason: e.to_string(),
        })?;

    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() % 4 != 0 {
        return Err(RasterError::DimensionMismatch(format!(
            "{}: byte length {} not a multiple of 4",
            path.display(),
            bytes.len()
        )));
    }
    let n = bytes.len() / 4;
    if n != sidecar.nrows * sidecar.ncols {
        return Err(RasterError::DimensionMismatch(format!(
            "{}: {n} floats for {}x{} sidecar",
            path.display(),
            sidecar.nrows,
            sidecar.ncols
        )));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    RasterTile::new(values, sidecar.nrows, sidecar.ncols, sidecar.cell_size_m, sidecar.nodata)
}

/// Replace each `factor`×`factor` block by the mean of its non-nodata cells.
///
/// Trailing rows/columns that do not fill a block are dropped. A block with
/// more than half nodata cells becomes nodata; `cell_size` is multiplied by
/// `factor`.
pub fn block_downsample(tile: &RasterTile, factor: usize) -> Result<RasterTile, RasterError> {
    if factor == 0 {
        return Err(RasterError::InvalidArgument("downsample factor must be >= 1".into()));
    }
    if factor == 1 {
        return Ok(tile.clone());
    }
    let out_rows = tile.nrows / factor;
    let out_cols = tile.ncols / factor;
    if out_rows == 0 || out_cols == 0 {
        return Err(RasterError::InvalidArgument(format!(
            "tile {}x{} smaller than factor {factor}",
            tile.nrows, tile.ncols
        )));
    }
    let block_cells = factor * factor;
    let mut values = Vec::with_capacity(out_rows * out_cols);
    for br in 0..out_rows {
        for bc in 0..out_cols {
            let mut sum = 0.0;
            let mut n = 0usize;
            for r in br * factor..(br + 1) * factor {
                for c in bc * factor..(bc + 1) * factor {
                    let v = tile.get(r, c);
                    if !tile.is_nodata(v) {
                        sum += v;
                        n += 1;
                    }
                }
            }
            // Majority rule: >50% nodata in the block propagates nodata.
            if n * 2 < block_cells {
                values.push(tile.nodata);
            } else {
                values.push(sum / n as f64);
            }
        }
    }
    RasterTile::new(values, out_rows, out_cols, tile.cell_size * factor as f64, tile.nodata)
}

/// Reliability test on one N×N stacking-number window.
///
/// Rejects windows containing any non-positive stacking number (void or
/// substituted data) and windows whose max/min ratio exceeds 2 (severe
/// stacking-count discontinuities produce gross elevation errors).
pub fn patch_is_reliable(patch_qa_window: &[f64]) -> bool {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for &v in patch_qa_window {
        if v <= 0.0 || !v.is_finite() {
            return false;
        }
        min = min.min(v);
        max = max.max(v);
    }
    max / min <= 2.0
}

/// Extract non-overlapping N×N patches on a regular grid, N = 2·half_size+1.
///
/// Patches are laid out row-major from the top-left with stride N. A patch
/// is skipped when its DEM or QA window contains nodata, or when the QA
/// window fails [`patch_is_reliable`]. At most `max_count` patches are
/// returned.
pub fn extract_patches(
    dem: &RasterTile,
    qa: &RasterTile,
    half_size: usize,
    max_count: usize,
) -> Result<Vec<Patch>, RasterError> {
    if dem.nrows != qa.nrows || dem.ncols != qa.ncols {
        return Err(RasterError::DimensionMismatch(format!(
            "dem {}x{} vs qa {}x{}",
            dem.nrows, dem.ncols, qa.nrows, qa.ncols
        )));
    }
    if half_size < 2 {
        return Err(RasterError::InvalidArgument("patch half size must be >= 2".into()));
    }
    let n = 2 * half_size + 1;
    let coords = patch_coords(half_size);
    let mut patches = Vec::new();

    'grid: for pr in 0..dem.nrows / n {
        for pc in 0..dem.ncols / n {
            if patches.len() >= max_count {
                break 'grid;
            }
            let (r0, c0) = (pr * n, pc * n);
            let center = (r0 + half_size, c0 + half_size);

            let mut dem_ok = true;
            let mut qa_window = Vec::with_capacity(n * n);
            let mut z_sum = 0.0;
            for r in r0..r0 + n {
                for c in c0..c0 + n {
                    let zv = dem.get(r, c);
                    let qv = qa.get(r, c);
                    if dem.is_nodata(zv) || qa.is_nodata(qv) {
                        dem_ok = false;
                    }
                    z_sum += zv;
                    qa_window.push(qv);
                }
            }
            if !dem_ok || !patch_is_reliable(&qa_window) {
                continue;
            }

            let z_center = dem.get(center.0, center.1);
            let increments = coords
                .iter()
                .map(|&(t, s)| {
                    dem.get((center.0 as i32 + t) as usize, (center.1 as i32 + s) as usize)
                        - z_center
                })
                .collect();
            let n_stk = qa_window.iter().sum::<f64>() / qa_window.len() as f64;
            patches.push(Patch {
                increments,
                coords: coords.clone(),
                predictor: PredictorVector { n_stk, z: z_sum / (n * n) as f64 },
                tile_position: center,
            });
        }
    }
    Ok(patches)
}
