//! BEV grid geometry, class taxonomy, and semantic label grids.
//!
//! The grid is a metric raster in the ego frame. Rows increase with
//! longitudinal (forward) distance, columns with lateral (left-positive)
//! distance. Pixel `(0, 0)` is centered at `origin` and the valid continuous
//! pixel domain is the half-open box `[0, H) x [0, W)`: a point exactly on
//! the far edge is out of bounds.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis convention of the raster, recorded explicitly so downstream tooling
/// never has to guess which index is which.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AxisOrientation {
    /// Row index follows longitudinal x, column index follows lateral y.
    #[default]
    RowLongitudinal,
}

/// Geometry of a BEV raster: dimensions, meters-per-pixel, and the ego-frame
/// position of the center of pixel `(0, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub height: usize,
    pub width: usize,
    /// Meters per pixel (square pixels).
    pub resolution: f64,
    /// Ego-frame (x, y) of the center of pixel (0, 0), in meters.
    pub origin: (f64, f64),
    #[serde(default)]
    pub orientation: AxisOrientation,
}

/// A continuous pixel coordinate plus its half-open bounds check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub row: f64,
    pub col: f64,
    pub in_bounds: bool,
}

impl GridSpec {
    pub fn new(height: usize, width: usize, resolution: f64, origin: (f64, f64)) -> Result<Self> {
        let spec = GridSpec {
            height,
            width,
            resolution,
            origin,
            orientation: AxisOrientation::RowLongitudinal,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.height < 1 || self.width < 1 {
            return Err(Error::config("grid must be at least 1x1"));
        }
        if self.resolution.is_nan() || self.resolution <= 0.0 || !self.resolution.is_finite() {
            return Err(Error::config("grid resolution must be positive and finite"));
        }
        if !self.origin.0.is_finite() || !self.origin.1.is_finite() {
            return Err(Error::config("grid origin must be finite"));
        }
        Ok(())
    }

    /// 128x128 at 0.5 m/px, laterally centered on the ego axis. Covers a
    /// 64 m square: x in [0, 63.5], y in [-32, 31.5] at pixel centers.
    pub fn desk_default() -> Self {
        GridSpec {
            height: 128,
            width: 128,
            resolution: 0.5,
            origin: (0.0, -32.0),
            orientation: AxisOrientation::RowLongitudinal,
        }
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    /// Project an ego-frame point (meters) to continuous pixel coordinates.
    /// Out-of-bounds points are flagged, never an error.
    pub fn project(&self, x: f64, y: f64) -> GridPoint {
        let row = (x - self.origin.0) / self.resolution;
        let col = (y - self.origin.1) / self.resolution;
        GridPoint {
            row,
            col,
            in_bounds: self.contains(row, col),
        }
    }

    /// Exact inverse of [`GridSpec::project`] for any continuous pixel
    /// coordinate.
    pub fn to_world(&self, row: f64, col: f64) -> (f64, f64) {
        (
            self.origin.0 + row * self.resolution,
            self.origin.1 + col * self.resolution,
        )
    }

    /// Half-open bounds test on continuous pixel coordinates.
    pub fn contains(&self, row: f64, col: f64) -> bool {
        row >= 0.0 && row < self.height as f64 && col >= 0.0 && col < self.width as f64
    }

    /// Nearest integer pixel to a continuous in-bounds coordinate, clamped
    /// to the raster so edge coordinates stay addressable.
    pub fn nearest_pixel(&self, row: f64, col: f64) -> (usize, usize) {
        let i = row.round().max(0.0).min((self.height - 1) as f64) as usize;
        let j = col.round().max(0.0).min((self.width - 1) as f64) as usize;
        (i, j)
    }
}

/// Class taxonomy: how many classes exist, which of them count as drivable,
/// and which one marks the lane centerline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassTaxonomy {
    pub num_classes: usize,
    pub drivable: BTreeSet<usize>,
    pub centerline_class: usize,
    pub labels: Vec<String>,
}

impl ClassTaxonomy {
    pub fn new(
        num_classes: usize,
        drivable: impl IntoIterator<Item = usize>,
        centerline_class: usize,
        labels: Vec<String>,
    ) -> Result<Self> {
        let tax = ClassTaxonomy {
            num_classes,
            drivable: drivable.into_iter().collect(),
            centerline_class,
            labels,
        };
        tax.validate()?;
        Ok(tax)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("taxonomy needs at least 2 classes"));
        }
        if self.drivable.is_empty() {
            return Err(Error::config("drivable set must not be empty"));
        }
        if self.drivable.len() >= self.num_classes {
            return Err(Error::config(
                "drivable set must be a strict subset of the classes",
            ));
        }
        if let Some(&c) = self.drivable.iter().find(|&&c| c >= self.num_classes) {
            return Err(Error::config(format!(
                "drivable class {c} out of range (K = {})",
                self.num_classes
            )));
        }
        if self.centerline_class >= self.num_classes {
            return Err(Error::config(format!(
                "centerline class {} out of range (K = {})",
                self.centerline_class, self.num_classes
            )));
        }
        if self.labels.len() != self.num_classes {
            return Err(Error::config("one label per class required"));
        }
        Ok(())
    }

    /// background / road / centerline / obstacle, with the centerline
    /// counted as drivable.
    pub fn desk_default() -> Self {
        ClassTaxonomy {
            num_classes: 4,
            drivable: BTreeSet::from([ROAD_CLASS, CENTERLINE_CLASS]),
            centerline_class: CENTERLINE_CLASS,
            labels: vec![
                "background".to_string(),
                "road".to_string(),
                "centerline".to_string(),
                "obstacle".to_string(),
            ],
        }
    }

    pub fn is_drivable(&self, class: usize) -> bool {
        self.drivable.contains(&class)
    }

    /// Whether the centerline class is part of the drivable group. The
    /// membership is configurable through `drivable`; this records the
    /// choice in force.
    pub fn centerline_is_drivable(&self) -> bool {
        self.drivable.contains(&self.centerline_class)
    }
}

pub const BACKGROUND_CLASS: usize = 0;
pub const ROAD_CLASS: usize = 1;
pub const CENTERLINE_CLASS: usize = 2;
pub const OBSTACLE_CLASS: usize = 3;

/// Per-pixel class labels on a grid. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticGrid {
    spec: GridSpec,
    num_classes: usize,
    labels: Vec<u8>,
}

const BEVG_MAGIC: &[u8; 4] = b"BEVG";

impl SemanticGrid {
    pub fn new(spec: GridSpec, num_classes: usize, labels: Vec<u8>) -> Result<Self> {
        spec.validate()?;
        if num_classes == 0 || num_classes > 256 {
            return Err(Error::config("num_classes must be in 1..=256"));
        }
        if labels.len() != spec.num_pixels() {
            return Err(Error::data(format!(
                "expected {} labels, got {}",
                spec.num_pixels(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| (l as usize) >= num_classes) {
            return Err(Error::data(format!(
                "label {bad} out of range (K = {num_classes})"
            )));
        }
        Ok(SemanticGrid {
            spec,
            num_classes,
            labels,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn label(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.spec.width + col]
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// Row-major binary format: 16-byte header (magic "BEVG", u32 H, u32 W,
    /// u32 K little-endian) followed by one u8 class index per pixel.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.labels.len());
        out.extend_from_slice(BEVG_MAGIC);
        out.extend_from_slice(&(self.spec.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.spec.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.num_classes as u32).to_le_bytes());
        out.extend_from_slice(&self.labels);
        out
    }

    /// Parse the binary format. Geometry (resolution, origin) is not stored
    /// in the header, so the caller supplies it.
    pub fn from_bytes(bytes: &[u8], resolution: f64, origin: (f64, f64)) -> Result<Self> {
        if bytes.len() < 16 || &bytes[0..4] != BEVG_MAGIC {
            return Err(Error::data("not a BEVG file"));
        }
        let h = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let w = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let k = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let expected = 16 + h * w;
        if bytes.len() != expected {
            return Err(Error::data(format!(
                "BEVG payload size mismatch: expected {expected} bytes, got {}",
                bytes.len()
            )));
        }
        let spec = GridSpec::new(h, w, resolution, origin)?;
        SemanticGrid::new(spec, k, bytes[16..].to_vec())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path, resolution: f64, origin: (f64, f64)) -> Result<Self> {
        let bytes = fs::read(path)?;
        SemanticGrid::from_bytes(&bytes, resolution, origin)
    }

    /// Plain-text loader for hand-written fixtures: one row per line,
    /// comma-separated class indices. Blank lines and `#` comments are
    /// skipped.
    pub fn from_csv(text: &str, spec: GridSpec, num_classes: usize) -> Result<Self> {
        let mut labels = Vec::with_capacity(spec.num_pixels());
        let mut rows = 0usize;
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row: Vec<u8> = line
                .split(',')
                .map(|f| {
                    f.trim()
                        .parse::<u8>()
                        .map_err(|_| Error::data(format!("bad label {f:?} in CSV row {rows}")))
                })
                .collect::<Result<_>>()?;
            if row.len() != spec.width {
                return Err(Error::data(format!(
                    "CSV row {rows} has {} columns, expected {}",
                    row.len(),
                    spec.width
                )));
            }
            labels.extend_from_slice(&row);
            rows += 1;
        }
        if rows != spec.height {
            return Err(Error::data(format!(
                "CSV has {rows} rows, expected {}",
                spec.height
            )));
        }
        SemanticGrid::new(spec, num_classes, labels)
    }
}
