//! Peak-frequency grids, interpolated fields, defect zones and heatmaps.

mod render;

pub use render::{
    heatmap_ppm, heatmap_svg, render_heatmap, ColorScale, ImageFormat, Palette, Rgb, SvgCanvas,
};

use serde::{Deserialize, Serialize};

use crate::defect::DefectClass;
use crate::error::{Error, Result};
use crate::spectral::PeakReading;

/// Coordinates closer than this are treated as the same grid line.
const COORD_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlabBounds {
    pub width_in: f64,
    pub height_in: f64,
}

impl Default for SlabBounds {
    fn default() -> Self {
        SlabBounds {
            width_in: 120.0,
            height_in: 40.0,
        }
    }
}

/// Peak readings on a regular scan grid, row-major by (y, x).
#[derive(Debug, Clone, PartialEq)]
pub struct PeakGrid {
    pub rows: usize,
    pub cols: usize,
    pub readings: Vec<PeakReading>,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub bounds: SlabBounds,
}

impl PeakGrid {
    pub fn at(&self, r: usize, c: usize) -> &PeakReading {
        &self.readings[r * self.cols + c]
    }

    pub fn values(&self) -> Vec<f64> {
        self.readings.iter().map(|p| p.f_peak_khz).collect()
    }

    pub fn points(&self) -> Vec<(f64, f64)> {
        self.readings.iter().map(|p| (p.x_in, p.y_in)).collect()
    }

    /// Smallest spacing between adjacent grid lines.
    pub fn pitch(&self) -> f64 {
        let step = |v: &[f64]| {
            v.windows(2)
                .map(|w| w[1] - w[0])
                .fold(f64::INFINITY, f64::min)
        };
        let p = step(&self.xs).min(step(&self.ys));
        if p.is_finite() {
            p
        } else {
            self.bounds.width_in.min(self.bounds.height_in)
        }
    }
}

/// Orders readings by (y, x) and checks they form a `rows` x `cols` grid.
pub fn build_grid(
    readings: &[PeakReading],
    rows: usize,
    cols: usize,
    bounds: SlabBounds,
) -> Result<PeakGrid> {
    if readings.len() != rows * cols || rows == 0 || cols == 0 {
        return Err(Error::GridCount {
            rows,
            cols,
            actual: readings.len(),
        });
    }
    let mut sorted = readings.to_vec();
    sorted.sort_by(|a, b| a.y_in.total_cmp(&b.y_in).then(a.x_in.total_cmp(&b.x_in)));
    for w in sorted.windows(2) {
        if (w[0].x_in - w[1].x_in).abs() < COORD_EPS && (w[0].y_in - w[1].y_in).abs() < COORD_EPS {
            return Err(Error::DuplicateCoordinate {
                x: w[1].x_in,
                y: w[1].y_in,
            });
        }
    }
    let xs: Vec<f64> = sorted[..cols].iter().map(|p| p.x_in).collect();
    let ys: Vec<f64> = sorted.iter().step_by(cols).map(|p| p.y_in).collect();
    for (i, p) in sorted.iter().enumerate() {
        let (r, c) = (i / cols, i % cols);
        if (p.x_in - xs[c]).abs() > COORD_EPS || (p.y_in - ys[r]).abs() > COORD_EPS {
            return Err(Error::InvalidInput(format!(
                "reading {} at ({}, {}) is off the {rows}x{cols} grid lines",
                p.point_id, p.x_in, p.y_in
            )));
        }
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) || ys.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(
            "grid coordinates must strictly increase".into(),
        ));
    }
    Ok(PeakGrid {
        rows,
        cols,
        readings: sorted,
        xs,
        ys,
        bounds,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Bilinear,
    Bicubic,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Bilinear => "bilinear",
            Method::Bicubic => "bicubic",
        }
    }

    fn min_size(self) -> usize {
        match self {
            Method::Bilinear => 2,
            Method::Bicubic => 4,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bilinear" => Ok(Method::Bilinear),
            "bicubic" | "cubic" => Ok(Method::Bicubic),
            other => Err(Error::parse("interpolation method", other)),
        }
    }
}

/// Evaluates a grid at arbitrary points inside its hull.
#[derive(Debug, Clone)]
pub struct GridInterpolator<'a> {
    grid: &'a PeakGrid,
    values: Vec<f64>,
    method: Method,
}

impl<'a> GridInterpolator<'a> {
    pub fn new(grid: &'a PeakGrid, method: Method) -> Result<Self> {
        let min = method.min_size();
        if grid.rows < min || grid.cols < min {
            return Err(Error::GridTooSmall {
                rows: grid.rows,
                cols: grid.cols,
                method: method.name(),
            });
        }
        Ok(GridInterpolator {
            grid,
            values: grid.values(),
            method,
        })
    }

    fn v(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.grid.cols + c]
    }

    /// `None` outside the convex hull of the sample points.
    pub fn eval(&self, x: f64, y: f64) -> Option<f64> {
        let (c, tx) = locate(&self.grid.xs, x)?;
        let (r, ty) = locate(&self.grid.ys, y)?;
        Some(match self.method {
            Method::Bilinear => {
                let top = lerp(self.v(r, c), self.v(r, c + 1), tx);
                let bottom = lerp(self.v(r + 1, c), self.v(r + 1, c + 1), tx);
                lerp(top, bottom, ty)
            }
            Method::Bicubic => {
                let row = |rr: isize| {
                    let p = [-1isize, 0, 1, 2].map(|d| self.extended(rr, c as isize + d));
                    catmull_rom(p, tx)
                };
                let p = [-1isize, 0, 1, 2].map(|d| row(r as isize + d));
                catmull_rom(p, ty)
            }
        })
    }

    /// Grid value with linear extrapolation one step past each edge.
    fn extended(&self, r: isize, c: isize) -> f64 {
        let (rows, cols) = (self.grid.rows as isize, self.grid.cols as isize);
        let col_val = |r: usize, c: isize| -> f64 {
            if c < 0 {
                2.0 * self.v(r, 0) - self.v(r, 1)
            } else if c >= cols {
                2.0 * self.v(r, (cols - 1) as usize) - self.v(r, (cols - 2) as usize)
            } else {
                self.v(r, c as usize)
            }
        };
        if r < 0 {
            2.0 * col_val(0, c) - col_val(1, c)
        } else if r >= rows {
            2.0 * col_val((rows - 1) as usize, c) - col_val((rows - 2) as usize, c)
        } else {
            col_val(r as usize, c)
        }
    }
}

fn lerp(a: f64, b: f64, t: f64) -> f64 {
    a + (b - a) * t
}

fn catmull_rom(p: [f64; 4], t: f64) -> f64 {
    let [p0, p1, p2, p3] = p;
    0.5 * (2.0 * p1
        + (-p0 + p2) * t
        + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t * t
        + (-p0 + 3.0 * p1 - 3.0 * p2 + p3) * t * t * t)
}

/// Segment index and fraction for `x` on increasing grid lines.
fn locate(lines: &[f64], x: f64) -> Option<(usize, f64)> {
    let n = lines.len();
    if !(x >= lines[0] && x <= lines[n - 1]) {
        return None;
    }
    let i = lines
        .partition_point(|&l| l <= x)
        .saturating_sub(1)
        .min(n - 2);
    Some((i, (x - lines[i]) / (lines[i + 1] - lines[i])))
}

/// Rasterized interpolation over the slab at cell centers.
/// Cells outside the sample hull hold `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub resolution_in: f64,
    pub origin_x_in: f64,
    pub origin_y_in: f64,
    pub rows: usize,
    pub cols: usize,
    pub method: Method,
    pub values: Vec<Option<f64>>,
}

impl Field {
    pub fn get(&self, r: usize, c: usize) -> Option<f64> {
        self.values[r * self.cols + c]
    }

    pub fn cell_center(&self, r: usize, c: usize) -> (f64, f64) {
        (
            self.origin_x_in + (c as f64 + 0.5) * self.resolution_in,
            self.origin_y_in + (r as f64 + 0.5) * self.resolution_in,
        )
    }

    /// (min, max) over defined cells.
    pub fn range(&self) -> Option<(f64, f64)> {
        self.values
            .iter()
            .flatten()
            .fold(None, |acc, &v| match acc {
                None => Some((v, v)),
                Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
            })
    }

    pub fn from_values(
        rows: usize,
        cols: usize,
        resolution_in: f64,
        values: Vec<Option<f64>>,
    ) -> Self {
        assert_eq!(values.len(), rows * cols);
        Field {
            resolution_in,
            origin_x_in: 0.0,
            origin_y_in: 0.0,
            rows,
            cols,
            method: Method::Bilinear,
            values,
        }
    }
}

pub fn interpolate(g: &PeakGrid, resolution_in: f64, method: Method) -> Result<Field> {
    if !(resolution_in > 0.0) {
        return Err(Error::InvalidInput("resolution must be positive".into()));
    }
    let interp = GridInterpolator::new(g, method)?;
    let cols = (g.bounds.width_in / resolution_in).ceil() as usize;
    let rows = (g.bounds.height_in / resolution_in).ceil() as usize;
    let mut field = Field {
        resolution_in,
        origin_x_in: 0.0,
        origin_y_in: 0.0,
        rows,
        cols,
        method,
        values: Vec::with_capacity(rows * cols),
    };
    for r in 0..rows {
        for c in 0..cols {
            let (x, y) = field.cell_center(r, c);
            field.values.push(interp.eval(x, y));
        }
    }
    Ok(field)
}

/// Longitudinal defect zone, `[x_lo_in, x_hi_in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Zone {
    pub class: DefectClass,
    pub x_lo_in: f64,
    pub x_hi_in: f64,
    pub readings: Vec<PeakReading>,
}

/// Zone bounds as quarters of the slab width, in class order.
pub fn zone_bounds(width_in: f64) -> [(DefectClass, f64, f64); 4] {
    let q = width_in / 4.0;
    DefectClass::ALL.map(|c| {
        let i = c.label() as f64;
        (c, i * q, (i + 1.0) * q)
    })
}

/// Index of the zone owning `x`; the far edge belongs to the last zone.
pub fn zone_index(x: f64, width_in: f64) -> usize {
    ((x / (width_in / 4.0)).floor().max(0.0) as usize).min(3)
}

pub fn split_readings(readings: &[PeakReading], width_in: f64) -> [Zone; 4] {
    let mut zones = zone_bounds(width_in).map(|(class, lo, hi)| Zone {
        class,
        x_lo_in: lo,
        x_hi_in: hi,
        readings: Vec::new(),
    });
    for p in readings {
        zones[zone_index(p.x_in, width_in)].readings.push(p.clone());
    }
    zones
}

/// Splits the grid into the four class zones by x coordinate.
pub fn split_zones(g: &PeakGrid) -> [Zone; 4] {
    split_readings(&g.readings, g.bounds.width_in)
}
