//! Rasterization of element geometry into binary occupancy masks over a
//! metric window, and mask IoU.

use thiserror::Error;

use crate::geom::point_segment_distance;
use crate::scene::{ElementClass, Frame, Polyline, Pt};

/// Pixel grid over an ego-centered metric window. Row-major storage; row 0
/// holds the smallest y (rear), column 0 the smallest x (left).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub width_px: usize,
    pub height_px: usize,
    pub half_width_m: f64,
    pub half_length_m: f64,
}

impl GridSpec {
    pub fn new(width_px: usize, height_px: usize, half_width_m: f64, half_length_m: f64) -> Self {
        GridSpec {
            width_px,
            height_px,
            half_width_m,
            half_length_m,
        }
    }

    /// 0.15 m/px over the default perception window.
    pub fn default_window() -> Self {
        GridSpec::new(200, 400, 15.0, 30.0)
    }

    /// Same resolution over twice the extent, so motion-compensated
    /// geometry from an earlier frame is not clipped away during matching.
    pub fn doubled_window() -> Self {
        GridSpec::new(400, 800, 30.0, 60.0)
    }

    pub fn pitch_x(&self) -> f64 {
        2.0 * self.half_width_m / self.width_px as f64
    }

    pub fn pitch_y(&self) -> f64 {
        2.0 * self.half_length_m / self.height_px as f64
    }

    pub fn center(&self, col: usize, row: usize) -> Pt {
        Pt::new(
            -self.half_width_m + (col as f64 + 0.5) * self.pitch_x(),
            -self.half_length_m + (row as f64 + 0.5) * self.pitch_y(),
        )
    }

    fn col_range(&self, x_min: f64, x_max: f64) -> std::ops::Range<usize> {
        let pitch = self.pitch_x();
        let lo = ((x_min + self.half_width_m) / pitch - 0.5).floor().max(0.0) as usize;
        let hi = ((x_max + self.half_width_m) / pitch + 0.5)
            .ceil()
            .min(self.width_px as f64) as usize;
        lo.min(self.width_px)..hi
    }

    fn row_range(&self, y_min: f64, y_max: f64) -> std::ops::Range<usize> {
        let pitch = self.pitch_y();
        let lo = ((y_min + self.half_length_m) / pitch - 0.5)
            .floor()
            .max(0.0) as usize;
        let hi = ((y_max + self.half_length_m) / pitch + 0.5)
            .ceil()
            .min(self.height_px as f64) as usize;
        lo.min(self.height_px)..hi
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RasterError {
    #[error("mask grids differ: {0:?} vs {1:?}")]
    GridMismatch(GridSpec, GridSpec),
}

/// Binary occupancy mask, bit-packed row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterMask {
    pub grid: GridSpec,
    bits: Vec<u64>,
}

impl RasterMask {
    pub fn empty(grid: GridSpec) -> Self {
        let words = (grid.width_px * grid.height_px).div_ceil(64);
        RasterMask {
            grid,
            bits: vec![0; words],
        }
    }

    #[inline]
    pub fn set(&mut self, col: usize, row: usize) {
        let idx = row * self.grid.width_px + col;
        self.bits[idx / 64] |= 1u64 << (idx % 64);
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> bool {
        let idx = row * self.grid.width_px + col;
        self.bits[idx / 64] >> (idx % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn union_with(&mut self, other: &RasterMask) -> Result<(), RasterError> {
        if self.grid != other.grid {
            return Err(RasterError::GridMismatch(self.grid, other.grid));
        }
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(())
    }

    /// P5 binary PGM dump for debugging, row 0 (rear) at the bottom.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out =
            format!("P5\n{} {}\n255\n", self.grid.width_px, self.grid.height_px).into_bytes();
        for row in (0..self.grid.height_px).rev() {
            for col in 0..self.grid.width_px {
                out.push(if self.get(col, row) { 255 } else { 0 });
            }
        }
        out
    }
}

/// Stroke a polyline into a mask: a pixel is set iff its center lies within
/// `thickness / 2` of the curve (closed curves are stroked along their
/// closure, never filled). Geometry outside the window is clipped silently.
pub fn rasterize(geometry: &Polyline, thickness: f64, grid: GridSpec) -> RasterMask {
    let mut mask = RasterMask::empty(grid);
    let r = thickness / 2.0;
    for (a, b) in geometry.segments() {
        let cols = grid.col_range(a.x.min(b.x) - r, a.x.max(b.x) + r);
        let rows = grid.row_range(a.y.min(b.y) - r, a.y.max(b.y) + r);
        for row in rows {
            for col in cols.clone() {
                if !mask.get(col, row) && point_segment_distance(grid.center(col, row), a, b) <= r {
                    mask.set(col, row);
                }
            }
        }
    }
    mask
}

/// Intersection over union of two masks on the same grid. Returns 0 when
/// both masks are empty.
pub fn iou(a: &RasterMask, b: &RasterMask) -> Result<f64, RasterError> {
    if a.grid != b.grid {
        return Err(RasterError::GridMismatch(a.grid, b.grid));
    }
    let mut inter = 0u64;
    let mut union = 0u64;
    for (x, y) in a.bits.iter().zip(&b.bits) {
        inter += (x & y).count_ones() as u64;
        union += (x | y).count_ones() as u64;
    }
    if union == 0 {
        Ok(0.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// Per-class union masks of a frame's elements.
#[derive(Debug, Clone)]
pub struct ClassMasks {
    pub masks: [RasterMask; 3],
}

impl ClassMasks {
    pub fn class(&self, class: ElementClass) -> &RasterMask {
        &self.masks[class.index()]
    }
}

pub fn rasterize_frame(frame: &Frame, thickness: f64, grid: GridSpec) -> ClassMasks {
    let mut masks = [
        RasterMask::empty(grid),
        RasterMask::empty(grid),
        RasterMask::empty(grid),
    ];
    for el in &frame.elements {
        let m = rasterize(&el.geometry, thickness, grid);
        masks[el.class.index()].union_with(&m).expect("same grid");
    }
    ClassMasks { masks }
}
