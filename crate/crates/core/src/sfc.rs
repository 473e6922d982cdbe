//! Space-filling anchor grids and anchor orderings.
//!
//! An [`AnchorGrid`] splits a token extent into `rows x cols` cells whose
//! centers act as anchors. An [`AnchorOrdering`] walks those cells along a
//! horizontal scanline (boustrophedon), a Peano curve or a Hilbert curve.
//! Peano and Hilbert are evaluated on the smallest enclosing `3^p` / `2^p`
//! square and cells outside the grid are skipped, so the relative order of
//! in-range cells is the order of the full curve.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{BBox, Error, Point, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CurveKind {
    #[default]
    Scanline,
    Peano,
    Hilbert,
}

impl CurveKind {
    pub const ALL: [CurveKind; 3] = [CurveKind::Scanline, CurveKind::Peano, CurveKind::Hilbert];

    pub fn name(self) -> &'static str {
        match self {
            CurveKind::Scanline => "scanline",
            CurveKind::Peano => "peano",
            CurveKind::Hilbert => "hilbert",
        }
    }
}

impl core::str::FromStr for CurveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "scanline" => Ok(CurveKind::Scanline),
            "peano" => Ok(CurveKind::Peano),
            "hilbert" => Ok(CurveKind::Hilbert),
            _ => Err(Error::InvalidArgument("curve must be scanline, peano or hilbert")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnchorGrid {
    pub rows: usize,
    pub cols: usize,
    pub cell_width: f64,
    pub cell_height: f64,
    pub origin: Point,
    /// Cell centers, row-major.
    pub anchors: Vec<Point>,
}

/// Sizes a grid so that its cell count is close to `target_cluster_count`
/// while following the aspect ratio of `bbox`.
///
/// `rows = round(sqrt(k * H / W))` clamped to `1..=k`, `cols = ceil(k / rows)`,
/// which keeps the cell count in `[k, 2k)`.
pub fn build_anchor_grid(bbox: BBox, target_cluster_count: usize) -> Result<AnchorGrid> {
    if !(bbox.width > 0.0 && bbox.height > 0.0) {
        return Err(Error::EmptyExtent);
    }
    if target_cluster_count == 0 {
        return Err(Error::EmptyInput("target cluster count"));
    }
    let k = target_cluster_count;
    let rows = libm::round(libm::sqrt(k as f64 * bbox.height / bbox.width)) as usize;
    let rows = rows.clamp(1, k);
    let cols = k.div_ceil(rows);
    let cell_width = bbox.width / cols as f64;
    let cell_height = bbox.height / rows as f64;
    let mut anchors = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            anchors.push(Point::new(
                bbox.min.x + (c as f64 + 0.5) * cell_width,
                bbox.min.y + (r as f64 + 0.5) * cell_height,
            ));
        }
    }
    Ok(AnchorGrid {
        rows,
        cols,
        cell_width,
        cell_height,
        origin: bbox.min,
        anchors,
    })
}

impl AnchorGrid {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(row, col)` of a row-major anchor index.
    pub fn cell(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }
}

/// Row-major index of the cell containing `position`.
///
/// A position exactly on a shared edge belongs to the lower-index cell; a
/// position outside the grid is clamped to the nearest border cell.
pub fn quantize(position: Point, grid: &AnchorGrid) -> Result<usize> {
    if position.is_nan() {
        return Err(Error::NanCoordinate);
    }
    let col = axis_cell(position.x - grid.origin.x, grid.cell_width, grid.cols);
    let row = axis_cell(position.y - grid.origin.y, grid.cell_height, grid.rows);
    Ok(row * grid.cols + col)
}

fn axis_cell(offset: f64, cell: f64, count: usize) -> usize {
    let u = offset / cell;
    let idx = libm::ceil(u) - 1.0;
    if idx <= 0.0 {
        0
    } else {
        (idx as usize).min(count - 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorOrdering {
    /// Anchor indices in visit order.
    pub order: Vec<usize>,
    pub kind: CurveKind,
}

impl AnchorOrdering {
    /// Position of every anchor in the visit order (inverse permutation).
    pub fn ranks(&self) -> Vec<usize> {
        let mut ranks = alloc::vec![0; self.order.len()];
        for (rank, &anchor) in self.order.iter().enumerate() {
            ranks[anchor] = rank;
        }
        ranks
    }
}

pub fn order_scanline(grid: &AnchorGrid) -> AnchorOrdering {
    order_by_rank(grid.rows, grid.cols, CurveKind::Scanline)
}

pub fn order_hilbert(grid: &AnchorGrid) -> AnchorOrdering {
    order_by_rank(grid.rows, grid.cols, CurveKind::Hilbert)
}

pub fn order_peano(grid: &AnchorGrid) -> AnchorOrdering {
    order_by_rank(grid.rows, grid.cols, CurveKind::Peano)
}

pub fn order(grid: &AnchorGrid, kind: CurveKind) -> AnchorOrdering {
    order_by_rank(grid.rows, grid.cols, kind)
}

fn order_by_rank(rows: usize, cols: usize, kind: CurveKind) -> AnchorOrdering {
    let ranker = CurveRanker::new(kind, rows, cols);
    let mut keyed: Vec<(u64, usize)> = (0..rows * cols).map(|i| (ranker.rank(i / cols, i % cols), i)).collect();
    keyed.sort_unstable();
    AnchorOrdering {
        order: keyed.into_iter().map(|(_, i)| i).collect(),
        kind,
    }
}

/// Maps grid cells `(row, col)` of a `rows x cols` grid to their position
/// along a curve. Ranks are unique but not necessarily contiguous for the
/// recursive curves, which run over an enclosing square.
#[derive(Debug, Clone, Copy)]
pub struct CurveRanker {
    kind: CurveKind,
    cols: usize,
    side: u64,
}

impl CurveRanker {
    pub fn new(kind: CurveKind, rows: usize, cols: usize) -> Self {
        let extent = rows.max(cols).max(1) as u64;
        let side = match kind {
            CurveKind::Scanline => extent,
            CurveKind::Hilbert => extent.next_power_of_two(),
            CurveKind::Peano => {
                let mut s = 1;
                while s < extent {
                    s *= 3;
                }
                s
            }
        };
        Self { kind, cols, side }
    }

    pub fn rank(&self, row: usize, col: usize) -> u64 {
        match self.kind {
            CurveKind::Scanline => {
                let cols = self.cols as u64;
                let (r, c) = (row as u64, col as u64);
                let along = if r % 2 == 0 { c } else { cols - 1 - c };
                r * cols + along
            }
            CurveKind::Hilbert => hilbert_rank(self.side, col as u64, row as u64),
            CurveKind::Peano => peano_rank(self.side, col as u64, row as u64),
        }
    }
}

/// Distance of `(x, y)` along the Hilbert curve filling an `n x n` square
/// (`n` a power of two). The curve starts at `(0, 0)`, visits `(0, 1)` next
/// and ends at `(n - 1, 0)`.
pub fn hilbert_rank(n: u64, mut x: u64, mut y: u64) -> u64 {
    let mut d = 0;
    let mut s = n / 2;
    while s > 0 {
        let rx = u64::from(x & s > 0);
        let ry = u64::from(y & s > 0);
        d += s * s * ((3 * rx) ^ ry);
        if ry == 0 {
            if rx == 1 {
                x = n - 1 - x;
                y = n - 1 - y;
            }
            core::mem::swap(&mut x, &mut y);
        }
        s /= 2;
    }
    d
}

/// Distance of `(x, y)` along the Peano curve filling an `n x n` square
/// (`n` a power of three). Each 3x3 block is walked column by column in
/// serpentine order; sub-curves are mirrored in x for odd block rows and in y
/// for odd block columns so consecutive cells stay adjacent.
pub fn peano_rank(n: u64, mut x: u64, mut y: u64) -> u64 {
    let mut d = 0;
    let mut s = n / 3;
    while s > 0 {
        let bx = x / s;
        let by = y / s;
        let within = if bx.is_multiple_of(2) { by } else { 2 - by };
        d = d * 9 + bx * 3 + within;
        x %= s;
        y %= s;
        if by % 2 == 1 {
            x = s - 1 - x;
        }
        if bx % 2 == 1 {
            y = s - 1 - y;
        }
        s /= 3;
    }
    d
}
