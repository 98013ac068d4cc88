//! Neighbour rings around a candidate cell and their distance weighting.
//!
//! Circle 1 is the ring at Chebyshev index distance 1 (8 slots), circle 2 the
//! ring at distance 2 (16 slots). Slots are enumerated row-major: second
//! dimension outer (smaller lengths first), first dimension inner.

use crate::domain::{SizeCell, SizeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Circle {
    First = 1,
    Second = 2,
}

/// `(di, dj)` offsets of circle 1: NW, N, NE, W, E, SW, S, SE.
pub const CIRCLE1_OFFSETS: [(i32, i32); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

pub const CIRCLE2_OFFSETS: [(i32, i32); 16] = [
    (-2, -2),
    (-1, -2),
    (0, -2),
    (1, -2),
    (2, -2),
    (-2, -1),
    (2, -1),
    (-2, 0),
    (2, 0),
    (-2, 1),
    (2, 1),
    (-2, 2),
    (-1, 2),
    (0, 2),
    (1, 2),
    (2, 2),
];

/// Total neighbour slots per candidate (circle 1 then circle 2).
pub const NEIGHBOR_SLOTS: usize = 24;

pub fn ring_offsets(circle: Circle) -> &'static [(i32, i32)] {
    match circle {
        Circle::First => &CIRCLE1_OFFSETS,
        Circle::Second => &CIRCLE2_OFFSETS,
    }
}

/// Offset of neighbour slot `k` (0-based across both circles).
pub fn slot_offset(k: usize) -> (i32, i32) {
    if k < 8 {
        CIRCLE1_OFFSETS[k]
    } else {
        CIRCLE2_OFFSETS[k - 8]
    }
}

/// Grid position of the cell at `offset` from `(i, j)`, if on the grid.
pub fn offset_index(grid: &SizeGrid, i: usize, j: usize, offset: (i32, i32)) -> Option<usize> {
    let ni = i as i64 + offset.0 as i64;
    let nj = j as i64 + offset.1 as i64;
    if ni < 0 || nj < 0 {
        return None;
    }
    grid.index_of(ni as usize, nj as usize)
}

/// The ring of `circle` around `cell`, one entry per slot; off-grid slots are `None`.
pub fn neighbor_cells<'g>(
    cell: &SizeCell,
    grid: &'g SizeGrid,
    circle: Circle,
) -> Vec<(usize, Option<&'g SizeCell>)> {
    ring_offsets(circle)
        .iter()
        .enumerate()
        .map(|(slot, &off)| {
            (
                slot,
                offset_index(grid, cell.i, cell.j, off).map(|k| &grid.cells()[k]),
            )
        })
        .collect()
}

/// Divisor applied to a neighbour at `manhattan` index distance: the candidate
/// sits one unit from a virtual origin, so the divisor is distance + 1.
pub fn distance_divisor(manhattan: usize) -> f64 {
    (manhattan + 1) as f64
}

pub fn weighted_neighbor_kpi(kpi: f64, neighbor: &SizeCell, candidate: &SizeCell) -> f64 {
    kpi / distance_divisor(neighbor.manhattan(candidate))
}
