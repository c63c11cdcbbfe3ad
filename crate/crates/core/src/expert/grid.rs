//! Occupancy grid and the A* global planner.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::geom::Aabb;

/// 2D obstacle raster. `cells[iy * width + ix]` is true when occupied.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyGrid {
    pub resolution: f64,
    pub origin: [f64; 2],
    pub width: usize,
    pub height: usize,
    cells: Vec<bool>,
}

/// Grid-aligned route with its cost in cell units.
#[derive(Clone, Debug, PartialEq)]
pub struct Path {
    pub waypoints: Vec<[f64; 2]>,
    pub cells: Vec<(usize, usize)>,
    pub cost: f64,
}

impl OccupancyGrid {
    /// Builds a grid from a raw raster, dilating every occupied cell by
    /// `inflation` meters. Inflation happens here and nowhere else.
    pub fn new(
        resolution: f64,
        origin: [f64; 2],
        width: usize,
        height: usize,
        raw: Vec<bool>,
        inflation: f64,
    ) -> Result<OccupancyGrid> {
        if !(resolution > 0.0) || raw.len() != width * height {
            return Err(Error::InvalidConfig(
                "occupancy grid needs resolution > 0 and width*height cells".into(),
            ));
        }
        let r = (inflation / resolution).floor() as i64;
        let cells = if r <= 0 {
            raw
        } else {
            let mut out = raw.clone();
            for iy in 0..height as i64 {
                for ix in 0..width as i64 {
                    if !raw[(iy as usize) * width + ix as usize] {
                        continue;
                    }
                    for dy in -r..=r {
                        for dx in -r..=r {
                            if dx * dx + dy * dy > r * r {
                                continue;
                            }
                            let (nx, ny) = (ix + dx, iy + dy);
                            if nx >= 0 && ny >= 0 && (nx as usize) < width && (ny as usize) < height {
                                out[ny as usize * width + nx as usize] = true;
                            }
                        }
                    }
                }
            }
            out
        };
        Ok(OccupancyGrid {
            resolution,
            origin,
            width,
            height,
            cells,
        })
    }

    /// Rasterizes box footprints over a rectangle: a cell is occupied when its
    /// center lies within `inflation` of a box in the xy plane.
    pub fn from_boxes(
        boxes: &[Aabb],
        min: [f64; 2],
        max: [f64; 2],
        resolution: f64,
        inflation: f64,
    ) -> Result<OccupancyGrid> {
        let width = ((max[0] - min[0]) / resolution).ceil().max(1.0) as usize;
        let height = ((max[1] - min[1]) / resolution).ceil().max(1.0) as usize;
        let mut cells = vec![false; width * height];
        for iy in 0..height {
            for ix in 0..width {
                let cx = min[0] + (ix as f64 + 0.5) * resolution;
                let cy = min[1] + (iy as f64 + 0.5) * resolution;
                cells[iy * width + ix] = boxes.iter().any(|b| b.distance_xy(cx, cy) <= inflation);
            }
        }
        // Inflation is folded into the distance test above.
        OccupancyGrid::new(resolution, min, width, height, cells, 0.0)
    }

    pub fn occupied(&self, ix: usize, iy: usize) -> bool {
        self.cells[iy * self.width + ix]
    }

    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let fx = ((p[0] - self.origin[0]) / self.resolution).floor();
        let fy = ((p[1] - self.origin[1]) / self.resolution).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.width as f64 || fy >= self.height as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    pub fn cell_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        [
            self.origin[0] + (ix as f64 + 0.5) * self.resolution,
            self.origin[1] + (iy as f64 + 0.5) * self.resolution,
        ]
    }

    pub fn is_free_point(&self, p: [f64; 2]) -> bool {
        matches!(self.cell_of(p), Some((ix, iy)) if !self.occupied(ix, iy))
    }

    /// 8-connected neighbours with step cost. Diagonal moves may not cut an
    /// occupied corner.
    pub fn neighbors(&self, ix: usize, iy: usize) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        const MOVES: [(i64, i64); 8] = [
            (-1, -1),
            (-1, 0),
            (-1, 1),
            (0, -1),
            (0, 1),
            (1, -1),
            (1, 0),
            (1, 1),
        ];
        MOVES.iter().filter_map(move |&(dx, dy)| {
            let nx = ix as i64 + dx;
            let ny = iy as i64 + dy;
            if nx < 0 || ny < 0 || nx >= self.width as i64 || ny >= self.height as i64 {
                return None;
            }
            let (nx, ny) = (nx as usize, ny as usize);
            if self.occupied(nx, ny) {
                return None;
            }
            if dx != 0 && dy != 0 && (self.occupied(nx, iy) || self.occupied(ix, ny)) {
                return None;
            }
            let cost = if dx != 0 && dy != 0 {
                std::f64::consts::SQRT_2
            } else {
                1.0
            };
            Some((nx, ny, cost))
        })
    }
}

fn octile(a: (usize, usize), b: (usize, usize)) -> f64 {
    let dx = a.0.abs_diff(b.0) as f64;
    let dy = a.1.abs_diff(b.1) as f64;
    (dx + dy) + (std::f64::consts::SQRT_2 - 2.0) * dx.min(dy)
}

#[derive(PartialEq)]
struct Open {
    f: f64,
    cell: (usize, usize),
}

impl Eq for Open {}

impl Ord for Open {
    // Min-heap on (f, ix, iy).
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .f
            .total_cmp(&self.f)
            .then_with(|| other.cell.cmp(&self.cell))
    }
}

impl PartialOrd for Open {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Minimum-cost 8-connected route between the cells containing `start` and
/// `goal`, with an octile heuristic. Ties on f pop the smaller (ix, iy) first.
pub fn astar(grid: &OccupancyGrid, start: [f64; 2], goal: [f64; 2]) -> Result<Path> {
    let s = grid.cell_of(start).ok_or(Error::PoseInCollision)?;
    let g = grid.cell_of(goal).ok_or(Error::PoseInCollision)?;
    if grid.occupied(s.0, s.1) || grid.occupied(g.0, g.1) {
        return Err(Error::PoseInCollision);
    }
    let idx = |c: (usize, usize)| c.1 * grid.width + c.0;
    let n = grid.width * grid.height;
    let mut cost = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut open = BinaryHeap::new();
    cost[idx(s)] = 0.0;
    open.push(Open {
        f: octile(s, g),
        cell: s,
    });
    while let Some(Open { cell, .. }) = open.pop() {
        let ci = idx(cell);
        if closed[ci] {
            continue;
        }
        closed[ci] = true;
        if cell == g {
            break;
        }
        for (nx, ny, step) in grid.neighbors(cell.0, cell.1) {
            let ni = idx((nx, ny));
            if closed[ni] {
                continue;
            }
            let tentative = cost[ci] + step;
            if tentative < cost[ni] {
                cost[ni] = tentative;
                parent[ni] = ci;
                open.push(Open {
                    f: tentative + octile((nx, ny), g),
                    cell: (nx, ny),
                });
            }
        }
    }
    let gi = idx(g);
    if !closed[gi] {
        return Err(Error::UnreachableGoal);
    }
    let mut cells = vec![g];
    let mut cur = gi;
    while cur != idx(s) {
        cur = parent[cur];
        cells.push((cur % grid.width, cur / grid.width));
    }
    cells.reverse();
    Ok(Path {
        waypoints: cells.iter().map(|&(x, y)| grid.cell_center(x, y)).collect(),
        cells,
        cost: cost[gi],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn empty(w: usize, h: usize) -> OccupancyGrid {
        OccupancyGrid::new(1.0, [0.0, 0.0], w, h, vec![false; w * h], 0.0).unwrap()
    }

    #[test]
    fn diagonal_on_empty_grid() {
        let p = astar(&empty(5, 5), [0.0, 0.0], [4.0, 4.0]).unwrap();
        assert!((p.cost - 4.0 * std::f64::consts::SQRT_2).abs() < 1e-12);
        assert_eq!(p.cells, (0..5).map(|i| (i, i)).collect::<Vec<_>>());
        assert_eq!(p.waypoints[4], [4.5, 4.5]);
    }

    #[test]
    fn goal_in_obstacle() {
        let mut raw = vec![false; 25];
        raw[4 * 5 + 4] = true;
        let g = OccupancyGrid::new(1.0, [0.0, 0.0], 5, 5, raw, 0.0).unwrap();
        assert!(matches!(astar(&g, [0.0, 0.0], [4.0, 4.0]), Err(Error::PoseInCollision)));
    }

    #[test]
    fn sealed_goal_is_unreachable() {
        let mut raw = vec![false; 25];
        for y in 0..5 {
            raw[y * 5 + 2] = true;
        }
        let g = OccupancyGrid::new(1.0, [0.0, 0.0], 5, 5, raw, 0.0).unwrap();
        assert!(matches!(astar(&g, [0.0, 0.0], [4.0, 4.0]), Err(Error::UnreachableGoal)));
    }

    #[test]
    fn inflation_dilates_once() {
        let mut raw = vec![false; 49];
        raw[3 * 7 + 3] = true;
        let g = OccupancyGrid::new(0.1, [0.0, 0.0], 7, 7, raw, 0.2).unwrap();
        let count = (0..49).filter(|i| g.cells[*i]).count();
        // Disc of radius 2 cells: 13 cells.
        assert_eq!(count, 13);
    }
}
