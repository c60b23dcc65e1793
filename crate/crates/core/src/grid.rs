//! Uniform-grid spatial index with expanding-ring nearest-neighbour search.

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialGrid {
    cell: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
}

impl SpatialGrid {
    pub fn new(width: f64, height: f64, cell: f64) -> Self {
        let nx = ((width / cell).ceil() as usize).max(1);
        let ny = ((height / cell).ceil() as usize).max(1);
        SpatialGrid { cell, nx, ny, cells: vec![Vec::new(); nx * ny] }
    }

    pub fn cell_size(&self) -> f64 {
        self.cell
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    /// Cell coordinates of a point; points outside the grid clamp to the edge cells.
    pub fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let clamp = |v: f64, n: usize| {
            if v.is_nan() || v <= 0.0 {
                0
            } else {
                ((v / self.cell) as usize).min(n - 1)
            }
        };
        (clamp(x, self.nx), clamp(y, self.ny))
    }

    /// Ids must be inserted in ascending order for cell lists to stay sorted.
    pub fn insert(&mut self, id: u32, x: f64, y: f64) {
        let (cx, cy) = self.cell_of(x, y);
        self.cells[cy * self.nx + cx].push(id);
    }

    /// The ids stored in the cell that `(x, y)` falls into.
    pub fn query_cell(&self, x: f64, y: f64) -> &[u32] {
        let (cx, cy) = self.cell_of(x, y);
        &self.cells[cy * self.nx + cx]
    }

    /// Nearest stored id by Euclidean distance, ties to the lowest id.
    ///
    /// Rings of cells are scanned outward from the query cell. Every cell of
    /// ring `r` lies at least `(r - 1) * cell` away from the query, so once the
    /// best squared distance is strictly below that bound no unvisited cell
    /// can hold a closer (or equally close) point.
    pub fn nearest(&self, x: f64, y: f64, pos: impl Fn(u32) -> (f64, f64)) -> Option<u32> {
        let (cx, cy) = self.cell_of(x, y);
        let (cx, cy) = (cx as isize, cy as isize);
        let max_ring = self.nx.max(self.ny) as isize;
        let mut best: Option<(f64, u32)> = None;
        let consider = |id: u32, best: &mut Option<(f64, u32)>| {
            let (px, py) = pos(id);
            let (dx, dy) = (px - x, py - y);
            let d2 = dx * dx + dy * dy;
            match *best {
                Some((bd, bid)) if d2 > bd || (d2 == bd && id >= bid) => {}
                _ => *best = Some((d2, id)),
            }
        };
        for r in 0..=max_ring {
            if let Some((bd, _)) = best {
                let reach = (r - 1) as f64 * self.cell;
                if r >= 1 && bd < reach * reach {
                    break;
                }
            }
            for gy in (cy - r)..=(cy + r) {
                if gy < 0 || gy >= self.ny as isize {
                    continue;
                }
                let edge_row = gy == cy - r || gy == cy + r;
                let step = if edge_row || r == 0 { 1 } else { (2 * r) as usize };
                let mut gx = cx - r;
                while gx <= cx + r {
                    if gx >= 0 && gx < self.nx as isize {
                        for &id in &self.cells[gy as usize * self.nx + gx as usize] {
                            consider(id, &mut best);
                        }
                    }
                    gx += step as isize;
                }
            }
        }
        best.map(|(_, id)| id)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn brute(points: &[(f64, f64)], x: f64, y: f64) -> Option<u32> {
        let mut best: Option<(f64, u32)> = None;
        for (i, &(px, py)) in points.iter().enumerate() {
            let d = (px - x) * (px - x) + (py - y) * (py - y);
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, i as u32));
            }
        }
        best.map(|(_, i)| i)
    }

    #[test]
    fn ring_search_matches_scan() {
        let mut rng = Rng::seed_from(77);
        for trial in 0..20 {
            let n = 1 + trial * 7;
            let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.range_f64(0.0, 900.0), rng.range_f64(0.0, 400.0))).collect();
            let mut g = SpatialGrid::new(900.0, 400.0, 50.0);
            for (i, p) in pts.iter().enumerate() {
                g.insert(i as u32, p.0, p.1);
            }
            for _ in 0..50 {
                let (x, y) = (rng.range_f64(0.0, 900.0), rng.range_f64(0.0, 400.0));
                assert_eq!(g.nearest(x, y, |i| pts[i as usize]), brute(&pts, x, y));
            }
        }
    }

    #[test]
    fn ties_go_to_lower_id() {
        let pts = [(100.0, 0.0), (0.0, 0.0), (200.0, 0.0)];
        let mut g = SpatialGrid::new(300.0, 300.0, 50.0);
        for (i, p) in pts.iter().enumerate() {
            g.insert(i as u32, p.0, p.1);
        }
        // (100,0) and (0,0) are both 50 m from (50, 0)
        assert_eq!(g.nearest(50.0, 0.0, |i| pts[i as usize]), Some(0));
        // (100,0) and (200,0) are both 50 m from (150, 0); lower id wins
        assert_eq!(g.nearest(150.0, 0.0, |i| pts[i as usize]), Some(0));
    }

    #[test]
    fn empty_grid_has_no_nearest() {
        let g = SpatialGrid::new(100.0, 100.0, 50.0);
        assert_eq!(g.nearest(1.0, 1.0, |_| (0.0, 0.0)), None);
    }

    #[test]
    fn boundary_points_land_in_edge_cells() {
        let g = SpatialGrid::new(100.0, 100.0, 50.0);
        assert_eq!(g.cell_of(100.0, 100.0), (1, 1));
        assert_eq!(g.cell_of(0.0, 0.0), (0, 0));
        assert_eq!(g.cell_of(-5.0, 200.0), (0, 1));
    }
}
