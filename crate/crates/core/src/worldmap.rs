//! Spatial environment: points of interest, a seeded synthetic map generator,
//! the text map format and nearest-location queries.

use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::digest::{digest64, from_hex, to_hex};
use crate::grid::SpatialGrid;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PoiKind {
    Home,
    Workplace,
    Restaurant,
    Recreation,
}

impl PoiKind {
    pub const ALL: [PoiKind; 4] = [PoiKind::Home, PoiKind::Workplace, PoiKind::Restaurant, PoiKind::Recreation];

    pub fn as_str(self) -> &'static str {
        match self {
            PoiKind::Home => "home",
            PoiKind::Workplace => "workplace",
            PoiKind::Restaurant => "restaurant",
            PoiKind::Recreation => "recreation",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for PoiKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PoiKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PoiKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown poi kind {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Poi {
    pub id: u32,
    pub kind: PoiKind,
    pub x: f64,
    pub y: f64,
    pub capacity: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoiCounts {
    pub home: u32,
    pub workplace: u32,
    pub restaurant: u32,
    pub recreation: u32,
}

impl PoiCounts {
    pub fn get(&self, kind: PoiKind) -> u32 {
        match kind {
            PoiKind::Home => self.home,
            PoiKind::Workplace => self.workplace,
            PoiKind::Restaurant => self.restaurant,
            PoiKind::Recreation => self.recreation,
        }
    }

    pub fn total(&self) -> u32 {
        self.home + self.workplace + self.restaurant + self.recreation
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MapError {
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("map parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid map: {0}")]
    Invalid(String),
    #[error("map hash mismatch: file says {stored}, contents hash to {computed}")]
    HashMismatch { stored: String, computed: String },
}

#[derive(Debug, Clone)]
pub struct WorldMap {
    width: f64,
    height: f64,
    origin: (f64, f64),
    pois: Vec<Poi>,
    edges: Vec<(u32, u32)>,
    grid: SpatialGrid,
    kind_grids: [SpatialGrid; 4],
    by_kind: [Vec<u32>; 4],
    map_hash: u64,
}

impl PartialEq for WorldMap {
    fn eq(&self, other: &Self) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.origin == other.origin
            && self.pois == other.pois
            && self.edges == other.edges
            && self.map_hash == other.map_hash
    }
}

pub fn cell_size_for(width: f64, height: f64) -> f64 {
    let diag = (width * width + height * height).sqrt();
    (diag / 64.0).max(50.0)
}

impl WorldMap {
    /// Validates the layout and builds the spatial indexes. `pois[i].id` must equal `i`.
    pub fn new(width: f64, height: f64, origin: (f64, f64), pois: Vec<Poi>, edges: Vec<(u32, u32)>) -> Result<Self, MapError> {
        if !(width > 0.0 && width.is_finite() && height > 0.0 && height.is_finite()) {
            return Err(MapError::Invalid(format!("bounds must be positive, got {width} x {height}")));
        }
        let (lat0, lon0) = origin;
        if !(lat0 > -90.0 && lat0 < 90.0 && lon0 > -180.0 && lon0 < 180.0) {
            return Err(MapError::Invalid(format!("origin ({lat0}, {lon0}) out of range")));
        }
        let mut by_kind: [Vec<u32>; 4] = Default::default();
        for (i, p) in pois.iter().enumerate() {
            if p.id as usize != i {
                return Err(MapError::Invalid(format!("poi ids must be dense from 0; found id {} at position {i}", p.id)));
            }
            if !(p.x >= 0.0 && p.x <= width && p.y >= 0.0 && p.y <= height) {
                return Err(MapError::Invalid(format!("poi {} at ({}, {}) outside bounds", p.id, p.x, p.y)));
            }
            if p.capacity == 0 {
                return Err(MapError::Invalid(format!("poi {} has zero capacity", p.id)));
            }
            by_kind[p.kind.index()].push(p.id);
        }
        for kind in PoiKind::ALL {
            if by_kind[kind.index()].is_empty() {
                return Err(MapError::Invalid(format!("map has no {kind} poi")));
            }
        }
        for &(a, b) in &edges {
            if a as usize >= pois.len() || b as usize >= pois.len() {
                return Err(MapError::Invalid(format!("edge {a}-{b} references a missing poi")));
            }
        }
        let cell = cell_size_for(width, height);
        let mut grid = SpatialGrid::new(width, height, cell);
        let mut kind_grids: [SpatialGrid; 4] = std::array::from_fn(|_| SpatialGrid::new(width, height, cell));
        for p in &pois {
            grid.insert(p.id, p.x, p.y);
            kind_grids[p.kind.index()].insert(p.id, p.x, p.y);
        }
        let mut map = WorldMap { width, height, origin, pois, edges, grid, kind_grids, by_kind, map_hash: 0 };
        map.map_hash = digest64(map.body_text().as_bytes());
        Ok(map)
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn height(&self) -> f64 {
        self.height
    }

    pub fn origin(&self) -> (f64, f64) {
        self.origin
    }

    pub fn pois(&self) -> &[Poi] {
        &self.pois
    }

    pub fn poi(&self, id: u32) -> &Poi {
        &self.pois[id as usize]
    }

    pub fn edges(&self) -> &[(u32, u32)] {
        &self.edges
    }

    pub fn ids_of(&self, kind: PoiKind) -> &[u32] {
        &self.by_kind[kind.index()]
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn map_hash(&self) -> u64 {
        self.map_hash
    }

    /// Pois whose grid cell `(x, y)` hashes to.
    pub fn pois_in_cell(&self, x: f64, y: f64) -> impl Iterator<Item = &Poi> {
        self.grid.query_cell(x, y).iter().map(|&id| &self.pois[id as usize])
    }

    /// Closest poi of `kind` to `(x, y)`; equal distances resolve to the lowest id.
    pub fn nearest_poi(&self, x: f64, y: f64, kind: PoiKind) -> &Poi {
        let id = self.kind_grids[kind.index()]
            .nearest(x, y, |id| {
                let p = &self.pois[id as usize];
                (p.x, p.y)
            })
            .expect("every map holds at least one poi of each kind");
        &self.pois[id as usize]
    }

    fn body_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "bounds {} {}", self.width, self.height);
        let _ = writeln!(s, "origin {} {}", self.origin.0, self.origin.1);
        for p in &self.pois {
            let _ = writeln!(s, "poi {} {} {} {} {}", p.id, p.kind, p.x, p.y, p.capacity);
        }
        for (a, b) in &self.edges {
            let _ = writeln!(s, "edge {a} {b}");
        }
        s
    }

    pub fn to_file_string(&self) -> String {
        let body = self.body_text();
        let mut lines = body.lines();
        let mut out = String::new();
        // bounds, origin, then hash, then the rest
        for _ in 0..2 {
            out.push_str(lines.next().unwrap_or_default());
            out.push('\n');
        }
        let _ = writeln!(out, "hash {}", to_hex(self.map_hash));
        for l in lines {
            out.push_str(l);
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, MapError> {
        let mut bounds = None;
        let mut origin = None;
        let mut stored_hash = None;
        let mut pois = Vec::new();
        let mut edges = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let toks: Vec<&str> = line.split_whitespace().collect();
            let err = |msg: String| MapError::Parse { line: line_no, msg };
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number {s:?}")));
            let int = |s: &str| s.parse::<u32>().map_err(|_| err(format!("bad integer {s:?}")));
            let want = |n: usize| {
                if toks.len() == n {
                    Ok(())
                } else {
                    Err(err(format!("`{}` expects {} fields, got {}", toks[0], n - 1, toks.len() - 1)))
                }
            };
            match toks[0] {
                "bounds" => {
                    want(3)?;
                    bounds = Some((num(toks[1])?, num(toks[2])?));
                }
                "origin" => {
                    want(3)?;
                    origin = Some((num(toks[1])?, num(toks[2])?));
                }
                "hash" => {
                    want(2)?;
                    stored_hash = Some(from_hex(toks[1]).ok_or_else(|| err(format!("bad hash {:?}", toks[1])))?);
                }
                "poi" => {
                    want(6)?;
                    let kind = toks[2].parse::<PoiKind>().map_err(err)?;
                    pois.push(Poi { id: int(toks[1])?, kind, x: num(toks[3])?, y: num(toks[4])?, capacity: int(toks[5])? });
                }
                "edge" => {
                    want(3)?;
                    edges.push((int(toks[1])?, int(toks[2])?));
                }
                other => return Err(err(format!("unknown record {other:?}"))),
            }
        }
        let (w, h) = bounds.ok_or(MapError::Parse { line: 0, msg: "missing bounds line".into() })?;
        let origin = origin.ok_or(MapError::Parse { line: 0, msg: "missing origin line".into() })?;
        let stored = stored_hash.ok_or(MapError::Parse { line: 0, msg: "missing hash line".into() })?;
        let map = WorldMap::new(w, h, origin, pois, edges)?;
        if map.map_hash != stored {
            return Err(MapError::HashMismatch { stored: to_hex(stored), computed: to_hex(map.map_hash) });
        }
        Ok(map)
    }
}

pub fn save_map(map: &WorldMap, path: &Path) -> Result<(), MapError> {
    fs::write(path, map.to_file_string()).map_err(|source| MapError::Io { path: path.display().to_string(), source })
}

pub fn load_map(path: &Path) -> Result<WorldMap, MapError> {
    let text = fs::read_to_string(path).map_err(|source| MapError::Io { path: path.display().to_string(), source })?;
    WorldMap::parse(&text)
}

fn centimeters(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

/// Seeded synthetic city. Homes come from three Gaussian clusters and
/// workplaces from two (sigma = 10% of the diagonal, clipped to bounds);
/// restaurants and recreation venues are uniform.
pub fn generate_map(width: f64, height: f64, counts: PoiCounts, seed: u64, origin: (f64, f64)) -> Result<WorldMap, MapError> {
    if !(width > 0.0 && height > 0.0) {
        return Err(MapError::Invalid(format!("bounds must be positive, got {width} x {height}")));
    }
    for kind in PoiKind::ALL {
        if counts.get(kind) == 0 {
            return Err(MapError::Invalid(format!("count for {kind} must be at least 1")));
        }
    }
    let mut rng = Rng::seed_from(seed);
    let sigma = 0.1 * (width * width + height * height).sqrt();
    let mut pois = Vec::with_capacity(counts.total() as usize);
    let push = |kind: PoiKind, x: f64, y: f64, capacity: u32, pois: &mut Vec<Poi>| {
        let id = pois.len() as u32;
        pois.push(Poi { id, kind, x: centimeters(x.clamp(0.0, width)), y: centimeters(y.clamp(0.0, height)), capacity });
    };
    for (kind, clusters, capacity) in [(PoiKind::Home, 3usize, 4u32), (PoiKind::Workplace, 2, 200)] {
        let centers: Vec<(f64, f64)> =
            (0..clusters).map(|_| (rng.range_f64(0.0, width), rng.range_f64(0.0, height))).collect();
        for _ in 0..counts.get(kind) {
            let (cx, cy) = centers[rng.index(clusters)];
            let x = cx + sigma * rng.gaussian();
            let y = cy + sigma * rng.gaussian();
            push(kind, x, y, capacity, &mut pois);
        }
    }
    for _ in 0..counts.restaurant {
        let (x, y) = (rng.range_f64(0.0, width), rng.range_f64(0.0, height));
        push(PoiKind::Restaurant, x, y, 60, &mut pois);
    }
    for _ in 0..counts.recreation {
        let (x, y) = (rng.range_f64(0.0, width), rng.range_f64(0.0, height));
        let capacity = 5 + rng.below(26) as u32;
        push(PoiKind::Recreation, x, y, capacity, &mut pois);
    }
    WorldMap::new(width, height, origin, pois, Vec::new())
}
