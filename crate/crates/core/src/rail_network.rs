//! Static rail topology: cell compaction, legal transitions, admissible
//! heuristic precomputation, and a seeded random map generator.

use crate::{CellIndex, Direction, TransitionMask, UNREACHABLE};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use thiserror::Error;

/// Grid dimension cap shared by the parser and the generator.
pub const MAX_DIM: u32 = 150;

/// Rail-cell count above which a loaded map is flagged (not rejected).
pub const SOFT_CELL_LIMIT: usize = 3000;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("map validation failed:\n{}", violations.join("\n"))]
    Invalid { violations: Vec<String> },
}

#[derive(Debug, Error)]
pub enum GenerateError {
    #[error("grid {width}x{height} is too small for {cities} cities")]
    TooSmall { width: u32, height: u32, cities: u32 },
    #[error("generation failed after {attempts} attempts: {reason}")]
    Failed { attempts: u32, reason: String },
}

/// Compacted grid of rail cells with per-orientation transition masks.
#[derive(Debug, Clone)]
pub struct RailNetwork {
    pub width: u32,
    pub height: u32,
    /// Rail cells in row-major order; the position in this list is the
    /// compact cell index.
    cells: Vec<RailCell>,
    /// (row, col) -> compact index, dense over the grid.
    grid: Vec<Option<CellIndex>>,
    /// Warnings produced at load/validation time (e.g. cell count over the
    /// soft limit). Never fatal.
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy)]
pub struct RailCell {
    pub row: u32,
    pub col: u32,
    pub mask: TransitionMask,
}

impl RailNetwork {
    /// Builds a network from explicit cell masks (row-major over the full
    /// grid, `0x0000` meaning no rail) and validates it.
    pub fn from_masks(width: u32, height: u32, masks: &[u16]) -> Result<RailNetwork, MapError> {
        assert_eq!(masks.len(), (width * height) as usize);
        let mut cells = Vec::new();
        let mut grid = vec![None; (width * height) as usize];
        for row in 0..height {
            for col in 0..width {
                let mask = TransitionMask(masks[(row * width + col) as usize]);
                if !mask.is_empty() {
                    grid[(row * width + col) as usize] = Some(cells.len() as CellIndex);
                    cells.push(RailCell { row, col, mask });
                }
            }
        }
        let mut net = RailNetwork {
            width,
            height,
            cells,
            grid,
            warnings: Vec::new(),
        };
        let violations = net.validate();
        if !violations.is_empty() {
            return Err(MapError::Invalid { violations });
        }
        if net.num_cells() > SOFT_CELL_LIMIT {
            net.warnings
                .push(format!("cell count exceeds {SOFT_CELL_LIMIT} ({})", net.num_cells()));
        }
        Ok(net)
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn cell(&self, idx: CellIndex) -> &RailCell {
        &self.cells[idx as usize]
    }

    pub fn cells(&self) -> &[RailCell] {
        &self.cells
    }

    pub fn cell_at(&self, row: u32, col: u32) -> Option<CellIndex> {
        if row >= self.height || col >= self.width {
            return None;
        }
        self.grid[(row * self.width + col) as usize]
    }

    /// Compact index of the neighbor one step in `dir`, if it is a rail cell.
    pub fn neighbor(&self, cell: CellIndex, dir: Direction) -> Option<CellIndex> {
        let c = self.cell(cell);
        let (dr, dc) = dir.offset();
        let nr = c.row as i64 + dr as i64;
        let nc = c.col as i64 + dc as i64;
        if nr < 0 || nc < 0 {
            return None;
        }
        self.cell_at(nr as u32, nc as u32)
    }

    /// Moves allowed for an agent at `cell` heading `orientation`: the mask
    /// nibble for the incoming orientation, resolved to neighbor indices. The
    /// new orientation equals the exit direction.
    pub fn transitions(
        &self,
        cell: CellIndex,
        orientation: Direction,
    ) -> impl Iterator<Item = (CellIndex, Direction)> + '_ {
        self.cell(cell)
            .mask
            .exits(orientation)
            .filter_map(move |e| self.neighbor(cell, e).map(|n| (n, e)))
    }

    /// Checks every structural invariant, returning one message per
    /// violation. An empty list means the network is well formed.
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.width > MAX_DIM || self.height > MAX_DIM {
            out.push(format!(
                "grid {}x{} exceeds the maximum dimensions {MAX_DIM}x{MAX_DIM}",
                self.width, self.height
            ));
        }
        for (idx, c) in self.cells.iter().enumerate() {
            for incoming in Direction::ALL {
                for exit in c.mask.exits(incoming) {
                    match self.neighbor(idx as CellIndex, exit) {
                        None => out.push(format!(
                            "cell ({}, {}): exit {exit} for incoming {incoming} leaves the rails",
                            c.row, c.col
                        )),
                        Some(n) => {
                            // reciprocity: the neighbor must offer at least one
                            // exit for the orientation we arrive with
                            if self.cell(n).mask.exits(exit).next().is_none() {
                                out.push(format!(
                                    "cell ({}, {}): move {exit} reaches ({}, {}) which traps orientation {exit}",
                                    c.row, c.col,
                                    self.cell(n).row, self.cell(n).col
                                ));
                            }
                        }
                    }
                }
            }
        }
        out.dedup();
        out
    }

    /// Renders the map file format (inverse of [`load_map`]).
    pub fn to_map_text(&self) -> String {
        let mut masks = vec![0u16; (self.width * self.height) as usize];
        for c in &self.cells {
            masks[(c.row * self.width + c.col) as usize] = c.mask.0;
        }
        let mut out = format!("RAIL v1 {} {}\n", self.width, self.height);
        for row in 0..self.height {
            let line: Vec<String> = (0..self.width)
                .map(|col| format!("{:04x}", masks[(row * self.width + col) as usize]))
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Parses the plain-text map format: a `RAIL v1 <width> <height>` header
/// followed by `height` lines of `width` 4-hex-digit masks.
pub fn load_map(text: &str) -> Result<RailNetwork, MapError> {
    let mut lines = text.lines().enumerate();
    let (hline, header) = lines.next().ok_or(MapError::Parse {
        line: 1,
        column: 1,
        message: "empty map file".into(),
    })?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 4 || parts[0] != "RAIL" || parts[1] != "v1" {
        return Err(MapError::Parse {
            line: hline + 1,
            column: 1,
            message: format!("expected header \"RAIL v1 <width> <height>\", got {header:?}"),
        });
    }
    let parse_dim = |s: &str, col: usize| {
        s.parse::<u32>().map_err(|_| MapError::Parse {
            line: hline + 1,
            column: col,
            message: format!("invalid dimension {s:?}"),
        })
    };
    let width = parse_dim(parts[2], 9)?;
    let height = parse_dim(parts[3], 9)?;
    if width == 0 || height == 0 {
        return Err(MapError::Parse {
            line: hline + 1,
            column: 9,
            message: "dimensions must be positive".into(),
        });
    }
    let mut masks = Vec::with_capacity((width * height) as usize);
    let mut rows_read = 0;
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        if rows_read == height {
            return Err(MapError::Parse {
                line: lineno + 1,
                column: 1,
                message: format!("more than {height} rows of cells"),
            });
        }
        let mut cols_read = 0;
        for (field_idx, field) in line.split_whitespace().enumerate() {
            let value = u16::from_str_radix(field, 16).map_err(|_| MapError::Parse {
                line: lineno + 1,
                column: field_idx + 1,
                message: format!("invalid 4-hex-digit mask {field:?}"),
            })?;
            if field.len() != 4 {
                return Err(MapError::Parse {
                    line: lineno + 1,
                    column: field_idx + 1,
                    message: format!("mask {field:?} is not exactly 4 hex digits"),
                });
            }
            masks.push(value);
            cols_read += 1;
        }
        if cols_read != width {
            return Err(MapError::Parse {
                line: lineno + 1,
                column: 1,
                message: format!("expected {width} masks, found {cols_read}"),
            });
        }
        rows_read += 1;
    }
    if rows_read != height {
        return Err(MapError::Parse {
            line: text.lines().count(),
            column: 1,
            message: format!("expected {height} rows of cells, found {rows_read}"),
        });
    }
    RailNetwork::from_masks(width, height, &masks)
}

/// Exact minimum move counts from every (cell, orientation) state to one
/// target cell, over the static transition graph.
#[derive(Debug, Clone)]
pub struct HeuristicTable {
    pub target_cell: CellIndex,
    /// Indexed by `cell * 4 + orientation`.
    dist: Vec<u32>,
}

impl HeuristicTable {
    pub fn dist(&self, cell: CellIndex, orientation: Direction) -> u32 {
        self.dist[cell as usize * 4 + orientation.index()]
    }

    pub fn reachable(&self, cell: CellIndex, orientation: Direction) -> bool {
        self.dist(cell, orientation) < UNREACHABLE
    }
}

/// Backward breadth-first search over (cell, orientation) states. Being at
/// the target counts as distance 0 for every orientation; each legal
/// cell-to-cell move costs 1.
pub fn compute_heuristic(net: &RailNetwork, target: CellIndex) -> HeuristicTable {
    let n = net.num_cells();
    let mut dist = vec![UNREACHABLE; n * 4];
    // reverse adjacency: for each state, the states that can move into it
    let mut rev: Vec<Vec<u32>> = vec![Vec::new(); n * 4];
    for cell in 0..n as CellIndex {
        for o in Direction::ALL {
            for (next, no) in net.transitions(cell, o) {
                rev[next as usize * 4 + no.index()].push(cell * 4 + o.index() as u32);
            }
        }
    }
    let mut queue = std::collections::VecDeque::new();
    for o in Direction::ALL {
        let s = target as usize * 4 + o.index();
        dist[s] = 0;
        queue.push_back(s as u32);
    }
    while let Some(s) = queue.pop_front() {
        let d = dist[s as usize];
        for &p in &rev[s as usize] {
            if dist[p as usize] == UNREACHABLE {
                dist[p as usize] = d + 1;
                queue.push_back(p);
            }
        }
    }
    HeuristicTable {
        target_cell: target,
        dist,
    }
}

/// Precomputes one heuristic table per distinct target cell.
pub fn heuristics_for_targets(
    net: &RailNetwork,
    targets: impl IntoIterator<Item = CellIndex>,
) -> HashMap<CellIndex, HeuristicTable> {
    let mut out = HashMap::new();
    for t in targets {
        out.entry(t).or_insert_with(|| compute_heuristic(net, t));
    }
    out
}

/// Parameters for the random map generator.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorParams {
    pub width: u32,
    pub height: u32,
    pub cities: u32,
    /// Extra corridors carved per city toward its nearest neighbors.
    pub rails_per_city: u32,
}

/// Seeded random network: places city cells, connects them with L-shaped
/// corridors, and synthesizes masks from the carved edge set. All junctions
/// permit every non-reversing exit, which keeps reciprocity valid by
/// construction.
pub fn generate_random_network(
    params: GeneratorParams,
    seed: u64,
) -> Result<RailNetwork, GenerateError> {
    if params.cities < 2 {
        return Err(GenerateError::Failed {
            attempts: 0,
            reason: "need at least 2 cities".into(),
        });
    }
    // each city needs breathing room; a coarse capacity check up front
    let capacity = (params.width / 3) * (params.height / 3);
    if capacity < params.cities {
        return Err(GenerateError::TooSmall {
            width: params.width,
            height: params.height,
            cities: params.cities,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    const ATTEMPTS: u32 = 20;
    for attempt in 0..ATTEMPTS {
        if let Some(net) = try_generate(&params, &mut rng) {
            return Ok(net);
        }
        if attempt == ATTEMPTS - 1 {
            break;
        }
    }
    Err(GenerateError::Failed {
        attempts: ATTEMPTS,
        reason: "could not place connected cities".into(),
    })
}

fn try_generate(params: &GeneratorParams, rng: &mut ChaCha8Rng) -> Option<RailNetwork> {
    let w = params.width;
    let h = params.height;
    // place cities with pairwise separation
    let mut cities: Vec<(u32, u32)> = Vec::new();
    let min_sep = 3u32;
    let mut tries = 0;
    while (cities.len() as u32) < params.cities {
        tries += 1;
        if tries > 500 {
            return None;
        }
        let r = rng.gen_range(0..h);
        let c = rng.gen_range(0..w);
        if cities
            .iter()
            .all(|&(cr, cc)| cr.abs_diff(r) + cc.abs_diff(c) >= min_sep)
        {
            cities.push((r, c));
        }
    }
    // undirected edges between adjacent cells: (row, col, horizontal?)
    let mut edges: std::collections::BTreeSet<(u32, u32, bool)> = std::collections::BTreeSet::new();
    let carve = |edges: &mut std::collections::BTreeSet<(u32, u32, bool)>,
                     from: (u32, u32),
                     to: (u32, u32),
                     row_first: bool| {
        let (mut r, mut c) = from;
        let walk_rows = |edges: &mut std::collections::BTreeSet<_>, r: &mut u32, c: u32| {
            while *r != to.0 {
                let next = if to.0 > *r { *r + 1 } else { *r - 1 };
                edges.insert(((*r).min(next), c, false));
                *r = next;
            }
        };
        let walk_cols = |edges: &mut std::collections::BTreeSet<_>, r: u32, c: &mut u32| {
            while *c != to.1 {
                let next = if to.1 > *c { *c + 1 } else { *c - 1 };
                edges.insert((r, (*c).min(next), true));
                *c = next;
            }
        };
        if row_first {
            walk_rows(edges, &mut r, c);
            walk_cols(edges, r, &mut c);
        } else {
            walk_cols(edges, r, &mut c);
            walk_rows(edges, &mut r, c);
        }
    };
    // spanning chain through the cities in placement order, then extra
    // corridors toward nearest neighbors
    for i in 1..cities.len() {
        carve(&mut edges, cities[i - 1], cities[i], rng.gen_bool(0.5));
    }
    for i in 0..cities.len() {
        let mut others: Vec<usize> = (0..cities.len()).filter(|&j| j != i).collect();
        others.sort_by_key(|&j| {
            cities[i].0.abs_diff(cities[j].0) + cities[i].1.abs_diff(cities[j].1)
        });
        for &j in others.iter().take(params.rails_per_city as usize) {
            carve(&mut edges, cities[i], cities[j], rng.gen_bool(0.5));
        }
    }
    // synthesize masks from the edge set
    let mut stub_sets: HashMap<(u32, u32), Vec<Direction>> = HashMap::new();
    for &(r, c, horizontal) in &edges {
        if horizontal {
            stub_sets.entry((r, c)).or_default().push(Direction::E);
            stub_sets.entry((r, c + 1)).or_default().push(Direction::W);
        } else {
            stub_sets.entry((r, c)).or_default().push(Direction::S);
            stub_sets.entry((r + 1, c)).or_default().push(Direction::N);
        }
    }
    let mut masks = vec![0u16; (w * h) as usize];
    for ((r, c), mut stubs) in stub_sets {
        stubs.sort_by_key(|d| d.index());
        stubs.dedup();
        masks[(r * w + c) as usize] = TransitionMask::from_edges(&stubs).0;
    }
    let net = RailNetwork::from_masks(w, h, &masks).ok()?;
    if net.num_cells() > SOFT_CELL_LIMIT {
        return None;
    }
    // all city cells must be mutually reachable as plain cells
    let start = net.cell_at(cities[0].0, cities[0].1)?;
    let reach = cell_reachability(&net, start);
    for &(r, c) in &cities[1..] {
        let idx = net.cell_at(r, c)?;
        if !reach[idx as usize] {
            return None;
        }
    }
    Some(net)
}

/// Undirected cell-level reachability (ignores orientation); used by the
/// generator's connectivity check.
pub fn cell_reachability(net: &RailNetwork, start: CellIndex) -> Vec<bool> {
    let mut seen = vec![false; net.num_cells()];
    let mut queue = std::collections::VecDeque::new();
    seen[start as usize] = true;
    queue.push_back(start);
    while let Some(c) = queue.pop_front() {
        for o in Direction::ALL {
            for (n, _) in net.transitions(c, o) {
                if !seen[n as usize] {
                    seen[n as usize] = true;
                    queue.push_back(n);
                }
            }
        }
    }
    seen
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight_line_map(n: u32) -> RailNetwork {
        // 1 x n east-west line; the end cells are termini that allow both
        // facing outward (continue into the line) and reversing on arrival
        let mut masks = vec![0x0401u16; n as usize];
        masks[0] = 0x0404;
        masks[n as usize - 1] = 0x0101;
        RailNetwork::from_masks(n, 1, &masks).unwrap()
    }

    #[test]
    fn smallest_connected_map_loads() {
        let text = "RAIL v1 2 1\n0404 0101\n";
        let net = load_map(text).unwrap();
        assert_eq!(net.num_cells(), 2);
        assert_eq!(net.cell_at(0, 0), Some(0));
        assert_eq!(net.cell_at(0, 1), Some(1));
    }

    #[test]
    fn off_grid_exit_rejected_with_cell_named() {
        // east-west straight at the east border: its E exit leaves the grid
        let text = "RAIL v1 1 1\n0401\n";
        let err = load_map(text).unwrap_err();
        match err {
            MapError::Invalid { violations } => {
                assert!(violations.iter().any(|v| v.contains("(0, 0)")), "{violations:?}");
            }
            other => panic!("expected validation error, got {other}"),
        }
    }

    #[test]
    fn oversized_cell_count_is_flagged_not_rejected() {
        // 150x150 all-rail grid: interior cells are 4-way crossings, borders
        // T junctions, corners curves — all built from the edge rule
        let w = 150u32;
        let mut masks = vec![0u16; (w * w) as usize];
        for r in 0..w {
            for c in 0..w {
                let mut edges = Vec::new();
                if r > 0 {
                    edges.push(Direction::N);
                }
                if r + 1 < w {
                    edges.push(Direction::S);
                }
                if c > 0 {
                    edges.push(Direction::W);
                }
                if c + 1 < w {
                    edges.push(Direction::E);
                }
                masks[(r * w + c) as usize] = TransitionMask::from_edges(&edges).0;
            }
        }
        let net = RailNetwork::from_masks(w, w, &masks).unwrap();
        assert_eq!(net.num_cells(), 22500);
        assert!(net.warnings.iter().any(|w| w.contains("exceeds 3000")), "{:?}", net.warnings);
    }

    #[test]
    fn parse_error_carries_position() {
        let err = load_map("RAIL v1 2 1\n0100 zzzz\n").unwrap_err();
        match err {
            MapError::Parse { line, column, .. } => {
                assert_eq!(line, 2);
                assert_eq!(column, 2);
            }
            other => panic!("expected parse error, got {other}"),
        }
    }

    #[test]
    fn straight_cell_single_transition() {
        let net = straight_line_map(3);
        let moves: Vec<_> = net.transitions(1, Direction::E).collect();
        assert_eq!(moves, vec![(2, Direction::E)]);
    }

    #[test]
    fn dead_end_reverses_into_neighbor() {
        let net = straight_line_map(3);
        // cell 2 is the east dead end; entered facing E, must come back W
        let moves: Vec<_> = net.transitions(2, Direction::E).collect();
        assert_eq!(moves, vec![(1, Direction::W)]);
    }

    #[test]
    fn simple_switch_two_transitions() {
        // 3x3 cross shape: center cell has N, E, S stubs (a T junction)
        let mut masks = vec![0u16; 9];
        masks[1] = TransitionMask::from_edges(&[Direction::S]).0; // north stub
        masks[7] = TransitionMask::from_edges(&[Direction::N]).0; // south stub
        masks[5] = TransitionMask::from_edges(&[Direction::W]).0; // east stub
        masks[4] = TransitionMask::from_edges(&[Direction::N, Direction::E, Direction::S]).0;
        let net = RailNetwork::from_masks(3, 3, &masks).unwrap();
        let center = net.cell_at(1, 1).unwrap();
        // entered heading N (came from the south): may continue N or branch E
        let mut moves: Vec<_> = net.transitions(center, Direction::N).collect();
        moves.sort();
        assert_eq!(
            moves,
            vec![
                (net.cell_at(0, 1).unwrap(), Direction::N),
                (net.cell_at(1, 2).unwrap(), Direction::E)
            ]
        );
    }

    #[test]
    fn heuristic_line_graph() {
        let net = straight_line_map(5);
        let h = compute_heuristic(&net, 4);
        assert_eq!(h.dist(0, Direction::E), 4);
        assert_eq!(h.dist(4, Direction::E), 0);
        assert_eq!(h.dist(4, Direction::W), 0);
    }

    #[test]
    fn generator_is_deterministic() {
        let params = GeneratorParams {
            width: 20,
            height: 20,
            cities: 2,
            rails_per_city: 1,
        };
        let a = generate_random_network(params, 7).unwrap();
        let b = generate_random_network(params, 7).unwrap();
        assert_eq!(a.to_map_text(), b.to_map_text());
    }

    #[test]
    fn generator_connects_cities() {
        let params = GeneratorParams {
            width: 20,
            height: 20,
            cities: 3,
            rails_per_city: 2,
        };
        for seed in 0..10 {
            let net = generate_random_network(params, seed).unwrap();
            assert!(net.validate().is_empty());
            let reach = cell_reachability(&net, 0);
            assert!(reach.iter().all(|&r| r), "seed {seed}: disconnected rails");
        }
    }

    #[test]
    fn generator_rejects_overcrowded_grid() {
        let params = GeneratorParams {
            width: 4,
            height: 4,
            cities: 5,
            rails_per_city: 1,
        };
        assert!(generate_random_network(params, 1).is_err());
    }
}
