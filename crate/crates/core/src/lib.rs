//! Deterministic multi-agent train scheduling engine and grid-rail simulator.
//!
//! The crate is organized around two cooperating components:
//!
//! * path (re-)generation over a time-expanded graph ([`te_planner`] driven by
//!   [`perm_search`]), planning one agent at a time against an occupancy table
//!   ([`schedule`]) built over a static rail topology ([`rail_network`]);
//! * plan repair after malfunctions ([`plan_repair`]), which re-times every
//!   pending cell visit while preserving the per-cell visiting order, and
//!   quarantines deadlocked agents.
//!
//! [`simulation`] is the ground-truth episode engine and [`controller`] wires
//! everything into the tick loop. [`scenario`] holds the on-disk formats.

pub mod controller;
pub mod heap;
pub mod perm_search;
pub mod plan_repair;
pub mod rail_network;
pub mod scenario;
pub mod schedule;
pub mod simulation;
pub mod te_planner;

use serde::{Deserialize, Serialize};

/// Discrete simulation time step.
pub type Tick = u32;

/// 0-based agent index.
pub type AgentId = usize;

/// Compact index of a rail cell (row-major enumeration of rail cells only).
pub type CellIndex = u32;

/// Sentinel distance for states that cannot reach the target. Strictly larger
/// than any feasible horizon so `tick + dist * speed_den` never wraps at test
/// sizes.
pub const UNREACHABLE: u32 = 1 << 20;

/// Hard cap on the planning horizon.
pub const MAX_HORIZON: Tick = 2800;

/// Agent heading on the grid. Also used as the exit direction of a move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Direction {
    N,
    E,
    S,
    W,
}

impl Direction {
    pub const ALL: [Direction; 4] = [Direction::N, Direction::E, Direction::S, Direction::W];

    pub fn index(self) -> usize {
        match self {
            Direction::N => 0,
            Direction::E => 1,
            Direction::S => 2,
            Direction::W => 3,
        }
    }

    pub fn from_index(i: usize) -> Direction {
        Self::ALL[i]
    }

    pub fn opposite(self) -> Direction {
        match self {
            Direction::N => Direction::S,
            Direction::E => Direction::W,
            Direction::S => Direction::N,
            Direction::W => Direction::E,
        }
    }

    /// Row/column offset of one step in this direction.
    pub fn offset(self) -> (i32, i32) {
        match self {
            Direction::N => (-1, 0),
            Direction::E => (0, 1),
            Direction::S => (1, 0),
            Direction::W => (0, -1),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Direction::N => "N",
            Direction::E => "E",
            Direction::S => "S",
            Direction::W => "W",
        }
    }

    pub fn parse(s: &str) -> Option<Direction> {
        match s {
            "N" => Some(Direction::N),
            "E" => Some(Direction::E),
            "S" => Some(Direction::S),
            "W" => Some(Direction::W),
            _ => None,
        }
    }
}

impl std::fmt::Display for Direction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// 16-bit rail cell transition mask.
///
/// The four nibbles select the incoming orientation (N, E, S, W from the most
/// significant nibble down), and the four bits within a nibble are the allowed
/// exit directions (again N, E, S, W from the most significant bit). An agent
/// heading `d` entered the cell through its `d.opposite()` side; exiting
/// toward `e` leaves the agent heading `e`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TransitionMask(pub u16);

impl TransitionMask {
    pub const EMPTY: TransitionMask = TransitionMask(0);

    pub fn allows(self, incoming: Direction, exit: Direction) -> bool {
        let bit = 15 - (incoming.index() * 4 + exit.index());
        (self.0 >> bit) & 1 == 1
    }

    pub fn set(&mut self, incoming: Direction, exit: Direction) {
        let bit = 15 - (incoming.index() * 4 + exit.index());
        self.0 |= 1 << bit;
    }

    /// Exit directions allowed for the given incoming orientation.
    pub fn exits(self, incoming: Direction) -> impl Iterator<Item = Direction> {
        let nibble = (self.0 >> (12 - incoming.index() * 4)) & 0xF;
        Direction::ALL
            .into_iter()
            .filter(move |e| (nibble >> (3 - e.index())) & 1 == 1)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Builds the canonical mask for a cell with track stubs on the given
    /// sides: every incoming orientation whose entry side exists may exit
    /// through any other stub; a single-stub cell is a dead end permitting
    /// reversal.
    pub fn from_edges(edges: &[Direction]) -> TransitionMask {
        let mut mask = TransitionMask::EMPTY;
        for heading in Direction::ALL {
            let entry_side = heading.opposite();
            if !edges.contains(&entry_side) {
                continue;
            }
            let mut any = false;
            for &e in edges {
                if e != entry_side {
                    mask.set(heading, e);
                    any = true;
                }
            }
            if !any {
                // dead end: reverse out through the side we came in
                mask.set(heading, entry_side);
            }
        }
        mask
    }
}

impl std::fmt::Display for TransitionMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:04x}", self.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_ew_matches_flatland_constant() {
        let m = TransitionMask::from_edges(&[Direction::E, Direction::W]);
        assert_eq!(m.0, 0x0401);
        assert_eq!(m.exits(Direction::E).collect::<Vec<_>>(), vec![Direction::E]);
        assert_eq!(m.exits(Direction::W).collect::<Vec<_>>(), vec![Direction::W]);
        assert_eq!(m.exits(Direction::N).count(), 0);
    }

    #[test]
    fn dead_end_reverses() {
        // stub only on the west side: entered heading E, must exit W
        let m = TransitionMask::from_edges(&[Direction::W]);
        assert_eq!(m.0, 0x0100);
        assert_eq!(m.exits(Direction::E).collect::<Vec<_>>(), vec![Direction::W]);
    }

    #[test]
    fn switch_has_two_exits() {
        // T junction with stubs N, E, S entered heading N (through the S side)
        let m = TransitionMask::from_edges(&[Direction::N, Direction::E, Direction::S]);
        let exits: Vec<_> = m.exits(Direction::N).collect();
        assert_eq!(exits, vec![Direction::N, Direction::E]);
    }
}
