//! Timed paths, the (cell, tick) occupancy table, assignment validation, and
//! the (X, Y) score.

use crate::rail_network::RailNetwork;
use crate::{AgentId, CellIndex, Direction, Tick};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use thiserror::Error;

/// A planning-level agent description.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Agent {
    pub id: AgentId,
    pub start_cell: CellIndex,
    pub start_orientation: Direction,
    pub target_cell: CellIndex,
    /// Ticks per cell-to-cell move; the agent's speed is `1 / speed_den`.
    pub speed_den: Tick,
}

/// One timed cell visit of a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Visit {
    pub cell: CellIndex,
    pub orientation: Direction,
    pub enter_tick: Tick,
}

/// A timed path: the first visit is the cell the agent occupies (or enters)
/// at `entry_tick`; an empty visit list is the NEVER path that stays outside
/// the environment for the whole horizon.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Path {
    pub visits: Vec<Visit>,
}

impl Path {
    pub fn never() -> Path {
        Path { visits: Vec::new() }
    }

    pub fn is_never(&self) -> bool {
        self.visits.is_empty()
    }

    pub fn entry_tick(&self) -> Option<Tick> {
        self.visits.first().map(|v| v.enter_tick)
    }

    /// Arrival tick, defined only when the path ends on the agent's target.
    pub fn arrival_tick(&self, target: CellIndex) -> Option<Tick> {
        match self.visits.last() {
            Some(v) if v.cell == target => Some(v.enter_tick),
            _ => None,
        }
    }

    /// Occupancy footprint: visit `k` holds its cell over the half-open
    /// interval `[enter_k, enter_{k+1})`. The final visit holds nothing when
    /// it is the agent's target (the agent leaves the environment on entry)
    /// and holds `[enter, horizon)` otherwise (stay-in-place paths).
    pub fn footprint<'a>(
        &'a self,
        target: CellIndex,
        horizon: Tick,
    ) -> impl Iterator<Item = (CellIndex, Tick, Tick)> + 'a {
        let n = self.visits.len();
        self.visits.iter().enumerate().filter_map(move |(k, v)| {
            let end = if k + 1 < n {
                self.visits[k + 1].enter_tick
            } else if v.cell == target {
                return None;
            } else {
                horizon
            };
            (end > v.enter_tick).then_some((v.cell, v.enter_tick, end))
        })
    }

    /// Move intervals implied by the path: the move into visit `k+1` spans
    /// `[enter_{k+1} - speed_den, enter_{k+1})` unless the caller overrides
    /// the first one (an ongoing move stretched by a malfunction keeps its
    /// real start tick).
    pub fn move_intervals(
        &self,
        agent: AgentId,
        speed_den: Tick,
        first_move_start: Option<Tick>,
    ) -> Vec<MoveInterval> {
        let mut out = Vec::new();
        for k in 1..self.visits.len() {
            let end = self.visits[k].enter_tick;
            let start = if k == 1 {
                first_move_start.unwrap_or_else(|| end.saturating_sub(speed_den))
            } else {
                end.saturating_sub(speed_den)
            };
            out.push(MoveInterval {
                agent,
                dest_cell: self.visits[k].cell,
                start,
                end,
            });
        }
        out
    }
}

/// One path per agent over a shared horizon.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub paths: Vec<Path>,
    pub horizon: Tick,
}

impl Assignment {
    pub fn all_never(num_agents: usize, horizon: Tick) -> Assignment {
        Assignment {
            paths: vec![Path::never(); num_agents],
            horizon,
        }
    }
}

/// Half-open interval of a committed or planned move into `dest_cell`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoveInterval {
    pub agent: AgentId,
    pub dest_cell: CellIndex,
    pub start: Tick,
    pub end: Tick,
}

impl MoveInterval {
    pub fn overlaps(&self, other: &MoveInterval) -> bool {
        self.start < other.end && other.start < self.end
    }

    /// Containment of either interval in the other (the pattern the relaxed
    /// policy forbids for moves toward one cell).
    pub fn nested_with(&self, other: &MoveInterval) -> bool {
        (self.start >= other.start && self.end <= other.end)
            || (other.start >= self.start && other.end <= self.end)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TableError {
    #[error("cell {cell} tick {tick}: already occupied by agent {other} (inserting agent {agent})")]
    Conflict {
        cell: CellIndex,
        tick: Tick,
        agent: AgentId,
        other: AgentId,
    },
    #[error("cell {cell} interval [{start}, {end}): not owned by agent {agent}")]
    Integrity {
        cell: CellIndex,
        start: Tick,
        end: Tick,
        agent: AgentId,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Occ {
    start: Tick,
    end: Tick,
    agent: AgentId,
}

/// (cell, tick) -> occupant, stored per cell as a sorted interval list so
/// memory tracks the paths rather than cells x ticks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyTable {
    per_cell: Vec<Vec<Occ>>,
    pub horizon: Tick,
}

impl OccupancyTable {
    pub fn new(num_cells: usize, horizon: Tick) -> OccupancyTable {
        OccupancyTable {
            per_cell: vec![Vec::new(); num_cells],
            horizon,
        }
    }

    pub fn is_all_free(&self) -> bool {
        self.per_cell.iter().all(|v| v.is_empty())
    }

    /// The agent occupying `cell` at `tick`, if any.
    pub fn occupant(&self, cell: CellIndex, tick: Tick) -> Option<AgentId> {
        let list = &self.per_cell[cell as usize];
        match list.binary_search_by(|o| {
            if o.end <= tick {
                Ordering::Less
            } else if o.start > tick {
                Ordering::Greater
            } else {
                Ordering::Equal
            }
        }) {
            Ok(i) => Some(list[i].agent),
            Err(_) => None,
        }
    }

    pub fn is_free(&self, cell: CellIndex, tick: Tick) -> bool {
        self.occupant(cell, tick).is_none()
    }

    /// True when `[from, to)` on `cell` contains no other agent.
    pub fn is_free_range(&self, cell: CellIndex, from: Tick, to: Tick) -> bool {
        if from >= to {
            return true;
        }
        let list = &self.per_cell[cell as usize];
        let idx = list.partition_point(|o| o.end <= from);
        list.get(idx).map_or(true, |o| o.start >= to)
    }

    /// First tick in `[from, horizon]` at which `cell` is free, if any.
    pub fn first_free_at_or_after(&self, cell: CellIndex, from: Tick) -> Option<Tick> {
        let list = &self.per_cell[cell as usize];
        let mut t = from;
        let mut idx = list.partition_point(|o| o.end <= from);
        loop {
            match list.get(idx) {
                Some(o) if o.start <= t => {
                    t = o.end;
                    idx += 1;
                }
                _ => return (t <= self.horizon).then_some(t),
            }
        }
    }

    fn insert_interval(
        &mut self,
        agent: AgentId,
        cell: CellIndex,
        start: Tick,
        end: Tick,
    ) -> Result<(), TableError> {
        let list = &mut self.per_cell[cell as usize];
        let idx = list.partition_point(|o| o.end <= start);
        if let Some(o) = list.get(idx) {
            if o.start < end {
                return Err(TableError::Conflict {
                    cell,
                    tick: start.max(o.start),
                    agent,
                    other: o.agent,
                });
            }
        }
        list.insert(idx, Occ { start, end, agent });
        Ok(())
    }

    fn remove_interval(
        &mut self,
        agent: AgentId,
        cell: CellIndex,
        start: Tick,
        end: Tick,
    ) -> Result<(), TableError> {
        let list = &mut self.per_cell[cell as usize];
        match list.iter().position(|o| o.start == start && o.end == end && o.agent == agent) {
            Some(i) => {
                list.remove(i);
                Ok(())
            }
            None => Err(TableError::Integrity {
                cell,
                start,
                end,
                agent,
            }),
        }
    }

    /// Marks the whole footprint of `path` as held by `agent`. Fails on the
    /// earliest clash without modifying the table.
    pub fn insert_path(
        &mut self,
        agent: AgentId,
        path: &Path,
        target: CellIndex,
    ) -> Result<(), TableError> {
        let mut done: Vec<(CellIndex, Tick, Tick)> = Vec::new();
        for (cell, start, end) in path.footprint(target, self.horizon) {
            if let Err(e) = self.insert_interval(agent, cell, start, end) {
                for (c, s, t) in done {
                    self.remove_interval(agent, c, s, t).expect("rollback");
                }
                return Err(e);
            }
            done.push((cell, start, end));
        }
        Ok(())
    }

    /// Frees the footprint of `path`; every tuple must currently be held by
    /// `agent`.
    pub fn remove_path(
        &mut self,
        agent: AgentId,
        path: &Path,
        target: CellIndex,
    ) -> Result<(), TableError> {
        for (cell, start, end) in path.footprint(target, self.horizon) {
            self.remove_interval(agent, cell, start, end)?;
        }
        Ok(())
    }

    /// Builds a table holding every path of `assignment`.
    pub fn from_assignment(
        num_cells: usize,
        assignment: &Assignment,
        agents: &[Agent],
    ) -> Result<OccupancyTable, TableError> {
        let mut table = OccupancyTable::new(num_cells, assignment.horizon);
        for (id, path) in assignment.paths.iter().enumerate() {
            table.insert_path(id, path, agents[id].target_cell)?;
        }
        Ok(table)
    }
}

/// The (X, Y) objective: number of finished agents, then the sum of arrival
/// ticks raised to the exponent `E`. Y is kept in exact integer arithmetic
/// when `E == 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub finished: usize,
    pub cost_exact: Option<u64>,
    pub cost: f64,
}

/// Computes the score of an assignment: agents with NEVER paths, stay-in-place
/// paths, or arrivals beyond `horizon` contribute to neither X nor Y.
pub fn score(assignment: &Assignment, agents: &[Agent], exponent: f64, horizon: Tick) -> Score {
    let mut finished = 0;
    let mut exact: u64 = 0;
    let mut approx = 0.0;
    for (id, path) in assignment.paths.iter().enumerate() {
        if let Some(td) = path.arrival_tick(agents[id].target_cell) {
            if td <= horizon {
                finished += 1;
                exact += td as u64;
                approx += (td as f64).powf(exponent);
            }
        }
    }
    Score {
        finished,
        cost_exact: (exponent == 1.0).then_some(exact),
        cost: approx,
    }
}

/// Lexicographic comparison: more finished agents win; on a tie, lower cost
/// wins. `Ordering::Greater` means `a` is the better score.
pub fn compare(a: &Score, b: &Score) -> Ordering {
    match a.finished.cmp(&b.finished) {
        Ordering::Equal => match (a.cost_exact, b.cost_exact) {
            (Some(x), Some(y)) => y.cmp(&x),
            _ => b.cost.partial_cmp(&a.cost).unwrap_or(Ordering::Equal),
        },
        other => other,
    }
}

/// One structural violation found by [`validate_assignment`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    EntryTooEarly {
        agent: AgentId,
        entry: Tick,
    },
    NonIncreasingTicks {
        agent: AgentId,
        visit: usize,
    },
    TooFast {
        agent: AgentId,
        visit: usize,
        gap: Tick,
        speed_den: Tick,
    },
    IllegalTransition {
        agent: AgentId,
        visit: usize,
        from: CellIndex,
        to: CellIndex,
    },
    BeyondHorizon {
        agent: AgentId,
        visit: usize,
        tick: Tick,
    },
    FootprintClash {
        cell: CellIndex,
        tick: Tick,
        first: AgentId,
        second: AgentId,
    },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::EntryTooEarly { agent, entry } => {
                write!(f, "agent {agent}: entry tick {entry} before tick 1")
            }
            Violation::NonIncreasingTicks { agent, visit } => {
                write!(f, "agent {agent}: visit {visit} does not advance time")
            }
            Violation::TooFast {
                agent,
                visit,
                gap,
                speed_den,
            } => write!(
                f,
                "agent {agent}: visit {visit} takes {gap} ticks, below speed_den {speed_den}"
            ),
            Violation::IllegalTransition {
                agent,
                visit,
                from,
                to,
            } => write!(
                f,
                "agent {agent}: visit {visit} moves {from} -> {to} without a legal transition"
            ),
            Violation::BeyondHorizon { agent, visit, tick } => {
                write!(f, "agent {agent}: visit {visit} at tick {tick} beyond the horizon")
            }
            Violation::FootprintClash {
                cell,
                tick,
                first,
                second,
            } => write!(
                f,
                "cell {cell} tick {tick}: agents {first} and {second} overlap"
            ),
        }
    }
}

/// Structural validation: transition legality, speed feasibility, footprint
/// exclusivity, and horizon bounds. An empty result means the simulation
/// engine could execute the assignment verbatim absent new malfunctions.
pub fn validate_assignment(
    net: &RailNetwork,
    agents: &[Agent],
    assignment: &Assignment,
) -> Vec<Violation> {
    let mut out = Vec::new();
    for (id, path) in assignment.paths.iter().enumerate() {
        let agent = &agents[id];
        if path.is_never() {
            continue;
        }
        if path.visits[0].enter_tick < 1 {
            out.push(Violation::EntryTooEarly {
                agent: id,
                entry: path.visits[0].enter_tick,
            });
        }
        for k in 1..path.visits.len() {
            let prev = &path.visits[k - 1];
            let cur = &path.visits[k];
            if cur.enter_tick <= prev.enter_tick {
                out.push(Violation::NonIncreasingTicks { agent: id, visit: k });
                continue;
            }
            let gap = cur.enter_tick - prev.enter_tick;
            if gap < agent.speed_den {
                out.push(Violation::TooFast {
                    agent: id,
                    visit: k,
                    gap,
                    speed_den: agent.speed_den,
                });
            }
            let legal = net
                .transitions(prev.cell, prev.orientation)
                .any(|(n, o)| n == cur.cell && o == cur.orientation);
            if !legal {
                out.push(Violation::IllegalTransition {
                    agent: id,
                    visit: k,
                    from: prev.cell,
                    to: cur.cell,
                });
            }
        }
        for (k, v) in path.visits.iter().enumerate() {
            let is_last = k + 1 == path.visits.len();
            let bound = if is_last {
                assignment.horizon
            } else {
                assignment.horizon.saturating_sub(1)
            };
            if v.enter_tick > bound {
                out.push(Violation::BeyondHorizon {
                    agent: id,
                    visit: k,
                    tick: v.enter_tick,
                });
            }
        }
    }
    // footprint exclusivity via a fresh table
    let mut table = OccupancyTable::new(net.num_cells(), assignment.horizon);
    for (id, path) in assignment.paths.iter().enumerate() {
        if let Err(TableError::Conflict {
            cell, tick, other, ..
        }) = table.insert_path(id, path, agents[id].target_cell)
        {
            out.push(Violation::FootprintClash {
                cell,
                tick,
                first: other,
                second: id,
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rail_network::load_map;

    fn line4() -> RailNetwork {
        load_map("RAIL v1 4 1\n0404 0401 0401 0101\n").unwrap()
    }

    fn line_path(ticks: &[Tick]) -> Path {
        Path {
            visits: ticks
                .iter()
                .enumerate()
                .map(|(i, &t)| Visit {
                    cell: i as CellIndex,
                    orientation: Direction::E,
                    enter_tick: t,
                })
                .collect(),
        }
    }

    fn line_agent(id: AgentId) -> Agent {
        Agent {
            id,
            start_cell: 0,
            start_orientation: Direction::E,
            target_cell: 3,
            speed_den: 1,
        }
    }

    #[test]
    fn never_path_leaves_table_unchanged() {
        let mut table = OccupancyTable::new(4, 16);
        table.insert_path(0, &Path::never(), 3).unwrap();
        assert!(table.is_all_free());
    }

    #[test]
    fn disjoint_inserts_commute() {
        let p0 = line_path(&[1, 2, 3, 4]);
        let p1 = line_path(&[6, 7, 8, 9]);
        let mut a = OccupancyTable::new(4, 16);
        a.insert_path(0, &p0, 3).unwrap();
        a.insert_path(1, &p1, 3).unwrap();
        let mut b = OccupancyTable::new(4, 16);
        b.insert_path(1, &p1, 3).unwrap();
        b.insert_path(0, &p0, 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn overlapping_insert_reports_earliest_clash() {
        let mut table = OccupancyTable::new(4, 16);
        table.insert_path(0, &line_path(&[1, 2, 3, 4]), 3).unwrap();
        // second agent tries to sit on cell 1 over [2, 3): clash at tick 2
        let p = Path {
            visits: vec![Visit {
                cell: 1,
                orientation: Direction::E,
                enter_tick: 2,
            }],
        };
        let err = table.insert_path(1, &p, 3).unwrap_err();
        assert_eq!(
            err,
            TableError::Conflict {
                cell: 1,
                tick: 2,
                agent: 1,
                other: 0
            }
        );
    }

    #[test]
    fn insert_then_remove_restores_table() {
        let p = line_path(&[1, 2, 3, 4]);
        let mut table = OccupancyTable::new(4, 16);
        let before = table.clone();
        table.insert_path(0, &p, 3).unwrap();
        table.remove_path(0, &p, 3).unwrap();
        assert_eq!(table, before);
    }

    #[test]
    fn remove_never_is_noop() {
        let mut table = OccupancyTable::new(4, 16);
        table.remove_path(0, &Path::never(), 3).unwrap();
        assert!(table.is_all_free());
    }

    #[test]
    fn remove_with_wrong_owner_is_integrity_error() {
        let p = line_path(&[1, 2, 3, 4]);
        let mut table = OccupancyTable::new(4, 16);
        table.insert_path(0, &p, 3).unwrap();
        assert!(matches!(
            table.remove_path(1, &p, 3),
            Err(TableError::Integrity { .. })
        ));
    }

    #[test]
    fn stay_path_occupies_through_horizon() {
        // last visit not at the target: held through the horizon
        let p = Path {
            visits: vec![Visit {
                cell: 2,
                orientation: Direction::E,
                enter_tick: 5,
            }],
        };
        let mut table = OccupancyTable::new(4, 16);
        table.insert_path(0, &p, 3).unwrap();
        assert_eq!(table.occupant(2, 15), Some(0));
        assert_eq!(table.occupant(2, 4), None);
    }

    #[test]
    fn score_arithmetic() {
        let mut asg = Assignment::all_never(2, 100);
        asg.paths[0] = line_path(&[7, 8, 9, 10]);
        asg.paths[1] = line_path(&[17, 18, 19, 20]);
        let agents = [line_agent(0), line_agent(1)];
        let s = score(&asg, &agents, 1.0, 100);
        assert_eq!(s.finished, 2);
        assert_eq!(s.cost_exact, Some(30));
        let s2 = score(&asg, &agents, 2.0, 100);
        assert_eq!(s2.finished, 2);
        assert_eq!(s2.cost_exact, None);
        assert!((s2.cost - 500.0).abs() < 1e-9);
    }

    #[test]
    fn compare_is_lexicographic() {
        let s = |finished, y: u64| Score {
            finished,
            cost_exact: Some(y),
            cost: y as f64,
        };
        assert_eq!(compare(&s(3, 50), &s(2, 10)), Ordering::Greater);
        assert_eq!(compare(&s(3, 50), &s(3, 40)), Ordering::Less);
        assert_eq!(compare(&s(3, 50), &s(3, 50)), Ordering::Equal);
    }

    #[test]
    fn validate_rejects_speeding_and_crossing() {
        let net = line4();
        let agents = [line_agent(0), line_agent(1)];
        // agent 1 visits cell 2 at tick 3 exactly when agent 0 holds it
        let mut asg = Assignment::all_never(2, 64);
        asg.paths[0] = line_path(&[1, 2, 3, 4]);
        asg.paths[1] = Path {
            visits: vec![Visit {
                cell: 2,
                orientation: Direction::E,
                enter_tick: 3,
            }],
        };
        let violations = validate_assignment(&net, &agents, &asg);
        assert!(violations
            .iter()
            .any(|v| matches!(v, Violation::FootprintClash { cell: 2, tick: 3, .. })));

        // too fast for speed_den 2
        let slow = Agent {
            speed_den: 2,
            ..line_agent(0)
        };
        let mut asg2 = Assignment::all_never(1, 64);
        asg2.paths[0] = line_path(&[1, 2, 3, 4]);
        let violations = validate_assignment(&net, &[slow], &asg2);
        assert!(violations.iter().any(|v| matches!(v, Violation::TooFast { .. })));
    }

    #[test]
    fn validate_accepts_all_never() {
        let net = line4();
        let agents = [line_agent(0)];
        let asg = Assignment::all_never(1, 64);
        assert!(validate_assignment(&net, &agents, &asg).is_empty());
    }

    #[test]
    fn score_monotone_in_exponent() {
        let mut asg = Assignment::all_never(2, 100);
        asg.paths[0] = line_path(&[7, 8, 9, 10]);
        asg.paths[1] = line_path(&[17, 18, 19, 20]);
        let agents = [line_agent(0), line_agent(1)];
        let y: Vec<f64> = [0.25, 1.0, 4.0]
            .iter()
            .map(|&e| score(&asg, &agents, e, 100).cost)
            .collect();
        assert!(y[0] < y[1] && y[1] < y[2]);
    }
}
