//! Shortest-path search for one agent over the time-expanded graph,
//! respecting occupancy, ongoing moves, malfunctions, and the overlap policy.
//!
//! Nodes are (cell, orientation, tick) decision points; intermediate ticks of
//! a multi-tick move are never materialized. The search is optimistic: only
//! the agent's current malfunction is considered, never future ones.

use crate::heap::MinHeap;
use crate::rail_network::{HeuristicTable, RailNetwork};
use crate::schedule::{Agent, MoveInterval, OccupancyTable, Path, Visit};
use crate::simulation::{forced_decision, AgentStatus, ForcedOutcome};
use crate::{CellIndex, Direction, Tick};
use serde::{Deserialize, Serialize};

/// A materialized decision point of the time-expanded graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TENode {
    pub cell: CellIndex,
    pub orientation: Direction,
    pub tick: Tick,
}

/// How move intervals toward a shared destination cell may relate in time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapPolicy {
    /// No intersection between two move intervals targeting the same cell.
    Strict,
    /// Only containment of one interval inside another is forbidden.
    NoNested,
    /// Interval checks disabled; occupancy alone governs feasibility.
    Off,
}

impl OverlapPolicy {
    pub fn parse(s: &str) -> Option<OverlapPolicy> {
        match s {
            "strict" => Some(OverlapPolicy::Strict),
            "no-nested" => Some(OverlapPolicy::NoNested),
            "off" => Some(OverlapPolicy::Off),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            OverlapPolicy::Strict => "strict",
            OverlapPolicy::NoNested => "no-nested",
            OverlapPolicy::Off => "off",
        }
    }

    /// Whether `candidate` may coexist with an existing interval toward the
    /// same destination cell.
    pub fn admits(self, candidate: &MoveInterval, other: &MoveInterval) -> bool {
        match self {
            OverlapPolicy::Strict => !candidate.overlaps(other),
            OverlapPolicy::NoNested => !candidate.nested_with(other),
            OverlapPolicy::Off => true,
        }
    }
}

/// Move intervals of all agents, grouped by destination cell.
#[derive(Debug, Clone, Default)]
pub struct IntervalIndex {
    by_dest: Vec<Vec<MoveInterval>>,
}

impl IntervalIndex {
    pub fn new(num_cells: usize) -> IntervalIndex {
        IntervalIndex {
            by_dest: vec![Vec::new(); num_cells],
        }
    }

    pub fn insert(&mut self, iv: MoveInterval) {
        self.by_dest[iv.dest_cell as usize].push(iv);
    }

    pub fn insert_all(&mut self, ivs: impl IntoIterator<Item = MoveInterval>) {
        for iv in ivs {
            self.insert(iv);
        }
    }

    pub fn remove_agent(&mut self, agent: usize) -> Vec<MoveInterval> {
        let mut removed = Vec::new();
        for list in &mut self.by_dest {
            list.retain(|iv| {
                if iv.agent == agent {
                    removed.push(*iv);
                    false
                } else {
                    true
                }
            });
        }
        removed
    }

    pub fn toward(&self, dest: CellIndex) -> &[MoveInterval] {
        &self.by_dest[dest as usize]
    }

    /// True when `candidate` passes the policy against every interval of
    /// other agents toward the same destination.
    pub fn admits(&self, policy: OverlapPolicy, candidate: &MoveInterval) -> bool {
        if matches!(policy, OverlapPolicy::Off) {
            return true;
        }
        self.toward(candidate.dest_cell)
            .iter()
            .filter(|iv| iv.agent != candidate.agent)
            .all(|iv| policy.admits(candidate, iv))
    }
}

/// The slice of live state the planner needs about one agent.
#[derive(Debug, Clone, Copy)]
pub struct RuntimeSlice {
    pub now: Tick,
    pub status: AgentStatus,
    pub malfunction_remaining: Tick,
}

impl RuntimeSlice {
    /// A fresh agent before tick 0: outside, healthy.
    pub fn fresh() -> RuntimeSlice {
        RuntimeSlice {
            now: 0,
            status: AgentStatus::Outside,
            malfunction_remaining: 0,
        }
    }

    pub fn from_state(state: &crate::simulation::SimState, agent: crate::AgentId) -> RuntimeSlice {
        RuntimeSlice {
            now: state.tick,
            status: state.status[agent],
            malfunction_remaining: state.malfunction_remaining[agent],
        }
    }

    pub fn all_from_state(state: &crate::simulation::SimState) -> Vec<RuntimeSlice> {
        (0..state.status.len())
            .map(|a| RuntimeSlice::from_state(state, a))
            .collect()
    }
}

/// Checks one candidate move from a decision point: the origin must stay
/// attributable to the agent for the whole move, the destination must be
/// free at the arrival tick (its later occupancy is covered by the successor
/// decisions), and the policy must admit the move interval against every
/// other interval toward the same cell.
pub fn move_feasible(
    table: &OccupancyTable,
    intervals: &IntervalIndex,
    agent: &Agent,
    from: TENode,
    to_cell: CellIndex,
    policy: OverlapPolicy,
) -> (bool, MoveInterval) {
    let arrival = from.tick + agent.speed_den;
    let interval = MoveInterval {
        agent: agent.id,
        dest_cell: to_cell,
        start: from.tick,
        end: arrival,
    };
    let feasible = table.is_free_range(from.cell, from.tick + 1, arrival)
        && table.is_free(to_cell, arrival)
        && intervals.admits(policy, &interval);
    (feasible, interval)
}

/// Result of one planning call.
#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub path: Option<Path>,
    pub nodes_expanded: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct SearchKey {
    /// Estimated arrival: tick + remaining moves x speed_den.
    f: u64,
    /// Later entries are preferred on equal estimates.
    entry_rev: u32,
    serial: u64,
    node: u32,
}

struct NodeRec {
    cell: CellIndex,
    orientation: Direction,
    tick: Tick,
    entry: Tick,
    parent: u32,
}

const NO_PARENT: u32 = u32::MAX;

/// Plans a minimum-arrival-tick path for one agent against the occupancy
/// table and the other agents' move intervals. The agent's own footprint and
/// intervals must have been removed beforehand. Ties on the arrival estimate
/// prefer the larger entry tick. Returns a `None` path when no arrival at or
/// before the horizon exists; the caller keeps the previous path.
#[allow(clippy::too_many_arguments)]
pub fn plan_path(
    net: &RailNetwork,
    table: &OccupancyTable,
    heur: &HeuristicTable,
    agent: &Agent,
    runtime: &RuntimeSlice,
    intervals: &IntervalIndex,
    policy: OverlapPolicy,
    horizon: Tick,
) -> PlanOutcome {
    debug_assert_eq!(heur.target_cell, agent.target_cell);
    let mut nodes_expanded = 0u64;
    let mut arena: Vec<NodeRec> = Vec::new();
    let mut heap: MinHeap<SearchKey> = MinHeap::new();
    let mut serial = 0u64;
    let speed = agent.speed_den;

    let mut push = |arena: &mut Vec<NodeRec>,
                    heap: &mut MinHeap<SearchKey>,
                    serial: &mut u64,
                    rec: NodeRec| {
        let dist = heur.dist(rec.cell, rec.orientation);
        if dist >= crate::UNREACHABLE {
            return;
        }
        let f = rec.tick as u64 + dist as u64 * speed as u64;
        let key = SearchKey {
            f,
            entry_rev: u32::MAX - rec.entry,
            serial: *serial,
            node: arena.len() as u32,
        };
        *serial += 1;
        arena.push(rec);
        heap.push(key);
    };

    // forced prefix: visits determined by physics before the search gets a say
    let mut prefix: Vec<Visit> = Vec::new();
    match runtime.status {
        AgentStatus::Arrived { at } => {
            return PlanOutcome {
                path: Some(Path {
                    visits: vec![Visit {
                        cell: agent.target_cell,
                        orientation: agent.start_orientation,
                        enter_tick: at,
                    }],
                }),
                nodes_expanded,
            };
        }
        AgentStatus::Outside => {
            let earliest = (runtime.now + runtime.malfunction_remaining + 1).max(1);
            for te in earliest..horizon {
                if table.is_free(agent.start_cell, te) {
                    push(
                        &mut arena,
                        &mut heap,
                        &mut serial,
                        NodeRec {
                            cell: agent.start_cell,
                            orientation: agent.start_orientation,
                            tick: te,
                            entry: te,
                            parent: NO_PARENT,
                        },
                    );
                }
            }
        }
        AgentStatus::Active {
            cell,
            orientation,
            entered_at,
            moving,
        } => {
            let outcome = forced_decision(
                &runtime.status,
                runtime.malfunction_remaining,
                runtime.now,
                horizon,
                |t| table.is_free(moving.map_or(cell, |mv| mv.dest), t),
            );
            let (seed_cell, seed_orient, seed_tick) = match outcome {
                ForcedOutcome::Blocked => {
                    return PlanOutcome {
                        path: None,
                        nodes_expanded,
                    }
                }
                ForcedOutcome::Free {
                    cell,
                    orientation,
                    decision_tick,
                } => (cell, orientation, decision_tick),
            };
            prefix.push(Visit {
                cell,
                orientation,
                enter_tick: entered_at,
            });
            if let Some(mv) = moving {
                debug_assert_eq!(seed_cell, mv.dest);
                prefix.push(Visit {
                    cell: mv.dest,
                    orientation: mv.direction,
                    enter_tick: seed_tick,
                });
                if mv.dest == agent.target_cell {
                    return PlanOutcome {
                        path: Some(Path { visits: prefix }),
                        nodes_expanded,
                    };
                }
            }
            if seed_tick >= horizon {
                return PlanOutcome {
                    path: None,
                    nodes_expanded,
                };
            }
            push(
                &mut arena,
                &mut heap,
                &mut serial,
                NodeRec {
                    cell: seed_cell,
                    orientation: seed_orient,
                    tick: seed_tick,
                    entry: seed_tick,
                    parent: NO_PARENT,
                },
            );
        }
    }

    // duplicate-state pruning: the first pop of a (cell, orientation, tick)
    // state carries the lowest key, later pops are skipped
    let mut closed: std::collections::HashSet<u64> = std::collections::HashSet::new();
    let state_key =
        |c: CellIndex, o: Direction, t: Tick| ((t as u64) << 34) | ((c as u64) << 2) | o.index() as u64;

    while let Some(key) = heap.pop() {
        let (cell, orientation, tick, entry) = {
            let rec = &arena[key.node as usize];
            (rec.cell, rec.orientation, rec.tick, rec.entry)
        };
        if !closed.insert(state_key(cell, orientation, tick)) {
            continue;
        }
        nodes_expanded += 1;
        if cell == agent.target_cell {
            // reconstruct; consecutive same-cell nodes are waits, collapsed
            // into the visit's footprint
            let mut chain = Vec::new();
            let mut at = key.node;
            while at != NO_PARENT {
                let rec = &arena[at as usize];
                chain.push((rec.cell, rec.orientation, rec.tick));
                at = rec.parent;
            }
            chain.reverse();
            let mut visits = prefix;
            for (i, &(c, o, t)) in chain.iter().enumerate() {
                if i == 0 {
                    if visits.is_empty() {
                        visits.push(Visit {
                            cell: c,
                            orientation: o,
                            enter_tick: t,
                        });
                    }
                    continue;
                }
                if chain[i - 1].0 == c {
                    continue;
                }
                visits.push(Visit {
                    cell: c,
                    orientation: o,
                    enter_tick: t,
                });
            }
            return PlanOutcome {
                path: Some(Path { visits }),
                nodes_expanded,
            };
        }
        // wait in place, allowed while the cell stays free of others
        if tick + 1 < horizon && table.is_free(cell, tick + 1) {
            push(
                &mut arena,
                &mut heap,
                &mut serial,
                NodeRec {
                    cell,
                    orientation,
                    tick: tick + 1,
                    entry,
                    parent: key.node,
                },
            );
        }
        let from = TENode {
            cell,
            orientation,
            tick,
        };
        for (to_cell, to_orient) in net.transitions(cell, orientation) {
            let arrival = tick + speed;
            let bound = if to_cell == agent.target_cell {
                horizon
            } else {
                horizon.saturating_sub(1)
            };
            if arrival > bound {
                continue;
            }
            let (feasible, _) = move_feasible(table, intervals, agent, from, to_cell, policy);
            if feasible {
                push(
                    &mut arena,
                    &mut heap,
                    &mut serial,
                    NodeRec {
                        cell: to_cell,
                        orientation: to_orient,
                        tick: arrival,
                        entry,
                        parent: key.node,
                    },
                );
            }
        }
    }
    PlanOutcome {
        path: None,
        nodes_expanded,
    }
}
