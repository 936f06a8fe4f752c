//! Plan repair after malfunctions: build the plan-step structure from an
//! assignment, re-time all pending visits while preserving the per-cell
//! visiting order, attempt one swap on an inversion, and quarantine
//! deadlocked agents.
//!
//! Re-timing only ever delays a visit, never advances it: a repaired visit's
//! entry is the maximum of its original time, the agent's own movement
//! physics, and the bound induced by the previous visitor of the cell (plus
//! the overlap policy's spacing).

use crate::rail_network::RailNetwork;
use crate::schedule::{validate_assignment, Agent, Assignment, MoveInterval, Path, Visit};
use crate::simulation::AgentStatus;
use crate::te_planner::{OverlapPolicy, RuntimeSlice};
use crate::{AgentId, CellIndex, Tick};
use std::collections::{BTreeSet, HashMap};

/// One agent-side visit with its position in the cell's visiting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgentVisit {
    pub cell: CellIndex,
    pub orientation: crate::Direction,
    pub enter: Tick,
    /// Index of this visit in `cell_visits[cell]`.
    pub cidx: usize,
}

/// One cell-side visit reference.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellVisitRef {
    pub agent: AgentId,
    /// Index of this visit in `agent_visits[agent]`.
    pub aidx: usize,
}

/// Per-cell and per-agent visit orderings with the bijections between them.
#[derive(Debug, Clone)]
pub struct PlanStepGraph {
    pub cell_visits: Vec<Vec<CellVisitRef>>,
    pub agent_visits: Vec<Vec<AgentVisit>>,
}

impl PlanStepGraph {
    pub fn agent_to_cell_visit(&self, agent: AgentId, aidx: usize) -> usize {
        self.agent_visits[agent][aidx].cidx
    }

    pub fn cell_to_agent_visit(&self, cell: CellIndex, cidx: usize) -> usize {
        self.cell_visits[cell as usize][cidx].aidx
    }

    pub fn is_empty(&self) -> bool {
        self.agent_visits.iter().all(|v| v.is_empty())
    }

    /// Consistency of the two views, used by tests and debug assertions.
    pub fn check_consistency(&self) -> bool {
        for (agent, visits) in self.agent_visits.iter().enumerate() {
            for (aidx, v) in visits.iter().enumerate() {
                let back = self.cell_visits[v.cell as usize][v.cidx];
                if back.agent != agent || back.aidx != aidx {
                    return false;
                }
            }
        }
        for (cell, visits) in self.cell_visits.iter().enumerate() {
            for (cidx, r) in visits.iter().enumerate() {
                if self.agent_visits[r.agent][r.aidx].cell as usize != cell
                    || self.agent_visits[r.agent][r.aidx].cidx != cidx
                {
                    return false;
                }
            }
        }
        true
    }
}

/// Whether visit `aidx` is the agent's terminal visit (it enters its target
/// and leaves the environment, occupying nothing).
fn is_terminal(agents: &[Agent], graph: &PlanStepGraph, agent: AgentId, aidx: usize) -> bool {
    let visits = &graph.agent_visits[agent];
    aidx + 1 == visits.len() && visits[aidx].cell == agents[agent].target_cell
}

/// Builds the plan-step graph: per-cell visit lists ordered by entry tick
/// (terminal visits first on ties, since they occupy nothing), per-agent
/// visit lists in path order, and the bijections between the two views.
pub fn build_graph(assignment: &Assignment, agents: &[Agent], num_cells: usize) -> PlanStepGraph {
    let mut agent_visits: Vec<Vec<AgentVisit>> = Vec::with_capacity(agents.len());
    for (id, path) in assignment.paths.iter().enumerate() {
        let _ = id;
        agent_visits.push(
            path.visits
                .iter()
                .map(|v| AgentVisit {
                    cell: v.cell,
                    orientation: v.orientation,
                    enter: v.enter_tick,
                    cidx: usize::MAX,
                })
                .collect(),
        );
    }
    let mut per_cell: Vec<Vec<(Tick, bool, AgentId, usize)>> = vec![Vec::new(); num_cells];
    for (id, visits) in agent_visits.iter().enumerate() {
        for (aidx, v) in visits.iter().enumerate() {
            let terminal = aidx + 1 == visits.len() && v.cell == agents[id].target_cell;
            per_cell[v.cell as usize].push((v.enter, !terminal, id, aidx));
        }
    }
    let mut cell_visits: Vec<Vec<CellVisitRef>> = vec![Vec::new(); num_cells];
    for (cell, mut list) in per_cell.into_iter().enumerate() {
        list.sort_unstable();
        for (cidx, (_, _, agent, aidx)) in list.iter().enumerate() {
            agent_visits[*agent][*aidx].cidx = cidx;
            cell_visits[cell].push(CellVisitRef {
                agent: *agent,
                aidx: *aidx,
            });
        }
    }
    let graph = PlanStepGraph {
        cell_visits,
        agent_visits,
    };
    debug_assert!(graph.check_consistency());
    graph
}

/// A visit identified from the cell side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct VisitId {
    pub cell: CellIndex,
    pub cidx: usize,
}

/// Precedence arcs: an arc (source -> target) means the target visit may only
/// begin once the source visit has begun. Rule 1 links an agent's terminal
/// visit to the cell's next visit; rule 2 links an agent's follow-up visit to
/// the next visit of the cell it departed.
pub fn precedence_arcs(graph: &PlanStepGraph, agents: &[Agent]) -> Vec<(VisitId, VisitId)> {
    let mut arcs = Vec::new();
    for (agent, visits) in graph.agent_visits.iter().enumerate() {
        for (aidx, v) in visits.iter().enumerate() {
            let this = VisitId {
                cell: v.cell,
                cidx: v.cidx,
            };
            if is_terminal(agents, graph, agent, aidx) {
                if v.cidx + 1 < graph.cell_visits[v.cell as usize].len() {
                    arcs.push((
                        this,
                        VisitId {
                            cell: v.cell,
                            cidx: v.cidx + 1,
                        },
                    ));
                }
            }
            if aidx > 0 {
                let prev = &visits[aidx - 1];
                if prev.cidx + 1 < graph.cell_visits[prev.cell as usize].len() {
                    arcs.push((
                        this,
                        VisitId {
                            cell: prev.cell,
                            cidx: prev.cidx + 1,
                        },
                    ));
                }
            }
        }
    }
    arcs
}

/// Result of one repair pass.
#[derive(Debug, Clone)]
pub struct RepairOutcome {
    pub assignment: Assignment,
    pub inversions_detected: u64,
    pub swaps_attempted: u64,
    pub deadlocked: BTreeSet<AgentId>,
    pub unperformed_visits: u64,
}

/// Replaces each marked agent's path with a stay-in-place path: active agents
/// hold their current cell through the horizon (a mid-move agent's footprint
/// stays on its origin, since the move cannot complete), outside agents keep
/// the NEVER path. These paths remain replannable later.
pub fn mark_deadlocked(
    assignment: &Assignment,
    marked: &BTreeSet<AgentId>,
    runtime: &[RuntimeSlice],
) -> Assignment {
    let mut out = assignment.clone();
    for &id in marked {
        match runtime[id].status {
            AgentStatus::Active {
                cell,
                orientation,
                entered_at,
                ..
            } => {
                out.paths[id] = Path {
                    visits: vec![Visit {
                        cell,
                        orientation,
                        enter_tick: entered_at,
                    }],
                };
            }
            AgentStatus::Outside => {
                out.paths[id] = Path::never();
            }
            AgentStatus::Arrived { .. } => unreachable!("arrived agents cannot deadlock"),
        }
    }
    out
}

/// Smallest entry tick `T >= lower` whose move interval `[T - span, T)` is
/// admitted by the policy against the previous visitor's interval into the
/// same cell.
fn min_entry_under_policy(
    policy: OverlapPolicy,
    prev: Option<MoveInterval>,
    agent: AgentId,
    dest: CellIndex,
    span: Tick,
    lower: Tick,
) -> Tick {
    let prev = match prev {
        Some(p) => p,
        None => return lower,
    };
    let mut t = lower;
    // the loop ends once the candidate starts at or after the previous
    // interval's end, which every policy admits
    loop {
        let candidate = MoveInterval {
            agent,
            dest_cell: dest,
            start: t - span,
            end: t,
        };
        if policy.admits(&candidate, &prev) {
            return t;
        }
        t += 1;
        if t - span >= prev.end {
            return t;
        }
    }
}

struct RepairPass<'a> {
    agents: &'a [Agent],
    runtime: &'a [RuntimeSlice],
    policy: OverlapPolicy,
    now: Tick,
    graph: PlanStepGraph,
    /// Entry tick per (agent, aidx); realized visits are pre-filled.
    fixed: Vec<Vec<Option<Tick>>>,
    /// Move interval into each fixed visit, when the visit was reached by a
    /// move re-timed in this pass.
    interval_into: Vec<Vec<Option<MoveInterval>>>,
    /// First pending (not yet realized) visit index per agent.
    first_pending: Vec<usize>,
    /// Visits poisoned by a post-swap inversion.
    unperformable: Vec<Vec<bool>>,
    queue: BTreeSet<(Tick, AgentId, usize)>,
    inversions: u64,
}

enum PassResult {
    Done,
    InversionSwap { cell: CellIndex, cidx: usize },
}

impl<'a> RepairPass<'a> {
    fn new(
        graph: PlanStepGraph,
        agents: &'a [Agent],
        runtime: &'a [RuntimeSlice],
        policy: OverlapPolicy,
    ) -> RepairPass<'a> {
        let now = runtime.first().map_or(0, |r| r.now);
        let mut fixed: Vec<Vec<Option<Tick>>> = Vec::with_capacity(agents.len());
        let mut first_pending = Vec::with_capacity(agents.len());
        for (id, visits) in graph.agent_visits.iter().enumerate() {
            let pending_from = match runtime[id].status {
                AgentStatus::Outside => 0,
                // the current visit of an active agent and every visit of an
                // arrived agent are realized history
                AgentStatus::Active { .. } => 1,
                AgentStatus::Arrived { .. } => visits.len(),
            };
            first_pending.push(pending_from);
            fixed.push(
                visits
                    .iter()
                    .enumerate()
                    .map(|(aidx, v)| (aidx < pending_from).then_some(v.enter))
                    .collect(),
            );
        }
        let interval_into = graph
            .agent_visits
            .iter()
            .map(|v| vec![None; v.len()])
            .collect();
        let unperformable = graph
            .agent_visits
            .iter()
            .map(|v| vec![false; v.len()])
            .collect();
        let mut pass = RepairPass {
            agents,
            runtime,
            policy,
            now,
            graph,
            fixed,
            interval_into,
            first_pending,
            unperformable,
            queue: BTreeSet::new(),
            inversions: 0,
        };
        for id in 0..agents.len() {
            let fp = pass.first_pending[id];
            if fp < pass.graph.agent_visits[id].len() {
                let tmin = pass.graph.agent_visits[id][fp].enter;
                pass.queue.insert((tmin, id, fp));
            }
        }
        pass
    }

    fn entry_of(&self, agent: AgentId, aidx: usize) -> Option<Tick> {
        self.fixed[agent][aidx]
    }

    /// Departure tick of a visit: the entry of the agent's follow-up visit.
    /// Terminal visits have no occupancy at all; a last visit that is not
    /// terminal never departs.
    fn departure_of(&self, agent: AgentId, aidx: usize) -> Departure {
        if is_terminal(self.agents, &self.graph, agent, aidx) {
            return Departure::None;
        }
        match self.graph.agent_visits[agent].get(aidx + 1) {
            Some(_) => match self.fixed[agent][aidx + 1] {
                Some(t) => Departure::At(t),
                None => Departure::Unfixed,
            },
            None => Departure::Never,
        }
    }

    /// Runs the queue to exhaustion. Detects at most one actionable
    /// inversion per pass.
    fn run(&mut self, allow_swap: bool) -> PassResult {
        while let Some(&(tmin, agent, aidx)) = self.queue.iter().next() {
            self.queue.remove(&(tmin, agent, aidx));
            if self.fixed[agent][aidx].is_some() || self.unperformable[agent][aidx] {
                continue;
            }
            // agent-side readiness
            if aidx > 0 && self.fixed[agent][aidx - 1].is_none() {
                continue;
            }
            let v = self.graph.agent_visits[agent][aidx];
            // cell-side: the previous visitor's entry must be fixed before
            // anything can be decided about this visit
            let prev = (v.cidx > 0)
                .then(|| self.graph.cell_visits[v.cell as usize][v.cidx - 1]);
            let prev_entry = match prev {
                Some(p) => match self.entry_of(p.agent, p.aidx) {
                    Some(t) => Some(t),
                    None => continue,
                },
                None => None,
            };

            let is_first = aidx == self.first_pending[agent];
            let ongoing = match (is_first, &self.runtime[agent].status) {
                (
                    true,
                    AgentStatus::Active {
                        moving: Some(mv), ..
                    },
                ) => Some(*mv),
                _ => None,
            };
            let t_orig = v.enter;
            let speed = self.agents[agent].speed_den;
            let malf = self.runtime[agent].malfunction_remaining;

            if let Some(mv) = ongoing {
                debug_assert_eq!(mv.dest, v.cell);
                // the agent pops into the cell at the first physically free
                // tick; it cannot be held back to satisfy a bound
                let e_phys = self.now + malf + mv.remaining.max(1);
                let mut w = e_phys;
                if v.cidx > 0 {
                    for i in 0..v.cidx - 1 {
                        let q = self.graph.cell_visits[v.cell as usize][i];
                        if is_terminal(self.agents, &self.graph, q.agent, q.aidx) {
                            continue;
                        }
                        let q_entry = self.entry_of(q.agent, q.aidx).expect("prior visit fixed");
                        let q_dep = match self.departure_of(q.agent, q.aidx) {
                            Departure::At(t) => t,
                            _ => unreachable!("prior visitor departed before successor was fixed"),
                        };
                        if w < q_entry {
                            break;
                        }
                        if w < q_dep {
                            w = q_dep;
                        }
                    }
                }
                if let Some(p_entry) = prev_entry {
                    if w < p_entry {
                        // the committed move beats the planned predecessor:
                        // an inversion of the visiting order
                        self.inversions += 1;
                        if allow_swap {
                            return PassResult::InversionSwap {
                                cell: v.cell,
                                cidx: v.cidx,
                            };
                        }
                        self.unperformable[agent][aidx] = true;
                        continue;
                    }
                    let p = prev.unwrap();
                    let t = match self.departure_of(p.agent, p.aidx) {
                        // a terminal predecessor was gone on arrival
                        Departure::None => w,
                        // a pop landing inside the predecessor's stay blocks
                        // until the cell frees
                        Departure::At(dep) => w.max(dep),
                        // the predecessor has not departed yet: the pop waits
                        // for it, retry once its departure is known
                        Departure::Unfixed | Departure::Never => continue,
                    };
                    self.fix(
                        agent,
                        aidx,
                        t,
                        Some(MoveInterval {
                            agent,
                            dest_cell: v.cell,
                            start: mv.started,
                            end: t,
                        }),
                    );
                } else {
                    self.fix(
                        agent,
                        aidx,
                        w,
                        Some(MoveInterval {
                            agent,
                            dest_cell: v.cell,
                            start: mv.started,
                            end: w,
                        }),
                    );
                }
                continue;
            }

            // delayable visits wait for the predecessor's departure
            let mut order_bound = 0;
            let mut prev_interval = None;
            if let Some(p) = prev {
                order_bound = match self.departure_of(p.agent, p.aidx) {
                    // rule 1: a terminal predecessor only orders the entries
                    Departure::None => prev_entry.unwrap(),
                    Departure::At(t) => t,
                    Departure::Unfixed | Departure::Never => continue,
                };
                prev_interval = self.interval_into[p.agent][p.aidx];
            }

            if aidx == 0 {
                // initial entry from outside: freely delayable, no interval
                let lower = [t_orig, self.now + malf + 1, order_bound, 1]
                    .into_iter()
                    .max()
                    .unwrap();
                self.fix(agent, aidx, lower, None);
                continue;
            }

            // a planned move: starts no earlier than the previous visit's
            // entry (plus the malfunction wait for the first pending move)
            let my_prev = self.fixed[agent][aidx - 1].expect("agent-side readiness");
            let earliest_start = if is_first {
                my_prev.max(self.now + malf)
            } else {
                my_prev
            };
            let lower = (earliest_start + speed).max(order_bound).max(t_orig);
            let t = min_entry_under_policy(self.policy, prev_interval, agent, v.cell, speed, lower);
            self.fix(
                agent,
                aidx,
                t,
                Some(MoveInterval {
                    agent,
                    dest_cell: v.cell,
                    start: t - speed,
                    end: t,
                }),
            );
        }
        PassResult::Done
    }

    fn fix(&mut self, agent: AgentId, aidx: usize, t: Tick, interval: Option<MoveInterval>) {
        debug_assert!(t >= self.graph.agent_visits[agent][aidx].enter);
        self.fixed[agent][aidx] = Some(t);
        self.interval_into[agent][aidx] = interval;
        let v = self.graph.agent_visits[agent][aidx];
        // (i) the agent's next move
        if aidx + 1 < self.graph.agent_visits[agent].len() {
            self.queue.insert((t, agent, aidx + 1));
        }
        // (ii) the next visitor of the origin cell the agent just departed
        if aidx > 0 {
            let origin = self.graph.agent_visits[agent][aidx - 1];
            if let Some(succ) = self.graph.cell_visits[origin.cell as usize].get(origin.cidx + 1) {
                self.queue.insert((t, succ.agent, succ.aidx));
            }
        }
        // the cell's own next visitor: covers rule 1 (a terminal visit frees
        // its cell on arrival) and lets committed successors run their
        // inversion check as soon as this entry is known
        if let Some(succ) = self.graph.cell_visits[v.cell as usize].get(v.cidx + 1) {
            self.queue.insert((t, succ.agent, succ.aidx));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Departure {
    /// Terminal visit: occupies nothing.
    None,
    At(Tick),
    Unfixed,
    /// Last visit of a path that does not reach the target: never departs.
    Never,
}

/// Re-times every pending visit of `assignment` after a malfunction,
/// preserving each cell's visiting order. On the first inversion the two
/// conflicting visits are swapped in the cell's order and the whole pass is
/// restarted once; any visit still untimed at the end marks its agent
/// deadlocked, and deadlocked agents receive stay-in-place paths.
pub fn repair(
    net: &RailNetwork,
    agents: &[Agent],
    runtime: &[RuntimeSlice],
    assignment: &Assignment,
    policy: OverlapPolicy,
) -> RepairOutcome {
    let mut graph = build_graph(assignment, agents, net.num_cells());
    let mut inversions = 0;
    let mut swaps = 0;
    let result = loop {
        let mut pass = RepairPass::new(graph.clone(), agents, runtime, policy);
        match pass.run(swaps == 0) {
            PassResult::Done => break pass,
            PassResult::InversionSwap { cell, cidx } => {
                inversions += pass.inversions;
                swaps += 1;
                swap_cell_order(&mut graph, cell, cidx - 1, cidx);
            }
        }
    };
    inversions += result.inversions;

    let mut deadlocked = BTreeSet::new();
    let mut unperformed = 0u64;
    for (id, fixed) in result.fixed.iter().enumerate() {
        let missing = fixed.iter().filter(|t| t.is_none()).count() as u64;
        if missing > 0 {
            deadlocked.insert(id);
            unperformed += missing;
        }
    }

    let mut paths = Vec::with_capacity(agents.len());
    for (id, visits) in result.graph.agent_visits.iter().enumerate() {
        if deadlocked.contains(&id) {
            paths.push(assignment.paths[id].clone()); // replaced below
            continue;
        }
        paths.push(Path {
            visits: visits
                .iter()
                .enumerate()
                .map(|(aidx, v)| Visit {
                    cell: v.cell,
                    orientation: v.orientation,
                    enter_tick: result.fixed[id][aidx].expect("fixed or deadlocked"),
                })
                .collect(),
        });
    }
    let mut repaired = Assignment {
        paths,
        horizon: assignment.horizon,
    };
    repaired = mark_deadlocked(&repaired, &deadlocked, runtime);

    if policy == OverlapPolicy::Strict {
        assert!(
            deadlocked.is_empty(),
            "strict policy must never deadlock, got agents {deadlocked:?}"
        );
    }
    let violations = validate_assignment(net, agents, &repaired);
    assert!(
        violations.is_empty(),
        "repair produced an invalid assignment: {violations:?}"
    );

    RepairOutcome {
        assignment: repaired,
        inversions_detected: inversions,
        swaps_attempted: swaps,
        deadlocked,
        unperformed_visits: unperformed,
    }
}

/// Swaps two adjacent visits in one cell's order, updating the bijections.
fn swap_cell_order(graph: &mut PlanStepGraph, cell: CellIndex, a: usize, b: usize) {
    let list = &mut graph.cell_visits[cell as usize];
    list.swap(a, b);
    let ra = list[a];
    let rb = list[b];
    graph.agent_visits[ra.agent][ra.aidx].cidx = a;
    graph.agent_visits[rb.agent][rb.aidx].cidx = b;
    debug_assert!(graph.check_consistency());
}
