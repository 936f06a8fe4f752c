//! Ground-truth episode engine: agent lifecycle (outside, active, arrived),
//! fractional-speed movement, malfunction injection, and per-tick action
//! resolution.
//!
//! Move resolution uses a dependency graph with cycle rejection: an agent may
//! move into a cell being vacated this same tick provided the vacating move
//! itself succeeds; swap and rotation cycles all fail. This keeps same-tick
//! vacate/enter symmetric, matching the planner's half-open occupancy
//! intervals.

use crate::rail_network::{heuristics_for_targets, RailNetwork};
use crate::schedule::Agent;
use crate::{AgentId, CellIndex, Direction, Tick};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

/// A pre-drawn malfunction: the agent is frozen for `duration` steps starting
/// with the step taken from tick `start_tick`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalfunctionEvent {
    pub agent: AgentId,
    pub start_tick: Tick,
    pub duration: Tick,
}

/// An uninterruptible cell-to-cell move in progress.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OngoingMove {
    pub dest: CellIndex,
    pub direction: Direction,
    /// Steps until the agent pops into `dest`; 0 means the move has fully
    /// elapsed and retries whenever the destination is blocked.
    pub remaining: Tick,
    pub started: Tick,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AgentStatus {
    Outside,
    Active {
        cell: CellIndex,
        orientation: Direction,
        entered_at: Tick,
        moving: Option<OngoingMove>,
    },
    Arrived {
        at: Tick,
    },
}

impl AgentStatus {
    pub fn is_arrived(&self) -> bool {
        matches!(self, AgentStatus::Arrived { .. })
    }

    pub fn active_cell(&self) -> Option<CellIndex> {
        match self {
            AgentStatus::Active { cell, .. } => Some(*cell),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Action {
    Wait,
    Enter,
    Move(Direction),
}

/// Live episode state. Mutated only by [`SimState::step`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimState {
    pub tick: Tick,
    pub episode_len: Tick,
    pub status: Vec<AgentStatus>,
    pub malfunction_remaining: Vec<Tick>,
    /// Remaining schedule, sorted by start tick (events already activated are
    /// dropped).
    schedule: Vec<MalfunctionEvent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RejectReason {
    NotOutside,
    NotActive,
    AlreadyMoving,
    IllegalTransition,
    DestinationBlocked,
    EntryBlocked,
}

/// Everything observable about one step.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct StepResult {
    pub arrivals: Vec<(AgentId, Tick)>,
    pub malfunction_starts: Vec<AgentId>,
    pub rejected: Vec<(AgentId, RejectReason)>,
    /// Agents that changed cell this step (destination cell; arrivals
    /// included).
    pub moved: Vec<(AgentId, CellIndex)>,
    /// Agents that entered the environment this step.
    pub entered: Vec<AgentId>,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("agent {agent}: {reason}")]
    InvalidAgent { agent: AgentId, reason: String },
    #[error("malfunction schedule: {reason}")]
    InvalidSchedule { reason: String },
    #[error("expected {expected} actions, got {got}")]
    WrongActionCount { expected: usize, got: usize },
}

/// Validates agents and the malfunction schedule, returning the initial state
/// at tick 0 with every agent outside the environment. Outside agents occupy
/// nothing, so shared start cells are legal here.
pub fn init_episode(
    net: &RailNetwork,
    agents: &[Agent],
    schedule: &[MalfunctionEvent],
    episode_len: Tick,
) -> Result<SimState, SimError> {
    let heuristics = heuristics_for_targets(net, agents.iter().map(|a| a.target_cell));
    for a in agents {
        if a.speed_den < 1 {
            return Err(SimError::InvalidAgent {
                agent: a.id,
                reason: "speed_den must be at least 1".into(),
            });
        }
        for (label, cell) in [("start", a.start_cell), ("target", a.target_cell)] {
            if cell as usize >= net.num_cells() {
                return Err(SimError::InvalidAgent {
                    agent: a.id,
                    reason: format!("{label} cell {cell} is not a rail cell"),
                });
            }
        }
        let h = &heuristics[&a.target_cell];
        if !h.reachable(a.start_cell, a.start_orientation) {
            return Err(SimError::InvalidAgent {
                agent: a.id,
                reason: format!(
                    "target {} unreachable from start {} facing {}",
                    a.target_cell, a.start_cell, a.start_orientation
                ),
            });
        }
    }
    let mut by_agent: HashMap<AgentId, Vec<&MalfunctionEvent>> = HashMap::new();
    for ev in schedule {
        if ev.agent >= agents.len() {
            return Err(SimError::InvalidSchedule {
                reason: format!("event names unknown agent {}", ev.agent),
            });
        }
        if ev.duration == 0 {
            return Err(SimError::InvalidSchedule {
                reason: format!("agent {}: zero-duration event at tick {}", ev.agent, ev.start_tick),
            });
        }
        by_agent.entry(ev.agent).or_default().push(ev);
    }
    for (agent, mut events) in by_agent {
        events.sort_by_key(|e| e.start_tick);
        for pair in events.windows(2) {
            if pair[1].start_tick < pair[0].start_tick + pair[0].duration {
                return Err(SimError::InvalidSchedule {
                    reason: format!(
                        "agent {agent}: events at ticks {} and {} overlap",
                        pair[0].start_tick, pair[1].start_tick
                    ),
                });
            }
        }
    }
    let mut sorted: Vec<MalfunctionEvent> = schedule.to_vec();
    sorted.sort_by_key(|e| (e.start_tick, e.agent));
    Ok(SimState {
        tick: 0,
        episode_len,
        status: vec![AgentStatus::Outside; agents.len()],
        malfunction_remaining: vec![0; agents.len()],
        schedule: sorted,
    })
}

impl SimState {
    pub fn all_arrived(&self) -> bool {
        self.status.iter().all(|s| s.is_arrived())
    }

    /// Advances the state one tick. Infeasible actions are rejected and
    /// reported; the agent waits.
    pub fn step(
        &mut self,
        net: &RailNetwork,
        agents: &[Agent],
        actions: &[Action],
    ) -> Result<StepResult, SimError> {
        if actions.len() != agents.len() {
            return Err(SimError::WrongActionCount {
                expected: agents.len(),
                got: actions.len(),
            });
        }
        let s = self.tick;
        let mut result = StepResult::default();

        // 1. activate scheduled malfunctions; frozen agents neither act nor
        //    progress their moves this step
        while let Some(ev) = self.schedule.first().copied() {
            if ev.start_tick > s {
                break;
            }
            self.schedule.remove(0);
            if ev.start_tick < s || self.status[ev.agent].is_arrived() {
                continue;
            }
            self.malfunction_remaining[ev.agent] = ev.duration;
            result.malfunction_starts.push(ev.agent);
        }
        let frozen: Vec<bool> = self.malfunction_remaining.iter().map(|&m| m > 0).collect();

        // 2. commit new moves and collect rejections for plainly infeasible
        //    actions; frozen agents' actions are dropped silently (the
        //    malfunction preempts them)
        for (id, action) in actions.iter().enumerate() {
            if self.status[id].is_arrived() || frozen[id] {
                continue;
            }
            match (action, &mut self.status[id]) {
                (Action::Wait, _) => {}
                (Action::Enter, AgentStatus::Outside) => {} // resolved in step 5
                (Action::Enter, _) => result.rejected.push((id, RejectReason::NotOutside)),
                (Action::Move(_), AgentStatus::Outside) => {
                    result.rejected.push((id, RejectReason::NotActive))
                }
                (
                    Action::Move(dir),
                    AgentStatus::Active {
                        cell,
                        orientation,
                        moving,
                        ..
                    },
                ) => {
                    if moving.is_some() {
                        result.rejected.push((id, RejectReason::AlreadyMoving));
                    } else {
                        match net.transitions(*cell, *orientation).find(|&(_, o)| o == *dir) {
                            Some((dest, direction)) => {
                                *moving = Some(OngoingMove {
                                    dest,
                                    direction,
                                    remaining: agents[id].speed_den,
                                    started: s,
                                });
                            }
                            None => result.rejected.push((id, RejectReason::IllegalTransition)),
                        }
                    }
                }
                (Action::Move(_), _) => result.rejected.push((id, RejectReason::NotActive)),
            }
        }

        // 3. progress ongoing moves of unfrozen agents
        let mut poppers: Vec<AgentId> = Vec::new();
        for id in 0..agents.len() {
            if frozen[id] {
                continue;
            }
            if let AgentStatus::Active {
                moving: Some(mv), ..
            } = &mut self.status[id]
            {
                mv.remaining = mv.remaining.saturating_sub(1);
                if mv.remaining == 0 {
                    poppers.push(id);
                }
            }
        }

        // 4. resolve completed moves: dependency chains succeed, cycles fail
        let occupant_of: HashMap<CellIndex, AgentId> = self
            .status
            .iter()
            .enumerate()
            .filter_map(|(id, st)| st.active_cell().map(|c| (c, id)))
            .collect();
        #[derive(Clone, Copy, PartialEq)]
        enum Res {
            Unknown,
            Success,
            Fail,
        }
        let mut res: HashMap<AgentId, Res> = poppers.iter().map(|&id| (id, Res::Unknown)).collect();
        let mover_info: HashMap<AgentId, (CellIndex, bool)> = poppers
            .iter()
            .map(|&id| {
                let mv = match &self.status[id] {
                    AgentStatus::Active {
                        moving: Some(mv), ..
                    } => mv,
                    _ => unreachable!("popper is mid-move"),
                };
                (id, (mv.dest, mv.dest == agents[id].target_cell))
            })
            .collect();
        let mut claimed: HashMap<CellIndex, AgentId> = HashMap::new();
        loop {
            let mut progressed = false;
            // candidates grouped per destination so arbitration is atomic
            let mut candidates: HashMap<CellIndex, Vec<AgentId>> = HashMap::new();
            for &id in &poppers {
                if res[&id] != Res::Unknown {
                    continue;
                }
                let (dest, _) = mover_info[&id];
                match occupant_of.get(&dest) {
                    None => candidates.entry(dest).or_default().push(id),
                    Some(&occ) => match res.get(&occ) {
                        Some(Res::Success) => candidates.entry(dest).or_default().push(id),
                        Some(Res::Unknown) => {}
                        Some(Res::Fail) | None => {
                            res.insert(id, Res::Fail);
                            progressed = true;
                        }
                    },
                }
            }
            let mut dests: Vec<CellIndex> = candidates.keys().copied().collect();
            dests.sort_unstable();
            for dest in dests {
                let mut ids = candidates.remove(&dest).unwrap();
                ids.sort_unstable();
                for id in ids {
                    let (_, to_target) = mover_info[&id];
                    let verdict = if to_target {
                        Res::Success
                    } else if claimed.contains_key(&dest) {
                        Res::Fail
                    } else {
                        claimed.insert(dest, id);
                        Res::Success
                    };
                    res.insert(id, verdict);
                    progressed = true;
                }
            }
            if !progressed {
                break;
            }
        }
        for &id in &poppers {
            let verdict = res[&id];
            let (dest, to_target) = mover_info[&id];
            match verdict {
                Res::Success => {
                    let direction = match &self.status[id] {
                        AgentStatus::Active {
                            moving: Some(mv), ..
                        } => mv.direction,
                        _ => unreachable!(),
                    };
                    if to_target {
                        self.status[id] = AgentStatus::Arrived { at: s + 1 };
                        result.arrivals.push((id, s + 1));
                    } else {
                        self.status[id] = AgentStatus::Active {
                            cell: dest,
                            orientation: direction,
                            entered_at: s + 1,
                            moving: None,
                        };
                    }
                    result.moved.push((id, dest));
                }
                Res::Fail | Res::Unknown => {
                    if let AgentStatus::Active {
                        moving: Some(mv), ..
                    } = &mut self.status[id]
                    {
                        if mv.started == s && agents[id].speed_den == 1 {
                            // a unit move that could not complete in its own
                            // step never committed: the agent stays free
                            self.status[id] = match self.status[id] {
                                AgentStatus::Active {
                                    cell,
                                    orientation,
                                    entered_at,
                                    ..
                                } => AgentStatus::Active {
                                    cell,
                                    orientation,
                                    entered_at,
                                    moving: None,
                                },
                                _ => unreachable!(),
                            };
                            result.rejected.push((id, RejectReason::DestinationBlocked));
                        }
                        // multi-tick moves stay committed at remaining == 0
                        // and retry every subsequent step
                    }
                }
            }
        }

        // 5. entries resolve against the post-move occupancy
        let mut occupied_now: std::collections::HashSet<CellIndex> = self
            .status
            .iter()
            .filter_map(|st| st.active_cell())
            .collect();
        for id in 0..agents.len() {
            if frozen[id] || actions[id] != Action::Enter {
                continue;
            }
            if !matches!(self.status[id], AgentStatus::Outside) {
                continue; // handled (rejected) in step 2
            }
            let a = &agents[id];
            if a.start_cell == a.target_cell {
                // entering the target: the agent leaves immediately and never
                // occupies the cell, so same-tick claims by movers are fine;
                // only an occupant that stayed put blocks it
                let blocked = match occupant_of.get(&a.start_cell) {
                    Some(&occ) => !matches!(res.get(&occ), Some(Res::Success)),
                    None => false,
                };
                if blocked {
                    result.rejected.push((id, RejectReason::EntryBlocked));
                } else {
                    self.status[id] = AgentStatus::Arrived { at: s + 1 };
                    result.arrivals.push((id, s + 1));
                    result.entered.push(id);
                }
            } else if occupied_now.contains(&a.start_cell) {
                result.rejected.push((id, RejectReason::EntryBlocked));
            } else {
                self.status[id] = AgentStatus::Active {
                    cell: a.start_cell,
                    orientation: a.start_orientation,
                    entered_at: s + 1,
                    moving: None,
                };
                occupied_now.insert(a.start_cell);
                result.entered.push(id);
            }
        }

        // 6. malfunction countdown
        for m in &mut self.malfunction_remaining {
            *m = m.saturating_sub(1);
        }

        self.tick = s + 1;

        // occupancy exclusivity, checked every step
        let mut seen = std::collections::HashSet::new();
        for st in &self.status {
            if let Some(c) = st.active_cell() {
                assert!(seen.insert(c), "two active agents on cell {c} at tick {}", self.tick);
            }
        }
        Ok(result)
    }
}

/// Result of rolling an agent's uncontrollable present forward: the earliest
/// state from which a free decision can be made.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForcedOutcome {
    Free {
        cell: CellIndex,
        orientation: Direction,
        decision_tick: Tick,
    },
    Blocked,
}

/// Core arithmetic of the forced prefix, shared by the simulation-level
/// [`roll_forward_forced`] and the planner: waits out `malfunction_remaining`
/// steps at `now`, then finishes any ongoing move, retrying a blocked
/// completion at the next tick for which `dest_free` holds.
pub fn forced_decision(
    status: &AgentStatus,
    malfunction_remaining: Tick,
    now: Tick,
    horizon: Tick,
    dest_free: impl Fn(Tick) -> bool,
) -> ForcedOutcome {
    match status {
        AgentStatus::Active {
            cell,
            orientation,
            moving: None,
            ..
        } => {
            let decision = now + malfunction_remaining;
            if decision >= horizon {
                ForcedOutcome::Blocked
            } else {
                ForcedOutcome::Free {
                    cell: *cell,
                    orientation: *orientation,
                    decision_tick: decision,
                }
            }
        }
        AgentStatus::Active {
            moving: Some(mv), ..
        } => {
            let earliest = now + malfunction_remaining + mv.remaining.max(1);
            match (earliest..=horizon).find(|&t| dest_free(t)) {
                Some(t) => ForcedOutcome::Free {
                    cell: mv.dest,
                    orientation: mv.direction,
                    decision_tick: t,
                },
                None => ForcedOutcome::Blocked,
            }
        }
        AgentStatus::Outside | AgentStatus::Arrived { .. } => ForcedOutcome::Blocked,
    }
}

/// Simulates the agent's ongoing move to completion and waits out any
/// remaining malfunction. `dest_free(t)` reports whether the move's
/// destination can be entered at tick `t`; a blocked completion retries at
/// the next free tick, or `Blocked` if none exists up to `horizon`.
pub fn roll_forward_forced(
    state: &SimState,
    agent: AgentId,
    horizon: Tick,
    dest_free: impl Fn(Tick) -> bool,
) -> ForcedOutcome {
    forced_decision(
        &state.status[agent],
        state.malfunction_remaining[agent],
        state.tick,
        horizon,
        dest_free,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rail_network::load_map;

    fn line4() -> RailNetwork {
        load_map("RAIL v1 4 1\n0404 0401 0401 0101\n").unwrap()
    }

    fn agent(id: AgentId, start: CellIndex, target: CellIndex, speed_den: Tick) -> Agent {
        Agent {
            id,
            start_cell: start,
            start_orientation: Direction::E,
            target_cell: target,
            speed_den,
        }
    }

    #[test]
    fn empty_episode_is_trivially_complete() {
        let net = line4();
        let state = init_episode(&net, &[], &[], 10).unwrap();
        assert!(state.all_arrived());
    }

    #[test]
    fn shared_start_cells_are_fine_outside() {
        let net = line4();
        let agents = [agent(0, 0, 3, 1), agent(1, 0, 3, 1)];
        assert!(init_episode(&net, &agents, &[], 10).is_ok());
    }

    #[test]
    fn unreachable_target_rejected() {
        // two disconnected straight pairs
        let net = load_map("RAIL v1 5 1\n0404 0101 0000 0404 0101\n").unwrap();
        let agents = [agent(0, 0, 2, 1)]; // compact 2 = cell (0,3)
        let err = init_episode(&net, &agents, &[], 10).unwrap_err();
        assert!(matches!(err, SimError::InvalidAgent { agent: 0, .. }));
    }

    #[test]
    fn straight_run_arrives_at_tick_4() {
        let net = line4();
        let agents = [agent(0, 0, 3, 1)];
        let mut state = init_episode(&net, &agents, &[], 10).unwrap();
        state.step(&net, &agents, &[Action::Enter]).unwrap();
        assert_eq!(
            state.status[0],
            AgentStatus::Active {
                cell: 0,
                orientation: Direction::E,
                entered_at: 1,
                moving: None
            }
        );
        for expect_tick in [2, 3, 4] {
            let r = state.step(&net, &agents, &[Action::Move(Direction::E)]).unwrap();
            assert!(r.rejected.is_empty());
            if expect_tick == 4 {
                assert_eq!(r.arrivals, vec![(0, 4)]);
            }
        }
        assert_eq!(state.status[0], AgentStatus::Arrived { at: 4 });
    }

    #[test]
    fn chain_advances_in_one_tick() {
        let net = line4();
        let agents = [agent(0, 0, 3, 1), agent(1, 1, 3, 1)];
        let mut state = init_episode(&net, &agents, &[], 10).unwrap();
        // enter one at a time (agent 1 first so both get in)
        state.step(&net, &agents, &[Action::Wait, Action::Enter]).unwrap();
        state.step(&net, &agents, &[Action::Enter, Action::Wait]).unwrap();
        // both move east: agent 0 may take the cell agent 1 vacates
        let r = state
            .step(&net, &agents, &[Action::Move(Direction::E), Action::Move(Direction::E)])
            .unwrap();
        assert!(r.rejected.is_empty());
        assert_eq!(state.status[0].active_cell(), Some(1));
        assert_eq!(state.status[1].active_cell(), Some(2));
    }

    #[test]
    fn head_on_swap_rejected() {
        // two straights facing each other
        let net = line4();
        let agents = [
            agent(0, 0, 3, 1),
            Agent {
                id: 1,
                start_cell: 1,
                start_orientation: Direction::W,
                target_cell: 0,
                speed_den: 1,
            },
        ];
        let mut state = init_episode(&net, &agents, &[], 10).unwrap();
        state.step(&net, &agents, &[Action::Enter, Action::Wait]).unwrap();
        state.step(&net, &agents, &[Action::Wait, Action::Enter]).unwrap();
        let r = state
            .step(&net, &agents, &[Action::Move(Direction::E), Action::Move(Direction::W)])
            .unwrap();
        assert_eq!(r.rejected.len(), 2);
        assert_eq!(state.status[0].active_cell(), Some(0));
        assert_eq!(state.status[1].active_cell(), Some(1));
    }

    #[test]
    fn malfunction_freezes_and_counts_down() {
        let net = line4();
        let agents = [agent(0, 0, 3, 1)];
        let schedule = [MalfunctionEvent {
            agent: 0,
            start_tick: 1,
            duration: 2,
        }];
        let mut state = init_episode(&net, &agents, &schedule, 20).unwrap();
        state.step(&net, &agents, &[Action::Enter]).unwrap();
        // step from tick 1 activates the event: the agent is frozen now
        let r = state.step(&net, &agents, &[Action::Move(Direction::E)]).unwrap();
        assert_eq!(r.malfunction_starts, vec![0]);
        assert!(r.rejected.is_empty()); // preempted, not rejected
        assert_eq!(state.status[0].active_cell(), Some(0));
        assert_eq!(state.malfunction_remaining[0], 1);
        // still frozen for one more step
        let r = state.step(&net, &agents, &[Action::Move(Direction::E)]).unwrap();
        assert!(r.moved.is_empty());
        assert_eq!(state.malfunction_remaining[0], 0);
        // free again
        let r = state.step(&net, &agents, &[Action::Move(Direction::E)]).unwrap();
        assert_eq!(r.moved, vec![(0, 1)]);
    }

    #[test]
    fn malfunction_pauses_mid_move() {
        let net = line4();
        let agents = [agent(0, 0, 3, 2)]; // two ticks per move
        let schedule = [MalfunctionEvent {
            agent: 0,
            start_tick: 2,
            duration: 3,
        }];
        let mut state = init_episode(&net, &agents, &schedule, 20).unwrap();
        state.step(&net, &agents, &[Action::Enter]).unwrap();
        // move starts at tick 1, would land at tick 3
        state.step(&net, &agents, &[Action::Move(Direction::E)]).unwrap();
        // frozen during steps 2, 3, 4; move resumes at step 5, landing at 6
        for _ in 0..3 {
            let r = state.step(&net, &agents, &[Action::Wait]).unwrap();
            assert!(r.moved.is_empty());
        }
        let r = state.step(&net, &agents, &[Action::Wait]).unwrap();
        assert_eq!(r.moved, vec![(0, 1)]);
        assert_eq!(
            state.status[0],
            AgentStatus::Active {
                cell: 1,
                orientation: Direction::E,
                entered_at: 6,
                moving: None
            }
        );
    }

    #[test]
    fn roll_forward_countdowns() {
        let net = line4();
        let agents = [agent(0, 0, 3, 2)];
        let mut state = init_episode(&net, &agents, &[], 40).unwrap();
        state.step(&net, &agents, &[Action::Enter]).unwrap();
        state.step(&net, &agents, &[Action::Move(Direction::E)]).unwrap();
        // mid-move with 1 tick remaining at tick 2
        assert_eq!(
            roll_forward_forced(&state, 0, 40, |_| true),
            ForcedOutcome::Free {
                cell: 1,
                orientation: Direction::E,
                decision_tick: 3
            }
        );
        // blocked destination through the horizon
        assert_eq!(roll_forward_forced(&state, 0, 40, |_| false), ForcedOutcome::Blocked);
    }

    #[test]
    fn roll_forward_waits_out_malfunction() {
        let net = line4();
        let agents = [agent(0, 0, 3, 1)];
        let schedule = [MalfunctionEvent {
            agent: 0,
            start_tick: 1,
            duration: 5,
        }];
        let mut state = init_episode(&net, &agents, &schedule, 40).unwrap();
        state.step(&net, &agents, &[Action::Enter]).unwrap();
        state.step(&net, &agents, &[Action::Wait]).unwrap();
        // at tick 2 with 4 ticks of malfunction left
        assert_eq!(state.malfunction_remaining[0], 4);
        assert_eq!(
            roll_forward_forced(&state, 0, 40, |_| true),
            ForcedOutcome::Free {
                cell: 0,
                orientation: Direction::E,
                decision_tick: 6
            }
        );
    }

    #[test]
    fn determinism_and_exclusivity_under_fuzz() {
        use rand::{Rng, SeedableRng};
        let net = line4();
        let agents = [agent(0, 0, 3, 1), agent(1, 1, 3, 2), agent(2, 2, 0, 1)];
        let acts = [
            Action::Wait,
            Action::Enter,
            Action::Move(Direction::E),
            Action::Move(Direction::W),
        ];
        for seed in 0..200u64 {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let schedule = [MalfunctionEvent {
                agent: rng.gen_range(0..3),
                start_tick: rng.gen_range(1..10),
                duration: rng.gen_range(1..4),
            }];
            let stream: Vec<[Action; 3]> = (0..30)
                .map(|_| [acts[rng.gen_range(0..4)], acts[rng.gen_range(0..4)], acts[rng.gen_range(0..4)]])
                .collect();
            let run = |stream: &[[Action; 3]]| {
                let mut st = init_episode(&net, &agents, &schedule, 40).unwrap();
                let mut results = Vec::new();
                for a in stream {
                    results.push(st.step(&net, &agents, a).unwrap());
                }
                (st, results)
            };
            let (s1, r1) = run(&stream);
            let (s2, r2) = run(&stream);
            assert_eq!(s1, s2);
            assert_eq!(r1, r2);
        }
    }
}
