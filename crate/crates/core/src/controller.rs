//! The tick loop: action emission from paths, repair on malfunction, and
//! search-mode selection via the degradation counter.

use crate::perm_search::{search, splitmix64, PlanningContext, SearchParams, SearchStats};
use crate::plan_repair::repair;
use crate::rail_network::heuristics_for_targets;
use crate::scenario::{RepairEvent, ReplayAgent, ReplayTick, ResolvedScenario, RunReport};
use crate::schedule::{score, validate_assignment, Agent, Assignment, Path, Visit};
use crate::simulation::{init_episode, Action, AgentStatus, SimError, SimState, StepResult};
use crate::te_planner::{OverlapPolicy, RuntimeSlice};
use crate::{AgentId, Tick, MAX_HORIZON};
use std::collections::BTreeSet;
use thiserror::Error;

/// Search intensity of one mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeParams {
    pub max_runs: u32,
    pub num_threads: u32,
    pub num_permutations: u32,
}

/// The three search modes and the degradation threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModeConfig {
    pub initial: ModeParams,
    pub full: ModeParams,
    pub restricted: ModeParams,
    pub counter_threshold: u32,
}

impl Default for ModeConfig {
    fn default() -> Self {
        ModeConfig {
            initial: ModeParams {
                max_runs: 4,
                num_threads: 3,
                num_permutations: 20,
            },
            full: ModeParams {
                max_runs: 4,
                num_threads: 3,
                num_permutations: 10,
            },
            restricted: ModeParams {
                max_runs: 2,
                num_threads: 3,
                num_permutations: 2,
            },
            counter_threshold: 3,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SolveConfig {
    pub mode: ModeConfig,
    pub policy: OverlapPolicy,
    pub seed: u64,
    pub exponent: f64,
}

impl SolveConfig {
    pub fn new(policy: OverlapPolicy, seed: u64) -> SolveConfig {
        SolveConfig {
            mode: ModeConfig::default(),
            policy,
            seed,
            exponent: 1.0,
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("contract violation at tick {tick}: {detail}")]
    ContractViolation { tick: Tick, detail: String },
    #[error("invalid assignment at tick {tick}:\n{detail}")]
    InvalidAssignment { tick: Tick, detail: String },
}

/// Planning horizon: one and a half episode lengths, capped.
pub fn planning_horizon(episode_len: Tick) -> Tick {
    ((episode_len as u64 * 3).div_ceil(2) as Tick).min(MAX_HORIZON)
}

/// Actions implied by a validated assignment at the current tick: ENTER when
/// the entry tick is due, MOVE when the next visit's move must start now,
/// WAIT otherwise.
pub fn actions_from_assignment(
    assignment: &Assignment,
    state: &SimState,
    agents: &[Agent],
) -> Vec<Action> {
    let t = state.tick;
    agents
        .iter()
        .map(|agent| {
            let path = &assignment.paths[agent.id];
            match state.status[agent.id] {
                AgentStatus::Arrived { .. } => Action::Wait,
                AgentStatus::Outside => match path.entry_tick() {
                    Some(entry) if entry == t + 1 => Action::Enter,
                    _ => Action::Wait,
                },
                AgentStatus::Active {
                    cell,
                    moving: Some(_),
                    ..
                } => {
                    let _ = cell;
                    Action::Wait
                }
                AgentStatus::Active {
                    cell, moving: None, ..
                } => {
                    if path.visits.len() >= 2 && path.visits[0].cell == cell {
                        let next = &path.visits[1];
                        if next.enter_tick == t + agent.speed_den {
                            return Action::Move(next.orientation);
                        }
                    }
                    Action::Wait
                }
            }
        })
        .collect()
}

/// Everything `run_episode` returns besides the report.
pub struct EpisodeArtifacts {
    pub report: RunReport,
    pub replay: Vec<ReplayTick>,
    pub final_assignment: Assignment,
}

struct Controller<'a> {
    scenario: &'a ResolvedScenario,
    config: &'a SolveConfig,
    horizon: Tick,
    state: SimState,
    incumbent: Assignment,
    search_seq: u64,
    stats: SearchStats,
    full_searches: u64,
    restricted_searches: u64,
    counter: u32,
    repair_events: Vec<RepairEvent>,
    deadlocked_ever: BTreeSet<AgentId>,
    replay: Vec<ReplayTick>,
}

impl<'a> Controller<'a> {
    /// Planned (finished count, max arrival among finished): the degradation
    /// measure of an assignment.
    fn plan_quality(&self, assignment: &Assignment) -> (usize, Tick) {
        let mut finished = 0;
        let mut max_td = 0;
        for (id, path) in assignment.paths.iter().enumerate() {
            if let Some(td) = path.arrival_tick(self.scenario.agents[id].target_cell) {
                if td <= self.horizon {
                    finished += 1;
                    max_td = max_td.max(td);
                }
            }
        }
        (finished, max_td)
    }

    fn next_search_seed(&mut self) -> u64 {
        let seed = splitmix64(self.config.seed ^ (0x5ea6c4 + self.search_seq));
        self.search_seq += 1;
        seed
    }

    fn run_search(&mut self, base: &Assignment, mode: ModeParams) -> Assignment {
        let heuristics = heuristics_for_targets(
            &self.scenario.net,
            self.scenario.agents.iter().map(|a| a.target_cell),
        );
        let runtime = RuntimeSlice::all_from_state(&self.state);
        let ctx = PlanningContext {
            net: &self.scenario.net,
            agents: &self.scenario.agents,
            heuristics: &heuristics,
            runtime: &runtime,
            policy: self.config.policy,
            horizon: self.horizon,
        };
        let params = SearchParams {
            max_runs: mode.max_runs,
            num_threads: mode.num_threads,
            num_permutations: mode.num_permutations,
            exponent: self.config.exponent,
            rng_seed: self.next_search_seed(),
        };
        let (result, stats) = search(base, &params, &ctx);
        self.stats.absorb(stats);
        result
    }

    fn validate_incumbent(&self) -> Result<(), EngineError> {
        let violations =
            validate_assignment(&self.scenario.net, &self.scenario.agents, &self.incumbent);
        if violations.is_empty() {
            Ok(())
        } else {
            Err(EngineError::InvalidAssignment {
                tick: self.state.tick,
                detail: violations
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join("\n"),
            })
        }
    }

    /// Advances each path past realized events and reports
    /// plan-versus-reality divergences (possible only around deadlocked
    /// agents, whose blocked moves may pop when a cell unexpectedly frees).
    fn reconcile(&mut self, result: &StepResult) -> Vec<AgentId> {
        let t = self.state.tick; // already advanced: events landed at tick t
        let mut diverged = Vec::new();
        for id in 0..self.scenario.agents.len() {
            let agent = &self.scenario.agents[id];
            let path = &mut self.incumbent.paths[id];
            match self.state.status[id] {
                AgentStatus::Arrived { at } => {
                    if !path.is_never()
                        && path.visits.last().map(|v| (v.cell, v.enter_tick))
                            == Some((agent.target_cell, at))
                    {
                        if result.arrivals.iter().any(|&(a, _)| a == id) {
                            // collapse the realized path to its arrival
                            let last = *path.visits.last().unwrap();
                            path.visits = vec![last];
                        }
                    } else if result.arrivals.iter().any(|&(a, _)| a == id) {
                        // arrived off-plan
                        path.visits = vec![Visit {
                            cell: agent.target_cell,
                            orientation: agent.start_orientation,
                            enter_tick: at,
                        }];
                        diverged.push(id);
                    }
                }
                AgentStatus::Active {
                    cell,
                    orientation,
                    entered_at,
                    ..
                } => {
                    let moved_here = result.moved.iter().any(|&(a, _)| a == id)
                        || result.entered.contains(&id);
                    if moved_here {
                        // the plan's next visit should be exactly this cell
                        // at exactly this tick
                        let planned = if result.entered.contains(&id) {
                            path.visits.first().copied()
                        } else {
                            if path.visits.len() >= 2 {
                                path.visits.remove(0);
                            }
                            path.visits.first().copied()
                        };
                        match planned {
                            Some(v) if v.cell == cell && v.enter_tick == entered_at => {}
                            _ => {
                                *path = Path {
                                    visits: vec![Visit {
                                        cell,
                                        orientation,
                                        enter_tick: entered_at,
                                    }],
                                };
                                diverged.push(id);
                            }
                        }
                    } else {
                        // stayed put: a planned entry into a new cell at tick
                        // t that did not happen is a divergence (frozen
                        // agents are re-timed by the repair this triggers)
                        if path.visits.len() >= 2 && path.visits[1].enter_tick == t {
                            diverged.push(id);
                        }
                    }
                }
                AgentStatus::Outside => {
                    if let Some(entry) = path.entry_tick() {
                        if entry == t {
                            diverged.push(id); // planned entry did not happen
                        }
                    }
                }
            }
        }
        diverged
    }

    fn repair_and_replan(
        &mut self,
        trigger: &str,
        malfunctioning: Vec<AgentId>,
    ) -> Result<(), EngineError> {
        let runtime = RuntimeSlice::all_from_state(&self.state);
        let before = self.plan_quality(&self.incumbent);
        let outcome = repair(
            &self.scenario.net,
            &self.scenario.agents,
            &runtime,
            &self.incumbent,
            self.config.policy,
        );
        let after = self.plan_quality(&outcome.assignment);
        let degraded = after.0 < before.0 || after.1 > before.1;
        if degraded {
            self.counter += 1;
        }
        self.deadlocked_ever.extend(outcome.deadlocked.iter());
        let (mode, mode_name) = if self.counter > self.config.mode.counter_threshold {
            self.counter = 0;
            self.full_searches += 1;
            (self.config.mode.full, "full")
        } else {
            self.restricted_searches += 1;
            (self.config.mode.restricted, "restricted")
        };
        self.repair_events.push(RepairEvent {
            tick: self.state.tick,
            trigger: trigger.to_string(),
            malfunctioning,
            inversions: outcome.inversions_detected,
            swaps: outcome.swaps_attempted,
            deadlocked: outcome.deadlocked.iter().copied().collect(),
            degraded,
            search_mode: mode_name.to_string(),
        });
        self.incumbent = self.run_search(&outcome.assignment, mode);
        self.validate_incumbent()
    }
}

/// Runs one full episode: the initial search at tick 0, per-tick action
/// emission, and repair plus restricted/full re-search whenever a
/// malfunction begins. Deterministic for a fixed scenario, config, and seed.
pub fn run_episode(
    scenario: &ResolvedScenario,
    config: &SolveConfig,
) -> Result<EpisodeArtifacts, EngineError> {
    let start = std::time::Instant::now();
    let horizon = planning_horizon(scenario.episode_len);
    let state = init_episode(
        &scenario.net,
        &scenario.agents,
        &scenario.schedule,
        scenario.episode_len,
    )?;
    let mut ctl = Controller {
        scenario,
        config,
        horizon,
        state,
        incumbent: Assignment::all_never(scenario.agents.len(), horizon),
        search_seq: 0,
        stats: SearchStats::default(),
        full_searches: 0,
        restricted_searches: 0,
        counter: 0,
        repair_events: Vec::new(),
        deadlocked_ever: BTreeSet::new(),
        replay: Vec::new(),
    };

    // tick 0: initial mode from the all-NEVER base
    let base = ctl.incumbent.clone();
    ctl.incumbent = ctl.run_search(&base, config.mode.initial);
    ctl.validate_incumbent()?;

    while ctl.state.tick < scenario.episode_len && !ctl.state.all_arrived() {
        let tick = ctl.state.tick;
        let actions = actions_from_assignment(&ctl.incumbent, &ctl.state, &scenario.agents);
        let result = ctl.state.step(&scenario.net, &scenario.agents, &actions)?;
        ctl.replay.push(ReplayTick {
            tick,
            agents: (0..scenario.agents.len())
                .map(|id| ReplayAgent {
                    id,
                    action: actions[id],
                    status: ctl.state.status[id],
                    malfunction_remaining: ctl.state.malfunction_remaining[id],
                })
                .collect(),
        });
        let diverged = ctl.reconcile(&result);
        let malfunction_started = !result.malfunction_starts.is_empty();
        let excusable = malfunction_started || !ctl.deadlocked_ever.is_empty();
        if (!result.rejected.is_empty() || !diverged.is_empty()) && !excusable {
            return Err(EngineError::ContractViolation {
                tick: ctl.state.tick,
                detail: format!(
                    "unexplained rejections {:?} / divergences {:?}",
                    result.rejected, diverged
                ),
            });
        }
        let needs_repair = malfunction_started || !result.rejected.is_empty() || !diverged.is_empty();
        if needs_repair && ctl.state.tick < scenario.episode_len && !ctl.state.all_arrived() {
            let trigger = if malfunction_started {
                "malfunction"
            } else {
                "divergence"
            };
            ctl.repair_and_replan(trigger, result.malfunction_starts.clone())?;
        }
    }

    let arrivals: Vec<Option<Tick>> = ctl
        .state
        .status
        .iter()
        .map(|s| match s {
            AgentStatus::Arrived { at } => Some(*at),
            _ => None,
        })
        .collect();
    let arrived = arrivals.iter().flatten().count();
    let completion = if scenario.agents.is_empty() {
        1.0
    } else {
        arrived as f64 / scenario.agents.len() as f64
    };
    let realized = Assignment {
        paths: arrivals
            .iter()
            .enumerate()
            .map(|(id, a)| match a {
                Some(at) => Path {
                    visits: vec![Visit {
                        cell: scenario.agents[id].target_cell,
                        orientation: scenario.agents[id].start_orientation,
                        enter_tick: *at,
                    }],
                },
                None => Path::never(),
            })
            .collect(),
        horizon,
    };
    let realized_score = score(&realized, &scenario.agents, config.exponent, horizon);
    let report = RunReport {
        policy: config.policy.as_str().to_string(),
        seed: config.seed,
        exponent: config.exponent,
        num_agents: scenario.agents.len(),
        episode_len: scenario.episode_len,
        horizon,
        arrivals,
        completion,
        score: realized_score,
        repair_events: ctl.repair_events,
        search_stats: ctl.stats,
        full_searches: ctl.full_searches,
        restricted_searches: ctl.restricted_searches,
        deadlocked_ever: ctl.deadlocked_ever.into_iter().collect(),
        wall_time_ms: start.elapsed().as_millis() as u64,
    };
    Ok(EpisodeArtifacts {
        report,
        replay: ctl.replay,
        final_assignment: ctl.incumbent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rail_network::load_map;
    use crate::simulation::MalfunctionEvent;
    use crate::Direction;

    fn line_scenario(
        agents: Vec<Agent>,
        schedule: Vec<MalfunctionEvent>,
        episode_len: Tick,
    ) -> ResolvedScenario {
        ResolvedScenario {
            net: load_map("RAIL v1 4 1\n0404 0401 0401 0101\n").unwrap(),
            agents,
            schedule,
            episode_len,
        }
    }

    fn east_agent(id: AgentId, start: u32, target: u32, speed_den: Tick) -> Agent {
        Agent {
            id,
            start_cell: start,
            start_orientation: Direction::E,
            target_cell: target,
            speed_den,
        }
    }

    #[test]
    fn horizon_is_one_and_a_half_lengths_capped() {
        assert_eq!(planning_horizon(100), 150);
        assert_eq!(planning_horizon(101), 152);
        assert_eq!(planning_horizon(2000), MAX_HORIZON);
    }

    #[test]
    fn malfunction_free_episode_completes_exactly_as_planned() {
        let scenario = line_scenario(vec![east_agent(0, 0, 3, 1)], vec![], 20);
        let config = SolveConfig::new(OverlapPolicy::Strict, 7);
        let out = run_episode(&scenario, &config).unwrap();
        assert_eq!(out.report.completion, 1.0);
        assert!(out.report.repair_events.is_empty());
        assert_eq!(out.report.arrivals[0], Some(4));
    }

    #[test]
    fn single_malfunction_delays_arrival_by_duration() {
        let base = line_scenario(vec![east_agent(0, 0, 3, 1)], vec![], 40);
        let config = SolveConfig::new(OverlapPolicy::Strict, 7);
        let undisturbed = run_episode(&base, &config).unwrap();
        let t0 = undisturbed.report.arrivals[0].unwrap();

        let d = 5;
        let disturbed = line_scenario(
            vec![east_agent(0, 0, 3, 1)],
            vec![MalfunctionEvent {
                agent: 0,
                start_tick: 2,
                duration: d,
            }],
            40,
        );
        let out = run_episode(&disturbed, &config).unwrap();
        assert_eq!(out.report.arrivals[0], Some(t0 + d));
        assert_eq!(out.report.repair_events.len(), 1);
    }

    #[test]
    fn two_agents_complete_on_shared_line() {
        let scenario = line_scenario(
            vec![east_agent(0, 0, 3, 1), east_agent(1, 1, 3, 1)],
            vec![],
            30,
        );
        let config = SolveConfig::new(OverlapPolicy::Strict, 3);
        let out = run_episode(&scenario, &config).unwrap();
        assert_eq!(out.report.completion, 1.0);
    }

    #[test]
    fn deterministic_reports() {
        let scenario = line_scenario(
            vec![east_agent(0, 0, 3, 1), east_agent(1, 1, 3, 2)],
            vec![MalfunctionEvent {
                agent: 0,
                start_tick: 2,
                duration: 3,
            }],
            40,
        );
        let config = SolveConfig::new(OverlapPolicy::Strict, 11);
        let a = run_episode(&scenario, &config).unwrap();
        let b = run_episode(&scenario, &config).unwrap();
        assert_eq!(
            serde_json::to_string(&a.report.deterministic_view()).unwrap(),
            serde_json::to_string(&b.report.deterministic_view()).unwrap()
        );
        assert_eq!(a.replay, b.replay);
    }

    #[test]
    fn counter_triggers_full_mode_after_threshold() {
        // four malfunctions, each delaying the lone agent's arrival: repairs
        // 1-3 degrade (counter 1..3, restricted), repair 4 pushes the counter
        // to 4 > 3: full mode once, counter reset
        let schedule = vec![
            MalfunctionEvent {
                agent: 0,
                start_tick: 2,
                duration: 2,
            },
            MalfunctionEvent {
                agent: 0,
                start_tick: 6,
                duration: 2,
            },
            MalfunctionEvent {
                agent: 0,
                start_tick: 10,
                duration: 2,
            },
            MalfunctionEvent {
                agent: 0,
                start_tick: 14,
                duration: 2,
            },
        ];
        let scenario = line_scenario(vec![east_agent(0, 0, 3, 4)], schedule, 60);
        let config = SolveConfig::new(OverlapPolicy::Strict, 5);
        let out = run_episode(&scenario, &config).unwrap();
        let modes: Vec<&str> = out
            .report
            .repair_events
            .iter()
            .map(|e| e.search_mode.as_str())
            .collect();
        assert_eq!(modes, vec!["restricted", "restricted", "restricted", "full"]);
        assert_eq!(out.report.full_searches, 1);
        assert_eq!(out.report.restricted_searches, 3);
        assert!(out.report.repair_events.iter().all(|e| e.degraded));
    }
}
