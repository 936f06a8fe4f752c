//! On-disk formats: scenario files, replay logs, run reports, and the
//! assignment dump.

use crate::rail_network::{load_map, MapError, RailNetwork};
use crate::schedule::{Agent, Assignment, Score};
use crate::simulation::{Action, AgentStatus, MalfunctionEvent};
use crate::{AgentId, Direction, Tick};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path as FsPath;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("scenario: {0}")]
    Format(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// The map either lives in its own file next to the scenario or is inlined.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MapSource {
    Path { path: String },
    Inline { inline: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentSpec {
    pub start: [u32; 2],
    pub dir: Direction,
    pub target: [u32; 2],
    pub speed_den: Tick,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MalfunctionGenerator {
    /// Per-agent per-tick malfunction probability.
    pub p: f64,
    pub dmin: Tick,
    pub dmax: Tick,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MalfunctionSpec {
    Events(Vec<MalfunctionEvent>),
    Generated { generator: MalfunctionGenerator },
}

impl Default for MalfunctionSpec {
    fn default() -> Self {
        MalfunctionSpec::Events(Vec::new())
    }
}

/// The scenario file as written to disk.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub map: MapSource,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub malfunctions: MalfunctionSpec,
    pub episode_len: Tick,
}

/// A scenario with the map loaded, coordinates compacted, and the
/// malfunction schedule drawn.
#[derive(Debug, Clone)]
pub struct ResolvedScenario {
    pub net: RailNetwork,
    pub agents: Vec<Agent>,
    pub schedule: Vec<MalfunctionEvent>,
    pub episode_len: Tick,
}

/// Draws a non-overlapping malfunction schedule: agent-major, tick-by-tick
/// Bernoulli draws with the duration sampled uniformly from `[dmin, dmax]`.
pub fn draw_malfunctions(
    generator: &MalfunctionGenerator,
    num_agents: usize,
    episode_len: Tick,
) -> Vec<MalfunctionEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(generator.seed);
    let mut events = Vec::new();
    for agent in 0..num_agents {
        let mut t = 1;
        while t < episode_len {
            if generator.p > 0.0 && rng.gen_bool(generator.p.min(1.0)) {
                let duration = rng.gen_range(generator.dmin..=generator.dmax.max(generator.dmin));
                events.push(MalfunctionEvent {
                    agent,
                    start_tick: t,
                    duration,
                });
                t += duration;
            } else {
                t += 1;
            }
        }
    }
    events
}

impl ScenarioFile {
    pub fn from_json(text: &str) -> Result<ScenarioFile, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// Loads the map (paths are resolved against `base_dir`), compacts agent
    /// coordinates, and draws the malfunction schedule.
    pub fn resolve(&self, base_dir: &FsPath) -> Result<ResolvedScenario, ScenarioError> {
        let map_text = match &self.map {
            MapSource::Inline { inline } => inline.clone(),
            MapSource::Path { path } => std::fs::read_to_string(base_dir.join(path))?,
        };
        let net = load_map(&map_text)?;
        let mut agents = Vec::with_capacity(self.agents.len());
        for (id, spec) in self.agents.iter().enumerate() {
            let start_cell = net.cell_at(spec.start[0], spec.start[1]).ok_or_else(|| {
                ScenarioError::Format(format!(
                    "agent {id}: start ({}, {}) is not a rail cell",
                    spec.start[0], spec.start[1]
                ))
            })?;
            let target_cell = net.cell_at(spec.target[0], spec.target[1]).ok_or_else(|| {
                ScenarioError::Format(format!(
                    "agent {id}: target ({}, {}) is not a rail cell",
                    spec.target[0], spec.target[1]
                ))
            })?;
            agents.push(Agent {
                id,
                start_cell,
                start_orientation: spec.dir,
                target_cell,
                speed_den: spec.speed_den,
            });
        }
        let schedule = match &self.malfunctions {
            MalfunctionSpec::Events(events) => events.clone(),
            MalfunctionSpec::Generated { generator } => {
                draw_malfunctions(generator, agents.len(), self.episode_len)
            }
        };
        Ok(ResolvedScenario {
            net,
            agents,
            schedule,
            episode_len: self.episode_len,
        })
    }
}

/// One line of the replay log: the actions submitted at `tick` and every
/// agent's state after the step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayTick {
    pub tick: Tick,
    pub agents: Vec<ReplayAgent>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayAgent {
    pub id: AgentId,
    pub action: Action,
    pub status: AgentStatus,
    pub malfunction_remaining: Tick,
}

/// Serializes a replay as JSON lines, one tick per line.
pub fn replay_to_string(ticks: &[ReplayTick]) -> String {
    let mut out = String::new();
    for t in ticks {
        out.push_str(&serde_json::to_string(t).expect("replay tick serializes"));
        out.push('\n');
    }
    out
}

pub fn replay_from_string(text: &str) -> Result<Vec<ReplayTick>, ScenarioError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Per-repair diagnostics recorded in the run report.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepairEvent {
    pub tick: Tick,
    pub trigger: String,
    pub malfunctioning: Vec<AgentId>,
    pub inversions: u64,
    pub swaps: u64,
    pub deadlocked: Vec<AgentId>,
    pub degraded: bool,
    pub search_mode: String,
}

/// The solver's structured output for one episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub policy: String,
    pub seed: u64,
    pub exponent: f64,
    pub num_agents: usize,
    pub episode_len: Tick,
    pub horizon: Tick,
    /// Realized arrival tick per agent, if it reached its target.
    pub arrivals: Vec<Option<Tick>>,
    /// Fraction of agents that arrived within the episode.
    pub completion: f64,
    /// Internal (X, Y) score of the realized arrivals.
    pub score: Score,
    pub repair_events: Vec<RepairEvent>,
    pub search_stats: crate::perm_search::SearchStats,
    pub full_searches: u64,
    pub restricted_searches: u64,
    pub deadlocked_ever: Vec<AgentId>,
    /// Wall time; excluded from determinism comparisons.
    pub wall_time_ms: u64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<RunReport, ScenarioError> {
        Ok(serde_json::from_str(text)?)
    }

    /// The report with wall time zeroed, for byte-exact determinism checks.
    pub fn deterministic_view(&self) -> RunReport {
        RunReport {
            wall_time_ms: 0,
            ..self.clone()
        }
    }
}

/// Assignment dump for debugging and verification: per agent, the entry tick
/// and visit list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AssignmentDump {
    pub horizon: Tick,
    pub agents: Vec<AgentPathDump>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentPathDump {
    pub id: AgentId,
    pub entry_tick: Option<Tick>,
    pub visits: Vec<crate::schedule::Visit>,
}

impl AssignmentDump {
    pub fn from_assignment(assignment: &Assignment) -> AssignmentDump {
        AssignmentDump {
            horizon: assignment.horizon,
            agents: assignment
                .paths
                .iter()
                .enumerate()
                .map(|(id, p)| AgentPathDump {
                    id,
                    entry_tick: p.entry_tick(),
                    visits: p.visits.clone(),
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scenario_round_trips_with_inline_map() {
        let text = r#"{
            "map": {"inline": "RAIL v1 4 1\n0404 0401 0401 0101\n"},
            "agents": [{"start": [0, 0], "dir": "E", "target": [0, 3], "speed_den": 1}],
            "malfunctions": [{"agent": 0, "start_tick": 3, "duration": 2}],
            "episode_len": 20
        }"#;
        let scenario = ScenarioFile::from_json(text).unwrap();
        let resolved = scenario.resolve(FsPath::new(".")).unwrap();
        assert_eq!(resolved.agents.len(), 1);
        assert_eq!(resolved.agents[0].start_cell, 0);
        assert_eq!(resolved.agents[0].target_cell, 3);
        assert_eq!(resolved.schedule.len(), 1);
        let back = ScenarioFile::from_json(&scenario.to_json()).unwrap();
        assert_eq!(back.episode_len, 20);
    }

    #[test]
    fn generator_spec_draws_deterministic_schedule() {
        let text = r#"{
            "map": {"inline": "RAIL v1 4 1\n0404 0401 0401 0101\n"},
            "agents": [{"start": [0, 0], "dir": "E", "target": [0, 3], "speed_den": 1}],
            "malfunctions": {"generator": {"p": 0.2, "dmin": 2, "dmax": 5, "seed": 11}},
            "episode_len": 50
        }"#;
        let scenario = ScenarioFile::from_json(text).unwrap();
        let a = scenario.resolve(FsPath::new(".")).unwrap();
        let b = scenario.resolve(FsPath::new(".")).unwrap();
        assert_eq!(a.schedule, b.schedule);
        assert!(!a.schedule.is_empty());
        // non-overlap per agent
        for w in a.schedule.windows(2) {
            if w[0].agent == w[1].agent {
                assert!(w[1].start_tick >= w[0].start_tick + w[0].duration);
            }
        }
    }

    #[test]
    fn missing_rail_cell_is_a_format_error() {
        let text = r#"{
            "map": {"inline": "RAIL v1 4 1\n0404 0401 0401 0101\n"},
            "agents": [{"start": [0, 0], "dir": "E", "target": [1, 3], "speed_den": 1}],
            "episode_len": 20
        }"#;
        let scenario = ScenarioFile::from_json(text).unwrap();
        assert!(matches!(
            scenario.resolve(FsPath::new(".")),
            Err(ScenarioError::Format(_))
        ));
    }

    #[test]
    fn replay_round_trip() {
        let ticks = vec![ReplayTick {
            tick: 0,
            agents: vec![ReplayAgent {
                id: 0,
                action: Action::Enter,
                status: AgentStatus::Active {
                    cell: 0,
                    orientation: Direction::E,
                    entered_at: 1,
                    moving: None,
                },
                malfunction_remaining: 0,
            }],
        }];
        let text = replay_to_string(&ticks);
        assert_eq!(text.lines().count(), 1);
        assert_eq!(replay_from_string(&text).unwrap(), ticks);
    }
}
