//! The outer search loop: speed-grouped random permutations, per-permutation
//! full reassignment, parallel workers, best-of selection, and early stopping
//! across runs.

use crate::rail_network::{HeuristicTable, RailNetwork};
use crate::schedule::{
    compare, score, Agent, Assignment, MoveInterval, OccupancyTable, Path, Score,
};
use crate::te_planner::{plan_path, IntervalIndex, OverlapPolicy, RuntimeSlice};
use crate::{AgentId, CellIndex, Tick};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::cmp::Ordering;
use std::collections::HashMap;

/// Shared read-only context for (re-)planning at one instant.
pub struct PlanningContext<'a> {
    pub net: &'a RailNetwork,
    pub agents: &'a [Agent],
    pub heuristics: &'a HashMap<CellIndex, HeuristicTable>,
    pub runtime: &'a [RuntimeSlice],
    pub policy: OverlapPolicy,
    pub horizon: Tick,
}

impl<'a> PlanningContext<'a> {
    fn heuristic(&self, agent: AgentId) -> &HeuristicTable {
        &self.heuristics[&self.agents[agent].target_cell]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SearchParams {
    pub max_runs: u32,
    pub num_threads: u32,
    pub num_permutations: u32,
    pub exponent: f64,
    pub rng_seed: u64,
}

/// Instrumentation counters for one search invocation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SearchStats {
    pub runs_executed: u64,
    pub permutations_evaluated: u64,
    pub nodes_expanded: u64,
    pub improvements: u64,
}

impl SearchStats {
    pub fn absorb(&mut self, other: SearchStats) {
        self.runs_executed += other.runs_executed;
        self.permutations_evaluated += other.permutations_evaluated;
        self.nodes_expanded += other.nodes_expanded;
        self.improvements += other.improvements;
    }
}

/// Draws one agent permutation: agents grouped by speed descending (smaller
/// `speed_den` first), uniformly shuffled within each speed group.
pub fn generate_permutation(agents: &[Agent], rng: &mut ChaCha8Rng) -> Vec<AgentId> {
    let mut dens: Vec<Tick> = agents.iter().map(|a| a.speed_den).collect();
    dens.sort_unstable();
    dens.dedup();
    let mut out = Vec::with_capacity(agents.len());
    for den in dens {
        let mut group: Vec<AgentId> = agents
            .iter()
            .filter(|a| a.speed_den == den)
            .map(|a| a.id)
            .collect();
        group.shuffle(rng);
        out.extend(group);
    }
    out
}

/// The mutable state threaded through one reassignment pass.
struct Working {
    table: OccupancyTable,
    intervals: IntervalIndex,
    paths: Vec<Path>,
}

impl Working {
    fn from_assignment(ctx: &PlanningContext, base: &Assignment) -> Working {
        let table = OccupancyTable::from_assignment(ctx.net.num_cells(), base, ctx.agents)
            .expect("base assignment must be conflict-free");
        let mut intervals = IntervalIndex::new(ctx.net.num_cells());
        for (id, path) in base.paths.iter().enumerate() {
            intervals.insert_all(path_intervals(ctx, id, path));
        }
        Working {
            table,
            intervals,
            paths: base.paths.clone(),
        }
    }
}

/// Move intervals of a path, with the first one stretched to the agent's real
/// move start when the agent is mid-move (a malfunction lengthens the
/// committed interval; planned future moves stay optimistic).
fn path_intervals(ctx: &PlanningContext, agent: AgentId, path: &Path) -> Vec<MoveInterval> {
    let ongoing_start = match ctx.runtime[agent].status {
        crate::simulation::AgentStatus::Active {
            moving: Some(mv), ..
        } => Some(mv.started),
        _ => None,
    };
    path.move_intervals(agent, ctx.agents[agent].speed_den, ongoing_start)
}

/// Re-plans every agent in permutation order: each agent's path and move
/// intervals are withdrawn from the working configuration, a new shortest
/// path is searched, and the result (or the withdrawn path, when no path
/// exists) is committed back. Returns the assignment plus expanded-node
/// count.
pub fn reassign(base: &Assignment, perm: &[AgentId], ctx: &PlanningContext) -> (Assignment, u64) {
    let mut working = Working::from_assignment(ctx, base);
    let mut nodes = 0u64;
    for &id in perm {
        if ctx.runtime[id].status.is_arrived() {
            continue;
        }
        let agent = &ctx.agents[id];
        let old_path = working.paths[id].clone();
        working
            .table
            .remove_path(id, &old_path, agent.target_cell)
            .expect("withdrawn path owned its footprint");
        working.intervals.remove_agent(id);
        let out = plan_path(
            ctx.net,
            &working.table,
            ctx.heuristic(id),
            agent,
            &ctx.runtime[id],
            &working.intervals,
            ctx.policy,
            ctx.horizon,
        );
        nodes += out.nodes_expanded;
        let chosen = out.path.unwrap_or(old_path);
        working
            .table
            .insert_path(id, &chosen, agent.target_cell)
            .expect("planned path must fit the table it was planned against");
        working.intervals.insert_all(path_intervals(ctx, id, &chosen));
        working.paths[id] = chosen;
    }
    (
        Assignment {
            paths: working.paths,
            horizon: base.horizon,
        },
        nodes,
    )
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent, deterministic RNG stream for worker `w` of run `r`.
fn worker_seed(rng_seed: u64, run: u32, worker: u32) -> u64 {
    splitmix64(splitmix64(rng_seed ^ (run as u64)) ^ (((worker as u64) << 32) | 0x5EED))
}

struct WorkerOutcome {
    best: Option<(Score, Assignment)>,
    permutations: u64,
    nodes: u64,
}

fn run_worker(
    incumbent: &Assignment,
    ctx: &PlanningContext,
    params: &SearchParams,
    run: u32,
    worker: u32,
) -> WorkerOutcome {
    let mut rng = ChaCha8Rng::seed_from_u64(worker_seed(params.rng_seed, run, worker));
    let mut best: Option<(Score, Assignment)> = None;
    let mut nodes = 0u64;
    for _ in 0..params.num_permutations {
        let perm = generate_permutation(ctx.agents, &mut rng);
        let (candidate, n) = reassign(incumbent, &perm, ctx);
        nodes += n;
        let s = score(&candidate, ctx.agents, params.exponent, ctx.horizon);
        let better = match &best {
            None => true,
            Some((bs, _)) => compare(&s, bs) == Ordering::Greater,
        };
        if better {
            best = Some((s, candidate));
        }
    }
    WorkerOutcome {
        best,
        permutations: params.num_permutations as u64,
        nodes,
    }
}

/// Runs up to `max_runs` rounds of `num_threads x num_permutations`
/// reassignments, keeping the best-scoring assignment. A run that fails to
/// improve the incumbent stops the search. The result never scores worse
/// than `base`, and identical seeds yield identical results regardless of
/// physical thread scheduling: each worker draws from its own seeded stream
/// and the merge breaks ties by worker index, then permutation index.
pub fn search(
    base: &Assignment,
    params: &SearchParams,
    ctx: &PlanningContext,
) -> (Assignment, SearchStats) {
    let mut stats = SearchStats::default();
    let mut incumbent = base.clone();
    let mut incumbent_score = score(&incumbent, ctx.agents, params.exponent, ctx.horizon);
    for run in 0..params.max_runs {
        stats.runs_executed += 1;
        let outcomes: Vec<WorkerOutcome> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..params.num_threads)
                .map(|w| {
                    let incumbent = &incumbent;
                    scope.spawn(move || run_worker(incumbent, ctx, params, run, w))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("search worker panicked"))
                .collect()
        });
        let mut run_best: Option<(Score, Assignment)> = None;
        for outcome in outcomes {
            stats.permutations_evaluated += outcome.permutations;
            stats.nodes_expanded += outcome.nodes;
            if let Some((s, asg)) = outcome.best {
                let better = match &run_best {
                    None => true,
                    Some((bs, _)) => compare(&s, bs) == Ordering::Greater,
                };
                if better {
                    run_best = Some((s, asg));
                }
            }
        }
        match run_best {
            Some((s, asg)) if compare(&s, &incumbent_score) == Ordering::Greater => {
                incumbent = asg;
                incumbent_score = s;
                stats.improvements += 1;
            }
            _ => break,
        }
    }
    (incumbent, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rail_network::{heuristics_for_targets, load_map};
    use crate::schedule::validate_assignment;
    use crate::Direction;

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

    fn fresh_runtime(n: usize) -> Vec<RuntimeSlice> {
        vec![RuntimeSlice::fresh(); n]
    }

    #[test]
    fn single_speed_group_is_uniform_shuffle() {
        let agents = [agent(0, 0, 3, 1), agent(1, 0, 3, 1), agent(2, 0, 3, 1)];
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts: HashMap<Vec<AgentId>, u32> = HashMap::new();
        let draws = 12_000;
        for _ in 0..draws {
            *counts
                .entry(generate_permutation(&agents, &mut rng))
                .or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        for (_, c) in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 1.0 / 6.0).abs() < 0.02, "frequency {freq}");
        }
    }

    #[test]
    fn slow_agents_always_last() {
        let agents = [agent(0, 0, 3, 1), agent(1, 0, 3, 1), agent(2, 0, 3, 2)];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let perm = generate_permutation(&agents, &mut rng);
            assert_eq!(perm[2], 2);
        }
    }

    #[test]
    fn single_agent_reassign_equals_plan_on_empty_table() {
        let net = line4();
        let agents = [agent(0, 0, 3, 1)];
        let heuristics = heuristics_for_targets(&net, agents.iter().map(|a| a.target_cell));
        let runtime = fresh_runtime(1);
        let ctx = PlanningContext {
            net: &net,
            agents: &agents,
            heuristics: &heuristics,
            runtime: &runtime,
            policy: OverlapPolicy::Strict,
            horizon: 64,
        };
        let base = Assignment::all_never(1, 64);
        let (asg, _) = reassign(&base, &[0], &ctx);
        assert_eq!(asg.paths[0].arrival_tick(3), Some(4));
        assert!(validate_assignment(&net, &agents, &asg).is_empty());
    }

    #[test]
    fn shared_corridor_both_orders_valid() {
        // both agents must traverse the whole line eastward
        let net = line4();
        let agents = [agent(0, 0, 3, 1), agent(1, 0, 3, 1)];
        let heuristics = heuristics_for_targets(&net, agents.iter().map(|a| a.target_cell));
        let runtime = fresh_runtime(2);
        let ctx = PlanningContext {
            net: &net,
            agents: &agents,
            heuristics: &heuristics,
            runtime: &runtime,
            policy: OverlapPolicy::Strict,
            horizon: 64,
        };
        let base = Assignment::all_never(2, 64);
        for perm in [[0, 1], [1, 0]] {
            let (asg, _) = reassign(&base, &perm, &ctx);
            assert!(validate_assignment(&net, &agents, &asg).is_empty());
            assert_eq!(
                score(&asg, &agents, 1.0, 64).finished,
                2,
                "perm {perm:?} should route both"
            );
        }
    }

    #[test]
    fn search_is_deterministic_and_never_worse() {
        let net = line4();
        let agents = [agent(0, 0, 3, 1), agent(1, 0, 3, 1), agent(2, 2, 0, 1)];
        let heuristics = heuristics_for_targets(&net, agents.iter().map(|a| a.target_cell));
        let runtime = fresh_runtime(3);
        let ctx = PlanningContext {
            net: &net,
            agents: &agents,
            heuristics: &heuristics,
            runtime: &runtime,
            policy: OverlapPolicy::Strict,
            horizon: 96,
        };
        let base = Assignment::all_never(3, 96);
        let params = SearchParams {
            max_runs: 3,
            num_threads: 3,
            num_permutations: 4,
            exponent: 1.0,
            rng_seed: 99,
        };
        let (a1, s1) = search(&base, &params, &ctx);
        let (a2, s2) = search(&base, &params, &ctx);
        assert_eq!(a1, a2);
        assert_eq!(s1, s2);
        let base_score = score(&base, ctx.agents, 1.0, 96);
        let got = score(&a1, ctx.agents, 1.0, 96);
        assert_ne!(compare(&got, &base_score), Ordering::Less);
        assert!(validate_assignment(&net, &agents, &a1).is_empty());
    }

    #[test]
    fn early_stop_skips_remaining_runs() {
        // a single-agent instance is solved optimally in run 0; run 1 cannot
        // improve it, so runs 2.. are never started
        let net = line4();
        let agents = [agent(0, 0, 3, 1)];
        let heuristics = heuristics_for_targets(&net, agents.iter().map(|a| a.target_cell));
        let runtime = fresh_runtime(1);
        let ctx = PlanningContext {
            net: &net,
            agents: &agents,
            heuristics: &heuristics,
            runtime: &runtime,
            policy: OverlapPolicy::Strict,
            horizon: 64,
        };
        let base = Assignment::all_never(1, 64);
        let params = SearchParams {
            max_runs: 10,
            num_threads: 2,
            num_permutations: 2,
            exponent: 1.0,
            rng_seed: 5,
        };
        let (_, stats) = search(&base, &params, &ctx);
        assert_eq!(stats.runs_executed, 2);
        assert_eq!(stats.permutations_evaluated, 2 * 2 * 2);
        assert_eq!(stats.improvements, 1);
    }
}
