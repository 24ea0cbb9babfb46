//! Deterministic 2-D point-mass mazes and scripted data generators.
//!
//! Coordinates are continuous with unit-sized grid cells: `x` runs along
//! columns and `y` along rows, so the point `(x, y)` lies in cell
//! `grid[floor(y)][floor(x)]`. Cells holding `1` are walls and everything
//! outside the grid is blocked.

use std::collections::VecDeque;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Source, Trajectory};
use crate::error::{Result, SbrError};

/// Gap kept between a clamped position and the wall it ran into.
const WALL_MARGIN: f64 = 1e-6;
/// Spacing of the line-of-sight probe used by the scripted expert.
const SIGHT_STEP: f64 = 0.01;
/// Path cells the expert looks ahead when picking a waypoint.
const LOOKAHEAD: usize = 3;
/// Wall clearance the expert keeps when cutting towards a waypoint.
const CLEARANCE: f64 = 0.3;

fn default_noise_step() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointMazeSpec {
    #[serde(default)]
    pub name: String,
    /// Row-major cells, `1` for walls.
    pub grid: Vec<Vec<u8>>,
    /// Centre of the start disc.
    pub start: [f64; 2],
    #[serde(default)]
    pub start_radius: f64,
    pub goal: [f64; 2],
    pub tol: f64,
    pub dt: f64,
    pub horizon: usize,
    /// Extra observation channels driven by an independent random walk.
    #[serde(default)]
    pub noise_dims: usize,
    /// Standard deviation of one random-walk increment.
    #[serde(default = "default_noise_step")]
    pub noise_step: f64,
}

pub const ACTION_DIM: usize = 2;

impl PointMazeSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: PointMazeSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        PointMazeSpec::from_json(&std::fs::read_to_string(path)?)
    }

    /// A shipped layout by name: `open`, `umaze` or `smaze`.
    pub fn builtin(name: &str) -> Result<Self> {
        let text = match name {
            "open" => include_str!("../layouts/open.json"),
            "umaze" => include_str!("../layouts/umaze.json"),
            "smaze" => include_str!("../layouts/smaze.json"),
            other => return Err(SbrError::Config(format!("unknown layout '{other}'"))),
        };
        PointMazeSpec::from_json(text)
    }

    pub fn builtin_names() -> &'static [&'static str] {
        &["open", "umaze", "smaze"]
    }

    pub fn with_noise_dims(mut self, n: usize) -> Self {
        self.noise_dims = n;
        self
    }

    pub fn rows(&self) -> usize {
        self.grid.len()
    }

    pub fn cols(&self) -> usize {
        self.grid.first().map(Vec::len).unwrap_or(0)
    }

    pub fn obs_dim(&self) -> usize {
        2 + self.noise_dims
    }

    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        if !(p[0] >= 0.0 && p[1] >= 0.0) {
            return None;
        }
        let (c, r) = (p[0].floor() as usize, p[1].floor() as usize);
        (r < self.rows() && c < self.cols()).then_some((r, c))
    }

    pub fn cell_free(&self, r: usize, c: usize) -> bool {
        r < self.rows() && c < self.cols() && self.grid[r][c] == 0
    }

    pub fn is_free(&self, p: [f64; 2]) -> bool {
        self.cell_of(p).is_some_and(|(r, c)| self.grid[r][c] == 0)
    }

    pub fn at_goal(&self, p: [f64; 2]) -> bool {
        dist(p, self.goal) <= self.tol
    }

    pub fn validate(&self) -> Result<()> {
        let cols = self.cols();
        if self.rows() == 0 || cols == 0 || self.grid.iter().any(|r| r.len() != cols) {
            return Err(SbrError::Config("maze grid must be a non-empty rectangle".into()));
        }
        if self.grid.iter().flatten().any(|&v| v > 1) {
            return Err(SbrError::Config("maze cells must be 0 or 1".into()));
        }
        if !(self.tol > 0.0) {
            return Err(SbrError::Config(format!("goal tolerance must be positive, got {}", self.tol)));
        }
        if !(self.dt > 0.0 && self.dt <= 0.5) {
            return Err(SbrError::Config(format!("dt must lie in (0, 0.5], got {}", self.dt)));
        }
        if self.horizon == 0 {
            return Err(SbrError::Config("horizon must be positive".into()));
        }
        if !(self.start_radius >= 0.0) || !(self.noise_step >= 0.0) {
            return Err(SbrError::Config("start_radius and noise_step must be non-negative".into()));
        }
        if !self.is_free(self.start) || !self.is_free(self.goal) {
            return Err(SbrError::Config("start and goal must lie in free cells".into()));
        }
        ScriptedExpert::new(self)?;
        Ok(())
    }

    /// Free cells in row-major order.
    pub fn free_cells(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (r, row) in self.grid.iter().enumerate() {
            for (c, &v) in row.iter().enumerate() {
                if v == 0 {
                    out.push((r, c));
                }
            }
        }
        out
    }
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[derive(Clone, Debug)]
pub struct EnvState {
    pub pos: [f64; 2],
    pub noise: Vec<f64>,
    pub t: usize,
    rng: ChaCha8Rng,
}

impl EnvState {
    pub fn observation(&self) -> Vec<f64> {
        let mut o = Vec::with_capacity(2 + self.noise.len());
        o.extend_from_slice(&self.pos);
        o.extend_from_slice(&self.noise);
        o
    }
}

/// Uniform point in the start disc, restricted to free space.
pub fn reset(spec: &PointMazeSpec, seed: u64) -> EnvState {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pos = spec.start;
    if spec.start_radius > 0.0 {
        for _ in 0..1000 {
            let r = spec.start_radius * rng.random::<f64>().sqrt();
            let th = rng.random::<f64>() * std::f64::consts::TAU;
            let p = [spec.start[0] + r * th.cos(), spec.start[1] + r * th.sin()];
            if spec.is_free(p) {
                pos = p;
                break;
            }
        }
    }
    let noise = (0..spec.noise_dims).map(|_| rng.random_range(-1.0..=1.0)).collect();
    EnvState { pos, noise, t: 0, rng }
}

fn move_axis(spec: &PointMazeSpec, pos: [f64; 2], axis: usize, delta: f64) -> [f64; 2] {
    let mut p = pos;
    p[axis] += delta;
    if spec.is_free(p) {
        return p;
    }
    // Steps are shorter than a cell, so at most one boundary is crossed.
    p[axis] = if delta > 0.0 {
        p[axis].floor() - WALL_MARGIN
    } else {
        p[axis].floor() + 1.0
    };
    if spec.is_free(p) {
        p
    } else {
        pos
    }
}

/// One transition; the action is clipped to `[-1, 1]^2`.
pub fn step(spec: &PointMazeSpec, state: &EnvState, action: &[f64]) -> Result<(EnvState, f64, bool)> {
    if action.len() != ACTION_DIM {
        return Err(SbrError::dim("maze action", ACTION_DIM, action.len()));
    }
    let a = [action[0].clamp(-1.0, 1.0), action[1].clamp(-1.0, 1.0)];
    let a = [if a[0].is_nan() { 0.0 } else { a[0] }, if a[1].is_nan() { 0.0 } else { a[1] }];
    let mut next = state.clone();
    next.pos = move_axis(spec, next.pos, 0, spec.dt * a[0]);
    next.pos = move_axis(spec, next.pos, 1, spec.dt * a[1]);
    for n in next.noise.iter_mut() {
        let z: f64 = StandardNormal.sample(&mut next.rng);
        *n = (*n + spec.noise_step * z).clamp(-1.0, 1.0);
    }
    next.t += 1;
    let reward = if spec.at_goal(next.pos) { 1.0 } else { 0.0 };
    let done = reward > 0.0 || next.t >= spec.horizon;
    Ok((next, reward, done))
}

/// Anything that maps an observation to an action.
pub trait Actor: Sync {
    fn act(&self, obs: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>>;
}

/// Uniform random actions in `[-1, 1]^2`.
#[derive(Clone, Copy, Debug, Default)]
pub struct RandomActor;

impl Actor for RandomActor {
    fn act(&self, _obs: &[f64], rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        Ok(vec![rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)])
    }
}

/// Waypoint follower on the BFS distance field of the grid.
#[derive(Clone, Debug)]
pub struct ScriptedExpert {
    spec: PointMazeSpec,
    goal: [f64; 2],
    goal_cell: (usize, usize),
    dist: Vec<Vec<Option<u32>>>,
}

impl ScriptedExpert {
    pub fn new(spec: &PointMazeSpec) -> Result<Self> {
        ScriptedExpert::toward(spec, spec.goal)
    }

    /// Expert steering to `goal` instead of the layout goal.
    pub fn toward(spec: &PointMazeSpec, goal: [f64; 2]) -> Result<Self> {
        let goal_cell = spec
            .cell_of(goal)
            .filter(|&(r, c)| spec.cell_free(r, c))
            .ok_or_else(|| SbrError::Planning(format!("goal {goal:?} is not in free space")))?;
        let mut dist = vec![vec![None; spec.cols()]; spec.rows()];
        let mut queue = VecDeque::from([goal_cell]);
        dist[goal_cell.0][goal_cell.1] = Some(0u32);
        while let Some((r, c)) = queue.pop_front() {
            let d = dist[r][c].unwrap();
            for (nr, nc) in neighbors(spec, r, c) {
                if dist[nr][nc].is_none() {
                    dist[nr][nc] = Some(d + 1);
                    queue.push_back((nr, nc));
                }
            }
        }
        let start_cell = spec.cell_of(spec.start).filter(|&(r, c)| spec.cell_free(r, c));
        if start_cell.is_none_or(|(r, c)| dist[r][c].is_none()) {
            return Err(SbrError::Planning(format!("goal {goal:?} is unreachable from the start")));
        }
        Ok(ScriptedExpert {
            spec: spec.clone(),
            goal,
            goal_cell,
            dist,
        })
    }

    pub fn goal(&self) -> [f64; 2] {
        self.goal
    }

    /// Grid distance to the goal cell, `None` when disconnected.
    pub fn cell_distance(&self, p: [f64; 2]) -> Option<u32> {
        let (r, c) = self.spec.cell_of(p)?;
        self.dist[r][c]
    }

    /// Free straight line from `a` to `b` that keeps [`CLEARANCE`] from walls
    /// once it is that far from `a`.
    fn sight(&self, a: [f64; 2], b: [f64; 2]) -> bool {
        let len = dist(a, b);
        let n = (len / SIGHT_STEP).ceil().max(1.0) as usize;
        let d = CLEARANCE * std::f64::consts::FRAC_1_SQRT_2;
        let offsets = [
            [CLEARANCE, 0.0],
            [-CLEARANCE, 0.0],
            [0.0, CLEARANCE],
            [0.0, -CLEARANCE],
            [d, d],
            [d, -d],
            [-d, d],
            [-d, -d],
        ];
        (0..=n).all(|i| {
            let u = i as f64 / n as f64;
            let q = [a[0] + u * (b[0] - a[0]), a[1] + u * (b[1] - a[1])];
            self.spec.is_free(q) && (u * len <= CLEARANCE || offsets.iter().all(|o| self.spec.is_free([q[0] + o[0], q[1] + o[1]])))
        })
    }

    /// Next waypoint for a position.
    pub fn waypoint(&self, p: [f64; 2]) -> Option<[f64; 2]> {
        let (mut r, mut c) = self.spec.cell_of(p)?;
        let mut d = self.dist[r][c]?;
        let mut path = Vec::with_capacity(LOOKAHEAD);
        while d > 0 && path.len() < LOOKAHEAD {
            let (nr, nc) = neighbors(&self.spec, r, c).find(|&(nr, nc)| self.dist[nr][nc] == Some(d - 1))?;
            (r, c, d) = (nr, nc, d - 1);
            path.push((r, c));
        }
        if path.is_empty() {
            return Some(self.goal);
        }
        let point = |cell: (usize, usize)| {
            if cell == self.goal_cell {
                self.goal
            } else {
                [cell.1 as f64 + 0.5, cell.0 as f64 + 0.5]
            }
        };
        let target = path.iter().rev().map(|&cell| point(cell)).find(|&q| self.sight(p, q));
        Some(target.unwrap_or_else(|| point(path[0])))
    }

    /// Unit-speed heading to the waypoint, slowing to land on the goal.
    pub fn action(&self, p: [f64; 2]) -> [f64; 2] {
        let Some(target) = self.waypoint(p) else {
            return [0.0, 0.0];
        };
        let v = [target[0] - p[0], target[1] - p[1]];
        let n = (v[0] * v[0] + v[1] * v[1]).sqrt();
        if n < 1e-12 {
            return [0.0, 0.0];
        }
        let speed = (n / self.spec.dt).min(1.0);
        [v[0] / n * speed, v[1] / n * speed]
    }
}

fn neighbors(spec: &PointMazeSpec, r: usize, c: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
    let cand = [
        (r.wrapping_sub(1), c),
        (r + 1, c),
        (r, c.wrapping_sub(1)),
        (r, c + 1),
    ];
    cand.into_iter().filter(move |&(nr, nc)| spec.cell_free(nr, nc))
}

impl Actor for ScriptedExpert {
    fn act(&self, obs: &[f64], _rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        if obs.len() < 2 {
            return Err(SbrError::dim("maze observation", self.spec.obs_dim(), obs.len()));
        }
        Ok(self.action([obs[0], obs[1]]).to_vec())
    }
}

/// Recorded episode.
#[derive(Clone, Debug, Default)]
pub struct Episode {
    pub observations: Vec<Vec<f64>>,
    pub actions: Vec<Vec<f64>>,
    pub rewards: Vec<f64>,
    pub success: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn total_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        let mut g = 1.0;
        let mut total = 0.0;
        for r in &self.rewards {
            total += g * r;
            g *= gamma;
        }
        total
    }
}

/// Runs `actor` from `state` until the episode ends or `max_steps` elapse.
pub fn rollout_from(
    spec: &PointMazeSpec,
    mut state: EnvState,
    actor: &dyn Actor,
    rng: &mut ChaCha8Rng,
    max_steps: usize,
) -> Result<Episode> {
    let mut ep = Episode {
        observations: vec![state.observation()],
        ..Episode::default()
    };
    for _ in 0..max_steps {
        let a = actor.act(&state.observation(), rng)?;
        let (next, r, done) = step(spec, &state, &a)?;
        ep.actions.push(a.iter().map(|v| v.clamp(-1.0, 1.0)).collect());
        ep.rewards.push(r);
        ep.observations.push(next.observation());
        state = next;
        if r > 0.0 {
            ep.success = true;
        }
        if done {
            break;
        }
    }
    Ok(ep)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeneratorKind {
    Expert,
    WrongGoal,
    RandomWalk,
    EarlyFailure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSpec {
    pub kind: GeneratorKind,
    pub count: usize,
    pub seed: u64,
    /// Fixed alternate goal for `wrong_goal`; drawn per trajectory when absent.
    #[serde(default)]
    pub alt_goal: Option<[f64; 2]>,
}

impl GeneratorSpec {
    pub fn new(kind: GeneratorKind, count: usize, seed: u64) -> Self {
        GeneratorSpec { kind, count, seed, alt_goal: None }
    }
}

/// Momentum random walk in action space.
struct RandomWalker {
    momentum: [f64; 2],
}

impl RandomWalker {
    fn next(&mut self, rng: &mut ChaCha8Rng) -> [f64; 2] {
        for m in self.momentum.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *m = (0.8 * *m + 0.6 * z).clamp(-1.0, 1.0);
        }
        self.momentum
    }
}

/// Random free point at least two cells from the layout goal.
fn random_alt_goal(spec: &PointMazeSpec, rng: &mut ChaCha8Rng) -> [f64; 2] {
    let cells: Vec<(usize, usize)> = spec
        .free_cells()
        .into_iter()
        .filter(|&(r, c)| dist([c as f64 + 0.5, r as f64 + 0.5], spec.goal) >= 2.0)
        .collect();
    if cells.is_empty() {
        return spec.goal;
    }
    let (r, c) = cells[rng.random_range(0..cells.len())];
    [c as f64 + rng.random_range(0.2..0.8), r as f64 + rng.random_range(0.2..0.8)]
}

fn episode_to_trajectory(id: u64, source: Source, ep: Episode) -> Result<Trajectory> {
    Trajectory::new(id, source, ep.observations, ep.actions)
}

fn generate_one(spec: &PointMazeSpec, gen: &GeneratorSpec, expert: &ScriptedExpert, seed: u64) -> Result<Episode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = reset(spec, rng.next_u64());
    let mut ep = Episode {
        observations: vec![state.observation()],
        ..Episode::default()
    };
    let mut walker = RandomWalker { momentum: [0.0, 0.0] };

    let alt = match gen.kind {
        GeneratorKind::WrongGoal => {
            let g = gen.alt_goal.unwrap_or_else(|| random_alt_goal(spec, &mut rng));
            Some(ScriptedExpert::toward(spec, g)?)
        }
        _ => None,
    };
    let switch_at = match gen.kind {
        GeneratorKind::EarlyFailure => {
            let full = rollout_from(spec, state.clone(), expert, &mut rng.clone(), spec.horizon)?;
            let frac = rng.random_range(0.3..=0.8);
            Some(((frac * full.len() as f64).floor() as usize).max(1))
        }
        _ => None,
    };

    for t in 0..spec.horizon {
        let a: [f64; 2] = match gen.kind {
            GeneratorKind::Expert => expert.action(state.pos),
            GeneratorKind::WrongGoal => alt.as_ref().unwrap().action(state.pos),
            GeneratorKind::RandomWalk => walker.next(&mut rng),
            GeneratorKind::EarlyFailure => {
                if t < switch_at.unwrap() {
                    expert.action(state.pos)
                } else {
                    walker.next(&mut rng)
                }
            }
        };
        let (next, r, done) = step(spec, &state, &a)?;
        ep.actions.push(a.to_vec());
        ep.rewards.push(r);
        ep.observations.push(next.observation());
        state = next;
        ep.success |= r > 0.0;
        let at_alt = alt.as_ref().is_some_and(|x| dist(state.pos, x.goal()) <= spec.tol);
        if done || at_alt {
            break;
        }
    }
    Ok(ep)
}

/// Runs the generators in order. Trajectory ids are assigned sequentially
/// from 0; `expert` generators feed the expert dataset and all others the
/// offline dataset.
pub fn generate_dataset(spec: &PointMazeSpec, generators: &[GeneratorSpec]) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let expert = ScriptedExpert::new(spec)?;
    let mut exp = Vec::new();
    let mut off = Vec::new();
    let mut next_id = 0u64;
    for gen in generators {
        let mut seeds = ChaCha8Rng::seed_from_u64(gen.seed);
        for _ in 0..gen.count {
            let ep = generate_one(spec, gen, &expert, seeds.next_u64())?;
            if gen.kind == GeneratorKind::Expert {
                if !ep.success {
                    log::warn!("expert trajectory {next_id} did not reach the goal within the horizon");
                }
                exp.push(episode_to_trajectory(next_id, Source::Expert, ep)?);
            } else {
                off.push(episode_to_trajectory(next_id, Source::Offline, ep)?);
            }
            next_id += 1;
        }
    }
    Ok((Dataset::new(exp)?, Dataset::new(off)?))
}

/// Mean returns of uniform random actions and of the scripted expert,
/// the endpoints of the normalized score.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceReturns {
    pub random_return: f64,
    pub expert_return: f64,
    pub random_disc_return: f64,
    pub expert_disc_return: f64,
    pub random_success: f64,
    pub expert_success: f64,
}

impl ReferenceReturns {
    pub fn normalized_score(&self, policy_return: f64) -> Result<f64> {
        crate::policy::normalized_score(policy_return, self.random_return, self.expert_return)
    }
}

pub fn reference_returns(spec: &PointMazeSpec, eval: &crate::policy::EvalConfig) -> Result<ReferenceReturns> {
    let random = crate::policy::evaluate(&RandomActor, spec, eval)?;
    let expert = crate::policy::evaluate(&ScriptedExpert::new(spec)?, spec, eval)?;
    Ok(ReferenceReturns {
        random_return: random.mean_return,
        expert_return: expert.mean_return,
        random_disc_return: random.mean_disc_return,
        expert_disc_return: expert.mean_disc_return,
        random_success: random.success_rate,
        expert_success: expert.success_rate,
    })
}
