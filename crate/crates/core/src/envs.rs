//! Benchmark environments: a modified cliffwalk, random Garnet MDPs, a small
//! maze, and the two-state visualization problem, plus transition sampling.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{InducedKernel, Policy, TabularMdp};
use crate::model::ModelPair;
use crate::solvers::solve_control_exact;

/// Action indices, fixed for reproducibility.
pub const UP: usize = 0;
pub const RIGHT: usize = 1;
pub const DOWN: usize = 2;
pub const LEFT: usize = 3;

const DELTAS: [(isize, isize); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

/// Grid-world parameters shared by the cliffwalk and the maze.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub start: (usize, usize),
    pub goal: (usize, usize),
    /// Absorbing cells with their per-step reward.
    pub holes: Vec<((usize, usize), f64)>,
    pub step_reward: f64,
    pub goal_reward: f64,
    /// Probability that the chosen direction is executed; the remaining mass
    /// splits evenly over the other three directions.
    pub action_success: f64,
    pub discount: f64,
}

impl GridSpec {
    fn cell_index(&self, cell: (usize, usize)) -> usize {
        cell.0 * self.width + cell.1
    }

    fn validate(&self) -> Result<()> {
        let in_range = |c: (usize, usize)| c.0 < self.height && c.1 < self.width;
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("grid must be non-empty"));
        }
        if !in_range(self.start) || !in_range(self.goal) {
            return Err(Error::invalid("start or goal outside the grid"));
        }
        if let Some(&(c, _)) = self.holes.iter().find(|&&(c, _)| !in_range(c)) {
            return Err(Error::invalid(format!("hole {c:?} outside the grid")));
        }
        if !(0.0..=1.0).contains(&self.action_success) {
            return Err(Error::invalid("action_success must lie in [0,1]"));
        }
        Ok(())
    }
}

fn adjacent(a: (usize, usize), b: (usize, usize)) -> bool {
    let dr = a.0.abs_diff(b.0);
    let dc = a.1.abs_diff(b.1);
    dr + dc == 1
}

/// Builds the grid MDP. Holes and the goal are absorbing self-loops; moves
/// off the grid or into a wall stay in place, with the motion noise applied
/// before wall clipping.
pub fn build_grid(
    spec: &GridSpec,
    walls: &[((usize, usize), (usize, usize))],
) -> Result<TabularMdp> {
    spec.validate()?;
    for &(a, b) in walls {
        if !adjacent(a, b) {
            return Err(Error::invalid(format!(
                "wall between non-adjacent cells {a:?} and {b:?}"
            )));
        }
    }
    let n = spec.width * spec.height;
    let goal = spec.cell_index(spec.goal);
    let mut hole_reward = vec![None; n];
    for &(cell, reward) in &spec.holes {
        hole_reward[spec.cell_index(cell)] = Some(reward);
    }
    let blocked = |a: (usize, usize), b: (usize, usize)| {
        walls.iter().any(|&(w1, w2)| (w1, w2) == (a, b) || (w1, w2) == (b, a))
    };

    let mut transition = Array3::zeros((n, 4, n));
    let mut reward = Array2::from_elem((n, 4), spec.step_reward);
    for r in 0..spec.height {
        for c in 0..spec.width {
            let x = spec.cell_index((r, c));
            if let Some(hr) = hole_reward[x] {
                for a in 0..4 {
                    transition[[x, a, x]] = 1.0;
                    reward[[x, a]] = hr;
                }
                continue;
            }
            if x == goal {
                for a in 0..4 {
                    transition[[x, a, x]] = 1.0;
                    reward[[x, a]] = spec.goal_reward;
                }
                continue;
            }
            for a in 0..4 {
                for d in 0..4 {
                    let mass = if d == a {
                        spec.action_success
                    } else {
                        (1.0 - spec.action_success) / 3.0
                    };
                    let nr = r as isize + DELTAS[d].0;
                    let nc = c as isize + DELTAS[d].1;
                    let target = if nr < 0
                        || nc < 0
                        || nr >= spec.height as isize
                        || nc >= spec.width as isize
                        || blocked((r, c), (nr as usize, nc as usize))
                    {
                        x
                    } else {
                        spec.cell_index((nr as usize, nc as usize))
                    };
                    transition[[x, a, target]] += mass;
                }
            }
        }
    }
    TabularMdp::new(transition, reward, spec.discount)
}

/// The modified cliffwalk: a 6x6 grid, goal in the top-right corner worth
/// +20, absorbing holes in the middle four cells of rows one, three, and
/// five (from the top) worth -32, -16, -8 per step, -1 elsewhere, 90% action
/// success, discount 0.9.
pub fn cliffwalk_spec() -> GridSpec {
    let mut holes = Vec::new();
    for (row, reward) in [(0usize, -32.0), (2, -16.0), (4, -8.0)] {
        for col in 1..=4 {
            holes.push(((row, col), reward));
        }
    }
    GridSpec {
        width: 6,
        height: 6,
        start: (0, 0),
        goal: (0, 5),
        holes,
        step_reward: -1.0,
        goal_reward: 20.0,
        action_success: 0.9,
        discount: 0.9,
    }
}

/// State index of the cliffwalk start cell.
pub const CLIFFWALK_START: usize = 0;

/// Builds the cliffwalk and its canonical evaluation policy (the exact
/// optimal policy, which policy-evaluation experiments evaluate).
pub fn build_cliffwalk() -> (TabularMdp, Policy) {
    let mdp = build_grid(&cliffwalk_spec(), &[]).expect("cliffwalk spec is valid");
    let (_, policy) = solve_control_exact(&mdp).expect("cliffwalk control solve");
    (mdp, policy)
}

/// Default maze wall layout: two walls forcing a detour around the top row.
/// The exact layout is configurable; anything connected works for the
/// shipped experiments.
pub const DEFAULT_MAZE_WALLS: [((usize, usize), (usize, usize)); 2] =
    [((0, 1), (0, 2)), ((1, 1), (1, 2))];

/// State index of the maze start cell.
pub const MAZE_START: usize = 0;

/// A 3x3 maze with a +1 absorbing goal in the top-right corner, 90% action
/// success, discount 0.9, and walls between the given adjacent cell pairs
/// (`None` selects the default layout). Also returns the optimal policy.
pub fn build_maze(
    walls: Option<&[((usize, usize), (usize, usize))]>,
) -> Result<(TabularMdp, Policy)> {
    let spec = GridSpec {
        width: 3,
        height: 3,
        start: (0, 0),
        goal: (0, 2),
        holes: Vec::new(),
        step_reward: 0.0,
        goal_reward: 1.0,
        action_success: 0.9,
        discount: 0.9,
    };
    let mdp = build_grid(&spec, walls.unwrap_or(&DEFAULT_MAZE_WALLS))?;
    let (_, policy) = solve_control_exact(&mdp)?;
    Ok((mdp, policy))
}

/// Parameters of a random Garnet MDP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GarnetSpec {
    pub n_states: usize,
    pub n_actions: usize,
    /// Number of possible next states per state-action pair.
    pub branching: usize,
    /// Number of states carrying a nonzero reward.
    pub reward_states: usize,
    pub discount: f64,
    pub seed: u64,
}

impl Default for GarnetSpec {
    fn default() -> Self {
        GarnetSpec {
            n_states: 50,
            n_actions: 4,
            branching: 3,
            reward_states: 5,
            discount: 0.99,
            seed: 0,
        }
    }
}

/// Generates a Garnet instance: each `(x, a)` row has `branching` successors
/// drawn without replacement, with masses given by the gaps between
/// `branching - 1` sorted uniform cut points; rewards are state-dependent,
/// nonzero on `reward_states` states with values uniform in (0, 1).
pub fn build_garnet(spec: &GarnetSpec) -> Result<TabularMdp> {
    if spec.branching == 0 || spec.branching > spec.n_states {
        return Err(Error::invalid("branching must lie in 1..=n_states"));
    }
    if spec.reward_states > spec.n_states {
        return Err(Error::invalid("reward_states must be <= n_states"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_states;
    let mut transition = Array3::zeros((n, spec.n_actions, n));
    for x in 0..n {
        for a in 0..spec.n_actions {
            let successors = rand::seq::index::sample(&mut rng, n, spec.branching);
            let mut cuts: Vec<f64> = (0..spec.branching - 1).map(|_| rng.random()).collect();
            cuts.sort_by(|p, q| p.partial_cmp(q).unwrap());
            let mut prev = 0.0;
            for (i, y) in successors.iter().enumerate() {
                let next = if i + 1 == spec.branching { 1.0 } else { cuts[i] };
                transition[[x, a, y]] = next - prev;
                prev = next;
            }
        }
    }
    let mut reward = Array2::zeros((n, spec.n_actions));
    let rewarded = rand::seq::index::sample(&mut rng, n, spec.reward_states);
    for x in rewarded.iter() {
        let value: f64 = rng.random();
        for a in 0..spec.n_actions {
            reward[[x, a]] = value;
        }
    }
    TabularMdp::new(transition, reward, spec.discount)
}

/// The two-state policy-evaluation problem together with its accurate and
/// inaccurate approximate kernels. Modeled as a one-action MDP carrying the
/// induced kernel directly.
#[derive(Clone, Debug)]
pub struct TwoStateProblem {
    pub mdp: TabularMdp,
    pub policy: Policy,
    pub kernel: InducedKernel,
    pub accurate: ModelPair,
    pub inaccurate: ModelPair,
}

/// Kernel [[0.9, 0.1], [0.1, 0.9]], rewards (1, -0.5), discount 0.9;
/// accurate model [[0.85, 0.15], [0.05, 0.95]], inaccurate
/// [[0.6, 0.4], [0.3, 0.7]].
pub fn build_two_state() -> TwoStateProblem {
    let fill = |rows: [[f64; 2]; 2]| {
        let mut t = Array3::zeros((2, 1, 2));
        for x in 0..2 {
            for y in 0..2 {
                t[[x, 0, y]] = rows[x][y];
            }
        }
        t
    };
    let transition = fill([[0.9, 0.1], [0.1, 0.9]]);
    let reward = ndarray::array![[1.0], [-0.5]];
    let mdp = TabularMdp::new(transition, reward, 0.9).expect("two-state tables are valid");
    let policy = Policy::Deterministic(vec![0, 0]);
    let kernel = crate::mdp::induce_kernel(&mdp, &policy).expect("policy matches");
    let accurate = ModelPair::new(mdp.clone(), fill([[0.85, 0.15], [0.05, 0.95]]))
        .expect("accurate kernel is stochastic");
    let inaccurate = ModelPair::new(mdp.clone(), fill([[0.6, 0.4], [0.3, 0.7]]))
        .expect("inaccurate kernel is stochastic");
    TwoStateProblem {
        mdp,
        policy,
        kernel,
        accurate,
        inaccurate,
    }
}

/// Samples a transition from the true kernel. The reward is the expected
/// reward `r(x, a)`: the shipped environments have deterministic rewards.
pub fn sample_transition<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    state: usize,
    action: usize,
    rng: &mut R,
) -> Result<(f64, usize)> {
    if state >= mdp.n_states() || action >= mdp.n_actions() {
        return Err(Error::invalid(format!(
            "state-action ({state},{action}) out of range"
        )));
    }
    let row = mdp.transition_row(state, action);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut next = mdp.n_states() - 1;
    for (y, &p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            next = y;
            break;
        }
    }
    Ok((mdp.reward()[[state, action]], next))
}

/// Index of `cell` in a grid of the given width.
pub fn grid_index(width: usize, cell: (usize, usize)) -> usize {
    cell.0 * width + cell.1
}
