//! Core finite-MDP data model and Bellman operators.

use ndarray::{Array1, Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for probability rows summing to one.
pub const PROB_TOL: f64 = 1e-12;

/// Probabilities above this threshold count as support.
pub const SUPPORT_TOL: f64 = 1e-15;

/// Whether an operator evaluates a fixed policy or optimizes over actions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pe,
    Control,
}

/// A finite discounted MDP with dense transition and expected-reward tables.
///
/// `transition` is indexed `(state, action, next_state)` and `reward` is the
/// expected reward `r(x, a)`. Immutable after construction.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularMdp {
    transition: Array3<f64>,
    reward: Array2<f64>,
    discount: f64,
}

pub(crate) fn validate_kernel(transition: &Array3<f64>) -> Result<()> {
    for ((x, a), row) in transition
        .outer_iter()
        .enumerate()
        .flat_map(|(x, per_state)| {
            per_state
                .outer_iter()
                .enumerate()
                .map(move |(a, row)| ((x, a), row.to_owned()))
                .collect::<Vec<_>>()
        })
    {
        let mut sum = 0.0;
        for &p in row.iter() {
            if !(0.0..=1.0 + PROB_TOL).contains(&p) {
                return Err(Error::invalid(format!(
                    "transition({x},{a},*) has probability {p} outside [0,1]"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > PROB_TOL {
            return Err(Error::invalid(format!(
                "transition({x},{a},*) sums to {sum}, expected 1"
            )));
        }
    }
    Ok(())
}

impl TabularMdp {
    pub fn new(transition: Array3<f64>, reward: Array2<f64>, discount: f64) -> Result<Self> {
        let (s, a, s2) = transition.dim();
        if s == 0 || a == 0 {
            return Err(Error::invalid("MDP needs at least one state and action"));
        }
        if s != s2 {
            return Err(Error::dims(format!(
                "transition tensor is ({s},{a},{s2}); first and last axes must match"
            )));
        }
        if reward.dim() != (s, a) {
            return Err(Error::dims(format!(
                "reward table is {:?}, expected ({s},{a})",
                reward.dim()
            )));
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::invalid(format!(
                "discount must lie in [0,1), got {discount}"
            )));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::invalid("reward table has non-finite entries"));
        }
        validate_kernel(&transition)?;
        Ok(TabularMdp {
            transition,
            reward,
            discount,
        })
    }

    pub fn n_states(&self) -> usize {
        self.transition.dim().0
    }

    pub fn n_actions(&self) -> usize {
        self.transition.dim().1
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn transition(&self) -> &Array3<f64> {
        &self.transition
    }

    pub fn reward(&self) -> &Array2<f64> {
        &self.reward
    }

    pub fn transition_row(&self, state: usize, action: usize) -> ArrayView1<'_, f64> {
        self.transition.slice(ndarray::s![state, action, ..])
    }

    /// Same states, rewards, and discount over a different kernel.
    pub fn with_transition(&self, transition: Array3<f64>) -> Result<Self> {
        TabularMdp::new(transition, self.reward.clone(), self.discount)
    }

    /// Same kernel and discount with a replaced reward table.
    pub fn with_reward(&self, reward: Array2<f64>) -> Result<Self> {
        TabularMdp::new(self.transition.clone(), reward, self.discount)
    }

    pub fn from_json_reader<R: std::io::Read>(reader: R) -> Result<Self> {
        let raw: MdpFile =
            serde_json::from_reader(reader).map_err(|e| Error::Parse(e.to_string()))?;
        raw.into_mdp()
    }

    pub fn from_json_file(path: &std::path::Path) -> Result<Self> {
        Self::from_json_reader(std::io::BufReader::new(std::fs::File::open(path)?))
    }

    pub fn to_json_writer<W: std::io::Write>(&self, writer: W) -> Result<()> {
        serde_json::to_writer_pretty(writer, &MdpFile::from_mdp(self))
            .map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn to_json_file(&self, path: &std::path::Path) -> Result<()> {
        self.to_json_writer(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

/// On-disk MDP document: probabilities are validated on load.
#[derive(Serialize, Deserialize)]
struct MdpFile {
    n_states: usize,
    n_actions: usize,
    discount: f64,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
}

impl MdpFile {
    fn from_mdp(mdp: &TabularMdp) -> Self {
        let (s, a, _) = mdp.transition.dim();
        MdpFile {
            n_states: s,
            n_actions: a,
            discount: mdp.discount,
            transition: (0..s)
                .map(|x| {
                    (0..a)
                        .map(|act| mdp.transition_row(x, act).to_vec())
                        .collect()
                })
                .collect(),
            reward: (0..s)
                .map(|x| (0..a).map(|act| mdp.reward[[x, act]]).collect())
                .collect(),
        }
    }

    fn into_mdp(self) -> Result<TabularMdp> {
        let (s, a) = (self.n_states, self.n_actions);
        let mut transition = Array3::zeros((s, a, s));
        if self.transition.len() != s {
            return Err(Error::dims("transition outer length != n_states"));
        }
        for (x, per_state) in self.transition.iter().enumerate() {
            if per_state.len() != a {
                return Err(Error::dims(format!("transition[{x}] length != n_actions")));
            }
            for (act, row) in per_state.iter().enumerate() {
                if row.len() != s {
                    return Err(Error::dims(format!(
                        "transition[{x}][{act}] length != n_states"
                    )));
                }
                for (y, &p) in row.iter().enumerate() {
                    transition[[x, act, y]] = p;
                }
            }
        }
        if self.reward.len() != s || self.reward.iter().any(|r| r.len() != a) {
            return Err(Error::dims("reward table shape mismatch"));
        }
        let mut reward = Array2::zeros((s, a));
        for (x, row) in self.reward.iter().enumerate() {
            for (act, &r) in row.iter().enumerate() {
                reward[[x, act]] = r;
            }
        }
        TabularMdp::new(transition, reward, self.discount)
    }
}

/// A stationary Markov policy, either deterministic or stochastic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Policy {
    /// `action_of[x]` is the action taken in state `x`.
    Deterministic(Vec<usize>),
    /// Row `x` holds the action distribution at state `x`.
    Stochastic(Array2<f64>),
}

impl Policy {
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Policy::Stochastic(Array2::from_elem(
            (n_states, n_actions),
            1.0 / n_actions as f64,
        ))
    }

    pub fn n_states(&self) -> usize {
        match self {
            Policy::Deterministic(actions) => actions.len(),
            Policy::Stochastic(probs) => probs.nrows(),
        }
    }

    pub fn validate(&self, mdp: &TabularMdp) -> Result<()> {
        match self {
            Policy::Deterministic(actions) => {
                if actions.len() != mdp.n_states() {
                    return Err(Error::dims(format!(
                        "policy covers {} states, MDP has {}",
                        actions.len(),
                        mdp.n_states()
                    )));
                }
                if let Some(&bad) = actions.iter().find(|&&a| a >= mdp.n_actions()) {
                    return Err(Error::invalid(format!(
                        "policy picks action {bad}, MDP has {} actions",
                        mdp.n_actions()
                    )));
                }
            }
            Policy::Stochastic(probs) => {
                if probs.dim() != (mdp.n_states(), mdp.n_actions()) {
                    return Err(Error::dims(format!(
                        "policy table is {:?}, expected ({}, {})",
                        probs.dim(),
                        mdp.n_states(),
                        mdp.n_actions()
                    )));
                }
                for (x, row) in probs.outer_iter().enumerate() {
                    let sum: f64 = row.iter().sum();
                    if row.iter().any(|&p| p < 0.0) || (sum - 1.0).abs() > PROB_TOL {
                        return Err(Error::invalid(format!(
                            "policy row {x} is not a distribution (sum {sum})"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Probability of taking `action` in `state`.
    pub fn prob(&self, state: usize, action: usize) -> f64 {
        match self {
            Policy::Deterministic(actions) => {
                if actions[state] == action {
                    1.0
                } else {
                    0.0
                }
            }
            Policy::Stochastic(probs) => probs[[state, action]],
        }
    }
}

/// A state-indexed value table (V) or state-action table (Q).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ValueFunction {
    State(Array1<f64>),
    StateAction(Array2<f64>),
}

impl ValueFunction {
    pub fn zeros_state(n_states: usize) -> Self {
        ValueFunction::State(Array1::zeros(n_states))
    }

    pub fn zeros_state_action(n_states: usize, n_actions: usize) -> Self {
        ValueFunction::StateAction(Array2::zeros((n_states, n_actions)))
    }

    pub fn as_state(&self) -> Option<&Array1<f64>> {
        match self {
            ValueFunction::State(v) => Some(v),
            ValueFunction::StateAction(_) => None,
        }
    }

    pub fn as_state_action(&self) -> Option<&Array2<f64>> {
        match self {
            ValueFunction::State(_) => None,
            ValueFunction::StateAction(q) => Some(q),
        }
    }
}

/// Policy-induced kernel `P^pi` together with the induced reward `r^pi`.
#[derive(Clone, Debug, PartialEq)]
pub struct InducedKernel {
    pub matrix: Array2<f64>,
    pub reward: Array1<f64>,
}

/// `P^pi(x'|x) = sum_a pi(a|x) P(x'|x,a)` and `r^pi(x) = sum_a pi(a|x) r(x,a)`.
pub fn induce_kernel(mdp: &TabularMdp, policy: &Policy) -> Result<InducedKernel> {
    policy.validate(mdp)?;
    let n = mdp.n_states();
    let mut matrix = Array2::zeros((n, n));
    let mut reward = Array1::zeros(n);
    match policy {
        Policy::Deterministic(actions) => {
            for (x, &a) in actions.iter().enumerate() {
                matrix.row_mut(x).assign(&mdp.transition_row(x, a));
                reward[x] = mdp.reward[[x, a]];
            }
        }
        Policy::Stochastic(probs) => {
            for x in 0..n {
                for a in 0..mdp.n_actions() {
                    let p = probs[[x, a]];
                    if p == 0.0 {
                        continue;
                    }
                    let row = mdp.transition_row(x, a);
                    for y in 0..n {
                        matrix[[x, y]] += p * row[y];
                    }
                    reward[x] += p * mdp.reward[[x, a]];
                }
            }
        }
    }
    Ok(InducedKernel { matrix, reward })
}

fn check_state_value(mdp: &TabularMdp, v: &Array1<f64>) -> Result<()> {
    if v.len() != mdp.n_states() {
        return Err(Error::dims(format!(
            "value has length {}, MDP has {} states",
            v.len(),
            mdp.n_states()
        )));
    }
    Ok(())
}

/// One-step lookahead value `r(x,a) + gamma * sum_y P(y|x,a) V(y)`.
#[inline]
pub fn q_value(mdp: &TabularMdp, state: usize, action: usize, v: &Array1<f64>) -> f64 {
    let row = mdp.transition_row(state, action);
    let mut acc = 0.0;
    for (y, &p) in row.iter().enumerate() {
        acc += p * v[y];
    }
    mdp.reward[[state, action]] + mdp.discount * acc
}

/// Applies the policy Bellman operator: `T^pi v = r^pi + gamma P^pi v`.
pub fn bellman_pe(mdp: &TabularMdp, policy: &Policy, v: &Array1<f64>) -> Result<Array1<f64>> {
    policy.validate(mdp)?;
    check_state_value(mdp, v)?;
    let n = mdp.n_states();
    let mut out = Array1::zeros(n);
    match policy {
        Policy::Deterministic(actions) => {
            for x in 0..n {
                out[x] = q_value(mdp, x, actions[x], v);
            }
        }
        Policy::Stochastic(probs) => {
            for x in 0..n {
                let mut acc = 0.0;
                for a in 0..mdp.n_actions() {
                    let p = probs[[x, a]];
                    if p != 0.0 {
                        acc += p * q_value(mdp, x, a, v);
                    }
                }
                out[x] = acc;
            }
        }
    }
    Ok(out)
}

/// Applies the Bellman optimality operator and returns the greedy policy.
///
/// Ties in the argmax are broken toward the lowest action index, so
/// `bellman_control(mdp, v).0 == bellman_pe(mdp, &greedy, v)` holds exactly.
pub fn bellman_control(mdp: &TabularMdp, v: &Array1<f64>) -> Result<(Array1<f64>, Policy)> {
    check_state_value(mdp, v)?;
    let n = mdp.n_states();
    let mut out = Array1::zeros(n);
    let mut actions = vec![0usize; n];
    for x in 0..n {
        let mut best = q_value(mdp, x, 0, v);
        let mut best_a = 0;
        for a in 1..mdp.n_actions() {
            let q = q_value(mdp, x, a, v);
            if q > best {
                best = q;
                best_a = a;
            }
        }
        out[x] = best;
        actions[x] = best_a;
    }
    Ok((out, Policy::Deterministic(actions)))
}

/// Greedy policy with lowest-index tie-breaking.
pub fn greedy_policy(mdp: &TabularMdp, v: &Array1<f64>) -> Result<Policy> {
    Ok(bellman_control(mdp, v)?.1)
}
