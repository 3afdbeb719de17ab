//! Tabular Q-learning over the index configuration grid.
//!
//! States pair a model choice (PRA, then PLA with error 32..256) with a
//! block size (4..32 KiB). Every `episode_every` new tables the engine hands
//! the agent the episode's mean lookup latency and mean index size; the
//! reward for that window is credited to the action taken at the previous
//! episode, then the next action is picked ε-greedily.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, StoreError};
use crate::model::{BuildConfig, IndexMethod};

pub const MODEL_AXIS: usize = 5;
pub const BLOCK_AXIS: usize = 4;
pub const STATE_COUNT: usize = MODEL_AXIS * BLOCK_AXIS;
pub const ACTION_COUNT: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QState {
    /// 0 is PRA; 1..=4 are PLA with error 32, 64, 128, 256.
    pub model: u8,
    /// 0..=3 for 4, 8, 16, 32 KiB.
    pub block: u8,
}

impl QState {
    pub fn new(model: u8, block: u8) -> Self {
        assert!((model as usize) < MODEL_AXIS && (block as usize) < BLOCK_AXIS);
        QState { model, block }
    }

    pub fn index(&self) -> usize {
        self.model as usize * BLOCK_AXIS + self.block as usize
    }

    pub fn from_index(i: usize) -> Self {
        QState::new((i / BLOCK_AXIS) as u8, (i % BLOCK_AXIS) as u8)
    }

    pub fn all() -> impl Iterator<Item = QState> {
        (0..STATE_COUNT).map(QState::from_index)
    }

    pub fn config(&self) -> BuildConfig {
        let block = BuildConfig::BLOCK_CHOICES[self.block as usize];
        match self.model {
            0 => BuildConfig::pra(block),
            m => BuildConfig::pla(BuildConfig::ERROR_CHOICES[m as usize - 1], block),
        }
    }

    /// The grid state of an on-grid config.
    pub fn from_config(config: &BuildConfig) -> Option<Self> {
        let block = BuildConfig::BLOCK_CHOICES.iter().position(|&b| b == config.max_block_bytes)? as u8;
        let model = match config.method {
            IndexMethod::Pra => 0,
            IndexMethod::Pla => BuildConfig::ERROR_CHOICES.iter().position(|&e| e == config.max_error)? as u8 + 1,
        };
        Some(QState { model, block })
    }

    pub fn label(&self) -> String {
        let model = match self.model {
            0 => "PRA".to_string(),
            m => format!("PLA{}", BuildConfig::ERROR_CHOICES[m as usize - 1]),
        };
        format!("{model}/{}K", BuildConfig::BLOCK_CHOICES[self.block as usize] / 1024)
    }
}

impl Default for QState {
    fn default() -> Self {
        QState { model: 2, block: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum QAction {
    ModelUp,
    ModelDown,
    BlockUp,
    BlockDown,
    Stay,
}

impl QAction {
    pub const ALL: [QAction; ACTION_COUNT] = [
        QAction::ModelUp,
        QAction::ModelDown,
        QAction::BlockUp,
        QAction::BlockDown,
        QAction::Stay,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// The state this action leads to, or `None` off the grid.
    pub fn apply(self, s: QState) -> Option<QState> {
        let (m, b) = (s.model as i32, s.block as i32);
        let (m, b) = match self {
            QAction::ModelUp => (m + 1, b),
            QAction::ModelDown => (m - 1, b),
            QAction::BlockUp => (m, b + 1),
            QAction::BlockDown => (m, b - 1),
            QAction::Stay => (m, b),
        };
        let on_grid = (0..MODEL_AXIS as i32).contains(&m) && (0..BLOCK_AXIS as i32).contains(&b);
        on_grid.then(|| QState::new(m as u8, b as u8))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon_init: f64,
    pub epsilon_min: f64,
    pub epsilon_decay: f64,
    /// Weight of latency against index size in the reward.
    pub nu: f64,
    /// New tables between episodes.
    pub episode_every: u32,
    /// Episodes per window compared by shift detection.
    pub shift_window: usize,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            alpha: 0.2,
            gamma: 0.8,
            epsilon_init: 0.99,
            epsilon_min: 0.02,
            epsilon_decay: 0.95,
            nu: 1.0,
            episode_every: 20,
            shift_window: 5,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let ok = unit(self.alpha)
            && self.alpha > 0.0
            && unit(self.gamma)
            && unit(self.epsilon_init)
            && unit(self.epsilon_min)
            && self.epsilon_min <= self.epsilon_init
            && unit(self.epsilon_decay)
            && unit(self.nu)
            && self.episode_every > 0
            && self.shift_window > 0;
        if ok {
            Ok(())
        } else {
            Err(StoreError::config(format!("agent parameters out of range: {self:?}")))
        }
    }
}

/// Sigmoid normalization against running (or fixed) moments.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    count: u64,
    mean: f64,
    m2: f64,
    fixed: Option<(f64, f64)>,
}

const SIGMA_FLOOR: f64 = 1e-9;

impl Normalizer {
    pub fn running() -> Self {
        Normalizer {
            count: 0,
            mean: 0.0,
            m2: 0.0,
            fixed: None,
        }
    }

    pub fn fixed(mean: f64, std_dev: f64) -> Self {
        Normalizer {
            fixed: Some((mean, std_dev)),
            ..Self::running()
        }
    }

    pub fn mean(&self) -> f64 {
        self.fixed.map_or(self.mean, |(m, _)| m)
    }

    pub fn std_dev(&self) -> f64 {
        match self.fixed {
            Some((_, s)) => s,
            None if self.count < 2 => 0.0,
            None => (self.m2 / (self.count - 1) as f64).sqrt(),
        }
    }

    /// `1 / (1 + exp(−(x − μ)/σ))`; 0.5 until two samples are seen.
    pub fn norm(&self, x: f64) -> f64 {
        if self.fixed.is_none() && self.count < 2 {
            return 0.5;
        }
        let sigma = self.std_dev().max(SIGMA_FLOOR);
        1.0 / (1.0 + (-(x - self.mean()) / sigma).exp())
    }

    pub fn observe(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }
}

/// `−ν·Norm(latency) − (1 − ν)·Norm(index size)`, then both samples join
/// their running moments.
pub fn reward(avg_latency: f64, avg_index_size: f64, nu: f64, lat: &mut Normalizer, idx: &mut Normalizer) -> f64 {
    let r = -nu * lat.norm(avg_latency) - (1.0 - nu) * idx.norm(avg_index_size);
    lat.observe(avg_latency);
    idx.observe(avg_index_size);
    r
}

/// Largest block axis index to explore, from `(block_bytes, load latency)`
/// samples: the first size whose latency growth ratio exceeds 2.5× the
/// preceding ratio, and every larger size, is cut off.
pub fn prune_block_axis(samples: &[(u64, f64)]) -> usize {
    let mut means = Vec::new();
    for &size in &BuildConfig::BLOCK_CHOICES {
        let vals: Vec<f64> = samples.iter().filter(|(s, _)| *s == size).map(|(_, l)| *l).collect();
        if vals.is_empty() {
            break;
        }
        means.push(vals.iter().sum::<f64>() / vals.len() as f64);
    }
    let ratios: Vec<f64> = means.windows(2).map(|w| w[1] / w[0].max(f64::MIN_POSITIVE)).collect();
    for i in 1..ratios.len() {
        if ratios[i] > 2.5 * ratios[i - 1] {
            // ratios[i] is the step into size i + 1.
            return i;
        }
    }
    BLOCK_AXIS - 1
}

/// True when the latest window's mean reward sits more than three standard
/// deviations below the previous window's mean.
pub fn detect_shift(rewards: &[f64], window: usize) -> bool {
    if window == 0 || rewards.len() < 2 * window {
        return false;
    }
    let latest = &rewards[rewards.len() - window..];
    let previous = &rewards[rewards.len() - 2 * window..rewards.len() - window];
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let pm = mean(previous);
    let var = previous.iter().map(|r| (r - pm).powi(2)).sum::<f64>() / (previous.len().max(2) - 1) as f64;
    mean(latest) < pm - 3.0 * var.sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QTable {
    values: Vec<[f64; ACTION_COUNT]>,
}

impl Default for QTable {
    fn default() -> Self {
        QTable {
            values: vec![[0.0; ACTION_COUNT]; STATE_COUNT],
        }
    }
}

impl QTable {
    pub fn get(&self, s: QState, a: QAction) -> f64 {
        self.values[s.index()][a.index()]
    }

    pub fn set(&mut self, s: QState, a: QAction, v: f64) {
        self.values[s.index()][a.index()] = v;
    }

    pub fn row(&self, s: QState) -> &[f64; ACTION_COUNT] {
        &self.values[s.index()]
    }
}

/// Outcome of one episode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub episode: u64,
    pub reward: f64,
    pub action: QAction,
    pub state: QState,
    pub config: BuildConfig,
    pub epsilon: f64,
    pub shift_detected: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Agent {
    config: AgentConfig,
    q: QTable,
    epsilon: f64,
    state: QState,
    previous: Option<(QState, QAction)>,
    /// Highest block axis index allowed after pruning.
    max_block: u8,
    latency_norm: Normalizer,
    index_norm: Normalizer,
    rewards: Vec<f64>,
    episodes: u64,
    trajectory: Vec<QState>,
    #[serde(skip, default = "default_rng")]
    rng: ChaCha8Rng,
}

fn default_rng() -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0)
}

impl Agent {
    pub fn new(config: AgentConfig) -> Result<Self> {
        Self::starting_at(config, QState::default())
    }

    pub fn starting_at(config: AgentConfig, state: QState) -> Result<Self> {
        config.validate()?;
        Ok(Agent {
            config,
            q: QTable::default(),
            epsilon: config.epsilon_init,
            state,
            previous: None,
            max_block: (BLOCK_AXIS - 1) as u8,
            latency_norm: Normalizer::running(),
            index_norm: Normalizer::running(),
            rewards: Vec::new(),
            episodes: 0,
            trajectory: vec![state],
            rng: ChaCha8Rng::seed_from_u64(config.seed),
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn q_table(&self) -> &QTable {
        &self.q
    }

    pub fn q_table_mut(&mut self) -> &mut QTable {
        &mut self.q
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn set_epsilon(&mut self, epsilon: f64) {
        self.epsilon = epsilon.clamp(0.0, 1.0);
    }

    pub fn state(&self) -> QState {
        self.state
    }

    pub fn build_config(&self) -> BuildConfig {
        self.state.config()
    }

    pub fn episodes(&self) -> u64 {
        self.episodes
    }

    pub fn trajectory(&self) -> &[QState] {
        &self.trajectory
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn max_block_axis(&self) -> u8 {
        self.max_block
    }

    pub fn is_masked(&self, s: QState) -> bool {
        s.block > self.max_block
    }

    /// Actions that stay on the grid and out of masked states.
    pub fn available_actions(&self, s: QState) -> Vec<QAction> {
        QAction::ALL
            .into_iter()
            .filter(|a| a.apply(s).is_some_and(|t| !self.is_masked(t)))
            .collect()
    }

    fn best_value(&self, s: QState) -> f64 {
        self.available_actions(s)
            .into_iter()
            .map(|a| self.q.get(s, a))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Highest-valued available action; ties go to `Stay`, then to the
    /// first in action order.
    pub fn greedy_action(&self, s: QState) -> QAction {
        let actions = self.available_actions(s);
        let best = self.best_value(s);
        if actions.contains(&QAction::Stay) && self.q.get(s, QAction::Stay) == best {
            return QAction::Stay;
        }
        *actions.iter().find(|&&a| self.q.get(s, a) == best).unwrap_or(&QAction::Stay)
    }

    /// `Q(s,a) ← (1−α)Q(s,a) + α(R + γ·max_a' Q(s',a'))`.
    pub fn update(&mut self, s: QState, a: QAction, reward: f64, next: QState) -> f64 {
        let target = reward + self.config.gamma * self.best_value(next);
        let v = (1.0 - self.config.alpha) * self.q.get(s, a) + self.config.alpha * target;
        self.q.set(s, a, v);
        v
    }

    /// Credits `reward` (observed in the current state) to the previous
    /// action, then moves ε-greedily.
    pub fn step(&mut self, reward: f64) -> Decision {
        let current = self.state;
        if let Some((s, a)) = self.previous {
            self.update(s, a, reward, current);
        }
        let actions = self.available_actions(current);
        let action = if self.rng.random::<f64>() < self.epsilon {
            actions[self.rng.random_range(0..actions.len())]
        } else {
            let best = self.best_value(current);
            let ties: Vec<QAction> = actions.iter().copied().filter(|&a| self.q.get(current, a) == best).collect();
            ties[self.rng.random_range(0..ties.len())]
        };
        let next = action.apply(current).expect("available actions stay on the grid");
        self.previous = Some((current, action));
        self.state = next;
        self.epsilon = (self.epsilon * self.config.epsilon_decay).max(self.config.epsilon_min);
        self.episodes += 1;
        self.trajectory.push(next);
        Decision {
            episode: self.episodes,
            reward,
            action,
            state: next,
            config: next.config(),
            epsilon: self.epsilon,
            shift_detected: false,
        }
    }

    /// One full episode from raw metrics: reward, shift check, step.
    ///
    /// On a detected shift ε returns to its initial value; the caller should
    /// re-measure block load latencies and call [`Agent::prune`] again.
    pub fn episode(&mut self, avg_latency: f64, avg_index_size: f64) -> Decision {
        let r = reward(
            avg_latency,
            avg_index_size,
            self.config.nu,
            &mut self.latency_norm,
            &mut self.index_norm,
        );
        self.rewards.push(r);
        let shift = detect_shift(&self.rewards, self.config.shift_window);
        if shift {
            self.epsilon = self.config.epsilon_init;
            // Windows before the shift no longer describe the workload.
            self.rewards.clear();
        }
        let mut d = self.step(r);
        d.shift_detected = shift;
        d
    }

    /// Masks block sizes past the latency knee; moves the agent down if its
    /// current state became masked.
    pub fn prune(&mut self, samples: &[(u64, f64)]) -> usize {
        let max = prune_block_axis(samples);
        self.max_block = max as u8;
        if self.state.block > self.max_block {
            self.state.block = self.max_block;
            self.previous = None;
        }
        max
    }

    /// The Q-table as CSV, one row per state.
    pub fn q_table_csv(&self) -> String {
        let mut out = String::from("state,label,method,max_error,block_bytes,masked,ModelUp,ModelDown,BlockUp,BlockDown,Stay\n");
        for s in QState::all() {
            let c = s.config();
            let method = match c.method {
                IndexMethod::Pla => "PLA",
                IndexMethod::Pra => "PRA",
            };
            let _ = write!(
                out,
                "{},{},{method},{},{},{}",
                s.index(),
                s.label(),
                c.max_error,
                c.max_block_bytes,
                self.is_masked(s)
            );
            for v in self.q.row(s) {
                let _ = write!(out, ",{v:.6}");
            }
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, serde_json::to_vec_pretty(self)?)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut agent: Agent = serde_json::from_slice(&std::fs::read(path)?)?;
        agent.config.validate()?;
        if agent.q.values.len() != STATE_COUNT || agent.q.values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(StoreError::config("agent Q-table is malformed"));
        }
        agent.rng = ChaCha8Rng::seed_from_u64(agent.config.seed ^ agent.episodes.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        Ok(agent)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_twenty_states() {
        assert_eq!(QState::all().count(), 20);
        for s in QState::all() {
            assert_eq!(QState::from_config(&s.config()), Some(s));
        }
        assert_eq!(QState::default().config(), BuildConfig::pla(64, 4096));
    }

    #[test]
    fn corner_states_lose_offgrid_actions() {
        let agent = Agent::new(AgentConfig::default()).unwrap();
        let acts = agent.available_actions(QState::new(0, 0));
        assert_eq!(acts, vec![QAction::ModelUp, QAction::BlockUp, QAction::Stay]);
        let acts = agent.available_actions(QState::new(4, 3));
        assert_eq!(acts, vec![QAction::ModelDown, QAction::BlockDown, QAction::Stay]);
    }

    #[test]
    fn q_update_by_hand() {
        let mut agent = Agent::new(AgentConfig::default()).unwrap();
        let s = QState::new(1, 1);
        assert!((agent.update(s, QAction::Stay, -0.5, s) - -0.1).abs() < 1e-15);
        // Second update bootstraps from the now-negative row; max is still 0.
        let v = agent.update(s, QAction::Stay, -0.5, s);
        assert!((v - (0.8 * -0.1 + 0.2 * -0.5)).abs() < 1e-15);
    }

    #[test]
    fn greedy_with_zero_epsilon() {
        let mut agent = Agent::new(AgentConfig::default()).unwrap();
        agent.set_epsilon(0.0);
        agent.config.epsilon_min = 0.0;
        let s = agent.state();
        for a in agent.available_actions(s) {
            agent.q_table_mut().set(s, a, -1.0);
        }
        agent.q_table_mut().set(s, QAction::BlockUp, 0.5);
        let d = agent.step(-0.3);
        assert_eq!(d.action, QAction::BlockUp);
        assert_eq!(d.state, QState::new(s.model, s.block + 1));
    }

    #[test]
    fn sigmoid_examples() {
        let mut lat = Normalizer::fixed(15.0, 5.0);
        let mut idx = Normalizer::running();
        let r1 = reward(10.0, 1e6, 1.0, &mut lat, &mut idx);
        let r2 = reward(20.0, 5.0, 1.0, &mut lat, &mut idx);
        assert!((r1 - -0.268_941_4).abs() < 1e-6);
        assert!((r2 - -0.731_058_6).abs() < 1e-6);
        assert_eq!(Normalizer::fixed(3.0, 1.0).norm(3.0), 0.5);
        assert_eq!(Normalizer::running().norm(42.0), 0.5);
    }

    #[test]
    fn pruning_examples() {
        let series = |v: [f64; 4]| -> Vec<(u64, f64)> { BuildConfig::BLOCK_CHOICES.iter().copied().zip(v).collect() };
        assert_eq!(prune_block_axis(&series([1.0, 2.0, 4.0, 8.0])), 3);
        assert_eq!(prune_block_axis(&series([1.0, 1.1, 1.2, 6.0])), 2);
        assert_eq!(prune_block_axis(&series([3.0, 3.0, 3.0, 3.0])), 3);
        let mut agent = Agent::starting_at(AgentConfig::default(), QState::new(2, 3)).unwrap();
        agent.prune(&series([1.0, 1.1, 1.2, 6.0]));
        assert_eq!(agent.state().block, 2);
        for _ in 0..500 {
            let d = agent.step(-0.5);
            assert!(!agent.is_masked(d.state));
        }
    }

    #[test]
    fn shift_detection() {
        let stationary = vec![-0.3; 10];
        assert!(!detect_shift(&stationary, 5));
        let mut shifted = vec![-0.3, -0.25, -0.35, -0.3, -0.3];
        shifted.extend([-0.9; 5]);
        assert!(detect_shift(&shifted, 5));
        assert!(!detect_shift(&shifted[..5], 5));
    }

    #[test]
    fn epsilon_decays_to_floor() {
        let mut agent = Agent::new(AgentConfig::default()).unwrap();
        let mut prev = agent.epsilon();
        for _ in 0..200 {
            agent.step(-0.5);
            assert!(agent.epsilon() <= prev && agent.epsilon() >= 0.02);
            prev = agent.epsilon();
        }
        assert_eq!(agent.epsilon(), 0.02);
    }

    #[test]
    fn persistence_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let mut agent = Agent::new(AgentConfig::default()).unwrap();
        for i in 0..30 {
            agent.episode(100.0 + i as f64, 5000.0);
        }
        let path = dir.path().join("agent.json");
        agent.save(&path).unwrap();
        let back = Agent::load(&path).unwrap();
        assert_eq!(back.q_table(), agent.q_table());
        assert_eq!(back.state(), agent.state());
        assert_eq!(back.epsilon(), agent.epsilon());
        assert!(agent.q_table_csv().lines().count() == 21);
    }
}
