//! Policy optimization: a softmax policy with a value head on a shared
//! conv trunk, rollout collection through the adaptive reward pipeline,
//! GAE, and the PPO clipped-surrogate update.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autoencoder::StateAutoencoder;
use crate::env::{Action, Cell, GridWorld, Observation, VisitDensity};
use crate::error::{Error, Result};
use crate::mastery::MasteryEvaluator;
use crate::nn::{log_softmax, softmax, AdamConfig, Gradients, LayerSpec, Network, PolicyDistribution, Tensor};
use crate::reward::{per_step_pipeline, AlphaSource, RewardBreakdown, RunningStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_epsilon: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub horizon: usize,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub lr: f64,
    /// Global gradient-norm clip; `0` disables it.
    pub max_grad_norm: f64,
    pub normalize_advantages: bool,
    /// Divide training rewards by the running standard deviation of the
    /// discounted return. Logged rewards are left untouched.
    pub reward_scaling: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        PpoConfig {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_epsilon: 0.2,
            epochs: 4,
            minibatch_size: 64,
            horizon: 2048,
            entropy_coef: 0.0,
            value_coef: 0.5,
            lr: 3e-4,
            max_grad_norm: 0.5,
            normalize_advantages: true,
            reward_scaling: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("ppo: {m}")));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad("gae_lambda must lie in [0, 1]");
        }
        if self.clip_epsilon.is_nan() || self.clip_epsilon <= 0.0 {
            return bad("clip_epsilon must be positive");
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.horizon == 0 {
            return bad("epochs, minibatch_size and horizon must be >= 1");
        }
        if self.lr < 0.0 || self.entropy_coef < 0.0 || self.value_coef < 0.0 || self.max_grad_norm < 0.0 {
            return bad("lr and coefficients must be non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub channels: [usize; 2],
    pub kernel: usize,
    pub stride: usize,
    pub hidden: usize,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        PolicyConfig {
            channels: [8, 16],
            kernel: 3,
            stride: 2,
            hidden: 64,
        }
    }
}

/// Anything that maps a state to an action distribution.
pub trait Policy<S: ?Sized> {
    fn distribution(&self, state: &S) -> Result<PolicyDistribution>;
}

/// Average policy entropy over a probe set of states.
pub fn mean_entropy<S, P: Policy<S>>(policy: &P, probes: &[S]) -> Result<f64> {
    if probes.is_empty() {
        return Err(Error::invalid("mean_entropy needs at least one probe state"));
    }
    let mut total = 0.0;
    for s in probes {
        total += policy.distribution(s)?.entropy();
    }
    Ok(total / probes.len() as f64)
}

/// Fixed table of distributions indexed by state id.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy(pub Vec<PolicyDistribution>);

impl Policy<usize> for TabularPolicy {
    fn distribution(&self, state: &usize) -> Result<PolicyDistribution> {
        self.0
            .get(*state)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("state {state} not in policy table")))
    }
}

/// Boltzmann policy over Q-values: `π(a|s) ∝ exp Q(s, a)`.
pub fn softmax_policy_from_q(q_values: &[f64]) -> PolicyDistribution {
    softmax(q_values)
}

/// Conv trunk with a single dense head emitting `n_actions` logits
/// followed by one state value.
#[derive(Debug, Clone)]
pub struct PolicyNet {
    net: Network,
    n_actions: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionSample {
    pub action: usize,
    pub logprob: f64,
    pub value: f64,
    pub entropy: f64,
}

impl PolicyNet {
    pub fn new<R: Rng + ?Sized>(
        obs_shape: &[usize],
        n_actions: usize,
        cfg: &PolicyConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let specs = [
            LayerSpec::conv(cfg.channels[0], cfg.kernel, cfg.stride, 0),
            LayerSpec::Relu,
            LayerSpec::conv(cfg.channels[1], cfg.kernel, cfg.stride, 0),
            LayerSpec::Relu,
            LayerSpec::dense(cfg.hidden),
            LayerSpec::Relu,
            LayerSpec::dense(n_actions + 1),
        ];
        let mut net = Network::new(obs_shape, &specs, rng)?;
        // Small policy logits at init keep the starting policy near uniform.
        if let Some(head) = net.layers_mut().last_mut() {
            head.weight.iter_mut().for_each(|w| *w *= 0.01);
        }
        Self::from_network(net, n_actions)
    }

    pub fn from_network(net: Network, n_actions: usize) -> Result<Self> {
        if net.output_shape() != [n_actions + 1] {
            return Err(Error::ShapeMismatch {
                context: "policy head",
                expected: vec![n_actions + 1],
                got: net.output_shape().to_vec(),
            });
        }
        Ok(PolicyNet { net, n_actions })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn network_mut(&mut self) -> &mut Network {
        &mut self.net
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Logits and value.
    pub fn evaluate(&self, obs: &Observation) -> Result<(Vec<f64>, f64)> {
        let out = self.net.infer(obs.tensor())?.into_data();
        let value = out[self.n_actions];
        let mut logits = out;
        logits.truncate(self.n_actions);
        if !logits.iter().all(|v| v.is_finite()) || !value.is_finite() {
            return Err(Error::NonFinite("policy output".into()));
        }
        Ok((logits, value))
    }

    pub fn value(&self, obs: &Observation) -> Result<f64> {
        Ok(self.evaluate(obs)?.1)
    }

    pub fn act<R: Rng + ?Sized>(&self, obs: &Observation, rng: &mut R) -> Result<ActionSample> {
        let (logits, value) = self.evaluate(obs)?;
        let dist = softmax(&logits);
        let action = dist.sample(rng);
        Ok(ActionSample {
            action,
            logprob: log_softmax(&logits)[action],
            value,
            entropy: dist.entropy(),
        })
    }

    pub fn greedy_action(&self, obs: &Observation) -> Result<usize> {
        Ok(softmax(&self.evaluate(obs)?.0).argmax())
    }
}

impl Policy<Observation> for PolicyNet {
    fn distribution(&self, state: &Observation) -> Result<PolicyDistribution> {
        Ok(softmax(&self.evaluate(state)?.0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Observation,
    pub action: usize,
    pub logprob: f64,
    pub value_estimate: f64,
    pub breakdown: RewardBreakdown,
    pub done: bool,
    /// Entropy of the acting distribution at `obs`.
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutBatch {
    pub transitions: Vec<Transition>,
    pub bootstrap_value: f64,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn observations(&self) -> impl Iterator<Item = &Observation> {
        self.transitions.iter().map(|t| &t.obs)
    }
}

/// Generalized advantage estimation.
///
/// `dones[t]` marks that the episode ended after step `t`, which cuts both
/// the bootstrap and the advantage recursion. Returns `(advantages,
/// returns)` with `returns = advantages + values`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    bootstrap_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut last = 0.0;
    for t in (0..n).rev() {
        let next_value = if t + 1 < n { values[t + 1] } else { bootstrap_value };
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        last = delta + gamma * lambda * live * last;
        adv[t] = last;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

/// Zero mean, unit variance; the standard deviation is floored at 1e-8.
pub fn normalize_advantages(adv: &mut [f64]) {
    if adv.is_empty() {
        return;
    }
    let n = adv.len() as f64;
    let mean = adv.iter().sum::<f64>() / n;
    let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt().max(1e-8);
    adv.iter_mut().for_each(|a| *a = (*a - mean) / std);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub index: u64,
    /// Global step at which the episode ended.
    pub end_step: u64,
    pub return_ext: f64,
    pub length: u32,
    pub reached_goal: bool,
}

/// Per-update summary of entropy and the reward streams.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyRecord {
    pub step: u64,
    pub mean_policy_entropy: f64,
    pub mean_alpha: f64,
    pub mean_r_int: f64,
}

/// Owns the environment across rollouts so episodes can straddle them.
#[derive(Debug, Clone)]
pub struct EnvRunner {
    env: GridWorld,
    obs: Observation,
    seed: u64,
    episode_return: f64,
    episode_len: u32,
    episodes: u64,
    global_step: u64,
    density: VisitDensity,
    discounted_return: f64,
    return_stats: RunningStats,
}

impl EnvRunner {
    pub fn new(mut env: GridWorld, seed: u64) -> Self {
        let obs = env.reset(seed);
        let density = VisitDensity::new(env.spec().height, env.spec().width);
        EnvRunner {
            env,
            obs,
            seed,
            episode_return: 0.0,
            episode_len: 0,
            episodes: 0,
            global_step: 0,
            density,
            discounted_return: 0.0,
            return_stats: RunningStats::default(),
        }
    }

    pub fn env(&self) -> &GridWorld {
        &self.env
    }

    pub fn observation(&self) -> &Observation {
        &self.obs
    }

    pub fn global_step(&self) -> u64 {
        self.global_step
    }

    pub fn density(&self) -> &VisitDensity {
        &self.density
    }

    pub fn episodes_finished(&self) -> u64 {
        self.episodes
    }

    /// Running statistics of the discounted training return.
    pub fn return_stats(&self) -> &RunningStats {
        &self.return_stats
    }
}

/// Everything the rollout needs from the exploration machinery.
pub struct RewardContext<'a> {
    pub autoencoder: &'a StateAutoencoder,
    pub evaluator: &'a MasteryEvaluator,
    pub alpha_source: AlphaSource,
    /// Running statistics of raw reconstruction errors when intrinsic
    /// rewards are normalized.
    pub intrinsic_stats: Option<&'a mut RunningStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub batch: RolloutBatch,
    pub episodes: Vec<EpisodeRecord>,
    pub visited: Vec<Cell>,
    pub record: EntropyRecord,
}

/// Runs the policy for `horizon` steps. The intrinsic reward and mastery
/// of a transition are computed on the state it leads to.
pub fn collect_rollout<R: Rng + ?Sized>(
    policy: &PolicyNet,
    runner: &mut EnvRunner,
    ctx: &mut RewardContext<'_>,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<Rollout> {
    let horizon = cfg.horizon;
    if horizon == 0 {
        return Err(Error::invalid("rollout horizon must be >= 1"));
    }
    let mut transitions = Vec::with_capacity(horizon);
    let mut rewards = Vec::with_capacity(horizon);
    let mut episodes = Vec::new();
    let mut visited = Vec::with_capacity(horizon);
    let (mut sum_h, mut sum_alpha, mut sum_int) = (0.0, 0.0, 0.0);
    for _ in 0..horizon {
        let sample = policy.act(&runner.obs, rng)?;
        let action = Action::from_index(sample.action).expect("policy emits a valid action");
        let step = runner.env.step(action)?;
        runner.global_step += 1;
        runner.density.accumulate(step.cell)?;
        visited.push(step.cell);

        let scale = match ctx.intrinsic_stats.as_deref() {
            Some(stats) => stats.inverse_scale(),
            None => 1.0,
        };
        let (breakdown, rec) = per_step_pipeline(
            &step.obs,
            step.r_ext,
            ctx.autoencoder,
            ctx.evaluator,
            ctx.alpha_source,
            scale,
        )?;
        if let Some(stats) = ctx.intrinsic_stats.as_deref_mut() {
            stats.push(rec.r_int);
        }
        let r = breakdown.r_total;
        rewards.push(if cfg.reward_scaling {
            runner.discounted_return = cfg.gamma * runner.discounted_return + r;
            runner.return_stats.push(runner.discounted_return);
            r * runner.return_stats.inverse_scale()
        } else {
            r
        });
        sum_h += sample.entropy;
        sum_alpha += breakdown.alpha;
        sum_int += breakdown.r_int_raw;

        runner.episode_return += step.r_ext;
        runner.episode_len += 1;
        let prev_obs = std::mem::replace(&mut runner.obs, step.obs);
        transitions.push(Transition {
            obs: prev_obs,
            action: sample.action,
            logprob: sample.logprob,
            value_estimate: sample.value,
            breakdown,
            done: step.done,
            entropy: sample.entropy,
        });
        if step.done {
            episodes.push(EpisodeRecord {
                index: runner.episodes,
                end_step: runner.global_step,
                return_ext: runner.episode_return,
                length: runner.episode_len,
                reached_goal: step.reached_goal,
            });
            runner.episodes += 1;
            runner.episode_return = 0.0;
            runner.episode_len = 0;
            runner.discounted_return = 0.0;
            runner.obs = runner.env.reset(runner.seed);
        }
    }
    let bootstrap_value = policy.value(&runner.obs)?;
    let values: Vec<f64> = transitions.iter().map(|t| t.value_estimate).collect();
    let dones: Vec<bool> = transitions.iter().map(|t| t.done).collect();
    let (advantages, returns) = compute_gae(&rewards, &values, &dones, bootstrap_value, cfg.gamma, cfg.gae_lambda);
    if !advantages.iter().all(|a| a.is_finite()) {
        return Err(Error::NonFinite("advantages".into()));
    }
    let n = horizon as f64;
    Ok(Rollout {
        batch: RolloutBatch {
            transitions,
            bootstrap_value,
            advantages,
            returns,
        },
        episodes,
        visited,
        record: EntropyRecord {
            step: runner.global_step,
            mean_policy_entropy: sum_h / n,
            mean_alpha: sum_alpha / n,
            mean_r_int: sum_int / n,
        },
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Per-sample PPO loss terms and the gradient with respect to the
/// network output `[logits..., value]`.
fn sample_loss(
    out: &[f64],
    n_actions: usize,
    action: usize,
    old_logprob: f64,
    advantage: f64,
    ret: f64,
    cfg: &PpoConfig,
) -> (LossStats, Vec<f64>) {
    let logits = &out[..n_actions];
    let value = out[n_actions];
    let logp = log_softmax(logits);
    let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    let entropy = -probs.iter().zip(&logp).map(|(p, l)| p * l).sum::<f64>();

    let log_ratio = logp[action] - old_logprob;
    let ratio = log_ratio.exp();
    let clipped = ratio.clamp(1.0 - cfg.clip_epsilon, 1.0 + cfg.clip_epsilon);
    let (unclipped_obj, clipped_obj) = (ratio * advantage, clipped * advantage);
    let use_unclipped = unclipped_obj <= clipped_obj;
    let policy_loss = -unclipped_obj.min(clipped_obj);
    let d_logp = if use_unclipped { -ratio * advantage } else { 0.0 };

    let value_err = value - ret;
    let mut grad = vec![0.0; n_actions + 1];
    for j in 0..n_actions {
        let onehot = if j == action { 1.0 } else { 0.0 };
        grad[j] = d_logp * (onehot - probs[j]) + cfg.entropy_coef * probs[j] * (logp[j] + entropy);
    }
    grad[n_actions] = cfg.value_coef * value_err;

    let stats = LossStats {
        policy_loss,
        value_loss: 0.5 * value_err * value_err,
        entropy,
        approx_kl: (ratio - 1.0) - log_ratio,
        clip_fraction: if (ratio - 1.0).abs() > cfg.clip_epsilon { 1.0 } else { 0.0 },
    };
    (stats, grad)
}

/// Evaluates the PPO losses over `indices` without updating anything.
pub fn ppo_loss(
    policy: &PolicyNet,
    batch: &RolloutBatch,
    advantages: &[f64],
    indices: &[usize],
    cfg: &PpoConfig,
) -> Result<LossStats> {
    let mut acc = LossStats::default();
    for &i in indices {
        let t = &batch.transitions[i];
        let out = policy.net.infer(t.obs.tensor())?;
        let (s, _) = sample_loss(out.data(), policy.n_actions, t.action, t.logprob, advantages[i], batch.returns[i], cfg);
        accumulate(&mut acc, &s);
    }
    Ok(scaled(acc, indices.len()))
}

fn accumulate(acc: &mut LossStats, s: &LossStats) {
    acc.policy_loss += s.policy_loss;
    acc.value_loss += s.value_loss;
    acc.entropy += s.entropy;
    acc.approx_kl += s.approx_kl;
    acc.clip_fraction += s.clip_fraction;
}

fn scaled(acc: LossStats, n: usize) -> LossStats {
    let n = n.max(1) as f64;
    LossStats {
        policy_loss: acc.policy_loss / n,
        value_loss: acc.value_loss / n,
        entropy: acc.entropy / n,
        approx_kl: acc.approx_kl / n,
        clip_fraction: acc.clip_fraction / n,
    }
}

/// Minibatch gradient of the PPO objective (policy + value + entropy).
pub fn ppo_gradients(
    policy: &mut PolicyNet,
    batch: &RolloutBatch,
    advantages: &[f64],
    indices: &[usize],
    cfg: &PpoConfig,
) -> Result<(LossStats, Gradients)> {
    let mut grads = Gradients::zeros_like(&policy.net);
    let mut acc = LossStats::default();
    let scale = 1.0 / indices.len().max(1) as f64;
    for &i in indices {
        let t = &batch.transitions[i];
        let out = policy.net.forward(t.obs.tensor())?;
        let (s, mut g) = sample_loss(out.data(), policy.n_actions, t.action, t.logprob, advantages[i], batch.returns[i], cfg);
        accumulate(&mut acc, &s);
        g.iter_mut().for_each(|v| *v *= scale);
        policy.net.accumulate_param_grads(&Tensor::from_vec(g), &mut grads)?;
    }
    Ok((scaled(acc, indices.len()), grads))
}

/// Several epochs of shuffled minibatch Adam steps on the clipped
/// surrogate. Returns losses averaged over all minibatches (measured
/// before each step).
pub fn ppo_update<R: Rng + ?Sized>(
    policy: &mut PolicyNet,
    batch: &RolloutBatch,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<LossStats> {
    if batch.is_empty() {
        return Err(Error::invalid("empty rollout batch"));
    }
    let mut advantages = batch.advantages.clone();
    if cfg.normalize_advantages {
        normalize_advantages(&mut advantages);
    }
    let adam = AdamConfig::with_lr(cfg.lr);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut total = LossStats::default();
    let mut steps = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            let (stats, mut grads) = ppo_gradients(policy, batch, &advantages, chunk, cfg)?;
            if !(stats.policy_loss.is_finite() && stats.value_loss.is_finite()) {
                return Err(Error::NonFinite("PPO loss".into()));
            }
            if cfg.max_grad_norm > 0.0 {
                grads.clip_norm(cfg.max_grad_norm);
            }
            policy.net.adam_step(&grads, &adam)?;
            accumulate(&mut total, &stats);
            steps += 1;
        }
    }
    Ok(scaled(total, steps))
}
