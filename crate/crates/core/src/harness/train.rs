use std::collections::VecDeque;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::{RunConfig, Variant};
use crate::autoencoder::StateAutoencoder;
use crate::env::{ascii_path, write_path_overlay, Action, Cell, GridSpec, GridWorld, Observation};
use crate::error::{Error, Result};
use crate::mastery::MasteryEvaluator;
use crate::nn::save_checkpoint;
use crate::ppo::{collect_rollout, ppo_update, EnvRunner, EpisodeRecord, PolicyNet, RewardContext, Rollout};
use crate::reward::RunningStats;

pub const METRICS_FILE: &str = "metrics.csv";
pub const EPISODES_FILE: &str = "episodes.csv";
pub const REWARDS_FILE: &str = "rewards.csv";
pub const DENSITY_FILE: &str = "density.csv";
pub const HEATMAP_FILE: &str = "density.png";
pub const SUMMARY_FILE: &str = "summary.json";
pub const CONFIG_FILE: &str = "config.toml";

/// Episodes the success rate is measured over.
pub const SUCCESS_WINDOW: usize = 100;

/// One row of `metrics.csv`, written after every policy update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub update: u64,
    pub step: u64,
    pub episodes: u64,
    /// Mean extrinsic return of the episodes that ended in this rollout.
    pub episode_return_ext: Option<f64>,
    /// Goal-reaching rate over the last [`SUCCESS_WINDOW`] episodes.
    pub success_rate: Option<f64>,
    pub mean_entropy: f64,
    pub mean_alpha: f64,
    pub mean_r_int: f64,
    /// Mean of `(1 - alpha) * r_int`.
    pub mean_effective_int: f64,
    pub mean_r_total: f64,
    pub ae_loss: Option<f64>,
    pub ev_loss: Option<f64>,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub coverage: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct RewardRow {
    step: u64,
    action: usize,
    r_ext: f64,
    r_int: f64,
    alpha: f64,
    r_total: f64,
    done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreedyPath {
    /// Visited cells, starting with the start cell.
    pub cells: Vec<Cell>,
    pub reached_goal: bool,
}

impl GreedyPath {
    pub fn moves(&self) -> usize {
        self.cells.len().saturating_sub(1)
    }
}

/// Written to `summary.json` at the end of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub variant: Variant,
    pub seed: u64,
    pub total_steps: u64,
    pub updates: u64,
    pub episodes: u64,
    pub coverage: usize,
    pub open_cells: usize,
    pub success_rate_last_100: Option<f64>,
    pub greedy_path_len: Option<usize>,
    pub greedy_reached_goal: bool,
    pub shortest_path_len: Option<usize>,
    pub final_mean_entropy: f64,
    pub final_mean_alpha: f64,
    pub metrics_sha256: String,
    pub config_sha256: String,
    pub crate_version: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Result of one iteration of the training loop.
#[derive(Debug, Clone)]
pub struct UpdateOutput {
    pub row: MetricsRow,
    pub rollout: Rollout,
}

/// The training loop, one policy update at a time.
///
/// Every variant builds and trains the same three networks from the same
/// random streams; only the alpha source differs.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: RunConfig,
    seed: u64,
    policy: PolicyNet,
    autoencoder: StateAutoencoder,
    evaluator: MasteryEvaluator,
    runner: EnvRunner,
    intrinsic_stats: Option<RunningStats>,
    rollout_rng: ChaCha8Rng,
    update_rng: ChaCha8Rng,
    batch_rng: ChaCha8Rng,
    updates: u64,
    recent_goals: VecDeque<bool>,
    last_row: Option<MetricsRow>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl Trainer {
    pub fn new(cfg: &RunConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let spec = cfg.env.build()?;
        let env = GridWorld::new(spec)?;
        let shape = env.observation_shape();
        let mut init = stream(seed, 0);
        let policy = PolicyNet::new(&shape, Action::COUNT, &cfg.policy, &mut init)?;
        let autoencoder = StateAutoencoder::new(&shape, &cfg.autoencoder, &mut init)?;
        let evaluator = MasteryEvaluator::new(&shape, &cfg.evaluator, &mut init)?;
        Ok(Trainer {
            cfg: cfg.for_seed(seed),
            seed,
            policy,
            autoencoder,
            evaluator,
            runner: EnvRunner::new(env, seed),
            intrinsic_stats: cfg.autoencoder.normalize.then(RunningStats::default),
            rollout_rng: stream(seed, 1),
            update_rng: stream(seed, 2),
            batch_rng: stream(seed, 3),
            updates: 0,
            recent_goals: VecDeque::with_capacity(SUCCESS_WINDOW),
            last_row: None,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn policy(&self) -> &PolicyNet {
        &self.policy
    }

    pub fn autoencoder(&self) -> &StateAutoencoder {
        &self.autoencoder
    }

    pub fn autoencoder_mut(&mut self) -> &mut StateAutoencoder {
        &mut self.autoencoder
    }

    pub fn evaluator(&self) -> &MasteryEvaluator {
        &self.evaluator
    }

    pub fn evaluator_mut(&mut self) -> &mut MasteryEvaluator {
        &mut self.evaluator
    }

    pub fn runner(&self) -> &EnvRunner {
        &self.runner
    }

    pub fn spec(&self) -> &GridSpec {
        self.runner.env().spec()
    }

    pub fn steps_done(&self) -> u64 {
        self.runner.global_step()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    pub fn is_finished(&self) -> bool {
        self.steps_done() >= self.cfg.total_steps
    }

    pub fn success_rate(&self) -> Option<f64> {
        if self.recent_goals.is_empty() {
            return None;
        }
        let hits = self.recent_goals.iter().filter(|g| **g).count();
        Some(hits as f64 / self.recent_goals.len() as f64)
    }

    /// Collect a rollout, train the autoencoder then the evaluator on it,
    /// then run the PPO update. The last rollout is shortened so the run
    /// stops exactly at `total_steps`.
    pub fn update(&mut self) -> Result<UpdateOutput> {
        let step = self.steps_done();
        self.update_inner().map_err(|e| Error::Halted {
            step,
            source: Box::new(e),
        })
    }

    fn update_inner(&mut self) -> Result<UpdateOutput> {
        if self.is_finished() {
            return Err(Error::invalid("run already reached total_steps"));
        }
        let remaining = self.cfg.total_steps - self.steps_done();
        let mut ppo = self.cfg.ppo.clone();
        ppo.horizon = ppo.horizon.min(usize::try_from(remaining).unwrap_or(usize::MAX));

        let rollout = {
            let mut ctx = RewardContext {
                autoencoder: &self.autoencoder,
                evaluator: &self.evaluator,
                alpha_source: self.cfg.variant.alpha_source(),
                intrinsic_stats: self.intrinsic_stats.as_mut(),
            };
            collect_rollout(&self.policy, &mut self.runner, &mut ctx, &ppo, &mut self.rollout_rng)?
        };
        for ep in &rollout.episodes {
            if self.recent_goals.len() == SUCCESS_WINDOW {
                self.recent_goals.pop_front();
            }
            self.recent_goals.push_back(ep.reached_goal);
        }

        let observations: Vec<&Observation> = rollout.batch.observations().collect();
        let batch_size = self.cfg.autoencoder.batch_size;
        let mut ae_loss = None;
        for _ in 0..self.cfg.autoencoder.steps_per_update {
            let batch = sample(&observations, batch_size, &mut self.batch_rng);
            ae_loss = Some(self.autoencoder.train_step(&batch)?);
        }
        let mut ev_loss = None;
        for _ in 0..self.cfg.evaluator.steps_per_update {
            let real = sample(&observations, batch_size, &mut self.batch_rng);
            let fake = real
                .iter()
                .map(|o| self.autoencoder.reconstruct(o).map(|r| r.obs_hat))
                .collect::<Result<Vec<_>>>()?;
            ev_loss = Some(self.evaluator.train_step(&real, &fake)?);
        }
        let stats = ppo_update(&mut self.policy, &rollout.batch, &ppo, &mut self.update_rng)?;
        self.updates += 1;

        let n = rollout.batch.len() as f64;
        let mean = |f: &dyn Fn(&crate::reward::RewardBreakdown) -> f64| {
            rollout.batch.transitions.iter().map(|t| f(&t.breakdown)).sum::<f64>() / n
        };
        let episode_return_ext = (!rollout.episodes.is_empty())
            .then(|| rollout.episodes.iter().map(|e| e.return_ext).sum::<f64>() / rollout.episodes.len() as f64);
        let row = MetricsRow {
            update: self.updates,
            step: self.steps_done(),
            episodes: self.runner.episodes_finished(),
            episode_return_ext,
            success_rate: self.success_rate(),
            mean_entropy: rollout.record.mean_policy_entropy,
            mean_alpha: rollout.record.mean_alpha,
            mean_r_int: rollout.record.mean_r_int,
            mean_effective_int: mean(&|b| (1.0 - b.alpha) * b.r_int_raw),
            mean_r_total: mean(&|b| b.r_total),
            ae_loss,
            ev_loss,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            approx_kl: stats.approx_kl,
            clip_fraction: stats.clip_fraction,
            coverage: self.runner.density().coverage(),
        };
        self.last_row = Some(row.clone());
        Ok(UpdateOutput { row, rollout })
    }

    /// Follows the greedy policy from the start cell until the goal, or
    /// the episode cap.
    pub fn greedy_path(&self) -> Result<GreedyPath> {
        greedy_path(&self.policy, self.spec())
    }

    /// Saves the three networks under `dir`.
    pub fn save_checkpoints(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_checkpoint(self.policy.network(), dir.join("policy.json"))?;
        save_checkpoint(self.autoencoder.network(), dir.join("autoencoder.json"))?;
        save_checkpoint(self.evaluator.network(), dir.join("evaluator.json"))
    }
}

fn sample<'a, R: Rng + ?Sized>(pool: &[&'a Observation], n: usize, rng: &mut R) -> Vec<Observation> {
    (0..n).map(|_| pool[rng.gen_range(0..pool.len())].clone()).collect()
}

pub fn greedy_path(policy: &PolicyNet, spec: &GridSpec) -> Result<GreedyPath> {
    let mut env = GridWorld::new(spec.clone())?;
    let mut obs = env.reset(0);
    let mut cells = vec![env.position()];
    loop {
        let action = Action::from_index(policy.greedy_action(&obs)?).expect("valid action index");
        let step = env.step(action)?;
        cells.push(step.cell);
        if step.done {
            return Ok(GreedyPath {
                cells,
                reached_goal: step.reached_goal,
            });
        }
        obs = step.obs;
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn flush(w: &mut csv::Writer<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

/// Runs `cfg` for one seed, writing every artifact into `dir`.
pub fn train_into(trainer: &mut Trainer, dir: &Path) -> Result<RunSummary> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config_text = trainer.config().to_toml_string()?;
    let config_path = dir.join(CONFIG_FILE);
    fs::write(&config_path, &config_text).map_err(|e| Error::io(&config_path, e))?;

    let metrics_path = dir.join(METRICS_FILE);
    let episodes_path = dir.join(EPISODES_FILE);
    let rewards_path = dir.join(REWARDS_FILE);
    let mut metrics = csv_writer(&metrics_path)?;
    let mut episodes = csv_writer(&episodes_path)?;
    let mut rewards = if trainer.config().log_rewards {
        Some(csv_writer(&rewards_path)?)
    } else {
        None
    };
    let checkpoint_every = trainer.config().checkpoint_every;
    let mut last_entropy = f64::NAN;
    let mut last_alpha = f64::NAN;

    while !trainer.is_finished() {
        let UpdateOutput { row, rollout } = trainer.update()?;
        metrics.serialize(&row)?;
        flush(&mut metrics, &metrics_path)?;
        for ep in &rollout.episodes {
            episodes.serialize::<&EpisodeRecord>(ep)?;
        }
        flush(&mut episodes, &episodes_path)?;
        if let Some(w) = rewards.as_mut() {
            let first = row.step + 1 - rollout.batch.len() as u64;
            for (i, t) in rollout.batch.transitions.iter().enumerate() {
                w.serialize(RewardRow {
                    step: first + i as u64,
                    action: t.action,
                    r_ext: t.breakdown.r_ext,
                    r_int: t.breakdown.r_int_raw,
                    alpha: t.breakdown.alpha,
                    r_total: t.breakdown.r_total,
                    done: t.done,
                })?;
            }
            flush(w, &rewards_path)?;
        }
        if checkpoint_every > 0 && row.update % checkpoint_every == 0 {
            trainer.save_checkpoints(&dir.join("checkpoints").join(format!("update-{:05}", row.update)))?;
        }
        last_entropy = row.mean_entropy;
        last_alpha = row.mean_alpha;
    }
    drop(metrics);
    trainer.save_checkpoints(&dir.join("checkpoints").join("final"))?;

    let density = trainer.runner().density();
    density.write_csv(dir.join(DENSITY_FILE))?;
    density.write_heatmap(dir.join(HEATMAP_FILE))?;

    let spec = trainer.spec().clone();
    let path = trainer.greedy_path()?;
    write_path_overlay(&spec, &path.cells, dir.join("greedy_path.png"))?;
    let ascii = ascii_path(&spec, &path.cells);
    let ascii_file = dir.join("greedy_path.txt");
    fs::write(&ascii_file, ascii).map_err(|e| Error::io(&ascii_file, e))?;

    let metrics_bytes = fs::read(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?;
    let summary = RunSummary {
        variant: trainer.config().variant,
        seed: trainer.seed(),
        total_steps: trainer.steps_done(),
        updates: trainer.updates(),
        episodes: trainer.runner().episodes_finished(),
        coverage: density.coverage(),
        open_cells: spec.open_cells(),
        success_rate_last_100: trainer.success_rate(),
        greedy_path_len: path.reached_goal.then(|| path.moves()),
        greedy_reached_goal: path.reached_goal,
        shortest_path_len: spec.goal.and_then(|g| spec.shortest_path_len(spec.start, g)),
        final_mean_entropy: last_entropy,
        final_mean_alpha: last_alpha,
        metrics_sha256: sha256_hex(&metrics_bytes),
        config_sha256: sha256_hex(config_text.as_bytes()),
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let summary_path = dir.join(SUMMARY_FILE);
    let mut f = File::create(&summary_path).map_err(|e| Error::io(&summary_path, e))?;
    serde_json::to_writer_pretty(&mut f, &summary)?;
    writeln!(f).map_err(|e| Error::io(&summary_path, e))?;
    Ok(summary)
}

/// Trains `cfg` for `seed` into [`RunConfig::run_dir`].
pub fn train(cfg: &RunConfig, seed: u64) -> Result<(PathBuf, RunSummary)> {
    let dir = cfg.run_dir(seed);
    let mut trainer = Trainer::new(cfg, seed)?;
    let summary = train_into(&mut trainer, &dir)?;
    Ok((dir, summary))
}

pub fn read_summary(run_dir: &Path) -> Result<RunSummary> {
    let path = run_dir.join(SUMMARY_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}
