//! Rollout collection over parallel environments and the PPO training loop.

use std::fs;
use std::io::Write;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::model::RefHoiSequence;
use crate::reward::RewardBreakdown;

use super::env::{HoiEnv, StepOutcome, TerminationReason};
use super::gae::compute_gae;
use super::nn::Adam;
use super::policy::{gaussian_log_prob, PolicyModel};
use super::ppo::{ppo_update, LossStats, Minibatch};
use super::{PpoConfig, RlError};

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub version: u32,
    pub iteration: usize,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub policy: PolicyModel,
}

impl Checkpoint {
    pub fn new(config: &ExperimentConfig, policy: &PolicyModel, iteration: usize) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            iteration,
            config_hash: config.hash(),
            config: config.clone(),
            policy: policy.clone(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), RlError> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, RlError> {
        let ck: Self = serde_json::from_str(&fs::read_to_string(path)?)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(RlError::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        if ck.config.hash() != ck.config_hash {
            return Err(RlError::Checkpoint("config hash does not match the stored config".into()));
        }
        Ok(ck)
    }
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationLog {
    pub iteration: usize,
    pub env_steps: usize,
    pub episodes: usize,
    pub mean_episode_length: f64,
    pub max_episode_length: usize,
    /// Mean of every reward channel over the iteration's steps.
    pub reward: RewardBreakdown,
    pub terminations: [usize; 4],
    pub loss: LossStats,
}

impl IterationLog {
    pub fn csv_header() -> String {
        let mut cols: Vec<String> =
            ["iteration", "env_steps", "episodes", "mean_episode_length", "max_episode_length"]
                .map(String::from)
                .to_vec();
        cols.extend(RewardBreakdown::CHANNELS.iter().map(|c| format!("mean_{c}")));
        cols.extend(TerminationReason::ALL.iter().map(|r| format!("term_{}", r.name())));
        cols.extend(
            ["loss_total", "loss_policy", "loss_value", "entropy", "approx_kl", "clip_fraction", "grad_norm"]
                .map(String::from),
        );
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.iteration.to_string(),
            self.env_steps.to_string(),
            self.episodes.to_string(),
            self.mean_episode_length.to_string(),
            self.max_episode_length.to_string(),
        ];
        cols.extend(self.reward.values().iter().map(|v| v.to_string()));
        cols.extend(self.terminations.iter().map(|c| c.to_string()));
        let l = &self.loss;
        cols.extend(
            [l.total, l.policy_loss, l.value_loss, l.entropy, l.approx_kl, l.clip_fraction, l.grad_norm]
                .map(|v| v.to_string()),
        );
        cols.join(",")
    }
}

/// Handed to the progress callback after every iteration.
pub struct Progress<'a> {
    pub log: &'a IterationLog,
    pub policy: &'a PolicyModel,
    pub config: &'a ExperimentConfig,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub policy: PolicyModel,
    pub log: Vec<IterationLog>,
    pub checkpoint: Checkpoint,
}

/// One step of one environment as stored in the rollout.
#[derive(Clone, Debug)]
struct StepRecord {
    obs: Vec<f64>,
    raw_obs: Vec<f64>,
    action: Vec<f64>,
    log_prob: f64,
    value: f64,
    next_value: f64,
    reward: RewardBreakdown,
    end: bool,
    terminal: bool,
    reason: Option<TerminationReason>,
}

struct Slot {
    env: HoiEnv,
    rng: ChaCha8Rng,
    obs: Vec<f64>,
    steps: usize,
}

fn worker_count() -> usize {
    std::env::var("HOI_NUM_WORKERS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

#[cfg(feature = "parallel")]
struct Pool(Option<rayon::ThreadPool>);

#[cfg(feature = "parallel")]
impl Pool {
    fn new() -> Self {
        let n = worker_count();
        Self(if n > 1 { rayon::ThreadPoolBuilder::new().num_threads(n).build().ok() } else { None })
    }

    fn map<T: Send, U: Send>(&self, items: &mut [T], f: impl Fn(&mut T) -> U + Sync + Send) -> Vec<U> {
        use rayon::prelude::*;
        match &self.0 {
            Some(pool) => pool.install(|| items.par_iter_mut().map(&f).collect()),
            None => items.iter_mut().map(f).collect(),
        }
    }
}

#[cfg(not(feature = "parallel"))]
struct Pool;

#[cfg(not(feature = "parallel"))]
impl Pool {
    fn new() -> Self {
        let _ = worker_count();
        Pool
    }

    fn map<T, U>(&self, items: &mut [T], f: impl Fn(&mut T) -> U) -> Vec<U> {
        items.iter_mut().map(f).collect()
    }
}

fn rows(data: &[&Vec<f64>]) -> Array2<f64> {
    let cols = data.first().map_or(0, |r| r.len());
    Array2::from_shape_fn((data.len(), cols), |(i, j)| data[i][j])
}

/// Trains with no early stopping.
pub fn train(seq: &RefHoiSequence, cfg: &ExperimentConfig) -> Result<TrainOutcome, RlError> {
    train_with(seq, cfg, |_| ControlFlow::Continue(()))
}

/// Trains for `cfg.ppo.iterations`, calling `on_iteration` after each one;
/// returning `Break` stops early. With `cfg.output_dir` set, writes
/// `train_log.csv`, periodic checkpoints and `checkpoint_final.json`.
pub fn train_with(
    seq: &RefHoiSequence,
    cfg: &ExperimentConfig,
    mut on_iteration: impl FnMut(&Progress) -> ControlFlow<()>,
) -> Result<TrainOutcome, RlError> {
    cfg.validate().map_err(|e| RlError::InvalidConfig(e.to_string()))?;
    seq.validate()?;
    let ppo = &cfg.ppo;
    let seq = Arc::new(seq.clone());
    let settings = cfg.env_settings();
    let mut slots = Vec::with_capacity(ppo.num_envs);
    for i in 0..ppo.num_envs {
        let env = HoiEnv::new(
            Arc::clone(&seq),
            cfg.sim.model.clone(),
            cfg.sim.disc.clone(),
            cfg.sim.physics.clone(),
            settings.clone(),
        )?;
        let obs = env.observation()?;
        slots.push(Slot { env, rng: ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(i as u64)), obs, steps: 0 });
    }
    let obs_dim = slots[0].obs.len();
    let act_dim = cfg.sim.model.dof();
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0001);
    let mut policy = PolicyModel::new(obs_dim, act_dim, &ppo.hidden, ppo.init_log_std, &mut init_rng);
    let mut optimizer = Adam::new(policy.param_count(), ppo.learning_rate);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed_0002);
    let pool = Pool::new();

    let mut csv = match &cfg.output_dir {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let mut f = fs::File::create(dir.join("train_log.csv"))?;
            writeln!(f, "{}", IterationLog::csv_header())?;
            Some(f)
        }
        None => None,
    };
    let checkpoint_path = |name: String| -> Option<PathBuf> { cfg.output_dir.as_ref().map(|d| d.join(name)) };

    let mut logs = Vec::new();
    for iteration in 1..=ppo.iterations {
        let (records, lengths) = collect(&mut slots, &policy, ppo, &pool)?;
        let diverged = records
            .iter()
            .filter(|steps| steps.iter().any(|s| s.reason == Some(TerminationReason::Diverged)))
            .count();
        if 2 * diverged > ppo.num_envs {
            return Err(RlError::Diverged { iteration, diverged, envs: ppo.num_envs });
        }
        let batch = assemble(&records, ppo)?;
        let loss = ppo_update(&mut policy, &mut optimizer, &batch, ppo, &mut shuffle_rng)?;
        let raw: Vec<&Vec<f64>> = records.iter().flatten().map(|s| &s.raw_obs).collect();
        policy.obs_norm.update(rows(&raw).view());

        let log = summarise(iteration, &records, &lengths, loss);
        if let Some(f) = csv.as_mut() {
            writeln!(f, "{}", log.csv_row())?;
        }
        if ppo.checkpoint_every > 0 && iteration % ppo.checkpoint_every == 0 {
            if let Some(p) = checkpoint_path(format!("checkpoint_{iteration:06}.json")) {
                Checkpoint::new(cfg, &policy, iteration).save(&p)?;
            }
        }
        log::info!(
            "iter {iteration}: r_total {:.4} episodes {} mean len {:.1}",
            log.reward.r_total,
            log.episodes,
            log.mean_episode_length
        );
        let flow = on_iteration(&Progress { log: &log, policy: &policy, config: cfg });
        logs.push(log);
        if flow.is_break() {
            break;
        }
    }
    let checkpoint = Checkpoint::new(cfg, &policy, logs.len());
    if let Some(p) = checkpoint_path("checkpoint_final.json".into()) {
        checkpoint.save(&p)?;
    }
    Ok(TrainOutcome { policy, log: logs, checkpoint })
}

/// Runs `horizon` synchronous steps of every environment. Returns per-env
/// step records and the lengths of episodes completed during collection.
fn collect(
    slots: &mut [Slot],
    policy: &PolicyModel,
    ppo: &PpoConfig,
    pool: &Pool,
) -> Result<(Vec<Vec<StepRecord>>, Vec<usize>), RlError> {
    let mut records: Vec<Vec<StepRecord>> = vec![Vec::with_capacity(ppo.horizon); slots.len()];
    let mut lengths = Vec::new();
    for _ in 0..ppo.horizon {
        let raw: Vec<&Vec<f64>> = slots.iter().map(|s| &s.obs).collect();
        let obs = policy.normalize_batch(rows(&raw).view());
        let (mu, values) = policy.forward(obs.view())?;
        let mut actions = Vec::with_capacity(slots.len());
        for (slot, m) in slots.iter_mut().zip(mu.rows()) {
            let m = m.to_vec();
            let a: Vec<f64> = m
                .iter()
                .zip(&policy.log_std)
                .map(|(m, ls)| m + ls.exp() * slot.rng.sample::<f64, _>(StandardNormal))
                .collect();
            let lp = gaussian_log_prob(&a, &m, &policy.log_std);
            actions.push((a, lp));
        }
        let mut work: Vec<(&mut Slot, &Vec<f64>)> =
            slots.iter_mut().zip(actions.iter().map(|(a, _)| a)).collect();
        let outcomes: Vec<Result<(StepOutcome, Vec<f64>), RlError>> = pool.map(&mut work, |(slot, a)| {
            let out = slot.env.step(a)?;
            let after = if out.reason == Some(TerminationReason::Diverged) {
                vec![0.0; slot.obs.len()]
            } else {
                slot.env.observation()?
            };
            Ok((out, after))
        });
        let mut stepped = Vec::with_capacity(slots.len());
        for o in outcomes {
            stepped.push(o?);
        }
        let after: Vec<&Vec<f64>> = stepped.iter().map(|(_, a)| a).collect();
        let after_obs = policy.normalize_batch(rows(&after).view());
        let (_, next_values) = policy.forward(after_obs.view())?;

        for (i, ((out, after), slot)) in stepped.into_iter().zip(slots.iter_mut()).enumerate() {
            slot.steps += 1;
            let terminal = match out.reason {
                Some(TerminationReason::Diverged) => true,
                Some(TerminationReason::ObjectDeviation | TerminationReason::BodyDeviation) => !ppo.bootstrap_terminal,
                _ => false,
            };
            let raw_obs = std::mem::replace(&mut slot.obs, after);
            records[i].push(StepRecord {
                obs: obs.row(i).to_vec(),
                raw_obs,
                action: actions[i].0.clone(),
                log_prob: actions[i].1,
                value: values[i],
                next_value: if out.reason == Some(TerminationReason::Diverged) { 0.0 } else { next_values[i] },
                reward: out.reward,
                end: out.done,
                terminal,
                reason: out.reason,
            });
            if out.done {
                lengths.push(slot.steps);
                slot.steps = 0;
                slot.env.reset()?;
                slot.obs = slot.env.observation()?;
            }
        }
    }
    Ok((records, lengths))
}

fn assemble(records: &[Vec<StepRecord>], ppo: &PpoConfig) -> Result<Minibatch, RlError> {
    let mut advantages = Vec::new();
    let mut returns = Vec::new();
    for steps in records {
        let r: Vec<f64> = steps.iter().map(|s| s.reward.r_total).collect();
        let v: Vec<f64> = steps.iter().map(|s| s.value).collect();
        let nv: Vec<f64> = steps.iter().map(|s| s.next_value).collect();
        let ends: Vec<bool> = steps.iter().map(|s| s.end).collect();
        let terms: Vec<bool> = steps.iter().map(|s| s.terminal).collect();
        let (a, ret) = compute_gae(&r, &v, &nv, &ends, &terms, ppo.gamma, ppo.gae_lambda)?;
        advantages.extend(a);
        returns.extend(ret);
    }
    let flat: Vec<&StepRecord> = records.iter().flatten().collect();
    let obs: Vec<&Vec<f64>> = flat.iter().map(|s| &s.obs).collect();
    let act: Vec<&Vec<f64>> = flat.iter().map(|s| &s.action).collect();
    Ok(Minibatch {
        obs: rows(&obs),
        actions: rows(&act),
        old_log_probs: flat.iter().map(|s| s.log_prob).collect::<Array1<f64>>(),
        advantages: Array1::from(advantages),
        returns: Array1::from(returns),
    })
}

fn summarise(iteration: usize, records: &[Vec<StepRecord>], lengths: &[usize], loss: LossStats) -> IterationLog {
    let steps: Vec<&StepRecord> = records.iter().flatten().collect();
    let n = steps.len().max(1) as f64;
    let mut sums = [0.0; 13];
    let mut terminations = [0usize; 4];
    for s in &steps {
        for (acc, v) in sums.iter_mut().zip(s.reward.values()) {
            *acc += v / n;
        }
        if let Some(r) = s.reason {
            let k = TerminationReason::ALL.iter().position(|x| *x == r).expect("listed reason");
            terminations[k] += 1;
        }
    }
    let [r_p, r_r, r_pv, r_rv, r_b, r_op, r_or, r_opv, r_orv, r_o, r_ig, r_cg, r_total] = sums;
    IterationLog {
        iteration,
        env_steps: steps.len(),
        episodes: lengths.len(),
        mean_episode_length: if lengths.is_empty() {
            0.0
        } else {
            lengths.iter().sum::<usize>() as f64 / lengths.len() as f64
        },
        max_episode_length: lengths.iter().copied().max().unwrap_or(0),
        reward: RewardBreakdown { r_p, r_r, r_pv, r_rv, r_b, r_op, r_or, r_opv, r_orv, r_o, r_ig, r_cg, r_total },
        terminations,
        loss,
    }
}
