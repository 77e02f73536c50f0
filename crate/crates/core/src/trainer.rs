//! Rewards, their normalization, the joint per-batch update of module and
//! controller parameters, the epoch loop with early stopping, per-task
//! fine-tuning and evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::architecture::{ActionSequence, Model, TaskNetwork};
use crate::autodiff::{adam_step, AdamConfig, ParamId, ParamStore, Tape, Tensor};
use crate::controller::ControllerPolicy;
use crate::error::{Error, Result};
use crate::tasks::{batch_iterator, sequential_batches, Batch, Label, Sample, Suite, TaskKind};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Architectures sampled per task per batch.
    pub samples_per_task: usize,
    /// Softmax temperature of reward normalization.
    pub temperature: f64,
    /// Probability of a uniformly random controller decision.
    pub epsilon: f64,
    pub batch_size: usize,
    /// Adam step size for module, embedding and head parameters.
    pub lr_theta: f64,
    /// Adam step size for controller parameters.
    pub lr_phi: f64,
    pub max_depth: usize,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub max_epochs: usize,
    pub fine_tune_epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            samples_per_task: 4,
            temperature: 1.0 / 30.0,
            epsilon: 0.2,
            batch_size: 64,
            lr_theta: 0.005,
            lr_phi: 0.01,
            max_depth: 5,
            patience: 12,
            max_epochs: 30,
            fine_tune_epochs: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.samples_per_task == 0 {
            return fail("samples_per_task must be at least 1");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return fail("temperature must be positive");
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return fail("epsilon must lie in [0, 1]");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if !(self.lr_theta > 0.0 && self.lr_phi > 0.0) {
            return fail("step sizes must be positive");
        }
        if self.max_depth == 0 {
            return fail("max_depth must be at least 1");
        }
        if self.patience == 0 {
            return fail("patience must be at least 1");
        }
        Ok(())
    }
}

/// One sampled architecture with its raw and normalized reward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardRecord {
    pub actions: ActionSequence,
    pub reward: f64,
    pub normalized: f64,
}

/// Mean per-example log-likelihood of the gold labels on `batch` (tagging
/// sequences are length-normalized). Never positive.
pub fn compute_reward(net: &TaskNetwork, store: &ParamStore, batch: &Batch) -> Result<f64> {
    let mut tape = Tape::inference();
    let obj = net.objective(&mut tape, store, batch)?;
    Ok(tape.value(obj).item())
}

/// `exp(r_i / tau) / sum_j exp(r_j / tau)`, shifted by the maximum.
pub fn normalize_rewards(rewards: &[f64], tau: f64) -> Result<Vec<f64>> {
    if rewards.is_empty() {
        return Err(Error::Contract("no rewards to normalize".into()));
    }
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::Config(format!("temperature {tau} must be positive")));
    }
    if let Some(bad) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(Error::NonFinite(format!("reward {bad}")));
    }
    let max = rewards.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = rewards.iter().map(|r| ((r - max) / tau).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// What the controller's samples are scored against: `update` takes one
/// training step for an architecture, `reward` measures it.
pub trait ArchitectureEnv {
    fn update(&mut self, store: &mut ParamStore, actions: &[usize]) -> Result<()>;
    fn reward(&mut self, store: &ParamStore, actions: &[usize]) -> Result<f64>;
}

/// Trains the network assembled for each architecture on one batch.
pub struct BatchEnv<'a> {
    pub model: &'a Model,
    pub task: usize,
    pub batch: &'a Batch,
    pub adam: AdamConfig,
}

impl ArchitectureEnv for BatchEnv<'_> {
    fn update(&mut self, store: &mut ParamStore, actions: &[usize]) -> Result<()> {
        let net = self.model.network(self.task, actions)?;
        ascent_step(&net, store, self.batch, &net.params(), &self.adam)?;
        Ok(())
    }

    fn reward(&mut self, store: &ParamStore, actions: &[usize]) -> Result<f64> {
        compute_reward(&self.model.network(self.task, actions)?, store, self.batch)
    }
}

/// One Adam step raising the batch objective of `net`, restricted to
/// `trainable`. Returns the objective measured before the step.
pub fn ascent_step(
    net: &TaskNetwork,
    store: &mut ParamStore,
    batch: &Batch,
    trainable: &[ParamId],
    adam: &AdamConfig,
) -> Result<f64> {
    let mut tape = Tape::new();
    let obj = net.objective(&mut tape, store, batch)?;
    let before = tape.value(obj).item();
    let loss = tape.scale(obj, -1.0);
    tape.backward(loss)?;
    store.zero_grad(&net.params());
    store.absorb(&mut tape);
    adam_step(store, trainable, adam)?;
    Ok(before)
}

/// One controller step ascending `sum_i weight_i * log pi(actions_i)`.
pub fn policy_step(
    policy: &ControllerPolicy,
    store: &mut ParamStore,
    task: usize,
    weighted: &[(&[usize], f64)],
    adam: &AdamConfig,
) -> Result<()> {
    let mut tape = Tape::new();
    let mut total = None;
    for &(actions, w) in weighted {
        let lp = policy.log_prob_of(&mut tape, store, task, actions)?;
        let term = tape.scale(lp, w);
        total = Some(match total {
            None => term,
            Some(t) => tape.add(t, term)?,
        });
    }
    let total = total.ok_or_else(|| Error::Contract("policy step without samples".into()))?;
    let loss = tape.scale(total, -1.0);
    tape.backward(loss)?;
    let ids = policy.params();
    store.zero_grad(&ids);
    store.absorb(&mut tape);
    adam_step(store, &ids, adam)
}

/// The per-batch body of the joint search: sample `N` architectures, take one
/// training step for each, score all of them with the final parameters,
/// normalize the scores and move the policy toward the better samples.
pub fn algorithm_step(
    env: &mut impl ArchitectureEnv,
    policy: &ControllerPolicy,
    store: &mut ParamStore,
    task: usize,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<RewardRecord>> {
    let samples = (0..cfg.samples_per_task)
        .map(|_| policy.sample_architecture(store, task, cfg.epsilon, rng))
        .collect::<Result<Vec<_>>>()?;
    for s in &samples {
        env.update(store, &s.actions)?;
    }
    let rewards = samples
        .iter()
        .map(|s| env.reward(store, &s.actions))
        .collect::<Result<Vec<_>>>()?;
    let normalized = normalize_rewards(&rewards, cfg.temperature)?;
    let weighted: Vec<(&[usize], f64)> = samples
        .iter()
        .zip(&normalized)
        .map(|(s, &w)| (s.actions.as_slice(), w))
        .collect();
    policy_step(policy, store, task, &weighted, &AdamConfig::with_lr(cfg.lr_phi))?;
    Ok(samples
        .into_iter()
        .zip(rewards)
        .zip(normalized)
        .map(|((actions, reward), normalized)| RewardRecord {
            actions,
            reward,
            normalized,
        })
        .collect())
}

pub fn train_batch_for_task(
    model: &Model,
    policy: &ControllerPolicy,
    store: &mut ParamStore,
    task: usize,
    batch: &Batch,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<RewardRecord>> {
    let mut env = BatchEnv {
        model,
        task,
        batch,
        adam: AdamConfig::with_lr(cfg.lr_theta),
    };
    algorithm_step(&mut env, policy, store, task, cfg, rng)
}

/// Example accuracy for classification, token accuracy for tagging.
pub fn evaluate(net: &TaskNetwork, store: &ParamStore, samples: &[Sample], batch_size: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Contract(format!("task {}: evaluation on an empty split", net.task)));
    }
    let (mut hit, mut seen) = (0usize, 0usize);
    for (batch, chunk) in sequential_batches(samples, batch_size).zip(samples.chunks(batch_size)) {
        let predicted = net.predict(store, &batch)?;
        for (p, s) in predicted.iter().zip(chunk) {
            match (p, &s.label) {
                (Label::Class(a), Label::Class(b)) => {
                    hit += usize::from(a == b);
                    seen += 1;
                }
                (Label::Tags(a), Label::Tags(b)) => {
                    hit += a.iter().zip(b).filter(|(x, y)| x == y).count();
                    seen += b.len();
                }
                _ => return Err(Error::Contract("prediction kind differs from label kind".into())),
            }
        }
    }
    Ok(hit as f64 / seen as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskEpoch {
    pub task: usize,
    /// Architecture evaluated on dev (greedy decode; empty for baselines).
    pub actions: Vec<usize>,
    pub dev_metric: f64,
    /// Mean raw training reward over the epoch's batches.
    pub reward_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub tasks: Vec<TaskEpoch>,
    pub dev_mean: f64,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub epochs_done: usize,
    pub rng: ChaCha8Rng,
    pub history: Vec<EpochRecord>,
    pub best_dev: Option<f64>,
    pub best_epoch: Option<usize>,
    pub bad_epochs: usize,
    pub best_params: Option<Vec<Tensor>>,
    pub stopped: bool,
}

impl TrainState {
    pub fn new(seed: u64) -> Self {
        TrainState {
            epochs_done: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            history: Vec::new(),
            best_dev: None,
            best_epoch: None,
            bad_epochs: 0,
            best_params: None,
            stopped: false,
        }
    }

    /// Early-stopping bookkeeping for the epoch just counted in
    /// `epochs_done`. Returns whether `dev_mean` is a new best (strictly
    /// greater); `patience` consecutive non-improving epochs stop training.
    pub fn observe(&mut self, dev_mean: f64, patience: usize) -> bool {
        if self.best_dev.is_none_or(|b| dev_mean > b) {
            self.best_dev = Some(dev_mean);
            self.best_epoch = Some(self.epochs_done);
            self.bad_epochs = 0;
            return true;
        }
        self.bad_epochs += 1;
        if self.bad_epochs >= patience {
            self.stopped = true;
        }
        false
    }

    pub fn finished(&self, cfg: &TrainConfig) -> bool {
        self.stopped || self.epochs_done >= cfg.max_epochs
    }
}

/// Binds a suite, its model, the optional controller and the configuration.
#[derive(Clone, Copy, Debug)]
pub struct Trainer<'a> {
    pub suite: &'a Suite,
    pub model: &'a Model,
    pub policy: Option<&'a ControllerPolicy>,
    pub cfg: &'a TrainConfig,
}

impl<'a> Trainer<'a> {
    pub fn new(
        suite: &'a Suite,
        model: &'a Model,
        policy: Option<&'a ControllerPolicy>,
        cfg: &'a TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if model.scheme.uses_controller() != policy.is_some() {
            return Err(Error::Config(format!(
                "scheme {} {} a controller",
                model.scheme.as_str(),
                if policy.is_some() { "does not take" } else { "needs" }
            )));
        }
        if model.task_count() != suite.tasks.len() {
            return Err(Error::Contract("model and suite disagree on the task count".into()));
        }
        Ok(Trainer {
            suite,
            model,
            policy,
            cfg,
        })
    }

    /// Current architecture of every task: greedy decode, or empty for
    /// fixed-topology schemes.
    pub fn architectures(&self, store: &ParamStore) -> Result<Vec<Vec<usize>>> {
        (0..self.suite.tasks.len())
            .map(|k| match self.policy {
                Some(p) => Ok(p.greedy_decode(store, k)?.actions),
                None => Ok(Vec::new()),
            })
            .collect()
    }

    pub fn networks(&self, store: &ParamStore) -> Result<Vec<TaskNetwork>> {
        self.architectures(store)?
            .iter()
            .enumerate()
            .map(|(k, a)| self.model.network(k, a))
            .collect()
    }

    /// One pass over every task's training split, one batch per task in
    /// turn, followed by dev evaluation and the early-stopping bookkeeping.
    pub fn run_epoch(&self, store: &mut ParamStore, state: &mut TrainState) -> Result<EpochRecord> {
        let tasks = &self.suite.tasks;
        let mut iters: Vec<_> = tasks
            .iter()
            .map(|t| batch_iterator(&t.train, self.cfg.batch_size, &mut state.rng))
            .collect();
        let mut reward_sums = vec![0.0; tasks.len()];
        let mut reward_counts = vec![0usize; tasks.len()];
        let adam = AdamConfig::with_lr(self.cfg.lr_theta);
        let mut index = 0;
        loop {
            let mut progressed = false;
            for (k, it) in iters.iter_mut().enumerate() {
                let Some(batch) = it.next() else { continue };
                progressed = true;
                let context = |source: Error| Error::Training {
                    task: tasks[k].name.clone(),
                    batch: index,
                    source: Box::new(source),
                };
                match self.policy {
                    Some(policy) => {
                        let records = train_batch_for_task(
                            self.model,
                            policy,
                            store,
                            k,
                            &batch,
                            self.cfg,
                            &mut state.rng,
                        )
                        .map_err(context)?;
                        reward_sums[k] += records.iter().map(|r| r.reward).sum::<f64>();
                        reward_counts[k] += records.len();
                    }
                    None => {
                        let net = self.model.network(k, &[]).map_err(context)?;
                        let r = ascent_step(&net, store, &batch, &net.params(), &adam).map_err(context)?;
                        reward_sums[k] += r;
                        reward_counts[k] += 1;
                    }
                }
            }
            if !progressed {
                break;
            }
            index += 1;
        }

        let archs = self.architectures(store)?;
        let mut entries = Vec::new();
        for (k, task) in tasks.iter().enumerate() {
            let net = self.model.network(k, &archs[k])?;
            entries.push(TaskEpoch {
                task: k,
                actions: archs[k].clone(),
                dev_metric: evaluate(&net, store, &task.dev, self.cfg.batch_size)?,
                reward_mean: reward_sums[k] / reward_counts[k].max(1) as f64,
            });
        }
        let dev_mean = entries.iter().map(|e| e.dev_metric).sum::<f64>() / entries.len() as f64;
        state.epochs_done += 1;
        let record = EpochRecord {
            epoch: state.epochs_done,
            tasks: entries,
            dev_mean,
        };
        if state.observe(dev_mean, self.cfg.patience) {
            state.best_params = Some(store.snapshot());
        }
        state.history.push(record.clone());
        Ok(record)
    }

    /// Runs epochs until early stopping, `max_epochs`, or `limit` further
    /// epochs, whichever comes first.
    pub fn train(&self, store: &mut ParamStore, state: &mut TrainState, limit: Option<usize>) -> Result<()> {
        let mut ran = 0;
        while !state.finished(self.cfg) && limit.is_none_or(|l| ran < l) {
            self.run_epoch(store, state)?;
            ran += 1;
        }
        Ok(())
    }

    /// Puts the best epoch's parameters back into `store`.
    pub fn restore_best(&self, store: &mut ParamStore, state: &TrainState) -> Result<()> {
        match &state.best_params {
            Some(values) => store.restore(values),
            None => Ok(()),
        }
    }
}

/// Trains from scratch to completion and leaves the best epoch's parameters
/// in `store`.
pub fn train_loop(
    suite: &Suite,
    model: &Model,
    policy: Option<&ControllerPolicy>,
    store: &mut ParamStore,
    cfg: &TrainConfig,
) -> Result<TrainState> {
    let trainer = Trainer::new(suite, model, policy, cfg)?;
    let mut state = TrainState::new(cfg.seed);
    trainer.train(store, &mut state, None)?;
    trainer.restore_best(store, &state)?;
    Ok(state)
}

/// A task network adapted on its own, with the store it was adapted in.
#[derive(Clone, Debug)]
pub struct FineTuned {
    pub network: TaskNetwork,
    pub store: ParamStore,
    pub dev_before: f64,
    pub dev_after: f64,
    pub epochs: usize,
}

/// Trains only the private partition of `task`'s network (for `actions`) on
/// its training split, keeping the best dev epoch. Works on a copy of
/// `store`, so other tasks never see the adaptation.
pub fn fine_tune_task(
    model: &Model,
    store: &ParamStore,
    suite: &Suite,
    task: usize,
    actions: &[usize],
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<FineTuned> {
    let spec = suite
        .tasks
        .get(task)
        .ok_or_else(|| Error::bounds("task", task, suite.tasks.len()))?;
    let network = model.network(task, actions)?;
    let (_, private) = network.parameter_partition();
    let mut store = store.clone();
    let adam = AdamConfig::with_lr(cfg.lr_theta);
    let dev_before = evaluate(&network, &store, &spec.dev, cfg.batch_size)?;
    let mut best = (dev_before, private.iter().map(|&id| store.value(id).clone()).collect::<Vec<_>>());
    let mut bad = 0;
    let mut epochs = 0;
    while epochs < cfg.fine_tune_epochs && bad < cfg.patience {
        for batch in batch_iterator(&spec.train, cfg.batch_size, rng) {
            ascent_step(&network, &mut store, &batch, &private, &adam)?;
        }
        epochs += 1;
        let dev = evaluate(&network, &store, &spec.dev, cfg.batch_size)?;
        if dev > best.0 {
            best = (dev, private.iter().map(|&id| store.value(id).clone()).collect());
            bad = 0;
        } else {
            bad += 1;
        }
    }
    for (&id, value) in private.iter().zip(best.1) {
        *store.value_mut(id) = value;
    }
    Ok(FineTuned {
        network,
        store,
        dev_before,
        dev_after: best.0,
        epochs,
    })
}

/// Fine-tunes every task on its current architecture.
pub fn fine_tune_all(trainer: &Trainer, store: &ParamStore, rng: &mut ChaCha8Rng) -> Result<Vec<FineTuned>> {
    let archs = trainer.architectures(store)?;
    (0..trainer.suite.tasks.len())
        .map(|k| fine_tune_task(trainer.model, store, trainer.suite, k, &archs[k], trainer.cfg, rng))
        .collect()
}

/// Name of the evaluation metric for a task kind.
pub fn metric_name(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Classification => "accuracy",
        TaskKind::Tagging => "token_accuracy",
    }
}
