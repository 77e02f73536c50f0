use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ModulePool, SharingScheme};
use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::layers::{AvgPoolLinearHead, BiLstmModule, CrfLayer, CrossStitchUnit, EmbeddingTable, Linear, INIT_SCALE};
use crate::tasks::{Batch, BatchLabels, Label, Suite, TaskKind};

/// Initial off-diagonal jitter of cross-stitch mixing matrices.
const STITCH_NOISE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub scheme: SharingScheme,
    /// Number of modules in the pool (searched scheme only).
    #[serde(default = "default_pool_size")]
    pub pool_size: usize,
    /// Module width `d`.
    #[serde(default = "default_width")]
    pub width: usize,
    /// Word embedding width; projected to `width` when they differ.
    #[serde(default = "default_width")]
    pub embed_dim: usize,
}

fn default_pool_size() -> usize {
    4
}

fn default_width() -> usize {
    32
}

impl ModelConfig {
    pub fn new(scheme: SharingScheme) -> Self {
        ModelConfig {
            scheme,
            pool_size: default_pool_size(),
            width: default_width(),
            embed_dim: default_width(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.width % 2 != 0 {
            return Err(Error::Config(format!("width {} must be positive and even", self.width)));
        }
        if self.embed_dim == 0 {
            return Err(Error::Config("embed_dim must be positive".into()));
        }
        if self.scheme == SharingScheme::Searched && self.pool_size == 0 {
            return Err(Error::Config("pool_size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Task-specific output layer.
#[derive(Clone, Debug, PartialEq)]
pub enum Head {
    Classifier(AvgPoolLinearHead),
    /// Per-step emission scores decoded by a linear-chain CRF.
    Tagger { emission: Linear, crf: CrfLayer },
}

impl Head {
    fn new(
        store: &mut ParamStore,
        name: &str,
        kind: TaskKind,
        input_dim: usize,
        labels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(match kind {
            TaskKind::Classification => {
                Head::Classifier(AvgPoolLinearHead::new(store, name, input_dim, labels, INIT_SCALE, rng)?)
            }
            TaskKind::Tagging => Head::Tagger {
                emission: Linear::new(store, &format!("{name}.emission"), input_dim, labels, INIT_SCALE, rng)?,
                crf: CrfLayer::new(store, &format!("{name}.crf"), labels, INIT_SCALE, rng)?,
            },
        })
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Head::Classifier(h) => h.input_dim(),
            Head::Tagger { emission, .. } => emission.input_dim,
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        match self {
            Head::Classifier(h) => h.params(),
            Head::Tagger { emission, crf } => {
                let mut p = emission.params();
                p.extend(crf.params());
                p
            }
        }
    }
}

/// Per-task columns of two stacked modules, with a cross-stitch unit after
/// each layer.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossStitchColumns {
    /// `layers[l][k]` is task `k`'s module at depth `l`.
    pub layers: Vec<Vec<BiLstmModule>>,
    pub units: Vec<CrossStitchUnit>,
}

impl CrossStitchColumns {
    fn new(store: &mut ParamStore, tasks: usize, width: usize, rng: &mut impl Rng) -> Result<Self> {
        let mut layers = Vec::new();
        let mut units = Vec::new();
        for l in 0..2 {
            layers.push(
                (0..tasks)
                    .map(|k| BiLstmModule::new(store, &format!("stitch.l{l}.t{k}"), k, width, rng))
                    .collect::<Result<Vec<_>>>()?,
            );
            units.push(CrossStitchUnit::new(store, &format!("stitch.u{l}"), tasks, STITCH_NOISE, rng)?);
        }
        Ok(CrossStitchColumns { layers, units })
    }

    /// Runs every column on `steps` and returns task `task`'s mixed output.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        steps: &[Var],
        masks: &[Option<Var>],
        task: usize,
    ) -> Result<Vec<Var>> {
        let tasks = self.units[0].tasks;
        let mut inputs: Vec<Vec<Var>> = vec![steps.to_vec(); tasks];
        let depth = self.layers.len();
        for (l, (modules, unit)) in self.layers.iter().zip(&self.units).enumerate() {
            let outs = modules
                .iter()
                .zip(&inputs)
                .map(|(m, x)| m.forward(tape, store, x, masks))
                .collect::<Result<Vec<_>>>()?;
            let targets: Vec<usize> = if l + 1 == depth { vec![task] } else { (0..tasks).collect() };
            let mut mixed = vec![Vec::new(); tasks];
            for t in 0..steps.len() {
                let column: Vec<Var> = outs.iter().map(|o| o[t]).collect();
                for &i in &targets {
                    mixed[i].push(unit.mix_one(tape, store, &column, i)?);
                }
            }
            inputs = mixed;
        }
        Ok(std::mem::take(&mut inputs[task]))
    }

    pub fn params(&self) -> Vec<ParamId> {
        let mut p: Vec<ParamId> = self.layers.iter().flatten().flat_map(|m| m.params()).collect();
        p.extend(self.units.iter().flat_map(|u| u.params()));
        p
    }
}

/// How a task network routes features between its shared and private parts.
#[derive(Clone, Debug, PartialEq)]
pub enum Topology {
    /// Shared chain beside the private module; per-step outputs are
    /// concatenated as `[shared; private]`. An empty chain leaves the private
    /// branch alone.
    Parallel,
    /// Shared chain, then the private module.
    Stacked,
    /// Shared chain only.
    SharedOnly,
    CrossStitch(CrossStitchColumns),
}

/// Everything a task owns outright.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskParts {
    pub kind: TaskKind,
    pub labels: usize,
    pub embedding: EmbeddingTable,
    pub projection: Option<Linear>,
    pub private: Option<BiLstmModule>,
    pub head: Head,
}

/// A runnable network for one task. Layers refer to parameters by id, so
/// networks built over the same pool share storage.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskNetwork {
    pub task: usize,
    pub kind: TaskKind,
    pub width: usize,
    pub embedding: EmbeddingTable,
    pub projection: Option<Linear>,
    /// Shared modules in application order (repeats allowed).
    pub shared: Vec<BiLstmModule>,
    pub private: Option<BiLstmModule>,
    pub topology: Topology,
    pub head: Head,
}

fn push_unique(out: &mut Vec<ParamId>, ids: impl IntoIterator<Item = ParamId>) {
    for id in ids {
        if !out.contains(&id) {
            out.push(id);
        }
    }
}

impl TaskNetwork {
    /// Width of the features reaching the head.
    pub fn head_input_width(&self) -> usize {
        match self.topology {
            Topology::Parallel if !self.shared.is_empty() => 2 * self.width,
            _ => self.width,
        }
    }

    /// `(shared, private)` parameter ids; disjoint and together exhaustive.
    pub fn parameter_partition(&self) -> (Vec<ParamId>, Vec<ParamId>) {
        let mut shared = Vec::new();
        for m in &self.shared {
            push_unique(&mut shared, m.params());
        }
        if let Topology::CrossStitch(cols) = &self.topology {
            push_unique(&mut shared, cols.params());
        }
        let mut private = Vec::new();
        push_unique(&mut private, [self.embedding.weights]);
        if let Some(p) = &self.projection {
            push_unique(&mut private, p.params());
        }
        if let Some(p) = &self.private {
            push_unique(&mut private, p.params());
        }
        push_unique(&mut private, self.head.params());
        (shared, private)
    }

    pub fn params(&self) -> Vec<ParamId> {
        let (mut shared, private) = self.parameter_partition();
        shared.extend(private);
        shared
    }

    fn inputs(&self, tape: &mut Tape, store: &ParamStore, batch: &Batch) -> Result<Vec<Var>> {
        (0..batch.max_len)
            .map(|t| {
                let e = self.embedding.lookup(tape, store, &batch.step_ids(t))?;
                match &self.projection {
                    Some(p) => p.forward(tape, store, e),
                    None => Ok(e),
                }
            })
            .collect()
    }

    /// Per-step `B x head_input_width` features and the validity masks used.
    pub fn features(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        batch: &Batch,
    ) -> Result<(Vec<Var>, Vec<Option<Var>>)> {
        let masks = (0..batch.max_len)
            .map(|t| {
                batch
                    .step_mask(t)
                    .map(|m| Tensor::vector(m).map(|m| tape.constant(m)))
                    .transpose()
            })
            .collect::<Result<Vec<_>>>()?;
        let x = self.inputs(tape, store, batch)?;
        let chain = |tape: &mut Tape, mut x: Vec<Var>| -> Result<Vec<Var>> {
            for m in &self.shared {
                x = m.forward(tape, store, &x, &masks)?;
            }
            Ok(x)
        };
        let private = |tape: &mut Tape, x: &[Var]| -> Result<Vec<Var>> {
            self.private
                .as_ref()
                .ok_or_else(|| Error::Contract("topology needs a private module".into()))?
                .forward(tape, store, x, &masks)
        };
        let out = match &self.topology {
            Topology::Parallel => {
                let p = private(tape, &x)?;
                if self.shared.is_empty() {
                    p
                } else {
                    let s = chain(tape, x)?;
                    s.into_iter()
                        .zip(p)
                        .map(|(s, p)| tape.concat_cols(&[s, p]))
                        .collect::<Result<_>>()?
                }
            }
            Topology::Stacked => {
                let s = chain(tape, x)?;
                private(tape, &s)?
            }
            Topology::SharedOnly => chain(tape, x)?,
            Topology::CrossStitch(cols) => cols.forward(tape, store, &x, &masks, self.task)?,
        };
        Ok((out, masks))
    }

    /// Log-likelihood of every example's gold label: `log p(y|x)` for
    /// classification, CRF sequence log-likelihood divided by length for
    /// tagging. Returns a length-`B` vector.
    pub fn log_likelihoods(&self, tape: &mut Tape, store: &ParamStore, batch: &Batch) -> Result<Var> {
        let (feats, masks) = self.features(tape, store, batch)?;
        let inv = tape.constant(Tensor::vector(batch.inv_lengths())?);
        match (&self.head, &batch.labels) {
            (Head::Classifier(head), BatchLabels::Classes(gold)) => {
                let lp = head.forward(tape, store, &feats, &masks, inv)?;
                tape.pick(lp, gold)
            }
            (Head::Tagger { emission, crf }, BatchLabels::Tags(gold)) => {
                let emissions = feats
                    .iter()
                    .map(|&f| emission.forward_tail(tape, store, f))
                    .collect::<Result<Vec<_>>>()?;
                let tags: Vec<&[usize]> = gold.iter().map(Vec::as_slice).collect();
                let ll = crf.log_likelihood(tape, store, &emissions, &tags)?;
                tape.mul(ll, inv)
            }
            _ => Err(Error::Contract(format!("batch labels do not match task {}'s head", self.task))),
        }
    }

    /// Mean of [`TaskNetwork::log_likelihoods`] over the batch.
    pub fn objective(&self, tape: &mut Tape, store: &ParamStore, batch: &Batch) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::Contract("objective over an empty batch".into()));
        }
        let ll = self.log_likelihoods(tape, store, batch)?;
        let total = tape.sum(ll);
        Ok(tape.scale(total, 1.0 / batch.len() as f64))
    }

    /// Predicted class (ties to the lower index) or Viterbi tag path per row.
    pub fn predict(&self, store: &ParamStore, batch: &Batch) -> Result<Vec<Label>> {
        let mut tape = Tape::inference();
        let (feats, masks) = self.features(&mut tape, store, batch)?;
        match &self.head {
            Head::Classifier(head) => {
                let inv = tape.constant(Tensor::vector(batch.inv_lengths())?);
                let lp = head.forward(&mut tape, store, &feats, &masks, inv)?;
                let value = tape.value(lp);
                Ok((0..value.rows()).map(|r| Label::Class(argmax(value.row(r)))).collect())
            }
            Head::Tagger { emission, crf } => {
                let emissions = feats
                    .iter()
                    .map(|&f| emission.forward_tail(&mut tape, store, f))
                    .collect::<Result<Vec<_>>>()?;
                let k = crf.labels;
                batch
                    .lengths
                    .iter()
                    .enumerate()
                    .map(|(b, &len)| {
                        let data: Vec<f64> = emissions[..len]
                            .iter()
                            .flat_map(|&e| tape.value(e).row(b).to_vec())
                            .collect();
                        let (path, _) = crf.viterbi(store, &Tensor::matrix(len, k, data)?)?;
                        Ok(Label::Tags(path))
                    })
                    .collect()
            }
        }
    }
}

/// Index of the largest value; the first one on ties.
pub(crate) fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Network for `task` whose shared part is `actions` applied in order over the
/// pool, next to the task's private module.
pub fn assemble_searched(
    pool: &ModulePool,
    parts: &TaskParts,
    task: usize,
    actions: &[usize],
) -> Result<TaskNetwork> {
    let shared = actions
        .iter()
        .map(|&a| pool.module(a).cloned())
        .collect::<Result<Vec<_>>>()?;
    if parts.private.is_none() {
        return Err(Error::Contract(format!("task {task} has no private module")));
    }
    Ok(TaskNetwork {
        task,
        kind: parts.kind,
        width: pool.width(),
        embedding: parts.embedding.clone(),
        projection: parts.projection.clone(),
        shared,
        private: parts.private.clone(),
        topology: Topology::Parallel,
        head: parts.head.clone(),
    })
}

/// Fixed-topology networks of a baseline model, one per task.
pub fn assemble_baseline(model: &Model) -> Result<Vec<TaskNetwork>> {
    if model.scheme == SharingScheme::Searched {
        return Err(Error::Contract("the searched scheme has no fixed topology".into()));
    }
    (0..model.tasks.len()).map(|k| model.network(k, &[])).collect()
}

fn input_layer(
    store: &mut ParamStore,
    name: &str,
    vocab_size: usize,
    cfg: &ModelConfig,
    rng: &mut impl Rng,
) -> Result<(EmbeddingTable, Option<Linear>)> {
    let embedding = EmbeddingTable::new(store, name, vocab_size, cfg.embed_dim, INIT_SCALE, rng)?;
    let projection = if cfg.embed_dim != cfg.width {
        Some(Linear::new(store, &format!("{name}.proj"), cfg.embed_dim, cfg.width, INIT_SCALE, rng)?)
    } else {
        None
    };
    Ok((embedding, projection))
}

/// All layers of a multi-task model under one sharing scheme.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub scheme: SharingScheme,
    pub width: usize,
    pub pool: Option<ModulePool>,
    pub stitch: Option<CrossStitchColumns>,
    pub tasks: Vec<TaskParts>,
}

impl Model {
    pub fn build(store: &mut ParamStore, suite: &Suite, cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        suite.validate()?;
        let scheme = cfg.scheme;
        let d = cfg.width;
        let pool = match scheme {
            SharingScheme::Searched => Some(ModulePool::new(store, cfg.pool_size, d, rng)?),
            SharingScheme::FullyShared | SharingScheme::StackSharePrivate | SharingScheme::ParallelSharePrivate => {
                Some(ModulePool::new(store, 1, d, rng)?)
            }
            SharingScheme::CrossStitch | SharingScheme::SingleTask => None,
        };
        let stitch = match scheme {
            SharingScheme::CrossStitch => Some(CrossStitchColumns::new(store, suite.tasks.len(), d, rng)?),
            _ => None,
        };
        let common = match scheme {
            SharingScheme::SingleTask => None,
            _ => Some(input_layer(store, "embed", suite.vocab_size, cfg, rng)?),
        };
        let head_width = match scheme {
            SharingScheme::Searched | SharingScheme::ParallelSharePrivate => 2 * d,
            _ => d,
        };
        let mut tasks = Vec::new();
        for task in &suite.tasks {
            let k = task.id;
            let (embedding, projection) = match &common {
                Some(c) => c.clone(),
                None => input_layer(store, &format!("task{k}.embed"), suite.vocab_size, cfg, rng)?,
            };
            let private = match scheme {
                SharingScheme::FullyShared | SharingScheme::CrossStitch => None,
                _ => Some(BiLstmModule::new(store, &format!("task{k}.private"), k, d, rng)?),
            };
            let head = Head::new(store, &format!("task{k}.head"), task.kind, head_width, task.label_count(), rng)?;
            tasks.push(TaskParts {
                kind: task.kind,
                labels: task.label_count(),
                embedding,
                projection,
                private,
                head,
            });
        }
        Ok(Model {
            scheme,
            width: d,
            pool,
            stitch,
            tasks,
        })
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn pool_size(&self) -> usize {
        self.pool.as_ref().map_or(0, ModulePool::len)
    }

    fn parts(&self, task: usize) -> Result<&TaskParts> {
        self.tasks.get(task).ok_or_else(|| Error::bounds("task", task, self.tasks.len()))
    }

    /// Network for `task`. `actions` select shared modules under the searched
    /// scheme and must be empty otherwise.
    pub fn network(&self, task: usize, actions: &[usize]) -> Result<TaskNetwork> {
        let parts = self.parts(task)?;
        if self.scheme == SharingScheme::Searched {
            let pool = self.pool.as_ref().expect("searched model has a pool");
            return assemble_searched(pool, parts, task, actions);
        }
        if !actions.is_empty() {
            return Err(Error::Contract(format!(
                "{} networks take no actions",
                self.scheme.as_str()
            )));
        }
        let shared_module = || {
            self.pool
                .as_ref()
                .and_then(|p| p.modules().first().cloned())
                .expect("baseline model has one shared module")
        };
        let (shared, topology) = match self.scheme {
            SharingScheme::FullyShared => (vec![shared_module()], Topology::SharedOnly),
            SharingScheme::StackSharePrivate => (vec![shared_module()], Topology::Stacked),
            SharingScheme::ParallelSharePrivate => (vec![shared_module()], Topology::Parallel),
            SharingScheme::CrossStitch => (
                Vec::new(),
                Topology::CrossStitch(self.stitch.clone().expect("cross-stitch model has columns")),
            ),
            SharingScheme::SingleTask => (Vec::new(), Topology::Parallel),
            SharingScheme::Searched => unreachable!(),
        };
        Ok(TaskNetwork {
            task,
            kind: parts.kind,
            width: self.width,
            embedding: parts.embedding.clone(),
            projection: parts.projection.clone(),
            shared,
            private: parts.private.clone(),
            topology,
            head: parts.head.clone(),
        })
    }
}
