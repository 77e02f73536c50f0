//! The shared module pool and assembly of per-task networks, both from a
//! controller's action sequence and for the fixed-topology baselines.

mod network;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::layers::BiLstmModule;

pub(crate) use network::argmax;
pub use network::{
    assemble_baseline, assemble_searched, CrossStitchColumns, Head, Model, ModelConfig, TaskNetwork,
    TaskParts, Topology,
};

/// `L` bidirectional modules of one width, referenced by every task network
/// that selects them.
#[derive(Clone, Debug, PartialEq)]
pub struct ModulePool {
    modules: Vec<BiLstmModule>,
    width: usize,
}

impl ModulePool {
    pub fn new(store: &mut ParamStore, size: usize, width: usize, rng: &mut impl Rng) -> Result<Self> {
        if size == 0 {
            return Err(Error::Config("module pool needs at least one module".into()));
        }
        let modules = (0..size)
            .map(|i| BiLstmModule::new(store, &format!("pool.m{i}"), i, width, rng))
            .collect::<Result<_>>()?;
        Ok(ModulePool { modules, width })
    }

    pub fn len(&self) -> usize {
        self.modules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modules.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn module(&self, i: usize) -> Result<&BiLstmModule> {
        self.modules.get(i).ok_or_else(|| Error::bounds("module index", i, self.modules.len()))
    }

    pub fn modules(&self) -> &[BiLstmModule] {
        &self.modules
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.modules.iter().flat_map(|m| m.params()).collect()
    }
}

/// Module indices chosen for one task, in application order, plus the
/// sampling policy's log-probability of every decision (including the final
/// Stop unless it was forced by the depth cap).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ActionSequence {
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
}

impl ActionSequence {
    pub fn new(actions: Vec<usize>) -> Self {
        ActionSequence {
            actions,
            log_probs: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn log_prob(&self) -> f64 {
        self.log_probs.iter().sum()
    }

    pub fn validate(&self, pool_size: usize, max_depth: usize) -> Result<()> {
        if self.actions.len() > max_depth {
            return Err(Error::Contract(format!(
                "{} actions exceed the depth cap {max_depth}",
                self.actions.len()
            )));
        }
        match self.actions.iter().find(|&&a| a >= pool_size) {
            Some(&bad) => Err(Error::bounds("module index", bad, pool_size)),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SharingScheme {
    /// Shared stack chosen per task by the controller, beside a private module.
    Searched,
    /// One module shared by every task, task-specific heads.
    FullyShared,
    /// Shared module feeding a private module.
    StackSharePrivate,
    /// Shared and private modules side by side, outputs concatenated.
    ParallelSharePrivate,
    /// Two-layer per-task columns mixed by cross-stitch units.
    CrossStitch,
    /// Private module only.
    SingleTask,
}

impl SharingScheme {
    pub fn as_str(self) -> &'static str {
        match self {
            SharingScheme::Searched => "searched",
            SharingScheme::FullyShared => "fully_shared",
            SharingScheme::StackSharePrivate => "stack_share_private",
            SharingScheme::ParallelSharePrivate => "parallel_share_private",
            SharingScheme::CrossStitch => "cross_stitch",
            SharingScheme::SingleTask => "single_task",
        }
    }

    pub fn uses_controller(self) -> bool {
        self == SharingScheme::Searched
    }
}
