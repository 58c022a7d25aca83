//! Shared model plumbing: activation choice, the on-tape graph state, and
//! parameter binding.

use diffcore::{DTensor, ParamStore, Tape, Tensor};
use serde::{Deserialize, Serialize};

use crate::data::GraphBatch;
use crate::error::{PasError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Elu,
    /// No nonlinearity; used by equivalence tests with hand-set weights.
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: DTensor) -> DTensor {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Elu => tape.elu(x),
            Activation::Identity => x,
        }
    }
}

/// One graph's state on the tape: weighted adjacency, node features, and
/// the soft survival mask. Entries of masked-out nodes are exactly zero.
#[derive(Clone, Copy, Debug)]
pub struct MixedGraph {
    pub adj: DTensor,
    pub feat: DTensor,
    pub mask: DTensor,
    pub n: usize,
}

impl MixedGraph {
    /// Loads graph `g` of a batch onto the tape as constants.
    pub fn from_batch(tape: &mut Tape, batch: &GraphBatch, g: usize) -> Self {
        let adj = tape.constant(batch.adj_block(g).clone());
        let feat = tape.constant(batch.feat_block(g));
        let (start, end) = batch.node_range(g);
        let mask_vals: Vec<f64> = batch.mask()[start..end].to_vec();
        let n = end - start;
        let mask = tape.constant(Tensor::from_vec(n, 1, mask_vals));
        MixedGraph { adj, feat, mask, n }
    }

    /// Nodes currently alive (mask strictly positive).
    pub fn active(&self, tape: &Tape) -> Vec<bool> {
        tape.value(self.mask).data().iter().map(|&m| m > 0.0).collect()
    }
}

/// Read-only handle for binding stored parameters onto a tape, marking
/// them trainable or frozen wholesale.
#[derive(Clone, Copy)]
pub struct Binder<'a> {
    pub store: &'a ParamStore,
    pub trainable: bool,
}

impl<'a> Binder<'a> {
    pub fn new(store: &'a ParamStore, trainable: bool) -> Self {
        Binder { store, trainable }
    }

    pub fn get(&self, tape: &mut Tape, key: &str) -> DTensor {
        tape.param(self.store, key, self.trainable)
    }
}

/// Checks a node's values for NaN/Inf, naming the producing operation.
pub fn ensure_finite(tape: &Tape, t: DTensor, what: &str) -> Result<()> {
    if tape.value(t).is_finite() {
        Ok(())
    } else {
        Err(PasError::NonFinite(what.to_string()))
    }
}
