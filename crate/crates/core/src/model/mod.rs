//! Node classifiers built on the tape: ES-GNN and its ablations plus the
//! MLP / SGC / GCN baselines.

pub mod baselines;
pub mod esgnn;
pub mod params;

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Labels, NodeSplit};
use crate::tensor::{CsrMatrix, Tape, Var};

pub use baselines::{Gcn, Mlp, Sgc};
pub use esgnn::{EdgeSplit, EsGnn, EsGnnConfig, Inspection, Variant};
pub use params::{ParamSpec, ParamVars, Params};

/// Features below this density are multiplied through the sparse path.
pub const SPARSE_FEATURE_DENSITY: f64 = 0.25;

/// Everything a forward pass reads.
#[derive(Clone, Copy)]
pub struct ModelInput<'a> {
    pub graph: &'a Graph,
    pub x: &'a Array2<f64>,
    pub x_sparse: Option<&'a CsrMatrix>,
}

impl<'a> ModelInput<'a> {
    pub fn new(graph: &'a Graph, x: &'a Array2<f64>) -> Self {
        ModelInput {
            graph,
            x,
            x_sparse: None,
        }
    }

    pub fn with_sparse(mut self, xs: &'a CsrMatrix) -> Self {
        self.x_sparse = Some(xs);
        self
    }

    pub fn num_nodes(&self) -> usize {
        self.x.nrows()
    }

    pub fn num_features(&self) -> usize {
        self.x.ncols()
    }

    /// `X W`, through the sparse copy of `X` when one is attached.
    pub fn project(&self, tape: &mut Tape<'a>, w: Var) -> Result<Var> {
        match self.x_sparse {
            Some(xs) => tape.spmm(xs, w),
            None => tape.matmul_const(self.x, w),
        }
    }

    pub fn check(&self) -> Result<()> {
        if self.x.nrows() != self.graph.num_nodes() {
            return Err(Error::shape(
                "model input",
                format!(
                    "{} feature rows for {} nodes",
                    self.x.nrows(),
                    self.graph.num_nodes()
                ),
            ));
        }
        Ok(())
    }
}

/// Training targets. Only training-set labels are ever copied in here, so
/// no loss term can see validation or test labels.
#[derive(Debug, Clone)]
pub struct Supervision {
    pub targets: Vec<(usize, usize)>,
    pub known: Vec<Option<usize>>,
    pub num_classes: usize,
}

impl Supervision {
    pub fn from_train(labels: &Labels, split: &NodeSplit) -> Result<Self> {
        if split.train.is_empty() {
            return Err(Error::Contract("empty training set".into()));
        }
        let mut known = vec![None; labels.len()];
        let mut targets = Vec::with_capacity(split.train.len());
        for &i in &split.train {
            if i >= labels.len() {
                return Err(Error::Contract(format!(
                    "train node {i} outside the label vector"
                )));
            }
            known[i] = Some(labels.get(i));
            targets.push((i, labels.get(i)));
        }
        Ok(Supervision {
            targets,
            known,
            num_classes: labels.num_classes(),
        })
    }
}

/// Handles to the loss pieces of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub pred: Var,
    pub icr: Option<Var>,
    pub logits: Var,
}

pub trait NodeClassifier: Send + Sync {
    fn name(&self) -> String;

    fn init(&self, num_features: usize, num_classes: usize, rng: &mut ChaCha8Rng)
        -> Result<Params>;

    /// Logits of every node. `rng == None` is evaluation mode.
    fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        p: &ParamVars,
        input: &ModelInput<'a>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var>;

    fn loss<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        p: &ParamVars,
        input: &ModelInput<'a>,
        sup: &'a Supervision,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<LossTerms> {
        let logits = self.forward(tape, p, input, rng)?;
        let pred = tape.cross_entropy(logits, &sup.targets)?;
        Ok(LossTerms {
            total: pred,
            pred,
            icr: None,
            logits,
        })
    }

    /// Evaluation-mode logits.
    fn predict(&self, params: &Params, input: &ModelInput<'_>) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let p = params.constants(&mut tape)?;
        let logits = self.forward(&mut tape, &p, input, None)?;
        Ok(tape.value(logits).clone())
    }
}

/// Model selector used by configs and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Esgnn,
    Mlp,
    Sgc,
    Gcn,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Esgnn => "esgnn",
            ModelKind::Mlp => "mlp",
            ModelKind::Sgc => "sgc",
            ModelKind::Gcn => "gcn",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "esgnn" => Ok(ModelKind::Esgnn),
            "mlp" => Ok(ModelKind::Mlp),
            "sgc" => Ok(ModelKind::Sgc),
            "gcn" => Ok(ModelKind::Gcn),
            _ => Err(Error::Contract(format!("unknown model `{s}`"))),
        }
    }
}
