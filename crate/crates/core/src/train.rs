//! Full-batch training with validation-accuracy early stopping.

use std::time::Instant;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Labels, NodeSplit};
use crate::io::Dataset;
use crate::model::{
    EsGnn, EsGnnConfig, Gcn, Mlp, ModelInput, ModelKind, NodeClassifier, Params, Sgc, Supervision,
    Variant,
};
use crate::tensor::{AdamConfig, AdamState, CsrMatrix, Tape, DEG_FLOOR};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub variant: Variant,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    /// Layers for ES-GNN and GCN, propagation steps for SGC. The MLP
    /// always has two layers.
    pub layers: usize,
    pub hidden: usize,
    pub eps_r: f64,
    pub eps_ir: f64,
    pub lambda_icr: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub icr_grad_through_agreement: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelKind::Esgnn,
            variant: Variant::FULL,
            lr: 0.01,
            weight_decay: 5e-4,
            dropout: 0.5,
            layers: 2,
            hidden: 64,
            eps_r: 0.5,
            eps_ir: 0.5,
            lambda_icr: 1e-3,
            epochs: 1000,
            patience: 100,
            seed: 0,
            icr_grad_through_agreement: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.patience == 0 {
            return Err(Error::Contract("epochs and patience must be >= 1".into()));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Contract(format!(
                "lr = {} must be positive",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Contract(format!(
                "weight_decay = {} must be >= 0",
                self.weight_decay
            )));
        }
        if self.layers == 0 || self.hidden == 0 {
            return Err(Error::Contract("layers and hidden must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Contract(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        if self.model == ModelKind::Esgnn {
            self.esgnn().validate()?;
        }
        Ok(())
    }

    pub fn esgnn(&self) -> EsGnnConfig {
        EsGnnConfig {
            hidden: self.hidden,
            layers: self.layers,
            eps_r: self.eps_r,
            eps_ir: self.eps_ir,
            lambda_icr: self.lambda_icr,
            dropout: self.dropout,
            variant: self.variant,
            icr_grad_through_agreement: self.icr_grad_through_agreement,
            deg_floor: DEG_FLOOR,
        }
    }

    /// Variant label for records; baselines have none.
    pub fn variant_label(&self) -> String {
        match self.model {
            ModelKind::Esgnn => self.variant.name(),
            _ => "-".into(),
        }
    }

    pub fn build(&self) -> Result<Box<dyn NodeClassifier>> {
        self.validate()?;
        Ok(match self.model {
            ModelKind::Esgnn => Box::new(EsGnn::new(self.esgnn())?),
            ModelKind::Mlp => Box::new(Mlp {
                hidden: self.hidden,
                dropout: self.dropout,
            }),
            ModelKind::Sgc => Box::new(Sgc::new(self.layers)),
            ModelKind::Gcn => Box::new(Gcn::new(self.layers, self.hidden, self.dropout)),
        })
    }

    /// Applies `key = value` overrides; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = |e: &dyn std::fmt::Display| Error::Contract(format!("{key} = {value}: {e}"));
        macro_rules! parse {
            () => {
                value.trim().parse().map_err(|e| bad(&e))?
            };
        }
        match key.trim() {
            "model" => self.model = parse!(),
            "variant" => self.variant = parse!(),
            "lr" => self.lr = parse!(),
            "weight_decay" | "reg" => self.weight_decay = parse!(),
            "dropout" => self.dropout = parse!(),
            "layers" | "K" | "k" => self.layers = parse!(),
            "hidden" | "d" => self.hidden = parse!(),
            "eps_r" | "eps_R" => self.eps_r = parse!(),
            "eps_ir" | "eps_IR" => self.eps_ir = parse!(),
            "lambda_icr" => self.lambda_icr = parse!(),
            "epochs" => self.epochs = parse!(),
            "patience" => self.patience = parse!(),
            "seed" => self.seed = parse!(),
            "icr_grad_through_agreement" => self.icr_grad_through_agreement = parse!(),
            other => return Err(Error::Contract(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Reads a flat `key = value` file; `#` starts a comment.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::Contract(format!("config line {}: expected key = value", i + 1))
            })?;
            self.set(k, v)
                .map_err(|e| Error::Contract(format!("config line {}: {e}", i + 1)))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub total: f64,
    pub pred: f64,
    pub icr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub val_curve: Vec<f64>,
    pub losses: Vec<LossRecord>,
    pub acc_val: f64,
    pub acc_test: f64,
    /// Loss terms of the training step that produced the best checkpoint.
    pub final_loss: LossRecord,
    pub wall_ms: u128,
    pub params: Params,
    /// Node degrees clamped at the floor, summed over all steps.
    pub clamped_degrees: usize,
}

/// Argmax accuracy over `nodes`; ties go to the smaller class id.
pub fn accuracy(logits: &Array2<f64>, labels: &Labels, nodes: &[usize]) -> Result<f64> {
    if nodes.is_empty() {
        return Err(Error::Contract("accuracy over an empty node set".into()));
    }
    let hits = nodes
        .iter()
        .filter(|&&i| argmax(logits.row(i)) == labels.get(i))
        .count();
    Ok(hits as f64 / nodes.len() as f64)
}

pub fn argmax(row: ndarray::ArrayView1<f64>) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = c;
        }
    }
    best
}

pub fn evaluate(
    model: &dyn NodeClassifier,
    params: &Params,
    input: &ModelInput<'_>,
    labels: &Labels,
    nodes: &[usize],
) -> Result<f64> {
    let logits = model.predict(params, input)?;
    accuracy(&logits, labels, nodes)
}

/// Trains `model` on `split.train`, selecting the checkpoint with the best
/// validation accuracy (earliest on ties).
pub fn train(
    model: &dyn NodeClassifier,
    data: &Dataset,
    x_sparse: Option<&CsrMatrix>,
    split: &NodeSplit,
    cfg: &TrainConfig,
) -> Result<TrainResult> {
    cfg.validate()?;
    data.validate()?;
    split.validate(data.num_nodes())?;
    if split.val.is_empty() || split.test.is_empty() {
        return Err(Error::Contract(
            "validation and test sets must be non-empty".into(),
        ));
    }
    let start = Instant::now();
    let mut input = ModelInput::new(&data.graph, &data.features);
    if let Some(xs) = x_sparse {
        input = input.with_sparse(xs);
    }
    let sup = Supervision::from_train(&data.labels, split)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = model.init(data.num_features(), data.num_classes(), &mut rng)?;
    let mut adam = AdamState::new(params.tensors());
    let adam_cfg = AdamConfig::new(cfg.lr, cfg.weight_decay);
    let decay = params.decay_mask().to_vec();

    let mut best = (f64::NEG_INFINITY, 0usize);
    let mut best_params = params.clone();
    let mut best_loss = None;
    let mut val_curve = Vec::new();
    let mut losses = Vec::new();
    let mut clamped = 0;
    for epoch in 0..cfg.epochs {
        let (record, grads) = {
            let mut tape = Tape::new();
            let pv = params.leaves(&mut tape)?;
            let terms = model
                .loss(&mut tape, &pv, &input, &sup, Some(&mut rng))
                .map_err(|e| diverged(e, epoch))?;
            let record = LossRecord {
                total: tape.scalar(terms.total),
                pred: tape.scalar(terms.pred),
                icr: terms.icr.map(|v| tape.scalar(v)),
            };
            let mut g = tape.backward(terms.total)?;
            clamped += tape.clamped_degrees();
            let grads: Vec<Array2<f64>> = pv.vars().iter().map(|&v| g.take(v)).collect();
            (record, grads)
        };
        adam.step(&adam_cfg, params.tensors_mut(), &grads, &decay)?;
        if params
            .tensors()
            .iter()
            .any(|t| t.iter().any(|v| !v.is_finite()))
        {
            return Err(Error::Diverged {
                epoch,
                detail: "non-finite parameter after update".into(),
            });
        }
        losses.push(record);

        let acc = evaluate(model, &params, &input, &data.labels, &split.val)
            .map_err(|e| diverged(e, epoch))?;
        val_curve.push(acc);
        if acc > best.0 {
            best = (acc, epoch);
            best_params = params.clone();
            best_loss = Some(record);
        }
        if epoch - best.1 >= cfg.patience {
            break;
        }
    }
    let acc_test = evaluate(model, &best_params, &input, &data.labels, &split.test)?;
    Ok(TrainResult {
        best_epoch: best.1,
        epochs_run: losses.len(),
        acc_val: best.0,
        acc_test,
        final_loss: best_loss.expect("at least one epoch"),
        val_curve,
        losses,
        wall_ms: start.elapsed().as_millis(),
        params: best_params,
        clamped_degrees: clamped,
    })
}

fn diverged(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite(op) => Error::Diverged {
            epoch,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

/// One row of the run-record CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub dataset: String,
    pub model: String,
    pub variant: String,
    #[serde(rename = "K")]
    pub k: usize,
    pub seed: u64,
    pub split_id: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    #[serde(rename = "eps_R")]
    pub eps_r: f64,
    #[serde(rename = "eps_IR")]
    pub eps_ir: f64,
    pub lambda_icr: f64,
    pub acc_val: f64,
    pub acc_test: f64,
    pub best_epoch: usize,
    pub wall_ms: u128,
}

impl RunRecord {
    pub fn new(
        run_id: String,
        dataset: &str,
        split_id: usize,
        cfg: &TrainConfig,
        r: &TrainResult,
    ) -> Self {
        RunRecord {
            run_id,
            dataset: dataset.to_string(),
            model: cfg.model.to_string(),
            variant: cfg.variant_label(),
            k: cfg.layers,
            seed: cfg.seed,
            split_id,
            lr: cfg.lr,
            weight_decay: cfg.weight_decay,
            dropout: cfg.dropout,
            eps_r: cfg.eps_r,
            eps_ir: cfg.eps_ir,
            lambda_icr: cfg.lambda_icr,
            acc_val: r.acc_val,
            acc_test: r.acc_test,
            best_epoch: r.best_epoch,
            wall_ms: r.wall_ms,
        }
    }
}

/// Hyperparameter ranges searched per dataset. Continuous ranges are
/// `(lo, hi)`; the discrete ones list every allowed value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub lr: (f64, f64),
    pub weight_decay: (f64, f64),
    pub dropout: Vec<f64>,
    pub layers: Vec<usize>,
    pub eps: Vec<f64>,
    pub lambda_icr: (f64, f64),
}

impl SearchSpace {
    /// Ranges shared by every dataset, with the given ICR interval.
    fn with_lambda(lo: f64, hi: f64) -> Self {
        SearchSpace {
            lr: (1e-2, 1e-1),
            weight_decay: (1e-6, 1e-3),
            dropout: (0..=8).map(|i| i as f64 / 10.0).collect(),
            layers: (1..=8).collect(),
            eps: (1..=10).map(|i| i as f64 / 10.0).collect(),
            lambda_icr: (lo, hi),
        }
    }

    /// Named preset: cora, citeseer, pubmed, twitch-de, chameleon,
    /// squirrel or actor.
    pub fn for_dataset(name: &str) -> Result<Self> {
        match name.to_ascii_lowercase().as_str() {
            "cora" | "citeseer" | "pubmed" | "twitch-de" => Ok(Self::with_lambda(0.0, 1.0)),
            "chameleon" => Ok(Self::with_lambda(5e-7, 5e-6)),
            "squirrel" => Ok(Self::with_lambda(1e-4, 5e-3)),
            "actor" => Ok(Self::with_lambda(5e-3, 5e-2)),
            other => Err(Error::Contract(format!(
                "no search space for dataset `{other}`"
            ))),
        }
    }

    /// One random point of the space applied on top of `base`. Rates and
    /// the ICR coefficient are drawn log-uniformly unless the interval
    /// starts at 0.
    pub fn sample<R: rand::Rng + ?Sized>(&self, base: &TrainConfig, rng: &mut R) -> TrainConfig {
        let draw = |(lo, hi): (f64, f64), rng: &mut R| -> f64 {
            if lo > 0.0 {
                (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
            } else {
                lo + rng.random::<f64>() * (hi - lo)
            }
        };
        let pick = |xs: &[f64], rng: &mut R| xs[rng.random_range(0..xs.len())];
        TrainConfig {
            lr: draw(self.lr, rng),
            weight_decay: draw(self.weight_decay, rng),
            dropout: pick(&self.dropout, rng),
            layers: self.layers[rng.random_range(0..self.layers.len())],
            eps_r: pick(&self.eps, rng),
            eps_ir: pick(&self.eps, rng),
            lambda_icr: draw(self.lambda_icr, rng),
            ..*base
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ties_go_to_smaller_class() {
        let logits = array![[0.0, 0.0, 0.0], [1.0, 3.0, 3.0], [5.0, 1.0, 0.0]];
        let labels = Labels::new(vec![0, 1, 0], 3).unwrap();
        assert_eq!(accuracy(&logits, &labels, &[0, 1, 2]).unwrap(), 1.0);
        let labels = Labels::new(vec![2, 2, 1], 3).unwrap();
        assert_eq!(accuracy(&logits, &labels, &[0, 1, 2]).unwrap(), 0.0);
        assert!(accuracy(&logits, &labels, &[]).is_err());
    }

    #[test]
    fn config_file_overrides() {
        let mut c = TrainConfig::default();
        c.apply_file("# preset\nlr = 0.05\nK=4\nvariant = dual_head+no_icr\nmodel = gcn\n")
            .unwrap();
        assert_eq!(c.lr, 0.05);
        assert_eq!(c.layers, 4);
        assert_eq!(c.variant, Variant::DUAL_HEAD_NO_ICR);
        assert_eq!(c.model, ModelKind::Gcn);
        assert!(c.apply_file("bogus = 1").is_err());
    }

    #[test]
    fn search_space_samples_stay_inside() {
        let space = SearchSpace::for_dataset("Squirrel").unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let c = space.sample(&TrainConfig::default(), &mut rng);
            assert!((1e-2..=1e-1).contains(&c.lr));
            assert!((1e-6..=1e-3).contains(&c.weight_decay));
            assert!((1e-4..=5e-3).contains(&c.lambda_icr));
            assert!((1..=8).contains(&c.layers));
            assert!(c.eps_r > 0.0 && c.eps_r <= 1.0);
            c.validate().unwrap();
        }
        assert!(SearchSpace::for_dataset("wiki").is_err());
    }
}
