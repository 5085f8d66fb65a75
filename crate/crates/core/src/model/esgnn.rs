//! Edge-splitting GNN.
//!
//! Each layer scores every undirected edge from the concatenated channel
//! states of its endpoints, splits the unit edge weight into a relevant
//! part `a_R = (1 + alpha) / 2` and an irrelevant part `a_IR = 1 - a_R`,
//! and aggregates each channel over its own weighted topology with a
//! residual pull towards the layer-0 projection.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamVars, Params};
use super::{LossTerms, ModelInput, NodeClassifier, Supervision};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::{Tape, Var, DEG_FLOOR};

/// Ablation switches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Variant {
    /// Learn per-edge scores. Off means `alpha = 0` on every edge.
    pub edge_split: bool,
    /// Add the irrelevant-consistency term to the training loss.
    pub icr: bool,
    /// Feed both channels to the prediction head.
    pub dual_head: bool,
}

impl Variant {
    pub const FULL: Variant = Variant {
        edge_split: true,
        icr: true,
        dual_head: false,
    };
    pub const NO_ICR: Variant = Variant {
        icr: false,
        ..Variant::FULL
    };
    pub const NO_ES: Variant = Variant {
        edge_split: false,
        ..Variant::FULL
    };
    pub const DUAL_HEAD: Variant = Variant {
        dual_head: true,
        ..Variant::FULL
    };
    pub const DUAL_HEAD_NO_ICR: Variant = Variant {
        dual_head: true,
        icr: false,
        ..Variant::FULL
    };
    pub const DUAL_HEAD_NO_ES: Variant = Variant {
        dual_head: true,
        edge_split: false,
        ..Variant::FULL
    };

    /// The six variants compared by the ablation suite.
    pub const ABLATIONS: [Variant; 6] = [
        Variant::FULL,
        Variant::NO_ICR,
        Variant::NO_ES,
        Variant::DUAL_HEAD,
        Variant::DUAL_HEAD_NO_ICR,
        Variant::DUAL_HEAD_NO_ES,
    ];

    pub fn name(&self) -> String {
        let mut parts = Vec::new();
        if self.dual_head {
            parts.push("dual_head");
        }
        if !self.edge_split {
            parts.push("no_es");
        }
        if !self.icr {
            parts.push("no_icr");
        }
        if parts.is_empty() {
            "full".into()
        } else {
            parts.join("+")
        }
    }
}

impl Default for Variant {
    fn default() -> Self {
        Variant::FULL
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.name())
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let mut v = Variant::FULL;
        for part in s.split('+').map(str::trim) {
            match part {
                "full" | "" => {}
                "no_icr" => v.icr = false,
                "no_es" => v.edge_split = false,
                "dual_head" | "d" => v.dual_head = true,
                other => {
                    return Err(Error::Contract(format!(
                        "unknown variant component `{other}`"
                    )))
                }
            }
        }
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EsGnnConfig {
    /// Total hidden width `d`; each channel holds `d / 2` columns.
    pub hidden: usize,
    pub layers: usize,
    pub eps_r: f64,
    pub eps_ir: f64,
    pub lambda_icr: f64,
    pub dropout: f64,
    pub variant: Variant,
    /// Let the ICR gradient flow through the label-agreement weight too.
    pub icr_grad_through_agreement: bool,
    pub deg_floor: f64,
}

impl Default for EsGnnConfig {
    fn default() -> Self {
        EsGnnConfig {
            hidden: 64,
            layers: 2,
            eps_r: 0.5,
            eps_ir: 0.5,
            lambda_icr: 1e-3,
            dropout: 0.5,
            variant: Variant::FULL,
            icr_grad_through_agreement: false,
            deg_floor: DEG_FLOOR,
        }
    }
}

impl EsGnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden < 2 || self.hidden % 2 != 0 {
            return Err(Error::Contract(format!(
                "hidden width {} must be even and positive",
                self.hidden
            )));
        }
        if self.layers == 0 {
            return Err(Error::Contract("ES-GNN needs at least one layer".into()));
        }
        for (name, e) in [("eps_R", self.eps_r), ("eps_IR", self.eps_ir)] {
            if !(e > 0.0 && e <= 1.0) {
                return Err(Error::Contract(format!("{name} = {e} outside (0, 1]")));
            }
        }
        if !(self.lambda_icr >= 0.0) || !self.lambda_icr.is_finite() {
            return Err(Error::Contract(format!(
                "lambda_icr = {} must be >= 0",
                self.lambda_icr
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Contract(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    pub fn channel_width(&self) -> usize {
        self.hidden / 2
    }

    /// Coefficient actually applied to the ICR term.
    pub fn effective_lambda(&self) -> f64 {
        if self.variant.icr {
            self.lambda_icr
        } else {
            0.0
        }
    }
}

/// Per-edge split coefficients of one layer, aligned with `Graph::edges`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeSplit {
    pub a_r: Vec<f64>,
    pub a_ir: Vec<f64>,
}

impl EdgeSplit {
    /// Residual scores `alpha = a_R - a_IR`.
    pub fn alpha(&self) -> Vec<f64> {
        self.a_r
            .iter()
            .zip(&self.a_ir)
            .map(|(r, i)| r - i)
            .collect()
    }

    /// Dense `n x n` reconstruction of one channel's weighted adjacency.
    pub fn dense(graph: &Graph, w: &[f64]) -> Array2<f64> {
        let n = graph.num_nodes();
        let mut a = Array2::zeros((n, n));
        for (&(u, v), &we) in graph.edges().iter().zip(w) {
            a[[u, v]] = we;
            a[[v, u]] = we;
        }
        a
    }
}

/// Evaluation-mode internals of a forward pass.
#[derive(Debug, Clone)]
pub struct Inspection {
    pub splits: Vec<EdgeSplit>,
    pub z_r: Array2<f64>,
    pub z_ir: Array2<f64>,
    pub logits: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct EsGnn {
    pub cfg: EsGnnConfig,
}

struct Trace {
    z_r: Var,
    z_ir: Var,
    splits: Vec<(Var, Var)>,
    logits: Var,
}

/// `Z_s^(0) = ReLU(X W_s + b_s)` for both channels, followed by dropout
/// when `rng` is present.
pub fn project_channels<'a>(
    tape: &mut Tape<'a>,
    input: &ModelInput<'a>,
    p: &ParamVars,
    dropout: f64,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<(Var, Var)> {
    let mut out = [None, None];
    for (slot, (w, b)) in out.iter_mut().zip([("w_r", "b_r"), ("w_ir", "b_ir")]) {
        let xw = input.project(tape, p.get(w)?)?;
        let z = tape.add_bias(xw, p.get(b)?)?;
        let z = tape.relu(z)?;
        *slot = Some(tape.dropout(z, dropout, rng.as_deref_mut())?);
    }
    Ok((out[0].unwrap(), out[1].unwrap()))
}

/// Split coefficients `(a_R, a_IR)` as two `m x 1` columns.
///
/// With `H = [Z_R | Z_IR]` and `g = [g_top; g_bot]`, the directed score of
/// `(i, j)` is `tanh(H_i g_top + H_j g_bot)`; the undirected score averages
/// both orientations.
pub fn edge_split<'a>(
    tape: &mut Tape<'a>,
    z_r: Var,
    z_ir: Var,
    g: Var,
    graph: &'a Graph,
    dropout: f64,
    rng: Option<&mut ChaCha8Rng>,
) -> Result<(Var, Var)> {
    let h = tape.concat_cols(&[z_r, z_ir])?;
    let d = tape.value(h).ncols();
    if tape.value(g).dim() != (2 * d, 1) {
        return Err(Error::shape(
            "edge_split",
            format!(
                "scoring vector {:?} for hidden width {d}",
                tape.value(g).dim()
            ),
        ));
    }
    let g_top = tape.slice_rows(g, 0..d)?;
    let g_bot = tape.slice_rows(g, d..2 * d)?;
    let p = tape.matmul(h, g_top)?;
    let q = tape.matmul(h, g_bot)?;
    let (src, dst) = (graph.sources(), graph.targets());
    let p_src = tape.row_gather(p, src)?;
    let q_dst = tape.row_gather(q, dst)?;
    let p_dst = tape.row_gather(p, dst)?;
    let q_src = tape.row_gather(q, src)?;
    let fwd = tape.add(p_src, q_dst)?;
    let s_fwd = tape.tanh(fwd)?;
    let bwd = tape.add(p_dst, q_src)?;
    let s_bwd = tape.tanh(bwd)?;
    let both = tape.add(s_fwd, s_bwd)?;
    let alpha = tape.scale(both, 0.5)?;
    let alpha = tape.dropout(alpha, dropout, rng)?;
    split_from_alpha(tape, alpha)
}

fn split_from_alpha(tape: &mut Tape<'_>, alpha: Var) -> Result<(Var, Var)> {
    let a_r = tape.affine(alpha, 0.5, 0.5)?;
    // Derived from a_R so that a_R + a_IR rounds to exactly 1.
    let a_ir = tape.affine(a_r, -1.0, 1.0)?;
    Ok((a_r, a_ir))
}

/// `eps Z^(0) + (1 - eps) D^-1/2 A_s D^-1/2 Z^(k)`.
pub fn aggregate_channel<'a>(
    tape: &mut Tape<'a>,
    z0: Var,
    zk: Var,
    edges: &'a [(usize, usize)],
    a: Var,
    eps: f64,
    deg_floor: f64,
) -> Result<Var> {
    let prop = tape.edge_weighted_aggregate(zk, edges, a, deg_floor)?;
    let keep = tape.scale(z0, eps)?;
    let mixed = tape.scale(prop, 1.0 - eps)?;
    tape.add(keep, mixed)
}

/// `sum_{(i,j)} (1 - y~_i . y~_j) ||Z_IR[i] - Z_IR[j]||`, where `y~` is the
/// one-hot training label when known and the predicted distribution
/// otherwise. Unless `through_agreement` is set the agreement weight is a
/// constant.
pub fn icr_loss<'a>(
    tape: &mut Tape<'a>,
    z_ir: Var,
    logits: Var,
    graph: &'a Graph,
    known: &[Option<usize>],
    through_agreement: bool,
) -> Result<Var> {
    let n = tape.value(logits).nrows();
    let c = tape.value(logits).ncols();
    if known.len() != n {
        return Err(Error::shape(
            "icr_loss",
            format!("{} known labels for {n} nodes", known.len()),
        ));
    }
    let mut onehot = Array2::<f64>::zeros((n, c));
    let mut free = Array2::<f64>::ones((n, c));
    for (i, k) in known.iter().enumerate() {
        if let Some(y) = *k {
            onehot[[i, y]] = 1.0;
            free.row_mut(i).fill(0.0);
        }
    }
    let y_tilde = if through_agreement {
        let probs = tape.softmax_rows(logits)?;
        let mask = tape.constant(free)?;
        let masked = tape.mul(probs, mask)?;
        let fixed = tape.constant(onehot)?;
        tape.add(masked, fixed)?
    } else {
        let probs = crate::tensor::softmax(tape.value(logits).view());
        tape.constant(probs * &free + &onehot)?
    };
    let yu = tape.row_gather(y_tilde, graph.sources())?;
    let yv = tape.row_gather(y_tilde, graph.targets())?;
    let agree = tape.row_dot(yu, yv)?;
    let weight = tape.affine(agree, -1.0, 1.0)?;
    let dist = tape.l2_rowdiff(z_ir, graph.edges())?;
    let terms = tape.mul(weight, dist)?;
    tape.sum(terms)
}

/// `pred + lambda * icr`; `pred` itself when `lambda == 0`.
pub fn total_loss(tape: &mut Tape<'_>, pred: Var, icr: Option<Var>, lambda: f64) -> Result<Var> {
    match icr {
        Some(icr) if lambda != 0.0 => {
            let weighted = tape.scale(icr, lambda)?;
            tape.add(pred, weighted)
        }
        _ => Ok(pred),
    }
}

impl EsGnn {
    pub fn new(cfg: EsGnnConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(EsGnn { cfg })
    }

    fn run<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        p: &ParamVars,
        input: &ModelInput<'a>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Trace> {
        input.check()?;
        let cfg = &self.cfg;
        let graph = input.graph;
        let (z_r0, z_ir0) = project_channels(tape, input, p, cfg.dropout, rng.as_deref_mut())?;
        let (mut z_r, mut z_ir) = (z_r0, z_ir0);
        let mut splits = Vec::with_capacity(cfg.layers);
        for k in 0..cfg.layers {
            let (a_r, a_ir) = if cfg.variant.edge_split {
                let g = p.get(&format!("g{k}"))?;
                edge_split(tape, z_r, z_ir, g, graph, cfg.dropout, rng.as_deref_mut())?
            } else {
                let alpha = tape.constant(Array2::zeros((graph.num_edges(), 1)))?;
                split_from_alpha(tape, alpha)?
            };
            z_r = aggregate_channel(
                tape,
                z_r0,
                z_r,
                graph.edges(),
                a_r,
                cfg.eps_r,
                cfg.deg_floor,
            )
            .map_err(|e| layer_err(e, k, "R"))?;
            z_ir = aggregate_channel(
                tape,
                z_ir0,
                z_ir,
                graph.edges(),
                a_ir,
                cfg.eps_ir,
                cfg.deg_floor,
            )
            .map_err(|e| layer_err(e, k, "IR"))?;
            splits.push((a_r, a_ir));
        }
        let head_in = if cfg.variant.dual_head {
            tape.concat_cols(&[z_r, z_ir])?
        } else {
            z_r
        };
        let hw = tape.matmul(head_in, p.get("w_f")?)?;
        let logits = tape.add_bias(hw, p.get("b_f")?)?;
        Ok(Trace {
            z_r,
            z_ir,
            splits,
            logits,
        })
    }

    /// Evaluation-mode forward pass exposing the split coefficients and
    /// final channel states.
    pub fn inspect(&self, params: &Params, input: &ModelInput<'_>) -> Result<Inspection> {
        let mut tape = Tape::new();
        let p = params.constants(&mut tape)?;
        let tr = self.run(&mut tape, &p, input, None)?;
        let col = |v: Var| tape.value(v).column(0).to_vec();
        Ok(Inspection {
            splits: tr
                .splits
                .iter()
                .map(|&(r, i)| EdgeSplit {
                    a_r: col(r),
                    a_ir: col(i),
                })
                .collect(),
            z_r: tape.value(tr.z_r).clone(),
            z_ir: tape.value(tr.z_ir).clone(),
            logits: tape.value(tr.logits).clone(),
        })
    }
}

fn layer_err(e: Error, k: usize, channel: &str) -> Error {
    match e {
        Error::NonFinite(op) => Error::NonFinite(format!("{op} in layer {k}, channel {channel}")),
        other => other,
    }
}

impl NodeClassifier for EsGnn {
    fn name(&self) -> String {
        format!("esgnn[{}]", self.cfg.variant)
    }

    fn init(&self, f: usize, c: usize, rng: &mut ChaCha8Rng) -> Result<Params> {
        self.cfg.validate()?;
        let h = self.cfg.channel_width();
        let mut p = Params::new();
        p.push_glorot("w_r", f, h, rng);
        p.push_bias("b_r", h);
        p.push_glorot("w_ir", f, h, rng);
        p.push_bias("b_ir", h);
        if self.cfg.variant.edge_split {
            // Zero scoring vectors start every edge at an even split, where
            // tanh is steepest.
            for k in 0..self.cfg.layers {
                p.push(
                    format!("g{k}"),
                    Array2::zeros((2 * self.cfg.hidden, 1)),
                    true,
                );
            }
        }
        let head_in = if self.cfg.variant.dual_head { 2 * h } else { h };
        p.push_glorot("w_f", head_in, c, rng);
        p.push_bias("b_f", c);
        Ok(p)
    }

    fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        p: &ParamVars,
        input: &ModelInput<'a>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        Ok(self.run(tape, p, input, rng)?.logits)
    }

    fn loss<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        p: &ParamVars,
        input: &ModelInput<'a>,
        sup: &'a Supervision,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<LossTerms> {
        let tr = self.run(tape, p, input, rng)?;
        let pred = tape.cross_entropy(tr.logits, &sup.targets)?;
        let icr = icr_loss(
            tape,
            tr.z_ir,
            tr.logits,
            input.graph,
            &sup.known,
            self.cfg.icr_grad_through_agreement,
        )?;
        let total = total_loss(tape, pred, Some(icr), self.cfg.effective_lambda())?;
        Ok(LossTerms {
            total,
            pred,
            icr: Some(icr),
            logits: tr.logits,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use ndarray::array;
    use rand::{Rng, SeedableRng};

    fn small() -> (Graph, Array2<f64>) {
        let g = Graph::from_edges(4, &[(0, 1), (1, 2), (2, 3), (0, 3)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Array2::from_shape_simple_fn((4, 3), || rng.random_range(-1.0..1.0));
        (g, x)
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ABLATIONS {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert_eq!(Variant::DUAL_HEAD_NO_ES.name(), "dual_head+no_es");
    }

    #[test]
    fn zero_scoring_vector_gives_even_split() {
        let (g, x) = small();
        let model = EsGnn::new(EsGnnConfig {
            hidden: 4,
            ..Default::default()
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = model.init(3, 2, &mut rng).unwrap();
        for k in 0..2 {
            params.get_mut(&format!("g{k}")).unwrap().fill(0.0);
        }
        let ins = model.inspect(&params, &ModelInput::new(&g, &x)).unwrap();
        for s in &ins.splits {
            assert!(s.a_r.iter().all(|&a| a == 0.5));
            assert!(s.a_ir.iter().all(|&a| a == 0.5));
        }
    }

    #[test]
    fn alpha_to_coefficients() {
        let mut t = Tape::new();
        let a = t.constant(array![[0.6]]).unwrap();
        let (r, i) = split_from_alpha(&mut t, a).unwrap();
        assert!((t.scalar(r) - 0.8).abs() < 1e-15);
        assert!((t.scalar(i) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn icr_examples() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let mut t = Tape::new();
        let z = t.leaf(array![[0.0, 0.0], [0.0, 2.0]]).unwrap();
        // Hard one-hot predictions of different classes.
        let logits = t
            .constant(array![[100.0, -100.0], [-100.0, 100.0]])
            .unwrap();
        let l = icr_loss(&mut t, z, logits, &g, &[None, None], false).unwrap();
        assert!((t.scalar(l) - 2.0).abs() < 1e-12);
        let l = icr_loss(&mut t, z, logits, &g, &[Some(0), Some(0)], false).unwrap();
        assert_eq!(t.scalar(l), 0.0);
        let flat = t.leaf(array![[1.0, 1.0], [1.0, 1.0]]).unwrap();
        let l = icr_loss(&mut t, flat, logits, &g, &[None, None], true).unwrap();
        assert_eq!(t.scalar(l), 0.0);
    }

    #[test]
    fn eps_one_ignores_graph() {
        let (g, x) = small();
        let model = EsGnn::new(EsGnnConfig {
            hidden: 4,
            layers: 1,
            eps_r: 1.0,
            eps_ir: 1.0,
            ..Default::default()
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let params = model.init(3, 2, &mut rng).unwrap();
        let out = model.predict(&params, &ModelInput::new(&g, &x)).unwrap();
        let z =
            (x.dot(params.get("w_r").unwrap()) + params.get("b_r").unwrap()).mapv(|v| v.max(0.0));
        let want = z.dot(params.get("w_f").unwrap()) + params.get("b_f").unwrap();
        assert!((out - want).iter().all(|d| d.abs() < 1e-12));
    }
}
