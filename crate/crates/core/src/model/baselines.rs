//! MLP, SGC and GCN reference classifiers.

use std::hash::{Hash, Hasher};
use std::sync::{Arc, Mutex};

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::params::{ParamVars, Params};
use super::{ModelInput, NodeClassifier};
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::tensor::{CsrMatrix, Tape, Var};

/// `D~^-1/2 (A + I) D~^-1/2` with `D~` the degrees of `A + I`.
pub fn gcn_norm(graph: &Graph) -> CsrMatrix {
    let n = graph.num_nodes();
    let inv: Vec<f64> = (0..n)
        .map(|i| 1.0 / ((graph.degree(i) + 1) as f64).sqrt())
        .collect();
    let mut trip = Vec::with_capacity(n + 2 * graph.num_edges());
    for (i, &c) in inv.iter().enumerate() {
        trip.push((i, i, c * c));
    }
    for &(u, v) in graph.edges() {
        let w = inv[u] * inv[v];
        trip.push((u, v, w));
        trip.push((v, u, w));
    }
    CsrMatrix::from_triplets(n, n, trip)
}

fn features_key(graph: &Graph, x: &Array2<f64>, extra: usize) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    graph.fingerprint().hash(&mut h);
    x.dim().hash(&mut h);
    for v in x.iter() {
        v.to_bits().hash(&mut h);
    }
    extra.hash(&mut h);
    h.finish()
}

/// Two-layer perceptron `f -> hidden -> C`; the graph is ignored.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub hidden: usize,
    pub dropout: f64,
}

impl NodeClassifier for Mlp {
    fn name(&self) -> String {
        "mlp".into()
    }

    fn init(&self, f: usize, c: usize, rng: &mut ChaCha8Rng) -> Result<Params> {
        let mut p = Params::new();
        p.push_glorot("w0", f, self.hidden, rng);
        p.push_bias("b0", self.hidden);
        p.push_glorot("w1", self.hidden, c, rng);
        p.push_bias("b1", c);
        Ok(p)
    }

    fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        p: &ParamVars,
        input: &ModelInput<'a>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let xw = input.project(tape, p.get("w0")?)?;
        let h = tape.add_bias(xw, p.get("b0")?)?;
        let h = tape.relu(h)?;
        let h = tape.dropout(h, self.dropout, rng)?;
        let hw = tape.matmul(h, p.get("w1")?)?;
        tape.add_bias(hw, p.get("b1")?)
    }
}

/// Linear model on `A^k X`, with the propagated features computed once per
/// (graph, features, k) and shared across calls.
#[derive(Debug)]
pub struct Sgc {
    pub k: usize,
    cache: Mutex<Option<(u64, Arc<Array2<f64>>)>>,
}

impl Clone for Sgc {
    fn clone(&self) -> Self {
        Sgc::new(self.k)
    }
}

impl Sgc {
    pub fn new(k: usize) -> Self {
        Sgc {
            k,
            cache: Mutex::new(None),
        }
    }

    /// `A^k X` for the self-loop-augmented normalized adjacency.
    pub fn propagated(&self, input: &ModelInput<'_>) -> Result<Arc<Array2<f64>>> {
        if self.k == 0 {
            return Err(Error::Contract("SGC needs k >= 1".into()));
        }
        input.check()?;
        let key = features_key(input.graph, input.x, self.k);
        let mut slot = self.cache.lock().expect("sgc cache poisoned");
        if let Some((k, feats)) = slot.as_ref() {
            if *k == key {
                return Ok(feats.clone());
            }
        }
        let a = gcn_norm(input.graph);
        let mut z = input.x.clone();
        for _ in 0..self.k {
            z = a.matmul(z.view());
        }
        let z = Arc::new(z);
        *slot = Some((key, z.clone()));
        Ok(z)
    }
}

impl NodeClassifier for Sgc {
    fn name(&self) -> String {
        format!("sgc[k={}]", self.k)
    }

    fn init(&self, f: usize, c: usize, rng: &mut ChaCha8Rng) -> Result<Params> {
        let mut p = Params::new();
        p.push_glorot("w", f, c, rng);
        p.push_bias("b", c);
        Ok(p)
    }

    fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        p: &ParamVars,
        input: &ModelInput<'a>,
        _rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        let feats = self.propagated(input)?;
        let xw = tape.matmul_const(feats, p.get("w")?)?;
        tape.add_bias(xw, p.get("b")?)
    }
}

/// Stack of `H' = A H W + b` layers with ReLU and dropout between them.
#[derive(Debug)]
pub struct Gcn {
    pub layers: usize,
    pub hidden: usize,
    pub dropout: f64,
    cache: Mutex<Option<(u64, Arc<CsrMatrix>)>>,
}

impl Clone for Gcn {
    fn clone(&self) -> Self {
        Gcn::new(self.layers, self.hidden, self.dropout)
    }
}

impl Gcn {
    pub fn new(layers: usize, hidden: usize, dropout: f64) -> Self {
        Gcn {
            layers,
            hidden,
            dropout,
            cache: Mutex::new(None),
        }
    }

    fn adjacency(&self, graph: &Graph) -> Arc<CsrMatrix> {
        let mut slot = self.cache.lock().expect("gcn cache poisoned");
        if let Some((k, a)) = slot.as_ref() {
            if *k == graph.fingerprint() {
                return a.clone();
            }
        }
        let a = Arc::new(gcn_norm(graph));
        *slot = Some((graph.fingerprint(), a.clone()));
        a
    }
}

impl NodeClassifier for Gcn {
    fn name(&self) -> String {
        format!("gcn[L={}]", self.layers)
    }

    fn init(&self, f: usize, c: usize, rng: &mut ChaCha8Rng) -> Result<Params> {
        if self.layers == 0 {
            return Err(Error::Contract("GCN needs at least one layer".into()));
        }
        let mut p = Params::new();
        for l in 0..self.layers {
            let rows = if l == 0 { f } else { self.hidden };
            let cols = if l + 1 == self.layers { c } else { self.hidden };
            p.push_glorot(&format!("w{l}"), rows, cols, rng);
            p.push_bias(&format!("b{l}"), cols);
        }
        Ok(p)
    }

    fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        p: &ParamVars,
        input: &ModelInput<'a>,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Var> {
        input.check()?;
        let a = self.adjacency(input.graph);
        let mut h: Option<Var> = None;
        for l in 0..self.layers {
            let w = p.get(&format!("w{l}"))?;
            let hw = match h {
                None => input.project(tape, w)?,
                Some(h) => tape.matmul(h, w)?,
            };
            let ah = tape.spmm(a.clone(), hw)?;
            let mut z = tape.add_bias(ah, p.get(&format!("b{l}"))?)?;
            if l + 1 < self.layers {
                z = tape.relu(z)?;
                z = tape.dropout(z, self.dropout, rng.as_deref_mut())?;
            }
            h = Some(z);
        }
        Ok(h.expect("at least one layer"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    #[test]
    fn edgeless_gcn_norm_is_identity() {
        let g = Graph::from_edges(3, &[]).unwrap();
        assert_eq!(gcn_norm(&g).to_dense(), Array2::<f64>::eye(3));
    }

    #[test]
    fn sgc_two_hops_on_an_edge() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let x = array![[1.0, 0.0], [0.0, 3.0]];
        let a = array![[0.5, 0.5], [0.5, 0.5]];
        let sgc = Sgc::new(2);
        let input = ModelInput::new(&g, &x);
        let z = sgc.propagated(&input).unwrap();
        let want = a.dot(&a).dot(&x);
        assert!((&*z - &want).iter().all(|d| d.abs() < 1e-12));
        let again = sgc.propagated(&input).unwrap();
        assert!(Arc::ptr_eq(&z, &again));
    }

    #[test]
    fn zero_mlp_is_uniform() {
        let g = Graph::from_edges(2, &[(0, 1)]).unwrap();
        let x = array![[1.0, 2.0], [3.0, 4.0]];
        let mlp = Mlp {
            hidden: 4,
            dropout: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = mlp.init(2, 3, &mut rng).unwrap();
        for t in p.tensors_mut() {
            t.fill(0.0);
        }
        let mut tape = Tape::new();
        let pv = p.leaves(&mut tape).unwrap();
        let logits = mlp
            .forward(&mut tape, &pv, &ModelInput::new(&g, &x), None)
            .unwrap();
        let targets = vec![(0, 0), (1, 2)];
        let loss = tape.cross_entropy(logits, &targets).unwrap();
        assert!((tape.scalar(loss) - 3f64.ln()).abs() < 1e-12);
    }
}
