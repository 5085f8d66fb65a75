//! Undirected sparse topology, label vectors, node splits and the
//! homophily statistics computed over them.
//!
//! Every undirected edge is stored exactly once as `(u, v)` with `u < v`.
//! Per-edge quantities elsewhere in the crate (scores, split coefficients,
//! provenance tags) are indexed by the position of the edge in
//! [`Graph::edges`] and are shared by both directions.

use std::collections::HashSet;
use std::hash::{Hash, Hasher};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
    src: Vec<usize>,
    dst: Vec<usize>,
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    incident: Vec<usize>,
    fingerprint: u64,
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n && self.edges == other.edges
    }
}

impl Graph {
    /// Canonicalizes `raw` into a simple undirected graph: self-loops are
    /// dropped, reversed and repeated pairs merged, edges sorted.
    pub fn from_edges(n: usize, raw: &[(usize, usize)]) -> Result<Self> {
        let mut edges = Vec::with_capacity(raw.len());
        for (i, &(a, b)) in raw.iter().enumerate() {
            if a >= n || b >= n {
                return Err(Error::Malformed(format!(
                    "edge #{i} ({a}, {b}) references a node outside [0, {n})"
                )));
            }
            if a != b {
                edges.push((a.min(b), a.max(b)));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        Ok(Self::from_canonical(n, edges))
    }

    fn from_canonical(n: usize, edges: Vec<(usize, usize)>) -> Self {
        let mut deg = vec![0usize; n];
        for &(u, v) in &edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + deg[i];
        }
        let mut cursor = offsets[..n].to_vec();
        let mut neighbors = vec![0usize; offsets[n]];
        let mut incident = vec![0usize; offsets[n]];
        for (e, &(u, v)) in edges.iter().enumerate() {
            neighbors[cursor[u]] = v;
            incident[cursor[u]] = e;
            cursor[u] += 1;
            neighbors[cursor[v]] = u;
            incident[cursor[v]] = e;
            cursor[v] += 1;
        }
        // Sort each adjacency list so membership queries can binary search.
        for i in 0..n {
            let (lo, hi) = (offsets[i], offsets[i + 1]);
            let mut pairs: Vec<(usize, usize)> = neighbors[lo..hi]
                .iter()
                .copied()
                .zip(incident[lo..hi].iter().copied())
                .collect();
            pairs.sort_unstable();
            for (k, (nb, e)) in pairs.into_iter().enumerate() {
                neighbors[lo + k] = nb;
                incident[lo + k] = e;
            }
        }
        let mut hasher = std::collections::hash_map::DefaultHasher::new();
        n.hash(&mut hasher);
        edges.hash(&mut hasher);
        let fingerprint = hasher.finish();
        let src = edges.iter().map(|e| e.0).collect();
        let dst = edges.iter().map(|e| e.1).collect();
        Graph {
            n,
            edges,
            src,
            dst,
            offsets,
            neighbors,
            incident,
            fingerprint,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Smaller endpoint of every edge, in edge order.
    pub fn sources(&self) -> &[usize] {
        &self.src
    }

    /// Larger endpoint of every edge, in edge order.
    pub fn targets(&self) -> &[usize] {
        &self.dst
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Edge ids incident to `i`, aligned with [`Graph::neighbors`].
    pub fn incident_edges(&self, i: usize) -> &[usize] {
        &self.incident[self.offsets[i]..self.offsets[i + 1]]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn average_degree(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            2.0 * self.edges.len() as f64 / self.n as f64
        }
    }

    /// Position of the undirected edge `{u, v}` in [`Graph::edges`].
    pub fn edge_id(&self, u: usize, v: usize) -> Option<usize> {
        if u >= self.n || v >= self.n {
            return None;
        }
        let nb = self.neighbors(u);
        nb.binary_search(&v).ok().map(|k| self.incident_edges(u)[k])
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.edge_id(u, v).is_some()
    }

    /// Stable content hash of `(n, edges)`, used as a cache key.
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    /// Relabels nodes: node `i` becomes `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Graph> {
        if perm.len() != self.n {
            return Err(Error::Malformed("permutation length differs from n".into()));
        }
        let raw: Vec<_> = self
            .edges
            .iter()
            .map(|&(u, v)| (perm[u], perm[v]))
            .collect();
        Graph::from_edges(self.n, &raw)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    y: Vec<usize>,
    num_classes: usize,
}

impl Labels {
    pub fn new(y: Vec<usize>, num_classes: usize) -> Result<Self> {
        if let Some((i, &c)) = y.iter().enumerate().find(|(_, &c)| c >= num_classes) {
            return Err(Error::Malformed(format!(
                "label {c} of node {i} is not below the class count {num_classes}"
            )));
        }
        if num_classes > y.len() {
            return Err(Error::Malformed(format!(
                "{num_classes} classes exceed {} nodes",
                y.len()
            )));
        }
        Ok(Labels { y, num_classes })
    }

    /// Infers the class count as `max + 1`.
    pub fn from_vec(y: Vec<usize>) -> Result<Self> {
        let c = y.iter().max().map_or(0, |m| m + 1);
        Labels::new(y, c)
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.y
    }

    pub fn get(&self, i: usize) -> usize {
        self.y[i]
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_classes];
        for &c in &self.y {
            sizes[c] += 1;
        }
        sizes
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct NodeSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl NodeSplit {
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = HashSet::new();
        for (name, set) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            for &i in set.iter() {
                if i >= n {
                    return Err(Error::Malformed(format!(
                        "{name} node {i} outside [0, {n})"
                    )));
                }
                if !seen.insert(i) {
                    return Err(Error::Malformed(format!(
                        "node {i} appears in more than one split"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SplitScheme {
    /// Random node partition: `train` and `val` fractions of n, the rest test.
    Fractions { train: f64, val: f64 },
    /// Fixed number of training nodes per class, then fixed-size val/test.
    PerClass {
        per_class: usize,
        val: usize,
        test: usize,
    },
}

impl SplitScheme {
    /// 60/20/20 partition.
    pub const DENSE: SplitScheme = SplitScheme::Fractions {
        train: 0.6,
        val: 0.2,
    };
    /// 20 per class / 500 / 1000.
    pub const SPARSE: SplitScheme = SplitScheme::PerClass {
        per_class: 20,
        val: 500,
        test: 1000,
    };

    /// Training fraction `rate`, remainder divided evenly into val and test.
    pub fn label_rate(rate: f64) -> SplitScheme {
        SplitScheme::Fractions {
            train: rate,
            val: (1.0 - rate) / 2.0,
        }
    }
}

pub fn make_split<R: Rng + ?Sized>(
    labels: &Labels,
    scheme: SplitScheme,
    rng: &mut R,
) -> Result<NodeSplit> {
    let n = labels.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    match scheme {
        SplitScheme::Fractions { train, val } => {
            if !(0.0..=1.0).contains(&train)
                || !(0.0..=1.0).contains(&val)
                || train + val > 1.0 + 1e-12
            {
                return Err(Error::Infeasible(format!(
                    "split fractions train={train}, val={val} do not fit in [0, 1]"
                )));
            }
            let n_train = (train * n as f64).round() as usize;
            let n_val = ((val * n as f64).round() as usize).min(n - n_train);
            let test = order.split_off(n_train + n_val);
            let val = order.split_off(n_train);
            Ok(NodeSplit {
                train: order,
                val,
                test,
            })
        }
        SplitScheme::PerClass {
            per_class,
            val,
            test,
        } => {
            let c = labels.num_classes();
            let need = per_class * c + val + test;
            if n < need {
                return Err(Error::Infeasible(format!(
                    "per-class split needs {need} nodes, dataset has {n}"
                )));
            }
            let mut taken = vec![0usize; c];
            let mut train_set = Vec::with_capacity(per_class * c);
            let mut rest = Vec::with_capacity(n);
            for &i in &order {
                let y = labels.get(i);
                if taken[y] < per_class {
                    taken[y] += 1;
                    train_set.push(i);
                } else {
                    rest.push(i);
                }
            }
            if let Some(k) = taken.iter().position(|&t| t < per_class) {
                return Err(Error::Infeasible(format!(
                    "class {k} has only {} nodes, {per_class} required",
                    taken[k]
                )));
            }
            let test_set = rest[val..val + test].to_vec();
            rest.truncate(val);
            Ok(NodeSplit {
                train: train_set,
                val: rest,
                test: test_set,
            })
        }
    }
}

/// Fraction of edges whose endpoints share a label.
pub fn homophily_ratio(g: &Graph, labels: &Labels) -> Result<f64> {
    if g.num_edges() == 0 {
        return Err(Error::UndefinedMetric(
            "homophily ratio of an edgeless graph".into(),
        ));
    }
    check_label_len(g, labels)?;
    let same = g
        .edges()
        .iter()
        .filter(|&&(u, v)| labels.get(u) == labels.get(v))
        .count();
    Ok(same as f64 / g.num_edges() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassInsensitiveHomophily {
    pub value: f64,
    /// Classes without any incident edge endpoint; excluded from the sum.
    pub skipped_classes: Vec<usize>,
    pub warnings: Vec<String>,
}

/// Class-imbalance-aware homophily:
/// `(1 / (C - 1)) * sum_k max(0, h_k - |C_k| / n)` where `h_k` is the
/// same-class fraction of edge endpoints incident to class-`k` nodes.
pub fn class_insensitive_homophily(
    g: &Graph,
    labels: &Labels,
) -> Result<ClassInsensitiveHomophily> {
    if g.num_edges() == 0 {
        return Err(Error::UndefinedMetric(
            "class-insensitive homophily of an edgeless graph".into(),
        ));
    }
    check_label_len(g, labels)?;
    let c = labels.num_classes();
    let mut warnings = Vec::new();
    if c < 2 {
        let msg = "single-class labelling: class-insensitive homophily reported as 1.0".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
        return Ok(ClassInsensitiveHomophily {
            value: 1.0,
            skipped_classes: Vec::new(),
            warnings,
        });
    }
    let mut same = vec![0usize; c];
    let mut total = vec![0usize; c];
    for &(u, v) in g.edges() {
        let (yu, yv) = (labels.get(u), labels.get(v));
        total[yu] += 1;
        total[yv] += 1;
        if yu == yv {
            same[yu] += 2;
        }
    }
    let sizes = labels.class_sizes();
    let n = labels.len() as f64;
    let mut skipped = Vec::new();
    let mut acc = 0.0;
    for k in 0..c {
        if total[k] == 0 {
            let msg = format!("class {k} has no incident edges; skipped");
            log::warn!("{msg}");
            warnings.push(msg);
            skipped.push(k);
            continue;
        }
        let h_k = same[k] as f64 / total[k] as f64;
        acc += (h_k - sizes[k] as f64 / n).max(0.0);
    }
    Ok(ClassInsensitiveHomophily {
        value: acc / (c - 1) as f64,
        skipped_classes: skipped,
        warnings,
    })
}

fn check_label_len(g: &Graph, labels: &Labels) -> Result<()> {
    if labels.len() != g.num_nodes() {
        return Err(Error::Malformed(format!(
            "{} labels for {} nodes",
            labels.len(),
            g.num_nodes()
        )));
    }
    Ok(())
}

/// Adds `round(rate * |E|)` uniformly random new edges that are neither
/// self-loops nor duplicates. Returns the perturbed graph and the injected
/// edges in canonical `(u < v)` form, in draw order.
pub fn inject_fake_edges<R: Rng + ?Sized>(
    g: &Graph,
    rate: f64,
    rng: &mut R,
) -> Result<(Graph, Vec<(usize, usize)>)> {
    if !(rate >= 0.0) || !rate.is_finite() {
        return Err(Error::Malformed(format!(
            "injection rate {rate} must be a finite value >= 0"
        )));
    }
    let n = g.num_nodes();
    let m = g.num_edges();
    let want = (rate * m as f64).round() as usize;
    let capacity = n * n.saturating_sub(1) / 2;
    let available = capacity - m;
    if want > available {
        return Err(Error::Infeasible(format!(
            "requested {want} fake edges but only {available} node pairs are unconnected"
        )));
    }
    let mut injected = Vec::with_capacity(want);
    if want == 0 {
        return Ok((g.clone(), injected));
    }
    if want * 2 > available {
        // Dense regime: enumerate every non-edge and take a random subset.
        let mut pool = Vec::with_capacity(available);
        for u in 0..n {
            for v in u + 1..n {
                if !g.has_edge(u, v) {
                    pool.push((u, v));
                }
            }
        }
        pool.shuffle(rng);
        pool.truncate(want);
        injected = pool;
    } else {
        let mut chosen = HashSet::with_capacity(want);
        while injected.len() < want {
            let a = rng.random_range(0..n);
            let b = rng.random_range(0..n);
            if a == b {
                continue;
            }
            let e = (a.min(b), a.max(b));
            if g.has_edge(e.0, e.1) || !chosen.insert(e) {
                continue;
            }
            injected.push(e);
        }
    }
    let mut all = g.edges().to_vec();
    all.extend_from_slice(&injected);
    let out = Graph::from_edges(n, &all)?;
    Ok((out, injected))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn triangle() -> Graph {
        Graph::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap()
    }

    #[test]
    fn canonicalizes_edges() {
        let g = Graph::from_edges(3, &[(0, 1), (1, 0), (2, 2)]).unwrap();
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.degree(2), 0);
    }

    #[test]
    fn empty_graph() {
        let g = Graph::from_edges(5, &[]).unwrap();
        assert_eq!(g.num_edges(), 0);
        assert_eq!(g.num_nodes(), 5);
    }

    #[test]
    fn triangle_degrees() {
        let g = triangle();
        for i in 0..3 {
            assert_eq!(g.degree(i), 2);
        }
        assert_eq!(g.edge_id(2, 0), Some(1));
        assert_eq!(g.neighbors(1), &[0, 2]);
    }

    #[test]
    fn out_of_range_id_is_rejected() {
        assert!(matches!(
            Graph::from_edges(2, &[(0, 2)]),
            Err(Error::Malformed(_))
        ));
    }

    #[test]
    fn homophily_examples() {
        let g = triangle();
        let l = Labels::new(vec![0, 0, 1], 2).unwrap();
        assert!((homophily_ratio(&g, &l).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        let same = Labels::new(vec![0, 0, 0], 1).unwrap();
        assert_eq!(homophily_ratio(&g, &same).unwrap(), 1.0);
        let distinct = Labels::new(vec![0, 1, 2], 3).unwrap();
        assert_eq!(homophily_ratio(&g, &distinct).unwrap(), 0.0);
        let empty = Graph::from_edges(3, &[]).unwrap();
        assert!(matches!(
            homophily_ratio(&empty, &l),
            Err(Error::UndefinedMetric(_))
        ));
    }

    #[test]
    fn class_insensitive_half_and_half() {
        // Two classes of size 2; each class's endpoints are half same-class.
        let g = Graph::from_edges(4, &[(0, 1), (2, 3), (0, 2), (1, 3)]).unwrap();
        let l = Labels::new(vec![0, 0, 1, 1], 2).unwrap();
        let h = class_insensitive_homophily(&g, &l).unwrap();
        assert!(h.value.abs() < 1e-15);
        assert!(h.skipped_classes.is_empty());
    }

    #[test]
    fn class_insensitive_single_class_convention() {
        let g = triangle();
        let l = Labels::new(vec![0, 0, 0], 1).unwrap();
        let h = class_insensitive_homophily(&g, &l).unwrap();
        assert_eq!(h.value, 1.0);
        assert_eq!(h.warnings.len(), 1);
    }

    #[test]
    fn class_insensitive_skips_edgeless_class() {
        let g = Graph::from_edges(4, &[(0, 1)]).unwrap();
        let l = Labels::new(vec![0, 0, 1, 2], 3).unwrap();
        let h = class_insensitive_homophily(&g, &l).unwrap();
        assert_eq!(h.skipped_classes, vec![1, 2]);
        // h_0 = 1, |C_0|/n = 0.5
        assert!((h.value - 0.25).abs() < 1e-15);
    }

    #[test]
    fn inject_counts_and_preserves() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let raw: Vec<_> = (0..60)
            .map(|i| (i, (i + 1) % 60))
            .chain((0..40).map(|i| (i, (i + 7) % 60)))
            .collect();
        let g = Graph::from_edges(60, &raw).unwrap();
        let m = g.num_edges();
        assert_eq!(m, 100);
        let (h, fake) = inject_fake_edges(&g, 0.2, &mut rng).unwrap();
        assert_eq!(fake.len(), (0.2 * m as f64).round() as usize);
        assert_eq!(h.num_edges(), m + fake.len());
        for &(u, v) in g.edges() {
            assert!(h.has_edge(u, v));
        }
        for &(u, v) in &fake {
            assert!(!g.has_edge(u, v));
        }
        let (same, none) = inject_fake_edges(&g, 0.0, &mut rng).unwrap();
        assert_eq!(same, g);
        assert!(none.is_empty());
    }

    #[test]
    fn inject_dense_regime_and_infeasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Graph::from_edges(5, &[(0, 1), (1, 2), (2, 3), (3, 4)]).unwrap();
        // 6 free pairs, 4 requested -> enumeration path.
        let (h, fake) = inject_fake_edges(&g, 1.0, &mut rng).unwrap();
        assert_eq!(fake.len(), 4);
        assert_eq!(h.num_edges(), 8);
        assert!(matches!(
            inject_fake_edges(&g, 2.0, &mut rng),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn splits() {
        let y: Vec<usize> = (0..1200).map(|i| i % 3).collect();
        let l = Labels::new(y, 3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = make_split(&l, SplitScheme::DENSE, &mut rng).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (720, 240, 240));
        s.validate(1200).unwrap();
        let err = make_split(&l, SplitScheme::SPARSE, &mut rng);
        assert!(matches!(err, Err(Error::Infeasible(_))));

        let y: Vec<usize> = (0..2708).map(|i| i % 7).collect();
        let l = Labels::new(y, 7).unwrap();
        let a = make_split(&l, SplitScheme::SPARSE, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!((a.train.len(), a.val.len(), a.test.len()), (140, 500, 1000));
        a.validate(2708).unwrap();
        let per_class = l.class_sizes().len();
        for k in 0..per_class {
            assert_eq!(a.train.iter().filter(|&&i| l.get(i) == k).count(), 20);
        }
        let b = make_split(&l, SplitScheme::SPARSE, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(a, b);
    }
}
