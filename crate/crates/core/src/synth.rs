//! Homophily-controlled synthetic graphs.
//!
//! Nodes carry an explicit attribute (the class, 3 equal blocks) and an
//! implicit one (a "kind", 3 near-equal cells inside every class). Pairs
//! are linked with probability `kappa * P_E` when they share the class,
//! `kappa * P_I` when they only share the kind, and `q` otherwise. A node's
//! features are the sum of one draw around its class mean and one draw
//! around its kind mean.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Labels};

pub const NUM_CLASSES: usize = 3;
pub const NUM_KINDS: usize = 3;

/// Why an edge exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EdgeTag {
    Relevant,
    Irrelevant,
    Noise,
}

impl EdgeTag {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeTag::Relevant => "relevant",
            EdgeTag::Irrelevant => "irrelevant",
            EdgeTag::Noise => "noise",
        }
    }
}

impl std::str::FromStr for EdgeTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "relevant" => Ok(EdgeTag::Relevant),
            "irrelevant" => Ok(EdgeTag::Irrelevant),
            "noise" => Ok(EdgeTag::Noise),
            other => Err(Error::Malformed(format!("unknown edge tag `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n: usize,
    pub features: usize,
    pub p_e: f64,
    pub p_i: f64,
    pub q: f64,
    pub kappa: f64,
    pub mean_scale: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let row = appendix_param_table()[3];
        SynthConfig {
            n: 1200,
            features: 500,
            p_e: row.p_e,
            p_i: row.p_i,
            q: 1e-5,
            kappa: row.kappa,
            mean_scale: 1.0,
            noise_std: 10.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    /// Defaults with the link parameters of one appendix row.
    pub fn from_row(row: AppendixRow, seed: u64) -> Self {
        SynthConfig {
            p_e: row.p_e,
            p_i: row.p_i,
            kappa: row.kappa,
            seed,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.n % NUM_CLASSES != 0 {
            return Err(Error::Contract(format!(
                "n = {} must be a positive multiple of {NUM_CLASSES}",
                self.n
            )));
        }
        if self.n / NUM_CLASSES < NUM_KINDS {
            return Err(Error::Contract(format!(
                "n = {} leaves a class without every kind",
                self.n
            )));
        }
        if self.features == 0 {
            return Err(Error::Contract("at least one feature is required".into()));
        }
        for (name, p) in [
            ("P_E", self.p_e),
            ("P_I", self.p_i),
            ("q", self.q),
            ("kappa*P_E", self.kappa * self.p_e),
            ("kappa*P_I", self.kappa * self.p_i),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Contract(format!("{name} = {p} outside [0, 1]")));
            }
        }
        if !(self.kappa >= 0.0) {
            return Err(Error::Contract(format!(
                "kappa = {} must be >= 0",
                self.kappa
            )));
        }
        if !(self.mean_scale >= 0.0) || !(self.noise_std >= 0.0) {
            return Err(Error::Contract("feature scales must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub graph: Graph,
    pub features: Array2<f64>,
    pub labels: Labels,
    pub implicit_kind: Vec<usize>,
    pub provenance: Vec<EdgeTag>,
}

/// Class of node `i`: equal contiguous blocks.
pub fn class_of(i: usize, n: usize) -> usize {
    i / (n / NUM_CLASSES)
}

/// Kind of node `i`: near-equal contiguous cells inside its class block.
pub fn kind_of(i: usize, n: usize) -> usize {
    let block = n / NUM_CLASSES;
    (i % block) * NUM_KINDS / block
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let n = cfg.n;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let y: Vec<usize> = (0..n).map(|i| class_of(i, n)).collect();
    let kind: Vec<usize> = (0..n).map(|i| kind_of(i, n)).collect();

    let (pe, pi) = (cfg.kappa * cfg.p_e, cfg.kappa * cfg.p_i);
    let mut raw = Vec::new();
    let mut tags = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            let (p, tag) = if y[u] == y[v] {
                (pe, EdgeTag::Relevant)
            } else if kind[u] == kind[v] {
                (pi, EdgeTag::Irrelevant)
            } else {
                (cfg.q, EdgeTag::Noise)
            };
            if rng.random::<f64>() < p {
                raw.push((u, v));
                tags.push(tag);
            }
        }
    }
    if raw.is_empty() {
        return Err(Error::Infeasible(format!(
            "seed {} produced a graph without edges; regenerate with other parameters",
            cfg.seed
        )));
    }
    // Pairs were visited in canonical order, so tags already align.
    let graph = Graph::from_edges(n, &raw)?;
    debug_assert_eq!(graph.edges(), &raw[..]);

    let mean = Normal::new(0.0, cfg.mean_scale).map_err(|e| Error::Contract(e.to_string()))?;
    let noise = Normal::new(0.0, cfg.noise_std).map_err(|e| Error::Contract(e.to_string()))?;
    let f = cfg.features;
    let mu_e = Array2::from_shape_simple_fn((NUM_CLASSES, f), || mean.sample(&mut rng));
    let mu_i = Array2::from_shape_simple_fn((NUM_KINDS, f), || mean.sample(&mut rng));
    let mut features = Array2::<f64>::zeros((n, f));
    for i in 0..n {
        for j in 0..f {
            let a = mu_e[[y[i], j]] + noise.sample(&mut rng);
            let b = mu_i[[kind[i], j]] + noise.sample(&mut rng);
            features[[i, j]] = a + b;
        }
    }
    Ok(SynthDataset {
        graph,
        features,
        labels: Labels::new(y, NUM_CLASSES)?,
        implicit_kind: kind,
        provenance: tags,
    })
}

/// Homophily predicted from the link probabilities:
/// `3(n-3) / (3(n-3) + 2n P_I / P_E)`; 0 when `P_E = 0`.
pub fn expected_homophily(p_e: f64, p_i: f64, n: usize) -> f64 {
    if p_e <= 0.0 {
        return 0.0;
    }
    let n = n as f64;
    let same = 3.0 * (n - 3.0);
    same / (same + 2.0 * n * p_i / p_e)
}

/// `kappa * ((3 P_E + 4 P_I) / 9 * n - P_E)`.
pub fn expected_avg_degree(p_e: f64, p_i: f64, n: usize, kappa: f64) -> f64 {
    kappa * ((3.0 * p_e + 4.0 * p_i) / 9.0 * n as f64 - p_e)
}

/// Degree implied by the actual candidate-pair counts of the cell layout
/// (same-class partners and same-kind partners of another class).
pub fn layout_avg_degree(cfg: &SynthConfig) -> f64 {
    let n = cfg.n;
    let (mut same, mut kind) = (0u64, 0u64);
    let mut cells = [[0u64; NUM_KINDS]; NUM_CLASSES];
    for i in 0..n {
        cells[class_of(i, n)][kind_of(i, n)] += 1;
    }
    for (c, row) in cells.iter().enumerate() {
        let block: u64 = row.iter().sum();
        for (k, &cnt) in row.iter().enumerate() {
            same += cnt * (block - 1);
            let other: u64 = (0..NUM_CLASSES)
                .filter(|&d| d != c)
                .map(|d| cells[d][k])
                .sum();
            kind += cnt * other;
        }
    }
    let n = n as f64;
    cfg.kappa * (cfg.p_e * same as f64 + cfg.p_i * kind as f64) / n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AppendixRow {
    pub h_target: f64,
    pub p_e: f64,
    pub p_i: f64,
    pub kappa: f64,
}

/// Link parameters for the 11 homophily targets 0.0, 0.1, ..., 1.0.
pub fn appendix_param_table() -> [AppendixRow; 11] {
    const P_E: [f64; 11] = [0.02, 0.06, 0.1, 0.2, 0.4, 0.4, 0.6, 0.7, 0.8, 0.9, 0.96];
    const P_I: [f64; 11] = [0.72, 0.81, 0.6, 0.7, 0.9, 0.6, 0.6, 0.45, 0.3, 0.15, 0.045];
    const KAPPA: [f64; 11] = [
        0.1, 0.084, 0.1, 0.075, 0.05, 0.062, 0.05, 0.05, 0.05, 0.05, 0.051,
    ];
    std::array::from_fn(|i| AppendixRow {
        h_target: i as f64 / 10.0,
        p_e: P_E[i],
        p_i: P_I[i],
        kappa: KAPPA[i],
    })
}

/// Row whose target is closest to `h`, rejecting targets off the grid.
pub fn row_for_target(h: f64) -> Result<AppendixRow> {
    appendix_param_table()
        .into_iter()
        .find(|r| (r.h_target - h).abs() < 1e-9)
        .ok_or_else(|| Error::Contract(format!("no appendix row for homophily target {h}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::homophily_ratio;

    #[test]
    fn cell_layout() {
        let n = 1200;
        let mut cells = [[0; 3]; 3];
        for i in 0..n {
            cells[class_of(i, n)][kind_of(i, n)] += 1;
        }
        for row in cells {
            assert_eq!(row.iter().sum::<usize>(), 400);
            assert_eq!(row, [134, 133, 133]);
        }
    }

    #[test]
    fn pure_relevant_graph() {
        let cfg = SynthConfig {
            n: 90,
            features: 4,
            p_i: 0.0,
            q: 0.0,
            p_e: 0.5,
            kappa: 1.0,
            ..Default::default()
        };
        let d = generate(&cfg).unwrap();
        assert!(d.provenance.iter().all(|&t| t == EdgeTag::Relevant));
        assert_eq!(homophily_ratio(&d.graph, &d.labels).unwrap(), 1.0);
    }

    #[test]
    fn tags_match_endpoints() {
        let cfg = SynthConfig {
            n: 120,
            features: 3,
            q: 0.05,
            kappa: 0.5,
            ..Default::default()
        };
        let d = generate(&cfg).unwrap();
        for (&(u, v), &t) in d.graph.edges().iter().zip(&d.provenance) {
            let same_class = d.labels.get(u) == d.labels.get(v);
            let same_kind = d.implicit_kind[u] == d.implicit_kind[v];
            match t {
                EdgeTag::Relevant => assert!(same_class),
                EdgeTag::Irrelevant => assert!(!same_class && same_kind),
                EdgeTag::Noise => assert!(!same_class && !same_kind),
            }
        }
    }

    #[test]
    fn rejects_ragged_n() {
        let cfg = SynthConfig {
            n: 100,
            ..Default::default()
        };
        assert!(generate(&cfg).is_err());
    }
}
