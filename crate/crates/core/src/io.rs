//! Dataset bundles, LINQS-style content/cites ingestion, and parameter
//! checkpoints.
//!
//! A bundle directory holds
//!
//! ```text
//! meta.json        {"name", "n", "f", "C"}
//! edges.csv        u,v       one undirected edge per line
//! features.csv     n lines of f comma-separated floats
//! labels.csv       n lines, one class id each
//! provenance.csv   optional, one edge tag per edges.csv line
//! splits.json      optional, {"name": {"train": [...], "val": [...], "test": [...]}}
//! ```
//!
//! Floats are written with the shortest representation that parses back to
//! the same bits.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{Graph, Labels, NodeSplit};
use crate::model::{ParamSpec, Params, SPARSE_FEATURE_DENSITY};
use crate::synth::{EdgeTag, SynthDataset};
use crate::tensor::CsrMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub graph: Graph,
    pub features: Array2<f64>,
    pub labels: Labels,
    /// Empty when unknown; otherwise aligned with `graph.edges()`.
    pub provenance: Vec<EdgeTag>,
    pub splits: BTreeMap<String, NodeSplit>,
}

impl Dataset {
    pub fn from_synth(name: impl Into<String>, s: SynthDataset) -> Self {
        Dataset {
            name: name.into(),
            graph: s.graph,
            features: s.features,
            labels: s.labels,
            provenance: s.provenance,
            splits: BTreeMap::new(),
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.graph.num_nodes()
    }

    pub fn num_features(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.num_classes()
    }

    /// Sparse copy of the features when they are sparse enough to pay off.
    pub fn sparse_features(&self) -> Option<CsrMatrix> {
        let nnz = self.features.iter().filter(|&&v| v != 0.0).count();
        let total = self.features.len().max(1);
        if (nnz as f64 / total as f64) < SPARSE_FEATURE_DENSITY {
            Some(CsrMatrix::from_dense(self.features.view()))
        } else {
            None
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.graph.num_nodes();
        if self.features.nrows() != n || self.labels.len() != n {
            return Err(Error::Malformed(format!(
                "{} feature rows and {} labels for {n} nodes",
                self.features.nrows(),
                self.labels.len()
            )));
        }
        if !self.provenance.is_empty() && self.provenance.len() != self.graph.num_edges() {
            return Err(Error::Malformed(format!(
                "{} provenance tags for {} edges",
                self.provenance.len(),
                self.graph.num_edges()
            )));
        }
        for s in self.splits.values() {
            s.validate(n)?;
        }
        Ok(())
    }
}

/// Per-dataset feature preprocessing applied before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureNorm {
    #[default]
    None,
    /// Rows scaled to unit L1 norm (zero rows stay zero).
    RowL1,
    /// Rows scaled to unit L2 norm (zero rows stay zero).
    RowL2,
    /// Columns shifted to zero mean and scaled to unit variance; constant
    /// columns become 0.
    Standardize,
}

impl FeatureNorm {
    pub fn as_str(self) -> &'static str {
        match self {
            FeatureNorm::None => "none",
            FeatureNorm::RowL1 => "row_l1",
            FeatureNorm::RowL2 => "row_l2",
            FeatureNorm::Standardize => "standardize",
        }
    }
}

impl std::fmt::Display for FeatureNorm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for FeatureNorm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "none" => Ok(FeatureNorm::None),
            "row_l1" => Ok(FeatureNorm::RowL1),
            "row_l2" => Ok(FeatureNorm::RowL2),
            "standardize" => Ok(FeatureNorm::Standardize),
            other => Err(Error::Contract(format!(
                "unknown feature normalization `{other}`"
            ))),
        }
    }
}

impl Dataset {
    pub fn normalize_features(&mut self, norm: FeatureNorm) {
        let x = &mut self.features;
        match norm {
            FeatureNorm::None => {}
            FeatureNorm::RowL1 | FeatureNorm::RowL2 => {
                for mut row in x.rows_mut() {
                    let s = if norm == FeatureNorm::RowL1 {
                        row.iter().map(|v| v.abs()).sum::<f64>()
                    } else {
                        row.dot(&row).sqrt()
                    };
                    if s > 0.0 {
                        row /= s;
                    }
                }
            }
            FeatureNorm::Standardize => {
                let n = x.nrows().max(1) as f64;
                for mut col in x.columns_mut() {
                    let mean = col.sum() / n;
                    let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                    if sd > 0.0 {
                        col.mapv_inplace(|v| (v - mean) / sd);
                    } else {
                        col.fill(0.0);
                    }
                }
            }
        }
    }

    pub fn normalized(mut self, norm: FeatureNorm) -> Self {
        self.normalize_features(norm);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleMeta {
    pub name: String,
    pub n: usize,
    pub f: usize,
    #[serde(rename = "C")]
    pub c: usize,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(BufReader::new(File::open(path)?))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Non-empty lines with their 1-based numbers.
fn lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let mut out = Vec::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

pub fn save_bundle(d: &Dataset, dir: &Path) -> Result<()> {
    d.validate()?;
    fs::create_dir_all(dir)?;
    let meta = BundleMeta {
        name: d.name.clone(),
        n: d.num_nodes(),
        f: d.num_features(),
        c: d.num_classes(),
    };
    fs::write(
        dir.join("meta.json"),
        serde_json::to_string_pretty(&meta)? + "\n",
    )?;

    let mut w = create(&dir.join("edges.csv"))?;
    for &(u, v) in d.graph.edges() {
        writeln!(w, "{u},{v}")?;
    }
    w.flush()?;

    let mut w = create(&dir.join("features.csv"))?;
    for row in d.features.rows() {
        let mut first = true;
        for v in row {
            if !first {
                w.write_all(b",")?;
            }
            first = false;
            write!(w, "{v:?}")?;
        }
        w.write_all(b"\n")?;
    }
    w.flush()?;

    let mut w = create(&dir.join("labels.csv"))?;
    for &y in d.labels.as_slice() {
        writeln!(w, "{y}")?;
    }
    w.flush()?;

    let prov = dir.join("provenance.csv");
    if d.provenance.is_empty() {
        if prov.exists() {
            fs::remove_file(prov)?;
        }
    } else {
        let mut w = create(&prov)?;
        for t in &d.provenance {
            writeln!(w, "{}", t.as_str())?;
        }
        w.flush()?;
    }

    let splits = dir.join("splits.json");
    if d.splits.is_empty() {
        if splits.exists() {
            fs::remove_file(splits)?;
        }
    } else {
        fs::write(splits, serde_json::to_string(&d.splits)? + "\n")?;
    }
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<Dataset> {
    let meta_path = dir.join("meta.json");
    let mut text = String::new();
    open(&meta_path)?.read_to_string(&mut text)?;
    let meta: BundleMeta =
        serde_json::from_str(&text).map_err(|e| parse_err(&meta_path, e.line(), e.to_string()))?;

    let edge_path = dir.join("edges.csv");
    let mut raw = Vec::new();
    for (ln, line) in lines(&edge_path)? {
        let mut it = line.split(',').map(str::trim);
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(parse_err(&edge_path, ln, "expected two columns"));
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|e| parse_err(&edge_path, ln, format!("`{s}`: {e}")))
        };
        let (u, v) = (parse(a)?, parse(b)?);
        if u >= meta.n || v >= meta.n {
            return Err(parse_err(
                &edge_path,
                ln,
                format!("node id outside [0, {})", meta.n),
            ));
        }
        raw.push((u, v));
    }
    let graph = Graph::from_edges(meta.n, &raw)?;

    let feat_path = dir.join("features.csv");
    let rows = lines(&feat_path)?;
    if rows.len() != meta.n {
        return Err(Error::CountMismatch {
            path: feat_path,
            expected: meta.n,
            found: rows.len(),
        });
    }
    let mut features = Array2::<f64>::zeros((meta.n, meta.f));
    for (i, (ln, line)) in rows.iter().enumerate() {
        let mut count = 0;
        for (j, tok) in line.split(',').enumerate() {
            if j >= meta.f {
                return Err(parse_err(
                    &feat_path,
                    *ln,
                    format!("more than {} columns", meta.f),
                ));
            }
            features[[i, j]] = tok
                .trim()
                .parse::<f64>()
                .map_err(|e| parse_err(&feat_path, *ln, format!("column {}: {e}", j + 1)))?;
            count += 1;
        }
        if count != meta.f {
            return Err(parse_err(
                &feat_path,
                *ln,
                format!("{count} columns, expected {}", meta.f),
            ));
        }
    }

    let label_path = dir.join("labels.csv");
    let rows = lines(&label_path)?;
    if rows.len() != meta.n {
        return Err(Error::CountMismatch {
            path: label_path,
            expected: meta.n,
            found: rows.len(),
        });
    }
    let mut y = Vec::with_capacity(meta.n);
    for (ln, line) in &rows {
        let c = line
            .trim()
            .parse::<usize>()
            .map_err(|e| parse_err(&label_path, *ln, e.to_string()))?;
        if c >= meta.c {
            return Err(parse_err(
                &label_path,
                *ln,
                format!("class {c} not below C = {}", meta.c),
            ));
        }
        y.push(c);
    }
    let labels = Labels::new(y, meta.c)?;

    let prov_path = dir.join("provenance.csv");
    let provenance = if prov_path.exists() {
        let rows = lines(&prov_path)?;
        if rows.len() != raw.len() {
            return Err(Error::CountMismatch {
                path: prov_path,
                expected: raw.len(),
                found: rows.len(),
            });
        }
        let mut tags = vec![EdgeTag::Noise; graph.num_edges()];
        for ((ln, line), &(u, v)) in rows.iter().zip(&raw) {
            let tag = line
                .parse::<EdgeTag>()
                .map_err(|e| parse_err(&prov_path, *ln, e.to_string()))?;
            if let Some(e) = graph.edge_id(u, v) {
                tags[e] = tag;
            }
        }
        tags
    } else {
        Vec::new()
    };

    let split_path = dir.join("splits.json");
    let splits = if split_path.exists() {
        let text = fs::read_to_string(&split_path)?;
        serde_json::from_str(&text).map_err(|e| parse_err(&split_path, e.line(), e.to_string()))?
    } else {
        BTreeMap::new()
    };

    let d = Dataset {
        name: meta.name,
        graph,
        features,
        labels,
        provenance,
        splits,
    };
    d.validate()?;
    Ok(d)
}

/// Counters from [`load_content_cites`].
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub nodes: usize,
    pub features: usize,
    pub classes: usize,
    pub citation_lines: usize,
    pub dangling_citations: usize,
    pub self_citations: usize,
    /// Citation lines naming an already seen undirected pair.
    pub duplicate_pairs: usize,
    pub undirected_edges: usize,
}

/// Reads `id<TAB>f_0 .. f_{f-1}<TAB>label` content lines and
/// `cited<TAB>citing` lines. Node ids follow first appearance in the
/// content file, class ids follow sorted label strings, and citations to
/// papers without a content row are dropped and counted.
pub fn load_content_cites(content: &Path, cites: &Path) -> Result<(Dataset, IngestReport)> {
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut feats: Vec<Vec<f64>> = Vec::new();
    let mut label_str: Vec<String> = Vec::new();
    let mut width: Option<usize> = None;
    for (ln, line) in lines(content)? {
        let toks: Vec<&str> = line.split(['\t', ' ']).filter(|t| !t.is_empty()).collect();
        if toks.len() < 2 {
            return Err(parse_err(
                content,
                ln,
                "expected an id, features and a label",
            ));
        }
        let f = toks.len() - 2;
        match width {
            None => width = Some(f),
            Some(w) if w != f => {
                return Err(Error::Malformed(format!(
                    "{}:{ln}: {f} feature columns, earlier rows have {w}",
                    content.display()
                )))
            }
            _ => {}
        }
        if ids.contains_key(toks[0]) {
            return Err(parse_err(
                content,
                ln,
                format!("duplicate paper id `{}`", toks[0]),
            ));
        }
        let row = toks[1..=f]
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|e| parse_err(content, ln, format!("`{t}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        ids.insert(toks[0].to_string(), feats.len());
        feats.push(row);
        label_str.push(toks[toks.len() - 1].to_string());
    }
    let n = feats.len();
    if n == 0 {
        return Err(Error::Malformed(format!(
            "{} has no rows",
            content.display()
        )));
    }
    let f = width.unwrap_or(0);
    let mut classes: Vec<&String> = label_str.iter().collect();
    classes.sort();
    classes.dedup();
    let class_id: HashMap<&String, usize> =
        classes.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let y: Vec<usize> = label_str.iter().map(|s| class_id[s]).collect();

    let mut report = IngestReport {
        nodes: n,
        features: f,
        classes: classes.len(),
        ..Default::default()
    };
    let mut raw = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (ln, line) in lines(cites)? {
        let toks: Vec<&str> = line.split(['\t', ' ']).filter(|t| !t.is_empty()).collect();
        if toks.len() != 2 {
            return Err(parse_err(cites, ln, "expected two ids"));
        }
        report.citation_lines += 1;
        let (Some(&a), Some(&b)) = (ids.get(toks[0]), ids.get(toks[1])) else {
            report.dangling_citations += 1;
            continue;
        };
        if a == b {
            report.self_citations += 1;
            continue;
        }
        if !seen.insert((a.min(b), a.max(b))) {
            report.duplicate_pairs += 1;
        }
        raw.push((a, b));
    }
    let graph = Graph::from_edges(n, &raw)?;
    report.undirected_edges = graph.num_edges();

    let mut features = Array2::<f64>::zeros((n, f));
    for (i, row) in feats.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            features[[i, j]] = v;
        }
    }
    let name = content
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "content".into());
    let n_classes = classes.len();
    Ok((
        Dataset {
            name,
            graph,
            features,
            labels: Labels::new(y, n_classes)?,
            provenance: Vec::new(),
            splits: BTreeMap::new(),
        },
        report,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub model: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub params: Vec<ParamSpec>,
}

/// Hex SHA-256 of the compact JSON form of `config`.
pub fn config_hash(config: &serde_json::Value) -> String {
    let digest = Sha256::digest(config.to_string().as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Writes `params.bin` (little-endian f64, manifest order) and
/// `manifest.json`.
pub fn save_checkpoint(
    dir: &Path,
    model: &str,
    seed: u64,
    config: serde_json::Value,
    params: &Params,
) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let manifest = CheckpointManifest {
        model: model.to_string(),
        seed,
        config_hash: config_hash(&config),
        config,
        params: params.specs(),
    };
    let mut w = create(&dir.join("params.bin"))?;
    for v in params.to_flat() {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    let path = dir.join("manifest.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(path)
}

pub fn load_checkpoint(dir: &Path) -> Result<(Params, CheckpointManifest)> {
    let mpath = dir.join("manifest.json");
    let mut text = String::new();
    open(&mpath)?.read_to_string(&mut text)?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| parse_err(&mpath, e.line(), e.to_string()))?;
    if config_hash(&manifest.config) != manifest.config_hash {
        return Err(Error::Malformed(format!(
            "{}: config hash mismatch",
            mpath.display()
        )));
    }
    let bpath = dir.join("params.bin");
    let mut bytes = Vec::new();
    open(&bpath)?.read_to_end(&mut bytes)?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Malformed(format!(
            "{}: length not a multiple of 8",
            bpath.display()
        )));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((Params::from_flat(&manifest.params, &flat)?, manifest))
}
