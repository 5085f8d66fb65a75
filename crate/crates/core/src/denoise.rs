//! Graph signal denoising objectives and solvers used as oracles for the
//! aggregation layer.
//!
//! Smoothness sums run over undirected edges once:
//! `tr(Z^T L Z) = sum_{(i,j)} w_ij ||Z_i - Z_j||^2` for the combinatorial
//! laplacian. The normalized laplacian is `I - C A C` with the same
//! degree-floor rule as the aggregation kernel (`c_i = 0` when
//! `d_i <= floor`).

use ndarray::{Array2, ArrayView2, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::aggregate::{normalization, propagate};
use crate::tensor::DEG_FLOOR;

/// Largest system the dense solver accepts.
pub const MAX_DENSE_NODES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LaplacianKind {
    Combinatorial,
    SymNormalized,
}

#[derive(Debug, Clone)]
pub struct DenoiseProblem {
    pub x: Array2<f64>,
    pub edges: Vec<(usize, usize)>,
    pub weights: Vec<f64>,
    pub xi: f64,
    pub kind: LaplacianKind,
}

impl DenoiseProblem {
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    fn check(&self) -> Result<()> {
        check_edges(self.n(), &self.edges, &self.weights)?;
        if !(self.xi >= 0.0) {
            return Err(Error::Contract(format!("xi = {} must be >= 0", self.xi)));
        }
        Ok(())
    }
}

fn check_edges(n: usize, edges: &[(usize, usize)], w: &[f64]) -> Result<()> {
    if edges.len() != w.len() {
        return Err(Error::shape(
            "denoise",
            format!("{} weights for {} edges", w.len(), edges.len()),
        ));
    }
    if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| u >= n || v >= n || u == v) {
        return Err(Error::Malformed(format!(
            "edge ({u}, {v}) invalid for {n} nodes"
        )));
    }
    Ok(())
}

/// Dense laplacian.
pub fn laplacian(
    n: usize,
    edges: &[(usize, usize)],
    w: &[f64],
    kind: LaplacianKind,
) -> Array2<f64> {
    let mut a = Array2::<f64>::zeros((n, n));
    for (&(u, v), &we) in edges.iter().zip(w) {
        a[[u, v]] += we;
        a[[v, u]] += we;
    }
    match kind {
        LaplacianKind::Combinatorial => {
            let mut l = -a.clone();
            for i in 0..n {
                l[[i, i]] += a.row(i).sum();
            }
            l
        }
        LaplacianKind::SymNormalized => {
            let c: Vec<f64> = (0..n)
                .map(|i| {
                    let d = a.row(i).sum();
                    if d > DEG_FLOOR {
                        1.0 / d.sqrt()
                    } else {
                        0.0
                    }
                })
                .collect();
            let mut l = Array2::<f64>::eye(n);
            for ((i, j), &aij) in a.indexed_iter() {
                l[[i, j]] -= c[i] * aij * c[j];
            }
            l
        }
    }
}

/// `tr(Z^T L Z)` as a sum over undirected edges.
pub fn smoothness(
    z: ArrayView2<f64>,
    edges: &[(usize, usize)],
    w: &[f64],
    kind: LaplacianKind,
) -> f64 {
    let sq = |a: ndarray::ArrayView1<f64>, ca: f64, b: ndarray::ArrayView1<f64>, cb: f64| -> f64 {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| (ca * x - cb * y).powi(2))
            .sum()
    };
    match kind {
        LaplacianKind::Combinatorial => edges
            .iter()
            .zip(w)
            .map(|(&(u, v), &we)| we * sq(z.row(u), 1.0, z.row(v), 1.0))
            .sum(),
        LaplacianKind::SymNormalized => {
            let norm = normalization(z.nrows(), edges, w, DEG_FLOOR);
            let c = &norm.inv_sqrt;
            let pairs: f64 = edges
                .iter()
                .zip(w)
                .map(|(&(u, v), &we)| we * sq(z.row(u), c[u], z.row(v), c[v]))
                .sum();
            // Nodes without usable degree keep their identity term.
            let lone: f64 = (0..z.nrows())
                .filter(|&i| c[i] == 0.0)
                .map(|i| z.row(i).dot(&z.row(i)))
                .sum();
            pairs + lone
        }
    }
}

/// `||Z - X||^2 + xi tr(Z^T L Z)`.
pub fn objective_value(p: &DenoiseProblem, z: ArrayView2<f64>) -> Result<f64> {
    p.check()?;
    if z.dim() != p.x.dim() {
        return Err(Error::shape(
            "objective_value",
            format!("{:?} vs {:?}", z.dim(), p.x.dim()),
        ));
    }
    let fit: f64 = Zip::from(&z)
        .and(&p.x)
        .fold(0.0, |acc, a, b| acc + (a - b).powi(2));
    Ok(fit + p.xi * smoothness(z, &p.edges, &p.weights, p.kind))
}

/// Two-channel objective with per-edge coefficients that must sum to 1:
/// `||Z_R - X_R||^2 + ||Z_IR - X_IR||^2
///  + xi sum_e (a_R ||dZ_R||^2 + a_IR ||dZ_IR||^2)`.
#[allow(clippy::too_many_arguments)]
pub fn split_objective_value(
    z_r: ArrayView2<f64>,
    z_ir: ArrayView2<f64>,
    x_r: ArrayView2<f64>,
    x_ir: ArrayView2<f64>,
    edges: &[(usize, usize)],
    a_r: &[f64],
    a_ir: &[f64],
    xi: f64,
) -> Result<f64> {
    check_edges(z_r.nrows(), edges, a_r)?;
    check_edges(z_ir.nrows(), edges, a_ir)?;
    if z_r.dim() != x_r.dim() || z_ir.dim() != x_ir.dim() {
        return Err(Error::shape(
            "split_objective_value",
            "signal and estimate differ",
        ));
    }
    if let Some(e) = (0..edges.len()).find(|&e| (a_r[e] + a_ir[e] - 1.0).abs() > 1e-12) {
        return Err(Error::Contract(format!(
            "edge {e}: a_R + a_IR = {} is not 1",
            a_r[e] + a_ir[e]
        )));
    }
    let fit = |z: ArrayView2<f64>, x: ArrayView2<f64>| -> f64 {
        Zip::from(&z)
            .and(&x)
            .fold(0.0, |acc, a, b| acc + (a - b).powi(2))
    };
    let smooth = smoothness(z_r, edges, a_r, LaplacianKind::Combinatorial)
        + smoothness(z_ir, edges, a_ir, LaplacianKind::Combinatorial);
    Ok(fit(z_r, x_r) + fit(z_ir, x_ir) + xi * smooth)
}

/// In-place Cholesky factor of a symmetric positive definite matrix.
fn cholesky(mut a: Array2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= a[[j, k]] * a[[j, k]];
        }
        if !(d > 0.0) {
            return Err(Error::Contract(format!(
                "matrix not positive definite at pivot {j}"
            )));
        }
        let d = d.sqrt();
        a[[j, j]] = d;
        for i in j + 1..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= a[[i, k]] * a[[j, k]];
            }
            a[[i, j]] = s / d;
        }
        for i in 0..j {
            a[[i, j]] = 0.0;
        }
    }
    Ok(a)
}

/// Minimizer of the denoising objective: solves `(I + xi L) Z = X`.
pub fn closed_form_denoise(p: &DenoiseProblem) -> Result<Array2<f64>> {
    p.check()?;
    let n = p.n();
    if n > MAX_DENSE_NODES {
        return Err(Error::Capability(format!(
            "dense solve limited to {MAX_DENSE_NODES} nodes, got {n}"
        )));
    }
    let mut m = laplacian(n, &p.edges, &p.weights, p.kind) * p.xi;
    for i in 0..n {
        m[[i, i]] += 1.0;
    }
    let l = cholesky(m)?;
    let mut z = p.x.clone();
    for mut col in z.columns_mut() {
        // Forward then backward substitution.
        for i in 0..n {
            let mut s = col[i];
            for k in 0..i {
                s -= l[[i, k]] * col[k];
            }
            col[i] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = col[i];
            for k in i + 1..n {
                s -= l[[k, i]] * col[k];
            }
            col[i] = s / l[[i, i]];
        }
    }
    Ok(z)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub max_dev: f64,
    pub xi: f64,
    pub beta: f64,
}

/// Compares one aggregation step `eps Z0 + (1 - eps) A~ Zk` (sparse
/// kernel) with one gradient step on `||Z - Z0||^2 + xi tr(Z^T L Z)` at
/// `Zk` (dense laplacian), using `xi = 1/eps - 1`, `beta = 1/(2 + 2 xi)`.
pub fn lemma1_check(
    z0: ArrayView2<f64>,
    zk: ArrayView2<f64>,
    edges: &[(usize, usize)],
    a_r: &[f64],
    eps: f64,
) -> Result<Lemma1Report> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Contract(format!("eps = {eps} outside (0, 1]")));
    }
    if z0.dim() != zk.dim() {
        return Err(Error::shape(
            "lemma1_check",
            format!("{:?} vs {:?}", z0.dim(), zk.dim()),
        ));
    }
    let n = z0.nrows();
    check_edges(n, edges, a_r)?;
    let xi = 1.0 / eps - 1.0;
    let beta = 1.0 / (2.0 + 2.0 * xi);

    let norm = normalization(n, edges, a_r, DEG_FLOOR);
    let agg = propagate(edges, a_r, &norm.inv_sqrt, zk);
    let layer = &z0 * eps + &(agg * (1.0 - eps));

    let l = laplacian(n, edges, a_r, LaplacianKind::SymNormalized);
    let grad = (&zk - &z0) * 2.0 + l.dot(&zk) * (2.0 * xi);
    let step = &zk - &(grad * beta);

    let max_dev = Zip::from(&layer)
        .and(&step)
        .fold(0.0f64, |m, a, b| m.max((a - b).abs()));
    Ok(Lemma1Report { max_dev, xi, beta })
}

/// Random instance for [`lemma1_check`]: `n` nodes, `d` columns, a random
/// edge set with weights in (0, 1), and `eps` in (0, 1] unless given.
pub fn lemma1_random<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    d: usize,
    eps: Option<f64>,
) -> Result<(Lemma1Report, f64)> {
    if n < 2 || d == 0 {
        return Err(Error::Contract(
            "lemma check needs n >= 2 and d >= 1".into(),
        ));
    }
    let density = rng.random_range(0.1..0.9);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in u + 1..n {
            if rng.random::<f64>() < density {
                edges.push((u, v));
            }
        }
    }
    let w: Vec<f64> = edges.iter().map(|_| rng.random_range(1e-3..1.0)).collect();
    let z0 = Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.0..1.0));
    let zk = Array2::from_shape_simple_fn((n, d), || rng.random_range(-1.0..1.0));
    // Uniform on (0, 1].
    let eps = eps.unwrap_or_else(|| 1.0 - rng.random::<f64>());
    Ok((lemma1_check(z0.view(), zk.view(), &edges, &w, eps)?, eps))
}

#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub z: Array2<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub max_change: f64,
}

/// Iterates `Z <- eps Z0 + (1 - eps) A~ Z` from `Z0` with frozen weights
/// until the largest entry change drops below `tol`.
pub fn fixed_point_denoise(
    z0: ArrayView2<f64>,
    edges: &[(usize, usize)],
    w: &[f64],
    eps: f64,
    iters: usize,
    tol: f64,
) -> Result<FixedPoint> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Contract(format!("eps = {eps} outside (0, 1]")));
    }
    let n = z0.nrows();
    check_edges(n, edges, w)?;
    let norm = normalization(n, edges, w, DEG_FLOOR);
    let mut z = z0.to_owned();
    let mut max_change = f64::INFINITY;
    for it in 1..=iters {
        let next = &z0 * eps + &(propagate(edges, w, &norm.inv_sqrt, z.view()) * (1.0 - eps));
        max_change = Zip::from(&next)
            .and(&z)
            .fold(0.0f64, |m, a, b| m.max((a - b).abs()));
        z = next;
        if max_change < tol {
            return Ok(FixedPoint {
                z,
                iterations: it,
                converged: true,
                max_change,
            });
        }
    }
    log::warn!("fixed point not reached in {iters} iterations (last change {max_change:e})");
    Ok(FixedPoint {
        z,
        iterations: iters,
        converged: false,
        max_change,
    })
}
