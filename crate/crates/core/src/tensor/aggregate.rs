//! Edge-weighted symmetric-normalized aggregation kernels.
//!
//! For undirected edges `e = {u, v}` with weight `w_e`:
//!
//! ```text
//! d_i   = sum_{e incident to i} w_e
//! c_i   = d_i^{-1/2}  if d_i > deg_floor, else 0
//! out_i = c_i * sum_{j in N(i)} w_ij * c_j * z_j
//! ```
//!
//! A node whose degree does not exceed the floor (isolated nodes, or
//! negative sums produced by inverted dropout on split coefficients)
//! contributes no neighborhood term and receives none.

use ndarray::{Array2, ArrayView2, Axis};

/// Default degree floor.
pub const DEG_FLOOR: f64 = 1e-12;

/// Normalization coefficients of one aggregation.
#[derive(Debug, Clone)]
pub struct Normalization {
    pub degrees: Vec<f64>,
    pub inv_sqrt: Vec<f64>,
    /// Number of nodes with at least one incident edge whose degree fell at
    /// or below the floor.
    pub clamped: usize,
}

pub fn normalization(
    n: usize,
    edges: &[(usize, usize)],
    w: &[f64],
    deg_floor: f64,
) -> Normalization {
    let mut degrees = vec![0.0; n];
    let mut touched = vec![false; n];
    for (&(u, v), &we) in edges.iter().zip(w) {
        degrees[u] += we;
        degrees[v] += we;
        touched[u] = true;
        touched[v] = true;
    }
    let mut clamped = 0;
    let inv_sqrt = degrees
        .iter()
        .zip(&touched)
        .map(|(&d, &t)| {
            if d > deg_floor {
                1.0 / d.sqrt()
            } else {
                if t {
                    clamped += 1;
                }
                0.0
            }
        })
        .collect();
    Normalization {
        degrees,
        inv_sqrt,
        clamped,
    }
}

/// `out = C A_w C z`, where `C = diag(inv_sqrt)`.
pub fn propagate(
    edges: &[(usize, usize)],
    w: &[f64],
    inv_sqrt: &[f64],
    z: ArrayView2<f64>,
) -> Array2<f64> {
    let mut out = Array2::<f64>::zeros(z.raw_dim());
    for (&(u, v), &we) in edges.iter().zip(w) {
        let coef = we * inv_sqrt[u] * inv_sqrt[v];
        if coef == 0.0 {
            continue;
        }
        out.row_mut(u).scaled_add(coef, &z.row(v));
        out.row_mut(v).scaled_add(coef, &z.row(u));
    }
    out
}

/// One forward aggregation. Returns the output and its normalization.
pub fn aggregate(
    n: usize,
    edges: &[(usize, usize)],
    w: &[f64],
    deg_floor: f64,
    z: ArrayView2<f64>,
) -> (Array2<f64>, Normalization) {
    let norm = normalization(n, edges, w, deg_floor);
    let out = propagate(edges, w, &norm.inv_sqrt, z);
    (out, norm)
}

/// Vector-Jacobian products of [`aggregate`] with respect to `z` and `w`
/// given the upstream gradient `g` and the forward output `out`.
pub fn aggregate_backward(
    edges: &[(usize, usize)],
    w: &[f64],
    norm: &Normalization,
    z: ArrayView2<f64>,
    out: ArrayView2<f64>,
    g: ArrayView2<f64>,
) -> (Array2<f64>, Vec<f64>) {
    let c = &norm.inv_sqrt;
    // The operator is symmetric, so dL/dz is the same propagation of g.
    let grad_z = propagate(edges, w, c, g);
    // dL/dd_i = -(g_i . out_i + z_i . (C A C g)_i) / (2 d_i), zero when clamped.
    let g_out = (&g * &out).sum_axis(Axis(1));
    let z_gz = (&z * &grad_z).sum_axis(Axis(1));
    let grad_deg: Vec<f64> = (0..c.len())
        .map(|i| {
            if c[i] == 0.0 {
                0.0
            } else {
                -(g_out[i] + z_gz[i]) * c[i] * c[i] * 0.5
            }
        })
        .collect();
    let grad_w = edges
        .iter()
        .map(|&(u, v)| {
            let direct = c[u] * c[v] * (g.row(u).dot(&z.row(v)) + g.row(v).dot(&z.row(u)));
            direct + grad_deg[u] + grad_deg[v]
        })
        .collect();
    (grad_z, grad_w)
}
