use ndarray::Array2;

use super::tape::{Tape, Var};
use crate::error::{Error, Result};

/// Compares reverse-mode gradients of `f` with central differences
/// `(f(x + h) - f(x - h)) / 2h`, one coordinate at a time, and returns the
/// largest relative error `|a - b| / max(|a|, |b|, 1e-8)`.
///
/// `f` receives one leaf per entry of `params` and must build a `1 x 1`
/// loss deterministically (no dropout).
pub fn grad_check<'a, F>(f: F, params: &[Array2<f64>], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<'a>, &[Var]) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::Contract(format!(
            "finite-difference step {h} must be positive"
        )));
    }
    let analytic = {
        let mut tape = Tape::new();
        let leaves = params
            .iter()
            .map(|p| tape.leaf(p.clone()))
            .collect::<Result<Vec<_>>>()?;
        let loss = f(&mut tape, &leaves)?;
        let grads = tape.backward(loss)?;
        leaves.iter().map(|&v| grads.wrt(v)).collect::<Vec<_>>()
    };
    let eval = |ps: &[Array2<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let leaves = ps
            .iter()
            .map(|p| tape.leaf(p.clone()))
            .collect::<Result<Vec<_>>>()?;
        let loss = f(&mut tape, &leaves)?;
        Ok(tape.scalar(loss))
    };
    let mut work: Vec<Array2<f64>> = params.to_vec();
    let mut worst = 0.0f64;
    for k in 0..params.len() {
        for idx in 0..params[k].len() {
            let (r, c) = (idx / params[k].ncols(), idx % params[k].ncols());
            let orig = work[k][[r, c]];
            work[k][[r, c]] = orig + h;
            let plus = eval(&work)?;
            work[k][[r, c]] = orig - h;
            let minus = eval(&work)?;
            work[k][[r, c]] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[k][[r, c]];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}
