use alloc::format;
use alloc::vec::Vec;

use super::{Graph, Tensor, Var};
use crate::{Error, Result};

/// Outcome of comparing autodiff gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Largest `|a - b| / max(1, |a|, |b|)` over all checked entries.
    pub max_rel_error: f64,
    /// `(parameter, flat element)` where the maximum occurred.
    pub worst: Option<(usize, usize)>,
    /// Number of scalar entries compared.
    pub checked: usize,
    pub autodiff: Vec<Tensor>,
    pub numeric: Vec<Tensor>,
}

fn evaluate<F>(params: &[Tensor], f: &F) -> Result<(Graph, Vec<Var>, Var)>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let loss = f(&mut g, &vars)?;
    if g.shape(loss) != (1, 1) {
        return Err(Error::Dimension {
            op: "grad_check",
            lhs: g.shape(loss),
            rhs: (1, 1),
        });
    }
    if !g.value(loss).item().is_finite() {
        return Err(Error::NonFinite(format!(
            "loss is {} during gradient check",
            g.value(loss).item()
        )));
    }
    Ok((g, vars, loss))
}

/// Checks the gradient of the scalar computation `f` with respect to every
/// entry of `params` by central differences with step `h`.
///
/// `f` receives a fresh graph and the parameter leaves, in order, and must
/// return a `1 x 1` node.
pub fn grad_check<F>(params: &[Tensor], h: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    if !(1e-6..=1e-4).contains(&h) {
        return Err(Error::Config(format!(
            "finite-difference step {h} outside [1e-6, 1e-4]"
        )));
    }
    let (mut g, vars, loss) = evaluate(params, &f)?;
    g.backward(loss)?;
    let autodiff: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| {
            g.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols()))
        })
        .collect();
    drop(g);

    let mut work: Vec<Tensor> = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    let mut max_rel_error = 0.0f64;
    let mut worst = None;
    let mut checked = 0;
    for pi in 0..params.len() {
        let mut fd = Tensor::zeros(params[pi].rows(), params[pi].cols());
        for ei in 0..params[pi].len() {
            let orig = work[pi].data()[ei];
            work[pi].data_mut()[ei] = orig + h;
            let (gp, _, lp) = evaluate(&work, &f)?;
            let plus = gp.value(lp).item();
            work[pi].data_mut()[ei] = orig - h;
            let (gm, _, lm) = evaluate(&work, &f)?;
            let minus = gm.value(lm).item();
            work[pi].data_mut()[ei] = orig;

            let numeric_grad = (plus - minus) / (2.0 * h);
            fd.data_mut()[ei] = numeric_grad;
            let a = autodiff[pi].data()[ei];
            let err = (a - numeric_grad).abs() / 1f64.max(a.abs()).max(numeric_grad.abs());
            if err > max_rel_error || worst.is_none() {
                max_rel_error = max_rel_error.max(err);
                worst = Some((pi, ei));
            }
            checked += 1;
        }
        numeric.push(fd);
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst,
        checked,
        autodiff,
        numeric,
    })
}
