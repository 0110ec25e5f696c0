//! Central finite-difference gradient checking.
//!
//! The checker only ever evaluates forward values, so it stays independent of
//! every backward rule it is used to verify.

use super::graph::{Graph, Mode, Var};
use super::tensor::{ParamId, ParamStore};
use super::Result;

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, RELATIVE_ERROR_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / scale
}

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub max_relative_error: f64,
    pub checked: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_relative_error(&self) -> f64 {
        self.params
            .iter()
            .map(|p| p.max_relative_error)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params
            .iter()
            .max_by(|a, b| a.max_relative_error.total_cmp(&b.max_relative_error))
    }
}

/// Compares analytic parameter gradients of `loss_fn` against central
/// differences with step `h`, for every scalar of every parameter.
///
/// `loss_fn` must build a deterministic scalar loss on the given graph.
pub fn check_params<F>(store: &mut ParamStore, h: f64, loss_fn: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
    check_subset(store, &ids, h, loss_fn)
}

pub fn check_subset<F>(
    store: &mut ParamStore,
    ids: &[ParamId],
    h: f64,
    loss_fn: F,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph) -> Result<Var>,
{
    let analytic = {
        let mut g = Graph::new(store, Mode::Eval);
        let loss = loss_fn(&mut g)?;
        g.backward(loss)?.into_params()
    };
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut g = Graph::new(store, Mode::Eval);
        let loss = loss_fn(&mut g)?;
        Ok(g.value(loss).item())
    };

    let mut report = GradCheckReport { params: Vec::new() };
    for &id in ids {
        let n = store.value(id).len();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            let orig = store.value(id).data()[i];
            store.value_mut(id).data_mut()[i] = orig + h;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig - h;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic.get(id).map_or(0.0, |g| g.data()[i]);
            worst = worst.max(relative_error(a, numeric));
        }
        report.params.push(ParamCheck {
            name: store.get(id).name.clone(),
            max_relative_error: worst,
            checked: n,
        });
    }
    Ok(report)
}
