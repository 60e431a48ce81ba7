//! Central finite-difference verification of reverse-mode gradients.

use crate::error::{Result, TensorError};
use crate::params::ParamStore;
use crate::tape::{Tape, Var};

/// Gradients smaller than this are compared in absolute terms.
pub const REL_ERROR_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

fn eval<F>(store: &ParamStore<f64>, f: &mut F) -> Result<f64>
where
    F: FnMut(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let root = f(store, &mut tape)?;
    let v = tape.value(root);
    if v.numel() != 1 {
        return Err(TensorError::NonScalarRoot(v.shape().to_vec()));
    }
    let loss = v.data()[0];
    if !loss.is_finite() {
        return Err(TensorError::NonFinite("loss".into()));
    }
    Ok(loss)
}

/// Compares the tape gradient of `f` against `(f(p + h) - f(p - h)) / 2h` for
/// every element of every parameter in `store` and returns the worst
/// relative error `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`.
pub fn grad_check<F>(store: &mut ParamStore<f64>, h: f64, mut f: F) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore<f64>, &mut Tape<f64>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let root = f(store, &mut tape)?;
    if !tape.value(root).data()[0].is_finite() {
        return Err(TensorError::NonFinite("loss".into()));
    }
    let grads = tape.backward(root)?;
    drop(tape);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
    };
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let n = store.get(id).numel();
        let analytic = grads.param(id).unwrap_or_else(|| vec![0.0; n]);
        for j in 0..n {
            let orig = store.get(id).data()[j];
            store.get_mut(id).data_mut()[j] = orig + h;
            let up = eval(store, &mut f);
            store.get_mut(id).data_mut()[j] = orig - h;
            let down = eval(store, &mut f);
            store.get_mut(id).data_mut()[j] = orig;
            let numeric = (up? - down?) / (2.0 * h);
            let a = analytic[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst_param.is_empty() {
                report.max_rel_error = rel.max(report.max_rel_error);
                report.worst_param = store.name(id).to_string();
                report.worst_index = j;
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}
