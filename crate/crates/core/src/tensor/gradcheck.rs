use super::ParamStore;
use crate::error::{Error, Result};

/// Outcome of comparing reverse-mode gradients with central differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    /// Worst error over all parameter tensors; see [`grad_check`].
    pub max_rel_error: f64,
    /// `(parameter name, relative error)` for every tensor.
    pub per_param: Vec<(String, f64)>,
}

/// Checks the gradients `f` writes into the store against central finite
/// differences with the given step.
///
/// `f` evaluates the scalar objective at the store's current values and
/// fills every parameter's gradient buffer. For each parameter tensor the
/// error is the largest absolute deviation between the two gradients,
/// relative to the largest gradient magnitude in that tensor. Objectives with
/// kinks (ReLU at exactly zero) yield large errors there; those are reported,
/// not excluded.
pub fn grad_check<F>(mut f: F, point: &ParamStore<f64>, step: f64) -> Result<GradCheckReport>
where
    F: FnMut(&mut ParamStore<f64>) -> Result<f64>,
{
    if !(step > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let mut base = point.clone();
    let f0 = f(&mut base)?;
    if !f0.is_finite() {
        return Err(Error::NonFinite("objective at the base point".into()));
    }
    let analytic: Vec<Vec<f64>> = base
        .iter()
        .map(|p| {
            p.tensor
                .grad()
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; p.tensor.numel()])
        })
        .collect();

    let mut probe = point.clone();
    let mut per_param = Vec::with_capacity(point.len());
    let mut worst = 0.0f64;
    for (pi, ad) in analytic.iter().enumerate() {
        let mut max_dev = 0.0f64;
        let mut scale = 0.0f64;
        for (j, &a) in ad.iter().enumerate() {
            let orig = point.get_index(pi).expect("index").tensor.data()[j];
            let mut eval = |x: f64, probe: &mut ParamStore<f64>| -> Result<f64> {
                probe.get_index_mut(pi).expect("index").tensor.data_mut()[j] = x;
                let v = f(probe)?;
                if !v.is_finite() {
                    let name = &point.get_index(pi).expect("index").name;
                    return Err(Error::NonFinite(format!("objective at perturbed {name}[{j}]")));
                }
                Ok(v)
            };
            let plus = eval(orig + step, &mut probe)?;
            let minus = eval(orig - step, &mut probe)?;
            probe.get_index_mut(pi).expect("index").tensor.data_mut()[j] = orig;
            let fd = (plus - minus) / (2.0 * step);
            max_dev = max_dev.max((fd - a).abs());
            scale = scale.max(fd.abs()).max(a.abs());
        }
        let rel = if scale > 0.0 { max_dev / scale } else { max_dev };
        worst = worst.max(rel);
        per_param.push((point.get_index(pi).expect("index").name.clone(), rel));
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        per_param,
    })
}
