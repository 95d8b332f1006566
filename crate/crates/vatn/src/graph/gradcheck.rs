//! Central finite-difference verification of analytic gradients.
//!
//! Runs in `f64`. The step is `1e-5` scaled by element magnitude; errors
//! are relative with a small-magnitude floor so near-zero gradients are
//! judged on absolute error instead of blowing up the ratio.

use super::params::ParamStore;
use super::{Graph, Mode, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const FD_STEP: f64 = 1e-5;
const REL_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// `(name, max relative error)` per checked tensor: the named inputs
    /// first, then every trainable parameter.
    pub per_input: Vec<(String, f64)>,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compare analytic gradients of a scalar-valued graph against central
/// finite differences, for each named input and each trainable parameter.
///
/// `build` must construct the same op sequence on every call; the graph it
/// receives is seeded identically each time so stochastic ops replay.
/// Set `corrupt` only as a negative control: it perturbs one analytic
/// gradient so the check must fail.
pub fn grad_check<F>(
    store: &mut ParamStore<f64>,
    inputs: &[(String, Tensor<f64>)],
    tolerance: f64,
    mode: Mode,
    corrupt: bool,
    mut build: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph<f64>, &ParamStore<f64>, &[Var]) -> Var,
{
    let eval = |store: &ParamStore<f64>, tensors: &[Tensor<f64>], build: &mut F| -> Result<f64> {
        let mut g = Graph::with_seed(mode, 7);
        let vars: Vec<Var> = tensors.iter().map(|t| g.input(t.clone())).collect();
        let root = build(&mut g, store, &vars);
        let v = g.value(root);
        if v.numel() != 1 || !v.is_finite() {
            return Err(Error::numerical(
                "gradcheck target must be a finite scalar".to_string(),
            ));
        }
        Ok(v.data()[0])
    };

    // analytic pass
    let tensors: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| t.clone()).collect();
    store.zero_grads();
    let mut g = Graph::with_seed(mode, 7);
    let vars: Vec<Var> = tensors.iter().map(|t| g.input(t.clone())).collect();
    let root = build(&mut g, store, &vars);
    if g.value(root).numel() != 1 || !g.value(root).is_finite() {
        return Err(Error::numerical("gradcheck target must be a finite scalar"));
    }
    let grads = g.backward_params(root, store);
    let mut input_grads: Vec<Tensor<f64>> = Vec::with_capacity(vars.len());
    for (k, v) in vars.iter().enumerate() {
        let mut an = grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(tensors[k].shape().to_vec()));
        if corrupt && k == 0 && an.numel() > 0 {
            an.data_mut()[0] += 0.5 * an.data_mut()[0].abs().max(1.0);
        }
        input_grads.push(an);
    }

    let mut per_input = Vec::new();
    let mut max_rel = 0f64;

    // named inputs
    for (k, (name, _)) in inputs.iter().enumerate() {
        let mut worst = 0f64;
        for i in 0..tensors[k].numel() {
            let orig = tensors[k].data()[i];
            let h = FD_STEP * orig.abs().max(1.0);
            let mut probe = tensors.clone();
            probe[k].data_mut()[i] = orig + h;
            let fp = eval(store, &probe, &mut build)?;
            probe[k].data_mut()[i] = orig - h;
            let fm = eval(store, &probe, &mut build)?;
            if !fp.is_finite() || !fm.is_finite() {
                return Err(Error::numerical("non-finite value during finite differencing"));
            }
            let numeric = (fp - fm) / (2.0 * h);
            worst = worst.max(rel_err(input_grads[k].data()[i], numeric));
        }
        max_rel = max_rel.max(worst);
        per_input.push((name.clone(), worst));
    }

    // trainable parameters
    let param_ids: Vec<_> = store.ids().filter(|&id| store.entry(id).trainable).collect();
    for id in param_ids {
        let name = store.entry(id).name.clone();
        let analytic = store.grad(id).clone();
        let base = store.value(id).clone();
        let mut worst = 0f64;
        for i in 0..base.numel() {
            let orig = base.data()[i];
            let h = FD_STEP * orig.abs().max(1.0);
            let mut probe = base.clone();
            probe.data_mut()[i] = orig + h;
            store.set_value(id, probe.clone());
            let fp = eval(store, &tensors, &mut build)?;
            probe.data_mut()[i] = orig - h;
            store.set_value(id, probe);
            let fm = eval(store, &tensors, &mut build)?;
            store.set_value(id, base.clone());
            let numeric = (fp - fm) / (2.0 * h);
            worst = worst.max(rel_err(analytic.data()[i], numeric));
        }
        max_rel = max_rel.max(worst);
        per_input.push((name, worst));
    }

    Ok(GradCheckReport {
        per_input,
        max_rel_err: max_rel,
        tolerance,
    })
}
