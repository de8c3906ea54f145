//! Central-difference gradient oracle.
//!
//! For every coordinate `x_j` of every checked tensor the numeric derivative
//! is `(f(x + eps·e_j) − f(x − eps·e_j)) / (2·eps)` and the reported error is
//! `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`, maximized over
//! all coordinates.

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::nn::{Ctx, Mode, ParamStore};
use crate::tensor::{Element, Tensor};

const REL_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Index of the checked tensor holding the worst coordinate.
    pub worst_tensor: usize,
    pub worst_coord: usize,
    pub coords_checked: usize,
}

fn check_eps(eps: f64) -> Result<()> {
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::contract(format!("grad_check eps {eps} outside [1e-7, 1e-3]")));
    }
    Ok(())
}

fn scalar<T: Element>(g: &Graph<T>, loss: Var) -> Result<T> {
    g.value(loss).item()
}

/// Compares `analytic[i]` with central differences of `eval` around `slots`,
/// skipping coordinates for which `probe(tensor, coord)` is false.
fn compare<T: Element>(
    slots: &[Tensor<T>],
    analytic: &[Tensor<T>],
    eps: f64,
    probe_coord: &dyn Fn(usize, usize) -> bool,
    eval: &mut dyn FnMut(&[Tensor<T>]) -> Result<T>,
) -> Result<GradCheckReport> {
    let base = eval(slots)?;
    let again = eval(slots)?;
    if base.f64().to_bits() != again.f64().to_bits() {
        return Err(Error::OracleInvalid(format!(
            "function is not deterministic: {} vs {}",
            base.f64(),
            again.f64()
        )));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: 0,
        worst_coord: 0,
        coords_checked: 0,
    };
    let mut probe: Vec<Tensor<T>> = slots.to_vec();
    for (t, slot) in slots.iter().enumerate() {
        for j in 0..slot.len() {
            if !probe_coord(t, j) {
                continue;
            }
            let orig = slot.data()[j];
            probe[t].data_mut()[j] = orig + T::of(eps);
            let plus = eval(&probe)?.f64();
            probe[t].data_mut()[j] = orig - T::of(eps);
            let minus = eval(&probe)?.f64();
            probe[t].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let a = analytic[t].data()[j].f64();
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            if err > report.max_rel_error || err.is_nan() {
                report.max_rel_error = err;
                report.worst_tensor = t;
                report.worst_coord = j;
            }
            report.coords_checked += 1;
        }
    }
    Ok(report)
}

/// Checks `f` w.r.t. every coordinate of `inputs`. `f` records a scalar loss
/// on the given graph from leaves bound to the inputs.
pub fn grad_check_report<T, F>(f: F, inputs: &[Tensor<T>], eps: f64) -> Result<GradCheckReport>
where
    T: Element,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    check_eps(eps)?;
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = f(&mut g, &vars)?;
    let grads = g.backward(loss)?;
    let analytic: Vec<Tensor<T>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    let mut eval = |slots: &[Tensor<T>]| -> Result<T> {
        let mut g = Graph::new();
        let vars: Vec<Var> = slots.iter().map(|t| g.constant(t.clone())).collect();
        let loss = f(&mut g, &vars)?;
        scalar(&g, loss)
    };
    compare(inputs, &analytic, eps, &|_, _| true, &mut eval)
}

/// Maximum relative error of analytic vs. central-difference gradients.
pub fn grad_check<T, F>(f: F, inputs: &[Tensor<T>], eps: f64) -> Result<f64>
where
    T: Element,
    F: Fn(&mut Graph<T>, &[Var]) -> Result<Var>,
{
    Ok(grad_check_report(f, inputs, eps)?.max_rel_error)
}

/// Checks a layer-level function w.r.t. its inputs *and* every parameter in
/// `store`. The store is cloned for each probe, so batch-norm running
/// statistics updated during the probes never leak back.
pub fn grad_check_with_params<T, F>(
    f: F,
    store: &ParamStore<T>,
    inputs: &[Tensor<T>],
    mode: Mode,
    eps: f64,
) -> Result<GradCheckReport>
where
    T: Element,
    F: Fn(&mut Ctx<'_, T>, &[Var]) -> Result<Var>,
{
    grad_check_with_params_where(f, store, inputs, mode, eps, |_, _| true)
}

/// [`grad_check_with_params`] restricted to the coordinates for which
/// `probe(name, coord)` holds. Inputs are named `input0`, `input1`, ...;
/// parameters by their store name. Used to leave out coordinates whose
/// gradient is identically zero by construction, where the relative error
/// only compares rounding noise.
pub fn grad_check_with_params_where<T, F, P>(
    f: F,
    store: &ParamStore<T>,
    inputs: &[Tensor<T>],
    mode: Mode,
    eps: f64,
    probe: P,
) -> Result<GradCheckReport>
where
    T: Element,
    F: Fn(&mut Ctx<'_, T>, &[Var]) -> Result<Var>,
    P: Fn(&str, usize) -> bool,
{
    check_eps(eps)?;
    let n_inputs = inputs.len();
    let mut working = store.clone();
    let (input_grads, param_grads) = {
        let mut ctx = Ctx::new(&mut working, mode);
        let vars: Vec<Var> = inputs.iter().map(|t| ctx.graph.input(t.clone())).collect();
        let loss = f(&mut ctx, &vars)?;
        let grads = ctx.graph.backward(loss)?;
        let input_grads: Vec<Tensor<T>> = vars
            .iter()
            .zip(inputs)
            .map(|(&v, t)| grads.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        (input_grads, grads.into_params())
    };
    let mut slots: Vec<Tensor<T>> = inputs.to_vec();
    let mut analytic = input_grads;
    for (i, p) in store.params().iter().enumerate() {
        slots.push(p.value.clone());
        let g = param_grads
            .iter()
            .find(|(id, _)| id.0 == i)
            .map(|(_, g)| g.clone())
            .unwrap_or_else(|| Tensor::zeros(p.value.shape()));
        analytic.push(g);
    }
    let mut eval = |slots: &[Tensor<T>]| -> Result<T> {
        let mut s = store.clone();
        for (p, v) in s.params_mut().iter_mut().zip(&slots[n_inputs..]) {
            p.value = v.clone();
        }
        let mut ctx = Ctx::new(&mut s, mode);
        let vars: Vec<Var> = slots[..n_inputs]
            .iter()
            .map(|t| ctx.graph.constant(t.clone()))
            .collect();
        let loss = f(&mut ctx, &vars)?;
        scalar(&ctx.graph, loss)
    };
    let names: Vec<String> = (0..n_inputs)
        .map(|i| format!("input{i}"))
        .chain(store.params().iter().map(|p| p.name.clone()))
        .collect();
    compare(&slots, &analytic, eps, &|t, j| probe(&names[t], j), &mut eval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::cell::Cell;

    #[test]
    fn rejects_eps_out_of_range() {
        let x = Tensor::<f64>::ones(&[2]);
        let r = grad_check(|g, v| g.sum(v[0]), &[x], 1e-2);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn flags_nondeterministic_function() {
        let calls = Cell::new(0u32);
        let x = Tensor::<f64>::ones(&[3]);
        let r = grad_check(
            |g, v| {
                calls.set(calls.get() + 1);
                let s = g.sum(v[0])?;
                g.scale(s, 1.0 + calls.get() as f64 * 1e-3)
            },
            &[x],
            1e-5,
        );
        assert!(matches!(r, Err(Error::OracleInvalid(_))));
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // relu evaluated exactly at its kink: the one-sided analytic
        // derivative (0) disagrees with the central difference (1/2).
        let x = Tensor::<f64>::zeros(&[1]);
        let err = grad_check(
            |g, v| {
                let r = g.relu(v[0])?;
                g.sum(r)
            },
            &[x],
            1e-5,
        )
        .unwrap();
        assert!(err > 0.5);
    }
}
