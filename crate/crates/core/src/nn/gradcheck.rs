//! Central finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::Rng;

use super::{Binder, Graph, ParamStore, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub step: f64,
    /// Denominator floor of the relative error, so entries whose true
    /// gradient is ~0 are judged on absolute error instead.
    pub floor: f64,
    /// At most this many coordinates are probed per tensor.
    pub max_coords: usize,
    /// A coordinate is skipped when the quotients at `step` and `step / 2`
    /// differ by more than this (relative), i.e. when the function is not
    /// smooth enough at that scale for a difference quotient to mean anything.
    pub consistency: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-4,
            floor: 1e-3,
            max_coords: 48,
            consistency: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub coords_checked: usize,
    /// Coordinates whose difference quotient crossed a leaky ReLU or abs kink,
    /// or came too close to a singular point to be consistent across steps.
    pub coords_skipped: usize,
    /// Every probed coordinate was skipped; nothing was checked.
    pub near_kink: bool,
}

enum Slot {
    Input(usize),
    Param(usize),
}

/// Compares the analytic gradient of the scalar `f` with respect to every
/// input tensor and every parameter of `store` against central differences.
pub fn check_gradients<F>(
    store: &mut ParamStore,
    inputs: &[Tensor],
    f: F,
    opts: &GradCheck,
    rng: &mut impl Rng,
) -> Result<GradCheckReport>
where
    F: for<'g> Fn(&'g Graph, &Binder, &[Var<'g>]) -> Result<Var<'g>>,
{
    let (analytic_inputs, analytic_params, base_signature) = {
        let g = Graph::new();
        let vars = inputs
            .iter()
            .map(|t| g.input(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let loss = f(&g, &Binder::train(store), &vars)?;
        let signature = g.kink_signature();
        let grads = g.backward(loss)?;
        let per_input: Vec<Vec<f64>> = vars
            .iter()
            .zip(inputs)
            .map(|(v, t)| {
                grads
                    .wrt(*v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; t.numel()])
            })
            .collect();
        let saved: Vec<Option<Vec<f64>>> = store.iter().map(|(_, p)| p.grad.clone()).collect();
        store.zero_grad();
        grads.accumulate(store);
        let per_param: Vec<Vec<f64>> = store
            .iter()
            .map(|(_, p)| {
                p.grad()
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; p.value.numel()])
            })
            .collect();
        for (p, g) in store.params_mut().iter_mut().zip(saved) {
            p.grad = g;
        }
        (per_input, per_param, signature)
    };

    let eval = |store: &ParamStore, inputs: &[Tensor]| -> Result<(f64, u64)> {
        let g = Graph::new();
        let vars = inputs
            .iter()
            .map(|t| g.constant(t.clone()))
            .collect::<Result<Vec<_>>>()?;
        let y = f(&g, &Binder::frozen(store), &vars)?.item();
        Ok((y, g.kink_signature()))
    };

    let mut inputs = inputs.to_vec();
    let slots: Vec<(Slot, usize)> = (0..inputs.len())
        .map(|i| (Slot::Input(i), inputs[i].numel()))
        .chain(
            store
                .iter()
                .map(|(id, p)| (Slot::Param(id.index()), p.value.numel())),
        )
        .collect();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    let mut skipped = 0;
    for (slot, n) in slots {
        let coords: Vec<usize> = if n <= opts.max_coords {
            (0..n).collect()
        } else {
            sample(rng, n, opts.max_coords).into_vec()
        };
        for c in coords {
            let analytic = match slot {
                Slot::Input(i) => analytic_inputs[i][c],
                Slot::Param(i) => analytic_params[i][c],
            };
            let mut probe = |delta: f64| -> Result<(f64, u64)> {
                match slot {
                    Slot::Input(i) => {
                        let orig = inputs[i].data()[c];
                        inputs[i].data_mut()[c] = orig + delta;
                        let v = eval(store, &inputs);
                        inputs[i].data_mut()[c] = orig;
                        v
                    }
                    Slot::Param(i) => {
                        let id = store
                            .iter()
                            .nth(i)
                            .map(|(id, _)| id)
                            .expect("slot in range");
                        let orig = store.value(id).data()[c];
                        store.value_mut(id).data_mut()[c] = orig + delta;
                        let v = eval(store, &inputs);
                        store.value_mut(id).data_mut()[c] = orig;
                        v
                    }
                }
            };
            let mut quotient = |h: f64| -> Result<Option<f64>> {
                let (plus, sig_plus) = probe(h)?;
                let (minus, sig_minus) = probe(-h)?;
                Ok((sig_plus == base_signature && sig_minus == base_signature)
                    .then(|| (plus - minus) / (2.0 * h)))
            };
            let (Some(numeric), Some(half)) = (quotient(opts.step)?, quotient(opts.step / 2.0)?)
            else {
                skipped += 1;
                continue;
            };
            let denom = analytic.abs().max(numeric.abs()).max(opts.floor);
            if (numeric - half).abs() / denom > opts.consistency {
                skipped += 1;
                continue;
            }
            worst = worst.max((analytic - numeric).abs() / denom);
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: worst,
        coords_checked: checked,
        coords_skipped: skipped,
        near_kink: checked == 0 && skipped > 0,
    })
}
