//! Named parameter traversal shared by both stage models.
//!
//! A model's gradient is another instance of the same model type with the
//! gradient values stored in place of the weights, so summing, clipping and
//! applying gradients are all generic over [`ParamSet`].

use crate::error::{Error, Result};
use crate::tensor::{sgd_step, ConvKernel, Linear, Tensor};

pub trait ParamSet {
    fn visit(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));
}

pub(crate) fn visit_conv(prefix: &str, k: &ConvKernel, f: &mut dyn FnMut(&str, &Tensor)) {
    f(&format!("{prefix}.weight"), &k.weight);
    f(&format!("{prefix}.bias"), &k.bias);
}

pub(crate) fn visit_conv_mut(prefix: &str, k: &mut ConvKernel, f: &mut dyn FnMut(&str, &mut Tensor)) {
    f(&format!("{prefix}.weight"), &mut k.weight);
    f(&format!("{prefix}.bias"), &mut k.bias);
}

pub(crate) fn visit_linear(prefix: &str, l: &Linear, f: &mut dyn FnMut(&str, &Tensor)) {
    f(&format!("{prefix}.weight"), &l.weight);
    f(&format!("{prefix}.bias"), &l.bias);
}

pub(crate) fn visit_linear_mut(prefix: &str, l: &mut Linear, f: &mut dyn FnMut(&str, &mut Tensor)) {
    f(&format!("{prefix}.weight"), &mut l.weight);
    f(&format!("{prefix}.bias"), &mut l.bias);
}

pub fn param_count<P: ParamSet>(model: &P) -> usize {
    let mut n = 0;
    model.visit(&mut |_, t| n += t.len());
    n
}

/// A copy of `model` with every parameter set to zero.
pub fn zeros_like<P: ParamSet + Clone>(model: &P) -> P {
    let mut z = model.clone();
    z.visit_mut(&mut |_, t| t.fill(0.0));
    z
}

/// `acc += other`, parameter by parameter.
pub fn add_into<P: ParamSet>(acc: &mut P, other: &P) {
    let mut flat = Vec::new();
    other.visit(&mut |_, t| flat.push(t.clone()));
    let mut it = flat.iter();
    acc.visit_mut(&mut |_, t| {
        t.add_assign(it.next().expect("same model layout"))
            .expect("same parameter shapes")
    });
}

pub fn scale<P: ParamSet>(model: &mut P, factor: f64) {
    model.visit_mut(&mut |_, t| t.scale(factor));
}

pub fn global_norm<P: ParamSet>(model: &P) -> f64 {
    let mut s = 0.0;
    model.visit(&mut |_, t| s += t.sq_norm());
    s.sqrt()
}

/// Rescale `grads` so its global L2 norm is at most `max_norm`.
pub fn clip_global_norm<P: ParamSet>(grads: &mut P, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        scale(grads, max_norm / norm);
    }
    norm
}

/// One SGD update of `model` using a gradient model of the same layout.
pub fn apply_sgd<P: ParamSet>(model: &mut P, grads: &P, lr: f64) -> Result<()> {
    let mut gs = Vec::new();
    grads.visit(&mut |_, t| gs.push(t.clone()));
    let mut it = gs.iter();
    let mut result = Ok(());
    model.visit_mut(&mut |_, p| {
        if result.is_err() {
            return;
        }
        result = match it.next() {
            Some(g) => sgd_step(&mut [p], &[g], lr),
            None => Err(Error::invalid("gradient layout differs from model")),
        };
    });
    result
}

/// Named copies of every parameter, in visit order.
pub fn named_tensors<P: ParamSet>(model: &P, prefix: &str) -> Vec<(String, Tensor)> {
    let mut out = Vec::new();
    model.visit(&mut |name, t| out.push((format!("{prefix}{name}"), t.clone())));
    out
}

/// Overwrite parameters from named entries. Every parameter must be present
/// with a matching shape.
pub fn load_named<P: ParamSet>(
    model: &mut P,
    prefix: &str,
    lookup: &dyn Fn(&str) -> Option<Tensor>,
) -> Result<()> {
    let mut err = None;
    model.visit_mut(&mut |name, t| {
        if err.is_some() {
            return;
        }
        let key = format!("{prefix}{name}");
        match lookup(&key) {
            Some(src) if src.shape() == t.shape() => *t = src,
            Some(src) => {
                err = Some(Error::Checkpoint(format!(
                    "entry {key} has shape {:?}, model expects {:?}",
                    src.shape(),
                    t.shape()
                )))
            }
            None => err = Some(Error::Checkpoint(format!("missing entry {key}"))),
        }
    });
    err.map_or(Ok(()), Err)
}
