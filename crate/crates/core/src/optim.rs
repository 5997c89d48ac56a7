//! Parameter storage and the LAMB update.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamId;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One named trainable tensor plus its optimizer moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub first_moment: Tensor,
    pub second_moment: Tensor,
}

/// Named parameters in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Register a new parameter. Names must be unique.
    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter name {name:?}")));
        }
        let id = ParamId(self.params.len());
        self.index.insert(name.clone(), id);
        let zeros = Tensor::zeros(value.shape());
        self.params.push(Param {
            name,
            first_moment: zeros.clone(),
            second_moment: zeros,
            value,
        });
        Ok(id)
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.params[id.0].value
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub(crate) fn param_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }
}

/// LAMB hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LambConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for LambConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 0.0,
        }
    }
}

/// Parameters whose update was skipped because of a non-finite gradient.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LambReport {
    pub skipped: Vec<String>,
}

/// Apply one LAMB step (`step` counts from 1) to every parameter that has a
/// gradient. Parameters missing from `grads` are treated as having a zero
/// gradient, which still advances their moments.
pub fn lamb_update(
    store: &mut ParamStore,
    grads: &HashMap<ParamId, Tensor>,
    step: u64,
    lr: f64,
    cfg: &LambConfig,
) -> Result<LambReport> {
    if step == 0 {
        return Err(Error::invalid("LAMB step counter starts at 1"));
    }
    let mut report = LambReport::default();
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for id in store.ids().collect::<Vec<_>>() {
        let p = store.param_mut(id);
        let zero;
        let g = match grads.get(&id) {
            Some(g) => {
                if g.shape() != p.value.shape() {
                    return Err(Error::Shape {
                        op: "lamb_update",
                        lhs: p.value.shape().to_vec(),
                        rhs: g.shape().to_vec(),
                    });
                }
                g
            }
            None => {
                zero = Tensor::zeros(p.value.shape());
                &zero
            }
        };
        if !g.all_finite() {
            log::warn!("skipping LAMB update for {}: non-finite gradient", p.name);
            report.skipped.push(p.name.clone());
            continue;
        }
        let n = p.value.len();
        let mut update = vec![0.0; n];
        {
            let m = p.first_moment.data_mut();
            for i in 0..n {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g.data()[i];
            }
        }
        {
            let v = p.second_moment.data_mut();
            for i in 0..n {
                let gi = g.data()[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * gi * gi;
            }
        }
        let m = p.first_moment.data();
        let v = p.second_moment.data();
        let w = p.value.data();
        for i in 0..n {
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            update[i] = m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * w[i];
        }
        let w_norm = p.value.norm();
        let u_norm = update.iter().map(|u| u * u).sum::<f64>().sqrt();
        let ratio = if w_norm > 0.0 && u_norm > 0.0 { w_norm / u_norm } else { 1.0 };
        for (wi, ui) in p.value.data_mut().iter_mut().zip(&update) {
            *wi -= lr * ratio * ui;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::new();
        s.insert("a", Tensor::zeros(&[2])).unwrap();
        assert!(s.insert("a", Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut s = ParamStore::new();
        let id = s.insert("w", Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()).unwrap();
        let before = s.value(id).clone();
        let mut grads = HashMap::new();
        grads.insert(id, Tensor::zeros(&[3]));
        for step in 1..=5 {
            lamb_update(&mut s, &grads, step, 0.1, &LambConfig::default()).unwrap();
        }
        assert_eq!(s.value(id), &before);
    }

    /// Scalar hand simulation of the LAMB recurrence for three steps.
    #[test]
    fn scalar_matches_hand_recurrence() {
        let cfg = LambConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-6,
            weight_decay: 0.01,
        };
        let lr = 0.05;
        let gs = [0.3, -1.2, 0.7];
        let mut s = ParamStore::new();
        let id = s.insert("w", Tensor::scalar(2.0)).unwrap();

        let (mut w, mut m, mut v) = (2.0f64, 0.0f64, 0.0f64);
        for (t, g) in gs.iter().enumerate() {
            let step = t as i32 + 1;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(step));
            let vh = v / (1.0 - 0.999f64.powi(step));
            let u = mh / (vh.sqrt() + 1e-6) + 0.01 * w;
            let ratio = w.abs() / u.abs();
            w -= lr * ratio * u;

            let mut grads = HashMap::new();
            grads.insert(id, Tensor::scalar(*g));
            lamb_update(&mut s, &grads, step as u64, lr, &cfg).unwrap();
            assert!((s.value(id).item() - w).abs() < 1e-14, "step {step}");
        }
    }

    #[test]
    fn zero_norm_parameter_uses_unit_trust_ratio() {
        let mut s = ParamStore::new();
        let id = s.insert("b", Tensor::scalar(0.0)).unwrap();
        let mut grads = HashMap::new();
        grads.insert(id, Tensor::scalar(4.0));
        lamb_update(&mut s, &grads, 1, 0.1, &LambConfig::default()).unwrap();
        // first Adam step has |m_hat / sqrt(v_hat)| ~ 1, so the move is ~lr
        let w = s.value(id).item();
        assert!(w.is_finite());
        assert!((w + 0.1).abs() < 1e-6, "{w}");
    }

    #[test]
    fn non_finite_gradient_is_skipped_and_reported() {
        let mut s = ParamStore::new();
        let a = s.insert("a", Tensor::scalar(1.0)).unwrap();
        let b = s.insert("b", Tensor::scalar(1.0)).unwrap();
        let mut grads = HashMap::new();
        grads.insert(a, Tensor::scalar(f64::NAN));
        grads.insert(b, Tensor::scalar(1.0));
        let rep = lamb_update(&mut s, &grads, 1, 0.1, &LambConfig::default()).unwrap();
        assert_eq!(rep.skipped, vec!["a".to_string()]);
        assert_eq!(s.value(a).item(), 1.0);
        assert!(s.value(b).item() < 1.0);
    }
}
