use super::TrainError;
use crate::model::checkpoint::{Moments, OptimizerState};
use crate::model::{ParamKind, ParamStore};
use crate::tensor::{Float, ParamId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled decay, applied to dense tensors only.
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 4e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamState<T: Float> {
    /// Updates applied so far; drives bias correction.
    pub t: u64,
    pub m: Vec<T>,
    pub v: Vec<T>,
}

/// AdamW with one state (and step counter) per tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW<T: Float> {
    pub cfg: AdamWConfig,
    pub states: Vec<ParamState<T>>,
}

impl<T: Float> AdamW<T> {
    pub fn new(cfg: AdamWConfig, params: &ParamStore<T>) -> Self {
        let states = params
            .iter()
            .map(|(_, p)| ParamState {
                t: 0,
                m: vec![T::zero(); p.tensor.numel()],
                v: vec![T::zero(); p.tensor.numel()],
            })
            .collect();
        AdamW { cfg, states }
    }

    /// Applies one update. `grads[i]` is the full-size gradient of tensor `i`.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Vec<T>]) -> Result<(), TrainError> {
        for (id, p) in params.iter() {
            if grads[id.0].iter().any(|g| !g.is_finite()) {
                return Err(TrainError::NonFinite(p.name.clone()));
            }
        }
        let c = self.cfg;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (one, lr, eps) = (T::one(), T::of(c.lr), T::of(c.eps));
        for (id, p) in params.iter_mut() {
            let st = &mut self.states[id.0];
            st.t += 1;
            let bc1 = T::of(1.0 - c.beta1.powi(st.t as i32));
            let bc2 = T::of(1.0 - c.beta2.powi(st.t as i32));
            let decay = if p.kind == ParamKind::Dense {
                T::of(c.lr * c.weight_decay)
            } else {
                T::zero()
            };
            let g = &grads[id.0];
            let data = p.tensor.data_mut();
            for i in 0..data.len() {
                st.m[i] = b1 * st.m[i] + (one - b1) * g[i];
                st.v[i] = b2 * st.v[i] + (one - b2) * g[i] * g[i];
                let mh = st.m[i] / bc1;
                let vh = st.v[i] / bc2;
                data[i] = data[i] - decay * data[i] - lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }

    /// Zeroes the moments and step counter of one tensor.
    pub fn reset(&mut self, id: ParamId) {
        let st = &mut self.states[id.0];
        st.t = 0;
        st.m.iter_mut().for_each(|x| *x = T::zero());
        st.v.iter_mut().for_each(|x| *x = T::zero());
    }

    pub fn export(&self, params: &ParamStore<T>, epoch: u32, step: u64) -> OptimizerState<T> {
        OptimizerState {
            epoch,
            step,
            moments: params
                .iter()
                .map(|(id, p)| {
                    let st = &self.states[id.0];
                    Moments {
                        name: p.name.clone(),
                        t: st.t,
                        m: st.m.clone(),
                        v: st.v.clone(),
                    }
                })
                .collect(),
        }
    }

    pub fn import(&mut self, params: &ParamStore<T>, state: &OptimizerState<T>) -> Result<(), TrainError> {
        if state.moments.len() != params.len() {
            return Err(TrainError::Checkpoint(format!(
                "optimizer state covers {} tensors, model has {}",
                state.moments.len(),
                params.len()
            )));
        }
        for m in &state.moments {
            let id = params
                .id(&m.name)
                .ok_or_else(|| TrainError::Checkpoint(format!("optimizer state for unknown tensor `{}`", m.name)))?;
            if m.m.len() != params.get(id).numel() || m.v.len() != m.m.len() {
                return Err(TrainError::Checkpoint(format!("moment size mismatch for `{}`", m.name)));
            }
            self.states[id.0] = ParamState {
                t: m.t,
                m: m.m.clone(),
                v: m.v.clone(),
            };
        }
        Ok(())
    }
}

/// Scales `grads` so their global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm<T: Float>(grads: &mut [Vec<T>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .map(|g| g.as_f64() * g.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = T::of(max_norm / norm);
        grads.iter_mut().flatten().for_each(|g| *g *= s);
    }
    norm
}
