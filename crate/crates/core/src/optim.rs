//! Adam with per-depth learning rates and the slanted triangular schedule.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{Element, ParamId, ParamStore};

/// Depth of a parameter: 0 for embeddings, `l` for block `l`, `layers + 1` for
/// everything above the encoder (pre-training heads, classifiers, combiners).
pub fn depth_of(name: &str, layers: usize) -> usize {
    if name.starts_with("embeddings.") {
        return 0;
    }
    if let Some(rest) = name.strip_prefix("layer.") {
        if let Some(l) = rest.split('.').next().and_then(|s| s.parse::<usize>().ok()) {
            if (1..=layers).contains(&l) {
                return l;
            }
        }
    }
    layers + 1
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterGroup {
    pub depth: usize,
    pub members: Vec<ParamId>,
    pub multiplier: f64,
}

/// Partitions the store into `layers + 2` groups ordered by depth.
pub fn group_parameters<T: Element>(params: &ParamStore<T>, layers: usize, decay: f64) -> Vec<ParameterGroup> {
    let sched = LayerwiseLrSchedule {
        base_lr: 1.0,
        decay,
        layers,
    };
    let mut groups: Vec<ParameterGroup> = (0..=layers + 1)
        .map(|depth| ParameterGroup {
            depth,
            members: Vec::new(),
            multiplier: sched.multiplier(depth),
        })
        .collect();
    for (id, p) in params.iter() {
        groups[depth_of(&p.name, layers)].members.push(id);
    }
    groups
}

/// `η^l = base · ξ^(L+1−l)`: the top group gets the base rate, each group
/// below gets `ξ` times the one above.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerwiseLrSchedule {
    pub base_lr: f64,
    pub decay: f64,
    pub layers: usize,
}

impl LayerwiseLrSchedule {
    pub fn new(base_lr: f64, decay: f64, layers: usize) -> Result<Self> {
        if !(decay > 0.0 && decay <= 1.0) {
            return Err(Error::InvalidConfig(format!("decay factor {decay} outside (0, 1]")));
        }
        if !(base_lr.is_finite() && base_lr >= 0.0) {
            return Err(Error::InvalidConfig(format!("learning rate {base_lr} must be non-negative")));
        }
        Ok(Self { base_lr, decay, layers })
    }

    pub fn multiplier(&self, depth: usize) -> f64 {
        let top = self.layers + 1;
        self.decay.powi(top.saturating_sub(depth) as i32)
    }

    pub fn rate(&self, depth: usize) -> f64 {
        self.base_lr * self.multiplier(depth)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StlrSchedule {
    pub total_steps: usize,
    pub warmup: f64,
    pub peak: f64,
}

impl StlrSchedule {
    pub fn new(total_steps: usize, warmup: f64, peak: f64) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::InvalidConfig("schedule needs at least one step".into()));
        }
        if !(warmup > 0.0 && warmup < 1.0) {
            return Err(Error::InvalidConfig(format!("warm-up proportion {warmup} outside (0, 1)")));
        }
        Ok(Self {
            total_steps,
            warmup,
            peak,
        })
    }

    pub fn rate(&self, step: usize) -> f64 {
        stlr(step, self.total_steps, self.warmup, self.peak)
    }
}

/// Linear ramp `0 → peak` over the first `w·T` steps, then linear decay to 0 at `T`.
pub fn stlr(step: usize, total: usize, warmup: f64, peak: f64) -> f64 {
    if step > total {
        log::warn!("step {step} beyond schedule length {total}; rate clamped to 0");
        return 0.0;
    }
    let t = total as f64;
    let s = step as f64;
    let apex = warmup * t;
    if s <= apex {
        if apex == 0.0 {
            return peak;
        }
        peak * (s / apex)
    } else {
        peak * ((t - s) / ((1.0 - warmup) * t))
    }
}

/// Rate for a group at `depth`: `stlr(step) · ξ^(L+1−depth)`.
pub fn effective_rate(depth: usize, layerwise: &LayerwiseLrSchedule, schedule: &StlrSchedule, step: usize) -> f64 {
    schedule.rate(step) * layerwise.multiplier(depth)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip over the updated tensors; off when `None`.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: None,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

/// Adam moments, keyed by parameter. Parameters only get a step counter once
/// they are first updated.
#[derive(Clone, Debug, Default)]
pub struct AdamState {
    pub config: AdamConfig,
    moments: HashMap<ParamId, Moments>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            moments: HashMap::new(),
        }
    }

    /// Number of updates applied to `id`.
    pub fn steps(&self, id: ParamId) -> u64 {
        self.moments.get(&id).map_or(0, |m| m.t)
    }

    /// Applies one update to every parameter in `active` (all when `None`),
    /// using `rate(id)` as its learning rate. Nothing changes if any updated
    /// gradient is non-finite.
    pub fn step<T: Element>(
        &mut self,
        params: &mut ParamStore<T>,
        active: Option<&HashSet<ParamId>>,
        rate: impl Fn(ParamId) -> f64,
    ) -> Result<()> {
        let ids: Vec<ParamId> = params.ids().filter(|id| active.is_none_or(|a| a.contains(id))).collect();
        let mut sq = 0.0;
        for &id in &ids {
            let p = params.get(id);
            for g in p.grad.data() {
                let g = g.as_f64();
                if !g.is_finite() {
                    return Err(Error::NanGradient(p.name.clone()));
                }
                sq += g * g;
            }
        }
        let clip = match self.config.clip_norm {
            Some(c) if sq.sqrt() > c => c / sq.sqrt(),
            _ => 1.0,
        };
        let AdamConfig { beta1, beta2, eps, .. } = self.config;
        for id in ids {
            let lr = rate(id);
            let p = params.get_mut(id);
            let n = p.value.len();
            let st = self.moments.entry(id).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
            });
            st.t += 1;
            let c1 = 1.0 - beta1.powi(st.t as i32);
            let c2 = 1.0 - beta2.powi(st.t as i32);
            let grad = p.grad.data();
            let value = p.value.data_mut();
            for i in 0..n {
                let g = grad[i].as_f64() * clip;
                st.m[i] = beta1 * st.m[i] + (1.0 - beta1) * g;
                st.v[i] = beta2 * st.v[i] + (1.0 - beta2) * g * g;
                let mhat = st.m[i] / c1;
                let vhat = st.v[i] / c2;
                let x = value[i].as_f64() - lr * mhat / (vhat.sqrt() + eps);
                value[i] = T::of(x);
            }
        }
        Ok(())
    }
}

/// Layer-wise Adam under a slanted triangular schedule.
#[derive(Clone, Debug)]
pub struct LayerwiseOptimizer {
    pub layerwise: LayerwiseLrSchedule,
    pub schedule: StlrSchedule,
    pub adam: AdamState,
    depths: HashMap<ParamId, usize>,
    step: usize,
}

impl LayerwiseOptimizer {
    pub fn new<T: Element>(
        params: &ParamStore<T>,
        layerwise: LayerwiseLrSchedule,
        schedule: StlrSchedule,
        adam: AdamConfig,
    ) -> Self {
        let depths = params
            .iter()
            .map(|(id, p)| (id, depth_of(&p.name, layerwise.layers)))
            .collect();
        Self {
            layerwise,
            schedule,
            adam: AdamState::new(adam),
            depths,
            step: 0,
        }
    }

    /// Optimizer steps taken so far.
    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Rate of the top group at the next step.
    pub fn current_rate(&self) -> f64 {
        self.schedule.rate(self.step + 1)
    }

    pub fn rate_for(&self, id: ParamId, step: usize) -> f64 {
        let depth = self.depths.get(&id).copied().unwrap_or(self.layerwise.layers + 1);
        effective_rate(depth, &self.layerwise, &self.schedule, step)
    }

    /// One update at schedule position `steps_taken() + 1`. Returns the top-group rate used.
    pub fn step<T: Element>(&mut self, params: &mut ParamStore<T>, active: Option<&HashSet<ParamId>>) -> Result<f64> {
        let s = self.step + 1;
        let rates: HashMap<ParamId, f64> = params.ids().map(|id| (id, self.rate_for(id, s))).collect();
        self.adam.step(params, active, |id| rates[&id])?;
        self.step = s;
        Ok(self.schedule.rate(s))
    }
}
