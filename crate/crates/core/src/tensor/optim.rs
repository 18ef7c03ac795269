use std::collections::{BTreeMap, HashMap};

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Adam with bias correction. Moment buffers are created lazily, shaped
/// like the parameter they track.
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    moments: HashMap<String, Moments>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters without a gradient entry are treated
    /// as having a zero gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, g) in grads {
            if g.data().iter().any(|v| v.is_nan()) {
                return Err(Error::NanGradient(name.clone()));
            }
            let p = params
                .get(name)
                .ok_or_else(|| Error::UnknownParam(name.clone()))?;
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adam-step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as f64;
        let bc1 = 1.0 - beta1.powf(t);
        let bc2 = 1.0 - beta2.powf(t);
        for (name, p) in params.iter_mut() {
            let n = p.numel();
            let mom = self.moments.entry(name.clone()).or_insert_with(|| Moments {
                m: vec![0.0; n],
                v: vec![0.0; n],
            });
            let g = grads.get(name).map(Tensor::data);
            for i in 0..n {
                let gi = g.map_or(0.0, |g| g[i]);
                mom.m[i] = beta1 * mom.m[i] + (1.0 - beta1) * gi;
                mom.v[i] = beta2 * mom.v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = mom.m[i] / bc1;
                let v_hat = mom.v[i] / bc2;
                p.data_mut()[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

pub fn global_norm(grads: &BTreeMap<String, Tensor>) -> f64 {
    grads.values().map(Tensor::norm_sq).sum::<f64>().sqrt()
}

/// Rescales all gradients together when their joint L2 norm exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(name: &str, v: Vec<f64>) -> BTreeMap<String, Tensor> {
        BTreeMap::from([(name.to_string(), Tensor::from_vec(v))])
    }

    #[test]
    fn zero_gradients_leave_params_unchanged() {
        let mut params = ParamStore::new();
        params.insert("w", Tensor::from_vec(vec![0.3, -1.2]));
        let before = params.clone();
        let mut adam = AdamState::new(AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut params, &single("w", vec![0.0, 0.0])).unwrap();
        }
        assert_eq!(params, before);
        assert_eq!(adam.step_count(), 5);
    }

    /// Hand-rolled recurrence for a scalar with constant gradient 1.
    fn reference_adam(steps: usize, cfg: AdamConfig) -> f64 {
        let (mut x, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
        for t in 1..=steps {
            m = cfg.beta1 * m + (1.0 - cfg.beta1);
            v = cfg.beta2 * v + (1.0 - cfg.beta2);
            let mh = m / (1.0 - cfg.beta1.powi(t as i32));
            let vh = v / (1.0 - cfg.beta2.powi(t as i32));
            x -= cfg.lr * mh / (vh.sqrt() + cfg.epsilon);
        }
        x
    }

    #[test]
    fn first_step_moves_by_about_lr() {
        let cfg = AdamConfig::default();
        let mut params = ParamStore::new();
        params.insert("w", Tensor::scalar(0.0));
        let mut adam = AdamState::new(cfg);
        let g = BTreeMap::from([("w".to_string(), Tensor::scalar(1.0))]);
        adam.step(&mut params, &g).unwrap();
        let x = params.get("w").unwrap().item();
        assert!((x + cfg.lr).abs() < 1e-10, "{x}");
        for _ in 0..9 {
            adam.step(&mut params, &g).unwrap();
        }
        let got = params.get("w").unwrap().item();
        assert!((got - reference_adam(10, cfg)).abs() < 1e-15);
    }

    #[test]
    fn bias_correction_makes_first_step_beta_independent() {
        for (b1, b2) in [(0.5, 0.9), (0.9, 0.999), (0.99, 0.9999)] {
            let cfg = AdamConfig {
                beta1: b1,
                beta2: b2,
                ..AdamConfig::default()
            };
            let mut params = ParamStore::new();
            params.insert("w", Tensor::scalar(1.0));
            let mut adam = AdamState::new(cfg);
            let g = BTreeMap::from([("w".to_string(), Tensor::scalar(-3.7))]);
            adam.step(&mut params, &g).unwrap();
            let moved = params.get("w").unwrap().item() - 1.0;
            assert!((moved - cfg.lr).abs() < 1e-9, "betas {b1},{b2}: {moved}");
        }
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut params = ParamStore::new();
        params.insert("enc.w", Tensor::from_vec(vec![0.0]));
        let mut adam = AdamState::new(AdamConfig::default());
        let err = adam
            .step(&mut params, &single("enc.w", vec![f64::NAN]))
            .unwrap_err();
        assert!(err.to_string().contains("enc.w"));
    }

    #[test]
    fn clip_examples() {
        let mut g = single("a", vec![0.6, 0.8]);
        clip_global_norm(&mut g, 2.0);
        assert_eq!(g["a"].data(), &[0.6, 0.8]);

        let mut g = single("a", vec![3.0, 4.0]);
        let norm = clip_global_norm(&mut g, 2.0);
        assert_eq!(norm, 5.0);
        assert!((g["a"].data()[0] - 1.2).abs() < 1e-15);
        assert!((g["a"].data()[1] - 1.6).abs() < 1e-15);

        let mut g = single("a", vec![0.0, 0.0]);
        clip_global_norm(&mut g, 2.0);
        assert_eq!(g["a"].data(), &[0.0, 0.0]);
    }
}
