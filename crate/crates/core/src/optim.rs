//! First-order optimizers over network weights and delays.

use std::fmt;
use std::str::FromStr;

use crate::backprop::Gradients;
use crate::error::{Error, Result};
use crate::topology::Network;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Sgd,
    RmsProp,
    Adam,
    Nadam,
}

impl Method {
    pub fn tag(self) -> u8 {
        match self {
            Method::Sgd => 0,
            Method::RmsProp => 1,
            Method::Adam => 2,
            Method::Nadam => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => Method::Sgd,
            1 => Method::RmsProp,
            2 => Method::Adam,
            3 => Method::Nadam,
            _ => return None,
        })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Sgd => "sgd",
            Method::RmsProp => "rmsprop",
            Method::Adam => "adam",
            Method::Nadam => "nadam",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(Method::Sgd),
            "rmsprop" => Ok(Method::RmsProp),
            "adam" => Ok(Method::Adam),
            "nadam" => Ok(Method::Nadam),
            other => Err(Error::Config(format!("unknown optimizer {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    pub method: Method,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// RMSProp decay.
    pub gamma: f64,
    pub epsilon: f64,
    /// Delay learning rate as a fraction of the weight learning rate.
    pub delay_lr_scale: f64,
}

impl OptimizerConfig {
    pub fn new(method: Method) -> Self {
        let learning_rate = match method {
            Method::Sgd => 0.01,
            Method::RmsProp | Method::Adam | Method::Nadam => 0.001,
        };
        Self {
            method,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            gamma: 0.9,
            epsilon: 1e-8,
            delay_lr_scale: 0.1,
        }
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate.is_finite()
            && self.learning_rate >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && (0.0..1.0).contains(&self.gamma)
            && self.epsilon > 0.0
            && self.delay_lr_scale.is_finite()
            && self.delay_lr_scale >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: OptimizerConfig,
    pub step: u64,
    /// First moments (ADAM/NADAM).
    pub m: Gradients,
    /// Second moments (RMSProp/ADAM/NADAM).
    pub v: Gradients,
}

impl OptimizerState {
    pub fn new(config: OptimizerConfig, net: &Network) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        })
    }

    /// Applies one update to every learnable weight and delay, then clamps delays to `>= 0`.
    /// Parameters are left untouched if the update would be non-finite.
    pub fn step(&mut self, net: &mut Network, grads: &Gradients) -> Result<()> {
        if grads.layers.len() != net.params.len()
            || grads
                .layers
                .iter()
                .zip(&net.params)
                .any(|(g, p)| g.weights.len() != p.weights.len() || g.delays.len() != p.delays.len())
            || self.m.layers.len() != net.params.len()
        {
            return Err(Error::Shape("gradients do not match network parameters".into()));
        }
        let cfg = self.config;
        let t = self.step + 1;
        let mut m = self.m.clone();
        let mut v = self.v.clone();
        let mut params = net.params.clone();

        for l in 0..params.len() {
            if !net.learnable(l) {
                continue;
            }
            let lr_w = cfg.learning_rate;
            let lr_d = cfg.learning_rate * cfg.delay_lr_scale;
            update(
                &cfg,
                t,
                lr_w,
                &mut params[l].weights,
                &grads.layers[l].weights,
                &mut m.layers[l].weights,
                &mut v.layers[l].weights,
            );
            update(
                &cfg,
                t,
                lr_d,
                &mut params[l].delays,
                &grads.layers[l].delays,
                &mut m.layers[l].delays,
                &mut v.layers[l].delays,
            );
        }
        if let Some((l, _)) = params
            .iter()
            .enumerate()
            .find(|(_, p)| p.weights.iter().chain(&p.delays).any(|x| !x.is_finite()))
        {
            return Err(Error::NonFinite(format!("optimizer step {t} produced a non-finite parameter in layer {l}")));
        }
        net.params = params;
        net.clamp_delays();
        self.m = m;
        self.v = v;
        self.step = t;
        Ok(())
    }
}

fn update(cfg: &OptimizerConfig, t: u64, lr: f64, p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]) {
    let t = t as f64;
    match cfg.method {
        Method::Sgd => {
            for (pi, gi) in p.iter_mut().zip(g) {
                *pi -= lr * gi;
            }
        }
        Method::RmsProp => {
            for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *vi = cfg.gamma * *vi + (1.0 - cfg.gamma) * gi * gi;
                *pi -= lr * gi / (vi.sqrt() + cfg.epsilon);
            }
        }
        Method::Adam | Method::Nadam => {
            let c1 = 1.0 - cfg.beta1.powf(t);
            let c2 = 1.0 - cfg.beta2.powf(t);
            for (((pi, gi), mi), vi) in p.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
                *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                let direction = if cfg.method == Method::Nadam {
                    cfg.beta1 * m_hat + (1.0 - cfg.beta1) * gi / c1
                } else {
                    m_hat
                };
                *pi -= lr * direction / (v_hat.sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Zeroes negative delays in place.
pub fn clamp_delays(net: &mut Network) {
    net.clamp_delays();
}
