//! Binary checkpoint container (little-endian).
//!
//! ```text
//! "SLCK" | version u16 | arch: u32 len + UTF-8 | theta, tau_s, tau_r, Ts: f64
//! per learnable layer: u32 ndims, u32 dims.., f64 weights.., u32 ndelays, f64 delays..
//! u32 tensor count, per tensor: u32 name len + UTF-8, u64 len, f64 values..
//! ```
//!
//! Named tensors carry the simulation window, the optimizer state and the
//! epoch counter.

use std::fs;
use std::path::Path;

use crate::backprop::Gradients;
use crate::error::{Error, Result};
use crate::forward::NeuronConfig;
use crate::optim::{Method, OptimizerConfig, OptimizerState};
use crate::signal::SimConfig;
use crate::topology::{parse_architecture, render_architecture, Network};

pub const MAGIC: &[u8; 4] = b"SLCK";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network,
    pub optimizer: Option<OptimizerState>,
    /// Number of completed training epochs.
    pub epoch: u64,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, values: &[f64]) {
        for &v in values {
            self.f64(v);
        }
    }
    fn tensor(&mut self, name: &str, values: &[f64]) {
        self.str(name);
        self.u64(values.len() as u64);
        self.f64s(values);
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::parse(
                format!("offset {}", self.pos),
                format!("truncated while reading {what}"),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }
    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
    fn str(&mut self, what: &str) -> Result<String> {
        let len = self.u32(what)? as usize;
        let at = self.pos;
        let raw = self.take(len, what)?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::parse(format!("offset {at}"), format!("{what} is not UTF-8")))
    }
    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n.saturating_mul(8), what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn moment_tensors(prefix: &str, g: &Gradients, w: &mut Writer) {
    for (l, layer) in g.layers.iter().enumerate() {
        w.tensor(&format!("{prefix}.{l}.weights"), &layer.weights);
        w.tensor(&format!("{prefix}.{l}.delays"), &layer.delays);
    }
}

pub fn encode_checkpoint(ck: &Checkpoint) -> Vec<u8> {
    let net = &ck.network;
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.0.extend_from_slice(&VERSION.to_le_bytes());
    w.str(&render_architecture(net.spec()));
    w.f64(net.neuron.theta);
    w.f64(net.neuron.tau_s);
    w.f64(net.neuron.tau_r);
    w.f64(net.sim.ts());
    for l in 0..net.spec().depth() {
        if !net.learnable(l) {
            continue;
        }
        let dims = net.transition(l).weight_dims();
        w.u32(dims.len() as u32);
        for d in dims {
            w.u32(d as u32);
        }
        w.f64s(&net.params[l].weights);
        w.u32(net.params[l].delays.len() as u32);
        w.f64s(&net.params[l].delays);
    }

    let mut tensors = Writer(Vec::new());
    let mut count = 2;
    tensors.tensor("sim.window_ms", &[net.sim.window_ms()]);
    tensors.tensor("trainer.epoch", &[ck.epoch as f64]);
    if let Some(opt) = &ck.optimizer {
        let c = &opt.config;
        tensors.tensor(
            "optim.config",
            &[
                c.method.tag() as f64,
                c.learning_rate,
                c.beta1,
                c.beta2,
                c.gamma,
                c.epsilon,
                c.delay_lr_scale,
            ],
        );
        tensors.tensor("optim.step", &[opt.step as f64]);
        moment_tensors("optim.m", &opt.m, &mut tensors);
        moment_tensors("optim.v", &opt.v, &mut tensors);
        count += 2 + 4 * opt.m.layers.len();
    }
    w.u32(count as u32);
    w.0.extend_from_slice(&tensors.0);
    w.0
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::parse("offset 0", "bad checkpoint magic"));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::parse("offset 4", format!("unsupported checkpoint version {version}")));
    }
    let arch = r.str("architecture")?;
    let spec = parse_architecture(&arch)?;
    let neuron = NeuronConfig::new(r.f64("theta")?, r.f64("tau_s")?, r.f64("tau_r")?)?;
    let ts = r.f64("Ts")?;

    // Window is only known from the named tensors; use a placeholder until then.
    let mut net = Network::zeros(spec, neuron, SimConfig::new(ts, ts)?)?;
    for l in 0..net.spec().depth() {
        if !net.learnable(l) {
            continue;
        }
        let at = r.pos;
        let ndims = r.u32("weight rank")? as usize;
        let dims = (0..ndims)
            .map(|_| r.u32("weight dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        if dims != net.transition(l).weight_dims() {
            return Err(Error::parse(
                format!("offset {at}"),
                format!("layer {l} weight dims {dims:?} do not match the architecture"),
            ));
        }
        net.params[l].weights = r.f64s(net.params[l].weights.len(), "weights")?;
        let at = r.pos;
        let nd = r.u32("delay count")? as usize;
        if nd != net.params[l].delays.len() {
            return Err(Error::parse(format!("offset {at}"), format!("layer {l} has {nd} delays")));
        }
        net.params[l].delays = r.f64s(nd, "delays")?;
    }

    let count = r.u32("tensor count")?;
    let mut tensors = std::collections::BTreeMap::new();
    for _ in 0..count {
        let name = r.str("tensor name")?;
        let len = r.u64("tensor length")? as usize;
        let values = r.f64s(len, &name)?;
        tensors.insert(name, values);
    }
    if r.pos != bytes.len() {
        return Err(Error::parse(format!("offset {}", r.pos), "trailing bytes"));
    }

    let scalar = |name: &str| -> Result<f64> {
        match tensors.get(name).map(Vec::as_slice) {
            Some([v]) => Ok(*v),
            _ => Err(Error::parse("tensors", format!("missing or malformed {name}"))),
        }
    };
    net.sim = SimConfig::new(scalar("sim.window_ms")?, ts)?;
    net.validate()?;
    let epoch = scalar("trainer.epoch")? as u64;

    let optimizer = match tensors.get("optim.config") {
        None => None,
        Some(c) => {
            let [tag, learning_rate, beta1, beta2, gamma, epsilon, delay_lr_scale] = c[..] else {
                return Err(Error::parse("tensors", "malformed optim.config"));
            };
            let method = Method::from_tag(tag as u8)
                .ok_or_else(|| Error::parse("tensors", format!("unknown optimizer tag {tag}")))?;
            let config = OptimizerConfig {
                method,
                learning_rate,
                beta1,
                beta2,
                gamma,
                epsilon,
                delay_lr_scale,
            };
            let mut state = OptimizerState::new(config, &net)?;
            state.step = scalar("optim.step")? as u64;
            for (prefix, moments) in [("optim.m", &mut state.m), ("optim.v", &mut state.v)] {
                for (l, layer) in moments.layers.iter_mut().enumerate() {
                    for (suffix, buf) in [("weights", &mut layer.weights), ("delays", &mut layer.delays)] {
                        let name = format!("{prefix}.{l}.{suffix}");
                        match tensors.get(&name) {
                            Some(v) if v.len() == buf.len() => buf.copy_from_slice(v),
                            _ => return Err(Error::parse("tensors", format!("missing or malformed {name}"))),
                        }
                    }
                }
            }
            Some(state)
        }
    };
    Ok(Checkpoint {
        network: net,
        optimizer,
        epoch,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    fs::write(path, encode_checkpoint(ck))?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    decode_checkpoint(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{init_network, InitConfig};

    fn sample() -> Checkpoint {
        let spec = parse_architecture("6x6x2-3c3-2a-4").unwrap();
        let neuron = NeuronConfig::new(1.25, 1.5, 2.0).unwrap();
        let sim = SimConfig::new(30.0, 0.5).unwrap();
        let mut net = init_network(spec, InitConfig { gain: 1.0 }, neuron, sim, 4).unwrap();
        net.params[0].delays[3] = 0.125;
        net.params[2].delays[1] = 1.0 / 3.0;
        let mut opt = OptimizerState::new(OptimizerConfig::new(Method::Nadam), &net).unwrap();
        opt.step = 17;
        opt.m.layers[0].weights[5] = -1e-300;
        opt.v.layers[2].delays[0] = std::f64::consts::PI;
        Checkpoint {
            network: net,
            optimizer: Some(opt),
            epoch: 9,
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let back = decode_checkpoint(&encode_checkpoint(&ck)).unwrap();
        assert_eq!(back, ck);

        let bare = Checkpoint {
            optimizer: None,
            ..sample()
        };
        assert_eq!(decode_checkpoint(&encode_checkpoint(&bare)).unwrap(), bare);
    }

    #[test]
    fn corrupted_inputs_are_rejected() {
        let bytes = encode_checkpoint(&sample());
        let mut bad = bytes.clone();
        bad[1] = b'X';
        assert!(matches!(decode_checkpoint(&bad), Err(Error::Parse { .. })));
        assert!(decode_checkpoint(&bytes[..bytes.len() - 3]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(decode_checkpoint(&long).is_err());
        let mut bad = bytes;
        bad[4] = 7;
        assert!(decode_checkpoint(&bad).is_err());
    }
}
