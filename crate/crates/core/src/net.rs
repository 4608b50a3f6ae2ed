//! Small dense visuomotor regressor `g(I, θ) → u` with hand-written reverse
//! mode, Adam training and input-gradient saliency.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::image::{Image, BACKGROUND_GRAY};
use crate::saliency::SaliencyMap;
use crate::world::JointState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetConfig {
    /// Network input resolution; images are area-averaged down to it.
    pub input_width: usize,
    pub input_height: usize,
    pub hidden: Vec<usize>,
    /// Subtracted from every image channel before the first layer.
    pub image_offset: f64,
}

impl Default for NetConfig {
    fn default() -> Self {
        NetConfig {
            input_width: 32,
            input_height: 24,
            hidden: vec![64, 32],
            image_offset: BACKGROUND_GRAY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Dense {
    inputs: usize,
    outputs: usize,
    /// Row-major `outputs × inputs`.
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Dense {
    fn param_count(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

/// Multilayer perceptron with tanh hidden units and a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroNet {
    input_width: usize,
    input_height: usize,
    joints: usize,
    image_offset: f64,
    layers: Vec<Dense>,
}

/// Activations recorded by a forward pass; `acts[0]` is the input vector and
/// `acts[l + 1]` the output of layer `l`.
struct Tape {
    acts: Vec<Vec<f64>>,
}

/// Parameter gradients laid out like [`MicroNet::params`].
pub type Gradient = Vec<f64>;

impl MicroNet {
    /// Xavier-uniform initialisation from a fixed seed.
    pub fn new(cfg: &NetConfig, joints: usize, seed: u64) -> Result<Self> {
        if cfg.input_width == 0 || cfg.input_height == 0 || joints == 0 {
            return Err(Error::invalid("network input and output sizes must be non-zero"));
        }
        if cfg.hidden.iter().any(|&h| h == 0) {
            return Err(Error::invalid("hidden layer sizes must be non-zero"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sizes = vec![cfg.input_width * cfg.input_height * 3 + joints];
        sizes.extend(&cfg.hidden);
        sizes.push(joints);
        let layers = sizes
            .windows(2)
            .map(|s| {
                let limit = (6.0 / (s[0] + s[1]) as f64).sqrt();
                Dense {
                    inputs: s[0],
                    outputs: s[1],
                    w: (0..s[0] * s[1]).map(|_| rng.gen_range(-limit..limit)).collect(),
                    b: vec![0.0; s[1]],
                }
            })
            .collect();
        Ok(MicroNet {
            input_width: cfg.input_width,
            input_height: cfg.input_height,
            joints,
            image_offset: cfg.image_offset,
            layers,
        })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].inputs];
        s.extend(self.layers.iter().map(|l| l.outputs));
        s
    }

    pub fn input_size(&self) -> (usize, usize) {
        (self.input_width, self.input_height)
    }

    pub fn joints(&self) -> usize {
        self.joints
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    /// Flat parameter vector: per layer, weights then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            p.extend_from_slice(&l.w);
            p.extend_from_slice(&l.b);
        }
        p
    }

    pub fn set_params(&mut self, p: &[f64]) -> Result<()> {
        check_dim(self.param_count(), p.len())?;
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.w.len();
            l.w.copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = l.b.len();
            l.b.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// Zeroes every weight that reads an image pixel.
    pub fn zero_image_weights(&mut self) {
        let first = &mut self.layers[0];
        let pixels = first.inputs - self.joints;
        for row in first.w.chunks_mut(first.inputs) {
            row[..pixels].iter_mut().for_each(|w| *w = 0.0);
        }
    }

    /// Downsamples and offsets `image`, then appends the joint angles.
    pub fn encode_input(&self, image: &Image, theta: &JointState) -> Result<Vec<f64>> {
        check_dim(self.joints, theta.len())?;
        let small = image.downsample(self.input_width, self.input_height)?;
        let mut x: Vec<f64> = small.data().iter().map(|v| v - self.image_offset).collect();
        x.extend_from_slice(theta);
        Ok(x)
    }

    fn forward_tape(&self, x: &[f64]) -> Result<Tape> {
        check_dim(self.layers[0].inputs, x.len())?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (li, l) in self.layers.iter().enumerate() {
            let input = acts.last().unwrap();
            let mut out = l.b.clone();
            for (o, row) in out.iter_mut().zip(l.w.chunks(l.inputs)) {
                *o += row.iter().zip(input).map(|(w, v)| w * v).sum::<f64>();
            }
            if li != last {
                out.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(out);
        }
        Ok(Tape { acts })
    }

    /// Forward pass on an already encoded input vector.
    pub fn forward_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_tape(x)?.acts.pop().unwrap())
    }

    pub fn forward(&self, image: &Image, theta: &JointState) -> Result<Vec<f64>> {
        self.forward_vec(&self.encode_input(image, theta)?)
    }

    /// Reverse sweep: given `∂L/∂output`, accumulates parameter gradients
    /// into `grad` (when provided) and returns `∂L/∂input`.
    fn backward(&self, tape: &Tape, d_out: &[f64], mut grad: Option<&mut [f64]>) -> Vec<f64> {
        let mut delta = d_out.to_vec();
        let last = self.layers.len() - 1;
        // parameter offsets per layer
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for l in &self.layers {
            offsets.push(off);
            off += l.param_count();
        }
        for li in (0..self.layers.len()).rev() {
            let l = &self.layers[li];
            if li != last {
                // through tanh: d pre = d post * (1 - y²)
                for (d, y) in delta.iter_mut().zip(&tape.acts[li + 1]) {
                    *d *= 1.0 - y * y;
                }
            }
            let input = &tape.acts[li];
            if let Some(g) = grad.as_deref_mut() {
                let base = offsets[li];
                for (o, d) in delta.iter().enumerate() {
                    let row = &mut g[base + o * l.inputs..base + (o + 1) * l.inputs];
                    for (gw, v) in row.iter_mut().zip(input) {
                        *gw += d * v;
                    }
                }
                let bbase = base + l.w.len();
                for (gb, d) in g[bbase..bbase + l.outputs].iter_mut().zip(&delta) {
                    *gb += d;
                }
            }
            let mut d_in = vec![0.0; l.inputs];
            for (d, row) in delta.iter().zip(l.w.chunks(l.inputs)) {
                for (di, w) in d_in.iter_mut().zip(row) {
                    *di += d * w;
                }
            }
            delta = d_in;
        }
        delta
    }

    /// Jacobian of the outputs with respect to the encoded input vector, one
    /// row per output.
    pub fn input_jacobian(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let tape = self.forward_tape(x)?;
        Ok((0..self.joints)
            .map(|i| {
                let mut e = vec![0.0; self.joints];
                e[i] = 1.0;
                self.backward(&tape, &e, None)
            })
            .collect())
    }

    /// Adds `scale · ∂/∂params Σ (g(x) − target)²` into `grad` and returns
    /// the squared error sum.
    fn accumulate_mse_grad(&self, x: &[f64], target: &[f64], scale: f64, grad: &mut [f64]) -> Result<f64> {
        let tape = self.forward_tape(x)?;
        let out = tape.acts.last().unwrap();
        let mut sq = 0.0;
        let d_out: Vec<f64> = out
            .iter()
            .zip(target)
            .map(|(o, t)| {
                sq += (o - t) * (o - t);
                2.0 * (o - t) * scale
            })
            .collect();
        self.backward(&tape, &d_out, Some(grad));
        Ok(sq)
    }

    /// Mean squared error over samples and output dimensions, with its
    /// parameter gradient.
    pub fn loss_and_grad(&self, samples: &[Sample]) -> Result<(f64, Gradient)> {
        let idx: Vec<usize> = (0..samples.len()).collect();
        self.batch_loss_and_grad(samples, &idx)
    }

    /// Loss and gradient over `data[idx]`. Work is split into fixed chunks
    /// whose partial sums are added in order, so the result does not depend
    /// on the number of worker threads.
    fn batch_loss_and_grad(&self, data: &[Sample], idx: &[usize]) -> Result<(f64, Gradient)> {
        const CHUNK: usize = 8;
        let scale = 1.0 / (idx.len() * self.joints) as f64;
        let partials: Vec<Result<(f64, Gradient)>> = idx
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut grad = vec![0.0; self.param_count()];
                let mut total = 0.0;
                for &i in chunk {
                    let s = &data[i];
                    check_dim(self.joints, s.target.len())?;
                    total += self.accumulate_mse_grad(&s.input, &s.target, scale, &mut grad)?;
                }
                Ok((total, grad))
            })
            .collect();
        let mut grad = vec![0.0; self.param_count()];
        let mut total = 0.0;
        for p in partials {
            let (t, g) = p?;
            total += t;
            grad.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        Ok((total * scale, grad))
    }

    pub fn loss(&self, samples: &[Sample]) -> Result<f64> {
        let errors: Vec<Result<f64>> = samples
            .par_iter()
            .map(|s| {
                let out = self.forward_vec(&s.input)?;
                Ok(out
                    .iter()
                    .zip(&s.target)
                    .map(|(o, t)| (o - t).powi(2))
                    .sum::<f64>())
            })
            .collect();
        let mut total = 0.0;
        for e in errors {
            total += e?;
        }
        Ok(total / (samples.len() * self.joints) as f64)
    }

    /// Per-cell saliency: sum over outputs and color channels of
    /// `|∂g/∂I|`, max-normalised, at network input resolution.
    pub fn input_gradient_saliency(&self, image: &Image, theta: &JointState) -> Result<SaliencyMap> {
        let x = self.encode_input(image, theta)?;
        let jac = self.input_jacobian(&x)?;
        let cells = self.input_width * self.input_height;
        let mut values = vec![0.0; cells];
        for row in &jac {
            for (cell, v) in values.iter_mut().enumerate() {
                *v += row[cell * 3].abs() + row[cell * 3 + 1].abs() + row[cell * 3 + 2].abs();
            }
        }
        SaliencyMap::normalized(self.input_width, self.input_height, values)
    }

    /// Writes a text header naming the layer sizes followed by every
    /// parameter as a little-endian f64.
    pub fn write_weights<W: Write>(&self, mut out: W) -> Result<()> {
        let sizes: Vec<String> = self.layer_sizes().iter().map(|s| s.to_string()).collect();
        writeln!(out, "micronet 1")?;
        writeln!(out, "input {} {}", self.input_width, self.input_height)?;
        writeln!(out, "joints {}", self.joints)?;
        writeln!(out, "offset {:?}", self.image_offset)?;
        writeln!(out, "layers {}", sizes.join(" "))?;
        writeln!(out, "end")?;
        for p in self.params() {
            out.write_all(&p.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_weights(std::io::BufWriter::new(f))
    }

    pub fn read_weights<R: Read>(input: R, origin: &Path) -> Result<MicroNet> {
        let mut reader = BufReader::new(input);
        let bad = |m: &str| Error::format(origin, m);
        let mut fields = std::collections::HashMap::new();
        loop {
            let mut line = String::new();
            if reader.read_line(&mut line)? == 0 {
                return Err(bad("weights header is not terminated"));
            }
            let line = line.trim();
            if line == "end" {
                break;
            }
            let (k, v) = line.split_once(' ').ok_or_else(|| bad("malformed header line"))?;
            fields.insert(k.to_owned(), v.to_owned());
        }
        let get = |k: &str| fields.get(k).ok_or_else(|| bad(&format!("missing header field {k}")));
        if get("micronet")? != "1" {
            return Err(bad("unsupported weights version"));
        }
        let nums = |k: &str| -> Result<Vec<usize>> {
            get(k)?
                .split_whitespace()
                .map(|s| s.parse().map_err(|_| bad(&format!("bad number in {k}"))))
                .collect()
        };
        let input = nums("input")?;
        let joints = nums("joints")?;
        let layers = nums("layers")?;
        let offset: f64 = get("offset")?.parse().map_err(|_| bad("bad offset"))?;
        if input.len() != 2 || joints.len() != 1 || layers.len() < 2 {
            return Err(bad("inconsistent header"));
        }
        let cfg = NetConfig {
            input_width: input[0],
            input_height: input[1],
            hidden: layers[1..layers.len() - 1].to_vec(),
            image_offset: offset,
        };
        let mut net = MicroNet::new(&cfg, joints[0], 0)?;
        if net.layer_sizes() != layers {
            return Err(bad("layer sizes do not match input and joint counts"));
        }
        let mut bytes = vec![0u8; net.param_count() * 8];
        reader
            .read_exact(&mut bytes)
            .map_err(|_| bad("truncated weight data"))?;
        let params: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        net.set_params(&params)?;
        Ok(net)
    }

    pub fn load(path: &Path) -> Result<MicroNet> {
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        MicroNet::read_weights(std::fs::File::open(path)?, path)
    }
}

/// One encoded training pair.
#[derive(Debug, Clone)]
pub struct Sample {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// A loss this many times above the initial loss counts as divergence.
    pub divergence_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            learning_rate: 1e-2,
            batch_size: 32,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            divergence_ratio: 1e3,
        }
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
        }
    }
}

/// Loss before training followed by the full-dataset loss after each epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct LossCurve(pub Vec<f64>);

impl LossCurve {
    /// Running minimum of the curve.
    pub fn best_envelope(&self) -> Vec<f64> {
        let mut best = f64::INFINITY;
        self.0
            .iter()
            .map(|&l| {
                best = best.min(l);
                best
            })
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,best\n");
        for (i, (l, b)) in self.0.iter().zip(self.best_envelope()).enumerate() {
            s.push_str(&format!("{i},{l},{b}\n"));
        }
        s
    }
}

/// Mini-batch Adam on mean squared error. Shuffling uses `seed`, so runs are
/// reproducible.
pub fn train(net: &mut MicroNet, data: &[Sample], cfg: &TrainConfig, seed: u64) -> Result<LossCurve> {
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut adam = Adam::new(net.param_count());
    let mut params = net.params();
    let initial = net.loss(data)?;
    if !initial.is_finite() {
        return Err(Error::Divergence {
            epoch: 0,
            loss: initial,
        });
    }
    let limit = initial.max(1e-12) * cfg.divergence_ratio;
    let mut curve = vec![initial];
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let (loss, grad) = net.batch_loss_and_grad(data, chunk)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            adam.step(&mut params, &grad, cfg);
            net.set_params(&params)?;
        }
        let loss = net.loss(data)?;
        if !loss.is_finite() || loss > limit {
            return Err(Error::Divergence { epoch, loss });
        }
        curve.push(loss);
    }
    Ok(LossCurve(curve))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> NetConfig {
        NetConfig {
            input_width: 4,
            input_height: 3,
            hidden: vec![6, 5],
            image_offset: 0.5,
        }
    }

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..w * h * 3).map(|_| rng.gen::<f64>()).collect();
        Image::from_raw(w, h, data).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let mut net = MicroNet::new(&tiny_cfg(), 3, 1).unwrap();
        let zeros = vec![0.0; net.param_count()];
        net.set_params(&zeros).unwrap();
        let out = net
            .forward(&random_image(4, 3, 2), &vec![0.1, 0.2, 0.3].into())
            .unwrap();
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn initialisation_is_reproducible() {
        let a = MicroNet::new(&tiny_cfg(), 3, 9).unwrap();
        let b = MicroNet::new(&tiny_cfg(), 3, 9).unwrap();
        let img = random_image(8, 6, 3);
        let th: JointState = vec![0.4, -0.2, 1.0].into();
        assert_eq!(a.forward(&img, &th).unwrap(), b.forward(&img, &th).unwrap());
    }

    #[test]
    fn forward_rejects_wrong_joint_count() {
        let net = MicroNet::new(&tiny_cfg(), 3, 1).unwrap();
        assert!(net.forward(&random_image(4, 3, 1), &vec![0.0; 2].into()).is_err());
    }

    #[test]
    fn constant_output_net_has_zero_saliency() {
        let mut net = MicroNet::new(&tiny_cfg(), 3, 4).unwrap();
        net.zero_image_weights();
        let map = net
            .input_gradient_saliency(&random_image(4, 3, 5), &vec![0.0; 3].into())
            .unwrap();
        assert!(map.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_sample_is_memorised() {
        let mut net = MicroNet::new(&tiny_cfg(), 3, 11).unwrap();
        let x = net
            .encode_input(&random_image(4, 3, 6), &vec![0.3, 0.1, -0.2].into())
            .unwrap();
        let data = vec![Sample {
            input: x,
            target: vec![0.5, -0.25, 0.1],
        }];
        let cfg = TrainConfig {
            epochs: 400,
            batch_size: 1,
            ..TrainConfig::default()
        };
        let curve = train(&mut net, &data, &cfg, 1).unwrap();
        assert!(*curve.0.last().unwrap() < 1e-6, "{:?}", curve.0.last());
    }

    #[test]
    fn huge_learning_rate_diverges() {
        let mut net = MicroNet::new(&tiny_cfg(), 3, 12).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data: Vec<Sample> = (0..16)
            .map(|i| Sample {
                input: net
                    .encode_input(&random_image(4, 3, i), &vec![rng.gen(), rng.gen(), rng.gen()].into())
                    .unwrap(),
                target: vec![rng.gen(), rng.gen(), rng.gen()],
            })
            .collect();
        let cfg = TrainConfig {
            learning_rate: 1e3,
            epochs: 5,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&mut net, &data, &cfg, 3),
            Err(Error::Divergence { .. })
        ));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let mut net = MicroNet::new(&tiny_cfg(), 3, 1).unwrap();
        assert!(train(&mut net, &[], &TrainConfig::default(), 0).is_err());
    }

    #[test]
    fn weights_round_trip() {
        let net = MicroNet::new(&tiny_cfg(), 3, 21).unwrap();
        let mut buf = Vec::new();
        net.write_weights(&mut buf).unwrap();
        let back = MicroNet::read_weights(buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back, net);
        assert!(MicroNet::read_weights(&buf[..buf.len() - 3], Path::new("mem")).is_err());
    }

    #[test]
    fn loss_envelope_is_non_increasing() {
        let c = LossCurve(vec![3.0, 2.0, 2.5, 1.0, 1.5]);
        assert_eq!(c.best_envelope(), vec![3.0, 2.0, 2.0, 1.0, 1.0]);
    }
}
