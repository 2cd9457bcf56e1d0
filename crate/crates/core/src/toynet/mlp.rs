use crate::error::{Error, Result};
use crate::rng::Rng;

pub const MODEL_MAGIC: &[u8; 4] = b"OODM";
pub const MODEL_VERSION: u16 = 1;

/// Dense layer, `out x inp` weights stored row-major.
#[derive(Debug, Clone, PartialEq)]
struct Dense {
    inp: usize,
    out: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Dense {
    fn apply(&self, x: &[f64], y: &mut Vec<f64>) {
        y.clear();
        y.extend(
            self.w
                .chunks_exact(self.inp)
                .zip(&self.b)
                .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b),
        );
    }
}

/// Feed-forward network: ReLU hidden layers, softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    layers: Vec<Dense>,
}

/// Softmax output and the last hidden activation for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub probs: Vec<f64>,
    pub features: Vec<f64>,
}

/// What the output distribution is pulled towards.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Target {
    /// One-hot on a class index.
    Class(usize),
    /// The uniform distribution over all outputs.
    Uniform,
}

/// Parameter gradients, shaped like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub(crate) w: Vec<Vec<f64>>,
    pub(crate) b: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros_like(net: &Mlp) -> Self {
        Self {
            w: net.layers.iter().map(|l| vec![0.0; l.w.len()]).collect(),
            b: net.layers.iter().map(|l| vec![0.0; l.b.len()]).collect(),
        }
    }

    pub(crate) fn add_scaled(&mut self, other: &Gradients, scale: f64) {
        for (a, b) in self.w.iter_mut().zip(&other.w).chain(self.b.iter_mut().zip(&other.b)) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += scale * y);
        }
    }

    /// Same order as [`Mlp::params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.w.iter().zip(&self.b) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

fn log_softmax(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

impl Mlp {
    /// He-normal weights, zero biases.
    pub fn new(dims: &[usize], seed: u64) -> Result<Self> {
        let mut net = Self::zeros(dims)?;
        let mut rng = Rng::new(seed);
        for l in &mut net.layers {
            let std = (2.0 / l.inp as f64).sqrt();
            l.w.iter_mut().for_each(|w| *w = std * rng.normal());
        }
        Ok(net)
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::arg(format!("invalid layer dimensions {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|p| Dense {
                inp: p[0],
                out: p[1],
                w: vec![0.0; p[0] * p[1]],
                b: vec![0.0; p[1]],
            })
            .collect();
        Ok(Self {
            dims: dims.to_vec(),
            layers,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Width of the penultimate layer.
    pub fn feature_dim(&self) -> usize {
        self.dims[self.dims.len() - 2]
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::invalid(format!(
                "input has {} features, network expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Post-activation outputs of every layer, input first, logits last.
    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut y = Vec::with_capacity(l.out);
            l.apply(&acts[i], &mut y);
            if i < last {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(y);
        }
        acts
    }

    pub fn forward(&self, x: &[f64]) -> Result<Forward> {
        self.check_input(x)?;
        let mut acts = self.activations(x);
        let logits = acts.pop().unwrap();
        let probs = log_softmax(&logits).into_iter().map(f64::exp).collect();
        Ok(Forward {
            probs,
            features: acts.pop().unwrap(),
        })
    }

    pub fn predict(&self, x: &[f64]) -> Result<u32> {
        let f = self.forward(x)?;
        Ok(argmax(&f.probs) as u32)
    }

    pub fn predict_all(&self, xs: &[Vec<f64>]) -> Result<Vec<u32>> {
        xs.iter().map(|x| self.predict(x)).collect()
    }

    pub fn features_all(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        xs.iter().map(|x| self.forward(x).map(|f| f.features)).collect()
    }

    /// Cross-entropy of the softmax output against `target`.
    pub fn loss(&self, x: &[f64], target: Target) -> Result<f64> {
        self.check_input(x)?;
        let logits = self.activations(x).pop().unwrap();
        self.check_target(target)?;
        Ok(cross_entropy(&log_softmax(&logits), target))
    }

    fn check_target(&self, target: Target) -> Result<()> {
        match target {
            Target::Class(c) if c >= self.output_dim() => Err(Error::arg(format!(
                "target class {c} is not below output size {}",
                self.output_dim()
            ))),
            _ => Ok(()),
        }
    }

    /// Loss, parameter gradients and input gradient for one sample.
    pub fn backprop(&self, x: &[f64], target: Target) -> Result<(f64, Gradients, Vec<f64>)> {
        let mut grads = Gradients::zeros_like(self);
        let (loss, dx) = self.backprop_into(x, target, 1.0, &mut grads)?;
        Ok((loss, grads, dx))
    }

    /// Adds `scale` times the parameter gradient into `grads`; returns the
    /// unscaled loss and the unscaled input gradient.
    pub(crate) fn backprop_into(
        &self,
        x: &[f64],
        target: Target,
        scale: f64,
        grads: &mut Gradients,
    ) -> Result<(f64, Vec<f64>)> {
        self.check_input(x)?;
        self.check_target(target)?;
        let acts = self.activations(x);
        let logp = log_softmax(acts.last().unwrap());
        let loss = cross_entropy(&logp, target);

        let out = self.output_dim();
        let mut delta: Vec<f64> = logp
            .iter()
            .enumerate()
            .map(|(k, lp)| {
                let t = match target {
                    Target::Class(c) => (k == c) as u8 as f64,
                    Target::Uniform => 1.0 / out as f64,
                };
                lp.exp() - t
            })
            .collect();

        for (li, layer) in self.layers.iter().enumerate().rev() {
            let a_in = &acts[li];
            let gw = &mut grads.w[li];
            let gb = &mut grads.b[li];
            for (o, d) in delta.iter().enumerate() {
                gb[o] += scale * d;
                let row = &mut gw[o * layer.inp..(o + 1) * layer.inp];
                row.iter_mut().zip(a_in).for_each(|(g, a)| *g += scale * d * a);
            }
            let mut prev = vec![0.0; layer.inp];
            for (o, d) in delta.iter().enumerate() {
                let row = &layer.w[o * layer.inp..(o + 1) * layer.inp];
                prev.iter_mut().zip(row).for_each(|(p, w)| *p += w * d);
            }
            if li > 0 {
                // ReLU derivative, taken as 0 at the kink.
                prev.iter_mut().zip(a_in).for_each(|(p, a)| {
                    if *a <= 0.0 {
                        *p = 0.0
                    }
                });
            }
            delta = prev;
        }
        Ok((loss, delta))
    }

    pub(crate) fn zero_grads(&self) -> Gradients {
        Gradients::zeros_like(self)
    }

    pub(crate) fn step(&mut self, update: &Gradients, lr: f64) {
        for (l, (gw, gb)) in self.layers.iter_mut().zip(update.w.iter().zip(&update.b)) {
            l.w.iter_mut().zip(gw).for_each(|(w, g)| *w -= lr * g);
            l.b.iter_mut().zip(gb).for_each(|(b, g)| *b -= lr * g);
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All parameters, layer by layer, weights then biases.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::arg(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut rest = params;
        for l in &mut self.layers {
            let (w, r) = rest.split_at(l.w.len());
            let (b, r) = r.split_at(l.b.len());
            l.w.copy_from_slice(w);
            l.b.copy_from_slice(b);
            rest = r;
        }
        Ok(())
    }

    /// Packed little-endian form: magic `OODM`, version `u16`, layer count
    /// `u32`, each dimension as `u32`, then every parameter as `f64` in
    /// [`Mlp::params`] order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(10 + 4 * self.dims.len() + 8 * self.param_count());
        out.extend_from_slice(MODEL_MAGIC);
        out.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for p in self.params() {
            out.extend_from_slice(&p.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |what: &str| Error::invalid(format!("model bytes: {what}"));
        let mut cur = bytes;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur.len() < n {
                return Err(bad("truncated"));
            }
            let (head, tail) = cur.split_at(n);
            cur = tail;
            Ok(head)
        };
        if take(4)? != MODEL_MAGIC {
            return Err(bad("bad magic, expected OODM"));
        }
        let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
        if version != MODEL_VERSION {
            return Err(bad("unsupported version"));
        }
        let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        if count > 64 {
            return Err(bad("too many layers"));
        }
        let dims = (0..count)
            .map(|_| Ok(u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut net = Self::zeros(&dims)?;
        let params = (0..net.param_count())
            .map(|_| Ok(f64::from_le_bytes(take(8)?.try_into().unwrap())))
            .collect::<Result<Vec<_>>>()?;
        if !cur.is_empty() {
            return Err(bad("trailing bytes"));
        }
        net.set_params(&params)?;
        Ok(net)
    }
}

fn cross_entropy(logp: &[f64], target: Target) -> f64 {
    match target {
        Target::Class(c) => -logp[c],
        Target::Uniform => -logp.iter().sum::<f64>() / logp.len() as f64,
    }
}

pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in xs.iter().enumerate() {
        if *v > xs[best] {
            best = i;
        }
    }
    best
}
