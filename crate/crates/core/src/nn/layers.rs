use super::linalg::{gemm, Out, View};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
    Tanh,
    Softmax,
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Activation {
    fn apply(self, z: &mut [f64], cols: usize) {
        match self {
            Activation::Linear => {}
            Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Sigmoid => z.iter_mut().for_each(|v| *v = sigmoid(*v)),
            Activation::Tanh => z.iter_mut().for_each(|v| *v = v.tanh()),
            Activation::Softmax => {
                for row in z.chunks_exact_mut(cols) {
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut sum = 0.0;
                    for v in row.iter_mut() {
                        *v = (*v - max).exp();
                        sum += *v;
                    }
                    row.iter_mut().for_each(|v| *v /= sum);
                }
            }
        }
    }

    /// Gradient with respect to the pre-activation, from the activation
    /// output `y` and upstream gradient `dy`.
    fn backward(self, y: &[f64], dy: &[f64], cols: usize) -> Vec<f64> {
        match self {
            Activation::Linear => dy.to_vec(),
            Activation::Relu => y
                .iter()
                .zip(dy)
                .map(|(&y, &d)| if y > 0.0 { d } else { 0.0 })
                .collect(),
            Activation::Sigmoid => y.iter().zip(dy).map(|(&y, &d)| d * y * (1.0 - y)).collect(),
            Activation::Tanh => y.iter().zip(dy).map(|(&y, &d)| d * (1.0 - y * y)).collect(),
            Activation::Softmax => {
                let mut out = vec![0.0; y.len()];
                for ((yr, dr), or) in y
                    .chunks_exact(cols)
                    .zip(dy.chunks_exact(cols))
                    .zip(out.chunks_exact_mut(cols))
                {
                    let dot: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                    for ((o, &yv), &dv) in or.iter_mut().zip(yr).zip(dr) {
                        *o = yv * (dv - dot);
                    }
                }
                out
            }
        }
    }
}

fn glorot<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-limit..limit)).collect()
}

fn col_sums(m: &[f64], cols: usize) -> Vec<f64> {
    let mut s = vec![0.0; cols];
    for row in m.chunks_exact(cols) {
        for (a, b) in s.iter_mut().zip(row) {
            *a += b;
        }
    }
    s
}

/// Fully connected layer, `y = act(x·Wᵀ + b)` with `W` stored out × in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub input: usize,
    pub output: usize,
    pub activation: Activation,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, activation: Activation, rng: &mut R) -> Self {
        Dense {
            input,
            output,
            activation,
            weight: glorot(rng, input, output, input * output),
            bias: vec![0.0; output],
        }
    }

    pub fn zeros(input: usize, output: usize, activation: Activation) -> Self {
        Dense {
            input,
            output,
            activation,
            weight: vec![0.0; input * output],
            bias: vec![0.0; output],
        }
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Cache)> {
        if x.shape().len() != 2 || x.shape()[1] != self.input {
            return Err(Error::shape(format!("[batch, {}]", self.input), format!("{:?}", x.shape())));
        }
        let b = x.batch();
        let mut y = vec![0.0; b * self.output];
        gemm(
            View::rm(x.data(), b, self.input),
            View::rm(&self.weight, self.output, self.input).t(),
            0.0,
            Out::rm(&mut y, self.output),
        );
        for row in y.chunks_exact_mut(self.output) {
            for (v, bias) in row.iter_mut().zip(&self.bias) {
                *v += bias;
            }
        }
        self.activation.apply(&mut y, self.output);
        let y = Tensor::matrix(b, self.output, y)?;
        Ok((
            y.clone(),
            Cache::Dense {
                input: x.clone(),
                output: y,
            },
        ))
    }

    fn backward(&self, input: &Tensor, output: &Tensor, dy: &Tensor) -> (Tensor, Vec<Vec<f64>>) {
        let b = input.batch();
        let dz = self.activation.backward(output.data(), dy.data(), self.output);
        let mut dw = vec![0.0; self.output * self.input];
        gemm(
            View::rm(&dz, b, self.output).t(),
            View::rm(input.data(), b, self.input),
            0.0,
            Out::rm(&mut dw, self.input),
        );
        let db = col_sums(&dz, self.output);
        let mut dx = vec![0.0; b * self.input];
        gemm(
            View::rm(&dz, b, self.output),
            View::rm(&self.weight, self.output, self.input),
            0.0,
            Out::rm(&mut dx, self.input),
        );
        (
            Tensor::matrix(b, self.input, dx).expect("shape"),
            vec![dw, db],
        )
    }
}

/// Long short-term memory layer.
///
/// Gate blocks are laid out `[input | forget | cell | output]`, each `units`
/// wide; `w_x` is input × 4·units, `w_h` is units × 4·units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub input: usize,
    pub units: usize,
    pub return_sequences: bool,
    pub w_x: Vec<f64>,
    pub w_h: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(input: usize, units: usize, return_sequences: bool, rng: &mut R) -> Self {
        let g = 4 * units;
        let mut bias = vec![0.0; g];
        bias[units..2 * units].iter_mut().for_each(|b| *b = 1.0);
        Lstm {
            input,
            units,
            return_sequences,
            w_x: glorot(rng, input, g, input * g),
            w_h: glorot(rng, units, g, units * g),
            bias,
        }
    }

    pub fn zeros(input: usize, units: usize, return_sequences: bool) -> Self {
        let g = 4 * units;
        Lstm {
            input,
            units,
            return_sequences,
            w_x: vec![0.0; input * g],
            w_h: vec![0.0; units * g],
            bias: vec![0.0; g],
        }
    }

    fn forward(&self, x: &Tensor) -> Result<(Tensor, Cache)> {
        let s = x.shape();
        if s.len() != 3 || s[2] != self.input {
            return Err(Error::shape(format!("[batch, time, {}]", self.input), format!("{s:?}")));
        }
        let (b, t, f) = (s[0], s[1], s[2]);
        let u = self.units;
        let g4 = 4 * u;
        let bt = b * t;
        let mut act = vec![0.0; bt * g4];
        gemm(View::rm(x.data(), bt, f), View::rm(&self.w_x, f, g4), 0.0, Out::rm(&mut act, g4));
        for row in act.chunks_exact_mut(g4) {
            for (a, bias) in row.iter_mut().zip(&self.bias) {
                *a += bias;
            }
        }
        let mut hprev = vec![0.0; bt * u];
        let mut hs = vec![0.0; bt * u];
        let mut cs = vec![0.0; bt * u];
        let mut tcs = vec![0.0; bt * u];
        for ti in 0..t {
            if ti > 0 {
                gemm(
                    View::strided(&hs, (ti - 1) * u, b, u, t * u),
                    View::rm(&self.w_h, u, g4),
                    1.0,
                    Out {
                        data: &mut act,
                        off: ti * g4,
                        rs: t * g4,
                    },
                );
            }
            for bi in 0..b {
                let r = bi * t + ti;
                let a = &mut act[r * g4..(r + 1) * g4];
                for j in 0..u {
                    let i = sigmoid(a[j]);
                    let fg = sigmoid(a[u + j]);
                    let g = a[2 * u + j].tanh();
                    let o = sigmoid(a[3 * u + j]);
                    a[j] = i;
                    a[u + j] = fg;
                    a[2 * u + j] = g;
                    a[3 * u + j] = o;
                    let (c_prev, h_prev) = if ti > 0 {
                        (cs[(r - 1) * u + j], hs[(r - 1) * u + j])
                    } else {
                        (0.0, 0.0)
                    };
                    let c = fg * c_prev + i * g;
                    let tc = c.tanh();
                    cs[r * u + j] = c;
                    tcs[r * u + j] = tc;
                    hs[r * u + j] = o * tc;
                    hprev[r * u + j] = h_prev;
                }
            }
        }
        let out = if self.return_sequences {
            Tensor::new(vec![b, t, u], hs)?
        } else {
            let mut last = Vec::with_capacity(b * u);
            for bi in 0..b {
                let r = bi * t + t - 1;
                last.extend_from_slice(&hs[r * u..(r + 1) * u]);
            }
            Tensor::matrix(b, u, last)?
        };
        Ok((
            out,
            Cache::Lstm {
                input: x.clone(),
                act,
                hprev,
                cs,
                tcs,
            },
        ))
    }

    fn backward(&self, cache: &Cache, dy: &Tensor) -> (Tensor, Vec<Vec<f64>>) {
        let Cache::Lstm {
            input,
            act,
            hprev,
            cs,
            tcs,
        } = cache
        else {
            unreachable!("cache/layer mismatch")
        };
        let s = input.shape();
        let (b, t, f) = (s[0], s[1], s[2]);
        let u = self.units;
        let g4 = 4 * u;
        let bt = b * t;
        let dyd = dy.data();
        let mut dz = vec![0.0; bt * g4];
        let mut dh_next = vec![0.0; b * u];
        let mut dc_next = vec![0.0; b * u];
        for ti in (0..t).rev() {
            for bi in 0..b {
                let r = bi * t + ti;
                let a = &act[r * g4..(r + 1) * g4];
                let d = &mut dz[r * g4..(r + 1) * g4];
                for j in 0..u {
                    let upstream = if self.return_sequences {
                        dyd[r * u + j]
                    } else if ti == t - 1 {
                        dyd[bi * u + j]
                    } else {
                        0.0
                    };
                    let dh = dh_next[bi * u + j] + upstream;
                    let (i, fg, g, o) = (a[j], a[u + j], a[2 * u + j], a[3 * u + j]);
                    let tc = tcs[r * u + j];
                    let dc = dc_next[bi * u + j] + dh * o * (1.0 - tc * tc);
                    let c_prev = if ti > 0 { cs[(r - 1) * u + j] } else { 0.0 };
                    d[j] = dc * g * i * (1.0 - i);
                    d[u + j] = dc * c_prev * fg * (1.0 - fg);
                    d[2 * u + j] = dc * i * (1.0 - g * g);
                    d[3 * u + j] = dh * tc * o * (1.0 - o);
                    dc_next[bi * u + j] = dc * fg;
                }
            }
            if ti > 0 {
                gemm(
                    View::strided(&dz, ti * g4, b, g4, t * g4),
                    View::rm(&self.w_h, u, g4).t(),
                    0.0,
                    Out::rm(&mut dh_next, u),
                );
            }
        }
        let mut dwx = vec![0.0; f * g4];
        gemm(View::rm(input.data(), bt, f).t(), View::rm(&dz, bt, g4), 0.0, Out::rm(&mut dwx, g4));
        let mut dwh = vec![0.0; u * g4];
        gemm(View::rm(hprev, bt, u).t(), View::rm(&dz, bt, g4), 0.0, Out::rm(&mut dwh, g4));
        let db = col_sums(&dz, g4);
        let mut dx = vec![0.0; bt * f];
        gemm(View::rm(&dz, bt, g4), View::rm(&self.w_x, f, g4).t(), 0.0, Out::rm(&mut dx, f));
        (
            Tensor::new(vec![b, t, f], dx).expect("shape"),
            vec![dwx, dwh, db],
        )
    }
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)` in training,
/// and the layer is the identity at inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    fn forward<R: Rng + ?Sized>(&self, x: &Tensor, rng: Option<&mut R>) -> (Tensor, Cache) {
        match rng {
            Some(rng) if self.rate > 0.0 => {
                let keep = 1.0 / (1.0 - self.rate);
                let mask: Vec<f64> = (0..x.data().len())
                    .map(|_| if rng.gen::<f64>() >= self.rate { keep } else { 0.0 })
                    .collect();
                let data = x.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
                (
                    Tensor::new(x.shape().to_vec(), data).expect("shape"),
                    Cache::Dropout { mask: Some(mask) },
                )
            }
            _ => (x.clone(), Cache::Dropout { mask: None }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Layer {
    Dense(Dense),
    Lstm(Lstm),
    Dropout(Dropout),
}

/// What a layer keeps from its forward pass for the backward pass.
#[derive(Debug)]
pub enum Cache {
    Dense {
        input: Tensor,
        output: Tensor,
    },
    Lstm {
        input: Tensor,
        act: Vec<f64>,
        hprev: Vec<f64>,
        cs: Vec<f64>,
        tcs: Vec<f64>,
    },
    Dropout {
        mask: Option<Vec<f64>>,
    },
}

/// A parameter array of a layer and whether it counts as a weight for
/// regularization (biases do not).
pub struct Param<'a> {
    pub values: &'a [f64],
    pub is_weight: bool,
}

impl Layer {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::Lstm(_) => "lstm",
            Layer::Dropout(_) => "dropout",
        }
    }

    pub(crate) fn forward<R: Rng + ?Sized>(&self, x: &Tensor, rng: Option<&mut R>) -> Result<(Tensor, Cache)> {
        match self {
            Layer::Dense(d) => d.forward(x),
            Layer::Lstm(l) => l.forward(x),
            Layer::Dropout(d) => Ok(d.forward(x, rng)),
        }
    }

    /// Returns the input gradient and one gradient array per parameter, in
    /// [`Layer::params`] order.
    pub(crate) fn backward(&self, cache: &Cache, dy: &Tensor) -> (Tensor, Vec<Vec<f64>>) {
        match (self, cache) {
            (Layer::Dense(d), Cache::Dense { input, output }) => d.backward(input, output, dy),
            (Layer::Lstm(l), c @ Cache::Lstm { .. }) => l.backward(c, dy),
            (Layer::Dropout(_), Cache::Dropout { mask }) => {
                let dx = match mask {
                    Some(m) => dy.data().iter().zip(m).map(|(a, b)| a * b).collect(),
                    None => dy.data().to_vec(),
                };
                (Tensor::new(dy.shape().to_vec(), dx).expect("shape"), Vec::new())
            }
            _ => unreachable!("cache/layer mismatch"),
        }
    }

    pub fn params(&self) -> Vec<Param<'_>> {
        match self {
            Layer::Dense(d) => vec![
                Param { values: &d.weight, is_weight: true },
                Param { values: &d.bias, is_weight: false },
            ],
            Layer::Lstm(l) => vec![
                Param { values: &l.w_x, is_weight: true },
                Param { values: &l.w_h, is_weight: true },
                Param { values: &l.bias, is_weight: false },
            ],
            Layer::Dropout(_) => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Vec<f64>> {
        match self {
            Layer::Dense(d) => vec![&mut d.weight, &mut d.bias],
            Layer::Lstm(l) => vec![&mut l.w_x, &mut l.w_h, &mut l.bias],
            Layer::Dropout(_) => Vec::new(),
        }
    }

    pub(crate) fn check_consistent(&self) -> Result<()> {
        let ok = match self {
            Layer::Dense(d) => d.weight.len() == d.input * d.output && d.bias.len() == d.output,
            Layer::Lstm(l) => {
                l.w_x.len() == l.input * 4 * l.units
                    && l.w_h.len() == l.units * 4 * l.units
                    && l.bias.len() == 4 * l.units
            }
            Layer::Dropout(d) => (0.0..1.0).contains(&d.rate),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Data(format!("inconsistent {} layer parameters", self.name())))
        }
    }
}

/// `factor · Σ|w|` over the layer's weights (biases excluded).
pub fn l1_penalty(layer: &Layer, factor: f64) -> f64 {
    if factor == 0.0 {
        return 0.0;
    }
    factor
        * layer
            .params()
            .iter()
            .filter(|p| p.is_weight)
            .flat_map(|p| p.values.iter())
            .map(|w| w.abs())
            .sum::<f64>()
}

/// Adds the L1 subgradient `factor · sign(w)` (zero at zero) to `grads`.
pub fn add_l1_subgradient(layer: &Layer, factor: f64, grads: &mut [Vec<f64>]) {
    if factor == 0.0 {
        return;
    }
    for (p, g) in layer.params().iter().zip(grads.iter_mut()) {
        if !p.is_weight {
            continue;
        }
        for (gv, &w) in g.iter_mut().zip(p.values) {
            if w > 0.0 {
                *gv += factor;
            } else if w < 0.0 {
                *gv -= factor;
            }
        }
    }
}
