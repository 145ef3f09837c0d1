use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layer::{LayerSpec, PoolKind};
use super::ops::{col2im, im2col, pool_backward, pool_forward, Geometry};
use super::tensor::{gemm, Tensor};
use super::NnError;

/// Weight and bias of a convolution (`[out, in, k, k]`, `[out]`) or dense
/// layer (`[out, in]`, `[out]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Params {
    pub fn zeros_like(&self) -> Self {
        Self {
            weight: Tensor::zeros(self.weight.shape().to_vec()),
            bias: Tensor::zeros(self.bias.shape().to_vec()),
        }
    }
}

/// Per-layer parameter gradients, `None` for parameter-free layers.
pub type Gradients = Vec<Option<Params>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub params: Vec<Option<Params>>,
    shapes: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, masks drawn from a stream seeded by `seed`.
    Train {
        seed: u64,
    },
    Eval,
}

/// Intermediates kept by [`Model::forward`] for [`Model::backward`].
#[derive(Debug, Clone)]
pub struct Cache {
    inputs: Vec<Tensor>,
    masks: Vec<Option<Vec<f64>>>,
}

impl Cache {
    /// Input tensor seen by layer `i`.
    pub fn input(&self, i: usize) -> &Tensor {
        &self.inputs[i]
    }
}

impl Model {
    /// Builds a model with Kaiming-uniform weights (bound `gain * sqrt(6 / fan_in)`)
    /// and zero biases.
    pub fn new(
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        seed: u64,
        gain: f64,
    ) -> Result<Self, NnError> {
        let shapes = infer_shapes(&input_shape, &layers)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = layers
            .iter()
            .enumerate()
            .map(|(i, layer)| {
                let in_shape = &shapes[i];
                let (wshape, out) = match *layer {
                    LayerSpec::Conv2d {
                        out_channels,
                        kernel,
                        ..
                    } => (
                        vec![out_channels, in_shape[0], kernel, kernel],
                        out_channels,
                    ),
                    LayerSpec::Dense { out_dim } => (vec![out_dim, in_shape[0]], out_dim),
                    _ => return None,
                };
                let fan_in: usize = wshape[1..].iter().product();
                let bound = gain * (6.0 / fan_in as f64).sqrt();
                let n: usize = wshape.iter().product();
                let data = (0..n).map(|_| rng.random_range(-bound..=bound)).collect();
                Some(Params {
                    weight: Tensor::new(wshape, data),
                    bias: Tensor::zeros(vec![out]),
                })
            })
            .collect();
        Ok(Self {
            input_shape,
            layers,
            params,
            shapes,
        })
    }

    /// Assembles a model from explicit parameters, checking every shape.
    pub fn from_parts(
        input_shape: Vec<usize>,
        layers: Vec<LayerSpec>,
        params: Vec<Option<Params>>,
    ) -> Result<Self, NnError> {
        let template = Self::new(input_shape, layers, 0, 1.0)?;
        if params.len() != template.layers.len() {
            return Err(NnError::Format(format!(
                "{} parameter entries for {} layers",
                params.len(),
                template.layers.len()
            )));
        }
        for (i, (want, got)) in template.params.iter().zip(&params).enumerate() {
            let ok = match (want, got) {
                (None, None) => true,
                (Some(w), Some(g)) => {
                    w.weight.shape() == g.weight.shape() && w.bias.shape() == g.bias.shape()
                }
                _ => false,
            };
            if !ok {
                return Err(NnError::Shape {
                    layer: i,
                    msg: "parameter shapes do not match the layer".into(),
                });
            }
        }
        Ok(Self { params, ..template })
    }

    /// Per-sample shape entering layer `i`; index `layers.len()` is the output.
    pub fn shape_at(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn output_dim(&self) -> usize {
        self.shapes.last().unwrap().iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.params
            .iter()
            .flatten()
            .map(|p| p.weight.len() + p.bias.len())
            .sum()
    }

    pub fn zero_gradients(&self) -> Gradients {
        self.params
            .iter()
            .map(|p| p.as_ref().map(Params::zeros_like))
            .collect()
    }

    /// Runs every layer on `batch` (`(N, ..input_shape)`) and returns the
    /// pre-softmax outputs with the cache needed for backpropagation.
    pub fn forward(&self, batch: &Tensor, mode: Mode) -> Result<(Tensor, Cache), NnError> {
        if batch.shape().get(1..) != Some(&self.input_shape[..]) {
            return Err(NnError::Shape {
                layer: 0,
                msg: format!(
                    "batch shape {:?} does not match input {:?}",
                    batch.shape(),
                    self.input_shape
                ),
            });
        }
        let n = batch.batch();
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut masks = Vec::with_capacity(self.layers.len());
        let mut x = batch.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let out_shape: Vec<usize> = std::iter::once(n)
                .chain(self.shapes[i + 1].iter().copied())
                .collect();
            let mut mask = None;
            let y = match *layer {
                LayerSpec::Conv2d { .. } => {
                    let p = self.params[i].as_ref().unwrap();
                    let g = self.geometry(i);
                    let cout = out_shape[1];
                    let plane = g.oh * g.ow;
                    let ckk = g.c * g.k * g.k;
                    let mut y = Tensor::zeros(out_shape);
                    let mut cols = vec![0.0; ckk * plane];
                    let (xr, yr) = (x.row_len(), cout * plane);
                    for s in 0..n {
                        im2col(&g, &x.data()[s * xr..(s + 1) * xr], &mut cols);
                        let out = &mut y.data_mut()[s * yr..(s + 1) * yr];
                        for (o, chunk) in out.chunks_mut(plane).enumerate() {
                            chunk.fill(p.bias.data()[o]);
                        }
                        gemm(
                            cout,
                            ckk,
                            plane,
                            p.weight.data(),
                            false,
                            &cols,
                            false,
                            1.0,
                            out,
                        );
                    }
                    y
                }
                LayerSpec::Dense { out_dim } => {
                    let p = self.params[i].as_ref().unwrap();
                    let d = x.row_len();
                    let mut y = Tensor::zeros(out_shape);
                    for row in y.data_mut().chunks_mut(out_dim) {
                        row.copy_from_slice(p.bias.data());
                    }
                    gemm(
                        n,
                        d,
                        out_dim,
                        x.data(),
                        false,
                        p.weight.data(),
                        true,
                        1.0,
                        y.data_mut(),
                    );
                    y
                }
                LayerSpec::Pool { kind, .. } => {
                    let g = self.geometry(i);
                    let mut y = Tensor::zeros(out_shape);
                    let (xr, yr) = (x.row_len(), y.row_len());
                    for s in 0..n {
                        pool_forward(
                            kind,
                            &g,
                            &x.data()[s * xr..(s + 1) * xr],
                            &mut y.data_mut()[s * yr..(s + 1) * yr],
                        );
                    }
                    y
                }
                LayerSpec::GlobalAvgPool => {
                    let plane = self.shapes[i][1] * self.shapes[i][2];
                    let data = x
                        .data()
                        .chunks(plane)
                        .map(|c| c.iter().sum::<f64>() / plane as f64)
                        .collect();
                    Tensor::new(out_shape, data)
                }
                LayerSpec::Activation { activation } => x.map(|v| activation.forward(v)),
                LayerSpec::Dropout { rate } => match mode {
                    Mode::Train { seed } if rate > 0.0 => {
                        let mut rng = ChaCha8Rng::seed_from_u64(layer_seed(seed, i));
                        let keep = 1.0 / (1.0 - rate);
                        let m: Vec<f64> = (0..x.len())
                            .map(|_| {
                                if rng.random::<f64>() < rate {
                                    0.0
                                } else {
                                    keep
                                }
                            })
                            .collect();
                        let data = x.data().iter().zip(&m).map(|(a, b)| a * b).collect();
                        mask = Some(m);
                        Tensor::new(out_shape, data)
                    }
                    _ => x.clone(),
                },
                LayerSpec::Flatten => x.clone().reshaped(out_shape),
            };
            inputs.push(x);
            masks.push(mask);
            x = y;
        }
        Ok((x, Cache { inputs, masks }))
    }

    /// Backpropagates `dout` (gradient w.r.t. the forward output). Returns the
    /// parameter gradients and the gradient w.r.t. the input batch.
    pub fn backward(&self, cache: &Cache, dout: &Tensor) -> Result<(Gradients, Tensor), NnError> {
        let mut grads = self.zero_gradients();
        let mut dy = dout.clone();
        for i in (0..self.layers.len()).rev() {
            let x = &cache.inputs[i];
            let n = x.batch();
            let mut dx = Tensor::zeros(x.shape().to_vec());
            match self.layers[i] {
                LayerSpec::Conv2d { .. } => {
                    let p = self.params[i].as_ref().unwrap();
                    let g = grads[i].as_mut().unwrap();
                    let geo = self.geometry(i);
                    let plane = geo.oh * geo.ow;
                    let ckk = geo.c * geo.k * geo.k;
                    let cout = p.bias.len();
                    let (xr, yr) = (x.row_len(), cout * plane);
                    let mut cols = vec![0.0; ckk * plane];
                    let mut dcols = vec![0.0; ckk * plane];
                    for s in 0..n {
                        let dys = &dy.data()[s * yr..(s + 1) * yr];
                        im2col(&geo, &x.data()[s * xr..(s + 1) * xr], &mut cols);
                        gemm(
                            cout,
                            plane,
                            ckk,
                            dys,
                            false,
                            &cols,
                            true,
                            1.0,
                            g.weight.data_mut(),
                        );
                        for (o, chunk) in dys.chunks(plane).enumerate() {
                            g.bias.data_mut()[o] += chunk.iter().sum::<f64>();
                        }
                        gemm(
                            ckk,
                            cout,
                            plane,
                            p.weight.data(),
                            true,
                            dys,
                            false,
                            0.0,
                            &mut dcols,
                        );
                        col2im(&geo, &dcols, &mut dx.data_mut()[s * xr..(s + 1) * xr]);
                    }
                }
                LayerSpec::Dense { out_dim } => {
                    let p = self.params[i].as_ref().unwrap();
                    let g = grads[i].as_mut().unwrap();
                    let d = x.row_len();
                    gemm(
                        out_dim,
                        n,
                        d,
                        dy.data(),
                        true,
                        x.data(),
                        false,
                        1.0,
                        g.weight.data_mut(),
                    );
                    for row in dy.data().chunks(out_dim) {
                        for (b, v) in g.bias.data_mut().iter_mut().zip(row) {
                            *b += v;
                        }
                    }
                    gemm(
                        n,
                        out_dim,
                        d,
                        dy.data(),
                        false,
                        p.weight.data(),
                        false,
                        0.0,
                        dx.data_mut(),
                    );
                }
                LayerSpec::Pool { kind, .. } => {
                    let geo = self.geometry(i);
                    let (xr, yr) = (x.row_len(), dy.row_len());
                    for s in 0..n {
                        pool_backward(
                            kind,
                            &geo,
                            &x.data()[s * xr..(s + 1) * xr],
                            &dy.data()[s * yr..(s + 1) * yr],
                            &mut dx.data_mut()[s * xr..(s + 1) * xr],
                        );
                    }
                }
                LayerSpec::GlobalAvgPool => {
                    let plane = self.shapes[i][1] * self.shapes[i][2];
                    for (chunk, &d) in dx.data_mut().chunks_mut(plane).zip(dy.data()) {
                        chunk.fill(d / plane as f64);
                    }
                }
                LayerSpec::Activation { activation } => {
                    for ((o, &xi), &d) in dx.data_mut().iter_mut().zip(x.data()).zip(dy.data()) {
                        *o = d * activation.backward(xi);
                    }
                }
                LayerSpec::Dropout { .. } => match &cache.masks[i] {
                    Some(m) => {
                        for ((o, &mi), &d) in dx.data_mut().iter_mut().zip(m).zip(dy.data()) {
                            *o = d * mi;
                        }
                    }
                    None => dx.data_mut().copy_from_slice(dy.data()),
                },
                LayerSpec::Flatten => dx.data_mut().copy_from_slice(dy.data()),
            }
            if let Some(g) = &grads[i] {
                if !(g.weight.all_finite() && g.bias.all_finite()) {
                    return Err(NnError::NonFiniteGradient { layer: i });
                }
            }
            dy = dx;
        }
        Ok((grads, dy))
    }

    fn geometry(&self, i: usize) -> Geometry {
        let (k, stride, pad) = match self.layers[i] {
            LayerSpec::Conv2d {
                kernel,
                stride,
                padding,
                ..
            } => (kernel, stride, padding),
            LayerSpec::Pool {
                window,
                stride,
                padding,
                ..
            } => (window, stride, padding),
            _ => unreachable!("geometry of a non-windowed layer"),
        };
        let (inp, out) = (&self.shapes[i], &self.shapes[i + 1]);
        Geometry {
            c: inp[0],
            h: inp[1],
            w: inp[2],
            k,
            stride,
            pad,
            oh: out[1],
            ow: out[2],
        }
    }

    /// Layers a prime-field evaluator cannot run, with their indices.
    pub fn field_incompatible_layers(&self) -> Vec<(usize, String)> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| match l {
                LayerSpec::Activation { activation } => !activation.is_field_compatible(),
                LayerSpec::Pool { kind, .. } => *kind == PoolKind::Max,
                _ => false,
            })
            .map(|(i, l)| (i, l.name()))
            .collect()
    }
}

fn infer_shapes(input: &[usize], layers: &[LayerSpec]) -> Result<Vec<Vec<usize>>, NnError> {
    if input.is_empty() || input.contains(&0) {
        return Err(NnError::Shape {
            layer: 0,
            msg: format!("invalid input shape {input:?}"),
        });
    }
    let mut shapes = vec![input.to_vec()];
    for (i, layer) in layers.iter().enumerate() {
        let next = layer.output_shape(i, shapes.last().unwrap())?;
        shapes.push(next);
    }
    if shapes.last().unwrap().len() != 1 {
        return Err(NnError::Shape {
            layer: layers.len(),
            msg: format!(
                "final output must be flat, got {:?}",
                shapes.last().unwrap()
            ),
        });
    }
    Ok(shapes)
}

/// Dropout stream for one layer of one step.
fn layer_seed(seed: u64, layer: usize) -> u64 {
    seed ^ (layer as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}
