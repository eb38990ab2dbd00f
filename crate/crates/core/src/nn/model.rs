use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layer::{Cache, Layer, LayerKind, LayerSpec};
use super::ops::{self, Activation, Mode};
use super::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// Parameter gradients keyed by `layer.param` name. Frozen layers are absent.
pub type Gradients<T> = BTreeMap<String, Tensor<T>>;

/// Inference batches are split into chunks of this many samples.
const EVAL_CHUNK: usize = 256;

/// Fluent list of layer specs; input-derived sizes are inferred on build.
#[derive(Debug, Clone, Default)]
pub struct StackBuilder {
    specs: Vec<LayerSpec>,
}

impl StackBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn layer(mut self, name: impl Into<String>, kind: LayerKind) -> Self {
        self.specs.push(LayerSpec {
            name: name.into(),
            trainable: true,
            kind,
        });
        self
    }

    pub fn dense(self, name: &str, units: usize) -> Self {
        self.layer(name, LayerKind::Dense { inputs: 0, units })
    }

    pub fn conv1d(self, name: &str, filters: usize, kernel: usize, stride: usize) -> Self {
        self.layer(
            name,
            LayerKind::Conv1d {
                in_channels: 0,
                filters,
                kernel,
                stride,
            },
        )
    }

    pub fn conv2d(self, name: &str, filters: usize, kernel: usize, stride: usize) -> Self {
        self.layer(
            name,
            LayerKind::Conv2d {
                in_channels: 0,
                filters,
                kernel,
                stride,
            },
        )
    }

    pub fn max_pool1d(self, name: &str, pool: usize) -> Self {
        self.layer(name, LayerKind::MaxPool1d { pool })
    }

    pub fn max_pool2d(self, name: &str, pool: usize) -> Self {
        self.layer(name, LayerKind::MaxPool2d { pool })
    }

    pub fn batch_norm(self, name: &str) -> Self {
        self.layer(name, LayerKind::BatchNorm { features: 0 })
    }

    pub fn dropout(self, name: &str, rate: f64) -> Self {
        self.layer(name, LayerKind::Dropout { rate })
    }

    pub fn flatten(self, name: &str) -> Self {
        self.layer(name, LayerKind::Flatten)
    }

    pub fn activation(self, name: &str, function: Activation) -> Self {
        self.layer(name, LayerKind::Activation { function })
    }

    pub fn relu(self, name: &str) -> Self {
        self.activation(name, Activation::Relu)
    }

    pub fn sigmoid(self, name: &str) -> Self {
        self.activation(name, Activation::Sigmoid)
    }

    pub fn softmax(self, name: &str) -> Self {
        self.activation(name, Activation::Softmax)
    }

    pub fn specs(self) -> Vec<LayerSpec> {
        self.specs
    }
}

/// Completes specs by shape inference. Returns the specs and the per-sample
/// output shape.
pub fn infer_stack(input: &[usize], specs: &[LayerSpec]) -> Result<(Vec<LayerSpec>, Vec<usize>)> {
    let mut dims = input.to_vec();
    let mut out = Vec::with_capacity(specs.len());
    for s in specs {
        let (kind, next) = s
            .kind
            .infer(&dims)
            .map_err(|e| Error::Shape(format!("layer `{}`: {e}", s.name)))?;
        out.push(LayerSpec {
            name: s.name.clone(),
            trainable: s.trainable,
            kind,
        });
        dims = next;
    }
    Ok((out, dims))
}

/// Activation applied after the parameterised layer at `i`, if any, before
/// the next parameterised layer.
fn following_activation(specs: &[LayerSpec], i: usize) -> Option<Activation> {
    for s in &specs[i + 1..] {
        match s.kind {
            LayerKind::Activation { function } => return Some(function),
            LayerKind::Dense { .. } | LayerKind::Conv1d { .. } | LayerKind::Conv2d { .. } => {
                return None
            }
            _ => {}
        }
    }
    None
}

/// Fresh parameters: He-uniform before relu, Glorot-uniform otherwise, zero
/// biases, unit batch-norm scale. Each layer draws from a generator seeded by
/// `(seed, layer name)`.
pub fn init_layers<T: Scalar>(specs: &[LayerSpec], seed: u64) -> Vec<Layer<T>> {
    specs
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(ops::mix64(seed, ops::name_hash(&s.name)));
            let fans = match s.kind {
                LayerKind::Dense { inputs, units } => Some((inputs, units)),
                LayerKind::Conv1d {
                    in_channels,
                    filters,
                    kernel,
                    ..
                } => Some((in_channels * kernel, filters * kernel)),
                LayerKind::Conv2d {
                    in_channels,
                    filters,
                    kernel,
                    ..
                } => Some((in_channels * kernel * kernel, filters * kernel * kernel)),
                _ => None,
            };
            let shapes = s.kind.param_shapes();
            let params = match (fans, &s.kind) {
                (Some((fan_in, fan_out)), _) => {
                    let limit = if following_activation(specs, i) == Some(Activation::Relu) {
                        (6.0 / fan_in as f64).sqrt()
                    } else {
                        (6.0 / (fan_in + fan_out) as f64).sqrt()
                    };
                    let n: usize = shapes[0].1.iter().product();
                    let w: Vec<T> = (0..n)
                        .map(|_| T::from_f64(rng.random_range(-limit..limit)))
                        .collect();
                    vec![
                        Tensor::new(shapes[0].1.clone(), w).expect("weight dims"),
                        Tensor::zeros(&shapes[1].1),
                    ]
                }
                (None, LayerKind::BatchNorm { features }) => vec![
                    Tensor::full(&[*features], T::one()),
                    Tensor::zeros(&[*features]),
                ],
                _ => Vec::new(),
            };
            let buffers = match s.kind {
                LayerKind::BatchNorm { features } => vec![
                    Tensor::zeros(&[features]),
                    Tensor::full(&[features], T::one()),
                ],
                _ => Vec::new(),
            };
            Layer {
                spec: s.clone(),
                params,
                buffers,
            }
        })
        .collect()
}

/// One input path of a model: a per-sample input shape and its layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Branch<T: Scalar = f32> {
    pub input_dims: Vec<usize>,
    pub layers: Vec<Layer<T>>,
}

impl<T: Scalar> Branch<T> {
    pub fn build(input_dims: &[usize], specs: &[LayerSpec], seed: u64) -> Result<Self> {
        let (specs, _) = infer_stack(input_dims, specs)?;
        Ok(Self {
            input_dims: input_dims.to_vec(),
            layers: init_layers(&specs, seed),
        })
    }

    /// Per-sample output shape.
    pub fn output_dims(&self) -> Result<Vec<usize>> {
        let specs: Vec<_> = self.layers.iter().map(|l| l.spec.clone()).collect();
        Ok(infer_stack(&self.input_dims, &specs)?.1)
    }
}

/// A sequential network, or two branches joined by concatenation and
/// followed by a shared head.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T: Scalar = f32> {
    branches: Vec<Branch<T>>,
    junction: Option<String>,
    head: Vec<Layer<T>>,
    seed: u64,
    mode: Mode,
    step: u64,
}

/// What a training forward pass recorded.
#[derive(Debug, Clone)]
pub struct Tape<T: Scalar> {
    starts: Vec<usize>,
    branch_caches: Vec<Vec<Cache<T>>>,
    branch_widths: Vec<usize>,
    head_caches: Vec<Cache<T>>,
    input_grads: bool,
}

/// Options for [`Model::forward_tape`].
#[derive(Debug, Clone, Default)]
pub struct TapeOptions {
    /// Stop before a trailing softmax and return logits.
    pub logits: bool,
    /// Also propagate gradients to the model inputs.
    pub input_grads: bool,
    /// Per-branch index of the first layer to run; inputs are then the
    /// activations entering that layer.
    pub starts: Option<Vec<usize>>,
}

/// Result of [`Model::backward`].
#[derive(Debug, Clone)]
pub struct BackwardPass<T: Scalar> {
    pub params: Gradients<T>,
    pub inputs: Vec<Option<Tensor<T>>>,
}

fn run_stack<T: Scalar>(
    layers: &[Layer<T>],
    mut x: Tensor<T>,
    mode: Mode,
    seed: u64,
    step: u64,
    mut caches: Option<&mut Vec<Cache<T>>>,
) -> Result<Tensor<T>> {
    for l in layers {
        let (y, c) = l.forward(&x, mode, seed, step)?;
        if let Some(cs) = caches.as_deref_mut() {
            cs.push(c);
        }
        x = y;
    }
    Ok(x)
}

fn concat_features<T: Scalar>(parts: &[Tensor<T>]) -> Result<Tensor<T>> {
    let batch = parts[0].batch();
    let mut width = 0;
    for p in parts {
        if p.rank() != 2 || p.batch() != batch {
            return Err(Error::Shape(format!(
                "concat needs [batch, features] inputs, got {:?}",
                p.dims()
            )));
        }
        width += p.dims()[1];
    }
    let mut data = Vec::with_capacity(batch * width);
    for r in 0..batch {
        for p in parts {
            data.extend_from_slice(p.row(r));
        }
    }
    Tensor::new(vec![batch, width], data)
}

fn split_features<T: Scalar>(d: &Tensor<T>, widths: &[usize]) -> Vec<Tensor<T>> {
    let batch = d.batch();
    let total: usize = widths.iter().sum();
    let mut offset = 0;
    widths
        .iter()
        .map(|&w| {
            let mut data = Vec::with_capacity(batch * w);
            for r in 0..batch {
                data.extend_from_slice(&d.data()[r * total + offset..r * total + offset + w]);
            }
            offset += w;
            Tensor::new(vec![batch, w], data).expect("split dims")
        })
        .collect()
}

fn backward_stack<T: Scalar>(
    layers: &[Layer<T>],
    caches: &[Cache<T>],
    start: usize,
    mut dy: Tensor<T>,
    want_dx: bool,
    grads: &mut Gradients<T>,
) -> Result<Option<Tensor<T>>> {
    let ran = &layers[start..start + caches.len()];
    for (k, (l, c)) in ran.iter().zip(caches).enumerate().rev() {
        let below_trainable = ran[..k].iter().any(|l| l.trainable());
        let need_dx = below_trainable || want_dx;
        if !l.trainable() && !need_dx {
            return Ok(None);
        }
        let (dx, pgrads) = l.backward(c, &dy, need_dx)?;
        if l.trainable() {
            for (name, g) in l.param_names().into_iter().zip(pgrads) {
                grads.insert(name, g);
            }
        }
        match dx {
            Some(dx) if need_dx => dy = dx,
            _ => return Ok(None),
        }
    }
    Ok(want_dx.then_some(dy))
}

impl<T: Scalar> Model<T> {
    /// Builds a sequential model with fresh parameters.
    pub fn sequential(input_dims: &[usize], specs: &[LayerSpec], seed: u64) -> Result<Self> {
        Self::from_parts(vec![Branch::build(input_dims, specs, seed)?], None, Vec::new(), seed)
    }

    /// Assembles a model from built parts, validating names and shapes.
    /// Two branches require a junction name; one branch forbids it.
    pub fn from_parts(
        branches: Vec<Branch<T>>,
        junction: Option<String>,
        head: Vec<Layer<T>>,
        seed: u64,
    ) -> Result<Self> {
        match (branches.len(), &junction) {
            (1, None) | (2, Some(_)) => {}
            (n, j) => {
                return Err(Error::Shape(format!(
                    "{n} branches with junction {j:?}: need 1 branch, or 2 with a junction"
                )))
            }
        }
        let m = Self {
            branches,
            junction,
            head,
            seed,
            mode: Mode::Train,
            step: 0,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<()> {
        let mut names = BTreeSet::new();
        let junction = self.junction.iter().map(|s| s.as_str());
        for name in self.layers().map(|l| l.name()).chain(junction) {
            if !names.insert(name.to_string()) {
                return Err(Error::Shape(format!("duplicate layer name `{name}`")));
            }
        }
        for l in self.layers() {
            let expect = l.kind().param_shapes();
            let ok = expect.len() == l.params.len()
                && expect.iter().zip(&l.params).all(|((_, d), p)| d.as_slice() == p.dims())
                && l.kind().buffer_shapes().len() == l.buffers.len();
            if !ok {
                return Err(Error::Shape(format!(
                    "parameters of layer `{}` do not match its spec",
                    l.name()
                )));
            }
        }
        let mut widths = Vec::new();
        for b in &self.branches {
            let (specs, out) = infer_stack(&b.input_dims, &b.layers.iter().map(|l| l.spec.clone()).collect::<Vec<_>>())?;
            if specs.iter().zip(&b.layers).any(|(s, l)| s.kind != l.spec.kind) {
                return Err(Error::Shape("layer sizes do not match the branch input".into()));
            }
            if self.junction.is_some() && out.len() != 1 {
                return Err(Error::Shape(format!(
                    "fusion branch must emit a feature vector, got per-sample shape {out:?}"
                )));
            }
            widths.push(out);
        }
        if !self.head.is_empty() || self.junction.is_some() {
            let input = if self.junction.is_some() {
                vec![widths.iter().map(|w| w[0]).sum()]
            } else {
                widths[0].clone()
            };
            let (specs, _) = infer_stack(&input, &self.head.iter().map(|l| l.spec.clone()).collect::<Vec<_>>())?;
            if specs.iter().zip(&self.head).any(|(s, l)| s.kind != l.spec.kind) {
                return Err(Error::Shape("head sizes do not match the junction width".into()));
            }
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub(crate) fn advance_step(&mut self) {
        self.step += 1;
    }

    pub fn branches(&self) -> &[Branch<T>] {
        &self.branches
    }

    pub fn junction(&self) -> Option<&str> {
        self.junction.as_deref()
    }

    pub fn head(&self) -> &[Layer<T>] {
        &self.head
    }

    pub fn input_dims(&self) -> Vec<Vec<usize>> {
        self.branches.iter().map(|b| b.input_dims.clone()).collect()
    }

    /// All layers: branch 0, branch 1, then the head.
    pub fn layers(&self) -> impl Iterator<Item = &Layer<T>> {
        self.branches
            .iter()
            .flat_map(|b| b.layers.iter())
            .chain(self.head.iter())
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer<T>> {
        self.branches
            .iter_mut()
            .flat_map(|b| b.layers.iter_mut())
            .chain(self.head.iter_mut())
    }

    pub fn layer(&self, name: &str) -> Option<&Layer<T>> {
        self.layers().find(|l| l.name() == name)
    }

    pub fn set_trainable(&mut self, name: &str, trainable: bool) -> Result<()> {
        let l = self
            .layers_mut()
            .find(|l| l.name() == name)
            .ok_or_else(|| Error::Plan(format!("no layer named `{name}`")))?;
        l.spec.trainable = trainable;
        Ok(())
    }

    /// Width of the final output.
    pub fn output_width(&self) -> Result<usize> {
        let dims = if self.junction.is_none() && self.head.is_empty() {
            self.branches[0].output_dims()?
        } else {
            let input = if self.junction.is_some() {
                let mut w = 0;
                for b in &self.branches {
                    w += b.output_dims()?[0];
                }
                vec![w]
            } else {
                self.branches[0].output_dims()?
            };
            infer_stack(&input, &self.head.iter().map(|l| l.spec.clone()).collect::<Vec<_>>())?.1
        };
        Ok(dims.iter().product())
    }

    /// `(name, tensor)` for every parameter, in layer order.
    pub fn params(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers()
            .flat_map(|l| l.param_names().into_iter().zip(l.params.iter()))
            .collect()
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        self.layers()
            .flat_map(|l| l.buffer_names().into_iter().zip(l.buffers.iter()))
            .collect()
    }

    fn tensor_slot(&mut self, full: &str) -> Option<&mut Tensor<T>> {
        let (layer, suffix) = full.rsplit_once('.')?;
        let l = self.layers_mut().find(|l| l.name() == layer)?;
        if let Some(i) = l.kind().param_shapes().iter().position(|(s, _)| *s == suffix) {
            return l.params.get_mut(i);
        }
        let i = l.kind().buffer_shapes().iter().position(|(s, _)| *s == suffix)?;
        l.buffers.get_mut(i)
    }

    pub fn param(&self, full: &str) -> Option<&Tensor<T>> {
        self.params()
            .into_iter()
            .chain(self.buffers())
            .find(|(n, _)| n == full)
            .map(|(_, t)| t)
    }

    /// Replaces a parameter or buffer, keeping its shape.
    pub fn set_tensor(&mut self, full: &str, value: Tensor<T>) -> Result<()> {
        let slot = self
            .tensor_slot(full)
            .ok_or_else(|| Error::Format(format!("model has no tensor `{full}`")))?;
        if slot.dims() != value.dims() {
            return Err(Error::Shape(format!(
                "tensor `{full}`: expected {:?}, got {:?}",
                slot.dims(),
                value.dims()
            )));
        }
        *slot = value;
        Ok(())
    }

    pub(crate) fn param_mut(&mut self, full: &str) -> Option<&mut Tensor<T>> {
        self.tensor_slot(full)
    }

    pub(crate) fn is_trainable_param(&self, full: &str) -> bool {
        full.rsplit_once('.')
            .and_then(|(layer, _)| self.layer(layer))
            .is_some_and(|l| l.trainable())
    }

    /// Converts every tensor to another element type.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let cast_layer = |l: &Layer<T>| Layer {
            spec: l.spec.clone(),
            params: l.params.iter().map(|p| p.cast()).collect(),
            buffers: l.buffers.iter().map(|p| p.cast()).collect(),
        };
        Model {
            branches: self
                .branches
                .iter()
                .map(|b| Branch {
                    input_dims: b.input_dims.clone(),
                    layers: b.layers.iter().map(cast_layer).collect(),
                })
                .collect(),
            junction: self.junction.clone(),
            head: self.head.iter().map(cast_layer).collect(),
            seed: self.seed,
            mode: self.mode,
            step: self.step,
        }
    }

    fn check_inputs(&self, inputs: &[Tensor<T>], starts: Option<&[usize]>) -> Result<()> {
        if inputs.len() != self.branches.len() {
            return Err(Error::Shape(format!(
                "model has {} inputs, got {}",
                self.branches.len(),
                inputs.len()
            )));
        }
        let batch = inputs[0].batch();
        for (i, (x, b)) in inputs.iter().zip(&self.branches).enumerate() {
            if x.batch() != batch {
                return Err(Error::Shape("inputs disagree on batch size".into()));
            }
            let start = starts.map_or(0, |s| s[i]);
            let expect = if start == 0 {
                b.input_dims.clone()
            } else {
                let specs: Vec<_> = b.layers[..start].iter().map(|l| l.spec.clone()).collect();
                infer_stack(&b.input_dims, &specs)?.1
            };
            if x.dims().get(1..) != Some(expect.as_slice()) {
                return Err(Error::Shape(format!(
                    "input {i}: expected [batch, {}], got {:?}",
                    expect.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", "),
                    x.dims()
                )));
            }
        }
        Ok(())
    }

    fn final_is_softmax(&self) -> bool {
        let last = if self.head.is_empty() && self.junction.is_none() {
            self.branches[0].layers.last()
        } else {
            self.head.last()
        };
        last.is_some_and(|l| {
            matches!(
                l.kind(),
                LayerKind::Activation {
                    function: Activation::Softmax
                }
            )
        })
    }

    /// Full forward pass without recording anything.
    pub fn forward(&self, inputs: &[Tensor<T>], mode: Mode) -> Result<Tensor<T>> {
        self.check_inputs(inputs, None)?;
        let feats = self
            .branches
            .iter()
            .zip(inputs)
            .map(|(b, x)| run_stack(&b.layers, x.clone(), mode, self.seed, self.step, None))
            .collect::<Result<Vec<_>>>()?;
        let x = if self.junction.is_some() {
            concat_features(&feats)?
        } else {
            feats.into_iter().next().expect("one branch")
        };
        run_stack(&self.head, x, mode, self.seed, self.step, None)
    }

    /// Evaluation-mode outputs, computed in chunks.
    pub fn predict_proba(&self, inputs: &[Tensor<T>]) -> Result<Tensor<T>> {
        let n = inputs[0].batch();
        let mut rows = Vec::new();
        let mut width = 0;
        for lo in (0..n).step_by(EVAL_CHUNK) {
            let idx: Vec<usize> = (lo..(lo + EVAL_CHUNK).min(n)).collect();
            let part: Vec<Tensor<T>> = inputs.iter().map(|x| x.select(&idx)).collect();
            let y = self.forward(&part, Mode::Eval)?;
            width = y.sample_len();
            rows.extend_from_slice(y.data());
        }
        Tensor::new(vec![n, width], rows)
    }

    /// Arg-max class per sample in evaluation mode.
    pub fn predict(&self, inputs: &[Tensor<T>]) -> Result<Vec<usize>> {
        let p = self.predict_proba(inputs)?;
        Ok((0..p.batch())
            .map(|r| {
                let row = p.row(r);
                (0..row.len())
                    .fold((0, T::neg_infinity()), |(bi, bv), i| {
                        if row[i] > bv {
                            (i, row[i])
                        } else {
                            (bi, bv)
                        }
                    })
                    .0
            })
            .collect())
    }

    /// Evaluation-mode activations leaving layer `name` of `branch`.
    pub fn layer_output(&self, inputs: &[Tensor<T>], branch: usize, name: &str) -> Result<Tensor<T>> {
        let b = &self.branches[branch];
        let end = b
            .layers
            .iter()
            .position(|l| l.name() == name)
            .ok_or_else(|| Error::Plan(format!("branch {branch} has no layer `{name}`")))?;
        run_stack(
            &b.layers[..=end],
            inputs[branch].clone(),
            Mode::Eval,
            self.seed,
            self.step,
            None,
        )
    }

    /// Index of the first trainable layer in each branch.
    pub fn frozen_prefix(&self) -> Vec<usize> {
        self.branches
            .iter()
            .map(|b| {
                b.layers
                    .iter()
                    .position(|l| l.trainable())
                    .unwrap_or(b.layers.len())
            })
            .collect()
    }

    /// Evaluation-mode activations entering layer `starts[i]` of each branch.
    pub fn forward_prefix(&self, inputs: &[Tensor<T>], starts: &[usize]) -> Result<Vec<Tensor<T>>> {
        self.check_inputs(inputs, None)?;
        self.branches
            .iter()
            .zip(inputs)
            .zip(starts)
            .map(|((b, x), &s)| {
                let n = x.batch();
                let mut parts = Vec::new();
                let mut dims = Vec::new();
                for lo in (0..n).step_by(EVAL_CHUNK) {
                    let idx: Vec<usize> = (lo..(lo + EVAL_CHUNK).min(n)).collect();
                    let y = run_stack(&b.layers[..s], x.select(&idx), Mode::Eval, self.seed, self.step, None)?;
                    dims = y.dims().to_vec();
                    parts.extend_from_slice(y.data());
                }
                dims[0] = n;
                Tensor::new(dims, parts)
            })
            .collect()
    }

    /// Training-mode forward pass that records what backward needs. Does not
    /// touch running statistics; see [`Model::absorb`].
    pub fn forward_tape(&self, inputs: &[Tensor<T>], opts: &TapeOptions) -> Result<(Tensor<T>, Tape<T>)> {
        if self.mode != Mode::Train {
            return Err(Error::State("model is in eval mode; switch to train mode first".into()));
        }
        let starts = opts.starts.clone().unwrap_or_else(|| vec![0; self.branches.len()]);
        self.check_inputs(inputs, Some(&starts))?;
        let skip = opts.logits && self.final_is_softmax();
        let chain = self.junction.is_none() && self.head.is_empty();

        let mut branch_caches = Vec::with_capacity(self.branches.len());
        let mut feats = Vec::with_capacity(self.branches.len());
        for (i, (b, x)) in self.branches.iter().zip(inputs).enumerate() {
            let end = if chain && skip { b.layers.len() - 1 } else { b.layers.len() };
            let layers = &b.layers[starts[i]..end.max(starts[i])];
            let mut caches = Vec::with_capacity(layers.len());
            feats.push(run_stack(layers, x.clone(), Mode::Train, self.seed, self.step, Some(&mut caches))?);
            branch_caches.push(caches);
        }
        let branch_widths = feats.iter().map(|f| f.sample_len()).collect();
        let x = if self.junction.is_some() {
            concat_features(&feats)?
        } else {
            feats.pop().expect("one branch")
        };
        let head_end = if !chain && skip { self.head.len() - 1 } else { self.head.len() };
        let mut head_caches = Vec::with_capacity(head_end);
        let y = run_stack(&self.head[..head_end], x, Mode::Train, self.seed, self.step, Some(&mut head_caches))?;
        Ok((
            y,
            Tape {
                starts,
                branch_caches,
                branch_widths,
                head_caches,
                input_grads: opts.input_grads,
            },
        ))
    }

    /// Applies batch-norm running-statistic updates recorded on `tape`.
    pub fn absorb(&mut self, tape: &Tape<T>) {
        for ((b, caches), &start) in self.branches.iter_mut().zip(&tape.branch_caches).zip(&tape.starts) {
            for (l, c) in b.layers.iter_mut().skip(start).zip(caches) {
                l.absorb(c);
            }
        }
        for (l, c) in self.head.iter_mut().zip(&tape.head_caches) {
            l.absorb(c);
        }
    }

    /// Reverse pass from the gradient of whatever [`Model::forward_tape`] returned.
    pub fn backward(&self, tape: &Tape<T>, d_out: &Tensor<T>) -> Result<BackwardPass<T>> {
        let mut grads = Gradients::new();
        let branch_trainable = self
            .branches
            .iter()
            .zip(&tape.starts)
            .any(|(b, &s)| b.layers[s..].iter().any(|l| l.trainable()));
        let want_head_dx = branch_trainable || tape.input_grads;
        let head_ran = &self.head[..tape.head_caches.len()];
        let d_junction = if head_ran.is_empty() {
            Some(d_out.clone())
        } else {
            backward_stack(head_ran, &tape.head_caches, 0, d_out.clone(), want_head_dx, &mut grads)?
        };
        let mut inputs = vec![None; self.branches.len()];
        if let Some(dj) = d_junction {
            let parts = if self.junction.is_some() {
                split_features(&dj, &tape.branch_widths)
            } else {
                vec![dj]
            };
            for (i, (b, d)) in self.branches.iter().zip(parts).enumerate() {
                inputs[i] = backward_stack(
                    &b.layers,
                    &tape.branch_caches[i],
                    tape.starts[i],
                    d,
                    tape.input_grads,
                    &mut grads,
                )?;
            }
        }
        Ok(BackwardPass { params: grads, inputs })
    }

    /// Mean cross-entropy loss and gradients for every trainable parameter.
    pub fn backprop(&self, inputs: &[Tensor<T>], targets: &[usize]) -> Result<(T, Gradients<T>)> {
        self.backprop_from(inputs, targets, None).map(|(l, g, _)| (l, g))
    }

    /// [`Model::backprop`] starting at per-branch layer offsets; also returns
    /// the tape for running-statistic updates and the logits.
    pub(crate) fn backprop_from(
        &self,
        inputs: &[Tensor<T>],
        targets: &[usize],
        starts: Option<Vec<usize>>,
    ) -> Result<(T, Gradients<T>, (Tape<T>, Tensor<T>))> {
        if self.mode != Mode::Train {
            return Err(Error::State("cannot train a model in eval mode".into()));
        }
        let opts = TapeOptions {
            logits: true,
            input_grads: false,
            starts,
        };
        let (logits, tape) = self.forward_tape(inputs, &opts)?;
        let (loss, dlogits) = ops::softmax_xent(&logits, targets)?;
        let pass = self.backward(&tape, &dlogits)?;
        Ok((loss, pass.params, (tape, logits)))
    }
}
