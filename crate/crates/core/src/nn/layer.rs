use serde::{Deserialize, Serialize};

use super::ops::{self, Activation, BatchNormCache, Mode};
use super::tensor::{Scalar, Tensor};
use crate::{Error, Result};

/// Layer type and shape parameters. Input-derived sizes (`inputs`,
/// `in_channels`, `features`) are filled in by shape inference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Dense {
        inputs: usize,
        units: usize,
    },
    Conv1d {
        in_channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
    },
    Conv2d {
        in_channels: usize,
        filters: usize,
        kernel: usize,
        stride: usize,
    },
    MaxPool1d {
        pool: usize,
    },
    MaxPool2d {
        pool: usize,
    },
    BatchNorm {
        features: usize,
    },
    Dropout {
        rate: f64,
    },
    Flatten,
    /// Joins two branch feature vectors; only valid as a fusion junction.
    Concat,
    Activation {
        function: Activation,
    },
}

impl LayerKind {
    pub fn has_params(&self) -> bool {
        matches!(
            self,
            LayerKind::Dense { .. }
                | LayerKind::Conv1d { .. }
                | LayerKind::Conv2d { .. }
                | LayerKind::BatchNorm { .. }
        )
    }

    /// Parameter suffixes and shapes, in storage order.
    pub fn param_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerKind::Dense { inputs, units } => {
                vec![("weight", vec![inputs, units]), ("bias", vec![units])]
            }
            LayerKind::Conv1d {
                in_channels,
                filters,
                kernel,
                ..
            } => vec![
                ("weight", vec![filters, in_channels, kernel]),
                ("bias", vec![filters]),
            ],
            LayerKind::Conv2d {
                in_channels,
                filters,
                kernel,
                ..
            } => vec![
                ("weight", vec![filters, in_channels, kernel, kernel]),
                ("bias", vec![filters]),
            ],
            LayerKind::BatchNorm { features } => {
                vec![("gamma", vec![features]), ("beta", vec![features])]
            }
            _ => Vec::new(),
        }
    }

    /// Non-trainable state saved with the parameters.
    pub fn buffer_shapes(&self) -> Vec<(&'static str, Vec<usize>)> {
        match *self {
            LayerKind::BatchNorm { features } => vec![
                ("running_mean", vec![features]),
                ("running_var", vec![features]),
            ],
            _ => Vec::new(),
        }
    }

    /// Fills input-derived sizes from the per-sample input shape and returns
    /// the completed kind with its per-sample output shape.
    pub fn infer(&self, input: &[usize]) -> Result<(LayerKind, Vec<usize>)> {
        let bad = |msg: String| Err(Error::Shape(msg));
        match *self {
            LayerKind::Dense { units, .. } => {
                if input.len() != 1 {
                    return bad(format!("dense expects a flat input, got {input:?}"));
                }
                Ok((
                    LayerKind::Dense {
                        inputs: input[0],
                        units,
                    },
                    vec![units],
                ))
            }
            LayerKind::Conv1d {
                filters,
                kernel,
                stride,
                ..
            } => {
                if input.len() != 2 {
                    return bad(format!("conv1d expects [channels, length], got {input:?}"));
                }
                let Some(len) = ops::conv_out_len(input[1], kernel, stride) else {
                    return bad(format!(
                        "conv1d kernel {kernel} does not fit input length {}",
                        input[1]
                    ));
                };
                Ok((
                    LayerKind::Conv1d {
                        in_channels: input[0],
                        filters,
                        kernel,
                        stride,
                    },
                    vec![filters, len],
                ))
            }
            LayerKind::Conv2d {
                filters,
                kernel,
                stride,
                ..
            } => {
                if input.len() != 3 {
                    return bad(format!("conv2d expects [channels, h, w], got {input:?}"));
                }
                let (Some(h), Some(w)) = (
                    ops::conv_out_len(input[1], kernel, stride),
                    ops::conv_out_len(input[2], kernel, stride),
                ) else {
                    return bad(format!(
                        "conv2d kernel {kernel} does not fit input {:?}",
                        &input[1..]
                    ));
                };
                Ok((
                    LayerKind::Conv2d {
                        in_channels: input[0],
                        filters,
                        kernel,
                        stride,
                    },
                    vec![filters, h, w],
                ))
            }
            LayerKind::MaxPool1d { pool } => {
                if input.len() != 2 || pool == 0 || input[1] < pool {
                    return bad(format!("maxpool1d({pool}) cannot pool {input:?}"));
                }
                Ok((self.clone(), vec![input[0], input[1] / pool]))
            }
            LayerKind::MaxPool2d { pool } => {
                if input.len() != 3 || pool == 0 || input[1] < pool || input[2] < pool {
                    return bad(format!("maxpool2d({pool}) cannot pool {input:?}"));
                }
                Ok((self.clone(), vec![input[0], input[1] / pool, input[2] / pool]))
            }
            LayerKind::BatchNorm { .. } => {
                if input.is_empty() {
                    return bad("batch norm needs at least one feature axis".into());
                }
                Ok((
                    LayerKind::BatchNorm { features: input[0] },
                    input.to_vec(),
                ))
            }
            LayerKind::Dropout { rate } => {
                if !(0.0..1.0).contains(&rate) {
                    return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
                }
                Ok((self.clone(), input.to_vec()))
            }
            LayerKind::Flatten => Ok((self.clone(), vec![input.iter().product()])),
            LayerKind::Activation { .. } => Ok((self.clone(), input.to_vec())),
            LayerKind::Concat => bad("concat is only valid as a fusion junction".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub trainable: bool,
    #[serde(flatten)]
    pub kind: LayerKind,
}

/// Whatever a training forward pass must remember for the backward pass.
#[derive(Debug, Clone)]
pub(crate) enum Cache<T> {
    None,
    Input(Tensor<T>),
    Activation { input: Tensor<T>, output: Tensor<T> },
    Pool { in_dims: Vec<usize>, argmax: Vec<usize> },
    Norm(BatchNormCache<T>),
    Mask(Option<Vec<T>>),
    Shape(Vec<usize>),
}

/// A named layer with its parameters and buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T: Scalar = f32> {
    pub spec: LayerSpec,
    pub params: Vec<Tensor<T>>,
    pub buffers: Vec<Tensor<T>>,
}

impl<T: Scalar> Layer<T> {
    pub fn name(&self) -> &str {
        &self.spec.name
    }

    pub fn kind(&self) -> &LayerKind {
        &self.spec.kind
    }

    pub fn trainable(&self) -> bool {
        self.spec.trainable
    }

    pub fn param_names(&self) -> Vec<String> {
        self.spec
            .kind
            .param_shapes()
            .into_iter()
            .map(|(s, _)| format!("{}.{s}", self.spec.name))
            .collect()
    }

    pub fn buffer_names(&self) -> Vec<String> {
        self.spec
            .kind
            .buffer_shapes()
            .into_iter()
            .map(|(s, _)| format!("{}.{s}", self.spec.name))
            .collect()
    }

    /// Frozen layers always behave as in evaluation.
    fn effective_mode(&self, mode: Mode) -> Mode {
        if self.spec.trainable {
            mode
        } else {
            Mode::Eval
        }
    }

    /// Forward pass. `salt` and `step` seed dropout draws.
    pub(crate) fn forward(
        &self,
        x: &Tensor<T>,
        mode: Mode,
        seed: u64,
        step: u64,
    ) -> Result<(Tensor<T>, Cache<T>)> {
        let keep = mode == Mode::Train;
        let mode = self.effective_mode(mode);
        match &self.spec.kind {
            LayerKind::Dense { .. } => {
                let y = ops::affine(x, &self.params[0], &self.params[1])?;
                Ok((y, if keep { Cache::Input(x.clone()) } else { Cache::None }))
            }
            LayerKind::Conv1d { stride, .. } | LayerKind::Conv2d { stride, .. } => {
                let dim = if matches!(self.spec.kind, LayerKind::Conv1d { .. }) { 1 } else { 2 };
                let y = ops::conv_forward(x, &self.params[0], Some(&self.params[1]), *stride, dim)?;
                Ok((y, if keep { Cache::Input(x.clone()) } else { Cache::None }))
            }
            LayerKind::MaxPool1d { pool } | LayerKind::MaxPool2d { pool } => {
                let dim = if matches!(self.spec.kind, LayerKind::MaxPool1d { .. }) { 1 } else { 2 };
                let (y, argmax) = ops::maxpool_forward(x, *pool, dim)?;
                let cache = if keep {
                    Cache::Pool {
                        in_dims: x.dims().to_vec(),
                        argmax,
                    }
                } else {
                    Cache::None
                };
                Ok((y, cache))
            }
            LayerKind::BatchNorm { .. } => {
                let (y, c) = ops::batchnorm_forward(
                    x,
                    &self.params[0],
                    &self.params[1],
                    &self.buffers[0],
                    &self.buffers[1],
                    mode,
                )?;
                Ok((y, if keep { Cache::Norm(c) } else { Cache::None }))
            }
            LayerKind::Dropout { rate } => {
                let mut rng = ops::dropout_rng(seed, step, ops::name_hash(&self.spec.name));
                let (y, mask) = ops::dropout_forward(x, *rate, mode, &mut rng)?;
                Ok((y, if keep { Cache::Mask(mask) } else { Cache::None }))
            }
            LayerKind::Flatten => {
                let dims = vec![x.batch(), x.sample_len()];
                let y = x.clone().reshape(dims)?;
                Ok((y, if keep { Cache::Shape(x.dims().to_vec()) } else { Cache::None }))
            }
            LayerKind::Activation { function } => {
                let y = ops::activate(x, *function);
                let cache = if keep {
                    Cache::Activation {
                        input: x.clone(),
                        output: y.clone(),
                    }
                } else {
                    Cache::None
                };
                Ok((y, cache))
            }
            LayerKind::Concat => Err(Error::Shape(
                "concat is only valid as a fusion junction".into(),
            )),
        }
    }

    /// Runs batch-norm running-statistic updates recorded in `cache`.
    pub(crate) fn absorb(&mut self, cache: &Cache<T>) {
        if let (LayerKind::BatchNorm { .. }, Cache::Norm(c)) = (&self.spec.kind, cache) {
            if c.batch_stats {
                let (mean, var) = self.buffers.split_at_mut(1);
                ops::batchnorm_update_running(&mut mean[0], &mut var[0], c);
            }
        }
    }

    /// Backward pass returning the input gradient (if requested) and one
    /// gradient per parameter.
    pub(crate) fn backward(
        &self,
        cache: &Cache<T>,
        dy: &Tensor<T>,
        need_dx: bool,
    ) -> Result<(Option<Tensor<T>>, Vec<Tensor<T>>)> {
        let missing = || Error::State(format!("no forward cache for layer `{}`", self.spec.name));
        match (&self.spec.kind, cache) {
            (LayerKind::Dense { .. }, Cache::Input(x)) => {
                let (dx, dw, db) = ops::affine_backward(x, &self.params[0], dy, need_dx);
                Ok((dx, vec![dw, db]))
            }
            (LayerKind::Conv1d { stride, .. }, Cache::Input(x)) => {
                let (dx, dw, db) = ops::conv_backward(x, &self.params[0], dy, *stride, 1, need_dx)?;
                Ok((dx, vec![dw, db]))
            }
            (LayerKind::Conv2d { stride, .. }, Cache::Input(x)) => {
                let (dx, dw, db) = ops::conv_backward(x, &self.params[0], dy, *stride, 2, need_dx)?;
                Ok((dx, vec![dw, db]))
            }
            (LayerKind::MaxPool1d { .. } | LayerKind::MaxPool2d { .. }, Cache::Pool { in_dims, argmax }) => {
                Ok((Some(ops::maxpool_backward(in_dims, argmax, dy)), Vec::new()))
            }
            (LayerKind::BatchNorm { .. }, Cache::Norm(c)) => {
                let (dx, dg, db) = ops::batchnorm_backward(c, &self.params[0], dy)?;
                Ok((Some(dx), vec![dg, db]))
            }
            (LayerKind::Dropout { .. }, Cache::Mask(mask)) => {
                let mut dx = dy.clone();
                if let Some(m) = mask {
                    for (d, &k) in dx.data_mut().iter_mut().zip(m) {
                        *d = *d * k;
                    }
                }
                Ok((Some(dx), Vec::new()))
            }
            (LayerKind::Flatten, Cache::Shape(dims)) => {
                Ok((Some(dy.clone().reshape(dims.clone())?), Vec::new()))
            }
            (LayerKind::Activation { function }, Cache::Activation { input, output }) => Ok((
                Some(ops::activate_backward(*function, input, output, dy)),
                Vec::new(),
            )),
            _ => Err(missing()),
        }
    }
}
