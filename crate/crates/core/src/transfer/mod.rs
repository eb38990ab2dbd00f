//! Model architectures and the two transfer protocols: head replacement on a
//! pretrained 1D trunk, and two-branch fusion of an image trunk with a raw
//! signal trunk.

pub mod tasks;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::encode::EncodedWindow;
use crate::eval::{score, EvalReport};
use crate::nn::model::{infer_stack, init_layers};
use crate::nn::{
    load_checkpoint, train, Branch, Dataset, EpochStats, Layer, LayerKind, LayerSpec, Model, Scalar,
    StackBuilder, Tensor, TrainConfig,
};
use crate::series::Window;
use crate::{Error, Result};

/// Name of the fusion junction.
pub const JUNCTION: &str = "concat";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

impl ConvBlock {
    pub fn new(filters: usize, kernel: usize) -> Self {
        Self {
            filters,
            kernel,
            stride: 1,
        }
    }
}

/// Convolutional classifier layout shared by the 1D and 2D builders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub conv_blocks: Vec<ConvBlock>,
    pub pool: usize,
    pub batch_norm: bool,
    pub dropout_rate: f64,
    /// Widths of the relu dense layers between the trunk and the output.
    pub dense: Vec<usize>,
    pub n_classes: usize,
}

/// The 1D CNN over `[channels, window]` inputs.
pub type ArchSpec1D = ArchSpec;

impl ArchSpec {
    /// Two conv blocks (32 filters k=7, 64 filters k=5), pool 2, one dense
    /// layer of 64.
    pub fn default_1d(n_classes: usize) -> Self {
        Self {
            conv_blocks: vec![ConvBlock::new(32, 7), ConvBlock::new(64, 5)],
            pool: 2,
            batch_norm: true,
            dropout_rate: 0.5,
            dense: vec![64],
            n_classes,
        }
    }

    /// A small image trunk: two conv blocks (8 filters k=3, 16 filters k=3),
    /// pool 2, one dense layer of 32.
    pub fn default_2d(n_classes: usize) -> Self {
        Self {
            conv_blocks: vec![ConvBlock::new(8, 3), ConvBlock::new(16, 3)],
            pool: 2,
            batch_norm: true,
            dropout_rate: 0.25,
            dense: vec![32],
            n_classes,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config(format!("n_classes must be >= 2, got {}", self.n_classes)));
        }
        if self.conv_blocks.iter().any(|b| b.filters == 0 || b.kernel == 0 || b.stride == 0) {
            return Err(Error::Config("conv blocks need positive filters, kernel and stride".into()));
        }
        if self.dense.contains(&0) {
            return Err(Error::Config("dense widths must be positive".into()));
        }
        Ok(())
    }

    /// Layer specs. Each block is conv, batch norm, relu, dropout, max pool;
    /// dropout sits before pooling.
    pub fn layer_specs(&self, dim: usize) -> Result<Vec<LayerSpec>> {
        self.validate()?;
        let mut b = StackBuilder::new();
        for (i, blk) in self.conv_blocks.iter().enumerate() {
            let k = i + 1;
            b = if dim == 1 {
                b.conv1d(&format!("conv{k}"), blk.filters, blk.kernel, blk.stride)
            } else {
                b.conv2d(&format!("conv{k}"), blk.filters, blk.kernel, blk.stride)
            };
            if self.batch_norm {
                b = b.batch_norm(&format!("bn{k}"));
            }
            b = b.relu(&format!("relu{k}"));
            if self.dropout_rate > 0.0 {
                b = b.dropout(&format!("drop{k}"), self.dropout_rate);
            }
            if self.pool > 1 {
                b = if dim == 1 {
                    b.max_pool1d(&format!("pool{k}"), self.pool)
                } else {
                    b.max_pool2d(&format!("pool{k}"), self.pool)
                };
            }
        }
        b = b.flatten("flatten");
        for (i, &w) in self.dense.iter().enumerate() {
            b = b.dense(&format!("fc{}", i + 1), w).relu(&format!("fc{}_relu", i + 1));
        }
        Ok(b.dense("out", self.n_classes).softmax("prob").specs())
    }
}

/// Builds the 1D CNN for `[channels, window]` inputs.
pub fn build_cnn1d<T: Scalar>(spec: &ArchSpec1D, input: [usize; 2], seed: u64) -> Result<Model<T>> {
    Model::sequential(&input, &spec.layer_specs(1)?, seed)
}

/// Builds the 2D CNN for `[planes, n, n]` inputs.
pub fn build_cnn2d<T: Scalar>(spec: &ArchSpec, input: [usize; 3], seed: u64) -> Result<Model<T>> {
    Model::sequential(&input, &spec.layer_specs(2)?, seed)
}

/// Index of the classification layer: the last dense layer.
fn head_start<T: Scalar>(layers: &[Layer<T>]) -> Option<usize> {
    layers.iter().rposition(|l| matches!(l.kind(), LayerKind::Dense { .. }))
}

/// Layers of a sequential model without its classification layer.
pub fn trunk_layers<T: Scalar>(model: &Model<T>) -> Result<Vec<Layer<T>>> {
    if model.branches().len() != 1 || !model.head().is_empty() {
        return Err(Error::Plan("transfer needs a sequential base model".into()));
    }
    let layers = &model.branches()[0].layers;
    let cut = head_start(layers).ok_or_else(|| Error::Plan("base model has no dense output layer".into()))?;
    Ok(layers[..cut].to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frozen {
    AllButHead,
    /// Freeze this many leading trunk layers.
    Layers(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferPlan {
    pub base_checkpoint: PathBuf,
    pub frozen: Frozen,
    /// Relu dense widths of the new head, before the softmax output.
    pub new_head: Vec<usize>,
    pub n_classes_target: usize,
    pub seed: u64,
}

/// Default widths of the relu layers added on top of a transferred trunk.
pub const DEFAULT_NEW_HEAD: [usize; 1] = [32];

/// Loads the base checkpoint and replaces its classification layer.
pub fn transfer_head(plan: &TransferPlan) -> Result<Model<f32>> {
    let (base, _) = load_checkpoint(&plan.base_checkpoint)?;
    transfer_from(&base, plan.frozen, &plan.new_head, plan.n_classes_target, plan.seed)
}

/// Copies the trunk of `base`, freezes it per `frozen`, and appends fresh relu
/// dense layers and a softmax output of `n_classes` units.
pub fn transfer_from<T: Scalar>(
    base: &Model<T>,
    frozen: Frozen,
    new_head: &[usize],
    n_classes: usize,
    seed: u64,
) -> Result<Model<T>> {
    if n_classes < 2 {
        return Err(Error::Config(format!("target needs >= 2 classes, got {n_classes}")));
    }
    let mut trunk = trunk_layers(base)?;
    if trunk.is_empty() {
        return Err(Error::Plan("base model has no layers below its output".into()));
    }
    let n_frozen = match frozen {
        Frozen::AllButHead => trunk.len(),
        Frozen::Layers(k) if k <= trunk.len() => k,
        Frozen::Layers(k) => {
            return Err(Error::Plan(format!(
                "cannot freeze {k} layers of a {}-layer trunk",
                trunk.len()
            )))
        }
    };
    for (i, l) in trunk.iter_mut().enumerate() {
        l.spec.trainable = i >= n_frozen;
    }
    let input = base.branches()[0].input_dims.clone();
    let trunk_specs: Vec<_> = trunk.iter().map(|l| l.spec.clone()).collect();
    let (_, mut feat) = infer_stack(&input, &trunk_specs)?;
    let mut b = StackBuilder::new();
    if feat.len() != 1 {
        b = b.flatten("tl_flatten");
        feat = vec![feat.iter().product()];
    }
    for (i, &w) in new_head.iter().enumerate() {
        b = b.dense(&format!("tl_fc{}", i + 1), w).relu(&format!("tl_fc{}_relu", i + 1));
    }
    let (head_specs, _) = infer_stack(&feat, &b.dense("tl_out", n_classes).softmax("tl_prob").specs())?;
    trunk.extend(init_layers::<T>(&head_specs, seed));
    Model::from_parts(
        vec![Branch {
            input_dims: input,
            layers: trunk,
        }],
        None,
        Vec::new(),
        seed,
    )
}

/// Trunk of `model` as a fusion branch, layer names prefixed.
pub fn trunk_branch<T: Scalar>(model: &Model<T>, prefix: &str, frozen: bool) -> Result<Branch<T>> {
    let mut layers = trunk_layers(model)?;
    for l in &mut layers {
        l.spec.name = format!("{prefix}{}", l.spec.name);
        if frozen {
            l.spec.trainable = false;
        }
    }
    Ok(Branch {
        input_dims: model.branches()[0].input_dims.clone(),
        layers,
    })
}

/// The two-branch model: image trunk and raw-signal trunk joined by
/// concatenation, then relu dense layers and a softmax output.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionSpec<T: Scalar = f32> {
    pub branch_2d: Branch<T>,
    pub branch_1d: Branch<T>,
    pub head: Vec<usize>,
    pub n_classes: usize,
    pub seed: u64,
}

pub fn build_fusion<T: Scalar>(spec: FusionSpec<T>) -> Result<Model<T>> {
    let mut width = 0;
    for b in [&spec.branch_2d, &spec.branch_1d] {
        let out = b.output_dims()?;
        if out.len() != 1 {
            return Err(Error::Shape(format!(
                "fusion branch must emit a feature vector, got per-sample shape {out:?}"
            )));
        }
        width += out[0];
    }
    let mut b = StackBuilder::new();
    for (i, &w) in spec.head.iter().enumerate() {
        b = b.dense(&format!("head_fc{}", i + 1), w).relu(&format!("head_fc{}_relu", i + 1));
    }
    let specs = b.dense("head_out", spec.n_classes).softmax("head_prob").specs();
    let (specs, _) = infer_stack(&[width], &specs)?;
    Model::from_parts(
        vec![spec.branch_2d, spec.branch_1d],
        Some(JUNCTION.to_string()),
        init_layers(&specs, spec.seed),
        spec.seed,
    )
}

/// Trains the 2D trunk on a labelled image task.
pub fn pretrain_source_2d(
    train_set: &Dataset<f32>,
    spec: &ArchSpec,
    cfg: &TrainConfig,
) -> Result<(Model<f32>, Vec<EpochStats>)> {
    let dims = train_set.inputs()[0].dims();
    if dims.len() != 4 {
        return Err(Error::Shape(format!("image task needs [batch, planes, n, n], got {dims:?}")));
    }
    let mut model = build_cnn2d(spec, [dims[1], dims[2], dims[3]], cfg.seed)?;
    let trace = train(&mut model, train_set, cfg)?;
    Ok((model, trace))
}

/// Trains on `train_set`, then scores evaluation-mode predictions on `test_set`.
pub fn fit_and_score<T: Scalar>(
    model: &mut Model<T>,
    train_set: &Dataset<T>,
    test_set: &Dataset<T>,
    cfg: &TrainConfig,
) -> Result<(EvalReport, Vec<EpochStats>)> {
    let trace = train(model, train_set, cfg)?;
    let pred = model.predict(test_set.inputs())?;
    Ok((score(&pred, test_set.labels(), model.output_width()?)?, trace))
}

// ---------------------------------------------------------------- data prep

/// `[N, channels, window]` tensor of the named channels.
pub fn windows_tensor(windows: &[Window], channels: &[&str]) -> Result<Tensor<f32>> {
    let Some(first) = windows.first() else {
        return Err(Error::Domain("no windows".into()));
    };
    let len = first.length;
    let mut data = Vec::with_capacity(windows.len() * channels.len() * len);
    for w in windows {
        if w.length != len {
            return Err(Error::Shape("windows differ in length".into()));
        }
        for &c in channels {
            let s = w.channel(c).ok_or_else(|| Error::MissingChannel(c.to_string()))?;
            data.extend(s.values().iter().map(|&v| v as f32));
        }
    }
    Tensor::new(vec![windows.len(), channels.len(), len], data)
}

/// `[N, planes, n, n]` tensor of encoded windows.
pub fn stacks_tensor(encoded: &[EncodedWindow]) -> Result<Tensor<f32>> {
    let Some(first) = encoded.first() else {
        return Err(Error::Domain("no encoded windows".into()));
    };
    let dims = first.stack.dims();
    let mut data = Vec::with_capacity(encoded.len() * dims.iter().product::<usize>());
    for e in encoded {
        if e.stack.dims() != dims {
            return Err(Error::Shape("image stacks differ in shape".into()));
        }
        data.extend(e.stack.to_f32());
    }
    let mut all = vec![encoded.len()];
    all.extend(dims);
    Tensor::new(all, data)
}

/// Per-channel standardisation of `[N, C, ...]` tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelScaler {
    /// Fits on the rows `indices` of `x`. Constant channels get unit scale.
    pub fn fit(x: &Tensor<f32>, indices: &[usize]) -> Result<Self> {
        if x.rank() < 2 || indices.is_empty() {
            return Err(Error::Shape(format!("cannot fit a scaler on {:?}", x.dims())));
        }
        let c = x.dims()[1];
        let per = x.sample_len() / c;
        let mut sum = vec![0.0f64; c];
        let mut sq = vec![0.0f64; c];
        for &i in indices {
            let row = x.row(i);
            for ch in 0..c {
                for &v in &row[ch * per..(ch + 1) * per] {
                    sum[ch] += v as f64;
                    sq[ch] += (v as f64) * (v as f64);
                }
            }
        }
        let n = (indices.len() * per) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let std = sq
            .iter()
            .zip(&mean)
            .map(|(s, m)| {
                let var = (s / n - m * m).max(0.0);
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        if x.rank() < 2 || x.dims()[1] != self.mean.len() {
            return Err(Error::Shape(format!(
                "scaler fitted for {} channels, got {:?}",
                self.mean.len(),
                x.dims()
            )));
        }
        let c = self.mean.len();
        let per = x.sample_len() / c;
        let mut out = x.clone();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            let ch = (k / per) % c;
            *v = ((*v as f64 - self.mean[ch]) / self.std[ch]) as f32;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Mode, Tensor};

    fn probe(n: usize, dims: &[usize]) -> Tensor<f32> {
        let mut all = vec![n];
        all.extend_from_slice(dims);
        let len: usize = all.iter().product();
        Tensor::from_f64(all, &(0..len).map(|i| ((i * 31 % 17) as f64 - 8.0) / 5.0).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn default_cnn1d_shapes() {
        let m: Model<f32> = build_cnn1d(&ArchSpec::default_1d(6), [3, 100], 1).unwrap();
        let y = m.forward(&[probe(2, &[3, 100])], Mode::Eval).unwrap();
        assert_eq!(y.dims(), &[2, 6]);
        for r in 0..2 {
            assert!((y.row(r).iter().sum::<f32>() - 1.0).abs() < 1e-5);
        }
        let two: Model<f32> = build_cnn1d(&ArchSpec::default_1d(2), [3, 100], 1).unwrap();
        assert_eq!(two.output_width().unwrap(), 2);

        let mut spec = ArchSpec::default_1d(2);
        spec.conv_blocks = vec![ConvBlock::new(4, 101)];
        assert!(matches!(build_cnn1d::<f32>(&spec, [3, 100], 1), Err(Error::Shape(_))));
    }

    #[test]
    fn dropout_precedes_pooling() {
        let specs = ArchSpec::default_1d(2).layer_specs(1).unwrap();
        let names: Vec<_> = specs.iter().map(|s| s.name.as_str()).collect();
        assert_eq!(&names[..5], ["conv1", "bn1", "relu1", "drop1", "pool1"]);
    }

    #[test]
    fn transfer_copies_and_freezes_trunk() {
        let base: Model<f32> = build_cnn1d(&ArchSpec::default_1d(6), [3, 40], 2).unwrap();
        let t = transfer_from(&base, Frozen::AllButHead, &DEFAULT_NEW_HEAD, 2, 9).unwrap();
        assert_eq!(t.output_width().unwrap(), 2);
        for (name, p) in base.params() {
            if name.starts_with("conv") || name.starts_with("bn") || name.starts_with("fc") {
                assert_eq!(t.param(&name).unwrap(), p, "{name}");
                assert!(!t.layer(name.split('.').next().unwrap()).unwrap().trainable());
            }
        }
        assert!(t.layer("out").is_none());
        assert!(t.layer("tl_out").unwrap().trainable());
        assert!(matches!(
            transfer_from(&base, Frozen::Layers(99), &[], 2, 1),
            Err(Error::Plan(_))
        ));
    }

    #[test]
    fn transfer_from_headless_base_fails() {
        let specs = StackBuilder::new().dense("out", 3).softmax("p").specs();
        let base: Model<f32> = Model::sequential(&[4], &specs, 0).unwrap();
        assert!(matches!(transfer_from(&base, Frozen::AllButHead, &[], 2, 0), Err(Error::Plan(_))));
    }

    #[test]
    fn fusion_concat_width() {
        let mk = |units: usize, prefix: &str| {
            let specs = StackBuilder::new().dense("f", units).relu("r").dense("out", 2).specs();
            let m: Model<f32> = Model::sequential(&[5], &specs, 3).unwrap();
            trunk_branch(&m, prefix, false).unwrap()
        };
        let m = build_fusion(FusionSpec {
            branch_2d: mk(32, "img_"),
            branch_1d: mk(16, "raw_"),
            head: vec![],
            n_classes: 3,
            seed: 4,
        })
        .unwrap();
        assert_eq!(m.param("head_out.weight").unwrap().dims(), &[48, 3]);

        let conv = {
            let specs = StackBuilder::new().conv1d("c", 2, 2, 1).flatten("f").dense("out", 2).specs();
            let m: Model<f32> = Model::sequential(&[1, 5], &specs, 3).unwrap();
            let mut b = trunk_branch(&m, "raw_", false).unwrap();
            b.layers.pop();
            b
        };
        let err = build_fusion(FusionSpec {
            branch_2d: mk(4, "img_"),
            branch_1d: conv,
            head: vec![],
            n_classes: 2,
            seed: 0,
        })
        .unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn scaler_standardises_channels() {
        let x = Tensor::from_f64(vec![2, 2, 2], &[1.0, 3.0, 10.0, 10.0, 5.0, 7.0, 10.0, 10.0]).unwrap();
        let s = ChannelScaler::fit(&x, &[0, 1]).unwrap();
        assert_eq!(s.mean, vec![4.0, 10.0]);
        assert_eq!(s.std[1], 1.0);
        let y = s.apply(&x).unwrap();
        assert!((y.data()[0] + 3.0 / 5f32.sqrt()).abs() < 1e-6);
        assert_eq!(y.data()[2], 0.0);
    }
}
