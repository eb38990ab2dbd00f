//! Independent oracles shared by the integration suites.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ts2img::nn::ops::softmax_xent;
use ts2img::nn::{Model, Tensor, TapeOptions};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(r: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f64> {
    let n: usize = dims.iter().product();
    Tensor::new(dims.to_vec(), (0..n).map(|_| r.random_range(-1.5..1.5)).collect()).unwrap()
}

// ---------------------------------------------------------------- encodings

/// GASF from the angular definition `cos(phi_i + phi_j)`.
pub fn gasf_trig(x: &[f64]) -> Vec<f64> {
    let phi: Vec<f64> = x.iter().map(|v| v.acos()).collect();
    phi.iter().flat_map(|&a| phi.iter().map(move |&b| (a + b).cos())).collect()
}

/// GADF from the angular definition `sin(phi_i - phi_j)`.
pub fn gadf_trig(x: &[f64]) -> Vec<f64> {
    let phi: Vec<f64> = x.iter().map(|v| v.acos()).collect();
    phi.iter().flat_map(|&a| phi.iter().map(move |&b| (a - b).sin())).collect()
}

/// MTF by direct counting: textbook quantile edges at fractional rank
/// `k (n - 1) / q`, bin = number of edges strictly below the sample, and
/// transition probabilities from explicit pair counts.
pub fn mtf_bruteforce(x: &[f64], q: usize) -> Vec<f64> {
    let n = x.len();
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let edges: Vec<f64> = (1..q)
        .map(|k| {
            let pos = (k * (n - 1)) as f64 / q as f64;
            let lo = pos.floor() as usize;
            if lo + 1 >= n {
                s[n - 1]
            } else {
                s[lo] + (pos - lo as f64) * (s[lo + 1] - s[lo])
            }
        })
        .collect();
    let bin: Vec<usize> = x.iter().map(|&v| edges.iter().filter(|&&e| v > e).count()).collect();
    let count = |a: usize, b: usize| (0..n - 1).filter(|&t| bin[t] == a && bin[t + 1] == b).count();
    let mut out = Vec::with_capacity(n * n);
    for i in 0..n {
        let total: usize = (0..q).map(|b| count(bin[i], b)).sum();
        for j in 0..n {
            out.push(if total == 0 {
                1.0 / q as f64
            } else {
                count(bin[i], bin[j]) as f64 / total as f64
            });
        }
    }
    out
}

// ---------------------------------------------------------------- gradients

/// Scalar objective for finite-difference checks.
#[derive(Debug, Clone)]
pub enum Objective {
    /// `sum(c * y)` over the full model output.
    Weighted(Tensor<f64>),
    /// Mean cross-entropy of the logits.
    Xent(Vec<usize>),
}

#[derive(Debug, Clone, Default)]
pub struct GradCheck {
    pub max_rel: f64,
    pub worst: String,
    pub checked: usize,
    /// Coordinates where the objective is not differentiable at step `h`.
    pub skipped: usize,
}

impl GradCheck {
    pub fn merge(&mut self, other: GradCheck) {
        if other.max_rel > self.max_rel {
            self.max_rel = other.max_rel;
            self.worst = other.worst;
        }
        self.checked += other.checked;
        self.skipped += other.skipped;
    }
}

fn opts(obj: &Objective) -> TapeOptions {
    TapeOptions {
        logits: matches!(obj, Objective::Xent(_)),
        input_grads: true,
        starts: None,
    }
}

fn objective(m: &Model<f64>, x: &[Tensor<f64>], obj: &Objective) -> f64 {
    let (y, _) = m.forward_tape(x, &opts(obj)).unwrap();
    match obj {
        Objective::Weighted(c) => y.data().iter().zip(c.data()).map(|(a, b)| a * b).sum(),
        Objective::Xent(t) => softmax_xent(&y, t).unwrap().0,
    }
}

/// `|a - n| / (max(|a|, |n|) + 1e-6 * scale)`. Roundoff in a central
/// difference grows with the objective, so `scale` is `max(1, |f|)`.
pub fn rel_err(a: f64, n: f64, scale: f64) -> f64 {
    (a - n).abs() / (a.abs().max(n.abs()) + 1e-6 * scale)
}

/// Compares analytic parameter and input gradients with central
/// differences of step `h`. A coordinate whose one-sided slopes disagree by
/// more than 1e-3 straddles a kink (relu, max-pool tie) and is skipped.
pub fn grad_check(m: &Model<f64>, x: &[Tensor<f64>], obj: &Objective, h: f64) -> GradCheck {
    let (y, tape) = m.forward_tape(x, &opts(obj)).unwrap();
    let upstream = match obj {
        Objective::Weighted(c) => c.clone(),
        Objective::Xent(t) => softmax_xent(&y, t).unwrap().1,
    };
    let pass = m.backward(&tape, &upstream).unwrap();
    let f0 = objective(m, x, obj);
    let scale = f0.abs().max(1.0);
    let mut out = GradCheck::default();
    let mut visit = |label: String, analytic: f64, f_plus: f64, f_minus: f64| {
        let dp = (f_plus - f0) / h;
        let dm = (f0 - f_minus) / h;
        if (dp - dm).abs() > 1e-3 {
            out.skipped += 1;
            return;
        }
        let numeric = (f_plus - f_minus) / (2.0 * h);
        let e = rel_err(analytic, numeric, scale);
        out.checked += 1;
        if e > out.max_rel {
            out.max_rel = e;
            out.worst = format!("{label}: analytic {analytic:e}, numeric {numeric:e}");
        }
    };

    let mut probe = m.clone();
    for (name, p) in m.params() {
        let trainable = m.layer(name.rsplit_once('.').unwrap().0).unwrap().trainable();
        let g = pass.params.get(&name);
        assert_eq!(trainable, g.is_some(), "gradient presence for {name}");
        let Some(g) = g else { continue };
        for k in 0..p.len() {
            let mut t = p.clone();
            t.data_mut()[k] += h;
            probe.set_tensor(&name, t.clone()).unwrap();
            let fp = objective(&probe, x, obj);
            t.data_mut()[k] -= 2.0 * h;
            probe.set_tensor(&name, t).unwrap();
            let fm = objective(&probe, x, obj);
            probe.set_tensor(&name, p.clone()).unwrap();
            visit(format!("{name}[{k}]"), g.data()[k], fp, fm);
        }
    }
    for (b, xb) in x.iter().enumerate() {
        let g = pass.inputs[b].as_ref().expect("input gradient requested");
        for k in 0..xb.len() {
            let mut xs = x.to_vec();
            xs[b].data_mut()[k] += h;
            let fp = objective(m, &xs, obj);
            xs[b].data_mut()[k] -= 2.0 * h;
            let fm = objective(m, &xs, obj);
            visit(format!("input{b}[{k}]"), g.data()[k], fp, fm);
        }
    }
    out
}

// ---------------------------------------------------------------- separability

/// Nearest-centroid hold-out accuracy on flattened samples.
pub fn nearest_centroid(x: &Tensor<f32>, labels: &[usize], train: &[usize], test: &[usize], classes: usize) -> f64 {
    let d = x.sample_len();
    let mut centroids = vec![vec![0.0f64; d]; classes];
    let mut counts = vec![0usize; classes];
    for &i in train {
        counts[labels[i]] += 1;
        for (c, &v) in centroids[labels[i]].iter_mut().zip(x.row(i)) {
            *c += v as f64;
        }
    }
    for (c, &n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= n.max(1) as f64);
    }
    let correct = test
        .iter()
        .filter(|&&i| {
            let row = x.row(i);
            let best = (0..classes)
                .min_by(|&a, &b| {
                    let da: f64 = centroids[a].iter().zip(row).map(|(c, &v)| (c - v as f64).powi(2)).sum();
                    let db: f64 = centroids[b].iter().zip(row).map(|(c, &v)| (c - v as f64).powi(2)).sum();
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            best == labels[i]
        })
        .count();
    correct as f64 / test.len() as f64
}

/// Perceptron with margin on `[n, d]` features: returns the training
/// accuracy after `epochs` passes, as a separability witness.
pub fn perceptron_accuracy(x: &Tensor<f32>, labels: &[usize], epochs: usize) -> f64 {
    let d = x.sample_len();
    let mut w = vec![0.0f64; d + 1];
    let sign = |l: usize| if l == 1 { 1.0 } else { -1.0 };
    for _ in 0..epochs {
        for i in 0..x.batch() {
            let row = x.row(i);
            let s: f64 = w[d] + row.iter().zip(&w).map(|(&v, wi)| v as f64 * wi).sum::<f64>();
            let y = sign(labels[i]);
            if y * s <= 0.0 {
                for (wi, &v) in w.iter_mut().zip(row) {
                    *wi += y * v as f64;
                }
                w[d] += y;
            }
        }
    }
    let correct = (0..x.batch())
        .filter(|&i| {
            let row = x.row(i);
            let s: f64 = w[d] + row.iter().zip(&w).map(|(&v, wi)| v as f64 * wi).sum::<f64>();
            sign(labels[i]) * s > 0.0
        })
        .count();
    correct as f64 / x.batch() as f64
}

// ---------------------------------------------------------------- gradient configurations

use ts2img::nn::{Branch, LayerSpec, StackBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Dense,
    Conv1d,
    Conv2d,
    MaxPool1d,
    MaxPool2d,
    BatchNorm,
    Dropout,
    Flatten,
    Sigmoid,
    Relu,
    Softmax,
    SoftmaxXent,
    Fusion,
}

pub const ALL_KINDS: [Kind; 13] = [
    Kind::Dense,
    Kind::Conv1d,
    Kind::Conv2d,
    Kind::MaxPool1d,
    Kind::MaxPool2d,
    Kind::BatchNorm,
    Kind::Dropout,
    Kind::Flatten,
    Kind::Sigmoid,
    Kind::Relu,
    Kind::Softmax,
    Kind::SoftmaxXent,
    Kind::Fusion,
];

/// Replaces every parameter with random values, so batch-norm scale and
/// zero biases do not hide errors.
fn randomise(m: &mut Model<f64>, r: &mut ChaCha8Rng) {
    let names: Vec<(String, Vec<usize>)> = m.params().into_iter().map(|(n, t)| (n, t.dims().to_vec())).collect();
    for (n, d) in names {
        m.set_tensor(&n, random_tensor(r, &d)).unwrap();
    }
}

fn weighted(r: &mut ChaCha8Rng, m: &Model<f64>, x: &[Tensor<f64>]) -> Objective {
    let y = m.forward_tape(x, &TapeOptions::default()).unwrap().0;
    Objective::Weighted(random_tensor(r, y.dims()))
}

fn single(r: &mut ChaCha8Rng, input: &[usize], specs: Vec<LayerSpec>, batch: usize, seed: u64) -> (Model<f64>, Vec<Tensor<f64>>, Objective) {
    let mut m = Model::sequential(input, &specs, seed).unwrap();
    randomise(&mut m, r);
    let mut dims = vec![batch];
    dims.extend_from_slice(input);
    let x = vec![random_tensor(r, &dims)];
    let obj = weighted(r, &m, &x);
    (m, x, obj)
}

/// One random model, input batch and objective exercising `kind`.
pub fn config(kind: Kind, seed: u64) -> (Model<f64>, Vec<Tensor<f64>>, Objective) {
    let r = &mut rng(seed ^ 0x6772_6164);
    let b = r.random_range(1..=4);
    match kind {
        Kind::Dense => {
            let (i, o) = (r.random_range(1..=6), r.random_range(1..=6));
            single(r, &[i], StackBuilder::new().dense("d", o).specs(), b, seed)
        }
        Kind::Conv1d => {
            let (c, f, k, s) = (r.random_range(1..=3), r.random_range(1..=3), r.random_range(1..=4), r.random_range(1..=3));
            let l = k + r.random_range(0..=6);
            single(r, &[c, l], StackBuilder::new().conv1d("c", f, k, s).specs(), b, seed)
        }
        Kind::Conv2d => {
            let (c, f, k, s) = (r.random_range(1..=2), r.random_range(1..=3), r.random_range(1..=3), r.random_range(1..=2));
            let (h, w) = (k + r.random_range(0..=3), k + r.random_range(0..=3));
            single(r, &[c, h, w], StackBuilder::new().conv2d("c", f, k, s).specs(), b, seed)
        }
        Kind::MaxPool1d => {
            let p = r.random_range(1..=3);
            let (c, l) = (r.random_range(1..=3), p + r.random_range(0..=6));
            single(r, &[c, l], StackBuilder::new().max_pool1d("p", p).specs(), b, seed)
        }
        Kind::MaxPool2d => {
            let p = r.random_range(1..=3);
            let (c, h, w) = (r.random_range(1..=2), p + r.random_range(0..=4), p + r.random_range(0..=4));
            single(r, &[c, h, w], StackBuilder::new().max_pool2d("p", p).specs(), b, seed)
        }
        Kind::BatchNorm => {
            let input: Vec<usize> = match r.random_range(0..3) {
                0 => vec![r.random_range(1..=5)],
                1 => vec![r.random_range(1..=3), r.random_range(1..=5)],
                _ => vec![r.random_range(1..=2), r.random_range(1..=3), r.random_range(1..=3)],
            };
            let b = r.random_range(2..=5);
            single(r, &input, StackBuilder::new().batch_norm("bn").specs(), b, seed)
        }
        Kind::Dropout => {
            let rate = r.random_range(0.0..0.8);
            let input = vec![r.random_range(1..=3), r.random_range(1..=6)];
            single(r, &input, StackBuilder::new().dropout("drop", rate).specs(), b, seed)
        }
        Kind::Flatten => {
            let input = vec![r.random_range(1..=3), r.random_range(1..=3), r.random_range(1..=3)];
            single(r, &input, StackBuilder::new().flatten("f").specs(), b, seed)
        }
        Kind::Sigmoid | Kind::Relu | Kind::Softmax => {
            let b_ = StackBuilder::new();
            let specs = match kind {
                Kind::Sigmoid => b_.sigmoid("a"),
                Kind::Relu => b_.relu("a"),
                _ => b_.softmax("a"),
            }
            .specs();
            let input = vec![r.random_range(1..=6)];
            single(r, &input, specs, b, seed)
        }
        Kind::SoftmaxXent => {
            let (i, k) = (r.random_range(1..=5), r.random_range(2..=5));
            let specs = StackBuilder::new().dense("h", 4).sigmoid("s").dense("o", k).softmax("p").specs();
            let (m, x, _) = single(r, &[i], specs, b, seed);
            let t = (0..b).map(|_| r.random_range(0..k)).collect();
            (m, x, Objective::Xent(t))
        }
        Kind::Fusion => fusion_config(r, seed),
    }
}

fn fusion_config(r: &mut ChaCha8Rng, seed: u64) -> (Model<f64>, Vec<Tensor<f64>>, Objective) {
    let b = r.random_range(2..=4);
    let side = r.random_range(4..=6);
    let len = r.random_range(6..=10);
    let img = StackBuilder::new()
        .conv2d("img_conv", 2, 2, 1)
        .batch_norm("img_bn")
        .relu("img_relu")
        .dropout("img_drop", 0.3)
        .max_pool2d("img_pool", 2)
        .flatten("img_flat")
        .dense("img_fc", 3)
        .sigmoid("img_act")
        .specs();
    let raw = StackBuilder::new()
        .conv1d("raw_conv", 2, 3, 1)
        .batch_norm("raw_bn")
        .relu("raw_relu")
        .dropout("raw_drop", 0.3)
        .max_pool1d("raw_pool", 2)
        .flatten("raw_flat")
        .dense("raw_fc", 2)
        .relu("raw_act")
        .specs();
    let mut img_branch: Branch<f64> = Branch::build(&[2, side, side], &img, seed).unwrap();
    let raw_branch: Branch<f64> = Branch::build(&[2, len], &raw, seed + 1).unwrap();
    if r.random_bool(0.3) {
        for l in &mut img_branch.layers {
            l.spec.trainable = false;
        }
    }
    let k = r.random_range(2..=3);
    let mut m = ts2img::transfer::build_fusion(ts2img::transfer::FusionSpec {
        branch_2d: img_branch,
        branch_1d: raw_branch,
        head: vec![4],
        n_classes: k,
        seed,
    })
    .unwrap();
    randomise(&mut m, r);
    let x = vec![random_tensor(r, &[b, 2, side, side]), random_tensor(r, &[b, 2, len])];
    let obj = if r.random_bool(0.5) {
        Objective::Xent((0..b).map(|_| r.random_range(0..k)).collect())
    } else {
        weighted(r, &m, &x)
    };
    (m, x, obj)
}
