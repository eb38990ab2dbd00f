//! Synthetic tasks with known structure, used to exercise the transfer
//! protocols where the original recordings are not available.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::windows_tensor;
use crate::encode::{compose_stack, Encoder, Layout, Method, ACCEL_CHANNELS};
use crate::imageio::stack_tensor;
use crate::ingest::{self, ActivitySynthConfig, ChannelSpec, SynthConfig};
use crate::nn::ops::mix64;
use crate::nn::Tensor;
use crate::series::{Series, Window};
use crate::{par, Error, Result};

/// Number of texture classes in [`gaf_texture_task`].
pub const TEXTURE_CLASSES: usize = 3;

/// One axis of texture class `class`: a slow sine, a fast sine, or a random
/// walk, each with additive noise.
fn texture_axis(class: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let noise = Normal::new(0.0, 0.15).expect("valid sigma");
    let phase = rng.random_range(0.0..2.0 * PI);
    match class {
        0 | 1 => {
            let cycles = if class == 0 {
                rng.random_range(0.8..1.5)
            } else {
                rng.random_range(3.5..5.0)
            };
            (0..n)
                .map(|t| (2.0 * PI * cycles * t as f64 / n as f64 + phase).sin() + noise.sample(rng))
                .collect()
        }
        _ => {
            let mut x = 0.0;
            (0..n)
                .map(|_| {
                    x += noise.sample(rng) * 2.0;
                    x + noise.sample(rng)
                })
                .collect()
        }
    }
}

fn texture_stack(class: usize, n: usize, method: Method, rng: &mut ChaCha8Rng) -> Result<Tensor<f32>> {
    let channels = ACCEL_CHANNELS
        .iter()
        .map(|name| Series::new(*name, 1.0, texture_axis(class, n, rng)))
        .collect::<Result<Vec<_>>>()?;
    let w = Window {
        start_index: 0,
        length: n,
        channels,
        label: class,
        participant_id: 0,
    };
    Ok(stack_tensor(&compose_stack(&w, Encoder::new(method), Layout::RgbXyz)?))
}

/// Labelled inputs with one tensor per model branch.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub inputs: Vec<Tensor<f32>>,
    pub labels: Vec<usize>,
}

/// Three-class image task: each sample is a 3-plane GAF (or MTF) stack of
/// `side`-sample texture signals. Classes are balanced and interleaved.
pub fn gaf_texture_task(n_images: usize, side: usize, method: Method, seed: u64) -> Result<TaskData> {
    if n_images < TEXTURE_CLASSES || side < 2 {
        return Err(Error::Config("texture task needs >= 3 images of side >= 2".into()));
    }
    let stacks = par::map_range(n_images, |i| {
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed, i as u64));
        texture_stack(i % TEXTURE_CLASSES, side, method, &mut rng)
    });
    let stacks = stacks.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(TaskData {
        inputs: vec![Tensor::stack(&stacks)?],
        labels: (0..n_images).map(|i| i % TEXTURE_CLASSES).collect(),
    })
}

/// Two-input task whose class is the XOR of an image bit and a raw-signal
/// bit. The image bit picks texture class 0 or 1 of [`gaf_texture_task`];
/// the raw bit picks a slow or fast single-channel oscillation. The two
/// inputs are drawn independently, so neither alone predicts the class.
#[derive(Debug, Clone, PartialEq)]
pub struct XorTask {
    pub data: TaskData,
    pub image_bit: Vec<usize>,
    pub raw_bit: Vec<usize>,
}

pub fn xor_fusion_task(n: usize, side: usize, raw_len: usize, method: Method, seed: u64) -> Result<XorTask> {
    if n < 4 || side < 2 || raw_len < 2 {
        return Err(Error::Config("xor task needs >= 4 samples and lengths >= 2".into()));
    }
    let samples = par::map_range(n, |i| -> Result<(Tensor<f32>, Vec<f32>, usize, usize)> {
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed, i as u64));
        let a = i % 2;
        let b = (i / 2) % 2;
        let img = texture_stack(a, side, method, &mut rng)?;
        let cycles = if b == 0 {
            rng.random_range(1.0..2.0)
        } else {
            rng.random_range(5.0..7.0)
        };
        let phase = rng.random_range(0.0..2.0 * PI);
        let noise = Normal::new(0.0, 0.3).expect("valid sigma");
        let raw = (0..raw_len)
            .map(|t| ((2.0 * PI * cycles * t as f64 / raw_len as f64 + phase).sin() + noise.sample(&mut rng)) as f32)
            .collect();
        Ok((img, raw, a, b))
    });
    let mut images = Vec::with_capacity(n);
    let mut raw = Vec::with_capacity(n * raw_len);
    let (mut image_bit, mut raw_bit) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for s in samples {
        let (img, r, a, b) = s?;
        images.push(img);
        raw.extend(r);
        image_bit.push(a);
        raw_bit.push(b);
    }
    let labels = image_bit.iter().zip(&raw_bit).map(|(a, b)| a ^ b).collect();
    Ok(XorTask {
        data: TaskData {
            inputs: vec![Tensor::stack(&images)?, Tensor::new(vec![n, 1, raw_len], raw)?],
            labels,
        },
        image_bit,
        raw_bit,
    })
}

/// Raw windows with participant ids.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    /// `[N, channels, window]`.
    pub x: Tensor<f32>,
    pub labels: Vec<usize>,
    pub groups: Vec<u32>,
}

impl WindowSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            x: self.x.select(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            groups: idx.iter().map(|&i| self.groups[i]).collect(),
        }
    }
}

/// Stacks `windows` over the named channels with their labels and participants.
pub fn window_set(windows: &[Window], channels: &[&str]) -> Result<WindowSet> {
    Ok(WindowSet {
        x: windows_tensor(windows, channels)?,
        labels: windows.iter().map(|w| w.label).collect(),
        groups: windows.iter().map(|w| w.participant_id).collect(),
    })
}

/// Six-class accelerometer windows from [`ingest::synth_activity`].
pub fn activity_source(cfg: &ActivitySynthConfig, window: usize, step: usize) -> Result<WindowSet> {
    let records = ingest::synth_activity(cfg);
    window_set(&ingest::wisdm_windows(&records, window, step)?, &ACCEL_CHANNELS)
}

/// Settings for the two-class physiological target.
#[derive(Debug, Clone, PartialEq)]
pub struct StressTaskConfig {
    pub n_participants: usize,
    pub frames_per_participant: usize,
    pub window: usize,
    pub step: usize,
    pub class_separability: f64,
    /// Noise as a multiple of each channel's oscillation amplitude.
    pub noise: f64,
    pub seed: u64,
}

impl Default for StressTaskConfig {
    fn default() -> Self {
        Self {
            n_participants: 10,
            frames_per_participant: 1200,
            window: 100,
            step: 50,
            class_separability: 0.3,
            noise: 1.2,
            seed: 0,
        }
    }
}

/// The stressor-style physiological channels used by the target task.
pub const STRESS_CHANNELS: [&str; 3] = ["hr", "hrv", "eda"];

/// Two-class heart rate, HRV and EDA windows sampled at 20 Hz. The stressed
/// class oscillates faster and sits higher, scaled by the separability.
pub fn stress_target(cfg: &StressTaskConfig) -> Result<WindowSet> {
    let noise = cfg.noise;
    let synth = SynthConfig {
        n_participants: cfg.n_participants,
        n_classes: 2,
        frames_per_participant: cfg.frames_per_participant,
        channel_specs: vec![
            ChannelSpec::new("hr", 1.2, 11.6, 11.6 * noise, 79.4),
            ChannelSpec::new("hrv", 0.8, 15.0, 15.0 * noise, 50.0),
            ChannelSpec::new("eda", 0.4, 158.0, 158.0 * noise, 320.4),
        ],
        seed: cfg.seed,
        class_separability: cfg.class_separability,
        sample_rate_hz: ingest::WISDM_RATE_HZ,
        label_base: 0,
        segment_frames: 4 * cfg.window,
        window_len: cfg.window,
        participant_spread: 0.3,
    };
    let mut windows = Vec::new();
    for p in ingest::generate_synthetic(&synth)? {
        windows.extend(ingest::physio_windows(
            &p.table,
            &STRESS_CHANNELS,
            synth.sample_rate_hz,
            0,
            cfg.window,
            cfg.step,
            p.id,
        )?);
    }
    window_set(&windows, &STRESS_CHANNELS)
}
