//! Signal containers, min-max rescaling and sliding-window segmentation.

use std::collections::BTreeMap;

use crate::{Error, Result};

/// A uniformly sampled, finite, real-valued signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    name: String,
    sample_rate_hz: f64,
    values: Vec<f64>,
}

impl Series {
    /// Builds a series, rejecting NaN and infinite samples.
    pub fn new(name: impl Into<String>, sample_rate_hz: f64, values: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!(
                "series `{name}` has a non-finite value at index {i}"
            )));
        }
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::Domain(format!(
                "series `{name}` has invalid sample rate {sample_rate_hz}"
            )));
        }
        Ok(Self {
            name,
            sample_rate_hz,
            values,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Copies samples `start..start + len` into a new series with the same name and rate.
    pub fn slice(&self, start: usize, len: usize) -> Series {
        Series {
            name: self.name.clone(),
            sample_rate_hz: self.sample_rate_hz,
            values: self.values[start..start + len].to_vec(),
        }
    }
}

/// Several named channels recorded on a shared clock.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MultiChannelSeries {
    pub channels: Vec<Series>,
}

impl MultiChannelSeries {
    pub fn new(channels: Vec<Series>) -> Self {
        Self { channels }
    }

    pub fn channel(&self, name: &str) -> Option<&Series> {
        self.channels.iter().find(|c| c.name() == name)
    }

    /// Common length of all channels, or a domain error if they disagree.
    pub fn common_len(&self) -> Result<usize> {
        let Some(first) = self.channels.first() else {
            return Ok(0);
        };
        for c in &self.channels {
            if c.len() != first.len() {
                return Err(Error::Domain(format!(
                    "channel length mismatch: `{}` has {} samples, `{}` has {}",
                    first.name(),
                    first.len(),
                    c.name(),
                    c.len()
                )));
            }
        }
        Ok(first.len())
    }
}

/// A series mapped into `[-1, 1]` by min-max rescaling.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledSeries {
    values: Vec<f64>,
    degenerate: bool,
}

impl RescaledSeries {
    /// Wraps values that are already in `[-1, 1]`.
    pub fn from_rescaled(values: Vec<f64>) -> Result<Self> {
        if let Some(v) = values.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(Error::Domain(format!(
                "rescaled value {v} lies outside [-1, 1]"
            )));
        }
        Ok(Self {
            values,
            degenerate: false,
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// True when the source was constant and every value is zero.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Rescales a series into `[-1, 1]` with its minimum at -1 and maximum at +1.
///
/// A constant series maps to all zeros and is flagged degenerate.
pub fn rescale_minmax(s: &Series) -> Result<RescaledSeries> {
    rescale_values(s.values())
}

/// Slice form of [`rescale_minmax`].
pub fn rescale_values(x: &[f64]) -> Result<RescaledSeries> {
    if x.is_empty() {
        return Err(Error::Domain("cannot rescale an empty series".into()));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("cannot rescale a non-finite series".into()));
    }
    let (min, max) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    if max == min {
        return Ok(RescaledSeries {
            values: vec![0.0; x.len()],
            degenerate: true,
        });
    }
    // Halving keeps max - min finite for inputs near f64::MAX; the ratio is unchanged.
    let scale = if (max - min).is_finite() { 1.0 } else { 0.5 };
    let (lo, hi) = (min * scale, max * scale);
    let range = hi - lo;
    let values = x
        .iter()
        .map(|&v| {
            let v = v * scale;
            (((v - hi) + (v - lo)) / range).clamp(-1.0, 1.0)
        })
        .collect();
    Ok(RescaledSeries {
        values,
        degenerate: false,
    })
}

/// A fixed-length labeled segment across all channels of a recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start_index: usize,
    pub length: usize,
    pub channels: Vec<Series>,
    pub label: usize,
    pub participant_id: u32,
}

impl Window {
    pub fn channel(&self, name: &str) -> Option<&Series> {
        self.channels.iter().find(|c| c.name() == name)
    }

    pub fn channel_names(&self) -> Vec<&str> {
        self.channels.iter().map(|c| c.name()).collect()
    }
}

/// Majority label of a window; a tie goes to the label seen last.
///
/// # Panics
///
/// Panics on an empty slice.
pub fn window_label(frame_labels: &[usize]) -> usize {
    assert!(!frame_labels.is_empty(), "window_label on empty slice");
    let mut tally: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (i, &l) in frame_labels.iter().enumerate() {
        let e = tally.entry(l).or_insert((0, 0));
        e.0 += 1;
        e.1 = i;
    }
    tally
        .into_iter()
        .max_by_key(|&(_, (count, last))| (count, last))
        .map(|(l, _)| l)
        .expect("non-empty")
}

/// Cuts `channels` into windows of `window` samples every `step` samples.
///
/// `labels` carries one class id per sample. The caller passes one
/// participant's recording at a time, so windows never straddle participants.
pub fn segment_windows(
    channels: &MultiChannelSeries,
    labels: &[usize],
    window: usize,
    step: usize,
    participant_id: u32,
) -> Result<Vec<Window>> {
    if window < 2 {
        return Err(Error::Config(format!("window must be >= 2, got {window}")));
    }
    if step < 1 {
        return Err(Error::Config("step must be >= 1".into()));
    }
    let len = channels.common_len()?;
    if labels.len() != len {
        return Err(Error::Domain(format!(
            "{} labels for {len} samples",
            labels.len()
        )));
    }
    if len < window {
        return Ok(Vec::new());
    }
    let count = (len - window) / step + 1;
    Ok((0..count)
        .map(|k| {
            let start = k * step;
            Window {
                start_index: start,
                length: window,
                channels: channels
                    .channels
                    .iter()
                    .map(|c| c.slice(start, window))
                    .collect(),
                label: window_label(&labels[start..start + window]),
                participant_id,
            }
        })
        .collect())
}
