//! Gramian angular fields, Markov transition fields and per-axis image stacks.
//!
//! All encoders read a [`RescaledSeries`] of length `n` and emit an `n x n`
//! matrix whose row `i`, column `j` relates samples `i` and `j`, so time runs
//! from the top-left corner to the bottom-right.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::par;
use crate::series::{rescale_values, RescaledSeries, Window};
use crate::{Error, Result};

/// Default number of quantile bins for the Markov transition field.
pub const DEFAULT_BINS: usize = 8;

pub const ACCEL_CHANNELS: [&str; 3] = ["accel_x", "accel_y", "accel_z"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Gasf,
    Gadf,
    Mtf,
}

impl Method {
    /// Value range of the matrices this method produces.
    pub fn value_range(self) -> (f64, f64) {
        match self {
            Method::Gasf | Method::Gadf => (-1.0, 1.0),
            Method::Mtf => (0.0, 1.0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Gasf => "gasf",
            Method::Gadf => "gadf",
            Method::Mtf => "mtf",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gasf" => Ok(Method::Gasf),
            "gadf" => Ok(Method::Gadf),
            "mtf" => Ok(Method::Mtf),
            other => Err(Error::Config(format!("unknown encoding method `{other}`"))),
        }
    }
}

/// Polar form of a rescaled series: angle `arccos(x)` and radius `t / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarSeries {
    pub phi: Vec<f64>,
    pub r: Vec<f64>,
    pub n_regularizer: usize,
}

/// Maps each rescaled sample to polar coordinates with 1-based timestamps.
pub fn to_polar(x: &RescaledSeries, n_regularizer: usize) -> Result<PolarSeries> {
    if n_regularizer == 0 {
        return Err(Error::Config("polar regularizer N must be positive".into()));
    }
    if let Some(v) = x.values().iter().find(|v| !(-1.0..=1.0).contains(*v)) {
        return Err(Error::Domain(format!("value {v} outside [-1, 1]")));
    }
    let n = n_regularizer as f64;
    Ok(PolarSeries {
        phi: x.values().iter().map(|v| v.acos()).collect(),
        r: (1..=x.len()).map(|t| t as f64 / n).collect(),
        n_regularizer,
    })
}

/// An `n x n` encoding of one channel.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedImage {
    pub method: Method,
    pub n: usize,
    /// Row-major `n * n` values.
    pub matrix: Vec<f64>,
    pub source_channel: String,
}

impl EncodedImage {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.matrix[i * self.n + j]
    }

    pub fn value_range(&self) -> (f64, f64) {
        self.method.value_range()
    }

    fn with_channel(mut self, name: &str) -> Self {
        self.source_channel = name.to_string();
        self
    }
}

fn sin_part(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| (1.0 - v * v).max(0.0).sqrt()).collect()
}

/// Gramian angular summation field, `cos(phi_i + phi_j)`, in algebraic form.
pub fn gasf(x: &RescaledSeries) -> EncodedImage {
    let v = x.values();
    let s = sin_part(v);
    let n = v.len();
    let mut m = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            m.push((v[i] * v[j] - s[i] * s[j]).clamp(-1.0, 1.0));
        }
    }
    EncodedImage {
        method: Method::Gasf,
        n,
        matrix: m,
        source_channel: String::new(),
    }
}

/// Gramian angular difference field, `sin(phi_i - phi_j)`, in algebraic form.
pub fn gadf(x: &RescaledSeries) -> EncodedImage {
    let v = x.values();
    let s = sin_part(v);
    let n = v.len();
    let mut m = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            m.push((s[i] * v[j] - v[i] * s[j]).clamp(-1.0, 1.0));
        }
    }
    EncodedImage {
        method: Method::Gadf,
        n,
        matrix: m,
        source_channel: String::new(),
    }
}

/// First-order transition matrix between equal-frequency bins of a series.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovModel {
    pub q: usize,
    /// `q - 1` non-decreasing upper bin edges.
    pub bin_edges: Vec<f64>,
    /// Row-major `q x q`; row `a` is the distribution of the bin following bin `a`.
    pub transition: Vec<f64>,
}

impl MarkovModel {
    /// Lowest bin whose upper edge is at or above `x`; the last bin otherwise.
    pub fn bin_of(&self, x: f64) -> usize {
        self.bin_edges
            .iter()
            .position(|&e| x <= e)
            .unwrap_or(self.q - 1)
    }

    pub fn prob(&self, from: usize, to: usize) -> f64 {
        self.transition[from * self.q + to]
    }
}

/// Empirical quantile edges at `k / q`, interpolating between sorted ranks.
fn quantile_edges(values: &[f64], q: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let last = sorted.len() - 1;
    (1..q)
        .map(|k| {
            let num = k * last;
            let lo = num / q;
            let rem = num % q;
            if rem == 0 || lo == last {
                sorted[lo]
            } else {
                let frac = rem as f64 / q as f64;
                sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
            }
        })
        .collect()
}

/// Fits the `q`-bin transition matrix of `x`. Rows with no outgoing
/// transitions are filled with `1 / q`.
pub fn fit_markov(x: &RescaledSeries, q: usize) -> Result<MarkovModel> {
    if q < 2 {
        return Err(Error::Config(format!("bin count must be >= 2, got {q}")));
    }
    if x.len() < 2 {
        return Err(Error::Domain(
            "Markov transitions need at least 2 samples".into(),
        ));
    }
    let mut model = MarkovModel {
        q,
        bin_edges: quantile_edges(x.values(), q),
        transition: vec![0.0; q * q],
    };
    let bins: Vec<usize> = x.values().iter().map(|&v| model.bin_of(v)).collect();
    let mut counts = vec![0usize; q * q];
    for pair in bins.windows(2) {
        counts[pair[0] * q + pair[1]] += 1;
    }
    for a in 0..q {
        let row = &counts[a * q..(a + 1) * q];
        let total: usize = row.iter().sum();
        for b in 0..q {
            model.transition[a * q + b] = if total == 0 {
                1.0 / q as f64
            } else {
                row[b] as f64 / total as f64
            };
        }
    }
    Ok(model)
}

/// Markov transition field: entry `(i, j)` is `W[bin(x_i)][bin(x_j)]`.
pub fn mtf(x: &RescaledSeries, model: &MarkovModel) -> EncodedImage {
    let bins: Vec<usize> = x.values().iter().map(|&v| model.bin_of(v)).collect();
    let n = bins.len();
    let mut m = Vec::with_capacity(n * n);
    for &bi in &bins {
        for &bj in &bins {
            m.push(model.prob(bi, bj));
        }
    }
    EncodedImage {
        method: Method::Mtf,
        n,
        matrix: m,
        source_channel: String::new(),
    }
}

/// Encoding method plus the MTF bin count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Encoder {
    pub method: Method,
    pub bins: usize,
}

impl Encoder {
    pub fn new(method: Method) -> Self {
        Self {
            method,
            bins: DEFAULT_BINS,
        }
    }

    pub fn with_bins(mut self, bins: usize) -> Self {
        self.bins = bins;
        self
    }

    pub fn encode(&self, x: &RescaledSeries) -> Result<EncodedImage> {
        Ok(match self.method {
            Method::Gasf => gasf(x),
            Method::Gadf => gadf(x),
            Method::Mtf => mtf(x, &fit_markov(x, self.bins)?),
        })
    }

    /// Rescales raw samples, then encodes them.
    pub fn encode_raw(&self, values: &[f64], channel: &str) -> Result<EncodedImage> {
        Ok(self
            .encode(&rescale_values(values)?)?
            .with_channel(channel))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// X, Y and Z accelerometer planes as red, green and blue.
    RgbXyz,
    /// The single average-motion plane.
    GraySingle,
    /// X, Y, Z and average-motion planes as a 4-channel tensor.
    PlanesXyza,
}

impl Layout {
    pub fn planes(self) -> usize {
        match self {
            Layout::RgbXyz => 3,
            Layout::GraySingle => 1,
            Layout::PlanesXyza => 4,
        }
    }
}

impl FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "rgb_xyz" | "rgb" => Ok(Layout::RgbXyz),
            "gray_single" | "gray" => Ok(Layout::GraySingle),
            "planes_xyza" | "xyza" => Ok(Layout::PlanesXyza),
            other => Err(Error::Config(format!("unknown layout `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    pub layout: Layout,
    pub planes: Vec<EncodedImage>,
}

impl ImageStack {
    pub fn side(&self) -> usize {
        self.planes.first().map_or(0, |p| p.n)
    }

    /// `[planes, n, n]` values as `f32`, plane-major.
    pub fn to_f32(&self) -> Vec<f32> {
        self.planes
            .iter()
            .flat_map(|p| p.matrix.iter().map(|&v| v as f32))
            .collect()
    }

    pub fn dims(&self) -> Vec<usize> {
        vec![self.planes.len(), self.side(), self.side()]
    }
}

/// Encodes the accelerometer axes of `window` into an image stack. Each plane
/// is rescaled on its own; the average-motion plane is the per-sample mean of
/// the raw axes.
pub fn compose_stack(window: &Window, encoder: Encoder, layout: Layout) -> Result<ImageStack> {
    let mut axes = Vec::with_capacity(3);
    for name in ACCEL_CHANNELS {
        let c = window
            .channel(name)
            .ok_or_else(|| Error::Domain(format!("window has no `{name}` channel")))?;
        axes.push(c.values());
    }
    let average = || -> Vec<f64> {
        (0..axes[0].len())
            .map(|i| (axes[0][i] + axes[1][i] + axes[2][i]) / 3.0)
            .collect()
    };
    let mut planes = Vec::with_capacity(layout.planes());
    if layout != Layout::GraySingle {
        for (name, values) in ACCEL_CHANNELS.iter().zip(&axes) {
            planes.push(encoder.encode_raw(values, name)?);
        }
    }
    if layout != Layout::RgbXyz {
        planes.push(encoder.encode_raw(&average(), "accel_avg")?);
    }
    Ok(ImageStack { layout, planes })
}

/// An encoded window keyed by participant and start index.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedWindow {
    pub participant_id: u32,
    pub start_index: usize,
    pub label: usize,
    pub stack: ImageStack,
}

/// Encodes every window, fanning out across windows. The result is sorted by
/// `(participant, start)` whatever the scheduling.
pub fn encode_windows(
    windows: &[Window],
    encoder: Encoder,
    layout: Layout,
) -> Result<Vec<EncodedWindow>> {
    let stacks = par::map(windows, |w| compose_stack(w, encoder, layout));
    let mut out = windows
        .iter()
        .zip(stacks)
        .map(|(w, s)| {
            Ok(EncodedWindow {
                participant_id: w.participant_id,
                start_index: w.start_index,
                label: w.label,
                stack: s?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort_by_key(|e| (e.participant_id, e.start_index));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::Series;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn rs(v: &[f64]) -> RescaledSeries {
        RescaledSeries::from_rescaled(v.to_vec()).unwrap()
    }

    fn assert_matrix(img: &EncodedImage, expect: &[&[f64]], tol: f64) {
        for (i, row) in expect.iter().enumerate() {
            for (j, &e) in row.iter().enumerate() {
                let g = img.get(i, j);
                assert!((g - e).abs() <= tol, "({i},{j}): {g} vs {e}");
            }
        }
    }

    #[test]
    fn polar_examples() {
        let p = to_polar(&rs(&[1.0, 0.0, -1.0]), 3).unwrap();
        assert_eq!(p.phi, vec![0.0, PI / 2.0, PI]);
        assert_eq!(p.r, vec![1.0 / 3.0, 2.0 / 3.0, 1.0]);
        let p = to_polar(&rs(&[0.5]), 1).unwrap();
        assert!((p.phi[0] - PI / 3.0).abs() < 1e-15);
        let p = to_polar(&rs(&[0.0, 0.0, 0.0]), 3).unwrap();
        assert!(p.phi.iter().all(|&a| a == PI / 2.0));
        assert!(to_polar(&rs(&[0.0]), 0).is_err());
    }

    #[test]
    fn gasf_examples() {
        let g = gasf(&rs(&[1.0, 0.0, -1.0]));
        assert_matrix(
            &g,
            &[&[1.0, 0.0, -1.0], &[0.0, -1.0, 0.0], &[-1.0, 0.0, 1.0]],
            1e-15,
        );
        let c = 0.3;
        let g = gasf(&rs(&[c]));
        assert!((g.get(0, 0) - (2.0 * c * c - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn gadf_examples() {
        let d = gadf(&rs(&[1.0, 0.0, -1.0]));
        assert_matrix(
            &d,
            &[&[0.0, -1.0, 0.0], &[1.0, 0.0, -1.0], &[0.0, 1.0, 0.0]],
            1e-15,
        );
        let d = gadf(&rs(&[0.2, -0.7, 0.9, 1.0]));
        assert!((0..4).all(|i| d.get(i, i) == 0.0));
    }

    #[test]
    fn markov_examples() {
        let x = rescale_values(&[1.0, 1.0, 2.0, 2.0]).unwrap();
        let m = fit_markov(&x, 2).unwrap();
        assert_eq!(m.transition, vec![0.5, 0.5, 0.0, 1.0]);
        let img = mtf(&x, &m);
        assert_eq!(
            img.matrix,
            vec![0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0]
        );

        let x = rescale_values(&[1.0, 2.0, 1.0, 2.0]).unwrap();
        assert_eq!(fit_markov(&x, 2).unwrap().transition, vec![0.0, 1.0, 1.0, 0.0]);

        let x = rescale_values(&[4.0; 6]).unwrap();
        let m = fit_markov(&x, 4).unwrap();
        assert_eq!(&m.transition[..4], &[1.0, 0.0, 0.0, 0.0]);
        assert!(m.transition[4..].iter().all(|&p| p == 0.25));
        assert!(mtf(&x, &m).matrix.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn markov_errors() {
        let x = rescale_values(&[1.0, 2.0, 3.0]).unwrap();
        assert!(matches!(fit_markov(&x, 1), Err(Error::Config(_))));
        let x = rescale_values(&[1.0]).unwrap();
        assert!(matches!(fit_markov(&x, 2), Err(Error::Domain(_))));
    }

    #[test]
    fn quantile_interpolation() {
        // ranks k * 4 / 4 for n = 5 land exactly on samples
        assert_eq!(quantile_edges(&[5.0, 1.0, 3.0, 2.0, 4.0], 4), vec![2.0, 3.0, 4.0]);
        // n = 4, q = 2: rank 1.5 between 2 and 3
        assert_eq!(quantile_edges(&[4.0, 3.0, 2.0, 1.0], 2), vec![2.5]);
    }

    #[test]
    fn mtf_is_bin_measurable() {
        // 0.1 and 0.2 share the lowest bin, so swapping them must not change M
        let a = rs(&[0.1, 0.2, 0.9, 0.8, 0.1, 0.95]);
        let b = rs(&[0.2, 0.1, 0.9, 0.8, 0.1, 0.95]);
        let ma = fit_markov(&a, 2).unwrap();
        assert_eq!(ma.bin_of(0.1), ma.bin_of(0.2));
        assert_eq!(mtf(&a, &ma).matrix, mtf(&b, &ma).matrix);
    }

    fn accel_window(x: Vec<f64>, y: Vec<f64>, z: Vec<f64>) -> Window {
        let n = x.len();
        Window {
            start_index: 0,
            length: n,
            channels: vec![
                Series::new("accel_x", 20.0, x).unwrap(),
                Series::new("accel_y", 20.0, y).unwrap(),
                Series::new("accel_z", 20.0, z).unwrap(),
            ],
            label: 0,
            participant_id: 1,
        }
    }

    fn wave(n: usize, f: f64, p: f64) -> Vec<f64> {
        (0..n).map(|i| (i as f64 * f + p).sin()).collect()
    }

    #[test]
    fn compose_layouts() {
        let w = accel_window(wave(100, 0.3, 0.0), wave(100, 0.2, 1.0), wave(100, 0.5, 2.0));
        let s = compose_stack(&w, Encoder::new(Method::Gadf), Layout::RgbXyz).unwrap();
        assert_eq!(s.planes.len(), 3);
        for p in &s.planes {
            assert_eq!(p.n, 100);
            for i in 0..100 {
                for j in 0..100 {
                    assert_eq!(p.get(i, j), -p.get(j, i));
                }
            }
        }
        assert_eq!(s.planes[1].source_channel, "accel_y");

        let s = compose_stack(&w, Encoder::new(Method::Gasf), Layout::PlanesXyza).unwrap();
        assert_eq!(s.planes.len(), 4);
        let avg: Vec<f64> = (0..100)
            .map(|i| {
                (w.channels[0].values()[i] + w.channels[1].values()[i] + w.channels[2].values()[i])
                    / 3.0
            })
            .collect();
        assert_eq!(s.planes[3].matrix, gasf(&rescale_values(&avg).unwrap()).matrix);

        let g = compose_stack(&w, Encoder::new(Method::Mtf), Layout::GraySingle).unwrap();
        assert_eq!(g.planes.len(), 1);
        assert_eq!(g.planes[0].source_channel, "accel_avg");
    }

    #[test]
    fn compose_identical_axes() {
        let v = wave(50, 0.4, 0.3);
        let w = accel_window(v.clone(), v.clone(), v);
        let s = compose_stack(&w, Encoder::new(Method::Mtf), Layout::RgbXyz).unwrap();
        assert_eq!(s.planes[0].matrix, s.planes[1].matrix);
        assert_eq!(s.planes[1].matrix, s.planes[2].matrix);
    }

    #[test]
    fn compose_missing_channel() {
        let mut w = accel_window(wave(10, 0.1, 0.0), wave(10, 0.2, 0.0), wave(10, 0.3, 0.0));
        w.channels.remove(1);
        let err = compose_stack(&w, Encoder::new(Method::Gasf), Layout::RgbXyz).unwrap_err();
        assert!(err.to_string().contains("accel_y"));
    }

    #[test]
    fn batch_encoding_sorted_by_key() {
        let mut ws = Vec::new();
        for (p, s) in [(2u32, 40usize), (1, 20), (2, 0), (1, 0)] {
            let mut w = accel_window(wave(16, 0.1, s as f64), wave(16, 0.2, 0.0), wave(16, 0.3, 0.0));
            w.participant_id = p;
            w.start_index = s;
            ws.push(w);
        }
        let out = encode_windows(&ws, Encoder::new(Method::Gasf), Layout::RgbXyz).unwrap();
        let keys: Vec<_> = out.iter().map(|e| (e.participant_id, e.start_index)).collect();
        assert_eq!(keys, vec![(1, 0), (1, 20), (2, 0), (2, 40)]);
    }

    proptest! {
        #[test]
        fn gasf_time_reversal(xs in prop::collection::vec(-1.0f64..=1.0, 1..32)) {
            let g = gasf(&rs(&xs));
            let rev: Vec<f64> = xs.iter().rev().copied().collect();
            let gr = gasf(&rs(&rev));
            let n = xs.len();
            for i in 0..n {
                for j in 0..n {
                    prop_assert_eq!(gr.get(i, j), g.get(n - 1 - i, n - 1 - j));
                }
            }
        }

        #[test]
        fn encoders_are_repeatable(xs in prop::collection::vec(-1.0f64..=1.0, 2..32), q in 2usize..6) {
            let x = rs(&xs);
            prop_assert_eq!(gasf(&x), gasf(&x));
            prop_assert_eq!(gadf(&x), gadf(&x));
            let m = fit_markov(&x, q).unwrap();
            prop_assert_eq!(mtf(&x, &m), mtf(&x, &fit_markov(&x, q).unwrap()));
        }
    }
}
