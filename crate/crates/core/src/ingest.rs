//! WISDM accelerometer logs, physiological CSV files, and deterministic
//! synthetic stand-ins for datasets that cannot be redistributed.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt;
use std::io::{BufRead, Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encode::ACCEL_CHANNELS;
use crate::nn::ops::mix64;
use crate::series::{segment_windows, MultiChannelSeries, Series, Window};
use crate::{Error, Result};

/// WISDM sampling rate.
pub const WISDM_RATE_HZ: f64 = 20.0;
/// Nanoseconds between WISDM samples at 20 Hz.
const WISDM_PERIOD_NS: i64 = 50_000_000;
/// Number of rejected line numbers kept in [`ParseStats`].
const REJECT_SAMPLE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Activity {
    Walking,
    Jogging,
    Upstairs,
    Downstairs,
    Sitting,
    Standing,
}

impl Activity {
    pub const ALL: [Activity; 6] = [
        Activity::Walking,
        Activity::Jogging,
        Activity::Upstairs,
        Activity::Downstairs,
        Activity::Sitting,
        Activity::Standing,
    ];

    /// Class id used for training.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Activity::Walking => "Walking",
            Activity::Jogging => "Jogging",
            Activity::Upstairs => "Upstairs",
            Activity::Downstairs => "Downstairs",
            Activity::Sitting => "Sitting",
            Activity::Standing => "Standing",
        }
    }
}

impl fmt::Display for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Activity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Domain(format!("unknown activity `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivityRecord {
    pub user_id: u32,
    pub activity: Activity,
    /// Nanoseconds, as recorded.
    pub timestamp: i64,
    pub accel_x: f64,
    pub accel_y: f64,
    pub accel_z: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseStats {
    /// Non-empty lines seen.
    pub total_lines: usize,
    pub accepted: usize,
    pub rejected: usize,
    /// 1-based line numbers of the first rejected lines.
    pub first_rejected: Vec<usize>,
}

fn parse_wisdm_line(line: &str) -> Option<ActivityRecord> {
    let body = line.trim().trim_end_matches(|c: char| c == ';' || c.is_whitespace());
    if body.contains(';') {
        return None;
    }
    let fields: Vec<&str> = body.split(',').map(str::trim).collect();
    let [user, activity, ts, x, y, z] = fields.as_slice() else {
        return None;
    };
    let num = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite());
    Some(ActivityRecord {
        user_id: user.parse().ok()?,
        activity: activity.parse().ok()?,
        timestamp: ts.parse().ok()?,
        accel_x: num(x)?,
        accel_y: num(y)?,
        accel_z: num(z)?,
    })
}

/// Parses the raw WISDM text format, one `user,activity,timestamp,x,y,z;`
/// record per line. Malformed lines, including lines with empty fields, are
/// counted and skipped.
pub fn parse_wisdm(mut reader: impl BufRead) -> Result<(Vec<ActivityRecord>, ParseStats)> {
    let mut records = Vec::new();
    let mut stats = ParseStats::default();
    let mut buf = Vec::new();
    let mut line_no = 0;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        line_no += 1;
        let text = String::from_utf8_lossy(&buf);
        if text.trim().is_empty() {
            continue;
        }
        stats.total_lines += 1;
        let parsed = std::str::from_utf8(&buf).ok().and_then(parse_wisdm_line);
        match parsed {
            Some(r) => {
                stats.accepted += 1;
                records.push(r);
            }
            None => {
                stats.rejected += 1;
                if stats.first_rejected.len() < REJECT_SAMPLE {
                    stats.first_rejected.push(line_no);
                }
            }
        }
    }
    Ok((records, stats))
}

/// Writes records in the WISDM text format. Values use the shortest
/// round-trip representation, so parsing the output restores them exactly.
pub fn write_wisdm(records: &[ActivityRecord], mut w: impl Write) -> Result<()> {
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{};",
            r.user_id, r.activity, r.timestamp, r.accel_x, r.accel_y, r.accel_z
        )?;
    }
    Ok(())
}

/// A contiguous run of one user performing one activity, sorted by timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivityRun {
    pub user_id: u32,
    pub activity: Activity,
    /// Index of the run's first record among the user's records, in file order.
    pub offset: usize,
    pub records: Vec<ActivityRecord>,
}

/// Splits records into per-(user, activity) runs in file order, sorting each
/// run stably by timestamp.
pub fn activity_runs(records: &[ActivityRecord]) -> Vec<ActivityRun> {
    let mut runs: Vec<ActivityRun> = Vec::new();
    let mut seen: BTreeMap<u32, usize> = BTreeMap::new();
    for r in records {
        let count = seen.entry(r.user_id).or_insert(0);
        match runs.last_mut() {
            Some(run) if run.user_id == r.user_id && run.activity == r.activity => run.records.push(*r),
            _ => runs.push(ActivityRun {
                user_id: r.user_id,
                activity: r.activity,
                offset: *count,
                records: vec![*r],
            }),
        }
        *count += 1;
    }
    for run in &mut runs {
        run.records.sort_by_key(|r| r.timestamp);
    }
    runs
}

/// Sliding windows over each activity run. Start indices count records of
/// the user in file order, so `(user, start)` is unique.
pub fn wisdm_windows(records: &[ActivityRecord], window: usize, step: usize) -> Result<Vec<Window>> {
    let mut out = Vec::new();
    for run in activity_runs(records) {
        let axis = |f: fn(&ActivityRecord) -> f64, name: &str| {
            Series::new(name, WISDM_RATE_HZ, run.records.iter().map(f).collect())
        };
        let channels = MultiChannelSeries::new(vec![
            axis(|r| r.accel_x, ACCEL_CHANNELS[0])?,
            axis(|r| r.accel_y, ACCEL_CHANNELS[1])?,
            axis(|r| r.accel_z, ACCEL_CHANNELS[2])?,
        ]);
        let labels = vec![run.activity.index(); run.records.len()];
        for mut w in segment_windows(&channels, &labels, window, step, run.user_id)? {
            w.start_index += run.offset;
            out.push(w);
        }
    }
    Ok(out)
}

/// Distinct user ids in ascending order.
pub fn wisdm_users(records: &[ActivityRecord]) -> Vec<u32> {
    let mut users: Vec<u32> = records.iter().map(|r| r.user_id).collect();
    users.sort_unstable();
    users.dedup();
    users
}

/// Records of the `n` lowest-numbered users.
pub fn subset_users(records: &[ActivityRecord], n: usize) -> Vec<ActivityRecord> {
    let keep: Vec<u32> = wisdm_users(records).into_iter().take(n).collect();
    records
        .iter()
        .filter(|r| keep.binary_search(&r.user_id).is_ok())
        .copied()
        .collect()
}

// ---------------------------------------------------------------- physio CSV

/// One timestamped row of a physiological recording. `values` follow the
/// owning table's channel order.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysioFrame {
    /// Milliseconds.
    pub timestamp: i64,
    pub values: Vec<f64>,
    pub label: Option<i64>,
    pub user: Option<u32>,
}

/// Frames sharing one channel set.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysioTable {
    pub channels: Vec<String>,
    pub frames: Vec<PhysioFrame>,
}

impl PhysioTable {
    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c == name)
    }

    /// Value of `name` in `frame`.
    pub fn get(&self, frame: &PhysioFrame, name: &str) -> Option<f64> {
        self.channel_index(name).map(|i| frame.values[i])
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.channel_index(name)?;
        Some(self.frames.iter().map(|f| f.values[i]).collect())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvOptions {
    /// Skip rows with unparseable cells instead of failing.
    pub skip_bad_rows: bool,
    /// Inclusive range every present label must fall in.
    pub label_range: Option<(i64, i64)>,
}

/// Reads a header-led CSV with a `timestamp` column, every channel in
/// `schema`, and optional `label` and `user` columns. Extra columns are
/// ignored.
pub fn parse_physio_csv(mut reader: impl Read, schema: &[&str], opts: &CsvOptions) -> Result<PhysioTable> {
    let mut bytes = Vec::new();
    reader.read_to_end(&mut bytes)?;
    // Line numbers come from byte offsets; the csv reader miscounts CRLF and
    // may report an offset on the preceding line terminator.
    let line_of = |offset: u64| {
        let mut at = offset as usize;
        while at < bytes.len() && matches!(bytes[at], b'\r' | b'\n') {
            at += 1;
        }
        1 + bytes[..at].iter().filter(|&&b| b == b'\n').count()
    };
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(bytes.as_slice());
    let header = rdr.headers().map_err(csv_err)?.clone();
    let col = |name: &str| header.iter().position(|h| h == name);
    let ts_col = col("timestamp").ok_or_else(|| Error::MissingChannel("timestamp".into()))?;
    let chan_cols = schema
        .iter()
        .map(|&c| col(c).ok_or_else(|| Error::MissingChannel(c.to_string())))
        .collect::<Result<Vec<_>>>()?;
    let label_col = col("label");
    let user_col = col("user");

    let mut frames = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let line = rec.position().map_or(0, |p| line_of(p.byte()));
        match parse_physio_row(&rec, ts_col, &chan_cols, label_col, user_col, &header, opts) {
            Ok(f) => frames.push(f),
            Err(_) if opts.skip_bad_rows => {}
            Err(message) => return Err(Error::Row { line, message }),
        }
    }
    Ok(PhysioTable {
        channels: schema.iter().map(|s| s.to_string()).collect(),
        frames,
    })
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => Error::Io(e),
        other => Error::Format(format!("csv: {other:?}")),
    }
}

fn parse_physio_row(
    rec: &csv::StringRecord,
    ts_col: usize,
    chan_cols: &[usize],
    label_col: Option<usize>,
    user_col: Option<usize>,
    header: &csv::StringRecord,
    opts: &CsvOptions,
) -> std::result::Result<PhysioFrame, String> {
    let cell = |i: usize| rec.get(i).unwrap_or("");
    let name = |i: usize| header.get(i).unwrap_or("?").to_string();
    let ts = cell(ts_col)
        .parse::<i64>()
        .map_err(|_| format!("timestamp `{}` is not an integer", cell(ts_col)))?;
    let values = chan_cols
        .iter()
        .map(|&i| {
            cell(i)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| format!("column `{}`: `{}` is not a finite number", name(i), cell(i)))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let optional_int = |col: Option<usize>| -> std::result::Result<Option<i64>, String> {
        match col.map(cell) {
            None | Some("") => Ok(None),
            Some(s) => s
                .parse::<i64>()
                .map(Some)
                .map_err(|_| format!("column `{}`: `{s}` is not an integer", name(col.unwrap_or(0)))),
        }
    };
    let label = optional_int(label_col)?;
    if let (Some(l), Some((lo, hi))) = (label, opts.label_range) {
        if l < lo || l > hi {
            return Err(format!("label {l} outside {lo}..={hi}"));
        }
    }
    let user = optional_int(user_col)?
        .map(|u| u32::try_from(u).map_err(|_| format!("user id {u} out of range")))
        .transpose()?;
    Ok(PhysioFrame {
        timestamp: ts,
        values,
        label,
        user,
    })
}

/// Writes a table in the layout [`parse_physio_csv`] reads. The `label` and
/// `user` columns appear when any frame carries them.
pub fn write_physio_csv(table: &PhysioTable, w: impl Write) -> Result<()> {
    let with_label = table.frames.iter().any(|f| f.label.is_some());
    let with_user = table.frames.iter().any(|f| f.user.is_some());
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["timestamp".to_string()];
    header.extend(table.channels.iter().cloned());
    if with_label {
        header.push("label".into());
    }
    if with_user {
        header.push("user".into());
    }
    wtr.write_record(&header).map_err(csv_err)?;
    for f in &table.frames {
        let mut row = vec![f.timestamp.to_string()];
        row.extend(f.values.iter().map(|v| v.to_string()));
        let opt = |v: Option<String>| v.unwrap_or_default();
        if with_label {
            row.push(opt(f.label.map(|l| l.to_string())));
        }
        if with_user {
            row.push(opt(f.user.map(|u| u.to_string())));
        }
        wtr.write_record(&row).map_err(csv_err)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Sliding windows over selected channels of one participant's table.
/// Labels become class ids `label - label_base`.
pub fn physio_windows(
    table: &PhysioTable,
    channels: &[&str],
    sample_rate_hz: f64,
    label_base: i64,
    window: usize,
    step: usize,
    participant_id: u32,
) -> Result<Vec<Window>> {
    let series = channels
        .iter()
        .map(|&c| {
            let col = table.column(c).ok_or_else(|| Error::MissingChannel(c.to_string()))?;
            Series::new(c, sample_rate_hz, col)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = table
        .frames
        .iter()
        .map(|f| match f.label {
            Some(l) if l >= label_base => Ok((l - label_base) as usize),
            Some(l) => Err(Error::Domain(format!("label {l} below base {label_base}"))),
            None => Err(Error::Domain(format!("frame at {} ms has no label", f.timestamp))),
        })
        .collect::<Result<Vec<_>>>()?;
    segment_windows(&MultiChannelSeries::new(series), &labels, window, step, participant_id)
}

// ---------------------------------------------------------------- synthetic physio

/// One synthetic channel: `mean + amplitude·sin(2π·f·t) + noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: String,
    pub base_freq_hz: f64,
    pub amplitude: f64,
    pub noise_sigma: f64,
    pub mean: f64,
}

impl ChannelSpec {
    pub fn new(name: &str, base_freq_hz: f64, amplitude: f64, noise_sigma: f64, mean: f64) -> Self {
        Self {
            name: name.to_string(),
            base_freq_hz,
            amplitude,
            noise_sigma,
            mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_participants: usize,
    pub n_classes: usize,
    pub frames_per_participant: usize,
    pub channel_specs: Vec<ChannelSpec>,
    pub seed: u64,
    /// In `[0, 1]`. Class `k` scales every base frequency by `1 + k·s` and
    /// shifts every mean by `k·s·amplitude`; `0` makes classes identical.
    pub class_separability: f64,
    pub sample_rate_hz: f64,
    /// Label written for class 0; class `k` is written as `label_base + k`.
    pub label_base: i64,
    /// Length of one labelled segment, in frames.
    pub segment_frames: usize,
    /// Window length the dataset must support.
    pub window_len: usize,
    /// Spread of per-participant mean offsets, as a fraction of amplitude.
    pub participant_spread: f64,
}

impl SynthConfig {
    /// Two-class stressor-style recording of heart rate, HRV and EDA, centred
    /// on typical resting means (HR 79.4 BPM, EDA 320.4 kΩ).
    pub fn stressor(seed: u64) -> Self {
        Self {
            n_participants: 20,
            n_classes: 2,
            frames_per_participant: 2000,
            channel_specs: vec![
                ChannelSpec::new("hr", 0.25, 11.6, 2.0, 79.4),
                ChannelSpec::new("hrv", 0.1, 15.0, 3.0, 50.0),
                ChannelSpec::new("eda", 0.05, 158.0, 20.0, 320.4),
            ],
            seed,
            class_separability: 0.5,
            sample_rate_hz: 4.0,
            label_base: 0,
            segment_frames: 400,
            window_len: 100,
            participant_spread: 0.3,
        }
    }

    /// Five-point valence self-reports (labels 1..=5) with HR, HRV, EDA and
    /// body temperature.
    pub fn valence(seed: u64) -> Self {
        Self {
            n_participants: 20,
            n_classes: 5,
            frames_per_participant: 2000,
            channel_specs: vec![
                ChannelSpec::new("hr", 0.25, 11.6, 2.0, 79.4),
                ChannelSpec::new("hrv", 0.1, 15.0, 3.0, 50.0),
                ChannelSpec::new("eda", 0.05, 158.0, 20.0, 320.4),
                ChannelSpec::new("body_temp", 0.02, 0.3, 0.05, 33.5),
            ],
            seed,
            class_separability: 0.3,
            sample_rate_hz: 4.0,
            label_base: 1,
            segment_frames: 400,
            window_len: 100,
            participant_spread: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.n_classes < 2 {
            return bad(format!("n_classes must be >= 2, got {}", self.n_classes));
        }
        if self.n_participants == 0 {
            return bad("n_participants must be >= 1".into());
        }
        if self.frames_per_participant < self.window_len {
            return bad(format!(
                "frames_per_participant {} is shorter than the window length {}",
                self.frames_per_participant, self.window_len
            ));
        }
        if !(0.0..=1.0).contains(&self.class_separability) {
            return bad(format!("class_separability {} outside [0, 1]", self.class_separability));
        }
        if self.channel_specs.is_empty() {
            return bad("at least one channel is required".into());
        }
        if !(self.sample_rate_hz > 0.0) || self.segment_frames == 0 {
            return bad("sample rate and segment length must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantData {
    pub id: u32,
    pub table: PhysioTable,
}

/// Generates one table per participant. Participant `p` draws its offsets,
/// segment order and noise from a generator seeded by `(seed, p)`, so the
/// output is a pure function of the config.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<Vec<ParticipantData>> {
    cfg.validate()?;
    let channels: Vec<String> = cfg.channel_specs.iter().map(|c| c.name.clone()).collect();
    let sep = cfg.class_separability;
    let period_ms = 1000.0 / cfg.sample_rate_hz;
    (0..cfg.n_participants)
        .map(|p| {
            let id = p as u32 + 1;
            let mut rng = ChaCha8Rng::seed_from_u64(mix64(cfg.seed, id as u64));
            let offsets: Vec<(f64, f64)> = cfg
                .channel_specs
                .iter()
                .map(|c| {
                    let shift = Normal::new(0.0, cfg.participant_spread * c.amplitude)
                        .map(|d| d.sample(&mut rng))
                        .unwrap_or(0.0);
                    (shift, rng.random_range(0.0..2.0 * PI))
                })
                .collect();
            let segments = cfg.frames_per_participant.div_ceil(cfg.segment_frames);
            let mut classes: Vec<usize> = (0..segments).map(|s| s % cfg.n_classes).collect();
            classes.shuffle(&mut rng);
            let noise: Vec<Normal<f64>> = cfg
                .channel_specs
                .iter()
                .map(|c| Normal::new(0.0, c.noise_sigma.max(0.0)).expect("finite sigma"))
                .collect();
            let frames = (0..cfg.frames_per_participant)
                .map(|t| {
                    let k = classes[t / cfg.segment_frames];
                    let secs = t as f64 / cfg.sample_rate_hz;
                    let values = cfg
                        .channel_specs
                        .iter()
                        .zip(&offsets)
                        .zip(&noise)
                        .map(|((c, &(shift, phase)), n)| {
                            let f = c.base_freq_hz * (1.0 + k as f64 * sep);
                            c.mean
                                + shift
                                + k as f64 * sep * c.amplitude
                                + c.amplitude * (2.0 * PI * f * secs + phase).sin()
                                + n.sample(&mut rng)
                        })
                        .collect();
                    PhysioFrame {
                        timestamp: (t as f64 * period_ms).round() as i64,
                        values,
                        label: Some(cfg.label_base + k as i64),
                        user: Some(id),
                    }
                })
                .collect();
            Ok(ParticipantData {
                id,
                table: PhysioTable {
                    channels: channels.clone(),
                    frames,
                },
            })
        })
        .collect()
}

// ---------------------------------------------------------------- synthetic WISDM

/// Settings for synthetic accelerometer logs in the WISDM layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivitySynthConfig {
    pub n_users: usize,
    /// Consecutive samples each user records per activity.
    pub samples_per_activity: usize,
    pub seed: u64,
    /// Standard deviation of white sensor noise, m/s².
    pub noise: f64,
    /// Relative per-user variation of cadence and intensity.
    pub user_variation: f64,
}

impl Default for ActivitySynthConfig {
    fn default() -> Self {
        Self {
            n_users: 10,
            samples_per_activity: 600,
            seed: 0,
            noise: 0.8,
            user_variation: 0.15,
        }
    }
}

/// Per-activity gait model: cadence in Hz, gravity direction, and the
/// oscillation amplitude on each axis.
fn gait(a: Activity) -> (f64, [f64; 3], [f64; 3]) {
    match a {
        Activity::Walking => (1.9, [0.0, 9.6, 1.0], [2.5, 4.0, 1.5]),
        Activity::Jogging => (2.8, [0.0, 9.0, 2.0], [6.0, 9.0, 4.0]),
        Activity::Upstairs => (1.5, [1.0, 9.0, 3.0], [2.0, 3.0, 2.5]),
        Activity::Downstairs => (2.2, [-1.0, 9.2, -1.5], [3.0, 5.0, 1.5]),
        Activity::Sitting => (0.3, [2.0, 2.5, 9.1], [0.1, 0.1, 0.1]),
        Activity::Standing => (0.3, [0.5, 9.7, 0.8], [0.15, 0.15, 0.15]),
    }
}

/// Synthetic accelerometer records for `n_users` users, each performing all
/// six activities in a user-specific order at 20 Hz.
pub fn synth_activity(cfg: &ActivitySynthConfig) -> Vec<ActivityRecord> {
    let noise = Normal::new(0.0, cfg.noise.max(0.0)).expect("finite noise");
    let mut out = Vec::with_capacity(cfg.n_users * 6 * cfg.samples_per_activity);
    for u in 0..cfg.n_users {
        let user_id = u as u32 + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(mix64(cfg.seed, user_id as u64));
        let mut order = Activity::ALL;
        order.shuffle(&mut rng);
        let mut ts: i64 = rng.random_range(1_000_000_000i64..9_000_000_000_000i64);
        for a in order {
            let (cadence, gravity, amp) = gait(a);
            let v = cfg.user_variation;
            let cadence = cadence * (1.0 + rng.random_range(-v..=v));
            let scale = 1.0 + rng.random_range(-v..=v);
            let phase: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..2.0 * PI));
            for t in 0..cfg.samples_per_activity {
                let secs = t as f64 / WISDM_RATE_HZ;
                let w = 2.0 * PI * cadence * secs;
                let axis = |i: usize, rng: &mut ChaCha8Rng| {
                    // The second harmonic gives each gait a distinct shape.
                    gravity[i]
                        + scale * amp[i] * ((w + phase[i]).sin() + 0.4 * (2.0 * w + phase[(i + 1) % 3]).sin())
                        + noise.sample(rng)
                };
                let (x, y, z) = (axis(0, &mut rng), axis(1, &mut rng), axis(2, &mut rng));
                out.push(ActivityRecord {
                    user_id,
                    activity: a,
                    timestamp: ts,
                    accel_x: x,
                    accel_y: y,
                    accel_z: z,
                });
                ts += WISDM_PERIOD_NS;
            }
        }
    }
    out
}
