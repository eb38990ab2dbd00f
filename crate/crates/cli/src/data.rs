//! Dataset loading shared by the subcommands.

use std::fmt;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ts2img::encode::ACCEL_CHANNELS;
use ts2img::ingest::{self, CsvOptions};
use ts2img::series::{Series, Window};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum InputFormat {
    /// `.csv` files and directories are physiological, anything else WISDM.
    Auto,
    /// WISDM raw accelerometer text.
    Wisdm,
    /// Header-led physiological CSV, one file per participant.
    Physio,
}

impl FromStr for InputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        <Self as clap::ValueEnum>::from_str(s, true)
    }
}

impl fmt::Display for InputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputFormat::Auto => "auto",
            InputFormat::Wisdm => "wisdm",
            InputFormat::Physio => "physio",
        })
    }
}

#[derive(Debug, Clone)]
pub struct DataOpts {
    pub format: InputFormat,
    pub window: usize,
    pub step: usize,
    /// Physiological channels to keep; all when `None`.
    pub channels: Option<Vec<String>>,
    pub label_base: Option<i64>,
    pub rate_hz: f64,
    /// Keep the first this many users or participants.
    pub subset: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct Loaded {
    pub windows: Vec<Window>,
    pub channels: Vec<String>,
    pub format: InputFormat,
    pub label_base: i64,
}

impl Loaded {
    pub fn channel_refs(&self) -> Vec<&str> {
        self.channels.iter().map(String::as_str).collect()
    }

    pub fn n_classes(&self) -> usize {
        self.windows.iter().map(|w| w.label + 1).max().unwrap_or(0)
    }
}

/// `10users` -> 10.
pub fn parse_subset(s: &str) -> Result<usize, String> {
    let digits = s.trim().trim_end_matches("users").trim_end_matches("participants");
    match digits.parse::<usize>() {
        Ok(n) if n > 0 => Ok(n),
        _ => Err(format!("expected a positive count like `10users`, got `{s}`")),
    }
}

pub fn resolve_format(path: &Path, f: InputFormat) -> InputFormat {
    match f {
        InputFormat::Auto if path.is_dir() || path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) => {
            InputFormat::Physio
        }
        InputFormat::Auto => InputFormat::Wisdm,
        other => other,
    }
}

pub fn load(path: &Path, opts: &DataOpts) -> Result<Loaded, CliError> {
    match resolve_format(path, opts.format) {
        InputFormat::Physio => load_physio(path, opts),
        _ => load_wisdm(path, opts),
    }
}

fn load_wisdm(path: &Path, opts: &DataOpts) -> Result<Loaded, CliError> {
    let f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let (mut records, stats) = ingest::parse_wisdm(BufReader::new(f))?;
    eprintln!(
        "{}: {} lines, {} records, {} rejected",
        path.display(),
        stats.total_lines,
        stats.accepted,
        stats.rejected
    );
    if let Some(n) = opts.subset {
        records = ingest::subset_users(&records, n);
    }
    Ok(Loaded {
        windows: ingest::wisdm_windows(&records, opts.window, opts.step)?,
        channels: ACCEL_CHANNELS.iter().map(|s| s.to_string()).collect(),
        format: InputFormat::Wisdm,
        label_base: 0,
    })
}

/// CSV files of a directory in name order, or the single file given.
pub fn csv_files(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| CliError::io(path, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::Config(format!("no .csv files in {}", path.display())));
    }
    Ok(files)
}

/// Channel columns of a physiological CSV header.
fn header_channels(path: &Path) -> Result<Vec<String>, CliError> {
    let f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut line = String::new();
    BufReader::new(f).read_line(&mut line).map_err(|e| CliError::io(path, e))?;
    Ok(line
        .trim_end_matches(['\r', '\n'])
        .split(',')
        .map(|c| c.trim().trim_matches('"').to_string())
        .filter(|c| !c.is_empty() && !matches!(c.as_str(), "timestamp" | "label" | "user"))
        .collect())
}

fn load_physio(path: &Path, opts: &DataOpts) -> Result<Loaded, CliError> {
    let mut files = csv_files(path)?;
    if let Some(n) = opts.subset {
        files.truncate(n);
    }
    let channels = match &opts.channels {
        Some(c) => c.clone(),
        None => header_channels(&files[0])?,
    };
    let schema: Vec<&str> = channels.iter().map(String::as_str).collect();
    let mut tables = Vec::with_capacity(files.len());
    for (i, f) in files.iter().enumerate() {
        let file = std::fs::File::open(f).map_err(|e| CliError::io(f, e))?;
        let table = ingest::parse_physio_csv(file, &schema, &CsvOptions::default())
            .map_err(|e| CliError::Config(format!("{}: {e}", f.display())))?;
        let id = table.frames.first().and_then(|fr| fr.user).unwrap_or(i as u32 + 1);
        tables.push((id, table));
    }
    let label_base = match opts.label_base {
        Some(b) => b,
        None => tables
            .iter()
            .flat_map(|(_, t)| t.frames.iter().filter_map(|f| f.label))
            .min()
            .ok_or_else(|| CliError::Config("physiological input has no labels".into()))?,
    };
    let mut windows = Vec::new();
    for (id, t) in &tables {
        windows.extend(ingest::physio_windows(t, &schema, opts.rate_hz, label_base, opts.window, opts.step, *id)?);
    }
    Ok(Loaded {
        windows,
        channels,
        format: InputFormat::Physio,
        label_base,
    })
}

/// Renames three channels of `w` to the accelerometer axes so they can fill
/// the RGB planes of an image stack.
pub fn as_axes(w: &Window, names: &[String]) -> Result<Window, CliError> {
    if names.len() != 3 {
        return Err(CliError::Config(format!("image planes need exactly 3 channels, got {}", names.len())));
    }
    let mut channels = Vec::with_capacity(3);
    for (name, axis) in names.iter().zip(ACCEL_CHANNELS) {
        let c = w
            .channel(name)
            .ok_or_else(|| CliError::Config(format!("window has no channel `{name}`")))?;
        channels.push(Series::new(axis, c.sample_rate_hz(), c.values().to_vec())?);
    }
    Ok(Window {
        channels,
        ..w.clone()
    })
}
