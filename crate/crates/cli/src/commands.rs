use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use ts2img::encode::{encode_windows, EncodedWindow, Encoder, Layout, Method, DEFAULT_BINS};
use ts2img::eval::{holdout_split, loocv_folds, score, CrossValReport, EvalReport, Split};
use ts2img::imageio::{read_tensor, render_png, stack_tensor, tsim_header, write_tensor};
use ts2img::ingest::{self, ActivitySynthConfig, SynthConfig};
use ts2img::nn::{load_checkpoint, save_checkpoint, Dataset, EpochStats, Model, Mode, Provenance, Tensor, TrainConfig};
use ts2img::transfer::tasks::{gaf_texture_task, window_set, WindowSet};
use ts2img::transfer::{
    build_cnn1d, build_fusion, fit_and_score, pretrain_source_2d, stacks_tensor, transfer_head, trunk_branch,
    ArchSpec, ChannelScaler, Frozen, FusionSpec, TransferPlan, DEFAULT_NEW_HEAD,
};
use ts2img::par;

use crate::config::Settings;
use crate::data::{self, DataOpts, InputFormat, Loaded};
use crate::error::CliError;
use crate::manifest::{manifest_path, RunManifest};
use crate::{Cli, Command, DataArgs, EvalMode, OptimArgs, SynthKind};

type Res<T> = Result<T, CliError>;

struct Run {
    settings: Settings,
    manifest: RunManifest,
    started: Instant,
}

impl Run {
    fn finish(mut self, output: &Path, is_dir: bool) -> Res<()> {
        for k in self.settings.unused() {
            eprintln!("warning: config key `{k}` is not used by this command");
        }
        self.manifest.config = self.settings.snapshot().clone();
        self.manifest.wall_time_s = self.started.elapsed().as_secs_f64();
        self.manifest.write(&manifest_path(output, is_dir))
    }

    fn data(&mut self, a: &DataArgs) -> Res<DataOpts> {
        let s = &mut self.settings;
        let subset = match s.get_opt::<String>("subset", a.subset.clone())? {
            Some(v) => Some(data::parse_subset(&v).map_err(CliError::Config)?),
            None => None,
        };
        Ok(DataOpts {
            format: s.get("format", a.format, InputFormat::Auto)?,
            window: s.get("window", a.window, 100)?,
            step: s.get("step", a.step, 20)?,
            channels: s.get_list("channels", a.channels.clone())?,
            label_base: s.get_opt("label_base", a.label_base)?,
            rate_hz: s.get("rate", a.rate, 4.0)?,
            subset,
        })
    }

    fn load(&mut self, a: &DataArgs) -> Res<Loaded> {
        let opts = self.data(a)?;
        self.manifest.add_input(&a.input)?;
        let mut loaded = data::load(&a.input, &opts)?;
        loaded.windows.sort_by_key(|w| (w.participant_id, w.start_index));
        if loaded.windows.is_empty() {
            return Err(CliError::Config(format!(
                "no windows of length {} in {}",
                opts.window,
                a.input.display()
            )));
        }
        if loaded.format == InputFormat::Physio {
            self.settings.record("label_base", loaded.label_base);
        }
        eprintln!("{} windows over {} channels", loaded.windows.len(), loaded.channels.len());
        Ok(loaded)
    }

    fn optim(&mut self, a: &OptimArgs, batch_default: usize) -> Res<Optim> {
        let d = TrainConfig::default();
        let s = &mut self.settings;
        let seed = s.seed(a.seed)?;
        self.manifest.seeds.insert("seed".into(), seed);
        Ok(Optim {
            train: TrainConfig {
                epochs: s.get("epochs", a.epochs, d.epochs)?,
                batch_size: s.get("batch_size", a.batch_size, batch_default)?,
                learning_rate: s.get("lr", a.lr, d.learning_rate)?,
                momentum: s.get("momentum", a.momentum, d.momentum)?,
                seed,
            },
            test_fraction: s.get("test_fraction", a.test_fraction, 0.2)?,
            classes: s.get_opt("classes", a.classes)?,
        })
    }

    fn method(&mut self, flag: Option<String>) -> Res<Method> {
        let m = self.settings.get("method", flag, "gasf".to_string())?;
        Ok(m.parse()?)
    }
}

struct Optim {
    train: TrainConfig,
    test_fraction: f64,
    classes: Option<usize>,
}

impl Optim {
    fn n_classes(&self, loaded_classes: usize) -> Res<usize> {
        let n = self.classes.unwrap_or(loaded_classes);
        if n < 2 || n < loaded_classes {
            return Err(CliError::Config(format!(
                "class count {n} is too small for labels 0..{}",
                loaded_classes.saturating_sub(1)
            )));
        }
        Ok(n)
    }
}

pub fn dispatch(cli: Cli, argv: Vec<String>) -> Res<()> {
    let mut settings = Settings::load(cli.config.as_deref())?;
    let jobs = settings.get("jobs", cli.jobs, 0usize)?;
    let mut run = Run {
        settings,
        manifest: RunManifest::new(argv),
        started: Instant::now(),
    };
    if let Some(c) = &cli.config {
        run.manifest.add_input(c)?;
    }
    par::with_jobs(jobs, move || match cli.command {
        Command::Synth(a) => synth(run, a),
        Command::Encode(a) => encode(run, a),
        Command::Train(a) => train(run, a),
        Command::Pretrain2d(a) => pretrain2d(run, a),
        Command::Transfer(a) => transfer(run, a),
        Command::Fuse(a) => fuse(run, a),
        Command::Eval(a) => eval(run, a),
        Command::Inspect(a) => inspect(&a.path),
    })
}

fn create_dir(p: &Path) -> Res<()> {
    std::fs::create_dir_all(p).map_err(|e| CliError::io(p, e))
}

fn parent_dir(p: &Path) -> Res<()> {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => create_dir(d),
        _ => Ok(()),
    }
}

fn print_json(v: &serde_json::Value) -> Res<()> {
    use std::io::Write;
    let text = serde_json::to_string_pretty(v)? + "\n";
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Io(format!("standard output: {e}"))),
        _ => Ok(()),
    }
}

fn source_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| p.display().to_string())
}

// ---------------------------------------------------------------- synth

fn synth(mut run: Run, a: crate::SynthArgs) -> Res<()> {
    let s = &mut run.settings;
    let kind = match s.get_opt::<String>("kind", a.kind.map(|k| format!("{k:?}").to_lowercase()))? {
        Some(k) => <SynthKind as clap::ValueEnum>::from_str(&k, true).map_err(CliError::Config)?,
        None => SynthKind::Physio,
    };
    let seed = s.seed(a.seed)?;
    run.manifest.seeds.insert("seed".into(), seed);
    create_dir(&a.output)?;
    match kind {
        SynthKind::Physio => {
            let classes = s.get("classes", a.classes, 2usize)?;
            let mut cfg = if classes == 2 { SynthConfig::stressor(seed) } else { SynthConfig::valence(seed) };
            cfg.n_classes = classes;
            cfg.n_participants = s.get("participants", a.participants, cfg.n_participants)?;
            cfg.frames_per_participant = s.get("frames", a.frames, cfg.frames_per_participant)?;
            cfg.class_separability = s.get("separability", a.separability, cfg.class_separability)?;
            for p in ingest::generate_synthetic(&cfg)? {
                let path = a.output.join(format!("participant_{:03}.csv", p.id));
                let f = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
                ingest::write_physio_csv(&p.table, std::io::BufWriter::new(f))?;
                run.manifest.add_output(&path);
            }
        }
        SynthKind::Activity => {
            let d = ActivitySynthConfig::default();
            let cfg = ActivitySynthConfig {
                n_users: s.get("participants", a.participants, d.n_users)?,
                samples_per_activity: s.get("frames", a.frames, d.samples_per_activity)?,
                seed,
                ..d
            };
            let path = a.output.join("activity.txt");
            let f = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
            ingest::write_wisdm(&ingest::synth_activity(&cfg), std::io::BufWriter::new(f))?;
            run.manifest.add_output(&path);
        }
    }
    eprintln!("wrote {} files to {}", run.manifest.outputs.len(), a.output.display());
    let out = a.output.clone();
    run.finish(&out, true)
}

// ---------------------------------------------------------------- encode

/// Windows ready for `compose_stack`: physiological channels are mapped
/// onto the x, y, z planes.
fn image_windows(run: &mut Run, loaded: &Loaded, flag: Option<Vec<String>>) -> Res<Vec<ts2img::series::Window>> {
    if loaded.format == InputFormat::Wisdm {
        return Ok(loaded.windows.clone());
    }
    let names = match run.settings.get_list("image_channels", flag)? {
        Some(n) => n,
        None => loaded.channels.iter().take(3).cloned().collect(),
    };
    loaded.windows.iter().map(|w| data::as_axes(w, &names)).collect()
}

fn encoder(run: &mut Run, method: Method, bins: Option<usize>) -> Res<Encoder> {
    let bins = run.settings.get("bins", bins, DEFAULT_BINS)?;
    if method == Method::Mtf && bins < 2 {
        return Err(CliError::Config(format!("MTF needs at least 2 bins, got {bins}")));
    }
    Ok(Encoder::new(method).with_bins(bins))
}

fn encode(mut run: Run, a: crate::EncodeArgs) -> Res<()> {
    let method = run.method(a.method.clone())?;
    let enc = encoder(&mut run, method, a.bins)?;
    let layout: Layout = run.settings.get("layout", a.layout.clone(), "rgb_xyz".to_string())?.parse()?;
    let loaded = run.load(&a.data)?;
    let windows = image_windows(&mut run, &loaded, a.image_channels.clone())?;
    let encoded = encode_windows(&windows, enc, layout)?;
    create_dir(&a.output)?;
    let mut index = String::from("file,participant,start,label\n");
    for e in &encoded {
        let stem = format!("{}_{}_{}", e.participant_id, e.start_index, method.as_str());
        let png = a.output.join(format!("{stem}.png"));
        let tsim = a.output.join(format!("{stem}.tsim"));
        if layout != Layout::PlanesXyza {
            render_png(&e.stack, &png)?;
            run.manifest.add_output(&png);
        }
        write_tensor(&stack_tensor(&e.stack), &tsim)?;
        run.manifest.add_output(&tsim);
        let _ = writeln!(index, "{stem}.tsim,{},{},{}", e.participant_id, e.start_index, e.label);
    }
    let index_path = a.output.join("index.csv");
    std::fs::write(&index_path, index).map_err(|e| CliError::io(&index_path, e))?;
    run.manifest.add_output(&index_path);
    eprintln!("encoded {} windows into {}", encoded.len(), a.output.display());
    let out = a.output.clone();
    run.finish(&out, true)
}

// ---------------------------------------------------------------- training helpers

fn split_for(n: usize, fraction: f64, seed: u64) -> Res<Split> {
    Ok(holdout_split(n, fraction, seed)?)
}

fn scaled(set: &WindowSet, train: &[usize]) -> Res<(Tensor<f32>, ChannelScaler)> {
    let scaler = ChannelScaler::fit(&set.x, train)?;
    Ok((scaler.apply(&set.x)?, scaler))
}

fn dataset(inputs: &[&Tensor<f32>], labels: &[usize], idx: &[usize]) -> Res<Dataset<f32>> {
    Ok(Dataset::new(
        inputs.iter().map(|x| x.select(idx)).collect(),
        idx.iter().map(|&i| labels[i]).collect(),
    )?)
}

fn report_json(report: &EvalReport, trace: &[EpochStats], n_train: usize, n_test: usize) -> serde_json::Value {
    json!({
        "report": report,
        "epochs": trace,
        "n_train": n_train,
        "n_test": n_test,
    })
}

fn save(run: &mut Run, model: &Model<f32>, out: &Path, prov: &Provenance) -> Res<()> {
    parent_dir(out)?;
    save_checkpoint(model, out, prov)?;
    run.manifest.add_output(out);
    Ok(())
}

// ---------------------------------------------------------------- train

fn train(mut run: Run, a: crate::TrainCmd) -> Res<()> {
    let loaded = run.load(&a.data)?;
    let o = run.optim(&a.optim, TrainConfig::default().batch_size)?;
    let n_classes = o.n_classes(loaded.n_classes())?;
    let set = window_set(&loaded.windows, &loaded.channel_refs())?;
    let split = split_for(set.len(), o.test_fraction, o.train.seed)?;
    let (x, scaler) = scaled(&set, &split.train)?;
    let train_set = dataset(&[&x], &set.labels, &split.train)?;
    let test_set = dataset(&[&x], &set.labels, &split.test)?;
    let dims = set.x.dims();
    let mut model = build_cnn1d(&ArchSpec::default_1d(n_classes), [dims[1], dims[2]], o.train.seed)?;
    let (report, trace) = fit_and_score(&mut model, &train_set, &test_set, &o.train)?;
    save(&mut run, &model, &a.output, &Provenance::new(source_name(&a.data.input), o.train.seed))?;
    let mut v = report_json(&report, &trace, split.train.len(), split.test.len());
    v["scaler"] = serde_json::to_value(&scaler)?;
    print_json(&v)?;
    run.finish(&a.output, false)
}

// ---------------------------------------------------------------- pretrain2d

/// Stacks listed in an `encode` output directory's `index.csv`.
fn encoded_task(dir: &Path) -> Res<(Tensor<f32>, Vec<usize>)> {
    let index = dir.join("index.csv");
    let text = std::fs::read_to_string(&index).map_err(|e| CliError::io(&index, e))?;
    let mut samples = Vec::new();
    let mut labels = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        let (Some(file), Some(label)) = (cols.first(), cols.get(3)) else {
            return Err(CliError::Config(format!("{} line {}: expected 4 columns", index.display(), i + 1)));
        };
        let label = label
            .trim()
            .parse()
            .map_err(|e| CliError::Config(format!("{} line {}: label: {e}", index.display(), i + 1)))?;
        samples.push(read_tensor(dir.join(file))?);
        labels.push(label);
    }
    if samples.is_empty() {
        return Err(CliError::Config(format!("{} lists no images", index.display())));
    }
    Ok((Tensor::stack(&samples)?, labels))
}

fn pretrain2d(mut run: Run, a: crate::PretrainArgs) -> Res<()> {
    let o = run.optim(&a.optim, TrainConfig::default().batch_size)?;
    let (x, labels, source) = match &a.input {
        Some(dir) => {
            run.manifest.add_input(dir)?;
            let (x, labels) = encoded_task(dir)?;
            (x, labels, source_name(dir))
        }
        None => {
            let images = run.settings.get("images", a.images, 600usize)?;
            let side = run.settings.get("side", a.side, 24usize)?;
            let method = run.method(a.method.clone())?;
            let task = gaf_texture_task(images, side, method, o.train.seed)?;
            let x = task.inputs.into_iter().next().expect("one input");
            (x, task.labels, "synthetic-gaf-texture".to_string())
        }
    };
    let n_classes = o.n_classes(labels.iter().map(|l| l + 1).max().unwrap_or(0))?;
    let split = split_for(labels.len(), o.test_fraction, o.train.seed)?;
    let train_set = dataset(&[&x], &labels, &split.train)?;
    let test_set = dataset(&[&x], &labels, &split.test)?;
    let (mut model, trace) = pretrain_source_2d(&train_set, &ArchSpec::default_2d(n_classes), &o.train)?;
    model.set_mode(Mode::Eval);
    let pred = model.predict(test_set.inputs())?;
    let report = score(&pred, test_set.labels(), n_classes)?;
    save(&mut run, &model, &a.output, &Provenance::new(source, o.train.seed))?;
    print_json(&report_json(&report, &trace, split.train.len(), split.test.len()))?;
    run.finish(&a.output, false)
}

// ---------------------------------------------------------------- transfer

fn parse_frozen(s: &str) -> Res<Frozen> {
    match s.trim() {
        "all-but-head" | "all_but_head" => Ok(Frozen::AllButHead),
        n => n
            .parse()
            .map(Frozen::Layers)
            .map_err(|_| CliError::Config(format!("frozen must be `all-but-head` or a layer count, got `{n}`"))),
    }
}

/// Hold-out split of `n` windows with the training side optionally capped.
fn capped_split(n: usize, o: &Optim, cap: Option<usize>) -> Res<Split> {
    let mut split = split_for(n, o.test_fraction, o.train.seed)?;
    if let Some(cap) = cap {
        if cap < 2 {
            return Err(CliError::Config(format!("train-windows must be >= 2, got {cap}")));
        }
        split.train.shuffle(&mut ChaCha8Rng::seed_from_u64(o.train.seed));
        split.train.truncate(cap);
        split.train.sort_unstable();
    }
    Ok(split)
}

fn transfer(mut run: Run, a: crate::TransferArgs) -> Res<()> {
    let loaded = run.load(&a.data)?;
    let o = run.optim(&a.optim, TrainConfig::default().batch_size)?;
    let frozen = parse_frozen(&run.settings.get("frozen", a.frozen.clone(), "all-but-head".to_string())?)?;
    let head = run.settings.get_list("head", a.head.clone())?.unwrap_or(DEFAULT_NEW_HEAD.to_vec());
    let cap = run.settings.get_opt("train_windows", a.train_windows)?;
    let n_classes = o.n_classes(loaded.n_classes())?;
    run.manifest.add_input(&a.base)?;

    let set = window_set(&loaded.windows, &loaded.channel_refs())?;
    let split = capped_split(set.len(), &o, cap)?;
    let (x, scaler) = scaled(&set, &split.train)?;
    let plan = TransferPlan {
        base_checkpoint: a.base.clone(),
        frozen,
        new_head: head,
        n_classes_target: n_classes,
        seed: o.train.seed,
    };
    let mut model = transfer_head(&plan)?;
    let want = &model.input_dims()[0];
    if want.as_slice() != &set.x.dims()[1..] {
        return Err(CliError::Core(ts2img::Error::Plan(format!(
            "base model expects windows {want:?}, target has {:?}",
            &set.x.dims()[1..]
        ))));
    }
    let train_set = dataset(&[&x], &set.labels, &split.train)?;
    let test_set = dataset(&[&x], &set.labels, &split.test)?;
    let (report, trace) = fit_and_score(&mut model, &train_set, &test_set, &o.train)?;
    let mut prov = Provenance::new(source_name(&a.data.input), o.train.seed);
    prov.parent = Some(a.base.display().to_string());
    save(&mut run, &model, &a.output, &prov)?;
    let mut v = report_json(&report, &trace, split.train.len(), split.test.len());
    v["scaler"] = serde_json::to_value(&scaler)?;
    print_json(&v)?;
    run.finish(&a.output, false)
}

// ---------------------------------------------------------------- fuse

fn fuse(mut run: Run, a: crate::FuseArgs) -> Res<()> {
    let loaded = run.load(&a.data)?;
    let o = run.optim(&a.optim, TrainConfig::default().batch_size)?;
    let method = run.method(a.method.clone())?;
    let enc = encoder(&mut run, method, a.bins)?;
    let head = run.settings.get_list("head", a.head.clone())?.unwrap_or(vec![32]);
    let train_image = run.settings.get("train_image", a.train_image.then_some(true), false)?;
    let n_classes = o.n_classes(loaded.n_classes())?;
    run.manifest.add_input(&a.image_base)?;

    let windows = image_windows(&mut run, &loaded, a.image_channels.clone())?;
    let encoded: Vec<EncodedWindow> = encode_windows(&windows, enc, Layout::RgbXyz)?;
    let images = stacks_tensor(&encoded)?;
    let set = window_set(&loaded.windows, &loaded.channel_refs())?;
    let split = split_for(set.len(), o.test_fraction, o.train.seed)?;
    let (x, _) = scaled(&set, &split.train)?;

    let (base2d, _) = load_checkpoint(&a.image_base)?;
    let raw: Model<f32> = build_cnn1d(&ArchSpec::default_1d(n_classes), [set.x.dims()[1], set.x.dims()[2]], o.train.seed)?;
    let mut model = build_fusion(FusionSpec {
        branch_2d: trunk_branch(&base2d, "img_", !train_image)?,
        branch_1d: trunk_branch(&raw, "raw_", false)?,
        head,
        n_classes,
        seed: o.train.seed,
    })?;
    let want = &model.input_dims()[0];
    if want.as_slice() != &images.dims()[1..] {
        return Err(CliError::Core(ts2img::Error::Plan(format!(
            "image trunk expects stacks {want:?}, window {} gives {:?}",
            set.x.dims()[2],
            &images.dims()[1..]
        ))));
    }
    let train_set = dataset(&[&images, &x], &set.labels, &split.train)?;
    let test_set = dataset(&[&images, &x], &set.labels, &split.test)?;
    let (report, trace) = fit_and_score(&mut model, &train_set, &test_set, &o.train)?;
    let mut prov = Provenance::new(source_name(&a.data.input), o.train.seed);
    prov.parent = Some(a.image_base.display().to_string());
    save(&mut run, &model, &a.output, &prov)?;
    print_json(&report_json(&report, &trace, split.train.len(), split.test.len()))?;
    run.finish(&a.output, false)
}

// ---------------------------------------------------------------- eval

fn eval(mut run: Run, a: crate::EvalArgs) -> Res<()> {
    let loaded = run.load(&a.data)?;
    let o = run.optim(&a.optim, TrainConfig::default().batch_size)?;
    let n_classes = o.n_classes(loaded.n_classes())?;
    let set = window_set(&loaded.windows, &loaded.channel_refs())?;
    let dims = set.x.dims().to_vec();
    let value = match a.mode {
        EvalMode::Holdout => {
            let split = split_for(set.len(), o.test_fraction, o.train.seed)?;
            let (x, _) = scaled(&set, &split.train)?;
            let test_set = dataset(&[&x], &set.labels, &split.test)?;
            match &a.checkpoint {
                Some(c) => {
                    run.manifest.add_input(c)?;
                    let (model, _) = load_checkpoint(c)?;
                    let pred = model.predict(test_set.inputs())?;
                    let report = score(&pred, test_set.labels(), model.output_width()?.max(n_classes))?;
                    report_json(&report, &[], 0, split.test.len())
                }
                None => {
                    let train_set = dataset(&[&x], &set.labels, &split.train)?;
                    let mut model = build_cnn1d(&ArchSpec::default_1d(n_classes), [dims[1], dims[2]], o.train.seed)?;
                    let (report, trace) = fit_and_score(&mut model, &train_set, &test_set, &o.train)?;
                    report_json(&report, &trace, split.train.len(), split.test.len())
                }
            }
        }
        EvalMode::Loocv => {
            if a.checkpoint.is_some() {
                return Err(CliError::Config("--checkpoint applies to holdout only".into()));
            }
            let mut reports = Vec::new();
            for fold in loocv_folds(&set.groups)? {
                let fold_id = fold.fold_id.expect("loocv folds carry ids");
                let (x, _) = scaled(&set, &fold.train)?;
                let train_set = dataset(&[&x], &set.labels, &fold.train)?;
                let test_set = dataset(&[&x], &set.labels, &fold.test)?;
                let mut model = build_cnn1d(&ArchSpec::default_1d(n_classes), [dims[1], dims[2]], o.train.seed)?;
                let (report, _) = fit_and_score(&mut model, &train_set, &test_set, &o.train)?;
                eprintln!("fold {fold_id}: accuracy {:.3}", report.accuracy);
                reports.push(report.with_fold(fold_id));
            }
            serde_json::to_value(CrossValReport::merge(reports)?)?
        }
    };
    match &a.output {
        Some(out) => {
            parent_dir(out)?;
            let text = serde_json::to_string_pretty(&value)? + "\n";
            std::fs::write(out, text).map_err(|e| CliError::io(out, e))?;
            run.manifest.add_output(out);
            let out = out.clone();
            run.finish(&out, false)
        }
        None => {
            print_json(&value)?;
            let mut m = run.manifest;
            m.config = run.settings.snapshot().clone();
            m.wall_time_s = run.started.elapsed().as_secs_f64();
            eprintln!("{}", serde_json::to_string(&m)?);
            Ok(())
        }
    }
}

// ---------------------------------------------------------------- inspect

fn inspect(path: &Path) -> Res<()> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    if bytes.starts_with(ts2img::imageio::TSIM_MAGIC) {
        let h = tsim_header(&bytes)?;
        let crc_ok = ts2img::imageio::parse_tsim(&bytes).is_ok();
        return print_json(&json!({
            "kind": "tsim",
            "version": h.version,
            "dims": h.dims,
            "crc_ok": crc_ok,
        }));
    }
    let value: serde_json::Value = serde_json::from_slice(&bytes)?;
    if value.get("format_version").is_some() {
        let (model, prov) = load_checkpoint(path)?;
        let mut branches = Vec::new();
        for (b, branch) in model.branches().iter().enumerate() {
            branches.push(json!({
                "branch": b,
                "input_dims": branch.input_dims,
                "layers": branch.layers.iter().map(layer_json).collect::<Vec<_>>(),
            }));
        }
        let params: usize = model.params().iter().map(|(_, t)| t.len()).sum();
        return print_json(&json!({
            "kind": "checkpoint",
            "provenance": prov,
            "branches": branches,
            "junction": model.junction(),
            "head": model.head().iter().map(layer_json).collect::<Vec<_>>(),
            "parameters": params,
            "step": model.step(),
        }));
    }
    print_json(&value)
}

fn layer_json(l: &ts2img::nn::Layer<f32>) -> serde_json::Value {
    let params: BTreeMap<String, Vec<usize>> = l
        .param_names()
        .into_iter()
        .zip(&l.params)
        .map(|(n, t)| (n, t.dims().to_vec()))
        .collect();
    json!({
        "spec": l.spec,
        "params": params,
    })
}
