use std::fs;
use std::path::{Path, PathBuf};

use imb_core::attack::robustness_eval;
use imb_core::data::{gen_binary_task, split, write_idx_images, write_idx_labels};
use imb_core::exact::{
    dpi_violations, info_plane_trace, mean_trace, write_info_plane_csv, DiscreteJoint, InfoPlaneTrace,
};
use imb_core::experiment::Splits;
use imb_core::probe::{builtin_instance, conflict_probe, noisy_label_joint, ChannelFamily, BUILTIN_INSTANCES};
use imb_core::training::{evaluate, train as run_training};
use imb_core::{
    Algorithm, AttackConfig, AttackMode, Checkpoint, Dataset, EnumerationBudget, InfoPlanePoint, LabelRule, Matrix,
    NetworkParams, SplitRule,
};
use serde::{Deserialize, Serialize};

use crate::exit::{classify, io_error, CliError, CliResult};
use crate::run::{parse_list, RunConfigFile};
use crate::svg::info_plane_svg;
use crate::{
    AlgorithmArg, AttackArgs, Common, EvalArgs, FormatArg, GenDataArgs, InfoPlaneArgs, LabelsArg, ModeArg, ProbeArgs,
    TrainArgs,
};

const MODEL_FILE: &str = "model.json";
const CHECKPOINT_DIR: &str = "checkpoints";

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn create_dir(path: &Path) -> CliResult<()> {
    fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing to memory");
    buf
}

fn to_json<T: Serialize>(v: &T) -> CliResult<String> {
    serde_json::to_string_pretty(v).map_err(|e| CliError::runtime(format!("cannot serialize report: {e}")))
}

/// The run described by `--config` or `--preset`, if either is given.
fn run_from_flags(common: &Common) -> CliResult<Option<RunConfigFile>> {
    match (&common.config, &common.preset) {
        (Some(_), Some(_)) => Err(CliError::config("--config and --preset are mutually exclusive")),
        (Some(path), None) => RunConfigFile::load(path).map(Some),
        (None, Some(name)) => RunConfigFile::from_preset(name).map(Some),
        (None, None) => Ok(None),
    }
}

fn load_splits(run: &RunConfigFile) -> CliResult<Splits> {
    run.check_dataset_paths()?;
    run.dataset.load(Path::new(".")).map_err(classify)
}

pub fn train(common: &Common, args: &TrainArgs) -> CliResult<()> {
    let mut run = run_from_flags(common)?.ok_or_else(|| CliError::config("train needs --config or --preset"))?;
    let t = &mut run.training;
    if let Some(seed) = common.seed {
        t.seed = seed;
    }
    if let Some(a) = args.algorithm {
        t.algorithm = match a {
            AlgorithmArg::Joint => Algorithm::Joint,
            AlgorithmArg::Greedy => Algorithm::Greedy,
            AlgorithmArg::Mle => Algorithm::Mle,
        };
    }
    if let Some(g) = &args.gamma {
        t.gammas = parse_list("--gamma", g)?;
    }
    if let Some(b) = &args.beta {
        t.betas = parse_list("--beta", b)?;
    }
    if let Some(e) = args.epochs {
        t.epochs = e;
    }
    if args.deterministic {
        t.deterministic = true;
    }
    if let Some(d) = &args.data {
        run.override_data(d.clone())?;
    }
    run.plots |= args.plots;
    run.validate()?;
    run.training.weights().map_err(CliError::config)?;

    let splits = load_splits(&run)?;
    let out = common.out.clone().or_else(|| run.out.clone()).unwrap_or_else(|| run.default_out());
    run.out = Some(out.clone());

    log::info!(
        "training {} on {} rows ({} held out), widths {:?}, {} epochs, seed {}",
        run.training.algorithm,
        splits.train.len(),
        splits.test.as_ref().map_or(0, Dataset::len),
        run.training.hidden_widths,
        run.training.epochs,
        run.training.seed
    );
    let log = run_training(&splits.train, splits.test.as_ref(), &run.training).map_err(|e| match e {
        imb_core::ImbError::Config(_) => CliError::config(e),
        other => CliError::runtime(other),
    })?;

    create_dir(&out.join(CHECKPOINT_DIR))?;
    write_file(&out.join("run.toml"), run.to_toml()?)?;
    write_file(&out.join("epochs.csv"), csv_bytes(|b| log.write_epoch_csv(b)))?;
    let run_value = serde_json::to_value(&run).map_err(|e| CliError::runtime(e.to_string()))?;
    for (epoch, params) in &log.checkpoints {
        let mut ck = Checkpoint::new(*epoch, log.config.clone(), params.clone());
        ck.run = Some(run_value.clone());
        write_file(&out.join(CHECKPOINT_DIR).join(format!("epoch_{epoch:06}.json")), ck.to_json().map_err(classify)?)?;
    }
    let mut model = Checkpoint::new(log.last_epoch(), log.config.clone(), log.final_params.clone());
    model.run = Some(run_value);
    write_file(&out.join(MODEL_FILE), model.to_json().map_err(classify)?)?;

    let points = log.info_plane();
    let violations = dpi_violations(&points, 1e-6);
    if !points.is_empty() {
        write_file(&out.join("info_plane.csv"), csv_bytes(|b| write_info_plane_csv(&points, b)))?;
        if run.plots {
            let title = format!("{} seed {}", run.training.algorithm, run.training.seed);
            write_file(&out.join("info_plane.svg"), info_plane_svg(&points, &title))?;
        }
    }
    let last = log.records.last().expect("epoch 0 is always recorded");
    let summary = TrainSummary {
        algorithm: run.training.algorithm,
        seed: run.training.seed,
        last_epoch: last.epoch,
        final_objective: last.objective.total,
        final_train_error: last.train_error,
        final_test_error: last.test_error,
        info_plane_points: points.len(),
        dpi_violations: violations.len(),
    };
    write_file(&out.join("summary.json"), to_json(&summary)?)?;
    println!(
        "trained {} for {} epochs: train error {:.4}{}; artifacts in {}",
        summary.algorithm,
        summary.last_epoch,
        summary.final_train_error,
        summary.final_test_error.map_or(String::new(), |e| format!(", test error {e:.4}")),
        out.display()
    );
    if !violations.is_empty() {
        log::warn!("{} data-processing violations in the information plane", violations.len());
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    algorithm: Algorithm,
    seed: u64,
    last_epoch: usize,
    final_objective: f64,
    final_train_error: f64,
    final_test_error: Option<f64>,
    info_plane_points: usize,
    dpi_violations: usize,
}

/// Loads a checkpoint file, or `model.json` inside a run directory.
/// Returns the checkpoint and the directory reports default to.
fn load_checkpoint(path: &Path) -> CliResult<(Checkpoint, PathBuf)> {
    let (file, dir) = if path.is_dir() {
        (path.join(MODEL_FILE), path.to_path_buf())
    } else {
        let parent = path.parent().map(Path::to_path_buf).unwrap_or_default();
        (path.to_path_buf(), parent)
    };
    if !file.exists() {
        return Err(CliError::config(format!("checkpoint {} does not exist", file.display())));
    }
    let ck = Checkpoint::load(&file).map_err(|e| CliError::config(format!("{}: {e}", file.display())))?;
    Ok((ck, dir))
}

/// Dataset of a checkpoint: from flags when given, else the run embedded at training time.
fn checkpoint_run(common: &Common, ck: &Checkpoint, data: Option<&PathBuf>) -> CliResult<RunConfigFile> {
    let mut run = match run_from_flags(common)? {
        Some(r) => r,
        None => {
            let value = ck.run.clone().ok_or_else(|| {
                CliError::config("the checkpoint carries no dataset description; pass --config or --preset")
            })?;
            serde_json::from_value(value).map_err(|e| CliError::config(format!("embedded run description: {e}")))?
        }
    };
    if let Some(d) = data {
        run.override_data(d.clone())?;
    }
    Ok(run)
}

fn check_fit(params: &NetworkParams, ds: &Dataset) -> CliResult<()> {
    if ds.dim() != params.input_dim || ds.n_classes != params.n_classes() {
        return Err(CliError::config(format!(
            "dataset ({} inputs, {} classes) does not fit the checkpoint ({} inputs, {} classes)",
            ds.dim(),
            ds.n_classes,
            params.input_dim,
            params.n_classes()
        )));
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    checkpoint_epoch: usize,
    split: &'static str,
    rows: usize,
    samples: usize,
    deterministic: bool,
    repeats: usize,
    seed: u64,
    mean_error: f64,
    std_error: f64,
    per_repeat: Vec<f64>,
}

pub fn eval(common: &Common, args: &EvalArgs) -> CliResult<()> {
    let (ck, dir) = load_checkpoint(&args.checkpoint)?;
    let run = checkpoint_run(common, &ck, args.data.as_ref())?;
    if args.repeats == 0 {
        return Err(CliError::config("--repeats must be at least 1"));
    }
    let splits = load_splits(&run)?;
    let (ds, split_name) = match (&splits.test, args.train_split) {
        (Some(t), false) => (t, "test"),
        _ => (&splits.train, "train"),
    };
    check_fit(&ck.params, ds)?;
    let mut inf = ck.config.inference();
    if let Some(s) = args.samples {
        inf.samples = s;
    }
    let seed = common.seed.unwrap_or(ck.config.seed);
    let stats = evaluate(&ck.params, ds, &inf, args.repeats, seed).map_err(classify)?;
    let report = EvalReport {
        checkpoint_epoch: ck.epoch,
        split: split_name,
        rows: ds.len(),
        samples: inf.samples,
        deterministic: inf.deterministic,
        repeats: args.repeats,
        seed,
        mean_error: stats.mean,
        std_error: stats.std,
        per_repeat: stats.per_repeat,
    };
    let out = common.out.clone().unwrap_or(dir);
    create_dir(&out)?;
    write_file(&out.join("eval.json"), to_json(&report)?)?;
    println!(
        "{split_name} error {:.4} ± {:.4} over {} repeats ({} rows)",
        report.mean_error, report.std_error, report.repeats, report.rows
    );
    Ok(())
}

fn checkpoint_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let dir = if dir.join(CHECKPOINT_DIR).is_dir() { dir.join(CHECKPOINT_DIR) } else { dir.to_path_buf() };
    let entries = fs::read_dir(&dir).map_err(|e| CliError::config(format!("cannot read {}: {e}", dir.display())))?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension().is_some_and(|x| x == "json")
                && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("epoch_"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// One run per directory holding checkpoints; `dir` itself or its subdirectories.
fn discover_runs(dir: &Path) -> CliResult<Vec<(String, Vec<PathBuf>)>> {
    if !dir.is_dir() {
        return Err(CliError::config(format!("{} is not a directory", dir.display())));
    }
    let own = checkpoint_files(dir)?;
    if !own.is_empty() {
        return Ok(vec![(String::new(), own)]);
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    let mut runs = Vec::new();
    for s in subdirs {
        let files = checkpoint_files(&s)?;
        if !files.is_empty() {
            runs.push((s.file_name().unwrap().to_string_lossy().into_owned(), files));
        }
    }
    if runs.is_empty() {
        return Err(CliError::config(format!("no checkpoints found in {}", dir.display())));
    }
    Ok(runs)
}

fn run_trace(common: &Common, files: &[PathBuf]) -> CliResult<(InfoPlaneTrace, RunConfigFile)> {
    let checkpoints: Vec<Checkpoint> = files
        .iter()
        .map(|f| Checkpoint::load(f).map_err(|e| CliError::config(format!("{}: {e}", f.display()))))
        .collect::<CliResult<_>>()?;
    let run = checkpoint_run(common, &checkpoints[0], None)?;
    let splits = load_splits(&run)?;
    let joint = splits.train.joint.as_ref().ok_or_else(|| {
        CliError::not_enumerable(
            "the dataset has no enumerable input distribution; exact information needs a synthetic task",
        )
    })?;
    let budget = EnumerationBudget::default();
    for ck in &checkpoints {
        budget
            .check(&ck.params, joint.inputs.len())
            .map_err(|e| CliError::not_enumerable(format!("network is not enumerable: {e}")))?;
    }
    let snapshots: Vec<(usize, NetworkParams)> = checkpoints.into_iter().map(|c| (c.epoch, c.params)).collect();
    Ok((info_plane_trace(&snapshots, joint, &budget), run))
}

fn write_trace(dir: &Path, points: &[InfoPlanePoint], stem: &str, plots: bool, title: &str) -> CliResult<()> {
    create_dir(dir)?;
    write_file(&dir.join(format!("{stem}.csv")), csv_bytes(|b| write_info_plane_csv(points, b)))?;
    if plots {
        write_file(&dir.join(format!("{stem}.svg")), info_plane_svg(points, title))?;
    }
    Ok(())
}

pub fn info_plane(common: &Common, args: &InfoPlaneArgs) -> CliResult<()> {
    let runs = discover_runs(&args.dir)?;
    let out = common.out.clone().unwrap_or_else(|| args.dir.clone());
    let mut traces = Vec::new();
    for (name, files) in &runs {
        let (trace, run) = run_trace(common, files)?;
        let plots = args.plots || run.plots;
        let title = if name.is_empty() { run.training.algorithm.to_string() } else { name.clone() };
        write_trace(&out.join(name), &trace.points, "info_plane", plots, &title)?;
        println!(
            "{}: {} checkpoints, {} points, {} data-processing violations",
            if name.is_empty() { args.dir.display().to_string() } else { name.clone() },
            files.len(),
            trace.points.len(),
            trace.dpi_violations.len()
        );
        traces.push((trace.points, plots));
    }
    if traces.len() > 1 {
        let plots = traces.iter().any(|t| t.1);
        let all: Vec<Vec<InfoPlanePoint>> = traces.into_iter().map(|t| t.0).collect();
        let mean = mean_trace(&all);
        write_trace(&out, &mean, "info_plane_mean", plots, &format!("mean of {} runs", all.len()))?;
        println!("mean trace over {} runs: {} points", all.len(), mean.len());
    }
    Ok(())
}

/// Probe instance file: either `pxy` rows, or `px`, `labels` and a label-noise level.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProbeSpec {
    #[serde(default)]
    family: Option<ChannelFamily>,
    #[serde(default)]
    pxy: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    px: Option<Vec<f64>>,
    #[serde(default)]
    labels: Option<Vec<usize>>,
    #[serde(default)]
    noise: Option<f64>,
}

fn load_probe_spec(path: &Path) -> CliResult<(DiscreteJoint, ChannelFamily)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    let spec: ProbeSpec = toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let family = spec.family.unwrap_or(ChannelFamily::Free);
    let dj = match (spec.pxy, spec.px, spec.labels, spec.noise) {
        (Some(rows), None, None, None) => {
            let cols = rows.first().map_or(0, Vec::len);
            if rows.is_empty() || cols == 0 || rows.iter().any(|r| r.len() != cols) {
                return Err(CliError::config(format!("{}: pxy must be a non-empty rectangular table", path.display())));
            }
            DiscreteJoint {
                pxy: Matrix {
                    rows: rows.len(),
                    cols,
                    data: rows.concat(),
                },
                channel1: None,
                channel2: None,
            }
        }
        (None, Some(px), Some(labels), Some(noise)) => {
            if px.len() != labels.len() || !(0.0..0.5).contains(&noise) {
                return Err(CliError::config(format!(
                    "{}: px and labels must have equal length and noise must lie in [0, 0.5)",
                    path.display()
                )));
            }
            noisy_label_joint(&px, &labels, noise)
        }
        _ => {
            return Err(CliError::config(format!(
                "{}: give either `pxy`, or all of `px`, `labels` and `noise`",
                path.display()
            )))
        }
    };
    dj.validate().map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    Ok((dj, family))
}

pub fn probe_conflict(common: &Common, args: &ProbeArgs) -> CliResult<()> {
    let (name, (dj, family)) = match (&args.spec, &args.instance) {
        (Some(path), _) => (path.file_stem().map_or("spec".into(), |s| s.to_string_lossy().into_owned()), load_probe_spec(path)?),
        (None, instance) => {
            let name = instance.clone().unwrap_or_else(|| "generic".into());
            let inst = builtin_instance(&name).ok_or_else(|| {
                CliError::config(format!("unknown instance `{name}` (known: {})", BUILTIN_INSTANCES.join(", ")))
            })?;
            (name, inst)
        }
    };
    let report = conflict_probe(&dj, args.beta1, args.beta2, args.grid, family).map_err(CliError::config)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(format!("probe-{name}")));
    create_dir(&out)?;
    write_file(&out.join("probe.json"), to_json(&report)?)?;
    println!(
        "{name}: {} (beta1 {}, beta2 {}, grid {}); L1 argmin {} points, L2 argmin {} points",
        report.verdict, report.beta1, report.beta2, report.grid, report.l1.count, report.l2.count
    );
    if let Some(w) = report.l1.witnesses.first() {
        println!("  L1 witness: encoder1 {:?} encoder2 {:?}", w.encoder1, w.encoder2);
    }
    if let Some(w) = report.l2.witnesses.first() {
        println!("  L2 witness: encoder1 {:?} encoder2 {:?}", w.encoder1, w.encoder2);
    }
    Ok(())
}

#[derive(Serialize)]
struct AttackSummary {
    checkpoint_epoch: usize,
    deterministic: bool,
    seed: u64,
    config: AttackConfig,
    images: usize,
    clean_accuracy_pct: f64,
    robustness_pct: f64,
    retained_pct: Option<f64>,
}

pub fn attack(common: &Common, args: &AttackArgs) -> CliResult<()> {
    let (ck, dir) = load_checkpoint(&args.checkpoint)?;
    let run = checkpoint_run(common, &ck, args.data.as_ref())?;
    let mut cfg = run.attack.unwrap_or(AttackConfig::untargeted(100, 0.1, 3.0, ck.config.inference().samples));
    if let Some(m) = args.mode {
        cfg.mode = match m {
            ModeArg::Targeted => AttackMode::Targeted,
            ModeArg::Untargeted => AttackMode::Untargeted,
        };
    }
    if let Some(s) = args.steps {
        cfg.steps = s;
    }
    if let Some(s) = args.step_size {
        cfg.step_size = s;
    }
    if let Some(r) = args.radius {
        cfg.max_l2_radius = r;
    }
    if let Some(s) = args.samples {
        cfg.samples = s;
    }
    cfg.validate().map_err(CliError::config)?;
    if args.subset == 0 {
        return Err(CliError::config("--subset must be at least 1"));
    }
    let splits = load_splits(&run)?;
    let ds = splits.test.as_ref().unwrap_or(&splits.train).head(args.subset);
    check_fit(&ck.params, &ds)?;
    let seed = common.seed.unwrap_or(ck.config.seed);
    let report = robustness_eval(&ck.params, &ds, &cfg, ck.config.deterministic, seed).map_err(classify)?;
    let out = common.out.clone().unwrap_or(dir);
    create_dir(&out)?;
    write_file(&out.join("attack.csv"), csv_bytes(|b| report.write_csv(b)))?;
    let summary = AttackSummary {
        checkpoint_epoch: ck.epoch,
        deterministic: ck.config.deterministic,
        seed,
        config: cfg,
        images: report.images,
        clean_accuracy_pct: report.clean_accuracy_pct,
        robustness_pct: report.robustness_pct,
        retained_pct: report.retained_pct,
    };
    write_file(&out.join("attack.json"), to_json(&summary)?)?;
    println!(
        "{} attack on {} images, radius {}: clean accuracy {:.2}%, robustness {:.2}%",
        cfg.mode, report.images, cfg.max_l2_radius, report.clean_accuracy_pct, report.robustness_pct
    );
    Ok(())
}

pub fn gen_data(common: &Common, args: &GenDataArgs) -> CliResult<()> {
    let rule = match args.labels {
        LabelsArg::Partition => LabelRule::Partition,
        LabelsArg::Ranked => LabelRule::Ranked,
    };
    let seed = common.seed.unwrap_or(0);
    let full = gen_binary_task(seed, args.bits, rule).map_err(CliError::config)?;
    if !(0.0..1.0).contains(&args.holdout) {
        return Err(CliError::config("--holdout must lie in [0, 1)"));
    }
    let (train, test) = split(&full, args.holdout, SplitRule::Shuffled, seed).map_err(CliError::config)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("data").join(format!("synthetic-{}bit", args.bits)));
    create_dir(&out)?;
    let parts = [("train", &train), ("t10k", &test)];
    for (prefix, ds) in parts {
        if ds.is_empty() {
            continue;
        }
        match args.format {
            FormatArg::Csv => {
                let name = if prefix == "train" { "train.csv" } else { "test.csv" };
                write_file(&out.join(name), csv_bytes(|b| ds.write_csv(b)))?;
            }
            FormatArg::Idx => {
                let pixels: Vec<u8> = ds.inputs.data.iter().map(|&v| (v * 255.0).round() as u8).collect();
                let labels: Vec<u8> = ds.labels.iter().map(|&y| y as u8).collect();
                write_file(
                    &out.join(format!("{prefix}-images-idx3-ubyte")),
                    csv_bytes(|b| write_idx_images(b, 1, ds.dim(), &pixels)),
                )?;
                write_file(&out.join(format!("{prefix}-labels-idx1-ubyte")), csv_bytes(|b| write_idx_labels(b, &labels)))?;
            }
        }
    }
    println!(
        "wrote {} training and {} held-out rows of the {}-bit task to {}",
        train.len(),
        test.len(),
        args.bits,
        out.display()
    );
    Ok(())
}
