//! Command-line front end.
//!
//! Exit codes: 0 success, 1 failed self-check, 2 configuration or validation
//! error, 3 numeric abort, 4 I/O or file-format error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_pairs, synthetic_from_pairs, DataSource, RunConfig};
use crate::error::{Error, Result};
use crate::eval::{eval_grid, evaluate_runs, reports_csv, reports_text, Learned, Protocol};
use crate::gradcheck;
use crate::models::{embed_rows, ArchConfig, HeadKind, Model};
use crate::rng::Rng;
use crate::tasks::{gen_synthetic, sample_episode, split_classes, Dataset};
use crate::training::{checkpoint_name, Trainer, TrainState, FINAL_CHECKPOINT, LOG_FILE};
use crate::viz::{convergence_svg_from_csv, pca_2d, scatter_svg, PointTag, Series, PALETTE};

pub const SEED_ENV: &str = "L2G_SEED";
pub const CONFIG_SNAPSHOT: &str = "config.txt";
pub const TEST_SPLIT: &str = "test.data";
pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TEXT: &str = "report.txt";

#[derive(Debug, Parser)]
#[command(name = "l2g", version, about = "Few-shot meta-learning with episodic, MAML+X and L2G trainers")]
pub struct Cli {
    /// Root seed; overrides the config file and L2G_SEED.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for batch and evaluation parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Replace artifacts of an existing run directory or output file.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset file.
    GenData {
        /// File with synthetic.* keys and an optional seed.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Extra `key=value` settings, applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from a run configuration.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Overrides `run_dir` from the config.
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Meta-test a checkpoint.
    Eval(EvalArgs),
    /// Render SVG plots.
    #[command(subcommand)]
    Plot(PlotCommand),
    /// Write embeddings of every instance as CSV.
    ExportEmbeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the gradient and trainer self-checks.
    Gradcheck {
        #[arg(long, hide = true)]
        inject_sign_flip: bool,
    },
}

#[derive(Debug, Args)]
pub struct ArchArgs {
    /// Expected head; with any architecture flag the checkpoint must match.
    #[arg(long)]
    pub head: Option<HeadKind>,
    #[arg(long, value_delimiter = ',')]
    pub embed_hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub relation_hidden: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub way: usize,
    #[arg(long, default_value_t = 1)]
    pub shot: usize,
    #[arg(long, default_value_t = crate::eval::DEFAULT_QUERIES)]
    pub queries: usize,
    #[arg(long, default_value_t = crate::eval::DEFAULT_EPISODES)]
    pub episodes: usize,
    #[arg(long, default_value_t = crate::eval::DEFAULT_RUNS)]
    pub runs: usize,
    /// Evaluate every (shot, way) combination of --shots and --ways.
    #[arg(long)]
    pub grid: bool,
    #[arg(long, value_delimiter = ',', default_values_t = [1, 5, 10])]
    pub shots: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [5, 7, 10])]
    pub ways: Vec<usize>,
    /// Directory for report.csv and report.txt; defaults to the checkpoint's.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub arch: ArchArgs,
}

#[derive(Debug, Subcommand)]
pub enum PlotCommand {
    /// Loss, learning-rate and accuracy curves from log.csv.
    Convergence {
        /// Run directory or log.csv path.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = ["meta_loss".to_string(), "inner_loss".to_string()])]
        series: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// PCA scatter of one sampled episode; stars are supports.
    Embeddings {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 5)]
        way: usize,
        #[arg(long, default_value_t = 5)]
        shot: usize,
        #[arg(long, default_value_t = 10)]
        queries: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numeric(_) => 3,
        Error::Io(_) | Error::Malformed { .. } => 4,
        _ => 2,
    }
}

/// `--seed`, else an explicit config seed, else `L2G_SEED`, else 0.
fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}={v:?} is not an integer"))),
        Err(_) => Ok(0),
    }
}

fn merged_pairs(config: Option<&Path>, set: &[String]) -> Result<BTreeMap<String, (String, usize)>> {
    let mut pairs = match config {
        Some(p) => parse_pairs(&read_text(p)?)?,
        None => BTreeMap::new(),
    };
    for s in set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {s:?}")))?;
        pairs.insert(k.trim().to_string(), (v.trim().to_string(), 0));
    }
    Ok(pairs)
}

fn explicit_seed(pairs: &BTreeMap<String, (String, usize)>) -> Result<Option<u64>> {
    pairs
        .get("seed")
        .map(|(v, line)| v.parse().map_err(|_| Error::Config(format!("key `seed` at line {line}: {v:?} is not an integer"))))
        .transpose()
}

/// Prefixes I/O errors with the offending path.
fn at<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

fn read_text(path: &Path) -> Result<String> {
    at(path, fs::read_to_string(path).map_err(Error::from))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    at(path, Dataset::load(path))
}

fn refuse_existing(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        return Err(Error::Config(format!("{} exists; pass --force to replace it", path.display())));
    }
    Ok(())
}

fn load_state(path: &Path) -> Result<(Model, TrainState)> {
    let state = at(path, TrainState::load(path))?;
    let model = Model::from_parameters(&state.params)?;
    Ok((model, state))
}

fn check_arch(model: &Model, state: &TrainState, arch: &ArchArgs, input_dim: usize) -> Result<()> {
    if arch.head.is_none() && arch.embed_hidden.is_none() && arch.embed_dim.is_none() && arch.relation_hidden.is_none() {
        return Ok(());
    }
    let d = ArchConfig::default();
    let expected = Model::new(
        input_dim,
        &ArchConfig {
            head: arch.head.unwrap_or(model.head.kind()),
            embed_hidden: arch.embed_hidden.clone().unwrap_or(d.embed_hidden),
            embed_dim: arch.embed_dim.unwrap_or(d.embed_dim),
            relation_hidden: arch.relation_hidden.clone().unwrap_or(d.relation_hidden),
        },
    )?;
    expected.check_parameters(&state.params)
}

fn check_input_dim(model: &Model, ds: &Dataset) -> Result<()> {
    if model.embedding.input_dim() != ds.feature_dim() {
        return Err(Error::Config(format!(
            "checkpoint expects {}-dimensional inputs, dataset has {}",
            model.embedding.input_dim(),
            ds.feature_dim()
        )));
    }
    Ok(())
}

struct Data {
    train: Dataset,
    val: Option<Dataset>,
    test: Option<Dataset>,
}

fn load_data(source: &DataSource) -> Result<Data> {
    match source {
        DataSource::Files { train, val } => {
            Ok(Data { train: load_dataset(train)?, val: val.as_deref().map(load_dataset).transpose()?, test: None })
        }
        DataSource::Split { path, fractions, split_seed } => {
            let (train, val, test) = split_classes(&load_dataset(path)?, *fractions, *split_seed)?;
            Ok(Data { train, val: Some(val), test: Some(test) })
        }
        DataSource::Synthetic { spec, fractions, split_seed } => {
            let all = gen_synthetic(spec, &mut Rng::new(*split_seed))?;
            let (train, val, test) = split_classes(&all, *fractions, *split_seed)?;
            Ok(Data { train, val: Some(val), test: Some(test) })
        }
    }
}

/// Removes artifacts a previous run left in `dir`; anything else blocks the run.
fn prepare_run_dir(dir: &Path, force: bool) -> Result<()> {
    if !dir.exists() {
        fs::create_dir_all(dir)?;
        return Ok(());
    }
    let entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    if entries.is_empty() {
        return Ok(());
    }
    if !force {
        return Err(Error::Config(format!(
            "run directory {} is not empty; pass --force to replace its artifacts",
            dir.display()
        )));
    }
    for p in entries {
        let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
        let ours = [LOG_FILE, FINAL_CHECKPOINT, CONFIG_SNAPSHOT, TEST_SPLIT, REPORT_CSV, REPORT_TEXT].contains(&name)
            || (name.starts_with("checkpoint-") && name.ends_with(".ckpt"));
        if !ours {
            return Err(Error::Config(format!("run directory holds foreign file {}", p.display())));
        }
        fs::remove_file(p)?;
    }
    Ok(())
}

fn cmd_gen_data(cli: &Cli, config: Option<&Path>, set: &[String], out_path: &Path, out: &mut dyn Write) -> Result<()> {
    let (spec, file_seed) = synthetic_from_pairs(merged_pairs(config, set)?)?;
    let seed = resolve_seed(cli.seed, file_seed)?;
    refuse_existing(out_path, cli.force)?;
    let ds = gen_synthetic(&spec, &mut Rng::new(seed))?;
    ds.save(out_path)?;
    let _ = writeln!(
        out,
        "wrote {} classes x {} instances, dimension {}, to {}",
        ds.num_classes(),
        spec.instances_per_class,
        ds.feature_dim(),
        out_path.display()
    );
    Ok(())
}

fn cmd_train(cli: &Cli, config: &Path, set: &[String], run_dir: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    let pairs = merged_pairs(Some(config), set)?;
    let file_seed = explicit_seed(&pairs)?;
    let mut cfg = RunConfig::from_pairs(pairs)?;
    cfg.trainer.seed = resolve_seed(cli.seed, file_seed)?;
    if let Some(d) = run_dir {
        cfg.run_dir = Some(d.to_path_buf());
    }
    let dir = cfg.run_dir.clone().ok_or_else(|| Error::Config("no run directory: set run_dir or pass --run-dir".into()))?;
    let data = load_data(&cfg.data)?;
    let trainer = Trainer::new(&cfg.trainer, &data.train, data.val.as_ref())?;
    prepare_run_dir(&dir, cli.force)?;
    fs::write(dir.join(CONFIG_SNAPSHOT), cfg.to_text())?;
    if let Some(test) = &data.test {
        test.save(dir.join(TEST_SPLIT))?;
    }
    let (state, log) = trainer.run(trainer.init_state(), Some(&dir))?;
    let last_val = log.records().iter().rev().find_map(|r| r.val_accuracy);
    let _ = writeln!(
        out,
        "trained {} episodes ({} mode, {} head); final meta loss {:.6}{}",
        state.episode,
        cfg.trainer.mode.as_str(),
        cfg.trainer.arch.head.as_str(),
        log.last().map_or(f64::NAN, |r| r.meta_loss),
        last_val.map_or(String::new(), |a| format!(", val accuracy {:.2}%", 100.0 * a))
    );
    if let Some(test) = &data.test {
        let model = trainer.model();
        let classifier = Learned { model, params: &state.params };
        let t = &cfg.trainer;
        let protocol = Protocol { way: t.way, shot: t.shot, queries: cfg.eval.queries, episodes: cfg.eval.episodes };
        let report = evaluate_runs(&classifier, test, protocol, cfg.eval.runs, t.seed)?;
        let text = reports_text(std::slice::from_ref(&report));
        fs::write(dir.join(REPORT_CSV), reports_csv(std::slice::from_ref(&report)))?;
        fs::write(dir.join(REPORT_TEXT), &text)?;
        let _ = write!(out, "test split: {text}");
    }
    let _ = writeln!(out, "artifacts in {}", dir.display());
    Ok(())
}

fn cmd_eval(cli: &Cli, a: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let (model, state) = load_state(&a.checkpoint)?;
    let ds = load_dataset(&a.dataset)?;
    check_arch(&model, &state, &a.arch, ds.feature_dim())?;
    check_input_dim(&model, &ds)?;
    let seed = resolve_seed(cli.seed, None)?;
    let classifier = Learned { model: &model, params: &state.params };
    let reports = if a.grid {
        eval_grid(&classifier, &ds, &a.shots, &a.ways, a.queries, a.episodes, a.runs, seed)?
    } else {
        let protocol = Protocol { way: a.way, shot: a.shot, queries: a.queries, episodes: a.episodes };
        vec![evaluate_runs(&classifier, &ds, protocol, a.runs, seed)?]
    };
    let dir = match &a.out_dir {
        Some(d) => d.clone(),
        None => a.checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(&dir)?;
    }
    let (csv_path, txt_path) = (dir.join(REPORT_CSV), dir.join(REPORT_TEXT));
    refuse_existing(&csv_path, cli.force)?;
    refuse_existing(&txt_path, cli.force)?;
    let text = reports_text(&reports);
    fs::write(&csv_path, reports_csv(&reports))?;
    fs::write(&txt_path, &text)?;
    let _ = write!(out, "{text}");
    Ok(())
}

fn cmd_plot(cli: &Cli, p: &PlotCommand, out: &mut dyn Write) -> Result<()> {
    match p {
        PlotCommand::Convergence { input, series, out: out_path } => {
            let log_path = if input.is_dir() { input.join(LOG_FILE) } else { input.clone() };
            let csv = read_text(&log_path)?;
            let series = series.iter().map(|s| s.parse()).collect::<Result<Vec<Series>>>()?;
            let svg = convergence_svg_from_csv(&csv, &series)?;
            refuse_existing(out_path, cli.force)?;
            fs::write(out_path, svg)?;
            let _ = writeln!(out, "wrote {}", out_path.display());
        }
        PlotCommand::Embeddings { checkpoint, dataset, way, shot, queries, out: out_path } => {
            let (model, state) = load_state(checkpoint)?;
            let ds = load_dataset(dataset)?;
            check_input_dim(&model, &ds)?;
            let seed = resolve_seed(cli.seed, None)?;
            let ep = sample_episode(&ds, *way, *shot, *queries, &mut Rng::new(seed))?;
            let support = embed_rows(&model, &state.params, &ep.support_matrix())?;
            let query = embed_rows(&model, &state.params, &ep.query_matrix())?;
            let rows: Vec<Vec<f64>> = support.rows().chain(query.rows()).map(<[f64]>::to_vec).collect();
            let mut tags: Vec<PointTag> = (0..way * shot).map(|i| PointTag { class: i / shot, is_support: true }).collect();
            tags.extend((0..way * queries).map(|i| PointTag { class: i / queries, is_support: false }));
            let projection = pca_2d(&crate::autodiff::Tensor::from_rows(&rows)?, &tags)?;
            let svg = scatter_svg(&projection, ep.source_labels(), &PALETTE)?;
            refuse_existing(out_path, cli.force)?;
            fs::write(out_path, svg)?;
            let _ = writeln!(out, "wrote {}", out_path.display());
        }
    }
    Ok(())
}

fn cmd_export(cli: &Cli, checkpoint: &Path, dataset: &Path, out_path: &Path, out: &mut dyn Write) -> Result<()> {
    let (model, state) = load_state(checkpoint)?;
    let ds = load_dataset(dataset)?;
    check_input_dim(&model, &ds)?;
    let m = model.embedding.output_dim();
    let mut csv = String::from("label,index");
    for j in 0..m {
        csv.push_str(&format!(",e{j}"));
    }
    csv.push('\n');
    for class in ds.classes() {
        let x = crate::autodiff::Tensor::from_rows(&class.instances)?;
        for (i, row) in embed_rows(&model, &state.params, &x)?.rows().enumerate() {
            csv.push_str(&format!("{},{i}", class.label));
            for v in row {
                csv.push_str(&format!(",{v}"));
            }
            csv.push('\n');
        }
    }
    refuse_existing(out_path, cli.force)?;
    fs::write(out_path, csv)?;
    let _ = writeln!(out, "wrote {} embeddings of width {m} to {}", ds.num_instances(), out_path.display());
    Ok(())
}

fn cmd_gradcheck(cli: &Cli, inject_sign_flip: bool, out: &mut dyn Write) -> Result<i32> {
    let opts = gradcheck::Options { flip_inner_sign: inject_sign_flip, seed: resolve_seed(cli.seed, None)? };
    let report = gradcheck::run(opts)?;
    for c in &report.checks {
        let _ = writeln!(
            out,
            "{} {:<48} error {:.3e} (tolerance {:.0e})",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.error,
            c.tolerance
        );
    }
    let _ = writeln!(
        out,
        "max op rel-err {:.3e}, max bilevel rel-err {:.3e}, {:.2}s",
        report.max_error("op/").max(report.max_error("mlp/")),
        report.max_error("bilevel/"),
        report.seconds
    );
    if report.passed() {
        let _ = writeln!(out, "all checks passed");
        Ok(0)
    } else {
        let failed: Vec<&str> = report.failures().map(|c| c.name.as_str()).collect();
        let _ = writeln!(out, "failed: {}", failed.join(", "));
        Ok(1)
    }
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    match &cli.command {
        Command::GenData { config, set, out: path } => cmd_gen_data(cli, config.as_deref(), set, path, out)?,
        Command::Train { config, set, run_dir } => cmd_train(cli, config, set, run_dir.as_deref(), out)?,
        Command::Eval(a) => cmd_eval(cli, a, out)?,
        Command::Plot(p) => cmd_plot(cli, p, out)?,
        Command::ExportEmbeddings { checkpoint, dataset, out: path } => cmd_export(cli, checkpoint, dataset, path, out)?,
        Command::Gradcheck { inject_sign_flip } => return cmd_gradcheck(cli, *inject_sign_flip, out),
    }
    Ok(0)
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = if code == 0 { write!(out, "{}", e.render()) } else { write!(err, "{}", e.render()) };
            return code;
        }
    };
    let result = match cli.threads {
        Some(0) => Err(Error::Config("--threads must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))
            .and_then(|pool| {
                let mut buf = Vec::new();
                let r = pool.install(|| dispatch(&cli, &mut buf));
                let _ = out.write_all(&buf);
                r
            }),
        None => dispatch(&cli, out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

/// Checkpoint file written after `episode` iterations in `run_dir`.
pub fn checkpoint_path(run_dir: &Path, episode: u64) -> PathBuf {
    run_dir.join(checkpoint_name(episode))
}
