//! Command-line surface: gen, convert, split, train, eval, report.
//!
//! Every artifact-producing run writes a `.manifest` next to its primary
//! output: sorted key=value lines holding the resolved config, seeds,
//! SHA-256 digests of every dataset read and artifact written, and the tool
//! version. Manifests carry no timestamps, so identical runs produce
//! identical manifests.
//!
//! Exit codes: 0 ok, 2 usage, 3 data error, 4 config error, 5 numeric
//! failure. Errors go to stderr as `error[<class>]: <message>`.

use crate::eval::{self, ScoredSample, Truth};
use crate::train::{self, load_checkpoint, save_checkpoint, ModelKind, TrainConfig};
use crate::wafer::{
    convert_manifest, generate_synthetic, load_dataset, save_dataset, split_dataset, WaferLabel,
    WaferMap,
};
use crate::{Error, Result, TOOL_VERSION};
use clap::{Args, Parser, Subcommand};
use sha2::{Digest, Sha256};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "waferocc", version = TOOL_VERSION, disable_help_subcommand = true)]
#[command(about = "One-class wafer-map defect detection toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset
    Gen(GenArgs),
    /// Convert a CSV manifest of grid files into a dataset
    Convert(ConvertArgs),
    /// Split a dataset into train/valid/test files
    Split(SplitArgs),
    /// Train a model described by a config file
    Train(TrainArgs),
    /// Score valid/test datasets and write an evaluation report pair
    Eval(EvalArgs),
    /// Combine evaluation reports into one comparison table
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Normal (defect-free) maps
    #[arg(long, default_value_t = 0)]
    none: usize,
    #[arg(long, default_value_t = 0)]
    center: usize,
    #[arg(long, default_value_t = 0)]
    edge_ring: usize,
    #[arg(long, default_value_t = 0)]
    scratch: usize,
    #[arg(long, default_value_t = 0)]
    donut: usize,
    #[arg(long, default_value_t = 0)]
    random: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Defect noise rate passed to the generator
    #[arg(long, default_value_t = 0.05)]
    defect_rate: f64,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct ConvertArgs {
    /// CSV manifest with header map_path,label
    manifest: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Prefix for <prefix>.train.wmd, <prefix>.valid.wmd, <prefix>.test.wmd
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(short, long)]
    config: PathBuf,
    /// Override the config's model key (dsvdd, aae, aae_dsvdd)
    #[arg(long)]
    model: Option<String>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(short, long)]
    config: PathBuf,
    #[arg(long)]
    valid: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Prefix for <prefix>.txt, <prefix>.kv, <prefix>.manifest
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// key=value report files produced by eval
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Combine reports even when their dataset digests differ
    #[arg(long)]
    force: bool,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

/// Runs one CLI invocation; argv includes the program name.
pub fn run_command(argv: &[String]) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let rendered = e.render().to_string();
            let msg = rendered.strip_prefix("error: ").unwrap_or(&rendered);
            eprint!("error[usage]: {msg}");
            return 2;
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.class());
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Gen(a) => cmd_gen(a),
        Command::Convert(a) => cmd_convert(a),
        Command::Split(a) => cmd_split(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Report(a) => cmd_report(a),
    }
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut h = Sha256::new();
    h.update(&bytes);
    Ok(hex(&h.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn write_manifest(path: &Path, pairs: &[(String, String)]) -> Result<()> {
    let mut sorted: Vec<_> = pairs.to_vec();
    sorted.sort();
    let mut text = String::new();
    for (k, v) in sorted {
        let _ = writeln!(text, "{k}={v}");
    }
    std::fs::write(path, text)?;
    Ok(())
}

fn manifest_path(primary: &Path) -> PathBuf {
    let mut name = primary.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest");
    primary.with_file_name(name)
}

fn kv(key: &str, value: impl ToString) -> (String, String) {
    (key.to_string(), value.to_string())
}

/// Full resolved config as manifest pairs: the identity keys plus the
/// non-identity ones (epochs and paths).
fn config_pairs(cfg: &TrainConfig) -> Vec<(String, String)> {
    let mut pairs: Vec<(String, String)> = cfg
        .identity_blob()
        .lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (format!("config.{k}"), v.to_string()))
        .collect();
    pairs.push(kv("config.epochs", cfg.epochs));
    pairs.push(kv("config.train_path", cfg.train_path.display()));
    pairs.push(kv("config.checkpoint_path", cfg.checkpoint_path.display()));
    if let Some(p) = &cfg.log_path {
        pairs.push(kv("config.log_path", p.display()));
    }
    pairs
}

fn cmd_gen(a: GenArgs) -> Result<()> {
    let plan = [
        (WaferLabel::None, a.none),
        (WaferLabel::Center, a.center),
        (WaferLabel::EdgeRing, a.edge_ring),
        (WaferLabel::Scratch, a.scratch),
        (WaferLabel::Donut, a.donut),
        (WaferLabel::Random, a.random),
    ];
    let total: usize = plan.iter().map(|&(_, n)| n).sum();
    if total == 0 {
        return Err(Error::Usage(
            "no maps requested; pass at least one of --none/--center/--edge-ring/--scratch/--donut/--random".into(),
        ));
    }
    let mut maps = Vec::with_capacity(total);
    for (pattern, count) in plan {
        for i in 0..count {
            maps.push(generate_synthetic(
                pattern,
                a.height,
                a.width,
                a.seed.wrapping_add(i as u64),
                a.defect_rate,
            )?);
        }
    }
    save_dataset(&maps, &a.out)?;

    let mut pairs = vec![
        kv("command", "gen"),
        kv("tool_version", TOOL_VERSION),
        kv("seed", a.seed),
        kv("height", a.height),
        kv("width", a.width),
        kv("defect_rate", a.defect_rate),
        kv("out", a.out.display()),
        kv("out.digest", file_digest(&a.out)?),
    ];
    for (pattern, count) in plan {
        pairs.push(kv(&format!("count.{}", pattern.name()), count));
    }
    write_manifest(&manifest_path(&a.out), &pairs)
}

fn cmd_convert(a: ConvertArgs) -> Result<()> {
    let maps = convert_manifest(&a.manifest)?;
    if maps.is_empty() {
        return Err(Error::Data(format!(
            "{}: manifest lists no maps",
            a.manifest.display()
        )));
    }
    save_dataset(&maps, &a.out)?;
    let pairs = vec![
        kv("command", "convert"),
        kv("tool_version", TOOL_VERSION),
        kv("manifest", a.manifest.display()),
        kv("manifest.digest", file_digest(&a.manifest)?),
        kv("count", maps.len()),
        kv("out", a.out.display()),
        kv("out.digest", file_digest(&a.out)?),
    ];
    write_manifest(&manifest_path(&a.out), &pairs)
}

fn split_part_path(prefix: &Path, part: &str) -> PathBuf {
    let mut name = prefix.file_name().unwrap_or_default().to_os_string();
    name.push(format!(".{part}.wmd"));
    prefix.with_file_name(name)
}

fn cmd_split(a: SplitArgs) -> Result<()> {
    let input_digest = file_digest(&a.input)?;
    let maps = load_dataset(&a.input)?;
    let split = split_dataset(maps, a.seed)?;

    let mut pairs = vec![
        kv("command", "split"),
        kv("tool_version", TOOL_VERSION),
        kv("seed", a.seed),
        kv("input", a.input.display()),
        kv("input.digest", input_digest),
    ];
    for (part, maps) in [
        ("train", &split.train),
        ("valid", &split.valid),
        ("test", &split.test),
    ] {
        let path = split_part_path(&a.out, part);
        save_dataset(maps, &path)?;
        pairs.push(kv(&format!("out.{part}"), path.display()));
        pairs.push(kv(&format!("out.{part}.digest"), file_digest(&path)?));
        pairs.push(kv(&format!("out.{part}.count"), maps.len()));
    }
    write_manifest(&manifest_path(&a.out), &pairs)
}

fn load_config(path: &Path, model_override: Option<&str>) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::from_file(path)?;
    if let Some(name) = model_override {
        cfg.model = ModelKind::parse(name)
            .ok_or_else(|| Error::Usage(format!("unknown model {name:?}")))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn log_path_of(cfg: &TrainConfig) -> PathBuf {
    cfg.log_path.clone().unwrap_or_else(|| {
        let mut name = cfg
            .checkpoint_path
            .file_name()
            .unwrap_or_default()
            .to_os_string();
        name.push(".log");
        cfg.checkpoint_path.with_file_name(name)
    })
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = load_config(&a.config, a.model.as_deref())?;
    let maps = load_dataset(&cfg.train_path)?;
    let train_digest = file_digest(&cfg.train_path)?;

    // Resume when a compatible unfinished checkpoint sits at the target
    // path; a finished one is retrained from scratch so repeated runs
    // re-exercise the full pipeline.
    let mut resumed = false;
    let (bundle, log) = if cfg.checkpoint_path.exists() {
        let existing = load_checkpoint(&cfg.checkpoint_path)?;
        if existing.identity_blob != cfg.identity_blob() {
            return Err(Error::Config(format!(
                "checkpoint {} belongs to a different run configuration; \
                 remove it or change checkpoint_path",
                cfg.checkpoint_path.display()
            )));
        }
        if existing.epochs_done < cfg.epochs {
            resumed = true;
            train::resume(&cfg, &maps, existing)?
        } else {
            train::train(&cfg, &maps)?
        }
    } else {
        train::train(&cfg, &maps)?
    };

    save_checkpoint(&bundle, &cfg.checkpoint_path)?;

    let log_path = log_path_of(&cfg);
    if resumed {
        use std::io::Write as _;
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)?;
        f.write_all(log.render().as_bytes())?;
    } else {
        std::fs::write(&log_path, log.render())?;
    }

    let mut pairs = config_pairs(&cfg);
    pairs.extend([
        kv("command", "train"),
        kv("tool_version", TOOL_VERSION),
        kv("identity", hex(&cfg.identity_digest())),
        kv("dataset.train.digest", train_digest),
        kv("checkpoint", cfg.checkpoint_path.display()),
        kv("checkpoint.digest", file_digest(&cfg.checkpoint_path)?),
        kv("log", log_path.display()),
        kv("resumed", resumed),
        kv("epochs_done", bundle.epochs_done),
    ]);
    write_manifest(&manifest_path(&cfg.checkpoint_path), &pairs)
}

/// Splits labeled maps into scores' ground truth, rejecting Unlabeled.
fn truths_of(maps: &[WaferMap], what: &str) -> Result<Vec<Truth>> {
    maps.iter()
        .enumerate()
        .map(|(i, m)| {
            eval::truth_of(m.label).ok_or_else(|| {
                Error::Data(format!("{what} map {i} is Unlabeled; label it or drop it"))
            })
        })
        .collect()
}

fn report_suffix_path(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    prefix.with_file_name(name)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let cfg = load_config(&a.config, None)?;
    let bundle = load_checkpoint(&cfg.checkpoint_path)?;
    if bundle.identity_blob != cfg.identity_blob() {
        return Err(Error::Config(format!(
            "checkpoint {} was trained under a different configuration",
            cfg.checkpoint_path.display()
        )));
    }

    let train_maps = load_dataset(&cfg.train_path)?;
    let valid_maps = load_dataset(&a.valid)?;
    let test_maps = load_dataset(&a.test)?;
    let valid_truths = truths_of(&valid_maps, "valid")?;
    let test_truths = truths_of(&test_maps, "test")?;

    let train_scores = eval::score_maps(&bundle, &train_maps)?;
    let valid_scores = eval::score_maps(&bundle, &valid_maps)?;
    let test_scores = eval::score_maps(&bundle, &test_maps)?;

    let valid_samples: Vec<ScoredSample> = valid_scores
        .iter()
        .zip(&valid_truths)
        .map(|(&score, &truth)| ScoredSample {
            score,
            truth,
            predicted: None,
        })
        .collect();
    let (threshold, _grid) = eval::threshold_search(&train_scores, &valid_samples)?;

    // threshold chosen on validation only, applied unchanged to test
    let valid_report = eval::metrics(
        &eval::classify(&valid_scores, threshold),
        &valid_truths,
        threshold,
    )?;
    let test_report = eval::metrics(
        &eval::classify(&test_scores, threshold),
        &test_truths,
        threshold,
    )?;

    let train_digest = file_digest(&cfg.train_path)?;
    let valid_digest = file_digest(&a.valid)?;
    let test_digest = file_digest(&a.test)?;
    let extra = vec![
        kv("model", cfg.model.as_str()),
        kv("identity", hex(&cfg.identity_digest())),
        kv("dataset.train.digest", &train_digest),
        kv("dataset.valid.digest", &valid_digest),
        kv("dataset.test.digest", &test_digest),
    ];

    let table_path = report_suffix_path(&a.out, ".txt");
    let kv_path = report_suffix_path(&a.out, ".kv");
    std::fs::write(&table_path, eval::render_table(&valid_report, &test_report))?;
    std::fs::write(&kv_path, eval::render_kv(&valid_report, &test_report, &extra))?;

    let mut pairs = config_pairs(&cfg);
    pairs.extend([
        kv("command", "eval"),
        kv("tool_version", TOOL_VERSION),
        kv("identity", hex(&cfg.identity_digest())),
        kv("checkpoint", cfg.checkpoint_path.display()),
        kv("checkpoint.digest", file_digest(&cfg.checkpoint_path)?),
        kv("dataset.train.digest", train_digest),
        kv("dataset.valid", a.valid.display()),
        kv("dataset.valid.digest", valid_digest),
        kv("dataset.test", a.test.display()),
        kv("dataset.test.digest", test_digest),
        kv("threshold", format!("{threshold:.9}")),
        kv("report.table", table_path.display()),
        kv("report.table.digest", file_digest(&table_path)?),
        kv("report.kv", kv_path.display()),
        kv("report.kv.digest", file_digest(&kv_path)?),
    ]);
    write_manifest(&manifest_path(&a.out), &pairs)
}

fn parse_kv_file(path: &Path) -> Result<std::collections::BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut out = std::collections::BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Data(format!(
                "{}: line {} is not key=value",
                path.display(),
                lineno + 1
            ))
        })?;
        out.insert(k.to_string(), v.to_string());
    }
    Ok(out)
}

fn cmd_report(a: ReportArgs) -> Result<()> {
    struct Row {
        name: String,
        model: String,
        values: [String; 5],
        digests: (String, String),
    }
    const COLS: [&str; 5] = [
        "test.threshold",
        "test.accuracy",
        "test.precision",
        "test.recall",
        "test.f1",
    ];

    let mut rows = Vec::new();
    for path in &a.inputs {
        let map = parse_kv_file(path)?;
        let get = |key: &str| -> Result<String> {
            map.get(key)
                .cloned()
                .ok_or_else(|| Error::Data(format!("{}: missing key {key}", path.display())))
        };
        let values = [
            get(COLS[0])?,
            get(COLS[1])?,
            get(COLS[2])?,
            get(COLS[3])?,
            get(COLS[4])?,
        ];
        rows.push(Row {
            name: path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| path.display().to_string()),
            model: get("model")?,
            values,
            digests: (get("dataset.valid.digest")?, get("dataset.test.digest")?),
        });
    }

    if !a.force {
        let first = &rows[0].digests;
        for (row, path) in rows.iter().zip(&a.inputs) {
            if &row.digests != first {
                return Err(Error::Data(format!(
                    "{}: dataset digests differ from {}; pass --force to combine anyway",
                    path.display(),
                    a.inputs[0].display()
                )));
            }
        }
    }

    let name_w = rows
        .iter()
        .map(|r| r.name.len())
        .chain(["run".len()])
        .max()
        .unwrap();
    let model_w = rows
        .iter()
        .map(|r| r.model.len())
        .chain(["model".len()])
        .max()
        .unwrap();
    let mut table = String::new();
    let _ = write!(table, "{:<name_w$}  {:<model_w$}", "run", "model");
    for head in ["threshold", "accuracy", "precision", "recall", "f1"] {
        let _ = write!(table, "  {head:>12}");
    }
    table.push('\n');
    for r in &rows {
        let _ = write!(table, "{:<name_w$}  {:<model_w$}", r.name, r.model);
        for v in &r.values {
            let _ = write!(table, "  {v:>12}");
        }
        table.push('\n');
    }

    match &a.out {
        None => {
            print!("{table}");
            Ok(())
        }
        Some(out) => {
            std::fs::write(out, &table)?;
            let mut pairs = vec![
                kv("command", "report"),
                kv("tool_version", TOOL_VERSION),
                kv("forced", a.force),
                kv("out", out.display()),
                kv("out.digest", file_digest(out)?),
            ];
            for (i, (row, path)) in rows.iter().zip(&a.inputs).enumerate() {
                pairs.push(kv(&format!("input.{i}"), path.display()));
                pairs.push(kv(&format!("input.{i}.valid.digest"), &row.digests.0));
                pairs.push(kv(&format!("input.{i}.test.digest"), &row.digests.1));
            }
            write_manifest(&manifest_path(out), &pairs)
        }
    }
}
