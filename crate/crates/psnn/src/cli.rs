//! Command-line front end: the whole pipeline as subcommands of one binary,
//! driven by a single TOML configuration file.
//!
//! Artifacts are byte-identical across reruns with the same config and seeds.
//! Wall-clock times and timestamps never land in an artifact; they go to a
//! `.meta.json` sidecar next to it. Exit codes: 0 success, 1 runtime failure,
//! 2 user or configuration error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::dataset::{
    build_training_set, generate_observations, load_observations, load_removed, mask_incomplete,
    save_observations, save_removed, ObservationRecord, ObservationSet, Split,
};
use crate::docs::check_docs;
use crate::evaluate::{
    average_metrics, gray_scott_field, kernel_check, meanshift_errors, phase_diagram, psnn_errors,
    ErrorRow, ErrorTable,
};
use crate::locate::{cut_search, locate, write_locate_csv, SnnCache};
use crate::locate::meanshift::meanshift_locate;
use crate::network::{load_checkpoint, save_checkpoint, CheckpointMeta, PsnnModel};
use crate::system::gray_scott;
use crate::target::Channel;
use crate::training::{convergence_sweep, init_model, train, write_sweep_csv, SweepCell};
use crate::{Error, Result};

/// Mixed into the data seed for the masked dataset variant, so the complete
/// and incomplete files draw from unrelated streams.
const INCOMPLETE_STREAM: u64 = 0x696e_636f;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DatasetArg {
    Complete,
    Incomplete,
}

impl DatasetArg {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetArg::Complete => "complete",
            DatasetArg::Incomplete => "incomplete",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ChannelArg {
    Solution,
    Stability,
}

impl ChannelArg {
    pub fn channel(self) -> Channel {
        match self {
            ChannelArg::Solution => Channel::Solution,
            ChannelArg::Stability => Channel::Stability,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Psnn,
    Meanshift,
    Both,
}

/// Appendix for `--help`: the full configuration reference with defaults.
fn config_reference() -> String {
    let defaults = toml::to_string(&RunConfig::default())
        .unwrap_or_else(|e| format!("# serialization failed: {e}"));
    format!(
        "Configuration reference (TOML). Every field with its default value:\n\n\
         {defaults}\n\
         Any field or section may be omitted. --seed overrides the seed of the\n\
         invoked stage (gen-data: seeds.data, train/sweep: seeds.train,\n\
         meanshift: seeds.meanshift, other locate-based commands: seeds.cluster).\n\
         --out overrides paths.output_dir."
    )
}

#[derive(Debug, Parser)]
#[command(
    name = "psnn",
    version,
    about = "Learns where a parameterized system has steady states, finds them, and labels their stability",
    after_help = "Run --help (long form) for the full configuration reference.",
    after_long_help = config_reference()
)]
pub struct Cli {
    /// TOML configuration file; omitted fields keep their defaults.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Override the invoked stage's seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,

    /// Worker threads for parallel stages (default: all cores). Results do
    /// not depend on this.
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,

    /// Override the output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate observation files with split assignments.
    GenData {
        /// Also write a masked variant, withholding one solution from this
        /// many train records (count defaults to dataset.mask_count).
        #[arg(long, value_name = "COUNT")]
        mask: Option<Option<usize>>,
    },
    /// Train one channel's model; writes a checkpoint and a loss report.
    Train {
        #[arg(long, value_enum)]
        channel: ChannelArg,
        #[arg(long, value_enum, default_value = "complete")]
        dataset: DatasetArg,
        /// Override training.epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Calibrate the collection level on the search split.
    CutSearch {
        #[arg(long, value_enum, default_value = "complete")]
        dataset: DatasetArg,
    },
    /// Locate steady states for one parameter point; prints one line per
    /// found solution with its stability label.
    Locate {
        /// Parameter point as comma-separated coordinates, e.g. 0.1,0.05.
        #[arg(long, value_name = "F,K")]
        theta: String,
        #[arg(long, value_enum, default_value = "complete")]
        dataset: DatasetArg,
        /// Override locate.l_cut.
        #[arg(long)]
        l_cut: Option<f64>,
    },
    /// Scan the parameter box and compare predicted solution counts and
    /// stability signatures with the closed form.
    PhaseDiagram {
        #[arg(long, value_enum, default_value = "complete")]
        dataset: DatasetArg,
    },
    /// Score predicted solution sets against withheld truth.
    Evaluate {
        #[arg(long, value_enum, default_value = "complete")]
        dataset: DatasetArg,
        #[arg(long, value_enum, default_value = "both")]
        method: MethodArg,
        /// Training seeds of the checkpoints to average over
        /// (default: seeds.train).
        #[arg(long, value_delimiter = ',', value_name = "S1,S2,...")]
        seeds: Vec<u64>,
    },
    /// Verify the low-rank structure of the target field numerically.
    KernelCheck,
    /// Mean-shift baseline: locate steady states for one parameter point
    /// from raw training samples, without a trained model.
    Meanshift {
        /// Parameter point as comma-separated coordinates, e.g. 0.1,0.05.
        #[arg(long, value_name = "F,K")]
        theta: String,
        #[arg(long, value_enum, default_value = "complete")]
        dataset: DatasetArg,
        /// Override locate.l_cut.
        #[arg(long)]
        l_cut: Option<f64>,
    },
    /// Check that the documentation's recipes match the CLI and its artifacts.
    DocCheck,
    /// Train a grid of architectures and record held-out error.
    Sweep {
        /// Architecture as N,L1,W1,L2,W2 (repeatable; default: the
        /// configured network).
        #[arg(long = "cell", value_name = "N,L1,W1,L2,W2")]
        cells: Vec<String>,
        /// Training seeds (default: seeds.train and the next two decades).
        #[arg(long, value_delimiter = ',', value_name = "S1,S2,...")]
        seeds: Vec<u64>,
        /// Override training.epochs.
        #[arg(long)]
        epochs: Option<usize>,
    },
}

pub fn main_entry() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be at least 1".into()));
        }
        // Ignore the error when a pool already exists (tests call run()
        // repeatedly in one process); sizing is best-effort by contract.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = cli.out {
        cfg.paths.output_dir = out;
    }
    if let Some(seed) = cli.seed {
        match &cli.command {
            Command::GenData { .. } => cfg.seeds.data = seed,
            Command::Train { .. } | Command::Sweep { .. } => cfg.seeds.train = seed,
            Command::Meanshift { .. } => cfg.seeds.meanshift = seed,
            Command::CutSearch { .. }
            | Command::Locate { .. }
            | Command::PhaseDiagram { .. }
            | Command::Evaluate { .. } => cfg.seeds.cluster = seed,
            Command::KernelCheck | Command::DocCheck => {}
        }
    }
    match cli.command {
        Command::GenData { mask } => cmd_gen_data(&cfg, mask),
        Command::Train { channel, dataset, epochs } => cmd_train(&cfg, channel, dataset, epochs),
        Command::CutSearch { dataset } => cmd_cut_search(&cfg, dataset),
        Command::Locate { theta, dataset, l_cut } => cmd_locate(&cfg, dataset, &theta, l_cut),
        Command::PhaseDiagram { dataset } => cmd_phase_diagram(&cfg, dataset),
        Command::Evaluate { dataset, method, seeds } => {
            cmd_evaluate(&cfg, dataset, method, &seeds)
        }
        Command::KernelCheck => cmd_kernel_check(&cfg),
        Command::Meanshift { theta, dataset, l_cut } => {
            cmd_meanshift(&cfg, dataset, &theta, l_cut)
        }
        Command::DocCheck => cmd_doc_check(),
        Command::Sweep { cells, seeds, epochs } => cmd_sweep(&cfg, &cells, &seeds, epochs),
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))
}

fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(format!("{:x}", hasher.finalize()))
}

/// Writes the `.meta.json` sidecar next to an artifact. All run-varying
/// information (timestamps, wall time) is confined here.
fn write_meta(artifact: &Path, command: &str, wall_seconds: f64, notes: &[String]) -> Result<()> {
    let created = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let meta = serde_json::json!({
        "command": command,
        "created_unix": created,
        "wall_seconds": wall_seconds,
        "notes": notes,
    });
    let path = sidecar_path(artifact);
    std::fs::write(&path, format!("{meta:#}\n"))?;
    Ok(())
}

fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    artifact.with_file_name(name)
}

fn data_path(cfg: &RunConfig, dataset: DatasetArg) -> PathBuf {
    cfg.paths.data_dir.join(format!("{}.jsonl", dataset.as_str()))
}

fn removed_path(cfg: &RunConfig) -> PathBuf {
    cfg.paths.data_dir.join("incomplete.removed.json")
}

fn checkpoint_path(cfg: &RunConfig, dataset: DatasetArg, channel: Channel, seed: u64) -> PathBuf {
    cfg.paths.checkpoint_dir.join(format!("{}-{}-{}.json", dataset.as_str(), channel, seed))
}

fn load_set(cfg: &RunConfig, dataset: DatasetArg) -> Result<ObservationSet> {
    let path = data_path(cfg, dataset);
    if !path.exists() {
        return Err(Error::Config(format!(
            "observation file {} not found; run gen-data{} first",
            path.display(),
            if dataset == DatasetArg::Incomplete { " --mask" } else { "" }
        )));
    }
    load_observations(&path)
}

/// Loads the solution and stability checkpoints for one dataset and training
/// seed, refusing mismatched data digests.
fn load_model_pair(
    cfg: &RunConfig,
    dataset: DatasetArg,
    seed: u64,
) -> Result<(PsnnModel, PsnnModel, CheckpointMeta)> {
    let mut models = Vec::with_capacity(2);
    let mut metas = Vec::with_capacity(2);
    for channel in [Channel::Solution, Channel::Stability] {
        let path = checkpoint_path(cfg, dataset, channel, seed);
        if !path.exists() {
            return Err(Error::Config(format!(
                "checkpoint {} not found; run train --channel {channel} --dataset {} first",
                path.display(),
                dataset.as_str()
            )));
        }
        let (model, meta) = load_checkpoint(&path)?;
        models.push(model);
        metas.push(meta);
    }
    if metas[0].data_digest != metas[1].data_digest {
        return Err(Error::Contract(
            "solution and stability checkpoints were trained on different data files".into(),
        ));
    }
    let stability = models.pop().expect("two entries");
    let solution = models.pop().expect("one entry");
    Ok((solution, stability, metas.pop().expect("two entries")))
}

fn check_digest(meta: &CheckpointMeta, cfg: &RunConfig, dataset: DatasetArg) -> Result<()> {
    let current = file_digest(&data_path(cfg, dataset))?;
    if meta.data_digest != current {
        return Err(Error::Contract(format!(
            "checkpoint was trained on different data than {} currently holds; regenerate or retrain",
            data_path(cfg, dataset).display()
        )));
    }
    Ok(())
}

fn parse_theta(s: &str, dim: usize) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != dim {
        return Err(Error::Config(format!(
            "--theta needs {dim} comma-separated coordinates, got {:?}",
            s
        )));
    }
    parts
        .iter()
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("--theta coordinate {:?} is not a number", p)))
        })
        .collect()
}

fn parse_cell(s: &str) -> Result<SweepCell> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 5 {
        return Err(Error::Config(format!("--cell needs N,L1,W1,L2,W2, got {:?}", s)));
    }
    let nums: Result<Vec<usize>> = parts
        .iter()
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("--cell entry {:?} is not a count", p)))
        })
        .collect();
    let nums = nums?;
    if nums.iter().any(|&v| v == 0) {
        return Err(Error::Config(format!("--cell entries must be nonzero, got {:?}", s)));
    }
    Ok(SweepCell {
        inner_dim: nums[0],
        pnn_depth: nums[1],
        pnn_width: nums[2],
        snn_depth: nums[3],
        snn_width: nums[4],
    })
}

fn cmd_gen_data(cfg: &RunConfig, mask: Option<Option<usize>>) -> Result<()> {
    let start = Instant::now();
    ensure_dir(&cfg.paths.data_dir)?;
    let spec = cfg.dataset_spec(true);
    let set = generate_observations(&spec, cfg.seeds.data);
    let complete_path = data_path(cfg, DatasetArg::Complete);
    save_observations(&complete_path, &set)?;
    eprintln!(
        "wrote {} ({} records: {} train, {} search, {} test)",
        complete_path.display(),
        set.records.len(),
        spec.train_count,
        spec.search_count,
        spec.test_count
    );
    let mut notes = Vec::new();
    if let Some(count) = mask {
        let count = count.unwrap_or(cfg.dataset.mask_count);
        let spec_inc = cfg.dataset_spec(false);
        let full = generate_observations(&spec_inc, cfg.seeds.data ^ INCOMPLETE_STREAM);
        let (masked, removed) = mask_incomplete(&full, count, cfg.seeds.data)?;
        let inc_path = data_path(cfg, DatasetArg::Incomplete);
        save_observations(&inc_path, &masked)?;
        save_removed(&removed_path(cfg), &removed)?;
        eprintln!(
            "wrote {} ({} records, {} masked) and {}",
            inc_path.display(),
            masked.records.len(),
            removed.len(),
            removed_path(cfg).display()
        );
        notes.push(format!("masked {} records", removed.len()));
    }
    write_meta(&complete_path, "gen-data", start.elapsed().as_secs_f64(), &notes)
}

fn cmd_train(
    cfg: &RunConfig,
    channel: ChannelArg,
    dataset: DatasetArg,
    epochs: Option<usize>,
) -> Result<()> {
    let start = Instant::now();
    let channel = channel.channel();
    let set = load_set(cfg, dataset)?;
    let digest = file_digest(&data_path(cfg, dataset))?;
    let dev = cfg.deviation_config(&set.domain);
    let plan = cfg.sampling_plan();
    let (train_set, fallback) =
        build_training_set(&set, Split::Train, channel, &plan, &dev, cfg.seeds.data)?;
    let (test_set, _) =
        build_training_set(&set, Split::Test, channel, &plan, &dev, cfg.seeds.data)?;
    let train_flat = train_set.flatten();
    let test_flat = test_set.flatten();

    let seed = cfg.seeds.train;
    let mut model = init_model(cfg.psnn_spec(set.omega.dim(), set.domain.dim()), channel, seed)?;
    let mut train_cfg = cfg.train_config(channel);
    if let Some(e) = epochs {
        train_cfg.epochs = e;
    }
    ensure_dir(&cfg.paths.checkpoint_dir)?;
    ensure_dir(&cfg.paths.output_dir)?;
    let ckpt = checkpoint_path(cfg, dataset, channel, seed);

    let report = match train(&mut model, &train_flat, Some(&test_flat), &train_cfg) {
        Ok(r) => r,
        Err(Error::Diverged { epoch, message }) => {
            let partial = serde_json::json!({ "epoch": epoch, "message": message });
            std::fs::write(
                ckpt.with_extension("diverged.json"),
                format!("{partial:#}\n"),
            )?;
            return Err(Error::Diverged { epoch, message });
        }
        Err(other) => return Err(other),
    };

    save_checkpoint(&ckpt, &model, &CheckpointMeta { seed, data_digest: digest })?;

    let stem = format!("{}-{}-{}", dataset.as_str(), channel, seed);
    let losses_path = cfg.paths.output_dir.join(format!("{stem}.losses.csv"));
    let mut losses = String::from("epoch,loss\n");
    for (i, l) in report.epoch_losses.iter().enumerate() {
        losses.push_str(&format!("{},{}\n", i, l));
    }
    std::fs::write(&losses_path, losses)?;

    let final_loss = report.epoch_losses.last().copied().unwrap_or(f64::NAN);
    let test_mse = report.test_mse.expect("test split was supplied");
    let row = format!(
        "{},{},{},{},{},{},{},{}",
        dataset.as_str(),
        channel,
        seed,
        train_cfg.epochs,
        final_loss,
        test_mse,
        report.eta,
        report.nonconvergence_warning
    );
    append_unique_row(
        &cfg.paths.output_dir.join("train-report.csv"),
        "dataset,channel,seed,epochs,final_loss,test_mse,eta,warning",
        &row,
    )?;

    let mut notes = Vec::new();
    if report.nonconvergence_warning {
        notes.push("loss still rising over the final epochs".to_string());
        eprintln!("warning: loss still rising over the final epochs; consider more of them");
    }
    if !fallback.is_empty() {
        notes.push(format!("{} records used the singleton width fallback", fallback.len()));
        eprintln!(
            "note: {} incomplete records had no usable neighbors and used the singleton width",
            fallback.len()
        );
    }
    eprintln!(
        "trained {stem} for {} epochs: final loss {:.3e}, test mse {:.3e}",
        train_cfg.epochs, final_loss, test_mse
    );
    eprintln!("checkpoint: {}", ckpt.display());
    write_meta(&ckpt, "train", start.elapsed().as_secs_f64(), &notes)
}

/// Appends a CSV row unless an identical one is already present, creating the
/// file with the header first. Reruns therefore leave the bytes unchanged.
fn append_unique_row(path: &Path, header: &str, row: &str) -> Result<()> {
    let mut text = if path.exists() {
        std::fs::read_to_string(path)?
    } else {
        String::new()
    };
    if text.is_empty() {
        text.push_str(header);
        text.push('\n');
    }
    if !text.lines().any(|l| l == row) {
        text.push_str(row);
        text.push('\n');
        std::fs::write(path, text)?;
    }
    Ok(())
}

fn cmd_cut_search(cfg: &RunConfig, dataset: DatasetArg) -> Result<()> {
    let start = Instant::now();
    let set = load_set(cfg, dataset)?;
    let (solution, _, meta) = load_model_pair(cfg, dataset, cfg.seeds.train)?;
    check_digest(&meta, cfg, dataset)?;
    let cache = SnnCache::build(&solution, &cfg.cut_search_grid(), &set.domain)?;
    let result = cut_search(
        &solution,
        &set,
        Split::Search,
        &cache,
        &cfg.cut_search_config(),
        &cfg.cluster_params(),
    )?;
    ensure_dir(&cfg.paths.output_dir)?;
    let path = cfg.paths.output_dir.join(format!("cut-search-{}.csv", dataset.as_str()));
    let mut out = String::from("cut,average_error\n");
    for (cut, err) in result.cuts.iter().zip(&result.errors) {
        out.push_str(&format!("{},{}\n", cut, err));
    }
    std::fs::write(&path, out)?;
    println!("{}", result.l_cut);
    eprintln!("selected collection level {} (wrote {})", result.l_cut, path.display());
    write_meta(&path, "cut-search", start.elapsed().as_secs_f64(), &[])
}

fn cmd_locate(
    cfg: &RunConfig,
    dataset: DatasetArg,
    theta_str: &str,
    l_cut: Option<f64>,
) -> Result<()> {
    let start = Instant::now();
    let sys = gray_scott();
    let theta = parse_theta(theta_str, sys.parameter_box.dim())?;
    if !sys.parameter_box.contains(&theta) {
        return Err(Error::Config(format!(
            "--theta {:?} lies outside the parameter box {:?}",
            theta,
            sys.parameter_box.to_pairs()
        )));
    }
    let (solution, stability, _) = load_model_pair(cfg, dataset, cfg.seeds.train)?;
    let cache = SnnCache::build(&solution, &cfg.locate_grid(), &sys.domain)?;
    let l_cut = l_cut.unwrap_or(cfg.locate.l_cut);
    let result = locate(&solution, &stability, &cache, &theta, l_cut, &cfg.cluster_params())?;
    let labels = result.stability.as_deref().unwrap_or(&[]);
    if result.centers.is_empty() {
        eprintln!("no solutions found at this parameter point");
    }
    for (center, label) in result.centers.iter().zip(labels) {
        let coords: Vec<String> = center.iter().map(|v| v.to_string()).collect();
        println!("{} {}", coords.join(" "), label);
    }
    eprintln!(
        "collected {} grid points above level {}, silhouette {:.3}",
        result.n_collected, l_cut, result.silhouette
    );
    ensure_dir(&cfg.paths.output_dir)?;
    let path = cfg.paths.output_dir.join("locate.csv");
    write_locate_csv(&path, std::slice::from_ref(&result))?;
    write_meta(&path, "locate", start.elapsed().as_secs_f64(), &[])
}

fn cmd_phase_diagram(cfg: &RunConfig, dataset: DatasetArg) -> Result<()> {
    let start = Instant::now();
    let sys = gray_scott();
    let (solution, stability, _) = load_model_pair(cfg, dataset, cfg.seeds.train)?;
    let cache = SnnCache::build(&solution, &cfg.locate_grid(), &sys.domain)?;
    let diagram = phase_diagram(
        &solution,
        &stability,
        &cache,
        cfg.locate.l_cut,
        &cfg.cluster_params(),
        &sys.parameter_box,
        &cfg.phase_diagram.cells,
    )?;
    ensure_dir(&cfg.paths.output_dir)?;
    let csv_path = cfg.paths.output_dir.join(format!("phase-diagram-{}.csv", dataset.as_str()));
    diagram.write_csv(&csv_path)?;
    let svg_path = csv_path.with_extension("svg");
    crate::evaluate::svg::phase_diagram_svg(&diagram, &svg_path)?;
    println!("count agreement (off-boundary cells): {:.4}", diagram.count_agreement());
    println!("signature agreement (two-solution cells): {:.4}", diagram.signature_agreement());
    eprintln!("wrote {} and {}", csv_path.display(), svg_path.display());
    write_meta(&csv_path, "phase-diagram", start.elapsed().as_secs_f64(), &[])
}

fn cmd_evaluate(
    cfg: &RunConfig,
    dataset: DatasetArg,
    method: MethodArg,
    seeds: &[u64],
) -> Result<()> {
    let start = Instant::now();
    let set = load_set(cfg, dataset)?;
    let seeds = if seeds.is_empty() { vec![cfg.seeds.train] } else { seeds.to_vec() };

    // Split "random": the held-out test records. Split "lost-data": the
    // masked records with their withheld solutions restored from the
    // evaluation sidecar (incomplete dataset only).
    let test_records: Vec<&ObservationRecord> =
        set.records.iter().filter(|r| r.split == Split::Test).collect();
    let lost_records: Option<Vec<ObservationRecord>> = if dataset == DatasetArg::Incomplete {
        let removed = load_removed(&removed_path(cfg)).map_err(|e| {
            Error::Config(format!(
                "cannot read {} (needed for the lost-data split): {e}",
                removed_path(cfg).display()
            ))
        })?;
        let mut restored = Vec::with_capacity(removed.len());
        for r in &removed {
            let mut record = set.records[r.record_index].clone();
            record.solutions.push(r.solution.clone());
            record.stability.push(r.flag);
            restored.push(record);
        }
        Some(restored)
    } else {
        None
    };

    let mut table = ErrorTable::default();
    let splits: Vec<(&str, Vec<&ObservationRecord>)> = {
        let mut v = vec![("random", test_records)];
        if let Some(ref lost) = lost_records {
            v.push(("lost-data", lost.iter().collect()));
        }
        v
    };

    if method != MethodArg::Meanshift {
        for (split_name, records) in &splits {
            let mut runs = Vec::with_capacity(seeds.len());
            for &seed in &seeds {
                let (solution, stability, meta) = load_model_pair(cfg, dataset, seed)?;
                check_digest(&meta, cfg, dataset)?;
                let cache = SnnCache::build(&solution, &cfg.locate_grid(), &set.domain)?;
                runs.push(psnn_errors(
                    &solution,
                    &stability,
                    &cache,
                    cfg.locate.l_cut,
                    &cfg.cluster_params(),
                    records,
                    &set.domain,
                )?);
            }
            table.rows.push(ErrorRow {
                method: "psnn".into(),
                dataset: dataset.as_str().into(),
                split: (*split_name).into(),
                metrics: average_metrics(&runs)?,
            });
        }
    }

    if method != MethodArg::Psnn {
        let dev = cfg.deviation_config(&set.domain);
        let plan = cfg.sampling_plan();
        let (training, _) =
            build_training_set(&set, Split::Train, Channel::Solution, &plan, &dev, cfg.seeds.data)?;
        let ms = cfg.meanshift_params(&set.omega, &set.domain);
        for (split_name, records) in &splits {
            let metrics = meanshift_errors(
                &training,
                cfg.locate.l_cut,
                &ms,
                &cfg.cluster_params(),
                records,
                &set.domain,
            )?;
            table.rows.push(ErrorRow {
                method: "meanshift".into(),
                dataset: dataset.as_str().into(),
                split: (*split_name).into(),
                metrics,
            });
        }
    }

    ensure_dir(&cfg.paths.output_dir)?;
    let path = cfg.paths.output_dir.join(format!("error-table-{}.csv", dataset.as_str()));
    table.write_csv(&path)?;
    for row in &table.rows {
        let stb = row
            .metrics
            .wrong_stability
            .map(|v| format!("{:.4}", v))
            .unwrap_or_else(|| "-".into());
        println!(
            "{}/{}/{}: wrong-count {:.4}, distance {:.4}, wrong-stability {}",
            row.method, row.dataset, row.split, row.metrics.wrong_count, row.metrics.distance, stb
        );
    }
    eprintln!("wrote {}", path.display());
    write_meta(&path, "evaluate", start.elapsed().as_secs_f64(), &[])
}

fn cmd_kernel_check(cfg: &RunConfig) -> Result<()> {
    let start = Instant::now();
    let sys = gray_scott();
    let field = gray_scott_field(&sys.domain);
    let report = kernel_check(
        &field,
        &sys.domain,
        &cfg.kernel.d_grid,
        &sys.parameter_box,
        &cfg.kernel.omega_grid,
        &cfg.kernel.truncation_ranks,
    )?;
    ensure_dir(&cfg.paths.output_dir)?;
    let eig_path = cfg.paths.output_dir.join("eigenvalues.csv");
    let trunc_path = cfg.paths.output_dir.join("truncation.csv");
    report.write_eigenvalue_csv(&eig_path)?;
    report.write_truncation_csv(&trunc_path)?;
    println!(
        "rank {} of {}, decay exponent {}",
        report.rank,
        report.eigenvalues.len(),
        report.decay_exponent.map(|p| format!("{:.3}", p)).unwrap_or_else(|| "n/a".into())
    );
    for t in &report.truncations {
        println!(
            "N={}: truncation error^2 {:.6e}, eigenvalue tail {:.6e}, relative gap {:.2e}",
            t.n,
            t.err_sq,
            t.tail,
            t.relative_gap()
        );
    }
    eprintln!("wrote {} and {}", eig_path.display(), trunc_path.display());
    write_meta(&eig_path, "kernel-check", start.elapsed().as_secs_f64(), &[])
}

fn cmd_meanshift(
    cfg: &RunConfig,
    dataset: DatasetArg,
    theta_str: &str,
    l_cut: Option<f64>,
) -> Result<()> {
    let start = Instant::now();
    let set = load_set(cfg, dataset)?;
    let theta = parse_theta(theta_str, set.omega.dim())?;
    if !set.omega.contains(&theta) {
        return Err(Error::Config(format!(
            "--theta {:?} lies outside the parameter box {:?}",
            theta,
            set.omega.to_pairs()
        )));
    }
    let dev = cfg.deviation_config(&set.domain);
    let plan = cfg.sampling_plan();
    let (training, _) =
        build_training_set(&set, Split::Train, Channel::Solution, &plan, &dev, cfg.seeds.data)?;
    let l_cut = l_cut.unwrap_or(cfg.locate.l_cut);
    let result = meanshift_locate(
        &training,
        &theta,
        &set.domain,
        l_cut,
        &cfg.meanshift_params(&set.omega, &set.domain),
        &cfg.cluster_params(),
    )?;
    if result.centers.is_empty() {
        eprintln!("no solutions found at this parameter point");
    }
    for center in &result.centers {
        let coords: Vec<String> = center.iter().map(|v| v.to_string()).collect();
        println!("{}", coords.join(" "));
    }
    eprintln!("{} of the shifted starts survived the level filter", result.n_collected);
    ensure_dir(&cfg.paths.output_dir)?;
    let path = cfg.paths.output_dir.join("meanshift.csv");
    write_locate_csv(&path, std::slice::from_ref(&result))?;
    write_meta(&path, "meanshift", start.elapsed().as_secs_f64(), &[])
}

fn cmd_doc_check() -> Result<()> {
    let root = Path::new(".");
    if !root.join("docs").join("reproduction.md").exists() {
        return Err(Error::Config(
            "docs/reproduction.md not found; run doc-check from the repository root".into(),
        ));
    }
    let failures = check_docs(root)?;
    if failures.is_empty() {
        println!("doc-check: all recipes parse and all artifacts map to subcommands");
        Ok(())
    } else {
        for f in &failures {
            println!("doc-check failure: {f}");
        }
        Err(Error::Contract(format!("{} documentation check(s) failed", failures.len())))
    }
}

fn cmd_sweep(
    cfg: &RunConfig,
    cell_args: &[String],
    seeds: &[u64],
    epochs: Option<usize>,
) -> Result<()> {
    let start = Instant::now();
    let cells: Vec<SweepCell> = if cell_args.is_empty() {
        vec![SweepCell {
            inner_dim: cfg.network.inner_dim,
            pnn_depth: cfg.network.pnn_depth,
            pnn_width: cfg.network.pnn_width,
            snn_depth: cfg.network.snn_depth,
            snn_width: cfg.network.snn_width,
        }]
    } else {
        cell_args.iter().map(|s| parse_cell(s)).collect::<Result<_>>()?
    };
    let seeds: Vec<u64> = if seeds.is_empty() {
        vec![cfg.seeds.train, cfg.seeds.train + 10, cfg.seeds.train + 20]
    } else {
        seeds.to_vec()
    };
    let set = load_set(cfg, DatasetArg::Complete)?;
    let dev = cfg.deviation_config(&set.domain);
    let plan = cfg.sampling_plan();
    let (train_set, _) =
        build_training_set(&set, Split::Train, Channel::Solution, &plan, &dev, cfg.seeds.data)?;
    let (test_set, _) =
        build_training_set(&set, Split::Test, Channel::Solution, &plan, &dev, cfg.seeds.data)?;
    let train_flat = train_set.flatten();
    let test_flat = test_set.flatten();
    let mut base = cfg.train_config(Channel::Solution);
    if let Some(e) = epochs {
        base.epochs = e;
    }
    let outcome = convergence_sweep(
        &cells,
        &seeds,
        &train_flat,
        &test_flat,
        &base,
        set.omega.dim(),
        set.domain.dim(),
    )?;
    ensure_dir(&cfg.paths.output_dir)?;
    let path = cfg.paths.output_dir.join("sweep.csv");
    write_sweep_csv(&path, &outcome.rows)?;
    for r in &outcome.rows {
        println!(
            "N={} L1={} W1={} L2={} W2={} seed={}: test mse {:.4e}",
            r.cell.inner_dim,
            r.cell.pnn_depth,
            r.cell.pnn_width,
            r.cell.snn_depth,
            r.cell.snn_width,
            r.seed,
            r.test_mse
        );
    }
    for f in &outcome.failures {
        eprintln!(
            "warning: N={} L1={} W1={} L2={} W2={} seed={} {}",
            f.cell.inner_dim,
            f.cell.pnn_depth,
            f.cell.pnn_width,
            f.cell.snn_depth,
            f.cell.snn_width,
            f.seed,
            f.message
        );
    }
    eprintln!("wrote {}", path.display());
    write_meta(&path, "sweep", start.elapsed().as_secs_f64(), &[])
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn argument_definitions_are_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn every_subcommand_parses() {
        for args in [
            vec!["psnn", "gen-data"],
            vec!["psnn", "gen-data", "--mask"],
            vec!["psnn", "gen-data", "--mask", "60"],
            vec!["psnn", "train", "--channel", "solution"],
            vec!["psnn", "train", "--channel", "stability", "--dataset", "incomplete"],
            vec!["psnn", "cut-search"],
            vec!["psnn", "locate", "--theta", "0.1,0.05"],
            vec!["psnn", "locate", "--theta", "0.1,0.05", "--l-cut", "0.7"],
            vec!["psnn", "phase-diagram", "--dataset", "incomplete"],
            vec!["psnn", "evaluate", "--method", "psnn", "--seeds", "2,12,22"],
            vec!["psnn", "kernel-check"],
            vec!["psnn", "meanshift", "--theta", "0.1,0.05"],
            vec!["psnn", "doc-check"],
            vec!["psnn", "sweep", "--cell", "8,4,30,3,20", "--seeds", "2,12", "--epochs", "5"],
            vec!["psnn", "--config", "x.toml", "--seed", "9", "--workers", "2", "--out", "o", "locate", "--theta", "0,0"],
        ] {
            Cli::try_parse_from(&args).unwrap_or_else(|e| panic!("{args:?}: {e}"));
        }
    }

    #[test]
    fn config_reference_lists_fields_with_defaults() {
        let text = config_reference();
        for needle in [
            "[dataset]",
            "train_count = 1000",
            "[network]",
            "inner_dim = 8",
            "l_cut = 0.6",
            "sil_threshold = 0.6",
            "[seeds]",
        ] {
            assert!(text.contains(needle), "missing {needle:?} in config reference");
        }
    }

    #[test]
    fn theta_parsing_rejects_malformed_input() {
        assert_eq!(parse_theta("0.1,0.05", 2).unwrap(), vec![0.1, 0.05]);
        assert_eq!(parse_theta(" 0.1 , 0.05 ", 2).unwrap(), vec![0.1, 0.05]);
        assert!(matches!(parse_theta("0.1", 2), Err(Error::Config(_))));
        assert!(matches!(parse_theta("a,b", 2), Err(Error::Config(_))));
    }

    #[test]
    fn cell_parsing_maps_to_architectures() {
        let c = parse_cell("8,4,30,3,20").unwrap();
        assert_eq!(
            c,
            SweepCell { inner_dim: 8, pnn_depth: 4, pnn_width: 30, snn_depth: 3, snn_width: 20 }
        );
        assert!(parse_cell("8,4,30").is_err());
        assert!(parse_cell("8,4,30,0,20").is_err());
        assert!(parse_cell("8,4,x,3,20").is_err());
    }

    #[test]
    fn sidecars_sit_next_to_their_artifacts() {
        assert_eq!(
            sidecar_path(Path::new("out/phase-diagram-complete.csv")),
            PathBuf::from("out/phase-diagram-complete.csv.meta.json")
        );
    }

    #[test]
    fn unique_append_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.csv");
        append_unique_row(&path, "a,b", "1,2").unwrap();
        append_unique_row(&path, "a,b", "1,2").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a,b\n1,2\n");
        append_unique_row(&path, "a,b", "3,4").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "a,b\n1,2\n3,4\n");
    }
}
