//! `spem`: generate data, train flows, build memory banks, score detectors,
//! run sweeps, verify the Gaussian bounds and produce benchmark tables.
//!
//! Every command loads and validates all of its inputs before writing
//! anything, and every output file is replaced atomically.

use std::error::Error as StdError;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spem_core::config::{ConfigMap, ExperimentConfig, SeedUse, SweepKind};
use spem_core::data::{fmt_f64, generate, load_csv, save_csv, write_csv, Table};
use spem_core::embed::{build_memory_bank, fit_embedder, Embedder, MemoryBank};
use spem_core::eval::{
    alpha_sweep, auroc, benchmark_run, sigma_sweep, BenchmarkRow, DetectorSuite, ScoreSet, SpemPipeline, SweepResult,
};
use spem_core::flow::{train, FlowModel};
use spem_core::spem::{AnomalyScore, Detector};
use spem_core::theorems::{self, BoundCheck};
use spem_core::Batch;

type CliResult<T> = Result<T, Box<dyn StdError>>;
type Loaded = (FlowModel, Option<(Embedder, MemoryBank)>);

/// Environment variable naming the default output directory.
const OUTPUT_DIR_ENV: &str = "SPEM_OUTPUT_DIR";

#[derive(Parser)]
#[command(
    name = "spem",
    version,
    about = "Likelihood OOD detection with similarity-scaled perturbation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Key/value config file (`section.key=value` per line).
    #[arg(long, short = 'c')]
    config: Option<PathBuf>,
    /// Global seed; overrides `run.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory for default inputs and outputs. Falls back to `run.output_dir`,
    /// then $SPEM_OUTPUT_DIR, then the current directory.
    #[arg(long, short = 'o')]
    output_dir: Option<PathBuf>,
    /// Overrides any config key, e.g. `--set train.epochs=50`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write train.csv and test.csv (with an id/ood split column).
    Gen {
        #[command(flatten)]
        common: Common,
        /// gaussian, gaussian_mixture, inversion_pair or non_inversion_pair.
        #[arg(long)]
        kind: Option<String>,
        #[arg(long)]
        n_train: Option<usize>,
        #[arg(long)]
        n_test: Option<usize>,
    },
    /// Train a coupling flow on a CSV and write model.bin.
    Train {
        #[command(flatten)]
        common: Common,
        /// Training CSV (default: OUTPUT_DIR/train.csv).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Model path (default: OUTPUT_DIR/model.bin).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Fit an embedder and build the ReAct-rectified memory bank.
    Bank {
        #[command(flatten)]
        common: Common,
        /// In-distribution CSV (default: OUTPUT_DIR/train.csv).
        #[arg(long)]
        data: Option<PathBuf>,
        /// identity, random_projection or pca.
        #[arg(long)]
        embedder: Option<String>,
        /// Embedding width.
        #[arg(long)]
        dim: Option<usize>,
        /// ReAct percentile in (0, 1].
        #[arg(long)]
        react_p: Option<f64>,
        /// Bank path (default: OUTPUT_DIR/bank.bin).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Embedder path (default: OUTPUT_DIR/embedder.bin).
        #[arg(long)]
        embedder_out: Option<PathBuf>,
    },
    /// Score a CSV with each detector; writes scores.csv and, when the data
    /// has an id/ood split, auroc.csv.
    Score {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: ModelInputs,
        /// Training CSV, needed by detectors that fit extra parts.
        #[arg(long)]
        train_data: Option<PathBuf>,
        /// Comma-separated detector names.
        #[arg(long)]
        detectors: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        /// Scores path (default: OUTPUT_DIR/scores.csv).
        #[arg(long)]
        out: Option<PathBuf>,
        /// AUROC summary path (default: OUTPUT_DIR/auroc.csv).
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// AUROC over a σ grid (likelihood of perturbed OOD) or an α grid (SPEM).
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        inputs: ModelInputs,
        /// sigma or alpha.
        #[arg(long)]
        kind: Option<String>,
        /// Comma-separated grid values.
        #[arg(long)]
        grid: Option<String>,
        /// Output path (default: OUTPUT_DIR/sweep.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the Gaussian bounds on random instances; exits 3 if any fails.
    VerifyTheorems {
        #[command(flatten)]
        common: Common,
        /// Instances per bound.
        #[arg(long)]
        instances: Option<usize>,
        #[arg(long)]
        mc_samples: Option<usize>,
        /// Output path (default: OUTPUT_DIR/theorems.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate, train and score every (pair, detector) combination.
    Benchmark {
        #[command(flatten)]
        common: Common,
        /// Comma-separated dataset kinds with an OOD split.
        #[arg(long)]
        pairs: Option<String>,
        #[arg(long)]
        detectors: Option<String>,
        /// Output path (default: OUTPUT_DIR/benchmark.csv).
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Default)]
struct ModelInputs {
    /// Flow model (default: OUTPUT_DIR/model.bin).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Memory bank (default: OUTPUT_DIR/bank.bin).
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Embedder matching the bank (default: OUTPUT_DIR/embedder.bin).
    #[arg(long = "embedder-file")]
    embedder: Option<PathBuf>,
    /// CSV to score (default: OUTPUT_DIR/test.csv).
    #[arg(long)]
    data: Option<PathBuf>,
}

/// Resolved configuration plus the raw map it came from.
struct Ctx {
    cfg: ExperimentConfig,
    map: ConfigMap,
    out_dir: PathBuf,
}

impl Ctx {
    fn build(common: &Common, flags: &[(&str, Option<String>)]) -> CliResult<Self> {
        let mut map = match &common.config {
            Some(p) => ConfigMap::load(p)?,
            None => ConfigMap::default(),
        };
        for pair in &common.set {
            map.set_pair(pair)?;
        }
        if let Some(s) = common.seed {
            map.set("run.seed", s.to_string())?;
        }
        for (k, v) in flags {
            if let Some(v) = v {
                map.set(k, v.clone())?;
            }
        }
        let cfg = ExperimentConfig::from_map(&map)?;
        let out_dir = common
            .output_dir
            .clone()
            .or_else(|| cfg.paths.output_dir.clone())
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Ctx { cfg, map, out_dir })
    }

    /// Explicit path, else the config path, else `<out_dir>/<name>`.
    fn path(&self, flag: &Option<PathBuf>, configured: &Option<PathBuf>, name: &str) -> PathBuf {
        flag.clone()
            .or_else(|| configured.clone())
            .unwrap_or_else(|| self.out_dir.join(name))
    }

    fn ensure_out_dir(&self) -> CliResult<()> {
        std::fs::create_dir_all(&self.out_dir)
            .map_err(|e| format!("creating output directory {}: {e}", self.out_dir.display()))?;
        Ok(())
    }
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p).map_err(|e| format!("creating directory {}: {e}", p.display()))?;
    }
    Ok(())
}

fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if !path.is_file() {
        return Err(format!("{what} not found: {}", path.display()).into());
    }
    Ok(())
}

/// ID and OOD rows of a split-labelled table.
fn split_sides(t: &Table, path: &Path) -> CliResult<(Batch, Batch)> {
    if t.split.is_none() {
        return Err(format!("{} has no split column", path.display()).into());
    }
    let id = t.rows_with_split("id");
    let ood = t.rows_with_split("ood");
    if id.1.is_empty() || ood.1.is_empty() {
        return Err(format!("{} needs both id and ood rows", path.display()).into());
    }
    Ok((id.0, ood.0))
}

fn cmd_gen(common: &Common, kind: &Option<String>, n_train: &Option<usize>, n_test: &Option<usize>) -> CliResult<()> {
    let ctx = Ctx::build(
        common,
        &[
            ("data.kind", kind.clone()),
            ("data.n_train", opt(n_train)),
            ("data.n_test", opt(n_test)),
        ],
    )?;
    let ds = generate(&ctx.cfg.data)?;
    let n_id = ds.test_id.nrows();
    let n_ood = ds.test_ood.nrows();
    let test = Table {
        x: ndarray::concatenate(ndarray::Axis(0), &[ds.test_id.view(), ds.test_ood.view()])?,
        split: Some(
            std::iter::repeat_n("id".to_string(), n_id)
                .chain(std::iter::repeat_n("ood".to_string(), n_ood))
                .collect(),
        ),
    };
    let train_table = Table {
        x: ds.train,
        split: None,
    };
    let train_path = ctx.out_dir.join("train.csv");
    let test_path = ctx.out_dir.join("test.csv");
    ctx.ensure_out_dir()?;
    save_csv(&train_path, &train_table)?;
    save_csv(&test_path, &test)?;
    log::info!("wrote {} and {}", train_path.display(), test_path.display());
    Ok(())
}

fn cmd_train(
    common: &Common,
    data_path: &Option<PathBuf>,
    out: &Option<PathBuf>,
    epochs: &Option<usize>,
) -> CliResult<()> {
    let ctx = Ctx::build(common, &[("train.epochs", opt(epochs))])?;
    let data_path = ctx.path(data_path, &ctx.cfg.paths.train_data, "train.csv");
    require_file(&data_path, "training data")?;
    let table = load_csv(&data_path)?;
    let x = match table.split {
        Some(_) => table.rows_with_split("id").0,
        None => table.x,
    };
    let tc = ctx.cfg.train_config_for(x.ncols());
    log::info!("training on {} rows of width {}", x.nrows(), x.ncols());
    let (model, trace) = train(&x, &tc)?;
    let out = ctx.path(out, &ctx.cfg.paths.model, "model.bin");
    let loss_path = out.with_extension("loss.csv");
    let rows: Vec<Vec<String>> = std::iter::once(trace.initial)
        .chain(trace.epochs.iter().copied())
        .enumerate()
        .map(|(i, l)| vec![i.to_string(), fmt_f64(l)])
        .collect();
    ensure_parent(&out)?;
    model.save(&out)?;
    write_csv(&loss_path, &["epoch".into(), "mean_nll".into()], &rows)?;
    log::info!("final mean NLL {:.4}; wrote {}", trace.last(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bank(
    common: &Common,
    data_path: &Option<PathBuf>,
    embedder: &Option<String>,
    dim: &Option<usize>,
    react_p: &Option<f64>,
    out: &Option<PathBuf>,
    embedder_out: &Option<PathBuf>,
) -> CliResult<()> {
    let ctx = Ctx::build(
        common,
        &[
            ("bank.embedder", embedder.clone()),
            ("bank.dim", opt(dim)),
            ("bank.react_p", opt(react_p)),
        ],
    )?;
    let data_path = ctx.path(data_path, &ctx.cfg.paths.train_data, "train.csv");
    require_file(&data_path, "bank data")?;
    let table = load_csv(&data_path)?;
    let x = match table.split {
        Some(_) => table.rows_with_split("id").0,
        None => table.x,
    };
    let c = &ctx.cfg;
    let e = fit_embedder(
        &x,
        c.embedder,
        c.embed_dim.unwrap_or(x.ncols()),
        c.seed_for(SeedUse::Bank),
    )?;
    let bank = build_memory_bank(&x, &e, &c.react)?;
    let bank_path = ctx.path(out, &c.paths.bank, "bank.bin");
    let emb_path = ctx.path(embedder_out, &c.paths.embedder, "embedder.bin");
    ensure_parent(&bank_path)?;
    ensure_parent(&emb_path)?;
    e.save(&emb_path)?;
    bank.save(&bank_path)?;
    log::info!("bank of {} rows, beta {:.6}", bank.len(), bank.beta());
    Ok(())
}

fn needs_bank(d: Detector) -> bool {
    matches!(d, Detector::Similarity | Detector::Spem | Detector::SpemNoise)
}

fn needs_training_data(d: Detector) -> bool {
    matches!(
        d,
        Detector::Complexity | Detector::Gmm | Detector::TypicalityEntropy | Detector::LikelihoodRatio
    )
}

/// Model, and the embedder/bank when `want_bank`.
fn load_model_inputs(ctx: &Ctx, inputs: &ModelInputs, want_bank: bool) -> CliResult<Loaded> {
    let c = &ctx.cfg;
    let model_path = ctx.path(&inputs.model, &c.paths.model, "model.bin");
    require_file(&model_path, "model")?;
    let model = FlowModel::load(&model_path)?;
    let bank = if want_bank {
        let emb_path = ctx.path(&inputs.embedder, &c.paths.embedder, "embedder.bin");
        let bank_path = ctx.path(&inputs.bank, &c.paths.bank, "bank.bin");
        require_file(&emb_path, "embedder")?;
        require_file(&bank_path, "memory bank")?;
        let e = Embedder::load(&emb_path)?;
        let b = MemoryBank::load_for(&bank_path, &e)?;
        if e.input_dim() != model.dim() {
            return Err(format!(
                "embedder input width {} differs from model width {}",
                e.input_dim(),
                model.dim()
            )
            .into());
        }
        Some((e, b))
    } else {
        None
    };
    Ok((model, bank))
}

fn score_row(id: usize, s: &AnomalyScore) -> Vec<String> {
    let o = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    vec![
        id.to_string(),
        s.detector.to_string(),
        fmt_f64(s.value),
        o(s.lambda),
        o(s.sigma),
    ]
}

#[allow(clippy::too_many_arguments)]
fn cmd_score(
    common: &Common,
    inputs: &ModelInputs,
    train_data: &Option<PathBuf>,
    detectors: &Option<String>,
    alpha: &Option<f64>,
    out: &Option<PathBuf>,
    summary: &Option<PathBuf>,
) -> CliResult<()> {
    let ctx = Ctx::build(
        common,
        &[("run.detectors", detectors.clone()), ("spem.alpha", opt(alpha))],
    )?;
    let c = &ctx.cfg;
    if c.detectors.is_empty() {
        return Err("no detectors requested".into());
    }
    let data_path = ctx.path(&inputs.data, &c.paths.data, "test.csv");
    require_file(&data_path, "data")?;
    let (model, bank) = load_model_inputs(&ctx, inputs, c.detectors.iter().any(|&d| needs_bank(d)))?;
    let table = load_csv(&data_path)?;
    if table.x.ncols() != model.dim() {
        return Err(format!(
            "data width {} differs from model width {}",
            table.x.ncols(),
            model.dim()
        )
        .into());
    }
    let mut suite = DetectorSuite::new(model, c.spem.clone());
    if let Some((e, b)) = bank {
        suite = suite.with_bank(e, b)?;
    }
    if c.detectors.iter().any(|&d| needs_training_data(d)) {
        let tp = ctx.path(train_data, &c.paths.train_data, "train.csv");
        require_file(&tp, "training data")?;
        let t = load_csv(&tp)?;
        let x = match t.split {
            Some(_) => t.rows_with_split("id").0,
            None => t.x,
        };
        suite = suite.fit(&x, &c.detectors, &c.suite_settings())?;
    }

    let labelled = table
        .split
        .as_ref()
        .is_some_and(|s| s.iter().any(|v| v == "id") && s.iter().any(|v| v == "ood"));
    let (id_idx, ood_idx) = if labelled {
        (table.rows_with_split("id").1, table.rows_with_split("ood").1)
    } else {
        (Vec::new(), Vec::new())
    };
    let mut rows = Vec::new();
    let mut summary_rows = Vec::new();
    for &det in &c.detectors {
        let scores = suite.score(det, &table.x, 0)?;
        rows.extend(scores.iter().enumerate().map(|(i, s)| score_row(i, s)));
        if labelled {
            let pick = |idx: &[usize]| idx.iter().map(|&i| scores[i].value).collect::<Vec<_>>();
            let a = auroc(&ScoreSet::new(pick(&id_idx), pick(&ood_idx))?)?;
            summary_rows.push(vec![det.to_string(), fmt_f64(a)]);
        }
    }
    let out = ctx.path(out, &None, "scores.csv");
    let header: Vec<String> = ["sample_id", "detector", "score", "lambda", "sigma"]
        .map(String::from)
        .to_vec();
    ensure_parent(&out)?;
    write_csv(&out, &header, &rows)?;
    if labelled {
        let sp = ctx.path(summary, &None, "auroc.csv");
        ensure_parent(&sp)?;
        write_csv(&sp, &["detector".into(), "auroc".into()], &summary_rows)?;
    }
    Ok(())
}

fn cmd_sweep(
    common: &Common,
    inputs: &ModelInputs,
    kind: &Option<String>,
    grid: &Option<String>,
    out: &Option<PathBuf>,
) -> CliResult<()> {
    let mut flags = vec![("sweep.kind", kind.clone())];
    let ctx0 = Ctx::build(common, &flags)?;
    let grid_key = match ctx0.cfg.sweep_kind {
        SweepKind::Sigma => "sweep.sigma_grid",
        SweepKind::Alpha => "sweep.alpha_grid",
    };
    flags.push((grid_key, grid.clone()));
    let ctx = Ctx::build(common, &flags)?;
    let c = &ctx.cfg;
    let data_path = ctx.path(&inputs.data, &c.paths.data, "test.csv");
    require_file(&data_path, "data")?;
    let (model, bank) = load_model_inputs(&ctx, inputs, c.sweep_kind == SweepKind::Alpha)?;
    let table = load_csv(&data_path)?;
    if table.x.ncols() != model.dim() {
        return Err(format!(
            "data width {} differs from model width {}",
            table.x.ncols(),
            model.dim()
        )
        .into());
    }
    let (id, ood) = split_sides(&table, &data_path)?;
    let result: SweepResult = match (c.sweep_kind, &bank) {
        (SweepKind::Sigma, _) => sigma_sweep(&model, &id, &ood, &c.sigma_grid, c.seed_for(SeedUse::Sweep))?,
        (SweepKind::Alpha, Some((e, b))) => alpha_sweep(
            SpemPipeline {
                model: &model,
                embedder: e,
                bank: b,
            },
            &id,
            &ood,
            &c.alpha_grid,
            c.spem.seed,
        )?,
        (SweepKind::Alpha, None) => unreachable!("bank loaded for alpha sweeps"),
    };
    let out = ctx.path(out, &None, "sweep.csv");
    ensure_parent(&out)?;
    write_csv(&out, &SweepResult::header(), &result.rows())?;
    Ok(())
}

/// Returns whether every non-diagnostic check held.
fn cmd_verify(
    common: &Common,
    instances: &Option<usize>,
    mc: &Option<usize>,
    out: &Option<PathBuf>,
) -> CliResult<bool> {
    let ctx = Ctx::build(
        common,
        &[("theorems.instances", opt(instances)), ("theorems.mc_samples", opt(mc))],
    )?;
    let checks = theorems::run_all(&ctx.cfg.theorems)?;
    let rows: Vec<Vec<String>> = checks.iter().map(BoundCheck::record).collect();
    let out = ctx.path(out, &None, "theorems.csv");
    ensure_parent(&out)?;
    write_csv(&out, &BoundCheck::header(), &rows)?;
    let failed = theorems::failures(&checks);
    for f in &failed {
        log::error!("{} failed on {}: lhs {} rhs {}", f.name, f.instance, f.lhs, f.rhs);
    }
    log::info!("{} checks, {} failed", checks.len(), failed.len());
    Ok(failed.is_empty())
}

fn cmd_benchmark(
    common: &Common,
    pairs: &Option<String>,
    detectors: &Option<String>,
    out: &Option<PathBuf>,
) -> CliResult<()> {
    let ctx = Ctx::build(
        common,
        &[("benchmark.pairs", pairs.clone()), ("run.detectors", detectors.clone())],
    )?;
    let bc = ctx.cfg.benchmark(&ctx.map)?;
    let rows = benchmark_run(&bc)?;
    let out = ctx.path(out, &None, "benchmark.csv");
    ensure_parent(&out)?;
    write_csv(
        &out,
        &BenchmarkRow::header(),
        &rows.iter().map(BenchmarkRow::record).collect::<Vec<_>>(),
    )?;
    Ok(())
}

fn run(cli: Cli) -> CliResult<ExitCode> {
    match &cli.command {
        Command::Gen {
            common,
            kind,
            n_train,
            n_test,
        } => cmd_gen(common, kind, n_train, n_test)?,
        Command::Train {
            common,
            data,
            out,
            epochs,
        } => cmd_train(common, data, out, epochs)?,
        Command::Bank {
            common,
            data,
            embedder,
            dim,
            react_p,
            out,
            embedder_out,
        } => cmd_bank(common, data, embedder, dim, react_p, out, embedder_out)?,
        Command::Score {
            common,
            inputs,
            train_data,
            detectors,
            alpha,
            out,
            summary,
        } => cmd_score(common, inputs, train_data, detectors, alpha, out, summary)?,
        Command::Sweep {
            common,
            inputs,
            kind,
            grid,
            out,
        } => cmd_sweep(common, inputs, kind, grid, out)?,
        Command::VerifyTheorems {
            common,
            instances,
            mc_samples,
            out,
        } => {
            if !cmd_verify(common, instances, mc_samples, out)? {
                eprintln!("error: one or more bound checks failed");
                return Ok(ExitCode::from(3));
            }
        }
        Command::Benchmark {
            common,
            pairs,
            detectors,
            out,
        } => cmd_benchmark(common, pairs, detectors, out)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
