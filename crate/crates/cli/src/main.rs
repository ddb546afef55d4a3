use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sparsekit::stats::DEFAULT_BINS;
use sparsekit::sweep::{parse_grid, DEFAULT_CAP, DEFAULT_GATE, DEFAULT_STEP};
use sparsekit::{
    apply_plan, finetune_layers, layer_stats, read_dataset, read_model, sparsity_report, sweep,
    weight_histogram, ArchManifest, Dataset, FinetuneConfig, Histogram, LayerStats, MethodParams,
    Model, RelativeDeltas, RelativeMode, SparsifyPlan, SweepMethod, TriangularMode,
};

#[derive(Parser)]
#[command(
    name = "sparsekit",
    version,
    about = "Retraining-free CNN weight sparsification",
    long_about = "Load a model, profile its layers, sparsify with the flat, triangular or \
                  relative threshold method, and measure the sparsity/accuracy trade-off."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer min/max/span and weight histograms.
    Stats {
        #[arg(long, value_name = "SPWT")]
        model: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BINS, value_parser = parse_bins)]
        bins: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Sparsify a model and write the result plus its plan.
    Sparsify {
        #[arg(long, value_name = "SPWT")]
        model: PathBuf,
        #[command(flatten)]
        method: MethodArgs,
        /// Output model; the plan is written next to it as `<out>.plan.json`.
        #[arg(long, short, value_name = "SPWT")]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
    },
    /// Zero counts and sparsity ratios of a model as stored.
    Report {
        #[arg(long, value_name = "SPWT")]
        model: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Top-1 accuracy, optionally after sparsifying in memory.
    Eval {
        #[command(flatten)]
        inputs: EvalInputs,
        /// Reference model for normalized accuracy (defaults to --model).
        #[arg(long, value_name = "SPWT")]
        baseline: Option<PathBuf>,
        #[command(flatten)]
        method: OptionalMethodArgs,
    },
    /// Sparsity/accuracy trade-off over a grid of deltas.
    Sweep {
        #[command(flatten)]
        inputs: EvalInputs,
        #[arg(long, value_enum)]
        method: MethodName,
        /// `start:end:step`, inclusive.
        #[arg(long, default_value = "0:1:0.1")]
        grid: String,
        #[arg(long)]
        mode: Option<String>,
        /// Pin delta_conv instead of following the grid (triangular).
        #[arg(long)]
        delta_conv: Option<f64>,
        /// Pin delta_fc instead of following the grid (triangular).
        #[arg(long)]
        delta_fc: Option<f64>,
        #[arg(long, default_value_t = DEFAULT_GATE)]
        gate: f64,
        #[arg(long, short, value_name = "CSV")]
        out: Option<PathBuf>,
    },
    /// Per-layer relative-percentile search under the accuracy gate.
    Finetune {
        #[command(flatten)]
        inputs: EvalInputs,
        #[arg(long, default_value_t = 0.7)]
        base: f64,
        #[arg(long, default_value_t = DEFAULT_STEP)]
        step: f64,
        #[arg(long, default_value_t = DEFAULT_CAP)]
        cap: f64,
        #[arg(long, default_value_t = DEFAULT_GATE)]
        gate: f64,
        #[arg(long, short, value_name = "CSV")]
        out: Option<PathBuf>,
        /// Also write the fine-tuned sparse model.
        #[arg(long, value_name = "SPWT")]
        save_model: Option<PathBuf>,
    },
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalInputs {
    #[arg(long, value_name = "SPWT")]
    model: PathBuf,
    #[arg(long, value_name = "JSON")]
    manifest: PathBuf,
    #[arg(long, value_name = "SPDS")]
    dataset: PathBuf,
}

impl EvalInputs {
    fn load(&self) -> Result<(Model, ArchManifest, Dataset)> {
        let model = load_model(&self.model)?;
        let manifest = ArchManifest::read(&self.manifest)
            .with_context(|| format!("reading manifest {}", self.manifest.display()))?;
        let data = read_dataset(&self.dataset)
            .with_context(|| format!("reading dataset {}", self.dataset.display()))?;
        manifest
            .check(&model, &data.input_shape)
            .context("manifest is incompatible with the model")?;
        Ok((model, manifest, data))
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodName {
    Flat,
    Triangular,
    Relative,
}

#[derive(Args)]
struct MethodArgs {
    #[arg(long, value_enum)]
    method: MethodName,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Args)]
struct OptionalMethodArgs {
    #[arg(long, value_enum)]
    method: Option<MethodName>,
    #[command(flatten)]
    params: ParamArgs,
}

#[derive(Args)]
struct ParamArgs {
    /// Flat delta, or the relative delta broadcast to every layer.
    #[arg(long)]
    delta: Option<f64>,
    /// Comma-separated per-layer relative deltas.
    #[arg(long, value_delimiter = ',', conflicts_with = "delta")]
    deltas: Option<Vec<f64>>,
    #[arg(long)]
    delta_conv: Option<f64>,
    #[arg(long)]
    delta_fc: Option<f64>,
    /// triangular: literal (alias paper) | interpolated; relative: percentile | span
    #[arg(long)]
    mode: Option<String>,
}

fn parse_bins(s: &str) -> std::result::Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("bins must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(_) => Err(format!("'{s}' is not a positive integer")),
    }
}

fn triangular_mode(mode: Option<&str>) -> Result<TriangularMode> {
    match mode {
        None | Some("literal") | Some("paper") => Ok(TriangularMode::Literal),
        Some("interpolated") => Ok(TriangularMode::Interpolated),
        Some(other) => bail!("unknown triangular mode '{other}' (literal, paper, interpolated)"),
    }
}

fn relative_mode(mode: Option<&str>) -> Result<RelativeMode> {
    match mode {
        None | Some("percentile") => Ok(RelativeMode::Percentile),
        Some("span") => Ok(RelativeMode::Span),
        Some(other) => bail!("unknown relative mode '{other}' (percentile, span)"),
    }
}

impl ParamArgs {
    fn to_params(&self, method: MethodName) -> Result<MethodParams> {
        let mode = self.mode.as_deref();
        Ok(match method {
            MethodName::Flat => MethodParams::Flat {
                delta: self.delta.context("--method flat needs --delta")?,
            },
            MethodName::Triangular => MethodParams::Triangular {
                delta_conv: self
                    .delta_conv
                    .or(self.delta)
                    .context("--method triangular needs --delta-conv (or --delta)")?,
                delta_fc: self
                    .delta_fc
                    .or(self.delta)
                    .context("--method triangular needs --delta-fc (or --delta)")?,
                mode: triangular_mode(mode)?,
            },
            MethodName::Relative => {
                let deltas = match (&self.deltas, self.delta) {
                    (Some(v), _) => RelativeDeltas::PerLayer(v.clone()),
                    (None, Some(d)) => RelativeDeltas::Uniform(d),
                    (None, None) => bail!("--method relative needs --delta or --deltas"),
                };
                MethodParams::Relative {
                    deltas,
                    mode: relative_mode(mode)?,
                }
            }
        })
    }
}

fn load_model(path: &Path) -> Result<Model> {
    read_model(path).with_context(|| format!("reading model {}", path.display()))
}

/// Stages `contents` in a temp file beside `path`; nothing appears at `path`
/// until [`persist_all`] runs.
fn stage(path: &Path, contents: &[u8]) -> Result<(tempfile::NamedTempFile, PathBuf)> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir)
        .with_context(|| format!("creating temp file in {}", dir.display()))?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    Ok((tmp, path.to_path_buf()))
}

fn persist_all(staged: Vec<(tempfile::NamedTempFile, PathBuf)>) -> Result<()> {
    for (tmp, path) in staged {
        tmp.persist(&path)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn emit(out: Option<&Path>, contents: &[u8]) -> Result<()> {
    match out {
        Some(path) => persist_all(vec![stage(path, contents)?]),
        None => {
            io::stdout().write_all(contents)?;
            Ok(())
        }
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(value)?;
    s.push(b'\n');
    Ok(s)
}

#[derive(Serialize)]
struct LayerProfile {
    #[serde(flatten)]
    stats: LayerStats,
    histogram: Histogram,
}

fn cmd_stats(model: &Path, bins: usize, output: &OutputArgs) -> Result<()> {
    let model = load_model(model)?;
    let profiles = model
        .layers
        .iter()
        .map(|l| {
            Ok(LayerProfile {
                stats: layer_stats(l)?,
                histogram: weight_histogram(l, bins)?,
            })
        })
        .collect::<sparsekit::Result<Vec<_>>>()?;
    let bytes = match output.format {
        Format::Json => to_json(&profiles)?,
        Format::Csv => {
            let mut s =
                String::from("layer,count,min,max,span,zero_count,hist_lo,hist_hi,hist_counts\n");
            for p in &profiles {
                let counts: Vec<String> = p.histogram.counts.iter().map(u64::to_string).collect();
                s.push_str(&format!(
                    "{},{},{},{},{},{},{},{},{}\n",
                    p.stats.name,
                    p.stats.count,
                    p.stats.min,
                    p.stats.max,
                    p.stats.span,
                    p.stats.zero_count,
                    p.histogram.lo,
                    p.histogram.hi,
                    counts.join(";")
                ));
            }
            s.into_bytes()
        }
    };
    emit(output.out.as_deref(), &bytes)
}

fn report_bytes(report: &sparsekit::SparsityReport, format: Format) -> Result<Vec<u8>> {
    Ok(match format {
        Format::Json => to_json(report)?,
        Format::Csv => {
            let mut buf = Vec::new();
            report.write_csv(&mut buf)?;
            buf
        }
    })
}

fn plan_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".plan.json");
    PathBuf::from(name)
}

fn cmd_sparsify(model: &Path, method: &MethodArgs, out: &Path, format: Format) -> Result<()> {
    let model = load_model(model)?;
    let params = method.params.to_params(method.method)?;
    let plan = params.plan(&model)?;
    let sparse = apply_plan(&model, &plan)?;
    let report = sparsity_report(&sparse)?;

    let staged = vec![
        stage(out, &sparse.to_bytes()?)?,
        stage(&plan_path(out), plan.to_json()?.as_bytes())?,
    ];
    persist_all(staged)?;
    io::stdout().write_all(&report_bytes(&report, format)?)?;
    Ok(())
}

fn cmd_report(model: &Path, output: &OutputArgs) -> Result<()> {
    let report = sparsity_report(&load_model(model)?)?;
    emit(
        output.out.as_deref(),
        &report_bytes(&report, output.format)?,
    )
}

#[derive(Serialize)]
struct EvalSummary {
    accuracy: f64,
    baseline_accuracy: f64,
    normalized_accuracy: f64,
    model_sparsity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    plan: Option<SparsifyPlan>,
}

fn cmd_eval(
    inputs: &EvalInputs,
    baseline: Option<&Path>,
    method: &OptionalMethodArgs,
) -> Result<()> {
    let (model, manifest, data) = inputs.load()?;
    let reference = match baseline {
        Some(p) => Some(load_model(p)?),
        None => None,
    };
    let baseline_accuracy =
        sparsekit::evaluate(reference.as_ref().unwrap_or(&model), &manifest, &data)?;

    let (evaluated, plan) = match method.method {
        Some(name) => {
            let plan = method.params.to_params(name)?.plan(&model)?;
            let mut sparse = model;
            sparsekit::apply_plan_in_place(&mut sparse, &plan)?;
            (sparse, Some(plan))
        }
        None => (model, None),
    };
    let accuracy = sparsekit::evaluate(&evaluated, &manifest, &data)?;
    let summary = EvalSummary {
        accuracy,
        baseline_accuracy,
        normalized_accuracy: sparsekit::normalized_accuracy(accuracy, baseline_accuracy)?,
        model_sparsity: sparsity_report(&evaluated)?.model_sparsity,
        plan,
    };
    io::stdout().write_all(&to_json(&summary)?)?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_sweep(
    inputs: &EvalInputs,
    method: MethodName,
    grid: &str,
    mode: Option<&str>,
    delta_conv: Option<f64>,
    delta_fc: Option<f64>,
    gate: f64,
    out: Option<&Path>,
) -> Result<()> {
    let grid = parse_grid(grid)?;
    let sweep_method = match method {
        MethodName::Flat => SweepMethod::Flat,
        MethodName::Triangular => SweepMethod::Triangular {
            delta_conv,
            delta_fc,
            mode: triangular_mode(mode)?,
        },
        MethodName::Relative => SweepMethod::Relative {
            mode: relative_mode(mode)?,
        },
    };
    let (model, manifest, data) = inputs.load()?;
    let curve = sweep(&model, &manifest, &data, &sweep_method, &grid, gate)?;
    let mut buf = Vec::new();
    curve.write_csv(&mut buf)?;
    emit(out, &buf)?;
    match curve.best_point() {
        Some(p) => eprintln!(
            "best under gate {gate}: delta={} s_m={:.4} normalized_accuracy={:.4}",
            p.delta, p.model_sparsity, p.normalized_accuracy
        ),
        None => eprintln!("no grid point meets gate {gate}"),
    }
    Ok(())
}

fn cmd_finetune(
    inputs: &EvalInputs,
    config: &FinetuneConfig,
    out: Option<&Path>,
    save_model: Option<&Path>,
) -> Result<()> {
    let (model, manifest, data) = inputs.load()?;
    let result = finetune_layers(&model, &manifest, &data, config)?;
    let mut table = Vec::new();
    result.write_csv(&mut table)?;

    let mut staged = Vec::new();
    if let Some(path) = save_model {
        let sparse = apply_plan(&model, &result.plan)?;
        staged.push(stage(path, &sparse.to_bytes()?)?);
        staged.push(stage(&plan_path(path), result.plan.to_json()?.as_bytes())?);
    }
    match out {
        Some(path) => staged.push(stage(path, &table)?),
        None => io::stdout().write_all(&table)?,
    }
    persist_all(staged)?;
    eprintln!(
        "base s_m={:.4} -> fine-tuned s_m={:.4}, normalized_accuracy={:.4}",
        result.baseline_sparsity, result.model_sparsity, result.normalized_accuracy
    );
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("SPARSEKIT_THREADS") {
        let n: usize = v.trim().parse().with_context(|| {
            format!("SPARSEKIT_THREADS must be a non-negative integer, got '{v}'")
        })?;
        if n > 0 {
            rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global()?;
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    configure_threads()?;
    match &cli.command {
        Command::Stats {
            model,
            bins,
            output,
        } => cmd_stats(model, *bins, output),
        Command::Sparsify {
            model,
            method,
            out,
            format,
        } => cmd_sparsify(model, method, out, *format),
        Command::Report { model, output } => cmd_report(model, output),
        Command::Eval {
            inputs,
            baseline,
            method,
        } => cmd_eval(inputs, baseline.as_deref(), method),
        Command::Sweep {
            inputs,
            method,
            grid,
            mode,
            delta_conv,
            delta_fc,
            gate,
            out,
        } => cmd_sweep(
            inputs,
            *method,
            grid,
            mode.as_deref(),
            *delta_conv,
            *delta_fc,
            *gate,
            out.as_deref(),
        ),
        Command::Finetune {
            inputs,
            base,
            step,
            cap,
            gate,
            out,
            save_model,
        } => cmd_finetune(
            inputs,
            &FinetuneConfig {
                base_delta: *base,
                step: *step,
                gate: *gate,
                cap: *cap,
            },
            out.as_deref(),
            save_model.as_deref(),
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
