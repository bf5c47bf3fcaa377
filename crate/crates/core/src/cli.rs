//! Command-line driver. Flags override values from `--config`, which override defaults.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{CkscError, Result};
use crate::io;
use crate::kernelcore::{self, SpectrumReport};
use crate::metrics::{self, CvConfig, Dataset, SweepGrid};
use crate::nqp::{self, NqpConfig, QuadProgram};
use crate::recall::Recall;
use crate::synthetic::{self, SyntheticSpec};
use crate::train::{self, Hyperparams};

#[derive(Debug, Parser)]
#[command(name = "cksc", version, about = "Confident kernel sparse coding experiments")]
pub struct Cli {
    #[command(flatten)]
    pub shared: SharedArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct SharedArgs {
    /// TOML file of parameter values
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 1 runs everything sequentially, 0 uses all cores
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Weight of the discriminative terms (also known as lambda)
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    /// Non-zeros allowed per code and per atom (T)
    #[arg(long, global = true)]
    pub sparsity: Option<usize>,
    /// Dictionary size override (default: classes x sparsity)
    #[arg(long, global = true)]
    pub atoms: Option<usize>,
    #[arg(long, global = true)]
    pub folds: Option<usize>,
    #[arg(long, global = true)]
    pub repeats: Option<usize>,
    /// Zero out negative kernel eigenvalues
    #[arg(long, global = true)]
    pub clip_psd: bool,
    /// Sakoe-Chiba band half-width for DTW
    #[arg(long, global = true)]
    pub band: Option<usize>,
    #[arg(long, global = true)]
    pub max_outer: Option<usize>,
    #[arg(long, global = true)]
    pub rel_tol: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a class-templated synthetic dataset
    Synthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, default_value_t = 20)]
        samples_per_class: usize,
        #[arg(long, default_value_t = 2)]
        channels: usize,
        #[arg(long, default_value_t = 30)]
        length: usize,
        #[arg(long, default_value_t = 1.0)]
        separation: f64,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
    },
    /// Build a DTW Gaussian kernel from a manifest, or ingest a precomputed one
    Kernel {
        #[arg(long, conflicts_with_all = ["kernel", "labels"])]
        manifest: Option<PathBuf>,
        #[arg(long, requires = "labels")]
        kernel: Option<PathBuf>,
        #[arg(long, requires = "kernel")]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Learn a dictionary
    Train {
        #[arg(long)]
        kernel: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// kernel.json written by `kernel`; supplies the bandwidth for series-based prediction
        #[arg(long)]
        meta: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Encode and classify test points
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// Training kernel the model was fitted on
        #[arg(long)]
        kernel: PathBuf,
        /// Rows of K(z, Y), one per test point
        #[arg(long, conflicts_with_all = ["train_manifest", "test_manifest"])]
        cross_kernel: Option<PathBuf>,
        #[arg(long, requires = "test_manifest")]
        train_manifest: Option<PathBuf>,
        #[arg(long, requires = "train_manifest")]
        test_manifest: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stratified cross-validation
    Eval {
        #[arg(long)]
        kernel: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// One-parameter sensitivity sweep
    Sweep {
        #[arg(long)]
        kernel: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// Comma-separated grid values
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Solve a single quadratic program given as JSON {q, b, t}
    NqpSolve {
        #[arg(long)]
        problem: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Alpha,
    Sparsity,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    seed: Option<u64>,
    threads: Option<usize>,
    alpha: Option<f64>,
    sparsity: Option<usize>,
    atoms: Option<usize>,
    folds: Option<usize>,
    repeats: Option<usize>,
    clip_psd: Option<bool>,
    band: Option<usize>,
    max_outer: Option<usize>,
    rel_tol: Option<f64>,
    nqp_tol: Option<f64>,
    nqp_max_inner: Option<usize>,
}

/// Fully resolved parameters of one invocation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub threads: usize,
    pub alpha: f64,
    pub sparsity: usize,
    pub atoms: Option<usize>,
    pub folds: usize,
    pub repeats: usize,
    pub clip_psd: bool,
    pub band: Option<usize>,
    pub max_outer: usize,
    pub rel_tol: f64,
    pub nqp_tol: f64,
    pub nqp_max_inner: usize,
}

impl RunConfig {
    pub fn resolve(shared: &SharedArgs) -> Result<Self> {
        let file = match &shared.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                toml::from_str::<ConfigFile>(&text)
                    .map_err(|e| CkscError::Parse { file: path.display().to_string(), message: e.to_string() })?
            }
            None => ConfigFile::default(),
        };
        let d = Hyperparams::default();
        let cfg = RunConfig {
            seed: shared.seed.or(file.seed).unwrap_or(0),
            threads: shared.threads.or(file.threads).unwrap_or(0),
            alpha: shared.alpha.or(file.alpha).unwrap_or(d.alpha),
            sparsity: shared.sparsity.or(file.sparsity).unwrap_or(d.sparsity),
            atoms: shared.atoms.or(file.atoms),
            folds: shared.folds.or(file.folds).unwrap_or(5),
            repeats: shared.repeats.or(file.repeats).unwrap_or(1),
            clip_psd: shared.clip_psd || file.clip_psd.unwrap_or(false),
            band: shared.band.or(file.band),
            max_outer: shared.max_outer.or(file.max_outer).unwrap_or(d.max_outer),
            rel_tol: shared.rel_tol.or(file.rel_tol).unwrap_or(d.rel_tol),
            nqp_tol: file.nqp_tol.unwrap_or(d.nqp.tol),
            nqp_max_inner: file.nqp_max_inner.unwrap_or(d.nqp.max_inner),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.folds < 2 {
            return Err(CkscError::schema("folds", "must be at least 2"));
        }
        if self.repeats == 0 {
            return Err(CkscError::schema("repeats", "must be at least 1"));
        }
        if self.band == Some(0) {
            return Err(CkscError::schema("band", "must be at least 1"));
        }
        self.hyperparams().validate()
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            alpha: self.alpha,
            sparsity: self.sparsity,
            atoms: self.atoms,
            max_outer: self.max_outer,
            rel_tol: self.rel_tol,
            seed: self.seed,
            nqp: NqpConfig { tol: self.nqp_tol, max_inner: self.nqp_max_inner },
        }
    }

    pub fn cv(&self) -> CvConfig {
        CvConfig { folds: self.folds, repeats: self.repeats, seed: self.seed }
    }
}

/// Process exit code for an error: 2 validation/parse, 3 numeric, 4 integrity.
pub fn exit_code(e: &CkscError) -> i32 {
    match e {
        CkscError::Numeric { .. } => 3,
        CkscError::Integrity(_) => 4,
        _ => 2,
    }
}

/// Metadata written next to a kernel built by the `kernel` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMeta {
    pub n: usize,
    pub bandwidth: Option<f64>,
    pub band: Option<usize>,
    pub clip_psd: bool,
    pub kernel_hash: String,
    #[serde(default)]
    pub config: serde_json::Value,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct NqpProblem {
    q: Vec<Vec<f64>>,
    b: Vec<f64>,
    t: usize,
    #[serde(default)]
    tol: Option<f64>,
    #[serde(default)]
    max_inner: Option<usize>,
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn provenance(command: &str, inputs: serde_json::Value, cfg: &RunConfig) -> serde_json::Value {
    json!({ "command": command, "inputs": inputs, "params": cfg })
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = RunConfig::resolve(&cli.shared)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CkscError::Domain(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(&cli.command, &cfg))
}

fn dispatch(command: &Command, cfg: &RunConfig) -> Result<()> {
    match command {
        Command::Synthetic { out, classes, samples_per_class, channels, length, separation, noise } => {
            let spec = SyntheticSpec {
                classes: *classes,
                samples_per_class: *samples_per_class,
                channels: *channels,
                length: *length,
                separation: *separation,
                noise: *noise,
                seed: cfg.seed,
            };
            let data = synthetic::generate(&spec)?;
            let manifest = io::write_dataset(out, &data)?;
            io::write_json(&out.join("spec.json"), &spec)?;
            println!("wrote {} samples to {}", data.len(), manifest.display());
            Ok(())
        }
        Command::Kernel { manifest, kernel, labels, out } => cmd_kernel(cfg, manifest.as_deref(), kernel.as_deref(), labels.as_deref(), out),
        Command::Train { kernel, labels, meta, out, trace } => cmd_train(cfg, kernel, labels, meta.as_deref(), out, trace.as_deref()),
        Command::Predict { model, kernel, cross_kernel, train_manifest, test_manifest, out } => cmd_predict(
            model,
            kernel,
            cross_kernel.as_deref(),
            train_manifest.as_deref().zip(test_manifest.as_deref()),
            out,
        ),
        Command::Eval { kernel, labels, out } => {
            let data = Dataset::new(io::read_kernel(kernel)?, io::read_labels(labels)?)?;
            let report = metrics::crossvalidate(&data, &cfg.hyperparams(), &cfg.cv())?;
            println!(
                "accuracy {:.2} +/- {:.2} over {} evaluations, mean IP {}",
                report.mean_accuracy,
                report.std_accuracy,
                report.fold_reports.len(),
                report.mean_ip.map_or("undefined".to_string(), |v| format!("{v:.4}"))
            );
            let inputs = json!({ "kernel": path_str(kernel), "labels": path_str(labels) });
            io::write_json(out, &json!({ "config": provenance("eval", inputs, cfg), "report": report }))
        }
        Command::Sweep { kernel, labels, param, values, out, json: json_out } => {
            let data = Dataset::new(io::read_kernel(kernel)?, io::read_labels(labels)?)?;
            let grid = match param {
                SweepParam::Alpha => SweepGrid::Alpha(values.clone()),
                SweepParam::Sparsity => SweepGrid::Sparsity(
                    values
                        .iter()
                        .map(|&v| {
                            if v >= 1.0 && v.fract() == 0.0 {
                                Ok(v as usize)
                            } else {
                                Err(CkscError::schema("values", format!("sparsity grid value {v} is not a positive integer")))
                            }
                        })
                        .collect::<Result<_>>()?,
                ),
            };
            let rows = metrics::sensitivity_sweep(&data, &cfg.hyperparams(), &grid, &cfg.cv())?;
            io::write_sweep_csv(out, &rows)?;
            if let Some(path) = json_out {
                let inputs = json!({ "kernel": path_str(kernel), "labels": path_str(labels), "param": param, "values": values });
                io::write_json(path, &json!({ "config": provenance("sweep", inputs, cfg), "rows": rows }))?;
            }
            for r in &rows {
                println!("{}={} accuracy {:.2} +/- {:.2}", r.param_name, r.param_value, r.mean_accuracy, r.std_accuracy);
            }
            Ok(())
        }
        Command::NqpSolve { problem, out } => cmd_nqp(problem, out.as_deref()),
    }
}

fn cmd_kernel(cfg: &RunConfig, manifest: Option<&Path>, kernel: Option<&Path>, labels: Option<&Path>, out: &Path) -> Result<()> {
    let (k, label_matrix, bandwidth, inputs) = match (manifest, kernel, labels) {
        (Some(manifest), _, _) => {
            let (series, names) = io::load_dataset(manifest)?;
            let dist = kernelcore::distance_matrix(&series, cfg.band)?;
            let delta = kernelcore::bandwidth(&dist)?;
            info!("bandwidth {delta}");
            let k = kernelcore::gaussian_kernel(&dist, delta)?;
            (k, crate::labels::LabelMatrix::from_names(&names)?, Some(delta), json!({ "manifest": path_str(manifest) }))
        }
        (None, Some(kernel), Some(labels)) => {
            let k = io::read_kernel(kernel)?;
            let l = io::read_labels(labels)?;
            if l.n_samples() != k.n() {
                return Err(CkscError::Dimension(format!("{} labels for a kernel of size {}", l.n_samples(), k.n())));
            }
            (k, l, None, json!({ "kernel": path_str(kernel), "labels": path_str(labels) }))
        }
        _ => return Err(CkscError::schema("manifest", "either --manifest or --kernel with --labels is required")),
    };
    let k = if cfg.clip_psd { k.clip_psd()? } else { k };
    std::fs::create_dir_all(out)?;
    io::write_kernel(&out.join("kernel.csv"), &k)?;
    io::write_labels(&out.join("labels.csv"), &label_matrix)?;
    let spectrum = SpectrumReport::from_kernel(&k)?;
    io::write_json(&out.join("spectrum.json"), &spectrum)?;
    let meta = KernelMeta {
        n: k.n(),
        bandwidth,
        band: cfg.band,
        clip_psd: cfg.clip_psd,
        kernel_hash: k.content_hash(),
        config: provenance("kernel", inputs, cfg),
    };
    io::write_json(&out.join("kernel.json"), &meta)?;
    println!(
        "kernel N = {}: lambda_min {:.6e}, lambda_max {:.6e}, {} negative eigenvalues",
        k.n(),
        spectrum.lambda_min,
        spectrum.lambda_max,
        spectrum.negative_count
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, kernel: &Path, labels: &Path, meta: Option<&Path>, out: &Path, trace: Option<&Path>) -> Result<()> {
    let k = io::read_kernel(kernel)?;
    let l = io::read_labels(labels)?;
    let meta: Option<KernelMeta> = match meta {
        Some(p) => {
            let m: KernelMeta = serde_json::from_str(&std::fs::read_to_string(p)?)
                .map_err(|e| CkscError::Parse { file: path_str(p), message: e.to_string() })?;
            if m.kernel_hash != k.content_hash() {
                return Err(CkscError::Integrity(format!("{} describes a different kernel", p.display())));
            }
            Some(m)
        }
        None => None,
    };
    let mut model = train::train(&k, &l, &cfg.hyperparams())?;
    model.bandwidth = meta.as_ref().and_then(|m| m.bandwidth);
    let mut inputs = json!({ "kernel": path_str(kernel), "labels": path_str(labels) });
    if let Some(m) = &meta {
        inputs["meta_kernel_hash"] = json!(m.kernel_hash);
    }
    let doc = io::ModelDocument::from_model(&model, meta.and_then(|m| m.band), provenance("train", inputs, cfg));
    io::write_json(out, &doc)?;
    if let Some(path) = trace {
        io::write_trace(path, &model.trace)?;
    }
    println!(
        "trained {} atoms in {} iterations (converged: {}), final objective {:.6e}",
        model.n_atoms(),
        model.iterations,
        model.converged,
        model.objective_trace.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_predict(model: &Path, kernel: &Path, cross: Option<&Path>, manifests: Option<(&Path, &Path)>, out: &Path) -> Result<()> {
    let doc = io::read_model_document(model)?;
    let band = doc.band;
    let model = doc.into_model(io::read_kernel(kernel)?)?;
    let rows = match (cross, manifests) {
        (Some(path), _) => io::read_cross_kernel(path)?,
        (None, Some((train_manifest, test_manifest))) => {
            let delta = model
                .bandwidth
                .ok_or_else(|| CkscError::schema("bandwidth", "model has no bandwidth; train with --meta to predict from series"))?;
            let (train_series, _) = io::load_dataset(train_manifest)?;
            let (test_series, _) = io::load_dataset(test_manifest)?;
            let dist = kernelcore::cross_distances(&test_series, &train_series, band)?;
            kernelcore::gaussian_cross_kernel(&dist, delta)?
        }
        (None, None) => return Err(CkscError::schema("cross_kernel", "either --cross-kernel or both manifests are required")),
    };
    let records = Recall::new(&model)?.records(&rows)?;
    io::write_predictions(out, &records)?;
    let unclassifiable = records.iter().filter(|r| r.class_id.is_none()).count();
    println!("predicted {} points ({unclassifiable} unclassifiable)", records.len());
    Ok(())
}

fn cmd_nqp(problem: &Path, out: Option<&Path>) -> Result<()> {
    let text = std::fs::read_to_string(problem)?;
    let p: NqpProblem =
        serde_json::from_str(&text).map_err(|e| CkscError::Parse { file: path_str(problem), message: e.to_string() })?;
    let m = p.b.len();
    if p.q.len() != m || p.q.iter().any(|r| r.len() != m) {
        return Err(CkscError::Dimension(format!("q must be {m}x{m}")));
    }
    let prog = QuadProgram::new(DMatrix::from_fn(m, m, |i, j| p.q[i][j]), DVector::from_vec(p.b), p.t)?;
    let defaults = NqpConfig::default();
    let cfg = NqpConfig { tol: p.tol.unwrap_or(defaults.tol), max_inner: p.max_inner.unwrap_or(defaults.max_inner) };
    let s = nqp::solve(&prog, &cfg)?;
    let report = json!({
        "x": s.x.as_slice(),
        "support": s.support,
        "objective": s.objective,
        "steps": s.steps,
        "skipped": s.skipped,
    });
    match out {
        Some(path) => io::write_json(path, &report),
        None => {
            println!("{}", serde_json::to_string_pretty(&report).expect("json"));
            Ok(())
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
