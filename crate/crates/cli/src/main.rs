use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use injx_core::emit::{render, AnyReport, Format};
use injx_core::report::{
    run_family, run_layerwise, run_quantization, run_seqlen, run_trajectory, Config, DEFAULT_BITS,
};
use injx_core::store::load_manifest;
use injx_core::synth::{synth_generate, SynthMode, SynthSpec};
use injx_core::{Error, Result};

const EXIT_VALIDATION: u8 = 1;
const EXIT_COMPUTATION: u8 = 2;

#[derive(Parser)]
#[command(name = "injx", version, about = "Layerwise injectivity diagnostics for hidden-state point clouds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer margins, co-Lipschitz ratios and collisions for one run.
    Layerwise {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        opts: Opts,
    },
    /// Layerwise diagnostics plus quantization safety at each bitwidth.
    Quantize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BITS)]
        bits: Vec<u32>,
        #[command(flatten)]
        opts: Opts,
    },
    /// Last-layer metrics across prompt lengths.
    Seqlen {
        /// K=PATH, repeated.
        #[arg(long = "manifest", required = true, num_args = 1..)]
        manifests: Vec<String>,
        #[command(flatten)]
        opts: Opts,
    },
    /// Last-layer metrics across training checkpoints over one prompt set.
    Trajectory {
        /// LABEL=PATH, repeated.
        #[arg(long = "checkpoint", required = true, num_args = 1..)]
        checkpoints: Vec<String>,
        #[command(flatten)]
        opts: Opts,
    },
    /// All-layer metrics for each model of a family, ordered by meta `params`.
    Family {
        #[arg(long = "manifest", required = true, num_args = 1..)]
        manifests: Vec<PathBuf>,
        #[command(flatten)]
        opts: Opts,
    },
    /// Write a synthetic run with known ground truth.
    Synth {
        #[arg(long)]
        mode: String,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        layers: usize,
        #[arg(long)]
        k: usize,
        #[arg(long)]
        vocab: u32,
        #[arg(long, default_value_t = 0)]
        dups: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Opts {
    /// Quantile percent for margin and co-Lipschitz estimates.
    #[arg(long, default_value_t = 1.0)]
    q: f64,
    /// Minimum token Hamming distance for sampled pairs.
    #[arg(long, default_value_t = 1)]
    dmin: u32,
    #[arg(long, default_value_t = 50_000)]
    pairs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Near-collision tolerances, comma-separated.
    #[arg(long, value_delimiter = ',', default_values_t = [1e-6, 1e-4, 1e-2])]
    eps: Vec<f64>,
    /// Bootstrap resamples; 0 disables intervals.
    #[arg(long, default_value_t = 200)]
    bootstrap: usize,
    /// Resample prompts and recompute nearest neighbors per resample.
    #[arg(long)]
    exact_bootstrap: bool,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// json or csv.
    #[arg(long, default_value = "json")]
    format: String,
}

impl Opts {
    fn config(&self) -> Config {
        Config {
            q: self.q,
            d_min: self.dmin,
            pairs: self.pairs,
            seed: self.seed,
            epsilons: self.eps.clone(),
            bootstrap: self.bootstrap,
            exact_bootstrap: self.exact_bootstrap,
            ..Config::default()
        }
    }

    fn emit(&self, report: AnyReport<'_>) -> Result<()> {
        let text = render(report, self.format.parse()?);
        match &self.out {
            Some(path) => std::fs::write(path, text).map_err(|e| Error::Io {
                path: path.clone(),
                source: e,
            }),
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(text.as_bytes())
                    .and_then(|_| out.flush())
                    .map_err(|e| Error::Io {
                        path: "<stdout>".into(),
                        source: e,
                    })
            }
        }
    }
}

fn split_pair(arg: &str, what: &str) -> Result<(String, PathBuf)> {
    match arg.split_once('=') {
        Some((key, path)) if !key.is_empty() && !path.is_empty() => {
            Ok((key.to_string(), PathBuf::from(path)))
        }
        _ => Err(Error::InvalidArgument(format!(
            "expected {what}=PATH, got {arg:?}"
        ))),
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Layerwise { manifest, opts } => {
            opts.format.parse::<Format>()?;
            let run = load_manifest(&manifest)?;
            let report = run_layerwise(&run, &opts.config())?;
            opts.emit(AnyReport::Diagnostics(&report))
        }
        Command::Quantize {
            manifest,
            bits,
            opts,
        } => {
            opts.format.parse::<Format>()?;
            let run = load_manifest(&manifest)?;
            let report = run_quantization(&run, &bits, &opts.config())?;
            opts.emit(AnyReport::Diagnostics(&report))
        }
        Command::Seqlen { manifests, opts } => {
            opts.format.parse::<Format>()?;
            let runs = manifests
                .iter()
                .map(|arg| {
                    let (k, path) = split_pair(arg, "K")?;
                    let k = k.parse::<usize>().map_err(|_| {
                        Error::InvalidArgument(format!("K must be a positive integer, got {k:?}"))
                    })?;
                    Ok((k, load_manifest(path)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let report = run_seqlen(runs, &opts.config())?;
            opts.emit(AnyReport::Sweep(&report))
        }
        Command::Trajectory { checkpoints, opts } => {
            opts.format.parse::<Format>()?;
            let runs = checkpoints
                .iter()
                .map(|arg| {
                    let (label, path) = split_pair(arg, "LABEL")?;
                    Ok((label, load_manifest(path)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let report = run_trajectory(runs, &opts.config())?;
            opts.emit(AnyReport::Sweep(&report))
        }
        Command::Family { manifests, opts } => {
            opts.format.parse::<Format>()?;
            let runs = manifests
                .iter()
                .map(load_manifest)
                .collect::<Result<Vec<_>>>()?;
            let report = run_family(runs, &opts.config())?;
            opts.emit(AnyReport::Sweep(&report))
        }
        Command::Synth {
            mode,
            n,
            d,
            layers,
            k,
            vocab,
            dups,
            seed,
            out,
        } => {
            let spec = SynthSpec {
                mode: mode.parse::<SynthMode>()?,
                n,
                d,
                layers,
                k,
                vocab,
                dups,
                seed,
            };
            let (manifest, _) = synth_generate(&spec, &out)?;
            println!("{}", manifest.display());
            Ok(())
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("INJX_THREADS") else {
        return Ok(());
    };
    let n = raw
        .trim()
        .parse::<usize>()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| {
            Error::InvalidArgument(format!("INJX_THREADS must be a positive integer, got {raw:?}"))
        })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_VALIDATION)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match init_threads().and_then(|_| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("injx: error: {e}");
            ExitCode::from(if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_COMPUTATION
            })
        }
    }
}
