//! `svfcl` — run singular-value fine-tuning experiments and inspect their
//! inputs and outputs.
//!
//! Exit codes: 0 success, 1 configuration or input parse error, 2 data error,
//! 3 SVD non-convergence, 4 internal invariant violation. Diagnostics go to
//! standard error; data goes to standard output or files.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};
use serde_json::json;
use svfcl::adapters::AdapterKind;
use svfcl::data::load_feature_file;
use svfcl::harness::{
    compare_strategies, load_config, run_experiment_with_model, sessions_csv, trajectory_csv,
    write_outputs, ExperimentConfig, ExperimentReport,
};
use svfcl::linalg::{best_rank_r, frobenius_norm, svd, Matrix};
use svfcl::model::ModelCheckpoint;
use svfcl::Error;

#[derive(Debug, Parser)]
#[command(
    name = "svfcl",
    version,
    about = "Singular-value fine-tuning for few-shot class-incremental learning"
)]
struct Cli {
    /// Output directory for files written by `run` and `compare`.
    #[arg(
        long,
        global = true,
        env = "SVFCL_OUT_DIR",
        default_value = "svfcl-out"
    )]
    out: PathBuf,
    /// More progress output on standard error (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every configured seed and write report.json, sessions.csv and
    /// trajectory.csv (plus checkpoint-seed<N>.json) to the output directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed instead of the configured list.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run several adapter kinds on identical streams and write a comparison.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated kinds.
        #[arg(long, value_delimiter = ',', default_value = "svf,lora,full,frozen")]
        kinds: Vec<AdapterKind>,
    },
    /// Factorize a matrix given in text form ("rows cols" then one row per
    /// line) and print the factorization as JSON.
    Svd {
        input: PathBuf,
        /// Also print the best rank-r approximation and its error.
        #[arg(long)]
        rank: Option<usize>,
    },
    /// Print singular values as CSV, from a matrix text file or a model
    /// checkpoint (one block per layer).
    Spectrum {
        input: PathBuf,
        /// Use the adapted weights of a checkpoint instead of its base weights.
        #[arg(long)]
        effective: bool,
        /// Write the CSV here instead of standard output.
        #[arg(long = "csv")]
        csv_out: Option<PathBuf>,
    },
    /// Check an SVFF feature file and summarize it.
    ValidateFeatures { path: PathBuf },
    /// Summarize a report.json written by `run` or `compare`.
    Report {
        input: PathBuf,
        /// Print the per-session CSV instead of the summary table.
        #[arg(long)]
        sessions: bool,
        /// Print the train/validation trajectory CSV instead of the summary.
        #[arg(long, conflicts_with = "sessions")]
        trajectory: bool,
    },
}

/// Errors tagged with the exit code they map to.
struct Failure {
    code: u8,
    error: Error,
}

fn config_failure(error: Error) -> Failure {
    Failure { code: 1, error }
}

fn data_failure(error: Error) -> Failure {
    Failure { code: 2, error }
}

/// Exit code of an error raised while running, after the inputs parsed.
fn run_failure(error: Error) -> Failure {
    let code = match &error {
        Error::Config(_) | Error::Json(_) => 1,
        Error::Convergence { .. } => 3,
        Error::Invariant(_) => 4,
        _ => 2,
    };
    Failure { code, error }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("svfcl: error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult {
    match &cli.command {
        Command::Run { config, seed } => cmd_run(cli, config, *seed),
        Command::Compare {
            config,
            seed,
            kinds,
        } => cmd_compare(cli, config, *seed, kinds),
        Command::Svd { input, rank } => cmd_svd(input, *rank),
        Command::Spectrum {
            input,
            effective,
            csv_out,
        } => cmd_spectrum(input, *effective, csv_out.as_deref()),
        Command::ValidateFeatures { path } => cmd_validate_features(path),
        Command::Report {
            input,
            sessions,
            trajectory,
        } => cmd_report(input, *sessions, *trajectory),
    }
}

fn load(config: &Path, seed: Option<u64>) -> CliResult<ExperimentConfig> {
    let mut c = load_config(config).map_err(config_failure)?;
    if let Some(s) = seed {
        c.seeds = vec![s];
    }
    Ok(c)
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    data_failure(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, contents: &str) -> CliResult {
    std::fs::write(path, contents).map_err(|e| io_failure(path, e))
}

fn cmd_run(cli: &Cli, config: &Path, seed: Option<u64>) -> CliResult {
    let config = load(config, seed)?;
    let mut reports = Vec::new();
    std::fs::create_dir_all(&cli.out).map_err(|e| io_failure(&cli.out, e))?;
    for &s in &config.seeds {
        if cli.verbose > 0 {
            eprintln!(
                "svfcl: seed {s}: running {} sessions",
                config.stream.sessions + 1
            );
        }
        let (report, model) = run_experiment_with_model(&config, s).map_err(run_failure)?;
        if cli.verbose > 0 {
            eprintln!(
                "svfcl: seed {s}: A_avg {:.2} PD {:.2} ({:.1?})",
                report.a_avg, report.pd, report.wall_time
            );
        }
        let checkpoint =
            serde_json::to_string_pretty(&model.checkpoint()).map_err(|e| run_failure(e.into()))?;
        write_file(
            &cli.out.join(format!("checkpoint-seed{s}.json")),
            &checkpoint,
        )?;
        reports.push(report);
    }
    for path in write_outputs(&cli.out, &reports).map_err(run_failure)? {
        if cli.verbose > 0 {
            eprintln!("svfcl: wrote {}", path.display());
        }
    }
    Ok(())
}

fn cmd_compare(cli: &Cli, config: &Path, seed: Option<u64>, kinds: &[AdapterKind]) -> CliResult {
    let config = load(config, seed)?;
    if cli.verbose > 0 {
        eprintln!(
            "svfcl: comparing {} kinds over {} seeds",
            kinds.len(),
            config.seeds.len()
        );
    }
    let table = compare_strategies(&config, kinds).map_err(run_failure)?;
    write_outputs(&cli.out, &table.reports).map_err(run_failure)?;
    let json = serde_json::to_string_pretty(&table.rows).map_err(|e| run_failure(e.into()))?;
    write_file(&cli.out.join("comparison.json"), &json)?;

    println!("kind,median_a_avg,median_pd,median_final_gap,trainable_params,stored_params");
    for r in &table.rows {
        println!(
            "{},{},{},{},{},{}",
            r.kind,
            r.median_a_avg,
            r.median_pd,
            r.median_final_gap
                .map(|g| g.to_string())
                .unwrap_or_default(),
            r.trainable_params,
            r.stored_params
        );
    }
    Ok(())
}

fn read_text(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| {
        config_failure(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn read_matrix(path: &Path) -> CliResult<Matrix> {
    Matrix::parse_text(&read_text(path)?).map_err(config_failure)
}

fn cmd_svd(input: &Path, rank: Option<usize>) -> CliResult {
    let w = read_matrix(input)?;
    let f = svd(&w).map_err(run_failure)?;
    let mut out = json!({
        "shape": [w.rows(), w.cols()],
        "rank": f.rank(),
        "sigma": f.sigma,
        "u": f.u,
        "v_t": f.v_t,
    });
    if let Some(r) = rank {
        let approx = best_rank_r(&w, r).map_err(config_failure)?;
        let err = frobenius_norm(&w.sub(&approx).map_err(run_failure)?);
        out["approximation"] = json!(approx);
        out["approximation_error"] = json!(err);
    }
    println!(
        "{}",
        serde_json::to_string_pretty(&out).expect("json values serialize")
    );
    Ok(())
}

fn spectrum_rows(w: &Matrix, layer: Option<usize>, out: &mut String) -> CliResult {
    let f = svd(w).map_err(run_failure)?;
    for (k, s) in f.sigma.iter().enumerate() {
        match layer {
            Some(l) => out.push_str(&format!("{l},{k},{s}\n")),
            None => out.push_str(&format!("{k},{s}\n")),
        }
    }
    Ok(())
}

fn cmd_spectrum(input: &Path, effective: bool, csv_out: Option<&Path>) -> CliResult {
    let text = read_text(input)?;
    let mut csv = String::new();
    if text.trim_start().starts_with('{') {
        let ckpt: ModelCheckpoint = serde_json::from_str(&text)
            .map_err(|e| config_failure(Error::Config(format!("{}: {e}", input.display()))))?;
        let model = ckpt.restore().map_err(config_failure)?;
        csv.push_str("layer,index,sigma\n");
        for (i, layer) in model.backbone.layers().iter().enumerate() {
            let w = if effective {
                layer.effective_weight()
            } else {
                layer.base_weight().clone()
            };
            spectrum_rows(&w, Some(i), &mut csv)?;
        }
    } else {
        if effective {
            return Err(config_failure(Error::Config(
                "--effective needs a checkpoint, not a matrix".into(),
            )));
        }
        let w = Matrix::parse_text(&text).map_err(config_failure)?;
        csv.push_str("index,sigma\n");
        spectrum_rows(&w, None, &mut csv)?;
    }
    match csv_out {
        Some(p) => write_file(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn cmd_validate_features(path: &Path) -> CliResult {
    let set = load_feature_file(path).map_err(data_failure)?;
    println!("n_samples {}", set.samples.len());
    println!("dim {}", set.dim);
    println!("n_classes {}", set.n_classes);
    // Counted sparsely: the header alone may declare billions of classes.
    let mut counts = std::collections::BTreeMap::new();
    for s in &set.samples {
        *counts.entry(s.label).or_insert(0usize) += 1;
    }
    let mut out = std::io::BufWriter::new(std::io::stdout().lock());
    for c in 0..set.n_classes {
        let n = counts.get(&c).copied().unwrap_or(0);
        writeln!(out, "class {c} {n}").map_err(|e| io_failure(Path::new("<stdout>"), e))?;
    }
    out.flush()
        .map_err(|e| io_failure(Path::new("<stdout>"), e))?;
    Ok(())
}

fn cmd_report(input: &Path, sessions: bool, trajectory: bool) -> CliResult {
    let text = read_text(input)?;
    let reports: Vec<ExperimentReport> = serde_json::from_str(&text)
        .map_err(|e| config_failure(Error::Config(format!("{}: {e}", input.display()))))?;
    if sessions {
        print!("{}", sessions_csv(&reports));
    } else if trajectory {
        print!("{}", trajectory_csv(&reports));
    } else {
        println!("kind,seed,a_avg,pd,final_gap,trainable_params,accuracies");
        for r in &reports {
            let acc: Vec<String> = r.accuracies.iter().map(|a| format!("{a:.2}")).collect();
            println!(
                "{},{},{:.4},{:.4},{},{},{}",
                r.kind,
                r.seed,
                r.a_avg,
                r.pd,
                r.final_gap.map(|g| format!("{g:.4}")).unwrap_or_default(),
                r.trainable_params,
                acc.join(" ")
            );
        }
    }
    Ok(())
}
