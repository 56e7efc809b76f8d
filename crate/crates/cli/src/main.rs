use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cptt::bench::{
    gen_random_function, read_results_csv, run_experiment, summarize, write_results_csv, write_summary_csv,
    ExperimentConfig, FunctionMeta, RandomFunctionSpec,
};
use cptt::greedy::{greedy_decompose, GreedyConfig, Method};
use cptt::io::{read_cp, write_cp};
use cptt::Error;

/// Greedy CP approximation of tensors and randomized benchmark campaigns.
#[derive(Parser)]
#[command(name = "cptt", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Approximate a CP tensor file by a sum of rank-1 terms.
    Decompose {
        input: PathBuf,
        /// als, asvd or cptt
        #[arg(long)]
        method: Method,
        /// Number of terms.
        #[arg(long)]
        rank: usize,
        /// Stop early once the relative residual is at or below this value.
        #[arg(long, default_value_t = 0.0)]
        tol: f64,
        /// Terms added per iteration (cptt only).
        #[arg(long)]
        rank_k: Option<usize>,
        /// Seed for the random starts of als/asvd.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Fixed-point tolerance of als/asvd.
        #[arg(long, default_value_t = 1e-4)]
        solver_tol: f64,
        /// Iteration cap of als/asvd.
        #[arg(long, default_value_t = 100)]
        max_iters: usize,
        /// Use the relaxed ALS variant.
        #[arg(long)]
        relaxed: bool,
        /// Where to write the approximation.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Where to write the per-iteration trace CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Generate a random trigonometric test function in CP form.
    Gen {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        beta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 25)]
        n_points: usize,
        #[arg(long, default_value_t = 200)]
        term_budget: usize,
        #[arg(long, default_value_t = 6)]
        lmax: usize,
        #[arg(long)]
        out: PathBuf,
        /// Metadata sidecar CSV.
        #[arg(long)]
        meta: Option<PathBuf>,
    },
    /// Run a campaign described by a `key = value` config file.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Results CSV.
        #[arg(long)]
        out: PathBuf,
        /// Summary CSV at the configured report ranks.
        #[arg(long)]
        summary: Option<PathBuf>,
        /// Metadata of every generated function.
        #[arg(long)]
        meta: Option<PathBuf>,
        /// Worker threads (overrides the config file).
        #[arg(long, env = "CPTT_WORKERS")]
        workers: Option<usize>,
    },
    /// Mean and standard deviation per dimension, method and rank.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
        /// Comma-separated ranks.
        #[arg(long, value_delimiter = ',', required = true)]
        ranks: Vec<usize>,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 2,
            message: message.into(),
        }
    }

    /// Input problems map to 2, except non-finite values which are numerical.
    fn input(e: Error) -> Self {
        let code = match e {
            Error::NonFinite(_) => 1,
            _ => 2,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }

    fn numerical(e: Error) -> Self {
        Failure {
            code: 1,
            message: e.to_string(),
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Failure {
            code: 2,
            message: format!("{}: {e}", path.display()),
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).map_err(|e| Failure::io(path, e))
}

fn write_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> cptt::Result<()>) -> Result<(), Failure> {
    let mut w = create(path)?;
    f(&mut w).map_err(|e| Failure::io(path, e))?;
    w.flush().map_err(|e| Failure::io(path, e))
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Decompose {
            input,
            method,
            rank,
            tol,
            rank_k,
            seed,
            solver_tol,
            max_iters,
            relaxed,
            out,
            trace,
        } => {
            if rank_k.is_some() && method != Method::Cptt {
                return Err(Failure::usage(format!("--rank-k requires --method cptt (got {method})")));
            }
            if relaxed && method != Method::Als {
                return Err(Failure::usage(format!("--relaxed requires --method als (got {method})")));
            }
            let mut cfg = GreedyConfig::new(method, rank);
            cfg.rel_tol = tol;
            cfg.rank_k_update = rank_k.unwrap_or(1);
            cfg.solver.tol = solver_tol;
            cfg.solver.max_iters = max_iters;
            cfg.solver.relaxed = relaxed;
            cfg.solver.rng_seed = seed;
            cfg.validate().map_err(Failure::input)?;

            let f = read_cp(&input).map_err(|e| match e {
                Error::Io(io) => Failure::io(&input, io),
                other => Failure::input(other),
            })?;
            let (approx, tr) = greedy_decompose(&f, &cfg).map_err(Failure::numerical)?;
            if let Some(path) = out {
                write_cp(&approx, &path).map_err(|e| Failure::io(&path, e))?;
            }
            if let Some(path) = trace {
                write_with(&path, |w| tr.write_csv(w))?;
            }
            if let Some(note) = &tr.note {
                eprintln!("note: {note}");
            }
            println!("{:.5e}", tr.final_rel_residual());
            Ok(())
        }
        Command::Gen {
            dim,
            beta,
            seed,
            n_points,
            term_budget,
            lmax,
            out,
            meta,
        } => {
            let spec = RandomFunctionSpec {
                d: dim,
                beta,
                n_points,
                lmax,
                seed,
                term_budget,
            };
            let (f, m) = gen_random_function(&spec).map_err(Failure::input)?;
            write_cp(&f, &out).map_err(|e| Failure::io(&out, e))?;
            if let Some(path) = meta {
                write_with(&path, |w| FunctionMeta::write_csv(&[m], w))?;
            }
            Ok(())
        }
        Command::Bench {
            config,
            out,
            summary,
            meta,
            workers,
        } => {
            let text = std::fs::read_to_string(&config).map_err(|e| Failure::io(&config, e))?;
            let mut cfg = ExperimentConfig::from_kv_str(&text).map_err(Failure::input)?;
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let rows = run_experiment(&cfg).map_err(Failure::numerical)?;
            write_with(&out, |w| write_results_csv(&rows, w))?;
            if let Some(path) = summary {
                let s = summarize(&rows, &cfg.report_ranks);
                write_with(&path, |w| write_summary_csv(&s, w))?;
            }
            if let Some(path) = meta {
                let mut metas = Vec::new();
                for &d in &cfg.dims {
                    for i in 0..cfg.n_functions {
                        let (_, m) = gen_random_function(&cfg.function_spec(d, i)).map_err(Failure::numerical)?;
                        metas.push(m);
                    }
                }
                write_with(&path, |w| FunctionMeta::write_csv(&metas, w))?;
            }
            let failed = rows.iter().filter(|r| r.error_flag).count();
            if failed > 0 {
                eprintln!("warning: {failed} run(s) failed and are flagged in the results");
            }
            Ok(())
        }
        Command::Summarize { input, ranks, out } => {
            let file = File::open(&input).map_err(|e| Failure::io(&input, e))?;
            let rows = read_results_csv(file).map_err(|e| Failure::usage(format!("{}: {e}", input.display())))?;
            if ranks.contains(&0) {
                return Err(Failure::usage("--ranks must be positive"));
            }
            let s = summarize(&rows, &ranks);
            match out {
                Some(path) => write_with(&path, |w| write_summary_csv(&s, w)),
                None => {
                    let stdout = io::stdout();
                    write_summary_csv(&s, stdout.lock()).map_err(|e| Failure::usage(e.to_string()))
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
