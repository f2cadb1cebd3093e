use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use topo_interaction::constraints::format_config;
use topo_interaction::grid::{
    read_label_grid, read_likelihood_grid, write_label_grid, write_likelihood_grid, write_mask,
};
use topo_interaction::synth::{self, BenchConfig, Scenario, SynthSpec};
use topo_interaction::{
    argmax_labels, detect, evaluate, parse_config, total_loss, Algorithm, Connectivity,
    ConstraintConfig, DetectionResult, LossConfig, Surrogate,
};

const EXIT_VIOLATIONS: u8 = 3;

#[derive(Parser)]
#[command(
    name = "topo",
    version,
    about = "Topological interaction checks, loss and metrics for label grids"
)]
struct Cli {
    /// Worker threads for detection (falls back to TOPO_THREADS, then all cores).
    #[arg(long, global = true, env = "TOPO_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Detect constraint violations; exit 0 if clean, 3 if any are found.
    Check {
        labels: PathBuf,
        config: PathBuf,
        #[command(flatten)]
        detect: DetectArgs,
        /// Write the violation mask here.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Print a JSON summary on stdout.
        #[arg(long)]
        json: bool,
    },
    /// Critical-site mask of a likelihood grid's argmax labels.
    Lossmask {
        likelihood: PathBuf,
        config: PathBuf,
        #[command(flatten)]
        detect: DetectArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Combined loss of a likelihood grid against ground truth.
    Loss {
        likelihood: PathBuf,
        gt: PathBuf,
        config: PathBuf,
        #[arg(long, default_value = "CE")]
        surrogate: Surrogate,
        #[arg(long, default_value_t = 1.0)]
        lambda_dice: f64,
        /// Defaults to 1e-4 in 2D and 1e-6 in 3D.
        #[arg(long)]
        lambda_ti: Option<f64>,
        #[arg(long, default_value_t = topo_interaction::loss::DEFAULT_DICE_SMOOTHING)]
        dice_smoothing: f64,
        #[arg(long)]
        conn: Option<Connectivity>,
        /// Write the gradient with respect to the likelihood here.
        #[arg(long)]
        grad: Option<PathBuf>,
    },
    /// Per-class Dice, Hausdorff and ASSD plus the violation share of pred.
    Metrics {
        pred: PathBuf,
        gt: PathBuf,
        config: PathBuf,
        #[arg(long)]
        conn: Option<Connectivity>,
        /// Print JSON on stdout instead of a table on stderr.
        #[arg(long)]
        json: bool,
    },
    /// Generate a synthetic label grid and its constraint config.
    Gen {
        /// Comma-separated extents, e.g. 64,64 or 32,32,32.
        #[arg(long, value_delimiter = ',', required = true)]
        dims: Vec<usize>,
        #[arg(long, default_value = "nested_rings")]
        scenario: Scenario,
        #[arg(long, default_value_t = 3)]
        classes: u16,
        #[arg(long, default_value_t = 0)]
        violations: usize,
        #[arg(long, default_value_t = 1)]
        wall: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Label grid output (SEGV).
        #[arg(long)]
        out: PathBuf,
        /// Constraint config output; defaults to the label path with a .cfg extension.
        #[arg(long)]
        config_out: Option<PathBuf>,
    },
    /// Scaling benchmark over algorithms, sizes and kernel extents.
    Bench {
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "naive,shifted,conv_direct,conv_fft"
        )]
        algos: Vec<Algorithm>,
        #[arg(long = "N", value_delimiter = ',', default_value = "256")]
        sizes: Vec<usize>,
        #[arg(long, value_delimiter = ',', default_value = "3,5,9,17")]
        k: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        #[arg(long, default_value_t = 2)]
        ndim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Let detection use the --threads pool instead of a single thread.
        #[arg(long)]
        parallel: bool,
        /// Also write the CSV here.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long, default_value = "auto")]
    algo: Algorithm,
    /// Overrides the config's conn directive.
    #[arg(long)]
    conn: Option<Connectivity>,
}

fn load_config(path: &Path) -> Result<ConstraintConfig, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_config(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn in_file(path: &Path) -> impl Fn(topo_interaction::Error) -> String + '_ {
    move |e| match e {
        topo_interaction::Error::Io { .. } => e.to_string(),
        e => format!("{}: {e}", path.display()),
    }
}

fn detection_json(r: &DetectionResult) -> Value {
    let per_task: Vec<Value> = r
        .per_task
        .iter()
        .map(|t| json!({"v_a": t.v_a.count(), "v_c": t.v_c.count()}))
        .collect();
    json!({
        "violations": r.violation_count,
        "foreground": r.foreground_count,
        "violations_percent": r.violations_percent(),
        "per_task": per_task,
    })
}

fn print_json(v: &Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(v).expect("json values serialize")
    );
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build_global()
            .map_err(|e| e.to_string())?;
    }
    match cli.command {
        Command::Check {
            labels,
            config,
            detect: args,
            out,
            json,
        } => {
            let cfg = load_config(&config)?;
            let g = read_label_grid(&labels).map_err(in_file(&labels))?;
            let conn = args.conn.unwrap_or(cfg.connectivity(g.ndim()));
            let r = detect(&g, &cfg.set, conn, args.algo).map_err(|e| e.to_string())?;
            if let Some(out) = out {
                write_mask(&r.mask, &out).map_err(|e| e.to_string())?;
            }
            eprintln!(
                "{}: {} critical sites of {} foreground ({:.4}%)",
                labels.display(),
                r.violation_count,
                r.foreground_count,
                r.violations_percent()
            );
            if json {
                print_json(&detection_json(&r));
            }
            Ok(if r.violation_count == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_VIOLATIONS)
            })
        }
        Command::Lossmask {
            likelihood,
            config,
            detect: args,
            out,
        } => {
            let cfg = load_config(&config)?;
            let f = read_likelihood_grid(&likelihood).map_err(in_file(&likelihood))?;
            let g = argmax_labels(&f);
            let conn = args.conn.unwrap_or(cfg.connectivity(g.ndim()));
            let r = detect(&g, &cfg.set, conn, args.algo).map_err(|e| e.to_string())?;
            write_mask(&r.mask, &out).map_err(|e| e.to_string())?;
            eprintln!("{}: {} critical sites", out.display(), r.violation_count);
            print_json(&detection_json(&r));
            Ok(ExitCode::SUCCESS)
        }
        Command::Loss {
            likelihood,
            gt,
            config,
            surrogate,
            lambda_dice,
            lambda_ti,
            dice_smoothing,
            conn,
            grad,
        } => {
            let cfg = load_config(&config)?;
            let f = read_likelihood_grid(&likelihood).map_err(in_file(&likelihood))?;
            let g = read_label_grid(&gt).map_err(in_file(&gt))?;
            let mut loss_cfg = LossConfig::for_ndim(g.ndim());
            loss_cfg.surrogate = surrogate;
            loss_cfg.lambda_dice = lambda_dice;
            loss_cfg.dice_smoothing = dice_smoothing;
            if let Some(w) = lambda_ti {
                loss_cfg.lambda_ti = w;
            }
            let conn = conn.unwrap_or(cfg.connectivity(g.ndim()));
            let report = total_loss(&f, &g, &cfg.set, conn, &loss_cfg, grad.is_some())
                .map_err(|e| e.to_string())?;
            if report.underflow_sites > 0 {
                eprintln!(
                    "warning: log-domain underflow at {} sites (probabilities floored at {})",
                    report.underflow_sites,
                    topo_interaction::loss::PROBABILITY_FLOOR
                );
            }
            if let (Some(path), Some(gradient)) = (grad, &report.gradient) {
                write_likelihood_grid(gradient, &path).map_err(|e| e.to_string())?;
            }
            eprintln!("{} critical sites", report.critical_sites);
            print_json(&json!({
                "l_ce": report.l_ce,
                "l_dice": report.l_dice,
                "l_ti": report.l_ti,
                "l_total": report.l_total,
            }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Metrics {
            pred,
            gt,
            config,
            conn,
            json,
        } => {
            let cfg = load_config(&config)?;
            let p = read_label_grid(&pred).map_err(in_file(&pred))?;
            let g = read_label_grid(&gt).map_err(in_file(&gt))?;
            let conn = conn.unwrap_or(cfg.connectivity(g.ndim()));
            let report = evaluate(&p, &g, &cfg.set, conn).map_err(|e| e.to_string())?;
            let fmt =
                |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"));
            for (id, m) in &report.per_class {
                eprintln!(
                    "class {id}: dice {:.4}  hd {}  assd {}",
                    m.dice,
                    fmt(m.hd),
                    fmt(m.assd)
                );
                if let Some(why) = &m.error {
                    eprintln!("  {why}");
                }
            }
            eprintln!("violations: {:.4}%", report.violations_percent);
            if json {
                print_json(&report.to_json());
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Gen {
            dims,
            scenario,
            classes,
            violations,
            wall,
            seed,
            out,
            config_out,
        } => {
            let spec = SynthSpec {
                dims,
                num_classes: classes,
                scenario,
                violation_count: violations,
                wall_thickness: wall,
                seed,
            };
            let s = synth::generate(&spec).map_err(|e| e.to_string())?;
            write_label_grid(&s.grid, &out).map_err(|e| e.to_string())?;
            let config_out = config_out.unwrap_or_else(|| out.with_extension("cfg"));
            let cfg = ConstraintConfig {
                set: s.constraints,
                conn: None,
            };
            fs::write(&config_out, format_config(&cfg))
                .map_err(|e| format!("{}: {e}", config_out.display()))?;
            eprintln!(
                "wrote {} and {} ({} planted)",
                out.display(),
                config_out.display(),
                s.planted.len()
            );
            print_json(&json!({ "planted": s.planted }));
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench {
            algos,
            sizes,
            k,
            repeats,
            ndim,
            seed,
            parallel,
            csv,
        } => {
            let threads = if parallel {
                cli.threads.unwrap_or_else(rayon::current_num_threads)
            } else {
                1
            };
            let cfg = BenchConfig {
                algorithms: algos,
                sizes,
                extents: k,
                repeats,
                ndim,
                seed,
                threads,
            };
            let report = synth::bench(&cfg).map_err(|e| e.to_string())?;
            let text = report.to_csv();
            if let Some(path) = csv {
                fs::write(&path, &text).map_err(|e| format!("{}: {e}", path.display()))?;
            }
            eprint!("{}", report.to_table());
            print!("{text}");
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}
