use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mlsieve::harness::{
    generate_instance, read_csv, run_experiment, summarize, validate_instance, write_report, write_summary_csv,
    Baseline, CChoice, ExperimentConfig, InstanceSpec, Variant,
};
use mlsieve::instance::InstanceFile;
use mlsieve::objectives::HardOrder;
use mlsieve::offline::OfflineMode;

#[derive(Parser)]
#[command(name = "mlsieve", version, about = "Multilinear threshold streaming for submodular maximization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate instance files.
    Gen(GenArgs),
    /// Run an experiment and write the CSV and JSON report.
    Run(RunArgs),
    /// Check non-negativity and submodularity of instance files exhaustively.
    Validate {
        #[arg(required = true)]
        instances: Vec<PathBuf>,
        #[arg(long, default_value_t = 1e-9)]
        tolerance: f64,
    },
    /// Aggregate report CSVs per variant.
    Report {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        /// Write the summary as CSV here as well.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum Kind {
    Coverage,
    Cut,
    Modular,
    Hard,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long = "type", value_enum)]
    kind: Kind,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: usize,
    #[arg(long)]
    h: Option<usize>,
    #[arg(long, default_value_t = 20)]
    universe: usize,
    #[arg(long, default_value_t = 0.3)]
    density: f64,
    #[arg(long, default_value_t = 0.3)]
    edge_probability: f64,
    #[arg(long)]
    min_weight: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    max_weight: f64,
    #[arg(long, value_enum, default_value_t = OrderArg::Shuffled)]
    order: OrderArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Number of instances, with seeds `seed, seed+1, ...`.
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum OrderArg {
    Shuffled,
    UFirst,
    VFirst,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra instance files.
    #[arg(long = "instance")]
    instances: Vec<PathBuf>,
    #[arg(long, value_enum)]
    variant: Option<VariantArg>,
    #[arg(long)]
    p: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// A number, or "auto".
    #[arg(long)]
    c: Option<String>,
    #[arg(long)]
    eps_prime: Option<f64>,
    #[arg(long, value_enum)]
    offline: Option<OfflineArg>,
    #[arg(long)]
    sample_scale: Option<f64>,
    #[arg(long)]
    sample_budget: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long = "baseline", value_enum)]
    baselines: Vec<BaselineArg>,
    #[arg(long)]
    max_subsets: Option<u64>,
    /// Output prefix.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum VariantArg {
    KnownTau,
    AutoTau,
    Sampled,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum OfflineArg {
    BruteForce,
    RandomGreedy,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum BaselineArg {
    Greedy,
    SieveStreaming,
}

fn gen(args: GenArgs) -> mlsieve::Result<()> {
    let need_n = || {
        args.n
            .ok_or_else(|| mlsieve::Error::Input("--n is required for this instance type".into()))
    };
    let spec = match args.kind {
        Kind::Coverage => InstanceSpec::Coverage {
            n: need_n()?,
            k: args.k,
            universe: args.universe,
            density: args.density,
            min_weight: args.min_weight.unwrap_or(1.0),
            max_weight: args.max_weight,
        },
        Kind::Cut => InstanceSpec::Cut {
            n: need_n()?,
            k: args.k,
            edge_probability: args.edge_probability,
            max_weight: args.max_weight,
        },
        Kind::Modular => InstanceSpec::Modular {
            n: need_n()?,
            k: args.k,
            min_weight: args.min_weight.unwrap_or(0.0),
            max_weight: args.max_weight,
        },
        Kind::Hard => InstanceSpec::Hard {
            k: args.k,
            h: args
                .h
                .ok_or_else(|| mlsieve::Error::Input("--h is required for hard instances".into()))?,
            order: match args.order {
                OrderArg::Shuffled => HardOrder::Shuffled,
                OrderArg::UFirst => HardOrder::UFirst,
                OrderArg::VFirst => HardOrder::VFirst,
            },
        },
    };
    std::fs::create_dir_all(&args.out_dir)?;
    for j in 0..args.count {
        let inst = generate_instance(&spec, args.seed.wrapping_add(j as u64))?;
        let path = args.out_dir.join(format!("{}.json", inst.id));
        inst.save(&path)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn run(args: RunArgs) -> mlsieve::Result<()> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.instances.extend(args.instances);
    if let Some(v) = args.variant {
        cfg.variant = match v {
            VariantArg::KnownTau => Variant::KnownTau,
            VariantArg::AutoTau => Variant::AutoTau,
            VariantArg::Sampled => Variant::Sampled,
        };
    }
    if let Some(c) = args.c {
        cfg.c = c.parse::<f64>().map(CChoice::Value).unwrap_or(CChoice::Named(c));
    }
    if let Some(o) = args.offline {
        cfg.offline = match o {
            OfflineArg::BruteForce => OfflineMode::BruteForce,
            OfflineArg::RandomGreedy => OfflineMode::RandomGreedy,
        };
    }
    if !args.baselines.is_empty() {
        cfg.baselines = args
            .baselines
            .iter()
            .map(|b| match b {
                BaselineArg::Greedy => Baseline::Greedy,
                BaselineArg::SieveStreaming => Baseline::SieveStreaming,
            })
            .collect();
    }
    if args.sample_scale.is_some() {
        cfg.sample_scale = args.sample_scale;
        cfg.sample_budget = None;
    }
    if args.sample_budget.is_some() {
        cfg.sample_budget = args.sample_budget;
        cfg.sample_scale = None;
    }
    cfg.p = args.p.unwrap_or(cfg.p);
    cfg.alpha = args.alpha.unwrap_or(cfg.alpha);
    cfg.eps_prime = args.eps_prime.unwrap_or(cfg.eps_prime);
    cfg.seed = args.seed.unwrap_or(cfg.seed);
    cfg.repetitions = args.repetitions.unwrap_or(cfg.repetitions);
    cfg.tau = args.tau.or(cfg.tau);
    cfg.max_subsets = args.max_subsets.unwrap_or(cfg.max_subsets);
    if args.output.is_some() {
        cfg.output = args.output;
    }

    let rows = run_experiment(&cfg)?;
    let prefix = cfg.output.clone().unwrap_or_else(|| PathBuf::from("report"));
    let (csv, json) = write_report(&rows, &prefix)?;
    let errors = rows.iter().filter(|r| !r.error.is_empty()).count();
    println!("{} rows ({} with errors) -> {}, {}", rows.len(), errors, csv.display(), json.display());
    print_summary(&rows);
    Ok(())
}

fn print_summary(rows: &[mlsieve::harness::ReportRow]) {
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    println!(
        "{:<16} {:>6} {:>6} {:>10} {:>10} {:>10} {:>10} {:>12}",
        "variant", "rows", "errors", "mean_ratio", "stderr", "min_ratio", "max_stored", "mean_calls"
    );
    for s in summarize(rows) {
        println!(
            "{:<16} {:>6} {:>6} {:>10} {:>10} {:>10} {:>10} {:>12.1}",
            s.variant,
            s.rows,
            s.errors,
            fmt(s.mean_ratio),
            fmt(s.stderr_ratio),
            fmt(s.min_ratio),
            s.max_max_stored.map_or("-".to_string(), |v| v.to_string()),
            s.mean_oracle_calls
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen(args) => gen(args),
        Command::Run(args) => run(args),
        Command::Validate { instances, tolerance } => (|| {
            let mut failed = false;
            for path in &instances {
                let inst = InstanceFile::load(path)?;
                let report = validate_instance(&inst, tolerance)?;
                match (&report.negative, &report.submodularity) {
                    (None, None) => println!("{}: ok (n = {})", path.display(), report.n),
                    (neg, sub) => {
                        failed = true;
                        for v in [neg, sub].into_iter().flatten() {
                            println!("{}: {v}", path.display());
                        }
                    }
                }
            }
            if failed {
                Err(mlsieve::Error::Input("some instances failed validation".into()))
            } else {
                Ok(())
            }
        })(),
        Command::Report { csv, output } => (|| {
            let mut rows = Vec::new();
            for path in &csv {
                rows.extend(read_csv(path)?);
            }
            print_summary(&rows);
            if let Some(out) = output {
                write_summary_csv(&summarize(&rows), out)?;
            }
            Ok(())
        })(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
