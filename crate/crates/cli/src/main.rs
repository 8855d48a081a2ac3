//! `pathlift` command-line tool.
//!
//! Exit codes: 0 on success, 1 when the library rejects the request, 2 on
//! malformed command lines. Randomized commands refuse to run without
//! `--seed`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pathlift::autodiff::LossKind;
use pathlift::experiment::{run_experiment, Criterion, ExperimentConfig, Task};
use pathlift::io::{load_network, network_to_string};
use pathlift::lipschitz::{equality_witness, sign_counterexample_at, verify_bound, BoundVariant, Witness};
use pathlift::metrics::{
    path_metric_exact_dominated, path_metric_lower, path_metric_report, path_metric_upper_coarse, path_metric_upper_refined,
    path_norm_fast,
};
use pathlift::pruning::{apply_prune, apply_prune_iterative, baseline_scores, path_mag_scores, Amount, Baseline, Batch, PruneScope, ScoreMethod};
use pathlift::sample::{random_architecture, random_input, random_params, same_sign_partner, DagShape, ParamRange};
use pathlift::transforms::{normalize, random_rescaling, rescale, RescalePreset};
use pathlift::{forward, Architecture, ParamVector, PathOracle};

#[derive(Parser)]
#[command(name = "pathlift", version, about = "Path-lifting tools for DAG ReLU networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate a network on one input.
    Eval {
        net: PathBuf,
        /// Comma-separated input values, one per input neuron.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        input: Vec<f64>,
        /// Also list every path with its lifting value and activation.
        #[arg(long)]
        paths: bool,
    },
    /// Print the lq path-norm of a network.
    Pathnorm {
        net: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        q: f64,
    },
    /// Compare two parameter vectors of the same architecture.
    Pathmetric {
        net: PathBuf,
        other: PathBuf,
        #[command(flatten)]
        only: MetricSelection,
    },
    /// Prune a network by score.
    Prune(PruneArgs),
    /// Apply a random neuron-wise rescaling.
    Rescale {
        net: PathBuf,
        #[arg(long)]
        seed: u64,
        /// `fixed` or `loguniform:LMAX`.
        #[arg(long, default_value = "fixed")]
        preset: RescalePreset,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rescale every hidden neuron to unit incoming l1 norm.
    Normalize {
        net: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the Lipschitz bound on random same-sign pairs.
    VerifyLipschitz {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        cases: usize,
        #[arg(long, default_value = "main")]
        variant: BoundVariant,
        /// Draw pairs around this network instead of random architectures.
        net: Option<PathBuf>,
    },
    /// Evaluate the bound on a fixture network.
    Witness {
        /// Chain of depth D with weights A against B at input X0.
        #[arg(long, num_args = 4, value_names = ["D", "A", "B", "X0"], conflicts_with = "counterexample", required_unless_present = "counterexample")]
        equality: Option<Vec<f64>>,
        /// Sign-flipped pair with equal liftings.
        #[arg(long)]
        counterexample: bool,
        /// Input for the counterexample.
        #[arg(long, default_value_t = 1.0, requires = "counterexample", allow_hyphen_values = true)]
        at: f64,
    },
    /// Train, rescale, prune, rewind and finetune a small MLP.
    Experiment(ExperimentArgs),
}

#[derive(Args)]
#[group(multiple = false)]
struct MetricSelection {
    /// Difference of path-norms.
    #[arg(long)]
    lower: bool,
    /// Exact value when one vector dominates the other coordinatewise.
    #[arg(long)]
    exact: bool,
    /// Coarse upper bound after normalization.
    #[arg(long)]
    upper: bool,
    /// Refined upper bound after normalization.
    #[arg(long)]
    refined: bool,
    /// Enumerated distance between the liftings.
    #[arg(long)]
    oracle: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum PruneCriterion {
    Pathmag,
    Magnitude,
    Obd,
    ObdHutchinson,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Autodiff,
    Diff,
    Brute,
}

#[derive(Clone, Copy, ValueEnum)]
enum Scope {
    All,
    Edges,
}

#[derive(Clone, Copy, ValueEnum)]
enum Loss {
    Squared,
    Logistic,
}

#[derive(Args)]
struct PruneArgs {
    net: PathBuf,
    #[arg(long, value_enum, default_value = "pathmag")]
    criterion: PruneCriterion,
    #[arg(long, value_enum, default_value = "autodiff")]
    method: Method,
    /// Fraction of eligible coordinates to remove.
    #[arg(long, conflicts_with = "count", required_unless_present = "count")]
    amount: Option<f64>,
    /// Number of coordinates to remove.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, value_enum, default_value = "all")]
    scope: Scope,
    /// Recompute path-magnitude scores after every removal.
    #[arg(long)]
    iterative: bool,
    /// JSON batch `{"inputs": [[..]], "targets": [[..]]}` for the OBD criteria.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "squared")]
    loss: Loss,
    #[arg(long, default_value_t = 16)]
    probes: usize,
    /// Required by the Hutchinson criterion.
    #[arg(long)]
    seed: Option<u64>,
    /// Write the pruned network here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    seed: u64,
    /// JSON config; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    preset: Option<RescalePreset>,
    #[arg(long)]
    task: Option<Task>,
    /// Comma-separated: pathmag, magnitude, obd, obd_hutchinson.
    #[arg(long, value_delimiter = ',')]
    criteria: Option<Vec<Criterion>>,
    /// Print the full JSON report instead of the table.
    #[arg(long)]
    json: bool,
    /// Write the full JSON report here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn usage_error(subcommand: &str, msg: &str) -> ! {
    let mut root = Cli::command();
    let mut cmd = root.find_subcommand_mut(subcommand).expect("known subcommand").clone().bin_name(format!("pathlift {subcommand}"));
    cmd.error(ErrorKind::MissingRequiredArgument, msg).exit()
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Eval { net, input, paths } => eval(&net, &input, paths),
        Command::Pathnorm { net, q } => {
            let (arch, theta) = load(&net)?;
            println!("{}", path_norm_fast(&arch, &theta, q)?);
            Ok(())
        }
        Command::Pathmetric { net, other, only } => pathmetric(&net, &other, &only),
        Command::Prune(args) => prune(&args),
        Command::Rescale { net, seed, preset, out } => {
            let (arch, theta) = load(&net)?;
            let lambda = random_rescaling(&arch, seed, preset);
            emit(&arch, &rescale(&arch, &theta, &lambda)?, out.as_deref())
        }
        Command::Normalize { net, out } => {
            let (arch, theta) = load(&net)?;
            emit(&arch, &normalize(&arch, &theta)?, out.as_deref())
        }
        Command::VerifyLipschitz { seed, cases, variant, net } => verify_lipschitz(seed, cases, variant, net.as_deref()),
        Command::Witness { equality, at, .. } => {
            let w = match equality {
                Some(v) => {
                    let d = v[0];
                    if !(d >= 1.0 && d.fract() == 0.0) {
                        bail!("witness depth must be a positive integer, got {d}");
                    }
                    equality_witness(d as usize, v[1], v[2], v[3])?
                }
                None => sign_counterexample_at(at),
            };
            print_witness(&w);
            Ok(())
        }
        Command::Experiment(args) => experiment(&args),
    }
}

fn load(path: &Path) -> Result<(Architecture, ParamVector)> {
    Ok(load_network(path)?)
}

fn emit(arch: &Architecture, theta: &ParamVector, out: Option<&Path>) -> Result<()> {
    let text = network_to_string(arch, theta)?;
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn eval(net: &Path, input: &[f64], paths: bool) -> Result<()> {
    let (arch, theta) = load(net)?;
    let out = forward(&arch, &theta, input)?;
    for (&v, y) in arch.outputs().iter().zip(&out) {
        println!("{}\t{y}", arch.id(v));
    }
    if paths {
        let oracle = PathOracle::new(&arch)?;
        let lifting = oracle.lifting(&theta)?;
        let active = oracle.activations(&theta, input)?;
        println!();
        println!("path\tphi\tactive");
        for (i, p) in oracle.paths().iter().enumerate() {
            println!("{}\t{}\t{}", p.display(&arch), lifting.values[i], u8::from(active.0[i]));
        }
    }
    Ok(())
}

fn pathmetric(net: &Path, other: &Path, only: &MetricSelection) -> Result<()> {
    let (arch, theta) = load(net)?;
    let (arch2, theta2) = load(other)?;
    if arch.spec() != arch2.spec() {
        bail!("{} and {} describe different architectures", net.display(), other.display());
    }
    let single = if only.lower {
        Some(path_metric_lower(&arch, &theta, &theta2)?)
    } else if only.exact {
        Some(path_metric_exact_dominated(&arch, &theta, &theta2)?.value)
    } else if only.upper {
        Some(path_metric_upper_coarse(&arch, &theta, &theta2, 1.0)?)
    } else if only.refined {
        Some(path_metric_upper_refined(&arch, &theta, &theta2, 1.0)?)
    } else if only.oracle {
        let o = PathOracle::new(&arch)?;
        Some(o.lifting(&theta)?.distance_l1(&o.lifting(&theta2)?))
    } else {
        None
    };
    if let Some(v) = single {
        println!("{v}");
        return Ok(());
    }
    let r = path_metric_report(&arch, &theta, &theta2)?;
    let opt = |v: Option<f64>| v.map_or_else(|| "unavailable".to_string(), |v| v.to_string());
    println!("lower\t{}", r.lower);
    println!("exact\t{}", opt(r.exact));
    println!("upper\t{}", r.upper_coarse);
    println!("refined\t{}", r.upper_refined);
    println!("oracle\t{}", opt(r.oracle));
    Ok(())
}

fn prune(args: &PruneArgs) -> Result<()> {
    let (arch, theta) = load(&args.net)?;
    let amount = match (args.amount, args.count) {
        (Some(f), _) => Amount::Fraction(f),
        (None, Some(k)) => Amount::Count(k),
        (None, None) => unreachable!("clap requires one of the two"),
    };
    let scope = match args.scope {
        Scope::All => PruneScope::All,
        Scope::Edges => PruneScope::EdgesOnly,
    };
    let (mask, pruned) = if args.iterative {
        if !matches!(args.criterion, PruneCriterion::Pathmag) {
            bail!("iterative pruning is only defined for the path-magnitude criterion");
        }
        apply_prune_iterative(&arch, &theta, amount, scope)?
    } else {
        let batch = match &args.data {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                Some(serde_json::from_str::<Batch>(&text).with_context(|| format!("parsing {}", path.display()))?)
            }
            None => None,
        };
        let loss = match args.loss {
            Loss::Squared => LossKind::SquaredError,
            Loss::Logistic => LossKind::Logistic,
        };
        let scores = match args.criterion {
            PruneCriterion::Pathmag => {
                let method = match args.method {
                    Method::Autodiff => ScoreMethod::Autodiff,
                    Method::Diff => ScoreMethod::PathnormDiff,
                    Method::Brute => ScoreMethod::Bruteforce,
                };
                path_mag_scores(&arch, &theta, method)?
            }
            PruneCriterion::Magnitude => baseline_scores(&arch, &theta, Baseline::Magnitude, None, loss)?,
            PruneCriterion::Obd => baseline_scores(&arch, &theta, Baseline::ObdFd, batch.as_ref(), loss)?,
            PruneCriterion::ObdHutchinson => {
                let Some(seed) = args.seed else { usage_error("prune", "the obd-hutchinson criterion requires --seed") };
                baseline_scores(&arch, &theta, Baseline::ObdHutchinson { probes: args.probes, seed }, batch.as_ref(), loss)?
            }
        };
        apply_prune(&arch, &theta, &scores, amount, scope)?
    };
    println!("pruned\t{}", mask.pruned().len());
    println!("mask\t{}", mask.bits());
    let labels: Vec<String> = mask.pruned().iter().map(|&i| arch.coord_label(i)).collect();
    println!("removed\t{}", labels.join(","));
    if let Some(out) = &args.out {
        emit(&arch, &pruned, Some(out))?;
    }
    Ok(())
}

fn verify_lipschitz(seed: u64, cases: usize, variant: BoundVariant, net: Option<&Path>) -> Result<()> {
    let fixed = net.map(load).transpose()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let range = ParamRange::default();
    let mut held = 0;
    for case in 0..cases {
        let (arch, theta) = match &fixed {
            Some((a, t)) => (a.clone(), t.clone()),
            None => {
                let arch = random_architecture(&mut rng, &DagShape::default());
                let theta = random_params(&mut rng, &arch, &range);
                (arch, theta)
            }
        };
        let other = same_sign_partner(&mut rng, &arch, &theta, &range, 0.2);
        let x = random_input(&mut rng, &arch, 3.0);
        let rep = verify_bound(&arch, &theta, &other, &x, variant)?;
        if rep.holds {
            held += 1;
        } else {
            eprintln!("case {case}: lhs {} exceeds rhs {}", rep.lhs, rep.rhs);
        }
    }
    println!("{held}/{cases} hold");
    if held < cases {
        bail!("{} of {cases} cases violate the bound", cases - held);
    }
    Ok(())
}

fn print_witness(w: &Witness) {
    println!("path_metric\t{}", w.path_metric);
    println!("output_gap\t{}", w.report.lhs);
    println!("rhs\t{}", w.report.rhs);
    println!("holds\t{}", w.report.holds);
}

fn experiment(args: &ExperimentArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<ExperimentConfig>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    config.seed = args.seed;
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(f) = args.fraction {
        config.fraction = f;
    }
    if let Some(p) = args.preset {
        config.preset = p;
    }
    if let Some(t) = args.task {
        config.dataset.task = t;
    }
    if let Some(c) = &args.criteria {
        config.criteria = c.clone();
    }
    let report = run_experiment(&config)?;
    if let Some(out) = &args.out {
        std::fs::write(out, report.to_json() + "\n").with_context(|| format!("writing {}", out.display()))?;
    }
    if args.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.table());
    }
    Ok(())
}
