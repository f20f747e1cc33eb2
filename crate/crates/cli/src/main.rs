use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use autodo_core::analytics::{
    action_transition_matrix, agent_tour, cluster_states_with, clustered_matrix, feature_dissimilarity,
    hop_dissimilarity, layout, state_transition_matrix, state_vectors, temporal_graph, ClusterFeatures, LayoutOptions,
};
use autodo_core::engine::dataset::TupleDataset;
use autodo_core::engine::protocol::{read_csv, write_csv};
use autodo_core::engine::{
    default_schemas, search, summary, DataSource, EngineConfig, EngineEvent, EvaluationProtocol, EventSink,
};
use autodo_core::gymspec::codegen::{backend_names, generate_source};
use autodo_core::gymspec::{parse_spec, GymSpec, SpecError};
use autodo_core::rules::{
    bucketize, concatenate_evaluations, coverage_stats, induce_rules, Alignment, BucketStrategy, InduceOptions,
};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "autodo", version, about = "Gym specs, agent search and behavior analytics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a gym spec or generate environment source from it.
    Gym {
        #[command(subcommand)]
        action: GymCommand,
    },
    /// Run an agent search locally and write the results to a directory.
    Run(RunArgs),
    /// Analyze evaluation protocols (JSON array or CSV).
    Analyze {
        #[command(subcommand)]
        action: AnalyzeCommand,
    },
    /// Start the controller service. Configured through AUTODO_* variables.
    Serve,
    /// Run one launched job against a controller.
    Worker {
        #[arg(long)]
        job: String,
        #[arg(long)]
        token: String,
        #[arg(long, default_value = "http://127.0.0.1:8080")]
        controller: String,
    },
}

#[derive(Subcommand)]
enum GymCommand {
    /// Print validation findings; exits non-zero when the spec is invalid.
    Validate { spec: PathBuf },
    /// Emit environment source code.
    Codegen {
        spec: PathBuf,
        #[arg(long, default_value = "python")]
        backend: String,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(clap::Args)]
struct RunArgs {
    /// Gym spec to train on.
    #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
    gym: Option<PathBuf>,
    /// Tuple dataset CSV (s_*, a, r, sp_*) for offline agents.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Engine config JSON; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MatrixChoice {
    State,
    Action,
    Clustered,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dissimilarity {
    Hop,
    Feature,
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    EqualWidth,
    EqualFrequency,
}

#[derive(Clone, Copy, ValueEnum)]
enum Features {
    State,
    StateAndReward,
}

impl From<Features> for ClusterFeatures {
    fn from(f: Features) -> Self {
        match f {
            Features::State => ClusterFeatures::State,
            Features::StateAndReward => ClusterFeatures::StateAndReward,
        }
    }
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    Matrix {
        protocols: PathBuf,
        #[arg(long, value_enum, default_value = "state")]
        kind: MatrixChoice,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "state")]
        features: Features,
    },
    Graph {
        protocols: PathBuf,
        #[arg(long)]
        episode: Option<u32>,
    },
    Cluster {
        protocols: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "state")]
        features: Features,
    },
    Layout {
        protocols: PathBuf,
        #[arg(long, value_enum, default_value = "hop")]
        dissimilarity: Dissimilarity,
        #[arg(long, default_value_t = 2)]
        dims: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        episode: Option<u32>,
    },
    Rules {
        protocols: PathBuf,
        #[arg(long, default_value_t = 0)]
        from: u32,
        #[arg(long, default_value_t = 20)]
        to: u32,
        #[arg(long, default_value = "action")]
        column: String,
        #[arg(long, default_value_t = 4)]
        buckets: usize,
        #[arg(long, value_enum, default_value = "equal-width")]
        strategy: Strategy,
        /// Pair each action with the state it was taken in.
        #[arg(long)]
        decision_state: bool,
        #[arg(long)]
        max_conditions: Option<usize>,
        #[arg(long)]
        min_coverage: Option<usize>,
        /// Print the IF/THEN rendering instead of JSON.
        #[arg(long)]
        text: bool,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Gym { action } => gym(action),
        Command::Run(args) => run(args),
        Command::Analyze { action } => analyze(action),
        Command::Serve => serve(),
        Command::Worker { job, token, controller } => {
            let outcome = autodo_controller::worker::run(&controller, &job, &token)?;
            eprintln!("job {job}: {outcome:?}");
            Ok(())
        }
    }
}

fn read_spec(path: &Path) -> Result<GymSpec> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(parse_spec(&text)?)
}

fn print_json(v: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn gym(action: GymCommand) -> Result<()> {
    match action {
        GymCommand::Validate { spec } => {
            let text = fs::read_to_string(&spec).with_context(|| format!("reading {}", spec.display()))?;
            let report = match parse_spec(&text) {
                Ok(s) => s.validate(),
                Err(SpecError::Invalid(report)) => report,
                Err(e) => bail!(e),
            };
            print_json(&report)?;
            if !report.is_valid() {
                std::process::exit(1);
            }
            Ok(())
        }
        GymCommand::Codegen { spec, backend, out } => {
            if !backend_names().contains(&backend.as_str()) {
                bail!("unknown backend `{backend}`; available: {}", backend_names().join(", "));
            }
            let source = generate_source(&read_spec(&spec)?, &backend)?;
            match out {
                Some(path) => fs::write(&path, source).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{source}"),
            }
            Ok(())
        }
    }
}

/// Prints candidate progress to stderr.
struct StderrSink;

impl EventSink for StderrSink {
    fn emit(&self, event: EngineEvent) {
        match event {
            EngineEvent::CandidateStarted { candidate_id, agent, .. } => {
                eprintln!("candidate {candidate_id} ({agent}) started")
            }
            EngineEvent::CandidateFinished {
                candidate_id,
                status,
                rank_score,
                error,
                ..
            } => {
                let score = rank_score.map(|s| format!("{s:.3}")).unwrap_or_else(|| "-".into());
                let error = error.map(|e| format!(" ({e})")).unwrap_or_default();
                eprintln!("candidate {candidate_id} {status:?} score {score}{error}");
            }
            EngineEvent::Log { message } => eprintln!("{message}"),
            _ => {}
        }
    }
}

fn run(args: RunArgs) -> Result<()> {
    let mut config: EngineConfig = match &args.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => EngineConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let schemas = default_schemas();
    config.validate(&schemas)?;

    let spec;
    let data;
    let source = match (&args.gym, &args.dataset) {
        (Some(g), _) => {
            spec = read_spec(g)?;
            DataSource::Gym(&spec)
        }
        (None, Some(d)) => {
            data = TupleDataset::read_csv(fs::File::open(d).with_context(|| format!("opening {}", d.display()))?)?;
            DataSource::Dataset(&data)
        }
        (None, None) => bail!("pass --gym or --dataset"),
    };
    let result = search(source, &config, &schemas, &StderrSink)?;

    let protocols_dir = args.out.join("protocols");
    fs::create_dir_all(&protocols_dir)?;
    let document = result.document(|id| format!("protocols/candidate-{id}.json"));
    for c in result.all.iter().filter(|c| !c.protocols.is_empty()) {
        let id = c.candidate.candidate_id;
        fs::write(
            protocols_dir.join(format!("candidate-{id}.json")),
            serde_json::to_string_pretty(&c.protocols)?,
        )?;
        write_csv(&c.protocols, fs::File::create(protocols_dir.join(format!("candidate-{id}.csv")))?)?;
    }
    fs::write(
        args.out.join("result.json"),
        serde_json::to_string_pretty(&json!({ "document": document, "summary": summary(&result) }))?,
    )?;
    print_json(&summary(&result))
}

fn read_protocols(path: &Path) -> Result<Vec<EvaluationProtocol>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        Ok(read_csv(file)?)
    } else {
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

fn pick(protocols: &[EvaluationProtocol], episode: Option<u32>) -> Result<&EvaluationProtocol> {
    match episode {
        None => protocols.first(),
        Some(e) => protocols.iter().find(|p| p.episode == e),
    }
    .context("no such episode")
}

fn analyze(action: AnalyzeCommand) -> Result<()> {
    match action {
        AnalyzeCommand::Matrix {
            protocols,
            kind,
            k,
            seed,
            features,
        } => {
            let p = read_protocols(&protocols)?;
            let out: Value = match kind {
                MatrixChoice::State => json!({ "matrix": state_transition_matrix(&p)? }),
                MatrixChoice::Action => json!({ "matrix": action_transition_matrix(&p)? }),
                MatrixChoice::Clustered => {
                    let k = k.context("--k is required for clustered matrices")?;
                    let c = cluster_states_with(&p, k, seed, features.into())?;
                    json!({ "matrix": clustered_matrix(&p, &c)?, "clustering": c })
                }
            };
            print_json(&out)
        }
        AnalyzeCommand::Graph { protocols, episode } => {
            let p = read_protocols(&protocols)?;
            print_json(&temporal_graph(pick(&p, episode)?)?)
        }
        AnalyzeCommand::Cluster {
            protocols,
            k,
            seed,
            features,
        } => {
            let p = read_protocols(&protocols)?;
            print_json(&cluster_states_with(&p, k, seed, features.into())?)
        }
        AnalyzeCommand::Layout {
            protocols,
            dissimilarity,
            dims,
            seed,
            episode,
        } => {
            let p = read_protocols(&protocols)?;
            let (nodes, d) = match dissimilarity {
                Dissimilarity::Hop => {
                    let m = state_transition_matrix(&p)?;
                    let d = hop_dissimilarity(&m);
                    (m.labels, d)
                }
                Dissimilarity::Feature => {
                    let (labels, vectors) = state_vectors(&p);
                    (labels, feature_dissimilarity(&vectors))
                }
            };
            let l = layout(
                &nodes,
                &d,
                LayoutOptions {
                    dims,
                    seed,
                    ..LayoutOptions::default()
                },
            )?;
            let tour = agent_tour(pick(&p, episode)?, &l)?;
            print_json(&json!({
                "layout": l.export(),
                "iterations": l.iterations,
                "stress_trace": l.stress_trace,
                "tour": tour,
            }))
        }
        AnalyzeCommand::Rules {
            protocols,
            from,
            to,
            column,
            buckets,
            strategy,
            decision_state,
            max_conditions,
            min_coverage,
            text,
        } => {
            let p = read_protocols(&protocols)?;
            let alignment = if decision_state {
                Alignment::DecisionState
            } else {
                Alignment::AsRecorded
            };
            let strategy = match strategy {
                Strategy::EqualWidth => BucketStrategy::EqualWidth,
                Strategy::EqualFrequency => BucketStrategy::EqualFrequency,
            };
            let table = concatenate_evaluations(&p, from, to, alignment)?;
            let data = bucketize(&table, &column, buckets, strategy)?;
            let defaults = InduceOptions::for_rows(data.len());
            let set = induce_rules(
                &data,
                InduceOptions {
                    max_conditions: max_conditions.unwrap_or(defaults.max_conditions),
                    min_coverage: min_coverage.unwrap_or(defaults.min_coverage),
                },
            )?;
            if text {
                println!("{}", set.render());
                return Ok(());
            }
            print_json(&json!({
                "rules": set.export(),
                "label_column": data.label_column,
                "boundaries": data.boundaries,
                "rows": data.len(),
                "degenerate": set.degenerate,
                "coverage": coverage_stats(&set, &data)?,
            }))
        }
    }
}

fn serve() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    let config = autodo_controller::ControllerConfig::from_env().map_err(anyhow::Error::msg)?;
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let running = autodo_controller::start(config).await?;
        eprintln!("controller listening on {}", running.url());
        tokio::signal::ctrl_c().await?;
        eprintln!("shutting down");
        Ok(())
    })
}
