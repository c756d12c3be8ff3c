use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ase_core::effects::{estimate, EffectKind};
use ase_core::env::generate_failure_set;
use ase_core::env::graph::{self, build_graph_env, GraphEnvConfig};
use ase_core::env::sepsis::{
    self, build_sepsis_env, train_policies, SepsisEnvConfig, SepsisTransitions, ASSET_SHA256,
};
use ase_core::harness::{run_experiment, ExperimentConfig, ExperimentKind};
use ase_core::oracle::{exact_query, ExactKind, Subgraphs, DEFAULT_BUDGET};
use ase_core::schema::{parse_action, parse_agent, parse_agents, ModelFile, TrajectoryFile};
use ase_core::{AgentSet, EdgeSet, EffectQuery, Error, MmdpScm, Outcome, Trajectory};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

type Result<T> = ase_core::Result<T>;
type FailureTest = Box<dyn Fn(&Trajectory) -> bool + Sync>;

/// Agent-specific counterfactual effects in multi-agent MDPs.
#[derive(Parser)]
#[command(name = "ase-lab", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Monte Carlo estimate of one effect query.
    Effect {
        #[command(flatten)]
        query: QueryArgs,
        /// Posterior draws H.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Exact value of one query by noise-interval enumeration.
    Oracle {
        #[command(flatten)]
        query: QueryArgs,
        /// Leaf budget of the enumeration.
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u64,
        /// Also print both sides of PSE = FPSE (roles swapped) + TCE.
        #[arg(long)]
        check_prop_fpse_pse: bool,
    },
    /// Runs an experiment and writes its CSV and JSON outputs.
    Experiment(ExperimentArgs),
    /// Writes a built-in environment as a model file, with sampled failures.
    Env(EnvArgs),
    /// Writes or verifies the bundled Sepsis transition asset.
    SepsisAsset(AssetArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvName {
    Graph,
    Sepsis,
}

#[derive(Args)]
struct ModelArgs {
    /// Model file in the JSON model schema.
    #[arg(long, conflicts_with = "env", required_unless_present = "env")]
    model: Option<PathBuf>,
    /// Built-in environment instead of a model file.
    #[arg(long, value_enum)]
    env: Option<EnvName>,
    /// Clinician trust (Sepsis).
    #[arg(long)]
    mu: Option<f64>,
    /// Number of agents (Graph).
    #[arg(long, default_value_t = 6)]
    agents: usize,
}

#[derive(Args)]
struct QueryArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// tcfe, cf-ase, cf-pse, ase or fpse.
    #[arg(long)]
    kind: String,
    /// Observed trajectory file (counterfactual kinds).
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[arg(long)]
    agent: String,
    #[arg(long)]
    time: usize,
    /// Alternative action, by name or index.
    #[arg(long)]
    action: String,
    /// Reference action (ase, fpse).
    #[arg(long)]
    reference: Option<String>,
    /// Effect agents such as `a,b`.
    #[arg(long)]
    effect_agents: Option<String>,
    /// `final_state==<id>` or `state[t]==<id>`.
    #[arg(long)]
    outcome: String,
    #[arg(long, env = "ASE_LAB_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Experiment config (JSON); fields not given take the profile defaults.
    config: Option<PathBuf>,
    /// Run a built-in profile instead of a config file.
    #[arg(
        long,
        value_enum,
        conflicts_with = "config",
        required_unless_present = "config"
    )]
    preset: Option<Preset>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Start from the full-scale profile.
    #[arg(long)]
    paper_scale: bool,
    /// Overrides the config seed.
    #[arg(long, env = "ASE_LAB_SEED")]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    TrustSweep,
    PolicyPerturbation,
    OrderingMisspecification,
    GraphRobustness,
}

impl From<Preset> for ExperimentKind {
    fn from(p: Preset) -> Self {
        match p {
            Preset::TrustSweep => Self::TrustSweep,
            Preset::PolicyPerturbation => Self::PolicyPerturbation,
            Preset::OrderingMisspecification => Self::OrderingMisspecification,
            Preset::GraphRobustness => Self::GraphRobustness,
        }
    }
}

#[derive(Args)]
struct EnvArgs {
    #[arg(value_enum)]
    name: EnvName,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long, default_value_t = 6)]
    agents: usize,
    /// Failure trajectories to sample into `<out>/failures/`.
    #[arg(long, default_value_t = 0, requires = "out")]
    failures: usize,
    #[arg(long, env = "ASE_LAB_SEED", default_value_t = 0)]
    seed: u64,
    /// Output directory; without it the model is printed.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AssetArgs {
    /// Write the bundled asset here.
    #[arg(long)]
    write: Option<PathBuf>,
    /// Check an asset file against the pinned checksum.
    #[arg(long)]
    verify: Option<PathBuf>,
    /// Also write the trained AI and clinician policies here.
    #[arg(long)]
    policies: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) | Error::NotNormalized { .. } | Error::UnknownParentConfig { .. } => 2,
        Error::ZeroProbabilityEvidence { .. } => 3,
        Error::CellBudgetExceeded { .. } => 4,
        _ => 1,
    }
}

fn error_name(e: &Error) -> &'static str {
    match e {
        Error::Validation(_) => "validation",
        Error::NotNormalized { .. } => "not_normalized",
        Error::UnknownParentConfig { .. } => "unknown_parent_config",
        Error::ZeroProbabilityEvidence { .. } => "zero_probability_evidence",
        Error::CellBudgetExceeded { .. } => "cell_budget_exceeded",
        Error::NonConvergence { .. } => "non_convergence",
        Error::FailureRateTooLow { .. } => "failure_rate_too_low",
        Error::Asset(_) => "asset",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
        Error::Csv(_) => "csv",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("{}", json!({"error": "threads", "message": e.to_string()}));
            return ExitCode::from(1);
        }
    }
    match run(cli.command) {
        Ok(out) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&out).expect("JSON values serialize")
            );
            ExitCode::SUCCESS
        }
        Err(e) => {
            let mut body = json!({"error": error_name(&e), "message": e.to_string()});
            if let Error::CellBudgetExceeded { required, budget } = &e {
                body["required"] = json!(required);
                body["budget"] = json!(budget);
            }
            eprintln!("{body}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(command: Command) -> Result<Value> {
    match command {
        Command::Effect { query, samples } => {
            let (scm, kind, q) = load_query(&query, samples)?;
            Ok(serde_json::to_value(estimate(&scm, kind, &q)?)?)
        }
        Command::Oracle {
            query,
            budget,
            check_prop_fpse_pse,
        } => {
            let (scm, kind, q) = load_query(&query, 1)?;
            let exact = exact_query(&scm, &q, exact_kind(kind), None, budget)?;
            let mut out = json!({
                "kind": exact_kind(kind).as_str(),
                "value": exact.value,
                "value_text": format!("{:.16e}", exact.value),
                "leaves": exact.leaves,
            });
            if check_prop_fpse_pse {
                out["identity"] = pse_identity(&scm, &q, budget)?;
            }
            Ok(out)
        }
        Command::Experiment(args) => experiment(args),
        Command::Env(args) => env(args),
        Command::SepsisAsset(args) => asset(args),
    }
}

fn exact_kind(kind: EffectKind) -> ExactKind {
    match kind {
        EffectKind::Tcfe => ExactKind::Tcfe,
        EffectKind::CfAse => ExactKind::CfAse,
        EffectKind::CfPse => ExactKind::CfPse,
        EffectKind::Ase => ExactKind::Ase,
        EffectKind::Fpse => ExactKind::Fpse,
    }
}

/// PSE of the counterfactual path-specific subgraph against FPSE on its
/// complement with the actions swapped, plus TCE.
fn pse_identity(scm: &MmdpScm, q: &EffectQuery, budget: u64) -> Result<Value> {
    let mut q = q.clone();
    q.trajectory = None;
    if q.effect_agents.is_empty() {
        q.effect_agents = AgentSet::from_agents([q.agent]).complement(scm.spec().num_agents());
    }
    let reference = q
        .reference
        .ok_or_else(|| Error::Validation("the identity check needs --reference".into()))?;
    let g = scm.cf_pse_subgraph(q.agent, q.time, q.effect_agents);
    let pse = exact_query(
        scm,
        &q,
        ExactKind::Pse,
        Some(&Subgraphs {
            g: g.clone(),
            g_star: EdgeSet::default(),
        }),
        budget,
    )?
    .value;
    let mut swapped = q.clone();
    swapped.action = reference;
    swapped.reference = Some(q.action);
    let sg = Subgraphs {
        g: scm.complement(&g),
        g_star: EdgeSet::default(),
    };
    let fpse = exact_query(scm, &swapped, ExactKind::Fpse, Some(&sg), budget)?.value;
    let tce = exact_query(scm, &q, ExactKind::Tce, None, budget)?.value;
    Ok(json!({
        "pse": format!("{pse:.16e}"),
        "fpse_swapped_plus_tce": format!("{:.16e}", fpse + tce),
        "fpse_swapped": fpse,
        "tce": tce,
        "abs_difference": (pse - fpse - tce).abs(),
    }))
}

fn load_model(m: &ModelArgs) -> Result<MmdpScm> {
    match (&m.model, m.env) {
        (Some(path), _) => ModelFile::load(path)?.build(),
        (None, Some(EnvName::Graph)) => {
            let (spec, policy, ord) = build_graph_env(&GraphEnvConfig::with_agents(m.agents))?;
            ase_core::build_scm(spec, policy, ord)
        }
        (None, Some(EnvName::Sepsis)) => {
            let mu =
                m.mu.ok_or_else(|| Error::Validation("--env sepsis needs --mu".into()))?;
            let (spec, policy, ord) = sepsis_env(mu)?;
            ase_core::build_scm(spec, policy, ord)
        }
        (None, None) => Err(Error::Validation("give --model or --env".into())),
    }
}

fn sepsis_env(
    mu: f64,
) -> Result<(
    ase_core::MmdpSpec,
    ase_core::JointPolicy,
    ase_core::TotalOrdering,
)> {
    let config = SepsisEnvConfig::default();
    let transitions = config.transitions()?;
    let policies = train_policies(&transitions, &config)?;
    build_sepsis_env(&config, &transitions, &policies, mu)
}

fn load_query(a: &QueryArgs, samples: usize) -> Result<(MmdpScm, EffectKind, EffectQuery)> {
    let kind: EffectKind = a.kind.parse()?;
    let scm = load_model(&a.model)?;
    let spec = scm.spec();
    let agent = parse_agent(&a.agent, spec)?;
    let trajectory: Option<Trajectory> = a
        .trajectory
        .as_deref()
        .map(|p| TrajectoryFile::load(p)?.resolve(spec))
        .transpose()?;
    let q = EffectQuery {
        trajectory,
        agent,
        time: a.time,
        action: parse_action(&a.action, spec, agent)?,
        reference: a
            .reference
            .as_deref()
            .map(|r| parse_action(r, spec, agent))
            .transpose()?,
        effect_agents: AgentSet::from_agents(
            a.effect_agents
                .as_deref()
                .map(|e| parse_agents(e, spec))
                .transpose()?
                .unwrap_or_default(),
        ),
        outcome: Outcome::parse(&a.outcome, spec)?,
        samples,
        seed: a.seed,
    };
    q.validate(&scm, kind)?;
    Ok((scm, kind, q))
}

fn experiment(a: ExperimentArgs) -> Result<Value> {
    let mut config = match (&a.config, a.preset) {
        (Some(path), _) => {
            ExperimentConfig::from_json_profile(&fs::read_to_string(path)?, a.paper_scale)?
        }
        (None, Some(p)) if a.paper_scale => ExperimentConfig::paper(p.into()),
        (None, Some(p)) => ExperimentConfig::desk(p.into()),
        (None, None) => return Err(Error::Validation("give a config file or --preset".into())),
    };
    if a.paper_scale {
        eprintln!("warning: the full-scale profile can take hours");
    }
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let out = run_experiment(&config, &a.out)?;
    Ok(json!({"summary": out.summary, "csv": out.csv}))
}

fn write_pretty<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn env(a: EnvArgs) -> Result<Value> {
    let (parts, failure): (_, FailureTest) = match a.name {
        EnvName::Graph => {
            let n = a.agents;
            (
                build_graph_env(&GraphEnvConfig::with_agents(n))?,
                Box::new(move |t: &Trajectory| graph::is_failure(n, t)),
            )
        }
        EnvName::Sepsis => {
            let mu =
                a.mu.ok_or_else(|| Error::Validation("sepsis needs --mu".into()))?;
            (sepsis_env(mu)?, Box::new(sepsis::is_failure))
        }
    };
    let model = ModelFile::from_parts(&parts.0, &parts.1, &parts.2);
    let Some(out) = a.out else {
        return Ok(serde_json::from_str(&model.to_json()?)?);
    };
    fs::create_dir_all(&out)?;
    let model_path = out.join("model.json");
    fs::write(&model_path, model.to_json()? + "\n")?;
    let mut files = Vec::new();
    if a.failures > 0 {
        let scm = ase_core::build_scm(parts.0, parts.1, parts.2)?;
        let dir = out.join("failures");
        fs::create_dir_all(&dir)?;
        for (k, tau) in generate_failure_set(&scm, a.failures, a.seed, |t| failure(t))?
            .iter()
            .enumerate()
        {
            let path = dir.join(format!("{k:04}.json"));
            write_pretty(&path, &TrajectoryFile::from_trajectory(tau))?;
            files.push(path);
        }
    }
    Ok(json!({"model": model_path, "failures": files}))
}

fn asset(a: AssetArgs) -> Result<Value> {
    let mut out = json!({"sha256": ASSET_SHA256});
    if let Some(path) = &a.verify {
        let t = SepsisTransitions::load(path, Some(ASSET_SHA256))?;
        out["verified"] = json!(path);
        out["rows"] = json!(t.rows.len());
    }
    if let Some(path) = &a.write {
        fs::write(path, SepsisTransitions::embedded_bytes())?;
        out["written"] = json!(path);
    }
    if let Some(path) = &a.policies {
        let config = SepsisEnvConfig::default();
        write_pretty(path, &train_policies(&config.transitions()?, &config)?)?;
        out["policies"] = json!(path);
    }
    Ok(out)
}
