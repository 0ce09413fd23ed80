use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;

use mns::cohort::CohortData;
use mns::glasso::{lambda_max, per_subject_path_solutions, pooled_path_solutions, sample_covariance, GlassoSolution};
use mns::graph::{NodeSet, Rule, WeightedNetwork};
use mns::io::{
    create_dir, evaluate_results, export_cohort, ingest_cohort, matrix_to_tsv, read_truth, set_dir_name,
    write_json, write_network_set, write_text, MnsResultDoc, NetworkSet, ResultIndex, ResultKind, ResultSetEntry,
    RunManifest, RESULTS_INDEX,
};
use mns::mns::{fit_path, MnsConfig, MnsResult, Network};
use mns::simulator::{gen_component_cohort, sample_cohort, simulate, SimConfig, SimTruth};
use mns::stability::{log_grid, run_stability, StabilityConfig};
use mns::tuning::{alpha_lambda_grid, cross_validate, mns_lambda_max, AlphaLambda, DEFAULT_GRID_DEPTH, DEFAULT_GRID_SIZE};
use mns::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "mns", version, about = "Mixed neighborhood selection for replicated Gaussian graphical models")]
struct Cli {
    /// Master seed for every random stream.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads (0 = all cores). Outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "mns_out")]
    out_dir: PathBuf,
    /// Rule for symmetrizing neighborhoods into edges.
    #[arg(long, global = true, default_value = "and")]
    rule: Rule,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a cohort with population and variable edges.
    Simulate(SimulateArgs),
    /// Simulate the disjoint-components cohort.
    SimulateComponents(ComponentArgs),
    /// Fit MNS at one penalty or along a grid.
    Fit(FitArgs),
    /// Graphical lasso baseline, pooled or per subject.
    Glasso(GlassoArgs),
    /// Bootstrap stability selection with Beta-Binomial edge moments.
    Stability(StabilityArgs),
    /// K-fold cross-validation over the penalty grid.
    Cv(CvArgs),
    /// Score result sets against a cohort's ground truth.
    Evaluate(EvaluateArgs),
}

fn parse_tau(s: &str) -> std::result::Result<f64, String> {
    let t: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&t) {
        Ok(t)
    } else {
        Err(format!("tau must lie in [0, 1], got {t}"))
    }
}

fn parse_alpha(s: &str) -> std::result::Result<f64, String> {
    let a: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if (0.0..=1.0).contains(&a) {
        Ok(a)
    } else {
        Err(format!("alpha must lie in [0, 1], got {a}"))
    }
}

fn parse_positive(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if v.is_finite() && v > 0.0 {
        Ok(v)
    } else {
        Err(format!("expected a positive number, got {v}"))
    }
}

fn parse_fraction(s: &str) -> std::result::Result<f64, String> {
    let v = parse_positive(s)?;
    if v < 1.0 {
        Ok(v)
    } else {
        Err(format!("expected a value in (0, 1), got {v}"))
    }
}

#[derive(Args, Debug, Serialize)]
struct SimulateArgs {
    #[arg(long, default_value_t = 50)]
    p: usize,
    #[arg(long, default_value_t = 10)]
    subjects: usize,
    /// Observations per subject.
    #[arg(long, default_value_t = 200)]
    n: usize,
    /// Variable edges drawn at random.
    #[arg(long, default_value_t = 20)]
    e_ran: usize,
    /// Probability that a subject carries each variable edge.
    #[arg(long, default_value_t = 1.0, value_parser = parse_tau)]
    tau: f64,
    /// Edge weights are drawn from ±U(r/2, r).
    #[arg(long, default_value_t = 1.0, value_parser = parse_positive)]
    r: f64,
    /// Barabási-Albert edges per new node.
    #[arg(long, default_value_t = 1)]
    ba_m: usize,
}

#[derive(Args, Debug, Serialize)]
struct ComponentArgs {
    #[arg(long, default_value_t = 100)]
    p: usize,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 1.0, value_parser = parse_positive)]
    r: f64,
    #[arg(long, default_value_t = 1)]
    ba_m: usize,
}

#[derive(Args, Debug, Serialize)]
struct CohortArg {
    /// Cohort directory or its cohort.json.
    #[arg(long)]
    cohort: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct GridArgs {
    /// Number of log-spaced penalties, from the smallest all-empty value down.
    #[arg(long, default_value_t = DEFAULT_GRID_SIZE)]
    lambda_grid: usize,
    /// Smallest grid penalty as a fraction of the largest.
    #[arg(long, default_value_t = DEFAULT_GRID_DEPTH, value_parser = parse_fraction)]
    grid_depth: f64,
}

#[derive(Args, Debug, Serialize)]
struct FitArgs {
    #[command(flatten)]
    cohort: CohortArg,
    /// Share of the penalty put on fixed effects.
    #[arg(long, default_value_t = 0.25, value_parser = parse_alpha)]
    alpha: f64,
    /// Single overall penalty; omit to fit a grid.
    #[arg(long, value_parser = parse_positive, conflicts_with = "lambda_grid")]
    lambda: Option<f64>,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 1e-4, value_parser = parse_positive)]
    em_tol: f64,
    #[arg(long, default_value_t = 200)]
    em_max_iter: usize,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum GlassoMode {
    /// One network from all subjects' stacked data.
    Pooled,
    /// One network per subject.
    Subject,
}

#[derive(Args, Debug, Serialize)]
struct GlassoArgs {
    #[command(flatten)]
    cohort: CohortArg,
    #[arg(long, value_enum, default_value_t = GlassoMode::Pooled)]
    mode: GlassoMode,
    /// Single penalty; omit to fit a grid.
    #[arg(long, value_parser = parse_positive, conflicts_with = "lambda_grid")]
    lambda: Option<f64>,
    #[command(flatten)]
    grid: GridArgs,
}

#[derive(Args, Debug, Serialize)]
struct StabilityArgs {
    #[command(flatten)]
    cohort: CohortArg,
    /// Bootstrap replicates per subject.
    #[arg(long, default_value_t = 200)]
    b: usize,
    /// Penalty randomization strength.
    #[arg(long, default_value_t = 0.25, value_parser = parse_fraction)]
    c: f64,
    /// StARS instability threshold.
    #[arg(long, default_value_t = 0.05, value_parser = parse_fraction)]
    stars_beta: f64,
    #[arg(long, default_value_t = 20)]
    stars_subsamples: usize,
    #[arg(long, default_value_t = 30)]
    stars_grid: usize,
    /// Also write population.tsv with edges whose mean frequency exceeds this.
    #[arg(long, value_parser = parse_fraction)]
    threshold: Option<f64>,
}

#[derive(Args, Debug, Serialize)]
struct CvArgs {
    #[command(flatten)]
    cohort: CohortArg,
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[arg(long, default_value_t = 0.25, value_parser = parse_alpha)]
    alpha: f64,
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long, default_value_t = 1e-4, value_parser = parse_positive)]
    em_tol: f64,
    #[arg(long, default_value_t = 200)]
    em_max_iter: usize,
}

#[derive(Args, Debug, Serialize)]
struct EvaluateArgs {
    /// Directory holding results.json.
    #[arg(long)]
    results: PathBuf,
    /// Cohort directory or manifest that lists the ground truth.
    #[arg(long)]
    truth: PathBuf,
}

struct Context {
    seed: u64,
    out_dir: PathBuf,
    rule: Rule,
}

fn config_json<T: Serialize>(args: &T) -> serde_json::Value {
    serde_json::to_value(args).unwrap_or(serde_json::Value::Null)
}

fn start_manifest<T: Serialize>(name: &str, args: &T, ctx: &Context, rule: bool) -> RunManifest {
    let mut config = config_json(args);
    if let serde_json::Value::Object(map) = &mut config {
        if rule {
            map.insert("rule".into(), config_json(&ctx.rule));
        }
    }
    RunManifest::start(name, std::env::args().collect(), config, ctx.seed)
}

fn write_cohort(ctx: &Context, truth: &SimTruth, cohort: &CohortData, sim: serde_json::Value) -> Result<()> {
    export_cohort(&ctx.out_dir, cohort, Some(truth), Some(sim))?;
    log::info!("wrote {} subjects to {}", cohort.n_subjects(), ctx.out_dir.display());
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs, ctx: &Context) -> Result<()> {
    let manifest = start_manifest("simulate", args, ctx, false);
    let cfg = SimConfig {
        p: args.p,
        n_subjects: args.subjects,
        n: args.n,
        e_ran: args.e_ran,
        tau: args.tau,
        r: args.r,
        ba_m: args.ba_m,
        seed: ctx.seed,
    };
    let (truth, cohort) = simulate(&cfg)?;
    write_cohort(ctx, &truth, &cohort, config_json(&cfg))?;
    manifest.finish(&ctx.out_dir)?;
    Ok(())
}

fn cmd_simulate_components(args: &ComponentArgs, ctx: &Context) -> Result<()> {
    let manifest = start_manifest("simulate-components", args, ctx, false);
    let truth = gen_component_cohort(args.p, args.ba_m, args.r, ctx.seed)?;
    let cohort = sample_cohort(&truth, args.n, ctx.seed)?;
    let mut sim = config_json(args);
    if let serde_json::Value::Object(map) = &mut sim {
        map.insert("seed".into(), ctx.seed.into());
        map.insert("design".into(), "components".into());
    }
    write_cohort(ctx, &truth, &cohort, sim)?;
    manifest.finish(&ctx.out_dir)?;
    Ok(())
}

fn mns_config(em_tol: f64, em_max_iter: usize, rule: Rule) -> MnsConfig {
    MnsConfig { em_tol, em_max_iter, rule, ..MnsConfig::default() }
}

fn mns_grid(cohort: &CohortData, alpha: f64, grid: &GridArgs) -> Result<Vec<AlphaLambda>> {
    alpha_lambda_grid(alpha, mns_lambda_max(cohort, alpha), grid.lambda_grid, grid.grid_depth)
}

fn mns_entry(index: usize, al: &AlphaLambda) -> ResultSetEntry {
    let (l1, l2) = al.to_penalties();
    ResultSetEntry {
        index,
        dir: set_dir_name(index),
        lambda: al.lambda,
        alpha: Some(al.alpha),
        lambda1: Some(l1),
        lambda2: Some(l2),
    }
}

/// Writes MNS fits and their index into the output directory.
fn write_mns_sets(ctx: &Context, cohort: &CohortData, grid: &[AlphaLambda], fits: &[MnsResult]) -> Result<()> {
    let mut entries = Vec::with_capacity(fits.len());
    for (k, (al, fit)) in grid.iter().zip(fits).enumerate() {
        let entry = mns_entry(k, al);
        let dir = ctx.out_dir.join(&entry.dir);
        write_network_set(&dir, &NetworkSet::from_mns(fit), cohort.nodes(), cohort.subject_ids())?;
        write_json(&dir.join("result.json"), &MnsResultDoc::new(fit, Some(al.alpha), Some(al.lambda)))?;
        if !fit.all_converged() {
            log::warn!("set {k}: some nodes hit the EM iteration limit");
        }
        entries.push(entry);
    }
    write_index(ctx, ResultKind::Mns, cohort, entries)
}

fn write_index(ctx: &Context, kind: ResultKind, cohort: &CohortData, sets: Vec<ResultSetEntry>) -> Result<()> {
    let index = ResultIndex {
        kind,
        nodes: cohort.nodes().labels().to_vec(),
        subject_ids: cohort.subject_ids().to_vec(),
        rule: ctx.rule,
        sets,
    };
    write_json(&ctx.out_dir.join(RESULTS_INDEX), &index)
}

fn load(cohort: &Path, manifest: &mut RunManifest) -> Result<CohortData> {
    let path = mns::io::resolve_manifest(cohort);
    let data = ingest_cohort(&path)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        for entry in std::fs::read_dir(dir).map_err(|e| Error::Domain(format!("{}: {e}", dir.display())))? {
            let entry = entry.map_err(|e| Error::Domain(e.to_string()))?;
            let name = entry.file_name();
            let name = name.to_string_lossy();
            if name.ends_with(".csv") || name == mns::io::COHORT_MANIFEST {
                manifest.add_inputs(&entry.path())?;
            }
        }
    } else {
        manifest.add_inputs(&path)?;
    }
    manifest.inputs.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(data)
}

fn cmd_fit(args: &FitArgs, ctx: &Context) -> Result<()> {
    let mut manifest = start_manifest("fit", args, ctx, true);
    let cohort = load(&args.cohort.cohort, &mut manifest)?;
    let grid = match args.lambda {
        Some(l) => vec![AlphaLambda::new(args.alpha, l)?],
        None => mns_grid(&cohort, args.alpha, &args.grid)?,
    };
    let penalties: Vec<(f64, f64)> = grid.iter().map(AlphaLambda::to_penalties).collect();
    let fits = fit_path(&cohort, &penalties, &mns_config(args.em_tol, args.em_max_iter, ctx.rule))?;
    create_dir(&ctx.out_dir)?;
    write_mns_sets(ctx, &cohort, &grid, &fits)?;
    manifest.finish(&ctx.out_dir)?;
    Ok(())
}

fn glasso_network(sol: &GlassoSolution) -> Result<Network> {
    let mut theta = sol.theta.matrix().clone();
    theta.fill_diagonal(0.0);
    Ok(Network { edges: sol.support(), weights: WeightedNetwork::from_matrix(&theta)? })
}

fn cmd_glasso(args: &GlassoArgs, ctx: &Context) -> Result<()> {
    let mut manifest = start_manifest("glasso", args, ctx, false);
    let cohort = load(&args.cohort.cohort, &mut manifest)?;
    let lambdas = match args.lambda {
        Some(l) => vec![l],
        None => {
            let hi = match args.mode {
                GlassoMode::Pooled => lambda_max(&sample_covariance(&cohort.stacked())?),
                GlassoMode::Subject => cohort
                    .subjects()
                    .iter()
                    .map(|x| sample_covariance(x).map(|s| lambda_max(&s)))
                    .collect::<Result<Vec<_>>>()?
                    .into_iter()
                    .fold(0.0, f64::max),
            };
            log_grid(hi, args.grid.grid_depth, args.grid.lambda_grid)
        }
    };
    let (kind, sets): (ResultKind, Vec<NetworkSet>) = match args.mode {
        GlassoMode::Pooled => (
            ResultKind::GlassoPooled,
            pooled_path_solutions(&cohort, &lambdas)?
                .iter()
                .map(|s| Ok(NetworkSet { population: Some(glasso_network(s)?), ..NetworkSet::default() }))
                .collect::<Result<_>>()?,
        ),
        GlassoMode::Subject => (
            ResultKind::GlassoSubject,
            per_subject_path_solutions(&cohort, &lambdas)?
                .iter()
                .map(|row| {
                    let nets = row.iter().map(glasso_network).collect::<Result<Vec<_>>>()?;
                    Ok(NetworkSet { subject_full: Some(nets), ..NetworkSet::default() })
                })
                .collect::<Result<_>>()?,
        ),
    };
    let mut entries = Vec::new();
    for (k, (lambda, set)) in lambdas.iter().zip(&sets).enumerate() {
        let entry = ResultSetEntry {
            index: k,
            dir: set_dir_name(k),
            lambda: *lambda,
            alpha: None,
            lambda1: None,
            lambda2: None,
        };
        write_network_set(&ctx.out_dir.join(&entry.dir), set, cohort.nodes(), cohort.subject_ids())?;
        entries.push(entry);
    }
    write_index(ctx, kind, &cohort, entries)?;
    manifest.finish(&ctx.out_dir)?;
    Ok(())
}

#[derive(Serialize)]
struct SubjectStability {
    id: String,
    stars_lambda: f64,
    stars_lambda_max: f64,
    stars_crossed: bool,
    bootstraps_used: usize,
}

#[derive(Serialize)]
struct StabilitySummary {
    config: StabilityConfig,
    subjects: Vec<SubjectStability>,
    clamped_penalties: usize,
    /// Edges whose ρ estimate was undefined or clamped into [0, 1].
    degenerate_edges: usize,
}

fn cmd_stability(args: &StabilityArgs, ctx: &Context) -> Result<()> {
    let mut manifest = start_manifest("stability", args, ctx, false);
    let cohort = load(&args.cohort.cohort, &mut manifest)?;
    let cfg = StabilityConfig {
        b: args.b,
        c: args.c,
        stars_beta: args.stars_beta,
        stars_subsamples: args.stars_subsamples,
        stars_grid: args.stars_grid,
        seed: ctx.seed,
    };
    let res = run_stability(&cohort, &cfg)?;
    let nodes = cohort.nodes();
    create_dir(&ctx.out_dir)?;
    write_text(&ctx.out_dir.join("mu_pop.tsv"), &matrix_to_tsv(&res.mu_pop, nodes))?;
    write_text(&ctx.out_dir.join("rho_pop.tsv"), &matrix_to_tsv(&res.rho_pop, nodes))?;
    write_text(&ctx.out_dir.join("rho_raw.tsv"), &matrix_to_tsv(&res.rho_raw, nodes))?;
    for (id, f) in cohort.subject_ids().iter().zip(&res.per_subject_freq) {
        write_text(&ctx.out_dir.join(format!("freq/{id}.tsv")), &matrix_to_tsv(f, nodes))?;
    }
    if let Some(t) = args.threshold {
        let edges = res.population_network(t);
        let weights = WeightedNetwork::from_matrix(&zero_diag(&res.mu_pop))?;
        mns::graph::write_edge_tsv(&ctx.out_dir.join("population.tsv"), &edges, Some(&weights), nodes)?;
    }
    let summary = StabilitySummary {
        config: cfg,
        subjects: cohort
            .subject_ids()
            .iter()
            .zip(&res.stars)
            .zip(&res.bootstraps_used)
            .map(|((id, s), &used)| SubjectStability {
                id: id.clone(),
                stars_lambda: s.lambda,
                stars_lambda_max: s.lambda_max,
                stars_crossed: s.crossed,
                bootstraps_used: used,
            })
            .collect(),
        clamped_penalties: res.clamped_penalties,
        degenerate_edges: res.degenerate.len(),
    };
    write_json(&ctx.out_dir.join("stability.json"), &summary)?;
    write_index(ctx, ResultKind::Stability, &cohort, Vec::new())?;
    manifest.finish(&ctx.out_dir)?;
    Ok(())
}

fn zero_diag(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    out.fill_diagonal(0.0);
    out
}

fn cmd_cv(args: &CvArgs, ctx: &Context) -> Result<()> {
    let mut manifest = start_manifest("cv", args, ctx, true);
    let cohort = load(&args.cohort.cohort, &mut manifest)?;
    let grid = mns_grid(&cohort, args.alpha, &args.grid)?;
    let base = mns_config(args.em_tol, args.em_max_iter, ctx.rule);
    let report = cross_validate(&cohort, &grid, args.folds, &base)?;
    create_dir(&ctx.out_dir)?;
    write_json(&ctx.out_dir.join("cv.json"), &report)?;
    let mut tsv = String::from("index\talpha\tlambda\tmse\n");
    for (k, (al, mse)) in report.grid.iter().zip(&report.mse).enumerate() {
        tsv.push_str(&format!("{k}\t{}\t{}\t{mse}\n", al.alpha, al.lambda));
    }
    write_text(&ctx.out_dir.join("cv.tsv"), &tsv)?;
    let best = report.best;
    let fit = fit_path(&cohort, &[best.to_penalties()], &base)?;
    write_mns_sets(ctx, &cohort, &[best], &fit)?;
    manifest.finish(&ctx.out_dir)?;
    Ok(())
}

fn cmd_evaluate(args: &EvaluateArgs, ctx: &Context) -> Result<()> {
    let mut manifest = start_manifest("evaluate", args, ctx, false);
    let index: ResultIndex = mns::io::read_json(&args.results.join(RESULTS_INDEX))?;
    let nodes = NodeSet::new(index.nodes.clone())?;
    let truth_manifest = mns::io::resolve_manifest(&args.truth);
    let truth = read_truth(&truth_manifest, &nodes)?;
    manifest.add_inputs(&args.results.join(RESULTS_INDEX))?;
    manifest.add_inputs(&truth_manifest)?;
    let report = evaluate_results(&args.results, &truth)?;
    create_dir(&ctx.out_dir)?;
    for net in &report.networks {
        write_text(&ctx.out_dir.join(format!("roc_{}.tsv", net.network)), &net.roc.to_tsv())?;
        if !net.rates.is_empty() {
            let mut tsv = String::from("index\tlambda\ttpr\tfpr\n");
            for r in &net.rates {
                tsv.push_str(&format!("{}\t{}\t{}\t{}\n", r.index, r.lambda, r.tpr, r.fpr));
            }
            write_text(&ctx.out_dir.join(format!("rates_{}.tsv", net.network)), &tsv)?;
        }
        println!("{}\tAUC\t{:.4}", net.network, net.auc);
    }
    write_json(&ctx.out_dir.join("evaluation.json"), &report)?;
    manifest.finish(&ctx.out_dir)?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Error::Domain(format!("cannot start {} threads: {e}", cli.threads)))?;
    }
    let ctx = Context { seed: cli.seed, out_dir: cli.out_dir, rule: cli.rule };
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(a, &ctx),
        Command::SimulateComponents(a) => cmd_simulate_components(a, &ctx),
        Command::Fit(a) => cmd_fit(a, &ctx),
        Command::Glasso(a) => cmd_glasso(a, &ctx),
        Command::Stability(a) => cmd_stability(a, &ctx),
        Command::Cv(a) => cmd_cv(a, &ctx),
        Command::Evaluate(a) => cmd_evaluate(a, &ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        // clap exits 0 for --help/--version and 2 for usage errors.
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
