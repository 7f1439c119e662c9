use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};

use tensile_core::experiment::{
    euclidean_cells, hyperbolic_cells, metric_for, run_rl, run_supervised, select_seed, similarity_suite,
    subsampling_ablation, summarize, write_csv, Cell, CellSummary, ExperimentConfig, NamedPolicy, Space,
};
use tensile_core::features::FeatureSchema;
use tensile_core::policy::{write_pair_details, write_reports, Fallback, Policy};
use tensile_core::ranking::RankingMetric;
use tensile_core::symbolic::{fit_two_plane, surface_export, ProbeGrid, TwoLinearParams};
use tensile_core::{Error, QModel};

#[derive(Parser, Debug)]
#[command(name = "tensile", version, about = "Local routing policies learned on one seed graph")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML experiment config; missing keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set N_train=64 --set phi=all`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, short, global = true)]
    out: Option<PathBuf>,
    /// Graphs per evaluation cell (overrides `graphs_per_cell`).
    #[arg(long, global = true)]
    graphs_per_cell: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the seed graph, or the graphs of the given cells.
    GenGraph {
        /// Cells as `NxDENSITY`, comma separated (e.g. `27x2,64x5`).
        #[arg(long, value_delimiter = ',')]
        cells: Vec<String>,
    },
    /// Ranking similarity of a local metric against the optimal Q-values.
    AnalyzeSim {
        #[arg(long, value_enum, default_value_t = MetricArg::M1)]
        metric: MetricArg,
        /// Number of graphs (defaults to `graphs_per_cell`).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train a neighbor-scoring network on the seed graph.
    Train(TrainArgs),
    /// Same as `train --mode rl`.
    TrainRl {
        #[arg(long, value_enum, default_value_t = FeaturesArg::DistNs)]
        features: FeaturesArg,
        #[arg(long)]
        model_out: Option<PathBuf>,
    },
    /// Zero-shot evaluation of policies on a suite of test graphs.
    Eval(EvalArgs),
    /// Fit the two-linear-action form to a model and write its surface.
    ExportPolicy {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 3.0)]
        d_v: f64,
        #[arg(long, default_value_t = 1.0)]
        ns_v: f64,
    },
    /// Scores of a model (or the reference two-linear command) over an `ns_u x d_u` grid.
    Surface {
        #[arg(long, conflicts_with = "published", required_unless_present = "published")]
        model: Option<PathBuf>,
        #[arg(long)]
        published: bool,
        #[arg(long, default_value_t = 3.0)]
        d_v: f64,
        #[arg(long, default_value_t = 1.0)]
        ns_v: f64,
    },
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long, value_enum, default_value_t = ModeArg::Supervised)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = FeaturesArg::DistNs)]
    features: FeaturesArg,
    /// Model path (defaults to `<out>/model-<mode>-<features>.json`).
    #[arg(long)]
    model_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Policies: `gf`, `sr-ns`, `two-linear`, `oracle`, or `NAME=MODEL.json`.
    #[arg(long, value_delimiter = ',', default_value = "gf,sr-ns,two-linear")]
    policies: Vec<String>,
    #[arg(long, value_enum, default_value_t = SuiteArg::Euclidean)]
    suite: SuiteArg,
    /// Restrict to these cells (`NxDENSITY`, comma separated).
    #[arg(long, value_delimiter = ',')]
    cells: Vec<String>,
    #[arg(long, value_enum, default_value_t = FallbackArg::None)]
    fallback: FallbackArg,
    /// Also write one row per (O, D) pair.
    #[arg(long)]
    pairs: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MetricArg {
    M1,
    M2,
}

#[derive(Clone, Copy, Debug, PartialEq, ValueEnum)]
enum ModeArg {
    Supervised,
    Rl,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FeaturesArg {
    Dist,
    #[value(name = "dist-ns", alias = "dist+ns")]
    DistNs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SuiteArg {
    Euclidean,
    Hyperbolic,
    Ablation,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FallbackArg {
    None,
    Dfs,
}

impl FeaturesArg {
    fn schema(self) -> FeatureSchema {
        match self {
            FeaturesArg::Dist => FeatureSchema::DistOnly,
            FeaturesArg::DistNs => FeatureSchema::DistAndStretch,
        }
    }
}

fn load_config(common: &Common) -> tensile_core::Result<ExperimentConfig> {
    let mut table = match &common.config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            toml::Table::try_from(&cfg).map_err(|e| Error::Config(e.to_string()))?
        }
        None => toml::Table::try_from(ExperimentConfig::default()).map_err(|e| Error::Config(e.to_string()))?,
    };
    for item in &common.overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{item}` is not KEY=VALUE")))?;
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        table.insert(key.trim().to_string(), value);
    }
    if let Some(out) = &common.out {
        table.insert("output_dir".into(), toml::Value::String(out.display().to_string()));
    }
    if let Some(k) = common.graphs_per_cell {
        table.insert("graphs_per_cell".into(), toml::Value::Integer(k as i64));
    }
    let text = toml::to_string(&table).map_err(|e| Error::Config(e.to_string()))?;
    ExperimentConfig::from_toml(&text)
}

fn parse_cells(space: Space, items: &[String]) -> tensile_core::Result<Vec<Cell>> {
    items
        .iter()
        .map(|s| {
            let bad = || Error::Config(format!("cell `{s}` is not NxDENSITY"));
            let (n, d) = s.split_once('x').ok_or_else(bad)?;
            let n: usize = n.trim().parse().map_err(|_| bad())?;
            let d: f64 = d.trim().parse().map_err(|_| bad())?;
            Ok(match space {
                Space::Euclidean => Cell::euclidean(n, d),
                Space::Hyperbolic => Cell::hyperbolic(n, d),
            })
        })
        .collect()
}

fn parse_policy(spec: &str) -> tensile_core::Result<NamedPolicy> {
    Ok(match spec {
        "gf" => NamedPolicy::new("gf", Policy::GreedyForwarding),
        "sr-ns" => NamedPolicy::new("sr-ns", Policy::SrNodeStretch),
        "two-linear" => NamedPolicy::new("two-linear", Policy::TwoLinearAction(TwoLinearParams::published())),
        other => {
            let (name, path) = other
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("unknown policy `{other}`")))?;
            NamedPolicy::model(name, QModel::load(path)?)
        }
    })
}

fn create_dir(path: &Path) -> tensile_core::Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

/// Effective config with the overridden keys listed on top.
fn write_header(cfg: &ExperimentConfig, dir: &Path) -> tensile_core::Result<()> {
    create_dir(dir)?;
    let mut text = String::new();
    for line in cfg.overrides() {
        text.push_str(&format!("# override: {line}\n"));
    }
    text.push_str(&cfg.to_toml()?);
    let path = dir.join("config.toml");
    fs::write(&path, text).map_err(|e| Error::Io { path, source: e })
}

fn sidecar_log(dir: &Path, message: &str) {
    let stamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    if let Ok(mut f) = fs::OpenOptions::new().create(true).append(true).open(dir.join("run.log")) {
        let _ = writeln!(f, "{stamp} {message}");
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> tensile_core::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn write_table(path: &Path, rows: &[CellSummary]) -> tensile_core::Result<()> {
    let mut policies: Vec<&str> = Vec::new();
    for r in rows {
        if !policies.contains(&r.policy.as_str()) {
            policies.push(&r.policy);
        }
    }
    let mut cells: Vec<(&str, usize, f64)> = Vec::new();
    for r in rows {
        if !cells.iter().any(|c| c.0 == r.cell) {
            cells.push((&r.cell, r.n, r.density));
        }
    }
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["cell".to_string(), "n".into(), "density".into()];
    header.extend(policies.iter().map(|p| p.to_string()));
    w.write_record(&header)?;
    for (cell, n, density) in cells {
        let mut rec = vec![cell.to_string(), n.to_string(), density.to_string()];
        for p in &policies {
            let acc = rows.iter().find(|r| r.cell == cell && r.policy == *p).map(|r| r.accuracy);
            rec.push(acc.map_or(String::new(), |a| format!("{a:.6}")));
        }
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

fn gen_graph(cfg: &ExperimentConfig, cells: &[String]) -> tensile_core::Result<()> {
    let dir = cfg.output_dir.join("graphs");
    create_dir(&dir)?;
    if cells.is_empty() {
        let seed = select_seed(cfg, &metric_for(cfg.schema()))?;
        seed.graph.save(dir.join("seed.json"))?;
        println!("wrote {}", dir.join("seed.json").display());
        return Ok(());
    }
    for cell in parse_cells(cfg.space, cells)? {
        let sub = dir.join(cell.label());
        create_dir(&sub)?;
        for (i, g) in cell.graphs(cfg, "eval", cfg.graphs_per_cell)?.iter().enumerate() {
            g.save(sub.join(format!("graph-{i:03}.json")))?;
        }
        println!("wrote {} graphs to {}", cfg.graphs_per_cell, sub.display());
    }
    Ok(())
}

fn analyze_sim(cfg: &ExperimentConfig, metric: MetricArg, count: Option<usize>) -> tensile_core::Result<()> {
    let metric = match metric {
        MetricArg::M1 => RankingMetric::M1,
        MetricArg::M2 => RankingMetric::M2,
    };
    let count = count.unwrap_or(cfg.graphs_per_cell);
    let rows = similarity_suite(cfg, &metric, count)?;
    let dir = &cfg.output_dir;
    let mut w = csv::Writer::from_path(dir.join(format!("sim-{}.csv", metric.name())))?;
    w.write_record(["graph_seed", "n", "density", "metric", "sim_g", "points", "fraction_ge_0_9"])?;
    let mut points = csv::Writer::from_path(dir.join(format!("sim-points-{}.csv", metric.name())))?;
    points.write_record(["graph_seed", "origin", "dest", "v", "sim"])?;
    for (spec, s) in &rows {
        w.write_record([
            spec.seed().to_string(),
            spec.n().to_string(),
            spec.density_value().to_string(),
            metric.name().to_string(),
            format!("{:.6}", s.mean),
            s.points.len().to_string(),
            format!("{:.6}", s.fraction_at_least(0.9)),
        ])?;
        for p in &s.points {
            points.write_record([
                spec.seed().to_string(),
                p.origin.to_string(),
                p.dest.to_string(),
                p.v.to_string(),
                format!("{:.6}", p.sim),
            ])?;
        }
        println!("graph {:>20}  SIM_G = {:.4}", spec.seed(), s.mean);
    }
    w.flush().map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    points.flush().map_err(|e| Error::Io { path: dir.clone(), source: e })
}

fn train(cfg: &ExperimentConfig, mode: ModeArg, features: FeaturesArg, model_out: Option<PathBuf>) -> tensile_core::Result<()> {
    let cfg = cfg.with_schema(features.schema());
    let dir = &cfg.output_dir;
    let tag = format!(
        "{}-{}",
        if mode == ModeArg::Rl { "rl" } else { "supervised" },
        features.schema()
    );
    let outcome = match mode {
        ModeArg::Supervised => run_supervised(&cfg)?,
        ModeArg::Rl => run_rl(&cfg)?,
    };
    let model_path = model_out.unwrap_or_else(|| dir.join(format!("model-{tag}.json")));
    outcome.model.save(&model_path)?;
    if let Some(samples) = &outcome.samples {
        samples.write_csv(dir.join(format!("samples-{tag}.csv")))?;
    }
    if !outcome.loss_trace.is_empty() {
        let mut w = csv::Writer::from_path(dir.join(format!("loss-{tag}.csv")))?;
        w.write_record(["step", "loss"])?;
        for (i, l) in outcome.loss_trace.iter().enumerate() {
            w.write_record([i.to_string(), l.to_string()])?;
        }
        w.flush().map_err(|e| Error::Io { path: dir.clone(), source: e })?;
    }
    if !outcome.episodes.is_empty() {
        tensile_core::rl::write_episode_metrics(dir.join(format!("episodes-{tag}.csv")), &outcome.episodes)?;
    }
    println!("wrote {}", model_path.display());
    Ok(())
}

fn eval(cfg: &ExperimentConfig, args: &EvalArgs) -> tensile_core::Result<()> {
    let fallback = match args.fallback {
        FallbackArg::None => Fallback::None,
        FallbackArg::Dfs => Fallback::DfsInEllipse,
    };
    let dir = &cfg.output_dir;
    let space = match args.suite {
        SuiteArg::Hyperbolic => Space::Hyperbolic,
        _ => Space::Euclidean,
    };
    let cells = if args.cells.is_empty() {
        match space {
            Space::Euclidean => euclidean_cells(cfg),
            Space::Hyperbolic => hyperbolic_cells(cfg),
        }
    } else {
        parse_cells(space, &args.cells)?
    };
    if let SuiteArg::Ablation = args.suite {
        let rows = subsampling_ablation(cfg, &cells, cfg.graphs_per_cell)?;
        write_csv(dir.join("ablation.csv"), &rows)?;
        for r in &rows {
            println!("{:<24} phi={:<4} samples={:<5} accuracy={:.4}", r.cell, r.phi, r.samples, r.accuracy);
        }
        return Ok(());
    }
    let mut policies = Vec::with_capacity(args.policies.len());
    for spec in &args.policies {
        if spec == "oracle" {
            policies.push(None);
        } else {
            policies.push(Some(parse_policy(spec)?));
        }
    }
    let mut reports = Vec::new();
    let mut summary = Vec::new();
    for cell in &cells {
        let mut cell_reports = Vec::new();
        let named: Vec<NamedPolicy> = policies.iter().flatten().cloned().collect();
        if !named.is_empty() {
            cell_reports.extend(tensile_core::experiment::eval_cell(cfg, cell, &named, fallback, cfg.graphs_per_cell)?);
        }
        if policies.iter().any(Option::is_none) {
            cell_reports.extend(tensile_core::experiment::eval_oracle_cell(cfg, cell, fallback, cfg.graphs_per_cell)?);
        }
        let rows = summarize(cell, &cell_reports);
        for r in &rows {
            println!("{:<24} {:<16} accuracy={:.4}", r.cell, r.policy, r.accuracy);
        }
        summary.extend(rows);
        reports.extend(cell_reports);
    }
    write_reports(dir.join("reports.csv"), &reports)?;
    if args.pairs {
        write_pair_details(dir.join("pairs.csv"), &reports)?;
    }
    write_csv(dir.join("summary.csv"), &summary)?;
    write_table(&dir.join("accuracy-table.csv"), &summary)
}

fn export_policy(cfg: &ExperimentConfig, model: &Path, d_v: f64, ns_v: f64) -> tensile_core::Result<()> {
    let model = QModel::load(model)?;
    let grid = ProbeGrid::default();
    let fit = fit_two_plane(&model, &grid)?;
    let dir = &cfg.output_dir;
    write_json(&dir.join("two-linear.json"), &fit)?;
    surface_export(&model, d_v, ns_v, &grid.ns_u, &grid.d_u).write_csv(dir.join("surface.csv"))?;
    let p = &fit.params;
    println!("guard   {:?}", p.guard);
    println!("branch1 {:?}", p.branch1);
    println!("branch2 {:?}", p.branch2);
    println!("max residual {:.4e}", fit.max_residual);
    Ok(())
}

fn surface(cfg: &ExperimentConfig, model: Option<&Path>, d_v: f64, ns_v: f64) -> tensile_core::Result<()> {
    let grid = ProbeGrid::default();
    let path = cfg.output_dir.join("surface.csv");
    match model {
        Some(m) => surface_export(&QModel::load(m)?, d_v, ns_v, &grid.ns_u, &grid.d_u).write_csv(&path)?,
        None => surface_export(&TwoLinearParams::published(), d_v, ns_v, &grid.ns_u, &grid.d_u).write_csv(&path)?,
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> tensile_core::Result<()> {
    let cfg = load_config(&cli.common)?;
    let dir = cfg.output_dir.clone();
    write_header(&cfg, &dir)?;
    let started = Instant::now();
    sidecar_log(&dir, &format!("start {:?}", cli.command));
    match &cli.command {
        Command::GenGraph { cells } => gen_graph(&cfg, cells)?,
        Command::AnalyzeSim { metric, count } => analyze_sim(&cfg, *metric, *count)?,
        Command::Train(a) => train(&cfg, a.mode, a.features, a.model_out.clone())?,
        Command::TrainRl { features, model_out } => train(&cfg, ModeArg::Rl, *features, model_out.clone())?,
        Command::Eval(a) => eval(&cfg, a)?,
        Command::ExportPolicy { model, d_v, ns_v } => export_policy(&cfg, model, *d_v, *ns_v)?,
        Command::Surface { model, d_v, ns_v, .. } => surface(&cfg, model.as_deref(), *d_v, *ns_v)?,
    }
    sidecar_log(&dir, &format!("done in {:.1}s", started.elapsed().as_secs_f64()));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
