//! `relcomp`: ingest a relational database, train completion models, and
//! answer aggregate queries over the completed data.
//!
//! A workspace directory holds the ingested data (`schema.json`,
//! `dataset.bin`), the trained catalog (`catalog.bin`) and the settings it
//! was trained with (`manifest.json`). Completed joins are cached under
//! `$RELCOMP_CACHE`, or `<workspace>/cache` when the variable is unset.
//!
//! Exit codes: 1 usage or configuration, 2 validation, 3 training,
//! 4 execution.

use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand, ValueEnum};
use relcomp_core::completion::{offline_complete, project_cached, CompletionConfig, Completer};
use relcomp_core::evalharness::{
    bias_experiment, biased_removal, generate_synthetic, run_workload, RemovalSpec, SyntheticSpec, WorkloadConfig,
};
use relcomp_core::ingest::{compute_tuple_factors, ingest_csv, load_artifact, persist_artifact, Dataset};
use relcomp_core::planner::{plan_models, train_all, BiasHint, ModelCatalog, ModelKind, PlannerConfig};
use relcomp_core::query::{execute, parse_query, ExecuteOptions, QueryResult};
use relcomp_core::schema::{load_annotation, AnnotatedSchema};
use serde::{Deserialize, Serialize};

const SCHEMA_FILE: &str = "schema.json";
const DATASET_FILE: &str = "dataset.bin";
const CATALOG_FILE: &str = "catalog.bin";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Parser)]
#[command(name = "relcomp", version, about = "Completion of incomplete relational databases")]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,

    /// Root directory for cached completed joins.
    #[arg(long, global = true, env = "RELCOMP_CACHE")]
    cache_root: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Load CSV files described by an annotation, validate them and store a
    /// workspace.
    Ingest {
        /// Annotation file (JSON).
        schema: PathBuf,
        /// Directory with one `<table>.csv` per table.
        data: PathBuf,
        /// Workspace directory to create or overwrite.
        workspace: PathBuf,
    },
    /// Train every completion model of the workspace and store the catalog.
    Train {
        workspace: PathBuf,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        /// Hidden width of the networks.
        #[arg(long, default_value_t = 128)]
        width: usize,
        /// Bins per continuous attribute.
        #[arg(long, default_value_t = 64)]
        bins: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also train schema-structured models where fan-out evidence exists.
        #[arg(long, value_enum, default_value = "on")]
        ssar: Switch,
        /// Maximum held-out loss relative to the marginal baseline for a
        /// model to be used.
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Answer an aggregate query on the completed database.
    Query {
        workspace: PathBuf,
        /// SQL text; omit with `--repl`.
        sql: Option<String>,
        /// Read one query per line from standard input.
        #[arg(long, conflicts_with = "sql")]
        repl: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Confidence level of the reported intervals, e.g. 0.95.
        #[arg(long)]
        confidence: Option<f64>,
        /// Suspected bias, `table.attr[=value]:over|under`.
        #[arg(long)]
        suspect: Option<String>,
        /// Choose among plans by scoring them on derived removal scenarios.
        #[arg(long)]
        advanced: bool,
    },
    /// Materialize completed joins into the cache.
    Complete {
        workspace: PathBuf,
        /// Every join of a complete with an incomplete table.
        #[arg(long, conflicts_with = "path", required_unless_present = "path")]
        offline: bool,
        /// Comma-separated tables of one join, e.g. `a,b,c`.
        #[arg(long, value_delimiter = ',')]
        path: Option<Vec<String>>,
        /// Also write the completed join of `--path` as CSV.
        #[arg(long, requires = "path")]
        csv: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a grid of synthetic removal-and-completion experiments.
    Bench {
        /// Bench description (JSON).
        spec: PathBuf,
        /// Write the grid CSV here instead of standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write per-query workload results here.
        #[arg(long)]
        workload_out: Option<PathBuf>,
    },
}

/// Training settings stored next to the catalog so queries plan with them.
#[derive(Serialize, Deserialize)]
struct Manifest {
    dataset_fingerprint: String,
    catalog_fingerprint: Option<String>,
    planner: PlannerConfig,
}

/// A command failure with its exit status.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl From<relcomp_core::Error> for Failure {
    fn from(e: relcomp_core::Error) -> Self {
        Failure { code: e.exit_code() as u8, error: e.into() }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(error: anyhow::Error) -> Self {
        let code = error.downcast_ref::<relcomp_core::Error>().map_or(4, |e| e.exit_code() as u8);
        Failure { code, error }
    }
}

fn usage(msg: impl Into<String>) -> Failure {
    Failure { code: 1, error: anyhow!(msg.into()) }
}

/// Training failures exit with 3 whatever their kind.
fn training(e: relcomp_core::Error) -> Failure {
    let code = match e.exit_code() {
        1 => 1,
        _ => 3,
    };
    Failure { code, error: e.into() }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn run(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Ingest { schema, data, workspace } => cmd_ingest(cli, schema, data, workspace),
        Command::Train { workspace, epochs, width, bins, seed, ssar, threshold } => {
            let mut planner = PlannerConfig { ssar: matches!(ssar, Switch::On), ..Default::default() };
            planner.train.fit.epochs = *epochs;
            planner.train.hidden = *width;
            planner.train.bins = *bins;
            planner.train.fit.seed = *seed;
            if let Some(t) = threshold {
                planner.threshold = *t;
            }
            if *epochs == 0 || *width == 0 || *bins < 2 {
                return Err(usage("epochs and width must be positive and bins at least 2"));
            }
            cmd_train(cli, workspace, planner)
        }
        Command::Query { workspace, sql, repl, seed, confidence, suspect, advanced } => {
            if let Some(l) = confidence {
                if !(*l > 0.0 && *l < 1.0) {
                    return Err(usage("--confidence must lie strictly between 0 and 1"));
                }
            }
            let hint = suspect
                .as_deref()
                .map(|s| s.parse::<BiasHint>())
                .transpose()
                .map_err(|e| usage(format!("--suspect: {e}")))?;
            let ws = Workspace::open(workspace)?;
            let options = ExecuteOptions {
                seed: *seed,
                level: *confidence,
                hint,
                advanced: *advanced,
                cache_root: Some(cache_root(cli, workspace)),
                planner: ws.planner.clone(),
                completion: CompletionConfig::default(),
            };
            match (sql, repl) {
                (Some(sql), false) => {
                    let result = answer(&ws, sql, &options)?;
                    emit_result(cli, &result)
                }
                (None, true) => cmd_repl(cli, &ws, &options),
                _ => Err(usage("give a query or --repl")),
            }
        }
        Command::Complete { workspace, offline: _, path, csv, seed } => {
            cmd_complete(cli, workspace, path.as_deref(), csv.as_deref(), *seed)
        }
        Command::Bench { spec, out, workload_out } => cmd_bench(cli, spec, out.as_deref(), workload_out.as_deref()),
    }
}

fn cache_root(cli: &Cli, workspace: &Path) -> PathBuf {
    cli.cache_root.clone().unwrap_or_else(|| workspace.join("cache"))
}

fn print_json(value: &impl Serialize) -> Outcome {
    let text = serde_json::to_string_pretty(value).context("serializing output")?;
    println!("{text}");
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Outcome {
    std::fs::write(path, bytes).map_err(|e| relcomp_core::Error::io(path, e))?;
    Ok(())
}

/// The loaded contents of a workspace directory.
struct Workspace {
    schema: AnnotatedSchema,
    dataset: Dataset,
    catalog: ModelCatalog,
    planner: PlannerConfig,
}

impl Workspace {
    fn open(dir: &Path) -> std::result::Result<Self, Failure> {
        let schema_path = dir.join(SCHEMA_FILE);
        if !schema_path.exists() {
            return Err(usage(format!("{} is not a workspace; run `relcomp ingest` first", dir.display())));
        }
        let text = std::fs::read_to_string(&schema_path).map_err(|e| relcomp_core::Error::io(&schema_path, e))?;
        let schema: AnnotatedSchema = serde_json::from_str(&text).map_err(relcomp_core::Error::from)?;
        let (dataset, _): (Dataset, _) = load_artifact(&dir.join(DATASET_FILE), None)?;
        let manifest = read_manifest(dir)?;
        if manifest.dataset_fingerprint != dataset.fingerprint() {
            return Err(relcomp_core::Error::CorruptArtifact("dataset does not match the manifest".into()).into());
        }
        let catalog_path = dir.join(CATALOG_FILE);
        let catalog = if catalog_path.exists() {
            ModelCatalog::load(&catalog_path, None)?
        } else {
            ModelCatalog::default()
        };
        Ok(Workspace { schema, dataset, catalog, planner: manifest.planner })
    }
}

fn read_manifest(dir: &Path) -> std::result::Result<Manifest, Failure> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| relcomp_core::Error::io(&path, e))?;
    Ok(serde_json::from_str(&text).map_err(relcomp_core::Error::from)?)
}

fn write_manifest(dir: &Path, manifest: &Manifest) -> Outcome {
    let text = serde_json::to_string_pretty(manifest).context("serializing manifest")?;
    write_file(&dir.join(MANIFEST_FILE), text.as_bytes())
}

#[derive(Serialize)]
struct IngestReport {
    dataset_fingerprint: String,
    tables: Vec<TableReport>,
    incomplete_tables: Vec<String>,
}

#[derive(Serialize)]
struct TableReport {
    name: String,
    rows: usize,
}

fn cmd_ingest(cli: &Cli, schema_path: &Path, data: &Path, workspace: &Path) -> Outcome {
    let schema = load_annotation(schema_path)?;
    let raw = ingest_csv(&schema, data)?;
    raw.validate(&schema)?;
    let dataset = compute_tuple_factors(&raw, &schema)?;
    std::fs::create_dir_all(workspace).map_err(|e| relcomp_core::Error::io(workspace, e))?;
    let fingerprint = dataset.fingerprint();
    let schema_text = serde_json::to_string_pretty(&schema).context("serializing schema")?;
    write_file(&workspace.join(SCHEMA_FILE), schema_text.as_bytes())?;
    persist_artifact(&workspace.join(DATASET_FILE), &fingerprint, &dataset)?;
    // A new dataset invalidates any earlier catalog.
    let stale = workspace.join(CATALOG_FILE);
    if stale.exists() {
        std::fs::remove_file(&stale).map_err(|e| relcomp_core::Error::io(&stale, e))?;
    }
    write_manifest(
        workspace,
        &Manifest { dataset_fingerprint: fingerprint.clone(), catalog_fingerprint: None, planner: PlannerConfig::default() },
    )?;
    let report = IngestReport {
        dataset_fingerprint: fingerprint,
        tables: dataset.tables.values().map(|t| TableReport { name: t.name.clone(), rows: t.n_rows() }).collect(),
        incomplete_tables: schema.incomplete_tables(),
    };
    if cli.json {
        return print_json(&report);
    }
    for t in &report.tables {
        println!("{:<24} {:>10} rows", t.name, t.rows);
    }
    if !report.incomplete_tables.is_empty() {
        println!("incomplete: {}", report.incomplete_tables.join(", "));
    }
    println!("fingerprint {}", report.dataset_fingerprint);
    Ok(())
}

#[derive(Serialize)]
struct TrainReport {
    catalog_fingerprint: String,
    models: Vec<ModelReport>,
}

#[derive(Serialize)]
struct ModelReport {
    model: String,
    /// Held-out loss over the marginal baseline, per target table.
    loss_ratios: Vec<(String, f64)>,
    admissible: bool,
}

fn cmd_train(cli: &Cli, workspace: &Path, planner: PlannerConfig) -> Outcome {
    let ws = Workspace::open(workspace)?;
    let specs = plan_models(&ws.schema);
    let catalog = train_all(&ws.dataset, &ws.schema, &specs, &planner).map_err(training)?;
    catalog.persist(&workspace.join(CATALOG_FILE))?;
    let fingerprint = catalog.fingerprint();
    write_manifest(
        workspace,
        &Manifest {
            dataset_fingerprint: ws.dataset.fingerprint(),
            catalog_fingerprint: Some(fingerprint.clone()),
            planner: planner.clone(),
        },
    )?;
    let models = catalog
        .entries
        .iter()
        .map(|e| {
            let loss_ratios: Vec<(String, f64)> = e.targets.iter().map(|t| (t.clone(), e.loss_ratio(t))).collect();
            let admissible = loss_ratios.iter().any(|(_, r)| *r <= planner.threshold);
            ModelReport { model: e.key.to_string(), loss_ratios, admissible }
        })
        .collect();
    let report = TrainReport { catalog_fingerprint: fingerprint, models };
    if cli.json {
        return print_json(&report);
    }
    for m in &report.models {
        let ratios: Vec<String> = m.loss_ratios.iter().map(|(t, r)| format!("{t}={r:.3}")).collect();
        let mark = if m.admissible { "" } else { "  (rejected)" };
        println!("{:<32} {}{mark}", m.model, ratios.join(" "));
    }
    println!("fingerprint {}", report.catalog_fingerprint);
    Ok(())
}

fn answer(ws: &Workspace, sql: &str, options: &ExecuteOptions) -> std::result::Result<QueryResult, Failure> {
    let q = parse_query(sql, &ws.schema)?;
    Ok(execute(&q, &ws.dataset, &ws.schema, &ws.catalog, options)?)
}

fn emit_result(cli: &Cli, result: &QueryResult) -> Outcome {
    if cli.json {
        return print_json(result);
    }
    print!("{}", result.render());
    if let Some(p) = &result.plan {
        println!("plan: {p}");
    }
    Ok(())
}

/// One query per line until end of input or `\q`. A failing query reports
/// its error and the loop goes on.
fn cmd_repl(cli: &Cli, ws: &Workspace, options: &ExecuteOptions) -> Outcome {
    let stdin = std::io::stdin();
    let interactive = !cli.json;
    loop {
        if interactive {
            print!("relcomp> ");
            std::io::stdout().flush().context("writing prompt")?;
        }
        let mut line = String::new();
        let n = stdin.lock().read_line(&mut line).context("reading standard input")?;
        let sql = line.trim().trim_end_matches(';').trim();
        if n == 0 || sql == "\\q" {
            if interactive && n == 0 {
                println!();
            }
            return Ok(());
        }
        if sql.is_empty() {
            continue;
        }
        match answer(ws, sql, options) {
            Ok(r) => emit_result(cli, &r)?,
            Err(f) if cli.json => print_json(&serde_json::json!({ "error": format!("{:#}", f.error) }))?,
            Err(f) => println!("error: {:#}", f.error),
        }
    }
}

fn cmd_complete(cli: &Cli, workspace: &Path, path: Option<&[String]>, csv: Option<&Path>, seed: u64) -> Outcome {
    let ws = Workspace::open(workspace)?;
    let root = cache_root(cli, workspace);
    let completer =
        Completer::new(&ws.dataset, &ws.schema, &ws.catalog, CompletionConfig { seed, ..Default::default() })?;
    let paths: Vec<Vec<String>> = path.map(|p| vec![p.to_vec()]).unwrap_or_default();
    let entries = offline_complete(&completer, &root, &paths, ws.planner.threshold)?;
    if let (Some(out), Some(tables)) = (csv, path) {
        let join = project_cached(&completer, &root, tables)?
            .ok_or_else(|| relcomp_core::Error::Completion("completed join missing from the cache".into()))?;
        let mut buf = Vec::new();
        join.write_csv(&mut buf)?;
        write_file(out, &buf)?;
    }
    if cli.json {
        return print_json(&entries);
    }
    if entries.is_empty() {
        println!("nothing to complete: every table is complete");
    }
    for e in &entries {
        println!("{:<32} {:>10} rows  {}", e.tables.join(","), e.rows, e.dir.display());
    }
    Ok(())
}

/// A grid of experiments over the synthetic two-table database. Every
/// combination of the listed values runs once per seed.
#[derive(Deserialize)]
#[serde(default, deny_unknown_fields)]
struct BenchSpec {
    data: SyntheticSpec,
    removal: RemovalSpec,
    grid: Grid,
    seeds: u64,
    /// Restrict completion to one model kind.
    kind: Option<ModelKind>,
    threshold: Option<f64>,
    epochs: Option<usize>,
    width: Option<usize>,
    ssar: Option<bool>,
    /// Queries answered on every grid point.
    workload: Vec<String>,
}

impl Default for BenchSpec {
    fn default() -> Self {
        BenchSpec {
            data: SyntheticSpec::default(),
            removal: RemovalSpec::default(),
            grid: Grid::default(),
            seeds: 3,
            kind: None,
            threshold: None,
            epochs: None,
            width: None,
            ssar: None,
            workload: Vec::new(),
        }
    }
}

/// Values swept per knob; an empty list keeps the base value.
#[derive(Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Grid {
    predictability: Vec<f64>,
    skew: Vec<f64>,
    fanout_predictability: Vec<f64>,
    removal_correlation: Vec<f64>,
}

#[derive(Serialize)]
struct BenchRow {
    predictability: f64,
    skew: f64,
    fanout_predictability: f64,
    removal_correlation: f64,
    seed: u64,
    admissible: bool,
    loss_ratio: Option<f64>,
    truth: f64,
    incomplete: f64,
    completed: Option<f64>,
    bias_reduction: Option<f64>,
    cardinality_correction: Option<f64>,
    plan: Option<String>,
}

#[derive(Serialize)]
struct WorkloadRow {
    predictability: f64,
    skew: f64,
    fanout_predictability: f64,
    removal_correlation: f64,
    seed: u64,
    query: String,
    truth: Option<f64>,
    incomplete: Option<f64>,
    completed: Option<f64>,
    reduction: Option<f64>,
}

fn or_base(values: &[f64], base: f64) -> Vec<f64> {
    if values.is_empty() {
        vec![base]
    } else {
        values.to_vec()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn cmd_bench(cli: &Cli, spec_path: &Path, out: Option<&Path>, workload_out: Option<&Path>) -> Outcome {
    let text = std::fs::read_to_string(spec_path).map_err(|e| relcomp_core::Error::io(spec_path, e))?;
    let spec: BenchSpec =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", spec_path.display())))?;
    if spec.seeds == 0 {
        return Err(usage("seeds must be positive"));
    }
    let mut planner = PlannerConfig::default();
    if let Some(t) = spec.threshold {
        planner.threshold = t;
    }
    if let Some(e) = spec.epochs {
        planner.train.fit.epochs = e;
    }
    if let Some(w) = spec.width {
        planner.train.hidden = w;
    }
    if let Some(s) = spec.ssar {
        planner.ssar = s;
    }
    let mut rows = Vec::new();
    let mut workload_rows = Vec::new();
    for &p in &or_base(&spec.grid.predictability, spec.data.predictability) {
        for &skew in &or_base(&spec.grid.skew, spec.data.skew) {
            for &fp in &or_base(&spec.grid.fanout_predictability, spec.data.fanout_predictability) {
                for &corr in &or_base(&spec.grid.removal_correlation, spec.removal.removal_correlation) {
                    let data = SyntheticSpec { predictability: p, skew, fanout_predictability: fp, ..spec.data.clone() };
                    let removal = RemovalSpec { removal_correlation: corr, ..spec.removal.clone() };
                    data.validate().map_err(|e| usage(e.to_string()))?;
                    removal.validate().map_err(|e| usage(e.to_string()))?;
                    for seed in 0..spec.seeds {
                        let o = bias_experiment(&data, &removal, &planner, spec.kind, seed)?;
                        rows.push(BenchRow {
                            predictability: p,
                            skew,
                            fanout_predictability: fp,
                            removal_correlation: corr,
                            seed,
                            admissible: o.admissible,
                            loss_ratio: o.loss_ratio,
                            truth: o.truth,
                            incomplete: o.incomplete,
                            completed: o.completed,
                            bias_reduction: o.bias_reduction,
                            cardinality_correction: o.cardinality_correction,
                            plan: o.plan,
                        });
                        if spec.workload.is_empty() {
                            continue;
                        }
                        let (full, schema) = generate_synthetic(&data, seed)?;
                        let (inc, inc_schema, _) =
                            biased_removal(&full, &schema, &RemovalSpec { seed, ..removal.clone() })?;
                        let mut cfg = WorkloadConfig { planner: planner.clone(), seed, bias: None };
                        cfg.planner.train.fit.seed = seed;
                        // Grid points without an admissible model have no completed
                        // answers; the grid CSV already records them as inadmissible.
                        let report = match run_workload(&spec.workload, &full, &inc, &inc_schema, &cfg) {
                            Err(relcomp_core::Error::NoAdmissibleModel { .. }) => continue,
                            r => r?,
                        };
                        for q in report.queries {
                            workload_rows.push(WorkloadRow {
                                predictability: p,
                                skew,
                                fanout_predictability: fp,
                                removal_correlation: corr,
                                seed,
                                query: q.sql,
                                truth: q.truth,
                                incomplete: q.incomplete,
                                completed: q.completed,
                                reduction: q.reduction,
                            });
                        }
                    }
                }
            }
        }
    }
    let grid_csv = grid_csv(&rows);
    if let Some(path) = out {
        write_file(path, grid_csv.as_bytes())?;
    }
    if let Some(path) = workload_out {
        write_file(path, workload_csv(&workload_rows).as_bytes())?;
    }
    if cli.json {
        return print_json(&serde_json::json!({ "grid": rows, "workload": workload_rows }));
    }
    if out.is_none() {
        print!("{grid_csv}");
    }
    Ok(())
}

fn grid_csv(rows: &[BenchRow]) -> String {
    let mut s = String::from(
        "predictability,skew,fanout_predictability,removal_correlation,seed,admissible,loss_ratio,truth,incomplete,completed,bias_reduction,cardinality_correction\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.predictability,
            r.skew,
            r.fanout_predictability,
            r.removal_correlation,
            r.seed,
            r.admissible,
            opt(r.loss_ratio),
            r.truth,
            r.incomplete,
            opt(r.completed),
            opt(r.bias_reduction),
            opt(r.cardinality_correction),
        ));
    }
    s
}

/// Queries contain commas, so they are quoted with doubled inner quotes.
fn workload_csv(rows: &[WorkloadRow]) -> String {
    let mut s = String::from(
        "predictability,skew,fanout_predictability,removal_correlation,seed,query,truth,incomplete,completed,reduction\n",
    );
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},\"{}\",{},{},{},{}\n",
            r.predictability,
            r.skew,
            r.fanout_predictability,
            r.removal_correlation,
            r.seed,
            r.query.replace('"', "\"\""),
            opt(r.truth),
            opt(r.incomplete),
            opt(r.completed),
            opt(r.reduction),
        ));
    }
    s
}
