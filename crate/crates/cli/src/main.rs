use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use reltree::catalog::{load_schema, SchemaCatalog};
use reltree::eager::{enumerate_paths, export_flat_csv, propositionalize, write_manifest, EagerOptions};
use reltree::eval::{cross_validate, generate_school_db, CvMode, CvOptions, SchoolSpec};
use reltree::features::FeatureParams;
use reltree::joinpath::JoinStats;
use reltree::ldt::{build_root_ldt, Strategy};
use reltree::storage::{load_database, Database, LoadOptions, RowId};
use reltree::tree::{deserialize_model, grow_tree_from_ldt, serialize_model, LearnParams, Predictor};

#[derive(Parser, Debug)]
#[command(name = "reltree", version, about = "Decision trees learned directly over relational databases")]
struct Cli {
    /// Comma-separated cell values read as missing.
    #[arg(long, global = true, value_delimiter = ',', default_value = ",?")]
    missing_tokens: Vec<String>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a tree on every labeled target row and write the model document.
    Learn(LearnArgs),
    /// Classify target rows with a trained model.
    Predict(PredictArgs),
    /// Write the flat feature table for paths up to a length.
    Propositionalize(PropositionalizeArgs),
    /// Run k-fold cross-validation and write a JSON report.
    Cv(CvArgs),
    /// Generate a synthetic database with a planted concept.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct Source {
    /// Schema file (TOML).
    #[arg(long)]
    schema: PathBuf,
    /// Directory holding one CSV file per table.
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args, Debug)]
struct TreeArgs {
    /// Minimum information gain for a split.
    #[arg(long, default_value_t = LearnParams::default().min_ig)]
    min_ig: f64,
    /// Nodes with fewer instances become leaves.
    #[arg(long, default_value_t = LearnParams::default().min_inst)]
    min_inst: usize,
    /// Maximum depth, or `inf`.
    #[arg(long, default_value = "inf", value_parser = parse_depth)]
    max_depth: Depth,
    /// Largest categorical domain that gets `contains` features.
    #[arg(long, default_value_t = LearnParams::default().domsize_abs)]
    domsize_abs: usize,
    /// Largest categorical domain relative to the instance count.
    #[arg(long, default_value_t = LearnParams::default().domsize_rel)]
    domsize_rel: f64,
}

#[derive(Clone, Copy, Debug)]
struct Depth(Option<usize>);

fn parse_depth(s: &str) -> std::result::Result<Depth, String> {
    if s.eq_ignore_ascii_case("inf") {
        return Ok(Depth(None));
    }
    s.parse().map(|d| Depth(Some(d))).map_err(|_| format!("expected a depth or `inf`, got `{s}`"))
}

impl TreeArgs {
    fn params(&self, strategy: Strategy) -> LearnParams {
        LearnParams {
            max_depth: self.max_depth.0,
            min_inst: self.min_inst,
            min_ig: self.min_ig,
            strategy,
            domsize_abs: self.domsize_abs,
            domsize_rel: self.domsize_rel,
            ..LearnParams::default()
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LazyMode {
    LazyRestricted,
    LazyUnrestricted,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum AnyMode {
    LazyRestricted,
    LazyUnrestricted,
    Eager,
}

#[derive(Args, Debug)]
struct LearnArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, value_enum, default_value = "lazy-restricted")]
    mode: LazyMode,
    #[command(flatten)]
    tree: TreeArgs,
    /// Drop the target table's own feature columns.
    #[arg(long)]
    strip_target_features: bool,
    /// Also write the root table's column manifest here.
    #[arg(long)]
    root_manifest: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    source: Source,
    /// File with one instance id per line; defaults to every target row.
    #[arg(long)]
    ids: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct PropositionalizeArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, default_value_t = 3)]
    max_path_len: usize,
    #[arg(long, default_value_t = LearnParams::default().domsize_abs)]
    domsize_abs: usize,
    #[arg(long, default_value_t = LearnParams::default().domsize_rel)]
    domsize_rel: f64,
    #[arg(long)]
    strip_target_features: bool,
    /// Cap on bag entries plus feature cells held at once.
    #[arg(long)]
    memory_budget: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    /// Also write one line per column: name, path, attribute, aggregator.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CvArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, value_enum, default_value = "lazy-restricted")]
    mode: AnyMode,
    #[arg(long, default_value_t = 10)]
    k: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    tree: TreeArgs,
    /// Path bound for eager mode.
    #[arg(long, default_value_t = 3)]
    max_path_len: usize,
    /// Keep the target table's own feature columns (dropped by default).
    #[arg(long)]
    keep_target_features: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Preset {
    School,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "school")]
    preset: Preset,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON generator settings; omitted fields take their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Output directory for `schema.toml` and the table CSVs.
    #[arg(long)]
    out: PathBuf,
}

fn load(source: &Source, missing_tokens: &[String], strip: bool) -> Result<Database> {
    let catalog: SchemaCatalog = load_schema(&source.schema)?;
    let options = LoadOptions {
        missing_tokens: missing_tokens.to_vec(),
        strip_target_features: strip,
    };
    let db = load_database(&catalog, &source.data, &options)?;
    for (table, n) in &db.load_stats().rejected_rows {
        log::warn!("{table}: dropped {n} rows with a missing key");
    }
    Ok(db)
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn learn(args: &LearnArgs, missing: &[String]) -> Result<()> {
    let db = load(&args.source, missing, args.strip_target_features)?;
    let strategy = match args.mode {
        LazyMode::LazyRestricted => Strategy::Restricted,
        LazyMode::LazyUnrestricted => Strategy::Unrestricted,
    };
    let params = args.tree.params(strategy);
    params.validate()?;
    let stats = JoinStats::new();
    let root = build_root_ldt(&db, &db.labeled_instances(), &params.feature_params(), &stats)?;
    if let Some(path) = &args.root_manifest {
        write_manifest(root.columns().iter().map(|c| &c.descriptor), create(path)?)
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    let instances = root.len();
    let (model, report) = grow_tree_from_ldt(&db, root, &params, &stats)?;
    std::fs::write(&args.out, serialize_model(&model)?)
        .with_context(|| format!("cannot write {}", args.out.display()))?;
    println!(
        "trained on {instances} instances: {} nodes, depth {}, {} paths materialized, {} extensions, {} join lookups",
        model.root.node_count(),
        model.root.depth(),
        report.materialized_paths.len(),
        report.extensions,
        stats.total()
    );
    Ok(())
}

fn read_ids(path: &Path, db: &Database) -> Result<Vec<RowId>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(|id| db.instance_by_key(id).with_context(|| format!("unknown instance id `{id}`")))
        .collect()
}

fn predict(args: &PredictArgs, missing: &[String]) -> Result<()> {
    let text = std::fs::read_to_string(&args.model)
        .with_context(|| format!("cannot read {}", args.model.display()))?;
    let model = deserialize_model(&text)?;
    let db = load(&args.source, missing, model.strip_target_features)?;
    let predictor = Predictor::new(&model, &db)?;
    let rows = match &args.ids {
        Some(path) => read_ids(path, &db)?,
        None => (0..db.target().row_count() as RowId).collect(),
    };
    let (labels, classes) = db.labels();
    let mut out = csv::Writer::from_writer(create(&args.out)?);
    out.write_record(["instance_id", "predicted_class", "confidence"])?;
    let (mut labeled, mut correct) = (0usize, 0usize);
    for row in rows {
        let p = predictor.predict(row)?;
        let class = &model.classes[p.class as usize];
        if let Some(l) = labels[row as usize] {
            labeled += 1;
            correct += usize::from(classes[l as usize] == *class);
        }
        out.write_record([db.instance_key(row), class.as_str(), &p.confidence().to_string()])?;
    }
    out.flush()?;
    if labeled > 0 {
        println!(
            "accuracy {:.4} on {labeled} labeled instances ({correct} correct)",
            correct as f64 / labeled as f64
        );
    } else {
        println!("no labeled instances to score");
    }
    info!("{} join lookups", predictor.stats().total());
    Ok(())
}

fn run_propositionalize(args: &PropositionalizeArgs, missing: &[String]) -> Result<()> {
    let db = load(&args.source, missing, args.strip_target_features)?;
    let options = EagerOptions {
        max_path_len: args.max_path_len,
        memory_budget: args.memory_budget,
    };
    let params = FeatureParams {
        domsize_abs: args.domsize_abs,
        domsize_rel: args.domsize_rel,
    };
    let rows: Vec<RowId> = (0..db.target().row_count() as RowId).collect();
    let stats = JoinStats::new();
    let flat = propositionalize(&db, &rows, &options, &params, &stats)?;
    export_flat_csv(&flat, &args.out, "")?;
    if let Some(path) = &args.manifest {
        write_manifest(flat.descriptors(), create(path)?)
            .with_context(|| format!("cannot write {}", path.display()))?;
    }
    println!(
        "{} rows, {} columns over {} paths ({} enumerated), {} join lookups",
        flat.instance_keys.len(),
        flat.columns.len(),
        flat.paths.len(),
        enumerate_paths(db.catalog(), args.max_path_len).len(),
        stats.total()
    );
    Ok(())
}

fn cv(args: &CvArgs, missing: &[String], parallel: bool) -> Result<()> {
    let db = load(&args.source, missing, !args.keep_target_features)?;
    let (mode, strategy) = match args.mode {
        AnyMode::LazyRestricted => (CvMode::LazyRestricted, Strategy::Restricted),
        AnyMode::LazyUnrestricted => (CvMode::LazyUnrestricted, Strategy::Unrestricted),
        AnyMode::Eager => (CvMode::Eager, Strategy::Restricted),
    };
    let options = CvOptions {
        mode,
        k: args.k,
        seed: args.seed,
        params: args.tree.params(strategy),
        max_path_len: args.max_path_len,
        parallel_folds: parallel,
    };
    let report = cross_validate(&db, &options)?;
    let mut out = create(&args.out)?;
    serde_json::to_writer_pretty(&mut out, &report)?;
    out.write_all(b"\n")?;
    out.flush()?;
    println!("{}", report.summary());
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<()> {
    let Preset::School = args.preset;
    let spec: SchoolSpec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("invalid generator settings in {}", path.display()))?
        }
        None => SchoolSpec::default(),
    };
    let db = generate_school_db(args.seed, &spec)?;
    db.write_to(&args.out)?;
    println!(
        "wrote {} professors to {} (planted feature {}, {} labels flipped)",
        spec.professors,
        args.out.display(),
        db.planted.name(),
        db.flipped
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            bail!("--jobs must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global()?;
    }
    let missing = &cli.missing_tokens;
    match &cli.command {
        Command::Learn(a) => learn(a, missing),
        Command::Predict(a) => predict(a, missing),
        Command::Propositionalize(a) => run_propositionalize(a, missing),
        Command::Cv(a) => cv(a, missing, cli.jobs != Some(1)),
        Command::Synth(a) => synth(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut message = String::new();
            for cause in e.chain().map(ToString::to_string) {
                if !message.contains(&cause) {
                    if !message.is_empty() {
                        message.push_str(": ");
                    }
                    message.push_str(&cause);
                }
            }
            let message = message.replace('\n', " ");
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}
