use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use distmatch::config::KeyValues;
use distmatch::distance::{pairwise_matrix, DistanceConfig, DistanceMatrix};
use distmatch::ingest::{build_cohort, load_tables, Cohort, InclusionRules, NonwearRule, QualityPolicy};
use distmatch::matching::{audit, read_pairs, CaliperSpec, CandidateTable, MatchSet};
use distmatch::output::{write_atomic, StagedDir};
use distmatch::quantile::{build_grid, GridRule, Interval, PoolingOptions, ProbGrid, QuantileRule, QuantileStore};
use distmatch::resample::{within_between_summary, write_outputs};
use distmatch::sensitivity::{emit_table, run_grid, GridSpec};
use distmatch::simcohort::{generate, SimSpec};
use distmatch::survival::{fit_cox, hazard_ratio, BasisKind, CoxOptions, CoxOutcome, ScoreTable, Ties, RACE_COLUMN};
use distmatch::{seed, snapshot, Error, Result};

/// Wasserstein-distance matching on accelerometer activity distributions.
#[derive(Debug, Parser)]
#[command(name = "distmatch", version, about)]
struct Cli {
    /// Worker threads for every stage (default: all cores).
    #[arg(long, global = true, env = "DISTMATCH_THREADS")]
    threads: Option<usize>,

    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic cohort from a key-value spec file.
    Simulate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Read the three tables, apply inclusion rules and save a cohort snapshot.
    Ingest(IngestArgs),
    /// Per-participant quantile functions as long CSV.
    Quantiles {
        #[arg(long)]
        cohort: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Pairwise Wasserstein distances as long CSV.
    Distances {
        #[arg(long)]
        cohort: PathBuf,
        #[command(flatten)]
        grid: GridArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeated randomized caliper matching.
    Match(MatchArgs),
    /// Functional Cox model on the cohort or on one matched sample.
    Cox(CoxArgs),
    /// Day bootstrap: within- versus between-person distances.
    Bootstrap(BootstrapArgs),
    /// The full (C, J, interval) sensitivity grid.
    Sensitivity {
        #[arg(long)]
        cohort: PathBuf,
        /// Key-value grid file; see README for the keys.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct IngestArgs {
    /// Directory holding activity.csv, demographics.csv and mortality.csv.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    activity: Option<PathBuf>,
    #[arg(long)]
    demographics: Option<PathBuf>,
    #[arg(long)]
    mortality: Option<PathBuf>,
    /// Cohort snapshot to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 50.0)]
    min_age: f64,
    #[arg(long, default_value = "black")]
    treated_label: String,
    #[arg(long, default_value = "white")]
    control_label: String,
    #[arg(long, default_value_t = 3)]
    min_good_days: usize,
    /// A good day needs strictly more wear minutes than this.
    #[arg(long, default_value_t = 600)]
    min_wear_minutes: u32,
    /// Zero-count run length treated as non-wear when wear time is absent.
    #[arg(long, default_value_t = 90)]
    nonwear_run: usize,
}

#[derive(Debug, Args, Clone)]
struct GridArgs {
    #[arg(long = "J", default_value_t = 999)]
    j: usize,
    #[arg(long, default_value = "0,1")]
    interval: Interval,
    #[arg(long, default_value = "truncated")]
    grid_rule: GridRule,
    #[arg(long, default_value = "linear")]
    quantile_rule: QuantileRule,
    /// Pool only wear minutes.
    #[arg(long)]
    mask_nonwear: bool,
}

impl GridArgs {
    fn config(&self) -> Result<DistanceConfig> {
        Ok(DistanceConfig {
            grid: Arc::new(build_grid(self.j, self.interval, self.grid_rule)?),
            quantile_rule: self.quantile_rule,
        })
    }

    fn pooling(&self) -> PoolingOptions {
        PoolingOptions {
            wear_mask: self.mask_nonwear.then(NonwearRule::default),
        }
    }
}

#[derive(Debug, Args)]
struct MatchArgs {
    #[arg(long)]
    cohort: PathBuf,
    /// Distance CSV from `distances`; computed from the grid flags when absent.
    #[arg(long)]
    distances: Option<PathBuf>,
    #[command(flatten)]
    grid: GridArgs,
    /// Wasserstein caliper C.
    #[arg(long)]
    caliper: f64,
    #[arg(long, default_value_t = 3.0)]
    age_caliper: f64,
    #[arg(long, default_value_t = 2.0)]
    bmi_caliper: f64,
    #[arg(long, default_value_t = 30)]
    reps: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct CoxArgs {
    #[arg(long)]
    cohort: PathBuf,
    /// Pairs CSV from `match`; the whole cohort is fitted when absent.
    #[arg(long)]
    pairs: Option<PathBuf>,
    /// Repetition to take from the pairs file.
    #[arg(long, default_value_t = 0)]
    rep: usize,
    #[arg(long, default_value = "periodic-bspline")]
    basis: BasisKind,
    #[arg(long, default_value_t = 10)]
    basis_k: usize,
    #[arg(long, default_value = "breslow")]
    ties: Ties,
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    /// JSON report.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BootstrapArgs {
    #[arg(long)]
    cohort: PathBuf,
    #[arg(long = "B", default_value_t = 100)]
    b: usize,
    #[arg(long = "J", default_value_t = 999)]
    j: usize,
    /// Semicolon-separated lo,hi pairs.
    #[arg(long, default_value = "0,1;0.01,0.99;0.05,0.95")]
    intervals: String,
    #[arg(long, default_value = "truncated")]
    grid_rule: GridRule,
    #[arg(long, default_value = "linear")]
    quantile_rule: QuantileRule,
    #[arg(long)]
    seed: Option<u64>,
    /// Between-person rows kept per interval; 0 keeps all pairs.
    #[arg(long, default_value_t = 100_000)]
    max_between_rows: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Error tagged with the stage that raised it.
struct StageError {
    stage: &'static str,
    error: Error,
}

trait InStage<T> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T, E: Into<Error>> InStage<T> for std::result::Result<T, E> {
    fn stage(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|e| StageError {
            stage,
            error: e.into(),
        })
    }
}

type StageResult = std::result::Result<(), StageError>;

fn load_cohort(path: &Path) -> std::result::Result<Cohort, StageError> {
    snapshot::load(path).stage("load cohort")
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s = seed::fresh_seed();
        log::warn!("no --seed given; using generated seed {s} (recorded in metadata)");
        s
    })
}

fn json_string<T: serde::Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v)
        .map(|s| s + "\n")
        .map_err(|e| Error::Invalid(e.to_string()))
}

fn cmd_simulate(spec: &Path, out: &Path) -> StageResult {
    let kv = KeyValues::read(spec).stage("simulate")?;
    let spec = SimSpec::from_config(kv).stage("simulate")?;
    generate(&spec, out).stage("simulate")?;
    eprintln!("simulated {} participants (seed {}) into {}", spec.n(), spec.seed, out.display());
    Ok(())
}

fn cmd_ingest(a: &IngestArgs) -> StageResult {
    let pick = |explicit: &Option<PathBuf>, name: &str| -> std::result::Result<PathBuf, StageError> {
        match (explicit, &a.data) {
            (Some(p), _) => Ok(p.clone()),
            (None, Some(dir)) => Ok(dir.join(name)),
            (None, None) => Err(StageError {
                stage: "ingest",
                error: Error::Invalid(format!("give --data or the path of {name}")),
            }),
        }
    };
    let (act, demo, mort) = (
        pick(&a.activity, "activity.csv")?,
        pick(&a.demographics, "demographics.csv")?,
        pick(&a.mortality, "mortality.csv")?,
    );
    let nonwear = NonwearRule {
        min_zero_run: a.nonwear_run,
    };
    let raw = load_tables(&act, &demo, &mort, &nonwear).stage("ingest")?;
    let rules = InclusionRules {
        min_age_exclusive: a.min_age,
        treated_label: a.treated_label.clone(),
        control_label: a.control_label.clone(),
        min_good_days: a.min_good_days,
        quality: QualityPolicy {
            min_wear_minutes: a.min_wear_minutes,
            ..QualityPolicy::default()
        },
    };
    let cohort = build_cohort(&raw, &rules).stage("ingest")?;
    snapshot::save(&a.out, &cohort).stage("ingest")?;
    println!("{}", cohort.provenance);
    println!(
        "cohort: {} participants ({} treated, {} control) -> {}",
        cohort.len(),
        cohort.treated_indices().len(),
        cohort.control_indices().len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_quantiles(cohort: &Path, grid: &GridArgs, out: &Path) -> StageResult {
    let cohort = load_cohort(cohort)?;
    let config = grid.config().stage("quantiles")?;
    let store = QuantileStore::new(&cohort, &grid.pooling()).stage("quantiles")?;
    let qfs = store.quantile_functions(&config.grid, config.quantile_rule);
    write_atomic(out, |w| {
        writeln!(w, "# {}", config.describe())?;
        writeln!(w, "participant_id,p,quantile")?;
        for (p, q) in cohort.participants.iter().zip(&qfs) {
            for (prob, v) in config.grid.probs().iter().zip(q.values()) {
                writeln!(w, "{},{prob},{v}", p.participant_id)?;
            }
        }
        Ok(())
    })
    .stage("quantiles")
}

fn compute_distances(cohort: &Cohort, grid: &GridArgs) -> Result<DistanceMatrix> {
    let config = grid.config()?;
    let store = QuantileStore::new(cohort, &grid.pooling())?;
    let qfs = store.quantile_functions(&config.grid, config.quantile_rule);
    let ids: Vec<String> = cohort.ids().iter().map(|s| s.to_string()).collect();
    Ok(pairwise_matrix(&ids, &qfs, &config)?)
}

fn cmd_distances(cohort: &Path, grid: &GridArgs, out: &Path) -> StageResult {
    let cohort = load_cohort(cohort)?;
    let m = compute_distances(&cohort, grid).stage("distances")?;
    write_atomic(out, |w| m.write_csv(w)).stage("distances")?;
    eprintln!("{} pairs -> {}", m.n_pairs(), out.display());
    Ok(())
}

fn cmd_match(a: &MatchArgs) -> StageResult {
    let cohort = load_cohort(&a.cohort)?;
    let ids: Vec<String> = cohort.ids().iter().map(|s| s.to_string()).collect();
    let matrix = match &a.distances {
        Some(path) => {
            let file = std::fs::File::open(path)
                .map_err(|e| Error::io(format!("opening {}", path.display()), e))
                .stage("match")?;
            DistanceMatrix::read_csv(std::io::BufReader::new(file), &ids)
                .map_err(|e| Error::Format {
                    path: path.clone(),
                    message: e.to_string(),
                })
                .stage("match")?
        }
        None => compute_distances(&cohort, &a.grid).stage("match")?,
    };
    let spec = CaliperSpec {
        age: a.age_caliper,
        bmi: a.bmi_caliper,
        gender_exact: true,
        pa: a.caliper,
    };
    if a.reps == 0 {
        return Err(Error::Invalid("--reps must be at least 1".into())).stage("match");
    }
    let master_seed = resolve_seed(a.seed);
    let table = CandidateTable::build(&cohort, &spec, &matrix).stage("match")?;
    let sets = table.draw_repeated(&cohort, a.reps, master_seed);
    for set in &sets {
        audit(&cohort, &spec, &matrix, set).stage("match")?;
    }
    let staged = StagedDir::new(&a.out).stage("match")?;
    write_match_outputs(&staged, &sets).stage("match")?;
    let meta = serde_json::json!({
        "master_seed": master_seed,
        "seed_generated": a.seed.is_none(),
        "reps": a.reps,
        "calipers": spec,
        "distance_config": matrix.config().describe(),
        "pairs_per_rep": sets.iter().map(MatchSet::n_pairs).collect::<Vec<_>>(),
    });
    staged.write_string("metadata.json", &json_string(&meta).stage("match")?).stage("match")?;
    staged.commit().stage("match")?;
    let mean = sets.iter().map(|s| s.n_pairs() as f64).sum::<f64>() / sets.len() as f64;
    println!("{} repetitions, mean pairs {mean:.1} -> {}", sets.len(), a.out.display());
    Ok(())
}

fn write_match_outputs(staged: &StagedDir, sets: &[MatchSet]) -> Result<()> {
    staged.write("pairs.csv", |w| {
        writeln!(w, "rep,treated_id,control_id")?;
        for (r, set) in sets.iter().enumerate() {
            for p in &set.pairs {
                writeln!(w, "{r},{},{}", p.treated, p.control)?;
            }
        }
        Ok(())
    })?;
    staged.write("unmatched.csv", |w| {
        writeln!(w, "rep,treated_id,reason")?;
        for (r, set) in sets.iter().enumerate() {
            for (id, reason) in &set.unmatched {
                writeln!(w, "{r},{id},{}", reason.as_str())?;
            }
        }
        Ok(())
    })
}

/// Pairs of repetition `rep` from a `match` pairs file.
fn pairs_of_rep(path: &Path, rep: usize) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let format_err = |m: String| Error::Format {
        path: path.to_path_buf(),
        message: m,
    };
    if header.trim() == "treated_id,control_id" {
        let pairs = read_pairs(text.as_bytes())?;
        return Ok(pairs.into_iter().flat_map(|p| [p.treated, p.control]).collect());
    }
    if header.trim() != "rep,treated_id,control_id" {
        return Err(format_err(format!("unexpected header {header:?}")));
    }
    let mut ids = Vec::new();
    for (k, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 3 {
            return Err(format_err(format!("line {}: expected 3 columns", k + 2)));
        }
        let r: usize = f[0]
            .parse()
            .map_err(|_| format_err(format!("line {}: bad rep {:?}", k + 2, f[0])))?;
        if r == rep {
            ids.push(f[1].to_string());
            ids.push(f[2].to_string());
        }
    }
    Ok(ids)
}

fn cmd_cox(a: &CoxArgs) -> StageResult {
    let cohort = load_cohort(&a.cohort)?;
    let scores = ScoreTable::new(&cohort, a.basis, a.basis_k).stage("cox")?;
    let design = match &a.pairs {
        None => scores.design(&(0..cohort.len()).collect::<Vec<_>>()),
        Some(path) => {
            let ids = pairs_of_rep(path, a.rep).stage("cox")?;
            let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
            scores.design_for_ids(&cohort, &refs)
        }
    }
    .stage("cox")?;
    let opts = CoxOptions {
        ties: a.ties,
        ridge: a.ridge,
        ..CoxOptions::default()
    };
    let outcome = fit_cox(&design, &opts);
    let hr = hazard_ratio(&outcome, RACE_COLUMN);
    let report = serde_json::json!({
        "n": design.n(),
        "n_events": design.n_events(),
        "basis": a.basis.to_string(),
        "basis_k": a.basis_k,
        "hazard_ratio": hr,
        "na_reason": match &outcome { CoxOutcome::Na(na) => Some(na.reason.as_str()), _ => None },
        "fit": outcome,
        "standardization": design.standardization,
    });
    write_atomic(&a.out, |w| w.write_all(json_string(&report).map_err(std::io::Error::other)?.as_bytes()))
        .stage("cox")?;
    match hr {
        Some(h) => println!("HR {:.3} (95% CI {:.3}, {:.3})", h.hr, h.ci_low, h.ci_high),
        None => println!("HR NA"),
    }
    Ok(())
}

fn cmd_bootstrap(a: &BootstrapArgs) -> StageResult {
    let cohort = load_cohort(&a.cohort)?;
    let intervals = Interval::parse_list(&a.intervals).stage("bootstrap")?;
    let grids: Vec<Arc<ProbGrid>> = intervals
        .iter()
        .map(|&i| build_grid(a.j, i, a.grid_rule).map(Arc::new))
        .collect::<std::result::Result<_, _>>()
        .stage("bootstrap")?;
    let run_seed = resolve_seed(a.seed);
    let summaries = within_between_summary(&cohort, &grids, a.b, a.quantile_rule, &PoolingOptions::default(), run_seed)
        .stage("bootstrap")?;
    let staged = StagedDir::new(&a.out).stage("bootstrap")?;
    write_outputs(&staged, &cohort, &summaries, a.max_between_rows, run_seed).stage("bootstrap")?;
    let meta = serde_json::json!({
        "seed": run_seed,
        "seed_generated": a.seed.is_none(),
        "B": a.b,
        "J": a.j,
        "intervals": intervals.iter().map(|i| i.to_string()).collect::<Vec<_>>(),
        "grid_rule": a.grid_rule.to_string(),
        "quantile_rule": a.quantile_rule.to_string(),
        "max_between_rows": a.max_between_rows,
    });
    staged.write_string("metadata.json", &json_string(&meta).stage("bootstrap")?).stage("bootstrap")?;
    staged.commit().stage("bootstrap")?;
    for s in &summaries {
        println!(
            "{}: median within {:.2}, median between {:.2}",
            s.grid.interval(),
            s.within_summary.median,
            s.between_summary.median
        );
    }
    Ok(())
}

fn cmd_sensitivity(cohort: &Path, config: &Path, out: &Path) -> StageResult {
    let kv = KeyValues::read(config).stage("sensitivity")?;
    let spec = GridSpec::from_config(kv).stage("sensitivity")?;
    spec.validate().stage("sensitivity")?;
    if spec.seed_generated {
        log::warn!("no seed in {}; using {} (recorded in metadata)", config.display(), spec.master_seed);
    }
    let cohort = load_cohort(cohort)?;
    let cells = run_grid(&cohort, &spec).stage("sensitivity")?;
    let staged = StagedDir::new(out).stage("sensitivity")?;
    emit_table(&staged, &cells, &spec, &cohort).stage("sensitivity")?;
    staged.commit().stage("sensitivity")?;
    println!("{} cells -> {}", cells.len(), out.display());
    Ok(())
}

fn run(cli: &Cli) -> StageResult {
    match &cli.command {
        Command::Simulate { spec, out } => cmd_simulate(spec, out),
        Command::Ingest(a) => cmd_ingest(a),
        Command::Quantiles { cohort, grid, out } => cmd_quantiles(cohort, grid, out),
        Command::Distances { cohort, grid, out } => cmd_distances(cohort, grid, out),
        Command::Match(a) => cmd_match(a),
        Command::Cox(a) => cmd_cox(a),
        Command::Bootstrap(a) => cmd_bootstrap(a),
        Command::Sensitivity { cohort, config, out } => cmd_sensitivity(cohort, config, out),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp
                | clap::error::ErrorKind::DisplayVersion
                | clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: configuring thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(StageError { stage, error }) => {
            eprintln!("error [{stage}]: {error}");
            ExitCode::from(if error.is_validation() { 1 } else { 2 })
        }
    }
}
