use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};

use slicebf::baselines::{
    anderson_darling_2sample, anderson_darling_ksample, anova_one_way, anova_two_way, ks_two_sample, welch_t,
    wilcoxon_rank_sum,
};
use slicebf::calibration::{calibrate, CalibrationKey, CalibrationSpec, CalibrationTable, SCHEMA_VERSION};
use slicebf::permutation::{formula_pvalue, mc_pvalue, PermutationPlan};
use slicebf::selection::{select, CovariateSet, SelectionConfig, StopRule};
use slicebf::simulation::{run_study, Family, ScenarioSpec, StudyMethod};
use slicebf::{bf_dynamic_program, load_table, Categorical, Error, Hyperparams, Result, Table, TestReport};

const SIMULATE_HELP: &str = "\
Output: a JSON summary (per method: auc, rejection_rate_h1, rejection_rate_h0)
on stdout or --output. With --scores, per-replicate scores go to a TSV file
with columns:
  method      method label (bf, bf:<alpha0>, t, ranksum, ks, ad, anova)
  replicate   replicate index, 0-based
  hypothesis  h1 (alternative draw) or h0 (shuffled draw)
  score       log BF for bf, standardized T for ad, -ln p otherwise";

const EXIT_HELP: &str = "\
Exit codes: 0 success, 2 input error, 3 statistically degenerate input,
4 capacity limit. JSON documents carry a top-level \"schema\": 1.";

#[derive(Parser)]
#[command(name = "slicebf", version, about = "Bayes factor tests of (conditional) dependence via sliced inverse models", after_help = EXIT_HELP)]
struct Cli {
    /// Worker threads for replicate loops (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test dependence of a response on a covariate, optionally given groups.
    Test(TestArgs),
    /// Screen covariates and select them stepwise.
    Select(SelectArgs),
    /// Run a simulated power study.
    #[command(after_help = SIMULATE_HELP)]
    Simulate(SimulateArgs),
    /// Fit the empirical type-I error formula by shuffle simulation.
    Calibrate(CalibrateArgs),
}

#[derive(Args)]
struct Input {
    /// CSV or TSV file with a header row (.tsv/.tab are tab separated).
    input: PathBuf,
    /// Response column.
    #[arg(long, default_value = "y")]
    response: String,
    /// Field delimiter, overriding the file extension.
    #[arg(long)]
    delimiter: Option<char>,
}

#[derive(Args)]
struct Hyper {
    #[arg(long, default_value_t = 1.0)]
    alpha0: f64,
    #[arg(long, default_value_t = 1.0)]
    lambda0: f64,
}

impl Hyper {
    fn get(&self) -> Result<Hyperparams> {
        Hyperparams::new(self.alpha0, self.lambda0)
    }
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    input: Input,
    /// Covariate column(s); several are combined into one super variable.
    #[arg(long, value_delimiter = ',', required = true)]
    covariate: Vec<String>,
    /// Conditioning column(s), combined into one group variable.
    #[arg(long, value_delimiter = ',')]
    given: Vec<String>,
    #[command(flatten)]
    hyper: Hyper,
    /// Shuffles for the Monte Carlo p-value; 0 skips it.
    #[arg(long, default_value_t = 1000)]
    permutations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Baseline tests to add: t, ranksum, ks, ad, anova.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<String>,
    /// Calibration table (default: $SLICEBF_CALIBRATION, then built-in).
    #[arg(long)]
    calibration: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    input: Input,
    /// Candidate columns (default: every column except the response).
    #[arg(long, value_delimiter = ',')]
    covariates: Vec<String>,
    #[command(flatten)]
    hyper: Hyper,
    /// Screening threshold: keep covariates with BF > b0.
    #[arg(long, default_value_t = 10.0)]
    b0: f64,
    /// perm:<p-cutoff> or bf:<b1>[,<b2>...].
    #[arg(long, default_value = "perm:0.05")]
    stop_rule: String,
    #[arg(long, default_value_t = 1000)]
    permutations: usize,
    #[arg(long, default_value_t = 10)]
    max_steps: usize,
    #[arg(long, default_value_t = 64)]
    max_super_levels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// s1..s4 or case1..case6.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 400)]
    n: usize,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    /// Default: bf,t,ranksum,ks,ad for s1–s4 and bf,anova for cases.
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    p0: Option<f64>,
    /// Write per-replicate scores as TSV.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Design preset: binary (|X| = 2, no groups, p = 0.5) or two-by-two
    /// (|X| = |Z| = 2, uniform). Ignored when --frequencies is given.
    #[arg(long, default_value = "binary")]
    design: String,
    #[arg(long, default_value_t = 2)]
    x_levels: usize,
    #[arg(long, default_value_t = 1)]
    z_levels: usize,
    /// Cell frequencies, z-major, summing to 1.
    #[arg(long, value_delimiter = ',')]
    frequencies: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    ns: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    bs: Vec<f64>,
    #[arg(long)]
    replicates: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    min_hits: Option<usize>,
    #[command(flatten)]
    hyper: Hyper,
    /// Table to update with the fitted entry (default: $SLICEBF_CALIBRATION).
    #[arg(long)]
    table: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

fn read_table(input: &Input) -> Result<Table> {
    let delimiter = match input.delimiter {
        Some(c) if c.is_ascii() => Some(c as u8),
        Some(c) => return Err(Error::Input(format!("delimiter '{c}' is not ASCII"))),
        None => None,
    };
    Table::read_path(&input.input, delimiter)
}

fn emit(doc: &impl Serialize, output: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(doc)? + "\n";
    match output {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn combined(table: &Table, cols: &[String]) -> Result<Categorical> {
    let parts = cols.iter().map(|c| table.categorical(c)).collect::<Result<Vec<_>>>()?;
    if parts.len() == 1 {
        return Ok(parts.into_iter().next().unwrap());
    }
    Categorical::combine(&parts.iter().collect::<Vec<_>>())
}

fn baseline(method: &str, y: &[f64], x: &Categorical, z: Option<&Categorical>) -> Result<TestReport> {
    if let Some(z) = z {
        return match method {
            "anova" => anova_two_way(y, x.codes(), z.codes()),
            _ => Err(Error::Input(format!("method '{method}' has no conditional form; use anova with --given"))),
        };
    }
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); x.levels()];
    for (&v, &c) in y.iter().zip(x.codes()) {
        groups[c as usize].push(v);
    }
    groups.retain(|g| !g.is_empty());
    let two = || -> Result<(&[f64], &[f64])> {
        match groups.as_slice() {
            [a, b] => Ok((a, b)),
            _ => Err(Error::Input(format!("method '{method}' needs a covariate with exactly 2 levels"))),
        }
    };
    match method {
        "t" => two().and_then(|(a, b)| welch_t(a, b)),
        "ranksum" => two().and_then(|(a, b)| wilcoxon_rank_sum(a, b)),
        "ks" => two().and_then(|(a, b)| ks_two_sample(a, b)),
        "ad" if groups.len() == 2 => anderson_darling_2sample(&groups[0], &groups[1]),
        "ad" => anderson_darling_ksample(&groups.iter().map(Vec::as_slice).collect::<Vec<_>>()),
        "anova" => anova_one_way(y, x.codes()),
        _ => Err(Error::Input(format!("unknown method '{method}'"))),
    }
}

fn cmd_test(a: &TestArgs) -> Result<()> {
    let hyper = a.hyper.get()?;
    let table = read_table(&a.input)?;
    let cov: Vec<&str> = a.covariate.iter().map(String::as_str).collect();
    let given: Vec<&str> = a.given.iter().map(String::as_str).collect();
    let d = load_table(&table, &a.input.response, &cov, &given)?;
    let result = bf_dynamic_program(&d, &hyper);
    let bf = result.bf();

    let calibration_path = a.calibration.clone().or_else(CalibrationTable::env_path);
    let calibration = CalibrationTable::load_or_builtin(calibration_path.as_deref())?;
    let key = CalibrationKey::for_dataset(&d, &hyper);
    let formula = match calibration.lookup(&key) {
        // the formula describes Pr(BF > b) for b ≥ 1; below 1 report 1
        Some(entry) => {
            let p = if result.log_bf >= 0.0 { formula_pvalue(bf, d.n(), &entry.constants)? } else { 1.0 };
            json!({ "p_value": p, "constants": entry.constants, "source": entry.source })
        }
        None => Value::Null,
    };
    let permutation = if a.permutations > 0 {
        let plan = PermutationPlan::new(a.permutations, a.seed)?;
        let mc = mc_pvalue(result.log_bf, &d, &hyper, &plan);
        json!({ "p_value": mc.p_value, "replicates": mc.replicates, "seed": a.seed })
    } else {
        Value::Null
    };
    let mut baselines = Vec::new();
    if !a.methods.is_empty() {
        let y = table.numeric(&a.input.response)?;
        let x = combined(&table, &a.covariate)?;
        let z = if a.given.is_empty() { None } else { Some(combined(&table, &a.given)?) };
        for m in &a.methods {
            baselines.push(baseline(m, &y, &x, z.as_ref())?);
        }
    }
    let doc = json!({
        "schema": SCHEMA_VERSION,
        "command": "test",
        "response": a.input.response,
        "covariate": a.covariate,
        "given": a.given,
        "n": d.n(),
        "x_levels": d.x_levels(),
        "z_levels": d.z_levels(),
        "alpha0": hyper.alpha0,
        "lambda0": hyper.lambda0,
        "log_bf": result.log_bf,
        "bf": bf,
        "formula": formula,
        "permutation": permutation,
        "baselines": baselines,
    });
    emit(&doc, a.output.as_deref())
}

fn cmd_select(a: &SelectArgs) -> Result<()> {
    let config = SelectionConfig {
        b0: a.b0,
        stop_rule: a.stop_rule.parse::<StopRule>()?,
        permutations: a.permutations,
        max_steps: a.max_steps,
        max_super_levels: a.max_super_levels,
        seed: a.seed,
        hyper: a.hyper.get()?,
    };
    config.validate()?;
    let table = read_table(&a.input)?;
    let cols: Vec<&str> = a.covariates.iter().map(String::as_str).collect();
    let set = CovariateSet::from_table(&table, &a.input.response, &cols)?;
    let trace = select(&set, &config)?;
    let doc = json!({
        "schema": SCHEMA_VERSION,
        "command": "select",
        "response": a.input.response,
        "n": set.n(),
        "candidates": set.names(),
        "config": config,
        "trace": trace,
    });
    emit(&doc, a.output.as_deref())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let family: Family = a.scenario.parse()?;
    let mut spec = ScenarioSpec::new(family, a.n, a.seed);
    if let Some(v) = a.mu {
        spec.mu = v;
    }
    if let Some(v) = a.sigma {
        spec.sigma = v;
    }
    if let Some(v) = a.theta {
        spec.theta = v;
    }
    if let Some(v) = a.gamma {
        spec.gamma = v;
    }
    if let Some(v) = a.p0 {
        spec.p0 = v;
    }
    let default_methods = if family.is_two_sample() { "bf,t,ranksum,ks,ad" } else { "bf,anova" };
    let methods = StudyMethod::parse_list(a.methods.as_deref().unwrap_or(default_methods))?;
    let study = run_study(&spec, &methods, a.reps)?;
    if let Some(path) = &a.scores {
        std::fs::write(path, study.to_tsv())?;
    }
    let doc = json!({
        "schema": SCHEMA_VERSION,
        "command": "simulate",
        "scenario": study.scenario,
        "replicates": study.replicates,
        "summary": study.summary,
    });
    emit(&doc, a.output.as_deref())
}

fn cmd_calibrate(a: &CalibrateArgs) -> Result<()> {
    let mut spec = if !a.frequencies.is_empty() {
        CalibrationSpec::with_frequencies(a.x_levels, a.z_levels, a.frequencies.clone())
    } else {
        match a.design.as_str() {
            "binary" => CalibrationSpec::balanced_binary(),
            "two-by-two" | "2x2" => CalibrationSpec::uniform_two_by_two(),
            d => return Err(Error::Input(format!("unknown design '{d}'; use binary or two-by-two"))),
        }
    };
    if !a.ns.is_empty() {
        spec.ns = a.ns.clone();
    }
    if !a.bs.is_empty() {
        spec.bs = a.bs.clone();
    }
    if let Some(r) = a.replicates {
        spec.replicates = r;
    }
    if let Some(h) = a.min_hits {
        spec.min_hits = h;
    }
    spec.seed = a.seed;
    spec.hyper = a.hyper.get()?;
    let run = calibrate(&spec)?;
    let table_path = a.table.clone().or_else(CalibrationTable::env_path);
    if let Some(path) = &table_path {
        let mut table = if path.exists() {
            CalibrationTable::read(path)?
        } else {
            CalibrationTable { schema: SCHEMA_VERSION, entries: Vec::new() }
        };
        table.upsert(run.entry.clone());
        table.write(path)?;
    }
    let doc = json!({
        "schema": SCHEMA_VERSION,
        "command": "calibrate",
        "entry": run.entry,
        "rms": run.fit.rms,
        "points": run.points,
        "table": table_path,
    });
    emit(&doc, a.output.as_deref())
}

fn run(cli: &Cli) -> Result<()> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Input("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Input(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Test(a) => cmd_test(a),
        Command::Select(a) => cmd_select(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Calibrate(a) => cmd_calibrate(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("slicebf: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
