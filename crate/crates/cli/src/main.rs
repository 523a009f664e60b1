//! `fpguard` command-line front end.
//!
//! Coded relations travel as CSV plus a schema JSON file. Every option can
//! also be given in a `--config` JSON object under its snake_case flag name;
//! flags win over the file. Randomized commands take `--seed`, then the
//! config's `seed`, then `FPGUARD_SEED`.
//!
//! Exit codes: 0 on success, 1 on I/O failures, 2 on domain errors. Errors
//! are written to standard error as a JSON object.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use fpguard::attacks::{atk_col, atk_integrated, atk_rnd, atk_row, AttackReport};
use fpguard::bounds::SchemeBounds;
use fpguard::correlations::{joint_distributions, kmeans_communities, stat_relations, CommunityAssignment};
use fpguard::defenses::{dfs_col, dfs_row, robust_fingerprint, ColumnDefenseConfig, DefenseReport, DEFAULT_TAU_COL_DFS};
use fpguard::experiment::{self, ExperimentSettings, Table};
use fpguard::fingerprint::{extract, gen_fingerprint, insert, FingerprintCode, FingerprintKey, MarkedPosition, Outcome};
use fpguard::metrics::{accusable_rank_partial, matches_partial, utility_report, StatQuery};
use fpguard::relation::{apply_encoding, buckets_from_decls, fit_encoding, parse_csv, EncodingMap, Relation, SchemaFile};
use fpguard::synth::{generate, SynthConfig};
use fpguard::transport::{SinkhornOptions, DEFAULT_COST_SCALE};
use fpguard::{FpError, Result};

const SEED_ENV: &str = "FPGUARD_SEED";

#[derive(Parser)]
#[command(name = "fpguard", version, about = "Correlation-aware database fingerprinting")]
struct Cli {
    /// JSON object of option defaults keyed by snake_case flag name.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded synthetic coded relation.
    Synth(SynthArgs),
    /// Encode a raw CSV into integer codes.
    Encode(EncodeArgs),
    /// Insert an SP's fingerprint.
    Fingerprint(FingerprintArgs),
    /// Extract a fingerprint from a leaked copy and rank candidate SPs.
    Extract(ExtractArgs),
    /// Run an attack on a fingerprinted copy.
    Attack {
        #[command(subcommand)]
        kind: AttackCmd,
    },
    /// Run an owner-side defense.
    Defend {
        #[command(subcommand)]
        kind: DefendCmd,
    },
    /// Utility of a modified relation against its original.
    Metrics(MetricsArgs),
    /// Run a robustness-and-utility table.
    Experiment(ExperimentArgs),
    /// Print the scheme's false-hit bounds.
    Info(InfoArgs),
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Coded relation CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Schema JSON with cardinalities.
    #[arg(long)]
    schema: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct OutArgs {
    /// Output relation CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON report path; printed to stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct KeyArgs {
    #[arg(long)]
    secret: Option<String>,
    #[arg(long)]
    serial: Option<u64>,
    #[arg(long)]
    gamma_inv: Option<u64>,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    bit_level: Option<u32>,
}

#[derive(Args, Clone)]
struct PriorArgs {
    /// Relation the priors are estimated from (same schema as --data).
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Number of K-means communities for row-wise priors.
    #[arg(long)]
    communities: Option<usize>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    schema_out: Option<PathBuf>,
}

#[derive(Args)]
struct EncodeArgs {
    /// Raw CSV with a header row.
    #[arg(long)]
    input: Option<PathBuf>,
    /// Raw schema: primary key and attribute declarations.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Reuse a previously fitted encoding instead of fitting one.
    #[arg(long)]
    encoding: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    schema_out: Option<PathBuf>,
    #[arg(long)]
    encoding_out: Option<PathBuf>,
}

#[derive(Args)]
struct FingerprintArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    key: KeyArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ExtractArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    key: KeyArgs,
    /// Candidate SP serials to rank.
    #[arg(long, value_delimiter = ',')]
    candidates: Option<Vec<u64>>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Subcommand)]
enum AttackCmd {
    /// Flip the LSB of a random fraction of cells.
    Rnd(RndArgs),
    /// Column-wise correlation attack.
    Col(ColAttackArgs),
    /// Row-wise correlation attack.
    Row(RowAttackArgs),
    /// Row-wise attack followed by the column-wise attack.
    Integrated(IntegratedArgs),
}

#[derive(Args)]
struct RndArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    fraction: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct ColAttackArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    prior: PriorArgs,
    #[arg(long)]
    tau_col_atk: Option<f64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct RowAttackArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    prior: PriorArgs,
    #[arg(long)]
    tau_row_atk: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct IntegratedArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    prior: PriorArgs,
    #[arg(long)]
    tau_row_atk: Option<f64>,
    #[arg(long)]
    tau_col_atk: Option<f64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Subcommand)]
enum DefendCmd {
    /// Transport drifted marginals back toward the prior.
    Col(ColDefendArgs),
    /// Rewrite drifted non-fingerprinted records to their community mode.
    Row(RowDefendArgs),
    /// Fingerprint, then apply the row and column defenses.
    Robust(RobustArgs),
}

#[derive(Args, Clone)]
struct ColumnDefenseArgs {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    tau_col_dfs: Option<f64>,
    #[arg(long)]
    cost_scale: Option<f64>,
}

#[derive(Args)]
struct ColDefendArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    prior: PriorArgs,
    /// Fingerprint report listing the marked positions.
    #[arg(long)]
    marks: Option<PathBuf>,
    #[command(flatten)]
    col: ColumnDefenseArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct RowDefendArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    prior: PriorArgs,
    #[arg(long)]
    marks: Option<PathBuf>,
    #[arg(long)]
    gamma_inv: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct RobustArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    prior: PriorArgs,
    #[command(flatten)]
    key: KeyArgs,
    #[command(flatten)]
    col: ColumnDefenseArgs,
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args)]
struct MetricsArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    prior: PriorArgs,
    #[arg(long)]
    tau_col: Option<f64>,
    #[arg(long)]
    tau_row: Option<f64>,
    /// `freq:<attribute>:<threshold>` or `std:<attribute>`.
    #[arg(long = "query")]
    queries: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
#[value(rename_all = "snake_case")]
enum TableArg {
    AttackRounds,
    RndBaseline,
    RowDefense,
    Integrated,
}

impl From<TableArg> for Table {
    fn from(t: TableArg) -> Self {
        match t {
            TableArg::AttackRounds => Table::AttackRounds,
            TableArg::RndBaseline => Table::RndBaseline,
            TableArg::RowDefense => Table::RowDefense,
            TableArg::Integrated => Table::Integrated,
        }
    }
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long, value_enum)]
    table: Option<TableArg>,
    /// Coded relation to run on; a synthetic one is generated when absent.
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    gamma_inv: Option<u64>,
    #[arg(long)]
    length: Option<usize>,
    #[arg(long)]
    bit_level: Option<u32>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    communities: Option<usize>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON table output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InfoArgs {
    /// Number of SPs holding a copy.
    #[arg(long)]
    n_sp: Option<u64>,
    #[arg(long)]
    length: Option<usize>,
}

/// Option values from `--config`.
struct Config {
    values: Map<String, Value>,
}

impl Config {
    fn load(path: Option<&Path>) -> Result<Self> {
        let values = match path {
            None => Map::new(),
            Some(p) => match serde_json::from_str::<Value>(&read(p)?)? {
                Value::Object(m) => m,
                _ => return Err(FpError::InvalidParameter("config file must hold a JSON object".into())),
            },
        };
        Ok(Self { values })
    }

    fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<Option<T>> {
        if flag.is_some() {
            return Ok(flag);
        }
        match self.values.get(key) {
            None | Some(Value::Null) => Ok(None),
            Some(v) => serde_json::from_value(v.clone())
                .map(Some)
                .map_err(|e| FpError::InvalidParameter(format!("config `{key}`: {e}"))),
        }
    }

    fn or<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T> {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    fn need<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<T> {
        self.pick(flag, key)?
            .ok_or_else(|| FpError::InvalidParameter(format!("missing --{}", key.replace('_', "-"))))
    }

    fn seed(&self, flag: Option<u64>) -> Result<u64> {
        if let Some(s) = self.pick(flag, "seed")? {
            return Ok(s);
        }
        match std::env::var(SEED_ENV) {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| FpError::InvalidParameter(format!("{SEED_ENV} is not an unsigned integer"))),
            Err(_) => Err(FpError::InvalidParameter(format!(
                "no seed given: pass --seed, set `seed` in the config or set {SEED_ENV}"
            ))),
        }
    }

    fn section<T: DeserializeOwned + Default>(&self, key: &str) -> Result<T> {
        match self.values.get(key) {
            None => Ok(T::default()),
            Some(v) => serde_json::from_value(v.clone()).map_err(|e| FpError::InvalidParameter(format!("config `{key}`: {e}"))),
        }
    }

    fn whole<T: DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(Value::Object(self.values.clone())).map_err(|e| FpError::InvalidParameter(format!("config: {e}")))
    }
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path)
        .map_err(|e| FpError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)
        .map_err(|e| FpError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

fn emit<T: Serialize>(report: &T, path: Option<&Path>) -> Result<()> {
    let text = to_json(report);
    match path {
        Some(p) => write(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// A loaded coded relation and its schema.
struct Loaded {
    relation: Relation,
    schema: SchemaFile,
}

impl Loaded {
    fn write_to(&self, relation: &Relation, path: &Path) -> Result<()> {
        write(path, &relation.to_csv(&self.schema.primary_key))
    }
}

fn load(cfg: &Config, args: &DataArgs) -> Result<Loaded> {
    let data: PathBuf = cfg.need(args.data.clone(), "data")?;
    let schema_path: PathBuf = cfg.need(args.schema.clone(), "schema")?;
    let schema = SchemaFile::from_json(&read(&schema_path)?)?;
    let relation = Relation::from_csv(&read(&data)?, &schema)?;
    Ok(Loaded { relation, schema })
}

fn load_reference(cfg: &Config, prior: &PriorArgs, loaded: &Loaded) -> Result<Relation> {
    let path: PathBuf = cfg.need(prior.reference.clone(), "reference")?;
    let reference = Relation::from_csv(&read(&path)?, &loaded.schema)?;
    Ok(reference)
}

fn communities(cfg: &Config, prior: &PriorArgs, reference: &Relation, seed: u64) -> Result<CommunityAssignment> {
    let c = cfg.or(prior.communities, "communities", 10)?;
    kmeans_communities(reference, c, seed)
}

fn key(cfg: &Config, args: &KeyArgs) -> Result<FingerprintKey> {
    let secret: String = cfg.need(args.secret.clone(), "secret")?;
    let k = FingerprintKey::new(
        secret.into_bytes(),
        cfg.need(args.serial, "serial")?,
        cfg.or(args.gamma_inv, "gamma_inv", 35)?,
        cfg.or(args.length, "length", 128)?,
    )
    .with_bit_level(cfg.or(args.bit_level, "bit_level", 1)?);
    k.validate()?;
    Ok(k)
}

fn column_defense(cfg: &Config, args: &ColumnDefenseArgs, n_attrs: usize, seed: u64) -> Result<ColumnDefenseConfig> {
    let lambdas: Option<Vec<f64>> = cfg.pick(None, "lambdas")?;
    let lambda = cfg.or(args.lambda, "lambda", 500.0)?;
    let lambdas = lambdas.unwrap_or_else(|| vec![lambda; n_attrs]);
    Ok(ColumnDefenseConfig {
        tau_col_dfs: cfg.or(args.tau_col_dfs, "tau_col_dfs", DEFAULT_TAU_COL_DFS)?,
        lambdas,
        cost_scale: cfg.or(args.cost_scale, "cost_scale", DEFAULT_COST_SCALE)?,
        sinkhorn: cfg.or(None, "sinkhorn", SinkhornOptions::default())?,
        seed,
    })
}

/// Written by `fingerprint` and `defend robust`; read back by the defenses.
#[derive(Serialize, Deserialize)]
struct FingerprintReport {
    serial: u64,
    gamma_inv: u64,
    length: usize,
    bit_level: u32,
    code: FingerprintCode,
    marked_records: usize,
    changed_cells: usize,
    skipped: usize,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    defense: Option<DefenseSummary>,
    marked: Vec<MarkedPosition>,
}

#[derive(Serialize, Deserialize)]
struct DefenseSummary {
    changed_cells: usize,
    per_chg: f64,
    #[serde(flatten)]
    detail: Value,
}

fn summarize(report: &DefenseReport) -> DefenseSummary {
    DefenseSummary {
        changed_cells: report.changed_positions.len(),
        per_chg: report.per_chg,
        detail: json!({ "attributes": report.attributes, "communities": report.communities }),
    }
}

fn load_marks(cfg: &Config, marks: &Option<PathBuf>) -> Result<Vec<MarkedPosition>> {
    let path: PathBuf = cfg.need(marks.clone(), "marks")?;
    let report: FingerprintReport = serde_json::from_str(&read(&path)?)?;
    Ok(report.marked)
}

#[derive(Serialize)]
struct AttackSummary {
    attack: &'static str,
    per_chg: f64,
    changed_cells: usize,
    rounds_executed: usize,
}

fn attack_summary(attack: &'static str, r: &AttackReport) -> AttackSummary {
    AttackSummary {
        attack,
        per_chg: r.per_chg,
        changed_cells: r.changed_positions.len(),
        rounds_executed: r.rounds_executed,
    }
}

fn parse_query(text: &str) -> Result<StatQuery> {
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        ["freq", attribute, threshold] => Ok(StatQuery::FrequencyAtLeast {
            attribute: attribute.to_string(),
            threshold: threshold
                .parse()
                .map_err(|_| FpError::InvalidParameter(format!("bad threshold in query `{text}`")))?,
        }),
        ["std", attribute] => Ok(StatQuery::StdDev {
            attribute: attribute.to_string(),
        }),
        _ => Err(FpError::InvalidParameter(format!(
            "query `{text}` is neither freq:<attr>:<threshold> nor std:<attr>"
        ))),
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = Config::load(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => {
            let mut synth: SynthConfig = cfg.section("synth")?;
            synth.rows = cfg.or(a.rows, "rows", synth.rows)?;
            synth.seed = cfg.seed(a.seed)?;
            let relation = generate(&synth)?;
            let out: PathBuf = cfg.need(a.out, "out")?;
            let schema_out: PathBuf = cfg.need(a.schema_out, "schema_out")?;
            write(&out, &relation.to_csv("id"))?;
            write(&schema_out, &(SchemaFile::for_relation("id", &relation).to_json() + "\n"))?;
        }
        Command::Encode(a) => {
            let schema = SchemaFile::from_json(&read(&cfg.need::<PathBuf>(a.schema, "schema")?)?)?;
            let raw = parse_csv(&read(&cfg.need::<PathBuf>(a.input, "input")?)?, &schema)?;
            let map = match cfg.pick::<PathBuf>(a.encoding, "encoding")? {
                Some(p) => EncodingMap::from_json(&read(&p)?)?,
                None => fit_encoding(&raw, &buckets_from_decls(&schema.attributes))?,
            };
            let relation = apply_encoding(&raw, &map)?;
            write(&cfg.need::<PathBuf>(a.out, "out")?, &relation.to_csv(&schema.primary_key))?;
            if let Some(p) = cfg.pick::<PathBuf>(a.schema_out, "schema_out")? {
                write(&p, &(SchemaFile::for_relation(&schema.primary_key, &relation).to_json() + "\n"))?;
            }
            if let Some(p) = cfg.pick::<PathBuf>(a.encoding_out, "encoding_out")? {
                write(&p, &(map.to_json() + "\n"))?;
            }
        }
        Command::Fingerprint(a) => {
            let loaded = load(&cfg, &a.data)?;
            let key = key(&cfg, &a.key)?;
            let ins = insert(&loaded.relation, &key)?;
            loaded.write_to(&ins.relation, &cfg.need::<PathBuf>(a.out.out, "out")?)?;
            let report = FingerprintReport {
                serial: key.sp_serial,
                gamma_inv: key.gamma_inv,
                length: key.length,
                bit_level: key.bit_level,
                code: key.code(),
                marked_records: ins.marked.len(),
                changed_cells: loaded.relation.diff_positions(&ins.relation)?.len(),
                skipped: ins.skipped,
                defense: None,
                marked: ins.marked,
            };
            emit(&report, cfg.pick(a.out.report, "report")?.as_deref())?;
        }
        Command::Extract(a) => {
            let loaded = load(&cfg, &a.data)?;
            let mut key_args = a.key.clone();
            // The serial only selects whose code to compare against; extraction itself ignores it.
            let scored_serial = cfg.pick(key_args.serial, "serial")?;
            key_args.serial = Some(scored_serial.unwrap_or(0));
            let key = key(&cfg, &key_args)?;
            let ex = extract(&loaded.relation, &key)?;
            let recovered = ex.recovered_bits();
            let bits: String = recovered
                .iter()
                .map(|b| match b {
                    Some(true) => '1',
                    Some(false) => '0',
                    None => '?',
                })
                .collect();
            let candidates: Vec<u64> = cfg.or(a.candidates, "candidates", Vec::new())?;
            let secret = key.secret_key.clone();
            let mut ranking = Vec::new();
            for &s in &candidates {
                let code = gen_fingerprint(&secret, s, key.length);
                ranking.push((s, matches_partial(&code, &recovered)?));
            }
            ranking.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
            let mut report = json!({
                "outcome": match ex.outcome { Outcome::Code(_) => "code", Outcome::NoneSuspected => "none_suspected" },
                "code": ex.code(),
                "bits": bits,
                "unresolved": recovered.iter().filter(|b| b.is_none()).count(),
                "ranking": ranking.iter().map(|(s, m)| json!({"serial": s, "matches": m})).collect::<Vec<_>>(),
            });
            if let Some(serial) = scored_serial {
                let innocents: Vec<FingerprintCode> = candidates
                    .iter()
                    .filter(|&&s| s != serial)
                    .map(|&s| gen_fingerprint(&secret, s, key.length))
                    .collect();
                let rob = accusable_rank_partial(&recovered, &key.code(), &innocents)?;
                report["serial"] = json!(serial);
                report["num_cmp"] = json!(rob.num_cmp);
                report["rank"] = json!(rob.rank);
                report["m0"] = json!(rob.m0);
            }
            emit(&report, cfg.pick(a.report, "report")?.as_deref())?;
        }
        Command::Attack { kind } => run_attack(&cfg, kind)?,
        Command::Defend { kind } => run_defend(&cfg, kind)?,
        Command::Metrics(a) => {
            let loaded = load(&cfg, &a.data)?;
            let reference = load_reference(&cfg, &a.prior, &loaded)?;
            let seed = cfg.seed(a.seed)?;
            let comm = communities(&cfg, &a.prior, &reference, seed)?;
            let queries_text: Vec<String> = if a.queries.is_empty() { cfg.or(None, "query", Vec::new())? } else { a.queries };
            let queries = queries_text.iter().map(|q| parse_query(q)).collect::<Result<Vec<_>>>()?;
            let report = utility_report(
                &loaded.relation,
                &reference,
                &comm,
                cfg.or(a.tau_col, "tau_col", 1e-4)?,
                cfg.or(a.tau_row, "tau_row", 10.0)?,
                &queries,
            )?;
            let stats: BTreeMap<&str, f64> = report.stats.iter().map(|(k, v)| (k.as_str(), *v)).collect();
            let out = json!({
                "acc": report.acc,
                "p_col": {"tau_col": report.tau_col, "value": report.p_col},
                "p_row": {"tau_row": report.tau_row, "value": report.p_row},
                "p_cov": report.p_cov,
                "per_chg": report.per_chg,
                "stats": stats,
            });
            emit(&out, cfg.pick(a.report, "report")?.as_deref())?;
        }
        Command::Experiment(a) => {
            let table: Table = match a.table {
                Some(t) => t.into(),
                None => cfg.need::<String>(None, "table")?.parse()?,
            };
            let mut s: ExperimentSettings = cfg.whole()?;
            s.seed = cfg.seed(a.seed)?;
            s.gamma_inv = a.gamma_inv.unwrap_or(s.gamma_inv);
            s.length = a.length.unwrap_or(s.length);
            s.bit_level = a.bit_level.unwrap_or(s.bit_level);
            s.rounds = a.rounds.unwrap_or(s.rounds);
            s.communities = a.communities.unwrap_or(s.communities);
            s.lambda = a.lambda.unwrap_or(s.lambda);
            let relation = if cfg.pick::<PathBuf>(a.data.data.clone(), "data")?.is_some() {
                load(&cfg, &a.data)?.relation
            } else {
                let mut synth: SynthConfig = cfg.section("synth")?;
                synth.rows = cfg.or(a.rows, "rows", synth.rows)?;
                synth.seed = s.seed;
                generate(&synth)?
            };
            let result = experiment::run(table, &relation, &s)?;
            print!("{}", result.to_text());
            if let Some(p) = cfg.pick::<PathBuf>(a.out, "out")? {
                write(&p, &(result.to_json() + "\n"))?;
            }
        }
        Command::Info(a) => {
            let n_sp = cfg.or(a.n_sp, "n_sp", 1)?;
            let length = cfg.or(a.length, "length", 128usize)?;
            let length = u32::try_from(length).map_err(|_| FpError::InvalidParameter("length too large".into()))?;
            let b = SchemeBounds::new(n_sp, length);
            println!("fpguard {}", env!("CARGO_PKG_VERSION"));
            println!("SPs: {n_sp}, fingerprint length: {length}");
            println!("misattribution bound (|SP|-1)/2^L: {:e}", b.misattribution);
            println!("misdiagnosis bound   |SP|/2^L:     {:e}", b.misdiagnosis);
        }
    }
    Ok(())
}

fn finish_attack(cfg: &Config, name: &'static str, loaded: &Loaded, out: OutArgs, result: (Relation, AttackReport)) -> Result<()> {
    let (pirated, report) = result;
    loaded.write_to(&pirated, &cfg.need::<PathBuf>(out.out, "out")?)?;
    emit(&attack_summary(name, &report), cfg.pick(out.report, "report")?.as_deref())
}

fn run_attack(cfg: &Config, kind: AttackCmd) -> Result<()> {
    match kind {
        AttackCmd::Rnd(a) => {
            let l = load(cfg, &a.data)?;
            let result = atk_rnd(&l.relation, cfg.need(a.fraction, "fraction")?, cfg.seed(a.seed)?)?;
            finish_attack(cfg, "rnd", &l, a.out, result)
        }
        AttackCmd::Col(a) => {
            let l = load(cfg, &a.data)?;
            let reference = load_reference(cfg, &a.prior, &l)?;
            let result = atk_col(
                &l.relation,
                &joint_distributions(&reference),
                cfg.or(a.tau_col_atk, "tau_col_atk", 1e-4)?,
                cfg.or(a.rounds, "rounds", 1)?,
                cfg.seed(a.seed)?,
            )?;
            finish_attack(cfg, "col", &l, a.out, result)
        }
        AttackCmd::Row(a) => {
            let l = load(cfg, &a.data)?;
            let reference = load_reference(cfg, &a.prior, &l)?;
            let comm = communities(cfg, &a.prior, &reference, cfg.seed(a.seed)?)?;
            let s = stat_relations(&reference, &comm)?;
            let result = atk_row(&l.relation, &s, &comm, cfg.or(a.tau_row_atk, "tau_row_atk", 0.1)?)?;
            finish_attack(cfg, "row", &l, a.out, result)
        }
        AttackCmd::Integrated(a) => {
            let l = load(cfg, &a.data)?;
            let reference = load_reference(cfg, &a.prior, &l)?;
            let seed = cfg.seed(a.seed)?;
            let comm = communities(cfg, &a.prior, &reference, seed)?;
            let s = stat_relations(&reference, &comm)?;
            let result = atk_integrated(
                &l.relation,
                &s,
                &comm,
                &joint_distributions(&reference),
                cfg.or(a.tau_row_atk, "tau_row_atk", 0.1)?,
                cfg.or(a.tau_col_atk, "tau_col_atk", 1e-4)?,
                cfg.or(a.rounds, "rounds", 1)?,
                seed,
            )?;
            finish_attack(cfg, "integrated", &l, a.out, result)
        }
    }
}

fn run_defend(cfg: &Config, kind: DefendCmd) -> Result<()> {
    match kind {
        DefendCmd::Col(a) => {
            let loaded = load(cfg, &a.data)?;
            let reference = load_reference(cfg, &a.prior, &loaded)?;
            let marks = load_marks(cfg, &a.marks)?;
            let col = column_defense(cfg, &a.col, loaded.relation.n_attrs(), cfg.seed(a.seed)?)?;
            let (out, report) = dfs_col(&loaded.relation, &joint_distributions(&reference), &marks, &col)?;
            loaded.write_to(&out, &cfg.need::<PathBuf>(a.out.out, "out")?)?;
            emit(&summarize(&report), cfg.pick(a.out.report, "report")?.as_deref())
        }
        DefendCmd::Row(a) => {
            let loaded = load(cfg, &a.data)?;
            let reference = load_reference(cfg, &a.prior, &loaded)?;
            let marks = load_marks(cfg, &a.marks)?;
            let comm = communities(cfg, &a.prior, &reference, cfg.seed(a.seed)?)?;
            let s = stat_relations(&reference, &comm)?;
            let gamma_inv: u64 = cfg.or(a.gamma_inv, "gamma_inv", 35)?;
            if gamma_inv == 0 {
                return Err(FpError::InvalidParameter("gamma_inv must be >= 1".into()));
            }
            let (out, report) = dfs_row(&loaded.relation, &s, &comm, 1.0 / gamma_inv as f64, &marks)?;
            loaded.write_to(&out, &cfg.need::<PathBuf>(a.out.out, "out")?)?;
            emit(&summarize(&report), cfg.pick(a.out.report, "report")?.as_deref())
        }
        DefendCmd::Robust(a) => {
            let loaded = load(cfg, &a.data)?;
            // The owner's priors default to the relation being shared.
            let reference = match cfg.pick::<PathBuf>(a.prior.reference.clone(), "reference")? {
                Some(_) => load_reference(cfg, &a.prior, &loaded)?,
                None => loaded.relation.clone(),
            };
            let key = key(cfg, &a.key)?;
            let seed = cfg.seed(a.seed)?;
            let comm = communities(cfg, &a.prior, &reference, seed)?;
            let s = stat_relations(&reference, &comm)?;
            let col = column_defense(cfg, &a.col, loaded.relation.n_attrs(), seed)?;
            let robust = robust_fingerprint(&loaded.relation, &key, &s, &joint_distributions(&reference), &comm, &col)?;
            loaded.write_to(&robust.relation, &cfg.need::<PathBuf>(a.out.out, "out")?)?;
            let report = FingerprintReport {
                serial: key.sp_serial,
                gamma_inv: key.gamma_inv,
                length: key.length,
                bit_level: key.bit_level,
                code: key.code(),
                marked_records: robust.marked.len(),
                changed_cells: loaded.relation.diff_positions(&robust.relation)?.len(),
                skipped: robust.skipped,
                defense: Some(summarize(&robust.report)),
                marked: robust.marked,
            };
            emit(&report, cfg.pick(a.out.report, "report")?.as_deref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = json!({ "error": e.kind(), "message": e.to_string() });
            eprintln!("{body}");
            ExitCode::from(if e.is_io() { 1 } else { 2 })
        }
    }
}
