//! Command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::cotravel::{self, CoTravelIndex, DEFAULT_WINDOW_SECONDS};
use crate::csv_io;
use crate::error::{Error, Result};
use crate::event::{CardId, DateRange, EventKind, TimeGranularity};
use crate::index::{read_snapshot, write_snapshot, CalendarSpec, SignatureCalendar};
use crate::query::{self, Constraint};
use crate::release::{self, Adjacency, Mechanism, PostProcess, PrivacyParams};
use crate::service::{self, ServiceConfig};
use crate::store::EventStore;
use crate::synth::{self, SyntheticPopulationConfig};
use crate::unicity::{self, UnicityParams};

#[derive(Debug, Parser)]
#[command(name = "transit-reid", version, about = "Re-identification risk analysis for tap-on/tap-off records")]
pub struct Cli {
    /// Worker threads for parallel stages (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic population as CSV.
    Synth(SynthArgs),
    /// Load and validate CSV input, reporting malformed rows.
    Ingest(IngestArgs),
    /// Percentage of cards uniquely identified by n sampled touches.
    Unicity(UnicityArgs),
    /// Cards touching on at the same stop within a small window of a card.
    Cotravel(CotravelArgs),
    /// Count the cards matching a list of known-event constraints.
    Query(QueryArgs),
    /// Card-id gaps, card-type census and per-card timelines.
    Audit(AuditArgs),
    /// Aggregate counts per stop and time block, with calibrated noise.
    Release(ReleaseArgs),
    /// Serve the HTTP/JSON API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// CSV file or directory of CSV files.
    #[arg(long = "in", value_name = "PATH")]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Output file (default: stdout).
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PeriodArgs {
    /// First date included (YYYY-MM-DD).
    #[arg(long)]
    pub from: Option<NaiveDate>,
    /// Last date included (YYYY-MM-DD).
    #[arg(long)]
    pub to: Option<NaiveDate>,
}

impl PeriodArgs {
    fn period(&self) -> Result<Option<DateRange>> {
        match (self.from, self.to) {
            (None, None) => Ok(None),
            (f, t) => DateRange::new(f.unwrap_or(NaiveDate::MIN), t.unwrap_or(NaiveDate::MAX)).map(Some),
        }
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Population config (JSON). Defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Write the valid rows back out as normalised CSV.
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum LocationChoice {
    Both,
    With,
    Without,
}

impl LocationChoice {
    fn flags(self) -> Vec<bool> {
        match self {
            LocationChoice::Both => vec![true, false],
            LocationChoice::With => vec![true],
            LocationChoice::Without => vec![false],
        }
    }
}

#[derive(Debug, Args)]
pub struct UnicityArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Comma-separated granularities, or `all`.
    #[arg(long, default_value = "all")]
    pub granularity: String,
    /// Cardinalities as `a..b` (inclusive) or a comma-separated list.
    #[arg(long, default_value = "1..5")]
    pub n: String,
    #[arg(long, value_enum, default_value_t = LocationChoice::Both)]
    pub location: LocationChoice,
    /// touchOn, touchOff or both.
    #[arg(long, default_value = "touchOn")]
    pub kind: EventKind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub period: PeriodArgs,
    /// Leave out cards with fewer touches than the largest n.
    #[arg(long)]
    pub exclude_short: bool,
    /// Reuse calendar snapshots stored in this directory.
    #[arg(long)]
    pub cache_dir: Option<PathBuf>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct CotravelArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub card: u64,
    /// Window in seconds, inclusive.
    #[arg(long, default_value_t = DEFAULT_WINDOW_SECONDS)]
    pub window: i64,
    /// Restrict to a single date.
    #[arg(long, conflicts_with_all = ["from", "to"])]
    pub date: Option<NaiveDate>,
    #[command(flatten)]
    pub period: PeriodArgs,
    /// Emit JSON with the paired touches instead of CSV.
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// JSON constraint list, or an object with a `constraints` field.
    #[arg(long)]
    pub constraints: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub preview: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct AuditArgs {
    #[command(subcommand)]
    pub report: AuditReport,
}

#[derive(Debug, Subcommand)]
pub enum AuditReport {
    /// Runs of unused card ids.
    Gaps {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = 1)]
        min_gap: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Cards and events per card type, flagging rare types.
    Types {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = query::DEFAULT_SENSITIVITY_THRESHOLD)]
        threshold: usize,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Every event of one card, as JSON.
    Timeline {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        card: u64,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MechanismChoice {
    Geometric,
    Laplace,
}

#[derive(Debug, Args)]
pub struct ReleaseArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long, default_value_t = release::DEFAULT_BLOCK_MINUTES)]
    pub block_minutes: u32,
    #[command(flatten)]
    pub period: PeriodArgs,
    #[arg(long, default_value_t = 1.0)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = MechanismChoice::Geometric)]
    pub mechanism: MechanismChoice,
    /// Protect whole cards, clamping each card's contribution per cell.
    #[arg(long, value_name = "N")]
    pub max_contribution: Option<u32>,
    /// Round noisy counts and clamp them at zero.
    #[arg(long)]
    pub round: bool,
    /// Publish true counts without noise.
    #[arg(long, conflicts_with_all = ["epsilon", "seed", "mechanism", "max_contribution", "round"])]
    pub exact: bool,
    /// Output CSV; the metadata sidecar goes to `<out>.meta.json`.
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Service config (JSON).
    #[arg(long, required_unless_present = "input")]
    pub config: Option<PathBuf>,
    /// Data path, when no config file is given.
    #[arg(long = "in", value_name = "PATH")]
    pub input: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: String,
}

/// Parse `args` (including the program name) and run. Returns the exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::InvalidParams("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::InvalidParams(e.to_string()))?;
    pool.install(|| dispatch(cli.command))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth_cmd(a),
        Command::Ingest(a) => ingest_cmd(a),
        Command::Unicity(a) => unicity_cmd(a),
        Command::Cotravel(a) => cotravel_cmd(a),
        Command::Query(a) => query_cmd(a),
        Command::Audit(a) => audit_cmd(a.report),
        Command::Release(a) => release_cmd(a),
        Command::Serve(a) => serve_cmd(a),
    }
}

fn open_out(out: &OutputArgs) -> Result<Box<dyn Write>> {
    Ok(match &out.out {
        Some(path) => Box::new(BufWriter::new(File::create(path).map_err(Error::UnwritableSink)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn finish(mut sink: Box<dyn Write>) -> Result<()> {
    sink.flush().map_err(Error::UnwritableSink)
}

fn write_json<T: serde::Serialize>(value: &T, out: &OutputArgs) -> Result<()> {
    let mut sink = open_out(out)?;
    serde_json::to_writer_pretty(&mut sink, value)?;
    writeln!(sink).map_err(Error::UnwritableSink)?;
    finish(sink)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(Error::UnreadableSource)?;
    Ok(serde_json::from_str(&text)?)
}

fn load(input: &InputArgs) -> Result<EventStore> {
    let outcome = csv_io::load_path(&input.input)?;
    for (file, e) in &outcome.errors {
        eprintln!("{}: skipped row {}: {}", file.display(), e.row, e.reason);
    }
    Ok(outcome.store)
}

fn synth_cmd(a: SynthArgs) -> Result<()> {
    let mut config: SyntheticPopulationConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => SyntheticPopulationConfig::default(),
    };
    if let Some(seed) = a.seed {
        config.seed = seed;
    }
    let store = synth::generate_population(&config)?;
    let sink = open_out(&a.output)?;
    csv_io::write_events(&store, sink)?;
    Ok(())
}

#[derive(serde::Serialize)]
#[serde(rename_all = "camelCase")]
struct IngestSummary {
    cards: usize,
    events: usize,
    malformed_rows: usize,
    period: Option<DateRange>,
}

fn ingest_cmd(a: IngestArgs) -> Result<()> {
    let outcome = csv_io::load_path(&a.input.input)?;
    for (file, e) in &outcome.errors {
        eprintln!("{}: skipped row {}: {}", file.display(), e.row, e.reason);
    }
    let store = &outcome.store;
    let summary = IngestSummary {
        cards: store.card_count(),
        events: store.event_count(),
        malformed_rows: outcome.errors.len(),
        period: store.date_range(),
    };
    if a.output.out.is_some() {
        csv_io::write_events(store, open_out(&a.output)?)?;
        serde_json::to_writer_pretty(io::stderr().lock(), &summary)?;
        eprintln!();
        return Ok(());
    }
    write_json(&summary, &a.output)
}

fn parse_granularities(raw: &str) -> Result<Vec<TimeGranularity>> {
    if raw.eq_ignore_ascii_case("all") {
        return Ok(TimeGranularity::ALL.to_vec());
    }
    raw.split(',').map(|s| s.trim().parse()).collect()
}

fn parse_cardinalities(raw: &str) -> Result<Vec<usize>> {
    let bad = || Error::InvalidParams(format!("bad cardinality list `{raw}`"));
    if let Some((lo, hi)) = raw.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if lo > hi {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    raw.split(',').map(|s| s.trim().parse().map_err(|_| bad())).collect()
}

fn cache_file(dir: &Path, fingerprint: u64, spec: &CalendarSpec) -> PathBuf {
    let period = spec.period.map_or_else(|| "all".to_string(), |p| format!("{}_{}", p.from, p.to));
    dir.join(format!(
        "{fingerprint:016x}-{}-{}-{}-{period}.cal",
        spec.granularity,
        if spec.include_location { "loc" } else { "noloc" },
        spec.kind.name()
    ))
}

fn cached_calendar(dir: &Path, store: &EventStore, spec: CalendarSpec) -> Result<SignatureCalendar> {
    let path = cache_file(dir, store.fingerprint(), &spec);
    if let Ok(file) = File::open(&path) {
        match read_snapshot(file) {
            Ok(cal) if cal.store_fingerprint() == store.fingerprint() && *cal.spec() == spec => return Ok(cal),
            Ok(_) => eprintln!("{}: stale snapshot, rebuilding", path.display()),
            Err(e) => eprintln!("{}: {e}, rebuilding", path.display()),
        }
    }
    let cal = SignatureCalendar::build(store, spec);
    fs::create_dir_all(dir).map_err(Error::UnwritableSink)?;
    let tmp = path.with_extension("tmp");
    write_snapshot(&cal, File::create(&tmp).map_err(Error::UnwritableSink)?)?;
    fs::rename(&tmp, &path).map_err(Error::UnwritableSink)?;
    Ok(cal)
}

fn unicity_cmd(a: UnicityArgs) -> Result<()> {
    let store = load(&a.input)?;
    let params = UnicityParams {
        granularities: parse_granularities(&a.granularity)?,
        location_flags: a.location.flags(),
        cardinalities: parse_cardinalities(&a.n)?,
        kind: a.kind,
        seed: a.seed,
        period: a.period.period()?,
        exclude_short_cards: a.exclude_short,
    };
    let detail = match &a.cache_dir {
        Some(dir) => unicity::run_unicity_with(&store, &params, |s, spec| cached_calendar(dir, s, spec))?,
        None => unicity::run_unicity_detailed(&store, &params)?,
    };
    let mut sink = open_out(&a.output)?;
    detail.report.write_csv(&mut sink)?;
    finish(sink)
}

fn cotravel_cmd(a: CotravelArgs) -> Result<()> {
    let store = load(&a.input)?;
    let period = match a.date {
        Some(d) => Some(DateRange::single(d)),
        None => a.period.period()?,
    };
    let card = CardId(a.card);
    let matches = CoTravelIndex::build(&store).cotravellers(&store, card, a.window, period.as_ref())?;
    if a.json {
        return write_json(&matches, &a.output);
    }
    let mut sink = open_out(&a.output)?;
    cotravel::write_csv(&matches, &mut sink)?;
    finish(sink)
}

#[derive(serde::Deserialize)]
#[serde(untagged)]
enum ConstraintFile {
    List(Vec<Constraint>),
    Wrapped { constraints: Vec<Constraint> },
}

fn read_constraints(path: &Path) -> Result<Vec<Constraint>> {
    let text = fs::read_to_string(path).map_err(Error::UnreadableSource)?;
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    Ok(match serde_json::from_str(&text)? {
        ConstraintFile::List(c) | ConstraintFile::Wrapped { constraints: c } => c,
    })
}

fn query_cmd(a: QueryArgs) -> Result<()> {
    let store = load(&a.input)?;
    let constraints = match &a.constraints {
        Some(p) => read_constraints(p)?,
        None => Vec::new(),
    };
    let candidates = query::evaluate(&store, &constraints)?;
    write_json(&query::summarize(&store, &candidates, a.preview)?, &a.output)
}

fn audit_cmd(report: AuditReport) -> Result<()> {
    match report {
        AuditReport::Gaps { input, min_gap, output } => {
            let gaps = query::id_gap_scan(&load(&input)?, min_gap)?;
            let mut sink = open_out(&output)?;
            query::write_gaps_csv(&gaps, &mut sink)?;
            finish(sink)
        }
        AuditReport::Types { input, threshold, output } => {
            let census = query::card_type_census(&load(&input)?, threshold);
            let mut sink = open_out(&output)?;
            query::write_census_csv(&census, &mut sink)?;
            finish(sink)
        }
        AuditReport::Timeline { input, card, output } => {
            write_json(&query::card_timeline(&load(&input)?, CardId(card))?, &output)
        }
    }
}

fn release_cmd(a: ReleaseArgs) -> Result<()> {
    let store = load(&a.input)?;
    let privacy = (!a.exact).then(|| PrivacyParams {
        epsilon: a.epsilon,
        seed: a.seed,
        post_process: if a.round { PostProcess::RoundAndClampToZero } else { PostProcess::None },
        adjacency: a
            .max_contribution
            .map_or(Adjacency::EventLevel, |m| Adjacency::CardLevel { max_contribution: m }),
        mechanism: match a.mechanism {
            MechanismChoice::Geometric => Mechanism::Geometric,
            MechanismChoice::Laplace => Mechanism::Laplace,
        },
    });
    let (table, metadata) = release::release(&store, a.block_minutes, a.period.period()?, privacy.as_ref())?;
    let mut sink = open_out(&a.output)?;
    release::write_csv(&table, &mut sink)?;
    finish(sink)?;
    if let (Some(meta), Some(out)) = (metadata, &a.output.out) {
        let mut sidecar = out.clone().into_os_string();
        sidecar.push(".meta.json");
        write_json(&meta, &OutputArgs { out: Some(sidecar.into()) })?;
    }
    Ok(())
}

fn serve_cmd(a: ServeArgs) -> Result<()> {
    let config = match (&a.config, &a.input) {
        (Some(p), _) => read_json::<ServiceConfig>(p)?,
        (None, Some(data)) => ServiceConfig {
            data_path: data.clone(),
            bind_address: a.bind.clone(),
            max_candidate_preview: 50,
            request_timeout_seconds: 30,
        },
        (None, None) => unreachable!("clap requires one of them"),
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(Error::UnreadableSource)?;
    runtime.block_on(service::serve(config))
}
