//! `pfm` argument parsing and dispatch.
//!
//! Every mutating subcommand becomes one [`Command`] executed against the
//! store; reads print JSON, except where a CSV or text format is the natural
//! output (EVM rows, status exports, the CAR, the integration ledger).

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use portfolio_core::evm::snapshots_to_csv;
use portfolio_core::ids::{ActivityId, ChangeRequestId, IntegrationId, PackageId, ProductId, SdkGroupId};
use portfolio_core::kpp::{EnvironmentClass, EvidenceKind};
use portfolio_core::lifecycle::{render_car_text, Phase};
use portfolio_core::planning::{ActivityEdit, ActivitySpec, ChangeField, ChangeLevel, ChangeTarget, CrState, FieldValue};
use portfolio_core::stack::{manifest_to_text, Constraint, InclusionRule, PolicyItem, PolicyStatus, Version};
use portfolio_core::store::{Store, STORE_ENV};
use portfolio_core::{Clock, Command, Error, Money, NodeId, Period, PortfolioConfig, Ratio, Result, Role};

use crate::{error_line, exit_code};

#[derive(Parser, Debug)]
#[command(name = "pfm", version, about = "Portfolio planning, earned value, change control and stack curation")]
struct Cli {
    /// Store directory; overrides the PORTFOLIO_STORE environment variable.
    #[arg(long, global = true, env = STORE_ENV)]
    store: Option<PathBuf>,
    /// Actor role for mutating commands.
    #[arg(long, global = true, env = "PFM_ROLE", default_value = "team")]
    role: String,
    /// Stepping clock starting at this RFC 3339 instant, for reproducible logs.
    #[arg(long, global = true, env = "PFM_CLOCK", hide = true)]
    clock: Option<String>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Create the portfolio and its horizon.
    Init {
        #[arg(long)]
        name: String,
        #[arg(long)]
        start_fy: i32,
        #[arg(long)]
        years: u32,
        /// JSON file with a PortfolioConfig.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Show or replace the portfolio configuration.
    Config {
        #[arg(long)]
        set: Option<PathBuf>,
    },
    #[command(subcommand)]
    Group(GroupCmd),
    #[command(subcommand)]
    Product(ProductCmd),
    /// Create a coarse planning package for one product and fiscal year.
    Plan {
        #[arg(long)]
        product: String,
        #[arg(long)]
        fy: i32,
        #[arg(long)]
        budget: String,
        #[arg(long, default_value = "")]
        narrative: String,
    },
    #[command(subcommand)]
    Edit(EditCmd),
    /// Refine a package into activities: `--activity 'TITLE|FRACTION|START|END[|SCOPE]'`.
    Refine {
        #[arg(long)]
        package: String,
        #[arg(long = "activity")]
        activities: Vec<String>,
        /// JSON file holding a list of activity specs instead.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    Finalize {
        #[arg(long)]
        activity: String,
        #[arg(long)]
        criteria: String,
        #[arg(long, default_value = "")]
        staffing: String,
    },
    Baseline {
        #[arg(long)]
        fy: i32,
    },
    Start {
        #[arg(long)]
        activity: String,
        #[arg(long)]
        period: String,
    },
    Complete {
        #[arg(long)]
        activity: String,
        #[arg(long)]
        period: String,
    },
    Cost {
        #[arg(long)]
        activity: String,
        #[arg(long)]
        period: String,
        #[arg(long)]
        amount: String,
    },
    Progress {
        #[arg(long)]
        activity: String,
        #[arg(long)]
        period: String,
        #[arg(long)]
        fraction: String,
    },
    /// Earned-value rollups. Without a subcommand, prints one node's row.
    #[command(args_conflicts_with_subcommands = true)]
    Evm {
        #[command(subcommand)]
        cmd: Option<EvmCmd>,
        #[command(flatten)]
        row: RollupArgs,
    },
    /// Struggling products as of a period.
    Alerts {
        #[arg(long)]
        period: String,
    },
    #[command(subcommand)]
    Cr(CrCmd),
    #[command(subcommand)]
    Integration(IntegrationCmd),
    #[command(subcommand)]
    Lifecycle(LifecycleCmd),
    #[command(subcommand)]
    Snapshot(SnapshotCmd),
    /// Capability Assessment Report for a fiscal year.
    Car {
        #[arg(long)]
        fy: i32,
        #[arg(long, default_value = "text", value_parser = ["text", "json"])]
        format: String,
    },
    #[command(subcommand)]
    Stack(StackCmd),
    /// Execute one command given as JSON.
    Exec {
        json: String,
    },
    /// Print the command log.
    Log,
    /// Replay the log and check evidence digests.
    Verify,
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
}

#[derive(Subcommand, Debug)]
enum GroupCmd {
    Add {
        #[arg(long)]
        name: String,
    },
    Rename {
        #[arg(long)]
        id: String,
        #[arg(long)]
        name: String,
    },
    List,
}

#[derive(Subcommand, Debug)]
enum ProductCmd {
    Add {
        #[arg(long)]
        group: String,
        #[arg(long)]
        name: String,
        #[arg(long, default_value_t = 4)]
        goal: u32,
        #[arg(long)]
        team: Option<String>,
    },
    Rename {
        #[arg(long)]
        id: String,
        #[arg(long)]
        name: String,
    },
    List,
}

#[derive(Subcommand, Debug)]
enum EditCmd {
    Package {
        #[arg(long)]
        id: String,
        #[arg(long)]
        narrative: Option<String>,
        #[arg(long)]
        budget: Option<String>,
    },
    Activity {
        #[arg(long)]
        id: String,
        #[arg(long)]
        title: Option<String>,
        #[arg(long)]
        scope: Option<String>,
        #[arg(long)]
        start: Option<String>,
        #[arg(long)]
        end: Option<String>,
        #[arg(long)]
        fraction: Option<String>,
    },
}

#[derive(Args, Debug)]
struct RollupArgs {
    /// `portfolio` or a group, product or activity id.
    #[arg(long)]
    node: Option<String>,
    #[arg(long)]
    period: Option<String>,
    #[arg(long)]
    json: bool,
}

#[derive(Subcommand, Debug)]
enum EvmCmd {
    Rollup {
        #[arg(long)]
        node: String,
        #[arg(long)]
        period: String,
        #[arg(long)]
        json: bool,
    },
    Series {
        #[arg(long)]
        node: String,
        #[arg(long)]
        from: Option<String>,
        #[arg(long)]
        to: Option<String>,
        #[arg(long)]
        json: bool,
    },
}

#[derive(Subcommand, Debug)]
enum CrCmd {
    /// Draft a change request and submit it for review.
    Propose {
        #[arg(long, value_parser = ["L1", "L2"])]
        level: String,
        /// ENTITY FIELD OLD NEW; repeatable.
        #[arg(long = "target", num_args = 4, value_names = ["ENTITY", "FIELD", "OLD", "NEW"], required = true)]
        targets: Vec<String>,
        #[arg(long)]
        rationale: String,
        #[arg(long)]
        effective: String,
        /// Leave the request drafted.
        #[arg(long)]
        draft_only: bool,
    },
    Submit {
        #[arg(long)]
        id: String,
        #[arg(long)]
        expected_revision: Option<u64>,
    },
    Review {
        #[arg(long)]
        id: String,
        #[arg(long, conflicts_with = "reject", required_unless_present = "reject")]
        approve: bool,
        #[arg(long)]
        reject: bool,
        #[arg(long, default_value = "")]
        note: String,
        #[arg(long)]
        expected_revision: Option<u64>,
    },
    Apply {
        #[arg(long)]
        id: String,
        #[arg(long)]
        expected_revision: Option<u64>,
    },
    Show {
        #[arg(long)]
        id: String,
    },
    List {
        #[arg(long)]
        state: Option<String>,
    },
    /// Change-request audit log as NDJSON.
    Audit,
}

#[derive(Subcommand, Debug)]
enum IntegrationCmd {
    Record {
        #[arg(long)]
        product: String,
        #[arg(long)]
        capability: String,
        #[arg(long)]
        client: String,
        #[arg(long, default_value = "other")]
        env: String,
        #[arg(long)]
        note: Option<String>,
    },
    /// Attach a file as evidence.
    Evidence {
        #[arg(long)]
        id: String,
        #[arg(long, default_value = "test_output")]
        kind: String,
        #[arg(long)]
        file: PathBuf,
        /// Recorded location; defaults to the file path.
        #[arg(long)]
        uri: Option<String>,
        #[arg(long)]
        expected_revision: Option<u64>,
    },
    /// Submit for SME review.
    Submit {
        #[arg(long)]
        id: String,
        #[arg(long)]
        note: Option<String>,
        #[arg(long)]
        expected_revision: Option<u64>,
    },
    /// SME review.
    Review {
        #[arg(long)]
        id: String,
        #[arg(long, conflicts_with = "reject", required_unless_present = "reject")]
        endorse: bool,
        #[arg(long)]
        reject: bool,
        #[arg(long)]
        report: String,
        #[arg(long)]
        expected_revision: Option<u64>,
    },
    /// Final approval by the project director.
    Approve {
        #[arg(long)]
        id: String,
        #[arg(long)]
        expected_revision: Option<u64>,
    },
    /// KPP status of one product, or the portfolio score.
    Status {
        #[arg(long)]
        product: Option<String>,
    },
    Show {
        #[arg(long)]
        id: String,
    },
    List,
    /// Integration ledger as CSV.
    Ledger,
}

#[derive(Subcommand, Debug)]
enum LifecycleCmd {
    Advance {
        #[arg(long)]
        fy: i32,
        #[arg(long)]
        phase: String,
    },
    Show {
        #[arg(long)]
        fy: Option<i32>,
    },
}

#[derive(Subcommand, Debug)]
enum SnapshotCmd {
    /// Freeze the monthly snapshot for a period.
    Take {
        #[arg(long)]
        period: String,
    },
    Show {
        #[arg(long)]
        period: String,
    },
    Export {
        #[arg(long)]
        period: String,
        #[arg(long, default_value = "csv")]
        format: String,
    },
}

#[derive(Subcommand, Debug)]
enum StackCmd {
    /// Register a release: `--constraint 'hypre=[2.0,3.0)'`.
    Release {
        #[arg(long)]
        product: String,
        #[arg(long)]
        version: String,
        #[arg(long = "constraint")]
        constraints: Vec<String>,
    },
    #[command(subcommand)]
    Policy(PolicyCmd),
    #[command(subcommand)]
    Manifest(ManifestCmd),
    /// Constraint conflicts within a manifest.
    Compat {
        #[arg(long)]
        stack_version: String,
    },
}

#[derive(Subcommand, Debug)]
enum PolicyCmd {
    Define {
        #[arg(long)]
        id: String,
        #[arg(long)]
        description: String,
    },
    /// Record a checklist: `--item build-from-source=met`.
    Checklist {
        #[arg(long)]
        product: String,
        #[arg(long = "item")]
        items: Vec<String>,
    },
    Check {
        #[arg(long)]
        product: String,
        #[arg(long, default_value = "all_policies_met")]
        rule: String,
    },
    List,
}

#[derive(Subcommand, Debug)]
enum ManifestCmd {
    /// Compose a manifest: `--pin zfp=1.0.0`.
    Compose {
        #[arg(long)]
        name: String,
        #[arg(long)]
        stack_version: String,
        #[arg(long = "pin")]
        pins: Vec<String>,
        #[arg(long, default_value = "all_policies_met")]
        rule: String,
        #[arg(long = "meta")]
        metadata: Vec<String>,
    },
    Show {
        #[arg(long)]
        stack_version: String,
    },
    List,
}

/// Parses `argv` (including the program name), runs it, and returns the exit code.
pub fn run<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return 0;
            }
            if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                let _ = write!(err, "{e}");
                return 2;
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            let _ = writeln!(err, "{}", error_line("usage", first));
            return 2;
        }
    };
    match dispatch(cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "{}", error_line(e.kind(), &e.to_string()));
            exit_code(&e)
        }
    }
}

fn parse<T: std::str::FromStr>(what: &str, s: &str) -> Result<T> {
    s.parse().map_err(|_| Error::Validation(format!("invalid {what} {s:?}")))
}

/// Parses a snake_case enum token through its serde representation.
fn token<T: DeserializeOwned>(what: &str, s: &str) -> Result<T> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| Error::Validation(format!("invalid {what} {s:?}")))
}

fn period(s: &str) -> Result<Period> {
    parse("period", s)
}

fn money(s: &str) -> Result<Money> {
    parse("amount", s)
}

fn ratio(s: &str) -> Result<Ratio> {
    parse("fraction", s)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

fn key_value(s: &str) -> Result<(&str, &str)> {
    s.split_once('=').ok_or_else(|| Error::Validation(format!("expected KEY=VALUE, got {s:?}")))
}

fn print_json<T: Serialize>(out: &mut dyn Write, v: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(v).expect("serializable");
    writeln!(out, "{text}")?;
    Ok(())
}

fn parse_clock(s: Option<&str>) -> Result<Clock> {
    match s {
        None => Ok(Clock::System),
        Some(t) => DateTime::parse_from_rfc3339(t)
            .map(|d| Clock::stepping_from(d.with_timezone(&Utc)))
            .map_err(|e| Error::Validation(format!("invalid clock {t:?}: {e}"))),
    }
}

fn activity_spec(s: &str) -> Result<ActivitySpec> {
    let parts: Vec<&str> = s.split('|').collect();
    if !(4..=5).contains(&parts.len()) {
        return Err(Error::Validation(format!("expected TITLE|FRACTION|START|END[|SCOPE], got {s:?}")));
    }
    Ok(ActivitySpec {
        title: parts[0].to_string(),
        scope_text: parts.get(4).unwrap_or(&parts[0]).to_string(),
        budget_fraction: ratio(parts[1])?,
        baseline_start: period(parts[2])?,
        baseline_end: period(parts[3])?,
    })
}

/// Parses a change-request value according to the field's type.
pub fn field_value(field: ChangeField, s: &str) -> Result<FieldValue> {
    Ok(match field {
        ChangeField::ActivityTitle | ChangeField::ActivityScope | ChangeField::PackageNarrative => {
            FieldValue::Text(s.to_string())
        }
        ChangeField::ActivityStart | ChangeField::ActivityEnd => FieldValue::Period(period(s)?),
        ChangeField::ActivityBudget | ChangeField::PackageBudget => FieldValue::Money(money(s)?),
        ChangeField::ActivityStatus => FieldValue::Status(token("activity status", s)?),
        ChangeField::ProductGroup => FieldValue::Group(s.into()),
    })
}

fn targets(flat: &[String]) -> Result<Vec<ChangeTarget>> {
    flat.chunks(4)
        .map(|c| {
            let field: ChangeField = token("change field", &c[1])?;
            Ok(ChangeTarget {
                entity_id: c[0].clone(),
                field,
                old_value: field_value(field, &c[2])?,
                new_value: field_value(field, &c[3])?,
            })
        })
        .collect()
}

fn node(s: &str) -> Result<NodeId> {
    NodeId::parse(s).ok_or_else(|| Error::Validation(format!("invalid node {s:?}")))
}

fn print_rows(out: &mut dyn Write, rows: &[portfolio_core::evm::EvmSnapshot], json: bool) -> Result<()> {
    if json {
        print_json(out, &rows)
    } else {
        write!(out, "{}", snapshots_to_csv(rows))?;
        Ok(())
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let root = cli
        .store
        .clone()
        .ok_or_else(|| Error::Validation(format!("no store: pass --store or set {STORE_ENV}")))?;
    let clock = parse_clock(cli.clock.as_deref())?;
    if let Cmd::Serve { addr } = &cli.cmd {
        return crate::http::serve(&root, clock, addr);
    }
    let role: Role = cli.role.parse()?;
    if !matches!(cli.cmd, Cmd::Init { .. } | Cmd::Exec { .. }) && !Store::exists(&root) {
        return Err(Error::NoPortfolio);
    }
    let mut store = Store::open(&root, clock)?;
    let mut exec = |cmd: Command, out: &mut dyn Write| -> Result<()> {
        let outcome = store.execute(cmd, role)?;
        print_json(out, &outcome)
    };
    match cli.cmd {
        Cmd::Init { name, start_fy, years, config } => {
            let config = match config {
                Some(p) => read_json(&p)?,
                None => PortfolioConfig::default(),
            };
            exec(Command::CreatePortfolio { name, start_fy, years, config }, out)
        }
        Cmd::Config { set: Some(path) } => exec(Command::SetConfig { config: read_json(&path)? }, out),
        Cmd::Config { set: None } => print_json(out, store.model().config()?),
        Cmd::Group(GroupCmd::Add { name }) => exec(Command::AddSdkGroup { name }, out),
        Cmd::Group(GroupCmd::Rename { id, name }) => {
            exec(Command::RenameSdkGroup { group: SdkGroupId(id), name }, out)
        }
        Cmd::Group(GroupCmd::List) => print_json(out, &store.model().groups.values().collect::<Vec<_>>()),
        Cmd::Product(ProductCmd::Add { group, name, goal, team }) => exec(
            Command::AddProduct { group: SdkGroupId(group), name, kpp_goal: goal, team_name: team },
            out,
        ),
        Cmd::Product(ProductCmd::Rename { id, name }) => {
            exec(Command::RenameProduct { product: ProductId(id), name }, out)
        }
        Cmd::Product(ProductCmd::List) => print_json(out, &store.model().products_by_name()),
        Cmd::Plan { product, fy, budget, narrative } => exec(
            Command::CreatePackage { product: ProductId(product), fiscal_year: fy, narrative, annual_budget: money(&budget)? },
            out,
        ),
        Cmd::Edit(EditCmd::Package { id, narrative, budget }) => exec(
            Command::EditPackage {
                package: PackageId(id),
                narrative,
                annual_budget: budget.as_deref().map(money).transpose()?,
            },
            out,
        ),
        Cmd::Edit(EditCmd::Activity { id, title, scope, start, end, fraction }) => exec(
            Command::EditActivity {
                activity: ActivityId(id),
                edit: ActivityEdit {
                    title,
                    scope_text: scope,
                    baseline_start: start.as_deref().map(period).transpose()?,
                    baseline_end: end.as_deref().map(period).transpose()?,
                    budget_fraction: fraction.as_deref().map(ratio).transpose()?,
                },
            },
            out,
        ),
        Cmd::Refine { package, activities, json } => {
            let mut specs = match json {
                Some(p) => read_json::<Vec<ActivitySpec>>(&p)?,
                None => Vec::new(),
            };
            for a in &activities {
                specs.push(activity_spec(a)?);
            }
            exec(Command::RefinePackage { package: PackageId(package), activities: specs }, out)
        }
        Cmd::Finalize { activity, criteria, staffing } => exec(
            Command::FinalizeActivity { activity: ActivityId(activity), completion_criteria: criteria, staffing_note: staffing },
            out,
        ),
        Cmd::Baseline { fy } => exec(Command::Baseline { fiscal_year: fy }, out),
        Cmd::Start { activity, period: p } => {
            exec(Command::StartActivity { activity: ActivityId(activity), period: period(&p)? }, out)
        }
        Cmd::Complete { activity, period: p } => {
            exec(Command::CompleteMilestone { activity: ActivityId(activity), period: period(&p)? }, out)
        }
        Cmd::Cost { activity, period: p, amount } => exec(
            Command::RecordCost { activity: ActivityId(activity), period: period(&p)?, amount: money(&amount)? },
            out,
        ),
        Cmd::Progress { activity, period: p, fraction } => exec(
            Command::RecordProgress { activity: ActivityId(activity), period: period(&p)?, fraction: ratio(&fraction)? },
            out,
        ),
        Cmd::Evm { cmd, row } => {
            let model = store.model();
            match cmd {
                Some(EvmCmd::Rollup { node: n, period: p, json }) => {
                    print_rows(out, &[model.rollup(&node(&n)?, period(&p)?)?], json)
                }
                Some(EvmCmd::Series { node: n, from, to, json }) => {
                    let h = model.horizon()?;
                    let from = from.as_deref().map(period).transpose()?.unwrap_or(h.first());
                    let to = to.as_deref().map(period).transpose()?.unwrap_or(h.last());
                    print_rows(out, &model.index_series(&node(&n)?, from, to)?, json)
                }
                None => {
                    let (Some(n), Some(p)) = (row.node, row.period) else {
                        return Err(Error::Validation("evm needs --node and --period, or a subcommand".into()));
                    };
                    print_rows(out, &[model.rollup(&node(&n)?, period(&p)?)?], row.json)
                }
            }
        }
        Cmd::Alerts { period: p } => {
            let model = store.model();
            print_json(out, &model.detect_struggling(period(&p)?, model.config()?)?)
        }
        Cmd::Cr(c) => cr(c, &mut store, role, out),
        Cmd::Integration(c) => integration(c, &mut store, role, out),
        Cmd::Lifecycle(LifecycleCmd::Advance { fy, phase }) => {
            exec(Command::AdvancePhase { fiscal_year: fy, phase: parse::<Phase>("phase", &phase)? }, out)
        }
        Cmd::Lifecycle(LifecycleCmd::Show { fy: Some(fy) }) => {
            let l = store.model().lifecycles.get(&fy).ok_or_else(|| Error::NotFound {
                kind: "fiscal-year lifecycle",
                id: fy.to_string(),
            })?;
            print_json(out, l)
        }
        Cmd::Lifecycle(LifecycleCmd::Show { fy: None }) => {
            print_json(out, &store.model().lifecycles.values().collect::<Vec<_>>())
        }
        Cmd::Snapshot(SnapshotCmd::Take { period: p }) => exec(Command::TakeSnapshot { period: period(&p)? }, out),
        Cmd::Snapshot(SnapshotCmd::Show { period: p }) => print_json(out, store.model().snapshot(period(&p)?)?),
        Cmd::Snapshot(SnapshotCmd::Export { period: p, format }) => {
            write!(out, "{}", store.model().export_status(period(&p)?, &format)?)?;
            Ok(())
        }
        Cmd::Car { fy, format } => {
            let car = store.model().generate_car(fy)?;
            if format == "json" {
                print_json(out, &car)
            } else {
                write!(out, "{}", render_car_text(&car))?;
                Ok(())
            }
        }
        Cmd::Stack(c) => stack(c, &mut store, role, out),
        Cmd::Exec { json } => {
            let cmd: Command =
                serde_json::from_str(&json).map_err(|e| Error::Validation(format!("command json: {e}")))?;
            exec(cmd, out)
        }
        Cmd::Log => {
            for e in store.engine().log() {
                writeln!(out, "{}", serde_json::to_string(e).expect("serializable"))?;
            }
            Ok(())
        }
        Cmd::Verify => {
            store.verify_replay()?;
            let bad = store.engine().verify_evidence();
            if !bad.is_empty() {
                return Err(Error::CorruptStore(format!("evidence mismatch: {}", bad.join(", "))));
            }
            writeln!(out, "ok: {} commands replayed, digest {}", store.model().last_seq, store.model().digest())?;
            Ok(())
        }
        Cmd::Serve { .. } => unreachable!("handled above"),
    }
}

fn cr(c: CrCmd, store: &mut Store, role: Role, out: &mut dyn Write) -> Result<()> {
    let mut exec = |cmd: Command| store.execute(cmd, role);
    match c {
        CrCmd::Propose { level, targets: flat, rationale, effective, draft_only } => {
            let level: ChangeLevel = token("level", &level)?;
            let outcome = exec(Command::DraftChange {
                level,
                targets: targets(&flat)?,
                rationale,
                effective_period: period(&effective)?,
            })?;
            let outcome = match (&outcome, draft_only) {
                (portfolio_core::Outcome::ChangeRequest(cr), false) => {
                    exec(Command::SubmitChange { change_request: cr.id.clone(), expected_revision: None })?
                }
                _ => outcome,
            };
            print_json(out, &outcome)
        }
        CrCmd::Submit { id, expected_revision } => print_json(
            out,
            &exec(Command::SubmitChange { change_request: ChangeRequestId(id), expected_revision })?,
        ),
        CrCmd::Review { id, approve, reject: _, note, expected_revision } => print_json(
            out,
            &exec(Command::ReviewChange { change_request: ChangeRequestId(id), approve, note, expected_revision })?,
        ),
        CrCmd::Apply { id, expected_revision } => print_json(
            out,
            &exec(Command::ApplyChange { change_request: ChangeRequestId(id), expected_revision })?,
        ),
        CrCmd::Show { id } => print_json(out, store.model().change_request(&ChangeRequestId(id))?),
        CrCmd::List { state } => {
            let state: Option<CrState> = state.as_deref().map(|s| token("state", s)).transpose()?;
            let list: Vec<_> =
                store.model().change_requests.values().filter(|c| state.is_none_or(|s| c.state == s)).collect();
            print_json(out, &list)
        }
        CrCmd::Audit => {
            write!(out, "{}", portfolio_core::planning::audit_log_ndjson(store.model().audit_log()))?;
            Ok(())
        }
    }
}

fn integration(c: IntegrationCmd, store: &mut Store, role: Role, out: &mut dyn Write) -> Result<()> {
    match c {
        IntegrationCmd::Record { product, capability, client, env, note } => {
            let cmd = Command::RecordIntegration {
                product: ProductId(product),
                capability,
                client,
                environment_class: parse::<EnvironmentClass>("environment class", &env)?,
                sustainability_note: note,
            };
            print_json(out, &store.execute(cmd, role)?)
        }
        IntegrationCmd::Evidence { id, kind, file, uri, expected_revision } => {
            let bytes = std::fs::read(&file)?;
            let uri = uri.unwrap_or_else(|| file.display().to_string());
            let kind = parse::<EvidenceKind>("evidence kind", &kind)?;
            let outcome = store.attach_evidence(&IntegrationId(id), kind, &uri, &bytes, role, expected_revision)?;
            print_json(out, &outcome)
        }
        IntegrationCmd::Submit { id, note, expected_revision } => {
            let cmd = Command::SubmitIntegration { integration: IntegrationId(id), sustainability_note: note, expected_revision };
            print_json(out, &store.execute(cmd, role)?)
        }
        IntegrationCmd::Review { id, endorse, reject: _, report, expected_revision } => {
            let cmd = Command::SmeReview { integration: IntegrationId(id), endorse, report, expected_revision };
            print_json(out, &store.execute(cmd, role)?)
        }
        IntegrationCmd::Approve { id, expected_revision } => {
            let cmd = Command::FinalApproval { integration: IntegrationId(id), expected_revision };
            print_json(out, &store.execute(cmd, role)?)
        }
        IntegrationCmd::Status { product: Some(p) } => print_json(out, &store.model().product_kpp_status(&ProductId(p))?),
        IntegrationCmd::Status { product: None } => print_json(out, &store.model().portfolio_kpp_score()?),
        IntegrationCmd::Show { id } => print_json(out, store.model().integration(&IntegrationId(id))?),
        IntegrationCmd::List => print_json(out, &store.model().integrations.values().collect::<Vec<_>>()),
        IntegrationCmd::Ledger => {
            write!(out, "{}", store.model().integration_ledger_csv())?;
            Ok(())
        }
    }
}

fn version(s: &str) -> Result<Version> {
    s.parse()
}

fn stack(c: StackCmd, store: &mut Store, role: Role, out: &mut dyn Write) -> Result<()> {
    match c {
        StackCmd::Release { product, version: v, constraints } => {
            let constraints = constraints
                .iter()
                .map(|c| {
                    let (p, r) = key_value(c)?;
                    Ok(Constraint { product: p.to_string(), range: r.parse()? })
                })
                .collect::<Result<Vec<_>>>()?;
            let cmd = Command::RegisterRelease { product, version: version(&v)?, constraints };
            print_json(out, &store.execute(cmd, role)?)
        }
        StackCmd::Policy(PolicyCmd::Define { id, description }) => {
            print_json(out, &store.execute(Command::DefinePolicy { id, description }, role)?)
        }
        StackCmd::Policy(PolicyCmd::Checklist { product, items }) => {
            let items = items
                .iter()
                .map(|i| {
                    let (k, s) = key_value(i)?;
                    let status: PolicyStatus = token("policy status", s)?;
                    Ok((k.to_string(), PolicyItem { status, note: String::new() }))
                })
                .collect::<Result<BTreeMap<_, _>>>()?;
            print_json(out, &store.execute(Command::RecordChecklist { product, items }, role)?)
        }
        StackCmd::Policy(PolicyCmd::Check { product, rule }) => {
            print_json(out, &store.model().check_policies(&product, token::<InclusionRule>("inclusion rule", &rule)?)?)
        }
        StackCmd::Policy(PolicyCmd::List) => print_json(out, &store.model().stack.policies),
        StackCmd::Manifest(ManifestCmd::Compose { name, stack_version, pins, rule, metadata }) => {
            let pins = pins
                .iter()
                .map(|p| {
                    let (k, v) = key_value(p)?;
                    Ok((k.to_string(), version(v)?))
                })
                .collect::<Result<BTreeMap<_, _>>>()?;
            let metadata = metadata
                .iter()
                .map(|m| key_value(m).map(|(k, v)| (k.to_string(), v.to_string())))
                .collect::<Result<BTreeMap<_, _>>>()?;
            let cmd = Command::ComposeManifest {
                name,
                stack_version,
                pins,
                inclusion_rule: token("inclusion rule", &rule)?,
                metadata,
            };
            print_json(out, &store.execute(cmd, role)?)
        }
        StackCmd::Manifest(ManifestCmd::Show { stack_version }) => {
            write!(out, "{}", manifest_to_text(store.model().manifest(&stack_version)?))?;
            Ok(())
        }
        StackCmd::Manifest(ManifestCmd::List) => {
            print_json(out, &store.model().stack.manifests.keys().collect::<Vec<_>>())
        }
        StackCmd::Compat { stack_version } => print_json(out, &store.model().check_compatibility(&stack_version)?),
    }
}
