//! `seculex` command-line front end. Commands return their rendered
//! output and exit code instead of printing, so they can be tested
//! in-process.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use seculex::allocation::{iteration_program, AllocationError};
use seculex::envelopes::{is_secure_margin, verify_limits, verify_limits_oracle, Envelope};
use seculex::market::{clear, clearing_program, BoundSide, MarketError, Order, OrderBook, Side};
use seculex::scenario::{load_scenario, Scenario, ScenarioError, Strictness};
use seculex::sim::{self, Scheme, SchemeReport, SimError};
use seculex::{allocate_does, DoeMatrix, Money};

pub mod render;

use render::{fixed, kw, Table};

#[derive(Debug, Parser)]
#[command(name = "seculex", version, about = "Operating envelopes and secure limit exchange for radial networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fair initial envelopes and the max-min rounds that produced them
    Allocate(CommonArgs),
    /// Clears the scenario's order book against its envelopes
    Clear(CommonArgs),
    /// Runs every management scheme and prints the comparison table
    Compare(CommonArgs),
    /// Checks the envelopes at their corners and against a sampling oracle
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// Scenario file (JSON)
    pub scenario: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Print the linear programs that are solved, on stderr
    #[arg(long)]
    pub dump_lp: bool,
    /// Warn about unknown scenario fields instead of rejecting the file
    #[arg(long)]
    pub lenient: bool,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of random profiles drawn inside the envelopes
    #[arg(long, default_value_t = 1000, value_parser = parse_samples)]
    pub samples: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

fn parse_samples(s: &str) -> Result<u64, String> {
    match s.parse::<u64>() {
        Ok(0) => Err("at least one sample is required".into()),
        Ok(n) => Ok(n),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Insecure = 1,
    Usage = 2,
    Infeasible = 3,
    Internal = 4,
}

/// What a command produced.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    pub stdout: String,
    pub stderr: String,
    pub code: ExitCode,
}

#[derive(Debug)]
struct Failure {
    code: ExitCode,
    message: String,
}

impl Failure {
    fn new(code: ExitCode, message: impl fmt::Display) -> Self {
        Failure {
            code,
            message: message.to_string(),
        }
    }
}

impl From<ScenarioError> for Failure {
    fn from(e: ScenarioError) -> Self {
        Failure::new(ExitCode::Usage, e)
    }
}

impl From<AllocationError> for Failure {
    fn from(e: AllocationError) -> Self {
        let code = match e {
            AllocationError::InfeasibleGuarantees { .. } => ExitCode::Infeasible,
            AllocationError::MissingBounds(_) | AllocationError::InvalidBounds(_) => ExitCode::Usage,
            AllocationError::Solver(_) => ExitCode::Internal,
        };
        Failure::new(code, e)
    }
}

impl From<MarketError> for Failure {
    fn from(e: MarketError) -> Self {
        let code = match e {
            MarketError::InsecureInputLimits(_) => ExitCode::Infeasible,
            MarketError::Solver(_) => ExitCode::Internal,
            _ => ExitCode::Usage,
        };
        Failure::new(code, e)
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Allocation(e) => e.into(),
            SimError::Market(e) => e.into(),
            SimError::InsufficientCurtailableInjection { .. } => Failure::new(ExitCode::Infeasible, e),
            SimError::Envelope(_) | SimError::Network(_) => Failure::new(ExitCode::Usage, e),
        }
    }
}

impl From<seculex::EnvelopeError> for Failure {
    fn from(e: seculex::EnvelopeError) -> Self {
        Failure::new(ExitCode::Usage, e)
    }
}

struct Session {
    color: bool,
    format: Format,
    stdout: String,
    stderr: String,
}

impl Session {
    fn warn(&mut self, msg: impl fmt::Display) {
        self.stderr.push_str(&format!("warning: {msg}\n"));
    }

    fn note(&mut self, msg: impl fmt::Display) {
        self.stderr.push_str(&format!("{msg}\n"));
    }

    fn json(&mut self, v: Value) {
        self.stdout
            .push_str(&serde_json::to_string_pretty(&v).expect("json output"));
        self.stdout.push('\n');
    }

    fn csv(&mut self, headers: &[&str], rows: Vec<Vec<String>>) {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(headers).expect("csv to memory");
        for r in rows {
            w.write_record(&r).expect("csv to memory");
        }
        let bytes = w.into_inner().expect("csv flush");
        self.stdout
            .push_str(&String::from_utf8(bytes).expect("utf-8 csv"));
    }

    fn table(&mut self, t: &Table) {
        if !self.stdout.is_empty() {
            self.stdout.push('\n');
        }
        self.stdout.push_str(&t.render(self.color));
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, color: bool) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            let code = if e.use_stderr() {
                ExitCode::Usage
            } else {
                ExitCode::Success
            };
            let (stdout, stderr) = if e.use_stderr() {
                (String::new(), text)
            } else {
                (text, String::new())
            };
            return Outcome { stdout, stderr, code };
        }
    };
    execute(&cli.command, color)
}

pub fn execute(command: &Command, color: bool) -> Outcome {
    let common = match command {
        Command::Allocate(c) | Command::Clear(c) | Command::Compare(c) => c,
        Command::Verify(v) => &v.common,
    };
    let mut session = Session {
        color,
        format: common.format,
        stdout: String::new(),
        stderr: String::new(),
    };
    let result = load(&mut session, common).and_then(|scenario| match command {
        Command::Allocate(a) => cmd_allocate(&mut session, &scenario, a.dump_lp),
        Command::Clear(a) => cmd_clear(&mut session, &scenario, a.dump_lp),
        Command::Compare(_) => cmd_compare(&mut session, &scenario),
        Command::Verify(v) => cmd_verify(&mut session, &scenario, v.samples, v.seed),
    });
    let code = match result {
        Ok(code) => code,
        Err(f) => {
            session.stderr.push_str(&format!("error: {}\n", f.message));
            f.code
        }
    };
    Outcome {
        stdout: session.stdout,
        stderr: session.stderr,
        code,
    }
}

fn load(session: &mut Session, args: &CommonArgs) -> Result<Scenario, Failure> {
    let text = std::fs::read_to_string(&args.scenario)
        .map_err(|e| Failure::new(ExitCode::Usage, format!("{}: {e}", args.scenario.display())))?;
    let strictness = if args.lenient {
        Strictness::Lenient
    } else {
        Strictness::Strict
    };
    let (scenario, warnings) = load_scenario(&text, strictness)
        .map_err(|e| Failure::new(ExitCode::Usage, format!("{}: {e}", args.scenario.display())))?;
    for w in warnings {
        session.warn(format!("ignoring unknown field {w}"));
    }
    Ok(scenario)
}

/// Envelopes given in the scenario, or the fair allocation.
fn scenario_limits(scenario: &Scenario) -> Result<DoeMatrix, Failure> {
    match &scenario.file.limits {
        Some(limits) => Ok(limits.clone()),
        None => Ok(allocate_does(&scenario.network, &scenario.bounds())?.doe),
    }
}

fn cmd_allocate(session: &mut Session, scenario: &Scenario, dump_lp: bool) -> Result<ExitCode, Failure> {
    let net = &scenario.network;
    let bounds = scenario.bounds();
    let result = allocate_does(net, &bounds)?;
    let mut round_of = BTreeMap::new();
    for (i, it) in result.iterations.iter().enumerate() {
        for name in &it.fixed {
            round_of.insert(name.clone(), (i + 1, it.width_kw));
        }
    }
    if dump_lp {
        let mut fixed: BTreeMap<String, Envelope> = BTreeMap::new();
        for (i, it) in result.iterations.iter().enumerate() {
            let lp = iteration_program(net, &bounds, &fixed)?;
            session.note(format!("\\ round {}\n{}", i + 1, lp.to_lp_text()));
            for name in &it.fixed {
                fixed.insert(name.clone(), *result.doe.get(name).expect("allocated"));
            }
        }
    }
    match session.format {
        Format::Table => {
            let mut t = Table::new(["customer", "lower_kw", "upper_kw", "round"]).titled("Envelopes");
            for (name, env) in result.doe.iter() {
                t.row([
                    name.clone(),
                    kw(env.lower_kw),
                    kw(env.upper_kw),
                    round_of[name].0.to_string(),
                ]);
            }
            session.table(&t);
            let mut t = Table::new(["round", "width_kw", "fixed"]).titled("Rounds");
            for (i, it) in result.iterations.iter().enumerate() {
                t.row([(i + 1).to_string(), kw(it.width_kw), it.fixed.join(" ")]);
            }
            session.table(&t);
        }
        Format::Csv => {
            let rows = result
                .doe
                .iter()
                .map(|(name, env)| {
                    let (round, width) = round_of[name];
                    vec![
                        name.clone(),
                        kw(env.lower_kw),
                        kw(env.upper_kw),
                        round.to_string(),
                        kw(width),
                    ]
                })
                .collect();
            session.csv(&["customer", "lower_kw", "upper_kw", "round", "round_width_kw"], rows);
        }
        Format::Json => {
            let envelopes: serde_json::Map<String, Value> = result
                .doe
                .iter()
                .map(|(n, e)| (n.clone(), json!({ "lower_kw": e.lower_kw, "upper_kw": e.upper_kw })))
                .collect();
            let rounds: Vec<Value> = result
                .iterations
                .iter()
                .enumerate()
                .map(|(i, it)| json!({ "round": i + 1, "width_kw": it.width_kw, "fixed": it.fixed }))
                .collect();
            session.json(json!({ "envelopes": envelopes, "rounds": rounds }));
        }
    }
    Ok(ExitCode::Success)
}

fn side_label(side: Side) -> &'static str {
    match side {
        Side::Buy => "Buy",
        Side::Sell => "Sell",
    }
}

fn bound_label(bound: BoundSide) -> &'static str {
    match bound {
        BoundSide::Lower => "Lower",
        BoundSide::Upper => "Upper",
    }
}

fn order_cells(o: &Order, quantity_kw: f64) -> Vec<String> {
    vec![
        o.id.to_string(),
        o.customer.clone(),
        side_label(o.side).to_string(),
        bound_label(o.bound).to_string(),
        o.price().to_cents_string(),
        kw(quantity_kw),
    ]
}

fn order_json(o: &Order, quantity_kw: f64) -> Value {
    json!({
        "id": o.id,
        "customer": o.customer,
        "type": side_label(o.side).to_lowercase(),
        "bound": bound_label(o.bound).to_lowercase(),
        "price_eur_per_kw": o.price().to_eur(),
        "quantity_kw": quantity_kw,
    })
}

fn cmd_clear(session: &mut Session, scenario: &Scenario, dump_lp: bool) -> Result<ExitCode, Failure> {
    let net = &scenario.network;
    let limits = scenario_limits(scenario)?;
    let mut book = OrderBook::new(scenario.file.product_time.clone());
    for o in &scenario.file.orders {
        book.submit(o.clone())?;
    }
    if dump_lp {
        session.note(clearing_program(net, &limits, &book)?.to_lp_text());
    }
    let out = clear(net, &limits, &book)?;
    let orders: Vec<&Order> = scenario.file.orders.iter().collect();
    let accepted = |id: u64| out.acceptances.get(&id).copied().unwrap_or(0.0);

    match session.format {
        Format::Table => {
            let mut t = Table::new(["id", "customer", "type", "bound", "price_eur_per_kw", "quantity_kw", "accepted_kw"])
                .titled("Acceptances");
            for o in &orders {
                let mut cells = order_cells(o, o.delta_kw);
                cells.push(kw(accepted(o.id)));
                t.row(cells);
            }
            session.table(&t);
            let mut t = Table::new(["customer", "lower_kw", "upper_kw"]).titled("Updated limits");
            for (name, env) in out.updated_limits.iter() {
                t.row([name.clone(), kw(env.lower_kw), kw(env.upper_kw)]);
            }
            session.table(&t);
            let mut t = Table::new(["id", "customer", "type", "bound", "price_eur_per_kw", "quantity_kw"])
                .titled("Remaining order book");
            for e in out.updated_book.entries() {
                t.row(order_cells(&e.order, e.remaining_kw));
            }
            session.table(&t);
            let mut t = Table::new(["customer", "payment_eur"]).titled("Payments");
            for (name, p) in out.payments() {
                t.row([name.clone(), p.to_cents_string()]);
            }
            session.table(&t);
            session
                .stdout
                .push_str(&format!("\nSocial welfare [EUR]: {}\n", out.social_welfare().to_cents_string()));
        }
        Format::Csv => {
            let mut rows = Vec::new();
            for o in &orders {
                let left = out.updated_book.get(o.id).map_or(0.0, |e| e.remaining_kw);
                let mut r = vec!["order".to_string()];
                r.extend(order_cells(o, o.delta_kw));
                r.extend([kw(accepted(o.id)), kw(left), String::new(), String::new(), String::new()]);
                rows.push(r);
            }
            for (name, env) in out.updated_limits.iter() {
                let pay = out.payments().get(name).copied().unwrap_or_default();
                let mut r = vec!["customer".to_string(), String::new(), name.clone()];
                r.extend(std::iter::repeat(String::new()).take(6));
                r.extend([kw(env.lower_kw), kw(env.upper_kw), pay.to_cents_string()]);
                rows.push(r);
            }
            let mut r = vec!["social_welfare".to_string()];
            r.extend(std::iter::repeat(String::new()).take(10));
            r.push(out.social_welfare().to_cents_string());
            rows.push(r);
            session.csv(
                &[
                    "record",
                    "id",
                    "customer",
                    "type",
                    "bound",
                    "price_eur_per_kw",
                    "quantity_kw",
                    "accepted_kw",
                    "remaining_kw",
                    "lower_kw",
                    "upper_kw",
                    "payment_eur",
                ],
                rows,
            );
        }
        Format::Json => {
            let acceptances: Vec<Value> = orders
                .iter()
                .map(|o| {
                    let mut v = order_json(o, o.delta_kw);
                    v["accepted_kw"] = json!(accepted(o.id));
                    v
                })
                .collect();
            let limits: serde_json::Map<String, Value> = out
                .updated_limits
                .iter()
                .map(|(n, e)| (n.clone(), json!({ "lower_kw": e.lower_kw, "upper_kw": e.upper_kw })))
                .collect();
            let remaining: Vec<Value> = out
                .updated_book
                .entries()
                .map(|e| order_json(&e.order, e.remaining_kw))
                .collect();
            let payments: serde_json::Map<String, Value> = out
                .payments()
                .iter()
                .map(|(n, p)| (n.clone(), json!(p.to_eur())))
                .collect();
            session.json(json!({
                "acceptances": acceptances,
                "updated_limits": limits,
                "remaining_book": remaining,
                "payments_eur": payments,
                "social_welfare_eur": out.social_welfare().to_eur(),
            }));
        }
    }
    Ok(ExitCode::Success)
}

struct CompareCells {
    curtailment: String,
    utilization: String,
    violation: String,
    flexibility: String,
    welfare: String,
    loss: String,
}

fn compare_cells(r: &SchemeReport, scenario: &Scenario) -> CompareCells {
    let display = scenario.file.display;
    CompareCells {
        curtailment: fixed(r.total_curtailment_kw, display.curtailment_decimals),
        utilization: fixed(r.renewable_utilization_pct, display.utilization_decimals),
        violation: if r.security_violation { "Yes" } else { "No" }.to_string(),
        flexibility: r.scheme.incentivizes_flexibility().to_string(),
        welfare: r
            .market_social_welfare
            .map_or_else(|| "/".to_string(), Money::to_cents_string),
        loss: r.opportunity_loss.to_cents_string(),
    }
}

fn cmd_compare(session: &mut Session, scenario: &Scenario) -> Result<ExitCode, Failure> {
    let reports = sim::compare(scenario)?;
    let cells: Vec<(Scheme, CompareCells)> = reports
        .iter()
        .map(|r| (r.scheme, compare_cells(r, scenario)))
        .collect();
    match session.format {
        Format::Table => {
            // Static envelopes share one column: "keep schedule or reschedule".
            let merged = |f: fn(&CompareCells) -> &String| -> Vec<String> {
                let get = |s: Scheme| f(&cells.iter().find(|(k, _)| *k == s).expect("scheme").1).clone();
                let (keep, resched) = (get(Scheme::StaticKeepSchedule), get(Scheme::StaticReschedule));
                vec![
                    get(Scheme::NoControl),
                    get(Scheme::Anm),
                    if keep == resched {
                        keep
                    } else {
                        format!("{keep} or {resched}")
                    },
                    get(Scheme::SecuLex),
                ]
            };
            let mut t = Table::new(["Metric", "No Control", "ANM", "Static envelopes", "SecuLEx"]);
            let rows: [(&str, fn(&CompareCells) -> &String); 6] = [
                ("Curtailment [kW]", |c| &c.curtailment),
                ("Renewable utilization [%]", |c| &c.utilization),
                ("Security violation", |c| &c.violation),
                ("Incentivizes flexibility", |c| &c.flexibility),
                ("Market social welfare [EUR]", |c| &c.welfare),
                ("Opportunity loss [EUR]", |c| &c.loss),
            ];
            for (label, f) in rows {
                let mut r = vec![label.to_string()];
                r.extend(merged(f));
                t.row(r);
            }
            session.table(&t);
        }
        Format::Csv => {
            let rows = cells
                .into_iter()
                .map(|(s, c)| {
                    vec![
                        s.label().to_string(),
                        c.curtailment,
                        c.utilization,
                        c.violation,
                        c.flexibility,
                        c.welfare,
                        c.loss,
                    ]
                })
                .collect();
            session.csv(
                &[
                    "scheme",
                    "curtailment_kw",
                    "renewable_utilization_pct",
                    "security_violation",
                    "incentivizes_flexibility",
                    "market_social_welfare_eur",
                    "opportunity_loss_eur",
                ],
                rows,
            );
        }
        Format::Json => {
            let v: Vec<Value> = reports.iter().map(report_json).collect();
            session.json(Value::Array(v));
        }
    }
    Ok(ExitCode::Success)
}

fn report_json(r: &SchemeReport) -> Value {
    let rows: Vec<Value> = r
        .rows
        .iter()
        .map(|c| {
            let mut v = json!({
                "customer": c.customer,
                "expected_net_kw": c.expected_net_kw,
                "battery_kw": c.battery_kw,
                "intended_net_kw": c.intended_net_kw,
                "final_net_kw": c.final_net_kw,
                "curtailed_injection_kw": c.curtailed_injection_kw,
                "curtailed_withdrawal_kw": c.curtailed_withdrawal_kw,
                "pv_curtailed_kw": c.pv_curtailed_kw,
                "opportunity_loss_eur": c.opportunity_loss.to_eur(),
            });
            if let Some(e) = c.envelope {
                v["envelope"] = json!({ "lower_kw": e.lower_kw, "upper_kw": e.upper_kw });
            }
            if let Some(p) = c.market_payment {
                v["market_payment_eur"] = json!(p.to_eur());
            }
            v
        })
        .collect();
    json!({
        "scheme": r.scheme.label(),
        "total_curtailment_kw": r.total_curtailment_kw,
        "renewable_utilization_pct": r.renewable_utilization_pct,
        "security_violation": r.security_violation,
        "worst_margin_kw": r.worst_margin_kw,
        "incentivizes_flexibility": r.scheme.incentivizes_flexibility(),
        "opportunity_loss_eur": r.opportunity_loss.to_eur(),
        "market_social_welfare_eur": r.market_social_welfare.map(Money::to_eur),
        "customers": rows,
    })
}

fn cmd_verify(session: &mut Session, scenario: &Scenario, samples: u64, seed: u64) -> Result<ExitCode, Failure> {
    let net = &scenario.network;
    let limits = scenario_limits(scenario)?;
    let margin = verify_limits(net, &limits)?;
    let oracle = verify_limits_oracle(net, &limits, samples as usize, seed)?;
    let boundary_secure = is_secure_margin(margin);
    // Without corner enumeration only a violation found by the oracle
    // contradicts the boundary check.
    let agree = boundary_secure == oracle.secure || (!oracle.corners_enumerated && oracle.secure);
    let code = if !agree {
        ExitCode::Internal
    } else if boundary_secure {
        ExitCode::Success
    } else {
        ExitCode::Insecure
    };
    let verdict = |s: bool| if s { "secure" } else { "insecure" };
    let yes_no = |b: bool| if b { "yes" } else { "no" };
    match session.format {
        Format::Table => {
            let mut t = Table::new(["check", "value"]);
            t.row(["boundary margin [kW]".to_string(), kw(margin)]);
            t.row(["boundary verdict".to_string(), verdict(boundary_secure).to_string()]);
            t.row(["oracle samples".to_string(), samples.to_string()]);
            t.row(["oracle seed".to_string(), seed.to_string()]);
            t.row(["corners enumerated".to_string(), yes_no(oracle.corners_enumerated).to_string()]);
            t.row(["profiles checked".to_string(), oracle.profiles_checked.to_string()]);
            t.row(["oracle worst margin [kW]".to_string(), kw(oracle.worst_margin_kw)]);
            t.row(["oracle verdict".to_string(), verdict(oracle.secure).to_string()]);
            t.row(["agreement".to_string(), yes_no(agree).to_string()]);
            session.table(&t);
        }
        Format::Csv => {
            session.csv(
                &[
                    "boundary_margin_kw",
                    "boundary_secure",
                    "samples",
                    "seed",
                    "corners_enumerated",
                    "profiles_checked",
                    "oracle_worst_margin_kw",
                    "oracle_secure",
                    "agreement",
                ],
                vec![vec![
                    kw(margin),
                    boundary_secure.to_string(),
                    samples.to_string(),
                    seed.to_string(),
                    oracle.corners_enumerated.to_string(),
                    oracle.profiles_checked.to_string(),
                    kw(oracle.worst_margin_kw),
                    oracle.secure.to_string(),
                    agree.to_string(),
                ]],
            );
        }
        Format::Json => session.json(json!({
            "boundary_margin_kw": margin,
            "boundary_secure": boundary_secure,
            "samples": samples,
            "seed": seed,
            "corners_enumerated": oracle.corners_enumerated,
            "profiles_checked": oracle.profiles_checked,
            "oracle_worst_margin_kw": oracle.worst_margin_kw,
            "oracle_secure": oracle.secure,
            "agreement": agree,
        })),
    }
    if !agree {
        session.note("error: boundary check and oracle disagree");
    }
    Ok(code)
}
