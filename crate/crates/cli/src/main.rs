use std::io::{Read, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use cdd_audit::report::{audit_source, prepare, render, render_scan, scan_source};
use cdd_audit::{
    generate, AuditConfig, Error, Fraction, InputFormat, OutputFormat, ScenarioKind,
    ScenarioSpec, Weighting,
};

#[derive(Parser, Debug)]
#[command(name = "cdd-audit", version, about = "Conditional demographic disparity audits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the full audit and print a report.
    Audit(AuditArgs),
    /// Aggregate input into the contingency CSV format.
    Tabulate(AuditArgs),
    /// Run masking scans only.
    Scan(AuditArgs),
    /// Emit a generated scenario as contingency CSV.
    Simulate(SimulateArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InputFormatArg {
    Csv,
    Jsonl,
    Contingency,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum OutputFormatArg {
    Json,
    Text,
    Csv,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum WeightingArg {
    CellTotal,
    Uniform,
}

fn parse_fraction(s: &str) -> Result<Fraction, String> {
    s.parse::<Fraction>().map_err(|e| e.to_string())
}

fn parse_share(s: &str) -> Result<(String, Fraction), String> {
    let (class, value) = s
        .rsplit_once('=')
        .ok_or_else(|| format!("expected CLASS=FRACTION, got `{s}`"))?;
    Ok((class.trim().to_string(), parse_fraction(value.trim())?))
}

fn parse_param(s: &str) -> Result<(String, u64), String> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| format!("expected NAME=VALUE, got `{s}`"))?;
    let value = value
        .trim()
        .parse::<u64>()
        .map_err(|e| format!("parameter `{name}`: {e}"))?;
    Ok((name.trim().to_string(), value))
}

#[derive(Args, Debug, Default)]
struct AuditArgs {
    /// TOML file with audit settings; flags take precedence.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Input file, or `-` for stdin.
    #[arg(long, value_name = "PATH")]
    input: Option<PathBuf>,
    #[arg(long, value_enum)]
    input_format: Option<InputFormatArg>,
    /// JSON schema declaration.
    #[arg(long, value_name = "PATH")]
    schema: Option<PathBuf>,
    #[arg(long, value_name = "ATTR")]
    protected: Option<String>,
    /// Protected value to audit; repeatable. Defaults to every value.
    #[arg(long = "class", value_name = "VALUE")]
    classes: Vec<String>,
    /// Intersectional class; repeatable.
    #[arg(long = "intersect", value_name = "ATTR=VALUE,ATTR=VALUE")]
    intersections: Vec<String>,
    #[arg(long, value_name = "ATTR")]
    outcome: Option<String>,
    #[arg(long, value_name = "L")]
    advantaged_label: Option<String>,
    #[arg(long, value_name = "L")]
    disadvantaged_label: Option<String>,
    /// Conditioning attribute; repeatable.
    #[arg(long = "condition-on", value_name = "ATTR")]
    condition_on: Vec<String>,
    #[arg(long, value_name = "N")]
    max_depth: Option<usize>,
    /// Attribute to scan for masking, besides the conditioning ones; repeatable.
    #[arg(long = "partition", value_name = "ATTR")]
    partitions: Vec<String>,
    #[arg(long, value_name = "F", value_parser = parse_fraction)]
    nd_threshold: Option<Fraction>,
    #[arg(long, value_name = "N")]
    min_cell: Option<u64>,
    #[arg(long, value_enum)]
    weighting: Option<WeightingArg>,
    /// Known population share of a class; repeatable.
    #[arg(long = "population-share", value_name = "CLASS=F", value_parser = parse_share)]
    population_shares: Vec<(String, Fraction)>,
    /// Mark findings whose gap reaches F. Never affects the exit code.
    #[arg(long, value_name = "F", value_parser = parse_fraction)]
    flag_threshold: Option<Fraction>,
    /// Count column of contingency input.
    #[arg(long, value_name = "NAME")]
    count_column: Option<String>,
    #[arg(long, value_enum)]
    format: Option<OutputFormatArg>,
    /// Decimal places for rendered percentages.
    #[arg(long, value_name = "N")]
    display_decimals: Option<u32>,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_name = "KIND")]
    scenario: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scenario parameter; repeatable.
    #[arg(long = "param", value_name = "NAME=VALUE", value_parser = parse_param)]
    params: Vec<(String, u64)>,
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Data(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_data_error() {
            Failure::Data(e.to_string())
        } else {
            Failure::Usage(e.to_string())
        }
    }
}

fn build_config(args: &AuditArgs) -> Result<AuditConfig, Failure> {
    let mut config = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
            toml::from_str::<AuditConfig>(&text)
                .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        }
        None => AuditConfig::default(),
    };
    if let Some(v) = &args.input {
        config.input = Some(v.clone());
    }
    if let Some(v) = args.input_format {
        config.input_format = match v {
            InputFormatArg::Csv => InputFormat::Csv,
            InputFormatArg::Jsonl => InputFormat::Jsonl,
            InputFormatArg::Contingency => InputFormat::Contingency,
        };
    }
    if let Some(v) = &args.schema {
        config.schema_file = Some(v.clone());
    }
    macro_rules! take {
        ($($field:ident),*) => {$(
            if let Some(v) = &args.$field {
                config.$field = Some(v.clone());
            }
        )*};
    }
    take!(protected, outcome, advantaged_label, disadvantaged_label, flag_threshold);
    macro_rules! take_list {
        ($($field:ident),*) => {$(
            if !args.$field.is_empty() {
                config.$field = args.$field.clone();
            }
        )*};
    }
    take_list!(classes, intersections, condition_on, partitions);
    if !args.population_shares.is_empty() {
        config.population_shares = args.population_shares.iter().cloned().collect();
    }
    if let Some(v) = args.max_depth {
        config.max_depth = v;
    }
    if let Some(v) = &args.nd_threshold {
        config.nd_threshold = v.clone();
    }
    if let Some(v) = args.min_cell {
        config.min_cell = v;
    }
    if let Some(v) = args.weighting {
        config.weighting = match v {
            WeightingArg::CellTotal => Weighting::CellTotal,
            WeightingArg::Uniform => Weighting::Uniform,
        };
    }
    if let Some(v) = &args.count_column {
        config.count_column = v.clone();
    }
    if let Some(v) = args.format {
        config.format = match v {
            OutputFormatArg::Json => OutputFormat::Json,
            OutputFormatArg::Text => OutputFormat::Text,
            OutputFormatArg::Csv => OutputFormat::Csv,
        };
    }
    if let Some(v) = args.display_decimals {
        config.display_decimals = v;
    }
    if config.input.is_none() {
        return Err(Failure::Usage("no input given (use --input PATH or --input -)".into()));
    }
    Ok(config)
}

fn read_source(config: &AuditConfig) -> Result<Vec<u8>, Failure> {
    match config.input.as_deref() {
        Some(p) if p.as_os_str() == "-" => {
            let mut buf = Vec::new();
            std::io::stdin()
                .read_to_end(&mut buf)
                .map_err(|e| Failure::Data(format!("stdin: {e}")))?;
            Ok(buf)
        }
        _ => Ok(cdd_audit::report::read_input(config)?),
    }
}

fn emit(out: &Option<PathBuf>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, bytes)
            .map_err(|e| Failure::Usage(format!("{}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(bytes)
                .and_then(|_| stdout.flush())
                .map_err(|e| Failure::Usage(format!("stdout: {e}")))
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Audit(args) => {
            let config = build_config(&args)?;
            let source = read_source(&config)?;
            let report = audit_source(&config, &source)?;
            emit(&args.out, &render(&report, config.format))
        }
        Command::Scan(args) => {
            let config = build_config(&args)?;
            let source = read_source(&config)?;
            let report = scan_source(&config, &source)?;
            emit(&args.out, &render_scan(&report, config.format))
        }
        Command::Tabulate(args) => {
            let config = build_config(&args)?;
            let source = read_source(&config)?;
            let prepared = prepare(&config, &source)?;
            let mut bytes = Vec::new();
            prepared.table.write_csv(&mut bytes, &config.count_column)?;
            emit(&args.out, &bytes)
        }
        Command::Simulate(args) => {
            let kind: ScenarioKind = args.scenario.parse()?;
            let spec = args
                .params
                .iter()
                .fold(ScenarioSpec::new(kind).with_seed(args.seed), |s, (k, v)| {
                    s.with(k, *v)
                });
            let table = generate(&spec)?;
            let mut bytes = Vec::new();
            table.write_csv(&mut bytes, "count")?;
            emit(&args.out, &bytes)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
