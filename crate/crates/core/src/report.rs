//! The audit pipeline and its renderings.
//!
//! `run_audit` goes ingest -> tabulate -> per-class findings (unconditioned
//! and per cell) -> weighted summaries -> masking scans -> cell flags. The
//! resulting [`AuditReport`] carries the raw counts behind every number and
//! never a pass/fail verdict.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::BufRead;
use std::path::PathBuf;

use serde::{Deserialize, Serialize, Serializer};

use crate::aggregation::{disparity_magnitude, weighted_summary_over, WeightedSummary, Weighting};
use crate::dataset::{
    parse_contingency, parse_individual_records, tabulate, AttributeDecl, AttributeSchema,
    ContingencyTable, GroupKey, RecordFormat,
};
use crate::disparity::{
    cohort_proportions, default_nd_threshold, demographic_disparity, negative_dominance,
    population_baseline_disparity, selection_rates, DisparityFinding, ProtectedClass,
    SelectionRates,
};
use crate::error::{Error, Result};
use crate::fraction::Fraction;
use crate::subgroup_scan::{
    build_intersectional_class, enumerate_conditioning_sets, flag_cells, masking_scan,
    parse_intersection_pairs, CellFlag, CellFlagKind, MaskingScanResult, DEFAULT_MAX_DEPTH,
    DEFAULT_MIN_CELL,
};

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_NAME: &str = "cdd-audit";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    #[default]
    Csv,
    Jsonl,
    Contingency,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Text,
    Csv,
}

mod as_text {
    use super::*;

    pub fn fraction<S: Serializer>(f: &Fraction, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(f)
    }

    pub fn optional<S: Serializer>(f: &Option<Fraction>, s: S) -> Result<S::Ok, S::Error> {
        match f {
            Some(f) => s.collect_str(f),
            None => s.serialize_none(),
        }
    }

    pub fn map<S: Serializer>(m: &BTreeMap<String, Fraction>, s: S) -> Result<S::Ok, S::Error> {
        s.collect_map(m.iter().map(|(k, v)| (k, v.to_string())))
    }
}

/// Everything needed to reproduce an audit. Echoed verbatim in the report.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    pub input: Option<PathBuf>,
    pub input_format: InputFormat,
    /// JSON schema file; when absent the schema is read off the input's
    /// columns plus the fields below.
    pub schema_file: Option<PathBuf>,
    pub protected: Option<String>,
    pub outcome: Option<String>,
    pub advantaged_label: Option<String>,
    pub disadvantaged_label: Option<String>,
    pub count_column: String,
    /// Protected values to audit; empty means every observed value.
    pub classes: Vec<String>,
    /// Intersectional classes, each as `attr=value,attr=value`.
    pub intersections: Vec<String>,
    pub condition_on: Vec<String>,
    pub max_depth: usize,
    /// Extra attributes to run masking scans over, besides `condition_on`.
    pub partitions: Vec<String>,
    #[serde(serialize_with = "as_text::fraction")]
    pub nd_threshold: Fraction,
    pub min_cell: u64,
    pub weighting: Weighting,
    /// Known population share per class, for the baseline variant.
    #[serde(serialize_with = "as_text::map")]
    pub population_shares: BTreeMap<String, Fraction>,
    /// Advisory marker on findings whose gap reaches this value.
    #[serde(serialize_with = "as_text::optional")]
    pub flag_threshold: Option<Fraction>,
    pub format: OutputFormat,
    /// Decimal places for rendered percentages; rounding is half-up.
    pub display_decimals: u32,
}

impl Default for AuditConfig {
    fn default() -> Self {
        Self {
            input: None,
            input_format: InputFormat::Csv,
            schema_file: None,
            protected: None,
            outcome: None,
            advantaged_label: None,
            disadvantaged_label: None,
            count_column: "count".into(),
            classes: Vec::new(),
            intersections: Vec::new(),
            condition_on: Vec::new(),
            max_depth: DEFAULT_MAX_DEPTH,
            partitions: Vec::new(),
            nd_threshold: default_nd_threshold(),
            min_cell: DEFAULT_MIN_CELL,
            weighting: Weighting::CellTotal,
            population_shares: BTreeMap::new(),
            flag_threshold: None,
            format: OutputFormat::Json,
            display_decimals: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ToolInfo {
    pub name: &'static str,
    pub version: &'static str,
}

impl ToolInfo {
    fn current() -> Self {
        Self {
            name: TOOL_NAME,
            version: env!("CARGO_PKG_VERSION"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AttributeInventory {
    pub name: String,
    pub role: &'static str,
    pub values: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CountRow {
    pub cell: GroupKey,
    pub class_value: String,
    pub advantaged: u64,
    pub disadvantaged: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DatasetDigest {
    pub protected_attribute: String,
    pub outcome_attribute: String,
    pub advantaged_label: String,
    pub disadvantaged_label: String,
    pub total: u64,
    pub advantaged_total: u64,
    pub disadvantaged_total: u64,
    pub cell_count: usize,
    pub attributes: Vec<AttributeInventory>,
    pub counts: Vec<CountRow>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ClassFindings {
    pub class_value: String,
    pub demographic_disparity: DisparityFinding,
    pub negative_dominance: DisparityFinding,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub population_baseline: Option<DisparityFinding>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CellAudit {
    pub cell: GroupKey,
    /// Demographic disparity within the cell, one per audited class.
    pub findings: Vec<DisparityFinding>,
    pub selection_rates: SelectionRates,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ClassMagnitude {
    pub class_value: String,
    pub magnitude: Option<Fraction>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConditionalAnalysis {
    pub attributes: Vec<String>,
    pub cells: Vec<CellAudit>,
    pub summary: Option<WeightedSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub summary_unavailable: Option<String>,
    pub magnitudes: Vec<ClassMagnitude>,
    pub flags: Vec<CellFlag>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AdvisoryMarker {
    pub conditioning: Vec<String>,
    pub cell: GroupKey,
    pub class_value: String,
    pub gap: Fraction,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct AuditReport {
    pub schema_version: u32,
    pub tool: ToolInfo,
    pub config: AuditConfig,
    pub dataset: DatasetDigest,
    pub unconditioned: Vec<ClassFindings>,
    pub conditional: Vec<ConditionalAnalysis>,
    pub masking_scans: Vec<MaskingScanResult>,
    pub flags: Vec<CellFlag>,
    pub advisory_markers: Vec<AdvisoryMarker>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ScanReport {
    pub schema_version: u32,
    pub tool: ToolInfo,
    pub config: AuditConfig,
    pub masking_scans: Vec<MaskingScanResult>,
}

/// A parsed, validated input ready for auditing.
#[derive(Clone, Debug)]
pub struct PreparedInput {
    pub table: ContingencyTable,
    pub classes: Vec<ProtectedClass>,
}

fn input_path(config: &AuditConfig) -> Result<&PathBuf> {
    config
        .input
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("no input given".into()))
}

fn display_path(config: &AuditConfig) -> String {
    config
        .input
        .as_ref()
        .map(|p| p.display().to_string())
        .unwrap_or_else(|| "<input>".into())
}

pub fn read_input(config: &AuditConfig) -> Result<Vec<u8>> {
    let path = input_path(config)?;
    std::fs::read(path).map_err(|e| Error::Io(e).in_file(path.display().to_string()))
}

/// Columns present in the input, for inline schemas.
fn discover_columns(config: &AuditConfig, source: &[u8]) -> Result<Vec<String>> {
    let columns = match config.input_format {
        InputFormat::Csv | InputFormat::Contingency => {
            let mut reader = csv::ReaderBuilder::new()
                .trim(csv::Trim::All)
                .from_reader(source);
            reader.headers()?.iter().map(String::from).collect()
        }
        InputFormat::Jsonl => {
            let first = source
                .lines()
                .map_while(|l| l.ok())
                .find(|l| !l.trim().is_empty())
                .unwrap_or_default();
            if first.is_empty() {
                Vec::new()
            } else {
                let object: serde_json::Map<String, serde_json::Value> =
                    serde_json::from_str(&first).map_err(|e| Error::MalformedRow {
                        line: 1,
                        reason: e.to_string(),
                    })?;
                object.keys().cloned().collect()
            }
        }
    };
    Ok(columns
        .into_iter()
        .filter(|c| {
            !(config.input_format == InputFormat::Contingency && *c == config.count_column)
        })
        .collect())
}

pub fn resolve_schema(config: &AuditConfig, source: &[u8]) -> Result<AttributeSchema> {
    let base = match &config.schema_file {
        Some(path) => {
            let bytes = std::fs::read(path)
                .map_err(|e| Error::Io(e).in_file(path.display().to_string()))?;
            Some(AttributeSchema::from_json(&bytes)?)
        }
        None => None,
    };
    let attributes = match &base {
        Some(s) => s.attributes().to_vec(),
        None => discover_columns(config, source)
            .map_err(|e| e.in_file(display_path(config)))?
            .into_iter()
            .map(AttributeDecl::new)
            .collect(),
    };
    let pick = |flag: &Option<String>, from_schema: Option<&str>, default: Option<&str>, what: &str| {
        flag.clone()
            .or_else(|| from_schema.map(String::from))
            .or_else(|| default.map(String::from))
            .ok_or_else(|| Error::InvalidConfig(format!("no {what} attribute given")))
    };
    AttributeSchema::new(
        attributes,
        pick(&config.protected, base.as_ref().map(|s| s.protected_attribute()), None, "protected")?,
        pick(&config.outcome, base.as_ref().map(|s| s.outcome_attribute()), None, "outcome")?,
        pick(
            &config.advantaged_label,
            base.as_ref().map(|s| s.advantaged_label()),
            Some("advantaged"),
            "advantaged label",
        )?,
        pick(
            &config.disadvantaged_label,
            base.as_ref().map(|s| s.disadvantaged_label()),
            Some("disadvantaged"),
            "disadvantaged label",
        )?,
    )
}

fn unique_in_order<'a>(names: impl Iterator<Item = &'a String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for n in names {
        if !out.contains(n) {
            out.push(n.clone());
        }
    }
    out
}

/// Parses the input and checks the configuration against its schema.
pub fn prepare(config: &AuditConfig, source: &[u8]) -> Result<PreparedInput> {
    let schema = resolve_schema(config, source)?;
    schema.validate_conditioning(&config.condition_on)?;
    schema.validate_conditioning(&unique_in_order(config.partitions.iter()))?;
    if config.max_depth == 0 {
        return Err(Error::InvalidDepth);
    }
    if config.nd_threshold <= Fraction::zero() || config.nd_threshold >= Fraction::one() {
        return Err(Error::InvalidThreshold(config.nd_threshold.to_string()));
    }
    for share in config.population_shares.values() {
        if !share.is_probability() {
            return Err(Error::InvalidPopulationShare(share.to_string()));
        }
    }
    let intersections = config
        .intersections
        .iter()
        .map(|spec| build_intersectional_class(&schema, &parse_intersection_pairs(spec)?))
        .collect::<Result<Vec<_>>>()?;

    // every attribute the audit touches, in schema order
    let mut touched: Vec<&String> = config.condition_on.iter().chain(&config.partitions).collect();
    for class in &intersections {
        touched.extend(class.conjuncts().iter().map(|(a, _)| a));
    }
    let needed: Vec<String> = schema
        .conditioning_candidates()
        .into_iter()
        .filter(|c| touched.iter().any(|t| t.as_str() == *c))
        .map(String::from)
        .collect();

    let table = match config.input_format {
        InputFormat::Contingency => parse_contingency(source, &schema, &config.count_column)
            .and_then(|t| t.marginalize(&needed)),
        InputFormat::Csv | InputFormat::Jsonl => {
            let format = if config.input_format == InputFormat::Csv {
                RecordFormat::Csv
            } else {
                RecordFormat::Jsonl
            };
            parse_individual_records(source, &schema, format)
                .and_then(|records| tabulate(&schema, &records, &needed))
        }
    }
    .map_err(|e| e.in_file(display_path(config)))?;

    if !table.is_usable() {
        return Err(Error::EmptyDataset.in_file(display_path(config)));
    }

    let mut classes: Vec<ProtectedClass> = if config.classes.is_empty() {
        table.class_values().iter().map(|v| ProtectedClass::value(v.clone())).collect()
    } else {
        config
            .classes
            .iter()
            .map(|v| {
                if table.class_values().contains(v) {
                    Ok(ProtectedClass::value(v.clone()))
                } else {
                    Err(Error::UnknownClassValue(v.clone()))
                }
            })
            .collect::<Result<_>>()?
    };
    classes.extend(intersections.into_iter().map(ProtectedClass::Intersection));
    for key in config.population_shares.keys() {
        if !classes.iter().any(|c| c.label() == *key) {
            return Err(Error::UnknownClassValue(key.clone()));
        }
    }
    Ok(PreparedInput { table, classes })
}

fn digest(table: &ContingencyTable) -> DatasetDigest {
    let schema = table.schema();
    let totals = table.cohort_totals();
    let mut attributes: Vec<AttributeInventory> = table
        .conditioning_attributes()
        .iter()
        .map(|a| AttributeInventory {
            name: a.clone(),
            role: "conditioning",
            values: table.levels_of(a).unwrap_or_default().to_vec(),
        })
        .collect();
    attributes.push(AttributeInventory {
        name: schema.protected_attribute().to_string(),
        role: "protected",
        values: table.class_values().to_vec(),
    });
    attributes.push(AttributeInventory {
        name: schema.outcome_attribute().to_string(),
        role: "outcome",
        values: vec![
            schema.advantaged_label().to_string(),
            schema.disadvantaged_label().to_string(),
        ],
    });
    let counts: Vec<CountRow> = table
        .entries()
        .map(|e| CountRow {
            cell: e.cell,
            class_value: e.class_value.to_string(),
            advantaged: e.counts.advantaged,
            disadvantaged: e.counts.disadvantaged,
        })
        .collect();
    DatasetDigest {
        protected_attribute: schema.protected_attribute().to_string(),
        outcome_attribute: schema.outcome_attribute().to_string(),
        advantaged_label: schema.advantaged_label().to_string(),
        disadvantaged_label: schema.disadvantaged_label().to_string(),
        total: table.total(),
        advantaged_total: totals.advantaged,
        disadvantaged_total: totals.disadvantaged,
        cell_count: counts.len(),
        attributes,
        counts,
    }
}

fn unconditioned_findings(
    config: &AuditConfig,
    table: &ContingencyTable,
    class: &ProtectedClass,
) -> Result<ClassFindings> {
    let props = cohort_proportions(table, class, &GroupKey::unconditioned())?;
    let population_baseline = match config.population_shares.get(&class.label()) {
        Some(share) => Some(population_baseline_disparity(&props, share)?),
        None => None,
    };
    Ok(ClassFindings {
        class_value: class.label(),
        demographic_disparity: demographic_disparity(&props),
        negative_dominance: negative_dominance(&props, &config.nd_threshold)?,
        population_baseline,
    })
}

fn conditional_analysis(
    config: &AuditConfig,
    table: &ContingencyTable,
    classes: &[ProtectedClass],
    attributes: &[String],
) -> Result<ConditionalAnalysis> {
    let cells = table
        .groups_over(attributes)?
        .into_iter()
        .map(|cell| {
            let findings = classes
                .iter()
                .map(|c| cohort_proportions(table, c, &cell).map(|p| demographic_disparity(&p)))
                .collect::<Result<Vec<_>>>()?;
            Ok(CellAudit {
                selection_rates: selection_rates(table, &cell)?,
                cell,
                findings,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (summary, summary_unavailable) =
        match weighted_summary_over(table, classes, attributes, config.weighting) {
            Ok(s) => (Some(s), None),
            Err(Error::NoUsableCells) => (None, Some(Error::NoUsableCells.to_string())),
            Err(e) => return Err(e),
        };
    let magnitudes = match &summary {
        Some(s) => classes
            .iter()
            .map(|c| {
                Ok(ClassMagnitude {
                    class_value: c.label(),
                    magnitude: disparity_magnitude(s, &c.label())?,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        None => Vec::new(),
    };
    Ok(ConditionalAnalysis {
        attributes: attributes.to_vec(),
        cells,
        summary,
        summary_unavailable,
        magnitudes,
        flags: flag_cells(&table.marginalize(attributes)?, config.min_cell),
    })
}

fn masking_scans(
    config: &AuditConfig,
    table: &ContingencyTable,
    classes: &[ProtectedClass],
) -> Result<Vec<MaskingScanResult>> {
    let partitions = unique_in_order(config.condition_on.iter().chain(&config.partitions));
    let mut out = Vec::new();
    for attr in &partitions {
        for class in classes {
            if let ProtectedClass::Intersection(c) = class {
                // already split along this attribute
                if c.constrains(attr) {
                    continue;
                }
            }
            out.push(masking_scan(table, class, attr, &config.nd_threshold)?);
        }
    }
    Ok(out)
}

fn advisory_markers(
    threshold: &Fraction,
    unconditioned: &[ClassFindings],
    conditional: &[ConditionalAnalysis],
) -> Vec<AdvisoryMarker> {
    let marker = |conditioning: &[String], f: &DisparityFinding| {
        f.gap.as_ref().filter(|g| *g >= threshold).map(|g| AdvisoryMarker {
            conditioning: conditioning.to_vec(),
            cell: f.proportions.cell.clone(),
            class_value: f.proportions.class_value.clone(),
            gap: g.clone(),
        })
    };
    let mut out: Vec<AdvisoryMarker> = unconditioned
        .iter()
        .filter_map(|c| marker(&[], &c.demographic_disparity))
        .collect();
    for analysis in conditional {
        for cell in &analysis.cells {
            out.extend(cell.findings.iter().filter_map(|f| marker(&analysis.attributes, f)));
        }
    }
    out
}

/// Runs the full audit on the file named in `config.input`.
pub fn run_audit(config: &AuditConfig) -> Result<AuditReport> {
    let source = read_input(config)?;
    audit_source(config, &source)
}

/// Runs the full audit on already-loaded input bytes.
pub fn audit_source(config: &AuditConfig, source: &[u8]) -> Result<AuditReport> {
    let PreparedInput { table, classes } = prepare(config, source)?;
    let unconditioned = classes
        .iter()
        .map(|c| unconditioned_findings(config, &table, c))
        .collect::<Result<Vec<_>>>()?;
    let conditional = enumerate_conditioning_sets(&config.condition_on, config.max_depth)?
        .iter()
        .map(|set| conditional_analysis(config, &table, &classes, set))
        .collect::<Result<Vec<_>>>()?;
    let masking_scans = masking_scans(config, &table, &classes)?;
    let advisory_markers = config
        .flag_threshold
        .as_ref()
        .map(|t| advisory_markers(t, &unconditioned, &conditional))
        .unwrap_or_default();
    Ok(AuditReport {
        schema_version: SCHEMA_VERSION,
        tool: ToolInfo::current(),
        config: config.clone(),
        dataset: digest(&table),
        flags: flag_cells(&table.marginalize(&[])?, config.min_cell),
        unconditioned,
        conditional,
        masking_scans,
        advisory_markers,
    })
}

/// Masking scans only, over `partitions` (or `condition_on` when no
/// partition is configured).
pub fn scan_source(config: &AuditConfig, source: &[u8]) -> Result<ScanReport> {
    let mut config = config.clone();
    if config.partitions.is_empty() {
        config.partitions = std::mem::take(&mut config.condition_on);
    } else {
        config.condition_on.clear();
    }
    if config.partitions.is_empty() {
        return Err(Error::InvalidConfig("scan needs at least one partition attribute".into()));
    }
    let PreparedInput { table, classes } = prepare(&config, source)?;
    Ok(ScanReport {
        schema_version: SCHEMA_VERSION,
        tool: ToolInfo::current(),
        masking_scans: masking_scans(&config, &table, &classes)?,
        config,
    })
}

fn json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    // Value maps are BTreeMaps, so keys come out sorted.
    let value = serde_json::to_value(value).expect("report serializes");
    let mut out = serde_json::to_vec_pretty(&value).expect("value serializes");
    out.push(b'\n');
    out
}

pub fn render(report: &AuditReport, format: OutputFormat) -> Vec<u8> {
    match format {
        OutputFormat::Json => json_bytes(report),
        OutputFormat::Text => render_text(report).into_bytes(),
        OutputFormat::Csv => render_csv(report),
    }
}

pub fn render_scan(report: &ScanReport, format: OutputFormat) -> Vec<u8> {
    match format {
        OutputFormat::Json => json_bytes(report),
        OutputFormat::Text | OutputFormat::Csv => {
            let mut out = String::new();
            write_scans(&mut out, &report.masking_scans, &report.config.nd_threshold, report.config.display_decimals);
            out.into_bytes()
        }
    }
}

fn pct(places: u32, f: &Option<Fraction>) -> String {
    f.as_ref()
        .map_or_else(|| "n/a".to_string(), |f| f.percent_label_places(places))
}

fn verdict(fired: Option<bool>) -> &'static str {
    match fired {
        Some(true) => "yes",
        Some(false) => "no",
        None => "n/a",
    }
}

fn exact(f: &Option<Fraction>) -> String {
    f.as_ref().map_or_else(|| "n/a".to_string(), Fraction::to_string)
}

fn write_rows(out: &mut String, rows: &[(String, String)]) {
    let width = rows.iter().map(|(l, _)| l.chars().count()).max().unwrap_or(0);
    for (label, body) in rows {
        let _ = writeln!(out, "  {label:<width$}  {body}");
    }
}

/// The scale-free part of the text report: percentages and verdicts only.
///
/// Conditional tables list, per cell, each audited class's share of the
/// advantaged cohort and then of the disadvantaged cohort, with a `Total`
/// row for the whole population.
pub fn render_percentages(report: &AuditReport) -> String {
    let schema = &report.dataset;
    let places = report.config.display_decimals;
    let adv = &schema.advantaged_label;
    let dis = &schema.disadvantaged_label;
    let mut out = String::new();

    let _ = writeln!(out, "Unconditioned findings");
    let threshold = report.config.nd_threshold.percent_label_places(places);
    let mut rows = vec![(
        "class".to_string(),
        format!("{adv} (A) | {dis} (D) | D-A | demographic disparity | negative dominance at {threshold}"),
    )];
    for c in &report.unconditioned {
        let dd = &c.demographic_disparity;
        let mut body = format!(
            "{} | {} | {} | {} | {}",
            pct(places, &dd.proportions.advantaged_share),
            pct(places, &dd.proportions.disadvantaged_share),
            pct(places, &dd.gap),
            verdict(dd.fired),
            verdict(c.negative_dominance.fired),
        );
        if let Some(b) = &c.population_baseline {
            let _ = write!(
                body,
                " | baseline P={}: {}",
                pct(places, &b.population_share),
                verdict(b.fired)
            );
        }
        rows.push((c.class_value.clone(), body));
    }
    write_rows(&mut out, &rows);

    for analysis in &report.conditional {
        let title = analysis.attributes.join(", ");
        let _ = writeln!(out, "\nConditioned on {title}");
        let classes: Vec<&str> = report
            .unconditioned
            .iter()
            .map(|c| c.class_value.as_str())
            .collect();
        let names = classes.join(" ");
        let mut rows = vec![
            (String::new(), format!("{adv} | {dis}")),
            (title.clone(), format!("{names} | {names}")),
        ];
        for cell in &analysis.cells {
            let label = analysis
                .attributes
                .iter()
                .map(|a| cell.cell.get(a).unwrap_or_default())
                .collect::<Vec<_>>()
                .join("/");
            rows.push((label, share_row(places, &cell.findings)));
        }
        let totals: Vec<DisparityFinding> = report
            .unconditioned
            .iter()
            .map(|c| c.demographic_disparity.clone())
            .collect();
        rows.push(("Total".to_string(), share_row(places, &totals)));
        write_rows(&mut out, &rows);

        let gap_rows: Vec<(String, String)> = analysis
            .cells
            .iter()
            .map(|cell| {
                let label = cell.cell.to_string();
                let body = cell
                    .findings
                    .iter()
                    .map(|f| {
                        format!(
                            "{} D-A {} ({})",
                            f.proportions.class_value,
                            pct(places, &f.gap),
                            verdict(f.fired)
                        )
                    })
                    .collect::<Vec<_>>()
                    .join("; ");
                (label, body)
            })
            .collect();
        let _ = writeln!(out, "\n  Per-cell demographic disparity");
        write_rows(&mut out, &gap_rows);

        match &analysis.summary {
            Some(summary) => {
                let weighting = match summary.weighting {
                    Weighting::CellTotal => "cell_total",
                    Weighting::Uniform => "uniform",
                };
                let _ = writeln!(out, "\n  Weighted summary ({weighting} weighting)");
                let a: Vec<String> = summary
                    .classes
                    .iter()
                    .map(|c| pct(places, &c.conditionally_advantaged))
                    .collect();
                let d: Vec<String> = summary
                    .classes
                    .iter()
                    .map(|c| pct(places, &c.conditionally_disadvantaged))
                    .collect();
                let r: Vec<String> = summary
                    .classes
                    .iter()
                    .map(|c| pct(places, &c.weighted_selection_rate))
                    .collect();
                let rows = vec![
                    (
                        String::new(),
                        format!("conditionally {adv} | conditionally {dis}"),
                    ),
                    (String::new(), format!("{names} | {names}")),
                    ("Summary".to_string(), format!("{} | {}", a.join(" "), d.join(" "))),
                    ("Selection rate".to_string(), r.join(" ")),
                ];
                write_rows(&mut out, &rows);
                let mags: Vec<String> = analysis
                    .magnitudes
                    .iter()
                    .map(|m| format!("{} {}", m.class_value, pct(places, &m.magnitude)))
                    .collect();
                let _ = writeln!(
                    out,
                    "  Magnitude (conditionally {dis} minus conditionally {adv}): {}",
                    mags.join(", ")
                );
                if !summary.cells_excluded.is_empty() {
                    let ex: Vec<String> = summary
                        .cells_excluded
                        .iter()
                        .map(|e| format!("{} from {} column", e.cell, e.column.as_str()))
                        .collect();
                    let _ = writeln!(out, "  Excluded: {}", ex.join("; "));
                }
            }
            None => {
                let _ = writeln!(
                    out,
                    "\n  Weighted summary unavailable: {}",
                    analysis.summary_unavailable.as_deref().unwrap_or("n/a")
                );
            }
        }
    }
    out
}

fn share_row(places: u32, findings: &[DisparityFinding]) -> String {
    let a: Vec<String> = findings
        .iter()
        .map(|f| pct(places, &f.proportions.advantaged_share))
        .collect();
    let d: Vec<String> = findings
        .iter()
        .map(|f| pct(places, &f.proportions.disadvantaged_share))
        .collect();
    format!("{} | {}", a.join(" "), d.join(" "))
}

fn write_scans(out: &mut String, scans: &[MaskingScanResult], threshold: &Fraction, places: u32) {
    let _ = writeln!(
        out,
        "Masking scans (negative dominance at {})",
        threshold.percent_label_places(places)
    );
    if scans.is_empty() {
        let _ = writeln!(out, "  none configured");
    }
    for scan in scans {
        let agg = &scan.aggregate_finding;
        let parts: Vec<String> = scan
            .subgroup_findings
            .iter()
            .map(|s| {
                format!(
                    "{} D={} {}",
                    s.subgroup,
                    pct(places, &s.finding.proportions.disadvantaged_share),
                    verdict(s.finding.fired)
                )
            })
            .collect();
        let _ = writeln!(
            out,
            "  {} split by {}: aggregate D={} A={} {}; parts: {}; masking detected: {}",
            scan.class_value,
            scan.partition_attribute,
            pct(places, &agg.proportions.disadvantaged_share),
            pct(places, &agg.proportions.advantaged_share),
            verdict(agg.fired),
            parts.join(", "),
            if scan.masking_detected { "yes" } else { "no" },
        );
    }
}

fn write_flags(out: &mut String, label: &str, flags: &[CellFlag]) {
    for f in flags {
        let kind = match f.flag {
            CellFlagKind::SmallCell => "small cohort",
            CellFlagKind::EmptyCohort => "empty cohort",
        };
        let _ = writeln!(
            out,
            "  [{label}] {} {}: {} ({} members, threshold {})",
            f.cell,
            f.cohort.as_str(),
            kind,
            f.total,
            f.threshold
        );
    }
}

pub fn render_text(report: &AuditReport) -> String {
    let d = &report.dataset;
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} {} audit report (schema version {})",
        report.tool.name, report.tool.version, report.schema_version
    );
    if let Some(input) = &report.config.input {
        let _ = writeln!(out, "Input: {}", input.display());
    }
    let _ = writeln!(
        out,
        "Protected attribute: {}; outcome: {} ({} = advantaged, {} = disadvantaged)",
        d.protected_attribute, d.outcome_attribute, d.advantaged_label, d.disadvantaged_label
    );
    let _ = writeln!(
        out,
        "Observations: {} ({} {}, {} {}) in {} cells\n",
        d.total, d.advantaged_total, d.advantaged_label, d.disadvantaged_total, d.disadvantaged_label, d.cell_count
    );
    out.push_str(&render_percentages(report));
    out.push('\n');
    write_scans(&mut out, &report.masking_scans, &report.config.nd_threshold, report.config.display_decimals);

    let _ = writeln!(out, "\nCell flags (minimum cohort size {})", report.config.min_cell);
    let any = !report.flags.is_empty() || report.conditional.iter().any(|c| !c.flags.is_empty());
    if !any {
        let _ = writeln!(out, "  none");
    }
    write_flags(&mut out, "all", &report.flags);
    for analysis in &report.conditional {
        write_flags(&mut out, &analysis.attributes.join(","), &analysis.flags);
    }
    if let Some(t) = &report.config.flag_threshold {
        let _ = writeln!(out, "\nAdvisory markers (D-A at least {})", t.percent_label_places(report.config.display_decimals));
        if report.advisory_markers.is_empty() {
            let _ = writeln!(out, "  none");
        }
        for m in &report.advisory_markers {
            let _ = writeln!(out, "  * {} in {}: D-A {}", m.class_value, m.cell, m.gap.percent_label_places(report.config.display_decimals));
        }
    }
    out
}

const CSV_HEADER: [&str; 14] = [
    "conditioning",
    "cell",
    "class",
    "measure",
    "class_advantaged",
    "advantaged_total",
    "advantaged_share",
    "class_disadvantaged",
    "disadvantaged_total",
    "disadvantaged_share",
    "gap",
    "fired",
    "threshold",
    "population_share",
];

fn csv_row(conditioning: &[String], f: &DisparityFinding) -> Vec<String> {
    let p = &f.proportions;
    vec![
        conditioning.join(";"),
        if p.cell.is_unconditioned() {
            String::new()
        } else {
            p.cell.to_string()
        },
        p.class_value.clone(),
        f.measure.as_str().to_string(),
        p.class_advantaged.to_string(),
        p.advantaged_total.to_string(),
        exact(&p.advantaged_share),
        p.class_disadvantaged.to_string(),
        p.disadvantaged_total.to_string(),
        exact(&p.disadvantaged_share),
        exact(&f.gap),
        f.fired.map_or("n/a".to_string(), |b| b.to_string()),
        exact(&f.threshold),
        exact(&f.population_share),
    ]
}

/// One row per (cell, class, measure); the unconditioned rows have an empty
/// conditioning column.
pub fn render_csv(report: &AuditReport) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let write = |w: &mut csv::Writer<Vec<u8>>, row: Vec<String>| {
        w.write_record(&row).expect("in-memory write");
    };
    write(&mut w, CSV_HEADER.iter().map(|s| s.to_string()).collect());
    for c in &report.unconditioned {
        write(&mut w, csv_row(&[], &c.demographic_disparity));
        write(&mut w, csv_row(&[], &c.negative_dominance));
        if let Some(b) = &c.population_baseline {
            write(&mut w, csv_row(&[], b));
        }
    }
    for analysis in &report.conditional {
        for cell in &analysis.cells {
            for f in &cell.findings {
                write(&mut w, csv_row(&analysis.attributes, f));
            }
        }
    }
    w.into_inner().expect("in-memory flush")
}
