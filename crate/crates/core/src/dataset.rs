//! Attribute schemas, individual records and the contingency table that
//! every measure is computed from.
//!
//! A [`ContingencyTable`] holds counts keyed by (conditioning assignment,
//! protected class value, cohort). Values are opaque, case-sensitive
//! categorical strings. Cohort labels come from the schema and are
//! normalized to [`Cohort`] on ingestion.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cohort {
    Advantaged,
    Disadvantaged,
}

impl Cohort {
    pub const BOTH: [Cohort; 2] = [Cohort::Advantaged, Cohort::Disadvantaged];

    pub fn as_str(self) -> &'static str {
        match self {
            Cohort::Advantaged => "advantaged",
            Cohort::Disadvantaged => "disadvantaged",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeDecl {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<String>>,
}

impl AttributeDecl {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            values: None,
        }
    }

    pub fn with_values<I, S>(name: impl Into<String>, values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            name: name.into(),
            values: Some(values.into_iter().map(Into::into).collect()),
        }
    }
}

/// Which attribute is protected, which one records the outcome, and how the
/// outcome labels map onto the two cohorts.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawSchema")]
pub struct AttributeSchema {
    attributes: Vec<AttributeDecl>,
    protected_attribute: String,
    outcome_attribute: String,
    advantaged_label: String,
    disadvantaged_label: String,
}

#[derive(Deserialize)]
struct RawSchema {
    attributes: Vec<AttributeDecl>,
    protected_attribute: String,
    outcome_attribute: String,
    advantaged_label: String,
    disadvantaged_label: String,
}

impl TryFrom<RawSchema> for AttributeSchema {
    type Error = Error;

    fn try_from(raw: RawSchema) -> Result<Self> {
        AttributeSchema::new(
            raw.attributes,
            raw.protected_attribute,
            raw.outcome_attribute,
            raw.advantaged_label,
            raw.disadvantaged_label,
        )
    }
}

impl AttributeSchema {
    pub fn new(
        attributes: Vec<AttributeDecl>,
        protected_attribute: impl Into<String>,
        outcome_attribute: impl Into<String>,
        advantaged_label: impl Into<String>,
        disadvantaged_label: impl Into<String>,
    ) -> Result<Self> {
        let schema = Self {
            attributes,
            protected_attribute: protected_attribute.into(),
            outcome_attribute: outcome_attribute.into(),
            advantaged_label: advantaged_label.into(),
            disadvantaged_label: disadvantaged_label.into(),
        };
        schema.validate()?;
        Ok(schema)
    }

    fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for decl in &self.attributes {
            if decl.name.is_empty() {
                return Err(Error::InvalidSchema("empty attribute name".into()));
            }
            if !seen.insert(decl.name.as_str()) {
                return Err(Error::DuplicateAttribute(decl.name.clone()));
            }
            if let Some(values) = &decl.values {
                let distinct: BTreeSet<_> = values.iter().collect();
                if distinct.len() != values.len() {
                    return Err(Error::InvalidSchema(format!(
                        "attribute `{}` declares a value twice",
                        decl.name
                    )));
                }
            }
        }
        for name in [&self.protected_attribute, &self.outcome_attribute] {
            if !seen.contains(name.as_str()) {
                return Err(Error::InvalidSchema(format!(
                    "attribute `{name}` is not declared"
                )));
            }
        }
        if self.protected_attribute == self.outcome_attribute {
            return Err(Error::InvalidSchema(
                "protected and outcome attributes must differ".into(),
            ));
        }
        if self.advantaged_label == self.disadvantaged_label {
            return Err(Error::InvalidSchema(
                "advantaged and disadvantaged labels must differ".into(),
            ));
        }
        if let Some(values) = self.declared_values(&self.outcome_attribute) {
            for label in [&self.advantaged_label, &self.disadvantaged_label] {
                if !values.contains(label) {
                    return Err(Error::InvalidSchema(format!(
                        "outcome label `{label}` is not among the declared outcome values"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        serde_json::from_slice(bytes).map_err(|e| Error::InvalidSchema(e.to_string()))
    }

    pub fn attributes(&self) -> &[AttributeDecl] {
        &self.attributes
    }

    pub fn protected_attribute(&self) -> &str {
        &self.protected_attribute
    }

    pub fn outcome_attribute(&self) -> &str {
        &self.outcome_attribute
    }

    pub fn advantaged_label(&self) -> &str {
        &self.advantaged_label
    }

    pub fn disadvantaged_label(&self) -> &str {
        &self.disadvantaged_label
    }

    pub fn contains(&self, name: &str) -> bool {
        self.attributes.iter().any(|d| d.name == name)
    }

    pub fn declared_values(&self, name: &str) -> Option<&[String]> {
        self.attributes
            .iter()
            .find(|d| d.name == name)
            .and_then(|d| d.values.as_deref())
    }

    pub fn cohort_for(&self, label: &str) -> Option<Cohort> {
        if label == self.advantaged_label {
            Some(Cohort::Advantaged)
        } else if label == self.disadvantaged_label {
            Some(Cohort::Disadvantaged)
        } else {
            None
        }
    }

    pub fn cohort_label(&self, cohort: Cohort) -> &str {
        match cohort {
            Cohort::Advantaged => &self.advantaged_label,
            Cohort::Disadvantaged => &self.disadvantaged_label,
        }
    }

    /// Attributes other than the protected and outcome attributes, in
    /// declaration order.
    pub fn conditioning_candidates(&self) -> Vec<&str> {
        self.attributes
            .iter()
            .map(|d| d.name.as_str())
            .filter(|n| *n != self.protected_attribute && *n != self.outcome_attribute)
            .collect()
    }

    pub fn check_value(&self, attribute: &str, value: &str, line: Option<u64>) -> Result<()> {
        let unknown = || Error::UnknownValue {
            attribute: attribute.to_string(),
            value: value.to_string(),
            line,
        };
        if attribute == self.outcome_attribute && self.cohort_for(value).is_none() {
            return Err(unknown());
        }
        match self.declared_values(attribute) {
            Some(values) if !values.iter().any(|v| v == value) => Err(unknown()),
            _ => Ok(()),
        }
    }

    pub fn validate_conditioning(&self, attributes: &[String]) -> Result<()> {
        let mut seen = BTreeSet::new();
        for name in attributes {
            if !self.contains(name) {
                return Err(Error::UnknownAttribute(name.clone()));
            }
            if *name == self.protected_attribute {
                return Err(Error::ProtectedUsedAsConditioning(name.clone()));
            }
            if *name == self.outcome_attribute {
                return Err(Error::OutcomeUsedAsConditioning(name.clone()));
            }
            if !seen.insert(name) {
                return Err(Error::DuplicateAttribute(name.clone()));
            }
        }
        Ok(())
    }
}

/// One individual: a categorical value for every schema attribute.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Record {
    values: BTreeMap<String, String>,
}

impl Record {
    pub fn from_pairs<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        Self {
            values: pairs
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        }
    }

    pub fn get(&self, attribute: &str) -> Option<&str> {
        self.values.get(attribute).map(String::as_str)
    }

    pub fn values(&self) -> &BTreeMap<String, String> {
        &self.values
    }
}

/// An assignment of values to conditioning attributes. The empty key stands
/// for the unconditioned (fully marginalized) population.
#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct GroupKey(BTreeMap<String, String>);

impl GroupKey {
    pub fn unconditioned() -> Self {
        Self::default()
    }

    pub fn from_pairs<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        Self(
            pairs
                .into_iter()
                .map(|(k, v)| (k.into(), v.into()))
                .collect(),
        )
    }

    pub fn is_unconditioned(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, attribute: &str) -> Option<&str> {
        self.0.get(attribute).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.0.iter().map(|(k, v)| (k.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("(all)");
        }
        let parts: Vec<String> = self.0.iter().map(|(k, v)| format!("{k}={v}")).collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CohortCounts {
    pub advantaged: u64,
    pub disadvantaged: u64,
}

impl CohortCounts {
    pub fn get(&self, cohort: Cohort) -> u64 {
        match cohort {
            Cohort::Advantaged => self.advantaged,
            Cohort::Disadvantaged => self.disadvantaged,
        }
    }

    pub fn total(&self) -> u64 {
        self.advantaged + self.disadvantaged
    }

    fn add(&mut self, cohort: Cohort, count: u64) {
        match cohort {
            Cohort::Advantaged => self.advantaged += count,
            Cohort::Disadvantaged => self.disadvantaged += count,
        }
    }
}

impl std::ops::AddAssign for CohortCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.advantaged += rhs.advantaged;
        self.disadvantaged += rhs.disadvantaged;
    }
}

/// A borrowed view of one stored cell.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TableEntry<'a> {
    pub cell: GroupKey,
    pub class_value: &'a str,
    pub counts: CohortCounts,
}

/// Counts indexed by (conditioning assignment, protected class value, cohort).
///
/// Value order for each attribute is the declared order when the schema
/// declares values, otherwise order of first appearance. Equality compares
/// non-zero counts by value, so two tables built from the same multiset of
/// observations are equal regardless of ingestion order.
#[derive(Clone, Debug)]
pub struct ContingencyTable {
    schema: AttributeSchema,
    conditioning: Vec<String>,
    // one level list per conditioning attribute, then the protected attribute
    levels: Vec<Vec<String>>,
    cells: BTreeMap<Vec<u32>, CohortCounts>,
}

pub(crate) type CellIndex = Vec<u32>;

impl ContingencyTable {
    pub fn schema(&self) -> &AttributeSchema {
        &self.schema
    }

    pub fn conditioning_attributes(&self) -> &[String] {
        &self.conditioning
    }

    pub fn protected_attribute(&self) -> &str {
        self.schema.protected_attribute()
    }

    pub fn class_values(&self) -> &[String] {
        self.levels.last().map(Vec::as_slice).unwrap_or_default()
    }

    /// Known values of a conditioning or protected attribute.
    pub fn levels_of(&self, attribute: &str) -> Option<&[String]> {
        self.attribute_position(attribute)
            .map(|pos| self.levels[pos].as_slice())
    }

    pub(crate) fn attribute_position(&self, attribute: &str) -> Option<usize> {
        if attribute == self.schema.protected_attribute() {
            Some(self.conditioning.len())
        } else {
            self.conditioning.iter().position(|a| a == attribute)
        }
    }

    pub(crate) fn level_index(&self, position: usize, value: &str) -> Option<u32> {
        self.levels[position]
            .iter()
            .position(|v| v == value)
            .map(|i| i as u32)
    }

    pub fn total(&self) -> u64 {
        self.cells.values().map(CohortCounts::total).sum()
    }

    pub fn cohort_totals(&self) -> CohortCounts {
        let mut acc = CohortCounts::default();
        for c in self.cells.values() {
            acc += *c;
        }
        acc
    }

    /// A table with no observations cannot be audited.
    pub fn is_usable(&self) -> bool {
        self.total() > 0
    }

    fn group_key_of(&self, index: &[u32]) -> GroupKey {
        GroupKey(
            self.conditioning
                .iter()
                .zip(index)
                .map(|(attr, &i)| (attr.clone(), self.levels_at(attr, i)))
                .collect(),
        )
    }

    fn levels_at(&self, attribute: &str, i: u32) -> String {
        let pos = self.attribute_position(attribute).expect("known attribute");
        self.levels[pos][i as usize].clone()
    }

    pub fn entries(&self) -> impl Iterator<Item = TableEntry<'_>> {
        let class_pos = self.conditioning.len();
        self.cells.iter().map(move |(index, counts)| TableEntry {
            cell: self.group_key_of(&index[..class_pos]),
            class_value: &self.levels[class_pos][index[class_pos] as usize],
            counts: *counts,
        })
    }

    /// Distinct conditioning assignments that occur in the table, in level order.
    pub fn groups(&self) -> Vec<GroupKey> {
        let n = self.conditioning.len();
        let distinct: BTreeSet<&[u32]> = self.cells.keys().map(|k| &k[..n]).collect();
        distinct.into_iter().map(|k| self.group_key_of(k)).collect()
    }

    /// Distinct projections of the observed cells onto `attributes`, which
    /// must be a subset of the conditioning attributes.
    pub fn groups_over(&self, attributes: &[String]) -> Result<Vec<GroupKey>> {
        let positions = attributes
            .iter()
            .map(|a| {
                self.conditioning
                    .iter()
                    .position(|c| c == a)
                    .ok_or_else(|| Error::UnknownAttribute(a.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut sorted_positions = positions.clone();
        sorted_positions.sort_unstable();
        let distinct: BTreeSet<Vec<u32>> = self
            .cells
            .keys()
            .map(|k| sorted_positions.iter().map(|&p| k[p]).collect())
            .collect();
        Ok(distinct
            .into_iter()
            .map(|k| {
                GroupKey(
                    sorted_positions
                        .iter()
                        .zip(&k)
                        .map(|(&p, &i)| {
                            (
                                self.conditioning[p].clone(),
                                self.levels[p][i as usize].clone(),
                            )
                        })
                        .collect(),
                )
            })
            .collect())
    }

    /// Resolves a (possibly partial) conditioning assignment to index
    /// constraints. Fails when no stored cell matches it.
    pub(crate) fn resolve_cell(&self, cell: &GroupKey) -> Result<Vec<(usize, u32)>> {
        let mut constraints = Vec::with_capacity(cell.len());
        for (attr, value) in cell.iter() {
            let pos = self
                .conditioning
                .iter()
                .position(|c| c == attr)
                .ok_or_else(|| Error::UnknownAttribute(attr.to_string()))?;
            let idx = self
                .level_index(pos, value)
                .ok_or_else(|| Error::UnknownCell(cell.to_string()))?;
            constraints.push((pos, idx));
        }
        if !constraints.is_empty()
            && !self
                .cells
                .keys()
                .any(|k| constraints.iter().all(|&(p, i)| k[p] == i))
        {
            return Err(Error::UnknownCell(cell.to_string()));
        }
        Ok(constraints)
    }

    pub(crate) fn cells_matching<'a>(
        &'a self,
        constraints: &'a [(usize, u32)],
    ) -> impl Iterator<Item = (&'a CellIndex, &'a CohortCounts)> + 'a {
        self.cells
            .iter()
            .filter(move |(k, _)| constraints.iter().all(|&(p, i)| k[p] == i))
    }

    /// Counts for one class value in a (possibly partial) cell. Absent keys
    /// count as zero.
    pub fn counts(&self, cell: &GroupKey, class_value: &str) -> CohortCounts {
        let class_pos = self.conditioning.len();
        let Some(class_idx) = self.level_index(class_pos, class_value) else {
            return CohortCounts::default();
        };
        let Ok(constraints) = self.resolve_cell(cell) else {
            return CohortCounts::default();
        };
        let mut acc = CohortCounts::default();
        for (k, c) in self.cells_matching(&constraints) {
            if k[class_pos] == class_idx {
                acc += *c;
            }
        }
        acc
    }

    /// Cohort totals across all classes in a (possibly partial) cell.
    pub fn cell_totals(&self, cell: &GroupKey) -> Result<CohortCounts> {
        let constraints = self.resolve_cell(cell)?;
        let mut acc = CohortCounts::default();
        for (_, c) in self.cells_matching(&constraints) {
            acc += *c;
        }
        Ok(acc)
    }

    /// Sums out every conditioning attribute not in `keep`.
    pub fn marginalize(&self, keep: &[String]) -> Result<ContingencyTable> {
        let positions = keep
            .iter()
            .map(|a| {
                self.conditioning
                    .iter()
                    .position(|c| c == a)
                    .ok_or_else(|| Error::UnknownAttribute(a.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        let class_pos = self.conditioning.len();
        let mut levels: Vec<Vec<String>> =
            positions.iter().map(|&p| self.levels[p].clone()).collect();
        levels.push(self.levels[class_pos].clone());
        let mut cells: BTreeMap<CellIndex, CohortCounts> = BTreeMap::new();
        for (k, c) in &self.cells {
            let mut key: CellIndex = positions.iter().map(|&p| k[p]).collect();
            key.push(k[class_pos]);
            *cells.entry(key).or_default() += *c;
        }
        Ok(ContingencyTable {
            schema: self.schema.clone(),
            conditioning: keep.to_vec(),
            levels,
            cells,
        })
    }

    /// Every count multiplied by `factor`.
    pub fn scaled(&self, factor: u64) -> ContingencyTable {
        let mut out = self.clone();
        for c in out.cells.values_mut() {
            c.advantaged *= factor;
            c.disadvantaged *= factor;
        }
        out
    }

    /// Expands counts back into one record per individual.
    pub fn to_records(&self) -> Vec<Record> {
        let mut out = Vec::with_capacity(self.total() as usize);
        for entry in self.entries() {
            for cohort in Cohort::BOTH {
                let mut values: BTreeMap<String, String> = entry
                    .cell
                    .iter()
                    .map(|(k, v)| (k.to_string(), v.to_string()))
                    .collect();
                values.insert(
                    self.schema.protected_attribute().to_string(),
                    entry.class_value.to_string(),
                );
                values.insert(
                    self.schema.outcome_attribute().to_string(),
                    self.schema.cohort_label(cohort).to_string(),
                );
                let record = Record { values };
                for _ in 0..entry.counts.get(cohort) {
                    out.push(record.clone());
                }
            }
        }
        out
    }

    /// Writes the table in the contingency CSV format: one column per
    /// conditioning attribute, then protected, outcome and count columns.
    pub fn write_csv<W: Write>(&self, writer: W, count_column: &str) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.conditioning.iter().map(String::as_str).collect();
        header.push(self.schema.protected_attribute());
        header.push(self.schema.outcome_attribute());
        header.push(count_column);
        w.write_record(&header)?;
        for entry in self.entries() {
            for cohort in Cohort::BOTH {
                let mut row: Vec<String> = self
                    .conditioning
                    .iter()
                    .map(|a| entry.cell.get(a).unwrap_or_default().to_string())
                    .collect();
                row.push(entry.class_value.to_string());
                row.push(self.schema.cohort_label(cohort).to_string());
                row.push(entry.counts.get(cohort).to_string());
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    fn canonical(&self) -> BTreeMap<(Vec<&str>, &str, Cohort), u64> {
        let class_pos = self.conditioning.len();
        let mut out = BTreeMap::new();
        for (k, c) in &self.cells {
            let cond: Vec<&str> = (0..class_pos)
                .map(|p| self.levels[p][k[p] as usize].as_str())
                .collect();
            let class = self.levels[class_pos][k[class_pos] as usize].as_str();
            for cohort in Cohort::BOTH {
                let n = c.get(cohort);
                if n > 0 {
                    out.insert((cond.clone(), class, cohort), n);
                }
            }
        }
        out
    }
}

impl PartialEq for ContingencyTable {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema
            && self.conditioning == other.conditioning
            && self.canonical() == other.canonical()
    }
}

impl Eq for ContingencyTable {}

/// Incremental construction of a [`ContingencyTable`].
#[derive(Debug)]
pub struct TableBuilder {
    schema: AttributeSchema,
    conditioning: Vec<String>,
    levels: Vec<Vec<String>>,
    index: Vec<HashMap<String, u32>>,
    cells: BTreeMap<CellIndex, CohortCounts>,
}

impl TableBuilder {
    pub fn new(schema: AttributeSchema, conditioning: Vec<String>) -> Result<Self> {
        schema.validate_conditioning(&conditioning)?;
        let mut builder = Self {
            levels: Vec::new(),
            index: Vec::new(),
            cells: BTreeMap::new(),
            conditioning,
            schema,
        };
        let attrs: Vec<String> = builder
            .conditioning
            .iter()
            .cloned()
            .chain(std::iter::once(builder.schema.protected_attribute().to_string()))
            .collect();
        for attr in attrs {
            let declared: Vec<String> = builder
                .schema
                .declared_values(&attr)
                .map(<[String]>::to_vec)
                .unwrap_or_default();
            let index = declared
                .iter()
                .enumerate()
                .map(|(i, v)| (v.clone(), i as u32))
                .collect();
            builder.levels.push(declared);
            builder.index.push(index);
        }
        Ok(builder)
    }

    fn intern(&mut self, position: usize, value: &str) -> u32 {
        if let Some(&i) = self.index[position].get(value) {
            return i;
        }
        let i = self.levels[position].len() as u32;
        self.levels[position].push(value.to_string());
        self.index[position].insert(value.to_string(), i);
        i
    }

    /// Adds `count` observations. `assignment` holds one value per
    /// conditioning attribute, in order.
    pub fn add(
        &mut self,
        assignment: &[&str],
        class_value: &str,
        cohort: Cohort,
        count: u64,
    ) -> Result<()> {
        self.add_at(assignment, class_value, cohort, count, None)
    }

    fn add_at(
        &mut self,
        assignment: &[&str],
        class_value: &str,
        cohort: Cohort,
        count: u64,
        line: Option<u64>,
    ) -> Result<()> {
        if assignment.len() != self.conditioning.len() {
            return Err(Error::InvalidParameters(format!(
                "expected {} conditioning values, got {}",
                self.conditioning.len(),
                assignment.len()
            )));
        }
        for (attr, value) in self.conditioning.iter().zip(assignment) {
            self.schema.check_value(attr, value, line)?;
        }
        self.schema
            .check_value(self.schema.protected_attribute(), class_value, line)?;
        let mut key = Vec::with_capacity(assignment.len() + 1);
        for (pos, value) in assignment.iter().enumerate() {
            key.push(self.intern(pos, value));
        }
        let class_pos = self.conditioning.len();
        key.push(self.intern(class_pos, class_value));
        self.cells.entry(key).or_default().add(cohort, count);
        Ok(())
    }

    pub fn build(self) -> ContingencyTable {
        ContingencyTable {
            schema: self.schema,
            conditioning: self.conditioning,
            levels: self.levels,
            cells: self.cells,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFormat {
    Csv,
    #[serde(alias = "json-lines")]
    Jsonl,
}

/// Parses one record per data row. Values are whitespace-trimmed and kept
/// verbatim otherwise; row order is preserved.
pub fn parse_individual_records<R: Read>(
    source: R,
    schema: &AttributeSchema,
    format: RecordFormat,
) -> Result<Vec<Record>> {
    match format {
        RecordFormat::Csv => parse_csv_records(source, schema),
        RecordFormat::Jsonl => parse_jsonl_records(source, schema),
    }
}

fn header_columns<R: Read>(
    reader: &mut csv::Reader<R>,
    required: &[&str],
) -> Result<(usize, Vec<usize>)> {
    let header = reader.headers()?.clone();
    let columns = required
        .iter()
        .map(|name| {
            header
                .iter()
                .position(|h| h == *name)
                .ok_or_else(|| Error::MissingColumn {
                    name: name.to_string(),
                    line: None,
                })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((header.len(), columns))
}

fn csv_reader<R: Read>(source: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(source)
}

fn row_line(row: &csv::StringRecord) -> u64 {
    row.position().map(|p| p.line()).unwrap_or(0)
}

fn field<'r>(
    row: &'r csv::StringRecord,
    width: usize,
    column: usize,
    name: &str,
) -> Result<&'r str> {
    let line = row_line(row);
    if row.len() != width {
        return Err(Error::MalformedRow {
            line,
            reason: format!("expected {width} fields, found {}", row.len()),
        });
    }
    let value = &row[column];
    if value.is_empty() {
        return Err(Error::MalformedRow {
            line,
            reason: format!("empty value for `{name}`"),
        });
    }
    Ok(value)
}

fn parse_csv_records<R: Read>(source: R, schema: &AttributeSchema) -> Result<Vec<Record>> {
    let mut reader = csv_reader(source);
    let names: Vec<&str> = schema.attributes().iter().map(|d| d.name.as_str()).collect();
    let (width, columns) = header_columns(&mut reader, &names)?;
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row?;
        let line = row_line(&row);
        let mut values = BTreeMap::new();
        for (name, &col) in names.iter().zip(&columns) {
            let value = field(&row, width, col, name)?;
            schema.check_value(name, value, Some(line))?;
            values.insert(name.to_string(), value.to_string());
        }
        records.push(Record { values });
    }
    Ok(records)
}

fn parse_jsonl_records<R: Read>(source: R, schema: &AttributeSchema) -> Result<Vec<Record>> {
    let mut records = Vec::new();
    for (i, line) in BufReader::new(source).lines().enumerate() {
        let line_no = i as u64 + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let malformed = |reason: String| Error::MalformedRow {
            line: line_no,
            reason,
        };
        let object: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(&line).map_err(|e| malformed(e.to_string()))?;
        let mut values = BTreeMap::new();
        for decl in schema.attributes() {
            let raw = object.get(&decl.name).ok_or_else(|| Error::MissingColumn {
                name: decl.name.clone(),
                line: Some(line_no),
            })?;
            let value = match raw {
                serde_json::Value::String(s) => s.trim().to_string(),
                serde_json::Value::Number(n) => n.to_string(),
                serde_json::Value::Bool(b) => b.to_string(),
                _ => return Err(malformed(format!("non-scalar value for `{}`", decl.name))),
            };
            if value.is_empty() {
                return Err(malformed(format!("empty value for `{}`", decl.name)));
            }
            schema.check_value(&decl.name, &value, Some(line_no))?;
            values.insert(decl.name.clone(), value);
        }
        records.push(Record { values });
    }
    Ok(records)
}

fn parse_count(raw: &str, line: u64) -> Result<u64> {
    if let Ok(n) = raw.parse::<u64>() {
        return Ok(n);
    }
    match raw.parse::<i128>() {
        Ok(n) if n < 0 => Err(Error::NegativeCount {
            line,
            value: raw.to_string(),
        }),
        _ => Err(Error::NonIntegerCount {
            line,
            value: raw.to_string(),
        }),
    }
}

/// Parses a pre-aggregated table. Every schema attribute other than the
/// protected and outcome attributes becomes a conditioning attribute.
/// Duplicate keys are summed.
pub fn parse_contingency<R: Read>(
    source: R,
    schema: &AttributeSchema,
    count_column: &str,
) -> Result<ContingencyTable> {
    let conditioning: Vec<String> = schema
        .conditioning_candidates()
        .into_iter()
        .map(String::from)
        .collect();
    let mut builder = TableBuilder::new(schema.clone(), conditioning.clone())?;
    let mut reader = csv_reader(source);
    let mut required: Vec<&str> = conditioning.iter().map(String::as_str).collect();
    required.push(schema.protected_attribute());
    required.push(schema.outcome_attribute());
    required.push(count_column);
    let (width, columns) = header_columns(&mut reader, &required)?;
    let n_cond = conditioning.len();
    for row in reader.records() {
        let row = row?;
        let line = row_line(&row);
        let mut values = Vec::with_capacity(required.len());
        for (name, &col) in required.iter().zip(&columns) {
            values.push(field(&row, width, col, name)?);
        }
        let count = parse_count(values[n_cond + 2], line)?;
        let label = values[n_cond + 1];
        let cohort = schema.cohort_for(label).ok_or_else(|| Error::UnknownValue {
            attribute: schema.outcome_attribute().to_string(),
            value: label.to_string(),
            line: Some(line),
        })?;
        builder.add_at(&values[..n_cond], values[n_cond], cohort, count, Some(line))?;
    }
    Ok(builder.build())
}

/// Counts records per (conditioning assignment, class, cohort).
pub fn tabulate(
    schema: &AttributeSchema,
    records: &[Record],
    conditioning: &[String],
) -> Result<ContingencyTable> {
    let mut builder = TableBuilder::new(schema.clone(), conditioning.to_vec())?;
    let missing = |name: &str| Error::MissingColumn {
        name: name.to_string(),
        line: None,
    };
    for record in records {
        let assignment = conditioning
            .iter()
            .map(|a| record.get(a).ok_or_else(|| missing(a)))
            .collect::<Result<Vec<_>>>()?;
        let class = record
            .get(schema.protected_attribute())
            .ok_or_else(|| missing(schema.protected_attribute()))?;
        let label = record
            .get(schema.outcome_attribute())
            .ok_or_else(|| missing(schema.outcome_attribute()))?;
        let cohort = schema.cohort_for(label).ok_or_else(|| Error::UnknownValue {
            attribute: schema.outcome_attribute().to_string(),
            value: label.to_string(),
            line: None,
        })?;
        builder.add(&assignment, class, cohort, 1)?;
    }
    Ok(builder.build())
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn berkeley_schema() -> AttributeSchema {
        AttributeSchema::new(
            vec![
                AttributeDecl::new("dept"),
                AttributeDecl::new("gender"),
                AttributeDecl::new("outcome"),
            ],
            "gender",
            "outcome",
            "admitted",
            "rejected",
        )
        .unwrap()
    }

    const BERKELEY: &str = include_str!("../data/berkeley.csv");

    #[test]
    fn schema_rejects_bad_declarations() {
        let attrs = || vec![AttributeDecl::new("g"), AttributeDecl::new("o")];
        assert!(AttributeSchema::new(attrs(), "g", "g", "a", "d").is_err());
        assert!(AttributeSchema::new(attrs(), "g", "o", "a", "a").is_err());
        assert!(AttributeSchema::new(attrs(), "x", "o", "a", "d").is_err());
        let dup = vec![AttributeDecl::new("g"), AttributeDecl::new("g")];
        assert!(matches!(
            AttributeSchema::new(dup, "g", "o", "a", "d"),
            Err(Error::DuplicateAttribute(_))
        ));
    }

    #[test]
    fn schema_from_json() {
        let json = br#"{
            "attributes": [{"name": "dept"}, {"name": "gender", "values": ["Male", "Female"]}, {"name": "outcome"}],
            "protected_attribute": "gender", "outcome_attribute": "outcome",
            "advantaged_label": "admitted", "disadvantaged_label": "rejected"
        }"#;
        let schema = AttributeSchema::from_json(json).unwrap();
        assert_eq!(schema.declared_values("gender").unwrap(), ["Male", "Female"]);
        let bad = br#"{"attributes": [{"name": "g"}], "protected_attribute": "g",
            "outcome_attribute": "o", "advantaged_label": "a", "disadvantaged_label": "d"}"#;
        assert!(AttributeSchema::from_json(bad).is_err());
    }

    #[test]
    fn minimal_csv() {
        let src = "dept,gender,outcome\nA,Male,admitted\nA,Female,rejected\n";
        let recs = parse_individual_records(src.as_bytes(), &berkeley_schema(), RecordFormat::Csv)
            .unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].get("gender"), Some("Male"));
        assert_eq!(recs[1].get("outcome"), Some("rejected"));
    }

    #[test]
    fn csv_values_are_trimmed_and_quoted_fields_work() {
        let src = "dept,gender,outcome\n\"A, east\" , Male ,admitted\n";
        let recs = parse_individual_records(src.as_bytes(), &berkeley_schema(), RecordFormat::Csv)
            .unwrap();
        assert_eq!(recs[0].get("dept"), Some("A, east"));
        assert_eq!(recs[0].get("gender"), Some("Male"));
    }

    #[test]
    fn row_missing_outcome_is_malformed() {
        let src = "dept,gender,outcome\nA,Male,admitted\nA,Female\n";
        let err = parse_individual_records(src.as_bytes(), &berkeley_schema(), RecordFormat::Csv)
            .unwrap_err();
        assert!(matches!(err, Error::MalformedRow { line: 3, .. }), "{err}");
    }

    #[test]
    fn header_missing_column() {
        let src = "dept,gender\nA,Male\n";
        let err = parse_individual_records(src.as_bytes(), &berkeley_schema(), RecordFormat::Csv)
            .unwrap_err();
        assert!(matches!(err, Error::MissingColumn { ref name, .. } if name == "outcome"));
    }

    #[test]
    fn declared_values_are_enforced() {
        let schema = AttributeSchema::new(
            vec![
                AttributeDecl::new("dept"),
                AttributeDecl::with_values("gender", ["Male", "Female"]),
                AttributeDecl::new("outcome"),
            ],
            "gender",
            "outcome",
            "admitted",
            "rejected",
        )
        .unwrap();
        let src = "dept,gender,outcome\nA,male,admitted\n";
        let err = parse_individual_records(src.as_bytes(), &schema, RecordFormat::Csv).unwrap_err();
        assert!(matches!(err, Error::UnknownValue { ref value, line: Some(2), .. } if value == "male"));
        let src = "dept,gender,outcome\nA,Male,waitlisted\n";
        let err = parse_individual_records(src.as_bytes(), &schema, RecordFormat::Csv).unwrap_err();
        assert!(matches!(err, Error::UnknownValue { ref attribute, .. } if attribute == "outcome"));
    }

    #[test]
    fn jsonl_records() {
        let src = "{\"dept\":\"A\",\"gender\":\"Male\",\"outcome\":\"admitted\",\"extra\":1}\n\n{\"dept\":\"B\",\"gender\":\"Female\",\"outcome\":\"rejected\"}\n";
        let recs = parse_individual_records(src.as_bytes(), &berkeley_schema(), RecordFormat::Jsonl)
            .unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[1].get("dept"), Some("B"));

        let src = "{\"dept\":\"A\",\"gender\":\"Male\"}\n";
        let err = parse_individual_records(src.as_bytes(), &berkeley_schema(), RecordFormat::Jsonl)
            .unwrap_err();
        assert!(matches!(err, Error::MissingColumn { line: Some(1), .. }));

        let src = "not json\n";
        let err = parse_individual_records(src.as_bytes(), &berkeley_schema(), RecordFormat::Jsonl)
            .unwrap_err();
        assert!(matches!(err, Error::MalformedRow { line: 1, .. }));
    }

    #[test]
    fn berkeley_contingency() {
        let table = parse_contingency(BERKELEY.as_bytes(), &berkeley_schema(), "count").unwrap();
        assert_eq!(table.total(), 4486);
        assert_eq!(table.conditioning_attributes(), ["dept"]);
        let a = GroupKey::from_pairs([("dept", "A")]);
        assert_eq!(table.counts(&a, "Male").advantaged, 512);
        assert_eq!(table.counts(&a, "Female").advantaged, 89);
        assert_eq!(table.class_values(), ["Male", "Female"]);
        assert_eq!(table.groups().len(), 6);
    }

    #[test]
    fn contingency_duplicates_sum_and_absent_keys_are_zero() {
        let src = "dept,gender,outcome,count\nA,Male,admitted,2\nA,Male,admitted,3\n";
        let table = parse_contingency(src.as_bytes(), &berkeley_schema(), "count").unwrap();
        let a = GroupKey::from_pairs([("dept", "A")]);
        assert_eq!(table.counts(&a, "Male").advantaged, 5);
        assert_eq!(table.counts(&a, "Male").disadvantaged, 0);
        assert_eq!(table.counts(&a, "Female"), CohortCounts::default());
    }

    #[test]
    fn contingency_count_errors() {
        let schema = berkeley_schema();
        let neg = "dept,gender,outcome,count\nA,Male,admitted,-3\n";
        assert!(matches!(
            parse_contingency(neg.as_bytes(), &schema, "count"),
            Err(Error::NegativeCount { line: 2, .. })
        ));
        for bad in ["2.5", "abc", "99999999999999999999999999999999999999999"] {
            let src = format!("dept,gender,outcome,count\nA,Male,admitted,{bad}\n");
            assert!(matches!(
                parse_contingency(src.as_bytes(), &schema, "count"),
                Err(Error::NonIntegerCount { .. })
            ));
        }
        let short = "dept,gender,outcome,count\nA,Male,admitted\n";
        assert!(matches!(
            parse_contingency(short.as_bytes(), &schema, "count"),
            Err(Error::MalformedRow { .. })
        ));
    }

    #[test]
    fn zero_count_table_is_unusable() {
        let src = "dept,gender,outcome,count\nA,Male,admitted,0\n";
        let table = parse_contingency(src.as_bytes(), &berkeley_schema(), "count").unwrap();
        assert_eq!(table.total(), 0);
        assert!(!table.is_usable());
    }

    #[test]
    fn tabulate_unconditioned_berkeley_totals() {
        let table = parse_contingency(BERKELEY.as_bytes(), &berkeley_schema(), "count").unwrap();
        let records = table.to_records();
        assert_eq!(records.len(), 4486);
        let flat = tabulate(&berkeley_schema(), &records, &[]).unwrap();
        assert_eq!(flat.entries().count(), 2);
        let all = GroupKey::unconditioned();
        assert_eq!(flat.counts(&all, "Male").advantaged, 1158);
        assert_eq!(flat.counts(&all, "Female").advantaged, 557);
        assert_eq!(flat.counts(&all, "Male").disadvantaged, 1493);
        assert_eq!(flat.counts(&all, "Female").disadvantaged, 1278);
    }

    #[test]
    fn tabulate_rejects_bad_conditioning() {
        let schema = berkeley_schema();
        assert!(matches!(
            tabulate(&schema, &[], &["gender".into()]),
            Err(Error::ProtectedUsedAsConditioning(_))
        ));
        assert!(matches!(
            tabulate(&schema, &[], &["outcome".into()]),
            Err(Error::OutcomeUsedAsConditioning(_))
        ));
        assert!(matches!(
            tabulate(&schema, &[], &["zip".into()]),
            Err(Error::UnknownAttribute(_))
        ));
        let empty = tabulate(&schema, &[], &["dept".into()]).unwrap();
        assert_eq!(empty.total(), 0);
        assert!(!empty.is_usable());
    }

    #[test]
    fn partial_cells_and_unknown_cells() {
        let table = parse_contingency(BERKELEY.as_bytes(), &berkeley_schema(), "count").unwrap();
        let z = GroupKey::from_pairs([("dept", "Z")]);
        assert!(matches!(table.cell_totals(&z), Err(Error::UnknownCell(_))));
        let q = GroupKey::from_pairs([("quarter", "Q1")]);
        assert!(matches!(table.cell_totals(&q), Err(Error::UnknownAttribute(_))));
        let totals = table.cell_totals(&GroupKey::unconditioned()).unwrap();
        assert_eq!((totals.advantaged, totals.disadvantaged), (1715, 2771));
    }

    #[test]
    fn csv_writer_round_trip() {
        let table = parse_contingency(BERKELEY.as_bytes(), &berkeley_schema(), "count").unwrap();
        let mut out = Vec::new();
        table.write_csv(&mut out, "count").unwrap();
        let again = parse_contingency(out.as_slice(), &berkeley_schema(), "count").unwrap();
        assert_eq!(table, again);
    }
}
