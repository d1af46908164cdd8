//! Cohort proportions and the disparity measures built on them.
//!
//! For a protected class and a cell, `A` is the share of the class among the
//! advantaged cohort and `D` its share among the disadvantaged cohort. Every
//! class is audited one-vs-rest: the complement is everyone else in the cell.
//! Proportions are exact; an empty cohort leaves its proportion undefined
//! rather than zero.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{CellIndex, Cohort, ContingencyTable, GroupKey};
use crate::error::{Error, Result};
use crate::fraction::Fraction;
use crate::subgroup_scan::IntersectionalClass;

/// The class being audited: a single protected value or a conjunction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ProtectedClass {
    Value(String),
    Intersection(IntersectionalClass),
}

impl ProtectedClass {
    pub fn value(v: impl Into<String>) -> Self {
        ProtectedClass::Value(v.into())
    }

    pub fn label(&self) -> String {
        match self {
            ProtectedClass::Value(v) => v.clone(),
            ProtectedClass::Intersection(c) => c.name().to_string(),
        }
    }

    pub(crate) fn matcher(&self, table: &ContingencyTable) -> Result<ClassMatcher> {
        match self {
            ProtectedClass::Value(v) => {
                let pos = table.conditioning_attributes().len();
                let idx = table
                    .level_index(pos, v)
                    .ok_or_else(|| Error::UnknownClassValue(v.clone()))?;
                Ok(ClassMatcher(vec![(pos, idx)]))
            }
            ProtectedClass::Intersection(c) => {
                let mut constraints = Vec::new();
                for (attr, value) in c.conjuncts() {
                    let pos = table
                        .attribute_position(attr)
                        .ok_or_else(|| Error::UnknownAttribute(attr.clone()))?;
                    let idx = table.level_index(pos, value).ok_or_else(|| Error::UnknownValue {
                        attribute: attr.clone(),
                        value: value.clone(),
                        line: None,
                    })?;
                    constraints.push((pos, idx));
                }
                Ok(ClassMatcher(constraints))
            }
        }
    }
}

impl From<&str> for ProtectedClass {
    fn from(v: &str) -> Self {
        ProtectedClass::Value(v.to_string())
    }
}

impl From<IntersectionalClass> for ProtectedClass {
    fn from(c: IntersectionalClass) -> Self {
        ProtectedClass::Intersection(c)
    }
}

impl fmt::Display for ProtectedClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Class membership resolved against one table's level indices.
#[derive(Clone, Debug)]
pub(crate) struct ClassMatcher(Vec<(usize, u32)>);

impl ClassMatcher {
    pub(crate) fn matches(&self, key: &CellIndex) -> bool {
        self.0.iter().all(|&(p, i)| key[p] == i)
    }
}

/// `A` and `D` for one class in one cell, with the counts behind them.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CohortProportions {
    pub class_value: String,
    pub cell: GroupKey,
    /// Share of the class in the advantaged cohort (`A`).
    pub advantaged_share: Option<Fraction>,
    /// Share of the class in the disadvantaged cohort (`D`).
    pub disadvantaged_share: Option<Fraction>,
    pub advantaged_total: u64,
    pub disadvantaged_total: u64,
    pub class_advantaged: u64,
    pub class_disadvantaged: u64,
}

impl CohortProportions {
    pub fn from_counts(
        class_value: impl Into<String>,
        cell: GroupKey,
        class_advantaged: u64,
        advantaged_total: u64,
        class_disadvantaged: u64,
        disadvantaged_total: u64,
    ) -> Self {
        debug_assert!(class_advantaged <= advantaged_total);
        debug_assert!(class_disadvantaged <= disadvantaged_total);
        Self {
            class_value: class_value.into(),
            cell,
            advantaged_share: Fraction::ratio(class_advantaged, advantaged_total),
            disadvantaged_share: Fraction::ratio(class_disadvantaged, disadvantaged_total),
            advantaged_total,
            disadvantaged_total,
            class_advantaged,
            class_disadvantaged,
        }
    }

    /// Share of the class in the whole cell, both cohorts together.
    pub fn population_share(&self) -> Option<Fraction> {
        Fraction::ratio(
            self.class_advantaged + self.class_disadvantaged,
            self.advantaged_total + self.disadvantaged_total,
        )
    }

    /// `D - A`, when both are defined.
    pub fn gap(&self) -> Option<Fraction> {
        match (&self.advantaged_share, &self.disadvantaged_share) {
            (Some(a), Some(d)) => Some(d - a),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    DemographicDisparity,
    NegativeDominance,
    PopulationBaseline,
}

impl Measure {
    pub fn as_str(self) -> &'static str {
        match self {
            Measure::DemographicDisparity => "demographic_disparity",
            Measure::NegativeDominance => "negative_dominance",
            Measure::PopulationBaseline => "population_baseline",
        }
    }
}

/// The individual parts of a two-part test.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SubConditions {
    NegativeDominance {
        disadvantaged_above_threshold: Option<bool>,
        advantaged_below_threshold: Option<bool>,
    },
    PopulationBaseline {
        population_above_advantaged: Option<bool>,
        disadvantaged_above_population: Option<bool>,
    },
}

/// The result of one measure. `fired` is `None` when a required proportion
/// is undefined.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct DisparityFinding {
    pub measure: Measure,
    pub proportions: CohortProportions,
    pub gap: Option<Fraction>,
    pub fired: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<Fraction>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub population_share: Option<Fraction>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sub_conditions: Option<SubConditions>,
}

impl DisparityFinding {
    fn bare(measure: Measure, props: &CohortProportions) -> Self {
        Self {
            measure,
            gap: props.gap(),
            proportions: props.clone(),
            fired: None,
            threshold: None,
            population_share: None,
            sub_conditions: None,
        }
    }
}

pub fn default_nd_threshold() -> Fraction {
    Fraction::ratio(1, 2).expect("nonzero denominator")
}

/// `A` and `D` for `class` in `cell`. An unconditioned (empty) cell sums
/// over the whole table; a partial assignment sums over every matching cell.
pub fn cohort_proportions(
    table: &ContingencyTable,
    class: &ProtectedClass,
    cell: &GroupKey,
) -> Result<CohortProportions> {
    let matcher = class.matcher(table)?;
    let constraints = table.resolve_cell(cell)?;
    let (mut adv, mut dis, mut class_adv, mut class_dis) = (0, 0, 0, 0);
    for (key, counts) in table.cells_matching(&constraints) {
        adv += counts.advantaged;
        dis += counts.disadvantaged;
        if matcher.matches(key) {
            class_adv += counts.advantaged;
            class_dis += counts.disadvantaged;
        }
    }
    Ok(CohortProportions::from_counts(
        class.label(),
        cell.clone(),
        class_adv,
        adv,
        class_dis,
        dis,
    ))
}

/// Fires when `D > A`.
pub fn demographic_disparity(props: &CohortProportions) -> DisparityFinding {
    let mut finding = DisparityFinding::bare(Measure::DemographicDisparity, props);
    finding.fired = match (&props.advantaged_share, &props.disadvantaged_share) {
        (Some(a), Some(d)) => Some(d > a),
        _ => None,
    };
    finding
}

/// Fires when `D > threshold > A`, both strict.
pub fn negative_dominance(
    props: &CohortProportions,
    threshold: &Fraction,
) -> Result<DisparityFinding> {
    if *threshold <= Fraction::zero() || *threshold >= Fraction::one() {
        return Err(Error::InvalidThreshold(threshold.to_string()));
    }
    let above = props.disadvantaged_share.as_ref().map(|d| d > threshold);
    let below = props.advantaged_share.as_ref().map(|a| a < threshold);
    let mut finding = DisparityFinding::bare(Measure::NegativeDominance, props);
    finding.fired = match (above, below) {
        (Some(x), Some(y)) => Some(x && y),
        _ => None,
    };
    finding.threshold = Some(threshold.clone());
    finding.sub_conditions = Some(SubConditions::NegativeDominance {
        disadvantaged_above_threshold: above,
        advantaged_below_threshold: below,
    });
    Ok(finding)
}

/// Compares against a known population share `P` instead of requiring both
/// cohorts: fires when `P > A` or `D > P`, using whichever side is defined.
pub fn population_baseline_disparity(
    props: &CohortProportions,
    population_share: &Fraction,
) -> Result<DisparityFinding> {
    if !population_share.is_probability() {
        return Err(Error::InvalidPopulationShare(population_share.to_string()));
    }
    if props.advantaged_share.is_none() && props.disadvantaged_share.is_none() {
        return Err(Error::BothProportionsUndefined);
    }
    let p_above_a = props.advantaged_share.as_ref().map(|a| population_share > a);
    let d_above_p = props.disadvantaged_share.as_ref().map(|d| d > population_share);
    let mut finding = DisparityFinding::bare(Measure::PopulationBaseline, props);
    finding.fired = Some(p_above_a.unwrap_or(false) || d_above_p.unwrap_or(false));
    finding.population_share = Some(population_share.clone());
    finding.sub_conditions = Some(SubConditions::PopulationBaseline {
        population_above_advantaged: p_above_a,
        disadvantaged_above_population: d_above_p,
    });
    Ok(finding)
}

/// One demographic-disparity finding per conditioning cell of the table.
/// No aggregate verdict is formed.
pub fn conditional_disparity(
    table: &ContingencyTable,
    class: &ProtectedClass,
) -> Result<Vec<DisparityFinding>> {
    if table.conditioning_attributes().is_empty() {
        return Err(Error::NoConditioningAttributes);
    }
    conditional_disparity_over(table, class, table.conditioning_attributes())
}

/// Like [`conditional_disparity`], with cells formed from a subset of the
/// table's conditioning attributes.
pub fn conditional_disparity_over(
    table: &ContingencyTable,
    class: &ProtectedClass,
    attributes: &[String],
) -> Result<Vec<DisparityFinding>> {
    if attributes.is_empty() {
        return Err(Error::NoConditioningAttributes);
    }
    table
        .groups_over(attributes)?
        .iter()
        .map(|cell| cohort_proportions(table, class, cell).map(|p| demographic_disparity(&p)))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ClassRate {
    pub class_value: String,
    pub advantaged: u64,
    pub total: u64,
    /// `advantaged / total`, undefined when the class is absent.
    pub rate: Option<Fraction>,
}

/// Per-class share placed in the advantaged cohort within one cell.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SelectionRates {
    pub cell: GroupKey,
    pub rates: Vec<ClassRate>,
}

impl SelectionRates {
    pub fn rate(&self, class_value: &str) -> Option<&Fraction> {
        self.rates
            .iter()
            .find(|r| r.class_value == class_value)
            .and_then(|r| r.rate.as_ref())
    }
}

pub fn selection_rates(table: &ContingencyTable, cell: &GroupKey) -> Result<SelectionRates> {
    table.resolve_cell(cell)?;
    let rates = table
        .class_values()
        .iter()
        .map(|class| {
            let counts = table.counts(cell, class);
            ClassRate {
                class_value: class.clone(),
                advantaged: counts.advantaged,
                total: counts.total(),
                rate: Fraction::ratio(counts.advantaged, counts.total()),
            }
        })
        .collect();
    Ok(SelectionRates {
        cell: cell.clone(),
        rates,
    })
}

/// Selection rate of an arbitrary (possibly intersectional) class.
pub fn selection_rate(
    table: &ContingencyTable,
    class: &ProtectedClass,
    cell: &GroupKey,
) -> Result<ClassRate> {
    let props = cohort_proportions(table, class, cell)?;
    let total = props.class_advantaged + props.class_disadvantaged;
    Ok(ClassRate {
        class_value: props.class_value,
        advantaged: props.class_advantaged,
        total,
        rate: Fraction::ratio(props.class_advantaged, total),
    })
}

/// Outcome of checking that parity between two classes and equal selection
/// rates coincide.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ParityCheck {
    pub holds_parity: bool,
    pub rates_equal: bool,
    pub consistent: bool,
}

impl ParityCheck {
    /// `first_*` and `second_*` are the advantaged/disadvantaged counts of
    /// the two classes. All four must be non-zero.
    pub fn from_counts(
        first_advantaged: u64,
        first_disadvantaged: u64,
        second_advantaged: u64,
        second_disadvantaged: u64,
        tolerance: &Fraction,
    ) -> Self {
        let frac = |n, d| Fraction::ratio(n, d).expect("non-empty cohorts");
        // A and D over the two-class restriction
        let a = frac(first_advantaged, first_advantaged + second_advantaged);
        let d = frac(first_disadvantaged, first_disadvantaged + second_disadvantaged);
        let first_rate = frac(first_advantaged, first_advantaged + first_disadvantaged);
        let second_rate = frac(second_advantaged, second_advantaged + second_disadvantaged);
        let holds_parity = (&d - &a).abs() <= *tolerance;
        let rates_equal = (&first_rate - &second_rate).abs() <= *tolerance;
        Self {
            holds_parity,
            rates_equal,
            consistent: holds_parity == rates_equal,
        }
    }
}

pub fn parity_equivalence_check(
    table: &ContingencyTable,
    cell: &GroupKey,
    class_a: &str,
    class_b: &str,
    tolerance: &Fraction,
) -> Result<ParityCheck> {
    table.resolve_cell(cell)?;
    let mut counts = Vec::with_capacity(2);
    for class in [class_a, class_b] {
        if !table.class_values().iter().any(|c| c == class) {
            return Err(Error::UnknownClassValue(class.to_string()));
        }
        let c = table.counts(cell, class);
        for cohort in Cohort::BOTH {
            if c.get(cohort) == 0 {
                return Err(Error::ZeroClassCount {
                    class: class.to_string(),
                    cohort: cohort.as_str(),
                    cell: cell.to_string(),
                });
            }
        }
        counts.push(c);
    }
    Ok(ParityCheck::from_counts(
        counts[0].advantaged,
        counts[0].disadvantaged,
        counts[1].advantaged,
        counts[1].disadvantaged,
        tolerance,
    ))
}
