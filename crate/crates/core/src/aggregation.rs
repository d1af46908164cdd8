//! Weighted conditional summaries across cells.
//!
//! Each class's conditionally-advantaged share is `sum_R w_R * A_R / sum_R w_R`
//! (likewise for `D_R`), where the weight `w_R` is the cell's total count by
//! default. Cells missing a cohort are left out of that cohort's column and
//! listed in `cells_excluded`. Summaries carry no fired flag.

use serde::{Deserialize, Serialize};

use crate::dataset::{Cohort, ContingencyTable, GroupKey};
use crate::disparity::{cohort_proportions, ProtectedClass};
use crate::error::{Error, Result};
use crate::fraction::Fraction;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    /// Cell total, advantaged plus disadvantaged.
    #[default]
    CellTotal,
    Uniform,
}

impl std::str::FromStr for Weighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cell_total" => Ok(Weighting::CellTotal),
            "uniform" => Ok(Weighting::Uniform),
            other => Err(Error::InvalidConfig(format!("unknown weighting `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ClassShares {
    pub class_value: String,
    pub conditionally_advantaged: Option<Fraction>,
    pub conditionally_disadvantaged: Option<Fraction>,
    /// Weighted average of the per-cell selection rates, over cells where
    /// the class is present.
    pub weighted_selection_rate: Option<Fraction>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    EmptyAdvantagedCohort,
    EmptyDisadvantagedCohort,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ExcludedCell {
    pub cell: GroupKey,
    pub column: Cohort,
    pub reason: ExclusionReason,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct WeightedSummary {
    pub weighting: Weighting,
    pub conditioning: Vec<String>,
    pub classes: Vec<ClassShares>,
    /// Cells contributing to at least one column.
    pub cells_used: Vec<GroupKey>,
    pub cells_excluded: Vec<ExcludedCell>,
}

impl WeightedSummary {
    pub fn class(&self, class_value: &str) -> Option<&ClassShares> {
        self.classes.iter().find(|c| c.class_value == class_value)
    }
}

struct CellShares {
    weight: Fraction,
    advantaged: Option<Fraction>,
    disadvantaged: Option<Fraction>,
    rate: Option<Fraction>,
}

fn weighted_mean<'a>(points: impl Iterator<Item = (&'a Fraction, &'a Fraction)>) -> Option<Fraction> {
    let (mut num, mut den) = (Fraction::zero(), Fraction::zero());
    for (w, x) in points {
        num = num + w * x;
        den = den + w.clone();
    }
    if den.is_zero() {
        None
    } else {
        Some(num / den)
    }
}

fn cell_shares(
    table: &ContingencyTable,
    class: &ProtectedClass,
    cells: &[GroupKey],
    weighting: Weighting,
) -> Result<Vec<CellShares>> {
    cells
        .iter()
        .map(|cell| {
            let p = cohort_proportions(table, class, cell)?;
            let weight = match weighting {
                Weighting::CellTotal => Fraction::from(p.advantaged_total + p.disadvantaged_total),
                Weighting::Uniform => Fraction::one(),
            };
            let class_total = p.class_advantaged + p.class_disadvantaged;
            Ok(CellShares {
                weight,
                rate: Fraction::ratio(p.class_advantaged, class_total),
                advantaged: p.advantaged_share,
                disadvantaged: p.disadvantaged_share,
            })
        })
        .collect()
}

fn summarize(shares: &[CellShares], class_value: String) -> ClassShares {
    ClassShares {
        class_value,
        conditionally_advantaged: weighted_mean(
            shares
                .iter()
                .filter_map(|s| s.advantaged.as_ref().map(|a| (&s.weight, a))),
        ),
        conditionally_disadvantaged: weighted_mean(
            shares
                .iter()
                .filter_map(|s| s.disadvantaged.as_ref().map(|d| (&s.weight, d))),
        ),
        weighted_selection_rate: weighted_mean(
            shares
                .iter()
                .filter_map(|s| s.rate.as_ref().map(|r| (&s.weight, r))),
        ),
    }
}

/// Summary over every protected class value, with cells taken from all of
/// the table's conditioning attributes.
pub fn weighted_summary(table: &ContingencyTable, weighting: Weighting) -> Result<WeightedSummary> {
    let classes: Vec<ProtectedClass> = table
        .class_values()
        .iter()
        .map(|v| ProtectedClass::value(v.clone()))
        .collect();
    weighted_summary_over(table, &classes, table.conditioning_attributes(), weighting)
}

/// Summary for the given classes, with cells formed from `attributes` (a
/// subset of the table's conditioning attributes).
pub fn weighted_summary_over(
    table: &ContingencyTable,
    classes: &[ProtectedClass],
    attributes: &[String],
    weighting: Weighting,
) -> Result<WeightedSummary> {
    if attributes.is_empty() {
        return Err(Error::NoConditioningAttributes);
    }
    let cells = table.groups_over(attributes)?;
    let mut cells_used = Vec::new();
    let mut cells_excluded = Vec::new();
    let mut any_complete = false;
    for cell in &cells {
        let totals = table.cell_totals(cell)?;
        let has_adv = totals.advantaged > 0;
        let has_dis = totals.disadvantaged > 0;
        any_complete |= has_adv && has_dis;
        if has_adv || has_dis {
            cells_used.push(cell.clone());
        }
        if !has_adv {
            cells_excluded.push(ExcludedCell {
                cell: cell.clone(),
                column: Cohort::Advantaged,
                reason: ExclusionReason::EmptyAdvantagedCohort,
            });
        }
        if !has_dis {
            cells_excluded.push(ExcludedCell {
                cell: cell.clone(),
                column: Cohort::Disadvantaged,
                reason: ExclusionReason::EmptyDisadvantagedCohort,
            });
        }
    }
    if !any_complete {
        return Err(Error::NoUsableCells);
    }
    let classes = classes
        .iter()
        .map(|class| {
            let shares = cell_shares(table, class, &cells, weighting)?;
            Ok(summarize(&shares, class.label()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WeightedSummary {
        weighting,
        conditioning: attributes.to_vec(),
        classes,
        cells_used,
        cells_excluded,
    })
}

/// `conditionally_disadvantaged - conditionally_advantaged`; positive means
/// the class is over-represented among the conditionally disadvantaged.
/// `None` when either column is undefined.
pub fn disparity_magnitude(summary: &WeightedSummary, class_value: &str) -> Result<Option<Fraction>> {
    let shares = summary
        .class(class_value)
        .ok_or_else(|| Error::UnknownClassValue(class_value.to_string()))?;
    Ok(
        match (&shares.conditionally_advantaged, &shares.conditionally_disadvantaged) {
            (Some(a), Some(d)) => Some(d - a),
            _ => None,
        },
    )
}
