//! Conditioning-set enumeration, intersectional classes, small-cell flags
//! and the "divide and conquer" masking scan.
//!
//! A masking scan asks whether negative dominance that holds for a class in
//! aggregate disappears once the class is split along another attribute.
//! Each part is audited as `class AND attribute=value` against everyone
//! else, using the same unpartitioned cohorts as the aggregate.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::dataset::{AttributeSchema, Cohort, ContingencyTable, GroupKey};
use crate::disparity::{cohort_proportions, negative_dominance, DisparityFinding, ProtectedClass};
use crate::error::{Error, Result};
use crate::fraction::Fraction;

pub const DEFAULT_MAX_DEPTH: usize = 2;
pub const DEFAULT_MIN_CELL: u64 = 30;

/// All non-empty subsets of `candidates` with at most `max_depth` members,
/// ordered by size and then by candidate position. Depth is clamped to the
/// number of candidates.
pub fn enumerate_conditioning_sets(
    candidates: &[String],
    max_depth: usize,
) -> Result<Vec<Vec<String>>> {
    if max_depth == 0 {
        return Err(Error::InvalidDepth);
    }
    let mut seen = BTreeSet::new();
    for c in candidates {
        if !seen.insert(c) {
            return Err(Error::DuplicateAttribute(c.clone()));
        }
    }
    let depth = max_depth.min(candidates.len());
    let mut out = Vec::new();
    for size in 1..=depth {
        let mut idx: Vec<usize> = (0..size).collect();
        loop {
            out.push(idx.iter().map(|&i| candidates[i].clone()).collect());
            // advance to the next combination in lexicographic order
            let n = candidates.len();
            let Some(pos) = (0..size).rev().find(|&i| idx[i] != i + n - size) else {
                break;
            };
            idx[pos] += 1;
            for j in pos + 1..size {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    Ok(out)
}

/// A conjunction of attribute=value pairs, e.g. ethnicity=black AND gender=woman.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntersectionalClass {
    conjuncts: Vec<(String, String)>,
    name: String,
}

impl IntersectionalClass {
    pub fn conjuncts(&self) -> &[(String, String)] {
        &self.conjuncts
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn constrains(&self, attribute: &str) -> bool {
        self.conjuncts.iter().any(|(a, _)| a == attribute)
    }

    fn from_conjuncts(conjuncts: Vec<(String, String)>) -> Self {
        let name = conjuncts
            .iter()
            .map(|(a, v)| format!("{a}={v}"))
            .collect::<Vec<_>>()
            .join(",");
        Self { conjuncts, name }
    }
}

pub fn build_intersectional_class(
    schema: &AttributeSchema,
    pairs: &[(String, String)],
) -> Result<IntersectionalClass> {
    if pairs.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    let mut seen = BTreeSet::new();
    for (attr, value) in pairs {
        if !seen.insert(attr) {
            return Err(Error::DuplicateAttribute(attr.clone()));
        }
        if !schema.contains(attr) {
            return Err(Error::UnknownAttribute(attr.clone()));
        }
        if attr == schema.outcome_attribute() {
            return Err(Error::OutcomeUsedAsConditioning(attr.clone()));
        }
        schema.check_value(attr, value, None)?;
    }
    Ok(IntersectionalClass::from_conjuncts(pairs.to_vec()))
}

/// Parses `attr=value,attr=value`.
pub fn parse_intersection_pairs(spec: &str) -> Result<Vec<(String, String)>> {
    spec.split(',')
        .map(|part| {
            let (a, v) = part
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("expected ATTR=VALUE, got `{part}`")))?;
            let (a, v) = (a.trim(), v.trim());
            if a.is_empty() || v.is_empty() {
                return Err(Error::InvalidConfig(format!("expected ATTR=VALUE, got `{part}`")));
            }
            Ok((a.to_string(), v.to_string()))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct SubgroupFinding {
    pub subgroup: GroupKey,
    pub finding: DisparityFinding,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct MaskingScanResult {
    pub class_value: String,
    pub partition_attribute: String,
    pub aggregate_finding: DisparityFinding,
    pub subgroup_findings: Vec<SubgroupFinding>,
    /// Aggregate negative dominance fired and no part fired.
    pub masking_detected: bool,
}

pub fn masking_scan(
    table: &ContingencyTable,
    class: &ProtectedClass,
    partition_attribute: &str,
    threshold: &Fraction,
) -> Result<MaskingScanResult> {
    let invalid = || Error::InvalidPartitionAttribute(partition_attribute.to_string());
    if !table
        .conditioning_attributes()
        .iter()
        .any(|a| a == partition_attribute)
    {
        return Err(invalid());
    }
    let base: Vec<(String, String)> = match class {
        ProtectedClass::Value(v) => vec![(table.protected_attribute().to_string(), v.clone())],
        ProtectedClass::Intersection(c) => {
            if c.constrains(partition_attribute) {
                return Err(invalid());
            }
            c.conjuncts().to_vec()
        }
    };
    let everyone = GroupKey::unconditioned();
    let aggregate = cohort_proportions(table, class, &everyone)?;
    let aggregate_finding = negative_dominance(&aggregate, threshold)?;

    let mut subgroup_findings = Vec::new();
    for part in table.groups_over(&[partition_attribute.to_string()])? {
        let value = part.get(partition_attribute).expect("projected key").to_string();
        let mut conjuncts = base.clone();
        conjuncts.push((partition_attribute.to_string(), value));
        let sub = ProtectedClass::Intersection(IntersectionalClass::from_conjuncts(conjuncts));
        let props = cohort_proportions(table, &sub, &everyone)?;
        subgroup_findings.push(SubgroupFinding {
            subgroup: part,
            finding: negative_dominance(&props, threshold)?,
        });
    }
    let masking_detected = aggregate_finding.fired == Some(true)
        && subgroup_findings.iter().all(|s| s.finding.fired != Some(true));
    Ok(MaskingScanResult {
        class_value: class.label(),
        partition_attribute: partition_attribute.to_string(),
        aggregate_finding,
        subgroup_findings,
        masking_detected,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CellFlagKind {
    SmallCell,
    EmptyCohort,
}

/// An annotation on one cohort of one cell. Flags never change findings.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CellFlag {
    pub cell: GroupKey,
    pub cohort: Cohort,
    pub total: u64,
    pub flag: CellFlagKind,
    pub threshold: u64,
}

/// Flags each cohort of each conditioning cell that is empty
/// (`EmptyCohort`) or has fewer than `min_count` members (`SmallCell`).
pub fn flag_cells(table: &ContingencyTable, min_count: u64) -> Vec<CellFlag> {
    let mut groups = table.groups();
    if groups.is_empty() {
        groups.push(GroupKey::unconditioned());
    }
    let mut flags = Vec::new();
    for cell in groups {
        let totals = table.cell_totals(&cell).unwrap_or_default();
        for cohort in Cohort::BOTH {
            let total = totals.get(cohort);
            let flag = if total == 0 {
                CellFlagKind::EmptyCohort
            } else if total < min_count {
                CellFlagKind::SmallCell
            } else {
                continue;
            };
            flags.push(CellFlag {
                cell: cell.clone(),
                cohort,
                total,
                flag,
                threshold: min_count,
            });
        }
    }
    flags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{parse_contingency, AttributeDecl, TableBuilder};
    use crate::disparity::default_nd_threshold;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn enumeration_examples() {
        assert_eq!(
            enumerate_conditioning_sets(&names(&["dept"]), 1).unwrap(),
            vec![names(&["dept"])]
        );
        assert_eq!(
            enumerate_conditioning_sets(&names(&["a", "b", "c"]), 2).unwrap(),
            vec![
                names(&["a"]),
                names(&["b"]),
                names(&["c"]),
                names(&["a", "b"]),
                names(&["a", "c"]),
                names(&["b", "c"]),
            ]
        );
        assert_eq!(
            enumerate_conditioning_sets(&names(&["a", "b"]), 5).unwrap(),
            vec![names(&["a"]), names(&["b"]), names(&["a", "b"])]
        );
        assert!(matches!(
            enumerate_conditioning_sets(&names(&["a"]), 0),
            Err(Error::InvalidDepth)
        ));
        assert!(enumerate_conditioning_sets(&[], 3).unwrap().is_empty());
    }

    #[test]
    fn enumeration_counts_match_binomials() {
        let c = names(&["a", "b", "c", "d", "e"]);
        let all = enumerate_conditioning_sets(&c, 5).unwrap();
        assert_eq!(all.len(), 31);
        let distinct: BTreeSet<_> = all.iter().collect();
        assert_eq!(distinct.len(), 31);
        assert_eq!(enumerate_conditioning_sets(&c, 3).unwrap().len(), 5 + 10 + 10);
    }

    fn people_schema() -> AttributeSchema {
        AttributeSchema::new(
            vec![
                AttributeDecl::new("ethnicity"),
                AttributeDecl::new("gender"),
                AttributeDecl::new("outcome"),
            ],
            "gender",
            "outcome",
            "hired",
            "filtered",
        )
        .unwrap()
    }

    #[test]
    fn intersection_building() {
        let schema = people_schema();
        let pairs = parse_intersection_pairs("ethnicity=black,gender=woman").unwrap();
        let c = build_intersectional_class(&schema, &pairs).unwrap();
        assert_eq!(c.name(), "ethnicity=black,gender=woman");
        let dup = parse_intersection_pairs("gender=woman,gender=man").unwrap();
        assert!(matches!(
            build_intersectional_class(&schema, &dup),
            Err(Error::DuplicateAttribute(_))
        ));
        assert!(matches!(
            build_intersectional_class(&schema, &[]),
            Err(Error::EmptyIntersection)
        ));
        let unknown = parse_intersection_pairs("religion=x").unwrap();
        assert!(matches!(
            build_intersectional_class(&schema, &unknown),
            Err(Error::UnknownAttribute(_))
        ));
        assert!(parse_intersection_pairs("gender").is_err());
    }

    /// Disadvantaged: 20 black, 20 white, 20 asian women and 40 men.
    /// Advantaged: 10 women (split 4/3/3) and 90 men.
    fn divided_women() -> ContingencyTable {
        let mut b = TableBuilder::new(people_schema(), vec!["ethnicity".into()]).unwrap();
        let rows = [
            ("black", "woman", 4, 20),
            ("white", "woman", 3, 20),
            ("asian", "woman", 3, 20),
            ("black", "man", 30, 14),
            ("white", "man", 30, 13),
            ("asian", "man", 30, 13),
        ];
        for (eth, g, adv, dis) in rows {
            b.add(&[eth], g, Cohort::Advantaged, adv).unwrap();
            b.add(&[eth], g, Cohort::Disadvantaged, dis).unwrap();
        }
        b.build()
    }

    #[test]
    fn masking_detected_for_divided_women() {
        let t = divided_women();
        let r = masking_scan(&t, &"woman".into(), "ethnicity", &default_nd_threshold()).unwrap();
        assert_eq!(
            r.aggregate_finding.proportions.disadvantaged_share,
            Fraction::ratio(60, 100)
        );
        assert_eq!(r.aggregate_finding.fired, Some(true));
        assert_eq!(r.subgroup_findings.len(), 3);
        for s in &r.subgroup_findings {
            assert_eq!(s.finding.proportions.disadvantaged_share, Fraction::ratio(20, 100));
            assert_eq!(s.finding.fired, Some(false));
        }
        assert!(r.masking_detected);
        let dis: u64 = r
            .subgroup_findings
            .iter()
            .map(|s| s.finding.proportions.class_disadvantaged)
            .sum();
        assert_eq!(dis, r.aggregate_finding.proportions.class_disadvantaged);
    }

    #[test]
    fn masking_requires_a_valid_partition() {
        let t = divided_women();
        let half = default_nd_threshold();
        for bad in ["gender", "outcome", "religion"] {
            assert!(matches!(
                masking_scan(&t, &"woman".into(), bad, &half),
                Err(Error::InvalidPartitionAttribute(_))
            ));
        }
    }

    #[test]
    fn masking_not_detected_when_aggregate_quiet() {
        let mut b = TableBuilder::new(people_schema(), vec!["ethnicity".into()]).unwrap();
        b.add(&["x"], "woman", Cohort::Advantaged, 50).unwrap();
        b.add(&["x"], "woman", Cohort::Disadvantaged, 40).unwrap();
        b.add(&["x"], "man", Cohort::Advantaged, 50).unwrap();
        b.add(&["x"], "man", Cohort::Disadvantaged, 60).unwrap();
        let r = masking_scan(&b.build(), &"woman".into(), "ethnicity", &default_nd_threshold())
            .unwrap();
        assert_eq!(r.aggregate_finding.fired, Some(false));
        assert!(!r.masking_detected);
    }

    #[test]
    fn flags_on_berkeley() {
        let schema = AttributeSchema::new(
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
        .unwrap();
        let t = parse_contingency(
            include_str!("../data/berkeley.csv").as_bytes(),
            &schema,
            "count",
        )
        .unwrap();
        let flags = flag_cells(&t, 200);
        let small: Vec<(String, Cohort, u64)> = flags
            .iter()
            .map(|f| (f.cell.to_string(), f.cohort, f.total))
            .collect();
        assert!(small.contains(&("dept=F".to_string(), Cohort::Advantaged, 46)));
        // 147 admitted to E is also under 200
        assert_eq!(small.len(), 2);
        assert!(flags.iter().all(|f| f.flag == CellFlagKind::SmallCell));
        assert!(flag_cells(&t, 1).is_empty());
    }

    #[test]
    fn empty_cohort_flag() {
        let mut b = TableBuilder::new(people_schema(), vec!["ethnicity".into()]).unwrap();
        b.add(&["x"], "woman", Cohort::Disadvantaged, 5).unwrap();
        let flags = flag_cells(&b.build(), 1);
        assert_eq!(flags.len(), 1);
        assert_eq!(flags[0].flag, CellFlagKind::EmptyCohort);
        assert_eq!(flags[0].cohort, Cohort::Advantaged);
    }
}
