//! Conditional demographic disparity auditing.
//!
//! Measures how a protected class is distributed across the advantaged and
//! disadvantaged outcome cohorts, overall and within strata of conditioning
//! attributes. Findings are descriptive; nothing here decides legality.

pub mod aggregation;
pub mod dataset;
pub mod disparity;
pub mod error;
pub mod fraction;
pub mod report;
pub mod scenario;
pub mod subgroup_scan;

pub use aggregation::{
    disparity_magnitude, weighted_summary, weighted_summary_over, ClassShares, WeightedSummary,
    Weighting,
};
pub use dataset::{
    parse_contingency, parse_individual_records, tabulate, AttributeDecl, AttributeSchema, Cohort,
    CohortCounts, ContingencyTable, GroupKey, Record, RecordFormat, TableBuilder,
};
pub use disparity::{
    cohort_proportions, conditional_disparity, conditional_disparity_over, demographic_disparity,
    negative_dominance, parity_equivalence_check, population_baseline_disparity, selection_rate,
    selection_rates, CohortProportions, DisparityFinding, Measure, ParityCheck, ProtectedClass,
};
pub use error::{Error, Result};
pub use fraction::Fraction;
pub use report::{
    audit_source, render, run_audit, scan_source, AuditConfig, AuditReport, InputFormat,
    OutputFormat,
};
pub use scenario::{generate, generate_random, Lcg64, ScenarioKind, ScenarioSpec};
pub use subgroup_scan::{
    build_intersectional_class, enumerate_conditioning_sets, flag_cells, masking_scan, CellFlag,
    CellFlagKind, IntersectionalClass, MaskingScanResult,
};
