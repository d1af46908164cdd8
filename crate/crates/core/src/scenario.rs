//! Built-in fixtures and seeded synthetic tables.
//!
//! Random draws use a plain 64-bit linear congruential generator so that
//! fixtures can be reproduced bit-for-bit in any language:
//!
//! ```text
//! state_0     = seed
//! state_{n+1} = state_n * 6364136223846793005 + 1442695040888963407  (mod 2^64)
//! draw_n      = state_{n+1} >> 32                                     (32 bits)
//! uniform(k)  = (draw_n * k) >> 32                                    (in 0..k)
//! ```

use std::collections::BTreeMap;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::{AttributeDecl, AttributeSchema, Cohort, ContingencyTable, TableBuilder};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct Lcg64 {
    state: u64,
}

impl Lcg64 {
    pub const MULTIPLIER: u64 = 6364136223846793005;
    pub const INCREMENT: u64 = 1442695040888963407;

    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    pub fn next_u32(&mut self) -> u32 {
        self.state = self
            .state
            .wrapping_mul(Self::MULTIPLIER)
            .wrapping_add(Self::INCREMENT);
        (self.state >> 32) as u32
    }

    /// Uniform in `0..bound`. `bound` must be in `1..=2^32`.
    pub fn below(&mut self, bound: u64) -> u64 {
        debug_assert!((1..=1 << 32).contains(&bound));
        (u64::from(self.next_u32()) * bound) >> 32
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    CompanyA,
    CompanyB,
    SikhBeard,
    Berkeley,
    ConditionalParitySynthetic,
    Random,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 6] = [
        ScenarioKind::CompanyA,
        ScenarioKind::CompanyB,
        ScenarioKind::SikhBeard,
        ScenarioKind::Berkeley,
        ScenarioKind::ConditionalParitySynthetic,
        ScenarioKind::Random,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioKind::CompanyA => "company_a",
            ScenarioKind::CompanyB => "company_b",
            ScenarioKind::SikhBeard => "sikh_beard",
            ScenarioKind::Berkeley => "berkeley",
            ScenarioKind::ConditionalParitySynthetic => "conditional_parity_synthetic",
            ScenarioKind::Random => "random",
        }
    }

    /// Recognized parameters and their defaults.
    pub fn defaults(self) -> &'static [(&'static str, u64)] {
        match self {
            ScenarioKind::CompanyA => &[
                ("women", 55),
                ("men", 55),
                ("women_disadvantaged", 55),
                ("men_disadvantaged", 0),
            ],
            ScenarioKind::CompanyB => &[
                ("white", 100),
                ("black", 10),
                ("black_disadvantaged", 10),
                ("white_disadvantaged", 0),
            ],
            ScenarioKind::SikhBeard => &[("population", 1000), ("bearded", 370), ("sikh", 8)],
            ScenarioKind::Berkeley => &[],
            ScenarioKind::ConditionalParitySynthetic => {
                &[("cells", 4), ("skew", 2), ("max_base", 4)]
            }
            ScenarioKind::Random => &[("cells", 4), ("classes", 2), ("max_count", 50)],
        }
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::InvalidParameters(format!("unknown scenario `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub seed: u64,
    #[serde(default)]
    pub parameters: BTreeMap<String, u64>,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind) -> Self {
        Self {
            kind,
            seed: 0,
            parameters: BTreeMap::new(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with(mut self, name: &str, value: u64) -> Self {
        self.parameters.insert(name.to_string(), value);
        self
    }

    fn resolved(&self) -> Result<BTreeMap<&'static str, u64>> {
        let defaults = self.kind.defaults();
        for name in self.parameters.keys() {
            if !defaults.iter().any(|(d, _)| d == name) {
                return Err(Error::InvalidParameters(format!(
                    "`{name}` is not a parameter of {}",
                    self.kind.as_str()
                )));
            }
        }
        Ok(defaults
            .iter()
            .map(|&(name, default)| (name, self.parameters.get(name).copied().unwrap_or(default)))
            .collect())
    }
}

/// Department, admitted men, admitted women, rejected men, rejected women.
pub const BERKELEY_COUNTS: [(&str, u64, u64, u64, u64); 6] = [
    ("A", 512, 89, 313, 19),
    ("B", 313, 17, 207, 8),
    ("C", 120, 202, 205, 391),
    ("D", 138, 131, 279, 244),
    ("E", 53, 94, 138, 299),
    ("F", 22, 24, 351, 317),
];

pub fn berkeley_schema() -> AttributeSchema {
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
    .expect("valid schema")
}

fn binary_schema(protected: &str) -> AttributeSchema {
    AttributeSchema::new(
        vec![AttributeDecl::new(protected), AttributeDecl::new("outcome")],
        protected,
        "outcome",
        "advantaged",
        "disadvantaged",
    )
    .expect("valid schema")
}

fn check(cond: bool, msg: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameters(msg.to_string()))
    }
}

/// Two classes with `(size, disadvantaged)` each, no conditioning.
fn two_class_table(
    protected: &str,
    classes: [(&str, u64, u64); 2],
) -> Result<ContingencyTable> {
    let mut b = TableBuilder::new(binary_schema(protected), vec![])?;
    for (class, size, disadvantaged) in classes {
        check(
            disadvantaged <= size,
            &format!("more {class} disadvantaged than exist"),
        )?;
        b.add(&[], class, Cohort::Advantaged, size - disadvantaged)?;
        b.add(&[], class, Cohort::Disadvantaged, disadvantaged)?;
    }
    Ok(b.build())
}

pub fn generate(spec: &ScenarioSpec) -> Result<ContingencyTable> {
    let p = spec.resolved()?;
    match spec.kind {
        ScenarioKind::CompanyA => two_class_table(
            "gender",
            [
                ("woman", p["women"], p["women_disadvantaged"]),
                ("man", p["men"], p["men_disadvantaged"]),
            ],
        ),
        ScenarioKind::CompanyB => two_class_table(
            "ethnicity",
            [
                ("white", p["white"], p["white_disadvantaged"]),
                ("black", p["black"], p["black_disadvantaged"]),
            ],
        ),
        ScenarioKind::SikhBeard => {
            // every Sikh man is bearded, so all of them are refused
            let (population, bearded, sikh) = (p["population"], p["bearded"], p["sikh"]);
            check(bearded <= population, "bearded exceeds population")?;
            check(sikh <= bearded, "sikh exceeds bearded")?;
            let mut b = TableBuilder::new(binary_schema("religion"), vec![])?;
            b.add(&[], "sikh", Cohort::Advantaged, 0)?;
            b.add(&[], "sikh", Cohort::Disadvantaged, sikh)?;
            b.add(&[], "other", Cohort::Advantaged, population - bearded)?;
            b.add(&[], "other", Cohort::Disadvantaged, bearded - sikh)?;
            Ok(b.build())
        }
        ScenarioKind::Berkeley => {
            let mut b = TableBuilder::new(berkeley_schema(), vec!["dept".into()])?;
            for (dept, ma, fa, mr, fr) in BERKELEY_COUNTS {
                b.add(&[dept], "Male", Cohort::Advantaged, ma)?;
                b.add(&[dept], "Female", Cohort::Advantaged, fa)?;
                b.add(&[dept], "Male", Cohort::Disadvantaged, mr)?;
                b.add(&[dept], "Female", Cohort::Disadvantaged, fr)?;
            }
            Ok(b.build())
        }
        ScenarioKind::ConditionalParitySynthetic => {
            conditional_parity(spec.seed, p["cells"], p["skew"], p["max_base"])
        }
        ScenarioKind::Random => generate_random(spec.seed, p["cells"], p["classes"], p["max_count"]),
    }
}

/// Uniform independent counts in `0..=max_count` for every
/// (cell, class, cohort), drawn in that nesting order. Cells are named
/// `c0, c1, ...` and classes `g0, g1, ...`.
pub fn generate_random(
    seed: u64,
    cells: u64,
    classes: u64,
    max_count: u64,
) -> Result<ContingencyTable> {
    check(cells >= 1 && classes >= 1 && max_count >= 1, "dims must be positive")?;
    check(max_count < u32::MAX as u64, "max_count too large")?;
    let schema = AttributeSchema::new(
        vec![
            AttributeDecl::new("cell"),
            AttributeDecl::new("class"),
            AttributeDecl::new("outcome"),
        ],
        "class",
        "outcome",
        "advantaged",
        "disadvantaged",
    )?;
    let mut rng = Lcg64::new(seed);
    let mut b = TableBuilder::new(schema, vec!["cell".into()])?;
    for c in 0..cells {
        let cell = format!("c{c}");
        for g in 0..classes {
            let class = format!("g{g}");
            for cohort in Cohort::BOTH {
                let n = rng.below(max_count + 1);
                b.add(&[&cell], &class, cohort, n)?;
            }
        }
    }
    Ok(b.build())
}

/// Cells `s0..s{m-1}` with selection rate `(m - i) / (m + 1)` in cell `i`,
/// applied identically to both classes, so every cell is at exact parity.
/// Class sizes in cell `i` are `(m + 1) * b_i * (1 + skew * i)` for
/// `protected` and `(m + 1) * b_i * (1 + skew * (m - 1 - i))` for
/// `reference`, with `b_i` drawn from `1..=max_base`. Any `skew >= 1`
/// concentrates the protected class in the low-rate cells, so the marginal
/// table shows demographic disparity against it; `skew = 0` gives marginal
/// parity.
fn conditional_parity(seed: u64, cells: u64, skew: u64, max_base: u64) -> Result<ContingencyTable> {
    check(cells >= 2, "cells must be at least 2")?;
    check(max_base >= 1, "max_base must be positive")?;
    check(cells <= 1000 && skew <= 1000 && max_base <= 1000, "parameters too large")?;
    let schema = AttributeSchema::new(
        vec![
            AttributeDecl::new("stratum"),
            AttributeDecl::with_values("class", ["protected", "reference"]),
            AttributeDecl::new("outcome"),
        ],
        "class",
        "outcome",
        "advantaged",
        "disadvantaged",
    )?;
    let mut rng = Lcg64::new(seed);
    let mut b = TableBuilder::new(schema, vec!["stratum".into()])?;
    let m = cells;
    for i in 0..m {
        let stratum = format!("s{i}");
        let base = 1 + rng.below(max_base);
        let rate_num = m - i;
        for (class, weight) in [
            ("protected", 1 + skew * i),
            ("reference", 1 + skew * (m - 1 - i)),
        ] {
            let unit = base * weight;
            let size = (m + 1) * unit;
            let advantaged = rate_num * unit;
            b.add(&[&stratum], class, Cohort::Advantaged, advantaged)?;
            b.add(&[&stratum], class, Cohort::Disadvantaged, size - advantaged)?;
        }
    }
    Ok(b.build())
}
