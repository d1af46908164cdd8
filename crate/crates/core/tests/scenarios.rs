use cdd_audit::dataset::{Cohort, GroupKey};
use cdd_audit::disparity::{
    cohort_proportions, demographic_disparity, parity_equivalence_check, ProtectedClass,
};
use cdd_audit::{generate, generate_random, Fraction, ScenarioKind, ScenarioSpec};

#[test]
fn random_draw_order_is_frozen() {
    // independent Python evaluation of the recurrence, seed 0
    let t = generate_random(0, 1, 2, 10).unwrap();
    let cell = GroupKey::from_pairs([("cell", "c0")]);
    let g0 = t.counts(&cell, "g0");
    let g1 = t.counts(&cell, "g1");
    assert_eq!(
        [g0.advantaged, g0.disadvantaged, g1.advantaged, g1.disadvantaged],
        [0, 1, 6, 4]
    );
}

#[test]
fn seeds_determine_tables() {
    for kind in ScenarioKind::ALL {
        let spec = ScenarioSpec::new(kind).with_seed(7);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap(), "{}", kind.as_str());
    }
    let differing = (0..100u64)
        .filter(|&s| generate_random(s, 4, 3, 50).unwrap() != generate_random(s + 1000, 4, 3, 50).unwrap())
        .count();
    assert_eq!(differing, 100);
}

#[test]
fn parity_tables_hide_marginal_disparity() {
    let protected = ProtectedClass::value("protected");
    let zero = Fraction::zero();
    for skew in [0, 1, 2, 3, 5, 10] {
        for cells in [2, 3, 4, 6, 9] {
            for seed in 0..10 {
                let spec = ScenarioSpec::new(ScenarioKind::ConditionalParitySynthetic)
                    .with_seed(seed)
                    .with("cells", cells)
                    .with("skew", skew);
                let t = generate(&spec).unwrap();
                for cell in t.groups() {
                    let check = parity_equivalence_check(&t, &cell, "protected", "reference", &zero).unwrap();
                    assert!(check.holds_parity && check.rates_equal, "{cell} skew {skew}");
                }
                let marginal = cohort_proportions(&t, &protected, &GroupKey::unconditioned()).unwrap();
                let fired = demographic_disparity(&marginal).fired;
                assert_eq!(fired, Some(skew >= 1), "skew {skew} cells {cells} seed {seed}");
            }
        }
    }
}

#[test]
fn worked_examples() {
    let one = Some(Fraction::one());
    let all = GroupKey::unconditioned();

    let a = generate(&ScenarioSpec::new(ScenarioKind::CompanyA)).unwrap();
    let woman = cohort_proportions(&a, &ProtectedClass::value("woman"), &all).unwrap();
    assert_eq!(woman.disadvantaged_share, one);
    assert_eq!(woman.advantaged_share, Some(Fraction::zero()));

    let b = generate(&ScenarioSpec::new(ScenarioKind::CompanyB).with("white_disadvantaged", 10)).unwrap();
    let black = cohort_proportions(&b, &ProtectedClass::value("black"), &all).unwrap();
    assert_eq!(black.disadvantaged_share, Fraction::ratio(1, 2));

    let s = generate(&ScenarioSpec::new(ScenarioKind::SikhBeard)).unwrap();
    assert_eq!(s.counts(&all, "sikh").get(Cohort::Disadvantaged), 8);
    let sikh = cohort_proportions(&s, &ProtectedClass::value("sikh"), &all).unwrap();
    assert_eq!(sikh.disadvantaged_share, Fraction::ratio(8, 370));
}
