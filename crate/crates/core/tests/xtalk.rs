use proptest::prelude::*;
use wsqkd_core::netgraph::build_plan;
use wsqkd_core::optics::{Band, CrosstalkContribution, CrosstalkKind, Mechanism};
use wsqkd_core::xtalk::{aggregate_chi, delta_qber, recommend_delay, shift_offsets, DelayRecommendation};

const PERIOD: f64 = 50.0;
const GATE: f64 = 1.0;

fn term(kind: CrosstalkKind, band: Band, db: f64, offset: f64) -> CrosstalkContribution {
    CrosstalkContribution {
        kind,
        band,
        mechanism: match kind {
            CrosstalkKind::Point => Mechanism::ConnectorReflection,
            CrosstalkKind::Continuous => Mechanism::RayleighBackscatter,
        },
        source_link: build_plan(2).unwrap().links[0],
        power_ratio_db: db,
        arrival_offset_ns: (kind == CrosstalkKind::Point).then_some(offset),
        removable: band == Band::Interband,
    }
}

fn arb_term() -> impl Strategy<Value = CrosstalkContribution> {
    (any::<bool>(), any::<bool>(), -90.0f64..-30.0, -25.0f64..25.0).prop_map(|(point, intra, db, o)| {
        let kind = if point { CrosstalkKind::Point } else { CrosstalkKind::Continuous };
        let band = if intra { Band::Intraband } else { Band::Interband };
        term(kind, band, db, o)
    })
}

fn aggregate(c: &[CrosstalkContribution], interband: bool) -> wsqkd_core::xtalk::CrosstalkSummary {
    aggregate_chi(c, GATE, PERIOD, 1e-2, 0.44, 0.2, interband).unwrap()
}

#[test]
fn reference_value_and_zero() {
    assert!((delta_qber(0.01, 0.03).unwrap() - 0.004_515_202_535_4).abs() < 1e-12);
    for q in [0.0, 0.1, 0.5] {
        assert_eq!(delta_qber(0.0, q).unwrap(), 0.0);
    }
    assert!(delta_qber(-0.1, 0.03).is_err());
    assert!(delta_qber(0.1, 0.6).is_err());
}

#[test]
fn offset_at_gate_centre_needs_three_quarters_ns() {
    let c = [term(CrosstalkKind::Point, Band::Intraband, -50.0, 0.0)];
    match recommend_delay(&c, GATE, PERIOD) {
        DelayRecommendation::Delay(d) => assert!((d - 0.75).abs() < 1e-9, "{d}"),
        other => panic!("{other:?}"),
    }
    assert_eq!(recommend_delay(&[], GATE, PERIOD), DelayRecommendation::Delay(0.0));
}

#[test]
fn saturated_period_is_infeasible() {
    let c: Vec<_> = (0..100)
        .map(|i| term(CrosstalkKind::Point, Band::Intraband, -50.0, -25.0 + 0.5 * i as f64))
        .collect();
    assert_eq!(recommend_delay(&c, GATE, PERIOD), DelayRecommendation::Infeasible);
}

#[test]
fn in_gate_point_term_counts_in_both_cases() {
    let c = [term(CrosstalkKind::Point, Band::Intraband, -50.0, 0.2)];
    let s = aggregate(&c, false);
    assert!(s.chi_worst > 0.0);
    assert_eq!(s.chi_best, s.chi_worst);
}

proptest! {
    #[test]
    fn penalty_is_below_half_chi(chi in 1e-9f64..1.0, q in 0.0f64..=0.5) {
        prop_assert!(delta_qber(chi, q).unwrap() < chi / 2.0);
    }

    #[test]
    fn penalty_increases_with_chi_and_is_concave(chi in 1e-6f64..0.5, q in 0.0f64..0.45) {
        let d1 = delta_qber(chi, q).unwrap();
        let d2 = delta_qber(2.0 * chi, q).unwrap();
        prop_assert!(d2 > d1);
        prop_assert!(d2 < 2.0 * d1);
    }

    #[test]
    fn penalty_decreases_with_baseline_qber(chi in 1e-6f64..1.0, q in 0.0f64..0.49, dq in 1e-3f64..0.01) {
        prop_assert!(delta_qber(chi, (q + dq).min(0.5)).unwrap() < delta_qber(chi, q).unwrap());
    }

    #[test]
    fn best_case_never_exceeds_worst(terms in prop::collection::vec(arb_term(), 0..12)) {
        for interband in [false, true] {
            let s = aggregate(&terms, interband);
            prop_assert!(0.0 <= s.chi_best && s.chi_best <= s.chi_worst);
        }
        let intra = aggregate(&terms, false);
        let all = aggregate(&terms, true);
        prop_assert!(intra.chi_worst <= all.chi_worst && intra.chi_best <= all.chi_best);
    }

    #[test]
    fn recommended_delay_leaves_only_continuous_terms(terms in prop::collection::vec(arb_term(), 0..8)) {
        if let DelayRecommendation::Delay(d) = recommend_delay(&terms, GATE, PERIOD) {
            prop_assert!((0.0..PERIOD).contains(&d));
            let shifted = aggregate(&shift_offsets(&terms, d, PERIOD), true);
            let continuous: Vec<_> = terms.iter().filter(|c| c.kind == CrosstalkKind::Continuous).cloned().collect();
            let floor = aggregate(&continuous, true);
            prop_assert!((shifted.chi_best - floor.chi_best).abs() <= 1e-12 * floor.chi_best.max(1e-300));
        }
    }
}
