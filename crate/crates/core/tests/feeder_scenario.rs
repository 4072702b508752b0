use seculex::money::Money;
use seculex::scenario::{load_scenario, Strictness};
use seculex::sim::{compare, run_market_session, Scheme};

fn scenario() -> seculex::Scenario {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/four-customer-feeder.json")).unwrap();
    load_scenario(&text, Strictness::Strict).unwrap().0
}

#[test]
fn market_session_reproduces_sample_book() {
    let s = run_market_session(&scenario()).unwrap();
    assert_eq!(s.acceptances[&1], 1.0);
    assert_eq!(s.acceptances[&2], 5.0);
    assert_eq!(s.acceptances[&3], 6.0);
    assert_eq!(s.final_limits.get("C2").unwrap().lower_kw, -21.0);
    assert_eq!(s.final_limits.get("C3").unwrap().lower_kw, -25.0);
    assert_eq!(s.final_limits.get("C4").unwrap().lower_kw, -14.0);
    assert_eq!(s.payments["C2"], Money::from_eur(0.03));
    assert_eq!(s.payments["C3"], Money::from_eur(0.10));
    assert_eq!(s.payments["C4"], Money::from_eur(-0.12));
    assert_eq!(s.social_welfare, Money::from_eur(0.01));
    let rest: Vec<_> = s.final_book.entries().map(|e| (e.order.id, e.remaining_kw)).collect();
    assert_eq!(rest, [(2, 1.0)]);
}

#[test]
fn comparison_reproduces_comparison_table() {
    let reports = compare(&scenario()).unwrap();
    let got: Vec<_> = reports
        .iter()
        .map(|r| {
            (
                r.scheme,
                r.total_curtailment_kw,
                r.renewable_utilization_pct.round(),
                r.security_violation,
                r.opportunity_loss,
            )
        })
        .collect();
    let eur = Money::from_eur;
    assert_eq!(
        got,
        [
            (Scheme::NoControl, 0.0, 100.0, true, eur(0.0)),
            (Scheme::Anm, 9.0, 87.0, false, eur(0.36)),
            (Scheme::StaticKeepSchedule, 17.0, 76.0, false, eur(0.50)),
            (Scheme::StaticReschedule, 7.0, 90.0, false, eur(0.30)),
            (Scheme::SecuLex, 1.0, 99.0, false, eur(0.04)),
        ]
    );
    assert_eq!(reports[4].market_social_welfare, Some(eur(0.01)));
}
