use serde_json::{json, Value};

use seculex::money::Money;
use seculex::scenario::{load_scenario, Strictness};
use seculex::sim::{
    compare, run_anm, run_no_control, run_seculex, run_static_envelopes, FlexBehavior, SchemeReport, SimError,
};
use seculex::Scenario;

fn feeder_json() -> Value {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/four-customer-feeder.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn build(v: &Value) -> Scenario {
    load_scenario(&v.to_string(), Strictness::Strict).unwrap().0
}

fn customer(node: &str, net: f64, pv: f64) -> Value {
    json!({
        "node": node,
        "expected_net_kw": net,
        "load_kw": net + pv,
        "pv_kw": pv,
        "price_withdraw_eur_per_kwh": 0.15,
        "price_inject_eur_per_kwh": 0.05,
        "bounds": { "contract_lower_kw": -40, "guaranteed_lower_kw": 0, "guaranteed_upper_kw": 5, "contract_upper_kw": 40 },
        "participates_in_market": true
    })
}

fn star(limit: f64, customers: Vec<Value>) -> Value {
    let names: Vec<String> = customers.iter().map(|c| c["node"].as_str().unwrap().to_string()).collect();
    let mut nodes = vec!["T".to_string()];
    nodes.extend(names.iter().cloned());
    let lines: Vec<Value> = names
        .iter()
        .map(|n| json!({ "from": "T", "to": n, "limit_kw": limit }))
        .collect();
    json!({
        "network": { "nodes": nodes, "root": "T", "lines": lines },
        "customers": customers
    })
}

fn check_rows(report: &SchemeReport, scenario: &Scenario) {
    let pv: f64 = scenario.total_pv_kw();
    let pv_curtailed: f64 = report.rows.iter().map(|r| r.pv_curtailed_kw).sum();
    let util = if pv > 0.0 { 100.0 * (pv - pv_curtailed) / pv } else { 100.0 };
    assert!((util - report.renewable_utilization_pct).abs() <= 0.05);
    let loss: Money = report
        .rows
        .iter()
        .map(|r| {
            let c = scenario.customer(&r.customer).unwrap();
            Money::times(c.price_inject(), r.curtailed_injection_kw * scenario.period_hours())
        })
        .sum();
    assert_eq!(loss, report.opportunity_loss);
}

#[test]
fn feeder_rows_are_consistent_and_dominance_holds() {
    let s = build(&feeder_json());
    let reports = compare(&s).unwrap();
    for r in &reports {
        check_rows(r, &s);
    }
    assert!(reports[4].total_curtailment_kw <= reports[2].total_curtailment_kw);
    assert!(reports[1..].iter().all(|r| !r.security_violation));
    assert!((reports[0].worst_margin_kw - 9.0).abs() < 1e-9);

    let c4 = reports[3].rows.iter().find(|r| r.customer == "C4").unwrap();
    assert_eq!(c4.battery_kw, -4.0);
    let seculex = &reports[4];
    let curtailed: Vec<_> = seculex
        .rows
        .iter()
        .filter(|r| r.curtailed_kw() > 1e-9)
        .map(|r| r.customer.as_str())
        .collect();
    assert_eq!(curtailed, ["C3"]);
    let pay = |c: &str| seculex.rows.iter().find(|r| r.customer == c).unwrap().market_payment;
    assert_eq!(pay("C1"), Some(Money::ZERO));
    assert_eq!(pay("C2"), Some(Money::from_eur(0.03)));
}

#[test]
fn all_zero_scenario_is_identical_across_schemes() {
    let s = build(&star(10.0, vec![customer("A", 0.0, 0.0), customer("B", 0.0, 0.0)]));
    for r in compare(&s).unwrap() {
        assert_eq!(r.total_curtailment_kw, 0.0);
        assert_eq!(r.renewable_utilization_pct, 100.0);
        assert!(!r.security_violation);
        assert_eq!(r.opportunity_loss, Money::ZERO);
    }
}

#[test]
fn single_load_without_pv() {
    let s = build(&star(60.0, vec![customer("A", 8.0, 0.0)]));
    let r = run_no_control(&s).unwrap();
    assert!(!r.security_violation);
    assert_eq!(r.renewable_utilization_pct, 100.0);
}

#[test]
fn anm_waterfills_small_injector() {
    // Two injectors of 2 and 10 kW behind a 6 kW line: overload 6.
    let mut v = star(6.0, vec![customer("A", -2.0, 2.0), customer("B", -10.0, 10.0)]);
    v["network"] = json!({
        "nodes": ["T", "M", "A", "B"],
        "root": "T",
        "lines": [
            { "from": "T", "to": "M", "limit_kw": 6 },
            { "from": "M", "to": "A", "limit_kw": 60 },
            { "from": "M", "to": "B", "limit_kw": 60 }
        ]
    });
    let s = build(&v);
    let r = run_anm(&s).unwrap();
    let cut: Vec<f64> = r.rows.iter().map(|r| r.curtailed_injection_kw).collect();
    assert_eq!(cut, [2.0, 4.0]);
    assert!(!r.security_violation);
}

#[test]
fn anm_without_overload_does_nothing() {
    let s = build(&star(60.0, vec![customer("A", -5.0, 5.0)]));
    let r = run_anm(&s).unwrap();
    assert_eq!(r.total_curtailment_kw, 0.0);
    assert_eq!(r.opportunity_loss, Money::ZERO);
}

#[test]
fn anm_cannot_fix_load_overload() {
    let s = build(&star(5.0, vec![customer("A", 8.0, 0.0)]));
    assert!(matches!(
        run_anm(&s),
        Err(SimError::InsufficientCurtailableInjection { .. })
    ));
}

#[test]
fn profile_inside_envelopes_needs_no_curtailment() {
    let s = build(&star(60.0, vec![customer("A", 1.0, 0.0), customer("B", 2.0, 0.0)]));
    for b in [FlexBehavior::KeepSchedule, FlexBehavior::Reschedule] {
        assert_eq!(run_static_envelopes(&s, b).unwrap().total_curtailment_kw, 0.0);
    }
}

#[test]
fn empty_order_script_degenerates_to_static() {
    let mut v = feeder_json();
    v["orders"] = json!([]);
    v["flexibility_responses"] = json!([]);
    let s = build(&v);
    let market = run_seculex(&s).unwrap();
    let fixed = run_static_envelopes(&s, FlexBehavior::KeepSchedule).unwrap();
    assert_eq!(market.total_curtailment_kw, fixed.total_curtailment_kw);
    assert_eq!(market.opportunity_loss, fixed.opportunity_loss);
    assert_eq!(market.market_social_welfare, Some(Money::ZERO));
}

#[test]
fn equal_prices_still_trade() {
    let mut v = feeder_json();
    v["orders"] = json!([
        { "id": 1, "customer": "C3", "type": "buy", "bound": "lower", "delta_kw": 3, "price_eur_per_kw": 0.02, "product_time": "12:00" },
        { "id": 2, "customer": "C4", "type": "sell", "bound": "lower", "delta_kw": 3, "price_eur_per_kw": 0.02, "product_time": "12:00" }
    ]);
    let s = build(&v);
    let session = seculex::sim::run_market_session(&s).unwrap();
    assert_eq!(session.acceptances[&1], 3.0);
    assert_eq!(session.acceptances[&2], 3.0);
    assert_eq!(session.social_welfare, Money::ZERO);
}

#[test]
fn reports_are_deterministic() {
    let s = build(&feeder_json());
    assert_eq!(compare(&s).unwrap(), compare(&s).unwrap());
}
