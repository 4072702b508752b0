//! Acceptance suite: one PASS/FAIL line per criterion.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seculex::envelopes::{is_secure_margin, verify_limits, verify_limits_oracle};
use seculex::lp::LpStatus;
use seculex::market::{clear, OrderBook, Side};
use seculex::scenario::{load_scenario, Scenario, Strictness};
use seculex::testkit::*;
use seculex::{allocate_does, DoeMatrix, Money};

fn feeder_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/four-customer-feeder.json")
}

fn feeder() -> Scenario {
    let text = std::fs::read_to_string(feeder_path()).expect("feeder scenario");
    load_scenario(&text, Strictness::Strict).expect("valid scenario").0
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn check(cond: bool, what: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what.into())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let took = start.elapsed();
    check(took < limit, format!("took {took:?}, limit {limit:?}"))
}

fn feeder_initial_limits() -> DoeMatrix {
    DoeMatrix::new()
        .with("C1", 0.0, 15.0)
        .with("C2", -20.0, 15.0)
        .with("C3", -20.0, 15.0)
        .with("C4", -20.0, 15.0)
}

fn criterion_1() -> Result<String, String> {
    let s = feeder();
    let start = Instant::now();
    let result = allocate_does(&s.network, &s.bounds()).map_err(|e| e.to_string())?;
    within(start, Duration::from_secs(1))?;
    for (name, env) in feeder_initial_limits().iter() {
        let got = result.doe.get(name).ok_or(format!("no envelope for {name}"))?;
        check(
            close(got.lower_kw, env.lower_kw, 1e-6) && close(got.upper_kw, env.upper_kw, 1e-6),
            format!("{name}: got [{}, {}]", got.lower_kw, got.upper_kw),
        )?;
    }
    let widths: Vec<f64> = result.iterations.iter().map(|i| i.width_kw).collect();
    check(
        widths.len() == 2 && close(widths[0], 15.0, 1e-6) && close(widths[1], 35.0, 1e-6),
        format!("rounds {widths:?}"),
    )?;
    Ok(format!("L1=[0,15], L2..L4=[-20,15], w*={widths:?}, {:?}", start.elapsed()))
}

fn feeder_clearing() -> Result<(seculex::ClearingOutcome, Duration), String> {
    let s = feeder();
    let mut book = OrderBook::new("12:00");
    for o in &s.file.orders {
        book.submit(o.clone()).map_err(|e| e.to_string())?;
    }
    let start = Instant::now();
    let out = clear(&s.network, &feeder_initial_limits(), &book).map_err(|e| e.to_string())?;
    Ok((out, start.elapsed()))
}

fn criterion_2() -> Result<String, String> {
    let (out, took) = feeder_clearing()?;
    check(took < Duration::from_secs(1), format!("took {took:?}"))?;
    for (id, a) in [(1, 1.0), (2, 5.0), (3, 6.0)] {
        let got = out.acceptances.get(&id).copied().unwrap_or(f64::NAN);
        check(close(got, a, 1e-6), format!("a{id} = {got}"))?;
    }
    for (c, lo) in [("C2", -21.0), ("C3", -25.0), ("C4", -14.0)] {
        let env = out.updated_limits.get(c).ok_or("missing limits")?;
        check(
            close(env.lower_kw, lo, 1e-6) && close(env.upper_kw, 15.0, 1e-6),
            format!("{c}: [{}, {}]", env.lower_kw, env.upper_kw),
        )?;
    }
    let rest: Vec<_> = out.updated_book.entries().collect();
    check(rest.len() == 1, format!("{} orders remain", rest.len()))?;
    let e = rest[0];
    check(
        e.order.customer == "C3" && e.order.side == Side::Buy && close(e.remaining_kw, 1.0, 1e-6),
        format!("remaining {:?} {} kW", e.order, e.remaining_kw),
    )?;
    Ok(format!("a={{1,5,6}}, remaining C3 buy 1 kW, {took:?}"))
}

fn criterion_3() -> Result<String, String> {
    let (out, _) = feeder_clearing()?;
    let p = out.payments();
    let expect = [("C2", 30), ("C3", 100), ("C4", -120)];
    for (c, millis) in expect {
        let got = p.get(c).copied().unwrap_or_default();
        check(got == Money::from_millis(millis), format!("{c} pays {got}"))?;
    }
    check(
        out.social_welfare() == Money::from_millis(10),
        format!("SW {}", out.social_welfare()),
    )?;
    Ok("payments +0.03 +0.10 -0.12, SW 0.01".into())
}

fn criterion_4() -> Result<String, String> {
    let run = || {
        Command::new(env!("CARGO_BIN_EXE_seculex"))
            .args(["compare", feeder_path().to_str().unwrap(), "--format", "table"])
            .env("SECULEX_COLOR", "0")
            .output()
            .expect("run seculex")
    };
    let first = run();
    let second = run();
    check(first.status.success(), format!("exit {:?}", first.status.code()))?;
    check(first.stdout == second.stdout, "output differs between runs")?;
    let text = String::from_utf8(first.stdout).map_err(|e| e.to_string())?;
    let rows: BTreeMap<&str, Vec<&str>> = text
        .lines()
        .filter_map(|l| {
            let (label, rest) = l.split_once("  ")?;
            let cells: Vec<&str> = rest
                .split("  ")
                .map(str::trim)
                .filter(|c| !c.is_empty())
                .collect();
            Some((label.trim(), cells))
        })
        .collect();
    let expect: [(&str, [&str; 4]); 4] = [
        ("Curtailment [kW]", ["0", "9", "17 or 7", "1"]),
        ("Renewable utilization [%]", ["100", "87", "76 or 90", "99"]),
        ("Security violation", ["Yes", "No", "No", "No"]),
        ("Market social welfare [EUR]", ["/", "/", "/", "0.01"]),
    ];
    for (label, cells) in expect {
        let got = rows.get(label).ok_or(format!("row {label} missing:\n{text}"))?;
        check(got == &cells, format!("{label}: {got:?}"))?;
    }
    Ok("comparison table reproduced, byte-identical across runs".into())
}

fn criterion_5() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let start = Instant::now();
    let (mut secure, mut insecure) = (0, 0);
    for k in 0..250u64 {
        let net = random_tree(&mut rng, 8);
        let doe = random_envelopes(&mut rng, &net);
        let margin = verify_limits(&net, &doe).map_err(|e| e.to_string())?;
        let oracle = verify_limits_oracle(&net, &doe, 100, k).map_err(|e| e.to_string())?;
        check(oracle.corners_enumerated, "corners not enumerated")?;
        check(
            is_secure_margin(margin) == oracle.secure,
            format!("instance {k}: margin {margin}, oracle {}", oracle.worst_margin_kw),
        )?;
        if oracle.secure {
            secure += 1;
        } else {
            insecure += 1;
        }
    }
    within(start, Duration::from_secs(30))?;
    Ok(format!("250/250 agree ({secure} secure, {insecure} insecure), {:?}", start.elapsed()))
}

fn criterion_6() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for k in 0..600 {
        let net = random_tree(&mut rng, 8);
        let p = random_profile(&mut rng, &net);
        let c = rng.gen_range(0..p.len());
        let delta = rng.gen_range(0.0..25.0);
        let mut q = p.clone();
        q[c] += delta;
        let (fp, fq) = (net.flows_dense(&p), net.flows_dense(&q));
        for e in net.edge_ids() {
            let d = fq[e.0] - fp[e.0];
            check(d >= -1e-9, format!("draw {k}: flow on {} fell by {}", net.edge_label(e), -d))?;
            if !net.downstream_customers(e).contains(&c) {
                check(d.abs() <= 1e-9, format!("draw {k}: off-path {} moved {d}", net.edge_label(e)))?;
            }
        }
    }
    Ok("600 draws monotone, off-path flows unchanged".into())
}

fn criterion_7() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut optimal, mut infeasible) = (0, 0);
    for k in 0..150 {
        let lp = random_boxed_lp(&mut rng, 4);
        let sol = lp.solve().map_err(|e| e.to_string())?;
        match lp_vertex_brute_force(&lp) {
            Some(best) => {
                check(sol.status == LpStatus::Optimal, format!("lp {k}: {:?}", sol.status))?;
                check(
                    close(sol.objective_value, best, 1e-6),
                    format!("lp {k}: simplex {} vs vertices {best}", sol.objective_value),
                )?;
                let resid = lp.max_violation(&sol.values);
                check(resid <= 1e-9, format!("lp {k}: residual {resid}"))?;
                optimal += 1;
            }
            None => {
                check(sol.status == LpStatus::Infeasible, format!("lp {k}: {:?}", sol.status))?;
                infeasible += 1;
            }
        }
    }
    Ok(format!("150 LPs ({optimal} optimal, {infeasible} infeasible) match vertex enumeration"))
}

fn criterion_8() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut checked = 0;
    let mut draws = 0;
    while checked < 60 {
        draws += 1;
        let net = random_three_customer_tree(&mut rng);
        let bounds = random_integer_bounds(&mut rng, &net, 4);
        let Some(best) = lex_grid_brute_force(&net, &bounds) else {
            continue;
        };
        let result = allocate_does(&net, &bounds).map_err(|e| format!("draw {draws}: {e}"))?;
        let ours = sorted_widths(&result.doe);
        check(
            !lex_greater(&best, &ours, 1e-6),
            format!("draw {draws}: grid {best:?} beats {ours:?}"),
        )?;
        checked += 1;
    }
    Ok(format!("{checked} instances lexicographically maximal"))
}

fn criterion_9() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut cleared, mut traded) = (0, 0);
    while cleared < 250 {
        let net = random_tree(&mut rng, 6);
        let bounds = random_integer_bounds(&mut rng, &net, 30);
        let Ok(alloc) = allocate_does(&net, &bounds) else { continue };
        let count = rng.gen_range(1..=5);
        let orders = random_orders(&mut rng, &net, count, 1);
        let mut book = OrderBook::new(PRODUCT_TIME);
        for o in &orders {
            book.submit(o.clone()).map_err(|e| e.to_string())?;
        }
        let out = clear(&net, &alloc.doe, &book).map_err(|e| e.to_string())?;
        let paid: Money = out.payments().values().copied().sum();
        let buys: Money = orders
            .iter()
            .filter(|o| o.side == Side::Buy)
            .map(|o| Money::times(o.price(), out.acceptances[&o.id]))
            .sum();
        let sells: Money = orders
            .iter()
            .filter(|o| o.side == Side::Sell)
            .map(|o| Money::times(o.price(), out.acceptances[&o.id]))
            .sum();
        check(paid - (buys - sells) == Money::ZERO, format!("clearing {cleared}: {paid} vs {}", buys - sells))?;
        let margin = verify_limits(&net, &out.updated_limits).map_err(|e| e.to_string())?;
        check(is_secure_margin(margin), format!("clearing {cleared}: margin {margin}"))?;
        if out.acceptances.values().any(|&a| a > 0.0) {
            traded += 1;
        }
        cleared += 1;
    }
    Ok(format!("{cleared} clearings balanced and secure ({traded} with trades)"))
}

fn main() {
    let criteria: [(u32, fn() -> Result<String, String>); 9] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
    ];
    let mut failed = 0;
    for (n, f) in criteria {
        let result = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        match result {
            Ok(detail) => println!("criterion {n}: PASS ({detail})"),
            Err(why) => {
                failed += 1;
                println!("criterion {n}: FAIL ({why})");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
