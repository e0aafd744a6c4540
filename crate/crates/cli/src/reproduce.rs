use anyhow::Result;

use permcode::arith::is_prime;
use permcode::backend::{identify_trace, Outcome};
use permcode::construction::{construct, plan_parameters, recover_beta};
use permcode::proper::{exhaustive_max_search, upper_bound, verify_proper, Classification, SearchOptions};
use permcode::scenarios::bundled;
use permcode::sim::run_scenario;

pub const TARGETS: &[&str] = &["sigfox", "bound-8-2", "theorem2-sweep", "example5", "example6"];

pub fn run(target: &str, seed: u64) -> Result<bool> {
    match target {
        "sigfox" => sigfox(),
        "bound-8-2" => bound_8_2(),
        "theorem2-sweep" => sweep(),
        "example5" => example5(seed),
        "example6" => example6(seed),
        _ => Err(permcode::Error::NotFound(format!("unknown target {target:?}")).into()),
    }
}

fn check(name: &str, ok: bool) -> bool {
    println!("{} {name}", if ok { "ok  " } else { "FAIL" });
    ok
}

/// 38-bit code numbers tolerating 49 losses, against 32-bit ids and 12-bit counters.
fn sigfox() -> Result<bool> {
    let r = plan_parameters(38, 50, 12, 32)?;
    println!("{r}");
    let mut ok = check("6 bits saved per packet", r.bits_saved == 6);
    ok &= check("nonce reuse cycle grows by about 67.1e6", (r.nonce_reuse_factor / 67.1e6 - 1.0).abs() <= 0.005);
    ok &= check("about 28% more addressable devices", (r.device_count_delta / 0.28 - 1.0).abs() <= 0.01);
    Ok(ok)
}

fn bound_8_2() -> Result<bool> {
    let r = exhaustive_max_search(8, 2, SearchOptions::default())?;
    println!("largest (8, 2)-proper set: {} members, {} search nodes", r.max_m, r.nodes);
    for m in r.set.members.to_vec()? {
        println!("  {}", serde_json::to_string(&m)?);
    }
    Ok(check("maximum is 3", r.max_m == 3))
}

fn sweep() -> Result<bool> {
    let (mut checked, mut failed) = (0u32, 0u32);
    for p in (2u64..=10_000).filter(|&p| is_prime(p)) {
        for l in (1..p).take_while(|l| p * l <= 10_000).filter(|l| (p - 1) % l == 0) {
            checked += 1;
            let q = p * l;
            let members = construct(p, l)?.members.to_vec()?;
            let proper = matches!(verify_proper(&members, q, l)?, Classification::Proper);
            if !proper || members.len() as u64 != upper_bound(q, l)? {
                failed += 1;
                println!("FAIL p = {p}, l = {l}");
            }
        }
    }
    println!("{checked} parameter pairs with p*l <= 10000");
    Ok(check("every construction is proper and meets the bound", failed == 0 && checked > 0))
}

fn example5(seed: u64) -> Result<bool> {
    let mut b = bundled("example5")?;
    b.scenario.seed = seed;
    let out = run_scenario(&b.scenario)?;
    let cns: Vec<u64> = out.trace.iter().map(|p| p.cn).collect();
    println!("received: {cns:?}");
    for delta in [1, 21, 91] {
        println!("  increment {delta:>2}: beta = {}", recover_beta(delta, 110, 77, 9)?);
    }
    let decisions = identify_trace(&out.network, b.backend, &out.trace)?;
    let sender = out.network.devices.iter().find(|d| d.delta == 21).map(|d| d.device_id);
    let mut ok = check("trace is 77, 9", cns == [77, 9]);
    ok &= check("gap for increment 21 is 2", recover_beta(21, 110, 77, 9)? == 2);
    ok &= check(
        "both packets delivered to the increment-21 device",
        decisions.len() == 2
            && decisions
                .iter()
                .all(|d| matches!(d.outcome, Outcome::Delivered { device_id, .. } if Some(device_id) == sender)),
    );
    Ok(ok)
}

fn example6(seed: u64) -> Result<bool> {
    let mut b = bundled("example6")?;
    b.scenario.seed = seed;
    let out = run_scenario(&b.scenario)?;
    let cns: Vec<u64> = out.trace.iter().map(|p| p.cn).collect();
    println!("received: {cns:?}");
    let decisions = identify_trace(&out.network, b.backend, &out.trace)?;
    let mut inc = Vec::new();
    let mut dec = Vec::new();
    let mut delay_of_5 = None;
    for d in &decisions {
        match d.outcome {
            Outcome::Delivered { device_id, delay } => {
                if device_id == 0 {
                    inc.push(d.cn);
                } else {
                    dec.push(d.cn);
                }
                if d.cn == 5 {
                    delay_of_5 = Some(delay);
                }
                println!("  cn {:>2} -> device {device_id} (delay {delay})", d.cn);
            }
            Outcome::Dropped(reason) => println!("  cn {:>2} dropped ({reason:?})", d.cn),
        }
    }
    let mut ok = check("trace is 1 2 10 9 3 7 5 3 4", cns == [1, 2, 10, 9, 3, 7, 5, 3, 4]);
    ok &= check("incrementing device sent 1 2 3 4", inc == [1, 2, 3, 4]);
    ok &= check("decrementing device sent 10 9 7 5 3", dec == [10, 9, 7, 5, 3]);
    ok &= check("CN 5 delivered late", delay_of_5.is_some_and(|d| d >= 1));
    Ok(ok)
}
