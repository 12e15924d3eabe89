//! End-to-end acceptance checks. Runs without the libtest harness so every
//! criterion prints its verdict, and exits non-zero if any fails.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::*;
use nalgebra::{DMatrix, DVector};
use netrtk::harness::*;
use netrtk::observation::{double_difference, ErrorModel, ObservationGenerator};
use netrtk::rover::{ambiguity_fix, integer_search, spp_solve, SolutionMode, SppConfig};
use netrtk::wire::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    id: &'static str,
    ok: bool,
    detail: String,
}

fn check(id: &'static str, ok: bool, detail: String) -> Verdict {
    Verdict { id, ok, detail }
}

fn run(cfg: &ScenarioConfig) -> RunOutput {
    run_scenario(cfg).unwrap_or_else(|e| panic!("{}: {e}", cfg.name))
}

fn fmt(v: Option<f64>) -> String {
    v.map_or("na".into(), |v| format!("{v:.4}"))
}

fn clean_accuracy() -> Verdict {
    let cfg = scenario("clean");
    let started = Instant::now();
    let out = run(&cfg);
    let elapsed = started.elapsed().as_secs_f64();
    let s = &out.summary;
    let ok = s.time_to_first_fix.is_some_and(|k| k <= 120)
        && s.hrms_converged.is_some_and(|h| h <= 0.02)
        && s.fix_ratio >= 0.95
        && elapsed < 10.0;
    check(
        "1 clean accuracy",
        ok,
        format!(
            "ttff={:?} hrms={} fix_ratio={:.3} runtime={elapsed:.2}s",
            s.time_to_first_fix,
            fmt(s.hrms_converged),
            s.fix_ratio
        ),
    )
}

fn spoof_degradation(out: &RunOutput) -> Verdict {
    let s = &out.summary;
    let non_fixed = out.records.iter().filter(|r| r.attack.is_some() && r.mode != SolutionMode::Fixed).count();
    let ok = s.rms_attack.is_some_and(|r| r > 50.0) && non_fixed > 0;
    check("2 spoofing degradation", ok, format!("rms_attack={} non_fixed_epochs={non_fixed}", fmt(s.rms_attack)))
}

fn recovery(out: &RunOutput) -> Verdict {
    let refix = out.summary.time_to_refix_after_attack;
    check("3 recovery", refix.is_some_and(|k| k <= 60), format!("refix_epochs={refix:?}"))
}

fn jamming_denial() -> Verdict {
    let cfg = scenario("jam");
    let out = run(&cfg);
    let (t0, t1) = cfg.attack_span().expect("jam window");
    let first_jammed = out.records.iter().find(|r| r.t >= t0 && r.station_tracked < 4).map(|r| r.t);
    let last_usable = out.records.iter().filter(|r| r.t < t0 && r.station_tracked >= 4).map(|r| r.t).next_back();
    let standalone = out
        .records
        .iter()
        .find(|r| r.t >= t0 && r.t < t1 && r.mode == SolutionMode::Standalone)
        .map(|r| r.t);
    let ok = first_jammed.is_some_and(|t| t <= t0 + 1.0)
        && matches!((last_usable, standalone), (Some(u), Some(s)) if s - u <= cfg.rover.max_age);
    check(
        "4 jamming denial",
        ok,
        format!("below_4_at={first_jammed:?} last_usable={last_usable:?} standalone_at={standalone:?}"),
    )
}

fn countermeasure() -> Verdict {
    let clean = run(&scenario("clean"));
    let mut cfg = scenario("syncspoof");
    cfg.gate.enabled = true;
    let gated = run(&cfg);
    let spp_rms = clean.summary.spp_rms.unwrap_or(f64::NAN);
    let rms = gated.summary.rms_attack.unwrap_or(f64::INFINITY);
    let latency = gated.summary.detection_latency;
    let (mut alarms, mut quiet) = (0, 0);
    for seed in 1..=10 {
        let mut c = scenario("clean");
        c.seed = seed;
        c.gate.enabled = true;
        let s = run(&c).summary;
        alarms += s.false_alarms;
        quiet += s.quiet_epochs;
    }
    let rate = alarms as f64 / quiet as f64;
    let ok = rms <= 2.0 * spp_rms && latency.is_some_and(|k| k <= 20) && rate <= 0.01;
    check(
        "5 countermeasure",
        ok,
        format!("rms_attack={rms:.3} clean_spp_rms={spp_rms:.3} latency={latency:?} false_rejections={alarms}/{quiet} ({:.2}%)", 100.0 * rate),
    )
}

fn dd_clock_cancellation(rng: &mut ChaCha8Rng) -> Verdict {
    let mut worst = 0.0f64;
    for trial in 0..1000 {
        let t = rng.gen_range(0.0..86_400.0);
        let model = ErrorModel { seed: trial, ..model(trial) };
        let rover = rover_pos(rng.gen_range(-5000.0..5000.0), rng.gen_range(-5000.0..5000.0));
        let sats = sats_at(t);
        let sats = in_view(&station_pos(), &in_view(&rover, &sats));
        if sats.len() < 2 {
            continue;
        }
        let station = station_pos();
        let gen = |id, pos, clk| ObservationGenerator::new(id, model.clone(), 0.0).synthesize(pos, clk, &sats, t);
        let (r0, s0) = (gen(2, &rover, 0.0), gen(1, &station, 0.0));
        let (r1, s1) = (gen(2, &rover, rng.gen_range(-1e-3..1e-3)), gen(1, &station, rng.gen_range(-1e-3..1e-3)));
        for s in &sats[1..] {
            let a = double_difference(&r0, &s0, sats[0].key, s.key).unwrap();
            let b = double_difference(&r1, &s1, sats[0].key, s.key).unwrap();
            worst = worst.max((a.code_dd - b.code_dd).abs()).max((a.phase_dd - b.phase_dd).abs());
        }
    }
    check("6a dd clock cancellation", worst <= 1e-9, format!("max_diff={worst:.3e}"))
}

fn spp_exact(rng: &mut ChaCha8Rng) -> Verdict {
    let model = ErrorModel::error_free();
    let cfg = SppConfig::from_model(&model);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let t = rng.gen_range(0.0..86_400.0);
        let pos = rover_pos(rng.gen_range(-50_000.0..50_000.0), rng.gen_range(-50_000.0..50_000.0));
        let sats = in_view(&pos, &sats_at(t));
        let clk = rng.gen_range(-1e-3..1e-3);
        let epoch = ObservationGenerator::new(1, model.clone(), 0.0).synthesize(&pos, clk, &sats, t);
        let err = spp_solve(&epoch, &sats, &cfg).map_or(f64::INFINITY, |s| (s.position_ecef - pos).norm());
        worst = worst.max(err);
    }
    check("6b noise-free spp", worst <= 1e-6, format!("max_error={worst:.3e} m"))
}

fn ils_vs_exhaustive(rng: &mut ChaCha8Rng) -> Verdict {
    const W: i64 = 3;
    let mut mismatches = 0;
    for _ in 0..200 {
        let m = DMatrix::from_fn(4, 4, |_, _| rng.gen_range(-1.0..1.0));
        let u = m.qr().q();
        let eig = DMatrix::from_diagonal(&DVector::from_fn(4, |_, _| rng.gen_range(0.01..0.5)));
        let q = &u * eig * u.transpose();
        let q = (&q + q.transpose()) * 0.5;
        let a_hat = DVector::from_fn(4, |_, _| rng.gen_range(-50.0..50.0));
        let q_inv = q.clone().try_inverse().unwrap();
        let cost = |z: &[i64]| {
            let e = DVector::from_iterator(4, z.iter().map(|&v| v as f64)) - &a_hat;
            (e.transpose() * &q_inv * &e)[(0, 0)]
        };
        let base: Vec<i64> = a_hat.iter().map(|v| v.round() as i64).collect();
        let mut best = (base.clone(), f64::INFINITY);
        let side = (2 * W + 1) as usize;
        for idx in 0..side.pow(4) {
            let cand: Vec<i64> = (0..4).map(|i| base[i] + (idx / side.pow(i as u32) % side) as i64 - W).collect();
            let c = cost(&cand);
            if c < best.1 {
                best = (cand, c);
            }
        }
        let ils = integer_search(&a_hat, &q, netrtk::rover::SEARCH_HALF_WIDTH).map(|s| s.best);
        let fixed = ambiguity_fix(&a_hat, &q, 1.0).map(|f| f.fixed);
        if ils.as_ref().ok() != Some(&best.0) || fixed.as_ref().ok() != Some(&best.0) {
            mismatches += 1;
        }
    }
    check("6c ambiguity search", mismatches == 0, format!("mismatches={mismatches}/200"))
}

fn random_message(rng: &mut ChaCha8Rng) -> Message {
    if rng.gen_bool(0.2) {
        return Message::StationInfo(StationInfo {
            station_id: rng.gen(),
            ecef_x: rng.gen(),
            ecef_y: rng.gen(),
            ecef_z: rng.gen(),
            healthy: rng.gen(),
        });
    }
    let n = rng.gen_range(0..=MAX_SAT_RECORDS);
    Message::ObservationEpoch(ObservationEpochMsg {
        week: rng.gen(),
        tow_ms: rng.gen(),
        records: (0..n)
            .map(|_| SatRecord {
                constellation_id: rng.gen_range(0..16),
                sat_id: rng.gen(),
                pseudorange: rng.gen(),
                carrier_phase: rng.gen(),
                cn0: rng.gen(),
                lock: rng.gen(),
                loss_count: rng.gen_range(0..128),
            })
            .collect(),
    })
}

fn codec(rng: &mut ChaCha8Rng) -> Verdict {
    let mut failures = 0;
    for _ in 0..10_000 {
        let msg = random_message(rng);
        let bytes = msg.encode().unwrap();
        let back = decode_frame(&bytes).ok().and_then(|d| Message::from_frame(&d.frame).ok());
        failures += usize::from(back.as_ref() != Some(&msg));
    }
    let frame = CorrectionFrame { msg_type: MsgType::ObservationEpoch, body: (0..32 - FRAME_OVERHEAD - 1).map(|_| rng.gen()).collect() };
    let bytes = encode_frame(&frame).unwrap();
    let mut undetected = 0;
    for bit in 0..bytes.len() * 8 {
        let mut corrupted = bytes.clone();
        corrupted[bit / 8] ^= 1 << (bit % 8);
        corrupted.resize(corrupted.len() + MAX_PAYLOAD + FRAME_OVERHEAD, 0);
        let mut dec = FrameDecoder::new();
        dec.push(&corrupted);
        undetected += usize::from(dec.next_frame().is_some());
    }
    check(
        "6d codec",
        failures == 0 && undetected == 0 && bytes.len() == 32,
        format!("round_trip_failures={failures}/10000 undetected_flips={undetected}/{}", bytes.len() * 8),
    )
}

fn crc24q_bitwise(data: &[u8]) -> u32 {
    let mut crc: u32 = 0;
    for &byte in data {
        for i in (0..8).rev() {
            let top = (crc >> 23) & 1;
            crc = (crc << 1) & 0x00FF_FFFF;
            if top ^ u32::from((byte >> i) & 1) == 1 {
                crc ^= 0x0086_4CFB;
            }
        }
    }
    crc
}

fn crc(rng: &mut ChaCha8Rng) -> Verdict {
    let mismatches = (0..1000)
        .filter(|_| {
            let len = rng.gen_range(0..1100);
            let data: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
            crc24q(&data) != crc24q_bitwise(&data)
        })
        .count();
    check("6e crc-24q", mismatches == 0, format!("mismatches={mismatches}/1000"))
}

fn determinism() -> Verdict {
    let mut bad = Vec::new();
    for name in ["clean", "syncspoof", "asyncspoof", "jam"] {
        let cfg = scenario(name);
        let a = csv(&run(&cfg).records);
        let b = csv(&run(&cfg).records);
        let mut tcp = cfg.clone();
        tcp.transport = Transport::Tcp;
        let c = csv(&run(&tcp).records);
        if a != b {
            bad.push(format!("{name}:in-process"));
        }
        if a != c {
            bad.push(format!("{name}:tcp"));
        }
    }
    check("7 determinism", bad.is_empty(), if bad.is_empty() { "4 scenarios".into() } else { bad.join(" ") })
}

fn main() -> ExitCode {
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
    let spoofed = run(&scenario("syncspoof"));
    let verdicts = [
        clean_accuracy(),
        spoof_degradation(&spoofed),
        recovery(&spoofed),
        jamming_denial(),
        countermeasure(),
        dd_clock_cancellation(&mut rng),
        spp_exact(&mut rng),
        ils_vs_exhaustive(&mut rng),
        codec(&mut rng),
        crc(&mut rng),
        determinism(),
    ];
    for v in &verdicts {
        println!("{} {}: {}", if v.ok { "PASS" } else { "FAIL" }, v.id, v.detail);
    }
    let failed = verdicts.iter().filter(|v| !v.ok).count();
    println!("acceptance: {} passed, {failed} failed", verdicts.len() - failed);
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
