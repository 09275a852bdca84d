//! Acceptance suite: one PASS/FAIL line per criterion, each timed against its
//! runtime budget. Criteria listed in `KNOWN_UNATTAINABLE` may fail without
//! failing the run; any other failure exits non-zero.

#![allow(clippy::type_complexity)]

use std::f64::consts::PI;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use qlattice::device::{DeviceSpec, TransmonParams};
use qlattice::dynamics::protocols::{
    acstark_amplitudes_for_detunings, crosstalk_estimate, protocol_acstark_ramsey, protocol_swap,
    AcStarkOptions, RunConfig, StarkToneOptions,
};
use qlattice::dynamics::{NoiseSpec, Readout};
use qlattice::fit::{
    fit_anticrossing, fit_damped_cos, fit_exp_decay, fit_rb_decay, gradient_check, Anticrossing,
    DampedCos, ExpDecay, RbDecay,
};
use qlattice::io::{bundled_device, stats, stats_report};
use qlattice::rb::{clg, epc_to_epg, run_rb, GateNoise, RbConfig, DEFAULT_LENGTHS_1Q};
use qlattice::sizzle::{
    calibrate_cz, calibrate_cz_from_rate, hamiltonian_tomography_pulsewidth, sweep_relative_phase,
    SizzleConfig,
};
use qlattice::spectrum::{j_from_zz, zz_exact, zz_exact_params, zz_perturbative};
use qlattice::tomography::{fidelity, ghz_state, prepare_bell, state_tomography, CzModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Criteria whose published targets cannot all hold at once; see README.
const KNOWN_UNATTAINABLE: &[(usize, &str)] = &[(
    9,
    "σ/µ = 0.269 is inconsistent with µ = 0.623 and σ = 0.173 (their ratio is 0.2777)",
)];

type Check = Result<(bool, String), String>;

/// Static-ZZ rows: pair, |Δ| (MHz), ζ (MHz), J_ZZ (MHz).
const ZZ_ROWS: [(&str, &str, f64, f64, f64); 5] = [
    ("Q2", "Q3", 12.0, 0.0081, 0.631),
    ("Q3", "Q6", 17.2, 0.0033, 0.401),
    ("Q6", "Q11", 10.7, 0.0053, 0.511),
    ("Q10", "Q11", 18.2, 0.0036, 0.418),
    ("Q14", "Q11", 19.8, 0.0057, 0.528),
];

fn rel(a: f64, b: f64) -> f64 {
    (a / b - 1.0).abs()
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Signed detuning of a row: its magnitude with the sign of the stored frequencies.
fn row_detuning(d: &DeviceSpec, a: &str, b: &str, mag: f64) -> Result<f64, String> {
    Ok(mag * d.detuning(a, b).map_err(err)?.signum())
}

fn zz_round_trip() -> Check {
    let d = bundled_device().spec;
    let mut ok = true;
    let mut worst = (0.0f64, 0.0f64);
    for (a, b, mag, zeta, j) in ZZ_ROWS {
        let delta = row_detuning(&d, a, b, mag)?;
        let (qa, qb) = (d.qubit(a).map_err(err)?, d.qubit(b).map_err(err)?);
        let z = zz_perturbative(j, delta, qa.alpha, qb.alpha).map_err(err)?;
        let e_z = rel(z.abs(), zeta * 1e3);
        let j_back = j_from_zz(zeta * 1e3 * z.signum(), delta, qa.alpha, qb.alpha).map_err(err)?;
        let e_j = rel(j_back, j);
        ok &= e_z <= 0.05 && e_j <= 0.02;
        worst = (worst.0.max(e_z), worst.1.max(e_j));
    }
    Ok((ok, format!("max |ζ| error {:.2}% (≤5%), max J error {:.2}% (≤2%)", 100.0 * worst.0, 100.0 * worst.1)))
}

fn exact_vs_perturbative() -> Check {
    let d = bundled_device().spec;
    let mut ok = true;
    let (mut w_pert, mut w_trunc) = (0.0f64, 0.0f64);
    for (a, b, mag, _, j) in ZZ_ROWS {
        let delta = row_detuning(&d, a, b, mag)?;
        let (qa, qb) = (d.qubit(a).map_err(err)?, d.qubit(b).map_err(err)?);
        let pa = TransmonParams::from_omega_alpha(a, qb.omega + delta, qa.alpha, qa.t1, qa.t2r, qa.t2e).map_err(err)?;
        let z4 = zz_exact_params(&pa, qb, j, 4).map_err(err)?;
        let z5 = zz_exact_params(&pa, qb, j, 5).map_err(err)?;
        let zp = zz_perturbative(j, delta, qa.alpha, qb.alpha).map_err(err)?;
        let (ep, et) = (rel(z4, zp), rel(z5, z4));
        ok &= ep <= 0.10 && et <= 0.005;
        w_pert = w_pert.max(ep);
        w_trunc = w_trunc.max(et);
    }
    Ok((ok, format!("max |exact/pert − 1| {:.3}% (≤10%), max d=5 vs d=4 change {:.4}% (≤0.5%)", 100.0 * w_pert, 100.0 * w_trunc)))
}

fn swap_oracle() -> Check {
    let q = |l: &str, w: f64| TransmonParams::from_omega_alpha(l, w, -196.5, 80.0, 60.0, 90.0).unwrap();
    let d = DeviceSpec::chain("pair", vec![q("M", 4807.5), q("P", 4795.6)], &[0.654]).map_err(err)?;
    let durations: Vec<f64> = (0..=80).map(|i| i as f64 * 0.025).collect();
    let r = protocol_swap(&d, "M", "P", &[0.0], &durations, &NoiseSpec::none(), &RunConfig::default(), StarkToneOptions::default())
        .map_err(err)?;
    let p = r.column("p_partner").map_err(err)?;
    let fit = fit_damped_cos(&durations, p).map_err(err)?;
    let period = 1.0 / fit.value("df").unwrap();
    let target = 1.0 / (2.0 * 0.654);
    let peak = p.iter().cloned().fold(0.0, f64::max);
    Ok((
        rel(period, target) <= 0.02,
        format!("exchange period {period:.4} µs vs 1/(2J) = {target:.4} µs (±2%), peak transfer {peak:.3}"),
    ))
}

fn sizzle_agreement() -> Check {
    let d = bundled_device().spec;
    let widths: Vec<f64> = (0..=10).map(|i| 0.2 * i as f64).collect();
    let run = RunConfig::default();
    let zs = zz_exact(&d, "Q2", "Q3", 3).map_err(err)?;
    let mut worst = 0.0f64;
    for (fd, amp) in [(4500.0, 10.0), (4650.0, 5.0), (4650.0, 10.0), (4680.0, 10.0), (4950.0, 10.0), (5100.0, 10.0)] {
        let cfg = SizzleConfig::new("Q2", "Q3", fd, amp);
        let (d0, d1) = cfg.detunings(&d).map_err(err)?;
        if d0.abs() < 100.0 || d1.abs() < 100.0 {
            return Err(format!("{fd} MHz is outside the weak-drive regime"));
        }
        let sim = hamiltonian_tomography_pulsewidth(&d, &cfg, &widths, &NoiseSpec::none(), &run).map_err(err)?.rate_khz;
        let pred = cfg.predicted_rate(&d, zs).map_err(err)?;
        worst = worst.max(rel(sim, pred));
    }
    let phases: Vec<f64> = (0..8).map(|k| k as f64 * PI / 4.0).collect();
    let cfg = SizzleConfig::new("Q2", "Q3", 4650.0, 10.0);
    let s = sweep_relative_phase(&d, &cfg, &phases, &widths, &NoiseSpec::none(), &run).map_err(err)?;
    Ok((
        worst <= 0.15 && s.r_squared >= 0.99,
        format!(
            "max |sim/Eq − 1| {:.2}% (≤15%) over 6 weak-drive points, phase sweep A = {:.2} kHz, R² = {:.5} (≥0.99)",
            100.0 * worst,
            s.amplitude_khz,
            s.r_squared
        ),
    ))
}

fn cz_pipeline() -> Check {
    let cal = calibrate_cz_from_rate(100.0, PI, 10).map_err(err)?;
    let t_ok = rel(cal.gate_time, 5.0) <= 0.01;
    let d = bundled_device().spec;
    let widths: Vec<f64> = (0..=10).map(|i| 0.2 * i as f64).collect();
    let cfg = SizzleConfig { rise_ns: 20.0, ..SizzleConfig::new("Q2", "Q3", 4650.0, 10.0) };
    let sim = calibrate_cz(&d, &cfg, PI, &widths, 3, &NoiseSpec::none(), &RunConfig::default()).map_err(err)?;
    let lin_ok = cal.residual <= 0.01 && sim.residual <= 0.01;
    let bell = prepare_bell(["Q2", "Q3"], &CzModel::Calibrated(cal.clone())).map_err(err)?;
    let ideal = ghz_state(2);
    let f_state = fidelity(&bell, &ideal).map_err(err)?;
    let tomo = state_tomography(&bell, &Readout::exact(), 0).map_err(err)?;
    let f_tomo = fidelity(&tomo.rho, &ideal).map_err(err)?;
    let bell_ok = f_state >= 1.0 - 1e-6 && f_tomo >= 1.0 - 1e-6;
    let fids: Vec<f64> = [1.0, 3.0, 5.0]
        .iter()
        .map(|&t| {
            let rho = prepare_bell(["Q2", "Q3"], &CzModel::Lindblad { device: d.clone(), gate_time: t })?;
            fidelity(&rho, &ideal)
        })
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let mono = fids.windows(2).all(|w| w[1] < w[0]);
    Ok((
        t_ok && lin_ok && bell_ok && mono,
        format!(
            "τ_g = {:.4} µs, residual {:.1e} (rate) / {:.2e} (simulated, ν̃ = {:.1} kHz), Bell F = 1 − {:.1e} (tomography 1 − {:.1e}), Lindblad F(1,3,5 µs) = {:.4}, {:.4}, {:.4}",
            cal.gate_time,
            cal.residual,
            sim.residual,
            sim.rate_khz,
            1.0 - f_state,
            1.0 - f_tomo,
            fids[0],
            fids[1],
            fids[2]
        ),
    ))
}

fn rb_oracle() -> Check {
    let cfg = RbConfig { seed: 2024, ..Default::default() };
    let r = run_rb(GateNoise::depolarizing_for_epc(1e-3).map_err(err)?, &cfg).map_err(err)?;
    let epg = epc_to_epg(1.212e-4);
    let epg_ok = format!("{epg:.3e}") == "6.641e-5";
    let clean = RbConfig { readout: Readout { shots: 10_000, assignment_error: 0.0 }, seed: 7, ..Default::default() };
    let n = run_rb(GateNoise::none(), &clean).map_err(err)?;
    Ok((
        rel(r.epc, 1e-3) <= 0.05 && epg_ok && n.epc <= 1e-4,
        format!(
            "injected EPC 1e-3 → {:.4e} ({:.2}%, ≤5%), EPG(1.212e-4) = {epg:.4e}, noiseless EPC {:.1e} (≤1e-4)",
            r.epc,
            100.0 * rel(r.epc, 1e-3),
            n.epc
        ),
    ))
}

fn clg_formula() -> Check {
    let zero = clg(0.0, 126.0, 124.0).map_err(err)?;
    let grid: Vec<f64> = (0..=50).map(|i| clg(i as f64 * 0.01, 126.0, 124.0)).collect::<Result<_, _>>().map_err(err)?;
    let mono = grid.windows(2).all(|w| w[1] > w[0]);
    let v = clg(0.06, 126.0, 124.0).map_err(err)?;
    Ok((
        zero == 0.0 && mono && format!("{v:.2e}") == "2.41e-4",
        format!("CLG(0) = {zero}, monotone over 0–0.5 µs: {mono}, CLG(60 ns, 126 µs, 124 µs) = {v:.4e}"),
    ))
}

fn fit_suite() -> Check {
    fn median(mut v: Vec<f64>) -> f64 {
        v.sort_by(f64::total_cmp);
        0.5 * (v[v.len() / 2] + v[(v.len() - 1) / 2])
    }
    // (label, x grid, truth, indices of scale parameters checked relatively, noise σ, fit)
    type FitFn = fn(&[f64], &[f64]) -> qlattice::Result<qlattice::fit::FitResult>;
    let t: Vec<f64> = (0..60).map(|i| i as f64 * 5.0).collect();
    let tc: Vec<f64> = (0..80).map(|i| i as f64 * 0.5).collect();
    let dl: Vec<f64> = (0..16).map(|i| -20.0 + i as f64 * (16.0 / 15.0)).collect();
    let m: Vec<f64> = DEFAULT_LENGTHS_1Q.iter().map(|&l| l as f64).collect();
    let rb: FitFn = |x, y| fit_rb_decay(x, y, 0.5);
    let cases: Vec<(&str, Vec<f64>, Vec<f64>, Vec<usize>, f64, FitFn, Box<dyn Fn(f64, &[f64]) -> f64>)> = vec![
        ("exp", t.clone(), vec![0.02, 0.95, 70.0], vec![1, 2], 0.02, fit_exp_decay, Box::new(|x, p| qlattice::fit::Model::eval(&ExpDecay, x, p))),
        ("cos", tc.clone(), vec![0.5, 0.45, 0.12, 0.3, 25.0], vec![1, 2, 4], 0.02, fit_damped_cos, Box::new(|x, p| qlattice::fit::Model::eval(&DampedCos, x, p))),
        ("anticrossing", dl.clone(), vec![0.6, 0.05], vec![0], 0.02 * 0.36 / 4.0, |x, y| fit_anticrossing(x, y).map(|mut f| {
            f.values.remove(0);
            f
        }), Box::new(|x, p| qlattice::fit::Model::eval(&Anticrossing::default(), x, p))),
        ("rb", m, vec![0.48, 0.995, 0.5], vec![0, 1], 0.02, rb, Box::new(|x, p| qlattice::fit::Model::eval(&RbDecay, x, p))),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, xs, truth, checked, sigma, fit, eval) in &cases {
        let mut errs: Vec<Vec<f64>> = vec![Vec::new(); truth.len()];
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Normal::new(0.0, *sigma).unwrap();
            let mut y: Vec<f64> = xs.iter().map(|&x| eval(x, truth) + noise.sample(&mut rng)).collect();
            if *name == "rb" {
                y.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
            }
            let f = fit(xs, &y).map_err(err)?;
            for (k, e) in errs.iter_mut().enumerate() {
                e.push(rel(f.values[k], truth[k]));
            }
        }
        let worst = checked.iter().map(|&k| median(errs[k].clone())).fold(0.0, f64::max);
        ok &= worst <= 0.03;
        parts.push(format!("{name} {:.2}%", 100.0 * worst));
    }
    let xs = [0.3, 1.7, 4.0, 9.5];
    let g = [
        gradient_check(&ExpDecay, &xs, &[0.1, 0.8, 5.0]),
        gradient_check(&DampedCos, &xs, &[0.5, 0.4, 0.7, 0.2, 12.0]),
        gradient_check(&Anticrossing::default(), &[-9.0, -3.0, 4.0, 12.0], &[0.6, 0.01]),
        gradient_check(&RbDecay, &[2.0, 10.0, 50.0], &[0.5, 0.99, 0.5]),
    ];
    let gmax = g.iter().cloned().fold(0.0, f64::max);
    ok &= gmax <= 1e-6;
    Ok((ok, format!("median relative error {} (≤3%), gradient mismatch {gmax:.1e} (≤1e-6)", parts.join(", "))))
}

/// True when `value` rounds to the printed reference at the reference's precision.
fn rounds_to(value: f64, printed: &str) -> bool {
    let decimals = printed.split_once('.').map(|(_, f)| f.len()).unwrap_or(0);
    format!("{value:.decimals$}") == printed
}

fn dataset_statistics() -> Check {
    let dev = bundled_device();
    let alpha = stats(&dev.spec, "alpha").map_err(err)?;
    let j = stats(&dev.spec, "j").map_err(err)?;
    let t1 = stats_report(&dev, "t1").map_err(err)?;
    let checks = [
        ("⟨α⟩", rounds_to(alpha.mean.abs(), "196.4"), format!("{:.2}", alpha.mean.abs())),
        ("µ_J", rounds_to(j.mean, "0.623"), format!("{:.4}", j.mean)),
        ("σ_J", rounds_to(j.std, "0.173"), format!("{:.4}", j.std)),
        ("σ/µ", rounds_to(j.spread, "0.269"), format!("{:.4}", j.spread)),
        ("T1 discrepancies reported", !t1.discrepancies.is_empty(), t1.discrepancies.len().to_string()),
    ];
    let ok = checks.iter().all(|c| c.1);
    let detail = checks
        .iter()
        .map(|(n, p, v)| format!("{n} {v} {}", if *p { "ok" } else { "MISMATCH" }))
        .collect::<Vec<_>>()
        .join(", ");
    Ok((ok, detail))
}

fn crosstalk_floor() -> Check {
    let d = bundled_device().spec;
    let run = RunConfig { seed: 17, ..Default::default() };
    let opts = AcStarkOptions::default();
    let sweep = |m: &str, s: &str, jitter: &[&str]| -> Result<(f64, f64), String> {
        let natural = d.detuning(m, s).map_err(err)?;
        let dets: Vec<f64> = (0..10).map(|i| natural * (0.85 - 0.6 * i as f64 / 9.0)).collect();
        let mut amps = acstark_amplitudes_for_detunings(&d, m, s, &dets, run.levels, opts.tone).map_err(err)?;
        amps.insert(0, 0.0);
        let noise = NoiseSpec::none().with_jitter(jitter, 10.0);
        let rec = protocol_acstark_ramsey(&d, m, s, &amps, &noise, &run, &opts).map_err(err)?;
        let e = crosstalk_estimate(&rec, 10.0).map_err(err)?;
        Ok((e.j_fit, e.j_floor))
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for (a, b) in [("Q6", "Q2"), ("Q6", "Q10"), ("Q5", "Q11"), ("Q8", "Q10"), ("Q10", "Q16")] {
        let (j, floor) = sweep(a, b, &[a])?;
        ok &= j <= floor;
        parts.push(format!("{a}-{b} {j:.3}/{floor:.3}"));
    }
    let (j_nn, floor_nn) = sweep("Q2", "Q3", &["Q2"])?;
    ok &= j_nn > floor_nn;
    Ok((
        ok,
        format!(
            "J̃/floor MHz: {}; nearest-neighbour Q2-Q3 J = {j_nn:.3} above floor {floor_nn:.3}",
            parts.join(", ")
        ),
    ))
}

fn main() -> ExitCode {
    let criteria: [(usize, &str, u64, fn() -> Check); 10] = [
        (1, "ZZ formula round trip", 1, zz_round_trip),
        (2, "exact vs perturbative ZZ", 5, exact_vs_perturbative),
        (3, "swap oracle", 10, swap_oracle),
        (4, "siZZle agreement", 300, sizzle_agreement),
        (5, "CZ pipeline", 300, cz_pipeline),
        (6, "RB oracle", 120, rb_oracle),
        (7, "CLG formula", 1, clg_formula),
        (8, "fit suite", 60, fit_suite),
        (9, "dataset statistics", 1, dataset_statistics),
        (10, "crosstalk floor", 120, crosstalk_floor),
    ];
    let mut unexpected = 0;
    for (n, name, budget, f) in criteria {
        let start = Instant::now();
        let outcome = f();
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(budget);
        let (pass, detail) = match outcome {
            Ok((p, d)) => (p && in_time, d),
            Err(e) => (false, format!("error: {e}")),
        };
        let verdict = if pass { "PASS" } else { "FAIL" };
        println!(
            "{verdict} criterion {n:>2} ({name}) [{:.2} s / {budget} s]: {detail}",
            elapsed.as_secs_f64()
        );
        if !pass {
            match KNOWN_UNATTAINABLE.iter().find(|k| k.0 == n) {
                Some((_, why)) => println!("     known unattainable: {why}"),
                None => unexpected += 1,
            }
        }
    }
    if unexpected > 0 {
        println!("{unexpected} criterion(s) failed unexpectedly");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
