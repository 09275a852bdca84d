use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use qlattice::dynamics::protocols::{
    acstark_amplitudes_for_detunings, crosstalk_estimate, protocol_acstark_ramsey, protocol_echo,
    protocol_ramsey, protocol_swap, protocol_t1, AcStarkOptions, RunConfig, StarkToneOptions,
};
use qlattice::dynamics::{ExperimentRecord, NoiseSpec, Readout};
use qlattice::fit::{fit_anticrossing, fit_damped_cos, fit_exp_decay, fit_rb_decay, FitResult};
use qlattice::io::{self, LoadedDevice, MatrixJson, Series, STATS_COLUMNS};
use qlattice::operators::{assemble_hamiltonian, SubsetSelection};
use qlattice::rb::{
    cz_lindblad_channel, run_interleaved_rb_cz, run_simultaneous_rb, simultaneous_setup, CzNoise,
    GateNoise, RbConfig, RbResult, DEFAULT_LENGTHS_1Q, DEFAULT_LENGTHS_2Q,
};
use qlattice::sizzle::{
    calibrate_cz, calibrate_cz_from_rate, hamiltonian_tomography_pulsewidth,
    rabi_amplitude_ratio, sweep_relative_phase, SizzleConfig, QUARTER_TARGET_PHASE,
};
use qlattice::spectrum::{diagonalize, diagonalize_by_excitation, zz_all_pairs, zz_report, DEFAULT_ZZ_LEVELS};
use qlattice::tomography::{fidelity, ghz_state, prepare_bell, prepare_ghz, state_tomography, CzModel};
use qlattice::{Error, Result};
use serde::Serialize;
use serde_json::{json, Value};

use crate::args::*;
use crate::{Outcome, Plot};

/// Duration and rise (ns) of the π pulses that set the default amplitude ratio.
const RATIO_PULSE: (f64, f64) = (0.06, 10.0);

fn to_value<T: Serialize>(v: &T) -> Result<Value> {
    serde_json::to_value(v).map_err(|e| Error::Io(e.to_string()))
}

/// `a,b,c` or `start:stop:count` (inclusive, evenly spaced).
pub fn parse_grid(flag: &str, text: &str) -> Result<Vec<f64>> {
    let bad = || Error::Usage(format!("--{flag}: cannot parse `{text}`"));
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() == 3 {
        let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
        let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
        let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
        return match n {
            0 => Err(bad()),
            1 => Ok(vec![a]),
            _ => Ok((0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()),
        };
    }
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| bad()))
        .collect()
}

fn parse_lengths(text: &str) -> Result<Vec<usize>> {
    text.split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Error::Usage(format!("--lengths: cannot parse `{text}`")))
        })
        .collect()
}

fn seed_for(g: &Global, stochastic: bool, why: &str) -> Result<Option<u64>> {
    if stochastic && g.seed.is_none() {
        return Err(Error::Usage(format!("--seed is required ({why})")));
    }
    Ok(g.seed)
}

fn readout(g: &Global) -> Readout {
    Readout {
        shots: g.shots.unwrap_or(0),
        assignment_error: g.assignment_error,
    }
}

fn noise_spec(device: &LoadedDevice, kind: NoiseModel, labels: &[&str], jitter: f64) -> Result<NoiseSpec> {
    let base = match kind {
        NoiseModel::None => NoiseSpec::none(),
        NoiseModel::Device => NoiseSpec::from_device(&device.spec, labels)?,
    };
    Ok(if jitter > 0.0 { base.with_jitter(labels, jitter) } else { base })
}

fn config(args: Value, levels: Option<usize>, g: &Global) -> Value {
    json!({
        "args": args,
        "levels": levels,
        "shots": g.shots.unwrap_or(0),
        "assignment_error": g.assignment_error,
    })
}

fn fmt_fit(fit: &FitResult) -> String {
    let mut s = String::new();
    for ((n, v), (sg, u)) in fit.names.iter().zip(&fit.values).zip(fit.sigmas.iter().zip(&fit.units)) {
        let _ = writeln!(s, "  {n:<8} {v:>14.6} ± {sg:<12.4e} {u}");
    }
    if !fit.flags.is_empty() {
        let _ = writeln!(s, "  flags: {}", fit.flags.join(", "));
    }
    s
}

fn record_plot(record: &ExperimentRecord, y_label: &str) -> Option<Plot> {
    let axis = record.axes.last()?;
    let series = if record.axes.len() == 1 {
        record
            .data
            .iter()
            .map(|(k, v)| Series { name: k.clone(), x: axis.values.clone(), y: v.clone() })
            .collect()
    } else if record.axes.len() == 2 {
        let outer = &record.axes[0];
        let (k, v) = record.data.iter().next()?;
        let n = axis.values.len();
        outer
            .values
            .iter()
            .enumerate()
            .map(|(i, o)| Series {
                name: format!("{k} {}={o}", outer.name),
                x: axis.values.clone(),
                y: v[i * n..(i + 1) * n].to_vec(),
            })
            .collect()
    } else {
        return None;
    };
    Some(Plot {
        title: record.protocol.clone(),
        x_label: format!("{} [{}]", axis.name, axis.units),
        y_label: y_label.into(),
        series,
    })
}

pub fn dispatch(cmd: &Command, g: &Global, device: &LoadedDevice) -> Result<Outcome> {
    match cmd {
        Command::Spectrum(a) => spectrum(a, g, device),
        Command::Zz(a) => zz(a, g, device),
        Command::Dynamics(a) => dynamics(a, g, device),
        Command::Sweep(a) => sweep(a, g, device),
        Command::Sizzle(a) => sizzle(a, g, device),
        Command::CalibrateCz(a) => calibrate(a, g, device),
        Command::Rb(a) => rb(a, g, device),
        Command::Tomography(a) => tomography(a, g, device),
        Command::Fit(a) => fit(a, g),
        Command::Stats(a) => stats(a, device),
        Command::Report => report(g, device),
    }
}

fn plain(config: Value, result: Value, table: String) -> Outcome {
    Outcome { config, seed: None, result, table, csv: None, plot: None }
}

fn spectrum(a: &SpectrumArgs, g: &Global, device: &LoadedDevice) -> Result<Outcome> {
    let levels = g.levels.unwrap_or(3);
    let labels: Vec<&str> = a.qubits.iter().map(String::as_str).collect();
    let subset = SubsetSelection::new(&device.spec, &labels, levels)?;
    let h = assemble_hamiltonian(&device.spec, &subset, a.long_range)?;
    let spec = if a.long_range { diagonalize(&h)? } else { diagonalize_by_excitation(&h)? };
    let basis = subset.basis();
    let mut rows = Vec::new();
    let mut table = format!("{:>4} {:>14} {:>10} {:>8}\n", "#", "energy [MHz]", "dominant", "overlap");
    for (i, e) in spec.eigenvalues.iter().take(a.count).enumerate() {
        let col = spec.eigenvectors.column(i);
        let (k, w) = col
            .iter()
            .map(|c| c.norm_sqr())
            .enumerate()
            .fold((0, -1.0), |best, (k, w)| if w > best.1 { (k, w) } else { best });
        let label: String = basis.occupations(k).iter().map(|o| o.to_string()).collect();
        let _ = writeln!(table, "{i:>4} {e:>14.4} {label:>10} {w:>8.4}");
        rows.push(json!({ "energy": e, "dominant": label, "overlap": w }));
    }
    Ok(plain(
        config(to_value(a)?, Some(levels), g),
        json!({ "qubits": a.qubits, "levels": levels, "states": rows }),
        table,
    ))
}

fn zz(a: &ZzArgs, g: &Global, device: &LoadedDevice) -> Result<Outcome> {
    let levels = g.levels.unwrap_or(DEFAULT_ZZ_LEVELS);
    let head = format!(
        "{:<10} {:>8} {:>10} {:>14} {:>14}\n",
        "pair", "J [MHz]", "Δ [MHz]", "ζ_exact [kHz]", "ζ_pert [kHz]"
    );
    let mut table = head;
    let result = if let Some(p) = &a.pair {
        if p.len() != 2 {
            return Err(Error::Usage("--pair takes exactly two labels, e.g. `Q2,Q3`".into()));
        }
        let r = zz_report(&device.spec, &p[0], &p[1], levels)?;
        let _ = writeln!(
            table,
            "{:<10} {:>8.3} {:>10.1} {:>14.3} {:>14.3}",
            format!("{}-{}", p[0], p[1]),
            r.j_input,
            r.delta,
            r.zeta_exact,
            r.zeta_perturbative
        );
        to_value(&r)?
    } else {
        let mut out = Vec::new();
        for (pair, r) in zz_all_pairs(&device.spec, levels) {
            match r {
                Ok(r) => {
                    let _ = writeln!(
                        table,
                        "{:<10} {:>8.3} {:>10.1} {:>14.3} {:>14.3}",
                        pair.to_string(),
                        r.j_input,
                        r.delta,
                        r.zeta_exact,
                        r.zeta_perturbative
                    );
                    out.push(to_value(&r)?);
                }
                Err(e) => {
                    let _ = writeln!(table, "{:<10} error: {e}", pair.to_string());
                    out.push(json!({ "pair": pair.to_string(), "error": e.to_string(), "category": e.category().as_str() }));
                }
            }
        }
        Value::Array(out)
    };
    Ok(plain(config(to_value(a)?, Some(levels), g), result, table))
}

fn try_fit(f: Result<FitResult>) -> Value {
    match f {
        Ok(f) => json!(f),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

fn dynamics(a: &DynamicsArgs, g: &Global, device: &LoadedDevice) -> Result<Outcome> {
    let levels = g.levels.unwrap_or(3);
    let ro = readout(g);
    let seed = seed_for(g, ro.shots > 0 || a.jitter > 0.0, "shot sampling or jitter")?;
    let run = RunConfig { levels, readout: ro, seed: seed.unwrap_or(0), ..Default::default() };
    let times = parse_grid("times", &a.times)?;
    let q = a.qubit.as_str();
    let (record, fit) = match a.protocol {
        Protocol::T1 | Protocol::Ramsey | Protocol::Echo => {
            let noise = noise_spec(device, a.noise, &[q], a.jitter)?;
            let rec = match a.protocol {
                Protocol::T1 => protocol_t1(&device.spec, q, &times, &noise, &run)?,
                Protocol::Ramsey => protocol_ramsey(&device.spec, q, &times, a.detuning, &noise, &run)?,
                _ => protocol_echo(&device.spec, q, &times, &noise, &run)?,
            };
            let p1 = rec.column("p1")?;
            let fit = if a.protocol == Protocol::Ramsey { fit_damped_cos(&times, p1) } else { fit_exp_decay(&times, p1) };
            (rec, Some(fit))
        }
        Protocol::Swap => {
            let partner = a
                .partner
                .as_deref()
                .ok_or_else(|| Error::Usage("--partner is required for the swap protocol".into()))?;
            let offsets = parse_grid("offsets", &a.offsets)?;
            let noise = noise_spec(device, a.noise, &[q, partner], a.jitter)?;
            let rec = protocol_swap(&device.spec, q, partner, &offsets, &times, &noise, &run, StarkToneOptions::default())?;
            (rec, None)
        }
    };
    let mut table = String::new();
    let _ = writeln!(table, "{} on {q}: {} points", record.protocol, record.points());
    let fit_value = fit.map(|f| {
        if let Ok(f) = &f {
            table.push_str(&fmt_fit(f));
        }
        try_fit(f)
    });
    Ok(Outcome {
        config: config(to_value(a)?, Some(levels), g),
        seed,
        csv: Some(io::record_csv(&record)?),
        plot: record_plot(&record, "population"),
        result: json!({ "record": record, "fit": fit_value }),
        table,
    })
}

fn sweep(a: &SweepArgs, g: &Global, device: &LoadedDevice) -> Result<Outcome> {
    let levels = g.levels.unwrap_or(3);
    let ro = readout(g);
    let seed = seed_for(g, ro.shots > 0 || a.jitter > 0.0, "shot sampling or jitter")?;
    let run = RunConfig { levels, readout: ro, seed: seed.unwrap_or(0), ..Default::default() };
    let (m, s) = (a.measured.as_str(), a.shifted.as_str());
    let detunings = match &a.detunings {
        Some(d) => parse_grid("detunings", d)?,
        None => {
            let natural = device.spec.detuning(m, s)?;
            (0..10).map(|i| natural * (0.85 - 0.6 * i as f64 / 9.0)).collect()
        }
    };
    let opts = AcStarkOptions {
        tone: StarkToneOptions { detuning: a.tone_detuning, ..Default::default() },
        ..Default::default()
    };
    let mut amps = acstark_amplitudes_for_detunings(&device.spec, m, s, &detunings, levels, opts.tone)?;
    amps.insert(0, 0.0);
    let noise = noise_spec(device, a.noise, &[m, s], a.jitter)?;
    let record = protocol_acstark_ramsey(&device.spec, m, s, &amps, &noise, &run, &opts)?;
    let mut table = String::new();
    let estimate = match crosstalk_estimate(&record, a.jitter) {
        Ok(e) => {
            let _ = writeln!(
                table,
                "{m} ← {s}: J_fit = {:.4} MHz, floor = {:.4} MHz, shift σ = {:.4} MHz",
                e.j_fit, e.j_floor, e.freq_std
            );
            to_value(&e)?
        }
        Err(e) => {
            let _ = writeln!(table, "{m} ← {s}: anticrossing fit failed: {e}");
            json!({ "error": e.to_string() })
        }
    };
    let plot = Plot {
        title: format!("Stark sweep {s} toward {m}"),
        x_label: "qubit detuning [MHz]".into(),
        y_label: "frequency shift [MHz]".into(),
        series: vec![Series {
            name: "freq_shift".into(),
            x: record.column("qubit_detuning")?.to_vec(),
            y: record.column("freq_shift")?.to_vec(),
        }],
    };
    Ok(Outcome {
        config: config(to_value(a)?, Some(levels), g),
        seed,
        csv: Some(io::record_csv(&record)?),
        plot: Some(plot),
        result: json!({ "record": record, "estimate": estimate }),
        table,
    })
}

#[allow(clippy::too_many_arguments)]
fn sizzle_config(
    device: &LoadedDevice,
    control: &str,
    target: &str,
    drive_freq: f64,
    amplitude: f64,
    ratio: Option<f64>,
    rise_ns: f64,
    levels: usize,
) -> Result<SizzleConfig> {
    let mut cfg = SizzleConfig::new(control, target, drive_freq, amplitude);
    cfg.rise_ns = rise_ns;
    cfg.ratio = match ratio {
        Some(r) => r,
        None => rabi_amplitude_ratio(&device.spec, control, target, RATIO_PULSE.0, RATIO_PULSE.1, levels)?,
    };
    cfg.validate(&device.spec)?;
    Ok(cfg)
}

fn sizzle(a: &SizzleArgs, g: &Global, device: &LoadedDevice) -> Result<Outcome> {
    let levels = g.levels.unwrap_or(3);
    let mut cfg = sizzle_config(device, &a.control, &a.target, a.drive_freq, a.amplitude, a.ratio, a.rise_ns, levels)?;
    cfg.phase_diff = a.phase_diff;
    let run = RunConfig { levels, seed: g.seed.unwrap_or(0), ..Default::default() };
    let noise = noise_spec(device, a.noise, &[&a.control, &a.target], 0.0)?;
    let widths = parse_grid("widths", &a.widths)?;
    let zeta = qlattice::spectrum::zz_exact(&device.spec, &a.control, &a.target, DEFAULT_ZZ_LEVELS)?;
    let predicted = cfg.predicted_rate(&device.spec, zeta)?;
    let tomo = hamiltonian_tomography_pulsewidth(&device.spec, &cfg, &widths, &noise, &run)?;
    let mut table = format!(
        "{}-{} at {} MHz: static ζ = {:.3} kHz, predicted ν = {:.3} kHz, simulated ν = {:.3} ± {:.3} kHz (ratio {:.4})\n",
        a.control, a.target, a.drive_freq, zeta, predicted, tomo.rate_khz, tomo.rate_sigma_khz, cfg.ratio
    );
    let mut plot = record_plot(&tomo.record, "value");
    let phase = match &a.phases {
        Some(p) => {
            let phases = parse_grid("phases", p)?;
            let s = sweep_relative_phase(&device.spec, &cfg, &phases, &widths, &noise, &run)?;
            let _ = writeln!(
                table,
                "phase sweep: ν = {:.3}·cos Δφ + {:.3} kHz, R² = {:.5}",
                s.amplitude_khz, s.offset_khz, s.r_squared
            );
            plot = Some(Plot {
                title: "ZZ rate versus relative phase".into(),
                x_label: "Δφ [rad]".into(),
                y_label: "ν [kHz]".into(),
                series: vec![Series { name: "rate".into(), x: s.phases.clone(), y: s.rates_khz.clone() }],
            });
            Some(s)
        }
        None => None,
    };
    Ok(Outcome {
        config: config(to_value(a)?, Some(levels), g),
        seed: None,
        csv: Some(io::record_csv(&tomo.record)?),
        plot,
        result: json!({
            "config": cfg,
            "static_zz_khz": zeta,
            "predicted_rate_khz": predicted,
            "tomography": tomo,
            "phase_sweep": phase,
        }),
        table,
    })
}

fn calibrate(a: &CalibrateArgs, g: &Global, device: &LoadedDevice) -> Result<Outcome> {
    let levels = g.levels.unwrap_or(3);
    let target_phase = if a.quarter_phase { QUARTER_TARGET_PHASE } else { a.target_phase };
    let cal = match a.rate {
        Some(rate) => calibrate_cz_from_rate(rate, target_phase, a.gates)?,
        None => {
            let (c, t) = (a.control.as_deref().unwrap_or_default(), a.target.as_deref().unwrap_or_default());
            let cfg = sizzle_config(
                device,
                c,
                t,
                a.drive_freq.unwrap_or_default(),
                a.amplitude.unwrap_or_default(),
                a.ratio,
                a.rise_ns,
                levels,
            )?;
            let run = RunConfig { levels, ..Default::default() };
            let widths = parse_grid("widths", &a.widths)?;
            calibrate_cz(&device.spec, &cfg, target_phase, &widths, a.gates, &NoiseSpec::none(), &run)?
        }
    };
    let table = format!(
        "rate ν = {:.4} kHz, gate time τ = {:.5} µs, target phase {:.5} rad, linearity residual {:.3e}\n",
        cal.rate_khz, cal.gate_time, cal.target_phase, cal.residual
    );
    let n: Vec<f64> = (1..=cal.repeated_phases.len()).map(|k| k as f64).collect();
    let plot = Plot {
        title: "conditional phase versus gate count".into(),
        x_label: "gates".into(),
        y_label: "phase [rad]".into(),
        series: vec![Series { name: "phase".into(), x: n, y: cal.repeated_phases.clone() }],
    };
    Ok(Outcome {
        config: config(to_value(a)?, Some(levels), g),
        seed: None,
        csv: None,
        plot: Some(plot),
        result: to_value(&cal)?,
        table,
    })
}

fn rb_series(label: &str, r: &RbResult) -> Series {
    Series {
        name: label.into(),
        x: r.lengths.iter().map(|&l| l as f64).collect(),
        y: r.survival.clone(),
    }
}

fn rb_csv(names: &[String], results: &[&RbResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["length [cliffords]".to_string()];
    header.extend(names.iter().map(|n| format!("survival_{n}")));
    w.write_record(&header).map_err(|e| Error::Io(e.to_string()))?;
    for (i, l) in results[0].lengths.iter().enumerate() {
        let mut row = vec![l.to_string()];
        row.extend(results.iter().map(|r| r.survival[i].to_string()));
        w.write_record(&row).map_err(|e| Error::Io(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Io(e.to_string()))
}

fn rb(a: &RbArgs, g: &Global, device: &LoadedDevice) -> Result<Outcome> {
    let seed = seed_for(g, true, "random Clifford sequences")?.expect("checked");
    let labels: Vec<&str> = a.qubits.iter().map(String::as_str).collect();
    let default_lengths = if a.interleaved_cz { DEFAULT_LENGTHS_2Q.to_vec() } else { DEFAULT_LENGTHS_1Q.to_vec() };
    let cfg = RbConfig {
        lengths: match &a.lengths {
            Some(l) => parse_lengths(l)?,
            None => default_lengths,
        },
        sequences: a.sequences,
        readout: readout(g),
        seed,
        gate_time: a.gate_time,
    };
    let levels = g.levels.unwrap_or(DEFAULT_ZZ_LEVELS);
    let mut table = String::new();
    if a.interleaved_cz {
        if labels.len() != 2 {
            return Err(Error::Usage("interleaved CZ RB needs exactly two qubits".into()));
        }
        let cz = match a.cz_infidelity {
            Some(e) => CzNoise::Depolarizing { infidelity: e },
            None => CzNoise::Channel(cz_lindblad_channel(
                &device.spec,
                labels[0],
                labels[1],
                a.cz_time,
                &NoiseSpec::from_device(&device.spec, &labels)?,
            )?),
        };
        let r = run_interleaved_rb_cz(&cz, &cfg)?;
        let _ = writeln!(
            table,
            "reference EPC {:.4e}, interleaved EPC {:.4e}, CZ error {:.4e} ± {:.1e} (fidelity {:.5})",
            r.reference.epc,
            r.interleaved.epc,
            r.cz_error,
            r.cz_error_sigma,
            r.fidelity()
        );
        let names = vec!["reference".to_string(), "interleaved".to_string()];
        return Ok(Outcome {
            config: config(to_value(a)?, None, g),
            seed: Some(seed),
            csv: Some(rb_csv(&names, &[&r.reference, &r.interleaved])?),
            plot: Some(Plot {
                title: "interleaved RB".into(),
                x_label: "Cliffords".into(),
                y_label: "survival".into(),
                series: vec![rb_series("reference", &r.reference), rb_series("interleaved", &r.interleaved)],
            }),
            result: json!({ "interleaved": r, "cz_fidelity": r.fidelity() }),
            table,
        });
    }
    let (device_noise, zz) = simultaneous_setup(&device.spec, &labels, levels)?;
    let noise: Vec<GateNoise> = match a.epc {
        Some(epc) => vec![GateNoise::depolarizing_for_epc(epc)?; labels.len()],
        None => device_noise,
    }
    .into_iter()
    .map(|n| n.with_over_rotation(a.over_rotation))
    .collect();
    let results = run_simultaneous_rb(&noise, &zz, &cfg)?;
    let mut out = Vec::new();
    for (l, r) in labels.iter().zip(&results) {
        let _ = writeln!(table, "{l}: EPC {:.4e} ± {:.1e}, EPG {:.4e}", r.epc, r.epc_sigma, r.epg());
        out.push(json!({ "qubit": l, "rb": r, "epg": r.epg() }));
    }
    Ok(Outcome {
        config: config(to_value(a)?, Some(levels), g),
        seed: Some(seed),
        csv: Some(rb_csv(&a.qubits, &results.iter().collect::<Vec<_>>())?),
        plot: Some(Plot {
            title: "randomized benchmarking".into(),
            x_label: "Cliffords".into(),
            y_label: "survival".into(),
            series: labels.iter().zip(&results).map(|(l, r)| rb_series(l, r)).collect(),
        }),
        result: json!({ "qubits": out, "static_zz_khz": zz }),
        table,
    })
}

fn tomography(a: &TomographyArgs, g: &Global, device: &LoadedDevice) -> Result<Outcome> {
    let ro = readout(g);
    let seed = seed_for(g, ro.shots > 0, "shot sampling")?;
    let model = match (a.rate, a.gate_time) {
        (Some(rate), _) => CzModel::Calibrated(calibrate_cz_from_rate(rate, PI, 1)?),
        (None, Some(t)) => CzModel::Lindblad { device: device.spec.clone(), gate_time: t },
        (None, None) => CzModel::Channel(CzNoise::Ideal.channel()),
    };
    for q in &a.qubits {
        device.spec.qubit(q)?;
    }
    let (rho, ideal) = match (a.state, a.qubits.as_slice()) {
        (StateKind::Bell, [x, y]) => (prepare_bell([x, y], &model)?, ghz_state(2)),
        (StateKind::Ghz, [x, y, z]) => (prepare_ghz([x, y, z], &model)?, ghz_state(3)),
        _ => {
            return Err(Error::Usage(
                "--qubits needs two labels for a Bell state and three for GHZ".into(),
            ))
        }
    };
    let tomo = state_tomography(&rho, &ro, seed.unwrap_or(0))?;
    let f_true = fidelity(&rho, &ideal)?;
    let f_est = fidelity(&tomo.rho, &ideal)?;
    let mut table = format!(
        "prepared fidelity {f_true:.6}, reconstructed fidelity {f_est:.6}, projection residual {:.3e}\n",
        tomo.projection_residual
    );
    for w in &tomo.warnings {
        let _ = writeln!(table, "warning: {w}");
    }
    Ok(Outcome {
        config: config(to_value(a)?, None, g),
        seed,
        csv: None,
        plot: None,
        result: json!({
            "qubits": a.qubits,
            "fidelity_prepared": f_true,
            "fidelity_reconstructed": f_est,
            "rho": MatrixJson::from(&tomo.rho),
            "rho_linear": MatrixJson::from(&tomo.linear),
            "projection_residual": tomo.projection_residual,
            "paulis": tomo.paulis,
            "warnings": tomo.warnings,
        }),
        table,
    })
}

fn read_columns(path: &std::path::Path, x: &str, y: &str) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let headers = rd.headers().map_err(|e| Error::Io(e.to_string()))?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name || h.split(" [").next() == Some(name))
            .ok_or_else(|| Error::Usage(format!("column `{name}` not in {}", path.display())))
    };
    let (ix, iy) = (find(x)?, find(y)?);
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (row, rec) in rd.records().enumerate() {
        let rec = rec.map_err(|e| Error::Io(e.to_string()))?;
        let num = |i: usize| {
            rec.get(i).and_then(|s| s.trim().parse::<f64>().ok()).ok_or_else(|| Error::Schema {
                path: headers[i].to_string(),
                line: Some(row + 2),
                message: "not a number".into(),
            })
        };
        xs.push(num(ix)?);
        ys.push(num(iy)?);
    }
    Ok((xs, ys))
}

fn fit(a: &FitArgs, g: &Global) -> Result<Outcome> {
    let (x, y) = read_columns(&a.input, &a.x, &a.y)?;
    let f = match a.model {
        FitModel::Exp => fit_exp_decay(&x, &y)?,
        FitModel::Cos => fit_damped_cos(&x, &y)?,
        FitModel::Anticrossing => fit_anticrossing(&x, &y)?,
        FitModel::Rb => fit_rb_decay(&x, &y, a.asymptote)?,
    };
    let table = format!("{} ({} points, converged: {})\n{}", f.model, x.len(), f.converged, fmt_fit(&f));
    Ok(plain(config(to_value(a)?, None, g), to_value(&f)?, table))
}

fn stats(a: &StatsArgs, device: &LoadedDevice) -> Result<Outcome> {
    let columns: Vec<&str> = match &a.column {
        Some(c) => vec![c.as_str()],
        None => STATS_COLUMNS.iter().map(|c| c.0).collect(),
    };
    let mut reports = Vec::new();
    let mut table = format!(
        "{:<15} {:>3} {:>11} {:>11} {:>11} {:>10} {:>9} {:>7}\n",
        "column", "N", "max", "min", "mean", "std", "sem", "σ/µ"
    );
    for c in columns {
        let r = match io::stats_report(device, c) {
            Ok(r) => r,
            Err(Error::Usage(_)) if a.column.is_none() => continue,
            Err(e) => return Err(e),
        };
        let s = &r.stats;
        let _ = writeln!(
            table,
            "{:<15} {:>3} {:>11.4} {:>11.4} {:>11.4} {:>10.4} {:>9.4} {:>7.4}  {}",
            c, s.n, s.max, s.min, s.mean, s.std, s.sem, s.spread, s.units
        );
        for d in &r.discrepancies {
            let _ = writeln!(table, "    discrepancy: {d}");
        }
        reports.push(r);
    }
    Ok(plain(json!({ "args": a }), to_value(&reports)?, table))
}

fn report(g: &Global, device: &LoadedDevice) -> Result<Outcome> {
    let levels = g.levels.unwrap_or(DEFAULT_ZZ_LEVELS);
    let d = &device.spec;
    let mut table = format!("{}: {} qubits on a {}×{} grid, {} couplings\n\n", d.name, d.qubits.len(), d.rows, d.cols, d.couplings.nn.len());
    let st = stats(&StatsArgs { column: None }, device)?;
    table.push_str(&st.table);
    let mut straddling = BTreeMap::new();
    table.push_str("\ngrid edges outside the straddling regime:\n");
    for e in d.grid_edges() {
        let s = d.straddling(e.first(), e.second())?;
        if !s {
            let _ = writeln!(table, "  {e}: Δ = {:.1} MHz", d.detuning(e.first(), e.second())?);
        }
        straddling.insert(e.to_string(), s);
    }
    let zz = zz(&ZzArgs { pair: None }, g, device)?;
    table.push('\n');
    table.push_str(&zz.table);
    Ok(plain(
        config(json!(null), Some(levels), g),
        json!({ "stats": st.result, "straddling": straddling, "zz": zz.result }),
        table,
    ))
}
