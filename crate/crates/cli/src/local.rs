//! Subcommands that compute locally and write artifacts.

use std::fmt::Write as _;

use serde_json::{json, Value};

use sda_core::artifact::{short_hash, sweep_artifact, ArtifactMeta};
use sda_core::beamforming::{angle_grid, build_codebook, compute_pattern, pattern_metrics, ArrayGeometry, Awv, ElementModel, PatternReference};
use sda_core::comet::{gen_codes, responses_to_csv, rotation_sets, sweep_phase_settings, ArrayModel};
use sda_core::iqfile;
use sda_core::linkbudget::{data_rate, signal_bandwidth, LinkBudgetError, LinkBudgetParams, LinkBudgetReport, RateParams};
use sda_core::modem::{add_awgn, bits_to_bytes, bytes_to_bits, Modem, ModemError, Modulation, PpduConfig};
use sda_core::scenario::{Scenario, ScenarioError};
use sda_core::sweep::{run_sweep_with, Schedule};

use crate::output::{read_file, read_payload, write_payload, Output, Report};
use crate::{CliError, CliResult, CodebookArgs, CometArgs, DecodeArgs, ElementArg, EncodeArgs, LinkBudgetArgs, LoopbackArgs, PatternArgs, ReferenceArg, SweepArgs};

/// Seed recorded for artifacts of deterministic subcommands.
const NO_SEED: u64 = 0;

pub fn load_scenario(spec: &str) -> CliResult<Scenario> {
    Scenario::load(spec).map_err(|e| match e {
        ScenarioError::Io { .. } => CliError::Io(e.to_string()),
        _ => CliError::Usage(e.to_string()),
    })
}

fn annotate(report: &mut Report, scn: &Scenario) {
    for a in &scn.annotations {
        report.put(a.key.clone(), format!("{} {} ({})", a.value, a.unit, a.note));
    }
}

fn parse_modulation(s: &str) -> CliResult<Modulation> {
    s.parse().map_err(CliError::usage)
}

fn modem_for(m: Modulation) -> CliResult<Modem> {
    Modem::new(&PpduConfig::with_modulation(m)).map_err(CliError::sim)
}

/// `key,value` CSV body.
fn rows_csv(rows: &[(&str, String)]) -> String {
    let mut s = String::from("key,value\n");
    for (k, v) in rows {
        let _ = writeln!(s, "{k},{v}");
    }
    s
}

pub fn pattern(out: &Output, a: &PatternArgs) -> CliResult {
    let scn = load_scenario(&a.scenario)?;
    let ps = scn.pattern().map_err(CliError::usage)?;
    let mut geom = ArrayGeometry::evk(ps.carrier_frequency_hz);
    if let Some(n) = a.azimuth {
        geom.n_azimuth = n;
    }
    if let Some(n) = a.elevation {
        geom.n_elevation = n;
    }
    if let Some(s) = a.spacing_wl {
        geom.element_spacing = s;
    }
    geom.validate().map_err(CliError::usage)?;
    let element = match a.element {
        Some(ElementArg::Isotropic) => ElementModel::Isotropic,
        Some(ElementArg::Cosine) => ElementModel::Cosine,
        None => ps.element_model,
    };
    let reference = match a.reference {
        Some(ReferenceArg::Absolute) => PatternReference::AbsoluteDbi,
        Some(ReferenceArg::Normalized) => PatternReference::Normalized,
        None => ps.reference,
    };
    let step = a.step.unwrap_or(ps.angle_step_deg);
    if !(step.is_finite() && step > 0.0) {
        return Err(CliError::Usage(format!("step must be > 0, got {step}")));
    }
    let grid = angle_grid(ps.angle_start_deg, ps.angle_stop_deg, step);
    let beams = if a.beams.is_empty() { ps.beam_indices.clone() } else { a.beams.clone() };
    let beams_awv: Vec<(String, Awv)> = if beams.is_empty() {
        vec![("gain_db".to_string(), Awv::broadside(geom.n_elements()))]
    } else {
        let cb = build_codebook(&geom).map_err(CliError::usage)?;
        beams
            .iter()
            .map(|&b| Ok((format!("beam_{b}"), cb.awv(b).map_err(CliError::usage)?.clone())))
            .collect::<CliResult<_>>()?
    };
    let patterns = beams_awv
        .iter()
        .map(|(_, awv)| compute_pattern(awv, &geom, &grid, element, reference))
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::usage)?;

    let mut csv = String::from("angle_deg");
    for (label, _) in &beams_awv {
        let _ = write!(csv, ",{label}");
    }
    csv.push('\n');
    for (i, angle) in grid.iter().enumerate() {
        let _ = write!(csv, "{angle:.3}");
        for p in &patterns {
            let _ = write!(csv, ",{:.2}", p.gains_db[i]);
        }
        csv.push('\n');
    }
    let config = json!({
        "geometry": geom,
        "element_model": element,
        "reference": reference,
        "beams": beams,
        "angle_start_deg": ps.angle_start_deg,
        "angle_stop_deg": ps.angle_stop_deg,
        "angle_step_deg": step,
    });
    let meta = ArtifactMeta::new("pattern", NO_SEED, Some(&scn.name), config);
    let path = out.text_artifact(&meta, &csv)?;

    let mut r = Report::default();
    r.put("scenario", scn.name.clone());
    r.put("elements", geom.n_elements());
    for ((label, _), p) in beams_awv.iter().zip(&patterns) {
        let prefix = if beams.is_empty() { String::new() } else { format!("{label}.") };
        match pattern_metrics(p) {
            Ok(m) => {
                r.num(format!("{prefix}peak_angle_deg"), m.peak_angle, 3);
                r.num(format!("{prefix}peak_db"), m.peak_db, 2);
                r.num(format!("{prefix}hpbw_deg"), m.hpbw, 2);
                r.num(format!("{prefix}peak_to_null_db"), m.peak_to_null_db, 2);
                match m.first_sidelobe_db {
                    Some(s) => r.num(format!("{prefix}first_sidelobe_db"), s, 2),
                    None => r.put(format!("{prefix}first_sidelobe_db"), Value::Null),
                };
            }
            Err(e) => {
                r.put(format!("{prefix}metrics"), e.to_string());
            }
        }
    }
    annotate(&mut r, &scn);
    r.put("artifact", path.display().to_string());
    out.emit(&r)
}

pub fn codebook(out: &Output, a: &CodebookArgs) -> CliResult {
    let geom = ArrayGeometry::evk(a.carrier_hz);
    let cb = build_codebook(&geom).map_err(CliError::usage)?;
    let meta = ArtifactMeta::new("codebook", NO_SEED, None, json!({ "geometry": geom }));
    let path = out.text_artifact(&meta, &cb.to_csv())?;
    let mut r = Report::default();
    for e in &cb.entries {
        r.put(format!("beam_{}", e.beam_index), format!("{:.2} deg", e.steering_angle));
    }
    r.put("artifact", path.display().to_string());
    out.emit(&r)
}

pub fn linkbudget(out: &Output, a: &LinkBudgetArgs) -> CliResult {
    let params = LinkBudgetParams {
        eirp_dbm: a.eirp,
        rx_gain_dbi: a.rx_gain,
        noise_figure_db: a.nf,
        bandwidth_hz: a.bandwidth,
        required_snr_db: a.snr_req,
        link_margin_db: a.margin,
        atmospheric_loss_db: a.atm_loss,
        carrier_frequency_hz: a.carrier_hz,
    };
    let rep = LinkBudgetReport::new(params).map_err(|e| match e {
        LinkBudgetError::Infeasible { .. } => CliError::sim(e),
        _ => CliError::usage(e),
    })?;
    let ppdu = PpduConfig::default();
    let rates: Vec<(Modulation, f64)> = Modulation::ALL
        .iter()
        .map(|&m| data_rate(&RateParams::ppdu(m.order())).map(|r| (m, r)))
        .collect::<Result<_, _>>()
        .map_err(CliError::sim)?;
    let t_sym = RateParams::ppdu(2).symbol_duration_s;
    let bw = signal_bandwidth(ppdu.sample_rate_hz, ppdu.n_active_tones, ppdu.n_dc_null, ppdu.idft_size);

    let res = &rep.result;
    let mut rows: Vec<(&str, String)> = vec![
        ("eirp_dbm", params.eirp_dbm.to_string()),
        ("rx_gain_dbi", params.rx_gain_dbi.to_string()),
        ("noise_figure_db", params.noise_figure_db.to_string()),
        ("bandwidth_hz", params.bandwidth_hz.to_string()),
        ("required_snr_db", params.required_snr_db.to_string()),
        ("link_margin_db", params.link_margin_db.to_string()),
        ("atmospheric_loss_db", params.atmospheric_loss_db.to_string()),
        ("carrier_frequency_hz", params.carrier_frequency_hz.to_string()),
        ("noise_floor_dbm", res.noise_floor_dbm.to_string()),
        ("sensitivity_dbm", res.sensitivity_dbm.to_string()),
        ("fspl_db", res.fspl_db.to_string()),
        ("range_m", res.range_m.to_string()),
        ("symbol_duration_s", t_sym.to_string()),
        ("signal_bandwidth_hz", bw.to_string()),
    ];
    let rate_keys = ["rate_bpsk_bps", "rate_qpsk_bps", "rate_16qam_bps", "rate_64qam_bps"];
    for (k, (_, v)) in rate_keys.iter().zip(&rates) {
        rows.push((k, v.to_string()));
    }
    let mut r = Report::default();
    let meta = ArtifactMeta::new("linkbudget", NO_SEED, None, serde_json::to_value(params).map_err(CliError::sim)?);
    let path = out.text_artifact(&meta, &rows_csv(&rows))?;

    for line in rep.to_text().lines() {
        if let Some((k, v)) = line.split_once(": ") {
            match v.parse::<f64>() {
                Ok(x) => r.num(k, x, v.split_once('.').map_or(0, |(_, d)| d.len() as i32)),
                Err(_) => r.put(k, v.to_string()),
            };
        }
    }
    r.num("symbol_duration_ns", t_sym * 1e9, 2);
    r.num("signal_bandwidth_ghz", bw / 1e9, 4);
    for (m, v) in &rates {
        r.num(format!("data_rate_{}_mbps", m.name()), v / 1e6, 2);
    }
    r.put("artifact", path.display().to_string());
    out.emit(&r)
}

pub fn ppdu_encode(out: &Output, a: &EncodeArgs) -> CliResult {
    let m = parse_modulation(&a.modulation)?;
    let payload = read_payload(&a.payload)?;
    let modem = modem_for(m)?;
    let (iq, frame) = modem.build(&bytes_to_bits(&payload)).map_err(CliError::usage)?;
    let bytes = iqfile::encode(&iq).map_err(CliError::sim)?;
    let config = json!({ "modulation": m.name(), "payload_bytes": payload.len(), "payload_sha256": short_hash(&payload) });
    let meta = ArtifactMeta::new("ppdu-encode", NO_SEED, None, config);
    let path = out.binary_artifact(&meta, bytes, "sdaiq")?;
    let mut r = Report::default();
    r.put("modulation", m.name());
    r.put("payload_bytes", payload.len());
    r.put("codewords", frame.codewords);
    r.put("payload_symbols", frame.payload_symbols);
    r.put("samples", iq.len());
    r.num("duration_us", iq.duration_s() * 1e6, 3);
    r.put("artifact", path.display().to_string());
    out.emit(&r)
}

pub fn ppdu_decode(out: &Output, a: &DecodeArgs) -> CliResult {
    let bytes = read_file(&a.input)?;
    let iq = iqfile::decode(&bytes).map_err(|e| CliError::Io(format!("{}: {e}", a.input.display())))?;
    let modem = Modem::new(&PpduConfig::default()).map_err(CliError::sim)?;
    let rep = modem.decode(&iq).map_err(|e| match e {
        ModemError::HeaderCrc { .. } | ModemError::SyncNotFound { .. } | ModemError::Truncated { .. } => CliError::sim(e),
        _ => CliError::Io(format!("{}: {e}", a.input.display())),
    })?;
    let payload = bits_to_bytes(&rep.payload_bits);
    let ok = rep.payload_ok();
    let rows: Vec<(&str, String)> = vec![
        ("payload_ok", ok.to_string()),
        ("modulation", rep.modulation().map_or("", Modulation::name).to_string()),
        ("payload_bytes", payload.len().to_string()),
        ("payload_sha256", short_hash(&payload)),
        ("codewords_total", rep.codewords_total.to_string()),
        ("codewords_crc_ok", rep.codewords_crc_ok.to_string()),
        ("snr_db", rep.snr_db.to_string()),
        ("evm_db", rep.evm_db.map_or(String::new(), |v| v.to_string())),
        ("timing_offset_samples", rep.timing_offset_samples.to_string()),
        ("cfo_hz", rep.cfo_hz_estimate.to_string()),
    ];
    let mut r = Report::default();
    let config = json!({ "input_sha256": short_hash(&bytes) });
    let meta = ArtifactMeta::new("ppdu-decode", NO_SEED, None, config);
    let path = out.text_artifact(&meta, &rows_csv(&rows))?;
    r.put("payload recovered", ok);
    r.put("modulation", rep.modulation().map_or("unknown", Modulation::name));
    r.put("payload_bytes", payload.len());
    r.put("codewords", format!("{}/{}", rep.codewords_crc_ok, rep.codewords_total));
    r.num("snr_db", rep.snr_db, 2);
    r.put("evm_db", rep.evm_db.map_or(Value::Null, |v| json!((v * 100.0).round() / 100.0)));
    r.put("artifact", path.display().to_string());
    let to_stdout = a.payload_out.as_deref() == Some("-");
    out.emit_to(&r, to_stdout)?;
    if !ok {
        return Err(CliError::Simulation(format!(
            "payload CRC failed in {} of {} codewords",
            rep.codewords_total - rep.codewords_crc_ok,
            rep.codewords_total
        )));
    }
    if let Some(dest) = &a.payload_out {
        write_payload(dest, &payload)?;
    }
    Ok(())
}

pub fn loopback(out: &Output, a: &LoopbackArgs) -> CliResult {
    let m = parse_modulation(&a.modulation)?;
    let payload = read_payload(&a.payload)?;
    if let Some(s) = a.snr_db {
        if !s.is_finite() {
            return Err(CliError::Usage(format!("snr-db must be finite, got {s}")));
        }
    }
    let modem = modem_for(m)?;
    let bits = bytes_to_bits(&payload);
    let (iq, _) = modem.build(&bits).map_err(CliError::usage)?;
    let rx = match a.snr_db {
        Some(s) => add_awgn(&iq, s, a.seed),
        None => iq,
    };
    let mut r = Report::default();
    let mut rows: Vec<(&str, String)> = Vec::new();
    match modem.decode(&rx) {
        Ok(rep) => {
            let recovered = rep.payload_ok() && rep.payload_bits == bits;
            let bit_errors = if rep.payload_bits.len() == bits.len() {
                rep.payload_bits.iter().zip(&bits).filter(|(x, y)| x != y).count()
            } else {
                bits.len()
            };
            rows.push(("payload_recovered", recovered.to_string()));
            rows.push(("bit_errors", bit_errors.to_string()));
            rows.push(("codewords_total", rep.codewords_total.to_string()));
            rows.push(("codewords_crc_ok", rep.codewords_crc_ok.to_string()));
            rows.push(("snr_db_estimate", rep.snr_db.to_string()));
            rows.push(("evm_db", rep.evm_db.map_or(String::new(), |v| v.to_string())));
            r.put("payload recovered", recovered);
            r.put("modulation", m.name());
            r.put("payload_bytes", payload.len());
            r.put("bit_errors", bit_errors);
            r.put("codewords", format!("{}/{}", rep.codewords_crc_ok, rep.codewords_total));
            r.num("snr_db_estimate", rep.snr_db, 2);
            r.put("evm_db", rep.evm_db.map_or(Value::Null, |v| json!((v * 100.0).round() / 100.0)));
        }
        Err(e) => {
            rows.push(("payload_recovered", "false".into()));
            rows.push(("decode_error", e.to_string().replace(',', ";")));
            r.put("payload recovered", false);
            r.put("modulation", m.name());
            r.put("decode_error", e.to_string());
        }
    }
    let config = json!({ "modulation": m.name(), "snr_db": a.snr_db, "payload_bytes": payload.len(), "payload_sha256": short_hash(&payload) });
    let meta = ArtifactMeta::new("loopback", a.seed, None, config);
    let path = out.text_artifact(&meta, &rows_csv(&rows))?;
    r.put("artifact", path.display().to_string());
    out.emit(&r)
}

pub fn sweep(out: &Output, a: &SweepArgs) -> CliResult {
    let scn = load_scenario(&a.scenario)?;
    let ss = scn.sweep().map_err(CliError::usage)?;
    let mut cfg = ss.to_config(a.seed).map_err(CliError::usage)?;
    if let Some(f) = a.frames {
        if !(1..=64).contains(&f) {
            return Err(CliError::Usage(format!("frames must be in 1..64, got {f}")));
        }
        cfg.frames_per_position = f;
    }
    let schedule = if a.sequential { Schedule::Sequential } else { Schedule::Parallel };
    let result = run_sweep_with(&cfg, schedule, None).map_err(CliError::sim)?;
    let path = out.write(&sweep_artifact(&scn.name, &cfg, &result))?;

    let mut r = Report::default();
    r.put("scenario", scn.name.clone());
    r.put("seed", a.seed);
    r.put("best_pair", format!("{},{}", result.best_pair.0, result.best_pair.1));
    r.num("best_snr_db", result.best_snr_db, 2);
    r.num("matrix_min_db", result.matrix.min(), 2);
    let peaks: Vec<String> = result.secondary_peaks.iter().map(|p| format!("{},{} ({:.2} dB)", p.tx, p.rx, p.snr_db)).collect();
    r.put("secondary_peaks", if peaks.is_empty() { "none".to_string() } else { peaks.join("; ") });
    r.put("decoded_cells", result.matrix.decode_ok.iter().flatten().filter(|&&b| b).count());
    if let Some((t, x)) = ss.aligned_pair {
        r.put("aligned_pair", format!("{t},{x}"));
    }
    annotate(&mut r, &scn);
    r.put("artifact", path.display().to_string());
    out.emit(&r)
}

pub fn comet(out: &Output, a: &CometArgs) -> CliResult {
    let scn = load_scenario(&a.scenario)?;
    let cs = scn.comet().map_err(CliError::usage)?;
    let mut model = ArrayModel::with_spread(cs.n_elements, cs.element_spread_db, cs.gain_seed, cs.interpolator);
    model.drive_amplitude = cs.drive_amplitude;
    let sigma = a.noise_sigma.or(cs.detector_noise_sigma);
    if let Some(s) = sigma {
        if !(s.is_finite() && s >= 0.0) {
            return Err(CliError::Usage(format!("noise sigma must be >= 0, got {s}")));
        }
    }
    model.detector_noise = sigma.map(|s| (s, a.seed));
    let codes = gen_codes(cs.n_elements).map_err(CliError::usage)?;
    let grid = cs.phase_grid();
    let rows = sweep_phase_settings(&model, &grid).map_err(CliError::sim)?;
    let config = json!({
        "n_elements": cs.n_elements,
        "element_spread_db": cs.element_spread_db,
        "gain_seed": cs.gain_seed,
        "interpolator": cs.interpolator,
        "drive_amplitude": cs.drive_amplitude,
        "phase_step_deg": cs.phase_step_deg,
        "detector_noise_sigma": sigma,
    });
    let meta = ArtifactMeta::new("comet", a.seed, Some(&scn.name), config);
    let path = out.text_artifact(&meta, &responses_to_csv(&rows))?;

    let at = |phi: f64| rows.iter().filter(move |x| (x.commanded_phase - phi).abs() < 1e-9);
    let at_zero: Vec<f64> = at(0.0).map(|x| x.extracted_gain_db).collect();
    let spread = at_zero.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - at_zero.iter().cloned().fold(f64::INFINITY, f64::min);
    let mean_at = |phis: &[f64]| {
        let v: Vec<f64> = phis.iter().flat_map(|&p| at(p).map(|x| x.extracted_gain_db)).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let mut r = Report::default();
    r.put("scenario", scn.name.clone());
    r.put("elements", cs.n_elements);
    r.put("code_length", codes.length);
    r.put("detector_traces", 1 + rotation_sets(cs.n_elements).len());
    r.num("injected_spread_db", cs.element_spread_db, 3);
    r.num("extracted_spread_db", spread, 3);
    if let (Some(ax), Some(dg)) = (mean_at(&[0.0, 90.0, 180.0, 270.0]), mean_at(&[45.0, 135.0, 225.0, 315.0])) {
        r.num("axis_minus_diagonal_db", ax - dg, 3);
    }
    annotate(&mut r, &scn);
    r.put("artifact", path.display().to_string());
    out.emit(&r)
}
