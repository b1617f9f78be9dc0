//! Acceptance run: one PASS/FAIL line per criterion, each with a pinned
//! tolerance and a wall-clock limit. Exits nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use statrs::function::erf::erfc;

use sda_client::{Client, ClientError};
use sda_control::{spawn, ServerConfig, COMMANDS};
use sda_core::beamforming::{angle_grid, build_codebook, compute_pattern, nearest_beam_index, pattern_metrics, ArrayGeometry, Awv, ElementModel, PatternReference};
use sda_core::comet::{extract_correlations, gen_codes, measure, solve_elements, sweep_phase_settings, ArrayModel, InterpolatorModel};
use sda_core::modem::{add_awgn, map_symbols, qam, IqBuffer, Modem, Modulation, Origin, PpduConfig};
use sda_core::scenario::Scenario;
use sda_core::sweep::{run_sweep_with, Schedule};
use sda_core::Complex64;

const BIN: &str = env!("CARGO_BIN_EXE_sda");
const C: f64 = 299_792_458.0;
const FS: f64 = 1.536e9;

type Outcome = Result<String, String>;

macro_rules! check {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn sda(dir: &Path, args: &[&str]) -> Result<String, String> {
    let o = Command::new(BIN)
        .current_dir(dir)
        .arg("--out-dir")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .map_err(|e| format!("spawn: {e}"))?;
    if !o.status.success() {
        return Err(format!("sda {args:?}: {}", String::from_utf8_lossy(&o.stderr).trim()));
    }
    Ok(String::from_utf8_lossy(&o.stdout).into_owned())
}

fn sda_json(dir: &Path, args: &[&str]) -> Result<Value, String> {
    let mut full = vec!["--format", "json"];
    full.extend_from_slice(args);
    let text = sda(dir, &full)?;
    serde_json::from_str(text.trim()).map_err(|e| format!("{e}: {text}"))
}

fn num(v: &Value, key: &str) -> Result<f64, String> {
    v[key].as_f64().ok_or_else(|| format!("no numeric {key} in {v}"))
}

fn read(path: &str) -> Result<Vec<u8>, String> {
    std::fs::read(path).map_err(|e| format!("{path}: {e}"))
}

/// `key,value` rows of a text artifact.
fn rows(path: &str) -> Result<BTreeMap<String, f64>, String> {
    let text = String::from_utf8(read(path)?).map_err(|e| e.to_string())?;
    Ok(text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .filter_map(|l| l.split_once(','))
        .filter_map(|(k, v)| v.parse().ok().map(|x| (k.to_string(), x)))
        .collect())
}

fn sig4(x: f64) -> f64 {
    let e = x.abs().log10().floor() as i32 - 3;
    (x / 10f64.powi(e)).round() * 10f64.powi(e)
}

fn tempdir() -> Result<tempfile::TempDir, String> {
    tempfile::tempdir().map_err(|e| e.to_string())
}

fn rates_and_numerology() -> Outcome {
    let d = tempdir()?;
    let report = sda_json(d.path(), &["linkbudget"])?;
    let r = rows(report["artifact"].as_str().unwrap_or_default())?;
    let get = |k: &str| r.get(k).copied().ok_or_else(|| format!("artifact lacks {k}"));

    let t_sym = (256.0 + 64.0) / FS;
    check!(sig4(get("symbol_duration_s")?) == sig4(t_sym), "T_sym {} vs {t_sym}", get("symbol_duration_s")?);
    check!(sig4(t_sym * 1e9) == 208.3, "T_sym {} ns", t_sym * 1e9);
    let bw = 200.0 * FS / 256.0;
    check!(sig4(get("signal_bandwidth_hz")?) == sig4(bw) && sig4(bw) == 1.2e9, "bandwidth {}", get("signal_bandwidth_hz")?);

    let mut shown = Vec::new();
    for (name, bits, published) in [("bpsk", 1.0, 268.8), ("qpsk", 2.0, 537.6), ("16qam", 4.0, 1075.0), ("64qam", 6.0, 1613.0)] {
        // Half-rate code, 8 CRC bits per 128-bit codeword.
        let oracle = 128.0 * bits / t_sym * (0.5 - 8.0 / 128.0);
        let got = get(&format!("rate_{name}_bps"))?;
        check!(sig4(got) == sig4(oracle), "{name}: {got} vs {oracle}");
        check!(sig4(got / 1e6) == published, "{name}: {} Mb/s vs {published}", got / 1e6);
        shown.push(format!("{name} {:.1}", got / 1e6));
    }
    Ok(format!("T_sym {:.2} ns, B {:.1} GHz, Mb/s: {}", t_sym * 1e9, bw / 1e9, shown.join(", ")))
}

fn fspl_and_range() -> Outcome {
    let d = tempdir()?;
    let report = sda_json(d.path(), &["linkbudget"])?;
    let r = rows(report["artifact"].as_str().unwrap_or_default())?;
    let fspl = |range: f64| 20.0 * (4.0 * PI * range * 28e9 / C).log10();
    check!((fspl(128.0) - 103.5).abs() <= 0.1, "oracle FSPL(128 m) {}", fspl(128.0));
    let range = r["range_m"];
    let got = r["fspl_db"];
    check!((got - fspl(range)).abs() < 1e-9, "artifact FSPL {got} vs {}", fspl(range));
    check!((got - 103.5).abs() <= 0.1, "FSPL {got}");
    check!((range / 128.0 - 1.0).abs() <= 0.02, "range {range}");
    // Closing the budget at the solved range: EIRP + G_rx - FSPL = sensitivity + margin.
    let sens = -174.0 + 10.0 * 1.2e9f64.log10() + 6.0 + r["required_snr_db"];
    let resid = 32.0 + 14.0 - got - (sens + 20.0);
    check!(resid.abs() < 1e-6, "budget residual {resid}");
    Ok(format!("FSPL {got:.3} dB (tol 0.1), range {range:.2} m (tol 2%)"))
}

/// Closed-form ULA power pattern normalised to the peak.
fn ula_power(n: usize, spacing: f64, angle_deg: f64) -> f64 {
    let psi = 2.0 * PI * spacing * angle_deg.to_radians().sin();
    if psi.abs() < 1e-12 {
        return 1.0;
    }
    let v = (n as f64 * psi / 2.0).sin() / (n as f64 * (psi / 2.0).sin());
    v * v
}

fn beam_patterns() -> Outcome {
    let g = ArrayGeometry::default();
    let cb = build_codebook(&g).map_err(|e| e.to_string())?;
    let grid = angle_grid(-90.0, 90.0, 0.05);
    let mut worst = 0.0f64;
    for e in &cb.entries {
        let nominal = -45.0 + 4.5 * (e.beam_index as f64 - 1.0);
        let p = compute_pattern(&e.awv, &g, &grid, ElementModel::Cosine, PatternReference::Normalized).map_err(|e| e.to_string())?;
        worst = worst.max((p.peak().0 - nominal).abs());
    }
    check!(cb.len() == 21 && worst <= 2.25, "codebook peak offset {worst}");

    let line = ArrayGeometry::with_spacing(8, 1, 0.5, 28e9);
    let p = compute_pattern(&Awv::broadside(8), &line, &angle_grid(-90.0, 90.0, 0.01), ElementModel::Isotropic, PatternReference::Normalized)
        .map_err(|e| e.to_string())?;
    let m = pattern_metrics(&p).map_err(|e| e.to_string())?;
    let fine: Vec<f64> = (0..=900_000).map(|i| i as f64 * 1e-4).collect();
    let half = fine.iter().find(|&&a| ula_power(8, 0.5, a) < 10f64.powf(-0.3)).copied().unwrap_or(f64::NAN);
    let null1 = (2.0f64 / 8.0).asin().to_degrees();
    let null2 = (4.0f64 / 8.0).asin().to_degrees();
    let sl = 10.0 * fine.iter().filter(|&&a| a > null1 && a < null2).map(|&a| ula_power(8, 0.5, a)).fold(0.0, f64::max).log10();
    let side = m.first_sidelobe_db.ok_or("no sidelobe found")?;
    check!((m.hpbw - 2.0 * half).abs() < 0.02 && (side - sl).abs() < 0.01, "library vs closed form: {} / {side} vs {} / {sl}", m.hpbw, 2.0 * half);

    let d = tempdir()?;
    let cli = sda_json(
        d.path(),
        &["pattern", "--azimuth", "8", "--elevation", "1", "--spacing-wl", "0.5", "--element", "isotropic", "--reference", "normalized", "--step", "0.01"],
    )?;
    let (hpbw, side) = (num(&cli, "hpbw_deg")?, num(&cli, "first_sidelobe_db")?);
    check!((side + 12.8).abs() <= 0.3, "sidelobe {side}");
    check!((hpbw - 12.8).abs() <= 0.5, "HPBW {hpbw}");
    Ok(format!("codebook peaks within {worst:.2} deg (tol 2.25); sidelobe {side:.2} dB (tol 0.3), HPBW {hpbw:.2} deg (tol 0.5)"))
}

fn modem_for(m: Modulation) -> Result<Modem, String> {
    Modem::new(&PpduConfig::with_modulation(m)).map_err(|e| e.to_string())
}

fn q_func(x: f64) -> f64 {
    0.5 * erfc(x / 2f64.sqrt())
}

fn modem_checks() -> Outcome {
    let cases = 256;
    let mut runner = TestRunner::new_with_rng(Config { cases, failure_persistence: None, ..Config::default() }, TestRng::deterministic_rng(RngAlgorithm::ChaCha));
    let modems: Vec<Modem> = Modulation::ALL.iter().map(|&m| modem_for(m)).collect::<Result<_, _>>()?;
    runner
        .run(&(0usize..=4096, 0usize..4, prop::collection::vec(0u8..2, 4096)), |(len, m, bits)| {
            let bits = &bits[..len];
            let (iq, _) = modems[m].build(bits).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let r = modems[m].decode(&iq).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&r.payload_bits[..], bits);
            Ok(())
        })
        .map_err(|e| format!("noiseless loopback: {e}"))?;

    let qpsk = modem_for(Modulation::Qpsk)?;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let bits: Vec<u8> = (0..4000).map(|_| rng.random_range(0..2u8)).collect();
    let (iq, _) = qpsk.build(&bits).map_err(|e| e.to_string())?;
    let mut evms = Vec::new();
    for snr in [10.0, 20.0, 30.0] {
        let evm = qpsk.decode(&add_awgn(&iq, snr, snr as u64)).map_err(|e| e.to_string())?.evm_db.ok_or("no EVM")?;
        check!((evm + snr).abs() <= 0.5, "EVM {evm} at {snr} dB");
        evms.push(format!("{evm:.2}"));
    }

    // Uncoded BPSK on the data tones against Q(sqrt(2 SNR)).
    let bpsk = modem_for(Modulation::Bpsk)?;
    let layout = bpsk.layout().clone();
    let n_bits = 100_000;
    let bits: Vec<u8> = (0..n_bits).map(|_| rng.random_range(0..2u8)).collect();
    let snr_db = 4.0;
    let mut tx = Vec::new();
    for chunk in bits.chunks(layout.data.len()) {
        let mut v: Vec<Complex64> = layout.reference.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        for (&p, s) in layout.data_pos.iter().zip(map_symbols(chunk, Modulation::Bpsk).map_err(|e| e.to_string())?) {
            v[p] = s;
        }
        tx.extend(bpsk.modulate_symbol(&v));
    }
    let rx = add_awgn(&IqBuffer::new(tx, FS, Origin::Tx), snr_db, 99);
    let sl = bpsk.config().symbol_len();
    let mut errors = 0usize;
    for (s, chunk) in bits.chunks(layout.data.len()).enumerate() {
        let y = bpsk.demodulate_symbol(&rx.samples[s * sl..(s + 1) * sl]);
        let d: Vec<Complex64> = layout.data_pos.iter().map(|&p| y[p]).collect();
        errors += qam::hard_demap(&d[..chunk.len()], Modulation::Bpsk).iter().zip(chunk).filter(|(a, b)| a != b).count();
    }
    let p = q_func((2.0 * 10f64.powf(snr_db / 10.0)).sqrt());
    let mean = p * n_bits as f64;
    let sigma = (mean * (1.0 - p)).sqrt();
    check!((errors as f64 - mean).abs() <= 3.0 * sigma, "BER {errors} errors vs {mean:.0} +- {:.0}", 3.0 * sigma);

    let d = tempdir()?;
    std::fs::write(d.path().join("ascii.txt"), "Software-defined arrays at 28 GHz: 0123456789").map_err(|e| e.to_string())?;
    let lb = sda_json(d.path(), &["loopback", "--payload", "ascii.txt", "--mod", "64qam", "--snr-db", "30", "--seed", "1"])?;
    check!(lb["payload recovered"] == json!(true), "64-QAM at 30 dB: {lb}");
    Ok(format!(
        "{cases} noiseless cases ok; EVM {} dB at 10/20/30 dB (tol 0.5); BPSK {errors} errors vs {mean:.0} +- {:.0}; 64-QAM ASCII recovered",
        evms.join("/"),
        3.0 * sigma
    ))
}

fn aligned_index(from: [f64; 2], heading: f64, to: [f64; 2]) -> u8 {
    let bearing = (to[1] - from[1]).atan2(to[0] - from[0]).to_degrees();
    nearest_beam_index((bearing - heading + 540.0).rem_euclid(360.0) - 180.0)
}

fn beam_sweep() -> Outcome {
    let d = tempdir()?;
    let scn = Scenario::builtin("tabletop-4p5m").map_err(|e| e.to_string())?;
    let ch = &scn.sweep().map_err(|e| e.to_string())?.channel;
    let tx = aligned_index(ch.tx_pose.position, ch.tx_pose.heading_deg, ch.rx_pose.position);
    let rx = aligned_index(ch.rx_pose.position, ch.rx_pose.heading_deg, ch.tx_pose.position);

    let a = sda_json(d.path(), &["sweep", "--seed", "7"])?;
    check!(a["best_pair"] == json!(format!("{tx},{rx}")), "argmax {} vs geometric {tx},{rx}", a["best_pair"]);
    let peak = num(&a, "best_snr_db")?;
    check!((peak - 30.0).abs() <= 1.0, "peak {peak} dB");
    let path_a = a["artifact"].as_str().unwrap_or_default().to_string();
    let bytes_a = read(&path_a)?;
    std::fs::remove_file(&path_a).map_err(|e| e.to_string())?;
    let b = sda_json(d.path(), &["sweep", "--seed", "7"])?;
    check!(b["artifact"] == a["artifact"] && read(&path_a)? == bytes_a, "repeat run differs");
    std::fs::remove_file(&path_a).map_err(|e| e.to_string())?;
    let s = sda_json(d.path(), &["sweep", "--seed", "7", "--sequential"])?;
    check!(s["artifact"] == a["artifact"] && read(&path_a)? == bytes_a, "sequential run differs from parallel");

    let cab = Scenario::builtin("tabletop-4p5m+cabinet").map_err(|e| e.to_string())?;
    let cfg = cab.sweep().map_err(|e| e.to_string())?.to_config(7).map_err(|e| e.to_string())?;
    let r = run_sweep_with(&cfg, Schedule::Parallel, None).map_err(|e| e.to_string())?;
    check!(r.secondary_peaks.len() == 1, "cabinet peaks {:?}", r.secondary_peaks);
    let p = r.secondary_peaks[0];
    check!((3..=8).contains(&p.tx) && (15..=18).contains(&p.rx), "cabinet peak at {},{}", p.tx, p.rx);
    Ok(format!(
        "argmax {tx},{rx} at {peak:.2} dB (tol 1); cabinet peak at {},{} ({:.1} dB); bytes stable over repeat and sequential",
        p.tx, p.rx, p.snr_db
    ))
}

fn wrap_deg(x: f64) -> f64 {
    (x + 180.0).rem_euclid(360.0) - 180.0
}

fn element_test() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let codes = gen_codes(16).map_err(|e| e.to_string())?;
    let (mut worst_db, mut worst_deg) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let z: Vec<Complex64> = (0..16).map(|_| Complex64::from_polar(rng.random_range(0.1..2.0), rng.random_range(0.0..2.0 * PI))).collect();
        let corr = extract_correlations(&measure(&z, &codes, None).map_err(|e| e.to_string())?, &codes).map_err(|e| e.to_string())?;
        let s = solve_elements(&corr).map_err(|e| e.to_string())?;
        let rot = z[s.reference].arg() - s.gains[s.reference].arg();
        for (t, e) in z.iter().zip(&s.gains) {
            worst_db = worst_db.max((20.0 * (e.norm() / t.norm()).log10()).abs());
            worst_deg = worst_deg.max(wrap_deg((e.arg() + rot - t.arg()).to_degrees()).abs());
        }
    }
    check!(worst_db < 1e-6 && worst_deg < 1e-4, "round trip error {worst_db} dB / {worst_deg} deg");

    let d = tempdir()?;
    let cli = sda_json(d.path(), &["comet"])?;
    let spread = num(&cli, "extracted_spread_db")?;
    check!((spread - 4.5).abs() <= 0.1, "spread {spread}");

    // Quantised interpolator: gain maxima sit on the I/Q axes.
    let model = ArrayModel::with_spread(16, 4.5, 9, InterpolatorModel::vendor_like());
    let grid: Vec<f64> = (0..64).map(|i| i as f64 * 5.625).collect();
    let rows = sweep_phase_settings(&model, &grid).map_err(|e| e.to_string())?;
    for e in 0..16 {
        let g: Vec<f64> = rows.iter().filter(|r| r.element_id == e).map(|r| r.extracted_gain_db).collect();
        let top = (0..g.len()).fold(0, |b, i| if g[i] > g[b] { i } else { b });
        let off = (grid[top] % 90.0).min(90.0 - grid[top] % 90.0);
        check!(off <= 11.25, "element {e}: maximum at {}", grid[top]);
        for axis in [0usize, 16, 32, 48] {
            check!(g[axis] > g[axis + 8], "element {e}: axis {} below diagonal", grid[axis]);
        }
    }
    Ok(format!("1000 sets within {worst_db:.1e} dB / {worst_deg:.1e} deg; spread {spread:.2} dB (tol 0.1); maxima on axes"))
}

fn remote_code(r: Result<Value, ClientError>) -> Result<String, String> {
    match r {
        Err(ClientError::Remote { code, .. }) => Ok(code),
        other => Err(format!("expected an in-band error, got {other:?}")),
    }
}

async fn scripted_session(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let h = spawn(ServerConfig { bind: "127.0.0.1:0".into(), output_dir: dir.to_path_buf(), ..ServerConfig::default() })
        .await
        .map_err(|e| e.to_string())?;
    let a = Client::connect(h.local_addr()).await.map_err(|e| e.to_string())?;
    let b = Client::connect(h.local_addr()).await.map_err(|e| e.to_string())?;
    let steps: [(&Client, &str, Value); 9] = [
        (&a, "set_mode", json!({ "node": "tx0", "mode": "tx" })),
        (&b, "set_mode", json!({ "node": "rx0", "mode": "rx" })),
        (&a, "set_beam", json!({ "node": "tx0", "index": 12 })),
        (&b, "set_beam", json!({ "node": "rx0", "index": 10 })),
        (&a, "tx_frame", json!({ "node": "tx0", "payload": "scripted", "modulation": "16qam" })),
        (&b, "rx_capture", json!({ "node": "rx0" })),
        (&a, "set_gain", json!({ "node": "tx0", "gain_db": -6 })),
        (&b, "rx_capture", json!({ "node": "rx0" })),
        (&b, "run_sweep", json!({ "frames": 2 })),
    ];
    for (c, cmd, args) in steps {
        c.call(cmd, args).await.map_err(|e| format!("{cmd}: {e}"))?;
    }
    h.shutdown().await;
    let mut files = Vec::new();
    for e in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let p = e.map_err(|e| e.to_string())?.path();
        files.push((p.file_name().unwrap_or_default().to_string_lossy().into_owned(), std::fs::read(&p).map_err(|e| e.to_string())?));
    }
    files.sort();
    Ok(files)
}

fn raw_exchange(addr: std::net::SocketAddr, body: &[u8]) -> Result<Value, String> {
    let mut s = std::net::TcpStream::connect(addr).map_err(|e| e.to_string())?;
    s.set_read_timeout(Some(Duration::from_secs(10))).map_err(|e| e.to_string())?;
    s.write_all(&(body.len() as u32).to_be_bytes()).map_err(|e| e.to_string())?;
    s.write_all(body).map_err(|e| e.to_string())?;
    let mut len = [0u8; 4];
    s.read_exact(&mut len).map_err(|e| e.to_string())?;
    let mut reply = vec![0u8; u32::from_be_bytes(len) as usize];
    s.read_exact(&mut reply).map_err(|e| e.to_string())?;
    serde_json::from_slice(&reply).map_err(|e| e.to_string())
}

async fn control_session() -> Outcome {
    let (d1, d2) = (tempdir()?, tempdir()?);
    let first = scripted_session(d1.path()).await?;
    let second = scripted_session(d2.path()).await?;
    let names: Vec<&str> = first.iter().map(|(n, _)| n.as_str()).collect();
    check!(first.len() >= 5, "artifacts {names:?}");
    check!(first == second, "replay differs: {names:?}");

    let d = tempdir()?;
    let h = spawn(ServerConfig { bind: "127.0.0.1:0".into(), output_dir: d.path().to_path_buf(), ..ServerConfig::default() })
        .await
        .map_err(|e| e.to_string())?;
    let c = Client::connect(h.local_addr()).await.map_err(|e| e.to_string())?;
    let initial = c.get_status(None).await.map_err(|e| e.to_string())?;
    c.set_beam("tx0", 4).await.map_err(|e| e.to_string())?;
    let before = c.get_status(None).await.map_err(|e| e.to_string())?;
    let addr = h.local_addr();
    let reply = tokio::task::spawn_blocking(move || raw_exchange(addr, b"{\"v\":1,\"id\":5,\"cmd\":\"set_beam\",\"args\":{\"node\":\"tx0\",\"ind"))
        .await
        .map_err(|e| e.to_string())??;
    check!(reply["status"] == "error" && reply["error"]["code"] == "bad_request" && reply["id"].is_null(), "malformed frame reply {reply}");
    let after = c.get_status(None).await.map_err(|e| e.to_string())?;
    check!(before == after, "state changed by malformed frame");

    let bad: [(&str, Value, &str); 9] = [
        ("set_mode", json!({ "node": "tx0", "mode": "sideways" }), "bad_request"),
        ("set_beam", json!({ "node": "tx0", "index": 22 }), "out_of_range"),
        ("set_awv", json!({ "node": "tx0", "amplitudes": [1.0, 0.5] }), "bad_request"),
        ("set_gain", json!({ "node": "rx0", "gain_db": 40 }), "out_of_range"),
        ("load_iq", json!({ "node": "tx0", "path": d.path().join("absent.sdaiq") }), "io"),
        ("tx_frame", json!({ "node": "rx0", "payload": "x" }), "mode_conflict"),
        ("rx_capture", json!({ "node": "tx0" }), "mode_conflict"),
        ("run_sweep", json!({ "frames": 99 }), "out_of_range"),
        ("get_status", json!({ "node": "zz9" }), "unknown_node"),
    ];
    for (cmd, args, want) in bad {
        let got = remote_code(c.call(cmd, args).await)?;
        check!(got == want, "{cmd}: {got} instead of {want}");
    }
    check!(remote_code(c.call("self_destruct", json!({})).await)? == "unknown_command", "unknown verb");
    c.call("reset", json!({})).await.map_err(|e| format!("reset: {e}"))?;
    check!(c.get_status(None).await.map_err(|e| e.to_string())? == initial, "reset did not restore the initial state");
    h.shutdown().await;
    Ok(format!("{} artifacts replay byte-identically; malformed frame left state intact; {} verbs report errors in-band", first.len(), COMMANDS.len()))
}

fn control_plane() -> Outcome {
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(|e| e.to_string())?;
    rt.block_on(control_session())
}

fn main() {
    let criteria: [(&str, Duration, fn() -> Outcome); 7] = [
        ("1 data rates and OFDM numerology", Duration::from_secs(1), rates_and_numerology),
        ("2 free-space loss and link range", Duration::from_secs(1), fspl_and_range),
        ("3 codebook and broadside pattern", Duration::from_secs(10), beam_patterns),
        ("4 PPDU modem", Duration::from_secs(120), modem_checks),
        ("5 beam sweep", Duration::from_secs(300), beam_sweep),
        ("6 element test", Duration::from_secs(120), element_test),
        ("7 control plane", Duration::from_secs(60), control_plane),
    ];
    let mut failed = 0;
    for (name, limit, f) in criteria {
        let t = Instant::now();
        let outcome = f();
        let took = t.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if took <= limit => (true, d),
            Ok(d) => (false, format!("{d}; too slow")),
            Err(e) => (false, e),
        };
        failed += usize::from(!ok);
        println!("{} {name} ({:.2} s, limit {} s): {detail}", if ok { "PASS" } else { "FAIL" }, took.as_secs_f64(), limit.as_secs());
    }
    std::io::stdout().flush().ok();
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}
