use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sda_core::modem::*;
use sda_core::Complex64;
use statrs::function::erf::erfc;

fn q_func(x: f64) -> f64 {
    0.5 * erfc(x / 2f64.sqrt())
}

fn modem_for(m: Modulation) -> Modem {
    Modem::new(&PpduConfig::with_modulation(m)).unwrap()
}

fn random_bits(n: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(0..2u8)).collect()
}

fn convolve(x: &[Complex64], h: &[Complex64]) -> Vec<Complex64> {
    let mut y = vec![Complex64::default(); x.len() + h.len() - 1];
    for (i, &a) in x.iter().enumerate() {
        for (j, &b) in h.iter().enumerate() {
            y[i + j] += a * b;
        }
    }
    y
}

fn with_tail(iq: &IqBuffer, samples: Vec<Complex64>) -> IqBuffer {
    IqBuffer::new(samples, iq.sample_rate_hz, Origin::Channel)
}

#[test]
fn uncoded_bpsk_ber_matches_q_function() {
    let modem = modem_for(Modulation::Bpsk);
    let layout = modem.layout().clone();
    let n_bits = 100_000;
    let bits = random_bits(n_bits, 11);
    let snr_db = 4.0;
    let mut tx = Vec::new();
    for chunk in bits.chunks(layout.data.len()) {
        let mut v: Vec<Complex64> = layout.reference.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        for (&p, s) in layout.data_pos.iter().zip(map_symbols(chunk, Modulation::Bpsk).unwrap()) {
            v[p] = s;
        }
        tx.extend(modem.modulate_symbol(&v));
    }
    let iq = IqBuffer::new(tx, 1.536e9, Origin::Tx);
    let rx = add_awgn(&iq, snr_db, 99);
    let sl = modem.config().symbol_len();
    let mut errors = 0usize;
    for (s, chunk) in bits.chunks(layout.data.len()).enumerate() {
        let y = modem.demodulate_symbol(&rx.samples[s * sl..(s + 1) * sl]);
        let d: Vec<Complex64> = layout.data_pos.iter().map(|&p| y[p]).collect();
        errors += qam::hard_demap(&d[..chunk.len()], Modulation::Bpsk).iter().zip(chunk).filter(|(a, b)| a != b).count();
    }
    let p = q_func((2.0 * 10f64.powf(snr_db / 10.0)).sqrt());
    let mean = p * n_bits as f64;
    let sigma = (n_bits as f64 * p * (1.0 - p)).sqrt();
    assert!((errors as f64 - mean).abs() <= 3.0 * sigma, "{errors} errors, expected {mean:.0} +- {:.0}", 3.0 * sigma);
}

#[test]
fn spectrum_confined_to_active_tones() {
    let modem = modem_for(Modulation::Qam16);
    let (iq, frame) = modem.build(&random_bits(3000, 2)).unwrap();
    let cfg = modem.config();
    let sl = cfg.symbol_len();
    let n = cfg.idft_size;
    let mut psd = vec![0.0; n];
    for s in 0..frame.symbols.len() {
        let body = &iq.samples[s * sl + cfg.cp_len..(s + 1) * sl];
        for (k, p) in psd.iter_mut().enumerate() {
            let x: Complex64 = body
                .iter()
                .enumerate()
                .map(|(t, &v)| v * Complex64::from_polar(1.0, -2.0 * PI * (k * t) as f64 / n as f64))
                .sum();
            *p += x.norm_sqr();
        }
    }
    let tone = |k: i32| psd[k.rem_euclid(n as i32) as usize];
    let total: f64 = psd.iter().sum();
    for k in -128..128 {
        let inside = (-100..=-5).contains(&k) || (4..=99).contains(&k);
        if inside {
            assert!(tone(k) > 1e-3 * total / 192.0, "tone {k} empty");
        } else {
            assert!(tone(k) < 1e-20 * total, "tone {k} leaks {}", tone(k));
        }
    }
    let occupied = (99 - (-100) + 1) as f64 * cfg.sample_rate_hz / n as f64;
    assert!((occupied - 1.2e9).abs() < 1.0);
}

#[test]
fn identity_channel_estimate() {
    let modem = modem_for(Modulation::Qpsk);
    let (iq, _) = modem.build(&random_bits(200, 3)).unwrap();
    let r = modem.decode(&iq).unwrap();
    for h in &r.channel_estimate {
        assert!((h - Complex64::new(1.0, 0.0)).norm() < 1e-9, "{h}");
    }
}

#[test]
fn two_tap_and_notch_channels() {
    let g = Complex64::from_polar(0.5, 0.7);
    let zero = Complex64::default();
    let cases = [
        vec![Complex64::new(1.0, 0.0), zero, zero, g],
        vec![Complex64::new(0.5, 0.0), zero, zero, zero, Complex64::new(-0.45, 0.0)],
    ];
    for h in cases {
        let modem = modem_for(Modulation::Qam16);
        let bits = random_bits(1500, 4);
        let (iq, _) = modem.build(&bits).unwrap();
        let mut y = convolve(&iq.samples, &h);
        y.extend(vec![zero; 64]);
        let r = modem.decode(&with_tail(&iq, y)).unwrap();
        assert_eq!(r.payload_bits, bits);
        for (k, est) in modem.layout().active.iter().zip(&r.channel_estimate) {
            let truth: Complex64 = h
                .iter()
                .enumerate()
                .map(|(d, &c)| c * Complex64::from_polar(1.0, -2.0 * PI * (*k as f64) * d as f64 / 256.0))
                .sum();
            assert!((est - truth).norm() < 1e-6 * truth.norm().max(1.0), "tone {k}: {est} vs {truth}");
        }
    }
}

#[test]
fn common_phase_error_is_tracked_per_symbol() {
    let modem = modem_for(Modulation::Qam16);
    let bits = random_bits(2000, 5);
    let (iq, frame) = modem.build(&bits).unwrap();
    let sl = frame.symbol_len;
    let last = frame.symbols.len() - 1;
    assert_eq!(frame.symbols[last], SymbolKind::Payload);
    let theta = 0.3;
    let mut s = iq.samples.clone();
    for x in &mut s[last * sl..] {
        *x *= Complex64::from_polar(1.0, theta);
    }
    let r = modem.decode(&with_tail(&iq, s)).unwrap();
    assert_eq!(r.payload_bits, bits);
    let (tail, head) = r.cpe_rad.split_last().unwrap();
    assert!((tail - theta).abs() < 1e-6, "{tail}");
    assert!(head.iter().all(|c| c.abs() < 1e-6));
}

#[test]
fn track_cpe_recovers_rotation() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h: Vec<Complex64> = (0..64).map(|_| Complex64::from_polar(rng.random_range(0.2..2.0), rng.random_range(0.0..6.28))).collect();
    let r: Vec<f64> = (0..64).map(|i| if i % 3 == 0 { -1.0 } else { 1.0 }).collect();
    for theta in [-3.0, -0.5, 0.0, 0.01, 1.2, 3.1] {
        let y: Vec<Complex64> = h.iter().zip(&r).map(|(h, &r)| h * r * Complex64::from_polar(1.0, theta)).collect();
        assert!((track_cpe(&y, &h, &r) - theta).abs() < 1e-12);
    }
}

#[test]
fn estimate_channel_averages_symbols() {
    let reference = vec![1.0, -1.0, 1.0];
    let a = vec![Complex64::new(2.0, 0.0), Complex64::new(-1.0, 1.0), Complex64::new(0.0, 3.0)];
    let b = vec![Complex64::new(4.0, 0.0), Complex64::new(-3.0, 1.0), Complex64::new(0.0, 1.0)];
    let h = estimate_channel(&[a, b], &reference);
    assert_eq!(h, vec![Complex64::new(3.0, 0.0), Complex64::new(2.0, -1.0), Complex64::new(0.0, 2.0)]);
}

#[test]
fn snr_estimate_tracks_injected_noise() {
    let modem = modem_for(Modulation::Qpsk);
    let (iq, _) = modem.build(&random_bits(3000, 7)).unwrap();
    for snr in [5.0, 15.0, 25.0] {
        let rx = add_awgn(&iq, snr, 70 + snr as u64);
        let r = modem.decode(&rx).unwrap();
        assert!((r.snr_db - snr).abs() < 0.5, "decode {snr}: {}", r.snr_db);
        let m = modem.measure_snr(&rx).unwrap();
        assert!((m.snr_db - snr).abs() < 0.5, "measure {snr}: {}", m.snr_db);
    }
}

#[test]
fn zero_db_does_not_panic() {
    for m in Modulation::ALL {
        let modem = modem_for(m);
        let (iq, _) = modem.build(&random_bits(800, 8)).unwrap();
        for seed in 0..5 {
            match modem.decode(&add_awgn(&iq, 0.0, seed)) {
                Ok(r) => assert!(r.snr_db.is_finite()),
                Err(e) => assert!(!e.to_string().is_empty()),
            }
        }
    }
}

#[test]
fn polar_bler_falls_with_snr() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut bler = Vec::new();
    for es_n0_db in [-3.0, 0.0, 3.0] {
        let n0 = 10f64.powf(-es_n0_db / 10.0);
        let blocks = 2000;
        let mut fails = 0;
        for _ in 0..blocks {
            let msg: Vec<u8> = (0..polar::MESSAGE_LEN).map(|_| rng.random_range(0..2u8)).collect();
            let cw = polar::polar_encode(&msg).unwrap();
            let llr: Vec<f64> = cw
                .iter()
                .map(|&b| {
                    let x = if b == 0 { 1.0 } else { -1.0 };
                    let y = x + sda_core::rng::gaussian(&mut rng, (n0 / 2.0).sqrt());
                    4.0 * y / n0
                })
                .collect();
            if polar::polar_decode(&llr).unwrap().message != msg {
                fails += 1;
            }
        }
        bler.push(fails as f64 / blocks as f64);
    }
    assert!(bler[0] > bler[1] && bler[1] > bler[2], "{bler:?}");
    assert!(bler[0] > 0.1, "{bler:?}");
    assert!(bler[2] < 0.01, "{bler:?}");
}

#[test]
fn invalid_buffers_rejected() {
    let modem = modem_for(Modulation::Qpsk);
    let empty = IqBuffer::new(vec![], 1.536e9, Origin::Rx);
    assert!(matches!(modem.decode(&empty), Err(ModemError::EmptyBuffer)));
    let nan = IqBuffer::new(vec![Complex64::new(f64::NAN, 0.0); 4000], 1.536e9, Origin::Rx);
    assert!(matches!(modem.decode(&nan), Err(ModemError::NonFinite(_))));
    let (iq, _) = modem.build(&random_bits(500, 1)).unwrap();
    let cut = with_tail(&iq, iq.samples[..3 * 320].to_vec());
    assert!(modem.decode(&cut).is_err());
    let silence = IqBuffer::new(vec![Complex64::default(); 5000], 1.536e9, Origin::Rx);
    assert!(matches!(modem.decode(&silence), Err(ModemError::SyncNotFound { .. })));
}
