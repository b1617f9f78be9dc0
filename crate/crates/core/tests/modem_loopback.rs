use proptest::prelude::*;
use sda_core::modem::{self, add_awgn, bytes_to_bits, Modem, Modulation, PpduConfig};
use sda_core::Complex64;

fn modem_for(m: Modulation) -> Modem {
    Modem::new(&PpduConfig::with_modulation(m)).unwrap()
}

#[test]
fn noiseless_ascii_every_modulation() {
    let bits = bytes_to_bits(b"Software-defined array PPDU loopback.");
    for m in Modulation::ALL {
        let modem = modem_for(m);
        let (iq, _) = modem.build(&bits).unwrap();
        let r = modem.decode(&iq).unwrap();
        assert_eq!(r.payload_bits, bits, "{m}");
        assert!(r.payload_ok());
        assert_eq!(r.timing_offset_samples, 0);
        assert!(r.cfo_hz_estimate.abs() < 1e3, "{m} {}", r.cfo_hz_estimate);
    }
}

#[test]
fn injected_delay_and_cfo() {
    let modem = modem_for(Modulation::Qam16);
    let bits = bytes_to_bits(b"delay");
    let (iq, _) = modem.build(&bits).unwrap();
    for delay in [0usize, 1, 37, 500] {
        for cfo in [0.0, 1.0e6, -2.5e6] {
            let fs = iq.sample_rate_hz;
            let mut s = vec![Complex64::default(); delay];
            s.extend(iq.samples.iter().cloned());
            s.extend(vec![Complex64::default(); 100]);
            let s: Vec<Complex64> = s
                .iter()
                .enumerate()
                .map(|(n, &x)| x * Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * cfo * n as f64 / fs))
                .collect();
            let rx = modem::IqBuffer::new(s, fs, modem::Origin::Channel);
            let sync = modem.synchronize(&rx).unwrap();
            assert_eq!(sync.timing_offset, delay as i64, "delay {delay} cfo {cfo}");
            if cfo != 0.0 {
                assert!((sync.cfo_hz - cfo).abs() < 0.02 * cfo.abs(), "{} vs {cfo}", sync.cfo_hz);
            }
            let r = modem.decode(&rx).unwrap();
            assert_eq!(r.payload_bits, bits);
        }
    }
}

#[test]
fn evm_tracks_snr() {
    let modem = modem_for(Modulation::Qpsk);
    let bits: Vec<u8> = (0..4000).map(|i| ((i * 7 + 3) % 5 % 2) as u8).collect();
    let (iq, _) = modem.build(&bits).unwrap();
    for snr in [10.0, 20.0, 30.0] {
        let rx = add_awgn(&iq, snr, snr as u64);
        let r = modem.decode(&rx).unwrap();
        let evm = r.evm_db.unwrap();
        assert!((evm + snr).abs() < 0.5, "snr {snr}: evm {evm}");
    }
}

#[test]
fn qam64_at_30db() {
    let modem = modem_for(Modulation::Qam64);
    let bits = bytes_to_bits(b"The quick brown fox jumps over the lazy dog 0123456789");
    let (iq, _) = modem.build(&bits).unwrap();
    let r = modem.decode(&add_awgn(&iq, 30.0, 1)).unwrap();
    assert_eq!(r.payload_bits, bits);
    assert!(r.evm_db.unwrap() <= -29.0, "{:?}", r.evm_db);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]
    #[test]
    fn noiseless_identity(len in 0usize..=4096, m in 0usize..4, seed in any::<u64>()) {
        let m = Modulation::ALL[m];
        let bits: Vec<u8> = (0..len).map(|i| ((seed >> (i % 64)) ^ (i as u64 / 3)) as u8 & 1).collect();
        let modem = modem_for(m);
        let (iq, _) = modem.build(&bits).unwrap();
        let r = modem.decode(&iq).unwrap();
        prop_assert_eq!(r.payload_bits, bits);
    }
}
