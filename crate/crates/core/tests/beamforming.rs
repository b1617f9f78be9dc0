use std::f64::consts::PI;

use proptest::prelude::*;
use sda_core::beamforming::*;

/// Closed-form uniform linear array factor, normalised to 1 at the peak.
fn ula_power(n: usize, spacing: f64, steer_deg: f64, angle_deg: f64) -> f64 {
    let psi = 2.0 * PI * spacing * (angle_deg.to_radians().sin() - steer_deg.to_radians().sin());
    if psi.abs() < 1e-12 {
        return 1.0;
    }
    let n = n as f64;
    let v = (n * psi / 2.0).sin() / (n * (psi / 2.0).sin());
    v * v
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(lo).signum() == f(mid).signum() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn half_wave_line() -> ArrayGeometry {
    ArrayGeometry::with_spacing(8, 1, 0.5, 28e9)
}

#[test]
fn broadside_sidelobe_and_beamwidth_match_closed_form() {
    let g = half_wave_line();
    let awv = Awv::broadside(8);
    let p = compute_pattern(&awv, &g, &angle_grid(-90.0, 90.0, 0.01), ElementModel::Isotropic, PatternReference::Normalized).unwrap();
    let m = pattern_metrics(&p).unwrap();

    let half = bisect(0.1, 20.0, |a| ula_power(8, 0.5, 0.0, a) - 10f64.powf(-0.3));
    // First sidelobe sits between the first and second nulls.
    let null1 = (2.0f64 / 8.0).asin().to_degrees();
    let null2 = (4.0f64 / 8.0).asin().to_degrees();
    let sl = (0..=10_000)
        .map(|i| null1 + (null2 - null1) * i as f64 / 10_000.0)
        .map(|a| ula_power(8, 0.5, 0.0, a))
        .fold(0.0, f64::max);
    let sl_db = 10.0 * sl.log10();

    assert!((m.hpbw - 2.0 * half).abs() < 0.02, "{} vs {}", m.hpbw, 2.0 * half);
    assert!((m.first_sidelobe_db.unwrap() - sl_db).abs() < 0.01);
    assert!((m.hpbw - 12.8).abs() <= 0.5, "hpbw {}", m.hpbw);
    assert!((sl_db + 12.8).abs() <= 0.3, "sidelobe {sl_db}");
    assert!(m.peak_angle.abs() < 1e-9);
}

#[test]
fn broadside_peak_is_anchored_at_array_gain() {
    let g = ArrayGeometry::default();
    let p = compute_pattern(&Awv::broadside(16), &g, &angle_grid(-90.0, 90.0, 0.5), ElementModel::Cosine, PatternReference::AbsoluteDbi).unwrap();
    let (a, peak) = p.peak();
    assert_eq!(a, 0.0);
    assert!((peak - 14.0).abs() < 1e-9);
}

#[test]
fn codebook_peaks_within_half_step_of_nominal() {
    let g = ArrayGeometry::default();
    let cb = build_codebook(&g).unwrap();
    assert_eq!(cb.len(), 21);
    let grid = angle_grid(-90.0, 90.0, 0.05);
    for e in &cb.entries {
        let nominal = -45.0 + 4.5 * (e.beam_index as f64 - 1.0);
        assert!((e.steering_angle - nominal).abs() < 1e-12);
        let p = compute_pattern(&e.awv, &g, &grid, ElementModel::Cosine, PatternReference::Normalized).unwrap();
        let (peak, _) = p.peak();
        assert!((peak - nominal).abs() <= 2.25, "beam {} peaks at {peak}", e.beam_index);
    }
}

#[test]
fn array_factor_matches_closed_form_when_steered() {
    let g = half_wave_line();
    for steer in [-45.0, -13.5, 0.0, 27.0, 45.0] {
        let awv = make_steering_awv(steer, &g).unwrap();
        for a in [-80.0, -30.0, 0.0, 10.0, 44.0, 70.0] {
            let af = array_factor(&awv, &g, a).unwrap().norm_sqr() / 64.0;
            assert!((af - ula_power(8, 0.5, steer, a)).abs() < 1e-12);
        }
    }
}

#[test]
fn invalid_beam_index_message() {
    let e = codebook_angle(22).unwrap_err();
    assert_eq!(e.to_string(), "beam index 22 out of range 1..21");
    assert!(codebook_angle(0).is_err());
}

proptest! {
    #[test]
    fn steered_peak_has_full_coherent_gain(steer in -60.0f64..60.0) {
        let g = ArrayGeometry::default();
        let awv = make_steering_awv(steer, &g).unwrap();
        let peak = array_factor(&awv, &g, steer).unwrap().norm();
        prop_assert!((peak - 16.0).abs() < 1e-9);
    }

    #[test]
    fn array_factor_bounded_by_amplitude_sum(
        amps in prop::collection::vec(0.0f64..1.0, 16),
        phases in prop::collection::vec(0.0f64..6.3, 16),
        angle in -90.0f64..90.0,
    ) {
        prop_assume!(amps.iter().any(|&a| a > 0.0));
        let pairs: Vec<(f64, f64)> = amps.iter().cloned().zip(phases.iter().cloned()).collect();
        let awv = Awv::from_polar(&pairs, 6).unwrap();
        let g = ArrayGeometry::default();
        prop_assert!(array_factor(&awv, &g, angle).unwrap().norm() <= awv.total_amplitude() + 1e-9);
    }

    #[test]
    fn mirrored_beams_give_mirrored_patterns(k in 1u8..=21, angle in -89.0f64..89.0) {
        let g = ArrayGeometry::default();
        let cb = build_codebook(&g).unwrap();
        let a = array_factor(cb.awv(k).unwrap(), &g, angle).unwrap().norm();
        let b = array_factor(cb.awv(22 - k).unwrap(), &g, -angle).unwrap().norm();
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn quantised_iq_within_half_lsb(amp in 0.0f64..1.0, phase in 0.0f64..(2.0 * PI), bits in 2u8..=12) {
        let (i, q) = weight_to_iq(amp, phase);
        let c = quantize_iq(i, q, bits).unwrap();
        let half = lsb(bits) / 2.0 + 1e-12;
        prop_assert!((dequantize(c.i_code, bits) - i).abs() <= half);
        prop_assert!((dequantize(c.q_code, bits) - q).abs() <= half);
        prop_assert!(!c.saturated);
    }

    #[test]
    fn iq_polar_round_trip(amp in 0.01f64..1.0, phase in 0.0f64..(2.0 * PI)) {
        let (i, q) = weight_to_iq(amp, phase);
        let (a, p) = iq_to_weight(i, q);
        prop_assert!((a - amp).abs() < 1e-12);
        let d = (p - phase).abs();
        prop_assert!(d < 1e-9 || (d - 2.0 * PI).abs() < 1e-9);
    }

    #[test]
    fn nearest_index_inverts_codebook_angle(k in 1u8..=21, jitter in -2.2f64..2.2) {
        let a = codebook_angle(k).unwrap();
        prop_assert_eq!(nearest_beam_index(a + jitter), k);
    }
}
