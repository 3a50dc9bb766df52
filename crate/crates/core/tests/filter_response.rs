//! Frequency response of the default low-pass, computed by direct DFT of
//! the taps. Reference values were produced by an independent numpy
//! implementation of the same windowed-sinc design.

use std::f64::consts::PI;

use nirs_core::preprocess::{design_lowpass, lowpass_filter, FilterSpec};

const FS: f64 = 4.0;

fn gain_db(taps: &[f64], f: f64) -> f64 {
    let w = 2.0 * PI * f / FS;
    let (re, im) = taps.iter().enumerate().fold((0.0, 0.0), |(re, im), (n, &h)| {
        (re + h * (w * n as f64).cos(), im - h * (w * n as f64).sin())
    });
    10.0 * (re * re + im * im).log10()
}

fn taps() -> Vec<f64> {
    design_lowpass(&FilterSpec::default(), FS).unwrap()
}

#[test]
fn matches_reference_design() {
    let h = taps();
    let reference = [
        (0.01, -0.02126, 1e-4),
        (0.05, -0.014570, 1e-5),
        (0.1, -6.055, 1e-3),
        (0.2, -62.8905, 1e-3),
        (0.25, -92.6, 0.1),
        (1.2, -90.3, 0.1),
    ];
    for (f, db, tol) in reference {
        let g = gain_db(&h, f);
        assert!((g - db).abs() < tol, "{f} Hz: {g} dB, expected {db}");
    }
}

#[test]
fn passband_and_stopband_limits() {
    let h = taps();
    let pass_worst = (0..=500)
        .map(|i| gain_db(&h, 0.05 * i as f64 / 500.0))
        .fold(0.0f64, |acc, g| if g.abs() > acc.abs() { g } else { acc });
    assert!(pass_worst.abs() <= 0.1, "passband deviation {pass_worst} dB");
    assert!((pass_worst - -0.0423).abs() < 1e-3);

    let stop_worst = (0..=3600)
        .map(|i| gain_db(&h, 0.2 + 1.8 * i as f64 / 3600.0))
        .fold(f64::NEG_INFINITY, f64::max);
    assert!(stop_worst <= -50.0, "stopband peak {stop_worst} dB");
    assert!((stop_worst - -62.8905).abs() < 1e-3);
}

#[test]
fn white_noise_power_ratio_is_tap_energy() {
    // For unit-variance white input the output variance is sum(h^2), which
    // for this passband is about -13.4 dB.
    let h = taps();
    let analytic = 10.0 * h.iter().map(|v| v * v).sum::<f64>().log10();
    assert!((analytic - -13.38).abs() < 0.01);

    use nirs_core::ingest::{ChannelLayout, RawFrame, RawRecording, Triplet};
    use nirs_core::preprocess::subtract_dark;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};
    let var = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / v.len() as f64
    };
    for seed in 0..10 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let dark = Normal::new(50.0, 5.0).unwrap();
        let frames = (0..20_000)
            .map(|k| {
                let d = dark.sample(&mut rng);
                RawFrame {
                    t: k as f64 / FS,
                    long: vec![Triplet::new(1000.0, 1000.0, d)],
                    reference: vec![Triplet::new(1000.0, 1000.0, d)],
                }
            })
            .collect();
        let rec = RawRecording::new("w", FS, ChannelLayout::nearest(1, 1).unwrap(), frames).unwrap();
        let x = subtract_dark::<f64>(&rec).long[0].w730.clone();
        let y = lowpass_filter(&x, &h);
        let measured = 10.0 * (var(&y[200..y.len() - 200]) / var(&x)).log10();
        assert!((measured - analytic).abs() < 0.5, "seed {seed}: {measured} dB vs {analytic} dB");
    }
}

#[test]
fn zero_phase_on_a_slow_sinusoid() {
    let h = taps();
    let x: Vec<f64> = (0..2000).map(|k| (2.0 * PI * 0.02 * k as f64 / FS).sin()).collect();
    let y = lowpass_filter(&x, &h);
    // peak cross-correlation sits at lag 0
    let xc = |lag: i64| -> f64 {
        (300..1700)
            .map(|k| x[k] * y[(k as i64 + lag) as usize])
            .sum()
    };
    let best = (-20..=20).max_by(|&a, &b| xc(a).total_cmp(&xc(b))).unwrap();
    assert_eq!(best, 0);
}

#[test]
fn design_is_fast() {
    let start = std::time::Instant::now();
    let h = taps();
    let _ = gain_db(&h, 0.05);
    assert!(start.elapsed().as_secs_f64() < 1.0);
}
