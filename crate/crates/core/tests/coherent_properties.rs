use nalgebra::DMatrix;
use num_complex::Complex64;
use proptest::prelude::*;
use triplet_sense::coherent::*;
use triplet_sense::inference::{fit_cpmg_scaling, modulation_frequency};
use triplet_sense::spin::{FieldVector, Orientation, Pair, TripletModel};
use triplet_sense::Execution;

/// `int_a^b int_c^d exp(-|x - y| / tau) dy dx` for equal or disjoint
/// intervals with `b <= c` in the disjoint case.
fn block(a: f64, b: f64, c: f64, d: f64, tau: f64) -> f64 {
    if a == c && b == d {
        let l = b - a;
        2.0 * tau * (l + tau * (-l / tau).exp_m1())
    } else {
        let left = -(-(b - a) / tau).exp_m1();
        let right = -(-(d - c) / tau).exp_m1();
        tau * tau * left * right * (-(c - b) / tau).exp()
    }
}

/// Phase variance of the CPMG switching function under OU noise with
/// autocorrelation `b^2 exp(-|t| / tau)`, summed over sign-constant blocks.
fn ou_chi_time_domain(b: f64, tau: f64, n: usize, t: f64) -> f64 {
    let mut edges = vec![0.0];
    edges.extend((1..=n).map(|k| t * (k as f64 - 0.5) / n as f64));
    edges.push(t);
    let mut total = 0.0;
    for i in 0..=n {
        for j in i..=n {
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            let v = block(edges[i], edges[i + 1], edges[j], edges[j + 1], tau);
            total += if i == j { sign * v } else { 2.0 * sign * v };
        }
    }
    0.5 * b * b * total
}

fn ou(b: f64, tau_c: f64) -> NoiseModel {
    NoiseModel::new([1e9; 3], vec![NoiseComponent::Lorentzian { b, tau_c }]).unwrap()
}

#[test]
fn frequency_domain_chi_matches_time_domain() {
    for &(b, tau_c) in &[(0.3, 5.0), (0.05, 500.0), (1.0, 0.2)] {
        let noise = ou(b, tau_c);
        for &n in &[0usize, 1, 2, 5, 16] {
            for &t in &[0.5, 3.0, 20.0] {
                let oracle = ou_chi_time_domain(b, tau_c, n, t);
                let got = chi(&noise, n, t).unwrap();
                assert!(
                    (got - oracle).abs() <= 1e-5 * oracle + 1e-14,
                    "b={b} tau={tau_c} n={n} t={t}: {got} vs {oracle}"
                );
            }
        }
    }
}

#[test]
fn filter_function_mean_and_zero() {
    for n in [1usize, 2, 3, 8] {
        assert_eq!(filter_function(n, 0.0), 0.0);
        let period = 4.0 * std::f64::consts::PI * n as f64;
        let m = 20_000;
        let mean: f64 = (0..m).map(|k| filter_function(n, (k as f64 + 0.5) * period / m as f64)).sum::<f64>() / m as f64;
        assert!((mean - (1.0 + 2.0 * n as f64)).abs() < 1e-6, "n={n}: {mean}");
    }
}

#[test]
fn white_noise_gives_the_same_t2_for_every_count() {
    let noise = NoiseModel::new([200.0, 80.0, 200.0], vec![NoiseComponent::White { s0: 0.2 }]).unwrap();
    let counts = [0usize, 1, 2, 4, 8, 32];
    let t2 = t2_sweep(Execution::Sequential, Pair::XZ, &counts, &noise).unwrap();
    for v in &t2 {
        assert!((v - t2[0]).abs() < 1e-6 * t2[0]);
    }
    let limit = noise.lifetime_limit(Pair::XZ);
    for t in [0.3, 2.0, 9.0] {
        let c = coherence_at(&noise, Pair::XZ, 3, t).unwrap();
        assert!((c - (-0.1 * t - t / limit).exp()).abs() < 1e-9);
    }
    let pts: Vec<(f64, f64)> = counts[1..].iter().zip(&t2[1..]).map(|(n, t)| (*n as f64, *t)).collect();
    let fit = fit_cpmg_scaling(&pts).unwrap();
    assert!(fit.get("gamma").unwrap().abs() < 0.02);
}

#[test]
fn slow_bath_scales_as_two_thirds() {
    let noise = ou(0.02, 1.0e5);
    let counts: Vec<usize> = (0..=6).map(|k| 1 << k).collect();
    let t2 = t2_sweep(Execution::Sequential, Pair::XZ, &counts, &noise).unwrap();
    let pts: Vec<(f64, f64)> = counts.iter().zip(&t2).map(|(n, t)| (*n as f64, *t)).collect();
    let fit = fit_cpmg_scaling(&pts).unwrap();
    assert!((fit.get("gamma").unwrap() - 2.0 / 3.0).abs() < 0.05);
}

#[test]
fn lifetime_only_decay_is_exponential() {
    // harmonic mean of 300 and 300 us
    let noise = NoiseModel::lifetime_only([300.0, 100.0, 300.0]).unwrap();
    let seq = PulseSequence::cpmg(Pair::XZ, 8, 1.0, 50.0).unwrap();
    let grid: Vec<f64> = (0..50).map(|i| i as f64 * 10.0).collect();
    let trace = coherence_function(&noise, &seq, &grid).unwrap();
    for (t, c) in &trace.samples {
        assert!((c - (-t / 300.0).exp()).abs() < 1e-12);
    }
    assert!((t2_effective(Pair::XZ, 8, &noise).unwrap() - 300.0).abs() < 1e-9);
}

#[test]
fn deep_decoupling_approaches_lifetime_limit() {
    let p = CoherencePreset::DeuteratedCryogenic;
    let noise = p.noise_model().unwrap();
    let limit = noise.lifetime_limit(p.decoupling_pair());
    let t2 = t2_effective(p.decoupling_pair(), 1024, &noise).unwrap();
    assert!(t2 <= limit && t2 > 0.98 * limit, "{t2} vs {limit}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn decoupling_never_hurts(b in 0.01..1.0f64, tau_c in 1.0..1.0e4f64, n in 0usize..24) {
        let noise = NoiseModel::new([300.0, 100.0, 300.0], vec![NoiseComponent::Lorentzian { b, tau_c }]).unwrap();
        let a = t2_effective(Pair::XZ, n, &noise).unwrap();
        let c = t2_effective(Pair::XZ, n + 1, &noise).unwrap();
        prop_assert!(c >= a - 1e-6);
        prop_assert!(c <= noise.lifetime_limit(Pair::XZ));
    }
}

fn hbn() -> TripletModel {
    TripletModel::with_zfs(1891.0, 459.0).unwrap()
}

fn hermitian_deviation(m: &DMatrix<Complex64>) -> f64 {
    (m - m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn echo_state_stays_physical(
        angles in prop::array::uniform3(0.0..6.0f64),
        field in prop::array::uniform3(-40.0..40.0f64),
        couplings in prop::collection::vec(prop::array::uniform3(-1.0..1.0f64), 0..3),
        pair_index in 0usize..3,
        tau in 0.0..5.0f64,
    ) {
        let model = hbn().with_orientation(Orientation::new(angles[0], angles[1], angles[2]).unwrap());
        let field = FieldVector::new(field[0], field[1], field[2]).unwrap();
        let nuclei: Vec<NuclearSpin> = couplings
            .iter()
            .map(|c| NuclearSpin::proton([[c[0], 0.0, c[1]], [0.0, c[0], 0.0], [c[1], 0.0, c[2]]]).unwrap())
            .collect();
        let rho = echo_density_matrix(&model, &field, &nuclei, Pair::ALL[pair_index], tau).unwrap();
        prop_assert!((rho.trace().re - 1.0).abs() < 1e-9);
        prop_assert!(rho.trace().im.abs() < 1e-9);
        prop_assert!(hermitian_deviation(&rho) < 1e-10);
        let h = (&rho + rho.adjoint()) * Complex64::from(0.5);
        let min = h.symmetric_eigenvalues().iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assert!(min > -1e-10);
    }
}

#[test]
fn echo_is_normalized() {
    let nuc = NuclearSpin::proton([[0.0, 0.0, 0.3], [0.0, 0.0, 0.0], [0.3, 0.0, 0.5]]).unwrap();
    let grid: Vec<f64> = (0..200).map(|i| i as f64 * 0.05).collect();
    let field = FieldVector::new(2.0, 3.0, 10.0).unwrap();
    let trace = hahn_echo_eseem(&hbn(), &field, &[nuc, nuc.scaled(0.5)], Pair::YZ, &grid, None).unwrap();
    assert!((trace.samples[0].1 - 1.0).abs() < 1e-12);
    assert!(trace.signal().iter().all(|s| s.abs() <= 1.0 + 1e-9));
}

/// Periodogram peaks of a uniformly sampled trace on a fine frequency grid.
fn spectral_peaks(trace: &CoherenceTrace, f_max: f64, count: usize) -> Vec<f64> {
    let t = trace.times();
    let y = trace.signal();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let freqs: Vec<f64> = (1..4000).map(|k| k as f64 * f_max / 4000.0).collect();
    let power: Vec<f64> = freqs
        .iter()
        .map(|f| {
            let w = 2.0 * std::f64::consts::PI * f;
            let (c, s) = t.iter().zip(&y).fold((0.0, 0.0), |(c, s), (ti, yi)| {
                (c + (yi - mean) * (w * ti).cos(), s + (yi - mean) * (w * ti).sin())
            });
            c * c + s * s
        })
        .collect();
    let mut peaks: Vec<(f64, f64)> = (1..power.len() - 1)
        .filter(|&i| power[i] > power[i - 1] && power[i] >= power[i + 1])
        .map(|i| (freqs[i], power[i]))
        .collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
    let mut out: Vec<f64> = peaks.iter().take(count).map(|p| p.0).collect();
    out.sort_by(f64::total_cmp);
    out
}

#[test]
fn weak_coupling_matches_two_frequency_prediction() {
    let model = hbn();
    let field = FieldVector::new(0.0, 0.0, 10.0).unwrap();
    let nuc = NuclearSpin::proton([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.5, 0.0, 0.0]]).unwrap();
    let (upper, lower) = nuclear_frequencies(&model, &field, &nuc, Pair::YZ).unwrap();
    let grid: Vec<f64> = (0..2000).map(|i| i as f64 * 0.025).collect();
    let trace = hahn_echo_eseem_with(Execution::Sequential, &model, &field, &[nuc], Pair::YZ, &grid, None).unwrap();
    let peaks = spectral_peaks(&trace, 2.0, 2);
    let mut expected = [upper, lower];
    expected.sort_by(f64::total_cmp);
    assert!((expected[1] - expected[0]) > 0.03, "frequencies too close to resolve");
    for (p, e) in peaks.iter().zip(expected) {
        assert!((p / e - 1.0).abs() < 0.01, "{peaks:?} vs {expected:?}");
    }
}

#[test]
fn larmor_line_from_weak_proton() {
    let field = FieldVector::new(0.0, 0.0, 10.0).unwrap();
    let nuc = NuclearSpin::proton([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.05, 0.0, 0.0]]).unwrap();
    let grid: Vec<f64> = (0..512).map(|i| i as f64 * 0.05).collect();
    let trace = hahn_echo_eseem(&hbn(), &field, &[nuc], Pair::YZ, &grid, None).unwrap();
    let f = modulation_frequency(&trace).unwrap();
    assert!((f / 0.42577 - 1.0).abs() < 0.01, "{f}");
}

#[test]
fn deuteration_scales_frequency_exactly() {
    let field = FieldVector::new(0.0, 0.0, 20.0).unwrap();
    let h = NuclearSpin::proton([[0.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.05, 0.0, 0.0]]).unwrap();
    let d = h.scaled(1.0 / 6.5);
    let grid_h: Vec<f64> = (0..512).map(|i| i as f64 * 0.02).collect();
    let grid_d: Vec<f64> = grid_h.iter().map(|t| t * 6.5).collect();
    let fh = modulation_frequency(&hahn_echo_eseem(&hbn(), &field, &[h], Pair::YZ, &grid_h, None).unwrap()).unwrap();
    let fd = modulation_frequency(&hahn_echo_eseem(&hbn(), &field, &[d], Pair::YZ, &grid_d, None).unwrap()).unwrap();
    assert!((fh / fd / 6.5 - 1.0).abs() < 1e-6, "{fh} / {fd}");
}
