use proptest::prelude::*;
use rand::Rng;
use triplet_sense::inference::{fit_peaks, seeded_rng};
use triplet_sense::photophysics::*;
use triplet_sense::spin::{FieldVector, Pair, TripletModel};

fn hbn() -> TripletModel {
    TripletModel::with_zfs(1891.0, 459.0).unwrap()
}

fn rates_strategy() -> impl Strategy<Value = RateSet> {
    (
        0.1..100.0f64,
        10.0..1.0e4f64,
        prop::array::uniform3(0.01..10.0f64),
        prop::array::uniform3(0.005..5.0f64),
        prop::collection::vec((0usize..3, 0.0..5.0f64), 0..3),
    )
        .prop_map(|(k_pump, k_fl, k_isc, k_dec, mw)| RateSet {
            k_pump,
            k_fl,
            k_isc,
            k_dec,
            mw: mw
                .into_iter()
                .map(|(i, rate)| MicrowaveTransfer { pair: Pair::ALL[i], rate })
                .collect(),
        })
}

fn population_strategy() -> impl Strategy<Value = PopulationVector> {
    prop::array::uniform5(0.0..1.0f64).prop_filter_map("empty", |w| {
        let total: f64 = w.iter().sum();
        (total > 1e-3).then(|| PopulationVector::new(w.map(|x| x / total)).unwrap())
    })
}

fn random_population(rng: &mut impl Rng) -> PopulationVector {
    let w: [f64; 5] = std::array::from_fn(|_| rng.random_range(0.0..1.0));
    let total: f64 = w.iter().sum();
    PopulationVector::new(w.map(|x| x / total)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn evolution_conserves_probability(
        rates in rates_strategy(),
        p0 in population_strategy(),
        t in 0.0..1.0e3f64,
    ) {
        let p = evolve_populations(&rates, &p0, t).unwrap();
        prop_assert!((p.total() - 1.0).abs() < 1e-9);
        prop_assert!(p.0.iter().all(|&x| x >= -1e-12));
        let m = rates.rate_matrix();
        for j in 0..5 {
            let s: f64 = m.column(j).iter().sum();
            prop_assert!(s.abs() <= 1e-12 * m.abs().max());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn steady_state_is_the_long_time_limit(rates in rates_strategy(), seed in any::<u64>()) {
        let ss = steady_state(&rates).unwrap();
        prop_assert!(ss.validate().is_ok());
        let min_rate = [rates.k_pump, rates.k_fl]
            .into_iter()
            .chain(rates.k_isc)
            .chain(rates.k_dec)
            .filter(|&k| k > 0.0)
            .fold(f64::INFINITY, f64::min);
        let t = 1.0e6 / min_rate;
        let mut rng = seeded_rng(seed, 0);
        for _ in 0..5 {
            let p = evolve_populations(&rates, &random_population(&mut rng), t).unwrap();
            for k in 0..5 {
                prop_assert!((p.0[k] - ss.0[k]).abs() < 1e-6, "{:?} vs {:?}", p, ss);
            }
        }
    }
}

#[test]
fn isc_ordering_sets_population_ordering() {
    let rates = RateSet {
        k_isc: [6.0, 2.0, 0.5],
        k_dec: [0.1; 3],
        ..RateSet::default()
    };
    let ss = steady_state(&rates).unwrap();
    assert!(ss.get(Level::Tx) > ss.get(Level::Ty));
    assert!(ss.get(Level::Ty) > ss.get(Level::Tz));
}

#[test]
fn photon_rate_rises_with_pump() {
    let mut last = 0.0;
    for k in 1..=40 {
        let rates = RateSet {
            k_pump: 0.5 * k as f64,
            ..RateSet::default()
        };
        let pl = photon_rate(&rates, &steady_state(&rates).unwrap());
        assert!(pl > last);
        last = pl;
    }
}

fn zero_field_spectrum(step: f64) -> OdmrSpectrum {
    let n = ((2500.0 - 800.0) / step).round() as usize + 1;
    let grid = linear_grid(800.0, 2500.0, n);
    simulate_cw_odmr(&hbn(), &RateSet::default(), &FieldVector::ZERO, &grid, &MicrowaveDrive::default()).unwrap()
}

fn strongest_lines(s: &OdmrSpectrum, count: usize) -> Vec<f64> {
    let mut f: Vec<f64> = s.extrema(1e-3).iter().take(count).map(|e| e.0).collect();
    f.sort_by(f64::total_cmp);
    f
}

#[test]
fn zero_field_lines_on_grid() {
    let step = 0.5;
    let lines = strongest_lines(&zero_field_spectrum(step), 3);
    for (got, want) in lines.iter().zip([918.0, 1432.0, 2350.0]) {
        assert!((got - want).abs() <= 0.5 * step, "{got} vs {want}");
    }
}

#[test]
fn grid_refinement_is_stable() {
    let coarse = strongest_lines(&zero_field_spectrum(1.0), 3);
    let fine = strongest_lines(&zero_field_spectrum(0.5), 3);
    for (c, f) in coarse.iter().zip(&fine) {
        assert!((c - f).abs() < 1.0);
    }
}

#[test]
fn weak_drive_linewidth_matches_input() {
    let drive = MicrowaveDrive {
        mw_strength: 1e-3,
        ..MicrowaveDrive::default()
    };
    let grid = linear_grid(1400.0, 1464.0, 257);
    let s = simulate_cw_odmr(&hbn(), &RateSet::default(), &FieldVector::ZERO, &grid, &drive).unwrap();
    let fit = fit_peaks(&s, 1, None).unwrap();
    let w = fit.get("fwhm_1").unwrap();
    assert!((w / 5.0 - 1.0).abs() < 0.05, "fwhm {w}");
    assert!((fit.get("center_1").unwrap() - 1432.0).abs() < 0.01);
}

#[test]
fn contrast_sign_follows_decay_ordering() {
    let grid = [918.0];
    let drive = MicrowaveDrive::default();
    // Tx stays the most populated level under the swap below
    let rates = RateSet {
        k_isc: [6.0, 0.2, 0.5],
        ..RateSet::default()
    };
    let swapped = RateSet {
        k_dec: [rates.k_dec[1], rates.k_dec[0], rates.k_dec[2]],
        ..rates.clone()
    };
    let mut signs = Vec::new();
    for r in [&rates, &swapped] {
        let ss = steady_state(r).unwrap();
        assert!(ss.get(Level::Tx) > ss.get(Level::Ty));
        let c = simulate_cw_odmr(&hbn(), r, &FieldVector::ZERO, &grid, &drive).unwrap().contrast()[0];
        // transfer out of the populated level brightens when its partner decays faster
        assert_eq!(c > 0.0, r.k_dec[1] > r.k_dec[0]);
        signs.push(c.signum());
    }
    assert_eq!(signs, vec![1.0, -1.0]);
}

#[test]
fn far_hold_tone_changes_nothing() {
    let grid = linear_grid(800.0, 2500.0, 341);
    let drive = MicrowaveDrive::default();
    let rates = RateSet::default();
    let cw = simulate_cw_odmr(&hbn(), &rates, &FieldVector::ZERO, &grid, &drive).unwrap();
    let dr = simulate_double_resonance(&hbn(), &rates, &FieldVector::ZERO, 1.0e6, &grid, &drive).unwrap();
    for (a, b) in cw.contrast().iter().zip(dr.contrast()) {
        assert!((a - b).abs() < 1e-9);
    }
}

fn line_near(s: &OdmrSpectrum, lo: f64, hi: f64) -> f64 {
    s.samples
        .iter()
        .filter(|(f, _)| (lo..=hi).contains(f))
        .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
        .unwrap()
        .0
}

#[test]
fn held_line_reveals_the_third() {
    let grid = linear_grid(800.0, 2500.0, 3401);
    let drive = MicrowaveDrive::default();
    let rates = RateSet::default();
    let hold_yz = simulate_double_resonance(&hbn(), &rates, &FieldVector::ZERO, 1432.0, &grid, &drive).unwrap();
    assert!((line_near(&hold_yz, 2300.0, 2400.0) - 2350.0).abs() <= 0.25);
    let hold_xz = simulate_double_resonance(&hbn(), &rates, &FieldVector::ZERO, 2350.0, &grid, &drive).unwrap();
    let third_a = line_near(&hold_yz, 880.0, 960.0);
    let third_b = line_near(&hold_xz, 880.0, 960.0);
    assert!((third_a - third_b).abs() <= 0.5, "{third_a} vs {third_b}");
}
