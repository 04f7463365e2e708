use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;
use triplet_sense::inference::seeded_rng;
use triplet_sense::spin::*;

fn model_strategy() -> impl Strategy<Value = TripletModel> {
    (1.0..5000.0f64, 0.0..1.0f64, 0.0..6.3f64, 0.0..3.2f64, 0.0..6.3f64, 1.5..2.5f64).prop_map(
        |(d, e_frac, a, b, g_angle, g)| {
            TripletModel::new(d, e_frac * d / 3.0, Orientation::new(a, b, g_angle).unwrap(), g).unwrap()
        },
    )
}

fn field_strategy() -> impl Strategy<Value = FieldVector> {
    prop::array::uniform3(-500.0..500.0f64).prop_map(|[x, y, z]| FieldVector::new(x, y, z).unwrap())
}

fn rotation_strategy() -> impl Strategy<Value = Matrix3<f64>> {
    (0.0..6.3f64, 0.0..3.2f64, 0.0..6.3f64)
        .prop_map(|(a, b, g)| Orientation { alpha: a, beta: b, gamma: g }.matrix())
}

/// Roots of `l^3 + a l^2 + b l + c` for three real roots, ascending.
fn cubic_roots(a: f64, b: f64, c: f64) -> [f64; 3] {
    let shift = a / 3.0;
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    if p.abs() < 1e-300 {
        return [-shift; 3];
    }
    let m = 2.0 * (-p / 3.0).sqrt();
    let theta = ((3.0 * q / (p * m)).clamp(-1.0, 1.0)).acos() / 3.0;
    let mut r = [0.0; 3];
    for (k, slot) in r.iter_mut().enumerate() {
        *slot = m * (theta - 2.0 * std::f64::consts::PI * k as f64 / 3.0).cos() - shift;
    }
    r.sort_by(f64::total_cmp);
    r
}

fn char_poly_energies(h: &Matrix3<Complex64>) -> [f64; 3] {
    let tr = h.trace().re;
    let tr2 = (h * h).trace().re;
    let det = h.determinant().re;
    cubic_roots(-tr, 0.5 * (tr * tr - tr2), -det)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn hamiltonian_is_hermitian(model in model_strategy(), field in field_strategy()) {
        let h = build_hamiltonian(&model, &field).unwrap();
        prop_assert!(HermitianMatrix3::new(*h.matrix()).is_ok());
        let eig = eigensystem(&h).unwrap();
        let scale = h.max_abs().max(1.0);
        for i in 0..3 {
            let v = eig.state(i);
            let resid = (h.matrix() * v - v * Complex64::from(eig.energies[i])).norm();
            prop_assert!(resid < 1e-8 * scale);
            for j in 0..3 {
                let overlap = v.dotc(&eig.state(j)).norm();
                let expected = if i == j { 1.0 } else { 0.0 };
                prop_assert!((overlap - expected).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn zero_field_sum_rule(d in 0.0..10_000.0f64, e_frac in 0.0..1.0f64) {
        let model = TripletModel::with_zfs(d, e_frac * d / 3.0).unwrap();
        let h = build_hamiltonian(&model, &FieldVector::ZERO).unwrap();
        prop_assert!(h.trace().abs() < 1e-10);
        let eig = eigensystem(&h).unwrap();
        let mut f = [
            eig.pair_frequency(Pair::XY),
            eig.pair_frequency(Pair::YZ),
            eig.pair_frequency(Pair::XZ),
        ];
        f.sort_by(f64::total_cmp);
        prop_assert!((f[0] + f[1] - f[2]).abs() < 1e-8);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn co_rotation_leaves_spectrum_unchanged(
        model in model_strategy(),
        field in field_strategy(),
        rot in rotation_strategy(),
    ) {
        let base = solve(&model, &field).unwrap();
        let turned = model.with_orientation(Orientation::from_matrix(&(rot * model.orientation.matrix())));
        let b = rot * field.vector();
        let moved = solve(&turned, &FieldVector::new(b.x, b.y, b.z).unwrap()).unwrap();
        for k in 0..3 {
            prop_assert!((base.energies[k] - moved.energies[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn cubic_energies_track_eigensolver(model in model_strategy(), field in field_strategy()) {
        let eig = solve(&model, &field).unwrap();
        let b = model.orientation.to_molecular(&field.vector()) * model.gamma_e();
        let cubic = cubic_energies(&model.zfs, &b);
        let scale = eig.energies[2] - eig.energies[0];
        for (c, e) in cubic.iter().zip(&eig.energies) {
            prop_assert!((c - e).abs() <= 1e-9 * scale.max(1.0));
        }
    }
}

#[test]
fn eigensolver_agrees_with_characteristic_polynomial() {
    let mut rng = seeded_rng(11, 0);
    for _ in 0..100 {
        let raw: Vec<f64> = (0..9).map(|_| rng.random_range(-2000.0..2000.0)).collect();
        let h = Matrix3::new(
            Complex64::new(raw[0], 0.0),
            Complex64::new(raw[3], raw[4]),
            Complex64::new(raw[5], raw[6]),
            Complex64::new(raw[3], -raw[4]),
            Complex64::new(raw[1], 0.0),
            Complex64::new(raw[7], raw[8]),
            Complex64::new(raw[5], -raw[6]),
            Complex64::new(raw[7], -raw[8]),
            Complex64::new(raw[2], 0.0),
        );
        let eig = eigensystem(&HermitianMatrix3::new(h).unwrap()).unwrap();
        let oracle = char_poly_energies(&h);
        let scale = oracle.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..3 {
            assert!(
                (eig.energies[k] - oracle[k]).abs() <= 1e-6 * scale,
                "{:?} vs {:?}",
                eig.energies,
                oracle
            );
        }
    }
}

#[test]
fn strong_field_slope_along_molecular_z() {
    let model = TripletModel::with_zfs(1891.0, 459.0).unwrap();
    let outer = |b: f64| {
        let eig = solve(&model, &FieldVector::new(0.0, 0.0, b).unwrap()).unwrap();
        eig.energies[2] - eig.energies[0]
    };
    let h = 1.0;
    let slope = (outer(1000.0 + h) - outer(1000.0 - h)) / (2.0 * h);
    let expected = 2.0 * DEFAULT_G * BOHR_MHZ_PER_MT;
    assert!((slope / expected - 1.0).abs() < 0.01, "slope {slope} vs {expected}");
}

#[test]
fn upper_pair_splits_monotonically() {
    let model = TripletModel::with_zfs(1891.0, 459.0).unwrap();
    let drive = Vector3::new(1.0, 1.0, 1.0).normalize();
    let mut last = None;
    for k in 0..=100 {
        let field = FieldVector::new(0.0, 0.0, k as f64).unwrap();
        let table = transition_table(&model, &field, &drive).unwrap();
        assert_eq!(table.len(), 3);
        assert!(table.windows(2).all(|w| w[0].frequency <= w[1].frequency));
        let line = |p: Pair| table.iter().find(|t| t.pair == p).unwrap().frequency;
        let split = line(Pair::XZ) - line(Pair::YZ);
        if let Some(prev) = last {
            assert!(split > prev);
        }
        last = Some(split);
    }
    let eig = solve(&model, &FieldVector::new(0.0, 0.0, 100.0).unwrap()).unwrap();
    let gamma = DEFAULT_G * BOHR_MHZ_PER_MT;
    // the x/y pair fans out to +/- gamma B about its centroid, crossing Tz
    let centroid = 1891.0 / 3.0;
    assert!((eig.energies[2] - centroid) > 0.9 * gamma * 100.0);
    assert!((centroid - eig.energies[0]) > 0.9 * gamma * 100.0);
}

#[test]
fn zero_field_lines_for_measured_zfs() {
    let model = TripletModel::with_zfs(1891.0, 459.0).unwrap();
    let drive = Vector3::new(1.0, 1.0, 1.0).normalize();
    let table = transition_table(&model, &FieldVector::ZERO, &drive).unwrap();
    let f: Vec<f64> = table.iter().map(|t| t.frequency).collect();
    assert!((f[0] - 918.0).abs() < 1e-9);
    assert!((f[1] - 1432.0).abs() < 1e-9);
    assert!((f[2] - 2350.0).abs() < 1e-9);
}

#[test]
fn canonicalizes_out_of_range_inputs() {
    let direct = TripletModel::with_zfs(1891.0, 459.0).unwrap();
    let swapped = TripletModel::new(-1891.0, -459.0, Orientation::identity(), DEFAULT_G).unwrap();
    let a = solve(&direct, &FieldVector::ZERO).unwrap();
    let b = solve(&swapped, &FieldVector::ZERO).unwrap();
    for p in Pair::ALL {
        assert!((a.pair_frequency(p) - b.pair_frequency(p)).abs() < 1e-9);
    }
}
