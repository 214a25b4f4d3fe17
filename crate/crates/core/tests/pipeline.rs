use infometer::adapt::ConcatMode;
use infometer::entropy::{
    estimate_entropy, train_branch, BranchId, DensityConfig, DensityKind, EstimatorConfig, TrainConfig,
    TransformConfig,
};
use infometer::harness::{add_noise_snr, Target};
use infometer::infometer::{estimate_mi, fit_infometer};
use infometer::oracles::ksg_mi;
use infometer::sources::{
    gen_discrete_iid, gen_gaussian_pair, gen_identical, gen_independent, load_dataset, save_dataset, Marginal,
    SourceError,
};

fn factorized_identity() -> EstimatorConfig {
    EstimatorConfig {
        transform: TransformConfig::identity(),
        density: DensityConfig {
            kind: DensityKind::Factorized,
            context: 3,
        },
        ..Default::default()
    }
}

fn quick(epochs: usize) -> EstimatorConfig {
    EstimatorConfig {
        training: TrainConfig {
            epochs,
            ..Default::default()
        },
        ..Default::default()
    }
}

#[test]
fn gaussian_pair_sample_correlation() {
    let rho = 0.6;
    let d = gen_gaussian_pair(rho, 32, 32, 2000, 1).unwrap();
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy, mut n) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    for s in &d.samples {
        for (&x, &y) in s.x.as_slice().iter().zip(s.y.as_slice()) {
            let (x, y) = (x as f64, y as f64);
            sx += x;
            sy += y;
            sxx += x * x;
            syy += y * y;
            sxy += x * y;
            n += 1.0;
        }
    }
    let cov = sxy / n - sx / n * sy / n;
    let r = cov / ((sxx / n - (sx / n).powi(2)) * (syy / n - (sy / n).powi(2))).sqrt();
    assert!((r - rho).abs() <= 0.01, "sample correlation {r}");
}

#[test]
fn discrete_frequencies_converge() {
    let pmf = [0.5, 0.25, 0.25];
    let d = gen_discrete_iid(&pmf, 32, 32, 1000, 2).unwrap();
    let mut counts = [0u64; 3];
    for s in &d.samples {
        for &v in s.x.as_slice() {
            counts[v as usize] += 1;
        }
    }
    let total: u64 = counts.iter().sum();
    assert!(total >= 1_000_000);
    for (c, p) in counts.iter().zip(pmf) {
        let f = *c as f64 / total as f64;
        assert!((f - p).abs() <= 0.005, "frequency {f} for p {p}");
    }
}

#[test]
fn dataset_files_round_trip_and_detect_truncation() {
    let tmp = tempfile::tempdir().unwrap();
    let d = gen_independent(&Marginal::UniformInt { lo: 0, hi: 3 }, 2, 2, 1, 7).unwrap();
    assert_eq!(d.manifest.analytic_mi_bits_per_element, Some(0.0));
    save_dataset(&d, tmp.path()).unwrap();
    assert_eq!(load_dataset(tmp.path()).unwrap(), d);

    let payload = tmp.path().join("payload.bin");
    let mut bytes = std::fs::read(&payload).unwrap();
    bytes.truncate(bytes.len() - 8);
    std::fs::write(&payload, bytes).unwrap();
    assert!(matches!(load_dataset(tmp.path()), Err(SourceError::ShapeMismatch { .. })));
}

#[test]
fn bernoulli_source_costs_one_bit() {
    let m = Marginal::Bernoulli { p: 0.5, lo: 0.0, hi: 1.0 };
    let d = gen_independent(&m, 32, 32, 100, 3).unwrap();
    let b = train_branch(&d, BranchId::X, &factorized_identity()).unwrap();
    let h = estimate_entropy(&b, &d).unwrap().bits_per_element;
    assert!((0.95..=1.05).contains(&h), "{h}");
}

#[test]
fn factorized_estimate_brackets_true_entropy_and_loss_does_not_rise() {
    let d = gen_discrete_iid(&[0.5, 0.25, 0.25], 32, 32, 100, 4).unwrap();
    let b = train_branch(&d, BranchId::X, &factorized_identity()).unwrap();
    let h = estimate_entropy(&b, &d).unwrap().bits_per_element;
    assert!(h >= 1.5 - 0.05 && h <= 1.5 + 0.2, "{h}");
    let first = b.training_curve.first().unwrap().mean_bits_per_element;
    let last = b.training_curve.last().unwrap().mean_bits_per_element;
    assert!(last <= first, "first {first}, last {last}");
}

#[test]
fn constant_source_is_nearly_free() {
    let d = gen_independent(&Marginal::UniformInt { lo: 5, hi: 5 }, 16, 16, 20, 5).unwrap();
    let b = train_branch(&d, BranchId::X, &quick(5)).unwrap();
    let h = estimate_entropy(&b, &d).unwrap().bits_per_element;
    assert!(h <= 0.05, "{h}");
}

#[test]
fn quilted_copy_halves_joint_rate() {
    let d = gen_identical(&Marginal::Gaussian { mean: 0.0, std: 1.0 }, 16, 16, 100, 6).unwrap();
    let cfg = quick(10);
    let hx = estimate_entropy(&train_branch(&d, BranchId::X, &cfg).unwrap(), &d).unwrap();
    let hxy = estimate_entropy(&train_branch(&d, BranchId::Joint, &cfg).unwrap(), &d).unwrap();
    let half = 0.5 * hx.bits_per_element;
    assert!((hxy.bits_per_element - half).abs() <= 0.05 * hx.bits_per_element, "joint {} vs half marginal {half}", hxy.bits_per_element);
}

#[test]
fn fitting_is_deterministic_and_branches_are_isolated() {
    let d = gen_gaussian_pair(0.5, 12, 12, 24, 8).unwrap();
    let cfg = quick(3);
    let a = fit_infometer(&d, &cfg).unwrap();
    let b = fit_infometer(&d, &cfg).unwrap();
    for (p, q) in a.branches().iter().zip(b.branches()) {
        assert_eq!(p.transform.params(), q.transform.params());
        assert_eq!(p.density.params(), q.density.params());
        assert_eq!(p.training_curve, q.training_curve);
    }
    let alone = train_branch(&d, BranchId::Y, &cfg).unwrap();
    assert_eq!(alone.density.params(), a.y.density.params());
    assert_eq!(estimate_mi(&a, &d).unwrap(), estimate_mi(&b, &d).unwrap());
}

#[test]
fn tiled_joint_of_feature_sized_maps() {
    let d = gen_gaussian_pair(0.5, 600, 256, 1, 9).unwrap();
    let mut cfg = EstimatorConfig::paper_fidelity();
    cfg.training.epochs = 0;
    assert_eq!(cfg.concat_mode, ConcatMode::Tiling);
    let joint = train_branch(&d, BranchId::Joint, &cfg).unwrap();
    assert_eq!(joint.input_shape(), (600, 512));
}

#[test]
fn ksg_centres_on_zero_for_independent_data() {
    let mut sum = 0.0;
    for seed in 0..20 {
        let d = gen_gaussian_pair(0.0, 1, 1, 5000, 1000 + seed).unwrap();
        let xs: Vec<f64> = d.samples.iter().map(|s| s.x.as_slice()[0] as f64).collect();
        let ys: Vec<f64> = d.samples.iter().map(|s| s.y.as_slice()[0] as f64).collect();
        sum += ksg_mi(&xs, &ys, 3, seed).unwrap().bits;
    }
    let mean = sum / 20.0;
    assert!(mean.abs() <= 0.02, "mean {mean}");
}

#[test]
fn noise_hits_target_snr_on_a_million_elements() {
    let d = gen_gaussian_pair(0.8, 32, 32, 1000, 10).unwrap();
    for target_db in [21.4, 28.1] {
        let p = add_noise_snr(&d, target_db, Target::X, 11).unwrap();
        let got = p.manifest.perturbations[0].achieved_snr_db_x.unwrap();
        assert!((got - target_db).abs() <= 0.5, "{got} for {target_db}");
    }
}
