use infometer::adapt::{concat, ConcatMode};
use infometer::entropy::{ArContextModel, ClassLayout, EntropyEstimate, FactorizedModel, BranchId};
use infometer::harness::{MaskShape, PerturbationSpec, Target};
use infometer::infometer::MIEstimate;
use infometer::sources::{gen_gaussian_pair, GeneratorSpec, Marginal};
use infometer::transform::LiftingTransform;
use infometer::Grid;
use proptest::collection::vec as pvec;
use proptest::prelude::{any, prop_assert, prop_assert_eq, prop_oneof, proptest, Just, ProptestConfig, Strategy};

fn int_map(rows: usize, cols: usize, lo: i32, hi: i32) -> impl Strategy<Value = Grid<i32>> {
    pvec(lo..=hi, rows * cols).prop_map(move |v| Grid::from_vec(rows, cols, v).unwrap())
}

fn sized_map() -> impl Strategy<Value = Grid<i32>> {
    (4usize..20, 4usize..20).prop_flat_map(|(r, c)| int_map(r, c, -5000, 5000))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn lifting_is_exactly_invertible(
        m in sized_map(),
        levels in 1usize..=2,
        taps in 1usize..=4,
        seed in any::<u64>(),
    ) {
        let mut state = seed;
        let params: Vec<f64> = (0..levels * 4 * taps)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 4.0 - 2.0
            })
            .collect();
        let t = LiftingTransform::from_params(levels, taps, params).unwrap();
        let c = t.forward(&m).unwrap();
        prop_assert_eq!(c.values.len(), m.len());
        prop_assert_eq!(t.inverse(&c).unwrap(), m);
    }

    #[test]
    fn joint_maps_keep_every_element(
        (x, y) in (1usize..8, 1usize..8).prop_flat_map(|(r, c)| (int_map(r, c, 0, 255), int_map(r, c, 0, 255))),
        mode in prop_oneof![Just(ConcatMode::Tiling), Just(ConcatMode::Quilting)],
    ) {
        let j = concat(&x, &y, mode).unwrap();
        prop_assert_eq!(j.values.len(), x.len() + y.len());
        prop_assert_eq!(j.split().unwrap(), (x, y));
    }

    #[test]
    fn factorized_pmfs_are_normalized(logits in pvec(-8.0f64..8.0, 2 * 12)) {
        let mut m = FactorizedModel::uniform(0, 11, ClassLayout::ColumnInterleave { period: 2 }).unwrap();
        m.params_mut().copy_from_slice(&logits);
        for class in 0..2 {
            let s: f64 = m.pmf(class).iter().sum();
            prop_assert!((s - 1.0).abs() <= 1e-6, "sum {}", s);
        }
    }

    #[test]
    fn ar_pmfs_are_normalized(
        params in pvec(-3.0f64..3.0, 10),
        z in pvec(-400.0f64..400.0, 4),
    ) {
        let m = ArContextModel::from_parts(3, ClassLayout::Uniform, (-30, 300), 120.0, 60.0, params).unwrap();
        let s: f64 = m.pmf(&z, 0).iter().sum();
        prop_assert!((s - 1.0).abs() <= 1e-6, "sum {}", s);
    }

    #[test]
    fn assembly_is_exact_arithmetic(
        hx in 0.0f64..1e7, hy in 0.0f64..1e7, hxy in 0.0f64..2e7, n in 1u64..100_000,
    ) {
        let e = MIEstimate::assemble(
            EntropyEstimate::new(BranchId::X, "d", hx, n),
            EntropyEstimate::new(BranchId::Y, "d", hy, n),
            EntropyEstimate::new(BranchId::Joint, "d", hxy, 2 * n),
            ConcatMode::Quilting,
            "d",
        );
        prop_assert_eq!(e.i_total_bits, hx + hy - hxy);
        prop_assert_eq!(e.i_bits_per_x_element, (hx + hy - hxy) / n as f64);
        prop_assert_eq!(e.negative_warning, e.i_total_bits < 0.0 || e.i_paper_convention < 0.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generators_are_deterministic(seed in any::<u64>(), which in 0usize..4) {
        let spec = match which {
            0 => GeneratorSpec::Independent { marginal: Marginal::Gaussian { mean: 0.0, std: 2.0 } },
            1 => GeneratorSpec::Identical { marginal: Marginal::UniformInt { lo: 0, hi: 9 } },
            2 => GeneratorSpec::GaussianPair { rho: 0.4 },
            _ => GeneratorSpec::DiscreteIid { pmf: vec![0.2, 0.3, 0.5] },
        };
        let a = spec.generate(5, 6, 7, seed).unwrap();
        let b = spec.generate(5, 6, 7, seed).unwrap();
        prop_assert!(a.validate().is_ok());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn perturbations_leave_the_other_source_alone(
        seed in any::<u64>(),
        snr in 0.0f64..40.0,
        frac in 0.0f64..1.0,
        on_x in any::<bool>(),
        noise in any::<bool>(),
    ) {
        let d = gen_gaussian_pair(0.7, 8, 8, 6, seed).unwrap();
        let target = if on_x { Target::X } else { Target::Y };
        let spec = if noise {
            PerturbationSpec::NoiseSnr { snr_db: snr, target, seed }
        } else {
            let shape = if seed % 2 == 0 { MaskShape::Rectangles } else { MaskShape::Blobs };
            PerturbationSpec::RegionReplace { mask_frac: frac, target, shape, seed }
        };
        let p = spec.apply(&d).unwrap();
        for (a, b) in d.samples.iter().zip(&p.samples) {
            if on_x {
                prop_assert_eq!(&a.y, &b.y);
            } else {
                prop_assert_eq!(&a.x, &b.x);
            }
        }
    }
}
