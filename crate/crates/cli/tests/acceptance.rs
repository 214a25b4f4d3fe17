//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. Pass substrings as arguments to run a subset.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use infometer::adapt::{concat, ConcatMode};
use infometer::entropy::{
    causal_neighbors, estimate_entropy, train_branch, ArContextModel, BranchId, ClassLayout, DensityConfig,
    DensityKind, DensityModel, EstimatorConfig, FactorizedModel, TransformConfig,
};
use infometer::harness::{run_benchmark, BenchmarkConfig, Condition, PerturbationSpec, Target};
use infometer::infometer::{estimate_mi, fit_infometer};
use infometer::oracles::{gaussian_analytic_mi, histogram_mi, ksg_mi, CountTable};
use infometer::rng::stream_rng;
use infometer::sources::{gen_discrete_iid, gen_gaussian_pair, gen_identical, gen_independent, GeneratorSpec, Marginal};
use infometer::transform::LiftingTransform;
use infometer::Grid;
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn invertibility() -> Outcome {
    let mut rng = stream_rng(2024, 0);
    for i in 0..1000 {
        let levels = rng.random_range(1..=3);
        let taps = rng.random_range(1..=4);
        let params: Vec<f64> = (0..levels * 4 * taps).map(|_| rng.random_range(-1.5..1.5)).collect();
        let t = LiftingTransform::from_params(levels, taps, params).map_err(|e| e.to_string())?;
        let (lo, hi) = if i % 2 == 0 { (0, 255) } else { (-100_000, 100_000) };
        let m = Grid::from_fn(32, 32, |_, _| rng.random_range(lo..=hi));
        let c = t.forward(&m).map_err(|e| e.to_string())?;
        let back = t.inverse(&c).map_err(|e| e.to_string())?;
        ensure(back == m, format!("map {i} did not round-trip"))?;

        let y = Grid::from_fn(32, 32, |_, _| rng.random_range(0..=255));
        for mode in [ConcatMode::Tiling, ConcatMode::Quilting] {
            let j = concat(&m, &y, mode).map_err(|e| e.to_string())?;
            ensure(j.split().map_err(|e| e.to_string())? == (m.clone(), y.clone()), format!("{mode} split of pair {i}"))?;
        }
    }
    Ok("1000 maps and 2000 joint maps round-trip exactly".into())
}

fn entropy_oracle() -> Outcome {
    let d = gen_discrete_iid(&[0.25; 4], 32, 32, 100, 5).map_err(|e| e.to_string())?;
    let cfg = EstimatorConfig {
        transform: TransformConfig::identity(),
        density: DensityConfig {
            kind: DensityKind::Factorized,
            context: 3,
        },
        ..Default::default()
    };
    ensure(cfg.training.epochs == 50 && cfg.training.switch_epoch == 25, "default schedule changed")?;
    let b = train_branch(&d, BranchId::X, &cfg).map_err(|e| e.to_string())?;
    let h = estimate_entropy(&b, &d).map_err(|e| e.to_string())?;
    let bpe = h.bits_per_element;
    ensure(
        (1.95..=2.10).contains(&bpe),
        format!("H = {bpe:.5} bits/element over {} symbols", h.element_count),
    )?;
    Ok(format!("H = {bpe:.5} bits/element over {} symbols (analytic 2)", h.element_count))
}

fn independence() -> Outcome {
    let d = gen_independent(&Marginal::Gaussian { mean: 0.0, std: 1.0 }, 32, 32, 2000, 11).map_err(|e| e.to_string())?;
    let meter = fit_infometer(&d, &EstimatorConfig::default()).map_err(|e| e.to_string())?;
    let est = estimate_mi(&meter, &d).map_err(|e| e.to_string())?;
    let i = est.i_bits_per_x_element;
    ensure(i.abs() <= 0.1, format!("I = {i:.5} bits per X element"))?;
    Ok(format!("I = {i:.5} bits per X element (total {:.1} bits)", est.i_total_bits))
}

fn identical() -> Outcome {
    let d = gen_identical(&Marginal::Gaussian { mean: 0.0, std: 1.0 }, 32, 32, 2000, 12).map_err(|e| e.to_string())?;
    let cfg = EstimatorConfig::default();
    ensure(
        cfg.concat_mode == ConcatMode::Quilting && cfg.density.kind == DensityKind::Autoregressive && cfg.density.context == 3,
        "default is not quilting with a 3x3 AR context",
    )?;
    let meter = fit_infometer(&d, &cfg).map_err(|e| e.to_string())?;
    let est = estimate_mi(&meter, &d).map_err(|e| e.to_string())?;
    let ratio = est.i_total_bits / est.h_x.total_bits;
    ensure(ratio >= 0.9, format!("I / H(X) = {ratio:.4}"))?;
    Ok(format!("I / H(X) = {ratio:.4} (H(X) {:.4} bits/element)", est.h_x.bits_per_element))
}

fn gaussian_sweep() -> Outcome {
    let mut prev = f64::NEG_INFINITY;
    let mut parts = Vec::new();
    for (k, rho) in [0.0, 0.3, 0.6, 0.9].into_iter().enumerate() {
        let d = gen_gaussian_pair(rho, 32, 32, 500, 100 + k as u64).map_err(|e| e.to_string())?;
        let meter = fit_infometer(&d, &EstimatorConfig::default()).map_err(|e| e.to_string())?;
        let i = estimate_mi(&meter, &d).map_err(|e| e.to_string())?.i_bits_per_x_element;
        let truth = gaussian_analytic_mi(rho).map_err(|e| e.to_string())?;
        parts.push(format!("rho {rho}: {i:.4} vs {truth:.4}"));
        let tol = (0.2 * truth).max(0.1);
        ensure((i - truth).abs() <= tol, parts.join(", "))?;
        ensure(i > prev, format!("not increasing: {}", parts.join(", ")))?;
        prev = i;
    }
    Ok(parts.join(", "))
}

fn oracle_equivalence() -> Outcome {
    let counts = [[3.0, 1.0], [1.0, 3.0]];
    let n: f64 = counts.iter().flatten().sum();
    let mut plug_in = 0.0;
    for a in 0..2 {
        for b in 0..2 {
            let p = counts[a][b] / n;
            let pa = (counts[a][0] + counts[a][1]) / n;
            let pb = (counts[0][b] + counts[1][b]) / n;
            plug_in += p * (p / (pa * pb)).log2();
        }
    }
    let table = CountTable::new(&[vec![3, 1], vec![1, 3]]).map_err(|e| e.to_string())?;
    let h = histogram_mi(&table);
    ensure((h - plug_in).abs() <= 1e-12, format!("histogram {h} vs plug-in {plug_in}"))?;

    let d = gen_gaussian_pair(0.6, 1, 1, 5000, 7).map_err(|e| e.to_string())?;
    let xs: Vec<f64> = d.samples.iter().map(|s| s.x.as_slice()[0] as f64).collect();
    let ys: Vec<f64> = d.samples.iter().map(|s| s.y.as_slice()[0] as f64).collect();
    let ksg = ksg_mi(&xs, &ys, 3, 1).map_err(|e| e.to_string())?;
    ensure((ksg.bits - 0.3219).abs() <= 0.05, format!("KSG {:.4}", ksg.bits))?;
    Ok(format!("histogram {h:.15} = plug-in {plug_in:.15}; KSG {:.4} vs 0.3219", ksg.bits))
}

fn snr_direction() -> Outcome {
    let cond = |snr: f64| Condition {
        label: format!("snr {snr} dB"),
        source: GeneratorSpec::GaussianPair { rho: 0.8 },
        shape: [32, 32],
        n_samples: 500,
        seed: 3,
        perturbations: vec![PerturbationSpec::NoiseSnr {
            snr_db: snr,
            target: Target::Both,
            seed: 4,
        }],
        parameter: Some(snr),
    };
    let cfg = BenchmarkConfig {
        conditions: vec![cond(21.4), cond(28.1)],
        estimator: EstimatorConfig::default(),
        oracle_bins: 16,
    };
    let r = run_benchmark(&cfg).map_err(|e| e.to_string())?;
    ensure(r.failures == 0, format!("{} conditions failed", r.failures))?;
    for (c, target) in r.conditions.iter().zip([21.4, 28.1]) {
        let p = &c.perturbations[0];
        for got in [p.achieved_snr_db_x, p.achieved_snr_db_y] {
            let got = got.ok_or("achieved SNR missing")?;
            ensure((got - target).abs() <= 0.5, format!("achieved {got:.3} dB for target {target} dB"))?;
        }
    }
    let pair = r.pairs.first().ok_or("no pair compared")?;
    ensure(
        pair.sign_agreement,
        format!("InfoMeter delta {:+.5}, oracle delta {:+.5}", pair.delta_infometer, pair.delta_oracle),
    )?;
    Ok(format!(
        "InfoMeter delta {:+.5}, oracle delta {:+.5}",
        pair.delta_infometer, pair.delta_oracle
    ))
}

fn cli(args: &[&str], dir: &Path) -> Result<std::process::Output, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_infometer"))
        .args(args)
        .current_dir(dir)
        .env_remove("INFOMETER_SEED")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(out)
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn paper_fixture() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = cli(&["estimate", "--constituents", "6.0,5.8,6.1"], dir.path())?;
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())?;
    let est = &v["estimate"];
    let bpe = |k: &str| est[k]["bits_per_element"].as_f64().unwrap_or(f64::NAN);
    ensure(
        bpe("h_x") == 6.0 && bpe("h_y") == 5.8 && bpe("h_xy") == 6.1,
        "constituents not echoed",
    )?;
    let i = est["i_paper_convention"].as_f64().ok_or("no i_paper_convention")?;
    ensure((i - 5.7).abs() <= 1e-12, format!("6.0 + 5.8 - 6.1 gave {i}"))?;
    Ok(format!("6.0 + 5.8 - 6.1 = {i}"))
}

const STEP: f64 = 1e-4;
const TOL: f64 = 1e-4;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

fn density_worst(model: &DensityModel, values: &Grid<f64>) -> f64 {
    let np = model.params().len();
    let loss = |m: &DensityModel, v: &Grid<f64>| m.loss_grad(v, &mut vec![0.0; np], &mut vec![0.0; v.len()]);
    let mut gp = vec![0.0; np];
    let mut gi = vec![0.0; values.len()];
    model.loss_grad(values, &mut gp, &mut gi);
    let mut worst: f64 = 0.0;
    for k in 0..np {
        let mut m = model.clone();
        m.params_mut()[k] += STEP;
        let up = loss(&m, values);
        m.params_mut()[k] -= 2.0 * STEP;
        let down = loss(&m, values);
        worst = worst.max(rel_err(gp[k], (up - down) / (2.0 * STEP)));
    }
    for i in 0..values.len() {
        let mut v = values.clone();
        v.as_mut_slice()[i] += STEP;
        let up = loss(model, &v);
        v.as_mut_slice()[i] -= 2.0 * STEP;
        let down = loss(model, &v);
        worst = worst.max(rel_err(gi[i], (up - down) / (2.0 * STEP)));
    }
    worst
}

fn gradients() -> Outcome {
    let instances = 20;
    let (mut wt, mut wf, mut wa): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for seed in 0..instances {
        let mut rng = stream_rng(seed, 77);
        let taps = rng.random_range(1..=3);
        let params: Vec<f64> = (0..2 * 4 * taps).map(|_| rng.random_range(-0.6..0.6)).collect();
        let t = LiftingTransform::from_params(2, taps, params).map_err(|e| e.to_string())?;
        let plan = t.plan(8, 8).map_err(|e| e.to_string())?;
        let x = Grid::from_fn(8, 8, |_, _| rng.random_range(-10.0..10.0));
        let w: Vec<f64> = (0..64).map(|_| rng.random_range(-1.0..1.0)).collect();
        let obj = |t: &LiftingTransform| -> f64 {
            let o = t.forward_relaxed(&x).expect("planned shape");
            o.as_slice().iter().zip(&w).map(|(a, b)| a * b).sum()
        };
        let (_, tape) = t.forward_relaxed_taped(&plan, &x);
        let mut gp = vec![0.0; t.params().len()];
        t.backward(&plan, &tape, &w, &mut gp);
        for k in 0..gp.len() {
            let mut t2 = t.clone();
            t2.params_mut()[k] += STEP;
            let up = obj(&t2);
            t2.params_mut()[k] -= 2.0 * STEP;
            let down = obj(&t2);
            wt = wt.max(rel_err(gp[k], (up - down) / (2.0 * STEP)));
        }

        let layout = [ClassLayout::Uniform, ClassLayout::ColumnInterleave { period: 2 }][seed as usize % 2];
        let mut f = FactorizedModel::uniform(0, 15, layout).map_err(|e| e.to_string())?;
        for p in f.params_mut() {
            *p = rng.random_range(-1.0..1.0);
        }
        let v = Grid::from_fn(3, 4, |_, _| rng.random_range(0.7..14.3));
        wf = wf.max(density_worst(&DensityModel::Factorized(f), &v));

        let k = causal_neighbors(3).len();
        let mut ap = vec![rng.random_range(-1.0..1.0)];
        ap.extend((0..k).map(|_| rng.random_range(-0.3..0.3)));
        ap.push(rng.random_range(0.5..2.0));
        ap.extend((0..k).map(|_| rng.random_range(-0.2..0.2)));
        let a = ArContextModel::from_parts(3, ClassLayout::Uniform, (-20, 60), 20.0, 10.0, ap).map_err(|e| e.to_string())?;
        let v = Grid::from_fn(3, 4, |_, _| rng.random_range(12.0..28.0));
        wa = wa.max(density_worst(&DensityModel::Autoregressive(a), &v));
    }
    let msg = format!("worst relative error: transform {wt:.1e}, factorized {wf:.1e}, autoregressive {wa:.1e} ({instances} instances each)");
    ensure(wt <= TOL && wf <= TOL && wa <= TOL, msg.clone())?;
    Ok(msg)
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = tmp.path();
    cli(
        &["generate", "--generator", "gaussian-pair", "--rho", "0.6", "--rows", "16", "--cols", "16", "-n", "40", "--out", "data", "--seed", "5"],
        dir,
    )?;
    for run in ["a", "b"] {
        cli(&["train", "--data", "data", "--out", &format!("{run}/ck"), "--seed", "9"], dir)?;
        cli(
            &["estimate", "--checkpoint", &format!("{run}/ck"), "--data", "data", "--out", &format!("{run}/estimate.json"), "--seed", "9"],
            dir,
        )?;
    }
    let mut files = vec!["ck/train_report.json".to_string(), "estimate.json".to_string()];
    for b in ["x", "y", "joint"] {
        for f in ["manifest.json", "params.bin", "training_curve.csv"] {
            files.push(format!("ck/{b}/{f}"));
        }
    }
    for f in &files {
        let a = std::fs::read(dir.join("a").join(f)).map_err(|e| format!("{f}: {e}"))?;
        let b = std::fs::read(dir.join("b").join(f)).map_err(|e| format!("{f}: {e}"))?;
        ensure(a == b, format!("{f} differs between runs"))?;
    }
    Ok(format!("{} files byte-identical across two runs", files.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 invertibility", invertibility),
        ("2 entropy oracle", entropy_oracle),
        ("3 independence", independence),
        ("4 identical sources", identical),
        ("5 gaussian sweep", gaussian_sweep),
        ("6 oracle equivalence", oracle_equivalence),
        ("7 snr direction", snr_direction),
        ("8 paper convention fixture", paper_fixture),
        ("9 gradient checks", gradients),
        ("10 determinism", determinism),
    ];
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  criterion {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  criterion {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
