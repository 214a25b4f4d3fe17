use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use infometer::adapt::ConcatMode;
use infometer::checkpoint::{self, CheckpointManifest};
use infometer::entropy::{
    train_branch, BranchId, DensityKind, EntropyError, EntropyEstimate, EpochRecord, EstimatorConfig, InitMode,
};
use infometer::harness::{self, BenchmarkConfig, BenchmarkReport, MaskShape, PerturbationSpec, Statistic, Target};
use infometer::infometer::{compare_runs, estimate_mi, Convention, InfoMeter, MIEstimate};
use infometer::report;
use infometer::sources::{self, Dataset, GeneratorSpec, Marginal};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, SeedEcho, SeedSource};
use crate::error::{runtime, usage, CliError};
use crate::{
    BenchmarkArgs, ConcatArg, DensityArg, EstimateArgs, EstimatorArgs, GenerateArgs, GeneratorKind, InitArg,
    MaskShapeArg, PerturbArgs, ReportArgs, StatArg, TargetArg, TrainArgs,
};

pub const REPORT_FORMAT_VERSION: u32 = 1;

const BRANCHES: [BranchId; 3] = [BranchId::X, BranchId::Y, BranchId::Joint];

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| runtime(format!("{}: {e}", parent.display())))?;
    }
    fs::write(path, contents).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

fn json<T: Serialize>(value: &T) -> Result<String, CliError> {
    report::to_json(value).map_err(runtime)
}

fn load_dataset(dir: &Path) -> Result<Dataset, CliError> {
    sources::load_dataset(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))
}

fn concat_mode(c: ConcatArg) -> ConcatMode {
    match c {
        ConcatArg::Tiling => ConcatMode::Tiling,
        ConcatArg::Quilting => ConcatMode::Quilting,
    }
}

fn target(t: TargetArg) -> Target {
    match t {
        TargetArg::X => Target::X,
        TargetArg::Y => Target::Y,
        TargetArg::Both => Target::Both,
    }
}

/// Config estimator section with command-line overrides and the global seed applied.
fn estimator_config(base: &EstimatorConfig, a: &EstimatorArgs, seed: SeedEcho) -> Result<EstimatorConfig, CliError> {
    let mut c = if a.paper_fidelity {
        EstimatorConfig::paper_fidelity()
    } else {
        base.clone()
    };
    if let Some(m) = a.concat {
        c.concat_mode = concat_mode(m);
    }
    if let Some(v) = a.levels {
        c.transform.levels = v;
    }
    if let Some(v) = a.taps {
        c.transform.taps = v;
    }
    if let Some(d) = a.density {
        c.density.kind = match d {
            DensityArg::Factorized => DensityKind::Factorized,
            DensityArg::Autoregressive => DensityKind::Autoregressive,
        };
    }
    if let Some(v) = a.context {
        c.density.context = v;
    }
    let t = &mut c.training;
    if let Some(v) = a.epochs {
        t.epochs = v;
    }
    if let Some(v) = a.lr_initial {
        t.lr_initial = v;
    }
    if let Some(v) = a.lr_late {
        t.lr_late = v;
    }
    if let Some(v) = a.switch_epoch {
        t.switch_epoch = v;
    }
    if let Some(v) = a.batch_size {
        t.batch_size = v;
    }
    if let Some(i) = a.init {
        t.init = match i {
            InitArg::Data => InitMode::Data,
            InitArg::Uniform => InitMode::Uniform,
        };
    }
    if seed.source != SeedSource::Default {
        t.seed = seed.seed;
    }
    c.validate().map_err(usage)?;
    Ok(c)
}

fn generator_from_flags(a: &GenerateArgs, kind: GeneratorKind) -> Result<GeneratorSpec, CliError> {
    let marginal = || -> Result<Marginal, CliError> {
        a.marginal
            .as_deref()
            .ok_or_else(|| usage("--marginal is required for this generator"))?
            .parse()
            .map_err(usage)
    };
    Ok(match kind {
        GeneratorKind::Independent => GeneratorSpec::Independent { marginal: marginal()? },
        GeneratorKind::Identical => GeneratorSpec::Identical { marginal: marginal()? },
        GeneratorKind::GaussianPair => GeneratorSpec::GaussianPair {
            rho: a.rho.ok_or_else(|| usage("--rho is required for gaussian-pair"))?,
        },
        GeneratorKind::DiscreteIid => GeneratorSpec::DiscreteIid {
            pmf: a
                .pmf
                .as_deref()
                .ok_or_else(|| usage("--pmf is required for discrete-iid"))?
                .split(',')
                .map(|p| p.trim().parse::<f64>().map_err(|_| usage(format!("bad probability `{p}`"))))
                .collect::<Result<_, _>>()?,
        },
    })
}

pub fn generate(a: GenerateArgs, config: &RunConfig, seed: SeedEcho) -> Result<(), CliError> {
    let section = config.generate.as_ref();
    let spec = match a.generator {
        Some(kind) => generator_from_flags(&a, kind)?,
        None => section
            .map(|g| g.source.clone())
            .ok_or_else(|| usage("no generator: pass --generator or a config with a generate section"))?,
    };
    let pick = |flag: Option<usize>, from_config: Option<usize>, name: &str| {
        flag.or(from_config).ok_or_else(|| usage(format!("--{name} is required")))
    };
    let rows = pick(a.rows, section.map(|g| g.shape[0]), "rows")?;
    let cols = pick(a.cols, section.map(|g| g.shape[1]), "cols")?;
    let n = pick(a.samples, section.map(|g| g.n_samples), "samples")?;
    let dataset = spec.generate(rows, cols, n, seed.seed).map_err(usage)?;
    sources::save_dataset(&dataset, &a.out).map_err(runtime)?;
    print!("{}", json(&dataset.manifest)?);
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct BranchSummary {
    branch: BranchId,
    status: String,
    epochs_completed: usize,
    final_bits_per_element: Option<f64>,
    param_count: Option<usize>,
    checkpoint_crc32: Option<u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainReport {
    format_version: u32,
    seed: SeedEcho,
    dataset_id: String,
    config: EstimatorConfig,
    branches: Vec<BranchSummary>,
}

pub fn train(a: TrainArgs, config: &RunConfig, seed: SeedEcho) -> Result<(), CliError> {
    let est = estimator_config(&config.estimator, &a.estimator, seed)?;
    let dataset = load_dataset(&a.data)?;
    let mut summaries = Vec::new();
    let mut failures = Vec::new();
    for id in BRANCHES {
        let dir = a.out.join(id.to_string());
        let (curve, summary) = match train_branch(&dataset, id, &est) {
            Ok(model) => {
                checkpoint::save_branch(&model, &dir).map_err(runtime)?;
                let manifest = checkpoint::load_manifest(&dir).map_err(runtime)?;
                let summary = BranchSummary {
                    branch: id,
                    status: "ok".into(),
                    epochs_completed: model.training_curve.len(),
                    final_bits_per_element: model.training_curve.last().map(|r| r.mean_bits_per_element),
                    param_count: Some(model.param_count()),
                    checkpoint_crc32: Some(manifest.payload.crc32),
                };
                (model.training_curve, summary)
            }
            Err(e) => {
                failures.push(format!("{id} branch: {e}"));
                let curve = match e {
                    EntropyError::Diverged { curve, .. } => curve,
                    _ => Vec::new(),
                };
                let summary = BranchSummary {
                    branch: id,
                    status: failures.last().cloned().unwrap_or_default(),
                    epochs_completed: curve.len(),
                    final_bits_per_element: curve.last().map(|r| r.mean_bits_per_element),
                    param_count: None,
                    checkpoint_crc32: None,
                };
                (curve, summary)
            }
        };
        let csv = report::training_curve_csv(&curve).map_err(runtime)?;
        write_file(&dir.join("training_curve.csv"), &csv)?;
        summaries.push(summary);
    }
    let out = TrainReport {
        format_version: REPORT_FORMAT_VERSION,
        seed,
        dataset_id: dataset.id(),
        config: est,
        branches: summaries,
    };
    let text = json(&out)?;
    write_file(&a.out.join("train_report.json"), &text)?;
    print!("{text}");
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::Runtime(failures.join("; ")))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum EstimateSource {
    /// Payload checksums of the x, y and joint checkpoints.
    Checkpoint { crc32: BTreeMap<BranchId, u32> },
    /// Entropies given on the command line.
    Constituents,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct EstimateReport {
    format_version: u32,
    seed: SeedEcho,
    source: EstimateSource,
    analytic_mi_bits_per_element: Option<f64>,
    pub estimate: MIEstimate,
}

fn check_manifests(manifests: &[CheckpointManifest; 3], dataset: &Dataset, want: Option<ConcatMode>) -> Result<(), CliError> {
    let joint = &manifests[2];
    if let Some(m) = want {
        if joint.concat_mode != m {
            return Err(usage(format!(
                "checkpoint joint branch uses {} concatenation, --concat asked for {m}",
                joint.concat_mode
            )));
        }
    }
    let (rows, cols) = dataset.shape();
    for man in manifests {
        if man.source_shape != [rows, cols] {
            return Err(usage(format!(
                "{} checkpoint was trained on {:?} maps, dataset has [{rows}, {cols}]",
                man.branch, man.source_shape
            )));
        }
        if man.concat_mode != joint.concat_mode {
            return Err(usage("checkpoints disagree on concat mode"));
        }
    }
    Ok(())
}

pub fn estimate(a: EstimateArgs, seed: SeedEcho) -> Result<(), CliError> {
    let out = if let Some(dir) = &a.checkpoint {
        let data = a.data.as_ref().ok_or_else(|| usage("--checkpoint needs --data"))?;
        let manifests = BRANCHES.map(|id| checkpoint::load_manifest(&dir.join(id.to_string())));
        let manifests = match manifests {
            [Ok(x), Ok(y), Ok(j)] => [x, y, j],
            [x, y, j] => {
                let e = [x.err(), y.err(), j.err()].into_iter().flatten().next().expect("one failed");
                return Err(runtime(format!("{}: {e}", dir.display())));
            }
        };
        let dataset = load_dataset(data)?;
        check_manifests(&manifests, &dataset, a.concat.map(concat_mode))?;
        let meter: InfoMeter = checkpoint::load_infometer(dir).map_err(runtime)?;
        let estimate = estimate_mi(&meter, &dataset).map_err(runtime)?;
        EstimateReport {
            format_version: REPORT_FORMAT_VERSION,
            seed,
            source: EstimateSource::Checkpoint {
                crc32: manifests.iter().map(|m| (m.branch, m.payload.crc32)).collect(),
            },
            analytic_mi_bits_per_element: dataset.manifest.analytic_mi_bits_per_element,
            estimate,
        }
    } else {
        let c = a.constituents.as_deref().ok_or_else(|| usage("pass --checkpoint or --constituents"))?;
        let [hx, hy, hxy] = <[f64; 3]>::try_from(c).map_err(|_| usage("--constituents takes three values"))?;
        if let Some(bad) = c.iter().find(|v| !v.is_finite()) {
            return Err(usage(format!("constituent {bad} is not finite")));
        }
        if a.element_count == 0 {
            return Err(usage("--element-count must be positive"));
        }
        let n = a.element_count;
        let id = "constituents";
        let estimate = MIEstimate::assemble(
            EntropyEstimate::from_rate(BranchId::X, id, hx, n),
            EntropyEstimate::from_rate(BranchId::Y, id, hy, n),
            EntropyEstimate::from_rate(BranchId::Joint, id, hxy, 2 * n),
            a.concat.map(concat_mode).unwrap_or_default(),
            id,
        );
        EstimateReport {
            format_version: REPORT_FORMAT_VERSION,
            seed,
            source: EstimateSource::Constituents,
            analytic_mi_bits_per_element: None,
            estimate,
        }
    };
    let text = json(&out)?;
    match &a.out {
        Some(path) => write_file(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn perturb(a: PerturbArgs, seed: SeedEcho) -> Result<(), CliError> {
    let dataset = load_dataset(&a.data)?;
    let t = target(a.target);
    let specs: Vec<(PathBuf, PerturbationSpec)> = if let Some(snr_db) = a.noise_snr {
        vec![(a.out.clone(), PerturbationSpec::NoiseSnr { snr_db, target: t, seed: seed.seed })]
    } else if let Some(mask_frac) = a.mask_frac {
        let shape = match a.mask_shape {
            MaskShapeArg::Rectangles => MaskShape::Rectangles,
            MaskShapeArg::Blobs => MaskShape::Blobs,
        };
        vec![(
            a.out.clone(),
            PerturbationSpec::RegionReplace {
                mask_frac,
                target: t,
                shape,
                seed: seed.seed,
            },
        )]
    } else {
        let stat = match a.split.ok_or_else(|| usage("no perturbation given"))? {
            StatArg::Variance => Statistic::Variance,
            StatArg::BlobCount => Statistic::BlobCount,
        };
        if a.bins == 0 {
            return Err(usage("--bins must be positive"));
        }
        match a.bin {
            Some(bin) => vec![(a.out.clone(), PerturbationSpec::SplitByStat { stat, n_bins: a.bins, bin })],
            None => (0..a.bins)
                .map(|bin| {
                    (
                        a.out.join(format!("bin{bin}")),
                        PerturbationSpec::SplitByStat { stat, n_bins: a.bins, bin },
                    )
                })
                .collect(),
        }
    };
    let mut manifests = Vec::new();
    for (dir, spec) in specs {
        spec.validate().map_err(usage)?;
        let result = spec.apply(&dataset).map_err(runtime)?;
        sources::save_dataset(&result, &dir).map_err(runtime)?;
        manifests.push(result.manifest);
    }
    if manifests.len() == 1 {
        print!("{}", json(&manifests[0])?);
    } else {
        print!("{}", json(&manifests)?);
    }
    Ok(())
}

pub fn benchmark(a: BenchmarkArgs, config: &RunConfig, seed: SeedEcho) -> Result<(), CliError> {
    let section = config
        .benchmark
        .as_ref()
        .filter(|b| !b.conditions.is_empty())
        .ok_or_else(|| usage("the config lists no benchmark conditions"))?;
    let bench = BenchmarkConfig {
        conditions: section.conditions.clone(),
        estimator: estimator_config(&config.estimator, &a.estimator, seed)?,
        oracle_bins: section.oracle_bins,
    };
    for c in &bench.conditions {
        for p in &c.perturbations {
            p.validate().map_err(|e| usage(format!("condition {}: {e}", c.label)))?;
        }
    }
    let result = harness::run_benchmark(&bench).map_err(runtime)?;
    write_benchmark(&result, &a.out, "benchmark")?;
    if result.failures > 0 {
        return Err(CliError::Runtime(format!(
            "{} of {} conditions failed",
            result.failures,
            result.conditions.len()
        )));
    }
    Ok(())
}

fn write_benchmark(result: &BenchmarkReport, dir: &Path, stem: &str) -> Result<(), CliError> {
    write_file(&dir.join(format!("{stem}.json")), &json(result)?)?;
    write_file(
        &dir.join(format!("{stem}.csv")),
        &report::benchmark_csv(result).map_err(runtime)?,
    )?;
    write_file(&dir.join(format!("{stem}.svg")), &report::benchmark_svg(result))
}

enum ReportInput {
    Benchmark(BenchmarkReport),
    Estimate(EstimateReport),
    Checkpoint(Vec<(BranchId, Vec<EpochRecord>)>),
}

fn read_input(path: &Path) -> Result<ReportInput, CliError> {
    if path.is_dir() {
        let mut curves = Vec::new();
        for id in BRANCHES {
            let m = checkpoint::load_manifest(&path.join(id.to_string()))
                .map_err(|e| usage(format!("{}: {e}", path.display())))?;
            curves.push((id, m.training_curve));
        }
        return Ok(ReportInput::Checkpoint(curves));
    }
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let bad = |e: serde_json::Error| usage(format!("{}: {e}", path.display()));
    if value.get("pairs").is_some() {
        Ok(ReportInput::Benchmark(serde_json::from_value(value).map_err(bad)?))
    } else if value.get("estimate").is_some() {
        Ok(ReportInput::Estimate(serde_json::from_value(value).map_err(bad)?))
    } else {
        Err(usage(format!("{}: not a benchmark or estimate report", path.display())))
    }
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "input".into())
}

pub fn report(a: ReportArgs) -> Result<(), CliError> {
    let conventions: Vec<Convention> = a
        .convention
        .iter()
        .map(|c| c.parse().map_err(usage))
        .collect::<Result<_, _>>()?;
    if conventions.len() > 1 && !a.allow_mixed {
        return Err(usage("several conventions were requested without --allow-mixed"));
    }
    let inputs: Vec<(String, ReportInput)> = a
        .input
        .iter()
        .map(|p| read_input(p).map(|r| (stem(p), r)))
        .collect::<Result<_, _>>()?;

    let mut written = Vec::new();
    let mut estimates = Vec::new();
    for (name, input) in inputs {
        match input {
            ReportInput::Benchmark(b) => {
                write_benchmark(&b, &a.out, &name)?;
                written.extend(["json", "csv", "svg"].map(|ext| format!("{name}.{ext}")));
            }
            ReportInput::Estimate(e) => estimates.push((name, e.estimate)),
            ReportInput::Checkpoint(curves) => {
                for (id, curve) in &curves {
                    let file = format!("{name}_{id}_training_curve.csv");
                    write_file(&a.out.join(&file), &report::training_curve_csv(curve).map_err(runtime)?)?;
                    written.push(file);
                }
                let labels: Vec<String> = curves.iter().map(|(id, _)| id.to_string()).collect();
                let series: Vec<(&str, &[EpochRecord])> = labels
                    .iter()
                    .zip(&curves)
                    .map(|(l, (_, c))| (l.as_str(), c.as_slice()))
                    .collect();
                let file = format!("{name}_training_curves.svg");
                write_file(&a.out.join(&file), &report::training_curve_svg(&series))?;
                written.push(file);
            }
        }
    }
    if !estimates.is_empty() {
        write_file(
            &a.out.join("estimates.csv"),
            &report::estimates_csv(&estimates).map_err(runtime)?,
        )?;
        written.push("estimates.csv".into());
    }
    if estimates.len() >= 2 {
        let cmp = compare_runs(&estimates, &conventions, a.allow_mixed).map_err(usage)?;
        write_file(&a.out.join("comparison.csv"), &report::comparison_csv(&cmp).map_err(runtime)?)?;
        write_file(&a.out.join("comparison.json"), &json(&cmp)?)?;
        written.extend(["comparison.csv".to_string(), "comparison.json".to_string()]);
    }
    print!("{}", json(&serde_json::json!({ "written": written }))?);
    Ok(())
}
