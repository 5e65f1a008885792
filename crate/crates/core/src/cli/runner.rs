use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::config::{ExperimentKind, OutputFormat, RunConfig};
use crate::conditional::{
    check_con1, verify_commuting, verify_ortho, FootprintFunctional, VerificationReport, VerifyOptions,
};
use crate::error::{Error, Result};
use crate::harness::{
    analytic_exceedance, coboundary_residuals, counterexample_probe, csv_num, dyadic_pairs, gh_check,
    moment_evidence, run_annealed_clt, run_functional_fdd, run_quenched_clt, tightness_moment_probe,
    CltResult, CoboundaryRunSpec, CsvTable, ExperimentSpec, FunctionalSpec, GhSpec, ProbeSpec, Regime,
    TightnessSpec, Verdict,
};
use crate::lattice::IndexVec;
use crate::models::{check_lin, check_volt, level_value, FieldKind, FieldModel, MomentFunctional, ULevelSampler};

/// Result of one experiment before it is written out.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub kind: ExperimentKind,
    pub verdict: Verdict,
    /// Main table, if the experiment has one.
    pub csv: Option<String>,
    /// Extra CSV files, by relative path.
    pub extra_csv: Vec<(PathBuf, String)>,
    pub summary: Value,
}

/// What a run wrote, with its timing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub version: String,
    pub platform: String,
    pub experiment: String,
    pub verdict: Verdict,
    pub outputs: Vec<String>,
    pub wall_clock_secs: f64,
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";

/// Windows used for the analytic exceedance attached to a divergent
/// moment series.
const EVIDENCE_WINDOWS: [u64; 2] = [100, 1000];

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("reports serialize")
}

fn frozen_or(cfg: &RunConfig, default: Vec<u64>) -> Vec<u64> {
    cfg.seeds.frozen_pasts.clone().unwrap_or(default)
}

fn clt(cfg: &RunConfig, model: FieldModel) -> Result<Outcome> {
    let regime = cfg.regime.unwrap_or_else(|| {
        if cfg.sizes.iter().all(|s| s.iter().all(|&n| n == s[0])) {
            Regime::Diagonal
        } else {
            Regime::Rectangular
        }
    });
    let mut spec = ExperimentSpec::new(model, regime, cfg.sizes.clone(), cfg.replicates);
    spec.frozen_pasts = frozen_or(cfg, vec![0]);
    spec.base_seed = cfg.seeds.base;
    spec.threads = cfg.threads;
    spec.omd_override = cfg.omd_override;
    spec.ks_threshold = cfg.ks_threshold;
    spec.keep_samples = cfg.keep_samples;
    let result = if cfg.experiment == ExperimentKind::CltQuenched {
        run_quenched_clt(&spec)?
    } else {
        run_annealed_clt(&spec)?
    };
    let mut summary = to_value(&result);
    if let Some(e) = result.moment_evidence.as_ref().filter(|e| e.diverges) {
        summary["non_tightness"] = non_tightness(e.n_max)?;
    }
    let extra_csv = result
        .rows
        .iter()
        .filter_map(|r| {
            CltResult::samples_csv(r).map(|s| {
                let past = r
                    .frozen_past_id
                    .map_or_else(|| "annealed".to_string(), |p| format!("past{p}"));
                let size: Vec<String> = r.size.iter().map(|n| n.to_string()).collect();
                (PathBuf::from(format!("samples/{past}_{}.csv", size.join("x"))), s)
            })
        })
        .collect();
    Ok(Outcome {
        kind: cfg.experiment,
        verdict: result.verdict,
        csv: Some(result.to_csv()),
        extra_csv,
        summary,
    })
}

/// Analytic exceedance of `max U_{ij} / (ij)` on small windows.
fn non_tightness(n_max: u64) -> Result<Value> {
    let sampler = ULevelSampler::shared(n_max)?;
    let mut rows = Vec::new();
    for w in EVIDENCE_WINDOWS {
        if level_value(n_max) < ((w - 1) * (w - 1)) as f64 {
            continue;
        }
        for b in [1.0, 4.0, 16.0] {
            let (count, prob) = analytic_exceedance(&sampler, w, b);
            rows.push(json!({"window": w, "threshold": b, "expected_count": count, "prob_any": prob}));
        }
    }
    Ok(json!({ "analytic_exceedance": rows }))
}

fn functional(cfg: &RunConfig, model: FieldModel) -> Result<Outcome> {
    if cfg.sizes.len() != 1 {
        return Err(Error::Parameter("functional runs take exactly one size".into()));
    }
    let opts = cfg.functional.clone().unwrap_or_default();
    let mut spec = FunctionalSpec::new(model.clone(), cfg.sizes[0].clone(), cfg.replicates);
    spec.frozen_pasts = frozen_or(cfg, Vec::new());
    spec.base_seed = cfg.seeds.base;
    spec.threads = cfg.threads;
    spec.grid = opts.grid.clone();
    spec.blocks = opts.blocks.clone();
    if let Some(t) = opts.rel_tol {
        spec.rel_tol = t;
    }
    let report = run_functional_fdd(&spec)?;
    let mut verdict = report.verdict;
    let mut summary = to_value(&report);
    if let Some(levels) = opts.tightness_levels {
        let t = tightness_moment_probe(&TightnessSpec {
            model: model.clone(),
            size: cfg.sizes[0].clone(),
            replicates: cfg.replicates,
            pairs: dyadic_pairs(model.dim, levels),
            base_seed: cfg.seeds.base,
            threads: cfg.threads,
        })?;
        if !t.non_increasing {
            verdict = Verdict::Fail;
        }
        summary["tightness"] = to_value(&t);
    }
    Ok(Outcome {
        kind: cfg.experiment,
        verdict,
        csv: Some(report.to_csv()),
        extra_csv: Vec::new(),
        summary,
    })
}

fn gh(cfg: &RunConfig, model: FieldModel) -> Result<Outcome> {
    let mut spec = GhSpec::new(model, cfg.sizes.clone(), cfg.replicates);
    spec.frozen_past = frozen_or(cfg, Vec::new()).first().copied();
    spec.base_seed = cfg.seeds.base;
    spec.threads = cfg.threads;
    if let Some(qs) = cfg.gh.as_ref().and_then(|g| g.qs.clone()) {
        spec.qs = qs;
    }
    let report = gh_check(&spec)?;
    Ok(Outcome {
        kind: cfg.experiment,
        verdict: Verdict::from_bool(report.passed()),
        csv: Some(report.to_csv()),
        extra_csv: Vec::new(),
        summary: to_value(&report),
    })
}

/// Default smallest decay ratio of the median residual per size step.
pub const DEFAULT_MIN_DECAY: f64 = 1.3;

fn coboundary(cfg: &RunConfig, model: FieldModel) -> Result<Outcome> {
    let spec = CoboundaryRunSpec {
        model,
        sizes: cfg.sizes.clone(),
        replicates: cfg.replicates,
        base_seed: cfg.seeds.base,
        threads: cfg.threads,
    };
    let report = coboundary_residuals(&spec)?;
    let min_decay = cfg
        .coboundary
        .as_ref()
        .and_then(|c| c.min_decay)
        .unwrap_or(DEFAULT_MIN_DECAY);
    let ok = report.sizes.iter().all(|s| s.bound_violations == 0 && s.max_telescoping_gap < 1e-9)
        && report
            .sizes
            .windows(2)
            .zip(&report.decay_ratios)
            .all(|(w, r)| w[0].residual.median == 0.0 || *r >= min_decay);
    Ok(Outcome {
        kind: cfg.experiment,
        verdict: Verdict::from_bool(ok),
        csv: Some(report.to_csv()),
        extra_csv: Vec::new(),
        summary: to_value(&report),
    })
}

fn counterexample(cfg: &RunConfig, model: FieldModel) -> Result<Outcome> {
    let opts = cfg.counterexample.clone().unwrap_or_default();
    let spec = ProbeSpec {
        model,
        windows: opts.windows.clone(),
        thresholds: opts.thresholds.clone().unwrap_or_else(|| vec![1.0, 4.0, 16.0]),
        frozen_pasts: frozen_or(cfg, vec![0]),
        replicates: cfg.replicates,
        base_seed: cfg.seeds.base,
        threads: cfg.threads,
        control_bound: opts.control_bound.unwrap_or(4.0),
        cell_draws: opts.cell_draws.unwrap_or(100_000),
        mc_windows: opts.mc_windows.clone(),
    };
    let report = counterexample_probe(&spec)?;
    let ok = report.non_decreasing
        && report.control_zero
        && report.cell_checks.iter().all(|c| c.z.abs() <= 3.0);
    Ok(Outcome {
        kind: cfg.experiment,
        verdict: Verdict::from_bool(ok),
        csv: Some(report.to_csv()),
        extra_csv: Vec::new(),
        summary: to_value(&report),
    })
}

/// Incomparable anchor pairs `(-e_i, -e_j)` for `i < j`.
fn commuting_pairs(dim: usize) -> Vec<(IndexVec, IndexVec)> {
    let mut out = Vec::new();
    for i in 0..dim {
        for j in i + 1..dim {
            let mut u = IndexVec::zeros(dim);
            u.set(i, -1);
            let mut a = IndexVec::zeros(dim);
            a.set(j, -1);
            out.push((u, a));
        }
    }
    out
}

pub const VERIFY_CSV_HEADER: [&str; 6] = ["check", "anchor_u", "anchor_a", "max_deviation", "violations", "pass"];

fn verify(cfg: &RunConfig, model: FieldModel) -> Result<Outcome> {
    let v = cfg.verify.clone().unwrap_or_default();
    let mut opts = VerifyOptions::default();
    if let Some(t) = v.tol {
        opts.tol = t;
    }
    if let Some(a) = v.arithmetic {
        opts.arithmetic = a;
    }
    if let Some(c) = v.cutoff {
        opts.cutoff = c as u128;
    }
    let mut reports: Vec<(String, String, VerificationReport)> = Vec::new();
    reports.push((String::new(), String::new(), verify_ortho(&model, None, &opts)?));
    let x0 = FootprintFunctional::from_model(&model, &IndexVec::zeros(model.dim))?;
    for (u, a) in commuting_pairs(model.dim) {
        let r = verify_commuting(&x0, &u, &a, &opts)?;
        reports.push((u.to_string(), a.to_string(), r));
    }
    let mut t = CsvTable::new(&VERIFY_CSV_HEADER);
    for (u, a, r) in &reports {
        t.push(vec![
            r.check.clone(),
            u.clone(),
            a.clone(),
            r.max_deviation_exact.clone().unwrap_or_else(|| csv_num(r.max_deviation)),
            r.violations.to_string(),
            r.pass.to_string(),
        ]);
    }
    let verdict = Verdict::from_bool(reports.iter().all(|r| r.2.pass));
    let summary = json!({
        "verdict": verdict,
        "reports": reports.iter().map(|r| to_value(&r.2)).collect::<Vec<_>>(),
    });
    Ok(Outcome {
        kind: cfg.experiment,
        verdict,
        csv: Some(t.render()),
        extra_csv: Vec::new(),
        summary,
    })
}

pub const CONDITIONS_CSV_HEADER: [&str; 3] = ["condition", "n", "value"];

fn conditions(cfg: &RunConfig, model: FieldModel) -> Result<Outcome> {
    let opts = cfg.conditions.clone().unwrap_or_default();
    let n_max = opts.n_max.unwrap_or(8);
    let f = opts.functional.unwrap_or(MomentFunctional::Plain);
    let mut summary = json!({});
    let mut ok = true;
    let mut t = CsvTable::new(&CONDITIONS_CSV_HEADER);
    let scan = match &model.field {
        FieldKind::Linear { kernel } => Some(("lin", check_lin(kernel, n_max)?)),
        FieldKind::Volterra { coeffs } => Some(("volt", check_volt(coeffs, n_max)?)),
        _ => None,
    };
    if let Some((name, s)) = scan {
        ok &= s.stabilized_at.is_some();
        t.push(vec![name.into(), "sup".into(), csv_num(s.sup)]);
        summary[name] = to_value(&s);
    }
    if model.field != FieldKind::Zero && !matches!(model.field, FieldKind::UField { .. }) {
        let grid = check_con1(&model, n_max, &f)?;
        ok &= grid.stabilized;
        for c in &grid.cells {
            t.push(vec!["con1".into(), c.n.to_string(), csv_num(c.moment)]);
        }
        summary["con1"] = to_value(&grid);
    }
    if let Some(e) = moment_evidence(&model)? {
        ok &= !e.diverges;
        for (n, s) in e.checkpoints.iter().zip(&e.partial_sums) {
            t.push(vec!["moment-series".into(), n.to_string(), csv_num(*s)]);
        }
        summary["moment_evidence"] = to_value(&e);
    }
    let verdict = Verdict::from_bool(ok);
    summary["verdict"] = to_value(&verdict);
    Ok(Outcome {
        kind: cfg.experiment,
        verdict,
        csv: Some(t.render()),
        extra_csv: Vec::new(),
        summary,
    })
}

/// Run the experiment a config describes, without writing anything.
pub fn execute(cfg: &RunConfig) -> Result<Outcome> {
    let model = FieldModel::load(&cfg.model)?;
    match cfg.experiment {
        ExperimentKind::CltAnnealed | ExperimentKind::CltQuenched => clt(cfg, model),
        ExperimentKind::Functional => functional(cfg, model),
        ExperimentKind::GhCheck => gh(cfg, model),
        ExperimentKind::Coboundary => coboundary(cfg, model),
        ExperimentKind::Counterexample => counterexample(cfg, model),
        ExperimentKind::VerifyStructure => verify(cfg, model),
        ExperimentKind::CheckConditions => conditions(cfg, model),
    }
}

/// Write `contents` to `path` through a temporary file and a rename.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    std::fs::write(&tmp, contents).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// SHA-256 of the canonical config, in hex.
pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    let digest = Sha256::digest(cfg.to_canonical()?.as_bytes());
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Run, write results under `cfg.out` and finish with the manifest.
pub fn run(cfg: &RunConfig) -> Result<(Outcome, RunManifest)> {
    let start = Instant::now();
    let outcome = execute(cfg)?;
    let mut outputs = Vec::new();
    let mut write = |rel: &Path, text: &str| -> Result<()> {
        write_atomic(&cfg.out.join(rel), text)?;
        outputs.push(rel.display().to_string());
        Ok(())
    };
    if cfg.format == OutputFormat::Csv {
        if let Some(csv) = &outcome.csv {
            write(Path::new(&format!("{}.csv", outcome.kind.as_str())), csv)?;
        }
        for (rel, text) in &outcome.extra_csv {
            write(rel, text)?;
        }
    }
    let mut summary = json!({
        "experiment": outcome.kind.as_str(),
        "verdict": outcome.verdict,
        "report": outcome.summary.clone(),
    });
    if cfg.format == OutputFormat::Json {
        if let Some(csv) = &outcome.csv {
            summary["table"] = Value::String(csv.clone());
        }
    }
    let text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    write(Path::new(SUMMARY_FILE), &format!("{text}\n"))?;
    let manifest = RunManifest {
        config_hash: config_hash(cfg)?,
        version: env!("CARGO_PKG_VERSION").to_string(),
        platform: format!("{}-{}", std::env::consts::OS, std::env::consts::ARCH),
        experiment: outcome.kind.as_str().to_string(),
        verdict: outcome.verdict,
        outputs,
        wall_clock_secs: start.elapsed().as_secs_f64(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    write_atomic(&cfg.out.join(MANIFEST_FILE), &format!("{text}\n"))?;
    Ok((outcome, manifest))
}

/// Process exit code: 0 when every verdict passes, 2 on a statistical
/// failure, 1 on an execution error.
pub fn exit_code(result: &Result<(Outcome, RunManifest)>) -> i32 {
    match result {
        Ok((o, _)) if o.verdict.passed() => 0,
        Ok(_) => 2,
        Err(_) => 1,
    }
}
