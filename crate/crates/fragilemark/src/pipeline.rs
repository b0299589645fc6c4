//! End-to-end stages over a run directory.
//!
//! `train` writes the manifest, both checkpoints, histories and the first
//! metrics; `attack` adds attacked checkpoints and fragility metrics;
//! `report` turns stored metrics into results.json / results.csv and the
//! qualitative image grid. Every stage is idempotent at the file level:
//! re-running with identical inputs rewrites identical bytes.
//!
//! Run directory layout:
//!
//! ```text
//! run/
//!   config.toml            resolved copy of the experiment config
//!   manifest.json          trigger manifest (regenerates the auth set)
//!   secret.png             steg secret (steg triggers only)
//!   reference.png          watermark reference image (image watermarks only)
//!   plain.ckpt(.json)      baseline model without the watermark
//!   wm.ckpt(.json)         watermarked model
//!   history_plain.jsonl    epoch records of the baseline run
//!   history.jsonl          epoch records of the embedding run
//!   attacks/<name>.ckpt    attacked models + provenance sidecars
//!   attacks/overwrite.manifest.json   the overwriting pair's manifest
//!   metrics.json           every measured number
//!   results.json/.csv      report output
//!   grids/<scheme>.png     image grid (clean, recons, trigger outputs)
//! ```

use crate::attack::{attack_finetune, attack_overwrite, AttackKind};
use crate::config::ExperimentConfig;
use crate::dataset::{DataKind, PoisonedDataset, TriggerManifest};
use crate::error::{Error, Result};
use crate::eval::{
    self, alpha_sweep, evaluate_fidelity, evaluate_fragility, security_probe, verify_with_auth,
    FidelityOutcome, FragilityOutcome, ProbeTable, SweepInputs, SweepRow, Thresholds,
    VerifyOutcome,
};
use crate::image::Image;
use crate::model::{CheckpointSidecar, Provenance, Task, Unet};
use crate::report::{render_grid, write_results, AttackCell, ResultsFile, SchemeRow, Verdicts};
use crate::steg::default_secret;
use crate::train::{clean_metric, train_downstream, train_immediate, train_plain, History};
use crate::trigger::TriggerKind;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const OUT_ROOT_ENV: &str = "FRAGILEMARK_OUT";

/// Pick the run directory: CLI flag, then config, then `runs/<name>`;
/// relative paths nest under `$FRAGILEMARK_OUT` when it is set.
pub fn resolve_run_dir(cfg: &ExperimentConfig, cli: Option<&Path>) -> PathBuf {
    let base = cli
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| Path::new("runs").join(&cfg.name));
    if base.is_relative() {
        if let Ok(root) = std::env::var(OUT_ROOT_ENV) {
            if !root.is_empty() {
                return PathBuf::from(root).join(base);
            }
        }
    }
    base
}

/// Every measured number of a run; verdicts derive from these.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub dataset: String,
    pub model: String,
    pub scheme: String,
    pub task: Task,
    pub fidelity: FidelityOutcome,
    pub retrievability: VerifyOutcome,
    /// Clean metric of the watermarked model; the fragility baseline.
    pub pre_attack_clean: f64,
    #[serde(default)]
    pub attacks: BTreeMap<String, AttackRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub fragility: FragilityOutcome,
    /// Overwrite only: NCC of the attacked model against the NEW watermark.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duality_ncc: Option<f64>,
}

impl RunMetrics {
    pub fn path(run_dir: &Path) -> PathBuf {
        run_dir.join("metrics.json")
    }

    pub fn load(run_dir: &Path) -> Result<RunMetrics> {
        let path = Self::path(run_dir);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, run_dir: &Path) -> Result<()> {
        let path = Self::path(run_dir);
        std::fs::write(&path, serde_json::to_string_pretty(self)?)
            .map_err(|e| Error::io(&path, e))
    }
}

fn scheme_label(ds: &PoisonedDataset) -> String {
    format!(
        "{}->{}",
        ds.trigger_spec().label(),
        ds.watermark_spec().label()
    )
}

fn dataset_label(cfg: &ExperimentConfig) -> String {
    match cfg.data.kind {
        DataKind::Synthetic => "synthetic".into(),
        DataKind::SyntheticSegmentation => "synthetic-seg".into(),
        DataKind::Folder => format!(
            "folder:{}",
            cfg.data.path.as_deref().unwrap_or("?")
        ),
    }
}

/// Build the poisoned dataset for a config, loading/deriving assets.
/// Asset paths in the returned manifest are run-dir relative.
pub fn build_dataset(cfg: &ExperimentConfig, config_dir: &Path) -> Result<PoisonedDataset> {
    let mut source = cfg.data.clone();
    if let Some(path) = &source.path {
        // anchor folder sources to the config location so the manifest
        // works from anywhere
        let resolved = config_dir.join(path);
        let canonical = std::fs::canonicalize(&resolved)
            .map_err(|e| Error::io(&resolved, e))?;
        source.path = Some(canonical.to_string_lossy().into_owned());
    }
    let data = source.load(config_dir)?;
    let (_, h, w) = data.shape();

    let (secret, secret_path) = if cfg.trigger.kind == TriggerKind::Steg {
        let img = match &cfg.secret {
            Some(rel) => Image::load_png(&config_dir.join(rel))?,
            None => default_secret(h, w),
        };
        (Some(img), Some("secret.png".to_string()))
    } else {
        (None, None)
    };

    let mut watermark = cfg.watermark.clone();
    let reference = if watermark.kind == crate::watermark::WatermarkKind::Image {
        let rel = watermark.image_path.clone().ok_or_else(|| {
            Error::InvalidConfig("watermark.image_path missing".into())
        })?;
        let img = Image::load_png(&config_dir.join(rel))?;
        watermark.image_path = Some("reference.png".into());
        Some(img)
    } else {
        None
    };

    PoisonedDataset::build(
        data,
        source,
        cfg.trigger.clone(),
        watermark,
        cfg.auth_n,
        cfg.seed ^ 0x5eed_0a01,
        secret,
        secret_path,
        reference,
    )
}

pub struct TrainStage {
    pub ds: PoisonedDataset,
    pub plain: Unet<f32>,
    pub watermarked: Unet<f32>,
    pub history_plain: History,
    pub history: History,
    pub metrics: RunMetrics,
}

/// Train the baseline and the watermarked model, evaluate fidelity and
/// retrievability, and persist everything into `run_dir`.
pub fn run_train(cfg: &ExperimentConfig, config_dir: &Path, run_dir: &Path) -> Result<TrainStage> {
    cfg.validate()?;
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let ds = build_dataset(cfg, config_dir)?;

    if let Some(secret) = ds.secret() {
        secret.save_png(&run_dir.join("secret.png"))?;
    }
    if let Some(reference) = ds.reference() {
        reference.save_png(&run_dir.join("reference.png"))?;
    }
    ds.manifest.save(&run_dir.join("manifest.json"))?;
    cfg.save(&run_dir.join("config.toml"))?;

    let desc = cfg.descriptor();
    let train_cfg = cfg.resolved_train();

    let mut plain = Unet::new(desc.clone(), cfg.seed);
    let history_plain = train_plain(&mut plain, &ds.data, &train_cfg)?;
    plain.save(
        &run_dir.join("plain.ckpt"),
        &mut CheckpointSidecar::fresh(),
    )?;
    history_plain.save_jsonl(&run_dir.join("history_plain.jsonl"))?;

    let mut watermarked = Unet::new(desc, cfg.seed);
    let history = match cfg.task {
        Task::Reconstruction => train_immediate(&mut watermarked, &ds, &train_cfg)?,
        Task::Segmentation => train_downstream(&mut watermarked, &ds, &train_cfg)?,
    };
    let mut sidecar = CheckpointSidecar::fresh();
    sidecar.manifest = Some("manifest.json".into());
    watermarked.save(&run_dir.join("wm.ckpt"), &mut sidecar)?;
    history.save_jsonl(&run_dir.join("history.jsonl"))?;

    let auth = ds.auth_set()?;
    let fidelity = evaluate_fidelity(&plain, &watermarked, &ds.data.test, &cfg.thresholds)?;
    let retrievability = verify_with_auth(&watermarked, &auth, &cfg.thresholds)?;
    let pre_attack_clean = clean_metric(&watermarked, &ds.data.test)?;

    let metrics = RunMetrics {
        dataset: dataset_label(cfg),
        model: cfg.model.arch.clone(),
        scheme: scheme_label(&ds),
        task: cfg.task,
        fidelity,
        retrievability,
        pre_attack_clean,
        attacks: BTreeMap::new(),
    };
    metrics.save(run_dir)?;

    Ok(TrainStage {
        ds,
        plain,
        watermarked,
        history_plain,
        history,
        metrics,
    })
}

pub struct AttackStage {
    pub attacked: BTreeMap<String, Unet<f32>>,
    pub metrics: RunMetrics,
}

/// Run the configured attacks against the stored watermarked checkpoint.
/// `only` restricts to a single attack name.
pub fn run_attacks(run_dir: &Path, only: Option<&str>) -> Result<AttackStage> {
    let cfg = ExperimentConfig::load(&run_dir.join("config.toml"))?;
    let manifest = TriggerManifest::load(&run_dir.join("manifest.json"))?;
    let ds = PoisonedDataset::from_manifest(&manifest, run_dir)?;
    let (watermarked, wm_sidecar) = Unet::load(&run_dir.join("wm.ckpt"), Some(cfg.task))?;
    let train_cfg = cfg.resolved_train();
    let auth = ds.auth_set()?;
    let pre_attack_clean = clean_metric(&watermarked, &ds.data.test)?;
    let mut metrics = RunMetrics::load(run_dir)?;

    let attacks_dir = run_dir.join("attacks");
    std::fs::create_dir_all(&attacks_dir).map_err(|e| Error::io(&attacks_dir, e))?;

    let mut attacked_models = BTreeMap::new();
    for spec in &cfg.attacks {
        let name = spec.name();
        if let Some(filter) = only {
            if name != filter {
                continue;
            }
        }
        let (attacked, duality_ncc) = match spec.kind {
            AttackKind::Ftune => {
                let (model, _) = attack_finetune(
                    &watermarked,
                    &ds.data,
                    &ds.manifest.data_source,
                    spec,
                    &train_cfg,
                )?;
                (model, None)
            }
            AttackKind::Overwrite => {
                let (model, new_ds, _) = attack_overwrite(
                    &watermarked,
                    &ds.data,
                    &ds.manifest.data_source,
                    spec,
                    &train_cfg,
                    ds.trigger_spec(),
                    manifest.auth_ids.len(),
                    ds.secret().cloned(),
                    ds.reference().cloned(),
                )?;
                let new_auth = new_ds.auth_set()?;
                let duality = verify_with_auth(&model, &new_auth, &cfg.thresholds)?;
                let mut new_manifest = new_ds.manifest.clone();
                if let Some(secret) = new_ds.secret() {
                    secret.save_png(&attacks_dir.join("overwrite.secret.png"))?;
                    new_manifest.secret_path = Some("overwrite.secret.png".into());
                }
                new_manifest.save(&attacks_dir.join("overwrite.manifest.json"))?;
                (model, Some(duality.ncc))
            }
        };
        let mut sidecar = CheckpointSidecar::fresh();
        sidecar.manifest = Some("../manifest.json".into());
        sidecar.provenance = Some(Provenance {
            source_hash: wm_sidecar.sha256.clone(),
            attack: serde_json::to_value(spec)?,
        });
        attacked.save(&attacks_dir.join(format!("{name}.ckpt")), &mut sidecar)?;

        let fragility = evaluate_fragility(
            &attacked,
            &auth,
            &ds.data.test,
            pre_attack_clean,
            &cfg.thresholds,
        )?;
        metrics.attacks.insert(
            name.clone(),
            AttackRecord {
                fragility,
                duality_ncc,
            },
        );
        attacked_models.insert(name, attacked);
    }
    metrics.save(run_dir)?;
    Ok(AttackStage {
        attacked: attacked_models,
        metrics,
    })
}

/// Verify a checkpoint against a manifest; the exit-code contract is
/// 0 = verified, 1 = not verified, 2 = error.
pub fn run_verify(
    checkpoint: &Path,
    manifest_path: &Path,
    thresholds: &Thresholds,
) -> Result<VerifyOutcome> {
    let manifest = TriggerManifest::load(manifest_path)?;
    let (model, sidecar) = Unet::load(checkpoint, None)?;
    if sidecar.descriptor.task != expected_task(&manifest) {
        return Err(Error::DescriptorMismatch(format!(
            "manifest is a {:?} scheme but checkpoint is {:?}",
            expected_task(&manifest),
            sidecar.descriptor.task
        )));
    }
    let base_dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    eval::verify(&model, &manifest, base_dir, thresholds)
}

fn expected_task(manifest: &TriggerManifest) -> Task {
    if manifest.watermark.kind.is_mask() {
        Task::Segmentation
    } else {
        Task::Reconstruction
    }
}

/// Probe a run's watermarked model with the fake-trigger grid.
pub fn run_probe(run_dir: &Path) -> Result<ProbeTable> {
    let cfg = ExperimentConfig::load(&run_dir.join("config.toml"))?;
    let manifest = TriggerManifest::load(&run_dir.join("manifest.json"))?;
    let ds = PoisonedDataset::from_manifest(&manifest, run_dir)?;
    let (model, _) = Unet::load(&run_dir.join("wm.ckpt"), Some(cfg.task))?;
    let table = security_probe(&model, &ds, &cfg.thresholds)?;
    let path = run_dir.join("probe.json");
    std::fs::write(&path, serde_json::to_string_pretty(&table)?)
        .map_err(|e| Error::io(&path, e))?;
    Ok(table)
}

/// Train one model per embedding strength and record the sweep table.
pub fn run_sweep(
    cfg: &ExperimentConfig,
    config_dir: &Path,
    alphas: &[f64],
    run_dir: &Path,
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    std::fs::create_dir_all(run_dir).map_err(|e| Error::io(run_dir, e))?;
    let ds = build_dataset(cfg, config_dir)?;
    let desc = cfg.descriptor();
    let train_cfg = cfg.resolved_train();
    let rows = alpha_sweep(
        &SweepInputs {
            ds: &ds,
            desc: &desc,
            train: &train_cfg,
            attacks: &cfg.attacks,
            thresholds: &cfg.thresholds,
        },
        alphas,
    )?;
    let json_path = run_dir.join("sweep.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&rows)?)
        .map_err(|e| Error::io(&json_path, e))?;
    let mut csv = String::from("alpha,ncc_auth,retrievable,ncc_ftune1,ncc_ftune5,ncc_overwrite\n");
    for row in &rows {
        let find = |n: &str| {
            row.attacks
                .iter()
                .find(|a| a.name == n)
                .map(|a| format!("{:.6}", a.ncc))
                .unwrap_or_default()
        };
        csv.push_str(&format!(
            "{},{:.6},{},{},{},{}\n",
            row.alpha,
            row.retrievability_ncc,
            if row.retrievable { "pass" } else { "fail" },
            find("ftune1"),
            find("ftune5"),
            find("overwrite"),
        ));
    }
    let csv_path = run_dir.join("sweep.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    Ok(rows)
}

/// Assemble a result row from stored metrics.
pub fn scheme_row(metrics: &RunMetrics, thresholds: &Thresholds) -> SchemeRow {
    let cell = |name: &str| -> Option<AttackCell> {
        metrics.attacks.get(name).map(|a| AttackCell {
            ncc: a.fragility.ncc,
            clean: a.fragility.attacked_clean,
        })
    };
    let mut row = SchemeRow {
        dataset: metrics.dataset.clone(),
        model: metrics.model.clone(),
        scheme: metrics.scheme.clone(),
        mse_plain: metrics.fidelity.plain.mse,
        psnr_plain: metrics.fidelity.plain.psnr,
        mse_wm: metrics.fidelity.watermarked.mse,
        psnr_wm: metrics.fidelity.watermarked.psnr,
        iou_plain: metrics.fidelity.plain.iou,
        iou_wm: metrics.fidelity.watermarked.iou,
        ncc_auth: metrics.retrievability.ncc,
        ftune1: cell("ftune1"),
        ftune5: cell("ftune5"),
        overwrite: cell("overwrite"),
        verdicts: Verdicts {
            fidelity: false,
            retrievability: false,
            fragility: false,
        },
    };
    row.verdicts = row.recompute_verdicts(thresholds);
    row
}

/// Write results.json/results.csv and the image grid from stored metrics
/// and checkpoints.
pub fn run_report(run_dir: &Path) -> Result<ResultsFile> {
    let cfg = ExperimentConfig::load(&run_dir.join("config.toml"))?;
    let metrics = RunMetrics::load(run_dir)?;
    let results = ResultsFile {
        thresholds: cfg.thresholds,
        rows: vec![scheme_row(&metrics, &cfg.thresholds)],
    };
    write_results(&results, run_dir)?;

    let manifest = TriggerManifest::load(&run_dir.join("manifest.json"))?;
    let ds = PoisonedDataset::from_manifest(&manifest, run_dir)?;
    let (plain, _) = Unet::load(&run_dir.join("plain.ckpt"), Some(cfg.task))?;
    let (watermarked, _) = Unet::load(&run_dir.join("wm.ckpt"), Some(cfg.task))?;

    let n = manifest.auth_ids.len().min(4);
    let auth = ds.auth_set()?;
    let cleans: Vec<Image> = manifest.auth_ids[..n]
        .iter()
        .map(|id| {
            ds.data
                .test
                .iter()
                .find(|s| &s.id == id)
                .map(|s| s.image.clone())
                .ok_or_else(|| Error::InvalidArgument(format!("auth id {id} missing")))
        })
        .collect::<Result<_>>()?;
    let triggers: Vec<Image> = auth[..n].iter().map(|(i, _)| i.clone()).collect();

    let mut columns = vec![
        cleans.clone(),
        plain.predict_batch(&cleans)?,
        watermarked.predict_batch(&cleans)?,
        watermarked.predict_batch(&triggers)?,
    ];
    for name in metrics.attacks.keys() {
        let path = run_dir.join("attacks").join(format!("{name}.ckpt"));
        if path.exists() {
            let (attacked, _) = Unet::load(&path, Some(cfg.task))?;
            columns.push(attacked.predict_batch(&triggers)?);
        }
    }
    let grid_name: String = metrics
        .scheme
        .chars()
        .map(|c| if c.is_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    render_grid(&columns, &run_dir.join("grids").join(format!("{grid_name}.png")))?;
    Ok(results)
}
