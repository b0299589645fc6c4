//! Machine-readable results (JSON + CSV with a stable column order) and the
//! qualitative image grid per scheme: clean input, plain reconstruction,
//! watermarked reconstruction, trigger output before the attack, and the
//! trigger output after every attack.

use crate::error::{Error, Result};
use crate::eval::Thresholds;
use crate::image::Image;
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Pass/fail verdict triple, serialized as "pass"/"fail" strings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Verdicts {
    #[serde(with = "verdict_str")]
    pub fidelity: bool,
    #[serde(with = "verdict_str")]
    pub retrievability: bool,
    #[serde(with = "verdict_str")]
    pub fragility: bool,
}

mod verdict_str {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(if *v { "pass" } else { "fail" })
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        let s = String::deserialize(d)?;
        match s.as_str() {
            "pass" => Ok(true),
            "fail" => Ok(false),
            other => Err(serde::de::Error::custom(format!(
                "verdict must be pass or fail, got {other:?}"
            ))),
        }
    }
}

/// Fragility numbers for one attack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackCell {
    pub ncc: f64,
    /// Clean metric (MSE or IoU) of the attacked model.
    pub clean: f64,
}

/// One evaluated scheme; every verdict is recomputable from the stored
/// metrics and thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeRow {
    pub dataset: String,
    pub model: String,
    pub scheme: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mse_plain: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psnr_plain: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mse_wm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psnr_wm: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou_plain: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iou_wm: Option<f64>,
    pub ncc_auth: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ftune1: Option<AttackCell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ftune5: Option<AttackCell>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overwrite: Option<AttackCell>,
    pub verdicts: Verdicts,
}

impl SchemeRow {
    fn clean_plain(&self) -> f64 {
        self.mse_plain.or(self.iou_plain).unwrap_or(f64::NAN)
    }

    fn clean_wm(&self) -> f64 {
        self.mse_wm.or(self.iou_wm).unwrap_or(f64::NAN)
    }

    pub fn attack_cells(&self) -> impl Iterator<Item = (&'static str, &AttackCell)> {
        [
            ("ftune1", self.ftune1.as_ref()),
            ("ftune5", self.ftune5.as_ref()),
            ("overwrite", self.overwrite.as_ref()),
        ]
        .into_iter()
        .filter_map(|(n, c)| c.map(|c| (n, c)))
    }

    /// Re-derive the verdict triple from the stored metrics.
    pub fn recompute_verdicts(&self, thresholds: &Thresholds) -> Verdicts {
        let fidelity = (self.clean_plain() - self.clean_wm()).abs() < thresholds.fidelity_gap;
        let retrievability = self.ncc_auth > thresholds.ncc_retrieve;
        let mut fragility = true;
        let mut any = false;
        for (_, cell) in self.attack_cells() {
            any = true;
            let broken = cell.ncc < thresholds.ncc_fragile;
            let clean_ok = (cell.clean - self.clean_wm()).abs() < thresholds.fidelity_gap;
            fragility &= broken && clean_ok;
        }
        Verdicts {
            fidelity,
            retrievability,
            fragility: fragility && any,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsFile {
    pub thresholds: Thresholds,
    pub rows: Vec<SchemeRow>,
}

const CSV_HEADER: &str = "dataset,model,scheme,mse_plain,psnr_plain,mse_wm,psnr_wm,\
ncc_auth,ncc_ftune1,ncc_ftune5,ncc_overwrite,fidelity,retrievability,fragility,\
iou_plain,iou_wm,clean_ftune1,clean_ftune5,clean_overwrite";

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

fn csv_cell(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn verdict(v: bool) -> &'static str {
    if v {
        "pass"
    } else {
        "fail"
    }
}

/// Write `results.json` and `results.csv` into `dir`.
pub fn write_results(results: &ResultsFile, dir: &Path) -> Result<()> {
    if results.rows.is_empty() {
        return Err(Error::InvalidArgument("no result rows to write".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json_path = dir.join("results.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(results)?)
        .map_err(|e| Error::io(&json_path, e))?;

    let mut csv = String::from(CSV_HEADER);
    csv.push('\n');
    for r in &results.rows {
        let cells = [
            csv_cell(&r.dataset),
            csv_cell(&r.model),
            csv_cell(&r.scheme),
            fmt_opt(r.mse_plain),
            fmt_opt(r.psnr_plain),
            fmt_opt(r.mse_wm),
            fmt_opt(r.psnr_wm),
            format!("{:.6}", r.ncc_auth),
            fmt_opt(r.ftune1.map(|c| c.ncc)),
            fmt_opt(r.ftune5.map(|c| c.ncc)),
            fmt_opt(r.overwrite.map(|c| c.ncc)),
            verdict(r.verdicts.fidelity).to_string(),
            verdict(r.verdicts.retrievability).to_string(),
            verdict(r.verdicts.fragility).to_string(),
            fmt_opt(r.iou_plain),
            fmt_opt(r.iou_wm),
            fmt_opt(r.ftune1.map(|c| c.clean)),
            fmt_opt(r.ftune5.map(|c| c.clean)),
            fmt_opt(r.overwrite.map(|c| c.clean)),
        ];
        csv.push_str(&cells.join(","));
        csv.push('\n');
    }
    let csv_path = dir.join("results.csv");
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))
}

pub fn read_results(dir: &Path) -> Result<ResultsFile> {
    let path = dir.join("results.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn to_rgb(img: &Image) -> Image {
    if img.channels() == 3 {
        return img.clone();
    }
    let (_, h, w) = img.shape();
    let mut data = Array3::zeros((3, h, w));
    for ch in 0..3 {
        data.slice_mut(ndarray::s![ch, .., ..])
            .assign(&img.data().index_axis(ndarray::Axis(0), 0));
    }
    Image::new(data).expect("copied pixels stay in range")
}

/// Compose a grid PNG: one row per sample, one column per stage. Mask images
/// are rendered as grayscale. Cells are separated by a 2px white gutter.
pub fn render_grid(columns: &[Vec<Image>], path: &Path) -> Result<()> {
    if columns.is_empty() || columns[0].is_empty() {
        return Err(Error::InvalidArgument("empty grid".into()));
    }
    let rows = columns[0].len();
    if columns.iter().any(|c| c.len() != rows) {
        return Err(Error::InvalidArgument("ragged grid columns".into()));
    }
    let (_, h, w) = columns[0][0].shape();
    let gap = 2usize;
    let total_h = rows * h + (rows - 1) * gap;
    let total_w = columns.len() * w + (columns.len() - 1) * gap;
    let mut canvas = Array3::<f32>::ones((3, total_h, total_w));
    for (ci, col) in columns.iter().enumerate() {
        for (ri, img) in col.iter().enumerate() {
            let rgb = to_rgb(img);
            if rgb.shape() != (3, h, w) {
                return Err(Error::ShapeMismatch(format!(
                    "grid cell ({ri},{ci}) has shape {:?}",
                    rgb.shape()
                )));
            }
            let y0 = ri * (h + gap);
            let x0 = ci * (w + gap);
            canvas
                .slice_mut(ndarray::s![.., y0..y0 + h, x0..x0 + w])
                .assign(&rgb.data());
        }
    }
    Image::new(canvas)?.save_png(path)
}
