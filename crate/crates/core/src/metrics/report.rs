//! Serialized metric reports: JSON summaries and per-pair CSV rows.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Val,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Split::Val => write!(f, "val"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// One evaluated run on one split.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricReport {
    pub split: Split,
    pub ssim_mean: f64,
    pub ssim_std: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ms_ssim_mean: Option<f64>,
    /// Feature distance between the transformed images and the target domain.
    pub fid: f64,
    /// Feature distance between the untransformed images and the target
    /// domain, for reference.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fid_original: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dice_glom_pix: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dice_podo_pix: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dice_podo_obj: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub accuracy: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub macro_f1: Option<f64>,
}

impl MetricReport {
    /// Checks every present score against its valid range.
    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| -> Result<()> {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Numeric(format!("{name} = {v} outside [0, 1]")));
            }
            Ok(())
        };
        if !(-1.0..=1.0).contains(&self.ssim_mean) {
            return Err(Error::Numeric(format!("ssim_mean = {} outside [-1, 1]", self.ssim_mean)));
        }
        if self.ssim_std < 0.0 {
            return Err(Error::Numeric("ssim_std negative".into()));
        }
        if let Some(v) = self.ms_ssim_mean {
            unit("ms_ssim_mean", v)?;
        }
        if self.fid < -1e-3 {
            return Err(Error::Numeric(format!("fid = {} below regularization slack", self.fid)));
        }
        for (name, v) in [
            ("dice_glom_pix", self.dice_glom_pix),
            ("dice_podo_pix", self.dice_podo_pix),
            ("dice_podo_obj", self.dice_podo_obj),
            ("accuracy", self.accuracy),
            ("macro_f1", self.macro_f1),
        ] {
            if let Some(v) = v {
                unit(name, v)?;
            }
        }
        Ok(())
    }

    pub fn save_json<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        self.validate()?;
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_json<P: AsRef<Path>>(path: P) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let report: Self = serde_json::from_str(&text)?;
        report.validate()?;
        Ok(report)
    }
}

/// One image pair in the per-pair CSV. Optional columns serialize as empty
/// fields so every row has the same width.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairRecord {
    pub image_id: String,
    pub ssim: f64,
    pub ms_ssim: Option<f64>,
}

/// Writes one row per image pair.
pub fn write_pair_csv<P: AsRef<Path>>(path: P, records: &[PairRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path.as_ref())?;
    for record in records {
        writer.serialize(record)?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads a per-pair CSV back.
pub fn read_pair_csv<P: AsRef<Path>>(path: P) -> Result<Vec<PairRecord>> {
    let mut reader = csv::Reader::from_path(path.as_ref())?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        out.push(row?);
    }
    Ok(out)
}
