use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io;
use crate::metrics::{psnr, rmse_voxel, ssim};

use super::manifest::SampleManifest;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalStatus {
    Ok,
    /// No prediction file for this sample.
    Missing,
    /// Prediction present but unreadable or mis-shaped.
    Invalid,
}

impl EvalStatus {
    fn as_str(self) -> &'static str {
        match self {
            EvalStatus::Ok => "ok",
            EvalStatus::Missing => "missing",
            EvalStatus::Invalid => "invalid",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub id: String,
    pub status: EvalStatus,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub rmse: Option<f64>,
    pub detail: Option<String>,
}

#[derive(Debug, Clone)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    (n > 0).then(|| sum / n as f64)
}

fn fmt(v: Option<f64>) -> String {
    match v {
        Some(x) if x == f64::INFINITY => "inf".to_string(),
        Some(x) => format!("{x:.6}"),
        None => String::new(),
    }
}

impl EvalReport {
    /// Means over rows with status `ok`: `(psnr, ssim, rmse)`.
    pub fn means(&self) -> (Option<f64>, Option<f64>, Option<f64>) {
        let ok = || self.rows.iter().filter(|r| r.status == EvalStatus::Ok);
        (mean(ok().filter_map(|r| r.psnr)), mean(ok().filter_map(|r| r.ssim)), mean(ok().filter_map(|r| r.rmse)))
    }

    pub fn incomplete(&self) -> usize {
        self.rows.iter().filter(|r| r.status != EvalStatus::Ok).count()
    }

    /// `sample_id,status,psnr,ssim,rmse` per sample, then a `mean` row when at
    /// least one sample was scored. PSNR of identical frames prints as `inf`.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let csv_err = |e: csv::Error| Error::format("CSV", e.to_string());
        wr.write_record(["sample_id", "status", "psnr", "ssim", "rmse"]).map_err(csv_err)?;
        for r in &self.rows {
            wr.write_record([r.id.clone(), r.status.as_str().into(), fmt(r.psnr), fmt(r.ssim), fmt(r.rmse)])
                .map_err(csv_err)?;
        }
        if self.rows.iter().any(|r| r.status == EvalStatus::Ok) {
            let (p, s, e) = self.means();
            wr.write_record(["mean".into(), "ok".into(), fmt(p), fmt(s), fmt(e)]).map_err(csv_err)?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Scores `<predictions>/<id>.pgm` against the sharp frame and
/// `<predictions>/<id>.vox` against the clean voxel grid of each sample.
/// Manifest paths resolve against `root`.
pub fn run_eval(manifests: &[SampleManifest], root: &Path, predictions: &Path) -> Result<EvalReport> {
    let mut rows = Vec::with_capacity(manifests.len());
    for m in manifests {
        let frame_path = predictions.join(format!("{}.pgm", m.id));
        let vox_path = predictions.join(format!("{}.vox", m.id));
        let truth_frame = io::read_pgm_file(root.join(&m.sharp))?;
        let truth_vox = io::read_voxel_file(root.join(&m.voxels_clean))?;
        let mut row =
            EvalRow { id: m.id.clone(), status: EvalStatus::Ok, psnr: None, ssim: None, rmse: None, detail: None };
        if !frame_path.is_file() || !vox_path.is_file() {
            row.status = EvalStatus::Missing;
            rows.push(row);
            continue;
        }
        let scored = (|| -> Result<(f64, f64, f64)> {
            let pred = io::read_pgm_file(&frame_path)?;
            let vox = io::read_voxel_file(&vox_path)?;
            Ok((psnr(&pred, &truth_frame, 1.0)?, ssim(&pred, &truth_frame)?, rmse_voxel(&vox, &truth_vox)?))
        })();
        match scored {
            Ok((p, s, e)) => {
                row.psnr = Some(p);
                row.ssim = Some(s);
                row.rmse = Some(e);
            }
            Err(e) => {
                row.status = EvalStatus::Invalid;
                row.detail = Some(e.to_string());
            }
        }
        rows.push(row);
    }
    Ok(EvalReport { rows })
}
