//! CSV reports and attention heatmaps.

use std::path::Path;

use serde::{Deserialize, Serialize};
use stylebind_core::evaluation::{AttentionReport, MetricReport};
use stylebind_core::personalization::LossRow;

use crate::error::{CliError, Result};
use crate::pnm;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub checkpoint_id: String,
    pub step: usize,
    pub style_id: String,
    pub fid: f64,
    pub kid_x1000: f64,
    pub clip_score: Option<f64>,
    pub n_generated: usize,
    pub n_reference: usize,
}

impl From<&MetricReport> for MetricRow {
    fn from(r: &MetricReport) -> Self {
        MetricRow {
            checkpoint_id: r.checkpoint_id.clone(),
            step: r.step,
            style_id: r.style_id.clone(),
            fid: r.fid,
            kid_x1000: r.kid * 1000.0,
            clip_score: r.clip_score,
            n_generated: r.n_generated,
            n_reference: r.n_reference,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossCsvRow {
    pub step: usize,
    pub total_loss: f64,
    pub styleref_term: f64,
    pub aux_term: f64,
    pub selected_dataset: Option<usize>,
}

impl From<&LossRow> for LossCsvRow {
    fn from(r: &LossRow) -> Self {
        LossCsvRow { step: r.step, total_loss: r.total, styleref_term: r.styleref, aux_term: r.aux, selected_dataset: r.selected }
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    csv::Reader::from_reader(f)
        .deserialize()
        .map(|r| r.map_err(|e| CliError::Data(format!("{}: {e}", path.display()))))
        .collect()
}

pub fn write_metrics(path: &Path, reports: &[MetricReport]) -> Result<()> {
    write_csv(path, &reports.iter().map(MetricRow::from).collect::<Vec<_>>())
}

pub fn write_loss_trace(path: &Path, trace: &[LossRow]) -> Result<()> {
    write_csv(path, &trace.iter().map(LossCsvRow::from).collect::<Vec<_>>())
}

/// 8x8 map scaled to `[0, 1]` by its maximum and enlarged to 32x32.
pub fn heatmap(map: &[f64]) -> Vec<f64> {
    let max = map.iter().copied().fold(0.0, f64::max);
    let scale = if max > 0.0 { 1.0 / max } else { 0.0 };
    (0..32 * 32).map(|i| map[(i / 32 / 4) * 8 + (i % 32) / 4] * scale).collect()
}

/// Writes one heatmap per token as `<prefix>-<k>-<word>.pgm` plus a TSV of
/// person-region fractions when the report has them.
pub fn write_attention(dir: &Path, prefix: &str, rep: &AttentionReport) -> Result<()> {
    for (k, word) in rep.tokens.iter().enumerate() {
        let name: String = word.chars().filter(char::is_ascii_alphanumeric).collect();
        let name = if name.is_empty() { "null".to_string() } else { name };
        pnm::write_pgm(&dir.join(format!("{prefix}-{k}-{name}.pgm")), &heatmap(&rep.mean_map(k)), 32, 32)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metrics_csv_header_and_scaling() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("metrics.csv");
        let r = MetricReport {
            checkpoint_id: "run/step-000010".into(),
            step: 10,
            style_id: "pixelation".into(),
            prompt_set_id: "eval-96".into(),
            fid: 1.5,
            kid: 0.002,
            clip_score: None,
            n_generated: 6,
            n_reference: 20,
        };
        write_metrics(&p, &[r]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "checkpoint_id,step,style_id,fid,kid_x1000,clip_score,n_generated,n_reference"
        );
        let rows: Vec<MetricRow> = read_csv(&p).unwrap();
        assert_eq!(rows[0].kid_x1000, 2.0);
        assert_eq!(rows[0].clip_score, None);
    }

    #[test]
    fn loss_trace_columns() {
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("loss.csv");
        let row = LossRow { step: 1, total: 0.5, styleref: 0.3, aux: 0.2, selected: Some(1) };
        write_loss_trace(&p, &[row]).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text, "step,total_loss,styleref_term,aux_term,selected_dataset\n1,0.5,0.3,0.2,1\n");
    }

    #[test]
    fn heatmap_is_blocky_and_normalized() {
        let mut m = vec![0.0; 64];
        m[9] = 2.0;
        let h = heatmap(&m);
        assert_eq!(h[4 * 32 + 4], 1.0);
        assert_eq!(h[7 * 32 + 7], 1.0);
        assert_eq!(h[8 * 32 + 8], 0.0);
    }
}
