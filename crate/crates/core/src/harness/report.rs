use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use super::train::{argmax_map, entropy_maps, predict_scenes, MetricsRecord};
use crate::data::{export_image_ppm, export_pgm, export_ppm, LabelMap, Palette, SyntheticScene};
use crate::error::{bail, Result};
use crate::losses::LossBreakdown;
use crate::metrics::{write_eval_csv, EvalRow};
use crate::model::SegNetConfig;
use crate::teacher_student::ParameterStore;
use crate::tensorkit::Tensor;

pub const SMOOTHING_WINDOW: usize = 100;

/// Trailing moving average; the first `window − 1` entries average what is
/// available. The window is clamped to the series length.
pub fn smooth(series: &[f64], window: usize) -> Vec<f64> {
    let w = window.clamp(1, series.len().max(1));
    let mut out = Vec::with_capacity(series.len());
    let mut acc = 0.0;
    for (i, &v) in series.iter().enumerate() {
        acc += v;
        if i >= w {
            acc -= series[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

/// Shape statistics of the smoothed loss curves.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceStats {
    pub window: usize,
    pub total_at_200: f64,
    pub total_end: f64,
    /// Per-iteration slope of smoothed L_s over the first full window.
    pub supervised_initial_slope: f64,
    /// Per-iteration slope of smoothed L_s over the last window.
    pub supervised_final_slope: f64,
}

impl ConvergenceStats {
    pub fn total_ratio(&self) -> f64 {
        self.total_end / self.total_at_200
    }

    pub fn slope_ratio(&self) -> f64 {
        self.supervised_final_slope.abs() / self.supervised_initial_slope.abs()
    }
}

pub fn convergence_stats(records: &[MetricsRecord], window: usize) -> Result<ConvergenceStats> {
    let n = records.len();
    if n < 200 + window || n < 3 * window {
        bail!(Argument, "{n} iterations are too few for window {window} statistics");
    }
    let total = smooth(&records.iter().map(|r| r.losses.total).collect::<Vec<_>>(), window);
    let sup = smooth(&records.iter().map(|r| r.losses.supervised).collect::<Vec<_>>(), window);
    let first = window - 1;
    Ok(ConvergenceStats {
        window,
        total_at_200: total[200],
        total_end: total[n - 1],
        supervised_initial_slope: (sup[first + window] - sup[first]) / window as f64,
        supervised_final_slope: (sup[n - 1] - sup[n - 1 - window]) / window as f64,
    })
}

pub fn write_loss_csv<W: Write>(mut w: W, records: &[MetricsRecord]) -> Result<()> {
    writeln!(w, "iter,L_s,L_u,L_c,L_total,N_valid")?;
    for r in records {
        let l = &r.losses;
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.iteration, l.supervised, l.unsupervised, l.contrastive, l.total, l.n_valid
        )?;
    }
    Ok(())
}

/// Reads a loss CSV back into records (learning rate and timing are not
/// stored and come back as zero).
pub fn read_loss_csv<R: BufRead>(r: R) -> Result<Vec<MetricsRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let num = |j: usize| -> Result<f64> {
            match f.get(j).and_then(|v| v.parse().ok()) {
                Some(v) => Ok(v),
                None => bail!(Format, "loss CSV line {}: {line:?}", i + 1),
            }
        };
        if f.len() != 6 {
            bail!(Format, "loss CSV line {}: expected 6 fields", i + 1);
        }
        out.push(MetricsRecord {
            iteration: num(0)? as usize,
            lr: 0.0,
            losses: LossBreakdown {
                supervised: num(1)?,
                unsupervised: num(2)?,
                contrastive: num(3)?,
                total: num(4)?,
                n_valid: num(5)? as usize,
                lambda_u: 0.0,
                lambda_c: 0.0,
            },
            eval: None,
            wall_time: 0.0,
        });
    }
    Ok(out)
}

/// Visual material for one evaluation scene.
#[derive(Clone, Debug)]
pub struct Panel {
    pub name: String,
    pub image: Tensor,
    pub truth: LabelMap,
    pub prediction: LabelMap,
    pub entropy: Tensor,
}

/// Predictions and entropy maps for the first `count` scenes.
pub fn build_panels(
    store: &ParameterStore,
    model: &SegNetConfig,
    scenes: &[SyntheticScene],
    count: usize,
) -> Result<Vec<Panel>> {
    let scenes = &scenes[..count.min(scenes.len())];
    let probs = predict_scenes(store, model, scenes)?;
    let entropy = entropy_maps(&probs)?;
    scenes
        .iter()
        .zip(probs.iter().zip(entropy))
        .enumerate()
        .map(|(i, (s, (p, e)))| {
            Ok(Panel {
                name: format!("scene{i:02}"),
                image: s.image.clone(),
                truth: s.labels.clone(),
                prediction: argmax_map(p)?,
                entropy: e,
            })
        })
        .collect()
}

/// Side-by-side RGB strip: image | truth | prediction.
fn panel_strip(p: &Panel, palette: &Palette) -> Result<Vec<u8>> {
    let (h, w) = (p.truth.height(), p.truth.width());
    let pixels = |bytes: Vec<u8>| -> Vec<u8> {
        let skip = bytes.len() - h * w * 3;
        bytes[skip..].to_vec()
    };
    let parts = [
        pixels(export_image_ppm(&p.image)?),
        pixels(export_ppm(&p.truth, palette)),
        pixels(export_ppm(&p.prediction, palette)),
    ];
    let mut out = format!("P6\n{} {}\n255\n", 3 * w, h).into_bytes();
    for y in 0..h {
        for part in &parts {
            out.extend_from_slice(&part[y * w * 3..(y + 1) * w * 3]);
        }
    }
    Ok(out)
}

/// Writes `loss.csv`, `eval.csv`, `smoothed_loss.csv`, `summary.txt` and
/// panel images into `dir`.
pub fn write_report(dir: &Path, records: &[MetricsRecord], panels: &[Panel]) -> Result<()> {
    if records.is_empty() {
        bail!(Argument, "no records to report");
    }
    fs::create_dir_all(dir)?;
    write_loss_csv(BufWriter::new(fs::File::create(dir.join("loss.csv"))?), records)?;

    let rows: Vec<EvalRow> = records
        .iter()
        .filter_map(|r| {
            r.eval.as_ref().map(|e| EvalRow {
                label: format!("iter{}", r.iteration),
                ..e.row.clone()
            })
        })
        .collect();
    if !rows.is_empty() {
        write_eval_csv(BufWriter::new(fs::File::create(dir.join("eval.csv"))?), &rows)?;
    }

    let col = |f: fn(&MetricsRecord) -> f64| smooth(&records.iter().map(f).collect::<Vec<_>>(), SMOOTHING_WINDOW);
    let (st, ss, su, sc) = (
        col(|r| r.losses.total),
        col(|r| r.losses.supervised),
        col(|r| r.losses.unsupervised),
        col(|r| r.losses.contrastive),
    );
    let mut sm = BufWriter::new(fs::File::create(dir.join("smoothed_loss.csv"))?);
    writeln!(sm, "iter,L_total,L_s,L_u,L_c")?;
    for (i, r) in records.iter().enumerate() {
        writeln!(sm, "{},{},{},{},{}", r.iteration, st[i], ss[i], su[i], sc[i])?;
    }
    sm.flush()?;

    let mut summary = String::new();
    let window = SMOOTHING_WINDOW.min(records.len());
    let _ = writeln!(summary, "iterations: {}", records.len());
    let _ = writeln!(summary, "smoothing window: {window}");
    let _ = writeln!(summary, "smoothed L_total start: {:.6}", st[0]);
    let _ = writeln!(summary, "smoothed L_total end: {:.6}", st[st.len() - 1]);
    let _ = writeln!(summary, "smoothed L_s end: {:.6}", ss[ss.len() - 1]);
    if let Ok(c) = convergence_stats(records, SMOOTHING_WINDOW) {
        let _ = writeln!(summary, "smoothed L_total at iteration 200: {:.6}", c.total_at_200);
        let _ = writeln!(summary, "end / iteration-200 ratio: {:.4}", c.total_ratio());
        let _ = writeln!(
            summary,
            "L_s slope initial {:.3e}, final {:.3e}, ratio {:.4}",
            c.supervised_initial_slope,
            c.supervised_final_slope,
            c.slope_ratio()
        );
    }
    if let Some(row) = rows.last() {
        let _ = writeln!(summary, "final mIoU: {:.4}", row.miou);
        let _ = writeln!(summary, "final pixel accuracy: {:.4}", row.pixel_accuracy);
    }
    fs::write(dir.join("summary.txt"), summary)?;

    let palette = Palette::default();
    for p in panels {
        fs::write(dir.join(format!("{}_panel.ppm", p.name)), panel_strip(p, &palette)?)?;
        fs::write(dir.join(format!("{}_entropy.pgm", p.name)), export_pgm(&p.entropy)?)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(i: usize, total: f64) -> MetricsRecord {
        MetricsRecord {
            iteration: i,
            lr: 0.1,
            losses: LossBreakdown::new(total, 0.0, 0.0, 5, 0.5, 0.1),
            eval: None,
            wall_time: 0.0,
        }
    }

    #[test]
    fn smoothing_rules() {
        assert_eq!(smooth(&[4.0], 100), vec![4.0]);
        assert_eq!(smooth(&[1.0, 3.0, 5.0], 2), vec![1.0, 2.0, 4.0]);
        assert_eq!(smooth(&[1.0, 3.0, 5.0], 50), vec![1.0, 2.0, 3.0]);
        let desc: Vec<f64> = (0..500).map(|i| 1.0 / (1.0 + i as f64) + 0.1).collect();
        let s = smooth(&desc, 100);
        assert!(s.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn single_record_report() {
        let dir = tempfile::tempdir().unwrap();
        write_report(dir.path(), &[record(0, 1.5)], &[]).unwrap();
        let csv = fs::read_to_string(dir.path().join("loss.csv")).unwrap();
        assert_eq!(csv, "iter,L_s,L_u,L_c,L_total,N_valid\n0,1.5,0,0,1.5,5\n");
        let back = read_loss_csv(csv.as_bytes()).unwrap();
        assert_eq!(back[0].losses.total, 1.5);
        assert_eq!(back[0].losses.n_valid, 5);
        let sm = fs::read_to_string(dir.path().join("smoothed_loss.csv")).unwrap();
        assert_eq!(sm.lines().count(), 2);
        assert!(write_report(dir.path(), &[], &[]).is_err());
    }

    #[test]
    fn convergence_on_synthetic_curve() {
        let recs: Vec<MetricsRecord> = (0..1000).map(|i| record(i, 0.2 + (-(i as f64) / 150.0).exp())).collect();
        let c = convergence_stats(&recs, 100).unwrap();
        assert!(c.total_ratio() < 0.5);
        assert!(c.slope_ratio() < 0.1);
        assert!(convergence_stats(&recs[..250], 100).is_err());
    }
}
