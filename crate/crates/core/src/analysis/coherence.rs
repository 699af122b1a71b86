use std::io::Write;
use std::path::Path;

use ndarray::ArrayView1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::AnalysisError;
use crate::dataset::TrajectoryDataset;
use crate::plot::{LinePlot, Series};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoherenceCurve {
    pub dataset: String,
    pub k: Vec<usize>,
    /// Mean over episodes of the within-episode mean cosine similarity.
    pub mean: Vec<f64>,
    /// Population std over all valid pairs.
    pub std: Vec<f64>,
    pub pairs: Vec<usize>,
    /// Pairs dropped because one vector had zero norm.
    pub skipped: Vec<usize>,
}

fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Option<f64> {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0))
}

/// `cos(e_t, e_{t+K})` for every step of every episode. Each episode is
/// averaged first, then episodes are averaged with equal weight.
pub fn temporal_coherence(ds: &TrajectoryDataset, ks: &[usize]) -> Result<CoherenceCurve, AnalysisError> {
    if ks.is_empty() || ks.contains(&0) {
        return Err(AnalysisError::InvalidArgument("K list must be non-empty and positive".into()));
    }
    let pooled: Vec<_> = (0..ds.episodes.len())
        .into_par_iter()
        .map(|e| ds.pooled_embeddings(e))
        .collect();
    let mut curve = CoherenceCurve {
        dataset: ds.name.clone(),
        k: ks.to_vec(),
        mean: Vec::new(),
        std: Vec::new(),
        pairs: Vec::new(),
        skipped: Vec::new(),
    };
    for &k in ks {
        let per_episode: Vec<(Vec<f64>, usize)> = pooled
            .par_iter()
            .map(|e| {
                let t_len = e.nrows();
                let mut sims = Vec::new();
                let mut skipped = 0;
                for t in 0..t_len.saturating_sub(k) {
                    match cosine(e.row(t), e.row(t + k)) {
                        Some(c) => sims.push(c),
                        None => skipped += 1,
                    }
                }
                (sims, skipped)
            })
            .collect();
        let means: Vec<f64> = per_episode
            .iter()
            .filter(|(s, _)| !s.is_empty())
            .map(|(s, _)| s.iter().sum::<f64>() / s.len() as f64)
            .collect();
        let all: Vec<f64> = per_episode.iter().flat_map(|(s, _)| s.iter().copied()).collect();
        let skipped: usize = per_episode.iter().map(|(_, n)| n).sum();
        if skipped > 0 {
            log::warn!("K = {k}: skipped {skipped} pairs with a zero-norm embedding");
        }
        let (mean, std) = if means.is_empty() {
            log::warn!("K = {k}: no valid pairs");
            (f64::NAN, f64::NAN)
        } else {
            let pooled_mean = all.iter().sum::<f64>() / all.len() as f64;
            let var = all.iter().map(|c| (c - pooled_mean).powi(2)).sum::<f64>() / all.len() as f64;
            (means.iter().sum::<f64>() / means.len() as f64, var.sqrt())
        };
        curve.mean.push(mean);
        curve.std.push(std);
        curve.pairs.push(all.len());
        curve.skipped.push(skipped);
    }
    Ok(curve)
}

pub fn write_coherence_csv<W: Write>(out: W, curve: &CoherenceCurve) -> Result<(), AnalysisError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["dataset", "K", "mean_cosine", "std_cosine", "pairs", "skipped"])?;
    for i in 0..curve.k.len() {
        w.write_record([
            curve.dataset.clone(),
            curve.k[i].to_string(),
            format!("{:.6}", curve.mean[i]),
            format!("{:.6}", curve.std[i]),
            curve.pairs[i].to_string(),
            curve.skipped[i].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_coherence_svg(path: &Path, curves: &[CoherenceCurve]) -> Result<(), AnalysisError> {
    let plot = LinePlot {
        title: "Temporal coherence of pooled embeddings".into(),
        x_label: "K".into(),
        y_label: "mean cosine similarity".into(),
        log_x: true,
        log_y: false,
        series: curves
            .iter()
            .map(|c| Series::new(&c.dataset, c.k.iter().zip(&c.mean).map(|(&k, &m)| (k as f64, m)).collect()))
            .collect(),
    };
    std::fs::write(path, plot.to_svg())?;
    Ok(())
}
