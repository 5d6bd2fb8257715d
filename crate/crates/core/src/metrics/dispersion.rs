//! Latent-dispersion export: per-segment latent vectors for external 2-D
//! projection, plus the scalar the contrastive loss drives down (mean
//! intra-clip pairwise absolute cosine similarity).

use serde::{Deserialize, Serialize};

use crate::losses::{flatten_segment_frame_major, SegmentPlan};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LatentRow {
    pub clip_id: String,
    pub segment: usize,
    pub vector: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DispersionExport {
    pub segment_length: usize,
    pub segment_slide: usize,
    pub rows: Vec<LatentRow>,
    /// Mean over clips (with >= 2 segments) of the mean pairwise absolute
    /// cosine similarity between their segments; None when no clip has two.
    pub mean_intra_clip_abs_cossim: Option<f64>,
}

fn cossim(a: &[f64], b: &[f64]) -> f64 {
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    dot / (na.sqrt() * nb.sqrt()).max(1e-12)
}

/// Flattens every clip's latent sequence into per-segment vectors.
pub fn latent_dispersion_export(
    latents: &[(String, ndarray::Array2<f64>)],
    plan: &SegmentPlan,
) -> DispersionExport {
    let mut rows = Vec::new();
    let mut clip_means = Vec::new();
    for (clip_id, z) in latents {
        let n = plan.segment_count(z.ncols());
        let vecs: Vec<Vec<f64>> = (0..n)
            .map(|i| flatten_segment_frame_major(z, plan, i))
            .collect();
        for (i, v) in vecs.iter().enumerate() {
            rows.push(LatentRow { clip_id: clip_id.clone(), segment: i, vector: v.clone() });
        }
        if n >= 2 {
            let mut acc = 0.0;
            let mut pairs = 0usize;
            for i in 0..n {
                for j in (i + 1)..n {
                    acc += cossim(&vecs[i], &vecs[j]).abs();
                    pairs += 1;
                }
            }
            clip_means.push(acc / pairs as f64);
        }
    }
    let mean = if clip_means.is_empty() {
        None
    } else {
        Some(clip_means.iter().sum::<f64>() / clip_means.len() as f64)
    };
    DispersionExport {
        segment_length: plan.length,
        segment_slide: plan.slide,
        rows,
        mean_intra_clip_abs_cossim: mean,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    #[test]
    fn one_row_per_clip_segment_and_ids_kept() {
        let plan = SegmentPlan::new(4, 2).unwrap();
        let latents: Vec<(String, Array2<f64>)> = (0..5)
            .map(|i| (format!("clip{i}"), Array2::from_elem((3, 12), i as f64 + 1.0)))
            .collect();
        let export = latent_dispersion_export(&latents, &plan);
        let n_seg = plan.segment_count(12);
        assert_eq!(export.rows.len(), 5 * n_seg);
        let ids: std::collections::BTreeSet<&str> =
            export.rows.iter().map(|r| r.clip_id.as_str()).collect();
        assert_eq!(ids.len(), 5);
        // Duplicated segments have cosine similarity exactly 1.
        assert!((export.mean_intra_clip_abs_cossim.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn single_segment_clip_reports_none() {
        let plan = SegmentPlan::new(4, 2).unwrap();
        let latents = vec![("only".to_string(), Array2::ones((3, 5)))];
        let export = latent_dispersion_export(&latents, &plan);
        assert_eq!(plan.segment_count(5), 1);
        assert_eq!(export.rows.len(), 1);
        assert!(export.mean_intra_clip_abs_cossim.is_none());
    }

    #[test]
    fn flatten_order_is_frame_major() {
        let plan = SegmentPlan::new(2, 1).unwrap();
        let z = Array2::from_shape_fn((2, 4), |(r, c)| (10 * c + r) as f64);
        let export = latent_dispersion_export(&[("c".into(), z)], &plan);
        // Segment 0 covers columns 0..2: frame 0 rows, then frame 1 rows.
        assert_eq!(export.rows[0].vector, vec![0.0, 1.0, 10.0, 11.0]);
    }
}
