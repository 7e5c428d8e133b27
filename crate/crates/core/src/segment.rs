//! Lifting per-view binary masks onto surfels.
//!
//! Every surfel collects, per view, the compositing weight `T * alpha` it
//! contributes inside the mask and over the whole image. A surfel is labeled
//! when enough of the views that see it place most of its weight inside the
//! mask.

use std::fmt::Write as _;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::camera::CameraView;
use crate::error::{Error, Result};
use crate::render::{render_with_record, RenderMode, RenderOptions};
use crate::scene::{BasicSceneModel, ComposedScene, SceneEntry};

/// Views where a surfel's weight falls below this fraction of its best view are ignored.
pub const VISIBILITY_EPSILON: f64 = 1e-4;

/// Binary mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Mask { width, height, data: vec![false; width * height] }
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Mask { width, height, data: vec![value; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, value: bool) {
        self.data[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone)]
pub struct MaskedView {
    pub view: String,
    pub camera: CameraView,
    pub mask: Mask,
}

/// Masks for some subset of the training views.
#[derive(Debug, Clone, Default)]
pub struct MaskSet {
    pub views: Vec<MaskedView>,
}

impl MaskSet {
    pub fn push(&mut self, view: impl Into<String>, camera: CameraView, mask: Mask) {
        self.views.push(MaskedView { view: view.into(), camera, mask });
    }
}

/// Per-view weights of one view.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewVotes {
    pub inside: Vec<f64>,
    pub total: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoteStats {
    pub primitive_count: usize,
    pub views: Vec<ViewVotes>,
}

impl VoteStats {
    /// Visibility threshold of primitive `i`: a fraction of its largest per-view weight.
    fn epsilon(&self, i: usize) -> f64 {
        let best = self.views.iter().map(|v| v.total[i]).fold(0.0, f64::max);
        VISIBILITY_EPSILON * best
    }

    pub fn inside_weight(&self, i: usize) -> f64 {
        self.views.iter().map(|v| v.inside[i]).sum()
    }

    pub fn total_weight(&self, i: usize) -> f64 {
        self.views.iter().map(|v| v.total[i]).sum()
    }

    /// `(views seeing the primitive, views where its inside ratio reaches the threshold, mean ratio)`
    fn tally(&self, i: usize, threshold_ratio: f64) -> (usize, usize, f64) {
        let eps = self.epsilon(i);
        let (mut seen, mut passed, mut ratio_sum) = (0, 0, 0.0);
        for v in &self.views {
            let total = v.total[i];
            if total > eps && total > 0.0 {
                seen += 1;
                let ratio = v.inside[i] / total;
                ratio_sum += ratio;
                if ratio >= threshold_ratio {
                    passed += 1;
                }
            }
        }
        let mean = if seen > 0 { ratio_sum / seen as f64 } else { 0.0 };
        (seen, passed, mean)
    }
}

/// Sums per-view inside and total compositing weights for every primitive.
pub fn accumulate_votes(scene: &BasicSceneModel, masks: &MaskSet) -> Result<VoteStats> {
    for m in &masks.views {
        m.camera.validate()?;
        if m.mask.width != m.camera.width || m.mask.height != m.camera.height {
            return Err(Error::DimensionMismatch(format!(
                "mask of view {} is {}x{}, camera is {}x{}",
                m.view, m.mask.width, m.mask.height, m.camera.width, m.camera.height
            )));
        }
        if m.mask.data.len() != m.mask.width * m.mask.height {
            return Err(Error::DimensionMismatch(format!("mask of view {} has the wrong length", m.view)));
        }
    }
    let options = RenderOptions { mode: RenderMode::FlatTexture, ..Default::default() };
    let views = masks
        .views
        .par_iter()
        .map(|m| -> Result<ViewVotes> {
            let (_, record) = render_with_record(scene, &m.camera, &options)?;
            let mut votes = ViewVotes { inside: vec![0.0; scene.len()], total: vec![0.0; scene.len()] };
            for tile in &record.tiles {
                let row = tile.x1 - tile.x0;
                for k in 0..tile.pixel_start.len() - 1 {
                    let (x, y) = (tile.x0 + k % row, tile.y0 + k / row);
                    let inside = m.mask.get(x, y);
                    let hits = &tile.hits[tile.pixel_start[k] as usize..tile.pixel_start[k + 1] as usize];
                    for hit in hits {
                        let prim = record.splats[hit.splat as usize].prim;
                        let w = hit.t_before * hit.alpha;
                        votes.total[prim] += w;
                        if inside {
                            votes.inside[prim] += w;
                        }
                    }
                }
            }
            Ok(votes)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VoteStats { primitive_count: scene.len(), views })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoteParams {
    /// Minimum inside/total weight ratio for a view to vote for the label.
    pub threshold_ratio: f64,
    /// Minimum fraction of seeing views that must vote for the label.
    pub min_view_fraction: f64,
}

impl Default for VoteParams {
    fn default() -> Self {
        VoteParams { threshold_ratio: 0.6, min_view_fraction: 0.5 }
    }
}

/// Per-primitive labels, `0` meaning unlabeled.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelAssignment {
    pub labels: Vec<u32>,
    pub inside_weight: Vec<f64>,
    pub total_weight: Vec<f64>,
    pub views_seen: Vec<usize>,
    /// Mean inside ratio of the vote that assigned the current label.
    ratio: Vec<f64>,
}

impl LabelAssignment {
    pub fn unlabeled(count: usize) -> Self {
        LabelAssignment {
            labels: vec![0; count],
            inside_weight: vec![0.0; count],
            total_weight: vec![0.0; count],
            views_seen: vec![0; count],
            ratio: vec![0.0; count],
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn max_label(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    pub fn count(&self, label: u32) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    /// Adds `label` to every primitive that wins the vote in `stats`.
    /// A primitive already carrying another label keeps whichever vote had
    /// the higher mean inside ratio.
    pub fn vote(&mut self, stats: &VoteStats, label: u32, params: &VoteParams) -> Result<()> {
        if stats.primitive_count != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "votes cover {} primitives, labels cover {}",
                stats.primitive_count,
                self.len()
            )));
        }
        if label == 0 {
            return Err(Error::InvalidParameter("label 0 is reserved for unlabeled primitives".into()));
        }
        for i in 0..self.len() {
            let (seen, passed, ratio) = stats.tally(i, params.threshold_ratio);
            if seen == 0 || passed == 0 || (passed as f64) < params.min_view_fraction * seen as f64 {
                continue;
            }
            if self.labels[i] != 0 && self.ratio[i] >= ratio {
                continue;
            }
            self.labels[i] = label;
            self.ratio[i] = ratio;
            self.inside_weight[i] = stats.inside_weight(i);
            self.total_weight[i] = stats.total_weight(i);
            self.views_seen[i] = seen;
        }
        Ok(())
    }

    /// Flat text table, one `primitive label` pair per line.
    pub fn to_table(&self) -> String {
        let mut out = String::from("# primitive label\n");
        for (i, l) in self.labels.iter().enumerate() {
            let _ = writeln!(out, "{i} {l}");
        }
        out
    }

    /// Parses [`to_table`](Self::to_table) output. Primitives missing from the
    /// table are unlabeled.
    pub fn from_table(text: &str, primitive_count: usize) -> Result<Self> {
        let mut out = LabelAssignment::unlabeled(primitive_count);
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let malformed = |message: String| Error::Malformed { line: n + 1, message };
            let mut parts = line.split_whitespace();
            let (Some(i), Some(l), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(malformed(format!("expected `primitive label`, got `{line}`")));
            };
            let i: usize = i.parse().map_err(|_| malformed(format!("bad primitive index `{i}`")))?;
            let l: u32 = l.parse().map_err(|_| malformed(format!("bad label `{l}`")))?;
            if i >= primitive_count {
                return Err(malformed(format!("primitive {i} out of range ({primitive_count} primitives)")));
            }
            out.labels[i] = l;
        }
        Ok(out)
    }
}

/// Single-label voting: label 1 for primitives that win the vote.
pub fn vote_labels(stats: &VoteStats, params: &VoteParams) -> LabelAssignment {
    let mut out = LabelAssignment::unlabeled(stats.primitive_count);
    out.vote(stats, 1, params).expect("sizes match by construction");
    out
}

/// Partitions primitives by label. Entry `k` of the result holds the
/// primitives labeled `k`, so labels without primitives give empty scenes.
pub fn split_by_labels(scene: &BasicSceneModel, labels: &LabelAssignment) -> Result<Vec<BasicSceneModel>> {
    if labels.len() != scene.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} labels for {} primitives",
            labels.len(),
            scene.len()
        )));
    }
    let mut parts: Vec<BasicSceneModel> = (0..=labels.max_label())
        .map(|_| BasicSceneModel {
            primitives: Vec::new(),
            c_palette: scene.c_palette,
            t_size: scene.t_size,
            t_total: scene.t_total,
            appearance: scene.appearance,
            sh_degree: scene.sh_degree,
            edit: scene.edit.clone(),
        })
        .collect();
    for (p, &l) in scene.primitives.iter().zip(&labels.labels) {
        parts[l as usize].primitives.push(p.clone());
    }
    Ok(parts)
}

/// Splits `scene` and wraps the parts as segments of one named entry group.
pub fn split_into_composed(name: &str, scene: &BasicSceneModel, labels: &LabelAssignment) -> Result<ComposedScene> {
    let parts = split_by_labels(scene, labels)?;
    Ok(ComposedScene {
        entries: parts
            .into_iter()
            .enumerate()
            .map(|(l, part)| SceneEntry {
                name: name.to_string(),
                segment: Some(l as u32),
                visible: true,
                scene: Arc::new(part),
            })
            .collect(),
    })
}
