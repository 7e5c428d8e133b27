//! Adaptive density control: clone, split and prune surfels based on the
//! accumulated screen-space positional gradient.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::math::logit;
use crate::render::backward::GradientBundle;
use crate::scene::{BasicSceneModel, SurfelPrimitive};

use super::adam::AdamState;

/// Running sums of the screen-space gradient norm per primitive.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DensityStats {
    pub grad_sum: Vec<f64>,
    pub views: Vec<u32>,
}

impl DensityStats {
    pub fn new(count: usize) -> Self {
        DensityStats { grad_sum: vec![0.0; count], views: vec![0; count] }
    }

    pub fn accumulate(&mut self, grads: &GradientBundle) {
        for (i, vis) in grads.visible.iter().enumerate() {
            if *vis {
                self.grad_sum[i] += grads.screen_grad[i];
                self.views[i] += 1;
            }
        }
    }

    pub fn average(&self, i: usize) -> f64 {
        if self.views[i] == 0 {
            0.0
        } else {
            self.grad_sum[i] / self.views[i] as f64
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityParams {
    pub grad_threshold: f64,
    /// Surfels whose larger scale is at most this are cloned, larger ones split.
    pub clone_max_scale: f64,
    pub prune_opacity: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DensityReport {
    pub cloned: usize,
    pub split: usize,
    pub pruned: usize,
}

pub const SPLIT_SCALE_DIVISOR: f64 = 1.6;

/// One round of clone/split/prune. Optimizer moments follow the primitives:
/// survivors keep theirs, new primitives start from zero. `stats` is reset.
pub fn density_control(
    scene: &mut BasicSceneModel,
    stats: &mut DensityStats,
    adam: &mut AdamState,
    params: &DensityParams,
    rng: &mut impl Rng,
) -> DensityReport {
    let n = scene.len();
    let mut report = DensityReport::default();
    let mut keep = vec![true; n];
    let mut added = Vec::new();
    for i in 0..n {
        if stats.average(i) < params.grad_threshold || stats.views[i] == 0 {
            continue;
        }
        let p = &scene.primitives[i];
        if p.scale_u().max(p.scale_v()) <= params.clone_max_scale {
            added.push(p.clone());
            report.cloned += 1;
        } else {
            let (t_u, t_v, _) = p.axes();
            for _ in 0..2 {
                let mut child = p.clone();
                let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                child.mu = p.mu + t_u * (a * p.scale_u()) + t_v * (b * p.scale_v());
                child.set_scales(p.scale_u() / SPLIT_SCALE_DIVISOR, p.scale_v() / SPLIT_SCALE_DIVISOR);
                added.push(child);
            }
            keep[i] = false;
            report.split += 1;
        }
    }
    let min_logit = logit(params.prune_opacity);
    for (i, p) in scene.primitives.iter().enumerate() {
        if keep[i] && p.opacity_logit < min_logit {
            keep[i] = false;
            report.pruned += 1;
        }
    }
    added.retain(|p: &SurfelPrimitive| p.opacity_logit >= min_logit);

    let mut idx = 0;
    scene.primitives.retain(|_| {
        let k = keep[idx];
        idx += 1;
        k
    });
    adam.retain(&keep);
    for p in added {
        adam.push_zeroed(p.param_count());
        scene.primitives.push(p);
    }
    *stats = DensityStats::new(scene.len());
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Appearance;
    use crate::synthetic::random_scene;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> DensityParams {
        DensityParams { grad_threshold: 2e-4, clone_max_scale: 0.05, prune_opacity: 0.005 }
    }

    #[test]
    fn no_gradients_only_prunes() {
        let mut s = random_scene(3, 10, Appearance::Relightable, 1.0);
        s.primitives[4].opacity_logit = logit(1e-4);
        let before = s.clone();
        let mut stats = DensityStats::new(s.len());
        let mut adam = AdamState::new(&s);
        let r = density_control(&mut s, &mut stats, &mut adam, &params(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(r, DensityReport { cloned: 0, split: 0, pruned: 1 });
        assert_eq!(s.len(), 9);
        assert_eq!(adam.len(), 9);
        let mut expected = before.primitives.clone();
        expected.remove(4);
        assert_eq!(s.primitives, expected);
    }

    #[test]
    fn clones_small_and_splits_large() {
        let mut s = random_scene(4, 2, Appearance::Relightable, 1.0);
        s.primitives[0].set_scales(0.01, 0.02);
        s.primitives[1].set_scales(0.3, 0.2);
        for p in &mut s.primitives {
            p.opacity_logit = 1.0;
        }
        let big = s.primitives[1].clone();
        let mut stats = DensityStats::new(2);
        let mut g = GradientBundle::zeros_like(&s);
        g.visible = vec![true, true];
        g.screen_grad = vec![1e-3, 1e-3];
        stats.accumulate(&g);
        let mut adam = AdamState::new(&s);
        let r = density_control(&mut s, &mut stats, &mut adam, &params(), &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(r, DensityReport { cloned: 1, split: 1, pruned: 0 });
        assert_eq!(s.len(), 4);
        assert_eq!(adam.len(), 4);
        assert_eq!(s.primitives[0], s.primitives[1]);
        for child in &s.primitives[2..] {
            assert!((child.scale_u() - big.scale_u() / 1.6).abs() < 1e-12);
            assert!((child.scale_v() - big.scale_v() / 1.6).abs() < 1e-12);
            // children stay in the parent's tangent plane
            let (_, _, n) = big.axes();
            assert!((child.mu - big.mu).dot(&n).abs() < 1e-9);
        }
        assert_eq!(stats.views, vec![0; 4]);
    }

    #[test]
    fn seeded_runs_match() {
        let run = || {
            let mut s = random_scene(5, 30, Appearance::Relightable, 1.0);
            let mut stats = DensityStats::new(s.len());
            let mut g = GradientBundle::zeros_like(&s);
            g.visible = vec![true; 30];
            g.screen_grad = (0..30).map(|i| i as f64 * 2e-5).collect();
            stats.accumulate(&g);
            let mut adam = AdamState::new(&s);
            density_control(&mut s, &mut stats, &mut adam, &params(), &mut ChaCha8Rng::seed_from_u64(9));
            s
        };
        assert_eq!(run(), run());
    }
}
