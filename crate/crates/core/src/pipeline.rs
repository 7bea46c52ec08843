//! Alternating surfel optimization and patch-match guidance, followed by
//! depth fusion.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, View};
use crate::losses::{self, LossBreakdown, LossWeights};
use crate::mesh::TriangleMesh;
use crate::metrics::{self, Chamfer, FScore};
use crate::optim::{Adam, StepSizes};
use crate::patchmatch::{self, HypothesisMap, Label, PatchMatchConfig, ReliabilityMask, ViewSet};
use crate::renderer::{RenderOutput, RenderSettings, Renderer};
use crate::scene::{init_from_points, SurfelScene};
use crate::{fusion, io, Camera, DepthMap, Error, Map, NormalMap, Result, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub warmup_steps: usize,
    pub pm_interval: usize,
    pub pm_until: usize,
    pub total_steps: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            warmup_steps: 2000,
            pm_interval: 1000,
            pm_until: 8000,
            total_steps: 10000,
        }
    }
}

impl Schedule {
    pub fn validate(&self) -> Result<()> {
        if self.pm_interval == 0 {
            return Err(Error::InvalidConfig("pm_interval must be at least 1".into()));
        }
        if self.warmup_steps > self.pm_until || self.pm_until > self.total_steps {
            return Err(Error::InvalidConfig(format!(
                "schedule requires warmup_steps <= pm_until <= total_steps, got {} / {} / {}",
                self.warmup_steps, self.pm_until, self.total_steps
            )));
        }
        Ok(())
    }

    /// Steps before which a guidance round runs: every multiple of
    /// `pm_interval` in `(warmup_steps, pm_until]`.
    pub fn guidance_steps(&self) -> Vec<usize> {
        (self.warmup_steps / self.pm_interval + 1..)
            .map(|k| k * self.pm_interval)
            .take_while(|&s| s <= self.pm_until)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub voxel_size: f64,
    pub truncation: f64,
    /// Voxels with less accumulated weight do not produce surface.
    pub min_weight: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            voxel_size: 0.003,
            truncation: 0.02,
            min_weight: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schedule: Schedule,
    pub weights: LossWeights,
    pub patchmatch: PatchMatchConfig,
    pub steps: StepSizes,
    pub use_patchmatch: bool,
    pub use_normal_prior: bool,
    pub fusion: FusionConfig,
    pub seed: u64,
    /// Number of surfels initialized from the sparse points.
    pub num_surfels: usize,
    /// Rendered alpha above which a pixel counts as covered.
    pub alpha_threshold: f64,
    /// Upper bound on the flat scale relative to the in-plane scales.
    pub flat_ratio: f64,
    /// Dump per-round patch-match depths and masks.
    pub debug: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schedule: Schedule::default(),
            weights: LossWeights::default(),
            patchmatch: PatchMatchConfig::default(),
            steps: StepSizes::default(),
            use_patchmatch: true,
            use_normal_prior: true,
            fusion: FusionConfig::default(),
            seed: 0,
            num_surfels: 4000,
            alpha_threshold: 0.5,
            flat_ratio: 0.1,
            debug: false,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        self.patchmatch.validate()?;
        let bad = |m: String| Err(Error::InvalidConfig(m));
        for (name, v) in ["center", "orientation", "scale", "opacity", "color"]
            .iter()
            .zip(self.steps.all())
        {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("step size for {name} must be nonnegative, got {v}"));
            }
        }
        let w = &self.weights;
        if !(0.0..=1.0).contains(&w.lambda_dssim) || w.w_nc < 0.0 || w.w_np < 0.0 || w.w_d < 0.0 {
            return bad(format!("invalid loss weights {w:?}"));
        }
        if !(self.fusion.voxel_size > 0.0 && self.fusion.truncation > 0.0) {
            return bad("fusion voxel_size and truncation must be positive".into());
        }
        if self.num_surfels == 0 {
            return bad("num_surfels must be positive".into());
        }
        if !(self.alpha_threshold > 0.0 && self.alpha_threshold < 1.0) {
            return bad(format!("alpha_threshold {} must lie in (0, 1)", self.alpha_threshold));
        }
        if !(self.flat_ratio > 0.0 && self.flat_ratio <= 1.0) {
            return bad(format!("flat_ratio {} must lie in (0, 1]", self.flat_ratio));
        }
        Ok(())
    }
}

/// Supervision for one view, fixed between guidance rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewGuidance {
    pub pm_depth: Option<DepthMap>,
    pub pm_normal: Option<NormalMap>,
    pub mask: ReliabilityMask,
    pub prior: Option<NormalMap>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceBundle {
    pub views: Vec<ViewGuidance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoundStats {
    pub step: usize,
    pub reliable_fraction: f64,
    /// Median relative error of reliable patch-match depths against ground truth.
    pub median_depth_error: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub view: usize,
    pub loss: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub steps: usize,
    pub surfels: usize,
    pub rounds: Vec<RoundStats>,
    pub final_loss: Option<LossBreakdown>,
    pub mesh_vertices: usize,
    pub mesh_faces: usize,
    pub chamfer: Option<Chamfer>,
    pub fscore: Option<FScore>,
    pub fscore_tau: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub mesh: TriangleMesh,
    pub scene: SurfelScene,
    pub report: RunReport,
    pub losses: Vec<StepRecord>,
}

fn renderer() -> Renderer {
    Renderer::new(RenderSettings::default())
}

/// One optimization step on one view: render, evaluate the losses, back
/// propagate and update. ℓ_d and ℓ_np enter only with guidance and their
/// flags on.
pub fn optimize_step(
    scene: &mut SurfelScene,
    adam: &mut Adam,
    view: &View,
    guidance: Option<&ViewGuidance>,
    cfg: &PipelineConfig,
    step: usize,
    view_index: usize,
) -> Result<LossBreakdown> {
    let r = renderer();
    let cam = &view.camera;
    let out = r.render(scene, cam)?;
    let (w, h) = (out.width(), out.height());
    let wt = &cfg.weights;

    let mut g_color = Map::filled(w, h, Vec3::zeros());
    let c = losses::color_loss_term(&out.color, &view.image, wt.lambda_dssim, Some(&mut g_color))?;

    let mut g_depth_nc = Map::filled(w, h, 0.0);
    let mut g_normal_nc = Map::filled(w, h, Vec3::zeros());
    let nc =
        losses::depth_normal_consistency_term(&out.depth, &out.normal, cam, Some((&mut g_depth_nc, &mut g_normal_nc)))?;

    let mut g_depth_d = Map::filled(w, h, 0.0);
    let mut g_normal_np = Map::filled(w, h, Vec3::zeros());
    let mut d = losses::Term::default();
    let mut np = losses::Term::default();
    if let Some(g) = guidance {
        if cfg.use_patchmatch {
            if let Some(pm) = &g.pm_depth {
                d = losses::depth_loss_term(
                    &out.depth,
                    &out.alpha,
                    pm,
                    &g.mask,
                    cfg.alpha_threshold,
                    Some(&mut g_depth_d),
                )?;
            }
        }
        if cfg.use_normal_prior {
            if let Some(prior) = &g.prior {
                np = losses::normal_prior_loss_term(
                    &out.normal,
                    &out.alpha,
                    prior,
                    &g.mask,
                    cfg.alpha_threshold,
                    Some(&mut g_normal_np),
                )?;
            }
        }
    }

    let mut loss = losses::total_loss(c.value, nc.value, np.value, d.value, wt);
    loss.n_c = c.count;
    loss.n_nc = nc.count;
    loss.n_np = np.count;
    loss.n_d = d.count;
    if !loss.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            step,
            view: view_index,
            detail: format!(
                "l_c={} l_nc={} l_np={} l_d={} surfels={}",
                loss.l_c,
                loss.l_nc,
                loss.l_np,
                loss.l_d,
                scene.len()
            ),
        });
    }

    let g_depth = Map::from_fn(w, h, |x, y| {
        wt.w_nc * g_depth_nc.get(x, y) + wt.w_d * g_depth_d.get(x, y)
    });
    let g_normal = Map::from_fn(w, h, |x, y| {
        g_normal_nc.get(x, y) * wt.w_nc + g_normal_np.get(x, y) * wt.w_np
    });
    let grad = r.backward(scene, cam, &out, &g_color, &g_depth, &g_normal)?;
    if grad.params.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteLoss {
            step,
            view: view_index,
            detail: "non-finite parameter gradient".into(),
        });
    }
    adam.step(scene, &grad);
    scene.enforce_invariants(cfg.flat_ratio);
    Ok(loss)
}

fn coverage_mask(out: &RenderOutput, threshold: f64, label: Label) -> ReliabilityMask {
    let mut mask = ReliabilityMask::uniform(out.width(), out.height(), Label::Invalid);
    for (l, &a) in mask.labels.data.iter_mut().zip(&out.alpha.data) {
        if a > threshold {
            *l = label;
        }
    }
    mask
}

/// Renders every view, refines the rendered geometry with patch-match,
/// verifies it across views and attaches the normal priors.
pub fn guidance_round(
    scene: &SurfelScene,
    dataset: &Dataset,
    cfg: &PipelineConfig,
    round: usize,
) -> Result<GuidanceBundle> {
    let r = renderer();
    let renders: Vec<RenderOutput> = dataset
        .views
        .par_iter()
        .map(|v| r.render(scene, &v.camera))
        .collect::<Result<_>>()?;
    let priors: Vec<Option<NormalMap>> = dataset
        .views
        .iter()
        .map(|v| {
            if cfg.use_normal_prior {
                v.prior_normal.clone()
            } else {
                None
            }
        })
        .collect();

    if !cfg.use_patchmatch {
        let views = renders
            .iter()
            .zip(priors)
            .map(|(out, prior)| ViewGuidance {
                pm_depth: None,
                pm_normal: None,
                mask: coverage_mask(out, cfg.alpha_threshold, Label::Unreliable),
                prior,
            })
            .collect();
        return Ok(GuidanceBundle { views });
    }

    let cameras = dataset.cameras();
    let maps: Vec<HypothesisMap> = renders
        .iter()
        .zip(&cameras)
        .map(|(out, cam)| {
            let depth = Map::from_fn(out.width(), out.height(), |x, y| {
                if *out.alpha.get(x, y) > cfg.alpha_threshold {
                    *out.median_depth.get(x, y)
                } else {
                    0.0
                }
            });
            HypothesisMap::from_maps(&depth, &out.normal, cam)
        })
        .collect::<Result<_>>()?;
    let grays: Vec<_> = dataset.views.iter().map(|v| v.image.to_gray()).collect();
    let views = ViewSet {
        grays: &grays,
        cameras: &cameras,
    };
    let seed = cfg.seed ^ (round as u64 + 1).wrapping_mul(0xA076_1D64_78BD_642F);
    let refined = patchmatch::refine(&maps, &views, &cfg.patchmatch, seed);
    let masks = patchmatch::geometric_verify(&refined, &cameras, &cfg.patchmatch);
    let views = refined
        .iter()
        .zip(masks)
        .zip(priors)
        .map(|((map, mask), prior)| ViewGuidance {
            pm_depth: Some(map.depth_map()),
            pm_normal: Some(map.normal_map()),
            mask,
            prior,
        })
        .collect();
    Ok(GuidanceBundle { views })
}

fn round_stats(bundle: &GuidanceBundle, dataset: &Dataset, step: usize) -> RoundStats {
    let (mut reliable, mut covered) = (0usize, 0usize);
    let mut errors = Vec::new();
    for (g, v) in bundle.views.iter().zip(&dataset.views) {
        reliable += g.mask.count(Label::Reliable);
        covered += g.mask.labels.len() - g.mask.count(Label::Invalid);
        let (Some(pm), Some(gt)) = (&g.pm_depth, &v.gt_depth) else {
            continue;
        };
        for ((l, p), t) in g.mask.labels.data.iter().zip(&pm.data).zip(&gt.data) {
            if *l == Label::Reliable && *t > 0.0 {
                errors.push((p - t).abs() / t);
            }
        }
    }
    RoundStats {
        step,
        reliable_fraction: if covered > 0 {
            reliable as f64 / covered as f64
        } else {
            0.0
        },
        median_depth_error: median(&mut errors),
    }
}

pub fn median(v: &mut [f64]) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn dump_round(dir: &Path, bundle: &GuidanceBundle, dataset: &Dataset, round: usize) -> Result<()> {
    std::fs::create_dir_all(dir.join("pm"))?;
    std::fs::create_dir_all(dir.join("mask"))?;
    for (g, v) in bundle.views.iter().zip(&dataset.views) {
        let stem = format!("{}_r{round:02}", v.stem());
        if let Some(pm) = &g.pm_depth {
            io::pfm::write_depth(&dir.join("pm").join(format!("{stem}.pfm")), pm)?;
        }
        io::png::write_mask(&dir.join("mask").join(format!("{stem}.png")), &g.mask)?;
    }
    Ok(())
}

/// View order for one epoch: a permutation seeded by the run seed and epoch.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    order.shuffle(&mut rng);
    order
}

/// Median depth at every view for fusion, keeping pixels whose alpha
/// exceeds the coverage threshold. Unlike the alpha-blended depth it does
/// not interpolate across silhouettes.
pub fn render_depths(scene: &SurfelScene, cameras: &[Camera], alpha_threshold: f64) -> Result<Vec<DepthMap>> {
    let r = renderer();
    cameras
        .iter()
        .map(|cam| {
            let out = r.render(scene, cam)?;
            Ok(Map::from_fn(out.width(), out.height(), |x, y| {
                if *out.alpha.get(x, y) > alpha_threshold {
                    *out.median_depth.get(x, y)
                } else {
                    0.0
                }
            }))
        })
        .collect()
}

/// Full reconstruction. Optional `debug_dir` receives per-round dumps when
/// `cfg.debug` is set.
pub fn run(dataset: &Dataset, cfg: &PipelineConfig, debug_dir: Option<&Path>) -> Result<RunOutput> {
    cfg.validate()?;
    dataset.require_views(3)?;
    let mut scene = init_from_points(&dataset.points, &dataset.point_colors, cfg.num_surfels)?;
    scene.enforce_invariants(cfg.flat_ratio);
    let mut adam = Adam::new(scene.len(), &cfg.steps, scene.extent());
    let guidance_at = if cfg.use_patchmatch || cfg.use_normal_prior {
        cfg.schedule.guidance_steps()
    } else {
        Vec::new()
    };

    let n = dataset.views.len();
    let mut guidance: Option<GuidanceBundle> = None;
    let mut rounds = Vec::new();
    let mut records = Vec::with_capacity(cfg.schedule.total_steps);
    let mut order = Vec::new();
    for step in 0..cfg.schedule.total_steps {
        if guidance_at.contains(&step) {
            let bundle = guidance_round(&scene, dataset, cfg, rounds.len())?;
            if cfg.debug {
                if let Some(dir) = debug_dir {
                    dump_round(dir, &bundle, dataset, rounds.len())?;
                }
            }
            rounds.push(round_stats(&bundle, dataset, step));
            guidance = Some(bundle);
        }
        if step % n == 0 {
            order = epoch_order(n, cfg.seed, step / n);
        }
        let v = order[step % n];
        let g = guidance.as_ref().map(|b| &b.views[v]);
        let loss = optimize_step(&mut scene, &mut adam, &dataset.views[v], g, cfg, step, v)?;
        records.push(StepRecord { step, view: v, loss });
    }

    let cameras = dataset.cameras();
    let depths = render_depths(&scene, &cameras, cfg.alpha_threshold)?;
    let f = &cfg.fusion;
    let mesh = fusion::fuse_depth_maps(&depths, &cameras, f.voxel_size, f.truncation, f.min_weight, None)?;

    let tau = 2.0 * f.voxel_size.max(0.005);
    let (chamfer, fscore) = match &dataset.gt_mesh {
        Some(gt) if !gt.is_empty() && !mesh.is_empty() => {
            let (c, s) = evaluate_mesh(&mesh, gt, tau, cfg.seed)?;
            (Some(c), Some(s))
        }
        _ => (None, None),
    };
    let report = RunReport {
        steps: cfg.schedule.total_steps,
        surfels: scene.len(),
        rounds,
        final_loss: records.last().map(|r| r.loss),
        mesh_vertices: mesh.vertices.len(),
        mesh_faces: mesh.faces.len(),
        chamfer,
        fscore,
        fscore_tau: tau,
    };
    Ok(RunOutput {
        mesh,
        scene,
        report,
        losses: records,
    })
}

/// Chamfer and F-score between surface samples of two meshes.
pub fn evaluate_mesh(pred: &TriangleMesh, gt: &TriangleMesh, tau: f64, seed: u64) -> Result<(Chamfer, FScore)> {
    let p = pred.sample_points(metrics::DEFAULT_SAMPLES, seed);
    let g = gt.sample_points(metrics::DEFAULT_SAMPLES, seed);
    if p.is_empty() || g.is_empty() {
        return Err(Error::EmptyInput);
    }
    let d_pg = metrics::nearest_distances(&p, &g);
    let d_gp = metrics::nearest_distances(&g, &p);
    let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
    let (accuracy, completeness) = (mean(&d_pg), mean(&d_gp));
    Ok((
        Chamfer {
            accuracy,
            completeness,
            chamfer: 0.5 * (accuracy + completeness),
        },
        metrics::fscore_from_distances(&d_pg, &d_gp, tau),
    ))
}

/// Per-step losses as CSV with a header row.
pub fn losses_csv(records: &[StepRecord]) -> String {
    let mut s = String::from("step,view,total,l_c,l_nc,l_np,l_d,n_d,n_np\n");
    for r in records {
        let l = &r.loss;
        s.push_str(&format!(
            "{},{},{:e},{:e},{:e},{:e},{:e},{},{}\n",
            r.step, r.view, l.total, l.l_c, l.l_nc, l.l_np, l.l_d, l.n_d, l.n_np
        ));
    }
    s
}
