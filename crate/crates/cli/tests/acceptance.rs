use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use splatsurf::dataset::{gen_synthetic, Dataset, SceneKind, SyntheticSpec, Texture};
use splatsurf::fusion::fuse_depth_maps;
use splatsurf::geometry::{apply_homography, backproject, induced_homography, project, tangent_basis};
use splatsurf::metrics::{chamfer, fscore, psnr, ssim};
use splatsurf::patchmatch::{
    geometric_verify, refine, select_source_views, HypothesisMap, Label, PatchMatchConfig, ViewSet,
};
use splatsurf::pipeline::{run, PipelineConfig, Schedule};
use splatsurf::renderer::{RenderOutput, RenderSettings, Renderer};
use splatsurf::scene::{ParamClass, Surfel, SurfelScene, PARAMS_PER_SURFEL};
use splatsurf::{Camera, DepthMap, Map, PlaneHypothesis, Vec3};

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit: Duration, detail: String) -> Outcome {
    if elapsed > limit {
        Err(format!("{detail}; took {elapsed:.1?}, limit {limit:?}"))
    } else {
        Ok(detail)
    }
}

fn random_camera(rng: &mut ChaCha8Rng) -> Camera {
    let axis = Vec3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    );
    let rot = Rotation3::from_scaled_axis(axis * 0.4).into_inner();
    let t = Vec3::new(
        rng.gen_range(-0.5..0.5),
        rng.gen_range(-0.5..0.5),
        rng.gen_range(2.0..4.0),
    );
    Camera::new(
        rng.gen_range(80.0..200.0),
        rng.gen_range(80.0..200.0),
        rng.gen_range(40.0..80.0),
        rng.gen_range(30.0..60.0),
        128,
        96,
        rot,
        t,
    )
    .unwrap()
}

fn geometry_round_trips() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst_point: f64 = 0.0;
    let mut worst_pixel: f64 = 0.0;
    for _ in 0..1000 {
        let cam = random_camera(&mut rng);
        let px = Vector2::new(rng.gen_range(0.0..128.0), rng.gen_range(0.0..96.0));
        let depth = rng.gen_range(0.5..10.0);
        let world = backproject(&cam, &px, depth).map_err(|e| e.to_string())?;
        let (back, d) = project(&cam, &world).map_err(|e| e.to_string())?;
        worst_pixel = worst_pixel.max((back - px).norm()).max((d - depth).abs());
        let again = backproject(&cam, &back, d).map_err(|e| e.to_string())?;
        worst_point = worst_point.max((again - world).norm());
    }

    let mut worst_h: f64 = 0.0;
    let mut cases = 0;
    while cases < 1000 {
        let reference = random_camera(&mut rng);
        let source = random_camera(&mut rng);
        let anchor = Vector2::new(rng.gen_range(10.0..110.0), rng.gen_range(10.0..80.0));
        let ray = reference.pixel_ray(&anchor);
        let (t1, t2) = tangent_basis(&(-ray.normalize()));
        let n = (-ray.normalize() + t1 * rng.gen_range(-0.5..0.5) + t2 * rng.gen_range(-0.5..0.5)).normalize();
        let hyp = PlaneHypothesis::new(rng.gen_range(1.0..3.0), n, &ray).map_err(|e| e.to_string())?;
        let h = induced_homography(&reference, &source, &anchor, &hyp).map_err(|e| e.to_string())?;
        let px = Vector2::new(rng.gen_range(0.0..128.0), rng.gen_range(0.0..96.0));
        let Some(at_px) = hyp.reanchor(&ray, &reference.pixel_ray(&px)) else {
            continue;
        };
        let world = backproject(&reference, &px, at_px.depth).map_err(|e| e.to_string())?;
        let Ok((expected, _)) = project(&source, &world) else {
            continue;
        };
        let Some((u, v)) = apply_homography(&h, px.x, px.y) else {
            continue;
        };
        worst_h = worst_h.max((u - expected.x).abs()).max((v - expected.y).abs());
        cases += 1;
    }
    let detail = format!(
        "round trip max err {:.1e} (pixel/depth {:.1e}), homography max err {:.1e} px over {cases} cases",
        worst_point, worst_pixel, worst_h
    );
    let ok = worst_point < 1e-9 && worst_pixel < 1e-9 && worst_h < 1e-6;
    check(ok, detail.clone())?;
    within(start.elapsed(), Duration::from_secs(5), detail)
}

fn gradient_scene(rng: &mut ChaCha8Rng, n: usize) -> SurfelScene {
    let surfels = (0..n)
        .map(|k| {
            let z = 2.0 + 0.3 * k as f64 + rng.gen_range(0.0..0.1);
            let center = Vec3::new(rng.gen_range(-0.4..0.4) * z, rng.gen_range(-0.4..0.4) * z, z);
            let axis = Vec3::new(
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-0.6..0.6),
                rng.gen_range(-3.0..3.0),
            );
            let scales = Vec3::new(rng.gen_range(0.15..0.5), rng.gen_range(0.15..0.5), 0.01);
            let color = Vec3::new(rng.gen(), rng.gen(), rng.gen());
            Surfel::new(
                center,
                UnitQuaternion::from_scaled_axis(axis),
                scales,
                rng.gen_range(0.15..0.7),
                color,
            )
        })
        .collect();
    SurfelScene::new(surfels).unwrap()
}

fn renderer_gradients() -> Outcome {
    const SIZE: usize = 32;
    let start = Instant::now();
    let renderer = Renderer::new(RenderSettings {
        sigma_cutoff: None,
        ..Default::default()
    });
    let cam = Camera::new(30.0, 30.0, 15.5, 15.5, SIZE, SIZE, Matrix3::identity(), Vec3::zeros()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let h = 1e-6;
    let mut worst = [0.0f64; 5];
    for _ in 0..20 {
        let scene = gradient_scene(&mut rng, 10);
        let mut v = || {
            Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
        };
        let up_color = Map::from_fn(SIZE, SIZE, |_, _| v());
        let up_normal = Map::from_fn(SIZE, SIZE, |_, _| v());
        let up_depth = Map::from_fn(SIZE, SIZE, |_, _| v().x);
        let objective = |out: &RenderOutput| {
            (0..out.color.len())
                .map(|i| {
                    up_color.data[i].dot(&out.color.data[i])
                        + up_depth.data[i] * out.depth.data[i]
                        + up_normal.data[i].dot(&out.normal.data[i])
                })
                .sum::<f64>()
        };
        let out = renderer.render(&scene, &cam).map_err(|e| e.to_string())?;
        let grad = renderer
            .backward(&scene, &cam, &out, &up_color, &up_depth, &up_normal)
            .map_err(|e| e.to_string())?;
        let mut err = [0.0; 5];
        let mut norm = [0.0; 5];
        for k in 0..scene.len() {
            for i in 0..PARAMS_PER_SURFEL {
                let eval = |delta: f64| {
                    let mut s = scene.clone();
                    let mut p = s.surfels[k].params();
                    p[i] += delta;
                    s.surfels[k].set_params(&p);
                    objective(&renderer.render(&s, &cam).unwrap())
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let c = ParamClass::of_index(i) as usize;
                err[c] += (grad.params[k][i] - fd).powi(2);
                norm[c] += fd * fd;
            }
        }
        for c in 0..5 {
            worst[c] = worst[c].max(err[c].sqrt() / norm[c].sqrt().max(1e-9));
        }
    }
    let detail = ParamClass::ALL
        .iter()
        .map(|&c| format!("{} {:.1e}", c.name(), worst[c as usize]))
        .collect::<Vec<_>>()
        .join(", ");
    check(worst.iter().all(|&e| e < 1e-3), format!("max relative error: {detail}"))?;
    within(start.elapsed(), Duration::from_secs(60), detail)
}

fn patchmatch_recovery() -> Outcome {
    let start = Instant::now();
    let spec = SyntheticSpec {
        scene_kind: SceneKind::Plane,
        texture: Texture::Checker,
        n_views: 5,
        resolution: [128, 96],
        checker_size: 0.03,
        init_points: 100,
        ..Default::default()
    };
    let ds = gen_synthetic(&spec, 3).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cameras = ds.cameras();
    let maps: Vec<HypothesisMap> = ds
        .views
        .iter()
        .map(|v| {
            let gt = v.gt_depth.as_ref().unwrap();
            let depth = Map::from_fn(gt.width, gt.height, |x, y| {
                let d = *gt.get(x, y);
                if d > 0.0 {
                    d * (1.0 + rng.gen_range(-0.2..0.2))
                } else {
                    0.0
                }
            });
            let normal = gt.map(|_| Vec3::new(0.0, 0.0, -1.0));
            HypothesisMap::from_maps(&depth, &normal, &v.camera).unwrap()
        })
        .collect();
    let grays: Vec<_> = ds.views.iter().map(|v| v.image.to_gray()).collect();
    let views = ViewSet {
        grays: &grays,
        cameras: &cameras,
    };
    let cfg = PatchMatchConfig::default();
    let refined = refine(&maps, &views, &cfg, 3);
    let mut depth_err = Vec::new();
    let mut angle_err = Vec::new();
    for (v, map) in ds.views.iter().zip(&refined) {
        let (gt_d, gt_n) = (v.gt_depth.as_ref().unwrap(), v.gt_normal.as_ref().unwrap());
        for y in 0..gt_d.height {
            for x in 0..gt_d.width {
                let d = *gt_d.get(x, y);
                if d <= 0.0 {
                    continue;
                }
                match map.get(x, y) {
                    Some(hyp) => {
                        depth_err.push((hyp.depth - d).abs() / d);
                        angle_err.push(hyp.normal.angle(gt_n.get(x, y)).to_degrees());
                    }
                    None => {
                        depth_err.push(f64::INFINITY);
                        angle_err.push(180.0);
                    }
                }
            }
        }
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let (dm, am) = (median(&mut depth_err), median(&mut angle_err));
    let detail = format!(
        "{} sweep rounds, median relative depth error {:.3}%, median normal error {:.2} deg",
        cfg.sweeps,
        100.0 * dm,
        am
    );
    check(cfg.sweeps == 2 && dm < 0.01 && am < 3.0, detail.clone())?;
    within(start.elapsed(), Duration::from_secs(60), detail)
}

#[derive(Clone, Copy, PartialEq)]
enum Seen {
    Visible,
    Hidden,
    Ambiguous,
}

/// Visibility of the ground-truth point at `(x, y)` of `from` in `to`,
/// decided only when the whole 3x3 neighborhood of the projection agrees.
fn seen_in(from: &splatsurf::dataset::View, x: usize, y: usize, to: &splatsurf::dataset::View) -> Seen {
    let d = *from.gt_depth.as_ref().unwrap().get(x, y);
    let world = from
        .camera
        .camera_to_world(&(from.camera.pixel_ray_xy(x as f64, y as f64) * d));
    let pc = to.camera.world_to_camera(&world);
    if pc.z <= 0.0 {
        return Seen::Hidden;
    }
    let q = to.camera.project_camera_point(&pc);
    let depth = to.gt_depth.as_ref().unwrap();
    let (w, h) = (depth.width as f64, depth.height as f64);
    if q.x < -1.5 || q.y < -1.5 || q.x > w + 0.5 || q.y > h + 0.5 {
        return Seen::Hidden;
    }
    let (mut near, mut front, mut total) = (0, 0, 0);
    for dy in -1..=1 {
        for dx in -1..=1 {
            let (qx, qy) = ((q.x.round() as i64 + dx), (q.y.round() as i64 + dy));
            if qx < 0 || qy < 0 || qx >= depth.width as i64 || qy >= depth.height as i64 {
                return Seen::Ambiguous;
            }
            let dj = *depth.get(qx as usize, qy as usize);
            total += 1;
            if dj > 0.0 && (dj - pc.z).abs() / pc.z < 0.01 {
                near += 1;
            } else if dj > 0.0 && dj < pc.z * 0.97 {
                front += 1;
            }
        }
    }
    if near == total {
        Seen::Visible
    } else if front == total {
        Seen::Hidden
    } else {
        Seen::Ambiguous
    }
}

fn interior(depth: &DepthMap, x: usize, y: usize, r: usize) -> bool {
    let d = *depth.get(x, y);
    if d <= 0.0 || x < r || y < r || x + r >= depth.width || y + r >= depth.height {
        return false;
    }
    (y - r..=y + r).all(|yy| (x - r..=x + r).all(|xx| (depth.get(xx, yy) - d).abs() / d < 0.02))
}

fn verification_occlusions() -> Outcome {
    let spec = SyntheticSpec {
        scene_kind: SceneKind::TwoPlanes,
        ..Default::default()
    };
    let ds = gen_synthetic(&spec, 4).map_err(|e| e.to_string())?;
    let cameras = ds.cameras();
    let cfg = PatchMatchConfig::default();
    let maps: Vec<HypothesisMap> = ds
        .views
        .iter()
        .map(|v| {
            HypothesisMap::from_maps(v.gt_depth.as_ref().unwrap(), v.gt_normal.as_ref().unwrap(), &v.camera).unwrap()
        })
        .collect();
    let masks = geometric_verify(&maps, &cameras, &cfg);
    let (mut occ, mut occ_unreliable, mut vis, mut vis_reliable) = (0, 0, 0, 0);
    for (i, view) in ds.views.iter().enumerate() {
        let depth = view.gt_depth.as_ref().unwrap();
        let neighbors = select_source_views(&cameras, i, cfg.num_src_views);
        for y in 0..depth.height {
            for x in 0..depth.width {
                if !interior(depth, x, y, 2) {
                    continue;
                }
                let seen: Vec<Seen> = neighbors.iter().map(|&j| seen_in(view, x, y, &ds.views[j])).collect();
                if seen.contains(&Seen::Ambiguous) {
                    continue;
                }
                let visible = seen.iter().filter(|&&s| s == Seen::Visible).count();
                let label = *masks[i].labels.get(x, y);
                if visible < cfg.min_consistent {
                    occ += 1;
                    occ_unreliable += (label == Label::Unreliable) as usize;
                } else if visible == neighbors.len() {
                    vis += 1;
                    vis_reliable += (label == Label::Reliable) as usize;
                }
            }
        }
    }
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (fo, fv) = (frac(occ_unreliable, occ), frac(vis_reliable, vis));
    check(
        occ > 0 && fo >= 0.9 && fv >= 0.95,
        format!(
            "occluded pixels unreliable {:.1}% of {occ}, co-visible interior reliable {:.1}% of {vis}",
            100.0 * fo,
            100.0 * fv
        ),
    )
}

fn config_defaults() -> Outcome {
    let c = PipelineConfig::default();
    let w = &c.weights;
    let ok = (w.lambda_dssim, w.w_nc, w.w_np, w.w_d) == (0.2, 0.5, 1.0, 1.0)
        && c.schedule
            == Schedule {
                warmup_steps: 2000,
                pm_interval: 1000,
                pm_until: 8000,
                total_steps: 10000,
            }
        && (c.fusion.voxel_size, c.fusion.truncation) == (0.003, 0.02);
    check(
        ok,
        format!(
            "weights {:?}, schedule {:?}, fusion voxel {} truncation {}",
            w, c.schedule, c.fusion.voxel_size, c.fusion.truncation
        ),
    )
}

fn sphere_depth(cam: &Camera, radius: f64) -> DepthMap {
    let o = cam.center();
    Map::from_fn(cam.width, cam.height, |x, y| {
        let ray = cam.pixel_ray_xy(x as f64, y as f64);
        let dir = cam.rotation.transpose() * ray;
        let (a, b, c) = (
            dir.norm_squared(),
            2.0 * o.dot(&dir),
            o.norm_squared() - radius * radius,
        );
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return 0.0;
        }
        let t = (-b - disc.sqrt()) / (2.0 * a);
        if t > 0.0 {
            t
        } else {
            0.0
        }
    })
}

fn tsdf_sphere() -> Outcome {
    let start = Instant::now();
    let n = 20;
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    let cameras: Vec<Camera> = (0..n)
        .map(|k| {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let a = golden * k as f64;
            let eye = Vec3::new(r * a.cos(), r * a.sin(), z) * 3.0;
            let up = if z.abs() > 0.9 { Vec3::x() } else { Vec3::z() };
            Camera::look_at(200.0, 200.0, 200, 200, eye, Vec3::zeros(), up).unwrap()
        })
        .collect();
    let depths: Vec<DepthMap> = cameras.iter().map(|c| sphere_depth(c, 1.0)).collect();
    let mesh = fuse_depth_maps(&depths, &cameras, 0.01, 0.04, 1.0, None).map_err(|e| e.to_string())?;
    let pred = mesh.sample_points(100_000, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let gt: Vec<Vec3> = (0..100_000)
        .map(|_| {
            let z: f64 = rng.gen_range(-1.0..1.0);
            let a: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
            let r = (1.0 - z * z).sqrt();
            Vec3::new(r * a.cos(), r * a.sin(), z)
        })
        .collect();
    let c = chamfer(&pred, &gt).map_err(|e| e.to_string())?;
    let watertight = mesh.is_watertight();
    let detail = format!(
        "chamfer {:.4} (accuracy {:.4}, completeness {:.4}), watertight {watertight}, {} faces",
        c.chamfer,
        c.accuracy,
        c.completeness,
        mesh.faces.len()
    );
    check(c.chamfer < 0.02 && watertight, detail.clone())?;
    within(start.elapsed(), Duration::from_secs(120), detail)
}

/// The default schedule scaled down by five, keeping all six guidance rounds.
fn ablation_schedule() -> Schedule {
    Schedule {
        warmup_steps: 400,
        pm_interval: 200,
        pm_until: 1600,
        total_steps: 2000,
    }
}

fn ablation_chamfer(ds: &Dataset, seed: u64, use_patchmatch: bool, use_normal_prior: bool) -> Result<f64, String> {
    let cfg = PipelineConfig {
        schedule: ablation_schedule(),
        use_patchmatch,
        use_normal_prior,
        seed,
        ..Default::default()
    };
    let out = run(ds, &cfg, None).map_err(|e| e.to_string())?;
    out.report
        .chamfer
        .map(|c| c.chamfer)
        .ok_or_else(|| "no chamfer in report".to_string())
}

fn ablation_ordering() -> Outcome {
    let spec = SyntheticSpec {
        scene_kind: SceneKind::TwoPlanes,
        n_views: 8,
        resolution: [160, 120],
        ..Default::default()
    };
    let mut sums = [0.0; 3];
    let mut per_seed = Vec::new();
    let mut slowest = Duration::ZERO;
    for seed in 0..3u64 {
        let start = Instant::now();
        let ds = gen_synthetic(&spec, seed).map_err(|e| e.to_string())?;
        let full = ablation_chamfer(&ds, seed, true, true)?;
        let no_normal = ablation_chamfer(&ds, seed, true, false)?;
        let no_pm = ablation_chamfer(&ds, seed, false, true)?;
        slowest = slowest.max(start.elapsed());
        for (s, v) in sums.iter_mut().zip([full, no_normal, no_pm]) {
            *s += v / 3.0;
        }
        per_seed.push(format!("seed {seed}: {full:.4}/{no_normal:.4}/{no_pm:.4}"));
    }
    let [full, no_normal, no_pm] = sums;
    let detail = format!(
        "mean chamfer full {full:.4}, w/o normal {no_normal:.4}, w/o patch-match {no_pm:.4} ({})",
        per_seed.join(", ")
    );
    check(
        full <= no_normal && no_normal <= no_pm && full < 0.5 * no_pm,
        detail.clone(),
    )?;
    within(slowest, Duration::from_secs(15 * 60), detail)
}

fn cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_splatsurf"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = dir.path();
    let scene_cfg = root.join("scene.toml");
    std::fs::write(
        &scene_cfg,
        "scene_kind = \"two_planes\"\nn_views = 4\nresolution = [64, 48]\ninit_points = 800\n",
    )
    .map_err(|e| e.to_string())?;
    let run_cfg = root.join("run.toml");
    std::fs::write(
        &run_cfg,
        "num_surfels = 800\n[schedule]\nwarmup_steps = 40\npm_interval = 20\npm_until = 80\ntotal_steps = 100\n\
         [fusion]\nvoxel_size = 0.006\ntruncation = 0.02\n",
    )
    .map_err(|e| e.to_string())?;
    let data = root.join("data");
    cli(&[
        "gen-synthetic",
        "--config",
        path(&scene_cfg),
        "--out",
        path(&data),
        "--seed",
        "8",
    ])?;
    let (a, b) = (root.join("a"), root.join("b"));
    for out in [&a, &b] {
        cli(&[
            "reconstruct",
            "--config",
            path(&run_cfg),
            "--data",
            path(&data),
            "--out",
            path(out),
            "--seed",
            "8",
        ])?;
    }
    let mut details = Vec::new();
    let mut ok = true;
    for f in ["mesh.ply", "losses.csv"] {
        let (x, y) = (
            std::fs::read(a.join(f)).map_err(|e| e.to_string())?,
            std::fs::read(b.join(f)).map_err(|e| e.to_string())?,
        );
        let same = x == y && !x.is_empty();
        ok &= same;
        details.push(format!("{f} {} bytes identical {same}", x.len()));
    }
    check(ok, details.join(", "))
}

fn metric_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x: Vec<Vec3> = (0..2000).map(|_| Vec3::new(rng.gen(), rng.gen(), rng.gen())).collect();
    let y: Vec<Vec3> = x
        .iter()
        .map(|p| p + Vec3::new(rng.gen_range(-0.05..0.05), 0.0, rng.gen_range(-0.05..0.05)))
        .collect();
    let c = chamfer(&x, &x).map_err(|e| e.to_string())?;
    let f = fscore(&x, &x, 0.01).map_err(|e| e.to_string())?;
    let img = Map::from_fn(40, 30, |_, _| Vec3::new(rng.gen(), rng.gen(), rng.gen()));
    let p = psnr(&img, &img).map_err(|e| e.to_string())?;
    let s = ssim(&img, &img).map_err(|e| e.to_string())?;
    let mut last = -1.0;
    let mut monotone = true;
    for k in 1..=10 {
        let tau = 0.006 * k as f64;
        let v = fscore(&x, &y, tau).map_err(|e| e.to_string())?.fscore;
        monotone &= v >= last;
        last = v;
    }
    check(
        c.chamfer == 0.0
            && (f.precision, f.recall, f.fscore) == (1.0, 1.0, 1.0)
            && p == 99.0
            && (s - 1.0).abs() < 1e-12
            && monotone,
        format!(
            "chamfer(x,x) {}, fscore(x,x) ({}, {}, {}), psnr cap {p}, ssim(x,x) {s}, monotone over 10 tau {monotone}",
            c.chamfer, f.precision, f.recall, f.fscore
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("geometry round-trips", geometry_round_trips),
        ("renderer gradients", renderer_gradients),
        ("patch-match recovery", patchmatch_recovery),
        ("geometric verification", verification_occlusions),
        ("loss constants", config_defaults),
        ("tsdf sphere", tsdf_sphere),
        ("ablation ordering", ablation_ordering),
        ("determinism", determinism),
        ("metric identities", metric_identities),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let (mut ran, mut failed) = (0, 0);
    for (i, (name, f)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("{tag} {}. {name}: {detail} [{:.1?}]", i + 1, start.elapsed());
    }
    println!("{}/{} criteria passed", ran - failed, ran);
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
