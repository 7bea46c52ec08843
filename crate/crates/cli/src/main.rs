use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use splatsurf::dataset::{self, Dataset, SyntheticSpec};
use splatsurf::io::{pfm, ply, png};
use splatsurf::metrics::{self, Chamfer, FScore};
use splatsurf::patchmatch::{self, HypothesisMap, ViewSet};
use splatsurf::pipeline::{self, PipelineConfig};
use splatsurf::renderer::Renderer;
use splatsurf::scene::SurfelScene;
use splatsurf::{DepthMap, Error, NormalMap};

#[derive(Parser)]
#[command(
    name = "splatsurf",
    version,
    about = "Surfel-based multi-view surface reconstruction"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset with ground truth.
    GenSynthetic {
        #[command(flatten)]
        common: Common,
    },
    /// Refine depth/normal maps with patch-match.
    Refine {
        #[command(flatten)]
        common: Common,
        /// Dataset directory.
        #[arg(long)]
        data: PathBuf,
        /// Directory holding depth/<view>.pfm and normal/<view>.pfm.
        #[arg(long)]
        maps: PathBuf,
    },
    /// Cross-view verification of depth/normal maps; writes masks only.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        maps: PathBuf,
    },
    /// Full reconstruction of a dataset.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Fuse depth maps into a mesh.
    Fuse {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Directory holding depth/<view>.pfm.
        #[arg(long)]
        maps: PathBuf,
    },
    /// Render a surfel checkpoint at every dataset camera.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Surfel checkpoint written by `reconstruct`.
        #[arg(long)]
        scene: PathBuf,
    },
    /// Compare a mesh and/or rendered images against ground truth.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Predicted mesh.
        #[arg(long)]
        mesh: Option<PathBuf>,
        /// Ground-truth mesh.
        #[arg(long)]
        gt: Option<PathBuf>,
        /// Directory of rendered color/<view>.png to compare with the dataset images.
        #[arg(long)]
        renders: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// F-score distance threshold.
        #[arg(long, default_value_t = 0.01)]
        tau: f64,
    },
}

enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidConfig(_) | Error::InvalidSpec(_) => ExitCode::from(1),
                e if e.is_numeric() => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

fn load_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read config {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::Usage(format!("invalid config {}: {e}", path.display())))
}

fn pipeline_config(common: &Common) -> CliResult<PipelineConfig> {
    let mut cfg: PipelineConfig = load_config(common.config.as_deref())?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes");
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn read_maps(dir: &Path, ds: &Dataset, normals: bool) -> CliResult<(Vec<DepthMap>, Vec<Option<NormalMap>>)> {
    let mut depths = Vec::new();
    let mut norms = Vec::new();
    for v in &ds.views {
        let d = pfm::read_depth(&dir.join("depth").join(format!("{}.pfm", v.stem())))?;
        v.image.check_shape(&d, "depth map vs image")?;
        depths.push(d);
        norms.push(if normals {
            let n = pfm::read_normals(&dir.join("normal").join(format!("{}.pfm", v.stem())))?;
            v.image.check_shape(&n, "normal map vs image")?;
            Some(n)
        } else {
            None
        });
    }
    Ok((depths, norms))
}

fn hypothesis_maps(dir: &Path, ds: &Dataset) -> CliResult<Vec<HypothesisMap>> {
    let (depths, normals) = read_maps(dir, ds, true)?;
    depths
        .iter()
        .zip(&normals)
        .zip(&ds.views)
        .map(|((d, n), v)| {
            Ok(HypothesisMap::from_maps(
                d,
                n.as_ref().expect("normals read"),
                &v.camera,
            )?)
        })
        .collect()
}

fn execute(command: Command) -> CliResult<()> {
    match command {
        Command::GenSynthetic { common } => {
            let spec: SyntheticSpec = load_config(common.config.as_deref())?;
            let ds = dataset::gen_synthetic(&spec, common.seed.unwrap_or(0))?;
            dataset::save_colmap(&ds, &common.out)?;
            println!("wrote {} views to {}", ds.views.len(), common.out.display());
        }
        Command::Refine { common, data, maps } => {
            let cfg = pipeline_config(&common)?;
            let ds = dataset::load_colmap(&data)?;
            ds.require_views(2)?;
            let input = hypothesis_maps(&maps, &ds)?;
            let grays: Vec<_> = ds.views.iter().map(|v| v.image.to_gray()).collect();
            let cameras = ds.cameras();
            let views = ViewSet {
                grays: &grays,
                cameras: &cameras,
            };
            let refined = patchmatch::refine(&input, &views, &cfg.patchmatch, cfg.seed);
            std::fs::create_dir_all(common.out.join("depth"))?;
            std::fs::create_dir_all(common.out.join("normal"))?;
            for (m, v) in refined.iter().zip(&ds.views) {
                pfm::write_depth(
                    &common.out.join("depth").join(format!("{}.pfm", v.stem())),
                    &m.depth_map(),
                )?;
                pfm::write_normals(
                    &common.out.join("normal").join(format!("{}.pfm", v.stem())),
                    &m.normal_map(),
                )?;
            }
            println!("refined {} views", refined.len());
        }
        Command::Verify { common, data, maps } => {
            let cfg = pipeline_config(&common)?;
            let ds = dataset::load_colmap(&data)?;
            ds.require_views(2)?;
            let input = hypothesis_maps(&maps, &ds)?;
            let masks = patchmatch::geometric_verify(&input, &ds.cameras(), &cfg.patchmatch);
            std::fs::create_dir_all(common.out.join("mask"))?;
            for (m, v) in masks.iter().zip(&ds.views) {
                png::write_mask(&common.out.join("mask").join(format!("{}.png", v.stem())), m)?;
            }
            println!("verified {} views", masks.len());
        }
        Command::Reconstruct { common, data } => {
            let cfg = pipeline_config(&common)?;
            let ds = dataset::load_colmap(&data)?;
            std::fs::create_dir_all(&common.out)?;
            let out = pipeline::run(&ds, &cfg, Some(&common.out))?;
            ply::write_mesh(&common.out.join("mesh.ply"), &out.mesh)?;
            out.scene.save_ply(&common.out.join("scene.ply"))?;
            std::fs::write(common.out.join("losses.csv"), pipeline::losses_csv(&out.losses))?;
            write_json(&common.out.join("report.json"), &out.report)?;
            println!(
                "mesh with {} vertices and {} faces written to {}",
                out.mesh.vertices.len(),
                out.mesh.faces.len(),
                common.out.display()
            );
        }
        Command::Fuse { common, data, maps } => {
            let cfg = pipeline_config(&common)?;
            let ds = dataset::load_colmap(&data)?;
            let (depths, _) = read_maps(&maps, &ds, false)?;
            let f = &cfg.fusion;
            let mesh = splatsurf::fusion::fuse_depth_maps(
                &depths,
                &ds.cameras(),
                f.voxel_size,
                f.truncation,
                f.min_weight,
                None,
            )?;
            std::fs::create_dir_all(&common.out)?;
            ply::write_mesh(&common.out.join("mesh.ply"), &mesh)?;
            println!("mesh with {} faces", mesh.faces.len());
        }
        Command::Render { common, data, scene } => {
            let _cfg = pipeline_config(&common)?;
            let ds = dataset::load_colmap(&data)?;
            let scene = SurfelScene::load_ply(&scene)?;
            let r = Renderer::default();
            for sub in ["color", "depth", "normal"] {
                std::fs::create_dir_all(common.out.join(sub))?;
            }
            for v in &ds.views {
                let out = r.render(&scene, &v.camera)?;
                let stem = v.stem();
                png::write_rgb(&common.out.join("color").join(format!("{stem}.png")), &out.color)?;
                pfm::write_depth(&common.out.join("depth").join(format!("{stem}.pfm")), &out.depth)?;
                pfm::write_normals(&common.out.join("normal").join(format!("{stem}.pfm")), &out.normal)?;
            }
            println!("rendered {} views", ds.views.len());
        }
        Command::Eval {
            common,
            mesh,
            gt,
            renders,
            data,
            tau,
        } => {
            let report = evaluate(&common, mesh, gt, renders, data, tau)?;
            std::fs::create_dir_all(&common.out)?;
            write_json(&common.out.join("report.json"), &report)?;
            println!("{}", serde_json::to_string(&report).expect("report serializes"));
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalReport {
    chamfer: Option<f64>,
    accuracy: Option<f64>,
    completeness: Option<f64>,
    precision: Option<f64>,
    recall: Option<f64>,
    fscore: Option<f64>,
    tau: f64,
    psnr: Option<f64>,
    ssim: Option<f64>,
    samples: usize,
}

fn evaluate(
    common: &Common,
    mesh: Option<PathBuf>,
    gt: Option<PathBuf>,
    renders: Option<PathBuf>,
    data: Option<PathBuf>,
    tau: f64,
) -> CliResult<EvalReport> {
    if !(tau > 0.0) {
        return Err(Failure::Usage(format!("--tau must be positive, got {tau}")));
    }
    let seed = common.seed.unwrap_or(0);
    let mut report = EvalReport {
        chamfer: None,
        accuracy: None,
        completeness: None,
        precision: None,
        recall: None,
        fscore: None,
        tau,
        psnr: None,
        ssim: None,
        samples: metrics::DEFAULT_SAMPLES,
    };
    let mut did_something = false;
    match (mesh, gt) {
        (Some(m), Some(g)) => {
            let pred = ply::read_mesh(&m)?;
            let gt = ply::read_mesh(&g)?;
            if pred.is_empty() || gt.is_empty() {
                return Err(Error::EmptyInput.into());
            }
            let (
                Chamfer {
                    accuracy,
                    completeness,
                    chamfer,
                },
                FScore {
                    precision,
                    recall,
                    fscore,
                },
            ) = pipeline::evaluate_mesh(&pred, &gt, tau, seed)?;
            report.chamfer = Some(chamfer);
            report.accuracy = Some(accuracy);
            report.completeness = Some(completeness);
            report.precision = Some(precision);
            report.recall = Some(recall);
            report.fscore = Some(fscore);
            did_something = true;
        }
        (None, None) => {}
        _ => return Err(Failure::Usage("--mesh and --gt must be given together".into())),
    }
    match (renders, data) {
        (Some(r), Some(d)) => {
            let ds = dataset::load_colmap(&d)?;
            let (mut psnr, mut ssim) = (0.0, 0.0);
            for v in &ds.views {
                let img = png::read_rgb(&r.join("color").join(format!("{}.png", v.stem())))?;
                psnr += metrics::psnr(&img, &v.image)?;
                ssim += metrics::ssim(&img, &v.image)?;
            }
            let n = ds.views.len().max(1) as f64;
            report.psnr = Some(psnr / n);
            report.ssim = Some(ssim / n);
            did_something = true;
        }
        (None, None) => {}
        _ => return Err(Failure::Usage("--renders and --data must be given together".into())),
    }
    if !did_something {
        return Err(Failure::Usage(
            "nothing to evaluate: pass --mesh/--gt and/or --renders/--data".into(),
        ));
    }
    Ok(report)
}
