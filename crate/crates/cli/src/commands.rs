use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use nirev_core::blur::average_blur;
use nirev_core::calibrate::{estimate_homography, read_correspondences, warp_events, warp_frame};
use nirev_core::consistency::{sobel_edges, structural_consistency};
use nirev_core::event_sim::{inject_noise, simulate_events};
use nirev_core::fusion::{fusion_grad_check, mdednet_forward, FusionCheckConfig, MdedNetParams, Parameters};
use nirev_core::io::{self as nio, BitDepth};
use nirev_core::metrics::{mse, psnr, rmse_voxel, ssim};
use nirev_core::pipeline::{read_manifest, run_eval, run_synth, PipelineConfig};
use nirev_core::{seed, voxel, Error, Precision, Real};

use crate::{Cli, Command, Global};

pub enum Outcome {
    Success,
    /// Some inputs were missing or unusable (exit status 2).
    DataIncomplete(String),
    /// A verification threshold was not met (exit status 3).
    CheckFailed(String),
}

/// Usage-level problem detected after argument parsing.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn exit_code_for(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return 1;
    }
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 1,
        _ => 2,
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn load_config(g: &Global) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(o) = &g.out {
        cfg.paths.output = o.clone();
    }
    Ok(cfg)
}

fn jobs(g: &Global) -> usize {
    g.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get())).max(1)
}

fn out_dir(cfg: &PipelineConfig) -> Result<PathBuf> {
    let dir = cfg.paths.output.clone();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

pub fn run(cli: Cli) -> Result<Outcome> {
    let g = cli.global;
    if g.jobs == Some(0) {
        return Err(usage("--jobs must be at least 1"));
    }
    let mut cfg = load_config(&g)?;
    match cli.command {
        Command::Synth { input } => {
            if let Some(i) = input {
                cfg.paths.input = i;
            }
            synth(&cfg, jobs(&g))
        }
        Command::SimulateEvents { frames, csv } => simulate(&cfg, &frames, csv),
        Command::Voxelize { events, bins, width, height } => voxelize_cmd(&cfg, &events, bins, width, height),
        Command::Consistency { visible, nir } => consistency_cmd(&cfg, &visible, &nir),
        Command::Metrics { manifest, predictions, min_psnr, pred, truth } => match (manifest, pred) {
            (Some(m), _) => batch_metrics(&cfg, &m, &predictions.expect("clap requires it"), min_psnr),
            (None, Some(p)) => pair_metrics(&p, &truth.expect("clap requires it")),
            (None, None) => Err(usage("metrics needs --manifest/--predictions or --pred/--truth")),
        },
        Command::GradCheck { instances, channels, size, step, tol } => {
            grad_check(g.seed.unwrap_or(0), instances, FusionCheckConfig { channels, size, step, tolerance: tol })
        }
        Command::Forward { blurry, voxels, params, save_params } => {
            forward(&cfg, &blurry, &voxels, params.as_deref(), save_params.as_deref())
        }
        Command::Calibrate { correspondences, warp_frame, warp_events, width, height } => {
            calibrate(&cfg, &correspondences, warp_frame.as_deref(), warp_events.as_deref(), width, height)
        }
        Command::PrintConfig => {
            print!("{}", cfg.to_toml());
            Ok(Outcome::Success)
        }
        Command::ParamsCount => {
            let plan = cfg.channel_plan();
            plan.validate()?;
            println!("{}", plan.param_count());
            Ok(Outcome::Success)
        }
    }
}

fn synth(cfg: &PipelineConfig, jobs: usize) -> Result<Outcome> {
    let out = cfg.paths.output.clone();
    let report = run_synth(cfg, &out, jobs)?;
    println!("wrote {} samples to {} ({} failed)", report.manifests.len(), out.display(), report.failures.len());
    for (id, e) in &report.failures {
        eprintln!("  {id}: {e}");
    }
    if report.manifests.is_empty() && report.failures.is_empty() {
        return Ok(Outcome::DataIncomplete(format!("no scene pairs found in {}", cfg.paths.input.display())));
    }
    if !report.failures.is_empty() {
        return Ok(Outcome::DataIncomplete(format!("{} samples failed", report.failures.len())));
    }
    Ok(Outcome::Success)
}

fn simulate(cfg: &PipelineConfig, paths: &[PathBuf], csv: bool) -> Result<Outcome> {
    if paths.len() < 2 {
        return Err(usage("simulate-events needs at least two frames"));
    }
    let frames = paths
        .iter()
        .map(|p| nio::read_pgm_file(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<Vec<_>>>()?;
    let clean = simulate_events(&frames, &cfg.events)?;
    let mut noise = cfg.noise.clone();
    noise.seed = seed::mix(cfg.seed, noise.seed);
    let noisy = inject_noise(&clean, &noise)?;
    let dir = out_dir(cfg)?;
    nio::write_events_file(&clean, dir.join("E_c.evt"))?;
    nio::write_events_file(&noisy, dir.join("E_n.evt"))?;
    if csv {
        nio::write_events_csv(&clean, BufWriter::new(File::create(dir.join("E_c.csv"))?))?;
        nio::write_events_csv(&noisy, BufWriter::new(File::create(dir.join("E_n.csv"))?))?;
    }
    // the blurry frame of the same sequence, handy for inspection
    nio::write_pgm_file(&average_blur(&frames)?, BitDepth::Sixteen, dir.join("B.pgm"))?;
    println!("clean events: {}\nnoisy events: {}", clean.len(), noisy.len());
    Ok(Outcome::Success)
}

fn voxelize_cmd(
    cfg: &PipelineConfig,
    path: &Path,
    bins: Option<usize>,
    width: Option<u32>,
    height: Option<u32>,
) -> Result<Outcome> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let stream = if is_csv {
        let (Some(w), Some(h)) = (width, height) else {
            return Err(usage("CSV input needs --width and --height"));
        };
        nio::read_events_csv(BufReader::new(File::open(path)?), w, h, None)?
    } else {
        nio::read_events_file(path).with_context(|| format!("reading {}", path.display()))?
    };
    let grid = voxel::voxelize(&stream, bins.unwrap_or(cfg.voxel_bins))?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("events");
    let dest = out_dir(cfg)?.join(format!("{stem}.vox"));
    nio::write_voxel_file(&grid, &dest)?;
    println!("{} events -> {} ({}x{}x{})", stream.len(), dest.display(), grid.shape().0, grid.height(), grid.width());
    Ok(Outcome::Success)
}

fn consistency_cmd(cfg: &PipelineConfig, visible: &Path, nir: &Path) -> Result<Outcome> {
    let v = nio::read_pgm_file(visible).with_context(|| format!("reading {}", visible.display()))?;
    let n = nio::read_pgm_file(nir).with_context(|| format!("reading {}", nir.display()))?;
    let s_v = sobel_edges(&v, cfg.edge_threshold)?;
    let s_n = sobel_edges(&n, cfg.edge_threshold)?;
    let c = structural_consistency(&s_v, &s_n)?;
    let dest = out_dir(cfg)?.join("C.pgm");
    nio::write_pgm_file(&c.to_frame(), BitDepth::Eight, &dest)?;
    let count = |v: f64| c.data().iter().filter(|&&x| x == v).count();
    println!("consistent edges: {}  conflicting: {}  flat: {}", count(1.0), count(0.0), count(0.5));
    Ok(Outcome::Success)
}

fn batch_metrics(cfg: &PipelineConfig, manifest: &Path, predictions: &Path, min_psnr: Option<f64>) -> Result<Outcome> {
    let records = read_manifest(File::open(manifest).with_context(|| format!("opening {}", manifest.display()))?)?;
    let root = manifest.parent().unwrap_or(Path::new("."));
    let report = run_eval(&records, root, predictions)?;
    let dest = out_dir(cfg)?.join("report.csv");
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    fs::write(&dest, &buf)?;
    io::stdout().write_all(&buf)?;
    if records.is_empty() {
        return Ok(Outcome::DataIncomplete("manifest lists no samples".into()));
    }
    if report.incomplete() > 0 {
        return Ok(Outcome::DataIncomplete(format!(
            "{} of {} samples have no usable prediction",
            report.incomplete(),
            records.len()
        )));
    }
    if let (Some(min), (Some(mean), _, _)) = (min_psnr, report.means()) {
        if mean < min {
            return Ok(Outcome::CheckFailed(format!("mean PSNR {mean:.3} dB below {min} dB")));
        }
    }
    Ok(Outcome::Success)
}

fn pair_metrics(pred: &Path, truth: &Path) -> Result<Outcome> {
    let is_vox = |p: &Path| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("vox"));
    match (is_vox(pred), is_vox(truth)) {
        (true, true) => {
            let r = rmse_voxel(&nio::read_voxel_file(pred)?, &nio::read_voxel_file(truth)?)?;
            println!("rmse {r:.6}");
        }
        (false, false) => {
            let p = nio::read_pgm_file(pred)?;
            let t = nio::read_pgm_file(truth)?;
            println!("mse {:.8}\npsnr {:.6}\nssim {:.6}", mse(&p, &t)?, psnr(&p, &t, 1.0)?, ssim(&p, &t)?);
        }
        _ => return Err(usage("--pred and --truth must both be PGM frames or both VOX1 grids")),
    }
    Ok(Outcome::Success)
}

fn grad_check(base_seed: u64, instances: usize, cfg: FusionCheckConfig) -> Result<Outcome> {
    let mut worst = 0.0f64;
    let mut failed = 0;
    for i in 0..instances {
        let s = seed::mix(base_seed, i as u64);
        let r = fusion_grad_check(s, &cfg)?;
        worst = worst.max(r.max_rel_error);
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        println!("instance {i:2} seed {s:#018x}: {} values, max rel err {:.3e} {verdict}", r.checked, r.max_rel_error);
        if !r.passed() {
            failed += 1;
            for o in &r.worst {
                println!(
                    "    index {}: analytic {:.6e} numeric {:.6e} rel {:.3e}",
                    o.index, o.analytic, o.numeric, o.rel_error
                );
            }
        }
    }
    println!("max rel err {worst:.3e} (tolerance {:.1e})", cfg.tolerance);
    if failed > 0 {
        return Ok(Outcome::CheckFailed(format!("{failed} of {instances} instances above tolerance")));
    }
    Ok(Outcome::Success)
}

fn forward(
    cfg: &PipelineConfig,
    blurry: &Path,
    voxels: &Path,
    params: Option<&Path>,
    save: Option<&Path>,
) -> Result<Outcome> {
    match cfg.precision {
        Precision::F32 => forward_typed::<f32>(cfg, blurry, voxels, params, save),
        Precision::F64 => forward_typed::<f64>(cfg, blurry, voxels, params, save),
    }
}

fn forward_typed<T: Real>(
    cfg: &PipelineConfig,
    blurry: &Path,
    voxels: &Path,
    params: Option<&Path>,
    save: Option<&Path>,
) -> Result<Outcome> {
    let b = nio::read_pgm_file(blurry).with_context(|| format!("reading {}", blurry.display()))?;
    let v = nio::read_voxel_file(voxels).with_context(|| format!("reading {}", voxels.display()))?;
    let mut plan = cfg.channel_plan();
    plan.bins = v.shape().0;
    let mut p = MdedNetParams::<T>::init(&mut seed::rng(cfg.seed), plan)?;
    if let Some(path) = params {
        let tensors = nio::read_params(BufReader::new(File::open(path)?))
            .with_context(|| format!("reading {}", path.display()))?;
        p.load_named(&tensors)?;
    }
    if let Some(path) = save {
        nio::write_params(&p.to_named(), BufWriter::new(File::create(path)?))?;
    }
    let (sharp, clean) = mdednet_forward(&b, &v, &p)?;
    let dir = out_dir(cfg)?;
    nio::write_pgm_file(&sharp, BitDepth::Sixteen, dir.join("sharp_pred.pgm"))?;
    nio::write_voxel_file(&clean, dir.join("voxels_pred.vox"))?;
    println!("parameters: {}", p.param_count());
    Ok(Outcome::Success)
}

fn calibrate(
    cfg: &PipelineConfig,
    corr: &Path,
    frame: Option<&Path>,
    events: Option<&Path>,
    width: Option<u32>,
    height: Option<u32>,
) -> Result<Outcome> {
    let pairs = read_correspondences(File::open(corr).with_context(|| format!("opening {}", corr.display()))?)?;
    let h = estimate_homography(&pairs)?;
    let dir = out_dir(cfg)?;
    let mut buf = Vec::new();
    h.write_text(&mut buf)?;
    fs::write(dir.join("homography.txt"), &buf)?;
    io::stdout().write_all(&buf)?;
    if let Some(f) = frame {
        let src = nio::read_pgm_file(f)?;
        let w = width.map_or(src.width(), |v| v as usize);
        let hh = height.map_or(src.height(), |v| v as usize);
        nio::write_pgm_file(&warp_frame(&src, &h, w, hh), BitDepth::Sixteen, dir.join("warped.pgm"))?;
    }
    if let Some(e) = events {
        let src = nio::read_events_file(e)?;
        let w = width.unwrap_or(src.width());
        let hh = height.unwrap_or(src.height());
        let warped = warp_events(&src, &h, w, hh)?;
        println!("kept {} of {} events", warped.len(), src.len());
        nio::write_events_file(&warped, dir.join("warped.evt"))?;
    }
    Ok(Outcome::Success)
}
