use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rayon::prelude::*;

use crate::blur::{add_frame_noise, average_blur, gen_trajectory, render_sequence, BlurConfig};
use crate::consistency::{sobel_edges, structural_consistency, ConsistencyMap};
use crate::error::{Error, Result};
use crate::event_sim::{inject_noise, simulate_events, NoiseConfig};
use crate::io::{self, BitDepth};
use crate::seed;
use crate::types::Frame;
use crate::voxel::voxelize;

use super::config::PipelineConfig;
use super::manifest::{write_manifest, SampleManifest, Split, MANIFEST_FILE};

const VISIBLE_SUFFIX: &str = "_vis.pgm";
const NIR_SUFFIX: &str = "_nir.pgm";

// stage tags mixed into the per-sample seed
const TAG_CROP: u64 = 0;
const TAG_TRAJECTORY: u64 = 1;
const TAG_FRAME_NOISE: u64 = 2;
const TAG_EVENT_NOISE: u64 = 3;

/// A paired visible / NIR source image.
#[derive(Debug, Clone)]
pub struct SceneSource {
    pub name: String,
    pub visible: Frame,
    pub nir: Frame,
}

pub fn sample_id(scene: &str, trajectory: usize) -> String {
    format!("{scene}_{trajectory:02}")
}

/// Scene-level split by hash of the scene name: every trajectory of a scene
/// lands in the same split.
pub fn split_for(scene: &str, test_fraction: f64) -> Split {
    let u = (seed::splitmix64(seed::fnv1a(scene)) >> 11) as f64 / (1u64 << 53) as f64;
    if u < test_fraction {
        Split::Test
    } else {
        Split::Train
    }
}

/// Lists `(scene, visible path, nir path)` for every complete pair in `dir`,
/// sorted by scene name.
pub fn discover_scenes(dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let mut scenes = Vec::new();
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(scene) = name.strip_suffix(VISIBLE_SUFFIX) {
            let nir = dir.join(format!("{scene}{NIR_SUFFIX}"));
            if nir.is_file() {
                scenes.push((scene.to_string(), path.clone(), nir));
            }
        }
    }
    scenes.sort();
    Ok(scenes)
}

pub fn load_scene(name: &str, visible: &Path, nir: &Path) -> Result<SceneSource> {
    let visible = io::read_pgm_file(visible)?;
    let nir = io::read_pgm_file(nir)?;
    if !visible.same_dims(&nir) {
        return Err(Error::Shape(format!(
            "scene {name}: visible {}x{} vs NIR {}x{}",
            visible.width(),
            visible.height(),
            nir.width(),
            nir.height()
        )));
    }
    Ok(SceneSource { name: name.to_string(), visible, nir })
}

/// Seeded crop shared by all trajectories of a scene: `(visible, nir, [x0, y0])`.
pub fn scene_crop(scene: &SceneSource, cfg: &PipelineConfig) -> Result<(Frame, Frame, [usize; 2])> {
    let (w, h) = (scene.visible.width(), scene.visible.height());
    if w < cfg.crop_width || h < cfg.crop_height {
        return Err(Error::Shape(format!(
            "scene {} is {w}x{h}, smaller than the {}x{} crop",
            scene.name, cfg.crop_width, cfg.crop_height
        )));
    }
    let mut rng = seed::rng(seed::mix(seed::sample_seed(cfg.seed, &scene.name), TAG_CROP));
    let x0 = rng.random_range(0..=w - cfg.crop_width);
    let y0 = rng.random_range(0..=h - cfg.crop_height);
    let vis = scene.visible.crop(x0, y0, cfg.crop_width, cfg.crop_height)?;
    let nir = scene.nir.crop(x0, y0, cfg.crop_width, cfg.crop_height)?;
    Ok((vis, nir, [x0, y0]))
}

fn stage<T>(name: &'static str, id: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage { stage: name, sample: id.to_string(), source: Box::new(e) })
}

/// Generates one sample and writes its seven artifacts under
/// `out_dir/samples/<id>/`. Steps run in a fixed order: crop, edge maps and
/// consistency, trajectory, rendering, clean events from the visible
/// sequence, NIR averaging, event noise, frame noise, voxelization.
pub fn generate_sample(
    scene: &SceneSource,
    trajectory: usize,
    cfg: &PipelineConfig,
    out_dir: &Path,
) -> Result<SampleManifest> {
    let id = sample_id(&scene.name, trajectory);
    let sample_seed = seed::sample_seed(cfg.seed, &id);
    let (vis, sharp, crop) = stage("crop", &id, scene_crop(scene, cfg))?;

    let consistency = stage(
        "consistency",
        &id,
        (|| {
            let s_v = sobel_edges(&vis, cfg.edge_threshold)?;
            let s_n = sobel_edges(&sharp, cfg.edge_threshold)?;
            structural_consistency(&s_v, &s_n)
        })(),
    )?;

    let blur_cfg =
        BlurConfig { seed: seed::mix(seed::mix(sample_seed, TAG_TRAJECTORY), cfg.blur.seed), ..cfg.blur.clone() };
    let traj = stage("trajectory", &id, gen_trajectory(&blur_cfg))?;
    let vis_seq = render_sequence(&vis, &traj);
    let nir_seq = render_sequence(&sharp, &traj);
    let clean = stage("events", &id, simulate_events(&vis_seq, &cfg.events))?;
    let blurry = stage("blur", &id, average_blur(&nir_seq))?;
    let noise_cfg =
        NoiseConfig { seed: seed::mix(seed::mix(sample_seed, TAG_EVENT_NOISE), cfg.noise.seed), ..cfg.noise.clone() };
    let noisy = stage("event-noise", &id, inject_noise(&clean, &noise_cfg))?;
    let frame_noise_seed = seed::mix(seed::mix(sample_seed, TAG_FRAME_NOISE), cfg.blur.seed);
    let blurry = stage("frame-noise", &id, add_frame_noise(&blurry, cfg.blur.noise_sigma, frame_noise_seed))?;
    let vox_clean = stage("voxelize", &id, voxelize(&clean, cfg.voxel_bins))?;
    let vox_noisy = stage("voxelize", &id, voxelize(&noisy, cfg.voxel_bins))?;

    let rel = |name: &str| format!("samples/{id}/{name}");
    let record = SampleManifest {
        id: id.clone(),
        scene: scene.name.clone(),
        trajectory,
        seed: sample_seed,
        split: split_for(&scene.name, cfg.test_fraction),
        crop,
        sharp: rel("S.pgm"),
        blurry: rel("B.pgm"),
        consistency: rel("C.pgm"),
        events_clean: rel("E_c.evt"),
        events_noisy: rel("E_n.evt"),
        voxels_clean: rel("E_c.vox"),
        voxels_noisy: rel("E_n.vox"),
    };
    stage(
        "write",
        &id,
        (|| {
            fs::create_dir_all(out_dir.join(format!("samples/{id}")))?;
            io::write_pgm_file(&sharp, BitDepth::Sixteen, out_dir.join(&record.sharp))?;
            io::write_pgm_file(&blurry, BitDepth::Sixteen, out_dir.join(&record.blurry))?;
            io::write_pgm_file(&consistency.to_frame(), BitDepth::Eight, out_dir.join(&record.consistency))?;
            io::write_events_file(&clean, out_dir.join(&record.events_clean))?;
            io::write_events_file(&noisy, out_dir.join(&record.events_noisy))?;
            io::write_voxel_file(&vox_clean, out_dir.join(&record.voxels_clean))?;
            io::write_voxel_file(&vox_noisy, out_dir.join(&record.voxels_noisy))?;
            Ok(())
        })(),
    )?;
    stage("validate", &id, validate_sample(out_dir, &record))?;
    Ok(record)
}

/// Re-reads every artifact of a sample with the core readers and checks that
/// their dimensions agree.
pub fn validate_sample(out_dir: &Path, rec: &SampleManifest) -> Result<()> {
    let sharp = io::read_pgm_file(out_dir.join(&rec.sharp))?;
    let blurry = io::read_pgm_file(out_dir.join(&rec.blurry))?;
    let c = ConsistencyMap::from_frame(&io::read_pgm_file(out_dir.join(&rec.consistency))?);
    let e_c = io::read_events_file(out_dir.join(&rec.events_clean))?;
    let e_n = io::read_events_file(out_dir.join(&rec.events_noisy))?;
    let v_c = io::read_voxel_file(out_dir.join(&rec.voxels_clean))?;
    let v_n = io::read_voxel_file(out_dir.join(&rec.voxels_noisy))?;
    let (w, h) = (sharp.width(), sharp.height());
    let dims_ok = blurry.same_dims(&sharp)
        && (c.width(), c.height()) == (w, h)
        && [&e_c, &e_n].iter().all(|s| (s.width() as usize, s.height() as usize) == (w, h))
        && [&v_c, &v_n].iter().all(|v| (v.width(), v.height()) == (w, h) && v.shape() == v_c.shape());
    if !dims_ok {
        return Err(Error::Shape(format!("artifacts of {} disagree on dimensions", rec.id)));
    }
    Ok(())
}

#[derive(Debug)]
pub struct SynthReport {
    /// Successful samples, sorted by id.
    pub manifests: Vec<SampleManifest>,
    /// Failed samples (or scenes) with their stage-tagged errors.
    pub failures: Vec<(String, Error)>,
}

/// Generates every sample of every scene in `cfg.paths.input` on a pool of
/// `jobs` workers, then writes `config.toml` and `manifest.jsonl`. A failing
/// sample is reported and does not affect the others.
pub fn run_synth(cfg: &PipelineConfig, out_dir: &Path, jobs: usize) -> Result<SynthReport> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let scenes = discover_scenes(&cfg.paths.input)?;
    fs::create_dir_all(out_dir)?;

    let mut failures = Vec::new();
    let mut loaded = Vec::new();
    for (name, vis, nir) in &scenes {
        match load_scene(name, vis, nir) {
            Ok(s) => loaded.push(s),
            Err(e) => {
                failures.push((name.clone(), Error::Stage { stage: "load", sample: name.clone(), source: Box::new(e) }))
            }
        }
    }
    let jobs_list: Vec<(&SceneSource, usize)> =
        loaded.iter().flat_map(|s| (0..cfg.trajectories).map(move |t| (s, t))).collect();
    let results: Vec<(String, Result<SampleManifest>)> = pool.install(|| {
        jobs_list.par_iter().map(|&(s, t)| (sample_id(&s.name, t), generate_sample(s, t, cfg, out_dir))).collect()
    });

    let mut manifests = Vec::new();
    for (id, r) in results {
        match r {
            Ok(m) => manifests.push(m),
            Err(e) => failures.push((id, e)),
        }
    }
    manifests.sort_by(|a, b| a.id.cmp(&b.id));
    failures.sort_by(|a, b| a.0.cmp(&b.0));

    // the tree is self-describing: its own location is recorded as "."
    let mut recorded = cfg.clone();
    recorded.paths.output = PathBuf::from(".");
    fs::write(out_dir.join("config.toml"), recorded.to_toml())?;
    let mut buf = Vec::new();
    write_manifest(&manifests, &mut buf)?;
    fs::write(out_dir.join(MANIFEST_FILE), buf)?;
    Ok(SynthReport { manifests, failures })
}
