//! Synthetic dataset generation and batch evaluation.
//!
//! A run reads paired `<scene>_vis.pgm` / `<scene>_nir.pgm` sources, generates
//! `trajectories` samples per scene and writes, under the output directory:
//!
//! ```text
//! config.toml              fully resolved configuration
//! manifest.jsonl           one record per sample, sorted by sample id
//! samples/<id>/S.pgm       sharp NIR crop (16-bit)
//! samples/<id>/B.pgm       blurry NIR frame (16-bit)
//! samples/<id>/C.pgm       structural consistency map (8-bit)
//! samples/<id>/E_c.evt     clean events          samples/<id>/E_c.vox
//! samples/<id>/E_n.evt     noisy events          samples/<id>/E_n.vox
//! ```
//!
//! Every random stage is seeded from the master seed and the sample id only,
//! so the output tree is identical for any worker count.

mod config;
mod eval;
mod manifest;
mod synth;

pub use config::{NetworkConfig, PathsConfig, PipelineConfig};
pub use eval::{run_eval, EvalReport, EvalRow, EvalStatus};
pub use manifest::{read_manifest, write_manifest, SampleManifest, Split, MANIFEST_FILE};
pub use synth::{
    discover_scenes, generate_sample, load_scene, run_synth, sample_id, scene_crop, split_for, validate_sample,
    SceneSource, SynthReport,
};
