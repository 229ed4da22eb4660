//! Dataset manifests and deterministic rendering of spatialised WAV files.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::head::{check_grid_azimuth, synth_anechoic_brir, Brir};
use super::room::{image_source_rir, RoomSpec};
use super::source::{energy_gate, spatialize, speech_shaped_noise, white_noise_burst};
use crate::audio::{read_wav, write_wav_atomic, WavContent, SAMPLE_RATE};
use crate::error::{Error, Result};
use crate::models::class_of_azimuth;

pub const MANIFEST_VERSION: u32 = 1;
pub const ANECHOIC_ID: &str = "anechoic";
/// Silence-gate threshold for corpus WAVs, dB below utterance RMS.
const GATE_DB: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    WhiteNoiseBurst,
    SpeechShapedNoise,
    WavCorpus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

/// One signal to synthesise: source, placement and generator seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub source: SourceKind,
    /// Input WAV for `wav_corpus` sources.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus_path: Option<PathBuf>,
    pub duration_secs: f64,
    pub seed: u64,
    pub azimuth_deg: i32,
    pub room_id: String,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        check_grid_azimuth(self.azimuth_deg)?;
        if self.duration_secs < 0.5 {
            return Err(Error::InvalidInput(format!(
                "scene duration {} s is below the 0.5 s minimum",
                self.duration_secs
            )));
        }
        if self.source == SourceKind::WavCorpus && self.corpus_path.is_none() {
            return Err(Error::Config("wav_corpus scene without corpus_path".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub scene: SceneSpec,
    pub split: Split,
    /// Output path relative to the dataset root.
    pub path: PathBuf,
}

/// Directory of measured BRIRs (`az{+ddd}.wav` stereo files) standing in for
/// a synthetic room.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportedRoom {
    pub id: String,
    pub dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub sample_rate: u32,
    pub rooms: Vec<RoomSpec>,
    #[serde(default)]
    pub imported_rooms: Vec<ImportedRoom>,
    pub entries: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, Copy)]
pub struct SplitCounts {
    pub train: usize,
    pub valid: usize,
    pub test: usize,
}

impl Default for SplitCounts {
    fn default() -> Self {
        // 24 sentences per azimuth for training, 6 validation, 15 test.
        Self {
            train: 24,
            valid: 6,
            test: 15,
        }
    }
}

fn mix_seed(base: u64, parts: &[u64]) -> u64 {
    // splitmix64 over the chained identifiers.
    let mut z = base;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9e3779b97f4a7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^= z >> 31;
    }
    z
}

pub fn azimuth_file_stem(azimuth_deg: i32) -> String {
    format!("az{azimuth_deg:+04}")
}

impl DatasetManifest {
    /// Default synthetic dataset: every grid azimuth x split count, one
    /// condition per room in `rooms` plus anechoic.
    pub fn default_synthetic(
        rooms: &[RoomSpec],
        counts: SplitCounts,
        duration_secs: f64,
        base_seed: u64,
    ) -> Self {
        let mut entries = Vec::new();
        let mut conditions = vec![ANECHOIC_ID.to_string()];
        conditions.extend(rooms.iter().map(|r| r.id.clone()));
        for (ci, cond) in conditions.iter().enumerate() {
            let splits = [
                (Split::Train, counts.train),
                (Split::Valid, counts.valid),
                (Split::Test, counts.test),
            ];
            for (si, (split, count)) in splits.iter().enumerate() {
                for az_step in 0..37 {
                    let az = -90 + 5 * az_step;
                    for rep in 0..*count {
                        let seed = mix_seed(
                            base_seed,
                            &[ci as u64, si as u64, az_step as u64, rep as u64],
                        );
                        entries.push(ManifestEntry {
                            scene: SceneSpec {
                                source: SourceKind::SpeechShapedNoise,
                                corpus_path: None,
                                duration_secs,
                                seed,
                                azimuth_deg: az,
                                room_id: cond.clone(),
                            },
                            split: *split,
                            path: PathBuf::from(cond).join(split.as_str()).join(format!(
                                "{}_{rep:02}.wav",
                                azimuth_file_stem(az)
                            )),
                        });
                    }
                }
            }
        }
        Self {
            version: MANIFEST_VERSION,
            sample_rate: SAMPLE_RATE,
            rooms: rooms.to_vec(),
            imported_rooms: Vec::new(),
            entries,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Config(format!(
                "manifest version {} unsupported",
                self.version
            )));
        }
        if self.sample_rate != SAMPLE_RATE {
            return Err(Error::Config(format!(
                "manifest sample rate {} must be {SAMPLE_RATE}",
                self.sample_rate
            )));
        }
        for room in &self.rooms {
            room.validate()?;
        }
        let known: Vec<&str> = std::iter::once(ANECHOIC_ID)
            .chain(self.rooms.iter().map(|r| r.id.as_str()))
            .chain(self.imported_rooms.iter().map(|r| r.id.as_str()))
            .collect();
        for e in &self.entries {
            e.scene.validate()?;
            if !known.contains(&e.scene.room_id.as_str()) {
                return Err(Error::Config(format!(
                    "entry {} references unknown room {}",
                    e.path.display(),
                    e.scene.room_id
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let manifest: Self = serde_json::from_slice(&bytes)?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn entries_for(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn room_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self
            .entries
            .iter()
            .map(|e| e.scene.room_id.clone())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoomStats {
    pub room_id: String,
    pub measured_t60: Option<f64>,
    pub measured_drr: Option<f64>,
}

/// Manifest after rendering: file list with labels plus measured acoustics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResolvedManifest {
    pub version: u32,
    pub root: PathBuf,
    pub room_stats: Vec<RoomStats>,
    pub entries: Vec<ManifestEntry>,
    /// Per-entry render failures (path: message).
    pub errors: Vec<String>,
}

impl ResolvedManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_vec_pretty(self)?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    pub fn entries_for(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }
}

/// Load measured BRIRs from a directory of `az{+ddd}.wav` stereo files.
pub fn import_brirs(dir: &Path, room_id: &str) -> Result<Vec<Brir>> {
    let mut out = Vec::with_capacity(37);
    for az_step in 0..37 {
        let az = -90 + 5 * az_step;
        let path = dir.join(format!("{}.wav", azimuth_file_stem(az)));
        match read_wav(&path)? {
            WavContent::Binaural(w) => {
                out.push(Brir::new(w.left().to_vec(), w.right().to_vec(), az, room_id)?)
            }
            WavContent::Mono(_) => {
                return Err(Error::wav(&path, "brir import needs a stereo file"))
            }
        }
    }
    Ok(out)
}

fn brir_for(manifest: &DatasetManifest, room_id: &str, azimuth_deg: i32) -> Result<Brir> {
    if room_id == ANECHOIC_ID {
        return synth_anechoic_brir(azimuth_deg);
    }
    if let Some(room) = manifest.rooms.iter().find(|r| r.id == room_id) {
        return image_source_rir(room, azimuth_deg);
    }
    if let Some(imported) = manifest.imported_rooms.iter().find(|r| r.id == room_id) {
        let idx = ((azimuth_deg + 90) / 5) as usize;
        return import_brirs(&imported.dir, room_id).map(|mut v| v.swap_remove(idx));
    }
    Err(Error::Config(format!("unknown room {room_id}")))
}

fn render_source(scene: &SceneSpec) -> Result<crate::audio::MonoWaveform> {
    match scene.source {
        SourceKind::WhiteNoiseBurst => white_noise_burst(scene.duration_secs, scene.seed),
        SourceKind::SpeechShapedNoise => speech_shaped_noise(scene.duration_secs, scene.seed),
        SourceKind::WavCorpus => {
            let path = scene.corpus_path.as_ref().unwrap();
            match read_wav(path)? {
                WavContent::Mono(w) => energy_gate(&w, GATE_DB),
                WavContent::Binaural(_) => {
                    Err(Error::wav(path, "corpus entries must be mono"))
                }
            }
        }
    }
}

/// Render every manifest entry under `root`. Per-entry failures are
/// collected; BRIRs are synthesised once per (room, azimuth).
pub fn make_dataset(manifest: &DatasetManifest, root: &Path) -> Result<ResolvedManifest> {
    manifest.validate()?;
    std::fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;

    let mut needed: Vec<(String, i32)> = manifest
        .entries
        .iter()
        .map(|e| (e.scene.room_id.clone(), e.scene.azimuth_deg))
        .collect();
    needed.sort();
    needed.dedup();
    let brirs: HashMap<(String, i32), Brir> = needed
        .into_par_iter()
        .map(|(room, az)| {
            let brir = brir_for(manifest, &room, az)?;
            Ok(((room, az), brir))
        })
        .collect::<Result<_>>()?;

    let results: Vec<Result<()>> = manifest
        .entries
        .par_iter()
        .map(|entry| {
            let brir = &brirs[&(entry.scene.room_id.clone(), entry.scene.azimuth_deg)];
            let source = render_source(&entry.scene)?;
            let out = spatialize(&source, brir)?;
            let path = root.join(&entry.path);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            write_wav_atomic(&path, &WavContent::Binaural(out))
        })
        .collect();

    let errors: Vec<String> = manifest
        .entries
        .iter()
        .zip(&results)
        .filter_map(|(e, r)| {
            r.as_ref()
                .err()
                .map(|err| format!("{}: {err}", e.path.display()))
        })
        .collect();

    let mut room_stats = Vec::new();
    for id in manifest.room_ids() {
        let probe = brirs
            .iter()
            .find(|((room, az), _)| *room == id && *az == 0)
            .or_else(|| brirs.iter().find(|((room, _), _)| *room == id));
        if let Some((_, brir)) = probe {
            room_stats.push(RoomStats {
                room_id: id,
                measured_t60: brir.measured_t60,
                measured_drr: brir.measured_drr,
            });
        }
    }

    let resolved = ResolvedManifest {
        version: MANIFEST_VERSION,
        root: root.to_path_buf(),
        room_stats,
        entries: manifest
            .entries
            .iter()
            .zip(&results)
            .filter(|(_, r)| r.is_ok())
            .map(|(e, _)| e.clone())
            .collect(),
        errors,
    };
    resolved.save(&root.join("manifest.resolved.json"))?;
    Ok(resolved)
}

/// Class label (0..=36) for a manifest entry.
pub fn entry_label(entry: &ManifestEntry) -> Result<usize> {
    class_of_azimuth(entry.scene.azimuth_deg as f64)
}
