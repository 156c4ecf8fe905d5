//! Synthetic multi-speaker corpus generation plus dataset layout, loading,
//! normalization, and batching.
//!
//! Each synthetic phoneme is a fixed spectral template; each speaker is a
//! per-bin affine signature (tilt and offset) applied on top; each utterance
//! adds a smooth per-frame energy contour and a little noise. Every
//! generating component is stored in the manifest, so ground truth stays
//! recoverable for the evaluation probes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::features::{
    format_duration_file, parse_duration_file, parse_phoneme_file, read_mel, upsample_phonemes, write_mel,
    MelConfig, MelSpectrogram, PhonemeSequence,
};
use crate::nn::init::{splitmix64, step_rng};
use crate::nn::Array;
use crate::{Error, Result};

/// Reserved phoneme id for pauses in the synthetic inventory.
pub const PAUSE_ID: usize = 0;

/// Settings for [`generate_synthetic_corpus`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_speakers: usize,
    pub num_phonemes: usize,
    pub utterances_per_speaker: usize,
    pub seed: u64,
    pub mel: MelConfig,
    /// Extra speakers whose utterances appear only in the test split.
    pub unseen_test_speakers: usize,
    pub val_fraction: f64,
    pub test_fraction: f64,
    pub noise_sigma: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            num_speakers: 3,
            num_phonemes: 12,
            utterances_per_speaker: 20,
            seed: 0,
            mel: MelConfig::default(),
            unseen_test_speakers: 0,
            val_fraction: 0.1,
            test_fraction: 0.1,
            noise_sigma: 0.05,
        }
    }
}

/// The generating components of a synthetic corpus, persisted for oracle use.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticGroundTruth {
    pub seed: u64,
    pub noise_sigma: f64,
    /// `num_phonemes × M` spectral templates.
    pub templates: Vec<Vec<f64>>,
    /// Per-speaker per-bin multiplicative tilt, `S × M`.
    pub tilts: Vec<Vec<f64>>,
    /// Per-speaker per-bin additive offset, `S × M`.
    pub offsets: Vec<Vec<f64>>,
}

/// Per-bin statistics used to standardize mels before they enter any model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SplitLists {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestFile {
    version: u32,
    speakers: BTreeMap<usize, String>,
    utterances: BTreeMap<String, usize>,
    splits: SplitLists,
    normalization: NormStats,
    mel: MelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    synthetic: Option<SyntheticGroundTruth>,
}

/// A corpus on disk: validated metadata plus lazy utterance access.
#[derive(Debug, Clone)]
pub struct CorpusManifest {
    pub root: PathBuf,
    pub speakers: BTreeMap<usize, String>,
    pub utterance_speaker: BTreeMap<String, usize>,
    pub splits: SplitLists,
    pub normalization: NormStats,
    pub mel: MelConfig,
    pub synthetic: Option<SyntheticGroundTruth>,
}

/// One loaded training example.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub utt_id: String,
    pub speaker_id: usize,
    pub mel: MelSpectrogram,
    pub phonemes: PhonemeSequence,
    pub prosody_truth: Option<Vec<f32>>,
}

impl CorpusManifest {
    pub fn num_speakers(&self) -> usize {
        self.speakers.len()
    }

    /// Speakers that appear in the training split (valid transfer targets).
    pub fn train_speakers(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = self
            .splits
            .train
            .iter()
            .filter_map(|u| self.utterance_speaker.get(u).copied())
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn split(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.splits.train,
            Split::Val => &self.splits.val,
            Split::Test => &self.splits.test,
        }
    }

    pub fn speaker_name(&self, id: usize) -> Result<&str> {
        self.speakers
            .get(&id)
            .map(|s| s.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("unknown speaker id {id}")))
    }

    pub fn speaker_id_by_name(&self, name: &str) -> Result<usize> {
        self.speakers
            .iter()
            .find(|(_, n)| n.as_str() == name)
            .map(|(id, _)| *id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown speaker {name:?}")))
    }

    fn utt_paths(&self, utt_id: &str) -> Result<(PathBuf, PathBuf, PathBuf, PathBuf)> {
        let speaker = *self
            .utterance_speaker
            .get(utt_id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown utterance {utt_id:?}")))?;
        let dir = self.root.join(self.speaker_name(speaker)?);
        Ok((
            dir.join(format!("{utt_id}.mel")),
            dir.join(format!("{utt_id}.phn")),
            dir.join(format!("{utt_id}.dur")),
            dir.join(format!("{utt_id}.truth")),
        ))
    }

    /// Load one utterance, validating its alignment invariants.
    pub fn load_utterance(&self, utt_id: &str) -> Result<Utterance> {
        let speaker_id = *self
            .utterance_speaker
            .get(utt_id)
            .ok_or_else(|| Error::InvalidInput(format!("unknown utterance {utt_id:?}")))?;
        let (mel_path, phn_path, dur_path, truth_path) = self.utt_paths(utt_id)?;
        let mel = read_mel(&mel_path)?;
        let phn_ids = parse_phoneme_file(&std::fs::read_to_string(&phn_path)?)?;
        let durs = parse_duration_file(&std::fs::read_to_string(&dur_path)?)?;
        if durs.ids != phn_ids {
            return Err(Error::Format(format!("{utt_id}: phoneme file and duration file disagree on ids")));
        }
        if durs.total_frames() != mel.num_frames() {
            return Err(Error::Alignment(format!(
                "{utt_id}: durations sum to {} but mel has {} frames",
                durs.total_frames(),
                mel.num_frames()
            )));
        }
        if mel.num_bins() != self.mel.bins {
            return Err(Error::Format(format!(
                "{utt_id}: mel has {} bins, corpus expects {}",
                mel.num_bins(),
                self.mel.bins
            )));
        }
        let prosody_truth = if truth_path.exists() {
            let t = read_mel(&truth_path)?;
            if t.num_bins() != 1 || t.num_frames() != mel.num_frames() {
                return Err(Error::Format(format!("{utt_id}: malformed prosody-truth contour")));
            }
            Some(t.frames.data().to_vec())
        } else {
            None
        };
        Ok(Utterance { utt_id: utt_id.to_string(), speaker_id, mel, phonemes: durs, prosody_truth })
    }

    pub fn load_split(&self, split: Split) -> Result<Vec<Utterance>> {
        self.split(split).iter().map(|u| self.load_utterance(u)).collect()
    }

    /// Standardize a mel with the stored per-bin statistics.
    pub fn normalize(&self, mel: &MelSpectrogram) -> Array<f32> {
        let m = mel.num_bins();
        assert_eq!(m, self.normalization.mean.len());
        let mut out = mel.frames.clone();
        for t in 0..mel.num_frames() {
            for b in 0..m {
                let i = t * m + b;
                let v = (out.data()[i] as f64 - self.normalization.mean[b]) / self.normalization.std[b];
                out.data_mut()[i] = v as f32;
            }
        }
        out
    }

    /// Inverse of [`CorpusManifest::normalize`].
    pub fn denormalize(&self, frames: &Array<f32>) -> Array<f32> {
        let m = frames.cols();
        assert_eq!(m, self.normalization.mean.len());
        let mut out = frames.clone();
        for t in 0..frames.rows() {
            for b in 0..m {
                let i = t * m + b;
                let v = out.data()[i] as f64 * self.normalization.std[b] + self.normalization.mean[b];
                out.data_mut()[i] = v as f32;
            }
        }
        out
    }
}

fn write_manifest(root: &Path, file: &ManifestFile) -> Result<()> {
    let json = serde_json::to_string_pretty(file)?;
    std::fs::write(root.join("manifest.json"), json)?;
    Ok(())
}

/// The deterministic frame synthesis rule shared by the generator and by
/// construction-oracle tests: `tilt * template + offset + contour (+ noise)`.
pub fn synthesize_frames(
    templates: &[Vec<f64>],
    tilt: &[f64],
    offset: &[f64],
    ids: &[usize],
    durations: &[usize],
    contour: &[f64],
    noise: Option<(&mut rand_chacha::ChaCha8Rng, f64)>,
) -> Array<f32> {
    let m = tilt.len();
    let t_total: usize = durations.iter().sum();
    assert_eq!(contour.len(), t_total);
    let mut frames = Array::<f32>::zeros(&[t_total, m]);
    let mut noise_buf = vec![0.0f64; t_total * m];
    if let Some((rng, sigma)) = noise {
        for v in noise_buf.iter_mut() {
            let n: f64 = StandardNormal.sample(rng);
            *v = sigma * n;
        }
    }
    let mut t = 0;
    for (&id, &d) in ids.iter().zip(durations) {
        for _ in 0..d {
            for b in 0..m {
                let v = tilt[b] * templates[id][b] + offset[b] + contour[t] + noise_buf[t * m + b];
                frames.data_mut()[t * m + b] = v as f32;
            }
            t += 1;
        }
    }
    frames
}

fn smooth_contour(rng: &mut rand_chacha::ChaCha8Rng, t_total: usize) -> Vec<f64> {
    let n_sin = rng.gen_range(1..=3usize);
    let comps: Vec<(f64, f64, f64)> = (0..n_sin)
        .map(|_| {
            (
                rng.gen_range(0.2..0.45),
                rng.gen_range(0.5..3.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    (0..t_total)
        .map(|t| {
            comps
                .iter()
                .map(|(a, f, p)| a * (std::f64::consts::TAU * f * t as f64 / t_total as f64 + p).sin())
                .sum()
        })
        .collect()
}

/// Generate a corpus under `root`. Identical spec (including seed) produces a
/// bit-identical tree.
pub fn generate_synthetic_corpus(spec: &SyntheticSpec, root: &Path) -> Result<CorpusManifest> {
    if spec.num_speakers < 2 {
        return Err(Error::InvalidConfig("synthetic corpus needs at least 2 speakers".into()));
    }
    if spec.num_phonemes < 3 {
        return Err(Error::InvalidConfig("synthetic corpus needs at least 3 phonemes".into()));
    }
    if spec.utterances_per_speaker < 1 {
        return Err(Error::InvalidConfig("need at least one utterance per speaker".into()));
    }
    std::fs::create_dir_all(root)?;
    let m = spec.mel.bins;

    // phoneme templates; id 0 is a quiet pause
    let mut templates = Vec::with_capacity(spec.num_phonemes);
    for p in 0..spec.num_phonemes {
        let mut rng = step_rng(spec.seed, p as u64, "corpus.template");
        let raw: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let mut smoothed = vec![0.0f64; m];
        for b in 0..m {
            let lo = b.saturating_sub(1);
            let hi = (b + 2).min(m);
            smoothed[b] = raw[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
        }
        if p == PAUSE_ID {
            smoothed.iter_mut().for_each(|v| *v = -3.0 + 0.05 * *v);
        }
        templates.push(smoothed);
    }

    let total_speakers = spec.num_speakers + spec.unseen_test_speakers;
    let mut tilts = Vec::with_capacity(total_speakers);
    let mut offsets = Vec::with_capacity(total_speakers);
    for s in 0..total_speakers {
        let mut rng = step_rng(spec.seed, s as u64, "corpus.speaker");
        tilts.push((0..m).map(|_| rng.gen_range(0.85..1.15)).collect::<Vec<f64>>());
        offsets.push((0..m).map(|_| rng.gen_range(-1.2..1.2)).collect::<Vec<f64>>());
    }

    let mut speakers = BTreeMap::new();
    let mut utterance_speaker = BTreeMap::new();
    let mut splits = SplitLists::default();
    let mut train_sum = vec![0.0f64; m];
    let mut train_sumsq = vec![0.0f64; m];
    let mut train_frames = 0usize;

    for s in 0..total_speakers {
        let name = format!("spk{s:03}");
        speakers.insert(s, name.clone());
        let dir = root.join(&name);
        std::fs::create_dir_all(&dir)?;
        let unseen = s >= spec.num_speakers;

        let u_count = spec.utterances_per_speaker;
        let val_count = if unseen { 0 } else { ((u_count as f64 * spec.val_fraction).round() as usize).max(1) };
        let test_count = if unseen { u_count } else { ((u_count as f64 * spec.test_fraction).round() as usize).max(1) };
        if !unseen && val_count + test_count >= u_count {
            return Err(Error::InvalidConfig("too few utterances per speaker for the requested splits".into()));
        }

        for u in 0..u_count {
            let utt_id = format!("{name}_u{u:03}");
            let mut rng = step_rng(spec.seed, splitmix64(((s as u64) << 32) | u as u64), "corpus.utt");
            let n_ph = rng.gen_range(5..=20usize);
            let ids: Vec<usize> = (0..n_ph).map(|_| rng.gen_range(0..spec.num_phonemes)).collect();
            let durations: Vec<usize> = (0..n_ph).map(|_| rng.gen_range(3..=10usize)).collect();
            let t_total: usize = durations.iter().sum();
            let contour = smooth_contour(&mut rng, t_total);
            let frames = synthesize_frames(
                &templates,
                &tilts[s],
                &offsets[s],
                &ids,
                &durations,
                &contour,
                Some((&mut rng, spec.noise_sigma)),
            );

            let split = if u >= u_count - test_count {
                Split::Test
            } else if u >= u_count - test_count - val_count {
                Split::Val
            } else {
                Split::Train
            };
            if split == Split::Train {
                for t in 0..t_total {
                    for b in 0..m {
                        let v = frames.at2(t, b) as f64;
                        train_sum[b] += v;
                        train_sumsq[b] += v * v;
                    }
                }
                train_frames += t_total;
            }

            let mel = MelSpectrogram::new(frames, spec.mel.sample_rate, spec.mel.hop as u32)?;
            write_mel(&dir.join(format!("{utt_id}.mel")), &mel)?;
            let phn: Vec<String> = ids.iter().map(|i| i.to_string()).collect();
            std::fs::write(dir.join(format!("{utt_id}.phn")), phn.join(" ") + "\n")?;
            let seq = PhonemeSequence::new(ids, durations)?;
            std::fs::write(dir.join(format!("{utt_id}.dur")), format_duration_file(&seq))?;
            let truth = MelSpectrogram::new(
                Array::from_vec(&[t_total, 1], contour.iter().map(|&v| v as f32).collect())?,
                spec.mel.sample_rate,
                spec.mel.hop as u32,
            )?;
            write_mel(&dir.join(format!("{utt_id}.truth")), &truth)?;

            utterance_speaker.insert(utt_id.clone(), s);
            match split {
                Split::Train => splits.train.push(utt_id),
                Split::Val => splits.val.push(utt_id),
                Split::Test => splits.test.push(utt_id),
            }
        }
    }

    let normalization = NormStats {
        mean: train_sum.iter().map(|v| v / train_frames as f64).collect(),
        std: train_sum
            .iter()
            .zip(&train_sumsq)
            .map(|(s, sq)| {
                let mean = s / train_frames as f64;
                ((sq / train_frames as f64 - mean * mean).max(0.0)).sqrt().max(1e-6)
            })
            .collect(),
    };

    let file = ManifestFile {
        version: 1,
        speakers,
        utterances: utterance_speaker,
        splits,
        normalization,
        mel: spec.mel.clone(),
        synthetic: Some(SyntheticGroundTruth {
            seed: spec.seed,
            noise_sigma: spec.noise_sigma,
            templates,
            tilts,
            offsets,
        }),
    };
    write_manifest(root, &file)?;
    load_corpus(root)
}

/// Load and validate `root/manifest.json` and the referenced files.
pub fn load_corpus(root: &Path) -> Result<CorpusManifest> {
    let manifest_path = root.join("manifest.json");
    if !manifest_path.exists() {
        return Err(Error::Format(format!("no manifest.json under {}", root.display())));
    }
    let file: ManifestFile = serde_json::from_str(&std::fs::read_to_string(&manifest_path)?)?;
    if file.version != 1 {
        return Err(Error::Format(format!("unsupported corpus manifest version {}", file.version)));
    }
    let all: Vec<&String> = file
        .splits
        .train
        .iter()
        .chain(file.splits.val.iter())
        .chain(file.splits.test.iter())
        .collect();
    if all.is_empty() {
        return Err(Error::Format("corpus manifest lists no utterances".into()));
    }
    let mut seen = std::collections::BTreeSet::new();
    for u in &all {
        if !seen.insert(u.as_str()) {
            return Err(Error::Format(format!("utterance {u} appears in more than one split")));
        }
        let speaker = file
            .utterances
            .get(u.as_str())
            .ok_or_else(|| Error::Format(format!("utterance {u} missing from speaker map")))?;
        let name = file
            .speakers
            .get(speaker)
            .ok_or_else(|| Error::Format(format!("utterance {u} references unknown speaker {speaker}")))?;
        for ext in ["mel", "phn", "dur"] {
            let p = root.join(name).join(format!("{u}.{ext}"));
            if !p.exists() {
                return Err(Error::Format(format!("missing file {}", p.display())));
            }
        }
    }
    if file.normalization.mean.len() != file.mel.bins || file.normalization.std.len() != file.mel.bins {
        return Err(Error::Format("normalization stats do not match mel bin count".into()));
    }
    Ok(CorpusManifest {
        root: root.to_path_buf(),
        speakers: file.speakers,
        utterance_speaker: file.utterances,
        splits: file.splits,
        normalization: file.normalization,
        mel: file.mel,
        synthetic: file.synthetic,
    })
}

/// One zero-padded batch with valid lengths; models read each utterance at
/// its true length so padding never leaks into statistics or losses.
#[derive(Debug, Clone)]
pub struct PaddedBatch {
    pub utt_ids: Vec<String>,
    pub speaker_ids: Vec<usize>,
    /// `B × Tmax × M`, normalized, zero-padded past each valid length.
    pub mels: Array<f32>,
    /// Valid frame counts; the per-utterance mask.
    pub lens: Vec<usize>,
    /// Frame-level phoneme ids per utterance (each of length `lens[i]`).
    pub upsampled: Vec<Vec<usize>>,
}

impl PaddedBatch {
    pub fn len(&self) -> usize {
        self.lens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lens.is_empty()
    }

    pub fn max_frames(&self) -> usize {
        self.mels.dims()[1]
    }

    /// The unpadded `[T_i, M]` frames of batch member `i`.
    pub fn utterance_frames(&self, i: usize) -> Array<f32> {
        let (tmax, m) = (self.mels.dims()[1], self.mels.dims()[2]);
        let t = self.lens[i];
        let mut out = Array::<f32>::zeros(&[t, m]);
        let src = &self.mels.data()[i * tmax * m..(i * tmax + t) * m];
        out.data_mut().copy_from_slice(src);
        out
    }
}

/// Deterministic length-bucketed batches of a split: utterances are grouped
/// by frame count to limit padding and the group order is shuffled per
/// (seed, epoch).
pub fn make_batches(
    manifest: &CorpusManifest,
    utterances: &[Utterance],
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<PaddedBatch>> {
    if batch_size < 1 {
        return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
    }
    let mut order: Vec<usize> = (0..utterances.len()).collect();
    order.sort_by_key(|&i| (utterances[i].mel.num_frames(), utterances[i].utt_id.clone()));
    let groups: Vec<Vec<usize>> = order.chunks(batch_size).map(|c| c.to_vec()).collect();
    let mut group_order: Vec<usize> = (0..groups.len()).collect();
    let mut rng = step_rng(seed, epoch, "batch.shuffle");
    for i in (1..group_order.len()).rev() {
        let j = rng.gen_range(0..=i);
        group_order.swap(i, j);
    }

    let m = manifest.mel.bins;
    let mut batches = Vec::with_capacity(groups.len());
    for &gi in &group_order {
        let idxs = &groups[gi];
        let tmax = idxs.iter().map(|&i| utterances[i].mel.num_frames()).max().unwrap();
        let mut mels = Array::<f32>::zeros(&[idxs.len(), tmax, m]);
        let mut lens = Vec::with_capacity(idxs.len());
        let mut utt_ids = Vec::with_capacity(idxs.len());
        let mut speaker_ids = Vec::with_capacity(idxs.len());
        let mut upsampled = Vec::with_capacity(idxs.len());
        for (bi, &i) in idxs.iter().enumerate() {
            let utt = &utterances[i];
            let t = utt.mel.num_frames();
            let normed = manifest.normalize(&utt.mel);
            mels.data_mut()[bi * tmax * m..(bi * tmax + t) * m].copy_from_slice(normed.data());
            lens.push(t);
            utt_ids.push(utt.utt_id.clone());
            speaker_ids.push(utt.speaker_id);
            upsampled.push(upsample_phonemes(&utt.phonemes, Some(t))?.ids);
        }
        batches.push(PaddedBatch { utt_ids, speaker_ids, mels, lens, upsampled });
    }
    Ok(batches)
}
