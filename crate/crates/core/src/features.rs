//! Acoustic features: log-mel spectrograms, phoneme durations, and the
//! frame-level phoneme upsampling the synthesizer consumes.
//!
//! Durations always arrive as files produced elsewhere (a forced aligner or
//! the synthetic corpus generator); nothing here computes alignments.

use std::io::{Read, Write};
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::nn::Array;
use crate::{Error, Result};

/// Analysis settings for [`compute_mel`].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub window: usize,
    pub hop: usize,
    pub bins: usize,
    pub fmin: f64,
    pub fmax: f64,
    /// Floor applied to linear mel magnitudes before the natural log.
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        MelConfig {
            sample_rate: 16_000,
            window: 1024,
            hop: 200,
            bins: 80,
            fmin: 0.0,
            fmax: 8_000.0,
            log_floor: 1e-5,
        }
    }
}

impl MelConfig {
    pub fn log_floor_value(&self) -> f32 {
        (self.log_floor as f32).ln()
    }
}

/// A `T×M` natural-log mel spectrogram plus the framing metadata persisted
/// in its file header.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Array<f32>,
    pub sample_rate: u32,
    pub hop: u32,
}

impl MelSpectrogram {
    pub fn new(frames: Array<f32>, sample_rate: u32, hop: u32) -> Result<Self> {
        if frames.rank() != 2 || frames.rows() < 1 {
            return Err(Error::InvalidInput("mel frames must be a [T, M] matrix with T >= 1".into()));
        }
        Ok(MelSpectrogram { frames, sample_rate, hop })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn num_bins(&self) -> usize {
        self.frames.cols()
    }
}

/// Phoneme ids with per-phoneme frame counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhonemeSequence {
    pub ids: Vec<usize>,
    pub durations: Vec<usize>,
}

impl PhonemeSequence {
    pub fn new(ids: Vec<usize>, durations: Vec<usize>) -> Result<Self> {
        if ids.len() != durations.len() {
            return Err(Error::InvalidInput("phoneme ids and durations differ in length".into()));
        }
        if ids.is_empty() {
            return Err(Error::InvalidInput("empty phoneme sequence".into()));
        }
        Ok(PhonemeSequence { ids, durations })
    }

    pub fn total_frames(&self) -> usize {
        self.durations.iter().sum()
    }
}

/// Frame-level phoneme ids, one per mel frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UpsampledPhonemes {
    pub ids: Vec<usize>,
}

/// Repeat each phoneme id by its duration, preserving order. When
/// `expected_frames` is given, a total mismatch is an alignment error.
pub fn upsample_phonemes(p: &PhonemeSequence, expected_frames: Option<usize>) -> Result<UpsampledPhonemes> {
    if let Some(bad) = p.durations.iter().position(|&d| d == 0) {
        return Err(Error::InvalidInput(format!("duration at position {bad} must be >= 1")));
    }
    let total = p.total_frames();
    if let Some(t) = expected_frames {
        if total != t {
            return Err(Error::Alignment(format!("durations sum to {total} but {t} frames expected")));
        }
    }
    let mut ids = Vec::with_capacity(total);
    for (&id, &d) in p.ids.iter().zip(&p.durations) {
        ids.extend(std::iter::repeat(id).take(d));
    }
    Ok(UpsampledPhonemes { ids })
}

/// Inverse of [`upsample_phonemes`]: collapse runs back to (id, duration).
/// Adjacent equal ids in the original sequence merge into one run.
pub fn run_length_encode(up: &UpsampledPhonemes) -> PhonemeSequence {
    let mut ids = Vec::new();
    let mut durations = Vec::new();
    for &id in &up.ids {
        if ids.last() == Some(&id) {
            *durations.last_mut().unwrap() += 1;
        } else {
            ids.push(id);
            durations.push(1);
        }
    }
    PhonemeSequence { ids, durations }
}

fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = (2 * (n - 1)) as isize;
    let mut j = i.rem_euclid(period);
    if j as usize >= n {
        j = period - j;
    }
    j as usize
}

fn hann(window: usize) -> Vec<f32> {
    (0..window)
        .map(|i| {
            let x = std::f64::consts::PI * 2.0 * i as f64 / window as f64;
            (0.5 - 0.5 * x.cos()) as f32
        })
        .collect()
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filterbank on HTK-style mel spacing; `bins × (window/2 + 1)`,
/// peak-normalized to 1.
pub fn mel_filterbank(cfg: &MelConfig) -> Array<f32> {
    let nfreq = cfg.window / 2 + 1;
    let points = mel_band_edges(cfg);
    let mut w = Array::<f32>::zeros(&[cfg.bins, nfreq]);
    let hz_per_bin = cfg.sample_rate as f64 / cfg.window as f64;
    for m in 0..cfg.bins {
        let (lo, center, hi) = (points[m], points[m + 1], points[m + 2]);
        for f in 0..nfreq {
            let hz = f as f64 * hz_per_bin;
            let val = if hz >= lo && hz <= center && center > lo {
                (hz - lo) / (center - lo)
            } else if hz > center && hz <= hi && hi > center {
                (hi - hz) / (hi - center)
            } else {
                0.0
            };
            if val > 0.0 {
                w.data_mut()[m * nfreq + f] = val as f32;
            }
        }
    }
    w
}

/// Hz positions of the triangle edges: `bins + 2` points, so triangle `m`
/// spans `edges[m]..edges[m+2]` with its peak at `edges[m+1]`.
pub fn mel_band_edges(cfg: &MelConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax);
    (0..cfg.bins + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (cfg.bins + 1) as f64))
        .collect()
}

fn frame_count(samples: usize, hop: usize) -> usize {
    samples.div_ceil(hop)
}

fn stft_magphase(samples: &[f32], cfg: &MelConfig, want_phase: bool) -> (Vec<Vec<f32>>, Vec<Vec<f32>>) {
    let n = samples.len();
    let t_total = frame_count(n, cfg.hop);
    let half = cfg.window / 2;
    let mut planner = FftPlanner::<f32>::new();
    let fft = planner.plan_fft_forward(cfg.window);
    let win = hann(cfg.window);
    let nfreq = half + 1;
    let mut mags = Vec::with_capacity(t_total);
    let mut phases = Vec::with_capacity(if want_phase { t_total } else { 0 });
    let mut buf = vec![Complex::new(0.0f32, 0.0); cfg.window];
    for t in 0..t_total {
        for k in 0..cfg.window {
            let i = (t * cfg.hop + k) as isize - half as isize;
            buf[k] = Complex::new(samples[reflect_index(i, n)] * win[k], 0.0);
        }
        fft.process(&mut buf);
        mags.push(buf[..nfreq].iter().map(|c| c.norm()).collect());
        if want_phase {
            phases.push(buf[..nfreq].iter().map(|c| c.arg()).collect());
        }
    }
    (mags, phases)
}

/// Log-mel analysis: centered reflection-padded STFT magnitudes through the
/// triangular filterbank, floored and natural-logged. `T = ceil(len / hop)`.
pub fn compute_mel(samples: &[f32], cfg: &MelConfig) -> Result<MelSpectrogram> {
    if samples.len() < cfg.window {
        return Err(Error::InvalidInput(format!(
            "signal of {} samples is shorter than one {}-sample window",
            samples.len(),
            cfg.window
        )));
    }
    let (mags, _) = stft_magphase(samples, cfg, false);
    let fb = mel_filterbank(cfg);
    let nfreq = cfg.window / 2 + 1;
    let t_total = mags.len();
    let floor = cfg.log_floor as f32;
    let mut frames = Array::<f32>::zeros(&[t_total, cfg.bins]);
    for (t, mag) in mags.iter().enumerate() {
        for m in 0..cfg.bins {
            let row = &fb.data()[m * nfreq..(m + 1) * nfreq];
            let mut acc = 0.0f32;
            for (w, v) in row.iter().zip(mag) {
                acc += w * v;
            }
            frames.data_mut()[t * cfg.bins + m] = acc.max(floor).ln();
        }
    }
    MelSpectrogram::new(frames, cfg.sample_rate, cfg.hop as u32)
}

/// Classical iterative phase reconstruction from a log-mel spectrogram.
/// Returns `T * hop` samples; with `iterations == 0` the zero-phase inverse
/// is returned directly. A listening aid, not part of the model path.
pub fn mel_to_audio(mel: &MelSpectrogram, cfg: &MelConfig, iterations: usize) -> Vec<f32> {
    let t_total = mel.num_frames();
    let nfreq = cfg.window / 2 + 1;
    let fb = mel_filterbank(cfg);

    // undo the log, then spread mel energy back onto linear bins
    let mut target = vec![vec![0.0f32; nfreq]; t_total];
    let mut colsum = vec![0.0f32; nfreq];
    for m in 0..mel.num_bins() {
        for f in 0..nfreq {
            colsum[f] += fb.data()[m * nfreq + f];
        }
    }
    for (t, row) in target.iter_mut().enumerate() {
        for (f, out) in row.iter_mut().enumerate() {
            let mut acc = 0.0f32;
            for m in 0..mel.num_bins() {
                let w = fb.data()[m * nfreq + f];
                if w > 0.0 {
                    acc += w * mel.frames.at2(t, m).exp();
                }
            }
            *out = acc / colsum[f].max(1e-8);
        }
    }

    let phases = vec![vec![0.0f32; nfreq]; t_total];
    let mut signal = istft(&target, &phases, cfg, t_total);
    for _ in 0..iterations {
        let (_, phases) = stft_magphase(&signal, cfg, true);
        signal = istft(&target, &phases, cfg, t_total);
    }
    signal
}

fn istft(mags: &[Vec<f32>], phases: &[Vec<f32>], cfg: &MelConfig, t_total: usize) -> Vec<f32> {
    let half = cfg.window / 2;
    let nfreq = half + 1;
    let out_len = t_total * cfg.hop;
    let mut planner = FftPlanner::<f32>::new();
    let ifft = planner.plan_fft_inverse(cfg.window);
    let win = hann(cfg.window);
    let mut acc = vec![0.0f32; out_len + 2 * cfg.window];
    let mut norm = vec![0.0f32; out_len + 2 * cfg.window];
    let mut buf = vec![Complex::new(0.0f32, 0.0); cfg.window];
    for t in 0..t_total {
        for f in 0..nfreq {
            let c = Complex::from_polar(mags[t][f], phases[t][f]);
            buf[f] = c;
            if f > 0 && f < half {
                buf[cfg.window - f] = c.conj();
            }
        }
        ifft.process(&mut buf);
        let scale = 1.0 / cfg.window as f32;
        for k in 0..cfg.window {
            let v = buf[k].re * scale * win[k];
            let pos = t * cfg.hop + k;
            acc[pos] += v;
            norm[pos] += win[k] * win[k];
        }
    }
    // frames are centered at t*hop; drop the half-window lead-in
    (0..out_len)
        .map(|i| {
            let pos = i + half;
            if norm[pos] > 1e-8 {
                acc[pos] / norm[pos]
            } else {
                0.0
            }
        })
        .collect()
}

const MEL_MAGIC: &[u8; 4] = b"CCMF";
const MEL_VERSION: u16 = 1;

/// Serialize a mel spectrogram in the binary mel-file layout.
pub fn mel_to_bytes(mel: &MelSpectrogram) -> Vec<u8> {
    let t = mel.num_frames() as u32;
    let m = mel.num_bins() as u32;
    let mut out = Vec::with_capacity(22 + mel.frames.len() * 4);
    out.extend_from_slice(MEL_MAGIC);
    out.extend_from_slice(&MEL_VERSION.to_le_bytes());
    out.extend_from_slice(&t.to_le_bytes());
    out.extend_from_slice(&m.to_le_bytes());
    out.extend_from_slice(&mel.sample_rate.to_le_bytes());
    out.extend_from_slice(&mel.hop.to_le_bytes());
    for v in mel.frames.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Parse the binary mel-file layout.
pub fn mel_from_bytes(bytes: &[u8]) -> Result<MelSpectrogram> {
    if bytes.len() < 22 {
        return Err(Error::Format("mel file truncated before header end".into()));
    }
    if &bytes[0..4] != MEL_MAGIC {
        return Err(Error::Format("bad mel file magic".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != MEL_VERSION {
        return Err(Error::Format(format!("unsupported mel file version {version}")));
    }
    let rd = |o: usize| u32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]);
    let t = rd(6) as usize;
    let m = rd(10) as usize;
    let sample_rate = rd(14);
    let hop = rd(18);
    let need = 22 + t * m * 4;
    if bytes.len() != need {
        return Err(Error::Format(format!("mel file length {} but {} expected", bytes.len(), need)));
    }
    let mut data = Vec::with_capacity(t * m);
    for i in 0..t * m {
        let o = 22 + i * 4;
        data.push(f32::from_le_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]));
    }
    MelSpectrogram::new(Array::from_vec(&[t, m], data)?, sample_rate, hop)
}

pub fn write_mel(path: &Path, mel: &MelSpectrogram) -> Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&mel_to_bytes(mel))?;
    Ok(())
}

pub fn read_mel(path: &Path) -> Result<MelSpectrogram> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    mel_from_bytes(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Parse a duration file: one `phoneme_id<space>frame_count` pair per line.
pub fn parse_duration_file(text: &str) -> Result<PhonemeSequence> {
    let mut ids = Vec::new();
    let mut durations = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let id = parts
            .next()
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| Error::Format(format!("duration file line {}: bad phoneme id", lineno + 1)))?;
        let frames = parts
            .next()
            .and_then(|v| v.parse::<usize>().ok())
            .ok_or_else(|| Error::Format(format!("duration file line {}: bad frame count", lineno + 1)))?;
        if parts.next().is_some() {
            return Err(Error::Format(format!("duration file line {}: trailing tokens", lineno + 1)));
        }
        ids.push(id);
        durations.push(frames);
    }
    PhonemeSequence::new(ids, durations)
}

pub fn format_duration_file(p: &PhonemeSequence) -> String {
    let mut s = String::new();
    for (&id, &d) in p.ids.iter().zip(&p.durations) {
        s.push_str(&format!("{id} {d}\n"));
    }
    s
}

/// Parse a phoneme-id file: whitespace-separated ids.
pub fn parse_phoneme_file(text: &str) -> Result<Vec<usize>> {
    text.split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| Error::Format(format!("bad phoneme id {t:?}"))))
        .collect()
}
