//! Log-mel front end and utterance-level functionals.
//!
//! Framing uses a 30 ms periodic Hann window with a 10 ms shift; frames that
//! would overrun the signal are dropped. The power spectrum is pooled by 40
//! triangular filters evenly spaced on the HTK mel scale between 0 Hz and
//! Nyquist, then log-compressed with a floor of 1e-10.

use std::path::Path;

use rand::Rng;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{input_err, Result};
use crate::nn::Tensor2;

pub const N_MELS: usize = 40;
pub const WINDOW_SECONDS: f64 = 0.030;
pub const SHIFT_SECONDS: f64 = 0.010;
pub const LOG_FLOOR: f64 = 1e-10;
/// Frames in a 5-second segment at a 10 ms shift.
pub const SEGMENT_FRAMES: usize = 500;
pub const FUNCTIONALS_DIM: usize = 15 * N_MELS;

/// Decoded PCM audio, samples scaled to [-1, 1].
#[derive(Debug, Clone)]
pub struct PcmAudio {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub channels: u16,
}

/// Reads a 16-bit integer or 32-bit float WAV file.
pub fn read_wav(path: &Path) -> Result<PcmAudio> {
    let reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let samples = match (spec.sample_format, spec.bits_per_sample) {
        (hound::SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (hound::SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<Vec<_>, _>>()?,
        (fmt, bits) => {
            return Err(input_err!(
                "{}: unsupported WAV encoding {bits}-bit {fmt:?}",
                path.display()
            ))
        }
    };
    Ok(PcmAudio {
        samples,
        sample_rate: spec.sample_rate,
        channels: spec.channels,
    })
}

/// T×40 log-mel energies.
#[derive(Debug, Clone, PartialEq)]
pub struct LogMelFrames {
    pub frames: Tensor2,
    pub sample_rate: u32,
    /// Leading frames that hold real audio; the rest is padding.
    pub valid_frames: usize,
}

impl LogMelFrames {
    pub fn from_frames(frames: Tensor2, sample_rate: u32) -> Self {
        let valid_frames = frames.rows();
        Self {
            frames,
            sample_rate,
            valid_frames,
        }
    }

    pub fn len(&self) -> usize {
        self.frames.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.rows() == 0
    }

    /// The unpadded prefix.
    pub fn valid(&self) -> Tensor2 {
        let idx: Vec<usize> = (0..self.valid_frames).collect();
        self.frames.select_rows(&idx)
    }
}

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangle corner frequencies `(lower, center, upper)` in Hz for each filter.
pub fn mel_band_edges(n_mels: usize, sample_rate: u32) -> Vec<(f64, f64, f64)> {
    let top = hz_to_mel(sample_rate as f64 / 2.0);
    let pts: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    (0..n_mels).map(|m| (pts[m], pts[m + 1], pts[m + 2])).collect()
}

/// n_mels × (n_fft/2 + 1) triangular filter weights.
pub fn mel_filterbank(n_mels: usize, n_fft: usize, sample_rate: u32) -> Tensor2 {
    let bins = n_fft / 2 + 1;
    let mut fb = Tensor2::zeros(n_mels, bins);
    for (m, (lo, c, hi)) in mel_band_edges(n_mels, sample_rate).into_iter().enumerate() {
        for k in 0..bins {
            let f = k as f64 * sample_rate as f64 / n_fft as f64;
            let w = if f > lo && f <= c {
                (f - lo) / (c - lo)
            } else if f > c && f < hi {
                (hi - f) / (hi - c)
            } else {
                0.0
            };
            fb[(m, k)] = w;
        }
    }
    fb
}

pub fn frame_params(sample_rate: u32) -> (usize, usize, usize) {
    let win = (WINDOW_SECONDS * sample_rate as f64).round() as usize;
    let hop = (SHIFT_SECONDS * sample_rate as f64).round() as usize;
    (win, hop, win.next_power_of_two())
}

pub fn wav_to_logmel(audio: &PcmAudio) -> Result<LogMelFrames> {
    if audio.channels != 1 {
        return Err(input_err!("expected mono audio, got {} channels", audio.channels));
    }
    if audio.samples.is_empty() {
        return Err(input_err!("audio is empty"));
    }
    if audio.sample_rate < 8000 {
        return Err(input_err!("sample rate {} Hz is below 8 kHz", audio.sample_rate));
    }
    let (win, hop, n_fft) = frame_params(audio.sample_rate);
    if audio.samples.len() < win {
        return Err(input_err!(
            "audio has {} samples, shorter than one {}-sample window",
            audio.samples.len(),
            win
        ));
    }
    let n_frames = (audio.samples.len() - win) / hop + 1;
    let window: Vec<f64> = (0..win)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / win as f64).cos())
        .collect();
    let fb = mel_filterbank(N_MELS, n_fft, audio.sample_rate);
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let bins = n_fft / 2 + 1;
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    let mut power = vec![0.0; bins];
    let mut out = Tensor2::zeros(n_frames, N_MELS);
    for t in 0..n_frames {
        let start = t * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < win {
                Complex::new(audio.samples[start + i] * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (p, c) in power.iter_mut().zip(&buf) {
            *p = c.norm_sqr();
        }
        for m in 0..N_MELS {
            let e: f64 = fb.row(m).iter().zip(&power).map(|(w, p)| w * p).sum();
            out[(t, m)] = e.max(LOG_FLOOR).ln();
        }
    }
    Ok(LogMelFrames::from_frames(out, audio.sample_rate))
}

/// Pads (with the log floor) or randomly crops to exactly `target` frames.
pub fn segment<R: Rng + ?Sized>(frames: &LogMelFrames, target: usize, rng: &mut R) -> LogMelFrames {
    let t = frames.valid_frames;
    let cols = frames.frames.cols();
    if t >= target {
        let start = if t == target { 0 } else { rng.random_range(0..=t - target) };
        let idx: Vec<usize> = (start..start + target).collect();
        return LogMelFrames {
            frames: frames.frames.select_rows(&idx),
            sample_rate: frames.sample_rate,
            valid_frames: target,
        };
    }
    let mut out = Tensor2::filled(target, cols, LOG_FLOOR.ln());
    for i in 0..t {
        out.row_mut(i).copy_from_slice(frames.frames.row(i));
    }
    LogMelFrames {
        frames: out,
        sample_rate: frames.sample_rate,
        valid_frames: t,
    }
}

/// Fixed 5-second (500-frame) segment.
pub fn segment_5s<R: Rng + ?Sized>(frames: &LogMelFrames, rng: &mut R) -> LogMelFrames {
    segment(frames, SEGMENT_FRAMES, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    /// 600 log-mel functionals.
    Logmel600,
    /// Time-averaged CPC encoder outputs.
    Cpc,
    /// Output of a dimensionality reducer.
    Reduced,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UtteranceFeatures {
    pub utterance_id: String,
    pub kind: FeatureKind,
    pub vector: Vec<f64>,
}

/// Mean, variance, skewness and kurtosis (non-excess) of a sample.
///
/// Variance is the population central moment; skewness and kurtosis are
/// standardized central moments and are 0 when the variance is 0.
pub fn four_moments(x: &[f64]) -> [f64; 4] {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if m2 <= 0.0 {
        return [mean, 0.0, 0.0, 0.0];
    }
    [mean, m2, m3 / m2.powf(1.5), m4 / (m2 * m2)]
}

/// Regression deltas over ±2 frames with edge frames replicated.
pub fn deltas(frames: &Tensor2) -> Tensor2 {
    let (t, d) = frames.shape();
    let mut out = Tensor2::zeros(t, d);
    let at = |i: isize| -> usize { i.clamp(0, t as isize - 1) as usize };
    for i in 0..t as isize {
        for j in 0..d {
            let mut s = 0.0;
            for n in 1..=2isize {
                s += n as f64 * (frames[(at(i + n), j)] - frames[(at(i - n), j)]);
            }
            out[(i as usize, j)] = s / 10.0;
        }
    }
    out
}

/// Per-band functionals for any band count: 7 static statistics
/// (mean, variance, skewness, kurtosis, min, max, range) followed by the
/// four moments of the first and second order deltas. Output is grouped by
/// statistic, each group holding one value per band.
pub fn functionals(frames: &Tensor2) -> Result<Vec<f64>> {
    let (t, bands) = frames.shape();
    if t < 3 {
        return Err(input_err!("functionals need at least 3 frames, got {t}"));
    }
    let d1 = deltas(frames);
    let d2 = deltas(&d1);
    let column = |m: &Tensor2, j: usize| -> Vec<f64> { (0..t).map(|i| m[(i, j)]).collect() };
    let mut groups = vec![vec![0.0; bands]; 15];
    for j in 0..bands {
        let c = column(frames, j);
        let mom = four_moments(&c);
        let min = c.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let stat = [mom[0], mom[1], mom[2], mom[3], min, max, max - min];
        for (g, v) in stat.into_iter().enumerate() {
            groups[g][j] = v;
        }
        for (k, delta) in [&d1, &d2].into_iter().enumerate() {
            let m = four_moments(&column(delta, j));
            for (g, v) in m.into_iter().enumerate() {
                groups[7 + 4 * k + g][j] = v;
            }
        }
    }
    Ok(groups.concat())
}

/// 600-dimensional utterance vector from the real (unpadded) frames.
pub fn functionals_600(utterance_id: &str, frames: &LogMelFrames) -> Result<UtteranceFeatures> {
    if frames.frames.cols() != N_MELS {
        return Err(input_err!("expected {N_MELS} mel bands, got {}", frames.frames.cols()));
    }
    let vector = functionals(&frames.valid())?;
    debug_assert_eq!(vector.len(), FUNCTIONALS_DIM);
    Ok(UtteranceFeatures {
        utterance_id: utterance_id.to_string(),
        kind: FeatureKind::Logmel600,
        vector,
    })
}
