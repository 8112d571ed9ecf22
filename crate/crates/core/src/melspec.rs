//! Log-mel analysis (80 bands, 50 Hz–12 kHz, 50 ms window, 12.5 ms hop) and
//! 10-bit mu-law companding.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

pub const SAMPLE_RATE: u32 = 24_000;
pub const N_MELS: usize = 80;
pub const FRAME_LENGTH_MS: f64 = 50.0;
pub const FRAME_SHIFT_MS: f64 = 12.5;
pub const FMIN_HZ: f64 = 50.0;
pub const FMAX_HZ: f64 = 12_000.0;
pub const LOG_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(bad) = samples.iter().find(|s| s.is_nan() || s.abs() > 1.0) {
            return Err(Error::Config(format!("sample {bad} outside [-1, 1]")));
        }
        Ok(Self { samples, sample_rate })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn truncated(&self, len: usize) -> AudioClip {
        AudioClip {
            samples: self.samples[..len.min(self.samples.len())].to_vec(),
            sample_rate: self.sample_rate,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub n_mels: usize,
    pub frame_length_ms: f64,
    pub frame_shift_ms: f64,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: SAMPLE_RATE,
            n_mels: N_MELS,
            frame_length_ms: FRAME_LENGTH_MS,
            frame_shift_ms: FRAME_SHIFT_MS,
            fmin_hz: FMIN_HZ,
            fmax_hz: FMAX_HZ,
        }
    }
}

impl MelConfig {
    pub fn win_length(&self) -> usize {
        (self.frame_length_ms * 1e-3 * self.sample_rate as f64).round() as usize
    }

    pub fn hop_length(&self) -> usize {
        (self.frame_shift_ms * 1e-3 * self.sample_rate as f64).round() as usize
    }

    /// Smallest power of two not below the window length.
    pub fn n_fft(&self) -> usize {
        self.win_length().next_power_of_two()
    }

    pub fn n_bins(&self) -> usize {
        self.n_fft() / 2 + 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelSpectrogram {
    /// `T × n_mels` log-mel energies.
    pub frames: Tensor,
    pub config: MelConfig,
}

impl MelSpectrogram {
    pub fn new(frames: Tensor, config: MelConfig) -> Result<Self> {
        if frames.cols() != N_MELS || config.n_mels != N_MELS {
            return Err(Error::InvalidMel(format!(
                "expected {N_MELS} mel bands, got {}",
                frames.cols()
            )));
        }
        if frames.rows() == 0 {
            return Err(Error::InvalidMel("no frames".into()));
        }
        if !frames.all_finite() {
            return Err(Error::InvalidMel("non-finite entries".into()));
        }
        Ok(Self { frames, config })
    }

    pub fn num_frames(&self) -> usize {
        self.frames.rows()
    }

    /// Binary layout (little endian):
    /// `b"PVMS"`, u16 version = 1, u16 n_mels, u32 frames, u32 sample_rate,
    /// f32 frame_length_ms, f32 frame_shift_ms, f32 fmin_hz, f32 fmax_hz,
    /// then `frames × n_mels` f32 values row by row.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let c = &self.config;
        w.write_all(MEL_MAGIC)?;
        w.write_all(&MEL_VERSION.to_le_bytes())?;
        w.write_all(&(c.n_mels as u16).to_le_bytes())?;
        w.write_all(&(self.frames.rows() as u32).to_le_bytes())?;
        w.write_all(&c.sample_rate.to_le_bytes())?;
        for v in [c.frame_length_ms, c.frame_shift_ms, c.fmin_hz, c.fmax_hz] {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        for v in self.frames.data() {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |m: &str| Error::InvalidMel(m.to_string());
        let mut header = [0u8; 32];
        r.read_exact(&mut header).map_err(|_| bad("truncated header"))?;
        if &header[0..4] != MEL_MAGIC {
            return Err(bad("bad magic"));
        }
        let u16_at = |i: usize| u16::from_le_bytes([header[i], header[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        let f32_at = |i: usize| f32::from_le_bytes(header[i..i + 4].try_into().unwrap()) as f64;
        if u16_at(4) != MEL_VERSION {
            return Err(bad("unsupported version"));
        }
        let n_mels = u16_at(6) as usize;
        let frames = u32_at(8) as usize;
        let config = MelConfig {
            sample_rate: u32_at(12),
            n_mels,
            frame_length_ms: f32_at(16),
            frame_shift_ms: f32_at(20),
            fmin_hz: f32_at(24),
            fmax_hz: f32_at(28),
        };
        let mut buf = vec![0u8; frames * n_mels * 4];
        r.read_exact(&mut buf).map_err(|_| bad("truncated data"))?;
        let data = buf
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as f64)
            .collect();
        Self::new(Tensor::from_vec(frames, n_mels, data), config)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

const MEL_MAGIC: &[u8; 4] = b"PVMS";
const MEL_VERSION: u16 = 1;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

fn hann(n: usize) -> Vec<f64> {
    // periodic Hann, as used for spectral analysis
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

/// Reflect index into `0..len` (mirror without repeating the edge sample).
fn reflect(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut k = i.rem_euclid(period);
    if k >= len as isize {
        k = period - k;
    }
    k as usize
}

/// Reflect-pads by half a window on the left and half a window minus one
/// hop on the right, so frame `t` is centred on sample `t·hop` and the
/// frame count is `floor(len / hop)`.
pub fn pad_signal(samples: &[f64], config: &MelConfig) -> Vec<f64> {
    let win = config.win_length();
    let hop = config.hop_length();
    let left = win / 2;
    let right = (win / 2).saturating_sub(hop);
    let len = samples.len();
    (0..left + len + right)
        .map(|i| samples[reflect(i as isize - left as isize, len)])
        .collect()
}

/// `1 + floor((padded_len - win) / hop)` for the padding in [`pad_signal`].
pub fn frame_count(num_samples: usize, config: &MelConfig) -> usize {
    let win = config.win_length();
    let hop = config.hop_length();
    let padded = num_samples + win / 2 + (win / 2).saturating_sub(hop);
    if padded < win {
        0
    } else {
        1 + (padded - win) / hop
    }
}

/// Hann-windowed analysis frames.
pub fn frame_signal(clip: &AudioClip, config: &MelConfig) -> Result<Vec<Vec<f64>>> {
    if clip.is_empty() {
        return Err(Error::EmptyAudio);
    }
    let hop = config.hop_length();
    let win = config.win_length();
    let count = frame_count(clip.len(), config);
    if count == 0 {
        return Err(Error::AudioTooShort {
            samples: clip.len(),
            hop,
        });
    }
    let padded = pad_signal(clip.samples(), config);
    let window = hann(win);
    Ok((0..count)
        .map(|t| {
            padded[t * hop..t * hop + win]
                .iter()
                .zip(&window)
                .map(|(x, w)| x * w)
                .collect()
        })
        .collect())
}

/// Triangular filters (peak 1) with centres equally spaced on the mel scale
/// between `fmin` and `fmax`; rows are filters, columns FFT bins.
pub fn mel_filterbank(config: &MelConfig) -> Result<Tensor> {
    let nyquist = config.sample_rate as f64 / 2.0;
    if config.fmax_hz > nyquist {
        return Err(Error::AboveNyquist {
            fmax: config.fmax_hz,
            nyquist,
        });
    }
    if !(config.fmin_hz >= 0.0 && config.fmin_hz < config.fmax_hz) {
        return Err(Error::Config(format!(
            "need 0 <= fmin < fmax, got {} and {}",
            config.fmin_hz, config.fmax_hz
        )));
    }
    let n_fft = config.n_fft();
    let n_bins = config.n_bins();
    let (mlo, mhi) = (hz_to_mel(config.fmin_hz), hz_to_mel(config.fmax_hz));
    let edges: Vec<f64> = (0..config.n_mels + 2)
        .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (config.n_mels + 1) as f64))
        .collect();
    let mut fb = Tensor::zeros(config.n_mels, n_bins);
    for m in 0..config.n_mels {
        let (lo, centre, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..n_bins {
            let f = k as f64 * config.sample_rate as f64 / n_fft as f64;
            let w = if f > lo && f <= centre {
                (f - lo) / (centre - lo)
            } else if f > centre && f < hi {
                (hi - f) / (hi - centre)
            } else {
                0.0
            };
            fb.set(m, k, w);
        }
    }
    Ok(fb)
}

/// Reusable analysis state (filterbank and FFT plan).
pub struct MelExtractor {
    config: MelConfig,
    filterbank: Tensor,
    fft: Arc<dyn Fft<f64>>,
}

impl MelExtractor {
    pub fn new(config: MelConfig) -> Result<Self> {
        let filterbank = mel_filterbank(&config)?;
        let fft = FftPlanner::new().plan_fft_forward(config.n_fft());
        Ok(Self {
            config,
            filterbank,
            fft,
        })
    }

    pub fn config(&self) -> &MelConfig {
        &self.config
    }

    pub fn filterbank(&self) -> &Tensor {
        &self.filterbank
    }

    pub fn power_spectrum(&self, frame: &[f64]) -> Vec<f64> {
        let n_fft = self.config.n_fft();
        let mut buf: Vec<Complex<f64>> = frame
            .iter()
            .map(|&x| Complex::new(x, 0.0))
            .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
            .take(n_fft)
            .collect();
        self.fft.process(&mut buf);
        buf[..self.config.n_bins()].iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<MelSpectrogram> {
        if clip.sample_rate() != self.config.sample_rate {
            return Err(Error::Config(format!(
                "clip sample rate {} differs from analysis rate {}",
                clip.sample_rate(),
                self.config.sample_rate
            )));
        }
        let frames = frame_signal(clip, &self.config)?;
        let n_mels = self.config.n_mels;
        let mut out = Tensor::zeros(frames.len(), n_mels);
        for (t, frame) in frames.iter().enumerate() {
            let power = self.power_spectrum(frame);
            for m in 0..n_mels {
                let e: f64 = self.filterbank.row(m).iter().zip(&power).map(|(w, p)| w * p).sum();
                out.set(t, m, (e + LOG_FLOOR).ln());
            }
        }
        MelSpectrogram::new(out, self.config)
    }
}

pub fn extract_mel(clip: &AudioClip, config: &MelConfig) -> Result<MelSpectrogram> {
    MelExtractor::new(*config)?.extract(clip)
}

/// Mu-law companding with `2^bits` classes and `mu = 2^bits - 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MuLawCodec {
    bits: u32,
}

impl Default for MuLawCodec {
    fn default() -> Self {
        Self { bits: 10 }
    }
}

impl MuLawCodec {
    pub fn new(bits: u32) -> Self {
        assert!((1..=16).contains(&bits), "mu-law bits must be in 1..=16");
        Self { bits }
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn levels(&self) -> usize {
        1 << self.bits
    }

    pub fn mu(&self) -> f64 {
        (self.levels() - 1) as f64
    }

    pub fn compress(&self, x: f64) -> f64 {
        let mu = self.mu();
        x.signum() * (1.0 + mu * x.abs()).ln() / (1.0 + mu).ln()
    }

    pub fn expand(&self, y: f64) -> f64 {
        let mu = self.mu();
        y.signum() * ((1.0 + mu).powf(y.abs()) - 1.0) / mu
    }

    /// Half-open bins: `floor((f(x) + 1) / 2 · levels)`, clamped. Inputs
    /// outside `[-1, 1]` are clamped with a warning.
    pub fn encode(&self, x: f64) -> usize {
        let x = if x.abs() > 1.0 {
            log::warn!("mu-law input {x} outside [-1, 1], clamping");
            x.clamp(-1.0, 1.0)
        } else {
            x
        };
        let levels = self.levels();
        let idx = ((self.compress(x) + 1.0) / 2.0 * levels as f64).floor();
        (idx.max(0.0) as usize).min(levels - 1)
    }

    /// Expands the companded-domain centre of bin `index`.
    pub fn decode(&self, index: usize) -> Result<f64> {
        let levels = self.levels();
        if index >= levels {
            return Err(Error::ClassOutOfRange(index));
        }
        let y = (index as f64 + 0.5) / levels as f64 * 2.0 - 1.0;
        Ok(self.expand(y))
    }

    /// Sample-domain interval `[lo, hi]` whose companded values fall in bin `index`.
    pub fn bin_bounds(&self, index: usize) -> Result<(f64, f64)> {
        let levels = self.levels();
        if index >= levels {
            return Err(Error::ClassOutOfRange(index));
        }
        let lo = index as f64 / levels as f64 * 2.0 - 1.0;
        let hi = (index + 1) as f64 / levels as f64 * 2.0 - 1.0;
        Ok((self.expand(lo), self.expand(hi)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn hop_window_and_fft_sizes() {
        let c = MelConfig::default();
        assert_eq!(c.hop_length(), 300);
        assert_eq!(c.win_length(), 1200);
        assert_eq!(c.n_fft(), 2048);
    }

    #[test]
    fn one_second_gives_eighty_frames() {
        let c = MelConfig::default();
        // 1 + floor((24000 + 600 + 300 - 1200) / 300) = 1 + 79
        assert_eq!(frame_count(24_000, &c), 80);
        let clip = AudioClip::new(vec![0.0; 24_000], SAMPLE_RATE).unwrap();
        assert_eq!(frame_signal(&clip, &c).unwrap().len(), 80);
    }

    #[test]
    fn silence_frames_are_zero() {
        let clip = AudioClip::new(vec![0.0; 3000], SAMPLE_RATE).unwrap();
        let frames = frame_signal(&clip, &MelConfig::default()).unwrap();
        assert!(frames.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn framing_errors() {
        let c = MelConfig::default();
        let empty = AudioClip::new(vec![], SAMPLE_RATE).unwrap();
        assert!(matches!(frame_signal(&empty, &c), Err(Error::EmptyAudio)));
        let short = AudioClip::new(vec![0.1; 299], SAMPLE_RATE).unwrap();
        assert!(matches!(frame_signal(&short, &c), Err(Error::AudioTooShort { .. })));
    }

    #[test]
    fn mel_scale_values() {
        assert_eq!(hz_to_mel(0.0), 0.0);
        assert_abs_diff_eq!(hz_to_mel(700.0), 2595.0 * 2f64.log10(), epsilon = 1e-12);
        assert_abs_diff_eq!(hz_to_mel(700.0), 781.17, epsilon = 5e-3);
        assert_abs_diff_eq!(mel_to_hz(hz_to_mel(1234.5)), 1234.5, epsilon = 1e-9);
    }

    #[test]
    fn filterbank_rows_are_single_peaked_triangles() {
        let c = MelConfig::default();
        let fb = mel_filterbank(&c).unwrap();
        assert_eq!(fb.shape(), (80, 1025));
        let bin_hz = c.sample_rate as f64 / c.n_fft() as f64;
        for m in 0..80 {
            let row = fb.row(m);
            assert!(row.iter().all(|&w| w >= 0.0));
            assert!(row.iter().sum::<f64>() > 0.0);
            let max = row.iter().cloned().fold(0.0, f64::max);
            assert_eq!(row.iter().filter(|&&w| w == max).count(), 1, "row {m}");
            for (k, &w) in row.iter().enumerate() {
                let f = k as f64 * bin_hz;
                if w > 0.0 {
                    assert!(f >= c.fmin_hz && f <= c.fmax_hz, "row {m} bin {k}");
                }
            }
        }
    }

    #[test]
    fn fmax_above_nyquist_rejected() {
        let c = MelConfig {
            sample_rate: 16_000,
            ..MelConfig::default()
        };
        assert!(matches!(mel_filterbank(&c), Err(Error::AboveNyquist { .. })));
    }

    #[test]
    fn silence_hits_log_floor() {
        let clip = AudioClip::new(vec![0.0; 6000], SAMPLE_RATE).unwrap();
        let mel = extract_mel(&clip, &MelConfig::default()).unwrap();
        assert!(mel.frames.data().iter().all(|&v| v == LOG_FLOOR.ln()));
    }

    #[test]
    fn mulaw_endpoints_and_centre() {
        let c = MuLawCodec::default();
        assert_eq!(c.levels(), 1024);
        assert_eq!(c.mu(), 1023.0);
        assert_eq!(c.encode(0.0), 512);
        assert_eq!(c.encode(1.0), 1023);
        assert_eq!(c.encode(-1.0), 0);
        let d = c.decode(512).unwrap();
        assert!(d > 0.0 && d < 1e-4);
        assert!(c.decode(0).unwrap() < 0.0);
        assert!(c.decode(1024).is_err());
    }

    #[test]
    fn mulaw_clamps_out_of_range() {
        let c = MuLawCodec::default();
        assert_eq!(c.encode(1.5), 1023);
        assert_eq!(c.encode(-7.0), 0);
    }

    #[test]
    fn mel_file_round_trip() {
        let mut t = Tensor::zeros(3, N_MELS);
        for (i, v) in t.data_mut().iter_mut().enumerate() {
            *v = i as f64 * 0.25 - 10.0;
        }
        let mel = MelSpectrogram::new(t, MelConfig::default()).unwrap();
        let mut buf = Vec::new();
        mel.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 32 + 3 * 80 * 4);
        let back = MelSpectrogram::read_from(&buf[..]).unwrap();
        assert_eq!(back, mel);
    }
}
