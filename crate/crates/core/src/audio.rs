//! RIFF WAV input/output and deterministic resampling.

use std::path::Path;

use crate::error::Result;
use crate::melspec::AudioClip;

/// Reads a PCM WAV file, downmixing to mono. Integer samples are scaled to
/// `[-1, 1]`.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    let channels = spec.channels.max(1) as usize;
    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<std::result::Result<_, _>>()?
        }
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()?,
    };
    let mono = interleaved
        .chunks(channels)
        .map(|c| (c.iter().sum::<f64>() / channels as f64).clamp(-1.0, 1.0))
        .collect();
    AudioClip::new(mono, spec.sample_rate)
}

/// Reads a WAV file and resamples it to `target_rate` if needed.
pub fn load_audio(path: &Path, target_rate: u32) -> Result<AudioClip> {
    let clip = read_wav(path)?;
    Ok(resample(&clip, target_rate))
}

/// Writes 16-bit PCM mono.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec)?;
    for &s in clip.samples() {
        writer.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    writer.finalize()?;
    Ok(())
}

const SINC_HALF_WIDTH: f64 = 16.0;

/// Hann-windowed sinc interpolation with the cutoff at the lower of the two
/// Nyquist frequencies. Pure function of its inputs.
pub fn resample(clip: &AudioClip, target_rate: u32) -> AudioClip {
    let src_rate = clip.sample_rate();
    if src_rate == target_rate || clip.is_empty() {
        return AudioClip::new(clip.samples().to_vec(), target_rate).expect("valid clip");
    }
    let ratio = target_rate as f64 / src_rate as f64;
    let cutoff = ratio.min(1.0);
    let out_len = ((clip.len() as f64) * ratio).round().max(1.0) as usize;
    let src = clip.samples();
    let half = SINC_HALF_WIDTH / cutoff;
    let out = (0..out_len)
        .map(|n| {
            let t = n as f64 / ratio;
            let lo = (t - half).ceil().max(0.0) as usize;
            let hi = ((t + half).floor() as usize).min(src.len() - 1);
            let mut acc = 0.0;
            for (k, &x) in src.iter().enumerate().take(hi + 1).skip(lo) {
                let d = t - k as f64;
                let window = 0.5 + 0.5 * (std::f64::consts::PI * d / half).cos();
                acc += x * cutoff * sinc(cutoff * d) * window;
            }
            acc.clamp(-1.0, 1.0)
        })
        .collect();
    AudioClip::new(out, target_rate).expect("clamped samples are valid")
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}
