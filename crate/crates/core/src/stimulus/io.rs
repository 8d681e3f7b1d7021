//! Stimulus files: 16-bit stereo WAV and the `XFMP` float raster.
//!
//! `XFMP` layout: magic `XFMP`, width, height, frame count (u32 LE each),
//! then `frames × height × width` f32 LE values, frame-major then row-major.

use std::io::{Read, Seek, Write};

use super::{BinauralClip, StimulusError};
use crate::numerics::Tensor;

pub fn write_wav<W: Write + Seek>(clip: &BinauralClip, w: W) -> Result<(), StimulusError> {
    let spec = hound::WavSpec {
        channels: 2,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut wtr = hound::WavWriter::new(w, spec)?;
    let q = |v: f64| (v.clamp(-1.0, 1.0) * i16::MAX as f64).round() as i16;
    for (&l, &r) in clip.left.iter().zip(&clip.right) {
        wtr.write_sample(q(l))?;
        wtr.write_sample(q(r))?;
    }
    wtr.finalize()?;
    Ok(())
}

/// Bytes of a WAV rendering of `clip`.
pub fn wav_bytes(clip: &BinauralClip) -> Result<Vec<u8>, StimulusError> {
    let mut cur = std::io::Cursor::new(Vec::new());
    write_wav(clip, &mut cur)?;
    Ok(cur.into_inner())
}

fn read_samples<R: Read>(r: R) -> Result<(hound::WavSpec, Vec<f64>), StimulusError> {
    let mut rdr = hound::WavReader::new(r)?;
    let spec = rdr.spec();
    let samples = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = (1i64 << (spec.bits_per_sample - 1)) as f64;
            rdr.samples::<i32>()
                .map(|s| s.map(|v| v as f64 / scale))
                .collect::<Result<Vec<_>, _>>()?
        }
        hound::SampleFormat::Float => rdr
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<Vec<_>, _>>()?,
    };
    Ok((spec, samples))
}

/// Reads a stereo WAV into a clip with unknown azimuth (0).
pub fn read_wav<R: Read>(r: R) -> Result<BinauralClip, StimulusError> {
    let (spec, s) = read_samples(r)?;
    if spec.channels != 2 {
        return Err(StimulusError::Format(format!("expected 2 channels, found {}", spec.channels)));
    }
    let left: Vec<f64> = s.iter().step_by(2).copied().collect();
    let right: Vec<f64> = s.iter().skip(1).step_by(2).copied().collect();
    let duration_ms = (left.len() as u64 * 1000 / spec.sample_rate as u64) as u32;
    Ok(BinauralClip {
        sample_rate: spec.sample_rate,
        left,
        right,
        duration_ms,
        azimuth_deg: 0.0,
    })
}

/// Reads a mono WAV (or the first channel of a multichannel file) as the
/// dry utterance. Returns the samples and their rate.
pub fn read_mono_wav<R: Read>(r: R) -> Result<(Vec<f64>, u32), StimulusError> {
    let (spec, s) = read_samples(r)?;
    let ch = spec.channels.max(1) as usize;
    Ok((s.into_iter().step_by(ch).collect(), spec.sample_rate))
}

pub const XFMP_MAGIC: &[u8; 4] = b"XFMP";

/// Writes `[1, H, W]` or `[H, W]` frames of equal size.
pub fn write_xfmp<W: Write>(frames: &[Tensor], mut w: W) -> Result<(), StimulusError> {
    let first = frames.first().ok_or_else(|| StimulusError::Format("no frames to write".into()))?;
    let (h, wd) = frame_dims(first)?;
    w.write_all(XFMP_MAGIC)?;
    for v in [wd, h, frames.len()] {
        let v = u32::try_from(v).map_err(|_| StimulusError::Format("dimension exceeds u32".into()))?;
        w.write_all(&v.to_le_bytes())?;
    }
    for f in frames {
        if frame_dims(f)? != (h, wd) {
            return Err(StimulusError::Format("frames differ in size".into()));
        }
        for &v in f.data() {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn frame_dims(t: &Tensor) -> Result<(usize, usize), StimulusError> {
    match t.shape() {
        [1, h, w] | [h, w] => Ok((*h, *w)),
        s => Err(StimulusError::Format(format!("frame shape {s:?} is not a single map"))),
    }
}

/// Reads frames back as `[1, H, W]` tensors.
pub fn read_xfmp<R: Read>(mut r: R) -> Result<Vec<Tensor>, StimulusError> {
    let mut head = [0u8; 16];
    r.read_exact(&mut head)?;
    if &head[..4] != XFMP_MAGIC {
        return Err(StimulusError::Format("bad XFMP magic".into()));
    }
    let word = |i: usize| u32::from_le_bytes(head[4 * i..4 * i + 4].try_into().expect("4 bytes")) as usize;
    let (w, h, n) = (word(1), word(2), word(3));
    let mut raw = vec![0u8; w * h * 4];
    let mut frames = Vec::with_capacity(n);
    for _ in 0..n {
        r.read_exact(&mut raw)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes"))))
            .collect();
        frames.push(Tensor::new(vec![1, h, w], data).map_err(|e| StimulusError::Format(e.to_string()))?);
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::Side;
    use crate::stimulus::{render_cue_maps, render_target_audio, CueChannel};
    use crate::protocol::CueDirection;

    #[test]
    fn wav_round_trip_within_quantization() {
        let c = render_target_audio(Side::Left, 22_050, 3).unwrap();
        let bytes = wav_bytes(&c).unwrap();
        let back = read_wav(&bytes[..]).unwrap();
        assert_eq!(back.len(), c.len());
        assert_eq!(back.sample_rate, 22_050);
        let err = c.left.iter().zip(&back.left).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1.0 / 32_000.0);
        let (mono, sr) = read_mono_wav(&bytes[..]).unwrap();
        assert_eq!((mono.len(), sr), (c.len(), 22_050));
    }

    #[test]
    fn xfmp_header_and_round_trip() {
        let s = render_cue_maps(CueDirection::Left, CueChannel::Ge, 3, 0.1, 1);
        let mut buf = Vec::new();
        write_xfmp(&s.frames, &mut buf).unwrap();
        assert_eq!(&buf[..4], b"XFMP");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 320);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 200);
        assert_eq!(u32::from_le_bytes(buf[12..16].try_into().unwrap()), 3);
        assert_eq!(buf.len(), 16 + 3 * 320 * 200 * 4);
        let back = read_xfmp(&buf[..]).unwrap();
        for (a, b) in s.frames.iter().zip(&back) {
            assert!(a.max_abs_diff(b) < 1e-6);
        }
    }
}
