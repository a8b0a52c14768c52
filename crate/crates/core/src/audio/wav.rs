use std::io::{Read, Seek, Write};
use std::path::Path;

use super::{AudioClip, AudioError};

fn map_hound(err: hound::Error) -> AudioError {
    match err {
        // hound reports short reads as `Other`
        hound::Error::IoError(e)
            if matches!(e.kind(), std::io::ErrorKind::UnexpectedEof | std::io::ErrorKind::Other) =>
        {
            AudioError::MalformedWav(format!("truncated: {e}"))
        }
        hound::Error::IoError(e) => AudioError::Io(e),
        hound::Error::Unsupported => AudioError::UnsupportedEncoding("unsupported WAV format".into()),
        hound::Error::FormatError(msg) => AudioError::MalformedWav(msg.to_string()),
        other => AudioError::MalformedWav(other.to_string()),
    }
}

/// Reads a PCM-16 WAV file, averaging channels down to mono.
pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path)?;
    let mut clip = read_wav(std::io::BufReader::new(file))?;
    clip.source_path = Some(path.to_path_buf());
    Ok(clip)
}

pub fn read_wav<R: Read>(reader: R) -> Result<AudioClip, AudioError> {
    let mut reader = hound::WavReader::new(reader).map_err(map_hound)?;
    let spec = reader.spec();
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(AudioError::UnsupportedEncoding(format!(
            "{:?} {}-bit",
            spec.sample_format, spec.bits_per_sample
        )));
    }
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(AudioError::MalformedWav("zero channels".into()));
    }
    let interleaved = reader
        .samples::<i16>()
        .collect::<Result<Vec<_>, _>>()
        .map_err(map_hound)?;
    if interleaved.len() % channels != 0 {
        return Err(AudioError::MalformedWav("partial frame at end of data".into()));
    }
    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| {
                let sum: i64 = frame.iter().map(|&s| s as i64).sum();
                let n = channels as i64;
                // round half away from zero
                let q = (sum.abs() * 2 + n) / (2 * n);
                (sum.signum() * q) as i16
            })
            .collect()
    };
    Ok(AudioClip::new(samples, spec.sample_rate))
}

pub fn write_wav(path: impl AsRef<Path>, clip: &AudioClip) -> Result<(), AudioError> {
    let file = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_wav_samples(file, &clip.samples, clip.sample_rate_hz)
}

/// Writes mono PCM-16 samples as a WAV stream.
pub fn write_wav_samples<W: Write + Seek>(writer: W, samples: &[i16], sample_rate_hz: u32) -> Result<(), AudioError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::new(writer, spec).map_err(map_hound)?;
    {
        let mut iw = w.get_i16_writer(samples.len() as u32);
        for &s in samples {
            iw.write_sample(s);
        }
        iw.flush().map_err(map_hound)?;
    }
    w.finalize().map_err(map_hound)
}
