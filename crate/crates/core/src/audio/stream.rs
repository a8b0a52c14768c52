use std::collections::VecDeque;
use std::io::Read;

use super::{AudioError, CLIP_SAMPLES, SAMPLE_RATE_HZ};

const SAMPLES_PER_MS: u64 = SAMPLE_RATE_HZ as u64 / 1000;

/// One-second analysis window taken from a stream.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamWindow {
    pub samples: Vec<i16>,
    pub start_time_ms: u64,
}

/// Pull-based PCM provider. Returns `Err(SourceClosed)` once exhausted.
pub trait SampleSource {
    fn read_samples(&mut self, buf: &mut [i16]) -> Result<usize, AudioError>;
}

/// Source over an in-memory sample buffer.
pub struct SliceSource<'a> {
    samples: &'a [i16],
    pos: usize,
}

impl<'a> SliceSource<'a> {
    pub fn new(samples: &'a [i16]) -> Self {
        Self { samples, pos: 0 }
    }
}

impl SampleSource for SliceSource<'_> {
    fn read_samples(&mut self, buf: &mut [i16]) -> Result<usize, AudioError> {
        if self.pos >= self.samples.len() {
            return Err(AudioError::SourceClosed);
        }
        let n = buf.len().min(self.samples.len() - self.pos);
        buf[..n].copy_from_slice(&self.samples[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

/// Little-endian PCM-16 byte stream (e.g. standard input).
pub struct PcmReader<R> {
    inner: R,
    bytes: Vec<u8>,
    carry: Option<u8>,
}

impl<R: Read> PcmReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            bytes: Vec::new(),
            carry: None,
        }
    }
}

impl<R: Read> SampleSource for PcmReader<R> {
    fn read_samples(&mut self, buf: &mut [i16]) -> Result<usize, AudioError> {
        loop {
            self.bytes.resize(buf.len() * 2, 0);
            let offset = usize::from(self.carry.is_some());
            if let Some(b) = self.carry.take() {
                self.bytes[0] = b;
            }
            let n = match self.inner.read(&mut self.bytes[offset..]) {
                Ok(n) => n,
                Err(e) if e.kind() == std::io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            };
            if n == 0 {
                // a dangling odd byte at end of stream is dropped
                return Err(AudioError::SourceClosed);
            }
            let avail = n + offset;
            let whole = avail / 2;
            for (dst, pair) in buf.iter_mut().zip(self.bytes[..whole * 2].chunks_exact(2)) {
                *dst = i16::from_le_bytes([pair[0], pair[1]]);
            }
            if avail % 2 == 1 {
                self.carry = Some(self.bytes[avail - 1]);
            }
            if whole > 0 {
                return Ok(whole);
            }
        }
    }
}

/// Fixed-capacity circular sample store holding the most recent second.
pub struct RingBuffer {
    data: Box<[i16]>,
    write: usize,
    len: usize,
}

impl RingBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            data: vec![0; capacity].into_boxed_slice(),
            write: 0,
            len: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.data.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn push(&mut self, sample: i16) {
        self.data[self.write] = sample;
        self.write = (self.write + 1) % self.data.len();
        self.len = (self.len + 1).min(self.data.len());
    }

    /// Copies the buffered samples oldest-first into `out`.
    pub fn copy_ordered(&self, out: &mut [i16]) {
        let cap = self.data.len();
        let start = (self.write + cap - self.len) % cap;
        let first = (cap - start).min(self.len);
        out[..first].copy_from_slice(&self.data[start..start + first]);
        out[first..self.len].copy_from_slice(&self.data[..self.len - first]);
    }

    pub fn clear(&mut self) {
        self.write = 0;
        self.len = 0;
    }
}

/// Push-driven sliding window: a window is emitted every hop once one
/// second of audio has been seen. Does not allocate after construction.
pub struct WindowStream {
    ring: RingBuffer,
    scratch: Box<[i16]>,
    hop_samples: u64,
    total: u64,
    next_emit: u64,
}

impl WindowStream {
    pub fn new(hop_ms: u32) -> Result<Self, AudioError> {
        if !(50..=1000).contains(&hop_ms) {
            return Err(AudioError::InvalidHop(hop_ms));
        }
        Ok(Self {
            ring: RingBuffer::new(CLIP_SAMPLES),
            scratch: vec![0; CLIP_SAMPLES].into_boxed_slice(),
            hop_samples: hop_ms as u64 * SAMPLES_PER_MS,
            total: 0,
            next_emit: CLIP_SAMPLES as u64,
        })
    }

    pub fn hop_ms(&self) -> u32 {
        (self.hop_samples / SAMPLES_PER_MS) as u32
    }

    pub fn ring_capacity(&self) -> usize {
        self.ring.capacity()
    }

    /// Samples consumed so far.
    pub fn position(&self) -> u64 {
        self.total
    }

    /// Feeds samples, calling `on_window(samples, start_time_ms)` for each
    /// completed window in order.
    pub fn push<F: FnMut(&[i16], u64)>(&mut self, samples: &[i16], mut on_window: F) {
        for &s in samples {
            self.ring.push(s);
            self.total += 1;
            if self.total == self.next_emit {
                self.ring.copy_ordered(&mut self.scratch);
                let start_ms = (self.total - CLIP_SAMPLES as u64) / SAMPLES_PER_MS;
                on_window(&self.scratch, start_ms);
                self.next_emit += self.hop_samples;
            }
        }
    }

    pub fn reset(&mut self) {
        self.ring.clear();
        self.total = 0;
        self.next_emit = CLIP_SAMPLES as u64;
    }
}

/// Number of windows emitted for `len_samples` of input at `hop_ms`.
pub fn window_count(len_samples: u64, hop_ms: u32) -> u64 {
    let clip = CLIP_SAMPLES as u64;
    if len_samples < clip {
        0
    } else {
        (len_samples - clip) / (hop_ms as u64 * SAMPLES_PER_MS) + 1
    }
}

/// Iterator adapter over a [`SampleSource`].
pub struct StreamWindows<S> {
    source: S,
    stream: WindowStream,
    chunk: Vec<i16>,
    pending: VecDeque<StreamWindow>,
    done: bool,
}

pub fn stream_windows<S: SampleSource>(source: S, hop_ms: u32) -> Result<StreamWindows<S>, AudioError> {
    Ok(StreamWindows {
        source,
        stream: WindowStream::new(hop_ms)?,
        chunk: vec![0; 1024],
        pending: VecDeque::new(),
        done: false,
    })
}

impl<S: SampleSource> Iterator for StreamWindows<S> {
    type Item = Result<StreamWindow, AudioError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(w) = self.pending.pop_front() {
                return Some(Ok(w));
            }
            if self.done {
                return None;
            }
            match self.source.read_samples(&mut self.chunk) {
                Ok(n) => {
                    let pending = &mut self.pending;
                    self.stream.push(&self.chunk[..n], |samples, start_time_ms| {
                        pending.push_back(StreamWindow {
                            samples: samples.to_vec(),
                            start_time_ms,
                        })
                    });
                }
                Err(AudioError::SourceClosed) => self.done = true,
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn starts(len: usize, hop: u32) -> Vec<u64> {
        let samples: Vec<i16> = (0..len).map(|i| (i % 1000) as i16).collect();
        stream_windows(SliceSource::new(&samples), hop)
            .unwrap()
            .map(|w| w.unwrap().start_time_ms)
            .collect()
    }

    #[test]
    fn two_seconds_quarter_hop() {
        assert_eq!(starts(32_000, 250), vec![0, 250, 500, 750, 1000]);
    }

    #[test]
    fn half_second_yields_nothing() {
        assert!(starts(8_000, 250).is_empty());
    }

    #[test]
    fn one_second_hop_is_non_overlapping() {
        assert_eq!(starts(48_000, 1000), vec![0, 1000, 2000]);
    }

    #[test]
    fn window_contents_are_the_latest_second() {
        let samples: Vec<i16> = (0..20_000).map(|i| (i % 20_000) as i16).collect();
        let windows: Vec<_> = stream_windows(SliceSource::new(&samples), 250)
            .unwrap()
            .map(Result::unwrap)
            .collect();
        assert_eq!(windows[1].samples, samples[4_000..20_000].to_vec());
    }

    #[test]
    fn hop_bounds() {
        assert!(matches!(WindowStream::new(49), Err(AudioError::InvalidHop(49))));
        assert!(WindowStream::new(50).is_ok());
        assert!(WindowStream::new(1000).is_ok());
        assert!(WindowStream::new(1001).is_err());
    }

    #[test]
    fn ring_capacity_is_one_second() {
        assert_eq!(WindowStream::new(250).unwrap().ring_capacity(), 16_000);
    }

    #[test]
    fn pcm_reader_handles_split_bytes() {
        struct Dribble(Vec<u8>, usize);
        impl Read for Dribble {
            fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
                if self.1 >= self.0.len() || buf.is_empty() {
                    return Ok(0);
                }
                buf[0] = self.0[self.1];
                self.1 += 1;
                Ok(1)
            }
        }
        let want: Vec<i16> = vec![1, -2, 300, i16::MIN];
        let bytes: Vec<u8> = want.iter().flat_map(|s| s.to_le_bytes()).collect();
        let mut src = PcmReader::new(Dribble(bytes, 0));
        let mut got = Vec::new();
        let mut buf = [0i16; 8];
        loop {
            match src.read_samples(&mut buf) {
                Ok(n) => got.extend_from_slice(&buf[..n]),
                Err(AudioError::SourceClosed) => break,
                Err(e) => panic!("{e}"),
            }
        }
        assert_eq!(got, want);
    }

    proptest! {
        #[test]
        fn window_count_matches_formula(len_ms in 0u64..4_000, hop in 50u32..=1000) {
            let len = (len_ms * 16) as usize;
            let n = starts(len, hop).len() as u64;
            let expected = if len_ms < 1000 { 0 } else { (len_ms - 1000) / hop as u64 + 1 };
            prop_assert_eq!(n, expected);
            prop_assert_eq!(window_count(len as u64, hop), expected);
        }

        #[test]
        fn chunking_does_not_change_windows(len in 16_000usize..40_000, chunk in 1usize..5_000) {
            let samples: Vec<i16> = (0..len).map(|i| (i * 7 % 65_536) as i16).collect();
            let mut whole = Vec::new();
            let mut s = WindowStream::new(250).unwrap();
            s.push(&samples, |w, t| whole.push((w.to_vec(), t)));
            let mut pieces = Vec::new();
            let mut s = WindowStream::new(250).unwrap();
            for c in samples.chunks(chunk) {
                s.push(c, |w, t| pieces.push((w.to_vec(), t)));
            }
            prop_assert_eq!(whole, pieces);
        }
    }
}
