//! Frame pooling: manifests + rendered WAVs to training matrices.

use std::path::Path;

use crate::audio::{frame_signal, read_wav, BinauralFrame, WavContent, FRAME_LEN};
use crate::dsp::{gcc_phat, GCC_LAGS};
use crate::error::{Error, Result};
use crate::nn::{InputKind, Tensor};
use crate::sim::dataset::{entry_label, ResolvedManifest, Split};

/// Flat pool of per-frame training items (raw frames or GCC features).
#[derive(Debug, Clone)]
pub struct FramePool {
    pub input_kind: InputKind,
    pub item_len: usize,
    data: Vec<f32>,
    labels: Vec<usize>,
}

impl FramePool {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    /// Gather the items at `indices` into one batch tensor.
    pub fn batch(&self, indices: &[usize]) -> (Tensor<f32>, Vec<usize>) {
        let b = indices.len();
        let mut data = Vec::with_capacity(b * self.item_len);
        let mut labels = Vec::with_capacity(b);
        for &i in indices {
            data.extend_from_slice(&self.data[i * self.item_len..(i + 1) * self.item_len]);
            labels.push(self.labels[i]);
        }
        let shape: Vec<usize> = match self.input_kind {
            InputKind::Frames => vec![b, 2, FRAME_LEN, 1],
            InputKind::Features(n) => vec![b, n],
        };
        (Tensor::from_vec(&shape, data).expect("consistent item length"), labels)
    }
}

pub fn read_binaural(path: &Path) -> Result<crate::audio::BinauralWaveform> {
    match read_wav(path)? {
        WavContent::Binaural(w) => Ok(w),
        WavContent::Mono(_) => Err(Error::wav(path, "expected a stereo dataset file")),
    }
}

pub fn frame_item_len(kind: InputKind) -> usize {
    match kind {
        InputKind::Frames => 2 * FRAME_LEN,
        InputKind::Features(n) => n,
    }
}

fn push_frame(kind: InputKind, frame: &BinauralFrame, data: &mut Vec<f32>) {
    match kind {
        InputKind::Frames => {
            data.extend_from_slice(frame.left());
            data.extend_from_slice(frame.right());
        }
        InputKind::Features(n) => {
            debug_assert_eq!(n, GCC_LAGS);
            data.extend_from_slice(gcc_phat(frame).values());
        }
    }
}

/// Pool every `frame_stride`-th frame of the matching entries.
pub fn load_pool<F>(
    resolved: &ResolvedManifest,
    split: Split,
    kind: InputKind,
    frame_stride: usize,
    mut keep_entry: F,
) -> Result<FramePool>
where
    F: FnMut(&crate::sim::dataset::ManifestEntry) -> bool,
{
    if frame_stride == 0 {
        return Err(Error::Config("frame stride must be at least 1".into()));
    }
    let item_len = frame_item_len(kind);
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for entry in resolved.entries_for(split) {
        if !keep_entry(entry) {
            continue;
        }
        let label = entry_label(entry)?;
        let wave = read_binaural(&resolved.root.join(&entry.path))?;
        for frame in frame_signal(&wave)?.iter().step_by(frame_stride) {
            push_frame(kind, frame, &mut data);
            labels.push(label);
        }
    }
    Ok(FramePool {
        input_kind: kind,
        item_len,
        data,
        labels,
    })
}
