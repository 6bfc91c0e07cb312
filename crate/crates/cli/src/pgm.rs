//! Binary PGM (P5) export.

use std::fs;
use std::path::Path;

use anyhow::{ensure, Context, Result};

use crate::container::write_atomic;

/// Encodes a square grayscale frame, mapping `[lo, hi]` onto `0..=255`.
pub fn encode(frame: &[f32], lo: f32, hi: f32) -> Result<Vec<u8>> {
    let side = (frame.len() as f64).sqrt().round() as usize;
    ensure!(side * side == frame.len(), "frame of {} pixels is not square", frame.len());
    let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
    let span = hi - lo;
    out.extend(frame.iter().map(|&v| {
        let t = if span > 0.0 { (v - lo) / span } else { 0.5 };
        (t.clamp(0.0, 1.0) * 255.0).round() as u8
    }));
    Ok(out)
}

/// Writes `seqNNNN_tNN.pgm` for every frame of `n` sequences of `t` frames
/// with `d` pixels, normalizing each sequence by its own min and max.
pub fn write_sequences(dir: &Path, frames: &[f32], n: usize, t: usize, d: usize) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    for i in 0..n {
        let seq = &frames[i * t * d..(i + 1) * t * d];
        let lo = seq.iter().copied().fold(f32::INFINITY, f32::min);
        let hi = seq.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        for s in 0..t {
            let bytes = encode(&seq[s * d..(s + 1) * d], lo, hi)?;
            write_atomic(&dir.join(format!("seq{i:04}_t{s:02}.pgm")), &bytes)?;
        }
    }
    Ok(())
}
