use crate::error::{argument, Error, Result};
use crate::math::Matrix;

/// A set of equally long sequences stored time-major: `frames[t]` is a
/// `dim × num_sequences` matrix whose column `i` is frame `t` of sequence `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceSet {
    frames: Vec<Matrix>,
}

impl SequenceSet {
    pub fn new(frames: Vec<Matrix>) -> Result<Self> {
        if let Some(first) = frames.first() {
            for f in &frames {
                if f.shape() != first.shape() {
                    return Err(Error::Shape {
                        op: "SequenceSet frames",
                        left: first.shape(),
                        right: f.shape(),
                    });
                }
            }
        }
        Ok(Self { frames })
    }

    /// Builds the set from per-sequence frame lists.
    pub fn from_sequences(seqs: &[Vec<Vec<f64>>]) -> Result<Self> {
        let len = seqs.first().map_or(0, |s| s.len());
        if seqs.iter().any(|s| s.len() != len) {
            return Err(argument("sequences differ in length"));
        }
        let frames = (0..len)
            .map(|t| {
                let cols: Vec<&[f64]> = seqs.iter().map(|s| s[t].as_slice()).collect();
                Matrix::from_columns(&cols)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(frames)
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn num_sequences(&self) -> usize {
        self.frames.first().map_or(0, |f| f.cols())
    }

    pub fn dim(&self) -> usize {
        self.frames.first().map_or(0, |f| f.rows())
    }

    pub fn frames(&self) -> &[Matrix] {
        &self.frames
    }

    pub fn frame(&self, t: usize) -> &Matrix {
        &self.frames[t]
    }

    /// Frames `start..start+len` of every sequence.
    pub fn prefix_window(&self, start: usize, len: usize) -> Result<Vec<Matrix>> {
        if start + len > self.len() {
            return Err(argument(format!(
                "window {start}..{} exceeds sequence length {}",
                start + len,
                self.len()
            )));
        }
        Ok(self.frames[start..start + len].to_vec())
    }

    /// Sub-set holding only the listed sequences.
    pub fn select(&self, indices: &[usize]) -> SequenceSet {
        SequenceSet {
            frames: self.frames.iter().map(|f| f.select_columns(indices)).collect(),
        }
    }

    /// Gathers windows of `len` frames: sequence `picks[j].0` starting at
    /// frame `picks[j].1` becomes column `j` of every returned matrix.
    pub fn gather_windows(&self, picks: &[(usize, usize)], len: usize) -> Result<Vec<Matrix>> {
        let dim = self.dim();
        let mut out = vec![Matrix::zeros(dim, picks.len()); len];
        for (j, &(seq, start)) in picks.iter().enumerate() {
            if start + len > self.len() || seq >= self.num_sequences() {
                return Err(argument(format!(
                    "window ({seq}, {start}) of length {len} out of range"
                )));
            }
            for (t, dst) in out.iter_mut().enumerate() {
                let src = &self.frames[start + t];
                let n = picks.len();
                let data = dst.data_mut();
                for r in 0..dim {
                    data[r * n + j] = src.get(r, seq);
                }
            }
        }
        Ok(out)
    }

    /// Sequence `i` as a list of frame vectors.
    pub fn sequence(&self, i: usize) -> Vec<Vec<f64>> {
        self.frames.iter().map(|f| f.column(i)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gather_matches_select() {
        let seqs: Vec<Vec<Vec<f64>>> = (0..4)
            .map(|i| (0..5).map(|t| vec![i as f64, t as f64]).collect())
            .collect();
        let set = SequenceSet::from_sequences(&seqs).unwrap();
        assert_eq!(set.len(), 5);
        assert_eq!(set.num_sequences(), 4);
        let w = set.gather_windows(&[(2, 1), (0, 3)], 2).unwrap();
        assert_eq!(w[0].column(0), vec![2.0, 1.0]);
        assert_eq!(w[1].column(1), vec![0.0, 4.0]);
        assert!(set.gather_windows(&[(0, 4)], 2).is_err());
        let sel = set.select(&[3, 1]);
        assert_eq!(sel.sequence(0), seqs[3]);
    }
}
