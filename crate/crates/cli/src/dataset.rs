//! Generated data sets with their split assignment and container encoding.

use anyhow::{bail, ensure, Context, Result};
use relseq::datagen::{
    self, BallsConfig, GeneratorKind, PatchSource, RotationConfig, SequenceSample, ShiftConfig, ShiftLabelSpec,
};
use relseq::preprocess::WhiteningTransform;
use relseq::{Matrix, SequenceSet};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::container::{ArrayData, TensorContainer};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    fn code(self) -> i64 {
        self as i64
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            "all" => bail!("'all' is not a single split"),
            other => bail!("unknown split '{other}'"),
        }
    }
}

/// Every knob of a generator run; stored verbatim in the data set header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenSpec {
    pub kind: GeneratorKind,
    pub seed: u64,
    pub n: usize,
    /// frames per sequence
    pub frames: usize,
    /// patch side for shifts/rotations, image side for balls
    pub size: usize,
    pub vel_range: Option<f64>,
    pub acc_range: Option<f64>,
    pub integer: bool,
    pub n_balls: usize,
    pub radius: f64,
    pub box_size: f64,
    pub substeps: usize,
    /// train/valid/test counts; everything goes to train when absent
    pub split: Option<[usize; 3]>,
}

impl GenSpec {
    pub fn new(kind: GeneratorKind, n: usize, seed: u64) -> Self {
        let balls = BallsConfig::default();
        Self {
            kind,
            seed,
            n,
            frames: if kind == GeneratorKind::Balls { balls.frames } else { 8 },
            size: if kind == GeneratorKind::Balls { balls.resolution } else { 13 },
            vel_range: None,
            acc_range: None,
            integer: false,
            n_balls: balls.n_balls,
            radius: balls.radius,
            box_size: balls.box_size,
            substeps: balls.substeps,
            split: None,
        }
    }

    /// Velocity bound after defaults: 3 px for shifts, π for constant
    /// rotations, π/12 for accelerated rotations.
    pub fn effective_vel_range(&self) -> f64 {
        self.vel_range.unwrap_or(match self.kind {
            GeneratorKind::ConstShift | GeneratorKind::AccShift => 3.0,
            GeneratorKind::ConstRot => std::f64::consts::PI,
            GeneratorKind::AccRot => std::f64::consts::PI / 12.0,
            GeneratorKind::Balls => 0.0,
        })
    }

    pub fn effective_acc_range(&self) -> f64 {
        self.acc_range.unwrap_or(match self.kind {
            GeneratorKind::AccShift => 3.0,
            GeneratorKind::AccRot => std::f64::consts::PI / 12.0,
            _ => 0.0,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub spec: GenSpec,
    pub samples: Vec<SequenceSample>,
    pub split: Vec<Split>,
    pub label_spec: Option<ShiftLabelSpec>,
}

pub fn generate(spec: &GenSpec, patches: &PatchSource) -> Result<Dataset> {
    ensure!(spec.n > 0, "--n must be positive");
    ensure!(spec.frames >= 2, "sequences need at least 2 frames");
    let mut samples = match spec.kind {
        GeneratorKind::ConstShift | GeneratorKind::AccShift => datagen::gen_shift_sequences(
            spec.seed,
            &ShiftConfig {
                n: spec.n,
                frames: spec.frames,
                size: spec.size,
                vel_range: spec.effective_vel_range(),
                acc_range: spec.effective_acc_range(),
                integer: spec.integer,
            },
            patches,
        )?,
        GeneratorKind::ConstRot | GeneratorKind::AccRot => datagen::gen_rotation_sequences(
            spec.seed,
            &RotationConfig {
                n: spec.n,
                frames: spec.frames,
                size: spec.size,
                angle_range: spec.effective_vel_range(),
                acc_range: spec.effective_acc_range(),
            },
            patches,
        )?,
        GeneratorKind::Balls => datagen::gen_bouncing_balls(
            spec.seed,
            &BallsConfig {
                n: spec.n,
                frames: spec.frames,
                resolution: spec.size,
                n_balls: spec.n_balls,
                radius: spec.radius,
                box_size: spec.box_size,
                substeps: spec.substeps,
                ..BallsConfig::default()
            },
        )?,
    };
    let label_spec = datagen::assign_labels(spec.kind, &mut samples, spec.effective_acc_range())?;
    let counts = spec.split.unwrap_or([spec.n, 0, 0]);
    let parts = datagen::split_indices(spec.n, counts, spec.seed)?;
    let mut split = vec![Split::Train; spec.n];
    let mut assigned = vec![false; spec.n];
    for (which, idx) in Split::ALL.iter().zip(&parts) {
        for &i in idx {
            split[i] = *which;
            assigned[i] = true;
        }
    }
    // samples beyond the requested counts are dropped
    let keep: Vec<usize> = (0..spec.n).filter(|&i| assigned[i]).collect();
    Ok(Dataset {
        spec: spec.clone(),
        samples: keep.iter().map(|&i| samples[i].clone()).collect(),
        split: keep.iter().map(|&i| split[i]).collect(),
        label_spec,
    })
}

impl Dataset {
    pub fn frame_len(&self) -> usize {
        self.samples.first().map_or(0, |s| s.frames[0].len())
    }

    pub fn num_frames(&self) -> usize {
        self.samples.first().map_or(0, |s| s.frames.len())
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.samples.len()).filter(|&i| self.split[i] == split).collect()
    }

    pub fn has_labels(&self) -> bool {
        !self.samples.is_empty() && self.samples.iter().all(|s| s.label.is_some())
    }

    pub fn labels(&self, split: Split) -> Result<Vec<usize>> {
        ensure!(self.has_labels(), "data set ({}) carries no labels", self.spec.kind.name());
        Ok(self.indices(split).iter().map(|&i| self.samples[i].label.unwrap()).collect())
    }

    /// Time-major set over the first `len` frames of one split, optionally
    /// whitened.
    pub fn sequence_set(&self, split: Split, len: usize, whitening: Option<&WhiteningTransform>) -> Result<SequenceSet> {
        let idx = self.indices(split);
        ensure!(!idx.is_empty(), "split {split:?} is empty");
        ensure!(len <= self.num_frames(), "requested {len} frames, sequences have {}", self.num_frames());
        let d = self.frame_len();
        let frames = (0..len)
            .map(|t| {
                let mut data = vec![0.0; d * idx.len()];
                for (col, &i) in idx.iter().enumerate() {
                    for (r, &v) in self.samples[i].frames[t].iter().enumerate() {
                        data[r * idx.len() + col] = v;
                    }
                }
                let m = Matrix::from_vec(d, idx.len(), data)?;
                Ok(match whitening {
                    Some(w) => w.apply(&m)?,
                    None => m,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SequenceSet::new(frames)?)
    }

    /// All frames of a split as pixel columns, the whitening fit input.
    pub fn pixel_matrix(&self, split: Split) -> Result<Matrix> {
        let set = self.sequence_set(split, self.num_frames(), None)?;
        let frames: Vec<&Matrix> = set.frames().iter().collect();
        Ok(Matrix::hstack(&frames)?)
    }

    pub fn to_container(&self) -> Result<TensorContainer> {
        let n = self.samples.len();
        let (t, d) = (self.num_frames(), self.frame_len());
        let mut c = TensorContainer::new(json!({
            "format": "dataset",
            "generator": self.spec.kind.name(),
            "spec": self.spec,
            "label_spec": self.label_spec,
            "frames_per_sequence": t,
            "frame_pixels": d,
            "effective_vel_range": self.spec.effective_vel_range(),
            "effective_acc_range": self.spec.effective_acc_range(),
        }));
        let frames: Vec<f32> = self
            .samples
            .iter()
            .flat_map(|s| s.frames.iter().flatten().map(|&v| v as f32))
            .collect();
        c.push("frames", &[n, t, d], ArrayData::F32(frames))?;
        let labels = self.samples.iter().map(|s| s.label.map_or(-1, |l| l as i64)).collect();
        c.push("labels", &[n], ArrayData::I64(labels))?;
        let params = self.samples.iter().flat_map(|s| s.params.map(|p| p as f32)).collect();
        c.push("gen_params", &[n, 4], ArrayData::F32(params))?;
        c.push("split", &[n], ArrayData::I64(self.split.iter().map(|s| s.code()).collect()))?;
        Ok(c)
    }

    pub fn from_container(c: &TensorContainer) -> Result<Self> {
        ensure!(c.meta["format"] == "dataset", "container is not a data set");
        let spec: GenSpec = serde_json::from_value(c.meta["spec"].clone()).context("data set header")?;
        let label_spec: Option<ShiftLabelSpec> = serde_json::from_value(c.meta["label_spec"].clone())?;
        let frames = c.require("frames")?;
        ensure!(frames.shape.len() == 3, "frames must be n×T×d");
        let (n, t, d) = (frames.shape[0], frames.shape[1], frames.shape[2]);
        let values = frames.data.to_f64();
        let labels = match &c.require("labels")?.data {
            ArrayData::I64(v) => v.clone(),
            _ => bail!("labels must be i64"),
        };
        let params = c.require("gen_params")?.data.to_f64();
        let split = match c.get("split").map(|a| &a.data) {
            Some(ArrayData::I64(v)) => v
                .iter()
                .map(|&s| Split::ALL.get(s as usize).copied().context("bad split code"))
                .collect::<Result<Vec<_>>>()?,
            Some(_) => bail!("split must be i64"),
            None => vec![Split::Train; n],
        };
        ensure!(labels.len() == n && params.len() == 4 * n && split.len() == n, "array lengths disagree");
        let samples = (0..n)
            .map(|i| SequenceSample {
                frames: (0..t).map(|s| values[(i * t + s) * d..(i * t + s + 1) * d].to_vec()).collect(),
                label: usize::try_from(labels[i]).ok(),
                params: [params[4 * i], params[4 * i + 1], params[4 * i + 2], params[4 * i + 3]],
            })
            .collect();
        Ok(Self {
            spec,
            samples,
            split,
            label_spec,
        })
    }
}

/// Raw patches from a container with a `patches` (n×d) or `frames` (n×T×d)
/// array; the first frame of each sequence is used in the latter case.
pub fn load_patches(c: &TensorContainer, size: usize) -> Result<PatchSource> {
    let (values, shape) = match (c.get("patches"), c.get("frames")) {
        (Some(a), _) => (a.data.to_f64(), a.shape.clone()),
        (None, Some(a)) => (a.data.to_f64(), a.shape.clone()),
        _ => bail!("patch file needs a 'patches' or 'frames' array"),
    };
    let d = *shape.last().context("empty shape")?;
    ensure!(d == size * size, "patches have {d} pixels, --size {size} needs {}", size * size);
    let stride = shape[1..].iter().product::<usize>();
    Ok(PatchSource::Provided(
        (0..shape[0]).map(|i| values[i * stride..i * stride + d].to_vec()).collect(),
    ))
}
