//! Container encodings of models and whitening transforms.

use anyhow::{bail, ensure, Context, Result};
use relseq::preprocess::WhiteningTransform;
use relseq::{GaeParams, HgaeParams, Matrix, Model};
use serde_json::{json, Value};

use crate::container::{ArrayData, TensorContainer};

fn push_matrix(c: &mut TensorContainer, name: &str, m: &Matrix) -> Result<()> {
    c.push(name, &[m.rows(), m.cols()], ArrayData::F64(m.data().to_vec()))
}

fn read_matrix(c: &TensorContainer, name: &str) -> Result<Matrix> {
    let a = c.require(name)?;
    ensure!(a.shape.len() == 2, "array '{name}' must be 2-D");
    Ok(Matrix::from_vec(a.shape[0], a.shape[1], a.data.to_f64())?)
}

fn push_layer(c: &mut TensorContainer, p: &GaeParams, layer: usize) -> Result<()> {
    push_matrix(c, &format!("U{layer}"), &p.u)?;
    push_matrix(c, &format!("V{layer}"), &p.v)?;
    push_matrix(c, &format!("W{layer}"), &p.w)
}

fn read_layer(c: &TensorContainer, layer: usize) -> Result<GaeParams> {
    Ok(GaeParams::new(
        read_matrix(c, &format!("U{layer}"))?,
        read_matrix(c, &format!("V{layer}"))?,
        read_matrix(c, &format!("W{layer}"))?,
    )?)
}

/// Parameters in `f64` so resumed training continues from exact values.
pub fn model_to_container(model: &Model, meta: Value) -> Result<TensorContainer> {
    let mut c = TensorContainer::new(meta);
    match model {
        Model::Gae(p) => push_layer(&mut c, p, 1)?,
        Model::Hgae(h) => {
            push_layer(&mut c, &h.layer1, 1)?;
            push_layer(&mut c, &h.layer2, 2)?;
        }
    }
    Ok(c)
}

pub fn model_from_container(c: &TensorContainer) -> Result<Model> {
    ensure!(c.meta["format"] == "checkpoint", "container is not a checkpoint");
    let l1 = read_layer(c, 1).context("checkpoint layer 1")?;
    if c.get("U2").is_some() {
        Ok(Model::Hgae(HgaeParams::new(l1, read_layer(c, 2)?)?))
    } else {
        Ok(Model::Gae(l1))
    }
}

pub fn model_kind(model: &Model) -> &'static str {
    match model {
        Model::Gae(_) => "gae",
        Model::Hgae(_) => "hgae",
    }
}

/// Sizes as `(frame dim, [factors], [mappings])` for headers.
pub fn model_shape(model: &Model) -> Value {
    match model {
        Model::Gae(p) => json!({"dim_in": p.dim_in(), "factors": [p.num_factors()], "mappings": [p.num_mappings()]}),
        Model::Hgae(h) => json!({
            "dim_in": h.layer1.dim_in(),
            "factors": [h.layer1.num_factors(), h.layer2.num_factors()],
            "mappings": [h.layer1.num_mappings(), h.layer2.num_mappings()],
        }),
    }
}

pub fn whitening_to_container(w: &WhiteningTransform, meta: Value) -> Result<TensorContainer> {
    let mut c = TensorContainer::new(meta);
    push_matrix(&mut c, "mean", &w.mean)?;
    push_matrix(&mut c, "forward", &w.forward)?;
    push_matrix(&mut c, "inverse", &w.inverse)?;
    c.push("eigenvalues", &[w.eigenvalues.len()], ArrayData::F64(w.eigenvalues.clone()))?;
    Ok(c)
}

pub fn whitening_from_container(c: &TensorContainer) -> Result<WhiteningTransform> {
    ensure!(c.meta["format"] == "whitening", "container is not a whitening transform");
    let forward = read_matrix(c, "forward")?;
    let inverse = read_matrix(c, "inverse")?;
    let mean = read_matrix(c, "mean")?;
    let eigenvalues = c.require("eigenvalues")?.data.to_f64();
    ensure!(
        forward.cols() == mean.rows() && inverse.shape() == (forward.cols(), forward.rows()),
        "whitening arrays have inconsistent shapes"
    );
    let total: f64 = eigenvalues.iter().sum();
    let kept: f64 = eigenvalues[..forward.rows()].iter().sum();
    Ok(WhiteningTransform {
        mean,
        forward,
        inverse,
        retained_fraction: if total > 0.0 { kept / total } else { bail!("zero spectrum") },
        eigenvalues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use relseq::preprocess::fit_whitening;
    use relseq::Rng;

    #[test]
    fn hgae_round_trip_is_exact() {
        let h = HgaeParams::init(5, [4, 3], [3, 2], 0.3, &mut Rng::new(1)).unwrap();
        let model = Model::Hgae(h);
        let c = model_to_container(&model, json!({"format": "checkpoint"})).unwrap();
        let names: Vec<&str> = c.arrays.iter().map(|a| a.name.as_str()).collect();
        assert_eq!(names, ["U1", "V1", "W1", "U2", "V2", "W2"]);
        let back = model_from_container(&TensorContainer::from_bytes(&c.to_bytes().unwrap()).unwrap()).unwrap();
        assert_eq!(back, model);
    }

    #[test]
    fn whitening_round_trip_is_exact() {
        let x = relseq::math::sample_gaussian(&mut Rng::new(2), 4, 50, 1.0).unwrap();
        let w = fit_whitening(&x, 0.9, 1e-8).unwrap();
        let c = whitening_to_container(&w, json!({"format": "whitening"})).unwrap();
        let back = whitening_from_container(&c).unwrap();
        assert_eq!(back.forward, w.forward);
        assert_eq!(back.mean, w.mean);
        assert!((back.retained_fraction - w.retained_fraction).abs() < 1e-12);
    }
}
