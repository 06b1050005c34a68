//! Saving and loading score networks and density models as tensor files.
//!
//! Every file carries a `model.kind` section (0 MLP, 1 KDE, 2 GMM). Integers
//! that may exceed `f32` precision are split into 16-bit chunks.

use std::path::Path;

use nalgebra::DMatrix;

use crate::density::{CovarianceType, DensityModel, FitInfo, GmmModel};
use crate::error::{Error, Result};
use crate::mlp::{Dense, MlpScoreNet, TimeEmbedding};
use crate::tensor_file::TensorFile;

const KIND_MLP: u32 = 0;
const KIND_KDE: u32 = 1;
const KIND_GMM: u32 = 2;

fn push_u64(file: &mut TensorFile, name: &str, v: u64) -> Result<()> {
    let chunks: Vec<f64> = (0..4).map(|i| ((v >> (16 * i)) & 0xffff) as f64).collect();
    file.push(name, &[4], &chunks)
}

fn read_u64(file: &TensorFile, name: &str) -> Result<u64> {
    let chunks = file.values(name, &[4])?;
    chunks.iter().enumerate().try_fold(0u64, |acc, (i, c)| {
        if c.fract() != 0.0 || !(0.0..65536.0).contains(c) {
            return Err(Error::Format(format!("section '{name}' is not an integer")));
        }
        Ok(acc | ((*c as u64) << (16 * i)))
    })
}

fn read_count(file: &TensorFile, name: &str) -> Result<usize> {
    usize::try_from(read_u64(file, name)?).map_err(|_| Error::Format(format!("section '{name}' overflows")))
}

fn read_kind(file: &TensorFile) -> Result<u32> {
    Ok(read_u64(file, "model.kind")? as u32)
}

fn dims_of(file: &TensorFile, name: &str) -> Result<Vec<usize>> {
    Ok(file.get(name)?.dims.iter().map(|d| *d as usize).collect())
}

pub fn mlp_to_file(net: &MlpScoreNet) -> Result<TensorFile> {
    let mut f = TensorFile::new();
    push_u64(&mut f, "model.kind", u64::from(KIND_MLP))?;
    push_u64(&mut f, "mlp.dim", net.dim() as u64)?;
    let freqs = match net.embedding() {
        TimeEmbedding::Scalar => 0,
        TimeEmbedding::Sinusoidal { frequencies } => frequencies as u64 + 1,
    };
    push_u64(&mut f, "mlp.embedding", freqs)?;
    push_u64(&mut f, "mlp.layers", net.layers().len() as u64)?;
    for (i, layer) in net.layers().iter().enumerate() {
        f.push(format!("layer{i}.weight"), &[layer.outputs, layer.inputs], &layer.weights)?;
        f.push(format!("layer{i}.bias"), &[layer.outputs], &layer.biases)?;
    }
    Ok(f)
}

pub fn mlp_from_file(f: &TensorFile) -> Result<MlpScoreNet> {
    if read_kind(f)? != KIND_MLP {
        return Err(Error::Format("file does not hold a score network".into()));
    }
    let dim = read_count(f, "mlp.dim")?;
    let embedding = match read_count(f, "mlp.embedding")? {
        0 => TimeEmbedding::Scalar,
        n => TimeEmbedding::Sinusoidal { frequencies: n - 1 },
    };
    let n = read_count(f, "mlp.layers")?;
    let layers = (0..n)
        .map(|i| {
            let name = format!("layer{i}.weight");
            let dims = dims_of(f, &name)?;
            if dims.len() != 2 {
                return Err(Error::Format(format!("'{name}' must be a matrix")));
            }
            let (outputs, inputs) = (dims[0], dims[1]);
            Dense::new(
                inputs,
                outputs,
                f.values(&name, &dims)?,
                f.values(&format!("layer{i}.bias"), &[outputs])?,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    MlpScoreNet::from_layers(dim, embedding, layers).map_err(|e| Error::Format(format!("inconsistent network: {e}")))
}

pub fn density_to_file(model: &DensityModel) -> Result<TensorFile> {
    let mut f = TensorFile::new();
    match model {
        DensityModel::Kde(m) => {
            push_u64(&mut f, "model.kind", u64::from(KIND_KDE))?;
            let flat: Vec<f64> = m.points().iter().flatten().copied().collect();
            f.push("kde.points", &[m.points().len(), m.dim()], &flat)?;
            f.push("kde.bandwidth", &[1], &[m.bandwidth()])?;
        }
        DensityModel::Gmm(m) => {
            push_u64(&mut f, "model.kind", u64::from(KIND_GMM))?;
            let (k, d) = (m.num_components(), m.dim());
            push_u64(&mut f, "gmm.cov_type", u64::from(m.cov_type().code()))?;
            f.push("gmm.weights", &[k], m.weights())?;
            let means: Vec<f64> = m.means().iter().flatten().copied().collect();
            f.push("gmm.means", &[k, d], &means)?;
            // nalgebra is column-major; store row-major
            let covs: Vec<f64> = m
                .covariances()
                .iter()
                .flat_map(|c| (0..d).flat_map(move |i| (0..d).map(move |j| c[(i, j)])))
                .collect();
            f.push("gmm.covariances", &[m.covariances().len(), d, d], &covs)?;
            f.push("gmm.history", &[m.fit.history.len()], &m.fit.history)?;
            push_u64(&mut f, "gmm.iterations", m.fit.iterations as u64)?;
            push_u64(&mut f, "gmm.seed", m.fit.seed)?;
        }
    }
    Ok(f)
}

pub fn density_from_file(f: &TensorFile) -> Result<DensityModel> {
    let bad = |e: Error| Error::Format(format!("inconsistent density model: {e}"));
    match read_kind(f)? {
        KIND_KDE => {
            let dims = dims_of(f, "kde.points")?;
            if dims.len() != 2 {
                return Err(Error::Format("'kde.points' must be a matrix".into()));
            }
            let flat = f.values("kde.points", &dims)?;
            let points: Vec<Vec<f64>> = flat.chunks(dims[1].max(1)).map(<[f64]>::to_vec).collect();
            Ok(DensityModel::Kde(
                crate::density::kde_fit(&points, f.scalar("kde.bandwidth")?).map_err(bad)?,
            ))
        }
        KIND_GMM => {
            let cov_type = CovarianceType::from_code(read_u64(f, "gmm.cov_type")? as u32)?;
            let md = dims_of(f, "gmm.means")?;
            if md.len() != 2 {
                return Err(Error::Format("'gmm.means' must be a matrix".into()));
            }
            let (k, d) = (md[0], md[1]);
            let weights = f.values("gmm.weights", &[k])?;
            let means: Vec<Vec<f64>> = f.values("gmm.means", &md)?.chunks(d.max(1)).map(<[f64]>::to_vec).collect();
            let n_cov = if cov_type == CovarianceType::Tied { 1 } else { k };
            let covs: Vec<DMatrix<f64>> = f
                .values("gmm.covariances", &[n_cov, d, d])?
                .chunks(d * d)
                .map(|c| DMatrix::from_row_slice(d, d, c))
                .collect();
            let mut model = GmmModel::new(weights, means, cov_type, covs).map_err(bad)?;
            let hd = dims_of(f, "gmm.history")?;
            model.fit = FitInfo {
                history: f.values("gmm.history", &hd)?,
                iterations: read_count(f, "gmm.iterations")?,
                seed: read_u64(f, "gmm.seed")?,
            };
            Ok(DensityModel::Gmm(model))
        }
        KIND_MLP => Err(Error::Format("file holds a score network, not a density".into())),
        k => Err(Error::Format(format!("unknown model kind {k}"))),
    }
}

pub fn save_mlp(net: &MlpScoreNet, path: impl AsRef<Path>) -> Result<()> {
    mlp_to_file(net)?.write(path)
}

pub fn load_mlp(path: impl AsRef<Path>) -> Result<MlpScoreNet> {
    mlp_from_file(&TensorFile::read(path)?)
}

pub fn save_density(model: &DensityModel, path: impl AsRef<Path>) -> Result<()> {
    density_to_file(model)?.write(path)
}

pub fn load_density(path: impl AsRef<Path>) -> Result<DensityModel> {
    density_from_file(&TensorFile::read(path)?)
}

/// Round every stored value to what a save/load cycle would give.
pub fn quantize_density(model: &DensityModel) -> Result<DensityModel> {
    density_from_file(&TensorFile::from_bytes(&density_to_file(model)?.to_bytes())?)
}

pub fn quantize_mlp(net: &MlpScoreNet) -> Result<MlpScoreNet> {
    mlp_from_file(&TensorFile::from_bytes(&mlp_to_file(net)?.to_bytes())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{gmm_fit_em, kde_fit, EmOptions};

    fn points() -> Vec<Vec<f64>> {
        (0..60)
            .map(|i| {
                let t = i as f64 * 0.37;
                vec![t.sin() * 2.0 + 0.1 * t, t.cos() - 0.05 * t]
            })
            .collect()
    }

    #[test]
    fn u64_chunks() {
        let mut f = TensorFile::new();
        push_u64(&mut f, "x", u64::MAX - 12345).unwrap();
        assert_eq!(read_u64(&f, "x").unwrap(), u64::MAX - 12345);
    }

    #[test]
    fn mlp_round_trip_is_idempotent() {
        let net = MlpScoreNet::new(2, &[8, 8], TimeEmbedding::Sinusoidal { frequencies: 3 }, 4).unwrap();
        let once = quantize_mlp(&net).unwrap();
        assert_eq!(once.widths(), net.widths());
        assert_eq!(once.embedding(), net.embedding());
        assert_eq!(quantize_mlp(&once).unwrap(), once);
        for (a, b) in net.parameters().iter().zip(once.parameters()) {
            assert!((a - b).abs() <= 1e-7 * a.abs().max(1e-30));
        }
    }

    #[test]
    fn density_round_trips() {
        let pts = points();
        for c in CovarianceType::ALL {
            let m = DensityModel::Gmm(gmm_fit_em(&pts, 3, c, EmOptions::default()).unwrap());
            let once = quantize_density(&m).unwrap();
            let twice = quantize_density(&once).unwrap();
            assert_eq!(once, twice);
            for p in pts.iter().take(20) {
                let a = m.log_likelihood(p).unwrap();
                let b = once.log_likelihood(p).unwrap();
                assert!((a - b).abs() < 1e-4 * (1.0 + a.abs()), "{c}: {a} {b}");
            }
        }
        let k = DensityModel::Kde(kde_fit(&pts, 0.3).unwrap());
        let once = quantize_density(&k).unwrap();
        assert_eq!(quantize_density(&once).unwrap(), once);
    }

    #[test]
    fn wrong_kind_rejected() {
        let net = MlpScoreNet::new(2, &[4], TimeEmbedding::Scalar, 0).unwrap();
        let f = mlp_to_file(&net).unwrap();
        assert!(matches!(density_from_file(&f), Err(Error::Format(_))));
        let k = density_to_file(&DensityModel::Kde(kde_fit(&points(), 0.3).unwrap())).unwrap();
        assert!(matches!(mlp_from_file(&k), Err(Error::Format(_))));
    }
}
