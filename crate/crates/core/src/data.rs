//! Datasets: toy generators, CSV/tensor-file ingestion and image resizing.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{check_dim, Error, Result};
use crate::tensor_file::TensorFile;

/// Image layout `height × width × channels`, flattened row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn square(side: usize, channels: usize) -> Self {
        Self {
            height: side,
            width: side,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub samples: Vec<Vec<f64>>,
    pub shape: Option<ImageShape>,
}

impl Dataset {
    pub fn new(name: impl Into<String>, samples: Vec<Vec<f64>>, shape: Option<ImageShape>) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("dataset"))?;
        let dim = first.len();
        if dim == 0 {
            return Err(Error::param("samples must have at least one feature"));
        }
        for s in &samples {
            check_dim(dim, s.len())?;
            if s.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric("non-finite sample value".into()));
            }
        }
        if let Some(shape) = shape {
            check_dim(shape.len(), dim)?;
        }
        Ok(Self {
            name: name.into(),
            samples,
            shape,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    /// Every sample multiplied by −1.
    pub fn negated(&self) -> Self {
        Self {
            name: format!("negated({})", self.name),
            samples: self.samples.iter().map(|s| s.iter().map(|v| -v).collect()).collect(),
            shape: self.shape,
        }
    }

    /// Images with 8-bit pixel values mapped to `[−1, 1]`.
    pub fn from_u8_images(name: impl Into<String>, images: &[Vec<u8>], shape: ImageShape) -> Result<Self> {
        let samples = images
            .iter()
            .map(|img| img.iter().map(|p| f64::from(*p) / 127.5 - 1.0).collect())
            .collect();
        Self::new(name, samples, Some(shape))
    }

    /// Headerless CSV of numeric rows, or a tensor file with a `samples`
    /// section and optional `shape` section.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let name = path.file_stem().map_or_else(|| "data".into(), |s| s.to_string_lossy().into_owned());
        if path.extension().is_some_and(|e| e == "csv") {
            let rows = read_numeric_csv(path, false)?;
            return Self::new(name, rows, None).map_err(|e| e.in_stage("load data"));
        }
        let f = TensorFile::read(path)?;
        let dims: Vec<usize> = f.get("samples")?.dims.iter().map(|d| *d as usize).collect();
        if dims.len() != 2 {
            return Err(Error::Format("'samples' must be a matrix".into()));
        }
        let flat = f.values("samples", &dims)?;
        let samples = flat.chunks(dims[1].max(1)).map(<[f64]>::to_vec).collect();
        let shape = if f.contains("shape") {
            let s = f.values("shape", &[3])?;
            Some(ImageShape {
                height: s[0] as usize,
                width: s[1] as usize,
                channels: s[2] as usize,
            })
        } else {
            None
        };
        Self::new(name, samples, shape).map_err(|e| Error::Format(e.to_string()))
    }

    /// Write as headerless CSV when the extension is `.csv`, else as a tensor file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if path.extension().is_some_and(|e| e == "csv") {
            let mut w = csv::WriterBuilder::new()
                .from_path(path)
                .map_err(|e| Error::Format(e.to_string()))?;
            for s in &self.samples {
                w.write_record(s.iter().map(|v| v.to_string()))
                    .map_err(|e| Error::Format(e.to_string()))?;
            }
            return w.flush().map_err(|e| Error::io(path, e));
        }
        let mut f = TensorFile::new();
        let flat: Vec<f64> = self.samples.iter().flatten().copied().collect();
        f.push("samples", &[self.len(), self.dim()], &flat)?;
        if let Some(s) = self.shape {
            f.push("shape", &[3], &[s.height as f64, s.width as f64, s.channels as f64])?;
        }
        f.write(path)
    }
}

/// Numeric rows of a CSV file; with `header` the first line is skipped.
pub fn read_numeric_csv(path: &Path, header: bool) -> Result<Vec<Vec<f64>>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(header)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Format(format!("{other:?}")),
        })?;
    r.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
            rec.iter()
                .map(|field| {
                    field.parse::<f64>().map_err(|_| {
                        Error::Format(format!("{} row {}: '{field}' is not a number", path.display(), i + 1))
                    })
                })
                .collect()
        })
        .collect()
}

/// Toy distributions for end-to-end runs.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetKind {
    /// `N(mean, std² I)`.
    Gaussian { mean: Vec<f64>, std: f64 },
    /// Equal-weight isotropic mixture.
    Gmm { means: Vec<Vec<f64>>, std: f64 },
    /// 2-D ring: uniform angle, radius `radius + width·z`.
    Ring { radius: f64, width: f64 },
    /// Two interleaved half circles with Gaussian jitter.
    Moons { noise: f64 },
    Negated(Box<DatasetKind>),
}

impl DatasetKind {
    /// Build a kind from its name and `key=value` parameters.
    ///
    /// `negated(<kind>)` wraps another kind; vector parameters are `;`-separated
    /// (`mean=2;0`, `means=2;0|-2;0`).
    pub fn parse(name: &str, params: &[(String, String)]) -> Result<Self> {
        let get = |key: &str| params.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str());
        let num = |key: &str, default: f64| -> Result<f64> {
            get(key).map_or(Ok(default), |v| {
                v.parse().map_err(|_| Error::param(format!("parameter {key}='{v}' is not a number")))
            })
        };
        let vector = |v: &str| -> Result<Vec<f64>> {
            v.split(';')
                .map(|x| x.trim().parse().map_err(|_| Error::param(format!("'{v}' is not a vector"))))
                .collect()
        };
        for (k, _) in params {
            let known: &[&str] = match name.trim_start_matches("negated(").trim_end_matches(')') {
                "gaussian" => &["mean", "std", "dim"],
                "gmm" => &["means", "std"],
                "ring" => &["radius", "width"],
                "moons" => &["noise"],
                _ => &[],
            };
            if !known.contains(&k.as_str()) {
                return Err(Error::param(format!("unknown parameter '{k}' for dataset kind '{name}'")));
            }
        }
        if let Some(inner) = name.strip_prefix("negated(").and_then(|s| s.strip_suffix(')')) {
            return Ok(DatasetKind::Negated(Box::new(Self::parse(inner, params)?)));
        }
        match name {
            "gaussian" => {
                let mean = match get("mean") {
                    Some(v) => vector(v)?,
                    None => vec![0.0; num("dim", 2.0)? as usize],
                };
                Ok(DatasetKind::Gaussian {
                    mean,
                    std: num("std", 1.0)?,
                })
            }
            "gmm" => {
                let means = match get("means") {
                    Some(v) => v.split('|').map(vector).collect::<Result<_>>()?,
                    None => vec![vec![2.0, 0.0], vec![-2.0, 0.0]],
                };
                Ok(DatasetKind::Gmm {
                    means,
                    std: num("std", 1.0)?,
                })
            }
            "ring" => Ok(DatasetKind::Ring {
                radius: num("radius", 2.0)?,
                width: num("width", 0.1)?,
            }),
            "moons" => Ok(DatasetKind::Moons {
                noise: num("noise", 0.1)?,
            }),
            other => Err(Error::param(format!("unknown dataset kind '{other}'"))),
        }
    }

    fn name(&self) -> String {
        match self {
            DatasetKind::Gaussian { .. } => "gaussian".into(),
            DatasetKind::Gmm { .. } => "gmm".into(),
            DatasetKind::Ring { .. } => "ring".into(),
            DatasetKind::Moons { .. } => "moons".into(),
            DatasetKind::Negated(inner) => format!("negated({})", inner.name()),
        }
    }

    fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(format!("{what} must be nonnegative")))
            }
        };
        match self {
            DatasetKind::Gaussian { mean, std } => {
                if mean.is_empty() {
                    return Err(Error::param("gaussian mean must be nonempty"));
                }
                positive(*std, "std")
            }
            DatasetKind::Gmm { means, std } => {
                let d = means.first().ok_or(Error::Empty("gmm means"))?.len();
                if d == 0 || means.iter().any(|m| m.len() != d) {
                    return Err(Error::param("gmm means must share a positive dimension"));
                }
                positive(*std, "std")
            }
            DatasetKind::Ring { radius, width } => positive(*radius, "radius").and(positive(*width, "width")),
            DatasetKind::Moons { noise } => positive(*noise, "noise"),
            DatasetKind::Negated(inner) => inner.validate(),
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        match self {
            DatasetKind::Gaussian { mean, std } => mean.iter().map(|m| m + std * normal(rng)).collect(),
            DatasetKind::Gmm { means, std } => {
                let k = rng.random_range(0..means.len());
                means[k].iter().map(|m| m + std * normal(rng)).collect()
            }
            DatasetKind::Ring { radius, width } => {
                let theta = rng.random::<f64>() * 2.0 * PI;
                let r = radius + width * normal(rng);
                vec![r * theta.cos(), r * theta.sin()]
            }
            DatasetKind::Moons { noise } => {
                let upper = rng.random::<bool>();
                let theta = rng.random::<f64>() * PI;
                let (x, y) = if upper {
                    (theta.cos(), theta.sin())
                } else {
                    (1.0 - theta.cos(), 0.5 - theta.sin())
                };
                vec![x + noise * normal(rng), y + noise * normal(rng)]
            }
            DatasetKind::Negated(inner) => inner.sample(rng).into_iter().map(|v| -v).collect(),
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

/// `n` samples of `kind`, deterministic in `seed`.
pub fn generate_toy_dataset(kind: &DatasetKind, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Empty("requested dataset size"));
    }
    kind.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples = (0..n).map(|_| kind.sample(&mut rng)).collect();
    Dataset::new(kind.name(), samples, None)
}

/// Bilinear resize with half-pixel centers: output pixel `i` samples input
/// coordinate `(i + 0.5)·in/out − 0.5`, clamped to the image.
pub fn resize_bilinear(image: &[f64], shape: ImageShape, out_h: usize, out_w: usize) -> Result<Vec<f64>> {
    check_dim(shape.len(), image.len())?;
    if out_h == 0 || out_w == 0 || shape.is_empty() {
        return Err(Error::param("image sizes must be positive"));
    }
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        (0..out)
            .map(|i| {
                let src = ((i as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, src - lo as f64)
            })
            .collect()
    };
    let rows = taps(out_h, shape.height);
    let cols = taps(out_w, shape.width);
    let c = shape.channels;
    let at = |y: usize, x: usize, ch: usize| image[(y * shape.width + x) * c + ch];
    let mut out = Vec::with_capacity(out_h * out_w * c);
    for &(y0, y1, fy) in &rows {
        for &(x0, x1, fx) in &cols {
            for ch in 0..c {
                let top = at(y0, x0, ch) * (1.0 - fx) + at(y0, x1, ch) * fx;
                let bottom = at(y1, x0, ch) * (1.0 - fx) + at(y1, x1, ch) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Ok(out)
}

fn square_side(d: &Dataset) -> Result<usize> {
    let s = d
        .shape
        .ok_or_else(|| Error::param(format!("dataset '{}' has no image shape", d.name)))?;
    if s.height != s.width {
        return Err(Error::param(format!(
            "dataset '{}' has non-square {}x{} images",
            d.name, s.height, s.width
        )));
    }
    Ok(s.height)
}

fn resize_dataset(d: &Dataset, side: usize) -> Result<Dataset> {
    let shape = d.shape.expect("checked by square_side");
    if shape.height == side {
        return Ok(d.clone());
    }
    let samples = d
        .samples
        .iter()
        .map(|img| resize_bilinear(img, shape, side, side))
        .collect::<Result<_>>()?;
    Dataset::new(d.name.clone(), samples, Some(ImageShape::square(side, shape.channels)))
}

/// Bring every dataset to the lowest native resolution among them, then up
/// to `model_res`.
pub fn equalize_resolutions(sets: &[Dataset], model_res: usize) -> Result<Vec<Dataset>> {
    let sides = sets.iter().map(square_side).collect::<Result<Vec<_>>>()?;
    let low = *sides.iter().min().ok_or(Error::Empty("datasets"))?;
    sets.iter()
        .map(|d| resize_dataset(&resize_dataset(d, low)?, model_res))
        .collect()
}

/// Downsample the higher-resolution set to the other's resolution, then
/// upsample both to `model_res`.
pub fn resize_equalized(a: &Dataset, b: &Dataset, model_res: usize) -> Result<(Dataset, Dataset)> {
    let mut out = equalize_resolutions(&[a.clone(), b.clone()], model_res)?;
    let b = out.pop().expect("two sets");
    let a = out.pop().expect("two sets");
    Ok((a, b))
}
