//! Spiral generator, splitting, and delimited-text tables.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Result, UdnError};

/// SplitMix64 finalizer; turns `(base, stream)` into an unrelated seed.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(v) => v.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, indices: &[usize]) -> Targets {
        match self {
            Targets::Classes(v) => Targets::Classes(indices.iter().map(|&i| v[i]).collect()),
            Targets::Values(v) => Targets::Values(indices.iter().map(|&i| v[i]).collect()),
        }
    }

    fn field(&self, i: usize) -> String {
        match self {
            Targets::Classes(v) => v[i].to_string(),
            Targets::Values(v) => v[i].to_string(),
        }
    }
}

/// Feature rows with one target each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Tensor,
    targets: Targets,
}

impl Dataset {
    pub fn new(features: Tensor, targets: Targets) -> Result<Self> {
        if features.rows() != targets.len() {
            return Err(UdnError::dim(
                "Dataset::new",
                format!("{} feature rows but {} targets", features.rows(), targets.len()),
            ));
        }
        Ok(Dataset { features, targets })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn targets(&self) -> &Targets {
        &self.targets
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(indices),
            targets: self.targets.select(indices),
        }
    }

    /// Comma-separated `x1,…,xd,label` with a header line.
    pub fn to_delimited(&self) -> String {
        let mut out = (1..=self.dim()).map(|j| format!("x{j}")).collect::<Vec<_>>().join(",");
        out.push_str(",label\n");
        for i in 0..self.len() {
            for v in self.features.row_slice(i) {
                out.push_str(&v.to_string());
                out.push(',');
            }
            out.push_str(&self.targets.field(i));
            out.push('\n');
        }
        out
    }

    /// Reads the format written by [`Dataset::to_delimited`]. With
    /// `classes = true` the label column must hold non-negative integers.
    pub fn from_delimited(text: &str, classes: bool, origin: &Path) -> Result<Dataset> {
        let table = parse_table(text, "label", origin)?;
        if !classes {
            return Ok(table);
        }
        let Targets::Values(values) = &table.targets else { unreachable!() };
        let label_col = table.dim() + 1;
        let labels = values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                if v >= 0.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(UdnError::Parse {
                        path: origin.to_path_buf(),
                        row: i + 2,
                        column: label_col,
                        message: format!("class label {v} is not a non-negative integer"),
                    })
                }
            })
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(table.features, Targets::Classes(labels))
    }
}

/// Parameters of the two-branch spiral `D(ω)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpiralConfig {
    /// Rotation speed ω.
    pub omega: f64,
    pub n_samples: usize,
    /// Per-coordinate standard deviation of the observation noise.
    pub noise_scale: f64,
    pub seed: u64,
}

impl SpiralConfig {
    pub fn new(omega: f64, n_samples: usize, seed: u64) -> Self {
        SpiralConfig {
            omega,
            n_samples,
            noise_scale: 0.02,
            seed,
        }
    }
}

/// Noise-free position on branch `branch ∈ {-1, 1}` at radius `u`.
pub fn spiral_mean(omega: f64, u: f64, branch: f64) -> [f64; 2] {
    let angle = omega * u * FRAC_PI_2;
    [branch * u * angle.cos(), branch * u * angle.sin()]
}

/// Draws `t ~ U[0, 1]`, `u = √t`, a branch `y ∈ {-1, 1}` uniformly, and
/// `x ~ N(spiral_mean(ω, u, y), noise²·I)`. Labels are 0 for `y = -1` and
/// 1 for `y = 1`.
pub fn generate_spiral(config: &SpiralConfig) -> Result<Dataset> {
    if config.n_samples == 0 {
        return Err(UdnError::Config("spiral needs at least one sample".into()));
    }
    if !(config.noise_scale > 0.0) || !config.omega.is_finite() || config.omega < 0.0 {
        return Err(UdnError::Config(format!(
            "invalid spiral parameters: omega {}, noise {}",
            config.omega, config.noise_scale
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = Normal::new(0.0, config.noise_scale).expect("positive scale");
    let mut features = Vec::with_capacity(2 * config.n_samples);
    let mut labels = Vec::with_capacity(config.n_samples);
    for _ in 0..config.n_samples {
        let t: f64 = rng.random();
        let u = t.sqrt();
        let positive = rng.random_bool(0.5);
        let mean = spiral_mean(config.omega, u, if positive { 1.0 } else { -1.0 });
        features.push(mean[0] + noise.sample(&mut rng));
        features.push(mean[1] + noise.sample(&mut rng));
        labels.push(usize::from(positive));
    }
    Dataset::new(Tensor::new(config.n_samples, 2, features)?, Targets::Classes(labels))
}

/// Train, validation and test parts with the indices they came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitDataset {
    pub train: Dataset,
    pub valid: Dataset,
    pub test: Dataset,
    /// Source row indices, `None` when the parts were generated
    /// independently.
    pub indices: Option<[Vec<usize>; 3]>,
}

/// Seeded disjoint partition of `data` into parts of the given sizes.
pub fn split(data: &Dataset, sizes: (usize, usize, usize), seed: u64) -> Result<SplitDataset> {
    let (a, b, c) = sizes;
    if a + b + c > data.len() {
        return Err(UdnError::Config(format!(
            "split sizes {a}+{b}+{c} exceed the {} available rows",
            data.len()
        )));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = order[..a].to_vec();
    let valid = order[a..a + b].to_vec();
    let test = order[a + b..a + b + c].to_vec();
    Ok(SplitDataset {
        train: data.subset(&train),
        valid: data.subset(&valid),
        test: data.subset(&test),
        indices: Some([train, valid, test]),
    })
}

/// Three independently generated spirals sharing ω.
pub fn spiral_splits(omega: f64, n_each: usize, noise_scale: f64, seed: u64) -> Result<SplitDataset> {
    let make = |stream| {
        generate_spiral(&SpiralConfig {
            omega,
            n_samples: n_each,
            noise_scale,
            seed: derive_seed(seed, stream),
        })
    };
    Ok(SplitDataset {
        train: make(0)?,
        valid: make(1)?,
        test: make(2)?,
        indices: None,
    })
}

/// Reads a delimited numeric table with a header. The delimiter is a comma
/// if the header contains one, whitespace otherwise.
pub fn load_table(path: &Path, target_column: &str) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|e| UdnError::io(path, e))?;
    parse_table(&text, target_column, path)
}

pub fn parse_table(text: &str, target_column: &str, origin: &Path) -> Result<Dataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Err(UdnError::Config(format!("{} is empty", origin.display())));
    };
    let comma = header.contains(',');
    let fields = |line: &'_ str| -> Vec<String> {
        if comma {
            line.split(',').map(|f| f.trim().to_string()).collect()
        } else {
            line.split_whitespace().map(str::to_string).collect()
        }
    };
    let names = fields(header);
    let target_idx = names
        .iter()
        .position(|n| n == target_column)
        .ok_or_else(|| UdnError::Config(format!("no column named '{target_column}' in {}", origin.display())))?;

    let mut features = Vec::new();
    let mut targets = Vec::new();
    for (line_no, line) in lines {
        let cells = fields(line);
        if cells.len() != names.len() {
            return Err(UdnError::Parse {
                path: origin.to_path_buf(),
                row: line_no + 1,
                column: cells.len().min(names.len()) + 1,
                message: format!("expected {} fields, found {}", names.len(), cells.len()),
            });
        }
        for (j, cell) in cells.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| UdnError::Parse {
                path: origin.to_path_buf(),
                row: line_no + 1,
                column: j + 1,
                message: format!("'{cell}' is not a number"),
            })?;
            if j == target_idx {
                targets.push(v);
            } else {
                features.push(v);
            }
        }
    }
    let rows = targets.len();
    Dataset::new(Tensor::new(rows, names.len() - 1, features)?, Targets::Values(targets))
}

/// Per-column affine map to zero mean and unit variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    /// Column statistics of `x` (population standard deviation; constant
    /// columns keep a scale of 1).
    pub fn fit(x: &Tensor) -> Standardizer {
        let [n, d] = x.shape();
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(x.row_slice(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in var.iter_mut().zip(x.row_slice(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let sd = var
            .iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, sd }
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        let d = x.cols();
        for row in out.data_mut().chunks_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.sd) {
                *v = (*v - m) / s;
            }
        }
        out
    }

    pub fn invert(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        let d = x.cols();
        for row in out.data_mut().chunks_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.sd) {
                *v = *v * s + m;
            }
        }
        out
    }
}

/// Fitted transforms from [`standardize_splits`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub features: Standardizer,
    /// Present when targets were standardized; invert predictions with it.
    pub target: Option<Standardizer>,
}

/// Standardizes all parts with statistics from the training part only.
pub fn standardize_splits(splits: &mut SplitDataset, standardize_target: bool) -> Standardization {
    let features = Standardizer::fit(splits.train.features());
    let target = match (standardize_target, splits.train.targets()) {
        (true, Targets::Values(v)) => Some(Standardizer::fit(&Tensor::column(v.clone()))),
        _ => None,
    };
    for part in [&mut splits.train, &mut splits.valid, &mut splits.test] {
        part.features = features.apply(&part.features);
        if let (Some(t), Targets::Values(v)) = (&target, &mut part.targets) {
            *v = t.apply(&Tensor::column(std::mem::take(v))).into_data();
        }
    }
    Standardization { features, target }
}
