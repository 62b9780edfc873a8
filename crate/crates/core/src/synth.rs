//! Synthetic source/target data with a controllable domain shift.
//!
//! Identities are Gaussian blobs in raw input space. Target samples pass
//! through `x -> ((I + s R) x) * scale + bias`, with `R` a random Gaussian
//! matrix, so a model fitted on the source sees distorted target inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::store::Dataset;

#[derive(Debug, Clone, PartialEq)]
pub struct ShiftSpec {
    /// Weight `s` of the random mixing matrix.
    pub strength: f64,
    /// Per-dimension scales are drawn from `1 +- scale_jitter`.
    pub scale_jitter: f64,
    /// Standard deviation of the additive bias.
    pub bias: f64,
}

impl ShiftSpec {
    pub fn identity() -> Self {
        Self {
            strength: 0.0,
            scale_jitter: 0.0,
            bias: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub source_identities: usize,
    pub target_identities: usize,
    /// Inclusive range of training samples per identity.
    pub samples_per_identity: (usize, usize),
    /// Held-out target samples per identity, split into queries and gallery.
    pub eval_per_identity: usize,
    /// How many of the held-out samples become queries (camera 0).
    pub queries_per_identity: usize,
    pub input_dim: usize,
    /// Standard deviation of identity centers.
    pub center_scale: f64,
    /// Standard deviation of samples around their center.
    pub noise: f64,
    /// Extra noise on the upper half of the source dimensions only, which
    /// teaches a source model to ignore directions the target relies on.
    pub source_nuisance: f64,
    /// Fraction of training samples (source and target) drawn with
    /// `outlier_scale` times the usual noise. Held-out samples are clean.
    pub outlier_fraction: f64,
    pub outlier_scale: f64,
    pub shift: ShiftSpec,
    pub cameras: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            source_identities: 20,
            target_identities: 15,
            samples_per_identity: (20, 20),
            eval_per_identity: 6,
            queries_per_identity: 4,
            input_dim: 32,
            center_scale: 1.0,
            noise: 0.5,
            source_nuisance: 3.0,
            outlier_fraction: 0.2,
            outlier_scale: 3.0,
            shift: ShiftSpec {
                strength: 0.5,
                scale_jitter: 0.3,
                bias: 0.5,
            },
            cameras: 3,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.into()));
        if self.source_identities < 2 || self.target_identities < 2 {
            return bad("need at least 2 identities per domain");
        }
        let (lo, hi) = self.samples_per_identity;
        if lo == 0 || lo > hi {
            return bad("samples per identity range must be non-empty and positive");
        }
        if self.eval_per_identity != 0
            && (self.queries_per_identity == 0
                || self.queries_per_identity >= self.eval_per_identity)
        {
            return bad("held-out samples need at least one query and one gallery entry");
        }
        if self.input_dim == 0 {
            return bad("input dimension must be positive");
        }
        if !(self.noise > 0.0) || !(self.center_scale > 0.0) {
            return bad("noise and center scale must be positive");
        }
        if !(self.source_nuisance >= 0.0) {
            return bad("source nuisance must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) || !(self.outlier_scale > 0.0) {
            return bad("outlier fraction must lie in [0, 1] and its scale be positive");
        }
        let s = &self.shift;
        if !(s.strength >= 0.0 && s.scale_jitter >= 0.0 && s.bias >= 0.0 && s.scale_jitter < 1.0) {
            return bad("shift parameters must be non-negative, jitter below 1");
        }
        if self.cameras < 2 {
            return bad("need at least 2 cameras");
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub source: Dataset,
    pub target: Dataset,
    pub query: Dataset,
    pub gallery: Dataset,
}

fn gaussian(rng: &mut impl Rng, sd: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    z * sd
}

struct Shift {
    map: Matrix,
    scale: Vec<f64>,
    bias: Vec<f64>,
}

impl Shift {
    fn draw(spec: &ShiftSpec, dim: usize, rng: &mut impl Rng) -> Self {
        let sd = 1.0 / (dim as f64).sqrt();
        let map = Matrix::from_fn(dim, dim, |i, j| {
            let r = gaussian(rng, sd);
            f64::from(u8::from(i == j)) + spec.strength * r
        });
        let scale = (0..dim)
            .map(|_| {
                if spec.scale_jitter > 0.0 {
                    rng.random_range(1.0 - spec.scale_jitter..=1.0 + spec.scale_jitter)
                } else {
                    1.0
                }
            })
            .collect();
        let bias = (0..dim).map(|_| gaussian(rng, spec.bias)).collect();
        Self { map, scale, bias }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|i| {
                let mixed: f64 = self.map.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
                mixed * self.scale[i] + self.bias[i]
            })
            .collect()
    }
}

#[derive(Default)]
struct Builder {
    rows: Vec<Vec<f64>>,
    ids: Vec<u32>,
    cams: Vec<u32>,
}

impl Builder {
    fn push(&mut self, row: Vec<f64>, id: u32, cam: u32) {
        self.rows.push(row);
        self.ids.push(id);
        self.cams.push(cam);
    }

    fn build(self, dim: usize, cameras: bool) -> Result<Dataset> {
        let features = if self.rows.is_empty() {
            Matrix::zeros(0, dim)
        } else {
            Matrix::from_rows(&self.rows)?
        };
        Dataset::from_parts(features, Some(self.ids), cameras.then_some(self.cams))
    }
}

/// Draws every split from `spec.seed`. The source and the target use
/// disjoint identity centers; the shift is drawn once per seed.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let dim = spec.input_dim;
    let center = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..dim).map(|_| gaussian(rng, spec.center_scale)).collect()
    };
    let src_centers: Vec<Vec<f64>> = (0..spec.source_identities)
        .map(|_| center(&mut rng))
        .collect();
    let tgt_centers: Vec<Vec<f64>> = (0..spec.target_identities)
        .map(|_| center(&mut rng))
        .collect();
    let shift = Shift::draw(&spec.shift, dim, &mut rng);
    let (lo, hi) = spec.samples_per_identity;
    let sample = |c: &[f64], rng: &mut ChaCha8Rng, train: bool| -> Vec<f64> {
        let sd = if train && rng.random_bool(spec.outlier_fraction) {
            spec.noise * spec.outlier_scale
        } else {
            spec.noise
        };
        c.iter().map(|v| v + gaussian(rng, sd)).collect()
    };

    let mut source = Builder::default();
    for (id, c) in src_centers.iter().enumerate() {
        for s in 0..rng.random_range(lo..=hi) {
            let mut x = sample(c, &mut rng, true);
            for v in &mut x[dim / 2..] {
                *v += gaussian(&mut rng, spec.source_nuisance);
            }
            source.push(x, id as u32, (s % spec.cameras) as u32);
        }
    }
    let (mut target, mut query, mut gallery) =
        (Builder::default(), Builder::default(), Builder::default());
    for (id, c) in tgt_centers.iter().enumerate() {
        for s in 0..rng.random_range(lo..=hi) {
            let x = shift.apply(&sample(c, &mut rng, true));
            target.push(x, id as u32, (s % spec.cameras) as u32);
        }
        for s in 0..spec.eval_per_identity {
            let x = shift.apply(&sample(c, &mut rng, false));
            if s < spec.queries_per_identity {
                query.push(x, id as u32, 0);
            } else {
                let g = s - spec.queries_per_identity;
                gallery.push(x, id as u32, (1 + g % (spec.cameras - 1)) as u32);
            }
        }
    }
    Ok(SynthData {
        source: source.build(dim, true)?,
        target: target.build(dim, true)?,
        query: query.build(dim, true)?,
        gallery: gallery.build(dim, true)?,
    })
}
