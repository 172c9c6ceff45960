//! Toy per-location encoder followed by the two heads: GAP embedding and
//! the trainable soft histogram (a 1×1 projection onto the prototypes
//! followed by a softmax over prototypes).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::pooling::{gap, soft_histogram, unit_columns, FeatureMap, Histogram};
use crate::prototypes::PrototypeMatrix;
use crate::tensor::{Mat, Tape, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    /// Per-location linear map, d×d_in.
    pub linear: Mat,
    /// Prototypes, d×m.
    pub prototypes: Mat,
    /// Softmax temperature of the histogram head.
    pub temperature: f64,
}

impl EncoderParams {
    /// Gaussian linear map with variance `1/d_in` and random unit prototypes.
    pub fn random(input_dim: usize, embed_dim: usize, prototypes: usize, temperature: f64, seed: u64) -> Result<Self> {
        if input_dim == 0 || embed_dim == 0 || prototypes == 0 {
            return Err(Error::contract("encoder dimensions must be >= 1"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (input_dim as f64).sqrt();
        let linear = Mat::from_fn(embed_dim, input_dim, |_, _| {
            let g: f64 = StandardNormal.sample(&mut rng);
            scale * g
        });
        let raw = Mat::from_fn(embed_dim, prototypes, |_, _| StandardNormal.sample(&mut rng));
        let params = EncoderParams {
            linear,
            prototypes: unit_columns(&raw),
            temperature,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        if self.linear.rows() != self.prototypes.rows() {
            return Err(Error::dim(
                "EncoderParams",
                format!(
                    "linear map outputs {} dims, prototypes have {}",
                    self.linear.rows(),
                    self.prototypes.rows()
                ),
            ));
        }
        if !(self.temperature >= 0.0) || !self.temperature.is_finite() {
            return Err(Error::contract(format!("temperature must be >= 0, got {}", self.temperature)));
        }
        if !self.linear.is_finite() || !self.prototypes.is_finite() {
            return Err(Error::NonFinite("encoder parameters".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.linear.cols()
    }

    pub fn embed_dim(&self) -> usize {
        self.linear.rows()
    }

    pub fn prototype_count(&self) -> usize {
        self.prototypes.cols()
    }
}

/// Histogram and GAP embedding of one sample.
pub fn forward(params: &EncoderParams, sample: &FeatureMap) -> Result<(Histogram, Vec<f64>)> {
    let mapped = FeatureMap::new(params.linear.matmul(sample.features())?)?;
    let y = gap(&mapped);
    let z = soft_histogram(&mapped, &PrototypeMatrix::new(params.prototypes.clone())?, params.temperature)?;
    Ok((z, y))
}

/// Histograms (m×B) and embeddings (d×B) of a list of samples.
pub fn encode_all(params: &EncoderParams, samples: &[FeatureMap]) -> Result<(Mat, Mat)> {
    if samples.is_empty() {
        return Err(Error::contract("nothing to encode"));
    }
    let mut zs = Vec::with_capacity(samples.len());
    let mut ys = Vec::with_capacity(samples.len());
    for s in samples {
        let (z, y) = forward(params, s)?;
        zs.push(z.weights().to_vec());
        ys.push(y);
    }
    Ok((Mat::from_columns(&zs)?, Mat::from_columns(&ys)?))
}

/// Stacks the samples' locations side by side and builds the block-averaging
/// matrix that pools them back per sample.
pub fn stack_samples(samples: &[&FeatureMap]) -> Result<(Mat, Mat)> {
    let mut stacked = samples
        .first()
        .ok_or_else(|| Error::contract("empty batch"))?
        .features()
        .clone();
    for s in &samples[1..] {
        stacked = stacked.hstack(s.features())?;
    }
    let mut pool = Mat::zeros(stacked.cols(), samples.len());
    let mut offset = 0;
    for (b, s) in samples.iter().enumerate() {
        let w = 1.0 / s.len() as f64;
        for j in 0..s.len() {
            pool[(offset + j, b)] = w;
        }
        offset += s.len();
    }
    Ok((stacked, pool))
}

/// Taped batch forward pass. Returns the `(Z, Y)` nodes.
pub fn encode_batch_var(
    tape: &mut Tape,
    linear: Var,
    prototypes: Var,
    samples: &[&FeatureMap],
    temperature: f64,
) -> Result<(Var, Var)> {
    let (stacked, pool) = stack_samples(samples)?;
    let x = tape.constant(stacked);
    let pool = tape.constant(pool);
    let mapped = tape.matmul(linear, x)?;
    let y = tape.matmul(mapped, pool)?;
    let pt = tape.transpose(prototypes);
    let scores = tape.matmul(pt, mapped)?;
    let assign = tape.softmax_cols(scores, temperature)?;
    let z = tape.matmul(assign, pool)?;
    Ok((z, y))
}
