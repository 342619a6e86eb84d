//! Ready-made instances: the underdetermined 2D toy, patch super-resolution,
//! phantom deblurring. Also PSNR and 8-bit PGM I/O.

use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::energies::{Energy, DEFAULT_TV_EPS};
use crate::error::{Error, Result};
use crate::feasibility::{parse_puzzles, Sudoku};
use crate::operators::{Kernel, LinearOperator};
use crate::optimizer::StoppingRule;
use crate::tensor::Tensor;

pub const TOY_DATA: f64 = 5.0;
pub const TOY_SOLUTION: [f64; 2] = [0.0, 5.0];
pub const TOY_BOX: f64 = 6.0;
pub const DEFAULT_PATCH: usize = 24;
pub const DEFAULT_FACTOR: usize = 4;

/// One inverse problem `f = Au* + ξ` with its energy and starting point.
#[derive(Clone, Debug)]
pub struct ProblemInstance {
    pub name: String,
    pub op: Arc<LinearOperator>,
    pub energy: Energy,
    pub ground_truth: Tensor,
    pub data: Tensor,
    pub noise: Tensor,
    /// Data as seen by a direction model, on the grid of `u`.
    pub feature: Tensor,
    pub u0: Tensor,
}

impl ProblemInstance {
    /// `‖ξ‖`.
    pub fn noise_norm(&self) -> f64 {
        self.noise.norm()
    }

    pub fn discrepancy_rule(&self, factor: f64) -> StoppingRule {
        StoppingRule::Discrepancy {
            op: self.op.clone(),
            data: self.data.clone(),
            delta: self.noise_norm(),
            factor,
        }
    }

    /// Adds `α·TV_ε` to the energy, keeping the data and start.
    pub fn with_tv(mut self, alpha: f64, eps: f64) -> Result<Self> {
        self.energy = Energy::regularized(self.op.clone(), self.data.clone(), alpha, eps)?;
        Ok(self)
    }
}

/// `10 log₁₀(peak² n / ‖u − u_ref‖²)`, `+∞` when the images agree.
pub fn psnr(u: &Tensor, reference: &Tensor, peak: f64) -> Result<f64> {
    let err = u.sub(reference)?.norm_sq();
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak * u.len() as f64 / err).log10())
}

fn toy_instance(name: String, u0: Tensor) -> Result<ProblemInstance> {
    let op = Arc::new(LinearOperator::dense(1, 2, vec![1.0, 1.0])?);
    let data = Tensor::vector(vec![TOY_DATA]);
    Ok(ProblemInstance {
        name,
        energy: Energy::least_squares(op.clone(), data.clone())?,
        op,
        ground_truth: Tensor::vector(TOY_SOLUTION.to_vec()),
        noise: Tensor::vector(vec![0.0]),
        feature: data.clone(),
        data,
        u0,
    })
}

/// `A = [1 1]`, `f = 5`, `u* = (0, 5)` from a given start.
pub fn toy2d(u0: [f64; 2]) -> Result<ProblemInstance> {
    toy_instance("toy2d".into(), Tensor::vector(u0.to_vec()))
}

/// Training starts on a jittered `⌈√n⌉²` grid over `[−6, 6]²`; the first `n`
/// grid cells are used.
pub fn make_toy2d(n: usize, seed: u64) -> Result<Vec<ProblemInstance>> {
    let side = (n as f64).sqrt().ceil() as usize;
    let cell = 2.0 * TOY_BOX / side.max(1) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let (r, c) = (i / side, i % side);
            let x = -TOY_BOX + (c as f64 + rng.random::<f64>()) * cell;
            let y = -TOY_BOX + (r as f64 + rng.random::<f64>()) * cell;
            toy_instance(format!("toy2d-{i}"), Tensor::vector(vec![x, y]))
        })
        .collect()
}

/// `n` uniform starts in `[−6, 6]²`.
pub fn toy2d_random_starts(n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            [
                rng.random_range(-TOY_BOX..=TOY_BOX),
                rng.random_range(-TOY_BOX..=TOY_BOX),
            ]
        })
        .collect()
}

fn gaussian_noise(shape: &[usize], sigma: f64, rng: &mut ChaCha8Rng) -> Tensor {
    if sigma == 0.0 {
        Tensor::zeros(shape)
    } else {
        Tensor::random_normal(shape, sigma, rng)
    }
}

/// Average-pooling super-resolution on a given high-resolution image.
/// The start is the nearest-neighbour upsampling of `f`, which `A` maps
/// back to `f` exactly.
pub fn superres_from_image(
    name: String,
    ground_truth: Tensor,
    factor: usize,
    sigma: f64,
    seed: u64,
) -> Result<ProblemInstance> {
    let [h, w] = ground_truth.shape()[..] else {
        return Err(Error::InvalidArgument(format!(
            "super-resolution needs a 2D image, got {:?}",
            ground_truth.shape()
        )));
    };
    let op = Arc::new(LinearOperator::avgpool(factor, [h, w])?);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let clean = op.apply(&ground_truth)?;
    let noise = gaussian_noise(clean.shape(), sigma, &mut rng);
    let data = clean.add(&noise)?;
    let upsampled = op.adjoint(&data)?.scale((factor * factor) as f64);
    Ok(ProblemInstance {
        name,
        energy: Energy::least_squares(op.clone(), data.clone())?,
        op,
        ground_truth,
        data,
        noise,
        feature: upsampled.clone(),
        u0: upsampled,
    })
}

const PATCH_FILES: [(&str, &[u8]); 6] = [
    ("blobs", include_bytes!("../data/patches/blobs.pgm")),
    ("bricks", include_bytes!("../data/patches/bricks.pgm")),
    ("checker", include_bytes!("../data/patches/checker.pgm")),
    ("rings", include_bytes!("../data/patches/rings.pgm")),
    ("stripes", include_bytes!("../data/patches/stripes.pgm")),
    ("waves", include_bytes!("../data/patches/waves.pgm")),
];

/// The bundled grayscale textures, `(name, [h, w] image in [0, 1])`.
pub fn shipped_textures() -> Result<Vec<(&'static str, Tensor)>> {
    PATCH_FILES
        .iter()
        .map(|(name, bytes)| Ok((*name, decode_pgm(bytes)?)))
        .collect()
}

/// `count` patches cropped at seeded positions from the bundled textures,
/// each observed through `factor`× average pooling plus `N(0, σ²)` noise.
pub fn make_superres(
    patch_size: usize,
    factor: usize,
    sigma: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<ProblemInstance>> {
    if factor == 0 || patch_size == 0 || !patch_size.is_multiple_of(factor) {
        return Err(Error::InvalidArgument(format!(
            "patch size {patch_size} is not divisible by factor {factor}"
        )));
    }
    let textures = shipped_textures()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let (name, tex) = &textures[i % textures.len()];
            let [th, tw] = tex.shape()[..] else {
                unreachable!()
            };
            if patch_size > th || patch_size > tw {
                return Err(Error::InvalidArgument(format!(
                    "patch size {patch_size} exceeds texture size {th}x{tw}"
                )));
            }
            let r0 = rng.random_range(0..=th - patch_size);
            let c0 = rng.random_range(0..=tw - patch_size);
            let mut patch = Vec::with_capacity(patch_size * patch_size);
            for r in r0..r0 + patch_size {
                patch.extend_from_slice(&tex.data()[r * tw + c0..r * tw + c0 + patch_size]);
            }
            let gt = Tensor::new(vec![patch_size, patch_size], patch)?;
            superres_from_image(
                format!("superres-{name}-{i}"),
                gt,
                factor,
                sigma,
                rng.random(),
            )
        })
        .collect()
}

const SUDOKU_EASY: &str = include_str!("../data/sudoku_easy.txt");
const SUDOKU_EASY_SOLUTIONS: &str = include_str!("../data/sudoku_easy_solutions.txt");

/// The bundled 50-puzzle easy set and its solutions, in matching order.
pub fn shipped_sudoku_easy() -> Result<(Vec<Sudoku>, Vec<Sudoku>)> {
    Ok((
        parse_puzzles(SUDOKU_EASY)?,
        parse_puzzles(SUDOKU_EASY_SOLUTIONS)?,
    ))
}

/// Piecewise-constant ellipses on a dim background, values in `[0, 1]`.
pub fn phantom(size: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut img = vec![0.1; size * size];
    let n = size as f64;
    // Body outline, then seeded inclusions.
    let mut ellipses = vec![(0.5, 0.5, 0.42, 0.36, 0.0, 0.45)];
    for _ in 0..5 {
        ellipses.push((
            rng.random_range(0.3..0.7),
            rng.random_range(0.3..0.7),
            rng.random_range(0.05..0.16),
            rng.random_range(0.05..0.16),
            rng.random_range(0.0..std::f64::consts::PI),
            rng.random_range(0.6..1.0),
        ));
    }
    for (cy, cx, ry, rx, theta, value) in ellipses {
        let (s, c) = f64::sin_cos(theta);
        for r in 0..size {
            for col in 0..size {
                let y = (r as f64 + 0.5) / n - cy;
                let x = (col as f64 + 0.5) / n - cx;
                let (xr, yr) = (c * x + s * y, -s * x + c * y);
                if (xr / rx).powi(2) + (yr / ry).powi(2) <= 1.0 {
                    img[r * size + col] = value;
                }
            }
        }
    }
    Tensor::new(vec![size, size], img).expect("square image")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhantomConfig {
    pub size: usize,
    pub blur_sigma: f64,
    pub blur_radius: usize,
    pub noise_sigma: f64,
    /// TV weight; `0` gives plain least squares.
    pub alpha: f64,
    pub eps: f64,
    pub seed: u64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            size: 32,
            blur_sigma: 1.5,
            blur_radius: 4,
            noise_sigma: 0.1,
            alpha: 0.0,
            eps: DEFAULT_TV_EPS,
            seed: 0,
        }
    }
}

/// Gaussian-blurred phantom with seeded noise, started from zero.
pub fn make_phantom_inverse(cfg: &PhantomConfig) -> Result<ProblemInstance> {
    if cfg.size < 16 {
        return Err(Error::InvalidArgument(format!(
            "phantom size must be at least 16, got {}",
            cfg.size
        )));
    }
    let truth = phantom(cfg.size, cfg.seed);
    let op = Arc::new(LinearOperator::conv2d(
        Kernel::gaussian(cfg.blur_sigma, cfg.blur_radius),
        [cfg.size, cfg.size],
    )?);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let clean = op.apply(&truth)?;
    let noise = gaussian_noise(clean.shape(), cfg.noise_sigma, &mut rng);
    let data = clean.add(&noise)?;
    Ok(ProblemInstance {
        name: format!("phantom-{}", cfg.size),
        energy: Energy::regularized(op.clone(), data.clone(), cfg.alpha, cfg.eps)?,
        feature: op.adjoint(&data)?,
        u0: Tensor::zeros(&[cfg.size, cfg.size]),
        op,
        ground_truth: truth,
        data,
        noise,
    })
}

/// Decode an 8-bit grayscale PGM into `[h, w]` values in `[0, 1]`.
pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor> {
    if !bytes.starts_with(b"P5") {
        return Err(Error::Format("pgm: expected binary graymap (P5)".into()));
    }
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Pnm)
        .map_err(|e| Error::Format(format!("pgm: {e}")))?;
    if img.color() != image::ColorType::L8 {
        return Err(Error::Format(format!(
            "pgm: expected 8-bit grayscale, got {:?}",
            img.color()
        )));
    }
    let gray = img.into_luma8();
    let (w, h) = gray.dimensions();
    let data = gray
        .into_raw()
        .into_iter()
        .map(|p| f64::from(p) / 255.0)
        .collect();
    Tensor::new(vec![h as usize, w as usize], data)
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    decode_pgm(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
}

/// Encode a `[h, w]` image as binary PGM, clamping to `[0, 1]` and
/// rounding to 8 bits.
pub fn encode_pgm(image: &Tensor) -> Result<Vec<u8>> {
    use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
    use image::ImageEncoder;
    let [h, w] = image.shape()[..] else {
        return Err(Error::InvalidArgument(format!(
            "pgm needs a 2D image, got {:?}",
            image.shape()
        )));
    };
    let pixels: Vec<u8> = image
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let mut out = Vec::new();
    PnmEncoder::new(&mut out)
        .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
        .write_image(&pixels, w as u32, h as u32, image::ExtendedColorType::L8)
        .map_err(|e| Error::Format(format!("pgm: {e}")))?;
    Ok(out)
}

pub fn write_pgm(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_pgm(image)?).map_err(|e| Error::io(path, e))
}
