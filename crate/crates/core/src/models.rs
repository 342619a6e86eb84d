//! Direction oracles `d = G(u, f, ∇E(u); θ)` whose last layer is a cone
//! enforcement, so every prediction is a descent direction by construction.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::cone::ConeSpec;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MODEL_MAGIC: &str = "dissipnet-direction-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Anything that proposes a direction at `u` given the gradient `g` there.
pub trait DirectionOracle {
    fn direction(&self, u: &Tensor, g: &Tensor) -> Result<Tensor>;
}

/// Plain gradient, no constraint applied.
#[derive(Clone, Copy, Debug, Default)]
pub struct GradientOracle;

impl DirectionOracle for GradientOracle {
    fn direction(&self, _u: &Tensor, g: &Tensor) -> Result<Tensor> {
        Ok(g.clone())
    }
}

/// Wraps a closure.
pub struct FnOracle<F>(pub F);

impl<F> DirectionOracle for FnOracle<F>
where
    F: Fn(&Tensor, &Tensor) -> Result<Tensor>,
{
    fn direction(&self, u: &Tensor, g: &Tensor) -> Result<Tensor> {
        (self.0)(u, g)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelKind {
    RawGradient,
    /// Fully connected ReLU trunk on the flattened `[u; f; g]`.
    Mlp {
        hidden: Vec<usize>,
    },
    /// `blocks` 3x3 conv layers (`blocks >= 2`) with ReLU between them on the
    /// channel stack `[u, f, g]`.
    Convnet {
        blocks: usize,
        channels: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DirectionModel {
    kind: ModelKind,
    cone: ConeSpec,
    u_shape: Vec<usize>,
    f_shape: Vec<usize>,
    seed: u64,
    params: Tensor,
}

/// `[C, H, W]` view of an image-like shape.
fn as_chw(shape: &[usize]) -> Option<[usize; 3]> {
    match *shape {
        [h, w] => Some([1, h, w]),
        [c, h, w] => Some([c, h, w]),
        _ => None,
    }
}

impl DirectionModel {
    pub fn raw_gradient(cone: ConeSpec, u_shape: &[usize]) -> Self {
        Self {
            kind: ModelKind::RawGradient,
            cone,
            u_shape: u_shape.to_vec(),
            f_shape: Vec::new(),
            seed: 0,
            params: Tensor::vector(Vec::new()),
        }
    }

    /// Fresh model with Kaiming fan-in initialization from `seed`.
    pub fn new(
        kind: ModelKind,
        cone: ConeSpec,
        u_shape: &[usize],
        f_shape: &[usize],
        seed: u64,
    ) -> Result<Self> {
        cone.validate()?;
        let manifest = layer_manifest(&kind, u_shape, f_shape)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        for layer in &manifest {
            let n: usize = layer.shape.iter().product();
            if layer.name.ends_with(".bias") {
                data.extend(std::iter::repeat_n(0.0, n));
            } else {
                let fan_in: usize = layer.shape[1..].iter().product();
                let std = (2.0 / fan_in as f64).sqrt();
                data.extend(Tensor::random_normal(&[n], std, &mut rng).into_data());
            }
        }
        let (u_shape, f_shape) = if kind == ModelKind::RawGradient {
            (u_shape.to_vec(), Vec::new())
        } else {
            (u_shape.to_vec(), f_shape.to_vec())
        };
        Ok(Self {
            kind,
            cone,
            u_shape,
            f_shape,
            seed,
            params: Tensor::vector(data),
        })
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn cone(&self) -> &ConeSpec {
        &self.cone
    }

    pub fn u_shape(&self) -> &[usize] {
        &self.u_shape
    }

    pub fn f_shape(&self) -> &[usize] {
        &self.f_shape
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &Tensor {
        &self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn set_params(&mut self, params: Tensor) -> Result<()> {
        params.check_shape("set_params", self.params.shape())?;
        self.params = params;
        Ok(())
    }

    pub fn manifest(&self) -> Vec<LayerSpec> {
        layer_manifest(&self.kind, &self.u_shape, &self.f_shape).expect("validated at construction")
    }

    fn check_inputs(&self, u: &Tensor, f: &Tensor, g: &Tensor) -> Result<()> {
        u.check_shape("predict u", &self.u_shape)?;
        g.check_shape("predict g", &self.u_shape)?;
        if self.kind != ModelKind::RawGradient {
            f.check_shape("predict f", &self.f_shape)?;
        }
        Ok(())
    }

    /// Record the trunk on `tape`. Returns the trunk output node and the
    /// parameter leaves in manifest order.
    pub fn record_trunk(
        &self,
        tape: &mut Tape,
        u: &Tensor,
        f: &Tensor,
        g: &Tensor,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        self.check_inputs(u, f, g)?;
        let manifest = self.manifest();
        let mut offset = 0;
        let mut params = Vec::with_capacity(manifest.len());
        for layer in &manifest {
            let n: usize = layer.shape.iter().product();
            let t = Tensor::new(
                layer.shape.clone(),
                self.params.data()[offset..offset + n].to_vec(),
            )?;
            offset += n;
            params.push(tape.leaf(t, true));
        }
        let out = match &self.kind {
            ModelKind::RawGradient => {
                return Err(Error::InvalidArgument("raw_gradient has no trunk".into()))
            }
            ModelKind::Mlp { .. } => {
                let x = tape.leaf(Tensor::concat_flat(&[u, f, g]), false);
                let layers = params.len() / 2;
                let mut h = x;
                for l in 0..layers {
                    h = tape.affine(params[2 * l], params[2 * l + 1], h)?;
                    self.check_layer(tape, h, l)?;
                    if l + 1 < layers {
                        h = tape.relu(h)?;
                    }
                }
                h
            }
            ModelKind::Convnet { .. } => {
                let [cu, hh, ww] = as_chw(&self.u_shape).expect("validated");
                let mut parts = vec![tape.leaf(u.clone().reshape(&[cu, hh, ww])?, false)];
                if let Some([cf, _, _]) = as_chw(&self.f_shape) {
                    parts.push(tape.leaf(f.clone().reshape(&[cf, hh, ww])?, false));
                }
                parts.push(tape.leaf(g.clone().reshape(&[cu, hh, ww])?, false));
                let mut h = tape.concat(&parts)?;
                let layers = params.len() / 2;
                for l in 0..layers {
                    h = tape.conv2d_3x3(h, params[2 * l], params[2 * l + 1])?;
                    self.check_layer(tape, h, l)?;
                    if l + 1 < layers {
                        h = tape.relu(h)?;
                    }
                }
                h
            }
        };
        Ok((out, params))
    }

    fn check_layer(&self, tape: &Tape, node: NodeId, layer: usize) -> Result<()> {
        if tape.value(node).is_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(format!(
                "model activations at layer {layer}"
            )))
        }
    }

    /// Trunk output reshaped like `u`, before the cone layer.
    pub fn trunk_output(&self, u: &Tensor, f: &Tensor, g: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::no_grad();
        let (out, _) = self.record_trunk(&mut tape, u, f, g)?;
        tape.value(out).clone().reshape(&self.u_shape)
    }

    /// Direction in the cone set of `g`.
    pub fn predict(&self, u: &Tensor, f: &Tensor, g: &Tensor) -> Result<Tensor> {
        self.check_inputs(u, f, g)?;
        let z = match self.kind {
            ModelKind::RawGradient => g.clone(),
            _ => self.trunk_output(u, f, g)?,
        };
        let d = self.cone.enforce(&z, g)?;
        if g.norm() >= self.cone.grad_floor {
            self.cone.check_membership(&d, g)?;
        }
        Ok(d)
    }

    /// Flatten per-layer parameter gradients in manifest order.
    pub fn flatten_grads(
        &self,
        grads: &crate::autodiff::Gradients,
        nodes: &[NodeId],
    ) -> Result<Tensor> {
        let mut out = Vec::with_capacity(self.params.len());
        for (&id, layer) in nodes.iter().zip(self.manifest()) {
            match grads.get(id) {
                Some(g) => out.extend_from_slice(g.data()),
                None => out.extend(std::iter::repeat_n(0.0, layer.shape.iter().product())),
            }
        }
        Ok(Tensor::vector(out))
    }

    /// Bind the data feature `f` so the model can drive a descent.
    pub fn bind<'a>(&'a self, f: &'a Tensor) -> BoundModel<'a> {
        BoundModel { model: self, f }
    }

    pub fn to_json(&self) -> Result<String> {
        let manifest = self.manifest();
        let mut weights = Vec::with_capacity(manifest.len());
        let mut offset = 0;
        for layer in &manifest {
            let n: usize = layer.shape.iter().product();
            weights.push(self.params.data()[offset..offset + n].to_vec());
            offset += n;
        }
        let file = ModelFile {
            magic: MODEL_MAGIC.to_string(),
            format_version: MODEL_FORMAT_VERSION,
            kind: self.kind.clone(),
            cone: self.cone,
            u_shape: self.u_shape.clone(),
            f_shape: self.f_shape.clone(),
            seed: self.seed,
            layers: manifest,
            weights,
        };
        Ok(serde_json::to_string_pretty(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        match value.get("magic").and_then(|m| m.as_str()) {
            Some(MODEL_MAGIC) => {}
            other => {
                return Err(Error::Format(format!(
                    "bad magic {other:?}, expected {MODEL_MAGIC:?}"
                )))
            }
        }
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(MODEL_FORMAT_VERSION) => {}
            other => {
                return Err(Error::Format(format!(
                    "unsupported format_version {other:?}, expected {MODEL_FORMAT_VERSION}"
                )))
            }
        }
        let file: ModelFile = serde_json::from_value(value)?;
        file.cone.validate()?;
        let expected = layer_manifest(&file.kind, &file.u_shape, &file.f_shape)?;
        if expected != file.layers {
            return Err(Error::Manifest {
                expected: describe(&expected),
                found: describe(&file.layers),
            });
        }
        let mut data = Vec::new();
        for (layer, w) in file.layers.iter().zip(&file.weights) {
            let n: usize = layer.shape.iter().product();
            if w.len() != n {
                return Err(Error::Manifest {
                    expected: format!("{} with {n} weights", layer.name),
                    found: format!("{} weights", w.len()),
                });
            }
            data.extend_from_slice(w);
        }
        if file.weights.len() != file.layers.len() {
            return Err(Error::Manifest {
                expected: format!("{} weight arrays", file.layers.len()),
                found: format!("{}", file.weights.len()),
            });
        }
        Ok(Self {
            kind: file.kind,
            cone: file.cone,
            u_shape: file.u_shape,
            f_shape: file.f_shape,
            seed: file.seed,
            params: Tensor::vector(data),
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Load and require the same architecture and shapes as `template`.
    pub fn load_matching(path: impl AsRef<Path>, template: &DirectionModel) -> Result<Self> {
        let loaded = Self::load(path)?;
        let (want, got) = (template.manifest(), loaded.manifest());
        if loaded.kind != template.kind || want != got {
            return Err(Error::Manifest {
                expected: format!("{:?}: {}", template.kind, describe(&want)),
                found: format!("{:?}: {}", loaded.kind, describe(&got)),
            });
        }
        Ok(loaded)
    }
}

fn describe(layers: &[LayerSpec]) -> String {
    layers
        .iter()
        .map(|l| format!("{}{:?}", l.name, l.shape))
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    magic: String,
    format_version: u32,
    kind: ModelKind,
    cone: ConeSpec,
    u_shape: Vec<usize>,
    f_shape: Vec<usize>,
    seed: u64,
    layers: Vec<LayerSpec>,
    weights: Vec<Vec<f64>>,
}

/// Parameter layout for a model of `kind` on the given input shapes.
pub fn layer_manifest(
    kind: &ModelKind,
    u_shape: &[usize],
    f_shape: &[usize],
) -> Result<Vec<LayerSpec>> {
    let layer = |name: String, shape: Vec<usize>| LayerSpec { name, shape };
    match kind {
        ModelKind::RawGradient => Ok(Vec::new()),
        ModelKind::Mlp { hidden } => {
            let u_len: usize = u_shape.iter().product();
            let f_len: usize = f_shape.iter().product();
            let mut widths = vec![2 * u_len + f_len];
            widths.extend(hidden);
            widths.push(u_len);
            if widths.contains(&0) {
                return Err(Error::InvalidArgument(format!(
                    "mlp widths {widths:?} contain zero"
                )));
            }
            Ok(widths
                .windows(2)
                .enumerate()
                .flat_map(|(i, w)| {
                    [
                        layer(format!("fc{i}.weight"), vec![w[1], w[0]]),
                        layer(format!("fc{i}.bias"), vec![w[1]]),
                    ]
                })
                .collect())
        }
        ModelKind::Convnet { blocks, channels } => {
            let Some([cu, h, w]) = as_chw(u_shape) else {
                return Err(Error::InvalidArgument(format!(
                    "convnet needs an image-shaped u, got {u_shape:?}"
                )));
            };
            let cf = if f_shape.is_empty() {
                0
            } else {
                match as_chw(f_shape) {
                    Some([cf, fh, fw]) if fh == h && fw == w => cf,
                    _ => {
                        return Err(Error::InvalidArgument(format!(
                            "convnet data feature {f_shape:?} must share the spatial grid of u {u_shape:?}"
                        )))
                    }
                }
            };
            if *blocks < 2 || *channels == 0 {
                return Err(Error::InvalidArgument(format!(
                    "convnet needs blocks >= 2 and channels >= 1, got {blocks}, {channels}"
                )));
            }
            let mut out = Vec::new();
            for b in 0..*blocks {
                let cin = if b == 0 { 2 * cu + cf } else { *channels };
                let cout = if b + 1 == *blocks { cu } else { *channels };
                out.push(layer(format!("conv{b}.weight"), vec![cout, cin, 3, 3]));
                out.push(layer(format!("conv{b}.bias"), vec![cout]));
            }
            Ok(out)
        }
    }
}

/// A model together with the data feature of one problem instance.
#[derive(Clone, Copy)]
pub struct BoundModel<'a> {
    model: &'a DirectionModel,
    f: &'a Tensor,
}

impl DirectionOracle for BoundModel<'_> {
    fn direction(&self, u: &Tensor, g: &Tensor) -> Result<Tensor> {
        self.model.predict(u, self.f, g)
    }
}
