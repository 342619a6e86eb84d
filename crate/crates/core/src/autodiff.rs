//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] is a Wengert list: every primitive appends a node holding its
//! forward value and the ids of its inputs. [`Tape::backward`] sweeps the list
//! once in reverse and returns gradients for the leaves that were registered as
//! trainable. The vocabulary is deliberately small: it covers the direction
//! model trunks and the square training loss, nothing more.

use crate::error::{Error, Result};
use crate::tensor::{dot, Tensor};

pub type NodeId = usize;

#[derive(Clone, Debug)]
enum Op {
    Leaf {
        trainable: bool,
    },
    /// Value computed with recording disabled.
    Detached,
    Affine {
        w: NodeId,
        b: NodeId,
        x: NodeId,
    },
    Conv3x3 {
        x: NodeId,
        k: NodeId,
        b: NodeId,
    },
    Relu {
        x: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        x: NodeId,
        s: f64,
    },
    Concat {
        parts: Vec<NodeId>,
    },
    SquareLoss {
        y: NodeId,
        t: NodeId,
    },
}

#[derive(Clone, Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Clone, Debug)]
pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of trainable leaves, indexed by node id.
#[derive(Clone, Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            recording: true,
        }
    }

    /// A tape that evaluates values only; `backward` on it fails.
    pub fn no_grad() -> Self {
        Self {
            nodes: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    /// Register an input. Only trainable leaves receive gradients.
    pub fn leaf(&mut self, value: Tensor, trainable: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf { trainable },
        });
        self.nodes.len() - 1
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        let op = if self.recording { op } else { Op::Detached };
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    /// `W x + b` with `W: [out, in]`, `b: [out]`, `x: [in]`.
    pub fn affine(&mut self, w: NodeId, b: NodeId, x: NodeId) -> Result<NodeId> {
        let value = affine_forward(self.value(w), self.value(b), self.value(x))?;
        Ok(self.push(value, Op::Affine { w, b, x }))
    }

    /// 3x3 convolution (cross-correlation), stride 1, zero padding 1.
    /// `x: [C_in, H, W]`, `k: [C_out, C_in, 3, 3]`, `b: [C_out]`.
    pub fn conv2d_3x3(&mut self, x: NodeId, k: NodeId, b: NodeId) -> Result<NodeId> {
        let value = conv3x3_forward(self.value(x), self.value(k), self.value(b))?;
        Ok(self.push(value, Op::Conv3x3 { x, k, b }))
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        let value = self.value(x).map(|v| v.max(0.0));
        Ok(self.push(value, Op::Relu { x }))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add { a, b }))
    }

    pub fn scale(&mut self, x: NodeId, s: f64) -> Result<NodeId> {
        let value = self.value(x).scale(s);
        Ok(self.push(value, Op::Scale { x, s }))
    }

    /// Concatenate along the leading axis; trailing dimensions must agree.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let Some(&first) = parts.first() else {
            return Err(Error::InvalidArgument("concat of zero tensors".into()));
        };
        let tail = self.value(first).shape()[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            if v.shape().is_empty() || v.shape()[1..] != tail[..] {
                return Err(Error::shape("concat", self.value(first).shape(), v.shape()));
            }
            lead += v.shape()[0];
            data.extend_from_slice(v.data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(
            value,
            Op::Concat {
                parts: parts.to_vec(),
            },
        ))
    }

    /// Sum of squared differences, shape `[1]`.
    pub fn square_loss(&mut self, y: NodeId, t: NodeId) -> Result<NodeId> {
        let diff = self.value(y).sub(self.value(t)).map_err(|_| {
            Error::shape("square_loss", self.value(y).shape(), self.value(t).shape())
        })?;
        let value = Tensor::scalar(diff.norm_sq());
        Ok(self.push(value, Op::SquareLoss { y, t }))
    }

    /// Reverse sweep from `output` seeded with `seed`, returning
    /// `d<seed, output>/d leaf` for every trainable leaf.
    pub fn backward(&self, output: NodeId, seed: &Tensor) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyTape);
        }
        if output >= self.nodes.len() {
            return Err(Error::InvalidArgument(format!("unknown node {output}")));
        }
        seed.check_shape("backward seed", self.value(output).shape())?;

        let mut adj: Vec<Option<Tensor>> = vec![None; output + 1];
        adj[output] = Some(seed.clone());
        let mut grads: Vec<Option<Tensor>> = vec![None; output + 1];

        for id in (0..=output).rev() {
            let Some(a) = adj[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf { trainable } => {
                    if *trainable {
                        grads[id] = Some(a);
                    }
                }
                Op::Detached => return Err(Error::NotRecorded(id)),
                Op::Affine { w, b, x } => {
                    let (wv, xv) = (self.value(*w), self.value(*x));
                    let (rows, cols) = (wv.shape()[0], wv.shape()[1]);
                    let mut dw = vec![0.0; rows * cols];
                    let mut dx = vec![0.0; cols];
                    for r in 0..rows {
                        let s = a.data()[r];
                        let wrow = &wv.data()[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            dw[r * cols + c] = s * xv.data()[c];
                            dx[c] += s * wrow[c];
                        }
                    }
                    accumulate(&mut adj, *w, Tensor::new(wv.shape().to_vec(), dw)?)?;
                    accumulate(&mut adj, *b, a.clone())?;
                    accumulate(&mut adj, *x, Tensor::new(xv.shape().to_vec(), dx)?)?;
                }
                Op::Conv3x3 { x, k, b } => {
                    let (dx, dk, db) = conv3x3_backward(self.value(*x), self.value(*k), &a)?;
                    accumulate(&mut adj, *x, dx)?;
                    accumulate(&mut adj, *k, dk)?;
                    accumulate(&mut adj, *b, db)?;
                }
                Op::Relu { x } => {
                    let xv = self.value(*x);
                    let dx = xv.zip_with("relu", &a, |v, s| if v > 0.0 { s } else { 0.0 })?;
                    accumulate(&mut adj, *x, dx)?;
                }
                Op::Add { a: l, b: r } => {
                    accumulate(&mut adj, *l, a.clone())?;
                    accumulate(&mut adj, *r, a)?;
                }
                Op::Scale { x, s } => {
                    accumulate(&mut adj, *x, a.scale(*s))?;
                }
                Op::Concat { parts } => {
                    let mut offset = 0;
                    for &p in parts {
                        let shape = self.value(p).shape().to_vec();
                        let n = self.value(p).len();
                        let piece = Tensor::new(shape, a.data()[offset..offset + n].to_vec())?;
                        offset += n;
                        accumulate(&mut adj, p, piece)?;
                    }
                }
                Op::SquareLoss { y, t } => {
                    let s = a.data()[0];
                    let diff = self.value(*y).sub(self.value(*t))?;
                    accumulate(&mut adj, *y, diff.scale(2.0 * s))?;
                    accumulate(&mut adj, *t, diff.scale(-2.0 * s))?;
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(adj: &mut [Option<Tensor>], id: NodeId, g: Tensor) -> Result<()> {
    match &mut adj[id] {
        Some(existing) => existing.axpy_mut(1.0, &g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

pub(crate) fn affine_forward(w: &Tensor, b: &Tensor, x: &Tensor) -> Result<Tensor> {
    let ws = w.shape();
    if ws.len() != 2 || x.shape() != [ws[1]] || b.shape() != [ws[0]] {
        return Err(Error::InvalidArgument(format!(
            "affine: incompatible shapes W {:?}, b {:?}, x {:?}",
            ws,
            b.shape(),
            x.shape()
        )));
    }
    let (rows, cols) = (ws[0], ws[1]);
    let out = (0..rows)
        .map(|r| b.data()[r] + dot(&w.data()[r * cols..(r + 1) * cols], x.data()))
        .collect();
    Ok(Tensor::vector(out))
}

fn conv_dims(x: &Tensor, k: &Tensor) -> Result<(usize, usize, usize, usize)> {
    let (xs, ks) = (x.shape(), k.shape());
    if xs.len() != 3 || ks.len() != 4 || ks[1] != xs[0] || ks[2] != 3 || ks[3] != 3 {
        return Err(Error::InvalidArgument(format!(
            "conv2d_3x3: incompatible shapes x {xs:?}, kernel {ks:?}"
        )));
    }
    Ok((ks[0], xs[0], xs[1], xs[2]))
}

/// Index range `i` such that `i + off` stays inside `0..n`, for `off` in -1..=1.
#[inline]
fn valid_range(off: isize, n: usize) -> std::ops::Range<usize> {
    match off {
        -1 => 1..n,
        0 => 0..n,
        _ => 0..n.saturating_sub(1),
    }
}

pub(crate) fn conv3x3_forward(x: &Tensor, k: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (cout, cin, h, w) = conv_dims(x, k)?;
    if b.shape() != [cout] {
        return Err(Error::InvalidArgument(format!(
            "conv2d_3x3: bias shape {:?}, expected [{cout}]",
            b.shape()
        )));
    }
    let (xd, kd) = (x.data(), k.data());
    let plane = h * w;
    let mut out = vec![0.0; cout * plane];
    for o in 0..cout {
        let dst = &mut out[o * plane..(o + 1) * plane];
        dst.iter_mut().for_each(|v| *v = b.data()[o]);
        for c in 0..cin {
            let src = &xd[c * plane..(c + 1) * plane];
            for a in 0..3 {
                let di = a as isize - 1;
                for bb in 0..3 {
                    let dj = bb as isize - 1;
                    let kv = kd[((o * cin + c) * 3 + a) * 3 + bb];
                    if kv == 0.0 {
                        continue;
                    }
                    for i in valid_range(di, h) {
                        let si = (i as isize + di) as usize;
                        let jr = valid_range(dj, w);
                        let srow = &src[si * w..(si + 1) * w];
                        let drow = &mut dst[i * w..(i + 1) * w];
                        for j in jr {
                            drow[j] += kv * srow[(j as isize + dj) as usize];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![cout, h, w], out)
}

fn conv3x3_backward(x: &Tensor, k: &Tensor, seed: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (cout, cin, h, w) = conv_dims(x, k)?;
    let plane = h * w;
    let (xd, kd, sd) = (x.data(), k.data(), seed.data());
    let mut dx = vec![0.0; cin * plane];
    let mut dk = vec![0.0; kd.len()];
    let db: Vec<f64> = (0..cout)
        .map(|o| sd[o * plane..(o + 1) * plane].iter().sum())
        .collect();
    for o in 0..cout {
        let s = &sd[o * plane..(o + 1) * plane];
        for c in 0..cin {
            let src = &xd[c * plane..(c + 1) * plane];
            let dsrc = &mut dx[c * plane..(c + 1) * plane];
            for a in 0..3 {
                let di = a as isize - 1;
                for bb in 0..3 {
                    let dj = bb as isize - 1;
                    let kidx = ((o * cin + c) * 3 + a) * 3 + bb;
                    let kv = kd[kidx];
                    let mut acc = 0.0;
                    for i in valid_range(di, h) {
                        let si = (i as isize + di) as usize;
                        for j in valid_range(dj, w) {
                            let sj = (j as isize + dj) as usize;
                            let sv = s[i * w + j];
                            acc += src[si * w + sj] * sv;
                            dsrc[si * w + sj] += kv * sv;
                        }
                    }
                    dk[kidx] += acc;
                }
            }
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), dx)?,
        Tensor::new(k.shape().to_vec(), dk)?,
        Tensor::vector(db),
    ))
}
