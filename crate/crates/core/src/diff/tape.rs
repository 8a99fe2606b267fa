use std::collections::HashMap;

use super::gemm::{gemm, MatRef};
use super::{DiffError, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Identifier of a trainable parameter, assigned by the caller.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param,
    Linear {
        x: Var,
        w: Var,
        b: Var,
    },
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Tanh(Var),
    Sigmoid(Var),
    Elu(Var),
    Softplus(Var),
    Relu(Var),
    Square(Var),
    Concat(Vec<Var>),
    SliceCols {
        x: Var,
        start: usize,
    },
    StackRows(Vec<Var>),
    Reshape(Var),
    SumAll(Var),
    MeanAll(Var),
    SumCols(Var),
    GaussianSample {
        mean: Var,
        std: Var,
        noise: Vec<f64>,
    },
    GaussianKl {
        mean_q: Var,
        std_q: Var,
        mean_p: Var,
        std_p: Var,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Wengert list of primitive operations.
///
/// Every op validates its operand shapes and rejects non-finite results, so a
/// value that made it onto the tape is always finite. [`Tape::backward`]
/// replays the list in exact reverse recording order.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
    param_index: HashMap<ParamId, Var>,
}

/// Parameter gradients produced by [`Tape::backward`], in registration order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    entries: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.entries.iter().find(|(p, _)| *p == id).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.entries.iter().map(|(p, t)| (*p, t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn shape_err(op: &'static str, detail: String) -> DiffError {
    DiffError::Shape { op, detail }
}

fn finite(op: &'static str, data: &[f64]) -> Result<(), DiffError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(DiffError::NonFinite { op })
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Neumaier-compensated sum; reductions feed losses that finite-difference
/// checks difference at the 1e-11 level.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut carry) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            carry += (sum - t) + v;
        } else {
            carry += (v - t) + sum;
        }
        sum = t;
    }
    sum + carry
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn conv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

struct ConvDims {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    padding: usize,
}

impl ConvDims {
    fn patch(&self) -> usize {
        self.c * self.k * self.k
    }

    fn out_hw(&self) -> usize {
        self.ho * self.wo
    }

    /// Unfolds image `img` (`c × h × w`) into a `patch × (ho·wo)` column matrix.
    fn im2col(&self, img: &[f64], cols: &mut [f64]) {
        let ohw = self.out_hw();
        for c in 0..self.c {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let dst = &mut cols[row * ohw..(row + 1) * ohw];
                    for oi in 0..self.ho {
                        let ii = (oi * self.stride + ki) as isize - self.padding as isize;
                        for oj in 0..self.wo {
                            let jj = (oj * self.stride + kj) as isize - self.padding as isize;
                            dst[oi * self.wo + oj] = if ii >= 0
                                && jj >= 0
                                && (ii as usize) < self.h
                                && (jj as usize) < self.w
                            {
                                img[(c * self.h + ii as usize) * self.w + jj as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`ConvDims::im2col`]: scatters columns back onto an image.
    fn col2im(&self, cols: &[f64], img: &mut [f64]) {
        let ohw = self.out_hw();
        for c in 0..self.c {
            for ki in 0..self.k {
                for kj in 0..self.k {
                    let row = (c * self.k + ki) * self.k + kj;
                    let src = &cols[row * ohw..(row + 1) * ohw];
                    for oi in 0..self.ho {
                        let ii = (oi * self.stride + ki) as isize - self.padding as isize;
                        if ii < 0 || ii as usize >= self.h {
                            continue;
                        }
                        for oj in 0..self.wo {
                            let jj = (oj * self.stride + kj) as isize - self.padding as isize;
                            if jj < 0 || jj as usize >= self.w {
                                continue;
                            }
                            img[(c * self.h + ii as usize) * self.w + jj as usize] +=
                                src[oi * self.wo + oj];
                        }
                    }
                }
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn checked(
        &mut self,
        op_name: &'static str,
        shape: Vec<usize>,
        data: Vec<f64>,
        op: Op,
    ) -> Result<Var, DiffError> {
        finite(op_name, &data)?;
        Ok(self.push(Tensor::from_parts(shape, data), op))
    }

    /// Records a non-trainable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant)
    }

    /// Registers a trainable parameter. Each id may be registered once per tape.
    pub fn param(&mut self, id: ParamId, value: Tensor) -> Result<Var, DiffError> {
        if self.param_index.contains_key(&id) {
            return Err(DiffError::Contract {
                op: "param",
                detail: format!("parameter {id:?} registered twice"),
            });
        }
        let v = self.push(value, Op::Param);
        self.params.push((id, v));
        self.param_index.insert(id, v);
        Ok(v)
    }

    pub fn param_var(&self, id: ParamId) -> Option<Var> {
        self.param_index.get(&id).copied()
    }

    /// `y = x · Wᵀ + b` over the trailing axis of `x`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, DiffError> {
        let (xs, ws, bs) = (self.value(x), self.value(w), self.value(b));
        if ws.shape().len() != 2
            || bs.shape() != [ws.shape()[0]]
            || xs.shape().is_empty()
            || xs.cols() != ws.shape()[1]
        {
            return Err(shape_err(
                "linear",
                format!("x {:?}, W {:?}, b {:?}", xs.shape(), ws.shape(), bs.shape()),
            ));
        }
        let (rows, inp, out) = (xs.rows(), xs.cols(), ws.shape()[0]);
        let mut data = Vec::with_capacity(rows * out);
        for _ in 0..rows {
            data.extend_from_slice(bs.data());
        }
        gemm(
            MatRef::new(xs.data(), rows, inp),
            MatRef::new(ws.data(), out, inp).t(),
            1.0,
            &mut data,
        );
        let mut shape = xs.shape().to_vec();
        *shape.last_mut().unwrap() = out;
        self.checked("linear", shape, data, Op::Linear { x, w, b })
    }

    /// 2-D convolution of `x: [N, C, H, W]` with `w: [O, C, k, k]`, `b: [O]`.
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var, DiffError> {
        let dims = self.conv_dims(x, w, b, stride, padding)?;
        let (xs, ws, bs) = (self.value(x), self.value(w), self.value(b));
        let (patch, ohw) = (dims.patch(), dims.out_hw());
        let mut cols = vec![0.0; patch * ohw];
        let mut data = vec![0.0; dims.n * dims.o * ohw];
        let img_len = dims.c * dims.h * dims.w;
        for n in 0..dims.n {
            dims.im2col(&xs.data()[n * img_len..(n + 1) * img_len], &mut cols);
            let out = &mut data[n * dims.o * ohw..(n + 1) * dims.o * ohw];
            for (o, bias) in bs.data().iter().enumerate() {
                out[o * ohw..(o + 1) * ohw].fill(*bias);
            }
            gemm(
                MatRef::new(ws.data(), dims.o, patch),
                MatRef::new(&cols, patch, ohw),
                1.0,
                out,
            );
        }
        let shape = vec![dims.n, dims.o, dims.ho, dims.wo];
        self.checked(
            "conv2d",
            shape,
            data,
            Op::Conv2d {
                x,
                w,
                b,
                stride,
                padding,
            },
        )
    }

    fn conv_dims(
        &self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    ) -> Result<ConvDims, DiffError> {
        let (xs, ws, bs) = (
            self.value(x).shape(),
            self.value(w).shape(),
            self.value(b).shape(),
        );
        let bad = || {
            shape_err(
                "conv2d",
                format!("x {xs:?}, W {ws:?}, b {bs:?}, stride {stride}, padding {padding}"),
            )
        };
        if xs.len() != 4 || ws.len() != 4 || ws[1] != xs[1] || ws[2] != ws[3] || bs != [ws[0]] {
            return Err(bad());
        }
        let k = ws[2];
        let ho = conv_out(xs[2], k, stride, padding).ok_or_else(bad)?;
        let wo = conv_out(xs[3], k, stride, padding).ok_or_else(bad)?;
        Ok(ConvDims {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            o: ws[0],
            k,
            ho,
            wo,
            stride,
            padding,
        })
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), DiffError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn binary(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, DiffError> {
        self.same_shape(name, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let shape = ta.shape().to_vec();
        self.checked(name, shape, data, op)
    }

    fn unary(
        &mut self,
        name: &'static str,
        x: Var,
        f: impl Fn(f64) -> f64,
        op: Op,
    ) -> Result<Var, DiffError> {
        let t = self.value(x);
        let data = t.data().iter().map(|v| f(*v)).collect();
        let shape = t.shape().to_vec();
        self.checked(name, shape, data, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, DiffError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var, DiffError> {
        self.unary("scale", x, |v| v * factor, Op::Scale(x, factor))
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, x: Var, amount: f64) -> Result<Var, DiffError> {
        self.unary("offset", x, |v| v + amount, Op::Offset(x))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary("tanh", x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid(x))
    }

    /// Exponential linear unit with unit scale.
    pub fn elu(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary(
            "elu",
            x,
            |v| if v > 0.0 { v } else { v.exp_m1() },
            Op::Elu(x),
        )
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary("softplus", x, softplus, Op::Softplus(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary("relu", x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn square(&mut self, x: Var) -> Result<Var, DiffError> {
        self.unary("square", x, |v| v * v, Op::Square(x))
    }

    /// Concatenates along the trailing axis. All parts must agree on the leading axes.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat", "no inputs".into()))?;
        let lead = self.value(*first).shape();
        if lead.is_empty() {
            return Err(shape_err("concat", "scalar input".into()));
        }
        let lead = lead[..lead.len() - 1].to_vec();
        let mut total = 0;
        for p in parts {
            let s = self.value(*p).shape();
            if s.is_empty() || s[..s.len() - 1] != lead[..] {
                return Err(shape_err(
                    "concat",
                    format!("leading axes {lead:?} vs {s:?}"),
                ));
            }
            total += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let mut shape = lead;
        shape.push(total);
        self.checked("concat", shape, data, Op::Concat(parts.to_vec()))
    }

    /// Columns `[start, start + len)` of the trailing axis.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, DiffError> {
        let t = self.value(x);
        if t.shape().is_empty() || start + len > t.cols() {
            return Err(shape_err(
                "slice_cols",
                format!("{:?}[{start}..{}]", t.shape(), start + len),
            ));
        }
        let data = (0..t.rows())
            .flat_map(|r| t.row(r)[start..start + len].iter().copied())
            .collect();
        let mut shape = t.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        self.checked("slice_cols", shape, data, Op::SliceCols { x, start })
    }

    /// Concatenates along the leading axis.
    pub fn stack_rows(&mut self, parts: &[Var]) -> Result<Var, DiffError> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("stack_rows", "no inputs".into()))?;
        let tail = self.value(*first).shape();
        if tail.is_empty() {
            return Err(shape_err("stack_rows", "scalar input".into()));
        }
        let tail = tail[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            let t = self.value(*p);
            if t.shape().is_empty() || t.shape()[1..] != tail[..] {
                return Err(shape_err(
                    "stack_rows",
                    format!("trailing axes {tail:?} vs {:?}", t.shape()),
                ));
            }
            lead += t.shape()[0];
            data.extend_from_slice(t.data());
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        self.checked("stack_rows", shape, data, Op::StackRows(parts.to_vec()))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var, DiffError> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    pub fn sum_all(&mut self, x: Var) -> Result<Var, DiffError> {
        let s = compensated_sum(self.value(x).data().iter().copied());
        self.checked("sum_all", Vec::new(), vec![s], Op::SumAll(x))
    }

    pub fn mean_all(&mut self, x: Var) -> Result<Var, DiffError> {
        let t = self.value(x);
        if t.is_empty() {
            return Err(shape_err("mean_all", "empty input".into()));
        }
        let m = compensated_sum(t.data().iter().copied()) / t.len() as f64;
        self.checked("mean_all", Vec::new(), vec![m], Op::MeanAll(x))
    }

    /// Sums over the trailing axis.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var, DiffError> {
        let t = self.value(x);
        if t.shape().is_empty() {
            return Err(shape_err("sum_cols", "scalar input".into()));
        }
        let data = (0..t.rows())
            .map(|r| compensated_sum(t.row(r).iter().copied()))
            .collect();
        let shape = t.shape()[..t.shape().len() - 1].to_vec();
        self.checked("sum_cols", shape, data, Op::SumCols(x))
    }

    /// Reparameterised draw `mean + std ⊙ noise` with caller-supplied standard-normal noise.
    pub fn gaussian_sample(
        &mut self,
        mean: Var,
        std: Var,
        noise: &[f64],
    ) -> Result<Var, DiffError> {
        self.same_shape("gaussian_sample", mean, std)?;
        let (m, s) = (self.value(mean), self.value(std));
        if noise.len() != m.len() {
            return Err(shape_err(
                "gaussian_sample",
                format!("noise has {} values for {:?}", noise.len(), m.shape()),
            ));
        }
        if s.data().iter().any(|v| *v <= 0.0) {
            return Err(DiffError::Contract {
                op: "gaussian_sample",
                detail: "stddev must be positive".into(),
            });
        }
        let data = m
            .data()
            .iter()
            .zip(s.data())
            .zip(noise)
            .map(|((m, s), e)| m + s * e)
            .collect();
        let shape = m.shape().to_vec();
        let op = Op::GaussianSample {
            mean,
            std,
            noise: noise.to_vec(),
        };
        self.checked("gaussian_sample", shape, data, op)
    }

    /// Closed-form `KL(N(mean_q, std_q²) ‖ N(mean_p, std_p²))` summed over the trailing axis.
    pub fn gaussian_kl(
        &mut self,
        mean_q: Var,
        std_q: Var,
        mean_p: Var,
        std_p: Var,
    ) -> Result<Var, DiffError> {
        for v in [std_q, mean_p, std_p] {
            self.same_shape("gaussian_kl", mean_q, v)?;
        }
        if self.value(mean_q).shape().is_empty() {
            return Err(shape_err("gaussian_kl", "scalar input".into()));
        }
        for s in [std_q, std_p] {
            if self.value(s).data().iter().any(|v| *v <= 0.0) {
                return Err(DiffError::Contract {
                    op: "gaussian_kl",
                    detail: "stddev must be positive".into(),
                });
            }
        }
        let (mq, sq, mp, sp) = (
            self.value(mean_q),
            self.value(std_q),
            self.value(mean_p),
            self.value(std_p),
        );
        let cols = mq.cols();
        let data = (0..mq.rows())
            .map(|r| {
                compensated_sum((0..cols).map(|c| {
                    let i = r * cols + c;
                    let (mq, sq, mp, sp) = (mq.data()[i], sq.data()[i], mp.data()[i], sp.data()[i]);
                    let d = mq - mp;
                    (sp / sq).ln() + (sq * sq + d * d) / (2.0 * sp * sp) - 0.5
                }))
            })
            .collect();
        let shape = mq.shape()[..mq.shape().len() - 1].to_vec();
        let op = Op::GaussianKl {
            mean_q,
            std_q,
            mean_p,
            std_p,
        };
        self.checked("gaussian_kl", shape, data, op)
    }

    /// Reverse sweep from a scalar `loss`.
    ///
    /// Every registered parameter receives a gradient of its own shape;
    /// parameters the loss does not depend on get zeros. The tape is not
    /// consumed, so repeated calls return identical results.
    pub fn backward(&self, loss: Var) -> Result<Gradients, DiffError> {
        if self.value(loss).len() != 1 {
            return Err(shape_err(
                "backward",
                format!(
                    "loss must be scalar, shape is {:?}",
                    self.value(loss).shape()
                ),
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut param_grads: HashMap<usize, Vec<f64>> = HashMap::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Constant => {}
                Op::Param => {
                    param_grads.insert(i, g);
                }
                Op::Linear { x, w, b } => self.back_linear(&mut grads, &g, *x, *w, *b),
                Op::Conv2d {
                    x,
                    w,
                    b,
                    stride,
                    padding,
                } => self.back_conv(&mut grads, &g, *x, *w, *b, *stride, *padding),
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.iter().copied());
                    accumulate(&mut grads, *b, g.iter().copied());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, g.iter().copied());
                    accumulate(&mut grads, *b, g.iter().map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                    accumulate(&mut grads, *a, g.iter().zip(vb).map(|(g, y)| g * y));
                    accumulate(&mut grads, *b, g.iter().zip(va).map(|(g, x)| g * x));
                }
                Op::Scale(x, f) => accumulate(&mut grads, *x, g.iter().map(|v| v * f)),
                Op::Offset(x) | Op::Reshape(x) => accumulate(&mut grads, *x, g.iter().copied()),
                Op::Tanh(x) => {
                    let y = node.value.data();
                    accumulate(
                        &mut grads,
                        *x,
                        g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)),
                    );
                }
                Op::Sigmoid(x) => {
                    let y = node.value.data();
                    accumulate(
                        &mut grads,
                        *x,
                        g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)),
                    );
                }
                Op::Elu(x) => {
                    let (xv, y) = (self.value(*x).data(), node.value.data());
                    let d = g
                        .iter()
                        .zip(xv)
                        .zip(y)
                        .map(|((g, x), y)| if *x > 0.0 { *g } else { g * (y + 1.0) });
                    accumulate(&mut grads, *x, d);
                }
                Op::Softplus(x) => {
                    let xv = self.value(*x).data();
                    accumulate(
                        &mut grads,
                        *x,
                        g.iter().zip(xv).map(|(g, x)| g * sigmoid(*x)),
                    );
                }
                Op::Relu(x) => {
                    let xv = self.value(*x).data();
                    accumulate(
                        &mut grads,
                        *x,
                        g.iter()
                            .zip(xv)
                            .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }),
                    );
                }
                Op::Square(x) => {
                    let xv = self.value(*x).data();
                    accumulate(&mut grads, *x, g.iter().zip(xv).map(|(g, x)| 2.0 * g * x));
                }
                Op::Concat(parts) => {
                    let total = node.value.cols();
                    let rows = node.value.rows();
                    let mut start = 0;
                    for p in parts {
                        let w = self.value(*p).cols();
                        let d = (0..rows).flat_map(|r| {
                            g[r * total + start..r * total + start + w].iter().copied()
                        });
                        accumulate(&mut grads, *p, d);
                        start += w;
                    }
                }
                Op::SliceCols { x, start } => {
                    let src = self.value(*x);
                    let (cols, w) = (src.cols(), node.value.cols());
                    let mut d = vec![0.0; src.len()];
                    for r in 0..src.rows() {
                        d[r * cols + start..r * cols + start + w]
                            .copy_from_slice(&g[r * w..(r + 1) * w]);
                    }
                    accumulate(&mut grads, *x, d.into_iter());
                }
                Op::StackRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        accumulate(&mut grads, *p, g[start..start + n].iter().copied());
                        start += n;
                    }
                }
                Op::SumAll(x) => {
                    let n = self.value(*x).len();
                    accumulate(&mut grads, *x, std::iter::repeat_n(g[0], n));
                }
                Op::MeanAll(x) => {
                    let n = self.value(*x).len();
                    accumulate(&mut grads, *x, std::iter::repeat_n(g[0] / n as f64, n));
                }
                Op::SumCols(x) => {
                    let cols = self.value(*x).cols();
                    accumulate(
                        &mut grads,
                        *x,
                        g.iter().flat_map(|v| std::iter::repeat_n(*v, cols)),
                    );
                }
                Op::GaussianSample { mean, std, noise } => {
                    accumulate(&mut grads, *mean, g.iter().copied());
                    accumulate(&mut grads, *std, g.iter().zip(noise).map(|(g, e)| g * e));
                }
                Op::GaussianKl {
                    mean_q,
                    std_q,
                    mean_p,
                    std_p,
                } => self.back_kl(&mut grads, &g, *mean_q, *std_q, *mean_p, *std_p),
            }
        }

        let entries = self
            .params
            .iter()
            .map(|(id, v)| {
                let shape = self.value(*v).shape().to_vec();
                let data = param_grads
                    .remove(&v.0)
                    .unwrap_or_else(|| vec![0.0; self.value(*v).len()]);
                (*id, Tensor::from_parts(shape, data))
            })
            .collect();
        Ok(Gradients { entries })
    }

    fn back_linear(&self, grads: &mut [Option<Vec<f64>>], g: &[f64], x: Var, w: Var, b: Var) {
        let (xs, ws) = (self.value(x), self.value(w));
        let (rows, inp, out) = (xs.rows(), xs.cols(), ws.shape()[0]);
        let mut dx = vec![0.0; rows * inp];
        gemm(
            MatRef::new(g, rows, out),
            MatRef::new(ws.data(), out, inp),
            0.0,
            &mut dx,
        );
        accumulate(grads, x, dx.into_iter());
        let mut dw = vec![0.0; out * inp];
        gemm(
            MatRef::new(g, rows, out).t(),
            MatRef::new(xs.data(), rows, inp),
            0.0,
            &mut dw,
        );
        accumulate(grads, w, dw.into_iter());
        let mut db = vec![0.0; out];
        for r in 0..rows {
            for (d, v) in db.iter_mut().zip(&g[r * out..(r + 1) * out]) {
                *d += v;
            }
        }
        accumulate(grads, b, db.into_iter());
    }

    #[allow(clippy::too_many_arguments)]
    fn back_conv(
        &self,
        grads: &mut [Option<Vec<f64>>],
        g: &[f64],
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        padding: usize,
    ) {
        let dims = self
            .conv_dims(x, w, b, stride, padding)
            .expect("conv geometry validated on the forward pass");
        let (xs, ws) = (self.value(x), self.value(w));
        let (patch, ohw) = (dims.patch(), dims.out_hw());
        let img_len = dims.c * dims.h * dims.w;
        let mut cols = vec![0.0; patch * ohw];
        let mut dcols = vec![0.0; patch * ohw];
        let mut dx = vec![0.0; xs.len()];
        let mut dw = vec![0.0; ws.len()];
        let mut db = vec![0.0; dims.o];
        for n in 0..dims.n {
            let gn = &g[n * dims.o * ohw..(n + 1) * dims.o * ohw];
            dims.im2col(&xs.data()[n * img_len..(n + 1) * img_len], &mut cols);
            gemm(
                MatRef::new(gn, dims.o, ohw),
                MatRef::new(&cols, patch, ohw).t(),
                1.0,
                &mut dw,
            );
            gemm(
                MatRef::new(ws.data(), dims.o, patch).t(),
                MatRef::new(gn, dims.o, ohw),
                0.0,
                &mut dcols,
            );
            dims.col2im(&dcols, &mut dx[n * img_len..(n + 1) * img_len]);
            for (o, d) in db.iter_mut().enumerate() {
                *d += gn[o * ohw..(o + 1) * ohw].iter().sum::<f64>();
            }
        }
        accumulate(grads, x, dx.into_iter());
        accumulate(grads, w, dw.into_iter());
        accumulate(grads, b, db.into_iter());
    }

    fn back_kl(
        &self,
        grads: &mut [Option<Vec<f64>>],
        g: &[f64],
        mean_q: Var,
        std_q: Var,
        mean_p: Var,
        std_p: Var,
    ) {
        let (mq, sq, mp, sp) = (
            self.value(mean_q).data(),
            self.value(std_q).data(),
            self.value(mean_p).data(),
            self.value(std_p).data(),
        );
        let cols = self.value(mean_q).cols();
        let n = mq.len();
        let (mut dmq, mut dsq, mut dmp, mut dsp) =
            (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        for i in 0..n {
            let gr = g[i / cols];
            let d = mq[i] - mp[i];
            let vp = sp[i] * sp[i];
            dmq[i] = gr * d / vp;
            dmp[i] = -gr * d / vp;
            dsq[i] = gr * (sq[i] / vp - 1.0 / sq[i]);
            dsp[i] = gr * (1.0 / sp[i] - (sq[i] * sq[i] + d * d) / (vp * sp[i]));
        }
        accumulate(grads, mean_q, dmq.into_iter());
        accumulate(grads, std_q, dsq.into_iter());
        accumulate(grads, mean_p, dmp.into_iter());
        accumulate(grads, std_p, dsp.into_iter());
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], v: Var, contrib: impl Iterator<Item = f64>) {
    match &mut grads[v.0] {
        Some(buf) => buf.iter_mut().zip(contrib).for_each(|(b, c)| *b += c),
        slot @ None => *slot = Some(contrib.collect()),
    }
}
