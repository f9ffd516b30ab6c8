//! Define-by-run computation tape with reverse-mode differentiation.
//!
//! Every op appends one node holding its forward value. Nodes are only ever
//! appended, so node order is a topological order and [`Graph::backward`]
//! walks the tape once in reverse.

use crate::error::{Result, TensorError};
use crate::kernels::{self, AdaInGrads, AdaInSaved, ConvGeom};
use crate::real::Real;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Conv2d {
        x: Var,
        kernel: Var,
        geom: ConvGeom,
    },
    BiasAdd {
        x: Var,
        bias: Var,
        inner: usize,
    },
    Upsample2 {
        x: Var,
        h: usize,
        w: usize,
    },
    AvgPool2 {
        x: Var,
        h: usize,
        w: usize,
    },
    GlobalAvgPool {
        x: Var,
        plane: usize,
    },
    Linear {
        x: Var,
        weight: Var,
        bias: Option<Var>,
    },
    MatMul(Var, Var),
    Concat {
        inputs: Vec<Var>,
        widths: Vec<usize>,
        outer: usize,
    },
    LeakyRelu(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Log(Var),
    AdaIn {
        f: Var,
        scale: Var,
        shift: Var,
        plane: usize,
        saved: AdaInSaved<T>,
    },
    L1Mean(Var, Var),
    Mean(Var),
    Sum(Var),
    Gather {
        x: Var,
        cols: usize,
        idx: Vec<usize>,
    },
    Reshape(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to the leaves of a [`Graph`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Option<Vec<usize>>>,
}

impl<T: Real> Gradients<T> {
    /// Whether any gradient reached `v`.
    pub fn contains(&self, v: Var) -> bool {
        self.grads.get(v.0).is_some_and(|g| g.is_some())
    }

    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient of `v` as a tensor; zeros for a leaf the loss does not depend on.
    pub fn wrt(&self, v: Var) -> Option<Tensor<T>> {
        let shape = self.shapes.get(v.0)?.clone()?;
        Some(match self.get(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        })
    }
}

/// Computation tape. One graph is built per forward pass and dropped after
/// the backward pass.
#[derive(Debug, Default)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

fn nchw(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize, usize)> {
    match *shape {
        [c, h, w] => Ok((1, c, h, w)),
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(TensorError::shape(
            op,
            format!("expected [C,H,W] or [N,C,H,W], got {shape:?}"),
        )),
    }
}

fn with_hw(shape: &[usize], h: usize, w: usize) -> Vec<usize> {
    let mut s = shape.to_vec();
    let r = s.len();
    s[r - 2] = h;
    s[r - 1] = w;
    s
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn accumulate<T: Real>(slot: &mut Option<Vec<T>>, len: usize) -> &mut [T] {
    slot.get_or_insert_with(|| vec![T::zero(); len])
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf: gradients are accumulated for it.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf: no gradient flows into it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `v` cut off from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(T, T) -> T) -> Tensor<T> {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data).expect("same shape")
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let value = self.value(x).map(f);
        let rg = self.any_grad(&[x]);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.zip_map(a, b, |x, y| x + y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_map(a, b, |x, y| x - y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_map(a, b, |x, y| x * y);
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let k = T::from_f64(factor);
        self.unary(x, |v| v * k, Op::Scale(x, k))
    }

    pub fn add_scalar(&mut self, x: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        self.unary(x, |v| v + c, Op::AddScalar(x))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let s = T::from_f64(slope);
        self.unary(
            x,
            |v| if v > T::zero() { v } else { v * s },
            Op::LeakyRelu(x, s),
        )
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, 0.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), Op::Tanh(x))
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Var {
        self.unary(x, softplus, Op::Softplus(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.ln(), Op::Log(x))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// 2-D cross-correlation of `x: [N,C_in,H,W]` (or `[C_in,H,W]`) with
    /// `kernel: [C_out,C_in,k,k]`, zero padding `pad` on every side.
    pub fn conv2d(&mut self, x: Var, kernel: Var, stride: usize, pad: usize) -> Result<Var> {
        let (n, c_in, h, w) = nchw("conv2d", self.shape(x))?;
        let &[c_out, kc, kh, kw] = self.shape(kernel) else {
            return Err(TensorError::shape(
                "conv2d",
                format!("kernel must be [C_out,C_in,k,k], got {:?}", self.shape(kernel)),
            ));
        };
        if kc != c_in {
            return Err(TensorError::shape(
                "conv2d",
                format!("kernel expects {kc} input channels, input has {c_in}"),
            ));
        }
        if kh != kw {
            return Err(TensorError::shape("conv2d", "kernel must be square"));
        }
        if stride == 0 {
            return Err(TensorError::argument("conv2d", "stride must be >= 1"));
        }
        let k = kh;
        if k > h + 2 * pad || k > w + 2 * pad {
            return Err(TensorError::shape(
                "conv2d",
                format!("kernel {k} larger than padded input {h}x{w} (pad {pad})"),
            ));
        }
        let geom = ConvGeom {
            n,
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            pad,
            h_out: (h + 2 * pad - k) / stride + 1,
            w_out: (w + 2 * pad - k) / stride + 1,
        };
        let data = kernels::conv2d_forward(self.value(x).data(), self.value(kernel).data(), &geom);
        let shape = if self.shape(x).len() == 3 {
            vec![c_out, geom.h_out, geom.w_out]
        } else {
            vec![n, c_out, geom.h_out, geom.w_out]
        };
        let value = Tensor::new(shape, data)?;
        let rg = self.any_grad(&[x, kernel]);
        Ok(self.push(value, Op::Conv2d { x, kernel, geom }, rg))
    }

    /// Adds `bias: [C]` along axis 1 of `x: [N,C,...]`, or axis 0 of `[C,H,W]`.
    pub fn bias_add(&mut self, x: Var, bias: Var) -> Result<Var> {
        let shape = self.shape(x).to_vec();
        let c = self.value(bias).numel();
        let axis = if shape.len() == 3 { 0 } else { 1 };
        if shape.len() < 2 || shape[axis] != c || self.shape(bias).len() != 1 {
            return Err(TensorError::shape(
                "bias_add",
                format!("bias {:?} does not match {:?}", self.shape(bias), shape),
            ));
        }
        let inner: usize = shape[axis + 1..].iter().product();
        let b = self.value(bias).data();
        let mut value = self.value(x).clone();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += b[(i / inner) % c];
        }
        let rg = self.any_grad(&[x, bias]);
        Ok(self.push(value, Op::BiasAdd { x, bias, inner }, rg))
    }

    /// Nearest-neighbour upsampling by a factor of two in H and W.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = nchw("upsample2", self.shape(x))?;
        let src = self.value(x).data();
        let (h2, w2) = (2 * h, 2 * w);
        let mut out = vec![T::zero(); n * c * h2 * w2];
        for p in 0..n * c {
            let s = &src[p * h * w..(p + 1) * h * w];
            let d = &mut out[p * h2 * w2..(p + 1) * h2 * w2];
            for y in 0..h2 {
                for xx in 0..w2 {
                    d[y * w2 + xx] = s[(y / 2) * w + xx / 2];
                }
            }
        }
        let value = Tensor::new(with_hw(self.shape(x), h2, w2), out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::Upsample2 { x, h, w }, rg))
    }

    /// 2x2 average pooling with stride 2; H and W must be even.
    pub fn avg_pool2(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = nchw("avg_pool2", self.shape(x))?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::shape(
                "avg_pool2",
                format!("spatial size {h}x{w} is not even"),
            ));
        }
        let (ho, wo) = (h / 2, w / 2);
        let src = self.value(x).data();
        let quarter = T::from_f64(0.25);
        let mut out = vec![T::zero(); n * c * ho * wo];
        for p in 0..n * c {
            let s = &src[p * h * w..(p + 1) * h * w];
            for y in 0..ho {
                for xx in 0..wo {
                    let i = 2 * y * w + 2 * xx;
                    out[p * ho * wo + y * wo + xx] =
                        (s[i] + s[i + 1] + s[i + w] + s[i + w + 1]) * quarter;
                }
            }
        }
        let value = Tensor::new(with_hw(self.shape(x), ho, wo), out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::AvgPool2 { x, h, w }, rg))
    }

    /// Spatial mean: `[N,C,H,W] -> [N,C]` (or `[C,H,W] -> [C]`).
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let (n, c, h, w) = nchw("global_avg_pool", self.shape(x))?;
        let plane = h * w;
        let inv = T::one() / T::from_f64(plane as f64);
        let out = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let shape = if self.shape(x).len() == 3 {
            vec![c]
        } else {
            vec![n, c]
        };
        let value = Tensor::new(shape, out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(value, Op::GlobalAvgPool { x, plane }, rg))
    }

    /// Affine map `x: [N,D] -> x W^T + b` with `W: [O,D]`, `b: [O]`.
    pub fn linear(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let &[n, d] = self.shape(x) else {
            return Err(TensorError::shape(
                "linear",
                format!("input must be [N,D], got {:?}", self.shape(x)),
            ));
        };
        let &[o, wd] = self.shape(weight) else {
            return Err(TensorError::shape("linear", "weight must be [O,D]"));
        };
        if wd != d {
            return Err(TensorError::shape(
                "linear",
                format!("weight expects {wd} features, input has {d}"),
            ));
        }
        if let Some(b) = bias {
            if self.shape(b) != [o] {
                return Err(TensorError::shape(
                    "linear",
                    format!("bias {:?} for {o} outputs", self.shape(b)),
                ));
            }
        }
        let mut out = vec![T::zero(); n * o];
        if let Some(b) = bias {
            let bv = self.value(b).data();
            for row in out.chunks_mut(o) {
                row.copy_from_slice(bv);
            }
        }
        T::gemm(
            n,
            d,
            o,
            T::one(),
            self.value(x).data(),
            (d, 1),
            self.value(weight).data(),
            (1, d),
            T::one(),
            &mut out,
            (o, 1),
        );
        let value = Tensor::new(vec![n, o], out)?;
        let mut ins = vec![x, weight];
        ins.extend(bias);
        let rg = self.any_grad(&ins);
        Ok(self.push(value, Op::Linear { x, weight, bias }, rg))
    }

    /// Matrix product of `a: [M,K]` and `b: [K,N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (&[m, k], &[k2, n]) = (self.shape(a), self.shape(b)) else {
            return Err(TensorError::shape("matmul", "operands must be rank 2"));
        };
        if k != k2 {
            return Err(TensorError::shape(
                "matmul",
                format!("inner dimensions {k} and {k2} differ"),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            self.value(a).data(),
            (k, 1),
            self.value(b).data(),
            (n, 1),
            T::zero(),
            &mut out,
            (n, 1),
        );
        let value = Tensor::new(vec![m, n], out)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// Concatenates along the channel axis (axis 1 of `[N,C,H,W]`, axis 0 of `[C,H,W]`).
    pub fn concat_channels(&mut self, inputs: &[Var]) -> Result<Var> {
        let Some(&first) = inputs.first() else {
            return Err(TensorError::argument("concat_channels", "no inputs"));
        };
        let base = self.shape(first).to_vec();
        let axis = if base.len() == 3 { 0 } else { 1 };
        nchw("concat_channels", &base)?;
        let outer: usize = base[..axis].iter().product();
        let mut widths = Vec::with_capacity(inputs.len());
        let mut channels = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len() || s[..axis] != base[..axis] || s[axis + 1..] != base[axis + 1..] {
                return Err(TensorError::shape(
                    "concat_channels",
                    format!("{s:?} incompatible with {base:?}"),
                ));
            }
            channels += s[axis];
            widths.push(self.value(v).numel() / outer);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(total * outer);
        for o in 0..outer {
            for (&v, &wd) in inputs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(v).data()[o * wd..(o + 1) * wd]);
            }
        }
        let mut shape = base.clone();
        shape[axis] = channels;
        let value = Tensor::new(shape, out)?;
        let rg = self.any_grad(inputs);
        Ok(self.push(
            value,
            Op::Concat {
                inputs: inputs.to_vec(),
                widths,
                outer,
            },
            rg,
        ))
    }

    /// Adaptive instance normalization: every channel plane of `f` is
    /// normalized by its population mean and standard deviation, then scaled
    /// by `scale` and shifted by `shift`:
    ///
    /// `out = scale * (f - mean(f)) / (std(f) + eps) + shift`
    ///
    /// `f` is `[N,C,H,W]` with `scale`, `shift` of `N*C` values (`[N,C]`),
    /// or `[C,H,W]` with `[C]` vectors.
    pub fn adain(&mut self, f: Var, scale: Var, shift: Var, eps: f64) -> Result<Var> {
        let (n, c, h, w) = nchw("adain", self.shape(f))?;
        for v in [scale, shift] {
            if self.value(v).numel() != n * c {
                return Err(TensorError::shape(
                    "adain",
                    format!(
                        "style parameters {:?} do not match {n} x {c} channel planes",
                        self.shape(v)
                    ),
                ));
            }
        }
        if eps.is_nan() || eps < 0.0 {
            return Err(TensorError::argument("adain", "eps must be non-negative"));
        }
        let plane = h * w;
        let (out, saved) = kernels::adain_forward(
            self.value(f).data(),
            self.value(scale).data(),
            self.value(shift).data(),
            plane,
            T::from_f64(eps),
        );
        let value = Tensor::new(self.shape(f).to_vec(), out)?;
        let rg = self.any_grad(&[f, scale, shift]);
        Ok(self.push(
            value,
            Op::AdaIn {
                f,
                scale,
                shift,
                plane,
                saved,
            },
            rg,
        ))
    }

    /// Mean absolute difference; the subgradient of `|0|` is taken as 0.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("l1_mean", a, b)?;
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let n = T::from_f64(va.len() as f64);
        let s = va.iter().zip(vb).map(|(&x, &y)| (x - y).abs()).sum::<T>() / n;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::scalar(s), Op::L1Mean(a, b), rg))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().copied().sum::<T>() / T::from_f64(v.numel() as f64);
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().copied().sum::<T>();
        let rg = self.any_grad(&[x]);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    /// Picks `x[i, idx[i]]` for every row of `x: [N,K]`, giving `[N]`.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let &[n, k] = self.shape(x) else {
            return Err(TensorError::shape("gather", "input must be [N,K]"));
        };
        if idx.len() != n {
            return Err(TensorError::shape(
                "gather",
                format!("{} indices for {n} rows", idx.len()),
            ));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= k) {
            return Err(TensorError::argument(
                "gather",
                format!("index {bad} out of range for {k} columns"),
            ));
        }
        let src = self.value(x).data();
        let out = idx.iter().enumerate().map(|(r, &i)| src[r * k + i]).collect();
        let value = Tensor::new(vec![n], out)?;
        let rg = self.any_grad(&[x]);
        Ok(self.push(
            value,
            Op::Gather {
                x,
                cols: k,
                idx: idx.to_vec(),
            },
            rg,
        ))
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(TensorError::NotScalar(lv.shape().to_vec()));
        }
        let count = loss.0 + 1;
        let mut grads: Vec<Option<Vec<T>>> = (0..count).map(|_| None).collect();
        let mut leaf_shapes: Vec<Option<Vec<usize>>> = vec![None; count];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..count).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Leaf) {
                if node.requires_grad {
                    leaf_shapes[i] = Some(node.value.shape().to_vec());
                } else {
                    grads[i] = None;
                }
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            self.backprop_node(node, &gy, &mut grads);
        }
        Ok(Gradients {
            grads,
            shapes: leaf_shapes,
        })
    }

    fn backprop_node(&self, node: &Node<T>, gy: &[T], grads: &mut [Option<Vec<T>>]) {
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let numel = |v: Var| self.nodes[v.0].value.numel();
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) {
                    -T::one()
                } else {
                    T::one()
                };
                if needs(*a) {
                    let ga = accumulate(&mut grads[a.0], gy.len());
                    ga.iter_mut().zip(gy).for_each(|(d, &g)| *d += g);
                }
                if needs(*b) {
                    let gb = accumulate(&mut grads[b.0], gy.len());
                    gb.iter_mut().zip(gy).for_each(|(d, &g)| *d += sign * g);
                }
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if needs(*a) {
                    let ga = accumulate(&mut grads[a.0], gy.len());
                    for j in 0..gy.len() {
                        ga[j] += gy[j] * vb[j];
                    }
                }
                if needs(*b) {
                    let gb = accumulate(&mut grads[b.0], gy.len());
                    for j in 0..gy.len() {
                        gb[j] += gy[j] * va[j];
                    }
                }
            }
            Op::Scale(x, k) => {
                let gx = accumulate(&mut grads[x.0], gy.len());
                gx.iter_mut().zip(gy).for_each(|(d, &g)| *d += g * *k);
            }
            Op::AddScalar(x) | Op::Reshape(x) => {
                let gx = accumulate(&mut grads[x.0], gy.len());
                gx.iter_mut().zip(gy).for_each(|(d, &g)| *d += g);
            }
            Op::Conv2d { x, kernel, geom } => {
                let (mut gx, mut gk) = (None, None);
                if needs(*x) {
                    gx = Some(grads[x.0].take().unwrap_or_else(|| vec![T::zero(); numel(*x)]));
                }
                if needs(*kernel) {
                    gk = Some(
                        grads[kernel.0]
                            .take()
                            .unwrap_or_else(|| vec![T::zero(); numel(*kernel)]),
                    );
                }
                kernels::conv2d_backward(
                    self.value(*x).data(),
                    self.value(*kernel).data(),
                    gy,
                    geom,
                    gx.as_deref_mut(),
                    gk.as_deref_mut(),
                );
                if gx.is_some() {
                    grads[x.0] = gx;
                }
                if gk.is_some() {
                    grads[kernel.0] = gk;
                }
            }
            Op::BiasAdd { x, bias, inner } => {
                if needs(*x) {
                    let gx = accumulate(&mut grads[x.0], gy.len());
                    gx.iter_mut().zip(gy).for_each(|(d, &g)| *d += g);
                }
                if needs(*bias) {
                    let c = numel(*bias);
                    let gb = accumulate(&mut grads[bias.0], c);
                    for (blk, chunk) in gy.chunks(*inner).enumerate() {
                        gb[blk % c] += chunk.iter().copied().sum::<T>();
                    }
                }
            }
            Op::Upsample2 { x, h, w } => {
                let (h, w) = (*h, *w);
                let (h2, w2) = (2 * h, 2 * w);
                let gx = accumulate(&mut grads[x.0], gy.len() / 4);
                for p in 0..gy.len() / (h2 * w2) {
                    let s = &gy[p * h2 * w2..(p + 1) * h2 * w2];
                    let d = &mut gx[p * h * w..(p + 1) * h * w];
                    for y in 0..h2 {
                        for xx in 0..w2 {
                            d[(y / 2) * w + xx / 2] += s[y * w2 + xx];
                        }
                    }
                }
            }
            Op::AvgPool2 { x, h, w } => {
                let (h, w) = (*h, *w);
                let (ho, wo) = (h / 2, w / 2);
                let quarter = T::from_f64(0.25);
                let gx = accumulate(&mut grads[x.0], gy.len() * 4);
                for p in 0..gy.len() / (ho * wo) {
                    for y in 0..ho {
                        for xx in 0..wo {
                            let g = gy[p * ho * wo + y * wo + xx] * quarter;
                            let i = p * h * w + 2 * y * w + 2 * xx;
                            gx[i] += g;
                            gx[i + 1] += g;
                            gx[i + w] += g;
                            gx[i + w + 1] += g;
                        }
                    }
                }
            }
            Op::GlobalAvgPool { x, plane } => {
                let inv = T::one() / T::from_f64(*plane as f64);
                let gx = accumulate(&mut grads[x.0], gy.len() * plane);
                for (p, &g) in gy.iter().enumerate() {
                    gx[p * plane..(p + 1) * plane]
                        .iter_mut()
                        .for_each(|d| *d += g * inv);
                }
            }
            Op::Linear { x, weight, bias } => {
                let [n, d] = self.shape(*x) else { unreachable!() };
                let (n, d) = (*n, *d);
                let o = gy.len() / n;
                if needs(*x) {
                    let gx = accumulate(&mut grads[x.0], n * d);
                    T::gemm(
                        n,
                        o,
                        d,
                        T::one(),
                        gy,
                        (o, 1),
                        self.value(*weight).data(),
                        (d, 1),
                        T::one(),
                        gx,
                        (d, 1),
                    );
                }
                if needs(*weight) {
                    let gw = accumulate(&mut grads[weight.0], o * d);
                    T::gemm(
                        o,
                        n,
                        d,
                        T::one(),
                        gy,
                        (1, o),
                        self.value(*x).data(),
                        (d, 1),
                        T::one(),
                        gw,
                        (d, 1),
                    );
                }
                if let Some(b) = bias.filter(|&b| needs(b)) {
                    let gb = accumulate(&mut grads[b.0], o);
                    for row in gy.chunks(o) {
                        gb.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                    }
                }
            }
            Op::MatMul(a, b) => {
                let &[m, k] = self.shape(*a) else { unreachable!() };
                let n = gy.len() / m;
                if needs(*a) {
                    let ga = accumulate(&mut grads[a.0], m * k);
                    T::gemm(
                        m,
                        n,
                        k,
                        T::one(),
                        gy,
                        (n, 1),
                        self.value(*b).data(),
                        (1, n),
                        T::one(),
                        ga,
                        (k, 1),
                    );
                }
                if needs(*b) {
                    let gb = accumulate(&mut grads[b.0], k * n);
                    T::gemm(
                        k,
                        m,
                        n,
                        T::one(),
                        self.value(*a).data(),
                        (1, k),
                        gy,
                        (n, 1),
                        T::one(),
                        gb,
                        (n, 1),
                    );
                }
            }
            Op::Concat {
                inputs,
                widths,
                outer,
            } => {
                let total: usize = widths.iter().sum();
                let mut offset = 0;
                for (&v, &wd) in inputs.iter().zip(widths) {
                    if needs(v) {
                        let gv = accumulate(&mut grads[v.0], wd * outer);
                        for o in 0..*outer {
                            let src = &gy[o * total + offset..o * total + offset + wd];
                            gv[o * wd..(o + 1) * wd]
                                .iter_mut()
                                .zip(src)
                                .for_each(|(d, &g)| *d += g);
                        }
                    }
                    offset += wd;
                }
            }
            Op::LeakyRelu(x, slope) => {
                let xv = self.value(*x).data();
                let gx = accumulate(&mut grads[x.0], gy.len());
                for j in 0..gy.len() {
                    gx[j] += if xv[j] > T::zero() { gy[j] } else { gy[j] * *slope };
                }
            }
            Op::Sigmoid(x) => {
                let yv = node.value.data();
                let gx = accumulate(&mut grads[x.0], gy.len());
                for j in 0..gy.len() {
                    gx[j] += gy[j] * yv[j] * (T::one() - yv[j]);
                }
            }
            Op::Tanh(x) => {
                let yv = node.value.data();
                let gx = accumulate(&mut grads[x.0], gy.len());
                for j in 0..gy.len() {
                    gx[j] += gy[j] * (T::one() - yv[j] * yv[j]);
                }
            }
            Op::Softplus(x) => {
                let xv = self.value(*x).data();
                let gx = accumulate(&mut grads[x.0], gy.len());
                for j in 0..gy.len() {
                    gx[j] += gy[j] * sigmoid(xv[j]);
                }
            }
            Op::Log(x) => {
                let xv = self.value(*x).data();
                let gx = accumulate(&mut grads[x.0], gy.len());
                for j in 0..gy.len() {
                    gx[j] += gy[j] / xv[j];
                }
            }
            Op::AdaIn {
                f,
                scale,
                shift,
                plane,
                saved,
            } => {
                let mut df = needs(*f).then(|| grads[f.0].take().unwrap_or_else(|| vec![T::zero(); numel(*f)]));
                let mut ds = needs(*scale)
                    .then(|| grads[scale.0].take().unwrap_or_else(|| vec![T::zero(); numel(*scale)]));
                let mut db = needs(*shift)
                    .then(|| grads[shift.0].take().unwrap_or_else(|| vec![T::zero(); numel(*shift)]));
                kernels::adain_backward(
                    gy,
                    self.value(*scale).data(),
                    saved,
                    *plane,
                    AdaInGrads {
                        df: df.as_deref_mut(),
                        dscale: ds.as_deref_mut(),
                        dshift: db.as_deref_mut(),
                    },
                );
                // scale and shift may be the same node; restore in reverse take order
                if db.is_some() {
                    grads[shift.0] = merge(grads[shift.0].take(), db);
                }
                if ds.is_some() {
                    grads[scale.0] = merge(grads[scale.0].take(), ds);
                }
                if df.is_some() {
                    grads[f.0] = merge(grads[f.0].take(), df);
                }
            }
            Op::L1Mean(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let inv = gy[0] / T::from_f64(va.len() as f64);
                let sign = |d: T| {
                    if d > T::zero() {
                        inv
                    } else if d < T::zero() {
                        -inv
                    } else {
                        T::zero()
                    }
                };
                if needs(*a) {
                    let ga = accumulate(&mut grads[a.0], va.len());
                    for j in 0..va.len() {
                        ga[j] += sign(va[j] - vb[j]);
                    }
                }
                if needs(*b) {
                    let gb = accumulate(&mut grads[b.0], va.len());
                    for j in 0..va.len() {
                        gb[j] -= sign(va[j] - vb[j]);
                    }
                }
            }
            Op::Mean(x) | Op::Sum(x) => {
                let n = numel(*x);
                let g = if matches!(node.op, Op::Mean(_)) {
                    gy[0] / T::from_f64(n as f64)
                } else {
                    gy[0]
                };
                let gx = accumulate(&mut grads[x.0], n);
                gx.iter_mut().for_each(|d| *d += g);
            }
            Op::Gather { x, cols, idx } => {
                let gx = accumulate(&mut grads[x.0], idx.len() * cols);
                for (r, &i) in idx.iter().enumerate() {
                    gx[r * cols + i] += gy[r];
                }
            }
        }
    }
}

fn merge<T: Real>(existing: Option<Vec<T>>, new: Option<Vec<T>>) -> Option<Vec<T>> {
    match (existing, new) {
        (Some(mut a), Some(b)) => {
            a.iter_mut().zip(&b).for_each(|(x, &y)| *x += y);
            Some(a)
        }
        (a, b) => a.or(b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape.to_vec(), v).unwrap()
    }

    #[test]
    fn square_derivative() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(3.0));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[6.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[2], &[1.0, 2.0]));
        assert_eq!(g.backward(x).unwrap_err(), TensorError::NotScalar(vec![2]));
    }

    #[test]
    fn unused_param_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.0));
        let unused = g.param(t(&[3], &[1.0, 1.0, 1.0]));
        let y = g.mul(x, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert!(!grads.contains(unused));
        assert_eq!(grads.wrt(unused).unwrap().data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2, 3], &[1.0, -2.0, 3.5, 0.0, 7.0, -1.0]));
        let k = g.constant(t(&[1, 1, 1, 1], &[1.0]));
        let y = g.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn conv_diagonal_kernel_sums_diagonal() {
        let mut g = Graph::new();
        let x = g.constant(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let k = g.constant(t(&[1, 1, 2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let y = g.conv2d(x, k, 1, 0).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 1]);
        assert_eq!(g.value(y).data(), &[5.0]);
    }

    #[test]
    fn conv_zero_kernel_gives_zeros() {
        let mut g = Graph::new();
        let x = g.constant(t(&[2, 3, 3], &[1.5; 18]));
        let k = g.constant(Tensor::zeros(vec![4, 2, 3, 3]));
        let y = g.conv2d(x, k, 1, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[4, 3, 3]);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_output_size_and_channel_check() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::<f64>::zeros(vec![2, 3, 32, 32]));
        let k = g.constant(Tensor::zeros(vec![8, 3, 4, 4]));
        let y = g.conv2d(x, k, 2, 1).unwrap();
        assert_eq!(g.shape(y), &[2, 8, 16, 16]);
        let bad = g.constant(Tensor::zeros(vec![8, 4, 4, 4]));
        assert!(matches!(
            g.conv2d(x, bad, 2, 1),
            Err(TensorError::Shape { op: "conv2d", .. })
        ));
    }

    #[test]
    fn adain_hand_computed_plane() {
        let mut g = Graph::new();
        let f = g.constant(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
        let mu = g.constant(t(&[1], &[2.0]));
        let b = g.constant(t(&[1], &[1.0]));
        let y = g.adain(f, mu, b, 0.0).unwrap();
        let expected = [-1.68328, 0.10557, 1.89443, 3.68328];
        for (a, e) in g.value(y).data().iter().zip(expected) {
            assert!((a - e).abs() < 1e-5, "{a} vs {e}");
        }
    }

    #[test]
    fn adain_identity_on_standardized_plane() {
        let mut g = Graph::new();
        let f = g.constant(t(&[1, 1, 4], &[-1.0, 1.0, -1.0, 1.0]));
        let mu = g.constant(t(&[1], &[1.0]));
        let b = g.constant(t(&[1], &[0.0]));
        let y = g.adain(f, mu, b, 0.0).unwrap();
        assert_eq!(g.value(y).data(), g.value(f).data());
    }

    #[test]
    fn adain_zero_scale_gives_constant_shift() {
        let mut g = Graph::new();
        let f = g.constant(t(&[2, 1, 3], &[0.3, -2.0, 5.0, 1.0, 1.5, -0.5]));
        let mu = g.constant(t(&[2], &[0.0, 0.0]));
        let b = g.constant(t(&[2], &[0.25, -4.0]));
        let y = g.adain(f, mu, b, 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[0.25, 0.25, 0.25, -4.0, -4.0, -4.0]);
    }

    #[test]
    fn adain_single_pixel_is_finite() {
        let mut g = Graph::new();
        let f = g.param(t(&[2, 1, 1], &[3.0, -1.0]));
        let mu = g.param(t(&[2], &[1.5, 2.0]));
        let b = g.param(t(&[2], &[0.5, 0.0]));
        let y = g.adain(f, mu, b, 1e-5).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.0]);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert!(grads.get(f).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn adain_shift_gradient_is_plane_size() {
        let mut g = Graph::new();
        let vals: Vec<f64> = (0..3 * 4 * 5).map(|i| (i as f64 * 0.37).sin()).collect();
        let f = g.param(t(&[3, 4, 5], &vals));
        let mu = g.param(t(&[3], &[0.5, -1.0, 2.0]));
        let b = g.param(t(&[3], &[0.0, 1.0, -1.0]));
        let y = g.adain(f, mu, b, 1e-5).unwrap();
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(b).unwrap(), &[20.0, 20.0, 20.0]);
    }

    #[test]
    fn l1_zero_residual_has_zero_gradient() {
        let mut g = Graph::new();
        let x = g.param(t(&[3], &[1.0, -2.0, 0.5]));
        let l = g.l1_mean(x, x).unwrap();
        assert_eq!(g.value(l).item(), Some(0.0));
        let grads = g.backward(l).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::scalar(2.0));
        let y = g.mul(x, x).unwrap();
        let d = g.detach(y);
        let z = g.mul(d, x).unwrap();
        let grads = g.backward(z).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[4.0]);
    }

    #[test]
    fn constants_do_not_record_ops() {
        let mut g = Graph::new();
        let a = g.constant(t(&[2], &[1.0, 2.0]));
        let b = g.constant(t(&[2], &[3.0, 4.0]));
        let c = g.add(a, b).unwrap();
        assert!(!g.requires_grad(c));
        let p = g.param(t(&[2], &[1.0, 1.0]));
        let d = g.mul(c, p).unwrap();
        let s = g.sum(d);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(p).unwrap(), &[4.0, 6.0]);
        assert!(!grads.contains(a));
    }

    #[test]
    fn softplus_is_stable_for_large_inputs() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[3], &[1000.0, -1000.0, 0.0]));
        let y = g.softplus(x);
        let v = g.value(y).data();
        assert_eq!(v[0], 1000.0);
        assert_eq!(v[1], 0.0);
        assert!((v[2] - std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn gather_picks_row_entries() {
        let mut g = Graph::new();
        let x = g.param(t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]));
        let y = g.gather(x, &[2, 0]).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 4.0]);
        let s = g.sum(y);
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert!(g.gather(x, &[3, 0]).is_err());
    }
}
