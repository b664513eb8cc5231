use crate::error::{Error, Result};

/// Element type of tensors. `f32` is the working precision; `f64` is the
/// verification mode used by gradient checks.
pub trait Scalar:
    num_traits::Float + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
    fn to_bits_u64(self) -> u64;
}

impl Scalar for f32 {
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    fn to_bits_u64(self) -> u64 {
        self.to_bits() as u64
    }
}

impl Scalar for f64 {
    fn of_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
    fn to_bits_u64(self) -> u64 {
        self.to_bits()
    }
}

/// Dense n-dimensional array. A scalar has an empty shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F: Scalar> {
    shape: Vec<usize>,
    data: Vec<F>,
    /// Marks the tensor as a differentiable leaf when fed to a graph.
    pub requires_grad: bool,
}

impl<F: Scalar> Tensor<F> {
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape {
                op: "tensor",
                detail: format!("shape {:?} wants {} values, got {}", shape, n, data.len()),
            });
        }
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape {
                op: "tensor",
                detail: format!("zero extent in shape {:?}", shape),
            });
        }
        Ok(Tensor {
            shape,
            data,
            requires_grad: false,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![F::zero(); n],
            requires_grad: false,
        }
    }

    pub fn full(shape: &[usize], v: F) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
            requires_grad: false,
        }
    }

    pub fn scalar(v: F) -> Self {
        Tensor {
            shape: vec![],
            data: vec![v],
            requires_grad: false,
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> F) -> Self {
        let n: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..n).map(|i| f(i)).collect(),
            requires_grad: false,
        }
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> F {
        debug_assert!(self.is_scalar());
        self.data[0]
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, op: &'static str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite { op })
        }
    }

    /// Bit-exact equality, the comparison used by determinism contracts.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.to_bits_u64() == b.to_bits_u64())
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Tensor<F> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
            requires_grad: false,
        }
    }

    /// Reinterpret with a new shape of the same total size.
    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape {
                op: "reshape",
                detail: format!("{:?} -> {:?}", self.shape, shape),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    /// Convert element type (used to move between working and verification
    /// precision in tests).
    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::of_f64(v.as_f64())).collect(),
            requires_grad: self.requires_grad,
        }
    }
}

/// Shape of `a op b` under the trailing-dimension broadcast rule, or an error.
pub fn broadcast_shape(a: &[usize], b: &[usize], op: &'static str) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0usize; n];
    for i in 0..n {
        let da = if i < n - a.len() { 1 } else { a[i - (n - a.len())] };
        let db = if i < n - b.len() { 1 } else { b[i - (n - b.len())] };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(Error::Shape {
                op,
                detail: format!("cannot broadcast {:?} with {:?}", a, b),
            });
        };
    }
    Ok(out)
}

/// Row-major strides with zeros on broadcast axes, padded to `out_rank`.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![0usize; out_shape.len()];
    let offset = out_shape.len() - shape.len();
    let mut acc = 1usize;
    for i in (0..shape.len()).rev() {
        strides[i + offset] = if shape[i] == 1 { 0 } else { acc };
        acc *= shape[i];
    }
    strides
}

pub fn binary_broadcast<F: Scalar>(
    a: &Tensor<F>,
    b: &Tensor<F>,
    op: &'static str,
    f: impl Fn(F, F) -> F,
) -> Result<Tensor<F>> {
    if a.shape == b.shape {
        let data = a
            .data
            .iter()
            .zip(b.data.iter())
            .map(|(&x, &y)| f(x, y))
            .collect();
        return Tensor::new(a.shape.clone(), data);
    }
    let out_shape = broadcast_shape(&a.shape, &b.shape, op)?;
    let sa = broadcast_strides(&a.shape, &out_shape);
    let sb = broadcast_strides(&b.shape, &out_shape);
    let n: usize = out_shape.iter().product();
    let mut data = Vec::with_capacity(n);
    let mut idx = vec![0usize; out_shape.len()];
    for _ in 0..n {
        let (mut ia, mut ib) = (0usize, 0usize);
        for (d, &i) in idx.iter().enumerate() {
            ia += i * sa[d];
            ib += i * sb[d];
        }
        data.push(f(a.data[ia], b.data[ib]));
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    Tensor::new(out_shape, data)
}

/// Sum `grad` down to `target_shape`, the adjoint of broadcasting.
pub fn reduce_to_shape<F: Scalar>(grad: &Tensor<F>, target_shape: &[usize]) -> Tensor<F> {
    if grad.shape() == target_shape {
        return grad.clone();
    }
    let out_shape = grad.shape().to_vec();
    let st = broadcast_strides(target_shape, &out_shape);
    let mut out = Tensor::<F>::zeros(target_shape);
    let mut idx = vec![0usize; out_shape.len()];
    for g in grad.data() {
        let mut it = 0usize;
        for (d, &i) in idx.iter().enumerate() {
            it += i * st[d];
        }
        out.data[it] = out.data[it] + *g;
        for d in (0..out_shape.len()).rev() {
            idx[d] += 1;
            if idx[d] < out_shape[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

// ---- elementwise kernels shared by the graph and the inference path ----

pub fn t_add<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    binary_broadcast(a, b, "add", |x, y| x + y)
}

pub fn t_sub<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    binary_broadcast(a, b, "sub", |x, y| x - y)
}

pub fn t_mul<F: Scalar>(a: &Tensor<F>, b: &Tensor<F>) -> Result<Tensor<F>> {
    binary_broadcast(a, b, "mul", |x, y| x * y)
}

pub fn t_scale<F: Scalar>(a: &Tensor<F>, c: F) -> Tensor<F> {
    a.map(|x| x * c)
}

pub fn t_leaky_relu<F: Scalar>(a: &Tensor<F>, slope: F) -> Tensor<F> {
    a.map(|x| if x >= F::zero() { x } else { x * slope })
}

pub fn t_square<F: Scalar>(a: &Tensor<F>) -> Tensor<F> {
    a.map(|x| x * x)
}

pub fn t_atanh<F: Scalar>(a: &Tensor<F>) -> Result<Tensor<F>> {
    let out = a.map(|x| x.atanh());
    out.check_finite("atanh")?;
    Ok(out)
}

pub fn t_exp<F: Scalar>(a: &Tensor<F>) -> Result<Tensor<F>> {
    let out = a.map(|x| x.exp());
    out.check_finite("exp")?;
    Ok(out)
}

pub fn t_ln<F: Scalar>(a: &Tensor<F>) -> Result<Tensor<F>> {
    let out = a.map(|x| x.ln());
    out.check_finite("log")?;
    Ok(out)
}

pub fn t_clamp<F: Scalar>(a: &Tensor<F>, lo: F, hi: F) -> Tensor<F> {
    a.map(|x| if x < lo { lo } else if x > hi { hi } else { x })
}

pub fn t_softplus<F: Scalar>(a: &Tensor<F>) -> Tensor<F> {
    let hi = F::of_f64(20.0);
    a.map(|x| {
        if x > hi {
            x
        } else if x < -hi {
            x.exp()
        } else {
            (F::one() + x.exp()).ln()
        }
    })
}

/// Sequential sum in index order (deterministic reduction).
pub fn t_sum<F: Scalar>(a: &Tensor<F>) -> F {
    let mut acc = F::zero();
    for &v in a.data() {
        acc = acc + v;
    }
    acc
}

pub fn t_mean<F: Scalar>(a: &Tensor<F>) -> F {
    t_sum(a) / F::of_f64(a.len() as f64)
}
