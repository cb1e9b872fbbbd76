//! Dense row-major tensors (rank ≤ 3) and the handful of kernels the
//! network is assembled from: zero-padded 1D convolution over the sequence
//! axis, affine maps and softmax.

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    /// Checked constructor: shape/length agreement, rank ≤ 3, finite values.
    pub fn new(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let t = Self::from_parts(shape, data)?;
        if let Some(i) = t.data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite value {} at flat index {i}",
                t.data[i]
            )));
        }
        Ok(t)
    }

    /// Like [`Tensor::new`] without the finiteness scan.
    pub fn from_parts(shape: Vec<usize>, data: Vec<F>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::Dimension(format!(
                "rank must be 1..=3, got shape {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {n} values but {} were given",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, F::zero())
    }

    pub fn filled(shape: &[usize], value: F) -> Self {
        assert!(!shape.is_empty() && shape.len() <= 3, "rank must be 1..=3");
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> F) -> Self {
        let mut t = Self::zeros(shape);
        for (i, x) in t.data.iter_mut().enumerate() {
            *x = f(i);
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::Dimension(format!(
                "expected a rank-3 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [a, b] => Ok((a, b)),
            _ => Err(Error::Dimension(format!(
                "expected a rank-2 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(F, F) -> F) -> Result<Self> {
        self.expect_same_shape(other)?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, k: F) -> Self {
        self.map(|x| x * k)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| G::lit(x.to_f64_lossy())).collect(),
        }
    }

    pub fn expect_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "shape {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(())
    }
}

/// Geometry of a 1D convolution over the sequence axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel: usize,
    pub padding: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn same(kernel: usize) -> Self {
        ConvGeometry {
            kernel,
            padding: kernel / 2,
            stride: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel == 0 {
            return Err(Error::Config("kernel size must be ≥ 1".into()));
        }
        if self.stride == 0 {
            return Err(Error::Config("stride must be ≥ 1".into()));
        }
        if self.padding >= self.kernel {
            return Err(Error::Config(format!(
                "padding {} must be smaller than kernel size {}",
                self.padding, self.kernel
            )));
        }
        Ok(())
    }

    pub fn output_len(&self, len: usize) -> Result<usize> {
        let padded = len + 2 * self.padding;
        if self.kernel > padded {
            return Err(Error::Dimension(format!(
                "kernel {} longer than padded sequence {padded}",
                self.kernel
            )));
        }
        Ok((padded - self.kernel) / self.stride + 1)
    }

    /// Input position read by output position `j` at tap `m`, if in range.
    #[inline]
    fn tap(&self, j: usize, m: usize, len: usize) -> Option<usize> {
        let p = (j * self.stride + m).checked_sub(self.padding)?;
        (p < len).then_some(p)
    }
}

/// Kernels reordered to `[K][Cin][Cout]` so the innermost loops run over a
/// contiguous output-channel row.
fn taps_major<F: Real>(kernels: &[F], cout: usize, cin: usize, k: usize) -> Vec<F> {
    let mut out = vec![F::zero(); kernels.len()];
    for o in 0..cout {
        for l in 0..cin {
            for m in 0..k {
                out[(m * cin + l) * cout + o] = kernels[(o * cin + l) * k + m];
            }
        }
    }
    out
}

fn check_conv_shapes<F: Real>(
    input: &Tensor<F>,
    kernels: &Tensor<F>,
    bias: Option<&Tensor<F>>,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (b, r, cin) = input.dims3()?;
    let (cout, kcin, k) = kernels.dims3()?;
    if kcin != cin {
        return Err(Error::Dimension(format!(
            "kernel expects {kcin} input channels, input has {cin}"
        )));
    }
    if let Some(bias) = bias {
        if bias.shape() != [cout] {
            return Err(Error::Dimension(format!(
                "bias shape {:?}, expected [{cout}]",
                bias.shape()
            )));
        }
    }
    Ok((b, r, cin, cout, k))
}

/// 1D convolution over the sequence axis of a `B×R×Cin` tensor with
/// `Cout×Cin×K` kernels. Out-of-range taps read zero. Zero input entries are
/// skipped, which makes spike inputs cheap.
pub fn conv1d<F: Real>(
    input: &Tensor<F>,
    kernels: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    geom: ConvGeometry,
) -> Result<Tensor<F>> {
    geom.validate()?;
    let (b, r, cin, cout, k) = check_conv_shapes(input, kernels, bias)?;
    if k != geom.kernel {
        return Err(Error::Dimension(format!(
            "kernel tensor has width {k}, geometry says {}",
            geom.kernel
        )));
    }
    let r_out = geom.output_len(r)?;
    let wt = taps_major(kernels.data(), cout, cin, k);
    let x = input.data();
    let mut out = vec![F::zero(); b * r_out * cout];
    for bi in 0..b {
        for j in 0..r_out {
            let row = &mut out[(bi * r_out + j) * cout..(bi * r_out + j + 1) * cout];
            if let Some(bias) = bias {
                row.copy_from_slice(bias.data());
            }
            // channel-major, tap-minor: the same summation order as the
            // textbook double sum, so results are reproducible bit for bit
            for l in 0..cin {
                for m in 0..k {
                    let Some(p) = geom.tap(j, m, r) else { continue };
                    let xv = x[(bi * r + p) * cin + l];
                    if xv == F::zero() {
                        continue;
                    }
                    let wrow = &wt[(m * cin + l) * cout..(m * cin + l + 1) * cout];
                    for (o, &w) in row.iter_mut().zip(wrow) {
                        *o += xv * w;
                    }
                }
            }
        }
    }
    Tensor::from_parts(vec![b, r_out, cout], out)
}

/// `conv1d` with the length-preserving geometry used throughout the
/// network: padding ⌊K/2⌋, stride 1.
pub fn conv1d_same<F: Real>(
    input: &Tensor<F>,
    kernels: &Tensor<F>,
    bias: &Tensor<F>,
    padding: usize,
    stride: usize,
) -> Result<Tensor<F>> {
    let k = kernels.dims3()?.2;
    conv1d(
        input,
        kernels,
        Some(bias),
        ConvGeometry {
            kernel: k,
            padding,
            stride,
        },
    )
}

/// Gradient of a convolution with respect to its input: the transposed map
/// applied to `grad_out` (`B×R'×Cout`), producing `B×R×Cin`.
pub fn conv1d_input_grad<F: Real>(
    grad_out: &Tensor<F>,
    kernels: &Tensor<F>,
    input_len: usize,
    geom: ConvGeometry,
) -> Result<Tensor<F>> {
    let (b, r_out, cout) = grad_out.dims3()?;
    let (kcout, cin, k) = kernels.dims3()?;
    if kcout != cout || geom.output_len(input_len)? != r_out {
        return Err(Error::Dimension(
            "gradient does not match convolution output".into(),
        ));
    }
    let wt = taps_major(kernels.data(), cout, cin, k);
    let g = grad_out.data();
    let mut out = vec![F::zero(); b * input_len * cin];
    for bi in 0..b {
        for j in 0..r_out {
            let grow = &g[(bi * r_out + j) * cout..(bi * r_out + j + 1) * cout];
            if grow.iter().all(|&v| v == F::zero()) {
                continue;
            }
            for m in 0..k {
                let Some(p) = geom.tap(j, m, input_len) else { continue };
                let dst = &mut out[(bi * input_len + p) * cin..(bi * input_len + p + 1) * cin];
                for (l, d) in dst.iter_mut().enumerate() {
                    let wrow = &wt[(m * cin + l) * cout..(m * cin + l + 1) * cout];
                    let mut acc = F::zero();
                    for (&gv, &w) in grow.iter().zip(wrow) {
                        acc += gv * w;
                    }
                    *d += acc;
                }
            }
        }
    }
    Tensor::from_parts(vec![b, input_len, cin], out)
}

/// Accumulates the kernel gradient `Σ_{b,j} grad_out[b,j,k] · input[b,tap,l]`
/// into `acc` (`Cout×Cin×K`), scaled by `scale`.
pub fn conv1d_kernel_grad_acc<F: Real>(
    acc: &mut Tensor<F>,
    input: &Tensor<F>,
    grad_out: &Tensor<F>,
    geom: ConvGeometry,
    scale: F,
) -> Result<()> {
    let (b, r, cin) = input.dims3()?;
    let (gb, r_out, cout) = grad_out.dims3()?;
    let (acout, acin, k) = acc.dims3()?;
    if gb != b || acout != cout || acin != cin || geom.output_len(r)? != r_out {
        return Err(Error::Dimension(
            "kernel gradient operands disagree".into(),
        ));
    }
    let x = input.data();
    let g = grad_out.data();
    let mut wt = vec![F::zero(); cout * cin * k];
    for bi in 0..b {
        for j in 0..r_out {
            let grow = &g[(bi * r_out + j) * cout..(bi * r_out + j + 1) * cout];
            for m in 0..k {
                let Some(p) = geom.tap(j, m, r) else { continue };
                let xin = &x[(bi * r + p) * cin..(bi * r + p + 1) * cin];
                for (l, &xv) in xin.iter().enumerate() {
                    if xv == F::zero() {
                        continue;
                    }
                    let dst = &mut wt[(m * cin + l) * cout..(m * cin + l + 1) * cout];
                    for (d, &gv) in dst.iter_mut().zip(grow) {
                        *d += xv * gv;
                    }
                }
            }
        }
    }
    let a = acc.data_mut();
    for o in 0..cout {
        for l in 0..cin {
            for m in 0..k {
                a[(o * cin + l) * k + m] += scale * wt[(m * cin + l) * cout + o];
            }
        }
    }
    Ok(())
}

/// `weight · input + bias` for a single vector.
pub fn affine<F: Real>(input: &Tensor<F>, weight: &Tensor<F>, bias: &Tensor<F>) -> Result<Tensor<F>> {
    let (u, u_prev) = weight.dims2()?;
    if input.shape() != [u_prev] || bias.shape() != [u] {
        return Err(Error::Dimension(format!(
            "affine: weight {:?}, input {:?}, bias {:?}",
            weight.shape(),
            input.shape(),
            bias.shape()
        )));
    }
    let mut out = bias.data().to_vec();
    matvec_acc(weight.data(), input.data(), &mut out);
    Tensor::from_parts(vec![u], out)
}

/// `out[u] += Σ_v w[u, v] · x[v]` with `w` row-major `out.len() × x.len()`.
#[inline]
pub(crate) fn matvec_acc<F: Real>(w: &[F], x: &[F], out: &mut [F]) {
    let n = x.len();
    for (o, wrow) in out.iter_mut().zip(w.chunks_exact(n)) {
        let mut acc = F::zero();
        for (&a, &b) in wrow.iter().zip(x) {
            acc += a * b;
        }
        *o += acc;
    }
}

/// Applies the same affine map to every token of a `B×R×U_prev` tensor.
pub fn affine_tokens<F: Real>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    bias: &Tensor<F>,
) -> Result<Tensor<F>> {
    let (b, r, u_prev) = input.dims3()?;
    let (u, wu_prev) = weight.dims2()?;
    if wu_prev != u_prev || bias.shape() != [u] {
        return Err(Error::Dimension(format!(
            "affine: weight {:?}, input {:?}, bias {:?}",
            weight.shape(),
            input.shape(),
            bias.shape()
        )));
    }
    let mut out = Vec::with_capacity(b * r * u);
    for x in input.data().chunks_exact(u_prev) {
        let start = out.len();
        out.extend_from_slice(bias.data());
        matvec_acc(weight.data(), x, &mut out[start..]);
    }
    Tensor::from_parts(vec![b, r, u], out)
}

/// Numerically stable softmax of one logit vector.
pub fn softmax_slice<F: Real>(logits: &[F], out: &mut [F]) {
    let max = logits
        .iter()
        .copied()
        .fold(F::neg_infinity(), |a, b| a.max(b));
    let mut total = F::zero();
    for (o, &z) in out.iter_mut().zip(logits) {
        *o = (z - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o = *o / total;
    }
}

pub fn softmax<F: Real>(logits: &Tensor<F>) -> Result<Tensor<F>> {
    if logits.shape().len() != 1 {
        return Err(Error::Dimension(format!(
            "softmax expects a vector, got {:?}",
            logits.shape()
        )));
    }
    if logits.data().iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("softmax of non-finite logits".into()));
    }
    let mut out = vec![F::zero(); logits.len()];
    softmax_slice(logits.data(), &mut out);
    Tensor::from_parts(logits.shape().to_vec(), out)
}

/// Softmax along the last axis of any tensor.
pub fn softmax_last<F: Real>(logits: &Tensor<F>) -> Tensor<F> {
    let n = *logits.shape().last().expect("rank ≥ 1");
    let mut out = vec![F::zero(); logits.len()];
    for (src, dst) in logits.data().chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        softmax_slice(src, dst);
    }
    Tensor {
        shape: logits.shape().to_vec(),
        data: out,
    }
}
