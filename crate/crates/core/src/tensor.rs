//! Dense row-major `f64` tensors and the handful of kernels the autodiff tape needs.

/// A dense, row-major tensor of 64-bit floats.
///
/// Rank-0 tensors (shape `[]`) hold a single scalar.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not match data length {}",
            data.len()
        );
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Size of the trailing axis (1 for scalars).
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    /// Number of rows when viewed as `[rows, last_dim]`.
    pub fn rows(&self) -> usize {
        let last = self.last_dim();
        if last == 0 {
            0
        } else {
            self.data.len() / last
        }
    }

    /// Row `i` of the `[rows, last_dim]` view.
    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.last_dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), self.data.len());
        self.shape = shape;
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.shape, other.shape, "elementwise shape mismatch");
        Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    /// Per-row maximum as a `[.., 1]` tensor.
    pub fn row_max(&self) -> Tensor {
        let d = self.last_dim();
        let mut shape = self.shape.clone();
        if let Some(last) = shape.last_mut() {
            *last = 1;
        }
        let data = self
            .data
            .chunks(d.max(1))
            .map(|r| r.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        Tensor::new(shape, data)
    }

    /// Index of the first maximal element in each row.
    pub fn row_argmax(&self) -> Vec<usize> {
        let d = self.last_dim();
        self.data
            .chunks(d.max(1))
            .map(|r| {
                let mut best = 0;
                for (j, &v) in r.iter().enumerate() {
                    if v > r[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

/// `op(a) · op(b)` for rank-2 operands, or a batched product for rank-3
/// operands sharing the leading batch axis. Transposes act on the last two axes.
pub fn matmul(a: &Tensor, b: &Tensor, ta: bool, tb: bool) -> Tensor {
    assert_eq!(a.rank(), b.rank(), "matmul rank mismatch");
    let (batch, ash, bsh) = match a.rank() {
        2 => (1, [a.shape[0], a.shape[1]], [b.shape[0], b.shape[1]]),
        3 => {
            assert_eq!(a.shape[0], b.shape[0], "matmul batch mismatch");
            (
                a.shape[0],
                [a.shape[1], a.shape[2]],
                [b.shape[1], b.shape[2]],
            )
        }
        r => panic!("matmul supports rank 2 or 3, got {r}"),
    };
    let (m, k) = if ta { (ash[1], ash[0]) } else { (ash[0], ash[1]) };
    let (k2, n) = if tb { (bsh[1], bsh[0]) } else { (bsh[0], bsh[1]) };
    assert_eq!(k, k2, "matmul inner dimension mismatch: {:?} x {:?}", a.shape, b.shape);

    let mut out = vec![0.0; batch * m * n];
    let a_stride = ash[0] * ash[1];
    let b_stride = bsh[0] * bsh[1];
    // Row/column strides of op(x) inside the row-major storage of x.
    let (rsa, csa) = if ta { (1, ash[1]) } else { (ash[1], 1) };
    let (rsb, csb) = if tb { (1, bsh[1]) } else { (bsh[1], 1) };
    if m > 0 && n > 0 {
        for bi in 0..batch {
            let ap = &a.data[bi * a_stride..(bi + 1) * a_stride];
            let bp = &b.data[bi * b_stride..(bi + 1) * b_stride];
            let cp = &mut out[bi * m * n..(bi + 1) * m * n];
            if k == 0 {
                continue;
            }
            // SAFETY: the slices cover exactly the strided ranges described
            // by (m, k, n) and the strides computed above.
            unsafe {
                matrixmultiply::dgemm(
                    m,
                    k,
                    n,
                    1.0,
                    ap.as_ptr(),
                    rsa as isize,
                    csa as isize,
                    bp.as_ptr(),
                    rsb as isize,
                    csb as isize,
                    0.0,
                    cp.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
    }
    let shape = if a.rank() == 2 {
        vec![m, n]
    } else {
        vec![batch, m, n]
    };
    Tensor::new(shape, out)
}

/// Reorders axes: output axis `i` is input axis `perm[i]`.
pub fn permute(a: &Tensor, perm: &[usize]) -> Tensor {
    let rank = a.rank();
    assert_eq!(perm.len(), rank);
    let in_shape = &a.shape;
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let total = a.data.len();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; rank];
    let mut offset = 0usize;
    for _ in 0..total {
        out.push(a.data[offset]);
        for ax in (0..rank).rev() {
            idx[ax] += 1;
            offset += strides[ax];
            if idx[ax] < out_shape[ax] {
                break;
            }
            offset -= strides[ax] * out_shape[ax];
            idx[ax] = 0;
        }
    }
    Tensor::new(out_shape, out)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity, `None` when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for l in 0..k {
                    c[i * n + j] += a[i * k + l] * b[l * n + j];
                }
            }
        }
        c
    }

    #[test]
    fn matmul_matches_naive_with_transposes() {
        let a = Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]);
        let b = Tensor::new(vec![3, 2], vec![7., 8., 9., 10., 11., 12.]);
        let c = matmul(&a, &b, false, false);
        assert_eq!(c.data(), naive(a.data(), b.data(), 2, 3, 2).as_slice());

        let at = permute(&a, &[1, 0]);
        let bt = permute(&b, &[1, 0]);
        assert_eq!(matmul(&at, &b, true, false), c);
        assert_eq!(matmul(&a, &bt, false, true), c);
        assert_eq!(matmul(&at, &bt, true, true), c);
    }

    #[test]
    fn batched_matmul() {
        let a = Tensor::new(vec![2, 1, 2], vec![1., 2., 3., 4.]);
        let b = Tensor::new(vec![2, 2, 1], vec![1., 1., 2., -1.]);
        let c = matmul(&a, &b, false, false);
        assert_eq!(c.shape(), &[2, 1, 1]);
        assert_eq!(c.data(), &[3., 2.]);
    }

    #[test]
    fn permute_roundtrip() {
        let data: Vec<f64> = (0..24).map(|x| x as f64).collect();
        let t = Tensor::new(vec![2, 3, 4], data);
        let p = permute(&t, &[2, 0, 1]);
        assert_eq!(p.shape(), &[4, 2, 3]);
        // p[i][j][k] = t[j][k][i]
        assert_eq!(p.data()[1 * 6 + 1 * 3 + 2], t.data()[1 * 12 + 2 * 4 + 1]);
        let back = permute(&p, &[1, 2, 0]);
        assert_eq!(back, t);
    }

    #[test]
    fn argmax_takes_first_tie() {
        let t = Tensor::new(vec![2, 3], vec![1., 3., 3., 0., 0., 0.]);
        assert_eq!(t.row_argmax(), vec![1, 0]);
    }
}
