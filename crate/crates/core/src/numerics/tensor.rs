use rand::Rng;

use super::NumericsError;

/// Dense row-major `f64` array with an optional gradient accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self, NumericsError> {
        let expected: usize = shape.iter().product();
        if expected != values.len() {
            return Err(NumericsError::ValueCount {
                shape,
                len: values.len(),
            });
        }
        Ok(Self {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![0.0; n],
            grad: None,
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            values: vec![value; n],
            grad: None,
        }
    }

    /// A `1 × n` row vector.
    pub fn row(values: Vec<f64>) -> Self {
        Self {
            shape: vec![1, values.len()],
            values,
            grad: None,
        }
    }

    pub fn matrix(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self, NumericsError> {
        Self::new(vec![rows, cols], values)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(vec![n, n]);
        for i in 0..n {
            t.values[i * n + i] = 1.0;
        }
        t
    }

    /// Entries drawn uniformly from `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(shape: Vec<usize>, bound: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let values = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self {
            shape,
            values,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Rows and columns of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize), NumericsError> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(NumericsError::Rank {
                op: "dims2",
                expected: 2,
                shape: self.shape.clone(),
            }),
        }
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.shape[1] + c]
    }

    pub fn row_slice(&self, r: usize) -> &[f64] {
        let c = self.shape[1];
        &self.values[r * c..(r + 1) * c]
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> &mut Vec<f64> {
        let n = self.values.len();
        self.grad.get_or_insert_with(|| vec![0.0; n])
    }

    pub fn take_grad(&mut self) -> Option<Vec<f64>> {
        self.grad.take()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn matmul(&self, other: &Tensor) -> Result<Tensor, NumericsError> {
        let (m, k) = self.dims2()?;
        let (k2, n) = other.dims2()?;
        if k != k2 {
            return Err(NumericsError::shape("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; m * n];
        matmul_into(&self.values, &other.values, &mut out, m, k, n);
        Tensor::new(vec![m, n], out)
    }

    /// Concatenate rank-2 tensors along the column axis.
    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor, NumericsError> {
        let first = parts.first().ok_or(NumericsError::Empty { op: "concat" })?;
        let (rows, _) = first.dims2()?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (r, c) = p.dims2()?;
            if r != rows {
                return Err(NumericsError::shape("concat", &first.shape, &p.shape));
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&p.values[r * w..(r + 1) * w]);
            }
        }
        Tensor::new(vec![rows, total], out)
    }

    /// Inverse of [`Tensor::concat_cols`].
    pub fn split_cols(&self, widths: &[usize]) -> Result<Vec<Tensor>, NumericsError> {
        let (rows, cols) = self.dims2()?;
        if widths.iter().sum::<usize>() != cols {
            return Err(NumericsError::shape("split", &self.shape, widths));
        }
        let mut parts: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
        for r in 0..rows {
            let mut offset = r * cols;
            for (part, &w) in parts.iter_mut().zip(widths) {
                part.extend_from_slice(&self.values[offset..offset + w]);
                offset += w;
            }
        }
        parts
            .into_iter()
            .zip(widths)
            .map(|(v, &w)| Tensor::new(vec![rows, w], v))
            .collect()
    }
}

/// `out += a[m×k] · b[k×n]`.
pub(crate) fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out += a[m×k] · b[n×k]ᵀ`.
pub(crate) fn matmul_nt_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            out[i * n + j] += dot(a_row, b_row);
        }
    }
}

/// `out += a[k×m]ᵀ · b[k×n]`.
pub(crate) fn matmul_tn_into(a: &[f64], b: &[f64], out: &mut [f64], k: usize, m: usize, n: usize) {
    for p in 0..k {
        let b_row = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Max-shifted `log Σ exp(v_i)`.
pub fn log_sum_exp(values: &[f64]) -> Result<f64, NumericsError> {
    if values.is_empty() {
        return Err(NumericsError::Empty { op: "log_sum_exp" });
    }
    if values.len() == 1 {
        return Ok(values[0]);
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    let sum: f64 = values.iter().map(|v| (v - max).exp()).sum();
    Ok(max + sum.ln())
}

pub fn softmax(values: &[f64]) -> Result<Vec<f64>, NumericsError> {
    if values.is_empty() {
        return Err(NumericsError::Empty { op: "softmax" });
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Inverted-dropout mask: each entry is `0` with probability `p`, else `1 / (1 - p)`.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, p: f64, rng: &mut R) -> Result<Vec<f64>, NumericsError> {
    if !(0.0..1.0).contains(&p) {
        return Err(NumericsError::InvalidArgument(format!("dropout rate {p} outside [0, 1)")));
    }
    let keep = 1.0 / (1.0 - p);
    Ok((0..len)
        .map(|_| if p > 0.0 && rng.gen::<f64>() < p { 0.0 } else { keep })
        .collect())
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matmul_identity() {
        let a = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(a.matmul(&Tensor::identity(2)).unwrap(), a);
    }

    #[test]
    fn matmul_orthogonal_rows() {
        let a = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let b = Tensor::matrix(2, 1, vec![0.0, 5.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().values(), &[0.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Tensor::uniform(vec![3, 4], 2.0, &mut rng);
        let b = Tensor::uniform(vec![4, 2], 2.0, &mut rng);
        let c = a.matmul(&b).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut s = 0.0;
                for p in 0..4 {
                    s += a.get2(i, p) * b.get2(p, j);
                }
                assert!((c.get2(i, j) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matmul_reports_both_shapes() {
        let a = Tensor::zeros(vec![2, 3]);
        let b = Tensor::zeros(vec![2, 3]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
    }

    #[test]
    fn lse_cases() {
        assert!((log_sum_exp(&[0.0, 0.0]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(log_sum_exp(&[-7.25]).unwrap(), -7.25);
        let big = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        assert!((big - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert!(log_sum_exp(&[]).is_err());
    }

    #[test]
    fn softmax_uniform() {
        for p in softmax(&[0.0, 0.0, 0.0]).unwrap() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(sigmoid(0.0), 0.5);
    }

    #[test]
    fn dropout_mask_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(dropout_mask(10, 0.0, &mut rng).unwrap().iter().all(|&m| m == 1.0));
        assert!(dropout_mask(3, 1.0, &mut rng).is_err());
        assert!(dropout_mask(3, -0.1, &mut rng).is_err());
        let mask = dropout_mask(20_000, 0.5, &mut rng).unwrap();
        let kept = mask.iter().filter(|&&m| m > 0.0).count() as f64 / 20_000.0;
        assert!((kept - 0.5).abs() < 0.02);
        assert!(mask.iter().all(|&m| m == 0.0 || m == 2.0));
    }

    #[test]
    fn value_count_checked() {
        assert!(Tensor::new(vec![2, 2], vec![1.0]).is_err());
    }

    proptest! {
        #[test]
        fn lse_shift_invariant(v in proptest::collection::vec(-50.0f64..50.0, 1..12), c in -100.0f64..100.0) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let lhs = log_sum_exp(&shifted).unwrap();
            let rhs = log_sum_exp(&v).unwrap() + c;
            prop_assert!((lhs - rhs).abs() < 1e-10);
        }

        #[test]
        fn softmax_normalized_and_shift_invariant(v in proptest::collection::vec(-30.0f64..30.0, 1..12), c in -50.0f64..50.0) {
            let p = softmax(&v).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn concat_split_roundtrip(rows in 1usize..5, w1 in 1usize..5, w2 in 0usize..5, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = Tensor::uniform(vec![rows, w1], 3.0, &mut rng);
            let b = Tensor::uniform(vec![rows, w2], 3.0, &mut rng);
            let joined = Tensor::concat_cols(&[&a, &b]).unwrap();
            let parts = joined.split_cols(&[w1, w2]).unwrap();
            prop_assert_eq!(&parts[0], &a);
            prop_assert_eq!(&parts[1], &b);
        }
    }
}
