//! Dense n-dimensional tensor of 64-bit reals, row-major.

use crate::error::{Error, Result};

/// Dense real tensor with shape metadata; the universal value carrier.
///
/// Invariants: `product(shape) == data.len()` and every stored value is
/// finite after any public operation.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

fn check_finite(data: &[f64], what: &str) -> Result<()> {
    if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "{what}: element {pos} is {}",
            data[pos]
        )));
    }
    Ok(())
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                len,
                data.len()
            )));
        }
        check_finite(&data, "from_vec")?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Result<Self> {
        let len: usize = shape.iter().product();
        let data: Vec<f64> = (0..len).map(&mut f).collect();
        check_finite(&data, "from_fn")?;
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    /// n-by-n identity matrix.
    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
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

    /// Reinterprets the tensor with a new shape of the same total size.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    fn expect_matrix(&self, what: &str) -> Result<(usize, usize)> {
        if self.rank() != 2 {
            return Err(Error::Shape(format!(
                "{what}: expected a matrix, got shape {:?}",
                self.shape
            )));
        }
        Ok((self.shape[0], self.shape[1]))
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    #[inline]
    pub fn get2(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.shape[1] + j]
    }

    #[inline]
    pub fn set2(&mut self, i: usize, j: usize, v: f64) {
        let cols = self.shape[1];
        self.data[i * cols + j] = v;
    }

    /// Matrix transpose.
    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.expect_matrix("transpose")?;
        let mut out = Tensor::zeros(&[c, r]);
        for i in 0..r {
            for j in 0..c {
                out.data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(out)
    }

    /// Dense matrix product.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (ar, ac) = self.expect_matrix("matmul lhs")?;
        let (br, bc) = other.expect_matrix("matmul rhs")?;
        if ac != br {
            return Err(Error::Shape(format!(
                "matmul: {ar}x{ac} * {br}x{bc} does not conform"
            )));
        }
        let mut out = Tensor::zeros(&[ar, bc]);
        for i in 0..ar {
            for kk in 0..ac {
                let a = self.data[i * ac + kk];
                if a == 0.0 {
                    continue;
                }
                let brow = &other.data[kk * bc..(kk + 1) * bc];
                let orow = &mut out.data[i * bc..(i + 1) * bc];
                for j in 0..bc {
                    orow[j] += a * brow[j];
                }
            }
        }
        check_finite(&out.data, "matmul")?;
        Ok(out)
    }

    /// Matrix-vector product.
    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let (r, c) = self.expect_matrix("matvec")?;
        if c != x.len() {
            return Err(Error::Shape(format!(
                "matvec: {r}x{c} * vector of length {}",
                x.len()
            )));
        }
        let mut out = vec![0.0; r];
        for i in 0..r {
            let row = &self.data[i * c..(i + 1) * c];
            let mut acc = 0.0;
            for j in 0..c {
                acc += row[j] * x[j];
            }
            out[i] = acc;
        }
        check_finite(&out, "matvec")?;
        Ok(out)
    }

    /// Elementwise sum.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "add: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        check_finite(&data, "add")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Elementwise difference.
    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "sub: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        check_finite(&data, "sub")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Elementwise product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "mul: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        let data: Vec<f64> = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a * b)
            .collect();
        check_finite(&data, "mul")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// Scalar multiple.
    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let data: Vec<f64> = self.data.iter().map(|a| a * c).collect();
        check_finite(&data, "scale")?;
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }
}

/// Outer product of two vectors.
pub fn outer(a: &[f64], b: &[f64]) -> Tensor {
    let mut t = Tensor::zeros(&[a.len(), b.len()]);
    for (i, &ai) in a.iter().enumerate() {
        for (j, &bj) in b.iter().enumerate() {
            t.data[i * b.len() + j] = ai * bj;
        }
    }
    t
}

/// Dot product with a fixed left-to-right summation order.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}
