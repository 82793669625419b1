use crate::error::{Error, Result};

/// Dense `(batch, channels, height, width)` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    shape: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(shape: [usize; 4], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if data.len() != n {
            return Err(Error::dim(format!(
                "tensor shape {shape:?} holds {n} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("tensor data must be finite"));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self { shape, data: vec![0.0; shape.iter().product()] }
    }

    pub fn filled(shape: [usize; 4], value: f64) -> Self {
        Self { shape, data: vec![value; shape.iter().product()] }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
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

    #[inline]
    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.offset(n, c, y, x)]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor4 {
        Tensor4 { shape: self.shape, data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn add_assign(&mut self, other: &Tensor4) -> Result<()> {
        self.check_same(other, "add")?;
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn check_same(&self, other: &Tensor4, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(format!(
                "{op}: shapes {:?} and {:?} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Concatenates along channels.
    pub fn concat_channels(&self, other: &Tensor4) -> Result<Tensor4> {
        let [n, c1, h, w] = self.shape;
        let [n2, c2, h2, w2] = other.shape;
        if (n, h, w) != (n2, h2, w2) {
            return Err(Error::dim(format!(
                "concat: shapes {:?} and {:?} differ outside channels",
                self.shape, other.shape
            )));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * (c1 + c2) * plane);
        for b in 0..n {
            data.extend_from_slice(&self.data[b * c1 * plane..(b + 1) * c1 * plane]);
            data.extend_from_slice(&other.data[b * c2 * plane..(b + 1) * c2 * plane]);
        }
        Ok(Tensor4 { shape: [n, c1 + c2, h, w], data })
    }

    /// Splits channels into `[0, c)` and `[c, C)`.
    pub fn split_channels(&self, c: usize) -> (Tensor4, Tensor4) {
        let [n, ct, h, w] = self.shape;
        let plane = h * w;
        let mut a = Vec::with_capacity(n * c * plane);
        let mut b = Vec::with_capacity(n * (ct - c) * plane);
        for i in 0..n {
            let base = i * ct * plane;
            a.extend_from_slice(&self.data[base..base + c * plane]);
            b.extend_from_slice(&self.data[base + c * plane..base + ct * plane]);
        }
        (
            Tensor4 { shape: [n, c, h, w], data: a },
            Tensor4 { shape: [n, ct - c, h, w], data: b },
        )
    }

    /// Stacks tensors of identical shape `[1, C, H, W]` (or `[n, ..]`) along the batch axis.
    pub fn stack(items: &[Tensor4]) -> Result<Tensor4> {
        let Some(first) = items.first() else {
            return Err(Error::invalid("stack: no tensors"));
        };
        let [_, c, h, w] = first.shape;
        let mut n = 0;
        let mut data = Vec::new();
        for t in items {
            if t.shape[1..] != [c, h, w] {
                return Err(Error::dim(format!(
                    "stack: shapes {:?} and {:?} differ",
                    first.shape, t.shape
                )));
            }
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor4 { shape: [n, c, h, w], data })
    }

    /// Batch item `b` as a `[1, C, H, W]` tensor.
    pub fn item(&self, b: usize) -> Tensor4 {
        let [_, c, h, w] = self.shape;
        let len = c * h * w;
        Tensor4 { shape: [1, c, h, w], data: self.data[b * len..(b + 1) * len].to_vec() }
    }
}
