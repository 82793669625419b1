//! Uniform access to trainable parameters.
//!
//! Gradients are stored in a value of the same type as the parameters, so the
//! two visit in the same order and flatten to aligned vectors.

/// Receives `(name, dims, values)` for one parameter array.
pub type Visitor<'a> = dyn FnMut(&str, &[usize], &[f64]) + 'a;
pub type VisitorMut<'a> = dyn FnMut(&str, &[usize], &mut [f64]) + 'a;

pub trait Parameters {
    /// Calls `f(name, dims, values)` for every parameter array in a fixed order.
    fn visit(&self, f: &mut Visitor<'_>);

    fn visit_mut(&mut self, f: &mut VisitorMut<'_>);

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, v| n += v.len());
        n
    }

    fn flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        self.visit(&mut |_, _, v| out.extend_from_slice(v));
        out
    }

    fn set_flat(&mut self, values: &[f64]) {
        let mut off = 0;
        self.visit_mut(&mut |_, _, v| {
            v.copy_from_slice(&values[off..off + v.len()]);
            off += v.len();
        });
        assert_eq!(off, values.len(), "flat parameter length mismatch");
    }

    /// `self += alpha * other`, element by element.
    fn add_scaled(&mut self, alpha: f64, other: &dyn Parameters) {
        let g = other.flat();
        let mut off = 0;
        self.visit_mut(&mut |_, _, v| {
            let n = v.len();
            for (x, d) in v.iter_mut().zip(&g[off..off + n]) {
                *x += alpha * d;
            }
            off += n;
        });
        assert_eq!(off, g.len(), "gradient length mismatch");
    }

    fn scale(&mut self, alpha: f64) {
        self.visit_mut(&mut |_, _, v| v.iter_mut().for_each(|x| *x *= alpha));
    }
}

/// Plain gradient descent: `params -= lr * grads`.
pub fn sgd_step(params: &mut dyn Parameters, grads: &dyn Parameters, lr: f64) {
    params.add_scaled(-lr, grads);
}
