use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{gemm, Scalar};

use super::tape::{GradBuf, Op, Tape, Var};
use super::value::Tensor;

impl<S: Scalar> Tape<S> {
    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    fn zip_map(&self, a: Var, b: Var, f: impl Fn(S, S) -> S) -> Tensor<S> {
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_parts(ta.shape().to_vec(), data)
    }

    fn map(&self, x: Var, f: impl Fn(S) -> S) -> Tensor<S> {
        let t = self.value(x);
        Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.zip_map(a, b, |x, y| x + y);
        self.push("add", out, &[a, b], Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.zip_map(a, b, |x, y| x - y);
        self.push("sub", out, &[a, b], Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.zip_map(a, b, |x, y| x * y);
        self.push("mul", out, &[a, b], Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: S) -> Result<Var> {
        self.check(x)?;
        let out = self.map(x, |v| v * c);
        self.push("scale", out, &[x], Op::Scale(x, c))
    }

    /// `x[b, c, ...] + bias[c]` for `x` of rank ≥ 2.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.check(x)?;
        self.check(bias)?;
        let (xs, bs) = (self.value(x).shape(), self.value(bias).shape());
        if xs.len() < 2 || bs != [xs[1]] {
            return Err(Error::shape("add_bias", format!("x {xs:?}, bias {bs:?}")));
        }
        let channels = xs[1];
        let inner: usize = xs[2..].iter().product();
        let b = self.value(bias).data();
        let mut out = self.value(x).clone();
        for (i, chunk) in out.data_mut().chunks_mut(inner).enumerate() {
            let add = b[i % channels];
            chunk.iter_mut().for_each(|v| *v += add);
        }
        self.push("add_bias", out, &[x, bias], Op::AddBias { x, bias })
    }

    /// ELU with unit alpha.
    pub fn elu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.map(x, |v| if v > S::zero() { v } else { v.exp_m1() });
        self.push("elu", out, &[x], Op::Elu(x))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.map(x, |v| if v > S::zero() { v } else { S::zero() });
        self.push("relu", out, &[x], Op::Relu(x))
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let out = self.map(x, |v| v * v);
        self.push("square", out, &[x], Op::Square(x))
    }

    /// Square root; negative inputs are a domain error. The derivative at 0 is
    /// infinite, so a zero input surfaces as a non-finite gradient on backward.
    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        if self.value(x).data().iter().any(|&v| v < S::zero()) {
            return Err(Error::domain("sqrt", "negative input"));
        }
        let out = self.map(x, |v| v.sqrt());
        self.push("sqrt", out, &[x], Op::Sqrt(x))
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        if self.value(x).data().iter().any(|&v| v <= S::zero()) {
            return Err(Error::domain("log", "non-positive input"));
        }
        let out = self.map(x, |v| v.ln());
        self.push("log", out, &[x], Op::Log(x))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let s = self.value(x).data().iter().copied().sum();
        self.push("sum", Tensor::scalar(s), &[x], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x);
        if t.numel() == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let s: S = t.data().iter().copied().sum();
        let m = s / S::of(t.numel() as f64);
        self.push("mean", Tensor::scalar(m), &[x], Op::Mean(x))
    }

    /// `[m×k] · [k×n] → [m×n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let mut out = vec![S::zero(); m * n];
        gemm(m, k, n, self.value(a).data(), false, self.value(b).data(), false, S::zero(), &mut out);
        self.push("matmul", Tensor::from_parts(vec![m, n], out), &[a, b], Op::MatMul(a, b))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        self.check(x)?;
        let out = self.value(x).clone().reshape(shape)?;
        self.push("reshape", out, &[x], Op::Reshape(x))
    }

    /// Collapses all axes after the first: `[B, ...] → [B, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let shape = self.value(x).shape();
        if shape.is_empty() {
            return Err(Error::shape("flatten", "scalar input"));
        }
        let rest = shape[1..].iter().product();
        let b = shape[0];
        self.reshape(x, &[b, rest])
    }

    /// Multiplies by a precomputed mask of `0` and `1/(1-p)` entries.
    pub fn dropout_with_mask(&mut self, x: Var, mask: Vec<S>) -> Result<Var> {
        self.check(x)?;
        if mask.len() != self.value(x).numel() {
            return Err(Error::shape(
                "dropout",
                format!("mask has {} entries for {} values", mask.len(), self.value(x).numel()),
            ));
        }
        let t = self.value(x);
        let data = t.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let out = Tensor::from_parts(t.shape().to_vec(), data);
        self.push("dropout", out, &[x], Op::Dropout { x, mask })
    }

    /// Inverted dropout in training mode; identity when `training` is false.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, training: bool, rng: &mut R) -> Result<Var> {
        self.check(x)?;
        if !training || p == 0.0 {
            return Ok(x);
        }
        let mask = dropout_mask(self.value(x).numel(), p, rng)?;
        self.dropout_with_mask(x, mask)
    }
}

/// Draws an inverted-dropout mask: each entry is `0` with probability `p`,
/// otherwise `1/(1-p)`.
pub fn dropout_mask<S: Scalar, R: Rng + ?Sized>(numel: usize, p: f64, rng: &mut R) -> Result<Vec<S>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::domain("dropout", format!("p = {p} outside [0, 1)")));
    }
    let keep = S::of(1.0 / (1.0 - p));
    Ok((0..numel)
        .map(|_| if rng.gen::<f64>() < p { S::zero() } else { keep })
        .collect())
}

pub(super) fn add_bias_backward<S: Scalar>(x: Var, bias: Var, g: &[S], buf: &mut GradBuf<'_, S>) {
    if buf.wants(x) {
        buf.add(x, g.to_vec());
    }
    if buf.wants(bias) {
        let shape = buf.value(x).shape();
        let channels = shape[1];
        let inner: usize = shape[2..].iter().product();
        let mut db = vec![S::zero(); channels];
        for (i, chunk) in g.chunks(inner).enumerate() {
            db[i % channels] += chunk.iter().copied().sum();
        }
        buf.add(bias, db);
    }
}

pub(super) fn matmul_backward<S: Scalar>(a: Var, b: Var, g: &[S], buf: &mut GradBuf<'_, S>) {
    let (av, bv) = (buf.value(a), buf.value(b));
    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
    if buf.wants(a) {
        let mut da = vec![S::zero(); m * k];
        gemm(m, n, k, g, false, bv.data(), true, S::zero(), &mut da);
        buf.add(a, da);
    }
    if buf.wants(b) {
        let mut db = vec![S::zero(); k * n];
        gemm(k, m, n, av.data(), true, g, false, S::zero(), &mut db);
        buf.add(b, db);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn leaf(tape: &mut Tape<f64>, shape: &[usize], data: &[f64]) -> Var {
        tape.leaf(Tensor::from_f64(shape, data).unwrap(), true).unwrap()
    }

    #[test]
    fn identity_matmul() {
        let mut tape = Tape::new();
        let i = leaf(&mut tape, &[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let p = tape.matmul(i, i).unwrap();
        assert_eq!(tape.value(p).data(), &[1.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn hand_summed_matmul() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let b = leaf(&mut tape, &[2, 1], &[1.0, 1.0]);
        let p = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(p).shape(), &[2, 1]);
        assert_eq!(tape.value(p).data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_rejects_inner_mismatch() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[2, 3], &[0.0; 6]);
        let b = leaf(&mut tape, &[2, 2], &[0.0; 4]);
        assert!(matches!(tape.matmul(a, b), Err(Error::Shape { .. })));
    }

    #[test]
    fn sum_of_matmul_gradient_is_ones_times_b_transpose() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, &[2, 3], &[1.0, -2.0, 0.5, 3.0, 1.0, -1.0]);
        let b = leaf(&mut tape, &[3, 2], &[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        let p = tape.matmul(a, b).unwrap();
        let s = tape.sum(p).unwrap();
        tape.backward(s).unwrap();
        // row sums of B, repeated for each row of A
        let want = [0.3, 0.7, 1.1, 0.3, 0.7, 1.1];
        for (g, w) in tape.grad(a).unwrap().data().iter().zip(want) {
            assert!((g - w).abs() < 1e-15);
        }
    }

    #[test]
    fn elu_of_zero_is_zero() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[3], &[0.0, -1.0, 2.0]);
        let y = tape.elu(x).unwrap();
        let v = tape.value(y).data();
        assert_eq!(v[0], 0.0);
        assert!((v[1] - ((-1.0f64).exp() - 1.0)).abs() < 1e-15);
        assert_eq!(v[2], 2.0);
    }

    #[test]
    fn mean_and_its_gradient() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[3], &[1.0, 2.0, 3.0]);
        let m = tape.mean(x).unwrap();
        assert_eq!(tape.value(m).item(), Some(2.0));
        tape.backward(m).unwrap();
        for g in tape.grad(x).unwrap().data() {
            assert!((g - 1.0 / 3.0).abs() < 1e-16);
        }
    }

    #[test]
    fn dropout_identity_cases() {
        let mut rng = stream_rng(0, Stream::Dropout, 0, 0);
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[4], &[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(tape.dropout(x, 0.0, true, &mut rng).unwrap(), x);
        assert_eq!(tape.dropout(x, 0.5, false, &mut rng).unwrap(), x);
        let y = tape.dropout(x, 0.5, true, &mut rng).unwrap();
        for (&o, &i) in tape.value(y).data().iter().zip(tape.value(x).data()) {
            assert!(o == 0.0 || o == 2.0 * i);
        }
        assert!(tape.dropout(x, 1.0, true, &mut rng).is_err());
    }

    #[test]
    fn domain_errors() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2], &[1.0, -1.0]);
        assert!(matches!(tape.sqrt(x), Err(Error::Domain { .. })));
        let z = leaf(&mut tape, &[1], &[0.0]);
        assert!(matches!(tape.log(z), Err(Error::Domain { .. })));
    }

    #[test]
    fn add_bias_broadcasts_over_channels() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, &[2, 2, 2], &[0.0; 8]);
        let b = leaf(&mut tape, &[2], &[1.0, -1.0]);
        let y = tape.add_bias(x, b).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, -1.0]);
        let s = tape.sum(y).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(b).unwrap().data(), &[4.0, 4.0]);
    }
}
