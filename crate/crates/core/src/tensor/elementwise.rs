use super::{numel, resolve_axis, split_at_axis, Tensor};
use crate::error::{Error, Result};

/// How a binary operation lines its operands up.
#[derive(Clone, Debug)]
enum Layout {
    Same,
    /// rhs shape is a trailing suffix of lhs (or rhs is a scalar): rhs repeats.
    RhsTiled,
    /// lhs shape is a trailing suffix of rhs: lhs repeats.
    LhsTiled,
    /// general numpy-style broadcasting.
    General {
        out: Vec<usize>,
        a_strides: Vec<usize>,
        b_strides: Vec<usize>,
    },
}

fn is_suffix(small: &[usize], big: &[usize]) -> bool {
    numel(small) == 1 || (small.len() <= big.len() && big[big.len() - small.len()..] == *small)
}

pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0; n];
    for i in 0..n {
        let da = if i + a.len() >= n { a[i + a.len() - n] } else { 1 };
        let db = if i + b.len() >= n { b[i + b.len() - n] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Strides of `shape` viewed inside `out`, zero on broadcast axes.
fn broadcast_strides(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let mut strides = vec![0; out.len()];
    let off = out.len() - shape.len();
    let mut s = 1;
    for i in (0..shape.len()).rev() {
        if shape[i] != 1 {
            strides[i + off] = s;
        }
        s *= shape[i];
    }
    strides
}

fn layout(op: &'static str, a: &[usize], b: &[usize]) -> Result<Layout> {
    if a == b {
        Ok(Layout::Same)
    } else if is_suffix(b, a) {
        Ok(Layout::RhsTiled)
    } else if is_suffix(a, b) {
        Ok(Layout::LhsTiled)
    } else {
        let out = broadcast_shape(a, b).ok_or_else(|| Error::shape(op, a, b))?;
        Ok(Layout::General {
            a_strides: broadcast_strides(a, &out),
            b_strides: broadcast_strides(b, &out),
            out,
        })
    }
}

/// Visits every output element with the flat offsets of both operands.
fn for_each_general(out: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let n = out.len();
    let mut idx = vec![0usize; n];
    let (mut oa, mut ob) = (0usize, 0usize);
    for o in 0..numel(out) {
        f(o, oa, ob);
        for d in (0..n).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out[d] {
                break;
            }
            oa -= sa[d] * out[d];
            ob -= sb[d] * out[d];
            idx[d] = 0;
        }
    }
}

/// Sums a gradient of the broadcast output shape back down to `target` (a suffix).
fn reduce_tiled(grad: &[f64], target_len: usize) -> Vec<f64> {
    let mut out = vec![0.0; target_len];
    for chunk in grad.chunks_exact(target_len) {
        out.iter_mut().zip(chunk).for_each(|(o, g)| *o += g);
    }
    out
}

impl Tensor {
    fn binary(
        &self,
        other: &Tensor,
        op: &'static str,
        f: fn(f64, f64) -> f64,
        // (grad_out, a, b) -> (da, db) elementwise partials
        da: fn(f64, f64, f64) -> f64,
        db: fn(f64, f64, f64) -> f64,
    ) -> Result<Tensor> {
        let lay = layout(op, self.shape(), other.shape())?;
        let (a, b) = (self.data(), other.data());
        let (shape, data) = match &lay {
            Layout::Same => (
                self.shape().to_vec(),
                a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect(),
            ),
            Layout::RhsTiled => {
                let mut out = Vec::with_capacity(a.len());
                for chunk in a.chunks_exact(b.len()) {
                    out.extend(chunk.iter().zip(b).map(|(&x, &y)| f(x, y)));
                }
                (self.shape().to_vec(), out)
            }
            Layout::LhsTiled => {
                let mut out = Vec::with_capacity(b.len());
                for chunk in b.chunks_exact(a.len()) {
                    out.extend(a.iter().zip(chunk).map(|(&x, &y)| f(x, y)));
                }
                (other.shape().to_vec(), out)
            }
            Layout::General {
                out,
                a_strides,
                b_strides,
            } => {
                let mut data = vec![0.0; numel(out)];
                for_each_general(out, a_strides, b_strides, |o, ia, ib| data[o] = f(a[ia], b[ib]));
                (out.clone(), data)
            }
        };
        let (ta, tb) = (self.clone(), other.clone());
        Tensor::from_op(op, shape, data, &[self, other], move || {
            Box::new(move |g| {
                let (a, b) = (ta.data(), tb.data());
                let (na, nb) = (a.len(), b.len());
                let want_a = ta.requires_grad();
                let want_b = tb.requires_grad();
                let mut ga = want_a.then(|| vec![0.0; na]);
                let mut gb = want_b.then(|| vec![0.0; nb]);
                match &lay {
                    Layout::Same => {
                        for i in 0..na {
                            if let Some(ga) = ga.as_mut() {
                                ga[i] = da(g[i], a[i], b[i]);
                            }
                            if let Some(gb) = gb.as_mut() {
                                gb[i] = db(g[i], a[i], b[i]);
                            }
                        }
                    }
                    Layout::RhsTiled => {
                        for (o, &go) in g.iter().enumerate() {
                            let j = o % nb;
                            if let Some(ga) = ga.as_mut() {
                                ga[o] = da(go, a[o], b[j]);
                            }
                            if let Some(gb) = gb.as_mut() {
                                gb[j] += db(go, a[o], b[j]);
                            }
                        }
                    }
                    Layout::LhsTiled => {
                        for (o, &go) in g.iter().enumerate() {
                            let i = o % na;
                            if let Some(ga) = ga.as_mut() {
                                ga[i] += da(go, a[i], b[o]);
                            }
                            if let Some(gb) = gb.as_mut() {
                                gb[o] = db(go, a[i], b[o]);
                            }
                        }
                    }
                    Layout::General {
                        out,
                        a_strides,
                        b_strides,
                    } => for_each_general(out, a_strides, b_strides, |o, ia, ib| {
                        if let Some(ga) = ga.as_mut() {
                            ga[ia] += da(g[o], a[ia], b[ib]);
                        }
                        if let Some(gb) = gb.as_mut() {
                            gb[ib] += db(g[o], a[ia], b[ib]);
                        }
                    }),
                }
                vec![ga, gb]
            })
        })
    }

    /// Elementwise sum with numpy-style broadcasting.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        // fast path for the ubiquitous same-shape residual and suffix bias
        match layout("add", self.shape(), other.shape())? {
            Layout::RhsTiled | Layout::Same => self.add_tiled(other),
            _ => self.binary(other, "add", |x, y| x + y, |g, _, _| g, |g, _, _| g),
        }
    }

    fn add_tiled(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.data(), other.data());
        let mut data = a.to_vec();
        for chunk in data.chunks_exact_mut(b.len()) {
            chunk.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        let (need_a, need_b, nb) = (self.requires_grad(), other.requires_grad(), b.len());
        Tensor::from_op("add", self.shape().to_vec(), data, &[self, other], move || {
            Box::new(move |g| {
                let ga = need_a.then(|| g.to_vec());
                let gb = need_b.then(|| reduce_tiled(g, nb));
                vec![ga, gb]
            })
        })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "sub", |x, y| x - y, |g, _, _| g, |g, _, _| -g)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "mul", |x, y| x * y, |g, _, y| g * y, |g, x, _| g * x)
    }

    pub fn div(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(
            other,
            "div",
            |x, y| x / y,
            |g, _, y| g / y,
            |g, x, y| -g * x / (y * y),
        )
    }

    fn unary(&self, op: &'static str, f: impl Fn(f64) -> f64, df: fn(f64, f64) -> f64) -> Result<Tensor> {
        let data: Vec<f64> = self.data().iter().map(|&x| f(x)).collect();
        let x = self.clone();
        Tensor::from_op(op, self.shape().to_vec(), data, &[self], move || {
            Box::new(move |g| {
                vec![Some(
                    g.iter().zip(x.data()).map(|(&g, &x)| df(g, x)).collect(),
                )]
            })
        })
    }

    pub fn scale(&self, s: f64) -> Result<Tensor> {
        let data: Vec<f64> = self.data().iter().map(|&x| x * s).collect();
        Tensor::from_op("scale", self.shape().to_vec(), data, &[self], move || {
            Box::new(move |g| vec![Some(g.iter().map(|&g| g * s).collect())])
        })
    }

    pub fn add_scalar(&self, s: f64) -> Result<Tensor> {
        self.unary("add_scalar", move |x| x + s, |g, _| g)
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.scale(-1.0)
    }

    /// `max(x, 0)`; the derivative at 0 is taken as 0.
    pub fn relu(&self) -> Result<Tensor> {
        self.unary("relu", |x| x.max(0.0), |g, x| if x > 0.0 { g } else { 0.0 })
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.unary("exp", f64::exp, |g, x| g * x.exp())
    }

    pub fn square(&self) -> Result<Tensor> {
        self.unary("square", |x| x * x, |g, x| 2.0 * g * x)
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Result<Tensor> {
        let s = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op("sum", vec![1], vec![s], &[self], move || {
            Box::new(move |g| vec![Some(vec![g[0]; n])])
        })
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&self) -> Result<Tensor> {
        self.sum()?.scale(1.0 / self.numel() as f64)
    }

    /// Sum over one axis, which is removed (a 1-d input gives shape `[1]`).
    pub fn sum_axis(&self, axis: isize) -> Result<Tensor> {
        let ax = resolve_axis("sum_axis", axis, self.ndim())?;
        let (outer, len, inner) = split_at_axis(self.shape(), ax);
        let x = self.data();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            let dst = &mut out[o * inner..(o + 1) * inner];
            for l in 0..len {
                let src = &x[(o * len + l) * inner..(o * len + l + 1) * inner];
                dst.iter_mut().zip(src).for_each(|(d, s)| *d += s);
            }
        }
        let mut shape: Vec<usize> = self.shape().to_vec();
        shape.remove(ax);
        if shape.is_empty() {
            shape.push(1);
        }
        Tensor::from_op("sum_axis", shape, out, &[self], move || {
            Box::new(move |g| {
                let mut gx = vec![0.0; outer * len * inner];
                for o in 0..outer {
                    let src = &g[o * inner..(o + 1) * inner];
                    for l in 0..len {
                        gx[(o * len + l) * inner..(o * len + l + 1) * inner].copy_from_slice(src);
                    }
                }
                vec![Some(gx)]
            })
        })
    }

    pub fn mean_axis(&self, axis: isize) -> Result<Tensor> {
        let ax = resolve_axis("mean_axis", axis, self.ndim())?;
        let len = self.shape()[ax] as f64;
        self.sum_axis(axis)?.scale(1.0 / len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn relu_clamps_negatives() {
        let y = t(&[3], &[-1.0, 0.0, 2.0]).relu().unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn suffix_broadcast_add() {
        let a = t(&[2, 3], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = t(&[3], &[10.0, 20.0, 30.0]);
        assert_eq!(a.add(&b).unwrap().data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        assert_eq!(b.add(&a).unwrap().data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
    }

    #[test]
    fn general_broadcast_mul() {
        let a = t(&[2, 1], &[2.0, 3.0]);
        let b = t(&[1, 3], &[1.0, 10.0, 100.0]);
        let y = a.mul(&b).unwrap();
        assert_eq!(y.shape(), &[2, 3]);
        assert_eq!(y.data(), &[2.0, 20.0, 200.0, 3.0, 30.0, 300.0]);
    }

    #[test]
    fn incompatible_shapes_name_both() {
        let a = t(&[2, 3], &[0.0; 6]);
        let b = t(&[2], &[0.0; 2]);
        let err = a.add(&b).unwrap_err().to_string();
        assert!(err.contains("[2, 3]") && err.contains("[2]"), "{err}");
    }

    #[test]
    fn broadcast_grads_reduce() {
        let a = Tensor::param(&[2, 3], vec![1.0; 6]).unwrap();
        let b = Tensor::param(&[3], vec![1.0, 2.0, 3.0]).unwrap();
        a.mul(&b).unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0]);
        assert_eq!(b.grad().unwrap(), vec![2.0, 2.0, 2.0]);

        let c = Tensor::param(&[2, 1], vec![1.0, 2.0]).unwrap();
        let d = Tensor::param(&[1, 3], vec![1.0, 2.0, 3.0]).unwrap();
        c.mul(&d).unwrap().sum().unwrap().backward().unwrap();
        assert_eq!(c.grad().unwrap(), vec![6.0, 6.0]);
        assert_eq!(d.grad().unwrap(), vec![3.0, 3.0, 3.0]);
    }

    #[test]
    fn sum_axis_middle() {
        let x = t(&[2, 3, 2], &(0..12).map(f64::from).collect::<Vec<_>>());
        let s = x.sum_axis(1).unwrap();
        assert_eq!(s.shape(), &[2, 2]);
        assert_eq!(s.data(), &[6.0, 9.0, 24.0, 27.0]);
        let m = x.mean_axis(-1).unwrap();
        assert_eq!(m.shape(), &[2, 3]);
        assert_eq!(m.data()[0], 0.5);
    }
}
