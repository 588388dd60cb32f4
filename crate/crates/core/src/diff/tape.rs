//! Reverse-mode differentiation over vector-valued nodes.
//!
//! A [`Graph`] records every operation of one forward pass against a borrowed
//! [`ParamStore`]; [`Graph::backward`] then walks the record in reverse and
//! accumulates parameter gradients. Graphs are cheap and meant to be built
//! per example and dropped.

use super::params::{Grads, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Const,
    /// Slice of a parameter tensor starting at `offset`.
    Param { id: ParamId, offset: usize },
    /// `W x (+ b)`
    Affine { w: ParamId, b: Option<ParamId>, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    /// Multiply every entry of the first operand by the scalar second operand.
    MulScalar(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Sigmoid(Var),
    Tanh(Var),
    Elu(Var),
    Exp(Var),
    Ln(Var),
    Softplus(Var),
    Square(Var),
    Clamp(Var, f64, f64),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Gather(Var, Vec<usize>),
    Sum(Var),
    LogSumExp(Var),
    LogSoftmax(Var),
    Softmax(Var),
    Reverse(Var, f64),
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    vals: Vec<Vec<f64>>,
    ops: Vec<Op>,
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn elu(x: f64) -> f64 {
    if x >= 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|x| x / total).collect()
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            vals: Vec::with_capacity(256),
            ops: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, val: Vec<f64>, op: Op) -> Var {
        self.vals.push(val);
        self.ops.push(op);
        Var(self.vals.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.vals[v.0]
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.vals[v.0][0]
    }

    pub fn len(&self, v: Var) -> usize {
        self.vals[v.0].len()
    }

    pub fn num_nodes(&self) -> usize {
        self.vals.len()
    }

    pub fn constant(&mut self, v: Vec<f64>) -> Var {
        self.push(v, Op::Const)
    }

    pub fn scalar_const(&mut self, c: f64) -> Var {
        self.push(vec![c], Op::Const)
    }

    /// A whole parameter tensor, flattened.
    pub fn param(&mut self, id: ParamId) -> Var {
        let v = self.params.get(id).data.clone();
        self.push(v, Op::Param { id, offset: 0 })
    }

    /// Row `r` of a parameter matrix.
    pub fn param_row(&mut self, id: ParamId, r: usize) -> Var {
        let t = self.params.get(id);
        let v = t.row(r).to_vec();
        self.push(v, Op::Param { id, offset: r * t.cols })
    }

    pub fn affine(&mut self, w: ParamId, b: Option<ParamId>, x: Var) -> Var {
        let wt = self.params.get(w);
        let xv = &self.vals[x.0];
        assert_eq!(wt.cols, xv.len(), "affine: '{}' expects {} inputs", wt.name, wt.cols);
        let mut out = match b {
            Some(b) => self.params.get(b).data.clone(),
            None => vec![0.0; wt.rows],
        };
        for (r, o) in out.iter_mut().enumerate() {
            let row = wt.row(r);
            let mut acc = 0.0;
            for (a, c) in row.iter().zip(xv) {
                acc += a * c;
            }
            *o += acc;
        }
        self.push(out, Op::Affine { w, b, x })
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Var {
        let (av, bv) = (&self.vals[a.0], &self.vals[b.0]);
        assert_eq!(av.len(), bv.len(), "elementwise op on mismatched lengths");
        let out = av.iter().zip(bv).map(|(x, y)| f(*x, *y)).collect();
        self.push(out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let c = self.vals[s.0][0];
        let out = self.vals[a.0].iter().map(|x| x * c).collect();
        self.push(out, Op::MulScalar(a, s))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.vals[a.0].iter().map(|&x| f(x)).collect();
        self.push(out, op)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.map(a, |x| x * c, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// `a + c` elementwise for a constant vector `c`.
    pub fn offset(&mut self, a: Var, c: &[f64]) -> Var {
        assert_eq!(self.vals[a.0].len(), c.len());
        let out = self.vals[a.0].iter().zip(c).map(|(x, y)| x + y).collect();
        self.push(out, Op::Offset(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        self.map(a, elu, Op::Elu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, f64::exp, Op::Exp(a))
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map(a, f64::ln, Op::Ln(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.map(a, softplus, Op::Softplus(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, |x| x * x, Op::Square(a))
    }

    /// Clamp into `[lo, hi]`; gradient is zero where the clamp is active.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, |x| x.clamp(lo, hi), Op::Clamp(a, lo, hi))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::with_capacity(parts.iter().map(|p| self.vals[p.0].len()).sum());
        for p in parts {
            out.extend_from_slice(&self.vals[p.0]);
        }
        self.push(out, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.vals[a.0][start..start + len].to_vec();
        self.push(out, Op::Slice(a, start))
    }

    pub fn gather(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = &self.vals[a.0];
        let out = idx.iter().map(|&i| av[i]).collect();
        self.push(out, Op::Gather(a, idx.to_vec()))
    }

    pub fn pick(&mut self, a: Var, i: usize) -> Var {
        self.gather(a, &[i])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.vals[a.0].iter().sum();
        self.push(vec![s], Op::Sum(a))
    }

    /// Sum of several scalar (or equal-length) nodes.
    pub fn add_all(&mut self, parts: &[Var]) -> Var {
        let mut acc = parts[0];
        for &p in &parts[1..] {
            acc = self.add(acc, p);
        }
        acc
    }

    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        let s = log_sum_exp(&self.vals[a.0]);
        self.push(vec![s], Op::LogSumExp(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let lse = log_sum_exp(&self.vals[a.0]);
        let out = self.vals[a.0].iter().map(|x| x - lse).collect();
        self.push(out, Op::LogSoftmax(a))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax(&self.vals[a.0]);
        self.push(out, Op::Softmax(a))
    }

    /// Identity forward; multiplies the incoming gradient by `-lambda`.
    pub fn reverse_gradient(&mut self, a: Var, lambda: f64) -> Var {
        let out = self.vals[a.0].clone();
        self.push(out, Op::Reverse(a, lambda))
    }

    /// Value copy that blocks gradient flow.
    pub fn detach(&mut self, a: Var) -> Var {
        let out = self.vals[a.0].clone();
        self.push(out, Op::Const)
    }

    /// Gradients of the scalar node `loss` with respect to every parameter.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut g = Grads::zeros_like(self.params);
        self.backward_into(loss, 1.0, &mut g);
        g
    }

    /// Accumulate `seed · ∂loss/∂θ` into `out`.
    pub fn backward_into(&self, loss: Var, seed: f64, out: &mut Grads) {
        assert_eq!(self.vals[loss.0].len(), 1, "backward needs a scalar loss");
        let n = loss.0 + 1;
        let mut grads: Vec<Vec<f64>> = vec![Vec::new(); n];
        grads[loss.0] = vec![seed];

        fn acc<'a>(grads: &'a mut [Vec<f64>], vals: &[Vec<f64>], v: Var) -> &'a mut Vec<f64> {
            let slot = &mut grads[v.0];
            if slot.is_empty() {
                *slot = vec![0.0; vals[v.0].len()];
            }
            slot
        }

        for i in (0..n).rev() {
            if grads[i].is_empty() {
                continue;
            }
            let gy = std::mem::take(&mut grads[i]);
            let y = &self.vals[i];
            match &self.ops[i] {
                Op::Const => {}
                Op::Param { id, offset } => {
                    let dst = &mut out.data[id.0][*offset..*offset + gy.len()];
                    for (d, g) in dst.iter_mut().zip(&gy) {
                        *d += g;
                    }
                }
                Op::Affine { w, b, x } => {
                    let wt = self.params.get(*w);
                    let xv = &self.vals[x.0];
                    {
                        let gw = &mut out.data[w.0];
                        for (r, g) in gy.iter().enumerate() {
                            if *g == 0.0 {
                                continue;
                            }
                            let row = &mut gw[r * wt.cols..(r + 1) * wt.cols];
                            for (d, xi) in row.iter_mut().zip(xv) {
                                *d += g * xi;
                            }
                        }
                    }
                    if let Some(b) = b {
                        for (d, g) in out.data[b.0].iter_mut().zip(&gy) {
                            *d += g;
                        }
                    }
                    let gx = acc(&mut grads, &self.vals, *x);
                    for (r, g) in gy.iter().enumerate() {
                        if *g == 0.0 {
                            continue;
                        }
                        for (d, wv) in gx.iter_mut().zip(wt.row(r)) {
                            *d += g * wv;
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        let ga = acc(&mut grads, &self.vals, v);
                        for (d, g) in ga.iter_mut().zip(&gy) {
                            *d += g;
                        }
                    }
                }
                Op::Sub(a, b) => {
                    let ga = acc(&mut grads, &self.vals, *a);
                    for (d, g) in ga.iter_mut().zip(&gy) {
                        *d += g;
                    }
                    let gb = acc(&mut grads, &self.vals, *b);
                    for (d, g) in gb.iter_mut().zip(&gy) {
                        *d -= g;
                    }
                }
                Op::Mul(a, b) => {
                    let bv = self.vals[b.0].clone();
                    let av = self.vals[a.0].clone();
                    let ga = acc(&mut grads, &self.vals, *a);
                    for ((d, g), o) in ga.iter_mut().zip(&gy).zip(&bv) {
                        *d += g * o;
                    }
                    let gb = acc(&mut grads, &self.vals, *b);
                    for ((d, g), o) in gb.iter_mut().zip(&gy).zip(&av) {
                        *d += g * o;
                    }
                }
                Op::MulScalar(a, s) => {
                    let c = self.vals[s.0][0];
                    let dot: f64 = gy.iter().zip(&self.vals[a.0]).map(|(g, x)| g * x).sum();
                    let ga = acc(&mut grads, &self.vals, *a);
                    for (d, g) in ga.iter_mut().zip(&gy) {
                        *d += g * c;
                    }
                    acc(&mut grads, &self.vals, *s)[0] += dot;
                }
                Op::Scale(a, c) => {
                    let ga = acc(&mut grads, &self.vals, *a);
                    for (d, g) in ga.iter_mut().zip(&gy) {
                        *d += g * c;
                    }
                }
                Op::Offset(a) => {
                    let ga = acc(&mut grads, &self.vals, *a);
                    for (d, g) in ga.iter_mut().zip(&gy) {
                        *d += g;
                    }
                }
                Op::Sigmoid(a) => {
                    let ga = acc(&mut grads, &self.vals, *a);
                    for ((d, g), s) in ga.iter_mut().zip(&gy).zip(y) {
                        *d += g * s * (1.0 - s);
                    }
                }
                Op::Tanh(a) => {
                    let ga = acc(&mut grads, &self.vals, *a);
                    for ((d, g), t) in ga.iter_mut().zip(&gy).zip(y) {
                        *d += g * (1.0 - t * t);
                    }
                }
                Op::Elu(a) => {
                    let xv = self.vals[a.0].clone();
                    let ga = acc(&mut grads, &self.vals, *a);
                    for (((d, g), x), e) in ga.iter_mut().zip(&gy).zip(&xv).zip(y) {
                        *d += if *x >= 0.0 { *g } else { g * (e + 1.0) };
                    }
                }
                Op::Exp(a) => {
                    let ga = acc(&mut grads, &self.vals, *a);
                    for ((d, g), e) in ga.iter_mut().zip(&gy).zip(y) {
                        *d += g * e;
                    }
                }
                Op::Ln(a) => {
                    let xv = self.vals[a.0].clone();
                    let ga = acc(&mut grads, &self.vals, *a);
                    for ((d, g), x) in ga.iter_mut().zip(&gy).zip(&xv) {
                        *d += g / x;
                    }
                }
                Op::Softplus(a) => {
                    let xv = self.vals[a.0].clone();
                    let ga = acc(&mut grads, &self.vals, *a);
                    for ((d, g), x) in ga.iter_mut().zip(&gy).zip(&xv) {
                        *d += g * sigmoid(*x);
                    }
                }
                Op::Square(a) => {
                    let xv = self.vals[a.0].clone();
                    let ga = acc(&mut grads, &self.vals, *a);
                    for ((d, g), x) in ga.iter_mut().zip(&gy).zip(&xv) {
                        *d += 2.0 * g * x;
                    }
                }
                Op::Clamp(a, lo, hi) => {
                    let xv = self.vals[a.0].clone();
                    let ga = acc(&mut grads, &self.vals, *a);
                    for ((d, g), x) in ga.iter_mut().zip(&gy).zip(&xv) {
                        if *x >= *lo && *x <= *hi {
                            *d += g;
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let len = self.vals[p.0].len();
                        let gp = acc(&mut grads, &self.vals, *p);
                        for (d, g) in gp.iter_mut().zip(&gy[off..off + len]) {
                            *d += g;
                        }
                        off += len;
                    }
                }
                Op::Slice(a, start) => {
                    let ga = acc(&mut grads, &self.vals, *a);
                    for (d, g) in ga[*start..*start + gy.len()].iter_mut().zip(&gy) {
                        *d += g;
                    }
                }
                Op::Gather(a, idx) => {
                    let ga = acc(&mut grads, &self.vals, *a);
                    for (&i, g) in idx.iter().zip(&gy) {
                        ga[i] += g;
                    }
                }
                Op::Sum(a) => {
                    let ga = acc(&mut grads, &self.vals, *a);
                    for d in ga.iter_mut() {
                        *d += gy[0];
                    }
                }
                Op::LogSumExp(a) => {
                    let lse = y[0];
                    let xv = self.vals[a.0].clone();
                    let ga = acc(&mut grads, &self.vals, *a);
                    if lse.is_finite() {
                        for (d, x) in ga.iter_mut().zip(&xv) {
                            *d += gy[0] * (x - lse).exp();
                        }
                    }
                }
                Op::LogSoftmax(a) => {
                    let total: f64 = gy.iter().sum();
                    let ga = acc(&mut grads, &self.vals, *a);
                    for ((d, g), ly) in ga.iter_mut().zip(&gy).zip(y) {
                        *d += g - total * ly.exp();
                    }
                }
                Op::Softmax(a) => {
                    let dot: f64 = gy.iter().zip(y).map(|(g, p)| g * p).sum();
                    let ga = acc(&mut grads, &self.vals, *a);
                    for ((d, g), p) in ga.iter_mut().zip(&gy).zip(y) {
                        *d += p * (g - dot);
                    }
                }
                Op::Reverse(a, lambda) => {
                    let ga = acc(&mut grads, &self.vals, *a);
                    for (d, g) in ga.iter_mut().zip(&gy) {
                        *d -= lambda * g;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::gradcheck::check_gradients;
    use crate::diff::params::Init;

    fn store() -> (ParamStore, ParamId, ParamId, ParamId) {
        let mut p = ParamStore::new(11);
        let w = p.add("w", 3, 4, Init::Normal(0.7)).unwrap();
        let b = p.add("b", 3, 1, Init::Normal(0.3)).unwrap();
        let v = p.add("v", 4, 1, Init::Normal(0.9)).unwrap();
        (p, w, b, v)
    }

    /// Exercises every op once in a single scalar expression.
    fn kitchen_sink(g: &mut Graph, w: ParamId, b: ParamId, v: ParamId) -> Var {
        let x = g.param(v);
        let h = g.affine(w, Some(b), x);
        let s = g.sigmoid(h);
        let t = g.tanh(h);
        let e = g.elu(h);
        let m = g.mul(s, t);
        let a = g.add(m, e);
        let d = g.sub(a, s);
        let sp = g.softplus(d);
        let sq = g.square(sp);
        let cl = g.clamp(sq, -5.0, 5.0);
        let ex = g.exp(t);
        let ln = g.ln(ex);
        let cat = g.concat(&[cl, ln, x]);
        let sl = g.slice(cat, 2, 5);
        let ga = g.gather(sl, &[0, 0, 3, 4]);
        let ls = g.log_softmax(ga);
        let sm = g.softmax(ls);
        let off = g.offset(sm, &[0.1, 0.2, 0.3, 0.4]);
        let sc = g.scale(off, 1.7);
        let k = g.pick(x, 1);
        let ms = g.mul_scalar(sc, k);
        let rv = g.reverse_gradient(ms, -1.0);
        let lse = g.log_sum_exp(rv);
        let su = g.sum(ls);
        g.add(lse, su)
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let (p, w, b, v) = store();
        let report = check_gradients(
            &p,
            |ps| {
                let mut g = Graph::new(ps);
                let l = kitchen_sink(&mut g, w, b, v);
                (g.scalar(l), g.backward(l))
            },
            1e-5,
        );
        assert!(report.max_rel_err <= 1e-4, "{report:?}");
    }

    #[test]
    fn reversal_flips_sign() {
        let (p, w, _, v) = store();
        let mut g = Graph::new(&p);
        let x = g.param(v);
        let h = g.affine(w, None, x);
        let r = g.reverse_gradient(h, 2.0);
        let l = g.sum(r);
        let rev = g.backward(l);
        let mut g2 = Graph::new(&p);
        let x = g2.param(v);
        let h = g2.affine(w, None, x);
        let l = g2.sum(h);
        let plain = g2.backward(l);
        for (a, b) in rev.flatten().iter().zip(plain.flatten()) {
            assert!((a + 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let (p, ..) = store();
        let mut g = Graph::new(&p);
        let c = g.scalar_const(3.0);
        assert_eq!(g.backward(c).norm(), 0.0);
    }

    #[test]
    fn linear_squared_loss_closed_form() {
        // d/dW (Wx - y)^2 = 2 (Wx - y) x^T
        let mut p = ParamStore::new(0);
        let w = p.add("w", 1, 3, Init::Values(vec![0.5, -1.0, 2.0])).unwrap();
        let xs = [1.0, 2.0, 3.0];
        let target = 1.5;
        let mut g = Graph::new(&p);
        let x = g.constant(xs.to_vec());
        let y = g.affine(w, None, x);
        let r = g.offset(y, &[-target]);
        let l = g.square(r);
        let l = g.sum(l);
        let grads = g.backward(l);
        let pred = 0.5 - 2.0 + 6.0;
        for (i, xi) in xs.iter().enumerate() {
            assert!((grads.get(w)[i] - 2.0 * (pred - target) * xi).abs() < 1e-12);
        }
    }
}
