//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! Every recorded value is a 2-D array; scalars are `1×1`. Operations are
//! appended to a [`Tape`] in evaluation order and [`Tape::backward`] walks it
//! in reverse, accumulating vector-Jacobian products. Nodes that depend on no
//! parameter are skipped during the backward pass.
//!
//! ```
//! use graphinv::autodiff::Tape;
//! use ndarray::array;
//!
//! let mut tape = Tape::new();
//! let x = tape.param(array![[3.0]]);
//! let y = tape.mul(x, x);
//! let grads = tape.backward(y);
//! assert_eq!(tape.scalar(y), 9.0);
//! assert_eq!(grads.get(x).unwrap()[[0, 0]], 6.0);
//! ```

use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    AddScalar(Var, Var),
    MulScalar(Var, Var),
    MulCol(Var, Var),
    Affine(Var, f64),
    ScaleRows(Var, Rc<[f64]>),
    Relu(Var),
    Sigmoid(Var),
    Abs(Var),
    Sqrt(Var),
    Square(Var),
    Sum(Var),
    SegmentSum(Var, Rc<[usize]>),
    GatherRows(Var, Rc<[usize]>),
    ConcatCols(Var, Var),
    EdgeAggregate {
        h: Var,
        w: Var,
        src: Rc<[usize]>,
        dst: Rc<[usize]>,
    },
    Scatter {
        w: Var,
        terms: Rc<[ScatterTerm]>,
    },
    CrossEntropy {
        logits: Var,
        labels: Rc<[usize]>,
        probs: Array2<f64>,
    },
}

/// One contribution `out.flat[cell] += coef * w[row, 0]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatterTerm {
    pub row: usize,
    pub cell: usize,
    pub coef: f64,
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Array2<f64>>>,
}

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, delta: Array2<f64>) {
    match slot {
        Some(g) => *g += &delta,
        None => *slot = Some(delta),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let x = &self.nodes[v.0].value;
        debug_assert_eq!(x.dim(), (1, 1));
        x[[0, 0]]
    }

    fn val(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.val(a).dot(self.val(b));
        self.push(out, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = self.val(a) + self.val(b);
        self.push(out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let out = self.val(a) - self.val(b);
        self.push(out, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = self.val(a) * self.val(b);
        self.push(out, Op::Mul(a, b), &[a, b])
    }

    /// `a + row`, broadcasting a `1×m` row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let out = self.val(a) + self.val(row);
        self.push(out, Op::AddRow(a, row), &[a, row])
    }

    /// `a + s` for a `1×1` variable `s`.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let out = self.val(a) + k;
        self.push(out, Op::AddScalar(a, s), &[a, s])
    }

    /// `a * s` for a `1×1` variable `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let k = self.scalar(s);
        let out = self.val(a) * k;
        self.push(out, Op::MulScalar(a, s), &[a, s])
    }

    /// Scales row `i` of `a` by `c[i, 0]`.
    pub fn mul_col(&mut self, a: Var, c: Var) -> Var {
        let out = self.val(a) * self.val(c);
        self.push(out, Op::MulCol(a, c), &[a, c])
    }

    /// `scale * a + shift` with constant coefficients.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out = self.val(a).mapv(|x| scale * x + shift);
        self.push(out, Op::Affine(a, scale), &[a])
    }

    /// Scales row `i` of `a` by the constant `factors[i]`.
    pub fn scale_rows(&mut self, a: Var, factors: Rc<[f64]>) -> Var {
        let mut out = self.val(a).clone();
        for (mut row, &f) in out.rows_mut().into_iter().zip(factors.iter()) {
            row *= f;
        }
        self.push(out, Op::ScaleRows(a, factors), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.val(a).mapv(|x| x.max(0.0));
        self.push(out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.val(a).mapv(sigmoid);
        self.push(out, Op::Sigmoid(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.val(a).mapv(f64::abs);
        self.push(out, Op::Abs(a), &[a])
    }

    /// Square root whose gradient at zero is taken as zero.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let out = self.val(a).mapv(f64::sqrt);
        self.push(out, Op::Sqrt(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.val(a).mapv(|x| x * x);
        self.push(out, Op::Square(a), &[a])
    }

    /// Sum of all entries, as a `1×1` value.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Array2::from_elem((1, 1), self.val(a).sum());
        self.push(out, Op::Sum(a), &[a])
    }

    /// Row `k` of the output is the sum of rows `i` of `a` with `segment[i] == k`.
    pub fn segment_sum(&mut self, a: Var, segment: Rc<[usize]>, num_segments: usize) -> Var {
        let x = self.val(a);
        let mut out = Array2::zeros((num_segments, x.ncols()));
        for (row, &k) in x.rows().into_iter().zip(segment.iter()) {
            let mut o = out.row_mut(k);
            o += &row;
        }
        self.push(out, Op::SegmentSum(a, segment), &[a])
    }

    pub fn gather_rows(&mut self, a: Var, index: Rc<[usize]>) -> Var {
        let out = self.val(a).select(Axis(0), &index);
        self.push(out, Op::GatherRows(a, index), &[a])
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let out = ndarray::concatenate(Axis(1), &[self.val(a).view(), self.val(b).view()])
            .expect("row counts agree");
        self.push(out, Op::ConcatCols(a, b), &[a, b])
    }

    /// Weighted message passing: `out[dst[e]] += w[e, 0] * h[src[e]]`.
    pub fn edge_aggregate(&mut self, h: Var, w: Var, src: Rc<[usize]>, dst: Rc<[usize]>) -> Var {
        let hv = self.val(h);
        let wv = self.val(w);
        let mut out = Array2::zeros(hv.dim());
        for (e, (&s, &d)) in src.iter().zip(dst.iter()).enumerate() {
            let we = wv[[e, 0]];
            if we != 0.0 {
                out.row_mut(d).scaled_add(we, &hv.row(s));
            }
        }
        self.push(out, Op::EdgeAggregate { h, w, src, dst }, &[h, w])
    }

    /// Linear scatter of a column vector into a `rows×cols` matrix.
    pub fn scatter(&mut self, w: Var, terms: Rc<[ScatterTerm]>, shape: (usize, usize)) -> Var {
        let wv = self.val(w);
        let mut out = Array2::<f64>::zeros(shape);
        {
            let flat = out.as_slice_mut().expect("contiguous");
            for t in terms.iter() {
                flat[t.cell] += t.coef * wv[[t.row, 0]];
            }
        }
        self.push(out, Op::Scatter { w, terms }, &[w])
    }

    /// Mean softmax cross-entropy of `logits` (one row per sample).
    pub fn cross_entropy(&mut self, logits: Var, labels: Rc<[usize]>) -> Var {
        let l = self.val(logits);
        let mut probs = l.clone();
        let mut loss = 0.0;
        for (i, (mut row, &y)) in probs.rows_mut().into_iter().zip(labels.iter()).enumerate() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|x| (x - m).exp());
            let z = row.sum();
            loss += z.ln() + m - l[[i, y]];
            row /= z;
        }
        let n = labels.len().max(1) as f64;
        let out = Array2::from_elem((1, 1), loss / n);
        self.push(
            out,
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            },
            &[logits],
        )
    }

    /// Reverse pass from a `1×1` output.
    pub fn backward(&self, output: Var) -> Grads {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Array2::ones(self.nodes[output.0].value.dim()));
        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let needs = |v: &Var| self.nodes[v.0].needs_grad;
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    if needs(a) {
                        accumulate(&mut grads[a.0], g.dot(&self.val(*b).t()));
                    }
                    if needs(b) {
                        accumulate(&mut grads[b.0], self.val(*a).t().dot(&g));
                    }
                }
                Op::Add(a, b) => {
                    if needs(b) {
                        accumulate(&mut grads[b.0], g.clone());
                    }
                    if needs(a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::Sub(a, b) => {
                    if needs(b) {
                        accumulate(&mut grads[b.0], -&g);
                    }
                    if needs(a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::Mul(a, b) => {
                    if needs(a) {
                        accumulate(&mut grads[a.0], &g * self.val(*b));
                    }
                    if needs(b) {
                        accumulate(&mut grads[b.0], &g * self.val(*a));
                    }
                }
                Op::AddRow(a, row) => {
                    if needs(row) {
                        accumulate(&mut grads[row.0], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if needs(a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::AddScalar(a, s) => {
                    if needs(s) {
                        accumulate(&mut grads[s.0], Array2::from_elem((1, 1), g.sum()));
                    }
                    if needs(a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::MulScalar(a, s) => {
                    if needs(s) {
                        let d = (&g * self.val(*a)).sum();
                        accumulate(&mut grads[s.0], Array2::from_elem((1, 1), d));
                    }
                    if needs(a) {
                        accumulate(&mut grads[a.0], g * self.scalar(*s));
                    }
                }
                Op::MulCol(a, c) => {
                    if needs(c) {
                        let d = (&g * self.val(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                        accumulate(&mut grads[c.0], d);
                    }
                    if needs(a) {
                        accumulate(&mut grads[a.0], g * self.val(*c));
                    }
                }
                Op::Affine(a, scale) => {
                    accumulate(&mut grads[a.0], g * *scale);
                }
                Op::ScaleRows(a, factors) => {
                    let mut d = g;
                    for (mut row, &f) in d.rows_mut().into_iter().zip(factors.iter()) {
                        row *= f;
                    }
                    accumulate(&mut grads[a.0], d);
                }
                Op::Relu(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(self.val(*a)).for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    accumulate(&mut grads[a.0], d);
                }
                Op::Sigmoid(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(&node.value).for_each(|d, &y| *d *= y * (1.0 - y));
                    accumulate(&mut grads[a.0], d);
                }
                Op::Abs(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(self.val(*a)).for_each(|d, &x| {
                        *d *= if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut grads[a.0], d);
                }
                Op::Sqrt(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(&node.value).for_each(|d, &y| {
                        *d = if y > 0.0 { *d / (2.0 * y) } else { 0.0 };
                    });
                    accumulate(&mut grads[a.0], d);
                }
                Op::Square(a) => {
                    let d = g * self.val(*a) * 2.0;
                    accumulate(&mut grads[a.0], d);
                }
                Op::Sum(a) => {
                    let d = Array2::from_elem(self.val(*a).dim(), g[[0, 0]]);
                    accumulate(&mut grads[a.0], d);
                }
                Op::SegmentSum(a, segment) => {
                    let d = g.select(Axis(0), segment);
                    accumulate(&mut grads[a.0], d);
                }
                Op::GatherRows(a, index) => {
                    let mut d = Array2::zeros(self.val(*a).dim());
                    for (row, &i) in g.rows().into_iter().zip(index.iter()) {
                        let mut o = d.row_mut(i);
                        o += &row;
                    }
                    accumulate(&mut grads[a.0], d);
                }
                Op::ConcatCols(a, b) => {
                    let k = self.val(*a).ncols();
                    if needs(a) {
                        accumulate(&mut grads[a.0], g.slice(s![.., ..k]).to_owned());
                    }
                    if needs(b) {
                        accumulate(&mut grads[b.0], g.slice(s![.., k..]).to_owned());
                    }
                }
                Op::EdgeAggregate { h, w, src, dst } => {
                    let hv = self.val(*h);
                    let wv = self.val(*w);
                    if needs(w) {
                        let mut dw = Array2::zeros(wv.dim());
                        for (e, (&s, &d)) in src.iter().zip(dst.iter()).enumerate() {
                            dw[[e, 0]] = g.row(d).dot(&hv.row(s));
                        }
                        accumulate(&mut grads[w.0], dw);
                    }
                    if needs(h) {
                        let mut dh = Array2::zeros(hv.dim());
                        for (e, (&s, &d)) in src.iter().zip(dst.iter()).enumerate() {
                            let we = wv[[e, 0]];
                            if we != 0.0 {
                                dh.row_mut(s).scaled_add(we, &g.row(d));
                            }
                        }
                        accumulate(&mut grads[h.0], dh);
                    }
                }
                Op::Scatter { w, terms } => {
                    let gflat = g.as_slice().expect("contiguous");
                    let mut dw = Array2::zeros(self.val(*w).dim());
                    for t in terms.iter() {
                        dw[[t.row, 0]] += t.coef * gflat[t.cell];
                    }
                    accumulate(&mut grads[w.0], dw);
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let n = labels.len().max(1) as f64;
                    let mut d = probs.clone();
                    for (i, &y) in labels.iter().enumerate() {
                        d[[i, y]] -= 1.0;
                    }
                    d *= g[[0, 0]] / n;
                    accumulate(&mut grads[logits.0], d);
                }
            }
        }
        Grads { grads }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
