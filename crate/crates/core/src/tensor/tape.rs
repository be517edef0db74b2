use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<F> {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        ta: bool,
        tb: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, F),
    Gelu(Var),
    Relu(Var),
    Abs(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<F>,
        rstd: Vec<F>,
    },
    SliceCols {
        a: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    SliceRows {
        a: Var,
        start: usize,
    },
    ConcatRows(Vec<Var>),
    AddToRows {
        a: Var,
        rows: Vec<usize>,
        delta: Var,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    CrossEntropy {
        logits: Var,
        labels: Vec<usize>,
        probs: Vec<F>,
    },
    Sum(Var),
}

struct Node<F> {
    rows: usize,
    cols: usize,
    value: Vec<F>,
    op: Op<F>,
    needs_grad: bool,
}

/// A single-threaded record of one forward pass.
///
/// Every value is a `rows x cols` matrix. Gradients are only propagated
/// through nodes that depend on a leaf created with `requires_grad`, so frozen
/// weights cost nothing on the way back.
pub struct Tape<F> {
    nodes: Vec<Node<F>>,
    grads: Vec<Option<Vec<F>>>,
}

impl<F: Scalar> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

fn dim_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Dimension {
        op,
        lhs: vec![a.0, a.1],
        rhs: vec![b.0, b.1],
    }
}

/// Gradient buffer of `v`, or `None` if `v` needs no gradient.
fn slot<'a, F: Scalar>(
    nodes: &[Node<F>],
    grads: &'a mut [Option<Vec<F>>],
    v: Var,
) -> Option<&'a mut Vec<F>> {
    let n = &nodes[v.0];
    if !n.needs_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![F::zero(); n.value.len()]))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// `0.5 (1 + tanh u)` written as the logistic of `2u`, which costs one exp.
fn gelu_gate<F: Scalar>(x: F) -> F {
    let u = F::of(GELU_C) * (x + F::of(GELU_K) * x * x * x);
    F::one() / (F::one() + (-(u + u)).exp())
}

fn gelu<F: Scalar>(x: F) -> F {
    x * gelu_gate(x)
}

fn gelu_grad<F: Scalar>(x: F) -> F {
    let s = gelu_gate(x);
    let du = F::of(GELU_C) * (F::one() + F::of(3.0 * GELU_K) * x * x);
    s + x * s * (F::one() - s) * (du + du)
}

impl<F: Scalar> Tape<F> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(
        &mut self,
        rows: usize,
        cols: usize,
        value: Vec<F>,
        op: Op<F>,
        needs_grad: bool,
    ) -> Var {
        debug_assert_eq!(rows * cols, value.len());
        self.nodes.push(Node {
            rows,
            cols,
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, v: Var) -> &[F] {
        &self.nodes[v.0].value
    }

    pub fn to_tensor(&self, v: Var) -> Tensor<F> {
        let n = &self.nodes[v.0];
        Tensor::new(vec![n.rows, n.cols], n.value.clone()).expect("tape values are well formed")
    }

    /// Gradient of the last `backward` call with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&[F]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Records a tensor as a leaf, tracking gradients if the tensor asks for them.
    pub fn leaf(&mut self, t: &Tensor<F>) -> Var {
        let (r, c) = t.matrix_dims();
        self.push(r, c, t.data().to_vec(), Op::Leaf, t.requires_grad())
    }

    pub fn leaf_raw(
        &mut self,
        rows: usize,
        cols: usize,
        data: Vec<F>,
        requires_grad: bool,
    ) -> Result<Var> {
        if rows == 0 || cols == 0 || rows * cols != data.len() {
            return Err(dim_err("leaf", (rows, cols), (data.len(), 1)));
        }
        Ok(self.push(rows, cols, data, Op::Leaf, requires_grad))
    }

    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<F>) -> Result<Var> {
        self.leaf_raw(rows, cols, data, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) * op(b)` where `op` optionally transposes its operand.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(dim_err("matmul", (m, k), (k2, n)));
        }
        let mut out = vec![F::zero(); m * n];
        F::gemm(
            (m, k, n),
            F::one(),
            (self.value(a), ta, ac),
            (self.value(b), tb, bc),
            F::zero(),
            &mut out,
        );
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(m, n, out, Op::MatMul { a, b, ta, tb }, ng))
    }

    fn zip_same(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(F, F) -> F,
    ) -> Result<Vec<F>> {
        if self.dims(a) != self.dims(b) {
            return Err(dim_err(op, self.dims(a), self.dims(b)));
        }
        Ok(self
            .value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect())
    }

    /// Elementwise sum. A `1 x c` right operand is broadcast over rows.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        if br == 1 && ar != 1 {
            if bc != ac {
                return Err(dim_err("add", (ar, ac), (br, bc)));
            }
            let row = self.value(b);
            let out = self
                .value(a)
                .chunks(ac)
                .flat_map(|r| r.iter().zip(row).map(|(&x, &y)| x + y))
                .collect();
            let ng = self.ng(a) || self.ng(b);
            return Ok(self.push(ar, ac, out, Op::AddRow(a, b), ng));
        }
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(ar, ac, out, Op::Add(a, b), ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        let (r, c) = self.dims(a);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(r, c, out, Op::Sub(a, b), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        let (r, c) = self.dims(a);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(r, c, out, Op::Mul(a, b), ng))
    }

    pub fn scale(&mut self, a: Var, s: F) -> Var {
        let out = self.value(a).iter().map(|&x| x * s).collect();
        let (r, c) = self.dims(a);
        let ng = self.ng(a);
        self.push(r, c, out, Op::Scale(a, s), ng)
    }

    /// GELU with the tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| gelu(x)).collect();
        let (r, c) = self.dims(a);
        let ng = self.ng(a);
        self.push(r, c, out, Op::Gelu(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| x.max(F::zero())).collect();
        let (r, c) = self.dims(a);
        let ng = self.ng(a);
        self.push(r, c, out, Op::Relu(a), ng)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let out = self.value(a).iter().map(|&x| x.abs()).collect();
        let (r, c) = self.dims(a);
        let ng = self.ng(a);
        self.push(r, c, out, Op::Abs(a), ng)
    }

    /// Row-wise softmax. Entries whose `mask` value is `false` get probability
    /// exactly zero and contribute nothing to the row's normaliser.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let (r, c) = self.dims(a);
        if let Some(m) = mask {
            if m.len() != r * c {
                return Err(dim_err("softmax mask", (r, c), (m.len(), 1)));
            }
        }
        let x = self.value(a);
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let keep = |j: usize| mask.is_none_or(|m| m[i * c + j]);
            let mut max = F::neg_infinity();
            for (j, &v) in row.iter().enumerate() {
                if keep(j) && v > max {
                    max = v;
                }
            }
            if max == F::neg_infinity() {
                return Err(Error::numeric(format!(
                    "softmax row {i} has no unmasked entries"
                )));
            }
            let o = &mut out[i * c..(i + 1) * c];
            let mut sum = F::zero();
            for j in 0..c {
                if keep(j) {
                    let e = (row[j] - max).exp();
                    o[j] = e;
                    sum = sum + e;
                }
            }
            for v in o.iter_mut() {
                *v = *v / sum;
            }
        }
        let ng = self.ng(a);
        Ok(self.push(r, c, out, Op::Softmax(a), ng))
    }

    /// Row-wise layer normalisation with affine `gamma`, `beta` (both `1 x c`).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: F) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.dims(gamma) != (1, c) || self.dims(beta) != (1, c) {
            return Err(dim_err("layer_norm", (r, c), self.dims(gamma)));
        }
        let n = F::of(c as f64);
        let xv = self.value(x);
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut xhat = vec![F::zero(); r * c];
        let mut rstd = vec![F::zero(); r];
        let mut out = vec![F::zero(); r * c];
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let mut mean = row.iter().copied().sum::<F>() / n;
            // one correction pass keeps constant rows exactly centred
            mean = mean + row.iter().map(|&v| v - mean).sum::<F>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() / n;
            let rs = F::one() / (var + eps).sqrt();
            rstd[i] = rs;
            for j in 0..c {
                let h = (row[j] - mean) * rs;
                xhat[i * c + j] = h;
                out[i * c + j] = g[j] * h + b[j];
            }
        }
        let ng = self.ng(x) || self.ng(gamma) || self.ng(beta);
        Ok(self.push(
            r,
            c,
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            },
            ng,
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if len == 0 || start + len > c {
            return Err(dim_err("slice_cols", (r, c), (start, len)));
        }
        let out = self
            .value(a)
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let ng = self.ng(a);
        Ok(self.push(r, len, out, Op::SliceCols { a, start }, ng))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = parts
            .first()
            .map(|&p| self.dims(p).0)
            .ok_or_else(|| Error::input("concat_cols of nothing"))?;
        for &p in parts {
            if self.dims(p).0 != r {
                return Err(dim_err("concat_cols", (r, 0), self.dims(p)));
            }
        }
        let c: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in parts {
                let pc = self.dims(p).1;
                out.extend_from_slice(&self.value(p)[i * pc..(i + 1) * pc]);
            }
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(r, c, out, Op::ConcatCols(parts.to_vec()), ng))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(a);
        if len == 0 || start + len > r {
            return Err(dim_err("slice_rows", (r, c), (start, len)));
        }
        let out = self.value(a)[start * c..(start + len) * c].to_vec();
        let ng = self.ng(a);
        Ok(self.push(len, c, out, Op::SliceRows { a, start }, ng))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = parts
            .first()
            .map(|&p| self.dims(p).1)
            .ok_or_else(|| Error::input("concat_rows of nothing"))?;
        let mut out = Vec::new();
        let mut r = 0;
        for &p in parts {
            let (pr, pc) = self.dims(p);
            if pc != c {
                return Err(dim_err("concat_rows", (r, c), (pr, pc)));
            }
            out.extend_from_slice(self.value(p));
            r += pr;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        Ok(self.push(r, c, out, Op::ConcatRows(parts.to_vec()), ng))
    }

    /// Copy of `a` with the `1 x c` `delta` added to one row.
    pub fn add_to_row(&mut self, a: Var, row: usize, delta: Var) -> Result<Var> {
        self.add_to_rows(a, &[row], delta)
    }

    /// Copy of `a` with row `i` of `delta` added to row `rows[i]`.
    pub fn add_to_rows(&mut self, a: Var, rows: &[usize], delta: Var) -> Result<Var> {
        let (r, c) = self.dims(a);
        if rows.is_empty() || rows.iter().any(|&i| i >= r) || self.dims(delta) != (rows.len(), c) {
            return Err(dim_err("add_to_rows", (r, c), self.dims(delta)));
        }
        let mut out = self.value(a).to_vec();
        let dv = self.value(delta);
        for (k, &row) in rows.iter().enumerate() {
            for (o, &d) in out[row * c..(row + 1) * c]
                .iter_mut()
                .zip(&dv[k * c..(k + 1) * c])
            {
                *o = *o + d;
            }
        }
        let ng = self.ng(a) || self.ng(delta);
        let rows = rows.to_vec();
        Ok(self.push(r, c, out, Op::AddToRows { a, rows, delta }, ng))
    }

    /// Row lookup: output row `i` is row `ids[i]` of `table`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(table);
        if ids.is_empty() {
            return Err(Error::input("gather with no ids"));
        }
        if let Some(&bad) = ids.iter().find(|&&i| i >= r) {
            return Err(Error::input(format!(
                "row id {bad} out of range for table of {r} rows"
            )));
        }
        let tv = self.value(table);
        let out = ids
            .iter()
            .flat_map(|&i| tv[i * c..(i + 1) * c].iter().copied())
            .collect();
        let ng = self.ng(table);
        Ok(self.push(
            ids.len(),
            c,
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
            ng,
        ))
    }

    /// Mean softmax cross-entropy of `logits` (`batch x classes`) against
    /// integer labels. Produces a `1 x 1` value.
    pub fn cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let (b, c) = self.dims(logits);
        if labels.len() != b {
            return Err(dim_err("cross_entropy", (b, c), (labels.len(), 1)));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::input(format!("label {bad} outside 0..{c}")));
        }
        let z = self.value(logits);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("non-finite logits"));
        }
        let mut probs = vec![F::zero(); b * c];
        let mut total = F::zero();
        for i in 0..b {
            let row = &z[i * c..(i + 1) * c];
            let max = row.iter().copied().fold(F::neg_infinity(), F::max);
            let sum: F = row.iter().map(|&v| (v - max).exp()).sum();
            for j in 0..c {
                probs[i * c + j] = (row[j] - max).exp() / sum;
            }
            total = total + (max - row[labels[i]]) + sum.ln();
        }
        let loss = total / F::of(b as f64);
        let ng = self.ng(logits);
        Ok(self.push(
            1,
            1,
            vec![loss],
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            ng,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().copied().sum();
        let ng = self.ng(a);
        self.push(1, 1, vec![s], Op::Sum(a), ng)
    }

    /// Reverse pass from a `1 x 1` value. Leaf gradients stay readable through
    /// [`Tape::grad`]; intermediate buffers are released as the pass proceeds.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.dims(loss) != (1, 1) {
            return Err(dim_err("backward", self.dims(loss), (1, 1)));
        }
        let mut grads: Vec<Option<Vec<F>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![F::one()]);
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
        }
        self.grads = grads;
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &[F], grads: &mut [Option<Vec<F>>]) {
        let nodes = &self.nodes;
        let node = &nodes[i];
        let (rows, cols) = (node.rows, node.cols);
        match &node.op {
            Op::Leaf => {}
            &Op::MatMul { a, b, ta, tb } => {
                let (ar, ac) = (nodes[a.0].rows, nodes[a.0].cols);
                let (br, bc) = (nodes[b.0].rows, nodes[b.0].cols);
                let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
                let n = if tb { br } else { bc };
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                if let Some(ga) = slot(nodes, grads, a) {
                    if ta {
                        F::gemm(
                            (k, n, m),
                            F::one(),
                            (bv, tb, bc),
                            (g, true, n),
                            F::one(),
                            ga,
                        );
                    } else {
                        F::gemm(
                            (m, n, k),
                            F::one(),
                            (g, false, n),
                            (bv, !tb, bc),
                            F::one(),
                            ga,
                        );
                    }
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    if tb {
                        F::gemm(
                            (n, m, k),
                            F::one(),
                            (g, true, n),
                            (av, ta, ac),
                            F::one(),
                            gb,
                        );
                    } else {
                        F::gemm(
                            (k, m, n),
                            F::one(),
                            (av, !ta, ac),
                            (g, false, n),
                            F::one(),
                            gb,
                        );
                    }
                }
            }
            &Op::Add(a, b) => {
                if let Some(ga) = slot(nodes, grads, a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x = *x + y);
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    gb.iter_mut().zip(g).for_each(|(x, &y)| *x = *x + y);
                }
            }
            &Op::Sub(a, b) => {
                if let Some(ga) = slot(nodes, grads, a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x = *x + y);
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    gb.iter_mut().zip(g).for_each(|(x, &y)| *x = *x - y);
                }
            }
            &Op::Mul(a, b) => {
                let av = &nodes[a.0].value;
                let bv = &nodes[b.0].value;
                if let Some(ga) = slot(nodes, grads, a) {
                    for ((x, &gy), &bb) in ga.iter_mut().zip(g).zip(bv) {
                        *x = *x + gy * bb;
                    }
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    for ((x, &gy), &aa) in gb.iter_mut().zip(g).zip(av) {
                        *x = *x + gy * aa;
                    }
                }
            }
            &Op::AddRow(a, b) => {
                if let Some(ga) = slot(nodes, grads, a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x = *x + y);
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    for row in g.chunks(cols) {
                        gb.iter_mut().zip(row).for_each(|(x, &y)| *x = *x + y);
                    }
                }
            }
            &Op::Scale(a, s) => {
                if let Some(ga) = slot(nodes, grads, a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x = *x + y * s);
                }
            }
            &Op::Gelu(a) | &Op::Relu(a) | &Op::Abs(a) => {
                let av = &nodes[a.0].value;
                let d: fn(F) -> F = match node.op {
                    Op::Gelu(_) => gelu_grad,
                    Op::Relu(_) => |x| if x > F::zero() { F::one() } else { F::zero() },
                    _ => |x| {
                        if x > F::zero() {
                            F::one()
                        } else if x < F::zero() {
                            -F::one()
                        } else {
                            F::zero()
                        }
                    },
                };
                if let Some(ga) = slot(nodes, grads, a) {
                    for ((x, &gy), &xv) in ga.iter_mut().zip(g).zip(av) {
                        *x = *x + gy * d(xv);
                    }
                }
            }
            &Op::Softmax(a) => {
                let y = &node.value;
                if let Some(ga) = slot(nodes, grads, a) {
                    for r in 0..rows {
                        let yr = &y[r * cols..(r + 1) * cols];
                        let gr = &g[r * cols..(r + 1) * cols];
                        let dot: F = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                        for j in 0..cols {
                            ga[r * cols + j] = ga[r * cols + j] + yr[j] * (gr[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                rstd,
            } => {
                let gam = &nodes[gamma.0].value;
                if let Some(gx) = slot(nodes, grads, *x) {
                    let n = F::of(cols as f64);
                    let mut dxhat = vec![F::zero(); cols];
                    for r in 0..rows {
                        let gr = &g[r * cols..(r + 1) * cols];
                        let hr = &xhat[r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            dxhat[j] = gr[j] * gam[j];
                        }
                        let m1 = dxhat.iter().copied().sum::<F>() / n;
                        let m2 = dxhat.iter().zip(hr).map(|(&d, &h)| d * h).sum::<F>() / n;
                        for j in 0..cols {
                            let v = &mut gx[r * cols + j];
                            *v = *v + rstd[r] * (dxhat[j] - m1 - hr[j] * m2);
                        }
                    }
                }
                if let Some(gg) = slot(nodes, grads, *gamma) {
                    for r in 0..rows {
                        for j in 0..cols {
                            gg[j] = gg[j] + g[r * cols + j] * xhat[r * cols + j];
                        }
                    }
                }
                if let Some(gb) = slot(nodes, grads, *beta) {
                    for row in g.chunks(cols) {
                        gb.iter_mut().zip(row).for_each(|(x, &y)| *x = *x + y);
                    }
                }
            }
            &Op::SliceCols { a, start } => {
                let ac = nodes[a.0].cols;
                if let Some(ga) = slot(nodes, grads, a) {
                    for r in 0..rows {
                        for j in 0..cols {
                            ga[r * ac + start + j] = ga[r * ac + start + j] + g[r * cols + j];
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let pc = nodes[p.0].cols;
                    if let Some(gp) = slot(nodes, grads, p) {
                        for r in 0..rows {
                            for j in 0..pc {
                                gp[r * pc + j] = gp[r * pc + j] + g[r * cols + off + j];
                            }
                        }
                    }
                    off += pc;
                }
            }
            &Op::SliceRows { a, start } => {
                if let Some(ga) = slot(nodes, grads, a) {
                    let dst = &mut ga[start * cols..(start + rows) * cols];
                    dst.iter_mut().zip(g).for_each(|(x, &y)| *x = *x + y);
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = nodes[p.0].value.len();
                    if let Some(gp) = slot(nodes, grads, p) {
                        gp.iter_mut()
                            .zip(&g[off..off + len])
                            .for_each(|(x, &y)| *x = *x + y);
                    }
                    off += len;
                }
            }
            Op::AddToRows { a, rows, delta } => {
                if let Some(ga) = slot(nodes, grads, *a) {
                    ga.iter_mut().zip(g).for_each(|(x, &y)| *x = *x + y);
                }
                if let Some(gd) = slot(nodes, grads, *delta) {
                    for (k, &row) in rows.iter().enumerate() {
                        gd[k * cols..(k + 1) * cols]
                            .iter_mut()
                            .zip(&g[row * cols..(row + 1) * cols])
                            .for_each(|(x, &y)| *x = *x + y);
                    }
                }
            }
            Op::Gather { table, ids } => {
                if let Some(gt) = slot(nodes, grads, *table) {
                    for (r, &id) in ids.iter().enumerate() {
                        for j in 0..cols {
                            gt[id * cols + j] = gt[id * cols + j] + g[r * cols + j];
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let (b, c) = (nodes[logits.0].rows, nodes[logits.0].cols);
                let scale = g[0] / F::of(b as f64);
                if let Some(gl) = slot(nodes, grads, *logits) {
                    for i in 0..b {
                        for j in 0..c {
                            let onehot = if labels[i] == j { F::one() } else { F::zero() };
                            gl[i * c + j] = gl[i * c + j] + scale * (probs[i * c + j] - onehot);
                        }
                    }
                }
            }
            &Op::Sum(a) => {
                if let Some(ga) = slot(nodes, grads, a) {
                    ga.iter_mut().for_each(|x| *x = *x + g[0]);
                }
            }
        }
    }
}
