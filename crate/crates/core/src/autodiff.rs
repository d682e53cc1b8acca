//! Minimal reverse-mode automatic differentiation over dense matrices.
//!
//! Every value on a [`Tape`] is an `Array2<f64>`; row vectors are `1 × k`
//! matrices and scalars are `1 × 1`. Operations append nodes in evaluation
//! order, so a single reverse sweep from the output accumulates gradients.

use ndarray::{s, Array2, Axis, Zip};

/// Handle to a node on a [`Tape`].
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
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Tanimoto(Var, Var),
    SoftmaxRows(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    PickRows(Vec<Var>, Vec<(usize, usize)>),
    SumSquares(Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Array2<f64>,
    op: Op,
}

/// Raised when a Tanimoto coefficient is requested for two all-zero rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("degenerate Tanimoto similarity between row {left} and row {right}: both vectors are zero")]
pub struct DegenerateSimilarity {
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Array2<f64>> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `var`, or zeros shaped like it when the output does not depend on it.
    pub fn get_or_zeros(&self, tape: &Tape, var: Var) -> Array2<f64> {
        self.get(var)
            .cloned()
            .unwrap_or_else(|| Array2::zeros(tape.value(var).raw_dim()))
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

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Array2<f64> {
        &self.nodes[var.0].value
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) * self.value(b);
        self.push(v, Op::Mul(a, b))
    }

    /// Adds the `1 × k` row `bias` to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!(b.nrows(), 1, "bias must be a single row");
        let v = self.value(a) + b;
        self.push(v, Op::AddRow(a, bias))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a) * factor;
        self.push(v, Op::Scale(a, factor))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    /// Pairwise Tanimoto coefficients: entry `(i, j)` compares row `i` of `a` with row `j` of `b`.
    pub fn tanimoto(&mut self, a: Var, b: Var) -> Result<Var, DegenerateSimilarity> {
        let v = tanimoto_matrix(self.value(a), self.value(b))?;
        Ok(self.push(v, Op::Tanimoto(a, b)))
    }

    /// Softmax across the columns of each row.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + width]).to_owned();
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts must agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Builds a matrix whose row `r` is row `picks[r].1` of `sources[picks[r].0]`.
    pub fn pick_rows(&mut self, sources: &[Var], picks: Vec<(usize, usize)>) -> Var {
        let cols = self.value(sources[0]).ncols();
        let mut v = Array2::zeros((picks.len(), cols));
        for (r, &(src, row)) in picks.iter().enumerate() {
            v.row_mut(r).assign(&self.value(sources[src]).row(row));
        }
        self.push(v, Op::PickRows(sources.to_vec(), picks))
    }

    /// Sum of squared entries as a `1 × 1` value.
    pub fn sum_squares(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().map(|x| x * x).sum::<f64>();
        self.push(Array2::from_elem((1, 1), s), Op::SumSquares(a))
    }

    /// Reverse sweep seeded with `d output / d output = 1`. `output` must be `1 × 1`.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(
            self.value(output).dim(),
            (1, 1),
            "backward needs a scalar output"
        );
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; output.0 + 1];
        grads[output.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g.clone());
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, -&g);
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Mul(a, b) => {
                    let ga = &g * self.value(*b);
                    let gb = &g * self.value(*a);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::AddRow(a, bias) => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *bias, gb);
                    accumulate(&mut grads, *a, g.clone());
                }
                Op::Scale(a, f) => accumulate(&mut grads, *a, &g * *f),
                Op::Tanh(a) => {
                    let mut ga = g.clone();
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|x, &y| *x *= 1.0 - y * y);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g.clone();
                    Zip::from(&mut ga)
                        .and(&node.value)
                        .for_each(|x, &y| *x *= y * (1.0 - y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanimoto(a, b) => {
                    let (ga, gb) = tanimoto_backward(self.value(*a), self.value(*b), &g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Array2::zeros(y.raw_dim());
                    for ((mut out, yr), gr) in ga.rows_mut().into_iter().zip(y.rows()).zip(g.rows())
                    {
                        let inner = yr.dot(&gr);
                        Zip::from(&mut out)
                            .and(&yr)
                            .and(&gr)
                            .for_each(|o, &yy, &gg| *o = yy * (gg - inner));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).ncols();
                        accumulate(
                            &mut grads,
                            p,
                            g.slice(s![.., offset..offset + w]).to_owned(),
                        );
                        offset += w;
                    }
                }
                Op::PickRows(sources, picks) => {
                    let mut per_source: Vec<Array2<f64>> = sources
                        .iter()
                        .map(|&src| Array2::zeros(self.value(src).raw_dim()))
                        .collect();
                    for (r, &(src, row)) in picks.iter().enumerate() {
                        let mut dst = per_source[src].row_mut(row);
                        dst += &g.row(r);
                    }
                    for (&src, gs) in sources.iter().zip(per_source) {
                        accumulate(&mut grads, src, gs);
                    }
                }
                Op::SumSquares(a) => {
                    let ga = self.value(*a) * (2.0 * g[[0, 0]]);
                    accumulate(&mut grads, *a, ga);
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], var: Var, g: Array2<f64>) {
    match &mut grads[var.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn tanimoto_matrix(
    a: &Array2<f64>,
    b: &Array2<f64>,
) -> Result<Array2<f64>, DegenerateSimilarity> {
    let dots = a.dot(&b.t());
    let na: Vec<f64> = a.rows().into_iter().map(|r| r.dot(&r)).collect();
    let nb: Vec<f64> = b.rows().into_iter().map(|r| r.dot(&r)).collect();
    let mut out = dots;
    for ((i, j), v) in out.indexed_iter_mut() {
        let denom = na[i] + nb[j] - *v;
        if denom == 0.0 {
            return Err(DegenerateSimilarity { left: i, right: j });
        }
        *v /= denom;
    }
    Ok(out)
}

fn tanimoto_backward(
    a: &Array2<f64>,
    b: &Array2<f64>,
    g: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>) {
    // T = p / q with p = a·b and q = |a|² + |b|² − p.
    // dT/da = (b (q + p) − 2 p a) / q², symmetric for b.
    let mut ga = Array2::zeros(a.raw_dim());
    let mut gb = Array2::zeros(b.raw_dim());
    for (i, ar) in a.rows().into_iter().enumerate() {
        let na = ar.dot(&ar);
        for (j, br) in b.rows().into_iter().enumerate() {
            let gij = g[[i, j]];
            if gij == 0.0 {
                continue;
            }
            let p = ar.dot(&br);
            let q = na + br.dot(&br) - p;
            let q2 = q * q;
            let coef_other = gij * (q + p) / q2;
            let coef_self = gij * 2.0 * p / q2;
            {
                let mut row = ga.row_mut(i);
                row.scaled_add(coef_other, &br);
                row.scaled_add(-coef_self, &ar);
            }
            let mut row = gb.row_mut(j);
            row.scaled_add(coef_other, &ar);
            row.scaled_add(-coef_self, &br);
        }
    }
    (ga, gb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn numeric_grad(f: &dyn Fn(&Array2<f64>) -> f64, x: &Array2<f64>) -> Array2<f64> {
        let h = 1e-6;
        let mut g = Array2::zeros(x.raw_dim());
        for idx in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.as_slice_mut().unwrap()[idx] += h;
            xm.as_slice_mut().unwrap()[idx] -= h;
            g.as_slice_mut().unwrap()[idx] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn assert_close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert!(
                (x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())),
                "{x} vs {y}"
            );
        }
    }

    #[test]
    fn matmul_tanh_gradient_matches_numeric() {
        let x = array![[0.3, -0.2, 0.5], [0.1, 0.4, -0.6]];
        let w = array![[0.2, -0.1], [0.7, 0.3], [-0.4, 0.9]];
        let f = |w: &Array2<f64>| {
            let mut t = Tape::new();
            let xv = t.leaf(x.clone());
            let wv = t.leaf(w.clone());
            let m = t.matmul(xv, wv);
            let h = t.tanh(m);
            let l = t.sum_squares(h);
            t.value(l)[[0, 0]]
        };
        let mut t = Tape::new();
        let xv = t.leaf(x.clone());
        let wv = t.leaf(w.clone());
        let m = t.matmul(xv, wv);
        let h = t.tanh(m);
        let l = t.sum_squares(h);
        let grads = t.backward(l);
        assert_close(grads.get(wv).unwrap(), &numeric_grad(&f, &w), 1e-7);
    }

    #[test]
    fn tanimoto_and_softmax_gradients_match_numeric() {
        let a = array![[0.3, -0.2, 0.5], [0.1, 0.4, -0.6], [0.9, 0.2, 0.1]];
        let b = array![[0.2, 0.1, -0.3], [-0.5, 0.3, 0.2]];
        let build = |a: &Array2<f64>, b: &Array2<f64>| {
            let mut t = Tape::new();
            let av = t.leaf(a.clone());
            let bv = t.leaf(b.clone());
            let sim = t.tanimoto(av, bv).unwrap();
            let sm = t.softmax_rows(sim);
            let agg = t.matmul(sm, bv);
            let l = t.sum_squares(agg);
            (t, av, bv, l)
        };
        let (t, av, bv, l) = build(&a, &b);
        let grads = t.backward(l);
        let fa = |x: &Array2<f64>| {
            let (t, _, _, l) = build(x, &b);
            t.value(l)[[0, 0]]
        };
        let fb = |x: &Array2<f64>| {
            let (t, _, _, l) = build(&a, x);
            t.value(l)[[0, 0]]
        };
        assert_close(grads.get(av).unwrap(), &numeric_grad(&fa, &a), 1e-6);
        assert_close(grads.get(bv).unwrap(), &numeric_grad(&fb, &b), 1e-6);
    }

    #[test]
    fn pick_rows_routes_gradients_to_sources() {
        let mut t = Tape::new();
        let a = t.leaf(array![[1.0, 2.0], [3.0, 4.0]]);
        let b = t.leaf(array![[5.0, 6.0]]);
        let p = t.pick_rows(&[a, b], vec![(1, 0), (0, 1), (0, 1)]);
        let l = t.sum_squares(p);
        let g = t.backward(l);
        assert_eq!(g.get(a).unwrap(), &array![[0.0, 0.0], [12.0, 16.0]]);
        assert_eq!(g.get(b).unwrap(), &array![[10.0, 12.0]]);
    }

    #[test]
    fn unused_leaf_has_no_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(array![[1.0]]);
        let unused = t.leaf(array![[2.0]]);
        let l = t.sum_squares(a);
        let g = t.backward(l);
        assert!(g.get(unused).is_none());
        assert_eq!(g.get_or_zeros(&t, unused), array![[0.0]]);
    }

    #[test]
    fn degenerate_similarity_is_reported() {
        let mut t = Tape::new();
        let a = t.leaf(array![[0.0, 0.0], [1.0, 0.0]]);
        let b = t.leaf(array![[0.0, 0.0]]);
        assert_eq!(
            t.tanimoto(a, b).unwrap_err(),
            DegenerateSimilarity { left: 0, right: 0 }
        );
    }
}
