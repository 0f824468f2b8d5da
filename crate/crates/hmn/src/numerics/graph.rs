// Indexed loops are deliberate in the dense kernels below.
#![allow(clippy::needless_range_loop)]

use super::{Array, NamedArrays, NumericsError, Real};

/// Handle into a [`Graph`]'s tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op<R> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, R),
    MatVec(NodeId, NodeId),
    VecMat(NodeId, NodeId),
    Concat(Vec<NodeId>),
    ConcatRows(Vec<NodeId>),
    RowSelect(NodeId, usize),
    SumRows(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Softmax(NodeId),
    Dot(NodeId, NodeId),
    Pick(NodeId, usize),
    Ln(NodeId),
}

/// Define-by-run gradient tape. A fresh graph is built for every forward pass
/// (histories and knowledge bases vary per sample); node order on the tape is
/// a topological order, so [`Graph::backward`] walks it once in reverse.
pub struct Graph<R: Real> {
    values: Vec<Array<R>>,
    ops: Vec<Op<R>>,
    grads: Vec<Option<Array<R>>>,
}

impl<R: Real> Default for Graph<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Graph<R> {
    pub fn new() -> Self {
        Graph {
            values: Vec::new(),
            ops: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array<R> {
        &self.values[id.0]
    }

    /// Gradient of the last `backward` root with respect to `id`. `None` means
    /// the node does not influence the root (gradient is identically zero).
    pub fn grad(&self, id: NodeId) -> Option<&Array<R>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    fn push(&mut self, value: Array<R>, op: Op<R>) -> NodeId {
        debug_assert!(value.all_finite(), "non-finite node value from {op:?}");
        let id = NodeId(self.values.len());
        self.values.push(value);
        self.ops.push(op);
        id
    }

    pub fn leaf(&mut self, value: Array<R>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn scalar(&mut self, x: R) -> NodeId {
        self.leaf(Array::scalar(x))
    }

    pub fn vector(&mut self, data: Vec<R>) -> NodeId {
        self.leaf(Array::vector(data))
    }

    pub fn zeros(&mut self, shape: &[usize]) -> NodeId {
        self.leaf(Array::zeros(shape))
    }

    fn shape_err(kind: &'static str, lhs: &Array<R>, rhs: &Array<R>) -> NumericsError {
        NumericsError::ShapeMismatch {
            kind,
            lhs: lhs.shape().to_vec(),
            rhs: rhs.shape().to_vec(),
        }
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        if va.shape() != vb.shape() {
            return Err(Self::shape_err("add", va, vb));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Array::new(va.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        if va.shape() != vb.shape() {
            return Err(Self::shape_err("sub", va, vb));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x - y)
            .collect();
        let value = Array::new(va.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        if va.shape() != vb.shape() {
            return Err(Self::shape_err("mul", va, vb));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x * y)
            .collect();
        let value = Array::new(va.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Mul(a, b)))
    }

    /// Multiply every entry by a compile-time constant (not a tape node).
    pub fn scale(&mut self, a: NodeId, c: R) -> NodeId {
        let va = &self.values[a.0];
        let data = va.data().iter().map(|&x| x * c).collect();
        let value = Array::new(va.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Scale(a, c))
    }

    /// `(m x n) . (n) -> (m)`
    pub fn matvec(&mut self, m: NodeId, v: NodeId) -> Result<NodeId, NumericsError> {
        let (vm, vv) = (&self.values[m.0], &self.values[v.0]);
        if !vm.is_matrix() || !vv.is_vector() || vm.cols() != vv.len() {
            return Err(Self::shape_err("matvec", vm, vv));
        }
        let cols = vm.cols();
        let vec = vv.data();
        let out = vm
            .data()
            .chunks_exact(cols)
            .map(|row| {
                row.iter()
                    .zip(vec)
                    .fold(R::zero(), |acc, (&a, &b)| acc + a * b)
            })
            .collect();
        Ok(self.push(Array::vector(out), Op::MatVec(m, v)))
    }

    /// `(m) . (m x n) -> (n)`: weighted sum of the matrix rows.
    pub fn vecmat(&mut self, v: NodeId, m: NodeId) -> Result<NodeId, NumericsError> {
        let (vv, vm) = (&self.values[v.0], &self.values[m.0]);
        if !vv.is_vector() || !vm.is_matrix() || vm.rows() != vv.len() {
            return Err(Self::shape_err("vecmat", vv, vm));
        }
        let cols = vm.cols();
        let mut out = vec![R::zero(); cols];
        for (&w, row) in vv.data().iter().zip(vm.data().chunks_exact(cols)) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += w * x;
            }
        }
        Ok(self.push(Array::vector(out), Op::VecMat(v, m)))
    }

    /// Concatenate vectors end to end.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, NumericsError> {
        if parts.is_empty() {
            return Err(NumericsError::EmptyInput("concat"));
        }
        let mut data = Vec::new();
        for &p in parts {
            let vp = &self.values[p.0];
            if !vp.is_vector() {
                return Err(NumericsError::ShapeMismatch {
                    kind: "concat",
                    lhs: vp.shape().to_vec(),
                    rhs: vec![],
                });
            }
            data.extend_from_slice(vp.data());
        }
        Ok(self.push(Array::vector(data), Op::Concat(parts.to_vec())))
    }

    /// Stack equal-length vectors as the rows of a matrix.
    pub fn concat_rows(&mut self, rows: &[NodeId]) -> Result<NodeId, NumericsError> {
        if rows.is_empty() {
            return Err(NumericsError::EmptyInput("concat_rows"));
        }
        let cols = self.values[rows[0].0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            let vr = &self.values[r.0];
            if !vr.is_vector() || vr.len() != cols {
                return Err(NumericsError::ShapeMismatch {
                    kind: "concat_rows",
                    lhs: vec![cols],
                    rhs: vr.shape().to_vec(),
                });
            }
            data.extend_from_slice(vr.data());
        }
        let value = Array::matrix(rows.len(), cols, data)?;
        Ok(self.push(value, Op::ConcatRows(rows.to_vec())))
    }

    /// Embedding lookup: row `r` of a matrix as a vector.
    pub fn row_select(&mut self, m: NodeId, r: usize) -> Result<NodeId, NumericsError> {
        let vm = &self.values[m.0];
        if !vm.is_matrix() {
            return Err(NumericsError::ShapeMismatch {
                kind: "row_select",
                lhs: vm.shape().to_vec(),
                rhs: vec![],
            });
        }
        if r >= vm.rows() {
            return Err(NumericsError::IndexOutOfRange {
                kind: "row_select",
                index: r,
                len: vm.rows(),
            });
        }
        let value = Array::vector(vm.row(r).to_vec());
        Ok(self.push(value, Op::RowSelect(m, r)))
    }

    /// Sum the rows of a matrix into a single vector.
    pub fn sum_rows(&mut self, m: NodeId) -> Result<NodeId, NumericsError> {
        let vm = &self.values[m.0];
        if !vm.is_matrix() {
            return Err(NumericsError::ShapeMismatch {
                kind: "sum_rows",
                lhs: vm.shape().to_vec(),
                rhs: vec![],
            });
        }
        let (rows, cols) = (vm.rows(), vm.cols());
        let mut out = vec![R::zero(); cols];
        for r in 0..rows {
            let row = vm.row(r);
            for c in 0..cols {
                out[c] += row[c];
            }
        }
        Ok(self.push(Array::vector(out), Op::SumRows(m)))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let va = &self.values[a.0];
        let data = va
            .data()
            .iter()
            .map(|&x| R::one() / (R::one() + (-x).exp()))
            .collect();
        let value = Array::new(va.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let va = &self.values[a.0];
        let data = va.data().iter().map(|&x| x.tanh()).collect();
        let value = Array::new(va.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Tanh(a))
    }

    /// Softmax over a vector, computed with max subtraction; the normalizer is
    /// accumulated at f64 so the output sums to 1 within a few ulps even for
    /// vocabulary-sized inputs at f32.
    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId, NumericsError> {
        let va = &self.values[a.0];
        if !va.is_vector() {
            return Err(NumericsError::ShapeMismatch {
                kind: "softmax",
                lhs: va.shape().to_vec(),
                rhs: vec![],
            });
        }
        let max = va
            .data()
            .iter()
            .cloned()
            .fold(R::neg_infinity(), |m, x| if x > m { x } else { m });
        let exps: Vec<R> = va.data().iter().map(|&x| (x - max).exp()).collect();
        let denom: f64 = exps.iter().map(|e| e.as_f64()).sum();
        let data = exps
            .iter()
            .map(|e| R::from_f64(e.as_f64() / denom))
            .collect();
        Ok(self.push(Array::vector(data), Op::Softmax(a)))
    }

    /// Inner product of two equal-length vectors; the result is a scalar node.
    pub fn dot(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NumericsError> {
        let (va, vb) = (&self.values[a.0], &self.values[b.0]);
        if !va.is_vector() || !vb.is_vector() || va.len() != vb.len() {
            return Err(Self::shape_err("dot", va, vb));
        }
        let mut acc = R::zero();
        for (x, y) in va.data().iter().zip(vb.data()) {
            acc += *x * *y;
        }
        Ok(self.push(Array::scalar(acc), Op::Dot(a, b)))
    }

    /// Select one element of a vector as a scalar node.
    pub fn pick(&mut self, a: NodeId, i: usize) -> Result<NodeId, NumericsError> {
        let va = &self.values[a.0];
        if !va.is_vector() {
            return Err(NumericsError::ShapeMismatch {
                kind: "pick",
                lhs: va.shape().to_vec(),
                rhs: vec![],
            });
        }
        if i >= va.len() {
            return Err(NumericsError::IndexOutOfRange {
                kind: "pick",
                index: i,
                len: va.len(),
            });
        }
        let value = Array::scalar(va.data()[i]);
        Ok(self.push(value, Op::Pick(a, i)))
    }

    pub fn ln(&mut self, a: NodeId) -> NodeId {
        let va = &self.values[a.0];
        let data = va.data().iter().map(|&x| x.ln()).collect();
        let value = Array::new(va.shape().to_vec(), data).expect("same shape");
        self.push(value, Op::Ln(a))
    }

    /// Reverse pass from a scalar root. Gradients accumulate additively when a
    /// node feeds several consumers; each tape entry is visited exactly once.
    pub fn backward(&mut self, root: NodeId) -> Result<(), NumericsError> {
        if !self.values[root.0].is_scalar() {
            return Err(NumericsError::NonScalarRoot {
                shape: self.values[root.0].shape().to_vec(),
            });
        }
        let n = self.values.len();
        let mut grads: Vec<Option<Array<R>>> = vec![None; n];
        grads[root.0] = Some(Array::scalar(R::one()));

        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        for g in grads.iter().flatten() {
            debug_assert!(g.all_finite(), "non-finite gradient");
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &Array<R>, grads: &mut [Option<Array<R>>]) {
        fn acc<R: Real>(
            grads: &mut [Option<Array<R>>],
            values: &[Array<R>],
            id: NodeId,
            f: impl FnOnce(&mut Array<R>),
        ) {
            let slot = &mut grads[id.0];
            if slot.is_none() {
                *slot = Some(Array::zeros(values[id.0].shape()));
            }
            f(slot.as_mut().expect("just filled"));
        }

        match &self.ops[i] {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(grads, &self.values, *a, |ga| {
                    for (x, y) in ga.data_mut().iter_mut().zip(g.data()) {
                        *x += *y;
                    }
                });
                acc(grads, &self.values, *b, |gb| {
                    for (x, y) in gb.data_mut().iter_mut().zip(g.data()) {
                        *x += *y;
                    }
                });
            }
            Op::Sub(a, b) => {
                acc(grads, &self.values, *a, |ga| {
                    for (x, y) in ga.data_mut().iter_mut().zip(g.data()) {
                        *x += *y;
                    }
                });
                acc(grads, &self.values, *b, |gb| {
                    for (x, y) in gb.data_mut().iter_mut().zip(g.data()) {
                        *x -= *y;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (va, vb) = (&self.values[a.0], &self.values[b.0]);
                acc(grads, &self.values, *a, |ga| {
                    for ((x, y), z) in ga.data_mut().iter_mut().zip(g.data()).zip(vb.data()) {
                        *x += *y * *z;
                    }
                });
                acc(grads, &self.values, *b, |gb| {
                    for ((x, y), z) in gb.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *x += *y * *z;
                    }
                });
            }
            Op::Scale(a, c) => {
                let c = *c;
                acc(grads, &self.values, *a, |ga| {
                    for (x, y) in ga.data_mut().iter_mut().zip(g.data()) {
                        *x += *y * c;
                    }
                });
            }
            Op::MatVec(m, v) => {
                let (vm, vv) = (&self.values[m.0], &self.values[v.0]);
                let cols = vm.cols();
                acc(grads, &self.values, *m, |gm| {
                    for (&gr, row) in g.data().iter().zip(gm.data_mut().chunks_exact_mut(cols)) {
                        for (x, &y) in row.iter_mut().zip(vv.data()) {
                            *x += gr * y;
                        }
                    }
                });
                acc(grads, &self.values, *v, |gv| {
                    for (&gr, row) in g.data().iter().zip(vm.data().chunks_exact(cols)) {
                        for (x, &y) in gv.data_mut().iter_mut().zip(row) {
                            *x += gr * y;
                        }
                    }
                });
            }
            Op::VecMat(v, m) => {
                let (vv, vm) = (&self.values[v.0], &self.values[m.0]);
                let cols = vm.cols();
                acc(grads, &self.values, *v, |gv| {
                    for (x, row) in gv.data_mut().iter_mut().zip(vm.data().chunks_exact(cols)) {
                        *x += row
                            .iter()
                            .zip(g.data())
                            .fold(R::zero(), |a, (&r, &gc)| a + r * gc);
                    }
                });
                acc(grads, &self.values, *m, |gm| {
                    for (&w, row) in vv.data().iter().zip(gm.data_mut().chunks_exact_mut(cols)) {
                        for (x, &gc) in row.iter_mut().zip(g.data()) {
                            *x += w * gc;
                        }
                    }
                });
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.values[p.0].len();
                    acc(grads, &self.values, p, |gp| {
                        for (x, y) in gp.data_mut().iter_mut().zip(&g.data()[off..off + len]) {
                            *x += *y;
                        }
                    });
                    off += len;
                }
            }
            Op::ConcatRows(rows) => {
                let cols = self.values[rows[0].0].len();
                for (r, &p) in rows.iter().enumerate() {
                    acc(grads, &self.values, p, |gp| {
                        for (x, y) in gp
                            .data_mut()
                            .iter_mut()
                            .zip(&g.data()[r * cols..(r + 1) * cols])
                        {
                            *x += *y;
                        }
                    });
                }
            }
            Op::RowSelect(m, r) => {
                let cols = self.values[m.0].cols();
                let r = *r;
                acc(grads, &self.values, *m, |gm| {
                    let row = &mut gm.data_mut()[r * cols..(r + 1) * cols];
                    for (x, y) in row.iter_mut().zip(g.data()) {
                        *x += *y;
                    }
                });
            }
            Op::SumRows(m) => {
                let (rows, cols) = (self.values[m.0].rows(), self.values[m.0].cols());
                acc(grads, &self.values, *m, |gm| {
                    for r in 0..rows {
                        let row = &mut gm.data_mut()[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            row[c] += g.data()[c];
                        }
                    }
                });
            }
            Op::Sigmoid(a) => {
                let out = &self.values[i];
                acc(grads, &self.values, *a, |ga| {
                    for ((x, y), s) in ga.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *x += *y * *s * (R::one() - *s);
                    }
                });
            }
            Op::Tanh(a) => {
                let out = &self.values[i];
                acc(grads, &self.values, *a, |ga| {
                    for ((x, y), t) in ga.data_mut().iter_mut().zip(g.data()).zip(out.data()) {
                        *x += *y * (R::one() - *t * *t);
                    }
                });
            }
            Op::Softmax(a) => {
                let s = &self.values[i];
                let mut inner = R::zero();
                for (gj, sj) in g.data().iter().zip(s.data()) {
                    inner += *gj * *sj;
                }
                acc(grads, &self.values, *a, |ga| {
                    for ((x, gj), sj) in ga.data_mut().iter_mut().zip(g.data()).zip(s.data()) {
                        *x += *sj * (*gj - inner);
                    }
                });
            }
            Op::Dot(a, b) => {
                let gs = g.data()[0];
                let (va, vb) = (&self.values[a.0], &self.values[b.0]);
                acc(grads, &self.values, *a, |ga| {
                    for (x, y) in ga.data_mut().iter_mut().zip(vb.data()) {
                        *x += gs * *y;
                    }
                });
                acc(grads, &self.values, *b, |gb| {
                    for (x, y) in gb.data_mut().iter_mut().zip(va.data()) {
                        *x += gs * *y;
                    }
                });
            }
            Op::Pick(a, idx) => {
                let gs = g.data()[0];
                let idx = *idx;
                acc(grads, &self.values, *a, |ga| {
                    ga.data_mut()[idx] += gs;
                });
            }
            Op::Ln(a) => {
                let va = &self.values[a.0];
                acc(grads, &self.values, *a, |ga| {
                    for ((x, y), v) in ga.data_mut().iter_mut().zip(g.data()).zip(va.data()) {
                        *x += *y / *v;
                    }
                });
            }
        }
    }
}

/// Leaf ids for every array of a parameter set, in insertion order.
pub struct BoundParams {
    ids: Vec<NodeId>,
}

impl BoundParams {
    pub fn id(&self, idx: usize) -> NodeId {
        self.ids[idx]
    }
}

/// Create one leaf per parameter array so a forward pass can reference them.
pub fn bind_params<R: Real>(g: &mut Graph<R>, params: &NamedArrays<R>) -> BoundParams {
    let ids = (0..params.len())
        .map(|i| g.leaf(params.array(i).clone()))
        .collect();
    BoundParams { ids }
}

/// Gather gradients for every bound parameter; parameters the root never
/// touched come back as zeros.
pub fn collect_grads<R: Real>(
    g: &Graph<R>,
    params: &NamedArrays<R>,
    bound: &BoundParams,
) -> NamedArrays<R> {
    let mut out = params.zeros_like();
    for i in 0..params.len() {
        if let Some(grad) = g.grad(bound.id(i)) {
            out.array_mut(i).data_mut().copy_from_slice(grad.data());
        }
    }
    out
}
