//! Reverse-mode automatic differentiation over `Array2<f64>` values.
//!
//! A [`Tape`] is an append-only arena of nodes; every operation records its
//! parents and a backward closure. [`Tape::backward`] walks the arena in
//! reverse, accumulating gradients. Values are column-major in spirit:
//! matrices are `features x time`, losses are `1 x 1`.
//!
//! All closures are pure and the node order is the call order, so a fixed
//! sequence of operations yields bit-identical results across runs.

use std::cell::RefCell;

use ndarray::{s, Array2, Axis};

/// Handle to one tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

type BackFn = Box<dyn Fn(&Array2<f64>, &[&Array2<f64>], &Array2<f64>) -> Vec<Array2<f64>>>;

struct Node {
    value: Array2<f64>,
    parents: Vec<usize>,
    backward: Option<BackFn>,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients per tape node, produced by [`Tape::backward`].
pub struct Gradients(Vec<Option<Array2<f64>>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.0.get(v.0).and_then(|g| g.as_ref())
    }
}

/// Padding mode for 1-D convolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    Replicate,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array2<f64>, parents: Vec<usize>, backward: Option<BackFn>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, parents, backward });
        Var(nodes.len() - 1)
    }

    /// Gradient-accumulating leaf (parameters and differentiable inputs).
    pub fn leaf(&self, value: Array2<f64>) -> Var {
        self.push(value, vec![], None)
    }

    /// Non-differentiated input; gradients are still accumulated but
    /// normally ignored by the caller.
    pub fn constant(&self, value: Array2<f64>) -> Var {
        self.push(value, vec![], None)
    }

    pub fn value(&self, v: Var) -> Array2<f64> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.0].value.dim()
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        let nodes = self.nodes.borrow();
        debug_assert_eq!(nodes[v.0].value.dim(), (1, 1));
        nodes[v.0].value[[0, 0]]
    }

    /// Backpropagates from a scalar root; returns per-node gradients.
    pub fn backward(&self, root: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[root.0].value.dim(), (1, 1), "backward root must be scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; nodes.len()];
        grads[root.0] = Some(Array2::ones((1, 1)));
        for i in (0..=root.0).rev() {
            let node = &nodes[i];
            if node.backward.is_none() {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let parent_vals: Vec<&Array2<f64>> =
                node.parents.iter().map(|&p| &nodes[p].value).collect();
            let pgrads = (node.backward.as_ref().unwrap())(&g, &parent_vals, &node.value);
            debug_assert_eq!(pgrads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(pgrads) {
                debug_assert_eq!(pg.dim(), nodes[p].value.dim(), "grad shape for node {p}");
                match &mut grads[p] {
                    Some(acc) => *acc += &pg,
                    slot => *slot = Some(pg),
                }
            }
        }
        Gradients(grads)
    }

    // ---- elementwise arithmetic ----

    pub fn add(&self, a: Var, b: Var) -> Var {
        let v = &self.nodes.borrow()[a.0].value + &self.nodes.borrow()[b.0].value;
        self.push(
            v,
            vec![a.0, b.0],
            Some(Box::new(|g, _, _| vec![g.clone(), g.clone()])),
        )
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let v = &self.nodes.borrow()[a.0].value - &self.nodes.borrow()[b.0].value;
        self.push(
            v,
            vec![a.0, b.0],
            Some(Box::new(|g, _, _| vec![g.clone(), -g])),
        )
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let v = &self.nodes.borrow()[a.0].value * &self.nodes.borrow()[b.0].value;
        self.push(
            v,
            vec![a.0, b.0],
            Some(Box::new(|g, p, _| vec![g * p[1], g * p[0]])),
        )
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        let v = &self.nodes.borrow()[a.0].value / &self.nodes.borrow()[b.0].value;
        self.push(
            v,
            vec![a.0, b.0],
            Some(Box::new(|g, p, _| {
                vec![g / p[1], -(g * p[0] / (p[1] * p[1]))]
            })),
        )
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let v = self.nodes.borrow()[a.0].value.mapv(|x| x * c);
        self.push(v, vec![a.0], Some(Box::new(move |g, _, _| vec![g.mapv(|x| x * c)])))
    }

    pub fn add_scalar(&self, a: Var, c: f64) -> Var {
        let v = self.nodes.borrow()[a.0].value.mapv(|x| x + c);
        self.push(v, vec![a.0], Some(Box::new(|g, _, _| vec![g.clone()])))
    }

    // ---- linear algebra ----

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let v = self.nodes.borrow()[a.0].value.dot(&self.nodes.borrow()[b.0].value);
        self.push(
            v,
            vec![a.0, b.0],
            Some(Box::new(|g, p, _| vec![g.dot(&p[1].t()), p[0].t().dot(g)])),
        )
    }

    pub fn transpose(&self, a: Var) -> Var {
        let v = self.nodes.borrow()[a.0].value.t().to_owned();
        self.push(v, vec![a.0], Some(Box::new(|g, _, _| vec![g.t().to_owned()])))
    }

    // ---- shape ops ----

    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        let nodes = self.nodes.borrow();
        let views: Vec<_> = parts.iter().map(|v| nodes[v.0].value.view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows shapes");
        let sizes: Vec<usize> = parts.iter().map(|p| nodes[p.0].value.nrows()).collect();
        drop(nodes);
        self.push(
            v,
            parts.iter().map(|p| p.0).collect(),
            Some(Box::new(move |g, _, _| {
                let mut out = Vec::with_capacity(sizes.len());
                let mut r = 0;
                for &n in &sizes {
                    out.push(g.slice(s![r..r + n, ..]).to_owned());
                    r += n;
                }
                out
            })),
        )
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        let nodes = self.nodes.borrow();
        let views: Vec<_> = parts.iter().map(|v| nodes[v.0].value.view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols shapes");
        let sizes: Vec<usize> = parts.iter().map(|p| nodes[p.0].value.ncols()).collect();
        drop(nodes);
        self.push(
            v,
            parts.iter().map(|p| p.0).collect(),
            Some(Box::new(move |g, _, _| {
                let mut out = Vec::with_capacity(sizes.len());
                let mut c = 0;
                for &n in &sizes {
                    out.push(g.slice(s![.., c..c + n]).to_owned());
                    c += n;
                }
                out
            })),
        )
    }

    pub fn slice_rows(&self, a: Var, r0: usize, r1: usize) -> Var {
        let nodes = self.nodes.borrow();
        let v = nodes[a.0].value.slice(s![r0..r1, ..]).to_owned();
        let full = nodes[a.0].value.dim();
        drop(nodes);
        self.push(
            v,
            vec![a.0],
            Some(Box::new(move |g, _, _| {
                let mut out = Array2::zeros(full);
                out.slice_mut(s![r0..r1, ..]).assign(g);
                vec![out]
            })),
        )
    }

    pub fn slice_cols(&self, a: Var, c0: usize, c1: usize) -> Var {
        let nodes = self.nodes.borrow();
        let v = nodes[a.0].value.slice(s![.., c0..c1]).to_owned();
        let full = nodes[a.0].value.dim();
        drop(nodes);
        self.push(
            v,
            vec![a.0],
            Some(Box::new(move |g, _, _| {
                let mut out = Array2::zeros(full);
                out.slice_mut(s![.., c0..c1]).assign(g);
                vec![out]
            })),
        )
    }

    /// Selects columns by index (duplicates allowed); gradients scatter-add.
    pub fn gather_cols(&self, a: Var, idx: &[usize]) -> Var {
        let nodes = self.nodes.borrow();
        let src = &nodes[a.0].value;
        let mut v = Array2::zeros((src.nrows(), idx.len()));
        for (j, &i) in idx.iter().enumerate() {
            v.column_mut(j).assign(&src.column(i));
        }
        let full = src.dim();
        let idx = idx.to_vec();
        drop(nodes);
        self.push(
            v,
            vec![a.0],
            Some(Box::new(move |g, _, _| {
                let mut out = Array2::zeros(full);
                for (j, &i) in idx.iter().enumerate() {
                    let mut col = out.column_mut(i);
                    col += &g.column(j);
                }
                vec![out]
            })),
        )
    }

    /// Broadcasts a `(d, 1)` column to `(d, l)`.
    pub fn broadcast_col(&self, a: Var, l: usize) -> Var {
        let col = self.nodes.borrow()[a.0].value.clone();
        assert_eq!(col.ncols(), 1, "broadcast_col expects a column");
        let v = col
            .broadcast((col.nrows(), l))
            .expect("broadcast")
            .to_owned();
        self.push(
            v,
            vec![a.0],
            Some(Box::new(|g, _, _| {
                vec![g.sum_axis(Axis(1)).insert_axis(Axis(1))]
            })),
        )
    }

    pub fn reverse_cols(&self, a: Var) -> Var {
        let v = self.nodes.borrow()[a.0].value.slice(s![.., ..;-1]).to_owned();
        self.push(
            v,
            vec![a.0],
            Some(Box::new(|g, _, _| vec![g.slice(s![.., ..;-1]).to_owned()])),
        )
    }

    // ---- reductions ----

    pub fn sum_all(&self, a: Var) -> Var {
        let nodes = self.nodes.borrow();
        let v = Array2::from_elem((1, 1), nodes[a.0].value.sum());
        let dim = nodes[a.0].value.dim();
        drop(nodes);
        self.push(
            v,
            vec![a.0],
            Some(Box::new(move |g, _, _| vec![Array2::from_elem(dim, g[[0, 0]])])),
        )
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let nodes = self.nodes.borrow();
        let dim = nodes[a.0].value.dim();
        let n = (dim.0 * dim.1) as f64;
        let v = Array2::from_elem((1, 1), nodes[a.0].value.sum() / n);
        drop(nodes);
        self.push(
            v,
            vec![a.0],
            Some(Box::new(move |g, _, _| {
                vec![Array2::from_elem(dim, g[[0, 0]] / n)]
            })),
        )
    }

    /// Mean over columns: `(d, l) -> (d, 1)`.
    pub fn mean_cols(&self, a: Var) -> Var {
        let nodes = self.nodes.borrow();
        let l = nodes[a.0].value.ncols() as f64;
        let v = nodes[a.0].value.mean_axis(Axis(1)).unwrap().insert_axis(Axis(1));
        let cols = nodes[a.0].value.ncols();
        drop(nodes);
        self.push(
            v,
            vec![a.0],
            Some(Box::new(move |g, _, _| {
                let mut out = Array2::zeros((g.nrows(), cols));
                for mut col in out.columns_mut() {
                    col.assign(&(g.column(0).mapv(|x| x / l)));
                }
                vec![out]
            })),
        )
    }

    // ---- pointwise nonlinearities ----

    fn map_op(
        &self,
        a: Var,
        f: impl Fn(f64) -> f64,
        df: impl Fn(f64, f64) -> f64 + 'static,
    ) -> Var {
        let v = self.nodes.borrow()[a.0].value.mapv(&f);
        self.push(
            v,
            vec![a.0],
            Some(Box::new(move |g, p, y| {
                let mut out = g.clone();
                out.zip_mut_with(p[0], |gv, &x| {
                    *gv *= df(x, 0.0);
                });
                // df may prefer the output value; recompute using y where needed.
                let _ = y;
                vec![out]
            })),
        )
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        self.map_op(
            a,
            |x| 1.0 / (1.0 + (-x).exp()),
            |x, _| {
                let y = 1.0 / (1.0 + (-x).exp());
                y * (1.0 - y)
            },
        )
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.map_op(a, f64::tanh, |x, _| 1.0 - x.tanh().powi(2))
    }

    pub fn leaky_relu(&self, a: Var, slope: f64) -> Var {
        self.map_op(
            a,
            move |x| if x > 0.0 { x } else { slope * x },
            move |x, _| if x > 0.0 { 1.0 } else { slope },
        )
    }

    /// tanh-approximated GELU.
    pub fn gelu(&self, a: Var) -> Var {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const A: f64 = 0.044715;
        self.map_op(
            a,
            |x| 0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh()),
            |x, _| {
                let u = C * (x + A * x * x * x);
                let t = u.tanh();
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
            },
        )
    }

    pub fn exp(&self, a: Var) -> Var {
        self.map_op(a, f64::exp, |x, _| x.exp())
    }

    /// Natural log of `max(x, floor)`; zero gradient in the clamped region.
    pub fn ln_clamped(&self, a: Var, floor: f64) -> Var {
        self.map_op(
            a,
            move |x| x.max(floor).ln(),
            move |x, _| if x > floor { 1.0 / x } else { 0.0 },
        )
    }

    pub fn abs(&self, a: Var) -> Var {
        self.map_op(a, f64::abs, |x, _| {
            if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            }
        })
    }

    pub fn sqrt_guard(&self, a: Var, eps: f64) -> Var {
        self.map_op(
            a,
            move |x| (x + eps).sqrt(),
            move |x, _| 0.5 / (x + eps).sqrt(),
        )
    }

    /// Inverted dropout with a caller-supplied binary keep mask.
    pub fn dropout(&self, a: Var, keep_mask: &Array2<f64>, p: f64) -> Var {
        let scale = 1.0 / (1.0 - p);
        let v = &self.nodes.borrow()[a.0].value * keep_mask * scale;
        let mask = keep_mask.clone();
        self.push(
            v,
            vec![a.0],
            Some(Box::new(move |g, _, _| vec![g * &mask * scale])),
        )
    }

    // ---- structured ops ----

    /// Softmax along each row.
    pub fn softmax_rows(&self, a: Var) -> Var {
        let x = self.nodes.borrow()[a.0].value.clone();
        let mut y = x;
        for mut row in y.rows_mut() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - m).exp());
            let s: f64 = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        self.push(
            y,
            vec![a.0],
            Some(Box::new(|g, _, y| {
                let mut out = g * y;
                for (mut orow, yrow) in out.rows_mut().into_iter().zip(y.rows()) {
                    let dot: f64 = orow.sum();
                    orow.zip_mut_with(&yrow, |o, &yv| *o -= dot * yv);
                }
                vec![out]
            })),
        )
    }

    /// Layer normalization over rows (features), independently per column,
    /// with learned per-row gain and bias.
    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var, eps: f64) -> Var {
        let nodes = self.nodes.borrow();
        let xv = &nodes[x.0].value;
        let g = &nodes[gamma.0].value;
        let b = &nodes[beta.0].value;
        let (d, l) = xv.dim();
        let mut xhat = Array2::zeros((d, l));
        let mut inv_std = vec![0.0; l];
        for c in 0..l {
            let col = xv.column(c);
            let mean = col.mean().unwrap();
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let istd = 1.0 / (var + eps).sqrt();
            inv_std[c] = istd;
            for r in 0..d {
                xhat[[r, c]] = (xv[[r, c]] - mean) * istd;
            }
        }
        let mut y = Array2::zeros((d, l));
        for c in 0..l {
            for r in 0..d {
                y[[r, c]] = g[[r, 0]] * xhat[[r, c]] + b[[r, 0]];
            }
        }
        drop(nodes);
        self.push(
            y,
            vec![x.0, gamma.0, beta.0],
            Some(Box::new(move |gout, p, _| {
                let gamma = p[1];
                let (d, l) = (gout.nrows(), gout.ncols());
                let mut dx = Array2::zeros((d, l));
                let mut dgamma = Array2::zeros((d, 1));
                let mut dbeta = Array2::zeros((d, 1));
                for c in 0..l {
                    let istd = inv_std[c];
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for r in 0..d {
                        let dxhat = gout[[r, c]] * gamma[[r, 0]];
                        mean_dxhat += dxhat;
                        mean_dxhat_xhat += dxhat * xhat[[r, c]];
                        dgamma[[r, 0]] += gout[[r, c]] * xhat[[r, c]];
                        dbeta[[r, 0]] += gout[[r, c]];
                    }
                    mean_dxhat /= d as f64;
                    mean_dxhat_xhat /= d as f64;
                    for r in 0..d {
                        let dxhat = gout[[r, c]] * gamma[[r, 0]];
                        dx[[r, c]] =
                            istd * (dxhat - mean_dxhat - xhat[[r, c]] * mean_dxhat_xhat);
                    }
                }
                vec![dx, dgamma, dbeta]
            })),
        )
    }

    /// Same-length 1-D convolution over columns. `w` is `(c_out, c_in * k)`,
    /// `b` is `(c_out, 1)`.
    pub fn conv1d(&self, x: Var, w: Var, b: Var, k: usize, pad: PadMode) -> Var {
        let nodes = self.nodes.borrow();
        let xv = &nodes[x.0].value;
        let wv = &nodes[w.0].value;
        let bv = &nodes[b.0].value;
        let (c_in, l) = xv.dim();
        assert_eq!(wv.ncols(), c_in * k, "conv1d weight shape");
        let half = (k / 2) as i64;
        let col_index = move |t: i64, l: usize| -> Option<usize> {
            match pad {
                PadMode::Zero => {
                    if t < 0 || t >= l as i64 {
                        None
                    } else {
                        Some(t as usize)
                    }
                }
                PadMode::Replicate => Some(t.clamp(0, l as i64 - 1) as usize),
            }
        };
        // im2col: (c_in * k, l)
        let mut cols = Array2::zeros((c_in * k, l));
        for t in 0..l {
            for j in 0..k {
                if let Some(src) = col_index(t as i64 + j as i64 - half, l) {
                    for c in 0..c_in {
                        cols[[j * c_in + c, t]] = xv[[c, src]];
                    }
                }
            }
        }
        let mut y = wv.dot(&cols);
        for mut col in y.columns_mut() {
            col += &bv.column(0);
        }
        drop(nodes);
        let cols_saved = cols;
        self.push(
            y,
            vec![x.0, w.0, b.0],
            Some(Box::new(move |g, p, _| {
                let wv = p[1];
                let (c_in_k, l) = cols_saved.dim();
                let c_in = c_in_k / k;
                let dw = g.dot(&cols_saved.t());
                let db = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                // d cols = w^T g, then scatter back to x.
                let dcols = wv.t().dot(g);
                let mut dx = Array2::zeros((c_in, l));
                let half = (k / 2) as i64;
                for t in 0..l {
                    for j in 0..k {
                        if let Some(src) = col_index(t as i64 + j as i64 - half, l) {
                            for c in 0..c_in {
                                dx[[c, src]] += dcols[[j * c_in + c, t]];
                            }
                        }
                    }
                }
                vec![dx, dw, db]
            })),
        )
    }

    /// Spatial graph convolution over per-frame bone blocks.
    ///
    /// `x` is `(c_in * nb, l)` with bone-major blocks; each frame's bone
    /// features are mixed by the (constant, row-normalized) adjacency and
    /// lifted from `c_in` to `c_out` by a shared weight: per frame and bone,
    /// `y_b = w * sum_b' adj[b, b'] * x_b' + bias`.
    pub fn graph_conv(&self, x: Var, w: Var, b: Var, adj: &Array2<f64>) -> Var {
        let nodes = self.nodes.borrow();
        let xv = &nodes[x.0].value;
        let wv = &nodes[w.0].value;
        let bv = &nodes[b.0].value;
        let nb = adj.nrows();
        let l = xv.ncols();
        let c_in = xv.nrows() / nb;
        assert_eq!(xv.nrows(), c_in * nb, "graph_conv input rows");
        assert_eq!(wv.ncols(), c_in, "graph_conv weight cols");
        // Aggregate neighbors: h[(b, :), t] = sum_b' adj[b, b'] x[(b', :), t]
        let mut h = Array2::zeros((c_in * nb, l));
        for bn in 0..nb {
            for bp in 0..nb {
                let a = adj[[bn, bp]];
                if a == 0.0 {
                    continue;
                }
                for c in 0..c_in {
                    for t in 0..l {
                        h[[bn * c_in + c, t]] += a * xv[[bp * c_in + c, t]];
                    }
                }
            }
        }
        let c_out = wv.nrows();
        let mut y = Array2::zeros((c_out * nb, l));
        for bn in 0..nb {
            let hb = h.slice(s![bn * c_in..(bn + 1) * c_in, ..]);
            let yb = wv.dot(&hb);
            for t in 0..l {
                for c in 0..c_out {
                    y[[bn * c_out + c, t]] = yb[[c, t]] + bv[[c, 0]];
                }
            }
        }
        drop(nodes);
        let adj = adj.clone();
        let h_saved = h;
        self.push(
            y,
            vec![x.0, w.0, b.0],
            Some(Box::new(move |g, p, _| {
                let wv = p[1];
                let c_out = wv.nrows();
                let c_in = wv.ncols();
                let nb = adj.nrows();
                let l = g.ncols();
                let mut dw = Array2::zeros((c_out, c_in));
                let mut db = Array2::zeros((c_out, 1));
                let mut dh = Array2::zeros((c_in * nb, l));
                for bn in 0..nb {
                    let gb = g.slice(s![bn * c_out..(bn + 1) * c_out, ..]);
                    let hb = h_saved.slice(s![bn * c_in..(bn + 1) * c_in, ..]);
                    dw += &gb.dot(&hb.t());
                    db += &gb.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let dhb = wv.t().dot(&gb);
                    dh.slice_mut(s![bn * c_in..(bn + 1) * c_in, ..]).assign(&dhb);
                }
                let mut dx = Array2::zeros((c_in * nb, l));
                for bn in 0..nb {
                    for bp in 0..nb {
                        let a = adj[[bn, bp]];
                        if a == 0.0 {
                            continue;
                        }
                        for c in 0..c_in {
                            for t in 0..l {
                                dx[[bp * c_in + c, t]] += a * dh[[bn * c_in + c, t]];
                            }
                        }
                    }
                }
                vec![dx, dw, db]
            })),
        )
    }

    /// Replaces columns whose `states` entry is zero with the learned token
    /// column; non-zero columns pass through.
    pub fn mask_columns(&self, x: Var, token: Var, states: &[f64]) -> Var {
        let nodes = self.nodes.borrow();
        let xv = &nodes[x.0].value;
        let tok = &nodes[token.0].value;
        assert_eq!(states.len(), xv.ncols(), "mask_columns state length");
        let mut y = xv.clone();
        for (t, &st) in states.iter().enumerate() {
            if st == 0.0 {
                y.column_mut(t).assign(&tok.column(0));
            }
        }
        drop(nodes);
        let states = states.to_vec();
        self.push(
            y,
            vec![x.0, token.0],
            Some(Box::new(move |g, _, _| {
                let mut dx = g.clone();
                let mut dtok = Array2::zeros((g.nrows(), 1));
                for (t, &st) in states.iter().enumerate() {
                    if st == 0.0 {
                        {
                            let mut col = dtok.column_mut(0);
                            col += &g.column(t);
                        }
                        dx.column_mut(t).fill(0.0);
                    }
                }
                vec![dx, dtok]
            })),
        )
    }

    /// Forward differences along columns with the last column repeating the
    /// previous difference (zero for single-column inputs).
    pub fn time_diff_padded(&self, a: Var) -> Var {
        let x = self.nodes.borrow()[a.0].value.clone();
        let (d, l) = x.dim();
        let mut y = Array2::zeros((d, l));
        if l >= 2 {
            for t in 0..l - 1 {
                for r in 0..d {
                    y[[r, t]] = x[[r, t + 1]] - x[[r, t]];
                }
            }
            for r in 0..d {
                y[[r, l - 1]] = y[[r, l - 2]];
            }
        }
        self.push(
            y,
            vec![a.0],
            Some(Box::new(move |g, _, _| {
                let (d, l) = g.dim();
                let mut dx = Array2::zeros((d, l));
                if l >= 2 {
                    for t in 0..l - 1 {
                        for r in 0..d {
                            dx[[r, t + 1]] += g[[r, t]];
                            dx[[r, t]] -= g[[r, t]];
                        }
                    }
                    for r in 0..d {
                        dx[[r, l - 1]] += g[[r, l - 1]];
                        dx[[r, l - 2]] -= g[[r, l - 1]];
                    }
                }
                vec![dx]
            })),
        )
    }

    /// Per-bone unit normalization: each consecutive group of 3 rows in
    /// every column is scaled to unit length (guarded at 1e-8).
    pub fn normalize_groups3(&self, a: Var) -> Var {
        const EPS: f64 = 1e-8;
        let x = self.nodes.borrow()[a.0].value.clone();
        let (rows, l) = x.dim();
        assert_eq!(rows % 3, 0, "normalize_groups3 needs 3k rows");
        let m = rows / 3;
        let mut y = Array2::zeros((rows, l));
        for t in 0..l {
            for gi in 0..m {
                let v = [x[[3 * gi, t]], x[[3 * gi + 1, t]], x[[3 * gi + 2, t]]];
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt().max(EPS);
                for a in 0..3 {
                    y[[3 * gi + a, t]] = v[a] / n;
                }
            }
        }
        self.push(
            y,
            vec![a.0],
            Some(Box::new(move |g, p, y| {
                let x = p[0];
                let (rows, l) = x.dim();
                let m = rows / 3;
                let mut dx = Array2::zeros((rows, l));
                for t in 0..l {
                    for gi in 0..m {
                        let v = [x[[3 * gi, t]], x[[3 * gi + 1, t]], x[[3 * gi + 2, t]]];
                        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                        if n <= EPS {
                            for a in 0..3 {
                                dx[[3 * gi + a, t]] = g[[3 * gi + a, t]] / EPS;
                            }
                            continue;
                        }
                        let u = [y[[3 * gi, t]], y[[3 * gi + 1, t]], y[[3 * gi + 2, t]]];
                        let gdot =
                            g[[3 * gi, t]] * u[0] + g[[3 * gi + 1, t]] * u[1] + g[[3 * gi + 2, t]] * u[2];
                        for a in 0..3 {
                            dx[[3 * gi + a, t]] = (g[[3 * gi + a, t]] - gdot * u[a]) / n;
                        }
                    }
                }
                vec![dx]
            })),
        )
    }

    /// Angles between two bone direction groups per column: for each
    /// `(femur, shin)` pair, `theta = acos(clamp(<u_f, u_s>, -1, 1))`.
    /// Input is `(3 * nb, l)` bone-major; output is `(pairs, l)`.
    pub fn bone_angles(&self, a: Var, pairs: &[(usize, usize)]) -> Var {
        let x = self.nodes.borrow()[a.0].value.clone();
        let l = x.ncols();
        let mut y = Array2::zeros((pairs.len(), l));
        for (pi, &(f, s)) in pairs.iter().enumerate() {
            for t in 0..l {
                let mut dot = 0.0;
                for a in 0..3 {
                    dot += x[[3 * f + a, t]] * x[[3 * s + a, t]];
                }
                y[[pi, t]] = dot.clamp(-1.0, 1.0).acos();
            }
        }
        let pairs = pairs.to_vec();
        self.push(
            y,
            vec![a.0],
            Some(Box::new(move |g, p, _| {
                let x = p[0];
                let l = x.ncols();
                let mut dx = Array2::zeros(x.dim());
                for (pi, &(f, s)) in pairs.iter().enumerate() {
                    for t in 0..l {
                        let mut dot = 0.0;
                        for a in 0..3 {
                            dot += x[[3 * f + a, t]] * x[[3 * s + a, t]];
                        }
                        if dot.abs() >= 1.0 - 1e-9 {
                            continue; // clamped region: zero gradient
                        }
                        let dtheta_ddot = -1.0 / (1.0 - dot * dot).sqrt();
                        let gv = g[[pi, t]] * dtheta_ddot;
                        for a in 0..3 {
                            dx[[3 * f + a, t]] += gv * x[[3 * s + a, t]];
                            dx[[3 * s + a, t]] += gv * x[[3 * f + a, t]];
                        }
                    }
                }
                vec![dx]
            })),
        )
    }

    /// Mean smooth-l1 (Huber) distance between `a` and `b`:
    /// `h(x) = 0.5 x^2 / beta` for `|x| < beta`, else `|x| - 0.5 beta`.
    pub fn huber_mean(&self, a: Var, b: Var, beta: f64) -> Var {
        let nodes = self.nodes.borrow();
        let av = &nodes[a.0].value;
        let bv = &nodes[b.0].value;
        assert_eq!(av.dim(), bv.dim(), "huber_mean shapes");
        let n = (av.len()) as f64;
        let mut acc = 0.0;
        for (x, y) in av.iter().zip(bv.iter()) {
            let d = x - y;
            acc += if d.abs() < beta { 0.5 * d * d / beta } else { d.abs() - 0.5 * beta };
        }
        let v = Array2::from_elem((1, 1), acc / n);
        drop(nodes);
        self.push(
            v,
            vec![a.0, b.0],
            Some(Box::new(move |g, p, _| {
                let n = p[0].len() as f64;
                let gscale = g[[0, 0]] / n;
                let mut da = Array2::zeros(p[0].dim());
                for ((dslot, x), y) in da.iter_mut().zip(p[0].iter()).zip(p[1].iter()) {
                    let d = x - y;
                    *dslot = gscale * (d / beta).clamp(-1.0, 1.0);
                }
                let db = da.mapv(|v| -v);
                vec![da, db]
            })),
        )
    }

    /// One directional GRU pass over columns; returns the hidden sequence
    /// `(h, l)`. Parameter order: wz, uz, bz, wr, ur, br, wh, uh, bh.
    #[allow(clippy::too_many_arguments)]
    pub fn gru(
        &self,
        x: Var,
        wz: Var,
        uz: Var,
        bz: Var,
        wr: Var,
        ur: Var,
        br: Var,
        wh: Var,
        uh: Var,
        bh: Var,
    ) -> Var {
        let nodes = self.nodes.borrow();
        let xv = nodes[x.0].value.clone();
        let p = |v: Var| nodes[v.0].value.clone();
        let (wzv, uzv, bzv) = (p(wz), p(uz), p(bz));
        let (wrv, urv, brv) = (p(wr), p(ur), p(br));
        let (whv, uhv, bhv) = (p(wh), p(uh), p(bh));
        drop(nodes);
        let h_dim = wzv.nrows();
        let l = xv.ncols();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());

        let mut hs = Array2::zeros((h_dim, l));
        let mut zs = Array2::zeros((h_dim, l));
        let mut rs = Array2::zeros((h_dim, l));
        let mut cs = Array2::zeros((h_dim, l));
        let mut h_prev = ndarray::Array1::zeros(h_dim);
        for t in 0..l {
            let xt = xv.column(t);
            let za = wzv.dot(&xt) + uzv.dot(&h_prev) + bzv.column(0);
            let ra = wrv.dot(&xt) + urv.dot(&h_prev) + brv.column(0);
            let z = za.mapv(sig);
            let r = ra.mapv(sig);
            let rh = &r * &h_prev;
            let ca = whv.dot(&xt) + uhv.dot(&rh) + bhv.column(0);
            let c = ca.mapv(f64::tanh);
            let h = (1.0 - &z) * &h_prev + &z * &c;
            zs.column_mut(t).assign(&z);
            rs.column_mut(t).assign(&r);
            cs.column_mut(t).assign(&c);
            hs.column_mut(t).assign(&h);
            h_prev = h;
        }
        let hs_out = hs.clone();
        self.push(
            hs_out,
            vec![x.0, wz.0, uz.0, bz.0, wr.0, ur.0, br.0, wh.0, uh.0, bh.0],
            Some(Box::new(move |g, p, _| {
                let xv = p[0];
                let (wzv, uzv) = (p[1], p[2]);
                let (wrv, urv) = (p[4], p[5]);
                let (whv, uhv) = (p[7], p[8]);
                let h_dim = wzv.nrows();
                let l = xv.ncols();
                let mut dx = Array2::zeros(xv.dim());
                let mut dwz = Array2::zeros(wzv.dim());
                let mut duz = Array2::zeros(uzv.dim());
                let mut dbz = Array2::zeros((h_dim, 1));
                let mut dwr = Array2::zeros(wrv.dim());
                let mut dur = Array2::zeros(urv.dim());
                let mut dbr = Array2::zeros((h_dim, 1));
                let mut dwh = Array2::zeros(whv.dim());
                let mut duh = Array2::zeros(uhv.dim());
                let mut dbh = Array2::zeros((h_dim, 1));
                let mut dh_next = ndarray::Array1::<f64>::zeros(h_dim);
                for t in (0..l).rev() {
                    let h_prev = if t == 0 {
                        ndarray::Array1::zeros(h_dim)
                    } else {
                        hs.column(t - 1).to_owned()
                    };
                    let z = zs.column(t);
                    let r = rs.column(t);
                    let c = cs.column(t);
                    let dh = &g.column(t) + &dh_next;
                    // h = (1 - z) h_prev + z c
                    let dz = (&dh * (&c.to_owned() - &h_prev)).to_owned();
                    let dc = (&dh * &z).to_owned();
                    let mut dh_prev = (&dh * &(1.0 - &z.to_owned())).to_owned();
                    let da_c = &dc * &c.mapv(|v| 1.0 - v * v);
                    let rh = &r.to_owned() * &h_prev;
                    let xt = xv.column(t);
                    dwh += &outer(&da_c, &xt.to_owned());
                    duh += &outer(&da_c, &rh);
                    dbh += &da_c.view().insert_axis(Axis(1));
                    let drh = uhv.t().dot(&da_c);
                    let dr = (&drh * &h_prev).to_owned();
                    dh_prev += &(&drh * &r.to_owned());
                    let da_r = &dr * &r.mapv(|v| v * (1.0 - v));
                    dwr += &outer(&da_r, &xt.to_owned());
                    dur += &outer(&da_r, &h_prev);
                    dbr += &da_r.view().insert_axis(Axis(1));
                    dh_prev += &urv.t().dot(&da_r);
                    let da_z = &dz * &z.mapv(|v| v * (1.0 - v));
                    dwz += &outer(&da_z, &xt.to_owned());
                    duz += &outer(&da_z, &h_prev);
                    dbz += &da_z.view().insert_axis(Axis(1));
                    dh_prev += &uzv.t().dot(&da_z);
                    let dxt = wzv.t().dot(&da_z) + wrv.t().dot(&da_r) + whv.t().dot(&da_c);
                    dx.column_mut(t).assign(&dxt);
                    dh_next = dh_prev;
                }
                vec![dx, dwz, duz, dbz, dwr, dur, dbr, dwh, duh, dbh]
            })),
        )
    }
}

fn outer(a: &ndarray::Array1<f64>, b: &ndarray::Array1<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((a.len(), b.len()));
    for (i, &av) in a.iter().enumerate() {
        for (j, &bv) in b.iter().enumerate() {
            out[[i, j]] = av * bv;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    /// Central-difference check of d(scalar f)/d(inputs) against the tape.
    fn check_grad(build: impl Fn(&Tape, &[Var]) -> Var, inputs: &[Array2<f64>], tol: f64) {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
        let out = build(&tape, &vars);
        let grads = tape.backward(out);
        let eval = |mods: &[Array2<f64>]| -> f64 {
            let t = Tape::new();
            let vs: Vec<Var> = mods.iter().map(|m| t.leaf(m.clone())).collect();
            t.scalar(build(&t, &vs))
        };
        let h = 1e-5;
        for (i, m) in inputs.iter().enumerate() {
            let an = grads.get(vars[i]).cloned().unwrap_or_else(|| Array2::zeros(m.dim()));
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    let mut plus = inputs.to_vec();
                    plus[i][[r, c]] += h;
                    let mut minus = inputs.to_vec();
                    minus[i][[r, c]] -= h;
                    let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                    let a = an[[r, c]];
                    let rel = (fd - a).abs() / fd.abs().max(a.abs()).max(1e-6);
                    assert!(
                        rel < tol,
                        "input {i} [{r},{c}]: fd={fd:.8e} analytic={a:.8e} rel={rel:.3e}"
                    );
                }
            }
        }
    }

    #[test]
    fn arithmetic_and_matmul_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = rand_mat(&mut rng, 3, 4);
        let b = rand_mat(&mut rng, 3, 4);
        let w = rand_mat(&mut rng, 2, 3);
        check_grad(
            |t, v| {
                let s = t.add(v[0], v[1]);
                let m = t.mul(s, v[1]);
                let d = t.div(m, t.add_scalar(t.mul(v[0], v[0]), 2.0));
                let y = t.matmul(v[2], d);
                t.mean_all(y)
            },
            &[a, b, w],
            1e-6,
        );
    }

    #[test]
    fn shape_op_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = rand_mat(&mut rng, 4, 5);
        let b = rand_mat(&mut rng, 2, 5);
        check_grad(
            |t, v| {
                let cat = t.concat_rows(&[v[0], v[1]]);
                let sl = t.slice_rows(cat, 1, 5);
                let tr = t.transpose(sl);
                let back = t.transpose(tr);
                let cols = t.slice_cols(back, 0, 3);
                let g = t.gather_cols(cols, &[0, 2, 2, 1]);
                let r = t.reverse_cols(g);
                t.sum_all(r)
            },
            &[a, b],
            1e-6,
        );
    }

    #[test]
    fn broadcast_and_mean_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let col = rand_mat(&mut rng, 4, 1);
        let m = rand_mat(&mut rng, 4, 6);
        check_grad(
            |t, v| {
                let b = t.broadcast_col(v[0], 6);
                let s = t.mul(b, v[1]);
                let mc = t.mean_cols(s);
                t.mean_all(mc)
            },
            &[col, m],
            1e-6,
        );
    }

    #[test]
    fn pointwise_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = rand_mat(&mut rng, 3, 3);
        check_grad(
            |t, v| {
                let x = t.sigmoid(v[0]);
                let x = t.tanh(x);
                let x = t.gelu(x);
                let x = t.leaky_relu(x, 0.2);
                let x = t.exp(t.scale(x, 0.3));
                let x = t.ln_clamped(x, 1e-7);
                let x = t.abs(x);
                let x = t.sqrt_guard(x, 1e-6);
                t.mean_all(x)
            },
            &[a],
            1e-5,
        );
    }

    #[test]
    fn softmax_and_layernorm_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = rand_mat(&mut rng, 4, 4);
        let gamma = rand_mat(&mut rng, 4, 1);
        let beta = rand_mat(&mut rng, 4, 1);
        let probe = rand_mat(&mut rng, 4, 4);
        check_grad(
            |t, v| {
                let sm = t.softmax_rows(v[0]);
                let ln = t.layer_norm(sm, v[1], v[2], 1e-5);
                t.mean_all(t.mul(ln, v[3]))
            },
            &[a, gamma, beta, probe],
            1e-5,
        );
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let tape = Tape::new();
        let a = tape.leaf(rand_mat(&mut rng, 5, 7));
        let y = tape.value(tape.softmax_rows(a));
        for row in y.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn conv1d_grads_zero_pad() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = rand_mat(&mut rng, 3, 8);
        let w = rand_mat(&mut rng, 2, 9);
        let b = rand_mat(&mut rng, 2, 1);
        check_grad(
            |t, v| {
                let y = t.conv1d(v[0], v[1], v[2], 3, PadMode::Zero);
                t.mean_all(t.mul(y, y))
            },
            &[x, w, b],
            1e-5,
        );
    }

    #[test]
    fn conv1d_grads_replicate_pad() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = rand_mat(&mut rng, 2, 6);
        let w = rand_mat(&mut rng, 3, 10);
        let b = rand_mat(&mut rng, 3, 1);
        check_grad(
            |t, v| {
                let y = t.conv1d(v[0], v[1], v[2], 5, PadMode::Replicate);
                t.mean_all(t.mul(y, y))
            },
            &[x, w, b],
            1e-5,
        );
    }

    #[test]
    fn conv1d_preserves_length_and_zero_maps_to_zero() {
        let tape = Tape::new();
        let x = tape.constant(Array2::zeros((3, 70)));
        let w = tape.leaf(Array2::from_elem((4, 9), 0.37));
        let b = tape.leaf(Array2::zeros((4, 1)));
        let y = tape.value(tape.conv1d(x, w, b, 3, PadMode::Zero));
        assert_eq!(y.dim(), (4, 70));
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn graph_conv_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let nb = 4;
        let c_in = 3;
        let mut adj = Array2::from_shape_fn((nb, nb), |(i, j)| {
            if i == j || (i + 1) % nb == j { 1.0 } else { 0.0 }
        });
        for mut row in adj.rows_mut() {
            let s = row.sum();
            row.mapv_inplace(|v| v / s);
        }
        let x = rand_mat(&mut rng, c_in * nb, 5);
        let w = rand_mat(&mut rng, 2, c_in);
        let b = rand_mat(&mut rng, 2, 1);
        let adj2 = adj.clone();
        check_grad(
            move |t, v| {
                let y = t.graph_conv(v[0], v[1], v[2], &adj2);
                t.mean_all(t.mul(y, y))
            },
            &[x, w, b],
            1e-5,
        );
    }

    #[test]
    fn mask_columns_grads_and_semantics() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let x = rand_mat(&mut rng, 3, 4);
        let tok = rand_mat(&mut rng, 3, 1);
        let states = vec![1.0, 0.0, 0.5, 0.0];
        let st = states.clone();
        check_grad(
            move |t, v| {
                let y = t.mask_columns(v[0], v[1], &st);
                t.mean_all(t.mul(y, y))
            },
            &[x.clone(), tok.clone()],
            1e-6,
        );
        let tape = Tape::new();
        let xv = tape.leaf(x);
        let tv = tape.leaf(tok.clone());
        let y = tape.value(tape.mask_columns(xv, tv, &states));
        for t in [1usize, 3] {
            for r in 0..3 {
                assert_eq!(y[[r, t]], tok[[r, 0]]);
            }
        }
    }

    #[test]
    fn time_diff_padded_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = rand_mat(&mut rng, 3, 6);
        check_grad(
            |t, v| {
                let d = t.time_diff_padded(v[0]);
                t.mean_all(t.mul(d, d))
            },
            &[x],
            1e-6,
        );
        // Constant input -> zero differences everywhere.
        let tape = Tape::new();
        let c = tape.leaf(Array2::from_elem((2, 5), 3.3));
        let d = tape.value(tape.time_diff_padded(c));
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalize_groups3_grads_and_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = rand_mat(&mut rng, 6, 4).mapv(|v| v + 0.3);
        let probe = rand_mat(&mut rng, 6, 4);
        check_grad(
            |t, v| {
                let y = t.normalize_groups3(v[0]);
                t.mean_all(t.mul(y, v[1]))
            },
            &[x.clone(), probe],
            1e-5,
        );
        let tape = Tape::new();
        let xv = tape.leaf(x);
        let y = tape.value(tape.normalize_groups3(xv));
        for t in 0..4 {
            for gi in 0..2 {
                let n: f64 = (0..3).map(|a| y[[3 * gi + a, t]].powi(2)).sum::<f64>().sqrt();
                assert!((n - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bone_angles_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        // 3 bones, keep vectors well away from parallel (clamp region).
        let mut x = Array2::zeros((9, 3));
        for t in 0..3 {
            let vs = [[1.0, 0.2, 0.1], [0.1, 1.0, -0.3], [-0.2, 0.4, 1.0]];
            for (b, v) in vs.iter().enumerate() {
                let n = (v.iter().map(|a| a * a).sum::<f64>()).sqrt();
                for a in 0..3 {
                    x[[3 * b + a, t]] = v[a] / n + 0.01 * rng.random_range(-1.0..1.0);
                }
            }
        }
        check_grad(
            |t, v| {
                let th = t.bone_angles(v[0], &[(0, 1), (1, 2)]);
                t.mean_all(t.mul(th, th))
            },
            &[x],
            1e-5,
        );
    }

    #[test]
    fn huber_mean_grads_and_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let a = rand_mat(&mut rng, 3, 4).mapv(|v| v * 2.0);
        let b = rand_mat(&mut rng, 3, 4);
        check_grad(|t, v| t.huber_mean(v[0], v[1], 1.0), &[a, b], 1e-5);
        // Analytic value at |x| = pi/2 with beta = 1.
        let tape = Tape::new();
        let x = tape.leaf(Array2::from_elem((1, 1), std::f64::consts::FRAC_PI_2));
        let y = tape.leaf(Array2::zeros((1, 1)));
        let h = tape.scalar(tape.huber_mean(x, y, 1.0));
        assert!((h - (std::f64::consts::FRAC_PI_2 - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn gru_grads() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let d = 2;
        let h = 3;
        let x = rand_mat(&mut rng, d, 4);
        let mats: Vec<Array2<f64>> = (0..9)
            .map(|i| {
                if i % 3 == 0 {
                    rand_mat(&mut rng, h, d) // w
                } else if i % 3 == 1 {
                    rand_mat(&mut rng, h, h) // u
                } else {
                    rand_mat(&mut rng, h, 1) // b
                }
            })
            .collect();
        let mut inputs = vec![x];
        inputs.extend(mats);
        check_grad(
            |t, v| {
                let y = t.gru(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8], v[9]);
                t.mean_all(t.mul(y, y))
            },
            &inputs,
            1e-5,
        );
    }

    #[test]
    fn dropout_semantics() {
        let tape = Tape::new();
        let x = tape.leaf(Array2::from_elem((2, 4), 1.0));
        let mut mask = Array2::ones((2, 4));
        mask[[0, 1]] = 0.0;
        mask[[1, 3]] = 0.0;
        let y = tape.value(tape.dropout(x, &mask, 0.5));
        assert_eq!(y[[0, 0]], 2.0);
        assert_eq!(y[[0, 1]], 0.0);
        assert_eq!(y[[1, 3]], 0.0);
    }

    #[test]
    fn determinism_same_seed_same_bits() {
        let run = || -> Vec<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let tape = Tape::new();
            let a = tape.leaf(rand_mat(&mut rng, 6, 6));
            let b = tape.leaf(rand_mat(&mut rng, 6, 6));
            let y = tape.softmax_rows(tape.matmul(a, b));
            tape.value(y).iter().cloned().collect()
        };
        let x = run();
        let y = run();
        assert!(x.iter().zip(&y).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
