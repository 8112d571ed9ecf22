//! Layer building blocks expressed as [`Graph`] operations.

use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut R) -> Self {
        let w = store.add_randn(format!("{name}.w"), input, output, 1.0, rng);
        let b = store.add(format!("{name}.b"), Tensor::zeros(1, output));
        Self { w, b, input, output }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let w = g.param(self.w);
        let b = g.param(self.b);
        let xw = g.matmul(x, w);
        g.add_row(xw, b)
    }
}

/// 1-D convolution along rows ("same" padding, odd kernel).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1d {
    pub w: ParamId,
    pub b: ParamId,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels_in: usize,
        channels_out: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "conv kernel must be odd");
        let w = store.add_randn(format!("{name}.w"), kernel * channels_in, channels_out, 1.0, rng);
        let b = store.add(format!("{name}.b"), Tensor::zeros(1, channels_out));
        Self { w, b, kernel }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let cols = g.shift_stack(x, self.kernel, self.kernel / 2);
        let w = g.param(self.w);
        let b = g.param(self.b);
        let y = g.matmul(cols, w);
        g.add_row(y, b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lstm {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        let wx = store.add_randn(format!("{name}.wx"), input, 4 * hidden, 1.0, rng);
        let wh = store.add_randn(format!("{name}.wh"), hidden, 4 * hidden, 1.0, rng);
        // gate order i, f, g, o; forget bias starts at 1
        let mut bias = Tensor::zeros(1, 4 * hidden);
        for v in &mut bias.data_mut()[hidden..2 * hidden] {
            *v = 1.0;
        }
        let b = store.add(format!("{name}.b"), bias);
        Self {
            wx,
            wh,
            b,
            input,
            hidden,
        }
    }

    /// One cell update from a precomputed input projection row (`1×4H`, bias included).
    pub fn step(&self, g: &mut Graph, x_proj: Var, h: Var, c: Var) -> (Var, Var) {
        let hd = self.hidden;
        let wh = g.param(self.wh);
        let hp = g.matmul(h, wh);
        let z = g.add(x_proj, hp);
        let i = g.slice_cols(z, 0, hd);
        let f = g.slice_cols(z, hd, hd);
        let u = g.slice_cols(z, 2 * hd, hd);
        let o = g.slice_cols(z, 3 * hd, hd);
        let i = g.sigmoid(i);
        let f = g.sigmoid(f);
        let u = g.tanh(u);
        let o = g.sigmoid(o);
        let fc = g.mul(f, c);
        let iu = g.mul(i, u);
        let c_new = g.add(fc, iu);
        let tc = g.tanh(c_new);
        let h_new = g.mul(o, tc);
        (h_new, c_new)
    }

    pub fn project_inputs(&self, g: &mut Graph, xs: Var) -> Var {
        let wx = g.param(self.wx);
        let b = g.param(self.b);
        let p = g.matmul(xs, wx);
        g.add_row(p, b)
    }

    /// Runs over all rows of `xs` (`T×input`) and returns `T×hidden` outputs in input order.
    pub fn run(&self, g: &mut Graph, xs: Var, reverse: bool) -> Var {
        let steps = g.value(xs).rows();
        let proj = self.project_inputs(g, xs);
        let mut h = g.input(Tensor::zeros(1, self.hidden));
        let mut c = g.input(Tensor::zeros(1, self.hidden));
        let mut outs = vec![h; steps];
        let order: Box<dyn Iterator<Item = usize>> = if reverse {
            Box::new((0..steps).rev())
        } else {
            Box::new(0..steps)
        };
        for t in order {
            let xp = g.slice_rows(proj, t, 1);
            let (h2, c2) = self.step(g, xp, h, c);
            h = h2;
            c = c2;
            outs[t] = h;
        }
        g.concat_rows(&outs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
}

impl BiLstm {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            forward: Lstm::new(store, &format!("{name}.fwd"), input, hidden, rng),
            backward: Lstm::new(store, &format!("{name}.bwd"), input, hidden, rng),
        }
    }

    /// `T×input` → `T×2·hidden`.
    pub fn run(&self, g: &mut Graph, xs: Var) -> Var {
        let f = self.forward.run(g, xs, false);
        let b = self.backward.run(g, xs, true);
        g.concat_cols(&[f, b])
    }

    pub fn output_dim(&self) -> usize {
        2 * self.forward.hidden
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gru {
    pub wx: ParamId,
    pub bx: ParamId,
    pub wh: ParamId,
    pub bh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut R) -> Self {
        Self {
            wx: store.add_randn(format!("{name}.wx"), input, 3 * hidden, 1.0, rng),
            bx: store.add(format!("{name}.bx"), Tensor::zeros(1, 3 * hidden)),
            wh: store.add_randn(format!("{name}.wh"), hidden, 3 * hidden, 1.0, rng),
            bh: store.add(format!("{name}.bh"), Tensor::zeros(1, 3 * hidden)),
            input,
            hidden,
        }
    }

    pub fn project_inputs(&self, g: &mut Graph, xs: Var) -> Var {
        let wx = g.param(self.wx);
        let bx = g.param(self.bx);
        let p = g.matmul(xs, wx);
        g.add_row(p, bx)
    }

    /// Gate order r, z, n; the reset gate scales the recurrent candidate term.
    pub fn step(&self, g: &mut Graph, x_proj: Var, h: Var) -> Var {
        let hd = self.hidden;
        let wh = g.param(self.wh);
        let bh = g.param(self.bh);
        let hp = g.matmul(h, wh);
        let hp = g.add_row(hp, bh);
        let xr = g.slice_cols(x_proj, 0, hd);
        let xz = g.slice_cols(x_proj, hd, hd);
        let xn = g.slice_cols(x_proj, 2 * hd, hd);
        let hr = g.slice_cols(hp, 0, hd);
        let hz = g.slice_cols(hp, hd, hd);
        let hn = g.slice_cols(hp, 2 * hd, hd);
        let r = g.add(xr, hr);
        let r = g.sigmoid(r);
        let z = g.add(xz, hz);
        let z = g.sigmoid(z);
        let rh = g.mul(r, hn);
        let n = g.add(xn, rh);
        let n = g.tanh(n);
        // h' = n + z ⊙ (h − n)
        let d = g.sub(h, n);
        let zd = g.mul(z, d);
        g.add(n, zd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn lstm_output_shape_and_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let bi = BiLstm::new(&mut store, "bi", 3, 4, &mut rng);
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::randn(6, 3, 1.0, &mut rng));
        let y = bi.run(&mut g, x);
        assert_eq!(g.value(y).shape(), (6, 8));
    }

    #[test]
    fn conv_same_padding_keeps_length() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let conv = Conv1d::new(&mut store, "c", 2, 5, 5, &mut rng);
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::randn(7, 2, 1.0, &mut rng));
        let y = conv.forward(&mut g, x);
        assert_eq!(g.value(y).shape(), (7, 5));
    }
}
