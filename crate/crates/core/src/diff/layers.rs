//! Dense stacks and the gated recurrent cell.

use serde::{Deserialize, Serialize};

use super::params::{Init, ParamId, ParamStore};
use super::tape::{Graph, Var};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl Dense {
    pub fn new(p: &mut ParamStore, name: &str, inputs: usize, outputs: usize) -> Result<Self> {
        Ok(Dense {
            w: p.add(&format!("{name}.w"), outputs, inputs, Init::Glorot)?,
            b: p.add(&format!("{name}.b"), outputs, 1, Init::Zeros)?,
            inputs,
            outputs,
        })
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        g.affine(self.w, Some(self.b), x)
    }
}

/// Dense layers with ELU between them; the last layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn new(p: &mut ParamStore, name: &str, inputs: usize, hidden: &[usize], outputs: usize) -> Result<Self> {
        let mut layers = Vec::with_capacity(hidden.len() + 1);
        let mut width = inputs;
        for (i, &h) in hidden.iter().chain(std::iter::once(&outputs)).enumerate() {
            layers.push(Dense::new(p, &format!("{name}.{i}"), width, h)?);
            width = h;
        }
        Ok(Mlp { layers })
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map(|l| l.outputs).unwrap_or(0)
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Var {
        let mut h = x;
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            h = l.forward(g, h);
            if i < last {
                h = g.elu(h);
            }
        }
        h
    }
}

/// GRU cell:
/// `z = σ(Wz x + Uz h + bz)`, `r = σ(Wr x + Ur h + br)`,
/// `n = tanh(Wn x + bn + r ⊙ (Un h))`, `h' = n + z ⊙ (h − n)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GruCell {
    pub wx: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub inputs: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(p: &mut ParamStore, name: &str, inputs: usize, hidden: usize) -> Result<Self> {
        Ok(GruCell {
            wx: p.add(&format!("{name}.wx"), 3 * hidden, inputs, Init::Glorot)?,
            wh: p.add(&format!("{name}.wh"), 3 * hidden, hidden, Init::Glorot)?,
            b: p.add(&format!("{name}.b"), 3 * hidden, 1, Init::Zeros)?,
            inputs,
            hidden,
        })
    }

    pub fn zero_state(&self, g: &mut Graph) -> Var {
        g.constant(vec![0.0; self.hidden])
    }

    pub fn step(&self, g: &mut Graph, x: Var, h: Var) -> Var {
        let n = self.hidden;
        let gx = g.affine(self.wx, Some(self.b), x);
        let gh = g.affine(self.wh, None, h);
        let xz = g.slice(gx, 0, 2 * n);
        let hz = g.slice(gh, 0, 2 * n);
        let zr = g.add(xz, hz);
        let zr = g.sigmoid(zr);
        let z = g.slice(zr, 0, n);
        let r = g.slice(zr, n, n);
        let xn = g.slice(gx, 2 * n, n);
        let hn = g.slice(gh, 2 * n, n);
        let rh = g.mul(r, hn);
        let cand = g.add(xn, rh);
        let cand = g.tanh(cand);
        let diff = g.sub(h, cand);
        let zd = g.mul(z, diff);
        g.add(cand, zd)
    }

    /// Run over a sequence of inputs, returning every hidden state.
    pub fn run(&self, g: &mut Graph, inputs: &[Var]) -> Vec<Var> {
        let mut h = self.zero_state(g);
        inputs
            .iter()
            .map(|&x| {
                h = self.step(g, x, h);
                h
            })
            .collect()
    }
}
