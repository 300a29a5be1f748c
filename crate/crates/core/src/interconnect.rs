//! Block-diagram composition of state-space components.
//!
//! Components are stacked block-diagonally. Each component input is a sum of
//! gained component outputs and external inputs; the network outputs are
//! sums of the same kind. Algebraic loops are resolved by solving
//! `(I − M D) u = M C x + N w`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::lti::StateSpace;

/// Handle to a component added to a [`Network`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Node(usize);

/// Signal feeding a component input or network output.
#[derive(Debug, Clone)]
pub enum Source {
    /// `gain · y_node`
    Output(Node, DMatrix<f64>),
    /// `gain · w`, with `w` the external input vector.
    External(DMatrix<f64>),
}

impl Source {
    pub fn output(node: Node, gain: DMatrix<f64>) -> Self {
        Source::Output(node, gain)
    }

    pub fn external(gain: DMatrix<f64>) -> Self {
        Source::External(gain)
    }
}

#[derive(Debug, Clone)]
struct Component {
    name: String,
    ss: StateSpace,
    inputs: Vec<Source>,
}

#[derive(Debug, Clone)]
pub struct Network {
    external: usize,
    components: Vec<Component>,
    outputs: Vec<Source>,
    output_rows: usize,
}

/// Composed system plus the named state blocks in order.
#[derive(Debug, Clone)]
pub struct Composite {
    pub ss: StateSpace,
    pub layout: Vec<(String, usize)>,
}

impl Network {
    pub fn new(external_inputs: usize) -> Self {
        Self {
            external: external_inputs,
            components: Vec::new(),
            outputs: Vec::new(),
            output_rows: 0,
        }
    }

    pub fn add(&mut self, name: &str, ss: StateSpace) -> Node {
        self.components.push(Component {
            name: name.to_string(),
            ss,
            inputs: Vec::new(),
        });
        Node(self.components.len() - 1)
    }

    /// Adds `source` to the input of `node`.
    pub fn feed(&mut self, node: Node, source: Source) -> Result<()> {
        let rows = self.components[node.0].ss.m();
        self.check_source(&source, rows)?;
        self.components[node.0].inputs.push(source);
        Ok(())
    }

    /// Adds `source` to the network output (all output sources share one row count).
    pub fn output(&mut self, source: Source) -> Result<()> {
        let rows = match &source {
            Source::Output(_, g) | Source::External(g) => g.nrows(),
        };
        if !self.outputs.is_empty() && rows != self.output_rows {
            return Err(Error::DimensionMismatch("network output row count changed".into()));
        }
        self.check_source(&source, rows)?;
        self.output_rows = rows;
        self.outputs.push(source);
        Ok(())
    }

    fn check_source(&self, source: &Source, rows: usize) -> Result<()> {
        let (gain, cols) = match source {
            Source::Output(n, g) => (g, self.components[n.0].ss.p()),
            Source::External(g) => (g, self.external),
        };
        if gain.shape() != (rows, cols) {
            return Err(Error::DimensionMismatch(format!(
                "gain is {}x{}, expected {}x{}",
                gain.nrows(),
                gain.ncols(),
                rows,
                cols
            )));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Composite> {
        let k = self.components.len();
        let mut x_off = vec![0usize; k + 1];
        let mut u_off = vec![0usize; k + 1];
        let mut y_off = vec![0usize; k + 1];
        for (i, c) in self.components.iter().enumerate() {
            x_off[i + 1] = x_off[i] + c.ss.n();
            u_off[i + 1] = u_off[i] + c.ss.m();
            y_off[i + 1] = y_off[i] + c.ss.p();
        }
        let (nx, nu, ny) = (x_off[k], u_off[k], y_off[k]);

        let mut a = DMatrix::zeros(nx, nx);
        let mut b = DMatrix::zeros(nx, nu);
        let mut c = DMatrix::zeros(ny, nx);
        let mut d = DMatrix::zeros(ny, nu);
        for (i, comp) in self.components.iter().enumerate() {
            let s = &comp.ss;
            a.view_mut((x_off[i], x_off[i]), (s.n(), s.n())).copy_from(s.a());
            b.view_mut((x_off[i], u_off[i]), (s.n(), s.m())).copy_from(s.b());
            c.view_mut((y_off[i], x_off[i]), (s.p(), s.n())).copy_from(s.c());
            d.view_mut((y_off[i], u_off[i]), (s.p(), s.m())).copy_from(s.d());
        }

        // u = M y + N w
        let mut m = DMatrix::zeros(nu, ny);
        let mut n = DMatrix::zeros(nu, self.external);
        for (i, comp) in self.components.iter().enumerate() {
            let rows = comp.ss.m();
            for src in &comp.inputs {
                match src {
                    Source::Output(node, g) => {
                        let j = node.0;
                        let mut blk = m.view_mut((u_off[i], y_off[j]), (rows, g.ncols()));
                        blk += g;
                    }
                    Source::External(g) => {
                        let mut blk = n.view_mut((u_off[i], 0), (rows, self.external));
                        blk += g;
                    }
                }
            }
        }
        let mut oy = DMatrix::zeros(self.output_rows, ny);
        let mut ow = DMatrix::zeros(self.output_rows, self.external);
        for src in &self.outputs {
            match src {
                Source::Output(node, g) => {
                    let j = node.0;
                    let mut blk = oy.view_mut((0, y_off[j]), (self.output_rows, g.ncols()));
                    blk += g;
                }
                Source::External(g) => ow += g,
            }
        }

        let lhs = DMatrix::identity(nu, nu) - &m * &d;
        let f = if nu == 0 {
            DMatrix::zeros(0, 0)
        } else {
            lhs.try_inverse()
                .ok_or_else(|| Error::NumericalFailure("ill-posed algebraic loop".into()))?
        };
        // u = Ux x + Uw w
        let ux = &f * &m * &c;
        let uw = &f * &n;
        let a_cl = &a + &b * &ux;
        let b_cl = &b * &uw;
        let c_cl = &oy * (&c + &d * &ux);
        let d_cl = &oy * &d * &uw + &ow;
        let layout = self
            .components
            .iter()
            .map(|c| (c.name.clone(), c.ss.n()))
            .collect();
        Ok(Composite {
            ss: StateSpace::new(a_cl, b_cl, c_cl, d_cl)?,
            layout,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lti::series;
    use num_complex::Complex64;

    fn scalar(a: f64, b: f64, c: f64, d: f64) -> StateSpace {
        StateSpace::from_rows(1, 1, 1, &[a], &[b], &[c], &[d]).unwrap()
    }

    fn one(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn chain_matches_series() {
        let s1 = scalar(0.3, 1.0, 2.0, 0.5);
        let s2 = scalar(-0.4, 0.7, 1.0, 1.0);
        let mut net = Network::new(1);
        let n1 = net.add("s1", s1.clone());
        let n2 = net.add("s2", s2.clone());
        net.feed(n1, Source::external(one(1.0))).unwrap();
        net.feed(n2, Source::output(n1, one(1.0))).unwrap();
        net.output(Source::output(n2, one(1.0))).unwrap();
        let got = net.build().unwrap().ss;
        let want = series(&s2, &s1).unwrap();
        let z = Complex64::new(0.2, 1.1);
        assert!((got.eval_tf(z).unwrap() - want.eval_tf(z).unwrap()).norm() < 1e-12);
    }

    #[test]
    fn static_feedback_loop() {
        // y = 2 (w + 0.25 y)  =>  y = 2w / 0.5 = 4w
        let mut net = Network::new(1);
        let g = net.add("g", StateSpace::static_gain(one(2.0)).unwrap());
        net.feed(g, Source::external(one(1.0))).unwrap();
        net.feed(g, Source::output(g, one(0.25))).unwrap();
        net.output(Source::output(g, one(1.0))).unwrap();
        let s = net.build().unwrap().ss;
        assert!((s.d()[(0, 0)] - 4.0).abs() < 1e-14);
    }
}
