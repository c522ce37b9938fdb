//! Finite-difference verification of analytic gradients.

use super::{AutodiffError, DropoutKey, Graph, Mode, Tensor, Var};

/// One coordinate whose analytic and numeric derivatives disagree.
#[derive(Debug, Clone, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub coord: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub name: String,
    pub tolerance: f64,
    pub checked: usize,
    /// Coordinates sitting on a kink (one-sided differences disagree).
    pub non_differentiable: Vec<(usize, usize)>,
    /// Largest relative error seen, including coordinates that passed only
    /// because the difference was within central-difference roundoff.
    pub max_rel_err: f64,
    pub failures: Vec<Mismatch>,
    /// Operation names recorded on the graph.
    pub ops: Vec<String>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty() && self.checked > 0
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
}

/// Central-difference checker.
///
/// Step size is `1e-5 * max(1, |x_i|)`. A coordinate is flagged as
/// non-differentiable and excluded when the two one-sided differences differ
/// by at least the central-difference error, which is what a kink inside the
/// step produces. Differences below the rounding noise of the loss itself
/// (`100 * eps * |f| / h`) are not counted as failures.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub tolerance: f64,
    /// Check at most this many coordinates per input, evenly strided.
    pub max_coords: Option<usize>,
    pub mode: Mode,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck {
            tolerance: 1e-4,
            max_coords: None,
            mode: Mode::Train,
        }
    }
}

impl GradCheck {
    pub fn new(tolerance: f64) -> Self {
        GradCheck {
            tolerance,
            ..GradCheck::default()
        }
    }

    pub fn max_coords(mut self, n: usize) -> Self {
        self.max_coords = Some(n);
        self
    }

    fn graph(&self) -> Graph {
        Graph::new(self.mode).with_dropout_key(DropoutKey {
            seed: 7,
            step: 1,
            example_offset: 0,
        })
    }

    fn eval<F>(&self, f: &F, inputs: &[Tensor]) -> Result<f64, AutodiffError>
    where
        F: Fn(&mut Graph, &[Var]) -> Result<Var, AutodiffError>,
    {
        let mut g = self.graph();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        Ok(g.value(out).item())
    }

    /// Checks `f` (inputs -> scalar) with respect to every input.
    pub fn run<F>(&self, name: &str, inputs: &[Tensor], f: F) -> Result<GradCheckReport, AutodiffError>
    where
        F: Fn(&mut Graph, &[Var]) -> Result<Var, AutodiffError>,
    {
        let mut g = self.graph();
        let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        g.backward(out)?;
        let mut ops: Vec<String> = (0..g.len()).map(|i| g.op_name(Var(i)).to_string()).collect();
        ops.sort();
        ops.dedup();
        ops.retain(|o| o != "leaf");
        let analytic: Vec<Tensor> = vars.iter().map(|v| g.grad(*v)).collect();

        let mut report = GradCheckReport {
            name: name.to_string(),
            tolerance: self.tolerance,
            checked: 0,
            non_differentiable: Vec::new(),
            max_rel_err: 0.0,
            failures: Vec::new(),
            ops,
        };
        let f0 = g.value(out).item();
        let mut probe = inputs.to_vec();
        for (input, grad) in analytic.iter().enumerate() {
            let n = probe[input].len();
            let stride = match self.max_coords {
                Some(m) if m < n => n.div_ceil(m),
                _ => 1,
            };
            for coord in (0..n).step_by(stride) {
                let x = probe[input].data()[coord];
                let h = 1e-5 * x.abs().max(1.0);
                probe[input].data_mut()[coord] = x + h;
                let fp = self.eval(&f, &probe)?;
                probe[input].data_mut()[coord] = x - h;
                let fm = self.eval(&f, &probe)?;
                probe[input].data_mut()[coord] = x;

                let a = grad.data()[coord];
                let numeric = (fp - fm) / (2.0 * h);
                let err = relative_error(a, numeric);
                let diff = (a - numeric).abs();
                let noise = 100.0 * f64::EPSILON * fp.abs().max(fm.abs()).max(f0.abs()) / h;
                if err <= self.tolerance || diff <= noise {
                    report.checked += 1;
                    report.max_rel_err = report.max_rel_err.max(err);
                    continue;
                }
                let forward = (fp - f0) / h;
                let backward = (f0 - fm) / h;
                if (forward - backward).abs() >= diff {
                    report.non_differentiable.push((input, coord));
                    continue;
                }
                report.checked += 1;
                report.max_rel_err = report.max_rel_err.max(err);
                report.failures.push(Mismatch {
                    input,
                    coord,
                    analytic: a,
                    numeric,
                    rel_err: err,
                });
            }
        }
        Ok(report)
    }
}

/// Single-input convenience wrapper around [`GradCheck::run`].
pub fn grad_check<F>(x: &Tensor, tolerance: f64, f: F) -> Result<GradCheckReport, AutodiffError>
where
    F: Fn(&mut Graph, Var) -> Result<Var, AutodiffError>,
{
    GradCheck::new(tolerance).run("f", std::slice::from_ref(x), |g, v| f(g, v[0]))
}
