//! Spatial kernels over NHWC tensors: 2-D cross-correlation and pooling.
//!
//! The convolution accumulates every output in the fixed order
//! (kernel row, kernel column, input channel), skipping taps that fall in the
//! padding, so results match a naive nested loop bit for bit.

use serde::{Deserialize, Serialize};

use super::AutodiffError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Padding {
    /// Output extent `ceil(input / stride)`; padding split evenly with the
    /// odd cell on the trailing side.
    Same,
    /// No padding.
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: Padding,
}

impl ConvSpec {
    pub fn same() -> Self {
        ConvSpec {
            stride: (1, 1),
            dilation: (1, 1),
            padding: Padding::Same,
        }
    }

    pub fn valid() -> Self {
        ConvSpec {
            padding: Padding::Valid,
            ..ConvSpec::same()
        }
    }

    pub fn with_stride(mut self, sh: usize, sw: usize) -> Self {
        self.stride = (sh, sw);
        self
    }

    pub fn with_dilation(mut self, dh: usize, dw: usize) -> Self {
        self.dilation = (dh, dw);
        self
    }
}

/// Output extent and leading pad along one axis.
pub fn output_extent(
    input: usize,
    kernel: usize,
    stride: usize,
    dilation: usize,
    padding: Padding,
) -> Result<(usize, usize), AutodiffError> {
    if stride == 0 || dilation == 0 || kernel == 0 {
        return Err(AutodiffError::Shape("stride, dilation and kernel must be positive".into()));
    }
    let span = dilation * (kernel - 1) + 1;
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let needed = ((out - 1) * stride + span).saturating_sub(input);
            Ok((out, needed / 2))
        }
        Padding::Valid => {
            if span > input {
                return Err(AutodiffError::Shape(format!(
                    "kernel span {span} larger than input extent {input}"
                )));
            }
            Ok(((input - span) / stride + 1, 0))
        }
    }
}

/// Fully resolved geometry of one convolution or pooling call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Geometry {
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub kh: usize,
    pub kw: usize,
    pub cout: usize,
    pub oh: usize,
    pub ow: usize,
    pub pad_top: usize,
    pub pad_left: usize,
    pub spec: ConvSpec,
}

impl Geometry {
    pub fn new(
        input: [usize; 4],
        kernel: (usize, usize),
        cout: usize,
        spec: ConvSpec,
    ) -> Result<Self, AutodiffError> {
        let [n, h, w, cin] = input;
        let (oh, pad_top) = output_extent(h, kernel.0, spec.stride.0, spec.dilation.0, spec.padding)?;
        let (ow, pad_left) = output_extent(w, kernel.1, spec.stride.1, spec.dilation.1, spec.padding)?;
        Ok(Geometry {
            n,
            h,
            w,
            cin,
            kh: kernel.0,
            kw: kernel.1,
            cout,
            oh,
            ow,
            pad_top,
            pad_left,
            spec,
        })
    }

    #[inline]
    fn in_row(&self, o: usize, k: usize) -> Option<usize> {
        let r = (o * self.spec.stride.0 + k * self.spec.dilation.0).checked_sub(self.pad_top)?;
        (r < self.h).then_some(r)
    }

    #[inline]
    fn in_col(&self, o: usize, k: usize) -> Option<usize> {
        let c = (o * self.spec.stride.1 + k * self.spec.dilation.1).checked_sub(self.pad_left)?;
        (c < self.w).then_some(c)
    }

    pub fn output_len(&self) -> usize {
        self.n * self.oh * self.ow * self.cout
    }
}

#[inline]
fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    for (y, v) in acc.iter_mut().zip(x) {
        *y += a * v;
    }
}

/// `x`: [n,h,w,cin], `k`: [kh,kw,cin,cout] -> [n,oh,ow,cout].
pub fn conv_forward(g: &Geometry, x: &[f64], k: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; g.output_len()];
    let (cin, cout) = (g.cin, g.cout);
    for n in 0..g.n {
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                let o = ((n * g.oh + oh) * g.ow + ow) * cout;
                let acc = &mut out[o..o + cout];
                for ki in 0..g.kh {
                    let Some(ih) = g.in_row(oh, ki) else { continue };
                    for kj in 0..g.kw {
                        let Some(iw) = g.in_col(ow, kj) else { continue };
                        let xi = ((n * g.h + ih) * g.w + iw) * cin;
                        let xrow = &x[xi..xi + cin];
                        let kbase = (ki * g.kw + kj) * cin * cout;
                        for (ci, &xv) in xrow.iter().enumerate() {
                            // A zero tap leaves the (never negative-zero) accumulator unchanged.
                            if xv == 0.0 {
                                continue;
                            }
                            let ko = kbase + ci * cout;
                            axpy(acc, xv, &k[ko..ko + cout]);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradients with respect to input and kernel.
pub fn conv_backward(g: &Geometry, x: &[f64], k: &[f64], dy: &[f64], want_dx: bool, want_dk: bool) -> (Vec<f64>, Vec<f64>) {
    let (cin, cout) = (g.cin, g.cout);
    let mut dx = if want_dx { vec![0.0; x.len()] } else { Vec::new() };
    let mut dk = if want_dk { vec![0.0; k.len()] } else { Vec::new() };
    // Kernel transposed to [kh,kw,cout,cin] so the input gradient is an axpy over cin.
    let kt = if want_dx {
        let mut kt = vec![0.0; k.len()];
        for tap in 0..g.kh * g.kw {
            for ci in 0..cin {
                for co in 0..cout {
                    kt[(tap * cout + co) * cin + ci] = k[(tap * cin + ci) * cout + co];
                }
            }
        }
        kt
    } else {
        Vec::new()
    };
    for n in 0..g.n {
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                let o = ((n * g.oh + oh) * g.ow + ow) * cout;
                let dyrow = &dy[o..o + cout];
                if dyrow.iter().all(|&v| v == 0.0) {
                    continue;
                }
                for ki in 0..g.kh {
                    let Some(ih) = g.in_row(oh, ki) else { continue };
                    for kj in 0..g.kw {
                        let Some(iw) = g.in_col(ow, kj) else { continue };
                        let xi = ((n * g.h + ih) * g.w + iw) * cin;
                        let tap = ki * g.kw + kj;
                        if want_dk {
                            let xrow = &x[xi..xi + cin];
                            for (ci, &xv) in xrow.iter().enumerate() {
                                if xv == 0.0 {
                                    continue;
                                }
                                let ko = (tap * cin + ci) * cout;
                                axpy(&mut dk[ko..ko + cout], xv, dyrow);
                            }
                        }
                        if want_dx {
                            let dxrow = &mut dx[xi..xi + cin];
                            for (co, &gv) in dyrow.iter().enumerate() {
                                if gv == 0.0 {
                                    continue;
                                }
                                let ko = (tap * cout + co) * cin;
                                axpy(dxrow, gv, &kt[ko..ko + cin]);
                            }
                        }
                    }
                }
            }
        }
    }
    (dx, dk)
}

/// Max pooling; returns the output and, per output element, the flat input
/// index it was taken from (first maximum wins).
pub fn maxpool_forward(g: &Geometry, x: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let c = g.cin;
    let mut out = vec![f64::NEG_INFINITY; g.n * g.oh * g.ow * c];
    let mut arg = vec![usize::MAX; out.len()];
    for n in 0..g.n {
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                let o = ((n * g.oh + oh) * g.ow + ow) * c;
                for ki in 0..g.kh {
                    let Some(ih) = g.in_row(oh, ki) else { continue };
                    for kj in 0..g.kw {
                        let Some(iw) = g.in_col(ow, kj) else { continue };
                        let xi = ((n * g.h + ih) * g.w + iw) * c;
                        for ch in 0..c {
                            let v = x[xi + ch];
                            if v > out[o + ch] || arg[o + ch] == usize::MAX {
                                out[o + ch] = v;
                                arg[o + ch] = xi + ch;
                            }
                        }
                    }
                }
            }
        }
    }
    (out, arg)
}

/// Average pooling over the in-bounds cells of each window.
pub fn avgpool_forward(g: &Geometry, x: &[f64]) -> Vec<f64> {
    let c = g.cin;
    let mut out = vec![0.0; g.n * g.oh * g.ow * c];
    for n in 0..g.n {
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                let o = ((n * g.oh + oh) * g.ow + ow) * c;
                let mut count = 0usize;
                for ki in 0..g.kh {
                    let Some(ih) = g.in_row(oh, ki) else { continue };
                    for kj in 0..g.kw {
                        let Some(iw) = g.in_col(ow, kj) else { continue };
                        let xi = ((n * g.h + ih) * g.w + iw) * c;
                        axpy(&mut out[o..o + c], 1.0, &x[xi..xi + c]);
                        count += 1;
                    }
                }
                let inv = 1.0 / count as f64;
                for v in &mut out[o..o + c] {
                    *v *= inv;
                }
            }
        }
    }
    out
}

pub fn avgpool_backward(g: &Geometry, dy: &[f64]) -> Vec<f64> {
    let c = g.cin;
    let mut dx = vec![0.0; g.n * g.h * g.w * c];
    for n in 0..g.n {
        for oh in 0..g.oh {
            for ow in 0..g.ow {
                let o = ((n * g.oh + oh) * g.ow + ow) * c;
                let taps: Vec<usize> = (0..g.kh)
                    .filter_map(|ki| g.in_row(oh, ki))
                    .flat_map(|ih| (0..g.kw).filter_map(move |kj| g.in_col(ow, kj).map(|iw| (ih, iw))))
                    .map(|(ih, iw)| ((n * g.h + ih) * g.w + iw) * c)
                    .collect();
                let inv = 1.0 / taps.len() as f64;
                for xi in taps {
                    axpy(&mut dx[xi..xi + c], inv, &dy[o..o + c]);
                }
            }
        }
    }
    dx
}
