//! Per-sample kernels for convolution and pooling on `(C, H, W)` slices.

use super::layer::PoolKind;

#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Geometry {
    fn source(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> Option<(usize, usize)> {
        let y = (oy * self.stride + ky).checked_sub(self.pad)?;
        let x = (ox * self.stride + kx).checked_sub(self.pad)?;
        (y < self.h && x < self.w).then_some((y, x))
    }
}

/// Unfolds `x` into `cols` of shape `(C*k*k, oh*ow)`.
pub(crate) fn im2col(g: &Geometry, x: &[f64], cols: &mut [f64]) {
    let p = g.oh * g.ow;
    for c in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((c * g.k + ky) * g.k + kx) * p;
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        cols[row + oy * g.ow + ox] = match g.source(oy, ox, ky, kx) {
                            Some((y, xx)) => x[(c * g.h + y) * g.w + xx],
                            None => 0.0,
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates `cols` back into `dx`.
pub(crate) fn col2im(g: &Geometry, cols: &[f64], dx: &mut [f64]) {
    let p = g.oh * g.ow;
    for c in 0..g.c {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = ((c * g.k + ky) * g.k + kx) * p;
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        if let Some((y, xx)) = g.source(oy, ox, ky, kx) {
                            dx[(c * g.h + y) * g.w + xx] += cols[row + oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Pools `x` into `y` of shape `(C, oh, ow)`. Padding is ignored by max and
/// counted as zeros by sum and mean (mean divides by the full window area).
pub(crate) fn pool_forward(kind: PoolKind, g: &Geometry, x: &[f64], y: &mut [f64]) {
    let area = (g.k * g.k) as f64;
    for c in 0..g.c {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let mut acc = match kind {
                    PoolKind::Max => f64::NEG_INFINITY,
                    _ => 0.0,
                };
                for ky in 0..g.k {
                    for kx in 0..g.k {
                        if let Some((yy, xx)) = g.source(oy, ox, ky, kx) {
                            let v = x[(c * g.h + yy) * g.w + xx];
                            match kind {
                                PoolKind::Max => acc = acc.max(v),
                                _ => acc += v,
                            }
                        }
                    }
                }
                if kind == PoolKind::Mean {
                    acc /= area;
                }
                y[(c * g.oh + oy) * g.ow + ox] = acc;
            }
        }
    }
}

pub(crate) fn pool_backward(kind: PoolKind, g: &Geometry, x: &[f64], dy: &[f64], dx: &mut [f64]) {
    let area = (g.k * g.k) as f64;
    for c in 0..g.c {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let d = dy[(c * g.oh + oy) * g.ow + ox];
                match kind {
                    PoolKind::Max => {
                        let mut best: Option<(usize, f64)> = None;
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                if let Some((yy, xx)) = g.source(oy, ox, ky, kx) {
                                    let i = (c * g.h + yy) * g.w + xx;
                                    if best.is_none_or(|(_, b)| x[i] > b) {
                                        best = Some((i, x[i]));
                                    }
                                }
                            }
                        }
                        if let Some((i, _)) = best {
                            dx[i] += d;
                        }
                    }
                    PoolKind::Mean | PoolKind::Sum => {
                        let share = if kind == PoolKind::Mean { d / area } else { d };
                        for ky in 0..g.k {
                            for kx in 0..g.k {
                                if let Some((yy, xx)) = g.source(oy, ox, ky, kx) {
                                    dx[(c * g.h + yy) * g.w + xx] += share;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}
