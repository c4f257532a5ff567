use crate::error::{Error, Result};
use crate::scalar::{gemm, Scalar};

use super::tape::{GradBuf, Op, Tape, Var};
use super::value::Tensor;

/// Explicit zero padding on each border of the two spatial axes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Padding2d {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding2d {
    pub fn symmetric(vertical: usize, horizontal: usize) -> Self {
        Padding2d { top: vertical, bottom: vertical, left: horizontal, right: horizontal }
    }

    /// "Same" padding along the width for a stride-1 kernel of width `kw`;
    /// an odd total puts the extra column on the left.
    pub fn same_width(kw: usize) -> Self {
        let total = kw.saturating_sub(1);
        let right = total / 2;
        Padding2d { top: 0, bottom: 0, left: total - right, right }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub padding: Padding2d,
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Conv2dSpec { stride: (1, 1), padding: Padding2d::default(), groups: 1 }
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: (usize, usize),
    pad: Padding2d,
    groups: usize,
}

impl ConvGeom {
    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }

    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }

    fn patch(&self) -> usize {
        self.cin_g() * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    fn columns(&self) -> usize {
        self.batch * self.positions()
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct PoolGeom {
    batch_channels: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
}

fn out_extent(input: usize, pad: usize, kernel: usize, stride: usize) -> Option<usize> {
    let padded = input + pad;
    (stride > 0 && kernel > 0 && padded >= kernel).then(|| (padded - kernel) / stride + 1)
}

/// Valid output columns `lo..hi` for kernel column `j` when stride is 1.
fn valid_span(geo: &ConvGeom, j: usize) -> (usize, usize) {
    let lo = geo.pad.left.saturating_sub(j).min(geo.wo);
    let hi = (geo.w + geo.pad.left).saturating_sub(j).min(geo.wo).max(lo);
    (lo, hi)
}

/// Unfolds group `g` of `x` into a `[patch × (batch·positions)]` matrix.
fn im2col<S: Scalar>(x: &[S], geo: &ConvGeom, g: usize) -> Vec<S> {
    let mut cols = Vec::with_capacity(geo.patch() * geo.columns());
    let (sh, sw) = geo.stride;
    for ci in 0..geo.cin_g() {
        let c = g * geo.cin_g() + ci;
        for i in 0..geo.kh {
            for j in 0..geo.kw {
                let (lo, hi) = valid_span(geo, j);
                for b in 0..geo.batch {
                    for oh in 0..geo.ho {
                        let start = cols.len();
                        let ih = (oh * sh + i) as isize - geo.pad.top as isize;
                        if ih < 0 || ih >= geo.h as isize {
                            cols.resize(start + geo.wo, S::zero());
                            continue;
                        }
                        let src = &x[((b * geo.cin + c) * geo.h + ih as usize) * geo.w..][..geo.w];
                        if sw == 1 {
                            cols.resize(start + lo, S::zero());
                            if hi > lo {
                                cols.extend_from_slice(&src[lo + j - geo.pad.left..hi + j - geo.pad.left]);
                            }
                            cols.resize(start + geo.wo, S::zero());
                        } else {
                            cols.extend((0..geo.wo).map(|ow| {
                                let iw = (ow * sw + j) as isize - geo.pad.left as isize;
                                if iw >= 0 && iw < geo.w as isize {
                                    src[iw as usize]
                                } else {
                                    S::zero()
                                }
                            }));
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters column gradients back into `dx`.
fn col2im<S: Scalar>(cols: &[S], geo: &ConvGeom, g: usize, dx: &mut [S]) {
    let cols_per_row = geo.columns();
    let positions = geo.positions();
    let (sh, sw) = geo.stride;
    for ci in 0..geo.cin_g() {
        let c = g * geo.cin_g() + ci;
        for i in 0..geo.kh {
            for j in 0..geo.kw {
                let row = (ci * geo.kh + i) * geo.kw + j;
                let src = &cols[row * cols_per_row..(row + 1) * cols_per_row];
                let (lo, hi) = valid_span(geo, j);
                for b in 0..geo.batch {
                    for oh in 0..geo.ho {
                        let ih = (oh * sh + i) as isize - geo.pad.top as isize;
                        if ih < 0 || ih >= geo.h as isize {
                            continue;
                        }
                        let base = b * positions + oh * geo.wo;
                        let dst = &mut dx[((b * geo.cin + c) * geo.h + ih as usize) * geo.w..][..geo.w];
                        if sw == 1 {
                            if hi > lo {
                                let d = &mut dst[lo + j - geo.pad.left..hi + j - geo.pad.left];
                                d.iter_mut().zip(&src[base + lo..base + hi]).for_each(|(d, &s)| *d += s);
                            }
                            continue;
                        }
                        for ow in 0..geo.wo {
                            let iw = (ow * sw + j) as isize - geo.pad.left as isize;
                            if iw >= 0 && iw < geo.w as isize {
                                dst[iw as usize] += src[base + ow];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl<S: Scalar> Tape<S> {
    /// Grouped 2-D cross-correlation (no kernel flip).
    ///
    /// `x: [B, Cin, H, W]`, `kernel: [Cout, Cin/groups, kh, kw]`. Output extent
    /// per axis is `floor((in + pad_lo + pad_hi - k) / stride) + 1`.
    pub fn conv2d(&mut self, x: Var, kernel: Var, spec: Conv2dSpec) -> Result<Var> {
        self.check(x)?;
        self.check(kernel)?;
        let (xs, ks) = (self.value(x).shape(), self.value(kernel).shape());
        if xs.len() != 4 || ks.len() != 4 {
            return Err(Error::shape("conv2d", format!("input {xs:?}, kernel {ks:?}")));
        }
        let groups = spec.groups;
        let (batch, cin, h, w) = (xs[0], xs[1], xs[2], xs[3]);
        let (cout, kcin, kh, kw) = (ks[0], ks[1], ks[2], ks[3]);
        if groups == 0 || cin % groups != 0 || cout % groups != 0 {
            return Err(Error::shape(
                "conv2d",
                format!("channels in {cin} / out {cout} not divisible by {groups} groups"),
            ));
        }
        if kcin != cin / groups {
            return Err(Error::shape(
                "conv2d",
                format!("kernel expects {kcin} input channels per group, input has {}", cin / groups),
            ));
        }
        let p = spec.padding;
        let ho = out_extent(h, p.top + p.bottom, kh, spec.stride.0);
        let wo = out_extent(w, p.left + p.right, kw, spec.stride.1);
        let (Some(ho), Some(wo)) = (ho, wo) else {
            return Err(Error::shape(
                "conv2d",
                format!("kernel {kh}x{kw} does not fit padded input {h}x{w} with {p:?}"),
            ));
        };
        let geo = ConvGeom { batch, cin, h, w, cout, kh, kw, ho, wo, stride: spec.stride, pad: p, groups };

        let (k, n, cout_g) = (geo.patch(), geo.columns(), geo.cout_g());
        let positions = geo.positions();
        let xd = self.value(x).data();
        let kd = self.value(kernel).data();
        // the kernel gradient reuses the unfolded input
        let keep = self.requires_grad(kernel);
        let mut saved = Vec::new();
        let mut prods = Vec::with_capacity(groups);
        for g in 0..groups {
            let cols = im2col(xd, &geo, g);
            let wg = &kd[g * cout_g * k..(g + 1) * cout_g * k];
            let mut prod = vec![S::zero(); cout_g * n];
            gemm(cout_g, k, n, wg, false, &cols, false, S::zero(), &mut prod);
            prods.push(prod);
            if keep {
                saved.push(cols);
            }
        }
        let mut out = Vec::with_capacity(batch * cout * positions);
        for b in 0..batch {
            for prod in &prods {
                for co in 0..cout_g {
                    out.extend_from_slice(&prod[co * n + b * positions..][..positions]);
                }
            }
        }
        let value = Tensor::from_parts(vec![batch, cout, ho, wo], out);
        self.push("conv2d", value, &[x, kernel], Op::Conv2d { x, w: kernel, geom: geo, cols: saved })
    }

    /// Non-overlapping average pooling with window = stride = `(kh, kw)`;
    /// trailing rows/columns that do not fill a window are dropped.
    pub fn avg_pool2d(&mut self, x: Var, kh: usize, kw: usize) -> Result<Var> {
        self.check(x)?;
        let xs = self.value(x).shape();
        if xs.len() != 4 || kh == 0 || kw == 0 || xs[2] < kh || xs[3] < kw {
            return Err(Error::shape("avg_pool2d", format!("input {xs:?}, window {kh}x{kw}")));
        }
        let geom = PoolGeom {
            batch_channels: xs[0] * xs[1],
            h: xs[2],
            w: xs[3],
            kh,
            kw,
            ho: xs[2] / kh,
            wo: xs[3] / kw,
        };
        let scale = S::one() / S::of((kh * kw) as f64);
        let xd = self.value(x).data();
        let mut out = vec![S::zero(); geom.batch_channels * geom.ho * geom.wo];
        for bc in 0..geom.batch_channels {
            let plane = &xd[bc * geom.h * geom.w..][..geom.h * geom.w];
            for oh in 0..geom.ho {
                for ow in 0..geom.wo {
                    let mut acc = S::zero();
                    for i in 0..kh {
                        let row = &plane[(oh * kh + i) * geom.w + ow * kw..][..kw];
                        acc += row.iter().copied().sum();
                    }
                    out[(bc * geom.ho + oh) * geom.wo + ow] = acc * scale;
                }
            }
        }
        let value = Tensor::from_parts(vec![xs[0], xs[1], geom.ho, geom.wo], out);
        self.push("avg_pool2d", value, &[x], Op::AvgPool2d { x, geom })
    }
}

pub(super) fn conv2d_backward<S: Scalar>(
    x: Var,
    w: Var,
    geo: &ConvGeom,
    saved: &[Vec<S>],
    g: &[S],
    buf: &mut GradBuf<'_, S>,
) {
    let (want_x, want_w) = (buf.wants(x), buf.wants(w));
    if !want_x && !want_w {
        return;
    }
    let (k, n, cout_g) = (geo.patch(), geo.columns(), geo.cout_g());
    let positions = geo.positions();
    let xd = buf.value(x).data();
    let wd = buf.value(w).data();
    let mut dy_g = vec![S::zero(); cout_g * n];
    let mut dcols = if want_x { vec![S::zero(); k * n] } else { Vec::new() };
    let mut dw = want_w.then(|| vec![S::zero(); wd.len()]);
    let mut dx = want_x.then(|| vec![S::zero(); xd.len()]);
    for grp in 0..geo.groups {
        for co in 0..cout_g {
            let c = grp * cout_g + co;
            for b in 0..geo.batch {
                let src = &g[(b * geo.cout + c) * positions..][..positions];
                dy_g[co * n + b * positions..][..positions].copy_from_slice(src);
            }
        }
        if let Some(dw) = dw.as_mut() {
            let recomputed;
            let cols = match saved.get(grp) {
                Some(c) => c,
                None => {
                    recomputed = im2col(xd, geo, grp);
                    &recomputed
                }
            };
            let dwg = &mut dw[grp * cout_g * k..(grp + 1) * cout_g * k];
            gemm(cout_g, n, k, &dy_g, false, cols, true, S::zero(), dwg);
        }
        if let Some(dx) = dx.as_mut() {
            let wg = &wd[grp * cout_g * k..(grp + 1) * cout_g * k];
            gemm(k, cout_g, n, wg, true, &dy_g, false, S::zero(), &mut dcols);
            col2im(&dcols, geo, grp, dx);
        }
    }
    if let Some(dw) = dw {
        buf.add(w, dw);
    }
    if let Some(dx) = dx {
        buf.add(x, dx);
    }
}

pub(super) fn avg_pool_backward<S: Scalar>(x: Var, geom: &PoolGeom, g: &[S], buf: &mut GradBuf<'_, S>) {
    if !buf.wants(x) {
        return;
    }
    let scale = S::one() / S::of((geom.kh * geom.kw) as f64);
    let mut dx = vec![S::zero(); geom.batch_channels * geom.h * geom.w];
    for bc in 0..geom.batch_channels {
        let plane = &mut dx[bc * geom.h * geom.w..][..geom.h * geom.w];
        for oh in 0..geom.ho {
            for ow in 0..geom.wo {
                let d = g[(bc * geom.ho + oh) * geom.wo + ow] * scale;
                for i in 0..geom.kh {
                    plane[(oh * geom.kh + i) * geom.w + ow * geom.kw..][..geom.kw]
                        .iter_mut()
                        .for_each(|v| *v = d);
                }
            }
        }
    }
    buf.add(x, dx);
}
