//! Slice-level forward and backward kernels used by the graph ops.

use crate::real::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    fn pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn col_rows(&self) -> usize {
        self.c_in * self.k * self.k
    }

    fn out_plane(&self) -> usize {
        self.h_out * self.w_out
    }
}

fn im2col<T: Real>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let plane = g.out_plane();
    let (h, w, k, s, p) = (g.h as isize, g.w as isize, g.k, g.stride, g.pad as isize);
    for c in 0..g.c_in {
        let src = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * plane;
                for oy in 0..g.h_out {
                    let dst = &mut cols[row + oy * g.w_out..row + (oy + 1) * g.w_out];
                    let iy = (oy * s + ky) as isize - p;
                    if iy < 0 || iy >= h {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s + kx) as isize - p;
                        *d = if ix < 0 || ix >= w {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Real>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let plane = g.out_plane();
    let (h, w, k, s, p) = (g.h as isize, g.w as isize, g.k, g.stride, g.pad as isize);
    for c in 0..g.c_in {
        let dst = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..k {
            for kx in 0..k {
                let row = ((c * k + ky) * k + kx) * plane;
                for oy in 0..g.h_out {
                    let iy = (oy * s + ky) as isize - p;
                    if iy < 0 || iy >= h {
                        continue;
                    }
                    let src = &cols[row + oy * g.w_out..row + (oy + 1) * g.w_out];
                    let dst_row = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * s + kx) as isize - p;
                        if ix >= 0 && ix < w {
                            dst_row[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_forward<T: Real>(x: &[T], kernel: &[T], g: &ConvGeom) -> Vec<T> {
    let plane = g.out_plane();
    let rows = g.col_rows();
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * plane;
    let mut out = vec![T::zero(); g.n * out_len];
    let mut cols = if g.pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); rows * plane]
    };
    for i in 0..g.n {
        let xi = &x[i * in_len..(i + 1) * in_len];
        let col: &[T] = if g.pointwise() {
            xi
        } else {
            im2col(xi, g, &mut cols);
            &cols
        };
        T::gemm(
            g.c_out,
            rows,
            plane,
            T::one(),
            kernel,
            (rows, 1),
            col,
            (plane, 1),
            T::zero(),
            &mut out[i * out_len..(i + 1) * out_len],
            (plane, 1),
        );
    }
    out
}

/// Accumulates input and kernel gradients into `dx` / `dk` when requested.
pub(crate) fn conv2d_backward<T: Real>(
    x: &[T],
    kernel: &[T],
    dy: &[T],
    g: &ConvGeom,
    mut dx: Option<&mut [T]>,
    mut dk: Option<&mut [T]>,
) {
    let plane = g.out_plane();
    let rows = g.col_rows();
    let in_len = g.c_in * g.h * g.w;
    let out_len = g.c_out * plane;
    let mut cols = vec![T::zero(); if g.pointwise() { 0 } else { rows * plane }];
    let mut dcols = vec![T::zero(); if dx.is_some() { rows * plane } else { 0 }];
    for i in 0..g.n {
        let xi = &x[i * in_len..(i + 1) * in_len];
        let dyi = &dy[i * out_len..(i + 1) * out_len];
        if let Some(dk) = dk.as_deref_mut() {
            let col: &[T] = if g.pointwise() {
                xi
            } else {
                im2col(xi, g, &mut cols);
                &cols
            };
            // dk[co, r] += sum_p dy[co, p] * col[r, p]
            T::gemm(
                g.c_out,
                plane,
                rows,
                T::one(),
                dyi,
                (plane, 1),
                col,
                (1, plane),
                T::one(),
                dk,
                (rows, 1),
            );
        }
        if let Some(dx) = dx.as_deref_mut() {
            let dxi = &mut dx[i * in_len..(i + 1) * in_len];
            if g.pointwise() {
                T::gemm(
                    rows,
                    g.c_out,
                    plane,
                    T::one(),
                    kernel,
                    (1, rows),
                    dyi,
                    (plane, 1),
                    T::one(),
                    dxi,
                    (plane, 1),
                );
            } else {
                T::gemm(
                    rows,
                    g.c_out,
                    plane,
                    T::one(),
                    kernel,
                    (1, rows),
                    dyi,
                    (plane, 1),
                    T::zero(),
                    &mut dcols,
                    (plane, 1),
                );
                col2im_add(&dcols, g, dxi);
            }
        }
    }
}

/// Saved per-plane statistics of an AdaIN forward pass.
#[derive(Clone, Debug)]
pub(crate) struct AdaInSaved<T> {
    pub normalized: Vec<T>,
    pub sigma: Vec<T>,
    pub denom: Vec<T>,
}

/// `planes` consecutive blocks of `plane` values; `scale[p]`, `shift[p]` per block.
pub(crate) fn adain_forward<T: Real>(
    f: &[T],
    scale: &[T],
    shift: &[T],
    plane: usize,
    eps: T,
) -> (Vec<T>, AdaInSaved<T>) {
    let planes = scale.len();
    let inv_n = T::one() / T::from_f64(plane as f64);
    let mut out = vec![T::zero(); f.len()];
    let mut normalized = vec![T::zero(); f.len()];
    let mut sigma = vec![T::zero(); planes];
    let mut denom = vec![T::zero(); planes];
    for p in 0..planes {
        let src = &f[p * plane..(p + 1) * plane];
        let mean = src.iter().copied().sum::<T>() * inv_n;
        let var = src.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_n;
        let s = var.sqrt();
        let d = s + eps;
        sigma[p] = s;
        denom[p] = d;
        let xh = &mut normalized[p * plane..(p + 1) * plane];
        let o = &mut out[p * plane..(p + 1) * plane];
        for j in 0..plane {
            let n = if d > T::zero() {
                (src[j] - mean) / d
            } else {
                T::zero()
            };
            xh[j] = n;
            o[j] = scale[p] * n + shift[p];
        }
    }
    (
        out,
        AdaInSaved {
            normalized,
            sigma,
            denom,
        },
    )
}

pub(crate) struct AdaInGrads<'a, T> {
    pub df: Option<&'a mut [T]>,
    pub dscale: Option<&'a mut [T]>,
    pub dshift: Option<&'a mut [T]>,
}

pub(crate) fn adain_backward<T: Real>(
    dy: &[T],
    scale: &[T],
    saved: &AdaInSaved<T>,
    plane: usize,
    mut grads: AdaInGrads<'_, T>,
) {
    let planes = scale.len();
    let n = T::from_f64(plane as f64);
    for p in 0..planes {
        let g = &dy[p * plane..(p + 1) * plane];
        let xh = &saved.normalized[p * plane..(p + 1) * plane];
        if let Some(ds) = grads.dshift.as_deref_mut() {
            ds[p] += g.iter().copied().sum::<T>();
        }
        if let Some(dm) = grads.dscale.as_deref_mut() {
            dm[p] += g.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>();
        }
        if let Some(df) = grads.df.as_deref_mut() {
            let d = saved.denom[p];
            if d <= T::zero() {
                continue;
            }
            let s = saved.sigma[p];
            let sum_g = g.iter().copied().sum::<T>() * scale[p];
            let sum_gx = g.iter().zip(xh).map(|(&a, &b)| a * b).sum::<T>() * scale[p];
            let mean_g = sum_g / n;
            // d sigma / d f vanishes with the centred values when sigma == 0
            let coupling = if s > T::zero() {
                sum_gx / (n * s)
            } else {
                T::zero()
            };
            let dst = &mut df[p * plane..(p + 1) * plane];
            for j in 0..plane {
                dst[j] += (g[j] * scale[p] - mean_g) / d - xh[j] * coupling;
            }
        }
    }
}
