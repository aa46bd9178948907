// im2col convolution kernels. The transposed convolution reuses the input
// gradient of the forward convolution, so the two are adjoint by construction.
//
// Work is split over the batch with rayon. Per-sample outputs are disjoint and
// reductions across samples run in a fixed chunk order, so results do not
// depend on the thread count.

use rayon::prelude::*;

const KERNEL_GRAD_CHUNK: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    fn rows(&self) -> usize {
        self.c_in * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    pub fn input_len(&self) -> usize {
        self.n * self.c_in * self.h * self.w
    }

    pub fn output_len(&self) -> usize {
        self.n * self.c_out * self.oh * self.ow
    }

    pub fn kernel_len(&self) -> usize {
        self.c_out * self.rows()
    }
}

fn im2col(g: &ConvGeom, x: &[f64], cols: &mut [f64]) {
    let ncols = g.cols();
    for c in 0..g.c_in {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oi in 0..g.oh {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    let line = &mut dst[oi * g.ow..(oi + 1) * g.ow];
                    if ii < 0 || ii >= g.h as isize {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &x[(c * g.h + ii as usize) * g.w..][..g.w];
                    for (oj, v) in line.iter_mut().enumerate() {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        *v = if jj < 0 || jj >= g.w as isize {
                            0.0
                        } else {
                            src[jj as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeom, cols: &[f64], x: &mut [f64]) {
    let ncols = g.cols();
    for c in 0..g.c_in {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oi in 0..g.oh {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let dst = &mut x[(c * g.h + ii as usize) * g.w..][..g.w];
                    for oj in 0..g.ow {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < g.w as isize {
                            dst[jj as usize] += src[oi * g.ow + oj];
                        }
                    }
                }
            }
        }
    }
}

/// y[n, o] = Σ_r k[o, r] · cols(x[n])[r]
pub(crate) fn conv2d_forward(g: &ConvGeom, x: &[f64], k: &[f64]) -> Vec<f64> {
    let (rows, ncols) = (g.rows(), g.cols());
    let in_stride = g.c_in * g.h * g.w;
    let out_stride = g.c_out * ncols;
    let mut out = vec![0.0; g.output_len()];
    out.par_chunks_mut(out_stride)
        .zip(x.par_chunks(in_stride))
        .for_each(|(y, xs)| {
            let mut cols = vec![0.0; rows * ncols];
            im2col(g, xs, &mut cols);
            for o in 0..g.c_out {
                let yo = &mut y[o * ncols..(o + 1) * ncols];
                let ko = &k[o * rows..(o + 1) * rows];
                for (r, &kv) in ko.iter().enumerate() {
                    let cr = &cols[r * ncols..(r + 1) * ncols];
                    yo.iter_mut().zip(cr).for_each(|(a, &b)| *a += kv * b);
                }
            }
        });
    out
}

/// dx = col2im(kᵀ · dy); also the forward pass of the transposed convolution.
pub(crate) fn conv2d_input_grad(g: &ConvGeom, dy: &[f64], k: &[f64]) -> Vec<f64> {
    let (rows, ncols) = (g.rows(), g.cols());
    let in_stride = g.c_in * g.h * g.w;
    let out_stride = g.c_out * ncols;
    let mut dx = vec![0.0; g.input_len()];
    dx.par_chunks_mut(in_stride)
        .zip(dy.par_chunks(out_stride))
        .for_each(|(dxs, dys)| {
            let mut dcols = vec![0.0; rows * ncols];
            for o in 0..g.c_out {
                let dyo = &dys[o * ncols..(o + 1) * ncols];
                let ko = &k[o * rows..(o + 1) * rows];
                for (r, &kv) in ko.iter().enumerate() {
                    let dr = &mut dcols[r * ncols..(r + 1) * ncols];
                    dr.iter_mut().zip(dyo).for_each(|(a, &b)| *a += kv * b);
                }
            }
            col2im(g, &dcols, dxs);
        });
    dx
}

/// dk[o, r] = Σ_n Σ_p dy[n, o, p] · cols(x[n])[r, p]
pub(crate) fn conv2d_kernel_grad(g: &ConvGeom, x: &[f64], dy: &[f64]) -> Vec<f64> {
    let (rows, ncols) = (g.rows(), g.cols());
    let in_stride = g.c_in * g.h * g.w;
    let out_stride = g.c_out * ncols;
    let partials: Vec<Vec<f64>> = x
        .par_chunks(in_stride * KERNEL_GRAD_CHUNK)
        .zip(dy.par_chunks(out_stride * KERNEL_GRAD_CHUNK))
        .map(|(xc, dyc)| {
            let mut dk = vec![0.0; g.kernel_len()];
            let mut cols = vec![0.0; rows * ncols];
            for (xs, dys) in xc.chunks(in_stride).zip(dyc.chunks(out_stride)) {
                im2col(g, xs, &mut cols);
                for o in 0..g.c_out {
                    let dyo = &dys[o * ncols..(o + 1) * ncols];
                    let dko = &mut dk[o * rows..(o + 1) * rows];
                    for (r, acc) in dko.iter_mut().enumerate() {
                        let cr = &cols[r * ncols..(r + 1) * ncols];
                        *acc += cr.iter().zip(dyo).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
            }
            dk
        })
        .collect();
    let mut total = vec![0.0; g.kernel_len()];
    for p in &partials {
        total.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(h: usize, w: usize, kh: usize, stride: usize, pad: usize) -> ConvGeom {
        ConvGeom {
            n: 1,
            c_in: 1,
            h,
            w,
            c_out: 1,
            kh,
            kw: kh,
            stride,
            pad,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kh) / stride + 1,
        }
    }

    #[test]
    fn im2col_col2im_are_adjoint_on_padding() {
        let g = geom(3, 3, 2, 1, 1);
        let x: Vec<f64> = (0..9).map(|v| v as f64).collect();
        let mut cols = vec![0.0; 4 * g.oh * g.ow];
        im2col(&g, &x, &mut cols);
        let c: Vec<f64> = (0..cols.len()).map(|v| (v % 7) as f64 - 3.0).collect();
        let mut back = vec![0.0; 9];
        col2im(&g, &c, &mut back);
        let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }
}
