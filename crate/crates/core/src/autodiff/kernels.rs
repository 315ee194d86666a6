//! Raw forward/backward loops over flat buffers. Shapes are validated by the
//! callers on [`Tape`](super::Tape); everything here assumes consistent input.

use crate::tensor::Scalar;

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub n: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub l_in: usize,
    pub l_out: usize,
    pub pad_left: usize,
}

impl ConvDims {
    /// Output positions `l` for which input index `l + k - pad_left` is in range.
    #[inline]
    fn valid(&self, tap: usize) -> (usize, usize, isize) {
        let off = tap as isize - self.pad_left as isize;
        let lo = (-off).max(0) as usize;
        let hi = (self.l_in as isize - off).clamp(0, self.l_out as isize) as usize;
        (lo, hi.max(lo), off)
    }
}

pub(crate) fn conv1d_forward<F: Scalar>(d: &ConvDims, x: &[F], w: &[F], b: &[F], out: &mut [F]) {
    for n in 0..d.n {
        let xb = &x[n * d.c_in * d.l_in..(n + 1) * d.c_in * d.l_in];
        for co in 0..d.c_out {
            let row = &mut out[(n * d.c_out + co) * d.l_out..(n * d.c_out + co + 1) * d.l_out];
            row.fill(b[co]);
            for ci in 0..d.c_in {
                let xr = &xb[ci * d.l_in..(ci + 1) * d.l_in];
                for tap in 0..d.k {
                    let wv = w[(co * d.c_in + ci) * d.k + tap];
                    let (lo, hi, off) = d.valid(tap);
                    let src = &xr[(lo as isize + off) as usize..(hi as isize + off) as usize];
                    for (o, &s) in row[lo..hi].iter_mut().zip(src) {
                        *o += wv * s;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv1d_backward<F: Scalar>(
    d: &ConvDims,
    x: &[F],
    w: &[F],
    dy: &[F],
    mut dx: Option<&mut [F]>,
    mut dw: Option<&mut [F]>,
    mut db: Option<&mut [F]>,
) {
    for n in 0..d.n {
        let xb = &x[n * d.c_in * d.l_in..(n + 1) * d.c_in * d.l_in];
        for co in 0..d.c_out {
            let g = &dy[(n * d.c_out + co) * d.l_out..(n * d.c_out + co + 1) * d.l_out];
            if let Some(db) = db.as_deref_mut() {
                db[co] += g.iter().copied().sum::<F>();
            }
            for ci in 0..d.c_in {
                let xr = &xb[ci * d.l_in..(ci + 1) * d.l_in];
                for tap in 0..d.k {
                    let widx = (co * d.c_in + ci) * d.k + tap;
                    let (lo, hi, off) = d.valid(tap);
                    let (s0, s1) = ((lo as isize + off) as usize, (hi as isize + off) as usize);
                    if let Some(dw) = dw.as_deref_mut() {
                        let mut acc = F::zero();
                        for (&gv, &xv) in g[lo..hi].iter().zip(&xr[s0..s1]) {
                            acc += gv * xv;
                        }
                        dw[widx] += acc;
                    }
                    if let Some(dx) = dx.as_deref_mut() {
                        let wv = w[widx];
                        let base = (n * d.c_in + ci) * d.l_in;
                        for (dxv, &gv) in dx[base + s0..base + s1].iter_mut().zip(&g[lo..hi]) {
                            *dxv += wv * gv;
                        }
                    }
                }
            }
        }
    }
}

/// Returns `(values, argmax)`; argmax holds flat input indices, first maximum wins.
pub(crate) fn maxpool_forward<F: Scalar>(
    x: &[F],
    rows: usize,
    l_in: usize,
    kernel: usize,
    stride: usize,
    l_out: usize,
) -> (Vec<F>, Vec<u32>) {
    let mut out = Vec::with_capacity(rows * l_out);
    let mut arg = Vec::with_capacity(rows * l_out);
    for r in 0..rows {
        let base = r * l_in;
        for j in 0..l_out {
            let start = base + j * stride;
            let mut best = start;
            for i in start + 1..start + kernel {
                if x[i] > x[best] {
                    best = i;
                }
            }
            out.push(x[best]);
            arg.push(best as u32);
        }
    }
    (out, arg)
}

#[inline]
pub(crate) fn upsample_src(j: usize, l_in: usize, l_out: usize) -> usize {
    j * l_in / l_out
}

pub(crate) fn upsample_forward<F: Scalar>(x: &[F], rows: usize, l_in: usize, l_out: usize) -> Vec<F> {
    let mut out = Vec::with_capacity(rows * l_out);
    for r in 0..rows {
        let src = &x[r * l_in..(r + 1) * l_in];
        out.extend((0..l_out).map(|j| src[upsample_src(j, l_in, l_out)]));
    }
    out
}

pub(crate) fn upsample_backward<F: Scalar>(dy: &[F], rows: usize, l_in: usize, l_out: usize, dx: &mut [F]) {
    for r in 0..rows {
        let g = &dy[r * l_out..(r + 1) * l_out];
        let d = &mut dx[r * l_in..(r + 1) * l_in];
        for (j, &gv) in g.iter().enumerate() {
            d[upsample_src(j, l_in, l_out)] += gv;
        }
    }
}

/// Per-channel mean and biased variance over batch and length.
pub(crate) fn channel_moments<F: Scalar>(x: &[F], n: usize, c: usize, l: usize) -> (Vec<F>, Vec<F>) {
    let m = (n * l) as f64;
    let mut mean = vec![F::zero(); c];
    let mut var = vec![F::zero(); c];
    for ch in 0..c {
        let mut s = 0.0f64;
        for b in 0..n {
            s += x[(b * c + ch) * l..(b * c + ch + 1) * l].iter().map(|v| v.as_f64()).sum::<f64>();
        }
        let mu = s / m;
        let mut q = 0.0f64;
        for b in 0..n {
            q += x[(b * c + ch) * l..(b * c + ch + 1) * l]
                .iter()
                .map(|v| {
                    let d = v.as_f64() - mu;
                    d * d
                })
                .sum::<f64>();
        }
        mean[ch] = F::of(mu);
        var[ch] = F::of(q / m);
    }
    (mean, var)
}

/// Softmax over the channel axis for every `(batch, position)` column.
pub(crate) fn softmax_channels<F: Scalar>(x: &[F], n: usize, c: usize, l: usize) -> Vec<F> {
    let mut out = vec![F::zero(); x.len()];
    for b in 0..n {
        let base = b * c * l;
        for t in 0..l {
            let mut mx = F::neg_infinity();
            for ch in 0..c {
                mx = mx.max(x[base + ch * l + t]);
            }
            let mut z = F::zero();
            for ch in 0..c {
                let e = (x[base + ch * l + t] - mx).exp();
                out[base + ch * l + t] = e;
                z += e;
            }
            for ch in 0..c {
                out[base + ch * l + t] = out[base + ch * l + t] / z;
            }
        }
    }
    out
}
