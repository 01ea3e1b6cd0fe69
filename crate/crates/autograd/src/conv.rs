//! Direct-loop 2-D convolution kernels, NHWC layout.

/// `x`: [n, h, w, ci], `k`: [kh, kw, ci, co], zero padding.
/// Returns (data, [n, oh, ow, co]).
pub(crate) fn conv2d_forward(
    x: &[f64],
    xs: [usize; 4],
    k: &[f64],
    ks: [usize; 4],
    stride: usize,
    pad: usize,
) -> (Vec<f64>, [usize; 4]) {
    let [n, h, w, ci] = xs;
    let [kh, kw, kci, co] = ks;
    debug_assert_eq!(ci, kci);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * oh * ow * co];
    let mut acc = vec![0.0; co];
    for b in 0..n {
        for r in 0..oh {
            for c in 0..ow {
                acc.iter_mut().for_each(|v| *v = 0.0);
                for dr in 0..kh {
                    let ir = (r * stride + dr) as isize - pad as isize;
                    if ir < 0 || ir >= h as isize {
                        continue;
                    }
                    for dc in 0..kw {
                        let icx = (c * stride + dc) as isize - pad as isize;
                        if icx < 0 || icx >= w as isize {
                            continue;
                        }
                        let xbase = ((b * h + ir as usize) * w + icx as usize) * ci;
                        let kbase = (dr * kw + dc) * ci * co;
                        for ch in 0..ci {
                            let xv = x[xbase + ch];
                            let krow = kbase + ch * co;
                            for oc in 0..co {
                                acc[oc] += xv * k[krow + oc];
                            }
                        }
                    }
                }
                let obase = ((b * oh + r) * ow + c) * co;
                out[obase..obase + co].copy_from_slice(&acc);
            }
        }
    }
    (out, [n, oh, ow, co])
}

/// Gradients of `conv2d_forward` w.r.t. input and kernel.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward(
    x: &[f64],
    xs: [usize; 4],
    k: &[f64],
    ks: [usize; 4],
    stride: usize,
    pad: usize,
    grad_out: &[f64],
    os: [usize; 4],
) -> (Vec<f64>, Vec<f64>) {
    let [n, h, w, ci] = xs;
    let [kh, kw, _, co] = ks;
    let [_, oh, ow, _] = os;
    let mut gx = vec![0.0; x.len()];
    let mut gk = vec![0.0; k.len()];
    for b in 0..n {
        for r in 0..oh {
            for c in 0..ow {
                let obase = ((b * oh + r) * ow + c) * co;
                let g = &grad_out[obase..obase + co];
                for dr in 0..kh {
                    let ir = (r * stride + dr) as isize - pad as isize;
                    if ir < 0 || ir >= h as isize {
                        continue;
                    }
                    for dc in 0..kw {
                        let icx = (c * stride + dc) as isize - pad as isize;
                        if icx < 0 || icx >= w as isize {
                            continue;
                        }
                        let xbase = ((b * h + ir as usize) * w + icx as usize) * ci;
                        let kbase = (dr * kw + dc) * ci * co;
                        for ch in 0..ci {
                            let xv = x[xbase + ch];
                            let krow = kbase + ch * co;
                            let mut acc = 0.0;
                            for oc in 0..co {
                                acc += g[oc] * k[krow + oc];
                                gk[krow + oc] += g[oc] * xv;
                            }
                            gx[xbase + ch] += acc;
                        }
                    }
                }
            }
        }
    }
    (gx, gk)
}

/// Strided spatial sampling with zero fill outside bounds:
/// `out[b, r, c, ch] = x[b, r*stride + off_h, c*stride + off_w, ch]`.
pub(crate) fn strided_sample_forward(
    x: &[f64],
    xs: [usize; 4],
    off_h: isize,
    off_w: isize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> Vec<f64> {
    let [n, h, w, ci] = xs;
    let mut out = vec![0.0; n * oh * ow * ci];
    for b in 0..n {
        for r in 0..oh {
            let ir = (r * stride) as isize + off_h;
            if ir < 0 || ir >= h as isize {
                continue;
            }
            for c in 0..ow {
                let icx = (c * stride) as isize + off_w;
                if icx < 0 || icx >= w as isize {
                    continue;
                }
                let xbase = ((b * h + ir as usize) * w + icx as usize) * ci;
                let obase = ((b * oh + r) * ow + c) * ci;
                out[obase..obase + ci].copy_from_slice(&x[xbase..xbase + ci]);
            }
        }
    }
    out
}

pub(crate) fn strided_sample_backward(
    xs: [usize; 4],
    off_h: isize,
    off_w: isize,
    stride: usize,
    oh: usize,
    ow: usize,
    grad_out: &[f64],
) -> Vec<f64> {
    let [n, h, w, ci] = xs;
    let mut gx = vec![0.0; n * h * w * ci];
    for b in 0..n {
        for r in 0..oh {
            let ir = (r * stride) as isize + off_h;
            if ir < 0 || ir >= h as isize {
                continue;
            }
            for c in 0..ow {
                let icx = (c * stride) as isize + off_w;
                if icx < 0 || icx >= w as isize {
                    continue;
                }
                let xbase = ((b * h + ir as usize) * w + icx as usize) * ci;
                let obase = ((b * oh + r) * ow + c) * ci;
                for ch in 0..ci {
                    gx[xbase + ch] += grad_out[obase + ch];
                }
            }
        }
    }
    gx
}
