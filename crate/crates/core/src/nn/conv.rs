//! 3-D cross-correlation kernels: forward, input-gradient, and
//! weight/bias-gradient passes.
//!
//! All three walk output rows along x (the contiguous axis) so the hot inner
//! loops are straight multiply-accumulate scans that the compiler can
//! vectorize. Shapes are validated by the caller ([`super::tape`]); here they
//! are trusted (debug-asserted only).

use super::tensor::Shape5;

/// Output spatial extent for one axis: `floor((in + 2·pad − k)/stride) + 1`.
pub(crate) fn out_extent(input: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < k {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Row-range helper: for a fixed kernel offset `k` and padding `p`, the
/// output positions `o` in `0..out_n` whose input position `s·o + k − p`
/// lands inside `0..in_n`. Returns `(o_lo, o_hi, i_start)` with `o_hi`
/// exclusive and `i_start` the input index at `o_lo`.
#[inline]
fn valid_range(
    out_n: usize,
    in_n: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> Option<(usize, usize, usize)> {
    let lo = if k >= padding {
        0
    } else {
        (padding - k).div_ceil(stride)
    };
    // Largest o with s·o + k − p ≤ in_n − 1.
    let max_i = in_n as isize - 1 - k as isize + padding as isize;
    if max_i < 0 {
        return None;
    }
    let hi = ((max_i as usize) / stride + 1).min(out_n);
    if lo >= hi {
        return None;
    }
    Some((lo, hi, stride * lo + k - padding))
}

/// Cross-correlation. `out` must be zeroed or bias-filled by the caller?
/// No — it is fully overwritten here: initialized to the bias, then
/// accumulated.
#[allow(clippy::too_many_arguments)]
pub(crate) fn forward(
    input: &[f64],
    in_shape: Shape5,
    weight: &[f64],
    w_shape: Shape5,
    bias: &[f64],
    stride: usize,
    padding: usize,
    out: &mut [f64],
    out_shape: Shape5,
) {
    let [batch, ic, ix, iy, iz] = in_shape;
    let [oc, wic, kx, ky, kz] = w_shape;
    let [ob, ooc, ox, oy, oz] = out_shape;
    debug_assert_eq!(ic, wic);
    debug_assert_eq!(ob, batch);
    debug_assert_eq!(ooc, oc);
    debug_assert_eq!(bias.len(), oc);
    debug_assert_eq!(out.len(), batch * oc * ox * oy * oz);

    let in_plane = ix * iy;
    let in_chan = in_plane * iz;
    let w_row = kx;
    let w_plane = kx * ky;
    let w_chan = w_plane * kz;
    let w_out = w_chan * ic;

    let mut o_base = 0usize;
    for b in 0..batch {
        for c_out in 0..oc {
            let bias_v = bias[c_out];
            for z_out in 0..oz {
                for y_out in 0..oy {
                    let out_row = &mut out[o_base..o_base + ox];
                    out_row.fill(bias_v);
                    for c_in in 0..ic {
                        let in_base = (b * ic + c_in) * in_chan;
                        for dz in 0..kz {
                            let zi = (z_out * stride + dz) as isize - padding as isize;
                            if zi < 0 || zi >= iz as isize {
                                continue;
                            }
                            for dy in 0..ky {
                                let yi = (y_out * stride + dy) as isize - padding as isize;
                                if yi < 0 || yi >= iy as isize {
                                    continue;
                                }
                                let row =
                                    in_base + zi as usize * in_plane + yi as usize * ix;
                                let in_row = &input[row..row + ix];
                                let w_base =
                                    c_out * w_out + c_in * w_chan + dz * w_plane + dy * w_row;
                                for dx in 0..kx {
                                    let w = weight[w_base + dx];
                                    let Some((lo, hi, i0)) =
                                        valid_range(ox, ix, dx, stride, padding)
                                    else {
                                        continue;
                                    };
                                    if stride == 1 {
                                        let n = hi - lo;
                                        for (o, i) in out_row[lo..hi]
                                            .iter_mut()
                                            .zip(&in_row[i0..i0 + n])
                                        {
                                            *o += w * *i;
                                        }
                                    } else {
                                        for (o, i) in out_row[lo..hi]
                                            .iter_mut()
                                            .zip(in_row[i0..].iter().step_by(stride))
                                        {
                                            *o += w * *i;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    o_base += ox;
                }
            }
        }
    }
}

/// Gradient w.r.t. the input: the adjoint of [`forward`] (bias excluded).
#[allow(clippy::too_many_arguments)]
pub(crate) fn grad_input(
    gout: &[f64],
    out_shape: Shape5,
    weight: &[f64],
    w_shape: Shape5,
    stride: usize,
    padding: usize,
    gin: &mut [f64],
    in_shape: Shape5,
) {
    let [batch, ic, ix, iy, iz] = in_shape;
    let [oc, _, kx, ky, kz] = w_shape;
    let [_, _, ox, oy, oz] = out_shape;
    debug_assert_eq!(gin.len(), batch * ic * ix * iy * iz);
    gin.fill(0.0);

    let in_plane = ix * iy;
    let in_chan = in_plane * iz;
    let w_row = kx;
    let w_plane = kx * ky;
    let w_chan = w_plane * kz;
    let w_out = w_chan * ic;

    let mut o_base = 0usize;
    for b in 0..batch {
        for c_out in 0..oc {
            for z_out in 0..oz {
                for y_out in 0..oy {
                    let gout_row = &gout[o_base..o_base + ox];
                    for c_in in 0..ic {
                        let in_base = (b * ic + c_in) * in_chan;
                        for dz in 0..kz {
                            let zi = (z_out * stride + dz) as isize - padding as isize;
                            if zi < 0 || zi >= iz as isize {
                                continue;
                            }
                            for dy in 0..ky {
                                let yi = (y_out * stride + dy) as isize - padding as isize;
                                if yi < 0 || yi >= iy as isize {
                                    continue;
                                }
                                let row =
                                    in_base + zi as usize * in_plane + yi as usize * ix;
                                let gin_row = &mut gin[row..row + ix];
                                let w_base =
                                    c_out * w_out + c_in * w_chan + dz * w_plane + dy * w_row;
                                for dx in 0..kx {
                                    let w = weight[w_base + dx];
                                    let Some((lo, hi, i0)) =
                                        valid_range(ox, ix, dx, stride, padding)
                                    else {
                                        continue;
                                    };
                                    if stride == 1 {
                                        let n = hi - lo;
                                        for (g, o) in gin_row[i0..i0 + n]
                                            .iter_mut()
                                            .zip(&gout_row[lo..hi])
                                        {
                                            *g += w * *o;
                                        }
                                    } else {
                                        for (g, o) in gin_row[i0..]
                                            .iter_mut()
                                            .step_by(stride)
                                            .zip(&gout_row[lo..hi])
                                        {
                                            *g += w * *o;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    o_base += ox;
                }
            }
        }
    }
}

/// Gradients w.r.t. weights and bias.
#[allow(clippy::too_many_arguments)]
pub(crate) fn grad_weight_bias(
    gout: &[f64],
    out_shape: Shape5,
    input: &[f64],
    in_shape: Shape5,
    w_shape: Shape5,
    stride: usize,
    padding: usize,
    gw: &mut [f64],
    gb: &mut [f64],
) {
    let [batch, ic, ix, iy, iz] = in_shape;
    let [oc, _, kx, ky, kz] = w_shape;
    let [_, _, ox, oy, oz] = out_shape;
    gw.fill(0.0);
    gb.fill(0.0);

    let in_plane = ix * iy;
    let in_chan = in_plane * iz;
    let w_row = kx;
    let w_plane = kx * ky;
    let w_chan = w_plane * kz;
    let w_out = w_chan * ic;

    let mut o_base = 0usize;
    for b in 0..batch {
        for c_out in 0..oc {
            for z_out in 0..oz {
                for y_out in 0..oy {
                    let gout_row = &gout[o_base..o_base + ox];
                    gb[c_out] += gout_row.iter().sum::<f64>();
                    for c_in in 0..ic {
                        let in_base = (b * ic + c_in) * in_chan;
                        for dz in 0..kz {
                            let zi = (z_out * stride + dz) as isize - padding as isize;
                            if zi < 0 || zi >= iz as isize {
                                continue;
                            }
                            for dy in 0..ky {
                                let yi = (y_out * stride + dy) as isize - padding as isize;
                                if yi < 0 || yi >= iy as isize {
                                    continue;
                                }
                                let row =
                                    in_base + zi as usize * in_plane + yi as usize * ix;
                                let in_row = &input[row..row + ix];
                                let w_base =
                                    c_out * w_out + c_in * w_chan + dz * w_plane + dy * w_row;
                                for dx in 0..kx {
                                    let Some((lo, hi, i0)) =
                                        valid_range(ox, ix, dx, stride, padding)
                                    else {
                                        continue;
                                    };
                                    let acc: f64 = if stride == 1 {
                                        let n = hi - lo;
                                        gout_row[lo..hi]
                                            .iter()
                                            .zip(&in_row[i0..i0 + n])
                                            .map(|(o, i)| o * i)
                                            .sum()
                                    } else {
                                        gout_row[lo..hi]
                                            .iter()
                                            .zip(in_row[i0..].iter().step_by(stride))
                                            .map(|(o, i)| o * i)
                                            .sum()
                                    };
                                    gw[w_base + dx] += acc;
                                }
                            }
                        }
                    }
                    o_base += ox;
                }
            }
        }
    }
}
