//! Layer forward/backward kernels. Weight layout is input-major:
//! `w[i * out + j]` maps input i to output j.

use super::{NnError, Tensor};

/// Affine map: out[j] = b[j] + Σ_i input[i] · w[i][j].
pub fn dense(input: &[f64], w: &Tensor, b: &Tensor) -> Result<Vec<f64>, NnError> {
    let [n_in, n_out]: [usize; 2] = match w.shape() {
        [a, b] => [*a, *b],
        s => {
            return Err(NnError::ShapeMismatch(format!(
                "dense weight must be 2-D, got {s:?}"
            )))
        }
    };
    if input.len() != n_in || b.len() != n_out {
        return Err(NnError::ShapeMismatch(format!(
            "dense: input {} / weight [{n_in}, {n_out}] / bias {}",
            input.len(),
            b.len()
        )));
    }
    let mut out = b.data().to_vec();
    let wd = w.data();
    for (i, &x) in input.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        let row = &wd[i * n_out..(i + 1) * n_out];
        for (o, wv) in out.iter_mut().zip(row) {
            *o += x * wv;
        }
    }
    Ok(out)
}

/// Backward for [`dense`]. Accumulates into `grad_w`/`grad_b`/`grad_input`.
pub fn dense_backward(
    input: &[f64],
    w: &Tensor,
    grad_out: &[f64],
    grad_w: &mut Tensor,
    grad_b: &mut Tensor,
    grad_input: &mut [f64],
) {
    let n_out = w.shape()[1];
    debug_assert_eq!(grad_out.len(), n_out);
    debug_assert_eq!(grad_input.len(), input.len());
    let wd = w.data();
    let gw = grad_w.data_mut();
    for (i, &x) in input.iter().enumerate() {
        let row = &wd[i * n_out..(i + 1) * n_out];
        let grow = &mut gw[i * n_out..(i + 1) * n_out];
        let mut acc = 0.0;
        for j in 0..n_out {
            acc += grad_out[j] * row[j];
            if x != 0.0 {
                grow[j] += x * grad_out[j];
            }
        }
        grad_input[i] += acc;
    }
    for (gb, g) in grad_b.data_mut().iter_mut().zip(grad_out) {
        *gb += g;
    }
}

/// 3×3 cross-correlation, stride 1, zero padding 1: input [C_in, H, W],
/// kernels [C_out, C_in, 3, 3], bias [C_out] → [C_out, H, W].
pub fn conv2d(input: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor, NnError> {
    let (c_in, h, w) = match input.shape() {
        [c, h, w] => (*c, *h, *w),
        s => {
            return Err(NnError::ShapeMismatch(format!(
                "conv input must be 3-D, got {s:?}"
            )))
        }
    };
    let (c_out, kc, kh, kw) = match kernels.shape() {
        [o, c, kh, kw] => (*o, *c, *kh, *kw),
        s => {
            return Err(NnError::ShapeMismatch(format!(
                "conv kernels must be 4-D, got {s:?}"
            )))
        }
    };
    if kc != c_in {
        return Err(NnError::ShapeMismatch(format!(
            "conv channels: input {c_in} vs kernel {kc}"
        )));
    }
    if kh != 3 || kw != 3 {
        return Err(NnError::ShapeMismatch(format!(
            "conv kernel must be 3×3, got {kh}×{kw}"
        )));
    }
    if bias.len() != c_out {
        return Err(NnError::ShapeMismatch(format!(
            "conv bias {} vs out channels {c_out}",
            bias.len()
        )));
    }

    let x = input.data();
    let k = kernels.data();
    let mut out = Tensor::zeros(&[c_out, h, w]);
    let od = out.data_mut();
    for o in 0..c_out {
        let ob = o * h * w;
        od[ob..ob + h * w].fill(bias.data()[o]);
        for c in 0..c_in {
            let kb = (o * c_in + c) * 9;
            let xb = c * h * w;
            for y in 0..h {
                for dy in 0..3usize {
                    let sy = y as isize + dy as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let sy = sy as usize;
                    for dx in 0..3usize {
                        let kv = k[kb + dy * 3 + dx];
                        if kv == 0.0 {
                            continue;
                        }
                        let off = dx as isize - 1;
                        let x_lo = if off < 0 { 1 } else { 0 };
                        let x_hi = if off > 0 { w - 1 } else { w };
                        for xx in x_lo..x_hi {
                            let sx = (xx as isize + off) as usize;
                            od[ob + y * w + xx] += kv * x[xb + sy * w + sx];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Backward for [`conv2d`]. Accumulates kernel/bias grads and input grads.
pub fn conv2d_backward(
    input: &Tensor,
    kernels: &Tensor,
    grad_out: &Tensor,
    grad_kernels: &mut Tensor,
    grad_bias: &mut Tensor,
    grad_input: &mut Tensor,
) {
    let (c_in, h, w) = {
        let s = input.shape();
        (s[0], s[1], s[2])
    };
    let c_out = kernels.shape()[0];
    let x = input.data();
    let k = kernels.data();
    let go = grad_out.data();
    let gk = grad_kernels.data_mut();
    let gi = grad_input.data_mut();
    let gb = grad_bias.data_mut();

    for o in 0..c_out {
        let ob = o * h * w;
        gb[o] += go[ob..ob + h * w].iter().sum::<f64>();
        for c in 0..c_in {
            let kb = (o * c_in + c) * 9;
            let xb = c * h * w;
            for y in 0..h {
                for x_pos in 0..w {
                    let g = go[ob + y * w + x_pos];
                    if g == 0.0 {
                        continue;
                    }
                    for dy in 0..3usize {
                        let sy = y as isize + dy as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for dx in 0..3usize {
                            let sx = x_pos as isize + dx as isize - 1;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let src = xb + sy as usize * w + sx as usize;
                            gk[kb + dy * 3 + dx] += g * x[src];
                            gi[src] += g * k[kb + dy * 3 + dx];
                        }
                    }
                }
            }
        }
    }
}

/// Non-overlapping 2×2 mean pooling: [C, H, W] → [C, H/2, W/2]. H and W
/// must be even.
pub fn avg_pool2(input: &Tensor) -> Result<Tensor, NnError> {
    let (c, h, w) = match input.shape() {
        [c, h, w] => (*c, *h, *w),
        s => {
            return Err(NnError::ShapeMismatch(format!(
                "pool input must be 3-D, got {s:?}"
            )))
        }
    };
    if h % 2 != 0 || w % 2 != 0 {
        return Err(NnError::ShapeMismatch(format!(
            "pool needs even spatial dims, got {h}×{w}"
        )));
    }
    let (oh, ow) = (h / 2, w / 2);
    let x = input.data();
    let mut out = Tensor::zeros(&[c, oh, ow]);
    let od = out.data_mut();
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let base = ch * h * w + 2 * y * w + 2 * xx;
                od[ch * oh * ow + y * ow + xx] =
                    0.25 * (x[base] + x[base + 1] + x[base + w] + x[base + w + 1]);
            }
        }
    }
    Ok(out)
}

/// Backward for [`avg_pool2`]: each output grad spreads 1/4 to its window.
pub fn avg_pool2_backward(grad_out: &Tensor, grad_input: &mut Tensor) {
    let (c, oh, ow) = {
        let s = grad_out.shape();
        (s[0], s[1], s[2])
    };
    let (h, w) = (oh * 2, ow * 2);
    let go = grad_out.data();
    let gi = grad_input.data_mut();
    for ch in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let g = 0.25 * go[ch * oh * ow + y * ow + xx];
                let base = ch * h * w + 2 * y * w + 2 * xx;
                gi[base] += g;
                gi[base + 1] += g;
                gi[base + w] += g;
                gi[base + w + 1] += g;
            }
        }
    }
}

/// Elementwise max(0, x).
pub fn relu(input: &[f64]) -> Vec<f64> {
    input.iter().map(|&x| x.max(0.0)).collect()
}

/// Backward for [`relu`], keyed on the forward *output* (subgradient 0 at
/// the kink). Accumulates into `grad_input`.
pub fn relu_backward(output: &[f64], grad_out: &[f64], grad_input: &mut [f64]) {
    for ((gi, &y), &g) in grad_input.iter_mut().zip(output).zip(grad_out) {
        if y > 0.0 {
            *gi += g;
        }
    }
}
