//! Raw slice kernels shared by the forward and backward passes.

/// `out += a · b` with `a: m×k`, `b: k×n`, `out: m×n`.
pub fn matmul_acc(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// `out += aᵀ · g` with `a: m×k`, `g: m×n`, `out: k×n`.
pub fn matmul_at_b_acc(a: &[f64], g: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let g_row = &g[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &gv) in out_row.iter_mut().zip(g_row) {
                *o += av * gv;
            }
        }
    }
}

/// `out += g · bᵀ` with `g: m×n`, `b: k×n`, `out: m×k`.
pub fn matmul_a_bt_acc(g: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let g_row = &g[i * n..(i + 1) * n];
        let out_row = &mut out[i * k..(i + 1) * k];
        for (p, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[p * n..(p + 1) * n];
            let mut s = 0.0;
            for (&gv, &bv) in g_row.iter().zip(b_row) {
                s += gv * bv;
            }
            *o += s;
        }
    }
}

/// Geometry of a batched causal convolution: `batch` sequences of
/// `seq_len` steps, `c_in` input and `c_out` output channels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub seq_len: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub dilation: usize,
}

/// Dilated causal convolution. `x` is `(batch·seq_len) × c_in`, `w` is
/// `(kernel·c_in) × c_out` with tap `k` occupying rows `k·c_in..(k+1)·c_in`.
/// Reads before the start of a sequence are zero.
pub fn causal_conv_forward(x: &[f64], w: &[f64], out: &mut [f64], geo: ConvGeometry) {
    let ConvGeometry {
        batch,
        seq_len,
        c_in,
        c_out,
        kernel,
        dilation,
    } = geo;
    for k in 0..kernel {
        let shift = dilation * k;
        if shift >= seq_len {
            break;
        }
        let w_k = &w[k * c_in * c_out..(k + 1) * c_in * c_out];
        let rows = seq_len - shift;
        for b in 0..batch {
            let base = b * seq_len;
            let src = &x[base * c_in..(base + rows) * c_in];
            let dst = &mut out[(base + shift) * c_out..(base + seq_len) * c_out];
            matmul_acc(src, w_k, dst, rows, c_in, c_out);
        }
    }
}

/// Gradients of [`causal_conv_forward`] with respect to `x` and `w`.
pub fn causal_conv_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    gx: Option<&mut [f64]>,
    gw: Option<&mut [f64]>,
    geo: ConvGeometry,
) {
    let ConvGeometry {
        batch,
        seq_len,
        c_in,
        c_out,
        kernel,
        dilation,
    } = geo;
    if let Some(gx) = gx {
        for k in 0..kernel {
            let shift = dilation * k;
            if shift >= seq_len {
                break;
            }
            let w_k = &w[k * c_in * c_out..(k + 1) * c_in * c_out];
            let rows = seq_len - shift;
            for b in 0..batch {
                let base = b * seq_len;
                let g_src = &g[(base + shift) * c_out..(base + seq_len) * c_out];
                let dst = &mut gx[base * c_in..(base + rows) * c_in];
                matmul_a_bt_acc(g_src, w_k, dst, rows, c_in, c_out);
            }
        }
    }
    if let Some(gw) = gw {
        for k in 0..kernel {
            let shift = dilation * k;
            if shift >= seq_len {
                break;
            }
            let gw_k = &mut gw[k * c_in * c_out..(k + 1) * c_in * c_out];
            let rows = seq_len - shift;
            for b in 0..batch {
                let base = b * seq_len;
                let x_src = &x[base * c_in..(base + rows) * c_in];
                let g_src = &g[(base + shift) * c_out..(base + seq_len) * c_out];
                matmul_at_b_acc(x_src, g_src, gw_k, rows, c_in, c_out);
            }
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// In-place row softmax with max subtraction.
pub fn softmax_rows_inplace(data: &mut [f64], cols: usize) {
    for row in data.chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}
