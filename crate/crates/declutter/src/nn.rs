//! Minimal dense building blocks for the pair scorer: flat-buffer linear
//! algebra, layer norm, GELU, softmax, and an Adam optimizer. Everything is
//! f64 so the analytic gradients can be checked against finite differences
//! directly.

/// y[m x n] = x[m x k] * w[k x n], row-major.
pub fn matmul(x: &[f64], w: &[f64], y: &mut [f64], m: usize, k: usize, n: usize) {
    debug_assert_eq!(x.len(), m * k);
    debug_assert_eq!(w.len(), k * n);
    debug_assert_eq!(y.len(), m * n);
    y.fill(0.0);
    for i in 0..m {
        for p in 0..k {
            let xv = x[i * k + p];
            if xv == 0.0 {
                continue;
            }
            let wrow = &w[p * n..(p + 1) * n];
            let yrow = &mut y[i * n..(i + 1) * n];
            for j in 0..n {
                yrow[j] += xv * wrow[j];
            }
        }
    }
}

/// Linear layer forward: y = x W + b for each of m rows.
pub fn linear(x: &[f64], w: &[f64], b: &[f64], y: &mut [f64], m: usize, k: usize, n: usize) {
    matmul(x, w, y, m, k, n);
    for i in 0..m {
        for j in 0..n {
            y[i * n + j] += b[j];
        }
    }
}

/// Linear layer backward. Accumulates into dw/db; overwrites dx.
pub fn linear_backward(
    x: &[f64],
    w: &[f64],
    dy: &[f64],
    dx: &mut [f64],
    dw: &mut [f64],
    db: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
) {
    // dW += X^T dY
    for i in 0..m {
        for p in 0..k {
            let xv = x[i * k + p];
            if xv == 0.0 {
                continue;
            }
            let dyrow = &dy[i * n..(i + 1) * n];
            let dwrow = &mut dw[p * n..(p + 1) * n];
            for j in 0..n {
                dwrow[j] += xv * dyrow[j];
            }
        }
    }
    // db += column sums of dY
    for i in 0..m {
        for j in 0..n {
            db[j] += dy[i * n + j];
        }
    }
    // dX = dY W^T
    dx.fill(0.0);
    for i in 0..m {
        for j in 0..n {
            let dv = dy[i * n + j];
            if dv == 0.0 {
                continue;
            }
            for p in 0..k {
                dx[i * k + p] += dv * w[p * n + j];
            }
        }
    }
}

const GELU_C: f64 = 0.7978845608028654; // sqrt(2/pi)

/// GELU, tanh approximation.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

/// Per-row layer norm. Returns (xhat, inv_std) needed by the backward pass.
pub fn layer_norm(
    x: &[f64],
    g: &[f64],
    b: &[f64],
    y: &mut [f64],
    xhat: &mut [f64],
    inv_std: &mut [f64],
    m: usize,
    d: usize,
) {
    const EPS: f64 = 1e-5;
    for i in 0..m {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let istd = 1.0 / (var + EPS).sqrt();
        inv_std[i] = istd;
        for j in 0..d {
            let xh = (row[j] - mean) * istd;
            xhat[i * d + j] = xh;
            y[i * d + j] = g[j] * xh + b[j];
        }
    }
}

/// Layer norm backward. Accumulates into dg/db; overwrites dx.
pub fn layer_norm_backward(
    xhat: &[f64],
    inv_std: &[f64],
    g: &[f64],
    dy: &[f64],
    dx: &mut [f64],
    dg: &mut [f64],
    db: &mut [f64],
    m: usize,
    d: usize,
) {
    for i in 0..m {
        let xh = &xhat[i * d..(i + 1) * d];
        let dyr = &dy[i * d..(i + 1) * d];
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        for j in 0..d {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
            let dxhat = dyr[j] * g[j];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xh[j];
        }
        let istd = inv_std[i];
        let nd = d as f64;
        for j in 0..d {
            let dxhat = dyr[j] * g[j];
            dx[i * d + j] = istd * (dxhat - sum_dxhat / nd - xh[j] * sum_dxhat_xhat / nd);
        }
    }
}

/// In-place softmax over a row; entries equal to f64::NEG_INFINITY get 0.
pub fn softmax_row(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        row.fill(0.0);
        return;
    }
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Softmax backward for one row: dx = (dy - sum(dy*p)) * p.
pub fn softmax_backward_row(p: &[f64], dy: &[f64], dx: &mut [f64]) {
    let dot: f64 = p.iter().zip(dy).map(|(a, b)| a * b).sum();
    for j in 0..p.len() {
        dx[j] = (dy[j] - dot) * p[j];
    }
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Adam over a flat parameter vector.
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, len: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let mhat = self.m[i] / bc1;
            let vhat = self.v[i] / bc2;
            params[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}
