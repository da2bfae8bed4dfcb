// Dense kernels over row-major slices. Accumulation order is fixed so that
// results are bit-reproducible.

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let k = 4 * i;
        acc[0] += a[k] * b[k];
        acc[1] += a[k + 1] * b[k + 1];
        acc[2] += a[k + 2] * b[k + 2];
        acc[3] += a[k + 3] * b[k + 3];
    }
    let mut tail = 0.0;
    for k in 4 * chunks..n {
        tail += a[k] * b[k];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out += M x` for an `out.len() × x.len()` matrix.
#[inline]
pub(crate) fn matvec_add(m: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(m.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `out += Mᵀ y` for a `y.len() × out.len()` matrix.
#[inline]
pub(crate) fn matvec_t_add(m: &[f64], y: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (&yi, row) in y.iter().zip(m.chunks_exact(cols)) {
        if yi != 0.0 {
            axpy(yi, row, out);
        }
    }
}

/// `g += a bᵀ` for an `a.len() × b.len()` matrix.
#[inline]
pub(crate) fn outer_add(g: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (&ai, row) in a.iter().zip(g.chunks_exact_mut(cols)) {
        if ai != 0.0 {
            axpy(ai, b, row);
        }
    }
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_agree_with_naive_loops() {
        let m = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2 x 3
        let mut out = [1.0, 1.0];
        matvec_add(&m, &[1.0, 0.0, -1.0], &mut out);
        assert_eq!(out, [-1.0, -1.0]);
        let mut back = [0.0; 3];
        matvec_t_add(&m, &[1.0, 2.0], &mut back);
        assert_eq!(back, [9.0, 12.0, 15.0]);
        let mut g = [0.0; 6];
        outer_add(&mut g, &[1.0, -1.0], &[1.0, 2.0, 3.0]);
        assert_eq!(g, [1.0, 2.0, 3.0, -1.0, -2.0, -3.0]);
        let a: Vec<f64> = (0..11).map(f64::from).collect();
        assert_eq!(dot(&a, &a), (0..11).map(|i| f64::from(i * i)).sum::<f64>());
    }
}
