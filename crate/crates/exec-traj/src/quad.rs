//! Composite quadrature helpers shared by the moment, variational and
//! simulation code. Everything is trapezoid-order on the trajectory's own
//! grid. Accumulations are Neumaier-compensated: the mean-variance objective
//! is differentiated by small finite differences, so plain sequential
//! summation noise (~n eps |sum|) would dominate the gradients.

#[derive(Clone, Copy, Default)]
struct Compensated {
    sum: f64,
    comp: f64,
}

impl Compensated {
    #[inline]
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    #[inline]
    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Composite trapezoid rule over the whole grid.
pub fn trapezoid(times: &[f64], ys: &[f64]) -> f64 {
    debug_assert_eq!(times.len(), ys.len());
    let mut acc = Compensated::default();
    for i in 1..times.len() {
        acc.add(0.5 * (ys[i] + ys[i - 1]) * (times[i] - times[i - 1]));
    }
    acc.value()
}

/// Running trapezoid integral: `out[i] = integral of y over [t0, t_i]`.
pub fn trapezoid_prefix(times: &[f64], ys: &[f64]) -> Vec<f64> {
    debug_assert_eq!(times.len(), ys.len());
    let mut out = vec![0.0; times.len()];
    let mut acc = Compensated::default();
    for i in 1..times.len() {
        acc.add(0.5 * (ys[i] + ys[i - 1]) * (times[i] - times[i - 1]));
        out[i] = acc.value();
    }
    out
}

/// Quadrature of `integral outer(u) * prefix(u) du` where `prefix` is the
/// running integral of some inner integrand. Each factor is averaged over the
/// interval separately; with `outer = inner` this keeps the discrete
/// integration-by-parts identity `(integral y)^2 = 2 integral y * prefix(y)`
/// exact on the grid.
pub fn nested_product(times: &[f64], outer: &[f64], prefix: &[f64]) -> f64 {
    debug_assert_eq!(times.len(), outer.len());
    debug_assert_eq!(times.len(), prefix.len());
    let mut acc = Compensated::default();
    for i in 1..times.len() {
        let avg_outer = 0.5 * (outer[i] + outer[i - 1]);
        let avg_prefix = 0.5 * (prefix[i] + prefix[i - 1]);
        acc.add(avg_outer * avg_prefix * (times[i] - times[i - 1]));
    }
    acc.value()
}

/// Neumaier compensated sum, used when reducing per-path statistics so the
/// result does not depend on how partial sums were grouped.
pub fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = Compensated::default();
    for v in values {
        acc.add(v);
    }
    acc.value()
}
