//! Fixed-step classical RK4 over tuples of matrices.

use nalgebra::DMatrix;

use crate::linalg::symmetrize;

pub(crate) type State = Vec<DMatrix<f64>>;

/// Blow-up bound for every integrated quantity.
pub const ESCAPE_BOUND: f64 = 1e12;

fn axpy(y: &State, h: f64, k: &State) -> State {
    y.iter().zip(k).map(|(a, b)| a + b * h).collect()
}

/// One RK4 step from `s` to `s + h` (`h` may be negative). When `symmetric`
/// is set, each stage state and the result are symmetrized.
pub(crate) fn rk4_step<F>(f: &mut F, s: f64, y: &State, h: f64, symmetric: bool) -> State
where
    F: FnMut(f64, &State) -> State,
{
    let fix = |mut st: State| {
        if symmetric {
            for m in st.iter_mut() {
                *m = symmetrize(m);
            }
        }
        st
    };
    let k1 = f(s, y);
    let y2 = fix(axpy(y, 0.5 * h, &k1));
    let k2 = f(s + 0.5 * h, &y2);
    let y3 = fix(axpy(y, 0.5 * h, &k2));
    let k3 = f(s + 0.5 * h, &y3);
    let y4 = fix(axpy(y, h, &k3));
    let k4 = f(s + h, &y4);
    let out = y
        .iter()
        .enumerate()
        .map(|(i, yi)| yi + (&k1[i] + &k2[i] * 2.0 + &k3[i] * 2.0 + &k4[i]) * (h / 6.0))
        .collect();
    fix(out)
}

pub(crate) fn escaped(st: &State) -> bool {
    st.iter()
        .any(|m| m.iter().any(|x| !x.is_finite()) || m.norm() > ESCAPE_BOUND)
}

/// Cubic Hermite interpolation on `[0, 1]` given end values and end
/// derivatives (derivatives already scaled by the step).
pub(crate) fn hermite(
    y0: &DMatrix<f64>,
    dy0: &DMatrix<f64>,
    y1: &DMatrix<f64>,
    dy1: &DMatrix<f64>,
    theta: f64,
) -> DMatrix<f64> {
    let t2 = theta * theta;
    let t3 = t2 * theta;
    let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
    let h10 = t3 - 2.0 * t2 + theta;
    let h01 = -2.0 * t3 + 3.0 * t2;
    let h11 = t3 - t2;
    y0 * h00 + dy0 * h10 + y1 * h01 + dy1 * h11
}

/// Composite trapezoid rule on uniformly spaced samples.
pub fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let inner: f64 = values[1..n - 1].iter().sum();
            h * (0.5 * (values[0] + values[n - 1]) + inner)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rk4_is_fourth_order_on_exponential() {
        let err = |n: usize| {
            let h = 1.0 / n as f64;
            let mut y: State = vec![DMatrix::from_element(1, 1, 1.0)];
            let mut f = |_s: f64, y: &State| vec![y[0].clone()];
            for k in 0..n {
                y = rk4_step(&mut f, k as f64 * h, &y, h, false);
            }
            (y[0][(0, 0)] - 1f64.exp()).abs()
        };
        let ratio = err(20) / err(40);
        assert!((ratio - 16.0).abs() < 1.0, "ratio {ratio}");
    }

    #[test]
    fn hermite_reproduces_cubics() {
        // y = t^3 on [0,1]
        let y0 = DMatrix::from_element(1, 1, 0.0);
        let d0 = DMatrix::from_element(1, 1, 0.0);
        let y1 = DMatrix::from_element(1, 1, 1.0);
        let d1 = DMatrix::from_element(1, 1, 3.0);
        let v = hermite(&y0, &d0, &y1, &d1, 0.3)[(0, 0)];
        assert!((v - 0.027).abs() < 1e-15);
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let v: Vec<f64> = (0..=4).map(|k| k as f64 * 0.25).collect();
        assert!((trapezoid(&v, 0.25) - 0.5).abs() < 1e-15);
    }
}
