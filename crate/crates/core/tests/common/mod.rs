//! Independent reference implementations used by the integration tests.
//!
//! Nothing here calls into the crate's control or integration code: the
//! closed-form coefficients for the two shipped examples are written out by
//! hand and the closed loop is integrated with an adaptive Dormand-Prince 5(4)
//! scheme on plain `Vec<f64>` states.

#![allow(dead_code)]

use std::f64::consts::PI;

pub type Vector = Vec<f64>;

fn axpy(x: &[f64], a: f64, k: &[f64]) -> Vector {
    x.iter().zip(k).map(|(xi, ki)| xi + a * ki).collect()
}

fn combine(x: &[f64], h: f64, terms: &[(f64, &Vector)]) -> Vector {
    let mut out = x.to_vec();
    for (c, k) in terms {
        for (o, ki) in out.iter_mut().zip(k.iter()) {
            *o += h * c * ki;
        }
    }
    out
}

/// Adaptive Dormand-Prince 5(4) from `t0` to `t1`.
pub fn dopri5<F>(f: &F, t0: f64, t1: f64, x0: &[f64], rtol: f64, atol: f64) -> Vector
where
    F: Fn(f64, &[f64]) -> Vector,
{
    const C2: f64 = 1.0 / 5.0;
    const C3: f64 = 3.0 / 10.0;
    const C4: f64 = 4.0 / 5.0;
    const C5: f64 = 8.0 / 9.0;
    const A21: f64 = 1.0 / 5.0;
    const A31: f64 = 3.0 / 40.0;
    const A32: f64 = 9.0 / 40.0;
    const A41: f64 = 44.0 / 45.0;
    const A42: f64 = -56.0 / 15.0;
    const A43: f64 = 32.0 / 9.0;
    const A51: f64 = 19372.0 / 6561.0;
    const A52: f64 = -25360.0 / 2187.0;
    const A53: f64 = 64448.0 / 6561.0;
    const A54: f64 = -212.0 / 729.0;
    const A61: f64 = 9017.0 / 3168.0;
    const A62: f64 = -355.0 / 33.0;
    const A63: f64 = 46732.0 / 5247.0;
    const A64: f64 = 49.0 / 176.0;
    const A65: f64 = -5103.0 / 18656.0;
    const B1: f64 = 35.0 / 384.0;
    const B3: f64 = 500.0 / 1113.0;
    const B4: f64 = 125.0 / 192.0;
    const B5: f64 = -2187.0 / 6784.0;
    const B6: f64 = 11.0 / 84.0;
    const E1: f64 = 71.0 / 57600.0;
    const E3: f64 = -71.0 / 16695.0;
    const E4: f64 = 71.0 / 1920.0;
    const E5: f64 = -17253.0 / 339200.0;
    const E6: f64 = 22.0 / 525.0;
    const E7: f64 = -1.0 / 40.0;

    let mut t = t0;
    let mut x = x0.to_vec();
    let span = t1 - t0;
    if span <= 0.0 {
        return x;
    }
    let mut h = span / 50.0;
    while t < t1 {
        if t + h > t1 {
            h = t1 - t;
        }
        let k1 = f(t, &x);
        let k2 = f(t + C2 * h, &combine(&x, h, &[(A21, &k1)]));
        let k3 = f(t + C3 * h, &combine(&x, h, &[(A31, &k1), (A32, &k2)]));
        let k4 = f(
            t + C4 * h,
            &combine(&x, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
        );
        let k5 = f(
            t + C5 * h,
            &combine(&x, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        );
        let k6 = f(
            t + h,
            &combine(
                &x,
                h,
                &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
            ),
        );
        let x_new = combine(
            &x,
            h,
            &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
        );
        let k7 = f(t + h, &x_new);
        let mut err: f64 = 0.0;
        for i in 0..x.len() {
            let e =
                h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = atol + rtol * x[i].abs().max(x_new[i].abs());
            err = err.max((e / sc).abs());
        }
        if err <= 1.0 {
            t += h;
            x = x_new;
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
        assert!(h > 1e-14, "oracle step size collapsed at t = {t}");
    }
    x
}

/// Classical RK4 with a fixed step, for brute-force checks on very fine grids.
pub fn rk4_fixed<F>(f: &F, t0: f64, t1: f64, x0: &[f64], steps: usize) -> Vector
where
    F: Fn(f64, &[f64]) -> Vector,
{
    let h = (t1 - t0) / steps as f64;
    let mut x = x0.to_vec();
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        let k1 = f(t, &x);
        let k2 = f(t + 0.5 * h, &axpy(&x, 0.5 * h, &k1));
        let k3 = f(t + 0.5 * h, &axpy(&x, 0.5 * h, &k2));
        let k4 = f(t + h, &axpy(&x, h, &k3));
        x = combine(
            &x,
            h / 6.0,
            &[(1.0, &k1), (2.0, &k2), (2.0, &k3), (1.0, &k4)],
        );
    }
    x
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Hand-written rolling-disc control: a1 = -g (x1 cos x3 + x2 sin x3),
/// a12 = -g (x1 sin x3 - x2 cos x3), kappa = 1.
pub fn disc_control(t: f64, hold: &[f64], eps: f64, gamma: f64) -> [f64; 2] {
    let (s, c) = hold[2].sin_cos();
    let a1 = -gamma * (hold[0] * c + hold[1] * s);
    let a12 = -gamma * (hold[0] * s - hold[1] * c);
    let amp = 2.0 * (PI * a12.abs() / eps).sqrt();
    let w = 2.0 * PI * t / eps;
    [a1 + amp * w.cos(), sgn(a12) * amp * w.sin()]
}

pub fn disc_rhs(x: &[f64], u: [f64; 2]) -> Vector {
    vec![x[2].cos() * u[0], x[2].sin() * u[0], u[1], u[0]]
}

/// Unicycle follower control with the gain factor included.
pub fn unicycle_control(
    t: f64,
    hold: &[f64],
    leader: &[f64],
    offset: &[f64],
    eps: f64,
    gamma: f64,
) -> [f64; 2] {
    let e: Vec<f64> = (0..3).map(|i| hold[i] - leader[i] - offset[i]).collect();
    let (s, c) = hold[2].sin_cos();
    let a1 = -gamma * (e[0] * c + e[1] * s);
    let a2 = -gamma * e[2];
    let a12 = -gamma * (e[0] * s - e[1] * c);
    let amp = (4.0 * PI * a12.abs() / eps).sqrt();
    let w = 2.0 * PI * t / eps;
    [a1 + amp * w.cos(), a2 + sgn(a12) * amp * w.sin()]
}

pub fn unicycle_rhs(x: &[f64], u: [f64; 2]) -> Vector {
    vec![x[2].cos() * u[0], x[2].sin() * u[0], u[1]]
}

pub fn leader_rhs(t: f64) -> Vector {
    let c = (0.1 * t).cos();
    let s = (0.1 * t).sin();
    vec![
        0.2 * c,
        -0.2,
        -0.2 * s * (c * c + 0.5) / (4.0 * c.powi(4) - 3.0 * c * c + 1.0),
    ]
}

pub const ORACLE_RTOL: f64 = 1e-11;
pub const ORACLE_ATOL: f64 = 1e-12;

/// Sample-and-hold disc run. Returns `(t, x)` at `points_per_interval`
/// evenly spaced points of every interval plus the final point.
pub fn oracle_disc(
    x0: &[f64],
    eps: f64,
    gamma: f64,
    t_final: f64,
    points_per_interval: usize,
) -> Vec<(f64, Vector)> {
    let intervals = (t_final / eps).round() as usize;
    let mut out = Vec::new();
    let mut x = x0.to_vec();
    for j in 0..intervals {
        let tau = j as f64 * eps;
        let hold = x.clone();
        let f = |t: f64, s: &[f64]| disc_rhs(s, disc_control(t, &hold, eps, gamma));
        for p in 0..points_per_interval {
            let ta = tau + p as f64 * eps / points_per_interval as f64;
            let tb = tau + (p + 1) as f64 * eps / points_per_interval as f64;
            out.push((ta, x.clone()));
            x = dopri5(&f, ta, tb, &x, ORACLE_RTOL, ORACLE_ATOL);
        }
    }
    out.push((intervals as f64 * eps, x));
    out
}

/// Sample-and-hold leader-following run of one unicycle. Returns `(t, x, x_L)`.
pub fn oracle_unicycle(
    x0: &[f64],
    leader0: &[f64],
    offset: &[f64],
    eps: f64,
    gamma: f64,
    t_final: f64,
    points_per_interval: usize,
) -> Vec<(f64, Vector, Vector)> {
    let intervals = (t_final / eps).round() as usize;
    let mut out = Vec::new();
    // joint state (follower, leader); the follower's control only sees the held leader
    let mut x: Vector = x0.iter().chain(leader0).copied().collect();
    for j in 0..intervals {
        let tau = j as f64 * eps;
        let hold = x[0..3].to_vec();
        let hold_leader = x[3..6].to_vec();
        let f = |t: f64, s: &[f64]| {
            let u = unicycle_control(t, &hold, &hold_leader, offset, eps, gamma);
            let mut d = unicycle_rhs(&s[0..3], u);
            d.extend(leader_rhs(t));
            d
        };
        for p in 0..points_per_interval {
            let ta = tau + p as f64 * eps / points_per_interval as f64;
            let tb = tau + (p + 1) as f64 * eps / points_per_interval as f64;
            out.push((ta, x[0..3].to_vec(), x[3..6].to_vec()));
            x = dopri5(&f, ta, tb, &x, ORACLE_RTOL, ORACLE_ATOL);
        }
    }
    out.push((intervals as f64 * eps, x[0..3].to_vec(), x[3..6].to_vec()));
    out
}

/// `int_0^T int_0^s g(s) h(r) dr ds` by the composite trapezoid rule on `n` panels.
pub fn iterated_integral<G, H>(g: G, h: H, period: f64, n: usize) -> f64
where
    G: Fn(f64) -> f64,
    H: Fn(f64) -> f64,
{
    let dt = period / n as f64;
    let mut inner = 0.0;
    let mut prev_h = h(0.0);
    let mut outer = 0.0;
    let mut prev_integrand = 0.0; // g(0) * 0
    for i in 1..=n {
        let t = i as f64 * dt;
        let ht = h(t);
        inner += 0.5 * dt * (prev_h + ht);
        prev_h = ht;
        let integrand = g(t) * inner;
        outer += 0.5 * dt * (prev_integrand + integrand);
        prev_integrand = integrand;
    }
    outer
}
