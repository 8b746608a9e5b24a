//! Small polynomial-system tools: real roots of a quartic and the real
//! solutions of three quadrics in three unknowns via an action matrix.

use nalgebra::{DMatrix, Matrix4, SMatrix};

/// Roots whose imaginary part is below this (relative to their modulus)
/// are treated as real.
pub(crate) const IMAG_TOL: f64 = 1e-8;

fn is_real(re: f64, im: f64) -> bool {
    im.abs() <= IMAG_TOL * (1.0 + (re * re + im * im).sqrt())
}

/// Real roots of `c4 x⁴ + c3 x³ + c2 x² + c1 x + c0`, from the companion
/// matrix eigenvalues polished by Newton steps.
pub(crate) fn quartic_real_roots(c: [f64; 5]) -> Vec<f64> {
    let [c4, c3, c2, c1, c0] = c;
    if c4 == 0.0 || !c.iter().all(|v| v.is_finite()) {
        return Vec::new();
    }
    let (a3, a2, a1, a0) = (c3 / c4, c2 / c4, c1 / c4, c0 / c4);
    #[rustfmt::skip]
    let companion = Matrix4::new(
        -a3, -a2, -a1, -a0,
        1.0, 0.0, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0,
        0.0, 0.0, 1.0, 0.0,
    );
    let eig = companion.complex_eigenvalues();
    let eval = |x: f64| (((c4 * x + c3) * x + c2) * x + c1) * x + c0;
    let deriv = |x: f64| ((4.0 * c4 * x + 3.0 * c3) * x + 2.0 * c2) * x + c1;
    let mut out = Vec::new();
    for z in eig.iter() {
        if !is_real(z.re, z.im) {
            continue;
        }
        let mut x = z.re;
        for _ in 0..3 {
            let d = deriv(x);
            if d == 0.0 {
                break;
            }
            let nx = x - eval(x) / d;
            if !nx.is_finite() || eval(nx).abs() > eval(x).abs() {
                break;
            }
            x = nx;
        }
        out.push(x);
    }
    out
}

/// Monomial exponents `(x, y, z)` of degree ≤ 4, degree-descending.
fn monomials() -> Vec<[u8; 3]> {
    let mut out = Vec::with_capacity(35);
    for d in (0..=4u8).rev() {
        let mut level = Vec::new();
        for a in 0..=d {
            for b in 0..=(d - a) {
                level.push([a, b, d - a - b]);
            }
        }
        level.sort_by(|p, q| q.cmp(p));
        out.extend(level);
    }
    out
}

/// Standard monomials of the quotient ring for three generic quadrics.
const BASIS: [[u8; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [0, 1, 0],
    [0, 0, 1],
    [0, 2, 0],
    [0, 1, 1],
    [0, 0, 2],
    [0, 0, 3],
];

/// A quadric in `(x, y, z)` given by a symmetric 4×4 form acting on
/// `(x, y, z, 1)`.
pub(crate) type QuadricForm = Matrix4<f64>;

/// Real solutions of three quadrics `[x y z 1] Q_k [x y z 1]ᵀ = 0`.
///
/// The quadrics are multiplied by all monomials of degree ≤ 2, the
/// non-basis monomials are eliminated by least squares and the action
/// matrix of a generic linear form is read off the result; its eigenvectors
/// are the basis monomials evaluated at the solutions.
pub(crate) fn solve_three_quadrics(forms: &[QuadricForm; 3]) -> Vec<[f64; 3]> {
    let mons = monomials();
    let col_of = |m: [u8; 3]| mons.iter().position(|&x| x == m).unwrap();
    let lin: [[u8; 3]; 4] = [[1, 0, 0], [0, 1, 0], [0, 0, 1], [0, 0, 0]];

    let mut polys: Vec<Vec<([u8; 3], f64)>> = Vec::with_capacity(3);
    for q in forms {
        let mut terms: Vec<([u8; 3], f64)> = Vec::new();
        for i in 0..4 {
            for j in 0..4 {
                let m = [
                    lin[i][0] + lin[j][0],
                    lin[i][1] + lin[j][1],
                    lin[i][2] + lin[j][2],
                ];
                match terms.iter_mut().find(|t| t.0 == m) {
                    Some(t) => t.1 += q[(i, j)],
                    None => terms.push((m, q[(i, j)])),
                }
            }
        }
        polys.push(terms);
    }

    let multipliers: Vec<[u8; 3]> = mons.iter().copied().filter(|m| m.iter().sum::<u8>() <= 2).collect();
    let non_basis: Vec<usize> = (0..mons.len()).filter(|&i| !BASIS.contains(&mons[i])).collect();
    let basis_cols: Vec<usize> = BASIS.iter().map(|&b| col_of(b)).collect();

    let rows = polys.len() * multipliers.len();
    let mut a_n = DMatrix::<f64>::zeros(rows, non_basis.len());
    let mut a_b = DMatrix::<f64>::zeros(rows, BASIS.len());
    let mut row = 0;
    for p in &polys {
        for mm in &multipliers {
            for &(m, c) in p {
                let col = col_of([m[0] + mm[0], m[1] + mm[1], m[2] + mm[2]]);
                if let Some(k) = non_basis.iter().position(|&x| x == col) {
                    a_n[(row, k)] += c;
                } else {
                    let k = basis_cols.iter().position(|&x| x == col).unwrap();
                    a_b[(row, k)] += c;
                }
            }
            row += 1;
        }
    }

    let svd = a_n.svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    if smax == 0.0 || sv.min() < 1e-14 * smax {
        return Vec::new();
    }
    // non-basis monomial values = reduction * basis values (on the solutions)
    let Ok(reduction) = svd.solve(&(-a_b), 0.0) else {
        return Vec::new();
    };

    let normal_form = |m: [u8; 3]| -> [f64; 8] {
        let mut out = [0.0; 8];
        if let Some(k) = BASIS.iter().position(|&b| b == m) {
            out[k] = 1.0;
        } else {
            let col = col_of(m);
            let k = non_basis.iter().position(|&x| x == col).unwrap();
            for (j, o) in out.iter_mut().enumerate() {
                *o = reduction[(k, j)];
            }
        }
        out
    };
    // generic linear form x + c1 y + c2 z separates solutions sharing x
    let weights = [1.0, 0.371_390_676_354_103_7, -0.613_356_149_280_223_4];
    let mut action = SMatrix::<f64, 8, 8>::zeros();
    for (i, b) in BASIS.iter().enumerate() {
        for (var, w) in weights.iter().enumerate() {
            let mut m = *b;
            m[var] += 1;
            let nf = normal_form(m);
            for j in 0..8 {
                action[(i, j)] += w * nf[j];
            }
        }
    }

    let mut out = Vec::new();
    for ev in action.complex_eigenvalues().iter() {
        if !is_real(ev.re, ev.im) {
            continue;
        }
        let shifted = action - SMatrix::<f64, 8, 8>::identity() * ev.re;
        let s = shifted.svd(false, true);
        let Some(vt) = s.v_t else { continue };
        let (k, _) = s
            .singular_values
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
        let v = vt.row(k);
        if v[0].abs() < 1e-12 * v.amax() {
            continue;
        }
        out.push([v[1] / v[0], v[2] / v[0], v[3] / v[0]]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quartic_known_roots() {
        // (x-1)(x+2)(x-0.5)(x-3)
        let c = [1.0, -2.5, -4.0, 8.5, -3.0];
        let mut r = quartic_real_roots(c);
        r.sort_by(f64::total_cmp);
        let expect = [-2.0, 0.5, 1.0, 3.0];
        assert_eq!(r.len(), 4);
        for (a, b) in r.iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn quartic_complex_pair_dropped() {
        // (x²+1)(x-2)(x+1)
        let r = quartic_real_roots([1.0, -1.0, -1.0, -1.0, -2.0]);
        assert_eq!(r.len(), 2);
    }

    #[test]
    fn random_quadrics_through_known_point() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut hits = 0;
        for _ in 0..100 {
            let p = [
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ];
            let forms: [QuadricForm; 3] = std::array::from_fn(|_| {
                let mut q = Matrix4::from_fn(|_, _| rng.random_range(-1.0..1.0));
                q = (q + q.transpose()) * 0.5;
                let v = nalgebra::Vector4::new(p[0], p[1], p[2], 1.0);
                q[(3, 3)] -= (v.transpose() * q * v)[0];
                q
            });
            let sols = solve_three_quadrics(&forms);
            assert!(sols.len() <= 8);
            if sols.iter().any(|s| (0..3).all(|i| (s[i] - p[i]).abs() < 1e-6)) {
                hits += 1;
            }
        }
        assert!(hits >= 98, "{hits}");
    }
}
