//! Scalar numerics: standard normal distribution functions, a safeguarded
//! root finder for strictly increasing functions and an adaptive
//! Gauss-Kronrod quadrature used to cross-check closed-form expectations.

use statrs::function::erf;

use crate::error::{Error, Result};

/// 1 / sqrt(2 pi)
pub const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Default tolerance on |f| for root solves.
pub const DEFAULT_ROOT_TOL: f64 = 1e-12;

/// Half-width of the integration window used for expectations against N(0,1).
pub const QUADRATURE_HALF_WIDTH: f64 = 12.0;

const MAX_ROOT_ITERATIONS: usize = 400;
const MAX_QUADRATURE_INTERVALS: usize = 20_000;

fn ensure_finite(name: &str, z: f64) -> Result<()> {
    if z.is_finite() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be finite, got {z}")))
    }
}

/// N(z) without argument checks. Uses erfc on both tails so that
/// `norm_cdf(-z)` keeps full relative precision for large z.
#[inline]
pub(crate) fn norm_cdf(z: f64) -> f64 {
    (0.5 * erf::erfc(-z / std::f64::consts::SQRT_2)).clamp(0.0, 1.0)
}

#[inline]
pub(crate) fn norm_pdf(z: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * z * z).exp()
}

/// Standard normal distribution function.
pub fn std_normal_cdf(z: f64) -> Result<f64> {
    ensure_finite("z", z)?;
    Ok(norm_cdf(z))
}

/// Standard normal density `exp(-z^2/2) / sqrt(2 pi)`.
pub fn std_normal_pdf(z: f64) -> Result<f64> {
    ensure_finite("z", z)?;
    Ok(norm_pdf(z))
}

/// Inverse of the standard normal distribution function on (0, 1).
pub fn std_normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::invalid(format!("quantile level must lie in (0, 1), got {p}")));
    }
    let q = -std::f64::consts::SQRT_2 * erf::erfc_inv(2.0 * p);
    if p == 0.5 {
        return Ok(0.0);
    }
    // One Newton correction against the erfc-based distribution function.
    Ok(q - (norm_cdf(q) - p) / norm_pdf(q))
}

/// Closed interval known to contain the zero of an increasing function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    lo: f64,
    hi: f64,
}

impl Bracket {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) {
            return Err(Error::invalid(format!("bracket ends must be finite, got [{lo}, {hi}]")));
        }
        if lo >= hi {
            return Err(Error::invalid(format!("bracket requires lo < hi, got [{lo}, {hi}]")));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Zero of a strictly increasing `f` inside `bracket`, without derivatives.
///
/// Steps are Illinois-modified false position, replaced by bisection whenever
/// they fail to shrink the bracket fast enough. Terminates when `|f(p)| <= tol`
/// or the bracket is narrower than `tol`.
pub fn find_root_increasing<F>(f: F, bracket: Bracket, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    solve(|x| (f(x), None), bracket, tol, None)
}

/// Zero of a strictly increasing `f` using Newton steps safeguarded by
/// bisection. `f` returns the pair `(f(x), f'(x))`; `start` defaults to the
/// bracket midpoint and is clamped into the bracket.
pub fn find_root_newton<F>(f: F, bracket: Bracket, tol: f64, start: Option<f64>) -> Result<f64>
where
    F: Fn(f64) -> (f64, f64),
{
    solve(
        |x| {
            let (v, d) = f(x);
            (v, Some(d))
        },
        bracket,
        tol,
        start,
    )
}

fn solve<F>(f: F, bracket: Bracket, tol: f64, start: Option<f64>) -> Result<f64>
where
    F: Fn(f64) -> (f64, Option<f64>),
{
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    let (mut lo, mut hi) = (bracket.lo, bracket.hi);
    let (mut f_lo, d_lo) = f(lo);
    let (mut f_hi, d_hi) = f(hi);
    if f_lo.is_nan() || f_hi.is_nan() {
        return Err(Error::invalid("target function returned NaN at the bracket ends"));
    }
    if f_lo > tol || f_hi < -tol {
        return Err(Error::Bracket { lo, hi, f_lo, f_hi });
    }
    if f_lo.abs() <= tol {
        return Ok(lo);
    }
    if f_hi.abs() <= tol {
        return Ok(hi);
    }

    // Current iterate and its values.
    let (mut x, mut fx, mut dx) = match start {
        Some(s) if s > lo && s < hi => {
            let (v, d) = f(s);
            (s, v, d)
        }
        _ if f_lo.abs() < f_hi.abs() => (lo, f_lo, d_lo),
        _ => (hi, f_hi, d_hi),
    };
    if fx.abs() <= tol {
        return Ok(x);
    }
    if fx < 0.0 {
        lo = x;
        f_lo = fx;
    } else {
        hi = x;
        f_hi = fx;
    }

    let mut best = (x, fx.abs());
    let mut step_old = hi - lo;
    let mut step = step_old;
    // Illinois bookkeeping: which side was retained last time.
    let mut side = 0i8;

    for _ in 0..MAX_ROOT_ITERATIONS {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi || hi - lo <= tol {
            return Ok(best.0);
        }

        let candidate = match dx {
            Some(d) if d > 0.0 && d.is_finite() => {
                let c = x - fx / d;
                if c == x {
                    // Newton correction below floating-point resolution.
                    return Ok(x);
                }
                (c > lo && c < hi && (fx / d).abs() < 0.5 * step_old.abs()).then_some(c)
            }
            Some(_) => None,
            None => {
                let (mut a, mut b) = (f_lo, f_hi);
                match side {
                    1 => a *= 0.5,
                    -1 => b *= 0.5,
                    _ => {}
                }
                let c = (lo * b - hi * a) / (b - a);
                (c > lo && c < hi && (c - x).abs() < 0.5 * step_old.abs()).then_some(c)
            }
        };
        let next = candidate.unwrap_or(mid);
        step_old = step;
        step = next - x;

        let (v, d) = f(next);
        if v.is_nan() {
            return Err(Error::Internal(format!("target function returned NaN at {next}")));
        }
        x = next;
        fx = v;
        dx = d;
        if v.abs() < best.1 {
            best = (x, v.abs());
        }
        if v.abs() <= tol {
            return Ok(polish(&f, x, v, d, lo, hi));
        }
        if v < 0.0 {
            lo = x;
            f_lo = v;
            side = if side == -1 { 1 } else { -1 };
        } else {
            hi = x;
            f_hi = v;
            side = if side == 1 { -1 } else { 1 };
        }
    }
    Ok(best.0)
}

/// One extra Newton step once the tolerance is met, kept only if it lowers |f|.
fn polish<F>(f: &F, x: f64, fx: f64, dx: Option<f64>, lo: f64, hi: f64) -> f64
where
    F: Fn(f64) -> (f64, Option<f64>),
{
    match dx {
        Some(d) if d > 0.0 && fx != 0.0 => {
            let c = x - fx / d;
            if c >= lo && c <= hi && c != x {
                let (v, _) = f(c);
                if v.abs() < fx.abs() {
                    return c;
                }
            }
            x
        }
        _ => x,
    }
}

// Gauss-Kronrod 7/15 abscissae and weights.
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> Segment {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    for j in 0..7 {
        let dx = half * XGK[j];
        let pair = f(center - dx) + f(center + dx);
        kronrod += WGK[j] * pair;
        if j % 2 == 1 {
            gauss += WG[j / 2] * pair;
        }
    }
    Segment {
        a,
        b,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
    }
}

/// Globally adaptive Gauss-Kronrod integral of `f` over `[a, b]`.
pub fn integrate_adaptive<F>(f: F, a: f64, b: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(tol > 0.0) {
        return Err(Error::invalid(format!("tolerance must be positive, got {tol}")));
    }
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::invalid(format!("invalid integration range [{a}, {b}]")));
    }
    const INITIAL_PIECES: usize = 24;
    let width = (b - a) / INITIAL_PIECES as f64;
    let mut segments: Vec<Segment> = (0..INITIAL_PIECES)
        .map(|k| {
            let lo = a + width * k as f64;
            let hi = if k + 1 == INITIAL_PIECES { b } else { lo + width };
            gauss_kronrod(&f, lo, hi)
        })
        .collect();

    loop {
        let total: f64 = segments.iter().map(|s| s.value).sum();
        let error: f64 = segments.iter().map(|s| s.error).sum();
        if error <= tol {
            return Ok(total);
        }
        if segments.len() >= MAX_QUADRATURE_INTERVALS {
            return Err(Error::Accuracy { estimate: total, error });
        }
        let (worst, _) = segments
            .iter()
            .enumerate()
            .max_by(|(_, x), (_, y)| x.error.total_cmp(&y.error))
            .expect("segment list is never empty");
        let seg = segments.swap_remove(worst);
        let mid = 0.5 * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            return Err(Error::Accuracy { estimate: total, error });
        }
        segments.push(gauss_kronrod(&f, seg.a, mid));
        segments.push(gauss_kronrod(&f, mid, seg.b));
    }
}

/// `E[g(X)]` for `X ~ N(0,1)`, integrating `g(x) N'(x)` over `[-12, 12]`.
pub fn quadrature_expectation<G>(g: G, tol: f64) -> Result<f64>
where
    G: Fn(f64) -> f64,
{
    integrate_adaptive(
        |x| g(x) * norm_pdf(x),
        -QUADRATURE_HALF_WIDTH,
        QUADRATURE_HALF_WIDTH,
        tol,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn cdf_symmetry_and_center() {
        assert_eq!(std_normal_cdf(0.0).unwrap(), 0.5);
        for &z in &[0.1, 0.7, 1.3, 2.5, 4.0, 8.0] {
            let s = std_normal_cdf(z).unwrap() + std_normal_cdf(-z).unwrap();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn cdf_matches_quadrature_of_density() {
        // Oracle: integrate the density over [-12, 1].
        let oracle = integrate_adaptive(norm_pdf, -12.0, 1.0, 1e-14).unwrap();
        assert_abs_diff_eq!(std_normal_cdf(1.0).unwrap(), oracle, epsilon = 1e-10);
        let oracle = integrate_adaptive(norm_pdf, -12.0, -2.3, 1e-15).unwrap();
        assert_abs_diff_eq!(std_normal_cdf(-2.3).unwrap(), oracle, epsilon = 1e-12);
    }

    #[test]
    fn cdf_rejects_non_finite() {
        assert!(matches!(std_normal_cdf(f64::NAN), Err(Error::InvalidArgument(_))));
        assert!(std_normal_pdf(f64::INFINITY).is_err());
    }

    #[test]
    fn pdf_mode_and_parity() {
        assert_abs_diff_eq!(std_normal_pdf(0.0).unwrap(), 0.398_942_280_4, epsilon = 1e-10);
        assert_eq!(std_normal_pdf(1.7).unwrap(), std_normal_pdf(-1.7).unwrap());
    }

    #[test]
    fn pdf_is_derivative_of_cdf() {
        let h = 1e-5;
        let mut z = -6.0;
        while z <= 6.0 {
            let fd = (norm_cdf(z + h) - norm_cdf(z - h)) / (2.0 * h);
            assert_abs_diff_eq!(fd, norm_pdf(z), epsilon = 1e-6);
            z += 0.05;
        }
        let fd = (norm_cdf(0.7 + h) - norm_cdf(0.7 - h)) / (2.0 * h);
        assert_abs_diff_eq!(fd, norm_pdf(0.7), epsilon = 1e-6);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-10, 0.001, 0.2, 0.5, 0.75, 0.999] {
            let q = std_normal_quantile(p).unwrap();
            let err = (norm_cdf(q) - p).abs() / p;
            assert!(err <= 1e-13, "p = {p}: relative error {err:e}");
        }
        assert_eq!(std_normal_quantile(0.5).unwrap(), 0.0);
        assert!(std_normal_quantile(1.0).is_err());
    }

    #[test]
    fn linear_root() {
        let b = Bracket::new(0.0, 5.0).unwrap();
        let r = find_root_increasing(|p| p - 2.0, b, 1e-12).unwrap();
        assert_abs_diff_eq!(r, 2.0, epsilon = 1e-12);
        let r = find_root_newton(|p| (p - 2.0, 1.0), b, 1e-12, None).unwrap();
        assert_abs_diff_eq!(r, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn cdf_root_is_zero() {
        let b = Bracket::new(-3.0, 3.0).unwrap();
        let r = find_root_increasing(|p| norm_cdf(p) - 0.5, b, 1e-12).unwrap();
        assert_abs_diff_eq!(r, 0.0, epsilon = 1e-11);
        let r = find_root_newton(|p| (norm_cdf(p) - 0.5, norm_pdf(p)), b, 1e-12, Some(2.9)).unwrap();
        assert_abs_diff_eq!(r, 0.0, epsilon = 1e-11);
    }

    #[test]
    fn bad_brackets_and_tolerances() {
        let b = Bracket::new(3.0, 5.0).unwrap();
        assert!(matches!(
            find_root_increasing(|p| p - 2.0, b, 1e-12),
            Err(Error::Bracket { .. })
        ));
        let b = Bracket::new(0.0, 5.0).unwrap();
        assert!(matches!(
            find_root_increasing(|p| p - 2.0, b, 0.0),
            Err(Error::InvalidArgument(_))
        ));
        assert!(Bracket::new(1.0, 1.0).is_err());
        assert!(Bracket::new(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn root_at_bracket_end() {
        let b = Bracket::new(2.0, 5.0).unwrap();
        assert_eq!(find_root_increasing(|p| p - 2.0, b, 1e-12).unwrap(), 2.0);
    }

    #[test]
    fn steep_step_function_root() {
        // Nearly a step at 0.3 plus a gentle slope: hard for plain Newton.
        let f = |p: f64| {
            let z = (p - 0.3) / 0.005;
            (200.0 * norm_cdf(z) - 100.0 + 0.2 * p, 200.0 / 0.005 * norm_pdf(z) + 0.2)
        };
        let b = Bracket::new(-600.0, 600.0).unwrap();
        let r = find_root_newton(f, b, 1e-12, Some(-400.0)).unwrap();
        assert!(f(r).0.abs() <= 1e-12);
        let r2 = find_root_increasing(|p| f(p).0, b, 1e-12).unwrap();
        assert!((r - r2).abs() < 1e-12);
    }

    #[test]
    fn moments_of_standard_normal() {
        let tol = 1e-12;
        assert_abs_diff_eq!(quadrature_expectation(|_| 1.0, tol).unwrap(), 1.0, epsilon = tol);
        assert_abs_diff_eq!(quadrature_expectation(|x| x, tol).unwrap(), 0.0, epsilon = tol);
        assert_abs_diff_eq!(quadrature_expectation(|x| x * x, tol).unwrap(), 1.0, epsilon = tol);
    }

    #[test]
    fn quadrature_reports_unreachable_tolerance() {
        let err = integrate_adaptive(|x| 1e6 * x.sin(), 0.0, 1.0, 1e-300).unwrap_err();
        assert!(matches!(err, Error::Accuracy { .. }));
    }
}
