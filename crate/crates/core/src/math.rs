//! Scalar and vector helpers. Elementary functions come from `libm` so the
//! crate stays `no_std`.

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn powf(x: f64, p: f64) -> f64 {
    libm::pow(x, p)
}

#[inline]
pub fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub fn ln_1p(x: f64) -> f64 {
    libm::log1p(x)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    sqrt(dot(a, a))
}

pub fn norm1(a: &[f64]) -> f64 {
    a.iter().map(|x| x.abs()).sum()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn sub(a: &[f64], b: &[f64]) -> alloc::vec::Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn min(a: &[f64]) -> f64 {
    a.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn max(a: &[f64]) -> f64 {
    a.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `‖a − b‖₂ / ‖b‖₂`, the relative-change stopping measure. Falls back to the
/// absolute change when `b` vanishes.
pub fn relative_change(a: &[f64], b: &[f64]) -> f64 {
    let num = sqrt(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum());
    let den = norm2(b);
    if den > 0.0 {
        num / den
    } else {
        num
    }
}
