//! Double-double scalar (about 32 significant digits) so the network can be
//! evaluated far below `f64` roundoff. Only the finite-difference oracle uses
//! it; functions outside the forward pass fall back to `f64` precision.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::num::FpCategory;
use std::ops::{Add, AddAssign, Div, DivAssign, Mul, MulAssign, Neg, Rem, RemAssign, Sub, SubAssign};

use deepflow::Real;
use num_traits::{Float, Num, NumCast, One, ToPrimitive, Zero};

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Dd {
    hi: f64,
    lo: f64,
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let v = s - a;
    (s, (a - (s - v)) + (b - v))
}

fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd { hi: s, lo: b - (s - a) }
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub const fn new(v: f64) -> Dd {
        Dd { hi: v, lo: 0.0 }
    }

    pub fn hi(self) -> f64 {
        self.hi
    }

    fn lossy(self) -> f64 {
        self.hi + self.lo
    }

    fn via_f64(self, f: impl Fn(f64) -> f64) -> Self {
        Dd::new(f(self.lossy()))
    }

    fn scale(self, k: i32) -> Dd {
        let f = 2f64.powi(k);
        Dd { hi: self.hi * f, lo: self.lo * f }
    }

    fn dd_sqrt(self) -> Dd {
        if self.hi <= 0.0 {
            return Dd::new(self.hi.sqrt());
        }
        let x = 1.0 / self.hi.sqrt();
        let y = self.hi * x;
        let (p, e) = two_prod(y, y);
        let r = self - Dd { hi: p, lo: e };
        quick_two_sum(y, r.hi * x * 0.5)
    }

    fn dd_exp(self) -> Dd {
        if self.hi > 709.0 {
            return Dd::new(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Dd::zero();
        }
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * Dd::new(k)).scale(-10);
        // exp(r) - 1 by Taylor series, then undo the 2^-10 by squaring
        let mut term = r;
        let mut s = r;
        for n in 2..=14 {
            term = term * r / Dd::new(n as f64);
            s += term;
        }
        for _ in 0..10 {
            s = s * s + s + s;
        }
        (s + Dd::one()).scale(k as i32)
    }

    fn dd_ln(self) -> Dd {
        let y = Dd::new(self.hi.ln());
        y + self * (-y).dd_exp() - Dd::one()
    }
}

impl PartialOrd for Dd {
    fn partial_cmp(&self, o: &Dd) -> Option<Ordering> {
        match self.hi.partial_cmp(&o.hi) {
            Some(Ordering::Equal) => self.lo.partial_cmp(&o.lo),
            c => c,
        }
    }
}

impl Add for Dd {
    type Output = Dd;
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let r = quick_two_sum(s, e + t);
        quick_two_sum(r.hi, r.lo + f)
    }
}

impl Sub for Dd {
    type Output = Dd;
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        quick_two_sum(p, e + (self.hi * o.lo + self.lo * o.hi))
    }
}

impl Div for Dd {
    type Output = Dd;
    fn div(self, o: Dd) -> Dd {
        let q1 = self.hi / o.hi;
        let r = self - o * Dd::new(q1);
        let q2 = r.hi / o.hi;
        let r = r - o * Dd::new(q2);
        let q3 = r.hi / o.hi;
        quick_two_sum(q1, q2) + Dd::new(q3)
    }
}

macro_rules! assign {
    ($tr:ident, $m:ident, $op:tt) => {
        impl $tr for Dd {
            fn $m(&mut self, o: Dd) {
                *self = *self $op o;
            }
        }
    };
}

assign!(AddAssign, add_assign, +);
assign!(SubAssign, sub_assign, -);
assign!(MulAssign, mul_assign, *);
assign!(DivAssign, div_assign, /);

impl fmt::Display for Dd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.lossy())
    }
}

impl Rem for Dd {
    type Output = Dd;
    fn rem(self, o: Dd) -> Dd {
        self - o * (self / o).trunc()
    }
}

impl RemAssign for Dd {
    fn rem_assign(&mut self, o: Dd) {
        *self = *self % o;
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }
}

impl Sum for Dd {
    fn sum<I: Iterator<Item = Dd>>(iter: I) -> Dd {
        iter.fold(Dd::zero(), |a, b| a + b)
    }
}

impl Zero for Dd {
    fn zero() -> Dd {
        Dd::new(0.0)
    }
    fn is_zero(&self) -> bool {
        self.hi == 0.0
    }
}

impl One for Dd {
    fn one() -> Dd {
        Dd::new(1.0)
    }
}

impl Num for Dd {
    type FromStrRadixErr = <f64 as Num>::FromStrRadixErr;
    fn from_str_radix(s: &str, radix: u32) -> Result<Dd, Self::FromStrRadixErr> {
        f64::from_str_radix(s, radix).map(|v| Dd::new(v))
    }
}

impl ToPrimitive for Dd {
    fn to_i64(&self) -> Option<i64> {
        self.lossy().to_i64()
    }
    fn to_u64(&self) -> Option<u64> {
        self.lossy().to_u64()
    }
    fn to_f64(&self) -> Option<f64> {
        Some(self.lossy())
    }
}

impl NumCast for Dd {
    fn from<N: ToPrimitive>(n: N) -> Option<Dd> {
        n.to_f64().map(|v| Dd::new(v))
    }
}

macro_rules! lossy {
    ($($name:ident),*) => {
        $(fn $name(self) -> Dd {
            self.via_f64(f64::$name)
        })*
    };
}

impl Float for Dd {
    fn nan() -> Dd {
        Dd::new(f64::NAN)
    }
    fn infinity() -> Dd {
        Dd::new(f64::INFINITY)
    }
    fn neg_infinity() -> Dd {
        Dd::new(f64::NEG_INFINITY)
    }
    fn neg_zero() -> Dd {
        Dd::new(-0.0)
    }
    fn min_value() -> Dd {
        Dd::new(f64::MIN)
    }
    fn min_positive_value() -> Dd {
        Dd::new(f64::MIN_POSITIVE)
    }
    fn max_value() -> Dd {
        Dd::new(f64::MAX)
    }
    fn is_nan(self) -> bool {
        self.hi().is_nan()
    }
    fn is_infinite(self) -> bool {
        self.hi().is_infinite()
    }
    fn is_finite(self) -> bool {
        self.hi().is_finite()
    }
    fn is_normal(self) -> bool {
        self.hi().is_normal()
    }
    fn classify(self) -> FpCategory {
        self.hi().classify()
    }
    fn floor(self) -> Dd {
        let h = self.hi.floor();
        if h == self.hi { quick_two_sum(h, self.lo.floor()) } else { Dd::new(h) }
    }
    fn ceil(self) -> Dd {
        -(-self).floor()
    }
    fn round(self) -> Dd {
        (self + Dd::new(0.5)).floor()
    }
    fn trunc(self) -> Dd {
        if self.hi >= 0.0 { self.floor() } else { self.ceil() }
    }
    fn fract(self) -> Dd {
        self - self.trunc()
    }
    fn abs(self) -> Dd {
        if self.hi < 0.0 { -self } else { self }
    }
    fn signum(self) -> Dd {
        Dd::new(self.hi.signum())
    }
    fn is_sign_positive(self) -> bool {
        self.hi.is_sign_positive()
    }
    fn is_sign_negative(self) -> bool {
        self.hi.is_sign_negative()
    }
    fn mul_add(self, a: Dd, b: Dd) -> Dd {
        self * a + b
    }
    fn recip(self) -> Dd {
        Dd::one() / self
    }
    fn powi(self, n: i32) -> Dd {
        let mut r = Dd::one();
        for _ in 0..n.unsigned_abs() {
            r *= self;
        }
        if n < 0 { r.recip() } else { r }
    }
    fn powf(self, n: Dd) -> Dd {
        (n * self.ln()).exp()
    }
    fn sqrt(self) -> Dd {
        self.dd_sqrt()
    }
    fn exp(self) -> Dd {
        self.dd_exp()
    }
    fn ln(self) -> Dd {
        self.dd_ln()
    }
    fn log(self, base: Dd) -> Dd {
        self.ln() / base.ln()
    }
    fn max(self, o: Dd) -> Dd {
        if self >= o { self } else { o }
    }
    fn min(self, o: Dd) -> Dd {
        if self <= o { self } else { o }
    }
    fn abs_sub(self, o: Dd) -> Dd {
        (self - o).max(Dd::zero())
    }
    fn hypot(self, o: Dd) -> Dd {
        (self * self + o * o).sqrt()
    }
    fn atan2(self, o: Dd) -> Dd {
        Dd::new(self.lossy().atan2(o.lossy()))
    }
    fn sin_cos(self) -> (Dd, Dd) {
        (self.sin(), self.cos())
    }
    fn integer_decode(self) -> (u64, i16, i8) {
        self.hi().integer_decode()
    }
    lossy!(exp2, log2, log10, cbrt, sin, cos, tan, asin, acos, atan, exp_m1, ln_1p, sinh, cosh, tanh, asinh, acosh, atanh);
}

impl Real for Dd {
    const NAME: &'static str = "dd";
    type Acc = Dd;

    fn of(v: f64) -> Dd {
        Dd::new(v)
    }

    fn as_f64(self) -> f64 {
        self.lossy()
    }

    fn widen(self) -> Dd {
        self
    }

    fn narrow(v: Dd) -> Dd {
        v
    }

    unsafe fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        alpha: Dd,
        a: *const Dd,
        rsa: isize,
        csa: isize,
        b: *const Dd,
        rsb: isize,
        csb: isize,
        beta: Dd,
        c: *mut Dd,
        rsc: isize,
        csc: isize,
    ) {
        for i in 0..m as isize {
            for j in 0..n as isize {
                let mut acc = Dd::zero();
                for p in 0..k as isize {
                    acc += *a.offset(i * rsa + p * csa) * *b.offset(p * rsb + j * csb);
                }
                let out = c.offset(i * rsc + j * csc);
                *out = if beta.is_zero() { alpha * acc } else { alpha * acc + beta * *out };
            }
        }
    }
}
