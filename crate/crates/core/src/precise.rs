//! Double-double arithmetic for the few closed forms whose final addition can
//! cancel (logarithmic and polynomial families). Values are carried as an
//! unevaluated sum `hi + lo` with |lo| ≤ ulp(hi)/2.

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Dd {
    pub hi: f64,
    pub lo: f64,
}

const LN2: Dd = Dd {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

#[inline]
pub(crate) fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
pub(crate) fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl Dd {
    pub fn from(x: f64) -> Dd {
        Dd { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    pub fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        let (t, f) = two_sum(self.lo, o.lo);
        let (s, e) = quick_two_sum(s, e + t);
        let (hi, lo) = quick_two_sum(s, e + f);
        Dd { hi, lo }
    }

    pub fn add_f64(self, o: f64) -> Dd {
        self.add(Dd::from(o))
    }

    pub fn neg(self) -> Dd {
        Dd { hi: -self.hi, lo: -self.lo }
    }

    pub fn sub(self, o: Dd) -> Dd {
        self.add(o.neg())
    }

    pub fn mul(self, o: Dd) -> Dd {
        let (p, e) = two_prod(self.hi, o.hi);
        let e = e + (self.hi * o.lo + self.lo * o.hi);
        let (hi, lo) = quick_two_sum(p, e);
        Dd { hi, lo }
    }

    pub fn mul_f64(self, o: f64) -> Dd {
        self.mul(Dd::from(o))
    }

    pub fn div_f64(self, d: f64) -> Dd {
        let q1 = self.hi / d;
        let (p, e) = two_prod(q1, d);
        let r = self.sub(Dd { hi: p, lo: e });
        let q2 = r.hi / d;
        let (hi, lo) = quick_two_sum(q1, q2);
        Dd { hi, lo }
    }

    fn ldexp(self, k: i32) -> Dd {
        let s = 2f64.powi(k);
        Dd { hi: self.hi * s, lo: self.lo * s }
    }
}

/// e^x to roughly 100 bits.
pub(crate) fn exp(x: Dd) -> Dd {
    if x.hi > 709.0 {
        return Dd::from(f64::INFINITY);
    }
    if x.hi < -745.0 {
        return Dd::from(0.0);
    }
    let k = (x.hi / LN2.hi).round();
    let r = x.sub(LN2.mul_f64(k)).ldexp(-10);
    // Taylor series on |r| < 4e-4
    let mut term = Dd::from(1.0);
    let mut sum = Dd::from(1.0);
    for i in 1..=12 {
        term = term.mul(r).div_f64(i as f64);
        sum = sum.add(term);
        if term.hi.abs() < 1e-36 {
            break;
        }
    }
    for _ in 0..10 {
        sum = sum.mul(sum);
    }
    // split the scale so 2^k never overflows on its own
    let k = k as i32;
    let half = k / 2;
    sum.ldexp(half).ldexp(k - half)
}

/// Natural log of a positive double-double, one Newton step from the f64 log.
pub(crate) fn ln(x: Dd) -> Dd {
    let y = Dd::from(x.hi.ln());
    let correction = x.mul(exp(y.neg())).add_f64(-1.0);
    y.add(correction)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_ln_round_trip() {
        for &v in &[1e-300, 1e-5, 0.3, 1.0, 1.0 + 1e-15, 2.0, 10.0, 1e100] {
            let l = ln(Dd::from(v));
            assert!((l.to_f64() - v.ln()).abs() <= 1e-15 * v.ln().abs().max(1e-300));
            let back = exp(l);
            assert!(((back.to_f64() - v) / v).abs() < 1e-15);
        }
    }

    #[test]
    fn ln_two_is_accurate_in_low_word() {
        let l = ln(Dd::from(2.0));
        assert!((l.hi - LN2.hi).abs() == 0.0);
        assert!((l.lo - LN2.lo).abs() < 1e-30);
    }
}
