//! Minimal double-double arithmetic for the age recursions.
//!
//! The engine sums train values that are mathematically identical across
//! reorderings (mirrored blocking sequences, permuted sub-carrier
//! assignments), and several contracts assert bit-for-bit equality of those
//! sums. Plain f64 accumulation breaks such ties in the last ulp, so the
//! per-user recursion and its running sum are carried in ~106-bit precision
//! and rounded once at the end. `two_prod` relies on `f64::mul_add` being a
//! correctly rounded fused multiply-add, which IEEE 754 guarantees.

#[derive(Clone, Copy, Debug, Default)]
pub(crate) struct Dd {
    hi: f64,
    lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    let err = a.mul_add(b, -p);
    (p, err)
}

impl Dd {
    pub const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };
    pub const ONE: Dd = Dd { hi: 1.0, lo: 0.0 };

    #[inline]
    pub fn mul_f64(self, f: f64) -> Dd {
        let (p, e) = two_prod(self.hi, f);
        let (hi, lo) = two_sum(p, self.lo.mul_add(f, e));
        Dd { hi, lo }
    }

    #[inline]
    pub fn add_f64(self, x: f64) -> Dd {
        let (s, e) = two_sum(self.hi, x);
        let (hi, lo) = two_sum(s, e + self.lo);
        Dd { hi, lo }
    }

    #[inline]
    pub fn add(self, other: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, other.hi);
        let (hi, lo) = two_sum(s, e + self.lo + other.lo);
        Dd { hi, lo }
    }

    #[inline]
    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }
}
