//! Truncated Taylor jets of scalar functions of `n` variables, up to order 3.
//!
//! Charts are written once over [`Jet`] and evaluated either for positions
//! only (order 0) or with exact derivatives.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Value, gradient, Hessian and third-derivative tensor (dense, row-major).
/// Arrays above `order` are empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Jet {
    n: usize,
    order: u8,
    v: f64,
    g: Vec<f64>,
    h: Vec<f64>,
    t: Vec<f64>,
}

impl Jet {
    pub fn constant(n: usize, order: u8, c: f64) -> Self {
        assert!(order <= 3);
        Self {
            n,
            order,
            v: c,
            g: if order >= 1 { vec![0.0; n] } else { Vec::new() },
            h: if order >= 2 { vec![0.0; n * n] } else { Vec::new() },
            t: if order >= 3 { vec![0.0; n * n * n] } else { Vec::new() },
        }
    }

    /// The coordinate function `u_i` evaluated at `value`.
    pub fn variable(n: usize, order: u8, i: usize, value: f64) -> Self {
        let mut j = Self::constant(n, order, value);
        if order >= 1 {
            j.g[i] = 1.0;
        }
        j
    }

    /// Coordinate jets for a whole parameter point.
    pub fn variables(u: &[f64], order: u8) -> Vec<Jet> {
        (0..u.len()).map(|i| Self::variable(u.len(), order, i, u[i])).collect()
    }

    /// A constant with the same shape as `self`.
    pub fn lift(&self, c: f64) -> Self {
        Self::constant(self.n, self.order, c)
    }

    pub fn value(&self) -> f64 {
        self.v
    }

    pub fn nvars(&self) -> usize {
        self.n
    }

    pub fn order(&self) -> u8 {
        self.order
    }

    pub fn d1(&self, i: usize) -> f64 {
        self.g[i]
    }

    pub fn d2(&self, i: usize, j: usize) -> f64 {
        self.h[i * self.n + j]
    }

    pub fn d3(&self, i: usize, j: usize, k: usize) -> f64 {
        self.t[(i * self.n + j) * self.n + k]
    }

    fn same_shape(&self, o: &Jet) {
        debug_assert!(self.n == o.n && self.order == o.order, "jet shape mismatch");
    }

    /// `φ(self)` given `φ, φ', φ'', φ'''` at the value.
    pub fn compose(&self, d0: f64, d1: f64, d2: f64, d3: f64) -> Self {
        let n = self.n;
        let mut r = self.lift(d0);
        if self.order >= 1 {
            for i in 0..n {
                r.g[i] = d1 * self.g[i];
            }
        }
        if self.order >= 2 {
            for i in 0..n {
                for j in 0..n {
                    r.h[i * n + j] = d2 * self.g[i] * self.g[j] + d1 * self.h[i * n + j];
                }
            }
        }
        if self.order >= 3 {
            let (g, h) = (&self.g, &self.h);
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        r.t[(i * n + j) * n + k] = d3 * g[i] * g[j] * g[k]
                            + d2 * (h[i * n + j] * g[k] + h[i * n + k] * g[j] + h[j * n + k] * g[i])
                            + d1 * self.t[(i * n + j) * n + k];
                    }
                }
            }
        }
        r
    }

    pub fn exp(&self) -> Self {
        let e = self.v.exp();
        self.compose(e, e, e, e)
    }

    pub fn sin(&self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.compose(s, c, -s, -c)
    }

    pub fn cos(&self) -> Self {
        let (s, c) = self.v.sin_cos();
        self.compose(c, -s, -c, s)
    }

    pub fn sinh(&self) -> Self {
        let (s, c) = (self.v.sinh(), self.v.cosh());
        self.compose(s, c, s, c)
    }

    pub fn cosh(&self) -> Self {
        let (s, c) = (self.v.sinh(), self.v.cosh());
        self.compose(c, s, c, s)
    }

    pub fn sqrt(&self) -> Self {
        let r = self.v.sqrt();
        self.compose(r, 0.5 / r, -0.25 / (r * self.v), 0.375 / (r * self.v * self.v))
    }

    pub fn recip(&self) -> Self {
        let x = self.v;
        self.compose(1.0 / x, -1.0 / (x * x), 2.0 / (x * x * x), -6.0 / (x * x * x * x))
    }

    pub fn powi(&self, k: i32) -> Self {
        let x = self.v;
        // falling factorial k(k-1)..(k-m+1) times x^(k-m), zero once the factorial vanishes
        let term = |m: i32| {
            let c: f64 = (0..m).map(|i| (k - i) as f64).product();
            if c == 0.0 {
                0.0
            } else {
                c * x.powi(k - m)
            }
        };
        self.compose(term(0), term(1), term(2), term(3))
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            n: self.n,
            order: self.order,
            v: self.v * c,
            g: self.g.iter().map(|x| x * c).collect(),
            h: self.h.iter().map(|x| x * c).collect(),
            t: self.t.iter().map(|x| x * c).collect(),
        }
    }

    fn zip(&self, o: &Jet, f: impl Fn(f64, f64) -> f64) -> Self {
        self.same_shape(o);
        Self {
            n: self.n,
            order: self.order,
            v: f(self.v, o.v),
            g: self.g.iter().zip(&o.g).map(|(a, b)| f(*a, *b)).collect(),
            h: self.h.iter().zip(&o.h).map(|(a, b)| f(*a, *b)).collect(),
            t: self.t.iter().zip(&o.t).map(|(a, b)| f(*a, *b)).collect(),
        }
    }

    fn product(&self, o: &Jet) -> Self {
        self.same_shape(o);
        let n = self.n;
        let (a, b) = (self, o);
        let mut r = self.lift(a.v * b.v);
        if self.order >= 1 {
            for i in 0..n {
                r.g[i] = a.g[i] * b.v + a.v * b.g[i];
            }
        }
        if self.order >= 2 {
            for i in 0..n {
                for j in 0..n {
                    let ij = i * n + j;
                    r.h[ij] = a.h[ij] * b.v + a.g[i] * b.g[j] + a.g[j] * b.g[i] + a.v * b.h[ij];
                }
            }
        }
        if self.order >= 3 {
            for i in 0..n {
                for j in 0..n {
                    for k in 0..n {
                        let ijk = (i * n + j) * n + k;
                        let (ij, ik, jk) = (i * n + j, i * n + k, j * n + k);
                        r.t[ijk] = a.t[ijk] * b.v
                            + a.h[ij] * b.g[k]
                            + a.h[ik] * b.g[j]
                            + a.h[jk] * b.g[i]
                            + a.g[i] * b.h[jk]
                            + a.g[j] * b.h[ik]
                            + a.g[k] * b.h[ij]
                            + a.v * b.t[ijk];
                    }
                }
            }
        }
        r
    }
}

impl Add for &Jet {
    type Output = Jet;
    fn add(self, o: &Jet) -> Jet {
        self.zip(o, |a, b| a + b)
    }
}

impl Sub for &Jet {
    type Output = Jet;
    fn sub(self, o: &Jet) -> Jet {
        self.zip(o, |a, b| a - b)
    }
}

impl Mul for &Jet {
    type Output = Jet;
    fn mul(self, o: &Jet) -> Jet {
        self.product(o)
    }
}

impl Div for &Jet {
    type Output = Jet;
    fn div(self, o: &Jet) -> Jet {
        self.product(&o.recip())
    }
}

impl Neg for &Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

macro_rules! owned_ops {
    ($($tr:ident $m:ident),*) => {$(
        impl $tr for Jet {
            type Output = Jet;
            fn $m(self, o: Jet) -> Jet { (&self).$m(&o) }
        }
        impl $tr<&Jet> for Jet {
            type Output = Jet;
            fn $m(self, o: &Jet) -> Jet { (&self).$m(o) }
        }
        impl $tr<Jet> for &Jet {
            type Output = Jet;
            fn $m(self, o: Jet) -> Jet { self.$m(&o) }
        }
    )*};
}
owned_ops!(Add add, Sub sub, Mul mul, Div div);

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul<f64> for &Jet {
    type Output = Jet;
    fn mul(self, c: f64) -> Jet {
        self.scale(c)
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, c: f64) -> Jet {
        self.scale(c)
    }
}

impl Add<f64> for &Jet {
    type Output = Jet;
    fn add(self, c: f64) -> Jet {
        let mut r = self.clone();
        r.v += c;
        r
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(mut self, c: f64) -> Jet {
        self.v += c;
        self
    }
}
