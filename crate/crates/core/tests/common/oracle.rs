//! Dense-substep explicit integration of the continuum elastoplastic
//! equations, independent of the return-map code.

use nalgebra::{Matrix6, Vector6};

type V6 = Vector6<f64>;

#[derive(Clone, Copy)]
pub enum Law {
    J2 { sy: f64 },
    Melro { st: f64, sc: f64, nu_p: f64 },
    /// Saturating hardening of both yield stresses in the equivalent plastic strain.
    Hardening { st: (f64, f64), sc: (f64, f64), k0: f64, nu_p: f64 },
}

pub struct Oracle {
    pub law: Law,
    pub young: f64,
    pub poisson: f64,
    pub stress: V6,
    pub eps: V6,
    pub eps_p: V6,
    pub kappa: f64,
}

fn sat(p: (f64, f64), k: f64, k0: f64) -> (f64, f64) {
    let e = (-k / k0).exp();
    (p.0 + (p.1 - p.0) * (1.0 - e), (p.1 - p.0) / k0 * e)
}

fn dev(s: &V6) -> (V6, f64) {
    let p = (s[0] + s[1] + s[2]) / 3.0;
    let mut d = *s;
    for i in 0..3 {
        d[i] -= p;
    }
    (d, 3.0 * p)
}

fn ddot(a: &V6, b: &V6) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + 2.0 * (a[3] * b[3] + a[4] * b[4] + a[5] * b[5])
}

fn eng(v: V6) -> V6 {
    V6::new(v[0], v[1], v[2], 2.0 * v[3], 2.0 * v[4], 2.0 * v[5])
}

impl Oracle {
    pub fn new(law: Law, young: f64, poisson: f64) -> Self {
        Self { law, young, poisson, stress: V6::zeros(), eps: V6::zeros(), eps_p: V6::zeros(), kappa: 0.0 }
    }

    fn stiffness(&self) -> Matrix6<f64> {
        let (e, nu) = (self.young, self.poisson);
        let lam = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
        let mu = e / (2.0 * (1.0 + nu));
        let mut d = Matrix6::zeros();
        for i in 0..3 {
            for j in 0..3 {
                d[(i, j)] = lam;
            }
            d[(i, i)] += 2.0 * mu;
            d[(i + 3, i + 3)] = mu;
        }
        d
    }

    /// `(phi, n, m, dphi/dkappa, dkappa/dlambda)` with n, m strain-like.
    fn yield_data(&self, s: &V6) -> (f64, V6, V6, f64, f64) {
        let (d, i1) = dev(s);
        let j2 = 0.5 * ddot(&d, &d);
        let delta = V6::new(1.0, 1.0, 1.0, 0.0, 0.0, 0.0);
        let melro = |st: f64, sc: f64, nu_p: f64| {
            let phi = 6.0 * j2 + 2.0 * i1 * (sc - st) - 2.0 * sc * st;
            let n = eng(d * 6.0) + delta * (2.0 * (sc - st));
            let a = (1.0 - 2.0 * nu_p) / (1.0 + nu_p);
            let m = eng(d * 3.0) + delta * (a * i1);
            (phi, n, m)
        };
        match self.law {
            Law::J2 { sy } => {
                let q = (3.0 * j2).sqrt();
                let n = eng(d * (1.5 / q.max(1e-300)));
                (q - sy, n, n, 0.0, 0.0)
            }
            Law::Melro { st, sc, nu_p } => {
                let (phi, n, m) = melro(st, sc, nu_p);
                (phi, n, m, 0.0, 0.0)
            }
            Law::Hardening { st, sc, k0, nu_p } => {
                let (t, dt) = sat(st, self.kappa, k0);
                let (c, dc) = sat(sc, self.kappa, k0);
                let (phi, n, m) = melro(t, c, nu_p);
                let dphi = 2.0 * i1 * (dc - dt) - 2.0 * (dc * t + c * dt);
                // sqrt(2/3)||m|| with tensor shear
                let mt = V6::new(m[0], m[1], m[2], 0.5 * m[3], 0.5 * m[4], 0.5 * m[5]);
                (phi, n, m, dphi, (2.0 / 3.0 * ddot(&mt, &mt)).sqrt())
            }
        }
    }

    fn phi(&self, s: &V6) -> f64 {
        self.yield_data(s).0
    }

    fn scale(&self) -> f64 {
        match self.law {
            Law::J2 { sy } => sy,
            Law::Melro { st, sc, .. } => 2.0 * st * sc,
            Law::Hardening { st, sc, k0, .. } => 2.0 * sat(st, self.kappa, k0).0 * sat(sc, self.kappa, k0).0,
        }
    }

    fn plastic(&mut self, de: &V6, d: &Matrix6<f64>) {
        let (_, n, m, dphi, dk) = self.yield_data(&self.stress);
        let dm = d * m;
        let h = -dphi * dk;
        let dl = (n.dot(&(d * de))) / (n.dot(&dm) + h);
        if dl <= 0.0 {
            self.stress += d * de;
            return;
        }
        self.stress += d * (de - m * dl);
        self.eps_p += m * dl;
        self.kappa += dk * dl;
        // pull back onto the surface along the current flow direction
        let (phi, n, m, dphi, dk) = self.yield_data(&self.stress);
        let c = phi / (n.dot(&(d * m)) - dphi * dk);
        self.stress -= d * m * c;
        self.eps_p += m * c;
        self.kappa += dk * c;
    }

    fn substep(&mut self, de: &V6) {
        let d = self.stiffness();
        let tol = 1e-12 * self.scale();
        let trial = self.stress + d * de;
        if self.phi(&self.stress) < -tol {
            if self.phi(&trial) <= 0.0 {
                self.stress = trial;
                return;
            }
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..60 {
                let r = 0.5 * (lo + hi);
                if self.phi(&(self.stress + d * de * r)) > 0.0 {
                    hi = r;
                } else {
                    lo = r;
                }
            }
            self.stress += d * de * lo;
            self.plastic(&(de * (1.0 - lo)), &d);
        } else {
            self.plastic(de, &d);
        }
    }

    /// Advances to a new total (6-component, engineering shear) strain.
    pub fn advance(&mut self, target: &V6, substeps: usize) {
        let de = (target - self.eps) / substeps as f64;
        for _ in 0..substeps {
            self.substep(&de);
        }
        self.eps = *target;
    }
}
