#![allow(dead_code)]

use astro_float::{BigFloat, Consts, RoundingMode};
use oam_qkd::detection::TallyBlock;
use oam_qkd::protocol::{Basis, Intensity};
use oam_qkd::security::{decoy_bounds, DecoySetting, SecurityParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

const P: usize = 256;
const RM: RoundingMode = RoundingMode::ToEven;

/// 256-bit arithmetic with f64 conversion at the boundary.
pub struct Big {
    cc: Consts,
}

#[derive(Clone)]
pub struct B(BigFloat);

impl Big {
    pub fn new() -> Self {
        Big {
            cc: Consts::new().unwrap(),
        }
    }

    pub fn f(&self, x: f64) -> B {
        B(BigFloat::from_f64(x, P))
    }

    pub fn add(&self, a: &B, b: &B) -> B {
        B(a.0.add(&b.0, P, RM))
    }

    pub fn sub(&self, a: &B, b: &B) -> B {
        B(a.0.sub(&b.0, P, RM))
    }

    pub fn mul(&self, a: &B, b: &B) -> B {
        B(a.0.mul(&b.0, P, RM))
    }

    pub fn div(&self, a: &B, b: &B) -> B {
        B(a.0.div(&b.0, P, RM))
    }

    pub fn sqrt(&self, a: &B) -> B {
        B(a.0.sqrt(P, RM))
    }

    pub fn ln(&mut self, a: &B) -> B {
        B(a.0.ln(P, RM, &mut self.cc))
    }

    pub fn log2(&mut self, a: &B) -> B {
        B(a.0.log2(P, RM, &mut self.cc))
    }

    pub fn exp(&mut self, a: &B) -> B {
        B(a.0.exp(P, RM, &mut self.cc))
    }

    pub fn to_f64(&self, a: &B) -> f64 {
        format!("{}", a.0).parse().unwrap()
    }

    pub fn max0(&self, a: &B) -> B {
        if a.0.is_negative() {
            self.f(0.0)
        } else {
            a.clone()
        }
    }

    pub fn entropy(&mut self, p: &B) -> B {
        if p.0.is_zero() {
            return self.f(0.0);
        }
        let one = self.f(1.0);
        let q = self.sub(&one, p);
        let a = self.log2(p);
        let b = self.log2(&q);
        let t = self.add(&self.mul(p, &a), &self.mul(&q, &b));
        self.sub(&self.f(0.0), &t)
    }
}

/// Key length of the one-decoy bound evaluated in 256-bit arithmetic.
pub fn key_length_oracle(
    t: &TallyBlock,
    mu1: f64,
    mu2: f64,
    p_mu1: f64,
    eps_sec: f64,
    eps_corr: f64,
    f_ec: f64,
) -> f64 {
    let mut z = Big::new();
    let c = |b: Basis, n: bool, k: Intensity| {
        if n {
            t.n.get(b, k) as f64
        } else {
            t.m.get(b, k) as f64
        }
    };
    let (m1, m2) = (z.f(mu1), z.f(mu2));
    let p1 = z.f(p_mu1);
    let p2 = z.sub(&z.f(1.0), &p1);
    let e1 = z.exp(&m1);
    let e2 = z.exp(&m2);
    let em1 = z.exp(&z.sub(&z.f(0.0), &m1));
    let em2 = z.exp(&z.sub(&z.f(0.0), &m2));
    let tau0 = z.add(&z.mul(&p1, &em1), &z.mul(&p2, &em2));
    let tau1 = z.add(&z.mul(&z.mul(&p1, &em1), &m1), &z.mul(&z.mul(&p2, &em2), &m2));
    let log_term = z.ln(&z.div(&z.f(19.0), &z.f(eps_sec)));
    let dev = |z: &Big, count: f64| z.sqrt(&z.mul(&z.f(count / 2.0), &log_term));
    let dmu = z.sub(&m1, &m2);

    // (s0_lower, s0_upper, s1_lower) for one basis
    let events = |z: &Big, b: Basis| {
        let n1 = c(b, true, Intensity::Mu1);
        let n2 = c(b, true, Intensity::Mu2);
        let d = dev(z, n1 + n2);
        let nm2 = z.mul(&z.div(&e2, &p2), &z.sub(&z.f(n2), &d));
        let np1 = z.mul(&z.div(&e1, &p1), &z.add(&z.f(n1), &d));
        let s0l = z.div(&z.mul(&tau0, &z.sub(&z.mul(&m1, &nm2), &z.mul(&m2, &np1))), &dmu);
        let mz2 = z.f(c(b, false, Intensity::Mu2));
        let s0u = z.mul(&z.f(2.0), &z.add(&z.mul(&z.div(&z.mul(&tau0, &e2), &p2), &mz2), &d));
        let r = z.div(&m2, &m1);
        let r2 = z.mul(&r, &r);
        let sq = z.div(&z.sub(&z.mul(&m1, &m1), &z.mul(&m2, &m2)), &z.mul(&m1, &m1));
        let inner = z.sub(&z.sub(&nm2, &z.mul(&r2, &np1)), &z.mul(&sq, &z.div(&s0u, &tau0)));
        let pre = z.div(&z.mul(&tau1, &m1), &z.mul(&m2, &dmu));
        (s0l, s0u, z.mul(&pre, &inner))
    };

    let n_z = (t.n.total(Basis::Z)) as f64;
    let (s0l, _, s1l) = events(&z, Basis::Z);
    let s0 = z.max0(&s0l);
    let s0 = if z.to_f64(&s0) > n_z { z.f(n_z) } else { s0 };
    let s1 = z.max0(&s1l);
    let cap = z.sub(&z.f(n_z), &s0);
    let s1 = if z.to_f64(&s1) > z.to_f64(&cap) { cap } else { s1 };
    let (_, _, sx1) = events(&z, Basis::X);
    let sx1 = z.max0(&sx1);

    let dm = dev(&z, t.n.total(Basis::X) as f64);
    let mp1 = z.mul(&z.div(&e1, &p1), &z.add(&z.f(c(Basis::X, false, Intensity::Mu1)), &dm));
    let mm2 = z.mul(&z.div(&e2, &p2), &z.sub(&z.f(c(Basis::X, false, Intensity::Mu2)), &dm));
    let v = z.max0(&z.div(&z.mul(&tau1, &z.sub(&mp1, &mm2)), &dmu));

    let phi = if z.to_f64(&sx1) <= 0.0 || z.to_f64(&s1) <= 0.0 {
        z.f(0.5)
    } else {
        let b = z.div(&v, &sx1);
        if z.to_f64(&b) >= 0.5 {
            z.f(0.5)
        } else if z.to_f64(&b) <= 0.0 {
            b
        } else {
            let cd = z.add(&s1, &sx1);
            let prod = z.mul(&s1, &sx1);
            let bb = z.mul(&z.sub(&z.f(1.0), &b), &b);
            let ln2 = z.ln(&z.f(2.0));
            let var = z.div(&z.mul(&cd, &bb), &z.mul(&prod, &ln2));
            let a = z.f(eps_sec);
            let arg = z.div(&z.mul(&cd, &z.f(361.0)), &z.mul(&z.mul(&prod, &bb), &z.mul(&a, &a)));
            let lg = z.log2(&arg);
            let g = z.sqrt(&z.mul(&var, &lg));
            let phi = z.add(&b, &g);
            if z.to_f64(&phi) > 0.5 { z.f(0.5) } else { phi }
        }
    };

    let qz = z.div(&z.f(t.m.total(Basis::Z) as f64), &z.f(n_z));
    let hphi = z.entropy(&phi);
    let hq = z.entropy(&qz);
    let lsec = z.log2(&z.div(&z.f(19.0), &z.f(eps_sec)));
    let pen_sec = z.mul(&z.f(6.0), &lsec);
    let pen_corr = z.log2(&z.div(&z.f(2.0), &z.f(eps_corr)));
    let gain = z.add(&s0, &z.mul(&s1, &z.sub(&z.f(1.0), &hphi)));
    let leak = z.mul(&z.mul(&z.f(f_ec), &z.f(n_z)), &hq);
    let l = z.sub(&z.sub(&z.sub(&gain, &leak), &pen_sec), &pen_corr);
    z.to_f64(&z.max0(&l))
}

/// Ground-truth photon-number tagging. Each (intensity, photon number) class
/// receives a multinomial share of the pulses; detections and errors are
/// binomial within a class.
pub struct Source {
    pub mu: [f64; 2],
    pub p_mu1: f64,
    pub p_z: f64,
    pub eta: f64,
    pub y0: f64,
    pub e_z: f64,
    pub e_x: f64,
}

pub struct Truth {
    pub tally: TallyBlock,
    pub s0: u64,
    pub s1: u64,
    pub phase_rate: f64,
}

impl Source {
    fn yield_n(&self, n: u32) -> f64 {
        1.0 - (1.0 - self.y0) * (1.0 - self.eta).powi(n as i32)
    }

    fn error_rate(&self, n: u32, basis_err: f64) -> f64 {
        let y = self.yield_n(n);
        (0.5 * self.y0 + basis_err * (y - self.y0)) / y
    }

    pub fn run(&self, pulses: u64, rng: &mut ChaCha8Rng) -> Truth {
        let mut t = TallyBlock {
            duration_s: 1.0,
            ..Default::default()
        };
        let (mut s0, mut s1, mut x1_err, mut x1) = (0, 0, 0, 0);
        let mut classes = Vec::new();
        for (k, &mu) in self.mu.iter().enumerate() {
            let pk = if k == 0 { self.p_mu1 } else { 1.0 - self.p_mu1 };
            let mut pn = (-mu).exp();
            for n in 0..=10u32 {
                for (b, pb) in [(Basis::Z, self.p_z), (Basis::X, 1.0 - self.p_z)] {
                    classes.push((k, n, b, pk * pn * pb));
                }
                pn *= mu / (n + 1) as f64;
            }
        }
        let mut left = pulses;
        let mut mass = 1.0;
        for &(k, n, b, p) in &classes {
            let share = if mass > 0.0 { (p / mass).min(1.0) } else { 0.0 };
            let count = Binomial::new(left, share).unwrap().sample(rng);
            left -= count;
            mass -= p;
            let det = Binomial::new(count, self.yield_n(n)).unwrap().sample(rng);
            let e = if b == Basis::Z { self.e_z } else { self.e_x };
            let err = Binomial::new(det, self.error_rate(n, e)).unwrap().sample(rng);
            let k = if k == 0 { Intensity::Mu1 } else { Intensity::Mu2 };
            let (n0, m0) = (t.n.get(b, k), t.m.get(b, k));
            t.set(b, k, n0 + det, m0 + err);
            match (b, n) {
                (Basis::Z, 0) => s0 += det,
                (Basis::Z, 1) => s1 += det,
                (Basis::X, 1) => {
                    x1 += det;
                    x1_err += err;
                }
                _ => {}
            }
        }
        // phase errors of Z single-photon events follow the X single-photon error rate
        let phase_rate = if x1 > 0 { x1_err as f64 / x1 as f64 } else { 0.0 };
        Truth {
            tally: t,
            s0,
            s1,
            phase_rate,
        }
    }
}


/// Operating point used by the tagged-source checks.
pub fn tagged_source() -> Source {
    Source {
        mu: [0.4, 0.15],
        p_mu1: 0.7,
        p_z: 0.9,
        eta: 0.004,
        y0: 2e-5,
        e_z: 0.015,
        e_x: 0.03,
    }
}

/// Count of tagged trials violating any of the s0, s1 or phase-error bounds.
pub fn tagged_violations(trials: u32, pulses: u64, seed: u64) -> u32 {
    let src = tagged_source();
    let params = SecurityParams::default();
    let d = DecoySetting::new(src.mu[0], src.mu[1], src.p_mu1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    for _ in 0..trials {
        let truth = src.run(pulses, &mut rng);
        let b = decoy_bounds(&truth.tally, &d, &params).unwrap();
        // the single-photon phase errors in Z are themselves binomial
        let phase_errors = Binomial::new(truth.s1, truth.phase_rate).unwrap().sample(&mut rng);
        let phi_true = phase_errors as f64 / truth.s1.max(1) as f64;
        if b.s0_lower > truth.s0 as f64 || b.s1_lower > truth.s1 as f64 || b.phi_z_upper < phi_true {
            violations += 1;
        }
    }
    violations
}
