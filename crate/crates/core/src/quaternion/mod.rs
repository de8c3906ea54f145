//! Quaternion algebra, Hamilton-structured layers, and their initializer.

mod layers;

pub use layers::{QuaternionBank1x1, QuaternionConv2dLayer};

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Quaternion {
    pub r: f64,
    pub i: f64,
    pub j: f64,
    pub k: f64,
}

impl Quaternion {
    pub const IDENTITY: Quaternion = Quaternion::new(1.0, 0.0, 0.0, 0.0);
    pub const I: Quaternion = Quaternion::new(0.0, 1.0, 0.0, 0.0);
    pub const J: Quaternion = Quaternion::new(0.0, 0.0, 1.0, 0.0);
    pub const K: Quaternion = Quaternion::new(0.0, 0.0, 0.0, 1.0);

    pub const fn new(r: f64, i: f64, j: f64, k: f64) -> Self {
        Quaternion { r, i, j, k }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.r, self.i, self.j, self.k]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Quaternion::new(a[0], a[1], a[2], a[3])
    }

    pub fn norm(self) -> f64 {
        self.to_array().iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

impl std::ops::Mul for Quaternion {
    type Output = Quaternion;

    fn mul(self, rhs: Quaternion) -> Quaternion {
        hamilton_product(self, rhs)
    }
}

/// `p ⊛ q`.
pub fn hamilton_product(p: Quaternion, q: Quaternion) -> Quaternion {
    Quaternion {
        r: p.r * q.r - p.i * q.i - p.j * q.j - p.k * q.k,
        i: p.r * q.i + p.i * q.r + p.j * q.k - p.k * q.j,
        j: p.r * q.j - p.i * q.k + p.j * q.r + p.k * q.i,
        k: p.r * q.k + p.i * q.j - p.j * q.i + p.k * q.r,
    }
}

/// Left-multiplication table: entry `[a][b] = (c, s)` means row `a`, column
/// `b` of the real matrix of `w ⊛ ·` is `s · w[c]`.
pub const HAMILTON_SIGNS: [[(usize, i8); 4]; 4] = [
    [(0, 1), (1, -1), (2, -1), (3, -1)],
    [(1, 1), (0, 1), (3, -1), (2, 1)],
    [(2, 1), (3, 1), (0, 1), (1, -1)],
    [(3, 1), (2, -1), (1, 1), (0, 1)],
];

/// The 4×4 real matrix `M` with `M · q = w ⊛ q`.
pub fn hamilton_matrix(w: Quaternion) -> [[f64; 4]; 4] {
    let comps = w.to_array();
    let mut m = [[0.0; 4]; 4];
    for (a, row) in HAMILTON_SIGNS.iter().enumerate() {
        for (b, &(c, s)) in row.iter().enumerate() {
            m[a][b] = f64::from(s) * comps[c];
        }
    }
    m
}

/// Random quaternion weights `[q_out, q_in, kh, kw, 4]`.
///
/// Each weight is `s · (cos θ, sin θ · u)` with `u` uniform on the unit
/// sphere, `θ ~ U[−π, π]`, and `s` chi-distributed with 4 degrees of freedom
/// and scale `σ = sqrt(2 / (fan_in + fan_out))`, fans counted in real
/// channels. Then `E[s²] = 4σ²` and every entry of the expanded real weight
/// has mean 0 and variance `σ²`.
pub fn quaternion_init<T: Element>(q_in: usize, q_out: usize, kh: usize, kw: usize, seed: u64) -> Result<Tensor<T>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    quaternion_init_with(q_in, q_out, kh, kw, &mut rng)
}

pub fn quaternion_init_with<T: Element, R: Rng + ?Sized>(
    q_in: usize,
    q_out: usize,
    kh: usize,
    kw: usize,
    rng: &mut R,
) -> Result<Tensor<T>> {
    if q_in == 0 || q_out == 0 || kh == 0 || kw == 0 {
        return Err(Error::config("quaternion_init needs positive dimensions"));
    }
    let taps = kh * kw;
    let fan_in = 4 * q_in * taps;
    let fan_out = 4 * q_out * taps;
    let sigma = (2.0 / (fan_in + fan_out) as f64).sqrt();
    let count = q_out * q_in * taps;
    let mut data = Vec::with_capacity(count * 4);
    for _ in 0..count {
        let chi: f64 = (0..4)
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * z
            })
            .sum::<f64>()
            .sqrt();
        let s = sigma * chi;
        let theta = rng.random_range(-PI..PI);
        let u = random_unit_vector(rng);
        data.extend([
            T::of(s * theta.cos()),
            T::of(s * theta.sin() * u[0]),
            T::of(s * theta.sin() * u[1]),
            T::of(s * theta.sin() * u[2]),
        ]);
    }
    Tensor::new(&[q_out, q_in, kh, kw, 4], data)
}

fn random_unit_vector<R: Rng + ?Sized>(rng: &mut R) -> [f64; 3] {
    loop {
        let v: [f64; 3] = [
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if n > 1e-12 {
            return [v[0] / n, v[1] / n, v[2] / n];
        }
    }
}

/// `[N, 3, H, W]` RGB → `[N, 4, H, W]` with a zero real part and `(R, G, B)`
/// as the imaginary components.
pub fn expand_to_quaternion_input<T: Element>(rgb: &Tensor<T>) -> Result<Tensor<T>> {
    let s = rgb.shape();
    if s.len() != 4 || s[1] != 3 {
        return Err(Error::dim(format!("expected [N, 3, H, W], got {s:?}")));
    }
    let plane = s[2] * s[3];
    let mut out = Vec::with_capacity(rgb.len() / 3 * 4);
    for img in rgb.data().chunks(3 * plane) {
        out.extend(std::iter::repeat_n(T::zero(), plane));
        out.extend_from_slice(img);
    }
    Tensor::new(&[s[0], 4, s[2], s[3]], out)
}
