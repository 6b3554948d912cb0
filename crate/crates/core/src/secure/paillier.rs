//! Paillier encryption over fixed-point encoded vectors.
//!
//! Uses the `g = N + 1` variant, so encryption is `(1 + mN) · rᴺ mod N²`
//! and the product of ciphertexts decrypts to the sum of plaintexts.
//! Secret-key holders get CRT fast paths for both directions.

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use super::codec::FixedPointCodec;
use super::SecureError;

const SMALL_PRIMES: [u32; 24] =
    [3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97];
const MILLER_RABIN_ROUNDS: usize = 32;

/// Key sizes accepted by [`he_keygen`]; 512 is for tests only.
pub const SUPPORTED_KEY_BITS: [usize; 3] = [512, 1024, 2048];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    n: BigUint,
    n_squared: BigUint,
    bits: usize,
}

#[derive(Debug, Clone)]
pub struct SecretKey {
    lambda: BigUint,
    mu: BigUint,
    p: BigUint,
    q: BigUint,
    p_squared: BigUint,
    q_squared: BigUint,
    p_minus_1: BigUint,
    q_minus_1: BigUint,
    /// `h_p = L_p(g^(p-1) mod p²)⁻¹ mod p`
    hp: BigUint,
    hq: BigUint,
    /// `q⁻¹ mod p`
    q_inv_p: BigUint,
    /// `(q²)⁻¹ mod p²`
    q2_inv_p2: BigUint,
    /// `N mod p(p-1)` and `N mod q(q-1)`, exponents for CRT encryption.
    n_mod_phi_p2: BigUint,
    n_mod_phi_q2: BigUint,
}

#[derive(Debug, Clone)]
pub struct HeKeypair {
    pub public: PublicKey,
    pub secret: SecretKey,
}

/// Element-wise encryption of a fixed-point vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CiphertextVector {
    pub codec: FixedPointCodec,
    /// Serialized bytes per element, `⌈2·keybits/8⌉`.
    pub width: usize,
    pub elements: Vec<BigUint>,
}

impl CiphertextVector {
    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Size of the ciphertext body on the wire.
    pub fn payload_bytes(&self) -> usize {
        self.elements.len() * self.width
    }
}

impl PublicKey {
    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn ciphertext_width(&self) -> usize {
        (2 * self.bits).div_ceil(8)
    }

    /// Bytes of ciphertext per byte of f32 plaintext.
    pub fn expansion_factor(&self) -> f64 {
        self.ciphertext_width() as f64 / 4.0
    }

    pub fn encrypt_int(&self, m: &BigUint, rng: &mut impl RngCore) -> BigUint {
        let r = self.random_unit(rng);
        let rn = r.modpow(&self.n, &self.n_squared);
        (self.g_pow(m) * rn) % &self.n_squared
    }

    /// `(1 + N)^m = 1 + mN (mod N²)`
    fn g_pow(&self, m: &BigUint) -> BigUint {
        (BigUint::one() + (m % &self.n) * &self.n) % &self.n_squared
    }

    fn random_unit(&self, rng: &mut impl RngCore) -> BigUint {
        loop {
            let r = random_below(&self.n, rng);
            if !r.is_zero() && r.gcd(&self.n).is_one() {
                return r;
            }
        }
    }

    fn encode_signed(&self, v: i64) -> BigUint {
        let mag = BigUint::from(v.unsigned_abs());
        if v < 0 {
            &self.n - mag
        } else {
            mag
        }
    }

    fn check_range(&self, codec: &FixedPointCodec, v: &[f64]) -> Result<Vec<i64>, SecureError> {
        // |enc|·2·m_max < N keeps any permitted sum clear of wraparound
        let limit = &self.n / (BigUint::from(codec.max_summands.max(1)) * 2u32);
        v.iter()
            .enumerate()
            .map(|(i, &x)| {
                let e = codec.encode(x);
                if BigUint::from(e.unsigned_abs()) >= limit {
                    Err(SecureError::Overflow { index: i, value: x })
                } else {
                    Ok(e)
                }
            })
            .collect()
    }

    pub fn encrypt_vector(
        &self,
        codec: &FixedPointCodec,
        v: &[f64],
        rng: &mut impl RngCore,
    ) -> Result<CiphertextVector, SecureError> {
        let encoded = self.check_range(codec, v)?;
        let elements = encoded.into_iter().map(|e| self.encrypt_int(&self.encode_signed(e), rng)).collect();
        Ok(CiphertextVector { codec: *codec, width: self.ciphertext_width(), elements })
    }

    fn check_compatible(&self, a: &CiphertextVector, b: &CiphertextVector) -> Result<(), SecureError> {
        if a.len() != b.len() {
            return Err(SecureError::Mismatch(format!("lengths {} and {}", a.len(), b.len())));
        }
        if a.codec != b.codec {
            return Err(SecureError::Mismatch("codec parameters differ".into()));
        }
        if a.width != self.ciphertext_width() || b.width != self.ciphertext_width() {
            return Err(SecureError::Mismatch("ciphertext width does not match the key".into()));
        }
        Ok(())
    }

    /// Homomorphic addition: element-wise product mod N².
    pub fn add(&self, a: &CiphertextVector, b: &CiphertextVector) -> Result<CiphertextVector, SecureError> {
        self.check_compatible(a, b)?;
        let elements =
            a.elements.iter().zip(&b.elements).map(|(x, y)| (x * y) % &self.n_squared).collect();
        Ok(CiphertextVector { codec: a.codec, width: a.width, elements })
    }

    /// In-place `acc ⊕= b`.
    pub fn add_assign(&self, acc: &mut CiphertextVector, b: &CiphertextVector) -> Result<(), SecureError> {
        self.check_compatible(acc, b)?;
        for (x, y) in acc.elements.iter_mut().zip(&b.elements) {
            *x = (&*x * y) % &self.n_squared;
        }
        Ok(())
    }
}

impl SecretKey {
    pub fn decrypt_int(&self, pk: &PublicKey, c: &BigUint) -> BigUint {
        let u = c.modpow(&self.lambda, &pk.n_squared);
        let l = (u - BigUint::one()) / &pk.n;
        (l * &self.mu) % &pk.n
    }

    /// Decryption via CRT over p² and q².
    pub fn decrypt_int_crt(&self, c: &BigUint) -> BigUint {
        let mp = {
            let u = (c % &self.p_squared).modpow(&self.p_minus_1, &self.p_squared);
            (((u - BigUint::one()) / &self.p) * &self.hp) % &self.p
        };
        let mq = {
            let u = (c % &self.q_squared).modpow(&self.q_minus_1, &self.q_squared);
            (((u - BigUint::one()) / &self.q) * &self.hq) % &self.q
        };
        crt(&mp, &mq, &self.p, &self.q, &self.q_inv_p)
    }

    /// Same distribution as [`PublicKey::encrypt_int`], computing `rᴺ`
    /// separately mod p² and q².
    pub fn encrypt_int_crt(&self, pk: &PublicKey, m: &BigUint, rng: &mut impl RngCore) -> BigUint {
        let r = pk.random_unit(rng);
        let rp = (&r % &self.p_squared).modpow(&self.n_mod_phi_p2, &self.p_squared);
        let rq = (&r % &self.q_squared).modpow(&self.n_mod_phi_q2, &self.q_squared);
        let rn = crt(&rp, &rq, &self.p_squared, &self.q_squared, &self.q2_inv_p2);
        (pk.g_pow(m) * rn) % &pk.n_squared
    }

    pub fn decrypt_vector(
        &self,
        pk: &PublicKey,
        ct: &CiphertextVector,
    ) -> Result<Vec<f64>, SecureError> {
        let half = pk.n() >> 1u32;
        ct.elements
            .iter()
            .map(|c| {
                if c >= &pk.n_squared {
                    return Err(SecureError::Mismatch("ciphertext not reduced mod N²".into()));
                }
                let m = self.decrypt_int_crt(c);
                let signed = if m > half { -to_i128(&(pk.n() - &m))? } else { to_i128(&m)? };
                Ok(ct.codec.decode(signed))
            })
            .collect()
    }

    /// Encrypts with the CRT fast path; only trainers holding the key use it.
    pub fn encrypt_vector(
        &self,
        pk: &PublicKey,
        codec: &FixedPointCodec,
        v: &[f64],
        rng: &mut impl RngCore,
    ) -> Result<CiphertextVector, SecureError> {
        let encoded = pk.check_range(codec, v)?;
        let elements =
            encoded.into_iter().map(|e| self.encrypt_int_crt(pk, &pk.encode_signed(e), rng)).collect();
        Ok(CiphertextVector { codec: *codec, width: pk.ciphertext_width(), elements })
    }
}

/// Bits of the short exponent used by [`Encryptor`].
pub const SHORT_EXPONENT_BITS: usize = 256;
const WINDOW_BITS: usize = 8;

/// Fixed-base encryptor. Randomness is `h^x mod N²` for a random N-th
/// residue `h = r₀ᴺ` and a fresh `SHORT_EXPONENT_BITS`-bit `x`, evaluated
/// from precomputed window tables (about 32 modular products per element
/// instead of a full-size exponentiation).
#[derive(Debug, Clone)]
pub struct Encryptor {
    pk: PublicKey,
    /// `table[w][j] = h^(j · 2^(8w)) mod N²`
    table: Vec<Vec<BigUint>>,
}

impl Encryptor {
    pub fn new(pk: &PublicKey, rng: &mut impl RngCore) -> Self {
        let r0 = pk.random_unit(rng);
        let mut base = r0.modpow(&pk.n, &pk.n_squared);
        let windows = SHORT_EXPONENT_BITS / WINDOW_BITS;
        let mut table = Vec::with_capacity(windows);
        for _ in 0..windows {
            let mut row = Vec::with_capacity(1 << WINDOW_BITS);
            let mut acc = BigUint::one();
            for _ in 0..(1 << WINDOW_BITS) {
                row.push(acc.clone());
                acc = (&acc * &base) % &pk.n_squared;
            }
            // acc = base^(2^8), the next window's base
            base = acc;
            table.push(row);
        }
        Self { pk: pk.clone(), table }
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.pk
    }

    fn randomness(&self, rng: &mut impl RngCore) -> BigUint {
        let mut x = [0u8; SHORT_EXPONENT_BITS / WINDOW_BITS];
        rng.fill_bytes(&mut x);
        let mut acc = BigUint::one();
        for (row, &digit) in self.table.iter().zip(&x) {
            if digit != 0 {
                acc = (acc * &row[digit as usize]) % &self.pk.n_squared;
            }
        }
        acc
    }

    pub fn encrypt_int(&self, m: &BigUint, rng: &mut impl RngCore) -> BigUint {
        (self.pk.g_pow(m) * self.randomness(rng)) % &self.pk.n_squared
    }

    pub fn encrypt_vector(
        &self,
        codec: &FixedPointCodec,
        v: &[f64],
        rng: &mut impl RngCore,
    ) -> Result<CiphertextVector, SecureError> {
        let encoded = self.pk.check_range(codec, v)?;
        let elements =
            encoded.into_iter().map(|e| self.encrypt_int(&self.pk.encode_signed(e), rng)).collect();
        Ok(CiphertextVector { codec: *codec, width: self.pk.ciphertext_width(), elements })
    }
}

fn to_i128(m: &BigUint) -> Result<i128, SecureError> {
    let digits = m.to_u64_digits();
    match digits.len() {
        0 => Ok(0),
        1 => Ok(digits[0] as i128),
        2 if digits[1] < (1 << 63) => Ok(((digits[1] as i128) << 64) | digits[0] as i128),
        _ => Err(SecureError::Mismatch("decrypted value exceeds the fixed-point range".into())),
    }
}

/// Combines residues `a mod p` and `b mod q` for coprime p, q.
fn crt(a: &BigUint, b: &BigUint, p: &BigUint, q: &BigUint, q_inv_p: &BigUint) -> BigUint {
    let b_mod_p = b % p;
    let diff = if a >= &b_mod_p { a - &b_mod_p } else { a + p - &b_mod_p };
    b + q * ((diff * q_inv_p) % p)
}

fn random_below(bound: &BigUint, rng: &mut impl RngCore) -> BigUint {
    let bits = bound.bits() as usize;
    let bytes = bits.div_ceil(8);
    let mut buf = vec![0u8; bytes];
    loop {
        rng.fill_bytes(&mut buf);
        let extra = bytes * 8 - bits;
        if extra > 0 {
            buf[0] &= 0xff >> extra;
        }
        let x = BigUint::from_bytes_be(&buf);
        if &x < bound {
            return x;
        }
    }
}

fn is_probable_prime(n: &BigUint, rng: &mut impl RngCore) -> bool {
    let two = BigUint::from(2u32);
    if n < &two {
        return false;
    }
    for &sp in &SMALL_PRIMES {
        let sp = BigUint::from(sp);
        if n == &sp {
            return true;
        }
        if (n % &sp).is_zero() {
            return false;
        }
    }
    if n.is_even() {
        return n == &two;
    }
    let n_minus_1 = n - 1u32;
    let s = n_minus_1.trailing_zeros().unwrap_or(0);
    let d = &n_minus_1 >> s;
    let span = n - 3u32;
    'witness: for _ in 0..MILLER_RABIN_ROUNDS {
        let a = random_below(&span, rng) + &two;
        let mut x = a.modpow(&d, n);
        if x.is_one() || x == n_minus_1 {
            continue;
        }
        for _ in 1..s {
            x = (&x * &x) % n;
            if x == n_minus_1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Random prime with exactly `bits` bits and the top two set, so the
/// product of two has exactly `2·bits` bits.
fn random_prime(bits: usize, rng: &mut impl RngCore) -> BigUint {
    loop {
        let bytes = bits.div_ceil(8);
        let mut buf = vec![0u8; bytes];
        rng.fill_bytes(&mut buf);
        let extra = bytes * 8 - bits;
        buf[0] &= 0xff >> extra;
        let mut c = BigUint::from_bytes_be(&buf);
        c.set_bit(bits as u64 - 1, true);
        c.set_bit(bits as u64 - 2, true);
        c.set_bit(0, true);
        if is_probable_prime(&c, rng) {
            return c;
        }
    }
}

/// Deterministic (seeded) key generation for an N of `bits` bits.
pub fn he_keygen(bits: usize, seed: u64) -> Result<HeKeypair, SecureError> {
    if !SUPPORTED_KEY_BITS.contains(&bits) {
        return Err(SecureError::KeySize(bits));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let p = random_prime(bits / 2, &mut rng);
    let q = loop {
        let q = random_prime(bits / 2, &mut rng);
        if q != p {
            break q;
        }
    };
    Ok(HeKeypair::from_primes(p, q))
}

impl HeKeypair {
    /// Builds a keypair from two distinct odd primes. Small primes are
    /// allowed here so tests can provoke overflow.
    pub fn from_primes(p: BigUint, q: BigUint) -> Self {
        assert_ne!(p, q, "Paillier primes must differ");
        let n = &p * &q;
        let n_squared = &n * &n;
        let bits = n.bits() as usize;
        let p_minus_1 = &p - 1u32;
        let q_minus_1 = &q - 1u32;
        let lambda = p_minus_1.lcm(&q_minus_1);
        let mu = lambda.modinv(&n).expect("gcd(λ, N) = 1 for distinct primes of similar size");
        let p_squared = &p * &p;
        let q_squared = &q * &q;
        let g = &n + 1u32;
        let h = |prime: &BigUint, prime_sq: &BigUint, pm1: &BigUint| {
            let u = (&g % prime_sq).modpow(pm1, prime_sq);
            ((u - 1u32) / prime).modinv(prime).expect("L_p(g^(p-1)) invertible mod p")
        };
        let hp = h(&p, &p_squared, &p_minus_1);
        let hq = h(&q, &q_squared, &q_minus_1);
        let q_inv_p = (&q % &p).modinv(&p).expect("distinct primes are coprime");
        let q2_inv_p2 = (&q_squared % &p_squared).modinv(&p_squared).expect("coprime squares");
        let n_mod_phi_p2 = &n % (&p * &p_minus_1);
        let n_mod_phi_q2 = &n % (&q * &q_minus_1);
        let public = PublicKey { n, n_squared, bits };
        let secret = SecretKey {
            lambda,
            mu,
            p,
            q,
            p_squared,
            q_squared,
            p_minus_1,
            q_minus_1,
            hp,
            hq,
            q_inv_p,
            q2_inv_p2,
            n_mod_phi_p2,
            n_mod_phi_q2,
        };
        Self { public, secret }
    }

    pub fn encrypt_vector(
        &self,
        codec: &FixedPointCodec,
        v: &[f64],
        rng: &mut impl RngCore,
    ) -> Result<CiphertextVector, SecureError> {
        self.secret.encrypt_vector(&self.public, codec, v, rng)
    }

    pub fn decrypt_vector(&self, ct: &CiphertextVector) -> Result<Vec<f64>, SecureError> {
        self.secret.decrypt_vector(&self.public, ct)
    }
}

/// Seeded randomness for encryption inside deterministic experiments.
pub fn encryption_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}
