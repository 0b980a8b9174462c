//! Paillier cryptosystem with `g = N + 1`.
//!
//! Plaintexts live in `Z_N`, ciphertexts in `Z*_{N^2}`. Multiplying
//! ciphertexts adds plaintexts and raising a ciphertext to `k` multiplies its
//! plaintext by `k`.

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::math::{self, MathError, RandomSource};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CryptoError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("ciphertext key {found:016x} does not match key {expected:016x}")]
    KeyMismatch { expected: u64, found: u64 },
    #[error("malformed ciphertext encoding: {0}")]
    Malformed(String),
    #[error(transparent)]
    Math(#[from] MathError),
}

/// First 64 bits of SHA-256 over the big-endian bytes of a modulus.
pub fn key_fingerprint(modulus: &BigUint) -> u64 {
    let digest = Sha256::digest(modulus.to_bytes_be());
    u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaillierPublicKey {
    n: BigUint,
    n_squared: BigUint,
    sigma_bits: u64,
    key_id: u64,
}

#[derive(Debug, Clone)]
pub struct PaillierPrivateKey {
    public: PaillierPublicKey,
    p: BigUint,
    q: BigUint,
    /// φ(N) = (p-1)(q-1)
    gamma: BigUint,
    /// φ(N)^-1 mod N
    delta: BigUint,
    crt: CrtParams,
}

#[derive(Debug, Clone)]
struct CrtParams {
    p_squared: BigUint,
    q_squared: BigUint,
    h_p: BigUint,
    h_q: BigUint,
    /// q^-1 mod p
    q_inv_p: BigUint,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PaillierCiphertext {
    value: BigUint,
    key_id: u64,
}

impl PaillierCiphertext {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn key_id(&self) -> u64 {
        self.key_id
    }

    /// `key_id` as 16 hex digits followed by the value, zero-padded to the
    /// `2σ`-bit ciphertext width.
    pub fn to_wire(&self, sigma_bits: u64) -> String {
        format!(
            "{:016x}{}",
            self.key_id,
            math::to_hex_padded(&self.value, (sigma_bits / 2) as usize)
        )
    }

    pub fn from_wire(text: &str) -> Result<Self, CryptoError> {
        if text.len() <= 16 || !text.is_ascii() {
            return Err(CryptoError::Malformed(text.chars().take(32).collect()));
        }
        let key_id = u64::from_str_radix(&text[..16], 16)
            .map_err(|_| CryptoError::Malformed(text[..16].to_string()))?;
        let value = math::from_hex(&text[16..])?;
        Ok(Self { value, key_id })
    }

    /// Fixed-width big-endian encoding of the value: `σ/4` bytes, i.e. `2σ` bits.
    pub fn to_bytes(&self, sigma_bits: u64) -> Vec<u8> {
        let width = (2 * sigma_bits).div_ceil(8) as usize;
        let raw = self.value.to_bytes_be();
        let mut out = vec![0u8; width.saturating_sub(raw.len())];
        out.extend_from_slice(&raw);
        out
    }
}

/// JSON key file: hex fields `N`, `p`, `q`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[allow(non_snake_case)]
pub struct PaillierKeyFile {
    #[serde(with = "math::hex_serde")]
    pub N: BigUint,
    #[serde(with = "math::hex_serde")]
    pub p: BigUint,
    #[serde(with = "math::hex_serde")]
    pub q: BigUint,
}

pub fn keygen(
    sigma_bits: u64,
    rng: &mut RandomSource,
) -> Result<(PaillierPublicKey, PaillierPrivateKey), CryptoError> {
    if sigma_bits % 2 != 0 {
        return Err(CryptoError::Domain(format!("sigma_bits must be even, got {sigma_bits}")));
    }
    if sigma_bits < 16 {
        return Err(CryptoError::Domain(format!("sigma_bits must be at least 16, got {sigma_bits}")));
    }
    let half = sigma_bits / 2;
    loop {
        let p = math::gen_prime(half, rng)?;
        let q = math::gen_prime(half, rng)?;
        if p == q || (&p * &q).bits() != sigma_bits {
            continue;
        }
        // gcd(N, φ(N)) = 1 holds for distinct equal-size primes except in degenerate toy cases
        match PaillierPrivateKey::from_primes(p, q) {
            Ok(sk) => return Ok((sk.public.clone(), sk)),
            Err(CryptoError::Math(MathError::NotInvertible)) => continue,
            Err(e) => return Err(e),
        }
    }
}

impl PaillierPublicKey {
    pub fn from_modulus(n: BigUint) -> Result<Self, CryptoError> {
        if n < BigUint::from(4u8) || n.is_even() {
            return Err(CryptoError::Domain("Paillier modulus must be odd and composite".into()));
        }
        let sigma_bits = n.bits();
        Ok(Self { n_squared: &n * &n, key_id: key_fingerprint(&n), n, sigma_bits })
    }

    pub fn modulus(&self) -> &BigUint {
        &self.n
    }

    pub fn modulus_squared(&self) -> &BigUint {
        &self.n_squared
    }

    /// Always `N + 1`.
    pub fn generator(&self) -> BigUint {
        &self.n + 1u8
    }

    pub fn sigma_bits(&self) -> u64 {
        self.sigma_bits
    }

    pub fn key_id(&self) -> u64 {
        self.key_id
    }

    fn check(&self, c: &PaillierCiphertext) -> Result<(), CryptoError> {
        if c.key_id != self.key_id {
            return Err(CryptoError::KeyMismatch { expected: self.key_id, found: c.key_id });
        }
        Ok(())
    }

    fn wrap(&self, value: BigUint) -> PaillierCiphertext {
        PaillierCiphertext { value, key_id: self.key_id }
    }

    /// `(N+1)^m · r^N mod N²` with `r` a uniform unit of `Z_N`.
    pub fn encrypt(&self, m: &BigUint, rng: &mut RandomSource) -> Result<PaillierCiphertext, CryptoError> {
        if *m >= self.n {
            return Err(CryptoError::Domain("plaintext must be below N".into()));
        }
        let r = math::sample_unit(&self.n, rng)?;
        Ok(self.encrypt_with_nonce(m, &r))
    }

    /// Encrypts a signed integer through its residue mod `N`.
    pub fn encrypt_signed(&self, m: &BigInt, rng: &mut RandomSource) -> Result<PaillierCiphertext, CryptoError> {
        self.encrypt(&math::reduce_signed(m, &self.n), rng)
    }

    fn encrypt_with_nonce(&self, m: &BigUint, r: &BigUint) -> PaillierCiphertext {
        // (1 + N)^m = 1 + mN mod N²
        let gm = (BigUint::one() + m * &self.n) % &self.n_squared;
        let rn = r.modpow(&self.n, &self.n_squared);
        self.wrap(gm * rn % &self.n_squared)
    }

    /// Homomorphic addition (the ⊕ operator).
    pub fn add(&self, c1: &PaillierCiphertext, c2: &PaillierCiphertext) -> Result<PaillierCiphertext, CryptoError> {
        self.check(c1)?;
        self.check(c2)?;
        Ok(self.wrap(&c1.value * &c2.value % &self.n_squared))
    }

    /// Homomorphic multiplication by a plaintext `k < N` (the ⊗ operator).
    pub fn scalar_mul(&self, k: &BigUint, c: &PaillierCiphertext) -> Result<PaillierCiphertext, CryptoError> {
        self.check(c)?;
        if *k >= self.n {
            return Err(CryptoError::Domain("scalar must be below N".into()));
        }
        Ok(self.wrap(c.value.modpow(k, &self.n_squared)))
    }

    pub fn negate(&self, c: &PaillierCiphertext) -> Result<PaillierCiphertext, CryptoError> {
        self.check(c)?;
        Ok(self.wrap(math::mod_inv(&c.value, &self.n_squared)?))
    }

    /// Multiplication by a signed scalar. Negative scalars invert first so the
    /// exponent stays as short as `|k|`.
    pub fn mul_signed(&self, k: &BigInt, c: &PaillierCiphertext) -> Result<PaillierCiphertext, CryptoError> {
        let magnitude = k.magnitude();
        if *magnitude >= self.n {
            return Err(CryptoError::Domain("scalar magnitude must be below N".into()));
        }
        match k.sign() {
            Sign::Minus => {
                let inverted = self.negate(c)?;
                Ok(self.wrap(inverted.value.modpow(magnitude, &self.n_squared)))
            }
            _ => self.scalar_mul(magnitude, c),
        }
    }

    pub fn sub(&self, c1: &PaillierCiphertext, c2: &PaillierCiphertext) -> Result<PaillierCiphertext, CryptoError> {
        self.add(c1, &self.negate(c2)?)
    }

    /// Adds a fresh encryption of zero.
    pub fn rerandomize(&self, c: &PaillierCiphertext, rng: &mut RandomSource) -> Result<PaillierCiphertext, CryptoError> {
        let zero = self.encrypt(&BigUint::zero(), rng)?;
        self.add(c, &zero)
    }

    /// Deterministic encryption with nonce 1, used for public constants.
    pub fn encode_constant(&self, m: &BigUint) -> Result<PaillierCiphertext, CryptoError> {
        if *m >= self.n {
            return Err(CryptoError::Domain("plaintext must be below N".into()));
        }
        Ok(self.encrypt_with_nonce(m, &BigUint::one()))
    }

    /// Sum of `scalars[i] ⊗ cts[i]` for signed scalars; zero scalars are skipped.
    pub fn linear_combination(
        &self,
        scalars: &[BigInt],
        cts: &[PaillierCiphertext],
    ) -> Result<PaillierCiphertext, CryptoError> {
        if scalars.len() != cts.len() {
            return Err(CryptoError::Domain("scalar and ciphertext counts differ".into()));
        }
        let mut acc = self.wrap(BigUint::one());
        for (k, c) in scalars.iter().zip(cts) {
            if k.is_zero() {
                self.check(c)?;
                continue;
            }
            acc = self.add(&acc, &self.mul_signed(k, c)?)?;
        }
        Ok(acc)
    }

    pub fn parse_ciphertext(&self, text: &str) -> Result<PaillierCiphertext, CryptoError> {
        let c = PaillierCiphertext::from_wire(text)?;
        self.check(&c)?;
        if c.value.is_zero() || c.value >= self.n_squared {
            return Err(CryptoError::Malformed("ciphertext outside (0, N^2)".into()));
        }
        Ok(c)
    }
}

impl PaillierPrivateKey {
    pub fn from_primes(p: BigUint, q: BigUint) -> Result<Self, CryptoError> {
        if p == q {
            return Err(CryptoError::Domain("p and q must differ".into()));
        }
        let n = &p * &q;
        let public = PaillierPublicKey::from_modulus(n.clone())?;
        let gamma = (&p - 1u8) * (&q - 1u8);
        let delta = math::mod_inv(&gamma, &n)?;
        let crt = CrtParams::new(&p, &q, &n)?;
        Ok(Self { public, p, q, gamma, delta, crt })
    }

    pub fn from_key_file(file: &PaillierKeyFile) -> Result<Self, CryptoError> {
        let sk = Self::from_primes(file.p.clone(), file.q.clone())?;
        if sk.public.n != file.N {
            return Err(CryptoError::Domain("key file N differs from p*q".into()));
        }
        Ok(sk)
    }

    pub fn to_key_file(&self) -> PaillierKeyFile {
        PaillierKeyFile { N: self.public.n.clone(), p: self.p.clone(), q: self.q.clone() }
    }

    pub fn public_key(&self) -> &PaillierPublicKey {
        &self.public
    }

    pub fn gamma(&self) -> &BigUint {
        &self.gamma
    }

    pub fn delta(&self) -> &BigUint {
        &self.delta
    }

    /// CRT-accelerated decryption; bit-identical to [`Self::decrypt_definitional`].
    pub fn decrypt(&self, c: &PaillierCiphertext) -> Result<BigUint, CryptoError> {
        self.public.check(c)?;
        let crt = &self.crt;
        let m_p = l_function(&c.value.modpow(&(&self.p - 1u8), &crt.p_squared), &self.p) * &crt.h_p % &self.p;
        let m_q = l_function(&c.value.modpow(&(&self.q - 1u8), &crt.q_squared), &self.q) * &crt.h_q % &self.q;
        // Garner recombination: m = m_q + q·((m_p - m_q)·q^-1 mod p)
        let diff = (&m_p + &self.p - (&m_q % &self.p)) % &self.p;
        let h = diff * &crt.q_inv_p % &self.p;
        Ok(m_q + h * &self.q)
    }

    /// `((c^γ mod N² − 1) / N) · δ mod N`.
    pub fn decrypt_definitional(&self, c: &PaillierCiphertext) -> Result<BigUint, CryptoError> {
        self.public.check(c)?;
        let u = c.value.modpow(&self.gamma, &self.public.n_squared);
        Ok(l_function(&u, &self.public.n) * &self.delta % &self.public.n)
    }

    /// Decrypts and lifts residues above `N/2` to negative integers.
    pub fn decrypt_signed(&self, c: &PaillierCiphertext) -> Result<BigInt, CryptoError> {
        Ok(math::lift_signed(&self.decrypt(c)?, &self.public.n))
    }
}

impl CrtParams {
    fn new(p: &BigUint, q: &BigUint, n: &BigUint) -> Result<Self, CryptoError> {
        let g = n + 1u8;
        let p_squared = p * p;
        let q_squared = q * q;
        let h_p = math::mod_inv(&l_function(&g.modpow(&(p - 1u8), &p_squared), p), p)?;
        let h_q = math::mod_inv(&l_function(&g.modpow(&(q - 1u8), &q_squared), q), q)?;
        let q_inv_p = math::mod_inv(q, p)?;
        Ok(Self { p_squared, q_squared, h_p, h_q, q_inv_p })
    }
}

fn l_function(u: &BigUint, n: &BigUint) -> BigUint {
    (u - 1u8) / n
}
