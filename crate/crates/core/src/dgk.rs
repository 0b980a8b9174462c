//! DGK cryptosystem over a small prime plaintext space `Z_u`.
//!
//! Only the zero test is exposed on the private side; the comparison protocol
//! never needs full decryption.

use std::sync::Arc;

use num_bigint::BigUint;
use num_traits::One;
use serde::{Deserialize, Serialize};

use crate::math::{self, FixedBase, RandomSource};
use crate::paillier::{key_fingerprint, CryptoError};

pub const DEFAULT_T_BITS: u64 = 160;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DgkPublicKey {
    n: BigUint,
    g: BigUint,
    h: BigUint,
    u: u64,
    t_bits: u64,
    key_id: u64,
    h_table: Arc<FixedBase>,
}

#[derive(Debug, Clone)]
pub struct DgkPrivateKey {
    public: DgkPublicKey,
    p: BigUint,
    q: BigUint,
    v_p: BigUint,
    v_q: BigUint,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct DgkCiphertext {
    value: BigUint,
    key_id: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[allow(non_snake_case)]
pub struct DgkKeyFile {
    #[serde(with = "math::hex_serde")]
    pub N: BigUint,
    #[serde(with = "math::hex_serde")]
    pub g: BigUint,
    #[serde(with = "math::hex_serde")]
    pub h: BigUint,
    pub u: u64,
    pub t_bits: u64,
    #[serde(with = "math::hex_serde")]
    pub p: BigUint,
    #[serde(with = "math::hex_serde")]
    pub q: BigUint,
    #[serde(with = "math::hex_serde")]
    pub v_p: BigUint,
    #[serde(with = "math::hex_serde")]
    pub v_q: BigUint,
}

impl DgkCiphertext {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn key_id(&self) -> u64 {
        self.key_id
    }

    pub fn to_wire(&self, n_bits: u64) -> String {
        format!("{:016x}{}", self.key_id, math::to_hex_padded(&self.value, n_bits.div_ceil(4) as usize))
    }

    pub fn from_wire(text: &str) -> Result<Self, CryptoError> {
        if text.len() <= 16 || !text.is_ascii() {
            return Err(CryptoError::Malformed(text.chars().take(32).collect()));
        }
        let key_id = u64::from_str_radix(&text[..16], 16)
            .map_err(|_| CryptoError::Malformed(text[..16].to_string()))?;
        Ok(Self { value: math::from_hex(&text[16..])?, key_id })
    }
}

/// Smallest prime strictly greater than `l + 2`.
pub fn plaintext_modulus_for(l: u64) -> u64 {
    let is_prime = |v: u64| v >= 2 && (2..).take_while(|d| d * d <= v).all(|d| v % d != 0);
    (l + 3..).find(|&v| is_prime(v)).expect("primes are unbounded")
}

/// Generates a DGK key whose plaintext space `Z_u` can carry the values
/// produced by an `l`-bit comparison.
pub fn keygen(
    n_bits: u64,
    t_bits: u64,
    l: u64,
    rng: &mut RandomSource,
) -> Result<(DgkPublicKey, DgkPrivateKey), CryptoError> {
    if n_bits % 2 != 0 {
        return Err(CryptoError::Domain(format!("DGK modulus bits must be even, got {n_bits}")));
    }
    let u = plaintext_modulus_for(l);
    let u_big = BigUint::from(u);
    let half = n_bits / 2;
    // p - 1 = 2·u·v_p·f needs at least a couple of cofactor bits
    if half < t_bits + u_big.bits() + 4 || t_bits < 8 {
        return Err(CryptoError::Domain(format!(
            "DGK modulus of {n_bits} bits cannot hold {t_bits}-bit subgroup primes"
        )));
    }

    let (p, v_p) = structured_prime(half, t_bits, &u_big, rng)?;
    let (q, v_q) = loop {
        let (q, v_q) = structured_prime(half, t_bits, &u_big, rng)?;
        if q != p && v_q != v_p {
            break (q, v_q);
        }
    };
    let n = &p * &q;

    let g_p = element_of_order(&p, &[&u_big, &v_p], rng)?;
    let g_q = element_of_order(&q, &[&u_big, &v_q], rng)?;
    let h_p = element_of_order(&p, &[&v_p], rng)?;
    let h_q = element_of_order(&q, &[&v_q], rng)?;
    let g = crt_combine(&g_p, &p, &g_q, &q)?;
    let h = crt_combine(&h_p, &p, &h_q, &q)?;

    let sk = DgkPrivateKey::from_parts(n, g, h, u, t_bits, p, q, v_p, v_q)?;
    Ok((sk.public.clone(), sk))
}

/// Prime `p = 2·u·v·f + 1` of exactly `bits` bits, with `v` a `t_bits`-bit prime.
fn structured_prime(
    bits: u64,
    t_bits: u64,
    u: &BigUint,
    rng: &mut RandomSource,
) -> Result<(BigUint, BigUint), CryptoError> {
    'fresh_v: loop {
        let v = math::gen_prime(t_bits, rng)?;
        let base = BigUint::from(2u8) * u * &v;
        let cofactor_bits = bits - base.bits() + 1;
        for _ in 0..20 * bits {
            let f = math::sample_bits(cofactor_bits, rng) | (BigUint::one() << (cofactor_bits - 1));
            let p = &base * f + 1u8;
            if p.bits() != bits {
                continue;
            }
            if math::is_probable_prime(&p, rng) {
                return Ok((p, v));
            }
        }
        continue 'fresh_v;
    }
}

/// Random element of `Z*_p` whose order is exactly the product of the given
/// distinct primes, each of which divides `p - 1`.
fn element_of_order(p: &BigUint, primes: &[&BigUint], rng: &mut RandomSource) -> Result<BigUint, CryptoError> {
    let order: BigUint = primes.iter().copied().product();
    let cofactor = (p - 1u8) / &order;
    let span = p - 3u8;
    loop {
        let x = math::sample_below(&span, rng)? + 2u8;
        let candidate = x.modpow(&cofactor, p);
        let exact = primes
            .iter()
            .all(|&prime| !candidate.modpow(&(&order / prime), p).is_one());
        if exact {
            return Ok(candidate);
        }
    }
}

fn crt_combine(a_p: &BigUint, p: &BigUint, a_q: &BigUint, q: &BigUint) -> Result<BigUint, CryptoError> {
    let q_inv = math::mod_inv(q, p)?;
    let diff = (a_p + p - (a_q % p)) % p;
    Ok(a_q + (diff * q_inv % p) * q)
}

impl DgkPublicKey {
    pub fn modulus(&self) -> &BigUint {
        &self.n
    }

    pub fn n_bits(&self) -> u64 {
        self.n.bits()
    }

    /// Plaintext modulus `u`.
    pub fn plaintext_modulus(&self) -> u64 {
        self.u
    }

    pub fn t_bits(&self) -> u64 {
        self.t_bits
    }

    pub fn key_id(&self) -> u64 {
        self.key_id
    }

    pub fn g(&self) -> &BigUint {
        &self.g
    }

    pub fn h(&self) -> &BigUint {
        &self.h
    }

    fn check(&self, c: &DgkCiphertext) -> Result<(), CryptoError> {
        if c.key_id != self.key_id {
            return Err(CryptoError::KeyMismatch { expected: self.key_id, found: c.key_id });
        }
        Ok(())
    }

    fn wrap(&self, value: BigUint) -> DgkCiphertext {
        DgkCiphertext { value, key_id: self.key_id }
    }

    /// `g^m · h^r mod N` with `r` a uniform `2t`-bit integer.
    pub fn encrypt(&self, m: u64, rng: &mut RandomSource) -> Result<DgkCiphertext, CryptoError> {
        if m >= self.u {
            return Err(CryptoError::Domain(format!("DGK plaintext {m} must be below u = {}", self.u)));
        }
        let r = math::sample_bits(2 * self.t_bits, rng);
        let gm = self.g.modpow(&BigUint::from(m), &self.n);
        let hr = self.h_table.pow(&r);
        Ok(self.wrap(gm * hr % &self.n))
    }

    pub fn add(&self, c1: &DgkCiphertext, c2: &DgkCiphertext) -> Result<DgkCiphertext, CryptoError> {
        self.check(c1)?;
        self.check(c2)?;
        Ok(self.wrap(&c1.value * &c2.value % &self.n))
    }

    pub fn scalar_mul(&self, k: &BigUint, c: &DgkCiphertext) -> Result<DgkCiphertext, CryptoError> {
        self.check(c)?;
        Ok(self.wrap(c.value.modpow(k, &self.n)))
    }

    pub fn negate(&self, c: &DgkCiphertext) -> Result<DgkCiphertext, CryptoError> {
        self.check(c)?;
        Ok(self.wrap(math::mod_inv(&c.value, &self.n)?))
    }

    pub fn sub(&self, c1: &DgkCiphertext, c2: &DgkCiphertext) -> Result<DgkCiphertext, CryptoError> {
        self.add(c1, &self.negate(c2)?)
    }

    /// Deterministic encryption of a public constant (`r = 0`).
    pub fn encode_constant(&self, m: u64) -> DgkCiphertext {
        self.wrap(self.g.modpow(&BigUint::from(m % self.u), &self.n))
    }

    pub fn parse_ciphertext(&self, text: &str) -> Result<DgkCiphertext, CryptoError> {
        let c = DgkCiphertext::from_wire(text)?;
        self.check(&c)?;
        Ok(c)
    }
}

impl DgkPrivateKey {
    #[allow(clippy::too_many_arguments)]
    fn from_parts(
        n: BigUint,
        g: BigUint,
        h: BigUint,
        u: u64,
        t_bits: u64,
        p: BigUint,
        q: BigUint,
        v_p: BigUint,
        v_q: BigUint,
    ) -> Result<Self, CryptoError> {
        if &p * &q != n {
            return Err(CryptoError::Domain("DGK modulus differs from p*q".into()));
        }
        let u_big = BigUint::from(u);
        let divides = |d: &BigUint, m: &BigUint| (m % d) == BigUint::from(0u8);
        let (p1, q1) = (&p - 1u8, &q - 1u8);
        if !divides(&u_big, &p1) || !divides(&u_big, &q1) || !divides(&v_p, &p1) || !divides(&v_q, &q1) {
            return Err(CryptoError::Domain("u, v_p, v_q must divide p-1 and q-1".into()));
        }
        let key = Self {
            public: DgkPublicKey {
                key_id: key_fingerprint(&n),
                h_table: Arc::new(FixedBase::new(&h, &n, 2 * t_bits)),
                n,
                g,
                h,
                u,
                t_bits,
            },
            p,
            q,
            v_p,
            v_q,
        };
        if !key.orders_are_exact() {
            return Err(CryptoError::Domain("DGK generators have the wrong order".into()));
        }
        Ok(key)
    }

    /// `ord(g) = u·v_p·v_q` and `ord(h) = v_p·v_q`.
    pub fn orders_are_exact(&self) -> bool {
        let n = &self.public.n;
        let u = BigUint::from(self.public.u);
        let exact = |base: &BigUint, primes: &[&BigUint]| {
            let order: BigUint = primes.iter().copied().product();
            base.modpow(&order, n).is_one()
                && primes.iter().all(|&f| !base.modpow(&(&order / f), n).is_one())
        };
        exact(&self.public.g, &[&u, &self.v_p, &self.v_q]) && exact(&self.public.h, &[&self.v_p, &self.v_q])
    }

    pub fn public_key(&self) -> &DgkPublicKey {
        &self.public
    }

    /// True iff the plaintext is `0 mod u`.
    pub fn is_zero(&self, c: &DgkCiphertext) -> Result<bool, CryptoError> {
        self.public.check(c)?;
        // mod p, h has order v_p and g has order u·v_p, so c^(v_p·v_q) = 1
        // iff c^v_p = 1
        Ok(c.value.modpow(&self.v_p, &self.p).is_one())
    }

    /// Identical to [`DgkPublicKey::encrypt`] for the same random stream.
    pub fn encrypt(&self, m: u64, rng: &mut RandomSource) -> Result<DgkCiphertext, CryptoError> {
        self.public.encrypt(m, rng)
    }

    pub fn to_key_file(&self) -> DgkKeyFile {
        DgkKeyFile {
            N: self.public.n.clone(),
            g: self.public.g.clone(),
            h: self.public.h.clone(),
            u: self.public.u,
            t_bits: self.public.t_bits,
            p: self.p.clone(),
            q: self.q.clone(),
            v_p: self.v_p.clone(),
            v_q: self.v_q.clone(),
        }
    }

    pub fn from_key_file(file: &DgkKeyFile) -> Result<Self, CryptoError> {
        Self::from_parts(
            file.N.clone(),
            file.g.clone(),
            file.h.clone(),
            file.u,
            file.t_bits,
            file.p.clone(),
            file.q.clone(),
            file.v_p.clone(),
            file.v_q.clone(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> (DgkPublicKey, DgkPrivateKey) {
        keygen(256, 16, 8, &mut RandomSource::new(21)).unwrap()
    }

    #[test]
    fn toy_key_structure() {
        let (pk, sk) = toy();
        assert_eq!(pk.plaintext_modulus(), 11);
        assert_eq!(pk.n_bits(), 256);
        assert_eq!(sk.v_p.bits(), 16);
        assert_eq!(sk.v_q.bits(), 16);
        let u = BigUint::from(11u8);
        assert_eq!((&sk.p - 1u8) % &u, BigUint::from(0u8));
        assert_eq!((&sk.q - 1u8) % &u, BigUint::from(0u8));
        assert_eq!((&sk.p - 1u8) % &sk.v_p, BigUint::from(0u8));
        assert_eq!((&sk.q - 1u8) % &sk.v_q, BigUint::from(0u8));
        assert!(sk.orders_are_exact());
    }

    #[test]
    fn plaintext_modulus_choice() {
        assert_eq!(plaintext_modulus_for(8), 11);
        assert_eq!(plaintext_modulus_for(16), 19);
        assert_eq!(plaintext_modulus_for(32), 37);
        assert_eq!(plaintext_modulus_for(4), 7);
    }

    #[test]
    fn zero_test_is_exact_over_plaintext_space() {
        let (pk, sk) = toy();
        let mut rng = RandomSource::new(1);
        assert!(sk.is_zero(&pk.encrypt(0, &mut rng).unwrap()).unwrap());
        for k in 1..pk.plaintext_modulus() {
            assert!(!sk.is_zero(&pk.encrypt(k, &mut rng).unwrap()).unwrap(), "k = {k}");
        }
        assert!(pk.encrypt(pk.plaintext_modulus(), &mut rng).is_err());
    }

    #[test]
    fn homomorphic_zero_tests() {
        let (pk, sk) = toy();
        let mut rng = RandomSource::new(2);
        let u = pk.plaintext_modulus();
        let one = pk.encrypt(1, &mut rng).unwrap();
        let wrap = pk.add(&one, &pk.encrypt(u - 1, &mut rng).unwrap()).unwrap();
        assert!(sk.is_zero(&wrap).unwrap());
        let two = pk.encrypt(2, &mut rng).unwrap();
        assert!(sk.is_zero(&pk.add(&two, &pk.negate(&two).unwrap()).unwrap()).unwrap());
        let zero = pk.encrypt(0, &mut rng).unwrap();
        assert!(sk.is_zero(&pk.scalar_mul(&BigUint::from(3u8), &zero).unwrap()).unwrap());
        let r = math::sample_bits(64, &mut rng);
        assert!(sk.is_zero(&pk.scalar_mul(&r, &zero).unwrap()).unwrap());
        assert!(!sk.is_zero(&pk.add(&one, &one).unwrap()).unwrap());
    }

    #[test]
    fn crt_encryption_matches_public_encryption() {
        let (pk, sk) = toy();
        let mut a = RandomSource::new(8);
        let mut b = RandomSource::new(8);
        for m in 0..pk.plaintext_modulus() {
            assert_eq!(sk.encrypt(m, &mut a).unwrap(), pk.encrypt(m, &mut b).unwrap());
        }
    }

    #[test]
    fn encryption_is_probabilistic() {
        let (pk, _) = toy();
        let mut rng = RandomSource::new(3);
        assert_ne!(pk.encrypt(4, &mut rng).unwrap(), pk.encrypt(4, &mut rng).unwrap());
    }

    #[test]
    fn key_file_roundtrip() {
        let (pk, sk) = toy();
        let json = serde_json::to_string(&sk.to_key_file()).unwrap();
        let back = DgkPrivateKey::from_key_file(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.public_key(), &pk);
    }

    proptest::proptest! {
        #[test]
        fn homomorphism_mod_u(a in 0u64..11, b in 0u64..11, seed in 0u64..1000) {
            let (pk, sk) = toy();
            let mut rng = RandomSource::new(seed);
            let sum = pk.add(&pk.encrypt(a, &mut rng).unwrap(), &pk.encrypt(b, &mut rng).unwrap()).unwrap();
            let expected = pk.encrypt((a + b) % 11, &mut rng).unwrap();
            proptest::prop_assert!(sk.is_zero(&pk.sub(&sum, &expected).unwrap()).unwrap());
        }
    }

    #[test]
    fn undersized_modulus_is_rejected() {
        assert!(keygen(64, 160, 8, &mut RandomSource::new(1)).is_err());
    }
}
