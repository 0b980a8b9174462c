//! State owned by the cloud and the target during a run.

use crate::dgk::{DgkPrivateKey, DgkPublicKey};
use crate::fixed_point::FixedPointCodec;
use crate::math::RandomSource;
use crate::paillier::{PaillierPrivateKey, PaillierPublicKey};

use super::transcript::PartyLog;
use super::transport::Endpoint;
use super::{Party, ProtocolConfig};

pub struct CloudContext {
    pub pk: PaillierPublicKey,
    pub dgk: DgkPublicKey,
    pub config: ProtocolConfig,
    pub codec: FixedPointCodec,
    pub link: Endpoint,
    /// Comparison, update and permutation coins.
    pub rng: RandomSource,
    /// Truncation masks, replayed by the plaintext mirror.
    pub truncation_rng: RandomSource,
    /// Multiplicative blinders of the alternative iteration, also replayed.
    pub scaling_rng: RandomSource,
    pub log: PartyLog,
}

impl CloudContext {
    pub fn new(pk: PaillierPublicKey, dgk: DgkPublicKey, config: ProtocolConfig, link: Endpoint) -> Self {
        let seed = config.seed;
        Self {
            codec: FixedPointCodec::new(config.params, pk.modulus().clone()),
            pk,
            dgk,
            config,
            link,
            rng: RandomSource::derive(seed, "cloud"),
            truncation_rng: RandomSource::derive(seed, "truncation"),
            scaling_rng: RandomSource::derive(seed, "scaling"),
            log: PartyLog::new(Party::Cloud),
        }
    }

    pub fn sigma_bits(&self) -> u64 {
        self.pk.sigma_bits()
    }

    pub fn l(&self) -> u32 {
        self.config.params.l()
    }

    pub fn finish(mut self) -> PartyLog {
        let messages = self.link.take_log();
        self.log.absorb(messages);
        self.log
    }
}

pub struct TargetContext {
    pub sk: PaillierPrivateKey,
    pub dgk: DgkPrivateKey,
    pub config: ProtocolConfig,
    pub codec: FixedPointCodec,
    pub link: Endpoint,
    pub rng: RandomSource,
    pub log: PartyLog,
}

impl TargetContext {
    pub fn new(sk: PaillierPrivateKey, dgk: DgkPrivateKey, config: ProtocolConfig, link: Endpoint) -> Self {
        Self {
            codec: FixedPointCodec::new(config.params, sk.public_key().modulus().clone()),
            sk,
            dgk,
            rng: RandomSource::derive(config.seed, "target"),
            config,
            link,
            log: PartyLog::new(Party::Target),
        }
    }

    pub fn pk(&self) -> &PaillierPublicKey {
        self.sk.public_key()
    }

    pub fn sigma_bits(&self) -> u64 {
        self.pk().sigma_bits()
    }

    pub fn l(&self) -> u32 {
        self.config.params.l()
    }

    pub fn finish(mut self) -> PartyLog {
        let messages = self.link.take_log();
        self.log.absorb(messages);
        self.log
    }
}

/// Runs a cloud half and a target half on separate threads over a fresh link
/// and returns both outputs with both logs.
pub fn run_pair<C, T, A, B>(
    keys: &super::Keys,
    config: ProtocolConfig,
    cloud: C,
    target: T,
) -> (A, B, PartyLog, PartyLog)
where
    C: FnOnce(&mut CloudContext) -> A + Send,
    T: FnOnce(&mut TargetContext) -> B + Send,
    A: Send,
    B: Send,
{
    let (cl, tl) = super::duplex(Party::Cloud, Party::Target, std::time::Duration::ZERO);
    let mut cctx = CloudContext::new(keys.paillier.public_key().clone(), keys.dgk.public_key().clone(), config, cl);
    let mut tctx = TargetContext::new(keys.paillier.clone(), keys.dgk.clone(), config, tl);
    std::thread::scope(|s| {
        let handle = s.spawn(move || {
            let out = target(&mut tctx);
            (out, tctx.finish())
        });
        let a = cloud(&mut cctx);
        // dropping the link unblocks a target still waiting on the cloud
        let clog = cctx.finish();
        let (b, tlog) = handle.join().expect("target thread");
        (a, b, clog, tlog)
    })
}

#[cfg(test)]
pub(crate) mod fixtures {
    use std::sync::OnceLock;

    use super::super::{DgkParams, Keys, ProtocolConfig};

    /// Shared σ = 256 test keys; DGK sized for l = 32.
    pub fn keys() -> &'static (ProtocolConfig, Keys) {
        static KEYS: OnceLock<(ProtocolConfig, Keys)> = OnceLock::new();
        KEYS.get_or_init(|| {
            let config = ProtocolConfig { dgk: DgkParams { n_bits: 512, t_bits: 160 }, seed: 77, ..Default::default() };
            let keys = Keys::generate(&config).expect("keygen");
            (config, keys)
        })
    }
}
