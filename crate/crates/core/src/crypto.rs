//! Device key material, session-key derivation, signatures and sealing.
//!
//! Concrete primitives:
//!
//! - signatures: Ed25519
//! - session key: HMAC-SHA256 keyed by the device master secret over
//!   `recp_pk ‖ nonce`
//! - key distribution: X25519 ephemeral-static agreement, HKDF-SHA256, then
//!   AES-256-GCM wrap of the session key
//! - sealing: AES-256-GCM with a 96-bit counter nonce carried in front of the
//!   ciphertext
//!
//! Keys are derived from 32-byte seeds so simulated runs are reproducible.

use std::fmt;

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Key, Nonce};
use ed25519_dalek::{Signer, SigningKey, VerifyingKey};
use hkdf::Hkdf;
use hmac::{Hmac, Mac};
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;
use x25519_dalek::{PublicKey as X25519Public, StaticSecret};

use crate::types::Signature;

pub const SESSION_KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 12;
const TAG_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OpenError {
    #[error("ciphertext too short ({0} bytes)")]
    TooShort(usize),
    #[error("authentication failed")]
    Authentication,
}

/// Device-unique master secret. Never serialized or printed.
#[derive(Clone)]
struct MasterSecret([u8; 32]);

/// Asymmetric signing half of the device key pair.
#[derive(Clone)]
pub struct TeeSecretKey(SigningKey);

impl fmt::Debug for TeeSecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("TeeSecretKey(..)")
    }
}

/// Public verification key of a device, hex-encoded when serialized.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct DevicePublicKey([u8; 32]);

impl DevicePublicKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        DevicePublicKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(text: &str) -> Result<Self, String> {
        let bytes = hex::decode(text).map_err(|e| e.to_string())?;
        let arr: [u8; 32] =
            bytes.try_into().map_err(|b: Vec<u8>| format!("expected 32 bytes, got {}", b.len()))?;
        Ok(DevicePublicKey(arr))
    }
}

impl fmt::Debug for DevicePublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "DevicePublicKey({})", self.to_hex())
    }
}

impl Serialize for DevicePublicKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for DevicePublicKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        DevicePublicKey::from_hex(&text).map_err(serde::de::Error::custom)
    }
}

/// Key material held inside the device's protected zone.
#[derive(Clone)]
pub struct DeviceKeys {
    mas_sk: MasterSecret,
    pub tee_sk: TeeSecretKey,
    pub tee_pk: DevicePublicKey,
}

impl fmt::Debug for DeviceKeys {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DeviceKeys").field("tee_pk", &self.tee_pk).finish_non_exhaustive()
    }
}

/// Deterministically derive a device key triple from a seed.
pub fn keygen(seed: [u8; 32]) -> DeviceKeys {
    let hk = Hkdf::<Sha256>::new(Some(b"trustbridge/keygen/v1"), &seed);
    let mut mas = [0u8; 32];
    let mut tee = [0u8; 32];
    hk.expand(b"mas_sk", &mut mas).expect("32 bytes is a valid HKDF length");
    hk.expand(b"tee_sk", &mut tee).expect("32 bytes is a valid HKDF length");
    let signing = SigningKey::from_bytes(&tee);
    let tee_pk = DevicePublicKey(signing.verifying_key().to_bytes());
    DeviceKeys { mas_sk: MasterSecret(mas), tee_sk: TeeSecretKey(signing), tee_pk }
}

impl TeeSecretKey {
    pub fn public_key(&self) -> DevicePublicKey {
        DevicePublicKey(self.0.verifying_key().to_bytes())
    }
}

pub fn sign(data: &[u8], sk: &TeeSecretKey) -> Signature {
    Signature(sk.0.sign(data).to_bytes().to_vec())
}

/// Verify `sig` over `data`. Malformed signature or key bytes yield `false`.
pub fn verify(data: &[u8], sig: &[u8], pk: &DevicePublicKey) -> bool {
    let Ok(sig_bytes) = <[u8; 64]>::try_from(sig) else {
        return false;
    };
    let Ok(vk) = VerifyingKey::from_bytes(&pk.0) else {
        return false;
    };
    let sig = ed25519_dalek::Signature::from_bytes(&sig_bytes);
    vk.verify_strict(data, &sig).is_ok()
}

/// Symmetric key shared between one device and its blockchain agent.
#[derive(Clone, PartialEq, Eq)]
pub struct SessionKey([u8; SESSION_KEY_LEN]);

impl SessionKey {
    pub fn from_bytes(bytes: [u8; SESSION_KEY_LEN]) -> Self {
        SessionKey(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; SESSION_KEY_LEN] {
        &self.0
    }

    /// Short non-secret identifier for bookkeeping (e.g. nonce-reuse checks).
    pub fn fingerprint(&self) -> [u8; 8] {
        let d = Sha256::digest(self.0);
        d[..8].try_into().expect("8 bytes")
    }
}

impl fmt::Debug for SessionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SessionKey(fp={})", hex::encode(self.fingerprint()))
    }
}

/// Public identity of a blockchain agent.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentIdentity {
    #[serde(with = "crate::types::hex_bytes_32")]
    pub recp_pk: [u8; 32],
    pub recp_addr: String,
}

/// Agent-side key pair; the secret half unwraps distributed session keys.
#[derive(Clone)]
pub struct AgentKeys {
    secret: StaticSecret,
    pub identity: AgentIdentity,
}

impl fmt::Debug for AgentKeys {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AgentKeys").field("identity", &self.identity).finish_non_exhaustive()
    }
}

impl AgentKeys {
    pub fn from_seed(seed: [u8; 32], recp_addr: impl Into<String>) -> Self {
        let hk = Hkdf::<Sha256>::new(Some(b"trustbridge/agent/v1"), &seed);
        let mut sk = [0u8; 32];
        hk.expand(b"recp_sk", &mut sk).expect("32 bytes is a valid HKDF length");
        let secret = StaticSecret::from(sk);
        let recp_pk = X25519Public::from(&secret).to_bytes();
        AgentKeys { secret, identity: AgentIdentity { recp_pk, recp_addr: recp_addr.into() } }
    }

    /// Recover the session key from a distribution blob produced by [`kdf`].
    pub fn unwrap_session(&self, distribution: &[u8]) -> Result<SessionKey, OpenError> {
        if distribution.len() < 32 + SESSION_KEY_LEN + TAG_LEN {
            return Err(OpenError::TooShort(distribution.len()));
        }
        let (eph_pk, wrapped) = distribution.split_at(32);
        let eph_pk: [u8; 32] = eph_pk.try_into().expect("32 bytes");
        let shared = self.secret.diffie_hellman(&X25519Public::from(eph_pk));
        let wrap_key = wrap_key(shared.as_bytes(), &eph_pk, &self.identity.recp_pk);
        let cipher = Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(&wrap_key));
        let plain = cipher
            .decrypt(Nonce::from_slice(&[0u8; NONCE_LEN]), Payload { msg: wrapped, aad: &eph_pk })
            .map_err(|_| OpenError::Authentication)?;
        let key: [u8; SESSION_KEY_LEN] =
            plain.try_into().map_err(|p: Vec<u8>| OpenError::TooShort(p.len()))?;
        Ok(SessionKey(key))
    }
}

fn wrap_key(shared: &[u8; 32], eph_pk: &[u8; 32], recp_pk: &[u8; 32]) -> [u8; 32] {
    let mut salt = [0u8; 64];
    salt[..32].copy_from_slice(eph_pk);
    salt[32..].copy_from_slice(recp_pk);
    let hk = Hkdf::<Sha256>::new(Some(&salt), shared);
    let mut out = [0u8; 32];
    hk.expand(b"trustbridge/key-wrap/v1", &mut out).expect("32 bytes is a valid HKDF length");
    out
}

/// Result of session-key derivation on the device.
#[derive(Debug, Clone)]
pub struct KeyDistribution {
    pub session: SessionKey,
    /// Session key encrypted to the agent: `eph_pk ‖ AES-GCM(sym_sk)`.
    pub distribution: Vec<u8>,
    /// Device signature over `distribution`.
    pub signature: Signature,
}

/// Derive a fresh session key for `agent` and package it for distribution.
pub fn kdf<R: RngCore + CryptoRng>(keys: &DeviceKeys, agent: &AgentIdentity, rng: &mut R) -> KeyDistribution {
    let mut nonce = [0u8; 32];
    rng.fill_bytes(&mut nonce);
    let mut mac = <Hmac<Sha256> as Mac>::new_from_slice(&keys.mas_sk.0).expect("HMAC accepts any key length");
    mac.update(b"trustbridge/sym_sk/v1");
    mac.update(&agent.recp_pk);
    mac.update(&nonce);
    let sym: [u8; SESSION_KEY_LEN] = mac.finalize().into_bytes().into();
    let session = SessionKey(sym);

    let mut eph_bytes = [0u8; 32];
    rng.fill_bytes(&mut eph_bytes);
    let eph = StaticSecret::from(eph_bytes);
    let eph_pk = X25519Public::from(&eph).to_bytes();
    let shared = eph.diffie_hellman(&X25519Public::from(agent.recp_pk));
    let wk = wrap_key(shared.as_bytes(), &eph_pk, &agent.recp_pk);
    let cipher = Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(&wk));
    // The wrap key is single-use, so a fixed nonce is safe here.
    let wrapped = cipher
        .encrypt(Nonce::from_slice(&[0u8; NONCE_LEN]), Payload { msg: &sym, aad: &eph_pk })
        .expect("AES-GCM encryption of 32 bytes cannot fail");

    let mut distribution = Vec::with_capacity(32 + wrapped.len());
    distribution.extend_from_slice(&eph_pk);
    distribution.extend_from_slice(&wrapped);
    let signature = sign(&distribution, &keys.tee_sk);
    KeyDistribution { session, distribution, signature }
}

/// Counter-based nonce source. One per session key; never rewinds.
#[derive(Debug, Clone, Default)]
pub struct NonceSequence {
    next: u64,
}

impl NonceSequence {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn next_nonce(&mut self) -> [u8; NONCE_LEN] {
        let n = self.next;
        self.next = self.next.checked_add(1).expect("nonce space exhausted");
        let mut out = [0u8; NONCE_LEN];
        out[4..].copy_from_slice(&n.to_be_bytes());
        out
    }
}

/// Authenticated encryption. Output is `nonce ‖ ciphertext ‖ tag`.
pub fn seal(plaintext: &[u8], key: &SessionKey, aad: &[u8], nonces: &mut NonceSequence) -> Vec<u8> {
    let nonce = nonces.next_nonce();
    let cipher = Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(&key.0));
    let ct = cipher
        .encrypt(Nonce::from_slice(&nonce), Payload { msg: plaintext, aad })
        .expect("AES-GCM encryption only fails for oversized inputs");
    let mut out = Vec::with_capacity(NONCE_LEN + ct.len());
    out.extend_from_slice(&nonce);
    out.extend_from_slice(&ct);
    out
}

pub fn open(ciphertext: &[u8], key: &SessionKey, aad: &[u8]) -> Result<Vec<u8>, OpenError> {
    if ciphertext.len() < NONCE_LEN + TAG_LEN {
        return Err(OpenError::TooShort(ciphertext.len()));
    }
    let (nonce, body) = ciphertext.split_at(NONCE_LEN);
    let cipher = Aes256Gcm::new(Key::<Aes256Gcm>::from_slice(&key.0));
    cipher
        .decrypt(Nonce::from_slice(nonce), Payload { msg: body, aad })
        .map_err(|_| OpenError::Authentication)
}

/// Nonce prefix of a sealed message, if it is long enough to carry one.
pub fn sealed_nonce(ciphertext: &[u8]) -> Option<[u8; NONCE_LEN]> {
    ciphertext.get(..NONCE_LEN).map(|n| n.try_into().expect("12 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn agent() -> AgentKeys {
        AgentKeys::from_seed([9; 32], "agent-0")
    }

    #[test]
    fn keygen_is_deterministic() {
        let a = keygen([0; 32]);
        let b = keygen([0; 32]);
        assert_eq!(a.tee_pk, b.tee_pk);
        assert_eq!(a.mas_sk.0, b.mas_sk.0);
        assert_eq!(a.tee_sk.public_key(), a.tee_pk);
        assert_ne!(keygen([1; 32]).tee_pk, a.tee_pk);
    }

    #[test]
    fn debug_output_hides_secrets() {
        let keys = keygen([3; 32]);
        let text = format!("{keys:?}");
        assert!(!text.contains(&hex::encode(keys.mas_sk.0)));
        assert!(text.contains(&keys.tee_pk.to_hex()));
    }

    #[test]
    fn empty_message_sign_verify() {
        let keys = keygen([5; 32]);
        let sig = sign(b"", &keys.tee_sk);
        assert!(verify(b"", sig.as_bytes(), &keys.tee_pk));
    }

    #[test]
    fn cross_key_and_tamper_fail() {
        let a = keygen([1; 32]);
        let b = keygen([2; 32]);
        let sig = sign(b"record body", &a.tee_sk);
        assert!(!verify(b"record body", sig.as_bytes(), &b.tee_pk));
        assert!(!verify(b"record bodz", sig.as_bytes(), &a.tee_pk));
        let mut bad = sig.0.clone();
        bad[10] ^= 0x01;
        assert!(!verify(b"record body", &bad, &a.tee_pk));
        assert!(!verify(b"record body", &sig.0[..63], &a.tee_pk));
        assert!(!verify(b"record body", &[], &a.tee_pk));
    }

    #[test]
    fn kdf_round_trip_and_tamper() {
        let keys = keygen([1; 32]);
        let agent = agent();
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let dist = kdf(&keys, &agent.identity, &mut rng);
        assert_eq!(agent.unwrap_session(&dist.distribution).unwrap(), dist.session);
        assert!(verify(&dist.distribution, dist.signature.as_bytes(), &keys.tee_pk));

        let mut tampered = dist.distribution.clone();
        tampered[40] ^= 0x80;
        assert!(!verify(&tampered, dist.signature.as_bytes(), &keys.tee_pk));
        assert!(agent.unwrap_session(&tampered).is_err());

        let other = AgentKeys::from_seed([10; 32], "agent-1");
        assert!(other.unwrap_session(&dist.distribution).is_err());
    }

    #[test]
    fn kdf_deterministic_under_fixed_seed() {
        let keys = keygen([1; 32]);
        let agent = agent();
        let a = kdf(&keys, &agent.identity, &mut ChaCha20Rng::seed_from_u64(11));
        let b = kdf(&keys, &agent.identity, &mut ChaCha20Rng::seed_from_u64(11));
        assert_eq!(a.session, b.session);
        assert_eq!(a.distribution, b.distribution);
    }

    #[test]
    fn seal_open_round_trip_and_failures() {
        let key = SessionKey([4; 32]);
        let mut nonces = NonceSequence::new();
        let ct = seal(b"payload", &key, b"aad", &mut nonces);
        assert_eq!(open(&ct, &key, b"aad").unwrap(), b"payload");
        assert_eq!(open(&ct, &SessionKey([5; 32]), b"aad"), Err(OpenError::Authentication));
        assert_eq!(open(&ct, &key, b"other"), Err(OpenError::Authentication));
        assert_eq!(open(&ct[..ct.len() - 1], &key, b"aad"), Err(OpenError::Authentication));
        assert!(matches!(open(&ct[..5], &key, b"aad"), Err(OpenError::TooShort(5))));
    }

    #[test]
    fn nonces_never_repeat() {
        let key = SessionKey([4; 32]);
        let mut nonces = NonceSequence::new();
        let a = seal(b"x", &key, b"", &mut nonces);
        let b = seal(b"x", &key, b"", &mut nonces);
        assert_ne!(sealed_nonce(&a), sealed_nonce(&b));
        assert_ne!(a, b);
    }
}
