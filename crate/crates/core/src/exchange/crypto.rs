//! Hashing, signatures and sealed encryption behind small wrapper types.
//!
//! Keccak-256 everywhere; Ed25519 for signatures; X25519 + ChaCha20-Poly1305
//! for sealing to a recipient's public key.

use std::fmt;
use std::str::FromStr;

use chacha20poly1305::aead::{Aead, KeyInit};
use chacha20poly1305::{ChaCha20Poly1305, Key, Nonce};
use ed25519_dalek::{Signer, Verifier};
use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha3::{Digest as _, Keccak256};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("authentication failed")]
    Authentication,
    #[error("malformed ciphertext")]
    Malformed,
    #[error("bad hex: {0}")]
    Hex(String),
}

macro_rules! hex_bytes {
    ($name:ident, $len:expr) => {
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.to_hex())
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl FromStr for $name {
            type Err = CryptoError;
            fn from_str(s: &str) -> Result<Self, CryptoError> {
                let raw = hex::decode(s).map_err(|e| CryptoError::Hex(e.to_string()))?;
                let arr: [u8; $len] = raw
                    .try_into()
                    .map_err(|_| CryptoError::Hex(format!("expected {} bytes", $len)))?;
                Ok($name(arr))
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                s.parse().map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_bytes!(Digest, 32);
hex_bytes!(PublicKey, 32);
hex_bytes!(Signature, 64);
hex_bytes!(SealPublicKey, 32);

/// Keccak-256 of the concatenation of `parts`.
pub fn keccak256(parts: &[&[u8]]) -> Digest {
    let mut h = Keccak256::new();
    for p in parts {
        h.update(p);
    }
    Digest(h.finalize().into())
}

pub fn random_bytes<const N: usize>(rng: &mut impl RngCore) -> [u8; N] {
    let mut out = [0u8; N];
    rng.fill_bytes(&mut out);
    out
}

/// Ed25519 signing key.
#[derive(Clone)]
pub struct SigningKey(ed25519_dalek::SigningKey);

impl SigningKey {
    pub fn generate(rng: &mut impl RngCore) -> Self {
        SigningKey(ed25519_dalek::SigningKey::from_bytes(&random_bytes(rng)))
    }

    pub fn public(&self) -> PublicKey {
        PublicKey(self.0.verifying_key().to_bytes())
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        Signature(self.0.sign(msg).to_bytes())
    }
}

impl fmt::Debug for SigningKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SigningKey({})", self.public())
    }
}

impl PublicKey {
    pub fn verify(&self, msg: &[u8], sig: &Signature) -> bool {
        let Ok(vk) = ed25519_dalek::VerifyingKey::from_bytes(&self.0) else {
            return false;
        };
        vk.verify(msg, &ed25519_dalek::Signature::from_bytes(&sig.0)).is_ok()
    }
}

/// X25519 secret used to open sealed boxes.
#[derive(Clone)]
pub struct SealingKey(x25519_dalek::StaticSecret);

impl SealingKey {
    pub fn generate(rng: &mut impl RngCore) -> Self {
        SealingKey(x25519_dalek::StaticSecret::from(random_bytes::<32>(rng)))
    }

    pub fn public(&self) -> SealPublicKey {
        SealPublicKey(x25519_dalek::PublicKey::from(&self.0).to_bytes())
    }
}

impl fmt::Debug for SealingKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SealingKey({})", self.public())
    }
}

/// Anonymous public-key encryption: ephemeral X25519 agreement, then AEAD.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealedBox {
    pub ephemeral: SealPublicKey,
    #[serde(with = "hex_vec")]
    pub nonce: Vec<u8>,
    #[serde(with = "hex_vec")]
    pub ciphertext: Vec<u8>,
}

impl SealedBox {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 12 + self.ciphertext.len());
        out.extend_from_slice(&self.ephemeral.0);
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.ciphertext);
        out
    }

    pub fn digest(&self) -> Digest {
        keccak256(&[&self.to_bytes()])
    }
}

fn box_key(shared: &[u8; 32], eph: &SealPublicKey, recipient: &SealPublicKey) -> Key {
    let k = keccak256(&[b"seal-box", shared, &eph.0, &recipient.0]);
    *Key::from_slice(&k.0)
}

pub fn seal(recipient: &SealPublicKey, plaintext: &[u8], rng: &mut impl RngCore) -> SealedBox {
    let eph = x25519_dalek::StaticSecret::from(random_bytes::<32>(rng));
    let eph_pub = SealPublicKey(x25519_dalek::PublicKey::from(&eph).to_bytes());
    let shared = eph.diffie_hellman(&x25519_dalek::PublicKey::from(recipient.0));
    let cipher = ChaCha20Poly1305::new(&box_key(shared.as_bytes(), &eph_pub, recipient));
    let nonce: [u8; 12] = random_bytes(rng);
    let ciphertext = cipher
        .encrypt(Nonce::from_slice(&nonce), plaintext)
        .expect("in-memory encryption does not fail");
    SealedBox {
        ephemeral: eph_pub,
        nonce: nonce.to_vec(),
        ciphertext,
    }
}

pub fn open(key: &SealingKey, sealed: &SealedBox) -> Result<Vec<u8>, CryptoError> {
    if sealed.nonce.len() != 12 {
        return Err(CryptoError::Malformed);
    }
    let shared = key
        .0
        .diffie_hellman(&x25519_dalek::PublicKey::from(sealed.ephemeral.0));
    let cipher = ChaCha20Poly1305::new(&box_key(shared.as_bytes(), &sealed.ephemeral, &key.public()));
    cipher
        .decrypt(Nonce::from_slice(&sealed.nonce), sealed.ciphertext.as_slice())
        .map_err(|_| CryptoError::Authentication)
}

/// Symmetric AEAD; output is `nonce ‖ ciphertext`.
pub fn sym_encrypt(key: &[u8; 32], plaintext: &[u8], rng: &mut impl RngCore) -> Vec<u8> {
    let cipher = ChaCha20Poly1305::new(Key::from_slice(key));
    let nonce: [u8; 12] = random_bytes(rng);
    let mut out = nonce.to_vec();
    out.extend(
        cipher
            .encrypt(Nonce::from_slice(&nonce), plaintext)
            .expect("in-memory encryption does not fail"),
    );
    out
}

pub fn sym_decrypt(key: &[u8; 32], data: &[u8]) -> Result<Vec<u8>, CryptoError> {
    if data.len() < 12 {
        return Err(CryptoError::Malformed);
    }
    let (nonce, ct) = data.split_at(12);
    ChaCha20Poly1305::new(Key::from_slice(key))
        .decrypt(Nonce::from_slice(nonce), ct)
        .map_err(|_| CryptoError::Authentication)
}

pub(crate) mod hex_vec {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&hex::encode(v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let s = String::deserialize(d)?;
        hex::decode(s).map_err(serde::de::Error::custom)
    }
}
